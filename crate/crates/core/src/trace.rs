//! Spectrum capture ingestion and mini-slot RSSI traces.
//!
//! A raw capture is an `L x N` matrix of 1 MHz sub-band energy readings. It is
//! reduced to one 20 MHz channel by linear-power summation and resampled onto
//! the mini-slot grid with a zero-order hold.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RSSI_MIN_DBM: f32 = -120.0;
pub const RSSI_MAX_DBM: f32 = 0.0;
const CHANNEL_SPAN_MHZ: i32 = 20;
const SLOT_MAGIC: &[u8; 8] = b"DLMSLOT\0";
const SLOT_VERSION: u32 = 1;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Linear-power sum of dBm values, returned in dBm.
pub fn power_sum_dbm(values: impl IntoIterator<Item = f64>) -> f64 {
    mw_to_dbm(values.into_iter().map(dbm_to_mw).sum())
}

fn clamp_rssi(v: f64) -> f32 {
    (v as f32).clamp(RSSI_MIN_DBM, RSSI_MAX_DBM)
}

fn in_range(v: f32) -> bool {
    v.is_finite() && (RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&v)
}

/// Layout parameters of a raw capture file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFormat {
    pub sample_interval_us: f64,
    pub band_start_mhz: i32,
    pub n_subbands: usize,
}

impl Default for RawFormat {
    fn default() -> Self {
        Self {
            sample_interval_us: 100.0,
            band_start_mhz: 2400,
            n_subbands: 83,
        }
    }
}

impl RawFormat {
    fn header(&self) -> String {
        let mut h = String::from("t_us");
        for j in 0..self.n_subbands {
            write!(h, ",f{}", self.band_start_mhz + j as i32).unwrap();
        }
        h
    }
}

/// Raw capture: `samples` is row-major, one row of `n_subbands` values per
/// sample instant.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    samples: Vec<f32>,
    pub format: RawFormat,
}

impl RawTrace {
    pub fn new(samples: Vec<f32>, format: RawFormat) -> Result<Self> {
        if format.n_subbands == 0 || samples.is_empty() || samples.len() % format.n_subbands != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} samples do not form rows of {} sub-bands",
                samples.len(),
                format.n_subbands
            )));
        }
        if !(format.sample_interval_us.is_finite() && format.sample_interval_us > 0.0) {
            return Err(Error::InvalidArgument("sample interval must be > 0".into()));
        }
        if let Some(pos) = samples.iter().position(|&v| !in_range(v)) {
            return Err(Error::BadCell {
                row: pos / format.n_subbands,
                column: pos % format.n_subbands + 1,
                reason: format!("{} outside [-120, 0] dBm", samples[pos]),
            });
        }
        Ok(Self { samples, format })
    }

    pub fn rows(&self) -> usize {
        self.samples.len() / self.format.n_subbands
    }

    pub fn row(&self, l: usize) -> &[f32] {
        let n = self.format.n_subbands;
        &self.samples[l * n..(l + 1) * n]
    }

    pub fn get(&self, l: usize, n: usize) -> f32 {
        self.samples[l * self.format.n_subbands + n]
    }
}

/// Reads a raw capture CSV: header `t_us,f<start>,...`, one row per sample.
pub fn load_raw(path: &Path, format: &RawFormat) -> Result<RawTrace> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::HeaderMismatch("empty file".into())),
    };
    let expected = format.header();
    if header.trim_end() != expected {
        let cols = header.split(',').count();
        return Err(Error::HeaderMismatch(format!(
            "expected {} columns (t_us + {} sub-bands starting at f{}), found {}",
            format.n_subbands + 1,
            format.n_subbands,
            format.band_start_mhz,
            cols
        )));
    }

    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let t = cells.next().unwrap_or("");
        t.trim().parse::<f64>().map_err(|_| Error::BadCell {
            row,
            column: 0,
            reason: format!("timestamp {t:?} is not numeric"),
        })?;
        let mut count = 0;
        for (j, cell) in cells.enumerate() {
            let column = j + 1;
            let v: f32 = cell.trim().parse().map_err(|_| Error::BadCell {
                row,
                column,
                reason: format!("{cell:?} is not numeric"),
            })?;
            if !in_range(v) {
                return Err(Error::BadCell {
                    row,
                    column,
                    reason: format!("{v} outside [-120, 0] dBm"),
                });
            }
            samples.push(v);
            count += 1;
        }
        if count != format.n_subbands {
            return Err(Error::BadCell {
                row,
                column: count,
                reason: format!("expected {} RSSI cells, found {count}", format.n_subbands),
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("raw capture has no data rows".into()));
    }
    RawTrace::new(samples, *format)
}

pub fn write_raw(trace: &RawTrace, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(trace.samples.len() * 6);
    out.push_str(&trace.format.header());
    out.push('\n');
    for l in 0..trace.rows() {
        write!(out, "{}", l as f64 * trace.format.sample_interval_us).unwrap();
        for v in trace.row(l) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// First and last 1 MHz sub-band (inclusive) covered by a 2.4 GHz channel.
pub fn channel_span_mhz(channel_id: u8) -> Result<(i32, i32)> {
    if !(1..=13).contains(&channel_id) {
        return Err(Error::InvalidChannel(channel_id));
    }
    let center = 2407 + 5 * channel_id as i32;
    let lo = center - CHANNEL_SPAN_MHZ / 2;
    Ok((lo, lo + CHANNEL_SPAN_MHZ - 1))
}

/// Channel RSSI per raw sample: power sum of the channel's 20 sub-bands.
pub fn aggregate_channel(raw: &RawTrace, channel_id: u8) -> Result<Vec<f32>> {
    let (lo, hi) = channel_span_mhz(channel_id)?;
    let first = lo - raw.format.band_start_mhz;
    let last = hi - raw.format.band_start_mhz;
    if first < 0 || last >= raw.format.n_subbands as i32 {
        return Err(Error::ChannelOutOfBand {
            channel: channel_id,
            lo_mhz: lo,
            hi_mhz: hi,
        });
    }
    let cols = first as usize..=last as usize;
    Ok((0..raw.rows())
        .map(|l| power_sum_dbm(raw.row(l)[cols.clone()].iter().map(|&v| v as f64)) as f32)
        .collect())
}

/// Provenance of a slot trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    File(String),
    Synthetic(u64),
    Derived(String),
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::File(p) => write!(f, "file:{p}"),
            Origin::Synthetic(s) => write!(f, "synthetic:{s}"),
            Origin::Derived(s) => write!(f, "derived:{s}"),
        }
    }
}

/// Per-mini-slot RSSI of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTrace {
    rssi: Vec<f32>,
    pub slot_us: f64,
    pub channel_id: Option<u8>,
    pub origin: Origin,
}

impl SlotTrace {
    /// Values are clamped into `[-120, 0]` dBm; non-finite input is rejected.
    pub fn new(rssi: Vec<f32>, slot_us: f64, channel_id: Option<u8>, origin: Origin) -> Result<Self> {
        if !(slot_us.is_finite() && slot_us > 0.0) {
            return Err(Error::InvalidArgument("slot_us must be > 0".into()));
        }
        if let Some(c) = channel_id {
            if !(1..=13).contains(&c) {
                return Err(Error::InvalidChannel(c));
            }
        }
        if let Some(pos) = rssi.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite RSSI at slot {pos}")));
        }
        let rssi = rssi.into_iter().map(|v| v.clamp(RSSI_MIN_DBM, RSSI_MAX_DBM)).collect();
        Ok(Self {
            rssi,
            slot_us,
            channel_id,
            origin,
        })
    }

    pub fn rssi(&self) -> &[f32] {
        &self.rssi
    }

    pub fn len(&self) -> usize {
        self.rssi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rssi.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.rssi.len() as f64 * self.slot_us * 1e-6
    }

    pub fn slots_for_seconds(&self, seconds: f64) -> usize {
        seconds_to_slots(seconds, self.slot_us)
    }

    /// Copy of `range` tagged as derived from this trace.
    pub fn slice(&self, range: std::ops::Range<usize>, tag: &str) -> SlotTrace {
        SlotTrace {
            rssi: self.rssi[range].to_vec(),
            slot_us: self.slot_us,
            channel_id: self.channel_id,
            origin: Origin::Derived(format!("{}#{tag}", self.origin)),
        }
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.rssi.len() * 12);
        out.push_str("slot,rssi_dbm\n");
        for (i, v) in self.rssi.iter().enumerate() {
            writeln!(out, "{i},{v}").unwrap();
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path, slot_us: f64) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim_end) != Some("slot,rssi_dbm") {
            return Err(Error::HeaderMismatch("expected `slot,rssi_dbm`".into()));
        }
        let mut rssi = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = i + 1;
            let (slot, value) = line.split_once(',').ok_or_else(|| Error::BadCell {
                row,
                column: 1,
                reason: "missing rssi column".into(),
            })?;
            let slot: usize = slot.trim().parse().map_err(|_| Error::BadCell {
                row,
                column: 0,
                reason: format!("slot {slot:?} is not an integer"),
            })?;
            if slot != rssi.len() {
                return Err(Error::BadCell {
                    row,
                    column: 0,
                    reason: format!("slot {slot} out of sequence"),
                });
            }
            let v: f32 = value.trim().parse().map_err(|_| Error::BadCell {
                row,
                column: 1,
                reason: format!("{value:?} is not numeric"),
            })?;
            if !in_range(v) {
                return Err(Error::BadCell {
                    row,
                    column: 1,
                    reason: format!("{v} outside [-120, 0] dBm"),
                });
            }
            rssi.push(v);
        }
        Self::new(
            rssi,
            slot_us,
            None,
            Origin::File(path.display().to_string()),
        )
    }

    /// Binary layout (little-endian): magic `DLMSLOT\0`, u32 version, f64
    /// slot_us, u8 channel (0 = none), u32 origin length + UTF-8 origin, u64
    /// slot count, then one f32 per slot.
    pub fn save_bin(&self, path: &Path) -> Result<()> {
        let origin = self.origin.to_string();
        let mut buf = Vec::with_capacity(40 + origin.len() + self.rssi.len() * 4);
        buf.extend_from_slice(SLOT_MAGIC);
        buf.extend_from_slice(&SLOT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.slot_us.to_le_bytes());
        buf.push(self.channel_id.unwrap_or(0));
        buf.extend_from_slice(&(origin.len() as u32).to_le_bytes());
        buf.extend_from_slice(origin.as_bytes());
        buf.extend_from_slice(&(self.rssi.len() as u64).to_le_bytes());
        for v in &self.rssi {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_bin(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes);
        if r.take(8)? != SLOT_MAGIC {
            return Err(Error::Format("not a slot trace file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != SLOT_VERSION {
            return Err(Error::Format(format!("unsupported slot trace version {version}")));
        }
        let slot_us = r.f64()?;
        let channel = r.u8()?;
        let origin_len = r.u32()? as usize;
        let origin = String::from_utf8(r.take(origin_len)?.to_vec())
            .map_err(|_| Error::Format("origin is not UTF-8".into()))?;
        let count = r.u64()? as usize;
        let body = r.take(count.checked_mul(4).ok_or_else(|| Error::Format("bad count".into()))?)?;
        let rssi = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let origin = match origin.split_once(':') {
            Some(("file", p)) => Origin::File(p.to_string()),
            Some(("synthetic", s)) => s
                .parse()
                .map(Origin::Synthetic)
                .unwrap_or(Origin::Derived(origin.clone())),
            Some((_, s)) => Origin::Derived(s.to_string()),
            None => Origin::Derived(origin),
        };
        Self::new(rssi, slot_us, (channel != 0).then_some(channel), origin)
    }

    /// Loads by extension: `.csv` as CSV (with the given slot length), anything
    /// else as the binary layout.
    pub fn load(path: &Path, slot_us: f64) -> Result<Self> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::load_csv(path, slot_us)
        } else {
            Self::load_bin(path)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            self.save_csv(path)
        } else {
            self.save_bin(path)
        }
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            ))),
        }
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub(crate) fn seconds_to_slots(seconds: f64, slot_us: f64) -> usize {
    (seconds * 1e6 / slot_us + 1e-9).floor() as usize
}

/// Zero-order hold onto the mini-slot grid: slot `k` (at `k * slot_us`) takes
/// the latest sample at or before that instant.
pub fn interpolate_to_slots(
    channel_seq: &[f32],
    sample_interval_us: f64,
    slot_us: f64,
) -> Result<Vec<f32>> {
    if channel_seq.is_empty() {
        return Err(Error::InvalidArgument("empty channel sequence".into()));
    }
    if !(slot_us > 0.0 && sample_interval_us >= slot_us) {
        return Err(Error::InvalidArgument(format!(
            "need sample interval ({sample_interval_us} us) >= slot ({slot_us} us) > 0"
        )));
    }
    let n = (channel_seq.len() as f64 * sample_interval_us / slot_us + 1e-9).floor() as usize;
    Ok((0..n)
        .map(|k| {
            let idx = (k as f64 * slot_us / sample_interval_us + 1e-9).floor() as usize;
            channel_seq[idx.min(channel_seq.len() - 1)]
        })
        .collect())
}

/// Full preprocessing of one channel of a raw capture.
pub fn preprocess(raw: &RawTrace, channel_id: u8, slot_us: f64, origin: Origin) -> Result<SlotTrace> {
    let seq = aggregate_channel(raw, channel_id)?;
    let slots = interpolate_to_slots(&seq, raw.format.sample_interval_us, slot_us)?;
    SlotTrace::new(slots, slot_us, Some(channel_id), origin)
}

/// A periodic on/off interferer. Cycle `c` is active on
/// `[c * period + j_c, c * period + j_c + round(duty * period))` where `j_c` is
/// drawn uniformly from `0..=jitter_slots`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interferer {
    pub period_slots: usize,
    pub duty_cycle: f64,
    pub power_dbm: f64,
    #[serde(default)]
    pub jitter_slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub noise_floor_dbm: f64,
    #[serde(default)]
    pub interferers: Vec<Interferer>,
    pub duration_slots: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        if self.duration_slots == 0 {
            return Err(Error::InvalidArgument("duration_slots must be >= 1".into()));
        }
        if !self.noise_floor_dbm.is_finite() {
            return Err(Error::InvalidArgument("noise floor must be finite".into()));
        }
        for (i, f) in self.interferers.iter().enumerate() {
            if f.period_slots == 0 {
                return Err(Error::InvalidArgument(format!("interferer {i}: period must be >= 1")));
            }
            if !(0.0..=1.0).contains(&f.duty_cycle) {
                return Err(Error::InvalidArgument(format!(
                    "interferer {i}: duty cycle must lie in [0, 1]"
                )));
            }
            if !f.power_dbm.is_finite() {
                return Err(Error::InvalidArgument(format!("interferer {i}: power must be finite")));
            }
        }
        Ok(())
    }
}

pub fn generate_synthetic(scenario: &SyntheticScenario, slot_us: f64) -> Result<SlotTrace> {
    scenario.validate()?;
    let n = scenario.duration_slots;
    let mut power_mw = vec![dbm_to_mw(scenario.noise_floor_dbm); n];
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    for f in &scenario.interferers {
        let on = (f.duty_cycle * f.period_slots as f64).round() as usize;
        let p = dbm_to_mw(f.power_dbm);
        let mut active = vec![false; n];
        for cycle_start in (0..n).step_by(f.period_slots) {
            let jitter = if f.jitter_slots > 0 {
                rng.gen_range(0..=f.jitter_slots)
            } else {
                0
            };
            let start = (cycle_start + jitter).min(n);
            let end = (start + on).min(n);
            active[start..end].iter_mut().for_each(|a| *a = true);
        }
        for (acc, _) in power_mw.iter_mut().zip(&active).filter(|(_, &a)| a) {
            *acc += p;
        }
    }
    let rssi = power_mw.into_iter().map(|mw| clamp_rssi(mw_to_dbm(mw))).collect();
    SlotTrace::new(rssi, slot_us, None, Origin::Synthetic(scenario.seed))
}

/// Splits into a training prefix and the evaluation segment that follows it.
pub fn split_train_eval(
    trace: &SlotTrace,
    train_seconds: f64,
    eval_seconds: f64,
) -> Result<(SlotTrace, SlotTrace)> {
    if !(train_seconds > 0.0) {
        return Err(Error::InvalidArgument("training segment must be longer than 0 s".into()));
    }
    if !(eval_seconds >= 0.0) {
        return Err(Error::InvalidArgument("evaluation segment must be >= 0 s".into()));
    }
    let n_train = trace.slots_for_seconds(train_seconds);
    let n_eval = trace.slots_for_seconds(eval_seconds);
    let needed = n_train + n_eval;
    if needed > trace.len() || n_train == 0 {
        return Err(Error::TraceTooShort {
            needed: needed.max(1),
            available: trace.len(),
        });
    }
    Ok((
        trace.slice(0..n_train, "train"),
        trace.slice(n_train..needed, "eval"),
    ))
}
