//! Supervised examples: a `3 * MTXOP` window of past RSSI labeled with the
//! highest MCS the next MTXOP slots would have supported.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::phy::{LinkBudget, McsTable, PrefixSums, WindowSum, IDLE_LABEL, MAX_MCS};
use crate::trace::{ByteReader, SlotTrace};

pub const NUM_CLASSES: usize = MAX_MCS as usize + 2;
const DATA_MAGIC: &[u8; 8] = b"DLMDATA\0";
const DATA_VERSION: u32 = 1;

/// Label -1 maps to class 0, MCS k to class k + 1.
pub fn label_to_class(label: i8) -> Result<usize> {
    if (IDLE_LABEL..=MAX_MCS as i8).contains(&label) {
        Ok((label + 1) as usize)
    } else {
        Err(Error::LabelOutOfRange(label as i32))
    }
}

pub fn class_to_label(class: usize) -> i8 {
    debug_assert!(class < NUM_CLASSES);
    class as i8 - 1
}

/// Input window length for a given MTXOP.
pub fn window_len(mtxop: usize) -> usize {
    3 * mtxop
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub window: Vec<f32>,
    pub label: i8,
    pub t: usize,
}

/// Per-value standardization applied to every window before the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean_dbm: f64,
    pub std_dbm: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean_dbm: 0.0,
            std_dbm: 1.0,
        }
    }
}

impl Normalization {
    /// Statistics of a set of values; a zero spread falls back to unit scale.
    pub fn fit<'a>(chunks: impl IntoIterator<Item = &'a [f32]>) -> Self {
        let (mut n, mut sum, mut sq) = (0u64, 0f64, 0f64);
        for chunk in chunks {
            for &v in chunk {
                let v = v as f64;
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        Self {
            mean_dbm: mean,
            std_dbm: if std > 1e-6 { std } else { 1.0 },
        }
    }

    #[inline]
    pub fn apply(&self, v: f32) -> f64 {
        (v as f64 - self.mean_dbm) / self.std_dbm
    }
}

/// Label for slot `t`: the highest MCS whose SINR threshold is met by the mean
/// RSSI over slots `t+1..=t+mtxop`.
pub fn label_at(
    trace: &SlotTrace,
    t: usize,
    budget: &LinkBudget,
    table: &McsTable,
    mtxop: usize,
) -> Result<i8> {
    let (lo, hi) = valid_range(trace.len(), mtxop)?;
    if t < lo || t > hi {
        return Err(Error::OutOfRange { index: t, lo, hi });
    }
    let future = WindowSum::of(&trace.rssi()[t + 1..=t + mtxop]);
    Ok(table.best_label(&future, budget))
}

/// Inclusive range of slots that have a full past window and a full future window.
fn valid_range(len: usize, mtxop: usize) -> Result<(usize, usize)> {
    if mtxop == 0 {
        return Err(Error::InvalidArgument("mtxop must be >= 1".into()));
    }
    let needed = 4 * mtxop;
    if len < needed {
        return Err(Error::TraceTooShort {
            needed,
            available: len,
        });
    }
    Ok((3 * mtxop - 1, len - mtxop - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ExampleRef {
    source: u32,
    /// Last slot of the input window inside its source.
    end: usize,
    t: usize,
}

/// Labeled examples backed by shared slot buffers; windows are views into
/// the source traces rather than copies.
#[derive(Debug, Clone)]
pub struct Dataset {
    sources: Vec<Arc<[f32]>>,
    refs: Vec<ExampleRef>,
    labels: Vec<i8>,
    mtxop_slots: usize,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn empty(mtxop_slots: usize) -> Self {
        Self {
            sources: Vec::new(),
            refs: Vec::new(),
            labels: Vec::new(),
            mtxop_slots,
            normalization: Normalization::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn mtxop_slots(&self) -> usize {
        self.mtxop_slots
    }

    pub fn window_len(&self) -> usize {
        window_len(self.mtxop_slots)
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let r = self.refs[i];
        let w = self.window_len();
        &self.sources[r.source as usize][r.end + 1 - w..=r.end]
    }

    pub fn example(&self, i: usize) -> LabeledExample {
        LabeledExample {
            window: self.window(i).to_vec(),
            label: self.labels[i],
            t: self.refs[i].t,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledExample> + '_ {
        (0..self.len()).map(|i| self.example(i))
    }

    /// Builds a dataset from explicit examples (all windows must share length
    /// `3 * mtxop`). Normalization is fitted on the windows.
    pub fn from_examples(examples: Vec<LabeledExample>, mtxop_slots: usize) -> Result<Self> {
        let w = window_len(mtxop_slots);
        let mut flat = Vec::with_capacity(examples.len() * w);
        let mut refs = Vec::with_capacity(examples.len());
        let mut labels = Vec::with_capacity(examples.len());
        for (i, ex) in examples.into_iter().enumerate() {
            if ex.window.len() != w {
                return Err(Error::ShapeMismatch {
                    expected: w,
                    got: ex.window.len(),
                });
            }
            label_to_class(ex.label)?;
            flat.extend_from_slice(&ex.window);
            refs.push(ExampleRef {
                source: 0,
                end: i * w + w - 1,
                t: ex.t,
            });
            labels.push(ex.label);
        }
        let mut ds = Self {
            sources: vec![flat.into()],
            refs,
            labels,
            mtxop_slots,
            normalization: Normalization::default(),
        };
        ds.refit_normalization();
        Ok(ds)
    }

    /// Fits mean/std over every slot covered by at least one window.
    pub fn refit_normalization(&mut self) {
        let w = self.window_len();
        let mut spans: Vec<(u32, usize, usize)> = self
            .refs
            .iter()
            .map(|r| (r.source, r.end + 1 - w, r.end + 1))
            .collect();
        spans.sort_unstable();
        let mut merged: Vec<(u32, usize, usize)> = Vec::new();
        for (s, a, b) in spans {
            match merged.last_mut() {
                Some(last) if last.0 == s && a <= last.2 => last.2 = last.2.max(b),
                _ => merged.push((s, a, b)),
            }
        }
        self.normalization = Normalization::fit(
            merged
                .iter()
                .map(|&(s, a, b)| &self.sources[s as usize][a..b]),
        );
    }

    /// Example-level concatenation; normalization is refitted on the union.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidArgument("nothing to concatenate".into()));
        };
        let mut out = Dataset::empty(first.mtxop_slots);
        for part in parts {
            if part.mtxop_slots != out.mtxop_slots {
                return Err(Error::ShapeMismatch {
                    expected: out.window_len(),
                    got: part.window_len(),
                });
            }
            let base = out.sources.len() as u32;
            out.sources.extend(part.sources.iter().cloned());
            out.refs.extend(part.refs.iter().map(|r| ExampleRef {
                source: r.source + base,
                ..*r
            }));
            out.labels.extend_from_slice(&part.labels);
        }
        out.refit_normalization();
        Ok(out)
    }

    /// Contiguous split by example order: the first `n` examples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let mut a = self.clone();
        let mut b = self.clone();
        a.refs.truncate(n);
        a.labels.truncate(n);
        b.refs.drain(..n);
        b.labels.drain(..n);
        (a, b)
    }

    /// Inverse-frequency class weights; classes absent from the data get 0.
    pub fn class_weights(&self) -> [f64; NUM_CLASSES] {
        let hist = class_histogram(self);
        let present = hist.counts.iter().filter(|&&c| c > 0).count().max(1);
        let total = self.len() as f64;
        let mut w = [0.0; NUM_CLASSES];
        for (wi, &c) in w.iter_mut().zip(&hist.counts) {
            if c > 0 {
                *wi = total / (present as f64 * c as f64);
            }
        }
        w
    }

    /// Flat binary: magic `DLMDATA\0`, u32 version, u64 count, u32 window
    /// length, u32 mtxop, f64 mean, f64 std; then `count * window` f32 values,
    /// `count` i8 labels and `count` u64 origin slots.
    pub fn save(&self, path: &Path) -> Result<()> {
        let w = self.window_len();
        let mut buf = Vec::with_capacity(40 + self.len() * (w * 4 + 9));
        buf.extend_from_slice(DATA_MAGIC);
        buf.extend_from_slice(&DATA_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(w as u32).to_le_bytes());
        buf.extend_from_slice(&(self.mtxop_slots as u32).to_le_bytes());
        buf.extend_from_slice(&self.normalization.mean_dbm.to_le_bytes());
        buf.extend_from_slice(&self.normalization.std_dbm.to_le_bytes());
        for i in 0..self.len() {
            for v in self.window(i) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend(self.labels.iter().map(|&l| l as u8));
        for r in &self.refs {
            buf.extend_from_slice(&(r.t as u64).to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes);
        if r.take(8)? != DATA_MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DATA_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let count = r.u64()? as usize;
        let w = r.u32()? as usize;
        let mtxop = r.u32()? as usize;
        if w != window_len(mtxop) {
            return Err(Error::Format(format!("window {w} inconsistent with mtxop {mtxop}")));
        }
        let normalization = Normalization {
            mean_dbm: r.f64()?,
            std_dbm: r.f64()?,
        };
        let body_len = count
            .checked_mul(w * 4)
            .ok_or_else(|| Error::Format("bad example count".into()))?;
        let flat: Vec<f32> = r
            .take(body_len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels: Vec<i8> = r.take(count)?.iter().map(|&b| b as i8).collect();
        for &l in &labels {
            label_to_class(l)?;
        }
        let mut refs = Vec::with_capacity(count);
        for i in 0..count {
            refs.push(ExampleRef {
                source: 0,
                end: i * w + w - 1,
                t: r.u64()? as usize,
            });
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after dataset body".into()));
        }
        Ok(Dataset {
            sources: vec![flat.into()],
            refs,
            labels,
            mtxop_slots: mtxop,
            normalization,
        })
    }

    /// Debug export: `t,label,w0,...,w{n-1}`.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let w = self.window_len();
        let mut out = String::from("t,label");
        for k in 0..w {
            write!(out, ",w{k}").unwrap();
        }
        out.push('\n');
        for i in 0..self.len() {
            write!(out, "{},{}", self.refs[i].t, self.labels[i]).unwrap();
            for v in self.window(i) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// One example per valid slot `t`, stepping by `stride` from the first valid
/// slot.
pub fn build_dataset(
    trace: &SlotTrace,
    budget: &LinkBudget,
    table: &McsTable,
    mtxop: usize,
    stride: usize,
) -> Result<Dataset> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let (lo, hi) = valid_range(trace.len(), mtxop)?;
    let sums = PrefixSums::new(trace.rssi());
    let mut refs = Vec::with_capacity((hi - lo) / stride + 1);
    let mut labels = Vec::with_capacity(refs.capacity());
    for t in (lo..=hi).step_by(stride) {
        refs.push(ExampleRef { source: 0, end: t, t });
        labels.push(table.best_label(&sums.window(t + 1, mtxop), budget));
    }
    let mut ds = Dataset {
        sources: vec![Arc::from(trace.rssi())],
        refs,
        labels,
        mtxop_slots: mtxop,
        normalization: Normalization::default(),
    };
    ds.refit_normalization();
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassHistogram {
    /// Indexed by class id (label + 1).
    pub counts: [usize; NUM_CLASSES],
}

impl ClassHistogram {
    pub fn get(&self, label: i8) -> usize {
        label_to_class(label).map_or(0, |c| self.counts[c])
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn class_histogram(ds: &Dataset) -> ClassHistogram {
    let mut h = ClassHistogram::default();
    for &l in &ds.labels {
        h.counts[(l + 1) as usize] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Origin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace(v: Vec<f32>) -> SlotTrace {
        SlotTrace::new(v, 9.0, None, Origin::Synthetic(0)).unwrap()
    }

    /// Tries every MCS and keeps the fastest one whose threshold the mean
    /// future SINR reaches.
    fn brute_label(future: &[f32], budget: &LinkBudget, table: &McsTable) -> i8 {
        let mean = future.iter().map(|&v| v as f64).sum::<f64>() / future.len() as f64;
        let sinr = budget.p_r_dbm - mean;
        let mut best: Option<(f64, i8)> = None;
        for e in table.data_entries() {
            if sinr >= e.sinr_min_db && best.is_none_or(|(r, _)| e.rate_mbps > r) {
                best = Some((e.rate_mbps, e.index));
            }
        }
        best.map_or(-1, |b| b.1)
    }

    #[test]
    fn label_examples() {
        let b = LinkBudget::default();
        let t = McsTable::default();
        let m = 120;
        let mut v = vec![-95.0f32; 4 * m];
        let at = 3 * m - 1;
        v[at + 1..=at + m].iter_mut().for_each(|x| *x = -82.0);
        assert_eq!(label_at(&trace(v.clone()), at, &b, &t, m).unwrap(), 5);
        v[at + 1..=at + m].iter_mut().for_each(|x| *x = -60.0);
        assert_eq!(label_at(&trace(v.clone()), at, &b, &t, m).unwrap(), -1);
        assert!(matches!(
            label_at(&trace(v.clone()), at - 1, &b, &t, m),
            Err(Error::OutOfRange { .. })
        ));
        assert!(label_at(&trace(v), at + 1, &b, &t, m).is_err());
    }

    #[test]
    fn labels_match_brute_force() {
        let b = LinkBudget::default();
        let t = McsTable::default();
        let m = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f32> = (0..600).map(|_| rng.gen_range(-100.0..-55.0)).collect();
        let tr = trace(v.clone());
        for at in 3 * m - 1..600 - m {
            let expect = brute_label(&v[at + 1..=at + m], &b, &t);
            assert_eq!(label_at(&tr, at, &b, &t, m).unwrap(), expect, "t={at}");
        }
    }

    #[test]
    fn label_ignores_past() {
        let b = LinkBudget::default();
        let t = McsTable::default();
        let m = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f32> = (0..200).map(|_| rng.gen_range(-100.0..-50.0)).collect();
        let mut c = a.clone();
        let at = 100;
        for x in &mut c[..=at] {
            *x = rng.gen_range(-120.0..0.0);
        }
        assert_eq!(
            label_at(&trace(a), at, &b, &t, m).unwrap(),
            label_at(&trace(c), at, &b, &t, m).unwrap()
        );
    }

    #[test]
    fn build_counts() {
        let b = LinkBudget::default();
        let t = McsTable::default();
        let m = 10;
        let ds = build_dataset(&trace(vec![-90.0; 4 * m]), &b, &t, m, 1).unwrap();
        assert_eq!(ds.len(), 1);
        let ds = build_dataset(&trace(vec![-90.0; 500]), &b, &t, m, 1).unwrap();
        assert_eq!(ds.len(), 500 - 4 * m + 1);
        assert!(ds.labels().iter().all(|&l| l == ds.labels()[0]));
        let ds = build_dataset(&trace(vec![-90.0; 500]), &b, &t, m, 500).unwrap();
        assert!(ds.len() <= 1);
        assert!(matches!(
            build_dataset(&trace(vec![-90.0; 4 * m - 1]), &b, &t, m, 1),
            Err(Error::TraceTooShort { .. })
        ));
        for i in 0..ds.len() {
            assert_eq!(ds.window(i).len(), 3 * m);
        }
    }

    #[test]
    fn dataset_windows_end_at_t() {
        let b = LinkBudget::default();
        let t = McsTable::default();
        let v: Vec<f32> = (0..300).map(|i| -100.0 + (i % 97) as f32 * 0.5).collect();
        let ds = build_dataset(&trace(v.clone()), &b, &t, 12, 7).unwrap();
        for ex in ds.iter() {
            assert_eq!(ex.window.as_slice(), &v[ex.t + 1 - 36..=ex.t]);
            assert_eq!(ex.label, label_at(&trace(v.clone()), ex.t, &b, &t, 12).unwrap());
        }
    }

    #[test]
    fn histogram() {
        let empty = Dataset::empty(4);
        assert_eq!(class_histogram(&empty).total(), 0);
        let idle = Dataset::from_examples(
            (0..10)
                .map(|t| LabeledExample {
                    window: vec![-60.0; 12],
                    label: -1,
                    t,
                })
                .collect(),
            4,
        )
        .unwrap();
        let h = class_histogram(&idle);
        assert_eq!(h.get(-1), 10);
        assert_eq!(h.total(), 10);

        // two regimes: quiet then loud
        let b = LinkBudget::default();
        let t = McsTable::default();
        let mut v = vec![-95.0f32; 400];
        v.extend(vec![-62.0f32; 400]);
        let tr = trace(v);
        let ds = build_dataset(&tr, &b, &t, 25, 3).unwrap();
        let mut recount = [0usize; NUM_CLASSES];
        for ex in ds.iter() {
            recount[(label_at(&tr, ex.t, &b, &t, 25).unwrap() + 1) as usize] += 1;
        }
        assert_eq!(class_histogram(&ds).counts, recount);
        assert_eq!(class_histogram(&ds).total(), ds.len());
    }

    #[test]
    fn concat_adds_examples_and_refits() {
        let b = LinkBudget::default();
        let t = McsTable::default();
        let a = build_dataset(&trace(vec![-90.0; 200]), &b, &t, 10, 1).unwrap();
        let c = build_dataset(&trace(vec![-70.0; 300]), &b, &t, 10, 2).unwrap();
        let fused = Dataset::concat(&[a.clone(), c.clone()]).unwrap();
        assert_eq!(fused.len(), a.len() + c.len());
        assert!(fused.normalization.mean_dbm > -90.0 && fused.normalization.mean_dbm < -70.0);
        assert_eq!(fused.window(a.len()), c.window(0));
        let other = build_dataset(&trace(vec![-70.0; 300]), &b, &t, 11, 2).unwrap();
        assert!(Dataset::concat(&[a, other]).is_err());
    }

    #[test]
    fn normalization_fallback() {
        let n = Normalization::fit([&[-80.0f32, -80.0][..]]);
        assert_eq!(n.std_dbm, 1.0);
        assert_eq!(n.mean_dbm, -80.0);
        let n = Normalization::fit([&[-80.0f32, -60.0][..]]);
        assert!((n.std_dbm - 10.0).abs() < 1e-9);
    }

    #[test]
    fn binary_round_trip_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let b = LinkBudget::default();
        let t = McsTable::default();
        let v: Vec<f32> = (0..200).map(|i| -100.0 + (i % 13) as f32 * 3.0).collect();
        let ds = build_dataset(&trace(v), &b, &t, 8, 5).unwrap();
        let p = dir.path().join("d.bin");
        ds.save(&p).unwrap();
        let back = Dataset::load(&p).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.normalization, ds.normalization);
        for i in 0..ds.len() {
            assert_eq!(back.example(i), ds.example(i));
        }
        let csv = dir.path().join("d.csv");
        ds.export_csv(&csv).unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), ds.len() + 1);

        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::Format(_))));
    }

    #[test]
    fn class_mapping() {
        assert_eq!(label_to_class(-1).unwrap(), 0);
        assert_eq!(label_to_class(8).unwrap(), 9);
        assert!(label_to_class(9).is_err());
        assert_eq!(class_to_label(0), -1);
        assert_eq!(class_to_label(6), 5);
    }

    #[test]
    fn class_weights_inverse_frequency() {
        let mk = |label, n| (0..n).map(move |t| LabeledExample { window: vec![-80.0; 3], label, t });
        let ds = Dataset::from_examples(mk(-1, 30).chain(mk(4, 10)).collect(), 1).unwrap();
        let w = ds.class_weights();
        assert!((w[0] - 40.0 / 60.0).abs() < 1e-12);
        assert!((w[5] - 40.0 / 20.0).abs() < 1e-12);
        assert_eq!(w[1], 0.0);
    }
}
