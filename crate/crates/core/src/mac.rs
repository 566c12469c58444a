//! MAC policies as mini-slot state machines.
//!
//! Every policy is driven through [`MacPolicy`]: once per slot in which the
//! radio is not transmitting it may sense the current slot and returns an
//! access decision; after a transmission it is told the outcome.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_to_label, window_len, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{argmax, InferenceNet};
use crate::phy::{packet_duration_slots, rssi_from_sinr, LinkBudget, McsTable, PrefixSums, MAX_MCS};

const N_MCS: usize = MAX_MCS as usize + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyDecision {
    Idle,
    Transmit(u8),
}

impl PolicyDecision {
    /// -1 for idle, otherwise the MCS index.
    pub fn label(self) -> i8 {
        match self {
            PolicyDecision::Idle => -1,
            PolicyDecision::Transmit(m) => m as i8,
        }
    }

    pub fn from_label(label: i8) -> Result<Self> {
        match label {
            -1 => Ok(PolicyDecision::Idle),
            0..=8 => Ok(PolicyDecision::Transmit(label as u8)),
            _ => Err(Error::LabelOutOfRange(label as i32)),
        }
    }

    pub fn mcs(self) -> Option<u8> {
        match self {
            PolicyDecision::Idle => None,
            PolicyDecision::Transmit(m) => Some(m),
        }
    }
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ---------------------------------------------------------------- CSMA/CA

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsmaParams {
    pub cw_min: u32,
    pub cw_max: u32,
    pub difs_slots: u32,
    pub busy_threshold_dbm: f64,
}

impl Default for CsmaParams {
    fn default() -> Self {
        Self {
            cw_min: 16,
            cw_max: 1024,
            difs_slots: 4,
            busy_threshold_dbm: -75.0,
        }
    }
}

impl CsmaParams {
    pub fn validate(&self) -> Result<()> {
        if self.cw_min == 0 || self.cw_min > self.cw_max {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= cw_min <= cw_max, got {}..{}",
                self.cw_min, self.cw_max
            )));
        }
        if !self.busy_threshold_dbm.is_finite() {
            return Err(Error::InvalidArgument("busy threshold must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsmaPhase {
    Sensing,
    Backoff,
    Ready,
}

/// Listen-before-talk with binary exponential backoff.
#[derive(Debug, Clone)]
pub struct CsmaState {
    pub params: CsmaParams,
    pub cw: u32,
    pub backoff: u32,
    pub difs_remaining: u32,
    pub phase: CsmaPhase,
    rng: ChaCha8Rng,
}

impl CsmaState {
    pub fn new(params: CsmaParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = sub_rng(seed, 1);
        let backoff = rng.gen_range(0..params.cw_min);
        Ok(Self::assemble(params, backoff, rng))
    }

    /// Starts with a given backoff count instead of a random draw.
    pub fn with_backoff(params: CsmaParams, backoff: u32, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self::assemble(params, backoff, sub_rng(seed, 1)))
    }

    fn assemble(params: CsmaParams, backoff: u32, rng: ChaCha8Rng) -> Self {
        let mut s = Self {
            params,
            cw: params.cw_min,
            backoff,
            difs_remaining: params.difs_slots,
            phase: CsmaPhase::Sensing,
            rng,
        };
        s.restart_difs();
        s
    }

    fn restart_difs(&mut self) {
        self.difs_remaining = self.params.difs_slots;
        self.phase = if self.difs_remaining > 0 {
            CsmaPhase::Sensing
        } else if self.backoff > 0 {
            CsmaPhase::Backoff
        } else {
            CsmaPhase::Ready
        };
    }

    pub fn is_busy(&self, rssi_dbm: f32) -> bool {
        rssi_dbm as f64 >= self.params.busy_threshold_dbm
    }

    /// Advances one slot; `true` grants channel access in this slot.
    pub fn step(&mut self, rssi_dbm: f32) -> bool {
        if self.is_busy(rssi_dbm) {
            self.restart_difs();
            return false;
        }
        match self.phase {
            CsmaPhase::Sensing => {
                self.difs_remaining -= 1;
                if self.difs_remaining == 0 {
                    self.phase = if self.backoff > 0 {
                        CsmaPhase::Backoff
                    } else {
                        CsmaPhase::Ready
                    };
                }
                false
            }
            CsmaPhase::Backoff => {
                self.backoff -= 1;
                if self.backoff == 0 {
                    self.phase = CsmaPhase::Ready;
                }
                false
            }
            CsmaPhase::Ready => true,
        }
    }

    /// Outcome of the transmission that followed the last access grant.
    pub fn on_result(&mut self, success: bool) {
        self.cw = if success {
            self.params.cw_min
        } else {
            self.cw.saturating_mul(2).min(self.params.cw_max)
        };
        self.backoff = self.rng.gen_range(0..self.cw);
        self.restart_difs();
    }
}

// -------------------------------------------------------------------- ARF

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArfParams {
    pub up_threshold: u32,
    pub down_threshold: u32,
    pub initial_mcs: u8,
}

impl Default for ArfParams {
    fn default() -> Self {
        Self {
            up_threshold: 10,
            down_threshold: 2,
            initial_mcs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArfState {
    pub current_mcs: u8,
    pub consecutive_successes: u32,
    pub consecutive_failures: u32,
    pub up_threshold: u32,
    pub down_threshold: u32,
}

impl ArfState {
    pub fn new(params: ArfParams) -> Result<Self> {
        if params.initial_mcs > MAX_MCS || params.up_threshold == 0 || params.down_threshold == 0 {
            return Err(Error::InvalidArgument(
                "ARF needs thresholds >= 1 and an initial MCS in 0..=8".into(),
            ));
        }
        Ok(Self {
            current_mcs: params.initial_mcs,
            consecutive_successes: 0,
            consecutive_failures: 0,
            up_threshold: params.up_threshold,
            down_threshold: params.down_threshold,
        })
    }

    pub fn update(&mut self, success: bool) {
        if success {
            self.consecutive_failures = 0;
            self.consecutive_successes += 1;
            if self.consecutive_successes >= self.up_threshold {
                self.current_mcs = (self.current_mcs + 1).min(MAX_MCS);
                self.consecutive_successes = 0;
            }
        } else {
            self.consecutive_successes = 0;
            self.consecutive_failures += 1;
            if self.consecutive_failures >= self.down_threshold {
                self.current_mcs = self.current_mcs.saturating_sub(1);
                self.consecutive_failures = 0;
            }
        }
    }
}

// -------------------------------------------------------------------- IWL

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IwlParams {
    pub alpha: f64,
    pub probe_interval: u32,
    /// Starting success estimate for every MCS.
    pub initial_ewma: f64,
}

impl Default for IwlParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            probe_interval: 10,
            initial_ewma: 1.0,
        }
    }
}

/// Sampling rate controller in the style of Minstrel.
#[derive(Debug, Clone)]
pub struct IwlState {
    pub ewma: [f64; N_MCS],
    pub attempts: [u64; N_MCS],
    pub probe_interval: u32,
    pub packets_since_probe: u32,
    pub alpha: f64,
    rates: [f64; N_MCS],
    rng: ChaCha8Rng,
}

impl IwlState {
    pub fn new(params: IwlParams, table: &McsTable, seed: u64) -> Result<Self> {
        if !(params.alpha > 0.0 && params.alpha <= 1.0) {
            return Err(Error::InvalidArgument("IWL alpha must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&params.initial_ewma) {
            return Err(Error::InvalidArgument("IWL initial EWMA must lie in [0, 1]".into()));
        }
        if params.probe_interval == 0 {
            return Err(Error::InvalidArgument("IWL probe interval must be >= 1".into()));
        }
        let mut rates = [0.0; N_MCS];
        for (i, r) in rates.iter_mut().enumerate() {
            *r = table.mcs(i as u8).rate_mbps;
        }
        Ok(Self {
            ewma: [params.initial_ewma; N_MCS],
            attempts: [0; N_MCS],
            probe_interval: params.probe_interval,
            packets_since_probe: 0,
            alpha: params.alpha,
            rates,
            rng: sub_rng(seed, 2),
        })
    }

    /// MCS with the highest expected goodput (ties toward the higher MCS).
    pub fn best(&self) -> u8 {
        let mut best = 0;
        for i in 1..N_MCS {
            if self.ewma[i] * self.rates[i] >= self.ewma[best] * self.rates[best] {
                best = i;
            }
        }
        best as u8
    }

    /// MCS for the next data packet; every `probe_interval`-th packet samples
    /// a random non-best MCS.
    pub fn select(&mut self) -> u8 {
        self.packets_since_probe += 1;
        let best = self.best();
        if self.packets_since_probe >= self.probe_interval {
            self.packets_since_probe = 0;
            let k = self.rng.gen_range(0..N_MCS as u8 - 1);
            return if k >= best { k + 1 } else { k };
        }
        best
    }

    pub fn update(&mut self, mcs: u8, success: bool) {
        let i = mcs as usize;
        let s = if success { 1.0 } else { 0.0 };
        self.ewma[i] = ((1.0 - self.alpha) * self.ewma[i] + self.alpha * s).clamp(0.0, 1.0);
        self.attempts[i] += 1;
    }
}

// ------------------------------------------------------- handcrafted RSSI

/// Closed dBm interval the handcrafted fill is drawn from.
pub fn handcraft_interval(
    mcs_used: u8,
    success: bool,
    budget: &LinkBudget,
    table: &McsTable,
    sinr_floor_db: f64,
) -> Result<(f64, f64)> {
    if mcs_used > MAX_MCS {
        return Err(Error::LabelOutOfRange(mcs_used as i32));
    }
    let smin = |i: u8| table.mcs(i).sinr_min_db;
    Ok(if success {
        (
            rssi_from_sinr(smin(MAX_MCS), budget),
            rssi_from_sinr(smin(mcs_used), budget),
        )
    } else {
        let below = if mcs_used == 0 {
            sinr_floor_db
        } else {
            smin(mcs_used - 1)
        };
        (rssi_from_sinr(below, budget), rssi_from_sinr(sinr_floor_db, budget))
    })
}

/// Stand-in RSSI for slots the radio spent transmitting: uniform in dB over
/// the range consistent with the observed outcome.
pub fn handcraft_rssi(
    mcs_used: u8,
    success: bool,
    budget: &LinkBudget,
    table: &McsTable,
    sinr_floor_db: f64,
    n_slots: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f32>> {
    let (lo, hi) = handcraft_interval(mcs_used, success, budget, table, sinr_floor_db)?;
    let (lo, hi) = (lo.min(hi), lo.max(hi));
    let (lo32, hi32) = (lo as f32, hi as f32);
    Ok((0..n_slots)
        .map(|_| (rng.gen_range(lo..=hi) as f32).clamp(lo32, hi32))
        .collect())
}

// ----------------------------------------------------------------- DL-MAC

/// Eval-mode logits shared by every run on one trace, keyed by slot. Only
/// windows made entirely of real observations are cached.
#[derive(Debug, Default)]
pub struct LogitCache {
    map: Mutex<HashMap<usize, [f32; NUM_CLASSES]>>,
}

impl LogitCache {
    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A trained network together with the cache for one evaluation trace.
#[derive(Debug, Clone)]
pub struct DlResources {
    pub net: Arc<InferenceNet>,
    pub cache: Arc<LogitCache>,
}

impl DlResources {
    pub fn new(net: InferenceNet) -> Self {
        Self {
            net: Arc::new(net),
            cache: Arc::default(),
        }
    }
}

/// RSSI queue of the latest `3 * MTXOP` observed or handcrafted values and
/// the network that reads it.
#[derive(Debug, Clone)]
pub struct DlMacState {
    net: Arc<InferenceNet>,
    queue: VecDeque<f32>,
    capacity: usize,
    /// Real observations pushed since the last handcrafted fill.
    real_since_fill: usize,
    filled_ever: bool,
    sinr_floor_db: f64,
    rng: ChaCha8Rng,
}

impl DlMacState {
    pub fn new(net: Arc<InferenceNet>, mtxop: usize, sinr_floor_db: f64, seed: u64) -> Result<Self> {
        let capacity = window_len(mtxop);
        if net.input_dim() != capacity {
            return Err(Error::ShapeMismatch {
                expected: capacity,
                got: net.input_dim(),
            });
        }
        Ok(Self {
            net,
            queue: VecDeque::with_capacity(capacity + 1),
            capacity,
            real_since_fill: 0,
            filled_ever: false,
            sinr_floor_db,
            rng: sub_rng(seed, 3),
        })
    }

    fn push(&mut self, v: f32) {
        if self.queue.len() == self.capacity {
            self.queue.pop_front();
        }
        self.queue.push_back(v);
    }

    pub fn observe(&mut self, rssi_dbm: f32) {
        self.push(rssi_dbm);
        self.real_since_fill = self.real_since_fill.saturating_add(1);
    }

    pub fn is_warm(&self) -> bool {
        self.queue.len() == self.capacity
    }

    /// Whether the whole queue holds real observations.
    pub fn is_pure(&self) -> bool {
        self.is_warm() && (!self.filled_ever || self.real_since_fill >= self.capacity)
    }

    pub fn queue(&self) -> impl Iterator<Item = &f32> {
        self.queue.iter()
    }

    pub fn logits(&mut self) -> Result<[f32; NUM_CLASSES]> {
        let logits = self.net.logits(self.queue.make_contiguous())?;
        let mut out = [0.0; NUM_CLASSES];
        if logits.len() != NUM_CLASSES {
            return Err(Error::ShapeMismatch {
                expected: NUM_CLASSES,
                got: logits.len(),
            });
        }
        out.copy_from_slice(&logits);
        Ok(out)
    }

    /// Pushes the current observation and maps the network's argmax class to
    /// a decision. Idle until the queue is full.
    pub fn decide(&mut self, rssi_dbm: f32) -> Result<PolicyDecision> {
        self.observe(rssi_dbm);
        if !self.is_warm() {
            return Ok(PolicyDecision::Idle);
        }
        let logits = self.logits()?;
        decision_from_logits(&logits)
    }

    /// Fills the queue for `n_slots` slots of own transmission.
    pub fn backfill(
        &mut self,
        mcs_used: u8,
        success: bool,
        budget: &LinkBudget,
        table: &McsTable,
        n_slots: usize,
    ) -> Result<Vec<f32>> {
        let values = handcraft_rssi(
            mcs_used,
            success,
            budget,
            table,
            self.sinr_floor_db,
            n_slots,
            &mut self.rng,
        )?;
        for &v in &values {
            self.push(v);
        }
        self.real_since_fill = 0;
        self.filled_ever = true;
        Ok(values)
    }
}

pub fn decision_from_logits(logits: &[f32]) -> Result<PolicyDecision> {
    let class = argmax(ndarray::ArrayView1::from(logits));
    PolicyDecision::from_label(class_to_label(class))
}

/// Highest-scoring transmit MCS, ignoring the idle class.
pub fn mcs_from_logits(logits: &[f32]) -> u8 {
    let class = 1 + argmax(ndarray::ArrayView1::from(&logits[1..]));
    class_to_label(class) as u8
}

// ------------------------------------------------------------------- GOPT

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoptChoice {
    pub start: usize,
    pub mcs: u8,
    /// Last airtime slot, `start + D_mcs`.
    pub completion: usize,
}

/// Airtime of every MCS in slots.
pub fn durations(budget: &LinkBudget, table: &McsTable) -> [usize; N_MCS] {
    let mut d = [0; N_MCS];
    for (i, v) in d.iter_mut().enumerate() {
        *v = packet_duration_slots(table.mcs(i as u8), budget).expect("data MCS");
    }
    d
}

/// Earliest-finishing successful transmission starting in `[t, t + horizon]`
/// whose airtime `start+1..=start+D` lies inside the trace. Ties prefer the
/// higher rate, then the earlier start. `None` means wait a slot.
pub fn gopt_decide(
    sums: &PrefixSums,
    t: usize,
    budget: &LinkBudget,
    table: &McsTable,
    horizon: usize,
) -> Result<Option<GoptChoice>> {
    let d = durations(budget, table);
    let shortest = *d.iter().min().unwrap();
    if t + shortest >= sums.len() {
        return Err(Error::TraceTooShort {
            needed: t + shortest + 1,
            available: sums.len(),
        });
    }
    let mut best: Option<(GoptChoice, f64)> = None;
    for mcs in 0..N_MCS {
        let entry = table.mcs(mcs as u8);
        for s in t..=t + horizon {
            let completion = s + d[mcs];
            if completion >= sums.len() {
                break;
            }
            if let Some((b, rate)) = &best {
                // ascending s: completions only grow from here
                if completion > b.completion {
                    break;
                }
                if completion == b.completion && entry.rate_mbps <= *rate {
                    break;
                }
            }
            if sums.window(s + 1, d[mcs]).meets(entry, budget) {
                let c = GoptChoice {
                    start: s,
                    mcs: mcs as u8,
                    completion,
                };
                best = Some((c, entry.rate_mbps));
                break;
            }
        }
    }
    Ok(best.map(|b| b.0))
}

// --------------------------------------------------------- policy plumbing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    DlMac,
    CsmaArf,
    CsmaIwl,
    CsmaDlMcs,
    DlCaIwl,
    Gopt,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::DlMac,
        PolicyKind::CsmaArf,
        PolicyKind::CsmaIwl,
        PolicyKind::CsmaDlMcs,
        PolicyKind::DlCaIwl,
        PolicyKind::Gopt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::DlMac => "dl-mac",
            PolicyKind::CsmaArf => "csma-arf",
            PolicyKind::CsmaIwl => "csma-iwl",
            PolicyKind::CsmaDlMcs => "csma-dl-mcs",
            PolicyKind::DlCaIwl => "dl-ca-iwl",
            PolicyKind::Gopt => "gopt",
        }
    }

    /// Policies that read the trained network (and so run half-duplex).
    pub fn uses_model(self) -> bool {
        matches!(self, PolicyKind::DlMac | PolicyKind::CsmaDlMcs | PolicyKind::DlCaIwl)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!("unknown policy {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacParams {
    pub csma: CsmaParams,
    pub arf: ArfParams,
    pub iwl: IwlParams,
    /// SINR standing in for the threshold below MCS 0 when handcrafting.
    pub sinr_floor_db: f64,
    /// GOPT look-ahead in slots; one MTXOP when unset.
    pub gopt_horizon: Option<usize>,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            csma: CsmaParams::default(),
            arf: ArfParams::default(),
            iwl: IwlParams::default(),
            sinr_floor_db: 0.0,
            gopt_horizon: None,
        }
    }
}

/// Read access to the current slot of the real trace. Every read is logged
/// when instrumentation is on. A blind sensor stands for the last slot of the
/// device's own transmission, where nothing can be heard.
pub struct Sensor<'a> {
    rssi: Option<&'a [f32]>,
    slot: usize,
    log: Option<&'a mut Vec<usize>>,
}

impl<'a> Sensor<'a> {
    pub fn new(rssi: &'a [f32], slot: usize, log: Option<&'a mut Vec<usize>>) -> Self {
        Self {
            rssi: Some(rssi),
            slot,
            log,
        }
    }

    pub fn blind(slot: usize) -> Self {
        Self {
            rssi: None,
            slot,
            log: None,
        }
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn sense(&mut self) -> Option<f32> {
        let rssi = self.rssi?;
        if let Some(log) = self.log.as_mut() {
            log.push(self.slot);
        }
        Some(rssi[self.slot])
    }
}

/// Handcrafted fill applied after one transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct FillRecord {
    pub mcs: u8,
    pub success: bool,
    pub values: Vec<f32>,
}

pub trait MacPolicy: Send {
    fn kind(&self) -> PolicyKind;

    /// Called for every slot in which the radio is idle and again, blind, in
    /// the last slot of each own transmission. A transmit decision occupies
    /// the following slots. `pending` tells whether a packet is waiting;
    /// without one the decision is ignored.
    fn on_slot(&mut self, sensor: &mut Sensor<'_>, pending: bool) -> Result<PolicyDecision>;

    /// Called once the transmission decided earlier has ended.
    fn on_result(&mut self, mcs: u8, success: bool, airtime: usize) -> Result<Option<FillRecord>>;
}

/// Everything needed to instantiate a policy for one run.
#[derive(Clone)]
pub struct PolicyEnv<'a> {
    pub budget: LinkBudget,
    pub table: &'a McsTable,
    pub mtxop: usize,
    pub params: MacParams,
    /// Full trace for the oracle.
    pub oracle: Arc<PrefixSums>,
    pub dl: Option<&'a DlResources>,
    pub seed: u64,
}

pub fn build_policy(kind: PolicyKind, env: &PolicyEnv<'_>) -> Result<Box<dyn MacPolicy>> {
    let dl_state = || -> Result<DlCore> {
        let dl = env.dl.ok_or_else(|| {
            Error::InvalidArgument(format!("policy {kind} needs a trained model"))
        })?;
        Ok(DlCore {
            state: DlMacState::new(dl.net.clone(), env.mtxop, env.params.sinr_floor_db, env.seed)?,
            cache: dl.cache.clone(),
            budget: env.budget,
            table: env.table.clone(),
        })
    };
    let csma = || CsmaState::new(env.params.csma, env.seed);
    let iwl = || IwlState::new(env.params.iwl, env.table, env.seed);
    Ok(match kind {
        PolicyKind::DlMac => Box::new(DlMacPolicy { core: dl_state()? }),
        PolicyKind::CsmaArf => Box::new(CsmaArfPolicy {
            csma: csma()?,
            arf: ArfState::new(env.params.arf)?,
        }),
        PolicyKind::CsmaIwl => Box::new(CsmaIwlPolicy {
            csma: csma()?,
            iwl: iwl()?,
        }),
        PolicyKind::CsmaDlMcs => Box::new(CsmaDlMcsPolicy {
            csma: csma()?,
            core: dl_state()?,
        }),
        PolicyKind::DlCaIwl => Box::new(DlCaIwlPolicy {
            core: dl_state()?,
            iwl: iwl()?,
        }),
        PolicyKind::Gopt => Box::new(GoptPolicy {
            sums: env.oracle.clone(),
            budget: env.budget,
            table: env.table.clone(),
            horizon: env.params.gopt_horizon.unwrap_or(env.mtxop),
        }),
    })
}

struct DlCore {
    state: DlMacState,
    cache: Arc<LogitCache>,
    budget: LinkBudget,
    table: McsTable,
}

impl DlCore {
    /// Observes the slot; returns logits when a packet waits.
    fn step(&mut self, sensor: &mut Sensor<'_>, pending: bool) -> Result<Option<[f32; NUM_CLASSES]>> {
        if let Some(rssi) = sensor.sense() {
            self.state.observe(rssi);
        }
        if !pending || !self.state.is_warm() {
            return Ok(None);
        }
        self.logits(sensor.slot()).map(Some)
    }

    fn logits(&mut self, slot: usize) -> Result<[f32; NUM_CLASSES]> {
        if !self.state.is_pure() {
            return self.state.logits();
        }
        if let Some(l) = self.cache.map.lock().unwrap().get(&slot) {
            return Ok(*l);
        }
        let l = self.state.logits()?;
        self.cache.map.lock().unwrap().insert(slot, l);
        Ok(l)
    }

    fn fill(&mut self, mcs: u8, success: bool, airtime: usize) -> Result<Option<FillRecord>> {
        let values = self
            .state
            .backfill(mcs, success, &self.budget, &self.table, airtime)?;
        Ok(Some(FillRecord { mcs, success, values }))
    }
}

struct DlMacPolicy {
    core: DlCore,
}

impl MacPolicy for DlMacPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::DlMac
    }

    fn on_slot(&mut self, sensor: &mut Sensor<'_>, pending: bool) -> Result<PolicyDecision> {
        match self.core.step(sensor, pending)? {
            Some(l) => decision_from_logits(&l),
            None => Ok(PolicyDecision::Idle),
        }
    }

    fn on_result(&mut self, mcs: u8, success: bool, airtime: usize) -> Result<Option<FillRecord>> {
        self.core.fill(mcs, success, airtime)
    }
}

struct CsmaArfPolicy {
    csma: CsmaState,
    arf: ArfState,
}

impl MacPolicy for CsmaArfPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::CsmaArf
    }

    fn on_slot(&mut self, sensor: &mut Sensor<'_>, pending: bool) -> Result<PolicyDecision> {
        if let (true, Some(rssi)) = (pending, sensor.sense()) {
            if self.csma.step(rssi) {
                return Ok(PolicyDecision::Transmit(self.arf.current_mcs));
            }
        }
        Ok(PolicyDecision::Idle)
    }

    fn on_result(&mut self, _mcs: u8, success: bool, _airtime: usize) -> Result<Option<FillRecord>> {
        self.csma.on_result(success);
        self.arf.update(success);
        Ok(None)
    }
}

struct CsmaIwlPolicy {
    csma: CsmaState,
    iwl: IwlState,
}

impl MacPolicy for CsmaIwlPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::CsmaIwl
    }

    fn on_slot(&mut self, sensor: &mut Sensor<'_>, pending: bool) -> Result<PolicyDecision> {
        if let (true, Some(rssi)) = (pending, sensor.sense()) {
            if self.csma.step(rssi) {
                return Ok(PolicyDecision::Transmit(self.iwl.select()));
            }
        }
        Ok(PolicyDecision::Idle)
    }

    fn on_result(&mut self, mcs: u8, success: bool, _airtime: usize) -> Result<Option<FillRecord>> {
        self.csma.on_result(success);
        self.iwl.update(mcs, success);
        Ok(None)
    }
}

struct CsmaDlMcsPolicy {
    csma: CsmaState,
    core: DlCore,
}

impl MacPolicy for CsmaDlMcsPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::CsmaDlMcs
    }

    fn on_slot(&mut self, sensor: &mut Sensor<'_>, pending: bool) -> Result<PolicyDecision> {
        // The queue is fed every idle slot; the network is only asked once
        // carrier sense grants access.
        let Some(rssi) = sensor.sense() else {
            return Ok(PolicyDecision::Idle);
        };
        self.core.state.observe(rssi);
        if !pending || !self.core.state.is_warm() || !self.csma.step(rssi) {
            return Ok(PolicyDecision::Idle);
        }
        let logits = self.core.logits(sensor.slot())?;
        Ok(PolicyDecision::Transmit(mcs_from_logits(&logits)))
    }

    fn on_result(&mut self, mcs: u8, success: bool, airtime: usize) -> Result<Option<FillRecord>> {
        self.csma.on_result(success);
        self.core.fill(mcs, success, airtime)
    }
}

struct DlCaIwlPolicy {
    core: DlCore,
    iwl: IwlState,
}

impl MacPolicy for DlCaIwlPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::DlCaIwl
    }

    fn on_slot(&mut self, sensor: &mut Sensor<'_>, pending: bool) -> Result<PolicyDecision> {
        match self.core.step(sensor, pending)? {
            Some(l) if decision_from_logits(&l)? != PolicyDecision::Idle => {
                Ok(PolicyDecision::Transmit(self.iwl.select()))
            }
            _ => Ok(PolicyDecision::Idle),
        }
    }

    fn on_result(&mut self, mcs: u8, success: bool, airtime: usize) -> Result<Option<FillRecord>> {
        self.iwl.update(mcs, success);
        self.core.fill(mcs, success, airtime)
    }
}

struct GoptPolicy {
    sums: Arc<PrefixSums>,
    budget: LinkBudget,
    table: McsTable,
    horizon: usize,
}

impl MacPolicy for GoptPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Gopt
    }

    fn on_slot(&mut self, sensor: &mut Sensor<'_>, pending: bool) -> Result<PolicyDecision> {
        if !pending {
            return Ok(PolicyDecision::Idle);
        }
        let t = sensor.slot();
        Ok(match gopt_decide(&self.sums, t, &self.budget, &self.table, self.horizon) {
            Ok(Some(c)) if c.start == t => PolicyDecision::Transmit(c.mcs),
            Ok(_) | Err(Error::TraceTooShort { .. }) => PolicyDecision::Idle,
            Err(e) => return Err(e),
        })
    }

    fn on_result(&mut self, _mcs: u8, _success: bool, _airtime: usize) -> Result<Option<FillRecord>> {
        Ok(None)
    }
}

#[cfg(test)]
mod tests;
