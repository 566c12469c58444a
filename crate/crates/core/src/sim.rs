//! Mini-slot engine binding one policy, one trace and a Poisson packet source.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mac::{build_policy, durations, DlResources, FillRecord, MacParams, PolicyDecision, PolicyEnv, PolicyKind, Sensor};
use crate::nn::{load_model, InferenceNet, PolicyModel};
use crate::phy::{LinkBudget, McsTable, PrefixSums};
use crate::trace::SlotTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub policy: PolicyKind,
    pub budget: LinkBudget,
    /// Defaults to the MCS 0 airtime.
    pub mtxop_slots: Option<usize>,
    /// Expected packet arrivals per MTXOP.
    pub lambda_arrivals: f64,
    pub seed: u64,
    pub measure_window_s: f64,
    /// Measured duration; as many whole windows as the trace allows when unset.
    pub duration_s: Option<f64>,
    /// Slots observed before traffic starts; `3 * MTXOP` when unset.
    pub warmup_slots: Option<usize>,
    pub mac: MacParams,
    pub trace: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub mcs_table: Option<PathBuf>,
    /// Keep the per-packet event log.
    pub record_events: bool,
    /// Log every real-trace read and every handcrafted fill.
    pub instrument: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::DlMac,
            budget: LinkBudget::default(),
            mtxop_slots: None,
            lambda_arrivals: 0.18,
            seed: 0,
            measure_window_s: 2.0,
            duration_s: None,
            warmup_slots: None,
            mac: MacParams::default(),
            trace: None,
            model: None,
            mcs_table: None,
            record_events: true,
            instrument: false,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        if !(self.lambda_arrivals >= 0.0 && self.lambda_arrivals.is_finite()) {
            return Err(Error::Config("lambda_arrivals must be >= 0".into()));
        }
        if !(self.measure_window_s > 0.0 && self.measure_window_s.is_finite()) {
            return Err(Error::Config("measure_window_s must be > 0".into()));
        }
        if let Some(d) = self.duration_s {
            if !(d > 0.0) {
                return Err(Error::Config("duration_s must be > 0".into()));
            }
        }
        if self.mtxop_slots == Some(0) {
            return Err(Error::Config("mtxop_slots must be >= 1".into()));
        }
        self.mac.csma.validate()
    }

    pub fn mtxop(&self, table: &McsTable) -> usize {
        self.mtxop_slots.unwrap_or_else(|| self.budget.mtxop_slots(table))
    }
}

/// Trace, oracle prefix sums and optional trained network shared by runs.
#[derive(Debug, Clone)]
pub struct SimEnv {
    pub trace: Arc<SlotTrace>,
    pub sums: Arc<PrefixSums>,
    pub table: McsTable,
    pub dl: Option<DlResources>,
}

impl SimEnv {
    pub fn new(trace: SlotTrace, table: McsTable, model: Option<&PolicyModel<f32>>) -> Self {
        let sums = Arc::new(PrefixSums::new(trace.rssi()));
        Self {
            trace: Arc::new(trace),
            sums,
            table,
            dl: model.map(|m| DlResources::new(InferenceNet::new(m))),
        }
    }

    /// Loads the trace, MCS table and model named in the config.
    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        let path = cfg
            .trace
            .as_ref()
            .ok_or_else(|| Error::Config("no trace given".into()))?;
        let trace = SlotTrace::load(path, cfg.budget.slot_us)?;
        let table = match &cfg.mcs_table {
            Some(p) => McsTable::load(p)?,
            None => McsTable::default(),
        };
        let model = cfg.model.as_deref().map(load_model).transpose()?;
        Ok(Self::new(trace, table, model.as_ref()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Arrival,
    /// Transmission starting after `slot`; airtime ends at `completion`.
    Transmit {
        mcs: u8,
        airtime: usize,
        success: bool,
        completion: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub slot: usize,
    pub kind: EventKind,
}

/// Buckets successful payload by the end time of its airtime into
/// left-closed windows, in bits per second.
pub fn measure_throughput(
    events: &[Event],
    timing: &Timing,
    payload_bits: u64,
) -> Vec<f64> {
    let mut bits = vec![0u64; timing.n_windows];
    for e in events {
        if let EventKind::Transmit {
            success: true,
            completion,
            ..
        } = e.kind
        {
            if let Some(w) = timing.window_of(completion) {
                bits[w] += payload_bits;
            }
        }
    }
    bits.into_iter()
        .map(|b| b as f64 / timing.window_s)
        .collect()
}

/// Mapping from slots to measurement windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// First measured slot.
    pub run_start: usize,
    pub slot_us: f64,
    pub window_s: f64,
    pub n_windows: usize,
}

impl Timing {
    /// Window holding a packet whose last airtime slot is `slot`, if measured.
    pub fn window_of(&self, slot: usize) -> Option<usize> {
        if slot < self.run_start {
            return None;
        }
        let end_us = (slot + 1 - self.run_start) as f64 * self.slot_us;
        let w = (end_us / (self.window_s * 1e6)).floor() as usize;
        (w < self.n_windows).then_some(w)
    }

    /// One past the last slot that starts before the measured span ends.
    pub fn run_end(&self) -> usize {
        let span_us = self.n_windows as f64 * self.window_s * 1e6;
        self.run_start + (span_us / self.slot_us - 1e-9).ceil() as usize
    }

    pub fn measured_s(&self) -> f64 {
        self.n_windows as f64 * self.window_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: PolicyKind,
    pub seed: u64,
    pub timing: Timing,
    pub throughput_series: Vec<f64>,
    pub mean_throughput: f64,
    pub offered: u64,
    pub delivered: u64,
    pub failed: u64,
    pub buffered_at_end: u64,
    /// Packets on air, or finishing after the measured span, at the end.
    pub in_flight_at_end: u64,
    pub delivered_bits: u64,
    /// Transmission attempts per MCS.
    pub mcs_usage: [u64; 9],
    /// Requested duration exceeded the trace.
    pub partial: bool,
    #[serde(skip)]
    pub events: Vec<Event>,
    #[serde(skip)]
    pub trace_reads: Option<Vec<usize>>,
    #[serde(skip)]
    pub fills: Option<Vec<FillRecord>>,
}

impl SimResult {
    /// Real-trace reads that fall inside one of this run's own airtimes.
    pub fn half_duplex_violations(&self) -> usize {
        let Some(reads) = &self.trace_reads else {
            return 0;
        };
        let mut spans: Vec<(usize, usize)> = self
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Transmit { completion, .. } => Some((e.slot + 1, completion)),
                EventKind::Arrival => None,
            })
            .collect();
        spans.sort_unstable();
        reads
            .iter()
            .filter(|&&r| {
                let i = spans.partition_point(|&(lo, _)| lo <= r);
                i > 0 && r <= spans[i - 1].1
            })
            .count()
    }

    pub fn summary_toml(&self) -> String {
        toml::to_string(self).expect("result serializes")
    }

    pub fn series_csv(&self) -> String {
        let mut out = String::from("window,start_s,throughput_bps\n");
        for (i, v) in self.throughput_series.iter().enumerate() {
            writeln!(out, "{i},{},{v}", i as f64 * self.timing.window_s).unwrap();
        }
        out
    }

    pub fn events_csv(&self) -> String {
        let mut out = String::from("slot,event,mcs,airtime,completion,success\n");
        for e in &self.events {
            match e.kind {
                EventKind::Arrival => writeln!(out, "{},arrival,,,,", e.slot),
                EventKind::Transmit {
                    mcs,
                    airtime,
                    success,
                    completion,
                } => writeln!(out, "{},transmit,{mcs},{airtime},{completion},{}", e.slot, success as u8),
            }
            .unwrap();
        }
        out
    }
}

struct InFlight {
    mcs: u8,
    airtime: usize,
    success: bool,
    completion: usize,
}

/// Plans the measured span on `trace_len` slots.
pub fn plan_timing(cfg: &SimConfig, table: &McsTable, trace_len: usize) -> Result<(Timing, bool)> {
    let mtxop = cfg.mtxop(table);
    let warmup = cfg.warmup_slots.unwrap_or(3 * mtxop);
    let tail = mtxop.max(*durations(&cfg.budget, table).iter().max().unwrap());
    let needed = warmup + tail + 1;
    if trace_len < needed {
        return Err(Error::TraceTooShort {
            needed,
            available: trace_len,
        });
    }
    let avail_us = (trace_len - warmup - tail) as f64 * cfg.budget.slot_us;
    let window_us = cfg.measure_window_s * 1e6;
    let max_windows = (avail_us / window_us + 1e-9).floor() as usize;
    let (n_windows, partial) = match cfg.duration_s {
        Some(d) => {
            let want = (d / cfg.measure_window_s - 1e-9).ceil().max(1.0) as usize;
            (want.min(max_windows), want > max_windows)
        }
        None => (max_windows, false),
    };
    if n_windows == 0 {
        return Err(Error::TraceTooShort {
            needed: warmup + tail + (window_us / cfg.budget.slot_us).ceil() as usize,
            available: trace_len,
        });
    }
    Ok((
        Timing {
            run_start: warmup,
            slot_us: cfg.budget.slot_us,
            window_s: cfg.measure_window_s,
            n_windows,
        },
        partial,
    ))
}

pub fn run_simulation(env: &SimEnv, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let table = &env.table;
    let budget = cfg.budget;
    if (env.trace.slot_us - budget.slot_us).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "trace slot {} us differs from configured slot {} us",
            env.trace.slot_us,
            budget.slot_us
        )));
    }
    let mtxop = cfg.mtxop(table);
    let (timing, partial) = plan_timing(cfg, table, env.trace.len())?;
    let run_end = timing.run_end();
    let d = durations(&budget, table);
    let rssi = env.trace.rssi();

    let mut policy = build_policy(
        cfg.policy,
        &PolicyEnv {
            budget,
            table,
            mtxop,
            params: cfg.mac,
            oracle: env.sums.clone(),
            dl: env.dl.as_ref(),
            seed: cfg.seed,
        },
    )?;
    let mut arrivals = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p_arrival = (cfg.lambda_arrivals / mtxop as f64).min(1.0);

    let mut events = Vec::new();
    let mut reads = cfg.instrument.then(Vec::new);
    let mut fills = cfg.instrument.then(Vec::new);
    let (mut offered, mut delivered, mut failed, mut late) = (0u64, 0u64, 0u64, 0u64);
    let mut buffered = 0u64;
    let mut mcs_usage = [0u64; 9];
    let mut series_bits = vec![0u64; timing.n_windows];
    let mut on_air: Option<InFlight> = None;

    for slot in 0..run_end {
        if slot >= timing.run_start && p_arrival > 0.0 && arrivals.gen_bool(p_arrival) {
            offered += 1;
            buffered += 1;
            if cfg.record_events {
                events.push(Event {
                    slot,
                    kind: EventKind::Arrival,
                });
            }
        }
        let mut blind = false;
        if let Some(tx) = &on_air {
            if slot < tx.completion {
                check_conservation(offered, delivered, failed, buffered, 1 + late);
                continue;
            }
            let tx = on_air.take().unwrap();
            match timing.window_of(tx.completion) {
                Some(w) if tx.success => {
                    delivered += 1;
                    series_bits[w] += budget.payload_bits();
                }
                Some(_) => failed += 1,
                None => late += 1,
            }
            let fill = policy.on_result(tx.mcs, tx.success, tx.airtime)?;
            if let (Some(f), Some(log)) = (fill, fills.as_mut()) {
                log.push(f);
            }
            blind = true;
        }
        let mut sensor = if blind {
            Sensor::blind(slot)
        } else {
            Sensor::new(rssi, slot, reads.as_mut())
        };
        let decision = policy.on_slot(&mut sensor, buffered > 0)?;
        if let (PolicyDecision::Transmit(mcs), true) = (decision, buffered > 0) {
            let airtime = d[mcs as usize];
            let completion = slot + airtime;
            let success = env.sums.window(slot + 1, airtime).meets(table.mcs(mcs), &budget);
            buffered -= 1;
            mcs_usage[mcs as usize] += 1;
            if cfg.record_events {
                events.push(Event {
                    slot,
                    kind: EventKind::Transmit {
                        mcs,
                        airtime,
                        success,
                        completion,
                    },
                });
            }
            on_air = Some(InFlight {
                mcs,
                airtime,
                success,
                completion,
            });
        }
        check_conservation(offered, delivered, failed, buffered, on_air.is_some() as u64 + late);
    }

    let series: Vec<f64> = series_bits.iter().map(|&b| b as f64 / timing.window_s).collect();
    let delivered_bits = delivered * budget.payload_bits();
    Ok(SimResult {
        policy: cfg.policy,
        seed: cfg.seed,
        mean_throughput: delivered_bits as f64 / timing.measured_s(),
        throughput_series: series,
        offered,
        delivered,
        failed,
        buffered_at_end: buffered,
        in_flight_at_end: on_air.is_some() as u64 + late,
        delivered_bits,
        mcs_usage,
        partial,
        timing,
        events,
        trace_reads: reads,
        fills,
    })
}

fn check_conservation(offered: u64, delivered: u64, failed: u64, buffered: u64, in_flight: u64) {
    assert_eq!(
        offered,
        delivered + failed + buffered + in_flight,
        "packet conservation violated"
    );
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRun {
    pub policy: PolicyKind,
    pub seeds: Vec<u64>,
    pub run_means: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation of the run means (0 for a single run).
    pub std: f64,
    #[serde(skip)]
    pub runs: Vec<SimResult>,
}

pub fn run_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add(index as u64)
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `n_runs` runs whose seeds are `cfg.seed + i`.
pub fn multi_run(env: &SimEnv, cfg: &SimConfig, n_runs: usize) -> Result<MultiRun> {
    if n_runs == 0 {
        return Err(Error::InvalidArgument("n_runs must be >= 1".into()));
    }
    let mut runs = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let mut c = cfg.clone();
        c.seed = run_seed(cfg.seed, i);
        runs.push(run_simulation(env, &c)?);
    }
    let run_means: Vec<f64> = runs.iter().map(|r| r.mean_throughput).collect();
    let (mean, std) = mean_std(&run_means);
    Ok(MultiRun {
        policy: cfg.policy,
        seeds: runs.iter().map(|r| r.seed).collect(),
        run_means,
        mean,
        std,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub policy: PolicyKind,
    pub stats: MultiRun,
    /// Per-window throughput averaged over runs.
    pub mean_series: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub window_s: f64,
    /// Runs in which GOPT delivered less than another policy.
    pub dominance_violations: Vec<String>,
}

impl Comparison {
    pub fn row(&self, kind: PolicyKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == kind)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("policy,mean_bps,std_bps,runs\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.policy, r.stats.mean, r.stats.std, r.stats.run_means.len()).unwrap();
        }
        out
    }

    pub fn series_csv(&self) -> String {
        let mut out = String::from("policy,window,start_s,throughput_bps\n");
        for r in &self.rows {
            for (i, v) in r.mean_series.iter().enumerate() {
                writeln!(out, "{},{i},{},{v}", r.policy, i as f64 * self.window_s).unwrap();
            }
        }
        out
    }
}

/// Runs every policy with the same seeds, hence the same arrivals.
pub fn compare_policies(env: &SimEnv, policies: &[PolicyKind], cfg: &SimConfig, n_runs: usize) -> Result<Comparison> {
    let mut rows = Vec::with_capacity(policies.len());
    for &policy in policies {
        let mut c = cfg.clone();
        c.policy = policy;
        let stats = multi_run(env, &c, n_runs)?;
        let n_windows = stats.runs[0].throughput_series.len();
        let mean_series = (0..n_windows)
            .map(|w| stats.runs.iter().map(|r| r.throughput_series[w]).sum::<f64>() / n_runs as f64)
            .collect();
        rows.push(ComparisonRow {
            policy,
            stats,
            mean_series,
        });
    }
    let mut dominance_violations = Vec::new();
    for g in rows.iter().filter(|r| r.policy == PolicyKind::Gopt) {
        for r in rows.iter().filter(|r| r.policy != PolicyKind::Gopt) {
            for (a, b) in g.stats.runs.iter().zip(&r.stats.runs) {
                if a.delivered_bits < b.delivered_bits {
                    dominance_violations.push(format!(
                        "seed {}: gopt delivered {} bits, {} delivered {}",
                        a.seed, a.delivered_bits, r.policy, b.delivered_bits
                    ));
                }
            }
        }
    }
    Ok(Comparison {
        rows,
        window_s: cfg.measure_window_s,
        dominance_violations,
    })
}

/// Evaluation span that follows `train_s` seconds of `trace`, extended
/// backwards by the warm-up and forwards by the airtime tail so the whole
/// span can be measured.
pub fn evaluation_segment(
    trace: &SlotTrace,
    train_s: f64,
    eval_s: f64,
    cfg: &SimConfig,
    table: &McsTable,
) -> Result<SlotTrace> {
    let mtxop = cfg.mtxop(table);
    let warmup = cfg.warmup_slots.unwrap_or(3 * mtxop);
    let tail = mtxop.max(*durations(&cfg.budget, table).iter().max().unwrap());
    let n_train = trace.slots_for_seconds(train_s);
    // one spare slot so a span of whole windows never falls short by rounding
    let n_eval = trace.slots_for_seconds(eval_s) + 1;
    if n_train < warmup || n_train >= trace.len() {
        return Err(Error::TraceTooShort {
            needed: n_train.max(warmup) + 1,
            available: trace.len(),
        });
    }
    let end = (n_train + n_eval + tail).min(trace.len());
    Ok(trace.slice(n_train - warmup..end, "eval"))
}
