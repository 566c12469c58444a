use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dlmac_core::dataset::{build_dataset, class_histogram};
use dlmac_core::experiment::{train_policy, TrainPlan};
use dlmac_core::mac::PolicyKind;
use dlmac_core::nn::{load_model, save_model};
use dlmac_core::phy::{LinkBudget, McsTable};
use dlmac_core::sim::{compare_policies, evaluation_segment, run_simulation, Comparison, SimConfig, SimEnv};
use dlmac_core::trace::{
    generate_synthetic, load_raw, preprocess, Interferer, Origin, RawFormat, SlotTrace, SyntheticScenario,
};
use dlmac_core::Error;

#[derive(Parser)]
#[command(name = "dlmac", version, about = "Trace-driven MAC simulation with a learned access policy")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Raw spectrum capture to a per-slot channel trace.
    Preprocess(PreprocessArgs),
    /// Synthetic periodic-interferer trace.
    Generate(GenerateArgs),
    /// Labeled example set from a slot trace.
    Label(LabelArgs),
    /// Train the access policy on one or more traces (several = fusion).
    Train(TrainArgs),
    /// Single simulation run.
    Simulate(SimulateArgs),
    /// Policy comparison over seeds, optionally over several eval traces.
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct LinkArgs {
    /// MTXOP in slots (default: MCS 0 airtime).
    #[arg(long)]
    mtxop: Option<usize>,
    /// Payload size in bytes.
    #[arg(long, default_value_t = 1500)]
    payload: u32,
    /// Mini-slot length in microseconds.
    #[arg(long, default_value_t = 9.0)]
    slot_us: f64,
}

impl LinkArgs {
    fn budget(&self) -> LinkBudget {
        LinkBudget {
            payload_bytes: self.payload,
            slot_us: self.slot_us,
            ..LinkBudget::default()
        }
    }
}

#[derive(Args, Clone)]
struct RawArgs {
    /// Raw capture sample interval in microseconds.
    #[arg(long, default_value_t = 100.0)]
    sample_us: f64,
    /// Frequency of the first raw sub-band column in MHz.
    #[arg(long, default_value_t = 2400)]
    band_start: i32,
    #[arg(long, default_value_t = 83)]
    subbands: usize,
}

impl RawArgs {
    fn format(&self) -> RawFormat {
        RawFormat {
            sample_interval_us: self.sample_us,
            band_start_mhz: self.band_start,
            n_subbands: self.subbands,
        }
    }
}

/// Slot traces given as files or as channels of one raw capture.
#[derive(Args, Clone)]
struct TraceSource {
    /// Slot trace file (.csv or binary); repeatable.
    #[arg(long)]
    trace: Vec<PathBuf>,
    /// Raw capture; one trace is derived per --channel.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// 2.4 GHz channel (1-13); repeatable.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=13))]
    channel: Vec<u8>,
    #[command(flatten)]
    raw_format: RawArgs,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    raw: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=13))]
    channel: u8,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 9.0)]
    slot_us: f64,
    #[command(flatten)]
    raw_format: RawArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scenario TOML; replaces the interferer flags below.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 72.0)]
    seconds: f64,
    #[arg(long, default_value_t = -95.0, allow_hyphen_values = true)]
    noise: f64,
    #[arg(long, default_value_t = 400)]
    period: usize,
    #[arg(long, default_value_t = 0.5)]
    duty: f64,
    #[arg(long, default_value_t = -60.0, allow_hyphen_values = true)]
    power: f64,
    #[arg(long, default_value_t = 0)]
    jitter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 9.0)]
    slot_us: f64,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Output file; `.csv` writes the readable export, anything else binary.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    #[command(flatten)]
    link: LinkArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: TraceSource,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Training history CSV (default: next to the model).
    #[arg(long)]
    history: Option<PathBuf>,
    /// `TRAIN_S[:EVAL_S]`; only the first TRAIN_S seconds of each trace are used.
    #[arg(long, value_parser = parse_split)]
    split: Option<(f64, f64)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Divide hidden widths by this.
    #[arg(long, default_value_t = 1)]
    width_divisor: usize,
    /// Training examples drawn per epoch (0 = all).
    #[arg(long, default_value_t = 16_384)]
    per_epoch: usize,
    #[command(flatten)]
    link: LinkArgs,
}

#[derive(Args)]
struct SimArgs {
    /// Simulation config TOML; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Expected packet arrivals per MTXOP.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mtxop: Option<usize>,
    #[arg(long)]
    payload: Option<u32>,
    /// Throughput window in seconds.
    #[arg(long)]
    window: Option<f64>,
    /// `TRAIN_S:EVAL_S`; simulate the span after the training prefix.
    #[arg(long, value_parser = parse_split)]
    split: Option<(f64, f64)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    #[command(flatten)]
    sim: SimArgs,
    /// Per-packet event log CSV.
    #[arg(long)]
    event_log: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: TraceSource,
    /// Policy to run; repeatable (default: all).
    #[arg(long)]
    policy: Vec<PolicyKind>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[command(flatten)]
    sim: SimArgs,
}

fn parse_split(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').unwrap_or((s, "0"));
    let train: f64 = a.trim().parse().map_err(|_| format!("bad training length `{a}`"))?;
    let eval: f64 = b.trim().parse().map_err(|_| format!("bad evaluation length `{b}`"))?;
    if !(train > 0.0 && eval >= 0.0) {
        return Err("need TRAIN_S > 0 and EVAL_S >= 0".into());
    }
    Ok((train, eval))
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidChannel(_) | Error::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Run(e),
        }
    }
}

/// Report line printed on success.
type CmdResult = Result<String, Failure>;

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Run(io_err(dir, e)))?;
    }
    fs::write(path, text).map_err(|e| Failure::Run(io_err(path, e)))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loaded traces with a short label each.
fn load_traces(src: &TraceSource, slot_us: f64) -> Result<Vec<(String, SlotTrace)>, Failure> {
    let mut out = Vec::new();
    for p in &src.trace {
        let label = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into());
        out.push((label, SlotTrace::load(p, slot_us)?));
    }
    match (&src.raw, src.channel.is_empty()) {
        (Some(raw_path), false) => {
            let raw = load_raw(raw_path, &src.raw_format.format())?;
            for &ch in &src.channel {
                let origin = Origin::File(raw_path.display().to_string());
                out.push((format!("ch{ch}"), preprocess(&raw, ch, slot_us, origin)?));
            }
        }
        (Some(_), true) => return Err(Failure::Usage("--raw needs at least one --channel".into())),
        (None, false) => return Err(Failure::Usage("--channel needs --raw".into())),
        (None, true) => {}
    }
    if out.is_empty() {
        return Err(Failure::Usage("no input: give --trace or --raw with --channel".into()));
    }
    Ok(out)
}

fn summarize(trace: &SlotTrace) -> String {
    let v = trace.rssi();
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f32::INFINITY, f32::min);
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    format!(
        "{} slots ({:.3} s), rssi mean {mean:.2} dBm, min {min:.2}, max {max:.2}",
        v.len(),
        trace.duration_s()
    )
}

fn cmd_preprocess(a: PreprocessArgs) -> CmdResult {
    let raw = load_raw(&a.raw, &a.raw_format.format())?;
    let trace = preprocess(&raw, a.channel, a.slot_us, Origin::File(a.raw.display().to_string()))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Run(io_err(dir, e)))?;
    }
    trace.save(&a.out)?;
    Ok(format!("channel {}: {}", a.channel, summarize(&trace)))
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let scenario = match &a.scenario {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Run(io_err(p, e)))?;
            toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => SyntheticScenario {
            noise_floor_dbm: a.noise,
            interferers: vec![Interferer {
                period_slots: a.period,
                duty_cycle: a.duty,
                power_dbm: a.power,
                jitter_slots: a.jitter,
            }],
            duration_slots: (a.seconds * 1e6 / a.slot_us).round() as usize,
            seed: a.seed,
        },
    };
    let trace = generate_synthetic(&scenario, a.slot_us)?;
    trace.save(&a.out)?;
    Ok(summarize(&trace))
}

fn cmd_label(a: LabelArgs) -> CmdResult {
    let budget = a.link.budget();
    let table = McsTable::default();
    let trace = SlotTrace::load(&a.trace, budget.slot_us)?;
    let mtxop = a.link.mtxop.unwrap_or_else(|| budget.mtxop_slots(&table));
    let ds = build_dataset(&trace, &budget, &table, mtxop, a.stride)?;
    if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        ds.export_csv(&a.out)?;
    } else {
        ds.save(&a.out)?;
    }
    let hist = class_histogram(&ds);
    let counts: Vec<String> = (-1..=8).map(|l| format!("{l}:{}", hist.get(l))).collect();
    Ok(format!("{} examples, window {} slots; labels {}", ds.len(), ds.window_len(), counts.join(" ")))
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let table = McsTable::default();
    let mut traces: Vec<SlotTrace> = load_traces(&a.source, a.link.slot_us)?.into_iter().map(|(_, t)| t).collect();
    if let Some((train_s, _)) = a.split {
        for t in &mut traces {
            let n = t.slots_for_seconds(train_s);
            if n > t.len() {
                return Err(Error::TraceTooShort {
                    needed: n,
                    available: t.len(),
                }
                .into());
            }
            *t = t.slice(0..n, "train");
        }
    }
    let plan = TrainPlan {
        budget: a.link.budget(),
        mtxop_slots: a.link.mtxop,
        stride: a.stride,
        width_divisor: a.width_divisor,
        model_seed: a.seed,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        max_examples_per_epoch: (a.per_epoch > 0).then_some(a.per_epoch),
        ..TrainPlan::default()
    };
    let trained = train_policy(&traces, &plan, &table)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Run(io_err(dir, e)))?;
    }
    save_model(&trained.model, &a.out)?;
    let history = a.history.unwrap_or_else(|| a.out.with_extension("history.csv"));
    write(&history, &trained.history.to_csv())?;
    let best = trained.history.best().or(trained.history.epochs.last());
    Ok(format!(
        "{} train / {} val examples; val accuracy {:.4} (epoch {})",
        trained.n_train,
        trained.n_val,
        best.map_or(0.0, |r| r.val_acc),
        best.map_or(0, |r| r.epoch)
    ))
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => SimConfig::load(p)?,
            None => SimConfig::default(),
        };
        if self.model.is_some() {
            cfg.model = self.model.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(l) = self.lambda {
            cfg.lambda_arrivals = l;
        }
        if self.mtxop.is_some() {
            cfg.mtxop_slots = self.mtxop;
        }
        if let Some(p) = self.payload {
            cfg.budget.payload_bytes = p;
        }
        if let Some(w) = self.window {
            cfg.measure_window_s = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn env(&self, cfg: &SimConfig, trace: SlotTrace, needs_model: bool) -> Result<SimEnv, Failure> {
        let table = match &cfg.mcs_table {
            Some(p) => McsTable::load(p)?,
            None => McsTable::default(),
        };
        let trace = match self.split {
            Some((train_s, eval_s)) => evaluation_segment(&trace, train_s, eval_s, cfg, &table)?,
            None => trace,
        };
        let model = match &cfg.model {
            Some(p) => Some(load_model(p)?),
            None if needs_model => return Err(Failure::Usage("DL policies need --model".into())),
            None => None,
        };
        Ok(SimEnv::new(trace, table, model.as_ref()))
    }

    /// Measured span for a `--split` run: the evaluation length unless the
    /// config fixes one.
    fn apply_split(&self, cfg: &mut SimConfig) {
        if let Some((_, eval_s)) = self.split {
            if eval_s > 0.0 && cfg.duration_s.is_none() {
                cfg.duration_s = Some(eval_s);
            }
        }
    }
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let mut cfg = a.sim.config()?;
    if let Some(p) = a.policy {
        cfg.policy = p;
    }
    if a.trace.is_some() {
        cfg.trace = a.trace.clone();
    }
    a.sim.apply_split(&mut cfg);
    cfg.record_events = a.event_log.is_some();
    let path = cfg.trace.clone().ok_or_else(|| Failure::Usage("no trace: give --trace or set it in --config".into()))?;
    let trace = SlotTrace::load(&path, cfg.budget.slot_us)?;
    let env = a.sim.env(&cfg, trace, cfg.policy.uses_model())?;
    let result = run_simulation(&env, &cfg)?;
    write(&a.sim.out.join("summary.toml"), &result.summary_toml())?;
    write(&a.sim.out.join("series.csv"), &result.series_csv())?;
    if let Some(p) = &a.event_log {
        write(p, &result.events_csv())?;
    }
    if result.partial {
        eprintln!("warning: trace too short for the requested duration, measured {} s", result.timing.measured_s());
    }
    Ok(format!(
        "{}: mean throughput {:.0} b/s over {} windows; offered {}, delivered {}, failed {}",
        result.policy,
        result.mean_throughput,
        result.throughput_series.len(),
        result.offered,
        result.delivered,
        result.failed
    ))
}

/// Wide table, one row per evaluation trace and a mean/std column pair per policy.
fn channels_csv(results: &[(String, Comparison)], policies: &[PolicyKind]) -> String {
    let mut out = String::from("eval");
    for p in policies {
        out.push_str(&format!(",{p}_mean_bps,{p}_std_bps"));
    }
    out.push('\n');
    for (label, cmp) in results {
        out.push_str(label);
        for r in &cmp.rows {
            out.push_str(&format!(",{},{}", r.stats.mean, r.stats.std));
        }
        out.push('\n');
    }
    out
}

fn cmd_compare(a: CompareArgs) -> CmdResult {
    if a.runs == 0 {
        return Err(Failure::Usage("--runs must be >= 1".into()));
    }
    let mut cfg = a.sim.config()?;
    a.sim.apply_split(&mut cfg);
    cfg.record_events = false;
    let policies = if a.policy.is_empty() { PolicyKind::ALL.to_vec() } else { a.policy.clone() };
    let needs_model = policies.iter().any(|p| p.uses_model());
    let traces = load_traces(&a.source, cfg.budget.slot_us)?;
    let multi = traces.len() > 1;
    let mut results = Vec::with_capacity(traces.len());
    let mut report = Vec::new();
    for (label, trace) in traces {
        let env = a.sim.env(&cfg, trace, needs_model)?;
        let cmp = compare_policies(&env, &policies, &cfg, a.runs)?;
        let dir = if multi { a.sim.out.join(&label) } else { a.sim.out.clone() };
        write(&dir.join("summary.csv"), &cmp.summary_csv())?;
        write(&dir.join("series.csv"), &cmp.series_csv())?;
        for r in &cmp.rows {
            report.push(format!("{label} {:<12} {:>12.0} +- {:.0} b/s", r.policy.to_string(), r.stats.mean, r.stats.std));
        }
        for v in &cmp.dominance_violations {
            eprintln!("warning: {label}: {v}");
        }
        results.push((label, cmp));
    }
    if multi {
        write(&a.sim.out.join("channels.csv"), &channels_csv(&results, &policies))?;
    }
    Ok(report.join("\n"))
}

/// Exit code and the text for stdout (success) or stderr (failure).
fn run<I, T>(args: I) -> (u8, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            return (code, e.render().to_string());
        }
    };
    let out = match cli.cmd {
        Cmd::Preprocess(a) => cmd_preprocess(a),
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Label(a) => cmd_label(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Compare(a) => cmd_compare(a),
    };
    match out {
        Ok(report) => (0, report),
        Err(Failure::Usage(msg)) => (2, format!("error: {msg}")),
        Err(Failure::Run(e)) => (1, format!("error: {e}")),
    }
}

fn main() -> ExitCode {
    let (code, text) = run(std::env::args_os());
    if code == 0 {
        println!("{}", text.trim_end());
    } else {
        eprintln!("{}", text.trim_end());
    }
    ExitCode::from(code)
}

#[cfg(test)]
mod tests;
