//! Scenario runner and operator surface for the synchrophasor analytics
//! engine.
//!
//! Exit codes: 0 success, 2 validation errors, 3 runtime failures, 4 unknown
//! streams/versions/use cases.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gridphasor_core::diag::{self, DiagError};
use gridphasor_core::pipeline::Registry;
use gridphasor_core::scenario::{
    export_plot, frames_from_store, run_scenario, Scenario, ScenarioError, REGISTRY_FILE,
};
use gridphasor_core::sim::{BranchKind, LoadModel, SimError, SwitchStatus};
use gridphasor_core::store::{Store, StoreError, StreamKey, VersionId};

/// Environment variable overriding the store directory.
const STORE_ENV: &str = "GRIDPHASOR_STORE";

#[derive(Parser)]
#[command(name = "gridphasor", version, about = "Distribution-grid synchrophasor analytics")]
struct Cli {
    /// Store directory (also via GRIDPHASOR_STORE).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Report format for stdout summaries.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end: simulate, ingest, distill, diagnose.
    Simulate(SimulateArgs),
    /// Insert points from a CSV file (timestamp_ns,value) into a stream.
    Ingest(IngestArgs),
    /// List registered distillers and lineage, or propagate pending work.
    Distill(DistillArgs),
    /// Run one diagnostic against stored streams.
    #[command(subcommand)]
    Diagnose(DiagnoseCmd),
    /// Check achieved statistics against an application's data requirements.
    CheckReqs(CheckReqsArgs),
    /// Export a stream as plot-ready CSV (raw or windowed statistics).
    ExportPlot(ExportPlotArgs),
    /// Show streams, versions and extents in the store.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario definition file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports and the run manifest.
    #[arg(long, default_value = "gridphasor-out")]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Target stream key, e.g. meter1/V_mag/a.
    #[arg(long)]
    stream: String,
    /// CSV file with timestamp_ns,value rows (no header).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    /// List distillers and their materialization log instead of running.
    #[arg(long)]
    list: bool,
}

#[derive(Subcommand)]
enum DiagnoseCmd {
    /// Match a candidate meter's phase labels against a reference meter.
    PhaseId(PhaseIdArgs),
    /// Vote among switch-status hypotheses.
    Topology(TopologyArgs),
    /// CUSUM change points on a stored scalar stream.
    SwitchTransition(SwitchTransitionArgs),
    /// Least-squares impedance of a line or transformer between two meters.
    Impedance(ImpedanceArgs),
    /// State estimation from stored meter snapshots.
    State(StateArgs),
    /// Kernel-PCA event detection over feature windows.
    Events(EventsArgs),
    /// Locate a fault from pre/during-fault windows.
    Fault(FaultArgs),
    /// Per-phase reverse power flow flags at a meter.
    ReverseFlow(ReverseFlowArgs),
}

#[derive(Args)]
struct WindowArgs {
    /// Window start, nanoseconds (default: everything).
    #[arg(long, default_value_t = i64::MIN / 4)]
    t0: i64,
    /// Window end, nanoseconds, exclusive.
    #[arg(long, default_value_t = i64::MAX / 4)]
    t1: i64,
}

#[derive(Args)]
struct PhaseIdArgs {
    #[arg(long)]
    reference: String,
    #[arg(long)]
    candidate: String,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args)]
struct TopologyArgs {
    /// Scenario file providing the feeder model.
    #[arg(long)]
    model: PathBuf,
    /// Hypotheses as id=sw1:closed,sw2:open (repeatable).
    #[arg(long = "hypothesis", required = true)]
    hypotheses: Vec<String>,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args)]
struct SwitchTransitionArgs {
    #[arg(long)]
    stream: String,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args)]
struct ImpedanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    branch: String,
    #[arg(long)]
    from_meter: String,
    #[arg(long)]
    to_meter: String,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args)]
struct StateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Meters to read voltage measurements from (comma separated).
    #[arg(long, value_delimiter = ',')]
    meters: Vec<String>,
    /// Snapshot instant in nanoseconds.
    #[arg(long, default_value_t = 0)]
    at: i64,
}

#[derive(Args)]
struct EventsArgs {
    #[arg(long)]
    meter: String,
    #[arg(long)]
    substation: String,
    #[arg(long)]
    train_t0: i64,
    #[arg(long)]
    train_t1: i64,
    #[arg(long)]
    test_t0: i64,
    #[arg(long)]
    test_t1: i64,
}

#[derive(Args)]
struct FaultArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    substation: String,
    #[arg(long)]
    pre_t0: i64,
    #[arg(long)]
    pre_t1: i64,
    #[arg(long)]
    during_t0: i64,
    #[arg(long)]
    during_t1: i64,
}

#[derive(Args)]
struct ReverseFlowArgs {
    #[arg(long)]
    meter: String,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args)]
struct CheckReqsArgs {
    #[arg(long)]
    tve: f64,
    #[arg(long)]
    latency_s: f64,
    #[arg(long, default_value_t = 120.0)]
    rate_hz: f64,
    #[arg(long)]
    use_case: String,
}

#[derive(Args)]
struct ExportPlotArgs {
    #[arg(long)]
    stream: String,
    #[arg(long, default_value_t = i64::MIN / 4)]
    t0: i64,
    #[arg(long, default_value_t = i64::MAX / 4)]
    t1: i64,
    /// Aggregate pointwidth (log2 ns); raw points when omitted.
    #[arg(long)]
    pointwidth: Option<u8>,
    #[arg(long)]
    version: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    stream: Option<String>,
}

fn store_dir(cli_store: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(dir) = cli_store {
        return Ok(dir.clone());
    }
    if let Ok(env) = std::env::var(STORE_ENV) {
        return Ok(PathBuf::from(env));
    }
    bail!("no store directory: pass --store or set {STORE_ENV}");
}

fn open_store(cli_store: &Option<PathBuf>) -> Result<(Store, PathBuf)> {
    let dir = store_dir(cli_store)?;
    let store = Store::open(&dir).with_context(|| format!("opening store {}", dir.display()))?;
    Ok((store, dir))
}

fn load_model(path: &PathBuf) -> Result<gridphasor_core::sim::FeederModel> {
    let (scenario, _) = Scenario::from_path(path)?;
    Ok(scenario.build_model()?)
}

fn pseudo_loads_of(
    model: &gridphasor_core::sim::FeederModel,
) -> BTreeMap<String, gridphasor_core::sim::CVec3> {
    model
        .loads
        .iter()
        .map(|(b, l)| {
            let s = match l {
                LoadModel::ConstantPower(s) => *s,
                _ => gridphasor_core::sim::CVec3::zeros(),
            };
            (b.clone(), s)
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

/// 2 = validation, 3 = runtime, 4 = not found.
fn classify(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(s) = cause.downcast_ref::<StoreError>() {
            return match s {
                StoreError::UnknownStream(_) | StoreError::UnknownVersion(..) => 4,
                StoreError::BatchConflict(_)
                | StoreError::InvalidPointwidth(_)
                | StoreError::InvalidRange(..)
                | StoreError::InvalidKey(_)
                | StoreError::OutOfRange(_)
                | StoreError::InvalidValue(_)
                | StoreError::VersionOrder(..) => 2,
                _ => 3,
            };
        }
        if let Some(s) = cause.downcast_ref::<ScenarioError>() {
            return match s {
                ScenarioError::Validation(_) => 2,
                ScenarioError::Store(StoreError::UnknownStream(_)) => 4,
                _ => 3,
            };
        }
        if let Some(d) = cause.downcast_ref::<DiagError>() {
            return match d {
                DiagError::UnknownUseCase(_) => 4,
                DiagError::InsufficientData { .. } => 2,
                _ => 3,
            };
        }
        if let Some(s) = cause.downcast_ref::<SimError>() {
            return match s {
                SimError::UnknownBus(_) | SimError::UnknownBranch(_) => 4,
                SimError::Diverged(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return 2;
        }
    }
    3
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => {
            let (scenario, hash) = Scenario::from_path(&args.scenario)?;
            let (store, dir) = open_store(&cli.store)?;
            let manifest = run_scenario(
                &scenario,
                &hash,
                &store,
                Some(dir.as_path()),
                &args.out,
                args.seed,
            )?;
            println!(
                "scenario {} complete: {} streams, {} reports, {} gaps",
                manifest.scenario_name,
                manifest.streams.len(),
                manifest.reports.len(),
                manifest.gap_count
            );
            for (stage, err) in &manifest.failures {
                eprintln!("warning: {stage} failed: {err}");
            }
            println!("manifest: {}", args.out.join("manifest.json").display());
            Ok(())
        }
        Command::Ingest(args) => {
            let (store, _) = open_store(&cli.store)?;
            let key: StreamKey = args.stream.parse()?;
            let text = std::fs::read_to_string(&args.input)
                .with_context(|| format!("reading {}", args.input.display()))?;
            let mut points = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (t, v) = line
                    .split_once(',')
                    .ok_or_else(|| anyhow!("line {}: expected timestamp_ns,value", lineno + 1))?;
                points.push((
                    t.trim().parse::<i64>().context("timestamp")?,
                    v.trim().parse::<f64>().context("value")?,
                ));
            }
            let version = store.insert(&key, &points)?;
            println!("{} points -> {} version {}", points.len(), key, version);
            Ok(())
        }
        Command::Distill(args) => {
            let (store, dir) = open_store(&cli.store)?;
            let reg_path = dir.join(REGISTRY_FILE);
            let mut registry = if reg_path.exists() {
                Registry::load(&reg_path)?
            } else {
                Registry::new()
            };
            if args.list {
                for spec in registry.specs() {
                    println!(
                        "{}: {:?} {} -> {} (kernel v{}, lag {} ns)",
                        spec.name,
                        spec.kernel,
                        spec.inputs
                            .iter()
                            .map(|k| k.canon())
                            .collect::<Vec<_>>()
                            .join("+"),
                        spec.output,
                        spec.kernel_version,
                        spec.lag_ns
                    );
                }
                for m in registry.log() {
                    println!(
                        "  {} consumed {:?} -> output v{} over {} range(s), {} failed chunk(s)",
                        m.distiller,
                        m.input_versions
                            .iter()
                            .map(|(k, v)| format!("{}@{v}", k.canon()))
                            .collect::<Vec<_>>(),
                        m.output_version,
                        m.recomputed.len(),
                        m.failed.len()
                    );
                }
                return Ok(());
            }
            let ms = registry.propagate(&store)?;
            registry.save(&reg_path)?;
            println!("{} distiller(s) materialized", ms.len());
            Ok(())
        }
        Command::Diagnose(cmd) => diagnose(cli, cmd),
        Command::CheckReqs(args) => {
            let use_case: diag::UseCase = args.use_case.parse()?;
            let report = diag::check_requirements(
                &diag::AchievedStats {
                    tve: args.tve,
                    latency_s: args.latency_s,
                    report_rate_hz: args.rate_hz,
                },
                use_case,
            );
            match cli.format {
                Format::Csv => {
                    println!("criterion,limit,achieved,pass,margin");
                    for c in &report.criteria {
                        println!(
                            "{},{},{},{},{}",
                            c.name, c.limit, c.achieved, c.pass, c.margin
                        );
                    }
                }
                Format::Text => {
                    println!(
                        "{}: {}",
                        report.use_case,
                        if report.pass { "PASS" } else { "FAIL" }
                    );
                    for c in &report.criteria {
                        println!(
                            "  {}: achieved {} vs limit {} -> {}",
                            c.name,
                            c.achieved,
                            c.limit,
                            if c.pass { "pass" } else { "fail" }
                        );
                    }
                }
            }
            if report.pass {
                Ok(())
            } else {
                bail!("requirements not met for {}", report.use_case)
            }
        }
        Command::ExportPlot(args) => {
            let (store, _) = open_store(&cli.store)?;
            let key: StreamKey = args.stream.parse()?;
            let csv = export_plot(
                &store,
                &key,
                args.t0,
                args.t1,
                args.pointwidth,
                args.version.map(VersionId),
            )?;
            match &args.out {
                Some(path) => {
                    std::fs::write(path, csv)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Inspect(args) => {
            let (store, dir) = open_store(&cli.store)?;
            match &args.stream {
                Some(s) => {
                    let key: StreamKey = s.parse()?;
                    let latest = store.latest_version(&key)?;
                    println!("stream {key}");
                    for v in 0..=latest.0 {
                        let extent = store.extent(&key, VersionId(v))?;
                        match extent {
                            Some((lo, hi)) => println!("  v{v}: [{lo}, {hi}] ns"),
                            None => println!("  v{v}: empty"),
                        }
                    }
                }
                None => {
                    println!("store {}", dir.display());
                    for (key, latest) in store.streams() {
                        let extent = store.extent(&key, latest)?;
                        match extent {
                            Some((lo, hi)) => {
                                println!("  {key} v{latest} [{lo}, {hi}] ns")
                            }
                            None => println!("  {key} v{latest} empty"),
                        }
                    }
                }
            }
            Ok(())
        }
    }
}

fn diagnose(cli: &Cli, cmd: &DiagnoseCmd) -> Result<()> {
    let (store, _) = open_store(&cli.store)?;
    match cmd {
        DiagnoseCmd::PhaseId(a) => {
            let rf = frames_from_store(&store, &a.reference, a.window.t0, a.window.t1)?;
            let cf = frames_from_store(&store, &a.candidate, a.window.t0, a.window.t1)?;
            let assignment = diag::identify_phase(
                &a.candidate,
                &diag::ThreePhaseSeries::from_frames(&rf),
                &diag::ThreePhaseSeries::from_frames(&cf),
                &diag::PhaseIdOptions::default(),
            )?;
            println!(
                "{}: a->{} b->{} c->{} offset {} deg score {:.4}",
                a.candidate,
                ["a", "b", "c"][assignment.mapping[0]],
                ["a", "b", "c"][assignment.mapping[1]],
                ["a", "b", "c"][assignment.mapping[2]],
                assignment.offset_deg,
                assignment.score
            );
            Ok(())
        }
        DiagnoseCmd::Topology(a) => {
            let model = load_model(&a.model)?;
            let mut hypotheses = Vec::new();
            for h in &a.hypotheses {
                let (id, switches) = h
                    .split_once('=')
                    .ok_or_else(|| anyhow!("hypothesis format: id=sw:closed,sw2:open"))?;
                let mut status = BTreeMap::new();
                for part in switches.split(',') {
                    let (name, st) = part
                        .split_once(':')
                        .ok_or_else(|| anyhow!("switch format: name:open|closed"))?;
                    let st = match st {
                        "open" => SwitchStatus::Open,
                        "closed" => SwitchStatus::Closed,
                        other => bail!("unknown switch status {other:?}"),
                    };
                    status.insert(name.to_string(), st);
                }
                hypotheses.push(diag::TopologyHypothesis {
                    id: id.to_string(),
                    switch_status: status,
                });
            }
            let mut frames = BTreeMap::new();
            for meter in &model.meters {
                frames.insert(
                    meter.clone(),
                    frames_from_store(&store, meter, a.window.t0, a.window.t1)?,
                );
            }
            let outcome = diag::detect_topology_voting(
                &model,
                &hypotheses,
                &frames,
                &pseudo_loads_of(&model),
                &diag::VotingOptions::default(),
            )?;
            println!("winner: {}", outcome.winner);
            for (id, share) in &outcome.shares {
                println!("  {id}: {:.1}%", share * 100.0);
            }
            Ok(())
        }
        DiagnoseCmd::SwitchTransition(a) => {
            let key: StreamKey = a.stream.parse()?;
            let v = store.latest_version(&key)?;
            let series = store.query_raw(&key, a.window.t0, a.window.t1, v)?;
            let cps = diag::detect_switch_transition(&series, &diag::CusumParams::default())?;
            println!("{} change point(s)", cps.len());
            for t in cps {
                println!("  {t}");
            }
            Ok(())
        }
        DiagnoseCmd::Impedance(a) => {
            let model = load_model(&a.model)?;
            let f1 = frames_from_store(&store, &a.from_meter, a.window.t0, a.window.t1)?;
            let f2 = frames_from_store(&store, &a.to_meter, a.window.t0, a.window.t1)?;
            let est = match &model.branch(&a.branch)?.kind {
                BranchKind::Line(l) => diag::estimate_line_impedance(
                    &f1,
                    &f2,
                    &diag::ImpedanceOptions {
                        branch: a.branch.clone(),
                        truth: Some(l.z),
                        ..Default::default()
                    },
                )?,
                BranchKind::Transformer(t) => diag::estimate_transformer_impedance(
                    &f1,
                    &f2,
                    t.n_t,
                    &diag::ImpedanceOptions {
                        branch: a.branch.clone(),
                        truth: Some(gridphasor_core::sim::CMat3::from_diagonal(&t.z_abc)),
                        ..Default::default()
                    },
                )?,
                BranchKind::Switch(_) => bail!("branch {} is a switch", a.branch),
            };
            println!(
                "branch {}: condition {:.3e}{}",
                est.branch,
                est.condition_metric,
                est.relative_error_norm
                    .map(|e| format!(", relative error {e:.3e}"))
                    .unwrap_or_default()
            );
            for r in 0..3 {
                println!(
                    "  {:+.4}{:+.4}j  {:+.4}{:+.4}j  {:+.4}{:+.4}j",
                    est.z_hat[(r, 0)].re,
                    est.z_hat[(r, 0)].im,
                    est.z_hat[(r, 1)].re,
                    est.z_hat[(r, 1)].im,
                    est.z_hat[(r, 2)].re,
                    est.z_hat[(r, 2)].im
                );
            }
            Ok(())
        }
        DiagnoseCmd::State(a) => {
            let model = load_model(&a.model)?;
            let mut meas = Vec::new();
            for m in &a.meters {
                let frames = frames_from_store(&store, m, a.at, i64::MAX / 4)?;
                let f = frames
                    .first()
                    .ok_or_else(|| anyhow!("no frames for {m} at or after {}", a.at))?;
                meas.push(diag::VoltageMeasurement {
                    bus: m.clone(),
                    phasors: f.voltage,
                });
            }
            let pseudo: Vec<diag::InjectionPseudo> = model
                .loads
                .iter()
                .filter_map(|(b, l)| match l {
                    LoadModel::ConstantPower(s) => Some(diag::InjectionPseudo {
                        bus: b.clone(),
                        s_va: -s,
                        sigma_va: 0.05 * model.s_base / 3.0,
                    }),
                    _ => None,
                })
                .collect();
            let est = diag::linear_state_estimate(
                &model,
                &meas,
                &pseudo,
                &diag::MeasurementNoise::default(),
                &diag::SePriors::default(),
            )?;
            for (bus, v) in est.buses.iter().zip(&est.voltages) {
                println!(
                    "{bus}: |V| = ({:.1}, {:.1}, {:.1}) V  ang = ({:+.3}, {:+.3}, {:+.3}) deg",
                    v.a.magnitude(),
                    v.b.magnitude(),
                    v.c.magnitude(),
                    v.a.angle().to_degrees(),
                    v.b.angle().to_degrees(),
                    v.c.angle().to_degrees()
                );
            }
            Ok(())
        }
        DiagnoseCmd::Events(a) => {
            let mtr = frames_from_store(&store, &a.meter, a.train_t0, a.train_t1)?;
            let str_ = frames_from_store(&store, &a.substation, a.train_t0, a.train_t1)?;
            let mte = frames_from_store(&store, &a.meter, a.test_t0, a.test_t1)?;
            let ste = frames_from_store(&store, &a.substation, a.test_t0, a.test_t1)?;
            let train = diag::build_feature_windows(&mtr, &str_, 10);
            let test = diag::build_feature_windows(&mte, &ste, 10);
            let flags = diag::detect_events_kpca(&train, &test, &diag::KpcaOptions::default())?;
            match cli.format {
                Format::Csv => {
                    println!("window_start_ns,window_end_ns,score,is_anomaly");
                    for f in &flags {
                        println!("{},{},{},{}", f.start_ns, f.end_ns, f.score, f.is_anomaly);
                    }
                }
                Format::Text => {
                    let n = flags.iter().filter(|f| f.is_anomaly).count();
                    println!("{n} of {} windows flagged", flags.len());
                    for f in flags.iter().filter(|f| f.is_anomaly) {
                        println!("  [{}, {}) score {:.4}", f.start_ns, f.end_ns, f.score);
                    }
                }
            }
            Ok(())
        }
        DiagnoseCmd::Fault(a) => {
            let model = load_model(&a.model)?;
            let mut pre = BTreeMap::new();
            let mut during = BTreeMap::new();
            for meter in &model.meters {
                let pf = frames_from_store(&store, meter, a.pre_t0, a.pre_t1)?;
                let df = frames_from_store(&store, meter, a.during_t0, a.during_t1)?;
                if let Some(f) = diag::average_frames(&pf) {
                    pre.insert(meter.clone(), f);
                }
                if let Some(f) = diag::average_frames(&df) {
                    during.insert(meter.clone(), f);
                }
            }
            let loc = diag::locate_fault(
                &model,
                &pre,
                &during,
                &a.substation,
                &diag::FaultLocateOptions::default(),
            )?;
            println!(
                "fault on {} at {:.1}% of length (mismatch {:.3e})",
                loc.branch,
                loc.distance_fraction * 100.0,
                loc.mismatch
            );
            Ok(())
        }
        DiagnoseCmd::ReverseFlow(a) => {
            let model = load_model(&a.model)?;
            let frames = frames_from_store(&store, &a.meter, a.window.t0, a.window.t1)?;
            let flags = diag::detect_reverse_flow(
                &frames,
                model.s_base / 3.0,
                diag::DEFAULT_REVERSE_DEADBAND_PU,
            );
            let reversed = flags.iter().filter(|f| f.iter().any(|p| *p)).count();
            println!(
                "{reversed} of {} frames show reverse flow on at least one phase",
                flags.len()
            );
            Ok(())
        }
    }
}
