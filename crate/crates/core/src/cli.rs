//! CLI subcommands: scenario runs, calibration, parameter sweeps, and
//! CSV/JSON emission. Output layouts are documented in FORMATS.md.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::channel::Channel;
use crate::error::{Result, SimError};
use crate::fuzzy::{run_fuzzy, Calibration};
use crate::metrics::{
    fuzzy_travel_time, fuzzy_vehicle_count, measure_stationary, op_cost_report,
    queue_discharge_trace, saturated_queue_positions, ArterialObserver, CrossingCounter,
    SweepModel, TrajectoryLog, VehicleCountObserver,
};
use crate::nasch::{child_seed, percentiles, run_ensemble, run_ensemble_with, Ensemble,
    EnsembleConfig, RunObserver, RNG_ALGORITHM};
use crate::rules::{NaschParams, RuleTable, TableEntries};
use crate::scenario::ConfigFile;
use crate::tfn::TriangularFuzzy;

/// Interval between vehicle-count samples, in steps (= seconds).
const COUNT_SAMPLE_EVERY: u64 = 60;

#[derive(Parser)]
#[command(name = "fcasim", version, about = "Single-lane traffic microsimulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Release a standing queue under a deterministic rule and report the
    /// stationary regime
    Discharge(DischargeArgs),
    /// Run the fuzzy engine over a configured scenario
    SimulateFuzzy(SimulateFuzzyArgs),
    /// Run a seeded NaSch ensemble over a configured scenario
    SimulateNasch(SimulateNaschArgs),
    /// Compute the calibration triple for a fuzzy saturation flow
    Calibrate(CalibrateArgs),
    /// Saturation-flow distribution versus deceleration probability
    SweepP(SweepPArgs),
    /// Flow-density diagram on a periodic ring
    FundamentalDiagram(FdArgs),
    /// Operation counts and wall-clock comparison of both engines
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct DischargeArgs {
    /// Rule name: R1, R2, or a custom rule defined in --config
    #[arg(long)]
    rule: String,
    /// Number of queued vehicles
    #[arg(long)]
    queue: usize,
    /// Steps to simulate
    #[arg(long)]
    steps: u64,
    /// Config file providing custom rule tables
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the cell-state trace CSV (t, cell, state) here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateFuzzyArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct SimulateNaschArgs {
    #[arg(long)]
    config: PathBuf,
    /// Ensemble size K
    #[arg(long, default_value_t = 500)]
    runs: u64,
    /// Master seed; per-run seeds are derived from it
    #[arg(long, env = "FCASIM_SEED", default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Saturation flow components in veh/h, ascending
    #[arg(long)]
    s1: f64,
    #[arg(long)]
    s2: f64,
    #[arg(long)]
    s3: f64,
    #[arg(long = "ruleL", default_value = "R1")]
    rule_l: String,
    #[arg(long = "ruleH", default_value = "R2")]
    rule_h: String,
    /// Config file providing custom rule tables
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepPArgs {
    #[arg(long, default_value_t = 0.0)]
    from: f64,
    #[arg(long, default_value_t = 0.8)]
    to: f64,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Ensemble size K per probability value
    #[arg(long, default_value_t = 100)]
    runs: u64,
    /// Measurement horizon in steps
    #[arg(long, default_value_t = 600)]
    steps: u64,
    /// Queue length; 0 sizes the queue so it cannot exhaust
    #[arg(long, default_value_t = 0)]
    queue: usize,
    #[arg(long, default_value_t = 2)]
    v_max: i64,
    #[arg(long, env = "FCASIM_SEED", default_value_t = 42)]
    seed: u64,
    /// Output CSV (p, median, p05, p95, spread); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FdArgs {
    /// fuzzy or nasch
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0.02)]
    from: f64,
    #[arg(long, default_value_t = 1.0)]
    to: f64,
    #[arg(long, default_value_t = 0.02)]
    step: f64,
    #[arg(long, default_value_t = 1000)]
    ring: i64,
    #[arg(long, default_value_t = 1000)]
    warmup: u64,
    #[arg(long, default_value_t = 1000)]
    measure: u64,
    /// NaSch deceleration probability
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    #[arg(long, default_value_t = 2)]
    v_max: i64,
    /// Fuzzy saturation flow components in veh/h
    #[arg(long, default_value_t = 1503.0)]
    s1: f64,
    #[arg(long, default_value_t = 1575.0)]
    s2: f64,
    #[arg(long, default_value_t = 1638.0)]
    s3: f64,
    #[arg(long = "ruleL", default_value = "R1")]
    rule_l: String,
    #[arg(long = "ruleH", default_value = "R2")]
    rule_h: String,
    #[arg(long, env = "FCASIM_SEED", default_value_t = 42)]
    seed: u64,
    /// Output CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Fuzzy-model config describing the scenario
    #[arg(long)]
    config: PathBuf,
    /// NaSch ensemble size K
    #[arg(long, default_value_t = 500)]
    runs: u64,
    /// NaSch deceleration probability for the comparison ensemble
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    #[arg(long, default_value_t = 2)]
    v_max: i64,
    #[arg(long, env = "FCASIM_SEED", default_value_t = 42)]
    seed: u64,
}

pub fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Discharge(a) => discharge(&a),
        Cmd::SimulateFuzzy(a) => simulate_fuzzy(&a),
        Cmd::SimulateNasch(a) => simulate_nasch(&a),
        Cmd::Calibrate(a) => calibrate(&a),
        Cmd::SweepP(a) => sweep_p(&a),
        Cmd::FundamentalDiagram(a) => fundamental_diagram(&a),
        Cmd::Benchmark(a) => benchmark(&a),
    }
}

fn load_config(path: &Path) -> Result<ConfigFile> {
    ConfigFile::from_json(&fs::read_to_string(path)?)
}

fn custom_rules(path: Option<&PathBuf>) -> Result<BTreeMap<String, TableEntries>> {
    Ok(match path {
        Some(p) => load_config(p)?.custom_rules,
        None => BTreeMap::new(),
    })
}

/// Builtin rule, or a custom table whose stationary regime is measured by
/// queue-discharge simulation.
fn resolve_rule(name: &str, custom: &BTreeMap<String, TableEntries>) -> Result<RuleTable> {
    match custom.get(name) {
        Some(entries) => measure_stationary(name, *entries),
        None => RuleTable::builtin(name),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn emit_json(path: Option<&str>, value: &serde_json::Value) -> Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, format!("{:#}\n", value))?),
        None => print_json(value),
    }
}

fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn discharge(a: &DischargeArgs) -> Result<()> {
    let rule = resolve_rule(&a.rule, &custom_rules(a.config.as_ref())?)?;
    let trace = queue_discharge_trace(&rule, a.queue, a.steps)?;
    if let Some(path) = &a.out {
        let mut w = csv_writer(Some(path))?;
        w.write_record(["t", "cell", "state"])?;
        for (t, row) in trace.cells.iter().enumerate() {
            for (cell, &state) in row.iter().enumerate() {
                w.write_record([t.to_string(), cell.to_string(), state.to_string()])?;
            }
        }
        w.flush()?;
    }
    let steady = trace.steady.map(|s| {
        json!({
            "v_max": s.v_max,
            "gap": s.gap,
            "saturation_flow_veh_step": s.flow_veh_step,
            "saturation_flow_veh_h": s.flow_veh_step * 3600.0,
        })
    });
    print_json(&json!({
        "rule": rule.name(),
        "queue": a.queue,
        "steps": a.steps,
        "steady": steady,
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

fn fuzzy_calibration(cfg: &ConfigFile) -> Result<Calibration> {
    match &cfg.model {
        crate::scenario::ModelSpec::Fuzzy { rule_l, rule_h, saturation_flow_veh_h } => {
            Calibration::from_saturation(
                *saturation_flow_veh_h,
                resolve_rule(rule_l, &cfg.custom_rules)?,
                resolve_rule(rule_h, &cfg.custom_rules)?,
            )
        }
        _ => Err(SimError::Config("config model must be \"fuzzy\"".to_string())),
    }
}

fn nasch_params(cfg: &ConfigFile) -> Result<NaschParams> {
    match &cfg.model {
        crate::scenario::ModelSpec::Nasch { v_max, p } => NaschParams::new(*v_max, *p),
        _ => Err(SimError::Config("config model must be \"nasch\"".to_string())),
    }
}

fn write_trajectory_csv(path: &str, log: &TrajectoryLog) -> Result<()> {
    let mut w = csv_writer(Some(Path::new(path)))?;
    w.write_record(["t", "vehicle", "channel", "position", "velocity"])?;
    for (t, snap) in log.snapshots.iter().enumerate() {
        for (ci, ch) in snap.iter().enumerate() {
            let name = &log.channel_names[ci];
            for i in 0..ch.positions.len() {
                w.write_record([
                    t.to_string(),
                    i.to_string(),
                    name.clone(),
                    ch.positions[i].to_string(),
                    ch.velocities[i].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate_fuzzy(a: &SimulateFuzzyArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let cal = fuzzy_calibration(&cfg)?;
    let scenario = cfg.scenario()?;
    let log = run_fuzzy(&scenario, &cal)?;

    if let Some(path) = &cfg.output.trajectory_csv {
        write_trajectory_csv(path, &log)?;
    }

    let travel_time = match (scenario.vehicle_count(), scenario.final_stop_cell()) {
        (n, Some(stop)) if n > 0 => {
            match fuzzy_travel_time(&log, scenario.last_vehicle_index(), stop) {
                Ok(tt) => Some(tt.components().to_vec()),
                Err(SimError::NeverArrived { .. }) => None,
                Err(e) => return Err(e),
            }
        }
        _ => None,
    };
    let counts: Vec<serde_json::Value> = match scenario.final_stop_cell() {
        Some(stop) => (0..=scenario.steps)
            .step_by(COUNT_SAMPLE_EVERY as usize)
            .map(|t| {
                let c = fuzzy_vehicle_count(&log, t, stop)?;
                Ok(json!({ "t": t, "count": c.components() }))
            })
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let metrics = json!({
        "metadata": serde_json::to_value(&log.metadata)?,
        "op_count": log.op_count,
        "ordering_violated": log.ordering_violated,
        "travel_time_s": travel_time,
        "vehicle_counts": counts,
    });
    emit_json(cfg.output.metrics_json.as_deref(), &metrics)
}

/// Observer for scenarios with nothing to measure (no vehicles or no stop
/// line): every run yields an empty sample vector.
struct NullObserver;

impl RunObserver for NullObserver {
    fn observe(&mut self, _t: u64, _ch: &Channel) {}

    fn finish(&mut self) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

fn pct_summary(samples: &[f64]) -> Result<serde_json::Value> {
    let q = percentiles(samples, &[0.0, 5.0, 50.0, 95.0, 100.0])?;
    Ok(json!({ "min": q[0], "p05": q[1], "median": q[2], "p95": q[3], "max": q[4] }))
}

fn simulate_nasch(a: &SimulateNaschArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let params = nasch_params(&cfg)?;
    let scenario = cfg.scenario()?;
    let ens_cfg = EnsembleConfig::new(params, a.runs, scenario.steps, a.seed)?;

    let measured = scenario.vehicle_count() > 0 && scenario.final_stop_cell().is_some();
    let ens = if measured {
        let stop = scenario.final_stop_cell().unwrap();
        let last = scenario.last_vehicle_index();
        run_ensemble(&scenario, &ens_cfg, |_| {
            ArterialObserver::new(last, stop, COUNT_SAMPLE_EVERY)
        })?
    } else {
        run_ensemble(&scenario, &ens_cfg, |_| NullObserver)?
    };

    let count_times: Vec<u64> =
        (0..=scenario.steps).step_by(COUNT_SAMPLE_EVERY as usize).collect();
    if let Some(path) = &cfg.output.samples_csv {
        let mut w = csv_writer(Some(Path::new(path)))?;
        let mut header = vec!["run".to_string(), "seed".to_string()];
        if measured {
            header.push("travel_time_s".to_string());
            header.extend(count_times.iter().map(|t| format!("count_t{t}")));
        }
        w.write_record(&header)?;
        for (k, sample) in ens.samples.iter().enumerate() {
            let mut row = vec![k.to_string(), child_seed(a.seed, k as u64).to_string()];
            row.extend(sample.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
    }

    let mut summary = json!({
        "metadata": {
            "model": "nasch",
            "parameters": { "v_max": params.v_max, "p": params.p, "scenario": serde_json::to_value(&scenario)? },
            "seed": ens.master_seed,
            "rng": RNG_ALGORITHM,
            "version": env!("CARGO_PKG_VERSION"),
        },
        "runs": ens.runs,
        "steps": ens.steps,
        "vehicles": ens.vehicles,
        "op_count": ens.op_count,
        "draw_count": ens.draw_count,
    });
    if measured {
        let tts: Vec<f64> = ens.samples.iter().map(|s| s[0]).collect();
        summary["travel_time_s"] = pct_summary(&tts)?;
        let mut counts = Vec::new();
        for (j, &t) in count_times.iter().enumerate() {
            let cs: Vec<f64> = ens.samples.iter().map(|s| s[1 + j]).collect();
            let mut v = pct_summary(&cs)?;
            v["t"] = json!(t);
            counts.push(v);
        }
        summary["vehicle_counts"] = json!(counts);
    }
    emit_json(cfg.output.summary_json.as_deref(), &summary)
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let custom = custom_rules(a.config.as_ref())?;
    let s = TriangularFuzzy::new(a.s1, a.s2, a.s3)?;
    let cal = Calibration::from_saturation(
        s,
        resolve_rule(&a.rule_l, &custom)?,
        resolve_rule(&a.rule_h, &custom)?,
    )?;
    print_json(&json!({
        "rule_l": cal.rule_l().name(),
        "rule_h": cal.rule_h().name(),
        "saturation_flow_veh_h": s.components(),
        "alpha": cal.alpha(),
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

fn sweep_p(a: &SweepPArgs) -> Result<()> {
    if !(a.step > 0.0) || a.to < a.from {
        return Err(SimError::InvalidParameter(format!(
            "bad probability range {}..{} step {}",
            a.from, a.to, a.step
        )));
    }
    // a queue this long cannot exhaust: at most v_max cells per step pass
    // the line for every (v_max + 1)-step window, plus slack for the start
    let queue = if a.queue > 0 {
        a.queue
    } else {
        (a.steps as usize * a.v_max as usize) / (a.v_max as usize + 1) + a.v_max as usize + 1
    };
    let stop = queue as i64;
    let positions = saturated_queue_positions(stop, queue);

    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["p", "median", "p05", "p95", "spread"])?;
    let mut i = 0u64;
    loop {
        let p = a.from + a.step * i as f64;
        if p > a.to + 1e-12 {
            break;
        }
        let params = NaschParams::new(a.v_max, p.min(1.0))?;
        let cfg = EnsembleConfig::new(params, a.runs, a.steps, child_seed(a.seed, i))?;
        let ens = run_ensemble_with(&positions, &[], &cfg, |_| {
            CrossingCounter::new(stop, 0, a.steps)
        })?;
        let flows: Vec<f64> = ens.samples.iter().map(|s| s[0]).collect();
        let q = percentiles(&flows, &[5.0, 50.0, 95.0])?;
        w.write_record([
            format!("{p:.4}"),
            q[1].to_string(),
            q[0].to_string(),
            q[2].to_string(),
            (q[2] - q[0]).to_string(),
        ])?;
        i += 1;
    }
    w.flush()?;
    Ok(())
}

fn fundamental_diagram(a: &FdArgs) -> Result<()> {
    let mut densities = Vec::new();
    let mut i = 0u64;
    loop {
        let d = a.from + a.step * i as f64;
        if d > a.to + 1e-12 {
            break;
        }
        densities.push(d.min(1.0));
        i += 1;
    }
    let cal;
    let model = match a.model.as_str() {
        "fuzzy" => {
            cal = Calibration::from_saturation(
                TriangularFuzzy::new(a.s1, a.s2, a.s3)?,
                RuleTable::builtin(&a.rule_l)?,
                RuleTable::builtin(&a.rule_h)?,
            )?;
            SweepModel::Fuzzy(&cal)
        }
        "nasch" => SweepModel::Nasch(NaschParams::new(a.v_max, a.p)?),
        other => {
            return Err(SimError::InvalidParameter(format!(
                "unknown model '{other}', expected fuzzy or nasch"
            )))
        }
    };
    let points = crate::metrics::flow_density_sweep(
        &model, &densities, a.ring, a.warmup, a.measure, a.seed,
    )?;
    let mut w = csv_writer(a.out.as_deref())?;
    match model {
        SweepModel::Fuzzy(_) => {
            w.write_record(["density", "flow1_veh_h", "flow2_veh_h", "flow3_veh_h"])?
        }
        SweepModel::Nasch(_) => w.write_record(["density", "flow_veh_h"])?,
    }
    for pt in points {
        let mut row = vec![format!("{:.4}", pt.density)];
        row.extend(pt.flows_veh_h.iter().map(|f| format!("{f:.3}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn benchmark(a: &BenchmarkArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let cal = fuzzy_calibration(&cfg)?;
    let scenario = cfg.scenario()?;

    let t0 = Instant::now();
    let log = run_fuzzy(&scenario, &cal)?;
    let fuzzy_wall = t0.elapsed();

    // same scenario dimensions for the ensemble; the observer is a cheap
    // placeholder, the comparison is about engine cost
    let params = NaschParams::new(a.v_max, a.p)?;
    let ens_cfg = EnsembleConfig::new(params, a.runs, scenario.steps, a.seed)?;
    let positions = scenario.initial_positions()?;
    let schedules = scenario.schedules()?;
    let sample_every = scenario.steps.max(1);
    let t0 = Instant::now();
    let ens: Ensemble = run_ensemble_with(&positions, &schedules, &ens_cfg, |_| {
        VehicleCountObserver::new(scenario.final_stop_cell().unwrap_or(0), sample_every)
    })?;
    let nasch_wall = t0.elapsed();

    let report = op_cost_report(&log, &ens)?;
    print_json(&json!({
        "fuzzy_ops": report.fuzzy_ops,
        "nasch_ops": report.nasch_ops,
        "op_ratio": report.ratio,
        "fuzzy_wall_s": fuzzy_wall.as_secs_f64(),
        "nasch_wall_s": nasch_wall.as_secs_f64(),
        "wall_speedup": nasch_wall.as_secs_f64() / fuzzy_wall.as_secs_f64().max(1e-12),
        "runs": a.runs,
        "steps": scenario.steps,
        "vehicles": positions.len(),
        "seed": a.seed,
        "rng": RNG_ALGORITHM,
        "version": env!("CARGO_PKG_VERSION"),
    }))
}
