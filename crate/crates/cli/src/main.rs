//! `v2v`: metrics, sweeps, simulation and rate optimization for broadcast
//! at a road intersection.
//!
//! Exit codes: 0 ok, 2 bad input or validation failure, 3 numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod eval;
mod sweep;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use v2v_core::approx::CaseLabel;
use v2v_core::model::{db_to_linear, per_km_to_per_m, validate, ReceiverSpec, ScenarioConfig, Side};
use v2v_core::montecarlo::{estimate_mean, estimate_p, SimSpec};
use v2v_core::optimizer::{build_table, lookup, optimize_rho, Engine, OptimizeSpec, PositionMode, RateTable};
use v2v_core::quad::QuadratureSpec;
use v2v_core::seriesmath::{q_approx, q_bounds_head, q_bounds_upper_tail, q_exact, regime, QRegime};
use v2v_core::{Error, Result};

use eval::{evaluate, parse_engines, EngineKind, Metric, Settings, Tx};
use sweep::{Grid, Job, SweepVar};

#[derive(Parser)]
#[command(name = "v2v", version, about = "Broadcast performance of queued and running vehicles at an intersection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One CSV row with the chosen metric under each engine.
    Metrics(MetricsArgs),
    /// Monte Carlo estimate with confidence interval.
    Simulate(SimulateArgs),
    /// Sweep one variable, or run a figure preset, to CSV.
    Sweep(SweepArgs),
    /// Transmit probability maximizing ρ·M̄(ρ).
    Optimize(OptimizeArgs),
    /// Table of optimal transmit probabilities over (λx, λy), as JSON.
    Table(TableArgs),
    /// Interpolated optimal transmit probability from a table.
    Lookup(LookupArgs),
    /// The log-sum q(n0, T, r, n1, α) exactly, approximated and bounded.
    Qfunc(QfuncArgs),
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario JSON (intensities in 1/km, threshold in dB). Defaults to the reference setting.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// SIR threshold [dB].
    #[arg(long = "T-db")]
    t_db: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Transmit probability of running vehicles.
    #[arg(long)]
    rho0: Option<f64>,
    /// Running intensity on the queue street [1/km].
    #[arg(long)]
    lambda_x: Option<f64>,
    /// Running intensity on the crossing street [1/km].
    #[arg(long)]
    lambda_y: Option<f64>,
    /// Queue length on each side.
    #[arg(long)]
    n: Option<u32>,
    /// Vehicle spacing in the queue [m].
    #[arg(long)]
    lv: Option<f64>,
    /// Path-loss exponent.
    #[arg(long)]
    alpha: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        checked(self.build()?)
    }

    /// Overrides applied, not yet validated.
    fn build(&self) -> Result<ScenarioConfig> {
        let mut c = match &self.scenario {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::reference(),
        };
        if let Some(v) = self.t_db {
            c.t_threshold = db_to_linear(v);
        }
        if let Some(v) = self.rho {
            c.rho = v;
        }
        if let Some(v) = self.rho0 {
            c.rho_0 = v;
        }
        if let Some(v) = self.lambda_x {
            c.lambda_x = per_km_to_per_m(v);
        }
        if let Some(v) = self.lambda_y {
            c.lambda_y = per_km_to_per_m(v);
        }
        if let Some(v) = self.n {
            c = c.with_queue(v);
        }
        if let Some(v) = self.lv {
            c.l_v = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        Ok(c)
    }
}

fn checked(c: ScenarioConfig) -> Result<ScenarioConfig> {
    for w in validate(&c).into_result()? {
        eprintln!("warning: {w}");
    }
    Ok(c)
}

#[derive(Args, Clone)]
struct TargetArgs {
    /// Reference transmitter position: A intersection, B queue end, C queue middle.
    #[arg(long, default_value = "A")]
    case: String,
    /// Transmitter at this queue index instead of a reference position.
    #[arg(long, conflicts_with = "case")]
    tx_index: Option<u32>,
    /// queue:i, rx:r or ry:r.
    #[arg(long, default_value = "queue:1")]
    receiver: String,
    /// Side for queue and rx receivers: pos or neg.
    #[arg(long)]
    side: Option<String>,
    /// p, mean, mean-queue or objective.
    #[arg(long, default_value = "p")]
    metric: String,
    /// Anchor use away from the reference positions: interpolate or extrapolate.
    #[arg(long, default_value = "interpolate")]
    position_mode: String,
}

#[derive(Args, Clone)]
struct SimArgs {
    /// Monte Carlo trials (default 100000 for p, 10000 for means).
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Half-width of the simulated street window [m].
    #[arg(long, default_value_t = 2000.0)]
    window: f64,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    target: TargetArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Comma-separated subset of exact, approx, sim.
    #[arg(long, default_value = "exact,approx")]
    engines: String,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    target: TargetArgs,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    target: TargetArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value = "exact,approx")]
    engines: String,
    /// Named figure preset (fig3a..fig9); overrides --var, --grid and the target flags.
    #[arg(long)]
    preset: Option<String>,
    /// rho, lambda (both streets, 1/km), i, r or d.
    #[arg(long, default_value = "rho")]
    var: String,
    /// start:stop:step, inclusive.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "C")]
    case: String,
    /// exact or approx.
    #[arg(long, default_value = "approx")]
    engine: String,
    /// Search range and grid as lo:hi:step.
    #[arg(long, default_value = "0:0.5:0.01")]
    grid: String,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Where to write the objective curve; stdout after the summary otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "C")]
    case: String,
    #[arg(long, default_value = "approx")]
    engine: String,
    /// Intensity grid for both streets [1/km], start:stop:step.
    #[arg(long, default_value = "5:100:5")]
    grid: String,
    /// Separate grid for the crossing street.
    #[arg(long)]
    grid_y: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LookupArgs {
    #[arg(long)]
    table: PathBuf,
    /// [1/km]
    #[arg(long)]
    lambda_x: f64,
    /// [1/km]
    #[arg(long)]
    lambda_y: f64,
}

#[derive(Args)]
struct QfuncArgs {
    #[arg(long)]
    n0: u64,
    #[arg(long)]
    n1: u64,
    #[arg(long = "T-db")]
    t_db: f64,
    #[arg(long, default_value_t = 4)]
    alpha: u32,
    #[arg(long)]
    r: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Metrics(a) => cmd_metrics(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Optimize(a) => cmd_optimize(a),
        Cmd::Table(a) => cmd_table(a),
        Cmd::Lookup(a) => cmd_lookup(a),
        Cmd::Qfunc(a) => cmd_qfunc(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}

fn parse_receiver(s: &str, side: Option<Side>) -> Result<ReceiverSpec> {
    let bad = || Error::Invalid(format!("receiver '{s}' is not queue:i, rx:r or ry:r"));
    let (kind, val) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "queue" => Ok(ReceiverSpec::QueueVehicle { i: val.parse().map_err(|_| bad())?, side }),
        "rx" => Ok(ReceiverSpec::RunningX { r: val.parse().map_err(|_| bad())?, side: side.unwrap_or(Side::Negative) }),
        "ry" => {
            if side.is_some() {
                return Err(Error::Invalid("--side does not apply to ry receivers".into()));
            }
            Ok(ReceiverSpec::RunningY { r: val.parse().map_err(|_| bad())? })
        }
        _ => Err(bad()),
    }
}

fn parse_side(s: Option<&str>) -> Result<Option<Side>> {
    match s {
        None => Ok(None),
        Some("pos" | "positive" | "+") => Ok(Some(Side::Positive)),
        Some("neg" | "negative" | "-") => Ok(Some(Side::Negative)),
        Some(o) => Err(Error::Invalid(format!("unknown side '{o}' (pos, neg)"))),
    }
}

fn parse_mode(s: &str) -> Result<PositionMode> {
    match s {
        "interpolate" => Ok(PositionMode::Interpolate),
        "extrapolate" => Ok(PositionMode::CentralExtrapolate),
        o => Err(Error::Invalid(format!("unknown position mode '{o}' (interpolate, extrapolate)"))),
    }
}

struct Target {
    tx: Tx,
    metric: Metric,
    rx_label: String,
    mode: PositionMode,
}

impl TargetArgs {
    fn resolve(&self) -> Result<Target> {
        let tx = match self.tx_index {
            Some(d) => Tx::Index(d),
            None => Tx::Case(self.case.parse::<CaseLabel>()?),
        };
        let side = parse_side(self.side.as_deref())?;
        let (metric, rx_label) = match self.metric.as_str() {
            "p" => (Metric::P(parse_receiver(&self.receiver, side)?), self.receiver.clone()),
            "mean" => (Metric::Mean, "all".into()),
            "mean-queue" => (Metric::MeanQueue, "queue".into()),
            "objective" => (Metric::Objective, "all".into()),
            o => return Err(Error::Invalid(format!("unknown metric '{o}' (p, mean, mean-queue, objective)"))),
        };
        Ok(Target { tx, metric, rx_label, mode: parse_mode(&self.position_mode)? })
    }
}

impl SimArgs {
    fn spec(&self, metric: Metric) -> SimSpec {
        let default = if matches!(metric, Metric::P(_)) { 100_000 } else { 10_000 };
        SimSpec { window_half_width: self.window, ..SimSpec::new(self.trials.unwrap_or(default), self.seed) }
    }
}

fn tx_label(tx: Tx) -> String {
    match tx {
        Tx::Case(c) => c.to_string(),
        Tx::Index(d) => format!("d={d}"),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(io::Error::other(e))
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let cfg = a.scenario.load()?;
    let t = a.target.resolve()?;
    let engines = parse_engines(&a.engines)?;
    let settings = Settings { sim: a.sim.spec(t.metric), position_mode: t.mode, quad: QuadratureSpec::default() };
    let mut header = vec!["case".to_string(), "receiver".into(), "metric".into()];
    let mut row = vec![tx_label(t.tx), t.rx_label.clone(), t.metric.name().into()];
    let mut tail = vec![];
    for e in &engines {
        let m = evaluate(&cfg, t.tx, t.metric, *e, &settings)?;
        header.push(e.name().into());
        row.push(sweep::fmt(m.value));
        if *e == EngineKind::Sim {
            tail.push(("sim_ci_low", m.ci_low));
            tail.push(("sim_ci_high", m.ci_high));
        }
    }
    for (h, v) in tail {
        header.push(h.into());
        row.push(sweep::fmt(v));
    }
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(&header).map_err(csv_err)?;
    w.write_record(&row).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = a.scenario.load()?;
    let t = a.target.resolve()?;
    let spec = a.sim.spec(t.metric);
    let loc = t.tx.location();
    let mut rows: Vec<(&str, v2v_core::model::MetricEstimate)> = vec![];
    match t.metric {
        Metric::P(rx) => rows.push(("p", estimate_p(&cfg, loc, rx, &spec)?)),
        _ => {
            let m = estimate_mean(&cfg, loc, &spec)?;
            rows.extend([("m_q", m.m_q), ("m_rx", m.m_rx), ("m_ry", m.m_ry), ("total", m.total)]);
            if t.metric == Metric::Objective {
                let d = m.total;
                rows.push((
                    "objective",
                    v2v_core::model::MetricEstimate {
                        value: cfg.rho * d.value,
                        ci_low: cfg.rho * d.ci_low,
                        ci_high: cfg.rho * d.ci_high,
                        ..d
                    },
                ));
            }
        }
    }
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["case", "receiver", "quantity", "value", "ci_low", "ci_high", "trials", "seed"]).map_err(csv_err)?;
    for (q, m) in rows {
        w.write_record([
            tx_label(t.tx),
            t.rx_label.clone(),
            q.into(),
            sweep::fmt(m.value),
            sweep::fmt(m.ci_low),
            sweep::fmt(m.ci_high),
            m.n_samples.to_string(),
            spec.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cfg = a.scenario.build()?;
    let engines = parse_engines(&a.engines)?;
    let (sw, mode, sim) = match &a.preset {
        Some(name) => {
            let sw = sweep::preset(name, &cfg)?;
            // p and means mix in presets: the trial count follows the first job
            let sim = a.sim.spec(sw.jobs.first().map_or(Metric::Mean, |j| j.metric));
            (sw, PositionMode::Interpolate, sim)
        }
        None => {
            let t = a.target.resolve()?;
            let grid: Grid = a.grid.as_deref().ok_or_else(|| Error::Invalid("--grid is required without --preset".into()))?.parse()?;
            let var: SweepVar = a.var.parse()?;
            let base = Job { x: 0.0, cfg, tx: t.tx, metric: t.metric, series: format!("case={};receiver={}", tx_label(t.tx), t.rx_label), only: None, mode: None };
            (sweep::custom(var, grid, &base)?, t.mode, a.sim.spec(t.metric))
        }
    };
    let mut warned = std::collections::BTreeSet::new();
    for j in &sw.jobs {
        for w in validate(&j.cfg).into_result()? {
            if warned.insert(w.to_string()) {
                eprintln!("warning: {w}");
            }
        }
    }
    let settings = Settings { sim, position_mode: mode, quad: QuadratureSpec::default() };
    let out = output(&a.out)?;
    sweep::run(&sw, &engines, &settings, out)
}

fn parse_engine(s: &str) -> Result<Engine> {
    s.parse()
}

fn cmd_optimize(a: OptimizeArgs) -> Result<()> {
    let cfg = a.scenario.load()?;
    let case: CaseLabel = a.case.parse()?;
    let engine = parse_engine(&a.engine)?;
    let g: Grid = a.grid.parse()?;
    let spec = OptimizeSpec { lo: g.start, hi: g.stop, grid_step: g.step, tol: a.tol };
    let opt = optimize_rho(&cfg, case, engine, &spec)?;
    if opt.flat {
        eprintln!("warning: objective is flat over the range; reporting the upper end");
    }
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["case", "engine", "rho_star", "d_max", "flat"]).map_err(csv_err)?;
    w.write_record([
        case.to_string(),
        engine.to_string(),
        sweep::fmt(opt.rho_star),
        sweep::fmt(opt.curve.max_value),
        opt.flat.to_string(),
    ])
    .map_err(csv_err)?;
    w.flush()?;
    drop(w);
    if a.out.is_none() {
        println!();
    }
    let mut w = csv::Writer::from_writer(output(&a.out)?);
    w.write_record(["rho", "objective"]).map_err(csv_err)?;
    for (r, d) in opt.curve.rho_samples.iter().zip(&opt.curve.d_values) {
        w.write_record([sweep::fmt(*r), sweep::fmt(*d)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn generated_at() -> String {
    let t = match std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse::<u64>().ok()) {
        Some(secs) => UNIX_EPOCH + Duration::from_secs(secs),
        None => SystemTime::now(),
    };
    humantime::format_rfc3339_seconds(t).to_string()
}

fn cmd_table(a: TableArgs) -> Result<()> {
    let cfg = a.scenario.load()?;
    let case: CaseLabel = a.case.parse()?;
    let engine = parse_engine(&a.engine)?;
    let gx = a.grid.parse::<Grid>()?.points()?;
    let gy = match &a.grid_y {
        Some(s) => s.parse::<Grid>()?.points()?,
        None => gx.clone(),
    };
    let table = build_table(&cfg, &gx, &gy, case, engine, &OptimizeSpec::default(), generated_at())?;
    if !table.meta.failures.is_empty() {
        eprintln!("warning: {} cells failed and are left empty", table.meta.failures.len());
    }
    let mut w = output(&a.out)?;
    writeln!(w, "{}", table.to_json())?;
    w.flush()?;
    Ok(())
}

fn cmd_lookup(a: LookupArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.table)?;
    let table = RateTable::from_json(&text)?;
    let l = lookup(&table, a.lambda_x, a.lambda_y)?;
    if l.clamped {
        eprintln!("warning: intensities outside the table; clamped to its edge");
    }
    println!("lambda_x,lambda_y,rho_star,clamped");
    println!("{},{},{},{}", a.lambda_x, a.lambda_y, l.rho_star, l.clamped);
    Ok(())
}

fn cmd_qfunc(a: QfuncArgs) -> Result<()> {
    if a.alpha < 3 {
        return Err(Error::Invalid(format!("alpha must be at least 3, got {}", a.alpha)));
    }
    if !(a.r > 0.0) {
        return Err(Error::Invalid(format!("r must be positive, got {}", a.r)));
    }
    let t = db_to_linear(a.t_db);
    let af = a.alpha as f64;
    let exact = q_exact(a.n0, t, a.r, a.n1, af);
    let (approx, reg) = q_approx(a.n0, t, a.r, a.n1, a.alpha);
    let bounds = match reg {
        QRegime::InWindow => {
            let h = q_bounds_head(a.n0, t, a.r, a.n1, a.alpha)?;
            let tl = q_bounds_upper_tail(a.n0, t, a.r, a.n1, a.alpha)?;
            format!("{}..{}", h.lower + tl.lower, h.upper + tl.upper)
        }
        _ => String::new(),
    };
    let e = v2v_core::seriesmath::eta(a.n0, t, a.r, af);
    debug_assert_eq!(reg, regime(a.n0, t, a.r, a.n1, af));
    eprintln!("regime {reg:?}, eta {e}");
    println!("q_exact,q_approx,bounds");
    println!("{exact},{approx},{bounds}");
    Ok(())
}
