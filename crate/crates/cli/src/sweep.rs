//! Parameter sweeps and the figure presets.

use std::io::Write;

use rayon::prelude::*;
use v2v_core::approx::CaseLabel;
use v2v_core::model::{per_km_to_per_m, ReceiverSpec, ScenarioConfig, Side};
use v2v_core::optimizer::PositionMode;
use v2v_core::{Error, Result};

use crate::eval::{evaluate, EngineKind, Metric, Settings, Tx};

/// Inclusive `start:stop:step` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    pub const fn new(start: f64, stop: f64, step: f64) -> Self {
        Grid { start, stop, step }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::Invalid(format!("bad grid step {}", self.step)));
        }
        if self.start > self.stop {
            return Err(Error::Invalid(format!("empty grid {}:{}:{}", self.start, self.stop, self.step)));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        // rounding like this keeps 0.02*k printing as 0.02*k
        Ok((0..=n).map(|k| round12(self.start + k as f64 * self.step)).collect())
    }
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

impl std::str::FromStr for Grid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| Error::Invalid(format!("bad number '{p}' in grid '{s}'")));
        match parts.as_slice() {
            [a, b, c] => Ok(Grid::new(num(a)?, num(b)?, num(c)?)),
            [a, b] => Ok(Grid::new(num(a)?, num(b)?, 1.0)),
            _ => Err(Error::Invalid(format!("grid '{s}' is not start:stop:step"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Rho,
    Lambda,
    I,
    R,
    D,
}

impl std::str::FromStr for SweepVar {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rho" => SweepVar::Rho,
            "lambda" => SweepVar::Lambda,
            "i" => SweepVar::I,
            "r" => SweepVar::R,
            "d" => SweepVar::D,
            o => return Err(Error::Invalid(format!("unknown sweep variable '{o}' (rho, lambda, i, r, d)"))),
        })
    }
}

impl SweepVar {
    fn name(self) -> &'static str {
        match self {
            SweepVar::Rho => "rho",
            SweepVar::Lambda => "lambda",
            SweepVar::I => "i",
            SweepVar::R => "r",
            SweepVar::D => "d",
        }
    }
}

/// One point of a sweep.
#[derive(Debug, Clone)]
pub struct Job {
    pub x: f64,
    pub cfg: ScenarioConfig,
    pub tx: Tx,
    pub metric: Metric,
    pub series: String,
    /// Restricts the engines for this job.
    pub only: Option<EngineKind>,
    pub mode: Option<PositionMode>,
}

impl Job {
    /// The simulator has no optimizer, so optimal-rate points skip it.
    fn accepts(&self, e: EngineKind) -> bool {
        self.only.is_none_or(|o| o == e) && !(e == EngineKind::Sim && matches!(self.metric, Metric::Optimal { .. }))
    }
}

pub struct Sweep {
    pub var: &'static str,
    pub jobs: Vec<Job>,
}

fn as_index(x: f64, what: &str) -> Result<u32> {
    if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
        return Err(Error::Invalid(format!("{what} must be a nonnegative integer, got {x}")));
    }
    Ok(x as u32)
}

/// Sweeps one variable of a base job.
pub fn custom(var: SweepVar, grid: Grid, base: &Job) -> Result<Sweep> {
    let mut jobs = Vec::new();
    for x in grid.points()? {
        let mut j = base.clone();
        j.x = x;
        match var {
            SweepVar::Rho => j.cfg.rho = x,
            SweepVar::Lambda => {
                j.cfg.lambda_x = per_km_to_per_m(x);
                j.cfg.lambda_y = per_km_to_per_m(x);
            }
            SweepVar::D => j.tx = Tx::Index(as_index(x, "d")?),
            SweepVar::I => match &mut j.metric {
                Metric::P(ReceiverSpec::QueueVehicle { i, .. }) => *i = as_index(x, "i")?,
                _ => return Err(Error::Invalid("sweeping i needs a queue receiver and metric p".into())),
            },
            SweepVar::R => match &mut j.metric {
                Metric::P(ReceiverSpec::RunningX { r, .. }) | Metric::P(ReceiverSpec::RunningY { r }) => *r = x,
                _ => return Err(Error::Invalid("sweeping r needs an rx or ry receiver and metric p".into())),
            },
        }
        jobs.push(j);
    }
    Ok(Sweep { var: var.name(), jobs })
}

pub const PRESETS: [&str; 9] = ["fig3a", "fig3b", "fig4a", "fig4b", "fig5", "fig6", "fig7", "fig8", "fig9"];

fn job(x: f64, cfg: ScenarioConfig, tx: Tx, metric: Metric, series: String) -> Job {
    Job { x, cfg, tx, metric, series, only: None, mode: None }
}

fn receivers_vs_index(base: &ScenarioConfig, case: CaseLabel, max_i: u32, side: Option<Side>) -> Vec<Job> {
    let mut out = Vec::new();
    for rho in [0.1, 0.3, 0.5] {
        let cfg = base.with_rho(rho);
        for i in 1..=max_i {
            let m = Metric::P(ReceiverSpec::QueueVehicle { i, side });
            out.push(job(i as f64, cfg, Tx::Case(case), m, format!("case={case};rho={rho}")));
        }
    }
    out
}

/// The named figure presets on top of `base`.
pub fn preset(name: &str, base: &ScenarioConfig) -> Result<Sweep> {
    let n = base.n_plus;
    let rho_grid = Grid::new(0.02, 0.98, 0.02).points()?;
    let sweep = match name {
        "fig3a" => Sweep { var: "i", jobs: receivers_vs_index(base, CaseLabel::A, n, None) },
        "fig3b" => {
            let mut jobs = Vec::new();
            for rho in [0.1, 0.3, 0.5] {
                let cfg = base.with_rho(rho);
                for r in Grid::new(5.0, 150.0, 5.0).points()? {
                    let m = Metric::P(ReceiverSpec::RunningY { r });
                    jobs.push(job(r, cfg, Tx::Case(CaseLabel::A), m, format!("case=A;rho={rho}")));
                }
            }
            Sweep { var: "r", jobs }
        }
        "fig4a" => Sweep { var: "i", jobs: receivers_vs_index(base, CaseLabel::B, n, None) },
        "fig4b" => Sweep { var: "i", jobs: receivers_vs_index(base, CaseLabel::C, n / 2, None) },
        "fig5" => {
            let mut jobs = Vec::new();
            for case in CaseLabel::ALL {
                for &rho in &rho_grid {
                    jobs.push(job(rho, base.with_rho(rho), Tx::Case(case), Metric::Mean, format!("case={case}")));
                }
            }
            Sweep { var: "rho", jobs }
        }
        "fig6" => {
            let mut jobs = Vec::new();
            for nq in [15, 25, 35] {
                let cfg = base.with_queue(nq);
                for case in CaseLabel::ALL {
                    for &rho in &rho_grid {
                        let s = format!("case={case};n={nq}");
                        jobs.push(job(rho, cfg.with_rho(rho), Tx::Case(case), Metric::Objective, s));
                    }
                }
            }
            Sweep { var: "rho", jobs }
        }
        "fig7" => {
            let mut jobs = Vec::new();
            let lambdas = Grid::new(15.0, 40.0, 5.0).points()?;
            for case in [CaseLabel::A, CaseLabel::B] {
                for &l in &lambdas {
                    let cfg = base.with_lambda(per_km_to_per_m(l), per_km_to_per_m(l));
                    let own = Metric::Optimal { rate_case: None };
                    let central = Metric::Optimal { rate_case: Some(CaseLabel::C) };
                    jobs.push(job(l, cfg, Tx::Case(case), own, format!("case={case};rho=star")));
                    jobs.push(job(l, cfg, Tx::Case(case), central, format!("case={case};rho=c")));
                }
            }
            for l in [15.0, 25.0, 40.0] {
                let cfg = base.with_lambda(per_km_to_per_m(l), per_km_to_per_m(l));
                for &rho in &rho_grid {
                    let s = format!("case=C;lambda={l};var=rho");
                    jobs.push(job(rho, cfg.with_rho(rho), Tx::Case(CaseLabel::C), Metric::Objective, s));
                }
            }
            Sweep { var: "lambda", jobs }
        }
        "fig8" => {
            let cfg = base.with_queue(30).with_rho(0.1);
            let mut jobs = Vec::new();
            for i in [1, 2, 3] {
                for d in 0..=30 {
                    let m = Metric::P(ReceiverSpec::queue(i));
                    jobs.push(job(d as f64, cfg, Tx::Index(d), m, format!("i={i}")));
                }
            }
            Sweep { var: "d", jobs }
        }
        "fig9" => {
            let cfg = base.with_queue(30).with_rho(0.1);
            let mut jobs = Vec::new();
            for d in 0..=30 {
                jobs.push(job(d as f64, cfg, Tx::Index(d), Metric::MeanQueue, "mode=interpolate".into()));
            }
            for d in 0..=30 {
                let mut j = job(d as f64, cfg, Tx::Index(d), Metric::MeanQueue, "mode=extrapolate".into());
                j.only = Some(EngineKind::Approx);
                j.mode = Some(PositionMode::CentralExtrapolate);
                jobs.push(j);
            }
            Sweep { var: "d", jobs }
        }
        other => {
            return Err(Error::Invalid(format!("unknown preset '{other}' (one of {})", PRESETS.join(", "))));
        }
    };
    Ok(sweep)
}

/// Evaluates every job under every engine and writes the CSV. Rows follow the
/// job order, engines inside a job. On the first failure an error row is
/// written and the error returned.
pub fn run<W: Write>(sweep: &Sweep, engines: &[EngineKind], settings: &Settings, out: W) -> Result<()> {
    let tasks: Vec<(usize, EngineKind)> = sweep
        .jobs
        .iter()
        .enumerate()
        .flat_map(|(k, j)| engines.iter().filter(move |e| j.accepts(**e)).map(move |e| (k, *e)))
        .collect();
    let results: Vec<_> = tasks
        .par_iter()
        .map(|&(k, e)| {
            let j = &sweep.jobs[k];
            let s = Settings { position_mode: j.mode.unwrap_or(settings.position_mode), ..*settings };
            evaluate(&j.cfg, j.tx, j.metric, e, &s)
        })
        .collect();

    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["sweep_var", "engine", "value", "ci_low", "ci_high", "series"]).map_err(io)?;
    for (&(k, e), r) in tasks.iter().zip(results) {
        let j = &sweep.jobs[k];
        let x = fmt(j.x);
        let series = if j.series.contains("var=") { j.series.clone() } else { format!("var={};{}", sweep.var, j.series) };
        match r {
            Ok(m) => {
                let rec = [x, e.name().into(), fmt(m.value), fmt(m.ci_low), fmt(m.ci_high), series];
                w.write_record(&rec).map_err(io)?;
            }
            Err(err) => {
                let msg = format!("{series};error={err}");
                w.write_record([x, e.name().into(), "NaN".into(), "".into(), "".into(), msg])
                    .map_err(io)?;
                w.flush()?;
                return Err(err);
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn fmt(x: f64) -> String {
    format!("{x}")
}
