//! One metric for one scenario under one engine.

use v2v_core::approx::{approx_mean, approx_p, CaseLabel};
use v2v_core::exact::{mean_receivers, success_prob};
use v2v_core::model::{MetricEstimate, ReceiverSpec, ScenarioConfig, TransmitterLocation};
use v2v_core::montecarlo::{estimate_mean, estimate_p, SimSpec};
use v2v_core::optimizer::{interpolate_position, optimize_rho, Engine, OptimizeSpec, PositionMode, PositionTarget};
use v2v_core::quad::QuadratureSpec;
use v2v_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineKind {
    Exact,
    Approx,
    Sim,
}

impl EngineKind {
    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Exact => "exact",
            EngineKind::Approx => "approx",
            EngineKind::Sim => "sim",
        }
    }
}

pub fn parse_engines(s: &str) -> Result<Vec<EngineKind>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let e = match part.to_ascii_lowercase().as_str() {
            "exact" => EngineKind::Exact,
            "approx" => EngineKind::Approx,
            "sim" => EngineKind::Sim,
            other => return Err(Error::Invalid(format!("unknown engine '{other}' (exact, approx, sim)"))),
        };
        if !out.contains(&e) {
            out.push(e);
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid("no engines selected".into()));
    }
    Ok(out)
}

/// Where the tagged transmitter sits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tx {
    Case(CaseLabel),
    Index(u32),
}

impl Tx {
    pub fn location(self) -> TransmitterLocation {
        match self {
            Tx::Case(c) => c.transmitter(),
            Tx::Index(d) => TransmitterLocation::QueueIndex(d),
        }
    }

    pub fn index(self, cfg: &ScenarioConfig) -> u32 {
        match self {
            Tx::Case(c) => c.queue_index(cfg),
            Tx::Index(d) => d,
        }
    }

    /// The reference case sitting at this index, if any.
    fn case(self, cfg: &ScenarioConfig) -> Option<CaseLabel> {
        match self {
            Tx::Case(c) => Some(c),
            Tx::Index(d) => CaseLabel::ALL.into_iter().find(|c| c.queue_index(cfg) == d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    /// Success probability to the given receiver.
    P(ReceiverSpec),
    /// Mean number of successful receivers, all segments.
    Mean,
    /// Mean number of successful queued receivers.
    MeanQueue,
    /// D(ρ) = ρ·M̄(ρ).
    Objective,
    /// D at the ρ* of `rate_case` (the transmitter's own case when None).
    Optimal { rate_case: Option<CaseLabel> },
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::P(_) => "p",
            Metric::Mean => "mean",
            Metric::MeanQueue => "mean_queue",
            Metric::Objective => "objective",
            Metric::Optimal { .. } => "optimal_objective",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub sim: SimSpec,
    pub position_mode: PositionMode,
    pub quad: QuadratureSpec,
}

fn scaled(m: MetricEstimate, k: f64) -> MetricEstimate {
    MetricEstimate { value: k * m.value, ci_low: k * m.ci_low, ci_high: k * m.ci_high, ..m }
}

pub fn evaluate(cfg: &ScenarioConfig, tx: Tx, metric: Metric, engine: EngineKind, s: &Settings) -> Result<MetricEstimate> {
    let tol = s.quad.abs_tol;
    match engine {
        EngineKind::Exact => {
            let v = match metric {
                Metric::P(rx) => success_prob(cfg, tx.location(), rx, &s.quad)?,
                Metric::Mean => mean_receivers(cfg, tx.index(cfg), &s.quad)?.total(),
                Metric::MeanQueue => mean_receivers(cfg, tx.index(cfg), &s.quad)?.m_q,
                Metric::Objective => cfg.rho * mean_receivers(cfg, tx.index(cfg), &s.quad)?.total(),
                Metric::Optimal { rate_case } => optimal(cfg, tx, rate_case, Engine::Exact)?,
            };
            Ok(MetricEstimate::exact(v, tol))
        }
        EngineKind::Approx => {
            let v = match (metric, tx.case(cfg)) {
                (Metric::P(rx), Some(c)) => approx_p(cfg, c, rx)?.value,
                (Metric::Mean, Some(c)) => approx_mean(cfg, c)?.total(),
                (Metric::MeanQueue, Some(c)) => approx_mean(cfg, c)?.m_q,
                (Metric::Objective, Some(c)) => cfg.rho * approx_mean(cfg, c)?.total(),
                (Metric::Optimal { rate_case }, Some(_)) => optimal(cfg, tx, rate_case, Engine::Approx)?,
                (Metric::P(ReceiverSpec::QueueVehicle { i, side: None }), None) => {
                    interpolate_position(cfg, tx.index(cfg), PositionTarget::P { i }, s.position_mode)?
                }
                (Metric::MeanQueue, None) => {
                    interpolate_position(cfg, tx.index(cfg), PositionTarget::MeanQueue, s.position_mode)?
                }
                (m, None) => {
                    return Err(Error::Unsupported(format!(
                        "approx engine covers only queue receivers and the queue mean away from the reference positions, not {}",
                        m.name()
                    )))
                }
            };
            Ok(MetricEstimate::exact(v, 0.0))
        }
        EngineKind::Sim => match metric {
            Metric::P(rx) => estimate_p(cfg, tx.location(), rx, &s.sim),
            Metric::Mean => Ok(estimate_mean(cfg, tx.location(), &s.sim)?.total),
            Metric::MeanQueue => Ok(estimate_mean(cfg, tx.location(), &s.sim)?.m_q),
            Metric::Objective => Ok(scaled(estimate_mean(cfg, tx.location(), &s.sim)?.total, cfg.rho)),
            Metric::Optimal { .. } => Err(Error::Unsupported("the simulator does not optimize".into())),
        },
    }
}

fn optimal(cfg: &ScenarioConfig, tx: Tx, rate_case: Option<CaseLabel>, engine: Engine) -> Result<f64> {
    let own = tx.case(cfg).ok_or_else(|| Error::Unsupported("optimization needs a reference position".into()))?;
    let spec = OptimizeSpec::default();
    let rho = optimize_rho(cfg, rate_case.unwrap_or(own), engine, &spec)?.rho_star;
    let cfg = cfg.with_rho(rho);
    let m = match engine {
        Engine::Exact => mean_receivers(&cfg, own.queue_index(&cfg), &QuadratureSpec::default())?,
        Engine::Approx => approx_mean(&cfg, own)?,
    };
    Ok(rho * m.total())
}
