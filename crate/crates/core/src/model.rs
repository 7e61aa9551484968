//! Scenario parameters, geometry of the tagged link, and result containers.
//!
//! Everything is stored in SI units (meters, linear ratios). The JSON scenario
//! format uses vehicles per kilometer and decibels; see [`ScenarioFile`].

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn per_km_to_per_m(x: f64) -> f64 {
    x / 1000.0
}

/// All system parameters. Intensities are per meter, the threshold is linear.
///
/// `mu` (inverse transmit power) is kept for completeness; it cancels in every
/// SIR metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub n_plus: u32,
    pub n_minus: u32,
    pub l_v: f64,
    pub alpha: f64,
    pub t_threshold: f64,
    pub rho: f64,
    pub rho_0: f64,
    pub mu: f64,
}

impl ScenarioConfig {
    /// The reference setting: lv = 6 m, α = 4, T = 15 dB, ρ0 = 0.1,
    /// λx = λy = 25/km, N = 25 on both sides, ρ = 0.1.
    pub fn reference() -> Self {
        ScenarioConfig {
            lambda_x: per_km_to_per_m(25.0),
            lambda_y: per_km_to_per_m(25.0),
            n_plus: 25,
            n_minus: 25,
            l_v: 6.0,
            alpha: 4.0,
            t_threshold: db_to_linear(15.0),
            rho: 0.1,
            rho_0: 0.1,
            mu: 1.0,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_lambda(mut self, lambda_x: f64, lambda_y: f64) -> Self {
        self.lambda_x = lambda_x;
        self.lambda_y = lambda_y;
        self
    }

    pub fn with_queue(mut self, n: u32) -> Self {
        self.n_plus = n;
        self.n_minus = n;
        self
    }

    /// Integer path-loss exponent, if α is integral.
    pub fn alpha_int(&self) -> Option<u32> {
        if self.alpha.fract() == 0.0 && self.alpha >= 1.0 && self.alpha < 64.0 {
            Some(self.alpha as u32)
        } else {
            None
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        Ok(file.into())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(*self)).expect("plain struct serializes")
    }
}

/// On-disk scenario: intensities in 1/km, threshold in dB.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub n_plus: u32,
    pub n_minus: u32,
    pub l_v: f64,
    pub alpha: f64,
    pub t_threshold: f64,
    pub rho: f64,
    pub rho_0: f64,
    #[serde(default = "one")]
    pub mu: f64,
}

fn one() -> f64 {
    1.0
}

impl From<ScenarioFile> for ScenarioConfig {
    fn from(f: ScenarioFile) -> Self {
        ScenarioConfig {
            lambda_x: per_km_to_per_m(f.lambda_x),
            lambda_y: per_km_to_per_m(f.lambda_y),
            n_plus: f.n_plus,
            n_minus: f.n_minus,
            l_v: f.l_v,
            alpha: f.alpha,
            t_threshold: db_to_linear(f.t_threshold),
            rho: f.rho,
            rho_0: f.rho_0,
            mu: f.mu,
        }
    }
}

impl From<ScenarioConfig> for ScenarioFile {
    fn from(c: ScenarioConfig) -> Self {
        ScenarioFile {
            lambda_x: c.lambda_x * 1000.0,
            lambda_y: c.lambda_y * 1000.0,
            n_plus: c.n_plus,
            n_minus: c.n_minus,
            l_v: c.l_v,
            alpha: c.alpha,
            t_threshold: linear_to_db(c.t_threshold),
            rho: c.rho,
            rho_0: c.rho_0,
            mu: c.mu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    AlphaTooSmall(f64),
    RhoOutOfRange(f64),
    Rho0OutOfRange(f64),
    NegativeIntensity { axis: char, value: f64 },
    NonPositive { field: &'static str, value: f64 },
    NotFinite(&'static str),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AlphaTooSmall(a) => write!(f, "alpha must exceed 2 (got {a})"),
            Violation::RhoOutOfRange(r) => write!(f, "rho must lie in (0, 1) (got {r})"),
            Violation::Rho0OutOfRange(r) => write!(f, "rho_0 must lie in (0, 1) (got {r})"),
            Violation::NegativeIntensity { axis, value } => {
                write!(f, "lambda_{axis} must be nonnegative (got {value})")
            }
            Violation::NonPositive { field, value } => write!(f, "{field} must be positive (got {value})"),
            Violation::NotFinite(field) => write!(f, "{field} must be finite"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// (1−ρ)T < 1: the closed-form approximations lose their footing.
    LowEffectiveThreshold(f64),
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::LowEffectiveThreshold(v) => write!(f, "(1-rho)T < 1 (= {v:.4}); approximations outside their regime"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Validation {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Vec<Warning>> {
        if self.violations.is_empty() {
            Ok(self.warnings)
        } else {
            let msg: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::Invalid(msg.join("; ")))
        }
    }
}

/// Collects every violated invariant of `cfg`. Never fails.
pub fn validate(cfg: &ScenarioConfig) -> Validation {
    let mut out = Validation::default();
    let fields = [
        ("lambda_x", cfg.lambda_x),
        ("lambda_y", cfg.lambda_y),
        ("l_v", cfg.l_v),
        ("alpha", cfg.alpha),
        ("t_threshold", cfg.t_threshold),
        ("rho", cfg.rho),
        ("rho_0", cfg.rho_0),
        ("mu", cfg.mu),
    ];
    for (name, v) in fields {
        if !v.is_finite() {
            out.violations.push(Violation::NotFinite(name));
        }
    }
    if !(cfg.alpha > 2.0) {
        out.violations.push(Violation::AlphaTooSmall(cfg.alpha));
    }
    if !(cfg.rho > 0.0 && cfg.rho < 1.0) {
        out.violations.push(Violation::RhoOutOfRange(cfg.rho));
    }
    if !(cfg.rho_0 > 0.0 && cfg.rho_0 < 1.0) {
        out.violations.push(Violation::Rho0OutOfRange(cfg.rho_0));
    }
    for (axis, value) in [('x', cfg.lambda_x), ('y', cfg.lambda_y)] {
        if value < 0.0 {
            out.violations.push(Violation::NegativeIntensity { axis, value });
        }
    }
    for (field, value) in [("l_v", cfg.l_v), ("t_threshold", cfg.t_threshold), ("mu", cfg.mu)] {
        if !(value > 0.0) {
            out.violations.push(Violation::NonPositive { field, value });
        }
    }
    let eff = (1.0 - cfg.rho) * cfg.t_threshold;
    if eff < 1.0 {
        out.warnings.push(Warning::LowEffectiveThreshold(eff));
    }
    out
}

/// Where the tagged transmitter sits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TransmitterLocation {
    /// Case A: first vehicle of the queue, at the intersection (index 0).
    Intersection,
    /// Case B: last vehicle of the positive queue (index n+).
    QueueEnd,
    /// Case C: middle of the positive queue (index ⌊n+/2⌋).
    QueueMiddle,
    /// Queued vehicle `d` positions from the intersection on the positive side.
    QueueIndex(u32),
    /// A running vehicle on the x-street at coordinate x [m].
    RunningX(f64),
}

impl TransmitterLocation {
    pub fn queue_index(&self, cfg: &ScenarioConfig) -> Option<i64> {
        match *self {
            TransmitterLocation::Intersection => Some(0),
            TransmitterLocation::QueueEnd => Some(cfg.n_plus as i64),
            TransmitterLocation::QueueMiddle => Some((cfg.n_plus / 2) as i64),
            TransmitterLocation::QueueIndex(d) => Some(d as i64),
            TransmitterLocation::RunningX(_) => None,
        }
    }

    pub fn position(&self, cfg: &ScenarioConfig) -> Point {
        match (*self, self.queue_index(cfg)) {
            (TransmitterLocation::RunningX(x), _) => Point { x, y: 0.0 },
            (_, Some(d)) => Point { x: d as f64 * cfg.l_v, y: 0.0 },
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Positive,
    Negative,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Positive => 1.0,
            Side::Negative => -1.0,
        }
    }
}

/// The tagged receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReceiverSpec {
    /// Queued vehicle `i` positions away from the transmitter. Without an
    /// explicit side it lies toward the intersection (away from it when the
    /// transmitter is at the intersection).
    QueueVehicle { i: u32, side: Option<Side> },
    /// Running vehicle on the x-street at distance `r` [m] from the transmitter.
    RunningX { r: f64, side: Side },
    /// Running vehicle on the y-street at distance `r` [m] from the intersection.
    RunningY { r: f64 },
}

impl ReceiverSpec {
    pub fn queue(i: u32) -> Self {
        ReceiverSpec::QueueVehicle { i, side: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist(&self, o: &Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Fully resolved tagged link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub tx: Point,
    pub tx_index: Option<i64>,
    pub rx: Point,
    pub rx_index: Option<i64>,
}

impl Link {
    pub fn distance(&self) -> f64 {
        self.tx.dist(&self.rx)
    }
}

/// Queue slots are indexed -n−..=n+; slot m sits at x = m·lv.
pub fn queue_range(cfg: &ScenarioConfig) -> std::ops::RangeInclusive<i64> {
    -(cfg.n_minus as i64)..=cfg.n_plus as i64
}

pub fn resolve(cfg: &ScenarioConfig, tx: TransmitterLocation, rx: ReceiverSpec) -> Result<Link> {
    let d = tx.queue_index(cfg);
    if let Some(d) = d {
        if !queue_range(cfg).contains(&d) {
            return Err(Error::Invalid(format!("transmitter index {d} outside the queue")));
        }
    }
    let txp = tx.position(cfg);
    let link = match rx {
        ReceiverSpec::QueueVehicle { i, side } => {
            let d = d.ok_or_else(|| Error::Unsupported("queue receiver offsets need a queued transmitter".into()))?;
            if i == 0 {
                return Err(Error::Invalid("queue receiver offset must be at least 1".into()));
            }
            let side = side.unwrap_or(if d == 0 { Side::Positive } else { Side::Negative });
            let idx = match side {
                Side::Positive => d + i as i64,
                Side::Negative => d - i as i64,
            };
            if !queue_range(cfg).contains(&idx) {
                return Err(Error::Invalid(format!("receiver index {idx} outside the queue")));
            }
            Link { tx: txp, tx_index: Some(d), rx: Point { x: idx as f64 * cfg.l_v, y: 0.0 }, rx_index: Some(idx) }
        }
        ReceiverSpec::RunningX { r, side } => {
            if !(r > 0.0) {
                return Err(Error::Invalid("receiver distance must be positive".into()));
            }
            Link { tx: txp, tx_index: d, rx: Point { x: txp.x + side.sign() * r, y: 0.0 }, rx_index: None }
        }
        ReceiverSpec::RunningY { r } => {
            if !(r > 0.0) {
                return Err(Error::Invalid("receiver distance must be positive".into()));
            }
            Link { tx: txp, tx_index: d, rx: Point { x: 0.0, y: r }, rx_index: None }
        }
    };
    Ok(link)
}

/// A value with its uncertainty: a confidence interval for sampled results,
/// or a numerical tolerance for deterministic ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricEstimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: u64,
    pub abs_tol: f64,
}

impl MetricEstimate {
    pub fn exact(value: f64, abs_tol: f64) -> Self {
        MetricEstimate { value, ci_low: value, ci_high: value, n_samples: 0, abs_tol }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// Expected number of successful receivers split by segment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MeanReceiverBreakdown {
    pub m_q: f64,
    pub m_rx: f64,
    pub m_ry: f64,
}

impl MeanReceiverBreakdown {
    pub fn total(&self) -> f64 {
        self.m_q + self.m_rx + self.m_ry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn db_conversions() {
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!((db_to_linear(15.0) - 31.6228).abs() < 1e-4);
        assert!((db_to_linear(10.0) - 10.0).abs() < 1e-12);
        assert!((linear_to_db(db_to_linear(7.3)) - 7.3).abs() < 1e-12);
    }

    #[test]
    fn km_conversion() {
        assert_eq!(per_km_to_per_m(25.0), 0.025);
        assert_eq!(per_km_to_per_m(0.0), 0.0);
        assert_eq!(per_km_to_per_m(1000.0), 1.0);
    }

    #[test]
    fn reference_config_is_valid() {
        let v = validate(&ScenarioConfig::reference());
        assert!(v.is_ok());
        assert!(v.warnings.is_empty());
    }

    #[test]
    fn alpha_two_rejected() {
        let mut c = ScenarioConfig::reference();
        c.alpha = 2.0;
        let v = validate(&c);
        assert_eq!(v.violations, vec![Violation::AlphaTooSmall(2.0)]);
        assert!(v.violations[0].to_string().contains("alpha must exceed 2"));
    }

    #[test]
    fn high_rho_warns_only() {
        let c = ScenarioConfig::reference().with_rho(0.99);
        let v = validate(&c);
        assert!(v.is_ok());
        assert_eq!(v.warnings.len(), 1);
        assert!(v.warnings[0].to_string().contains("(1-rho)T < 1"));
    }

    #[test]
    fn collects_all_violations() {
        let mut c = ScenarioConfig::reference();
        c.rho = 0.0;
        c.rho_0 = 1.0;
        c.lambda_x = -1.0;
        c.l_v = 0.0;
        c.mu = -2.0;
        assert_eq!(validate(&c).violations.len(), 5);
    }

    #[test]
    fn scenario_json_roundtrip() {
        let c = ScenarioConfig::reference();
        let back = ScenarioConfig::from_json(&c.to_json()).unwrap();
        assert!((back.lambda_x - c.lambda_x).abs() < 1e-15);
        assert!((back.t_threshold - c.t_threshold).abs() < 1e-12);
        assert_eq!(back.n_plus, 25);
    }

    #[test]
    fn scenario_json_units() {
        let text = r#"{"lambda_x": 25, "lambda_y": 10, "n_plus": 5, "n_minus": 3, "l_v": 6,
            "alpha": 4, "t_threshold": 10, "rho": 0.2, "rho_0": 0.1}"#;
        let c = ScenarioConfig::from_json(text).unwrap();
        assert_eq!(c.lambda_x, 0.025);
        assert_eq!(c.lambda_y, 0.01);
        assert!((c.t_threshold - 10.0).abs() < 1e-12);
        assert_eq!(c.mu, 1.0);
        assert!(ScenarioConfig::from_json(r#"{"lambda_x": 1}"#).is_err());
    }

    #[test]
    fn resolve_cases() {
        let c = ScenarioConfig::reference();
        let a = resolve(&c, TransmitterLocation::Intersection, ReceiverSpec::queue(5)).unwrap();
        assert_eq!(a.rx_index, Some(5));
        assert_eq!(a.distance(), 30.0);
        let b = resolve(&c, TransmitterLocation::QueueEnd, ReceiverSpec::queue(5)).unwrap();
        assert_eq!(b.rx_index, Some(20));
        let m = resolve(&c, TransmitterLocation::QueueMiddle, ReceiverSpec::queue(20)).unwrap();
        assert_eq!(m.tx_index, Some(12));
        assert_eq!(m.rx_index, Some(-8));
        let y = resolve(&c, TransmitterLocation::QueueEnd, ReceiverSpec::RunningY { r: 40.0 }).unwrap();
        assert!((y.distance() - 150f64.hypot(40.0)).abs() < 1e-12);
        assert!(resolve(&c, TransmitterLocation::QueueEnd, ReceiverSpec::queue(51)).is_err());
        assert!(resolve(&c, TransmitterLocation::QueueIndex(26), ReceiverSpec::queue(1)).is_err());
        assert!(resolve(&c, TransmitterLocation::RunningX(3.0), ReceiverSpec::queue(1)).is_err());
    }
}
