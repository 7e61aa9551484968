//! Closed-form approximations of the success probability and of the mean
//! number of successful receivers for the three reference transmitter
//! positions.
//!
//! All three cases share the effective running-interference rate
//! `ρ0 (λx c_x + λy c_y)` per meter; case C is case A with λy = 0.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::unit_line_integral;
use crate::model::{MeanReceiverBreakdown, ReceiverSpec, ScenarioConfig, Side, TransmitterLocation};
use crate::quad::{integrate_to_infinity, QuadratureSpec};
use crate::seriesmath::alternating_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseLabel {
    A,
    B,
    C,
}

impl CaseLabel {
    pub const ALL: [CaseLabel; 3] = [CaseLabel::A, CaseLabel::B, CaseLabel::C];

    pub fn transmitter(self) -> TransmitterLocation {
        match self {
            CaseLabel::A => TransmitterLocation::Intersection,
            CaseLabel::B => TransmitterLocation::QueueEnd,
            CaseLabel::C => TransmitterLocation::QueueMiddle,
        }
    }

    pub fn queue_index(self, cfg: &ScenarioConfig) -> u32 {
        self.transmitter().queue_index(cfg).expect("reference positions are queued") as u32
    }
}

impl std::str::FromStr for CaseLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(CaseLabel::A),
            "B" | "b" => Ok(CaseLabel::B),
            "C" | "c" => Ok(CaseLabel::C),
            other => Err(Error::Invalid(format!("unknown case '{other}', expected A, B or C"))),
        }
    }
}

impl std::fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// κ1 = α Σ_{k≥1} (−1)^{k+1}/(αk−1) and κ2 = α Σ_{k≥1} (−1)^{k+1}/(αk+1).
pub fn kappas(alpha: u32) -> (f64, f64) {
    let a = alpha as f64;
    let k1 = a * alternating_sum(|k| 1.0 / (a * k as f64 - 1.0));
    let k2 = a * alternating_sum(|k| 1.0 / (a * k as f64 + 1.0));
    (k1, k2)
}

/// c_x = T^{1/α} ∫_ℝ dx/(|x|^α+1) and c_y = T ∫_ℝ dy/((y²+1)^{α/2}+T).
pub fn c_constants(alpha: u32, t: f64, quad: &QuadratureSpec) -> Result<(f64, f64)> {
    let a = alpha as f64;
    let c_x = t.powf(1.0 / a) * 2.0 * unit_line_integral(a);
    let c_y = match alpha {
        2 => PI * t / (1.0 + t).sqrt(),
        _ => {
            let scale = 1f64.max(t.powf(1.0 / a));
            let r = integrate_to_infinity(|y: f64| t / ((y * y + 1.0).powf(a / 2.0) + t), 0.0, scale, quad)?;
            2.0 * r.value
        }
    };
    Ok((c_x, c_y))
}

/// Constants that depend only on (α, T).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxConstants {
    pub alpha: u32,
    pub t: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub c_x: f64,
    pub c_y: f64,
}

impl ApproxConstants {
    pub fn new(alpha: u32, t: f64) -> Result<Self> {
        if alpha < 3 {
            return Err(Error::Invalid(format!("integer alpha must exceed 2 (got {alpha})")));
        }
        if !(t > 0.0) {
            return Err(Error::Invalid("threshold must be positive".into()));
        }
        let (kappa1, kappa2) = kappas(alpha);
        let (c_x, c_y) = c_constants(alpha, t, &QuadratureSpec::default())?;
        Ok(ApproxConstants { alpha, t, kappa1, kappa2, c_x, c_y })
    }

    pub fn for_config(cfg: &ScenarioConfig) -> Result<Self> {
        let alpha = cfg
            .alpha_int()
            .ok_or_else(|| Error::Unsupported(format!("approximations need an integer alpha (got {})", cfg.alpha)))?;
        Self::new(alpha, cfg.t_threshold)
    }

    pub fn xi(&self, rho: f64) -> f64 {
        let a = self.alpha as f64;
        (a + self.kappa1 - self.kappa2) * ((1.0 - rho).powf(1.0 / a) - 1.0) * self.t.powf(1.0 / a)
    }

    pub fn beta(&self, rho: f64) -> f64 {
        self.xi(rho) + rho / ((1.0 - rho) * (self.alpha as f64 + 1.0) * self.t)
    }

    fn busy_term(&self, rho: f64) -> f64 {
        rho / ((self.alpha as f64 + 1.0) * (1.0 - rho) * self.t)
    }
}

/// ξ(ρ) = (α + κ1 − κ2)((1−ρ)^{1/α} − 1) T^{1/α}.
pub fn xi(alpha: u32, t: f64, rho: f64) -> f64 {
    let (k1, k2) = kappas(alpha);
    let a = alpha as f64;
    (a + k1 - k2) * ((1.0 - rho).powf(1.0 / a) - 1.0) * t.powf(1.0 / a)
}

/// β(ρ) = ξ(ρ) + ρ/((1−ρ)(α+1)T).
pub fn beta(alpha: u32, t: f64, rho: f64) -> f64 {
    xi(alpha, t, rho) + rho / ((1.0 - rho) * (alpha as f64 + 1.0) * t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxP {
    /// Value clamped to [0, 1].
    pub value: f64,
    /// Formula value before clamping.
    pub raw: f64,
    pub clamped: bool,
    /// (1−ρ)T < 1: outside the regime the formulas are derived for.
    pub outside_regime: bool,
}

fn finish(raw: f64, cfg: &ScenarioConfig) -> ApproxP {
    let value = raw.clamp(0.0, 1.0);
    ApproxP { value, raw, clamped: value != raw, outside_regime: (1.0 - cfg.rho) * cfg.t_threshold < 1.0 }
}

fn check_rho(cfg: &ScenarioConfig) -> Result<()> {
    if !(cfg.rho > 0.0 && cfg.rho < 1.0) || !(cfg.rho_0 >= 0.0 && cfg.rho_0 < 1.0) {
        return Err(Error::Invalid("transmit probabilities must lie in (0, 1)".into()));
    }
    Ok(())
}

/// Effective running-interference decay per meter.
fn running_rate(k: &ApproxConstants, cfg: &ScenarioConfig, lambda_y: f64) -> f64 {
    cfg.rho_0 * (cfg.lambda_x * k.c_x + lambda_y * k.c_y)
}

fn lambda_y_for(case: CaseLabel, cfg: &ScenarioConfig) -> f64 {
    match case {
        CaseLabel::A => cfg.lambda_y,
        CaseLabel::B | CaseLabel::C => 0.0,
    }
}

pub fn approx_p(cfg: &ScenarioConfig, case: CaseLabel, rx: ReceiverSpec) -> Result<ApproxP> {
    let k = ApproxConstants::for_config(cfg)?;
    approx_p_with(&k, cfg, case, rx)
}

pub fn approx_p_with(k: &ApproxConstants, cfg: &ScenarioConfig, case: CaseLabel, rx: ReceiverSpec) -> Result<ApproxP> {
    check_rho(cfg)?;
    let rho = cfg.rho;
    let t = cfg.t_threshold;
    let lv = cfg.l_v;
    let f = (1.0 + t) / (1.0 + (1.0 - rho) * t);
    let xi = k.xi(rho);
    let busy = k.busy_term(rho);
    let ln_f = f.ln();
    let ln_busy = (1.0 - rho).ln();
    let lead_b = rho / (2.0 * (1.0 - rho) * t);
    // Logarithms throughout: growing and decaying factors cancel at large r.
    let ln_raw = match (case, rx) {
        (CaseLabel::A | CaseLabel::C, ReceiverSpec::QueueVehicle { i, .. }) => {
            let rd = running_rate(k, cfg, lambda_y_for(case, cfg));
            ln_f - ln_busy + (2.0 * xi - rd * lv) * i as f64
        }
        (CaseLabel::A | CaseLabel::C, ReceiverSpec::RunningX { r, .. }) => {
            let rd = running_rate(k, cfg, lambda_y_for(case, cfg));
            ln_f + (2.0 * xi / lv - rd) * r
        }
        (CaseLabel::A, ReceiverSpec::RunningY { r }) => {
            let rd = running_rate(k, cfg, cfg.lambda_y);
            -2.0 * r / lv * ln_busy + ln_f + (2.0 * xi / lv - 2.0 * busy / lv - rd) * r
        }
        (CaseLabel::B, ReceiverSpec::QueueVehicle { i, side }) => {
            if side == Some(Side::Positive) {
                return Err(Error::Unsupported("case B has no queued vehicles beyond the queue end".into()));
            }
            let i = i as f64;
            let rx_rate = cfg.rho_0 * cfg.lambda_x * k.c_x;
            lead_b + (i - 0.5) * ln_busy + ln_f + (k.beta(rho) - rx_rate * lv) * i
        }
        (CaseLabel::B, ReceiverSpec::RunningX { r, side: Side::Negative }) => {
            let rx_rate = cfg.rho_0 * cfg.lambda_x * k.c_x;
            lead_b + (r / lv + 0.5) * ln_busy + ln_f + (k.beta(rho) / lv - rx_rate) * r
        }
        (CaseLabel::B, ReceiverSpec::RunningX { r, side: Side::Positive }) => {
            let rx_rate = cfg.rho_0 * cfg.lambda_x * k.c_x;
            0.5 * ln_f - r / lv * ln_busy + (xi / lv - busy / lv - rx_rate) * r
        }
        (CaseLabel::B | CaseLabel::C, ReceiverSpec::RunningY { .. }) => {
            return Err(Error::Unsupported(format!("case {case} has no approximation for y-street receivers")));
        }
    };
    let raw = ln_raw.exp();
    Ok(finish(raw, cfg))
}

/// Sum of a geometric series Σ_{i≥1} g^i, or an error if it diverges.
fn geometric(g: f64, what: &str) -> Result<f64> {
    if !(g < 1.0) {
        return Err(Error::Divergent(format!("{what}: geometric ratio {g} is not below 1")));
    }
    Ok(g / (1.0 - g))
}

/// ∫_0^∞ e^{k r/lv} dr / lv = 1/(−k), or an error if k ≥ 0.
fn exp_integral(k: f64, what: &str) -> Result<f64> {
    if !(k < 0.0) {
        return Err(Error::Divergent(format!("{what}: decay exponent {k} is not negative")));
    }
    Ok(-1.0 / k)
}

pub fn approx_mean(cfg: &ScenarioConfig, case: CaseLabel) -> Result<MeanReceiverBreakdown> {
    let k = ApproxConstants::for_config(cfg)?;
    approx_mean_with(&k, cfg, case)
}

pub fn approx_mean_with(k: &ApproxConstants, cfg: &ScenarioConfig, case: CaseLabel) -> Result<MeanReceiverBreakdown> {
    check_rho(cfg)?;
    let rho = cfg.rho;
    let t = cfg.t_threshold;
    let lv = cfg.l_v;
    let f = (1.0 + t) / (1.0 + (1.0 - rho) * t);
    let xi = k.xi(rho);
    let busy = k.busy_term(rho);
    let run_w = 1.0 - cfg.rho_0;
    match case {
        CaseLabel::A | CaseLabel::C => {
            let ly = lambda_y_for(case, cfg);
            let rd = running_rate(k, cfg, ly) * lv;
            let expo = 2.0 * xi - rd;
            let m_q = 2.0 * f * geometric(expo.exp(), "queue receivers")?;
            let m_rx = 2.0 * run_w * cfg.lambda_x * lv * f * exp_integral(expo, "x-street receivers")?;
            let m_ry = if case == CaseLabel::A {
                let e = 2.0 * xi - 2.0 * (1.0 - rho).ln() - 2.0 * busy - rd;
                2.0 * run_w * ly * lv * f * exp_integral(e, "y-street receivers")?
            } else {
                0.0
            };
            Ok(MeanReceiverBreakdown { m_q, m_rx, m_ry })
        }
        CaseLabel::B => {
            let rx = cfg.rho_0 * cfg.lambda_x * k.c_x * lv;
            let beta = k.beta(rho);
            let pre = (1.0 - rho).sqrt() * (rho / (2.0 * (1.0 - rho) * t)).exp() * f;
            let m_q = pre * geometric((1.0 - rho) * (beta - rx).exp(), "queue receivers")?;
            let inner = pre * run_w * cfg.lambda_x * lv * exp_integral(beta + (1.0 - rho).ln() - rx, "x-street receivers")?;
            let outer = run_w
                * cfg.lambda_x
                * lv
                * f.sqrt()
                * exp_integral(xi - (1.0 - rho).ln() - busy - rx, "x-street receivers")?;
            Ok(MeanReceiverBreakdown { m_q, m_rx: inner + outer, m_ry: 0.0 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;

    fn reference_cfg() -> ScenarioConfig {
        ScenarioConfig::reference()
    }

    #[test]
    fn kappa_values_match_integral_oracle() {
        let q = QuadratureSpec::default();
        for alpha in [2u32, 3, 4, 5, 8] {
            let a = alpha as f64;
            let i1 = a * integrate(|x: f64| x.powf(a - 2.0) / (1.0 + x.powf(a)), 0.0, 1.0, &q).unwrap().value;
            let i2 = a * integrate(|x: f64| x.powf(a) / (1.0 + x.powf(a)), 0.0, 1.0, &q).unwrap().value;
            let (k1, k2) = kappas(alpha);
            assert!((k1 - i1).abs() < 1e-9, "alpha {alpha}: {k1} vs {i1}");
            assert!((k2 - i2).abs() < 1e-9, "alpha {alpha}: {k2} vs {i2}");
            assert!(k1 > k2 && k2 > 0.0);
        }
        // α = 2 closed forms: κ1 = π/2, κ2 = 2 − π/2.
        let (k1, k2) = kappas(2);
        assert!((k1 - PI / 2.0).abs() < 1e-10);
        assert!((k2 - (2.0 - PI / 2.0)).abs() < 1e-10);
    }

    #[test]
    fn c_constants_match_quadrature() {
        let q = QuadratureSpec::default();
        let t = 31.62;
        let (cx, cy) = c_constants(4, t, &q).unwrap();
        assert!((cx - t.powf(0.25) * PI / 2f64.sqrt()).abs() < 1e-12);
        assert!((cx - 5.268).abs() < 1e-3);
        let oracle = 2.0 * integrate(|y: f64| t / ((y * y + 1.0).powi(2) + t), 0.0, 200.0, &q).unwrap().value
            + 2.0 * integrate_to_infinity(|y: f64| t / ((y * y + 1.0).powi(2) + t), 200.0, 200.0, &q).unwrap().value;
        assert!((cy - oracle).abs() < 1e-8);
        let (_, cy2) = c_constants(2, t, &q).unwrap();
        let oracle2 = 2.0 * integrate_to_infinity(|y: f64| t / ((y * y + 1.0) + t), 0.0, 10.0, &q).unwrap().value;
        assert!((cy2 - oracle2).abs() < 1e-7);
        let (cx0, cy0) = c_constants(4, 1e-12, &q).unwrap();
        assert!(cx0 < 1e-2 && cy0 < 1e-10);
    }

    #[test]
    fn xi_and_beta_values() {
        let v = xi(4, 31.62, 0.1);
        assert!((v - (-0.27389)).abs() < 1e-4, "{v}");
        assert!(xi(4, 31.62, 1e-12).abs() < 1e-10);
        let b = beta(4, 31.62, 0.1);
        assert!((b - (v + 0.1 / (0.9 * 5.0 * 31.62))).abs() < 1e-15);
        assert!(b > v);
        assert!(beta(4, 31.62, 1e-12).abs() < 1e-10);
    }

    #[test]
    fn case_c_trivial_limit() {
        let mut c = reference_cfg().with_rho(1e-15).with_lambda(0.0, 0.0);
        c.rho_0 = 0.0;
        for i in [1, 5, 10] {
            let p = approx_p(&c, CaseLabel::C, ReceiverSpec::queue(i)).unwrap();
            assert!((p.raw - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_ratio_case_a() {
        let c = reference_cfg();
        let k = ApproxConstants::for_config(&c).unwrap();
        let g = (2.0 * k.xi(0.1) - c.rho_0 * (c.lambda_x * k.c_x + c.lambda_y * k.c_y) * c.l_v).exp();
        let p: Vec<f64> = (1..=20).map(|i| approx_p(&c, CaseLabel::A, ReceiverSpec::queue(i)).unwrap().raw).collect();
        for w in p.windows(2) {
            assert!((w[1] / w[0] - g).abs() < 1e-12);
        }
    }

    #[test]
    fn case_c_equals_case_a_without_y_street() {
        let c = reference_cfg();
        let c0 = c.with_lambda(c.lambda_x, 0.0);
        for i in [1, 4, 9] {
            let pc = approx_p(&c, CaseLabel::C, ReceiverSpec::queue(i)).unwrap().raw;
            let pa = approx_p(&c0, CaseLabel::A, ReceiverSpec::queue(i)).unwrap().raw;
            assert_eq!(pc, pa);
        }
        let mc = approx_mean(&c, CaseLabel::C).unwrap();
        let ma = approx_mean(&c0, CaseLabel::A).unwrap();
        assert_eq!(mc.m_q, ma.m_q);
        assert_eq!(mc.m_rx, ma.m_rx);
        assert_eq!(mc.m_ry, 0.0);
    }

    #[test]
    fn mean_queue_part_is_summed_series() {
        let c = reference_cfg();
        for case in CaseLabel::ALL {
            let m = approx_mean(&c, case).unwrap();
            let mut sum = 0.0;
            for i in 1..=10_000u32 {
                sum += approx_p(&c, case, ReceiverSpec::queue(i)).unwrap().raw;
            }
            let sides = if case == CaseLabel::B { 1.0 } else { 2.0 };
            let series = sides * (1.0 - c.rho) * sum;
            assert!((m.m_q - series).abs() < 1e-10 * series, "{case}: {} vs {series}", m.m_q);
        }
    }

    #[test]
    fn mean_running_parts_are_integrals() {
        let c = reference_cfg();
        let q = QuadratureSpec::default();
        let int = |case, side: Side| {
            integrate_to_infinity(
                |r: f64| approx_p(&c, case, ReceiverSpec::RunningX { r, side }).unwrap().raw,
                0.0,
                50.0,
                &q,
            )
            .unwrap()
            .value
        };
        let w = (1.0 - c.rho_0) * c.lambda_x;
        let a = approx_mean(&c, CaseLabel::A).unwrap();
        assert!((a.m_rx - 2.0 * w * int(CaseLabel::A, Side::Positive)).abs() < 1e-8);
        let b = approx_mean(&c, CaseLabel::B).unwrap();
        let both = w * (int(CaseLabel::B, Side::Negative) + int(CaseLabel::B, Side::Positive));
        assert!((b.m_rx - both).abs() < 1e-8);
        let y = integrate_to_infinity(
            |r: f64| approx_p(&c, CaseLabel::A, ReceiverSpec::RunningY { r }).unwrap().raw,
            0.0,
            50.0,
            &q,
        )
        .unwrap()
        .value;
        assert!((a.m_ry - 2.0 * (1.0 - c.rho_0) * c.lambda_y * y).abs() < 1e-8);
    }

    #[test]
    fn b_and_c_have_no_y_receivers() {
        let c = reference_cfg();
        assert_eq!(approx_mean(&c, CaseLabel::B).unwrap().m_ry, 0.0);
        assert_eq!(approx_mean(&c, CaseLabel::C).unwrap().m_ry, 0.0);
        for case in [CaseLabel::B, CaseLabel::C] {
            let e = approx_p(&c, case, ReceiverSpec::RunningY { r: 10.0 }).unwrap_err();
            assert!(matches!(e, Error::Unsupported(_)));
        }
    }

    #[test]
    fn clamps_and_flags() {
        let c = reference_cfg().with_rho(0.5);
        let p = approx_p(&c, CaseLabel::A, ReceiverSpec::RunningX { r: 0.01, side: Side::Positive }).unwrap();
        assert!(p.clamped && p.value == 1.0 && p.raw > 1.0);
        let hi = approx_p(&reference_cfg().with_rho(0.99), CaseLabel::A, ReceiverSpec::queue(1)).unwrap();
        assert!(hi.outside_regime);
    }

    #[test]
    fn divergence_reported() {
        let mut c = reference_cfg().with_lambda(0.0, 0.0);
        c.rho = 1e-300;
        assert!(matches!(approx_mean(&c, CaseLabel::C), Err(Error::Divergent(_))));
    }

    #[test]
    fn rejects_fractional_alpha() {
        let mut c = reference_cfg();
        c.alpha = 3.5;
        assert!(matches!(approx_p(&c, CaseLabel::A, ReceiverSpec::queue(1)), Err(Error::Unsupported(_))));
    }
}
