//! Exact success probability and mean receiver count: finite products over
//! the queue and line integrals over the Poisson-distributed running vehicles.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{
    queue_range, resolve, Link, MeanReceiverBreakdown, Point, ReceiverSpec, ScenarioConfig, TransmitterLocation,
};
use crate::quad::{integrate_points, integrate_to_infinity, QuadratureSpec};

/// Laplace transform of the queue interference seen at `rx`.
///
/// Queue slot m (−n− ≤ m ≤ n+) sits at (m·lv, 0). Slots listed in `exclude`
/// (the transmitter, and the receiver if it is queued) contribute nothing.
pub fn laplace_queue(cfg: &ScenarioConfig, rx: Point, s: f64, exclude: &[i64]) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::Invalid("Laplace argument must be nonnegative".into()));
    }
    let mut v = 1.0;
    for m in queue_range(cfg) {
        if exclude.contains(&m) {
            continue;
        }
        let dm = rx.dist(&Point { x: m as f64 * cfg.l_v, y: 0.0 });
        if dm == 0.0 {
            return Err(Error::Coincident(m));
        }
        v *= cfg.rho / (1.0 + s / (cfg.mu * dm.powf(cfg.alpha))) + 1.0 - cfg.rho;
    }
    Ok(v)
}

/// ∫_0^∞ du / (u^α + 1) = (π/α) / sin(π/α).
pub fn unit_line_integral(alpha: f64) -> f64 {
    let t = PI / alpha;
    t / t.sin()
}

/// ∫_ℝ a / ((y² + h²)^{α/2} + a) dy for a street at perpendicular offset h.
pub fn line_interference_integral(alpha: f64, a: f64, h: f64, quad: &QuadratureSpec) -> Result<f64> {
    if a == 0.0 {
        return Ok(0.0);
    }
    if h == 0.0 {
        return Ok(2.0 * a.powf(1.0 / alpha) * unit_line_integral(alpha));
    }
    let h2 = h * h;
    let scale = h.max(a.powf(1.0 / alpha));
    let r = integrate_to_infinity(|y: f64| a / ((y * y + h2).powf(alpha / 2.0) + a), 0.0, scale, quad)?;
    Ok(2.0 * r.value)
}

fn laplace_line(cfg: &ScenarioConfig, lambda: f64, h: f64, s: f64, quad: &QuadratureSpec) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::Invalid("Laplace argument must be nonnegative".into()));
    }
    if lambda == 0.0 || cfg.rho_0 == 0.0 || s == 0.0 {
        return Ok(1.0);
    }
    let i = line_interference_integral(cfg.alpha, s / cfg.mu, h, quad)?;
    Ok((-cfg.rho_0 * lambda * i).exp())
}

/// Laplace transform of the x-street running interference. The street is
/// translation invariant, so the receiver position along it does not matter.
pub fn laplace_running_x(cfg: &ScenarioConfig, s: f64, quad: &QuadratureSpec) -> Result<f64> {
    laplace_line(cfg, cfg.lambda_x, 0.0, s, quad)
}

/// Laplace transform of the y-street running interference for a receiver on
/// the x-street at distance `d` from the intersection.
pub fn laplace_running_y(cfg: &ScenarioConfig, d: f64, s: f64, quad: &QuadratureSpec) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Invalid("distance from the intersection must be nonnegative".into()));
    }
    laplace_line(cfg, cfg.lambda_y, d, s, quad)
}

/// The three independent Laplace factors of the success probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceFactors {
    pub queue: f64,
    pub running_x: f64,
    pub running_y: f64,
}

impl LaplaceFactors {
    pub fn product(&self) -> f64 {
        self.queue * self.running_x * self.running_y
    }
}

pub fn laplace_factors(cfg: &ScenarioConfig, link: &Link, quad: &QuadratureSpec) -> Result<LaplaceFactors> {
    let r = link.distance();
    if r == 0.0 {
        return Err(Error::Invalid("transmitter and receiver coincide".into()));
    }
    let s = cfg.mu * cfg.t_threshold * r.powf(cfg.alpha);
    let mut exclude = Vec::with_capacity(2);
    exclude.extend(link.tx_index);
    exclude.extend(link.rx_index);
    let queue = laplace_queue(cfg, link.rx, s, &exclude)?;
    let rx = link.rx;
    let (running_x, running_y) = if rx.y == 0.0 {
        (laplace_line(cfg, cfg.lambda_x, 0.0, s, quad)?, laplace_line(cfg, cfg.lambda_y, rx.x.abs(), s, quad)?)
    } else if rx.x == 0.0 {
        (laplace_line(cfg, cfg.lambda_x, rx.y.abs(), s, quad)?, laplace_line(cfg, cfg.lambda_y, 0.0, s, quad)?)
    } else {
        return Err(Error::Invalid("receiver must lie on one of the two streets".into()));
    };
    Ok(LaplaceFactors { queue, running_x, running_y })
}

pub fn success_prob_link(cfg: &ScenarioConfig, link: &Link, quad: &QuadratureSpec) -> Result<f64> {
    Ok(laplace_factors(cfg, link, quad)?.product())
}

/// Probability that the tagged receiver decodes the tagged transmitter.
pub fn success_prob(
    cfg: &ScenarioConfig,
    tx: TransmitterLocation,
    rx: ReceiverSpec,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let link = resolve(cfg, tx, rx)?;
    success_prob_link(cfg, &link, quad)
}

/// Mean number of successful receivers for the queued transmitter at index `d`,
/// together with the accumulated numerical error estimate.
pub fn mean_receivers_with_error(
    cfg: &ScenarioConfig,
    d: u32,
    quad: &QuadratureSpec,
) -> Result<(MeanReceiverBreakdown, f64)> {
    if d > cfg.n_plus {
        return Err(Error::Invalid(format!("transmitter index {d} exceeds n_plus = {}", cfg.n_plus)));
    }
    let d = d as i64;
    let txp = Point { x: d as f64 * cfg.l_v, y: 0.0 };
    let mut sum_q = 0.0;
    for i in queue_range(cfg) {
        if i == d {
            continue;
        }
        let link = Link { tx: txp, tx_index: Some(d), rx: Point { x: i as f64 * cfg.l_v, y: 0.0 }, rx_index: Some(i) };
        sum_q += success_prob_link(cfg, &link, quad)?;
    }
    let m_q = (1.0 - cfg.rho) * sum_q;

    let mut err = 0.0;
    let mut failure = None;
    let mut p_at = |rx: Point| -> f64 {
        let link = Link { tx: txp, tx_index: Some(d), rx, rx_index: None };
        match success_prob_link(cfg, &link, quad) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };

    let m_rx = if cfg.lambda_x > 0.0 {
        let lo = -(cfg.n_minus as f64) * cfg.l_v;
        let hi = cfg.n_plus as f64 * cfg.l_v;
        let mut pts: Vec<f64> = queue_range(cfg).map(|m| m as f64 * cfg.l_v).collect();
        if pts.len() < 2 {
            pts = vec![lo - cfg.l_v, hi + cfg.l_v];
        }
        let decay = 1.0 / (cfg.rho_0.max(1e-3) * cfg.lambda_x * 10.0);
        let mut f = |x: f64| p_at(Point { x, y: 0.0 });
        let mid = integrate_points(&mut f, &pts, quad)?;
        let right = integrate_to_infinity(|x| p_at(Point { x, y: 0.0 }), pts[pts.len() - 1], decay, quad)?;
        let left = integrate_to_infinity(|x| p_at(Point { x: -x, y: 0.0 }), -pts[0], decay, quad)?;
        err += mid.abs_err + left.abs_err + right.abs_err;
        (1.0 - cfg.rho_0) * cfg.lambda_x * (mid.value + left.value + right.value)
    } else {
        0.0
    };

    let m_ry = if cfg.lambda_y > 0.0 {
        let decay = 1.0 / (cfg.rho_0.max(1e-3) * cfg.lambda_y * 10.0);
        let near = (cfg.l_v * (cfg.n_plus.max(cfg.n_minus) as f64)).max(cfg.l_v);
        let mut f = |y: f64| p_at(Point { x: 0.0, y });
        let head = integrate_points(&mut f, &[0.0, near], quad)?;
        let tail = integrate_to_infinity(|y| p_at(Point { x: 0.0, y }), near, decay, quad)?;
        err += 2.0 * (head.abs_err + tail.abs_err);
        (1.0 - cfg.rho_0) * cfg.lambda_y * 2.0 * (head.value + tail.value)
    } else {
        0.0
    };
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((MeanReceiverBreakdown { m_q, m_rx, m_ry }, err))
}

pub fn mean_receivers(cfg: &ScenarioConfig, d: u32, quad: &QuadratureSpec) -> Result<MeanReceiverBreakdown> {
    Ok(mean_receivers_with_error(cfg, d, quad)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Side;
    use std::f64::consts::SQRT_2;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn queue_single_factor() {
        let mut c = ScenarioConfig::reference();
        c.n_plus = 1;
        c.n_minus = 0;
        c.t_threshold = 31.62;
        let s = 31.62 * 6f64.powi(4);
        let v = laplace_queue(&c, Point { x: 12.0, y: 0.0 }, s, &[0]).unwrap();
        assert!((v - (0.1 / (1.0 + 31.62) + 0.9)).abs() < 1e-12);
        assert!((v - 0.90307).abs() < 1e-5);
    }

    #[test]
    fn queue_trivial_cases() {
        let c = ScenarioConfig::reference();
        let p = Point { x: 3.0, y: 0.0 };
        assert_eq!(laplace_queue(&c, p, 0.0, &[]).unwrap(), 1.0);
        assert_eq!(laplace_queue(&c.with_rho(0.0), p, 1e9, &[]).unwrap(), 1.0);
        let e = laplace_queue(&c, Point { x: 6.0, y: 0.0 }, 1.0, &[0]).unwrap_err();
        assert!(matches!(e, Error::Coincident(1)));
    }

    #[test]
    fn running_x_closed_form() {
        let mut c = ScenarioConfig::reference();
        c.t_threshold = 31.62;
        let s = 31.62 * 6f64.powi(4);
        let v = laplace_running_x(&c, s, &q()).unwrap();
        let expect = (-0.1 * 0.025 * 31.62f64.powf(0.25) * 6.0 * PI / SQRT_2).exp();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.92402).abs() < 1e-5);
        assert_eq!(laplace_running_x(&c, 0.0, &q()).unwrap(), 1.0);
        c.rho_0 = 0.0;
        assert_eq!(laplace_running_x(&c, s, &q()).unwrap(), 1.0);
    }

    #[test]
    fn closed_form_line_integral_matches_quadrature() {
        for alpha in [2.5, 3.0, 4.0, 5.5] {
            let quad = integrate_to_infinity(|u: f64| 1.0 / (u.powf(alpha) + 1.0), 0.0, 1.0, &q()).unwrap();
            assert!((quad.value - unit_line_integral(alpha)).abs() < 1e-8, "alpha {alpha}");
        }
    }

    #[test]
    fn running_y_at_zero_offset_equals_running_x() {
        let c = ScenarioConfig::reference();
        let s = c.t_threshold * 30f64.powi(4);
        let y = laplace_running_y(&c, 0.0, s, &q()).unwrap();
        let x = laplace_running_x(&c, s, &q()).unwrap();
        assert!((x - y).abs() < 1e-14);
        // Offset approaching zero through the quadrature path.
        let y_small = laplace_running_y(&c, 1e-6, s, &q()).unwrap();
        assert!((x - y_small).abs() < 1e-8);
        let mut c0 = c;
        c0.lambda_y = 0.0;
        assert_eq!(laplace_running_y(&c0, 10.0, s, &q()).unwrap(), 1.0);
        assert_eq!(laplace_running_y(&c, 10.0, 0.0, &q()).unwrap(), 1.0);
    }

    #[test]
    fn no_interference_means_certain_success() {
        let c = ScenarioConfig::reference().with_rho(0.0);
        let mut c = c;
        c.rho_0 = 0.0;
        for rx in [ReceiverSpec::queue(3), ReceiverSpec::RunningX { r: 50.0, side: Side::Positive }, ReceiverSpec::RunningY { r: 20.0 }] {
            for tx in [TransmitterLocation::Intersection, TransmitterLocation::QueueEnd, TransmitterLocation::QueueMiddle] {
                assert_eq!(success_prob(&c, tx, rx, &q()).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn factorization() {
        let c = ScenarioConfig::reference();
        let link = resolve(&c, TransmitterLocation::QueueEnd, ReceiverSpec::queue(4)).unwrap();
        let f = laplace_factors(&c, &link, &q()).unwrap();
        let s = c.t_threshold * 24f64.powi(4);
        let lq = laplace_queue(&c, link.rx, s, &[25, 21]).unwrap();
        let lx = laplace_running_x(&c, s, &q()).unwrap();
        let ly = laplace_running_y(&c, 21.0 * 6.0, s, &q()).unwrap();
        assert!((f.product() - lq * lx * ly).abs() < 1e-15);
    }

    #[test]
    fn y_receiver_uses_own_street_as_translation_invariant() {
        let c = ScenarioConfig::reference();
        let link = resolve(&c, TransmitterLocation::Intersection, ReceiverSpec::RunningY { r: 30.0 }).unwrap();
        let f = laplace_factors(&c, &link, &q()).unwrap();
        let s = c.t_threshold * 30f64.powi(4);
        assert!((f.running_y - laplace_running_x(&c, s, &q()).unwrap()).abs() < 1e-14);
        assert!((f.running_x - laplace_running_y(&c, 30.0, s, &q()).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn mean_receivers_trivial_limits() {
        let c = ScenarioConfig::reference().with_lambda(0.0, 0.0);
        let m = mean_receivers(&c, 0, &q()).unwrap();
        assert_eq!(m.m_rx, 0.0);
        assert_eq!(m.m_ry, 0.0);
        let m = mean_receivers(&c.with_rho(1.0), 0, &q()).unwrap();
        assert_eq!(m.m_q, 0.0);
        assert!(mean_receivers(&c, 26, &q()).is_err());
    }

    #[test]
    fn mean_receivers_reference_values() {
        // Values cross-checked with an independent implementation.
        let c = ScenarioConfig::reference();
        let a = mean_receivers(&c, 0, &q()).unwrap();
        assert!((a.m_q - 2.275).abs() < 2e-3, "{a:?}");
        assert!((a.m_rx - 0.437).abs() < 2e-3, "{a:?}");
        assert!((a.m_ry - 0.473).abs() < 2e-3, "{a:?}");
        let b = mean_receivers(&c, 25, &q()).unwrap();
        assert!((b.m_q - 1.771).abs() < 2e-3, "{b:?}");
        assert!((b.m_rx - 0.861).abs() < 2e-3, "{b:?}");
        assert!(a.m_q <= 50.0 && b.m_ry >= 0.0);
    }
}
