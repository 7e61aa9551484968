//! Broadcast-rate optimization of D(ρ) = ρ·M̄(ρ), lookup tables of ρ* over
//! traffic intensities, and interpolation between the three reference
//! transmitter positions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{approx_mean_with, approx_p_with, ApproxConstants, CaseLabel};
use crate::error::{Error, Result};
use crate::exact::mean_receivers;
use crate::model::{per_km_to_per_m, ReceiverSpec, ScenarioConfig};
use crate::quad::QuadratureSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Exact,
    Approx,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(Engine::Exact),
            "approx" => Ok(Engine::Approx),
            other => Err(Error::Invalid(format!("unknown engine '{other}'"))),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Exact => "exact",
            Engine::Approx => "approx",
        })
    }
}

/// Evaluates D(ρ) for one scenario; the approximation constants are cached.
pub struct Objective<'a> {
    cfg: &'a ScenarioConfig,
    case: CaseLabel,
    engine: Engine,
    quad: QuadratureSpec,
    consts: Option<ApproxConstants>,
}

impl<'a> Objective<'a> {
    pub fn new(cfg: &'a ScenarioConfig, case: CaseLabel, engine: Engine) -> Result<Self> {
        let consts = match engine {
            Engine::Approx => Some(ApproxConstants::for_config(cfg)?),
            Engine::Exact => None,
        };
        Ok(Objective { cfg, case, engine, quad: QuadratureSpec::default(), consts })
    }

    pub fn mean_total(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Invalid(format!("rho = {rho} outside (0, 1)")));
        }
        let cfg = self.cfg.with_rho(rho);
        let m = match (self.engine, &self.consts) {
            (Engine::Approx, Some(k)) => approx_mean_with(k, &cfg, self.case)?,
            _ => mean_receivers(&cfg, self.case.queue_index(&cfg), &self.quad)?,
        };
        Ok(m.total())
    }

    pub fn eval(&self, rho: f64) -> Result<f64> {
        Ok(rho * self.mean_total(rho)?)
    }
}

/// ρ times the mean number of successful receivers at rate ρ.
pub fn objective(cfg: &ScenarioConfig, case: CaseLabel, rho: f64, engine: Engine) -> Result<f64> {
    Objective::new(cfg, case, engine)?.eval(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeSpec {
    /// Search over (lo, hi]; the coarse grid starts at lo + step.
    pub lo: f64,
    pub hi: f64,
    pub grid_step: f64,
    pub tol: f64,
}

impl Default for OptimizeSpec {
    fn default() -> Self {
        OptimizeSpec { lo: 0.0, hi: 0.5, grid_step: 0.01, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveCurve {
    /// Every evaluated ρ, ascending.
    pub rho_samples: Vec<f64>,
    pub d_values: Vec<f64>,
    pub argmax: f64,
    pub max_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimum {
    pub rho_star: f64,
    pub curve: ObjectiveCurve,
    /// max/min of D over the grid is below 1.001.
    pub flat: bool,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Grid scan followed by golden-section refinement around the best grid point.
pub fn optimize_rho(cfg: &ScenarioConfig, case: CaseLabel, engine: Engine, spec: &OptimizeSpec) -> Result<Optimum> {
    if !(spec.lo >= 0.0 && spec.lo < spec.hi && spec.hi < 1.0) {
        return Err(Error::Invalid(format!("optimization domain ({}, {}] must lie in (0, 1)", spec.lo, spec.hi)));
    }
    if !(spec.grid_step > 0.0 && spec.tol > 0.0) {
        return Err(Error::Invalid("grid step and tolerance must be positive".into()));
    }
    let obj = Objective::new(cfg, case, engine)?;
    let n = ((spec.hi - spec.lo) / spec.grid_step - 1e-9).ceil() as usize;
    let mut samples: Vec<(f64, f64)> = Vec::with_capacity(n + 40);
    for k in 1..=n {
        let rho = (spec.lo + k as f64 * spec.grid_step).min(spec.hi);
        samples.push((rho, obj.eval(rho)?));
    }
    let (gmin, gmax) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, v)| (a.min(v), b.max(v)));
    let flat = !(gmax > 1.001 * gmin);

    if !flat {
        let best = argmax(&samples);
        let mut a = (best - spec.grid_step).max(spec.lo + 0.5 * spec.tol);
        let mut b = (best + spec.grid_step).min(spec.hi);
        let mut x1 = b - GOLDEN * (b - a);
        let mut x2 = a + GOLDEN * (b - a);
        let mut f1 = obj.eval(x1)?;
        let mut f2 = obj.eval(x2)?;
        samples.push((x1, f1));
        samples.push((x2, f2));
        while b - a > spec.tol {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + GOLDEN * (b - a);
                f2 = obj.eval(x2)?;
                samples.push((x2, f2));
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - GOLDEN * (b - a);
                f1 = obj.eval(x1)?;
                samples.push((x1, f1));
            }
        }
    }
    samples.sort_by(|p, q| p.0.total_cmp(&q.0));
    samples.dedup_by(|p, q| p.0 == q.0);
    // A flat objective has no meaningful interior optimum: take the upper end.
    let (rho_star, max_value) = if flat {
        *samples.last().expect("grid is nonempty")
    } else {
        let k = argmax_index(&samples);
        samples[k]
    };
    let (rho_samples, d_values) = samples.into_iter().unzip();
    Ok(Optimum { rho_star, curve: ObjectiveCurve { rho_samples, d_values, argmax: rho_star, max_value }, flat })
}

fn argmax_index(s: &[(f64, f64)]) -> usize {
    let mut k = 0;
    for (j, p) in s.iter().enumerate() {
        if p.1 > s[k].1 {
            k = j;
        }
    }
    k
}

fn argmax(s: &[(f64, f64)]) -> f64 {
    s[argmax_index(s)].0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub ix: usize,
    pub iy: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub alpha: f64,
    pub t_threshold_db: f64,
    pub rho_0: f64,
    pub case: CaseLabel,
    pub engine: Engine,
    pub generated_at: String,
    #[serde(default)]
    pub failures: Vec<CellFailure>,
}

/// ρ* over a grid of intensities. `rho_star[ix][iy]` belongs to
/// (lambda_x_grid[ix], lambda_y_grid[iy]); failed cells are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub meta: TableMeta,
    pub lambda_x_grid: Vec<f64>,
    pub lambda_y_grid: Vec<f64>,
    pub rho_star: Vec<Vec<Option<f64>>>,
}

fn check_grid(g: &[f64], name: &str) -> Result<()> {
    if g.is_empty() {
        return Err(Error::Invalid(format!("{name} grid is empty")));
    }
    if g.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Invalid(format!("{name} grid must be ascending and nonnegative")));
    }
    Ok(())
}

/// Optimizes every cell of the grid (intensities in 1/km). Cells run in
/// parallel; a failing cell leaves a hole instead of aborting the table.
pub fn build_table(
    template: &ScenarioConfig,
    lambda_x_grid: &[f64],
    lambda_y_grid: &[f64],
    case: CaseLabel,
    engine: Engine,
    spec: &OptimizeSpec,
    generated_at: String,
) -> Result<RateTable> {
    check_grid(lambda_x_grid, "lambda_x")?;
    check_grid(lambda_y_grid, "lambda_y")?;
    let ny = lambda_y_grid.len();
    let cells: Vec<std::result::Result<f64, String>> = (0..lambda_x_grid.len() * ny)
        .into_par_iter()
        .map(|k| {
            let (ix, iy) = (k / ny, k % ny);
            let cfg = template.with_lambda(per_km_to_per_m(lambda_x_grid[ix]), per_km_to_per_m(lambda_y_grid[iy]));
            optimize_rho(&cfg, case, engine, spec).map(|o| o.rho_star).map_err(|e| e.to_string())
        })
        .collect();
    let mut rho_star = vec![vec![None; ny]; lambda_x_grid.len()];
    let mut failures = Vec::new();
    for (k, c) in cells.into_iter().enumerate() {
        let (ix, iy) = (k / ny, k % ny);
        match c {
            Ok(v) => rho_star[ix][iy] = Some(v),
            Err(message) => failures.push(CellFailure { ix, iy, message }),
        }
    }
    Ok(RateTable {
        meta: TableMeta {
            alpha: template.alpha,
            t_threshold_db: crate::model::linear_to_db(template.t_threshold),
            rho_0: template.rho_0,
            case,
            engine,
            generated_at,
            failures,
        },
        lambda_x_grid: lambda_x_grid.to_vec(),
        lambda_y_grid: lambda_y_grid.to_vec(),
        rho_star,
    })
}

impl RateTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: RateTable = serde_json::from_str(text)?;
        check_grid(&t.lambda_x_grid, "lambda_x")?;
        check_grid(&t.lambda_y_grid, "lambda_y")?;
        if t.rho_star.len() != t.lambda_x_grid.len() || t.rho_star.iter().any(|r| r.len() != t.lambda_y_grid.len()) {
            return Err(Error::Invalid("rho_star dimensions do not match the grids".into()));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub rho_star: f64,
    /// The query lay outside the grid hull and was clamped onto it.
    pub clamped: bool,
}

fn bracket(g: &[f64], v: f64) -> (usize, usize, f64, bool) {
    let clamped = v < g[0] || v > g[g.len() - 1];
    let v = v.clamp(g[0], g[g.len() - 1]);
    if g.len() == 1 {
        return (0, 0, 0.0, clamped);
    }
    let j = g.partition_point(|&x| x <= v).clamp(1, g.len() - 1);
    let w = (v - g[j - 1]) / (g[j] - g[j - 1]);
    (j - 1, j, w, clamped)
}

/// Bilinear interpolation in the table (intensities in 1/km).
pub fn lookup(table: &RateTable, lambda_x: f64, lambda_y: f64) -> Result<Lookup> {
    if table.lambda_x_grid.is_empty() || table.lambda_y_grid.is_empty() {
        return Err(Error::Invalid("empty rate table".into()));
    }
    let (x0, x1, wx, cx) = bracket(&table.lambda_x_grid, lambda_x);
    let (y0, y1, wy, cy) = bracket(&table.lambda_y_grid, lambda_y);
    let mut v = 0.0;
    for (i, a) in [(x0, 1.0 - wx), (x1, wx)] {
        for (j, b) in [(y0, 1.0 - wy), (y1, wy)] {
            if a * b == 0.0 {
                continue;
            }
            let cell = table.rho_star[i][j].ok_or_else(|| Error::Invalid(format!("table cell ({i}, {j}) is a hole")))?;
            v += a * b * cell;
        }
    }
    Ok(Lookup { rho_star: v, clamped: cx || cy })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionTarget {
    /// Success probability for the queued receiver `i` slots away.
    P { i: u32 },
    /// Mean number of successful queued receivers.
    MeanQueue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PositionMode {
    /// Piecewise between anchors A (d = 0), C (d = n+/2) and B (d = n+).
    #[default]
    Interpolate,
    /// The line through anchors A and C, extended past C.
    CentralExtrapolate,
}

/// Estimates `target` for a transmitter at queue index `d` from the
/// approximations at the three reference positions: log-linear for p,
/// linear for the mean.
pub fn interpolate_position(cfg: &ScenarioConfig, d: u32, target: PositionTarget, mode: PositionMode) -> Result<f64> {
    let n = cfg.n_plus;
    if n < 2 {
        return Err(Error::Invalid(format!("need n_plus >= 2 for three distinct anchors, got {n}")));
    }
    if d > n {
        return Err(Error::Invalid(format!("transmitter index {d} exceeds n_plus = {n}")));
    }
    let k = ApproxConstants::for_config(cfg)?;
    let anchor = |case: CaseLabel| -> Result<f64> {
        match target {
            PositionTarget::P { i } => Ok(approx_p_with(&k, cfg, case, ReceiverSpec::queue(i))?.value),
            PositionTarget::MeanQueue => Ok(approx_mean_with(&k, cfg, case)?.m_q),
        }
    };
    let log = matches!(target, PositionTarget::P { .. });
    let mid = (n / 2) as f64;
    let d = d as f64;
    let va = anchor(CaseLabel::A)?;
    let vc = anchor(CaseLabel::C)?;
    let (x0, x1, v0, v1) = if mode == PositionMode::CentralExtrapolate || d <= mid {
        (0.0, mid, va, vc)
    } else {
        (mid, n as f64, vc, anchor(CaseLabel::B)?)
    };
    let w = (d - x0) / (x1 - x0);
    if log && v0 > 0.0 && v1 > 0.0 {
        Ok((v0.ln() + w * (v1.ln() - v0.ln())).exp().min(1.0))
    } else {
        Ok((v0 + w * (v1 - v0)).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{approx_mean, approx_p};

    fn reference_cfg() -> ScenarioConfig {
        ScenarioConfig::reference()
    }

    #[test]
    fn objective_is_rho_times_mean() {
        let cfg = reference_cfg();
        let d = objective(&cfg, CaseLabel::C, 0.1, Engine::Approx).unwrap();
        let m = approx_mean(&cfg.with_rho(0.1), CaseLabel::C).unwrap().total();
        assert!((d - 0.1 * m).abs() < 1e-14);
        assert!(objective(&cfg, CaseLabel::C, 1e-6, Engine::Approx).unwrap() < 1e-4);
        assert!(objective(&cfg, CaseLabel::C, 0.0, Engine::Approx).is_err());
    }

    #[test]
    fn optimum_is_argmax_of_curve() {
        for case in CaseLabel::ALL {
            let o = optimize_rho(&reference_cfg(), case, Engine::Approx, &OptimizeSpec::default()).unwrap();
            let c = &o.curve;
            assert!(c.rho_samples.windows(2).all(|w| w[0] < w[1]));
            let best = c.d_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(best, c.max_value);
            let k = c.rho_samples.iter().position(|&r| r == o.rho_star).unwrap();
            assert_eq!(c.d_values[k], best);
            assert!(o.rho_star > 0.0 && o.rho_star <= 0.5);
            assert!(!o.flat);
        }
    }

    #[test]
    fn refinement_beats_grid() {
        let cfg = reference_cfg();
        let o = optimize_rho(&cfg, CaseLabel::C, Engine::Approx, &OptimizeSpec::default()).unwrap();
        let obj = Objective::new(&cfg, CaseLabel::C, Engine::Approx).unwrap();
        for dr in [-2e-4, 2e-4] {
            assert!(obj.eval(o.rho_star + dr).unwrap() <= o.curve.max_value + 1e-12);
        }
    }

    #[test]
    fn empty_streets_match_brute_force() {
        let cfg = reference_cfg().with_lambda(0.0, 0.0).with_queue(10);
        let o = optimize_rho(&cfg, CaseLabel::C, Engine::Exact, &OptimizeSpec::default()).unwrap();
        let obj = Objective::new(&cfg, CaseLabel::C, Engine::Exact).unwrap();
        let (mut best, mut at) = (0.0, 0.0);
        for k in 1..=500 {
            let r = k as f64 * 0.001;
            let v = obj.eval(r).unwrap();
            if v > best {
                (best, at) = (v, r);
            }
        }
        assert!((o.rho_star - at).abs() < 2e-3, "{} vs {at}", o.rho_star);
        assert!(o.curve.max_value >= best - 1e-9);
    }

    #[test]
    fn rejects_bad_domain() {
        let s = OptimizeSpec { lo: 0.5, hi: 0.4, ..Default::default() };
        assert!(optimize_rho(&reference_cfg(), CaseLabel::A, Engine::Approx, &s).is_err());
        let s = OptimizeSpec { hi: 1.0, ..Default::default() };
        assert!(optimize_rho(&reference_cfg(), CaseLabel::A, Engine::Approx, &s).is_err());
    }

    #[test]
    fn single_cell_table_matches_direct_call() {
        let cfg = reference_cfg();
        let spec = OptimizeSpec::default();
        let t = build_table(&cfg, &[25.0], &[25.0], CaseLabel::C, Engine::Approx, &spec, "0".into()).unwrap();
        let o = optimize_rho(&cfg, CaseLabel::C, Engine::Approx, &spec).unwrap();
        assert_eq!(t.rho_star[0][0], Some(o.rho_star));
        assert_eq!(lookup(&t, 25.0, 25.0).unwrap().rho_star, o.rho_star);
        let back = RateTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn case_c_table_ignores_lambda_y() {
        let grid = [10.0, 30.0, 50.0];
        let t = build_table(&reference_cfg(), &grid, &grid, CaseLabel::C, Engine::Approx, &OptimizeSpec::default(), "0".into())
            .unwrap();
        for row in &t.rho_star {
            assert!(row.iter().all(|v| *v == row[0]));
        }
    }

    fn toy_table() -> RateTable {
        RateTable {
            meta: TableMeta {
                alpha: 4.0,
                t_threshold_db: 15.0,
                rho_0: 0.1,
                case: CaseLabel::C,
                engine: Engine::Approx,
                generated_at: "0".into(),
                failures: vec![],
            },
            lambda_x_grid: vec![10.0, 20.0],
            lambda_y_grid: vec![10.0, 20.0, 30.0],
            rho_star: vec![vec![Some(0.1), Some(0.2), Some(0.3)], vec![Some(0.2), Some(0.3), None]],
        }
    }

    #[test]
    fn lookup_bilinear() {
        let t = toy_table();
        assert_eq!(lookup(&t, 10.0, 20.0).unwrap().rho_star, 0.2);
        let m = lookup(&t, 15.0, 15.0).unwrap();
        assert!((m.rho_star - 0.2).abs() < 1e-12 && !m.clamped);
        let c = lookup(&t, 5.0, 12.0).unwrap();
        assert!(c.clamped);
        assert!((c.rho_star - 0.12).abs() < 1e-12);
        assert!(lookup(&t, 20.0, 25.0).is_err());
        let mut e = toy_table();
        e.lambda_x_grid.clear();
        e.rho_star.clear();
        assert!(lookup(&e, 1.0, 1.0).is_err());
    }

    #[test]
    fn position_anchors() {
        let cfg = reference_cfg().with_queue(30);
        let pa = approx_p(&cfg, CaseLabel::A, ReceiverSpec::queue(3)).unwrap().value;
        let pc = approx_p(&cfg, CaseLabel::C, ReceiverSpec::queue(3)).unwrap().value;
        let pb = approx_p(&cfg, CaseLabel::B, ReceiverSpec::queue(3)).unwrap().value;
        let t = PositionTarget::P { i: 3 };
        let at = |d| interpolate_position(&cfg, d, t, PositionMode::Interpolate).unwrap();
        assert!((at(0) - pa).abs() < 1e-15);
        assert!((at(15) - pc).abs() < 1e-15);
        assert!((at(30) - pb).abs() < 1e-15);
        let q = at(7);
        assert!(q >= pa.min(pc) && q <= pa.max(pc));
        // Log-linear: the geometric mean sits halfway.
        let cfg2 = reference_cfg().with_queue(20);
        let a2 = interpolate_position(&cfg2, 0, t, PositionMode::Interpolate).unwrap();
        let c2 = interpolate_position(&cfg2, 10, t, PositionMode::Interpolate).unwrap();
        let h2 = interpolate_position(&cfg2, 5, t, PositionMode::Interpolate).unwrap();
        assert!((h2 - (a2 * c2).sqrt()).abs() < 1e-12);
        let mq = interpolate_position(&cfg2, 5, PositionTarget::MeanQueue, PositionMode::Interpolate).unwrap();
        let ma = approx_mean(&cfg2, CaseLabel::A).unwrap().m_q;
        let mc = approx_mean(&cfg2, CaseLabel::C).unwrap().m_q;
        assert!((mq - 0.5 * (ma + mc)).abs() < 1e-12);
    }

    #[test]
    fn central_extrapolation_continues_the_line() {
        let cfg = reference_cfg().with_queue(20);
        let t = PositionTarget::MeanQueue;
        let a = interpolate_position(&cfg, 0, t, PositionMode::CentralExtrapolate).unwrap();
        let c = interpolate_position(&cfg, 10, t, PositionMode::CentralExtrapolate).unwrap();
        let e = interpolate_position(&cfg, 15, t, PositionMode::CentralExtrapolate).unwrap();
        assert!((e - (c + 0.5 * (c - a))).abs() < 1e-12);
    }

    #[test]
    fn position_needs_three_anchors() {
        let cfg = reference_cfg().with_queue(1);
        assert!(interpolate_position(&cfg, 0, PositionTarget::MeanQueue, PositionMode::Interpolate).is_err());
        assert!(interpolate_position(&reference_cfg(), 26, PositionTarget::MeanQueue, PositionMode::Interpolate).is_err());
    }
}
