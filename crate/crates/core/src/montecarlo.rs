//! Monte Carlo oracle: random scenes, Rayleigh fading and slotted ALOHA
//! transmit states, counted against the SIR threshold.
//!
//! Trials are split into fixed-size chunks. Chunk k draws from the ChaCha8
//! stream k of the seed, so estimates do not depend on the thread count.

use rand::rngs::SmallRng;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{queue_range, resolve, Link, MetricEstimate, Point, ReceiverSpec, ScenarioConfig, TransmitterLocation};

const CHUNK: u64 = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSpec {
    /// Running vehicles are placed on [−W, W] on each street [m].
    pub window_half_width: f64,
    pub n_trials: u64,
    pub seed: u64,
    pub ci_level: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec { window_half_width: 2000.0, n_trials: 100_000, seed: 0, ci_level: 0.95 }
    }
}

impl SimSpec {
    pub fn new(n_trials: u64, seed: u64) -> Self {
        SimSpec { n_trials, seed, ..Default::default() }
    }

    fn check(&self) -> Result<()> {
        if !(self.window_half_width > 0.0) || !self.window_half_width.is_finite() {
            return Err(Error::Invalid("simulation window must be positive".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Invalid("need at least one trial".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Invalid("ci_level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One snapshot of the intersection. Fading is drawn per link when needed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub queue_positions: Vec<f64>,
    pub queue_tx: Vec<bool>,
    pub running_x: Vec<f64>,
    pub running_x_tx: Vec<bool>,
    pub running_y: Vec<f64>,
    pub running_y_tx: Vec<bool>,
}

/// Generator for stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let n: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
    n as usize
}

fn uniform_points<R: Rng>(rng: &mut R, n: usize, w: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-w..w)).collect()
}

pub fn sample_scene<R: Rng>(cfg: &ScenarioConfig, spec: &SimSpec, rng: &mut R) -> Scene {
    let w = spec.window_half_width;
    let queue_positions: Vec<f64> = queue_range(cfg).map(|m| m as f64 * cfg.l_v).collect();
    let queue_tx = queue_positions.iter().map(|_| rng.random_bool(cfg.rho)).collect();
    let nx = poisson(rng, 2.0 * w * cfg.lambda_x);
    let running_x = uniform_points(rng, nx, w);
    let running_x_tx = running_x.iter().map(|_| rng.random_bool(cfg.rho_0)).collect();
    let ny = poisson(rng, 2.0 * w * cfg.lambda_y);
    let running_y = uniform_points(rng, ny, w);
    let running_y_tx = running_y.iter().map(|_| rng.random_bool(cfg.rho_0)).collect();
    Scene { queue_positions, queue_tx, running_x, running_x_tx, running_y, running_y_tx }
}

/// Binomial interval: normal approximation once both outcome counts reach 30,
/// Wilson score otherwise.
pub fn binomial_ci(successes: u64, n: u64, level: f64) -> (f64, f64) {
    let z = z_value(level);
    let nf = n as f64;
    let p = successes as f64 / nf;
    if successes >= 30 && n - successes >= 30 {
        let h = z * (p * (1.0 - p) / nf).sqrt();
        return ((p - h).max(0.0), (p + h).min(1.0));
    }
    let z2 = z * z;
    let den = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / den;
    let h = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / den;
    ((centre - h).max(0.0), (centre + h).min(1.0))
}

/// Two-sided standard normal quantile for `level`.
fn z_value(level: f64) -> f64 {
    if (level - 0.95).abs() < 1e-12 {
        return 1.959_963_984_540_054;
    }
    normal_quantile(0.5 + 0.5 * level)
}

// Acklam's rational approximation, relative error about 1e-9.
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2, 1.383577518672690e2, -3.066479806614716e1, 2.506628277459239];
    const B: [f64; 5] = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838, -2.549732539343734, 4.374664141464968, 2.938163982698783];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let pl = 0.02425;
    if p < pl {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - pl {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

fn chunks(n: u64) -> impl ParallelIterator<Item = (u64, u64)> {
    let k = n.div_ceil(CHUNK);
    (0..k).into_par_iter().map(move |c| (c, CHUNK.min(n - c * CHUNK)))
}

fn interference_possible(cfg: &ScenarioConfig, link: &Link) -> bool {
    let queued = queue_range(cfg).any(|m| Some(m) != link.tx_index && Some(m) != link.rx_index);
    let queue = cfg.rho > 0.0 && queued;
    let running = cfg.rho_0 > 0.0 && (cfg.lambda_x > 0.0 || cfg.lambda_y > 0.0);
    queue || running
}

/// Faded interference from one half of a street: transmitters of intensity
/// `rate` placed outward from coordinate `from` to the window edge.
///
/// Each half-street has its own generator and its points come in order of
/// distance, so a wider window only appends points. Runs with the same seed
/// but different windows are therefore coupled.
fn street(seed: u64, from: f64, w: f64, rate: f64, dist: impl Fn(f64) -> f64, alpha: f64, up: bool) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut i = 0.0;
    let mut pos = from.clamp(-w, w);
    loop {
        let gap: f64 = Exp1.sample(&mut rng);
        pos += if up { gap / rate } else { -gap / rate };
        if pos.abs() > w {
            return i;
        }
        let f: f64 = Exp1.sample(&mut rng);
        i += f * dist(pos).powf(-alpha);
    }
}

/// Success probability of the tagged link.
///
/// Only transmitting running vehicles matter here, so each street is drawn
/// directly as the thinned process of intensity ρ0·λ.
pub fn estimate_p(cfg: &ScenarioConfig, tx: TransmitterLocation, rx: ReceiverSpec, spec: &SimSpec) -> Result<MetricEstimate> {
    spec.check()?;
    let link = resolve(cfg, tx, rx)?;
    let r = link.distance();
    if r == 0.0 {
        return Err(Error::Invalid("transmitter and receiver coincide".into()));
    }
    if !interference_possible(cfg, &link) {
        return Ok(MetricEstimate { value: 1.0, ci_low: 1.0, ci_high: 1.0, n_samples: spec.n_trials, abs_tol: 0.0 });
    }
    let alpha = cfg.alpha;
    let w = spec.window_half_width;
    // Path gains of the queue slots that may interfere.
    let queue_gain: Vec<f64> = queue_range(cfg)
        .filter(|&m| Some(m) != link.tx_index && Some(m) != link.rx_index)
        .map(|m| link.rx.dist(&Point { x: m as f64 * cfg.l_v, y: 0.0 }).powf(-alpha))
        .collect();
    let signal = r.powf(-alpha) / cfg.t_threshold;
    let rate_x = cfg.lambda_x * cfg.rho_0;
    let rate_y = cfg.lambda_y * cfg.rho_0;
    let rho = cfg.rho;
    let rx = link.rx;

    let successes: u64 = chunks(spec.n_trials)
        .map(|(c, len)| {
            let mut rng = rng_stream(spec.seed, c);
            let mut hits = 0u64;
            for _ in 0..len {
                let h: f64 = Exp1.sample(&mut rng);
                let budget = h * signal;
                let mut i = 0.0;
                for g in &queue_gain {
                    if rng.random::<f64>() < rho {
                        let f: f64 = Exp1.sample(&mut rng);
                        i += f * g;
                    }
                }
                let seeds: [u64; 4] = rng.random();
                i += street(seeds[0], rx.x, w, rate_x, |x| (x - rx.x).hypot(rx.y), alpha, true);
                i += street(seeds[1], rx.x, w, rate_x, |x| (x - rx.x).hypot(rx.y), alpha, false);
                i += street(seeds[2], rx.y, w, rate_y, |y| rx.x.hypot(y - rx.y), alpha, true);
                i += street(seeds[3], rx.y, w, rate_y, |y| rx.x.hypot(y - rx.y), alpha, false);
                if budget > i {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(estimate_from_counts(successes, spec))
}

fn estimate_from_counts(successes: u64, spec: &SimSpec) -> MetricEstimate {
    let n = spec.n_trials;
    let (lo, hi) = binomial_ci(successes, n, spec.ci_level);
    MetricEstimate { value: successes as f64 / n as f64, ci_low: lo, ci_high: hi, n_samples: n, abs_tol: 0.0 }
}

/// Sampled mean receiver count per segment, with normal-theory intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub m_q: MetricEstimate,
    pub m_rx: MetricEstimate,
    pub m_ry: MetricEstimate,
    pub total: MetricEstimate,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    sum: u64,
    sum_sq: u128,
}

impl Moments {
    fn push(&mut self, k: u64) {
        self.sum += k;
        self.sum_sq += (k as u128) * (k as u128);
    }
    fn merge(self, o: Moments) -> Moments {
        Moments { sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq }
    }
    fn estimate(&self, n: u64, level: f64) -> MetricEstimate {
        let nf = n as f64;
        let mean = self.sum as f64 / nf;
        let var = if n > 1 { ((self.sum_sq as f64) - nf * mean * mean).max(0.0) / (nf - 1.0) } else { 0.0 };
        let h = z_value(level) * (var / nf).sqrt();
        MetricEstimate { value: mean, ci_low: (mean - h).max(0.0), ci_high: mean + h, n_samples: n, abs_tol: 0.0 }
    }
}

/// Number of silent vehicles that decode one broadcast from the queued
/// transmitter `tx`, averaged over trials.
///
/// Every receiver sees its own fading on every link; transmit states are
/// shared within a trial.
pub fn estimate_mean(cfg: &ScenarioConfig, tx: TransmitterLocation, spec: &SimSpec) -> Result<MeanEstimate> {
    spec.check()?;
    let d = tx
        .queue_index(cfg)
        .ok_or_else(|| Error::Unsupported("mean receiver count needs a queued transmitter".into()))?;
    if !queue_range(cfg).contains(&d) {
        return Err(Error::Invalid(format!("transmitter index {d} outside the queue")));
    }
    let txp = tx.position(cfg);
    let alpha = cfg.alpha;
    let t = cfg.t_threshold;
    let slot0 = -(cfg.n_minus as i64);

    let per_chunk = |(c, len): (u64, u64)| {
        let mut rng = rng_stream(spec.seed, c);
        let mut acc = [Moments::default(); 4];
        let mut interferers: Vec<Point> = Vec::new();
        let mut receivers: Vec<(usize, Point)> = Vec::new();
        for _ in 0..len {
            let scene = sample_scene(cfg, spec, &mut rng);
            interferers.clear();
            receivers.clear();
            for (k, (&x, &on)) in scene.queue_positions.iter().zip(&scene.queue_tx).enumerate() {
                if slot0 + k as i64 == d {
                    continue;
                }
                let p = Point { x, y: 0.0 };
                if on { interferers.push(p) } else { receivers.push((0, p)) }
            }
            for (&x, &on) in scene.running_x.iter().zip(&scene.running_x_tx) {
                let p = Point { x, y: 0.0 };
                if on { interferers.push(p) } else { receivers.push((1, p)) }
            }
            for (&y, &on) in scene.running_y.iter().zip(&scene.running_y_tx) {
                let p = Point { x: 0.0, y };
                if on { interferers.push(p) } else { receivers.push((2, p)) }
            }
            let mut counts = [0u64; 3];
            for &(seg, p) in &receivers {
                let r = p.dist(&txp);
                if r == 0.0 {
                    continue;
                }
                let h: f64 = Exp1.sample(&mut rng);
                let budget = h * r.powf(-alpha) / t;
                let mut i = 0.0;
                let mut ok = true;
                for q in &interferers {
                    let f: f64 = Exp1.sample(&mut rng);
                    i += f * p.dist(q).powf(-alpha);
                    if i >= budget {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    counts[seg] += 1;
                }
            }
            for s in 0..3 {
                acc[s].push(counts[s]);
            }
            acc[3].push(counts.iter().sum());
        }
        acc
    };
    let acc = chunks(spec.n_trials)
        .map(per_chunk)
        .reduce(|| [Moments::default(); 4], |a, b| std::array::from_fn(|k| a[k].merge(b[k])));
    let n = spec.n_trials;
    let lv = spec.ci_level;
    Ok(MeanEstimate {
        m_q: acc[0].estimate(n, lv),
        m_rx: acc[1].estimate(n, lv),
        m_ry: acc[2].estimate(n, lv),
        total: acc[3].estimate(n, lv),
    })
}
