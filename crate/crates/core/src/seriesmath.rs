//! Special sums behind the queue-interference closed forms.
//!
//! The central object is the partial sum
//! q(n0, T, r | n1) = Σ_{m=1}^{n1} log(1 + T (r/(n0+m))^α),
//! where r is a distance in units of the vehicle length. It is approximated in
//! three regimes selected by η, the last index whose term exceeds log 2.

use std::f64::consts::PI;
use std::sync::{OnceLock, RwLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

/// Neumaier-compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Σ_{k≥1} (−1)^{k+1} a(k) for positive, decreasing a(k).
///
/// Sums directly while terms are still significant, then accelerates the
/// tail by repeated averaging of consecutive partial sums.
pub fn alternating_sum<F: Fn(u64) -> f64>(a: F) -> f64 {
    const BLOCK: usize = 96;
    let mut partial = Vec::with_capacity(BLOCK);
    let mut acc = KahanSum::default();
    for k in 1..=BLOCK as u64 {
        let t = a(k);
        let signed = if k % 2 == 1 { t } else { -t };
        acc.add(signed);
        partial.push(acc.value());
        if t.abs() < 1e-17 * acc.value().abs() || t == 0.0 {
            return acc.value();
        }
    }
    while partial.len() > 1 {
        for i in 0..partial.len() - 1 {
            partial[i] = 0.5 * (partial[i] + partial[i + 1]);
        }
        partial.pop();
    }
    partial[0]
}

/// Riemann zeta for real α > 1: partial sum plus an Euler–Maclaurin tail.
pub fn zeta(alpha: f64) -> f64 {
    assert!(alpha > 1.0, "zeta needs alpha > 1");
    let mut n: u64 = 16;
    loop {
        // Size of the first omitted correction, B6/6! · f⁽⁵⁾(n).
        let next = (1.0 / 30240.0) * (0..5).map(|j| alpha + j as f64).product::<f64>() * (n as f64).powf(-alpha - 5.0);
        if next < 1e-14 || n > 1 << 20 {
            break;
        }
        n *= 2;
    }
    let mut s = KahanSum::default();
    for m in (1..n).rev() {
        s.add((m as f64).powf(-alpha));
    }
    let nf = n as f64;
    s.add(nf.powf(1.0 - alpha) / (alpha - 1.0));
    s.add(0.5 * nf.powf(-alpha));
    s.add(alpha * nf.powf(-alpha - 1.0) / 12.0);
    s.add(-alpha * (alpha + 1.0) * (alpha + 2.0) * nf.powf(-alpha - 3.0) / 720.0);
    s.value()
}

fn bernoulli_table() -> &'static RwLock<Vec<BigRational>> {
    static TABLE: OnceLock<RwLock<Vec<BigRational>>> = OnceLock::new();
    TABLE.get_or_init(|| RwLock::new(vec![BigRational::one()]))
}

fn binomial(n: u64, k: u64) -> BigInt {
    let mut b = BigInt::one();
    for i in 0..k {
        b = b * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    b
}

/// Bernoulli number B_j with the convention B1 = +1/2, i.e. the sequence with
/// Σ_{k=0}^{j} C(j+1, k) B_k = j + 1.
pub fn bernoulli(j: usize) -> BigRational {
    {
        let t = bernoulli_table().read().expect("bernoulli table poisoned");
        if j < t.len() {
            return t[j].clone();
        }
    }
    let mut t = bernoulli_table().write().expect("bernoulli table poisoned");
    while t.len() <= j {
        let n = t.len() as u64;
        let mut s = BigRational::zero();
        for (k, b) in t.iter().enumerate() {
            s += BigRational::from_integer(binomial(n + 1, k as u64)) * b;
        }
        let np1 = BigRational::from_integer(BigInt::from(n + 1));
        let b = (np1.clone() - s) / np1;
        t.push(b);
    }
    t[j].clone()
}

pub fn bernoulli_f64(j: usize) -> f64 {
    bernoulli(j).to_f64().unwrap_or(f64::NAN)
}

/// Σ_{m=1}^{n} (n0+m)^p through the Bernoulli expansion, in exact arithmetic.
pub fn faulhaber_sum_exact(n0: u64, n: u64, p: u32) -> BigInt {
    let p = p as u64;
    let hi = BigInt::from(n0 + n);
    let lo = BigInt::from(n0);
    let mut s = BigRational::zero();
    for j in 0..=p {
        let e = (p + 1 - j) as u32;
        let diff = num_traits::pow(hi.clone(), e as usize) - num_traits::pow(lo.clone(), e as usize);
        s += BigRational::from_integer(binomial(p + 1, j) * diff) * bernoulli(j as usize);
    }
    let s = s / BigRational::from_integer(BigInt::from(p + 1));
    assert!(s.is_integer(), "Faulhaber sum must be an integer");
    s.to_integer()
}

pub fn faulhaber_sum(n0: u64, n: u64, p: u32) -> f64 {
    faulhaber_sum_exact(n0, n, p).to_f64().unwrap_or(f64::INFINITY)
}

/// log n! by direct summation.
pub fn log_factorial(n: u64) -> f64 {
    let mut s = KahanSum::default();
    for k in 2..=n {
        s.add((k as f64).ln());
    }
    s.value()
}

/// log (x)_k = log x(x−1)⋯(x−k+1).
pub fn log_falling_factorial(x: u64, k: u64) -> Result<f64> {
    if k > x {
        return Err(Error::Invalid(format!("falling factorial needs k <= x (got k={k}, x={x})")));
    }
    let mut s = KahanSum::default();
    for j in 0..k {
        s.add(((x - j) as f64).ln());
    }
    Ok(s.value())
}

/// Stirling form: x log x − x + ½ log(2πx) − log((x−k)!).
pub fn stirling_log_falling_factorial(x: u64, k: u64) -> Result<f64> {
    if k > x {
        return Err(Error::Invalid(format!("falling factorial needs k <= x (got k={k}, x={x})")));
    }
    if x == 0 {
        return Ok(0.0);
    }
    let xf = x as f64;
    Ok(xf * xf.ln() - xf + 0.5 * (2.0 * PI * xf).ln() - log_factorial(x - k))
}

/// q(n0, T, r | n1) by direct summation.
pub fn q_exact(n0: u64, t: f64, r: f64, n1: u64, alpha: f64) -> f64 {
    let mut s = KahanSum::default();
    for m in 1..=n1 {
        s.add((t * (r / (n0 + m) as f64).powf(alpha)).ln_1p());
    }
    s.value()
}

/// η = min{m ≥ 1 : T (r/(n0+m))^α < 1} − 1.
pub fn eta(n0: u64, t: f64, r: f64, alpha: f64) -> u64 {
    let fails = |m: u64| t * (r / (n0 + m) as f64).powf(alpha) >= 1.0;
    let guess = (t.powf(1.0 / alpha) * r - n0 as f64).floor();
    let mut e = if guess.is_finite() && guess > 0.0 { guess as u64 } else { 0 };
    // Closed form may be off by one at the boundary; settle on the definition.
    while e > 0 && !fails(e) {
        e -= 1;
    }
    while fails(e + 1) {
        e += 1;
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QRegime {
    /// η = 0: every term is below log 2.
    BelowWindow,
    /// 1 ≤ η < n1: the sum splits into a large head and a small tail.
    InWindow,
    /// η ≥ n1: every term is at least log 2.
    AboveWindow,
}

pub fn regime(n0: u64, t: f64, r: f64, n1: u64, alpha: f64) -> QRegime {
    let e = eta(n0, t, r, alpha);
    if e == 0 {
        QRegime::BelowWindow
    } else if e < n1 {
        QRegime::InWindow
    } else {
        QRegime::AboveWindow
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QBounds {
    pub lower: f64,
    pub upper: f64,
}

/// φ̄ = Σ (−1)^{k+1} x^k / (k(αk−1)) with x = (1 + 1/(n0+η))^{−α}.
pub fn phi_upper(n0: u64, eta: u64, alpha: u32) -> f64 {
    let a = alpha as f64;
    let x = (1.0 + 1.0 / (n0 + eta) as f64).powf(-a);
    alternating_sum(|k| x.powi(k as i32) / (k as f64 * (a * k as f64 - 1.0)))
}

/// φ̲ = Σ (−1)^{k+1} x^k / (k(αk+1)) with x = (1 + 1/(n0+η))^{−α}.
pub fn phi_lower(n0: u64, eta: u64, alpha: u32) -> f64 {
    let a = alpha as f64;
    let x = (1.0 + 1.0 / (n0 + eta) as f64).powf(-a);
    alternating_sum(|k| x.powi(k as i32) / (k as f64 * (a * k as f64 + 1.0)))
}

/// ψ̄ = (n0+n1) Σ (−1)^{k+1} X^k / (k(αk−1)), X = T (r/(n0+n1))^α < 1.
pub fn psi_upper(n0: u64, n1: u64, t: f64, r: f64, alpha: u32) -> f64 {
    let a = alpha as f64;
    let n = (n0 + n1) as f64;
    let x = t * (r / n).powf(a);
    n * alternating_sum(|k| x.powi(k as i32) / (k as f64 * (a * k as f64 - 1.0)))
}

/// ψ̲ = n0 Σ (−1)^{k+1} Y^k / (k(αk+1)), Y = (n0/r)^α / T < 1.
pub fn psi_lower(n0: u64, t: f64, r: f64, alpha: u32) -> f64 {
    if n0 == 0 {
        return 0.0;
    }
    let a = alpha as f64;
    let y = (n0 as f64 / r).powf(a) / t;
    n0 as f64 * alternating_sum(|k| y.powi(k as i32) / (k as f64 * (a * k as f64 + 1.0)))
}

fn window_eta(n0: u64, t: f64, r: f64, n1: u64, alpha: u32) -> Result<u64> {
    let e = eta(n0, t, r, alpha as f64);
    if e < 1 || e > n1 {
        return Err(Error::Regime(format!("bounds need 1 <= eta <= n1 (eta = {e}, n1 = {n1})")));
    }
    Ok(e)
}

/// Bounds on the tail Σ_{m=η+1}^{n1} log(1 + T(r/(n0+m))^α), remainders dropped.
pub fn q_bounds_upper_tail(n0: u64, t: f64, r: f64, n1: u64, alpha: u32) -> Result<QBounds> {
    let e = window_eta(n0, t, r, n1, alpha)?;
    if e == n1 {
        return Ok(QBounds { lower: 0.0, upper: 0.0 });
    }
    let a = alpha as f64;
    let (k1, _) = crate::approx::kappas(alpha);
    let ne = (n0 + e) as f64;
    let psi = psi_upper(n0, n1, t, r, alpha);
    let edge = 0.5 * (t * (r / (n0 + n1) as f64).powf(a)).ln_1p();
    let upper = (k1 - 2f64.ln()) * (ne + 1.0) - psi + edge + 0.5 * 2f64.ln();
    let lower = phi_upper(n0, e, alpha) * (ne + 1.0) - psi + edge + 0.5 * (1.0 + (1.0 + 1.0 / ne).powf(-a)).ln();
    Ok(QBounds { lower, upper })
}

/// Bounds on the head Σ_{m=1}^{η} log(1 + T(r/(n0+m))^α), remainders dropped.
pub fn q_bounds_head(n0: u64, t: f64, r: f64, n1: u64, alpha: u32) -> Result<QBounds> {
    let e = window_eta(n0, t, r, n1, alpha)?;
    let a = alpha as f64;
    let (_, k2) = crate::approx::kappas(alpha);
    let ne = (n0 + e) as f64;
    let psi = psi_lower(n0, t, r, alpha);
    let near = 0.5 * ((n0 as f64 / r).powf(a) / t).ln_1p();
    let fact = a * (log_factorial(n0) - 0.5 * (2.0 * PI).ln());
    let stir = -a * (n0 as f64 + 0.5) * ne.ln();
    let upper = (a + 2f64.ln() - k2) * ne - psi - near + a * (1.0 / ne).ln_1p() * e as f64 + stir + fact + 0.5 * 2f64.ln();
    let lower = (a + phi_lower(n0, e, alpha)) * ne - psi - near + stir + fact + 0.5 * (1.0 + (1.0 + 1.0 / ne).powf(-a)).ln();
    Ok(QBounds { lower, upper })
}

/// Leading-order q when every term is small (η = 0).
pub fn q_case1(n0: u64, t: f64, r: f64, n1: u64, alpha: u32) -> Result<f64> {
    let a = alpha as f64;
    if t * (r / (n0 + 1) as f64).powf(a) >= 1.0 {
        return Err(Error::Regime("small-term form needs T (r/(n0+1))^alpha < 1".into()));
    }
    if n0 == 0 {
        return Ok(zeta(a) * t * r.powf(a));
    }
    let n0f = n0 as f64;
    let n = (n0 + n1) as f64;
    Ok(t * (n0f / (a - 1.0) - 0.5) * (r / n0f).powf(a) - t * (n / (a - 1.0) - 0.5) * (r / n).powf(a))
}

/// q when every term is large (η ≥ n1).
pub fn q_case3(n0: u64, t: f64, r: f64, n1: u64, alpha: u32) -> Result<f64> {
    let a = alpha as f64;
    let n = (n0 + n1) as f64;
    let n0f = n0 as f64;
    if t * (r / n).powf(a) < 1.0 {
        return Err(Error::Regime("large-term form needs T (r/(n0+n1))^alpha >= 1".into()));
    }
    Ok(a * n1 as f64 * (t.powf(1.0 / a) * r).ln() + (n / (a + 1.0) + 0.5) * (n / r).powf(a) / t
        - (n0f / (a + 1.0) + 0.5) * (n0f / r).powf(a) / t
        - a * (n + 0.5) * n.ln()
        + a * n
        + a * (log_factorial(n0) - 0.5 * (2.0 * PI).ln()))
}

/// Closed form for the in-window regime.
pub fn q_case2(n0: u64, t: f64, r: f64, n1: u64, alpha: u32) -> f64 {
    let a = alpha as f64;
    let (k1, k2) = crate::approx::kappas(alpha);
    let tr = t.powf(1.0 / a) * r;
    let n = (n0 + n1) as f64;
    (a + k1 - k2) * tr - a * (n0 as f64 + 0.5) * tr.ln() - t * r.powf(a) / ((a - 1.0) * n.powf(a - 1.0))
        + 0.5 * (t * (r / n).powf(a)).ln_1p()
        - psi_lower(n0, t, r, alpha)
        - 0.5 * ((n0 as f64 / r).powf(a) / t).ln_1p()
        + k1
        + a * (log_factorial(n0) - 0.5 * (2.0 * PI).ln())
        + 2f64.ln()
}

/// Regime-dispatched approximation of q.
pub fn q_approx(n0: u64, t: f64, r: f64, n1: u64, alpha: u32) -> (f64, QRegime) {
    let reg = regime(n0, t, r, n1, alpha as f64);
    let v = match reg {
        QRegime::BelowWindow => q_case1(n0, t, r, n1, alpha).expect("regime checked"),
        QRegime::InWindow => q_case2(n0, t, r, n1, alpha),
        QRegime::AboveWindow => q_case3(n0, t, r, n1, alpha).expect("regime checked"),
    };
    (v, reg)
}
