//! Pinned Brownian bridges: masses, exact grid sampling, exit laws.

use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use thiserror::Error;

use crate::model::{dist2, Cube, ModelParams, Point, MAX_DIM, ORIGIN};

#[derive(Debug, Error, PartialEq)]
pub enum BridgeError {
    #[error("exit-probability series did not converge (a = {a}, beta = {beta})")]
    NonConvergence { a: f64, beta: f64 },
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("tail bound fit failed: {0}")]
    FitFailure(String),
}

/// Free heat kernel `(2 pi t)^{-d/2} exp(-r2 / 2t)` for generator `Δ/2`.
#[inline]
pub fn heat_kernel(dim: usize, t: f64, r2: f64) -> f64 {
    (2.0 * PI * t).powf(-(dim as f64) / 2.0) * (-r2 / (2.0 * t)).exp()
}

/// Total mass of the non-normalized bridge measure from `x` to `y` over time `k beta`.
pub fn gaussian_mass(x: &Point, y: &Point, k: u32, m: &ModelParams) -> f64 {
    heat_kernel(m.dim(), k as f64 * m.beta(), dist2(x, y))
}

/// Discretized bridge: `samples[i]` sits at time `i * beta / S`.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgePath {
    pub k: u32,
    pub slices: u32,
    pub samples: Vec<Point>,
}

impl BridgePath {
    pub fn start(&self) -> &Point {
        &self.samples[0]
    }

    pub fn end(&self) -> &Point {
        self.samples.last().expect("bridge has at least two samples")
    }

    /// Number of time steps `k S`.
    pub fn steps(&self) -> usize {
        self.samples.len() - 1
    }

    /// Sample at the integer time `m beta`.
    pub fn at_beta(&self, m: u32) -> &Point {
        &self.samples[(m * self.slices) as usize]
    }

    /// Probability that the continuous bridge through these grid samples
    /// leaves `cube` at some time, given the samples. Coordinates and grid
    /// intervals are conditionally independent bridges, so the stay
    /// probability factorizes.
    pub fn exit_probability(&self, cube: &Cube, dt: f64) -> f64 {
        exit_probability(&self.samples, cube, dt)
    }

    /// Largest Euclidean distance between samples at most `window` steps apart.
    pub fn continuity_modulus(&self, window: usize) -> f64 {
        let n = self.samples.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in i + 1..(i + window + 1).min(n) {
                best = best.max(dist2(&self.samples[i], &self.samples[j]));
            }
        }
        best.sqrt()
    }
}

/// Continuity-modulus envelope `sqrt(2 k0 beta eps ln(1/eps))` for `eps < 1`.
pub fn continuity_envelope(k0: u32, beta: f64, eps: f64) -> f64 {
    (2.0 * k0 as f64 * beta * eps * (1.0 / eps).ln()).sqrt()
}

/// See [`BridgePath::exit_probability`].
pub fn exit_probability(samples: &[Point], cube: &Cube, dt: f64) -> f64 {
    if samples.iter().any(|p| !cube.contains(p)) {
        return 1.0;
    }
    1.0 - stay_probability(samples, cube, dt)
}

/// Conditional probability that a path interpolated by independent bridges
/// between consecutive samples stays inside `cube` throughout.
pub fn stay_probability(samples: &[Point], cube: &Cube, dt: f64) -> f64 {
    let c = cube.center();
    let h = cube.half_side();
    let mut log_stay = 0.0;
    for w in samples.windows(2) {
        for i in 0..cube.dim() {
            let p = interval_stay_probability(w[0][i], w[1][i], c[i] - h, c[i] + h, dt);
            if p <= 0.0 {
                return 0.0;
            }
            log_stay += p.ln();
        }
    }
    log_stay.exp()
}

/// Probability that a 1-D Brownian bridge from `u` to `v` over time `dt`
/// stays inside `(lo, hi)`, by the method of images.
pub fn interval_stay_probability(u: f64, v: f64, lo: f64, hi: f64, dt: f64) -> f64 {
    if !(u > lo && u < hi && v > lo && v < hi) {
        return 0.0;
    }
    let w = hi - lo;
    let d0 = v - u;
    let ratio = |d: f64| (-(d * d - d0 * d0) / (2.0 * dt)).exp();
    let mut sum = 1.0 - ratio(v + u - 2.0 * lo);
    for n in 1..=64 {
        let shift = 2.0 * n as f64 * w;
        let term = ratio(d0 + shift) + ratio(d0 - shift)
            - ratio(v + u - 2.0 * lo + shift)
            - ratio(v + u - 2.0 * lo - shift);
        sum += term;
        if ratio(d0 + shift).max(ratio(d0 - shift)) < 1e-17 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Fills `samples[1..n]` with an exact discretized bridge between the fixed
/// values `samples[0]` and `samples[n]`, step `dt`, by midpoint bisection.
pub fn fill_bridge<R: Rng + ?Sized>(samples: &mut [Point], dim: usize, dt: f64, rng: &mut R) {
    let n = samples.len() - 1;
    if n >= 2 {
        bisect(samples, 0, n, dim, dt, rng);
    }
}

fn bisect<R: Rng + ?Sized>(s: &mut [Point], lo: usize, hi: usize, dim: usize, dt: f64, rng: &mut R) {
    if hi - lo < 2 {
        return;
    }
    let mid = (lo + hi) / 2;
    let t1 = (mid - lo) as f64 * dt;
    let t2 = (hi - mid) as f64 * dt;
    let w = t1 / (t1 + t2);
    let sd = (t1 * t2 / (t1 + t2)).sqrt();
    let mut p = ORIGIN;
    for i in 0..dim {
        let g: f64 = rng.sample(StandardNormal);
        p[i] = s[lo][i] + w * (s[hi][i] - s[lo][i]) + sd * g;
    }
    s[mid] = p;
    bisect(s, lo, mid, dim, dt, rng);
    bisect(s, mid, hi, dim, dt, rng);
}

/// Samples a bridge from `x` to `y` of time-length `k beta` on a grid of
/// `S = slices` points per `beta`.
pub fn sample_bridge<R: Rng + ?Sized>(
    x: &Point,
    y: &Point,
    k: u32,
    slices: u32,
    dim: usize,
    beta: f64,
    rng: &mut R,
) -> BridgePath {
    assert!(k >= 1 && slices >= 1, "k and S must be positive");
    assert!(dim <= MAX_DIM);
    let n = (k * slices) as usize;
    let mut samples = vec![ORIGIN; n + 1];
    samples[0] = *x;
    samples[n] = *y;
    fill_bridge(&mut samples, dim, beta / slices as f64, rng);
    BridgePath { k, slices, samples }
}

fn phi(t: f64, x: f64) -> f64 {
    (-(x * x) / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

/// Alternating image series for the 1-D bridge over `[0, beta]` with
/// displacement `delta`: the probability of `sup |w(t) - w(0)| > a`.
fn single_leg_tail(a: f64, delta: f64, beta: f64) -> Result<f64, BridgeError> {
    if delta.abs() >= a {
        return Ok(1.0);
    }
    let mut sum = 0.0;
    for l in 1..=10_000i64 {
        let sign = if l % 2 == 1 { 1.0 } else { -1.0 };
        let lf = l as f64;
        // ratios phi(delta -+ 2la) / phi(delta)
        let t1 = (-((delta - 2.0 * lf * a).powi(2) - delta * delta) / (2.0 * beta)).exp();
        let t2 = (-((delta + 2.0 * lf * a).powi(2) - delta * delta) / (2.0 * beta)).exp();
        sum += sign * (t1 + t2);
        if t1 + t2 < 1e-14 {
            return Ok(sum.clamp(0.0, 1.0));
        }
    }
    Err(BridgeError::NonConvergence { a, beta })
}

/// Unnormalized first-leg exit density at first-leg endpoint offset `u`.
fn first_leg_exit_density(a: f64, u: f64, beta: f64) -> f64 {
    if u.abs() >= a {
        return phi(beta, u);
    }
    let mut sum = 0.0;
    for l in 1..=10_000i64 {
        let sign = if l % 2 == 1 { 1.0 } else { -1.0 };
        let s = 2.0 * l as f64 * a;
        let t = phi(beta, u - s) + phi(beta, u + s);
        sum += sign * t;
        if t < 1e-300 || t < 1e-16 * sum.abs() {
            break;
        }
    }
    sum
}

fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Probability that a 1-D bridge of time-length `k beta` with endpoint
/// displacement `displacement` deviates from its start by more than `a`
/// during the first `beta`-leg.
///
/// For `k = 1` this is the alternating image series; for `k > 1` the
/// first-leg exit density is integrated against the remaining-leg kernel.
pub fn bridge_max_tail(a: f64, k: u32, displacement: f64, beta: f64) -> Result<f64, BridgeError> {
    if !(a > 0.0) {
        return Err(BridgeError::BadThreshold(a));
    }
    if k == 1 {
        return single_leg_tail(a, displacement, beta);
    }
    let rest = (k - 1) as f64 * beta;
    let total = k as f64 * beta;
    let norm = phi(total, displacement);
    let f = |u: f64| first_leg_exit_density(a, u, beta) * phi(rest, displacement - u);
    // both Gaussian factors are negligible beyond this reach
    let reach = a + displacement.abs() + 40.0 * total.sqrt();
    let panels = 2000;
    let inner = simpson(f, -a, a, panels);
    let outer = simpson(f, -reach, -a, panels) + simpson(f, a, reach, panels);
    Ok(((inner + outer) / norm).clamp(0.0, 1.0))
}

/// Constants of a Gaussian tail envelope `c0 exp(-c1 a^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailFit {
    pub c0: f64,
    pub c1: f64,
    /// Largest `ln tail - ln(c0 exp(-c1 a^2))` over the fitted points (≤ 0).
    pub max_residual: f64,
}

/// Probability that a 1-D bridge from `x` to `y` of time-length `k beta`
/// leaves `(lo, hi)` during its first `beta`-leg.
pub fn first_leg_exit_interval(lo: f64, hi: f64, x: f64, y: f64, k: u32, beta: f64) -> f64 {
    if !(x > lo && x < hi) {
        return 1.0;
    }
    if k == 1 {
        return 1.0 - interval_stay_probability(x, y, lo, hi, beta);
    }
    let rest = (k - 1) as f64 * beta;
    let norm = phi(k as f64 * beta, y - x);
    let f = |u: f64| {
        let stay = interval_stay_probability(x, u, lo, hi, beta);
        phi(beta, u - x) * (1.0 - stay) * phi(rest, y - u)
    };
    let reach = (hi - lo) + (y - x).abs() + 40.0 * (k as f64 * beta).sqrt();
    let panels = 2000;
    let inside = simpson(f, lo, hi, panels);
    let outside = simpson(f, lo - reach, lo, panels) + simpson(f, hi, hi + reach, panels);
    ((inside + outside) / norm).clamp(0.0, 1.0)
}

/// Escape probabilities for the two cases of the escape-tail bound at threshold
/// `a`: a loop deviating from its anchor by more than `a` within the first
/// leg, and a pinned path with both endpoints in `box0` leaving the
/// `a`-neighbourhood of the box within the first leg. Both are
/// union-bounded over coordinates with per-coordinate threshold `a / sqrt(d)`;
/// the pinned case takes the worst endpoint pair on a 5x5 grid per coordinate.
pub fn escape_tails(m: &ModelParams, box0: &Cube, k: u32, a: f64) -> Result<(f64, f64), BridgeError> {
    let d = m.dim() as f64;
    let a1 = a / d.sqrt();
    let loop_tail = (d * bridge_max_tail(a1, k, 0.0, m.beta())?).min(1.0);
    let h = box0.half_side();
    let ends: Vec<f64> = (0..5).map(|i| -h + h * i as f64 / 2.0).collect();
    let mut worst: f64 = 0.0;
    for &x in &ends {
        for &y in &ends {
            worst = worst.max(first_leg_exit_interval(-h - a1, h + a1, x, y, k, m.beta()));
        }
    }
    Ok((loop_tail, (d * worst).min(1.0)))
}

/// Fits `(c0, c1)` so that both escape tails are dominated by
/// `c0 exp(-c1 a^2)` at every grid threshold and every `k ≤ k_max`.
pub fn escape_tail_fit(m: &ModelParams, box0: &Cube, k_max: u32, a_grid: &[f64]) -> Result<TailFit, BridgeError> {
    if a_grid.is_empty() || a_grid.iter().any(|&a| !(a > 0.0)) || a_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BridgeError::FitFailure("threshold grid must be positive and increasing".into()));
    }
    let mut env = vec![0.0f64; a_grid.len()];
    for k in 1..=k_max {
        for (i, &a) in a_grid.iter().enumerate() {
            let (l, p) = escape_tails(m, box0, k, a)?;
            env[i] = env[i].max(l).max(p);
        }
    }
    let pts: Vec<(f64, f64)> = a_grid
        .iter()
        .zip(&env)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&a, &t)| (a * a, t.ln()))
        .collect();
    let c1 = if pts.len() < 2 {
        1.0 / (2.0 * m.beta())
    } else {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        -sxy / sxx
    };
    if !(c1 > 0.0) || !c1.is_finite() {
        return Err(BridgeError::FitFailure(format!(
            "tail envelope is not decreasing in a^2 (slope {})",
            -c1
        )));
    }
    let ln_c0 = pts.iter().map(|&(a2, lt)| lt + c1 * a2).fold(f64::NEG_INFINITY, f64::max);
    let ln_c0 = if ln_c0.is_finite() { ln_c0 } else { 0.0 };
    let max_residual = pts
        .iter()
        .map(|&(a2, lt)| lt - (ln_c0 - c1 * a2))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(TailFit { c0: ln_c0.exp(), c1, max_residual: max_residual.min(0.0) })
}
