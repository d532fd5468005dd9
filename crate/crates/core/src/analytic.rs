//! Closed forms and certified series: `Θ_a`, free kernels, the external
//! growth functional `B(c)`, and the explicit bound constants.

use std::f64::consts::PI;
use thiserror::Error;

use crate::model::{dist2, Cube, ModelParams, Point, ORIGIN};

/// Default absolute tolerance for certified series tails.
pub const SERIES_TOL: f64 = 1e-12;

const MAX_TERMS: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("fugacity {0} not in (0,1)")]
    Fugacity(f64),
    #[error("theta index {0} not in {{-1,0,1,2}}")]
    ThetaIndex(i32),
    #[error("series did not reach tolerance {tol} within {terms} terms")]
    NonConvergence { tol: f64, terms: u64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("overflow evaluating {0}")]
    Overflow(String),
}

/// Truncated series value with a certified bound on the dropped tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesResult {
    pub value: f64,
    /// Last index included.
    pub truncation_k: u64,
    pub tail_bound: f64,
}

/// Sums `Σ_{k≥1} term(k)` for nonnegative terms. `ratio_sup(k)` must bound
/// `term(j+1)/term(j)` for every `j ≥ k`; summation stops at the first `K`
/// with `ratio_sup(K+1) < 1` and `term(K+1) / (1 - ratio_sup(K+1)) ≤ tol`.
pub fn certified_sum(
    term: impl Fn(u64) -> f64,
    ratio_sup: impl Fn(u64) -> f64,
    tol: f64,
) -> Result<SeriesResult, AnalyticError> {
    let mut value = 0.0;
    let mut next = term(1);
    for k in 1..=MAX_TERMS {
        value += next;
        next = term(k + 1);
        let r = ratio_sup(k + 1);
        if r < 1.0 {
            let tail = next / (1.0 - r);
            if tail <= tol {
                return Ok(SeriesResult { value, truncation_k: k, tail_bound: tail });
            }
        }
    }
    Err(AnalyticError::NonConvergence { tol, terms: MAX_TERMS })
}

fn check_z(z: f64) -> Result<(), AnalyticError> {
    if z > 0.0 && z < 1.0 {
        Ok(())
    } else {
        Err(AnalyticError::Fugacity(z))
    }
}

/// `Θ_a(z) = Σ_k z^k k^a (2πβk)^{-d/2}` for `a ∈ {-1,0,1,2}`.
pub fn theta(a: i32, z: f64, m: &ModelParams) -> Result<SeriesResult, AnalyticError> {
    theta_tol(a, z, m, SERIES_TOL)
}

pub fn theta_tol(a: i32, z: f64, m: &ModelParams, tol: f64) -> Result<SeriesResult, AnalyticError> {
    if !(-1..=2).contains(&a) {
        return Err(AnalyticError::ThetaIndex(a));
    }
    check_z(z)?;
    let half_d = m.dim() as f64 / 2.0;
    let c = 2.0 * PI * m.beta();
    let e = a as f64 - half_d;
    certified_sum(
        |k| {
            let kf = k as f64;
            (kf * z.ln() + e * kf.ln() - half_d * c.ln()).exp()
        },
        |k| if e <= 0.0 { z } else { z * ((k as f64 + 1.0) / k as f64).powf(e) },
        tol,
    )
}

fn theta_value(a: i32, z: f64, m: &ModelParams) -> Result<f64, AnalyticError> {
    theta(a, z, m).map(|s| s.value)
}

/// Free single-particle kernel `Σ_k z^k (2πβk)^{-d/2} exp(-|x-y|²/(2βk))`.
pub fn free_kernel(x: &Point, y: &Point, z: f64, m: &ModelParams, tol: f64) -> Result<SeriesResult, AnalyticError> {
    check_z(z)?;
    let r2 = dist2(x, y);
    let (b, half_d) = (m.beta(), m.dim() as f64 / 2.0);
    certified_sum(
        |k| {
            let kf = k as f64;
            (kf * z.ln() - half_d * (2.0 * PI * b * kf).ln() - r2 / (2.0 * b * kf)).exp()
        },
        |k| {
            let kf = k as f64;
            z * (r2 / (2.0 * b * kf * (kf + 1.0))).exp()
        },
        tol,
    )
}

/// Supremum of `B` over a finite grid of cube half-sides.
#[derive(Clone, Debug, PartialEq)]
pub struct BResult {
    pub value: f64,
    pub argmax_l: f64,
    /// The maximum sits at the last grid point and the values still increase there.
    pub unbounded_on_grid: bool,
    /// `(L, B_L)` for every grid point.
    pub profile: Vec<(f64, f64)>,
}

/// `Σ_k z^k k exp(-(L² - cL)/(2βk))`.
pub fn b_inner_series(z: f64, l: f64, c: f64, beta: f64, tol: f64) -> Result<SeriesResult, AnalyticError> {
    check_z(z)?;
    let a = (l * l - c * l) / (2.0 * beta);
    certified_sum(
        |k| {
            let kf = k as f64;
            (kf * z.ln() + kf.ln() - a / kf).exp()
        },
        |k| {
            let kf = k as f64;
            let growth = if a < 0.0 { 1.0 } else { (a / (kf * (kf + 1.0))).exp() };
            z * (kf + 1.0) / kf * growth
        },
        tol,
    )
}

/// Grid supremum of `Σ_i counts(L)[i] Σ_k z_i^k k exp(-(L² - cL)/(2βk))`
/// over `l_grid` (values must be `≥ 1`).
pub fn b_of_c(
    counts: impl Fn(f64) -> Vec<f64>,
    c: f64,
    m: &ModelParams,
    l_grid: &[f64],
) -> Result<BResult, AnalyticError> {
    if !(c > 0.0) {
        return Err(AnalyticError::Invalid(format!("c must be positive, got {c}")));
    }
    if l_grid.is_empty() || l_grid.iter().any(|&l| !(l >= 1.0)) {
        return Err(AnalyticError::Invalid("grid values must be at least 1".into()));
    }
    let mut profile = Vec::with_capacity(l_grid.len());
    for &l in l_grid {
        let n = counts(l);
        if n.len() != m.q() {
            return Err(AnalyticError::Invalid(format!("counts has {} entries for {} types", n.len(), m.q())));
        }
        let mut b = 0.0;
        for (i, &ni) in n.iter().enumerate() {
            if ni != 0.0 {
                b += ni * b_inner_series(m.z()[i], l, c, m.beta(), SERIES_TOL)?.value;
            }
        }
        profile.push((l, b));
    }
    let (imax, &(argmax_l, value)) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty grid");
    let n = profile.len();
    let unbounded_on_grid = !value.is_finite() || (n >= 2 && imax == n - 1 && profile[n - 1].1 > profile[n - 2].1);
    Ok(BResult { value, argmax_l, unbounded_on_grid, profile })
}

/// `c = (R + L0 + dist(0, box0))²`, the argument of `B` in the fourth constant.
pub fn b_argument(m: &ModelParams, box0: &Cube) -> f64 {
    (m.max_range() + box0.half_side() + box0.dist_eu(&ORIGIN)).powi(2)
}

/// `exp(υ(box0) Σ_j z_j/(1-z_j))`.
pub fn hs_bound(box0: &Cube, m: &ModelParams) -> f64 {
    let s: f64 = m.z().iter().map(|&z| z / (1.0 - z)).sum();
    (box0.volume() * s).exp()
}

/// The four bound constants for type `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AConstants {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Bound constants for type `j` with per-type counts `n`. `fit` is the
/// `(c0, c1)` Gaussian envelope of the first-leg escape tail and `b_value`
/// is `B` at [`b_argument`]. The free additive constant in the third
/// constant is taken as zero.
pub fn a_constants(
    n: &[usize],
    j: usize,
    box0: &Cube,
    m: &ModelParams,
    fit: (f64, f64),
    b_value: f64,
) -> Result<AConstants, AnalyticError> {
    let q = m.q();
    if n.len() != q || j >= q {
        return Err(AnalyticError::Invalid(format!("need {q} counts and j < {q}")));
    }
    let (c0, c1) = fit;
    if !(c0 > 0.0 && c1 > 0.0) {
        return Err(AnalyticError::Invalid(format!("envelope constants must be positive, got ({c0}, {c1})")));
    }
    let vbar = m.vbar1();
    let beta = m.beta();
    let th0: Vec<f64> = m.z().iter().map(|&z| theta_value(0, z, m)).collect::<Result<_, _>>()?;
    let th1: Vec<f64> = m.z().iter().map(|&z| theta_value(1, z, m)).collect::<Result<_, _>>()?;
    let th2_j = theta_value(2, m.z()[j], m)?;
    let mut prod = 1.0;
    let mut prod_n = 1.0;
    for i in 0..q {
        let f = factorial(n[i]) * (1.0 + th0[i]).powi(n[i] as i32);
        prod *= f;
        prod_n *= f * n[i] as f64;
    }
    if !prod.is_finite() || !prod_n.is_finite() {
        return Err(AnalyticError::Overflow(format!("factorial products for counts {n:?}")));
    }
    let sum_th0: f64 = th0.iter().sum();
    let sum_th1: f64 = th1.iter().sum();
    let d = m.dim() as i32;
    // ∫ exp(-c1 dist(x, box0)²) dx factorizes over coordinates
    let gauss = c0 * (2.0 * box0.half_side() + (PI / c1).sqrt()).powi(d);
    Ok(AConstants {
        a1: 0.5 * beta * vbar * th2_j * prod,
        a2: beta * (q as f64 - 1.0) * vbar * sum_th1 * th1[j] * prod_n,
        a3: 2.0 * beta * vbar * sum_th0 * th1[j] * prod_n * gauss,
        a4: beta * vbar * prod * b_value,
    })
}

/// Analytic upper bound on the probability that some type has total
/// multiplicity `≥ k0` among loops anchored in `box0`.
pub fn tightness_bound(k0: u32, box0: &Cube, m: &ModelParams) -> Result<f64, AnalyticError> {
    if k0 == 0 {
        return Err(AnalyticError::Invalid("k0 must be at least 1".into()));
    }
    let v = box0.volume();
    let root = (k0 as f64).sqrt();
    let n_split = root.floor() as u64;
    let k_start = root.ceil() as u64;
    let half_d = m.dim() as f64 / 2.0;
    let c = 2.0 * PI * m.beta();
    let mut prefactor = 1.0;
    let mut total = 0.0;
    for &z in m.z() {
        let th0 = theta_value(0, z, m)?;
        let thm1 = theta_value(-1, z, m)?;
        prefactor *= (v * (1.0 + th0)).exp();
        let x = v * thm1;
        // Σ_{n > √k0} x^n / n!; terms decrease once n ≥ x
        let first = n_split + 1;
        let t_first = (first as f64 * x.ln() - ln_factorial(first)).exp();
        let tail1 = certified_sum(
            |i| t_first * (first + 1..first + i).map(|n| x / n as f64).product::<f64>(),
            |i| x / (first + i) as f64,
            SERIES_TOL * t_first.max(f64::MIN_POSITIVE),
        )?
        .value;
        // Σ_{k ≥ √k0} z^k / (k (2πβk)^{d/2})
        let s = k_start.saturating_sub(1);
        let ksum = certified_sum(
            |i| {
                let kf = (s + i) as f64;
                (kf * z.ln() - kf.ln() - half_d * (c * kf).ln()).exp()
            },
            |_| z,
            SERIES_TOL,
        )?
        .value;
        let inner: f64 = (1..=n_split)
            .map(|n| n as f64 * v.powi(n as i32) * thm1.powi(n as i32 - 1) / factorial(n as usize))
            .sum();
        total += tail1 + ksum * inner;
    }
    Ok(prefactor * total)
}

fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

/// `Σ_{n=1}^{n_terms} exp(-β (nπ/(2L))² / 2)`: trace of the one-dimensional
/// Dirichlet heat semigroup on `[-L, L]` for generator `Δ/2`.
pub fn dirichlet_trace_series(half_side: f64, beta: f64, n_terms: usize) -> f64 {
    (1..=n_terms)
        .map(|n| (-0.5 * beta * (n as f64 * PI / (2.0 * half_side)).powi(2)).exp())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{point, PairPotential};
    use proptest::prelude::*;

    fn m2() -> ModelParams {
        ModelParams::new(2, 1.0, vec![0.5])
    }

    #[test]
    fn theta_closed_forms_d2() {
        for i in 1..=9 {
            let z = i as f64 / 10.0;
            let m = ModelParams::new(2, 1.3, vec![z]);
            let c = 2.0 * PI * 1.3;
            let cases = [
                (0, -(1.0 - z).ln() / c),
                (1, z / (1.0 - z) / c),
                (2, z / (1.0 - z).powi(2) / c),
            ];
            for (a, want) in cases {
                let got = theta(a, z, &m).unwrap();
                assert!((got.value - want).abs() < 1e-10, "a={a} z={z}: {} vs {want}", got.value);
                assert!(got.tail_bound <= SERIES_TOL);
            }
        }
    }

    #[test]
    fn theta_minus_one_is_dilog() {
        let li2_half = PI * PI / 12.0 - 0.5 * 2f64.ln().powi(2);
        let got = theta(-1, 0.5, &m2()).unwrap().value;
        assert!((got - li2_half / (2.0 * PI)).abs() < 1e-12);
        assert!((got - 0.0926665).abs() < 1e-6);
    }

    #[test]
    fn theta_examples() {
        assert!((theta(0, 0.5, &m2()).unwrap().value - 0.110318).abs() < 1e-6);
        assert!((theta(1, 0.5, &m2()).unwrap().value - 0.159155).abs() < 1e-6);
        assert!(theta(3, 0.5, &m2()).is_err());
        assert_eq!(theta(0, 1.0, &m2()), Err(AnalyticError::Fugacity(1.0)));
    }

    #[test]
    fn free_kernel_examples() {
        let m = m2();
        let o = point(&[0.0, 0.0]);
        let at0 = free_kernel(&o, &o, 0.5, &m, 1e-12).unwrap().value;
        assert!((at0 - theta(0, 0.5, &m).unwrap().value).abs() < 1e-12);
        // independent oracle: brute-force sum of 200 terms
        let direct: f64 =
            (1..=200).map(|k| 0.5f64.powi(k) / (2.0 * PI * k as f64) * (-1.0 / (2.0 * k as f64)).exp()).sum();
        let at1 = free_kernel(&o, &point(&[1.0, 0.0]), 0.5, &m, 1e-12).unwrap().value;
        assert!((at1 - direct).abs() < 1e-12);
        assert!((at1 - 0.0731).abs() < 5e-5);
        let far = free_kernel(&o, &point(&[20.0, 0.0]), 0.5, &m, 1e-16).unwrap().value;
        let direct: f64 =
            (1..=2000).map(|k| 0.5f64.powi(k) / (2.0 * PI * k as f64) * (-200.0 / k as f64).exp()).sum();
        assert!((far - direct).abs() < 1e-16 && far < 1e-11);
    }

    fn b_direct(count: impl Fn(f64) -> f64, m: &ModelParams, c: f64, l: f64) -> f64 {
        m.z()
            .iter()
            .map(|&z| {
                count(l)
                    * (1..=2000)
                        .map(|k| {
                            let kf = k as f64;
                            z.powi(k) * kf * (-(l * l - c * l) / (2.0 * kf)).exp()
                        })
                        .sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn b_of_c_examples() {
        let m = ModelParams::new(2, 1.0, vec![0.5, 0.5]);
        let grid: Vec<f64> = (0..19).map(|i| 1.0 + 0.5 * i as f64).collect();
        assert_eq!(b_of_c(|_| vec![0.0, 0.0], 1.0, &m, &grid).unwrap().value, 0.0);

        for count in [f64::ceil as fn(f64) -> f64, f64::floor] {
            let r = b_of_c(|l| vec![count(l); 2], 1.0, &m, &grid).unwrap();
            let (want_l, want) = grid
                .iter()
                .map(|&l| (l, b_direct(count, &m, 1.0, l)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert!((r.value - want).abs() < 1e-9 && r.argmax_l == want_l);
            assert!(!r.unbounded_on_grid);
        }
        let floor = b_of_c(|l| vec![l.floor(); 2], 1.0, &m, &grid).unwrap();
        assert!((floor.value - 5.1).abs() < 0.05 && floor.argmax_l == 2.0);

        let grow = b_of_c(|l| vec![(l * l).exp(); 2], 1.0, &m, &grid).unwrap();
        assert!(grow.unbounded_on_grid);
        assert!(b_of_c(|_| vec![1.0, 1.0], 1.0, &m, &[0.5]).is_err());
    }

    #[test]
    fn hs_bound_examples() {
        let unit = Cube::centered(2, 0.5).unwrap();
        assert!((hs_bound(&unit, &m2()) - 1f64.exp()).abs() < 1e-12);
        let tiny = ModelParams::new(2, 1.0, vec![1e-300]);
        assert_eq!(hs_bound(&unit, &tiny), 1.0);
        let big = Cube::centered(2, 0.5 * 2f64.sqrt()).unwrap();
        assert!((hs_bound(&big, &m2()) - hs_bound(&unit, &m2()).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn a_constants_structure() {
        let box0 = Cube::centered(2, 0.5).unwrap();
        let free = m2();
        let a = a_constants(&[1], 0, &box0, &free, (1.0, 1.0), 1.0).unwrap();
        assert_eq!((a.a1, a.a2, a.a3, a.a4), (0.0, 0.0, 0.0, 0.0));

        let bump = m2().with_potential(0, 0, PairPotential::smooth_bump(1.0, 1.0).unwrap());
        let v = bump.vbar1();
        let a0 = a_constants(&[0], 0, &box0, &bump, (1.0, 1.0), 1.0).unwrap();
        assert_eq!(a0.a2, 0.0);
        let a = a_constants(&[1], 0, &box0, &bump, (1.0, 1.0), 1.0).unwrap();
        let c = 2.0 * PI;
        let want = 0.5 * v * (0.5 / 0.25 / c) * (1.0 + 2f64.ln() / c);
        assert!((a.a1 - want).abs() < 1e-12);
        // unit V̄: 0.5 · (1/π) · (1 + ln2/2π)
        assert!((want / v - 0.176713).abs() < 1e-6);
        assert!(a_constants(&[200], 0, &box0, &bump, (1.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn tightness_examples() {
        let box0 = Cube::centered(2, 0.5).unwrap();
        let vals: Vec<f64> = [4, 16, 64, 256].iter().map(|&k| tightness_bound(k, &box0, &m2()).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
        let small = ModelParams::new(2, 1.0, vec![1e-3]);
        assert!(tightness_bound(4, &box0, &small).unwrap() < 1e-4);
    }

    #[test]
    fn tightness_matches_direct_sums() {
        let box0 = Cube::centered(2, 0.5).unwrap();
        let m = m2();
        let k0 = 9u32;
        let v = 1.0;
        let th0 = -(0.5f64).ln() / (2.0 * PI);
        let thm1 = (PI * PI / 12.0 - 0.5 * 2f64.ln().powi(2)) / (2.0 * PI);
        let fact = |n: i32| (1..=n).map(|i| i as f64).product::<f64>();
        let t3: f64 = (4..60).map(|n| (v * thm1).powi(n) / fact(n)).sum();
        let ks: f64 = (3..400).map(|k| 0.5f64.powi(k) / (k as f64 * 2.0 * PI * k as f64)).sum();
        let t4: f64 = ks * (1..=3).map(|n| n as f64 * v.powi(n) * thm1.powi(n - 1) / fact(n)).sum::<f64>();
        let want = (v * (1.0 + th0)).exp() * (t3 + t4);
        let got = tightness_bound(k0, &box0, &m).unwrap();
        assert!((got - want).abs() < 1e-11, "{got} vs {want}");
    }

    #[test]
    fn dirichlet_trace_examples() {
        let direct: f64 = (1..=10).map(|n| (-0.5 * (n as f64 * PI / 2.0).powi(2)).exp()).sum();
        let got = dirichlet_trace_series(1.0, 1.0, 10);
        assert_eq!(got, direct);
        assert!((got - 0.29843).abs() < 2e-5);
        let cold = dirichlet_trace_series(1.0, 100.0, 10);
        assert!(cold < 1e-53 && (cold / (-100.0 * PI * PI / 8.0).exp() - 1.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn theta_increasing_in_z(a in -1i32..=2, z in 0.01f64..0.95, dz in 1e-3f64..0.04) {
            let m = ModelParams::new(2, 1.0, vec![z]);
            let lo = theta(a, z, &m).unwrap().value;
            let hi = theta(a, z + dz, &m).unwrap().value;
            prop_assert!(hi > lo);
        }

        #[test]
        fn free_kernel_decreasing_in_distance(r in 0.0f64..5.0, dr in 0.01f64..1.0) {
            let m = m2();
            let o = ORIGIN;
            let a = free_kernel(&o, &point(&[r, 0.0]), 0.5, &m, 1e-13).unwrap().value;
            let b = free_kernel(&o, &point(&[r + dr, 0.0]), 0.5, &m, 1e-13).unwrap().value;
            prop_assert!(b < a);
        }
    }
}
