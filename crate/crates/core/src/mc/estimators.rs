use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use std::f64::consts::PI;

use super::{Chain, ChainError, ChainParams, FreeSpace, Propagator};
use crate::bridge::{gaussian_mass, sample_bridge};
use crate::loopgas::{
    alpha_indicator, chi_indicator, energy_h, path_avoids_at_integer_times, Concat, EnergyOptions, LoopConfig,
    OpenPathSystem, PathSet,
};
use crate::model::{Cube, ExternalCC, ModelParams, Point};

/// Smallest number of batches behind any reported standard error.
pub const MIN_BATCHES: usize = 16;

/// Sample mean with a batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mean {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Mean and batch-means error of `series` over `n_batches` equal batches
/// (trailing remainder dropped). `None` if there are fewer samples than
/// batches or fewer than [`MIN_BATCHES`] batches.
pub fn batch_means(series: &[f64], n_batches: usize) -> Option<Mean> {
    if n_batches < MIN_BATCHES || series.len() < n_batches {
        return None;
    }
    let b = series.len() / n_batches;
    let used = &series[..b * n_batches];
    let means: Vec<f64> = used.chunks(b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
    let mean = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    Some(Mean { value: mean, std_error: (var / n_batches as f64).sqrt(), n: used.len() })
}

fn default_batches(n: usize) -> usize {
    (n / 64).clamp(MIN_BATCHES, 64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimateStatus {
    Ok,
    /// Per-type cardinalities of the two arguments differ; the kernel is exactly zero.
    ZeroByCardinality,
    /// The budget did not reach [`MIN_BATCHES`] batches.
    InsufficientSamples,
}

/// Monte Carlo kernel value with its error and a parameter echo.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub slices: u32,
    pub half_side: f64,
    pub k_max: u32,
    pub seed: u64,
    /// Upper bound on the mass dropped by truncating multiplicities at `k_max`.
    pub truncation_bound: f64,
    pub status: EstimateStatus,
}

impl KernelEstimate {
    /// Tolerance for comparing against an exact value known to within
    /// `oracle_error`: `4 sqrt(se² + oracle_error²) + truncation_bound`.
    pub fn tolerance(&self, oracle_error: f64) -> f64 {
        4.0 * (self.std_error.powi(2) + oracle_error.powi(2)).sqrt() + self.truncation_bound
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelOptions {
    pub k_max: u32,
    pub slices: u32,
    /// Total number of inner path samples.
    pub samples: usize,
    /// Inner samples drawn against each background configuration.
    pub per_background: usize,
    /// Diagnostic mode: drop the entry indicator for the box and the
    /// requirement that background anchors avoid it.
    pub exclude_box0: bool,
    pub energy: EnergyOptions,
    /// Echoed into the result.
    pub seed: u64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            k_max: 20,
            slices: 32,
            samples: 4096,
            per_background: 16,
            exclude_box0: false,
            energy: EnergyOptions::default(),
            seed: 0,
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Per-type sampling tables: permutations weighted by `Π_l Z_l(π)` and
/// per-leg multiplicity laws `∝ z^k mass_k`.
struct TypeTable {
    perms: Vec<Vec<usize>>,
    perm_pick: Option<WeightedIndex<f64>>,
    // k weights for leg (l, target) indexed [l * n + target]
    k_pick: Vec<Option<WeightedIndex<f64>>>,
    total: f64,
    total_padded: f64,
}

impl TypeTable {
    fn new(x: &[Point], y: &[Point], z: f64, m: &ModelParams, k_max: u32) -> Self {
        let n = x.len();
        let tail = z.powi(k_max as i32 + 1) / (1.0 - z)
            * (2.0 * PI * m.beta() * (k_max + 1) as f64).powf(-(m.dim() as f64) / 2.0);
        let mut zl = vec![0.0; n * n];
        let mut k_pick = Vec::with_capacity(n * n);
        for l in 0..n {
            for t in 0..n {
                let w: Vec<f64> = (1..=k_max).map(|k| z.powi(k as i32) * gaussian_mass(&x[l], &y[t], k, m)).collect();
                zl[l * n + t] = w.iter().sum();
                k_pick.push(WeightedIndex::new(&w).ok());
            }
        }
        let perms = permutations(n);
        let pw: Vec<f64> = perms.iter().map(|p| (0..n).map(|l| zl[l * n + p[l]]).product()).collect();
        let padded: f64 = perms.iter().map(|p| (0..n).map(|l| zl[l * n + p[l]] + tail).product::<f64>()).sum();
        let total = pw.iter().sum();
        Self { perm_pick: WeightedIndex::new(&pw).ok(), perms, k_pick, total, total_padded: padded }
    }

    /// Draws a permutation and per-leg multiplicities.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<usize>, Vec<u32>) {
        let n = self.perms.first().map_or(0, Vec::len);
        let Some(pp) = &self.perm_pick else {
            return (self.perms[0].clone(), vec![1; n]);
        };
        let p = self.perms[pp.sample(rng)].clone();
        let ks = (0..n)
            .map(|l| self.k_pick[l * n + p[l]].as_ref().map_or(1, |d| d.sample(rng) as u32 + 1))
            .collect();
        (p, ks)
    }
}

fn cardinalities_match(x0: &[Vec<Point>], y0: &[Vec<Point>]) -> bool {
    x0.len() == y0.len() && x0.iter().zip(y0).all(|(a, b)| a.len() == b.len())
}

fn tables(x0: &[Vec<Point>], y0: &[Vec<Point>], m: &ModelParams, k_max: u32) -> (Vec<TypeTable>, f64, f64) {
    let t: Vec<TypeTable> =
        (0..x0.len()).map(|j| TypeTable::new(&x0[j], &y0[j], m.z()[j], m, k_max)).collect();
    let total: f64 = t.iter().map(|t| t.total).product();
    let padded: f64 = t.iter().map(|t| t.total_padded).product();
    (t, total, (padded - total).max(0.0))
}

fn draw_system<R: Rng + ?Sized>(
    t: &[TypeTable],
    x0: &[Vec<Point>],
    y0: &[Vec<Point>],
    slices: u32,
    m: &ModelParams,
    rng: &mut R,
) -> Vec<OpenPathSystem> {
    t.iter()
        .enumerate()
        .map(|(j, tab)| {
            let (perm, ks) = tab.draw(rng);
            let paths = (0..perm.len())
                .map(|l| sample_bridge(&x0[j][l], &y0[j][perm[l]], ks[l], slices, m.dim(), m.beta(), rng))
                .collect();
            OpenPathSystem { type_j: j, starts: x0[j].clone(), ends: y0[j].clone(), perm, paths }
        })
        .collect()
}

fn finish(series: &[f64], opts: &KernelOptions, half_side: f64, trunc: f64) -> KernelEstimate {
    let base = KernelEstimate {
        value: 0.0,
        std_error: 0.0,
        n_samples: series.len(),
        slices: opts.slices,
        half_side,
        k_max: opts.k_max,
        seed: opts.seed,
        truncation_bound: trunc,
        status: EstimateStatus::Ok,
    };
    match batch_means(series, default_batches(series.len())) {
        Some(mean) => KernelEstimate { value: mean.value, std_error: mean.std_error, ..base },
        None => KernelEstimate { status: EstimateStatus::InsufficientSamples, ..base },
    }
}

fn zero_estimate(opts: &KernelOptions, half_side: f64) -> KernelEstimate {
    KernelEstimate {
        value: 0.0,
        std_error: 0.0,
        n_samples: 0,
        slices: opts.slices,
        half_side,
        k_max: opts.k_max,
        seed: opts.seed,
        truncation_bound: 0.0,
        status: EstimateStatus::ZeroByCardinality,
    }
}

/// Runs `chain` and keeps `n` configurations spaced `sweeps_between` sweeps apart.
pub fn collect_backgrounds<P: Propagator>(chain: &mut Chain<P>, n: usize, sweeps_between: u64) -> Vec<LoopConfig> {
    (0..n)
        .map(|_| {
            chain.run(sweeps_between.max(1), |_| {});
            chain.config().clone()
        })
        .collect()
}

/// Nested Monte Carlo estimate of the reduced-density-matrix kernel between
/// classical configurations `x0`, `y0` (per type point lists in `box0`).
///
/// Inner open-path systems are drawn with permutations and multiplicities
/// proportional to their free masses; each draw is weighted by the total
/// free mass times the confinement and box-entry indicators and
/// `exp(-h(paths | background ∨ ext))`. `backgrounds` are samples of the
/// finite-volume loop gas in `home` (an empty slice means an empty
/// background); they are cycled through, `per_background` draws each.
#[allow(clippy::too_many_arguments)]
pub fn estimate_kernel_f<R: Rng + ?Sized>(
    x0: &[Vec<Point>],
    y0: &[Vec<Point>],
    m: &ModelParams,
    home: &Cube,
    box0: &Cube,
    ext: &ExternalCC,
    backgrounds: &[LoopConfig],
    opts: &KernelOptions,
    rng: &mut R,
) -> KernelEstimate {
    if !cardinalities_match(x0, y0) {
        return zero_estimate(opts, home.half_side());
    }
    let (tabs, total, trunc) = tables(x0, y0, m, opts.k_max);
    let empty = LoopConfig::new(*home, opts.slices, m.q());
    let ext = (!ext.is_empty()).then_some(ext);
    let per = opts.per_background.max(1);
    let mut series = Vec::with_capacity(opts.samples);
    for t in 0..opts.samples {
        let bg = if backgrounds.is_empty() { &empty } else { &backgrounds[(t / per) % backgrounds.len()] };
        if !opts.exclude_box0 && bg.loops.iter().any(|l| box0.contains(l.anchor())) {
            series.push(0.0);
            continue;
        }
        let sys = draw_system(&tabs, x0, y0, opts.slices, m, rng);
        if !alpha_indicator(&sys, home) {
            series.push(0.0);
            continue;
        }
        if !opts.exclude_box0 && !chi_indicator(&Concat(&sys, bg), box0) {
            series.push(0.0);
            continue;
        }
        let h = energy_h(&sys, Some(bg as &dyn PathSet), ext, m, opts.energy).expect("uniform discretization");
        series.push(total * (-h).exp());
    }
    finish(&series, opts, home.half_side(), trunc)
}

/// Monte Carlo estimate of the free reference kernel: the permutation sum of
/// per-leg `Σ_k z^k mass_k` times the probability that no leg sits in `box0`
/// at an intermediate integer time. Only the integer-time points are sampled.
pub fn estimate_q<R: Rng + ?Sized>(
    x0: &[Vec<Point>],
    y0: &[Vec<Point>],
    m: &ModelParams,
    box0: &Cube,
    opts: &KernelOptions,
    rng: &mut R,
) -> KernelEstimate {
    if !cardinalities_match(x0, y0) {
        return zero_estimate(opts, box0.half_side());
    }
    let (tabs, total, trunc) = tables(x0, y0, m, opts.k_max);
    let series: Vec<f64> = (0..opts.samples)
        .map(|_| {
            let sys = draw_system(&tabs, x0, y0, 1, m, rng);
            let ok = sys.iter().all(|s| s.paths.iter().all(|p| path_avoids_at_integer_times(p, box0)));
            if ok {
                total
            } else {
                0.0
            }
        })
        .collect();
    let mut e = finish(&series, opts, box0.half_side(), trunc);
    e.slices = 1;
    e
}

/// Anchor densities in a window, per type and per multiplicity.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate {
    pub per_type: Vec<Mean>,
    pub total: Mean,
    /// `histogram[j][k-1]`: mean density of type-`j` anchors with multiplicity `k`.
    pub histogram: Vec<Vec<f64>>,
    /// Window closer to the home boundary than the interaction range.
    pub boundary_warning: bool,
}

fn window_counts(c: &LoopConfig, window: &Cube, q: usize, k_max: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut n = vec![0.0; q];
    let mut h = vec![vec![0.0; k_max]; q];
    for l in &c.loops {
        if window.contains(l.anchor()) {
            n[l.type_j] += 1.0;
            if let Some(slot) = h[l.type_j].get_mut(l.k() as usize - 1) {
                *slot += 1.0;
            }
        }
    }
    (n, h)
}

/// Runs `sweeps` sweeps and averages the anchor density in `window`.
pub fn estimate_density<P: Propagator>(chain: &mut Chain<P>, window: &Cube, sweeps: u64) -> DensityEstimate {
    let q = chain.model().q();
    let k_max = chain.params().k_max as usize;
    let vol = window.volume();
    let mut series = vec![Vec::with_capacity(sweeps as usize); q];
    let mut total = Vec::with_capacity(sweeps as usize);
    let mut hist = vec![vec![0.0; k_max]; q];
    chain.run(sweeps, |c| {
        let (n, h) = window_counts(c, window, q, k_max);
        for j in 0..q {
            series[j].push(n[j] / vol);
            for k in 0..k_max {
                hist[j][k] += h[j][k] / vol;
            }
        }
        total.push(n.iter().sum::<f64>() / vol);
    });
    let nb = default_batches(sweeps as usize);
    let nan = Mean { value: f64::NAN, std_error: f64::NAN, n: 0 };
    let per_type = series.iter().map(|s| batch_means(s, nb).unwrap_or(nan)).collect();
    let margin = chain.propagator().home().margin_of(window);
    DensityEstimate {
        per_type,
        total: batch_means(&total, nb).unwrap_or(nan),
        histogram: hist.into_iter().map(|h| h.into_iter().map(|x| x / sweeps as f64).collect()).collect(),
        boundary_warning: margin < chain.model().max_range(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailEstimate {
    pub k0: u32,
    pub probability: Mean,
}

/// Probability that some type has total multiplicity `≥ k0` among loops
/// anchored in `box0`, for each requested `k0`, from one run of `sweeps` sweeps.
pub fn estimate_k_tail<P: Propagator>(chain: &mut Chain<P>, box0: &Cube, k0s: &[u32], sweeps: u64) -> Vec<TailEstimate> {
    let q = chain.model().q();
    let mut series = vec![Vec::with_capacity(sweeps as usize); k0s.len()];
    chain.run(sweeps, |c| {
        let mut kt = vec![0u64; q];
        for l in c.loops.iter().filter(|l| box0.contains(l.anchor())) {
            kt[l.type_j] += l.k() as u64;
        }
        let kmax = kt.into_iter().max().unwrap_or(0);
        for (i, &k0) in k0s.iter().enumerate() {
            series[i].push((kmax >= k0 as u64) as u8 as f64);
        }
    });
    let nb = default_batches(sweeps as usize);
    k0s.iter()
        .zip(series)
        .map(|(&k0, s)| TailEstimate {
            k0,
            probability: batch_means(&s, nb).unwrap_or(Mean { value: f64::NAN, std_error: f64::NAN, n: 0 }),
        })
        .collect()
}

/// Outcome of the translation-invariance consistency check. This is an
/// empirical comparison of two windows of one finite-volume chain, not a
/// proof of anything.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftReport {
    pub density_a: Vec<Mean>,
    pub density_b: Vec<Mean>,
    /// Per-type `density_a - density_b` with its joint batch-means error.
    pub difference: Vec<Mean>,
    pub histogram_a: Vec<Vec<f64>>,
    pub histogram_b: Vec<Vec<f64>>,
    /// Largest per-type |difference| / error.
    pub max_z: f64,
    pub pass: bool,
}

/// Runs one chain in `home` and compares per-type anchor densities in
/// `box0` and in `box0` shifted by `shift`. Both windows must sit inside
/// `home` with margin at least `R + 3 sqrt(beta)`.
#[allow(clippy::too_many_arguments)]
pub fn shift_invariance_probe(
    m: &ModelParams,
    home: &Cube,
    box0: &Cube,
    shift: &Point,
    ext: &ExternalCC,
    params: ChainParams,
    burn_in: u64,
    sweeps: u64,
    seed: u64,
) -> Result<ShiftReport, ChainError> {
    let shifted = box0.shifted(shift);
    let need = m.max_range() + 3.0 * m.beta().sqrt();
    let margin = home.margin_of(box0).min(home.margin_of(&shifted));
    if margin < need {
        return Err(ChainError::MarginViolation { margin, required: need });
    }
    let mut chain = Chain::new(m.clone(), FreeSpace::new(*home), params, seed)?;
    if !ext.is_empty() {
        let mut c = chain.config().clone();
        c.external = ext.clone();
        chain.set_config(c)?;
    }
    chain.run(burn_in, |_| {});
    let q = m.q();
    let k_max = chain.params().k_max as usize;
    let (va, vb) = (box0.volume(), shifted.volume());
    let mut sa = vec![Vec::new(); q];
    let mut sb = vec![Vec::new(); q];
    let mut sd = vec![Vec::new(); q];
    let mut ha = vec![vec![0.0; k_max]; q];
    let mut hb = vec![vec![0.0; k_max]; q];
    chain.run(sweeps, |c| {
        let (na, ca) = window_counts(c, box0, q, k_max);
        let (nb, cb) = window_counts(c, &shifted, q, k_max);
        for j in 0..q {
            sa[j].push(na[j] / va);
            sb[j].push(nb[j] / vb);
            sd[j].push(na[j] / va - nb[j] / vb);
            for k in 0..k_max {
                ha[j][k] += ca[j][k] / va / sweeps as f64;
                hb[j][k] += cb[j][k] / vb / sweeps as f64;
            }
        }
    });
    let nb = default_batches(sweeps as usize);
    let nan = Mean { value: f64::NAN, std_error: f64::NAN, n: 0 };
    let mean = |s: &Vec<f64>| batch_means(s, nb).unwrap_or(nan);
    let difference: Vec<Mean> = sd.iter().map(mean).collect();
    let max_z = difference
        .iter()
        .map(|d| if d.std_error > 0.0 { d.value.abs() / d.std_error } else if d.value == 0.0 { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    Ok(ShiftReport {
        density_a: sa.iter().map(mean).collect(),
        density_b: sb.iter().map(mean).collect(),
        pass: max_z <= 3.0,
        difference,
        histogram_a: ha,
        histogram_b: hb,
        max_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::point;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batch_means_basics() {
        assert!(batch_means(&[1.0; 10], 16).is_none());
        let m = batch_means(&[2.0; 64], 16).unwrap();
        assert_eq!((m.value, m.std_error, m.n), (2.0, 0.0, 64));
        assert!(batch_means(&[1.0; 64], 8).is_none());
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn mismatched_cardinalities_give_exact_zero() {
        let m = ModelParams::new(2, 1.0, vec![0.5]);
        let home = Cube::centered(2, 4.0).unwrap();
        let box0 = Cube::centered(2, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = estimate_kernel_f(
            &[vec![point(&[0.0, 0.0])]],
            &[vec![]],
            &m,
            &home,
            &box0,
            &ExternalCC::empty(1),
            &[],
            &KernelOptions::default(),
            &mut rng,
        );
        assert_eq!((e.value, e.std_error, e.n_samples), (0.0, 0.0, 0));
        assert_eq!(e.status, EstimateStatus::ZeroByCardinality);
    }

    #[test]
    fn small_budget_reports_insufficient_samples() {
        let m = ModelParams::new(2, 1.0, vec![0.5]);
        let box0 = Cube::centered(2, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = vec![vec![point(&[0.1, 0.0])]];
        let e = estimate_q(&x, &x, &m, &box0, &KernelOptions { samples: 10, ..Default::default() }, &mut rng);
        assert_eq!(e.status, EstimateStatus::InsufficientSamples);
    }

    #[test]
    fn q_is_at_least_the_single_leg_term() {
        let m = ModelParams::new(2, 1.0, vec![0.5]);
        let box0 = Cube::centered(2, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![vec![point(&[0.2, -0.1])]];
        let e = estimate_q(&x, &x, &m, &box0, &KernelOptions { samples: 4096, ..Default::default() }, &mut rng);
        let k1 = 0.5 / (2.0 * PI);
        assert!(e.value >= k1 - 3.0 * e.std_error, "{e:?}");
    }
}
