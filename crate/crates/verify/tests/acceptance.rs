//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test -p loopgas-verify --test acceptance -- 2 5`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use loopgas_core::analytic::{a_constants, dirichlet_trace_series, free_kernel, hs_bound, theta, tightness_bound};
use loopgas_core::bridge::{bridge_max_tail, sample_bridge};
use loopgas_core::loopgas::LoopConfig;
use loopgas_core::mc::{
    batch_means, collect_backgrounds, estimate_density, estimate_k_tail, estimate_kernel_f, estimate_q,
    shift_invariance_probe, Chain, ChainParams, FreeSpace, KernelOptions, Mean,
};
use loopgas_core::model::point;
use loopgas_core::oracle::{check_compatibility, Boundary, LatticeModel};
use loopgas_core::{Cube, ExternalCC, ModelParams, PairPotential, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn free_model(z: Vec<f64>) -> ModelParams {
    ModelParams::new(2, 1.0, z)
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

// 1. free-gas kernel against the closed-form series
fn free_gas_kernel() -> Outcome {
    let m = free_model(vec![0.5]);
    let k_max = 20u32;
    let half = (6.0 * (m.beta() * k_max as f64).sqrt()).ceil();
    let home = Cube::centered(2, half).unwrap();
    let box0 = Cube::centered(2, 0.5).unwrap();
    let opts = KernelOptions { k_max, samples: 20_000, exclude_box0: true, seed: 11, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, stated) in [(0.0, 0.110318), (1.0, 0.0731)] {
        let x = point(&[0.0, 0.0]);
        let y = point(&[r, 0.0]);
        let oracle = free_kernel(&x, &y, 0.5, &m, 1e-14).unwrap();
        let e = estimate_kernel_f(&[vec![x]], &[vec![y]], &m, &home, &box0, &ExternalCC::empty(1), &[], &opts, &mut rng);
        let tol = e.tolerance(oracle.tail_bound);
        let ok = within(e.value, oracle.value, tol) && within(oracle.value, stated, 5e-5);
        pass &= ok;
        parts.push(format!(
            "|x-y|={r}: F={:.6}±{:.1e} oracle={:.6} (stated {stated}) tol={tol:.1e}",
            e.value, e.std_error, oracle.value
        ));
    }
    outcome(pass, format!("L={half} K_max={k_max}; {}", parts.join("; ")))
}

// 2. bridge maximum law against the image series
fn skorohod() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let n = 100_000;
    let (beta, slices) = (1.0, 64u32);
    let dt = beta / slices as f64;
    let x = point(&[0.0]);
    let mut pass = true;
    let mut parts = Vec::new();
    let draws: Vec<_> = (0..n).map(|_| sample_bridge(&x, &x, 1, slices, 1, beta, &mut rng)).collect();
    for a in [0.5, 1.0, 1.5] {
        let exact = bridge_max_tail(a, 1, 0.0, beta).unwrap();
        let cube = Cube::new(1, x, a).unwrap();
        let series: Vec<f64> = draws.iter().map(|p| p.exit_probability(&cube, dt)).collect();
        let mean = batch_means(&series, 64).unwrap();
        let ok = within(mean.value, exact, 4.0 * mean.std_error);
        pass &= ok;
        parts.push(format!("a={a}: MC={:.4}±{:.4} exact={exact:.4}", mean.value, mean.std_error));
        if a == 1.0 {
            pass &= within(exact, 0.2700, 5e-5);
        }
    }
    outcome(pass, format!("{n} draws; {}", parts.join("; ")))
}

// 3. Dirichlet trace by confined bridges
fn dirichlet_trace() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (half, beta, slices, n) = (1.0, 1.0, 64u32, 200_000);
    let cube = Cube::centered(1, half).unwrap();
    let dt = beta / slices as f64;
    let mass = (2.0 * PI * beta).powf(-0.5);
    let series: Vec<f64> = (0..n)
        .map(|_| {
            let x = cube.sample_uniform(&mut rng);
            let p = sample_bridge(&x, &x, 1, slices, 1, beta, &mut rng);
            cube.volume() * mass * (1.0 - p.exit_probability(&cube, dt))
        })
        .collect();
    let mean = batch_means(&series, 64).unwrap();
    let exact = dirichlet_trace_series(half, beta, 50);
    let pass = within(mean.value, exact, 4.0 * mean.std_error);
    outcome(pass, format!("MC={:.5}±{:.5} series={exact:.5} (stated 0.29843)", mean.value, mean.std_error))
}

fn random_points(box0: &Cube, counts: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<Point>> {
    counts.iter().map(|&n| (0..n).map(|_| box0.sample_uniform(rng)).collect()).collect()
}

// 4. the interacting kernel is dominated by the free reference kernel
fn domination() -> Outcome {
    let hc = PairPotential::hard_core(0.3).unwrap();
    let m = free_model(vec![0.5, 0.5]).with_potential(0, 0, hc.clone()).with_potential(0, 1, hc.clone()).with_potential(1, 1, hc);
    let home = Cube::centered(2, 3.0).unwrap();
    let box0 = Cube::centered(2, 0.5).unwrap();
    let params = ChainParams { k_max: 12, ..Default::default() };
    let mut chain = Chain::new(m.clone(), FreeSpace::new(home), params, 44).unwrap();
    chain.run(500, |_| {});
    let bgs: Vec<LoopConfig> = collect_backgrounds(&mut chain, 400, 5);
    let opts = KernelOptions { k_max: 12, samples: 20_000, per_background: 50, seed: 44, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for _ in 0..10 {
        let counts = loop {
            let c = vec![rng.random_range(0..=2usize), rng.random_range(0..=2usize)];
            let t: usize = c.iter().sum();
            if (1..=2).contains(&t) {
                break c;
            }
        };
        let x = random_points(&box0, &counts, &mut rng);
        let y = random_points(&box0, &counts, &mut rng);
        let f = estimate_kernel_f(&x, &y, &m, &home, &box0, &ExternalCC::empty(2), &bgs, &opts, &mut rng);
        let q = estimate_q(&x, &y, &m, &box0, &opts, &mut rng);
        let sigma = (f.std_error.powi(2) + q.std_error.powi(2)).sqrt();
        let z = if sigma > 0.0 { (f.value - q.value) / sigma } else if f.value <= q.value { f64::NEG_INFINITY } else { f64::INFINITY };
        worst = worst.max(z);
        pass &= f.value <= q.value + 3.0 * sigma;
    }
    outcome(pass, format!("10 pairs, n<=2, {} backgrounds; max (F-Q)/sigma = {worst:.2}", bgs.len()))
}

// 5. compatibility of nested partial traces
fn compatibility() -> Outcome {
    let m = ModelParams::new(1, 1.0, vec![0.4, 0.6]).with_potential(0, 1, PairPotential::hard_core(1.0).unwrap());
    let lm = LatticeModel::line(4, 1.0, m, vec![2, 2], Boundary::Dirichlet).unwrap();
    let ext = ExternalCC::empty(2);
    let d1 = check_compatibility(&lm, &ext, &[0, 1, 2], &[1, 2]).unwrap();
    let d2 = check_compatibility(&lm, &ext, &[1, 2, 3], &[2]).unwrap();
    let d = d1.max(d2);
    outcome(d < 1e-12, format!("4-site quantum WR, n_max=2: max deviation {d:.2e}"))
}

// 6. multiplicity tail against the analytic tightness bound
fn tightness() -> Outcome {
    let home = Cube::centered(2, 4.0).unwrap();
    let box0 = Cube::centered(2, 0.5).unwrap();
    let k0s = [4u32, 9, 16];
    let mut pass = true;
    let mut parts = Vec::new();
    let models = [
        ("free", free_model(vec![0.5])),
        ("square-well", free_model(vec![0.5]).with_potential(0, 0, PairPotential::square_well(1.0, 0.5).unwrap())),
    ];
    for (name, m) in models {
        let mut chain = Chain::new(m.clone(), FreeSpace::new(home), ChainParams::default(), 66).unwrap();
        chain.run(1_000, |_| {});
        let tails = estimate_k_tail(&mut chain, &box0, &k0s, 200_000);
        for t in tails {
            let bound = tightness_bound(t.k0, &box0, &m).unwrap();
            let ok = t.probability.value <= bound + 3.0 * t.probability.std_error;
            pass &= ok;
            parts.push(format!("{name} k0={}: {:.2e}±{:.1e} <= {bound:.3e}", t.k0, t.probability.value, t.probability.std_error));
        }
    }
    outcome(pass, parts.join("; "))
}

// 7. detailed balance on the enumerable lattice surrogate
fn detailed_balance() -> Outcome {
    let s = common::Surrogate::new(loopgas_core::mc::KProposal::Uniform);
    let moves: [(&str, fn(&mut Chain<loopgas_core::mc::LatticeLine>) -> bool); 3] = [
        ("insert/delete", |c| c.update_insert_delete()),
        ("merge/split", |c| c.update_swap()),
        ("wiggle", |c| c.update_wiggle()),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (name, mv)) in moves.into_iter().enumerate() {
        let counts = s.transitions(1_000_000, 70 + i as u64, mv);
        let (stat, df, p) = common::pair_chi_square(&counts, 10);
        pass &= p > 0.01;
        parts.push(format!("{name}: chi2={stat:.1} df={df} p={p:.3}"));
    }
    outcome(pass, format!("{} states; {}", s.states.len(), parts.join("; ")))
}

fn window_density(m: &ModelParams, seed: u64) -> Mean {
    let home = Cube::centered(2, 7.0).unwrap();
    let window = Cube::centered(2, 2.0).unwrap();
    let mut chain = Chain::new(m.clone(), FreeSpace::new(home), ChainParams::default(), seed).unwrap();
    chain.run(1_000, |_| {});
    estimate_density(&mut chain, &window, 200_000).total
}

// 8. repulsion lowers the density; free density matches the series
fn suppression() -> Outcome {
    let free = free_model(vec![0.5]);
    let sw = free_model(vec![0.5]).with_potential(0, 0, PairPotential::square_well(1.0, 1.0).unwrap());
    let rho_free = window_density(&free, 81);
    let rho_sw = window_density(&sw, 82);
    let sigma = (rho_free.std_error.powi(2) + rho_sw.std_error.powi(2)).sqrt();
    let th = theta(-1, 0.5, &free).unwrap().value;
    let ok_order = rho_sw.value <= rho_free.value + 3.0 * sigma;
    let ok_free = within(rho_free.value, th, 4.0 * rho_free.std_error);
    outcome(
        ok_order && ok_free,
        format!(
            "free {:.5}±{:.5} vs Theta_-1 {th:.6} (stated 0.092657); square-well {:.5}±{:.5}",
            rho_free.value, rho_free.std_error, rho_sw.value, rho_sw.std_error
        ),
    )
}

// 9. translation consistency of window densities (empirical check only)
fn shift_invariance() -> Outcome {
    let m = free_model(vec![0.5, 0.5]).with_potential(0, 1, PairPotential::hard_core(0.3).unwrap());
    let home = Cube::centered(2, 8.0).unwrap();
    let box0 = Cube::centered(2, 1.0).unwrap();
    let shift = point(&[3.0, 0.0]);
    let r = shift_invariance_probe(&m, &home, &box0, &shift, &ExternalCC::empty(2), ChainParams::default(), 2_000, 200_000, 99)
        .unwrap();
    let d: Vec<String> = r
        .difference
        .iter()
        .zip(&r.density_a)
        .map(|(d, a)| format!("rho={:.4} diff={:+.4}±{:.4}", a.value, d.value, d.std_error))
        .collect();
    outcome(r.pass, format!("L=8, shift (3,0): {}; max |z| = {:.2} (consistency check, not a proof)", d.join(", "), r.max_z))
}

fn q_squared_integral(m: &ModelParams, box0: &Cube, n_axis: usize, samples: usize) -> f64 {
    // trapezoid over a grid of n_axis points per coordinate of (x, y) in box0²
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let h = 2.0 * box0.half_side() / (n_axis - 1) as f64;
    let nodes: Vec<(f64, f64)> = (0..n_axis)
        .map(|i| (-box0.half_side() + i as f64 * h, if i == 0 || i == n_axis - 1 { 0.5 * h } else { h }))
        .collect();
    let opts = KernelOptions { samples, ..Default::default() };
    let mut total = 0.0;
    for &(x1, w1) in &nodes {
        for &(x2, w2) in &nodes {
            for &(y1, w3) in &nodes {
                for &(y2, w4) in &nodes {
                    let x = vec![vec![point(&[x1, x2])]];
                    let y = vec![vec![point(&[y1, y2])]];
                    let q = estimate_q(&x, &y, m, box0, &opts, &mut rng).value;
                    total += w1 * w2 * w3 * w4 * q * q;
                }
            }
        }
    }
    total
}

// 10. analytic closed forms and the worked constants
fn analytic_forms() -> Outcome {
    let mut worst_stated: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    for i in 1..=9 {
        let z = i as f64 / 10.0;
        let m = free_model(vec![z]);
        let c = 2.0 * PI;
        let t = |a| theta(a, z, &m).unwrap().value;
        let common = [(t(0) - -(1.0 - z).ln() / c).abs(), (t(1) - z / (1.0 - z) / c).abs()];
        for e in common {
            worst_stated = worst_stated.max(e);
            worst_exact = worst_exact.max(e);
        }
        // the listed second-index form and the form obtained by summing the series
        worst_stated = worst_stated.max((t(2) - z * (1.0 + z) / (1.0 - z).powi(3) / c).abs());
        worst_exact = worst_exact.max((t(2) - z / (1.0 - z).powi(2) / c).abs());
    }
    let theta_ok = worst_stated < 1e-10;

    let m = free_model(vec![0.5]);
    let box0 = Cube::centered(2, 0.5).unwrap();
    let hs = hs_bound(&box0, &m);
    let integral = 1.0 + q_squared_integral(&m, &box0, 5, 2_000);
    let hs_ok = integral < hs;

    let bump = m.clone().with_potential(0, 0, PairPotential::smooth_bump(1.0, 1.0).unwrap());
    let a = a_constants(&[1], 0, &box0, &bump, (1.0, 1.0), 0.0).unwrap();
    let a1_unit = a.a1 / bump.vbar1();
    let a1_ok = within(a1_unit, 0.265055, 1e-6);
    outcome(
        theta_ok && hs_ok && a1_ok,
        format!(
            "theta: listed forms max err {worst_stated:.1e} ({}), summed forms max err {worst_exact:.1e}; \
             hs_bound {hs:.4} vs 1+∫∫Q² {integral:.4} ({}); A1(V̄=1) = {a1_unit:.6} vs stated 0.265055 ({})",
            if theta_ok { "ok" } else { "FAIL" },
            if hs_ok { "ok" } else { "FAIL" },
            if a1_ok { "ok" } else { "FAIL" },
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("free-gas kernel", free_gas_kernel),
        ("bridge maximum law", skorohod),
        ("Dirichlet trace", dirichlet_trace),
        ("domination by the free kernel", domination),
        ("partial-trace compatibility", compatibility),
        ("multiplicity tightness", tightness),
        ("detailed balance", detailed_balance),
        ("repulsive suppression", suppression),
        ("2D shift consistency", shift_invariance),
        ("analytic closed forms", analytic_forms),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        ran += 1;
        failed += !o.pass as usize;
        println!(
            "[{}] {id:>2} {name} ({:.1}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
