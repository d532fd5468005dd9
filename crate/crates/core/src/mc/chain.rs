use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

use super::{FreeSpace, Propagator};
use crate::bridge::BridgePath;
use crate::loopgas::{
    cross_energy, energy_h, external_energy, internal_energy, legs_of, EnergyOptions, Leg, Loop, LoopConfig,
    LoopgasError,
};
use crate::model::{ModelParams, Point, ORIGIN};

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("invalid chain parameter: {0}")]
    BadParams(String),
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error(transparent)]
    Config(#[from] LoopgasError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("window margin {margin} is below the required {required}")]
    MarginViolation { margin: f64, required: f64 },
}

/// How the multiplicity of an inserted loop is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KProposal {
    /// Uniform on `1..=K_max`.
    #[default]
    Uniform,
    /// Proportional to the free-gas intensity `z^k / (k (2 pi beta k)^{d/2})`.
    FreeIntensity,
}

/// Relative frequencies of the three move families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateMix {
    pub insert_delete: f64,
    pub swap: f64,
    pub wiggle: f64,
}

impl Default for UpdateMix {
    fn default() -> Self {
        Self { insert_delete: 4.0, swap: 2.0, wiggle: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainParams {
    pub slices: u32,
    pub k_max: u32,
    pub mix: UpdateMix,
    pub k_proposal: KProposal,
    /// Optional hard cap on the number of loops (the target is then
    /// truncated to configurations with at most this many loops).
    pub max_loops: Option<usize>,
    /// Recompute cached energy/K/L from scratch every this many sweeps (0 = never).
    pub check_every: u64,
    /// Moves per sweep. 0 picks `max(10, n)` once at construction, with `n`
    /// the expected loop count of the free gas in the home cube. The count
    /// must not depend on the current state, or the chain observed at sweep
    /// ends is no longer stationary for the target.
    pub moves_per_sweep: usize,
    pub energy: EnergyOptions,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            slices: 32,
            k_max: 20,
            mix: UpdateMix::default(),
            k_proposal: KProposal::Uniform,
            max_loops: None,
            check_every: 100,
            moves_per_sweep: 0,
            energy: EnergyOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveKind {
    Insert,
    Delete,
    Merge,
    Split,
    Wiggle,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MoveStats {
    pub proposed: [u64; 5],
    pub accepted: [u64; 5],
}

impl MoveStats {
    fn record(&mut self, kind: MoveKind, accepted: bool) {
        let i = kind as usize;
        self.proposed[i] += 1;
        self.accepted[i] += accepted as u64;
    }

    pub fn acceptance(&self, kind: MoveKind) -> f64 {
        let i = kind as usize;
        if self.proposed[i] == 0 {
            0.0
        } else {
            self.accepted[i] as f64 / self.proposed[i] as f64
        }
    }
}

/// Metropolis–Hastings chain on finite loop configurations.
#[derive(Clone, Debug)]
pub struct Chain<P: Propagator = FreeSpace> {
    model: ModelParams,
    prop: P,
    params: ChainParams,
    config: LoopConfig,
    rng: ChaCha8Rng,
    sweeps: u64,
    h: f64,
    k_cache: Vec<u64>,
    ln_l_cache: Vec<f64>,
    // per type, probabilities of k = 1..=k_max
    k_probs: Vec<Vec<f64>>,
    k_pick: Vec<WeightedIndex<f64>>,
    mix_pick: WeightedIndex<f64>,
    stats: MoveStats,
    max_drift: f64,
    moves_per_sweep: usize,
}

impl<P: Propagator> Chain<P> {
    pub fn new(model: ModelParams, prop: P, params: ChainParams, seed: u64) -> Result<Self, ChainError> {
        let v = model.validate();
        if !v.is_empty() {
            return Err(ChainError::BadModel(
                v.iter().map(|x| x.message.clone()).collect::<Vec<_>>().join("; "),
            ));
        }
        if model.dim() != prop.dim() {
            return Err(ChainError::BadParams("propagator and model dimensions differ".into()));
        }
        if params.slices == 0 || params.k_max == 0 {
            return Err(ChainError::BadParams("slices and k_max must be positive".into()));
        }
        let mix = params.mix;
        let mix_pick = WeightedIndex::new([mix.insert_delete, mix.swap, mix.wiggle])
            .map_err(|e| ChainError::BadParams(format!("update mix: {e}")))?;
        let k_probs: Vec<Vec<f64>> = model
            .z()
            .iter()
            .map(|&z| {
                let w: Vec<f64> = (1..=params.k_max)
                    .map(|k| match params.k_proposal {
                        KProposal::Uniform => 1.0,
                        KProposal::FreeIntensity => {
                            let kf = k as f64;
                            // log form keeps tiny fugacities from underflowing to zero
                            (kf * z.ln() - kf.ln() - 0.5 * model.dim() as f64 * (2.0 * PI * model.beta() * kf).ln())
                                .exp()
                                .max(f64::MIN_POSITIVE)
                        }
                    })
                    .collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let k_pick = k_probs.iter().map(|p| WeightedIndex::new(p).expect("positive weights")).collect();
        let q = model.q();
        let config = LoopConfig::new(*prop.home(), params.slices, q);
        let moves_per_sweep = if params.moves_per_sweep > 0 {
            params.moves_per_sweep
        } else {
            let c = prop.home().center();
            let dt = model.beta() / params.slices as f64;
            let n: f64 = model
                .z()
                .iter()
                .map(|&z| {
                    (1..=params.k_max)
                        .map(|k| {
                            let kf = k as f64;
                            (kf * z.ln() - kf.ln()).exp() * prop.kernel((k * params.slices) as usize, dt, &c, &c)
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
                * prop.anchor_measure();
            if n.is_finite() { (n.ceil() as usize).clamp(10, 1 << 20) } else { 10 }
        };
        Ok(Self {
            model,
            prop,
            params,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sweeps: 0,
            h: 0.0,
            k_cache: vec![0; q],
            ln_l_cache: vec![0.0; q],
            k_probs,
            k_pick,
            mix_pick,
            stats: MoveStats::default(),
            max_drift: 0.0,
            moves_per_sweep,
        })
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn propagator(&self) -> &P {
        &self.prop
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn stats(&self) -> &MoveStats {
        &self.stats
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Cached total energy of the configuration (including external terms).
    pub fn energy(&self) -> f64 {
        self.h
    }

    pub fn cached_k(&self) -> &[u64] {
        &self.k_cache
    }

    pub fn cached_ln_l(&self) -> &[f64] {
        &self.ln_l_cache
    }

    /// Largest relative energy drift seen by the periodic consistency check.
    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    fn dt(&self) -> f64 {
        self.model.beta() / self.params.slices as f64
    }

    /// Replaces the configuration (e.g. to install an external configuration
    /// or restart from a dump) and rebuilds the caches.
    pub fn set_config(&mut self, c: LoopConfig) -> Result<(), ChainError> {
        if c.slices != self.params.slices {
            return Err(LoopgasError::MixedDiscretization(self.params.slices, c.slices).into());
        }
        if c.q() != self.model.q() {
            return Err(ChainError::BadParams("configuration type count differs from model".into()));
        }
        self.config = c;
        self.rebuild_caches();
        Ok(())
    }

    fn full_energy(&self) -> f64 {
        let ext = (!self.config.external.is_empty()).then_some(&self.config.external);
        energy_h(&self.config, None, ext, &self.model, self.params.energy).expect("uniform discretization")
    }

    fn rebuild_caches(&mut self) {
        self.h = self.full_energy();
        self.k_cache = vec![0; self.model.q()];
        self.ln_l_cache = vec![0.0; self.model.q()];
        for l in &self.config.loops {
            self.k_cache[l.type_j] += l.k() as u64;
            self.ln_l_cache[l.type_j] += (l.k() as f64).ln();
        }
    }

    /// Recomputes energy, K and L from scratch, records the relative energy
    /// drift of the cache and resynchronizes. Returns the drift.
    pub fn check_caches(&mut self) -> f64 {
        let h = self.full_energy();
        let drift = if h == self.h {
            0.0
        } else {
            (h - self.h).abs() / h.abs().max(1.0)
        };
        let mut k = vec![0u64; self.model.q()];
        for l in &self.config.loops {
            k[l.type_j] += l.k() as u64;
        }
        assert_eq!(k, self.k_cache, "cached K out of sync");
        self.max_drift = self.max_drift.max(drift);
        self.rebuild_caches();
        drift
    }

    /// Energy of `paths` given every loop not listed in `skip`, plus external terms.
    fn local_energy(&self, paths: &[(usize, &BridgePath)], skip: &[usize]) -> f64 {
        if self.model.is_free() {
            return 0.0;
        }
        let dt = self.dt();
        let opts = self.params.energy;
        let legs: Vec<Leg> = paths.iter().flat_map(|(j, p)| legs_of(*j, p)).collect();
        let mut e = internal_energy(&legs, &self.model, dt, opts);
        if e.is_infinite() {
            return e;
        }
        let mut other: Vec<Leg> = Vec::new();
        for (i, l) in self.config.loops.iter().enumerate() {
            if skip.contains(&i) {
                continue;
            }
            other.clear();
            other.extend(legs_of(l.type_j, &l.path));
            e += cross_energy(&legs, &other, &self.model, dt, opts);
            if e.is_infinite() {
                return e;
            }
        }
        if !self.config.external.is_empty() {
            e += external_energy(&legs, &self.config.external, &self.model, dt);
        }
        e
    }

    fn accept(&mut self, ln_ratio: f64) -> bool {
        if ln_ratio.is_nan() || ln_ratio == f64::NEG_INFINITY {
            return false;
        }
        ln_ratio >= 0.0 || self.rng.random::<f64>() < ln_ratio.exp()
    }

    fn add_loop(&mut self, l: Loop, de: f64) {
        self.k_cache[l.type_j] += l.k() as u64;
        self.ln_l_cache[l.type_j] += (l.k() as f64).ln();
        self.h += de;
        self.config.loops.push(l);
    }

    fn remove_loop(&mut self, i: usize, de: f64) -> Loop {
        let l = self.config.loops.swap_remove(i);
        self.k_cache[l.type_j] -= l.k() as u64;
        self.ln_l_cache[l.type_j] -= (l.k() as f64).ln();
        self.h -= de;
        l
    }

    /// Log of the insertion ratio without the energy term, for a loop of
    /// type `j`, multiplicity `k`, anchor `x`, into a configuration of `n` loops.
    fn ln_insert_factor(&self, j: usize, k: u32, x: &Point, n: usize) -> f64 {
        let s = self.params.slices as usize;
        let mass = self.prop.kernel(k as usize * s, self.dt(), x, x);
        let kf = k as f64;
        kf * self.model.z()[j].ln() - kf.ln()
            + (self.model.q() as f64 * self.prop.anchor_measure() * mass).ln()
            - self.k_probs[j][k as usize - 1].ln()
            - ((n + 1) as f64).ln()
    }

    /// Birth or death of one loop, each chosen with probability one half.
    pub fn update_insert_delete(&mut self) -> bool {
        if self.rng.random::<bool>() {
            let ok = self.try_insert();
            self.stats.record(MoveKind::Insert, ok);
            ok
        } else {
            let ok = self.try_delete();
            self.stats.record(MoveKind::Delete, ok);
            ok
        }
    }

    fn try_insert(&mut self) -> bool {
        let n = self.config.loops.len();
        if self.params.max_loops.is_some_and(|m| n >= m) {
            return false;
        }
        let j = self.rng.random_range(0..self.model.q());
        let k = self.k_pick[j].sample(&mut self.rng) as u32 + 1;
        let x = self.prop.sample_anchor(&mut self.rng);
        let s = self.params.slices;
        let mut samples = vec![ORIGIN; (k * s + 1) as usize];
        samples[0] = x;
        *samples.last_mut().unwrap() = x;
        let dt = self.dt();
        self.prop.fill(&mut samples, dt, &mut self.rng);
        if !self.prop.admissible(&samples) {
            return false;
        }
        let path = BridgePath { k, slices: s, samples };
        let de = self.local_energy(&[(j, &path)], &[]);
        if de.is_infinite() {
            return false;
        }
        let ln = self.ln_insert_factor(j, k, &x, n) - de;
        if self.accept(ln) {
            self.add_loop(Loop { type_j: j, path }, de);
            true
        } else {
            false
        }
    }

    fn try_delete(&mut self) -> bool {
        let n = self.config.loops.len();
        if n == 0 {
            return false;
        }
        let i = self.rng.random_range(0..n);
        let l = &self.config.loops[i];
        let de = self.local_energy(&[(l.type_j, &l.path)], &[i]);
        let ln = -(self.ln_insert_factor(l.type_j, l.k(), l.anchor(), n - 1) - de);
        if self.accept(ln) {
            self.remove_loop(i, de);
            true
        } else {
            false
        }
    }

    /// Merge of two same-type loops into one, or split of one loop into two,
    /// each direction chosen with probability one half.
    pub fn update_swap(&mut self) -> bool {
        if self.rng.random::<bool>() {
            let ok = self.try_merge();
            self.stats.record(MoveKind::Merge, ok);
            ok
        } else {
            let ok = self.try_split();
            self.stats.record(MoveKind::Split, ok);
            ok
        }
    }

    fn fresh_leg(&mut self, from: Point, to: Point) -> Vec<Point> {
        let s = self.params.slices as usize;
        let mut leg = vec![ORIGIN; s + 1];
        leg[0] = from;
        leg[s] = to;
        let dt = self.dt();
        self.prop.fill(&mut leg, dt, &mut self.rng);
        leg
    }

    fn leg_kernel(&self, x: &Point, y: &Point) -> f64 {
        self.prop.kernel(self.params.slices as usize, self.dt(), x, y)
    }

    fn try_merge(&mut self) -> bool {
        let n = self.config.loops.len();
        if n < 2 {
            return false;
        }
        let i1 = self.rng.random_range(0..n);
        let j = self.config.loops[i1].type_j;
        let mates: Vec<usize> = (0..n).filter(|&i| i != i1 && self.config.loops[i].type_j == j).collect();
        if mates.is_empty() {
            return false;
        }
        let nj = mates.len() + 1;
        let i2 = mates[self.rng.random_range(0..mates.len())];
        let (k1, k2) = (self.config.loops[i1].k(), self.config.loops[i2].k());
        let k = k1 + k2;
        if k > self.params.k_max {
            return false;
        }
        let s = self.params.slices as usize;
        let (a1, a2) = (k1 as usize - 1, k2 as usize - 1);
        let w1 = self.config.loops[i1].path.samples.clone();
        let w2 = self.config.loops[i2].path.samples.clone();
        let (x1, x2) = (w1[0], w2[0]);
        let (e1, e2) = (w1[a1 * s], w2[a2 * s]);
        let leg_a = self.fresh_leg(e1, x2);
        let leg_b = self.fresh_leg(e2, x1);
        if !self.prop.admissible(&leg_a) || !self.prop.admissible(&leg_b) {
            return false;
        }
        let mut merged = Vec::with_capacity(k as usize * s + 1);
        merged.extend_from_slice(&w1[..=a1 * s]);
        merged.extend_from_slice(&leg_a[1..]);
        merged.extend_from_slice(&w2[1..=a2 * s]);
        merged.extend_from_slice(&leg_b[1..]);
        debug_assert_eq!(merged.len(), k as usize * s + 1);
        let path = BridgePath { k, slices: s as u32, samples: merged };
        let e_new = self.local_energy(&[(j, &path)], &[i1, i2]);
        if e_new.is_infinite() {
            return false;
        }
        let old1 = &self.config.loops[i1];
        let old2 = &self.config.loops[i2];
        let e_old = self.local_energy(&[(j, &old1.path), (j, &old2.path)], &[i1, i2]);
        let phi_b = self.leg_kernel(&e1, &x2) * self.leg_kernel(&e2, &x1);
        let phi_a = self.leg_kernel(&e1, &x1) * self.leg_kernel(&e2, &x2);
        let (k1f, k2f, kf) = (k1 as f64, k2 as f64, k as f64);
        let ln_pm = -((n as f64).ln() + ((nj - 1) as f64).ln());
        let ln_ps = -(((n - 1) as f64).ln() + (kf - 1.0).ln());
        let ln = (k1f * k2f / kf).ln() - (e_new - e_old) + phi_b.ln() - phi_a.ln() + ln_ps - ln_pm;
        if self.accept(ln) {
            let (hi, lo) = if i1 > i2 { (i1, i2) } else { (i2, i1) };
            self.remove_loop(hi, 0.0);
            self.remove_loop(lo, 0.0);
            self.add_loop(Loop { type_j: j, path }, e_new - e_old);
            true
        } else {
            false
        }
    }

    fn try_split(&mut self) -> bool {
        let n = self.config.loops.len();
        if n == 0 || self.params.max_loops.is_some_and(|m| n >= m) {
            return false;
        }
        let i = self.rng.random_range(0..n);
        let k = self.config.loops[i].k();
        if k < 2 {
            return false;
        }
        let j = self.config.loops[i].type_j;
        let nj = self.config.loops.iter().filter(|l| l.type_j == j).count();
        let k1 = self.rng.random_range(1..k);
        let k2 = k - k1;
        let s = self.params.slices as usize;
        let w = self.config.loops[i].path.samples.clone();
        let x1 = w[0];
        let x2 = w[k1 as usize * s];
        let e1 = w[(k1 as usize - 1) * s];
        let e2 = w[(k as usize - 1) * s];
        let leg_a = self.fresh_leg(e1, x1);
        let leg_b = self.fresh_leg(e2, x2);
        if !self.prop.admissible(&leg_a) || !self.prop.admissible(&leg_b) {
            return false;
        }
        let mut s1 = Vec::with_capacity(k1 as usize * s + 1);
        s1.extend_from_slice(&w[..=(k1 as usize - 1) * s]);
        s1.extend_from_slice(&leg_a[1..]);
        let mut s2 = Vec::with_capacity(k2 as usize * s + 1);
        s2.extend_from_slice(&w[k1 as usize * s..=(k as usize - 1) * s]);
        s2.extend_from_slice(&leg_b[1..]);
        let p1 = BridgePath { k: k1, slices: s as u32, samples: s1 };
        let p2 = BridgePath { k: k2, slices: s as u32, samples: s2 };
        let e_new = self.local_energy(&[(j, &p1), (j, &p2)], &[i]);
        if e_new.is_infinite() {
            return false;
        }
        let e_old = self.local_energy(&[(j, &self.config.loops[i].path)], &[i]);
        let phi_b = self.leg_kernel(&e1, &x2) * self.leg_kernel(&e2, &x1);
        let phi_a = self.leg_kernel(&e1, &x1) * self.leg_kernel(&e2, &x2);
        let (k1f, k2f, kf) = (k1 as f64, k2 as f64, k as f64);
        // reverse merge picks the first piece among n + 1 loops, then its mate among nj
        let ln_pm = -(((n + 1) as f64).ln() + (nj as f64).ln());
        let ln_ps = -((n as f64).ln() + (kf - 1.0).ln());
        let ln = -(k1f * k2f / kf).ln() - (e_new - e_old) + phi_a.ln() - phi_b.ln() + ln_pm - ln_ps;
        if self.accept(ln) {
            self.remove_loop(i, 0.0);
            self.add_loop(Loop { type_j: j, path: p1 }, e_new - e_old);
            self.add_loop(Loop { type_j: j, path: p2 }, 0.0);
            true
        } else {
            false
        }
    }

    /// Redraws `S` consecutive steps (cyclically) of one loop as a bridge
    /// between the fixed window ends.
    pub fn update_wiggle(&mut self) -> bool {
        let ok = self.try_wiggle();
        self.stats.record(MoveKind::Wiggle, ok);
        ok
    }

    fn try_wiggle(&mut self) -> bool {
        let n_loops = self.config.loops.len();
        if n_loops == 0 {
            return false;
        }
        let i = self.rng.random_range(0..n_loops);
        let s = self.params.slices as usize;
        let l = &self.config.loops[i];
        let j = l.type_j;
        let n = l.path.steps();
        let off = self.rng.random_range(0..n);
        let mut window: Vec<Point> = (0..=s).map(|t| l.path.samples[(off + t) % n]).collect();
        let dt = self.dt();
        self.prop.fill(&mut window, dt, &mut self.rng);
        let mut samples = self.config.loops[i].path.samples.clone();
        for t in 1..s {
            samples[(off + t) % n] = window[t];
        }
        samples[n] = samples[0];
        if !self.prop.admissible(&samples) {
            return false;
        }
        let path = BridgePath { k: self.config.loops[i].k(), slices: s as u32, samples };
        let e_new = self.local_energy(&[(j, &path)], &[i]);
        if e_new.is_infinite() {
            return false;
        }
        let e_old = self.local_energy(&[(j, &self.config.loops[i].path)], &[i]);
        if self.accept(e_old - e_new) {
            self.config.loops[i].path = path;
            self.h += e_new - e_old;
            true
        } else {
            false
        }
    }

    /// One move drawn from the update mix.
    pub fn step(&mut self) -> bool {
        match self.mix_pick.sample(&mut self.rng) {
            0 => self.update_insert_delete(),
            1 => self.update_swap(),
            _ => self.update_wiggle(),
        }
    }

    pub fn moves_per_sweep(&self) -> usize {
        self.moves_per_sweep
    }

    /// A fixed number of moves, see [`ChainParams::moves_per_sweep`].
    pub fn sweep(&mut self) {
        for _ in 0..self.moves_per_sweep {
            self.step();
        }
        self.sweeps += 1;
        if self.params.check_every > 0 && self.sweeps.is_multiple_of(self.params.check_every) {
            self.check_caches();
        }
    }

    /// Runs `n` sweeps, handing the configuration to `observe` after each.
    pub fn run<F: FnMut(&LoopConfig)>(&mut self, n: u64, mut observe: F) {
        for _ in 0..n {
            self.sweep();
            observe(&self.config);
        }
    }

    /// Versioned text checkpoint: RNG position, sweep count, configuration.
    pub fn checkpoint(&self) -> String {
        let mut s = String::new();
        writeln!(s, "loopgas-chain v1").unwrap();
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        writeln!(s, "rng {seed} {} {}", self.rng.get_stream(), self.rng.get_word_pos()).unwrap();
        writeln!(s, "sweeps {}", self.sweeps).unwrap();
        s.push_str(&self.config.dump());
        s
    }

    /// Restores a chain written by [`checkpoint`](Self::checkpoint); the
    /// continuation is bit-identical to the uninterrupted run.
    pub fn restore(model: ModelParams, prop: P, params: ChainParams, text: &str) -> Result<Self, ChainError> {
        let bad = |m: &str| ChainError::Checkpoint(m.to_string());
        let mut lines = text.splitn(4, '\n');
        if lines.next() != Some("loopgas-chain v1") {
            return Err(bad("missing or unsupported header"));
        }
        let rng_line = lines.next().ok_or_else(|| bad("missing rng line"))?;
        let f: Vec<&str> = rng_line.split_whitespace().collect();
        if f.len() != 4 || f[0] != "rng" || f[1].len() != 64 {
            return Err(bad("malformed rng line"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&f[1][2 * i..2 * i + 2], 16).map_err(|_| bad("bad seed hex"))?;
        }
        let stream: u64 = f[2].parse().map_err(|_| bad("bad stream"))?;
        let pos: u128 = f[3].parse().map_err(|_| bad("bad word position"))?;
        let sweeps: u64 = lines
            .next()
            .and_then(|l| l.strip_prefix("sweeps "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("malformed sweeps line"))?;
        let config = LoopConfig::parse_dump(lines.next().unwrap_or(""))?;
        let mut chain = Chain::new(model, prop, params, 0)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(pos);
        chain.rng = rng;
        chain.sweeps = sweeps;
        chain.set_config(config)?;
        Ok(chain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cube, PairPotential};

    fn free_chain(z: f64, seed: u64) -> Chain {
        let m = ModelParams::new(2, 1.0, vec![z]);
        let p = ChainParams { slices: 8, k_max: 6, ..Default::default() };
        Chain::new(m, FreeSpace::new(Cube::centered(2, 3.0).unwrap()), p, seed).unwrap()
    }

    #[test]
    fn free_wiggles_always_accepted() {
        let mut c = free_chain(0.5, 1);
        c.run(50, |_| {});
        assert!(!c.config().loops.is_empty());
        let mut acc = 0;
        for _ in 0..200 {
            // a wiggle can only fail by leaving the home cube
            if c.update_wiggle() {
                acc += 1;
            }
        }
        assert!(acc > 150, "{acc}");
    }

    #[test]
    fn vacuum_limit_stays_empty() {
        let mut c = free_chain(1e-6, 2);
        let mut occupied = 0;
        c.run(500, |cfg| occupied += cfg.loops.len());
        assert!(occupied as f64 / 500.0 / 36.0 <= 1e-4);
    }

    #[test]
    fn split_of_unit_loop_rejected() {
        let mut c = free_chain(0.5, 3);
        let x = ORIGIN;
        let l = Loop::new(0, BridgePath { k: 1, slices: 8, samples: vec![x; 9] }).unwrap();
        let mut cfg = c.config().clone();
        cfg.push(l).unwrap();
        c.set_config(cfg).unwrap();
        for _ in 0..20 {
            assert!(!c.try_split());
        }
    }

    #[test]
    fn interacting_cache_has_no_drift() {
        let m = ModelParams::new(2, 1.0, vec![0.5])
            .with_potential(0, 0, PairPotential::smooth_bump(1.0, 1.0).unwrap());
        let p = ChainParams { slices: 8, k_max: 4, check_every: 0, ..Default::default() };
        let mut c = Chain::new(m, FreeSpace::new(Cube::centered(2, 2.0).unwrap()), p, 4).unwrap();
        c.run(100, |_| {});
        for _ in 0..10_000 {
            c.update_wiggle();
        }
        let cached = c.energy();
        let drift = c.check_caches();
        assert!(drift <= 1e-8, "drift {drift} (cached {cached})");
    }

    #[test]
    fn checkpoint_restore_is_bit_identical() {
        let m = ModelParams::new(2, 1.0, vec![0.5])
            .with_potential(0, 0, PairPotential::square_well(0.5, 0.8).unwrap());
        let p = ChainParams { slices: 4, k_max: 4, ..Default::default() };
        let mut a = Chain::new(m.clone(), FreeSpace::new(Cube::centered(2, 2.0).unwrap()), p.clone(), 5).unwrap();
        a.run(30, |_| {});
        let text = a.checkpoint();
        let mut b = Chain::restore(m, FreeSpace::new(Cube::centered(2, 2.0).unwrap()), p, &text).unwrap();
        a.run(30, |_| {});
        b.run(30, |_| {});
        assert_eq!(a.config(), b.config());
        assert_eq!(a.checkpoint(), b.checkpoint());
    }

    #[test]
    fn sweep_length_does_not_follow_the_state() {
        let mut c = free_chain(0.5, 6);
        let m = c.moves_per_sweep();
        // 36 area units of a z = 0.5 gas hold about 3.3 loops, so the floor of 10 applies
        assert_eq!(m, 10);
        for _ in 0..20 {
            c.sweep();
            assert_eq!(c.moves_per_sweep(), m);
        }
        let p = ChainParams { moves_per_sweep: 3, ..Default::default() };
        let fixed = Chain::new(ModelParams::new(2, 1.0, vec![0.5]), FreeSpace::new(Cube::centered(2, 3.0).unwrap()), p, 1);
        assert_eq!(fixed.unwrap().moves_per_sweep(), 3);
    }

    mod props {
        use super::*;
        use crate::loopgas::alpha_indicator;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn moves_keep_configurations_valid(
                seed in 0u64..10_000,
                h in 0.0f64..2.0,
                w in (0.1f64..4.0, 0.0f64..4.0, 0.0f64..4.0),
                moves in 50usize..400,
            ) {
                let m = ModelParams::new(2, 1.0, vec![0.6])
                    .with_potential(0, 0, PairPotential::square_well(h, 0.7).unwrap());
                let mix = UpdateMix { insert_delete: w.0, swap: w.1, wiggle: w.2 };
                let p = ChainParams { slices: 4, k_max: 5, mix, check_every: 0, ..Default::default() };
                let home = Cube::centered(2, 2.0).unwrap();
                let mut c = Chain::new(m, FreeSpace::new(home), p, seed).unwrap();
                for _ in 0..moves {
                    c.step();
                }
                let cfg = c.config().clone();
                prop_assert!(alpha_indicator(&cfg, &home));
                for l in &cfg.loops {
                    prop_assert!(l.k() >= 1 && l.k() <= 5);
                    prop_assert_eq!(l.path.samples.len(), (l.k() * 4 + 1) as usize);
                    prop_assert_eq!(l.path.samples[0], *l.path.samples.last().unwrap());
                }
                let k: u64 = cfg.loops.iter().map(|l| l.k() as u64).sum();
                prop_assert_eq!(c.cached_k()[0], k);
                prop_assert!(c.energy().is_finite());
                let drift = c.check_caches();
                prop_assert!(drift <= 1e-9, "drift {}", drift);
            }
        }
    }
}
