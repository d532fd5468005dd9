#![allow(dead_code)]

use loopgas_core::bridge::BridgePath;
use loopgas_core::loopgas::{log_weight, Loop, LoopConfig};
use loopgas_core::mc::{Chain, ChainParams, KProposal, LatticeLine, Propagator};
use loopgas_core::{ModelParams, PairPotential};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::HashMap;

pub const SITES: usize = 3;
pub const SLICES: u32 = 2;
pub const K_MAX: u32 = 2;
pub const MAX_LOOPS: usize = 2;

/// Canonical key of a lattice configuration: sorted (k, site sequence) list.
pub type Key = Vec<(u32, Vec<usize>)>;

pub struct Surrogate {
    pub lattice: LatticeLine,
    pub model: ModelParams,
    pub params: ChainParams,
    pub states: Vec<LoopConfig>,
    pub keys: Vec<Key>,
    pub index: HashMap<Key, usize>,
    pub weights: Vec<f64>,
}

fn key_of(lat: &LatticeLine, c: &LoopConfig) -> Key {
    let mut k: Key = c
        .loops
        .iter()
        .map(|l| (l.k(), l.path.samples.iter().map(|p| lat.site_of(p)).collect()))
        .collect();
    k.sort();
    k
}

fn all_loops(lat: &LatticeLine) -> Vec<BridgePath> {
    let mut out = Vec::new();
    for k in 1..=K_MAX {
        let free = (k * SLICES) as usize;
        // site choices for samples[0..free], last sample repeats the anchor
        let total = SITES.pow(free as u32);
        for code in 0..total {
            let mut c = code;
            let mut samples = Vec::with_capacity(free + 1);
            for _ in 0..free {
                samples.push(lat.position(c % SITES));
                c /= SITES;
            }
            samples.push(samples[0]);
            out.push(BridgePath { k, slices: SLICES, samples });
        }
    }
    out
}

fn ln_path_measure(lat: &LatticeLine, p: &BridgePath, dt: f64) -> f64 {
    p.samples.windows(2).map(|w| lat.kernel(1, dt, &w[0], &w[1]).ln()).sum()
}

impl Surrogate {
    /// One-type lattice surrogate with a repulsive square well between
    /// sites at distance at most one spacing.
    pub fn new(k_proposal: KProposal) -> Self {
        let lattice = LatticeLine::new(SITES, 1.0);
        let model =
            ModelParams::new(1, 1.0, vec![0.6]).with_potential(0, 0, PairPotential::square_well(0.8, 1.5).unwrap());
        let params = ChainParams {
            slices: SLICES,
            k_max: K_MAX,
            k_proposal,
            max_loops: Some(MAX_LOOPS),
            check_every: 0,
            ..Default::default()
        };
        let dt = model.beta() / SLICES as f64;
        let home = *lattice.home();
        let loops = all_loops(&lattice);
        let mut states = vec![LoopConfig::new(home, SLICES, 1)];
        for a in 0..loops.len() {
            let mut c = LoopConfig::new(home, SLICES, 1);
            c.push(Loop::new(0, loops[a].clone()).unwrap()).unwrap();
            states.push(c.clone());
            for b in a..loops.len() {
                let mut c2 = c.clone();
                c2.push(Loop::new(0, loops[b].clone()).unwrap()).unwrap();
                states.push(c2);
            }
        }
        let weights: Vec<f64> = states
            .iter()
            .map(|c| {
                let paths: f64 = c.loops.iter().map(|l| ln_path_measure(&lattice, &l.path, dt)).sum();
                let twin = c.loops.len() == 2 && c.loops[0].path == c.loops[1].path;
                let lw = log_weight(c, None, &model) + paths - if twin { 2f64.ln() } else { 0.0 };
                lw.exp()
            })
            .collect();
        let keys: Vec<Key> = states.iter().map(|c| key_of(&lattice, c)).collect();
        let index = keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        Self { lattice, model, params, states, keys, index, weights }
    }

    pub fn chain(&self, seed: u64) -> Chain<LatticeLine> {
        Chain::new(self.model.clone(), self.lattice.clone(), self.params.clone(), seed).unwrap()
    }

    /// Draws `draws` states from the exact target, applies one `mv` to each,
    /// and returns the transition counts `(from, to)` with `from != to`.
    pub fn transitions(
        &self,
        draws: usize,
        seed: u64,
        mv: impl Fn(&mut Chain<LatticeLine>) -> bool,
    ) -> HashMap<(usize, usize), u64> {
        let pick = WeightedIndex::new(&self.weights).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chain = self.chain(seed ^ 0x9e37_79b9);
        let mut counts = HashMap::new();
        for _ in 0..draws {
            let a = pick.sample(&mut rng);
            chain.set_config(self.states[a].clone()).unwrap();
            if mv(&mut chain) {
                let b = self.index[&key_of(&self.lattice, chain.config())];
                if b != a {
                    *counts.entry((a, b)).or_insert(0) += 1;
                }
            }
        }
        counts
    }
}

/// Symmetry test of forward and backward counts over unordered pairs with at
/// least `min_total` observed transitions. Returns `(statistic, df, p-value)`.
pub fn pair_chi_square(counts: &HashMap<(usize, usize), u64>, min_total: u64) -> (f64, usize, f64) {
    let mut stat = 0.0;
    let mut df = 0;
    for (&(a, b), &nab) in counts {
        if a > b {
            continue;
        }
        let nba = counts.get(&(b, a)).copied().unwrap_or(0);
        let t = nab + nba;
        if t >= min_total {
            stat += (nab as f64 - nba as f64).powi(2) / t as f64;
            df += 1;
        }
    }
    for (&(a, b), &nab) in counts {
        if a > b && !counts.contains_key(&(b, a)) && nab >= min_total {
            stat += nab as f64;
            df += 1;
        }
    }
    let p = if df == 0 { 0.0 } else { 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat) };
    (stat, df, p)
}
