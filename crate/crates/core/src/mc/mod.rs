//! Grand-canonical Metropolis sampling of the finite-volume loop gas and
//! the Monte Carlo estimators built on it.

mod chain;
mod estimators;
mod lattice;

pub use chain::{Chain, ChainError, ChainParams, KProposal, MoveKind, MoveStats, UpdateMix};
pub use estimators::{
    batch_means, collect_backgrounds, estimate_density, estimate_k_tail, estimate_kernel_f, estimate_q,
    shift_invariance_probe, DensityEstimate, EstimateStatus, KernelEstimate, KernelOptions, Mean, ShiftReport,
    TailEstimate, MIN_BATCHES,
};
pub use lattice::LatticeLine;

use rand::Rng;

use crate::bridge::{fill_bridge, heat_kernel};
use crate::model::{dist2, Cube, Point};

/// Spatial law of the paths: anchor measure, transition kernel, bridge
/// filling and confinement. The continuum sampler uses [`FreeSpace`]; a
/// finite lattice surrogate makes the state space enumerable for testing.
pub trait Propagator: Clone {
    fn dim(&self) -> usize;
    fn home(&self) -> &Cube;
    /// Total reference measure of anchor positions.
    fn anchor_measure(&self) -> f64;
    fn sample_anchor<R: Rng + ?Sized>(&self, rng: &mut R) -> Point;
    /// Transition density over `steps` grid steps of length `dt`.
    fn kernel(&self, steps: usize, dt: f64, x: &Point, y: &Point) -> f64;
    /// Fills `samples[1..n]` given the pinned ends `samples[0]`, `samples[n]`.
    fn fill<R: Rng + ?Sized>(&self, samples: &mut [Point], dt: f64, rng: &mut R);
    fn admissible(&self, samples: &[Point]) -> bool;
}

/// Brownian paths in `R^d` confined to a home cube on the sample grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeSpace {
    home: Cube,
}

impl FreeSpace {
    pub fn new(home: Cube) -> Self {
        Self { home }
    }
}

impl Propagator for FreeSpace {
    fn dim(&self) -> usize {
        self.home.dim()
    }

    fn home(&self) -> &Cube {
        &self.home
    }

    fn anchor_measure(&self) -> f64 {
        self.home.volume()
    }

    fn sample_anchor<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        self.home.sample_uniform(rng)
    }

    fn kernel(&self, steps: usize, dt: f64, x: &Point, y: &Point) -> f64 {
        heat_kernel(self.dim(), steps as f64 * dt, dist2(x, y))
    }

    fn fill<R: Rng + ?Sized>(&self, samples: &mut [Point], dt: f64, rng: &mut R) {
        fill_bridge(samples, self.dim(), dt, rng);
    }

    fn admissible(&self, samples: &[Point]) -> bool {
        samples.iter().all(|p| self.home.contains(p))
    }
}
