use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use super::Propagator;
use crate::model::{point, Cube, Point};

/// Continuous-time random walk on `M` equally spaced sites of a line with
/// generator `Δ/2` (nearest-neighbour graph Laplacian over `spacing²`).
///
/// Positions are `i * spacing`, so distances and energies reuse the
/// continuum code unchanged while the state space stays finite.
#[derive(Clone, Debug)]
pub struct LatticeLine {
    spacing: f64,
    home: Cube,
    // eigenpairs of the generator
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl LatticeLine {
    pub fn new(sites: usize, spacing: f64) -> Self {
        assert!(sites >= 2 && spacing > 0.0);
        let mut lap = DMatrix::<f64>::zeros(sites, sites);
        let w = 0.5 / (spacing * spacing);
        for i in 0..sites - 1 {
            lap[(i, i + 1)] += w;
            lap[(i + 1, i)] += w;
            lap[(i, i)] -= w;
            lap[(i + 1, i + 1)] -= w;
        }
        let eig = SymmetricEigen::new(lap);
        let half = 0.5 * spacing * (sites - 1) as f64 + 0.25 * spacing;
        let home = Cube::new(1, point(&[0.5 * spacing * (sites - 1) as f64]), half).expect("valid cube");
        Self { spacing, home, values: eig.eigenvalues.iter().copied().collect(), vectors: eig.eigenvectors }
    }

    pub fn sites(&self) -> usize {
        self.values.len()
    }

    pub fn site_of(&self, p: &Point) -> usize {
        (p[0] / self.spacing).round() as usize
    }

    pub fn position(&self, site: usize) -> Point {
        point(&[site as f64 * self.spacing])
    }

    /// Transition probability from site `a` to site `b` in time `t`.
    pub fn transition(&self, t: f64, a: usize, b: usize) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &l)| self.vectors[(a, i)] * self.vectors[(b, i)] * (t * l).exp())
            .sum::<f64>()
            .max(0.0)
    }

    fn bisect<R: Rng + ?Sized>(&self, s: &mut [Point], lo: usize, hi: usize, dt: f64, rng: &mut R) {
        if hi - lo < 2 {
            return;
        }
        let mid = (lo + hi) / 2;
        let (a, b) = (self.site_of(&s[lo]), self.site_of(&s[hi]));
        let t1 = (mid - lo) as f64 * dt;
        let t2 = (hi - mid) as f64 * dt;
        let w: Vec<f64> = (0..self.sites()).map(|c| self.transition(t1, a, c) * self.transition(t2, c, b)).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = self.sites() - 1;
        for (c, wc) in w.iter().enumerate() {
            if u < *wc {
                pick = c;
                break;
            }
            u -= wc;
        }
        s[mid] = self.position(pick);
        self.bisect(s, lo, mid, dt, rng);
        self.bisect(s, mid, hi, dt, rng);
    }
}

impl Propagator for LatticeLine {
    fn dim(&self) -> usize {
        1
    }

    fn home(&self) -> &Cube {
        &self.home
    }

    fn anchor_measure(&self) -> f64 {
        self.sites() as f64
    }

    fn sample_anchor<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        self.position(rng.random_range(0..self.sites()))
    }

    fn kernel(&self, steps: usize, dt: f64, x: &Point, y: &Point) -> f64 {
        self.transition(steps as f64 * dt, self.site_of(x), self.site_of(y))
    }

    fn fill<R: Rng + ?Sized>(&self, samples: &mut [Point], dt: f64, rng: &mut R) {
        let n = samples.len() - 1;
        self.bisect(samples, 0, n, dt, rng);
    }

    fn admissible(&self, _samples: &[Point]) -> bool {
        true
    }
}
