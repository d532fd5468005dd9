//! Exact bosonic lattice gas for desk-scale checks: Fock sectors, dense
//! Hamiltonians, Gibbs operators, density matrices and partial traces.

use nalgebra::{DMatrix, SymmetricEigen};
use std::collections::HashMap;
use thiserror::Error;

use crate::model::{dist, ExternalCC, ModelParams, Point};

/// Largest sector dimension handled by dense diagonalization.
pub const MAX_SECTOR_DIM: usize = 20_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("sector {counts:?} has dimension {dim}, above the dense limit {limit}")]
    SectorTooLarge { counts: Vec<usize>, dim: usize, limit: usize },
    #[error("invalid lattice model: {0}")]
    Invalid(String),
}

/// How the discrete Laplacian treats the edge of the site set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Walks leaving the site set are killed: every site carries the full
    /// coordination number `2d` on the diagonal.
    #[default]
    Dirichlet,
    /// Graph Laplacian of the site set itself (no killing).
    Graph,
}

#[derive(Clone, Debug)]
pub struct LatticeModel {
    sites: Vec<Point>,
    spacing: f64,
    neighbors: Vec<Vec<usize>>,
    n_max: Vec<usize>,
    boundary: Boundary,
    model: ModelParams,
}

impl LatticeModel {
    /// Sites are neighbours when their Euclidean distance equals `spacing`.
    pub fn new(
        sites: Vec<Point>,
        spacing: f64,
        model: ModelParams,
        n_max: Vec<usize>,
        boundary: Boundary,
    ) -> Result<Self, OracleError> {
        if !(spacing > 0.0) {
            return Err(OracleError::Invalid(format!("spacing must be positive, got {spacing}")));
        }
        if n_max.len() != model.q() {
            return Err(OracleError::Invalid(format!("n_max has {} entries for {} types", n_max.len(), model.q())));
        }
        if sites.len() > u8::MAX as usize {
            return Err(OracleError::Invalid("too many sites".into()));
        }
        let v = model.validate();
        if !v.is_empty() {
            return Err(OracleError::Invalid(v[0].message.clone()));
        }
        let neighbors = (0..sites.len())
            .map(|a| {
                (0..sites.len())
                    .filter(|&b| b != a && (dist(&sites[a], &sites[b]) - spacing).abs() < 1e-9 * spacing)
                    .collect()
            })
            .collect();
        Ok(Self { sites, spacing, neighbors, n_max, boundary, model })
    }

    /// `sites` equally spaced points `0, a, 2a, ...` on the first axis.
    pub fn line(
        sites: usize,
        spacing: f64,
        model: ModelParams,
        n_max: Vec<usize>,
        boundary: Boundary,
    ) -> Result<Self, OracleError> {
        let pts = (0..sites)
            .map(|i| {
                let mut p = [0.0; 3];
                p[0] = i as f64 * spacing;
                p
            })
            .collect();
        Self::new(pts, spacing, model, n_max, boundary)
    }

    pub fn sites(&self) -> &[Point] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn n_max(&self) -> &[usize] {
        &self.n_max
    }

    /// One-particle kinetic matrix `-Δ/2`.
    pub fn one_particle_hamiltonian(&self) -> DMatrix<f64> {
        let m = self.n_sites();
        let w = 0.5 / (self.spacing * self.spacing);
        let full = 2.0 * self.model.dim() as f64;
        DMatrix::from_fn(m, m, |a, b| {
            if a == b {
                w * match self.boundary {
                    Boundary::Dirichlet => full,
                    Boundary::Graph => self.neighbors[a].len() as f64,
                }
            } else if self.neighbors[a].contains(&b) {
                -w
            } else {
                0.0
            }
        })
    }

    /// Potential energy of an occupation pattern (pairs plus external
    /// sources); `+∞` when a hard core is violated.
    pub fn potential_energy(&self, occ: &[u8], ext: &ExternalCC) -> f64 {
        let m = self.n_sites();
        let q = self.model.q();
        let mut e = 0.0;
        for j in 0..q {
            for s in 0..m {
                let n1 = occ[j * m + s] as f64;
                if n1 == 0.0 {
                    continue;
                }
                if n1 >= 2.0 {
                    e += 0.5 * n1 * (n1 - 1.0) * self.v(j, j, 0.0);
                }
                for j2 in j..q {
                    let t0 = if j2 == j { s + 1 } else { 0 };
                    for t in t0..m {
                        let n2 = occ[j2 * m + t] as f64;
                        if n2 != 0.0 {
                            e += n1 * n2 * self.v(j, j2, dist(&self.sites[s], &self.sites[t]));
                        }
                    }
                }
                for (j2, pts) in ext.points.iter().enumerate() {
                    for x in pts {
                        e += n1 * self.v(j, j2, dist(&self.sites[s], x));
                    }
                }
                if e == f64::INFINITY {
                    return e;
                }
            }
        }
        e
    }

    fn v(&self, j: usize, k: usize, r: f64) -> f64 {
        let p = self.model.potential(j, k);
        if p.is_zero() {
            0.0
        } else {
            p.value(r)
        }
    }

    fn sector_bound(&self, n: &[usize]) -> usize {
        let m = self.n_sites();
        n.iter().fold(1usize, |acc, &k| acc.saturating_mul(binomial(m + k - 1, k)))
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let mut r: usize = 1;
    for i in 0..k.min(n - k.min(n)) {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// All ways to put `n` identical particles on `m` sites.
fn compositions(n: usize, m: usize) -> Vec<Vec<u8>> {
    if m == 0 {
        return if n == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in (0..=n).rev() {
        for mut rest in compositions(n - first, m - 1) {
            rest.insert(0, first as u8);
            out.push(rest);
        }
    }
    out
}

/// Symmetric occupation basis of one particle-number sector, hard-core
/// violating patterns removed.
#[derive(Clone, Debug)]
pub struct FockBasis {
    pub counts: Vec<usize>,
    pub states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    energies: Vec<f64>,
}

impl FockBasis {
    pub fn sector(lm: &LatticeModel, counts: &[usize], ext: &ExternalCC) -> Result<Self, OracleError> {
        if counts.len() != lm.model.q() {
            return Err(OracleError::Invalid(format!("{} counts for {} types", counts.len(), lm.model.q())));
        }
        let bound = lm.sector_bound(counts);
        if bound > MAX_SECTOR_DIM {
            return Err(OracleError::SectorTooLarge { counts: counts.to_vec(), dim: bound, limit: MAX_SECTOR_DIM });
        }
        let m = lm.n_sites();
        let mut partial: Vec<Vec<u8>> = vec![Vec::with_capacity(m * counts.len())];
        for &n in counts {
            let comps = compositions(n, m);
            partial = partial
                .into_iter()
                .flat_map(|p| {
                    comps.iter().map(move |c| {
                        let mut v = p.clone();
                        v.extend_from_slice(c);
                        v
                    })
                })
                .collect();
        }
        let mut states = Vec::new();
        let mut energies = Vec::new();
        for s in partial {
            let e = lm.potential_energy(&s, ext);
            if e.is_finite() {
                states.push(s);
                energies.push(e);
            }
        }
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self { counts: counts.to_vec(), states, index, energies })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn index_of(&self, occ: &[u8]) -> Option<usize> {
        self.index.get(occ).copied()
    }
}

/// Hamiltonian of one sector on its occupation basis.
pub fn build_hamiltonian(
    lm: &LatticeModel,
    counts: &[usize],
    ext: &ExternalCC,
) -> Result<(FockBasis, DMatrix<f64>), OracleError> {
    let basis = FockBasis::sector(lm, counts, ext)?;
    let h1 = lm.one_particle_hamiltonian();
    let m = lm.n_sites();
    let dim = basis.dim();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for (i, s) in basis.states.iter().enumerate() {
        h[(i, i)] = basis.energies[i];
        for j in 0..counts.len() {
            for a in 0..m {
                let na = s[j * m + a];
                if na == 0 {
                    continue;
                }
                h[(i, i)] += na as f64 * h1[(a, a)];
                for &b in &lm.neighbors[a] {
                    let mut t = s.clone();
                    t[j * m + a] -= 1;
                    t[j * m + b] += 1;
                    // hops into excluded patterns are dropped
                    if let Some(k) = basis.index_of(&t) {
                        h[(k, i)] += h1[(b, a)] * (na as f64 * t[j * m + b] as f64).sqrt();
                    }
                }
            }
        }
    }
    Ok((basis, h))
}

/// Gibbs operator `exp(-βH)` of one sector, its trace and lowest eigenvalue.
struct SectorGibbs {
    basis: FockBasis,
    gibbs: DMatrix<f64>,
    trace: f64,
    min_eigenvalue: f64,
}

fn sector_gibbs(lm: &LatticeModel, counts: &[usize], ext: &ExternalCC) -> Result<SectorGibbs, OracleError> {
    let (basis, h) = build_hamiltonian(lm, counts, ext)?;
    if basis.dim() == 0 {
        return Ok(SectorGibbs { basis, gibbs: DMatrix::zeros(0, 0), trace: 0.0, min_eigenvalue: f64::INFINITY });
    }
    let eig = SymmetricEigen::new(h);
    let beta = lm.model.beta();
    let w: Vec<f64> = eig.eigenvalues.iter().map(|&l| (-beta * l).exp()).collect();
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |r, c| v[(r, c)] * w[c]);
    let gibbs = &scaled * v.transpose();
    Ok(SectorGibbs {
        basis,
        gibbs,
        trace: w.iter().sum(),
        min_eigenvalue: eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

fn all_sectors(n_max: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &nm in n_max {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..=nm).map(move |n| {
                    let mut v = p.clone();
                    v.push(n);
                    v
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SectorResult {
    pub counts: Vec<usize>,
    pub dim: usize,
    /// Canonical partition function `tr exp(-βH_n)`.
    pub xi: f64,
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionFunctions {
    pub sectors: Vec<SectorResult>,
    /// `Σ_n Ξ(n) Π_j z_j^{n(j)}` over the retained sectors.
    pub grand: f64,
    /// Rough size of the dropped sectors: the largest weighted sector
    /// contribution times `Σ_j z_j^{n_max(j)+1}/(1-z_j)`.
    pub truncation_estimate: f64,
}

fn weight(z: &[f64], counts: &[usize]) -> f64 {
    z.iter().zip(counts).map(|(z, &n)| z.powi(n as i32)).product()
}

pub fn partition_functions(lm: &LatticeModel, ext: &ExternalCC) -> Result<PartitionFunctions, OracleError> {
    let z = lm.model.z();
    let mut sectors = Vec::new();
    let mut grand = 0.0;
    let mut largest: f64 = 0.0;
    for counts in all_sectors(&lm.n_max) {
        let g = sector_gibbs(lm, &counts, ext)?;
        let w = weight(z, &counts);
        grand += g.trace * w;
        largest = largest.max(g.trace);
        sectors.push(SectorResult { dim: g.basis.dim(), counts, xi: g.trace, min_eigenvalue: g.min_eigenvalue });
    }
    let tail: f64 = z.iter().zip(&lm.n_max).map(|(&z, &n)| z.powi(n as i32 + 1) / (1.0 - z)).sum();
    Ok(PartitionFunctions { sectors, grand, truncation_estimate: largest * tail })
}

/// Operator on the occupation basis of a set of sites. Rows and columns are
/// labelled by occupation patterns laid out type-major over `sites`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationMatrix {
    pub sites: Vec<usize>,
    pub q: usize,
    pub patterns: Vec<Vec<u8>>,
    pub matrix: DMatrix<f64>,
}

impl OccupationMatrix {
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn index_of(&self, pattern: &[u8]) -> Option<usize> {
        self.patterns.iter().position(|p| p == pattern)
    }

    /// Largest entry-wise difference, matching rows and columns by pattern.
    /// Patterns present in only one operand count against the other's zero.
    pub fn max_deviation(&self, other: &OccupationMatrix) -> f64 {
        let mut all: Vec<&Vec<u8>> = self.patterns.iter().chain(&other.patterns).collect();
        all.sort();
        all.dedup();
        let ia: Vec<Option<usize>> = all.iter().map(|p| self.index_of(p)).collect();
        let ib: Vec<Option<usize>> = all.iter().map(|p| other.index_of(p)).collect();
        let get = |m: &DMatrix<f64>, r: Option<usize>, c: Option<usize>| match (r, c) {
            (Some(r), Some(c)) => m[(r, c)],
            _ => 0.0,
        };
        let mut d: f64 = 0.0;
        for r in 0..all.len() {
            for c in 0..all.len() {
                d = d.max((get(&self.matrix, ia[r], ia[c]) - get(&other.matrix, ib[r], ib[c])).abs());
            }
        }
        d
    }
}

/// Grand-canonical density matrix `G/Ξ`, block diagonal over sectors.
pub fn density_matrix(lm: &LatticeModel, ext: &ExternalCC) -> Result<OccupationMatrix, OracleError> {
    let z = lm.model.z();
    let blocks: Vec<(SectorGibbs, f64)> = all_sectors(&lm.n_max)
        .into_iter()
        .map(|c| sector_gibbs(lm, &c, ext).map(|g| (g, weight(z, &c))))
        .collect::<Result<_, _>>()?;
    let grand: f64 = blocks.iter().map(|(g, w)| g.trace * w).sum();
    let dim: usize = blocks.iter().map(|(g, _)| g.basis.dim()).sum();
    let mut matrix = DMatrix::zeros(dim, dim);
    let mut patterns = Vec::with_capacity(dim);
    let mut off = 0;
    for (g, w) in &blocks {
        let n = g.basis.dim();
        matrix.view_mut((off, off), (n, n)).copy_from(&(&g.gibbs * (w / grand)));
        patterns.extend(g.basis.states.iter().cloned());
        off += n;
    }
    Ok(OccupationMatrix { sites: (0..lm.n_sites()).collect(), q: lm.model.q(), patterns, matrix })
}

/// Traces out every site of `r` not listed in `inner`. Reduced patterns are
/// sorted, so different reduction orders yield identically labelled results.
pub fn partial_trace(r: &OccupationMatrix, inner: &[usize]) -> Result<OccupationMatrix, OracleError> {
    let mut keep = inner.to_vec();
    keep.sort_unstable();
    keep.dedup();
    let pos: Vec<usize> = keep
        .iter()
        .map(|s| {
            r.sites
                .iter()
                .position(|t| t == s)
                .ok_or_else(|| OracleError::Invalid(format!("site {s} not in the operator's region")))
        })
        .collect::<Result<_, _>>()?;
    let m = r.sites.len();
    let outer: Vec<usize> = (0..m).filter(|i| !pos.contains(i)).collect();
    let split = |p: &[u8]| -> (Vec<u8>, Vec<u8>) {
        let mut a = Vec::with_capacity(r.q * pos.len());
        let mut b = Vec::with_capacity(r.q * outer.len());
        for j in 0..r.q {
            a.extend(pos.iter().map(|&i| p[j * m + i]));
            b.extend(outer.iter().map(|&i| p[j * m + i]));
        }
        (a, b)
    };
    let parts: Vec<(Vec<u8>, Vec<u8>)> = r.patterns.iter().map(|p| split(p)).collect();
    let mut reduced: Vec<Vec<u8>> = parts.iter().map(|(a, _)| a.clone()).collect();
    reduced.sort();
    reduced.dedup();
    let rindex: HashMap<&Vec<u8>, usize> = reduced.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let mut groups: HashMap<&Vec<u8>, Vec<(usize, usize)>> = HashMap::new();
    for (row, (a, b)) in parts.iter().enumerate() {
        groups.entry(b).or_default().push((row, rindex[a]));
    }
    let mut out = DMatrix::zeros(reduced.len(), reduced.len());
    for g in groups.values() {
        for &(ra, ia) in g {
            for &(rb, ib) in g {
                out[(ia, ib)] += r.matrix[(ra, rb)];
            }
        }
    }
    Ok(OccupationMatrix { sites: keep, q: r.q, patterns: reduced, matrix: out })
}

/// Largest entry-wise gap between reducing straight to `lambda1` and
/// reducing first to `lambda0 ⊇ lambda1`.
pub fn check_compatibility(
    lm: &LatticeModel,
    ext: &ExternalCC,
    lambda0: &[usize],
    lambda1: &[usize],
) -> Result<f64, OracleError> {
    if !lambda1.iter().all(|s| lambda0.contains(s)) {
        return Err(OracleError::Invalid("inner region is not contained in the middle region".into()));
    }
    let r = density_matrix(lm, ext)?;
    let direct = partial_trace(&r, lambda1)?;
    let nested = partial_trace(&partial_trace(&r, lambda0)?, lambda1)?;
    Ok(direct.max_deviation(&nested))
}
