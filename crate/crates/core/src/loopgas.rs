//! Loop and open-path configurations, the counting and indicator
//! functionals, the equal-time pair energy and the loop-gas weight.

use std::fmt::Write as _;
use thiserror::Error;

use crate::bridge::BridgePath;
use crate::model::{Cube, ExternalCC, ModelParams, Point, MAX_DIM, ORIGIN};

#[derive(Debug, Error, PartialEq)]
pub enum LoopgasError {
    #[error("mixed discretizations: {0} and {1} slices per beta")]
    MixedDiscretization(u32, u32),
    #[error("path is not closed: start and end samples differ")]
    OpenLoop,
    #[error("type index {0} out of range for {1} types")]
    BadType(usize, usize),
    #[error("{0} is not a permutation")]
    BadPermutation(String),
    #[error("leg {leg} does not join its endpoints")]
    Unpinned { leg: usize },
    #[error("dump line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A typed closed bridge of time-length `k beta`, anchored at its first sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Loop {
    pub type_j: usize,
    pub path: BridgePath,
}

impl Loop {
    pub fn new(type_j: usize, path: BridgePath) -> Result<Self, LoopgasError> {
        if path.start() != path.end() {
            return Err(LoopgasError::OpenLoop);
        }
        Ok(Self { type_j, path })
    }

    pub fn k(&self) -> u32 {
        self.path.k
    }

    pub fn anchor(&self) -> &Point {
        self.path.start()
    }
}

/// Type-`j` open paths: leg `l` runs from `starts[l]` to `ends[perm[l]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenPathSystem {
    pub type_j: usize,
    pub starts: Vec<Point>,
    pub ends: Vec<Point>,
    pub perm: Vec<usize>,
    pub paths: Vec<BridgePath>,
}

impl OpenPathSystem {
    pub fn new(
        type_j: usize,
        starts: Vec<Point>,
        ends: Vec<Point>,
        perm: Vec<usize>,
        paths: Vec<BridgePath>,
    ) -> Result<Self, LoopgasError> {
        let n = starts.len();
        let mut seen = vec![false; n];
        if ends.len() != n || perm.len() != n || paths.len() != n {
            return Err(LoopgasError::BadPermutation(format!("{perm:?} (size mismatch)")));
        }
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(LoopgasError::BadPermutation(format!("{perm:?}")));
            }
            seen[p] = true;
        }
        for (l, path) in paths.iter().enumerate() {
            if *path.start() != starts[l] || *path.end() != ends[perm[l]] {
                return Err(LoopgasError::Unpinned { leg: l });
            }
        }
        Ok(Self { type_j, starts, ends, perm, paths })
    }
}

/// Anything that can hand out its typed paths.
pub trait PathSet {
    fn typed_paths(&self) -> Vec<(usize, &BridgePath)>;
}

impl PathSet for [Loop] {
    fn typed_paths(&self) -> Vec<(usize, &BridgePath)> {
        self.iter().map(|l| (l.type_j, &l.path)).collect()
    }
}

impl PathSet for Vec<Loop> {
    fn typed_paths(&self) -> Vec<(usize, &BridgePath)> {
        self.as_slice().typed_paths()
    }
}

impl PathSet for OpenPathSystem {
    fn typed_paths(&self) -> Vec<(usize, &BridgePath)> {
        self.paths.iter().map(|p| (self.type_j, p)).collect()
    }
}

impl PathSet for [OpenPathSystem] {
    fn typed_paths(&self) -> Vec<(usize, &BridgePath)> {
        self.iter().flat_map(|s| s.typed_paths()).collect()
    }
}

impl PathSet for Vec<OpenPathSystem> {
    fn typed_paths(&self) -> Vec<(usize, &BridgePath)> {
        self.as_slice().typed_paths()
    }
}

impl PathSet for LoopConfig {
    fn typed_paths(&self) -> Vec<(usize, &BridgePath)> {
        self.loops.typed_paths()
    }
}

/// Concatenation `a ∨ b`.
pub struct Concat<'a>(pub &'a dyn PathSet, pub &'a dyn PathSet);

impl PathSet for Concat<'_> {
    fn typed_paths(&self) -> Vec<(usize, &BridgePath)> {
        let mut v = self.0.typed_paths();
        v.extend(self.1.typed_paths());
        v
    }
}

/// Finite loop configuration in a home cube, with an optional static
/// external configuration. All loops share one discretization.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopConfig {
    pub home: Cube,
    pub slices: u32,
    pub loops: Vec<Loop>,
    pub external: ExternalCC,
}

impl LoopConfig {
    pub fn new(home: Cube, slices: u32, q: usize) -> Self {
        Self { home, slices, loops: Vec::new(), external: ExternalCC::empty(q) }
    }

    pub fn push(&mut self, l: Loop) -> Result<(), LoopgasError> {
        if l.path.slices != self.slices {
            return Err(LoopgasError::MixedDiscretization(self.slices, l.path.slices));
        }
        if l.type_j >= self.external.points.len() {
            return Err(LoopgasError::BadType(l.type_j, self.external.points.len()));
        }
        self.loops.push(l);
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.external.points.len()
    }

    pub fn loops_of(&self, j: usize) -> impl Iterator<Item = &Loop> {
        self.loops.iter().filter(move |l| l.type_j == j)
    }

    /// Loops whose anchors lie outside the home cube.
    pub fn stray_anchors(&self) -> usize {
        self.loops.iter().filter(|l| !self.home.contains(l.anchor())).count()
    }
}

/// Sum of time-multiplicities of the type-`j` paths.
pub fn functional_k(c: &dyn PathSet, j: usize) -> u64 {
    c.typed_paths().iter().filter(|(t, _)| *t == j).map(|(_, p)| p.k as u64).sum()
}

/// Product of time-multiplicities of the type-`j` loops; `None` on overflow.
pub fn functional_l(c: &dyn PathSet, j: usize) -> Option<u128> {
    c.typed_paths()
        .iter()
        .filter(|(t, _)| *t == j)
        .try_fold(1u128, |acc, (_, p)| acc.checked_mul(p.k as u128))
}

/// `ln L` without overflow.
pub fn ln_functional_l(c: &dyn PathSet, j: usize) -> f64 {
    c.typed_paths().iter().filter(|(t, _)| *t == j).map(|(_, p)| (p.k as f64).ln()).sum()
}

/// 1 iff no path sits in `box0` at an intermediate integer time `m beta`, `0 < m < k`.
pub fn chi_indicator(c: &dyn PathSet, box0: &Cube) -> bool {
    c.typed_paths().iter().all(|(_, p)| path_avoids_at_integer_times(p, box0))
}

pub fn path_avoids_at_integer_times(p: &BridgePath, box0: &Cube) -> bool {
    (1..p.k).all(|m| !box0.contains(p.at_beta(m)))
}

/// 1 iff every grid sample of every path lies in `cube`.
pub fn alpha_indicator(c: &dyn PathSet, cube: &Cube) -> bool {
    c.typed_paths().iter().all(|(_, p)| p.samples.iter().all(|x| cube.contains(x)))
}

/// Quadrature switches for [`energy_h`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyOptions {
    /// Also reject node pairs whose straight segments pass within the hard core.
    pub segment_hard_core: bool,
}

/// One `beta`-section of a path, with its bounding box.
#[derive(Clone, Copy, Debug)]
pub struct Leg<'a> {
    pub type_j: usize,
    pub pts: &'a [Point],
    lo: Point,
    hi: Point,
}

impl<'a> Leg<'a> {
    pub fn new(type_j: usize, pts: &'a [Point]) -> Self {
        let mut lo = [f64::INFINITY; MAX_DIM];
        let mut hi = [f64::NEG_INFINITY; MAX_DIM];
        for p in pts {
            for i in 0..MAX_DIM {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Self { type_j, pts, lo, hi }
    }

    fn gap2(&self, other: &Leg) -> f64 {
        let mut s = 0.0;
        for i in 0..MAX_DIM {
            let g = (self.lo[i] - other.hi[i]).max(other.lo[i] - self.hi[i]).max(0.0);
            s += g * g;
        }
        s
    }

    fn gap2_point(&self, x: &Point) -> f64 {
        let mut s = 0.0;
        for i in 0..MAX_DIM {
            let g = (self.lo[i] - x[i]).max(x[i] - self.hi[i]).max(0.0);
            s += g * g;
        }
        s
    }
}

/// Splits a path into its `k` legs of `S + 1` samples each (end nodes shared).
pub fn legs_of(type_j: usize, p: &BridgePath) -> impl Iterator<Item = Leg<'_>> {
    let s = p.slices as usize;
    (0..p.k as usize).map(move |m| Leg::new(type_j, &p.samples[m * s..=(m + 1) * s]))
}

pub fn legs_of_set(c: &dyn PathSet) -> Vec<Leg<'_>> {
    c.typed_paths().into_iter().flat_map(|(j, p)| legs_of(j, p)).collect()
}

fn segment_min_dist2(a0: &Point, a1: &Point, b0: &Point, b1: &Point) -> f64 {
    let mut r = ORIGIN;
    let mut dr = ORIGIN;
    for i in 0..MAX_DIM {
        r[i] = a0[i] - b0[i];
        dr[i] = (a1[i] - b1[i]) - r[i];
    }
    let rr: f64 = r.iter().zip(&dr).map(|(x, y)| x * y).sum();
    let dd: f64 = dr.iter().map(|x| x * x).sum();
    let s = if dd > 0.0 { (-rr / dd).clamp(0.0, 1.0) } else { 0.0 };
    (0..MAX_DIM).map(|i| (r[i] + s * dr[i]).powi(2)).sum()
}

/// Trapezoid approximation of `∫_0^beta V(|a(t) - b(t)|) dt` on the shared grid.
pub fn leg_pair_energy(a: &Leg, b: &Leg, m: &ModelParams, dt: f64, opts: EnergyOptions) -> f64 {
    let pot = m.potential(a.type_j, b.type_j);
    if pot.is_zero() {
        return 0.0;
    }
    let r = pot.range();
    if a.gap2(b) >= r * r {
        return 0.0;
    }
    let n = a.pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let v = pot.value(crate::model::dist(&a.pts[i], &b.pts[i]));
        if v.is_infinite() {
            return f64::INFINITY;
        }
        s += if i == 0 || i == n - 1 { 0.5 * v } else { v };
    }
    let d = pot.hard_core_diameter();
    if opts.segment_hard_core && d > 0.0 {
        for i in 0..n - 1 {
            if segment_min_dist2(&a.pts[i], &a.pts[i + 1], &b.pts[i], &b.pts[i + 1]) < d * d {
                return f64::INFINITY;
            }
        }
    }
    s * dt
}

/// Same quadrature against a static point of type `type_x`.
pub fn leg_point_energy(a: &Leg, type_x: usize, x: &Point, m: &ModelParams, dt: f64) -> f64 {
    let pot = m.potential(a.type_j, type_x);
    if pot.is_zero() {
        return 0.0;
    }
    let r = pot.range();
    if a.gap2_point(x) >= r * r {
        return 0.0;
    }
    let n = a.pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let v = pot.value(crate::model::dist(&a.pts[i], x));
        if v.is_infinite() {
            return f64::INFINITY;
        }
        s += if i == 0 || i == n - 1 { 0.5 * v } else { v };
    }
    s * dt
}

/// Energy of all unordered leg pairs within `legs`.
pub fn internal_energy(legs: &[Leg], m: &ModelParams, dt: f64, opts: EnergyOptions) -> f64 {
    let mut e = 0.0;
    for i in 0..legs.len() {
        for j in i + 1..legs.len() {
            e += leg_pair_energy(&legs[i], &legs[j], m, dt, opts);
            if e.is_infinite() {
                return e;
            }
        }
    }
    e
}

/// Energy of all leg pairs with one leg in each set.
pub fn cross_energy(a: &[Leg], b: &[Leg], m: &ModelParams, dt: f64, opts: EnergyOptions) -> f64 {
    let mut e = 0.0;
    for la in a {
        for lb in b {
            e += leg_pair_energy(la, lb, m, dt, opts);
            if e.is_infinite() {
                return e;
            }
        }
    }
    e
}

pub fn external_energy(a: &[Leg], ext: &ExternalCC, m: &ModelParams, dt: f64) -> f64 {
    let mut e = 0.0;
    for la in a {
        for (j, pts) in ext.points.iter().enumerate() {
            for x in pts {
                e += leg_point_energy(la, j, x, m, dt);
                if e.is_infinite() {
                    return e;
                }
            }
        }
    }
    e
}

fn common_slices(sets: &[&dyn PathSet]) -> Result<Option<u32>, LoopgasError> {
    let mut s: Option<u32> = None;
    for set in sets {
        for (_, p) in set.typed_paths() {
            match s {
                None => s = Some(p.slices),
                Some(v) if v != p.slices => return Err(LoopgasError::MixedDiscretization(v, p.slices)),
                _ => {}
            }
        }
    }
    Ok(s)
}

/// `h(a) + cross(a, b) + cross(a, ext)`; the conditioning set `b` has no
/// internal energy.
pub fn energy_h(
    a: &dyn PathSet,
    b: Option<&dyn PathSet>,
    ext: Option<&ExternalCC>,
    m: &ModelParams,
    opts: EnergyOptions,
) -> Result<f64, LoopgasError> {
    let mut sets: Vec<&dyn PathSet> = vec![a];
    sets.extend(b);
    let Some(s) = common_slices(&sets)? else {
        return Ok(0.0);
    };
    if m.is_free() {
        return Ok(0.0);
    }
    let dt = m.beta() / s as f64;
    let la = legs_of_set(a);
    let mut e = internal_energy(&la, m, dt, opts);
    if let Some(b) = b {
        e += cross_energy(&la, &legs_of_set(b), m, dt, opts);
    }
    if let Some(x) = ext {
        e += external_energy(&la, x, m, dt);
    }
    Ok(e)
}

/// Log of the unnormalized loop-gas density: `Σ_j (K_j ln z_j - ln L_j) - h(c | ext)`,
/// or `-inf` if the configuration leaves its home cube, enters `box0` at an
/// intermediate integer time, or violates a hard core.
pub fn log_weight(c: &LoopConfig, box0: Option<&Cube>, m: &ModelParams) -> f64 {
    log_weight_with(c, box0, m, EnergyOptions::default())
}

pub fn log_weight_with(c: &LoopConfig, box0: Option<&Cube>, m: &ModelParams, opts: EnergyOptions) -> f64 {
    if !alpha_indicator(c, &c.home) || box0.is_some_and(|b| !chi_indicator(c, b)) {
        return f64::NEG_INFINITY;
    }
    let mut w = 0.0;
    for l in &c.loops {
        w += l.k() as f64 * m.z()[l.type_j].ln() - (l.k() as f64).ln();
    }
    let ext = (!c.external.is_empty()).then_some(&c.external);
    // a LoopConfig only ever holds one discretization
    let h = energy_h(c, None, ext, m, opts).expect("uniform discretization");
    if h.is_infinite() {
        f64::NEG_INFINITY
    } else {
        w - h
    }
}

const DUMP_HEADER: &str = "loopgas-config v1";

fn fmt_point(out: &mut String, p: &Point, dim: usize) {
    for x in &p[..dim] {
        write!(out, " {x:e}").unwrap();
    }
}

impl LoopConfig {
    /// Versioned text dump; floats use shortest round-trip formatting so
    /// [`LoopConfig::parse_dump`] restores the configuration bit for bit.
    pub fn dump(&self) -> String {
        let dim = self.home.dim();
        let mut s = String::new();
        writeln!(s, "{DUMP_HEADER}").unwrap();
        writeln!(s, "dim {dim}").unwrap();
        writeln!(s, "slices {}", self.slices).unwrap();
        write!(s, "home {:e}", self.home.half_side()).unwrap();
        fmt_point(&mut s, &self.home.center(), dim);
        s.push('\n');
        writeln!(s, "types {}", self.q()).unwrap();
        for (j, pts) in self.external.points.iter().enumerate() {
            for p in pts {
                write!(s, "ext {j}").unwrap();
                fmt_point(&mut s, p, dim);
                s.push('\n');
            }
        }
        for l in &self.loops {
            write!(s, "loop {} {} {}", l.type_j, l.k(), l.path.slices).unwrap();
            for p in &l.path.samples {
                fmt_point(&mut s, p, dim);
            }
            s.push('\n');
        }
        s
    }

    pub fn parse_dump(text: &str) -> Result<Self, LoopgasError> {
        let err = |line: usize, msg: &str| LoopgasError::Parse { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, h)) if h == DUMP_HEADER => {}
            _ => return Err(err(1, "missing or unsupported version header")),
        }
        let mut dim = None;
        let mut slices = None;
        let mut home = None;
        let mut q = None;
        let mut ext: Vec<(usize, Point)> = Vec::new();
        let mut loops = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let key = tok.next().unwrap();
            let rest: Vec<&str> = tok.collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(n, &format!("bad number {s:?}")));
            let int = |s: &str| s.parse::<usize>().map_err(|_| err(n, &format!("bad integer {s:?}")));
            let pt = |xs: &[&str]| -> Result<Point, LoopgasError> {
                let mut p = ORIGIN;
                for (i, x) in xs.iter().enumerate() {
                    p[i] = num(x)?;
                }
                Ok(p)
            };
            match key {
                "dim" => dim = Some(int(rest.first().ok_or_else(|| err(n, "missing dim"))?)?),
                "slices" => slices = Some(int(rest.first().ok_or_else(|| err(n, "missing slices"))?)? as u32),
                "types" => q = Some(int(rest.first().ok_or_else(|| err(n, "missing types"))?)?),
                "home" => {
                    let d = dim.ok_or_else(|| err(n, "home before dim"))?;
                    if rest.len() != d + 1 {
                        return Err(err(n, "home needs half side and center"));
                    }
                    let c = Cube::new(d, pt(&rest[1..])?, num(rest[0])?)
                        .map_err(|e| err(n, &e.to_string()))?;
                    home = Some(c);
                }
                "ext" => {
                    let d = dim.ok_or_else(|| err(n, "ext before dim"))?;
                    if rest.len() != d + 1 {
                        return Err(err(n, "ext needs a type and a point"));
                    }
                    ext.push((int(rest[0])?, pt(&rest[1..])?));
                }
                "loop" => {
                    let d = dim.ok_or_else(|| err(n, "loop before dim"))?;
                    if rest.len() < 3 {
                        return Err(err(n, "loop needs type, k, S"));
                    }
                    let (j, k, s) = (int(rest[0])?, int(rest[1])? as u32, int(rest[2])? as u32);
                    let coords = &rest[3..];
                    let npts = (k * s + 1) as usize;
                    if coords.len() != npts * d {
                        return Err(err(n, "sample count does not match k*S+1"));
                    }
                    let samples = coords.chunks(d).map(pt).collect::<Result<Vec<_>, _>>()?;
                    let l = Loop::new(j, BridgePath { k, slices: s, samples }).map_err(|e| err(n, &e.to_string()))?;
                    loops.push((n, l));
                }
                other => return Err(err(n, &format!("unknown record {other:?}"))),
            }
        }
        let home = home.ok_or_else(|| err(0, "missing home record"))?;
        let q = q.ok_or_else(|| err(0, "missing types record"))?;
        let mut c = LoopConfig::new(home, slices.ok_or_else(|| err(0, "missing slices record"))?, q);
        for (j, p) in ext {
            c.external.points.get_mut(j).ok_or(LoopgasError::BadType(j, q))?.push(p);
        }
        for (n, l) in loops {
            c.push(l).map_err(|e| err(n, &e.to_string()))?;
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::sample_bridge;
    use crate::model::{point, PairPotential};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn const_loop(j: usize, k: u32, s: u32, x: Point) -> Loop {
        Loop::new(j, BridgePath { k, slices: s, samples: vec![x; (k * s + 1) as usize] }).unwrap()
    }

    fn home() -> Cube {
        Cube::centered(2, 5.0).unwrap()
    }

    #[test]
    fn counting_functionals() {
        let loops = vec![const_loop(0, 2, 4, ORIGIN), const_loop(0, 3, 4, ORIGIN), const_loop(1, 5, 4, ORIGIN)];
        assert_eq!(functional_k(&loops, 0), 5);
        assert_eq!(functional_l(&loops, 0), Some(6));
        assert_eq!(functional_l(&loops, 1), Some(5));
        let empty: Vec<Loop> = vec![];
        assert_eq!(functional_k(&empty, 0), 0);
        assert_eq!(functional_l(&empty, 0), Some(1));
        let p = BridgePath { k: 4, slices: 1, samples: vec![ORIGIN; 5] };
        let sys = OpenPathSystem::new(0, vec![ORIGIN], vec![ORIGIN], vec![0], vec![p]).unwrap();
        assert_eq!(functional_k(&sys, 0), 4);
    }

    #[test]
    fn chi_examples() {
        let box0 = Cube::centered(2, 0.5).unwrap();
        let k1 = vec![const_loop(0, 1, 2, ORIGIN)];
        assert!(chi_indicator(&k1, &box0));
        let mut samples = vec![point(&[3.0, 0.0]); 5];
        samples[2] = ORIGIN;
        let k2 = vec![Loop::new(0, BridgePath { k: 2, slices: 2, samples }).unwrap()];
        assert!(!chi_indicator(&k2, &box0));
        let mut s3 = vec![point(&[3.0, 0.0]); 4];
        s3[0] = ORIGIN;
        s3[3] = point(&[0.1, 0.0]);
        let p = BridgePath { k: 3, slices: 1, samples: s3 };
        let sys = OpenPathSystem::new(0, vec![ORIGIN], vec![point(&[0.1, 0.0])], vec![0], vec![p]).unwrap();
        assert!(chi_indicator(&sys, &box0));
    }

    #[test]
    fn alpha_examples() {
        let c = Cube::centered(2, 1.0).unwrap();
        assert!(alpha_indicator(&vec![const_loop(0, 1, 4, ORIGIN)], &c));
        let mut s = vec![ORIGIN; 5];
        s[2] = point(&[1.5, 0.0]);
        let l = vec![Loop::new(0, BridgePath { k: 1, slices: 4, samples: s }).unwrap()];
        assert!(!alpha_indicator(&l, &c));
        assert!(alpha_indicator(&Vec::<Loop>::new(), &c));
    }

    #[test]
    fn energy_examples() {
        let free = ModelParams::new(2, 1.0, vec![0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let loops: Vec<Loop> = (0..3)
            .map(|_| Loop::new(0, sample_bridge(&ORIGIN, &ORIGIN, 2, 8, 2, 1.0, &mut rng)).unwrap())
            .collect();
        assert_eq!(energy_h(&loops, None, None, &free, EnergyOptions::default()).unwrap(), 0.0);

        let sw = free.clone().with_potential(0, 0, PairPotential::square_well(1.0, 1.0).unwrap());
        let two = vec![const_loop(0, 1, 8, ORIGIN), const_loop(0, 1, 8, point(&[0.5, 0.0]))];
        let h = energy_h(&two, None, None, &sw, EnergyOptions::default()).unwrap();
        assert!((h - 1.0).abs() < 1e-12);

        let hc = free.with_potential(0, 0, PairPotential::hard_core(0.6).unwrap());
        let h = energy_h(&two, None, None, &hc, EnergyOptions::default()).unwrap();
        assert!(h.is_infinite());
    }

    #[test]
    fn self_interaction_across_own_legs() {
        let sw = ModelParams::new(2, 1.0, vec![0.5]).with_potential(0, 0, PairPotential::square_well(1.0, 1.0).unwrap());
        // k = 3 stationary loop: three leg pairs, each contributing beta
        let l = vec![const_loop(0, 3, 4, ORIGIN)];
        let h = energy_h(&l, None, None, &sw, EnergyOptions::default()).unwrap();
        assert!((h - 3.0).abs() < 1e-12);
    }

    #[test]
    fn segment_mode_catches_crossing() {
        let hc = ModelParams::new(1, 1.0, vec![0.5]).with_potential(0, 0, PairPotential::hard_core(0.1).unwrap());
        let a = BridgePath { k: 1, slices: 1, samples: vec![point(&[-1.0]), point(&[1.0])] };
        let b = BridgePath { k: 1, slices: 1, samples: vec![point(&[1.0]), point(&[-1.0])] };
        let set = [(a, 0usize), (b, 0usize)];
        let legs: Vec<Leg> = set.iter().map(|(p, j)| Leg::new(*j, &p.samples)).collect();
        let plain = internal_energy(&legs, &hc, 1.0, EnergyOptions::default());
        assert_eq!(plain, 0.0);
        let strict = internal_energy(&legs, &hc, 1.0, EnergyOptions { segment_hard_core: true });
        assert!(strict.is_infinite());
    }

    #[test]
    fn mixed_discretization_rejected() {
        let m = ModelParams::new(2, 1.0, vec![0.5]);
        let a = vec![const_loop(0, 1, 4, ORIGIN)];
        let b = vec![const_loop(0, 1, 8, ORIGIN)];
        assert_eq!(
            energy_h(&a, Some(&b), None, &m, EnergyOptions::default()),
            Err(LoopgasError::MixedDiscretization(4, 8))
        );
    }

    #[test]
    fn log_weight_examples() {
        let m = ModelParams::new(2, 1.0, vec![0.5]);
        let mut c = LoopConfig::new(home(), 4, 1);
        assert_eq!(log_weight(&c, None, &m), 0.0);
        c.push(const_loop(0, 2, 4, ORIGIN)).unwrap();
        assert!((log_weight(&c, None, &m) - (2.0 * 0.5f64.ln() - 2f64.ln())).abs() < 1e-12);
        let hc = m.with_potential(0, 0, PairPotential::hard_core(0.5).unwrap());
        c.push(const_loop(0, 1, 4, point(&[0.1, 0.0]))).unwrap();
        assert_eq!(log_weight(&c, None, &hc), f64::NEG_INFINITY);
    }

    #[test]
    fn dump_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut c = LoopConfig::new(home(), 4, 2);
        c.external.points[1].push(point(&[5.5, 0.1234567890123]));
        for j in 0..2 {
            for k in 1..3 {
                let x = home().sample_uniform(&mut rng);
                c.push(Loop::new(j, sample_bridge(&x, &x, k, 4, 2, 1.0, &mut rng)).unwrap()).unwrap();
            }
        }
        let text = c.dump();
        let back = LoopConfig::parse_dump(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.dump(), text);
        assert!(LoopConfig::parse_dump("nonsense").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_config(seed: u64, n: usize, q: usize, slices: u32) -> LoopConfig {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = Cube::centered(2, 2.0).unwrap();
            let mut c = LoopConfig::new(h, slices, q);
            for i in 0..n {
                let x = h.sample_uniform(&mut rng);
                let k = 1 + (i as u32 % 3);
                c.push(Loop::new(i % q, sample_bridge(&x, &x, k, slices, 2, 1.0, &mut rng)).unwrap()).unwrap();
            }
            c
        }

        fn interacting(h: f64, r: f64) -> ModelParams {
            ModelParams::new(2, 1.0, vec![0.4, 0.7])
                .with_potential(0, 0, PairPotential::smooth_bump(h, r).unwrap())
                .with_potential(0, 1, PairPotential::square_well(h, r).unwrap())
                .with_potential(1, 1, PairPotential::smooth_bump(2.0 * h, r).unwrap())
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn weight_bounded_by_fugacity_power(seed in 0u64..1000, n in 0usize..6, h in 0.0f64..3.0) {
                let m = interacting(h, 1.0);
                let c = random_config(seed, n, 2, 4);
                let bound: f64 = (0..2).map(|j| functional_k(&c, j) as f64 * m.z()[j].ln()).sum();
                prop_assert!(log_weight(&c, None, &m) <= bound + 1e-12);
                prop_assert!(bound <= 0.0);
            }

            #[test]
            fn cross_term_symmetric_and_additive(seed in 0u64..1000, n in 1usize..5, h in 0.0f64..3.0) {
                let m = interacting(h, 1.5);
                let a = random_config(seed, n, 2, 4);
                let b = random_config(seed + 7919, n, 2, 4);
                let o = EnergyOptions::default();
                let ha = energy_h(&a, None, None, &m, o).unwrap();
                let hb = energy_h(&b, None, None, &m, o).unwrap();
                let ab = energy_h(&a, Some(&b), None, &m, o).unwrap() - ha;
                let ba = energy_h(&b, Some(&a), None, &m, o).unwrap() - hb;
                prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab.abs()));
                let joint = energy_h(&Concat(&a, &b), None, None, &m, o).unwrap();
                prop_assert!((joint - (ha + hb + ab)).abs() <= 1e-9 * (1.0 + joint.abs()));
            }

            #[test]
            fn larger_potential_never_lowers_energy(seed in 0u64..1000, h in 0.0f64..2.0, dr in 0.0f64..1.0) {
                let c = random_config(seed, 4, 1, 4);
                let small = ModelParams::new(2, 1.0, vec![0.5])
                    .with_potential(0, 0, PairPotential::square_well(h, 1.0).unwrap());
                let big = ModelParams::new(2, 1.0, vec![0.5])
                    .with_potential(0, 0, PairPotential::square_well(h + 0.5, 1.0 + dr).unwrap());
                let o = EnergyOptions::default();
                prop_assert!(energy_h(&c, None, None, &big, o).unwrap() >= energy_h(&c, None, None, &small, o).unwrap());
            }

            #[test]
            fn alpha_and_outside_anchors_imply_chi(seed in 0u64..1000, n in 0usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let h = Cube::centered(2, 3.0).unwrap();
                let box0 = Cube::centered(2, 0.5).unwrap();
                let mut loops = Vec::new();
                while loops.len() < n {
                    let x = h.sample_uniform(&mut rng);
                    if box0.contains(&x) { continue; }
                    loops.push(Loop::new(0, sample_bridge(&x, &x, 1, 4, 2, 1.0, &mut rng)).unwrap());
                }
                if alpha_indicator(&loops, &h) {
                    prop_assert!(chi_indicator(&loops, &box0));
                }
            }
        }
    }
}
