//! Physics parameters: pair potentials, the multi-type model, cubes and
//! external classical configurations.

use rand::Rng;
use thiserror::Error;

/// Points are stored in a fixed three-slot array; coordinates beyond the
/// model dimension stay at zero so Euclidean distances are unaffected.
pub const MAX_DIM: usize = 3;
pub type Point = [f64; MAX_DIM];

pub const ORIGIN: Point = [0.0; MAX_DIM];

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("negative distance {0} passed to a pair potential")]
    NegativeDistance(f64),
    #[error("invalid pair potential: {0}")]
    InvalidPotential(String),
    #[error("invalid cube: {0}")]
    InvalidCube(String),
    #[error("model violates {} invariant(s): {}", .0.len(), join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.message.as_str()).collect::<Vec<_>>().join("; ")
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    dist2(a, b).sqrt()
}

/// Builds a point from a slice of at most [`MAX_DIM`] coordinates.
pub fn point(coords: &[f64]) -> Point {
    assert!(coords.len() <= MAX_DIM, "at most {MAX_DIM} coordinates");
    let mut p = ORIGIN;
    p[..coords.len()].copy_from_slice(coords);
    p
}

/// Natural cubic spline through tabulated radial samples.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    r: Vec<f64>,
    v: Vec<f64>,
    // second derivatives at the knots
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(r: Vec<f64>, v: Vec<f64>) -> Result<Self, ModelError> {
        if r.len() != v.len() || r.len() < 2 {
            return Err(ModelError::InvalidPotential(
                "tabulated profile needs at least two (r, V) pairs of equal length".into(),
            ));
        }
        if r.windows(2).any(|w| w[1] <= w[0]) || r[0] < 0.0 {
            return Err(ModelError::InvalidPotential(
                "tabulated radii must be non-negative and strictly increasing".into(),
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidPotential(
                "tabulated values must be finite".into(),
            ));
        }
        let n = r.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior knots, natural end conditions.
            let mut c_prime = vec![0.0; n];
            let mut d_prime = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = r[i] - r[i - 1];
                let h1 = r[i + 1] - r[i];
                let a = h0;
                let b = 2.0 * (h0 + h1);
                let c = h1;
                let d = 6.0 * ((v[i + 1] - v[i]) / h1 - (v[i] - v[i - 1]) / h0);
                let denom = b - a * c_prime[i - 1];
                c_prime[i] = c / denom;
                d_prime[i] = (d - a * d_prime[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = d_prime[i] - c_prime[i] * m[i + 1];
            }
        }
        Ok(Self { r, v, m })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.r, &self.v)
    }

    /// Clamped to the end values outside the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.r.len();
        if x <= self.r[0] {
            return self.v[0];
        }
        if x >= self.r[n - 1] {
            return self.v[n - 1];
        }
        let i = match self.r.partition_point(|&ri| ri <= x) {
            0 => 0,
            p => p - 1,
        };
        let h = self.r[i + 1] - self.r[i];
        let a = (self.r[i + 1] - x) / h;
        let b = (x - self.r[i]) / h;
        a * self.v[i]
            + b * self.v[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Radial shape of a pair potential on the finite region `[D, R)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    /// No finite part (free gas or pure hard core).
    Zero,
    /// Constant `height` for `r < R`.
    SquareWell { height: f64 },
    /// `height * (1 - (r/R)^2)^3`, a C² bump vanishing with two derivatives at `R`.
    SmoothBump { height: f64 },
    Tabulated(CubicSpline),
}

impl Profile {
    fn value(&self, r: f64, range: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::SquareWell { height } => *height,
            Profile::SmoothBump { height } => {
                let u = 1.0 - (r / range) * (r / range);
                height * u * u * u
            }
            Profile::Tabulated(s) => s.eval(r),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Zero => "none",
            Profile::SquareWell { .. } => "square_well",
            Profile::SmoothBump { .. } => "smooth_bump",
            Profile::Tabulated(_) => "tabulated",
        }
    }
}

/// Non-negative, finite-range pair potential with an optional hard core.
///
/// `V(r) = +inf` for `r < hard_core`, the profile on `[hard_core, range)`
/// and zero for `r >= range`. The bound constants `vbar = [sup|V|, sup|V'|,
/// sup|V''|]` over the finite region are computed at construction by dense
/// sampling and finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPotential {
    hard_core: f64,
    range: f64,
    profile: Profile,
    vbar: [f64; 3],
}

const VBAR_SAMPLES: usize = 4096;

impl PairPotential {
    pub fn new(hard_core: f64, range: f64, profile: Profile) -> Result<Self, ModelError> {
        if !(hard_core >= 0.0 && hard_core.is_finite()) {
            return Err(ModelError::InvalidPotential(format!(
                "hard-core diameter must be finite and >= 0, got {hard_core}"
            )));
        }
        if !(range >= hard_core && range.is_finite()) {
            return Err(ModelError::InvalidPotential(format!(
                "range {range} must be finite and >= hard-core diameter {hard_core}"
            )));
        }
        let mut p = Self { hard_core, range, profile, vbar: [0.0; 3] };
        p.vbar = p.compute_vbar();
        Ok(p)
    }

    pub fn free() -> Self {
        Self { hard_core: 0.0, range: 0.0, profile: Profile::Zero, vbar: [0.0; 3] }
    }

    pub fn hard_core(diameter: f64) -> Result<Self, ModelError> {
        Self::new(diameter, diameter, Profile::Zero)
    }

    pub fn square_well(height: f64, range: f64) -> Result<Self, ModelError> {
        Self::new(0.0, range, Profile::SquareWell { height })
    }

    pub fn smooth_bump(height: f64, range: f64) -> Result<Self, ModelError> {
        Self::new(0.0, range, Profile::SmoothBump { height })
    }

    pub fn tabulated(hard_core: f64, range: f64, r: Vec<f64>, v: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(hard_core, range, Profile::Tabulated(CubicSpline::new(r, v)?))
    }

    /// Same profile and range with a hard core of diameter `d` (must not exceed the range).
    pub fn with_hard_core(self, d: f64) -> Result<Self, ModelError> {
        Self::new(d, self.range.max(d), self.profile)
    }

    pub fn hard_core_diameter(&self) -> f64 {
        self.hard_core
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn vbar(&self) -> [f64; 3] {
        self.vbar
    }

    pub fn is_zero(&self) -> bool {
        self.range == 0.0 || (self.hard_core == 0.0 && self.profile == Profile::Zero)
    }

    /// Checked evaluation; rejects negative distances.
    pub fn eval(&self, r: f64) -> Result<f64, ModelError> {
        if r < 0.0 || r.is_nan() {
            return Err(ModelError::NegativeDistance(r));
        }
        Ok(self.value(r))
    }

    /// Unchecked evaluation for distances known to be non-negative.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        if r < self.hard_core {
            f64::INFINITY
        } else if r >= self.range {
            0.0
        } else {
            self.profile.value(r, self.range)
        }
    }

    fn compute_vbar(&self) -> [f64; 3] {
        let (lo, hi) = (self.hard_core, self.range);
        if hi <= lo {
            return [0.0; 3];
        }
        let h = (hi - lo) / VBAR_SAMPLES as f64;
        let f = |r: f64| self.profile.value(r, self.range);
        let mut out = [0.0f64; 3];
        for i in 0..VBAR_SAMPLES {
            let r = lo + (i as f64 + 0.5) * h;
            let v0 = f(r);
            out[0] = out[0].max(v0.abs());
            // difference stencils must stay inside the open region
            if r - h > lo && r + h < hi {
                let (vm, vp) = (f(r - h), f(r + h));
                out[1] = out[1].max(((vp - vm) / (2.0 * h)).abs());
                out[2] = out[2].max(((vp - 2.0 * v0 + vm) / (h * h)).abs());
            }
        }
        out
    }
}

/// What went wrong in [`ModelParams::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum ViolationKind {
    Dimension,
    TypeCount,
    Beta,
    Fugacity { j: usize },
    AsymmetricPotential { j: usize, k: usize },
    NegativePotential { j: usize, k: usize },
    NonzeroBeyondRange { j: usize, k: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

/// Global physics context: dimension, type count, inverse temperature,
/// fugacities and the `q x q` potential table.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dim: usize,
    beta: f64,
    z: Vec<f64>,
    // row-major q x q
    potentials: Vec<PairPotential>,
}

impl ModelParams {
    /// Free gas with the given fugacities; add interactions with [`with_potential`](Self::with_potential).
    pub fn new(dim: usize, beta: f64, z: Vec<f64>) -> Self {
        let q = z.len();
        Self { dim, beta, z, potentials: vec![PairPotential::free(); q * q] }
    }

    /// Sets `V_{j,k}` and `V_{k,j}`.
    pub fn with_potential(mut self, j: usize, k: usize, p: PairPotential) -> Self {
        self.set_potential(j, k, p);
        self
    }

    pub fn set_potential(&mut self, j: usize, k: usize, p: PairPotential) {
        let q = self.q();
        self.potentials[k * q + j] = p.clone();
        self.potentials[j * q + k] = p;
    }

    /// Sets a single table entry without mirroring it. Only useful for
    /// exercising [`validate`](Self::validate).
    pub fn set_potential_entry(&mut self, j: usize, k: usize, p: PairPotential) {
        let q = self.q();
        self.potentials[j * q + k] = p;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> usize {
        self.z.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn set_z(&mut self, z: Vec<f64>) {
        assert_eq!(z.len(), self.z.len(), "type count is fixed");
        self.z = z;
    }

    #[inline]
    pub fn potential(&self, j: usize, k: usize) -> &PairPotential {
        &self.potentials[j * self.q() + k]
    }

    pub fn is_free(&self) -> bool {
        self.potentials.iter().all(PairPotential::is_zero)
    }

    /// Largest interaction radius over all type pairs.
    pub fn max_range(&self) -> f64 {
        self.potentials.iter().map(|p| p.range()).fold(0.0, f64::max)
    }

    /// Largest `sup|V'|` over all type pairs.
    pub fn vbar1(&self) -> f64 {
        self.potentials.iter().map(|p| p.vbar()[1]).fold(0.0, f64::max)
    }

    /// Lists every violated invariant. An empty list means the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(1..=MAX_DIM).contains(&self.dim) {
            out.push(Violation {
                kind: ViolationKind::Dimension,
                message: format!("dimension {} not in {{1,2,3}}", self.dim),
            });
        }
        if self.z.is_empty() {
            out.push(Violation {
                kind: ViolationKind::TypeCount,
                message: "at least one particle type is required".into(),
            });
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            out.push(Violation {
                kind: ViolationKind::Beta,
                message: format!("inverse temperature {} must be finite and > 0", self.beta),
            });
        }
        for (j, &zj) in self.z.iter().enumerate() {
            if !(zj > 0.0 && zj < 1.0) {
                out.push(Violation {
                    kind: ViolationKind::Fugacity { j },
                    message: format!("fugacity not in (0,1): z[{j}] = {zj}"),
                });
            }
        }
        let q = self.q();
        for j in 0..q {
            for k in 0..q {
                let p = self.potential(j, k);
                if k > j && p != self.potential(k, j) {
                    out.push(Violation {
                        kind: ViolationKind::AsymmetricPotential { j, k },
                        message: format!("potential table asymmetric at ({j},{k})"),
                    });
                }
                if k < j {
                    continue;
                }
                let neg = match p.profile() {
                    Profile::Tabulated(s) => s.knots().1.iter().any(|&v| v < 0.0),
                    Profile::SquareWell { height } | Profile::SmoothBump { height } => *height < 0.0,
                    Profile::Zero => false,
                } || sample_radii(p).any(|r| p.value(r) < 0.0);
                if neg {
                    out.push(Violation {
                        kind: ViolationKind::NegativePotential { j, k },
                        message: format!("potential negative for pair ({j},{k})"),
                    });
                }
                if let Profile::Tabulated(s) = p.profile() {
                    let (r, v) = s.knots();
                    if r.iter().zip(v).any(|(&ri, &vi)| ri >= p.range() && vi != 0.0) {
                        out.push(Violation {
                            kind: ViolationKind::NonzeroBeyondRange { j, k },
                            message: format!(
                                "profile nonzero beyond range R = {} for pair ({j},{k})",
                                p.range()
                            ),
                        });
                    }
                }
            }
        }
        out
    }

    /// Returns the model if [`validate`](Self::validate) finds nothing.
    pub fn checked(self) -> Result<Self, ModelError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(ModelError::Invalid(v))
        }
    }
}

fn sample_radii(p: &PairPotential) -> impl Iterator<Item = f64> + '_ {
    let (lo, hi) = (p.hard_core_diameter(), p.range());
    let n = 512;
    (0..n).filter(move |_| hi > lo).map(move |i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
}

/// Axis-aligned cube `center ± half_side` in the first `dim` coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cube {
    dim: usize,
    center: Point,
    half_side: f64,
}

impl Cube {
    pub fn new(dim: usize, center: Point, half_side: f64) -> Result<Self, ModelError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(ModelError::InvalidCube(format!("dimension {dim} not in 1..=3")));
        }
        if !(half_side > 0.0 && half_side.is_finite()) {
            return Err(ModelError::InvalidCube(format!("half side {half_side} must be > 0")));
        }
        let mut c = center;
        c[dim..].iter_mut().for_each(|x| *x = 0.0);
        Ok(Self { dim, center: c, half_side })
    }

    pub fn centered(dim: usize, half_side: f64) -> Result<Self, ModelError> {
        Self::new(dim, ORIGIN, half_side)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn half_side(&self) -> f64 {
        self.half_side
    }

    pub fn volume(&self) -> f64 {
        (2.0 * self.half_side).powi(self.dim as i32)
    }

    /// Max-norm membership, boundary included.
    #[inline]
    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim).all(|i| (x[i] - self.center[i]).abs() <= self.half_side)
    }

    /// Euclidean distance from `x` to the cube (zero inside).
    pub fn dist_eu(&self, x: &Point) -> f64 {
        (0..self.dim)
            .map(|i| {
                let e = ((x[i] - self.center[i]).abs() - self.half_side).max(0.0);
                e * e
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Smallest max-norm gap between `inner`'s boundary and this cube's
    /// boundary; negative if `inner` sticks out.
    pub fn margin_of(&self, inner: &Cube) -> f64 {
        (0..self.dim)
            .map(|i| self.half_side - (inner.center[i] - self.center[i]).abs() - inner.half_side)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn shifted(&self, s: &Point) -> Cube {
        let mut c = self.center;
        for i in 0..self.dim {
            c[i] += s[i];
        }
        Cube { center: c, ..*self }
    }

    /// Membership in the external annulus `{x outside the cube, dist_eu(x) <= range}`.
    pub fn in_annulus(&self, x: &Point, range: f64) -> bool {
        !self.contains(x) && self.dist_eu(x) <= range
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let mut p = ORIGIN;
        for i in 0..self.dim {
            p[i] = self.center[i] + self.half_side * (2.0 * rng.random::<f64>() - 1.0);
        }
        p
    }
}

/// Static classical configuration in the external annulus of a cube, one
/// point list per particle type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExternalCC {
    pub points: Vec<Vec<Point>>,
}

impl ExternalCC {
    pub fn empty(q: usize) -> Self {
        Self { points: vec![Vec::new(); q] }
    }

    pub fn len(&self) -> usize {
        self.points.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points that do not lie in the annulus of `home` with width `range`.
    pub fn misplaced(&self, home: &Cube, range: f64) -> Vec<(usize, Point)> {
        self.points
            .iter()
            .enumerate()
            .flat_map(|(j, pts)| pts.iter().map(move |p| (j, *p)))
            .filter(|(_, p)| !home.in_annulus(p, range))
            .collect()
    }

    /// Deterministic square lattice of spacing `spacing` restricted to the
    /// annulus, the same for every type.
    pub fn lattice(home: &Cube, range: f64, q: usize, spacing: f64) -> Self {
        assert!(spacing > 0.0, "lattice spacing must be positive");
        let dim = home.dim();
        let reach = home.half_side() + range;
        let n = (reach / spacing).floor() as i64;
        let mut pts = Vec::new();
        let mut idx = vec![-n; dim];
        loop {
            let mut p = home.center();
            for i in 0..dim {
                p[i] += idx[i] as f64 * spacing;
            }
            if home.in_annulus(&p, range) {
                pts.push(p);
            }
            // odometer over the index box
            let mut i = 0;
            loop {
                if i == dim {
                    return Self { points: vec![pts; q] };
                }
                idx[i] += 1;
                if idx[i] <= n {
                    break;
                }
                idx[i] = -n;
                i += 1;
            }
        }
    }

    /// `counts[j]` points per type, uniform on the annulus (rejection sampling).
    pub fn uniform<R: Rng + ?Sized>(home: &Cube, range: f64, counts: &[usize], rng: &mut R) -> Self {
        assert!(range > 0.0, "annulus needs a positive width");
        let outer = Cube { half_side: home.half_side() + range, ..*home };
        let points = counts
            .iter()
            .map(|&n| {
                let mut v = Vec::with_capacity(n);
                while v.len() < n {
                    let p = outer.sample_uniform(rng);
                    if home.in_annulus(&p, range) {
                        v.push(p);
                    }
                }
                v
            })
            .collect();
        Self { points }
    }
}
