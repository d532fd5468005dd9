//! Strict configuration parsing against the shipped schema.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// The schema file, also readable at `crates/cli/schema.toml`.
pub const SCHEMA: &str = include_str!("../schema.toml");

pub const EXPERIMENTS: [&str; 10] = [
    "free-validate",
    "kernel",
    "q-kernel",
    "density",
    "k-tail",
    "shift-invariance",
    "bridge-laws",
    "analytic",
    "oracle",
    "b-condition",
];

#[derive(Clone, Debug, PartialEq)]
pub enum ErrorKind {
    UnknownKey { suggestion: Option<String> },
    Missing,
    Type { expected: String },
    Range(String),
    Invalid(String),
    Syntax(String),
}

/// One schema violation with the key path it applies to.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub kind: ErrorKind,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ErrorKind::UnknownKey { suggestion: Some(s) } => write!(f, "{}: unknown key (did you mean `{s}`?)", self.path),
            ErrorKind::UnknownKey { suggestion: None } => write!(f, "{}: unknown key", self.path),
            ErrorKind::Missing => write!(f, "{}: required key is missing", self.path),
            ErrorKind::Type { expected } => write!(f, "{}: expected {expected}", self.path),
            ErrorKind::Range(r) => write!(f, "{}: out of range, {r}", self.path),
            ErrorKind::Invalid(r) => write!(f, "{}: {r}", self.path),
            ErrorKind::Syntax(r) => write!(f, "syntax error: {r}"),
        }
    }
}

/// All violations found in one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem{}):", self.0.len(), if self.0.len() == 1 { "" } else { "s" })?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FieldType {
    Int,
    Float,
    Bool,
    Str,
    IntArray,
    FloatArray,
    Table,
    TableArray,
}

impl FieldType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "int" => Self::Int,
            "float" => Self::Float,
            "bool" => Self::Bool,
            "string" => Self::Str,
            "int[]" => Self::IntArray,
            "float[]" => Self::FloatArray,
            "table" => Self::Table,
            "table[]" => Self::TableArray,
            _ => return None,
        })
    }

    fn describe(self) -> &'static str {
        match self {
            Self::Int => "an integer",
            Self::Float => "a number",
            Self::Bool => "a boolean",
            Self::Str => "a string",
            Self::IntArray => "an array of integers",
            Self::FloatArray => "an array of numbers",
            Self::Table => "a table",
            Self::TableArray => "an array of tables",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Field {
    ty: FieldType,
    gt: Option<f64>,
    ge: Option<f64>,
    lt: Option<f64>,
    le: Option<f64>,
    one_of: Vec<String>,
    default: Option<Value>,
    optional: bool,
    pub doc: String,
}

/// The parsed schema: key pattern (`a.b`, `a[].b`) to field description.
#[derive(Clone, Debug)]
pub struct Schema {
    pub fields: BTreeMap<String, Field>,
}

impl Schema {
    pub fn shipped() -> Self {
        Self::parse(SCHEMA).expect("shipped schema is valid")
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let t: Table = text.parse().map_err(|e| format!("schema: {e}"))?;
        let mut fields = BTreeMap::new();
        for (path, v) in t {
            let spec = v.as_table().ok_or_else(|| format!("schema entry {path} is not a table"))?;
            let ty = spec
                .get("type")
                .and_then(Value::as_str)
                .and_then(FieldType::parse)
                .ok_or_else(|| format!("schema entry {path} has no valid type"))?;
            let num = |k: &str| spec.get(k).and_then(as_f64);
            let one_of = spec
                .get("one_of")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(|x| x.as_str().map(String::from)).collect())
                .unwrap_or_default();
            let optional = spec.get("optional").and_then(Value::as_bool).unwrap_or(false);
            fields.insert(
                path,
                Field {
                    ty,
                    gt: num("gt"),
                    ge: num("ge"),
                    lt: num("lt"),
                    le: num("le"),
                    one_of,
                    default: spec.get("default").cloned(),
                    optional,
                    doc: spec.get("doc").and_then(Value::as_str).unwrap_or_default().to_string(),
                },
            );
        }
        Ok(Self { fields })
    }

    fn children<'a>(&'a self, parent: &'a str) -> impl Iterator<Item = (&'a str, &'a Field)> + 'a {
        self.fields.iter().filter_map(move |(p, f)| {
            let rest = if parent.is_empty() { Some(p.as_str()) } else { p.strip_prefix(parent)?.strip_prefix('.') };
            rest.filter(|r| !r.contains('.') && !r.contains('[')).map(|r| (r, f))
        })
    }

    /// Checks `root` in place: rejects unknown keys, type and range
    /// violations, and fills documented defaults.
    pub fn validate(&self, root: &mut Table) -> Vec<ConfigError> {
        let mut errs = Vec::new();
        self.walk(root, "", "", &mut errs);
        errs
    }

    fn walk(&self, t: &mut Table, pattern: &str, path: &str, errs: &mut Vec<ConfigError>) {
        let join = |a: &str, b: &str| if a.is_empty() { b.to_string() } else { format!("{a}.{b}") };
        let known: Vec<(&str, &Field)> = self.children(pattern).collect();
        for key in t.keys().cloned().collect::<Vec<_>>() {
            let Some((_, field)) = known.iter().find(|(k, _)| *k == key) else {
                let suggestion = nearest(&key, known.iter().map(|(k, _)| *k)).map(|s| join(path, s));
                errs.push(ConfigError { path: join(path, &key), kind: ErrorKind::UnknownKey { suggestion } });
                continue;
            };
            let (pat, p) = (join(pattern, &key), join(path, &key));
            let v = t.get_mut(&key).expect("key present");
            self.check(field, v, &pat, &p, errs);
        }
        for (key, field) in known {
            if t.contains_key(key) {
                continue;
            }
            let (pat, p) = (join(pattern, key), join(path, key));
            match (&field.default, field.ty) {
                (_, FieldType::Table) => {
                    let mut sub = Table::new();
                    self.walk(&mut sub, &pat, &p, errs);
                    t.insert(key.to_string(), Value::Table(sub));
                }
                (Some(d), ty) => {
                    let mut d = d.clone();
                    if ty == FieldType::Float {
                        d = as_f64(&d).map(Value::Float).unwrap_or(d);
                    } else if ty == FieldType::FloatArray {
                        if let Value::Array(a) = &mut d {
                            for x in a.iter_mut() {
                                *x = as_f64(x).map(Value::Float).unwrap_or(x.clone());
                            }
                        }
                    }
                    t.insert(key.to_string(), d);
                }
                (None, _) if field.optional => {}
                (None, _) => errs.push(ConfigError { path: p, kind: ErrorKind::Missing }),
            }
        }
    }

    fn check(&self, f: &Field, v: &mut Value, pattern: &str, path: &str, errs: &mut Vec<ConfigError>) {
        let type_err = |errs: &mut Vec<ConfigError>| {
            errs.push(ConfigError { path: path.to_string(), kind: ErrorKind::Type { expected: f.ty.describe().into() } })
        };
        match f.ty {
            FieldType::Table => match v {
                Value::Table(t) => self.walk(t, pattern, path, errs),
                _ => type_err(errs),
            },
            FieldType::TableArray => match v {
                Value::Array(a) => {
                    for (i, x) in a.iter_mut().enumerate() {
                        let p = format!("{path}[{i}]");
                        match x {
                            Value::Table(t) => self.walk(t, &format!("{pattern}[]"), &p, errs),
                            _ => errs.push(ConfigError { path: p, kind: ErrorKind::Type { expected: "a table".into() } }),
                        }
                    }
                }
                _ => type_err(errs),
            },
            FieldType::Bool => {
                if !v.is_bool() {
                    type_err(errs)
                }
            }
            FieldType::Str => match v.as_str() {
                None => type_err(errs),
                Some(s) if !f.one_of.is_empty() && !f.one_of.iter().any(|o| o == s) => {
                    let hint = nearest(s, f.one_of.iter().map(String::as_str))
                        .map(|n| format!(" (did you mean `{n}`?)"))
                        .unwrap_or_default();
                    errs.push(ConfigError {
                        path: path.to_string(),
                        kind: ErrorKind::Invalid(format!("`{s}` is not one of {}{hint}", f.one_of.join(", "))),
                    });
                }
                Some(_) => {}
            },
            FieldType::Int | FieldType::Float => scalar(f, v, path, errs),
            FieldType::IntArray | FieldType::FloatArray => match v {
                Value::Array(a) => {
                    for (i, x) in a.iter_mut().enumerate() {
                        scalar(f, x, &format!("{path}[{i}]"), errs);
                    }
                }
                _ => type_err(errs),
            },
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn scalar(f: &Field, v: &mut Value, path: &str, errs: &mut Vec<ConfigError>) {
    let int = matches!(f.ty, FieldType::Int | FieldType::IntArray);
    let x = match (int, &*v) {
        (true, Value::Integer(i)) => *i as f64,
        (false, Value::Integer(i)) => {
            let x = *i as f64;
            *v = Value::Float(x);
            x
        }
        (false, Value::Float(x)) => *x,
        _ => {
            let expected = if int { "an integer" } else { "a number" };
            errs.push(ConfigError { path: path.to_string(), kind: ErrorKind::Type { expected: expected.into() } });
            return;
        }
    };
    let fail = |r: String, errs: &mut Vec<ConfigError>| {
        errs.push(ConfigError { path: path.to_string(), kind: ErrorKind::Range(format!("got {x}, {r}")) })
    };
    if !x.is_finite() {
        return fail("must be finite".into(), errs);
    }
    if let Some(b) = f.gt.filter(|&b| x <= b) {
        return fail(format!("must be > {b}"), errs);
    }
    if let Some(b) = f.ge.filter(|&b| x < b) {
        return fail(format!("must be >= {b}"), errs);
    }
    if let Some(b) = f.lt.filter(|&b| x >= b) {
        return fail(format!("must be < {b}"), errs);
    }
    if let Some(b) = f.le.filter(|&b| x > b) {
        fail(format!("must be <= {b}"), errs);
    }
}

/// Closest candidate by edit distance, if it is plausibly a misspelling.
fn nearest<'a>(key: &str, candidates: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .map(|c| (strsim::damerau_levenshtein(key, c), c))
        .filter(|&(d, c)| d <= (c.len().max(key.len()) / 3).max(2))
        .min_by_key(|&(d, _)| d)
        .map(|(_, c)| c)
}

// ------------------------------------------------------------ typed config

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    pub model: ModelSection,
    pub geometry: Geometry,
    pub sampler: Sampler,
    pub kernel: KernelSection,
    pub k_tail: KTail,
    pub bridge_laws: BridgeLaws,
    pub analytic: AnalyticSection,
    pub oracle: OracleSection,
    pub b_condition: BCondition,
    pub output: Output,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub beta: f64,
    pub z: Vec<f64>,
    pub potentials: Vec<PotentialSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub types: Vec<usize>,
    pub kind: String,
    pub hard_core: f64,
    pub height: f64,
    pub range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub home_half: f64,
    pub box0_half: f64,
    pub window_half: f64,
    pub window_center: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampler {
    pub slices: u32,
    pub k_max: u32,
    pub k_proposal: String,
    pub sweeps: u64,
    pub burn_in: u64,
    pub chains: usize,
    pub seed: u64,
    pub check_every: u64,
    pub samples: usize,
    pub backgrounds: usize,
    pub per_background: usize,
    pub mix: Mix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mix {
    pub insert_delete: f64,
    pub swap: f64,
    pub wiggle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub separations: Vec<f64>,
    pub counts: Vec<usize>,
    pub pairs: usize,
    pub exclude_box0: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KTail {
    pub k0: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeLaws {
    pub draws: usize,
    pub thresholds: Vec<f64>,
    pub dirichlet_half: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSection {
    pub a_grid: Vec<f64>,
    pub fit_k_max: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub sites: usize,
    pub spacing: f64,
    pub n_max: Vec<usize>,
    pub boundary: String,
    pub lambda0: Vec<usize>,
    pub lambda1: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BCondition {
    pub growth: String,
    pub amplitude: f64,
    pub exponent: f64,
    pub c: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub l_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub dir: String,
    pub checkpoint: bool,
}

/// Strict parse: schema check with defaults, then cross-field checks.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let mut root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigErrors(vec![ConfigError { path: String::new(), kind: ErrorKind::Syntax(e.message().to_string()) }]))?;
    let errs = Schema::shipped().validate(&mut root);
    if !errs.is_empty() {
        return Err(ConfigErrors(errs));
    }
    let cfg: ExperimentConfig = Value::Table(root).try_into().map_err(|e: toml::de::Error| {
        ConfigErrors(vec![ConfigError { path: String::new(), kind: ErrorKind::Invalid(e.message().to_string()) }])
    })?;
    let errs = cross_checks(&cfg);
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errs))
    }
}

fn cross_checks(c: &ExperimentConfig) -> Vec<ConfigError> {
    let mut e = Vec::new();
    let mut bad = |path: String, msg: String| e.push(ConfigError { path, kind: ErrorKind::Invalid(msg) });
    let q = c.model.z.len();
    let d = c.model.dim;
    if q == 0 {
        bad("model.z".into(), "at least one type is needed".into());
    }
    for (i, p) in c.model.potentials.iter().enumerate() {
        if p.types.len() != 2 {
            bad(format!("model.potentials[{i}].types"), format!("expected two type indices, got {}", p.types.len()));
        } else if let Some(&t) = p.types.iter().find(|&&t| t >= q) {
            bad(format!("model.potentials[{i}].types"), format!("type {t} does not exist (q = {q})"));
        }
        if p.kind != "free" && p.kind != "hard_core" && (p.height == 0.0 || p.range == 0.0) {
            bad(format!("model.potentials[{i}]"), format!("{} needs positive height and range", p.kind));
        }
        if p.kind == "hard_core" && p.hard_core == 0.0 {
            bad(format!("model.potentials[{i}].hard_core"), "hard_core needs a positive diameter".into());
        }
    }
    for (name, v) in [("geometry.window_center", &c.geometry.window_center), ("geometry.shift", &c.geometry.shift)] {
        if v.len() > d {
            bad(name.into(), format!("has {} coordinates in dimension {d}", v.len()));
        }
    }
    if c.sampler.mix.insert_delete + c.sampler.mix.swap + c.sampler.mix.wiggle <= 0.0 {
        bad("sampler.mix".into(), "all move weights are zero".into());
    }
    if c.sampler.mix.insert_delete <= 0.0 {
        bad("sampler.mix.insert_delete".into(), "birth/death moves are needed for the loop count to change".into());
    }
    if !c.kernel.counts.is_empty() && c.kernel.counts.len() != q {
        bad("kernel.counts".into(), format!("has {} entries for {q} types", c.kernel.counts.len()));
    }
    if c.kernel.counts.iter().sum::<usize>() > 4 {
        bad("kernel.counts".into(), "more than 4 points in total".into());
    }
    if c.analytic.a_grid.windows(2).any(|w| w[1] <= w[0]) {
        bad("analytic.a_grid".into(), "must be strictly increasing".into());
    }
    if !c.oracle.n_max.is_empty() && c.oracle.n_max.len() != q {
        bad("oracle.n_max".into(), format!("has {} entries for {q} types", c.oracle.n_max.len()));
    }
    for (name, v) in [("oracle.lambda0", &c.oracle.lambda0), ("oracle.lambda1", &c.oracle.lambda1)] {
        if let Some(s) = v.iter().find(|&&s| s >= c.oracle.sites) {
            bad(name.into(), format!("site {s} does not exist ({} sites)", c.oracle.sites));
        }
    }
    if !c.oracle.lambda1.iter().all(|s| c.oracle.lambda0.contains(s)) {
        bad("oracle.lambda1".into(), "must be a subset of oracle.lambda0".into());
    }
    if c.b_condition.l_max <= c.b_condition.l_min {
        bad("b_condition.l_max".into(), "must exceed b_condition.l_min".into());
    }
    e
}

impl ExperimentConfig {
    /// Lossless TOML echo: every field explicit, so re-parsing gives back `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
