//! Experiment configuration files (TOML).
//!
//! Parsing deserializes each section separately so that every malformed section is
//! reported, then [`validate`] collects the semantic errors of the whole file.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use subvar_core::SolverSettings;

use crate::build;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Poincare,
    Cell,
    EffectiveMatrix,
    Homogenize,
    Hconv,
    GammaPointwise,
    Gradcheck,
    Propcheck,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Poincare => "poincare",
            Kind::Cell => "cell",
            Kind::EffectiveMatrix => "effective-matrix",
            Kind::Homogenize => "homogenize",
            Kind::Hconv => "hconv",
            Kind::GammaPointwise => "gamma-pointwise",
            Kind::Gradcheck => "gradcheck",
            Kind::Propcheck => "propcheck",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Cells per axis.
    pub res: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrandType {
    /// `½⟨a(x)η, η⟩`.
    Quadratic,
    /// `c(x)|η|^p`.
    PPower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandSpec {
    #[serde(rename = "type")]
    pub kind: IntegrandType,
    /// Scalar coefficient expression; defaults to `1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<String>,
    /// Full `m x m` matrix of expressions (quadratic only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<String>>>,
    /// Bounds of the scalar coefficient, or eigenvalue bounds of the matrix.
    /// Required when the coefficient depends on `x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
    /// Exponent of `p-power`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerSpec {
    /// `g(x, s) = mu s²/2 - rhs(x) s`.
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "zero_expr")]
    pub rhs: String,
}

fn zero_expr() -> String {
    "0".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirichletType {
    Zero,
    Affine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletSpec {
    #[serde(rename = "type")]
    pub kind: DirichletType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Periodic,
    Explicit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Strictly decreasing ε values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    /// Cells per axis of the cell problem on `(-1, 1)ⁿ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_res: Option<Vec<usize>>,
    /// ε values of the cell problem; defaults to `eps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_eps: Option<Vec<f64>>,
    /// Slopes for `cell` runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<Vec<f64>>>,
    /// Sequence indices substituted for `h` in expressions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    /// Relative tolerance of the eigenvalue iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eig_tol: Option<f64>,
    /// Random samples for `gradcheck` and `propcheck`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Extra scalar test functions; each is multiplied by every basis vector.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub battery_extra: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
    pub preconditioner: bool,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let s = SolverSettings::default();
        SolverSpec {
            tol: s.tol,
            max_iter: s.max_iter,
            memory: s.memory,
            preconditioner: s.preconditioner,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Relative paths are resolved against the config file's directory.
    pub dir: String,
    /// `false` writes 0 for every wall time, for byte-stable outputs.
    pub timing: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: "out".into(),
            timing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub frame: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrand: Option<IntegrandSpec>,
    /// Limit integrand of `gamma-pointwise`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<IntegrandSpec>,
    /// Reference integrand (`homogenize`) or operator (`hconv` explicit families).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<IntegrandSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<LowerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dirichlet: Option<DirichletSpec>,
    pub sweep: SweepSpec,
    pub solver: SolverSpec,
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            memory: self.solver.memory,
            preconditioner: self.solver.preconditioner,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// All problems found in a config file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const TOP_KEYS: [&str; 12] = [
    "kind",
    "frame",
    "seed",
    "domain",
    "integrand",
    "limit",
    "reference",
    "lower",
    "dirichlet",
    "sweep",
    "solver",
    "output",
];

fn field<T: DeserializeOwned>(table: &toml::Table, key: &str, errors: &mut Vec<String>) -> Option<T> {
    let v = table.get(key)?;
    match v.clone().try_into::<T>() {
        Ok(t) => Some(t),
        Err(e) => {
            errors.push(format!("{key}: {}", e.to_string().trim()));
            None
        }
    }
}

/// Parses the text without checking cross-field constraints.
pub fn parse_str(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ConfigErrors(vec![format!("syntax: {}", e.message())]))?;
    let mut errors = Vec::new();
    let known: BTreeSet<&str> = TOP_KEYS.into_iter().collect();
    for k in table.keys() {
        if !known.contains(k.as_str()) {
            errors.push(format!("{k}: unknown key"));
        }
    }
    let kind: Option<Kind> = field(&table, "kind", &mut errors);
    let frame: Option<String> = field(&table, "frame", &mut errors);
    for (key, present) in [("kind", table.contains_key("kind")), ("frame", table.contains_key("frame"))] {
        if !present {
            errors.push(format!("{key}: missing required key"));
        }
    }
    let cfg = ExperimentConfig {
        kind: kind.unwrap_or(Kind::Poincare),
        frame: frame.unwrap_or_default(),
        seed: field(&table, "seed", &mut errors).unwrap_or(0),
        domain: field(&table, "domain", &mut errors),
        integrand: field(&table, "integrand", &mut errors),
        limit: field(&table, "limit", &mut errors),
        reference: field(&table, "reference", &mut errors),
        lower: field(&table, "lower", &mut errors),
        dirichlet: field(&table, "dirichlet", &mut errors),
        sweep: field(&table, "sweep", &mut errors).unwrap_or_default(),
        solver: field(&table, "solver", &mut errors).unwrap_or_default(),
        output: field(&table, "output", &mut errors).unwrap_or_default(),
    };
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errors))
    }
}

/// Parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigErrors(vec![format!("{}: {e}", path.display())]))?;
    let cfg = parse_str(&text)?;
    validate(&cfg, &base_dir(path))?;
    Ok(cfg)
}

pub fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Semantic checks; builds every runtime object once so expression and frame
/// errors surface here.
pub fn validate(cfg: &ExperimentConfig, base: &Path) -> Result<(), ConfigErrors> {
    build::prepare(cfg, base).map(|_| ())
}
