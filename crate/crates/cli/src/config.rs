//! JSON experiment configuration.

use std::f64::consts::LN_2;
use std::fmt;
use std::path::PathBuf;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::expr::Expr;

/// A real number, or a constant expression such as `"2 * pi"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum Scalar {
    Num(f64),
    Expr(String),
}

impl Scalar {
    pub fn value(&self) -> Result<f64, ConfigError> {
        match self {
            Scalar::Num(v) => Ok(*v),
            Scalar::Expr(src) => {
                let e = Expr::parse(src).map_err(|e| ConfigError::invalid(format!("expression '{src}' {e}")))?;
                if e.depends_on_t() {
                    return Err(ConfigError::invalid(format!(
                        "expression '{src}' must not depend on t here"
                    )));
                }
                Ok(e.eval(0.0))
            }
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Num(v)
    }
}

pub(crate) fn values(xs: &[Scalar], what: &str) -> Result<Vec<f64>, ConfigError> {
    xs.iter()
        .map(|s| s.value())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.at(what))
}

/// [`Scalar::value`] with the field path in the error.
pub(crate) fn scalar(x: &Scalar, what: &str) -> Result<f64, ConfigError> {
    x.value().map_err(|e| e.at(what))
}

fn nums(xs: &[f64]) -> Vec<Scalar> {
    xs.iter().map(|&v| Scalar::Num(v)).collect()
}

/// A matrix entry: a number or an expression in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum Entry {
    Num(f64),
    Expr(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    /// Stationary Ornstein-Uhlenbeck process; needs `alpha` and `sigma`.
    Ou,
    /// `dX = (-1 + cos t) X dt + sqrt(1 - cos t) dW`.
    PeriodicExample,
}

/// `dX = A(t) X dt + g(t) dW`, `Cov(W_1) = q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CustomSystem {
    #[serde(default)]
    pub name: Option<String>,
    /// `d×d` rows of `A(t)`.
    pub drift: Vec<Vec<Entry>>,
    /// `d×m` rows of `g(t)`.
    pub noise: Vec<Vec<Entry>>,
    /// `m×m` noise covariance, identity if absent.
    #[serde(default)]
    pub q: Option<Vec<Vec<f64>>>,
    /// Common period of the coefficients, if any.
    #[serde(default)]
    pub period: Option<Scalar>,
}

/// Either `builtin` (plus `alpha`, `sigma` for `ou`) or `custom`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<Builtin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSystem>,
}

impl SystemConfig {
    pub fn ou(alpha: f64, sigma: f64) -> Self {
        Self {
            builtin: Some(Builtin::Ou),
            alpha: Some(alpha.into()),
            sigma: Some(sigma.into()),
            custom: None,
        }
    }

    pub fn periodic_example() -> Self {
        Self {
            builtin: Some(Builtin::PeriodicExample),
            ..Self::default()
        }
    }

    pub fn custom(c: CustomSystem) -> Self {
        Self {
            custom: Some(c),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ScanTarget {
    /// Frobenius distance of `(A(t), g(t))`.
    Coefficients,
    /// `sqrt(E‖X_{t+τ} - X_t‖²)` of the solution law.
    MeanSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct KernelTableParams {
    pub times: Vec<Scalar>,
    pub lags: Vec<Scalar>,
    /// Monte Carlo paths per entry; 0 skips the Monte Carlo column.
    pub n_mc: usize,
    /// Also evaluate the stochastic-convolution covariance (builtin systems).
    pub convolution: bool,
}

impl Default for KernelTableParams {
    fn default() -> Self {
        Self {
            times: nums(&[0.0, 1.0, 5.0]),
            lags: nums(&[0.0, LN_2, 1.0, 5.0]),
            n_mc: 100_000,
            convolution: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ApScanParams {
    pub target: ScanTarget,
    pub epsilon: f64,
    pub tau_min: Scalar,
    pub tau_max: Scalar,
    pub tau_step: f64,
    /// Functions are sampled on `[0, window]`; must exceed `tau_max`.
    pub window: Scalar,
    pub grid_step: f64,
}

impl Default for ApScanParams {
    fn default() -> Self {
        Self {
            target: ScanTarget::Coefficients,
            epsilon: 1e-6,
            tau_min: 0.5.into(),
            tau_max: 20.0.into(),
            tau_step: 0.01,
            window: 40.0.into(),
            grid_step: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct MsFalsifyParams {
    pub tau_min: Scalar,
    pub tau_max: Scalar,
    pub tau_step: f64,
    pub t_start: Scalar,
    pub t_end: Scalar,
    pub t_step: f64,
    /// `c` at or below this is inconclusive.
    pub tol: f64,
}

impl Default for MsFalsifyParams {
    fn default() -> Self {
        Self {
            tau_min: 1.0.into(),
            tau_max: 50.0.into(),
            tau_step: 0.05,
            t_start: 0.0.into(),
            t_end: 20.0.into(),
            t_step: 0.05,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaParams {
    /// `t_n = n·spacing`, `n = 1..=count`, unless `times` is given.
    pub spacing: Scalar,
    pub count: usize,
    pub times: Option<Vec<Scalar>>,
    /// Probe direction; `[1, 0, …]` if absent.
    pub functional: Option<Vec<f64>>,
    pub n_mc: usize,
    pub gap: usize,
    pub cov_tol: f64,
    pub var_margin: f64,
}

impl Default for LemmaParams {
    fn default() -> Self {
        Self {
            spacing: 1.0.into(),
            count: 30,
            times: None,
            functional: None,
            n_mc: 100_000,
            gap: 10,
            cov_tol: 1e-4,
            var_margin: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DistApParams {
    /// Marginal offsets `o_1 < … < o_k`, `k <= 8`.
    pub offsets: Vec<Scalar>,
    pub tau_candidates: Vec<Scalar>,
    pub epsilon: f64,
    pub t_start: Scalar,
    pub t_end: Scalar,
    pub t_points: usize,
}

impl Default for DistApParams {
    fn default() -> Self {
        Self {
            offsets: nums(&[0.0, 1.0, 2.0, 3.0, 4.0]),
            tau_candidates: vec![
                Scalar::Num(1.0),
                Scalar::Expr("pi".into()),
                Scalar::Expr("2 * pi".into()),
            ],
            epsilon: 1e-10,
            t_start: 0.0.into(),
            t_end: Scalar::Expr("2 * pi".into()),
            t_points: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisParams {
    /// Largest lag of the stability fit.
    pub horizon: f64,
    pub step: f64,
    /// Dissipativity grid `[t_start, t_end]`; `t_end` defaults to one period or 10.
    pub t_start: Scalar,
    pub t_end: Option<Scalar>,
    pub t_points: usize,
    pub variance_times: Vec<Scalar>,
    /// `β` must exceed this for the dissipativity hypothesis to hold.
    pub beta_tol: f64,
}

impl Default for HypothesisParams {
    fn default() -> Self {
        Self {
            horizon: 50.0,
            step: 0.01,
            t_start: 0.0.into(),
            t_end: None,
            t_points: 1001,
            variance_times: vec![
                Scalar::Num(0.0),
                Scalar::Num(1.0),
                Scalar::Expr("pi / 2".into()),
                Scalar::Expr("pi".into()),
                Scalar::Num(5.5),
            ],
            beta_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsParams {
    pub times: Vec<Scalar>,
    pub n: usize,
    /// Uniform-integrability grid `t_start, t_start + t_step, …, t_end`.
    pub t_start: Scalar,
    pub t_end: Scalar,
    pub t_step: Scalar,
    pub ui_n: usize,
    /// Euler step for custom systems.
    pub euler_step: f64,
}

impl Default for MomentsParams {
    fn default() -> Self {
        Self {
            times: nums(&[0.0, 1.0, 5.0]),
            n: 100_000,
            t_start: 0.0.into(),
            t_end: 100.0.into(),
            t_step: 5.0.into(),
            ui_n: 20_000,
            euler_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    KernelTable(KernelTableParams),
    ApScan(ApScanParams),
    MsFalsify(MsFalsifyParams),
    LemmaCheck(LemmaParams),
    DistApCheck(DistApParams),
    HypothesisCheck(HypothesisParams),
    Moments(MomentsParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::KernelTable(_) => "kernel-table",
            Experiment::ApScan(_) => "ap-scan",
            Experiment::MsFalsify(_) => "ms-falsify",
            Experiment::LemmaCheck(_) => "lemma-check",
            Experiment::DistApCheck(_) => "dist-ap-check",
            Experiment::HypothesisCheck(_) => "hypothesis-check",
            Experiment::Moments(_) => "moments",
        }
    }
}

/// Step and tail tolerance of the propagator quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub step: f64,
    pub tail_tol: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            step: 0.01,
            tail_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// Unreadable or malformed JSON, or a type/field error at `path`.
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    /// Well-formed but inconsistent.
    Invalid(String),
}

impl ConfigError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        ConfigError::Invalid(msg.into())
    }

    /// Prefixes an [`ConfigError::Invalid`] message with a field path.
    pub fn at(self, what: &str) -> Self {
        match self {
            ConfigError::Invalid(m) => ConfigError::Invalid(format!("{what}: {m}")),
            other => other,
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse {
                path,
                line,
                column,
                msg,
            } => {
                write!(f, "config error at `{path}` (line {line}, column {column}): {msg}")
            }
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    /// Parses and validates a config; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = strip_position(&inner.to_string());
            ConfigError::Parse {
                path,
                line: inner.line(),
                column: inner.column(),
                msg,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        crate::systems::build(&self.system, &self.numerics)?;
        if !(self.numerics.step > 0.0 && self.numerics.tail_tol > 0.0) {
            return Err(ConfigError::invalid(
                "numerics.step and numerics.tail_tol must be positive",
            ));
        }
        Ok(())
    }
}

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// JSON schema of [`ExperimentConfig`].
pub fn schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}
