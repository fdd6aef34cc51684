//! Config systems turned into core objects.

use std::sync::Arc;

use apsde_core::estimators::{EulerSampler, ProcessSampler};
use apsde_core::sampler::InitialLaw;
use apsde_core::{
    ou_spec, periodic_example_spec, EvolutionSystem64, GaussianProcess64, OuParams64, StochasticConvolution,
};
use nalgebra::DMatrix;

use crate::config::{scalar, Builtin, ConfigError, CustomSystem, Entry, Numerics, SystemConfig};
use crate::expr::Expr;

#[derive(Debug, Clone)]
pub enum SystemKind {
    Ou(OuParams64),
    PeriodicExample,
    Custom,
}

#[derive(Debug, Clone)]
pub struct BuiltSystem {
    pub kind: SystemKind,
    pub evolution: EvolutionSystem64,
    pub numerics: Numerics,
}

pub fn build(cfg: &SystemConfig, numerics: &Numerics) -> Result<BuiltSystem, ConfigError> {
    let (kind, evolution) = match (&cfg.builtin, &cfg.custom) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(ConfigError::invalid("system: set exactly one of `builtin` or `custom`"));
        }
        (Some(Builtin::Ou), None) => {
            let (Some(a), Some(s)) = (&cfg.alpha, &cfg.sigma) else {
                return Err(ConfigError::invalid("system: builtin `ou` needs `alpha` and `sigma`"));
            };
            let params = OuParams64::new(scalar(a, "system.alpha")?, scalar(s, "system.sigma")?)
                .map_err(|e| ConfigError::invalid(format!("system: {e}")))?;
            (SystemKind::Ou(params), EvolutionSystem64::ou(params))
        }
        (Some(Builtin::PeriodicExample), None) => {
            no_ou_params(cfg)?;
            (SystemKind::PeriodicExample, EvolutionSystem64::periodic_example())
        }
        (None, Some(c)) => {
            no_ou_params(cfg)?;
            (SystemKind::Custom, custom_system(c)?)
        }
    };
    Ok(BuiltSystem {
        kind,
        evolution,
        numerics: numerics.clone(),
    })
}

fn no_ou_params(cfg: &SystemConfig) -> Result<(), ConfigError> {
    if cfg.alpha.is_some() || cfg.sigma.is_some() {
        return Err(ConfigError::invalid(
            "system: `alpha` and `sigma` apply to builtin `ou` only",
        ));
    }
    Ok(())
}

type ExprMatrix = Arc<Vec<Vec<Expr>>>;

fn parse_matrix(rows: &[Vec<Entry>], what: &str) -> Result<ExprMatrix, ConfigError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(ConfigError::invalid(format!(
            "system.custom.{what}: matrix must be nonempty"
        )));
    }
    let width = rows[0].len();
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(ConfigError::invalid(format!(
                "system.custom.{what}[{i}]: expected {width} entries, got {}",
                row.len()
            )));
        }
        let mut parsed = Vec::with_capacity(width);
        for (j, e) in row.iter().enumerate() {
            parsed.push(match e {
                Entry::Num(v) => Expr::Num(*v),
                Entry::Expr(src) => Expr::parse(src)
                    .map_err(|err| ConfigError::invalid(format!("system.custom.{what}[{i}][{j}]: '{src}' {err}")))?,
            });
        }
        out.push(parsed);
    }
    Ok(Arc::new(out))
}

fn eval_matrix(m: &[Vec<Expr>], t: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m[0].len(), |i, j| m[i][j].eval(t))
}

fn custom_system(c: &CustomSystem) -> Result<EvolutionSystem64, ConfigError> {
    let drift = parse_matrix(&c.drift, "drift")?;
    let noise = parse_matrix(&c.noise, "noise")?;
    let d = drift.len();
    if drift[0].len() != d {
        return Err(ConfigError::invalid(format!(
            "system.custom.drift: must be square, got {d}x{}",
            drift[0].len()
        )));
    }
    if noise.len() != d {
        return Err(ConfigError::invalid(format!(
            "system.custom.noise: expected {d} rows, got {}",
            noise.len()
        )));
    }
    let m = noise[0].len();
    let q = match &c.q {
        None => DMatrix::identity(m, m),
        Some(rows) => {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(ConfigError::invalid(format!("system.custom.q: must be {m}x{m}")));
            }
            DMatrix::from_fn(m, m, |i, j| rows[i][j])
        }
    };
    let period = c
        .period
        .as_ref()
        .map(|p| scalar(p, "system.custom.period"))
        .transpose()?;
    let name = c.name.clone().unwrap_or_else(|| "custom".to_string());
    let (a, g) = (drift.clone(), noise.clone());
    EvolutionSystem64::new(
        name,
        move |t| eval_matrix(&a, t),
        move |t| eval_matrix(&g, t),
        q,
        period,
    )
    .map_err(|e| ConfigError::invalid(format!("system.custom: {e}")))
}

impl BuiltSystem {
    pub fn name(&self) -> &str {
        self.evolution.name()
    }

    /// Closed-form law for builtins, stochastic-convolution law otherwise.
    pub fn spec(&self) -> apsde_core::Result<GaussianProcess64> {
        Ok(match &self.kind {
            SystemKind::Ou(p) => ou_spec(*p),
            SystemKind::PeriodicExample => periodic_example_spec(),
            SystemKind::Custom => self.convolution()?.process_spec(),
        })
    }

    pub fn convolution(&self) -> apsde_core::Result<StochasticConvolution<f64>> {
        StochasticConvolution::new(self.evolution.clone(), self.numerics.step, self.numerics.tail_tol)
    }

    /// Exact recursion for builtins, joint Gaussian draws from the
    /// convolution law otherwise.
    pub fn exact_sampler(&self) -> apsde_core::Result<ProcessSampler<f64>> {
        Ok(match &self.kind {
            SystemKind::Ou(p) => ProcessSampler::OuExact(*p),
            SystemKind::PeriodicExample => ProcessSampler::PeriodicExact,
            SystemKind::Custom => ProcessSampler::Gaussian(self.spec()?),
        })
    }

    /// Euler-Maruyama from `start` for custom systems: stationary start when a
    /// stability certificate exists, else from zero.
    pub fn path_sampler(&self, start: f64, euler_step: f64) -> apsde_core::Result<ProcessSampler<f64>> {
        match &self.kind {
            SystemKind::Custom => {
                let init = match self.convolution() {
                    Ok(conv) => InitialLaw::stationary(&conv, start)?,
                    Err(apsde_core::Error::NotStable(_)) => InitialLaw::Zero,
                    Err(e) => return Err(e),
                };
                Ok(ProcessSampler::Euler(EulerSampler {
                    system: self.evolution.clone(),
                    step: euler_step,
                    start,
                    init,
                }))
            }
            _ => self.exact_sampler(),
        }
    }

    pub fn period(&self) -> Option<f64> {
        self.evolution.period_hint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scalar;

    fn custom(drift: &str, noise: &str) -> SystemConfig {
        SystemConfig::custom(CustomSystem {
            name: None,
            drift: vec![vec![Entry::Expr(drift.into())]],
            noise: vec![vec![Entry::Expr(noise.into())]],
            q: None,
            period: Some(Scalar::Expr("2 * pi".into())),
        })
    }

    #[test]
    fn custom_periodic_matches_builtin() {
        let c = build(&custom("-1 + cos(t)", "sqrt(1 - cos(t))"), &Numerics::default()).unwrap();
        let b = build(&SystemConfig::periodic_example(), &Numerics::default()).unwrap();
        for t in [0.0, 0.3, 2.0, -4.0] {
            assert_eq!(c.evolution.drift(t), b.evolution.drift(t));
            assert_eq!(c.evolution.noise(t), b.evolution.noise(t));
        }
        assert_eq!(c.period(), Some(std::f64::consts::TAU));
    }

    #[test]
    fn rejects_inconsistent_systems() {
        assert!(build(&SystemConfig::default(), &Numerics::default()).is_err());
        let mut ou = SystemConfig::ou(1.0, 1.0);
        ou.sigma = None;
        assert!(build(&ou, &Numerics::default()).is_err());
        assert!(build(&SystemConfig::ou(-1.0, 1.0), &Numerics::default()).is_err());
        let mut p = SystemConfig::periodic_example();
        p.alpha = Some(1.0.into());
        assert!(build(&p, &Numerics::default()).is_err());
        assert!(build(&custom("tan(t)", "1"), &Numerics::default()).is_err());
        let bad_shape = SystemConfig::custom(CustomSystem {
            name: None,
            drift: vec![vec![Entry::Num(-1.0), Entry::Num(0.0)]],
            noise: vec![vec![Entry::Num(1.0)]],
            q: None,
            period: None,
        });
        assert!(build(&bad_shape, &Numerics::default()).is_err());
    }
}
