//! Maximum-likelihood fitters for the three model classes, plus response
//! simulation and likelihood evaluation at fitted parameters.

mod glmm;
mod lm;
mod poisson;
pub mod quadrature;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, FittedModel, ModelCapability, ModelKind};
use crate::residuals;

pub use glmm::{fit_glmm_poisson_ri, marginal_loglik, OMEGA_FLOOR};
pub use lm::{fit_lm, gaussian_loglik};
pub use poisson::{fit_glm_poisson, irls_poisson, poisson_deviance, poisson_loglik, IrlsOutcome};

/// Iteration limits and tolerances shared by the iterative fitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitControl {
    pub max_iter: usize,
    /// Relative change in the objective that counts as converged.
    pub tol: f64,
    /// Adaptive Gauss–Hermite nodes per group for the mixed model.
    pub quad_points: usize,
}

impl Default for FitControl {
    fn default() -> Self {
        FitControl {
            max_iter: 100,
            tol: 1e-9,
            quad_points: 15,
        }
    }
}

impl FitControl {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("tol must be positive".into()));
        }
        if self.quad_points < 3 || self.quad_points % 2 == 0 {
            return Err(Error::InvalidInput("quad_points must be odd and at least 3".into()));
        }
        Ok(())
    }
}

/// Fits `kind` to `d`.
pub fn fit(kind: ModelKind, d: &Dataset, control: &FitControl) -> Result<FittedModel> {
    match kind {
        ModelKind::Lm => fit_lm(d).map(|mut m| {
            m.control = *control;
            m
        }),
        ModelKind::Poisson => fit_glm_poisson(d, control),
        ModelKind::PoissonRi => fit_glmm_poisson_ri(d, control),
    }
}

/// Draws a response vector from the fitted model.
///
/// The mixed model simulates unconditionally: fresh group intercepts are
/// drawn for every call. With `omega == 0` no intercept draws are made, so
/// the stream is consumed exactly as for the Poisson GLM.
pub fn simulate_response<R: Rng + ?Sized>(m: &FittedModel, rng: &mut R) -> Vec<f64> {
    match m.kind {
        ModelKind::Lm => {
            let sigma = m.sigma.unwrap_or(0.0);
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).expect("finite sigma");
                m.eta.iter().map(|&e| e + noise.sample(rng)).collect()
            } else {
                m.eta.clone()
            }
        }
        ModelKind::Poisson => m.eta.iter().map(|&e| draw_poisson(e.exp(), rng)).collect(),
        ModelKind::PoissonRi => {
            let omega = m.omega.unwrap_or(0.0);
            let g = m.dataset.n_groups();
            let intercepts: Vec<f64> = if omega > 0.0 {
                let dist = Normal::new(0.0, omega).expect("finite omega");
                (0..g).map(|_| dist.sample(rng)).collect()
            } else {
                vec![0.0; g]
            };
            let group = m.dataset.group().expect("mixed model has grouping");
            m.eta
                .iter()
                .zip(group)
                .map(|(&e, &j)| draw_poisson((e + intercepts[j]).exp(), rng))
                .collect()
        }
    }
}

/// Largest Poisson mean we are willing to sample; beyond this the fitted
/// model is numerically meaningless anyway.
const MAX_POISSON_MEAN: f64 = 1e12;

pub(crate) fn draw_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if !(mean > 0.0) {
        return 0.0;
    }
    Poisson::new(mean.min(MAX_POISSON_MEAN))
        .expect("positive finite mean")
        .sample(rng)
}

/// Log-likelihood of `y` at the parameters of `m` (marginal for the mixed
/// model). Linear models use the maximum-likelihood sd.
pub fn log_likelihood(m: &FittedModel, y: &[f64]) -> f64 {
    match m.kind {
        ModelKind::Lm => gaussian_loglik(y, &m.eta, m.sigma_ml.unwrap_or(0.0)),
        ModelKind::Poisson => poisson_loglik(y, &m.eta),
        ModelKind::PoissonRi => {
            let d = m.dataset.with_response(y).expect("conformable response");
            marginal_loglik(&d, &m.beta, m.omega.unwrap_or(0.0), m.control.quad_points)
        }
    }
}

pub(crate) fn check_counts(y: &[f64]) -> Result<()> {
    if y.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
        return Err(Error::InvalidInput("Poisson responses must be nonnegative integers".into()));
    }
    Ok(())
}

impl ModelCapability for FittedModel {
    fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        simulate_response(self, rng)
    }

    fn refit(&self, y: &[f64]) -> Result<Self> {
        let d = self.dataset.with_response(y)?;
        let mut m = fit(self.kind, &d, &self.control)?;
        m.residual_kind = self.residual_kind;
        Ok(m)
    }

    fn residuals(&self) -> Result<Vec<f64>> {
        residuals::residuals(self, self.residual_kind)
    }

    fn predict(&self) -> Vec<f64> {
        self.eta.clone()
    }

    fn max_log_likelihood(&self) -> f64 {
        self.loglik
    }
}
