//! Residuals: standardized for the linear model, deviance (default) and
//! Pearson for the Poisson models.
//!
//! Poisson residuals, including those of the random-intercept model, are
//! taken against the marginal mean `exp(X beta)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FittedModel, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualKind {
    Standardized,
    Deviance,
    Pearson,
}

impl ResidualKind {
    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::Standardized => "standardized",
            ResidualKind::Deviance => "deviance",
            ResidualKind::Pearson => "pearson",
        }
    }

    pub(crate) fn check_model(self, kind: ModelKind) -> Result<()> {
        let ok = match self {
            ResidualKind::Standardized => kind == ModelKind::Lm,
            ResidualKind::Deviance | ResidualKind::Pearson => kind != ModelKind::Lm,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnsupportedResidual {
                kind: self.name(),
                model: kind.name(),
            })
        }
    }
}

/// Residuals of the requested kind.
pub fn residuals(m: &FittedModel, kind: ResidualKind) -> Result<Vec<f64>> {
    kind.check_model(m.kind())?;
    match kind {
        ResidualKind::Standardized => standardized_residuals(m),
        ResidualKind::Deviance => deviance_residuals(m),
        ResidualKind::Pearson => pearson_residuals(m),
    }
}

const LEVERAGE_LIMIT: f64 = 1.0 - 1e-12;

/// Diagonal of the hat matrix `X (XᵀX)⁻¹ Xᵀ`, from the thin QR factor.
pub fn hat_diagonal(x: &DMatrix<f64>) -> Vec<f64> {
    let q = x.clone().qr().q();
    (0..q.nrows()).map(|i| q.row(i).norm_squared()).collect()
}

/// `(y - η) / (σ √(1 - h))` with the unbiased σ. A degenerate fit (σ = 0)
/// has all residuals zero.
pub fn standardized_residuals(m: &FittedModel) -> Result<Vec<f64>> {
    ResidualKind::Standardized.check_model(m.kind())?;
    let h = hat_diagonal(m.dataset().x());
    if let Some(index) = h.iter().position(|&v| v >= LEVERAGE_LIMIT) {
        return Err(Error::LeverageOne { index });
    }
    let sigma = m.sigma().unwrap_or(0.0);
    if m.flags().degenerate || sigma == 0.0 {
        return Ok(vec![0.0; h.len()]);
    }
    Ok(m
        .dataset()
        .y()
        .iter()
        .zip(m.eta())
        .zip(&h)
        .map(|((y, e), h)| (y - e) / (sigma * (1.0 - h).sqrt()))
        .collect())
}

/// Signed square root of one observation's Poisson deviance contribution.
pub fn poisson_deviance_residual(y: f64, mu: f64) -> f64 {
    let ylog = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
    let d = (2.0 * (ylog - (y - mu))).max(0.0);
    let diff = y - mu;
    if diff > 0.0 {
        d.sqrt()
    } else if diff < 0.0 {
        -d.sqrt()
    } else {
        0.0
    }
}

pub fn deviance_residuals(m: &FittedModel) -> Result<Vec<f64>> {
    ResidualKind::Deviance.check_model(m.kind())?;
    Ok(m
        .dataset()
        .y()
        .iter()
        .zip(m.fitted_means())
        .map(|(&y, mu)| poisson_deviance_residual(y, mu))
        .collect())
}

pub fn pearson_residuals(m: &FittedModel) -> Result<Vec<f64>> {
    ResidualKind::Pearson.check_model(m.kind())?;
    Ok(m
        .dataset()
        .y()
        .iter()
        .zip(m.fitted_means())
        .map(|(&y, mu)| (y - mu) / mu.sqrt())
        .collect())
}
