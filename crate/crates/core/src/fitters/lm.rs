use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fitters::FitControl;
use crate::model::{xb, Dataset, FitFlags, FittedModel, ModelKind};
use crate::residuals::ResidualKind;

/// Residual sd at or below this multiple of the response scale is treated
/// as an exact fit.
const DEGENERATE_REL: f64 = 1e-12;

/// Ordinary least squares via a QR factorization of the design.
pub fn fit_lm(d: &Dataset) -> Result<FittedModel> {
    let (n, p) = (d.n(), d.p());
    let qr = d.x().clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if let Some(j) = r.diagonal().iter().position(|v| v.abs() <= 1e-12 * rmax) {
        return Err(Error::RankDeficient { rank: j, columns: p });
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(d.y());
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { rank: p - 1, columns: p })?;
    let beta: Vec<f64> = beta.iter().copied().collect();
    let eta = xb(d.x(), &beta);
    let rss: f64 = d.y().iter().zip(&eta).map(|(y, e)| (y - e).powi(2)).sum();

    let scale = d.y().iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    let mut sigma = if n > p { (rss / (n - p) as f64).sqrt() } else { 0.0 };
    let mut sigma_ml = (rss / n as f64).sqrt();
    let degenerate = sigma <= DEGENERATE_REL * scale;
    if degenerate {
        sigma = 0.0;
        sigma_ml = 0.0;
    }
    let loglik = gaussian_loglik(d.y(), &eta, sigma_ml);
    Ok(FittedModel {
        kind: ModelKind::Lm,
        beta,
        sigma: Some(sigma),
        sigma_ml: Some(sigma_ml),
        omega: None,
        eta,
        loglik,
        random_effects: None,
        dataset: d.clone(),
        control: FitControl::default(),
        residual_kind: ResidualKind::Standardized,
        flags: FitFlags {
            degenerate,
            ..FitFlags::default()
        },
        iterations: 1,
    })
}

/// Gaussian log-likelihood with mean `eta` and sd `sigma`. The variance is
/// floored at the smallest normal double so exact fits stay finite.
pub fn gaussian_loglik(y: &[f64], eta: &[f64], sigma: f64) -> f64 {
    let var = (sigma * sigma).max(f64::MIN_POSITIVE);
    let n = y.len() as f64;
    let ss: f64 = y.iter().zip(eta).map(|(y, e)| (y - e).powi(2)).sum();
    -0.5 * n * (2.0 * PI * var).ln() - ss / (2.0 * var)
}
