use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fitters::{check_counts, FitControl};
use crate::model::{xb, Dataset, FitFlags, FittedModel, ModelKind};
use crate::residuals::ResidualKind;

/// A linear predictor below this means a fitted mean under ~2e-9: the
/// weights have underflowed and the MLE is heading to the boundary.
const SEPARATION_ETA: f64 = -20.0;
const MAX_ETA: f64 = 700.0;
const MAX_HALVINGS: usize = 40;

/// Result of a Poisson IRLS run, including the deviance after every
/// accepted iteration.
#[derive(Debug, Clone)]
pub struct IrlsOutcome {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub deviance: f64,
    pub iterations: usize,
    pub deviance_trace: Vec<f64>,
}

/// Poisson log-linear GLM by iteratively reweighted least squares.
pub fn fit_glm_poisson(d: &Dataset, c: &FitControl) -> Result<FittedModel> {
    let out = irls_poisson(d, c)?;
    let loglik = poisson_loglik(d.y(), &out.eta);
    Ok(FittedModel {
        kind: ModelKind::Poisson,
        beta: out.beta,
        sigma: None,
        sigma_ml: None,
        omega: None,
        eta: out.eta,
        loglik,
        random_effects: None,
        dataset: d.clone(),
        control: *c,
        residual_kind: ResidualKind::Deviance,
        flags: FitFlags::default(),
        iterations: out.iterations,
    })
}

/// IRLS for the Poisson log-linear model.
///
/// Starts from `beta = (log(mean(y) + 0.1), 0, …)`. A step that raises the
/// deviance is halved until it does not, so the deviance trace is
/// non-increasing. Converged when
/// `|dev_new - dev_old| / (|dev_new| + 0.1) < tol`.
pub fn irls_poisson(d: &Dataset, c: &FitControl) -> Result<IrlsOutcome> {
    c.validate()?;
    check_counts(d.y())?;
    let (n, p) = (d.n(), d.p());
    let x = d.x();
    let y = d.y();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut beta = vec![0.0; p];
    beta[0] = (ybar + 0.1).ln();
    let mut eta = xb(x, &beta);
    let mut dev = poisson_deviance(y, &eta);
    let mut trace = vec![dev];

    for iter in 1..=c.max_iter {
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwz = DVector::<f64>::zeros(p);
        for i in 0..n {
            let mu = eta[i].exp();
            let z = eta[i] + (y[i] - mu) / mu;
            for a in 0..p {
                let wxa = mu * x[(i, a)];
                xtwz[a] += wxa * z;
                for b in 0..=a {
                    xtwx[(a, b)] += wxa * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let chol = xtwx.cholesky().ok_or(Error::Separation { iteration: iter })?;
        let proposal = chol.solve(&xtwz);
        let mut next: Vec<f64> = proposal.iter().copied().collect();
        let mut next_eta = xb(x, &next);
        let mut next_dev = deviance_or_inf(y, &next_eta);
        let mut halvings = 0;
        while next_dev > dev && halvings < MAX_HALVINGS {
            for (b_new, b_old) in next.iter_mut().zip(&beta) {
                *b_new = 0.5 * (*b_new + b_old);
            }
            next_eta = xb(x, &next);
            next_dev = deviance_or_inf(y, &next_eta);
            halvings += 1;
        }
        if next_dev > dev {
            // No descent direction left: we are at the optimum to rounding.
            return Ok(IrlsOutcome {
                beta,
                eta,
                deviance: dev,
                iterations: iter,
                deviance_trace: trace,
            });
        }
        if next_eta.iter().any(|&e| e < SEPARATION_ETA) {
            return Err(Error::Separation { iteration: iter });
        }
        let change = (next_dev - dev).abs() / (next_dev.abs() + 0.1);
        beta = next;
        eta = next_eta;
        dev = next_dev;
        trace.push(dev);
        if change < c.tol {
            return Ok(IrlsOutcome {
                beta,
                eta,
                deviance: dev,
                iterations: iter,
                deviance_trace: trace,
            });
        }
    }
    Err(Error::NonConvergence { iterations: c.max_iter })
}

fn deviance_or_inf(y: &[f64], eta: &[f64]) -> f64 {
    if eta.iter().any(|&e| !e.is_finite() || e > MAX_ETA) {
        return f64::INFINITY;
    }
    poisson_deviance(y, eta)
}

/// `2 Σ [y log(y/μ) - (y - μ)]` with `μ = exp(η)` and `0 log 0 = 0`.
pub fn poisson_deviance(y: &[f64], eta: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(eta)
        .map(|(&y, &e)| {
            let mu = e.exp();
            let ylog = if y > 0.0 { y * (y.ln() - e) } else { 0.0 };
            ylog - (y - mu)
        })
        .sum::<f64>()
}

/// `Σ [y η - exp(η) - log y!]`.
pub fn poisson_loglik(y: &[f64], eta: &[f64]) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(&y, &e)| y * e - e.exp() - ln_gamma(y + 1.0))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(y: &[f64], x: &[f64]) -> Dataset {
        Dataset::with_intercept(y.to_vec(), &[x.to_vec()], None).unwrap()
    }

    #[test]
    fn intercept_only_mean() {
        let d = Dataset::new(vec![1.0, 2.0, 3.0], DMatrix::from_element(3, 1, 1.0), None).unwrap();
        let m = fit_glm_poisson(&d, &FitControl::default()).unwrap();
        assert!((m.beta()[0] - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn all_zero_counts_hit_boundary() {
        let d = Dataset::new(vec![0.0; 3], DMatrix::from_element(3, 1, 1.0), None).unwrap();
        let err = fit_glm_poisson(&d, &FitControl::default()).unwrap_err();
        assert!(matches!(err, Error::Separation { .. } | Error::NonConvergence { .. }), "{err:?}");
    }

    #[test]
    fn rejects_non_counts() {
        let d = data(&[1.0, 2.5, 3.0], &[0.0, 1.0, 2.0]);
        assert!(matches!(fit_glm_poisson(&d, &FitControl::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn deviance_never_increases() {
        let d = data(&[0.0, 0.0, 1.0, 0.0, 3.0, 9.0, 14.0, 40.0], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let out = irls_poisson(&d, &FitControl::default()).unwrap();
        assert!(out.deviance_trace.len() > 2);
        for w in out.deviance_trace.windows(2) {
            assert!(w[1] <= w[0], "{:?}", out.deviance_trace);
        }
    }

    #[test]
    fn deviance_and_loglik_agree_with_saturated_difference() {
        let y = [0.0, 2.0, 5.0];
        let eta = [0.1, 0.4, 1.2];
        let sat: Vec<f64> = y.iter().map(|&v: &f64| if v > 0.0 { v.ln() } else { -1e300 }).collect();
        let ll_sat: f64 = y
            .iter()
            .zip(&sat)
            .map(|(&v, &e)| if v > 0.0 { v * e - v - ln_gamma(v + 1.0) } else { 0.0 })
            .sum();
        let dev = poisson_deviance(&y, &eta);
        assert!((dev - 2.0 * (ll_sat - poisson_loglik(&y, &eta))).abs() < 1e-12);
    }
}
