//! Poisson log-linear model with a Gaussian random intercept per group.
//!
//! The marginal likelihood of each group integrates the conditional Poisson
//! likelihood against `N(0, ω²)`. The integral is approximated by adaptive
//! Gauss–Hermite quadrature: nodes are recentred at the conditional mode of
//! the group intercept and scaled by the curvature there. Given the linear
//! predictor, a group's conditional log-likelihood only needs three sums,
//! `Σ y η`, `Σ y` and `Σ exp(η)`, which keeps each evaluation cheap.

use statrs::function::gamma::ln_gamma;
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::fitters::poisson::irls_poisson;
use crate::fitters::quadrature::gauss_hermite;
use crate::fitters::{check_counts, FitControl};
use crate::model::{xb, Dataset, FitFlags, FittedModel, ModelKind};
use crate::residuals::ResidualKind;

/// Lower bound on the random-intercept sd; fits that want to go below it
/// are reported as boundary fits.
pub const OMEGA_FLOOR: f64 = 1e-6;

const MODE_MAX_STEPS: usize = 50;
const MODE_TOL: f64 = 1e-10;
const MODE_MAX_STEP: f64 = 2.0;
const MAX_PARAM_STEP: f64 = 3.0;
const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default)]
struct GroupStats {
    sum_y_eta: f64,
    sum_y: f64,
    sum_mu: f64,
}

struct Objective<'a> {
    d: &'a Dataset,
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
    log_factorials: f64,
}

impl<'a> Objective<'a> {
    fn new(d: &'a Dataset, quad_points: usize) -> Self {
        let (nodes, weights) = gauss_hermite(quad_points);
        Objective {
            d,
            log_weights: weights.iter().zip(&nodes).map(|(w, x)| w.ln() + x * x).collect(),
            nodes,
            log_factorials: d.y().iter().map(|&y| ln_gamma(y + 1.0)).sum(),
        }
    }

    fn group_stats(&self, beta: &[f64]) -> Vec<GroupStats> {
        let eta = xb(self.d.x(), beta);
        let group = self.d.group().expect("grouping checked");
        let mut stats = vec![GroupStats::default(); self.d.n_groups()];
        for ((&e, &y), &g) in eta.iter().zip(self.d.y()).zip(group) {
            let s = &mut stats[g];
            s.sum_y_eta += y * e;
            s.sum_y += y;
            s.sum_mu += e.exp();
        }
        stats
    }

    /// Marginal log-likelihood; `modes` carries warm starts in and the
    /// conditional modes out.
    fn loglik(&self, beta: &[f64], omega: f64, modes: &mut [f64]) -> f64 {
        let stats = self.group_stats(beta);
        let mut total = -self.log_factorials;
        for (s, mode) in stats.iter().zip(modes.iter_mut()) {
            total += self.group_log_integral(s, omega, mode);
        }
        total
    }

    fn group_log_integral(&self, s: &GroupStats, omega: f64, mode: &mut f64) -> f64 {
        let cond = |u: f64| s.sum_y_eta + s.sum_y * u - s.sum_mu * u.exp();
        if omega == 0.0 {
            *mode = 0.0;
            return cond(0.0);
        }
        let prec = 1.0 / (omega * omega);
        let log_norm = -0.5 * (2.0 * PI * omega * omega).ln();
        let h = |u: f64| cond(u) - 0.5 * prec * u * u + log_norm;

        let mut u = if mode.is_finite() { *mode } else { 0.0 };
        for _ in 0..MODE_MAX_STEPS {
            let grad = s.sum_y - s.sum_mu * u.exp() - prec * u;
            let curv = s.sum_mu * u.exp() + prec;
            let step = (grad / curv).clamp(-MODE_MAX_STEP, MODE_MAX_STEP);
            u += step;
            if step.abs() < MODE_TOL {
                break;
            }
        }
        *mode = u;
        let scale = 1.0 / (s.sum_mu * u.exp() + prec).sqrt();
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.log_weights)
            .map(|(x, lw)| lw + h(u + SQRT_2 * scale * x))
            .collect();
        log_sum_exp(&terms) + (SQRT_2 * scale).ln()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Marginal log-likelihood of `d` at `(beta, omega)` by adaptive
/// Gauss–Hermite quadrature with `quad_points` nodes per group.
/// At `omega == 0` this is exactly the Poisson GLM log-likelihood.
pub fn marginal_loglik(d: &Dataset, beta: &[f64], omega: f64, quad_points: usize) -> f64 {
    let obj = Objective::new(d, quad_points);
    let mut modes = vec![0.0; d.n_groups()];
    obj.loglik(beta, omega, &mut modes)
}

enum Outer {
    Converged { theta: Vec<f64>, iterations: usize },
    HitFloor,
}

/// Quasi-Newton (BFGS) over `(beta, log omega)` minimizing the negative
/// marginal log-likelihood, with central-difference gradients.
fn bfgs(obj: &Objective<'_>, start: Vec<f64>, c: &FitControl) -> Result<Outer> {
    let k = start.len();
    let floor = OMEGA_FLOOR.ln();
    let mut modes = vec![0.0; obj.d.n_groups()];
    let mut f = |theta: &[f64], modes: &mut Vec<f64>| -> f64 {
        let v = -obj.loglik(&theta[..k - 1], theta[k - 1].exp(), modes);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let grad = |theta: &[f64], modes: &mut Vec<f64>, f: &mut dyn FnMut(&[f64], &mut Vec<f64>) -> f64| {
        let mut g = vec![0.0; k];
        let mut t = theta.to_vec();
        for j in 0..k {
            let h = FD_STEP * theta[j].abs().max(1.0);
            t[j] = theta[j] + h;
            let up = f(&t, modes);
            t[j] = theta[j] - h;
            let down = f(&t, modes);
            t[j] = theta[j];
            g[j] = (up - down) / (2.0 * h);
        }
        g
    };

    let mut theta = start;
    let mut fx = f(&theta, &mut modes);
    if !fx.is_finite() {
        return Err(Error::NonConvergence { iterations: 0 });
    }
    let mut g = grad(&theta, &mut modes, &mut f);
    let mut hinv = identity(k);

    for iter in 1..=c.max_iter {
        let gmax = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if gmax < GRAD_TOL {
            return Ok(Outer::Converged { theta, iterations: iter - 1 });
        }
        let mut dir: Vec<f64> = (0..k).map(|i| -(0..k).map(|j| hinv[i][j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            hinv = identity(k);
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let longest = dir.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut step = if longest > MAX_PARAM_STEP { MAX_PARAM_STEP / longest } else { 1.0 };

        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let ft = f(&trial, &mut modes);
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((mut next, mut fnext)) = accepted else {
            // Line search cannot improve on the current point: it is a
            // stationary point up to finite-difference noise.
            return Ok(Outer::Converged { theta, iterations: iter });
        };
        if next[k - 1] <= floor {
            next[k - 1] = floor;
            fnext = f(&next, &mut modes);
            if fnext <= fx {
                return Ok(Outer::HitFloor);
            }
        }
        let gnext = grad(&next, &mut modes, &mut f);
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gnext.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..k).map(|i| (0..k).map(|j| hinv[i][j] * yv[j]).sum()).collect();
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..k {
                for j in 0..k {
                    hinv[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        let change = (fx - fnext).abs() / (fnext.abs() + 0.1);
        theta = next;
        fx = fnext;
        g = gnext;
        let gmax = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if change < c.tol && gmax < 1e-3 {
            return Ok(Outer::Converged { theta, iterations: iter });
        }
    }
    Err(Error::NonConvergence { iterations: c.max_iter })
}

fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Maximum marginal likelihood fit of the random-intercept Poisson model.
///
/// Starts from the Poisson GLM fit. When the score for `ω²` at `ω = 0` is
/// non-positive and no interior optimum beats it, the fit is returned at
/// `ω = OMEGA_FLOOR` with the `boundary_omega` flag set.
pub fn fit_glmm_poisson_ri(d: &Dataset, c: &FitControl) -> Result<FittedModel> {
    c.validate()?;
    check_counts(d.y())?;
    if d.group().is_none() || d.n_groups() == 0 {
        return Err(Error::BadGrouping("random-intercept model needs a grouping column".into()));
    }
    let obj = Objective::new(d, c.quad_points);
    let glm = irls_poisson(d, c)?;

    let stats = obj.group_stats(&glm.beta);
    let score: f64 = stats
        .iter()
        .map(|s| 0.5 * ((s.sum_y - s.sum_mu).powi(2) - s.sum_mu))
        .sum();
    let boundary_ll = marginal_loglik(d, &glm.beta, OMEGA_FLOOR, c.quad_points);

    let spread = {
        let r: Vec<f64> = stats.iter().map(|s| ((s.sum_y + 0.5) / (s.sum_mu + 0.5)).ln()).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len().max(2).saturating_sub(1) as f64).sqrt()
    };
    let mut start = glm.beta.clone();
    start.push(spread.max(0.2).ln());

    let interior = match bfgs(&obj, start, c) {
        Ok(Outer::Converged { theta, iterations }) => {
            let k = theta.len();
            let beta = theta[..k - 1].to_vec();
            let omega = theta[k - 1].exp();
            let ll = marginal_loglik(d, &beta, omega, c.quad_points);
            Some((beta, omega, ll, iterations))
        }
        Ok(Outer::HitFloor) => None,
        Err(e) if score > 0.0 => return Err(e),
        Err(_) => None,
    };

    let (beta, omega, loglik, iterations, boundary) = match interior {
        Some((beta, omega, ll, it)) if !(score <= 0.0 && boundary_ll >= ll - 1e-9) => (beta, omega, ll, it, false),
        _ => (glm.beta.clone(), OMEGA_FLOOR, boundary_ll, glm.iterations, true),
    };

    let mut modes = vec![0.0; d.n_groups()];
    obj.loglik(&beta, omega, &mut modes);
    let eta = xb(d.x(), &beta);
    Ok(FittedModel {
        kind: ModelKind::PoissonRi,
        beta,
        sigma: None,
        sigma_ml: None,
        omega: Some(omega),
        eta,
        loglik,
        random_effects: Some(modes),
        dataset: d.clone(),
        control: *c,
        residual_kind: ResidualKind::Deviance,
        flags: FitFlags {
            boundary_omega: boundary,
            ..FitFlags::default()
        },
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitters::{fit_glm_poisson, poisson_loglik};
    use crate::rng::stream;
    use crate::fitters::draw_poisson;
    use nalgebra::DMatrix;

    fn grouped(y: Vec<f64>, group: Vec<usize>) -> Dataset {
        let n = y.len();
        Dataset::new(y, DMatrix::from_element(n, 1, 1.0), Some(group)).unwrap()
    }

    #[test]
    fn zero_omega_collapses_to_glm_likelihood() {
        let d = Dataset::with_intercept(
            vec![0.0, 2.0, 1.0, 4.0, 3.0, 7.0],
            &[vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]],
            Some(vec![0, 1, 2, 0, 1, 2]),
        )
        .unwrap();
        let beta = [0.3, 1.1];
        let eta = xb(d.x(), &beta);
        assert!((marginal_loglik(&d, &beta, 0.0, 15) - poisson_loglik(d.y(), &eta)).abs() < 1e-12);
        assert!((marginal_loglik(&d, &beta, OMEGA_FLOOR, 15) - poisson_loglik(d.y(), &eta)).abs() < 1e-9);
    }

    #[test]
    fn nests_glm_when_groups_carry_no_signal() {
        let n = 60;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let mut rng = stream(2024, &[]);
        let mut boundary_seen = 0;
        for rep in 0..5 {
            let y: Vec<f64> = x.iter().map(|&xi| draw_poisson((0.5 + xi).exp(), &mut rng)).collect();
            let group = (0..n).map(|i| i % 5).collect();
            let d = Dataset::with_intercept(y, &[x.clone()], Some(group)).unwrap();
            let glm = fit_glm_poisson(&d, &FitControl::default()).unwrap();
            let m = fit_glmm_poisson_ri(&d, &FitControl::default()).unwrap();
            if m.flags().boundary_omega {
                boundary_seen += 1;
                for (a, b) in m.beta().iter().zip(glm.beta()) {
                    assert!((a - b).abs() < 1e-4, "rep {rep}: {a} vs {b}");
                }
                assert!(m.omega().unwrap() <= OMEGA_FLOOR);
            } else {
                assert!(m.loglik() >= glm.loglik() - 1e-8);
            }
        }
        assert!(boundary_seen >= 1);
    }

    #[test]
    fn recovers_large_group_variance() {
        let n = 200;
        let mut rng = stream(77, &[]);
        let intercepts: [f64; 5] = [-1.2, 0.4, 1.0, -0.3, 0.8];
        let y: Vec<f64> = (0..n).map(|i| draw_poisson((1.0 + intercepts[i % 5]).exp(), &mut rng)).collect();
        let d = grouped(y, (0..n).map(|i| i % 5).collect());
        let m = fit_glmm_poisson_ri(&d, &FitControl::default()).unwrap();
        assert!(!m.flags().boundary_omega);
        let w = m.omega().unwrap();
        assert!(w > 0.4 && w < 2.0, "omega {w}");
        let re = m.random_effects().unwrap();
        assert!(re[0] < re[1] && re[1] < re[2]);
    }
}
