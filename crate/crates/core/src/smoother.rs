//! Penalized cubic regression spline with maximum-likelihood selection of
//! the smoothing parameter.
//!
//! The basis is a clamped cubic B-spline basis on `x` rescaled to `[0, 1]`,
//! with interior knots at quantiles of the distinct `x` values. Coefficients
//! are penalized by second divided differences taken over the Greville
//! abscissae, so the unpenalized functions are exactly the constants and
//! straight lines even with unevenly spaced knots. On equally spaced knots
//! the penalty reduces to the usual second-difference P-spline penalty.
//!
//! The smoothing parameter maximizes the profile likelihood of the mixed
//! model in which the penalized part of the coefficients is a zero-mean
//! Gaussian effect with precision `λ S / σ²`. With `D(λ)` the penalized
//! residual sum of squares, the quantity minimized is
//!
//! ```text
//! n log D(λ) + log |ZᵀZ + λ S| - (k - 2) log λ
//! ```
//!
//! over `log10 λ ∈ [-8, 8]`: a unit-spaced grid scan followed by a golden
//! section refinement inside the best bracket.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const LOG10_LAMBDA_MIN: f64 = -8.0;
pub const LOG10_LAMBDA_MAX: f64 = 8.0;
const GOLDEN_TOL: f64 = 1e-4;
const MAX_BASIS_DIM: usize = 10;
const MIN_BASIS_DIM: usize = 4;

/// A fitted smoother. Evaluate with [`SmoothFit::eval`] or
/// [`evaluate_on_grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothFit {
    basis_dim: usize,
    coefs: Vec<f64>,
    lambda: f64,
    /// Full clamped knot vector on the unit interval.
    knots_unit: Vec<f64>,
    x_min: f64,
    x_max: f64,
    at_boundary: bool,
    linear_fallback: bool,
}

impl SmoothFit {
    pub fn basis_dim(&self) -> usize {
        self.basis_dim
    }

    pub fn coefs(&self) -> &[f64] {
        &self.coefs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Interior knot locations on the original `x` scale.
    pub fn knots(&self) -> Vec<f64> {
        let k = self.basis_dim;
        self.knots_unit[4..k].iter().map(|t| self.x_min + t * (self.x_max - self.x_min)).collect()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    /// The selected λ sits on an end of the search interval.
    pub fn at_boundary(&self) -> bool {
        self.at_boundary
    }

    /// Fewer than four distinct `x` values: the fit is the least-squares line.
    pub fn linear_fallback(&self) -> bool {
        self.linear_fallback
    }

    /// Fitted value at `x`; `x` is clamped to the fitted range.
    pub fn eval(&self, x: f64) -> f64 {
        let t = ((x - self.x_min) / (self.x_max - self.x_min)).clamp(0.0, 1.0);
        let (first, values) = bspline_basis(&self.knots_unit, self.basis_dim, t);
        values.iter().enumerate().map(|(j, v)| v * self.coefs[first + j]).sum()
    }
}

/// Fits the smoother with λ chosen by maximum likelihood.
pub fn fit_smoother(x: &[f64], y: &[f64]) -> Result<SmoothFit> {
    SmootherDesign::new(x)?.fit(y)
}

/// Fits the smoother at a fixed λ.
pub fn fit_smoother_with_lambda(x: &[f64], y: &[f64], lambda: f64) -> Result<SmoothFit> {
    SmootherDesign::new(x)?.fit_with_lambda(y, lambda)
}

/// The profile criterion (lower is better) at each `log10 λ` given.
pub fn ml_criterion(x: &[f64], y: &[f64], log10_lambdas: &[f64]) -> Result<Vec<f64>> {
    let design = SmootherDesign::new(x)?;
    let fit = design.response(y)?;
    Ok(log10_lambdas.iter().map(|&l| fit.criterion(10f64.powf(l))).collect())
}

/// `m` equispaced evaluations over `[lo, hi]`; `m == 1` gives the midpoint.
pub fn evaluate_on_grid(s: &SmoothFit, lo: f64, hi: f64, m: usize) -> Result<Vec<f64>> {
    Ok(equispaced(s, lo, hi, m)?.into_iter().map(|x| s.eval(x)).collect())
}

/// The evaluation points used by [`evaluate_on_grid`].
pub fn equispaced(s: &SmoothFit, lo: f64, hi: f64, m: usize) -> Result<Vec<f64>> {
    let slack = 1e-12 * (s.x_max - s.x_min);
    if !(lo < hi) || lo < s.x_min - slack || hi > s.x_max + slack || m == 0 {
        return Err(Error::OutOfRange {
            lo,
            hi,
            min: s.x_min,
            max: s.x_max,
        });
    }
    Ok(grid_points(lo, hi, m))
}

pub(crate) fn grid_points(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (m - 1) as f64;
    (0..m).map(|i| if i == m - 1 { hi } else { lo + step * i as f64 }).collect()
}

/// Nonzero cubic B-spline values at `t`: index of the first nonzero basis
/// function and the four values.
fn bspline_basis(knots: &[f64], k: usize, t: f64) -> (usize, [f64; 4]) {
    const P: usize = 3;
    // span s with knots[s] <= t < knots[s + 1], s in P..k
    let mut s = P;
    while s + 1 < k && knots[s + 1] <= t {
        s += 1;
    }
    let mut n = [0.0; 4];
    let mut left = [0.0; 4];
    let mut right = [0.0; 4];
    n[0] = 1.0;
    for j in 1..=P {
        left[j] = t - knots[s + 1 - j];
        right[j] = knots[s + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    (s - P, n)
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Everything about the smoother that depends only on `x`: knots, basis,
/// penalty and its null/range split. Build once, fit many responses.
#[derive(Debug, Clone)]
pub struct SmootherDesign {
    n: usize,
    k: usize,
    knots: Vec<f64>,
    x_min: f64,
    x_max: f64,
    basis: DMatrix<f64>,
    /// Orthonormal basis of the penalty null space (constants and lines).
    null: DMatrix<f64>,
    /// Eigenvectors spanning the penalized subspace and their eigenvalues.
    range: DMatrix<f64>,
    range_eig: DVector<f64>,
    xmat: DMatrix<f64>,
    zmat: DMatrix<f64>,
    xtx: DMatrix<f64>,
    xtz: DMatrix<f64>,
    ztz: DMatrix<f64>,
    linear_fallback: bool,
}

struct Response<'a> {
    design: &'a SmootherDesign,
    y: DVector<f64>,
    xty: DVector<f64>,
    zty: DVector<f64>,
}

impl SmootherDesign {
    pub fn new(x: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 4 {
            return Err(Error::InvalidInput(format!("smoother needs at least 4 points, got {n}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("smoother input contains non-finite values".into()));
        }
        let x_min = x.iter().copied().fold(f64::INFINITY, f64::min);
        let x_max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(x_max > x_min) {
            return Err(Error::DegenerateX);
        }
        let width = x_max - x_min;
        let t: Vec<f64> = x.iter().map(|v| ((v - x_min) / width).clamp(0.0, 1.0)).collect();
        let mut distinct = t.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let linear_fallback = distinct.len() < 4;
        let k = if linear_fallback {
            MIN_BASIS_DIM
        } else {
            MAX_BASIS_DIM.min(n - 2).min(distinct.len()).max(MIN_BASIS_DIM)
        };

        let mut knots = vec![0.0; 4];
        let interior = k - 4;
        for j in 1..=interior {
            knots.push(quantile_sorted(&distinct, j as f64 / (interior + 1) as f64));
        }
        knots.extend([1.0; 4]);

        let mut basis = DMatrix::zeros(n, k);
        for (i, &ti) in t.iter().enumerate() {
            let (first, vals) = bspline_basis(&knots, k, ti);
            for (j, v) in vals.iter().enumerate() {
                basis[(i, first + j)] = *v;
            }
        }

        let greville: Vec<f64> = (0..k).map(|j| (knots[j + 1] + knots[j + 2] + knots[j + 3]) / 3.0).collect();
        let mean_gap = 1.0 / (k - 1) as f64;
        let mut diff = DMatrix::zeros(k - 2, k);
        for j in 0..k - 2 {
            let h0 = greville[j + 1] - greville[j];
            let h1 = greville[j + 2] - greville[j + 1];
            diff[(j, j)] = mean_gap / h0;
            diff[(j, j + 1)] = -mean_gap / h0 - mean_gap / h1;
            diff[(j, j + 2)] = mean_gap / h1;
        }
        let penalty = diff.transpose() * &diff;

        let gbar = greville.iter().sum::<f64>() / k as f64;
        let gnorm = greville.iter().map(|g| (g - gbar).powi(2)).sum::<f64>().sqrt();
        let null = DMatrix::from_fn(k, 2, |i, j| {
            if j == 0 {
                1.0 / (k as f64).sqrt()
            } else {
                (greville[i] - gbar) / gnorm
            }
        });

        let eig = SymmetricEigen::new(penalty);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let q = k - 2;
        let range = DMatrix::from_fn(k, q, |i, j| eig.eigenvectors[(i, order[j])]);
        let range_eig = DVector::from_fn(q, |j, _| eig.eigenvalues[order[j]]);

        let xmat = &basis * &null;
        let zmat = &basis * &range;
        Ok(SmootherDesign {
            n,
            k,
            xtx: xmat.transpose() * &xmat,
            xtz: xmat.transpose() * &zmat,
            ztz: zmat.transpose() * &zmat,
            xmat,
            zmat,
            knots,
            x_min,
            x_max,
            basis,
            null,
            range,
            range_eig,
            linear_fallback,
        })
    }

    pub fn basis_dim(&self) -> usize {
        self.k
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    /// Fewer than four distinct `x` values: fits are least-squares lines.
    pub fn linear_fallback(&self) -> bool {
        self.linear_fallback
    }

    fn response(&self, y: &[f64]) -> Result<Response<'_>> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch(format!("x has {} values, y has {}", self.n, y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("smoother input contains non-finite values".into()));
        }
        let y = DVector::from_column_slice(y);
        Ok(Response {
            design: self,
            xty: self.xmat.transpose() * &y,
            zty: self.zmat.transpose() * &y,
            y,
        })
    }

    /// Fits `y` with λ chosen by maximum likelihood.
    pub fn fit(&self, y: &[f64]) -> Result<SmoothFit> {
        let r = self.response(y)?;
        if self.linear_fallback {
            return Ok(r.fit_at(1.0, false));
        }
        let (log10_lambda, at_boundary) = r.select_lambda();
        Ok(r.fit_at(10f64.powf(log10_lambda), at_boundary))
    }

    /// Fits `y` at a fixed λ.
    pub fn fit_with_lambda(&self, y: &[f64], lambda: f64) -> Result<SmoothFit> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        Ok(self.response(y)?.fit_at(lambda, false))
    }
}

impl Response<'_> {
    /// Penalized least squares at `lambda`: spline coefficients, penalized
    /// RSS and `log |ZᵀZ + λ S|`.
    fn solve(&self, lambda: f64) -> (DVector<f64>, f64, f64) {
        let d = self.design;
        let q = d.k - 2;
        let mut m = d.ztz.clone();
        for j in 0..q {
            m[(j, j)] += lambda * d.range_eig[j];
        }
        let chol = m.cholesky().expect("ZᵀZ + λS is positive definite");
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let minv_zx = chol.solve(&d.xtz.transpose());
        let minv_zy = chol.solve(&self.zty);
        let schur = &d.xtx - &d.xtz * &minv_zx;
        let rhs = &self.xty - &d.xtz * &minv_zy;
        let beta = match schur.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => schur.lu().solve(&rhs).expect("nonsingular null-space block"),
        };
        let b = &minv_zy - &minv_zx * &beta;
        let coefs = &d.null * &beta + &d.range * &b;
        let resid = &self.y - &d.basis * &coefs;
        let pen: f64 = b.iter().zip(d.range_eig.iter()).map(|(b, e)| e * b * b).sum();
        (coefs, resid.norm_squared() + lambda * pen, logdet)
    }

    fn criterion(&self, lambda: f64) -> f64 {
        let (_, dev, logdet) = self.solve(lambda);
        let dev = dev.max(f64::MIN_POSITIVE);
        self.design.n as f64 * dev.ln() + logdet - (self.design.k - 2) as f64 * lambda.ln()
    }

    fn select_lambda(&self) -> (f64, bool) {
        let f = |l10: f64| self.criterion(10f64.powf(l10));
        let steps = (LOG10_LAMBDA_MAX - LOG10_LAMBDA_MIN) as usize;
        let grid: Vec<f64> = (0..=steps).map(|i| LOG10_LAMBDA_MIN + i as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&l| f(l)).collect();
        let best = (0..values.len())
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .expect("nonempty grid");
        let mut a = grid[best.saturating_sub(1)];
        let mut b = grid[(best + 1).min(steps)];

        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while (b - a) > GOLDEN_TOL {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = f(d);
            }
        }
        let mut opt = 0.5 * (a + b);
        // the grid point itself may beat the refined interior point
        if values[best] < f(opt) {
            opt = grid[best];
        }
        let at_boundary = if opt - LOG10_LAMBDA_MIN < GOLDEN_TOL {
            opt = LOG10_LAMBDA_MIN;
            true
        } else if LOG10_LAMBDA_MAX - opt < GOLDEN_TOL {
            opt = LOG10_LAMBDA_MAX;
            true
        } else {
            false
        };
        (opt, at_boundary)
    }

    fn fit_at(&self, lambda: f64, at_boundary: bool) -> SmoothFit {
        let d = self.design;
        let coefs = if d.linear_fallback {
            self.line_coefs()
        } else {
            self.solve(lambda).0
        };
        SmoothFit {
            basis_dim: d.k,
            coefs: coefs.iter().copied().collect(),
            lambda,
            knots_unit: d.knots.clone(),
            x_min: d.x_min,
            x_max: d.x_max,
            at_boundary,
            linear_fallback: d.linear_fallback,
        }
    }

    /// Least-squares line, expressed through the null-space coefficients.
    fn line_coefs(&self) -> DVector<f64> {
        let beta = self
            .design
            .xtx
            .clone()
            .cholesky()
            .expect("two distinct x values give a full-rank line fit")
            .solve(&self.xty);
        &self.design.null * beta
    }
}
