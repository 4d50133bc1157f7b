//! Global envelopes over an ensemble of functions sampled on a common set
//! of evaluation points.
//!
//! Row 0 of the ensemble is the observed function; the remaining rows are
//! simulated under the null. Each row gets a global statistic, the maximum
//! over the evaluation set of its absolute deviation from the ensemble mean,
//! optionally divided pointwise by the ensemble sd. The critical value is
//! the `⌈(1-α)B⌉`-th smallest statistic and the envelope is the mean plus or
//! minus that value (times the sd in Studentized mode). A row leaves the
//! envelope somewhere exactly when its statistic exceeds the critical value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pointwise variances below this are treated as zero.
pub const ZERO_VARIANCE: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeMode {
    Mad,
    StudentizedMad,
}

/// `B` functions on a common grid of `m` points. Row 0 is the observed one.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionEnsemble {
    grid: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl FunctionEnsemble {
    pub fn new(grid: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidInput("ensemble grid is empty".into()));
        }
        if rows.len() < 2 {
            return Err(Error::InvalidInput(format!("ensemble needs at least 2 functions, got {}", rows.len())));
        }
        if grid.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidInput("ensemble grid must be sorted".into()));
        }
        if let Some(b) = rows.iter().position(|r| r.len() != grid.len()) {
            return Err(Error::DimensionMismatch(format!(
                "function {b} has {} values on a grid of {}",
                rows[b].len(),
                grid.len()
            )));
        }
        if grid.iter().chain(rows.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("ensemble contains non-finite values".into()));
        }
        Ok(FunctionEnsemble { grid, rows })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn observed(&self) -> &[f64] {
        &self.rows[0]
    }

    /// Number of functions, observed included.
    pub fn b(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }
}

/// A global envelope and the statistics it was built from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalEnvelope {
    pub mode: EnvelopeMode,
    pub alpha: f64,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Pointwise sd of the ensemble (Studentized mode only).
    pub pointwise_sd: Option<Vec<f64>>,
    pub critical: f64,
    /// One global statistic per function, observed first.
    pub stats: Vec<f64>,
    pub p_value: f64,
    pub observed_outside: bool,
    /// Grid indices dropped from the Studentized maximum for zero variance.
    pub zero_variance_points: Vec<usize>,
}

impl GlobalEnvelope {
    /// Whether `f` leaves `(lower, upper)` at any grid point.
    pub fn strays_outside(&self, f: &[f64]) -> bool {
        f.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .any(|(v, (lo, hi))| v < lo || v > hi)
    }

    /// Indices of functions whose statistic exceeds the critical value.
    pub fn exceeding(&self) -> Vec<usize> {
        (0..self.stats.len()).filter(|&b| self.stats[b] > self.critical).collect()
    }
}

/// 1-based rank of the critical statistic, `⌈(1-α)B⌉`.
pub fn critical_rank(alpha: f64, b: usize) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if alpha * (b as f64) < 1.0 - 1e-9 {
        return Err(Error::AlphaTooSmall { alpha, b });
    }
    // the slack absorbs rounding in (1 - α)B when it is an integer
    let rank = ((1.0 - alpha) * b as f64 - 1e-9).ceil() as usize;
    Ok(rank.clamp(1, b))
}

/// Columnwise mean over all functions, observed included.
pub fn center_function(e: &FunctionEnsemble) -> Vec<f64> {
    let b = e.b() as f64;
    (0..e.m()).map(|r| e.rows.iter().map(|row| row[r]).sum::<f64>() / b).collect()
}

fn kth_smallest(stats: &[f64], rank: usize) -> f64 {
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[rank - 1]
}

/// Monte Carlo p-value, `#{b : s_b ≥ s_observed} / B`.
fn p_value(stats: &[f64]) -> f64 {
    let obs = stats[0];
    stats.iter().filter(|&&s| s >= obs).count() as f64 / stats.len() as f64
}

/// Bounds `center ∓ half`, adjusted by at most rounding error so that a
/// row lies inside exactly when its statistic does not exceed `critical`.
/// `dev(b, r)` is row `b`'s scaled deviation at point `r`, or `None` where
/// the point is left out of the statistic.
fn bounds(
    e: &FunctionEnsemble,
    center: &[f64],
    half: &[f64],
    stats: &[f64],
    critical: f64,
    dev: impl Fn(usize, usize) -> Option<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let mut lower = Vec::with_capacity(e.m());
    let mut upper = Vec::with_capacity(e.m());
    for r in 0..e.m() {
        let (mut lo, mut hi) = (center[r] - half[r], center[r] + half[r]);
        for (b, row) in e.rows.iter().enumerate() {
            let inside = match dev(b, r) {
                None => true,
                Some(_) => stats[b] <= critical,
            };
            if inside {
                lo = lo.min(row[r]);
                hi = hi.max(row[r]);
            }
        }
        for (b, row) in e.rows.iter().enumerate() {
            if dev(b, r).is_some_and(|d| d > critical) {
                let t = row[r];
                if t > center[r] {
                    hi = hi.min(t.next_down());
                } else {
                    lo = lo.max(t.next_up());
                }
            }
        }
        lower.push(lo);
        upper.push(hi);
    }
    (lower, upper)
}

/// Maximum-absolute-deviation envelope.
pub fn mad_envelope(e: &FunctionEnsemble, alpha: f64) -> Result<GlobalEnvelope> {
    let rank = critical_rank(alpha, e.b())?;
    let center = center_function(e);
    let stats: Vec<f64> = e
        .rows
        .iter()
        .map(|row| row.iter().zip(&center).map(|(t, c)| (t - c).abs()).fold(0.0, f64::max))
        .collect();
    let critical = kth_smallest(&stats, rank);
    let half = vec![critical; e.m()];
    let (lower, upper) = bounds(e, &center, &half, &stats, critical, |b, r| {
        Some((e.rows[b][r] - center[r]).abs())
    });
    Ok(GlobalEnvelope {
        mode: EnvelopeMode::Mad,
        alpha,
        p_value: p_value(&stats),
        observed_outside: stats[0] > critical,
        center,
        lower,
        upper,
        pointwise_sd: None,
        critical,
        stats,
        zero_variance_points: Vec::new(),
    })
}

/// Studentized MAD envelope: deviations are divided by the pointwise sd
/// `sqrt(Σ (T_b - T_0)² / (B - 1))`. Points with (near) zero variance are
/// left out of the maximum and the band collapses onto the mean there.
pub fn studentized_mad_envelope(e: &FunctionEnsemble, alpha: f64) -> Result<GlobalEnvelope> {
    if e.b() < 3 {
        return Err(Error::InvalidInput("Studentized envelope needs at least 3 functions".into()));
    }
    let rank = critical_rank(alpha, e.b())?;
    let center = center_function(e);
    let denom = (e.b() - 1) as f64;
    let var: Vec<f64> = (0..e.m())
        .map(|r| e.rows.iter().map(|row| (row[r] - center[r]).powi(2)).sum::<f64>() / denom)
        .collect();
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let zero_variance_points: Vec<usize> = (0..e.m()).filter(|&r| var[r] < ZERO_VARIANCE).collect();
    let live: Vec<usize> = (0..e.m()).filter(|&r| var[r] >= ZERO_VARIANCE).collect();

    let stats: Vec<f64> = e
        .rows
        .iter()
        .map(|row| live.iter().map(|&r| (row[r] - center[r]).abs() / sd[r]).fold(0.0, f64::max))
        .collect();
    let critical = kth_smallest(&stats, rank);

    let half: Vec<f64> = (0..e.m())
        .map(|r| if var[r] < ZERO_VARIANCE { 0.0 } else { critical * sd[r] })
        .collect();
    let (lower, upper) = bounds(e, &center, &half, &stats, critical, |b, r| {
        (var[r] >= ZERO_VARIANCE).then(|| (e.rows[b][r] - center[r]).abs() / sd[r])
    });
    Ok(GlobalEnvelope {
        mode: EnvelopeMode::StudentizedMad,
        alpha,
        p_value: p_value(&stats),
        observed_outside: stats[0] > critical,
        center,
        lower,
        upper,
        pointwise_sd: Some(sd),
        critical,
        stats,
        zero_variance_points,
    })
}

pub fn build_envelope(e: &FunctionEnsemble, alpha: f64, mode: EnvelopeMode) -> Result<GlobalEnvelope> {
    match mode {
        EnvelopeMode::Mad => mad_envelope(e, alpha),
        EnvelopeMode::StudentizedMad => studentized_mad_envelope(e, alpha),
    }
}

/// Envelope test: reject when the observed function leaves its envelope.
pub fn envelope_test(e: &FunctionEnsemble, alpha: f64, mode: EnvelopeMode) -> Result<(bool, f64)> {
    let env = build_envelope(e, alpha, mode)?;
    Ok((env.observed_outside, env.p_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn one_point(values: &[f64]) -> FunctionEnsemble {
        FunctionEnsemble::new(vec![0.0], values.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    fn gaussian_ensemble(b: usize, m: usize, seed: u64) -> FunctionEnsemble {
        let mut rng = stream(seed, &[]);
        let rows = (0..b)
            .map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        FunctionEnsemble::new((0..m).map(|r| r as f64).collect(), rows).unwrap()
    }

    #[test]
    fn center_is_columnwise_mean() {
        assert_eq!(center_function(&one_point(&[0.0, 1.0, 2.0, 3.0])), vec![1.5]);
        let e = FunctionEnsemble::new(vec![0.0, 1.0], vec![vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(center_function(&e), vec![1.0, 1.0]);
        let e = FunctionEnsemble::new(vec![0.0, 1.0], vec![vec![4.0, -1.0]; 5]).unwrap();
        assert_eq!(center_function(&e), vec![4.0, -1.0]);
    }

    #[test]
    fn hand_worked_mad_example() {
        let e = one_point(&[0.0, 1.0, 2.0, 3.0]);
        let env = mad_envelope(&e, 0.5).unwrap();
        assert_eq!(env.center, vec![1.5]);
        assert_eq!(env.stats, vec![1.5, 0.5, 0.5, 1.5]);
        assert_eq!(env.critical, 0.5);
        assert_eq!((env.lower[0], env.upper[0]), (1.0, 2.0));
        assert_eq!(env.exceeding(), vec![0, 3]);
        let outside: Vec<usize> = (0..4).filter(|&b| env.strays_outside(&e.rows()[b])).collect();
        assert_eq!(outside, vec![0, 3]);
        assert!(env.observed_outside);
    }

    #[test]
    fn studentized_matches_hand_worked_example() {
        let e = one_point(&[0.0, 1.0, 2.0, 3.0]);
        let env = studentized_mad_envelope(&e, 0.5).unwrap();
        let sd = (5.0f64 / 3.0).sqrt();
        for (s, u) in env.stats.iter().zip([1.5, 0.5, 0.5, 1.5]) {
            assert!((s - u / sd).abs() < 1e-14);
        }
        assert_eq!(env.exceeding(), vec![0, 3]);
    }

    #[test]
    fn identical_rows_give_degenerate_envelope() {
        let e = one_point(&[2.0; 6]);
        let env = mad_envelope(&e, 0.2).unwrap();
        assert_eq!(env.critical, 0.0);
        assert!(env.exceeding().is_empty());
        assert!(!env.observed_outside);
        assert_eq!(env.p_value, 1.0);
        let env = studentized_mad_envelope(&e, 0.2).unwrap();
        assert_eq!(env.zero_variance_points, vec![0]);
        assert!(env.exceeding().is_empty());
    }

    #[test]
    fn critical_rank_uses_ceiling() {
        assert_eq!(critical_rank(0.05, 200).unwrap(), 190);
        assert_eq!(critical_rank(0.05, 199).unwrap(), 190);
        assert_eq!(critical_rank(0.05, 100).unwrap(), 95);
        assert_eq!(critical_rank(0.5, 4).unwrap(), 2);
        assert!(matches!(critical_rank(0.01, 50), Err(Error::AlphaTooSmall { .. })));
        assert!(critical_rank(1.0, 50).is_err());
    }

    #[test]
    fn observed_at_center_is_not_rejected() {
        let mut e = gaussian_ensemble(50, 4, 1);
        // with row 0 at the mean of the others, it is also the mean of all
        e.rows[0] = (0..4)
            .map(|r| e.rows[1..].iter().map(|row| row[r]).sum::<f64>() / 49.0)
            .collect();
        let (reject, p) = envelope_test(&e, 0.05, EnvelopeMode::StudentizedMad).unwrap();
        assert!(!reject);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn extreme_observed_row_rejects() {
        let e = one_point(&[5.0, 1.0, 2.0, 3.0]);
        let (reject, _) = envelope_test(&e, 0.5, EnvelopeMode::Mad).unwrap();
        assert!(reject);
    }

    #[test]
    fn scaling_columns_leaves_studentized_outside_set_unchanged() {
        let e = gaussian_ensemble(40, 6, 3);
        let scale = [0.1, 1.0, 7.0, 0.5, 30.0, 2.0];
        let scaled = FunctionEnsemble::new(
            e.grid().to_vec(),
            e.rows().iter().map(|r| r.iter().zip(&scale).map(|(v, s)| v * s).collect()).collect(),
        )
        .unwrap();
        let a = studentized_mad_envelope(&e, 0.1).unwrap();
        let b = studentized_mad_envelope(&scaled, 0.1).unwrap();
        assert_eq!(a.exceeding(), b.exceeding());
    }

    #[test]
    fn mad_and_studentized_agree_under_constant_variance() {
        // rescale every column to unit sd so the two statistics coincide
        let raw = gaussian_ensemble(30, 5, 8);
        let c = center_function(&raw);
        let sd: Vec<f64> = (0..5)
            .map(|r| (raw.rows().iter().map(|row| (row[r] - c[r]).powi(2)).sum::<f64>() / 29.0).sqrt())
            .collect();
        let rows = raw
            .rows()
            .iter()
            .map(|row| (0..5).map(|r| (row[r] - c[r]) / sd[r]).collect())
            .collect();
        let e = FunctionEnsemble::new(raw.grid().to_vec(), rows).unwrap();
        let a = mad_envelope(&e, 0.2).unwrap();
        let b = studentized_mad_envelope(&e, 0.2).unwrap();
        assert!(!a.exceeding().is_empty());
        assert_eq!(a.exceeding(), b.exceeding());
    }

    #[test]
    fn null_rejection_rate_is_close_to_alpha() {
        let e = gaussian_ensemble(1000, 1, 17);
        let env = studentized_mad_envelope(&e, 0.05).unwrap();
        let out = env.exceeding().len() as i64;
        assert!((out - 50).abs() <= 21, "{out}");
    }

    #[test]
    fn exact_under_simple_null() {
        let mut rejections = 0;
        for rep in 0..2000 {
            let e = gaussian_ensemble(100, 5, 1000 + rep);
            if envelope_test(&e, 0.05, EnvelopeMode::StudentizedMad).unwrap().0 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 2000.0;
        // 3 Monte Carlo standard errors above alpha
        assert!(rate <= 0.05 + 3.0 * (0.05f64 * 0.95 / 2000.0).sqrt(), "rate {rate}");
    }

    proptest! {
        #[test]
        fn containment_equivalence_and_shift(
            seed in 0u64..10_000,
            b in 3usize..60,
            m in 1usize..12,
            alpha in 0.05f64..0.5,
            shift in -50.0f64..50.0,
        ) {
            let e = gaussian_ensemble(b, m, seed);
            let shifted = FunctionEnsemble::new(
                e.grid().to_vec(),
                e.rows().iter().map(|r| r.iter().map(|v| v + shift).collect()).collect(),
            ).unwrap();
            for mode in [EnvelopeMode::Mad, EnvelopeMode::StudentizedMad] {
                let Ok(env) = build_envelope(&e, alpha, mode) else { continue };
                let allowed = (alpha * b as f64 + 1e-9).floor() as usize;
                prop_assert!(env.exceeding().len() <= allowed);
                for (i, row) in e.rows().iter().enumerate() {
                    prop_assert_eq!(env.strays_outside(row), env.stats[i] > env.critical);
                }
                prop_assert!(env.lower.iter().zip(&env.center).all(|(l, c)| l <= c));
                prop_assert!(env.upper.iter().zip(&env.center).all(|(u, c)| u >= c));
                prop_assert!(env.p_value >= 1.0 / b as f64);
                if env.observed_outside {
                    prop_assert!(env.p_value <= alpha + 1.0 / b as f64);
                }
                let s = build_envelope(&shifted, alpha, mode).unwrap();
                prop_assert_eq!(s.exceeding(), env.exceeding());
                prop_assert_eq!(s.p_value, env.p_value);
                for (x, y) in s.stats.iter().zip(&env.stats) {
                    prop_assert!((x - y).abs() < 1e-9 * (1.0 + shift.abs()));
                }
                for (x, y) in s.center.iter().zip(&env.center) {
                    prop_assert!((x - y - shift).abs() < 1e-9 * (1.0 + shift.abs()));
                }
            }
        }
    }
}
