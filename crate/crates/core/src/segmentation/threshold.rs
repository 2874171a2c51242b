//! Misclassification-optimal threshold between the background component and
//! the pooled signal components of a mixture.

use statrs::function::erf::erfc;

use super::mixture::MixtureModel;
use crate::error::{LasrError, Result};

/// How the threshold was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMethod {
    /// Root of the weighted density balance equation.
    Root,
    /// No usable root; minimizer of the misclassification probability on a
    /// fine grid.
    GridFallback,
}

impl ThresholdMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMethod::Root => "root",
            ThresholdMethod::GridFallback => "grid-fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub model: MixtureModel,
    pub threshold: f64,
    pub method: ThresholdMethod,
}

fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn lower_tail(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Overall probability of misclassification of the rule "background iff
/// z <= t": background mass above `t` plus signal mass at or below it.
pub fn pmc(model: &MixtureModel, t: f64) -> f64 {
    let (w, mu, sd) = (model.weights(), model.means(), model.sds());
    let mut p = w[0] * upper_tail((t - mu[0]) / sd[0]);
    for k in 1..model.m() {
        p += w[k] * lower_tail((t - mu[k]) / sd[k]);
    }
    p
}

/// Background density minus pooled signal density, both prior-weighted.
/// The derivative of [`pmc`] is `-balance`.
pub fn balance(model: &MixtureModel, t: f64) -> f64 {
    let signal: f64 = (1..model.m()).map(|k| model.component_density(k, t)).sum();
    model.component_density(0, t) - signal
}

/// Brute-force minimizer of [`pmc`] over `grid` (first minimum on ties).
pub fn pmc_oracle(model: &MixtureModel, grid: &[f64]) -> Result<f64> {
    if model.m() < 2 {
        return Err(LasrError::invalid("misclassification needs at least two components"));
    }
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let p = pmc(model, t);
        if best.map_or(true, |(bp, _)| p < bp) {
            best = Some((p, t));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| LasrError::invalid("empty threshold grid"))
}

/// Evenly spaced grid over `[lo, hi]` with the given step (endpoints included).
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

const SCAN_POINTS: usize = 4096;

/// Solve the density balance equation for the segmentation threshold.
///
/// The interval between the background mean and the largest mean is scanned
/// for sign changes of [`balance`] from positive to negative (local minima of
/// the misclassification probability); each is refined by bisection and the
/// one with the smallest misclassification wins. Without such a crossing the
/// grid minimizer with step `(max mean - background mean) / 1e5` is returned.
pub fn optimal_threshold(model: &MixtureModel) -> Result<SegmentationResult> {
    if model.m() < 2 {
        return Err(LasrError::invalid(
            "threshold is undefined for a one-component mixture",
        ));
    }
    let lo = model.means()[0];
    let hi = *model.means().last().unwrap();
    if !(lo < hi) {
        return Err(LasrError::invalid(
            "background mean must lie below the signal means",
        ));
    }

    let step = (hi - lo) / SCAN_POINTS as f64;
    let mut roots = Vec::new();
    let mut a = lo;
    let mut ga = balance(model, a);
    for i in 1..=SCAN_POINTS {
        let b = if i == SCAN_POINTS { hi } else { lo + i as f64 * step };
        let gb = balance(model, b);
        if ga > 0.0 && gb <= 0.0 {
            roots.push(bisect(model, a, b));
        }
        a = b;
        ga = gb;
    }

    let interior = roots.into_iter().filter(|t| *t > lo && *t < hi);
    let best = interior.min_by(|x, y| pmc(model, *x).total_cmp(&pmc(model, *y)));
    if let Some(t) = best {
        return Ok(SegmentationResult {
            model: model.clone(),
            threshold: t,
            method: ThresholdMethod::Root,
        });
    }
    let grid = threshold_grid(lo, hi, (hi - lo) / 1e5);
    Ok(SegmentationResult {
        model: model.clone(),
        threshold: pmc_oracle(model, &grid)?,
        method: ThresholdMethod::GridFallback,
    })
}

/// Bisection on a bracket with `balance(a) > 0 >= balance(b)`.
fn bisect(model: &MixtureModel, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if balance(model, mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    // the endpoint with the smaller residual
    if balance(model, a).abs() <= balance(model, b).abs() {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(w: &[f64], mu: &[f64], sd: &[f64]) -> MixtureModel {
        MixtureModel::new(w.to_vec(), mu.to_vec(), sd.to_vec()).unwrap()
    }

    #[test]
    fn symmetric_mixture_splits_at_midpoint() {
        let r = optimal_threshold(&model(&[0.5, 0.5], &[0.0, 4.0], &[1.0, 1.0])).unwrap();
        assert_eq!(r.method, ThresholdMethod::Root);
        assert!((r.threshold - 2.0).abs() < 1e-12);
    }

    #[test]
    fn skewed_weights_match_closed_form() {
        // equal variances: log(3/4) - T^2/2 = log(1/4) - (T-4)^2/2
        let r = optimal_threshold(&model(&[0.75, 0.25], &[0.0, 4.0], &[1.0, 1.0])).unwrap();
        let expected = 2.0 + 3f64.ln() / 4.0;
        assert!((r.threshold - expected).abs() < 1e-12);
        assert!((expected - 2.27465).abs() < 1e-5);
    }

    #[test]
    fn unequal_variances_agree_with_grid_minimizer() {
        let md = model(&[0.5, 0.5], &[0.0, 4.0], &[1.0, 2.0]);
        let r = optimal_threshold(&md).unwrap();
        let grid = threshold_grid(0.0, 4.0, 1e-4);
        let t = pmc_oracle(&md, &grid).unwrap();
        assert!((r.threshold - t).abs() <= 1e-4, "{} vs {t}", r.threshold);
        assert!(balance(&md, r.threshold).abs() < 1e-9);
    }

    #[test]
    fn oracle_returns_local_minimizer() {
        let md = model(&[0.5, 0.5], &[0.0, 4.0], &[1.0, 1.0]);
        let grid = threshold_grid(0.0, 4.0, 1e-4);
        let t = pmc_oracle(&md, &grid).unwrap();
        assert!((t - 2.0).abs() <= 1e-4);
        let skew = model(&[0.75, 0.25], &[0.0, 4.0], &[1.0, 1.0]);
        let ts = pmc_oracle(&skew, &grid).unwrap();
        assert!((ts - 2.2747).abs() <= 1e-4);
        let i = grid.iter().position(|g| *g == ts).unwrap();
        assert!(pmc(&skew, ts) <= pmc(&skew, grid[i - 1]));
        assert!(pmc(&skew, ts) <= pmc(&skew, grid[i + 1]));
        assert!(pmc_oracle(&skew, &[]).is_err());
    }

    #[test]
    fn single_component_has_no_threshold() {
        assert!(optimal_threshold(&model(&[1.0], &[0.0], &[1.0])).is_err());
    }

    #[test]
    fn shift_equivariance() {
        let md = model(&[0.6, 0.3, 0.1], &[1.0, 5.0, 9.0], &[1.0, 1.5, 2.0]);
        let t0 = optimal_threshold(&md).unwrap().threshold;
        for c in [-3.0, 0.5, 17.25] {
            let shifted = model(&[0.6, 0.3, 0.1], &[1.0 + c, 5.0 + c, 9.0 + c], &[1.0, 1.5, 2.0]);
            let t = optimal_threshold(&shifted).unwrap().threshold;
            assert!((t - (t0 + c)).abs() < 1e-9);
        }
    }

    #[test]
    fn swamped_background_falls_back_to_grid() {
        // signal density dominates everywhere between the means
        let md = model(&[0.01, 0.99], &[0.0, 0.5], &[1.0, 3.0]);
        let r = optimal_threshold(&md).unwrap();
        assert_eq!(r.method, ThresholdMethod::GridFallback);
        let grid = threshold_grid(0.0, 0.5, 0.5 / 1e5);
        assert_eq!(r.threshold, pmc_oracle(&md, &grid).unwrap());
    }
}
