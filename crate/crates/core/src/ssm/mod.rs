//! Statistical smoothing mapping: difference map, rim padding, local
//! quadratic smoothing, t-type statistics, p-values and FDR-thresholded maps.

mod fdr;
mod smooth;

pub use fdr::{bh_adjust, fdr_map, p_value, t_upper_tail, FdrConfig, FdrMode, PMap, Sidedness, StepUp};
pub use smooth::{
    difference_map, local_quadratic_smooth, pad_rim, rim_sources, smooth_padded, smooth_with,
    HatOperator, Kernel, LocalQuadratic, SmoothFit, TraceMethod, EXACT_TRACE_LIMIT,
};

use std::sync::Arc;

use crate::error::{LasrError, Result};
use crate::frames::Frame;

/// Two-moment degrees of freedom `delta1^2 / delta2`.
pub fn df_from_moments(delta1: f64, delta2: f64) -> Result<f64> {
    if !(delta1 > 0.0) || !(delta2 > 0.0) {
        return Err(LasrError::Numeric(format!(
            "no residual degrees of freedom (delta1 = {delta1}, delta2 = {delta2})"
        )));
    }
    Ok(delta1 * delta1 / delta2)
}

/// `(delta1, delta2)` of a fit, checked for residual degrees of freedom.
pub fn degrees_of_freedom(fit: &SmoothFit) -> Result<(f64, f64)> {
    df_from_moments(fit.delta1, fit.delta2)?;
    Ok((fit.delta1, fit.delta2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TMap {
    pub rows: usize,
    pub cols: usize,
    /// `m_hat / (sigma_hat * ||p||)` on the mask, NaN elsewhere.
    pub t_values: Vec<f64>,
    pub df: f64,
    pub mask: Vec<bool>,
}

pub fn t_map(fit: &SmoothFit) -> Result<TMap> {
    let (d1, d2) = degrees_of_freedom(fit)?;
    if !(fit.sigma_hat > 0.0) {
        return Err(LasrError::Numeric(
            "residual scale is zero; the map is fitted exactly".into(),
        ));
    }
    let t_values = fit
        .m_hat
        .iter()
        .zip(&fit.hat_norm)
        .zip(&fit.mask)
        .map(|((m, n), &on)| if on { m / (fit.sigma_hat * n) } else { f64::NAN })
        .collect();
    Ok(TMap {
        rows: fit.rows,
        cols: fit.cols,
        t_values,
        df: d1 * d1 / d2,
        mask: fit.mask.clone(),
    })
}

/// Per-pixel p-values of a t-map (NaN off the mask).
pub fn p_map(t: &TMap, sided: Sidedness) -> Result<Vec<f64>> {
    if !(t.df > 0.0) {
        return Err(LasrError::Numeric(format!("degrees of freedom {} must be positive", t.df)));
    }
    Ok(t.t_values.iter().map(|&v| p_value(v, t.df, sided)).collect())
}

/// Normalized hat-row inner product between two fitted pixels (pixel
/// indices); `None` if either pixel has no fit.
pub fn hat_correlation(fit: &SmoothFit, a: usize, b: usize) -> Option<f64> {
    let op = &fit.operator;
    let row_of = |p: usize| (0..op.hat.n_rows()).find(|&k| op.target_pixel(k) == p);
    Some(op.hat.row_correlation(row_of(a)?, row_of(b)?))
}

/// Minimum normalized hat-row inner product over pairs of hat-row indices,
/// the covariance sign surrogate for positive regression dependence.
pub fn prds_covariance_check(fit: &SmoothFit, pairs: &[(usize, usize)]) -> f64 {
    pairs
        .iter()
        .map(|&(a, b)| fit.operator.hat.row_correlation(a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Smoothing and testing knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmConfig {
    pub h: f64,
    pub kernel: Kernel,
    /// Rim width; `None` means `ceil(h)`.
    pub rim: Option<usize>,
    pub fdr: FdrConfig,
    pub sided: Sidedness,
    pub trace: TraceMethod,
}

impl Default for SsmConfig {
    fn default() -> Self {
        SsmConfig {
            h: 3.0,
            kernel: Kernel::TruncatedGaussian,
            rim: None,
            fdr: FdrConfig::default(),
            sided: Sidedness::Greater,
            trace: TraceMethod::Auto,
        }
    }
}

impl SsmConfig {
    pub fn rim_width(&self) -> usize {
        self.rim.unwrap_or(self.h.ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(LasrError::Config(format!("bandwidth h = {} must be positive", self.h)));
        }
        self.fdr.validate()
    }

    /// Hat operator for a difference map's support.
    pub fn operator_for(&self, diff: &Frame) -> Result<LocalQuadratic> {
        let region = diff
            .mask()
            .map_or_else(|| vec![true; diff.len()], <[bool]>::to_vec);
        LocalQuadratic::build(&region, diff.rows(), diff.cols(), self.h, self.kernel, self.rim_width())
    }
}

/// Everything produced by one SSM pass.
#[derive(Debug, Clone)]
pub struct SsmOutput {
    pub fit: SmoothFit,
    pub tmap: TMap,
    pub pvalues: Vec<f64>,
    pub pmap: PMap,
}

/// Smooth a difference map, test every fitted pixel and threshold the
/// p-values at the configured FDR level. Padded rim pixels never receive a
/// statistic.
pub fn run_ssm(diff: &Frame, config: &SsmConfig) -> Result<SsmOutput> {
    config.validate()?;
    let op = Arc::new(config.operator_for(diff)?);
    run_ssm_with(op, diff, config)
}

/// [`run_ssm`] with a prebuilt operator (shared across maps on one region).
pub fn run_ssm_with(op: Arc<LocalQuadratic>, diff: &Frame, config: &SsmConfig) -> Result<SsmOutput> {
    config.validate()?;
    let fit = smooth_with(op, diff, config.trace)?;
    let tmap = t_map(&fit)?;
    let pvalues = p_map(&tmap, config.sided)?;
    let pmap = fdr_map(fit.rows, fit.cols, &pvalues, &config.fdr)?;
    Ok(SsmOutput { fit, tmap, pvalues, pmap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_hat_has_no_degrees_of_freedom() {
        let n = 5;
        let hat = HatOperator::from_rows(n, (0..n).collect(), (0..n).map(|i| vec![(i, 1.0)]).collect())
            .unwrap();
        let (d1, d2) = hat.residual_moments(TraceMethod::Exact);
        assert_eq!((d1, d2), (0.0, 0.0));
        assert!(df_from_moments(d1, d2).is_err());
    }

    #[test]
    fn global_mean_hat_moments() {
        let n = 12;
        let row: Vec<(usize, f64)> = (0..n).map(|j| (j, 1.0 / n as f64)).collect();
        let hat = HatOperator::from_rows(n, (0..n).collect(), vec![row; n]).unwrap();
        let (d1, d2) = hat.residual_moments(TraceMethod::Exact);
        assert!((d1 - 11.0).abs() < 1e-12 && (d2 - 11.0).abs() < 1e-12);
        assert!((df_from_moments(d1, d2).unwrap() - 11.0).abs() < 1e-12);
        // randomized probes are unbiased for a projection
        let (_, r2) = hat.residual_moments(TraceMethod::Randomized { probes: 400, seed: 1 });
        assert!((r2 - 11.0).abs() < 1.0, "{r2}");
    }

    #[test]
    fn zero_map_gives_zero_statistics_only_with_noise() {
        let f = Frame::signed(9, 9, vec![0.0; 81]).unwrap();
        let fit = local_quadratic_smooth(&f, 2.0, Kernel::TruncatedGaussian).unwrap();
        assert!(t_map(&fit).is_err());
    }
}
