//! Student-t tail probabilities and step-up false discovery rate control.

use statrs::function::beta::beta_reg;

use crate::error::{LasrError, Result};

/// Alternative hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sidedness {
    /// `m(x) > 0`.
    #[default]
    Greater,
    /// `m(x) != 0`; `p = 2 * min(upper, lower)`.
    TwoSided,
}

impl Sidedness {
    pub fn as_str(self) -> &'static str {
        match self {
            Sidedness::Greater => "one-sided",
            Sidedness::TwoSided => "two-sided",
        }
    }
}

/// `P(T_df > t)`.
pub fn t_upper_tail(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    // P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    let x = df / (df + t * t);
    let both = beta_reg(df / 2.0, 0.5, x);
    if t > 0.0 {
        0.5 * both
    } else {
        1.0 - 0.5 * both
    }
}

pub fn p_value(t: f64, df: f64, sided: Sidedness) -> f64 {
    match sided {
        Sidedness::Greater => t_upper_tail(t, df),
        Sidedness::TwoSided => {
            if t.is_nan() {
                return f64::NAN;
            }
            (2.0 * t_upper_tail(t.abs(), df)).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdrMode {
    /// Benjamini-Hochberg.
    #[default]
    Bh,
    /// Benjamini-Yekutieli: thresholds divided by `sum_{i<=m} 1/i`.
    By,
}

impl FdrMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FdrMode::Bh => "bh",
            FdrMode::By => "by",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bh" => Some(FdrMode::Bh),
            "by" => Some(FdrMode::By),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdrConfig {
    pub q: f64,
    pub mode: FdrMode,
    /// Pointwise level; reserved.
    pub alpha: f64,
}

impl Default for FdrConfig {
    fn default() -> Self {
        FdrConfig {
            q: 0.05,
            mode: FdrMode::Bh,
            alpha: 0.05,
        }
    }
}

impl FdrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(LasrError::Config(format!(
                "FDR level q = {} must lie strictly between 0 and 1",
                self.q
            )));
        }
        Ok(())
    }
}

/// Outcome of the step-up procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct StepUp {
    /// Per input p-value.
    pub rejected: Vec<bool>,
    pub n_rejected: usize,
    /// `k q / (m c)`, or 0 without rejections.
    pub critical_p: f64,
}

fn harmonic(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

/// Step-up threshold for rank `i` (1-based) of `m`.
fn step_threshold(i: usize, m: usize, q: f64, c: f64) -> f64 {
    i as f64 * q / (m as f64 * c)
}

/// Step-up FDR procedure over `pvalues`.
pub fn bh_adjust(pvalues: &[f64], config: &FdrConfig) -> Result<StepUp> {
    config.validate()?;
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(LasrError::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let m = pvalues.len();
    let c = match config.mode {
        FdrMode::Bh => 1.0,
        FdrMode::By => harmonic(m),
    };
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (1..=m)
        .rev()
        .find(|&i| sorted[i - 1] <= step_threshold(i, m, config.q, c))
        .unwrap_or(0);
    if k == 0 {
        return Ok(StepUp {
            rejected: vec![false; m],
            n_rejected: 0,
            critical_p: 0.0,
        });
    }
    let cut = sorted[k - 1];
    let rejected: Vec<bool> = pvalues.iter().map(|p| *p <= cut).collect();
    Ok(StepUp {
        n_rejected: rejected.iter().filter(|r| **r).count(),
        rejected,
        critical_p: step_threshold(k, m, config.q, c),
    })
}

/// FDR-thresholded map.
#[derive(Debug, Clone, PartialEq)]
pub struct PMap {
    pub rows: usize,
    pub cols: usize,
    /// `1 - p` at rejected pixels, 0 elsewhere.
    pub values: Vec<f64>,
    pub n_rejected: usize,
    pub critical_p: f64,
}

/// Apply the step-up procedure to the finite entries of a p-value grid and
/// build the map.
pub fn fdr_map(rows: usize, cols: usize, pvalues: &[f64], config: &FdrConfig) -> Result<PMap> {
    if pvalues.len() != rows * cols {
        return Err(LasrError::invalid("p-value grid does not match its dimensions"));
    }
    let idx: Vec<usize> = (0..pvalues.len()).filter(|&i| !pvalues[i].is_nan()).collect();
    let ps: Vec<f64> = idx.iter().map(|&i| pvalues[i]).collect();
    let step = bh_adjust(&ps, config)?;
    let mut values = vec![0.0; rows * cols];
    for (k, &i) in idx.iter().enumerate() {
        if step.rejected[k] {
            values[i] = 1.0 - pvalues[i];
        }
    }
    Ok(PMap {
        rows,
        cols,
        values,
        n_rejected: step.n_rejected,
        critical_p: step.critical_p,
    })
}
