//! Separation of the sitting region from background noise.
//!
//! The positive intensities of one reference frame are modelled as a normal
//! mixture; the threshold that minimizes the misclassification probability
//! between the lowest component and the rest defines the sitting region, which
//! is then applied to every frame of the movie.

mod mixture;
mod threshold;

pub use mixture::{fit_mixture, select_model, EmControl, InitSpec, MixtureFit, MixtureModel};
pub use threshold::{
    balance, optimal_threshold, pmc, pmc_oracle, threshold_grid, SegmentationResult,
    ThresholdMethod,
};

use crate::error::{LasrError, Result};
use crate::frames::{Frame, Movie};

/// Zero every pixel at or below `threshold`; the mask marks the survivors.
/// Exact zeros are always background.
pub fn segment_frame(frame: &Frame, threshold: f64) -> Frame {
    let keep: Vec<bool> = frame
        .values()
        .iter()
        .map(|&v| v > threshold && v > 0.0)
        .collect();
    let values = frame
        .values()
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| if k { v } else { 0.0 })
        .collect();
    Frame::from_parts(frame.rows(), frame.cols(), values, Some(keep))
}

/// Knobs for movie segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    /// Component counts tried by BIC.
    pub candidate_ms: Vec<usize>,
    pub init: InitSpec,
    pub control: EmControl,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            candidate_ms: vec![2, 3],
            init: InitSpec::default(),
            control: EmControl::default(),
        }
    }
}

/// Fit the mixture to a frame's strictly positive values and derive the
/// threshold.
pub fn fit_threshold(frame: &Frame, config: &SegmentConfig) -> Result<SegmentationResult> {
    let samples: Vec<f64> = frame.values().iter().copied().filter(|v| *v > 0.0).collect();
    if samples.is_empty() {
        return Err(LasrError::Degenerate("frame has no positive readings".into()));
    }
    let fit = select_model(&samples, &config.candidate_ms, &config.init, config.control)?;
    optimal_threshold(&fit.model)
}

/// Segment a movie from one reference frame.
///
/// The sitting region is the reference frame's supra-threshold set. Every
/// frame keeps its positive values inside that region and is zero outside;
/// each frame's mask equals its positive pixels.
pub fn segment_movie(
    movie: &Movie,
    reference: usize,
    config: &SegmentConfig,
) -> Result<(SegmentationResult, Movie)> {
    if reference >= movie.len() {
        return Err(LasrError::invalid(format!(
            "reference frame {reference} out of range for {} frames",
            movie.len()
        )));
    }
    let result = fit_threshold(movie.frame(reference), config)?;
    let region = segment_frame(movie.frame(reference), result.threshold)
        .mask()
        .unwrap()
        .to_vec();
    let frames = movie
        .frames()
        .iter()
        .map(|f| apply_region(f, &region))
        .collect();
    Ok((result, Movie::new(frames, movie.fps())?))
}

/// Restrict a frame to `region`, keeping `mask == (value > 0)`.
pub fn apply_region(frame: &Frame, region: &[bool]) -> Frame {
    let mut values = frame.values().to_vec();
    let mut mask = vec![false; values.len()];
    for ((v, m), &r) in values.iter_mut().zip(mask.iter_mut()).zip(region) {
        if r && *v > 0.0 {
            *m = true;
        } else {
            *v = 0.0;
        }
    }
    Frame::from_parts(frame.rows(), frame.cols(), values, Some(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_is_zeroed() {
        let f = Frame::new(1, 2, vec![5.0, 20.0]).unwrap();
        let s = segment_frame(&f, 12.7);
        assert_eq!(s.values(), &[0.0, 20.0]);
        assert_eq!(s.mask().unwrap(), &[false, true]);
    }

    #[test]
    fn all_background_gives_empty_mask() {
        let f = Frame::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = segment_frame(&f, 4.0);
        assert!(s.values().iter().all(|v| *v == 0.0));
        assert!(s.mask().unwrap().iter().all(|m| !m));
    }

    #[test]
    fn zero_threshold_keeps_positive_frame() {
        let f = Frame::new(2, 2, vec![0.5, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(segment_frame(&f, 0.0).values(), f.values());
        // zeros stay background even under a negative threshold
        let z = Frame::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(segment_frame(&z, -1.0).mask().unwrap(), &[false, true]);
    }

    #[test]
    fn segmentation_is_idempotent() {
        let f = Frame::new(2, 3, vec![0.0, 3.0, 9.0, 12.0, 12.5, 40.0]).unwrap();
        let once = segment_frame(&f, 12.0);
        assert_eq!(segment_frame(&once, 12.0), once);
    }
}
