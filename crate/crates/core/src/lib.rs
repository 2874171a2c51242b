//! LASR: longitudinal analysis with self-registration of pressure-map movies.
//!
//! The crate follows the analysis flow stage by stage:
//!
//! 1. [`segmentation`]: normal-mixture fit and the misclassification-optimal
//!    threshold separating the sitting region from background noise.
//! 2. [`registration`]: midline-and-endpoint rigid self-registration of frames
//!    and correlation-based lag alignment of stimulation movies.
//! 3. [`ssm`]: difference maps, bivariate local quadratic smoothing, t-type
//!    statistics and FDR-controlled significance maps.
//! 4. [`pipeline`]: orchestration, run reports and the `lasr` CLI.
//!
//! [`synthgen`] builds deterministic phantom sessions with known ground truth,
//! and [`frames`] holds the data model and file formats.

pub mod error;
pub mod frames;
pub mod pipeline;
pub mod registration;
pub mod segmentation;
pub mod ssm;
pub mod synthgen;

pub use error::{LasrError, Result};
pub use frames::{Frame, Movie, SegmentTag, SessionLayout};
