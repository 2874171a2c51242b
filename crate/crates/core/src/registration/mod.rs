//! Spatial self-registration of a frame by its midline and endpoint, rigid
//! resampling, registration error, and temporal lag alignment of movies.

mod midline;
mod rigid;
mod temporal;

pub use midline::{
    column_midpoints, fit_midline, midpoint_formula, srlp_params, srlp_register,
    srlp_register_to, Midpoint, MidlineFit, ScanAxis, SrlpPose,
};
pub use rigid::{apply_rigid, registration_error, wrap_angle, Interpolation, Point, RigidTransform};
pub use temporal::{
    align_movies, frame_correlation, icr_lag, CorrelationDomain, IcrConfig, LagAlignment,
    ShiftDirection,
};
