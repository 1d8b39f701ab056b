//! Synthesis toolkit for 3D radio-map datasets.
//!
//! The pipeline runs bottom-up through the modules below:
//!
//! 1. [`env`] generates or loads a voxelized building environment.
//! 2. [`propagate2d`] produces per-height 2D base predictions with an
//!    occlusion-aware log-distance oracle (or imports external slices).
//! 3. [`channel_model`] evaluates the four-coefficient target model that
//!    corrects the base prediction with 3D-distance and polarization terms.
//! 4. [`fitting`] determines coefficients by least squares from masked
//!    measurements, aggregates them into per-coefficient bounds and
//!    oversamples new target models.
//! 5. [`synthesis`] renders single-transmitter maps, composes them in
//!    linear power and normalizes them dataset-wide.
//! 6. [`sampling`] draws sparse measurements and encodes transmitters as
//!    Gaussian heatmaps.
//! 7. [`metrics`] scores predicted volumes (RMSE, NMSE, PSNR, SSIM).
//! 8. [`format`] and [`dataset`] handle the R3DM binary format, the
//!    manifest and the deterministic dataset builder.

pub mod channel_model;
pub mod dataset;
pub mod env;
pub mod error;
pub mod fitting;
pub mod format;
pub mod grid;
pub mod metrics;
pub mod propagate2d;
pub mod sampling;
pub mod seed;
pub mod synthesis;

pub use channel_model::{Point3, TargetCoefficients};
pub use error::{Error, Result};
pub use grid::{GridDims, Voxel};
