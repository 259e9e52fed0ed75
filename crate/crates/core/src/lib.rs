//! Deterministic CT quantification: maximal abdominal aortic diameter from an
//! aorta mask, opportunistic vertebral density flagging with a VAT/air
//! two-point HU calibration, synthetic phantoms, and the agreement and
//! diagnostic-accuracy statistics used to validate both measurements.
//!
//! Geometry and statistics are generic over a floating-point [`Scalar`]
//! (`f32` or `f64`). The aliases at the crate root fix the scalar to `f64`,
//! which is what the command-line front end uses.

pub mod aaq;
pub mod bmd;
pub mod error;
pub mod ingest;
pub mod model;
pub mod phantom;
pub mod scalar;
pub mod stats;

pub use error::Error;
pub use scalar::Scalar;

pub use model::{
    Dims, LabelMask, Orientation, PatientFrame, PipelineConfig, RoiBox, RoiShape, SeriesMeta,
};

/// Hounsfield-unit volume with `f64` voxels and geometry.
pub type Volume = model::Volume<f64>;
/// Single-precision volume, half the memory of [`Volume`].
pub type Volume32 = model::Volume<f32>;

pub type EllipseFit = aaq::EllipseFit<f64>;
pub type DiameterReport = aaq::DiameterReport<f64>;
pub type CalibrationFit = bmd::CalibrationFit<f64>;
pub type BmdResult = bmd::BmdResult<f64>;
pub type CylinderSpec = phantom::CylinderSpec<f64>;
pub type BmdPhantomSpec = phantom::BmdPhantomSpec<f64>;
pub type IntervalEstimate = stats::IntervalEstimate<f64>;
pub type PairedMeasurements = stats::PairedMeasurements<f64>;
