use std::fmt;

use serde::{Serialize, Serializer};

use crate::model::{cross, ModelError, Orientation, PipelineConfig, SeriesMeta};
use crate::scalar::Scalar;

/// Why a series was refused.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FilterReason {
    NotAxial,
    WrongKvp,
    KernelNotAllowed,
    ThicknessTooLarge,
    NotOriginalPrimary,
    MissingTag(String),
    InconsistentSeries,
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterReason::NotAxial => f.write_str("NOT_AXIAL"),
            FilterReason::WrongKvp => f.write_str("WRONG_KVP"),
            FilterReason::KernelNotAllowed => f.write_str("KERNEL_NOT_ALLOWED"),
            FilterReason::ThicknessTooLarge => f.write_str("THICKNESS_TOO_LARGE"),
            FilterReason::NotOriginalPrimary => f.write_str("NOT_ORIGINAL_PRIMARY"),
            FilterReason::MissingTag(t) => write!(f, "MISSING_TAG({t})"),
            FilterReason::InconsistentSeries => f.write_str("INCONSISTENT_SERIES"),
        }
    }
}

impl Serialize for FilterReason {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Outcome of a series filter. `accepted` holds exactly when `reasons` is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterDecision {
    accepted: bool,
    reasons: Vec<FilterReason>,
}

impl FilterDecision {
    pub fn from_reasons(reasons: Vec<FilterReason>) -> Self {
        Self {
            accepted: reasons.is_empty(),
            reasons,
        }
    }

    pub fn accepted(&self) -> bool {
        self.accepted
    }

    pub fn reasons(&self) -> &[FilterReason] {
        &self.reasons
    }
}

/// True when the slice normal lies within `tolerance` (cosine) of the z axis.
pub fn is_axial<T: Scalar>(cosines: [T; 6], tolerance: T) -> Result<bool, ModelError> {
    let o = Orientation::from_cosines(cosines);
    o.check_unit()?;
    let n = cross(o.row, o.col);
    Ok(n[2].abs() >= tolerance)
}

const TAG_ORIENTATION: &str = "ImageOrientationPatient";
const TAG_KVP: &str = "KVP";
const TAG_IMAGE_TYPE: &str = "ImageType";
const TAG_THICKNESS: &str = "SliceThickness";
const TAG_MANUFACTURER: &str = "Manufacturer";
const TAG_KERNEL: &str = "ConvolutionKernel";

fn orientation_reason(meta: &SeriesMeta, config: &PipelineConfig) -> Option<FilterReason> {
    match meta.orientation {
        None => Some(FilterReason::MissingTag(TAG_ORIENTATION.into())),
        Some(c) => match is_axial(c, config.axial_tolerance) {
            Ok(true) => None,
            // Non-unit cosines cannot describe an axial acquisition either.
            Ok(false) | Err(_) => Some(FilterReason::NotAxial),
        },
    }
}

/// Aortic pipeline filter: orientation only.
pub fn aaq_series_filter(meta: &SeriesMeta, config: &PipelineConfig) -> FilterDecision {
    FilterDecision::from_reasons(orientation_reason(meta, config).into_iter().collect())
}

/// Density pipeline filter. Every violated rule is reported.
pub fn bmd_series_filter(meta: &SeriesMeta, config: &PipelineConfig) -> FilterDecision {
    let mut reasons = Vec::new();
    let missing = |t: &str| FilterReason::MissingTag(t.to_string());

    match &meta.image_type_flags {
        None => reasons.push(missing(TAG_IMAGE_TYPE)),
        Some(flags) => {
            let has = |f: &str| flags.iter().any(|x| x.trim().eq_ignore_ascii_case(f));
            if !(has("ORIGINAL") && has("PRIMARY")) {
                reasons.push(FilterReason::NotOriginalPrimary);
            }
        }
    }
    reasons.extend(orientation_reason(meta, config));
    match meta.kvp {
        None => reasons.push(missing(TAG_KVP)),
        Some(k) if k.round() != config.required_kvp as f64 => reasons.push(FilterReason::WrongKvp),
        Some(_) => {}
    }
    match meta.slice_thickness_mm {
        None => reasons.push(missing(TAG_THICKNESS)),
        Some(t) if t > config.max_slice_thickness_mm => {
            reasons.push(FilterReason::ThicknessTooLarge)
        }
        Some(_) => {}
    }
    if config.enforce_kernel {
        match (&meta.manufacturer, &meta.kernel) {
            (None, _) => reasons.push(missing(TAG_MANUFACTURER)),
            (_, None) => reasons.push(missing(TAG_KERNEL)),
            (Some(m), Some(k)) => {
                if !config.kernel_whitelist.iter().any(|r| r.matches(m, k)) {
                    reasons.push(FilterReason::KernelNotAllowed);
                }
            }
        }
    }
    FilterDecision::from_reasons(reasons)
}
