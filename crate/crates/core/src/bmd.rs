//! Vertebral trabecular density with internal two-point calibration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    LabelMask, ModelError, PatientFrame, PipelineConfig, RoiBox, RoiShape, Volume,
};
use crate::scalar::{median, Scalar};

/// Levels averaged for the density estimate.
pub const BMD_LEVELS: [&str; 4] = ["L1", "L2", "L3", "L4"];
const AIR_NEAR_MM: f64 = 20.0;
const AIR_DEPTH_MM: f64 = 20.0;
const AIR_WIDTH_MM: f64 = 50.0;

#[derive(Debug, Error)]
pub enum BmdError {
    #[error("vertebra {0} missing from spine mask")]
    VertebraMissing(String),
    #[error("ROI for {level} keeps {retained} voxels, {required} required")]
    RoiTooSmall {
        level: String,
        retained: usize,
        required: usize,
    },
    #[error("VAT mask is empty")]
    VatMissing,
    #[error("air ROI clipped by {clipped_fraction:.3} of its extent")]
    AirRoiOutOfField { clipped_fraction: f64 },
    #[error("mean air {mean_air_hu} HU outside QC window")]
    AirQcFail { mean_air_hu: f64 },
    #[error("VAT mean {mean_vat_hu} HU not above air mean {mean_air_hu} HU")]
    DegenerateCalibration { mean_vat_hu: f64, mean_air_hu: f64 },
    #[error("calibration slope {slope} outside plausible range")]
    ImplausibleCalibration { slope: f64 },
    #[error(transparent)]
    Geometry(#[from] ModelError),
}

impl BmdError {
    pub fn reason(&self) -> &'static str {
        match self {
            BmdError::VertebraMissing(_) => "VertebraMissing",
            BmdError::RoiTooSmall { .. } => "RoiTooSmall",
            BmdError::VatMissing => "VatMissing",
            BmdError::AirRoiOutOfField { .. } => "AirRoiOutOfField",
            BmdError::AirQcFail { .. } => "AirQcFail",
            BmdError::DegenerateCalibration { .. } => "DegenerateCalibration",
            BmdError::ImplausibleCalibration { .. } => "ImplausibleCalibration",
            BmdError::Geometry(e) => e.reason(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BmdFlag {
    Normal,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit<T> {
    pub slope: T,
    pub intercept: T,
    pub mean_vat_hu: T,
    pub mean_air_hu: T,
    pub air_qc_pass: bool,
}

/// Trabecular sample of one vertebra: the ellipsoid bounds plus the label
/// voxels retained inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct VertebraRoi {
    pub roi: RoiBox,
    pub voxels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraMeasurement<T> {
    pub roi: RoiBox,
    pub voxel_count: usize,
    pub raw_mean_hu: T,
    pub raw_median_hu: T,
    pub recal_mean_hu: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupplementaryScores<T> {
    pub dxa_equiv: T,
    pub t_score: T,
    pub z_score: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmdResult<T> {
    pub per_vertebra: BTreeMap<String, VertebraMeasurement<T>>,
    pub mean_recal_hu: T,
    pub calibration: CalibrationFit<T>,
    pub air_roi: RoiBox,
    pub vat_voxel_count: usize,
    pub flag: BmdFlag,
    pub supplementary: Option<SupplementaryScores<T>>,
}

/// Centroid-centred ellipsoid over `label`, semi-axes `roi_fraction / 2`
/// of the label's bounding-box extent, intersected with the label.
pub fn vertebral_roi(
    mask: &LabelMask,
    label: u8,
    level: &str,
    roi_fraction: f64,
    min_voxels: usize,
) -> Result<VertebraRoi, BmdError> {
    let dims = mask.dims();
    let mut n = 0usize;
    let mut sum = [0.0f64; 3];
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for idx in mask.voxels_of(label) {
        let c = dims.coords(idx);
        n += 1;
        for a in 0..3 {
            sum[a] += c[a] as f64;
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    if n == 0 {
        return Err(BmdError::VertebraMissing(level.to_string()));
    }
    let center = sum.map(|s| s / n as f64);
    let semi: [f64; 3] =
        std::array::from_fn(|a| roi_fraction / 2.0 * (hi[a] - lo[a] + 1) as f64);
    let limits = dims.as_array();
    let b_lo: [usize; 3] =
        std::array::from_fn(|a| (center[a] - semi[a]).ceil().max(0.0) as usize);
    let b_hi: [usize; 3] = std::array::from_fn(|a| {
        ((center[a] + semi[a]).floor() as usize + 1).min(limits[a])
    });
    let too_small = |retained| BmdError::RoiTooSmall {
        level: level.to_string(),
        retained,
        required: min_voxels,
    };
    if (0..3).any(|a| b_lo[a] >= b_hi[a]) {
        return Err(too_small(0));
    }

    let mut voxels = Vec::new();
    for k in b_lo[2]..b_hi[2] {
        for j in b_lo[1]..b_hi[1] {
            for i in b_lo[0]..b_hi[0] {
                let p = [i, j, k];
                let r2: f64 = (0..3)
                    .map(|a| ((p[a] as f64 - center[a]) / semi[a]).powi(2))
                    .sum();
                let idx = dims.index(i, j, k);
                if r2 <= 1.0 && mask.labels()[idx] == label {
                    voxels.push(idx);
                }
            }
        }
    }
    if voxels.len() < min_voxels {
        return Err(too_small(voxels.len()));
    }
    Ok(VertebraRoi {
        roi: RoiBox::new(b_lo, b_hi, RoiShape::Ellipsoid, 0.0)?,
        voxels,
    })
}

/// Mean HU over the listed voxel indices, accumulated in double precision.
pub fn roi_mean_hu<T: Scalar>(volume: &Volume<T>, voxels: &[usize]) -> Option<T> {
    if voxels.is_empty() {
        return None;
    }
    let data = volume.data();
    let s: f64 = voxels.iter().map(|&v| data[v].as_f64()).sum();
    Some(T::of(s / voxels.len() as f64))
}

fn roi_values<T: Scalar>(volume: &Volume<T>, voxels: &[usize]) -> Vec<T> {
    let data = volume.data();
    voxels.iter().map(|&v| data[v]).collect()
}

/// In-plane axis (0 = i, 1 = j) pointing most nearly along patient Y, and
/// whether increasing that index moves anteriorly.
fn anterior_axis<T: Scalar>(volume: &Volume<T>, frame: PatientFrame) -> (usize, bool) {
    let o = volume.orientation();
    let (ry, cy) = (o.row[1].as_f64(), o.col[1].as_f64());
    let (axis, y) = if cy.abs() >= ry.abs() { (1, cy) } else { (0, ry) };
    let anterior_is_plus_y = matches!(frame, PatientFrame::Ras);
    (axis, (y > 0.0) == anterior_is_plus_y)
}

/// Air box 20 mm anterior of the most anterior VAT voxel, 20 mm deep,
/// 50 mm wide about the VAT centroid, spanning every slice.
pub fn place_air_roi<T: Scalar>(
    vat: &LabelMask,
    volume: &Volume<T>,
    config: &PipelineConfig,
) -> Result<RoiBox, BmdError> {
    vat.check_aligned(volume)?;
    let dims = volume.dims();
    let (ap, plus_is_anterior) = anterior_axis(volume, config.patient_frame);
    let lat = 1 - ap;
    let spacing = volume.spacing();

    let mut n = 0usize;
    let mut lat_sum = 0.0f64;
    let mut ap_min = usize::MAX;
    let mut ap_max = 0usize;
    for (idx, &l) in vat.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let c = dims.coords(idx);
        n += 1;
        lat_sum += c[lat] as f64;
        ap_min = ap_min.min(c[ap]);
        ap_max = ap_max.max(c[ap]);
    }
    if n == 0 {
        return Err(BmdError::VatMissing);
    }

    let s_ap = spacing[ap].as_f64();
    let near = (AIR_NEAR_MM / s_ap).round() as i64;
    let far = ((AIR_NEAR_MM + AIR_DEPTH_MM) / s_ap).round() as i64;
    let (ap_lo, ap_hi) = if plus_is_anterior {
        let a = ap_max as i64;
        (a + near + 1, a + far + 1)
    } else {
        let a = ap_min as i64;
        (a - far, a - near)
    };
    let width = (AIR_WIDTH_MM / spacing[lat].as_f64()).round().max(1.0) as i64;
    let lat_lo = (lat_sum / n as f64 - width as f64 / 2.0).round() as i64;
    let lat_hi = lat_lo + width;

    let limits = dims.as_array();
    let clip = |lo: i64, hi: i64, lim: usize| (lo.max(0), hi.min(lim as i64));
    let mut req = [(0i64, 0i64); 2];
    req[ap] = (ap_lo, ap_hi);
    req[lat] = (lat_lo, lat_hi);
    let kept: [(i64, i64); 2] = std::array::from_fn(|a| clip(req[a].0, req[a].1, limits[a]));
    let full: i64 = req.iter().map(|(l, h)| h - l).product();
    let inside: i64 = kept.iter().map(|(l, h)| (h - l).max(0)).product();
    let clipped_fraction = 1.0 - inside as f64 / full as f64;
    if clipped_fraction > config.max_air_clip_fraction {
        return Err(BmdError::AirRoiOutOfField { clipped_fraction });
    }
    let lo = [kept[0].0 as usize, kept[1].0 as usize, 0];
    let hi = [kept[0].1 as usize, kept[1].1 as usize, dims.nz];
    Ok(RoiBox::new(lo, hi, RoiShape::Box, clipped_fraction)?)
}

/// Inclusive at both bounds.
pub fn air_qc(mean_air_hu: f64, config: &PipelineConfig) -> bool {
    (config.air_qc_lo..=config.air_qc_hi).contains(&mean_air_hu)
}

/// Line through (mean_vat, vat_ref) and (mean_air, air_ref).
pub fn two_point_calibration<T: Scalar>(
    mean_vat: T,
    mean_air: T,
    config: &PipelineConfig,
) -> Result<CalibrationFit<T>, BmdError> {
    if mean_vat <= mean_air || !(mean_vat - mean_air).is_finite() {
        return Err(BmdError::DegenerateCalibration {
            mean_vat_hu: mean_vat.as_f64(),
            mean_air_hu: mean_air.as_f64(),
        });
    }
    let vat_ref = T::of(config.vat_ref_hu);
    let air_ref = T::of(config.air_ref_hu);
    let slope = (vat_ref - air_ref) / (mean_vat - mean_air);
    let s = slope.as_f64();
    if !(config.calibration_slope_min..=config.calibration_slope_max).contains(&s) {
        return Err(BmdError::ImplausibleCalibration { slope: s });
    }
    Ok(CalibrationFit {
        slope,
        intercept: vat_ref - slope * mean_vat,
        mean_vat_hu: mean_vat,
        mean_air_hu: mean_air,
        air_qc_pass: air_qc(mean_air.as_f64(), config),
    })
}

pub fn recalibrate<T: Scalar>(hu: T, fit: &CalibrationFit<T>) -> T {
    fit.slope * hu + fit.intercept
}

/// Low strictly below the threshold.
pub fn classify(mean_recal_hu: f64, config: &PipelineConfig) -> BmdFlag {
    if mean_recal_hu < config.bmd_hu_threshold {
        BmdFlag::Low
    } else {
        BmdFlag::Normal
    }
}

/// ROI extraction, air/VAT calibration and thresholding in sequence.
pub fn run_bmd<T: Scalar>(
    volume: &Volume<T>,
    spine: &LabelMask,
    vat: &LabelMask,
    config: &PipelineConfig,
) -> Result<BmdResult<T>, BmdError> {
    spine.check_aligned(volume)?;
    vat.check_aligned(volume)?;

    let mut rois = Vec::with_capacity(BMD_LEVELS.len());
    for level in BMD_LEVELS {
        let label = spine
            .label_of(level)
            .ok_or_else(|| BmdError::VertebraMissing(level.to_string()))?;
        let r = vertebral_roi(spine, label, level, config.roi_fraction, config.min_roi_voxels)?;
        rois.push((level, r));
    }

    let vat_voxels: Vec<usize> = vat
        .labels()
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l != 0).then_some(i))
        .collect();
    let mean_vat = roi_mean_hu(volume, &vat_voxels).ok_or(BmdError::VatMissing)?;
    let air_roi = place_air_roi(vat, volume, config)?;
    let dims = volume.dims();
    let mut air_voxels = Vec::with_capacity(air_roi.box_voxels());
    for k in air_roi.lo[2]..air_roi.hi[2] {
        for j in air_roi.lo[1]..air_roi.hi[1] {
            for i in air_roi.lo[0]..air_roi.hi[0] {
                air_voxels.push(dims.index(i, j, k));
            }
        }
    }
    let mean_air = roi_mean_hu(volume, &air_voxels).expect("air ROI is non-empty");
    if !air_qc(mean_air.as_f64(), config) {
        return Err(BmdError::AirQcFail {
            mean_air_hu: mean_air.as_f64(),
        });
    }
    let calibration = two_point_calibration(mean_vat, mean_air, config)?;

    let mut per_vertebra = BTreeMap::new();
    let mut recal_sum = 0.0f64;
    for (level, r) in rois {
        let raw_mean_hu = roi_mean_hu(volume, &r.voxels).expect("ROI is non-empty");
        let raw_median_hu = median(&roi_values(volume, &r.voxels)).expect("ROI is non-empty");
        let recal_mean_hu = recalibrate(raw_mean_hu, &calibration);
        recal_sum += recal_mean_hu.as_f64();
        per_vertebra.insert(
            level.to_string(),
            VertebraMeasurement {
                roi: r.roi,
                voxel_count: r.voxels.len(),
                raw_mean_hu,
                raw_median_hu,
                recal_mean_hu,
            },
        );
    }
    let mean_recal_hu = T::of(recal_sum / BMD_LEVELS.len() as f64);
    let supplementary = config.score_conversion.map(|c| {
        let dxa = c.slope * mean_recal_hu.as_f64() + c.offset;
        SupplementaryScores {
            dxa_equiv: T::of(dxa),
            z_score: T::of(dxa),
            t_score: T::of(dxa + c.t_z_factor),
        }
    });
    Ok(BmdResult {
        per_vertebra,
        mean_recal_hu,
        calibration,
        air_roi,
        vat_voxel_count: vat_voxels.len(),
        flag: classify(mean_recal_hu.as_f64(), config),
        supplementary,
    })
}
