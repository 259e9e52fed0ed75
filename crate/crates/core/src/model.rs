//! Shared domain types: volumes, label masks, regions of interest, series
//! metadata and pipeline configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

const UNIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("voxel index {index:?} outside volume dims {dims}")]
    IndexOutOfBounds { index: [usize; 3], dims: Dims },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("mask dims {mask} do not match volume dims {volume}")]
    DimsMismatch { volume: Dims, mask: Dims },
    #[error("mask spacing {mask:?} does not match volume spacing {volume:?}")]
    SpacingMismatch { volume: [f64; 3], mask: [f64; 3] },
    #[error("voxel buffer holds {got} values, dims need {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl ModelError {
    pub fn reason(&self) -> &'static str {
        match self {
            ModelError::IndexOutOfBounds { .. } => "IndexError",
            ModelError::InvalidGeometry(_) => "ValidationError",
            ModelError::DimsMismatch { .. } | ModelError::SpacingMismatch { .. } => {
                "GeometryMismatch"
            }
            ModelError::DataLength { .. } => "ValidationError",
            ModelError::InvalidConfig(_) => "ConfigError",
        }
    }
}

/// Voxel counts along (i, j, k). Linear order is i fastest, then j, then k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        i < self.nx && j < self.ny && k < self.nz
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.nx;
        let rest = idx / self.nx;
        [i, rest % self.ny, rest / self.ny]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Row and column direction cosines of the slice plane in patient space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation<T> {
    pub row: [T; 3],
    pub col: [T; 3],
}

impl<T: Scalar> Orientation<T> {
    pub fn identity() -> Self {
        Self {
            row: [T::one(), T::zero(), T::zero()],
            col: [T::zero(), T::one(), T::zero()],
        }
    }

    /// From the six values of Image Orientation (Patient).
    pub fn from_cosines(c: [T; 6]) -> Self {
        Self {
            row: [c[0], c[1], c[2]],
            col: [c[3], c[4], c[5]],
        }
    }

    pub fn cosines(&self) -> [T; 6] {
        [
            self.row[0], self.row[1], self.row[2], self.col[0], self.col[1], self.col[2],
        ]
    }

    /// Slice normal, row × col.
    pub fn normal(&self) -> [T; 3] {
        cross(self.row, self.col)
    }

    pub fn check_unit(&self) -> Result<(), ModelError> {
        for (name, v) in [("row", self.row), ("column", self.col)] {
            let n = norm(v).as_f64();
            if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(ModelError::InvalidGeometry(format!(
                    "{name} direction cosine has norm {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.check_unit()?;
        let d = dot(self.row, self.col).as_f64();
        if d.abs() > UNIT_TOLERANCE {
            return Err(ModelError::InvalidGeometry(format!(
                "row and column cosines not orthogonal (dot = {d})"
            )));
        }
        Ok(())
    }
}

pub(crate) fn cross<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm<T: Scalar>(a: [T; 3]) -> T {
    dot(a, a).sqrt()
}

/// A CT volume in Hounsfield units with its physical grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    spacing: [T; 3],
    origin: [T; 3],
    orientation: Orientation<T>,
    data: Vec<T>,
}

impl<T: Scalar> Volume<T> {
    pub fn new(
        dims: Dims,
        spacing: [T; 3],
        origin: [T; 3],
        orientation: Orientation<T>,
        data: Vec<T>,
    ) -> Result<Self, ModelError> {
        if dims.nx == 0 || dims.ny == 0 || dims.nz == 0 {
            return Err(ModelError::InvalidGeometry(format!("empty dims {dims}")));
        }
        if spacing.iter().any(|s| !(s.as_f64() > 0.0) || !s.is_finite()) {
            return Err(ModelError::InvalidGeometry(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(ModelError::InvalidGeometry("non-finite origin".into()));
        }
        orientation.validate()?;
        if data.len() != dims.len() {
            return Err(ModelError::DataLength {
                expected: dims.len(),
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::InvalidGeometry(format!(
                "non-finite HU value at voxel {:?}",
                dims.coords(pos)
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            orientation,
            data,
        })
    }

    /// Identity orientation, origin at zero.
    pub fn from_data(dims: Dims, spacing: [T; 3], data: Vec<T>) -> Result<Self, ModelError> {
        Self::new(
            dims,
            spacing,
            [T::zero(); 3],
            Orientation::identity(),
            data,
        )
    }

    pub fn filled(dims: Dims, spacing: [T; 3], value: T) -> Result<Self, ModelError> {
        Self::from_data(dims, spacing, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [T; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [T; 3] {
        self.origin
    }

    pub fn orientation(&self) -> Orientation<T> {
        self.orientation
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Option<T> {
        self.dims
            .contains(i, j, k)
            .then(|| self.data[self.dims.index(i, j, k)])
    }

    /// Patient-space position of a voxel center, in mm.
    pub fn world_from_voxel(&self, index: [usize; 3]) -> Result<[T; 3], ModelError> {
        let [i, j, k] = index;
        if !self.dims.contains(i, j, k) {
            return Err(ModelError::IndexOutOfBounds {
                index,
                dims: self.dims,
            });
        }
        let n = self.orientation.normal();
        let (row, col) = (self.orientation.row, self.orientation.col);
        let di = T::of_usize(i) * self.spacing[0];
        let dj = T::of_usize(j) * self.spacing[1];
        let dk = T::of_usize(k) * self.spacing[2];
        let mut out = self.origin;
        for a in 0..3 {
            out[a] = out[a] + di * row[a] + dj * col[a] + dk * n[a];
        }
        Ok(out)
    }

    /// Applies `f` to every voxel, keeping the geometry.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> Result<Self, ModelError> {
        Self::new(
            self.dims,
            self.spacing,
            self.origin,
            self.orientation,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Slices `z_lo..=z_hi`, origin moved to the first kept slice.
    pub fn crop_z(&self, z_lo: usize, z_hi: usize) -> Result<Self, ModelError> {
        if z_lo > z_hi || z_hi >= self.dims.nz {
            return Err(ModelError::InvalidGeometry(format!(
                "crop range ({z_lo}, {z_hi}) outside 0..{}",
                self.dims.nz
            )));
        }
        let sl = self.dims.slice_len();
        let data = self.data[z_lo * sl..(z_hi + 1) * sl].to_vec();
        let origin = self.world_from_voxel([0, 0, z_lo])?;
        Self::new(
            Dims::new(self.dims.nx, self.dims.ny, z_hi - z_lo + 1),
            self.spacing,
            origin,
            self.orientation,
            data,
        )
    }
}

/// Handedness convention of patient coordinates. Anterior is decreasing Y in
/// LPS and increasing Y in RAS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PatientFrame {
    #[default]
    Lps,
    Ras,
}

impl FromStr for PatientFrame {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LPS" => Ok(PatientFrame::Lps),
            "RAS" => Ok(PatientFrame::Ras),
            other => Err(ModelError::InvalidConfig(format!(
                "unknown patient frame {other:?}"
            ))),
        }
    }
}

/// Integer-labelled voxel grid aligned with a [`Volume`]. Label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    dims: Dims,
    labels: Vec<u8>,
    label_names: BTreeMap<u8, String>,
    spacing: Option<[f64; 3]>,
}

impl LabelMask {
    pub fn new(
        dims: Dims,
        labels: Vec<u8>,
        label_names: BTreeMap<u8, String>,
    ) -> Result<Self, ModelError> {
        if labels.len() != dims.len() {
            return Err(ModelError::DataLength {
                expected: dims.len(),
                got: labels.len(),
            });
        }
        if label_names.contains_key(&0) {
            return Err(ModelError::InvalidGeometry(
                "label 0 is reserved for background".into(),
            ));
        }
        Ok(Self {
            dims,
            labels,
            label_names,
            spacing: None,
        })
    }

    pub fn empty(dims: Dims, label_names: BTreeMap<u8, String>) -> Result<Self, ModelError> {
        Self::new(dims, vec![0; dims.len()], label_names)
    }

    /// Records the grid spacing the mask was stored with, for alignment checks.
    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Self {
        self.spacing = Some(spacing);
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn label_names(&self) -> &BTreeMap<u8, String> {
        &self.label_names
    }

    pub fn set_label_names(&mut self, names: BTreeMap<u8, String>) {
        self.label_names = names;
    }

    pub fn spacing(&self) -> Option<[f64; 3]> {
        self.spacing
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Option<u8> {
        self.dims
            .contains(i, j, k)
            .then(|| self.labels[self.dims.index(i, j, k)])
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, label: u8) {
        let idx = self.dims.index(i, j, k);
        self.labels[idx] = label;
    }

    /// Label value carrying `name` (case-insensitive).
    pub fn label_of(&self, name: &str) -> Option<u8> {
        self.label_names
            .iter()
            .find(|(_, n)| n.eq_ignore_ascii_case(name))
            .map(|(&l, _)| l)
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Linear indices of voxels carrying `label`.
    pub fn voxels_of(&self, label: u8) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == label)
            .map(|(i, _)| i)
    }

    /// Any-nonzero mask of axial slice `k`, row-major with i fastest.
    pub fn slice_foreground(&self, k: usize) -> Vec<bool> {
        let sl = self.dims.slice_len();
        self.labels[k * sl..(k + 1) * sl]
            .iter()
            .map(|&l| l != 0)
            .collect()
    }

    /// Rejects a mask whose grid differs from `volume`'s.
    pub fn check_aligned<T: Scalar>(&self, volume: &Volume<T>) -> Result<(), ModelError> {
        if self.dims != volume.dims() {
            return Err(ModelError::DimsMismatch {
                volume: volume.dims(),
                mask: self.dims,
            });
        }
        if let Some(ms) = self.spacing {
            let vs = volume.spacing().map(|s| s.as_f64());
            let off = ms
                .iter()
                .zip(vs.iter())
                .any(|(a, b)| (a - b).abs() > 1e-3 * b.abs().max(1.0));
            if off {
                return Err(ModelError::SpacingMismatch {
                    volume: vs,
                    mask: ms,
                });
            }
        }
        Ok(())
    }
}

/// Standard names for a lumbar spine mask: 1→L1 … 5→L5.
pub fn lumbar_label_names() -> BTreeMap<u8, String> {
    (1..=5u8).map(|l| (l, format!("L{l}"))).collect()
}

/// Single foreground label named `name`.
pub fn single_label_names(name: &str) -> BTreeMap<u8, String> {
    BTreeMap::from([(1u8, name.to_string())])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoiShape {
    Box,
    /// Ellipsoid inscribed in the box.
    Ellipsoid,
}

/// Axis-aligned voxel region, `lo` inclusive and `hi` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub shape: RoiShape,
    /// Fraction of the requested box that fell outside the volume.
    pub clipped_fraction: f64,
}

impl RoiBox {
    pub fn new(
        lo: [usize; 3],
        hi: [usize; 3],
        shape: RoiShape,
        clipped_fraction: f64,
    ) -> Result<Self, ModelError> {
        if (0..3).any(|a| lo[a] >= hi[a]) {
            return Err(ModelError::InvalidGeometry(format!(
                "ROI lo {lo:?} not below hi {hi:?}"
            )));
        }
        if !(0.0..=1.0).contains(&clipped_fraction) {
            return Err(ModelError::InvalidGeometry(format!(
                "clipped fraction {clipped_fraction} outside [0, 1]"
            )));
        }
        Ok(Self {
            lo,
            hi,
            shape,
            clipped_fraction,
        })
    }

    pub fn extent(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    pub fn box_voxels(&self) -> usize {
        self.extent().iter().product()
    }

    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        let p = [i, j, k];
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }
}

/// Acquisition metadata driving the series filters. Absent tags are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub kvp: Option<f64>,
    pub kernel: Option<String>,
    pub manufacturer: Option<String>,
    pub slice_thickness_mm: Option<f64>,
    pub image_type_flags: Option<BTreeSet<String>>,
    pub orientation: Option<[f64; 6]>,
    pub series_uid: Option<String>,
    #[serde(default)]
    pub subgroup_keys: BTreeMap<String, String>,
}

impl SeriesMeta {
    pub fn validate(&self) -> Result<(), ModelError> {
        if let Some(k) = self.kvp {
            if !(k > 0.0) {
                return Err(ModelError::InvalidGeometry(format!("kVp must be > 0, got {k}")));
            }
        }
        if let Some(t) = self.slice_thickness_mm {
            if !(t > 0.0) {
                return Err(ModelError::InvalidGeometry(format!(
                    "slice thickness must be > 0, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// One (manufacturer, kernel) pair allowed by the density pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelRule {
    pub manufacturer: String,
    pub kernel: String,
}

impl KernelRule {
    pub fn new(manufacturer: &str, kernel: &str) -> Self {
        Self {
            manufacturer: manufacturer.to_string(),
            kernel: kernel.to_string(),
        }
    }

    /// Manufacturer compares case-insensitively, kernel exactly; both trimmed.
    pub fn matches(&self, manufacturer: &str, kernel: &str) -> bool {
        self.manufacturer
            .trim()
            .eq_ignore_ascii_case(manufacturer.trim())
            && self.kernel.trim() == kernel.trim()
    }
}

/// Soft reconstruction kernels accepted for density measurement.
pub fn default_kernel_whitelist() -> Vec<KernelRule> {
    const TABLE: &[(&str, &[&str])] = &[
        ("GE MEDICAL SYSTEMS", &["STANDARD"]),
        ("Philips", &["B", "C", "SB"]),
        (
            "SIEMENS",
            &[
                "B20f", "B30f", "B31f", "B40f", "Bf37f", "Br38f", "Br40d", "I30f", "I40f",
            ],
        ),
        ("TOSHIBA", &["FC02", "FC07", "FC08"]),
    ];
    TABLE
        .iter()
        .flat_map(|(m, ks)| ks.iter().map(move |k| KernelRule::new(m, k)))
        .collect()
}

/// Linear map from recalibrated HU to supplementary DXA-like scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConversion {
    pub slope: f64,
    pub offset: f64,
    pub t_z_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub bmd_hu_threshold: f64,
    pub air_qc_lo: f64,
    pub air_qc_hi: f64,
    pub vat_ref_hu: f64,
    pub air_ref_hu: f64,
    pub axial_tolerance: f64,
    pub kernel_whitelist: Vec<KernelRule>,
    pub enforce_kernel: bool,
    pub max_slice_thickness_mm: f64,
    pub required_kvp: u32,
    pub lumbar_crop_margin_mm: f64,
    pub roi_fraction: f64,
    pub min_roi_voxels: usize,
    pub calibration_slope_min: f64,
    pub calibration_slope_max: f64,
    pub max_air_clip_fraction: f64,
    pub slice_gap_tolerance: f64,
    pub patient_frame: PatientFrame,
    pub score_conversion: Option<ScoreConversion>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bmd_hu_threshold: 300.0,
            air_qc_lo: -1050.0,
            air_qc_hi: -950.0,
            vat_ref_hu: -95.0,
            air_ref_hu: -1000.0,
            axial_tolerance: 0.999,
            kernel_whitelist: default_kernel_whitelist(),
            enforce_kernel: true,
            max_slice_thickness_mm: 5.0,
            required_kvp: 120,
            lumbar_crop_margin_mm: 0.0,
            roi_fraction: 0.4,
            min_roi_voxels: 50,
            calibration_slope_min: 0.5,
            calibration_slope_max: 2.0,
            max_air_clip_fraction: 0.5,
            slice_gap_tolerance: 0.10,
            patient_frame: PatientFrame::Lps,
            score_conversion: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if !(self.air_qc_lo < self.air_qc_hi) {
            return bad(format!(
                "air_qc_lo {} must be below air_qc_hi {}",
                self.air_qc_lo, self.air_qc_hi
            ));
        }
        if !(self.vat_ref_hu > self.air_ref_hu) {
            return bad(format!(
                "vat_ref_hu {} must exceed air_ref_hu {}",
                self.vat_ref_hu, self.air_ref_hu
            ));
        }
        if !(self.roi_fraction > 0.0 && self.roi_fraction < 1.0) {
            return bad(format!("roi_fraction {} outside (0, 1)", self.roi_fraction));
        }
        if !(self.axial_tolerance > 0.0 && self.axial_tolerance <= 1.0) {
            return bad(format!(
                "axial_tolerance {} outside (0, 1]",
                self.axial_tolerance
            ));
        }
        if !(self.calibration_slope_min > 0.0
            && self.calibration_slope_min < self.calibration_slope_max)
        {
            return bad("calibration slope bounds must satisfy 0 < min < max".into());
        }
        if self.max_slice_thickness_mm <= 0.0 || self.required_kvp == 0 {
            return bad("slice thickness limit and kVp must be positive".into());
        }
        if self.lumbar_crop_margin_mm < 0.0 {
            return bad("lumbar_crop_margin_mm must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.max_air_clip_fraction)
            || !(self.slice_gap_tolerance > 0.0)
        {
            return bad("clip fraction must lie in [0, 1] and gap tolerance be > 0".into());
        }
        Ok(())
    }

    /// Parses the flat `key = value` config format. Lines starting with `#`
    /// are comments. `kernel_whitelist = MANUFACTURER | KERNEL` may repeat;
    /// its first occurrence replaces the built-in list. Unknown keys fail.
    pub fn from_kv_text(text: &str) -> Result<Self, ModelError> {
        let mut cfg = Self::default();
        let mut custom_kernels: Option<Vec<KernelRule>> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ModelError::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let err = |what: &str| {
                ModelError::InvalidConfig(format!(
                    "line {}: {key}: {what} ({value:?})",
                    lineno + 1
                ))
            };
            let num = || value.parse::<f64>().map_err(|_| err("expected a number"));
            match key {
                "bmd_hu_threshold" => cfg.bmd_hu_threshold = num()?,
                "air_qc_lo" => cfg.air_qc_lo = num()?,
                "air_qc_hi" => cfg.air_qc_hi = num()?,
                "vat_ref_hu" => cfg.vat_ref_hu = num()?,
                "air_ref_hu" => cfg.air_ref_hu = num()?,
                "axial_tolerance" => cfg.axial_tolerance = num()?,
                "max_slice_thickness_mm" => cfg.max_slice_thickness_mm = num()?,
                "lumbar_crop_margin_mm" => cfg.lumbar_crop_margin_mm = num()?,
                "roi_fraction" => cfg.roi_fraction = num()?,
                "calibration_slope_min" => cfg.calibration_slope_min = num()?,
                "calibration_slope_max" => cfg.calibration_slope_max = num()?,
                "max_air_clip_fraction" => cfg.max_air_clip_fraction = num()?,
                "slice_gap_tolerance" => cfg.slice_gap_tolerance = num()?,
                "required_kvp" => {
                    cfg.required_kvp = value.parse().map_err(|_| err("expected an integer"))?
                }
                "min_roi_voxels" => {
                    cfg.min_roi_voxels = value.parse().map_err(|_| err("expected an integer"))?
                }
                "enforce_kernel" => {
                    cfg.enforce_kernel = value.parse().map_err(|_| err("expected true/false"))?
                }
                "patient_frame" => cfg.patient_frame = value.parse()?,
                "kernel_whitelist" => {
                    let (m, k) = value
                        .split_once('|')
                        .ok_or_else(|| err("expected MANUFACTURER | KERNEL"))?;
                    custom_kernels
                        .get_or_insert_with(Vec::new)
                        .push(KernelRule::new(m.trim(), k.trim()));
                }
                "score_conversion" => {
                    if value.eq_ignore_ascii_case("none") {
                        cfg.score_conversion = None;
                    } else {
                        let parts: Vec<f64> = value
                            .split(',')
                            .map(|p| p.trim().parse::<f64>())
                            .collect::<Result<_, _>>()
                            .map_err(|_| err("expected slope,offset,t_z_factor"))?;
                        let [slope, offset, t_z_factor] = parts[..] else {
                            return Err(err("expected slope,offset,t_z_factor"));
                        };
                        cfg.score_conversion = Some(ScoreConversion {
                            slope,
                            offset,
                            t_z_factor,
                        });
                    }
                }
                _ => return Err(err("unknown key")),
            }
        }
        if let Some(k) = custom_kernels {
            cfg.kernel_whitelist = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config back into the flat text format.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("bmd_hu_threshold", self.bmd_hu_threshold.to_string());
        put("air_qc_lo", self.air_qc_lo.to_string());
        put("air_qc_hi", self.air_qc_hi.to_string());
        put("vat_ref_hu", self.vat_ref_hu.to_string());
        put("air_ref_hu", self.air_ref_hu.to_string());
        put("axial_tolerance", self.axial_tolerance.to_string());
        put("enforce_kernel", self.enforce_kernel.to_string());
        put("max_slice_thickness_mm", self.max_slice_thickness_mm.to_string());
        put("required_kvp", self.required_kvp.to_string());
        put("lumbar_crop_margin_mm", self.lumbar_crop_margin_mm.to_string());
        put("roi_fraction", self.roi_fraction.to_string());
        put("min_roi_voxels", self.min_roi_voxels.to_string());
        put("calibration_slope_min", self.calibration_slope_min.to_string());
        put("calibration_slope_max", self.calibration_slope_max.to_string());
        put("max_air_clip_fraction", self.max_air_clip_fraction.to_string());
        put("slice_gap_tolerance", self.slice_gap_tolerance.to_string());
        put(
            "patient_frame",
            match self.patient_frame {
                PatientFrame::Lps => "LPS".into(),
                PatientFrame::Ras => "RAS".into(),
            },
        );
        put(
            "score_conversion",
            match self.score_conversion {
                Some(c) => format!("{},{},{}", c.slope, c.offset, c.t_z_factor),
                None => "none".into(),
            },
        );
        for r in &self.kernel_whitelist {
            put("kernel_whitelist", format!("{} | {}", r.manufacturer, r.kernel));
        }
        s
    }
}
