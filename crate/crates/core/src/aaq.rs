//! Maximal abdominal aortic diameter.
//!
//! Each axial slice of the aorta mask is reduced to its largest 4-connected
//! component and summarised by the moment-equivalent ellipse in physical
//! coordinates. The widest minor axis over the lumbar range is the reported
//! diameter: an oblique cylinder cut by an axial plane is an ellipse whose
//! minor axis equals the cylinder diameter whatever the tilt.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LabelMask, ModelError, PipelineConfig, Volume};
use crate::scalar::{round_sig, Scalar};

/// Diameters strictly above this are aneurysmal.
pub const ANEURYSM_THRESHOLD_MM: f64 = 30.0;
/// Smallest component that gets an ellipse.
pub const MIN_FIT_VOXELS: usize = 4;
const LUMBAR_LEVELS: [&str; 5] = ["L1", "L2", "L3", "L4", "L5"];

#[derive(Debug, Error)]
pub enum AaqError {
    #[error("lumbar spine incomplete: no voxels for {}", .0.join(", "))]
    SpineIncomplete(Vec<String>),
    #[error("aorta segmentation is empty within slices {0}..={1}")]
    EmptySegmentation(usize, usize),
    #[error(transparent)]
    Geometry(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AaqError {
    pub fn reason(&self) -> &'static str {
        match self {
            AaqError::SpineIncomplete(_) => "SpineIncomplete",
            AaqError::EmptySegmentation(..) => "EmptySegmentation",
            AaqError::Geometry(e) => e.reason(),
            AaqError::Io { .. } => "IoError",
        }
    }
}

/// Inclusive slice range in original volume indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRange {
    pub z_lo: usize,
    pub z_hi: usize,
}

impl CropRange {
    pub fn contains(&self, k: usize) -> bool {
        (self.z_lo..=self.z_hi).contains(&k)
    }
}

/// Moment-equivalent ellipse of one slice component, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseFit<T> {
    /// In-slice centroid, (i·sx, j·sy).
    pub center_mm: [T; 2],
    /// Full major-axis length.
    pub major_mm: T,
    /// Full minor-axis length.
    pub minor_mm: T,
    /// Major-axis angle from the +i axis.
    pub angle_rad: T,
    pub area_mm2: T,
    pub voxel_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry<T> {
    pub slice_index: usize,
    pub minor_mm: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiameterReport<T> {
    pub max_diameter_mm: T,
    /// Index into the original, uncropped volume.
    pub max_slice_index: usize,
    /// Full ellipse at the widest slice.
    pub max_slice_fit: EllipseFit<T>,
    pub profile: Vec<ProfileEntry<T>>,
    pub crop_range: CropRange,
    pub aneurysm_flag: bool,
}

/// Slices spanned by L1–L5, widened by `margin_mm` and clipped to the volume.
pub fn lumbar_range(spine: &LabelMask, slice_spacing_mm: f64, margin_mm: f64) -> Result<CropRange, AaqError> {
    let dims = spine.dims();
    let sl = dims.slice_len();
    let mut missing = Vec::new();
    let mut lo = usize::MAX;
    let mut hi = 0usize;
    for level in LUMBAR_LEVELS {
        let Some(label) = spine.label_of(level) else {
            missing.push(level.to_string());
            continue;
        };
        let mut found = false;
        for idx in spine.voxels_of(label) {
            let k = idx / sl;
            lo = lo.min(k);
            hi = hi.max(k);
            found = true;
        }
        if !found {
            missing.push(level.to_string());
        }
    }
    if !missing.is_empty() {
        return Err(AaqError::SpineIncomplete(missing));
    }
    let margin = if margin_mm > 0.0 {
        (margin_mm / slice_spacing_mm - 1e-9).ceil() as usize
    } else {
        0
    };
    Ok(CropRange {
        z_lo: lo.saturating_sub(margin),
        z_hi: (hi + margin).min(dims.nz - 1),
    })
}

/// Crops the volume superior-inferiorly to the lumbar spine.
pub fn crop_to_lumbar<T: Scalar>(
    volume: &Volume<T>,
    spine: &LabelMask,
    margin_mm: f64,
) -> Result<(Volume<T>, CropRange), AaqError> {
    spine.check_aligned(volume)?;
    let range = lumbar_range(spine, volume.spacing()[2].as_f64(), margin_mm)?;
    Ok((volume.crop_z(range.z_lo, range.z_hi)?, range))
}

/// Pixels of the largest 4-connected foreground component. Ties keep the
/// component met first in scan order.
fn largest_component(mask: &[bool], nx: usize, ny: usize) -> Vec<usize> {
    let mut seen = vec![false; mask.len()];
    let mut best: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            comp.push(p);
            let (i, j) = (p % nx, p / nx);
            let mut visit = |q: usize| {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if i > 0 {
                visit(p - 1);
            }
            if i + 1 < nx {
                visit(p + 1);
            }
            if j > 0 {
                visit(p - nx);
            }
            if j + 1 < ny {
                visit(p + nx);
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Equivalent ellipse of the largest component of one axial slice.
///
/// `mask` is row-major with i fastest and has `nx * ny` entries. The ellipse
/// comes from the covariance of voxel-center coordinates in mm, with the
/// uniform-pixel variance `s²/12` added on each axis so that axis lengths
/// (`4·√λ`) match the continuous shape. Returns `None` for fewer than
/// [`MIN_FIT_VOXELS`] foreground voxels.
pub fn slice_ellipse<T: Scalar>(
    mask: &[bool],
    nx: usize,
    ny: usize,
    spacing: [T; 2],
) -> Option<EllipseFit<T>> {
    assert_eq!(mask.len(), nx * ny, "slice mask size mismatch");
    let comp = largest_component(mask, nx, ny);
    if comp.len() < MIN_FIT_VOXELS {
        return None;
    }
    let n = T::of_usize(comp.len());
    let [sx, sy] = spacing;
    let xy = |p: usize| (T::of_usize(p % nx) * sx, T::of_usize(p / nx) * sy);
    let (mut mx, mut my) = (T::zero(), T::zero());
    for &p in &comp {
        let (x, y) = xy(p);
        mx = mx + x;
        my = my + y;
    }
    mx = mx / n;
    my = my / n;
    let (mut cxx, mut cyy, mut cxy) = (T::zero(), T::zero(), T::zero());
    for &p in &comp {
        let (x, y) = xy(p);
        let (dx, dy) = (x - mx, y - my);
        cxx = cxx + dx * dx;
        cyy = cyy + dy * dy;
        cxy = cxy + dx * dy;
    }
    let twelve = T::of(12.0);
    cxx = cxx / n + sx * sx / twelve;
    cyy = cyy / n + sy * sy / twelve;
    cxy = cxy / n;

    let half_trace = (cxx + cyy) / T::of(2.0);
    let half_diff = (cxx - cyy) / T::of(2.0);
    let disc = (half_diff * half_diff + cxy * cxy).sqrt();
    let l_max = half_trace + disc;
    let l_min = (half_trace - disc).max(T::zero());
    let four = T::of(4.0);
    Some(EllipseFit {
        center_mm: [mx, my],
        major_mm: four * l_max.sqrt(),
        minor_mm: four * l_min.sqrt(),
        angle_rad: (T::of(2.0) * cxy).atan2(cxx - cyy) / T::of(2.0),
        area_mm2: n * sx * sy,
        voxel_count: comp.len(),
    })
}

/// Per-slice minor axes over `range` and their maximum.
///
/// Ties go to the smallest slice index.
pub fn measure_range<T: Scalar>(
    aorta: &LabelMask,
    volume: &Volume<T>,
    range: CropRange,
) -> Result<DiameterReport<T>, AaqError> {
    aorta.check_aligned(volume)?;
    let dims = volume.dims();
    if range.z_lo > range.z_hi || range.z_hi >= dims.nz {
        return Err(ModelError::InvalidGeometry(format!(
            "slice range {}..={} outside volume",
            range.z_lo, range.z_hi
        ))
        .into());
    }
    let [sx, sy, _] = volume.spacing();
    let fits: Vec<(usize, Option<EllipseFit<T>>)> = (range.z_lo..=range.z_hi)
        .into_par_iter()
        .map(|k| {
            let slice = aorta.slice_foreground(k);
            (k, slice_ellipse(&slice, dims.nx, dims.ny, [sx, sy]))
        })
        .collect();

    let mut best: Option<(usize, EllipseFit<T>)> = None;
    for (k, fit) in &fits {
        if let Some(f) = fit {
            if best.is_none_or(|(_, b)| f.minor_mm > b.minor_mm) {
                best = Some((*k, *f));
            }
        }
    }
    let (max_slice_index, max_slice_fit) =
        best.ok_or(AaqError::EmptySegmentation(range.z_lo, range.z_hi))?;
    let max_diameter_mm = max_slice_fit.minor_mm;
    Ok(DiameterReport {
        max_diameter_mm,
        max_slice_index,
        max_slice_fit,
        profile: fits
            .into_iter()
            .map(|(slice_index, f)| ProfileEntry {
                slice_index,
                minor_mm: f.map(|f| f.minor_mm),
            })
            .collect(),
        crop_range: range,
        aneurysm_flag: max_diameter_mm.as_f64() > ANEURYSM_THRESHOLD_MM,
    })
}

/// Widest minor axis over the whole volume.
pub fn max_minor_diameter<T: Scalar>(
    aorta: &LabelMask,
    volume: &Volume<T>,
) -> Result<DiameterReport<T>, AaqError> {
    let range = CropRange {
        z_lo: 0,
        z_hi: volume.dims().nz - 1,
    };
    measure_range(aorta, volume, range)
}

/// Lumbar crop followed by the diameter measurement inside the crop.
pub fn run_aaq<T: Scalar>(
    volume: &Volume<T>,
    aorta: &LabelMask,
    spine: &LabelMask,
    config: &PipelineConfig,
) -> Result<DiameterReport<T>, AaqError> {
    aorta.check_aligned(volume)?;
    spine.check_aligned(volume)?;
    let range = lumbar_range(
        spine,
        volume.spacing()[2].as_f64(),
        config.lumbar_crop_margin_mm,
    )?;
    measure_range(aorta, volume, range)
}

/// Writes `slice_index,minor_diameter_mm` rows; absent fits leave the
/// diameter field empty.
pub fn write_profile_csv<T: Scalar, W: Write>(
    report: &DiameterReport<T>,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "slice_index,minor_diameter_mm")?;
    for e in &report.profile {
        match e.minor_mm {
            Some(d) => writeln!(out, "{},{}", e.slice_index, round_sig(d.as_f64(), 6))?,
            None => writeln!(out, "{},", e.slice_index)?,
        }
    }
    Ok(())
}

/// Writes `profile.csv` and `diameter_report.json` into `dir`.
pub fn emit_profile<T: Scalar>(report: &DiameterReport<T>, dir: &Path) -> Result<(), AaqError> {
    let io = |path: PathBuf| move |source| AaqError::Io { path, source };
    fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let csv_path = dir.join("profile.csv");
    let mut buf = Vec::new();
    write_profile_csv(report, &mut buf).map_err(io(csv_path.clone()))?;
    fs::write(&csv_path, buf).map_err(io(csv_path.clone()))?;

    let json_path = dir.join("diameter_report.json");
    let text = serde_json::to_string_pretty(report).expect("report serialises");
    fs::write(&json_path, text + "\n").map_err(io(json_path.clone()))?;
    Ok(())
}
