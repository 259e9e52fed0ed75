//! Synthetic volumes and masks with known ground truth.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bmd::{BmdFlag, BMD_LEVELS};
use crate::model::{
    lumbar_label_names, single_label_names, Dims, LabelMask, ModelError, SeriesMeta, Volume,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    Spec(String),
}

impl From<ModelError> for PhantomError {
    fn from(e: ModelError) -> Self {
        PhantomError::Spec(e.to_string())
    }
}

fn spec_err<T>(msg: impl Into<String>) -> Result<T, PhantomError> {
    Err(PhantomError::Spec(msg.into()))
}

/// Local widening of a cylinder around the axis point on one slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BulgeSpec<T> {
    pub slice_index: usize,
    pub diameter_mm: T,
    /// Axial half-length of the widened segment.
    pub half_length_mm: T,
    /// Profile exponent `p` in `r0 + (rb - r0)(1 - |s|^p)^(1/p)`; 1 is a
    /// linear spindle.
    pub exponent: T,
}

impl<T: Scalar> BulgeSpec<T> {
    pub fn new(slice_index: usize, diameter_mm: T) -> Self {
        Self {
            slice_index,
            diameter_mm,
            half_length_mm: T::of(15.0),
            exponent: T::one(),
        }
    }
}

/// Straight circular cylinder in volume-physical coordinates
/// (`x = i·sx`, `y = j·sy`, `z = k·sz`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderSpec<T> {
    pub diameter_mm: T,
    /// Angle between the axis and the slice normal.
    pub tilt_deg: T,
    /// Direction of the tilt within the slice plane, from +x.
    pub azimuth_deg: T,
    /// A point on the axis.
    pub center_mm: [T; 3],
    /// Axial length centred on `center_mm`; `None` spans every slice.
    pub length_mm: Option<T>,
    pub bulge: Option<BulgeSpec<T>>,
}

impl<T: Scalar> CylinderSpec<T> {
    pub fn new(diameter_mm: T, tilt_deg: T, center_mm: [T; 3]) -> Self {
        Self {
            diameter_mm,
            tilt_deg,
            azimuth_deg: T::zero(),
            center_mm,
            length_mm: None,
            bulge: None,
        }
    }

    pub fn axis(&self) -> [T; 3] {
        let (t, a) = (self.tilt_deg.to_radians(), self.azimuth_deg.to_radians());
        [t.sin() * a.cos(), t.sin() * a.sin(), t.cos()]
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if !(self.diameter_mm > T::zero()) {
            return spec_err(format!("diameter {} must be positive", self.diameter_mm));
        }
        if !(self.tilt_deg >= T::zero() && self.tilt_deg < T::of(60.0)) {
            return spec_err(format!("tilt {} outside [0, 60)", self.tilt_deg));
        }
        if let Some(l) = self.length_mm {
            if !(l > T::zero()) {
                return spec_err("length must be positive");
            }
        }
        if let Some(b) = self.bulge {
            if !(b.diameter_mm >= self.diameter_mm) {
                return spec_err("bulge diameter below cylinder diameter");
            }
            if !(b.half_length_mm > T::zero() && b.exponent > T::zero()) {
                return spec_err("bulge half-length and exponent must be positive");
            }
        }
        Ok(())
    }

    /// Largest cross-section diameter.
    pub fn max_diameter_mm(&self) -> T {
        self.bulge
            .map_or(self.diameter_mm, |b| b.diameter_mm.max(self.diameter_mm))
    }

    fn radius_at(&self, t: T, bulge_t: Option<T>) -> T {
        let r0 = self.diameter_mm / T::of(2.0);
        match (self.bulge, bulge_t) {
            (Some(b), Some(tb)) => {
                let s = ((t - tb) / b.half_length_mm).abs();
                if s >= T::one() {
                    r0
                } else {
                    let p = b.exponent;
                    let w = (T::one() - s.powf(p)).powf(T::one() / p);
                    r0 + (b.diameter_mm / T::of(2.0) - r0) * w
                }
            }
            _ => r0,
        }
    }
}

/// Full major axis of the axial section of a cylinder tilted by `tilt_deg`.
pub fn oblique_major_mm<T: Scalar>(diameter_mm: T, tilt_deg: T) -> T {
    diameter_mm / tilt_deg.to_radians().cos()
}

/// Rasterises the cylinder by voxel-centre membership.
///
/// Returns the mask (label 1, "aorta") and the largest true diameter.
pub fn make_cylinder<T: Scalar>(
    spec: &CylinderSpec<T>,
    spacing: [T; 3],
    dims: Dims,
) -> Result<(LabelMask, T), PhantomError> {
    spec.validate()?;
    if spacing.iter().any(|&s| !(s > T::zero())) || dims.is_empty() {
        return spec_err("spacing and dims must be positive");
    }
    let u = spec.axis();
    let c = spec.center_mm;
    let bulge_t = spec.bulge.map(|b| {
        let zb = T::of_usize(b.slice_index) * spacing[2];
        (zb - c[2]) / u[2]
    });
    let half_len = spec.length_mm.map(|l| l / T::of(2.0));
    let mut mask = LabelMask::empty(dims, single_label_names("aorta"))?
        .with_spacing(spacing.map(|s| s.as_f64()));
    let labels = mask.labels_mut();
    for k in 0..dims.nz {
        for j in 0..dims.ny {
            for i in 0..dims.nx {
                let p = [
                    T::of_usize(i) * spacing[0],
                    T::of_usize(j) * spacing[1],
                    T::of_usize(k) * spacing[2],
                ];
                let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                let t = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
                if half_len.is_some_and(|h| t.abs() > h) {
                    continue;
                }
                let r = [d[0] - t * u[0], d[1] - t * u[1], d[2] - t * u[2]];
                let radial = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                if radial <= spec.radius_at(t, bulge_t) {
                    if i == 0 || j == 0 || i + 1 == dims.nx || j + 1 == dims.ny {
                        return spec_err(format!(
                            "cylinder reaches the lateral boundary at voxel ({i}, {j}, {k})"
                        ));
                    }
                    labels[dims.index(i, j, k)] = 1;
                }
            }
        }
    }
    if mask.foreground_count() == 0 {
        return spec_err("cylinder misses every voxel centre");
    }
    Ok((mask, spec.max_diameter_mm()))
}

/// A complete AAQ input: volume, aorta and spine masks, metadata.
#[derive(Debug, Clone)]
pub struct AaqPhantom<T> {
    pub volume: Volume<T>,
    pub aorta: LabelMask,
    pub spine: LabelMask,
    pub meta: SeriesMeta,
    pub true_diameter_mm: T,
}

/// HU inside the aorta and elsewhere.
pub const AORTA_HU: f64 = 200.0;
pub const BACKGROUND_HU: f64 = 0.0;

/// Cylinder phantom plus an L1–L5 spine mask.
///
/// The five levels split slices `spine_slices.0..=spine_slices.1` evenly and
/// occupy a small block in the lowest-index corner of each slice.
pub fn make_aaq_phantom<T: Scalar>(
    spec: &CylinderSpec<T>,
    spacing: [T; 3],
    dims: Dims,
    spine_slices: (usize, usize),
) -> Result<AaqPhantom<T>, PhantomError> {
    let (aorta, true_diameter_mm) = make_cylinder(spec, spacing, dims)?;
    let (z_lo, z_hi) = spine_slices;
    if z_lo > z_hi || z_hi >= dims.nz || z_hi - z_lo + 1 < 5 {
        return spec_err(format!("spine slices {z_lo}..={z_hi} need 5 slices inside the volume"));
    }
    let mut spine = LabelMask::empty(dims, lumbar_label_names())?
        .with_spacing(spacing.map(|s| s.as_f64()));
    let n = z_hi - z_lo + 1;
    for k in z_lo..=z_hi {
        let level = ((k - z_lo) * 5 / n) as u8 + 1;
        for j in 1..3.min(dims.ny) {
            for i in 1..3.min(dims.nx) {
                spine.set(i, j, k, level);
            }
        }
    }
    let (fg, bg) = (T::of(AORTA_HU), T::of(BACKGROUND_HU));
    let data = aorta.labels().iter().map(|&l| if l != 0 { fg } else { bg }).collect();
    let volume = Volume::from_data(dims, spacing, data)?;
    Ok(AaqPhantom {
        volume,
        aorta,
        spine,
        meta: phantom_meta(spacing[2].as_f64()),
        true_diameter_mm,
    })
}

/// Metadata of a clean axial acquisition that passes every filter.
pub fn phantom_meta(slice_thickness_mm: f64) -> SeriesMeta {
    SeriesMeta {
        kvp: Some(120.0),
        kernel: Some("STANDARD".into()),
        manufacturer: Some("GE MEDICAL SYSTEMS".into()),
        slice_thickness_mm: Some(slice_thickness_mm),
        image_type_flags: Some(
            ["ORIGINAL", "PRIMARY", "AXIAL"]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        orientation: Some([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        series_uid: Some("2.25.1".into()),
        ..Default::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmdLayout<T> {
    pub dims: Dims,
    pub spacing: [T; 3],
}

impl<T: Scalar> Default for BmdLayout<T> {
    fn default() -> Self {
        Self {
            dims: Dims::new(96, 128, 80),
            spacing: [T::one(); 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmdPhantomSpec<T> {
    /// Nominal HU per level, L1..L4.
    pub vertebra_hu: BTreeMap<String, T>,
    pub vat_hu: T,
    pub air_hu: T,
    /// HU of the body filler around the vertebrae.
    pub soft_tissue_hu: T,
    /// Gaussian noise on vertebral voxels only.
    pub noise_sigma: T,
    pub seed: u64,
    /// Whole-volume `(slope, intercept)` applied last.
    pub miscal: Option<(T, T)>,
    pub layout: BmdLayout<T>,
}

impl<T: Scalar> BmdPhantomSpec<T> {
    pub fn uniform(vertebra_hu: [T; 4]) -> Self {
        Self {
            vertebra_hu: BMD_LEVELS
                .iter()
                .zip(vertebra_hu)
                .map(|(l, h)| (l.to_string(), h))
                .collect(),
            vat_hu: T::of(-95.0),
            air_hu: T::of(-1000.0),
            soft_tissue_hu: T::of(40.0),
            noise_sigma: T::zero(),
            seed: 0,
            miscal: None,
            layout: BmdLayout::default(),
        }
    }
}

/// Exact region statistics before miscalibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmdTruth {
    /// Sample mean over each full vertebra block.
    pub vertebra_mean_hu: BTreeMap<String, f64>,
    pub vertebra_nominal_hu: BTreeMap<String, f64>,
    pub vat_hu: f64,
    pub air_hu: f64,
    /// Mean of the four nominal values.
    pub nominal_mean_hu: f64,
    pub expected_flag: BmdFlag,
}

#[derive(Debug, Clone)]
pub struct BmdPhantom<T> {
    pub volume: Volume<T>,
    pub spine: LabelMask,
    pub vat: LabelMask,
    pub truth: BmdTruth,
}

/// Half-open index range covering `[a, b)` mm.
fn mm_range(a: f64, b: f64, s: f64) -> std::ops::Range<usize> {
    (a / s).ceil().max(0.0) as usize..(b / s).ceil().max(0.0) as usize
}

/// Axial slab phantom with identity orientation (anterior = decreasing j).
///
/// Along j, from anterior: air, a 10 mm VAT slab starting at 60 mm, body
/// filler, and 30 mm vertebral blocks at 80–110 mm. The four blocks split
/// the slices evenly with a one-slice gap at each end.
pub fn make_bmd_phantom<T: Scalar>(
    spec: &BmdPhantomSpec<T>,
    threshold_hu: f64,
) -> Result<BmdPhantom<T>, PhantomError> {
    let BmdLayout { dims, spacing } = spec.layout;
    let s = spacing.map(|x| x.as_f64());
    if s.iter().any(|&x| !(x > 0.0)) || dims.is_empty() {
        return spec_err("layout spacing and dims must be positive");
    }
    let (width, depth) = (dims.nx as f64 * s[0], dims.ny as f64 * s[1]);
    if width < 90.0 || depth < 120.0 || dims.nz < 12 {
        return spec_err(format!(
            "layout {}x{} mm with {} slices too small (need 90x120 mm, 12 slices)",
            width, depth, dims.nz
        ));
    }
    for l in BMD_LEVELS {
        match spec.vertebra_hu.get(l) {
            Some(h) if h.is_finite() => {}
            _ => return spec_err(format!("vertebra HU for {l} missing or not finite")),
        }
    }
    if !(spec.noise_sigma >= T::zero()) {
        return spec_err("noise sigma must be non-negative");
    }

    let cx = width / 2.0;
    let vat_x = mm_range(cx - 20.0, cx + 20.0, s[0]);
    let vat_y = mm_range(60.0, 70.0, s[1]);
    let body_x = mm_range(cx - 45.0, cx + 45.0, s[0]);
    let body_y = mm_range(70.0, depth - 5.0, s[1]);
    let vert_x = mm_range(cx - 15.0, cx + 15.0, s[0]);
    let vert_y = mm_range(80.0, 110.0, s[1]);
    let band = dims.nz / 4;

    let mut data = vec![spec.air_hu; dims.len()];
    let mut spine = LabelMask::empty(dims, lumbar_label_names())?.with_spacing(s);
    let mut vat = LabelMask::empty(dims, single_label_names("vat"))?.with_spacing(s);
    for k in 0..dims.nz {
        for j in 0..dims.ny {
            for i in 0..dims.nx {
                let idx = dims.index(i, j, k);
                if vat_x.contains(&i) && vat_y.contains(&j) {
                    data[idx] = spec.vat_hu;
                    vat.labels_mut()[idx] = 1;
                } else if body_x.contains(&i) && body_y.contains(&j) {
                    data[idx] = spec.soft_tissue_hu;
                }
            }
        }
    }

    let normal = Normal::new(0.0, spec.noise_sigma.as_f64())
        .map_err(|e| PhantomError::Spec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vertebra_mean_hu = BTreeMap::new();
    let mut vertebra_nominal_hu = BTreeMap::new();
    for (b, level) in BMD_LEVELS.iter().enumerate() {
        let nominal = spec.vertebra_hu[*level];
        let label = b as u8 + 1;
        let (mut sum, mut n) = (0.0f64, 0usize);
        for k in b * band + 1..(b + 1) * band - 1 {
            for j in vert_y.clone() {
                for i in vert_x.clone() {
                    let idx = dims.index(i, j, k);
                    let v = nominal + T::of(normal.sample(&mut rng));
                    data[idx] = v;
                    spine.labels_mut()[idx] = label;
                    sum += v.as_f64();
                    n += 1;
                }
            }
        }
        vertebra_mean_hu.insert(level.to_string(), sum / n as f64);
        vertebra_nominal_hu.insert(level.to_string(), nominal.as_f64());
    }

    let mut volume = Volume::from_data(dims, spacing, data)?;
    if let Some((a, b)) = spec.miscal {
        volume = apply_affine_hu(&volume, a, b)?;
    }
    let nominal_mean_hu = vertebra_nominal_hu.values().sum::<f64>() / BMD_LEVELS.len() as f64;
    Ok(BmdPhantom {
        volume,
        spine,
        vat,
        truth: BmdTruth {
            vertebra_mean_hu,
            vertebra_nominal_hu,
            vat_hu: spec.vat_hu.as_f64(),
            air_hu: spec.air_hu.as_f64(),
            nominal_mean_hu,
            expected_flag: if nominal_mean_hu < threshold_hu {
                BmdFlag::Low
            } else {
                BmdFlag::Normal
            },
        },
    })
}

/// Maps every voxel through `slope·hu + intercept`.
pub fn apply_affine_hu<T: Scalar>(
    volume: &Volume<T>,
    slope: T,
    intercept: T,
) -> Result<Volume<T>, PhantomError> {
    if slope == T::zero() || !slope.is_finite() || !intercept.is_finite() {
        return spec_err(format!("affine ({slope}, {intercept}) is not invertible"));
    }
    Ok(volume.map_values(|h| slope * h + intercept)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_cylinder_slices_are_disks() {
        let dims = Dims::new(32, 32, 4);
        let spec = CylinderSpec::new(20.0f64, 0.0, [15.0, 16.0, 0.0]);
        let (m, d) = make_cylinder(&spec, [1.0; 3], dims).unwrap();
        assert_eq!(d, 20.0);
        let disk: Vec<bool> = (0..32 * 32)
            .map(|p| {
                let (x, y) = ((p % 32) as f64 - 15.0, (p / 32) as f64 - 16.0);
                x * x + y * y <= 100.0
            })
            .collect();
        for k in 0..4 {
            assert_eq!(m.slice_foreground(k), disk);
        }
    }

    #[test]
    fn boundary_contact_is_rejected() {
        let spec = CylinderSpec::new(20.0f64, 0.0, [5.0, 16.0, 0.0]);
        assert!(make_cylinder(&spec, [1.0; 3], Dims::new(32, 32, 2)).is_err());
        let spec = CylinderSpec::new(20.0f64, 60.0, [16.0, 16.0, 0.0]);
        assert!(make_cylinder(&spec, [1.0; 3], Dims::new(32, 32, 2)).is_err());
        let spec = CylinderSpec::new(0.0f64, 0.0, [16.0, 16.0, 0.0]);
        assert!(make_cylinder(&spec, [1.0; 3], Dims::new(32, 32, 2)).is_err());
    }

    #[test]
    fn bulge_peaks_at_its_slice() {
        let mut spec = CylinderSpec::new(20.0f64, 0.0, [32.0, 32.0, 40.0]);
        spec.bulge = Some(BulgeSpec::new(40, 45.0));
        let (m, d) = make_cylinder(&spec, [1.0; 3], Dims::new(64, 64, 80)).unwrap();
        assert_eq!(d, 45.0);
        let counts: Vec<usize> = (0..80)
            .map(|k| m.slice_foreground(k).iter().filter(|&&b| b).count())
            .collect();
        let widest = (0..80).max_by_key(|&k| (counts[k], std::cmp::Reverse(k))).unwrap();
        assert_eq!(widest, 40);
        assert!(counts[39] < counts[40] && counts[41] < counts[40]);
    }

    #[test]
    fn oblique_major() {
        assert!((oblique_major_mm(30.0f64, 30.0) - 34.641016).abs() < 1e-6);
    }

    #[test]
    fn bmd_truth_is_exact_without_noise() {
        let p = make_bmd_phantom(&BmdPhantomSpec::uniform([335.0f64; 4]), 300.0).unwrap();
        for v in p.truth.vertebra_mean_hu.values() {
            assert_eq!(*v, 335.0);
        }
        assert_eq!(p.truth.expected_flag, BmdFlag::Normal);
        assert_eq!(p.volume.get(0, 0, 0), Some(-1000.0));
    }

    #[test]
    fn miscal_applies_to_air() {
        let mut spec = BmdPhantomSpec::uniform([335.0f64; 4]);
        spec.miscal = Some((1.1, 30.0));
        let p = make_bmd_phantom(&spec, 300.0).unwrap();
        assert!((p.volume.get(0, 0, 0).unwrap() + 1070.0).abs() < 1e-9);
        assert_eq!(p.truth.air_hu, -1000.0);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let mut spec = BmdPhantomSpec::uniform([335.0f64; 4]);
        spec.noise_sigma = 10.0;
        spec.seed = 7;
        let a = make_bmd_phantom(&spec, 300.0).unwrap();
        let b = make_bmd_phantom(&spec, 300.0).unwrap();
        assert_eq!(a.volume, b.volume);
        spec.seed = 8;
        let c = make_bmd_phantom(&spec, 300.0).unwrap();
        assert_ne!(a.volume, c.volume);
    }

    #[test]
    fn small_layout_is_rejected() {
        let mut spec = BmdPhantomSpec::uniform([335.0f64; 4]);
        spec.layout.dims = Dims::new(40, 40, 40);
        assert!(make_bmd_phantom(&spec, 300.0).is_err());
    }

    #[test]
    fn affine_examples() {
        let v = Volume::from_data(Dims::new(2, 1, 1), [1.0; 3], vec![-500.0f64, 3.0]).unwrap();
        assert_eq!(apply_affine_hu(&v, 1.0, 0.0).unwrap(), v);
        assert_eq!(apply_affine_hu(&v, 2.0, 0.0).unwrap().data()[0], -1000.0);
        assert!(apply_affine_hu(&v, 0.0, 1.0).is_err());
    }
}
