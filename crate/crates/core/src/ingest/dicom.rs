use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use dicom_core::value::PrimitiveValue;
use dicom_core::{DataElement, Tag, VR};
use dicom_dictionary_std::{tags, uids};
use dicom_object::{open_file, DefaultDicomObject, FileMetaTableBuilder, InMemDicomObject};
use rayon::prelude::*;

use super::IngestError;
use crate::model::{dot, Dims, Orientation, SeriesMeta, Volume};
use crate::scalar::Scalar;

/// Per-file view of the tags the pipelines need.
#[derive(Debug)]
struct SliceRecord {
    series_uid: Option<String>,
    position: [f64; 3],
    orientation: [f64; 6],
    pixel_spacing: [f64; 2],
    rows: usize,
    cols: usize,
    hu: Vec<f64>,
    kvp: Option<f64>,
    kernel: Option<String>,
    manufacturer: Option<String>,
    thickness: Option<f64>,
    image_type: Option<BTreeSet<String>>,
    sex: Option<String>,
    contrast: Option<String>,
}

fn text(obj: &DefaultDicomObject, tag: Tag) -> Option<String> {
    let s = obj.get(tag)?.value().to_str().ok()?;
    let s = s.trim_matches(|c: char| c.is_whitespace() || c == '\0');
    (!s.is_empty()).then(|| s.to_string())
}

fn floats(obj: &DefaultDicomObject, tag: Tag) -> Option<Vec<f64>> {
    obj.get(tag)?.value().to_multi_float64().ok()
}

fn float(obj: &DefaultDicomObject, tag: Tag) -> Option<f64> {
    obj.get(tag)?.value().to_float64().ok()
}

fn uint(obj: &DefaultDicomObject, tag: Tag) -> Option<u32> {
    obj.get(tag)?.value().to_int::<u32>().ok()
}

fn read_slice(path: &Path) -> Result<SliceRecord, IngestError> {
    let obj = open_file(path).map_err(|e| IngestError::parse(path, e))?;
    let missing = |tag: &str| IngestError::MissingTag {
        path: path.to_path_buf(),
        tag: tag.to_string(),
    };
    let fixed = |tag: Tag, name: &str, n: usize| -> Result<Vec<f64>, IngestError> {
        let v = floats(&obj, tag).ok_or_else(|| missing(name))?;
        if v.len() != n {
            return Err(IngestError::parse(
                path,
                format!("{name} has {} values, expected {n}", v.len()),
            ));
        }
        Ok(v)
    };

    let orientation: [f64; 6] = fixed(tags::IMAGE_ORIENTATION_PATIENT, "ImageOrientationPatient", 6)?
        .try_into()
        .expect("length checked");
    let position: [f64; 3] = fixed(tags::IMAGE_POSITION_PATIENT, "ImagePositionPatient", 3)?
        .try_into()
        .expect("length checked");
    let pixel_spacing: [f64; 2] = fixed(tags::PIXEL_SPACING, "PixelSpacing", 2)?
        .try_into()
        .expect("length checked");
    let rows = uint(&obj, tags::ROWS).ok_or_else(|| missing("Rows"))? as usize;
    let cols = uint(&obj, tags::COLUMNS).ok_or_else(|| missing("Columns"))? as usize;
    let bits = uint(&obj, tags::BITS_ALLOCATED).ok_or_else(|| missing("BitsAllocated"))?;
    let signed = uint(&obj, tags::PIXEL_REPRESENTATION).unwrap_or(0) == 1;
    let spp = uint(&obj, tags::SAMPLES_PER_PIXEL).unwrap_or(1);
    if spp != 1 {
        return Err(IngestError::parse(path, format!("{spp} samples per pixel")));
    }
    let slope = float(&obj, tags::RESCALE_SLOPE).unwrap_or(1.0);
    let intercept = float(&obj, tags::RESCALE_INTERCEPT).unwrap_or(0.0);

    let pixel_elem = obj.get(tags::PIXEL_DATA).ok_or_else(|| missing("PixelData"))?;
    let bytes = pixel_elem
        .value()
        .to_bytes()
        .map_err(|e| IngestError::parse(path, format!("pixel data: {e}")))?;
    let n = rows * cols;
    let raw: Vec<f64> = match (bits, signed) {
        (8, false) => bytes.iter().take(n).map(|&b| b as f64).collect(),
        (8, true) => bytes.iter().take(n).map(|&b| b as i8 as f64).collect(),
        (16, false) => bytes
            .chunks_exact(2)
            .take(n)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        (16, true) => bytes
            .chunks_exact(2)
            .take(n)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        _ => {
            return Err(IngestError::parse(
                path,
                format!("unsupported bits allocated {bits}"),
            ))
        }
    };
    if raw.len() != n {
        return Err(IngestError::parse(
            path,
            format!("pixel data holds {} samples, expected {n}", raw.len()),
        ));
    }
    let hu = raw.into_iter().map(|v| v * slope + intercept).collect();

    let image_type = obj
        .get(tags::IMAGE_TYPE)
        .and_then(|e| e.value().to_multi_str().ok().map(|v| v.to_vec()))
        .map(|v| {
            v.iter()
                .map(|s| s.trim().to_ascii_uppercase())
                .filter(|s| !s.is_empty())
                .collect::<BTreeSet<_>>()
        });
    // Convolution Kernel may be multi-valued; the first value names the kernel.
    let kernel = obj
        .get(tags::CONVOLUTION_KERNEL)
        .and_then(|e| e.value().to_multi_str().ok().map(|v| v.to_vec()))
        .and_then(|v| v.first().map(|s| s.trim().to_string()))
        .filter(|s| !s.is_empty());
    let contrast = obj.get(tags::CONTRAST_BOLUS_AGENT).map(|e| {
        let agent = e.value().to_str().map(|s| s.trim().to_string()).unwrap_or_default();
        if agent.is_empty() {
            "non-contrast".to_string()
        } else {
            "contrast".to_string()
        }
    });

    Ok(SliceRecord {
        series_uid: text(&obj, tags::SERIES_INSTANCE_UID),
        position,
        orientation,
        pixel_spacing,
        rows,
        cols,
        hu,
        kvp: float(&obj, tags::KVP),
        kernel,
        manufacturer: text(&obj, tags::MANUFACTURER),
        thickness: float(&obj, tags::SLICE_THICKNESS),
        image_type,
        sex: text(&obj, tags::PATIENT_SEX),
        contrast,
    })
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| IngestError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            !p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Assembles a directory of single-frame slices into a volume plus metadata.
///
/// Slices are ordered by the projection of Image Position (Patient) onto the
/// slice normal, so the result does not depend on file names or order. The
/// inter-slice gap must stay within `gap_tolerance` (fraction of the median
/// gap) everywhere.
pub fn load_series<T: Scalar>(
    dir: &Path,
    gap_tolerance: f64,
) -> Result<(Volume<T>, SeriesMeta), IngestError> {
    let files = list_files(dir)?;
    if files.is_empty() {
        return Err(IngestError::NoSlices(dir.to_path_buf()));
    }
    let mut slices = files
        .par_iter()
        .map(|p| read_slice(p))
        .collect::<Result<Vec<_>, _>>()?;

    let first = &slices[0];
    let uid = first.series_uid.clone();
    if slices.iter().any(|s| s.series_uid != uid) {
        return Err(IngestError::InconsistentSeries(
            "slices carry different Series Instance UIDs".into(),
        ));
    }
    let (rows, cols, ps, cos) = (first.rows, first.cols, first.pixel_spacing, first.orientation);
    for s in &slices {
        if s.rows != rows || s.cols != cols {
            return Err(IngestError::InconsistentSeries(format!(
                "slice matrix {}x{} differs from {rows}x{cols}",
                s.rows, s.cols
            )));
        }
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-4);
        if !same(&s.orientation, &cos) || !same(&s.pixel_spacing, &ps) {
            return Err(IngestError::InconsistentSeries(
                "orientation or pixel spacing differs between slices".into(),
            ));
        }
    }

    let orientation = Orientation::from_cosines(cos);
    orientation.validate()?;
    let normal = orientation.normal();
    let proj = |s: &SliceRecord| dot(s.position, normal);
    slices.sort_by(|a, b| proj(a).total_cmp(&proj(b)));

    let positions: Vec<f64> = slices.iter().map(proj).collect();
    let gaps: Vec<f64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    let sz = if gaps.is_empty() {
        slices[0].thickness.filter(|t| *t > 0.0).unwrap_or(1.0)
    } else {
        let mut sorted = gaps.clone();
        sorted.sort_by(f64::total_cmp);
        let median = crate::scalar::quantile_sorted(&sorted, 0.5).expect("non-empty");
        if !(median > 0.0) {
            return Err(IngestError::InconsistentSeries(
                "duplicate slice positions".into(),
            ));
        }
        if let Some(g) = gaps
            .iter()
            .find(|g| (*g - median).abs() > gap_tolerance * median)
        {
            return Err(IngestError::InconsistentSeries(format!(
                "inter-slice gap {g} mm deviates from median {median} mm"
            )));
        }
        median
    };

    let dims = Dims::new(cols, rows, slices.len());
    let mut data = Vec::with_capacity(dims.len());
    for s in &slices {
        data.extend(s.hu.iter().map(|&v| T::of(v)));
    }
    // Pixel Spacing is (row spacing, column spacing): i steps along a row.
    let spacing = [T::of(ps[1]), T::of(ps[0]), T::of(sz)];
    let volume = Volume::new(
        dims,
        spacing,
        slices[0].position.map(T::of),
        Orientation::from_cosines(cos.map(T::of)),
        data,
    )?;

    let head = &slices[0];
    let mut subgroup_keys = std::collections::BTreeMap::new();
    if let Some(m) = &head.manufacturer {
        subgroup_keys.insert("manufacturer".to_string(), m.clone());
    }
    if let Some(k) = &head.kernel {
        subgroup_keys.insert("kernel".to_string(), k.clone());
    }
    if let Some(s) = &head.sex {
        subgroup_keys.insert("sex".to_string(), s.clone());
    }
    if let Some(c) = &head.contrast {
        subgroup_keys.insert("contrast".to_string(), c.clone());
    }
    let meta = SeriesMeta {
        kvp: head.kvp,
        kernel: head.kernel.clone(),
        manufacturer: head.manufacturer.clone(),
        slice_thickness_mm: head.thickness,
        image_type_flags: head.image_type.clone(),
        orientation: Some(cos),
        series_uid: uid,
        subgroup_keys,
    };
    meta.validate()?;
    Ok((volume, meta))
}

/// A minimal single-frame CT slice for building test series on disk.
#[derive(Debug, Clone)]
pub struct FixtureSlice {
    pub rows: usize,
    pub cols: usize,
    pub pixel_spacing: [f64; 2],
    pub position: [f64; 3],
    pub orientation: Option<[f64; 6]>,
    /// Stored values, row-major with columns fastest.
    pub raw: Vec<i16>,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    pub series_uid: String,
    pub instance: u32,
    pub kvp: Option<f64>,
    pub kernel: Option<String>,
    pub manufacturer: Option<String>,
    pub slice_thickness_mm: Option<f64>,
    pub image_type: Option<Vec<String>>,
    pub implicit_vr: bool,
}

impl FixtureSlice {
    /// Axial 120 kVp GE STANDARD slice filled with one stored value.
    pub fn axial(rows: usize, cols: usize, z: f64, value: i16) -> Self {
        Self {
            rows,
            cols,
            pixel_spacing: [1.0, 1.0],
            position: [0.0, 0.0, z],
            orientation: Some([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            raw: vec![value; rows * cols],
            rescale_slope: 1.0,
            rescale_intercept: -1024.0,
            series_uid: "1.2.826.0.1.3680043.2.1125.1".into(),
            instance: 1,
            kvp: Some(120.0),
            kernel: Some("STANDARD".into()),
            manufacturer: Some("GE MEDICAL SYSTEMS".into()),
            slice_thickness_mm: Some(1.0),
            image_type: Some(vec!["ORIGINAL".into(), "PRIMARY".into(), "AXIAL".into()]),
            implicit_vr: false,
        }
    }
}

fn ds(values: &[f64]) -> PrimitiveValue {
    let v: Vec<String> = values.iter().map(|x| format!("{x}")).collect();
    if v.len() == 1 {
        PrimitiveValue::from(v[0].clone())
    } else {
        PrimitiveValue::Strs(v.into())
    }
}

/// Writes `slice` as a DICOM Part-10 file with uncompressed pixel data.
pub fn write_fixture_slice(path: &Path, slice: &FixtureSlice) -> Result<(), IngestError> {
    let sop_uid = format!("{}.{}", slice.series_uid, slice.instance);
    let mut obj = InMemDicomObject::new_empty();
    let mut put = |tag: Tag, vr: VR, v: PrimitiveValue| {
        obj.put(DataElement::new(tag, vr, v));
    };
    put(tags::SOP_CLASS_UID, VR::UI, PrimitiveValue::from(uids::CT_IMAGE_STORAGE));
    put(tags::SOP_INSTANCE_UID, VR::UI, PrimitiveValue::from(sop_uid.as_str()));
    put(tags::MODALITY, VR::CS, PrimitiveValue::from("CT"));
    put(
        tags::SERIES_INSTANCE_UID,
        VR::UI,
        PrimitiveValue::from(slice.series_uid.as_str()),
    );
    put(
        tags::INSTANCE_NUMBER,
        VR::IS,
        PrimitiveValue::from(slice.instance.to_string()),
    );
    if let Some(t) = &slice.image_type {
        put(tags::IMAGE_TYPE, VR::CS, PrimitiveValue::Strs(t.clone().into()));
    }
    if let Some(m) = &slice.manufacturer {
        put(tags::MANUFACTURER, VR::LO, PrimitiveValue::from(m.as_str()));
    }
    if let Some(k) = slice.kvp {
        put(tags::KVP, VR::DS, ds(&[k]));
    }
    if let Some(t) = slice.slice_thickness_mm {
        put(tags::SLICE_THICKNESS, VR::DS, ds(&[t]));
    }
    if let Some(k) = &slice.kernel {
        put(tags::CONVOLUTION_KERNEL, VR::SH, PrimitiveValue::from(k.as_str()));
    }
    put(tags::IMAGE_POSITION_PATIENT, VR::DS, ds(&slice.position));
    if let Some(o) = &slice.orientation {
        put(tags::IMAGE_ORIENTATION_PATIENT, VR::DS, ds(o));
    }
    put(tags::SAMPLES_PER_PIXEL, VR::US, PrimitiveValue::from(1u16));
    put(
        tags::PHOTOMETRIC_INTERPRETATION,
        VR::CS,
        PrimitiveValue::from("MONOCHROME2"),
    );
    put(tags::ROWS, VR::US, PrimitiveValue::from(slice.rows as u16));
    put(tags::COLUMNS, VR::US, PrimitiveValue::from(slice.cols as u16));
    put(tags::PIXEL_SPACING, VR::DS, ds(&slice.pixel_spacing));
    put(tags::BITS_ALLOCATED, VR::US, PrimitiveValue::from(16u16));
    put(tags::BITS_STORED, VR::US, PrimitiveValue::from(16u16));
    put(tags::HIGH_BIT, VR::US, PrimitiveValue::from(15u16));
    put(tags::PIXEL_REPRESENTATION, VR::US, PrimitiveValue::from(1u16));
    put(tags::RESCALE_INTERCEPT, VR::DS, ds(&[slice.rescale_intercept]));
    put(tags::RESCALE_SLOPE, VR::DS, ds(&[slice.rescale_slope]));
    let words: Vec<u16> = slice.raw.iter().map(|&v| v as u16).collect();
    put(tags::PIXEL_DATA, VR::OW, PrimitiveValue::U16(words.into()));

    let ts = if slice.implicit_vr {
        uids::IMPLICIT_VR_LITTLE_ENDIAN
    } else {
        uids::EXPLICIT_VR_LITTLE_ENDIAN
    };
    let file = obj
        .with_meta(FileMetaTableBuilder::new().transfer_syntax(ts))
        .map_err(|e| IngestError::parse(path, e))?;
    file.write_to_file(path)
        .map_err(|e| IngestError::parse(path, e))?;
    Ok(())
}
