//! Mask and volume files.
//!
//! Raw layout, all little-endian: `nx, ny, nz` as u32, then `sx, sy, sz` as
//! f64 (mm), then one value per voxel with i fastest, then j, then k. Masks
//! store one u8 label per voxel; volumes store one f32 HU value per voxel.
//! Paths ending in `.nii` or `.nii.gz` are read and written as NIfTI-1.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array3, Ix3};
use nifti::writer::WriterOptions;
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions};

use super::IngestError;
use crate::model::{Dims, LabelMask, Orientation, Volume};
use crate::scalar::Scalar;

pub const RAW_HEADER_LEN: usize = 3 * 4 + 3 * 8;

pub fn is_nifti_path(path: &Path) -> bool {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

fn raw_header(dims: Dims, spacing: [f64; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN);
    for n in dims.as_array() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

fn parse_raw_header(path: &Path, bytes: &[u8]) -> Result<(Dims, [f64; 3]), IngestError> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(IngestError::parse(path, "file shorter than raw header"));
    }
    let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let dims = Dims::new(u(0), u(4), u(8));
    let spacing = [f(12), f(20), f(28)];
    if dims.is_empty() || spacing.iter().any(|s| !(*s > 0.0)) {
        return Err(IngestError::parse(
            path,
            format!("invalid raw header dims {dims} spacing {spacing:?}"),
        ));
    }
    Ok((dims, spacing))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IngestError> {
    fs::read(path).map_err(|e| IngestError::io(path, e))
}

pub fn read_raw_mask(
    path: &Path,
    label_names: BTreeMap<u8, String>,
) -> Result<LabelMask, IngestError> {
    let bytes = read_bytes(path)?;
    let (dims, spacing) = parse_raw_header(path, &bytes)?;
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() != dims.len() {
        return Err(IngestError::parse(
            path,
            format!("{} label bytes, header needs {}", body.len(), dims.len()),
        ));
    }
    Ok(LabelMask::new(dims, body.to_vec(), label_names)?.with_spacing(spacing))
}

pub fn write_raw_mask(path: &Path, mask: &LabelMask, spacing: [f64; 3]) -> Result<(), IngestError> {
    let mut out = raw_header(mask.dims(), spacing);
    out.extend_from_slice(mask.labels());
    fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

/// Raw volumes carry no orientation; they load with identity cosines.
pub fn read_raw_volume<T: Scalar>(path: &Path) -> Result<Volume<T>, IngestError> {
    let bytes = read_bytes(path)?;
    let (dims, spacing) = parse_raw_header(path, &bytes)?;
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() != dims.len() * 4 {
        return Err(IngestError::parse(
            path,
            format!("{} data bytes, header needs {}", body.len(), dims.len() * 4),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Ok(Volume::from_data(dims, spacing.map(T::of), data)?)
}

pub fn write_raw_volume<T: Scalar>(path: &Path, volume: &Volume<T>) -> Result<(), IngestError> {
    let mut out = raw_header(volume.dims(), volume.spacing().map(|s| s.as_f64()));
    out.reserve(volume.data().len() * 4);
    for v in volume.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

/// Reads NIfTI voxels as f64 in (i, j, k) order with i fastest, plus the
/// grid geometry converted from RAS to LPS.
fn read_nifti(path: &Path) -> Result<(Dims, [f64; 3], [f64; 3], [f64; 6], Vec<f64>), IngestError> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| IngestError::parse(path, e))?;
    let h = obj.header().clone();
    if h.dim[0] < 3 || (h.dim[0] > 3 && h.dim[4..=h.dim[0] as usize].iter().any(|&d| d > 1)) {
        return Err(IngestError::parse(
            path,
            format!("expected a 3D image, got dim {:?}", h.dim),
        ));
    }
    let dims = Dims::new(h.dim[1] as usize, h.dim[2] as usize, h.dim[3] as usize);
    let arr = obj
        .into_volume()
        .into_ndarray::<f64>()
        .map_err(|e| IngestError::parse(path, e))?;
    let arr = arr
        .into_dimensionality::<Ix3>()
        .ok()
        .filter(|a| a.dim() == (dims.nx, dims.ny, dims.nz))
        .ok_or_else(|| IngestError::parse(path, "unexpected voxel array shape"))?;
    let mut data = Vec::with_capacity(dims.len());
    for k in 0..dims.nz {
        for j in 0..dims.ny {
            for i in 0..dims.nx {
                data.push(arr[[i, j, k]]);
            }
        }
    }

    let (spacing, origin, cosines) = if h.sform_code > 0 {
        let rows = [h.srow_x, h.srow_y, h.srow_z];
        // RAS to LPS flips the first two patient axes.
        let flip = [-1.0, -1.0, 1.0];
        let column = |c: usize| -> [f64; 3] {
            [0, 1, 2].map(|r| rows[r][c] as f64 * flip[r])
        };
        let (ci, cj, ck) = (column(0), column(1), column(2));
        let len = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let spacing = [len(ci), len(cj), len(ck)];
        if spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(IngestError::parse(path, "degenerate sform"));
        }
        let origin = [0, 1, 2].map(|r| rows[r][3] as f64 * flip[r]);
        let cos = [
            ci[0] / spacing[0],
            ci[1] / spacing[0],
            ci[2] / spacing[0],
            cj[0] / spacing[1],
            cj[1] / spacing[1],
            cj[2] / spacing[1],
        ];
        (spacing, origin, cos)
    } else {
        (
            [h.pixdim[1] as f64, h.pixdim[2] as f64, h.pixdim[3] as f64],
            [0.0; 3],
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )
    };
    Ok((dims, spacing, origin, cosines, data))
}

fn nifti_header(dims: Dims, spacing: [f64; 3], origin: [f64; 3], cos: [f64; 6]) -> NiftiHeader {
    let mut h = NiftiHeader::default();
    h.pixdim = [
        1.0,
        spacing[0] as f32,
        spacing[1] as f32,
        spacing[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    h.dim = [3, dims.nx as u16, dims.ny as u16, dims.nz as u16, 1, 1, 1, 1];
    h.xyzt_units = 2;
    h.sform_code = 1;
    h.qform_code = 0;
    let row = [cos[0], cos[1], cos[2]];
    let col = [cos[3], cos[4], cos[5]];
    let n = crate::model::cross(row, col);
    let flip = [-1.0, -1.0, 1.0];
    let srow = |r: usize| -> [f32; 4] {
        [
            (flip[r] * row[r] * spacing[0]) as f32,
            (flip[r] * col[r] * spacing[1]) as f32,
            (flip[r] * n[r] * spacing[2]) as f32,
            (flip[r] * origin[r]) as f32,
        ]
    };
    h.srow_x = srow(0);
    h.srow_y = srow(1);
    h.srow_z = srow(2);
    h
}

fn to_array3<A: Copy>(dims: Dims, values: &[A]) -> Array3<A> {
    Array3::from_shape_fn((dims.nx, dims.ny, dims.nz), |(i, j, k)| {
        values[dims.index(i, j, k)]
    })
}

/// Reads a label mask from NIfTI or raw format.
pub fn read_mask(path: &Path, label_names: BTreeMap<u8, String>) -> Result<LabelMask, IngestError> {
    if !is_nifti_path(path) {
        return read_raw_mask(path, label_names);
    }
    let (dims, spacing, _, _, data) = read_nifti(path)?;
    let labels = data
        .iter()
        .map(|&v| {
            let r = v.round();
            if (v - r).abs() > 1e-6 || !(0.0..=255.0).contains(&r) {
                Err(IngestError::parse(path, format!("label value {v} is not in 0..=255")))
            } else {
                Ok(r as u8)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabelMask::new(dims, labels, label_names)?.with_spacing(spacing))
}

pub fn write_mask(path: &Path, mask: &LabelMask, spacing: [f64; 3]) -> Result<(), IngestError> {
    if !is_nifti_path(path) {
        return write_raw_mask(path, mask, spacing);
    }
    let h = nifti_header(mask.dims(), spacing, [0.0; 3], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    WriterOptions::new(path)
        .reference_header(&h)
        .write_nifti(&to_array3(mask.dims(), mask.labels()))
        .map_err(|e| IngestError::parse(path, e))
}

/// Reads a HU volume from NIfTI or raw format.
pub fn read_volume<T: Scalar>(path: &Path) -> Result<Volume<T>, IngestError> {
    if !is_nifti_path(path) {
        return read_raw_volume(path);
    }
    let (dims, spacing, origin, cos, data) = read_nifti(path)?;
    Ok(Volume::new(
        dims,
        spacing.map(T::of),
        origin.map(T::of),
        Orientation::from_cosines(cos.map(T::of)),
        data.into_iter().map(T::of).collect(),
    )?)
}

pub fn write_volume<T: Scalar>(path: &Path, volume: &Volume<T>) -> Result<(), IngestError> {
    if !is_nifti_path(path) {
        return write_raw_volume(path, volume);
    }
    let h = nifti_header(
        volume.dims(),
        volume.spacing().map(|s| s.as_f64()),
        volume.origin().map(|s| s.as_f64()),
        volume.orientation().cosines().map(|s| s.as_f64()),
    );
    let values: Vec<f32> = volume.data().iter().map(|v| v.as_f64() as f32).collect();
    WriterOptions::new(path)
        .reference_header(&h)
        .write_nifti(&to_array3(volume.dims(), &values))
        .map_err(|e| IngestError::parse(path, e))
}
