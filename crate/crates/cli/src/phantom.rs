//! `phantom cylinder|bmd`: synthetic inputs in the ingest formats.

use std::fs;
use std::path::Path;

use ctquant_core::aaq::ANEURYSM_THRESHOLD_MM;
use ctquant_core::ingest::{write_mask, write_volume};
use ctquant_core::phantom::{
    make_aaq_phantom, make_bmd_phantom, phantom_meta, BmdLayout, BulgeSpec,
};
use ctquant_core::{BmdPhantomSpec, CylinderSpec, Dims};
use serde_json::json;

use crate::args::{BmdPhantomArgs, CylinderArgs, List};
use crate::config::LoadedConfig;
use crate::report::{write_json, Exit, Outcome};

fn fail(what: &str, e: impl std::fmt::Display) -> Outcome {
    eprintln!("ctquant phantom: {what}: {e}");
    Outcome {
        exit: Exit::PipelineError,
        reason: Some("PhantomError".into()),
    }
}

fn ok() -> Outcome {
    Outcome {
        exit: Exit::Ok,
        reason: None,
    }
}

fn file(out: &Path, stem: &str, ext: &str) -> std::path::PathBuf {
    out.join(format!("{stem}.{ext}"))
}

pub fn cmd_cylinder(a: &CylinderArgs) -> Outcome {
    let [nx, ny, nz] = a.dims.0;
    let dims = Dims::new(nx, ny, nz);
    let spacing = a.spacing.0;
    let center = match a.center {
        Some(c) => c.0,
        None => std::array::from_fn(|i| (dims.as_array()[i] as f64 - 1.0) * spacing[i] / 2.0),
    };
    let mut spec = CylinderSpec::new(a.diameter, a.tilt, center);
    spec.azimuth_deg = a.azimuth;
    if let (Some(k), Some(d)) = (a.bulge_slice, a.bulge_diameter) {
        spec.bulge = Some(BulgeSpec::new(k, d));
    }
    let spine = match a.spine_slices {
        Some(List([lo, hi])) => (lo, hi),
        None => (1, dims.nz.saturating_sub(2)),
    };
    let p = match make_aaq_phantom(&spec, spacing, dims, spine) {
        Ok(p) => p,
        Err(e) => return fail("cylinder", e),
    };
    if let Err(e) = fs::create_dir_all(&a.out) {
        return fail("output directory", e);
    }
    let ext = a.format.extension();
    let written = write_volume(&file(&a.out, "volume", ext), &p.volume)
        .and_then(|_| write_mask(&file(&a.out, "aorta", ext), &p.aorta, spacing))
        .and_then(|_| write_mask(&file(&a.out, "spine", ext), &p.spine, spacing));
    if let Err(e) = written {
        return fail("write", e);
    }
    let truth = json!({
        "kind": "cylinder",
        "spec": spec,
        "dims": dims.as_array(),
        "spacing_mm": spacing,
        "spine_slices": [spine.0, spine.1],
        "true_diameter_mm": p.true_diameter_mm,
        "bulge_slice_index": a.bulge_slice,
        "expected_aneurysm": p.true_diameter_mm > ANEURYSM_THRESHOLD_MM,
    });
    if let Err(e) = write_json(&a.out.join("meta.json"), &p.meta)
        .and_then(|_| write_json(&a.out.join("truth.json"), &truth))
    {
        return fail("write", format!("{e:#}"));
    }
    ok()
}

pub fn cmd_bmd_phantom(a: &BmdPhantomArgs, cfg: &LoadedConfig) -> Outcome {
    let mut spec = BmdPhantomSpec::uniform(a.hu.0);
    spec.vat_hu = a.vat_hu;
    spec.air_hu = a.air_hu;
    spec.noise_sigma = a.noise;
    spec.seed = a.seed;
    spec.miscal = a.miscal.map(|List([s, i])| (s, i));
    spec.layout = BmdLayout::default();
    let p = match make_bmd_phantom(&spec, cfg.config.bmd_hu_threshold) {
        Ok(p) => p,
        Err(e) => return fail("bmd", e),
    };
    if let Err(e) = fs::create_dir_all(&a.out) {
        return fail("output directory", e);
    }
    let spacing = spec.layout.spacing;
    let ext = a.format.extension();
    let written = write_volume(&file(&a.out, "volume", ext), &p.volume)
        .and_then(|_| write_mask(&file(&a.out, "spine", ext), &p.spine, spacing))
        .and_then(|_| write_mask(&file(&a.out, "vat", ext), &p.vat, spacing));
    if let Err(e) = written {
        return fail("write", e);
    }
    let truth = json!({
        "kind": "bmd",
        "spec": spec,
        "threshold_hu": cfg.config.bmd_hu_threshold,
        "truth": p.truth,
    });
    if let Err(e) = write_json(&a.out.join("meta.json"), &phantom_meta(spacing[2]))
        .and_then(|_| write_json(&a.out.join("truth.json"), &truth))
    {
        return fail("write", format!("{e:#}"));
    }
    ok()
}
