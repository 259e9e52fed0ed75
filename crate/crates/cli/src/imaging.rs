//! `aaq` and `bmd`: load → filter → pipeline → report.

use std::fs;
use std::path::Path;

use ctquant_core::aaq::{run_aaq, write_profile_csv, ANEURYSM_THRESHOLD_MM};
use ctquant_core::bmd::{run_bmd, BmdError};
use ctquant_core::ingest::{
    aaq_series_filter, bmd_series_filter, load_series, read_mask, read_volume, FilterDecision,
    IngestError,
};
use ctquant_core::model::{lumbar_label_names, single_label_names};
use ctquant_core::{LabelMask, PipelineConfig, SeriesMeta, Volume};
use serde_json::json;

use crate::args::{AaqArgs, BmdArgs, VolumeSource};
use crate::config::LoadedConfig;
use crate::report::{to_rounded_value, Exit, Outcome, Report, StepStatus};

enum LoadError {
    Ingest(IngestError),
    Meta(String),
}

impl LoadError {
    fn exit(&self) -> Exit {
        match self {
            LoadError::Ingest(e) if e.is_rejection() => Exit::Rejected,
            _ => Exit::PipelineError,
        }
    }

    fn reason(&self) -> String {
        match self {
            LoadError::Ingest(e) => e.reason(),
            LoadError::Meta(_) => "ParseError".into(),
        }
    }

    fn message(&self) -> String {
        match self {
            LoadError::Ingest(e) => e.to_string(),
            LoadError::Meta(m) => m.clone(),
        }
    }
}

fn load_source(
    source: &VolumeSource,
    meta: Option<&Path>,
    config: &PipelineConfig,
) -> Result<(Volume, Option<SeriesMeta>), LoadError> {
    if let Some(dir) = &source.dicom {
        let (v, m) = load_series::<f64>(dir, config.slice_gap_tolerance).map_err(LoadError::Ingest)?;
        return Ok((v, Some(m)));
    }
    let path = source.volume.as_ref().expect("clap enforces one source");
    let volume = read_volume::<f64>(path).map_err(LoadError::Ingest)?;
    let meta = match meta {
        None => None,
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| LoadError::Meta(format!("{}: {e}", p.display())))?;
            let m: SeriesMeta = serde_json::from_str(&text)
                .map_err(|e| LoadError::Meta(format!("{}: {e}", p.display())))?;
            Some(m)
        }
    };
    Ok((volume, meta))
}

fn describe_inputs(volume: &Volume, meta: Option<&SeriesMeta>, source: &VolumeSource) -> serde_json::Value {
    json!({
        "source": if source.dicom.is_some() { "dicom" } else { "volume" },
        "dims": volume.dims().as_array(),
        "spacing_mm": volume.spacing(),
        "origin_mm": volume.origin(),
        "orientation": volume.orientation().cosines(),
        "series_meta": meta,
    })
}

fn source_path(source: &VolumeSource) -> (&'static str, &Path) {
    match (&source.dicom, &source.volume) {
        (Some(d), _) => ("dicom", d.as_path()),
        (_, Some(v)) => ("volume", v.as_path()),
        _ => unreachable!("clap enforces one source"),
    }
}

/// Shared front half: digests, output dir, volume + masks, filter.
/// `Err` carries the finished outcome of an early stop.
fn prepare(
    rep: &mut Report,
    source: &VolumeSource,
    meta: Option<&Path>,
    masks: [(&str, &Path, std::collections::BTreeMap<u8, String>); 2],
    filter: fn(&SeriesMeta, &PipelineConfig) -> FilterDecision,
    config: &PipelineConfig,
    out: &Path,
    later_steps: &[&str],
) -> Result<(Volume, LabelMask, LabelMask), Outcome> {
    let (role, path) = source_path(source);
    rep.add_input(role, path);
    if let Some(m) = meta {
        rep.add_input("meta", m);
    }
    for (role, path, _) in &masks {
        rep.add_input(role, path);
    }
    if let Err(e) = fs::create_dir_all(out) {
        eprintln!("ctquant: cannot create {}: {e}", out.display());
        return Err(Outcome {
            exit: Exit::PipelineError,
            reason: Some("IoError".into()),
        });
    }

    let mut pending = vec!["filter"];
    pending.extend_from_slice(later_steps);
    let mut paths = vec![path];
    paths.extend(meta);
    paths.extend(masks.iter().map(|m| m.1));
    if let Some(missing) = paths.iter().find(|p| !p.exists()) {
        let msg = format!("{}: no such file or directory", missing.display());
        rep.fail(Exit::PipelineError, "load", "IoError", msg, &pending);
        return Err(rep.finish(out));
    }
    let (volume, series_meta) = match load_source(source, meta, config) {
        Ok(v) => v,
        Err(e) => {
            rep.fail(e.exit(), "load", &e.reason(), e.message(), &pending);
            return Err(rep.finish(out));
        }
    };
    let [(_, a_path, a_names), (_, b_path, b_names)] = masks;
    let loaded = read_mask(a_path, a_names).and_then(|a| Ok((a, read_mask(b_path, b_names)?)));
    let (mask_a, mask_b) = match loaded {
        Ok(m) => m,
        Err(e) => {
            let le = LoadError::Ingest(e);
            rep.fail(le.exit(), "load", &le.reason(), le.message(), &pending);
            return Err(rep.finish(out));
        }
    };
    rep.step("load", StepStatus::Ok);
    rep.inputs = describe_inputs(&volume, series_meta.as_ref(), source);

    match &series_meta {
        None => {
            rep.step("filter", StepStatus::Skipped);
            rep.qc.notes.push("no series metadata supplied; acquisition filter skipped".into());
        }
        Some(m) => {
            let decision = filter(m, config);
            rep.qc.filter = Some(serde_json::to_value(&decision).expect("decision serialises"));
            if !decision.accepted() {
                let reasons: Vec<String> = decision.reasons().iter().map(|r| r.to_string()).collect();
                let msg = format!("series rejected: {}", reasons.join(", "));
                rep.fail(Exit::Rejected, "filter", &reasons.join(","), msg, later_steps);
                return Err(rep.finish(out));
            }
            rep.step("filter", StepStatus::Ok);
        }
    }
    Ok((volume, mask_a, mask_b))
}

pub fn cmd_aaq(args: &AaqArgs, cfg: &LoadedConfig) -> Outcome {
    let config = &cfg.config;
    let mut rep = Report::new("aaq", cfg, None);
    let masks = [
        ("aorta_mask", args.aorta_mask.as_path(), single_label_names("aorta")),
        ("spine_mask", args.spine_mask.as_path(), lumbar_label_names()),
    ];
    let (volume, aorta, spine) = match prepare(
        &mut rep,
        &args.source,
        args.meta.as_deref(),
        masks,
        aaq_series_filter,
        config,
        &args.out,
        &["measure", "emit"],
    ) {
        Ok(v) => v,
        Err(o) => return o,
    };

    let report = match run_aaq(&volume, &aorta, &spine, config) {
        Ok(r) => r,
        Err(e) => {
            let step = match e {
                ctquant_core::aaq::AaqError::SpineIncomplete(_) => "crop",
                ctquant_core::aaq::AaqError::Geometry(_) => "align",
                _ => "measure",
            };
            let pending: &[&str] = if step == "crop" { &["measure", "emit"] } else { &["emit"] };
            rep.fail(Exit::PipelineError, step, e.reason(), e.to_string(), pending);
            return rep.finish(&args.out);
        }
    };
    rep.step("crop", StepStatus::Ok);
    rep.step("measure", StepStatus::Ok);

    let mut buf = Vec::new();
    let written = write_profile_csv(&report, &mut buf)
        .and_then(|_| fs::write(args.out.join("profile.csv"), &buf));
    if let Err(e) = written {
        rep.fail(Exit::PipelineError, "emit", "IoError", format!("profile.csv: {e}"), &[]);
        return rep.finish(&args.out);
    }
    rep.step("emit", StepStatus::Ok);

    let measured = report.profile.iter().filter(|e| e.minor_mm.is_some()).count();
    rep.outputs = json!({
        "max_diameter_mm": report.max_diameter_mm,
        "max_slice_index": report.max_slice_index,
        "max_slice_fit": to_rounded_value(&report.max_slice_fit),
        "crop_range": report.crop_range,
        "aneurysm_flag": report.aneurysm_flag,
        "profile_file": "profile.csv",
        "profile_slices": report.profile.len(),
        "profile_slices_measured": measured,
    });
    rep.verdicts = json!({
        "aneurysm": {
            "value": report.max_diameter_mm,
            "threshold_mm": ANEURYSM_THRESHOLD_MM,
            "rule": "diameter > threshold",
            "flag": report.aneurysm_flag,
        }
    });
    rep.finish(&args.out)
}

fn bmd_step(e: &BmdError) -> &'static str {
    match e {
        BmdError::VertebraMissing(_) | BmdError::RoiTooSmall { .. } => "vertebral_roi",
        BmdError::VatMissing | BmdError::AirRoiOutOfField { .. } => "reference_roi",
        BmdError::AirQcFail { .. } => "air_qc",
        BmdError::DegenerateCalibration { .. } | BmdError::ImplausibleCalibration { .. } => {
            "calibration"
        }
        BmdError::Geometry(_) => "align",
    }
}

const BMD_STEPS: [&str; 6] = [
    "vertebral_roi",
    "reference_roi",
    "air_qc",
    "calibration",
    "recalibrate",
    "classify",
];

pub fn cmd_bmd(args: &BmdArgs, cfg: &LoadedConfig) -> Outcome {
    let config = &cfg.config;
    let mut rep = Report::new("bmd", cfg, None);
    let masks = [
        ("spine_mask", args.spine_mask.as_path(), lumbar_label_names()),
        ("vat_mask", args.vat_mask.as_path(), single_label_names("vat")),
    ];
    let (volume, spine, vat) = match prepare(
        &mut rep,
        &args.source,
        args.meta.as_deref(),
        masks,
        bmd_series_filter,
        config,
        &args.out,
        &BMD_STEPS,
    ) {
        Ok(v) => v,
        Err(o) => return o,
    };

    let result = match run_bmd(&volume, &spine, &vat, config) {
        Ok(r) => r,
        Err(e) => {
            let step = bmd_step(&e);
            let at = BMD_STEPS.iter().position(|s| *s == step).unwrap_or(0);
            for s in &BMD_STEPS[..at] {
                rep.step(s, StepStatus::Ok);
            }
            let pending = if step == "align" { &BMD_STEPS[..] } else { &BMD_STEPS[at + 1..] };
            rep.fail(Exit::PipelineError, step, e.reason(), e.to_string(), pending);
            if let BmdError::AirQcFail { mean_air_hu } = e {
                rep.outputs = json!({ "mean_air_hu": mean_air_hu });
            }
            return rep.finish(&args.out);
        }
    };
    for s in BMD_STEPS {
        rep.step(s, StepStatus::Ok);
    }
    rep.outputs = to_rounded_value(&result);
    rep.verdicts = json!({
        "bmd": {
            "value": result.mean_recal_hu,
            "threshold_hu": config.bmd_hu_threshold,
            "rule": "Low when mean recalibrated HU < threshold",
            "flag": result.flag,
        }
    });
    rep.finish(&args.out)
}
