use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exactly `N` comma-separated values, e.g. `128,80,30`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct List<T, const N: usize>(pub [T; N]);

impl<T: FromStr + Copy + Default, const N: usize> FromStr for List<T, N> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != N {
            return Err(format!("expected {N} comma-separated values, got {}", parts.len()));
        }
        let mut out = [T::default(); N];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.parse().map_err(|_| format!("cannot parse {p:?}"))?;
        }
        Ok(Self(out))
    }
}

impl<T: fmt::Display, const N: usize> fmt::Display for List<T, N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctquant", version, about = "CT aortic diameter and vertebral density quantification")]
pub struct Cli {
    /// Flat key = value pipeline config.
    #[arg(long, global = true, env = "CT_QUANT_CONFIG")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Maximal aortic diameter over the lumbar range.
    Aaq(AaqArgs),
    /// Vertebral density flag with VAT/air calibration.
    Bmd(BmdArgs),
    /// Agreement and diagnostic-accuracy metrics with acceptance verdicts.
    Eval(EvalArgs),
    /// Synthetic inputs with known ground truth.
    Phantom {
        #[command(subcommand)]
        kind: PhantomKind,
    },
    /// Runs a list of aaq/bmd jobs concurrently.
    Batch(BatchArgs),
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct VolumeSource {
    /// Directory of single-frame DICOM slices.
    #[arg(long)]
    pub dicom: Option<PathBuf>,
    /// NIfTI (.nii, .nii.gz) or raw volume.
    #[arg(long)]
    pub volume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AaqArgs {
    #[command(flatten)]
    pub source: VolumeSource,
    /// Series metadata JSON for --volume inputs.
    #[arg(long, conflicts_with = "dicom")]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub aorta_mask: PathBuf,
    #[arg(long)]
    pub spine_mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BmdArgs {
    #[command(flatten)]
    pub source: VolumeSource,
    /// Series metadata JSON for --volume inputs.
    #[arg(long, conflicts_with = "dicom")]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub spine_mask: PathBuf,
    #[arg(long)]
    pub vat_mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Aaq,
    Bmd,
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("table").required(true).multiple(false))]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    /// CSV: id,model,truth[,rater…][,key=value…].
    #[arg(long, group = "table")]
    pub pairs: Option<PathBuf>,
    /// CSV: key,group,tp,fp,fn,tn.
    #[arg(long, group = "table")]
    pub confusion: Option<PathBuf>,
    /// Subgroup key; repeat for several.
    #[arg(long = "subgroup")]
    pub subgroups: Vec<String>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub n_boot: usize,
    #[arg(long, default_value_t = 9_999)]
    pub n_perm: usize,
    /// T-scores strictly below this count as low density.
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub t_score_cutoff: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    Nifti,
    Raw,
}

impl FileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FileFormat::Nifti => "nii.gz",
            FileFormat::Raw => "raw",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum PhantomKind {
    /// Straight or fusiform cylinder with an L1–L5 spine mask.
    Cylinder(CylinderArgs),
    /// Vertebral density phantom with VAT and air regions.
    Bmd(BmdPhantomArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CylinderArgs {
    #[arg(long)]
    pub diameter: f64,
    #[arg(long, default_value_t = 0.0)]
    pub tilt: f64,
    #[arg(long, default_value_t = 0.0)]
    pub azimuth: f64,
    /// nx,ny,nz
    #[arg(long, default_value = "96,96,40")]
    pub dims: List<usize, 3>,
    /// sx,sy,sz in mm
    #[arg(long, default_value = "1,1,1")]
    pub spacing: List<f64, 3>,
    /// Axis point in mm; the volume centre if omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub center: Option<List<f64, 3>>,
    #[arg(long, requires = "bulge_diameter")]
    pub bulge_slice: Option<usize>,
    #[arg(long, requires = "bulge_slice")]
    pub bulge_diameter: Option<f64>,
    /// First and last spine slice; 1..nz-2 if omitted.
    #[arg(long)]
    pub spine_slices: Option<List<usize, 2>>,
    #[arg(long, value_enum, default_value_t = FileFormat::Nifti)]
    pub format: FileFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BmdPhantomArgs {
    /// Nominal HU for L1,L2,L3,L4.
    #[arg(long, allow_hyphen_values = true)]
    pub hu: List<f64, 4>,
    #[arg(long, default_value_t = -95.0, allow_hyphen_values = true)]
    pub vat_hu: f64,
    #[arg(long, default_value_t = -1000.0, allow_hyphen_values = true)]
    pub air_hu: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Whole-volume slope,intercept applied last.
    #[arg(long, allow_hyphen_values = true)]
    pub miscal: Option<List<f64, 2>>,
    #[arg(long, value_enum, default_value_t = FileFormat::Nifti)]
    pub format: FileFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    /// One job per line: NAME aaq|bmd ARGS… (without --out).
    #[arg(long, visible_alias = "batch")]
    pub list: PathBuf,
    /// Each job writes into OUT/NAME.
    #[arg(long)]
    pub out: PathBuf,
}
