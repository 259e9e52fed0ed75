//! Series ingestion: DICOM slice directories, mask and volume files, and the
//! acceptance filters that run before either pipeline.

mod dicom;
mod filter;
mod files;

use std::path::PathBuf;

use thiserror::Error;

use crate::model::ModelError;

pub use dicom::{load_series, write_fixture_slice, FixtureSlice};
pub use files::{
    is_nifti_path, read_mask, read_raw_mask, read_raw_volume, read_volume, write_mask,
    write_raw_mask, write_raw_volume, write_volume, RAW_HEADER_LEN,
};
pub use filter::{aaq_series_filter, bmd_series_filter, is_axial, FilterDecision, FilterReason};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("inconsistent series: {0}")]
    InconsistentSeries(String),
    #[error("{path}: missing required tag {tag}")]
    MissingTag { path: PathBuf, tag: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no DICOM files in {0}")]
    NoSlices(PathBuf),
    #[error(transparent)]
    Validation(#[from] ModelError),
}

impl IngestError {
    pub fn reason(&self) -> String {
        match self {
            IngestError::Parse { .. } | IngestError::NoSlices(_) => "ParseError".into(),
            IngestError::InconsistentSeries(_) => FilterReason::InconsistentSeries.to_string(),
            IngestError::MissingTag { tag, .. } => FilterReason::MissingTag(tag.clone()).to_string(),
            IngestError::Io { .. } => "IoError".into(),
            IngestError::Validation(e) => e.reason().into(),
        }
    }

    /// True for failures that the filters report as rejection reason codes.
    pub fn is_rejection(&self) -> bool {
        matches!(
            self,
            IngestError::InconsistentSeries(_) | IngestError::MissingTag { .. }
        )
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        IngestError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.into(),
            source,
        }
    }
}
