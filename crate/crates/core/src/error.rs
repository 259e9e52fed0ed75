use thiserror::Error;

use crate::aaq::AaqError;
use crate::bmd::BmdError;
use crate::ingest::IngestError;
use crate::model::ModelError;
use crate::phantom::PhantomError;
use crate::stats::StatsError;

/// Union of the per-module errors, for callers that drive several stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Aaq(#[from] AaqError),
    #[error(transparent)]
    Bmd(#[from] BmdError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl Error {
    /// Stable reason code used in reports and exit-code mapping.
    pub fn reason(&self) -> String {
        match self {
            Error::Model(e) => e.reason().to_string(),
            Error::Ingest(e) => e.reason(),
            Error::Aaq(e) => e.reason().to_string(),
            Error::Bmd(e) => e.reason().to_string(),
            Error::Phantom(_) => "SpecError".to_string(),
            Error::Stats(e) => e.reason().to_string(),
        }
    }
}
