//! Validation statistics: agreement, classification, tests and sample size.

mod agreement;
mod classification;
mod input;
mod power;
mod subgroup;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{quantile_sorted, Scalar};

pub use agreement::{
    bland_altman, icc, icc_gap, icc_point, mae, pearson, BlandAltman, IccForm, IccResult, Ratings,
};
pub use classification::{
    auroc, auroc_point, binary_metrics, clopper_pearson, BinaryMetrics, Confusion,
};
pub use input::{read_confusion_csv, read_pairs_csv, ConfusionRow};
pub use power::{
    mae_permutation_test, sample_size_mae, sample_size_proportion, PermutationResult,
};
pub use subgroup::{
    subgroup_confusion, subgroup_paired, ConfusionSubgroupRow, PairedSubgroupRow,
    SUBGROUP_FLAG_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no data: {0}")]
    NoData(String),
    #[error("subjects do not align: {0}")]
    Alignment(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl StatsError {
    pub fn reason(&self) -> &'static str {
        match self {
            StatsError::NoData(_) => "NoData",
            StatsError::Alignment(_) => "AlignmentError",
            StatsError::Infeasible(_) => "Infeasible",
            StatsError::InvalidInput(_) => "InvalidInput",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CiMethod {
    BootstrapPercentile,
    ClopperPearson,
    FisherZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate<T> {
    pub point: T,
    pub lo: T,
    pub hi: T,
    pub level: f64,
    pub method: CiMethod,
}

impl<T: Scalar> IntervalEstimate<T> {
    pub(crate) fn from_f64(point: f64, lo: f64, hi: f64, level: f64, method: CiMethod) -> Self {
        Self {
            point: T::of(point),
            lo: T::of(lo),
            hi: T::of(hi),
            level,
            method,
        }
    }
}

/// Resampling settings. Results are a pure function of these and the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: 10_000,
            seed: 0,
            level: 0.95,
        }
    }
}

impl BootstrapConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Generator for resample `b`: one ChaCha stream per resample, so the
/// outcome does not depend on thread scheduling.
pub(crate) fn resample_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// Percentile interval of `stat` over index resamples of `0..n`.
///
/// Resamples where `stat` is undefined are dropped; `None` if all are.
pub(crate) fn bootstrap_percentile<F>(n: usize, cfg: &BootstrapConfig, stat: F) -> Option<(f64, f64)>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    use rand::RngExt;
    if n == 0 || cfg.n_boot == 0 {
        return None;
    }
    let mut values: Vec<f64> = (0..cfg.n_boot)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = resample_rng(cfg.seed, b);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            stat(&idx)
        })
        .collect();
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let alpha = 1.0 - cfg.level;
    Some((
        quantile_sorted(&values, alpha / 2.0)?,
        quantile_sorted(&values, 1.0 - alpha / 2.0)?,
    ))
}

/// One subject: model output, reference value and optional rater readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRecord<T> {
    pub id: String,
    pub model_value: T,
    pub truth_value: T,
    pub rater_values: Option<Vec<T>>,
    pub subgroups: BTreeMap<String, String>,
}

impl<T: Scalar> PairedRecord<T> {
    pub fn new(id: impl Into<String>, model_value: T, truth_value: T) -> Self {
        Self {
            id: id.into(),
            model_value,
            truth_value,
            rater_values: None,
            subgroups: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedMeasurements<T> {
    records: Vec<PairedRecord<T>>,
}

impl<T: Scalar> PairedMeasurements<T> {
    /// Requires at least one record; rater lists must all be present or all
    /// absent, with a common length of at least two.
    pub fn new(records: Vec<PairedRecord<T>>) -> Result<Self, StatsError> {
        if records.is_empty() {
            return Err(StatsError::NoData("no paired records".into()));
        }
        let lens: Vec<Option<usize>> = records
            .iter()
            .map(|r| r.rater_values.as_ref().map(Vec::len))
            .collect();
        if let Some(first) = lens[0] {
            if first < 2 {
                return Err(StatsError::InvalidInput("fewer than two raters".into()));
            }
        }
        if lens.iter().any(|l| *l != lens[0]) {
            return Err(StatsError::InvalidInput(
                "rater counts differ between records".into(),
            ));
        }
        for r in &records {
            let finite = r.model_value.is_finite()
                && r.truth_value.is_finite()
                && r.rater_values.iter().flatten().all(|v| v.is_finite());
            if !finite {
                return Err(StatsError::InvalidInput(format!(
                    "non-finite value in record {}",
                    r.id
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn from_pairs(model: &[T], truth: &[T]) -> Result<Self, StatsError> {
        if model.len() != truth.len() {
            return Err(StatsError::InvalidInput(format!(
                "{} model values against {} truth values",
                model.len(),
                truth.len()
            )));
        }
        Self::new(
            model
                .iter()
                .zip(truth)
                .enumerate()
                .map(|(i, (&m, &t))| PairedRecord::new(i.to_string(), m, t))
                .collect(),
        )
    }

    pub fn records(&self) -> &[PairedRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn model(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.model_value.as_f64()).collect()
    }

    pub fn truth(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.truth_value.as_f64()).collect()
    }

    pub fn abs_errors(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| (r.model_value - r.truth_value).abs().as_f64())
            .collect()
    }

    pub fn has_raters(&self) -> bool {
        self.records[0].rater_values.is_some()
    }

    /// Rater readings per subject, or `None` when no raters were recorded.
    pub fn rater_matrix(&self) -> Option<Ratings> {
        self.has_raters().then(|| Ratings {
            ids: self.records.iter().map(|r| r.id.clone()).collect(),
            rows: self
                .records
                .iter()
                .map(|r| {
                    r.rater_values
                        .as_ref()
                        .expect("checked")
                        .iter()
                        .map(|v| v.as_f64())
                        .collect()
                })
                .collect(),
        })
    }

    /// Rater readings with the model appended as one more rater.
    pub fn rater_model_matrix(&self) -> Option<Ratings> {
        let mut m = self.rater_matrix()?;
        for (row, r) in m.rows.iter_mut().zip(&self.records) {
            row.push(r.model_value.as_f64());
        }
        Some(m)
    }

    pub(crate) fn subset(&self, recs: &[&PairedRecord<T>]) -> Result<Self, StatsError> {
        Self::new(recs.iter().map(|r| (*r).clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let data: Vec<f64> = (0..50).map(|i| (i * 7 % 13) as f64).collect();
        let stat = |idx: &[usize]| Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
        let cfg = BootstrapConfig {
            n_boot: 500,
            seed: 3,
            level: 0.95,
        };
        let a = bootstrap_percentile(data.len(), &cfg, stat).unwrap();
        let b = bootstrap_percentile(data.len(), &cfg, stat).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_percentile(data.len(), &BootstrapConfig { seed: 4, ..cfg }, stat).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn records_validate_rater_counts() {
        let mut a = PairedRecord::new("a", 1.0f64, 1.0);
        a.rater_values = Some(vec![1.0, 2.0]);
        let mut b = PairedRecord::new("b", 1.0f64, 1.0);
        b.rater_values = Some(vec![1.0, 2.0, 3.0]);
        assert!(PairedMeasurements::new(vec![a.clone(), b]).is_err());
        let mut c = PairedRecord::new("c", 1.0f64, 1.0);
        c.rater_values = Some(vec![1.0]);
        assert!(PairedMeasurements::new(vec![c]).is_err());
        assert!(PairedMeasurements::<f64>::new(vec![]).is_err());
        let p = PairedMeasurements::new(vec![a]).unwrap();
        assert_eq!(p.rater_model_matrix().unwrap().rows[0], vec![1.0, 2.0, 1.0]);
    }
}
