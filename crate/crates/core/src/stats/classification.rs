use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use super::{bootstrap_percentile, BootstrapConfig, CiMethod, IntervalEstimate, StatsError};
use crate::scalar::Scalar;

/// 2×2 table with "low density" (or "aneurysm") as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Exact binomial interval for `successes` out of `trials`.
pub fn clopper_pearson(successes: u64, trials: u64, level: f64) -> Option<(f64, f64)> {
    if trials == 0 || successes > trials {
        return None;
    }
    let (x, n) = (successes as f64, trials as f64);
    let alpha = 1.0 - level;
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0).ok()?.inverse_cdf(alpha / 2.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(x + 1.0, n - x).ok()?.inverse_cdf(1.0 - alpha / 2.0)
    };
    Some((lo, hi))
}

fn proportion<T: Scalar>(successes: u64, trials: u64, level: f64) -> Option<IntervalEstimate<T>> {
    let (lo, hi) = clopper_pearson(successes, trials, level)?;
    Some(IntervalEstimate::from_f64(
        successes as f64 / trials as f64,
        lo,
        hi,
        level,
        CiMethod::ClopperPearson,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics<T> {
    pub sensitivity: Option<IntervalEstimate<T>>,
    pub specificity: Option<IntervalEstimate<T>>,
    pub ppv: Option<IntervalEstimate<T>>,
    pub npv: Option<IntervalEstimate<T>>,
    /// Names of metrics left absent by a zero denominator.
    pub undefined: Vec<String>,
}

/// Sensitivity, specificity, PPV and NPV with exact intervals.
pub fn binary_metrics<T: Scalar>(c: &Confusion, level: f64) -> BinaryMetrics<T> {
    let sensitivity = proportion(c.tp, c.tp + c.fn_, level);
    let specificity = proportion(c.tn, c.tn + c.fp, level);
    let ppv = proportion(c.tp, c.tp + c.fp, level);
    let npv = proportion(c.tn, c.tn + c.fn_, level);
    let undefined = [
        ("sensitivity", sensitivity.is_none()),
        ("specificity", specificity.is_none()),
        ("ppv", ppv.is_none()),
        ("npv", npv.is_none()),
    ]
    .into_iter()
    .filter_map(|(n, missing)| missing.then(|| n.to_string()))
    .collect();
    BinaryMetrics {
        sensitivity,
        specificity,
        ppv,
        npv,
        undefined,
    }
}

/// Twice the Mann–Whitney U count (ties score one) and the class sizes.
fn doubled_u(scores: &[f64], labels: &[bool], idx: &[usize]) -> (u64, u64, u64) {
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut doubled, mut neg_below, mut n_pos) = (0u64, 0u64, 0u64);
    let mut g = 0;
    while g < order.len() {
        let s = scores[order[g]];
        let mut end = g;
        let (mut p, mut q) = (0u64, 0u64);
        while end < order.len() && scores[order[end]] == s {
            if labels[order[end]] {
                p += 1;
            } else {
                q += 1;
            }
            end += 1;
        }
        doubled += p * (2 * neg_below + q);
        neg_below += q;
        n_pos += p;
        g = end;
    }
    (doubled, n_pos, neg_below)
}

fn auc_of(scores: &[f64], labels: &[bool], idx: &[usize]) -> Option<f64> {
    let (d, p, n) = doubled_u(scores, labels, idx);
    (p > 0 && n > 0).then(|| d as f64 / (2 * p * n) as f64)
}

/// Area under the ROC curve for "positive scores higher", ties counted half.
pub fn auroc_point<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64, StatsError> {
    if scores.len() != labels.len() {
        return Err(StatsError::InvalidInput("scores and labels differ in length".into()));
    }
    let s: Vec<f64> = scores.iter().map(|v| v.as_f64()).collect();
    if s.iter().any(|v| v.is_nan()) {
        return Err(StatsError::InvalidInput("NaN score".into()));
    }
    let all: Vec<usize> = (0..s.len()).collect();
    auc_of(&s, labels, &all).ok_or_else(|| StatsError::NoData("both classes are required".into()))
}

/// AUROC with a percentile bootstrap; single-class resamples are skipped.
pub fn auroc<T: Scalar>(
    scores: &[T],
    labels: &[bool],
    cfg: &BootstrapConfig,
) -> Result<IntervalEstimate<T>, StatsError> {
    let point = auroc_point(scores, labels)?;
    let s: Vec<f64> = scores.iter().map(|v| v.as_f64()).collect();
    let (lo, hi) = bootstrap_percentile(s.len(), cfg, |idx| auc_of(&s, labels, idx))
        .ok_or_else(|| StatsError::NoData("no bootstrap resample had both classes".into()))?;
    Ok(IntervalEstimate::from_f64(point, lo, hi, cfg.level, CiMethod::BootstrapPercentile))
}
