use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{bootstrap_percentile, BootstrapConfig, CiMethod, IntervalEstimate, PairedMeasurements, StatsError};
use crate::scalar::Scalar;

fn mean_of(idx: &[usize], xs: &[f64]) -> f64 {
    idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64
}

/// Mean absolute model error with a percentile bootstrap interval.
pub fn mae<T: Scalar>(
    pairs: &PairedMeasurements<T>,
    cfg: &BootstrapConfig,
) -> Result<IntervalEstimate<T>, StatsError> {
    let errs = pairs.abs_errors();
    let all: Vec<usize> = (0..errs.len()).collect();
    let point = mean_of(&all, &errs);
    let (lo, hi) = bootstrap_percentile(errs.len(), cfg, |idx| Some(mean_of(idx, &errs)))
        .ok_or_else(|| StatsError::NoData("no bootstrap resamples".into()))?;
    Ok(IntervalEstimate::from_f64(point, lo, hi, cfg.level, CiMethod::BootstrapPercentile))
}

/// Subjects × raters table; `ids` label the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratings {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Ratings {
    /// Rows labelled `0..n`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Self {
            ids: (0..rows.len()).map(|i| i.to_string()).collect(),
            rows,
        }
    }

    pub fn n_subjects(&self) -> usize {
        self.rows.len()
    }

    pub fn n_raters(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<(), StatsError> {
        let k = self.n_raters();
        if self.rows.len() < 3 || k < 2 {
            return Err(StatsError::NoData(format!(
                "ICC needs at least 3 subjects and 2 raters, got {} x {}",
                self.rows.len(),
                k
            )));
        }
        if self.rows.iter().any(|r| r.len() != k) {
            return Err(StatsError::InvalidInput("ragged rating rows".into()));
        }
        if self.ids.len() != self.rows.len() {
            return Err(StatsError::InvalidInput("one id per row required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IccForm {
    /// One-way random effects, single rater.
    OneWay,
    /// Two-way random effects, absolute agreement, single rater.
    #[default]
    TwoWayRandomAbsolute,
    /// Two-way mixed effects, consistency, single rater.
    TwoWayMixedConsistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccResult<T> {
    pub estimate: IntervalEstimate<T>,
    pub form: IccForm,
    /// Zero total variance; the point is 1 by convention.
    pub degenerate: bool,
    pub n_subjects: usize,
    pub n_raters: usize,
}

/// ICC of the rows selected by `idx` (repeats allowed). Returns the value
/// and whether the table had no variance at all.
fn icc_rows(rows: &[Vec<f64>], idx: &[usize], form: IccForm) -> (f64, bool) {
    let n = idx.len();
    let k = rows[idx[0]].len();
    let (nf, kf) = (n as f64, k as f64);
    let grand = idx.iter().flat_map(|&i| rows[i].iter()).sum::<f64>() / (nf * kf);
    let mut col_means = vec![0.0; k];
    let mut ss_rows = 0.0;
    let mut ss_total = 0.0;
    for &i in idx {
        let r = &rows[i];
        let rm = r.iter().sum::<f64>() / kf;
        ss_rows += (rm - grand).powi(2);
        for (j, &x) in r.iter().enumerate() {
            col_means[j] += x / nf;
            ss_total += (x - grand).powi(2);
        }
    }
    ss_rows *= kf;
    let ss_cols = nf * col_means.iter().map(|c| (c - grand).powi(2)).sum::<f64>();
    let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);
    let ms_r = ss_rows / (nf - 1.0);
    let ms_c = ss_cols / (kf - 1.0);
    let ms_e = ss_err / ((nf - 1.0) * (kf - 1.0));
    let ms_w = (ss_cols + ss_err) / (nf * (kf - 1.0));
    let (num, den) = match form {
        IccForm::OneWay => (ms_r - ms_w, ms_r + (kf - 1.0) * ms_w),
        IccForm::TwoWayRandomAbsolute => (
            ms_r - ms_e,
            ms_r + (kf - 1.0) * ms_e + kf * (ms_c - ms_e) / nf,
        ),
        IccForm::TwoWayMixedConsistency => (ms_r - ms_e, ms_r + (kf - 1.0) * ms_e),
    };
    let scale = ss_total.max(grand * grand).max(1.0);
    if ss_total <= 1e-24 * scale || den.abs() <= 1e-300 {
        (1.0, true)
    } else {
        (num / den, false)
    }
}

/// Point ICC without an interval.
pub fn icc_point(ratings: &Ratings, form: IccForm) -> Result<(f64, bool), StatsError> {
    ratings.validate()?;
    let all: Vec<usize> = (0..ratings.n_subjects()).collect();
    Ok(icc_rows(&ratings.rows, &all, form))
}

/// ICC from the mean-squares decomposition with a subject bootstrap.
pub fn icc<T: Scalar>(
    ratings: &Ratings,
    form: IccForm,
    cfg: &BootstrapConfig,
) -> Result<IccResult<T>, StatsError> {
    let (point, degenerate) = icc_point(ratings, form)?;
    let (lo, hi) = bootstrap_percentile(ratings.n_subjects(), cfg, |idx| {
        Some(icc_rows(&ratings.rows, idx, form).0)
    })
    .ok_or_else(|| StatsError::NoData("no bootstrap resamples".into()))?;
    Ok(IccResult {
        estimate: IntervalEstimate::from_f64(point, lo, hi, cfg.level, CiMethod::BootstrapPercentile),
        form,
        degenerate,
        n_subjects: ratings.n_subjects(),
        n_raters: ratings.n_raters(),
    })
}

/// `ICC(raters) − ICC(raters + model)` with a paired subject bootstrap.
///
/// Both tables must cover the same subject ids; `with_model` is reordered
/// to match `raters`.
pub fn icc_gap<T: Scalar>(
    raters: &Ratings,
    with_model: &Ratings,
    form: IccForm,
    cfg: &BootstrapConfig,
) -> Result<IntervalEstimate<T>, StatsError> {
    if raters.ids.is_empty() || with_model.ids.is_empty() {
        return Err(StatsError::Alignment("no subjects".into()));
    }
    let pos: std::collections::HashMap<&str, usize> = with_model
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if pos.len() != with_model.ids.len() {
        return Err(StatsError::Alignment("duplicate subject ids".into()));
    }
    let mut aligned = Vec::with_capacity(raters.rows.len());
    let mut missing = Vec::new();
    for id in &raters.ids {
        match pos.get(id.as_str()) {
            Some(&i) => aligned.push(with_model.rows[i].clone()),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() || raters.ids.len() != with_model.ids.len() {
        return Err(StatsError::Alignment(format!(
            "{} subjects lack a counterpart (first: {})",
            missing.len().max(raters.ids.len().abs_diff(with_model.ids.len())),
            missing.first().map_or("-", String::as_str)
        )));
    }
    let other = Ratings {
        ids: raters.ids.clone(),
        rows: aligned,
    };
    raters.validate()?;
    other.validate()?;
    let all: Vec<usize> = (0..raters.n_subjects()).collect();
    let gap = |idx: &[usize]| icc_rows(&raters.rows, idx, form).0 - icc_rows(&other.rows, idx, form).0;
    let point = gap(&all);
    let (lo, hi) = bootstrap_percentile(all.len(), cfg, |idx| Some(gap(idx)))
        .ok_or_else(|| StatsError::NoData("no bootstrap resamples".into()))?;
    Ok(IntervalEstimate::from_f64(point, lo, hi, cfg.level, CiMethod::BootstrapPercentile))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub n: usize,
    /// Mean of `truth − model`.
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub loa_lo: f64,
    pub loa_hi: f64,
    /// Share of `|truth − model|` at or below `tolerance`.
    pub within_tolerance: f64,
    pub tolerance: f64,
}

/// Limits of agreement `mean ± 1.96·SD` with the n−1 standard deviation.
pub fn bland_altman<T: Scalar>(
    pairs: &PairedMeasurements<T>,
    tolerance: f64,
) -> Result<BlandAltman, StatsError> {
    let diffs: Vec<f64> = pairs
        .records()
        .iter()
        .map(|r| (r.truth_value - r.model_value).as_f64())
        .collect();
    let n = diffs.len();
    if n < 2 {
        return Err(StatsError::NoData("Bland-Altman needs two pairs".into()));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    Ok(BlandAltman {
        n,
        mean_diff: mean,
        sd_diff: sd,
        loa_lo: mean - 1.96 * sd,
        loa_hi: mean + 1.96 * sd,
        within_tolerance: diffs.iter().filter(|d| d.abs() <= tolerance).count() as f64 / n as f64,
        tolerance,
    })
}

/// Sample correlation with a Fisher-z interval.
///
/// `|r| = 1` gives a zero-width interval; fewer than four pairs give
/// `[-1, 1]`.
pub fn pearson<T: Scalar>(xs: &[T], ys: &[T], level: f64) -> Result<IntervalEstimate<T>, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::InvalidInput("unequal lengths".into()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(StatsError::NoData("correlation needs two pairs".into()));
    }
    let mx = xs.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
    let my = ys.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x.as_f64() - mx, y.as_f64() - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(StatsError::InvalidInput("zero variance".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let (lo, hi) = if r.abs() == 1.0 {
        (r, r)
    } else if n < 4 {
        (-1.0, 1.0)
    } else {
        let z = r.atanh();
        let se = 1.0 / ((n - 3) as f64).sqrt();
        let q = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
        ((z - q * se).tanh(), (z + q * se).tanh())
    };
    Ok(IntervalEstimate::from_f64(r, lo, hi, level, CiMethod::FisherZ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> BootstrapConfig {
        BootstrapConfig {
            n_boot: 2000,
            seed: 11,
            level: 0.95,
        }
    }

    #[test]
    fn mae_points() {
        let p = PairedMeasurements::from_pairs(&[10.0f64, 12.0], &[11.0, 11.0]).unwrap();
        assert_eq!(mae(&p, &quick()).unwrap().point, 1.0);
        let p = PairedMeasurements::from_pairs(&[3.0f64, 4.0, 5.0], &[3.0, 4.0, 5.0]).unwrap();
        let e = mae(&p, &quick()).unwrap();
        assert_eq!((e.point, e.lo, e.hi), (0.0, 0.0, 0.0));
    }

    /// Percentiles of the exact resampling distribution of the mean of
    /// (1, 1, 1, 3), by enumerating all 4^4 ordered resamples.
    #[test]
    fn mae_bootstrap_matches_enumeration() {
        let errs = [1.0f64, 1.0, 1.0, 3.0];
        let mut all = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        all.push((errs[a] + errs[b] + errs[c] + errs[d]) / 4.0);
                    }
                }
            }
        }
        all.sort_by(f64::total_cmp);
        let lo = crate::scalar::quantile_sorted(&all, 0.025).unwrap();
        let hi = crate::scalar::quantile_sorted(&all, 0.975).unwrap();
        let p = PairedMeasurements::from_pairs(&errs, &[0.0; 4]).unwrap();
        let e = mae(&p, &BootstrapConfig::with_seed(5)).unwrap();
        assert_eq!(e.point, 1.5);
        assert_eq!((e.lo, e.hi), (lo, hi));
        assert_eq!((lo, hi), (1.0, 2.5));
    }

    #[test]
    fn perfect_agreement_icc_is_one() {
        let r = Ratings::from_rows(vec![vec![1.0, 1.0, 1.0], vec![5.0, 5.0, 5.0], vec![9.0, 9.0, 9.0]]);
        for form in [IccForm::OneWay, IccForm::TwoWayRandomAbsolute, IccForm::TwoWayMixedConsistency] {
            let (v, deg) = icc_point(&r, form).unwrap();
            assert!((v - 1.0).abs() < 1e-12 && !deg);
        }
    }

    #[test]
    fn constant_table_is_degenerate() {
        let r = Ratings::from_rows(vec![vec![2.0, 2.0]; 4]);
        let res: IccResult<f64> = icc(&r, IccForm::default(), &quick()).unwrap();
        assert!(res.degenerate);
        assert_eq!(res.estimate.point, 1.0);
    }

    #[test]
    fn offset_rater_closed_form() {
        // Two raters, second offset by c: ICC(A,1) = 2v / (2v + c²), where
        // v is the n−1 variance of the first rater.
        let x = [3.0, 7.0, 8.0, 12.0, 15.0, 4.0];
        let c = 2.5;
        let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![v, v + c]).collect();
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = 2.0 * v / (2.0 * v + c * c);
        let r = Ratings::from_rows(rows);
        let (got, _) = icc_point(&r, IccForm::TwoWayRandomAbsolute).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!(got < 1.0);
        let (cons, _) = icc_point(&r, IccForm::TwoWayMixedConsistency).unwrap();
        assert!((cons - 1.0).abs() < 1e-12);
    }

    #[test]
    fn icc_needs_enough_data() {
        let r = Ratings::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(icc_point(&r, IccForm::default()).is_err());
        let r = Ratings::from_rows(vec![vec![1.0], vec![3.0], vec![5.0]]);
        assert!(icc_point(&r, IccForm::default()).is_err());
    }

    #[test]
    fn icc_gap_alignment() {
        let a = Ratings {
            ids: vec!["a".into(), "b".into(), "c".into()],
            rows: vec![vec![1.0, 1.1], vec![5.0, 5.2], vec![9.0, 8.9]],
        };
        let mut b = a.clone();
        for row in &mut b.rows {
            let m = (row[0] + row[1]) / 2.0;
            row.push(m);
        }
        b.ids.reverse();
        b.rows.reverse();
        let g: IntervalEstimate<f64> = icc_gap(&a, &b, IccForm::default(), &quick()).unwrap();
        assert!(g.hi < 0.05);
        let c = Ratings {
            ids: vec!["x".into(), "y".into(), "z".into()],
            rows: b.rows.clone(),
        };
        assert!(matches!(
            icc_gap::<f64>(&a, &c, IccForm::default(), &quick()),
            Err(StatsError::Alignment(_))
        ));
        let empty = Ratings::from_rows(vec![]);
        assert!(matches!(
            icc_gap::<f64>(&a, &empty, IccForm::default(), &quick()),
            Err(StatsError::Alignment(_))
        ));
    }

    #[test]
    fn bland_altman_examples() {
        let p = PairedMeasurements::from_pairs(&[1.0f64, -1.0], &[0.0, 0.0]).unwrap();
        let b = bland_altman(&p, 5.0).unwrap();
        assert_eq!(b.mean_diff, 0.0);
        assert!((b.loa_hi - 1.96 * 2f64.sqrt()).abs() < 1e-12);
        assert!((b.loa_lo + 1.96 * 2f64.sqrt()).abs() < 1e-12);
        let p = PairedMeasurements::from_pairs(&[4.0f64, 6.0], &[4.0, 6.0]).unwrap();
        let b = bland_altman(&p, 5.0).unwrap();
        assert_eq!((b.mean_diff, b.loa_lo, b.loa_hi, b.within_tolerance), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0f64, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = pearson(&x, &y, 0.95).unwrap();
        assert_eq!((r.point, r.lo, r.hi), (1.0, 1.0, 1.0));
        // Residuals orthogonal to centred x.
        let y = [1.0f64, -2.0, 0.0, 2.0, -1.0];
        let r = pearson(&x, &y, 0.95).unwrap();
        assert!(r.point.abs() < 1e-12);
        assert!(r.lo < 0.0 && r.hi > 0.0);
        assert!(pearson(&[1.0f64, 1.0, 1.0], &[1.0, 2.0, 3.0], 0.95).is_err());
    }
}
