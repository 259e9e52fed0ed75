use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    binary_metrics, icc, mae, mae_permutation_test, BootstrapConfig, ConfusionRow, IccForm,
    IntervalEstimate, PairedMeasurements, StatsError,
};
use crate::scalar::Scalar;

/// Sensitivity or specificity below this point estimate is starred.
pub const SUBGROUP_FLAG_THRESHOLD: f64 = 0.70;
const MISSING_GROUP: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSubgroupRow<T> {
    pub key: String,
    pub group: String,
    pub count: usize,
    pub percent: f64,
    pub mae: IntervalEstimate<T>,
    /// Agreement of raters plus model, when raters exist and the group has
    /// at least three subjects.
    pub icc: Option<IntervalEstimate<T>>,
    /// Permutation p-value against all other records.
    pub p_value: Option<f64>,
}

/// Per-group MAE rows; groups sort by name, records without `key` fall in
/// "unknown".
pub fn subgroup_paired<T: Scalar>(
    pairs: &PairedMeasurements<T>,
    key: &str,
    cfg: &BootstrapConfig,
    n_perm: usize,
) -> Result<Vec<PairedSubgroupRow<T>>, StatsError> {
    let group_of = |r: &super::PairedRecord<T>| {
        r.subgroups.get(key).cloned().unwrap_or_else(|| MISSING_GROUP.to_string())
    };
    let groups: BTreeSet<String> = pairs.records().iter().map(group_of).collect();
    let total = pairs.len();
    let mut rows = Vec::with_capacity(groups.len());
    for g in &groups {
        let (inside, outside): (Vec<_>, Vec<_>) =
            pairs.records().iter().partition(|r| group_of(r) == *g);
        let sub = pairs.subset(&inside)?;
        let icc_est = match sub.rater_model_matrix() {
            Some(m) if m.n_subjects() >= 3 => Some(icc::<T>(&m, IccForm::default(), cfg)?.estimate),
            _ => None,
        };
        let p_value = if outside.is_empty() {
            None
        } else {
            let err = |r: &&super::PairedRecord<T>| (r.model_value - r.truth_value).abs().as_f64();
            let a: Vec<f64> = inside.iter().map(err).collect();
            let b: Vec<f64> = outside.iter().map(err).collect();
            Some(mae_permutation_test(&a, &b, n_perm, cfg.seed)?.p_value)
        };
        rows.push(PairedSubgroupRow {
            key: key.to_string(),
            group: g.clone(),
            count: inside.len(),
            percent: 100.0 * inside.len() as f64 / total as f64,
            mae: mae(&sub, cfg)?,
            icc: icc_est,
            p_value,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSubgroupRow<T> {
    pub key: String,
    pub group: String,
    pub count: u64,
    pub sensitivity: Option<IntervalEstimate<T>>,
    pub specificity: Option<IntervalEstimate<T>>,
    /// Metrics whose point falls below [`SUBGROUP_FLAG_THRESHOLD`].
    pub starred: Vec<String>,
    /// Metrics with a zero denominator.
    pub undefined: Vec<String>,
}

/// Sensitivity and specificity per group of `key`, in input order.
pub fn subgroup_confusion<T: Scalar>(
    tables: &[ConfusionRow],
    key: &str,
    level: f64,
) -> Result<Vec<ConfusionSubgroupRow<T>>, StatsError> {
    let rows: Vec<ConfusionSubgroupRow<T>> = tables
        .iter()
        .filter(|t| t.key.eq_ignore_ascii_case(key))
        .map(|t| {
            let m = binary_metrics::<T>(&t.confusion, level);
            let star = |name: &str, e: &Option<IntervalEstimate<T>>| {
                e.filter(|e| e.point.as_f64() < SUBGROUP_FLAG_THRESHOLD)
                    .map(|_| name.to_string())
            };
            let starred = [star("sensitivity", &m.sensitivity), star("specificity", &m.specificity)]
                .into_iter()
                .flatten()
                .collect();
            ConfusionSubgroupRow {
                key: t.key.clone(),
                group: t.group.clone(),
                count: t.confusion.total(),
                sensitivity: m.sensitivity,
                specificity: m.specificity,
                starred,
                undefined: m
                    .undefined
                    .into_iter()
                    .filter(|n| n == "sensitivity" || n == "specificity")
                    .collect(),
            }
        })
        .collect();
    if rows.is_empty() {
        return Err(StatsError::NoData(format!("no confusion tables for key {key:?}")));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{Confusion, PairedRecord};

    #[test]
    fn male_row_matches_reference_points() {
        let t = vec![ConfusionRow {
            key: "sex".into(),
            group: "Male".into(),
            confusion: Confusion::new(17, 11, 1, 34),
        }];
        let rows: Vec<ConfusionSubgroupRow<f64>> = subgroup_confusion(&t, "sex", 0.95).unwrap();
        assert_eq!(rows.len(), 1);
        let sens = rows[0].sensitivity.unwrap().point;
        let spec = rows[0].specificity.unwrap().point;
        assert!((sens * 100.0 - 94.4).abs() < 0.05);
        assert!((spec * 100.0 - 75.6).abs() < 0.05);
        assert!(rows[0].starred.is_empty());
    }

    #[test]
    fn zero_positive_group_is_flagged() {
        let t = vec![ConfusionRow {
            key: "site".into(),
            group: "A".into(),
            confusion: Confusion::new(0, 2, 0, 9),
        }];
        let rows: Vec<ConfusionSubgroupRow<f64>> = subgroup_confusion(&t, "site", 0.95).unwrap();
        assert!(rows[0].sensitivity.is_none());
        assert_eq!(rows[0].undefined, vec!["sensitivity".to_string()]);
        assert!(subgroup_confusion::<f64>(&t, "sex", 0.95).is_err());
    }

    #[test]
    fn single_group_has_no_comparison() {
        let recs: Vec<PairedRecord<f64>> = (0..6)
            .map(|i| {
                let mut r = PairedRecord::new(i.to_string(), i as f64 + 0.5, i as f64);
                r.subgroups.insert("site".into(), "one".into());
                r
            })
            .collect();
        let p = PairedMeasurements::new(recs).unwrap();
        let cfg = BootstrapConfig {
            n_boot: 200,
            ..Default::default()
        };
        let rows = subgroup_paired(&p, "site", &cfg, 1000).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].count, 6);
        assert_eq!(rows[0].percent, 100.0);
        assert!(rows[0].p_value.is_none());
        assert_eq!(rows[0].mae.point, 0.5);
    }
}
