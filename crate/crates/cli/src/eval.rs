//! `eval`: validation metrics, subgroup tables and acceptance verdicts.

use std::fs;
use std::path::Path;

use ctquant_core::stats::{
    auroc, binary_metrics, bland_altman, icc, icc_gap, mae, pearson, read_confusion_csv,
    read_pairs_csv, subgroup_confusion, subgroup_paired, BootstrapConfig, Confusion,
    ConfusionRow, IccForm, StatsError, SUBGROUP_FLAG_THRESHOLD,
};
use ctquant_core::{IntervalEstimate, PairedMeasurements};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::args::{EvalArgs, Task};
use crate::config::LoadedConfig;
use crate::report::{to_rounded_value, Exit, Outcome, Report, StepStatus, SIGNIFICANT_DIGITS};

pub const MAE_LIMIT_MM: f64 = 2.0;
pub const ICC_GAP_LIMIT: f64 = 0.05;
pub const PROPORTION_FLOOR: f64 = 0.70;
pub const PEARSON_FLOOR: f64 = 0.70;
pub const BLAND_ALTMAN_TOLERANCE_MM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Undefined,
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub scope: String,
    pub key: String,
    pub group: String,
    pub count: usize,
    pub metric: String,
    pub point: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub level: Option<f64>,
    pub method: String,
    pub threshold: Option<f64>,
    pub verdict: Option<Verdict>,
}

impl MetricRow {
    fn overall(metric: &str, count: usize) -> Self {
        Self {
            scope: "overall".into(),
            key: String::new(),
            group: String::new(),
            count,
            metric: metric.into(),
            point: None,
            lo: None,
            hi: None,
            level: None,
            method: String::new(),
            threshold: None,
            verdict: None,
        }
    }

    fn with_interval(mut self, e: Option<&IntervalEstimate>) -> Self {
        if let Some(e) = e {
            self.point = Some(e.point);
            self.lo = Some(e.lo);
            self.hi = Some(e.hi);
            self.level = Some(e.level);
            self.method = format!("{:?}", e.method);
        }
        self
    }

    fn judged(mut self, threshold: f64, verdict: Verdict) -> Self {
        self.threshold = Some(threshold);
        self.verdict = Some(verdict);
        self
    }
}

fn verdict(ok: Option<bool>) -> Verdict {
    match ok {
        Some(true) => Verdict::Pass,
        Some(false) => Verdict::Fail,
        None => Verdict::Undefined,
    }
}

struct Collected {
    rows: Vec<MetricRow>,
    verdicts: Map<String, Value>,
    outputs: Map<String, Value>,
    notes: Vec<String>,
    subgroup_table: Option<Vec<Vec<String>>>,
}

impl Collected {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            verdicts: Map::new(),
            outputs: Map::new(),
            notes: Vec::new(),
            subgroup_table: None,
        }
    }

    fn verdict(&mut self, name: &str, rule: &str, value: Option<f64>, threshold: f64, v: Verdict) {
        self.verdicts.insert(
            name.into(),
            json!({ "value": value, "rule": rule, "threshold": threshold, "verdict": v }),
        );
    }
}

fn fmt(x: Option<f64>) -> String {
    x.map(|v| ctquant_core::scalar::round_sig(v, SIGNIFICANT_DIGITS).to_string())
        .unwrap_or_default()
}

fn aaq_pairs(pairs: &PairedMeasurements, args: &EvalArgs, bcfg: &BootstrapConfig) -> Result<Collected, StatsError> {
    let mut c = Collected::new();
    let n = pairs.len();

    let m = mae(pairs, bcfg)?;
    let v = verdict(Some(m.point < MAE_LIMIT_MM));
    c.rows.push(MetricRow::overall("mae_mm", n).with_interval(Some(&m)).judged(MAE_LIMIT_MM, v));
    c.verdict("mae", "point < threshold (mm)", Some(m.point), MAE_LIMIT_MM, v);
    c.outputs.insert("mae_mm".into(), to_rounded_value(&m));

    if n >= 2 {
        let ba = bland_altman(pairs, BLAND_ALTMAN_TOLERANCE_MM)?;
        let mut row = MetricRow::overall("bland_altman_mean_diff_mm", n);
        row.point = Some(ba.mean_diff);
        row.lo = Some(ba.loa_lo);
        row.hi = Some(ba.loa_hi);
        row.method = "LimitsOfAgreement".into();
        c.rows.push(row);
        let mut row = MetricRow::overall("bland_altman_within_tolerance", n);
        row.point = Some(ba.within_tolerance);
        row.threshold = Some(BLAND_ALTMAN_TOLERANCE_MM);
        c.rows.push(row);
        c.outputs.insert("bland_altman".into(), to_rounded_value(&ba));
    }

    match pearson(&pairs.model(), &pairs.truth(), bcfg.level) {
        Ok(r) => {
            c.rows.push(MetricRow::overall("pearson_r", n).with_interval(Some(&r)));
            c.outputs.insert("pearson_r".into(), to_rounded_value(&r));
        }
        Err(e) => c.notes.push(format!("pearson undefined: {e}")),
    }

    match (pairs.rater_matrix(), pairs.rater_model_matrix()) {
        (Some(raters), Some(with_model)) => {
            let form = IccForm::default();
            let r = icc::<f64>(&raters, form, bcfg)?;
            let w = icc::<f64>(&with_model, form, bcfg)?;
            let gap = icc_gap::<f64>(&raters, &with_model, form, bcfg)?;
            c.rows.push(MetricRow::overall("icc_raters", n).with_interval(Some(&r.estimate)));
            c.rows.push(MetricRow::overall("icc_raters_with_model", n).with_interval(Some(&w.estimate)));
            let v = verdict(Some(gap.hi < ICC_GAP_LIMIT));
            c.rows.push(MetricRow::overall("icc_gap", n).with_interval(Some(&gap)).judged(ICC_GAP_LIMIT, v));
            c.verdict("icc_gap", "interval hi < threshold", Some(gap.hi), ICC_GAP_LIMIT, v);
            c.outputs.insert(
                "icc".into(),
                json!({
                    "form": form,
                    "raters": to_rounded_value(&r),
                    "raters_with_model": to_rounded_value(&w),
                    "gap": to_rounded_value(&gap),
                }),
            );
        }
        _ => {
            c.notes.push("no rater columns; ICC gap not evaluated".into());
            c.verdict("icc_gap", "interval hi < threshold", None, ICC_GAP_LIMIT, Verdict::Undefined);
        }
    }

    if !args.subgroups.is_empty() {
        let mut table = vec![
            ["key", "group", "count", "percent", "mae_mm", "mae_lo", "mae_hi", "icc", "icc_lo", "icc_hi", "p_value"]
                .map(String::from)
                .to_vec(),
        ];
        let mut all = Vec::new();
        for key in &args.subgroups {
            let rows = subgroup_paired(pairs, key, bcfg, args.n_perm)?;
            for r in &rows {
                c.rows.push(MetricRow {
                    scope: "subgroup".into(),
                    key: r.key.clone(),
                    group: r.group.clone(),
                    ..MetricRow::overall("mae_mm", r.count).with_interval(Some(&r.mae))
                });
                table.push(vec![
                    r.key.clone(),
                    r.group.clone(),
                    r.count.to_string(),
                    fmt(Some(r.percent)),
                    fmt(Some(r.mae.point)),
                    fmt(Some(r.mae.lo)),
                    fmt(Some(r.mae.hi)),
                    fmt(r.icc.map(|e| e.point)),
                    fmt(r.icc.map(|e| e.lo)),
                    fmt(r.icc.map(|e| e.hi)),
                    fmt(r.p_value),
                ]);
            }
            all.extend(rows);
        }
        c.outputs.insert("subgroups".into(), to_rounded_value(&all));
        c.outputs.insert("subgroup_test".into(), json!("two-sided permutation test on MAE against the complement"));
        c.subgroup_table = Some(table);
    }
    Ok(c)
}

fn push_binary(c: &mut Collected, conf: &Confusion, level: f64) {
    let m = binary_metrics::<f64>(conf, level);
    let n = conf.total() as usize;
    for (name, est, judged) in [
        ("sensitivity", &m.sensitivity, true),
        ("specificity", &m.specificity, true),
        ("ppv", &m.ppv, false),
        ("npv", &m.npv, false),
    ] {
        let row = MetricRow::overall(name, n).with_interval(est.as_ref());
        if judged {
            let v = verdict(est.map(|e| e.point > PROPORTION_FLOOR));
            c.verdict(name, "point > threshold", est.map(|e| e.point), PROPORTION_FLOOR, v);
            c.rows.push(row.judged(PROPORTION_FLOOR, v));
        } else {
            c.rows.push(row);
        }
    }
    c.outputs.insert("confusion".into(), json!(conf));
    c.outputs.insert("binary_metrics".into(), to_rounded_value(&m));
}

fn push_confusion_subgroups(c: &mut Collected, tables: &[ConfusionRow], keys: &[String], level: f64) -> Result<(), StatsError> {
    let mut table = vec![[
        "key",
        "group",
        "count",
        "sensitivity",
        "sensitivity_lo",
        "sensitivity_hi",
        "specificity",
        "specificity_lo",
        "specificity_hi",
        "starred",
        "undefined",
    ]
    .map(String::from)
    .to_vec()];
    let mut all = Vec::new();
    for key in keys {
        let rows = subgroup_confusion::<f64>(tables, key, level)?;
        for r in &rows {
            for (name, est) in [("sensitivity", &r.sensitivity), ("specificity", &r.specificity)] {
                c.rows.push(MetricRow {
                    scope: "subgroup".into(),
                    key: r.key.clone(),
                    group: r.group.clone(),
                    ..MetricRow::overall(name, r.count as usize).with_interval(est.as_ref())
                });
            }
            table.push(vec![
                r.key.clone(),
                r.group.clone(),
                r.count.to_string(),
                fmt(r.sensitivity.map(|e| e.point)),
                fmt(r.sensitivity.map(|e| e.lo)),
                fmt(r.sensitivity.map(|e| e.hi)),
                fmt(r.specificity.map(|e| e.point)),
                fmt(r.specificity.map(|e| e.lo)),
                fmt(r.specificity.map(|e| e.hi)),
                r.starred.join(";"),
                r.undefined.join(";"),
            ]);
        }
        all.extend(rows);
    }
    c.outputs.insert("subgroups".into(), to_rounded_value(&all));
    c.outputs.insert("subgroup_star_below".into(), json!(SUBGROUP_FLAG_THRESHOLD));
    c.subgroup_table = Some(table);
    Ok(())
}

/// Overall table: rows keyed "overall" when present, otherwise the groups
/// of the first key, which partition the cohort.
pub fn overall_confusion(tables: &[ConfusionRow]) -> Confusion {
    let key = tables
        .iter()
        .find(|t| t.key.eq_ignore_ascii_case("overall"))
        .or_else(|| tables.first())
        .map(|t| t.key.clone())
        .unwrap_or_default();
    let mut total = Confusion::default();
    for t in tables.iter().filter(|t| t.key == key) {
        total.tp += t.confusion.tp;
        total.fp += t.confusion.fp;
        total.fn_ += t.confusion.fn_;
        total.tn += t.confusion.tn;
    }
    total
}

fn bmd_confusion(tables: &[ConfusionRow], args: &EvalArgs, level: f64) -> Result<Collected, StatsError> {
    let mut c = Collected::new();
    push_binary(&mut c, &overall_confusion(tables), level);
    if !args.subgroups.is_empty() {
        push_confusion_subgroups(&mut c, tables, &args.subgroups, level)?;
    }
    Ok(c)
}

fn bmd_pairs(
    pairs: &PairedMeasurements,
    args: &EvalArgs,
    bcfg: &BootstrapConfig,
    threshold_hu: f64,
) -> Result<Collected, StatsError> {
    let mut c = Collected::new();
    let n = pairs.len();
    let low_truth = |t: f64| t < args.t_score_cutoff;
    let low_model = |m: f64| m < threshold_hu;

    let r = pearson(&pairs.model(), &pairs.truth(), bcfg.level);
    let est = r.as_ref().ok();
    let v = verdict(est.map(|e| e.point > PEARSON_FLOOR));
    c.rows.push(MetricRow::overall("pearson_r", n).with_interval(est).judged(PEARSON_FLOOR, v));
    c.verdict("pearson", "point > threshold", est.map(|e| e.point), PEARSON_FLOOR, v);
    match &r {
        Ok(e) => {
            c.outputs.insert("pearson_r".into(), to_rounded_value(e));
        }
        Err(e) => c.notes.push(format!("pearson undefined: {e}")),
    }

    let labels: Vec<bool> = pairs.truth().into_iter().map(low_truth).collect();
    let scores: Vec<f64> = pairs.model().into_iter().map(|m| -m).collect();
    match auroc(&scores, &labels, bcfg) {
        Ok(a) => {
            c.rows.push(MetricRow::overall("auroc", n).with_interval(Some(&a)));
            c.outputs.insert("auroc".into(), to_rounded_value(&a));
        }
        Err(e) => c.notes.push(format!("auroc undefined: {e}")),
    }

    let mut conf = Confusion::default();
    let mut tables: Vec<ConfusionRow> = Vec::new();
    for rec in pairs.records() {
        let (p, a) = (low_model(rec.model_value), low_truth(rec.truth_value));
        conf.add(p, a);
        for key in &args.subgroups {
            let group = rec.subgroups.get(key).cloned().unwrap_or_else(|| "unknown".into());
            let slot = match tables.iter().position(|t| &t.key == key && t.group == group) {
                Some(i) => i,
                None => {
                    tables.push(ConfusionRow {
                        key: key.clone(),
                        group,
                        confusion: Confusion::default(),
                    });
                    tables.len() - 1
                }
            };
            tables[slot].confusion.add(p, a);
        }
    }
    tables.sort_by(|a, b| (&a.key, &a.group).cmp(&(&b.key, &b.group)));
    push_binary(&mut c, &conf, bcfg.level);
    c.outputs.insert(
        "classification_rule".into(),
        json!({ "model_low_below_hu": threshold_hu, "truth_low_below_t_score": args.t_score_cutoff }),
    );
    if !args.subgroups.is_empty() {
        push_confusion_subgroups(&mut c, &tables, &args.subgroups, bcfg.level)?;
    }
    Ok(c)
}

fn write_table(path: &Path, rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        let mut r = r.clone();
        for v in [&mut r.point, &mut r.lo, &mut r.hi] {
            *v = v.map(|x| ctquant_core::scalar::round_sig(x, SIGNIFICANT_DIGITS));
        }
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, cfg: &LoadedConfig) -> Outcome {
    let mut rep = Report::new("eval", cfg, Some(args.seed));
    let input = args.pairs.as_ref().or(args.confusion.as_ref()).expect("clap enforces one table");
    rep.add_input(if args.pairs.is_some() { "pairs" } else { "confusion" }, input);
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("ctquant eval: cannot create {}: {e}", args.out.display());
        return Outcome {
            exit: Exit::PipelineError,
            reason: Some("IoError".into()),
        };
    }
    let bcfg = BootstrapConfig {
        n_boot: args.n_boot,
        seed: args.seed,
        level: 0.95,
    };
    rep.inputs = json!({
        "task": format!("{:?}", args.task).to_lowercase(),
        "table": if args.pairs.is_some() { "pairs" } else { "confusion" },
        "subgroups": args.subgroups,
        "bootstrap": bcfg,
        "n_perm": args.n_perm,
    });

    let file = match fs::File::open(input) {
        Ok(f) => f,
        Err(e) => {
            rep.fail(Exit::PipelineError, "load", "IoError", format!("{}: {e}", input.display()), &["metrics", "emit"]);
            return rep.finish(&args.out);
        }
    };
    let collected = match (args.task, &args.pairs) {
        (Task::Aaq, Some(_)) => read_pairs_csv::<f64, _>(file).map(|p| {
            rep.step("load", StepStatus::Ok);
            aaq_pairs(&p, args, &bcfg)
        }),
        (Task::Bmd, Some(_)) => read_pairs_csv::<f64, _>(file).map(|p| {
            rep.step("load", StepStatus::Ok);
            bmd_pairs(&p, args, &bcfg, cfg.config.bmd_hu_threshold)
        }),
        (Task::Bmd, None) => read_confusion_csv(file).map(|t| {
            rep.step("load", StepStatus::Ok);
            bmd_confusion(&t, args, bcfg.level)
        }),
        (Task::Aaq, None) => {
            eprintln!("ctquant eval: --task aaq needs --pairs");
            return Outcome {
                exit: Exit::Usage,
                reason: Some("Usage".into()),
            };
        }
    };
    let collected = match collected {
        Err(e) => {
            rep.fail(Exit::PipelineError, "load", e.reason(), e.to_string(), &["metrics", "emit"]);
            return rep.finish(&args.out);
        }
        Ok(Err(e)) => {
            rep.fail(Exit::PipelineError, "metrics", e.reason(), e.to_string(), &["emit"]);
            return rep.finish(&args.out);
        }
        Ok(Ok(c)) => c,
    };
    rep.step("metrics", StepStatus::Ok);

    let mut emitted = write_metrics_csv(&args.out.join("metrics.csv"), &collected.rows);
    if let (Ok(()), Some(table)) = (&emitted, &collected.subgroup_table) {
        emitted = write_table(&args.out.join("subgroups.csv"), table);
    }
    if let Err(e) = emitted {
        rep.fail(Exit::PipelineError, "emit", "IoError", format!("{e:#}"), &[]);
        return rep.finish(&args.out);
    }
    rep.step("emit", StepStatus::Ok);

    let has = |v: Verdict| collected.verdicts.values().any(|x| x["verdict"] == json!(v));
    let overall = if has(Verdict::Fail) {
        Verdict::Fail
    } else if has(Verdict::Undefined) {
        Verdict::Undefined
    } else {
        Verdict::Pass
    };
    let mut verdicts = collected.verdicts;
    verdicts.insert("overall".into(), json!(overall));
    rep.verdicts = Value::Object(verdicts);
    rep.outputs = Value::Object(collected.outputs);
    rep.qc.notes = collected.notes;
    rep.finish(&args.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(key: &str, group: &str, c: [u64; 4]) -> ConfusionRow {
        ConfusionRow {
            key: key.into(),
            group: group.into(),
            confusion: Confusion::new(c[0], c[1], c[2], c[3]),
        }
    }

    #[test]
    fn overall_prefers_explicit_row() {
        let t = vec![row("sex", "M", [1, 2, 3, 4]), row("overall", "all", [9, 9, 9, 9])];
        assert_eq!(overall_confusion(&t), Confusion::new(9, 9, 9, 9));
        let t = vec![row("sex", "M", [1, 2, 3, 4]), row("sex", "F", [1, 1, 1, 1]), row("age", "x", [5, 5, 5, 5])];
        assert_eq!(overall_confusion(&t), Confusion::new(2, 3, 4, 5));
    }

    #[test]
    fn undefined_verdict_for_missing_metric() {
        assert_eq!(verdict(None), Verdict::Undefined);
        assert_eq!(verdict(Some(true)), Verdict::Pass);
    }
}
