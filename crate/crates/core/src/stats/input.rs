//! CSV readers for paired measurements and confusion tables.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{Confusion, PairedMeasurements, PairedRecord, StatsError};
use crate::scalar::Scalar;

fn bad(line: u64, msg: impl std::fmt::Display) -> StatsError {
    StatsError::InvalidInput(format!("line {line}: {msg}"))
}

fn number(line: u64, field: &str, name: &str) -> Result<f64, StatsError> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| bad(line, format!("{name} value {field:?} is not a number")))
}

/// Reads `id,model,truth[,rater1..raterK][,column...]` with optional
/// trailing `key=value` fields per row.
///
/// Header columns named `rater*` hold rater readings; any other extra header
/// column becomes a subgroup key.
pub fn read_pairs_csv<T: Scalar, R: Read>(reader: R) -> Result<PairedMeasurements<T>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(1, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let expect = ["id", "model", "truth"];
    if header.len() < 3 || !header.iter().zip(expect).all(|(h, e)| h.eq_ignore_ascii_case(e)) {
        return Err(bad(1, "header must start with id,model,truth"));
    }
    let extra = &header[3..];
    let is_rater = |h: &String| h.to_ascii_lowercase().starts_with("rater");
    let rater_cols: Vec<usize> = (0..extra.len()).filter(|&c| is_rater(&extra[c])).collect();

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| StatsError::InvalidInput(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() < header.len() {
            return Err(bad(line, format!("{} fields, header has {}", row.len(), header.len())));
        }
        let mut rec = PairedRecord::new(
            &row[0],
            T::of(number(line, &row[1], "model")?),
            T::of(number(line, &row[2], "truth")?),
        );
        if !rater_cols.is_empty() {
            let mut v = Vec::with_capacity(rater_cols.len());
            for &c in &rater_cols {
                v.push(T::of(number(line, &row[3 + c], &extra[c])?));
            }
            rec.rater_values = Some(v);
        }
        let mut groups = BTreeMap::new();
        for (c, name) in extra.iter().enumerate() {
            if !is_rater(name) {
                groups.insert(name.clone(), row[3 + c].to_string());
            }
        }
        for field in row.iter().skip(header.len()) {
            if field.is_empty() {
                continue;
            }
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(line, format!("trailing field {field:?} is not key=value")))?;
            groups.insert(k.trim().to_string(), v.trim().to_string());
        }
        rec.subgroups = groups;
        records.push(rec);
    }
    PairedMeasurements::new(records)
}

/// One confusion table in a keyed collection, e.g. key "sex", group "Male".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub key: String,
    pub group: String,
    pub confusion: Confusion,
}

#[derive(Deserialize)]
struct RawConfusion {
    key: String,
    group: String,
    tp: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    tn: u64,
}

/// Reads `key,group,tp,fp,fn,tn`.
pub fn read_confusion_csv<R: Read>(reader: R) -> Result<Vec<ConfusionRow>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<RawConfusion>() {
        let r = row.map_err(|e| StatsError::InvalidInput(e.to_string()))?;
        out.push(ConfusionRow {
            key: r.key,
            group: r.group,
            confusion: Confusion::new(r.tp, r.fp, r.fn_, r.tn),
        });
    }
    if out.is_empty() {
        return Err(StatsError::NoData("no confusion rows".into()));
    }
    Ok(out)
}
