use std::path::Path;

use serde::Serialize;

use super::consistency::{ConsistencyScore, FramePair};
use crate::error::Result;
use crate::io::write_csv;

pub const REPORT_NOTE: &str = "E uses a fixed random feature bank; values are comparable only within this tool";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub kind: String,
    pub first: Option<usize>,
    pub second: Option<usize>,
    pub range: String,
    pub e_feature: f64,
    pub e_rgb: f64,
    pub coverage: f64,
    pub duplicate: bool,
}

/// Per-pair rows followed by `summary` rows holding the short- and long-range means.
pub fn report_rows(pairs: &[(FramePair, ConsistencyScore)]) -> Vec<ReportRow> {
    let tag = |long: bool| if long { "long" } else { "short" }.to_string();
    let mut rows: Vec<ReportRow> = pairs
        .iter()
        .map(|(p, s)| ReportRow {
            kind: "pair".into(),
            first: Some(p.first),
            second: Some(p.second),
            range: tag(p.long),
            e_feature: s.feature,
            e_rgb: s.rgb,
            coverage: s.coverage,
            duplicate: p.duplicate,
        })
        .collect();
    for long in [false, true] {
        let sel: Vec<&ConsistencyScore> = pairs.iter().filter(|(p, _)| p.long == long).map(|(_, s)| s).collect();
        if sel.is_empty() {
            continue;
        }
        let n = sel.len() as f64;
        rows.push(ReportRow {
            kind: "summary".into(),
            first: None,
            second: None,
            range: tag(long),
            e_feature: sel.iter().map(|s| s.feature).sum::<f64>() / n,
            e_rgb: sel.iter().map(|s| s.rgb).sum::<f64>() / n,
            coverage: sel.iter().map(|s| s.coverage).sum::<f64>() / n,
            duplicate: false,
        });
    }
    rows
}

pub fn write_report(path: impl AsRef<Path>, pairs: &[(FramePair, ConsistencyScore)]) -> Result<()> {
    write_csv(path, &[REPORT_NOTE], &report_rows(pairs))
}
