//! Evaluation report rows and their CSV/JSON forms.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One metric value with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub architecture: String,
    pub learner: String,
    pub timeframe: String,
    pub metric: String,
    pub value: f64,
    pub params_hash: String,
}

pub const REPORT_HEADER: [&str; 7] =
    ["dataset", "architecture", "learner", "timeframe", "metric", "value", "params_hash"];

/// First 16 hex digits of the SHA-256 of `canonical`.
pub fn params_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(&digest[..8])
}

/// Sorts rows into the canonical report order.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        (&a.dataset, &a.timeframe, &a.architecture, &a.learner, &a.metric).cmp(&(
            &b.dataset,
            &b.timeframe,
            &b.architecture,
            &b.learner,
            &b.metric,
        ))
    });
}

pub fn write_report_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            &r.architecture,
            &r.learner,
            &r.timeframe,
            &r.metric,
            &r.value.to_string(),
            &r.params_hash,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_report_csv<R: Read>(source: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(source);
    let header = rdr.headers()?.clone();
    if header.iter().ne(REPORT_HEADER) {
        anyhow::bail!("not a report file: header {:?}", header.iter().collect::<Vec<_>>());
    }
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok(ReportRow {
                dataset: r[0].to_string(),
                architecture: r[1].to_string(),
                learner: r[2].to_string(),
                timeframe: r[3].to_string(),
                metric: r[4].to_string(),
                value: r[5].parse().with_context(|| format!("bad value '{}'", &r[5]))?,
                params_hash: r[6].to_string(),
            })
        })
        .collect()
}

/// Reads a report in either form, picked by extension.
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    if path.extension().is_some_and(|e| e == "json") {
        return crate::io::read_json(path);
    }
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_report_csv(f).with_context(|| format!("parsing {}", path.display()))
}

/// Writes `<stem>.csv` and `<stem>.json` under `dir`.
pub fn write_report(dir: &Path, stem: &str, rows: &[ReportRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_report_csv(crate::io::create(&dir.join(format!("{stem}.csv")))?, rows)?;
    crate::io::write_json(&dir.join(format!("{stem}.json")), &rows)
}
