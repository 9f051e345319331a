//! CSV and JSON file formats.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use callnet_core::cdr::{CdrRecord, CdrStore, ChurnLabels, CustomerId, TimeRange, SECONDS_PER_DAY};
use callnet_core::classify::LogisticModel;
use callnet_core::features::FeatureTable;
use callnet_core::graph::{CallGraph, Decay, Direction, WeightScheme};
use serde::{Deserialize, Serialize};

use crate::config::Config;

/// Header names of the four CDR columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdrSchema {
    pub caller: String,
    pub callee: String,
    pub timestamp: String,
    pub duration: String,
}

impl Default for CdrSchema {
    fn default() -> Self {
        CdrSchema {
            caller: "caller".into(),
            callee: "callee".into(),
            timestamp: "timestamp".into(),
            duration: "duration".into(),
        }
    }
}

impl CdrSchema {
    /// Reads `cdr.caller`, `cdr.callee`, `cdr.timestamp` and `cdr.duration`.
    pub fn from_config(cfg: &Config) -> Self {
        let d = CdrSchema::default();
        let pick = |k: &str, v: String| cfg.get(k).map(str::to_string).unwrap_or(v);
        CdrSchema {
            caller: pick("cdr.caller", d.caller),
            callee: pick("cdr.callee", d.callee),
            timestamp: pick("cdr.timestamp", d.timestamp),
            duration: pick("cdr.duration", d.duration),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line number, header included.
    pub line: u64,
    pub message: String,
}

/// A parsed CDR file and the rows that were skipped.
#[derive(Clone, Debug)]
pub struct ParsedCdr {
    pub store: CdrStore,
    pub malformed: usize,
    /// The first [`MAX_REPORTED_ERRORS`] skipped rows.
    pub errors: Vec<RowError>,
}

pub const MAX_REPORTED_ERRORS: usize = 20;

/// Parses CDR CSV. Malformed rows, self-calls and calls outside the six
/// observed months are skipped and counted; a missing column is fatal.
///
/// Without an explicit `epoch` the observation starts at midnight UTC of the
/// earliest well-formed call.
pub fn parse_cdr<R: Read>(source: R, schema: &CdrSchema, epoch: Option<i64>) -> Result<ParsedCdr> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(source);
    let headers = rdr.headers().context("reading CDR header")?.clone();
    let col =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("CDR header lacks column '{name}'"));
    let idx = [col(&schema.caller)?, col(&schema.callee)?, col(&schema.timestamp)?, col(&schema.duration)?];

    let mut malformed = 0usize;
    let mut errors = Vec::new();
    let mut note = |line: u64, message: String| {
        malformed += 1;
        if errors.len() < MAX_REPORTED_ERRORS {
            errors.push(RowError { line, message });
        }
    };

    let mut rows: Vec<(String, String, i64, u32, u64)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                note(line, e.to_string());
                continue;
            }
        };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let (caller, callee) = (field(idx[0]), field(idx[1]));
        if caller.is_empty() || callee.is_empty() {
            note(line, "empty customer id".into());
            continue;
        }
        if caller == callee {
            note(line, format!("self-call by '{caller}'"));
            continue;
        }
        let Ok(ts) = field(idx[2]).parse::<i64>() else {
            note(line, format!("bad timestamp '{}'", field(idx[2])));
            continue;
        };
        let Ok(dur) = field(idx[3]).parse::<u32>() else {
            note(line, format!("bad duration '{}'", field(idx[3])));
            continue;
        };
        rows.push((caller.to_string(), callee.to_string(), ts, dur, line));
    }

    let epoch = epoch.unwrap_or_else(|| {
        rows.iter().map(|r| r.2).min().map_or(0, |t| t.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY)
    });
    let window = callnet_core::cdr::Timeline::new(epoch).observation();
    rows.retain(|r| {
        let inside = window.contains(r.2);
        if !inside {
            note(r.4, format!("timestamp {} outside the observation window", r.2));
        }
        inside
    });

    let mut customers: Vec<String> = rows.iter().flat_map(|r| [r.0.clone(), r.1.clone()]).collect();
    customers.sort_unstable();
    customers.dedup();
    let index: HashMap<&str, CustomerId> =
        customers.iter().enumerate().map(|(i, c)| (c.as_str(), i as CustomerId)).collect();
    let records = rows.iter().map(|r| CdrRecord::new(index[r.0.as_str()], index[r.1.as_str()], r.2, r.3)).collect();
    drop(index);
    let store = CdrStore::new(customers, records, epoch)?;
    Ok(ParsedCdr { store, malformed, errors })
}

pub fn read_cdr(path: &Path, schema: &CdrSchema, epoch: Option<i64>) -> Result<ParsedCdr> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_cdr(f, schema, epoch).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_cdr<W: Write>(out: W, store: &CdrStore) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["caller", "callee", "timestamp", "duration"])?;
    let names = store.customers();
    for r in store.records() {
        w.write_record([
            names[r.caller as usize].as_str(),
            names[r.callee as usize].as_str(),
            &r.start.to_string(),
            &r.duration.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `customer,churndate` with an empty churndate for non-churners.
pub fn write_labels<W: Write>(out: W, customers: &[String], labels: &ChurnLabels) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["customer", "churndate"])?;
    for (name, d) in customers.iter().zip(labels.churndates()) {
        w.write_record([name.as_str(), &d.map(|t| t.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a labels file against a customer directory. Customers absent from
/// the file are non-churners.
pub fn read_labels<R: Read>(source: R, customers: &[String], window: TimeRange) -> Result<ChurnLabels> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let index: HashMap<&str, usize> = customers.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut dates = vec![None; customers.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let name = rec.get(0).unwrap_or("");
        let &i = index.get(name).ok_or_else(|| anyhow!("labels name unknown customer '{name}'"))?;
        let d = rec.get(1).unwrap_or("");
        if !d.is_empty() {
            dates[i] = Some(d.parse::<i64>().with_context(|| format!("bad churndate '{d}'"))?);
        }
    }
    Ok(ChurnLabels::from_churndates(window, dates))
}

/// Sidecar describing an exported edge list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub num_nodes: usize,
    pub direction: String,
    pub scheme: String,
    pub decay: String,
    pub decay_rate: f64,
    pub segment: String,
    pub reciprocal: bool,
    pub period_start: i64,
    pub period_end: i64,
    pub edges: usize,
}

impl GraphMeta {
    pub fn decay(&self) -> Result<Decay> {
        match self.decay.as_str() {
            "simple" => Ok(Decay::None),
            "decay" => Ok(Decay::Exponential(self.decay_rate)),
            other => bail!("unknown decay '{other}'"),
        }
    }
}

pub fn sidecar_path(edges: &Path) -> PathBuf {
    edges.with_extension("json")
}

/// Writes `src,dst,weight` rows by customer name plus the JSON sidecar.
pub fn write_graph(edges: &Path, graph: &CallGraph, customers: &[String], meta: &GraphMeta) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(edges)?));
    w.write_record(["src", "dst", "weight"])?;
    for (i, j, x) in graph.edges() {
        w.write_record([customers[i as usize].as_str(), customers[j as usize].as_str(), &x.to_string()])?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(sidecar_path(edges), json + "\n")?;
    Ok(())
}

pub fn read_graph(edges: &Path, customers: &[String]) -> Result<(CallGraph, GraphMeta)> {
    let meta: GraphMeta = serde_json::from_str(
        &std::fs::read_to_string(sidecar_path(edges)).with_context(|| format!("sidecar of {}", edges.display()))?,
    )?;
    if meta.num_nodes != customers.len() {
        bail!("graph has {} nodes, directory has {}", meta.num_nodes, customers.len());
    }
    let index: HashMap<&str, CustomerId> =
        customers.iter().enumerate().map(|(i, c)| (c.as_str(), i as CustomerId)).collect();
    let lookup = |s: &str| index.get(s).copied().ok_or_else(|| anyhow!("edge names unknown customer '{s}'"));
    let mut entries = Vec::new();
    let mut rdr = csv::Reader::from_path(edges)?;
    for rec in rdr.records() {
        let rec = rec?;
        entries.push((lookup(&rec[0])?, lookup(&rec[1])?, rec[2].parse::<f64>()?));
    }
    let direction: Direction = meta.direction.parse()?;
    let scheme: WeightScheme = meta.scheme.parse()?;
    let graph = CallGraph::from_entries(meta.num_nodes, direction, scheme, meta.decay()?, entries)?;
    Ok((graph, meta))
}

pub const LABEL_COLUMN: &str = "label";

/// Feature CSV: `customer`, one column per feature, then `label` if given.
pub fn write_features<W: Write>(
    out: W,
    table: &FeatureTable,
    customers: &[String],
    labels: Option<&[bool]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["customer".to_string()];
    header.extend(table.columns().iter().cloned());
    if labels.is_some() {
        header.push(LABEL_COLUMN.into());
    }
    w.write_record(&header)?;
    for (r, &c) in table.rows().iter().enumerate() {
        let mut rec = vec![customers[c as usize].clone()];
        rec.extend(table.row(r).iter().map(|v| v.to_string()));
        if let Some(l) = labels {
            rec.push(u8::from(l[r]).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_features`]. Customers are looked up in `customers`.
pub fn read_features<R: Read>(source: R, customers: &[String]) -> Result<(FeatureTable, Option<Vec<bool>>)> {
    let mut rdr = csv::Reader::from_reader(source);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("customer") {
        bail!("feature file must start with a 'customer' column");
    }
    let has_label = header.iter().next_back() == Some(LABEL_COLUMN);
    let p = header.len() - 1 - usize::from(has_label);
    let columns: Vec<String> = header.iter().skip(1).take(p).map(str::to_string).collect();
    let index: HashMap<&str, CustomerId> =
        customers.iter().enumerate().map(|(i, c)| (c.as_str(), i as CustomerId)).collect();
    let (mut rows, mut values, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let name = &rec[0];
        rows.push(*index.get(name).ok_or_else(|| anyhow!("unknown customer '{name}'"))?);
        for k in 0..p {
            values.push(rec[k + 1].parse::<f64>().with_context(|| format!("column {}", columns[k]))?);
        }
        if has_label {
            labels.push(match &rec[p + 1] {
                "1" => true,
                "0" => false,
                other => bail!("bad label '{other}'"),
            });
        }
    }
    let table = FeatureTable::new(rows, columns, values)?;
    Ok((table, has_label.then_some(labels)))
}

/// Feature header of a file, without loading the values.
pub fn customers_of_features(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.records().map(|r| Ok(r?[0].to_string())).collect()
}

/// `customer,learner,score` rows.
pub fn write_scores<W: Write>(
    out: W,
    customers: &[String],
    rows: &[CustomerId],
    learner: &str,
    scores: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["customer", "learner", "score"])?;
    for (&c, s) in rows.iter().zip(scores) {
        w.write_record([customers[c as usize].as_str(), learner, &s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a scores file into `(customer, learner, score)` triples.
pub fn read_scores<R: Read>(source: R) -> Result<Vec<(String, String, f64)>> {
    let mut rdr = csv::Reader::from_reader(source);
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok((r[0].to_string(), r[1].to_string(), r[2].parse()?))
        })
        .collect()
}

/// `customer,score,label` rows.
pub fn write_predictions<W: Write>(
    out: W,
    customers: &[String],
    rows: &[CustomerId],
    scores: &[f64],
    labels: &[bool],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["customer", "score", "label"])?;
    for ((&c, s), &l) in rows.iter().zip(scores).zip(labels) {
        w.write_record([customers[c as usize].as_str(), &s.to_string(), if l { "1" } else { "0" }])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub kind: String,
    pub columns: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub dropped: Vec<String>,
    #[serde(default)]
    pub converged: bool,
    #[serde(default)]
    pub iterations: usize,
}

impl From<&LogisticModel> for ModelDump {
    fn from(m: &LogisticModel) -> Self {
        ModelDump {
            kind: "log".into(),
            columns: m.columns.clone(),
            intercept: m.intercept,
            coefficients: m.coefficients.clone(),
            dropped: m.dropped.clone(),
            converged: m.converged,
            iterations: m.iterations,
        }
    }
}

impl TryFrom<ModelDump> for LogisticModel {
    type Error = anyhow::Error;

    fn try_from(d: ModelDump) -> Result<Self> {
        if d.kind != "log" {
            bail!("unsupported model kind '{}'", d.kind);
        }
        if d.columns.len() != d.coefficients.len() {
            bail!("{} columns but {} coefficients", d.columns.len(), d.coefficients.len());
        }
        Ok(LogisticModel {
            columns: d.columns,
            intercept: d.intercept,
            coefficients: d.coefficients,
            dropped: d.dropped,
            converged: d.converged,
            iterations: d.iterations,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ParsedCdr {
        parse_cdr(text.as_bytes(), &CdrSchema::default(), None).unwrap()
    }

    #[test]
    fn empty_body() {
        let p = parse("caller,callee,timestamp,duration\n");
        assert_eq!(p.store.len(), 0);
        assert_eq!(p.malformed, 0);
    }

    #[test]
    fn single_row() {
        let p = parse("caller,callee,timestamp,duration\nA,B,1000,60\n");
        assert_eq!(p.store.len(), 1);
        let r = p.store.records()[0];
        assert_eq!(p.store.customers()[r.caller as usize], "A");
        assert_eq!(r.duration, 60);
        assert_eq!(r.start, 1000);
    }

    #[test]
    fn bad_rows_are_counted() {
        let p = parse("caller,callee,timestamp,duration\nA,A,10,5\nA,B,x,5\nA,B,10,-1\nA,B,20,5\nA,B,99999999,5\n");
        assert_eq!(p.store.len(), 1);
        assert_eq!(p.malformed, 4);
        assert!(p.errors[0].message.contains("self-call"));
        assert_eq!(p.errors[0].line, 2);
    }

    #[test]
    fn header_remap_and_missing_column() {
        let schema = CdrSchema { caller: "from".into(), callee: "to".into(), ..CdrSchema::default() };
        let p = parse_cdr("to,from,duration,timestamp\nB,A,7,100\n".as_bytes(), &schema, Some(0)).unwrap();
        let r = p.store.records()[0];
        assert_eq!((p.store.customers()[r.caller as usize].as_str(), r.start, r.duration), ("A", 100, 7));
        assert!(parse_cdr("caller,callee,timestamp\n".as_bytes(), &CdrSchema::default(), None).is_err());
    }

    #[test]
    fn cdr_round_trip() {
        let p = parse("caller,callee,timestamp,duration\nx,y,86400,3\ny,z,90000,40\n");
        let mut buf = Vec::new();
        write_cdr(&mut buf, &p.store).unwrap();
        let q = parse_cdr(buf.as_slice(), &CdrSchema::default(), Some(86400)).unwrap();
        assert_eq!(q.store, p.store);
    }

    #[test]
    fn labels_round_trip() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let w = TimeRange::new(0, 1_000_000);
        let l = ChurnLabels::from_churndates(w, vec![None, Some(86400), None]);
        let mut buf = Vec::new();
        write_labels(&mut buf, &names, &l).unwrap();
        assert_eq!(read_labels(buf.as_slice(), &names, w).unwrap(), l);
    }

    #[test]
    fn features_round_trip() {
        let names: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let t = FeatureTable::new(vec![1, 0], vec!["f".into(), "g".into()], vec![0.1, 2.0, 1.0 / 3.0, -4.5]).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, &t, &names, Some(&[true, false])).unwrap();
        let (u, l) = read_features(buf.as_slice(), &names).unwrap();
        assert_eq!(u, t);
        assert_eq!(l.unwrap(), [true, false]);
    }
}
