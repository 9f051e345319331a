//! Resumable network-architecture grid.
//!
//! Finished cells are appended to a journal, one flushed line per cell, by a
//! single writer thread. A restarted run drops a torn last line, skips every
//! cell whose hash is already journalled and evaluates the rest.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use callnet_core::graph::{BuildOptions, Direction, WeightScheme};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{create, write_json};
use crate::pipeline::{compute_metric, is_skippable, Dataset, NetworkSpec, RlContext, PREDICT_MONTH};
use crate::plan::{decay_label, derive_seed, reciprocity_label, ExperimentPlan, Metric};
use crate::report::{params_hash, write_report, ReportRow};

pub const JOURNAL: &str = "grid_cells.csv";
pub const REPORT_STEM: &str = "grid_report";
pub const TABLES: &str = "grid_tables.csv";
pub const MANIFEST: &str = "grid_manifest.json";

/// Months spanned by each grid network; pre-training uses the month before.
pub const GRID_MONTHS: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub network: NetworkSpec,
}

/// Every cell of the plan, ordered by reciprocity, direction, segmentation,
/// decay and scheme.
pub fn grid_cells(plan: &ExperimentPlan) -> Vec<Cell> {
    let g = &plan.grid;
    let mut out = Vec::with_capacity(g.cardinality());
    for &rec in &g.reciprocity {
        for &dir in &g.directions {
            for seg in &g.segments {
                for &decay in &g.decays {
                    for &scheme in &g.schemes {
                        let options = BuildOptions::new(dir, scheme).with_decay(decay).reciprocal(rec);
                        out.push(Cell { index: out.len(), network: NetworkSpec { options, segment: seg.clone() } });
                    }
                }
            }
        }
    }
    out
}

fn cell_hash(plan: &ExperimentPlan, ds: &Dataset, cell: &Cell) -> String {
    let metrics: Vec<String> = plan.grid.metrics.iter().map(Metric::to_string).collect();
    params_hash(&format!(
        "{}|{}|{}|{}|seed={}|{}",
        ds.fingerprint,
        cell.network.label(),
        plan.grid.learner,
        metrics.join(","),
        plan.seed,
        plan.fingerprint()
    ))
}

/// Outcome of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub index: usize,
    pub hash: String,
    pub architecture: String,
    /// `ok`, or `degenerate:` and a reason.
    pub status: String,
    pub edges: usize,
    pub values: Vec<f64>,
}

impl CellResult {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn to_line(&self) -> String {
        let mut rec = vec![
            self.index.to_string(),
            self.hash.clone(),
            self.architecture.clone(),
            self.status.clone(),
            self.edges.to_string(),
        ];
        rec.extend(self.values.iter().map(|v| v.to_string()));
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(&rec).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    fn parse(rec: &csv::StringRecord, metrics: usize) -> Result<CellResult> {
        if rec.len() != 5 + metrics {
            bail!("journal line has {} fields, expected {}", rec.len(), 5 + metrics);
        }
        Ok(CellResult {
            index: rec[0].parse()?,
            hash: rec[1].to_string(),
            architecture: rec[2].to_string(),
            status: rec[3].to_string(),
            edges: rec[4].parse()?,
            values: (0..metrics).map(|k| rec[5 + k].parse::<f64>()).collect::<std::result::Result<_, _>>()?,
        })
    }
}

fn journal_header(metrics: &[Metric]) -> String {
    let mut h = String::from("index,hash,architecture,status,edges");
    for m in metrics {
        h.push(',');
        h.push_str(&m.to_string());
    }
    h.push('\n');
    h
}

/// Evaluates the proxy learner on one cell. Failures inside the cell mark
/// it degenerate.
pub fn evaluate_cell(plan: &ExperimentPlan, ds: &Dataset, cell: &Cell) -> CellResult {
    let architecture = cell.network.label();
    let mut res = CellResult {
        index: cell.index,
        hash: cell_hash(plan, ds, cell),
        architecture,
        status: "ok".into(),
        edges: 0,
        values: vec![f64::NAN; plan.grid.metrics.len()],
    };
    let outcome = (|| -> Result<Vec<f64>> {
        let ctx = RlContext::build(ds, &cell.network, GRID_MONTHS, PREDICT_MONTH)?;
        res.edges = ctx.graph.num_entries();
        if res.edges == 0 {
            bail!("empty graph");
        }
        let seed = derive_seed(plan.seed, &format!("{}/grid/{}", ds.name, res.architecture));
        let state = ctx.score(plan.grid.learner, &plan.ci, &plan.logistic, seed)?;
        let rows = ds.alive_at(PREDICT_MONTH);
        let labels = ds.churn_in(PREDICT_MONTH, &rows);
        let scores: Vec<f64> = rows.iter().map(|&c| state.scores[c as usize]).collect();
        plan.grid.metrics.iter().map(|&m| compute_metric(m, &scores, &labels, &plan.emp)).collect()
    })();
    match outcome {
        Ok(v) => res.values = v,
        Err(e) => {
            let reason = match e.downcast_ref::<callnet_core::Error>() {
                Some(ce) if is_skippable(ce) => ce.to_string(),
                _ => format!("{e:#}"),
            };
            res.status = format!("degenerate:{}", reason.replace(['\n', ','], " "));
        }
    }
    if plan.grid.cell_delay_ms > 0 {
        std::thread::sleep(Duration::from_millis(plan.grid.cell_delay_ms));
    }
    res
}

/// Loads finished cells, cutting off a torn trailing line.
fn load_journal(path: &Path, header: &str, metrics: usize) -> Result<Vec<CellResult>> {
    let mut bytes = std::fs::read(path)?;
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    if bytes.last() != Some(&b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        log::warn!("journal {} ends in a partial line, truncating", path.display());
        bytes.truncate(keep);
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(keep as u64)?;
    }
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    if !bytes.starts_with(header.as_bytes()) {
        bail!("journal {} was written for different metrics; use a fresh output directory", path.display());
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    rdr.records().map(|r| CellResult::parse(&r?, metrics)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub dataset: String,
    pub learner: String,
    pub metrics: Vec<String>,
    pub cells: usize,
    pub ok: usize,
    pub degenerate: usize,
    pub plan_hash: String,
    pub files: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct GridOutput {
    pub cells: Vec<CellResult>,
    pub rows: Vec<ReportRow>,
    /// Cells evaluated by this invocation.
    pub evaluated: usize,
    pub manifest: GridManifest,
}

/// Picks the grid dataset: the named one or the first.
pub fn grid_dataset<'a>(plan: &ExperimentPlan, datasets: &'a [Dataset]) -> Result<&'a Dataset> {
    match &plan.grid.dataset {
        Some(n) => datasets.iter().find(|d| &d.name == n).ok_or_else(|| anyhow!("grid dataset '{n}' not found")),
        None => datasets.first().ok_or_else(|| anyhow!("no dataset for the grid")),
    }
}

/// Runs or resumes the grid into `out_dir` with `workers` threads.
pub fn run_architecture_grid(
    plan: &ExperimentPlan,
    ds: &Dataset,
    out_dir: &Path,
    workers: usize,
) -> Result<GridOutput> {
    std::fs::create_dir_all(out_dir)?;
    let cells = grid_cells(plan);
    log::info!("architecture grid: {} cells on {} with {}", cells.len(), ds.name, plan.grid.learner);
    let metrics = &plan.grid.metrics;
    let header = journal_header(metrics);
    let journal = out_dir.join(JOURNAL);

    let done: Vec<CellResult> =
        if journal.exists() { load_journal(&journal, &header, metrics.len())? } else { Vec::new() };
    let wanted: HashMap<String, usize> = cells.iter().map(|c| (cell_hash(plan, ds, c), c.index)).collect();
    let mut finished: BTreeMap<usize, CellResult> = BTreeMap::new();
    for r in done {
        if let Some(&i) = wanted.get(&r.hash) {
            finished.insert(i, CellResult { index: i, ..r });
        }
    }
    let pending: Vec<&Cell> = cells.iter().filter(|c| !finished.contains_key(&c.index)).collect();
    if !finished.is_empty() {
        log::info!("resuming: {} cells already done, {} pending", finished.len(), pending.len());
    }

    let mut file = OpenOptions::new().create(true).append(true).open(&journal)?;
    if file.metadata()?.len() == 0 {
        file.write_all(header.as_bytes())?;
        file.flush()?;
    }
    let (tx, rx) = mpsc::channel::<CellResult>();
    let writer = std::thread::spawn(move || -> Result<Vec<CellResult>> {
        let mut got = Vec::new();
        for r in rx {
            file.write_all(r.to_line().as_bytes())?;
            file.flush()?;
            got.push(r);
        }
        file.sync_all()?;
        Ok(got)
    });
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    pool.install(|| {
        pending.par_iter().for_each_with(tx, |tx, cell| {
            let _ = tx.send(evaluate_cell(plan, ds, cell));
        })
    });
    let fresh = writer.join().map_err(|_| anyhow!("journal writer panicked"))??;
    let evaluated = fresh.len();
    for r in fresh {
        finished.insert(r.index, r);
    }
    if finished.len() != cells.len() {
        bail!("grid incomplete: {} of {} cells", finished.len(), cells.len());
    }
    let results: Vec<CellResult> = finished.into_values().collect();

    // Rewrite the journal in cell order so finished runs are byte-stable.
    let tmp = out_dir.join(format!("{JOURNAL}.tmp"));
    {
        let mut f = create(&tmp)?;
        f.write_all(header.as_bytes())?;
        for r in &results {
            f.write_all(r.to_line().as_bytes())?;
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, &journal)?;

    let mut rows = Vec::new();
    for r in results.iter().filter(|r| r.is_ok()) {
        for (m, v) in metrics.iter().zip(&r.values) {
            rows.push(ReportRow {
                dataset: ds.name.clone(),
                architecture: r.architecture.clone(),
                learner: plan.grid.learner.to_string(),
                timeframe: "short".into(),
                metric: m.to_string(),
                value: *v,
                params_hash: r.hash.clone(),
            });
        }
    }
    write_report(out_dir, REPORT_STEM, &rows)?;
    write_tables(&out_dir.join(TABLES), plan, &cells, &results)?;
    let ok = results.iter().filter(|r| r.is_ok()).count();
    let manifest = GridManifest {
        dataset: ds.name.clone(),
        learner: plan.grid.learner.to_string(),
        metrics: metrics.iter().map(Metric::to_string).collect(),
        cells: results.len(),
        ok,
        degenerate: results.len() - ok,
        plan_hash: plan.fingerprint_hash(),
        files: [JOURNAL, &format!("{REPORT_STEM}.csv"), &format!("{REPORT_STEM}.json"), TABLES]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    write_json(&out_dir.join(MANIFEST), &manifest)?;
    Ok(GridOutput { cells: results, rows, evaluated, manifest })
}

/// One wide table per reciprocity level and metric: a row per direction and
/// segmentation, a column per decay and weight scheme.
fn write_tables(path: &Path, plan: &ExperimentPlan, cells: &[Cell], results: &[CellResult]) -> Result<()> {
    let g = &plan.grid;
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["reciprocity".to_string(), "metric".into(), "direction".into(), "segment".into()];
    for &d in &g.decays {
        for s in &g.schemes {
            header.push(format!("{}/{s}", decay_label(d)));
        }
    }
    w.write_record(&header)?;
    let lookup: HashMap<(bool, Direction, String, String, WeightScheme), &CellResult> = cells
        .iter()
        .zip(results)
        .map(|(c, r)| {
            let o = &c.network.options;
            ((o.reciprocal_only, o.direction, c.network.segment.label(), decay_label(o.decay), o.scheme), r)
        })
        .collect();
    for &rec in &g.reciprocity {
        for (k, m) in g.metrics.iter().enumerate() {
            for &dir in &g.directions {
                for seg in &g.segments {
                    let mut rowv =
                        vec![reciprocity_label(rec).to_string(), m.to_string(), dir.to_string(), seg.label()];
                    for &d in &g.decays {
                        for &s in &g.schemes {
                            let r = lookup[&(rec, dir, seg.label(), decay_label(d), s)];
                            rowv.push(if r.is_ok() { r.values[k].to_string() } else { "degenerate".into() });
                        }
                    }
                    w.write_record(&rowv)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a finished journal back, for inspection.
pub fn read_journal(path: &Path) -> Result<Vec<CellResult>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(f).lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty journal"))??;
    let metrics = header.split(',').count().saturating_sub(5);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    rdr.records().map(|r| CellResult::parse(&r?, metrics)).collect()
}

pub fn journal_path(out_dir: &Path) -> PathBuf {
    out_dir.join(JOURNAL)
}
