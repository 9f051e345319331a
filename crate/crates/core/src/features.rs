//! Per-customer network, link-based and RFM features.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::cdr::{CdrRecord, CustomerId, TimeRange, SECONDS_PER_DAY};
use crate::error::bail;
use crate::graph::CallGraph;
use crate::Result;

/// Degree split by neighbour class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DegreeFeatures {
    pub full: u32,
    pub churn: u32,
    pub nonchurn: u32,
}

/// `churn[i]` is the known class of node `i`.
pub fn degree_features(graph: &CallGraph, churn: &[bool]) -> Vec<DegreeFeatures> {
    (0..graph.num_nodes())
        .map(|i| {
            let (nbrs, _) = graph.neighbors(i);
            let c = nbrs.iter().filter(|&&j| churn[j as usize]).count() as u32;
            DegreeFeatures { full: nbrs.len() as u32, churn: c, nonchurn: nbrs.len() as u32 - c }
        })
        .collect()
}

/// Triangle counts split by the class of the two other members.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TriangleFeatures {
    pub full: u64,
    /// Both other members churners.
    pub churn: u64,
    /// Both other members non-churners.
    pub nonchurn: u64,
}

/// Counts triangles on the orientation-free simple graph.
pub fn triangle_features(graph: &CallGraph, churn: &[bool]) -> Vec<TriangleFeatures> {
    let g = graph.to_simple_undirected();
    let n = g.num_nodes();
    let mut out = vec![TriangleFeatures::default(); n];
    let mut mark = vec![false; n];
    for u in 0..n {
        let (nu, _) = g.neighbors(u);
        for &v in nu {
            mark[v as usize] = true;
        }
        for &v in nu.iter().filter(|&&v| v as usize > u) {
            let (nv, _) = g.neighbors(v as usize);
            for &w in nv.iter().filter(|&&w| w > v && mark[w as usize]) {
                let tri = [u, v as usize, w as usize];
                for k in 0..3 {
                    let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                    let t = &mut out[tri[k]];
                    t.full += 1;
                    match (churn[a], churn[b]) {
                        (true, true) => t.churn += 1,
                        (false, false) => t.nonchurn += 1,
                        _ => {}
                    }
                }
            }
        }
        for &v in nu {
            mark[v as usize] = false;
        }
    }
    out
}

/// Local clustering coefficient on the orientation-free simple graph; 0 below degree 2.
pub fn transitivity(graph: &CallGraph) -> Vec<f64> {
    let g = graph.to_simple_undirected();
    let none = vec![false; g.num_nodes()];
    triangle_features(&g, &none)
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let d = g.degree(i) as f64;
            if d < 2.0 {
                0.0
            } else {
                t.full as f64 / (d * (d - 1.0) / 2.0)
            }
        })
        .collect()
}

/// Link-based statistics over a node's labelled neighbourhood.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinkFeatures {
    /// Most frequent neighbour class (1 = churner); ties go to non-churner.
    pub mode_link: u8,
    pub count_link_churn: f64,
    pub count_link_nonchurn: f64,
    pub binary_link_churn: u8,
    pub binary_link_nonchurn: u8,
}

pub fn link_based(graph: &CallGraph, churn: &[bool]) -> Vec<LinkFeatures> {
    (0..graph.num_nodes())
        .map(|i| {
            let (nbrs, ws) = graph.neighbors(i);
            let (mut wc, mut wn, mut nc, mut nn) = (0.0, 0.0, 0u32, 0u32);
            for (&j, &w) in nbrs.iter().zip(ws) {
                if churn[j as usize] {
                    wc += w;
                    nc += 1;
                } else {
                    wn += w;
                    nn += 1;
                }
            }
            let z = wc + wn;
            let (cc, cn) = if z > 0.0 { (wc / z, wn / z) } else { (0.0, 0.0) };
            LinkFeatures {
                mode_link: u8::from(nc > nn),
                count_link_churn: cc,
                count_link_nonchurn: cn,
                binary_link_churn: u8::from(nc > 0),
                binary_link_nonchurn: u8::from(nn > 0),
            }
        })
        .collect()
}

/// Look-back horizons, in days, of the frequency and monetary features.
pub const RFM_HORIZONS: [i64; 3] = [30, 60, 90];

/// Recency / frequency / monetary summary of a customer's calls.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RfmFeatures {
    pub recency_days: f64,
    pub calls: [f64; 3],
    pub seconds: [f64; 3],
}

/// RFM features at `reference`, looking back no further than `window.start`.
///
/// Both made and received calls count. Customers without calls get a recency
/// equal to the window length in days.
pub fn rfm_features(num_customers: usize, records: &[CdrRecord], window: TimeRange) -> Vec<RfmFeatures> {
    let reference = window.end;
    let empty = RfmFeatures { recency_days: window.len_days() as f64, ..Default::default() };
    let mut out = vec![empty; num_customers];
    let mut last: Vec<Option<i64>> = vec![None; num_customers];
    for r in records.iter().filter(|r| window.contains(r.start)) {
        let age = reference - r.start;
        for c in [r.caller, r.callee] {
            let f = &mut out[c as usize];
            for (k, h) in RFM_HORIZONS.iter().enumerate() {
                if age <= h * SECONDS_PER_DAY {
                    f.calls[k] += 1.0;
                    f.seconds[k] += f64::from(r.duration);
                }
            }
            let l = &mut last[c as usize];
            *l = Some(l.map_or(r.start, |t| t.max(r.start)));
        }
    }
    for (f, l) in out.iter_mut().zip(&last) {
        if let Some(t) = l {
            f.recency_days = ((reference - t) / SECONDS_PER_DAY) as f64;
        }
    }
    out
}

/// Column names of the network feature block, in order.
pub const NETWORK_COLUMNS: [&str; 19] = [
    "degree_full",
    "degree_churn",
    "degree_nonchurn",
    "triangles_full",
    "triangles_churn",
    "triangles_nonchurn",
    "transitivity",
    "mode_link",
    "count_link_churn",
    "count_link_nonchurn",
    "binary_link_churn",
    "binary_link_nonchurn",
    "recency_days",
    "calls_30",
    "calls_60",
    "calls_90",
    "seconds_30",
    "seconds_60",
    "seconds_90",
];

/// A named block of per-node columns (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    pub rows: Vec<CustomerId>,
    pub columns: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureBlock {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let p = self.columns.len();
        &self.values[r * p..(r + 1) * p]
    }

    /// Restricts to `rows` (customer ids), in the given order.
    pub fn select(&self, rows: &[CustomerId]) -> Result<FeatureBlock> {
        let mut pos = vec![usize::MAX; self.rows.iter().map(|&r| r as usize + 1).max().unwrap_or(0)];
        for (k, &r) in self.rows.iter().enumerate() {
            pos[r as usize] = k;
        }
        let mut values = Vec::with_capacity(rows.len() * self.columns.len());
        for &r in rows {
            match pos.get(r as usize) {
                Some(&k) if k != usize::MAX => values.extend_from_slice(self.row(k)),
                _ => bail!(Alignment, "customer {r} missing from feature block"),
            }
        }
        Ok(FeatureBlock { rows: rows.to_vec(), columns: self.columns.clone(), values })
    }
}

/// Computes every network and RFM column for all nodes of `graph`.
///
/// `churn` holds the labels known at the end of `window`; RFM features use
/// the calls of `records` inside `window`.
pub fn network_features(graph: &CallGraph, churn: &[bool], records: &[CdrRecord], window: TimeRange) -> FeatureBlock {
    let n = graph.num_nodes();
    let deg = degree_features(graph, churn);
    let tri = triangle_features(graph, churn);
    let trans = transitivity(graph);
    let link = link_based(graph, churn);
    let rfm = rfm_features(n, records, window);
    let mut values = Vec::with_capacity(n * NETWORK_COLUMNS.len());
    for i in 0..n {
        let (d, t, l, r) = (deg[i], tri[i], link[i], rfm[i]);
        values.extend_from_slice(&[
            f64::from(d.full),
            f64::from(d.churn),
            f64::from(d.nonchurn),
            t.full as f64,
            t.churn as f64,
            t.nonchurn as f64,
            trans[i],
            f64::from(l.mode_link),
            l.count_link_churn,
            l.count_link_nonchurn,
            f64::from(l.binary_link_churn),
            f64::from(l.binary_link_nonchurn),
            r.recency_days,
            r.calls[0],
            r.calls[1],
            r.calls[2],
            r.seconds[0],
            r.seconds[1],
            r.seconds[2],
        ]);
    }
    FeatureBlock {
        rows: (0..n as CustomerId).collect(),
        columns: NETWORK_COLUMNS.iter().map(|c| c.to_string()).collect(),
        values,
    }
}

/// Which feature families enter a [`FeatureTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    NetworkOnly,
    RlOnly,
    All,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [FeatureMode::NetworkOnly, FeatureMode::RlOnly, FeatureMode::All];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureMode::NetworkOnly => "network_only",
            FeatureMode::RlOnly => "rl_only",
            FeatureMode::All => "all",
        }
    }
}

impl core::str::FromStr for FeatureMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "network_only" | "no" | "network" => FeatureMode::NetworkOnly,
            "rl_only" | "rl" => FeatureMode::RlOnly,
            "all" => FeatureMode::All,
            other => bail!(Config, "unknown feature mode '{other}'"),
        })
    }
}

/// A relational-learner score column, named by learner id.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreColumn {
    pub name: String,
    pub rows: Vec<CustomerId>,
    pub values: Vec<f64>,
}

/// Classifier input: one row per customer, dense named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    rows: Vec<CustomerId>,
    columns: Vec<String>,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(rows: Vec<CustomerId>, columns: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows.len() * columns.len() {
            bail!(Alignment, "{} values for {} rows x {} columns", values.len(), rows.len(), columns.len());
        }
        Ok(FeatureTable { rows, columns, values })
    }

    pub fn rows(&self) -> &[CustomerId] {
        &self.rows
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let p = self.columns.len();
        &self.values[r * p..(r + 1) * p]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|x| x == name)?;
        Some((0..self.num_rows()).map(|r| self.row(r)[c]).collect())
    }

    /// Appends the rows at `indices` (duplicates allowed) to the table.
    pub fn append_rows(&mut self, indices: &[usize]) {
        for &k in indices {
            let row = self.row(k).to_vec();
            self.rows.push(self.rows[k]);
            self.values.extend_from_slice(&row);
        }
    }
}

/// Joins the network block and relational score columns according to `mode`.
///
/// All inputs must be indexed by the same customers in the same order.
pub fn assemble(network: &FeatureBlock, scores: &[ScoreColumn], mode: FeatureMode) -> Result<FeatureTable> {
    let use_net = mode != FeatureMode::RlOnly;
    let use_rl = mode != FeatureMode::NetworkOnly;
    if use_rl && scores.is_empty() {
        bail!(Config, "feature mode '{}' needs at least one score set", mode.as_str());
    }
    let rows = network.rows.clone();
    if use_rl {
        for s in scores {
            if s.rows != rows || s.values.len() != rows.len() {
                bail!(Alignment, "score column '{}' is not aligned with the network features", s.name);
            }
        }
    }
    let mut columns: Vec<String> = Vec::new();
    if use_net {
        columns.extend(network.columns.iter().cloned());
    }
    if use_rl {
        columns.extend(scores.iter().map(|s| s.name.clone()));
    }
    let mut values = Vec::with_capacity(rows.len() * columns.len());
    for r in 0..rows.len() {
        if use_net {
            values.extend_from_slice(network.row(r));
        }
        if use_rl {
            values.extend(scores.iter().map(|s| s.values[r]));
        }
    }
    FeatureTable::new(rows, columns, values)
}
