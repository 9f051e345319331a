//! Call-graph construction.
//!
//! A [`CallGraph`] is a compressed sparse row adjacency over the customer
//! directory. Row `i` lists the neighbourhood used by the relational
//! classifiers: callees for [`Direction::Outgoing`], callers for
//! [`Direction::Incoming`] and both (merged) for [`Direction::Undirected`].

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use libm::exp;

use crate::cdr::{CdrRecord, CustomerId, TimeRange, SECONDS_PER_DAY};
use crate::error::bail;
use crate::{Error, Result};

/// `ln(100) / 52`: a link one year old keeps 1% of its weight.
pub const DEFAULT_DECAY_PER_WEEK: f64 = 0.088_560_965_115_155_6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Undirected,
    Outgoing,
    Incoming,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Undirected, Direction::Outgoing, Direction::Incoming];

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Undirected => "undirected",
            Direction::Outgoing => "outgoing",
            Direction::Incoming => "incoming",
        }
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "undirected" => Direction::Undirected,
            "outgoing" => Direction::Outgoing,
            "incoming" => Direction::Incoming,
            other => bail!(Config, "unknown direction '{other}'"),
        })
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeightScheme {
    /// Total seconds.
    Length,
    /// Number of calls.
    Count,
    /// Mean of min-max normalised length and count.
    Average,
    /// 1 when at least one call exists.
    Binary,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 4] =
        [WeightScheme::Length, WeightScheme::Count, WeightScheme::Average, WeightScheme::Binary];

    pub fn as_str(&self) -> &'static str {
        match self {
            WeightScheme::Length => "length",
            WeightScheme::Count => "count",
            WeightScheme::Average => "average",
            WeightScheme::Binary => "binary",
        }
    }
}

impl FromStr for WeightScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "length" => WeightScheme::Length,
            "count" => WeightScheme::Count,
            "average" => WeightScheme::Average,
            "binary" => WeightScheme::Binary,
            other => bail!(Config, "unknown weight scheme '{other}'"),
        })
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Time decay applied to weights before aggregation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decay {
    None,
    /// Exponential decay with the given rate per week.
    Exponential(f64),
}

impl Decay {
    pub fn label(&self) -> &'static str {
        match self {
            Decay::None => "simple",
            Decay::Exponential(_) => "decay",
        }
    }

    pub fn rate(&self) -> f64 {
        match self {
            Decay::None => 0.0,
            Decay::Exponential(g) => *g,
        }
    }

    fn factor(&self, weeks: i64) -> f64 {
        match self {
            Decay::None => 1.0,
            Decay::Exponential(g) => exp(-g * weeks as f64),
        }
    }
}

/// Aggregates `(week, weight)` pairs as `sum_t exp(-rate * t) * w_t`.
pub fn apply_decay(weekly: &[(i64, f64)], rate: f64) -> Result<f64> {
    if !(rate >= 0.0) {
        bail!(Argument, "decay rate must be non-negative, got {rate}");
    }
    let mut total = 0.0;
    for &(t, w) in weekly {
        if t < 0 {
            bail!(Argument, "negative week index {t}");
        }
        total += exp(-rate * t as f64) * w;
    }
    Ok(total)
}

/// Day of week, Monday first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Weekday {
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl Weekday {
    pub const ALL: [Weekday; 7] =
        [Weekday::Mon, Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Fri, Weekday::Sat, Weekday::Sun];

    /// Weekday of a UTC timestamp (1970-01-01 was a Thursday).
    pub fn of(ts: i64) -> Weekday {
        Weekday::ALL[(ts.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as usize]
    }

    pub fn is_weekend(&self) -> bool {
        matches!(self, Weekday::Sat | Weekday::Sun)
    }

    fn as_str(&self) -> &'static str {
        match self {
            Weekday::Mon => "mon",
            Weekday::Tue => "tue",
            Weekday::Wed => "wed",
            Weekday::Thu => "thu",
            Weekday::Fri => "fri",
            Weekday::Sat => "sat",
            Weekday::Sun => "sun",
        }
    }
}

/// UTC hour of day.
pub fn hour_of(ts: i64) -> u32 {
    (ts.rem_euclid(SECONDS_PER_DAY) / 3600) as u32
}

/// One segment of the week or day.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Day(Weekday),
    WorkingDays,
    Weekend,
    /// 08:00-16:00
    Daytime,
    /// 16:00-24:00
    Evening,
    /// 00:00-08:00
    Night,
}

impl Segment {
    pub fn contains(&self, ts: i64) -> bool {
        match self {
            Segment::Day(d) => Weekday::of(ts) == *d,
            Segment::WorkingDays => !Weekday::of(ts).is_weekend(),
            Segment::Weekend => Weekday::of(ts).is_weekend(),
            Segment::Daytime => (8..16).contains(&hour_of(ts)),
            Segment::Evening => hour_of(ts) >= 16,
            Segment::Night => hour_of(ts) < 8,
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Segment::Day(d) => d.as_str(),
            Segment::WorkingDays => "wd",
            Segment::Weekend => "we",
            Segment::Daytime => "day",
            Segment::Evening => "evening",
            Segment::Night => "night",
        }
    }
}

impl FromStr for Segment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(d) = Weekday::ALL.iter().find(|d| d.as_str() == s) {
            return Ok(Segment::Day(*d));
        }
        Ok(match s.as_str() {
            "wd" => Segment::WorkingDays,
            "we" => Segment::Weekend,
            "day" => Segment::Daytime,
            "evening" => Segment::Evening,
            "night" => Segment::Night,
            other => bail!(Config, "unknown segment '{other}'"),
        })
    }
}

/// Broad family of a [`SegmentSpec`], for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    Whole,
    DayOfWeek,
    PartOfWeek,
    TimeOfDay,
    PartOfWeekCombo,
    TimeOfDayCombo,
    Mixed,
}

/// Which calls enter a graph and with what multiplier.
///
/// An empty term list is the whole network. Otherwise a call contributes
/// with the summed coefficient of the terms it falls into, and is dropped
/// when it falls into none.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSpec {
    terms: Vec<(Segment, f64)>,
}

impl SegmentSpec {
    pub fn whole() -> Self {
        SegmentSpec { terms: Vec::new() }
    }

    pub fn single(segment: Segment) -> Self {
        SegmentSpec { terms: vec![(segment, 1.0)] }
    }

    pub fn combo(terms: Vec<(Segment, f64)>) -> Result<Self> {
        for (s, c) in &terms {
            if !(c.is_finite() && *c > 0.0) {
                bail!(Config, "segment '{}' has non-positive coefficient {c}", s.as_str());
            }
        }
        Ok(SegmentSpec { terms })
    }

    pub fn terms(&self) -> &[(Segment, f64)] {
        &self.terms
    }

    pub fn is_whole(&self) -> bool {
        self.terms.is_empty()
    }

    /// Multiplier for a call starting at `ts`, or `None` when excluded.
    pub fn coefficient(&self, ts: i64) -> Option<f64> {
        if self.terms.is_empty() {
            return Some(1.0);
        }
        let c: f64 = self.terms.iter().filter(|(s, _)| s.contains(ts)).map(|(_, c)| c).sum();
        (c > 0.0).then_some(c)
    }

    pub fn kind(&self) -> SegmentKind {
        let week = |s: &Segment| matches!(s, Segment::WorkingDays | Segment::Weekend);
        let tod = |s: &Segment| matches!(s, Segment::Daytime | Segment::Evening | Segment::Night);
        match self.terms.as_slice() {
            [] => SegmentKind::Whole,
            [(Segment::Day(_), _)] => SegmentKind::DayOfWeek,
            [(s, _)] if week(s) => SegmentKind::PartOfWeek,
            [(s, _)] if tod(s) => SegmentKind::TimeOfDay,
            ts if ts.iter().all(|(s, _)| week(s)) => SegmentKind::PartOfWeekCombo,
            ts if ts.iter().all(|(s, _)| tod(s)) => SegmentKind::TimeOfDayCombo,
            _ => SegmentKind::Mixed,
        }
    }

    /// Canonical text form, e.g. `whole`, `mon`, `1/2*day+evening`.
    pub fn label(&self) -> String {
        if self.terms.is_empty() {
            return "whole".to_string();
        }
        let mut out = String::new();
        for (i, (s, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                out.push('+');
            }
            if *c != 1.0 {
                out.push_str(&format_coefficient(*c));
                out.push('*');
            }
            out.push_str(s.as_str());
        }
        out
    }

    /// The 21 segmentations of the architecture study: whole, seven days,
    /// working days / weekend, three day parts and eight weighted combinations.
    pub fn grid() -> Vec<SegmentSpec> {
        use Segment::*;
        let mut out = vec![SegmentSpec::whole()];
        out.extend(Weekday::ALL.iter().map(|d| SegmentSpec::single(Day(*d))));
        out.extend([WorkingDays, Weekend, Daytime, Evening, Night].map(SegmentSpec::single));
        let half = 0.5;
        let third = 1.0 / 3.0;
        for (a, b) in [(WorkingDays, Weekend), (Daytime, Evening)] {
            out.push(SegmentSpec { terms: vec![(a, half), (b, 1.0)] });
            out.push(SegmentSpec { terms: vec![(a, 1.0), (b, half)] });
            out.push(SegmentSpec { terms: vec![(a, third), (b, 1.0)] });
            out.push(SegmentSpec { terms: vec![(a, 1.0), (b, third)] });
        }
        out
    }
}

impl FromStr for SegmentSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("whole") || s.is_empty() {
            return Ok(SegmentSpec::whole());
        }
        let mut terms = Vec::new();
        for term in s.split('+') {
            let (coef, name) = match term.split_once('*') {
                Some((c, n)) => (parse_coefficient(c)?, n),
                None => (1.0, term),
            };
            terms.push((name.parse()?, coef));
        }
        SegmentSpec::combo(terms)
    }
}

impl fmt::Display for SegmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn parse_coefficient(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| Error::Config(alloc::format!("bad coefficient '{s}'")))?;
            let b: f64 = b.trim().parse().map_err(|_| Error::Config(alloc::format!("bad coefficient '{s}'")))?;
            a / b
        }
        None => s.parse().map_err(|_| Error::Config(alloc::format!("bad coefficient '{s}'")))?,
    };
    Ok(v)
}

fn format_coefficient(c: f64) -> String {
    for den in 2..=12u32 {
        let num = c * den as f64;
        let r = libm::round(num);
        if (num - r).abs() < 1e-12 && r >= 1.0 {
            return alloc::format!("{}/{}", r as u64, den);
        }
    }
    alloc::format!("{c}")
}

/// Calls of `records` admitted by `spec`, each paired with its coefficient.
pub fn segment_records<'a>(records: &'a [CdrRecord], spec: &SegmentSpec) -> Vec<(&'a CdrRecord, f64)> {
    records.iter().filter_map(|r| spec.coefficient(r.start).map(|c| (r, c))).collect()
}

/// Sparse weighted call graph in CSR layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CallGraph {
    offsets: Vec<usize>,
    targets: Vec<CustomerId>,
    weights: Vec<f64>,
    direction: Direction,
    scheme: WeightScheme,
    decay: Decay,
}

impl CallGraph {
    /// Builds a graph from explicit `(row, neighbour, weight)` entries.
    ///
    /// Undirected graphs must list both orientations of every pair with equal
    /// weights. Weights must be finite and non-negative.
    pub fn from_entries(
        num_nodes: usize,
        direction: Direction,
        scheme: WeightScheme,
        decay: Decay,
        mut entries: Vec<(CustomerId, CustomerId, f64)>,
    ) -> Result<Self> {
        for &(i, j, w) in &entries {
            if i as usize >= num_nodes || j as usize >= num_nodes {
                bail!(Range, "edge ({i}, {j}) outside {num_nodes} nodes");
            }
            if i == j {
                bail!(Argument, "self-loop on node {i}");
            }
            if !(w.is_finite() && w >= 0.0) {
                bail!(Argument, "edge ({i}, {j}) has invalid weight {w}");
            }
            if scheme == WeightScheme::Binary && w != 0.0 && w != 1.0 {
                bail!(Argument, "binary graph with weight {w}");
            }
        }
        entries.sort_unstable_by_key(|a| (a.0, a.1));
        if entries.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            bail!(Argument, "duplicate edge entry");
        }
        let graph = Self::from_sorted(num_nodes, direction, scheme, decay, &entries);
        if direction == Direction::Undirected {
            for (i, j, w) in graph.edges() {
                if graph.weight(j, i) != Some(w) {
                    bail!(Argument, "undirected graph is not symmetric at ({i}, {j})");
                }
            }
        }
        Ok(graph)
    }

    fn from_sorted(
        num_nodes: usize,
        direction: Direction,
        scheme: WeightScheme,
        decay: Decay,
        entries: &[(CustomerId, CustomerId, f64)],
    ) -> Self {
        let mut offsets = vec![0usize; num_nodes + 1];
        for &(i, _, _) in entries {
            offsets[i as usize + 1] += 1;
        }
        for k in 0..num_nodes {
            offsets[k + 1] += offsets[k];
        }
        CallGraph {
            offsets,
            targets: entries.iter().map(|e| e.1).collect(),
            weights: entries.iter().map(|e| e.2).collect(),
            direction,
            scheme,
            decay,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Stored ordered pairs; an undirected edge counts twice.
    pub fn num_entries(&self) -> usize {
        self.targets.len()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    pub fn decay(&self) -> Decay {
        self.decay
    }

    /// Neighbours of `i` and the matching weights, sorted by neighbour.
    #[inline]
    pub fn neighbors(&self, i: usize) -> (&[CustomerId], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.targets[a..b], &self.weights[a..b])
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn row_weight(&self, i: usize) -> f64 {
        self.neighbors(i).1.iter().sum()
    }

    pub fn weight(&self, i: CustomerId, j: CustomerId) -> Option<f64> {
        let (t, w) = self.neighbors(i as usize);
        t.binary_search(&j).ok().map(|k| w[k])
    }

    /// All stored `(row, neighbour, weight)` entries in row order.
    pub fn edges(&self) -> impl Iterator<Item = (CustomerId, CustomerId, f64)> + '_ {
        (0..self.num_nodes()).flat_map(move |i| {
            let (t, w) = self.neighbors(i);
            t.iter().zip(w).map(move |(&j, &w)| (i as CustomerId, j, w))
        })
    }

    /// Fraction of non-zero ordered pairs, `nnz / (|V| (|V| - 1))`.
    pub fn sparsity(&self) -> Result<f64> {
        let n = self.num_nodes();
        if n < 2 {
            bail!(Argument, "sparsity needs at least two nodes, got {n}");
        }
        let nnz = self.weights.iter().filter(|w| **w != 0.0).count();
        Ok(nnz as f64 / (n as f64 * (n as f64 - 1.0)))
    }

    /// Orientation-free simple graph with unit weights.
    pub fn to_simple_undirected(&self) -> CallGraph {
        if self.direction == Direction::Undirected && self.scheme == WeightScheme::Binary {
            return self.clone();
        }
        let mut entries: Vec<(CustomerId, CustomerId, f64)> = Vec::with_capacity(2 * self.num_entries());
        for (i, j, _) in self.edges() {
            entries.push((i, j, 1.0));
            entries.push((j, i, 1.0));
        }
        entries.sort_unstable_by_key(|a| (a.0, a.1));
        entries.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1));
        Self::from_sorted(self.num_nodes(), Direction::Undirected, WeightScheme::Binary, Decay::None, &entries)
    }
}

/// Ordered caller/callee pairs observed in a record set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CallEvidence {
    pairs: Vec<u64>,
}

fn pair_key(i: CustomerId, j: CustomerId) -> u64 {
    (u64::from(i) << 32) | u64::from(j)
}

impl CallEvidence {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a CdrRecord>) -> Self {
        let mut pairs: Vec<u64> = records.into_iter().map(|r| pair_key(r.caller, r.callee)).collect();
        pairs.sort_unstable();
        pairs.dedup();
        CallEvidence { pairs }
    }

    /// Evidence implied by a directed graph's own orientation.
    pub fn from_directed(graph: &CallGraph) -> Result<Self> {
        let mut pairs: Vec<u64> = match graph.direction() {
            Direction::Outgoing => graph.edges().map(|(i, j, _)| pair_key(i, j)).collect(),
            Direction::Incoming => graph.edges().map(|(i, j, _)| pair_key(j, i)).collect(),
            Direction::Undirected => bail!(Argument, "an undirected graph carries no call direction"),
        };
        pairs.sort_unstable();
        Ok(CallEvidence { pairs })
    }

    pub fn called(&self, caller: CustomerId, callee: CustomerId) -> bool {
        self.pairs.binary_search(&pair_key(caller, callee)).is_ok()
    }

    pub fn mutual(&self, i: CustomerId, j: CustomerId) -> bool {
        self.called(i, j) && self.called(j, i)
    }
}

/// Keeps only edges whose endpoints called each other in both directions.
pub fn filter_reciprocal(graph: &CallGraph, evidence: &CallEvidence) -> CallGraph {
    let entries: Vec<_> = graph.edges().filter(|&(i, j, _)| evidence.mutual(i, j)).collect();
    CallGraph::from_sorted(graph.num_nodes(), graph.direction(), graph.scheme(), graph.decay(), &entries)
}

/// Architecture of one call graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildOptions {
    pub direction: Direction,
    pub scheme: WeightScheme,
    pub decay: Decay,
    pub reciprocal_only: bool,
}

impl BuildOptions {
    pub fn new(direction: Direction, scheme: WeightScheme) -> Self {
        BuildOptions { direction, scheme, decay: Decay::None, reciprocal_only: false }
    }

    pub fn with_decay(mut self, decay: Decay) -> Self {
        self.decay = decay;
        self
    }

    pub fn reciprocal(mut self, on: bool) -> Self {
        self.reciprocal_only = on;
        self
    }
}

#[derive(Clone, Copy)]
struct PairAcc {
    key: u64,
    length: f64,
    count: f64,
}

/// Aggregates weighted calls falling in `period` into a call graph.
///
/// Each call contributes its coefficient times the decay factor of its week,
/// weeks counted back from the last day of `period`. Undirected graphs sum
/// both orientations of a pair before the weight scheme is applied.
pub fn build_graph<'a, I>(num_nodes: usize, records: I, period: TimeRange, opts: &BuildOptions) -> Result<CallGraph>
where
    I: IntoIterator<Item = (&'a CdrRecord, f64)>,
{
    if period.is_empty() {
        bail!(Argument, "empty build period");
    }
    if let Decay::Exponential(g) = opts.decay {
        if !(g >= 0.0 && g.is_finite()) {
            bail!(Config, "decay rate must be finite and non-negative, got {g}");
        }
    }
    let last_day = (period.end - 1).div_euclid(SECONDS_PER_DAY);
    let mut acc: Vec<PairAcc> = Vec::new();
    for (r, coef) in records {
        if !period.contains(r.start) {
            continue;
        }
        if r.caller as usize >= num_nodes || r.callee as usize >= num_nodes {
            bail!(Range, "record references customer outside {num_nodes} nodes");
        }
        let weeks = (last_day - r.start.div_euclid(SECONDS_PER_DAY)) / 7;
        let f = coef * opts.decay.factor(weeks);
        acc.push(PairAcc { key: pair_key(r.caller, r.callee), length: f * f64::from(r.duration), count: f });
    }
    let mut acc = merge_pairs(acc);

    if opts.reciprocal_only {
        let keys: Vec<u64> = acc.iter().map(|p| p.key).collect();
        acc.retain(|p| {
            let (i, j) = ((p.key >> 32) as u32, p.key as u32);
            keys.binary_search(&pair_key(j, i)).is_ok()
        });
    }

    match opts.direction {
        Direction::Outgoing => {}
        Direction::Incoming => {
            for p in &mut acc {
                p.key = pair_key(p.key as u32, (p.key >> 32) as u32);
            }
            acc.sort_unstable_by_key(|p| p.key);
        }
        Direction::Undirected => {
            for p in &mut acc {
                let (i, j) = ((p.key >> 32) as u32, p.key as u32);
                p.key = pair_key(i.min(j), i.max(j));
            }
            acc = merge_pairs(acc);
        }
    }

    let values = scheme_values(&acc, opts.scheme);
    let mut entries: Vec<(CustomerId, CustomerId, f64)> = Vec::with_capacity(acc.len() * 2);
    for (p, w) in acc.iter().zip(values) {
        if w == 0.0 {
            continue;
        }
        let (i, j) = ((p.key >> 32) as u32, p.key as u32);
        entries.push((i, j, w));
        if opts.direction == Direction::Undirected {
            entries.push((j, i, w));
        }
    }
    entries.sort_unstable_by_key(|a| (a.0, a.1));
    Ok(CallGraph::from_sorted(num_nodes, opts.direction, opts.scheme, opts.decay, &entries))
}

fn merge_pairs(mut acc: Vec<PairAcc>) -> Vec<PairAcc> {
    acc.sort_unstable_by_key(|p| p.key);
    let mut out: Vec<PairAcc> = Vec::with_capacity(acc.len());
    for p in acc {
        match out.last_mut() {
            Some(last) if last.key == p.key => {
                last.length += p.length;
                last.count += p.count;
            }
            _ => out.push(p),
        }
    }
    out
}

fn scheme_values(acc: &[PairAcc], scheme: WeightScheme) -> Vec<f64> {
    match scheme {
        WeightScheme::Length => acc.iter().map(|p| p.length).collect(),
        WeightScheme::Count => acc.iter().map(|p| p.count).collect(),
        WeightScheme::Binary => acc.iter().map(|p| if p.count > 0.0 { 1.0 } else { 0.0 }).collect(),
        WeightScheme::Average => {
            let len = min_max(acc.iter().map(|p| p.length));
            let cnt = min_max(acc.iter().map(|p| p.count));
            acc.iter().map(|p| 0.5 * (len.apply(p.length) + cnt.apply(p.count))).collect()
        }
    }
}

struct MinMax {
    lo: f64,
    hi: f64,
}

impl MinMax {
    /// Maps onto [0, 1]; a degenerate range maps every value to 1.
    fn apply(&self, x: f64) -> f64 {
        if self.hi > self.lo {
            (x - self.lo) / (self.hi - self.lo)
        } else {
            1.0
        }
    }
}

fn min_max(xs: impl Iterator<Item = f64>) -> MinMax {
    xs.fold(MinMax { lo: f64::INFINITY, hi: f64::NEG_INFINITY }, |m, x| MinMax { lo: m.lo.min(x), hi: m.hi.max(x) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // 2010-01-04 00:00 UTC, a Monday.
    const EPOCH: i64 = 1_262_563_200;
    const DAY: i64 = SECONDS_PER_DAY;

    fn period() -> TimeRange {
        TimeRange::new(EPOCH, EPOCH + 30 * DAY)
    }

    fn whole(records: &[CdrRecord]) -> impl Iterator<Item = (&CdrRecord, f64)> {
        records.iter().map(|r| (r, 1.0))
    }

    fn build(n: usize, records: &[CdrRecord], opts: BuildOptions) -> CallGraph {
        build_graph(n, whole(records), period(), &opts).unwrap()
    }

    #[test]
    fn epoch_is_monday() {
        assert_eq!(Weekday::of(EPOCH), Weekday::Mon);
        assert_eq!(Weekday::of(EPOCH + 6 * DAY), Weekday::Sun);
    }

    #[test]
    fn weight_schemes_on_two_calls() {
        let recs = [CdrRecord::new(0, 1, EPOCH + 10, 30), CdrRecord::new(0, 1, EPOCH + 20, 70)];
        let w = |scheme| build(2, &recs, BuildOptions::new(Direction::Outgoing, scheme)).weight(0, 1);
        assert_eq!(w(WeightScheme::Length), Some(100.0));
        assert_eq!(w(WeightScheme::Count), Some(2.0));
        assert_eq!(w(WeightScheme::Binary), Some(1.0));
        let g = build(2, &recs, BuildOptions::new(Direction::Undirected, WeightScheme::Length));
        assert_eq!(g.weight(0, 1), Some(100.0));
        assert_eq!(g.weight(1, 0), Some(100.0));
    }

    #[test]
    fn incoming_rows_hold_callers() {
        let recs = [CdrRecord::new(0, 1, EPOCH, 10), CdrRecord::new(1, 0, EPOCH + 5, 10)];
        let g = build(3, &recs, BuildOptions::new(Direction::Incoming, WeightScheme::Count));
        assert_eq!(g.neighbors(0).0, &[1]);
        assert_eq!(g.degree(2), 0);
        let one_way = [CdrRecord::new(0, 1, EPOCH, 10)];
        let g = build(3, &one_way, BuildOptions::new(Direction::Incoming, WeightScheme::Count));
        assert_eq!(g.degree(0), 0);
        assert_eq!(g.neighbors(1).0, &[0]);
    }

    #[test]
    fn average_scheme_is_min_max_normalised() {
        let recs = [
            CdrRecord::new(0, 1, EPOCH, 10),
            CdrRecord::new(0, 2, EPOCH, 60),
            CdrRecord::new(0, 2, EPOCH + 1, 50),
            CdrRecord::new(1, 2, EPOCH, 30),
        ];
        let g = build(3, &recs, BuildOptions::new(Direction::Outgoing, WeightScheme::Average));
        // length {10, 110, 30} -> {0, 1, 0.2}; count {1, 2, 1} -> {0, 1, 0}
        assert_eq!(g.weight(0, 1), None);
        assert_eq!(g.weight(0, 2), Some(1.0));
        assert!((g.weight(1, 2).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn decay_examples() {
        assert_eq!(apply_decay(&[(0, 3.0), (4, 2.0)], 0.0).unwrap(), 5.0);
        assert_eq!(apply_decay(&[(0, 5.0)], 0.7).unwrap(), 5.0);
        let v = apply_decay(&[(0, 10.0), (52, 10.0)], DEFAULT_DECAY_PER_WEEK).unwrap();
        assert!((v - 10.1).abs() < 1e-12, "{v}");
        assert!((DEFAULT_DECAY_PER_WEEK - libm::log(100.0) / 52.0).abs() < 1e-15);
        assert!(apply_decay(&[(-1, 1.0)], 0.1).is_err());
    }

    #[test]
    fn decayed_graph_matches_weekly_aggregation() {
        // Calls 0, 8 and 20 days before the last day of the period.
        let last = EPOCH + 29 * DAY;
        let recs = [
            CdrRecord::new(0, 1, last + 100, 10),
            CdrRecord::new(0, 1, last - 8 * DAY, 20),
            CdrRecord::new(0, 1, last - 20 * DAY, 40),
        ];
        let g = 0.2;
        let opts = BuildOptions::new(Direction::Outgoing, WeightScheme::Length).with_decay(Decay::Exponential(g));
        let w = build(2, &recs, opts).weight(0, 1).unwrap();
        let expected = apply_decay(&[(0, 10.0), (1, 20.0), (2, 40.0)], g).unwrap();
        assert!((w - expected).abs() < 1e-12);
        // Binary ignores decay.
        let opts = BuildOptions::new(Direction::Outgoing, WeightScheme::Binary).with_decay(Decay::Exponential(g));
        assert_eq!(build(2, &recs, opts).weight(0, 1), Some(1.0));
    }

    #[test]
    fn segment_examples() {
        let sunday = EPOCH + 6 * DAY + 3600;
        let recs = [CdrRecord::new(0, 1, sunday, 10), CdrRecord::new(1, 0, sunday + 60, 10)];
        assert!(segment_records(&recs, &SegmentSpec::single(Segment::Day(Weekday::Mon))).is_empty());

        let tuesday = EPOCH + DAY + 9 * 3600;
        let saturday = EPOCH + 5 * DAY + 9 * 3600;
        let recs = [CdrRecord::new(0, 1, tuesday, 3), CdrRecord::new(0, 1, saturday, 3)];
        let spec: SegmentSpec = "wd+1/3*we".parse().unwrap();
        let seg = segment_records(&recs, &spec);
        let contributions: Vec<f64> = seg.iter().map(|(r, c)| c * f64::from(r.duration)).collect();
        assert_eq!(contributions[0], 3.0);
        assert!((contributions[1] - 1.0).abs() < 1e-15);

        let day_call = EPOCH + 10 * 3600;
        let evening_call = EPOCH + 18 * 3600;
        let night_call = EPOCH + 3 * 3600;
        let spec: SegmentSpec = "1/2*day+evening".parse().unwrap();
        assert_eq!(spec.coefficient(day_call), Some(0.5));
        assert_eq!(spec.coefficient(evening_call), Some(1.0));
        assert_eq!(spec.coefficient(night_call), None);
        assert_eq!(spec.kind(), SegmentKind::TimeOfDayCombo);
    }

    #[test]
    fn invalid_coefficients_are_rejected() {
        assert!(matches!("0*wd+we".parse::<SegmentSpec>(), Err(Error::Config(_))));
        assert!(matches!("-1*wd".parse::<SegmentSpec>(), Err(Error::Config(_))));
        assert!(matches!("brunch".parse::<SegmentSpec>(), Err(Error::Config(_))));
    }

    #[test]
    fn grid_has_twenty_one_segmentations_with_round_trip_labels() {
        let grid = SegmentSpec::grid();
        assert_eq!(grid.len(), 21);
        for s in &grid {
            assert_eq!(&s.label().parse::<SegmentSpec>().unwrap(), s);
        }
        assert_eq!(grid[17].label(), "1/2*day+evening");
        assert_eq!(grid[13].label(), "1/2*wd+we");
    }

    #[test]
    fn reciprocal_examples() {
        let one_way = [CdrRecord::new(0, 1, EPOCH, 10)];
        let opts = BuildOptions::new(Direction::Undirected, WeightScheme::Count).reciprocal(true);
        assert_eq!(build(2, &one_way, opts).num_entries(), 0);
        let both = [CdrRecord::new(0, 1, EPOCH, 10), CdrRecord::new(1, 0, EPOCH, 10)];
        assert_eq!(build(2, &both, opts).num_entries(), 2);
    }

    #[test]
    fn sparsity_examples() {
        let k3 = [CdrRecord::new(0, 1, EPOCH, 1), CdrRecord::new(1, 2, EPOCH, 1), CdrRecord::new(0, 2, EPOCH, 1)];
        let und = BuildOptions::new(Direction::Undirected, WeightScheme::Binary);
        assert_eq!(build(3, &k3, und).sparsity().unwrap(), 1.0);
        assert_eq!(build(3, &[], und).sparsity().unwrap(), 0.0);
        let path = [CdrRecord::new(0, 1, EPOCH, 1), CdrRecord::new(1, 2, EPOCH, 1)];
        assert!((build(3, &path, und).sparsity().unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert!(matches!(build(1, &[], und).sparsity(), Err(Error::Argument(_))));
    }

    #[test]
    fn from_entries_checks_symmetry() {
        let bad =
            CallGraph::from_entries(2, Direction::Undirected, WeightScheme::Count, Decay::None, vec![(0, 1, 2.0)]);
        assert!(bad.is_err());
        let ok = CallGraph::from_entries(
            2,
            Direction::Undirected,
            WeightScheme::Count,
            Decay::None,
            vec![(1, 0, 2.0), (0, 1, 2.0)],
        )
        .unwrap();
        assert_eq!(ok.weight(0, 1), Some(2.0));
    }

    fn arb_records(n: u32) -> impl Strategy<Value = Vec<CdrRecord>> {
        proptest::collection::vec(
            (0..n, 0..n, 0i64..30 * DAY, 1u32..600)
                .prop_filter_map("self-call", |(a, b, t, d)| (a != b).then_some(CdrRecord::new(a, b, EPOCH + t, d))),
            0..80,
        )
    }

    proptest! {
        #[test]
        fn binary_is_indicator_of_count(recs in arb_records(20), dir in 0usize..3) {
            let d = Direction::ALL[dir];
            let count = build(20, &recs, BuildOptions::new(d, WeightScheme::Count));
            let binary = build(20, &recs, BuildOptions::new(d, WeightScheme::Binary));
            let ce: Vec<_> = count.edges().map(|(i, j, w)| (i, j, if w > 0.0 { 1.0 } else { 0.0 })).collect();
            let be: Vec<_> = binary.edges().collect();
            prop_assert_eq!(ce, be);
        }

        #[test]
        fn undirected_is_symmetric(recs in arb_records(20), s in 0usize..4) {
            let g = build(20, &recs, BuildOptions::new(Direction::Undirected, WeightScheme::ALL[s]));
            for (i, j, w) in g.edges() {
                prop_assert_eq!(g.weight(j, i), Some(w));
            }
        }

        #[test]
        fn decay_is_monotone_in_rate(ws in proptest::collection::vec((0i64..60, 0.0f64..50.0), 0..20), a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(apply_decay(&ws, hi).unwrap() <= apply_decay(&ws, lo).unwrap() + 1e-12);
        }

        #[test]
        fn weekdays_partition_records(recs in arb_records(10)) {
            let mut total = 0;
            for d in Weekday::ALL {
                total += segment_records(&recs, &SegmentSpec::single(Segment::Day(d))).len();
            }
            prop_assert_eq!(total, recs.len());
        }

        /// Reciprocal filtering equals an O(E^2) scan for mutual pairs.
        #[test]
        fn reciprocal_matches_pair_scan(recs in arb_records(20)) {
            let opts = BuildOptions::new(Direction::Outgoing, WeightScheme::Count);
            let full = build(20, &recs, opts);
            let kept = build(20, &recs, opts.reciprocal(true));
            let mut expected = Vec::new();
            let edges: Vec<_> = full.edges().collect();
            for &(i, j, w) in &edges {
                if edges.iter().any(|&(a, b, _)| a == j && b == i) {
                    expected.push((i, j, w));
                }
            }
            prop_assert_eq!(kept.edges().collect::<Vec<_>>(), expected.clone());
            let evidence = CallEvidence::from_records(recs.iter());
            prop_assert_eq!(filter_reciprocal(&full, &evidence).edges().collect::<Vec<_>>(), expected);
            for (i, j, _) in kept.edges() {
                prop_assert!(full.weight(i, j).is_some());
            }
        }
    }
}
