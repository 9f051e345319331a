//! Relational classifiers (RC) and collective inference (CI).
//!
//! A state is a vector of per-node churn probabilities; hard labels are the
//! special case of 0/1 entries. Every sweep is simultaneous: all scores are
//! computed from the previous sweep's state and written to a second buffer.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use libm::sqrt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classify::{fit_logistic_dense, sigmoid, LogisticOptions};
use crate::error::bail;
use crate::graph::CallGraph;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 1e-4;
pub const GIBBS_BURN_IN: usize = 200;
pub const DEFAULT_SPA_DIFFUSION: f64 = 0.85;
pub const DEFAULT_RLSA_K: f64 = 1.0;
pub const DEFAULT_RLSA_ALPHA: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RcKind {
    Wvrn,
    Cdrn,
    Nlb,
    Spa,
}

impl RcKind {
    pub const ALL: [RcKind; 4] = [RcKind::Wvrn, RcKind::Cdrn, RcKind::Nlb, RcKind::Spa];

    pub fn as_str(&self) -> &'static str {
        match self {
            RcKind::Wvrn => "wvrn",
            RcKind::Cdrn => "cdrn",
            RcKind::Nlb => "nlb",
            RcKind::Spa => "sparc",
        }
    }

    /// CDRN and NLB are fitted on an earlier timeframe.
    pub fn needs_pretraining(&self) -> bool {
        matches!(self, RcKind::Cdrn | RcKind::Nlb)
    }
}

impl fmt::Display for RcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RcKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "wvrn" => RcKind::Wvrn,
            "cdrn" => RcKind::Cdrn,
            "nlb" => RcKind::Nlb,
            "sparc" | "spa" | "sp" => RcKind::Spa,
            _ => bail!(Config, "unknown relational classifier `{s}`"),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CiMethod {
    None,
    Gibbs,
    Ic,
    Rl,
    Rlsa,
    Spa,
}

impl CiMethod {
    pub const ALL: [CiMethod; 6] =
        [CiMethod::None, CiMethod::Gibbs, CiMethod::Ic, CiMethod::Rl, CiMethod::Rlsa, CiMethod::Spa];

    pub fn as_str(&self) -> &'static str {
        match self {
            CiMethod::None => "no",
            CiMethod::Gibbs => "gibbs",
            CiMethod::Ic => "ic",
            CiMethod::Rl => "rl",
            CiMethod::Rlsa => "rlsa",
            CiMethod::Spa => "spa",
        }
    }

    /// Iteration cap of each method (accumulation sweeps for Gibbs).
    pub fn default_cap(&self) -> usize {
        match self {
            CiMethod::None => 1,
            CiMethod::Gibbs => 2000,
            CiMethod::Ic => 1000,
            CiMethod::Rl | CiMethod::Rlsa | CiMethod::Spa => 100,
        }
    }
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "no" | "none" => CiMethod::None,
            "gibbs" | "gib" => CiMethod::Gibbs,
            "ic" => CiMethod::Ic,
            "rl" => CiMethod::Rl,
            "rlsa" => CiMethod::Rlsa,
            "spa" | "spaci" | "sp" => CiMethod::Spa,
            _ => bail!(Config, "unknown collective inference method `{s}`"),
        })
    }
}

/// A relational learner, written `CI-RC` (for example `gibbs-nlb`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LearnerId {
    pub ci: CiMethod,
    pub rc: RcKind,
}

impl LearnerId {
    pub fn new(ci: CiMethod, rc: RcKind) -> Self {
        LearnerId { ci, rc }
    }

    /// All 24 combinations, CI-major.
    pub fn all() -> Vec<LearnerId> {
        CiMethod::ALL.iter().flat_map(|&ci| RcKind::ALL.iter().map(move |&rc| LearnerId { ci, rc })).collect()
    }
}

impl fmt::Display for LearnerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.ci, self.rc)
    }
}

impl FromStr for LearnerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some((ci, rc)) = s.split_once('-') else {
            bail!(Config, "learner id `{s}` is not of the form CI-RC");
        };
        Ok(LearnerId { ci: ci.parse()?, rc: rc.parse()? })
    }
}

/// Average normalised class vectors of the pre-training nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceVector {
    pub churner: [f64; 2],
    /// Zero when the pre-training period has no non-churner with neighbours.
    pub non_churner: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NlbModel {
    pub beta0: f64,
    pub beta1: f64,
}

/// Weighted class sums `(sum w P(c0), sum w P(c1))` of node `i`.
pub fn class_vector(graph: &CallGraph, state: &[f64], i: usize) -> [f64; 2] {
    let (targets, weights) = graph.neighbors(i);
    let mut cv = [0.0; 2];
    for (&j, &w) in targets.iter().zip(weights) {
        let p = state[j as usize];
        cv[0] += w * (1.0 - p);
        cv[1] += w * p;
    }
    cv
}

/// Weighted share of churn among the neighbours, `None` for isolated nodes.
pub fn count_link(graph: &CallGraph, state: &[f64], i: usize) -> Option<f64> {
    let cv = class_vector(graph, state, i);
    let z = cv[0] + cv[1];
    (z > 0.0).then(|| (cv[1] / z).clamp(0.0, 1.0))
}

fn check_lengths(graph: &CallGraph, state: &[f64], target: &[bool]) -> Result<()> {
    if state.len() != graph.num_nodes() || target.len() != graph.num_nodes() {
        bail!(
            Alignment,
            "pre-training sizes differ: {} nodes, {} states, {} labels",
            graph.num_nodes(),
            state.len(),
            target.len()
        );
    }
    Ok(())
}

/// Builds the CDRN reference vectors from the network and state at `t-1` and
/// the labels at `t`.
pub fn cdrn_pretrain(graph: &CallGraph, state: &[f64], target: &[bool]) -> Result<ReferenceVector> {
    check_lengths(graph, state, target)?;
    let mut sums = [[0.0; 2]; 2];
    let mut counts = [0usize; 2];
    for i in 0..graph.num_nodes() {
        let cv = class_vector(graph, state, i);
        let z = cv[0] + cv[1];
        if z <= 0.0 {
            continue;
        }
        let c = target[i] as usize;
        sums[c][0] += cv[0] / z;
        sums[c][1] += cv[1] / z;
        counts[c] += 1;
    }
    if counts[1] == 0 {
        bail!(Pretraining, "no churner with neighbours in the pre-training period");
    }
    let mean = |c: usize| {
        if counts[c] == 0 {
            [0.0; 2]
        } else {
            [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64]
        }
    };
    Ok(ReferenceVector { churner: mean(1), non_churner: mean(0) })
}

/// Fits the NLB logistic model of the labels at `t` on the count link at `t-1`.
/// Isolated nodes carry no link evidence and are left out.
pub fn nlb_pretrain(graph: &CallGraph, state: &[f64], target: &[bool], opts: &LogisticOptions) -> Result<NlbModel> {
    check_lengths(graph, state, target)?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..graph.num_nodes() {
        if let Some(v) = count_link(graph, state, i) {
            x.push(v);
            y.push(target[i]);
        }
    }
    let fit = fit_logistic_dense(&x, 1, &y, opts)?;
    if !fit.intercept.is_finite() || !fit.coefficients[0].is_finite() {
        bail!(Pretraining, "non-finite link-based coefficients");
    }
    Ok(NlbModel { beta0: fit.intercept, beta1: fit.coefficients[0] })
}

/// A ready-to-apply relational classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RelationalClassifier {
    Wvrn,
    Cdrn(ReferenceVector),
    Nlb(NlbModel),
    Spa { diffusion: f64 },
}

/// Pre-training inputs: network and state at `t-1`, labels at `t`.
#[derive(Clone, Copy, Debug)]
pub struct Pretraining<'a> {
    pub graph: &'a CallGraph,
    pub state: &'a [f64],
    pub target: &'a [bool],
}

impl RelationalClassifier {
    pub fn kind(&self) -> RcKind {
        match self {
            RelationalClassifier::Wvrn => RcKind::Wvrn,
            RelationalClassifier::Cdrn(_) => RcKind::Cdrn,
            RelationalClassifier::Nlb(_) => RcKind::Nlb,
            RelationalClassifier::Spa { .. } => RcKind::Spa,
        }
    }

    pub fn prepare(
        kind: RcKind,
        pretraining: Option<Pretraining<'_>>,
        spa_diffusion: f64,
        logistic: &LogisticOptions,
    ) -> Result<Self> {
        if kind.needs_pretraining() && pretraining.is_none() {
            bail!(Pretraining, "{kind} requires a pre-training period");
        }
        Ok(match kind {
            RcKind::Wvrn => RelationalClassifier::Wvrn,
            RcKind::Spa => {
                if !(spa_diffusion > 0.0 && spa_diffusion < 1.0) {
                    bail!(Config, "diffusion must lie in (0, 1), got {spa_diffusion}");
                }
                RelationalClassifier::Spa { diffusion: spa_diffusion }
            }
            RcKind::Cdrn => {
                let p = pretraining.unwrap();
                RelationalClassifier::Cdrn(cdrn_pretrain(p.graph, p.state, p.target)?)
            }
            RcKind::Nlb => {
                let p = pretraining.unwrap();
                RelationalClassifier::Nlb(nlb_pretrain(p.graph, p.state, p.target, logistic)?)
            }
        })
    }

    /// Score of node `i` given the current state; nodes without relational
    /// evidence get `prior`.
    pub fn score(&self, graph: &CallGraph, state: &[f64], prior: f64, i: usize) -> f64 {
        let s = match self {
            RelationalClassifier::Wvrn => count_link(graph, state, i).unwrap_or(prior),
            RelationalClassifier::Cdrn(rv) => {
                let cv = class_vector(graph, state, i);
                let norm = sqrt(cv[0] * cv[0] + cv[1] * cv[1]);
                let rnorm = sqrt(rv.churner[0] * rv.churner[0] + rv.churner[1] * rv.churner[1]);
                if norm > 0.0 && rnorm > 0.0 {
                    (cv[0] * rv.churner[0] + cv[1] * rv.churner[1]) / (norm * rnorm)
                } else {
                    prior
                }
            }
            RelationalClassifier::Nlb(m) => match count_link(graph, state, i) {
                Some(x) => sigmoid(m.beta0 + m.beta1 * x),
                None => prior,
            },
            RelationalClassifier::Spa { diffusion } => {
                let (targets, weights) = graph.neighbors(i);
                let mut num = 0.0;
                let mut z = 0.0;
                for (&j, &w) in targets.iter().zip(weights) {
                    let out = graph.row_weight(j as usize);
                    if out > 0.0 {
                        let r = w / out;
                        num += r * state[j as usize];
                        z += r;
                    }
                }
                if z > 0.0 {
                    diffusion * num / z
                } else {
                    prior
                }
            }
        };
        s.clamp(0.0, 1.0)
    }

    /// One simultaneous sweep: `out[i] = RC(state)_i` for every node.
    pub fn apply_into(&self, graph: &CallGraph, state: &[f64], prior: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.score(graph, state, prior, i);
        }
    }

    pub fn apply(&self, graph: &CallGraph, state: &[f64], prior: f64) -> Vec<f64> {
        let mut out = vec![0.0; state.len()];
        self.apply_into(graph, state, prior, &mut out);
        out
    }
}

/// Class prior: mean initial state over nodes that have neighbours, or over
/// all nodes when the graph is empty.
pub fn class_prior(graph: &CallGraph, init: &[f64]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (i, &v) in init.iter().enumerate() {
        if graph.degree(i) > 0 {
            s += v;
            n += 1;
        }
    }
    if n == 0 {
        if init.is_empty() {
            return 0.0;
        }
        return init.iter().sum::<f64>() / init.len() as f64;
    }
    s / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CiConfig {
    pub method: CiMethod,
    pub burn_in: usize,
    pub max_iter: usize,
    pub threshold: f64,
    pub rlsa_k: f64,
    pub rlsa_alpha: f64,
    pub seed: u64,
}

impl CiConfig {
    pub fn new(method: CiMethod) -> Self {
        CiConfig {
            method,
            burn_in: GIBBS_BURN_IN,
            max_iter: method.default_cap(),
            threshold: DEFAULT_THRESHOLD,
            rlsa_k: DEFAULT_RLSA_K,
            rlsa_alpha: DEFAULT_RLSA_ALPHA,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            bail!(Config, "threshold must be positive, got {}", self.threshold);
        }
        if !(self.rlsa_k > 0.0 && self.rlsa_k <= 1.0) {
            bail!(Config, "rlsa k must lie in (0, 1], got {}", self.rlsa_k);
        }
        if !(self.rlsa_alpha > 0.0 && self.rlsa_alpha < 1.0) {
            bail!(Config, "rlsa alpha must lie in (0, 1), got {}", self.rlsa_alpha);
        }
        if self.max_iter == 0 {
            bail!(Config, "max_iter must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreState {
    pub scores: Vec<f64>,
    /// Sweeps performed, burn-in excluded.
    pub iterations: usize,
    pub converged: bool,
}

/// Runs collective inference from `init` (known labels at `t`); the result
/// estimates churn at `t+1`.
pub fn run_ci(
    rc: &RelationalClassifier,
    graph: &CallGraph,
    init: &[f64],
    prior: f64,
    cfg: &CiConfig,
) -> Result<ScoreState> {
    run_ci_observed(rc, graph, init, prior, cfg, true, &mut |_, _| {})
}

/// As [`run_ci`], calling `observe(sweep, state)` after every counted sweep.
/// With `early_stop` off every method runs exactly `cfg.max_iter` sweeps.
pub fn run_ci_observed(
    rc: &RelationalClassifier,
    graph: &CallGraph,
    init: &[f64],
    prior: f64,
    cfg: &CiConfig,
    early_stop: bool,
    observe: &mut dyn FnMut(usize, &[f64]),
) -> Result<ScoreState> {
    cfg.validate()?;
    let n = graph.num_nodes();
    if init.len() != n {
        bail!(Alignment, "{} initial states for {n} nodes", init.len());
    }
    if init.iter().any(|v| !(0.0..=1.0).contains(v)) {
        bail!(Range, "initial states must lie in [0, 1]");
    }
    let cap = cfg.max_iter;
    let mut cur = init.to_vec();
    let mut next = vec![0.0; n];
    let max_delta = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    match cfg.method {
        CiMethod::None => {
            rc.apply_into(graph, &cur, prior, &mut next);
            observe(1, &next);
            Ok(ScoreState { scores: next, iterations: 1, converged: true })
        }
        CiMethod::Gibbs => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for _ in 0..cfg.burn_in {
                rc.apply_into(graph, &cur, prior, &mut next);
                for (c, &p) in cur.iter_mut().zip(&next) {
                    *c = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                }
            }
            let mut total = vec![0.0; n];
            let mut mean = vec![0.0; n];
            for t in 1..=cap {
                rc.apply_into(graph, &cur, prior, &mut next);
                let mut sum_l = 0.0;
                let mut sum_c = 0.0;
                for i in 0..n {
                    let c = if rng.random::<f64>() < next[i] { 1.0 } else { 0.0 };
                    cur[i] = c;
                    total[i] += c;
                    mean[i] = total[i] / t as f64;
                    sum_l += total[i];
                    sum_c += c;
                }
                observe(t, &mean);
                if early_stop && t >= 2 && n > 0 {
                    // Shift of the node-averaged running mean.
                    let shift = (sum_l / t as f64 - (sum_l - sum_c) / (t - 1) as f64).abs() / n as f64;
                    if shift < cfg.threshold {
                        return Ok(ScoreState { scores: mean, iterations: t, converged: true });
                    }
                }
            }
            Ok(ScoreState { scores: mean, iterations: cap, converged: !early_stop })
        }
        CiMethod::Ic => {
            for t in 1..=cap {
                rc.apply_into(graph, &cur, prior, &mut next);
                for v in next.iter_mut() {
                    *v = if *v > 0.5 { 1.0 } else { 0.0 };
                }
                observe(t, &next);
                let stop = next.iter().all(|&v| v == 0.0) || max_delta(&cur, &next) <= cfg.threshold;
                core::mem::swap(&mut cur, &mut next);
                if early_stop && stop {
                    return Ok(ScoreState { scores: cur, iterations: t, converged: true });
                }
            }
            Ok(ScoreState { scores: cur, iterations: cap, converged: !early_stop })
        }
        CiMethod::Rl => {
            for t in 1..=cap {
                rc.apply_into(graph, &cur, prior, &mut next);
                observe(t, &next);
                let stop = max_delta(&cur, &next) <= cfg.threshold;
                core::mem::swap(&mut cur, &mut next);
                if early_stop && stop {
                    return Ok(ScoreState { scores: cur, iterations: t, converged: true });
                }
            }
            Ok(ScoreState { scores: cur, iterations: cap, converged: !early_stop })
        }
        CiMethod::Rlsa => {
            let mut beta = cfg.rlsa_k;
            for t in 1..=cap {
                rc.apply_into(graph, &cur, prior, &mut next);
                for (v, &prev) in next.iter_mut().zip(&cur) {
                    *v = (beta * *v + (1.0 - beta) * prev).clamp(0.0, 1.0);
                }
                observe(t, &next);
                let stop = max_delta(&cur, &next) <= cfg.threshold;
                core::mem::swap(&mut cur, &mut next);
                if early_stop && stop {
                    return Ok(ScoreState { scores: cur, iterations: t, converged: true });
                }
                beta *= cfg.rlsa_alpha;
            }
            Ok(ScoreState { scores: cur, iterations: cap, converged: !early_stop })
        }
        CiMethod::Spa => {
            let active = |s: &[f64]| s.iter().filter(|&&v| v > 0.0).count();
            for t in 1..=cap {
                rc.apply_into(graph, &cur, prior, &mut next);
                observe(t, &next);
                let changing = max_delta(&cur, &next) > cfg.threshold;
                let growing = active(&next) > active(&cur);
                core::mem::swap(&mut cur, &mut next);
                if early_stop && !changing && !growing {
                    return Ok(ScoreState { scores: cur, iterations: t, converged: true });
                }
            }
            Ok(ScoreState { scores: cur, iterations: cap, converged: !early_stop })
        }
    }
}

/// Population variance of the scores after each of `sweeps` sweeps, with
/// early stopping disabled.
pub fn sensitivity_trace(
    rc: &RelationalClassifier,
    graph: &CallGraph,
    init: &[f64],
    prior: f64,
    cfg: &CiConfig,
    sweeps: usize,
) -> Result<Vec<f64>> {
    let mut cfg = *cfg;
    cfg.max_iter = sweeps.max(1);
    let mut trace = Vec::with_capacity(sweeps);
    run_ci_observed(rc, graph, init, prior, &cfg, false, &mut |_, s| trace.push(variance(s)))?;
    trace.truncate(sweeps);
    Ok(trace)
}

pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// `"gibbs-nlb"` style labels for a list of learners.
pub fn learner_labels(learners: &[LearnerId]) -> Vec<String> {
    learners.iter().map(|l| alloc::format!("{l}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Direction, WeightScheme};
    use proptest::prelude::*;
    use rand::Rng;

    fn undirected(n: usize, edges: &[(u32, u32, f64)]) -> CallGraph {
        let mut entries = Vec::new();
        for &(a, b, w) in edges {
            entries.push((a, b, w));
            entries.push((b, a, w));
        }
        CallGraph::from_entries(n, Direction::Undirected, WeightScheme::Length, crate::graph::Decay::None, entries)
            .unwrap()
    }

    fn random_graph(n: usize, seed: u64, binary: bool) -> CallGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for a in 0..n as u32 {
            for b in a + 1..n as u32 {
                if rng.random::<f64>() < 0.15 {
                    let w = if binary { 1.0 } else { rng.random::<f64>() * 5.0 + 0.1 };
                    edges.push((a, b, w));
                }
            }
        }
        undirected(n, &edges)
    }

    fn random_state(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    /// Dense adjacency for the brute-force oracles.
    fn dense(g: &CallGraph) -> Vec<Vec<f64>> {
        let n = g.num_nodes();
        let mut m = vec![vec![0.0; n]; n];
        for (i, j, w) in g.edges() {
            m[i as usize][j as usize] = w;
        }
        m
    }

    #[test]
    fn learner_ids_round_trip() {
        assert_eq!(LearnerId::all().len(), 24);
        for l in LearnerId::all() {
            assert_eq!(alloc::format!("{l}").parse::<LearnerId>().unwrap(), l);
        }
        assert_eq!("gib-spaRC".parse::<LearnerId>().unwrap(), LearnerId::new(CiMethod::Gibbs, RcKind::Spa));
        assert_eq!("no-nlb".parse::<LearnerId>().unwrap(), LearnerId::new(CiMethod::None, RcKind::Nlb));
        assert!(matches!("foo-wvrn".parse::<LearnerId>(), Err(Error::Config(_))));
        assert!("gibbs".parse::<LearnerId>().is_err());
    }

    #[test]
    fn wvrn_examples() {
        let g = undirected(3, &[(0, 1, 1.0), (0, 2, 1.0)]);
        assert_eq!(RelationalClassifier::Wvrn.score(&g, &[0.0, 1.0, 0.0], 0.1, 0), 0.5);
        let g = undirected(3, &[(0, 1, 3.0), (0, 2, 1.0)]);
        assert_eq!(RelationalClassifier::Wvrn.score(&g, &[0.0, 1.0, 0.0], 0.1, 0), 0.75);
        let g = undirected(4, &[(0, 1, 3.0)]);
        assert_eq!(RelationalClassifier::Wvrn.score(&g, &[0.0, 1.0, 0.0, 0.0], 0.3, 3), 0.3);
    }

    #[test]
    fn wvrn_matches_weighted_mean_oracle() {
        let g = random_graph(40, 1, false);
        let s = random_state(40, 2);
        let m = dense(&g);
        let got = RelationalClassifier::Wvrn.apply(&g, &s, 0.2);
        for i in 0..40 {
            let z: f64 = m[i].iter().sum();
            let want = if z > 0.0 { (0..40).map(|j| m[i][j] * s[j]).sum::<f64>() / z } else { 0.2 };
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cdrn_pretraining_examples() {
        // Node 0 is the churner; its neighbours 1..=5 have 4 churners of weight 1
        // and one non-churner of weight 1 -> CV = (0.2, 0.8).
        let g = undirected(6, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (0, 4, 1.0), (0, 5, 1.0)]);
        let state = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let target = [true, false, false, false, false, false];
        let rv = cdrn_pretrain(&g, &state, &target).unwrap();
        assert!((rv.churner[0] - 0.2).abs() < 1e-15 && (rv.churner[1] - 0.8).abs() < 1e-15);

        let g = undirected(4, &[(0, 2, 1.0), (1, 3, 1.0)]);
        let state = [0.0, 0.0, 0.0, 1.0];
        let rv = cdrn_pretrain(&g, &state, &[true, true, false, false]).unwrap();
        assert_eq!(rv.churner, [0.5, 0.5]);

        assert!(matches!(cdrn_pretrain(&g, &state, &[false; 4]), Err(Error::Pretraining(_))));
    }

    #[test]
    fn cdrn_cosine_examples() {
        let rv = ReferenceVector { churner: [0.0, 1.0], non_churner: [1.0, 0.0] };
        let rc = RelationalClassifier::Cdrn(rv);
        let g = undirected(3, &[(0, 1, 2.0), (2, 1, 1.0)]);
        // Neighbour 1 is a churner: CV parallel to RV(c1).
        assert!((rc.score(&g, &[0.0, 1.0, 0.0], 0.4, 0) - 1.0).abs() < 1e-15);
        // Neighbour 1 is a non-churner: orthogonal.
        assert_eq!(rc.score(&g, &[0.0, 0.0, 0.0], 0.4, 0), 0.0);
        let iso = undirected(2, &[]);
        assert_eq!(rc.score(&iso, &[1.0, 1.0], 0.4, 0), 0.4);
    }

    #[test]
    fn cdrn_matches_oracles() {
        let g0 = random_graph(30, 5, false);
        let s0 = random_state(30, 6);
        let target: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let rv = cdrn_pretrain(&g0, &s0, &target).unwrap();
        let m0 = dense(&g0);
        let mut acc = [0.0; 2];
        let mut cnt = 0.0;
        for i in (0..30).filter(|&i| target[i]) {
            let z: f64 = m0[i].iter().sum();
            if z > 0.0 {
                acc[1] += (0..30).map(|j| m0[i][j] * s0[j]).sum::<f64>() / z;
                acc[0] += (0..30).map(|j| m0[i][j] * (1.0 - s0[j])).sum::<f64>() / z;
                cnt += 1.0;
            }
        }
        assert!((rv.churner[0] - acc[0] / cnt).abs() < 1e-12);
        assert!((rv.churner[1] - acc[1] / cnt).abs() < 1e-12);

        let g = random_graph(30, 7, false);
        let s = random_state(30, 8);
        let m = dense(&g);
        let got = RelationalClassifier::Cdrn(rv).apply(&g, &s, 0.1);
        for i in 0..30 {
            let a: f64 = (0..30).map(|j| m[i][j] * (1.0 - s[j])).sum();
            let b: f64 = (0..30).map(|j| m[i][j] * s[j]).sum();
            let want = if a + b > 0.0 {
                (a * rv.churner[0] + b * rv.churner[1])
                    / ((a * a + b * b).sqrt() * (rv.churner[0].powi(2) + rv.churner[1].powi(2)).sqrt())
            } else {
                0.1
            };
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nlb_examples() {
        let g = random_graph(20, 3, false);
        let s = random_state(20, 4);
        let zero = RelationalClassifier::Nlb(NlbModel { beta0: 0.0, beta1: 0.0 });
        assert!(zero.apply(&g, &s, 0.5).iter().all(|&v| v == 0.5));
        let sat = RelationalClassifier::Nlb(NlbModel { beta0: 0.0, beta1: 1e3 });
        let g1 = undirected(2, &[(0, 1, 1.0)]);
        assert!(sat.score(&g1, &[0.0, 1.0], 0.5, 0) > 1.0 - 1e-12);

        let model = NlbModel { beta0: -1.3, beta1: 2.7 };
        let got = RelationalClassifier::Nlb(model).apply(&g, &s, 0.25);
        let m = dense(&g);
        for i in 0..20 {
            let z: f64 = m[i].iter().sum();
            let want = if z > 0.0 {
                let x = (0..20).map(|j| m[i][j] * s[j]).sum::<f64>() / z;
                1.0 / (1.0 + (-(-1.3 + 2.7 * x)).exp())
            } else {
                0.25
            };
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nlb_pretraining_examples() {
        // Labels equal to the count link: strongly positive slope.
        let g = undirected(8, &[(0, 4, 1.0), (1, 5, 1.0), (2, 6, 1.0), (3, 7, 1.0)]);
        let state = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let target = [true, true, false, false, false, false, false, false];
        let m = nlb_pretrain(&g, &state, &target, &LogisticOptions::default()).unwrap();
        assert!(m.beta1 > 1.0);

        // Balanced labels with identical link values: no signal at all.
        let g = undirected(4, &[(0, 1, 1.0), (2, 3, 1.0)]);
        let m = nlb_pretrain(&g, &[1.0; 4], &[true, false, true, false], &LogisticOptions::default()).unwrap();
        assert_eq!(m.beta1, 0.0);
        assert!(m.beta0.abs() < 1e-12);

        assert!(matches!(
            nlb_pretrain(&g, &[1.0; 4], &[false; 4], &LogisticOptions::default()),
            Err(Error::Fitting(_))
        ));
    }

    #[test]
    fn nlb_independent_labels_recover_base_rate() {
        let g = random_graph(400, 9, true);
        let s: Vec<f64> = random_state(400, 10).iter().map(|&v| if v < 0.3 { 1.0 } else { 0.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let target: Vec<bool> = (0..400).map(|_| rng.random::<f64>() < 0.2).collect();
        let m = nlb_pretrain(&g, &s, &target, &LogisticOptions::default()).unwrap();
        let used: Vec<usize> = (0..400).filter(|&i| g.degree(i) > 0).collect();
        let rate = used.iter().filter(|&&i| target[i]).count() as f64 / used.len() as f64;
        let logit = (rate / (1.0 - rate)).ln();
        // Independent data: the slope is noise and the fit sits near the base rate.
        let mean_x: f64 = used.iter().map(|&i| count_link(&g, &s, i).unwrap()).sum::<f64>() / used.len() as f64;
        assert!((m.beta0 + m.beta1 * mean_x - logit).abs() < 0.05);
        assert!(m.beta1.abs() < 2.5);
    }

    #[test]
    fn spa_rc_examples_and_oracle() {
        let rc = RelationalClassifier::Spa { diffusion: 0.85 };
        let g = undirected(3, &[(0, 1, 1.0)]);
        assert_eq!(rc.score(&g, &[0.0, 0.0, 1.0], 0.2, 2), 0.2);
        // Single neighbour whose whole out-weight is the shared edge.
        assert!((rc.score(&g, &[0.0, 1.0, 0.0], 0.2, 0) - 0.85).abs() < 1e-15);

        let g = random_graph(35, 12, false);
        let s = random_state(35, 13);
        let m = dense(&g);
        let got = rc.apply(&g, &s, 0.05);
        for i in 0..35 {
            let mut num = 0.0;
            let mut z = 0.0;
            for j in 0..35 {
                let out: f64 = m[j].iter().sum();
                if m[i][j] > 0.0 && out > 0.0 {
                    num += m[i][j] / out * s[j];
                    z += m[i][j] / out;
                }
            }
            let want = if z > 0.0 { 0.85 * num / z } else { 0.05 };
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn none_is_a_single_sweep() {
        let g = random_graph(25, 14, false);
        let s = random_state(25, 15);
        let out = run_ci(&RelationalClassifier::Wvrn, &g, &s, 0.1, &CiConfig::new(CiMethod::None)).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.scores, RelationalClassifier::Wvrn.apply(&g, &s, 0.1));
    }

    #[test]
    fn rl_with_identical_labels_converges_at_once() {
        let g = random_graph(25, 16, false);
        let init = vec![1.0; 25];
        let out = run_ci(&RelationalClassifier::Wvrn, &g, &init, 1.0, &CiConfig::new(CiMethod::Rl)).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert!(out.scores.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rlsa_with_tiny_alpha_freezes_after_first_sweep() {
        let g = random_graph(25, 17, false);
        let init = random_state(25, 18);
        let mut cfg = CiConfig::new(CiMethod::Rlsa);
        cfg.rlsa_alpha = 1e-300;
        cfg.max_iter = 5;
        let mut states = Vec::new();
        let out = run_ci_observed(&RelationalClassifier::Wvrn, &g, &init, 0.1, &cfg, true, &mut |_, s| {
            states.push(s.to_vec())
        })
        .unwrap();
        // beta = k = 1 on the first sweep, so the state is a plain RC sweep.
        assert_eq!(states[0], RelationalClassifier::Wvrn.apply(&g, &init, 0.1));
        // beta ~ 0 afterwards: the second sweep reproduces the first and stops.
        assert_eq!(out.iterations, 2);
        for (a, b) in out.scores.iter().zip(&states[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ic_returns_hard_labels_and_stops_on_all_zero() {
        let g = undirected(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let out = run_ci(&RelationalClassifier::Wvrn, &g, &[1.0, 0.0, 0.0], 0.3, &CiConfig::new(CiMethod::Ic)).unwrap();
        // Sweep 1: node 1 sees 0.5 -> tie to c0; nodes 0 and 2 see 0 -> all zero.
        assert_eq!(out.scores, vec![0.0, 0.0, 0.0]);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn gibbs_hand_trace_on_deterministic_graph() {
        // Two disjoint pairs: (0,1) both churners, (2,3) both non-churners.
        // Every RC score is exactly 0 or 1, so sampling is deterministic.
        let g = undirected(4, &[(0, 1, 1.0), (2, 3, 1.0)]);
        let out = run_ci(&RelationalClassifier::Wvrn, &g, &[1.0, 1.0, 0.0, 0.0], 0.5, &CiConfig::new(CiMethod::Gibbs))
            .unwrap();
        assert_eq!(out.scores, vec![1.0, 1.0, 0.0, 0.0]);
        // The running mean never moves, so the check at t = 2 stops the run.
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn spa_ci_keeps_going_while_activation_spreads() {
        // Path 0-1-2-3 with only node 0 active: activation needs three sweeps
        // to reach node 3, and scores keep decaying by d afterwards.
        let g = undirected(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]);
        let rc = RelationalClassifier::Spa { diffusion: 0.5 };
        let out = run_ci(&rc, &g, &[1.0, 0.0, 0.0, 0.0], 0.0, &CiConfig::new(CiMethod::Spa)).unwrap();
        assert!(out.iterations >= 3);
        assert!(out.iterations <= 100);
        assert!(out.converged);
    }

    #[test]
    fn sensitivity_trace_examples() {
        let g = random_graph(30, 19, false);
        let trace =
            sensitivity_trace(&RelationalClassifier::Wvrn, &g, &[0.0; 30], 0.0, &CiConfig::new(CiMethod::Rl), 5)
                .unwrap();
        assert_eq!(trace, vec![0.0; 5]);

        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let init: Vec<f64> = (0..30).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
        let prior = class_prior(&g, &init);
        let trace =
            sensitivity_trace(&RelationalClassifier::Wvrn, &g, &init, prior, &CiConfig::new(CiMethod::Rl), 10).unwrap();
        assert_eq!(trace.len(), 10);
        assert!(trace[0] > 0.0);
        assert!(trace[9] < trace[0]);
    }

    #[test]
    fn config_validation() {
        let mut c = CiConfig::new(CiMethod::Rlsa);
        c.rlsa_alpha = 1.0;
        assert!(c.validate().is_err());
        let mut c = CiConfig::new(CiMethod::Rl);
        c.threshold = 0.0;
        assert!(c.validate().is_err());
        assert!(RelationalClassifier::prepare(RcKind::Spa, None, 1.0, &LogisticOptions::default()).is_err());
        assert!(matches!(
            RelationalClassifier::prepare(RcKind::Nlb, None, 0.85, &LogisticOptions::default()),
            Err(Error::Pretraining(_))
        ));
    }

    fn all_rcs(g: &CallGraph, s: &[f64]) -> Vec<RelationalClassifier> {
        let target: Vec<bool> = s.iter().map(|&v| v > 0.5).collect();
        let mut rcs = vec![RelationalClassifier::Wvrn, RelationalClassifier::Spa { diffusion: 0.85 }];
        if let Ok(rv) = cdrn_pretrain(g, s, &target) {
            rcs.push(RelationalClassifier::Cdrn(rv));
        }
        if let Ok(m) = nlb_pretrain(g, s, &target, &LogisticOptions::default()) {
            rcs.push(RelationalClassifier::Nlb(m));
        }
        rcs
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scores_stay_in_unit_interval_and_caps_hold(seed in 0u64..1000, n in 5usize..30) {
            let g = random_graph(n, seed, false);
            let init: Vec<f64> = random_state(n, seed + 1).iter().map(|&v| if v < 0.4 { 1.0 } else { 0.0 }).collect();
            let prior = class_prior(&g, &init);
            for rc in all_rcs(&g, &init) {
                for method in CiMethod::ALL {
                    let mut cfg = CiConfig::new(method).with_seed(seed);
                    cfg.burn_in = 5;
                    cfg.max_iter = cfg.max_iter.min(50);
                    let mut ok = true;
                    let out = run_ci_observed(&rc, &g, &init, prior, &cfg, true, &mut |_, s| {
                        ok &= s.iter().all(|v| (0.0..=1.0).contains(v));
                    }).unwrap();
                    prop_assert!(ok);
                    prop_assert!(out.iterations <= cfg.max_iter);
                    if method == CiMethod::Ic {
                        prop_assert!(out.scores.iter().all(|&v| v == 0.0 || v == 1.0));
                    }
                    if method == CiMethod::None {
                        prop_assert_eq!(&out.scores, &rc.apply(&g, &init, prior));
                    }
                }
            }
        }

        #[test]
        fn wvrn_is_scale_invariant(seed in 0u64..1000, k in 0.001f64..1000.0) {
            let g = random_graph(20, seed, false);
            let scaled = CallGraph::from_entries(
                20,
                Direction::Undirected,
                WeightScheme::Length,
                crate::graph::Decay::None,
                g.edges().map(|(a, b, w)| (a, b, w * k)).collect(),
            ).unwrap();
            let s = random_state(20, seed);
            let a = RelationalClassifier::Wvrn.apply(&g, &s, 0.3);
            let b = RelationalClassifier::Wvrn.apply(&scaled, &s, 0.3);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn wvrn_on_binary_graph_is_unweighted_mean(seed in 0u64..1000) {
            let g = random_graph(20, seed, true);
            let s = random_state(20, seed + 7);
            let got = RelationalClassifier::Wvrn.apply(&g, &s, 0.3);
            for i in 0..20 {
                let (t, _) = g.neighbors(i);
                let want = if t.is_empty() { 0.3 } else { t.iter().map(|&j| s[j as usize]).sum::<f64>() / t.len() as f64 };
                prop_assert!((got[i] - want).abs() < 1e-12);
            }
        }

        #[test]
        fn gibbs_is_seed_deterministic(seed in 0u64..1000) {
            let g = random_graph(15, seed, false);
            let init: Vec<f64> = random_state(15, seed).iter().map(|&v| if v < 0.5 { 1.0 } else { 0.0 }).collect();
            let mut cfg = CiConfig::new(CiMethod::Gibbs).with_seed(seed);
            cfg.burn_in = 10;
            cfg.max_iter = 50;
            let a = run_ci(&RelationalClassifier::Wvrn, &g, &init, 0.5, &cfg).unwrap();
            let b = run_ci(&RelationalClassifier::Wvrn, &g, &init, 0.5, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
