//! Seeded synthetic call-detail records with planted churn contagion.
//!
//! The social graph is a Chung-Lu style power-law graph. Churners are chosen
//! month by month (M1..M5): with probability `homophily` a slot is filled by
//! an alive neighbour of a previous-month churner, otherwise by a random
//! alive customer. Calls run along social ties until either side churns, and
//! a weekly keep-alive call guarantees that nobody alive looks inactive.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, round};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::cdr::{
    CdrRecord, CdrStore, ChurnLabels, CustomerId, Timeline, DEFAULT_MIN_DURATION, MONTHS, MONTH_DAYS, SECONDS_PER_DAY,
};
use crate::error::bail;
use crate::Result;

/// Monday 2010-01-04 00:00 UTC.
pub const DEFAULT_EPOCH: i64 = 1_262_563_200;

/// Months in which churn is planted; M6 only confirms M5 churn.
pub const CHURN_MONTHS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_customers: usize,
    /// Share of the alive customers churning in each of M1..M5.
    pub churn_rate: f64,
    /// Target fraction of nonzero ordered pairs in the social graph.
    pub sparsity: f64,
    /// Probability that a churn slot is filled by contagion.
    pub homophily: f64,
    pub degree_exponent: f64,
    /// Mean calls per tie per 30 days.
    pub calls_per_tie: f64,
    /// Log-scale spread of the per-tie call rate.
    pub call_rate_sigma: f64,
    /// Median call duration in seconds.
    pub duration_median: f64,
    pub duration_sigma: f64,
    /// Fraction of calls shorter than the four-second filter.
    pub short_call_fraction: f64,
    /// Relative weight of night (00-08), day (08-16) and evening (16-24) calls.
    pub time_mix: [f64; 3],
    pub epoch: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_customers: 10_000,
            churn_rate: 0.05,
            sparsity: 1e-3,
            homophily: 0.8,
            degree_exponent: 2.5,
            calls_per_tie: 5.0,
            call_rate_sigma: 0.6,
            duration_median: 90.0,
            duration_sigma: 1.0,
            short_call_fraction: 0.04,
            time_mix: [0.1, 0.5, 0.4],
            epoch: DEFAULT_EPOCH,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_customers < 10 {
            bail!(Config, "at least 10 customers are needed, got {}", self.n_customers);
        }
        if self.n_customers > u32::MAX as usize {
            bail!(Config, "too many customers");
        }
        if !(0.0..1.0).contains(&self.churn_rate) {
            bail!(Config, "churn rate must lie in [0, 1), got {}", self.churn_rate);
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            bail!(Config, "homophily must lie in [0, 1], got {}", self.homophily);
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 0.5) {
            bail!(Config, "sparsity must lie in (0, 0.5], got {}", self.sparsity);
        }
        if self.sparsity * (self.n_customers as f64 - 1.0) < 1.0 {
            bail!(
                Config,
                "sparsity {} gives mean degree below 1 on {} customers; every customer needs a tie",
                self.sparsity,
                self.n_customers
            );
        }
        if !(self.degree_exponent > 2.0) {
            bail!(Config, "degree exponent must exceed 2, got {}", self.degree_exponent);
        }
        if !(self.calls_per_tie > 0.0 && self.call_rate_sigma >= 0.0) {
            bail!(Config, "call rate parameters must be positive");
        }
        if !(self.duration_median >= DEFAULT_MIN_DURATION as f64 && self.duration_sigma >= 0.0) {
            bail!(Config, "duration median must be at least {DEFAULT_MIN_DURATION} seconds");
        }
        if !(0.0..1.0).contains(&self.short_call_fraction) {
            bail!(Config, "short call fraction must lie in [0, 1)");
        }
        if self.time_mix.iter().any(|w| !(*w >= 0.0)) || self.time_mix.iter().sum::<f64>() <= 0.0 {
            bail!(Config, "time-of-day mix must be non-negative with a positive total");
        }
        Ok(())
    }
}

/// Generated store plus the ground truth it was built from.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub store: CdrStore,
    /// Churndates over the whole observation period.
    pub labels: ChurnLabels,
    /// Undirected social ties `(a, b)` with `a < b`.
    pub ties: Vec<(CustomerId, CustomerId)>,
}

fn customer_names(n: usize) -> Vec<String> {
    let width = alloc::format!("{}", n.saturating_sub(1)).len().max(6);
    (0..n).map(|i| alloc::format!("c{:0width$}", i)).collect()
}

/// Power-law social graph with exactly `round(sparsity * n(n-1)/2)` sampled
/// ties, plus one tie for every node left isolated.
fn social_graph(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<CustomerId>>> {
    let n = cfg.n_customers;
    let target = round(cfg.sparsity * (n * (n - 1)) as f64 / 2.0) as usize;
    // Expected-degree weights w_i ~ (i + 1)^(-1/(exponent - 1)), randomly placed.
    let mut weights: Vec<f64> = (0..n).map(|i| exp(-log(i as f64 + 1.0) / (cfg.degree_exponent - 1.0))).collect();
    weights.shuffle(rng);
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let draw = |rng: &mut ChaCha8Rng| -> usize {
        let u = rng.random::<f64>() * acc;
        cumulative.partition_point(|&c| c <= u).min(n - 1)
    };
    let mut ties: BTreeSet<(CustomerId, CustomerId)> = BTreeSet::new();
    let mut attempts = 0usize;
    let budget = 50 * target + 1000;
    while ties.len() < target {
        attempts += 1;
        if attempts > budget {
            bail!(Config, "cannot place {target} ties on {n} customers with this degree distribution");
        }
        let (a, b) = (draw(rng), draw(rng));
        if a != b {
            ties.insert((a.min(b) as CustomerId, a.max(b) as CustomerId));
        }
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &ties {
        adj[a as usize].push(b);
        adj[b as usize].push(a);
    }
    for i in 0..n {
        if adj[i].is_empty() {
            let mut j = draw(rng);
            while j == i {
                j = rng.random_range(0..n);
            }
            adj[i].push(j as CustomerId);
            adj[j].push(i as CustomerId);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    Ok(adj)
}

/// Churn day (days since epoch) per customer.
fn plant_churn(cfg: &SynthConfig, adj: &[Vec<CustomerId>], rng: &mut ChaCha8Rng) -> Vec<Option<i64>> {
    let n = cfg.n_customers;
    let mut churn_day: Vec<Option<i64>> = vec![None; n];
    let mut previous: Vec<usize> = Vec::new();
    for month in 0..CHURN_MONTHS {
        let alive: Vec<usize> = (0..n).filter(|&i| churn_day[i].is_none()).collect();
        let quota = round(cfg.churn_rate * alive.len() as f64) as usize;
        let mut chosen: BTreeSet<usize> = BTreeSet::new();
        let mut current = Vec::with_capacity(quota);
        while current.len() < quota.min(alive.len()) {
            let mut pick = None;
            if !previous.is_empty() && rng.random::<f64>() < cfg.homophily {
                for _ in 0..8 {
                    let src = previous[rng.random_range(0..previous.len())];
                    let candidates: Vec<usize> = adj[src]
                        .iter()
                        .map(|&j| j as usize)
                        .filter(|&j| churn_day[j].is_none() && !chosen.contains(&j))
                        .collect();
                    if !candidates.is_empty() {
                        pick = Some(candidates[rng.random_range(0..candidates.len())]);
                        break;
                    }
                }
            }
            let pick = match pick {
                Some(p) => p,
                None => loop {
                    let c = alive[rng.random_range(0..alive.len())];
                    if !chosen.contains(&c) {
                        break c;
                    }
                },
            };
            chosen.insert(pick);
            current.push(pick);
        }
        let first_day = month as i64 * MONTH_DAYS;
        for &c in &current {
            churn_day[c] = Some((first_day + rng.random_range(0..MONTH_DAYS)).max(1));
        }
        previous = current;
    }
    churn_day
}

struct CallSampler {
    duration: LogNormal<f64>,
    short_fraction: f64,
    mix: [f64; 3],
}

impl CallSampler {
    fn time_in_day(&self, rng: &mut ChaCha8Rng) -> i64 {
        let total: f64 = self.mix.iter().sum();
        let u = rng.random::<f64>() * total;
        let bucket = if u < self.mix[0] {
            0
        } else if u < self.mix[0] + self.mix[1] {
            1
        } else {
            2
        };
        bucket * 8 * 3600 + rng.random_range(0..8 * 3600)
    }

    fn duration(&self, rng: &mut ChaCha8Rng, allow_short: bool) -> u32 {
        if allow_short && rng.random::<f64>() < self.short_fraction {
            return rng.random_range(1..DEFAULT_MIN_DURATION);
        }
        let d = self.duration.sample(rng);
        (d.min(4.0 * 3600.0) as u32).max(DEFAULT_MIN_DURATION)
    }

    fn record(
        &self,
        rng: &mut ChaCha8Rng,
        epoch: i64,
        caller: usize,
        callee: usize,
        day: i64,
        allow_short: bool,
    ) -> CdrRecord {
        CdrRecord::new(
            caller as CustomerId,
            callee as CustomerId,
            epoch + day * SECONDS_PER_DAY + self.time_in_day(rng),
            self.duration(rng, allow_short),
        )
    }
}

/// Generates a store and its ground truth; identical configs give identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_customers;
    let horizon = MONTHS as i64 * MONTH_DAYS;
    let adj = social_graph(cfg, &mut rng)?;
    let churn_day = plant_churn(cfg, &adj, &mut rng);
    let end_of = |i: usize| churn_day[i].unwrap_or(horizon);

    let sampler = CallSampler {
        duration: LogNormal::new(log(cfg.duration_median), cfg.duration_sigma)
            .map_err(|e| crate::Error::Config(alloc::format!("duration distribution: {e}")))?,
        short_fraction: cfg.short_call_fraction,
        mix: cfg.time_mix,
    };
    // Per-tie monthly rate with the configured mean.
    let sigma = cfg.call_rate_sigma;
    let rate = LogNormal::new(log(cfg.calls_per_tie) - sigma * sigma / 2.0, sigma)
        .map_err(|e| crate::Error::Config(alloc::format!("call rate distribution: {e}")))?;

    let mut records = Vec::new();
    for a in 0..n {
        for &b in adj[a].iter().filter(|&&b| (b as usize) > a) {
            let b = b as usize;
            let daily = rate.sample(&mut rng) / MONTH_DAYS as f64;
            let share_a = 0.2 + 0.6 * rng.random::<f64>();
            let stop = end_of(a).min(end_of(b)) as f64;
            let gaps = Exp::new(daily).map_err(|e| crate::Error::Config(alloc::format!("call gaps: {e}")))?;
            let mut t = gaps.sample(&mut rng);
            while t < stop {
                let day = t as i64;
                let (caller, callee) = if rng.random::<f64>() < share_a { (a, b) } else { (b, a) };
                records.push(sampler.record(&mut rng, cfg.epoch, caller, callee, day, true));
                t += gaps.sample(&mut rng);
            }
        }
    }

    // Keep-alive: one call per week while alive, to a neighbour still alive
    // that day (any alive customer as fallback). Churners also call on the
    // day before churning so the inactive run starts exactly on churndate.
    let partner = |rng: &mut ChaCha8Rng, i: usize, day: i64| -> usize {
        let alive: Vec<usize> = adj[i].iter().map(|&j| j as usize).filter(|&j| end_of(j) > day).collect();
        if !alive.is_empty() {
            return alive[rng.random_range(0..alive.len())];
        }
        loop {
            let j = rng.random_range(0..n);
            if j != i && end_of(j) > day {
                return j;
            }
        }
    };
    for i in 0..n {
        let end = end_of(i);
        let mut week_start = 0;
        while week_start < end {
            let day = week_start + rng.random_range(0..7);
            if day < end {
                let j = partner(&mut rng, i, day);
                records.push(sampler.record(&mut rng, cfg.epoch, i, j, day, false));
            }
            week_start += 7;
        }
        if let Some(c) = churn_day[i] {
            let j = partner(&mut rng, i, c - 1);
            records.push(sampler.record(&mut rng, cfg.epoch, i, j, c - 1, false));
        }
    }

    let store = CdrStore::new(customer_names(n), records, cfg.epoch)?;
    let timeline = Timeline::new(cfg.epoch);
    let labels = ChurnLabels::from_churndates(
        timeline.observation(),
        churn_day.iter().map(|d| d.map(|d| cfg.epoch + d * SECONDS_PER_DAY)).collect(),
    );
    let mut ties = Vec::new();
    for (a, list) in adj.iter().enumerate() {
        ties.extend(list.iter().filter(|&&b| b as usize > a).map(|&b| (a as CustomerId, b)));
    }
    Ok(SynthData { store, labels, ties })
}

/// Measured properties of a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    /// Churners in month m over customers alive at its start, M1..M5.
    pub monthly_churn_rate: [f64; CHURN_MONTHS],
    pub mean_churn_rate: f64,
    pub sparsity: f64,
    pub mean_degree: f64,
    pub max_degree: usize,
    pub isolated: usize,
    /// Churn rate of customers with a neighbour that churned the month
    /// before, over the churn rate of everyone alive (months 2..5).
    pub neighbour_churn_lift: f64,
    /// Human-readable deviations of more than 20% from the targets.
    pub flags: Vec<String>,
}

/// Relative tolerance before a diagnostic is flagged.
pub const DIAGNOSTIC_TOLERANCE: f64 = 0.2;

/// Measures churn rates and the call graph of `store` (short calls removed)
/// against `cfg`.
pub fn verify(store: &CdrStore, labels: &ChurnLabels, cfg: &SynthConfig) -> Diagnostics {
    let n = store.num_customers();
    let timeline = store.timeline();
    let mut adj: Vec<BTreeSet<CustomerId>> = vec![BTreeSet::new(); n];
    for r in store.records().iter().filter(|r| r.duration >= DEFAULT_MIN_DURATION) {
        adj[r.caller as usize].insert(r.callee);
        adj[r.callee as usize].insert(r.caller);
    }
    let degrees: Vec<usize> = adj.iter().map(|s| s.len()).collect();
    let nnz: usize = degrees.iter().sum();
    let sparsity = if n > 1 { nnz as f64 / (n * (n - 1)) as f64 } else { 0.0 };

    let month_of = |i: usize| labels.churndate(i as CustomerId).and_then(|t| timeline.month_of(t));
    let mut monthly = [0.0; CHURN_MONTHS];
    let (mut exposed_churn, mut exposed, mut all_churn, mut all) = (0.0, 0.0, 0.0, 0.0);
    for m in 1..=CHURN_MONTHS {
        let start = timeline.month(m).start;
        let alive: Vec<usize> =
            (0..n).filter(|&i| labels.churndate(i as CustomerId).is_none_or(|t| t >= start)).collect();
        let churned = alive.iter().filter(|&&i| month_of(i) == Some(m)).count();
        monthly[m - 1] = if alive.is_empty() { 0.0 } else { churned as f64 / alive.len() as f64 };
        if m >= 2 {
            for &i in &alive {
                let c = if month_of(i) == Some(m) { 1.0 } else { 0.0 };
                all += 1.0;
                all_churn += c;
                if adj[i].iter().any(|&j| month_of(j as usize) == Some(m - 1)) {
                    exposed += 1.0;
                    exposed_churn += c;
                }
            }
        }
    }
    let mean_churn_rate = monthly.iter().sum::<f64>() / CHURN_MONTHS as f64;
    let neighbour_churn_lift =
        if exposed > 0.0 && all_churn > 0.0 { (exposed_churn / exposed) / (all_churn / all) } else { 0.0 };

    let mut flags = Vec::new();
    let off = |got: f64, want: f64| want > 0.0 && ((got - want) / want).abs() > DIAGNOSTIC_TOLERANCE;
    if off(mean_churn_rate, cfg.churn_rate) || (cfg.churn_rate == 0.0 && mean_churn_rate > 0.0) {
        flags.push(alloc::format!("churn rate {mean_churn_rate} vs target {}", cfg.churn_rate));
    }
    if off(sparsity, cfg.sparsity) {
        flags.push(alloc::format!("sparsity {sparsity} vs target {}", cfg.sparsity));
    }
    Diagnostics {
        monthly_churn_rate: monthly,
        mean_churn_rate,
        sparsity,
        mean_degree: if n > 0 { nnz as f64 / n as f64 } else { 0.0 },
        max_degree: degrees.iter().copied().max().unwrap_or(0),
        isolated: degrees.iter().filter(|&&d| d == 0).count(),
        neighbour_churn_lift,
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdr::label_churn;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { n_customers: 2000, sparsity: 4e-3, seed, ..SynthConfig::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.labels, b.labels);
        let c = generate(&small(4)).unwrap();
        assert_ne!(a.store.records(), c.store.records());
    }

    #[test]
    fn ground_truth_matches_activity_labelling() {
        let d = generate(&small(5)).unwrap();
        let filtered = d.store.filter_short_calls(DEFAULT_MIN_DURATION);
        let measured = label_churn(&filtered, filtered.timeline().observation()).unwrap();
        assert_eq!(measured.churndates(), d.labels.churndates());
        // Nobody is active on or after their churndate.
        for r in d.store.records() {
            for who in [r.caller, r.callee] {
                if let Some(c) = d.labels.churndate(who) {
                    assert!(r.start < c);
                }
            }
        }
        assert!(d.store.records().iter().any(|r| r.duration < DEFAULT_MIN_DURATION));
    }

    #[test]
    fn zero_rate_gives_no_churners() {
        let d = generate(&SynthConfig { churn_rate: 0.0, ..small(6) }).unwrap();
        assert_eq!(d.labels.num_churners(), 0);
    }

    #[test]
    fn diagnostics_hit_targets() {
        let cfg = small(7);
        let d = generate(&cfg).unwrap();
        let diag = verify(&d.store, &d.labels, &cfg);
        for r in diag.monthly_churn_rate {
            assert!((0.04..=0.06).contains(&r), "{r}");
        }
        assert!(diag.flags.is_empty(), "{:?}", diag.flags);
        assert_eq!(diag.isolated, 0);
        assert!(diag.neighbour_churn_lift > 2.0, "{}", diag.neighbour_churn_lift);

        let flat = SynthConfig { homophily: 0.0, ..small(7) };
        let d = generate(&flat).unwrap();
        let diag = verify(&d.store, &d.labels, &flat);
        assert!((diag.neighbour_churn_lift - 1.0).abs() < 0.5, "{}", diag.neighbour_churn_lift);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate(&SynthConfig { n_customers: 5, ..small(1) }).is_err());
        assert!(generate(&SynthConfig { sparsity: 1e-5, ..small(1) }).is_err());
        assert!(generate(&SynthConfig { churn_rate: 1.5, ..small(1) }).is_err());
    }
}
