//! Experiment plans built from a [`Config`].

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use callnet_core::cdr::DEFAULT_MIN_DURATION;
use callnet_core::classify::LogisticOptions;
use callnet_core::features::FeatureMode;
use callnet_core::graph::{Decay, Direction, SegmentSpec, WeightScheme, DEFAULT_DECAY_PER_WEEK};
use callnet_core::metrics::EmpParams;
use callnet_core::relational::{
    CiConfig, CiMethod, LearnerId, RcKind, DEFAULT_RLSA_ALPHA, DEFAULT_RLSA_K, DEFAULT_SPA_DIFFUSION,
    DEFAULT_THRESHOLD, GIBBS_BURN_IN,
};
use callnet_core::synth::SynthConfig;

use crate::config::Config;
use crate::io::CdrSchema;
use crate::report::params_hash;

/// An evaluation measure reported per score set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Lift(f64),
    Auc,
    Emp,
    /// Maximum profit at the mean acceptance rate of the Beta prior.
    Mp,
}

impl Metric {
    pub fn defaults() -> Vec<Metric> {
        vec![Metric::Lift(0.005), Metric::Lift(0.05), Metric::Auc, Metric::Emp]
    }

    pub fn higher_is_better(&self) -> bool {
        true
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Lift(x) => write!(f, "lift@{x}"),
            Metric::Auc => f.write_str("auc"),
            Metric::Emp => f.write_str("emp"),
            Metric::Mp => f.write_str("mp"),
        }
    }
}

impl FromStr for Metric {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "auc" => Metric::Auc,
            "emp" => Metric::Emp,
            "mp" => Metric::Mp,
            _ => match s.strip_prefix("lift@") {
                Some(f) => {
                    let f: f64 = f.parse().map_err(|_| anyhow!("bad lift fraction in '{s}'"))?;
                    if !(f > 0.0 && f <= 1.0) {
                        bail!("lift fraction must lie in (0, 1], got {f}");
                    }
                    Metric::Lift(f)
                }
                None => bail!("unknown metric '{s}'"),
            },
        })
    }
}

/// Length of the network window preceding the predicted month.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Timeframe {
    pub name: String,
    pub months: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synth { name: String, config: SynthConfig },
    File { name: String, path: PathBuf, epoch: Option<i64> },
}

impl DatasetSource {
    pub fn name(&self) -> &str {
        match self {
            DatasetSource::Synth { name, .. } | DatasetSource::File { name, .. } => name,
        }
    }
}

/// Collective inference settings shared by every learner.
#[derive(Clone, Debug, PartialEq)]
pub struct CiSettings {
    pub threshold: f64,
    pub burn_in: usize,
    /// Iteration caps in [`CiMethod::ALL`] order.
    pub caps: [usize; 6],
    pub rlsa_k: f64,
    pub rlsa_alpha: f64,
    pub spa_diffusion: f64,
}

impl Default for CiSettings {
    fn default() -> Self {
        CiSettings {
            threshold: DEFAULT_THRESHOLD,
            burn_in: GIBBS_BURN_IN,
            caps: CiMethod::ALL.map(|m| m.default_cap()),
            rlsa_k: DEFAULT_RLSA_K,
            rlsa_alpha: DEFAULT_RLSA_ALPHA,
            spa_diffusion: DEFAULT_SPA_DIFFUSION,
        }
    }
}

impl CiSettings {
    pub fn config(&self, method: CiMethod, seed: u64) -> CiConfig {
        let k = CiMethod::ALL.iter().position(|m| *m == method).unwrap();
        CiConfig {
            method,
            burn_in: self.burn_in,
            max_iter: self.caps[k],
            threshold: self.threshold,
            rlsa_k: self.rlsa_k,
            rlsa_alpha: self.rlsa_alpha,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPlan {
    pub directions: Vec<Direction>,
    pub schemes: Vec<WeightScheme>,
    pub decays: Vec<Decay>,
    pub segments: Vec<SegmentSpec>,
    /// `false` keeps every call, `true` keeps reciprocated pairs only.
    pub reciprocity: Vec<bool>,
    pub learner: LearnerId,
    pub metrics: Vec<Metric>,
    /// Dataset to run on; the first one when unset.
    pub dataset: Option<String>,
    /// Sleep per cell, for exercising interruption.
    pub cell_delay_ms: u64,
}

impl GridPlan {
    pub fn cardinality(&self) -> usize {
        self.directions.len() * self.schemes.len() * self.decays.len() * self.segments.len() * self.reciprocity.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub workers: usize,
    pub datasets: Vec<DatasetSource>,
    pub schema: CdrSchema,
    pub min_duration: u32,
    pub learners: Vec<LearnerId>,
    pub metrics: Vec<Metric>,
    pub timeframes: Vec<Timeframe>,
    pub schemes: Vec<WeightScheme>,
    pub direction: Direction,
    pub decay: Decay,
    pub ci: CiSettings,
    pub logistic: LogisticOptions,
    pub emp: EmpParams,
    pub nrc_modes: Vec<FeatureMode>,
    pub nrc_feature_months: usize,
    pub oversample: f64,
    pub grid: GridPlan,
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "workers",
    "data.synth_count",
    "data.files",
    "data.epoch",
    "data.min_duration",
    "cdr.caller",
    "cdr.callee",
    "cdr.timestamp",
    "cdr.duration",
    "synth.customers",
    "synth.churn_rate",
    "synth.sparsity",
    "synth.homophily",
    "synth.degree_exponent",
    "synth.calls_per_tie",
    "synth.call_rate_sigma",
    "synth.duration_median",
    "synth.duration_sigma",
    "synth.short_call_fraction",
    "synth.time_mix",
    "synth.epoch",
    "bench.learners",
    "bench.metrics",
    "bench.schemes",
    "bench.timeframes",
    "bench.direction",
    "bench.decay",
    "timeline.short_months",
    "timeline.long_months",
    "ci.threshold",
    "ci.burn_in",
    "ci.no_max_iter",
    "ci.gibbs_max_iter",
    "ci.ic_max_iter",
    "ci.rl_max_iter",
    "ci.rlsa_max_iter",
    "ci.spa_max_iter",
    "ci.rlsa_k",
    "ci.rlsa_alpha",
    "ci.spa_diffusion",
    "logistic.max_iter",
    "logistic.tolerance",
    "logistic.l2",
    "emp.clv",
    "emp.delta",
    "emp.phi",
    "emp.a",
    "emp.b",
    "nrc.modes",
    "nrc.feature_months",
    "nrc.oversample",
    "grid.directions",
    "grid.schemes",
    "grid.decays",
    "grid.segments",
    "grid.reciprocity",
    "grid.learner",
    "grid.metrics",
    "grid.dataset",
    "grid.cell_delay_ms",
];

/// Rate of the exponential decay: `decay` uses the default rate, `decay:<g>` a
/// custom one.
pub fn parse_decay(s: &str) -> Result<Decay> {
    let s = s.trim();
    match s {
        "simple" | "none" => Ok(Decay::None),
        "decay" => Ok(Decay::Exponential(DEFAULT_DECAY_PER_WEEK)),
        _ => match s.strip_prefix("decay:") {
            Some(g) => {
                let g: f64 = g.parse().map_err(|_| anyhow!("bad decay rate in '{s}'"))?;
                if !(g >= 0.0 && g.is_finite()) {
                    bail!("decay rate must be non-negative, got {g}");
                }
                Ok(Decay::Exponential(g))
            }
            None => bail!("unknown decay '{s}'"),
        },
    }
}

pub fn decay_label(d: Decay) -> String {
    match d {
        Decay::Exponential(g) if g != DEFAULT_DECAY_PER_WEEK => format!("decay:{g}"),
        _ => d.label().to_string(),
    }
}

fn parse_reciprocity(s: &str) -> Result<bool> {
    match s.trim() {
        "all" => Ok(false),
        "reciprocal" => Ok(true),
        other => bail!("unknown reciprocity '{other}', expected all or reciprocal"),
    }
}

pub fn reciprocity_label(on: bool) -> &'static str {
    if on {
        "reciprocal"
    } else {
        "all"
    }
}

fn parse_learners(cfg: &Config, key: &str, default: Vec<LearnerId>) -> Result<Vec<LearnerId>> {
    match cfg.get(key).map(str::trim) {
        None | Some("all") => Ok(default),
        Some("") => Ok(Vec::new()),
        Some(v) => {
            let out: Vec<LearnerId> = v
                .split(',')
                .map(|s| s.trim().parse::<LearnerId>().map_err(anyhow::Error::from))
                .collect::<Result<_>>()?;
            let mut seen = std::collections::BTreeSet::new();
            if let Some(d) = out.iter().find(|l| !seen.insert(**l)) {
                bail!("duplicate learner '{d}' in '{key}'");
            }
            Ok(out)
        }
    }
}

impl ExperimentPlan {
    pub fn from_config(cfg: &Config) -> Result<ExperimentPlan> {
        cfg.check_keys(KNOWN_KEYS)?;
        let seed: u64 = cfg.value("seed", 0)?;
        let workers: usize = cfg.value("workers", default_workers())?;
        if workers == 0 {
            bail!("workers must be at least 1");
        }

        let synth = SynthConfig::default();
        let synth = SynthConfig {
            n_customers: cfg.value("synth.customers", synth.n_customers)?,
            churn_rate: cfg.value("synth.churn_rate", synth.churn_rate)?,
            sparsity: cfg.value("synth.sparsity", synth.sparsity)?,
            homophily: cfg.value("synth.homophily", synth.homophily)?,
            degree_exponent: cfg.value("synth.degree_exponent", synth.degree_exponent)?,
            calls_per_tie: cfg.value("synth.calls_per_tie", synth.calls_per_tie)?,
            call_rate_sigma: cfg.value("synth.call_rate_sigma", synth.call_rate_sigma)?,
            duration_median: cfg.value("synth.duration_median", synth.duration_median)?,
            duration_sigma: cfg.value("synth.duration_sigma", synth.duration_sigma)?,
            short_call_fraction: cfg.value("synth.short_call_fraction", synth.short_call_fraction)?,
            time_mix: {
                let v: Vec<f64> = cfg.list("synth.time_mix", synth.time_mix.to_vec())?;
                v.try_into().map_err(|_| anyhow!("synth.time_mix needs three weights"))?
            },
            epoch: cfg.value("synth.epoch", synth.epoch)?,
            seed: 0,
        };
        let files: Vec<String> = cfg.list("data.files", Vec::new())?;
        let synth_count: usize = cfg.value("data.synth_count", usize::from(files.is_empty()))?;
        let mut datasets = Vec::new();
        for i in 0..synth_count {
            let name = format!("synth-{i:02}");
            let config = SynthConfig { seed: derive_seed(seed, &name), ..synth.clone() };
            config.validate()?;
            datasets.push(DatasetSource::Synth { name, config });
        }
        let epoch: Option<i64> = cfg.get("data.epoch").map(str::parse).transpose()?;
        for f in files {
            let path = PathBuf::from(&f);
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(&f).to_string();
            datasets.push(DatasetSource::File { name, path, epoch });
        }
        let mut names: Vec<&str> = datasets.iter().map(DatasetSource::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bail!("dataset names must be unique");
        }

        let short: usize = cfg.value("timeline.short_months", 1)?;
        let long: usize = cfg.value("timeline.long_months", 3)?;
        let mut timeframes = Vec::new();
        for t in cfg.list::<String>("bench.timeframes", vec!["short".into(), "long".into()])? {
            let months = match t.as_str() {
                "short" => short,
                "long" => long,
                other => bail!("unknown timeframe '{other}'"),
            };
            if !(1..=3).contains(&months) {
                bail!("{t}-term window must span 1 to 3 months so that pre-training fits before M5");
            }
            timeframes.push(Timeframe { name: t, months });
        }

        let mut ci = CiSettings {
            threshold: cfg.value("ci.threshold", DEFAULT_THRESHOLD)?,
            burn_in: cfg.value("ci.burn_in", GIBBS_BURN_IN)?,
            rlsa_k: cfg.value("ci.rlsa_k", DEFAULT_RLSA_K)?,
            rlsa_alpha: cfg.value("ci.rlsa_alpha", DEFAULT_RLSA_ALPHA)?,
            spa_diffusion: cfg.value("ci.spa_diffusion", DEFAULT_SPA_DIFFUSION)?,
            ..CiSettings::default()
        };
        for (k, m) in CiMethod::ALL.iter().enumerate() {
            ci.caps[k] = cfg.value(&format!("ci.{}_max_iter", m.as_str()), ci.caps[k])?;
            ci.config(*m, 0).validate()?;
        }
        if !(ci.spa_diffusion > 0.0 && ci.spa_diffusion < 1.0) {
            bail!("ci.spa_diffusion must lie in (0, 1)");
        }

        let lo = LogisticOptions::default();
        let logistic = LogisticOptions {
            max_iter: cfg.value("logistic.max_iter", lo.max_iter)?,
            tolerance: cfg.value("logistic.tolerance", lo.tolerance)?,
            l2: cfg.value("logistic.l2", lo.l2)?,
            ..lo
        };
        let ed = EmpParams::default();
        let emp = EmpParams {
            clv: cfg.value("emp.clv", ed.clv)?,
            delta: cfg.value("emp.delta", ed.delta)?,
            phi: cfg.value("emp.phi", ed.phi)?,
            a: cfg.value("emp.a", ed.a)?,
            b: cfg.value("emp.b", ed.b)?,
        };
        emp.validate()?;

        let oversample: f64 = cfg.value("nrc.oversample", 0.5)?;
        if !(oversample > 0.0 && oversample < 1.0) {
            bail!("nrc.oversample must lie in (0, 1)");
        }
        let nrc_feature_months: usize = cfg.value("nrc.feature_months", 3)?;
        if !(1..=3).contains(&nrc_feature_months) {
            bail!("nrc.feature_months must lie in 1..=3");
        }

        let grid = GridPlan {
            directions: cfg.list("grid.directions", Direction::ALL.to_vec())?,
            schemes: cfg.list("grid.schemes", WeightScheme::ALL.to_vec())?,
            decays: cfg
                .list::<String>("grid.decays", vec!["simple".into(), "decay".into()])?
                .iter()
                .map(|s| parse_decay(s))
                .collect::<Result<_>>()?,
            segments: match cfg.get("grid.segments").map(str::trim) {
                None | Some("all") => SegmentSpec::grid(),
                Some(_) => cfg.list("grid.segments", Vec::new())?,
            },
            reciprocity: cfg
                .list::<String>("grid.reciprocity", vec!["all".into(), "reciprocal".into()])?
                .iter()
                .map(|s| parse_reciprocity(s))
                .collect::<Result<_>>()?,
            learner: cfg.value("grid.learner", LearnerId::new(CiMethod::None, RcKind::Nlb))?,
            metrics: cfg.list("grid.metrics", vec![Metric::Auc, Metric::Lift(0.005)])?,
            dataset: cfg.get("grid.dataset").map(str::to_string),
            cell_delay_ms: cfg.value("grid.cell_delay_ms", 0)?,
        };

        Ok(ExperimentPlan {
            seed,
            workers,
            datasets,
            schema: CdrSchema::from_config(cfg),
            min_duration: cfg.value("data.min_duration", DEFAULT_MIN_DURATION)?,
            learners: parse_learners(cfg, "bench.learners", LearnerId::all())?,
            metrics: cfg.list("bench.metrics", Metric::defaults())?,
            timeframes,
            schemes: cfg.list("bench.schemes", vec![WeightScheme::Count, WeightScheme::Length])?,
            direction: cfg.value("bench.direction", Direction::Undirected)?,
            decay: parse_decay(cfg.get("bench.decay").unwrap_or("decay"))?,
            ci,
            logistic,
            emp,
            nrc_modes: cfg.list("nrc.modes", FeatureMode::ALL.to_vec())?,
            nrc_feature_months,
            oversample,
            grid,
        })
    }

    /// Canonical text of every setting that can change a benchmark value.
    pub fn fingerprint(&self) -> String {
        format!(
            "min_duration={};ci={:?};logistic={:?};emp={};oversample={};nrc_months={}",
            self.min_duration, self.ci, self.logistic, self.emp, self.oversample, self.nrc_feature_months
        )
    }

    pub fn fingerprint_hash(&self) -> String {
        params_hash(&self.fingerprint())
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Independent 64-bit seed for a named sub-task.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
