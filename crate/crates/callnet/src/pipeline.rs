//! Learner and NRC benchmarks over datasets.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use callnet_core::cdr::{label_churn, CdrStore, ChurnLabels, CustomerId, TimeRange};
use callnet_core::classify::{oversample, Classifier, LogisticModel, LogisticOptions, LogisticRegression, Predictor};
use callnet_core::features::{assemble, network_features, FeatureMode, FeatureTable, ScoreColumn};
use callnet_core::graph::{
    build_graph, segment_records, BuildOptions, CallGraph, Decay, Direction, SegmentSpec, WeightScheme,
};
use callnet_core::metrics::{auc, emp, lift, mp, EmpParams};
use callnet_core::relational::{class_prior, run_ci, LearnerId, Pretraining, RelationalClassifier, ScoreState};
use callnet_core::synth::generate;
use callnet_core::Error as CoreError;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::plan::{decay_label, derive_seed, reciprocity_label, CiSettings, DatasetSource, ExperimentPlan, Metric};
use crate::report::{params_hash, sort_rows, ReportRow};

/// Month whose churn the benchmarks predict.
pub const PREDICT_MONTH: usize = 5;

/// A filtered CDR store with churn labels over the whole observation period.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub store: CdrStore,
    pub labels: ChurnLabels,
    /// Hash of the source data and filtering.
    pub fingerprint: String,
}

impl Dataset {
    /// Filters short calls and labels churn from the filtered calls.
    pub fn new(name: impl Into<String>, raw: &CdrStore, min_duration: u32, source_tag: &str) -> Result<Dataset> {
        let store = raw.filter_short_calls(min_duration);
        let labels = label_churn(&store, store.timeline().observation())?;
        let fingerprint = params_hash(&format!("{source_tag}|min_duration={min_duration}"));
        Ok(Dataset { name: name.into(), store, labels, fingerprint })
    }

    pub fn num_customers(&self) -> usize {
        self.store.num_customers()
    }

    /// Customers still active when month `m` starts.
    pub fn alive_at(&self, m: usize) -> Vec<CustomerId> {
        let start = self.store.timeline().month(m).start;
        let gone = self.labels.churned_before(start);
        (0..gone.len()).filter(|&i| !gone[i]).map(|i| i as CustomerId).collect()
    }

    /// Churn indicator of month `m` for `rows`.
    pub fn churn_in(&self, m: usize, rows: &[CustomerId]) -> Vec<bool> {
        let all = self.labels.churned_in(self.store.timeline().month(m));
        rows.iter().map(|&c| all[c as usize]).collect()
    }

    /// Known churners (1.0) before the start of month `m`.
    pub fn state_before(&self, m: usize) -> Vec<f64> {
        let start = self.store.timeline().month(m).start;
        self.labels.churned_before(start).into_iter().map(|b| f64::from(u8::from(b))).collect()
    }
}

/// Hash of every record of a store.
pub fn store_digest(store: &CdrStore) -> String {
    let mut h = Sha256::new();
    h.update(store.timeline().epoch().to_le_bytes());
    for c in store.customers() {
        h.update(c.as_bytes());
        h.update([0u8]);
    }
    for r in store.records() {
        h.update(r.caller.to_le_bytes());
        h.update(r.callee.to_le_bytes());
        h.update(r.start.to_le_bytes());
        h.update(r.duration.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

pub fn load_dataset(src: &DatasetSource, plan: &ExperimentPlan) -> Result<Dataset> {
    match src {
        DatasetSource::Synth { name, config } => {
            let data = generate(config).with_context(|| format!("generating {name}"))?;
            Dataset::new(name.clone(), &data.store, plan.min_duration, &format!("synth:{config:?}"))
        }
        DatasetSource::File { name, path, epoch } => {
            let parsed = crate::io::read_cdr(path, &plan.schema, *epoch)?;
            if parsed.malformed > 0 {
                log::warn!("{}: skipped {} malformed rows", path.display(), parsed.malformed);
            }
            let tag = format!("file:{}", store_digest(&parsed.store));
            Dataset::new(name.clone(), &parsed.store, plan.min_duration, &tag)
        }
    }
}

/// Loads every dataset of the plan, in parallel.
pub fn load_datasets(plan: &ExperimentPlan) -> Result<Vec<Dataset>> {
    plan.datasets.par_iter().map(|d| load_dataset(d, plan)).collect()
}

/// Construction of one call graph: build options plus segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub options: BuildOptions,
    pub segment: SegmentSpec,
}

impl NetworkSpec {
    pub fn new(direction: Direction, scheme: WeightScheme, decay: Decay) -> Self {
        NetworkSpec { options: BuildOptions::new(direction, scheme).with_decay(decay), segment: SegmentSpec::whole() }
    }

    /// `direction/scheme/decay/segment/reciprocity`.
    pub fn label(&self) -> String {
        let o = &self.options;
        format!(
            "{}/{}/{}/{}/{}",
            o.direction,
            o.scheme,
            decay_label(o.decay),
            self.segment.label(),
            reciprocity_label(o.reciprocal_only)
        )
    }

    pub fn build(&self, store: &CdrStore, range: TimeRange) -> Result<CallGraph> {
        let records = segment_records(store.view(range), &self.segment);
        Ok(build_graph(store.num_customers(), records, range, &self.options)?)
    }
}

/// Fails when a feature window reaches into the labelled period.
pub fn check_leakage(feature_window: TimeRange, label_window: TimeRange) -> Result<()> {
    if feature_window.end > label_window.start {
        return Err(CoreError::Leakage(format!(
            "feature window ends at {} after the label window starts at {}",
            feature_window.end, label_window.start
        ))
        .into());
    }
    Ok(())
}

/// Graphs and states for relational scoring of churn in `target`.
///
/// The network spans the `months` months before `target`, with churners
/// known up to its start. Pre-training uses the same span shifted one month
/// back, against the churners of the month before `target`.
pub struct RlContext {
    pub graph: CallGraph,
    pub state: Vec<f64>,
    pub prior: f64,
    pub pretrain: Option<(CallGraph, Vec<f64>, Vec<bool>)>,
}

impl RlContext {
    pub fn build(ds: &Dataset, net: &NetworkSpec, months: usize, target: usize) -> Result<RlContext> {
        if months == 0 || months >= target {
            bail!("a {months}-month window does not fit before M{target}");
        }
        let tl = ds.store.timeline();
        let range = tl.months(target - months, target - 1);
        check_leakage(range, tl.month(target))?;
        let graph = net.build(&ds.store, range)?;
        let state = ds.state_before(target);
        let prior = class_prior(&graph, &state);
        let pretrain = if target - 1 > months {
            let pre = tl.months(target - 1 - months, target - 2);
            check_leakage(pre, tl.month(target - 1))?;
            let g = net.build(&ds.store, pre)?;
            let all: Vec<CustomerId> = (0..ds.num_customers() as CustomerId).collect();
            Some((g, ds.state_before(target - 1), ds.churn_in(target - 1, &all)))
        } else {
            None
        };
        Ok(RlContext { graph, state, prior, pretrain })
    }

    /// Scores every customer with `learner`.
    pub fn score(
        &self,
        learner: LearnerId,
        ci: &CiSettings,
        logistic: &LogisticOptions,
        seed: u64,
    ) -> std::result::Result<ScoreState, CoreError> {
        let pre = self.pretrain.as_ref().map(|(graph, state, target)| Pretraining { graph, state, target });
        let rc = RelationalClassifier::prepare(learner.rc, pre, ci.spa_diffusion, logistic)?;
        run_ci(&rc, &self.graph, &self.state, self.prior, &ci.config(learner.ci, seed))
    }
}

/// Whether a scoring failure only means this learner cannot be run here.
pub fn is_skippable(e: &CoreError) -> bool {
    matches!(e, CoreError::Pretraining(_) | CoreError::Fitting(_))
}

pub fn compute_metric(metric: Metric, scores: &[f64], labels: &[bool], params: &EmpParams) -> Result<f64> {
    Ok(match metric {
        Metric::Lift(f) => lift(scores, labels, f)?,
        Metric::Auc => auc(scores, labels)?,
        Metric::Emp => emp(scores, labels, params)?.value,
        Metric::Mp => mp(scores, labels, params, params.a / (params.a + params.b))?.value,
    })
}

fn select(values: &[f64], rows: &[CustomerId]) -> Vec<f64> {
    rows.iter().map(|&c| values[c as usize]).collect()
}

/// Report rows plus notices about skipped work.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchOutput {
    pub rows: Vec<ReportRow>,
    pub notices: Vec<String>,
}

impl BenchOutput {
    pub fn extend(&mut self, other: BenchOutput) {
        self.rows.extend(other.rows);
        self.notices.extend(other.notices);
    }
}

#[allow(clippy::too_many_arguments)]
fn metric_rows(
    plan: &ExperimentPlan,
    ds: &Dataset,
    architecture: &str,
    learner: &str,
    timeframe: &str,
    extra: &str,
    scores: &[f64],
    labels: &[bool],
    out: &mut BenchOutput,
) {
    for &m in &plan.metrics {
        let canonical =
            format!("{}|{architecture}|{learner}|{timeframe}|{m}|{extra}|{}", ds.fingerprint, plan.fingerprint());
        match compute_metric(m, scores, labels, &plan.emp) {
            Ok(value) => out.rows.push(ReportRow {
                dataset: ds.name.clone(),
                architecture: architecture.to_string(),
                learner: learner.to_string(),
                timeframe: timeframe.to_string(),
                metric: m.to_string(),
                value,
                params_hash: params_hash(&canonical),
            }),
            Err(e) => {
                out.notices.push(format!("{}/{timeframe}/{architecture}/{learner}: {m} not computed: {e}", ds.name))
            }
        }
    }
}

/// Scores M5 with every learner on every timeframe and weight scheme.
pub fn run_learner_benchmark(plan: &ExperimentPlan, datasets: &[Dataset]) -> Result<BenchOutput> {
    let mut out = BenchOutput::default();
    if plan.learners.is_empty() {
        log::warn!("empty learner set, nothing to benchmark");
        out.notices.push("empty learner set".into());
        return Ok(out);
    }
    for ds in datasets {
        let rows = ds.alive_at(PREDICT_MONTH);
        let labels = ds.churn_in(PREDICT_MONTH, &rows);
        for tf in &plan.timeframes {
            for &scheme in &plan.schemes {
                let net = NetworkSpec::new(plan.direction, scheme, plan.decay);
                let arch = net.label();
                let ctx = RlContext::build(ds, &net, tf.months, PREDICT_MONTH)?;
                let parts: Vec<BenchOutput> = plan
                    .learners
                    .par_iter()
                    .map(|&learner| {
                        let mut part = BenchOutput::default();
                        let id = learner.to_string();
                        let tag = format!("{}/{}/{arch}/{id}", ds.name, tf.name);
                        let seed = derive_seed(plan.seed, &tag);
                        match ctx.score(learner, &plan.ci, &plan.logistic, seed) {
                            Ok(state) => {
                                let extra = format!("months={};seed={seed}", tf.months);
                                let s = select(&state.scores, &rows);
                                metric_rows(plan, ds, &arch, &id, &tf.name, &extra, &s, &labels, &mut part);
                            }
                            Err(e) if is_skippable(&e) => part.notices.push(format!("{tag}: skipped: {e}")),
                            Err(e) => return Err(anyhow::Error::from(e).context(tag)),
                        }
                        Ok(part)
                    })
                    .collect::<Result<_>>()?;
                parts.into_iter().for_each(|p| out.extend(p));
            }
        }
    }
    for n in &out.notices {
        log::warn!("{n}");
    }
    sort_rows(&mut out.rows);
    Ok(out)
}

/// Network used for the RL score columns of the NRC models.
pub fn nrc_score_network(plan: &ExperimentPlan) -> NetworkSpec {
    NetworkSpec::new(plan.direction, WeightScheme::Count, plan.decay)
}

/// Network the NRC network features are computed on.
pub fn nrc_feature_network() -> NetworkSpec {
    NetworkSpec::new(Direction::Undirected, WeightScheme::Count, Decay::None)
}

/// Features, labels and RL scores for predicting churn in month `label_month`.
pub struct OotSplit {
    pub rows: Vec<CustomerId>,
    pub labels: Vec<bool>,
    pub network: callnet_core::features::FeatureBlock,
    pub scores: Vec<ScoreColumn>,
}

fn short_months(plan: &ExperimentPlan) -> usize {
    plan.timeframes.iter().find(|t| t.name == "short").map_or(1, |t| t.months)
}

/// Builds the OoT split whose features end where `label_month` begins.
pub fn oot_split(
    plan: &ExperimentPlan,
    ds: &Dataset,
    label_month: usize,
    with_scores: bool,
) -> Result<(OotSplit, Vec<String>)> {
    let tl = ds.store.timeline();
    let fm = plan.nrc_feature_months;
    if fm >= label_month {
        bail!("{fm} feature months do not fit before M{label_month}");
    }
    let window = tl.months(label_month - fm, label_month - 1);
    check_leakage(window, tl.month(label_month))?;
    let graph = nrc_feature_network().build(&ds.store, window)?;
    let churn = ds.labels.churned_before(window.end);
    let block = network_features(&graph, &churn, ds.store.view(window), window);
    let rows = ds.alive_at(label_month);
    let labels = ds.churn_in(label_month, &rows);
    let network = block.select(&rows)?;

    let mut notices = Vec::new();
    let mut scores = Vec::new();
    if with_scores && !plan.learners.is_empty() {
        let net = nrc_score_network(plan);
        let ctx = RlContext::build(ds, &net, short_months(plan), label_month)?;
        let results: Vec<(LearnerId, std::result::Result<ScoreState, CoreError>)> = plan
            .learners
            .par_iter()
            .map(|&l| {
                let seed = derive_seed(plan.seed, &format!("{}/oot-M{label_month}/{}/{l}", ds.name, net.label()));
                (l, ctx.score(l, &plan.ci, &plan.logistic, seed))
            })
            .collect();
        for (l, r) in results {
            match r {
                Ok(s) => scores.push(ScoreColumn {
                    name: l.to_string(),
                    rows: rows.clone(),
                    values: select(&s.scores, &rows),
                }),
                Err(e) if is_skippable(&e) => {
                    notices.push(format!("{}/M{label_month}/{l}: score column dropped: {e}", ds.name))
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok((OotSplit { rows, labels, network, scores }, notices))
}

/// One NRC mode trained out of time.
pub struct OotOutcome {
    pub mode: FeatureMode,
    pub model: LogisticModel,
    pub train_scores: Vec<f64>,
    pub test_rows: Vec<CustomerId>,
    pub test_scores: Vec<f64>,
    pub test_labels: Vec<bool>,
}

/// Trains on features of the months before M4 against M4 churn and scores
/// the same features shifted one month against M5 churn.
pub fn run_oot(plan: &ExperimentPlan, ds: &Dataset, modes: &[FeatureMode]) -> Result<(Vec<OotOutcome>, Vec<String>)> {
    let need_scores = modes.iter().any(|m| *m != FeatureMode::NetworkOnly);
    let (train, mut notices) = oot_split(plan, ds, PREDICT_MONTH - 1, need_scores)?;
    let (test, n2) = oot_split(plan, ds, PREDICT_MONTH, need_scores)?;
    notices.extend(n2);
    // Only score columns available on both sides enter the models.
    let keep = |cols: &[ScoreColumn], other: &[ScoreColumn]| -> Vec<ScoreColumn> {
        cols.iter().filter(|c| other.iter().any(|o| o.name == c.name)).cloned().collect()
    };
    let train_scores = keep(&train.scores, &test.scores);
    let test_scores = keep(&test.scores, &train.scores);

    let clf = LogisticRegression { options: plan.logistic };
    let mut out = Vec::new();
    for &mode in modes {
        if mode != FeatureMode::NetworkOnly && train_scores.is_empty() {
            notices.push(format!("{}: NRC mode {} skipped, no RL scores", ds.name, mode.as_str()));
            continue;
        }
        let tr = assemble(&train.network, &train_scores, mode)?;
        let te = assemble(&test.network, &test_scores, mode)?;
        let seed = derive_seed(plan.seed, &format!("{}/oversample/{}", ds.name, mode.as_str()));
        let (tr_os, y_os) = oversample(&tr, &train.labels, plan.oversample, seed)?;
        let model = clf.fit(&tr_os, &y_os)?;
        out.push(OotOutcome {
            mode,
            train_scores: model.predict(&tr)?,
            test_rows: test.rows.clone(),
            test_scores: model.predict(&te)?,
            test_labels: test.labels.clone(),
            model,
        });
    }
    Ok((out, notices))
}

pub fn nrc_learner_id(mode: FeatureMode) -> String {
    format!("log-{}", mode.as_str())
}

/// NRC models per mode on every dataset, evaluated on M5.
pub fn run_nrc_benchmark(plan: &ExperimentPlan, datasets: &[Dataset]) -> Result<BenchOutput> {
    let mut out = BenchOutput::default();
    let arch = nrc_feature_network().label();
    for ds in datasets {
        let (outcomes, notices) = run_oot(plan, ds, &plan.nrc_modes)?;
        out.notices.extend(notices);
        for o in outcomes {
            let mut extra = format!("feature_months={};learners=", plan.nrc_feature_months);
            for l in &plan.learners {
                let _ = write!(extra, "{l},");
            }
            metric_rows(
                plan,
                ds,
                &arch,
                &nrc_learner_id(o.mode),
                "oot",
                &extra,
                &o.test_scores,
                &o.test_labels,
                &mut out,
            );
        }
    }
    for n in &out.notices {
        log::warn!("{n}");
    }
    sort_rows(&mut out.rows);
    Ok(out)
}

/// Builds the feature table of one OoT side, for export.
pub fn feature_table(
    plan: &ExperimentPlan,
    ds: &Dataset,
    label_month: usize,
    mode: FeatureMode,
) -> Result<(FeatureTable, Vec<bool>)> {
    let (split, _) = oot_split(plan, ds, label_month, mode != FeatureMode::NetworkOnly)?;
    Ok((assemble(&split.network, &split.scores, mode)?, split.labels))
}
