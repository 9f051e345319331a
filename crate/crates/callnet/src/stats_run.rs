//! Significance analysis of benchmark reports.

use std::collections::{BTreeMap, BTreeSet};

use anyhow::Result;
use callnet_core::features::FeatureMode;
use callnet_core::relational::{CiMethod, LearnerId, RcKind};
use callnet_core::stats::{friedman, kruskal_wallis, nemenyi, RankMatrix, TestResult};
use serde::{Deserialize, Serialize};

use crate::pipeline::nrc_learner_id;
use crate::report::ReportRow;

/// Metric the directional checks are evaluated on.
pub const CHECK_METRIC: &str = "auc";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Test {
    pub statistic: f64,
    pub p_value: f64,
}

impl From<TestResult> for Test {
    fn from(t: TestResult) -> Self {
        Test { statistic: t.statistic, p_value: t.p_value }
    }
}

/// Friedman test plus Nemenyi post-hoc over one rank matrix; enough to
/// redraw a critical-difference diagram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankComparison {
    pub methods: Vec<String>,
    pub blocks: usize,
    pub average_ranks: Vec<f64>,
    pub friedman: Option<Test>,
    pub iman_davenport: Option<Test>,
    pub critical_difference: Option<f64>,
    /// Pairs whose rank gap exceeds the critical difference.
    pub significant_pairs: Vec<(String, String)>,
    /// Methods within the critical difference of the best.
    pub tied_with_best: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTest {
    pub groups: Vec<String>,
    pub sizes: Vec<usize>,
    pub test: Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerVsNrc {
    pub learner: String,
    pub nrc: String,
    pub test: Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub learners: Option<RankComparison>,
    pub relational_classifiers: Option<RankComparison>,
    pub collective_inference: Option<RankComparison>,
    pub nrc_modes: Option<RankComparison>,
    pub ci_vs_no_ci: Option<GroupTest>,
    pub rl_vs_nrc: Option<GroupTest>,
    pub learner_vs_nrc: Vec<LearnerVsNrc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftCheck {
    pub name: String,
    pub metric: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub alpha: f64,
    pub datasets: Vec<String>,
    /// Fewer than two datasets: tests are reported but carry little weight.
    pub underpowered: bool,
    pub metrics: Vec<MetricSummary>,
    pub soft_checks: Vec<SoftCheck>,
    pub notices: Vec<String>,
}

type Block = (String, String, String);

fn block_of(r: &ReportRow) -> Block {
    (r.dataset.clone(), r.timeframe.clone(), r.architecture.clone())
}

/// Friedman and Nemenyi over a `blocks x methods` table; tests that cannot
/// run on its shape are left empty.
fn compare(
    methods: Vec<String>,
    table: Vec<Vec<f64>>,
    alpha: f64,
    notices: &mut Vec<String>,
    what: &str,
) -> Option<RankComparison> {
    if methods.len() < 2 || table.is_empty() {
        return None;
    }
    let m = match RankMatrix::from_rows(&table, true) {
        Ok(m) => m,
        Err(e) => {
            notices.push(format!("{what}: {e}"));
            return None;
        }
    };
    let average_ranks = m.average_ranks().ok()?;
    let mut out = RankComparison {
        methods: methods.clone(),
        blocks: table.len(),
        average_ranks,
        friedman: None,
        iman_davenport: None,
        critical_difference: None,
        significant_pairs: Vec::new(),
        tied_with_best: Vec::new(),
    };
    match friedman(&m) {
        Ok(f) => {
            out.friedman = Some(f.chi_square.into());
            out.iman_davenport = f.iman_davenport.map(Into::into);
        }
        Err(e) => notices.push(format!("{what}: Friedman not run: {e}")),
    }
    match nemenyi(&m, alpha) {
        Ok(n) => {
            out.critical_difference = Some(n.critical_difference);
            for i in 0..methods.len() {
                for j in i + 1..methods.len() {
                    if n.is_significant(i, j) {
                        out.significant_pairs.push((methods[i].clone(), methods[j].clone()));
                    }
                }
            }
            out.tied_with_best = n.tied_with_best().into_iter().map(|i| methods[i].clone()).collect();
        }
        Err(e) => notices.push(format!("{what}: Nemenyi not run: {e}")),
    }
    Some(out)
}

fn group_test(groups: Vec<(String, Vec<f64>)>, notices: &mut Vec<String>, what: &str) -> Option<GroupTest> {
    if groups.len() < 2 || groups.iter().any(|g| g.1.is_empty()) {
        return None;
    }
    let values: Vec<Vec<f64>> = groups.iter().map(|g| g.1.clone()).collect();
    match kruskal_wallis(&values) {
        Ok(t) => Some(GroupTest {
            groups: groups.iter().map(|g| g.0.clone()).collect(),
            sizes: values.iter().map(Vec::len).collect(),
            test: t.into(),
        }),
        Err(e) => {
            notices.push(format!("{what}: {e}"));
            None
        }
    }
}

/// Ranks `methods` over the blocks in which all of them are present.
fn complete_table<K: Ord + Clone>(cells: &BTreeMap<K, BTreeMap<String, f64>>, methods: &[String]) -> Vec<Vec<f64>> {
    cells
        .values()
        .filter(|row| methods.iter().all(|m| row.contains_key(m)))
        .map(|row| methods.iter().map(|m| row[m]).collect())
        .collect()
}

fn metric_summary(metric: &str, rows: &[&ReportRow], alpha: f64, notices: &mut Vec<String>) -> MetricSummary {
    let mut rl: Vec<(&ReportRow, LearnerId)> = Vec::new();
    let mut nrc: Vec<&ReportRow> = Vec::new();
    for r in rows {
        if let Ok(l) = r.learner.parse::<LearnerId>() {
            rl.push((r, l));
        } else if r.learner.starts_with("log-") {
            nrc.push(r);
        }
    }

    // All learners, one block per (dataset, timeframe, architecture).
    let mut by_block: BTreeMap<Block, BTreeMap<String, f64>> = BTreeMap::new();
    let mut present: BTreeSet<LearnerId> = BTreeSet::new();
    for (r, l) in &rl {
        by_block.entry(block_of(r)).or_default().insert(l.to_string(), r.value);
        present.insert(*l);
    }
    let learners: Vec<String> =
        LearnerId::all().into_iter().filter(|l| present.contains(l)).map(|l| l.to_string()).collect();
    let complete: Vec<String> =
        learners.iter().filter(|l| by_block.values().all(|row| row.contains_key(*l))).cloned().collect();
    if complete.len() < learners.len() {
        notices.push(format!("{metric}: learners missing from some score sets left out of the rank test"));
    }
    let table = complete_table(&by_block, &complete);
    let learners_cmp = compare(complete, table, alpha, notices, &format!("{metric}/learners"));

    // RC comparison within each CI method, and CI comparison within each RC.
    let mut rc_rows: BTreeMap<(Block, CiMethod), BTreeMap<String, f64>> = BTreeMap::new();
    let mut ci_rows: BTreeMap<(Block, RcKind), BTreeMap<String, f64>> = BTreeMap::new();
    for (r, l) in &rl {
        rc_rows.entry((block_of(r), l.ci)).or_default().insert(l.rc.to_string(), r.value);
        ci_rows.entry((block_of(r), l.rc)).or_default().insert(l.ci.to_string(), r.value);
    }
    let rcs: Vec<String> =
        RcKind::ALL.iter().filter(|k| present.iter().any(|l| l.rc == **k)).map(|k| k.to_string()).collect();
    let cis: Vec<String> =
        CiMethod::ALL.iter().filter(|k| present.iter().any(|l| l.ci == **k)).map(|k| k.to_string()).collect();
    let rc_table = complete_table(&rc_rows, &rcs);
    let ci_table = complete_table(&ci_rows, &cis);
    let rc_cmp = compare(rcs, rc_table, alpha, notices, &format!("{metric}/rc"));
    let ci_cmp = compare(cis, ci_table, alpha, notices, &format!("{metric}/ci"));

    // NRC modes, one block per dataset.
    let mut nrc_rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in &nrc {
        nrc_rows.entry(r.dataset.clone()).or_default().insert(r.learner.clone(), r.value);
    }
    let modes: Vec<String> =
        FeatureMode::ALL.iter().map(|m| nrc_learner_id(*m)).filter(|id| nrc.iter().any(|r| &r.learner == id)).collect();
    let nrc_table = complete_table(&nrc_rows, &modes);
    let nrc_cmp = compare(modes.clone(), nrc_table, alpha, notices, &format!("{metric}/nrc"));

    let no_ci: Vec<f64> = rl.iter().filter(|(_, l)| l.ci == CiMethod::None).map(|(r, _)| r.value).collect();
    let with_ci: Vec<f64> = rl.iter().filter(|(_, l)| l.ci != CiMethod::None).map(|(r, _)| r.value).collect();
    let ci_vs_no_ci =
        group_test(vec![("no-ci".into(), no_ci), ("ci".into(), with_ci)], notices, &format!("{metric}/ci-vs-no-ci"));
    let rl_all: Vec<f64> = rl.iter().map(|(r, _)| r.value).collect();
    let nrc_all: Vec<f64> = nrc.iter().map(|r| r.value).collect();
    let rl_vs_nrc =
        group_test(vec![("rl".into(), rl_all), ("nrc".into(), nrc_all)], notices, &format!("{metric}/rl-vs-nrc"));

    let mut learner_vs_nrc = Vec::new();
    for l in &learners {
        let lv: Vec<f64> = rl.iter().filter(|(_, id)| &id.to_string() == l).map(|(r, _)| r.value).collect();
        for m in &modes {
            let mv: Vec<f64> = nrc.iter().filter(|r| &r.learner == m).map(|r| r.value).collect();
            if let Some(g) =
                group_test(vec![(l.clone(), lv.clone()), (m.clone(), mv)], notices, &format!("{metric}/{l}-vs-{m}"))
            {
                learner_vs_nrc.push(LearnerVsNrc { learner: l.clone(), nrc: m.clone(), test: g.test });
            }
        }
    }

    MetricSummary {
        metric: metric.to_string(),
        learners: learners_cmp,
        relational_classifiers: rc_cmp,
        collective_inference: ci_cmp,
        nrc_modes: nrc_cmp,
        ci_vs_no_ci,
        rl_vs_nrc,
        learner_vs_nrc,
    }
}

fn rank_of(c: &RankComparison, method: &str) -> Option<f64> {
    c.methods.iter().position(|m| m == method).map(|i| c.average_ranks[i])
}

fn soft_checks(summary: &[MetricSummary]) -> Vec<SoftCheck> {
    let Some(ms) = summary.iter().find(|m| m.metric == CHECK_METRIC) else {
        return Vec::new();
    };
    let mut out = Vec::new();

    let all = nrc_learner_id(FeatureMode::All);
    let others = [nrc_learner_id(FeatureMode::NetworkOnly), nrc_learner_id(FeatureMode::RlOnly)];
    out.push(match &ms.nrc_modes {
        Some(c) => match (rank_of(c, &all), others.iter().map(|o| rank_of(c, o)).collect::<Option<Vec<f64>>>()) {
            (Some(a), Some(o)) => SoftCheck {
                name: "nrc-all-beats-single-source".into(),
                metric: ms.metric.clone(),
                pass: o.iter().all(|r| a < *r),
                detail: format!("mean rank all={a}, network_only={}, rl_only={}", o[0], o[1]),
            },
            _ => missing("nrc-all-beats-single-source", &ms.metric),
        },
        None => missing("nrc-all-beats-single-source", &ms.metric),
    });

    out.push(match &ms.learners {
        Some(c) => {
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (m, r) in c.methods.iter().zip(&c.average_ranks) {
                if let Ok(l) = m.parse::<LearnerId>() {
                    groups.entry(l.ci.to_string()).or_default().push(*r);
                }
            }
            let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            match groups.get("no").map(mean) {
                Some(no) if groups.len() > 1 => {
                    let rest: Vec<(String, f64)> =
                        groups.iter().filter(|(k, _)| k.as_str() != "no").map(|(k, v)| (k.clone(), mean(v))).collect();
                    let detail = std::iter::once(format!("no={no}"))
                        .chain(rest.iter().map(|(k, v)| format!("{k}={v}")))
                        .collect::<Vec<_>>()
                        .join(", ");
                    SoftCheck {
                        name: "no-ci-beats-ci".into(),
                        metric: ms.metric.clone(),
                        pass: rest.iter().all(|(_, v)| no < *v),
                        detail: format!("mean rank per CI method: {detail}"),
                    }
                }
                _ => missing("no-ci-beats-ci", &ms.metric),
            }
        }
        None => missing("no-ci-beats-ci", &ms.metric),
    });
    out
}

fn missing(name: &str, metric: &str) -> SoftCheck {
    SoftCheck { name: name.into(), metric: metric.into(), pass: false, detail: "not enough results to decide".into() }
}

/// Friedman/Nemenyi per metric, Kruskal-Wallis group tests and the
/// directional checks.
pub fn run_stats(rows: &[ReportRow], alpha: f64) -> Result<StatsSummary> {
    let mut notices = Vec::new();
    let datasets: Vec<String> = rows.iter().map(|r| r.dataset.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let metrics: Vec<String> = {
        let mut seen = Vec::new();
        for r in rows {
            if !seen.contains(&r.metric) {
                seen.push(r.metric.clone());
            }
        }
        seen
    };
    let underpowered = datasets.len() < 2;
    if underpowered {
        notices.push(format!("only {} dataset(s): results are underpowered", datasets.len()));
    }
    let mut summaries = Vec::new();
    for m in &metrics {
        let sel: Vec<&ReportRow> = rows.iter().filter(|r| &r.metric == m).collect();
        summaries.push(metric_summary(m, &sel, alpha, &mut notices));
    }
    let soft_checks = soft_checks(&summaries);
    Ok(StatsSummary { alpha, datasets, underpowered, metrics: summaries, soft_checks, notices })
}
