//! End-to-end runs of the `callnet` binary on a small synthetic plan.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use callnet::io::{read_cdr, read_graph, read_labels, read_scores, CdrSchema};
use callnet::pipeline::{Dataset, NetworkSpec};
use callnet::plan::DatasetSource;
use callnet::report::read_report;
use callnet_core::graph::{Decay, Direction, WeightScheme, DEFAULT_DECAY_PER_WEEK};
use callnet_core::synth::{generate, DEFAULT_EPOCH};
use tempfile::TempDir;

const PLAN: &str = "seed = 4\nworkers = 2\n[data]\nsynth_count = 1\n[synth]\ncustomers = 600\nsparsity = 0.02\n";

struct Sandbox {
    dir: TempDir,
    config: PathBuf,
}

impl Sandbox {
    fn new(plan: &str) -> Sandbox {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("plan.cfg");
        std::fs::write(&config, plan).unwrap();
        Sandbox { dir, config }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_callnet"))
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(self.out())
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_export_round_trips_and_feeds_build_graph() {
    let sb = Sandbox::new(PLAN);
    sb.ok(&["synth"]);
    let cdr = sb.out().join("synth-00.csv");
    assert!(sb.out().join("synth-00.diagnostics.json").exists());

    let parsed = read_cdr(&cdr, &CdrSchema::default(), Some(DEFAULT_EPOCH)).unwrap();
    assert_eq!(parsed.malformed, 0);
    let labels_file = std::fs::File::open(sb.out().join("synth-00.labels.csv")).unwrap();
    let labels = read_labels(labels_file, parsed.store.customers(), parsed.store.timeline().observation()).unwrap();

    // The exported store and labels equal a direct generation with the same seed.
    let plan = callnet::ExperimentPlan::from_config(&callnet::Config::parse(PLAN).unwrap()).unwrap();
    let DatasetSource::Synth { config, .. } = &plan.datasets[0] else { panic!() };
    let truth = generate(config).unwrap();
    assert_eq!(parsed.store.records(), truth.store.records());
    assert_eq!(labels.churndates(), truth.labels.churndates());

    let epoch = DEFAULT_EPOCH.to_string();
    let stdout = sb.ok(&[
        "build-graph",
        "--cdr",
        path_str(&cdr),
        "--epoch",
        &epoch,
        "--months",
        "3-4",
        "--direction",
        "outgoing",
        "--scheme",
        "length",
        "--decay",
        "decay",
        "--segment",
        "we",
    ]);
    assert!(stdout.contains("entries"));
    let (graph, meta) = read_graph(&sb.out().join("graph.csv"), parsed.store.customers()).unwrap();
    assert_eq!((meta.direction.as_str(), meta.scheme.as_str(), meta.segment.as_str()), ("outgoing", "length", "we"));

    let ds = Dataset::new("synth-00", &parsed.store, plan.min_duration, "test").unwrap();
    let mut net =
        NetworkSpec::new(Direction::Outgoing, WeightScheme::Length, Decay::Exponential(DEFAULT_DECAY_PER_WEEK));
    net.segment = "we".parse().unwrap();
    let want = net.build(&ds.store, ds.store.timeline().months(3, 4)).unwrap();
    assert_eq!(graph.num_entries(), want.num_entries());
    for (i, j, w) in want.edges() {
        let got = graph.weight(i, j).unwrap();
        assert!((got - w).abs() <= 1e-9 * w.abs().max(1.0), "edge ({i}, {j}): {got} vs {w}");
    }
}

#[test]
fn featurize_train_evaluate_chain() {
    let sb = Sandbox::new(PLAN);
    sb.ok(&["featurize", "--label-month", "4", "--mode", "all"]);
    sb.ok(&["featurize", "--label-month", "5", "--mode", "all"]);
    let train = sb.out().join("features_m4_all.csv");
    let test = sb.out().join("features_m5_all.csv");
    sb.ok(&["train", "--features", path_str(&train)]);
    let model: serde_json::Value =
        serde_json::from_slice(&std::fs::read(sb.out().join("model.json")).unwrap()).unwrap();
    assert!(model["columns"].as_array().unwrap().iter().any(|c| c == "count_link_churn"));

    let stdout = sb.ok(&["evaluate", "--model", path_str(&sb.out().join("model.json")), "--features", path_str(&test)]);
    assert!(stdout.contains("auc"));
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(sb.out().join("metrics.json")).unwrap()).unwrap();
    let auc = metrics["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    let test_rows = std::fs::read_to_string(&test).unwrap().lines().count();
    let predictions = std::fs::read_to_string(sb.out().join("predictions.csv")).unwrap().lines().count();
    assert_eq!(test_rows, predictions);
}

#[test]
fn score_covers_every_customer() {
    let sb = Sandbox::new(PLAN);
    sb.ok(&["score", "--learner", "rl-wvrn", "--months", "3"]);
    let rows = read_scores(std::fs::File::open(sb.out().join("scores_rl-wvrn.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 600);
    assert!(rows.iter().all(|(_, l, s)| l == "rl-wvrn" && (0.0..=1.0).contains(s)));
}

#[test]
fn report_then_stats() {
    let sb = Sandbox::new(&format!("{PLAN}[bench]\nlearners = no-wvrn, rl-wvrn\n"));
    sb.ok(&["report", "--learners-only"]);
    let rows = read_report(&sb.out().join("report.csv")).unwrap();
    // 2 learners x 2 timeframes x 2 schemes x 4 metrics.
    assert_eq!(rows.len(), 32);
    assert_eq!(read_report(&sb.out().join("report.json")).unwrap(), rows);
    let report = sb.out().join("report.csv");
    let stdout = sb.ok(&["stats", "--report", path_str(&report)]);
    assert!(stdout.contains("underpowered"));
    let stats: serde_json::Value =
        serde_json::from_slice(&std::fs::read(sb.out().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["underpowered"], true);
}

#[test]
fn empty_learner_set_is_a_warning() {
    let sb = Sandbox::new(&format!("{PLAN}[bench]\nlearners =\n"));
    let o = sb.run(&["report", "--learners-only"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty learner set"));
    assert!(read_report(&sb.out().join("report.csv")).unwrap().is_empty());
}

#[test]
fn small_grid_resumes_without_work() {
    let grid = "[grid]\ndirections = undirected\nschemes = count, binary\ndecays = simple\nsegments = whole, wd\nreciprocity = all\n";
    let sb = Sandbox::new(&format!("{PLAN}{grid}"));
    let first = sb.ok(&["grid"]);
    assert!(first.contains("4 cells"), "{first}");
    assert!(first.contains("4 evaluated now"), "{first}");
    let journal = std::fs::read(sb.out().join("grid_cells.csv")).unwrap();
    let second = sb.ok(&["grid"]);
    assert!(second.contains("0 evaluated now"), "{second}");
    assert_eq!(std::fs::read(sb.out().join("grid_cells.csv")).unwrap(), journal);
    let tables = std::fs::read_to_string(sb.out().join("grid_tables.csv")).unwrap();
    assert!(tables.starts_with("reciprocity,metric,direction,segment"));
}

#[test]
fn hard_errors_exit_nonzero() {
    let sb = Sandbox::new(&format!("{PLAN}[bench]\nlearnrs = no-wvrn\n"));
    let o = sb.run(&["report"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learnrs"));

    let sb = Sandbox::new(PLAN);
    assert_eq!(sb.run(&["score", "--learner", "xx-wvrn"]).status.code(), Some(2));
    let missing = sb.dir.path().join("nope.csv");
    assert_eq!(sb.run(&["stats", "--report", path_str(&missing)]).status.code(), Some(1));
    assert_eq!(sb.run(&["build-graph", "--months", "5-2"]).status.code(), Some(1));
}
