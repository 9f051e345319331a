use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use callnet::config::Config;
use callnet::grid::{grid_dataset, run_architecture_grid};
use callnet::io::{
    create, customers_of_features, read_features, read_json, write_cdr, write_features, write_graph, write_json,
    write_labels, write_predictions, write_scores, GraphMeta, ModelDump,
};
use callnet::pipeline::{
    compute_metric, feature_table, load_dataset, load_datasets, run_learner_benchmark, run_nrc_benchmark, Dataset,
    NetworkSpec, RlContext, PREDICT_MONTH,
};
use callnet::plan::{derive_seed, parse_decay, DatasetSource, ExperimentPlan};
use callnet::report::{read_report, write_report};
use callnet::stats_run::run_stats;
use callnet_core::classify::{oversample, Classifier, LogisticModel, LogisticRegression, Predictor};
use callnet_core::features::FeatureMode;
use callnet_core::graph::{Direction, SegmentSpec, WeightScheme};
use callnet_core::relational::LearnerId;
use callnet_core::stats::DEFAULT_ALPHA;
use callnet_core::synth::{generate, verify};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Relational churn learning on call-detail records.
#[derive(Parser, Debug)]
#[command(name = "callnet", version)]
struct Cli {
    /// Plan configuration (key = value, with [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the configured value or all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Source {
    /// CDR CSV to use instead of the plan's first dataset.
    #[arg(long)]
    cdr: Option<PathBuf>,
    /// Observation start in epoch seconds, for --cdr.
    #[arg(long)]
    epoch: Option<i64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the plan's synthetic datasets as CDR and label CSVs.
    Synth,
    /// Build one call graph and export it as an edge list.
    BuildGraph {
        #[command(flatten)]
        source: Source,
        /// First and last month, e.g. 3-4.
        #[arg(long, default_value = "4-4")]
        months: String,
        #[arg(long, default_value = "undirected")]
        direction: Direction,
        #[arg(long, default_value = "count")]
        scheme: WeightScheme,
        /// simple, decay or decay:<rate per week>.
        #[arg(long, default_value = "simple")]
        decay: String,
        /// whole, a day, wd/we, day/evening/night or a combination like 1/2*wd+we.
        #[arg(long, default_value = "whole")]
        segment: SegmentSpec,
        #[arg(long)]
        reciprocal: bool,
    },
    /// Export the NRC feature table whose labels are churn in a given month.
    Featurize {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = PREDICT_MONTH)]
        label_month: usize,
        #[arg(long, default_value = "network_only")]
        mode: FeatureMode,
    },
    /// Score every customer with one relational learner.
    Score {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        learner: LearnerId,
        /// Network window length in months.
        #[arg(long, default_value_t = 1)]
        months: usize,
        #[arg(long, default_value = "count")]
        scheme: WeightScheme,
        #[arg(long, default_value_t = PREDICT_MONTH)]
        target: usize,
    },
    /// Fit a logistic model on a labelled feature file.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// Minority share after oversampling; 0 disables it.
        #[arg(long)]
        oversample: Option<f64>,
    },
    /// Apply a model to a labelled feature file and compute the metrics.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Run or resume the network-architecture grid.
    Grid,
    /// Significance tests over one or more report files.
    Stats {
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Run the learner and NRC benchmarks and write the evaluation report.
    Report {
        /// Skip the NRC benchmark.
        #[arg(long)]
        learners_only: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_plan(cli: &Cli) -> Result<ExperimentPlan> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set("seed", s.to_string());
    }
    if let Some(w) = cli.workers {
        cfg.set("workers", w.to_string());
    }
    ExperimentPlan::from_config(&cfg)
}

fn run(cli: Cli) -> Result<()> {
    let plan = load_plan(&cli)?;
    rayon::ThreadPoolBuilder::new().num_threads(plan.workers).build_global().ok();
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::Synth => synth(&plan, out),
        Command::BuildGraph { source, months, direction, scheme, decay, segment, reciprocal } => {
            let ds = dataset(&plan, source)?;
            let (a, b) = parse_months(months)?;
            let range = ds.store.timeline().months(a, b);
            let mut net = NetworkSpec::new(*direction, *scheme, parse_decay(decay)?);
            net.segment = segment.clone();
            net.options = net.options.reciprocal(*reciprocal);
            let graph = net.build(&ds.store, range)?;
            let meta = GraphMeta {
                num_nodes: graph.num_nodes(),
                direction: direction.to_string(),
                scheme: scheme.to_string(),
                decay: net.options.decay.label().into(),
                decay_rate: net.options.decay.rate(),
                segment: segment.label(),
                reciprocal: *reciprocal,
                period_start: range.start,
                period_end: range.end,
                edges: graph.num_entries(),
            };
            let path = out.join("graph.csv");
            write_graph(&path, &graph, ds.store.customers(), &meta)?;
            println!("{} entries over {} nodes -> {}", graph.num_entries(), graph.num_nodes(), path.display());
            Ok(())
        }
        Command::Featurize { source, label_month, mode } => {
            let ds = dataset(&plan, source)?;
            let (table, labels) = feature_table(&plan, &ds, *label_month, *mode)?;
            let path = out.join(format!("features_m{label_month}_{}.csv", mode.as_str()));
            write_features(create(&path)?, &table, ds.store.customers(), Some(&labels))?;
            println!("{} rows x {} columns -> {}", table.num_rows(), table.num_columns(), path.display());
            Ok(())
        }
        Command::Score { source, learner, months, scheme, target } => {
            let ds = dataset(&plan, source)?;
            let net = NetworkSpec::new(plan.direction, *scheme, plan.decay);
            let ctx = RlContext::build(&ds, &net, *months, *target)?;
            let seed = derive_seed(plan.seed, &format!("{}/score/{}/{learner}", ds.name, net.label()));
            let state = ctx.score(*learner, &plan.ci, &plan.logistic, seed)?;
            let rows: Vec<u32> = (0..ds.num_customers() as u32).collect();
            let path = out.join(format!("scores_{learner}.csv"));
            write_scores(create(&path)?, ds.store.customers(), &rows, &learner.to_string(), &state.scores)?;
            println!("{} sweeps, converged={} -> {}", state.iterations, state.converged, path.display());
            Ok(())
        }
        Command::Train { features, oversample: ratio } => {
            let names = directory(features)?;
            let (table, labels) = read_features(std::fs::File::open(features)?, &names)?;
            let labels = labels.context("training features need a label column")?;
            let ratio = ratio.unwrap_or(plan.oversample);
            let (table, labels) = if ratio > 0.0 {
                oversample(&table, &labels, ratio, derive_seed(plan.seed, "train/oversample"))?
            } else {
                (table, labels)
            };
            let model = LogisticRegression { options: plan.logistic }.fit(&table, &labels)?;
            let path = out.join("model.json");
            write_json(&path, &ModelDump::from(&model))?;
            println!("fitted on {} rows, converged={} -> {}", table.num_rows(), model.converged, path.display());
            Ok(())
        }
        Command::Evaluate { model, features } => {
            let model: LogisticModel = read_json::<ModelDump>(model)?.try_into()?;
            let names = directory(features)?;
            let (table, labels) = read_features(std::fs::File::open(features)?, &names)?;
            let labels = labels.context("evaluation features need a label column")?;
            let scores = model.predict(&table)?;
            write_predictions(create(&out.join("predictions.csv"))?, &names, table.rows(), &scores, &labels)?;
            let mut metrics = serde_json::Map::new();
            for m in &plan.metrics {
                let v = compute_metric(*m, &scores, &labels, &plan.emp)?;
                println!("{m}\t{v}");
                metrics.insert(m.to_string(), v.into());
            }
            write_json(&out.join("metrics.json"), &metrics)
        }
        Command::Grid => {
            let datasets = match &plan.grid.dataset {
                Some(_) => load_datasets(&plan)?,
                None => vec![load_dataset(plan.datasets.first().context("plan has no dataset")?, &plan)?],
            };
            let ds = grid_dataset(&plan, &datasets)?;
            println!("grid: {} cells on {}", plan.grid.cardinality(), ds.name);
            let res = run_architecture_grid(&plan, ds, out, plan.workers)?;
            println!(
                "{} cells ({} ok, {} degenerate), {} evaluated now -> {}",
                res.manifest.cells,
                res.manifest.ok,
                res.manifest.degenerate,
                res.evaluated,
                out.display()
            );
            Ok(())
        }
        Command::Stats { reports, alpha } => {
            let mut rows = Vec::new();
            for r in reports {
                rows.extend(read_report(r)?);
            }
            let summary = run_stats(&rows, *alpha)?;
            write_json(&out.join("stats.json"), &summary)?;
            for c in &summary.soft_checks {
                println!("{} {} [{}]: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.metric, c.detail);
            }
            if summary.underpowered {
                println!("note: fewer than two datasets, tests are underpowered");
            }
            Ok(())
        }
        Command::Report { learners_only } => report(&plan, out, *learners_only),
    }
}

fn parse_months(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
    if a < 1 || b < a || b > 6 {
        bail!("bad month range '{s}'");
    }
    Ok((a, b))
}

fn dataset(plan: &ExperimentPlan, source: &Source) -> Result<Dataset> {
    match &source.cdr {
        Some(path) => {
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cdr").to_string();
            load_dataset(&DatasetSource::File { name, path: path.clone(), epoch: source.epoch }, plan)
        }
        None => load_dataset(plan.datasets.first().context("plan has no dataset")?, plan),
    }
}

/// Sorted customer names of a feature file.
fn directory(features: &Path) -> Result<Vec<String>> {
    let mut names = customers_of_features(features)?;
    names.sort_unstable();
    names.dedup();
    Ok(names)
}

#[derive(Serialize)]
struct SynthSummary {
    name: String,
    epoch: i64,
    customers: usize,
    records: usize,
    churners: usize,
    diagnostics: DiagnosticsJson,
}

#[derive(Serialize)]
struct DiagnosticsJson {
    monthly_churn_rate: Vec<f64>,
    mean_churn_rate: f64,
    sparsity: f64,
    mean_degree: f64,
    max_degree: usize,
    isolated: usize,
    neighbour_churn_lift: f64,
    flags: Vec<String>,
}

fn synth(plan: &ExperimentPlan, out: &Path) -> Result<()> {
    for src in &plan.datasets {
        let DatasetSource::Synth { name, config } = src else { continue };
        let data = generate(config)?;
        write_cdr(create(&out.join(format!("{name}.csv")))?, &data.store)?;
        write_labels(create(&out.join(format!("{name}.labels.csv")))?, data.store.customers(), &data.labels)?;
        let d = verify(&data.store, &data.labels, config);
        for f in &d.flags {
            log::warn!("{name}: {f}");
        }
        let summary = SynthSummary {
            name: name.clone(),
            epoch: config.epoch,
            customers: data.store.num_customers(),
            records: data.store.len(),
            churners: data.labels.num_churners(),
            diagnostics: DiagnosticsJson {
                monthly_churn_rate: d.monthly_churn_rate.to_vec(),
                mean_churn_rate: d.mean_churn_rate,
                sparsity: d.sparsity,
                mean_degree: d.mean_degree,
                max_degree: d.max_degree,
                isolated: d.isolated,
                neighbour_churn_lift: d.neighbour_churn_lift,
                flags: d.flags.clone(),
            },
        };
        write_json(&out.join(format!("{name}.diagnostics.json")), &summary)?;
        println!("{name}: {} customers, {} calls, {} churners", summary.customers, summary.records, summary.churners);
    }
    Ok(())
}

#[derive(Serialize)]
struct DatasetEntry {
    name: String,
    fingerprint: String,
    customers: usize,
    records: usize,
    churners: usize,
}

#[derive(Serialize)]
struct ReportManifest {
    datasets: Vec<DatasetEntry>,
    learners: Vec<String>,
    metrics: Vec<String>,
    plan_hash: String,
    rows: usize,
    notices: Vec<String>,
    files: Vec<String>,
}

fn report(plan: &ExperimentPlan, out: &Path, learners_only: bool) -> Result<()> {
    let datasets = load_datasets(plan)?;
    let mut res = run_learner_benchmark(plan, &datasets)?;
    if !learners_only {
        res.extend(run_nrc_benchmark(plan, &datasets)?);
    }
    callnet::report::sort_rows(&mut res.rows);
    write_report(out, "report", &res.rows)?;
    let manifest = ReportManifest {
        datasets: datasets
            .iter()
            .map(|d| DatasetEntry {
                name: d.name.clone(),
                fingerprint: d.fingerprint.clone(),
                customers: d.num_customers(),
                records: d.store.len(),
                churners: d.labels.num_churners(),
            })
            .collect(),
        learners: plan.learners.iter().map(|l| l.to_string()).collect(),
        metrics: plan.metrics.iter().map(|m| m.to_string()).collect(),
        plan_hash: plan.fingerprint_hash(),
        rows: res.rows.len(),
        notices: res.notices,
        files: vec!["report.csv".into(), "report.json".into()],
    };
    write_json(&out.join("report_manifest.json"), &manifest)?;
    println!("{} report rows over {} datasets -> {}", manifest.rows, manifest.datasets.len(), out.display());
    Ok(())
}
