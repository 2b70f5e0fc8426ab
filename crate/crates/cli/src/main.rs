//! `gradevae`: generate data, train the graph VAE, evaluate, predict,
//! explain and benchmark against classical recommenders.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradevae::baselines::{self, BaselineKind};
use gradevae::bigraph::{load_csv, split, BipartiteGraph, DataSplit, Edge};
use gradevae::config::{keys_help, Settings};
use gradevae::explain::{
    attribute, cluster_score, ensure_trained, export_embeddings, write_attribution,
};
use gradevae::model::LossMode;
use gradevae::synth::{generate, SyntheticTruth};
use gradevae::train::{
    self, evaluate, fit, load_checkpoint, message_graph, resolve_pairs, save_checkpoint,
    write_epoch_log, write_metrics, write_predictions, MetricsRow, TrainConfig,
};
use gradevae::Error;

#[derive(Parser, Debug)]
#[command(name = "gradevae", version, about = "Graph VAE grade prediction pipeline")]
#[command(after_help = keys_help())]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON object of dotted config keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    assignments: Vec<String>,
    /// Root seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Record wall-clock times in epoch logs and bench tables (otherwise 0,
    /// so outputs stay byte-identical across runs).
    #[arg(long, global = true)]
    timing: bool,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    /// train.epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// train.lr
    #[arg(long)]
    lr: Option<f64>,
    /// train.dropout
    #[arg(long)]
    dropout: Option<f64>,
    /// train.kl_weight
    #[arg(long)]
    kl_weight: Option<f64>,
    /// train.loss: masked-softmax-ce | literal-bce
    #[arg(long)]
    loss: Option<LossMode>,
    /// model.depth
    #[arg(long)]
    depth: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, t: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.dropout {
            t.dropout = v;
        }
        if let Some(v) = self.kl_weight {
            t.kl_weight = v;
        }
        if let Some(v) = self.loss {
            t.loss = v;
        }
        if let Some(v) = self.depth {
            t.depth = v;
        }
    }
}

#[derive(Args, Debug)]
struct Checkpointed {
    /// Grade CSV the model was trained on.
    #[arg(long)]
    input: PathBuf,
    /// Parameter file written by `train` (sidecar `<file>.json` alongside).
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a cluster-structured synthetic grade CSV and its truth labels.
    #[command(after_help = keys_help())]
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        /// Truth labels (`node_kind,id,cluster`); default `truth.csv` next to --out.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Validate a grade CSV, print a summary and write the split manifest.
    #[command(after_help = keys_help())]
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Split manifest (`edge_index,role`).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fit the model; writes model.gvae, epochs.csv, metrics.csv, split.csv.
    #[command(after_help = keys_help())]
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Score a checkpoint on a split of the data it was trained with.
    #[command(after_help = keys_help())]
    Evaluate {
        #[command(flatten)]
        model: Checkpointed,
        /// train | valid | test
        #[arg(long, default_value = "test")]
        on: String,
        /// Metrics CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Level distributions for given pairs (default: the test split).
    #[command(after_help = keys_help())]
    Predict {
        #[command(flatten)]
        model: Checkpointed,
        /// CSV with header `student_id,course_id`.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one classical predictor; writes predictions.csv and metrics.csv.
    #[command(after_help = keys_help())]
    Baseline {
        /// global_average | user_average | item_average | user_knn | item_knn | biased_mf
        #[arg(long)]
        kind: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Gradient×input attribution of one prediction to every node.
    #[command(after_help = keys_help())]
    Attribute {
        #[command(flatten)]
        model: Checkpointed,
        #[arg(long)]
        student: String,
        #[arg(long)]
        course: String,
        #[arg(long)]
        out: PathBuf,
        /// explain.top
        #[arg(long)]
        top: Option<usize>,
    },
    /// Latent means of every node plus 2-D PCA coordinates.
    #[command(after_help = keys_help())]
    ExportEmbeddings {
        #[command(flatten)]
        model: Checkpointed,
        #[arg(long)]
        out: PathBuf,
        /// Truth labels; when given, prints the k-means adjusted Rand index.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Graph VAE against all baselines on one split: `method,rmse,mae,fit_ms`.
    #[command(after_help = keys_help())]
    Bench {
        /// Grade CSV; a synthetic dataset from `synth.*` when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome = Result<(), Failure>;

fn settings(common: &Common, flags: Option<&TrainFlags>) -> Result<Settings, Failure> {
    let usage = |e: Error| Failure::Usage(e.to_string());
    let mut s = match &common.config {
        Some(path) => Settings::from_file(path).map_err(usage)?,
        None => Settings::default(),
    };
    for a in &common.assignments {
        s.apply_assignment(a).map_err(usage)?;
    }
    if let Some(seed) = common.seed {
        s.set_seed(seed);
    }
    if let Some(f) = flags {
        f.apply(&mut s.train);
    }
    s.validate().map_err(usage)?;
    Ok(s)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Failure::Run(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn edges_of(graph: &BipartiteGraph, idx: &[usize]) -> Vec<Edge> {
    idx.iter().map(|&i| graph.edges()[i]).collect()
}

fn pairs_of(graph: &BipartiteGraph, idx: &[usize]) -> Vec<(usize, usize)> {
    edges_of(graph, idx)
        .iter()
        .map(|e| (e.student, e.course))
        .collect()
}

fn subset<'a>(s: &'a DataSplit, name: &str) -> Result<&'a [usize], Failure> {
    match name {
        "train" => Ok(&s.train),
        "test" => Ok(&s.test),
        "valid" => Ok(&s.valid),
        other => Err(Failure::Usage(format!(
            "--on: unknown split `{other}` (expected train, valid or test)"
        ))),
    }
}

/// Graph, checkpoint and the split it was trained with.
fn open_model(
    m: &Checkpointed,
) -> Result<(BipartiteGraph, gradevae::model::ModelParams, DataSplit, gradevae::model::checkpoint::CheckpointMeta), Failure> {
    let graph = load_csv(&m.input)?;
    let (params, config, meta) = load_checkpoint(&m.checkpoint, &graph)?;
    let data_split = split(&graph, config.split, config.seed)?;
    Ok((graph, params, data_split, meta))
}

fn read_pairs(path: &Path, graph: &BipartiteGraph) -> Result<Vec<(usize, usize)>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(Error::from)?;
    let headers = reader.headers().map_err(Error::from)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["student_id", "course_id"] {
        return Err(Failure::Run(Error::Data(format!(
            "{}: expected header `student_id,course_id`",
            path.display()
        ))));
    }
    let mut ids = Vec::new();
    for row in reader.records() {
        let row = row.map_err(Error::from)?;
        ids.push((row[0].to_string(), row[1].to_string()));
    }
    Ok(resolve_pairs(graph, &ids)?)
}

fn run(cli: Cli) -> Outcome {
    let common = &cli.common;
    match &cli.command {
        Command::GenSynthetic { out, truth } => {
            let s = settings(common, None)?;
            let (graph, labels) = generate(&s.synth)?;
            graph.write_csv(out)?;
            let truth = truth.clone().unwrap_or_else(|| {
                out.parent().unwrap_or(Path::new(".")).join("truth.csv")
            });
            labels.write_csv(&truth, &graph)?;
            println!(
                "{} students, {} courses, {} grades -> {}",
                graph.m(),
                graph.n(),
                graph.edges().len(),
                out.display()
            );
        }
        Command::Ingest { input, manifest } => {
            let s = settings(common, None)?;
            let graph = load_csv(input)?;
            let data_split = split(&graph, s.split_fractions(), s.seed)?;
            let mut hist = [0usize; gradevae::bigraph::LEVELS];
            for e in graph.edges() {
                hist[usize::from(e.level) - 1] += 1;
            }
            println!("students,{}", graph.m());
            println!("courses,{}", graph.n());
            println!("grades,{}", graph.edges().len());
            println!(
                "split,train={},test={},valid={},unused={}",
                data_split.train.len(),
                data_split.test.len(),
                data_split.valid.len(),
                data_split.unused.len()
            );
            println!(
                "levels,{}",
                hist.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            );
            if let Some(path) = manifest {
                data_split.write_manifest(path, graph.edges().len())?;
            }
        }
        Command::Train {
            input,
            out_dir,
            flags,
        } => {
            let s = settings(common, Some(flags))?;
            let graph = load_csv(input)?;
            let data_split = split(&graph, s.split_fractions(), s.seed)?;
            ensure_dir(out_dir)?;
            let (params, logs) = fit(&graph, &data_split, &s.train)?;
            save_checkpoint(
                &out_dir.join("model.gvae"),
                &params,
                &graph,
                &s.train,
                logs.len(),
            )?;
            write_epoch_log(&out_dir.join("epochs.csv"), &logs, common.timing)?;
            data_split.write_manifest(&out_dir.join("split.csv"), graph.edges().len())?;
            let mut rows = Vec::new();
            for (name, idx) in [
                ("train", &data_split.train),
                ("valid", &data_split.valid),
                ("test", &data_split.test),
            ] {
                if !idx.is_empty() {
                    let e = evaluate(&params, &graph, &data_split, idx)?;
                    println!("{name}: rmse {:.4} mae {:.4}", e.rmse, e.mae);
                    rows.push(MetricsRow::from_evaluation(name, &e));
                }
            }
            write_metrics(&out_dir.join("metrics.csv"), &rows)?;
        }
        Command::Evaluate { model, on, out } => {
            settings(common, None)?;
            let (graph, params, data_split, _) = open_model(model)?;
            let idx = subset(&data_split, on)?;
            let e = evaluate(&params, &graph, &data_split, idx)?;
            let rows = [MetricsRow::from_evaluation(on, &e)];
            match out {
                Some(path) => write_metrics(path, &rows)?,
                None => println!(
                    "set,rmse,mae,matrix_rmse\n{on},{},{},{}",
                    e.rmse, e.mae, e.matrix_rmse
                ),
            }
        }
        Command::Predict { model, pairs, out } => {
            settings(common, None)?;
            let (graph, params, data_split, _) = open_model(model)?;
            let pairs = match pairs {
                Some(path) => read_pairs(path, &graph)?,
                None => pairs_of(&graph, &data_split.test),
            };
            let pred = train::predict(&params, &graph, &data_split, &pairs)?;
            write_predictions(out, &graph, &pred)?;
        }
        Command::Baseline {
            kind,
            input,
            out_dir,
        } => {
            let s = settings(common, None)?;
            let kind: BaselineKind = kind.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
            let graph = load_csv(input)?;
            let data_split = split(&graph, s.split_fractions(), s.seed)?;
            if data_split.test.is_empty() {
                return Err(Failure::Run(Error::Data("test split is empty".into())));
            }
            ensure_dir(out_dir)?;
            let p = baselines::fit_baseline(kind, &graph, &data_split, &s.baseline)?;
            let pairs = pairs_of(&graph, &data_split.test);
            let values = p.predict(&pairs)?;
            let truth: Vec<u8> = edges_of(&graph, &data_split.test).iter().map(|e| e.level).collect();
            let (rmse, mae) = train::rmse_mae(&values, &truth)?;
            baselines::write_predictions(&out_dir.join("predictions.csv"), &graph, &pairs, &values)?;
            write_metrics(
                &out_dir.join("metrics.csv"),
                &[MetricsRow {
                    set: "test".into(),
                    rmse,
                    mae,
                    matrix_rmse: None,
                }],
            )?;
            println!("{}: rmse {rmse:.4} mae {mae:.4}", kind.as_str());
        }
        Command::Attribute {
            model,
            student,
            course,
            out,
            top,
        } => {
            let s = settings(common, None)?;
            let (graph, params, data_split, meta) = open_model(model)?;
            ensure_trained(&meta)?;
            let pair = (graph.student_idx(student)?, graph.course_idx(course)?);
            let ctx = message_graph(&graph, &data_split);
            let report = attribute(&params, &ctx, pair)?;
            write_attribution(out, &graph, &report, top.unwrap_or(s.top))?;
            println!("expected level {:.4}", report.expected_level);
        }
        Command::ExportEmbeddings { model, out, truth } => {
            let s = settings(common, None)?;
            let (graph, params, data_split, meta) = open_model(model)?;
            ensure_trained(&meta)?;
            let ctx = message_graph(&graph, &data_split);
            let dump = export_embeddings(&params, &ctx, &graph)?;
            dump.write_csv(out)?;
            if let Some(path) = truth {
                let labels = SyntheticTruth::read_student_labels(path, &graph)?;
                let k = match s.clusters {
                    0 => labels.iter().max().map_or(1, |m| m + 1),
                    k => k,
                };
                let ari = cluster_score(&dump, &labels, k, s.seed)?;
                println!("ari,{ari}");
            }
        }
        Command::Bench { input, out, flags } => {
            let s = settings(common, Some(flags))?;
            let graph = match input {
                Some(path) => load_csv(path)?,
                None => generate(&s.synth)?.0,
            };
            let data_split = split(&graph, s.split_fractions(), s.seed)?;
            let (rows, _, _) = baselines::bench(&graph, &data_split, &s.train, &s.baseline)?;
            baselines::write_bench(out, &rows, common.timing)?;
            for r in &rows {
                println!("{:<16} rmse {:.4} mae {:.4}", r.method, r.rmse, r.mae);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
