//! `tpp` — generate, train, evaluate and benchmark temporal point process
//! models. Every subcommand reads and writes plain JSON so runs can be
//! scripted and diffed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use tpp_core::data::{load_dataset, split_dataset, write_dataset, DataSchema, Dataset};
use tpp_core::hawkes::{self, GenerateConfig, HawkesParams};
use tpp_core::pipeline::{
    eval_avg_loglik, horizon_otd, load_checkpoint, load_experiment, next_event_metrics,
    run_benchmark, run_grid, save_checkpoint, train, BenchmarkFile, DataConfig, EvalConfig,
    GridFile, RunnerConfig,
};

#[derive(Parser)]
#[command(name = "tpp", version, about = "Temporal point process toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample sequences from an exponential-kernel Hawkes process
    Generate(GenerateArgs),
    /// Train one model from a runner config and save a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint's log-likelihood on a dataset
    Eval(EvalArgs),
    /// Predict next events (and optionally rollouts) from a checkpoint
    Predict(PredictArgs),
    /// Train several models on one dataset and write a leaderboard
    Benchmark(BenchmarkArgs),
    /// Sweep a hyperparameter grid ranked by dev likelihood
    Gridsearch(GridArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON file {"mu": [K], "alpha": [K*K], "beta": [K*K]}, kernels row-major
    /// by [target][source]
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value_t = 100)]
    num_sequences: usize,
    /// Observation window length per sequence
    #[arg(long)]
    t_end: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON Lines path; with --splits the stem gains _train/_dev/_test
    #[arg(long)]
    output: PathBuf,
    /// Three comma-separated ratios, e.g. 0.6,0.2,0.2
    #[arg(long)]
    splits: Option<String>,
    /// Dataset name stored in reports (defaults to the file stem)
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Runner config, or an {"experiments": {...}} collection
    #[arg(long)]
    config: PathBuf,
    /// Which entry of an experiment collection to run
    #[arg(long)]
    experiment_id: Option<String>,
    /// Override a config value, e.g. --set train.learning_rate=0.01
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Directory for the checkpoint and training_log.jsonl
    #[arg(long)]
    output: PathBuf,
    /// Dataset paths; each overrides the config's data block when given
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory written by `tpp train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON Lines dataset to score
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Monte-Carlo samples per interval row
    #[arg(long, default_value_t = 10)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Thinning draws averaged into each time prediction
    #[arg(long, default_value_t = 100)]
    mbr_samples: usize,
    /// Probe window for intensity bounds; 0 picks ten mean gaps
    #[arg(long, default_value_t = 0.0)]
    probe_horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also roll the model past a cut point and score the distance between
    /// the predicted and true continuations
    #[arg(long)]
    otd: bool,
    /// Fraction of each window kept as rollout history
    #[arg(long, default_value_t = 0.5)]
    rollout_cut: f64,
    #[arg(long, default_value_t = 1.0)]
    otd_del_cost: f64,
    #[arg(long, default_value_t = 1000)]
    max_rollout_events: usize,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON file {"data": {train, dev, test}, "models": [runner config, ...]}
    #[arg(long)]
    config: PathBuf,
    /// Directory for leaderboard.csv, benchmark.json and checkpoints
    #[arg(long)]
    output: PathBuf,
    /// Override applied to every contender, e.g. --set train.max_epochs=5
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct GridArgs {
    /// JSON file {"base": runner config, "grid": {"dotted.path": [values]}}
    #[arg(long)]
    config: PathBuf,
    /// Directory for grid.json (optional)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Dataset paths; each overrides the base config's data block when given
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Predict(a) => run_predict(a),
        Command::Benchmark(a) => run_bench(a),
        Command::Gridsearch(a) => run_gridsearch(a),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn f64_list(v: &Value, key: &str) -> Result<Vec<f64>> {
    let arr = v
        .get(key)
        .and_then(Value::as_array)
        .with_context(|| format!("params file needs a {key:?} array"))?;
    arr.iter()
        .map(|x| x.as_f64().with_context(|| format!("{key:?} holds a non-number")))
        .collect()
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| match s.split_once('=') {
            Some((path, value)) => Ok((path.to_string(), value.to_string())),
            None => bail!("--set needs PATH=VALUE, got {s:?}"),
        })
        .collect()
}

/// `data/set.jsonl` -> `data/set_train.jsonl` and friends.
fn split_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut name = format!("{stem}_{suffix}");
    if let Some(ext) = path.extension() {
        name.push('.');
        name.push_str(&ext.to_string_lossy());
    }
    path.with_file_name(name)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = read_json(&a.params)?;
    let params = HawkesParams::new(
        f64_list(&spec, "mu")?,
        f64_list(&spec, "alpha")?,
        f64_list(&spec, "beta")?,
    )?;
    let k = params.num_types();
    let cfg = GenerateConfig { t_end: a.t_end, num_sequences: a.num_sequences, seed: a.seed };
    let seqs = hawkes::generate(&params, &cfg)?;
    let name = a.name.clone().unwrap_or_else(|| {
        a.output.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
    });

    match &a.splits {
        None => {
            let ds = Dataset::new(name, k, seqs)?;
            write_dataset(&ds, &a.output)?;
            println!(
                "wrote {} sequences ({} events) to {}",
                ds.sequences.len(),
                ds.num_events(),
                a.output.display()
            );
        }
        Some(spec) => {
            let parts: Vec<f64> = spec
                .split(',')
                .map(|p| p.trim().parse::<f64>().context("--splits needs three numbers"))
                .collect::<Result<_>>()?;
            let [tr, dv, te] = parts[..] else { bail!("--splits needs exactly three ratios") };
            let (train, dev, test) = split_dataset(seqs, (tr, dv, te), a.seed)?;
            for (suffix, seqs) in [("train", train), ("dev", dev), ("test", test)] {
                let path = split_path(&a.output, suffix);
                let ds = Dataset::new(format!("{name}_{suffix}"), k, seqs)?;
                write_dataset(&ds, &path)?;
                println!(
                    "wrote {} sequences ({} events) to {}",
                    ds.sequences.len(),
                    ds.num_events(),
                    path.display()
                );
            }
        }
    }
    Ok(())
}

/// Flag paths win over the config's data block.
fn resolve_data(
    cfg: &RunnerConfig,
    train: Option<PathBuf>,
    dev: Option<PathBuf>,
    test: Option<PathBuf>,
) -> Result<(PathBuf, PathBuf, Option<PathBuf>)> {
    let block = cfg.data.as_ref();
    let pick = |flag: Option<PathBuf>, from_cfg: Option<&String>, what: &str| -> Result<PathBuf> {
        flag.or_else(|| from_cfg.map(PathBuf::from))
            .with_context(|| format!("no {what} data: pass --{what} or add a data block"))
    };
    let train = pick(train, block.map(|d| &d.train), "train")?;
    let dev = pick(dev, block.map(|d| &d.dev), "dev")?;
    let test = test.or_else(|| block.map(|d| PathBuf::from(&d.test)));
    Ok((train, dev, test))
}

fn load_typed(path: &Path, num_types: usize) -> Result<Dataset> {
    let schema = DataSchema { num_types: Some(num_types), name: None };
    Ok(load_dataset(path, &schema)?)
}

fn run_train(a: TrainArgs) -> Result<()> {
    let overrides = parse_overrides(&a.set)?;
    let cfg = load_experiment(&a.config, a.experiment_id.as_deref(), &overrides)?;
    let (train_path, dev_path, test_path) = resolve_data(&cfg, a.train, a.dev, a.test)?;
    let k = cfg.model.num_event_types;
    let train_ds = load_typed(&train_path, k)?;
    let dev_ds = load_typed(&dev_path, k)?;

    fs::create_dir_all(&a.output)
        .with_context(|| format!("creating {}", a.output.display()))?;
    let log_path = a.output.join("training_log.jsonl");
    let mut model = tpp_core::build_model(&cfg.model)?;
    let report = train(model.as_mut(), &train_ds, &dev_ds, &cfg.train, Some(&log_path))?;
    save_checkpoint(&a.output, model.as_ref())?;

    println!(
        "trained {} for {} epochs (best epoch {}, dev ll/event {:.6}{})",
        model.model_id(),
        report.epochs.len(),
        report.best_epoch,
        report.best_dev_ll,
        if report.stopped_early { ", stopped early" } else { "" }
    );
    println!("checkpoint written to {}", a.output.display());

    if let Some(test_path) = test_path {
        let test_ds = load_typed(&test_path, k)?;
        let ll = eval_avg_loglik(
            model.as_ref(),
            &test_ds,
            cfg.eval.batch_size,
            cfg.eval.mc_samples,
            cfg.eval.seed,
            0,
        )?;
        println!("test ll/event {:.6} over {} events", ll.ll_per_event, ll.num_events);
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = load_typed(&a.data, model.config().num_event_types)?;
    let report =
        eval_avg_loglik(model.as_ref(), &ds, a.batch_size, a.mc_samples, a.seed, 0)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run_predict(a: PredictArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = load_typed(&a.data, model.config().num_event_types)?;
    let eval = EvalConfig {
        mbr_samples: a.mbr_samples,
        probe_horizon: a.probe_horizon,
        seed: a.seed,
        rollout_cut: a.rollout_cut,
        otd_del_cost: a.otd_del_cost,
        max_rollout_events: a.max_rollout_events,
        ..EvalConfig::default()
    };
    let next = next_event_metrics(model.as_ref(), &ds, &eval)?;
    println!("{}", serde_json::to_string_pretty(&next)?);
    if a.otd {
        let otd = horizon_otd(model.as_ref(), &ds, &eval)?;
        println!("{}", serde_json::to_string_pretty(&otd)?);
    }
    Ok(())
}

fn run_bench(a: BenchmarkArgs) -> Result<()> {
    let value = read_json(&a.config)?;
    let file: BenchmarkFile = serde_json::from_value(value)
        .with_context(|| format!("parsing {}", a.config.display()))?;
    let overrides = parse_overrides(&a.set)?;
    let report = run_benchmark(&file, Some(&a.output), &overrides)?;
    println!("dataset: {}", report.dataset);
    println!(
        "{:<14} {:>12} {:>10} {:>10} {:>10} {:>8}",
        "model", "test ll/ev", "rmse", "err rate", "mean otd", "epochs"
    );
    for e in &report.entries {
        println!(
            "{:<14} {:>12.4} {:>10.4} {:>10.4} {:>10.4} {:>8}",
            e.model, e.test_ll_per_event, e.rmse, e.error_rate, e.mean_otd, e.best_epoch
        );
    }
    println!("leaderboard written to {}", a.output.display());
    Ok(())
}

fn run_gridsearch(a: GridArgs) -> Result<()> {
    let value = read_json(&a.config)?;
    let file: GridFile = serde_json::from_value(value)
        .with_context(|| format!("parsing {}", a.config.display()))?;

    let block: Option<DataConfig> = match file.base.get("data") {
        Some(d) => Some(serde_json::from_value(d.clone()).context("parsing base data block")?),
        None => None,
    };
    let pick = |flag: Option<PathBuf>, from_cfg: Option<&String>, what: &str| -> Result<PathBuf> {
        flag.or_else(|| from_cfg.map(PathBuf::from))
            .with_context(|| format!("no {what} data: pass --{what} or add a data block"))
    };
    let train_path = pick(a.train, block.as_ref().map(|d| &d.train), "train")?;
    let dev_path = pick(a.dev, block.as_ref().map(|d| &d.dev), "dev")?;

    // infer the type count, then widen so both splits agree
    let schema = DataSchema::default();
    let train_ds = load_dataset(&train_path, &schema)?;
    let dev_ds = load_dataset(&dev_path, &schema)?;
    let k = train_ds.num_types.max(dev_ds.num_types);
    let train_ds = Dataset::new(train_ds.name.clone(), k, train_ds.sequences)?;
    let dev_ds = Dataset::new(dev_ds.name.clone(), k, dev_ds.sequences)?;

    let report = run_grid(&file, &train_ds, &dev_ds)?;
    for (i, cell) in report.cells.iter().enumerate() {
        let tag = if Some(i) == report.best { " <- best" } else { "" };
        let assign: Vec<String> =
            cell.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let assign = assign.join(", ");
        match (&cell.dev_ll, &cell.error) {
            (Some(ll), _) => println!("cell {i}: dev ll/event {ll:.6} [{assign}]{tag}"),
            (None, Some(err)) => println!("cell {i}: failed [{assign}] ({err})"),
            (None, None) => unreachable!("cell holds a score or an error"),
        }
    }
    if let Some(dir) = &a.output {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("grid.json");
        fs::write(&path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("report written to {}", path.display());
    }
    Ok(())
}
