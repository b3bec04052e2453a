//! The `ait` command line: data generation, training, evaluation, ablations,
//! gradient checks and the regular-grid equivalence experiment.
//!
//! Each invocation writes into a fresh directory under `--out` holding the
//! resolved `config.toml` and an `INCOMPLETE` marker that is removed only
//! when the command succeeds.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::RunConfig;

use crate::data::{fit_norm, generate_synthetic, load_dataset, save_dataset, split, DataError, Dataset, NormStats, Sample};
use crate::eval::{
    evaluate, export_weight_pair, table_header, table_row, time_inference, weight_grids, EvalError, MetricsReport,
    Summary, TimingReport, Units,
};
use crate::model::{AiTConfig, Checkpoint, CheckpointError, Model, ModelError, ModelSpec, Variant};
use crate::numerics::{compare_gradients, finite_diff_grad};
use crate::training::{fit_with, TrainError, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ait",
    version,
    about = "Adaptive iTransformer for irregular multivariate time series",
    after_help = "Any config key can be overridden as `--key value`, e.g. `--hidden 32 --max-epochs 50`.\n\
                  AIT_THREADS caps evaluation parallelism (default 1)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Comma-separated seeds; repeats the command once per seed.
    #[arg(long, global = true, value_delimiter = ',', value_name = "N1,N2,...")]
    seeds: Option<Vec<u64>>,
    /// Parent directory for run directories.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Report metrics in the original value units.
    #[arg(long, global = true)]
    raw_units: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate a synthetic dataset and print its statistics.
    GenData,
    /// Train a model and evaluate it on the test split.
    Train,
    /// Evaluate a checkpoint (or a fresh model) on the test split.
    Eval,
    /// Train every AiT variant and tabulate test errors.
    Ablate,
    /// Compare analytic and finite-difference gradients on a toy model.
    Gradcheck,
    /// Default-mode adaptive linear layer versus static linear map on a regular grid.
    EquivRegular,
    /// Dump realized weight matrices of a checkpoint for one test sample.
    ExportWeights,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Gradcheck => "gradcheck",
            Command::EquivRegular => "equiv-regular",
            Command::ExportWeights => "export-weights",
        }
    }
}

const GLOBAL_KEYS: [&str; 4] = ["seed", "seeds", "out", "raw_units"];

/// Pulls `--key value` / `--key=value` pairs naming config keys out of
/// `args`, leaving everything else for the argument parser.
fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let keys = RunConfig::keys();
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.replace('-', "_"), Some(v.to_string())),
            None => (flag.replace('-', "_"), None),
        };
        if !keys.contains(&name) || GLOBAL_KEYS.contains(&name.as_str()) {
            rest.push(arg);
            continue;
        }
        match inline.or_else(|| it.next()) {
            Some(v) => overrides.push((name, v)),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(args: Vec<String>) -> Result<(), CliError> {
    let (rest, mut overrides) = extract_overrides(args);
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string().trim_end().to_string())),
    };
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(seeds) = &cli.seeds {
        let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
        overrides.push(("seeds".into(), format!("[{}]", list.join(", "))));
    }
    if let Some(out) = &cli.out {
        overrides.push(("out".into(), toml::Value::String(out.display().to_string()).to_string()));
    }
    if cli.raw_units {
        overrides.push(("raw_units".into(), "true".into()));
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    let run = RunDir::create(&cfg, cli.command.name())?;
    println!("run directory: {}", run.path.display());
    let result = match cli.command {
        Command::GenData => gen_data(&cfg, &run),
        Command::Train => train(&cfg, &run),
        Command::Eval => eval(&cfg, &run),
        Command::Ablate => ablate(&cfg, &run),
        Command::Gradcheck => gradcheck(&cfg, &run),
        Command::EquivRegular => equiv_regular(&cfg, &run),
        Command::ExportWeights => export_weights(&cfg, &run),
    };
    if result.is_ok() {
        run.finish()?;
    }
    result
}

/// One invocation's output directory.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    fn create(cfg: &RunConfig, command: &str) -> Result<Self, CliError> {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = cfg.out_dir().join(format!("{command}-{stamp}"));
        let mut path = base.clone();
        let mut k = 1;
        while path.exists() {
            k += 1;
            path = PathBuf::from(format!("{}-{k}", base.display()));
        }
        std::fs::create_dir_all(&path)?;
        std::fs::write(path.join("INCOMPLETE"), "")?;
        std::fs::write(path.join("config.toml"), cfg.to_toml())?;
        Ok(Self { path })
    }

    fn sub(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.path.join(name);
        std::fs::create_dir_all(&p)?;
        Ok(p)
    }

    fn finish(&self) -> Result<(), CliError> {
        std::fs::remove_file(self.path.join("INCOMPLETE"))?;
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn load_or_generate(cfg: &RunConfig, seed: u64) -> Result<Dataset, CliError> {
    match &cfg.data {
        Some(path) => Ok(load_dataset(path)?),
        None => Ok(generate_synthetic(&cfg.generator()?, seed)?),
    }
}

/// Normalized splits plus the raw test set.
struct Prepared {
    norm: NormStats,
    train: Vec<Sample>,
    val: Vec<Sample>,
    test: Vec<Sample>,
    raw_test: Dataset,
    n_vars: usize,
}

fn prepare(cfg: &RunConfig, data: &Dataset, seed: u64) -> Result<Prepared, CliError> {
    let n_vars = data
        .n_vars()
        .ok_or_else(|| CliError::Config("dataset is empty".into()))?;
    let parts = split(data, cfg.ratios(), seed)?;
    let norm = fit_norm(&parts.train);
    Ok(Prepared {
        train: norm.apply_dataset(&parts.train).samples,
        val: norm.apply_dataset(&parts.val).samples,
        test: norm.apply_dataset(&parts.test).samples,
        raw_test: parts.test,
        norm,
        n_vars,
    })
}

fn units(cfg: &RunConfig) -> Units {
    if cfg.raw_units {
        Units::Raw
    } else {
        Units::Normalized
    }
}

fn gen_data(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let gen = cfg.generator()?;
    for seed in cfg.seed_list() {
        let data = generate_synthetic(&gen, seed)?;
        let path = run.path.join(format!("data-seed{seed}.jsonl"));
        save_dataset(&data, &path)?;
        println!("seed {seed}: {}", path.display());
        println!("{}", data.stats());
    }
    Ok(())
}

/// Trains one model on `p` and writes its artifacts into `dir`.
fn train_one(
    cfg: &RunConfig,
    spec: ModelSpec,
    p: &Prepared,
    seed: u64,
    dir: &Path,
    verbose: bool,
) -> Result<(Model, TrainReport, MetricsReport), CliError> {
    let model = Model::new(spec, seed)?;
    let (best, report) = fit_with(&model, &p.train, &p.val, &cfg.train_config(seed), |e| {
        if verbose {
            println!("{e}");
        }
    })?;
    let checkpoint = Checkpoint::new(best.clone(), Some(p.norm.clone()));
    checkpoint.save(dir.join("checkpoint.ait"))?;
    let mut metrics = evaluate(&checkpoint, &p.raw_test, units(cfg))?;
    metrics.seed = Some(seed);
    write_json(&dir.join("metrics.json"), &metrics)?;

    let mut history = String::from("epoch\ttrain_loss\tval_loss\tlr\n");
    for e in &report.epochs {
        writeln!(history, "{}\t{:e}\t{:e}\t{:e}", e.epoch, e.train_loss, e.val_loss, e.lr).expect("string write");
    }
    std::fs::write(dir.join("history.tsv"), history)?;
    write_json(
        &dir.join("train_report.json"),
        &serde_json::json!({
            "best_epoch": report.best_epoch,
            "best_val_loss": report.best_val_loss,
            "epochs": report.epochs.len(),
            "stop_reason": report.stop_reason,
            "skipped_batches": report.skipped_batches,
        }),
    )?;
    let timing = TimingReport {
        mean_epoch_seconds: report.mean_epoch_seconds(),
        epochs_timed: report.epochs.len(),
        inference_seconds: time_inference(&best, &p.test, cfg.batch_size)?,
        test_samples: p.test.len(),
        hardware: cfg.hardware.clone(),
    };
    write_json(&dir.join("timing.json"), &timing)?;
    Ok((best, report, metrics))
}

fn train(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let mut reports = Vec::new();
    let mut name = String::new();
    for seed in cfg.seed_list() {
        let data = load_or_generate(cfg, seed)?;
        let p = prepare(cfg, &data, seed)?;
        let spec = cfg.model_spec_for(p.n_vars)?;
        name = spec.name();
        let dir = run.sub(&format!("seed-{seed}"))?;
        println!("training {name} with seed {seed}");
        let (_, report, metrics) = train_one(cfg, spec, &p, seed, &dir, true)?;
        println!(
            "seed {seed}: best epoch {} val {:.6}; test MSE {:.6} MAE {:.6}",
            report.best_epoch, report.best_val_loss, metrics.mse, metrics.mae
        );
        reports.push(metrics);
    }
    let table = format!("{}\n{}\n", table_header(), table_row(&name, &reports));
    print!("{table}");
    std::fs::write(run.path.join("summary.md"), table)?;
    Ok(())
}

fn eval(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let mut reports = Vec::new();
    let mut baseline = Vec::new();
    let units = units(cfg);
    for seed in cfg.seed_list() {
        let data = load_or_generate(cfg, seed)?;
        let p = prepare(cfg, &data, seed)?;
        let checkpoint = match &cfg.checkpoint {
            Some(path) => Checkpoint::load(path)?,
            None => {
                println!("no checkpoint given: evaluating a freshly initialized model");
                Checkpoint::new(Model::new(cfg.model_spec_for(p.n_vars)?, seed)?, Some(p.norm.clone()))
            }
        };
        let mut metrics = evaluate(&checkpoint, &p.raw_test, units)?;
        metrics.seed = Some(seed);
        let mut mean = evaluate(&Checkpoint::new(Model::mean(), Some(p.norm.clone())), &p.raw_test, units)?;
        mean.seed = Some(seed);
        println!("seed {seed}: {metrics}");
        println!("seed {seed} mean baseline: MSE {:.6} MAE {:.6}", mean.mse, mean.mae);
        write_json(&run.path.join(format!("metrics-seed{seed}.json")), &metrics)?;
        reports.push(metrics);
        baseline.push(mean);
    }
    let name = match &cfg.checkpoint {
        Some(_) => "checkpoint".to_string(),
        None => "untrained".to_string(),
    };
    let table = format!(
        "{}\n{}\n{}\n",
        table_header(),
        table_row(&name, &reports),
        table_row("mean", &baseline)
    );
    print!("{table}");
    std::fs::write(run.path.join("summary.md"), table)?;
    Ok(())
}

fn ablate(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let mut rows: Vec<(String, Vec<MetricsReport>)> = Variant::ALL
        .iter()
        .map(|v| (v.as_str().to_string(), Vec::new()))
        .collect();
    rows.push(("mean".into(), Vec::new()));
    for seed in cfg.seed_list() {
        let data = load_or_generate(cfg, seed)?;
        let p = prepare(cfg, &data, seed)?;
        for (i, variant) in Variant::ALL.into_iter().enumerate() {
            let dir = run.sub(&format!("seed-{seed}/{}", variant.as_str()))?;
            let spec = ModelSpec::Ait(cfg.ait_config(p.n_vars, variant));
            let (_, report, metrics) = train_one(cfg, spec, &p, seed, &dir, false)?;
            println!(
                "seed {seed} {:<10} best epoch {:>4}  test MSE {:.6}  MAE {:.6}",
                variant.as_str(),
                report.best_epoch,
                metrics.mse,
                metrics.mae
            );
            rows[i].1.push(metrics);
        }
        let mean_ck = Checkpoint::new(Model::mean(), Some(p.norm.clone()));
        rows[Variant::ALL.len()].1.push(evaluate(&mean_ck, &p.raw_test, units(cfg))?);
    }
    let mut table = table_header() + "\n";
    for (name, reports) in &rows {
        table += &table_row(name, reports);
        table += "\n";
    }
    print!("{table}");
    std::fs::write(run.path.join("ablation.md"), &table)?;
    let summary: Vec<_> = rows
        .iter()
        .map(|(name, r)| {
            serde_json::json!({
                "model": name,
                "mse": r.iter().map(|m| m.mse).collect::<Vec<_>>(),
                "mae": r.iter().map(|m| m.mae).collect::<Vec<_>>(),
                "mse_summary": Summary::of(&r.iter().map(|m| m.mse).collect::<Vec<_>>()),
            })
        })
        .collect();
    write_json(&run.path.join("ablation.json"), &summary)?;
    Ok(())
}

fn gradcheck(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let variant = cfg.variant()?;
    let gen = crate::data::GeneratorConfig {
        n_vars: cfg.gradcheck_vars,
        n_samples: cfg.gradcheck_samples,
        rate: 0.4,
        ..crate::data::GeneratorConfig::default()
    };
    let mut table = String::from("parameter\tnumel\trel_error\tstatus\n");
    let mut failed = Vec::new();
    for seed in cfg.seed_list() {
        let data = generate_synthetic(&gen, seed)?;
        let samples = fit_norm(&data).apply_dataset(&data).samples;
        let batch = crate::data::Batch::from_samples(&samples.iter().collect::<Vec<_>>());
        let ait = AiTConfig::small(cfg.gradcheck_vars, cfg.gradcheck_hidden, cfg.gradcheck_heads, cfg.gradcheck_blocks)
            .with_variant(variant);
        let model = Model::ait(ait, seed)?;
        let (_, ad) = model.loss_and_grad(&batch)?;
        let fd = finite_diff_grad(
            |p| model.loss_with(p, &batch).unwrap_or(f64::NAN),
            &model.params,
            cfg.gradcheck_step,
        );
        let report = compare_gradients(&ad, &fd, cfg.gradcheck_tol);
        println!("seed {seed}: {} parameters, tolerance {:e}", report.params.len(), report.tolerance);
        for p in &report.params {
            let status = if p.passed { "PASS" } else { "FAIL" };
            println!("  {:<28} {:>6}  {:.3e}  {status}", p.name, p.numel, p.rel_error);
            writeln!(table, "{}\t{}\t{:e}\t{status}", p.name, p.numel, p.rel_error).expect("string write");
            if !p.passed {
                failed.push(format!("seed {seed} {}", p.name));
            }
        }
    }
    std::fs::write(run.path.join("gradcheck.tsv"), table)?;
    if failed.is_empty() {
        println!("all parameters pass");
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn equiv_regular(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    if cfg.regular_l_in == 0 || cfg.regular_l_out == 0 {
        cfg.regular_l_in = 24;
        cfg.regular_l_out = 8;
    }
    cfg.missingness = 0.0;
    cfg.unobserved_fraction = 0.0;
    let (mut a_reports, mut s_reports) = (Vec::new(), Vec::new());
    let mut diffs = Vec::new();
    for seed in cfg.seed_list() {
        let data = load_or_generate(&cfg, seed)?;
        let p = prepare(&cfg, &data, seed)?;
        let (l_in, l_out) = (cfg.regular_l_in, cfg.regular_l_out);
        let a_spec = ModelSpec::RegularAlinear {
            d: cfg.alinear_d,
            l_in,
            l_out,
        };
        let s_spec = ModelSpec::StaticLinear { l_in, l_out };
        let (a, ra, ma) = train_one(&cfg, a_spec, &p, seed, &run.sub(&format!("seed-{seed}/alinear"))?, false)?;
        let (s, rs, ms) = train_one(&cfg, s_spec, &p, seed, &run.sub(&format!("seed-{seed}/static_linear"))?, false)?;
        let sample = p
            .test
            .get(cfg.sample)
            .ok_or_else(|| CliError::Config(format!("test split has no sample {}", cfg.sample)))?;
        let diff = weight_grids(&a, sample)?[0]
            .mean_abs_diff(&weight_grids(&s, sample)?[0])
            .unwrap_or(f64::NAN);
        export_weight_pair(&a, sample, Some(&s), &run.sub(&format!("seed-{seed}/weights"))?)?;
        println!(
            "seed {seed}: alinear MSE {:.6} (best epoch {})  static-linear MSE {:.6} (best epoch {})  mean |ΔW| {:.2e}",
            ma.mse, ra.best_epoch, ms.mse, rs.best_epoch, diff
        );
        a_reports.push(ma);
        s_reports.push(ms);
        diffs.push(diff);
    }
    let am = Summary::of(&a_reports.iter().map(|m| m.mse).collect::<Vec<_>>());
    let sm = Summary::of(&s_reports.iter().map(|m| m.mse).collect::<Vec<_>>());
    let rel = (am.mean - sm.mean).abs() / sm.mean;
    let table = format!(
        "{}\n{}\n{}\n\nrelative MSE difference: {:.3}%\nmean |W_alinear - W_static|: {:.3e}\n",
        table_header(),
        table_row("alinear_default", &a_reports),
        table_row("static_linear", &s_reports),
        100.0 * rel,
        Summary::of(&diffs).mean
    );
    print!("{table}");
    std::fs::write(run.path.join("equivalence.md"), table)?;
    Ok(())
}

fn export_weights(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("export-weights needs --checkpoint PATH".into()))?;
    let checkpoint = Checkpoint::load(path)?;
    let data = load_or_generate(cfg, cfg.seed)?;
    let parts = split(&data, cfg.ratios(), cfg.seed)?;
    let raw = parts
        .test
        .samples
        .get(cfg.sample)
        .ok_or_else(|| CliError::Config(format!("test split has no sample {}", cfg.sample)))?;
    let sample = match &checkpoint.norm {
        Some(norm) => norm.apply(raw),
        None => raw.clone(),
    };
    for p in export_weight_pair(&checkpoint.model, &sample, None, &run.path)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
