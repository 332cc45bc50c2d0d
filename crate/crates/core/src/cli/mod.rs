//! The `prokan` command line: synth, train, crossval, eval and gradcheck.
//!
//! Artifacts written under the configured output directory:
//!
//! | command   | files |
//! |-----------|-------|
//! | synth     | `manifest.json`, `case_NNN.pkvl`, `case_NNN.pkms` |
//! | train     | `checkpoint_final.json`, `checkpoint_best.json`, `epochs.jsonl`, `events.jsonl`, `train_summary.json` |
//! | crossval  | `crossval_report.json` |
//! | eval      | `eval_report.jsonl` |
//! | gradcheck | `gradcheck_report.json` |
//!
//! Exit status: 0 on success, 1 for configuration or usage errors, 2 for
//! runtime and data errors (including a failed gradient audit).

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{RunConfig, SEED_ENV};

use crate::checkpoint;
use crate::controller::{
    dense_metrics, run_progressive_training, stream_seed, HyperParams, LogEvent,
};
use crate::data::{
    generate_synthetic_cases, radius_for_feature_len, read_mask, read_volume, write_mask, write_volume, DenseCase,
    LabeledCase, SynthParams, TrainValData,
};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::network::ProKanNetwork;
use crate::spline::KnotVector;
use crate::training::{analytic_total_grads, gradient_check_against, GradCheckReport, LossConfig, Sample};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EPOCHS_LOG: &str = "epochs.jsonl";
pub const EVENTS_LOG: &str = "events.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.json";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.json";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const CROSSVAL_REPORT: &str = "crossval_report.json";
pub const EVAL_REPORT: &str = "eval_report.jsonl";
pub const GRADCHECK_REPORT: &str = "gradcheck_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: String,
    pub volume: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub generation: SynthParams,
    pub cases: Vec<ManifestEntry>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serialization cannot fail")
}

/// Writes `n_cases` volume/mask pairs plus a manifest under `output_dir`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let params = cfg.synth();
    let cases = generate_synthetic_cases(cfg.seed, &params)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let mut entries = Vec::with_capacity(cases.len());
    for case in &cases {
        let entry = ManifestEntry {
            case_id: case.case_id.clone(),
            volume: format!("{}.pkvl", case.case_id),
            mask: format!("{}.pkms", case.case_id),
        };
        write_volume(dir.join(&entry.volume), &case.volume)?;
        write_mask(dir.join(&entry.mask), &case.mask, case.volume.spacing())?;
        entries.push(entry);
    }
    let manifest = Manifest {
        seed: cfg.seed,
        generation: params,
        cases: entries,
    };
    write_text(&dir.join(MANIFEST_FILE), &to_json_pretty(&manifest))?;
    Ok(manifest)
}

/// Reads a dataset written by [`cmd_synth`], in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<LabeledCase>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::InvalidGeometry(format!("{}: {e}", path.display())))?;
    let cases = manifest
        .cases
        .iter()
        .map(|e| {
            let volume = read_volume(dir.join(&e.volume))?;
            let (mask, _) = read_mask(dir.join(&e.mask))?;
            if mask.dims() != volume.dims() {
                return Err(Error::DimsMismatch(volume.dims(), mask.dims()));
            }
            Ok(LabeledCase {
                case_id: e.case_id.clone(),
                volume,
                mask,
                lesions: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, cases))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub insertions: usize,
    pub final_blocks: usize,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub final_train_dice: f64,
    pub final_train_accuracy: f64,
    pub train_case_ids: Vec<String>,
    pub val_case_ids: Vec<String>,
}

/// Seeded hold-out split of case indices: `(train, val)`, both ascending.
pub fn holdout_split(n_cases: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_cases < 2 {
        return Err(Error::EmptyDataset);
    }
    let n_val = ((n_cases as f64 * val_fraction).round() as usize).clamp(1, n_cases - 1);
    let mut perm: Vec<usize> = (0..n_cases).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, 4)));
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

struct JsonLines {
    path: PathBuf,
    file: fs::File,
}

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self> {
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file })
    }

    fn push<T: Serialize>(&mut self, v: &T) -> Result<()> {
        let line = serde_json::to_string(v).expect("record serialization cannot fail");
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

/// Trains with progressive stacking on the dataset at `data_dir`.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let (_, cases) = load_dataset(data_dir)?;
    let (train_idx, val_idx) = holdout_split(cases.len(), cfg.val_fraction, cfg.seed)?;
    let train: Vec<&LabeledCase> = train_idx.iter().map(|&i| &cases[i]).collect();
    let val: Vec<&LabeledCase> = val_idx.iter().map(|&i| &cases[i]).collect();
    let data = TrainValData::build(&train, &val, cfg.patch_radius, cfg.samples_per_class, cfg.seed)?;

    let out = &cfg.output_dir;
    create_dir(out)?;
    let mut epochs_log = JsonLines::create(out.join(EPOCHS_LOG))?;
    let mut events_log = JsonLines::create(out.join(EVENTS_LOG))?;
    let mut log_err = None;
    let outcome = run_progressive_training(&data, &cfg.policy(), &cfg.model(), &cfg.loss(), cfg.seed, |ev| {
        let r = match ev {
            LogEvent::Epoch(r) => epochs_log.push(r),
            LogEvent::Insertion(e) => events_log.push(e),
        };
        if let Err(e) = r {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    checkpoint::save(out.join(FINAL_CHECKPOINT), &outcome.final_net)?;
    checkpoint::save(out.join(BEST_CHECKPOINT), &outcome.best_net)?;

    let train_dense: Vec<DenseCase> = train.iter().map(|c| DenseCase::new(c, cfg.patch_radius)).collect();
    let (final_train_accuracy, final_train_dice) = dense_metrics(&outcome.final_net, &train_dense)?;
    let summary = TrainSummary {
        epochs_run: outcome.epochs.len(),
        insertions: outcome.events.len(),
        final_blocks: outcome.final_net.num_blocks(),
        best_epoch: outcome.best_epoch,
        best_val_dice: outcome.best_val_dice,
        final_train_dice,
        final_train_accuracy,
        train_case_ids: train.iter().map(|c| c.case_id.clone()).collect(),
        val_case_ids: val.iter().map(|c| c.case_id.clone()).collect(),
    };
    write_text(&out.join(TRAIN_SUMMARY), &to_json_pretty(&summary))?;
    Ok(summary)
}

/// Dense inference on every case of the dataset followed by the metric suite.
pub fn evaluate_cases(net: &ProKanNetwork, cases: &[&LabeledCase]) -> Result<Vec<MetricReport>> {
    let radius = radius_for_feature_len(net.input_dim()).ok_or_else(|| {
        Error::InvalidNetwork(format!("input dim {} is not a cubic patch size", net.input_dim()))
    })?;
    cases
        .iter()
        .map(|c| {
            let dense = DenseCase::new(c, radius);
            let pred = dense.predict(net)?;
            MetricReport::compute(&c.case_id, &pred, &c.mask, c.volume.spacing())
        })
        .collect()
}

/// Evaluates a checkpoint on the dataset; writes `eval_report.jsonl` into
/// `out_dir` when given.
pub fn cmd_eval(checkpoint_path: &Path, data_dir: &Path, out_dir: Option<&Path>) -> Result<Vec<MetricReport>> {
    let net = checkpoint::load(checkpoint_path)?;
    let (_, cases) = load_dataset(data_dir)?;
    let refs: Vec<&LabeledCase> = cases.iter().collect();
    let reports = evaluate_cases(&net, &refs)?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        let mut log = JsonLines::create(dir.join(EVAL_REPORT))?;
        for r in &reports {
            log.push(r)?;
        }
    }
    Ok(reports)
}

/// Per-fold metric means; `None` when no case in the fold defines the metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub accuracy: f64,
    pub dice: Option<f64>,
    pub miou: Option<f64>,
    pub hd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    pub val_case_ids: Vec<String>,
    #[serde(flatten)]
    pub metrics: FoldMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub k: usize,
    pub folds: Vec<FoldRow>,
    pub mean: FoldMetrics,
    pub std: FoldMetrics,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
fn std_of(values: &[f64]) -> Option<f64> {
    let m = mean_of(values.iter().copied())?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

fn summarize(reports: &[MetricReport]) -> FoldMetrics {
    FoldMetrics {
        accuracy: mean_of(reports.iter().map(|r| r.accuracy)).unwrap_or(f64::NAN),
        dice: mean_of(reports.iter().filter_map(|r| r.dice)),
        miou: mean_of(reports.iter().filter_map(|r| r.miou)),
        hd: mean_of(reports.iter().filter_map(|r| r.hd)),
    }
}

fn aggregate(rows: &[FoldRow], f: impl Fn(&[f64]) -> Option<f64>) -> FoldMetrics {
    let col = |g: &dyn Fn(&FoldMetrics) -> Option<f64>| -> Vec<f64> {
        rows.iter().filter_map(|r| g(&r.metrics)).collect()
    };
    FoldMetrics {
        accuracy: f(&col(&|m| Some(m.accuracy))).unwrap_or(f64::NAN),
        dice: f(&col(&|m| m.dice)),
        miou: f(&col(&|m| m.miou)),
        hd: f(&col(&|m| m.hd)),
    }
}

/// k-fold cross-validation over cases. Each fold trains an independent
/// model with its held-out fold as the validation split and reports the
/// best-validation checkpoint's metrics on that fold.
pub fn cmd_crossval(cfg: &RunConfig, data_dir: &Path, k: usize) -> Result<CrossvalReport> {
    cfg.validate()?;
    let (_, cases) = load_dataset(data_dir)?;
    let folds = crate::data::kfold_split(cases.len(), k, stream_seed(cfg.seed, 5))?;
    let mut rows = Vec::with_capacity(k);
    for (fold, (train_idx, val_idx)) in folds.iter().enumerate() {
        let train: Vec<&LabeledCase> = train_idx.iter().map(|&i| &cases[i]).collect();
        let val: Vec<&LabeledCase> = val_idx.iter().map(|&i| &cases[i]).collect();
        let fold_seed = stream_seed(cfg.seed, 100 + fold as u64);
        let data = TrainValData::build(&train, &val, cfg.patch_radius, cfg.samples_per_class, fold_seed)?;
        let outcome = run_progressive_training(&data, &cfg.policy(), &cfg.model(), &cfg.loss(), fold_seed, |_| {})?;
        let reports = evaluate_cases(&outcome.best_net, &val)?;
        rows.push(FoldRow {
            fold: fold + 1,
            val_case_ids: val.iter().map(|c| c.case_id.clone()).collect(),
            metrics: summarize(&reports),
        });
    }
    let report = CrossvalReport {
        k,
        mean: aggregate(&rows, |v| mean_of(v.iter().copied())),
        std: aggregate(&rows, std_of),
        folds: rows,
    };
    create_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join(CROSSVAL_REPORT), &to_json_pretty(&report))?;
    Ok(report)
}

/// Renders a cross-validation report as a fold/metric table.
pub fn format_crossval_table(report: &CrossvalReport) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut s = format!("{:<8} {:>10} {:>8} {:>8} {:>8}\n", "Fold", "Accuracy", "Dice", "mIoU", "HD");
    let mut line = |name: &str, m: &FoldMetrics| {
        s.push_str(&format!(
            "{:<8} {:>10.4} {:>8} {:>8} {:>8}\n",
            name,
            m.accuracy,
            opt(m.dice),
            opt(m.miou),
            opt(m.hd)
        ));
    };
    for r in &report.folds {
        line(&r.fold.to_string(), &r.metrics);
    }
    line("mean", &report.mean);
    line("std", &report.std);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub grid_size: usize,
    pub degree: usize,
    pub blocks: usize,
    pub parameters: usize,
    #[serde(flatten)]
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub rows: Vec<GradcheckRow>,
    pub worst_relative_error: f64,
    pub passed: bool,
}

pub const GRADCHECK_GRIDS: [usize; 2] = [3, 5];
pub const GRADCHECK_DEGREES: [usize; 3] = [1, 2, 3];
pub const GRADCHECK_BLOCKS: [usize; 3] = [1, 2, 3];
const GRADCHECK_INPUT_DIM: usize = 4;
const GRADCHECK_WIDTH: usize = 4;
const GRADCHECK_BATCH: usize = 4;

/// Seeded toy network with every coefficient randomised, grown to `blocks`
/// blocks at a fixed `(G, k)`.
pub fn gradcheck_network(grid_size: usize, degree: usize, blocks: usize, seed: u64) -> Result<ProKanNetwork> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let knots = KnotVector::uniform(-1.0, 1.0, grid_size, degree)?;
    let mut net = ProKanNetwork::new(GRADCHECK_INPUT_DIM, GRADCHECK_WIDTH, &knots, 0.5, &mut rng)?;
    for b in 1..blocks {
        let hp = HyperParams {
            block_index: b,
            grid_size,
            degree,
            learning_rate: 1.0,
            l2_lambda: 0.0,
        };
        net.insert_block(&hp, blocks)?;
    }
    for layer in net.layers_mut() {
        for c in layer.coefficients_mut() {
            *c = rng.random_range(-0.5..=0.5);
        }
    }
    Ok(net)
}

/// Runs the gradient audit over every `(G, k, blocks)` cell. With
/// `inject_fault`, one analytic gradient entry per cell is corrupted so the
/// audit must fail.
pub fn cmd_gradcheck(cfg: &RunConfig, inject_fault: bool) -> Result<GradcheckSummary> {
    cfg.validate()?;
    let loss = cfg.loss();
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &g in &GRADCHECK_GRIDS {
        for &k in &GRADCHECK_DEGREES {
            for &b in &GRADCHECK_BLOCKS {
                let seed = stream_seed(cfg.seed, 200 + cell);
                cell += 1;
                let net = gradcheck_network(g, k, b, seed)?;
                let samples = gradcheck_samples(seed);
                rows.push(GradcheckRow {
                    grid_size: g,
                    degree: k,
                    blocks: b,
                    parameters: net.count_parameters(),
                    report: audit(&net, &samples, &loss, cfg, seed, inject_fault)?,
                });
            }
        }
    }
    let worst = rows.iter().map(|r| r.report.max_relative_error).fold(0.0, f64::max);
    let summary = GradcheckSummary {
        passed: rows.iter().all(|r| r.report.passed),
        worst_relative_error: worst,
        rows,
    };
    create_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join(GRADCHECK_REPORT), &to_json_pretty(&summary))?;
    Ok(summary)
}

fn gradcheck_samples(seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    (0..GRADCHECK_BATCH)
        .map(|i| Sample {
            features: (0..GRADCHECK_INPUT_DIM).map(|_| rng.random_range(-0.95..0.95)).collect(),
            target: (i % 2) as f64,
        })
        .collect()
}

fn audit(
    net: &ProKanNetwork,
    samples: &[Sample],
    loss: &LossConfig,
    cfg: &RunConfig,
    seed: u64,
    inject_fault: bool,
) -> Result<GradCheckReport> {
    let batch: Vec<&Sample> = samples.iter().collect();
    let mut grads = analytic_total_grads(net, &batch, loss, cfg.l2_lambda)?;
    if inject_fault {
        grads.layers[0][0] += 1.0;
    }
    gradient_check_against(
        net,
        &batch,
        loss,
        cfg.l2_lambda,
        cfg.gradcheck_step,
        cfg.gradcheck_tolerance,
        seed,
        &grads,
    )
}

#[derive(Debug, Parser)]
#[command(name = "prokan", version, about = "Progressive spline-KAN training and segmentation evaluation")]
pub struct Cli {
    /// TOML configuration file with RunConfig keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set max_epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth,
    /// Train with progressive block stacking.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// k-fold cross-validation.
    Crossval {
        #[arg(long)]
        data: PathBuf,
        /// Number of folds (defaults to the `folds` config key).
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference audit of the backward pass.
    Gradcheck {
        /// Corrupt one analytic gradient per cell (the audit must then fail).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

impl Cli {
    fn config(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(out) = &self.out {
            overrides.push(format!("output_dir={}", toml::Value::String(out.display().to_string())));
        }
        let env_seed = std::env::var(SEED_ENV).ok();
        RunConfig::load(self.config.as_deref(), &overrides, env_seed.as_deref())
    }
}

/// Parses `args` and runs the selected command; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Synth => {
            let cfg = cli.config()?;
            let m = cmd_synth(&cfg)?;
            println!("wrote {} cases to {}", m.cases.len(), cfg.output_dir.display());
        }
        Command::Train { data } => {
            let cfg = cli.config()?;
            let s = cmd_train(&cfg, data)?;
            println!("{}", to_json_pretty(&s));
        }
        Command::Crossval { data, folds } => {
            let cfg = cli.config()?;
            let r = cmd_crossval(&cfg, data, folds.unwrap_or(cfg.folds))?;
            print!("{}", format_crossval_table(&r));
        }
        Command::Eval { checkpoint, data } => {
            let out = match (&cli.config, cli.overrides.is_empty(), &cli.out) {
                (None, true, None) => None,
                _ => Some(cli.config()?.output_dir),
            };
            for r in cmd_eval(checkpoint, data, out.as_deref())? {
                println!("{}", serde_json::to_string(&r).expect("report serialization cannot fail"));
            }
        }
        Command::Gradcheck { inject_fault } => {
            let cfg = cli.config()?;
            let s = cmd_gradcheck(&cfg, *inject_fault)?;
            println!("{:>3} {:>3} {:>6} {:>7} {:>14} {:>6}", "G", "k", "blocks", "params", "max_rel_err", "pass");
            for r in &s.rows {
                println!(
                    "{:>3} {:>3} {:>6} {:>7} {:>14.3e} {:>6}",
                    r.grid_size, r.degree, r.blocks, r.parameters, r.report.max_relative_error, r.report.passed
                );
            }
            println!("worst relative error: {:.3e}", s.worst_relative_error);
            if !s.passed {
                return Ok(EXIT_RUNTIME);
            }
        }
    }
    Ok(EXIT_OK)
}
