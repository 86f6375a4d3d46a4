use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wignernet::config::RunConfig;
use wignernet::dataset::{self, Dataset, Interval};
use wignernet::emulator::{AnalyticEmulator, Emulator};
use wignernet::experiments;
use wignernet::mlp;
use wignernet::trainer;

const DATASET_FILE: &str = "dataset.csv";
const SPLITS_FILE: &str = "splits.csv";
const MODEL_FILE: &str = "model.txt";
const HISTORY_FILE: &str = "train_history.csv";
const SUMMARY_FILE: &str = "train_summary.txt";
const EVAL_FILE: &str = "eval.csv";
const SWEEP_FILE: &str = "sweep.csv";
const SWEEP_SUMMARY_FILE: &str = "sweep_summary.txt";

/// Train a network to emulate harmonic-oscillator Wigner dynamics and run
/// the ħ experiments.
#[derive(Debug, Parser)]
#[command(name = "wignernet", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides every seed (dataset, split, init, shuffle).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset CSV (default: <out-dir>/dataset.csv).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Split CSV (default: <out-dir>/splits.csv).
    #[arg(long, global = true)]
    splits: Option<PathBuf>,
    /// Model file (default: <out-dir>/model.txt).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample initial states, label them with the closed form and split 80/10/10.
    Generate {
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the network on the generated dataset.
    Train {
        /// Epoch cap.
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Epochs without validation improvement before stopping.
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Print every epoch instead of every tenth.
        #[arg(long)]
        verbose: bool,
    },
    /// Test-split MSE of the trained model.
    Eval {
        /// Use the closed-form oracle instead of the model.
        #[arg(long)]
        oracle: bool,
    },
    /// Predicted vs analytical position width over the ħ sweep.
    Sweep {
        /// Use the closed-form oracle instead of the model.
        #[arg(long)]
        oracle: bool,
    },
    /// Predicted Wigner function on a phase-space grid, one file per ħ.
    Phasespace {
        /// Use the closed-form oracle instead of the model.
        #[arg(long)]
        oracle: bool,
    },
}

struct Paths {
    out_dir: PathBuf,
    dataset: PathBuf,
    splits: PathBuf,
    model: PathBuf,
}

impl Paths {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn resolve(common: &Common) -> Result<(RunConfig, Paths)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.dataset.seed = seed;
        cfg.dataset.split_seed = seed;
        cfg.model.init_seed = seed;
        cfg.train.shuffle_seed = seed;
    }
    let out_dir = cfg.out_dir.clone();
    let paths = Paths {
        dataset: common
            .dataset
            .clone()
            .unwrap_or_else(|| out_dir.join(DATASET_FILE)),
        splits: common
            .splits
            .clone()
            .unwrap_or_else(|| out_dir.join(SPLITS_FILE)),
        model: common
            .model
            .clone()
            .unwrap_or_else(|| out_dir.join(MODEL_FILE)),
        out_dir,
    };
    Ok((cfg, paths))
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn load_emulator(oracle: bool, cfg: &RunConfig, paths: &Paths) -> Result<Box<dyn Emulator>> {
    if oracle {
        Ok(Box::new(AnalyticEmulator::new(cfg.oscillator)))
    } else {
        let model = mlp::load_model(&paths.model)
            .with_context(|| format!("loading model {}", paths.model.display()))?;
        Ok(Box::new(model))
    }
}

fn cmd_generate(mut cfg: RunConfig, paths: &Paths, n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        cfg.dataset.n = n;
    }
    cfg.validate()?;
    ensure_out_dir(&paths.out_dir)?;
    let ds = dataset::generate(
        &cfg.oscillator,
        &cfg.sampling,
        cfg.dataset.n,
        cfg.dataset.seed,
    )?;
    let splits = dataset::split(ds.len(), cfg.dataset.split_seed)?;
    dataset::save_dataset(&ds, &paths.dataset)?;
    dataset::save_splits(&splits, &paths.splits)?;

    let names = dataset::DATASET_HEADER.split(',');
    let columns = ds.inputs.columns().into_iter().chain(ds.targets.columns());
    println!("rows: {}", ds.len());
    for (name, col) in names.zip(columns) {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("  {name:>9}: min {lo:.6e}  max {hi:.6e}");
    }
    let clamped = ds.clamped_rows();
    println!(
        "negative-variance rows (abs applied): {clamped} ({:.3}%)",
        100.0 * clamped as f64 / ds.len() as f64
    );
    let (tr, va, te) = splits.sizes();
    println!("splits: train {tr}, val {va}, test {te}");
    println!(
        "wrote {} and {}",
        paths.dataset.display(),
        paths.splits.display()
    );
    Ok(())
}

fn load_data(paths: &Paths) -> Result<(Dataset, dataset::SplitIndices)> {
    let ds = dataset::load_dataset(&paths.dataset)
        .with_context(|| format!("loading dataset {}", paths.dataset.display()))?;
    let splits = dataset::load_splits(&paths.splits)
        .with_context(|| format!("loading splits {}", paths.splits.display()))?;
    dataset::validate_splits(&splits, ds.len())?;
    Ok((ds, splits))
}

fn cmd_train(cfg: RunConfig, paths: &Paths, verbose: bool) -> Result<()> {
    cfg.validate()?;
    ensure_out_dir(&paths.out_dir)?;
    let (ds, splits) = load_data(paths)?;
    let model = mlp::init_model(&cfg.model.architecture(), cfg.model.init_seed)?;
    println!(
        "training {} parameters on {} rows (batch {}, lr {}, patience {})",
        model.parameter_count(),
        splits.train.len(),
        cfg.train.batch_size,
        cfg.train.learning_rate,
        cfg.train.early_stop_patience
    );
    let start = Instant::now();
    let (model, report) = trainer::train_with_progress(model, &ds, &splits, &cfg.train, |s| {
        if verbose || s.epoch == 1 || s.epoch % 10 == 0 {
            eprintln!(
                "epoch {:>4}  train {:.6e}  val {:.6e}  best {}",
                s.epoch, s.train_loss, s.val_loss, s.best_epoch
            );
        }
    })?;
    mlp::save_model(&model, &paths.model)?;
    report.save(&paths.out(HISTORY_FILE), &paths.out(SUMMARY_FILE))?;
    println!(
        "stopped at epoch {} (best {}, {}) after {:.1}s",
        report.stopped_epoch,
        report.best_epoch,
        if report.early_stopped {
            "early stop"
        } else {
            "epoch budget"
        },
        start.elapsed().as_secs_f64()
    );
    println!("final train loss {:.6e}", report.final_train_loss);
    println!("final val loss   {:.6e}", report.final_val_loss);
    println!("test loss        {:.6e}", report.test_loss);
    println!("wrote {}", paths.model.display());
    Ok(())
}

fn cmd_eval(cfg: RunConfig, paths: &Paths, oracle: bool) -> Result<()> {
    ensure_out_dir(&paths.out_dir)?;
    let (ds, splits) = load_data(paths)?;
    let cfg = RunConfig {
        oscillator: ds.config,
        ..cfg
    };
    let emulator = load_emulator(oracle, &cfg, paths)?;
    let eval = trainer::evaluate(emulator.as_ref(), &ds, &splits.test)?;
    let names = ["xt", "pt", "sigma_xt", "sigma_pt"];
    let mut csv = String::from("metric,value\n");
    csv.push_str(&format!("total_mse,{:.16e}\n", eval.total_mse));
    println!("test MSE {:.6e}", eval.total_mse);
    for (name, v) in names.iter().zip(&eval.per_output) {
        csv.push_str(&format!("mse_{name},{v:.16e}\n"));
        println!("  {name:>8}: {v:.6e}");
    }
    write(&paths.out(EVAL_FILE), csv)
}

/// ħ interval covered by the training data, from the dataset header when
/// available.
fn trained_hbar_range(cfg: &RunConfig, paths: &Paths) -> Interval {
    match dataset::load_dataset(&paths.dataset) {
        Ok(ds) => ds.ranges.hbar_range(),
        Err(e) => {
            eprintln!("note: {e}; using the configured sampling range as the trained hbar range");
            cfg.sampling.hbar_range()
        }
    }
}

fn cmd_sweep(cfg: RunConfig, paths: &Paths, oracle: bool) -> Result<()> {
    cfg.validate()?;
    ensure_out_dir(&paths.out_dir)?;
    let emulator = load_emulator(oracle, &cfg, paths)?;
    let spec = cfg.sweep_spec();
    let points = experiments::hbar_sweep(emulator.as_ref(), &spec)?;
    experiments::write_sweep_csv(&points, &paths.out(SWEEP_FILE))?;
    for p in points.iter().filter(|p| p.sigma_xt_pred.is_none()) {
        eprintln!(
            "hbar={:.3e}: non-positive predicted width, recorded as missing",
            p.hbar
        );
    }
    let trained = trained_hbar_range(&cfg, paths);
    let report = experiments::summarize_sweep(&points, trained);
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
    let summary = format!(
        "trained_hbar_min={:.6e}\ntrained_hbar_max={:.6e}\nin_range_points={}\nmissing_points={}\nmax_rel_err={}\nmedian_rel_err={}\nextrapolation_decreasing={}\n",
        trained.min,
        trained.max,
        report.in_range_points,
        report.missing_points,
        fmt(report.max_rel_err),
        fmt(report.median_rel_err),
        report
            .extrapolation_decreasing
            .map_or("n/a".to_string(), |b| b.to_string()),
    );
    print!("{summary}");
    write(&paths.out(SWEEP_SUMMARY_FILE), summary)?;
    println!("wrote {}", paths.out(SWEEP_FILE).display());
    Ok(())
}

fn cmd_phasespace(cfg: RunConfig, paths: &Paths, oracle: bool) -> Result<()> {
    cfg.validate()?;
    ensure_out_dir(&paths.out_dir)?;
    let emulator = load_emulator(oracle, &cfg, paths)?;
    let results = experiments::phase_space_grids(emulator.as_ref(), &cfg.phase_space_spec())?;
    let mut failures = 0;
    for (hbar, result) in cfg.phasespace.hbar_values.iter().zip(results) {
        match result {
            Ok(r) => {
                let path = paths.out(&experiments::phase_space_file_name(*hbar));
                experiments::write_phase_space_csv(&r, &path)?;
                let (px, pp) = r.peak_location();
                println!(
                    "hbar={hbar:.2e}: center ({:.4}, {:.4}) widths ({:.4}, {:.4}) peak {:.4e} at ({px:.3}, {pp:.3}) -> {}",
                    r.predicted.xt,
                    r.predicted.pt,
                    r.predicted.sigma_xt,
                    r.predicted.sigma_pt,
                    r.peak_value,
                    path.display()
                );
            }
            Err(e) => {
                eprintln!("{e}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        bail!("{failures} phase-space grid(s) had degenerate predictions");
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (mut cfg, paths) = resolve(&cli.common)?;
    match cli.command {
        Command::Generate { n } => cmd_generate(cfg, &paths, n),
        Command::Train {
            max_epochs,
            batch_size,
            patience,
            learning_rate,
            verbose,
        } => {
            if let Some(v) = max_epochs {
                cfg.train.max_epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = patience {
                cfg.train.early_stop_patience = v;
            }
            if let Some(v) = learning_rate {
                cfg.train.learning_rate = v;
            }
            cmd_train(cfg, &paths, verbose)
        }
        Command::Eval { oracle } => cmd_eval(cfg, &paths, oracle),
        Command::Sweep { oracle } => cmd_sweep(cfg, &paths, oracle),
        Command::Phasespace { oracle } => cmd_phasespace(cfg, &paths, oracle),
    }
}
