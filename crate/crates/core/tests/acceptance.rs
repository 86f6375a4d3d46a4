//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Criterion 4 trains the full default model
//! through the CLI, so this target takes about a minute on one core.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use ndarray::{array, Array2};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wignernet::dataset::{load_dataset, save_dataset};
use wignernet::experiments::{hbar_sweep, phase_space_grids, PhaseSpaceSpec, SweepSpec};
use wignernet::mlp::{grad_check, init_model, load_model, save_model, ArchitectureSpec, MlpModel};
use wignernet::oracle::{
    classical_rk4, evolve, evolve_mean, evolve_widths, wigner_grid, GaussianWigner, GridSpec,
    InitialState, OscillatorConfig,
};
use wignernet::AnalyticEmulator;

const BIN: &str = env!("CARGO_BIN_EXE_wignernet");
const REPORTED_TRAIN_LOSS: f64 = 0.0390;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN)
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`wignernet {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn summary_value(text: &str, key: &str) -> Result<f64, String> {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .ok_or_else(|| format!("missing {key}"))?
        .parse()
        .map_err(|e| format!("{key}: {e}"))
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn oracle_exactness() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pos = Uniform::new(0.2, 5.0).unwrap();
    let mean = Uniform::new(-5.0, 5.0).unwrap();
    let width = Uniform::new(0.5, 2.0).unwrap();
    let log_h = Uniform::new(-6.0, 0.0).unwrap();
    let time = Uniform::new(0.0, 20.0).unwrap();
    let mut worst = 0.0f64;
    let mut track =
        |a: f64, b: f64| worst = worst.max((a - b).abs() / (1.0 + a.abs().max(b.abs())));

    for _ in 0..1000 {
        let cfg = OscillatorConfig::new(
            pos.sample(&mut rng),
            pos.sample(&mut rng),
            time.sample(&mut rng),
        )
        .unwrap();
        let hbar = 10f64.powf(log_h.sample(&mut rng));
        let s = InitialState::new(
            mean.sample(&mut rng),
            mean.sample(&mut rng),
            width.sample(&mut rng),
            hbar,
        )
        .unwrap();
        let mw = cfg.m_omega();

        let (xt, pt) = evolve_mean(&cfg, &s);
        track(
            s.p0.powi(2) + (mw * s.x0).powi(2),
            pt.powi(2) + (mw * xt).powi(2),
        );

        let later = evolve(&cfg.with_time(cfg.t + 2.0 * PI / cfg.omega), &s);
        for (a, b) in evolve(&cfg, &s).to_array().iter().zip(later.to_array()) {
            track(*a, b);
        }

        let w = evolve_widths(&cfg, &s);
        track(w.sigma_pt, mw * w.sigma_xt);

        let coherent = InitialState {
            sigma_x0: (hbar / (2.0 * mw)).sqrt(),
            ..s
        };
        track(evolve_widths(&cfg, &coherent).sigma_xt, coherent.sigma_x0);
    }

    let cfg = OscillatorConfig::default();
    let mut rk_worst = 0.0f64;
    for _ in 0..1000 {
        let (x0, p0) = (mean.sample(&mut rng), mean.sample(&mut rng));
        let s = InitialState::new(x0, p0, 1.0, 1.0).unwrap();
        let (xa, pa) = evolve_mean(&cfg, &s);
        let (xn, pn) = classical_rk4(&cfg, x0, p0, 20_000).map_err(|e| e.to_string())?;
        rk_worst = rk_worst.max((xa - xn).abs()).max((pa - pn).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && rk_worst <= 1e-9,
        format!("max invariant deviation {worst:.1e}, RK4 deviation {rk_worst:.1e} ({secs:.2}s)"),
        format!("invariant deviation {worst:.1e}, RK4 deviation {rk_worst:.1e}, bound 1e-9"),
    )
}

fn wigner_normalization() -> Outcome {
    let s = InitialState::new(0.0, 0.0, 1.3, 0.2).unwrap();
    let w = GaussianWigner::initial(&s);
    let (hx, hp) = (8.0 * w.sigma_x, 8.0 * w.sigma_p);
    let grid = GridSpec {
        x_min: -hx,
        x_max: hx,
        p_min: -hp,
        p_max: hp,
        n: 400,
    };
    let g = wigner_grid(&w, &grid).map_err(|e| e.to_string())?;
    let mass_err = (g.trapezoid_mass() - 1.0).abs();
    let marginal_err = g
        .xs
        .iter()
        .zip(g.position_marginal())
        .map(|(x, m)| {
            let exact = (-0.5 * (x / w.sigma_x).powi(2)).exp() / (w.sigma_x * (2.0 * PI).sqrt());
            (m - exact).abs()
        })
        .fold(0.0, f64::max);
    check(
        mass_err <= 1e-6 && marginal_err <= 1e-6,
        format!("mass error {mass_err:.1e}, marginal error {marginal_err:.1e}"),
        format!("mass error {mass_err:.1e}, marginal error {marginal_err:.1e}, bound 1e-6"),
    )
}

fn gradient_correctness() -> Outcome {
    let spec = ArchitectureSpec {
        hidden_dims: vec![8],
        ..ArchitectureSpec::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let m = init_model(&spec, seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let u = Uniform::new(-2.0, 2.0).unwrap();
        let x = Array2::from_shape_simple_fn((16, 4), || u.sample(&mut rng));
        let y = Array2::from_shape_simple_fn((16, 4), || u.sample(&mut rng));
        let r = grad_check(&m, x.view(), y.view(), 1e-4).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error);
    }
    check(
        worst <= 1e-5,
        format!("max relative error {worst:.1e} over 10 models"),
        format!("max relative error {worst:.1e} > 1e-5"),
    )
}

fn training_loss(summary: &str, elapsed: f64) -> Outcome {
    let train = summary_value(summary, "final_train_loss")?;
    let stopped = summary_value(summary, "stopped_epoch")?;
    let ratio = train / REPORTED_TRAIN_LOSS;
    check(
        train <= 0.1 && elapsed <= 900.0,
        format!(
            "final train MSE {train:.4} (reported 0.0390, ratio {ratio:.2}), {stopped} epochs in {elapsed:.0}s"
        ),
        format!("final train MSE {train:.4} (bound 0.1), {elapsed:.0}s (bound 900s)"),
    )
}

fn emulator_fidelity(summary: &str, sweep_csv: &str, trained: (f64, f64)) -> Outcome {
    let train = summary_value(summary, "final_train_loss")?;
    let test = summary_value(summary, "test_loss")?;
    let mut rel = Vec::new();
    for line in sweep_csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let hbar: f64 = cols[0].parse().map_err(|e| format!("{e}"))?;
        if hbar < trained.0 || hbar > trained.1 {
            continue;
        }
        let r: f64 = cols[3]
            .parse()
            .map_err(|_| format!("no prediction at hbar={hbar}"))?;
        rel.push(r);
    }
    if rel.is_empty() {
        return Err("no sweep points inside the trained range".into());
    }
    rel.sort_by(f64::total_cmp);
    let median = if rel.len() % 2 == 1 {
        rel[rel.len() / 2]
    } else {
        0.5 * (rel[rel.len() / 2 - 1] + rel[rel.len() / 2])
    };
    check(
        test <= 3.0 * train && median <= 0.10,
        format!("test MSE {test:.2e} vs train {train:.2e}; median sweep rel. error {:.2}% over {} points", 100.0 * median, rel.len()),
        format!("test MSE {test:.2e} (bound {:.2e}); median rel. error {:.2}% (bound 10%)", 3.0 * train, 100.0 * median),
    )
}

fn classical_limit(model: &MlpModel) -> Outcome {
    let oracle = AnalyticEmulator {
        config: OscillatorConfig::default(),
    };
    let sweep = hbar_sweep(&oracle, &SweepSpec::default()).map_err(|e| e.to_string())?;
    let increasing = sweep
        .windows(2)
        .all(|w| w[1].sigma_xt_analytical > w[0].sigma_xt_analytical);

    let probe = array![[1.0, 0.0, 1.0, 0.01], [1.0, 0.0, 1.0, 1.0]];
    let pred = model.predict(probe.view()).map_err(|e| e.to_string())?;
    let (small, large) = (pred[[0, 2]], pred[[1, 2]]);

    let grids =
        phase_space_grids(&oracle, &PhaseSpaceSpec::default()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for g in grids {
        let g = g.map_err(|e| e.to_string())?;
        worst = worst.max((g.center_value * PI * g.hbar - 1.0).abs());
    }
    check(
        increasing && small < large && worst <= 1e-9,
        format!("analytic sweep increasing; predicted sigma_x {small:.4} (hbar 0.01) < {large:.4} (hbar 1); peak*pi*hbar deviation {worst:.1e}"),
        format!("increasing={increasing}; predicted sigma_x {small:.4} vs {large:.4}; peak deviation {worst:.1e}"),
    )
}

const SMALL_CONFIG: &str =
    "[dataset]\nn = 1000\n[model]\nhidden_dims = [32, 32]\n[train]\nmax_epochs = 30\n";
const PIPELINE_FILES: [&str; 10] = [
    "dataset.csv",
    "splits.csv",
    "model.txt",
    "train_history.csv",
    "train_summary.txt",
    "eval.csv",
    "sweep.csv",
    "phasespace_hbar_1p00e0.csv",
    "phasespace_hbar_1p00e-1.csv",
    "phasespace_hbar_1p00e-2.csv",
];

fn run_pipeline(dir: &Path, config: &Path) -> Result<(), String> {
    let cfg = config.to_str().unwrap();
    for step in ["generate", "train", "eval", "sweep", "phasespace"] {
        cli(dir, &["--config", cfg, "--seed", "11", step])?;
    }
    Ok(())
}

fn determinism(default_dir: &Path) -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = root.path().join("small.toml");
    fs::write(&config, SMALL_CONFIG).map_err(|e| e.to_string())?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    run_pipeline(&a, &config)?;
    run_pipeline(&b, &config)?;
    for f in PIPELINE_FILES {
        if fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok() {
            return Err(format!("{f} differs between identical runs"));
        }
    }

    let ds = load_dataset(&default_dir.join("dataset.csv")).map_err(|e| e.to_string())?;
    let ds_copy = root.path().join("dataset_copy.csv");
    save_dataset(&ds, &ds_copy).map_err(|e| e.to_string())?;
    if load_dataset(&ds_copy).map_err(|e| e.to_string())? != ds {
        return Err("dataset round-trip changed values".into());
    }
    let model_path = default_dir.join("model.txt");
    let model = load_model(&model_path).map_err(|e| e.to_string())?;
    let model_copy = root.path().join("model_copy.txt");
    save_model(&model, &model_copy).map_err(|e| e.to_string())?;
    if fs::read(&model_path).ok() != fs::read(&model_copy).ok() {
        return Err("model save/load/save is not byte-identical".into());
    }
    Ok(format!(
        "{} pipeline files identical across runs; dataset and model round-trips exact",
        PIPELINE_FILES.len()
    ))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 oracle exactness", oracle_exactness()),
        ("2 wigner normalization", wigner_normalization()),
        ("3 gradient correctness", gradient_correctness()),
    ];

    let work = tempfile::tempdir().expect("temp dir");
    let dir = work.path();
    let started = Instant::now();
    let pipeline = cli(dir, &["generate"]).and_then(|_| cli(dir, &["train"]));
    let elapsed = started.elapsed().as_secs_f64();
    let pipeline = pipeline
        .and_then(|_| cli(dir, &["sweep"]))
        .and_then(|_| cli(dir, &["phasespace"]))
        .and_then(|_| {
            Ok((
                read(&dir.join("train_summary.txt"))?,
                read(&dir.join("sweep.csv"))?,
            ))
        });

    match pipeline {
        Ok((summary, sweep)) => {
            results.push(("4 training loss", training_loss(&summary, elapsed)));
            let ds = load_dataset(&dir.join("dataset.csv"));
            let trained = ds
                .map(|d| d.ranges.hbar_range())
                .map(|r| (r.min, r.max))
                .map_err(|e| e.to_string());
            results.push((
                "5 emulator fidelity",
                trained.and_then(|t| emulator_fidelity(&summary, &sweep, t)),
            ));
            let model = load_model(&dir.join("model.txt")).map_err(|e| e.to_string());
            results.push(("6 classical limit", model.and_then(|m| classical_limit(&m))));
        }
        Err(e) => {
            for name in [
                "4 training loss",
                "5 emulator fidelity",
                "6 classical limit",
            ] {
                results.push((name, Err(e.clone())));
            }
        }
    }
    results.push(("7 determinism and round-trips", determinism(dir)));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
