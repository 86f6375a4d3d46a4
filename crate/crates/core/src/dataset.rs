//! Sampling of initial conditions, oracle labelling, 80/10/10 splits and the
//! CSV storage format.
//!
//! Dataset file layout:
//!
//! ```text
//! # m=1.0000000000000000e0
//! # omega=1.0000000000000000e0
//! # t=5.0000000000000000e0
//! # seed=42
//! # x0_range=-5.0000000000000000e0,5.0000000000000000e0
//! # p0_range=...
//! # sigma_x0_range=...
//! # hbar_log10_range=...
//! x0,p0,sigma_x0,hbar,xt,pt,sigma_xt,sigma_pt
//! <8 values per row, 17 significant digits>
//! ```
//!
//! The split file is `index,split` with `split` one of `train`, `val`, `test`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{self, InitialState, OscillatorConfig};

pub const DATASET_HEADER: &str = "x0,p0,sigma_x0,hbar,xt,pt,sigma_xt,sigma_pt";
pub const SPLIT_HEADER: &str = "index,split";

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min <= v && v <= self.max
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::invalid(format!(
                "{name} must be a finite interval with min <= max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn sampler(&self) -> Uniform<f64> {
        Uniform::new_inclusive(self.min, self.max).expect("validated interval")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingRanges {
    pub x0: Interval,
    pub p0: Interval,
    pub sigma_x0: Interval,
    /// Interval of `log10(ħ)`; ħ is drawn log-uniformly.
    pub hbar_log10: Interval,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            x0: Interval::new(-5.0, 5.0),
            p0: Interval::new(-5.0, 5.0),
            sigma_x0: Interval::new(0.5, 2.0),
            hbar_log10: Interval::new(-6.0, 0.0),
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<()> {
        self.x0.validate("x0_range")?;
        self.p0.validate("p0_range")?;
        self.sigma_x0.validate("sigma_x0_range")?;
        self.hbar_log10.validate("hbar_log10_range")?;
        if self.sigma_x0.min <= 0.0 {
            return Err(Error::invalid("sigma_x0_range must be strictly positive"));
        }
        Ok(())
    }

    /// ħ interval in linear units.
    pub fn hbar_range(&self) -> Interval {
        Interval::new(
            10f64.powf(self.hbar_log10.min),
            10f64.powf(self.hbar_log10.max),
        )
    }
}

/// Draws `n` rows of `(x0, p0, sigma_x0, hbar)`.
pub fn sample_inputs(ranges: &SamplingRanges, n: usize, seed: u64) -> Result<Array2<f64>> {
    ranges.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samplers = [
        ranges.x0.sampler(),
        ranges.p0.sampler(),
        ranges.sigma_x0.sampler(),
        ranges.hbar_log10.sampler(),
    ];
    let mut inputs = Array2::zeros((n, 4));
    for mut row in inputs.rows_mut() {
        for (cell, dist) in row.iter_mut().zip(&samplers) {
            *cell = dist.sample(&mut rng);
        }
        row[3] = 10f64.powf(row[3]);
    }
    Ok(inputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub config: OscillatorConfig,
    pub seed: u64,
    pub ranges: SamplingRanges,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows whose closed-form variance was negative before the absolute value.
    pub fn clamped_rows(&self) -> usize {
        self.inputs
            .rows()
            .into_iter()
            .filter(|row| {
                let state = row_state(row);
                oracle::evolve_widths(&self.config, &state).clamped
            })
            .count()
    }

    /// Recomputes targets from the stored inputs and configuration.
    pub fn regenerate(&self) -> Result<Dataset> {
        build_dataset(&self.config, self.inputs.clone(), self.seed, self.ranges)
    }

    pub fn select_inputs(&self, indices: &[usize]) -> Array2<f64> {
        self.inputs.select(ndarray::Axis(0), indices)
    }

    pub fn select_targets(&self, indices: &[usize]) -> Array2<f64> {
        self.targets.select(ndarray::Axis(0), indices)
    }
}

fn row_state(row: &ArrayView1<f64>) -> InitialState {
    InitialState {
        x0: row[0],
        p0: row[1],
        sigma_x0: row[2],
        hbar: row[3],
    }
}

/// Labels every input row with the oracle.
pub fn build_dataset(
    cfg: &OscillatorConfig,
    inputs: Array2<f64>,
    seed: u64,
    ranges: SamplingRanges,
) -> Result<Dataset> {
    cfg.validate()?;
    if inputs.ncols() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "inputs need 4 columns, got {}",
            inputs.ncols()
        )));
    }
    let mut targets = Array2::zeros((inputs.nrows(), 4));
    for (i, (row, mut out)) in inputs
        .rows()
        .into_iter()
        .zip(targets.rows_mut())
        .enumerate()
    {
        let state = row_state(&row);
        state.validate().map_err(|e| Error::InvalidRow {
            row: i,
            message: e.to_string(),
        })?;
        let evolved = oracle::evolve(cfg, &state);
        out.assign(&ArrayView1::from(&evolved.to_array()));
    }
    Ok(Dataset {
        inputs,
        targets,
        config: *cfg,
        seed,
        ranges,
    })
}

/// Samples and labels in one call.
pub fn generate(
    cfg: &OscillatorConfig,
    ranges: &SamplingRanges,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let inputs = sample_inputs(ranges, n, seed)?;
    build_dataset(cfg, inputs, seed, *ranges)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Seeded permutation of `0..n` cut into ⌊0.8n⌋ / ⌊0.1n⌋ / remainder.
pub fn split(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 10 {
        return Err(Error::invalid(format!(
            "split needs at least 10 rows, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = perm.split_off(n_train + n_val);
    let validation = perm.split_off(n_train);
    Ok(SplitIndices {
        train: perm,
        validation,
        test,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_interval(i: &Interval) -> String {
    format!("{},{}", fmt_f64(i.min), fmt_f64(i.max))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let c = &ds.config;
    let r = &ds.ranges;
    let _ = writeln!(out, "# m={}", fmt_f64(c.m));
    let _ = writeln!(out, "# omega={}", fmt_f64(c.omega));
    let _ = writeln!(out, "# t={}", fmt_f64(c.t));
    let _ = writeln!(out, "# seed={}", ds.seed);
    let _ = writeln!(out, "# x0_range={}", fmt_interval(&r.x0));
    let _ = writeln!(out, "# p0_range={}", fmt_interval(&r.p0));
    let _ = writeln!(out, "# sigma_x0_range={}", fmt_interval(&r.sigma_x0));
    let _ = writeln!(out, "# hbar_log10_range={}", fmt_interval(&r.hbar_log10));
    out.push_str(DATASET_HEADER);
    out.push('\n');
    for (input, target) in ds.inputs.rows().into_iter().zip(ds.targets.rows()) {
        let cells: Vec<String> = input
            .iter()
            .chain(target.iter())
            .map(|&v| fmt_f64(v))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Meta {
    m: Option<f64>,
    omega: Option<f64>,
    t: Option<f64>,
    seed: Option<u64>,
    x0: Option<Interval>,
    p0: Option<Interval>,
    sigma_x0: Option<Interval>,
    hbar_log10: Option<Interval>,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let parse_num = |line: usize, s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| parse_err(line, format!("non-numeric value {s:?}")))
    };
    let parse_interval = |line: usize, s: &str| -> Result<Interval> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| parse_err(line, format!("expected 'min,max', got {s:?}")))?;
        Ok(Interval::new(parse_num(line, a)?, parse_num(line, b)?))
    };

    let mut meta = Meta {
        m: None,
        omega: None,
        t: None,
        seed: None,
        x0: None,
        p0: None,
        sigma_x0: None,
        hbar_log10: None,
    };
    let mut header_seen = false;
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.trim().split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "m" => meta.m = Some(parse_num(line_no, value)?),
                    "omega" => meta.omega = Some(parse_num(line_no, value)?),
                    "t" => meta.t = Some(parse_num(line_no, value)?),
                    "seed" => {
                        meta.seed =
                            Some(value.parse().map_err(|_| {
                                parse_err(line_no, format!("invalid seed {value:?}"))
                            })?)
                    }
                    "x0_range" => meta.x0 = Some(parse_interval(line_no, value)?),
                    "p0_range" => meta.p0 = Some(parse_interval(line_no, value)?),
                    "sigma_x0_range" => meta.sigma_x0 = Some(parse_interval(line_no, value)?),
                    "hbar_log10_range" => meta.hbar_log10 = Some(parse_interval(line_no, value)?),
                    _ => {}
                }
            }
            continue;
        }
        if !header_seen {
            if line != DATASET_HEADER {
                return Err(parse_err(
                    line_no,
                    format!("expected header {DATASET_HEADER:?}, got {line:?}"),
                ));
            }
            header_seen = true;
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(parse_err(
                line_no,
                format!("expected 8 columns, got {}", cells.len()),
            ));
        }
        for cell in cells {
            values.push(parse_num(line_no, cell)?);
        }
        rows += 1;
    }

    if rows == 0 {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    let missing = |what: &str| parse_err(0, format!("missing metadata field {what:?}"));
    let config = OscillatorConfig::new(
        meta.m.ok_or_else(|| missing("m"))?,
        meta.omega.ok_or_else(|| missing("omega"))?,
        meta.t.ok_or_else(|| missing("t"))?,
    )?;
    let ranges = SamplingRanges {
        x0: meta.x0.ok_or_else(|| missing("x0_range"))?,
        p0: meta.p0.ok_or_else(|| missing("p0_range"))?,
        sigma_x0: meta.sigma_x0.ok_or_else(|| missing("sigma_x0_range"))?,
        hbar_log10: meta.hbar_log10.ok_or_else(|| missing("hbar_log10_range"))?,
    };
    let seed = meta.seed.ok_or_else(|| missing("seed"))?;

    let all = Array2::from_shape_vec((rows, 8), values).expect("row count checked");
    Ok(Dataset {
        inputs: all.slice(ndarray::s![.., 0..4]).to_owned(),
        targets: all.slice(ndarray::s![.., 4..8]).to_owned(),
        config,
        seed,
        ranges,
    })
}

pub fn save_splits(splits: &SplitIndices, path: &Path) -> Result<()> {
    let mut out = String::from(SPLIT_HEADER);
    out.push('\n');
    for (name, list) in [
        ("train", &splits.train),
        ("val", &splits.validation),
        ("test", &splits.test),
    ] {
        for idx in list {
            let _ = writeln!(out, "{idx},{name}");
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_splits(path: &Path) -> Result<SplitIndices> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SPLIT_HEADER => {}
        Some((i, h)) => return Err(parse_err(i + 1, format!("unexpected header {h:?}"))),
        None => {
            return Err(Error::EmptyDataset {
                path: path.to_path_buf(),
            })
        }
    }
    let mut splits = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (i, line) in lines {
        let (idx, name) = line
            .trim()
            .split_once(',')
            .ok_or_else(|| parse_err(i + 1, "expected 'index,split'".into()))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| parse_err(i + 1, format!("invalid index {idx:?}")))?;
        match name {
            "train" => splits.train.push(idx),
            "val" => splits.validation.push(idx),
            "test" => splits.test.push(idx),
            other => return Err(parse_err(i + 1, format!("unknown split {other:?}"))),
        }
    }
    Ok(splits)
}

/// Checks that `splits` partitions `0..n`.
pub fn validate_splits(splits: &SplitIndices, n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in splits
        .train
        .iter()
        .chain(&splits.validation)
        .chain(&splits.test)
    {
        if i >= n || seen[i] {
            return Err(Error::invalid(format!(
                "split index {i} out of range or repeated for {n} rows"
            )));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::invalid("splits do not cover every row"));
    }
    Ok(())
}
