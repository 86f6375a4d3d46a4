//! Mini-batch training with validation-based early stopping.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SplitIndices};
use crate::emulator::Emulator;
use crate::error::{Error, Result};
use crate::mlp::{mse_loss, AdamConfig, AdamState, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub learning_rate: f64,
    pub shuffle_seed: u64,
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            batch_size: 64,
            early_stop_patience: 20,
            learning_rate: 5e-4,
            shuffle_seed: 42,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be >= 2"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::invalid("early_stop_patience must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub total_mse: f64,
    pub per_output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_loss_per_epoch: Vec<f64>,
    pub val_loss_per_epoch: Vec<f64>,
    /// Number of epochs run (1-based index of the last one).
    pub stopped_epoch: usize,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    /// Whether training ended because patience ran out.
    pub early_stopped: bool,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub test_loss: f64,
    pub per_output_test_mse: Vec<f64>,
}

/// Per-epoch progress passed to the training callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_epoch: usize,
}

/// Total and per-column MSE of `emulator` on the given rows.
pub fn evaluate<E: Emulator + ?Sized>(
    emulator: &E,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty index list"));
    }
    if emulator.input_dim() != dataset.inputs.ncols()
        || emulator.output_dim() != dataset.targets.ncols()
    {
        return Err(Error::ShapeMismatch(format!(
            "model maps {} -> {} columns, dataset has {} -> {}",
            emulator.input_dim(),
            emulator.output_dim(),
            dataset.inputs.ncols(),
            dataset.targets.ncols()
        )));
    }
    let inputs = dataset.select_inputs(indices);
    let targets = dataset.select_targets(indices);
    let pred = emulator.predict(inputs.view())?;
    let total_mse = mse_loss(pred.view(), targets.view())?;
    let sq = (&pred - &targets).mapv(|d| d * d);
    let per_output = sq.mean_axis(Axis(0)).expect("non-empty selection").to_vec();
    Ok(Evaluation {
        total_mse,
        per_output,
    })
}

pub fn train(
    model: MlpModel,
    dataset: &Dataset,
    splits: &SplitIndices,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    train_with_progress(model, dataset, splits, config, |_| {})
}

pub fn train_with_progress(
    mut model: MlpModel,
    dataset: &Dataset,
    splits: &SplitIndices,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    for (name, list) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        if list.is_empty() {
            return Err(Error::invalid(format!("{name} split is empty")));
        }
        if let Some(&bad) = list.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::invalid(format!(
                "{name} split index {bad} out of range for {} rows",
                dataset.len()
            )));
        }
    }
    if splits.train.len() < config.batch_size {
        return Err(Error::invalid(format!(
            "training split ({}) smaller than batch size ({})",
            splits.train.len(),
            config.batch_size
        )));
    }

    let mut opt = AdamState::for_model(
        &model,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order = splits.train.clone();

    let mut train_hist = Vec::new();
    let mut val_hist = Vec::new();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut since_best = 0usize;
    let mut early_stopped = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let x = dataset.select_inputs(chunk);
            let y = dataset.select_targets(chunk);
            let cache = model.forward_train(x.view())?;
            let loss = mse_loss(cache.output.view(), y.view())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            let grads = model.backward(&cache, y.view())?;
            model.apply_adam(&mut opt, &grads)?;
            weighted += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = weighted / seen as f64;
        let val_loss = evaluate(&model, dataset, &splits.validation)?.total_mse;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        train_hist.push(train_loss);
        val_hist.push(val_loss);

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        on_epoch(&EpochStats {
            epoch,
            train_loss,
            val_loss,
            best_epoch,
        });
        if since_best >= config.early_stop_patience {
            early_stopped = true;
            break;
        }
    }

    let (best_val, best_epoch, best_model) = best.expect("at least one epoch");
    let (model, final_val_loss) = if config.restore_best {
        (best_model, best_val)
    } else {
        let last = *val_hist.last().expect("at least one epoch");
        (model, last)
    };
    let test = evaluate(&model, dataset, &splits.test)?;
    let report = TrainReport {
        stopped_epoch: train_hist.len(),
        best_epoch,
        early_stopped,
        final_train_loss: *train_hist.last().expect("at least one epoch"),
        final_val_loss,
        test_loss: test.total_mse,
        per_output_test_mse: test.per_output,
        train_loss_per_epoch: train_hist,
        val_loss_per_epoch: val_hist,
    };
    Ok((model, report))
}

impl TrainReport {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for (i, (t, v)) in self
            .train_loss_per_epoch
            .iter()
            .zip(&self.val_loss_per_epoch)
            .enumerate()
        {
            let _ = writeln!(out, "{},{t:.16e},{v:.16e}", i + 1);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "stopped_epoch={}", self.stopped_epoch);
        let _ = writeln!(out, "best_epoch={}", self.best_epoch);
        let _ = writeln!(out, "early_stopped={}", self.early_stopped);
        let _ = writeln!(out, "final_train_loss={:.16e}", self.final_train_loss);
        let _ = writeln!(out, "final_val_loss={:.16e}", self.final_val_loss);
        let _ = writeln!(out, "test_loss={:.16e}", self.test_loss);
        let per: Vec<String> = self
            .per_output_test_mse
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect();
        let _ = writeln!(out, "per_output_test_mse={}", per.join(","));
        out
    }

    pub fn save(&self, history: &Path, summary: &Path) -> Result<()> {
        fs::write(history, self.history_csv()).map_err(|e| Error::io(history, e))?;
        fs::write(summary, self.summary()).map_err(|e| Error::io(summary, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split, SamplingRanges};
    use crate::emulator::AnalyticEmulator;
    use crate::mlp::{init_model, ArchitectureSpec};
    use crate::oracle::OscillatorConfig;

    fn small_dataset(n: usize) -> Dataset {
        crate::dataset::generate(
            &OscillatorConfig::default(),
            &SamplingRanges::default(),
            n,
            3,
        )
        .unwrap()
    }

    #[test]
    fn oracle_evaluates_to_zero() {
        let ds = small_dataset(50);
        let idx: Vec<usize> = (0..50).collect();
        let e = evaluate(&AnalyticEmulator::new(ds.config), &ds, &idx).unwrap();
        assert_eq!(e.total_mse, 0.0);
        assert_eq!(e.per_output, vec![0.0; 4]);
    }

    struct Zero;
    impl Emulator for Zero {
        fn input_dim(&self) -> usize {
            4
        }
        fn output_dim(&self) -> usize {
            4
        }
        fn predict(&self, inputs: ndarray::ArrayView2<f64>) -> Result<ndarray::Array2<f64>> {
            Ok(ndarray::Array2::zeros((inputs.nrows(), 4)))
        }
    }

    #[test]
    fn zero_model_gives_second_moments() {
        let ds = small_dataset(40);
        let idx: Vec<usize> = (5..35).collect();
        let e = evaluate(&Zero, &ds, &idx).unwrap();
        let mut moments = [0.0; 4];
        for &i in &idx {
            for (c, m) in moments.iter_mut().enumerate() {
                *m += ds.targets[[i, c]].powi(2) / idx.len() as f64;
            }
        }
        for (a, b) in e.per_output.iter().zip(moments) {
            assert!((a - b).abs() < 1e-12);
        }
        let mean: f64 = moments.iter().sum::<f64>() / 4.0;
        assert!((e.total_mse - mean).abs() < 1e-12);
    }

    #[test]
    fn evaluation_ignores_index_order() {
        let ds = small_dataset(40);
        let m = init_model(
            &ArchitectureSpec {
                hidden_dims: vec![8],
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let fwd: Vec<usize> = (0..40).collect();
        let rev: Vec<usize> = (0..40).rev().collect();
        let a = evaluate(&m, &ds, &fwd).unwrap();
        let b = evaluate(&m, &ds, &rev).unwrap();
        assert!((a.total_mse - b.total_mse).abs() < 1e-12);
        assert!(evaluate(&m, &ds, &[]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ds = small_dataset(20);
        let m = init_model(
            &ArchitectureSpec {
                input_dim: 3,
                hidden_dims: vec![4],
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            evaluate(&m, &ds, &[0, 1]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn patience_one_stops_after_first_worse_epoch() {
        // Training targets sit at +5, validation targets at -5: every epoch
        // that fits the training rows makes validation worse.
        let mut ds = small_dataset(200);
        let splits = split(200, 0).unwrap();
        for &i in &splits.train {
            ds.targets.row_mut(i).fill(5.0);
        }
        for &i in splits.validation.iter().chain(&splits.test) {
            ds.targets.row_mut(i).fill(-5.0);
        }
        let m = init_model(
            &ArchitectureSpec {
                hidden_dims: vec![16],
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let cfg = TrainConfig {
            max_epochs: 50,
            batch_size: 16,
            early_stop_patience: 1,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (_, report) = train(m, &ds, &splits, &cfg).unwrap();
        assert_eq!(report.best_epoch, 1);
        assert_eq!(report.stopped_epoch, 2);
        assert!(report.early_stopped);
        assert_eq!(report.final_val_loss, report.val_loss_per_epoch[0]);
    }

    #[test]
    fn rejects_bad_splits() {
        let ds = small_dataset(30);
        let m = init_model(
            &ArchitectureSpec {
                hidden_dims: vec![4],
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let mut s = split(30, 0).unwrap();
        s.test.clear();
        assert!(train(m.clone(), &ds, &s, &TrainConfig::default()).is_err());
        let s = split(30, 0).unwrap();
        // 24 training rows < batch 64
        assert!(train(m, &ds, &s, &TrainConfig::default()).is_err());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut ds = small_dataset(40);
        ds.targets[[0, 0]] = f64::NAN;
        let splits = SplitIndices {
            train: (0..32).collect(),
            validation: (32..36).collect(),
            test: (36..40).collect(),
        };
        let m = init_model(
            &ArchitectureSpec {
                hidden_dims: vec![4],
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            ..TrainConfig::default()
        };
        match train(m, &ds, &splits, &cfg) {
            Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
