//! Anything that maps `(x0, p0, sigma_x0, hbar)` rows to evolved-state rows.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::mlp::MlpModel;
use crate::oracle::{self, InitialState, OscillatorConfig};

pub trait Emulator {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Inference-mode predictions, one row per input row.
    fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl Emulator for MlpModel {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        MlpModel::predict(self, inputs)
    }
}

/// The closed-form oracle behind the emulator interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticEmulator {
    pub config: OscillatorConfig,
}

impl AnalyticEmulator {
    pub fn new(config: OscillatorConfig) -> Self {
        Self { config }
    }
}

impl Emulator for AnalyticEmulator {
    fn input_dim(&self) -> usize {
        4
    }

    fn output_dim(&self) -> usize {
        4
    }

    fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "oracle expects 4 input columns, got {}",
                inputs.ncols()
            )));
        }
        let mut out = Array2::zeros((inputs.nrows(), 4));
        for (row, mut dst) in inputs.rows().into_iter().zip(out.rows_mut()) {
            let state = InitialState::from_slice(&row.to_vec())?;
            let e = oracle::evolve(&self.config, &state);
            dst.assign(&ArrayView1::from(&e.to_array()));
        }
        Ok(out)
    }
}
