//! Feedforward network with batch normalization, trained in 64-bit.
//!
//! Each hidden block is `dense → ReLU → batchnorm`; the output layer is a
//! plain affine map. Samples are rows: a batch is a `B × input_dim` matrix.
//!
//! Batch normalization uses the biased batch variance both for normalizing
//! and for the running-variance update. In inference mode the running
//! statistics are used, so predictions do not depend on batch composition.

mod adam;
mod gradcheck;
mod io;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use io::{load_model, save_model, FORMAT_VERSION};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub batchnorm: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self {
            input_dim: 4,
            hidden_dims: vec![128, 256, 256, 128],
            output_dim: 4,
            batchnorm: true,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
        }
    }
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid(format!(
                "all layer widths must be >= 1: {self:?}"
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::invalid(format!(
                "batchnorm momentum must lie in (0, 1), got {}",
                self.bn_momentum
            )));
        }
        if !(self.bn_epsilon >= 0.0 && self.bn_epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "batchnorm epsilon must be >= 0, got {}",
                self.bn_epsilon
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, output layer last.
    pub fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Affine layer `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
        Self {
            weights: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormLayer {
    pub fn new(width: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum,
            epsilon,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    fn forward_infer(&self, a: &Array2<f64>) -> Array2<f64> {
        let scale = &self.gamma / &self.running_var.mapv(|v| (v + self.epsilon).sqrt());
        let shift = &self.beta - &(&self.running_mean * &scale);
        a * &scale + &shift
    }

    fn forward_batch(&self, a: &Array2<f64>) -> (Array2<f64>, NormCache) {
        let mean = a.mean_axis(Axis(0)).expect("non-empty batch");
        let var = a.var_axis(Axis(0), 0.0);
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let x_hat = (a - &mean) * &inv_std;
        let y = &x_hat * &self.gamma + &self.beta;
        (
            y,
            NormCache {
                x_hat,
                inv_std,
                mean,
                var,
            },
        )
    }

    fn update_running(&mut self, cache: &NormCache) {
        let m = self.momentum;
        self.running_mean
            .zip_mut_with(&cache.mean, |r, &b| *r = m * *r + (1.0 - m) * b);
        self.running_var
            .zip_mut_with(&cache.var, |r, &b| *r = m * *r + (1.0 - m) * b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenBlock {
    pub dense: DenseLayer,
    pub norm: Option<BatchNormLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub spec: ArchitectureSpec,
    pub hidden: Vec<HiddenBlock>,
    pub output: DenseLayer,
    pub init_seed: u64,
    /// Bumped on every optimizer update; forward caches remember it.
    generation: u64,
}

impl PartialEq for MlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.hidden == other.hidden
            && self.output == other.output
            && self.init_seed == other.init_seed
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    pre_activation: Array2<f64>,
    norm: Option<NormCache>,
}

/// Intermediate values of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[k]` is the input of dense layer `k`; the last entry feeds
    /// the output layer.
    activations: Vec<Array2<f64>>,
    blocks: Vec<BlockCache>,
    pub output: Array2<f64>,
    generation: u64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrad {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad {
    pub dense: DenseGrad,
    pub norm: Option<NormGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<BlockGrad>,
    pub output: DenseGrad,
}

impl Gradients {
    /// Flat views in the same order as [`MlpModel::parameters`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for b in &self.hidden {
            out.push(slice(&b.dense.weights));
            out.push(slice(&b.dense.bias));
            if let Some(n) = &b.norm {
                out.push(slice(&n.gamma));
                out.push(slice(&n.beta));
            }
        }
        out.push(slice(&self.output.weights));
        out.push(slice(&self.output.bias));
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

/// Glorot-uniform weights, zero biases, fresh batchnorm.
pub fn init_model(spec: &ArchitectureSpec, seed: u64) -> Result<MlpModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = spec.dense_shapes();
    let (&(out_in, out_out), hidden_shapes) = shapes.split_last().expect("at least one layer");
    let hidden = hidden_shapes
        .iter()
        .map(|&(fan_in, fan_out)| HiddenBlock {
            dense: DenseLayer::glorot(fan_in, fan_out, &mut rng),
            norm: spec
                .batchnorm
                .then(|| BatchNormLayer::new(fan_out, spec.bn_momentum, spec.bn_epsilon)),
        })
        .collect();
    let output = DenseLayer::glorot(out_in, out_out, &mut rng);
    Ok(MlpModel {
        spec: spec.clone(),
        hidden,
        output,
        init_seed: seed,
        generation: 0,
    })
}

impl MlpModel {
    /// Assembles a model from explicit layers, checking that dimensions chain.
    pub fn from_parts(
        spec: ArchitectureSpec,
        hidden: Vec<HiddenBlock>,
        output: DenseLayer,
        init_seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.dense_shapes();
        if hidden.len() + 1 != shapes.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} hidden blocks, got {}",
                shapes.len() - 1,
                hidden.len()
            )));
        }
        let dense = hidden
            .iter()
            .map(|b| &b.dense)
            .chain(std::iter::once(&output));
        for (k, (layer, &(fan_in, fan_out))) in dense.zip(&shapes).enumerate() {
            if layer.weights.dim() != (fan_out, fan_in) || layer.bias.len() != fan_out {
                return Err(Error::ShapeMismatch(format!(
                    "dense layer {k}: expected {fan_out}x{fan_in}, got {:?} with bias {}",
                    layer.weights.dim(),
                    layer.bias.len()
                )));
            }
        }
        for (k, block) in hidden.iter().enumerate() {
            match (&block.norm, spec.batchnorm) {
                (Some(n), true) => {
                    let w = block.dense.fan_out();
                    if [
                        n.gamma.len(),
                        n.beta.len(),
                        n.running_mean.len(),
                        n.running_var.len(),
                    ]
                    .iter()
                    .any(|&l| l != w)
                    {
                        return Err(Error::ShapeMismatch(format!(
                            "batchnorm {k}: vectors must have width {w}"
                        )));
                    }
                    if n.running_var.iter().any(|&v| v < 0.0) {
                        return Err(Error::invalid(format!(
                            "batchnorm {k}: negative running variance"
                        )));
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(Error::ShapeMismatch(format!(
                        "block {k}: batchnorm presence disagrees with the architecture"
                    )))
                }
            }
        }
        Ok(Self {
            spec,
            hidden,
            output,
            init_seed,
            generation: 0,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Trainable tensors in a fixed order: per block weights, bias, gamma,
    /// beta; then output weights and bias.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for b in &self.hidden {
            out.push(slice(&b.dense.weights));
            out.push(slice(&b.dense.bias));
            if let Some(n) = &b.norm {
                out.push(slice(&n.gamma));
                out.push(slice(&n.beta));
            }
        }
        out.push(slice(&self.output.weights));
        out.push(slice(&self.output.bias));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out = Vec::new();
        for b in &mut self.hidden {
            out.push(slice_mut(&mut b.dense.weights));
            out.push(slice_mut(&mut b.dense.bias));
            if let Some(n) = &mut b.norm {
                out.push(slice_mut(&mut n.gamma));
                out.push(slice_mut(&mut n.beta));
            }
        }
        out.push(slice_mut(&mut self.output.weights));
        out.push(slice_mut(&mut self.output.bias));
        out
    }

    fn check_input(&self, x: &ArrayView2<f64>, train: bool) -> Result<()> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input columns, got {}",
                self.spec.input_dim,
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::invalid("batch must contain at least one row"));
        }
        if train && self.spec.batchnorm && !self.hidden.is_empty() && x.nrows() < 2 {
            return Err(Error::invalid(
                "train-mode batch normalization needs a batch of at least 2 rows",
            ));
        }
        Ok(())
    }

    /// Inference-mode forward pass using running statistics.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x, false)?;
        let mut a = x.to_owned();
        for block in &self.hidden {
            let mut h = block.dense.forward(&a.view());
            h.mapv_inplace(relu);
            a = match &block.norm {
                Some(n) => n.forward_infer(&h),
                None => h,
            };
        }
        Ok(self.output.forward(&a.view()))
    }

    /// Train-mode forward pass with batch statistics; running statistics are
    /// left untouched.
    pub fn forward_frozen(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x, true)?;
        let mut activations = Vec::with_capacity(self.hidden.len() + 1);
        let mut blocks = Vec::with_capacity(self.hidden.len());
        let mut a = x.to_owned();
        for block in &self.hidden {
            let z = block.dense.forward(&a.view());
            let h = z.mapv(relu);
            let (next, norm) = match &block.norm {
                Some(n) => {
                    let (y, c) = n.forward_batch(&h);
                    (y, Some(c))
                }
                None => (h, None),
            };
            activations.push(std::mem::replace(&mut a, next));
            blocks.push(BlockCache {
                pre_activation: z,
                norm,
            });
        }
        let output = self.output.forward(&a.view());
        activations.push(a);
        Ok(ForwardCache {
            activations,
            blocks,
            output,
            generation: self.generation,
        })
    }

    /// Train-mode forward pass that also folds the batch statistics into
    /// the running averages.
    pub fn forward_train(&mut self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        let cache = self.forward_frozen(x)?;
        for (block, bc) in self.hidden.iter_mut().zip(&cache.blocks) {
            if let (Some(n), Some(c)) = (&mut block.norm, &bc.norm) {
                n.update_running(c);
            }
        }
        Ok(cache)
    }

    /// Exact gradients of [`mse_loss`] for the batch recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, target: ArrayView2<f64>) -> Result<Gradients> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        if cache.blocks.len() != self.hidden.len() {
            return Err(Error::StaleCache(
                "cache was produced by another model".into(),
            ));
        }
        if target.dim() != cache.output.dim() {
            return Err(Error::ShapeMismatch(format!(
                "target shape {:?} does not match output shape {:?}",
                target.dim(),
                cache.output.dim()
            )));
        }
        let scale = 2.0 / cache.output.len() as f64;
        let mut delta = (&cache.output - &target) * scale;

        let last_in = cache.activations.last().expect("output layer input");
        let output = dense_grad(&delta, last_in);
        delta = delta.dot(&self.output.weights);

        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (k, (block, bc)) in self.hidden.iter().zip(&cache.blocks).enumerate().rev() {
            let norm = match (&block.norm, &bc.norm) {
                (Some(n), Some(c)) => {
                    let (dx, g) = batchnorm_backward(n, c, &delta);
                    delta = dx;
                    Some(g)
                }
                (None, None) => None,
                _ => return Err(Error::StaleCache("batchnorm layout mismatch".into())),
            };
            delta.zip_mut_with(&bc.pre_activation, |d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
            let dense = dense_grad(&delta, &cache.activations[k]);
            if k > 0 {
                delta = delta.dot(&block.dense.weights);
            }
            hidden.push(BlockGrad { dense, norm });
        }
        hidden.reverse();
        Ok(Gradients { hidden, output })
    }

    /// One Adam update using gradients from [`MlpModel::backward`].
    pub fn apply_adam(&mut self, opt: &mut AdamState, grads: &Gradients) -> Result<()> {
        let g = grads.tensors();
        let mut params = self.parameters_mut();
        opt.step(&mut params, &g)
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn dense_grad(delta: &Array2<f64>, input: &Array2<f64>) -> DenseGrad {
    DenseGrad {
        weights: delta.t().dot(input),
        bias: delta.sum_axis(Axis(0)),
    }
}

fn batchnorm_backward(
    layer: &BatchNormLayer,
    cache: &NormCache,
    dy: &Array2<f64>,
) -> (Array2<f64>, NormGrad) {
    let b = dy.nrows() as f64;
    let d_gamma = (dy * &cache.x_hat).sum_axis(Axis(0));
    let d_beta = dy.sum_axis(Axis(0));
    let dx_hat = dy * &layer.gamma;
    let sum_dx_hat = dx_hat.sum_axis(Axis(0));
    let sum_dx_hat_xhat = (&dx_hat * &cache.x_hat).sum_axis(Axis(0));
    let mut dx = dx_hat * b;
    dx -= &sum_dx_hat;
    dx -= &(&cache.x_hat * &sum_dx_hat_xhat);
    dx *= &(&cache.inv_std / b);
    (
        dx,
        NormGrad {
            gamma: d_gamma,
            beta: d_beta,
        },
    )
}

/// Mean of squared differences over every entry.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("cannot take the MSE of an empty batch"));
    }
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}
