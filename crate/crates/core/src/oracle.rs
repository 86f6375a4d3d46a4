//! Closed-form evolution of Gaussian Wigner-function parameters under the
//! one-dimensional harmonic oscillator.
//!
//! Everything here is dimensionless and 64-bit. The width update follows the
//! closed form used to label the training data, including its cross term in
//! `sin(2ωt)`; that expression can become negative, in which case the
//! absolute value is taken before the square root and [`WidthEvolution::clamped`]
//! is set.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed dynamical setting: mass, angular frequency and evolution time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillatorConfig {
    pub m: f64,
    pub omega: f64,
    pub t: f64,
}

impl OscillatorConfig {
    pub fn new(m: f64, omega: f64, t: f64) -> Result<Self> {
        let cfg = Self { m, omega, t };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m.is_finite() && self.m > 0.0) {
            return Err(Error::invalid(format!("mass must be > 0, got {}", self.m)));
        }
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(Error::invalid(format!(
                "omega must be > 0, got {}",
                self.omega
            )));
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(Error::invalid(format!("time must be >= 0, got {}", self.t)));
        }
        Ok(())
    }

    /// `m·ω`, the ratio between momentum and position scales.
    pub fn m_omega(&self) -> f64 {
        self.m * self.omega
    }

    pub fn with_time(self, t: f64) -> Self {
        Self { t, ..self }
    }
}

impl Default for OscillatorConfig {
    fn default() -> Self {
        Self {
            m: 1.0,
            omega: 1.0,
            t: 5.0,
        }
    }
}

/// Network input: initial mean position/momentum, position width and ħ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub x0: f64,
    pub p0: f64,
    pub sigma_x0: f64,
    pub hbar: f64,
}

impl InitialState {
    pub fn new(x0: f64, p0: f64, sigma_x0: f64, hbar: f64) -> Result<Self> {
        let state = Self {
            x0,
            p0,
            sigma_x0,
            hbar,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x0.is_finite() && self.p0.is_finite()) {
            return Err(Error::invalid("initial mean must be finite"));
        }
        if !(self.sigma_x0.is_finite() && self.sigma_x0 > 0.0) {
            return Err(Error::invalid(format!(
                "sigma_x0 must be > 0, got {}",
                self.sigma_x0
            )));
        }
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return Err(Error::invalid(format!(
                "hbar must be > 0, got {}",
                self.hbar
            )));
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x0, self.p0, self.sigma_x0, self.hbar]
    }

    pub fn from_slice(row: &[f64]) -> Result<Self> {
        match row {
            [x0, p0, sigma_x0, hbar] => Self::new(*x0, *p0, *sigma_x0, *hbar),
            _ => Err(Error::ShapeMismatch(format!(
                "initial state needs 4 values, got {}",
                row.len()
            ))),
        }
    }
}

/// Network target: evolved mean position/momentum and both widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolvedState {
    pub xt: f64,
    pub pt: f64,
    pub sigma_xt: f64,
    pub sigma_pt: f64,
}

impl EvolvedState {
    pub fn to_array(self) -> [f64; 4] {
        [self.xt, self.pt, self.sigma_xt, self.sigma_pt]
    }

    pub fn from_slice(row: &[f64]) -> Result<Self> {
        match row {
            [xt, pt, sigma_xt, sigma_pt] => Ok(Self {
                xt: *xt,
                pt: *pt,
                sigma_xt: *sigma_xt,
                sigma_pt: *sigma_pt,
            }),
            _ => Err(Error::ShapeMismatch(format!(
                "evolved state needs 4 values, got {}",
                row.len()
            ))),
        }
    }
}

/// Output of [`evolve_widths`]. `clamped` is set when the closed-form
/// variance was negative before taking its absolute value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthEvolution {
    pub sigma_xt: f64,
    pub sigma_pt: f64,
    pub clamped: bool,
}

/// Initial momentum width of a minimum-uncertainty packet, `ħ / (2σ_x0)`.
pub fn sigma_p0(state: &InitialState) -> f64 {
    state.hbar / (2.0 * state.sigma_x0)
}

/// Classical phase-space rotation of the mean.
pub fn evolve_mean(cfg: &OscillatorConfig, state: &InitialState) -> (f64, f64) {
    let mw = cfg.m_omega();
    let (s, c) = (cfg.omega * cfg.t).sin_cos();
    let xt = state.x0 * c + state.p0 / mw * s;
    let pt = state.p0 * c - mw * state.x0 * s;
    (xt, pt)
}

/// Signed closed-form `σ_x(t)²`, before any absolute value.
pub fn sigma_xt_squared(cfg: &OscillatorConfig, state: &InitialState) -> f64 {
    let mw = cfg.m_omega();
    let wt = cfg.omega * cfg.t;
    let (s, c) = wt.sin_cos();
    let sx0 = state.sigma_x0;
    let sp0 = sigma_p0(state);
    sx0 * sx0 * c * c
        + sp0 * sp0 / (mw * mw) * s * s
        + state.hbar / (2.0 * mw) * (2.0 * wt).sin() * (sp0 / (mw * sx0) - mw * sx0 / sp0)
}

pub fn evolve_widths(cfg: &OscillatorConfig, state: &InitialState) -> WidthEvolution {
    let var = sigma_xt_squared(cfg, state);
    let sigma_xt = var.abs().sqrt();
    WidthEvolution {
        sigma_xt,
        sigma_pt: cfg.m_omega() * sigma_xt,
        clamped: var < 0.0,
    }
}

pub fn evolve(cfg: &OscillatorConfig, state: &InitialState) -> EvolvedState {
    evolve_with_flag(cfg, state).0
}

/// Like [`evolve`], also returning the negative-variance flag.
pub fn evolve_with_flag(cfg: &OscillatorConfig, state: &InitialState) -> (EvolvedState, bool) {
    let (xt, pt) = evolve_mean(cfg, state);
    let w = evolve_widths(cfg, state);
    (
        EvolvedState {
            xt,
            pt,
            sigma_xt: w.sigma_xt,
            sigma_pt: w.sigma_pt,
        },
        w.clamped,
    )
}

/// Separable Gaussian on phase space with a `1/(πħ)` prefactor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianWigner {
    pub center_x: f64,
    pub center_p: f64,
    pub sigma_x: f64,
    pub sigma_p: f64,
    pub hbar: f64,
}

impl GaussianWigner {
    pub fn new(
        center_x: f64,
        center_p: f64,
        sigma_x: f64,
        sigma_p: f64,
        hbar: f64,
    ) -> Result<Self> {
        let w = Self {
            center_x,
            center_p,
            sigma_x,
            sigma_p,
            hbar,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("sigma_p", self.sigma_p),
            ("hbar", self.hbar),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.center_x.is_finite() && self.center_p.is_finite()) {
            return Err(Error::invalid("Wigner center must be finite"));
        }
        Ok(())
    }

    /// Wigner function of the initial packet (`σ_p = ħ/2σ_x`).
    pub fn initial(state: &InitialState) -> Self {
        Self {
            center_x: state.x0,
            center_p: state.p0,
            sigma_x: state.sigma_x0,
            sigma_p: sigma_p0(state),
            hbar: state.hbar,
        }
    }

    /// Wigner function centred on an evolved state.
    pub fn from_evolved(evolved: &EvolvedState, hbar: f64) -> Result<Self> {
        Self::new(
            evolved.xt,
            evolved.pt,
            evolved.sigma_xt,
            evolved.sigma_pt,
            hbar,
        )
    }

    pub fn peak_value(&self) -> f64 {
        1.0 / (std::f64::consts::PI * self.hbar)
    }

    pub fn value(&self, x: f64, p: f64) -> f64 {
        let dx = (x - self.center_x) / self.sigma_x;
        let dp = (p - self.center_p) / self.sigma_p;
        self.peak_value() * (-0.5 * (dx * dx + dp * dp)).exp()
    }

    /// Closed-form phase-space integral, `2σ_xσ_p/ħ`.
    pub fn total_mass(&self) -> f64 {
        2.0 * self.sigma_x * self.sigma_p / self.hbar
    }
}

pub fn wigner_value(w: &GaussianWigner, x: f64, p: f64) -> f64 {
    w.value(x, p)
}

/// Uniform rectangular grid over phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn square(lo: f64, hi: f64, n: usize) -> Self {
        Self {
            x_min: lo,
            x_max: hi,
            p_min: lo,
            p_max: hi,
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!(
                "grid needs at least 2 points per axis, got {}",
                self.n
            )));
        }
        let finite = [self.x_min, self.x_max, self.p_min, self.p_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.p_min >= self.p_max {
            return Err(Error::invalid(format!("invalid grid bounds {self:?}")));
        }
        Ok(())
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            // weighted form keeps grids over [-a, a] exactly symmetric
            let last = (n - 1) as f64;
            (0..n)
                .map(|i| (lo * (last - i as f64) + hi * i as f64) / last)
                .collect()
        }
    }
}

/// Sampled Wigner function. `values[[i, j]]` is the value at `(xs[j], ps[i])`:
/// rows follow momentum, columns follow position.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerGrid {
    pub xs: Vec<f64>,
    pub ps: Vec<f64>,
    pub values: Array2<f64>,
}

impl WignerGrid {
    pub fn dx(&self) -> f64 {
        self.xs[1] - self.xs[0]
    }

    pub fn dp(&self) -> f64 {
        self.ps[1] - self.ps[0]
    }

    /// `(row, col)` of the maximum value; first occurrence wins.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_val = f64::NEG_INFINITY;
        for ((i, j), &v) in self.values.indexed_iter() {
            if v > best_val {
                best_val = v;
                best = (i, j);
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Trapezoid-rule integral over the whole grid.
    pub fn trapezoid_mass(&self) -> f64 {
        let marginal = self.position_marginal();
        trapezoid(&marginal, self.dx())
    }

    /// Trapezoid integral over momentum at each position node.
    pub fn position_marginal(&self) -> Vec<f64> {
        let dp = self.dp();
        self.values
            .columns()
            .into_iter()
            .map(|col| trapezoid(&col.to_vec(), dp))
            .collect()
    }
}

fn trapezoid(ys: &[f64], h: f64) -> f64 {
    match ys {
        [] | [_] => 0.0,
        [first, .., last] => h * (ys.iter().sum::<f64>() - 0.5 * (first + last)),
    }
}

pub fn wigner_grid(w: &GaussianWigner, grid: &GridSpec) -> Result<WignerGrid> {
    grid.validate()?;
    let xs = linspace(grid.x_min, grid.x_max, grid.n);
    let ps = linspace(grid.p_min, grid.p_max, grid.n);
    let values = Array2::from_shape_fn((grid.n, grid.n), |(i, j)| w.value(xs[j], ps[i]));
    Ok(WignerGrid { xs, ps, values })
}

/// Fixed-step RK4 integration of `ẋ = p/m`, `ṗ = −mω²x` over `[0, cfg.t]`.
pub fn classical_rk4(cfg: &OscillatorConfig, x0: f64, p0: f64, steps: usize) -> Result<(f64, f64)> {
    if steps == 0 {
        return Err(Error::invalid("RK4 needs at least one step"));
    }
    let h = cfg.t / steps as f64;
    let k = cfg.m * cfg.omega * cfg.omega;
    let deriv = |x: f64, p: f64| (p / cfg.m, -k * x);
    let (mut x, mut p) = (x0, p0);
    for _ in 0..steps {
        let (k1x, k1p) = deriv(x, p);
        let (k2x, k2p) = deriv(x + 0.5 * h * k1x, p + 0.5 * h * k1p);
        let (k3x, k3p) = deriv(x + 0.5 * h * k2x, p + 0.5 * h * k2p);
        let (k4x, k4p) = deriv(x + h * k3x, p + h * k3p);
        x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
    }
    Ok((x, p))
}
