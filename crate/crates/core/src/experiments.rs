//! The ħ sweep of the evolved position width and the predicted phase-space
//! Wigner grids, with error metrics against the closed form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::dataset::Interval;
use crate::emulator::Emulator;
use crate::error::{Error, Result};
use crate::oracle::{
    self, linspace, wigner_grid, EvolvedState, GaussianWigner, GridSpec, InitialState,
    OscillatorConfig, WignerGrid,
};

pub const SWEEP_HEADER: &str =
    "hbar,sigma_xt_pred,sigma_xt_analytical,rel_err,abs_err,sigma_pt_pred,sigma_pt_analytical";

/// `n` points spaced evenly in `log10` between `10^lo` and `10^hi`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo, hi, n)
        .into_iter()
        .map(|e| 10f64.powf(e))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub x0: f64,
    pub p0: f64,
    pub sigma_x0: f64,
    pub hbar_values: Vec<f64>,
    pub oscillator: OscillatorConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            x0: 1.0,
            p0: 0.0,
            sigma_x0: 1.0,
            hbar_values: logspace(-6.0, 0.0, 50),
            oscillator: OscillatorConfig::default(),
        }
    }
}

fn validate_hbars(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("at least one hbar value is required"));
    }
    if values.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
        return Err(Error::invalid("hbar values must be positive"));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("hbar values must be sorted ascending"));
    }
    Ok(())
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.oscillator.validate()?;
        validate_hbars(&self.hbar_values)?;
        InitialState::new(self.x0, self.p0, self.sigma_x0, 1.0).map(|_| ())
    }

    fn inputs(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.hbar_values.len(), 4), |(i, j)| match j {
            0 => self.x0,
            1 => self.p0,
            2 => self.sigma_x0,
            _ => self.hbar_values[i],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub hbar: f64,
    /// `None` when the network predicted a non-positive or non-finite width.
    pub sigma_xt_pred: Option<f64>,
    pub sigma_xt_analytical: f64,
    pub sigma_pt_pred: Option<f64>,
    pub sigma_pt_analytical: f64,
}

impl SweepPoint {
    pub fn abs_err(&self) -> Option<f64> {
        self.sigma_xt_pred
            .map(|p| (p - self.sigma_xt_analytical).abs())
    }

    /// Error relative to the analytical value.
    pub fn rel_err(&self) -> Option<f64> {
        self.abs_err().map(|e| e / self.sigma_xt_analytical)
    }
}

fn positive(v: f64) -> Option<f64> {
    (v.is_finite() && v > 0.0).then_some(v)
}

pub fn hbar_sweep<E: Emulator + ?Sized>(emulator: &E, spec: &SweepSpec) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    let pred = emulator.predict(spec.inputs().view())?;
    if pred.ncols() < 4 {
        return Err(Error::ShapeMismatch(format!(
            "sweep needs 4 outputs, model produced {}",
            pred.ncols()
        )));
    }
    Ok(spec
        .hbar_values
        .iter()
        .zip(pred.rows())
        .map(|(&hbar, row)| {
            let state = InitialState {
                x0: spec.x0,
                p0: spec.p0,
                sigma_x0: spec.sigma_x0,
                hbar,
            };
            let ana = oracle::evolve_widths(&spec.oscillator, &state);
            SweepPoint {
                hbar,
                sigma_xt_pred: positive(row[2]),
                sigma_xt_analytical: ana.sigma_xt,
                sigma_pt_pred: positive(row[3]),
                sigma_pt_analytical: ana.sigma_pt,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub in_range_points: usize,
    pub missing_points: usize,
    pub max_rel_err: Option<f64>,
    pub median_rel_err: Option<f64>,
    /// Whether the predicted width shrinks as ħ goes below the trained
    /// range. `None` when the sweep has no such points.
    pub extrapolation_decreasing: Option<bool>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Summarises a sweep against the ħ interval seen during training.
pub fn summarize_sweep(points: &[SweepPoint], trained_hbar: Interval) -> ConvergenceReport {
    // allow for rounding of 10^log10 at the interval ends
    let tol = 1e-12;
    let lo = trained_hbar.min * (1.0 - tol);
    let hi = trained_hbar.max * (1.0 + tol);
    let in_range: Vec<&SweepPoint> = points
        .iter()
        .filter(|p| p.hbar >= lo && p.hbar <= hi)
        .collect();
    let rel: Vec<f64> = in_range.iter().filter_map(|p| p.rel_err()).collect();
    let missing_points = points.iter().filter(|p| p.sigma_xt_pred.is_none()).count();

    // points below the range, in descending ħ, anchored at the smallest
    // in-range point
    let below: Vec<&SweepPoint> = points.iter().filter(|p| p.hbar < lo).collect();
    let extrapolation_decreasing = if below.is_empty() {
        None
    } else {
        let anchor = in_range.iter().min_by(|a, b| a.hbar.total_cmp(&b.hbar));
        let mut chain: Vec<Option<f64>> = anchor.iter().map(|p| p.sigma_xt_pred).collect();
        chain.extend(below.iter().rev().map(|p| p.sigma_xt_pred));
        let values: Option<Vec<f64>> = chain.into_iter().collect();
        Some(match values {
            Some(v) if v.len() >= 2 => {
                let non_increasing = v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
                non_increasing && v[v.len() - 1] < v[0]
            }
            _ => false,
        })
    };

    ConvergenceReport {
        in_range_points: in_range.len(),
        missing_points,
        max_rel_err: rel.iter().copied().reduce(f64::max),
        median_rel_err: median(rel),
        extrapolation_decreasing,
    }
}

pub fn convergence_report<E: Emulator + ?Sized>(
    emulator: &E,
    spec: &SweepSpec,
    trained_hbar: Interval,
) -> Result<ConvergenceReport> {
    Ok(summarize_sweep(&hbar_sweep(emulator, spec)?, trained_hbar))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{:.16e},{},{:.16e},{},{},{},{:.16e}",
            p.hbar,
            opt_cell(p.sigma_xt_pred),
            p.sigma_xt_analytical,
            opt_cell(p.rel_err()),
            opt_cell(p.abs_err()),
            opt_cell(p.sigma_pt_pred),
            p.sigma_pt_analytical
        );
    }
    out
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    fs::write(path, sweep_csv(points)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceSpec {
    pub x0: f64,
    pub p0: f64,
    pub sigma_x0: f64,
    pub hbar_values: Vec<f64>,
    pub grid: GridSpec,
    pub contour_levels: usize,
}

impl Default for PhaseSpaceSpec {
    fn default() -> Self {
        Self {
            x0: 1.0,
            p0: 0.0,
            sigma_x0: 1.0,
            hbar_values: vec![1.0, 0.1, 0.01],
            grid: GridSpec::square(-10.0, 10.0, 100),
            contour_levels: 20,
        }
    }
}

impl PhaseSpaceSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.hbar_values.is_empty()
            || self
                .hbar_values
                .iter()
                .any(|&h| !(h.is_finite() && h > 0.0))
        {
            return Err(Error::invalid("phase-space hbar values must be positive"));
        }
        if self.contour_levels < 2 {
            return Err(Error::invalid("need at least 2 contour levels"));
        }
        InitialState::new(self.x0, self.p0, self.sigma_x0, 1.0).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceResult {
    pub hbar: f64,
    pub predicted: EvolvedState,
    pub wigner: GaussianWigner,
    pub grid: WignerGrid,
    /// `(row, col)` of the grid maximum.
    pub peak_index: (usize, usize),
    pub peak_value: f64,
    /// Closed-form value at the predicted center, `1/(πħ)`.
    pub center_value: f64,
    pub contour_levels: Vec<f64>,
}

impl PhaseSpaceResult {
    pub fn peak_location(&self) -> (f64, f64) {
        (
            self.grid.xs[self.peak_index.1],
            self.grid.ps[self.peak_index.0],
        )
    }
}

/// One entry per ħ, in spec order; a non-positive predicted width yields a
/// [`Error::DegeneratePrediction`] for that ħ only.
pub fn phase_space_grids<E: Emulator + ?Sized>(
    emulator: &E,
    spec: &PhaseSpaceSpec,
) -> Result<Vec<Result<PhaseSpaceResult>>> {
    spec.validate()?;
    let inputs = Array2::from_shape_fn((spec.hbar_values.len(), 4), |(i, j)| match j {
        0 => spec.x0,
        1 => spec.p0,
        2 => spec.sigma_x0,
        _ => spec.hbar_values[i],
    });
    let pred = emulator.predict(inputs.view())?;
    Ok(spec
        .hbar_values
        .iter()
        .zip(pred.rows())
        .map(|(&hbar, row)| {
            let predicted = EvolvedState::from_slice(&row.to_vec())?;
            if positive(predicted.sigma_xt).is_none() || positive(predicted.sigma_pt).is_none() {
                return Err(Error::DegeneratePrediction {
                    hbar,
                    message: format!(
                        "predicted widths sigma_x={}, sigma_p={}",
                        predicted.sigma_xt, predicted.sigma_pt
                    ),
                });
            }
            let wigner = GaussianWigner::from_evolved(&predicted, hbar).map_err(|e| {
                Error::DegeneratePrediction {
                    hbar,
                    message: e.to_string(),
                }
            })?;
            let grid = wigner_grid(&wigner, &spec.grid)?;
            let peak_index = grid.argmax();
            let peak_value = grid.values[peak_index];
            let contour_levels = linspace(grid.min(), grid.max(), spec.contour_levels);
            Ok(PhaseSpaceResult {
                hbar,
                predicted,
                center_value: wigner.value(wigner.center_x, wigner.center_p),
                wigner,
                grid,
                peak_index,
                peak_value,
                contour_levels,
            })
        })
        .collect())
}

/// File-name-safe rendering of ħ, e.g. `1p00e-2` for 0.01.
pub fn sanitize_hbar(hbar: f64) -> String {
    format!("{hbar:.2e}").replace('.', "p").replace('+', "")
}

pub fn phase_space_file_name(hbar: f64) -> String {
    format!("phasespace_hbar_{}.csv", sanitize_hbar(hbar))
}

pub fn phase_space_csv(result: &PhaseSpaceResult) -> String {
    let mut out = String::new();
    let p = &result.predicted;
    let g = &result.grid;
    let _ = writeln!(out, "# hbar={:.16e}", result.hbar);
    let _ = writeln!(out, "# xt_pred={:.16e}", p.xt);
    let _ = writeln!(out, "# pt_pred={:.16e}", p.pt);
    let _ = writeln!(out, "# sigma_xt_pred={:.16e}", p.sigma_xt);
    let _ = writeln!(out, "# sigma_pt_pred={:.16e}", p.sigma_pt);
    let _ = writeln!(out, "# x_min={:.16e}", g.xs[0]);
    let _ = writeln!(out, "# x_max={:.16e}", g.xs[g.xs.len() - 1]);
    let _ = writeln!(out, "# p_min={:.16e}", g.ps[0]);
    let _ = writeln!(out, "# p_max={:.16e}", g.ps[g.ps.len() - 1]);
    let _ = writeln!(out, "# n={}", g.xs.len());
    let (px, pp) = result.peak_location();
    let _ = writeln!(out, "# peak_x={px:.16e}");
    let _ = writeln!(out, "# peak_p={pp:.16e}");
    let _ = writeln!(out, "# peak_value={:.16e}", result.peak_value);
    let levels: Vec<String> = result
        .contour_levels
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect();
    let _ = writeln!(out, "# levels={}", levels.join(","));
    let _ = writeln!(
        out,
        "# rows: momentum ascending; columns: position ascending"
    );
    for row in g.values.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_phase_space_csv(result: &PhaseSpaceResult, path: &Path) -> Result<()> {
    fs::write(path, phase_space_csv(result)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::AnalyticEmulator;

    struct Constant(f64);
    impl Emulator for Constant {
        fn input_dim(&self) -> usize {
            4
        }
        fn output_dim(&self) -> usize {
            4
        }
        fn predict(&self, inputs: ndarray::ArrayView2<f64>) -> Result<Array2<f64>> {
            Ok(Array2::from_elem((inputs.nrows(), 4), self.0))
        }
    }

    fn oracle() -> AnalyticEmulator {
        AnalyticEmulator::new(OscillatorConfig::default())
    }

    #[test]
    fn logspace_matches_endpoints() {
        let v = logspace(-6.0, 0.0, 50);
        assert_eq!(v.len(), 50);
        assert!((v[0] - 1e-6).abs() < 1e-20);
        assert_eq!(v[49], 1.0);
    }

    #[test]
    fn analytical_column_at_unit_hbar() {
        let pts = hbar_sweep(&oracle(), &SweepSpec::default()).unwrap();
        let last = pts.last().unwrap();
        assert_eq!(last.hbar, 1.0);
        assert!((last.sigma_xt_analytical - 0.847_563_572_697_268_4).abs() < 1e-14);
    }

    #[test]
    fn analytical_column_strictly_increasing() {
        let pts = hbar_sweep(&oracle(), &SweepSpec::default()).unwrap();
        assert!(pts
            .windows(2)
            .all(|w| w[1].sigma_xt_analytical > w[0].sigma_xt_analytical));
    }

    #[test]
    fn oracle_sweep_has_zero_error() {
        let pts = hbar_sweep(&oracle(), &SweepSpec::default()).unwrap();
        assert!(pts.iter().all(|p| p.rel_err() == Some(0.0)));
    }

    #[test]
    fn sweep_rejects_unsorted() {
        let spec = SweepSpec {
            hbar_values: vec![1.0, 0.1],
            ..SweepSpec::default()
        };
        assert!(hbar_sweep(&oracle(), &spec).is_err());
    }

    #[test]
    fn negative_widths_become_missing() {
        let pts = hbar_sweep(&Constant(-1.0), &SweepSpec::default()).unwrap();
        assert!(pts
            .iter()
            .all(|p| p.sigma_xt_pred.is_none() && p.rel_err().is_none()));
        let csv = sweep_csv(&pts);
        assert!(csv.lines().nth(1).unwrap().contains(",,"));
        let report = summarize_sweep(&pts, Interval::new(1e-6, 1.0));
        assert_eq!(report.missing_points, 50);
        assert_eq!(report.median_rel_err, None);
    }

    #[test]
    fn extrapolation_flag() {
        let trained = Interval::new(1e-3, 1.0);
        let perfect = convergence_report(&oracle(), &SweepSpec::default(), trained).unwrap();
        assert_eq!(perfect.max_rel_err, Some(0.0));
        assert_eq!(perfect.extrapolation_decreasing, Some(true));
        let flat = convergence_report(&Constant(0.8), &SweepSpec::default(), trained).unwrap();
        assert_eq!(flat.extrapolation_decreasing, Some(false));
        let none =
            convergence_report(&oracle(), &SweepSpec::default(), Interval::new(1e-6, 1.0)).unwrap();
        assert_eq!(none.extrapolation_decreasing, None);
        assert_eq!(none.in_range_points, 50);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }

    #[test]
    fn oracle_phase_space_peak() {
        let results = phase_space_grids(&oracle(), &PhaseSpaceSpec::default()).unwrap();
        assert_eq!(results.len(), 3);
        let r = results[0].as_ref().unwrap();
        let (px, pp) = r.peak_location();
        let dx = r.grid.dx();
        assert!((px - 0.283_662).abs() <= 0.5 * dx + 1e-12);
        assert!((pp - 0.958_924).abs() <= 0.5 * dx + 1e-12);
        let exact = 1.0 / std::f64::consts::PI;
        assert!((r.center_value - exact).abs() < 1e-15);
        assert!(r.peak_value <= exact && r.peak_value > 0.98 * exact);
        assert_eq!(r.contour_levels.len(), 20);
        assert_eq!(r.contour_levels[0], r.grid.min());
        assert_eq!(r.contour_levels[19], r.grid.max());
        let small = results[2].as_ref().unwrap();
        assert!((small.center_value / r.center_value - 100.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_phase_space_grid() {
        struct Origin;
        impl Emulator for Origin {
            fn input_dim(&self) -> usize {
                4
            }
            fn output_dim(&self) -> usize {
                4
            }
            fn predict(&self, inputs: ndarray::ArrayView2<f64>) -> Result<Array2<f64>> {
                Ok(Array2::from_shape_fn((inputs.nrows(), 4), |(_, j)| {
                    if j < 2 {
                        0.0
                    } else {
                        1.3
                    }
                }))
            }
        }
        let results = phase_space_grids(&Origin, &PhaseSpaceSpec::default()).unwrap();
        let g = &results[1].as_ref().unwrap().grid.values;
        let n = g.nrows();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(g[[i, j]], g[[n - 1 - i, n - 1 - j]]);
            }
        }
    }

    #[test]
    fn degenerate_prediction_is_per_hbar() {
        let results = phase_space_grids(&Constant(0.0), &PhaseSpaceSpec::default()).unwrap();
        assert!(results
            .iter()
            .all(|r| matches!(r, Err(Error::DegeneratePrediction { .. }))));
    }

    #[test]
    fn file_names() {
        assert_eq!(phase_space_file_name(1.0), "phasespace_hbar_1p00e0.csv");
        assert_eq!(phase_space_file_name(0.1), "phasespace_hbar_1p00e-1.csv");
        assert_eq!(phase_space_file_name(0.01), "phasespace_hbar_1p00e-2.csv");
    }
}
