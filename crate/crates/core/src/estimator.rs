//! Regularized least-squares impulse-response estimation.
//!
//! For outputs `y(t_i) = (g ∗ u)(t_i) + v(t_i)` the minimizer of
//! `Σ (y(t_i) - (g∗u)(t_i))² + γ‖g‖²_H` is `ĝ(t) = Σ_s ĉ_s a(t, t_s)` with
//!
//! ```text
//! a(t, s)  = ∫₀^s k(t, τ) u(s - τ) dτ
//! A_{ts}   = ∫₀^t a(τ, s) u(t - τ) dτ
//! ĉ        = (A + γI)⁻¹ Y
//! ```
//!
//! The input is zero for negative times, which truncates both integrals.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::quadrature::{GaussLegendre, Mesh};

/// Smallest regularization used when neither `γ` nor a noise variance is given.
pub const GAMMA_FLOOR: f64 = 1e-10;

/// Fraction of the samples, taken from the end, held out by the γ search.
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// `c e^{-r t}` for `t ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpTerm {
    pub coefficient: f64,
    pub rate: f64,
}

/// System input; zero for `t < 0` in every variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Input {
    /// Dirac impulse at 0.
    Impulse,
    /// Unit step.
    Step,
    /// `Σ_k c_k e^{-r_k t}`.
    ExpSum { terms: Vec<ExpTerm> },
    /// Zero-order hold of `values[j]` on `[times[j], times[j+1])`; the last
    /// value is held indefinitely.
    SampledZoh { times: Vec<f64>, values: Vec<f64> },
}

impl Input {
    pub fn validate(&self) -> Result<()> {
        match self {
            Input::Impulse | Input::Step => Ok(()),
            Input::ExpSum { terms } => {
                if terms.iter().all(|t| t.coefficient.is_finite() && t.rate.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::InvalidInput("exponential input terms must be finite".into()))
                }
            }
            Input::SampledZoh { times, values } => {
                if times.len() != values.len() {
                    return Err(Error::InvalidInput(format!(
                        "input has {} times but {} values",
                        times.len(),
                        values.len()
                    )));
                }
                if times.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("input samples must be finite".into()));
                }
                if times.first().is_some_and(|&t| t < 0.0) {
                    return Err(Error::InvalidInput("input times must be non-negative".into()));
                }
                if let Some(i) = times.windows(2).position(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidInput(format!(
                        "input times must be strictly increasing (index {})",
                        i + 1
                    )));
                }
                Ok(())
            }
        }
    }

    /// `u(t)` for the non-impulsive variants.
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Input::Impulse => 0.0,
            Input::Step => 1.0,
            Input::ExpSum { terms } => terms.iter().map(|e| e.coefficient * (-e.rate * t).exp()).sum(),
            Input::SampledZoh { times, values } => {
                match times.partition_point(|&z| z <= t) {
                    0 => 0.0,
                    k => values[k - 1],
                }
            }
        }
    }

    /// Instants where `u` jumps.
    fn switches(&self) -> &[f64] {
        match self {
            Input::SampledZoh { times, .. } => times,
            _ => &[],
        }
    }
}

/// Observed outputs and the input that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    output_times: Vec<f64>,
    outputs: Vec<f64>,
    input: Input,
    noise_variance: f64,
}

impl Dataset {
    pub fn new(output_times: Vec<f64>, outputs: Vec<f64>, input: Input, noise_variance: f64) -> Result<Self> {
        if output_times.is_empty() {
            return Err(Error::InvalidInput("dataset has no samples".into()));
        }
        if output_times.len() != outputs.len() {
            return Err(Error::InvalidInput(format!(
                "{} output times but {} outputs",
                output_times.len(),
                outputs.len()
            )));
        }
        if output_times.iter().chain(&outputs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("outputs and times must be finite".into()));
        }
        if output_times[0] < 0.0 {
            return Err(Error::InvalidInput("output times must be non-negative".into()));
        }
        if let Some(i) = output_times.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "output times must be strictly increasing (index {})",
                i + 1
            )));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise variance must be non-negative, got {noise_variance}"
            )));
        }
        input.validate()?;
        Ok(Self {
            output_times,
            outputs,
            input,
            noise_variance,
        })
    }

    pub fn output_times(&self) -> &[f64] {
        &self.output_times
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn input(&self) -> &Input {
        &self.input
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    fn subset(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            output_times: self.output_times[range.clone()].to_vec(),
            outputs: self.outputs[range].to_vec(),
            input: self.input.clone(),
            noise_variance: self.noise_variance,
        }
    }
}

/// Composite Gauss–Legendre settings for the convolution integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvolutionQuadrature {
    /// Largest panel width, in time units.
    pub panel_width: f64,
    /// Nodes per panel.
    pub nodes: usize,
    /// Agreement required between two successive halvings of the width,
    /// relative to the largest entry of `A`.
    pub tolerance: f64,
    pub max_refinements: usize,
}

impl Default for ConvolutionQuadrature {
    fn default() -> Self {
        Self {
            panel_width: 1.0,
            nodes: 8,
            tolerance: 1e-10,
            max_refinements: 3,
        }
    }
}

impl ConvolutionQuadrature {
    pub fn validate(&self) -> Result<()> {
        if !(self.panel_width > 0.0 && self.panel_width.is_finite()) || self.nodes == 0 {
            return Err(Error::InvalidInput(
                "convolution panel width and node count must be positive".into(),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("convolution tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Panel width halved `level` times.
    pub fn refined(&self, level: u32) -> Self {
        Self {
            panel_width: self.panel_width / (1u64 << level) as f64,
            ..self.clone()
        }
    }
}

/// Evaluator for `a(t, s)` and `A` at one quadrature resolution.
#[derive(Debug, Clone)]
pub struct OutputKernel {
    spec: KernelSpec,
    input: Input,
    width: f64,
    rule: GaussLegendre,
}

impl OutputKernel {
    pub fn new(spec: &KernelSpec, input: &Input, quad: &ConvolutionQuadrature) -> Result<Self> {
        quad.validate()?;
        input.validate()?;
        Ok(Self {
            spec: *spec,
            input: input.clone(),
            width: quad.panel_width,
            rule: GaussLegendre::new(quad.nodes),
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    fn mesh(&self, end: f64, anchors: impl Iterator<Item = f64>) -> Mesh {
        let anchors: Vec<f64> = anchors.filter(|&p| p > 0.0 && p < end).collect();
        Mesh::segmented(0.0, end, &anchors, self.width, 1)
    }

    /// `a(t, s) = ∫₀^s k(t, τ) u(s - τ) dτ`.
    pub fn a(&self, t: f64, s: f64) -> f64 {
        if let Input::Impulse = self.input {
            return self.spec.value(t, s);
        }
        if s <= 0.0 {
            return 0.0;
        }
        let anchors = std::iter::once(t).chain(self.input.switches().iter().map(|z| s - z));
        self.mesh(s, anchors)
            .integrate(&self.rule, |tau| self.spec.value(t, tau) * self.input.value(s - tau))
    }

    /// `A_{ts} = ∫₀^t a(τ, s) u(t - τ) dτ`.
    pub fn entry(&self, t: f64, s: f64) -> f64 {
        if let Input::Impulse = self.input {
            return self.spec.value(t, s);
        }
        if t <= 0.0 {
            return 0.0;
        }
        let z = self.input.switches();
        // a(·, s) loses smoothness at s and at s - z_j, u(t - ·) jumps at t - z_j
        let anchors = std::iter::once(s)
            .chain(z.iter().map(|z| t - z))
            .chain(z.iter().map(|z| s - z));
        self.mesh(t, anchors)
            .integrate(&self.rule, |tau| self.a(tau, s) * self.input.value(t - tau))
    }

    /// `A` on the given times, upper triangle computed in parallel and
    /// mirrored.
    pub fn matrix(&self, times: &[f64]) -> DMatrix<f64> {
        let n = times.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| self.entry(times[i], times[j])).collect())
            .collect();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                m[(i, i + off)] = v;
                m[(i + off, i)] = v;
            }
        }
        m
    }
}

/// `A` together with the evaluator at the resolution that produced it.
#[derive(Debug, Clone)]
pub struct OutputKernelMatrix {
    pub kernel: OutputKernel,
    pub matrix: DMatrix<f64>,
    /// Panel halvings used beyond the configured width.
    pub refinements: u32,
    /// Max entry change over the last halving.
    pub last_change: f64,
}

/// Builds `A` for the dataset, halving the panel width until two successive
/// matrices agree to the configured tolerance.
pub fn output_kernel(spec: &KernelSpec, dataset: &Dataset, quad: &ConvolutionQuadrature) -> Result<OutputKernelMatrix> {
    for &t in dataset.output_times() {
        spec.check_point(t)?;
    }
    let times = dataset.output_times();
    let base = OutputKernel::new(spec, dataset.input(), quad)?;
    if let Input::Impulse = dataset.input() {
        let matrix = base.matrix(times);
        return Ok(OutputKernelMatrix {
            kernel: base,
            matrix,
            refinements: 0,
            last_change: 0.0,
        });
    }
    let mut coarse = base.matrix(times);
    for level in 1..=quad.max_refinements.max(1) as u32 {
        let kernel = OutputKernel::new(spec, dataset.input(), &quad.refined(level))?;
        let fine = kernel.matrix(times);
        let change = (&fine - &coarse).amax();
        let scale = fine.amax();
        if !change.is_finite() {
            return Err(Error::Quadrature {
                coarse: coarse.amax(),
                fine: scale,
            });
        }
        if change <= quad.tolerance * scale.max(f64::MIN_POSITIVE) {
            return Ok(OutputKernelMatrix {
                kernel,
                matrix: fine,
                refinements: level,
                last_change: change,
            });
        }
        coarse = fine;
    }
    Err(Error::Quadrature {
        coarse: coarse.amax(),
        fine: coarse.amax(),
    })
}

/// `(A + γI)⁻¹ Y` through a Cholesky factorization.
pub fn solve(a: &DMatrix<f64>, y: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "regularization weight must be positive, got {gamma}"
        )));
    }
    let n = y.len();
    if a.shape() != (n, n) {
        return Err(Error::InvalidInput(format!(
            "A is {:?} but Y has {n} entries",
            a.shape()
        )));
    }
    let mut system = a.clone();
    for i in 0..n {
        system[(i, i)] += gamma;
    }
    let chol = Cholesky::new(system)
        .ok_or_else(|| Error::Factorization("A + γI is not numerically positive definite".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(y)).as_slice().to_vec())
}

/// Where the regularization weight came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSource {
    Given,
    NoiseVariance,
    /// σ² = 0 and no γ given, so [`GAMMA_FLOOR`] was used.
    Floor,
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    coefficients: Vec<f64>,
    gamma: f64,
    gamma_source: GammaSource,
    output_times: Vec<f64>,
    outputs: Vec<f64>,
    kernel: OutputKernel,
    a: DMatrix<f64>,
}

/// Fits the dataset. `gamma = None` uses σ², or [`GAMMA_FLOOR`] when σ² = 0.
pub fn estimate(
    spec: &KernelSpec,
    dataset: &Dataset,
    quad: &ConvolutionQuadrature,
    gamma: Option<f64>,
) -> Result<EstimateResult> {
    let (gamma, gamma_source) = match gamma {
        Some(g) => (g, GammaSource::Given),
        None if dataset.noise_variance() > 0.0 => (dataset.noise_variance(), GammaSource::NoiseVariance),
        None => (GAMMA_FLOOR, GammaSource::Floor),
    };
    let okm = output_kernel(spec, dataset, quad)?;
    let coefficients = solve(&okm.matrix, dataset.outputs(), gamma)?;
    Ok(EstimateResult {
        coefficients,
        gamma,
        gamma_source,
        output_times: dataset.output_times().to_vec(),
        outputs: dataset.outputs().to_vec(),
        kernel: okm.kernel,
        a: okm.matrix,
    })
}

impl EstimateResult {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn gamma_source(&self) -> GammaSource {
        self.gamma_source
    }

    pub fn spec(&self) -> &KernelSpec {
        self.kernel.spec()
    }

    pub fn output_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `ĝ(t) = Σ_s ĉ_s a(t, t_s)`.
    pub fn reconstruct(&self, t: f64) -> Result<f64> {
        self.kernel.spec().check_point(t)?;
        Ok(self
            .coefficients
            .iter()
            .zip(&self.output_times)
            .map(|(c, &s)| c * self.kernel.a(t, s))
            .sum())
    }

    /// Model outputs `A ĉ` at the observation times.
    pub fn fitted(&self) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(&self.coefficients)).as_slice().to_vec()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.outputs.iter().zip(self.fitted()).map(|(y, f)| y - f).collect()
    }

    /// `‖(A + γI)ĉ - Y‖ / ‖Y‖`.
    pub fn solve_residual(&self) -> f64 {
        let c = DVector::from_column_slice(&self.coefficients);
        let y = DVector::from_column_slice(&self.outputs);
        let r = &self.a * &c + &c * self.gamma - &y;
        let norm = y.norm();
        if norm == 0.0 {
            r.norm()
        } else {
            r.norm() / norm
        }
    }

    /// Normalized fit `100 (1 - ‖Y - Ŷ‖ / ‖Y - mean(Y)‖)`.
    pub fn fit_percent(&self) -> f64 {
        fit_percent(&self.outputs, &self.fitted())
    }
}

pub fn reconstruct(result: &EstimateResult, t: f64) -> Result<f64> {
    result.reconstruct(t)
}

pub fn fit_percent(reference: &[f64], model: &[f64]) -> f64 {
    let mean = reference.iter().sum::<f64>() / reference.len().max(1) as f64;
    let err: f64 = reference.iter().zip(model).map(|(a, b)| (a - b).powi(2)).sum();
    let spread: f64 = reference.iter().map(|a| (a - mean).powi(2)).sum();
    if spread == 0.0 {
        return if err == 0.0 { 100.0 } else { f64::NEG_INFINITY };
    }
    100.0 * (1.0 - (err / spread).sqrt())
}

/// Held-out losses of every candidate and the winner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSearch {
    pub best: f64,
    pub best_loss: f64,
    /// `(γ, held-out squared error)` in the order given.
    pub losses: Vec<(f64, f64)>,
    pub train_len: usize,
}

/// Picks `γ` minimizing squared prediction error on the chronologically last
/// 20% of the samples after fitting the rest. Exact ties go to the larger γ.
pub fn grid_search_gamma(
    spec: &KernelSpec,
    dataset: &Dataset,
    gammas: &[f64],
    quad: &ConvolutionQuadrature,
) -> Result<GammaSearch> {
    if gammas.is_empty() {
        return Err(Error::InvalidInput("γ grid is empty".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::InvalidInput(format!("γ grid values must be positive, got {g}")));
    }
    let n = dataset.len();
    if n < 5 {
        return Err(Error::InvalidInput(format!(
            "held-out split needs at least 5 samples, got {n}"
        )));
    }
    let held = ((n as f64 * HOLDOUT_FRACTION).ceil() as usize).clamp(1, n - 1);
    let train_len = n - held;
    let full = output_kernel(spec, dataset, quad)?.matrix;
    let a_train = full.view((0, 0), (train_len, train_len)).into_owned();
    let a_cross = full.view((train_len, 0), (held, train_len)).into_owned();
    let train = dataset.subset(0..train_len);
    let held_y = &dataset.outputs()[train_len..];
    let losses = gammas
        .iter()
        .map(|&g| {
            let c = solve(&a_train, train.outputs(), g)?;
            let pred = &a_cross * DVector::from_column_slice(&c);
            let loss: f64 = held_y.iter().zip(pred.iter()).map(|(y, p)| (y - p).powi(2)).sum();
            Ok((g, loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let (best, best_loss) = losses
        .iter()
        .copied()
        .reduce(|acc, cand| {
            if cand.1 < acc.1 || (cand.1 == acc.1 && cand.0 > acc.0) {
                cand
            } else {
                acc
            }
        })
        .expect("grid is non-empty");
    Ok(GammaSearch {
        best,
        best_loss,
        losses,
        train_len,
    })
}
