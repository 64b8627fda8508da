//! Maximum-entropy Gaussian processes on ordered grids.
//!
//! On a unit grid `0 = τ₀ < τ₁ < … < τ_n ≤ 1` the generalized-spline process
//! is `f(τ_k) = τ_k^ρ Σ_{i=1}^{k} w(i-1) √(τ_i - τ_{i-1})`. On a half-line grid
//! `t₀ < … < t_{n-1}` with `t_n = ∞` the DC process is the anticausal sum
//!
//! ```text
//! g(t_k) = e^{-2βρ t_k} Σ_{i=k}^{n-1} w(n-1-i) √(e^{-2βt_i} - e^{-2βt_{i+1}})
//! ```
//!
//! which is also generated backward in time by the order-1 recursion
//!
//! ```text
//! g(t_{n-1}) = e^{-α t_{n-1}} w̄(n-1)
//! g(t_i)     = e^{-2βρ(t_i - t_{i+1})} g(t_{i+1}) + e^{-2βρ t_i} √(e^{-2βt_i} - e^{-2βt_{i+1}}) w̄(i)
//! ```
//!
//! Writing `b_i = e^{-2βρ t_i}`, the scaled path `l_i = g(t_i)/b_i` is a random
//! walk run from `t_{n-1}` back to `t₀` with independent increments of variance
//! `Δ_i = e^{-2βt_i} - e^{-2βt_{i+1}}`. Everything in this module is built on
//! that pair `(b, Δ)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridDomain, TimeGrid};
use crate::kernels::KernelSpec;

const MOMENT_CHUNK: usize = 4096;

/// Standard normal variates from a ChaCha stream via Box–Muller.
///
/// Each `(seed, stream)` pair is an independent, reproducible sequence, so
/// sample `j` of a batch can be regenerated without drawing samples `0..j`.
pub struct NoiseStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Uniform on `(0, 1]` with 53 random bits.
    fn open_unit(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let radius = (-2.0 * self.open_unit().ln()).sqrt();
        let angle = 2.0 * PI * self.open_unit();
        let (sin, cos) = angle.sin_cos();
        self.spare = Some(radius * sin);
        radius * cos
    }

    pub fn normals(seed: u64, stream: u64, count: usize) -> Vec<f64> {
        let mut noise = Self::new(seed, stream);
        (0..count).map(|_| noise.next_normal()).collect()
    }
}

/// One realization of a process on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSample {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
    seed: u64,
    index: u64,
}

impl GaussianSample {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position of the sample in its batch; also its noise stream id.
    pub fn index(&self) -> u64 {
        self.index
    }
}

fn check_domain(grid: &TimeGrid, expected: GridDomain) -> Result<()> {
    if grid.domain() != expected {
        return Err(Error::InvalidGrid(format!(
            "expected a {expected:?} grid, got {:?}",
            grid.domain()
        )));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > -0.5 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidHyperparameter(format!(
            "rho must exceed -0.5, got {rho}"
        )))
    }
}

fn sample_batch<F>(grid: &TimeGrid, seed: u64, count: usize, path: F) -> Vec<GaussianSample>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let grid = Arc::new(grid.clone());
    let n = grid.len();
    (0..count as u64)
        .into_par_iter()
        .map(|index| GaussianSample {
            values: path(&NoiseStream::normals(seed, index, n)),
            grid: Arc::clone(&grid),
            seed,
            index,
        })
        .collect()
}

/// Increments `τ_i - τ_{i-1}` of a unit grid, with `τ₀ = 0`.
fn unit_increments(tau: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    tau.iter()
        .map(|&x| {
            let d = x - prev;
            prev = x;
            d
        })
        .collect()
}

/// Draws `count` paths of the generalized-spline MaxEnt process.
pub fn sample_genspline_process(
    grid: &TimeGrid,
    rho: f64,
    seed: u64,
    count: usize,
) -> Result<Vec<GaussianSample>> {
    check_domain(grid, GridDomain::Unit01)?;
    check_rho(rho)?;
    let tau = grid.points();
    let scale: Vec<f64> = tau.iter().map(|x| x.powf(rho)).collect();
    let root: Vec<f64> = unit_increments(tau).iter().map(|d| d.sqrt()).collect();
    Ok(sample_batch(grid, seed, count, |w| {
        let mut acc = 0.0;
        (0..tau.len())
            .map(|k| {
                acc += w[k] * root[k];
                scale[k] * acc
            })
            .collect()
    }))
}

/// Exact covariance of [`sample_genspline_process`], formed as `C Cᵀ` from
/// the noise loading matrix.
pub fn genspline_process_covariance(grid: &TimeGrid, rho: f64) -> Result<DMatrix<f64>> {
    check_domain(grid, GridDomain::Unit01)?;
    check_rho(rho)?;
    let tau = grid.points();
    let root: Vec<f64> = unit_increments(tau).iter().map(|d| d.sqrt()).collect();
    let n = tau.len();
    let c = DMatrix::from_fn(n, n, |k, i| {
        if i <= k {
            tau[k].powf(rho) * root[i]
        } else {
            0.0
        }
    });
    Ok(&c * c.transpose())
}

/// Scale factors and walk increments of the DC process on a half-line grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovFactors {
    alpha: f64,
    beta: f64,
    times: Vec<f64>,
    scale: Vec<f64>,
    increments: Vec<f64>,
}

impl MarkovFactors {
    /// Requires a half-line grid and a TC or DC kernel.
    pub fn new(grid: &TimeGrid, spec: &KernelSpec) -> Result<Self> {
        check_domain(grid, GridDomain::HalfLine)?;
        let (alpha, beta) = spec.decay_rates().ok_or_else(|| {
            Error::InvalidInput(format!(
                "the {} kernel has no DC Markov structure",
                spec.name()
            ))
        })?;
        let t = grid.points();
        let n = t.len();
        // 2βρ = α - β
        let scale = t.iter().map(|&x| (-(alpha - beta) * x).exp()).collect();
        let increments = (0..n)
            .map(|i| {
                let head = (-2.0 * beta * t[i]).exp();
                if i + 1 < n {
                    -head * (-2.0 * beta * (t[i + 1] - t[i])).exp_m1()
                } else {
                    head
                }
            })
            .collect();
        Ok(Self {
            alpha,
            beta,
            times: t.to_vec(),
            scale,
            increments,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `b_i = e^{-2βρ t_i}`.
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// `Δ_i = e^{-2βt_i} - e^{-2βt_{i+1}}`, and `e^{-2βt_{n-1}}` last.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Coefficient of `g(t_{i+1})` in the backward recursion for `g(t_i)`.
    pub fn transition(&self, i: usize) -> f64 {
        ((self.alpha - self.beta) * (self.times[i + 1] - self.times[i])).exp()
    }

    /// Variance of the innovation entering at `t_i`.
    pub fn innovation_variance(&self, i: usize) -> f64 {
        self.scale[i] * self.scale[i] * self.increments[i]
    }
}

/// Draws `count` paths of the anticausal DC construction.
pub fn sample_dc_process(
    grid: &TimeGrid,
    spec: &KernelSpec,
    seed: u64,
    count: usize,
) -> Result<Vec<GaussianSample>> {
    let mf = MarkovFactors::new(grid, spec)?;
    let root: Vec<f64> = mf.increments.iter().map(|d| d.sqrt()).collect();
    let n = mf.len();
    Ok(sample_batch(grid, seed, count, |w| {
        let mut g = vec![0.0; n];
        let mut acc = 0.0;
        for k in (0..n).rev() {
            acc += w[n - 1 - k] * root[k];
            g[k] = mf.scale[k] * acc;
        }
        g
    }))
}

/// Draws `count` paths through the backward Markov recursion. The innovation
/// at `t_i` is `w̄(i) = w(n-1-i)`, so for equal seeds the paths coincide with
/// [`sample_dc_process`] up to rounding.
pub fn sample_dc_markov(
    grid: &TimeGrid,
    spec: &KernelSpec,
    seed: u64,
    count: usize,
) -> Result<Vec<GaussianSample>> {
    let mf = MarkovFactors::new(grid, spec)?;
    let n = mf.len();
    let shock: Vec<f64> = (0..n).map(|i| mf.innovation_variance(i).sqrt()).collect();
    let transition: Vec<f64> = (0..n.saturating_sub(1)).map(|i| mf.transition(i)).collect();
    let alpha = mf.alpha;
    Ok(sample_batch(grid, seed, count, |w| {
        let mut g = vec![0.0; n];
        if n == 0 {
            return g;
        }
        g[n - 1] = (-alpha * mf.times[n - 1]).exp() * w[0];
        for i in (0..n - 1).rev() {
            g[i] = transition[i] * g[i + 1] + shock[i] * w[n - 1 - i];
        }
        g
    }))
}

/// Exact covariance of [`sample_dc_process`] as `C Cᵀ`.
pub fn dc_process_covariance(grid: &TimeGrid, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let mf = MarkovFactors::new(grid, spec)?;
    let n = mf.len();
    let c = DMatrix::from_fn(n, n, |k, j| {
        let i = n - 1 - j;
        if i >= k {
            mf.scale[k] * mf.increments[i].sqrt()
        } else {
            0.0
        }
    });
    Ok(&c * c.transpose())
}

/// Exact covariance of [`sample_dc_markov`] by propagating second moments
/// through the recursion from `t_{n-1}` back to `t₀`.
pub fn dc_markov_covariance(grid: &TimeGrid, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let mf = MarkovFactors::new(grid, spec)?;
    let n = mf.len();
    let mut p = DMatrix::zeros(n, n);
    if n == 0 {
        return Ok(p);
    }
    let last = (-mf.alpha * mf.times[n - 1]).exp();
    p[(n - 1, n - 1)] = last * last;
    for i in (0..n - 1).rev() {
        let a = mf.transition(i);
        for j in i + 1..n {
            let c = a * p[(i + 1, j)];
            p[(i, j)] = c;
            p[(j, i)] = c;
        }
        p[(i, i)] = a * a * p[(i + 1, i + 1)] + mf.innovation_variance(i);
    }
    Ok(p)
}

/// Moment sums over a batch of paths; batches merge in a fixed order.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    n: usize,
    count: u64,
    sum: Vec<f64>,
    prod: Vec<f64>,
    prod_sq: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            count: 0,
            sum: vec![0.0; n],
            prod: vec![0.0; n * n],
            prod_sq: vec![0.0; n * n],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.n);
        self.count += 1;
        for j in 0..self.n {
            self.sum[j] += x[j];
            for k in j..self.n {
                let p = x[j] * x[k];
                self.prod[j * self.n + k] += p;
                self.prod_sq[j * self.n + k] += p * p;
            }
        }
    }

    pub fn merge(mut self, other: &Self) -> Self {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.prod.iter_mut().zip(&other.prod) {
            *a += b;
        }
        for (a, b) in self.prod_sq.iter_mut().zip(&other.prod_sq) {
            *a += b;
        }
        self
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Sample moments about the known zero mean.
    pub fn finish(&self) -> Result<EmpiricalMoments> {
        if self.count == 0 {
            return Err(Error::InvalidInput("no samples to summarize".into()));
        }
        let n = self.n;
        let count = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / count).collect();
        let mut covariance = DMatrix::zeros(n, n);
        let mut covariance_se = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in j..n {
                let c = self.prod[j * n + k] / count;
                let m4 = self.prod_sq[j * n + k] / count;
                let se = ((m4 - c * c).max(0.0) / count).sqrt();
                covariance[(j, k)] = c;
                covariance[(k, j)] = c;
                covariance_se[(j, k)] = se;
                covariance_se[(k, j)] = se;
            }
        }
        let mean_se = (0..n).map(|j| (covariance[(j, j)] / count).sqrt()).collect();
        Ok(EmpiricalMoments {
            count: self.count,
            mean,
            mean_se,
            covariance,
            covariance_se,
        })
    }
}

/// Monte-Carlo moments with standard errors from fourth moments.
#[derive(Debug, Clone)]
pub struct EmpiricalMoments {
    pub count: u64,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// `E[x xᵀ]`, which is the covariance for a zero-mean process.
    pub covariance: DMatrix<f64>,
    pub covariance_se: DMatrix<f64>,
}

impl EmpiricalMoments {
    /// Largest `|Ĉ_jk - C_jk| / SE_jk` against a reference covariance.
    pub fn max_standardized_error(&self, reference: &DMatrix<f64>) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..self.covariance.nrows() {
            for k in j..self.covariance.ncols() {
                let gap = (self.covariance[(j, k)] - reference[(j, k)]).abs();
                let se = self.covariance_se[(j, k)];
                let z = if se > 0.0 {
                    gap / se
                } else if gap == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(z);
            }
        }
        worst
    }
}

fn sample_paths(samples: &[GaussianSample]) -> Result<usize> {
    let n = samples.first().map_or(0, |s| s.values.len());
    if samples.iter().any(|s| s.values.len() != n) {
        return Err(Error::InvalidInput("samples have differing lengths".into()));
    }
    Ok(n)
}

/// Moments of a sample batch, reduced chunk-wise in parallel and merged in
/// chunk order so the result does not depend on the thread count.
pub fn empirical_moments(samples: &[GaussianSample]) -> Result<EmpiricalMoments> {
    let n = sample_paths(samples)?;
    let partial: Vec<MomentAccumulator> = samples
        .par_chunks(MOMENT_CHUNK)
        .map(|chunk| {
            let mut acc = MomentAccumulator::new(n);
            for s in chunk {
                acc.add(&s.values);
            }
            acc
        })
        .collect();
    partial
        .iter()
        .fold(MomentAccumulator::new(n), |acc, p| acc.merge(p))
        .finish()
}

/// Which MaxEnt constraint a check refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// `E h(t_i) = 0`.
    ZeroMean(usize),
    /// `var(h(t_{i+1})/b_{i+1} - h(t_i)/b_i) = Δ_i`.
    Increment(usize),
    /// `var(h(t_{n-1})/b_{n-1}) = e^{-2βt_{n-1}}`.
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCheck {
    pub constraint: Constraint,
    pub target: f64,
    pub value: f64,
    pub residual: f64,
    /// Absolute bound on the exact path, three standard errors otherwise.
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn max_residual(&self) -> f64 {
        self.checks.iter().map(|c| c.residual).fold(0.0, f64::max)
    }
}

/// Moments to test against the constraint set.
pub enum Moments<'a> {
    /// Zero mean and the given covariance, checked to `tolerance`.
    Exact {
        covariance: &'a DMatrix<f64>,
        tolerance: f64,
    },
    /// Monte-Carlo paths, checked to three standard errors.
    Samples(&'a [GaussianSample]),
}

pub const EXACT_CONSTRAINT_TOLERANCE: f64 = 1e-13;

/// A constraint, its sparse coefficients over the grid, and the target variance.
type Functional = (Constraint, Vec<(usize, f64)>, f64);

/// Unit-scaled linear functionals whose variances the constraints fix.
fn constraint_functionals(mf: &MarkovFactors) -> Vec<Functional> {
    let n = mf.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n.saturating_sub(1) {
        out.push((
            Constraint::Increment(i),
            vec![(i + 1, 1.0 / mf.scale[i + 1]), (i, -1.0 / mf.scale[i])],
            mf.increments[i],
        ));
    }
    if n > 0 {
        out.push((
            Constraint::Terminal,
            vec![(n - 1, 1.0 / mf.scale[n - 1])],
            mf.increments[n - 1],
        ));
    }
    out
}

/// Checks the zero-mean and increment-variance constraints that single out
/// the DC process.
pub fn verify_maxent_constraints(
    moments: Moments<'_>,
    grid: &TimeGrid,
    spec: &KernelSpec,
) -> Result<ConstraintReport> {
    let mf = MarkovFactors::new(grid, spec)?;
    let n = mf.len();
    let functionals = constraint_functionals(&mf);
    let mut checks = Vec::with_capacity(2 * n);
    match moments {
        Moments::Exact {
            covariance,
            tolerance,
        } => {
            if covariance.shape() != (n, n) {
                return Err(Error::InvalidInput(format!(
                    "covariance is {:?}, grid has {n} points",
                    covariance.shape()
                )));
            }
            for i in 0..n {
                checks.push(ConstraintCheck {
                    constraint: Constraint::ZeroMean(i),
                    target: 0.0,
                    value: 0.0,
                    residual: 0.0,
                    tolerance,
                    passed: true,
                });
            }
            for (constraint, coef, target) in functionals {
                let mut value = 0.0;
                for &(a, ca) in &coef {
                    for &(b, cb) in &coef {
                        value += ca * cb * covariance[(a, b)];
                    }
                }
                let residual = (value - target).abs();
                checks.push(ConstraintCheck {
                    constraint,
                    target,
                    value,
                    residual,
                    tolerance,
                    passed: residual <= tolerance,
                });
            }
        }
        Moments::Samples(samples) => {
            if sample_paths(samples)? != n || samples.is_empty() {
                return Err(Error::InvalidInput(
                    "samples must be non-empty and match the grid".into(),
                ));
            }
            let moments = empirical_moments(samples)?;
            for i in 0..n {
                let residual = moments.mean[i].abs();
                let tolerance = 3.0 * moments.mean_se[i];
                checks.push(ConstraintCheck {
                    constraint: Constraint::ZeroMean(i),
                    target: 0.0,
                    value: moments.mean[i],
                    residual,
                    tolerance,
                    passed: residual <= tolerance,
                });
            }
            let count = samples.len() as f64;
            for (constraint, coef, target) in functionals {
                let (m2, m4) = samples
                    .iter()
                    .map(|s| {
                        let l: f64 = coef.iter().map(|&(a, c)| c * s.values[a]).sum();
                        let l2 = l * l;
                        (l2, l2 * l2)
                    })
                    .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
                let value = m2 / count;
                let se = ((m4 / count - value * value).max(0.0) / count).sqrt();
                let residual = (value - target).abs();
                checks.push(ConstraintCheck {
                    constraint,
                    target,
                    value,
                    residual,
                    tolerance: 3.0 * se,
                    passed: residual <= 3.0 * se,
                });
            }
        }
    }
    Ok(ConstraintReport { checks })
}

/// Competitor covariance for the entropy comparison: the walk increments
/// keep their variances `Δ_i` but are equicorrelated with coefficient `c`.
/// `c = 0` gives back the MaxEnt covariance.
pub fn correlated_increment_covariance(
    grid: &TimeGrid,
    spec: &KernelSpec,
    c: f64,
) -> Result<DMatrix<f64>> {
    let mf = MarkovFactors::new(grid, spec)?;
    let n = mf.len();
    let lower = if n > 1 { -1.0 / (n as f64 - 1.0) } else { -1.0 };
    if !(c > lower && c < 1.0) {
        return Err(Error::InvalidInput(format!(
            "correlation {c} does not give a positive definite matrix for n = {n}"
        )));
    }
    let root: Vec<f64> = mf.increments.iter().map(|d| d.sqrt()).collect();
    let inc = DMatrix::from_fn(n, n, |i, j| {
        let r = if i == j { 1.0 } else { c };
        root[i] * r * root[j]
    });
    // h_k = b_k Σ_{i ≥ k} e_i
    let load = DMatrix::from_fn(n, n, |k, i| if i >= k { mf.scale[k] } else { 0.0 });
    Ok(&load * inc * load.transpose())
}

/// `log det` of a symmetric positive definite matrix through Cholesky.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::Factorization("matrix is not positive definite".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Gaussian log-determinants of the MaxEnt covariance and of each competitor.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyComparison {
    pub maxent_log_det: f64,
    /// `(c, log det)` per competitor.
    pub controls: Vec<(f64, f64)>,
}

impl EntropyComparison {
    pub fn maxent_wins(&self) -> bool {
        self.controls.iter().all(|&(_, ld)| self.maxent_log_det > ld)
    }
}

pub fn entropy_comparison(
    grid: &TimeGrid,
    spec: &KernelSpec,
    correlations: &[f64],
) -> Result<EntropyComparison> {
    let maxent_log_det = log_det_spd(&dc_process_covariance(grid, spec)?)?;
    let controls = correlations
        .iter()
        .map(|&c| Ok((c, log_det_spd(&correlated_increment_covariance(grid, spec, c)?)?)))
        .collect::<Result<_>>()?;
    Ok(EntropyComparison {
        maxent_log_det,
        controls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::eval_kernel;
    use rand_chacha::rand_core::RngCore;
    use proptest::prelude::*;

    fn gram(spec: &KernelSpec, t: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(t.len(), t.len(), |i, j| eval_kernel(spec, t[i], t[j]).unwrap())
    }

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    fn random_half_line_grid(seed: u64, n: usize) -> TimeGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = rng.next_u64() as f64 / u64::MAX as f64;
        let points = (0..n)
            .map(|_| {
                let p = t;
                t += 0.05 + 0.5 * (rng.next_u64() as f64 / u64::MAX as f64);
                p
            })
            .collect();
        TimeGrid::half_line(points).unwrap()
    }

    #[test]
    fn noise_streams_are_reproducible_and_standard() {
        let a = NoiseStream::normals(7, 3, 100);
        assert_eq!(a, NoiseStream::normals(7, 3, 100));
        assert_ne!(a, NoiseStream::normals(7, 4, 100));
        let z = NoiseStream::normals(11, 0, 200_000);
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|x| x * x).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn genspline_exact_covariance_telescopes() {
        for rho in [-0.3, 0.0, 0.7, 2.0] {
            let grid = TimeGrid::unit(vec![0.05, 0.2, 0.33, 0.5, 0.81, 1.0]).unwrap();
            let cov = genspline_process_covariance(&grid, rho).unwrap();
            let oracle = gram(&KernelSpec::genspline1(rho).unwrap(), grid.points());
            assert!(max_abs_diff(&cov, &oracle) <= 1e-14, "rho {rho}");
        }
    }

    #[test]
    fn genspline_increment_variances_are_exact() {
        let rho = 0.6;
        let grid = TimeGrid::unit(vec![0.1, 0.25, 0.6, 0.9]).unwrap();
        let tau = grid.points();
        let cov = genspline_process_covariance(&grid, rho).unwrap();
        let mut prev = 0.0;
        for i in 0..tau.len() {
            let si = tau[i].powf(rho);
            let var = if i == 0 {
                cov[(0, 0)] / (si * si)
            } else {
                let sp = tau[i - 1].powf(rho);
                cov[(i, i)] / (si * si) + cov[(i - 1, i - 1)] / (sp * sp)
                    - 2.0 * cov[(i, i - 1)] / (si * sp)
            };
            assert!((var - (tau[i] - prev)).abs() <= 1e-14, "{i}");
            prev = tau[i];
        }
    }

    #[test]
    fn genspline_monte_carlo_matches_min_kernel() {
        let grid = TimeGrid::unit(vec![0.2, 0.5, 1.0]).unwrap();
        let samples = sample_genspline_process(&grid, 0.0, 2024, 100_000).unwrap();
        let m = empirical_moments(&samples).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0.2, 0.2, 0.2, 0.2, 0.5, 0.5, 0.2, 0.5, 1.0]);
        let z = m.max_standardized_error(&expected);
        assert!(z <= 3.0, "worst standardized error {z}");
    }

    #[test]
    fn dc_exact_covariance_is_the_kernel() {
        for seed in 0..20 {
            let grid = random_half_line_grid(seed, 2 + seed as usize % 19);
            let spec = KernelSpec::dc(0.3 + 0.1 * seed as f64, 0.2 + 0.05 * seed as f64).unwrap();
            let cov = dc_process_covariance(&grid, &spec).unwrap();
            assert!(max_abs_diff(&cov, &gram(&spec, grid.points())) <= 1e-14, "seed {seed}");
            for (i, &t) in grid.points().iter().enumerate() {
                let (alpha, _) = spec.decay_rates().unwrap();
                assert!((cov[(i, i)] - (-2.0 * alpha * t).exp()).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn equal_rates_reduce_to_tc() {
        let grid = random_half_line_grid(5, 8);
        let cov = dc_process_covariance(&grid, &KernelSpec::dc(0.4, 0.4).unwrap()).unwrap();
        let tc = gram(&KernelSpec::tc(0.4).unwrap(), grid.points());
        assert!(max_abs_diff(&cov, &tc) <= 1e-14);
    }

    #[test]
    fn markov_covariance_is_the_kernel() {
        for seed in 0..20 {
            let grid = random_half_line_grid(100 + seed, 1 + seed as usize % 20);
            let spec = KernelSpec::dc(0.2 + 0.15 * seed as f64, 0.1 + 0.07 * seed as f64).unwrap();
            let cov = dc_markov_covariance(&grid, &spec).unwrap();
            assert!(max_abs_diff(&cov, &gram(&spec, grid.points())) <= 1e-13, "seed {seed}");
            let law = dc_process_covariance(&grid, &spec).unwrap();
            assert!(max_abs_diff(&cov, &law) <= 1e-13);
        }
    }

    #[test]
    fn markov_boundary_cases() {
        let spec = KernelSpec::dc(1.0, 0.5).unwrap();
        let at_zero = dc_markov_covariance(&TimeGrid::half_line(vec![0.0, 1.0]).unwrap(), &spec).unwrap();
        assert!((at_zero[(0, 0)] - 1.0).abs() <= 1e-15);
        let single = dc_markov_covariance(&TimeGrid::half_line(vec![2.0]).unwrap(), &spec).unwrap();
        assert!((single[(0, 0)] - 0.0183156).abs() < 1e-7);
        assert!((single[(0, 0)] - (-4.0_f64).exp()).abs() <= 1e-16);
    }

    #[test]
    fn terminal_term_matches_alpha_form() {
        // √(e^{-2βt} - 0) e^{-2βρt} = e^{-αt} because β(2ρ+1) = α
        for (alpha, beta) in [(0.2, 0.3), (1.0, 0.5), (2.5, 0.1)] {
            let spec = KernelSpec::dc(alpha, beta).unwrap();
            let rho = spec.rho().unwrap();
            assert!((beta * (2.0 * rho + 1.0) - alpha).abs() <= 1e-15 * alpha.max(beta));
            let grid = TimeGrid::half_line(vec![0.3, 1.7]).unwrap();
            let mf = MarkovFactors::new(&grid, &spec).unwrap();
            let lhs = mf.scale()[1] * mf.increments()[1].sqrt();
            assert!((lhs - (-alpha * 1.7).exp()).abs() <= 1e-15);
        }
    }

    #[test]
    fn both_samplers_draw_the_same_paths() {
        let grid = random_half_line_grid(9, 12);
        let spec = KernelSpec::dc(0.7, 0.3).unwrap();
        let a = sample_dc_process(&grid, &spec, 42, 50).unwrap();
        let b = sample_dc_markov(&grid, &spec, 42, 50).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.values().iter().zip(y.values()) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }

    /// Propagates a forward recursion `g_{i+1} = a_i g_i + e_i` from
    /// `g_0 ~ N(0, v0)`.
    fn forward_covariance(a: &[f64], q: &[f64], v0: f64) -> DMatrix<f64> {
        let n = a.len() + 1;
        let mut p = DMatrix::zeros(n, n);
        p[(0, 0)] = v0;
        for i in 0..n - 1 {
            for j in 0..=i {
                p[(i + 1, j)] = a[i] * p[(i, j)];
                p[(j, i + 1)] = p[(i + 1, j)];
            }
            p[(i + 1, i + 1)] = a[i] * a[i] * p[(i, i)] + q[i];
        }
        p
    }

    #[test]
    fn forward_recursion_with_backward_coefficients_misses_the_law() {
        // Running the backward coefficients forward in time from g(t₀) does
        // not give the DC covariance, while the causal AR(1) form does.
        let grid = TimeGrid::half_line(vec![0.0, 0.4, 1.1, 2.0]).unwrap();
        let (alpha, beta) = (0.9, 0.3);
        let spec = KernelSpec::dc(alpha, beta).unwrap();
        let t = grid.points();
        let k = gram(&spec, t);
        let naive_a: Vec<f64> = t.windows(2).map(|w| (-(alpha - beta) * (w[1] - w[0])).exp()).collect();
        let naive_q: Vec<f64> = t
            .windows(2)
            .map(|w| (-2.0 * (alpha - beta) * w[1]).exp() * ((-2.0 * beta * w[0]).exp() - (-2.0 * beta * w[1]).exp()))
            .collect();
        let naive = forward_covariance(&naive_a, &naive_q, 1.0);
        assert!(max_abs_diff(&naive, &k) > 1e-2);
        let causal_a: Vec<f64> = t.windows(2).map(|w| (-(alpha + beta) * (w[1] - w[0])).exp()).collect();
        let causal_q: Vec<f64> = t
            .windows(2)
            .map(|w| (-2.0 * alpha * w[1]).exp() * -(-2.0 * beta * (w[1] - w[0])).exp_m1())
            .collect();
        let causal = forward_covariance(&causal_a, &causal_q, 1.0);
        assert!(max_abs_diff(&causal, &k) <= 1e-14);
    }

    #[test]
    fn coordinate_change_with_matched_noise() {
        let grid = random_half_line_grid(77, 9);
        let (alpha, beta) = (0.8, 0.35);
        let spec = KernelSpec::dc(alpha, beta).unwrap();
        let rho = spec.rho().unwrap();
        let t = grid.points();
        let n = t.len();
        let tau: Vec<f64> = (1..=n).map(|j| (-2.0 * beta * t[n - j]).exp()).collect();
        let unit = TimeGrid::unit(tau).unwrap();
        let g = sample_dc_process(&grid, &spec, 5, 20).unwrap();
        let f = sample_genspline_process(&unit, rho, 5, 20).unwrap();
        for (gs, fs) in g.iter().zip(&f) {
            for k in 0..n {
                let d = (gs.values()[k] - fs.values()[n - 1 - k]).abs();
                assert!(d <= 1e-14, "k {k}: {d}");
            }
        }
    }

    #[test]
    fn exact_constraints_hold_and_perturbation_is_flagged() {
        let grid = random_half_line_grid(3, 5);
        let spec = KernelSpec::dc(0.6, 0.25).unwrap();
        let cov = dc_process_covariance(&grid, &spec).unwrap();
        let report = verify_maxent_constraints(
            Moments::Exact {
                covariance: &cov,
                tolerance: EXACT_CONSTRAINT_TOLERANCE,
            },
            &grid,
            &spec,
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.max_residual() <= 1e-13);
        assert_eq!(report.checks.len(), 10);
        let inflated = &cov * 1.1;
        let bad = verify_maxent_constraints(
            Moments::Exact {
                covariance: &inflated,
                tolerance: EXACT_CONSTRAINT_TOLERANCE,
            },
            &grid,
            &spec,
        )
        .unwrap();
        assert!(!bad.passed());
        assert_eq!(bad.violations().count(), 5);
    }

    #[test]
    fn monte_carlo_constraints_and_covariance() {
        let grid = TimeGrid::half_line(vec![0.0, 0.5, 1.2, 2.0, 3.5]).unwrap();
        let spec = KernelSpec::dc(0.5, 0.3).unwrap();
        let samples = sample_dc_markov(&grid, &spec, 99, 100_000).unwrap();
        let report = verify_maxent_constraints(Moments::Samples(&samples), &grid, &spec).unwrap();
        assert!(report.passed(), "{:?}", report.violations().collect::<Vec<_>>());
        let m = empirical_moments(&samples).unwrap();
        let z = m.max_standardized_error(&gram(&spec, grid.points()));
        assert!(z <= 3.0, "{z}");

        let scaled: Vec<GaussianSample> = samples
            .iter()
            .map(|s| GaussianSample {
                values: s.values.iter().map(|v| v * 1.1_f64.sqrt()).collect(),
                ..s.clone()
            })
            .collect();
        let bad = verify_maxent_constraints(Moments::Samples(&scaled), &grid, &spec).unwrap();
        assert!(!bad.passed());
    }

    #[test]
    fn maxent_beats_correlated_competitors() {
        for seed in 0..10 {
            let grid = random_half_line_grid(500 + seed, 2 + seed as usize % 4);
            let spec = KernelSpec::dc(0.4 + 0.2 * seed as f64, 0.3).unwrap();
            for c in [0.2, 0.5] {
                let cov = correlated_increment_covariance(&grid, &spec, c).unwrap();
                let report = verify_maxent_constraints(
                    Moments::Exact {
                        covariance: &cov,
                        tolerance: EXACT_CONSTRAINT_TOLERANCE,
                    },
                    &grid,
                    &spec,
                )
                .unwrap();
                assert!(report.passed(), "competitor must be feasible");
            }
            let cmp = entropy_comparison(&grid, &spec, &[0.2, 0.5]).unwrap();
            assert!(cmp.maxent_wins(), "{cmp:?}");
        }
        let grid = random_half_line_grid(1, 4);
        let spec = KernelSpec::dc(1.0, 0.5).unwrap();
        let zero = correlated_increment_covariance(&grid, &spec, 0.0).unwrap();
        assert!(max_abs_diff(&zero, &dc_process_covariance(&grid, &spec).unwrap()) <= 1e-15);
    }

    #[test]
    fn empty_batches_and_bad_inputs() {
        let grid = TimeGrid::half_line(vec![0.0, 1.0]).unwrap();
        let spec = KernelSpec::dc(1.0, 0.5).unwrap();
        assert!(sample_dc_process(&grid, &spec, 1, 0).unwrap().is_empty());
        assert!(sample_dc_process(&grid, &KernelSpec::ss(1.0).unwrap(), 1, 1).is_err());
        let unit = TimeGrid::unit(vec![0.5, 1.0]).unwrap();
        assert!(sample_dc_process(&unit, &spec, 1, 1).is_err());
        assert!(sample_genspline_process(&grid, 0.0, 1, 1).is_err());
        assert!(sample_genspline_process(&unit, -0.5, 1, 1).is_err());
        assert!(empirical_moments(&[]).is_err());
    }

    #[test]
    fn batches_do_not_depend_on_thread_count() {
        let grid = random_half_line_grid(4, 6);
        let spec = KernelSpec::dc(0.5, 0.2).unwrap();
        let many = sample_dc_process(&grid, &spec, 8, 3000).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let one = pool.install(|| sample_dc_process(&grid, &spec, 8, 3000).unwrap());
        assert_eq!(many, one);
        let m1 = empirical_moments(&many).unwrap();
        let m2 = pool.install(|| empirical_moments(&one).unwrap());
        assert_eq!(m1.covariance, m2.covariance);
        assert_eq!(many[17].values(), sample_dc_process(&grid, &spec, 8, 18).unwrap()[17].values());
    }

    proptest! {
        #[test]
        fn exact_constructions_agree_with_kernel(
            gaps in prop::collection::vec(0.01f64..2.0, 1..20),
            start in 0.0f64..3.0,
            alpha in 0.05f64..3.0,
            beta in 0.05f64..3.0,
        ) {
            let mut t = start;
            let points: Vec<f64> = gaps.iter().map(|g| { let p = t; t += g; p }).collect();
            let grid = TimeGrid::half_line(points).unwrap();
            let spec = KernelSpec::dc(alpha, beta).unwrap();
            let k = gram(&spec, grid.points());
            prop_assert!(max_abs_diff(&dc_process_covariance(&grid, &spec).unwrap(), &k) <= 1e-13);
            prop_assert!(max_abs_diff(&dc_markov_covariance(&grid, &spec).unwrap(), &k) <= 1e-13);
        }
    }
}
