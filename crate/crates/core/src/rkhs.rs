//! RKHS norms of the DC and TC kernels.
//!
//! Two independent routes are provided:
//!
//! * the explicit integral
//!   `‖g‖² = ∫₀^∞ 2β e^{(4ρ+2)βt} (g′(t)/(2β) + ρ g(t))² dt`
//!   (`ρ = 0` gives the TC norm `∫ e^{2βt} g′²/(2β) dt`), and
//! * the eigen-series `Σ g_i²/λ_i` with `g_i = ∫ g ψ_i dι`.
//!
//! Every semi-infinite integral is mapped onto (0, 1] by `τ = e^{-2βt}`.
//! Near `τ = 0` the mesh is graded geometrically, which amounts to uniform
//! steps in `t`; each refinement doubles the graded depth, so a divergent
//! tail shows up as successive estimates that keep growing.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelSpec};
use crate::mercer::{self, EigenSystem, Measure};
use crate::quadrature::{Mesh, QuadratureConfig};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Relative step of the central-difference fallback.
const FD_STEP: f64 = 1e-6;
/// `e^{x}` stays finite for `x` below this.
const EXP_HORIZON: f64 = 700.0;

/// A function on `[0, ∞)` together with its derivative.
#[derive(Clone)]
pub struct FunctionHandle {
    value: RealFn,
    derivative: Option<RealFn>,
    decay_hint: Option<f64>,
    kinks: Vec<f64>,
}

impl std::fmt::Debug for FunctionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FunctionHandle")
            .field("analytic_derivative", &self.derivative.is_some())
            .field("decay_hint", &self.decay_hint)
            .field("kinks", &self.kinks)
            .finish()
    }
}

impl FunctionHandle {
    /// Wraps `g`; the derivative falls back to central differences.
    pub fn new(value: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            derivative: None,
            decay_hint: None,
            kinks: Vec::new(),
        }
    }

    pub fn with_derivative(mut self, derivative: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(derivative));
        self
    }

    /// Exponential decay rate `γ` with `|g(t)| ≲ e^{-γt}`, used for screening.
    pub fn with_decay_hint(mut self, gamma: f64) -> Self {
        self.decay_hint = Some(gamma);
        self
    }

    /// Points where `g′` is discontinuous.
    pub fn with_kinks(mut self, kinks: Vec<f64>) -> Self {
        self.kinks = kinks;
        self
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0).with_derivative(|_| 0.0)
    }

    /// `g(t) = e^{-γt}`.
    pub fn exponential(gamma: f64) -> Self {
        Self::exp_sum(vec![(1.0, gamma)])
    }

    /// `g(t) = Σ c_k e^{-γ_k t}`; the decay hint is the slowest rate present.
    pub fn exp_sum(terms: Vec<(f64, f64)>) -> Self {
        let slowest = terms
            .iter()
            .filter(|(c, _)| *c != 0.0)
            .map(|&(_, g)| g)
            .fold(f64::INFINITY, f64::min);
        let terms = Arc::new(terms);
        let d = Arc::clone(&terms);
        let mut handle = Self::new(move |t| terms.iter().map(|&(c, g)| c * (-g * t).exp()).sum())
            .with_derivative(move |t| d.iter().map(|&(c, g)| -g * c * (-g * t).exp()).sum());
        if slowest.is_finite() {
            handle = handle.with_decay_hint(slowest);
        }
        handle
    }

    /// The kernel section `k(t₀, ·)` of a TC or DC kernel.
    pub fn kernel_section(spec: &KernelSpec, t0: f64) -> Result<Self> {
        let (alpha, beta) = spec.decay_rates().ok_or_else(|| {
            Error::InvalidInput(format!("kernel sections need tc or dc, not {}", spec.name()))
        })?;
        spec.check_point(t0)?;
        let spec = *spec;
        Ok(Self::new(move |t| spec.value(t0, t))
            .with_derivative(move |t| {
                let slope = if t < t0 { beta - alpha } else { -(alpha + beta) };
                slope * spec.value(t0, t)
            })
            .with_decay_hint(alpha + beta)
            .with_kinks(vec![t0]))
    }

    /// The `i`-th eigenfunction `ψ_i` of a DC/TC system.
    pub fn eigenfunction(sys: &EigenSystem, i: usize) -> Result<Self> {
        let Measure::ExpWeight { beta, rho } = sys.measure() else {
            return Err(Error::InvalidInput("eigenfunction handles need a DC or TC system".into()));
        };
        if i == 0 {
            return Err(Error::InvalidInput("eigen indices are 1-based".into()));
        }
        let freq = (i as f64 - 0.5) * PI;
        let value = move |t: f64| {
            let tau = (-2.0 * beta * t).exp();
            tau.powf(rho) * mercer::spline_eigenfunction(i, tau)
        };
        let derivative = move |t: f64| {
            let tau = (-2.0 * beta * t).exp();
            let phi = mercer::spline_eigenfunction(i, tau);
            let dphi = std::f64::consts::SQRT_2 * freq * (freq * tau).cos();
            -2.0 * beta * tau.powf(rho) * (rho * phi + tau * dphi)
        };
        Ok(Self::new(value).with_derivative(derivative))
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    /// Analytic derivative when supplied, otherwise a central difference
    /// (one-sided next to 0).
    pub fn derivative(&self, t: f64) -> f64 {
        match &self.derivative {
            Some(d) => d(t),
            None => self.finite_difference(t),
        }
    }

    fn finite_difference(&self, t: f64) -> f64 {
        let h = FD_STEP * t.abs().max(1.0);
        if t >= h {
            (self.value(t + h) - self.value(t - h)) / (2.0 * h)
        } else {
            (self.value(t + h) - self.value(t)) / h
        }
    }

    pub fn decay_hint(&self) -> Option<f64> {
        self.decay_hint
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn has_analytic_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    /// Largest `|central difference − g′|` over the given points, normalized
    /// by `1 + |g′|`.
    pub fn derivative_mismatch(&self, points: &[f64]) -> f64 {
        points
            .iter()
            .map(|&t| (self.finite_difference(t) - self.derivative(t)).abs() / (1.0 + self.derivative(t).abs()))
            .fold(0.0, f64::max)
    }

    /// Checks an analytic derivative at 10 pseudo-random points of `[0, span]`
    /// away from the declared kinks.
    pub fn check_derivative(&self, span: f64) -> Result<()> {
        if !self.has_analytic_derivative() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d371);
        let mut points = Vec::with_capacity(10);
        while points.len() < 10 {
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            let t = 1e-3 + u * span;
            if self.kinks.iter().all(|k| (k - t).abs() > 1e-3) {
                points.push(t);
            }
        }
        let mismatch = self.derivative_mismatch(&points);
        if mismatch > 1e-5 {
            return Err(Error::InvalidInput(format!(
                "supplied derivative disagrees with finite differences (relative mismatch {mismatch:e})"
            )));
        }
        Ok(())
    }
}

/// Outcome of the necessary-condition screen for `e^{-γt}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembershipVerdict {
    PassesNecessary,
    FailsNecessary,
}

/// `e^{-γt} ∈ H` requires `γ > β` for TC and `γ > (2ρ+1)β` for DC.
pub fn membership_necessary_check(gamma: f64, spec: &KernelSpec) -> Result<MembershipVerdict> {
    let threshold = match spec.kind() {
        KernelKind::Tc { beta } => beta,
        KernelKind::Dc { alpha, beta } => {
            let rho = spec.rho().expect("dc has rho");
            let threshold = (2.0 * rho + 1.0) * beta;
            assert!(
                (threshold - alpha).abs() <= 1e-15 * alpha.max(beta),
                "inconsistent DC parameters: (2ρ+1)β = {threshold} but α = {alpha}"
            );
            threshold
        }
        _ => {
            return Err(Error::InvalidInput(format!(
                "membership screening is defined for tc and dc, not {}",
                spec.name()
            )))
        }
    };
    Ok(if gamma > threshold {
        MembershipVerdict::PassesNecessary
    } else {
        MembershipVerdict::FailsNecessary
    })
}

/// `(α, β, ρ)` of a TC or DC kernel.
fn dc_parameters(spec: &KernelSpec) -> Result<(f64, f64, f64)> {
    match (spec.decay_rates(), spec.rho()) {
        (Some((alpha, beta)), Some(rho)) => Ok((alpha, beta, rho)),
        _ => Err(Error::InvalidInput(format!(
            "RKHS norms are implemented for tc and dc, not {}",
            spec.name()
        ))),
    }
}

fn screen(g: &FunctionHandle, spec: &KernelSpec) -> Result<()> {
    if let Some(gamma) = g.decay_hint() {
        if membership_necessary_check(gamma, spec)? == MembershipVerdict::FailsNecessary {
            return Err(Error::Divergence {
                reason: format!("decay rate {gamma} fails the necessary membership condition"),
                coarse: f64::INFINITY,
                fine: f64::INFINITY,
            });
        }
    }
    Ok(())
}

/// `∫₀¹ F dτ` where `F` is supplied as a function of `t = -ln τ/(2β)`.
///
/// Refinement doubles both the uniform panels and the graded depth. Points
/// deeper than `horizon` (in `t`) are never evaluated; when the graded depth
/// is clamped there twice in a row the tail is reported as unresolved.
fn integrate_mapped_tail<F>(
    beta: f64,
    horizon: f64,
    kinks: &[f64],
    quad: &QuadratureConfig,
    f: F,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    quad.validate()?;
    let rule = quad.rule();
    let floor = (-2.0 * beta * horizon).exp();
    let unit_kinks: Vec<f64> = kinks.iter().map(|&t| (-2.0 * beta * t).exp()).collect();
    let estimate = |level: u32| {
        let cfg = quad.refined(level);
        let first = 1.0 / cfg.panels as f64;
        let mut graded = cfg.graded_panels;
        let mut clamped = false;
        if first * cfg.grading_ratio.powi(graded as i32) < floor {
            graded = ((floor / first).ln() / cfg.grading_ratio.ln()).floor().max(0.0) as usize;
            clamped = true;
        }
        let mut mesh = Mesh::uniform(0.0, 1.0, cfg.panels);
        mesh.grade_start(cfg.grading_ratio, graded);
        let mut breaks = mesh.breaks()[1..].to_vec();
        let inner = breaks[0];
        breaks.extend(unit_kinks.iter().copied().filter(|&k| k > inner));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mesh = Mesh::from_breaks(breaks);
        let (total, magnitude) =
            mesh.integrate_with_magnitude(&rule, |tau| f(-tau.ln() / (2.0 * beta)));
        (total, magnitude, clamped)
    };
    let levels = quad.max_refinements.max(1) as u32;
    let (mut coarse, _, mut coarse_clamped) = estimate(0);
    for level in 1..=levels {
        let (fine, magnitude, clamped) = estimate(level);
        if !fine.is_finite() || !coarse.is_finite() {
            return Err(Error::Divergence {
                reason: "integrand overflowed".into(),
                coarse,
                fine,
            });
        }
        if clamped && coarse_clamped {
            return Err(Error::Divergence {
                reason: format!("tail not resolved before the t = {horizon:.1} horizon"),
                coarse,
                fine,
            });
        }
        if (fine - coarse).abs() <= quad.tolerance * magnitude.max(f64::MIN_POSITIVE) {
            return Ok(fine);
        }
        if level == levels {
            return Err(if fine.abs() > coarse.abs() {
                Error::Divergence {
                    reason: "estimates keep growing under refinement".into(),
                    coarse,
                    fine,
                }
            } else {
                Error::Quadrature { coarse, fine }
            });
        }
        coarse = fine;
        coarse_clamped = clamped;
    }
    unreachable!("refinement loop always returns")
}

/// Squared DC norm by the explicit integral formula.
pub fn dc_norm_integral(g: &FunctionHandle, spec: &KernelSpec, quad: &QuadratureConfig) -> Result<f64> {
    let (alpha, beta, rho) = dc_parameters(spec)?;
    screen(g, spec)?;
    g.check_derivative(10.0 / beta)?;
    // After dt = dτ/(2βτ) the integrand becomes (e^{(2ρ+2)βt}(g′/(2β) + ρg))².
    let rate = (2.0 * rho + 2.0) * beta;
    let horizon = EXP_HORIZON / (alpha + beta);
    integrate_mapped_tail(beta, horizon, g.kinks(), quad, |t| {
        let h = (rate * t).exp() * (g.derivative(t) / (2.0 * beta) + rho * g.value(t));
        h * h
    })
}

/// Squared TC norm `∫ e^{2βt} g′(t)²/(2β) dt`.
pub fn tc_norm_integral(g: &FunctionHandle, spec: &KernelSpec, quad: &QuadratureConfig) -> Result<f64> {
    let KernelKind::Tc { beta } = spec.kind() else {
        return Err(Error::InvalidInput(format!(
            "tc_norm_integral needs a tc kernel, not {}",
            spec.name()
        )));
    };
    screen(g, spec)?;
    g.check_derivative(10.0 / beta)?;
    let horizon = EXP_HORIZON / (2.0 * beta);
    integrate_mapped_tail(beta, horizon, g.kinks(), quad, |t| {
        let h = (2.0 * beta * t).exp() * g.derivative(t) / (2.0 * beta);
        h * h
    })
}

/// Squared norm of `f` in the generalized Sobolev space on [0, 1]:
/// `∫₀¹ (d/dτ (f(τ)/τ^ρ))² dτ`. Here the handle is evaluated on [0, 1].
pub fn genspline_norm_integral(f: &FunctionHandle, rho: f64, quad: &QuadratureConfig) -> Result<f64> {
    if !(rho > -0.5 && rho.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!("rho must exceed -0.5, got {rho}")));
    }
    quad.integrate_unit(f.kinks(), true, |tau| {
        let d = f.derivative(tau) / tau.powf(rho) - rho * f.value(tau) / tau.powf(rho + 1.0);
        d * d
    })
}

/// Partial eigen-series of the DC norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesNorm {
    /// `Σ_{i≤M} g_i²/λ_i`.
    pub norm_sq: f64,
    /// `g_i = ∫ g ψ_i dι` for `i = 1..M`.
    pub coefficients: Vec<f64>,
}

impl SeriesNorm {
    /// Running sums `Σ_{i≤m} g_i²/λ_i` for `m = 1..M`.
    pub fn partial_sums(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| {
                acc += c * c / mercer::eigenvalue(k + 1).expect("1-based");
                acc
            })
            .collect()
    }
}

/// Projection coefficient `g_i = ∫₀^∞ g ψ_i dι` of a DC/TC system.
pub fn dc_coefficient(g: &FunctionHandle, sys: &EigenSystem, i: usize, quad: &QuadratureConfig) -> Result<f64> {
    let Measure::ExpWeight { beta, rho } = sys.measure() else {
        return Err(Error::InvalidInput("series norms need a DC or TC eigen-system".into()));
    };
    if i == 0 {
        return Err(Error::InvalidInput("eigen indices are 1-based".into()));
    }
    let (alpha, _) = sys.kernel().decay_rates().expect("exp-weight systems are tc or dc");
    let horizon = EXP_HORIZON / (alpha + beta);
    // g ψ_i τ^{-2ρ} = g e^{2βρt} φ_i(τ)
    integrate_mapped_tail(beta, horizon, g.kinks(), quad, |t| {
        let tau = (-2.0 * beta * t).exp();
        g.value(t) * (2.0 * beta * rho * t).exp() * mercer::spline_eigenfunction(i, tau)
    })
}

/// Squared DC norm by the truncated eigen-series, `M = sys.truncation()`.
pub fn dc_norm_series(g: &FunctionHandle, sys: &EigenSystem, quad: &QuadratureConfig) -> Result<SeriesNorm> {
    screen(g, sys.kernel())?;
    let coefficients: Vec<Result<f64>> = (1..=sys.truncation())
        .into_par_iter()
        .map(|i| dc_coefficient(g, sys, i, quad))
        .collect();
    let coefficients = coefficients.into_iter().collect::<Result<Vec<f64>>>()?;
    let norm_sq = coefficients
        .iter()
        .enumerate()
        .map(|(k, c)| c * c / mercer::eigenvalue(k + 1).expect("1-based"))
        .sum();
    Ok(SeriesNorm {
        norm_sq,
        coefficients,
    })
}

/// `2β(ρ − γ/(2β))² / (2γ − (4ρ+2)β)`, the squared DC norm of `e^{-γt}`.
pub fn dc_norm_exponential(gamma: f64, beta: f64, rho: f64) -> Option<f64> {
    let denom = 2.0 * gamma - (4.0 * rho + 2.0) * beta;
    if denom <= 0.0 {
        return None;
    }
    let lead = rho - gamma / (2.0 * beta);
    Some(2.0 * beta * lead * lead / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quad() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn exponential_norm_examples() {
        let g = FunctionHandle::exponential(1.0);
        let dc = KernelSpec::dc(0.5, 0.5).unwrap();
        let v = dc_norm_integral(&g, &dc, &quad()).unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-10);

        let g = FunctionHandle::exponential(2.0);
        let dc = KernelSpec::dc(1.0, 0.5).unwrap();
        let v = dc_norm_integral(&g, &dc, &quad()).unwrap();
        assert_relative_eq!(v, 1.125, max_relative = 1e-10);
        assert_relative_eq!(dc_norm_exponential(2.0, 0.5, 0.5).unwrap(), 1.125, max_relative = 1e-15);
    }

    #[test]
    fn boundary_decay_is_flagged() {
        let dc = KernelSpec::dc(1.0, 0.5).unwrap();
        let with_hint = FunctionHandle::exponential(1.0);
        assert!(matches!(dc_norm_integral(&with_hint, &dc, &quad()), Err(Error::Divergence { .. })));

        // same function, screening unavailable: the quadrature must catch it
        let bare = FunctionHandle::new(|t| (-t).exp()).with_derivative(|t| -(-t).exp());
        assert!(matches!(dc_norm_integral(&bare, &dc, &quad()), Err(Error::Divergence { .. })));
    }

    #[test]
    fn tc_examples() {
        let tc = KernelSpec::tc(0.5).unwrap();
        let g = FunctionHandle::exponential(1.0);
        let v = tc_norm_integral(&g, &tc, &quad()).unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-10);

        let dc = KernelSpec::dc(0.5, 0.5).unwrap();
        let w = dc_norm_integral(&g, &dc, &quad()).unwrap();
        assert!((v - w).abs() <= 1e-12 * v);

        let slow = FunctionHandle::exponential(0.4);
        assert!(matches!(tc_norm_integral(&slow, &tc, &quad()), Err(Error::Divergence { .. })));
        let bare = FunctionHandle::new(|t| (-0.4 * t).exp());
        assert!(matches!(tc_norm_integral(&bare, &tc, &quad()), Err(Error::Divergence { .. })));
    }

    #[test]
    fn membership_examples() {
        use MembershipVerdict::*;
        let tc = KernelSpec::tc(0.5).unwrap();
        assert_eq!(membership_necessary_check(1.0, &tc).unwrap(), PassesNecessary);
        let dc = KernelSpec::dc(1.0, 0.5).unwrap();
        assert_eq!(membership_necessary_check(0.9, &dc).unwrap(), FailsNecessary);
        assert_eq!(membership_necessary_check(1.0, &dc).unwrap(), FailsNecessary);
        let dc0 = KernelSpec::dc(0.5, 0.5).unwrap();
        assert_eq!(membership_necessary_check(0.6, &dc0).unwrap(), PassesNecessary);
        assert_eq!(
            membership_necessary_check(0.6, &dc0).unwrap(),
            membership_necessary_check(0.6, &KernelSpec::tc(0.5).unwrap()).unwrap()
        );
        assert!(membership_necessary_check(1.0, &KernelSpec::spline1()).is_err());
    }

    #[test]
    fn eigenfunction_has_unit_coefficient() {
        let sys = EigenSystem::new(KernelSpec::dc(1.0, 0.5).unwrap(), 6).unwrap();
        let g = FunctionHandle::eigenfunction(&sys, 1).unwrap();
        let series = dc_norm_series(&g, &sys, &quad()).unwrap();
        assert_relative_eq!(series.coefficients[0], 1.0, max_relative = 1e-9);
        for c in &series.coefficients[1..] {
            assert!(c.abs() < 1e-9, "{c}");
        }
        assert_relative_eq!(series.norm_sq, PI * PI / 4.0, max_relative = 1e-8);
        let direct = dc_norm_integral(&g, sys.kernel(), &quad()).unwrap();
        assert_relative_eq!(direct, PI * PI / 4.0, max_relative = 1e-8);
    }

    #[test]
    fn zero_function() {
        let sys = EigenSystem::new(KernelSpec::dc(1.0, 0.5).unwrap(), 5).unwrap();
        let series = dc_norm_series(&FunctionHandle::zero(), &sys, &quad()).unwrap();
        assert_eq!(series.norm_sq, 0.0);
        assert!(series.coefficients.iter().all(|&c| c == 0.0));
        assert_eq!(dc_norm_integral(&FunctionHandle::zero(), sys.kernel(), &quad()).unwrap(), 0.0);
    }

    #[test]
    fn series_matches_integral_for_exponential() {
        let sys = EigenSystem::new(KernelSpec::dc(0.5, 0.5).unwrap(), 200).unwrap();
        let g = FunctionHandle::exponential(1.0);
        let series = dc_norm_series(&g, &sys, &quad()).unwrap();
        assert!((series.norm_sq - 1.0).abs() <= 1e-2, "{}", series.norm_sq);
        let sums = series.partial_sums();
        assert!(sums.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*sums.last().unwrap(), series.norm_sq);
    }

    #[test]
    fn reproducing_property() {
        for (alpha, beta, t0) in [(1.0, 0.5, 0.7), (0.3, 0.9, 2.0), (2.0, 0.4, 0.0)] {
            let spec = KernelSpec::dc(alpha, beta).unwrap();
            let g = FunctionHandle::kernel_section(&spec, t0).unwrap();
            let v = dc_norm_integral(&g, &spec, &quad()).unwrap();
            let want = (-2.0 * alpha * t0).exp();
            assert!(((v - want) / want).abs() <= 1e-6, "{v} vs {want}");
        }
    }

    #[test]
    fn isometry_with_unit_interval_norm() {
        let (alpha, beta) = (1.3, 0.4);
        let rho = (alpha - beta) / (2.0 * beta);
        // f(τ) = τ^ρ sin τ, so f/τ^ρ = sin τ and the unit-side norm is ∫cos² τ dτ.
        let f = FunctionHandle::new(move |tau: f64| tau.powf(rho) * tau.sin()).with_derivative(move |tau: f64| {
            rho * tau.powf(rho - 1.0) * tau.sin() + tau.powf(rho) * tau.cos()
        });
        let unit_side = genspline_norm_integral(&f, rho, &quad()).unwrap();
        assert_relative_eq!(unit_side, 0.5 + (2.0f64).sin() / 4.0, max_relative = 1e-9);

        let g = FunctionHandle::new(move |t: f64| {
            let tau = (-2.0 * beta * t).exp();
            tau.powf(rho) * tau.sin()
        })
        .with_derivative(move |t: f64| {
            let tau = (-2.0 * beta * t).exp();
            -2.0 * beta * tau * (rho * tau.powf(rho - 1.0) * tau.sin() + tau.powf(rho) * tau.cos())
        });
        let spec = KernelSpec::dc(alpha, beta).unwrap();
        let half_line = dc_norm_integral(&g, &spec, &quad()).unwrap();
        assert_relative_eq!(half_line, unit_side, max_relative = 1e-8);
    }

    #[test]
    fn finite_difference_fallback_agrees() {
        let spec = KernelSpec::dc(0.8, 0.5).unwrap();
        let analytic = FunctionHandle::exp_sum(vec![(1.0, 1.5), (-0.5, 2.5)]);
        let fd = FunctionHandle::new(|t| (-1.5 * t).exp() - 0.5 * (-2.5 * t).exp());
        let a = dc_norm_integral(&analytic, &spec, &quad()).unwrap();
        let b = dc_norm_integral(&fd, &spec, &quad()).unwrap();
        assert!(((a - b) / a).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn inconsistent_derivative_is_rejected() {
        let spec = KernelSpec::dc(0.8, 0.5).unwrap();
        let g = FunctionHandle::new(|t| (-2.0 * t).exp()).with_derivative(|t| -(-2.0 * t).exp());
        assert!(matches!(dc_norm_integral(&g, &spec, &quad()), Err(Error::InvalidInput(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn quadrature_matches_closed_form(beta in 0.2f64..2.0, rho in -0.4f64..1.5, margin in 0.3f64..3.0) {
            let alpha = (2.0 * rho + 1.0) * beta;
            let gamma = alpha + margin * beta;
            let spec = KernelSpec::dc(alpha, beta).unwrap();
            let got = dc_norm_integral(&FunctionHandle::exponential(gamma), &spec, &quad()).unwrap();
            let want = dc_norm_exponential(gamma, beta, spec.rho().unwrap()).unwrap();
            prop_assert!(((got - want) / want).abs() <= 1e-8, "{} vs {}", got, want);
        }

        #[test]
        fn norm_scales_quadratically(c in -5.0f64..5.0) {
            let spec = KernelSpec::dc(0.9, 0.6).unwrap();
            let base = dc_norm_integral(&FunctionHandle::exp_sum(vec![(1.0, 1.7), (0.3, 2.2)]), &spec, &quad()).unwrap();
            let scaled = dc_norm_integral(&FunctionHandle::exp_sum(vec![(c, 1.7), (0.3 * c, 2.2)]), &spec, &quad()).unwrap();
            prop_assert!((scaled - c * c * base).abs() <= 1e-12 * (c * c * base).max(f64::MIN_POSITIVE));
        }
    }
}
