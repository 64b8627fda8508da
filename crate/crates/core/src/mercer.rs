//! Analytic Mercer eigen-systems of the first-order spline family.
//!
//! All three systems share the eigenvalues `λ_i = 1/((i-½)²π²)`. The
//! eigenfunctions are `φ_i(τ) = √2 sin((i-½)πτ)` for `min{τ,ν}` under the
//! Lebesgue measure, `τ^ρ φ_i(τ)` for the generalized spline under
//! `dμ = ν^{-2ρ}dν`, and `ψ_i(t) = (τ^ρ φ_i)(e^{-2βt})` for DC under
//! `dι = 2β e^{2β(2ρ-1)t}dt`. Under `τ = e^{-2βt}` the DC measure pulls back
//! to `τ^{-2ρ}dτ`, so every integral below is evaluated on the unit interval.

use nalgebra::DMatrix;
use rayon::prelude::*;
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelSpec};
use crate::quadrature::QuadratureConfig;

pub const DEFAULT_TRUNCATION: usize = 1000;

/// Measure under which the eigenfunctions are orthonormal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    /// Lebesgue measure on [0, 1].
    Lebesgue01,
    /// `dμ(ν) = ν^{-2ρ} dν` on [0, 1].
    PowerWeight { rho: f64 },
    /// `dι(t) = 2β e^{2β(2ρ-1)t} dt` on [0, ∞).
    ExpWeight { beta: f64, rho: f64 },
}

impl Measure {
    pub fn rho(&self) -> f64 {
        match *self {
            Measure::Lebesgue01 => 0.0,
            Measure::PowerWeight { rho } | Measure::ExpWeight { rho, .. } => rho,
        }
    }

    /// Density of the measure with respect to `dτ` after mapping to [0, 1].
    #[inline]
    fn unit_density(&self, tau: f64) -> f64 {
        match *self {
            Measure::Lebesgue01 => 1.0,
            Measure::PowerWeight { rho } | Measure::ExpWeight { rho, .. } => tau.powf(-2.0 * rho),
        }
    }

    /// Maps a domain point to the unit interval.
    #[inline]
    pub fn to_unit(&self, x: f64) -> f64 {
        match *self {
            Measure::ExpWeight { beta, .. } => (-2.0 * beta * x).exp(),
            _ => x,
        }
    }

    /// Inverse of [`Measure::to_unit`].
    #[inline]
    pub fn from_unit(&self, tau: f64) -> f64 {
        match *self {
            Measure::ExpWeight { beta, .. } => -tau.ln() / (2.0 * beta),
            _ => tau,
        }
    }
}

/// `λ_i = 1/((i-½)²π²)`, 1-based.
pub fn eigenvalue(i: usize) -> Result<f64> {
    if i == 0 {
        return Err(Error::InvalidInput("eigen indices are 1-based".into()));
    }
    Ok(eigenvalue_unchecked(i))
}

#[inline]
fn eigenvalue_unchecked(i: usize) -> f64 {
    let f = (i as f64 - 0.5) * PI;
    1.0 / (f * f)
}

/// `φ_i(τ) = √2 sin((i-½)πτ)`.
#[inline]
pub fn spline_eigenfunction(i: usize, tau: f64) -> f64 {
    SQRT_2 * ((i as f64 - 0.5) * PI * tau).sin()
}

/// Eigenpairs of a first-order spline-family kernel, truncated at `M` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    kernel: KernelSpec,
    truncation: usize,
    measure: Measure,
}

impl EigenSystem {
    /// Builds the system for `Spline1`, `GenSpline1`, `TC` or `DC`; the
    /// measure follows from the kernel.
    pub fn new(kernel: KernelSpec, truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::InvalidInput("truncation must be at least 1".into()));
        }
        let measure = match kernel.kind() {
            KernelKind::Spline1 => Measure::Lebesgue01,
            KernelKind::GenSpline1 { rho } => Measure::PowerWeight { rho },
            KernelKind::Tc { beta } | KernelKind::Dc { beta, .. } => Measure::ExpWeight {
                beta,
                rho: kernel.rho().expect("first-order stable kernel has rho"),
            },
            _ => {
                return Err(Error::InvalidInput(format!(
                    "no analytic eigen-system for the {} kernel",
                    kernel.name()
                )))
            }
        };
        Ok(Self {
            kernel,
            truncation,
            measure,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn with_truncation(&self, truncation: usize) -> Result<Self> {
        Self::new(self.kernel, truncation)
    }

    pub fn eigenvalue(&self, i: usize) -> Result<f64> {
        eigenvalue(i)
    }

    /// The `i`-th orthonormal eigenfunction at a domain point.
    pub fn eigenfunction(&self, i: usize, x: f64) -> Result<f64> {
        if i == 0 {
            return Err(Error::InvalidInput("eigen indices are 1-based".into()));
        }
        self.kernel.check_point(x)?;
        Ok(self.basis(i, x))
    }

    #[inline]
    pub(crate) fn basis(&self, i: usize, x: f64) -> f64 {
        self.basis_unit(i, self.measure.to_unit(x))
    }

    /// `τ^ρ φ_i(τ)`, the eigenfunction expressed in the unit coordinate.
    #[inline]
    fn basis_unit(&self, i: usize, tau: f64) -> f64 {
        let rho = self.measure.rho();
        let phi = spline_eigenfunction(i, tau);
        if rho == 0.0 {
            phi
        } else {
            tau.powf(rho) * phi
        }
    }

    /// `Σ_{i=1}^{M} λ_i e_i(t) e_i(s)`.
    pub fn truncated_expansion(&self, t: f64, s: f64) -> Result<f64> {
        self.kernel.check_point(t)?;
        self.kernel.check_point(s)?;
        Ok(self.expansion_unchecked(t, s))
    }

    pub(crate) fn expansion_unchecked(&self, t: f64, s: f64) -> f64 {
        (1..=self.truncation)
            .map(|i| eigenvalue_unchecked(i) * self.basis(i, t) * self.basis(i, s))
            .sum()
    }

    /// `∫ f dm` for the system's measure, computed on the unit interval.
    /// `breakpoints` are domain points where `f` is not smooth.
    pub fn integrate<F>(&self, f: F, breakpoints: &[f64], quad: &QuadratureConfig) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        let measure = self.measure;
        let unit_breaks: Vec<f64> = breakpoints.iter().map(|&x| measure.to_unit(x)).collect();
        let graded = measure.rho() != 0.0 || matches!(measure, Measure::ExpWeight { .. });
        quad.integrate_unit(&unit_breaks, graded, |tau| {
            f(measure.from_unit(tau)) * measure.unit_density(tau)
        })
    }

    /// Max over probes of `|∫ k(x, y) e_i(y) dm(y) − λ_i e_i(x)|`.
    pub fn verify_eigen_equation(
        &self,
        i: usize,
        probes: &[f64],
        quad: &QuadratureConfig,
    ) -> Result<f64> {
        let lambda = eigenvalue(i)?;
        for &x in probes {
            self.kernel.check_point(x)?;
        }
        let residuals: Vec<Result<f64>> = probes
            .par_iter()
            .map(|&x| {
                let applied =
                    self.integrate(|y| self.kernel.value(x, y) * self.basis(i, y), &[x], quad)?;
                Ok((applied - lambda * self.basis(i, x)).abs())
            })
            .collect();
        residuals
            .into_iter()
            .try_fold(0.0_f64, |worst, r| Ok(worst.max(r?)))
    }

    /// `∫ e_i e_j dm`.
    pub fn verify_orthonormality(&self, i: usize, j: usize, quad: &QuadratureConfig) -> Result<f64> {
        if i == 0 || j == 0 {
            return Err(Error::InvalidInput("eigen indices are 1-based".into()));
        }
        self.integrate(|y| self.basis(i, y) * self.basis(j, y), &[], quad)
    }

    /// Gram matrix of the first `m` eigenfunctions in `L²(m)`.
    pub fn orthonormality_gram(&self, m: usize, quad: &QuadratureConfig) -> Result<DMatrix<f64>> {
        let pairs: Vec<(usize, usize)> = (1..=m).flat_map(|i| (i..=m).map(move |j| (i, j))).collect();
        let values: Vec<Result<f64>> = pairs
            .par_iter()
            .map(|&(i, j)| self.verify_orthonormality(i, j, quad))
            .collect();
        let mut gram = DMatrix::zeros(m, m);
        for (&(i, j), v) in pairs.iter().zip(values) {
            let v = v?;
            gram[(i - 1, j - 1)] = v;
            gram[(j - 1, i - 1)] = v;
        }
        Ok(gram)
    }
}

/// Analytic bound on the sup error of the `M`-term spline expansion:
/// `Σ_{i>M} 2λ_i ≤ 2/(π²(M-½))`.
pub fn spline_tail_bound(truncation: usize) -> f64 {
    2.0 / (PI * PI * (truncation as f64 - 0.5))
}

/// Largest `|k(t,s) − Σ_{i≤M} λ_i e_i(t) e_i(s)|` over `points × points`.
pub fn expansion_sup_error(sys: &EigenSystem, points: &[f64]) -> Result<f64> {
    for &p in points {
        sys.kernel.check_point(p)?;
    }
    let rows: Vec<f64> = points
        .par_iter()
        .map(|&t| {
            points
                .iter()
                .map(|&s| (sys.kernel.value(t, s) - sys.expansion_unchecked(t, s)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(rows.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quad() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn eigenvalue_examples() {
        assert_relative_eq!(eigenvalue(1).unwrap(), 4.0 / (PI * PI), max_relative = 1e-15);
        assert_relative_eq!(eigenvalue(1).unwrap(), 0.4052847, max_relative = 1e-7);
        assert_relative_eq!(eigenvalue(2).unwrap(), 0.0450316, max_relative = 1e-6);
        assert_relative_eq!(eigenvalue(10).unwrap(), 1.0 / (9.5f64 * 9.5 * PI * PI), max_relative = 1e-15);
        assert_relative_eq!(eigenvalue(10).unwrap(), 0.00112267239, max_relative = 1e-8);
        assert!(eigenvalue(0).is_err());
    }

    #[test]
    fn eigenvalue_partial_sums_approach_one_half() {
        let mut partial = 0.0;
        let mut last = f64::INFINITY;
        for i in 1..=100_000 {
            let l = eigenvalue(i).unwrap();
            assert!(l < last);
            last = l;
            partial += l;
            assert!(partial < 0.5 + 1e-12);
        }
        assert!((0.5 - partial) < 2.1e-6);
    }

    #[test]
    fn eigenfunction_examples() {
        let s1 = EigenSystem::new(KernelSpec::spline1(), 10).unwrap();
        assert_relative_eq!(s1.eigenfunction(1, 1.0).unwrap(), SQRT_2, max_relative = 1e-15);

        let gs = EigenSystem::new(KernelSpec::genspline1(1.0).unwrap(), 10).unwrap();
        assert_relative_eq!(gs.eigenfunction(1, 0.5).unwrap(), 0.5, max_relative = 1e-15);

        let dc = EigenSystem::new(KernelSpec::dc(1.0, 0.5).unwrap(), 10).unwrap();
        assert_relative_eq!(dc.eigenfunction(1, 0.0).unwrap(), SQRT_2, max_relative = 1e-15);

        assert!(dc.eigenfunction(0, 1.0).is_err());
        assert!(dc.eigenfunction(1, -1.0).is_err());
        assert!(s1.eigenfunction(1, 1.5).is_err());
    }

    #[test]
    fn measures_follow_kernel() {
        let dc = EigenSystem::new(KernelSpec::dc(1.0, 0.5).unwrap(), 1).unwrap();
        assert_eq!(dc.measure(), Measure::ExpWeight { beta: 0.5, rho: 0.5 });
        let gs = EigenSystem::new(KernelSpec::genspline1(0.3).unwrap(), 1).unwrap();
        assert_eq!(gs.measure(), Measure::PowerWeight { rho: 0.3 });
        assert!(EigenSystem::new(KernelSpec::ss(1.0).unwrap(), 1).is_err());
        assert!(EigenSystem::new(KernelSpec::spline1(), 0).is_err());
    }

    #[test]
    fn one_term_expansion_at_corner() {
        let s1 = EigenSystem::new(KernelSpec::spline1(), 1).unwrap();
        let v = s1.truncated_expansion(1.0, 1.0).unwrap();
        assert_relative_eq!(v, 8.0 / (PI * PI), max_relative = 1e-15);
        assert!((1.0 - v - 0.189).abs() < 1e-3);
    }

    #[test]
    fn thousand_term_expansion_within_tail_bound() {
        let s1 = EigenSystem::new(KernelSpec::spline1(), 1000).unwrap();
        let grid = TimeGrid::linspace(0.0, 1.0, 100);
        let err = expansion_sup_error(&s1, &grid).unwrap();
        let bound = spline_tail_bound(1000);
        assert!(bound < 2.03e-4);
        assert!(err <= bound, "{err} > {bound}");
        // the bound is attained at the corner up to O(1/M²)
        assert!(err > 0.99 * bound);
    }

    #[test]
    fn dc_expansion_error_bounded_by_spline_error() {
        let dc = EigenSystem::new(KernelSpec::dc(1.0, 0.5).unwrap(), 1000).unwrap();
        let grid = TimeGrid::linspace(0.0, 10.0, 40);
        let err = expansion_sup_error(&dc, &grid).unwrap();
        assert!(err <= spline_tail_bound(1000), "{err}");
    }

    #[test]
    fn eigen_equation_residuals() {
        let s1 = EigenSystem::new(KernelSpec::spline1(), 10).unwrap();
        let r = s1.verify_eigen_equation(1, &[0.25, 0.5, 0.75], &quad()).unwrap();
        assert!(r <= 1e-8, "{r}");

        let gs = EigenSystem::new(KernelSpec::genspline1(-0.25).unwrap(), 10).unwrap();
        let r = gs.verify_eigen_equation(3, &[0.1, 0.9], &quad()).unwrap();
        assert!(r <= 1e-6, "{r}");

        let dc = EigenSystem::new(KernelSpec::dc(1.0, 0.5).unwrap(), 10).unwrap();
        let r = dc.verify_eigen_equation(3, &[0.0, 0.7, 4.0], &quad()).unwrap();
        assert!(r <= 1e-6, "{r}");
    }

    #[test]
    fn zero_rho_reproduces_spline_residuals_exactly() {
        let s1 = EigenSystem::new(KernelSpec::spline1(), 10).unwrap();
        let gs = EigenSystem::new(KernelSpec::genspline1(0.0).unwrap(), 10).unwrap();
        for i in [1, 2, 5] {
            let probes = [0.1, 0.33, 0.8];
            let a = s1.verify_eigen_equation(i, &probes, &quad()).unwrap();
            let b = gs.verify_eigen_equation(i, &probes, &quad()).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn orthonormality_examples() {
        let s1 = EigenSystem::new(KernelSpec::spline1(), 10).unwrap();
        assert!((s1.verify_orthonormality(1, 1, &quad()).unwrap() - 1.0).abs() <= 1e-10);

        let gs = EigenSystem::new(KernelSpec::genspline1(0.5).unwrap(), 10).unwrap();
        assert!(gs.verify_orthonormality(1, 2, &quad()).unwrap().abs() <= 1e-8);

        let dc = EigenSystem::new(KernelSpec::dc(1.0, 0.5).unwrap(), 10).unwrap();
        assert!((dc.verify_orthonormality(2, 2, &quad()).unwrap() - 1.0).abs() <= 1e-7);
    }

    /// Orthonormality on the half-line checked directly in `t`, without the
    /// unit-interval substitution: `∫₀^T ψ_i ψ_j 2β e^{2β(2ρ-1)t} dt`.
    #[test]
    fn dc_orthonormality_in_time_coordinates() {
        use crate::quadrature::{GaussLegendre, Mesh};
        let (alpha, beta) = (0.8, 0.6);
        let dc = EigenSystem::new(KernelSpec::dc(alpha, beta).unwrap(), 5).unwrap();
        let rho = (alpha - beta) / (2.0 * beta);
        let rule = GaussLegendre::new(10);
        let mesh = Mesh::uniform(0.0, 60.0, 6000);
        for (i, j) in [(1, 1), (2, 3), (4, 4)] {
            let v = mesh.integrate(&rule, |t| {
                dc.basis(i, t) * dc.basis(j, t) * 2.0 * beta * (2.0 * beta * (2.0 * rho - 1.0) * t).exp()
            });
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-9, "({i},{j}) -> {v}");
        }
    }

    proptest! {
        #[test]
        fn diagonal_truncation_is_monotone(tau in 0.0f64..1.0, rho in -0.45f64..1.5) {
            let sys = EigenSystem::new(KernelSpec::genspline1(rho).unwrap(), 1).unwrap();
            let exact = sys.kernel().value(tau, tau);
            let mut prev = 0.0;
            for m in [1, 2, 5, 20, 100] {
                let v = sys.with_truncation(m).unwrap().truncated_expansion(tau, tau).unwrap();
                prop_assert!(v >= prev);
                prop_assert!(v <= exact + 1e-12);
                prev = v;
            }
        }

        #[test]
        fn dc_expansion_is_scaled_spline_expansion(
            alpha in 0.1f64..3.0, beta in 0.1f64..3.0,
            t in 0.0f64..8.0, s in 0.0f64..8.0, m in 1usize..200,
        ) {
            let dc = EigenSystem::new(KernelSpec::dc(alpha, beta).unwrap(), m).unwrap();
            let s1 = EigenSystem::new(KernelSpec::spline1(), m).unwrap();
            let rho = (alpha - beta) / (2.0 * beta);
            let (tau, nu) = ((-2.0 * beta * t).exp(), (-2.0 * beta * s).exp());
            let lhs = dc.truncated_expansion(t, s).unwrap();
            let rhs = (tau * nu).powf(rho) * s1.truncated_expansion(tau, nu).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-13, "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn refinement_shrinks_residual() {
        let gs = EigenSystem::new(KernelSpec::genspline1(-0.25).unwrap(), 10).unwrap();
        let coarse_cfg = QuadratureConfig {
            panels: 4,
            nodes: 2,
            graded_panels: 4,
            max_refinements: 1,
            tolerance: 1.0,
            ..Default::default()
        };
        let mut prev = f64::INFINITY;
        for level in 0..4 {
            let r = gs
                .verify_eigen_equation(3, &[0.1, 0.9], &coarse_cfg.refined(level))
                .unwrap();
            assert!(r <= prev / 2.0, "level {level}: {r} vs {prev}");
            prev = r;
        }
    }
}
