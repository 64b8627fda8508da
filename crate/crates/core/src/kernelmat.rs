//! Kernel matrices on time grids and the tridiagonal inverse of DC matrices.
//!
//! With `b_i = e^{-2βρ t_i}` and walk increments `D_i` (see [`MarkovFactors`])
//! the DC Gram matrix factors as `K = R⁻¹ D R⁻ᵀ` where `R = U B⁻¹`, `B` is
//! `diag(b)` and `U` is unit upper bidiagonal with `-1` above the diagonal.
//! Hence `K⁻¹ = B⁻¹ Uᵀ D⁻¹ U B⁻¹`, which is tridiagonal:
//!
//! ```text
//! (K⁻¹)_{ii}   = b_i^{-2} (1/D_i + 1/D_{i-1})     (second term only for i ≥ 1)
//! (K⁻¹)_{i,i+1} = -1 / (b_i b_{i+1} D_i)
//! ```

use nalgebra::{DMatrix, SymmetricEigen};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernels::KernelSpec;
use crate::maxent::MarkovFactors;

/// Relative exponential gap `1 - e^{-2β(t_{i+1}-t_i)}` below which the grid
/// is rejected for the constructive inverse.
pub const CONDITIONING_THRESHOLD: f64 = 1e-14;

/// Largest matrix handed to the dense eigen-solver or inverse.
pub const DENSE_LIMIT: usize = 512;

pub const PSD_TOLERANCE: f64 = 1e-10;

/// `k(t_i, t_j)` over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    spec: KernelSpec,
    grid: TimeGrid,
    entries: DMatrix<f64>,
}

impl KernelMatrix {
    /// Evaluates the upper triangle in parallel and mirrors it, so the
    /// result is symmetric bit for bit.
    pub fn assemble(spec: &KernelSpec, grid: &TimeGrid) -> Result<Self> {
        for &t in grid.points() {
            spec.check_point(t)?;
        }
        let t = grid.points();
        let n = t.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| spec.value(t[i], t[j])).collect())
            .collect();
        let mut entries = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                entries[(i, i + off)] = v;
                entries[(i + off, i)] = v;
            }
        }
        Ok(Self {
            spec: *spec,
            grid: grid.clone(),
            entries,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn psd_check(&self) -> Result<PsdReport> {
        psd_check(&self.entries)
    }

    /// General-purpose LU inverse, for cross-checks only.
    pub fn dense_inverse(&self) -> Result<DMatrix<f64>> {
        let n = self.len();
        if n > DENSE_LIMIT {
            return Err(Error::InvalidInput(format!(
                "dense inverse limited to n ≤ {DENSE_LIMIT}, got {n}"
            )));
        }
        self.entries
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Factorization("kernel matrix is singular".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub passed: bool,
}

/// Extreme eigenvalues of a symmetric matrix; passes iff
/// `λ_min ≥ -1e-10 λ_max`. Only the lower triangle is read.
pub fn psd_check(m: &DMatrix<f64>) -> Result<PsdReport> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!("matrix is {:?}, not square", m.shape())));
    }
    if m.nrows() > DENSE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "eigen-solve limited to n ≤ {DENSE_LIMIT}, got {}",
            m.nrows()
        )));
    }
    if m.is_empty() {
        return Ok(PsdReport {
            lambda_min: 0.0,
            lambda_max: 0.0,
            passed: true,
        });
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let lambda_min = eig.min();
    let lambda_max = eig.max();
    Ok(PsdReport {
        lambda_min,
        lambda_max,
        passed: lambda_min >= -PSD_TOLERANCE * lambda_max.max(0.0),
    })
}

/// Symmetric tridiagonal matrix stored by its two distinct diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Tridiagonal {
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Entries `(i, i+1)`.
    pub fn off(&self) -> &[f64] {
        &self.off
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.abs_diff(j) {
            0 => self.diag[i],
            1 => self.off[i.min(j)],
            _ => 0.0,
        }
    }

    /// Dense copy; entries beyond the first off-diagonals are exactly zero.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }
}

/// `K = R⁻¹ D R⁻ᵀ` with `R` upper bidiagonal, read off the Markov recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovFactorization {
    /// `R_{ii} = 1/b_i`.
    r_diag: Vec<f64>,
    /// `R_{i,i+1} = -1/b_{i+1}`.
    r_super: Vec<f64>,
    d: Vec<f64>,
}

impl MarkovFactorization {
    pub fn new(km: &KernelMatrix) -> Result<Self> {
        let mf = MarkovFactors::new(km.grid(), km.spec())?;
        check_conditioning(&mf)?;
        let b = mf.scale();
        Ok(Self {
            r_diag: b.iter().map(|x| 1.0 / x).collect(),
            r_super: b.iter().skip(1).map(|x| -1.0 / x).collect(),
            d: mf.increments().to_vec(),
        })
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn r(&self) -> DMatrix<f64> {
        let n = self.r_diag.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.r_diag[i]
            } else if j == i + 1 {
                self.r_super[i]
            } else {
                0.0
            }
        })
    }

    /// `R⁻¹ D R⁻ᵀ`, with `R⁻¹` obtained by back substitution.
    pub fn reconstruct(&self) -> Result<DMatrix<f64>> {
        let n = self.d.len();
        let r_inv = self
            .r()
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::Factorization("bidiagonal factor is singular".into()))?;
        let scaled = DMatrix::from_fn(n, n, |i, j| r_inv[(i, j)] * self.d[j]);
        Ok(scaled * r_inv.transpose())
    }

    /// `Rᵀ D⁻¹ R`.
    pub fn inverse(&self) -> Tridiagonal {
        let n = self.d.len();
        let diag = (0..n)
            .map(|i| {
                let mut v = self.r_diag[i] * self.r_diag[i] / self.d[i];
                if i > 0 {
                    v += self.r_super[i - 1] * self.r_super[i - 1] / self.d[i - 1];
                }
                v
            })
            .collect();
        let off = (0..n.saturating_sub(1))
            .map(|i| self.r_diag[i] * self.r_super[i] / self.d[i])
            .collect();
        Tridiagonal { diag, off }
    }
}

fn check_conditioning(mf: &MarkovFactors) -> Result<()> {
    let t = mf.times();
    for (i, w) in t.windows(2).enumerate() {
        let gap = -(-2.0 * mf.beta() * (w[1] - w[0])).exp_m1();
        if gap < CONDITIONING_THRESHOLD || mf.increments()[i] <= 0.0 {
            return Err(Error::Conditioning {
                left: w[0],
                right: w[1],
                gap,
                threshold: CONDITIONING_THRESHOLD,
            });
        }
    }
    if let Some(&last) = mf.increments().last() {
        if !(last > 0.0) {
            return Err(Error::Conditioning {
                left: *t.last().unwrap(),
                right: f64::INFINITY,
                gap: last,
                threshold: CONDITIONING_THRESHOLD,
            });
        }
    }
    Ok(())
}

/// Constructive inverse of a TC or DC kernel matrix.
pub fn tridiagonal_inverse(km: &KernelMatrix) -> Result<Tridiagonal> {
    Ok(MarkovFactorization::new(km)?.inverse())
}

/// `max_{|i-j|≥2} |m_ij| / max |m_ij|`.
pub fn off_band_ratio(m: &DMatrix<f64>) -> f64 {
    let peak = m.amax();
    if peak == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i.abs_diff(j) >= 2 {
                worst = worst.max(m[(i, j)].abs());
            }
        }
    }
    worst / peak
}

/// `‖A B - I‖_max`.
pub fn identity_residual(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    (a * b - DMatrix::<f64>::identity(n, n)).amax()
}

/// `n` sorted uniform draws on `[0, 1)`.
pub fn sorted_uniform_grid(seed: u64, n: usize) -> Result<TimeGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<f64> = (0..n)
        .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
        .collect();
    points.sort_by(f64::total_cmp);
    TimeGrid::half_line(points)
}

/// On a uniform grid `e^{-αt_i} (K⁻¹)_{ij} e^{-αt_j}` is the inverse of the
/// stationary matrix `e^{-β|t_i - t_j|}`, whose interior diagonals are
/// constant. Returns the largest deviation from constancy, relative to the
/// largest scaled entry, over rows `1..n-1` of the main diagonal and all of
/// the first off-diagonal.
pub fn scaled_toeplitz_deviation(inv: &Tridiagonal, grid: &TimeGrid, alpha: f64) -> f64 {
    let t = grid.points();
    let n = inv.len();
    let e: Vec<f64> = t.iter().map(|&x| (-alpha * x).exp()).collect();
    let diag: Vec<f64> = (0..n).map(|i| e[i] * inv.diag()[i] * e[i]).collect();
    let off: Vec<f64> = (0..n.saturating_sub(1))
        .map(|i| e[i] * inv.off()[i] * e[i + 1])
        .collect();
    let peak = diag.iter().chain(&off).fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return 0.0;
    }
    let spread = |v: &[f64]| {
        v.first().map_or(0.0, |&first| {
            v.iter().fold(0.0_f64, |m, x| m.max((x - first).abs()))
        })
    };
    let interior = if n > 2 { &diag[1..n - 1] } else { &diag[..0] };
    spread(interior).max(spread(&off)) / peak
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::eval_kernel;
    use proptest::prelude::*;
    use rand_chacha::rand_core::RngCore;

    fn unit_draw(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn assembly_examples() {
        let spec = KernelSpec::dc(1.0, 0.5).unwrap();
        let km = KernelMatrix::assemble(&spec, &TimeGrid::half_line(vec![0.0, 1.0]).unwrap()).unwrap();
        let e = km.entries();
        assert_eq!(e[(0, 0)], 1.0);
        assert!((e[(0, 1)] - (-1.5_f64).exp()).abs() <= 1e-16);
        assert!((e[(1, 1)] - (-2.0_f64).exp()).abs() <= 1e-16);

        let single = KernelMatrix::assemble(&KernelSpec::ss(0.7).unwrap(), &TimeGrid::half_line(vec![1.3]).unwrap()).unwrap();
        assert_eq!(single.entries()[(0, 0)], eval_kernel(&KernelSpec::ss(0.7).unwrap(), 1.3, 1.3).unwrap());

        let grid = TimeGrid::half_line(vec![0.0, 1.0, 2.0]).unwrap();
        let tc = KernelMatrix::assemble(&KernelSpec::tc(0.5).unwrap(), &grid).unwrap();
        let dc = KernelMatrix::assemble(&KernelSpec::dc(0.5, 0.5).unwrap(), &grid).unwrap();
        assert_eq!(tc.entries(), dc.entries());
    }

    #[test]
    fn assembly_rejects_points_outside_domain() {
        let grid = TimeGrid::half_line(vec![0.5, 2.0]).unwrap();
        assert!(KernelMatrix::assemble(&KernelSpec::spline1(), &grid).is_err());
    }

    #[test]
    fn psd_examples() {
        let grid = sorted_uniform_grid(3, 30).unwrap();
        let km = KernelMatrix::assemble(&KernelSpec::dc(0.2, 0.3).unwrap(), &grid).unwrap();
        assert!(km.psd_check().unwrap().passed);
        let bad = psd_check(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert!(!bad.passed);
        assert!((bad.lambda_min + 1.0).abs() <= 1e-14);
        let zero = psd_check(&DMatrix::from_element(1, 1, 0.0)).unwrap();
        assert!(zero.passed && zero.lambda_min == 0.0 && zero.lambda_max == 0.0);
    }

    #[test]
    fn example_grid_has_banded_inverse() {
        let grid = sorted_uniform_grid(1, 10).unwrap();
        let km = KernelMatrix::assemble(&KernelSpec::dc(0.2, 0.3).unwrap(), &grid).unwrap();
        let dense = km.dense_inverse().unwrap();
        assert!(off_band_ratio(&dense) <= 1e-8, "{}", off_band_ratio(&dense));
        let tri = tridiagonal_inverse(&km).unwrap().to_dense();
        assert!(identity_residual(km.entries(), &tri) <= 1e-10);
        assert_eq!(off_band_ratio(&tri), 0.0);
    }

    #[test]
    fn single_point_inverse() {
        let km = KernelMatrix::assemble(&KernelSpec::dc(1.0, 0.4).unwrap(), &TimeGrid::half_line(vec![0.0]).unwrap()).unwrap();
        let tri = tridiagonal_inverse(&km).unwrap();
        assert!((tri.get(0, 0) - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn constructive_inverse_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let mut t = 2.0 * unit_draw(&mut rng);
            let points = (0..3)
                .map(|_| {
                    let p = t;
                    t += 0.1 + unit_draw(&mut rng);
                    p
                })
                .collect();
            let grid = TimeGrid::half_line(points).unwrap();
            let spec = KernelSpec::dc(0.1 + unit_draw(&mut rng), 0.1 + unit_draw(&mut rng)).unwrap();
            let km = KernelMatrix::assemble(&spec, &grid).unwrap();
            let tri = tridiagonal_inverse(&km).unwrap().to_dense();
            let dense = km.dense_inverse().unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let scale = dense[(i, j)].abs().max(1e-300);
                    if i.abs_diff(j) < 2 {
                        assert!((tri[(i, j)] - dense[(i, j)]).abs() <= 1e-10 * scale);
                    } else {
                        assert!(dense[(i, j)].abs() <= 1e-10 * dense.amax());
                    }
                }
            }
        }
    }

    #[test]
    fn factorization_reconstructs_gram() {
        let grid = sorted_uniform_grid(8, 25).unwrap();
        let km = KernelMatrix::assemble(&KernelSpec::dc(0.9, 0.4).unwrap(), &grid).unwrap();
        let f = MarkovFactorization::new(&km).unwrap();
        let k = f.reconstruct().unwrap();
        let rel = (&k - km.entries()).amax() / km.entries().amax();
        assert!(rel <= 1e-12, "{rel}");
        let r = f.r();
        assert_eq!(off_band_ratio(&(&r + r.transpose())), 0.0);
    }

    #[test]
    fn coincident_points_name_the_interval() {
        let grid = TimeGrid::half_line(vec![0.0, 1.0, 1.0 + 1e-16 * 8.0]).unwrap();
        let km = KernelMatrix::assemble(&KernelSpec::dc(1.0, 0.5).unwrap(), &grid).unwrap();
        match tridiagonal_inverse(&km) {
            Err(Error::Conditioning { left, right, .. }) => {
                assert_eq!(left, 1.0);
                assert!(right > 1.0);
            }
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn ss_inverse_is_not_tridiagonal() {
        for n in [4, 6, 10] {
            let grid = TimeGrid::half_line(TimeGrid::linspace(0.0, 3.0, n)).unwrap();
            let km = KernelMatrix::assemble(&KernelSpec::ss(0.5).unwrap(), &grid).unwrap();
            let ratio = off_band_ratio(&km.dense_inverse().unwrap());
            assert!(ratio > 1e-3, "n {n}: {ratio}");
        }
        let grid = TimeGrid::half_line(vec![0.0, 1.0]).unwrap();
        assert!(tridiagonal_inverse(&KernelMatrix::assemble(&KernelSpec::ss(0.5).unwrap(), &grid).unwrap()).is_err());
    }

    #[test]
    fn uniform_grid_scaled_inverse_is_stationary() {
        let (alpha, beta, h, n) = (0.6, 0.25, 0.4, 12);
        let grid = TimeGrid::half_line((0..n).map(|i| 0.3 + h * i as f64).collect()).unwrap();
        let km = KernelMatrix::assemble(&KernelSpec::dc(alpha, beta).unwrap(), &grid).unwrap();
        let tri = tridiagonal_inverse(&km).unwrap();
        assert!(scaled_toeplitz_deviation(&tri, &grid, alpha) <= 1e-12);
        // inverse of e^{-β|i-j|h}: r = e^{-βh}
        let r = (-beta * h).exp();
        let s = 1.0 - r * r;
        let t = grid.points();
        let scaled = |i: usize, j: usize| (-alpha * t[i]).exp() * tri.get(i, j) * (-alpha * t[j]).exp();
        assert!((scaled(0, 0) - 1.0 / s).abs() <= 1e-12);
        assert!((scaled(n - 1, n - 1) - 1.0 / s).abs() <= 1e-12);
        assert!((scaled(5, 5) - (1.0 + r * r) / s).abs() <= 1e-12);
        assert!((scaled(3, 4) + r / s).abs() <= 1e-12);
        // the unscaled diagonal grows like e^{2αt}
        assert!(tri.diag()[8] > 2.0 * tri.diag()[4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn tridiagonal_on_random_grids(
            n in 3usize..=100,
            alpha in 0.1f64..2.0,
            beta in 0.1f64..2.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let span = 4.0 / alpha.max(beta);
            let mut t = 0.0;
            let points: Vec<f64> = (0..n).map(|_| {
                let p = t;
                t += span / n as f64 * (0.5 + unit_draw(&mut rng));
                p
            }).collect();
            let grid = TimeGrid::half_line(points).unwrap();
            let km = KernelMatrix::assemble(&KernelSpec::dc(alpha, beta).unwrap(), &grid).unwrap();
            let tri = tridiagonal_inverse(&km).unwrap().to_dense();
            prop_assert_eq!(off_band_ratio(&tri), 0.0);
            prop_assert!(identity_residual(km.entries(), &tri) <= 1e-10);
            prop_assert!(off_band_ratio(&km.dense_inverse().unwrap()) <= 1e-8);
            prop_assert!(km.psd_check().unwrap().passed);
            let bitwise = km.entries() == &km.entries().transpose();
            prop_assert!(bitwise);
        }
    }
}
