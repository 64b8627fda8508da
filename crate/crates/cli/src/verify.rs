//! The invariant suite behind `dckernel verify`. Every check runs; a failing
//! or erroring check is recorded and the suite moves on.

use dckernel::estimator::{
    self, ConvolutionQuadrature, ExpTerm, OutputKernel, GAMMA_FLOOR,
};
use dckernel::kernelmat::{
    identity_residual, off_band_ratio, sorted_uniform_grid, tridiagonal_inverse,
};
use dckernel::maxent::{
    dc_markov_covariance, dc_process_covariance, empirical_moments, entropy_comparison,
    sample_dc_markov, verify_maxent_constraints, Moments, NoiseStream, EXACT_CONSTRAINT_TOLERANCE,
};
use dckernel::mercer::{expansion_sup_error, spline_tail_bound};
use dckernel::rkhs::{dc_norm_exponential, dc_norm_integral, dc_norm_series, tc_norm_integral};
use dckernel::{
    Dataset, EigenSystem, FunctionHandle, Input, KernelMatrix, KernelSpec, QuadratureConfig, TimeGrid,
};
use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::io::{num, CsvArtifact};

/// Norm-suite triples `(β, ρ, p)` with `γ = 2β(p + ρ)`, so that `p > ½` is
/// the membership margin.
pub const NORM_TRIPLES: [(f64, f64, f64); 10] = [
    (0.5, 0.0, 1.0),
    (0.5, 0.0, 0.75),
    (0.3, 0.5, 1.0),
    (1.0, -0.25, 1.5),
    (0.8, 1.0, 2.0),
    (0.2, 0.25, 1.2),
    (1.5, 0.0, 3.0),
    (0.4, -0.4, 1.0),
    (0.6, 2.0, 1.5),
    (1.2, 0.5, 0.9),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Pass when `measured ≤ threshold`.
    AtMost,
    /// Pass when `measured > threshold`.
    Above,
    /// Pass when `measured ≥ threshold`.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub section: &'static str,
    pub name: String,
    pub measured: Option<f64>,
    pub comparison: Comparison,
    pub threshold: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config_hash: String,
    pub passed: bool,
    pub total: usize,
    pub failures: usize,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn section_passed(&self, section: &str) -> bool {
        self.checks.iter().filter(|c| c.section == section).all(|c| c.passed)
    }

    pub fn to_csv(&self) -> CsvArtifact {
        let mut csv = CsvArtifact::new(
            &["section", "name", "measured", "comparison", "threshold", "passed"],
            "dimensionless residuals and ratios",
        );
        for c in &self.checks {
            let comparison = match c.comparison {
                Comparison::AtMost => "<=",
                Comparison::Above => ">",
                Comparison::AtLeast => ">=",
            };
            csv.push(vec![
                c.section.to_string(),
                c.name.clone(),
                c.measured.map_or_else(|| "nan".to_string(), num),
                comparison.to_string(),
                num(c.threshold),
                c.passed.to_string(),
            ]);
        }
        csv
    }
}

pub const SECTIONS: [&str; 6] = ["identity", "mercer", "norm", "maxent", "tridiag", "estimator"];

struct Section {
    name: &'static str,
    checks: Vec<Check>,
}

impl Section {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: Vec::new(),
        }
    }

    fn record(
        &mut self,
        name: impl Into<String>,
        measured: dckernel::Result<f64>,
        comparison: Comparison,
        threshold: f64,
    ) {
        let name = name.into();
        let check = match measured {
            Ok(m) => {
                let passed = match comparison {
                    Comparison::AtMost => m <= threshold,
                    Comparison::Above => m > threshold,
                    Comparison::AtLeast => m >= threshold,
                };
                Check {
                    section: self.name,
                    name,
                    measured: Some(m),
                    comparison,
                    threshold,
                    passed,
                    error: None,
                }
            }
            Err(e) => Check {
                section: self.name,
                name,
                measured: None,
                comparison,
                threshold,
                passed: false,
                error: Some(e.to_string()),
            },
        };
        if !check.passed {
            log::warn!("{}/{}: failed ({:?})", check.section, check.name, check.measured);
        }
        self.checks.push(check);
    }

    fn at_most(&mut self, name: impl Into<String>, measured: dckernel::Result<f64>, threshold: f64) {
        self.record(name, measured, Comparison::AtMost, threshold);
    }
}

fn relative(value: f64, reference: f64) -> f64 {
    ((value - reference) / reference).abs()
}

fn unit_draw(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Runs every section and aggregates the results.
pub fn run(cfg: &RunConfig) -> CliResult<VerifyReport> {
    let (alpha, beta) = cfg.decay_rates("verify")?;
    let kernel = cfg.kernel;
    let sections = [
        identity_section(&kernel),
        mercer_section(&kernel, &cfg.quadrature),
        norm_section(&cfg.quadrature, cfg.verify.series_truncation),
        maxent_section(cfg, alpha, beta),
        tridiag_section(cfg),
        estimator_section(&kernel, &cfg.convolution),
    ];
    let checks: Vec<Check> = sections.into_iter().flat_map(|s| s.checks).collect();
    let failures = checks.iter().filter(|c| !c.passed).count();
    Ok(VerifyReport {
        config_hash: cfg.hash(),
        passed: failures == 0,
        total: checks.len(),
        failures,
        checks,
    })
}

fn identity_section(kernel: &KernelSpec) -> Section {
    let mut s = Section::new("identity");
    let grid = TimeGrid::linspace(0.0, 10.0, 50);
    let mut specs = vec![
        KernelSpec::ss(0.5),
        KernelSpec::ss(1.3),
        KernelSpec::tc(0.5),
        KernelSpec::tc(1.1),
        KernelSpec::dc(0.2, 0.3),
        KernelSpec::dc(1.0, 0.5),
    ];
    specs.push(Ok(*kernel));
    for spec in specs {
        match spec {
            Ok(spec) => s.at_most(
                format!("{:?}", spec.kind()),
                dckernel::verify_stable_spline_identity(&spec, &grid),
                1e-13,
            ),
            Err(e) => s.at_most("kernel", Err(e), 1e-13),
        }
    }
    s
}

fn mercer_section(kernel: &KernelSpec, quad: &QuadratureConfig) -> Section {
    let mut s = Section::new("mercer");
    let rho = kernel.rho().unwrap_or(0.5);
    let systems: [(&str, dckernel::Result<KernelSpec>, Vec<f64>); 3] = [
        ("spline1", Ok(KernelSpec::spline1()), vec![0.1, 0.5, 0.9]),
        ("genspline1", KernelSpec::genspline1(rho), vec![0.1, 0.5, 0.9]),
        ("dc", Ok(*kernel), vec![0.0, 0.7, 4.0]),
    ];
    for (label, spec, probes) in systems {
        let sys = spec.and_then(|k| EigenSystem::new(k, 10));
        for i in [1, 3, 10] {
            let r = sys.as_ref().map_err(Clone::clone).and_then(|sys| sys.verify_eigen_equation(i, &probes, quad));
            s.at_most(format!("{label} eigen residual i={i}"), r, 1e-6);
        }
        let gram = sys.as_ref().map_err(Clone::clone).and_then(|sys| {
            let g = sys.orthonormality_gram(10, quad)?;
            Ok((g - DMatrix::<f64>::identity(10, 10)).amax())
        });
        s.at_most(format!("{label} orthonormality gram"), gram, 1e-6);
    }
    let sup = EigenSystem::new(KernelSpec::spline1(), 1000)
        .and_then(|sys| expansion_sup_error(&sys, &TimeGrid::linspace(0.0, 1.0, 100)));
    s.at_most("spline1 M=1000 sup error", sup.clone(), 2.1e-4);
    s.at_most("spline1 M=1000 sup error vs tail bound", sup, spline_tail_bound(1000));
    s
}

fn norm_section(quad: &QuadratureConfig, truncation: usize) -> Section {
    let mut s = Section::new("norm");
    let rows: Vec<_> = NORM_TRIPLES
        .par_iter()
        .map(|&(beta, rho, p)| {
            let alpha = (2.0 * rho + 1.0) * beta;
            let gamma = 2.0 * beta * (p + rho);
            let g = FunctionHandle::exponential(gamma);
            let closed = dc_norm_exponential(gamma, beta, rho);
            let spec = KernelSpec::dc(alpha, beta);
            let integral = spec.clone().and_then(|k| dc_norm_integral(&g, &k, quad));
            let series = spec
                .and_then(|k| EigenSystem::new(k, truncation))
                .and_then(|sys| dc_norm_series(&g, &sys, quad))
                .map(|sn| sn.norm_sq);
            (beta, rho, gamma, closed, integral, series)
        })
        .collect();
    for (beta, rho, gamma, closed, integral, series) in rows {
        let label = format!("beta={beta} rho={rho} gamma={gamma}");
        let Some(closed) = closed else {
            s.at_most(
                format!("{label} closed form"),
                Err(dckernel::Error::InvalidInput("outside the RKHS".into())),
                0.0,
            );
            continue;
        };
        s.at_most(format!("{label} integral"), integral.map(|v| relative(v, closed)), 1e-8);
        s.at_most(format!("{label} series"), series.map(|v| relative(v, closed)), 2e-2);
    }
    for (alpha, beta, t0) in [(0.2, 0.3, 0.0), (1.0, 0.5, 0.7), (0.3, 0.9, 2.0)] {
        let r = KernelSpec::dc(alpha, beta).and_then(|k| {
            let v = dc_norm_integral(&FunctionHandle::kernel_section(&k, t0)?, &k, quad)?;
            Ok(relative(v, (-2.0 * alpha * t0).exp()))
        });
        s.at_most(format!("reproducing alpha={alpha} beta={beta} t0={t0}"), r, 1e-6);
    }
    for beta in [0.5, 1.2] {
        let g = FunctionHandle::exp_sum(vec![(1.0, 2.0 * beta), (-0.5, 3.0 * beta)]);
        let r = KernelSpec::tc(beta).and_then(|tc| {
            let dc = KernelSpec::dc(beta, beta)?;
            Ok(relative(dc_norm_integral(&g, &dc, quad)?, tc_norm_integral(&g, &tc, quad)?))
        });
        s.at_most(format!("tc vs dc rho=0 beta={beta}"), r, 1e-12);
    }
    s
}

/// Random half-line grid `k` of the MaxEnt section, with its kernel.
pub fn maxent_grid(seed: u64, k: usize) -> dckernel::Result<(TimeGrid, KernelSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let n = 2 + (rng.next_u64() % 19) as usize;
    let alpha = 0.1 + 1.4 * unit_draw(&mut rng);
    let beta = 0.1 + 1.4 * unit_draw(&mut rng);
    let mut t = unit_draw(&mut rng);
    let points = (0..n)
        .map(|_| {
            let p = t;
            t += 0.05 + 0.5 * unit_draw(&mut rng);
            p
        })
        .collect();
    Ok((TimeGrid::half_line(points)?, KernelSpec::dc(alpha, beta)?))
}

fn gram(spec: &KernelSpec, t: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), t.len(), |i, j| spec.value(t[i], t[j]))
}

fn maxent_section(cfg: &RunConfig, alpha: f64, beta: f64) -> Section {
    let mut s = Section::new("maxent");
    for k in 0..cfg.verify.random_grids {
        let drawn = maxent_grid(cfg.verify.seed, k);
        let label = match &drawn {
            Ok((g, spec)) => format!("grid {k} n={} {:?}", g.len(), spec.kind()),
            Err(_) => format!("grid {k}"),
        };
        match &drawn {
            Ok((grid, spec)) => {
                let k_ref = gram(spec, grid.points());
                let anticausal = dc_process_covariance(grid, spec);
                s.at_most(
                    format!("{label} anticausal covariance"),
                    anticausal.as_ref().map(|c| (c - &k_ref).amax()).map_err(Clone::clone),
                    1e-13,
                );
                s.at_most(
                    format!("{label} markov covariance"),
                    dc_markov_covariance(grid, spec).map(|c| (c - &k_ref).amax()),
                    1e-13,
                );
                let constraints = anticausal.and_then(|cov| {
                    let report = verify_maxent_constraints(
                        Moments::Exact {
                            covariance: &cov,
                            tolerance: EXACT_CONSTRAINT_TOLERANCE,
                        },
                        grid,
                        spec,
                    )?;
                    Ok(report.max_residual())
                });
                s.at_most(format!("{label} constraint residual"), constraints, 1e-13);
                let entropy = entropy_comparison(grid, spec, &[0.2, 0.5]).map(|e| {
                    let best_control = e.controls.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
                    e.maxent_log_det - best_control
                });
                s.record(format!("{label} log-det margin over controls"), entropy, Comparison::Above, 0.0);
            }
            Err(e) => s.at_most(label, Err(e.clone()), 0.0),
        }
    }

    let mc = (|| {
        let grid = TimeGrid::half_line(cfg.sampling.grid.resolve())?;
        let spec = KernelSpec::dc(alpha, beta)?;
        let samples = sample_dc_markov(&grid, &spec, cfg.verify.seed, cfg.verify.mc_samples)?;
        let z = empirical_moments(&samples)?.max_standardized_error(&gram(&spec, grid.points()));
        let report = verify_maxent_constraints(Moments::Samples(&samples), &grid, &spec)?;
        let worst_constraint = report
            .checks
            .iter()
            .map(|c| c.residual / (c.tolerance / 3.0))
            .fold(0.0, f64::max);
        Ok((z, worst_constraint))
    })();
    let n = cfg.verify.mc_samples;
    s.at_most(format!("monte carlo covariance n={n} (standard errors)"), mc.clone().map(|m| m.0), 3.0);
    s.at_most(format!("monte carlo constraints n={n} (standard errors)"), mc.map(|m| m.1), 3.0);
    s
}

/// Grid of random tridiagonal draw `k`: `n ∈ [3, 100]`, `α, β ∈ [0.1, 2]`,
/// span `4/max(α, β)` with gaps between half and one and a half of the mean.
pub fn tridiag_draw(seed: u64, k: usize) -> dckernel::Result<(TimeGrid, KernelSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1_000 + k as u64);
    let n = 3 + (rng.next_u64() % 98) as usize;
    let alpha = 0.1 + 1.9 * unit_draw(&mut rng);
    let beta = 0.1 + 1.9 * unit_draw(&mut rng);
    let span = 4.0 / alpha.max(beta);
    let mut t = 0.0;
    let points = (0..n)
        .map(|_| {
            let p = t;
            t += span / n as f64 * (0.5 + unit_draw(&mut rng));
            p
        })
        .collect();
    Ok((TimeGrid::half_line(points)?, KernelSpec::dc(alpha, beta)?))
}

fn tridiag_section(cfg: &RunConfig) -> Section {
    let mut s = Section::new("tridiag");
    let seed = cfg.verify.example_seed;
    let example = sorted_uniform_grid(seed, 10)
        .and_then(|g| KernelMatrix::assemble(&KernelSpec::dc(0.2, 0.3)?, &g));
    s.at_most(
        format!("example seed={seed} dense inverse off-band ratio"),
        example.as_ref().map_err(Clone::clone).and_then(|km| Ok(off_band_ratio(&km.dense_inverse()?))),
        1e-8,
    );
    let constructive = example.as_ref().map_err(Clone::clone).and_then(|km| {
        let tri = tridiagonal_inverse(km)?.to_dense();
        Ok((identity_residual(km.entries(), &tri), off_band_ratio(&tri)))
    });
    s.at_most(
        format!("example seed={seed} constructive identity residual"),
        constructive.clone().map(|c| c.0),
        1e-10,
    );
    s.at_most(format!("example seed={seed} constructive off-band ratio"), constructive.map(|c| c.1), 0.0);

    let draws: Vec<_> = (0..cfg.verify.tridiag_draws)
        .into_par_iter()
        .map(|k| {
            let r = tridiag_draw(cfg.verify.seed, k).and_then(|(grid, spec)| {
                let km = KernelMatrix::assemble(&spec, &grid)?;
                let tri = tridiagonal_inverse(&km)?.to_dense();
                Ok((identity_residual(km.entries(), &tri), off_band_ratio(&km.dense_inverse()?)))
            });
            (k, r)
        })
        .collect();
    for (k, r) in draws {
        s.at_most(format!("draw {k} constructive identity residual"), r.clone().map(|v| v.0), 1e-10);
        s.at_most(format!("draw {k} dense inverse off-band ratio"), r.map(|v| v.1), 1e-8);
    }

    for n in [4, 6, 10] {
        let r = TimeGrid::half_line(TimeGrid::linspace(0.0, 3.0, n))
            .and_then(|g| KernelMatrix::assemble(&KernelSpec::ss(0.5)?, &g))
            .and_then(|km| Ok(off_band_ratio(&km.dense_inverse()?)));
        s.record(format!("ss control n={n} off-band ratio"), r, Comparison::Above, 1e-3);
    }
    s
}

fn estimator_section(kernel: &KernelSpec, quad: &ConvolutionQuadrature) -> Section {
    let mut s = Section::new("estimator");
    let times = TimeGrid::linspace(0.0, 5.0, 21);
    let impulse = OutputKernel::new(kernel, &Input::Impulse, quad).map(|ok| {
        let a = ok.matrix(&times);
        (a - gram(kernel, &times)).amax()
    });
    s.at_most("impulse output kernel vs gram", impulse, 1e-12);

    let times = TimeGrid::linspace(0.0, 5.0, 51);
    let y: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
    let recovery = Dataset::new(times, y, Input::Impulse, 0.0)
        .and_then(|data| estimator::estimate(kernel, &data, quad, Some(GAMMA_FLOOR)))
        .and_then(|res| {
            TimeGrid::linspace(0.0, 5.0, 1001)
                .iter()
                .try_fold(0.0_f64, |worst, &t| Ok(worst.max((res.reconstruct(t)? - (-t).exp()).abs())))
        });
    s.at_most("noise-free recovery of exp(-t) on [0,5]", recovery, 1e-3);

    let times = TimeGrid::linspace(0.2, 6.0, 30);
    let y: Vec<f64> = times
        .iter()
        .zip(NoiseStream::normals(4, 0, times.len()))
        .map(|(t, v)| 1.0 - (-t).exp() + 0.05 * v)
        .collect();
    let path = Dataset::new(times, y.clone(), Input::Step, 0.0025)
        .and_then(|data| estimator::output_kernel(kernel, &data, quad))
        .and_then(|okm| {
            let norms = (0..20)
                .map(|k| 10f64.powf(-4.0 + 6.0 * k as f64 / 19.0))
                .map(|g| Ok(DVector::from_vec(estimator::solve(&okm.matrix, &y, g)?).norm()))
                .collect::<dckernel::Result<Vec<f64>>>()?;
            Ok(norms.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max))
        });
    s.at_most("regularization path largest increase of |c|", path, 0.0);

    let input = Input::ExpSum {
        terms: vec![
            ExpTerm { coefficient: 1.0, rate: 0.5 },
            ExpTerm { coefficient: -0.4, rate: 2.0 },
        ],
    };
    let coarse = ConvolutionQuadrature {
        panel_width: 2.0,
        nodes: 2,
        ..quad.clone()
    };
    let probe = [0.7, 2.3, 4.0, 5.5];
    let factor = (0..4)
        .map(|l| Ok(OutputKernel::new(kernel, &input, &coarse.refined(l))?.matrix(&probe)))
        .collect::<dckernel::Result<Vec<_>>>()
        .map(|mats| {
            let changes: Vec<f64> = mats.windows(2).map(|w| (&w[1] - &w[0]).amax()).collect();
            changes.windows(2).map(|c| c[0] / c[1]).fold(f64::INFINITY, f64::min)
        });
    s.record("quadrature self-convergence factor", factor, Comparison::AtLeast, 2.0);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible_and_in_range() {
        for k in 0..30 {
            let (g, spec) = tridiag_draw(7, k).unwrap();
            assert_eq!(g, tridiag_draw(7, k).unwrap().0);
            assert!((3..=100).contains(&g.len()));
            let (a, b) = spec.decay_rates().unwrap();
            assert!((0.1..=2.0).contains(&a) && (0.1..=2.0).contains(&b));
            let (m, _) = maxent_grid(7, k).unwrap();
            assert!((2..=20).contains(&m.len()));
        }
        assert_ne!(tridiag_draw(7, 0).unwrap().0, tridiag_draw(7, 1).unwrap().0);
    }

    #[test]
    fn failures_are_recorded_not_raised() {
        let mut s = Section::new("x");
        s.at_most("ok", Ok(1.0), 2.0);
        s.at_most("bad", Ok(3.0), 2.0);
        s.at_most("err", Err(dckernel::Error::InvalidInput("boom".into())), 2.0);
        s.record("above", Ok(1.0), Comparison::Above, 1.0);
        let passed: Vec<bool> = s.checks.iter().map(|c| c.passed).collect();
        assert_eq!(passed, vec![true, false, false, false]);
        assert_eq!(s.checks[2].error.as_deref(), Some("invalid input: boom"));
    }
}
