//! One function per subcommand. Each reads the validated configuration,
//! computes, and writes its artifacts atomically into the output directory.

use std::path::PathBuf;

use dckernel::estimator::{self, EstimateResult, GammaSearch, GammaSource};
use dckernel::kernelmat::{identity_residual, off_band_ratio, sorted_uniform_grid, tridiagonal_inverse};
use dckernel::kernels::KernelDomain;
use dckernel::maxent::{
    dc_markov_covariance, dc_process_covariance, empirical_moments, genspline_process_covariance,
    sample_dc_markov, sample_dc_process, sample_genspline_process,
};
use dckernel::mercer::{expansion_sup_error, spline_tail_bound};
use dckernel::rkhs::{dc_norm_exponential, dc_norm_integral, dc_norm_series, tc_norm_integral};
use dckernel::{
    Dataset, EigenSystem, FunctionHandle, GaussianSample, Input, KernelKind, KernelMatrix, TimeGrid,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{Construction, FunctionConfig, InputConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{num, read_data, write_json, CsvArtifact};
use crate::verify;

/// Effective configuration plus where to read and write.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub hash: String,
    pub out_dir: PathBuf,
    pub data: Option<PathBuf>,
}

impl Context {
    /// `out` and `data` from the command line win over the `[io]` block.
    pub fn new(config: RunConfig, out: Option<PathBuf>, data: Option<PathBuf>) -> Self {
        let out_dir = out
            .or_else(|| config.io.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let data = data.or_else(|| config.io.data.clone());
        Self {
            hash: config.hash(),
            config,
            out_dir,
            data,
        }
    }

    fn write(&self, artifact: &CsvArtifact, name: &str) -> CliResult<PathBuf> {
        let path = artifact.write(&self.out_dir, name, &self.hash)?;
        log::info!("wrote {} ({} rows)", path.display(), artifact.len());
        Ok(path)
    }
}

#[derive(Debug, Serialize)]
struct EstimateReport<'a> {
    config_hash: &'a str,
    kernel: KernelKind,
    samples: usize,
    noise_variance: f64,
    gamma: f64,
    gamma_source: GammaSource,
    fit_percent: f64,
    solve_residual: f64,
    residual_rms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_search: Option<&'a GammaSearch>,
}

fn build_input(input: &InputConfig, data: &crate::io::DataTable) -> CliResult<Input> {
    Ok(match input {
        InputConfig::Impulse => Input::Impulse,
        InputConfig::Step => Input::Step,
        InputConfig::ExpSum { terms } => Input::ExpSum { terms: terms.clone() },
        InputConfig::Sampled => {
            let values = data.u.clone().ok_or_else(|| {
                CliError::Input("input kind `sampled` needs a `u` column in the data file".into())
            })?;
            Input::SampledZoh {
                times: data.time.clone(),
                values,
            }
        }
    })
}

pub fn estimate(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let path = ctx
        .data
        .as_deref()
        .ok_or_else(|| CliError::Input("estimate needs a data file (--data or io.data)".into()))?;
    let table = read_data(path)?;
    if table.u.is_some() && !matches!(cfg.estimation.input, InputConfig::Sampled) {
        log::info!("ignoring the `u` column: the configuration declares an analytic input");
    }
    let input = build_input(&cfg.estimation.input, &table)?;
    let dataset = Dataset::new(table.time, table.y, input, cfg.estimation.noise_variance)?;

    let search = match &cfg.estimation.gamma_grid {
        Some(grid) => Some(estimator::grid_search_gamma(&cfg.kernel, &dataset, grid, &cfg.convolution)?),
        None => None,
    };
    let gamma = search.as_ref().map(|s| s.best).or(cfg.estimation.gamma);
    let result = estimator::estimate(&cfg.kernel, &dataset, &cfg.convolution, gamma)?;
    if result.gamma_source() == GammaSource::Floor {
        log::warn!(
            "noise variance is 0 and no gamma was given; using the floor gamma = {:e}",
            result.gamma()
        );
    }

    let mut written = Vec::new();
    let mut curve = CsvArtifact::new(&["time", "g_hat"], "time [s], impulse response [output/input]");
    for t in cfg.estimation.eval.resolve() {
        curve.push_numbers(&[t, result.reconstruct(t)?]);
    }
    written.push(ctx.write(&curve, "estimate.csv")?);
    written.push(ctx.write(&fit_table(&result, &dataset), "coefficients.csv")?);

    let residuals = result.residuals();
    let report = EstimateReport {
        config_hash: &ctx.hash,
        kernel: cfg.kernel.kind(),
        samples: dataset.len(),
        noise_variance: dataset.noise_variance(),
        gamma: result.gamma(),
        gamma_source: result.gamma_source(),
        fit_percent: result.fit_percent(),
        solve_residual: result.solve_residual(),
        residual_rms: (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt(),
        gamma_search: search.as_ref(),
    };
    written.push(write_json(&ctx.out_dir, "report.json", &report)?);
    log::info!("fit {:.4}% with gamma {:e}", report.fit_percent, report.gamma);
    Ok(written)
}

fn fit_table(result: &EstimateResult, dataset: &Dataset) -> CsvArtifact {
    let mut t = CsvArtifact::new(
        &["time", "y", "coefficient", "fitted", "residual"],
        "time [s], output units, coefficients [1/input]",
    );
    let fitted = result.fitted();
    for (k, &time) in dataset.output_times().iter().enumerate() {
        let y = dataset.outputs()[k];
        t.push_numbers(&[time, y, result.coefficients()[k], fitted[k], y - fitted[k]]);
    }
    t
}

pub fn sample(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let s = &ctx.config.sampling;
    let kernel = &ctx.config.kernel;
    let points = s.grid.resolve();
    let (samples, exact): (Vec<GaussianSample>, DMatrix<f64>) = match s.construction {
        Construction::Genspline => {
            let rho = s.rho.or_else(|| kernel.rho()).ok_or_else(|| {
                CliError::Input("genspline sampling needs sampling.rho or a kernel with a rho".into())
            })?;
            let grid = TimeGrid::unit(points)?;
            (
                sample_genspline_process(&grid, rho, s.seed, s.count)?,
                genspline_process_covariance(&grid, rho)?,
            )
        }
        Construction::Anticausal => {
            let grid = TimeGrid::half_line(points)?;
            (
                sample_dc_process(&grid, kernel, s.seed, s.count)?,
                dc_process_covariance(&grid, kernel)?,
            )
        }
        Construction::Markov => {
            let grid = TimeGrid::half_line(points)?;
            (
                sample_dc_markov(&grid, kernel, s.seed, s.count)?,
                dc_markov_covariance(&grid, kernel)?,
            )
        }
    };
    let times = s.grid.resolve();

    let mut paths = CsvArtifact::new(&["sample", "time", "value"], "time [s], process value");
    for sample in &samples {
        for (t, v) in times.iter().zip(sample.values()) {
            paths.push(vec![sample.index().to_string(), num(*t), num(*v)]);
        }
    }

    let empirical = if samples.len() >= 2 {
        Some(empirical_moments(&samples)?)
    } else {
        None
    };
    let mut cov = CsvArtifact::new(
        &["row", "col", "time_row", "time_col", "exact", "empirical", "standard_error"],
        "time [s], covariance [value²]",
    );
    let n = times.len();
    for i in 0..n {
        for j in 0..n {
            let (e, se) = match &empirical {
                Some(m) => (num(m.covariance[(i, j)]), num(m.covariance_se[(i, j)])),
                None => (String::new(), String::new()),
            };
            cov.push(vec![
                i.to_string(),
                j.to_string(),
                num(times[i]),
                num(times[j]),
                num(exact[(i, j)]),
                e,
                se,
            ]);
        }
    }
    Ok(vec![ctx.write(&paths, "samples.csv")?, ctx.write(&cov, "covariance.csv")?])
}

pub fn expand(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let e = &ctx.config.expand;
    let kernel = ctx.config.kernel;
    let sys = EigenSystem::new(kernel, e.truncation)?;
    let stop = match kernel.domain() {
        KernelDomain::Unit => 1.0,
        KernelDomain::HalfLine => e.horizon,
    };
    let points = TimeGrid::linspace(0.0, stop, e.points);
    let mut table = CsvArtifact::new(
        &["t", "s", "exact", "truncated", "abs_error"],
        "t, s in the kernel domain; kernel values dimensionless",
    );
    for &t in &points {
        for &s in &points {
            let exact = kernel.eval(t, s)?;
            let trunc = sys.truncated_expansion(t, s)?;
            table.push_numbers(&[t, s, exact, trunc, (exact - trunc).abs()]);
        }
    }
    let sup = expansion_sup_error(&sys, &points)?;
    let mut summary = CsvArtifact::new(
        &["truncation", "points", "sup_error", "spline_tail_bound"],
        "dimensionless",
    );
    summary.push(vec![
        e.truncation.to_string(),
        e.points.to_string(),
        num(sup),
        num(spline_tail_bound(e.truncation)),
    ]);
    log::info!("sup error {sup:e} with {} terms", e.truncation);
    Ok(vec![ctx.write(&table, "expand.csv")?, ctx.write(&summary, "expand_summary.csv")?])
}

pub fn norm(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let kernel = cfg.kernel;
    let (alpha, beta) = cfg.decay_rates("norm")?;
    let rho = kernel.rho().expect("tc and dc kernels have a rho");
    let (g, closed) = match &cfg.norm.function {
        FunctionConfig::Exponential { rate } => {
            (FunctionHandle::exponential(*rate), dc_norm_exponential(*rate, beta, rho))
        }
        FunctionConfig::ExpSum { terms } => (
            FunctionHandle::exp_sum(terms.iter().map(|t| (t.coefficient, t.rate)).collect()),
            None,
        ),
        FunctionConfig::KernelSection { t0 } => (
            FunctionHandle::kernel_section(&kernel, *t0)?,
            Some((-2.0 * alpha * t0).exp()),
        ),
    };
    let mut table = CsvArtifact::new(&["method", "squared_norm"], "squared RKHS norm");
    let integral = match kernel.kind() {
        KernelKind::Tc { .. } => tc_norm_integral(&g, &kernel, &cfg.quadrature)?,
        _ => dc_norm_integral(&g, &kernel, &cfg.quadrature)?,
    };
    table.push(vec!["integral".into(), num(integral)]);
    if cfg.norm.series_truncation > 0 {
        let sys = EigenSystem::new(kernel, cfg.norm.series_truncation)?;
        let series = dc_norm_series(&g, &sys, &cfg.quadrature)?;
        table.push(vec![format!("series_m{}", cfg.norm.series_truncation), num(series.norm_sq)]);
    }
    if let Some(c) = closed {
        table.push(vec!["closed_form".into(), num(c)]);
    }
    log::info!("squared norm {integral:e} by quadrature");
    Ok(vec![ctx.write(&table, "norm.csv")?])
}

pub fn tridiag(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let t = &ctx.config.tridiag;
    let grid = match &t.points {
        Some(p) => TimeGrid::half_line(p.clone())?,
        None => sorted_uniform_grid(t.seed, t.size)?,
    };
    let km = KernelMatrix::assemble(&ctx.config.kernel, &grid)?;
    let dense = km.dense_inverse()?;
    let constructive = match ctx.config.kernel.decay_rates() {
        Some(_) => Some(tridiagonal_inverse(&km)?.to_dense()),
        None => None,
    };
    let times = grid.points();
    let n = times.len();

    let mut kmat = CsvArtifact::new(&["row", "col", "time_row", "time_col", "value"], "time [s], kernel value");
    let mut inv = CsvArtifact::new(&["row", "col", "constructive", "dense"], "inverse kernel value");
    let mut heat = CsvArtifact::new(&["row", "col", "abs_value"], "|inverse kernel value|");
    for i in 0..n {
        for j in 0..n {
            kmat.push(vec![i.to_string(), j.to_string(), num(times[i]), num(times[j]), num(km.entries()[(i, j)])]);
            let c = constructive.as_ref().map_or_else(String::new, |c| num(c[(i, j)]));
            inv.push(vec![i.to_string(), j.to_string(), c, num(dense[(i, j)])]);
            let shown = constructive.as_ref().unwrap_or(&dense)[(i, j)].abs();
            heat.push(vec![i.to_string(), j.to_string(), num(shown)]);
        }
    }

    let mut summary = CsvArtifact::new(
        &[
            "n",
            "dense_off_band_ratio",
            "dense_identity_residual",
            "constructive_identity_residual",
            "lambda_min",
        ],
        "dimensionless",
    );
    let psd = km.psd_check()?;
    let off = off_band_ratio(&dense);
    summary.push(vec![
        n.to_string(),
        num(off),
        num(identity_residual(km.entries(), &dense)),
        constructive
            .as_ref()
            .map_or_else(String::new, |c| num(identity_residual(km.entries(), c))),
        num(psd.lambda_min),
    ]);
    log::info!("off-band ratio of the dense inverse: {off:e}");

    let mut written = vec![
        ctx.write(&kmat, "kernel_matrix.csv")?,
        ctx.write(&inv, "inverse.csv")?,
        ctx.write(&summary, "tridiag_summary.csv")?,
    ];
    if t.heatmap {
        written.push(ctx.write(&heat, "heatmap.csv")?);
    }
    Ok(written)
}

/// Writes the report in both forms, then fails with exit code 1 if any
/// check failed.
pub fn verify(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let report = verify::run(&ctx.config)?;
    let written = vec![
        write_json(&ctx.out_dir, "verify_report.json", &report)?,
        ctx.write(&report.to_csv(), "verify.csv")?,
    ];
    for section in verify::SECTIONS {
        let state = if report.section_passed(section) { "PASS" } else { "FAIL" };
        log::info!("{section}: {state}");
    }
    if report.passed {
        Ok(written)
    } else {
        let names: Vec<String> = report.failed().map(|c| format!("{}/{}", c.section, c.name)).collect();
        Err(CliError::Check(format!(
            "{} of {} checks failed: {}",
            report.failures,
            report.total,
            names.join("; ")
        )))
    }
}

