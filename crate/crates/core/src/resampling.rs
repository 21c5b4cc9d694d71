//! Approximate vs exact cross-validation, bootstrap covariances, and
//! N-scaling studies.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    bounds_report, default_radius, derivative_norm_bounds, estimate_constants, taylor_error_bound,
    BoundsReport, ConstantsOptions, DomainSampler, DEFAULT_SAMPLES,
};
use crate::data::Dataset;
use crate::error::{HoijError, Result};
use crate::hoij::{BaseFit, SolveConfig};
use crate::linalg::norm2;
use crate::model::{make_problem, EstimatingProblem, ProblemConfig};
use crate::weights::{bootstrap_weights, loo_weights, WeightVector};

/// Description of the bootstrap covariance convention, written into outputs.
pub const COVARIANCE_NORMALIZATION: &str =
    "H^-1 S H^-T with S = (1/N^2) sum_n (g_n - g_bar)(g_n - g_bar)^T";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRequest {
    pub rho: f64,
    pub epsilon: f64,
    /// `None` uses `2 · C_op · δ_0`.
    pub radius: Option<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for BoundsRequest {
    fn default() -> Self {
        BoundsRequest {
            rho: crate::bounds::DEFAULT_RHO,
            epsilon: 0.0,
            radius: None,
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub max_order: usize,
    /// Worker threads; 1 runs sequentially.
    pub workers: usize,
    pub bounds: Option<BoundsRequest>,
    /// Store wall-clock times per weight (makes output nondeterministic).
    pub timings: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            max_order: 2,
            workers: 1,
            bounds: None,
            timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub weight_id: usize,
    /// Zero-based indices with `w_n = 0`.
    pub zero_weights: Vec<usize>,
    /// `θIJ^k` for `k = 0..=K`.
    pub theta_ij: Vec<Vec<f64>>,
    pub exact: Option<Vec<f64>>,
    /// `‖θIJ^k − θ̂(w)‖₂` for `k = 0..=K`.
    pub errors: Option<Vec<f64>>,
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expand_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refit_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSummary {
    pub k: usize,
    pub max_error: f64,
    pub mean_error: f64,
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model_id: String,
    pub n_obs: usize,
    pub theta_hat: Vec<f64>,
    pub max_order: usize,
    pub n_weights: usize,
    pub n_failed: usize,
    pub summary: Vec<OrderSummary>,
    pub bounds: Option<BoundsReport>,
    /// Why bounds are absent when they were requested.
    pub bounds_note: Option<String>,
    pub records: Vec<CvRecord>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn evaluate_weight<P: EstimatingProblem>(
    fit: &BaseFit<'_, P>,
    id: usize,
    w: &WeightVector,
    max_order: usize,
    timings: bool,
) -> CvRecord {
    let zero_weights = (0..w.len()).filter(|&i| w.values()[i] == 0.0).collect();
    let t0 = Instant::now();
    let expansion = fit.expand(w, max_order);
    let t1 = Instant::now();
    let exact = fit.refit(w);
    let t2 = Instant::now();
    let mut rec = CvRecord {
        weight_id: id,
        zero_weights,
        theta_ij: Vec::new(),
        exact: None,
        errors: None,
        failure: None,
        expand_seconds: timings.then(|| (t1 - t0).as_secs_f64()),
        refit_seconds: timings.then(|| (t2 - t1).as_secs_f64()),
    };
    match expansion {
        Ok(e) => rec.theta_ij = e.partial_sums(),
        Err(e) => rec.failure = Some(format!("expansion: {e}")),
    }
    match exact {
        Ok(x) => rec.exact = Some(x),
        Err(e) => {
            let msg = format!("refit: {e}");
            rec.failure = Some(match rec.failure.take() {
                Some(prev) => format!("{prev}; {msg}"),
                None => msg,
            });
        }
    }
    if let (Some(x), false) = (&rec.exact, rec.theta_ij.is_empty()) {
        rec.errors = Some(rec.theta_ij.iter().map(|t| distance(t, x)).collect());
    }
    rec
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HoijError::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Expands and refits at every weight vector. Failures at individual
/// weights are recorded and excluded from the summary.
pub fn run_cv<P: EstimatingProblem>(
    fit: &BaseFit<'_, P>,
    weights: impl IntoIterator<Item = WeightVector>,
    opts: &CvOptions,
) -> Result<CvReport> {
    let k = opts.max_order;
    if k > crate::ad::MAX_ORDER {
        return Err(HoijError::OrderTooLarge {
            order: k,
            max: crate::ad::MAX_ORDER,
        });
    }
    let weights: Vec<WeightVector> = weights.into_iter().collect();
    let n = fit.problem().n_obs();
    if let Some(w) = weights.iter().find(|w| w.len() != n) {
        return Err(HoijError::Dimension(format!(
            "weight vector has length {}, problem has {n} observations",
            w.len()
        )));
    }
    let records: Vec<CvRecord> = if opts.workers <= 1 {
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| evaluate_weight(fit, i, w, k, opts.timings))
            .collect()
    } else {
        with_workers(opts.workers, || {
            weights
                .par_iter()
                .enumerate()
                .map(|(i, w)| evaluate_weight(fit, i, w, k, opts.timings))
                .collect()
        })?
    };

    let (bounds, bounds_note, bound_per_k) = match &opts.bounds {
        None => (None, None, None),
        Some(req) => match compute_bounds(fit, k, req) {
            Ok((report, b)) => (Some(report), None, b),
            Err(e) => (None, Some(e.to_string()), None),
        },
    };
    let bounds_note = bounds_note.or_else(|| {
        bounds
            .as_ref()
            .filter(|b| !b.condition_satisfied)
            .map(|b| format!("condition not satisfied: C_set = {} > rho = {}", b.c_set, b.rho))
    });

    let ok: Vec<&Vec<f64>> = records.iter().filter_map(|r| r.errors.as_ref()).collect();
    let summary = (0..=k)
        .map(|j| {
            let errs: Vec<f64> = ok.iter().map(|e| e[j]).collect();
            OrderSummary {
                k: j,
                max_error: errs.iter().cloned().fold(0.0, f64::max),
                mean_error: if errs.is_empty() {
                    0.0
                } else {
                    errs.iter().sum::<f64>() / errs.len() as f64
                },
                bound: bound_per_k.as_ref().map(|b: &Vec<f64>| b[j]),
            }
        })
        .collect();
    Ok(CvReport {
        model_id: fit.problem().model_id().to_string(),
        n_obs: n,
        theta_hat: fit.theta_hat().to_vec(),
        max_order: k,
        n_weights: records.len(),
        n_failed: records.iter().filter(|r| r.errors.is_none()).count(),
        summary,
        bounds,
        bounds_note,
        records,
    })
}

fn compute_bounds<P: EstimatingProblem>(
    fit: &BaseFit<'_, P>,
    k: usize,
    req: &BoundsRequest,
) -> Result<(BoundsReport, Option<Vec<f64>>)> {
    let radius = match req.radius {
        Some(r) => r,
        None => default_radius(fit.problem(), fit.theta_hat())?,
    };
    let sampler = DomainSampler::new(fit.theta_hat().to_vec(), radius, req.n_samples, req.seed)?;
    let c = estimate_constants(
        fit.problem(),
        &sampler,
        k,
        &ConstantsOptions {
            rho: req.rho,
            epsilon: req.epsilon,
        },
    )?;
    let per_k = derivative_norm_bounds(&c, k)
        .ok()
        .map(|b| (0..=k).map(|j| taylor_error_bound(j, &b).expect("B through K + 1")).collect());
    Ok((bounds_report(&c, &sampler), per_k))
}

/// One row per weight and order.
pub fn write_cv_csv(report: &CvReport, out: impl Write) -> Result<()> {
    let d = report.theta_hat.len();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["weight_id".to_string(), "k".into(), "error".into(), "bound".into()];
    header.extend((0..d).map(|i| format!("theta_ij_{i}")));
    header.extend((0..d).map(|i| format!("exact_{i}")));
    header.push("failure".into());
    w.write_record(&header).map_err(csv_err)?;
    let bound: Vec<Option<f64>> = report.summary.iter().map(|s| s.bound).collect();
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
    for r in &report.records {
        for k in 0..=report.max_order {
            let mut row = vec![
                r.weight_id.to_string(),
                k.to_string(),
                fmt(r.errors.as_ref().map(|e| e[k])),
                fmt(bound[k]),
            ];
            let th = r.theta_ij.get(k);
            row.extend((0..d).map(|i| fmt(th.map(|t| t[i]))));
            row.extend((0..d).map(|i| fmt(r.exact.as_ref().map(|t| t[i]))));
            row.push(r.failure.clone().unwrap_or_default());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| HoijError::Io {
        path: "<csv>".into(),
        source: e,
    })?;
    Ok(())
}

fn csv_err(e: csv::Error) -> HoijError {
    HoijError::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let io = |e: std::io::Error| HoijError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut s = serde_json::to_string_pretty(value).map_err(|e| io(std::io::Error::other(e)))?;
    s.push('\n');
    std::fs::write(path, s).map_err(io)
}

/// `g_n(θ̂)` for every row, as an `N × D` matrix.
fn score_matrix<P: EstimatingProblem>(problem: &P, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = (0..problem.n_obs())
        .map(|n| problem.datum::<f64>(n, theta))
        .collect();
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(HoijError::NonFiniteEvaluation("g_n at the base fit".into()));
    }
    Ok(rows)
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..m)
                .map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum())
                .collect()
        })
        .collect()
}

fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = a.first().map_or(0, Vec::len);
    (0..m).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn sandwich(hinv: &[Vec<f64>], s: &[Vec<f64>]) -> Vec<Vec<f64>> {
    matmul(&matmul(hinv, s), &transpose(hinv))
}

/// `Ĥ⁻¹ S Ĥ⁻ᵀ` with `S = (1/N²) Σ_n (g_n − ḡ)(g_n − ḡ)ᵀ`.
pub fn sandwich_covariance<P: EstimatingProblem>(fit: &BaseFit<'_, P>) -> Result<Vec<Vec<f64>>> {
    let j = score_matrix(fit.problem(), fit.theta_hat())?;
    let n = j.len() as f64;
    let d = fit.theta_hat().len();
    let mut mean = vec![0.0; d];
    for r in &j {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
    }
    let mut s = vec![vec![0.0; d]; d];
    for r in &j {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for a in 0..d {
            for b in 0..d {
                s[a][b] += c[a] * c[b] / (n * n);
            }
        }
    }
    Ok(sandwich(&fit.hessian().inverse(), &s))
}

/// Covariance of `w ↦ θIJ¹(w)` under multinomial bootstrap weights,
/// `Ĥ⁻¹ (1/N²) Jᵀ(I − 11ᵀ/N) J Ĥ⁻ᵀ`.
pub fn ij_linear_covariance<P: EstimatingProblem>(fit: &BaseFit<'_, P>) -> Result<Vec<Vec<f64>>> {
    let j = score_matrix(fit.problem(), fit.theta_hat())?;
    let n = j.len() as f64;
    let jt = transpose(&j);
    let jtj = matmul(&jt, &j);
    let col: Vec<f64> = jt.iter().map(|r| r.iter().sum()).collect();
    let s: Vec<Vec<f64>> = jtj
        .iter()
        .enumerate()
        .map(|(a, row)| {
            row.iter()
                .enumerate()
                .map(|(b, x)| (x - col[a] * col[b] / n) / (n * n))
                .collect()
        })
        .collect();
    Ok(sandwich(&fit.hessian().inverse(), &s))
}

/// Sample covariance and elementwise Monte-Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCovariance {
    pub draws: usize,
    pub covariance: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
}

pub fn empirical_covariance(samples: &[Vec<f64>]) -> Result<EmpiricalCovariance> {
    let b = samples.len();
    if b < 2 {
        return Err(HoijError::InvalidArgument(
            "need at least two samples for a covariance".into(),
        ));
    }
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(m, x)| *m += x / b as f64);
    }
    let mut cov = vec![vec![0.0; d]; d];
    let mut se = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let prods: Vec<f64> = samples
                .iter()
                .map(|s| (s[i] - mean[i]) * (s[j] - mean[j]))
                .collect();
            let c = prods.iter().sum::<f64>() / (b - 1) as f64;
            let pm = prods.iter().sum::<f64>() / b as f64;
            let var = prods.iter().map(|p| (p - pm) * (p - pm)).sum::<f64>() / (b - 1) as f64;
            cov[i][j] = c;
            se[i][j] = (var / b as f64).sqrt();
        }
    }
    Ok(EmpiricalCovariance {
        draws: b,
        covariance: cov,
        std_error: se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub model_id: String,
    pub n_obs: usize,
    pub theta_hat: Vec<f64>,
    pub max_order: usize,
    pub draws: usize,
    pub seed: u64,
    pub normalization: String,
    pub sandwich: Vec<Vec<f64>>,
    pub ij_linear: Vec<Vec<f64>>,
    /// Covariance of `θIJ^K` over the draws.
    pub ij_empirical: EmpiricalCovariance,
    /// Covariance of the exact refits, when requested.
    pub exact_empirical: Option<EmpiricalCovariance>,
    pub n_refit_failures: usize,
}

/// Bootstrap covariance of `θIJ^K` and, optionally, of exact refits.
pub fn bootstrap_study<P: EstimatingProblem>(
    fit: &BaseFit<'_, P>,
    max_order: usize,
    draws: usize,
    seed: u64,
    refit: bool,
    workers: usize,
) -> Result<BootstrapReport> {
    let n = fit.problem().n_obs();
    let weights: Vec<WeightVector> = bootstrap_weights(n, draws, seed)?.collect();
    let work = || -> Result<(Vec<Vec<f64>>, Vec<Option<Vec<f64>>>)> {
        let ij = weights
            .par_iter()
            .map(|w| fit.expand(w, max_order).map(|e| e.theta_ij()))
            .collect::<Result<Vec<_>>>()?;
        let ex = if refit {
            weights.par_iter().map(|w| fit.refit(w).ok()).collect()
        } else {
            Vec::new()
        };
        Ok((ij, ex))
    };
    let (ij, ex) = with_workers(workers.max(1), work)??;
    let exact: Vec<Vec<f64>> = ex.iter().flatten().cloned().collect();
    Ok(BootstrapReport {
        model_id: fit.problem().model_id().to_string(),
        n_obs: n,
        theta_hat: fit.theta_hat().to_vec(),
        max_order,
        draws,
        seed,
        normalization: COVARIANCE_NORMALIZATION.into(),
        sandwich: sandwich_covariance(fit)?,
        ij_linear: ij_linear_covariance(fit)?,
        ij_empirical: empirical_covariance(&ij)?,
        exact_empirical: if refit {
            Some(empirical_covariance(&exact)?)
        } else {
            None
        },
        n_refit_failures: ex.iter().filter(|x| x.is_none()).count(),
    })
}

/// Synthetic data with bounded covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Number of covariates (ignored by the mean model).
    pub dim: usize,
    /// Half-width of the uniform response noise.
    pub noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { dim: 2, noise: 0.5 }
    }
}

/// Draws `n` rows for `model_id`. Covariates are uniform on `[-1, 1]`
/// except for the mean model, whose scalars are uniform on `[0, 1]`.
pub fn generate_data(model_id: &str, n: usize, cfg: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..cfg.dim).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let x = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..cfg.dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
    };
    let rows: Vec<Vec<f64>> = match model_id {
        "mean" => (0..n).map(|_| vec![rng.random_range(0.0..=1.0)]).collect(),
        "linear_regression" => (0..n)
            .map(|_| {
                let mut r = x(&mut rng);
                let y = r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()
                    + cfg.noise * rng.random_range(-1.0..=1.0);
                r.push(y);
                r
            })
            .collect(),
        "logistic_regression" => (0..n)
            .map(|_| {
                let mut r = x(&mut rng);
                let z: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let y = if rng.random::<f64>() < 1.0 / (1.0 + (-z).exp()) { 1.0 } else { 0.0 };
                r.push(y);
                r
            })
            .collect(),
        "exp_loss" => (0..n).map(|_| x(&mut rng)).collect(),
        other => return Err(HoijError::UnknownModel(other.to_string())),
    };
    Dataset::new(rows, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub model_id: String,
    pub n_grid: Vec<usize>,
    pub max_order: usize,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub problem: ProblemConfig,
    pub workers: usize,
}

impl ScalingConfig {
    pub fn default_grid() -> Vec<usize> {
        vec![50, 100, 200, 400, 800]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub data_seed: u64,
    /// Max leave-one-out error for `k = 0..=K`.
    pub max_error: Option<Vec<f64>>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub k: usize,
    pub slope: f64,
    pub std_error: f64,
    pub expected: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub config: ScalingConfig,
    pub rows: Vec<ScalingRow>,
    pub slopes: Vec<SlopeFit>,
}

/// Least-squares slope of `y` on `x` and its standard error.
pub fn fit_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (m - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, se)
}

fn data_seed(seed: u64, n: usize) -> u64 {
    seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Full leave-one-out on freshly generated data at each `N`, then log-log
/// slopes of the max error per order.
pub fn scaling_study(cfg: &ScalingConfig) -> Result<ScalingReport> {
    if cfg.n_grid.len() < 2 || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HoijError::InvalidArgument(
            "N grid needs at least two strictly increasing values".into(),
        ));
    }
    let solve = SolveConfig::default();
    let rows: Vec<ScalingRow> = cfg
        .n_grid
        .iter()
        .map(|&n| {
            let ds = data_seed(cfg.seed, n);
            let res = (|| -> Result<Vec<f64>> {
                let data = generate_data(&cfg.model_id, n, &cfg.generator, ds)?;
                let problem = make_problem(&cfg.model_id, data, &cfg.problem)?;
                let fit = BaseFit::new(&problem, &solve)?;
                let all: Vec<usize> = (0..n).collect();
                let report = run_cv(
                    &fit,
                    loo_weights(n, &all)?,
                    &CvOptions {
                        max_order: cfg.max_order,
                        workers: cfg.workers,
                        bounds: None,
                        timings: false,
                    },
                )?;
                if let Some(r) = report.records.iter().find(|r| r.failure.is_some()) {
                    return Err(HoijError::InvalidArgument(format!(
                        "weight {} failed: {}",
                        r.weight_id,
                        r.failure.as_deref().unwrap_or("")
                    )));
                }
                Ok(report.summary.iter().map(|s| s.max_error).collect())
            })();
            match res {
                Ok(e) => ScalingRow {
                    n,
                    data_seed: ds,
                    max_error: Some(e),
                    failure: None,
                },
                Err(e) => ScalingRow {
                    n,
                    data_seed: ds,
                    max_error: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    let slopes = (0..=cfg.max_order)
        .map(|k| {
            let (x, y): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter_map(|r| {
                    let e = r.max_error.as_ref()?[k];
                    (e > 0.0).then(|| ((r.n as f64).ln(), e.ln()))
                })
                .unzip();
            let (slope, std_error) = if x.len() >= 2 {
                fit_slope(&x, &y)
            } else {
                (f64::NAN, f64::NAN)
            };
            SlopeFit {
                k,
                slope,
                std_error,
                expected: -((k + 1) as f64),
                points: x.len(),
            }
        })
        .collect();
    Ok(ScalingReport {
        config: cfg.clone(),
        rows,
        slopes,
    })
}

/// Euclidean norm of a parameter difference, exposed for report checks.
pub fn error_norm(a: &[f64], b: &[f64]) -> f64 {
    norm2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}
