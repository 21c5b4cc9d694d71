use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use hoij_core::bounds::{
    bounds_report, default_radius, estimate_constants, hessian_inverse_norm_check,
    ConstantsOptions, DomainSampler,
};
use hoij_core::resampling::{
    bootstrap_study, run_cv, sandwich_covariance, scaling_study, write_cv_csv, BoundsRequest,
    CvOptions, GeneratorConfig, ScalingConfig, COVARIANCE_NORMALIZATION,
};
use hoij_core::{
    build_term_tables, load_dataset, make_problem, verify_table_invariants, BaseFit, DataFormat,
    EstimatingProblem, ModelProblem, ProblemConfig, SolveConfig, WeightScheme, MAX_ORDER,
    REGISTRY,
};

use crate::{
    BootstrapArgs, BoundsArgs, Command, CvArgs, DataArgs, FitArgs, Format, SamplerArgs,
    ScalingArgs, SchemeArgs, SchemeKind, TermsArgs, WeightArgs, SCHEMA_VERSION,
};

/// Resolved settings of one invocation, embedded in every output file.
#[derive(Debug, Default, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<WeightScheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub with_bounds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refit: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_segments: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolveConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct DataConfig {
    pub path: PathBuf,
    pub format: Format,
    pub header: bool,
}

#[derive(Debug, Serialize)]
pub struct SamplerConfig {
    pub rho: f64,
    /// `None` means the default `2 · C_op · δ_0`, resolved in the result.
    pub radius: Option<f64>,
    pub samples: usize,
    pub epsilon_term: bool,
    pub epsilon: f64,
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    schema_version: &'static str,
    config: &'a RunConfig,
    result: T,
}

fn emit<T: Serialize>(config: &RunConfig, result: T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Envelope {
        schema_version: SCHEMA_VERSION,
        config,
        result,
    })?;
    text.push('\n');
    match &config.out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn order_for_bounds(order: usize) -> std::result::Result<(), String> {
    if order + 1 > MAX_ORDER {
        return Err(format!(
            "bounds need derivatives through order K + 1; K = {order} exceeds {}",
            MAX_ORDER - 1
        ));
    }
    Ok(())
}

fn check_model(id: &str) -> std::result::Result<(), String> {
    if REGISTRY.iter().any(|e| e.model_id == id) {
        Ok(())
    } else {
        let known: Vec<&str> = REGISTRY.iter().map(|e| e.model_id).collect();
        Err(format!("unknown model `{id}`; expected one of {}", known.join(", ")))
    }
}

fn check_weights(w: &WeightArgs) -> std::result::Result<(), String> {
    if w.subset.is_some() && w.scheme != SchemeKind::Loo {
        return Err("--subset applies only to --scheme loo".into());
    }
    Ok(())
}

/// Checks that need more than one flag at a time.
pub fn validate(cmd: &Command) -> std::result::Result<(), String> {
    match cmd {
        Command::Fit(a) => check_model(&a.data.model),
        Command::Expand(a) => {
            check_model(&a.data.model)?;
            check_weights(&a.weights)
        }
        Command::Cv(a) => {
            check_model(&a.base.data.model)?;
            check_weights(&a.base.weights)?;
            if a.with_bounds {
                order_for_bounds(a.base.order)?;
            }
            Ok(())
        }
        Command::Bootstrap(a) => check_model(&a.data.model),
        Command::Bounds(a) => {
            check_model(&a.data.model)?;
            order_for_bounds(a.order)
        }
        Command::Terms(a) => {
            if a.max_order == 0 {
                return Err("--max-order must be at least 1".into());
            }
            Ok(())
        }
        Command::Scaling(a) => {
            check_model(&a.model)?;
            if a.grid.len() < 2 || a.grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err("--grid needs at least two strictly increasing values".into());
            }
            if a.grid[0] < 3 {
                return Err("--grid values must be at least 3".into());
            }
            Ok(())
        }
    }
}

fn resolve_format(d: &DataArgs) -> Format {
    d.format.unwrap_or_else(|| {
        match Path::new(&d.data).extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    })
}

fn data_config(d: &DataArgs) -> DataConfig {
    DataConfig {
        path: d.data.clone(),
        format: resolve_format(d),
        header: d.header,
    }
}

fn load_problem(d: &DataArgs) -> Result<ModelProblem> {
    let format = match resolve_format(d) {
        Format::Csv => DataFormat::Csv {
            has_header: d.header,
        },
        Format::Json => DataFormat::Json,
    };
    let data = load_dataset(&d.data, format)?;
    Ok(make_problem(
        &d.model,
        data,
        &ProblemConfig {
            l2: d.l2,
            ..Default::default()
        },
    )?)
}

fn scheme(w: &WeightArgs) -> WeightScheme {
    match w.scheme {
        SchemeKind::Loo => WeightScheme::Loo {
            subset: w.subset.clone(),
        },
        SchemeKind::Kfold => WeightScheme::Kfold { folds: w.folds },
        SchemeKind::Kappa => WeightScheme::Kappa {
            kappa: w.kappa,
            count: w.count,
        },
        SchemeKind::Bootstrap => WeightScheme::Bootstrap { draws: w.draws },
    }
}

fn sampler_config(s: &SamplerArgs) -> SamplerConfig {
    SamplerConfig {
        rho: s.rho,
        radius: s.radius,
        samples: s.samples,
        epsilon_term: s.epsilon_term,
        epsilon: s.epsilon,
    }
}

fn epsilon(s: &SamplerArgs) -> f64 {
    if s.epsilon_term {
        s.epsilon
    } else {
        0.0
    }
}

fn base_config(command: &'static str, d: &DataArgs, out: &Option<PathBuf>) -> RunConfig {
    RunConfig {
        command,
        model_id: Some(d.model.clone()),
        data: Some(data_config(d)),
        l2: Some(d.l2),
        solver: Some(SolveConfig::default()),
        out: out.clone(),
        ..Default::default()
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn run(cmd: Command) -> Result<String> {
    match cmd {
        Command::Fit(a) => fit(a),
        Command::Expand(a) => expand(a),
        Command::Cv(a) => cv(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Bounds(a) => bounds(a),
        Command::Terms(a) => terms(a),
        Command::Scaling(a) => scaling(a),
    }
}

#[derive(Serialize)]
struct FitResult {
    n_obs: usize,
    dim: usize,
    theta_hat: Vec<f64>,
    hessian: Vec<Vec<f64>>,
    hessian_rcond: f64,
    sandwich_covariance: Vec<Vec<f64>>,
    covariance_normalization: &'static str,
}

fn fit(a: FitArgs) -> Result<String> {
    let config = base_config("fit", &a.data, &a.out.out);
    let problem = load_problem(&a.data)?;
    let fit = BaseFit::new(&problem, &SolveConfig::default())?;
    let result = FitResult {
        n_obs: problem.n_obs(),
        dim: problem.dim(),
        theta_hat: fit.theta_hat().to_vec(),
        hessian: fit.hessian().matrix(),
        hessian_rcond: fit.hessian().cond_estimate(),
        sandwich_covariance: sandwich_covariance(&fit)?,
        covariance_normalization: COVARIANCE_NORMALIZATION,
    };
    emit(&config, &result)?;
    Ok(format!(
        "fit: model={} N={} theta_hat={}",
        a.data.model,
        result.n_obs,
        fmt_vec(&result.theta_hat)
    ))
}

#[derive(Serialize)]
struct ExpandRecord {
    weight_id: usize,
    zero_weights: Vec<usize>,
    dthetas: Vec<Vec<f64>>,
    theta_ij: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ExpandResult {
    theta_hat: Vec<f64>,
    order: usize,
    records: Vec<ExpandRecord>,
}

fn expand(a: SchemeArgs) -> Result<String> {
    let sch = scheme(&a.weights);
    let mut config = base_config("expand", &a.data, &a.out.out);
    config.order = Some(a.order);
    config.scheme = Some(sch.clone());
    config.seed = Some(a.weights.seed);
    let problem = load_problem(&a.data)?;
    let fit = BaseFit::new(&problem, &SolveConfig::default())?;
    let records = sch
        .generate(problem.n_obs(), a.weights.seed)?
        .enumerate()
        .map(|(i, w)| {
            let e = fit
                .expand(&w, a.order)
                .with_context(|| format!("expanding at weight {i}"))?;
            Ok(ExpandRecord {
                weight_id: i,
                zero_weights: (0..w.len()).filter(|&n| w.values()[n] == 0.0).collect(),
                theta_ij: e.partial_sums(),
                dthetas: e.dthetas,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = records.len();
    emit(
        &config,
        ExpandResult {
            theta_hat: fit.theta_hat().to_vec(),
            order: a.order,
            records,
        },
    )?;
    Ok(format!("expand: {n} weight vectors to order {}", a.order))
}

fn cv(a: CvArgs) -> Result<String> {
    let b = &a.base;
    let sch = scheme(&b.weights);
    let mut config = base_config("cv", &b.data, &b.out.out);
    config.order = Some(b.order);
    config.scheme = Some(sch.clone());
    config.seed = Some(b.weights.seed);
    config.with_bounds = Some(a.with_bounds);
    config.workers = Some(a.workers);
    config.timings = Some(a.timings);
    config.csv = a.csv.clone();
    if a.with_bounds {
        config.sampler = Some(sampler_config(&a.sampler));
    }
    let problem = load_problem(&b.data)?;
    let fit = BaseFit::new(&problem, &SolveConfig::default())?;
    let opts = CvOptions {
        max_order: b.order,
        workers: a.workers,
        bounds: a.with_bounds.then(|| BoundsRequest {
            rho: a.sampler.rho,
            epsilon: epsilon(&a.sampler),
            radius: a.sampler.radius,
            n_samples: a.sampler.samples,
            seed: b.weights.seed,
        }),
        timings: a.timings,
    };
    let report = run_cv(&fit, sch.generate(problem.n_obs(), b.weights.seed)?, &opts)?;
    if let Some(path) = &a.csv {
        let file = std::fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        write_cv_csv(&report, std::io::BufWriter::new(file))?;
    }
    let maxes: Vec<f64> = report.summary.iter().map(|s| s.max_error).collect();
    let summary = format!(
        "cv: {} weights ({} failed), max error per order {}",
        report.n_weights,
        report.n_failed,
        fmt_vec(&maxes)
    );
    emit(&config, &report)?;
    Ok(summary)
}

fn bootstrap(a: BootstrapArgs) -> Result<String> {
    let mut config = base_config("bootstrap", &a.data, &a.out.out);
    config.order = Some(a.order);
    config.draws = Some(a.draws);
    config.seed = Some(a.seed);
    config.refit = Some(a.refit);
    config.workers = Some(a.workers);
    let problem = load_problem(&a.data)?;
    let fit = BaseFit::new(&problem, &SolveConfig::default())?;
    let report = bootstrap_study(&fit, a.order, a.draws, a.seed, a.refit, a.workers)?;
    let diag: Vec<f64> = (0..report.sandwich.len()).map(|i| report.sandwich[i][i]).collect();
    emit(&config, &report)?;
    Ok(format!(
        "bootstrap: {} draws, sandwich variances {}",
        a.draws,
        fmt_vec(&diag)
    ))
}

#[derive(Serialize)]
struct SegmentSummary {
    weight_id: usize,
    dropped: usize,
    passed: bool,
    max_inverse_norm: f64,
    violations: usize,
}

#[derive(Serialize)]
struct BoundsResult {
    theta_hat: Vec<f64>,
    report: hoij_core::bounds::BoundsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    segments: Option<Vec<SegmentSummary>>,
}

fn bounds(a: BoundsArgs) -> Result<String> {
    let mut config = base_config("bounds", &a.data, &a.out.out);
    config.order = Some(a.order);
    config.seed = Some(a.seed);
    config.sampler = Some(sampler_config(&a.sampler));
    config.check_segments = a.check_segments.then_some(a.segment_points);
    let problem = load_problem(&a.data)?;
    let fit = BaseFit::new(&problem, &SolveConfig::default())?;
    let radius = match a.sampler.radius {
        Some(r) => r,
        None => default_radius(&problem, fit.theta_hat())?,
    };
    let sampler =
        DomainSampler::new(fit.theta_hat().to_vec(), radius, a.sampler.samples, a.seed)?;
    let constants = estimate_constants(
        &problem,
        &sampler,
        a.order,
        &ConstantsOptions {
            rho: a.sampler.rho,
            epsilon: epsilon(&a.sampler),
        },
    )?;
    let report = bounds_report(&constants, &sampler);
    let segments = if a.check_segments {
        let n = problem.n_obs();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let r = hessian_inverse_norm_check(
                &problem,
                fit.theta_hat(),
                &hoij_core::WeightVector::leave_out(n, &[i]),
                constants.c_tilde_op,
                a.segment_points,
                &SolveConfig::default(),
            )?;
            out.push(SegmentSummary {
                weight_id: i,
                dropped: i,
                passed: r.passed,
                max_inverse_norm: r.max_inverse_norm,
                violations: r.violations.len(),
            });
        }
        Some(out)
    } else {
        None
    };
    let summary = format!(
        "bounds: C_op={:.4e} C_set={:.4e} rho={} condition {}",
        report.c_op,
        report.c_set,
        report.rho,
        if report.condition_satisfied {
            "satisfied"
        } else {
            "NOT satisfied"
        }
    );
    emit(
        &config,
        BoundsResult {
            theta_hat: fit.theta_hat().to_vec(),
            report,
            segments,
        },
    )?;
    Ok(summary)
}

#[derive(Serialize)]
struct TermOrder<'a> {
    k: usize,
    size: usize,
    terms: &'a [hoij_core::DerivativeTerm],
}

#[derive(Serialize)]
struct TermsResult<'a> {
    max_order: usize,
    orders: Vec<TermOrder<'a>>,
    invariants: hoij_core::terms::TableReport,
}

fn terms(a: TermsArgs) -> Result<String> {
    let config = RunConfig {
        command: "terms",
        order: Some(a.max_order),
        out: a.out.out.clone(),
        ..Default::default()
    };
    let table = build_term_tables(a.max_order)?;
    let invariants = verify_table_invariants(&table);
    let passed = invariants.passed;
    let sizes = table.sizes();
    emit(
        &config,
        TermsResult {
            max_order: a.max_order,
            orders: table
                .iter()
                .map(|(k, t)| TermOrder {
                    k,
                    size: t.len(),
                    terms: t,
                })
                .collect(),
            invariants,
        },
    )?;
    Ok(format!(
        "terms: sizes {sizes:?}, invariants {}",
        if passed { "hold" } else { "VIOLATED" }
    ))
}

fn scaling(a: ScalingArgs) -> Result<String> {
    let cfg = ScalingConfig {
        model_id: a.model.clone(),
        n_grid: a.grid.clone(),
        max_order: a.order,
        seed: a.seed,
        generator: GeneratorConfig {
            dim: a.dim,
            noise: a.noise,
        },
        problem: ProblemConfig {
            l2: a.l2,
            ..Default::default()
        },
        workers: a.workers,
    };
    let config = RunConfig {
        command: "scaling",
        model_id: Some(a.model.clone()),
        l2: Some(a.l2),
        order: Some(a.order),
        seed: Some(a.seed),
        workers: Some(a.workers),
        grid: Some(a.grid.clone()),
        generator: Some(cfg.generator.clone()),
        solver: Some(SolveConfig::default()),
        out: a.out.out.clone(),
        ..Default::default()
    };
    let report = scaling_study(&cfg)?;
    let slopes: Vec<f64> = report.slopes.iter().map(|s| s.slope).collect();
    let failed = report.rows.iter().filter(|r| r.failure.is_some()).count();
    emit(&config, &report)?;
    Ok(format!(
        "scaling: {} grid points ({failed} failed), slopes per order {}",
        a.grid.len(),
        fmt_vec(&slopes)
    ))
}
