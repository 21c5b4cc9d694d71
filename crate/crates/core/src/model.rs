//! Estimating problems `G(θ, w) = (1/N)(g₀(θ) + Σ_n w_n g_n(θ))` and the
//! registry of built-in models.

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::data::Dataset;
use crate::error::{HoijError, Result};
use crate::weights::WeightVector;

/// Region of parameter space a problem is expected to be well behaved on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainHint {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

/// A system of estimating equations.
///
/// `datum(n, θ)` is `g_{n+1}(θ)` for the zero-based row `n`; `prior(θ)` is
/// `g₀(θ)`, with `None` standing for the zero function. Both must return
/// vectors of length [`dim`](Self::dim) and be smooth in `θ` for every
/// [`Scalar`] type.
pub trait EstimatingProblem: Sync {
    fn dim(&self) -> usize;
    fn n_obs(&self) -> usize;
    fn model_id(&self) -> &str;
    fn datum<S: Scalar>(&self, n: usize, theta: &[S]) -> Vec<S>;
    fn prior<S: Scalar>(&self, theta: &[S]) -> Option<Vec<S>>;
    fn domain_hint(&self) -> Option<&DomainHint> {
        None
    }
}

fn dot<S: Scalar>(theta: &[S], x: &[f64]) -> S {
    theta
        .iter()
        .zip(x)
        .fold(S::zero(), |acc, (t, xi)| acc + t.scale(*xi))
}

fn times_features<S: Scalar>(s: S, x: &[f64]) -> Vec<S> {
    x.iter().map(|xi| s.scale(*xi)).collect()
}

/// The four built-in model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `g_n(θ) = θ − x_n`
    Mean,
    /// `g_n(θ) = (θᵀx_n − y_n) x_n`
    LinearRegression,
    /// `g_n(θ) = (σ(θᵀx_n) − y_n) x_n`
    LogisticRegression,
    /// `g_n(θ) = exp(θᵀx_n) x_n`
    ExpLoss,
}

impl ModelKind {
    pub const fn id(self) -> &'static str {
        match self {
            ModelKind::Mean => "mean",
            ModelKind::LinearRegression => "linear_regression",
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::ExpLoss => "exp_loss",
        }
    }

    pub fn needs_response(self) -> bool {
        matches!(
            self,
            ModelKind::LinearRegression | ModelKind::LogisticRegression
        )
    }

    pub fn from_id(id: &str) -> Result<Self> {
        REGISTRY
            .iter()
            .find(|e| e.model_id == id)
            .map(|e| e.kind)
            .ok_or_else(|| HoijError::UnknownModel(id.to_string()))
    }
}

/// Options for building a registered problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    /// Ridge strength; when positive, `g₀(θ) = l2 · θ`.
    pub l2: f64,
    /// Parameter dimension the caller expects; checked against the data.
    pub expected_dim: Option<usize>,
    pub domain_hint: Option<DomainHint>,
}

/// A built-in model bound to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProblem {
    kind: ModelKind,
    data: Dataset,
    l2: f64,
    domain_hint: Option<DomainHint>,
}

impl ModelProblem {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    fn y(&self, n: usize) -> f64 {
        self.data.response().map_or(0.0, |y| y[n])
    }
}

impl EstimatingProblem for ModelProblem {
    fn dim(&self) -> usize {
        self.data.n_features()
    }

    fn n_obs(&self) -> usize {
        self.data.n_rows()
    }

    fn model_id(&self) -> &str {
        self.kind.id()
    }

    fn datum<S: Scalar>(&self, n: usize, theta: &[S]) -> Vec<S> {
        let x = self.data.row(n);
        match self.kind {
            ModelKind::Mean => theta
                .iter()
                .zip(x)
                .map(|(t, xi)| t.add_const(-xi))
                .collect(),
            ModelKind::LinearRegression => times_features(dot(theta, x).add_const(-self.y(n)), x),
            ModelKind::LogisticRegression => {
                times_features(dot(theta, x).sigmoid().add_const(-self.y(n)), x)
            }
            ModelKind::ExpLoss => times_features(dot(theta, x).exp(), x),
        }
    }

    fn prior<S: Scalar>(&self, theta: &[S]) -> Option<Vec<S>> {
        (self.l2 > 0.0).then(|| theta.iter().map(|t| t.scale(self.l2)).collect())
    }

    fn domain_hint(&self) -> Option<&DomainHint> {
        self.domain_hint.as_ref()
    }
}

/// Registry entry: a model id and the builder that binds it to data.
pub struct ModelRegistryEntry {
    pub model_id: &'static str,
    pub kind: ModelKind,
    pub builder: fn(Dataset, &ProblemConfig) -> Result<ModelProblem>,
}

macro_rules! entry {
    ($kind:expr) => {
        ModelRegistryEntry {
            model_id: $kind.id(),
            kind: $kind,
            builder: |data, cfg| build($kind, data, cfg),
        }
    };
}

pub static REGISTRY: [ModelRegistryEntry; 4] = [
    entry!(ModelKind::Mean),
    entry!(ModelKind::LinearRegression),
    entry!(ModelKind::LogisticRegression),
    entry!(ModelKind::ExpLoss),
];

fn build(kind: ModelKind, data: Dataset, cfg: &ProblemConfig) -> Result<ModelProblem> {
    let data = if kind.needs_response() {
        data.split_response()?
    } else if data.response().is_some() {
        return Err(HoijError::Dimension(format!(
            "model `{}` takes no response column",
            kind.id()
        )));
    } else {
        data
    };
    if let Some(d) = cfg.expected_dim {
        if d != data.n_features() {
            return Err(HoijError::Dimension(format!(
                "model `{}` configured for {d} features but rows have {}",
                kind.id(),
                data.n_features()
            )));
        }
    }
    if cfg.l2 < 0.0 || !cfg.l2.is_finite() {
        return Err(HoijError::InvalidArgument(format!(
            "l2 strength must be finite and nonnegative, got {}",
            cfg.l2
        )));
    }
    if kind == ModelKind::LogisticRegression {
        let y = data.response().expect("split above");
        if let Some(bad) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(HoijError::InvalidArgument(format!(
                "logistic response {bad} outside [0, 1]"
            )));
        }
    }
    Ok(ModelProblem {
        kind,
        data,
        l2: cfg.l2,
        domain_hint: cfg.domain_hint.clone(),
    })
}

/// Binds the registered model `model_id` to `data`.
pub fn make_problem(model_id: &str, data: Dataset, cfg: &ProblemConfig) -> Result<ModelProblem> {
    let entry = REGISTRY
        .iter()
        .find(|e| e.model_id == model_id)
        .ok_or_else(|| HoijError::UnknownModel(model_id.to_string()))?;
    (entry.builder)(data, cfg)
}

/// `g₀(θ) = θ`, `g_n(θ) = −x_n`; the solution `θ̂(w) = Σ_n w_n x_n` is affine
/// in the weights, so the first-order expansion is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineProblem {
    points: Vec<Vec<f64>>,
}

impl AffineProblem {
    pub fn new(data: &Dataset) -> Self {
        AffineProblem {
            points: data.features().to_vec(),
        }
    }

    /// Closed-form root for arbitrary weights.
    pub fn solution(&self, w: &WeightVector) -> Vec<f64> {
        let mut out = vec![0.0; self.points[0].len()];
        for (x, wn) in self.points.iter().zip(w.values()) {
            for (o, xi) in out.iter_mut().zip(x) {
                *o += wn * xi;
            }
        }
        out
    }
}

impl EstimatingProblem for AffineProblem {
    fn dim(&self) -> usize {
        self.points[0].len()
    }
    fn n_obs(&self) -> usize {
        self.points.len()
    }
    fn model_id(&self) -> &str {
        "affine"
    }
    fn datum<S: Scalar>(&self, n: usize, theta: &[S]) -> Vec<S> {
        // Constant in θ, but keep the tag width of θ so derivatives are zero.
        theta
            .iter()
            .zip(&self.points[n])
            .map(|(t, xi)| t.scale(0.0).add_const(-xi))
            .collect()
    }
    fn prior<S: Scalar>(&self, theta: &[S]) -> Option<Vec<S>> {
        Some(theta.to_vec())
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(HoijError::NonFiniteEvaluation(what.to_string()))
    }
}

pub(crate) fn check_shapes<P: EstimatingProblem>(
    problem: &P,
    theta: &[f64],
    w: Option<&[f64]>,
) -> Result<()> {
    if theta.len() != problem.dim() {
        return Err(HoijError::Dimension(format!(
            "theta has length {}, problem dimension is {}",
            theta.len(),
            problem.dim()
        )));
    }
    if let Some(w) = w {
        if w.len() != problem.n_obs() {
            return Err(HoijError::Dimension(format!(
                "weight vector has length {}, problem has {} observations",
                w.len(),
                problem.n_obs()
            )));
        }
    }
    Ok(())
}

/// `G(θ, w)`. Terms with zero weight are skipped.
pub fn evaluate_g<P: EstimatingProblem>(
    problem: &P,
    theta: &[f64],
    w: &WeightVector,
) -> Result<Vec<f64>> {
    check_shapes(problem, theta, Some(w.values()))?;
    let n = problem.n_obs() as f64;
    let mut acc = problem.prior(theta).unwrap_or_else(|| vec![0.0; theta.len()]);
    for (i, &wn) in w.values().iter().enumerate() {
        if wn == 0.0 {
            continue;
        }
        for (a, g) in acc.iter_mut().zip(problem.datum(i, theta)) {
            *a += wn * g;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    check_finite(&acc, "G(theta, w)")?;
    Ok(acc)
}
