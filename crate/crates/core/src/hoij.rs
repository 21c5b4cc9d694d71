//! Base solve, Hessian factorization, and evaluation of the Taylor
//! expansion `θIJ^K(w) = θ̂ + Σ_{k≤K} dθ^k / k!`.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::ad::DirectionBundle;
use crate::derivatives::{g_theta_derivative, g_weight_derivative, jacobian};
use crate::error::{HoijError, Result};
use crate::linalg::{norm2, to_matrix, LuFactor};
use crate::model::{evaluate_g, EstimatingProblem};
use crate::terms::{cached_term_table, DerivativeTerm, TermTable};
use crate::weights::WeightVector;

/// Reciprocal condition number below which a Jacobian is treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

/// Damped Newton settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Stop once `‖G‖₂` falls below this; `None` means `1e-10 · √D`.
    pub tol_grad: Option<f64>,
    pub max_iter: usize,
    /// Step shrink factor for backtracking.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Armijo constant on `‖G‖₂`.
    pub sufficient_decrease: f64,
    /// Extra Newton steps taken after convergence, kept only while they
    /// reduce `‖G‖₂`.
    pub polish_steps: usize,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol_grad: None,
            max_iter: 100,
            backtrack: 0.5,
            max_backtracks: 40,
            sufficient_decrease: 1e-4,
            polish_steps: 2,
            warm_start: None,
        }
    }
}

impl SolveConfig {
    pub fn with_warm_start(&self, theta: &[f64]) -> Self {
        SolveConfig {
            warm_start: Some(theta.to_vec()),
            ..self.clone()
        }
    }

    pub fn tolerance(&self, dim: usize) -> f64 {
        self.tol_grad.unwrap_or(1e-10 * (dim as f64).sqrt())
    }

    fn validate(&self) -> Result<()> {
        if let Some(t) = self.tol_grad {
            if !(t > 0.0) {
                return Err(HoijError::InvalidArgument(format!(
                    "tol_grad must be positive, got {t}"
                )));
            }
        }
        if self.max_iter == 0 {
            return Err(HoijError::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(HoijError::InvalidArgument(
                "backtrack factor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

fn residual<P: EstimatingProblem>(problem: &P, theta: &[f64], w: &WeightVector) -> Option<f64> {
    evaluate_g(problem, theta, w).ok().map(|g| norm2(&g))
}

fn newton_step<P: EstimatingProblem>(
    problem: &P,
    theta: &[f64],
    w: &WeightVector,
) -> Result<Vec<f64>> {
    let g = evaluate_g(problem, theta, w)?;
    let lu = LuFactor::new(to_matrix(&jacobian(problem, theta, w)?));
    let singular = || HoijError::SingularHessian {
        rcond: lu.rcond(),
        theta: theta.to_vec(),
    };
    if lu.rcond() < SINGULAR_RCOND {
        return Err(singular());
    }
    let step = lu.solve(&g).ok_or_else(singular)?;
    Ok(step.into_iter().map(|s| -s).collect())
}

fn axpy(theta: &[f64], alpha: f64, step: &[f64]) -> Vec<f64> {
    theta.iter().zip(step).map(|(t, s)| t + alpha * s).collect()
}

/// Finds `θ̂(w)` with `‖G(θ̂(w), w)‖₂ ≤ tol` by damped Newton with
/// backtracking on `‖G‖₂`.
pub fn solve_base<P: EstimatingProblem>(
    problem: &P,
    w: &WeightVector,
    cfg: &SolveConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let d = problem.dim();
    let tol = cfg.tolerance(d);
    let mut theta = match &cfg.warm_start {
        Some(t) if t.len() == d => t.clone(),
        Some(t) => {
            return Err(HoijError::Dimension(format!(
                "warm start has length {}, problem dimension is {d}",
                t.len()
            )))
        }
        None => vec![0.0; d],
    };
    let mut r = norm2(&evaluate_g(problem, &theta, w)?);
    for _ in 0..cfg.max_iter {
        if r <= tol {
            return Ok(polish(problem, w, theta, r, cfg.polish_steps));
        }
        let step = newton_step(problem, &theta, w)?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial = axpy(&theta, alpha, &step);
            if let Some(rt) = residual(problem, &trial, w) {
                if rt <= (1.0 - cfg.sufficient_decrease * alpha) * r {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            alpha *= cfg.backtrack;
        }
        match accepted {
            Some((t, rt)) => {
                theta = t;
                r = rt;
            }
            None => break,
        }
    }
    if r <= tol {
        return Ok(theta);
    }
    Err(HoijError::NoConvergence {
        iterations: cfg.max_iter,
        residual: r,
    })
}

fn polish<P: EstimatingProblem>(
    problem: &P,
    w: &WeightVector,
    mut theta: Vec<f64>,
    mut r: f64,
    steps: usize,
) -> Vec<f64> {
    for _ in 0..steps {
        if r == 0.0 {
            break;
        }
        let Ok(step) = newton_step(problem, &theta, w) else { break };
        let trial = axpy(&theta, 1.0, &step);
        match residual(problem, &trial, w) {
            Some(rt) if rt < r => {
                theta = trial;
                r = rt;
            }
            _ => break,
        }
    }
    theta
}

/// Re-solves at `w`, warm-started from `theta_hat`.
pub fn exact_refit<P: EstimatingProblem>(
    problem: &P,
    w: &WeightVector,
    cfg: &SolveConfig,
    theta_hat: &[f64],
) -> Result<Vec<f64>> {
    solve_base(problem, w, &cfg.with_warm_start(theta_hat))
}

/// `Ĥ = G^{(1)}(θ̂, 1_N)` and its LU factorization.
#[derive(Debug)]
pub struct HessianFactor {
    lu: LuFactor,
    solves: AtomicUsize,
}

impl Clone for HessianFactor {
    fn clone(&self) -> Self {
        HessianFactor {
            lu: self.lu.clone(),
            solves: AtomicUsize::new(self.solve_count()),
        }
    }
}

impl HessianFactor {
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        crate::linalg::from_matrix(self.lu.matrix())
    }

    pub fn lu(&self) -> &LuFactor {
        &self.lu
    }

    /// Reciprocal 2-norm condition number.
    pub fn cond_estimate(&self) -> f64 {
        self.lu.rcond()
    }

    pub fn dim(&self) -> usize {
        self.lu.dim()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        self.lu
            .solve(b)
            .expect("factor was checked to be nonsingular at construction")
    }

    /// Number of linear solves performed against this factor.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    /// `Ĥ⁻¹` as a dense matrix.
    pub fn inverse(&self) -> Vec<Vec<f64>> {
        crate::linalg::from_matrix(
            &self
                .lu
                .inverse()
                .expect("factor was checked to be nonsingular at construction"),
        )
    }
}

/// Assembles `Ĥ` from `D` forward passes and factorizes it.
pub fn factorize_hessian<P: EstimatingProblem>(
    problem: &P,
    theta_hat: &[f64],
) -> Result<HessianFactor> {
    let h = jacobian(problem, theta_hat, &WeightVector::ones(problem.n_obs()))?;
    let lu = LuFactor::new(to_matrix(&h));
    if lu.rcond() < SINGULAR_RCOND || lu.solve(&vec![0.0; h.len()]).is_none() {
        return Err(HoijError::SingularHessian {
            rcond: lu.rcond(),
            theta: theta_hat.to_vec(),
        });
    }
    Ok(HessianFactor {
        lu,
        solves: AtomicUsize::new(0),
    })
}

/// `θ̂` and the directional derivatives `dθ¹(1_N) … dθ^K(1_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorExpansion {
    pub theta_hat: Vec<f64>,
    pub dthetas: Vec<Vec<f64>>,
}

impl TaylorExpansion {
    pub fn order(&self) -> usize {
        self.dthetas.len()
    }

    /// `θIJ^k = θ̂ + Σ_{j≤k} dθʲ / j!`; `θIJ⁰ = θ̂`.
    pub fn partial_sum(&self, k: usize) -> Vec<f64> {
        let mut t = self.theta_hat.clone();
        let mut fact = 1.0;
        for (j, d) in self.dthetas.iter().take(k).enumerate() {
            fact *= (j + 1) as f64;
            for (ti, di) in t.iter_mut().zip(d) {
                *ti += di / fact;
            }
        }
        t
    }

    /// `θIJ^0, …, θIJ^K`.
    pub fn partial_sums(&self) -> Vec<Vec<f64>> {
        (0..=self.order()).map(|k| self.partial_sum(k)).collect()
    }

    pub fn theta_ij(&self) -> Vec<f64> {
        self.partial_sum(self.order())
    }
}

/// `δT(𝒦, ω, 1_N)` with the coefficient left off.
pub fn evaluate_term<P: EstimatingProblem>(
    problem: &P,
    term: &DerivativeTerm,
    dset: &[Vec<f64>],
    theta_hat: &[f64],
    delta_w: &[f64],
) -> Result<Vec<f64>> {
    let dirs = term
        .kset
        .iter()
        .map(|&j| {
            dset.get(j.wrapping_sub(1))
                .cloned()
                .ok_or(HoijError::MissingDerivative(j))
        })
        .collect::<Result<Vec<_>>>()?;
    let dirs = DirectionBundle::new(dirs)?;
    if term.omega == 0 {
        g_theta_derivative(problem, theta_hat, &WeightVector::ones(problem.n_obs()), &dirs)
    } else {
        g_weight_derivative(problem, theta_hat, delta_w, &dirs)
    }
}

/// `dθ^k(1_N) = −Ĥ⁻¹ Σ_{(a,𝒦,ω)∈Θ_k} a · δT(𝒦, ω, 1_N)`.
pub fn evaluate_dtheta<P: EstimatingProblem>(
    problem: &P,
    theta_hat: &[f64],
    hfac: &HessianFactor,
    terms: &[DerivativeTerm],
    dset: &[Vec<f64>],
    delta_w: &[f64],
) -> Result<Vec<f64>> {
    let mut d = vec![0.0; theta_hat.len()];
    for t in terms {
        let v = evaluate_term(problem, t, dset, theta_hat, delta_w)?;
        for (di, vi) in d.iter_mut().zip(v) {
            *di += t.coeff as f64 * vi;
        }
    }
    Ok(hfac.solve(&d).into_iter().map(|x| -x).collect())
}

/// Runs the order-by-order recursion up to `max_order`.
pub fn evaluate_theta_ij<P: EstimatingProblem>(
    problem: &P,
    max_order: usize,
    theta_hat: &[f64],
    hfac: &HessianFactor,
    table: &TermTable,
    delta_w: &[f64],
) -> Result<TaylorExpansion> {
    if max_order > table.max_order() {
        return Err(HoijError::OrderTooLarge {
            order: max_order,
            max: table.max_order(),
        });
    }
    if delta_w.len() != problem.n_obs() {
        return Err(HoijError::Dimension(format!(
            "weight vector has length {}, problem has {} observations",
            delta_w.len(),
            problem.n_obs()
        )));
    }
    let mut dset: Vec<Vec<f64>> = Vec::with_capacity(max_order);
    for k in 1..=max_order {
        let d = evaluate_dtheta(problem, theta_hat, hfac, table.order(k), &dset, delta_w)?;
        dset.push(d);
    }
    Ok(TaylorExpansion {
        theta_hat: theta_hat.to_vec(),
        dthetas: dset,
    })
}

/// A solved base problem with its factorized Hessian: everything needed to
/// expand or refit at new weights. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct BaseFit<'p, P> {
    problem: &'p P,
    theta_hat: Vec<f64>,
    hfac: HessianFactor,
    cfg: SolveConfig,
}

impl<'p, P: EstimatingProblem> BaseFit<'p, P> {
    pub fn new(problem: &'p P, cfg: &SolveConfig) -> Result<Self> {
        let theta_hat = solve_base(problem, &WeightVector::ones(problem.n_obs()), cfg)?;
        let hfac = factorize_hessian(problem, &theta_hat)?;
        Ok(BaseFit {
            problem,
            theta_hat,
            hfac,
            cfg: SolveConfig {
                warm_start: None,
                ..cfg.clone()
            },
        })
    }

    pub fn problem(&self) -> &'p P {
        self.problem
    }

    pub fn theta_hat(&self) -> &[f64] {
        &self.theta_hat
    }

    pub fn hessian(&self) -> &HessianFactor {
        &self.hfac
    }

    pub fn solve_config(&self) -> &SolveConfig {
        &self.cfg
    }

    pub fn expand(&self, w: &WeightVector, max_order: usize) -> Result<TaylorExpansion> {
        evaluate_theta_ij(
            self.problem,
            max_order,
            &self.theta_hat,
            &self.hfac,
            cached_term_table(),
            w.delta(),
        )
    }

    pub fn refit(&self, w: &WeightVector) -> Result<Vec<f64>> {
        exact_refit(self.problem, w, &self.cfg, &self.theta_hat)
    }
}
