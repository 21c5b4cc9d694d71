//! Computable constants for the finite-sample error bounds and the
//! mechanical recursion that turns them into bounds on `‖dθ^k‖₂` and on the
//! Taylor error.
//!
//! Suprema over the parameter domain are approximated by evaluating at a
//! seeded sample of points in a ball around `θ̂`; every reported constant is
//! a "sampled sup".

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad::{DirectionBundle, HyperDual, MAX_ORDER};
use crate::derivatives::jacobian;
use crate::error::{HoijError, Result};
use crate::hoij::{exact_refit, SolveConfig, SINGULAR_RCOND};
use crate::linalg::{extreme_singular_values, to_matrix};
use crate::model::{check_shapes, EstimatingProblem};
use crate::terms::cached_term_table;
use crate::weights::WeightVector;

pub const DEFAULT_RHO: f64 = 0.5;
pub const DEFAULT_SAMPLES: usize = 256;

/// Seeded points in the closed ball of radius `radius` around `center`.
///
/// The first point is the center, then `center ± radius·e_i` for each axis,
/// then uniform draws from the ball, `n_samples` in total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSampler {
    pub center: Vec<f64>,
    pub radius: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl DomainSampler {
    pub fn new(center: Vec<f64>, radius: f64, n_samples: usize, seed: u64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(HoijError::InvalidArgument(format!(
                "sampler radius must be finite and nonnegative, got {radius}"
            )));
        }
        if n_samples == 0 {
            return Err(HoijError::InvalidArgument(
                "sampler needs at least one point".into(),
            ));
        }
        Ok(DomainSampler {
            center,
            radius,
            n_samples,
            seed,
        })
    }

    /// Only the center.
    pub fn at_center(center: Vec<f64>) -> Self {
        DomainSampler {
            center,
            radius: 0.0,
            n_samples: 1,
            seed: 0,
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.center.len();
        let mut pts = vec![self.center.clone()];
        if self.radius == 0.0 {
            return pts;
        }
        'axes: for i in 0..d {
            for s in [1.0, -1.0] {
                if pts.len() >= self.n_samples {
                    break 'axes;
                }
                let mut p = self.center.clone();
                p[i] += s * self.radius;
                pts.push(p);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        while pts.len() < self.n_samples {
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let u: f64 = rng.random();
            let r = self.radius * u.powf(1.0 / d as f64);
            pts.push(
                self.center
                    .iter()
                    .zip(&z)
                    .map(|(c, zi)| c + r * zi / norm)
                    .collect(),
            );
        }
        pts
    }
}

/// `L₁`, `L₂` and `L∞` norms of a vectorized array.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PNorms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

impl PNorms {
    pub fn get(&self, p: NormKind) -> f64 {
        match p {
            NormKind::L1 => self.l1,
            NormKind::L2 => self.l2,
            NormKind::Linf => self.linf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L1,
    L2,
    Linf,
}

/// Running sums for `PNorms`; `l2` holds the sum of squares until `finish`.
#[derive(Default, Clone, Copy)]
struct NormAcc {
    l1: f64,
    sq: f64,
    linf: f64,
}

impl NormAcc {
    fn add(&mut self, v: &[f64], mult: f64) {
        for x in v {
            self.l1 += mult * x.abs();
            self.sq += mult * x * x;
            self.linf = self.linf.max(x.abs());
        }
    }

    fn finish(self) -> PNorms {
        PNorms {
            l1: self.l1,
            l2: self.sq.sqrt(),
            linf: self.linf,
        }
    }
}

/// Nondecreasing index tuples of length `k` over `0..d`, each with the
/// number of ordered tuples it stands for.
fn multisets(d: usize, k: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(d: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(d, k, i, cur, out);
            cur.pop();
        }
    }
    let mut sets = Vec::new();
    rec(d, k, 0, &mut Vec::with_capacity(k), &mut sets);
    let fact = |m: usize| (1..=m).map(|x| x as f64).product::<f64>();
    sets.into_iter()
        .map(|s| {
            let mut denom = 1.0;
            let mut i = 0;
            while i < s.len() {
                let j = s[i..].iter().take_while(|&&x| x == s[i]).count();
                denom *= fact(j);
                i += j;
            }
            (s, fact(k) / denom)
        })
        .collect()
}

/// Norms of the order-`k` derivative arrays at `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayNorms {
    pub order: usize,
    pub n_obs: usize,
    /// `‖G^{(k)}(θ, 1_N)‖_p`.
    pub total: PNorms,
    /// `‖g_n^{(k)}(θ)‖_p` for `n = 1..N` (zero-based in the vector).
    pub datum: Vec<PNorms>,
    /// `‖g₀^{(k)}(θ)‖_p`, when a prior term exists.
    pub prior: Option<PNorms>,
}

impl ArrayNorms {
    /// `‖g^{(k)}(θ)‖_p` for the stacked array `(g₀^{(k)}, …, g_N^{(k)})`.
    pub fn stacked(&self, p: NormKind) -> f64 {
        let terms = self.prior.iter().chain(&self.datum);
        match p {
            NormKind::L1 => terms.map(|t| t.l1).sum(),
            NormKind::L2 => terms.map(|t| t.l2 * t.l2).sum::<f64>().sqrt(),
            NormKind::Linf => terms.map(|t| t.linf).fold(0.0, f64::max),
        }
    }

    /// `(1/N) Σ_{n≥0} ‖g_n^{(k)}(θ)‖_p`.
    pub fn mean_of_terms(&self, p: NormKind) -> f64 {
        let s: f64 = self.prior.iter().chain(&self.datum).map(|t| t.get(p)).sum();
        s / self.n_obs as f64
    }
}

/// Computes every norm of the order-`k` arrays in one sweep over the
/// symmetric index multisets, without storing any array.
pub fn array_norms<P: EstimatingProblem>(problem: &P, theta: &[f64], k: usize) -> Result<ArrayNorms> {
    check_shapes(problem, theta, None)?;
    if k > MAX_ORDER {
        return Err(HoijError::OrderTooLarge {
            order: k,
            max: MAX_ORDER,
        });
    }
    let d = theta.len();
    let n_obs = problem.n_obs();
    let mut datum = vec![NormAcc::default(); n_obs];
    let mut prior: Option<NormAcc> = None;
    let mut total = NormAcc::default();
    for (set, mult) in multisets(d, k) {
        let dirs = set
            .iter()
            .map(|&i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                e
            })
            .collect();
        let seeded = DirectionBundle::new(dirs)?.seed(theta);
        let mut sum = vec![0.0; d];
        if let Some(g0) = problem.prior::<HyperDual>(&seeded) {
            let v: Vec<f64> = g0.iter().map(|g| g.mixed_part(k)).collect();
            prior.get_or_insert_with(NormAcc::default).add(&v, mult);
            sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
        }
        for (n, acc) in datum.iter_mut().enumerate() {
            let v: Vec<f64> = problem
                .datum::<HyperDual>(n, &seeded)
                .iter()
                .map(|g| g.mixed_part(k))
                .collect();
            acc.add(&v, mult);
            sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
        }
        sum.iter_mut().for_each(|s| *s /= n_obs as f64);
        total.add(&sum, mult);
    }
    let out = ArrayNorms {
        order: k,
        n_obs,
        total: total.finish(),
        datum: datum.into_iter().map(NormAcc::finish).collect(),
        prior: prior.map(NormAcc::finish),
    };
    if !(out.total.l1.is_finite() && out.datum.iter().all(|t| t.l1.is_finite())) {
        return Err(HoijError::NonFiniteEvaluation(format!(
            "order-{k} derivative arrays at θ = {theta:?}"
        )));
    }
    Ok(out)
}

/// `1/σ_min(H(θ, 1_N))`, with singular `H` reported as an error.
fn hessian_inverse_norm<P: EstimatingProblem>(
    problem: &P,
    theta: &[f64],
    w: &WeightVector,
) -> Result<f64> {
    let h = to_matrix(&jacobian(problem, theta, w)?);
    let (max, min) = extreme_singular_values(&h);
    let rcond = if max > 0.0 { min / max } else { 0.0 };
    if rcond < SINGULAR_RCOND {
        return Err(HoijError::SingularHessian {
            rcond,
            theta: theta.to_vec(),
        });
    }
    Ok(1.0 / min)
}

/// Verifiable constants at one order set `k = 0..=k_max`. Vectors are
/// indexed by `k` starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Expansion order `K` the constants were computed for.
    pub max_order: usize,
    pub c_op: f64,
    /// Lipschitz constant of `H`, taken as `M_2`.
    pub l_h: f64,
    /// `M_3`, reported alongside `L_H` for comparison.
    pub m3: f64,
    /// `M_k = sup ‖G^{(k)}(θ, 1_N)‖₂`.
    pub m: Vec<f64>,
    /// `δ_k` used in the bounds.
    pub delta: Vec<f64>,
    /// `(1/N) max_n sup ‖g_n^{(k)}‖₂`, the exact leave-one-out value.
    pub delta_exact: Vec<f64>,
    /// `√(V_k / N)`.
    pub delta_v: Vec<f64>,
    /// `T_k / N`.
    pub delta_t: Vec<f64>,
    pub delta_max: f64,
    /// `V_k = sup (1/N) Σ_n ‖g_n^{(k)}‖₂²`.
    pub v: Vec<f64>,
    /// `T_k = max_n sup ‖g_n^{(k)}‖_∞`.
    pub t: Vec<f64>,
    pub rho: f64,
    pub c_tilde_op: f64,
    pub c_set: f64,
    pub epsilon: f64,
}

impl BoundConstants {
    fn refresh(&mut self) {
        self.c_tilde_op = self.c_op / (1.0 - self.rho);
        let d0 = self.delta.first().copied().unwrap_or(0.0);
        let d1 = self.delta.get(1).copied().unwrap_or(0.0);
        self.c_set = self.c_op * d1 + self.c_op * self.c_op * self.l_h * d0;
        self.delta_max = self.delta.iter().cloned().fold(0.0, f64::max);
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        self.rho = rho;
        self.refresh();
        Ok(self)
    }

    /// Replaces the `δ_k` used by the bounds, e.g. with a bootstrap estimate.
    pub fn with_delta(mut self, delta: Vec<f64>) -> Result<Self> {
        if delta.len() != self.delta.len() {
            return Err(HoijError::Dimension(format!(
                "expected {} delta values, got {}",
                self.delta.len(),
                delta.len()
            )));
        }
        self.delta = delta;
        self.refresh();
        Ok(self)
    }

    pub fn condition_satisfied(&self) -> bool {
        self.c_set <= self.rho
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(HoijError::InvalidArgument(format!(
            "rho must lie strictly between 0 and 1, got {rho}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsOptions {
    pub rho: f64,
    /// `ε` in the `ε · M_k` correction to `δ_k`; 0 drops it.
    pub epsilon: f64,
}

impl Default for ConstantsOptions {
    fn default() -> Self {
        ConstantsOptions {
            rho: DEFAULT_RHO,
            epsilon: 0.0,
        }
    }
}

struct SampleStats {
    inv_norm: f64,
    norms: Vec<ArrayNorms>,
}

fn sample_stats<P: EstimatingProblem>(
    problem: &P,
    theta: &[f64],
    k_max: usize,
) -> Result<SampleStats> {
    let inv_norm = hessian_inverse_norm(problem, theta, &WeightVector::ones(problem.n_obs()))?;
    let norms = (0..=k_max)
        .map(|k| array_norms(problem, theta, k))
        .collect::<Result<_>>()?;
    Ok(SampleStats { inv_norm, norms })
}

/// Estimates the constants through order `K + 1` (and at least 3, so that
/// `M_2` and `M_3` are always available) by sampled suprema.
pub fn estimate_constants<P: EstimatingProblem>(
    problem: &P,
    sampler: &DomainSampler,
    max_order: usize,
    opts: &ConstantsOptions,
) -> Result<BoundConstants> {
    check_rho(opts.rho)?;
    if !(opts.epsilon >= 0.0 && opts.epsilon.is_finite()) {
        return Err(HoijError::InvalidArgument(format!(
            "epsilon must be finite and nonnegative, got {}",
            opts.epsilon
        )));
    }
    if max_order + 1 > MAX_ORDER {
        return Err(HoijError::OrderTooLarge {
            order: max_order,
            max: MAX_ORDER - 1,
        });
    }
    check_shapes(problem, &sampler.center, None)?;
    let k_max = (max_order + 1).max(3);
    let stats = sampler
        .points()
        .par_iter()
        .map(|theta| sample_stats(problem, theta, k_max))
        .collect::<Result<Vec<_>>>()?;

    let n = problem.n_obs() as f64;
    let mut c_op: f64 = 0.0;
    let mut m = vec![0.0f64; k_max + 1];
    let mut v = vec![0.0f64; k_max + 1];
    let mut t = vec![0.0f64; k_max + 1];
    let mut max_l2 = vec![0.0f64; k_max + 1];
    for s in &stats {
        c_op = c_op.max(s.inv_norm);
        for (k, a) in s.norms.iter().enumerate() {
            m[k] = m[k].max(a.total.l2);
            let sq: f64 = a.datum.iter().map(|p| p.l2 * p.l2).sum();
            v[k] = v[k].max(sq / n);
            for p in &a.datum {
                t[k] = t[k].max(p.linf);
                max_l2[k] = max_l2[k].max(p.l2);
            }
        }
    }
    let delta_exact: Vec<f64> = max_l2.iter().map(|x| x / n).collect();
    let delta = delta_exact
        .iter()
        .zip(&m)
        .map(|(d, mk)| d + opts.epsilon * mk)
        .collect();
    let mut c = BoundConstants {
        max_order,
        c_op,
        l_h: m[2],
        m3: m[3],
        delta,
        delta_v: v.iter().map(|x| (x / n).sqrt()).collect(),
        delta_t: t.iter().map(|x| x / n).collect(),
        delta_exact,
        m,
        delta_max: 0.0,
        v,
        t,
        rho: opts.rho,
        c_tilde_op: 0.0,
        c_set: 0.0,
        epsilon: opts.epsilon,
    };
    c.refresh();
    Ok(c)
}

/// The three leave-one-out `δ_k` estimates, `k = 0..=max(K+1, 3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooDelta {
    pub exact: Vec<f64>,
    pub v: Vec<f64>,
    pub t: Vec<f64>,
}

pub fn loo_delta<P: EstimatingProblem>(
    problem: &P,
    sampler: &DomainSampler,
    max_order: usize,
    epsilon: f64,
) -> Result<LooDelta> {
    let c = estimate_constants(
        problem,
        sampler,
        max_order,
        &ConstantsOptions {
            epsilon,
            ..Default::default()
        },
    )?;
    Ok(LooDelta {
        exact: c.delta,
        v: c.delta_v,
        t: c.delta_t,
    })
}

/// Default sampler radius `2 · C_op · δ_0`, with both constants taken at `θ̂`.
pub fn default_radius<P: EstimatingProblem>(problem: &P, theta_hat: &[f64]) -> Result<f64> {
    let s = sample_stats(problem, theta_hat, 0)?;
    let d0 = s.norms[0].datum.iter().map(|p| p.l2).fold(0.0, f64::max) / problem.n_obs() as f64;
    Ok(2.0 * s.inv_norm * d0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub satisfied: bool,
    pub c_set: f64,
    pub c_tilde_op: f64,
    pub rho: f64,
}

/// `C_set = C_op δ_1 + C_op² L_H δ_0 ≤ ρ`.
pub fn check_condition(c: &BoundConstants, rho: f64) -> Result<ConditionCheck> {
    let c = c.clone().with_rho(rho)?;
    Ok(ConditionCheck {
        satisfied: c.condition_satisfied(),
        c_set: c.c_set,
        c_tilde_op: c.c_tilde_op,
        rho,
    })
}

/// `B_1, …, B_{K+1}` with `sup ‖dθ^k‖₂ ≤ B_k`, from
/// `B_k = C̃_op Σ_{Θ_k} a (δ_{|𝒦|} + (1 − ω) M_{|𝒦|}) Π_{j∈𝒦} B_j`.
pub fn derivative_norm_bounds(c: &BoundConstants, max_order: usize) -> Result<Vec<f64>> {
    if !c.condition_satisfied() {
        return Err(HoijError::ConditionNotSatisfied {
            c_set: c.c_set,
            rho: c.rho,
        });
    }
    let top = max_order + 1;
    if top > MAX_ORDER || top >= c.delta.len() || top >= c.m.len() {
        return Err(HoijError::OrderTooLarge {
            order: max_order,
            max: c.delta.len().min(c.m.len()).saturating_sub(2),
        });
    }
    let table = cached_term_table();
    let mut b: Vec<f64> = Vec::with_capacity(top);
    for k in 1..=top {
        let mut s = 0.0;
        for term in table.order(k) {
            let q = term.kset.len();
            let mut f = c.delta[q];
            if term.omega == 0 {
                f += c.m[q];
            }
            let prod: f64 = term.kset.iter().map(|&j| b[j - 1]).product();
            s += term.coeff as f64 * f * prod;
        }
        b.push(c.c_tilde_op * s);
    }
    Ok(b)
}

/// `B_{K+1} / K!`, the bound on `‖θIJ^K − θ̂(w)‖₂`. `b[0]` is `B_1`.
pub fn taylor_error_bound(max_order: usize, b: &[f64]) -> Result<f64> {
    let bk = b.get(max_order).ok_or_else(|| {
        HoijError::InvalidArgument(format!(
            "B_{} needed for the order-{max_order} bound but only {} values given",
            max_order + 1,
            b.len()
        ))
    })?;
    let fact: f64 = (1..=max_order).map(|x| x as f64).product();
    Ok(bk / fact)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPoint {
    pub t: f64,
    /// `‖H(θ̂(w̃), w̃)⁻¹‖_op`, absent when the refit failed.
    pub inverse_norm: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianCheckReport {
    pub passed: bool,
    pub c_tilde_op: f64,
    pub max_inverse_norm: f64,
    pub points: Vec<SegmentPoint>,
    /// Points with `‖H⁻¹‖_op > C̃_op` or a failed refit.
    pub violations: Vec<SegmentPoint>,
}

/// Checks `‖H(θ̂(w̃), w̃)⁻¹‖_op ≤ C̃_op` at `w̃ = 1 + tΔw` for
/// `t = 0, 1/m, …, 1`.
pub fn hessian_inverse_norm_check<P: EstimatingProblem>(
    problem: &P,
    theta_hat: &[f64],
    w: &WeightVector,
    c_tilde_op: f64,
    segments: usize,
    cfg: &SolveConfig,
) -> Result<HessianCheckReport> {
    if segments == 0 {
        return Err(HoijError::InvalidArgument(
            "need at least one segment".into(),
        ));
    }
    let mut start = theta_hat.to_vec();
    let mut points = Vec::with_capacity(segments + 1);
    for i in 0..=segments {
        let t = i as f64 / segments as f64;
        let wt = w.along_segment(t);
        let res = exact_refit(problem, &wt, cfg, &start).and_then(|th| {
            let norm = hessian_inverse_norm(problem, &th, &wt)?;
            start = th;
            Ok(norm)
        });
        points.push(match res {
            Ok(x) => SegmentPoint {
                t,
                inverse_norm: Some(x),
                error: None,
            },
            Err(e) => SegmentPoint {
                t,
                inverse_norm: None,
                error: Some(e.to_string()),
            },
        });
    }
    let violations: Vec<SegmentPoint> = points
        .iter()
        .filter(|p| p.inverse_norm.is_none_or(|x| x > c_tilde_op))
        .cloned()
        .collect();
    let max_inverse_norm = points
        .iter()
        .filter_map(|p| p.inverse_norm)
        .fold(0.0, f64::max);
    Ok(HessianCheckReport {
        passed: violations.is_empty(),
        c_tilde_op,
        max_inverse_norm,
        points,
        violations,
    })
}

/// Heuristic `δ_k` for an arbitrary weight set: the sampled maximum over
/// `θ` and the given weights of `‖G^{(k)}(θ, w) − G^{(k)}(θ, 1_N)‖₂`.
pub fn empirical_delta<P: EstimatingProblem>(
    problem: &P,
    sampler: &DomainSampler,
    weights: &[WeightVector],
    k_max: usize,
) -> Result<Vec<f64>> {
    if k_max > MAX_ORDER {
        return Err(HoijError::OrderTooLarge {
            order: k_max,
            max: MAX_ORDER,
        });
    }
    let d = sampler.center.len();
    check_shapes(problem, &sampler.center, None)?;
    let n = problem.n_obs() as f64;
    let per_point = sampler
        .points()
        .par_iter()
        .map(|theta| {
            let mut out = vec![0.0f64; k_max + 1];
            for (k, slot) in out.iter_mut().enumerate() {
                let sets = multisets(d, k);
                // one seeded pass per multiset, reused across weights
                let mut sq = vec![0.0; weights.len()];
                for (set, mult) in &sets {
                    let dirs = set
                        .iter()
                        .map(|&i| {
                            let mut e = vec![0.0; d];
                            e[i] = 1.0;
                            e
                        })
                        .collect();
                    let seeded = DirectionBundle::new(dirs)?.seed(theta);
                    let rows: Vec<Vec<f64>> = (0..problem.n_obs())
                        .map(|i| {
                            problem
                                .datum::<HyperDual>(i, &seeded)
                                .iter()
                                .map(|g| g.mixed_part(k))
                                .collect()
                        })
                        .collect();
                    for (acc, w) in sq.iter_mut().zip(weights) {
                        let mut v = vec![0.0; d];
                        for (row, dw) in rows.iter().zip(w.delta()) {
                            if *dw != 0.0 {
                                v.iter_mut().zip(row).for_each(|(a, r)| *a += dw * r);
                            }
                        }
                        *acc += mult * v.iter().map(|x| (x / n) * (x / n)).sum::<f64>();
                    }
                }
                *slot = sq.iter().cloned().fold(0.0, f64::max).sqrt();
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut delta = vec![0.0f64; k_max + 1];
    for p in per_point {
        for (d, x) in delta.iter_mut().zip(p) {
            *d = d.max(x);
        }
    }
    if delta.iter().any(|x| !x.is_finite()) {
        return Err(HoijError::NonFiniteEvaluation("empirical delta".into()));
    }
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderConstants {
    pub k: usize,
    #[serde(rename = "M")]
    pub m: f64,
    pub delta_exact: f64,
    pub delta_v: f64,
    pub delta_t: f64,
    pub delta_used: f64,
    #[serde(rename = "B")]
    pub b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderBound {
    #[serde(rename = "K")]
    pub k: usize,
    pub bound: f64,
}

/// Serializable summary of a bounds computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub sup_method: String,
    pub sampler: DomainSampler,
    pub max_order: usize,
    pub per_k: Vec<OrderConstants>,
    #[serde(rename = "C_op")]
    pub c_op: f64,
    #[serde(rename = "C_tilde_op")]
    pub c_tilde_op: f64,
    #[serde(rename = "C_set")]
    pub c_set: f64,
    pub rho: f64,
    pub condition_satisfied: bool,
    #[serde(rename = "L_H")]
    pub l_h: f64,
    #[serde(rename = "M_3")]
    pub m3: f64,
    /// `C_op δ_0`, the direct bound on `‖θ̂ − θ̂(w)‖₂`.
    #[serde(rename = "C_op_delta_0")]
    pub c_op_delta_0: f64,
    pub epsilon: f64,
    #[serde(rename = "err_bound_per_K")]
    pub err_bound_per_k: Vec<OrderBound>,
}

pub fn bounds_report(c: &BoundConstants, sampler: &DomainSampler) -> BoundsReport {
    let b = derivative_norm_bounds(c, c.max_order).ok();
    let per_k = (0..=c.max_order + 1)
        .map(|k| OrderConstants {
            k,
            m: c.m[k],
            delta_exact: c.delta_exact[k],
            delta_v: c.delta_v[k],
            delta_t: c.delta_t[k],
            delta_used: c.delta[k],
            b: match (&b, k) {
                (Some(b), k) if k >= 1 => Some(b[k - 1]),
                _ => None,
            },
        })
        .collect();
    let err_bound_per_k = b
        .as_ref()
        .map(|b| {
            (0..=c.max_order)
                .map(|k| OrderBound {
                    k,
                    bound: taylor_error_bound(k, b).expect("B computed through K + 1"),
                })
                .collect()
        })
        .unwrap_or_default();
    BoundsReport {
        sup_method: "sampled sup".into(),
        sampler: sampler.clone(),
        max_order: c.max_order,
        per_k,
        c_op: c.c_op,
        c_tilde_op: c.c_tilde_op,
        c_set: c.c_set,
        rho: c.rho,
        condition_satisfied: c.condition_satisfied(),
        l_h: c.l_h,
        m3: c.m3,
        c_op_delta_0: c.c_op * c.delta[0],
        epsilon: c.epsilon,
        err_bound_per_k,
    }
}

/// For random `A` with `‖A⁻¹‖_op ≤ C_op` and `‖A − D‖₂ ≤ r / C_op`, checks
/// `‖D⁻¹‖_op ≤ C_op / (1 − r)`. Returns `(lhs, rhs)`.
pub fn perturbed_inverse_norm(a: &[Vec<f64>], d: &[Vec<f64>], r: f64) -> (f64, f64) {
    let c_op = crate::linalg::inverse_op_norm(&to_matrix(a));
    let lhs = crate::linalg::inverse_op_norm(&to_matrix(d));
    (lhs, c_op / (1.0 - r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::hoij::BaseFit;
    use crate::model::{make_problem, ModelProblem, ProblemConfig};
    use crate::weights::loo_weights;
    use proptest::prelude::*;
    use rand::Rng;

    fn mean4() -> ModelProblem {
        make_problem(
            "mean",
            Dataset::from_scalars(&[1.0, 2.0, 3.0, 6.0]).unwrap(),
            &ProblemConfig::default(),
        )
        .unwrap()
    }

    fn mean_constants() -> BoundConstants {
        estimate_constants(
            &mean4(),
            &DomainSampler::at_center(vec![3.0]),
            2,
            &ConstantsOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn multiset_multiplicities_cover_all_tuples() {
        for d in 1..4 {
            for k in 0..5 {
                let total: f64 = multisets(d, k).iter().map(|(_, m)| m).sum();
                assert_eq!(total, (d as f64).powi(k as i32));
            }
        }
    }

    #[test]
    fn sampler_stays_in_ball() {
        let s = DomainSampler::new(vec![1.0, -2.0, 0.5], 0.3, 100, 7).unwrap();
        let pts = s.points();
        assert_eq!(pts.len(), 100);
        assert_eq!(pts[0], s.center);
        for p in &pts {
            let r: f64 = p.iter().zip(&s.center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(r <= 0.3 + 1e-12);
        }
        assert_eq!(pts, s.points());
        assert!(DomainSampler::new(vec![0.0], -1.0, 3, 0).is_err());
    }

    #[test]
    fn mean_model_constants() {
        let c = mean_constants();
        assert_eq!(c.c_op, 1.0);
        assert_eq!(c.m[1], 1.0);
        assert_eq!(&c.m[2..], &[0.0, 0.0]);
        assert_eq!(c.l_h, 0.0);
        assert!((c.v[0] - 3.5).abs() < 1e-14);
        assert_eq!(c.t[0], 3.0);
        assert_eq!(c.delta[0], 0.75);
        assert_eq!(c.delta[1], 0.25);
        assert_eq!(&c.delta[2..], &[0.0, 0.0]);
        assert!((c.delta_v[0] - (3.5f64 / 4.0).sqrt()).abs() < 1e-14);
        assert_eq!(c.delta_t[0], 0.75);
    }

    #[test]
    fn exp_loss_interval_sup() {
        let p = make_problem(
            "exp_loss",
            Dataset::from_scalars(&[1.0]).unwrap(),
            &ProblemConfig::default(),
        )
        .unwrap();
        let s = DomainSampler::new(vec![0.0], 0.1, 16, 3).unwrap();
        let c = estimate_constants(&p, &s, 1, &ConstantsOptions::default()).unwrap();
        assert!((c.m[1] - 0.1f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn condition_and_bounds_for_mean() {
        let c = mean_constants();
        let chk = check_condition(&c, 0.5).unwrap();
        assert!(chk.satisfied);
        assert_eq!(chk.c_set, 0.25);
        assert_eq!(chk.c_tilde_op, 2.0);
        let b = derivative_norm_bounds(&c, 2).unwrap();
        assert_eq!(b[0], 1.5);
        assert_eq!(b[1], 1.5);
        assert_eq!(taylor_error_bound(1, &b).unwrap(), 1.5);
        assert_eq!(taylor_error_bound(0, &b).unwrap(), 1.5);
        assert!(check_condition(&c, 1.0).is_err());
        assert!(check_condition(&c, 0.0).is_err());
    }

    #[test]
    fn condition_failure_refuses_bounds() {
        let mut c = mean_constants();
        c.delta[1] = 1.0;
        let c = c.with_rho(0.5).unwrap();
        assert_eq!(c.c_set, 1.0);
        assert!(!check_condition(&c, 0.5).unwrap().satisfied);
        assert!(matches!(
            derivative_norm_bounds(&c, 1),
            Err(HoijError::ConditionNotSatisfied { .. })
        ));
    }

    #[test]
    fn zero_delta_gives_zero_bounds() {
        let c = mean_constants().with_delta(vec![0.0; 4]).unwrap();
        let b = derivative_norm_bounds(&c, 2).unwrap();
        assert!(b.iter().all(|x| *x == 0.0));
        assert_eq!(taylor_error_bound(2, &b).unwrap(), 0.0);
    }

    #[test]
    fn mean_loo_segment_inverse_norms() {
        let p = mean4();
        let r = hessian_inverse_norm_check(
            &p,
            &[3.0],
            &WeightVector::leave_out(4, &[3]),
            2.0,
            8,
            &SolveConfig::default(),
        )
        .unwrap();
        assert!(r.passed);
        assert!((r.max_inverse_norm - 4.0 / 3.0).abs() < 1e-12);
        let bad = hessian_inverse_norm_check(
            &p,
            &[3.0],
            &WeightVector::leave_out(4, &[3]),
            0.9,
            4,
            &SolveConfig::default(),
        )
        .unwrap();
        assert!(!bad.passed);
        assert_eq!(bad.violations[0].t, 0.0);
    }

    #[test]
    fn loo_errors_within_bounds() {
        let p = mean4();
        let fit = BaseFit::new(&p, &SolveConfig::default()).unwrap();
        let c = mean_constants();
        let b = derivative_norm_bounds(&c, 2).unwrap();
        for w in loo_weights(4, &[0, 1, 2, 3]).unwrap() {
            let e = fit.expand(&w, 2).unwrap();
            let exact = fit.refit(&w).unwrap();
            for k in 0..=2 {
                let err = (e.partial_sum(k)[0] - exact[0]).abs();
                assert!(err <= taylor_error_bound(k, &b).unwrap());
            }
        }
    }

    #[test]
    fn empirical_delta_matches_loo_for_mean() {
        let p = mean4();
        let ws: Vec<_> = loo_weights(4, &[0, 1, 2, 3]).unwrap().collect();
        let d = empirical_delta(&p, &DomainSampler::at_center(vec![3.0]), &ws, 2).unwrap();
        assert_eq!(d, vec![0.75, 0.25, 0.0]);
    }

    #[test]
    fn report_shape() {
        let c = mean_constants();
        let r = bounds_report(&c, &DomainSampler::at_center(vec![3.0]));
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["C_set"], 0.25);
        assert_eq!(v["per_k"][1]["B"], 1.5);
        assert_eq!(v["err_bound_per_K"].as_array().unwrap().len(), 3);
        assert_eq!(v["sup_method"], "sampled sup");
    }

    #[test]
    fn stated_array_norm_form_fails_for_l2() {
        // N identical terms: ‖G‖₂ = ‖a‖₂ but ‖g‖₂ / N = ‖a‖₂ / √N.
        let p = make_problem(
            "mean",
            Dataset::from_scalars(&[1.0, 1.0, 1.0, 1.0]).unwrap(),
            &ProblemConfig::default(),
        )
        .unwrap();
        let a = array_norms(&p, &[3.0], 0).unwrap();
        assert!(a.total.l2 > a.stacked(NormKind::L2) / 4.0);
        assert!(a.total.l1 <= a.stacked(NormKind::L1) / 4.0 + 1e-15);
        assert!(a.total.l2 <= a.mean_of_terms(NormKind::L2) + 1e-15);
    }

    fn lr_problem(rows: Vec<Vec<f64>>) -> ModelProblem {
        make_problem(
            "logistic_regression",
            Dataset::new(rows, None).unwrap(),
            &ProblemConfig {
                l2: 0.1,
                ..Default::default()
            },
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn array_norm_inequalities(
            xs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, 0.0f64..1.0), 3..12),
            th in (-1.0f64..1.0, -1.0f64..1.0),
            k in 0usize..4,
        ) {
            let rows = xs.iter().map(|(a, b, y)| vec![*a, *b, *y]).collect();
            let p = lr_problem(rows);
            let a = array_norms(&p, &[th.0, th.1], k).unwrap();
            let n = xs.len() as f64;
            let tol = 1e-12 * (1.0 + a.stacked(NormKind::L1));
            prop_assert!(a.total.l1 <= a.stacked(NormKind::L1) / n + tol);
            for q in [NormKind::L1, NormKind::L2, NormKind::Linf] {
                prop_assert!(a.total.get(q) <= a.mean_of_terms(q) + tol);
            }
            prop_assert!(a.total.linf <= a.total.l2 + tol && a.total.l2 <= a.total.l1 + tol);
        }

        #[test]
        fn operator_norm_continuity(
            seed in any::<u64>(),
            dim in 1usize..6,
            r in 0.05f64..0.95,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<Vec<f64>> = (0..dim)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            // A = BᵀB + I is positive definite
            let a: Vec<Vec<f64>> = (0..dim)
                .map(|i| (0..dim)
                    .map(|j| (0..dim).map(|l| b[l][i] * b[l][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                    .collect())
                .collect();
            let c_op = crate::linalg::inverse_op_norm(&to_matrix(&a));
            let e: Vec<Vec<f64>> = (0..dim)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let e_norm = e.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
            let scale = rng.random_range(0.0..1.0) * r / c_op / e_norm.max(1e-300);
            let d: Vec<Vec<f64>> = a.iter().zip(&e)
                .map(|(ra, re)| ra.iter().zip(re).map(|(x, y)| x + scale * y).collect())
                .collect();
            let (lhs, rhs) = perturbed_inverse_norm(&a, &d, r);
            prop_assert!(lhs <= rhs * (1.0 + 1e-10));
        }

        #[test]
        fn bounds_monotone_in_constants(bump in 0.0f64..0.2, which in 0usize..4) {
            let c = mean_constants();
            let base = derivative_norm_bounds(&c, 2).unwrap();
            let mut up = c.clone();
            if which < 2 { up.delta[which + 2] += bump } else { up.m[which] += bump }
            let up = up.with_rho(0.5).unwrap();
            let b = derivative_norm_bounds(&up, 2).unwrap();
            for (x, y) in base.iter().zip(&b) {
                prop_assert!(y >= x);
            }
        }
    }
}
