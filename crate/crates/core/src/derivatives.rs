//! Directional derivatives of `G(θ, w)` in `θ`, contracted term by term so
//! that no `D^{k+1}` array is ever formed.

use crate::ad::{DirectionBundle, HyperDual};
use crate::error::{HoijError, Result};
use crate::model::{check_shapes, EstimatingProblem};
use crate::weights::WeightVector;

/// `(1/N) (c₀ ∂^k g₀ + Σ_n c_n ∂^k g_n) v_1 ⋯ v_k`, skipping zero `c_n`.
fn contracted<P: EstimatingProblem>(
    problem: &P,
    theta: &[f64],
    coefs: &[f64],
    with_prior: bool,
    dirs: &DirectionBundle,
) -> Result<Vec<f64>> {
    check_shapes(problem, theta, Some(coefs))?;
    dirs.check_dim(theta.len())?;
    let k = dirs.order();
    let seeded = dirs.seed(theta);
    let mut acc = vec![0.0; theta.len()];
    if with_prior {
        if let Some(g0) = problem.prior::<HyperDual>(&seeded) {
            for (a, g) in acc.iter_mut().zip(&g0) {
                *a += g.mixed_part(k);
            }
        }
    }
    for (n, &c) in coefs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (a, g) in acc.iter_mut().zip(problem.datum::<HyperDual>(n, &seeded)) {
            *a += c * g.mixed_part(k);
        }
    }
    let n = problem.n_obs() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    if acc.iter().any(|x| !x.is_finite()) {
        return Err(HoijError::NonFiniteEvaluation(format!(
            "order-{k} derivative of G"
        )));
    }
    Ok(acc)
}

/// `G^{(k)}(θ, w) v_1 ⋯ v_k`.
pub fn g_theta_derivative<P: EstimatingProblem>(
    problem: &P,
    theta: &[f64],
    w: &WeightVector,
    dirs: &DirectionBundle,
) -> Result<Vec<f64>> {
    contracted(problem, theta, w.values(), true, dirs)
}

/// `G^{w(k)}(θ) v_1 ⋯ v_k = (1/N) Σ_n g_n^{(k)}(θ) v_1 ⋯ v_k Δw_n`.
///
/// With an empty bundle this is `(1/N) Σ_n g_n(θ) Δw_n`. The prior term does
/// not depend on the weights and is excluded.
pub fn g_weight_derivative<P: EstimatingProblem>(
    problem: &P,
    theta: &[f64],
    delta_w: &[f64],
    dirs: &DirectionBundle,
) -> Result<Vec<f64>> {
    contracted(problem, theta, delta_w, false, dirs)
}

/// `g_n^{(k)}(θ) v_1 ⋯ v_k` for the zero-based row `n`, unscaled.
pub fn datum_derivative<P: EstimatingProblem>(
    problem: &P,
    n: usize,
    theta: &[f64],
    dirs: &DirectionBundle,
) -> Result<Vec<f64>> {
    check_shapes(problem, theta, None)?;
    dirs.check_dim(theta.len())?;
    let k = dirs.order();
    let out: Vec<f64> = problem
        .datum::<HyperDual>(n, &dirs.seed(theta))
        .iter()
        .map(|g| g.mixed_part(k))
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(HoijError::NonFiniteEvaluation(format!(
            "order-{k} derivative of g_{n}"
        )));
    }
    Ok(out)
}

/// `g₀^{(k)}(θ) v_1 ⋯ v_k`, or `None` when the problem has no prior term.
pub fn prior_derivative<P: EstimatingProblem>(
    problem: &P,
    theta: &[f64],
    dirs: &DirectionBundle,
) -> Result<Option<Vec<f64>>> {
    check_shapes(problem, theta, None)?;
    dirs.check_dim(theta.len())?;
    let k = dirs.order();
    Ok(problem
        .prior::<HyperDual>(&dirs.seed(theta))
        .map(|g| g.iter().map(|x| x.mixed_part(k)).collect()))
}

/// The Jacobian `H(θ, w) = G^{(1)}(θ, w)` assembled column by column from
/// forward passes along the basis directions. Row-major `D × D`.
pub fn jacobian<P: EstimatingProblem>(
    problem: &P,
    theta: &[f64],
    w: &WeightVector,
) -> Result<Vec<Vec<f64>>> {
    let d = theta.len();
    let mut h = vec![vec![0.0; d]; d];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col = g_theta_derivative(problem, theta, w, &DirectionBundle::new(vec![e])?)?;
        for (i, c) in col.into_iter().enumerate() {
            h[i][j] = c;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::model::{make_problem, ProblemConfig};

    fn mean4() -> crate::model::ModelProblem {
        make_problem(
            "mean",
            Dataset::from_scalars(&[1.0, 2.0, 3.0, 6.0]).unwrap(),
            &ProblemConfig::default(),
        )
        .unwrap()
    }

    fn bundle(v: &[f64]) -> DirectionBundle {
        DirectionBundle::new(v.iter().map(|x| vec![*x]).collect()).unwrap()
    }

    #[test]
    fn mean_first_derivative_is_direction() {
        let p = mean4();
        let d = g_theta_derivative(&p, &[0.3], &WeightVector::ones(4), &bundle(&[0.7])).unwrap();
        assert!((d[0] - 0.7).abs() < 1e-15);
        let d2 =
            g_theta_derivative(&p, &[0.3], &WeightVector::ones(4), &bundle(&[0.7, 1.1])).unwrap();
        assert_eq!(d2, vec![0.0]);
    }

    #[test]
    fn exp_loss_single_datum_second_derivative() {
        let p = make_problem(
            "exp_loss",
            Dataset::from_scalars(&[1.0]).unwrap(),
            &ProblemConfig::default(),
        )
        .unwrap();
        let d = g_theta_derivative(&p, &[0.0], &WeightVector::ones(1), &bundle(&[1.0, 1.0]))
            .unwrap();
        assert!((d[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weight_derivative_mean_loo() {
        let p = mean4();
        let dw = [0.0, 0.0, 0.0, -1.0];
        let d0 = g_weight_derivative(&p, &[3.0], &dw, &DirectionBundle::empty()).unwrap();
        assert!((d0[0] - 0.75).abs() < 1e-15);
        let d1 = g_weight_derivative(&p, &[3.0], &dw, &bundle(&[1.0])).unwrap();
        assert!((d1[0] + 0.25).abs() < 1e-15);
        let z = g_weight_derivative(&p, &[3.0], &[0.0; 4], &bundle(&[1.0, 2.0])).unwrap();
        assert_eq!(z, vec![0.0]);
    }

    #[test]
    fn linear_regression_jacobian_is_gram() {
        let data =
            Dataset::new(vec![vec![1.0, 2.0, 0.5], vec![3.0, -1.0, 2.0], vec![0.0, 1.0, 1.0]], None)
                .unwrap();
        let p = make_problem("linear_regression", data, &ProblemConfig::default()).unwrap();
        let h = jacobian(&p, &[0.2, -0.4], &WeightVector::ones(3)).unwrap();
        let expect = [[(1.0 + 9.0) / 3.0, (2.0 - 3.0) / 3.0], [(2.0 - 3.0) / 3.0, (4.0 + 1.0 + 1.0) / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn wrong_direction_length() {
        let p = mean4();
        let dirs = DirectionBundle::new(vec![vec![1.0, 0.0]]).unwrap();
        assert!(g_theta_derivative(&p, &[0.0], &WeightVector::ones(4), &dirs).is_err());
    }
}
