//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use hoij_core::resampling::{generate_data, GeneratorConfig};
use hoij_core::{make_problem, ModelProblem, ProblemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MODELS: [&str; 4] = ["mean", "linear_regression", "logistic_regression", "exp_loss"];

/// Nested central difference of `f` along `dirs` with step `h`: the sum over
/// sign patterns `s` of `Π s_i f(θ + h Σ s_i v_i)` divided by `(2h)^k`.
fn nested_central(f: &dyn Fn(&[f64]) -> Vec<f64>, theta: &[f64], dirs: &[Vec<f64>], h: f64) -> Vec<f64> {
    let k = dirs.len();
    let mut acc = vec![0.0; f(theta).len()];
    for mask in 0..(1usize << k) {
        let mut x = theta.to_vec();
        let mut sign = 1.0;
        for (i, v) in dirs.iter().enumerate() {
            let s = if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
            sign *= s;
            x.iter_mut().zip(v).for_each(|(xi, vi)| *xi += s * h * vi);
        }
        acc.iter_mut().zip(f(&x)).for_each(|(a, y)| *a += sign * y);
    }
    let denom = (2.0 * h).powi(k as i32);
    acc.iter().map(|a| a / denom).collect()
}

/// Two levels of Richardson extrapolation over `h, h/2, h/4` for a
/// symmetric stencil whose error expands in even powers of `h`.
pub fn richardson(a: impl Fn(f64) -> Vec<f64>, h: f64) -> Vec<f64> {
    let (a0, a1, a2) = (a(h), a(h / 2.0), a(h / 4.0));
    let l1 = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter().zip(y).map(|(p, q)| (4.0 * q - p) / 3.0).collect()
    };
    let (b0, b1) = (l1(&a0, &a1), l1(&a1, &a2));
    b0.iter().zip(&b1).map(|(p, q)| (16.0 * q - p) / 15.0).collect()
}

/// Mixed directional derivative of `f` at `theta`.
pub fn fd_directional(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    theta: &[f64],
    dirs: &[Vec<f64>],
    h: f64,
) -> Vec<f64> {
    if dirs.is_empty() {
        return f(theta);
    }
    richardson(|s| nested_central(f, theta, dirs, s), h)
}

/// `k`-th derivative at 0 of a vector function of one variable, `k ≤ 3`.
pub fn fd_scalar(f: &dyn Fn(f64) -> Vec<f64>, k: usize, h: f64) -> Vec<f64> {
    let stencil = |s: f64| -> Vec<f64> {
        let (pts, scale): (Vec<(f64, f64)>, f64) = match k {
            1 => (vec![(1.0, 1.0), (-1.0, -1.0)], 2.0 * s),
            2 => (vec![(1.0, 1.0), (0.0, -2.0), (-1.0, 1.0)], s * s),
            3 => (
                vec![(2.0, 1.0), (1.0, -2.0), (-1.0, 2.0), (-2.0, -1.0)],
                2.0 * s * s * s,
            ),
            _ => panic!("order {k} not supported"),
        };
        let mut acc: Vec<f64> = Vec::new();
        for (x, c) in pts {
            let y = f(x * s);
            if acc.is_empty() {
                acc = vec![0.0; y.len()];
            }
            acc.iter_mut().zip(y).for_each(|(a, v)| *a += c * v);
        }
        acc.iter().map(|a| a / scale).collect()
    };
    richardson(stencil, h)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(floor)
}

/// Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for j in c..n {
                a[r][j] -= f * a[c][j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|j| a[r][j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..=scale)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Bounded random instance of a registered model with `n` rows.
pub fn random_problem(model_id: &str, n: usize, dim: usize, seed: u64) -> ModelProblem {
    let data = generate_data(model_id, n, &GeneratorConfig { dim, noise: 0.5 }, seed).unwrap();
    let cfg = ProblemConfig {
        l2: if model_id == "logistic_regression" { 0.05 } else { 0.0 },
        ..Default::default()
    };
    make_problem(model_id, data, &cfg).unwrap()
}
