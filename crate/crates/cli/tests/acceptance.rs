//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::Command;
use std::time::Instant;

use common::*;
use hoij_core::bounds::{
    array_norms, check_condition, derivative_norm_bounds, estimate_constants,
    hessian_inverse_norm_check, perturbed_inverse_norm, taylor_error_bound, ConstantsOptions,
    DomainSampler, NormKind,
};
use hoij_core::derivatives::g_theta_derivative;
use hoij_core::resampling::{
    bootstrap_study, ij_linear_covariance, sandwich_covariance, scaling_study, GeneratorConfig,
    ScalingConfig,
};
use hoij_core::terms::{build_term_tables, verify_table_invariants, DerivativeTerm};
use hoij_core::weights::loo_weights;
use hoij_core::{
    cached_term_table, evaluate_g, make_problem, AffineProblem, BaseFit, Dataset,
    DirectionBundle, EstimatingProblem, ModelProblem, ProblemConfig, SolveConfig, WeightVector,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean4() -> ModelProblem {
    make_problem(
        "mean",
        Dataset::from_scalars(&[1.0, 2.0, 3.0, 6.0]).unwrap(),
        &ProblemConfig::default(),
    )
    .unwrap()
}

fn term_tables() -> Outcome {
    let t = |a: u64, k: &[usize], w: u8| DerivativeTerm::new(a, k.to_vec(), w);
    let as_set = |v: &[DerivativeTerm]| -> std::collections::BTreeSet<String> {
        v.iter().map(|x| format!("{x:?}")).collect()
    };
    let table = build_term_tables(3).map_err(|e| e.to_string())?;
    let ok1 = table.order(1) == [t(1, &[], 1)];
    let ok2 = as_set(table.order(2)) == as_set(&[t(1, &[1, 1], 0), t(2, &[1], 1)]);
    let ok3 = as_set(table.order(3))
        == as_set(&[
            t(1, &[1, 1, 1], 0),
            t(3, &[2, 1], 0),
            t(3, &[2], 1),
            t(3, &[1, 1], 1),
        ]);
    let report = verify_table_invariants(cached_term_table());
    check(
        ok1 && ok2 && ok3 && report.passed && cached_term_table().max_order() == 6,
        format!(
            "orders 1-3 match: {ok1}/{ok2}/{ok3}; {} terms through order 6 checked, {} violations",
            report.checked,
            report.violations.len()
        ),
    )
}

fn ad_correctness() -> Outcome {
    let steps = [1e-2, 2e-2, 4e-2, 8e-2];
    let mut worst: f64 = 0.0;
    for (mi, model) in MODELS.iter().enumerate() {
        let p = random_problem(model, 20, 3, 1000 + mi as u64);
        let d = p.dim();
        let ones = WeightVector::ones(p.n_obs());
        let f = |th: &[f64]| evaluate_g(&p, th, &ones).unwrap();
        let mut r = rng(77 + mi as u64);
        let scale = if *model == "exp_loss" { 0.5 } else { 1.0 };
        for _ in 0..50 {
            let theta = random_vec(&mut r, d, scale);
            for k in 1..=4 {
                let dirs: Vec<Vec<f64>> = (0..k).map(|_| random_vec(&mut r, d, 1.0)).collect();
                let bundle = DirectionBundle::new(dirs.clone()).map_err(|e| e.to_string())?;
                let ad = g_theta_derivative(&p, &theta, &ones, &bundle).map_err(|e| e.to_string())?;
                let fd = fd_directional(&f, &theta, &dirs, steps[k - 1]);
                worst = worst.max(rel_err(&ad, &fd, 1.0));
            }
        }
    }
    check(
        worst < 1e-5,
        format!("4 models x 50 draws x orders 1-4, worst relative error {worst:.2e} (< 1e-5)"),
    )
}

fn implicit_oracle() -> Outcome {
    let cfg = SolveConfig::default();
    let mut worst: f64 = 0.0;
    for (mi, model) in ["mean", "linear_regression"].iter().enumerate() {
        let p = random_problem(model, 12, 2, 300 + mi as u64);
        let n = p.n_obs();
        let fit = BaseFit::new(&p, &cfg).map_err(|e| e.to_string())?;
        let mut r = rng(5 + mi as u64);
        let mut cases = vec![WeightVector::leave_out(n, &[0]), WeightVector::leave_out(n, &[7])];
        for _ in 0..3 {
            cases.push(WeightVector::new(
                random_vec(&mut r, n, 0.5).iter().map(|x| 1.0 + x).collect(),
            ));
        }
        for w in &cases {
            let e = fit.expand(w, 3).map_err(|e| e.to_string())?;
            let path = |t: f64| {
                hoij_core::exact_refit(&p, &w.along_segment(t), &cfg, fit.theta_hat()).unwrap()
            };
            for k in 1..=3 {
                let fd = fd_scalar(&path, k, 0.1);
                worst = worst.max(rel_err(&e.dthetas[k - 1], &fd, 1e-6));
            }
        }
    }
    check(
        worst < 1e-4,
        format!("mean and linear_regression, k <= 3, worst relative error {worst:.2e} (< 1e-4)"),
    )
}

fn mean_closed_form() -> Outcome {
    let p = mean4();
    let fit = BaseFit::new(&p, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let w = WeightVector::leave_out(4, &[3]);
    let e = fit.expand(&w, 3).map_err(|e| e.to_string())?;
    let exact = fit.refit(&w).map_err(|e| e.to_string())?[0];
    let got: Vec<f64> = (1..=3).map(|k| e.partial_sum(k)[0]).collect();
    let want = [2.25, 2.0625, 2.015625];
    let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-12) && (exact - 2.0).abs() <= 1e-12;
    check(ok, format!("theta_IJ^1..3 = {got:?}, exact refit = {exact}"))
}

fn affine_exactness() -> Outcome {
    let mut r = rng(2024);
    let rows: Vec<Vec<f64>> = (0..10).map(|_| random_vec(&mut r, 3, 1.0)).collect();
    let p = AffineProblem::new(&Dataset::new(rows, None).unwrap());
    let fit = BaseFit::new(&p, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let (mut e1, mut higher): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let w = WeightVector::new(random_vec(&mut r, 10, 2.0).iter().map(|x| 1.0 + x).collect());
        let e = fit.expand(&w, 4).map_err(|e| e.to_string())?;
        let exact = fit.refit(&w).map_err(|e| e.to_string())?;
        e1 = e1.max(rel_err(&e.partial_sum(1), &exact, 1.0));
        for d in &e.dthetas[1..] {
            higher = higher.max(norm(d));
        }
    }
    check(
        e1 <= 1e-12 && higher <= 1e-12,
        format!("20 weights: max |theta_IJ^1 - exact| {e1:.1e}, max ||dtheta^k>=2|| {higher:.1e}"),
    )
}

fn sandwich() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    let mut r = rng(99);
    for (mi, model) in MODELS.iter().enumerate() {
        for rep in 0..5 {
            let n = r.random_range(20..=200);
            let dim = r.random_range(1..=5);
            let p = random_problem(model, n, dim, 500 + 10 * mi as u64 + rep);
            let fit = BaseFit::new(&p, &SolveConfig::default()).map_err(|e| e.to_string())?;
            let s = sandwich_covariance(&fit).map_err(|e| e.to_string())?;
            let l = ij_linear_covariance(&fit).map_err(|e| e.to_string())?;
            for (a, b) in s.iter().flatten().zip(l.iter().flatten()) {
                worst = worst.max((a - b).abs());
            }
            instances += 1;
        }
    }
    // Monte Carlo: empirical covariance of theta_IJ^1 over 1e5 bootstrap draws.
    let mut mc_worst: f64 = 0.0;
    let lr = random_problem("linear_regression", 40, 2, 8);
    let mean = mean4();
    let cases: [(&str, &ModelProblem); 2] = [("mean", &mean), ("linear_regression", &lr)];
    for (_, p) in cases {
        let fit = BaseFit::new(p, &SolveConfig::default()).map_err(|e| e.to_string())?;
        let rep = bootstrap_study(&fit, 1, 100_000, 12345, false, 4).map_err(|e| e.to_string())?;
        for i in 0..rep.ij_linear.len() {
            for j in 0..rep.ij_linear.len() {
                let z = (rep.ij_empirical.covariance[i][j] - rep.ij_linear[i][j]).abs()
                    / rep.ij_empirical.std_error[i][j];
                mc_worst = mc_worst.max(z);
            }
        }
    }
    check(
        worst <= 1e-12 && mc_worst <= 3.0,
        format!(
            "{instances} random instances, max |sandwich - linear IJ| {worst:.1e}; \
             Monte Carlo (1e5 draws) max deviation {mc_worst:.2} SE"
        ),
    )
}

fn rates() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for model in ["mean", "linear_regression"] {
        let cfg = ScalingConfig {
            model_id: model.into(),
            n_grid: ScalingConfig::default_grid(),
            max_order: 2,
            seed: 0,
            generator: GeneratorConfig::default(),
            problem: ProblemConfig::default(),
            workers: 1,
        };
        let rep = scaling_study(&cfg).map_err(|e| e.to_string())?;
        ok &= rep.rows.iter().all(|r| r.failure.is_none());
        for s in &rep.slopes {
            ok &= (s.slope - s.expected).abs() <= 0.35;
            details.push(format!("{model} K={} slope {:.3}", s.k, s.slope));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    check(ok, format!("{}; runtime {secs:.1}s", details.join(", ")))
}

fn bound_soundness() -> Outcome {
    let p = mean4();
    let fit = BaseFit::new(&p, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let c = estimate_constants(
        &p,
        &DomainSampler::at_center(fit.theta_hat().to_vec()),
        1,
        &ConstantsOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let cond = check_condition(&c, 0.5).map_err(|e| e.to_string())?;
    let b = derivative_norm_bounds(&c, 1).map_err(|e| e.to_string())?;
    let mut ok = cond.satisfied && cond.c_set == 0.25 && b[0] == 1.5 && b[1] == 1.5;
    let mut worst_ratio: f64 = 0.0;
    let mut segments_ok = true;
    for w in loo_weights(4, &[0, 1, 2, 3]).unwrap() {
        let e = fit.expand(&w, 1).map_err(|e| e.to_string())?;
        let exact = fit.refit(&w).map_err(|e| e.to_string())?;
        for k in 0..=1 {
            let err = (e.partial_sum(k)[0] - exact[0]).abs();
            let bound = taylor_error_bound(k, &b).map_err(|e| e.to_string())?;
            ok &= err <= bound;
            worst_ratio = worst_ratio.max(err / bound);
        }
        let h = hessian_inverse_norm_check(&p, fit.theta_hat(), &w, cond.c_tilde_op, 16, &SolveConfig::default())
            .map_err(|e| e.to_string())?;
        segments_ok &= h.passed;
    }
    ok &= segments_ok;
    check(
        ok,
        format!(
            "C_set = {}, B_1 = {}, B_2 = {}, worst error/bound {worst_ratio:.3}, segments pass: {segments_ok}",
            cond.c_set, b[0], b[1]
        ),
    )
}

fn norm_utilities() -> Outcome {
    let mut r = rng(4242);
    let mut array_ok = 0;
    let mut stacked_fail = 0;
    for i in 0..100 {
        let model = MODELS[i % 4];
        let p = random_problem(model, r.random_range(3..30), r.random_range(1..4), 7000 + i as u64);
        let theta = random_vec(&mut r, p.dim(), 0.5);
        let k = r.random_range(0..4);
        let a = array_norms(&p, &theta, k).map_err(|e| e.to_string())?;
        let n = p.n_obs() as f64;
        let tol = 1e-12 * (1.0 + a.stacked(NormKind::L1));
        let l1 = a.total.l1 <= a.stacked(NormKind::L1) / n + tol;
        let jensen = [NormKind::L1, NormKind::L2, NormKind::Linf]
            .iter()
            .all(|&q| a.total.get(q) <= a.mean_of_terms(q) + tol);
        if l1 && jensen {
            array_ok += 1;
        }
        if [NormKind::L2, NormKind::Linf]
            .iter()
            .any(|&q| a.total.get(q) > a.stacked(q) / n + tol)
        {
            stacked_fail += 1;
        }
    }
    let mut cont_ok = 0;
    for _ in 0..100 {
        let dim = r.random_range(1..6);
        let b: Vec<Vec<f64>> = (0..dim).map(|_| random_vec(&mut r, dim, 1.0)).collect();
        let a: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| {
                        (0..dim).map(|l| b[l][i] * b[l][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let c_op = hoij_core::linalg::inverse_op_norm(&hoij_core::linalg::to_matrix(&a));
        let rr = r.random_range(0.05..0.95);
        let e: Vec<Vec<f64>> = (0..dim).map(|_| random_vec(&mut r, dim, 1.0)).collect();
        let en = e.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let s = r.random_range(0.0..1.0) * rr / c_op / en;
        let d: Vec<Vec<f64>> = a
            .iter()
            .zip(&e)
            .map(|(ra, re)| ra.iter().zip(re).map(|(x, y)| x + s * y).collect())
            .collect();
        let (lhs, rhs) = perturbed_inverse_norm(&a, &d, rr);
        if lhs <= rhs * (1.0 + 1e-10) {
            cont_ok += 1;
        }
    }
    check(
        array_ok == 100 && cont_ok == 100,
        format!(
            "array norms {array_ok}/100 (L1 stacked form and per-term Jensen form for L1/L2/Linf; \
             the stacked form with L2/Linf fails on {stacked_fail}/100), operator-norm continuity {cont_ok}/100"
        ),
    )
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_hoij");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("lr.csv");
    let ds = hoij_core::resampling::generate_data("linear_regression", 30, &GeneratorConfig::default(), 3)
        .map_err(|e| e.to_string())?;
    let text: String = ds
        .features()
        .iter()
        .map(|r| r.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    std::fs::write(&data, text).map_err(|e| e.to_string())?;
    let run = |args: &[&str], tag: &str| -> Result<Vec<Vec<u8>>, String> {
        // Same relative file names in separate directories: the output paths
        // are part of the recorded config.
        let sub = dir.path().join(tag);
        std::fs::create_dir_all(&sub).map_err(|e| e.to_string())?;
        let (out, csv) = (sub.join("out.json"), sub.join("out.csv"));
        let mut cmd = Command::new(bin);
        cmd.current_dir(&sub);
        cmd.args(args).args(["--out", "out.json"]);
        if args[0] == "cv" {
            cmd.args(["--csv", "out.csv"]);
        }
        let st = cmd.output().map_err(|e| e.to_string())?;
        if !st.status.success() {
            return Err(String::from_utf8_lossy(&st.stderr).into_owned());
        }
        let mut files = vec![std::fs::read(&out).map_err(|e| e.to_string())?];
        if args[0] == "cv" {
            files.push(std::fs::read(&csv).map_err(|e| e.to_string())?);
        }
        Ok(files)
    };
    let data_s = data.to_str().unwrap();
    let cv = [
        "cv", "--model", "linear_regression", "--data", data_s, "--order", "2", "--scheme",
        "bootstrap", "--draws", "25", "--seed", "11", "--with-bounds", "--samples", "32",
        "--workers", "3",
    ];
    let sc = ["scaling", "--model", "mean", "--grid", "20,40,80", "--seed", "5", "--order", "2"];
    let cv_same = run(&cv, "cv_a")? == run(&cv, "cv_b")?;
    let sc_same = run(&sc, "sc_a")? == run(&sc, "sc_b")?;
    check(
        cv_same && sc_same,
        format!("cv JSON+CSV identical: {cv_same}; scaling JSON identical: {sc_same}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("term tables", term_tables),
        ("AD vs finite differences", ad_correctness),
        ("implicit-derivative oracle", implicit_oracle),
        ("mean-model closed form", mean_closed_form),
        ("affine exactness", affine_exactness),
        ("sandwich identity", sandwich),
        ("LOO error rates", rates),
        ("bound soundness", bound_soundness),
        ("norm utilities", norm_utilities),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS  criterion {:>2}: {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL  criterion {:>2}: {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
