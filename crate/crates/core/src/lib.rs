//! Higher-order infinitesimal jackknife for re-weighted M-estimators.
//!
//! An estimator `θ̂(w)` solves `G(θ, w) = (1/N)(g₀(θ) + Σ_n w_n g_n(θ)) = 0`.
//! Given the base fit at `w = 1_N`, the crate approximates `θ̂(w)` for many
//! weight vectors (cross-validation folds, bootstrap draws) by a Taylor
//! expansion in `w` whose terms need only one Hessian factorization.

pub mod ad;
pub mod bounds;
pub mod data;
pub mod derivatives;
pub mod error;
pub mod hoij;
pub mod linalg;
pub mod model;
pub mod resampling;
pub mod terms;
pub mod weights;

pub use ad::{DirectionBundle, HyperDual, Scalar, TaylorScalar, MAX_ORDER};
pub use data::{load_dataset, DataFormat, Dataset};
pub use error::{HoijError, Result};
pub use hoij::{
    evaluate_dtheta, evaluate_term, evaluate_theta_ij, exact_refit, factorize_hessian, solve_base,
    BaseFit, HessianFactor, SolveConfig, TaylorExpansion,
};
pub use model::{
    evaluate_g, make_problem, AffineProblem, DomainHint, EstimatingProblem, ModelKind,
    ModelProblem, ProblemConfig, REGISTRY,
};
pub use terms::{
    build_term_tables, cached_term_table, verify_table_invariants, DerivativeTerm, TermTable,
};
pub use weights::{WeightScheme, WeightVector};
