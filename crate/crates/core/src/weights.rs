//! Data weight vectors and the cross-validation / bootstrap schemes that
//! generate them.
//!
//! Indices are zero-based throughout.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HoijError, Result};

/// Dense weight vector `w` together with `Δw = w − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
    delta: Vec<f64>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Self {
        let delta = values.iter().map(|w| w - 1.0).collect();
        WeightVector { values, delta }
    }

    /// The all-ones vector `1_N`.
    pub fn ones(n: usize) -> Self {
        WeightVector {
            values: vec![1.0; n],
            delta: vec![0.0; n],
        }
    }

    /// Weight vector with zeros at `dropped` and ones elsewhere.
    pub fn leave_out(n: usize, dropped: &[usize]) -> Self {
        let mut values = vec![1.0; n];
        for &i in dropped {
            values[i] = 0.0;
        }
        WeightVector::new(values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// `1 + t Δw`, the point at fraction `t` of the segment from `1_N` to `w`.
    pub fn along_segment(&self, t: f64) -> WeightVector {
        WeightVector::new(self.delta.iter().map(|d| 1.0 + t * d).collect())
    }

    /// True when `Δw` is identically zero.
    pub fn is_unit(&self) -> bool {
        self.delta.iter().all(|d| *d == 0.0)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Leave-one-out weights, one vector per index in `subset`.
pub fn loo_weights(n: usize, subset: &[usize]) -> Result<impl Iterator<Item = WeightVector>> {
    if n == 0 {
        return Err(HoijError::InvalidArgument("N must be at least 1".into()));
    }
    if let Some(bad) = subset.iter().find(|&&i| i >= n) {
        return Err(HoijError::InvalidArgument(format!(
            "index {bad} out of range for N = {n}"
        )));
    }
    let subset = subset.to_vec();
    Ok(subset.into_iter().map(move |i| WeightVector::leave_out(n, &[i])))
}

/// `folds`-fold cross-validation weights over a seeded random permutation.
/// Each vector has `⌊N / folds⌋` zeros; the zero sets are disjoint.
pub fn kfold_weights(
    n: usize,
    folds: usize,
    seed: u64,
) -> Result<impl Iterator<Item = WeightVector>> {
    if folds == 0 || folds > n {
        return Err(HoijError::InvalidArgument(format!(
            "fold count {folds} must lie in 1..={n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(seed));
    let size = n / folds;
    Ok((0..folds).map(move |f| WeightVector::leave_out(n, &perm[f * size..(f + 1) * size])))
}

/// `count` random leave-`kappa`-out weight vectors.
pub fn leave_kappa_out_weights(
    n: usize,
    kappa: usize,
    seed: u64,
    count: usize,
) -> Result<impl Iterator<Item = WeightVector>> {
    if kappa > n {
        return Err(HoijError::InvalidArgument(format!(
            "cannot leave {kappa} out of {n}"
        )));
    }
    let mut rng = rng(seed);
    Ok((0..count).map(move |_| {
        let dropped = rand::seq::index::sample(&mut rng, n, kappa).into_vec();
        WeightVector::leave_out(n, &dropped)
    }))
}

/// Bootstrap weights `w ~ Multinomial(N, 1_N / N)`.
pub fn bootstrap_weights(
    n: usize,
    draws: usize,
    seed: u64,
) -> Result<impl Iterator<Item = WeightVector>> {
    if n == 0 {
        return Err(HoijError::InvalidArgument("N must be at least 1".into()));
    }
    let mut rng = rng(seed);
    Ok((0..draws).map(move |_| {
        let mut counts = vec![0.0; n];
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1.0;
        }
        WeightVector::new(counts)
    }))
}

/// A named weight-generating scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum WeightScheme {
    /// Leave-one-out over `subset`, or over every index when `None`.
    Loo { subset: Option<Vec<usize>> },
    Kfold { folds: usize },
    Kappa { kappa: usize, count: usize },
    Bootstrap { draws: usize },
}

pub type WeightStream = Box<dyn Iterator<Item = WeightVector> + Send>;

impl WeightScheme {
    pub fn generate(&self, n: usize, seed: u64) -> Result<WeightStream> {
        Ok(match self {
            WeightScheme::Loo { subset } => {
                let all: Vec<usize>;
                let idx = match subset {
                    Some(s) => s.as_slice(),
                    None => {
                        all = (0..n).collect();
                        &all
                    }
                };
                Box::new(loo_weights(n, idx)?)
            }
            WeightScheme::Kfold { folds } => Box::new(kfold_weights(n, *folds, seed)?),
            WeightScheme::Kappa { kappa, count } => {
                Box::new(leave_kappa_out_weights(n, *kappa, seed, *count)?)
            }
            WeightScheme::Bootstrap { draws } => Box::new(bootstrap_weights(n, *draws, seed)?),
        })
    }
}
