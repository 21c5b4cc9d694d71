//! Forward-mode automatic differentiation.
//!
//! Two scalar types live here:
//!
//! * [`TaylorScalar`] is a truncated univariate Taylor polynomial. Arithmetic
//!   is exact truncated-polynomial arithmetic and the elementary functions
//!   propagate coefficients by their standard recurrences.
//! * [`HyperDual`] carries one first-order infinitesimal per direction
//!   (`ε_i² = 0`, distinct tags commute). Its coefficients are indexed by
//!   subsets of the tag set, so the coefficient on the full set is the mixed
//!   directional derivative `∂^k f · v_1 ⋯ v_k`. This is the flattened form
//!   of nesting a first-order forward pass `k` times.
//!
//! Elementary functions on a [`HyperDual`] are evaluated as
//! `f(a₀ + n) = Σ_j f⁽ʲ⁾(a₀)/j! · nʲ` where `n` is the nilpotent part; the
//! coefficients `f⁽ʲ⁾(a₀)/j!` come from a [`TaylorScalar`] evaluation.
//!
//! Everything is pure; there is no tape.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{HoijError, Result};

/// Largest derivative order the engine supports.
pub const MAX_ORDER: usize = 6;

/// Scalar types the estimating equations are generic over.
pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    /// The primal value.
    fn value(&self) -> f64;
    fn scale(&self, c: f64) -> Self;
    fn add_const(&self, c: f64) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn powf(&self, p: f64) -> Self;
    /// Logistic function `1 / (1 + e^{-x})`.
    fn sigmoid(&self) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }
}

fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn add_const(&self, c: f64) -> Self {
        self + c
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    fn sigmoid(&self) -> Self {
        sigmoid_f64(*self)
    }
}

// ---------------------------------------------------------------------------
// TaylorScalar
// ---------------------------------------------------------------------------

/// Truncated Taylor polynomial `c₀ + c₁t + … + c_K t^K`.
///
/// Operands of different orders are combined at the smaller order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorScalar {
    coeffs: Vec<f64>,
}

impl TaylorScalar {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a Taylor polynomial needs at least c0");
        TaylorScalar { coeffs }
    }

    /// The independent variable `x₀ + t` truncated at `order`.
    pub fn variable(x0: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = x0;
        if order >= 1 {
            coeffs[1] = 1.0;
        }
        TaylorScalar { coeffs }
    }

    pub fn constant_of_order(c: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = c;
        TaylorScalar { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `k`-th derivative at the expansion point, `k! · c_k`.
    pub fn derivative(&self, k: usize) -> f64 {
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        self.coeffs.get(k).copied().unwrap_or(0.0) * fact
    }

    fn common_order(&self, other: &Self) -> usize {
        self.order().min(other.order())
    }

    fn recip(&self) -> Self {
        TaylorScalar::constant_of_order(1.0, self.order()) / self.clone()
    }
}

impl Add for TaylorScalar {
    type Output = TaylorScalar;
    fn add(self, rhs: Self) -> Self {
        let k = self.common_order(&rhs);
        TaylorScalar {
            coeffs: (0..=k).map(|i| self.coeffs[i] + rhs.coeffs[i]).collect(),
        }
    }
}

impl Sub for TaylorScalar {
    type Output = TaylorScalar;
    fn sub(self, rhs: Self) -> Self {
        let k = self.common_order(&rhs);
        TaylorScalar {
            coeffs: (0..=k).map(|i| self.coeffs[i] - rhs.coeffs[i]).collect(),
        }
    }
}

impl Neg for TaylorScalar {
    type Output = TaylorScalar;
    fn neg(self) -> Self {
        TaylorScalar {
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
        }
    }
}

impl Mul for TaylorScalar {
    type Output = TaylorScalar;
    fn mul(self, rhs: Self) -> Self {
        let k = self.common_order(&rhs);
        let coeffs = (0..=k)
            .map(|i| (0..=i).map(|j| self.coeffs[j] * rhs.coeffs[i - j]).sum())
            .collect();
        TaylorScalar { coeffs }
    }
}

impl Div for TaylorScalar {
    type Output = TaylorScalar;
    fn div(self, rhs: Self) -> Self {
        let k = self.common_order(&rhs);
        let b0 = rhs.coeffs[0];
        let mut c = vec![0.0; k + 1];
        for i in 0..=k {
            let mut acc = self.coeffs[i];
            for j in 1..=i {
                acc -= rhs.coeffs[j] * c[i - j];
            }
            c[i] = acc / b0;
        }
        TaylorScalar { coeffs: c }
    }
}

impl Scalar for TaylorScalar {
    fn constant(c: f64) -> Self {
        TaylorScalar { coeffs: vec![c] }
    }

    fn value(&self) -> f64 {
        self.coeffs[0]
    }

    fn scale(&self, c: f64) -> Self {
        TaylorScalar {
            coeffs: self.coeffs.iter().map(|x| x * c).collect(),
        }
    }

    fn add_const(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.coeffs[0] += c;
        out
    }

    fn exp(&self) -> Self {
        let a = &self.coeffs;
        let k = self.order();
        let mut e = vec![0.0; k + 1];
        e[0] = a[0].exp();
        for i in 1..=k {
            let s: f64 = (1..=i).map(|j| j as f64 * a[j] * e[i - j]).sum();
            e[i] = s / i as f64;
        }
        TaylorScalar { coeffs: e }
    }

    fn ln(&self) -> Self {
        let a = &self.coeffs;
        let k = self.order();
        let mut l = vec![0.0; k + 1];
        l[0] = a[0].ln();
        for i in 1..=k {
            let s: f64 = (1..i).map(|j| j as f64 * l[j] * a[i - j]).sum();
            l[i] = (a[i] - s / i as f64) / a[0];
        }
        TaylorScalar { coeffs: l }
    }

    fn powi(&self, n: i32) -> Self {
        let mut base = if n < 0 { self.recip() } else { self.clone() };
        let mut e = n.unsigned_abs();
        let mut acc = TaylorScalar::constant_of_order(1.0, self.order());
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            e >>= 1;
            if e > 0 {
                base = base.clone() * base;
            }
        }
        acc
    }

    fn powf(&self, r: f64) -> Self {
        let a = &self.coeffs;
        let k = self.order();
        let mut p = vec![0.0; k + 1];
        p[0] = a[0].powf(r);
        for i in 1..=k {
            let s: f64 = (1..=i)
                .map(|j| ((r + 1.0) * j as f64 - i as f64) * a[j] * p[i - j])
                .sum();
            p[i] = s / (i as f64 * a[0]);
        }
        TaylorScalar { coeffs: p }
    }

    fn sigmoid(&self) -> Self {
        let one = TaylorScalar::constant_of_order(1.0, self.order());
        if self.coeffs[0] >= 0.0 {
            one.clone() / (one + (-self.clone()).exp())
        } else {
            let e = self.exp();
            e.clone() / (one + e)
        }
    }
}

// ---------------------------------------------------------------------------
// HyperDual
// ---------------------------------------------------------------------------

/// Number with `k` distinct first-order infinitesimal tags.
///
/// `coeffs[S]` is the coefficient of `Π_{i∈S} ε_i` for the bitmask `S`.
/// A value with fewer tags embeds into one with more tags by zero padding,
/// so mixed-width arithmetic is well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperDual {
    coeffs: Vec<f64>,
}

impl HyperDual {
    pub fn constant_value(c: f64) -> Self {
        HyperDual { coeffs: vec![c] }
    }

    /// `x0 + Σ_i tangent[i] ε_i`.
    pub fn seeded(x0: f64, tangents: &[f64]) -> Self {
        let mut coeffs = vec![0.0; 1 << tangents.len()];
        coeffs[0] = x0;
        for (i, t) in tangents.iter().enumerate() {
            coeffs[1 << i] = *t;
        }
        HyperDual { coeffs }
    }

    pub fn n_tags(&self) -> usize {
        self.coeffs.len().trailing_zeros() as usize
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `ε_1 ⋯ ε_k` for `k` tags (zero when fewer tags are present).
    pub fn mixed_part(&self, k: usize) -> f64 {
        self.coeffs.get((1usize << k) - 1).copied().unwrap_or(0.0)
    }

    fn get(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    fn zip_with(&self, rhs: &Self, op: impl Fn(f64, f64) -> f64) -> Self {
        let len = self.coeffs.len().max(rhs.coeffs.len());
        HyperDual {
            coeffs: (0..len).map(|i| op(self.get(i), rhs.get(i))).collect(),
        }
    }

    fn nilpotent_part(&self) -> Self {
        let mut n = self.clone();
        n.coeffs[0] = 0.0;
        n
    }

    /// Applies `f` given its scaled derivatives `f⁽ʲ⁾(a₀)/j!` for `j = 0..=k`.
    fn compose(&self, taylor: &[f64]) -> Self {
        let n = self.nilpotent_part();
        let mut out = HyperDual::constant_value(taylor[taylor.len() - 1]);
        for c in taylor.iter().rev().skip(1) {
            out = (out * n.clone()).add_const(*c);
        }
        out
    }

    fn apply(&self, f: impl Fn(&TaylorScalar) -> TaylorScalar) -> Self {
        let k = self.n_tags();
        if k == 0 {
            let t = f(&TaylorScalar::constant_of_order(self.coeffs[0], 0));
            return HyperDual::constant_value(t.coeffs[0]);
        }
        let t = f(&TaylorScalar::variable(self.coeffs[0], k));
        self.compose(&t.coeffs)
    }
}

impl Add for HyperDual {
    type Output = HyperDual;
    fn add(self, rhs: Self) -> Self {
        if self.coeffs.len() >= rhs.coeffs.len() {
            let mut out = self;
            for (o, r) in out.coeffs.iter_mut().zip(&rhs.coeffs) {
                *o += r;
            }
            out
        } else {
            rhs + self
        }
    }
}

impl Sub for HyperDual {
    type Output = HyperDual;
    fn sub(self, rhs: Self) -> Self {
        self.zip_with(&rhs, |a, b| a - b)
    }
}

impl Neg for HyperDual {
    type Output = HyperDual;
    fn neg(self) -> Self {
        HyperDual {
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
        }
    }
}

impl Mul for HyperDual {
    type Output = HyperDual;
    fn mul(self, rhs: Self) -> Self {
        if rhs.coeffs.len() == 1 {
            return self.scale(rhs.coeffs[0]);
        }
        if self.coeffs.len() == 1 {
            return rhs.scale(self.coeffs[0]);
        }
        let len = self.coeffs.len().max(rhs.coeffs.len());
        let mut out = vec![0.0; len];
        for (s, slot) in out.iter_mut().enumerate() {
            // Sum over all splits of the tag set `s` into disjoint parts.
            let mut t = s;
            let mut acc = 0.0;
            loop {
                acc += self.get(t) * rhs.get(s & !t);
                if t == 0 {
                    break;
                }
                t = (t - 1) & s;
            }
            *slot = acc;
        }
        HyperDual { coeffs: out }
    }
}

impl Div for HyperDual {
    type Output = HyperDual;
    fn div(self, rhs: Self) -> Self {
        if rhs.coeffs.len() == 1 {
            return self.scale(1.0 / rhs.coeffs[0]);
        }
        let k = rhs.n_tags();
        let b0 = rhs.coeffs[0];
        // 1/(b0 + n) = Σ_j (-1)^j n^j / b0^{j+1}
        let mut series = Vec::with_capacity(k + 1);
        let mut term = 1.0 / b0;
        for _ in 0..=k {
            series.push(term);
            term *= -1.0 / b0;
        }
        self * rhs.compose(&series)
    }
}

impl Scalar for HyperDual {
    fn constant(c: f64) -> Self {
        HyperDual::constant_value(c)
    }
    fn value(&self) -> f64 {
        self.coeffs[0]
    }
    fn scale(&self, c: f64) -> Self {
        HyperDual {
            coeffs: self.coeffs.iter().map(|x| x * c).collect(),
        }
    }
    fn add_const(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.coeffs[0] += c;
        out
    }
    fn exp(&self) -> Self {
        self.apply(|t| t.exp())
    }
    fn ln(&self) -> Self {
        self.apply(|t| t.ln())
    }
    fn powi(&self, n: i32) -> Self {
        self.apply(|t| t.powi(n))
    }
    fn powf(&self, p: f64) -> Self {
        self.apply(|t| t.powf(p))
    }
    fn sigmoid(&self) -> Self {
        self.apply(|t| t.sigmoid())
    }
}

// ---------------------------------------------------------------------------
// Directional derivatives
// ---------------------------------------------------------------------------

/// Ordered directions `v_1, …, v_k` in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionBundle {
    dirs: Vec<Vec<f64>>,
}

impl DirectionBundle {
    pub fn new(dirs: Vec<Vec<f64>>) -> Result<Self> {
        if dirs.len() > MAX_ORDER {
            return Err(HoijError::OrderTooLarge {
                order: dirs.len(),
                max: MAX_ORDER,
            });
        }
        if let Some(first) = dirs.first() {
            let d = first.len();
            if let Some(bad) = dirs.iter().find(|v| v.len() != d) {
                return Err(HoijError::Dimension(format!(
                    "direction of length {} in a bundle of length-{d} directions",
                    bad.len()
                )));
            }
        }
        Ok(DirectionBundle { dirs })
    }

    pub fn empty() -> Self {
        DirectionBundle { dirs: Vec::new() }
    }

    pub fn order(&self) -> usize {
        self.dirs.len()
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.dirs
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        match self.dirs.first() {
            Some(v) if v.len() != d => Err(HoijError::Dimension(format!(
                "directions have length {}, parameter has length {d}",
                v.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Seeds `theta0` with one tag per direction.
    pub fn seed(&self, theta0: &[f64]) -> Vec<HyperDual> {
        let mut tangents = vec![0.0; self.dirs.len()];
        theta0
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                for (t, v) in tangents.iter_mut().zip(&self.dirs) {
                    *t = v[i];
                }
                HyperDual::seeded(x, &tangents)
            })
            .collect()
    }
}

/// Mixed directional derivative `∂^k f(θ₀) v_1 ⋯ v_k`.
///
/// With an empty bundle this is just `f(θ₀)`.
pub fn directional_derivative<F>(f: F, theta0: &[f64], dirs: &DirectionBundle) -> Result<Vec<f64>>
where
    F: Fn(&[HyperDual]) -> Vec<HyperDual>,
{
    dirs.check_dim(theta0.len())?;
    let k = dirs.order();
    let out: Vec<f64> = f(&dirs.seed(theta0))
        .iter()
        .map(|y| y.mixed_part(k))
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(HoijError::NonFiniteEvaluation(format!(
            "order-{k} directional derivative"
        )));
    }
    Ok(out)
}
