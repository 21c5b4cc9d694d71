//! Problem-independent tables of derivative terms.
//!
//! A term `(a, 𝒦, ω)` stands for `a · G^{(|𝒦|)} Π_{j∈𝒦} dθʲ`, where the
//! `G`-derivative is additionally differentiated once in the weights when
//! `ω = 1`. Differentiating such a term along `Δw` by the product rule gives
//!
//! * one term per element `j ∈ 𝒦` with `j` replaced by `j + 1`,
//! * one term with `1` adjoined to `𝒦` (the `θ` argument of `G`),
//! * when `ω = 0`, one term with `ω = 1` (the weight argument of `G`).
//!
//! The `k`-th weight derivative of `G(θ̂(w), w) ≡ 0` is `(1, {k}, 0)` plus the
//! table `Θ_k`; solving for `dθ^k` gives `dθ^k = −H⁻¹ Σ_{Θ_k} a · term`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::ad::MAX_ORDER;
use crate::error::{HoijError, Result};

/// Default cap on the number of terms in any single order.
pub const DEFAULT_TERM_CAP: usize = 100_000;

/// One `(a, 𝒦, ω)` tuple. `kset` is kept sorted in descending order so that
/// structural equality identifies terms that differ only in factor order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DerivativeTerm {
    #[serde(rename = "a")]
    pub coeff: u64,
    pub kset: Vec<usize>,
    pub omega: u8,
}

impl DerivativeTerm {
    pub fn new(coeff: u64, mut kset: Vec<usize>, omega: u8) -> Self {
        kset.sort_unstable_by(|a, b| b.cmp(a));
        DerivativeTerm { coeff, kset, omega }
    }

    /// `ω + Σ𝒦`, the number of `Δw` derivatives the term carries.
    pub fn total_order(&self) -> usize {
        self.omega as usize + self.kset.iter().sum::<usize>()
    }

    fn key(&self) -> (u8, std::cmp::Reverse<usize>, Vec<usize>) {
        (self.omega, std::cmp::Reverse(self.kset.len()), self.kset.clone())
    }
}

/// Sums coefficients of structurally equal terms; output order is canonical.
fn merge(terms: impl IntoIterator<Item = DerivativeTerm>) -> Vec<DerivativeTerm> {
    let mut acc: BTreeMap<_, (Vec<usize>, u8, u64)> = BTreeMap::new();
    for t in terms {
        let entry = acc.entry(t.key()).or_insert((t.kset.clone(), t.omega, 0));
        entry.2 += t.coeff;
    }
    acc.into_values()
        .map(|(kset, omega, coeff)| DerivativeTerm { coeff, kset, omega })
        .collect()
}

/// Directional derivative of a term along `Δw`, merged.
pub fn differentiate_term(t: &DerivativeTerm) -> Vec<DerivativeTerm> {
    let mut out = Vec::with_capacity(t.kset.len() + 2);
    for i in 0..t.kset.len() {
        let mut kset = t.kset.clone();
        kset[i] += 1;
        out.push(DerivativeTerm::new(t.coeff, kset, t.omega));
    }
    let mut grown = t.kset.clone();
    grown.push(1);
    out.push(DerivativeTerm::new(t.coeff, grown, t.omega));
    if t.omega == 0 {
        out.push(DerivativeTerm::new(t.coeff, t.kset.clone(), 1));
    }
    merge(out)
}

/// `Θ_1, …, Θ_K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermTable {
    orders: Vec<Vec<DerivativeTerm>>,
}

impl TermTable {
    /// Builds a table from explicit per-order lists (used for diagnostics).
    pub fn from_orders(orders: Vec<Vec<DerivativeTerm>>) -> Self {
        TermTable { orders }
    }

    pub fn max_order(&self) -> usize {
        self.orders.len()
    }

    /// `Θ_k` for `1 ≤ k ≤ max_order`.
    pub fn order(&self, k: usize) -> &[DerivativeTerm] {
        &self.orders[k - 1]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.orders.iter().map(Vec::len).collect()
    }

    /// The first `k` orders.
    pub fn truncated(&self, k: usize) -> TermTable {
        TermTable {
            orders: self.orders[..k.min(self.orders.len())].to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[DerivativeTerm])> {
        self.orders.iter().enumerate().map(|(i, t)| (i + 1, t.as_slice()))
    }
}

pub fn build_term_tables(max_order: usize) -> Result<TermTable> {
    build_term_tables_with_cap(max_order, DEFAULT_TERM_CAP)
}

pub fn build_term_tables_with_cap(max_order: usize, cap: usize) -> Result<TermTable> {
    if max_order == 0 || max_order > MAX_ORDER {
        return Err(HoijError::OrderTooLarge {
            order: max_order,
            max: MAX_ORDER,
        });
    }
    let mut orders = vec![vec![DerivativeTerm::new(1, vec![], 1)]];
    for k in 1..max_order {
        let mut full = orders[k - 1].clone();
        full.push(DerivativeTerm::new(1, vec![k], 0));
        let next = merge(full.iter().flat_map(differentiate_term));
        let solved = DerivativeTerm::new(1, vec![k + 1], 0);
        let before = next.len();
        let next: Vec<_> = next.into_iter().filter(|t| *t != solved).collect();
        debug_assert_eq!(before, next.len() + 1, "solved-for term must appear once");
        if next.len() > cap {
            return Err(HoijError::TermTableTooLarge { order: k + 1, cap });
        }
        orders.push(next);
    }
    Ok(TermTable { orders })
}

/// Process-wide table through [`MAX_ORDER`], built on first use.
pub fn cached_term_table() -> &'static TermTable {
    static TABLE: OnceLock<TermTable> = OnceLock::new();
    TABLE.get_or_init(|| build_term_tables(MAX_ORDER).expect("default table fits under the cap"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermViolation {
    pub order: usize,
    pub term: DerivativeTerm,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableReport {
    pub passed: bool,
    pub checked: usize,
    pub violations: Vec<TermViolation>,
}

/// Checks `max(𝒦) < k`, `ω + Σ𝒦 = k`, positive coefficients and uniqueness
/// of `(𝒦, ω)` within each order.
pub fn verify_table_invariants(table: &TermTable) -> TableReport {
    let mut violations = Vec::new();
    let mut checked = 0;
    for (k, terms) in table.iter() {
        let mut seen = std::collections::HashSet::new();
        for t in terms {
            checked += 1;
            let mut fail = |reason: String| {
                violations.push(TermViolation {
                    order: k,
                    term: t.clone(),
                    reason,
                })
            };
            if let Some(&m) = t.kset.iter().max() {
                if m >= k {
                    fail(format!("max(K) = {m} is not below the order {k}"));
                }
            }
            if t.total_order() != k {
                fail(format!(
                    "omega + sum(K) = {} differs from the order {k}",
                    t.total_order()
                ));
            }
            if t.omega > 1 {
                fail(format!("omega = {} is not 0 or 1", t.omega));
            }
            if t.coeff == 0 {
                fail("zero coefficient".into());
            }
            if t.kset.contains(&0) {
                fail("K contains a zero".into());
            }
            if t.kset.windows(2).any(|w| w[0] < w[1]) {
                fail("K is not in canonical descending order".into());
            }
            if !seen.insert((t.kset.clone(), t.omega)) {
                fail("duplicate (K, omega) pair".into());
            }
        }
    }
    TableReport {
        passed: violations.is_empty(),
        checked,
        violations,
    }
}
