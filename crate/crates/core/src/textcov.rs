//! N-gram type coverage of a target text domain, and greedy selection of
//! synthesis texts that cover it.
//!
//! Coverage at order `n` is the fraction of distinct target n-grams that
//! also occur somewhere in the pool. The combined score is a weighted sum
//! over orders with weights normalized to one. Orders for which the target
//! has no n-grams at all (texts shorter than `n`) are left out of the sum
//! and the remaining weights renormalized. No boundary padding is used.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orders and per-order weights for coverage scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSpec {
    pub orders: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Default for CoverageSpec {
    fn default() -> Self {
        Self {
            orders: vec![1, 2],
            weights: vec![0.5, 0.5],
        }
    }
}

impl CoverageSpec {
    pub fn new(orders: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let spec = Self { orders, weights };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.orders.is_empty() {
            return Err(Error::InvalidCoverage("no n-gram orders given".into()));
        }
        if self.orders.len() != self.weights.len() {
            return Err(Error::InvalidCoverage(format!(
                "{} orders but {} weights",
                self.orders.len(),
                self.weights.len()
            )));
        }
        if self.orders.iter().any(|&n| n == 0) {
            return Err(Error::InvalidCoverage("n-gram order must be >= 1".into()));
        }
        let distinct: HashSet<_> = self.orders.iter().collect();
        if distinct.len() != self.orders.len() {
            return Err(Error::InvalidCoverage("duplicate n-gram order".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidCoverage("weights must be positive".into()));
        }
        Ok(())
    }

    /// Weights scaled to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub per_order: BTreeMap<usize, f64>,
    pub combined: f64,
    pub target_ngram_count: BTreeMap<usize, usize>,
}

impl CoverageReport {
    /// `{"per_order": {"1": r1, ...}, "combined": c}` as emitted by the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        let per_order: serde_json::Map<String, serde_json::Value> = self
            .per_order
            .iter()
            .map(|(n, r)| (n.to_string(), serde_json::Value::from(*r)))
            .collect();
        serde_json::json!({ "per_order": per_order, "combined": self.combined })
    }
}

/// Normalized weights with orders absent from `target` zeroed out. When no
/// order has target n-grams, every order counts as fully covered.
fn effective_weights<T: AsRef<[String]>>(spec: &CoverageSpec, target: &[T]) -> Vec<f64> {
    let raw: Vec<f64> = spec
        .orders
        .iter()
        .zip(&spec.weights)
        .map(|(&n, &w)| if target.iter().any(|t| t.as_ref().len() >= n) { w } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        spec.normalized_weights()
    }
}

fn ngram_set<'a, S: AsRef<[String]>>(texts: &'a [S], n: usize) -> HashSet<&'a [String]> {
    texts
        .iter()
        .flat_map(|t| t.as_ref().windows(n))
        .collect()
}

pub fn ngram_coverage<S: AsRef<[String]>, T: AsRef<[String]>>(
    pool: &[S],
    target: &[T],
    spec: &CoverageSpec,
) -> Result<CoverageReport> {
    spec.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let weights = effective_weights(spec, target);
    let mut per_order = BTreeMap::new();
    let mut target_ngram_count = BTreeMap::new();
    let mut combined = 0.0;
    for (&n, w) in spec.orders.iter().zip(&weights) {
        let wanted = ngram_set(target, n);
        let have = ngram_set(pool, n);
        let ratio = if wanted.is_empty() {
            1.0
        } else {
            wanted.iter().filter(|g| have.contains(*g)).count() as f64 / wanted.len() as f64
        };
        per_order.insert(n, ratio);
        target_ngram_count.insert(n, wanted.len());
        combined += w * ratio;
    }
    Ok(CoverageReport {
        per_order,
        combined,
        target_ngram_count,
    })
}

/// Greedy budgeted selection maximizing combined coverage of `target`.
///
/// Each round picks the candidate with the largest marginal gain, lowest
/// index on ties, and stops early once no candidate adds anything. Indices
/// are returned in selection order.
pub fn select_covering_set<S: AsRef<[String]>, T: AsRef<[String]>>(
    candidates: &[S],
    target: &[T],
    budget: usize,
    spec: &CoverageSpec,
) -> Result<Vec<usize>> {
    spec.validate()?;
    if candidates.is_empty() {
        return Err(Error::EmptyPool);
    }
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if budget == 0 {
        return Err(Error::InvalidCoverage("budget must be >= 1".into()));
    }
    let weights = effective_weights(spec, target);

    // Per order: target n-gram -> dense id, and each candidate's covered ids.
    let mut scale = Vec::with_capacity(spec.orders.len());
    let mut cand_sets: Vec<Vec<Vec<usize>>> = vec![Vec::new(); candidates.len()];
    for (&n, w) in spec.orders.iter().zip(&weights) {
        let ids: HashMap<&[String], usize> = ngram_set(target, n)
            .into_iter()
            .enumerate()
            .map(|(i, g)| (g, i))
            .collect();
        scale.push(if ids.is_empty() { 0.0 } else { w / ids.len() as f64 });
        for (c, cand) in candidates.iter().enumerate() {
            let mut covered: Vec<usize> = cand
                .as_ref()
                .windows(n)
                .filter_map(|g| ids.get(g).copied())
                .collect();
            covered.sort_unstable();
            covered.dedup();
            cand_sets[c].push(covered);
        }
    }

    let mut covered: Vec<HashSet<usize>> = vec![HashSet::new(); spec.orders.len()];
    let mut chosen = vec![false; candidates.len()];
    let mut selected = Vec::new();
    while selected.len() < budget {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..candidates.len() {
            if chosen[c] {
                continue;
            }
            let mut new_total = 0usize;
            let mut gain = 0.0;
            for (k, ids) in cand_sets[c].iter().enumerate() {
                let fresh = ids.iter().filter(|i| !covered[k].contains(i)).count();
                new_total += fresh;
                gain += scale[k] * fresh as f64;
            }
            if new_total == 0 {
                continue;
            }
            // Strictly better by more than rounding noise, else keep lower index.
            if best.map_or(true, |(_, g)| gain > g + 1e-12) {
                best = Some((c, gain));
            }
        }
        let Some((c, _)) = best else { break };
        chosen[c] = true;
        for (k, ids) in cand_sets[c].iter().enumerate() {
            covered[k].extend(ids.iter().copied());
        }
        selected.push(c);
    }
    Ok(selected)
}
