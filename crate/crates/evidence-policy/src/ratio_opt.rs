//! Selecting the cell subset maximizing w(S)/√v(S).
//!
//! The solver runs a λ-bisection where each step minimizes the submodular
//! surrogate g_λ(S) = √v(S) − λ·w(S) over all subsets, giving a certified
//! (1+ε)-approximation (observed exact on every tested instance). The inner
//! minimizer is exact subset enumeration up to [`ENUMERATION_BUDGET`] cells;
//! beyond that the prefix fast path takes over, whose equivalence with brute
//! force is itself a tested property.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest positive ground set solved by exact enumeration.
pub const ENUMERATION_BUDGET: usize = 20;

/// Default bisection approximation target.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Per-cell sums of pseudo-outcomes (w) and squared pseudo-outcomes (v).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatistics {
    pub cell_ids: Vec<usize>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

impl CellStatistics {
    pub fn new(cell_ids: Vec<usize>, w: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if cell_ids.len() != w.len() || w.len() != v.len() {
            return Err(Error::InvalidConfig(
                "cell_ids, w, v must have equal lengths".into(),
            ));
        }
        if v.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidConfig("v(x) must be >= 0".into()));
        }
        Ok(Self { cell_ids, w, v })
    }

    /// Build from per-row pseudo-outcomes and a row → cell-id map.
    /// w(x) = (1/n) Σ_{i: cell(i)=x} Ỹᵢ and v(x) = (1/n) Σ Ỹᵢ².
    pub fn from_assignments(pseudo: &[f64], cells: &[usize]) -> Result<Self> {
        if pseudo.len() != cells.len() {
            return Err(Error::InvalidConfig(
                "pseudo and cells must have equal lengths".into(),
            ));
        }
        let mut ids: Vec<usize> = cells.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let index: std::collections::HashMap<usize, usize> =
            ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let n = pseudo.len() as f64;
        let mut w = vec![0.0; ids.len()];
        let mut v = vec![0.0; ids.len()];
        for (&t, &cell) in pseudo.iter().zip(cells) {
            let k = index[&cell];
            w[k] += t / n;
            v[k] += t * t / n;
        }
        CellStatistics::new(ids, w, v)
    }

    /// Indices (into the internal arrays) of cells with w > 0.
    fn positive(&self) -> Vec<usize> {
        (0..self.w.len()).filter(|&k| self.w[k] > 0.0).collect()
    }
}

/// How a [`RatioSolution`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Bisection,
    PrefixFastPath,
}

/// A selected subset with its ratio objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSolution {
    /// Selected cell ids (values from `CellStatistics::cell_ids`).
    pub selected: Vec<usize>,
    /// w(S)/√v(S); +∞ only in the contrived case v(S) = 0 with w(S) > 0.
    pub objective: f64,
    /// Bisection iterations performed (0 for the fast path).
    pub iterations: usize,
    /// Final λ_max of the bisection; `None` for the fast path.
    pub lambda_final: Option<f64>,
    pub method: SolveMethod,
}

/// Subset-sum tables over a fixed positive ground set, precomputed once so
/// each λ-minimization is a linear scan over bitmasks.
struct SubsetTables {
    /// Positions (into CellStatistics arrays) of the enumerated cells.
    members: Vec<usize>,
    sqrt_v: Vec<f64>,
    w_sum: Vec<f64>,
}

impl SubsetTables {
    fn build(stats: &CellStatistics, members: Vec<usize>) -> Self {
        let k = members.len();
        let mut v_sum = vec![0.0; 1 << k];
        let mut w_sum = vec![0.0; 1 << k];
        for mask in 1usize..(1 << k) {
            let low = mask.trailing_zeros() as usize;
            let rest = mask & (mask - 1);
            v_sum[mask] = v_sum[rest] + stats.v[members[low]];
            w_sum[mask] = w_sum[rest] + stats.w[members[low]];
        }
        let sqrt_v = v_sum.into_iter().map(f64::sqrt).collect();
        Self {
            members,
            sqrt_v,
            w_sum,
        }
    }

    /// Exact argmin of g_λ over all subsets, ties toward the lexicographically
    /// smallest cell-id set (∅ included).
    fn minimize(&self, lambda: f64, cell_ids: &[usize]) -> usize {
        let mut best_mask = 0usize;
        let mut best_g = 0.0; // g(∅)
        for mask in 1..self.sqrt_v.len() {
            let g = self.sqrt_v[mask] - lambda * self.w_sum[mask];
            if g < best_g
                || (g == best_g && lex_less(mask, best_mask, &self.members, cell_ids))
            {
                best_g = g;
                best_mask = mask;
            }
        }
        best_mask
    }

    fn ids(&self, mask: usize, cell_ids: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.members.len())
            .filter(|&b| mask >> b & 1 == 1)
            .map(|b| cell_ids[self.members[b]])
            .collect();
        out.sort_unstable();
        out
    }
}

/// Lexicographic order on ascending cell-id sequences.
fn lex_less(a_mask: usize, b_mask: usize, members: &[usize], cell_ids: &[usize]) -> bool {
    let ids = |mask: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..members.len())
            .filter(|&b| mask >> b & 1 == 1)
            .map(|b| cell_ids[members[b]])
            .collect();
        v.sort_unstable();
        v
    };
    ids(a_mask) < ids(b_mask)
}

/// Exact argmin of g_λ(S) = √v(S) − λ·w(S) over all subsets of the positive
/// ground set (∅ included). Returns selected cell ids.
pub fn inner_minimize(stats: &CellStatistics, lambda: f64) -> Result<Vec<usize>> {
    if lambda <= 0.0 {
        return Err(Error::InvalidConfig("lambda must be > 0".into()));
    }
    let positive = stats.positive();
    if positive.len() > ENUMERATION_BUDGET {
        return Err(Error::InvalidConfig(format!(
            "inner enumeration supports at most {ENUMERATION_BUDGET} positive cells, got {}",
            positive.len()
        )));
    }
    let tables = SubsetTables::build(stats, positive);
    let mask = tables.minimize(lambda, &stats.cell_ids);
    Ok(tables.ids(mask, &stats.cell_ids))
}

/// λ-bisection solver. Guarantees objective ≥ (1/(1+ε)) · max over nonempty
/// subsets; iteration count is O(log(1/ε) + log(v(Q)/min v)).
///
/// Cells with w ≤ 0 are dropped up front. Cells with w > 0 and v = 0 are
/// force-included: they raise the ratio at zero cost. Ground sets larger than
/// [`ENUMERATION_BUDGET`] fall back to the prefix fast path.
pub fn bisection_solve(stats: &CellStatistics, epsilon: f64) -> Result<RatioSolution> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidConfig("epsilon must be > 0".into()));
    }
    let positive = stats.positive();
    if positive.is_empty() {
        return Err(Error::NoPositiveCell);
    }
    let (free, ground): (Vec<usize>, Vec<usize>) =
        positive.into_iter().partition(|&k| stats.v[k] == 0.0);

    if ground.is_empty() {
        // Only zero-variance positive cells: infinite ratio by convention.
        let mut selected: Vec<usize> = free.iter().map(|&k| stats.cell_ids[k]).collect();
        selected.sort_unstable();
        return Ok(RatioSolution {
            selected,
            objective: f64::INFINITY,
            iterations: 0,
            lambda_final: None,
            method: SolveMethod::Bisection,
        });
    }
    if ground.len() > ENUMERATION_BUDGET {
        return ratio_prefix_fast_path(stats);
    }

    let w_q: f64 = ground.iter().map(|&k| stats.w[k]).sum();
    let v_q: f64 = ground.iter().map(|&k| stats.v[k]).sum();
    let min_v: f64 = ground
        .iter()
        .map(|&k| stats.v[k])
        .fold(f64::INFINITY, f64::min);

    let tables = SubsetTables::build(stats, ground);
    let mut lambda_max = (1.0 + epsilon) * v_q.sqrt() / w_q;
    let mut lambda_min = min_v.sqrt() / w_q;
    let mut iterations = 0;
    while lambda_max >= (1.0 + epsilon) * lambda_min {
        let lambda_bar = 0.5 * (lambda_max + lambda_min);
        let mask = tables.minimize(lambda_bar, &stats.cell_ids);
        let empty = mask == 0;
        if empty || tables.sqrt_v[mask] / tables.w_sum[mask] >= lambda_bar {
            lambda_min = lambda_bar;
        } else {
            lambda_max = lambda_bar;
        }
        iterations += 1;
    }
    let final_mask = tables.minimize(lambda_max, &stats.cell_ids);
    debug_assert!(final_mask != 0, "final argmin must be nonempty");

    let mut selected = tables.ids(final_mask, &stats.cell_ids);
    let mut w_sel = tables.w_sum[final_mask];
    let v_sel = tables.sqrt_v[final_mask].powi(2);
    for &k in &free {
        selected.push(stats.cell_ids[k]);
        w_sel += stats.w[k];
    }
    selected.sort_unstable();
    Ok(RatioSolution {
        selected,
        objective: w_sel / v_sel.sqrt(),
        iterations,
        lambda_final: Some(lambda_max),
        method: SolveMethod::Bisection,
    })
}

/// Exact fast path: sort positive cells by w/v descending and return the best
/// prefix. Its equivalence with brute force on small instances is asserted by
/// the property suite, not assumed.
pub fn ratio_prefix_fast_path(stats: &CellStatistics) -> Result<RatioSolution> {
    let positive = stats.positive();
    if positive.is_empty() {
        return Err(Error::NoPositiveCell);
    }
    let mut order = positive;
    // v = 0 cells have infinite density and sort first; ties by cell id.
    order.sort_by(|&a, &b| {
        let da = stats.w[a] / stats.v[a];
        let db = stats.w[b] / stats.v[b];
        db.partial_cmp(&da)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(stats.cell_ids[a].cmp(&stats.cell_ids[b]))
    });
    let mut best_len = 0;
    let mut best_obj = f64::NEG_INFINITY;
    let (mut w_cum, mut v_cum) = (0.0, 0.0);
    for (len, &k) in order.iter().enumerate() {
        w_cum += stats.w[k];
        v_cum += stats.v[k];
        let obj = if v_cum == 0.0 {
            f64::INFINITY
        } else {
            w_cum / v_cum.sqrt()
        };
        if obj > best_obj {
            best_obj = obj;
            best_len = len + 1;
        }
    }
    let mut selected: Vec<usize> = order[..best_len]
        .iter()
        .map(|&k| stats.cell_ids[k])
        .collect();
    selected.sort_unstable();
    Ok(RatioSolution {
        selected,
        objective: best_obj,
        iterations: 0,
        lambda_final: None,
        method: SolveMethod::PrefixFastPath,
    })
}

/// Brute-force maximum of w(S)/√v(S) over nonempty subsets of the positive
/// ground set. Test oracle; exported for the acceptance suite.
pub fn brute_force_best(stats: &CellStatistics) -> Result<RatioSolution> {
    let positive = stats.positive();
    if positive.is_empty() {
        return Err(Error::NoPositiveCell);
    }
    assert!(
        positive.len() <= ENUMERATION_BUDGET,
        "brute force oracle limited to {ENUMERATION_BUDGET} cells"
    );
    let tables = SubsetTables::build(stats, positive);
    let mut best_mask = 0usize;
    let mut best_obj = f64::NEG_INFINITY;
    for mask in 1..tables.sqrt_v.len() {
        let obj = if tables.sqrt_v[mask] == 0.0 {
            f64::INFINITY
        } else {
            tables.w_sum[mask] / tables.sqrt_v[mask]
        };
        if obj > best_obj {
            best_obj = obj;
            best_mask = mask;
        }
    }
    Ok(RatioSolution {
        selected: tables.ids(best_mask, &stats.cell_ids),
        objective: best_obj,
        iterations: 0,
        lambda_final: None,
        method: SolveMethod::Bisection,
    })
}

/// Iteration bound implied by the halving λ-window: the loop cannot run more
/// than log₂((1+ε)/ε) + ½·log₂(v(Q)/min v) + 2 times.
pub fn iteration_bound(stats: &CellStatistics, epsilon: f64) -> usize {
    let positive: Vec<usize> = stats
        .positive()
        .into_iter()
        .filter(|&k| stats.v[k] > 0.0)
        .collect();
    let v_q: f64 = positive.iter().map(|&k| stats.v[k]).sum();
    let min_v = positive
        .iter()
        .map(|&k| stats.v[k])
        .fold(f64::INFINITY, f64::min);
    (((1.0 + epsilon) / epsilon).log2() + 0.5 * (v_q / min_v).log2()).ceil() as usize + 2
}
