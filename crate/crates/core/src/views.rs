//! Multi-view adaptive graph and hypergraph construction.
//!
//! Four relational views: accident-spatial (fixed adjacency), accident-
//! temporal, POI, and road. The learned views score pairwise affinity as
//! `ReLU(Tanh(U Uᵀ))` and set-wise incidence as `ReLU(Tanh(U K))`, then
//! sparsify by top-k with hard zeros — pruned entries get no gradient.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

/// Relational perspective of the city.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Spatial,
    Temporal,
    Poi,
    Road,
}

impl View {
    pub const ALL: [View; 4] = [View::Spatial, View::Temporal, View::Poi, View::Road];

    /// Single-letter code used in exports and logs.
    pub fn code(self) -> &'static str {
        match self {
            View::Spatial => "S",
            View::Temporal => "T",
            View::Poi => "P",
            View::Road => "R",
        }
    }
}

/// Which axis of the incidence matrix the top-k cap applies to.
/// `Column` bounds hyperedge membership (the default); `Row` bounds how many
/// hyperedges a region joins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopkAxis {
    Column,
    Row,
}

/// Outcome of one top-k sparsification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopkReport {
    /// Rows (or columns) where a tie at the k-th value forced the
    /// deterministic lowest-index rule to drop an equal entry.
    pub groups_with_ties: usize,
    pub groups: usize,
    pub kept_max: usize,
}

impl TopkReport {
    pub fn tie_fraction(&self) -> f64 {
        if self.groups == 0 {
            0.0
        } else {
            self.groups_with_ties as f64 / self.groups as f64
        }
    }
}

/// Number of hyperedges for a city of `n` regions.
pub fn hyperedge_count(n_regions: usize, ratio: f64) -> usize {
    let raw = crate::fmath::round(ratio * n_regions as f64) as usize;
    raw.max(1)
}

fn topk_group(values: &[f64], stride: usize, len: usize, k: usize, mask: &mut [f64]) -> bool {
    // order by value desc, index asc; keep the first k
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| {
        values[b * stride]
            .total_cmp(&values[a * stride])
            .then(a.cmp(&b))
    });
    let k = k.min(len);
    for &i in order.iter().take(k) {
        mask[i * stride] = 1.0;
    }
    // a tie exists when the last kept value reappears among the dropped
    if k == 0 || k == len {
        return false;
    }
    let boundary = values[order[k - 1] * stride];
    values[order[k] * stride] == boundary
}

/// Row-wise top-k keep mask with deterministic tie-breaking.
pub fn topk_mask_rows(values: &Tensor, k: usize) -> (Tensor, TopkReport) {
    let (rows, cols) = (values.dims()[0], values.dims()[1]);
    let mut mask = Tensor::zeros(values.dims());
    let mut ties = 0usize;
    for r in 0..rows {
        let row = &values.data()[r * cols..(r + 1) * cols];
        let mrow = &mut mask.data_mut()[r * cols..(r + 1) * cols];
        if topk_group(row, 1, cols, k, mrow) {
            ties += 1;
        }
    }
    (
        mask,
        TopkReport {
            groups_with_ties: ties,
            groups: rows,
            kept_max: k.min(cols),
        },
    )
}

/// Column-wise top-k keep mask with deterministic tie-breaking.
pub fn topk_mask_cols(values: &Tensor, k: usize) -> (Tensor, TopkReport) {
    let (rows, cols) = (values.dims()[0], values.dims()[1]);
    let mut mask = Tensor::zeros(values.dims());
    let mut ties = 0usize;
    for c in 0..cols {
        if topk_group(
            &values.data()[c..],
            cols,
            rows,
            k,
            &mut mask.data_mut()[c..],
        ) {
            ties += 1;
        }
    }
    (
        mask,
        TopkReport {
            groups_with_ties: ties,
            groups: cols,
            kept_max: k.min(rows),
        },
    )
}

/// Learned pairwise affinity: `ReLU(Tanh(U Uᵀ))` row-sparsified to `k`
/// entries. Returns the masked tape node plus the tie report.
pub fn build_pairwise_graph(tape: &mut Tape, u: Var, k: usize) -> (Var, TopkReport) {
    let ut = tape.permute(u, &[1, 0]);
    let scores = tape.matmul(u, ut);
    let th = tape.tanh(scores);
    let affinity = tape.relu(th);
    let (mask, report) = topk_mask_rows(tape.value(affinity), k);
    let mask = tape.constant(mask);
    let masked = tape.mul(affinity, mask);
    (masked, report)
}

/// Learned incidence: `ReLU(Tanh(U K))` sparsified along the configured axis.
pub fn build_hypergraph(
    tape: &mut Tape,
    u: Var,
    basis: Var,
    k_members: usize,
    axis: TopkAxis,
) -> (Var, TopkReport) {
    let scores = tape.matmul(u, basis);
    let th = tape.tanh(scores);
    let incidence = tape.relu(th);
    let (mask, report) = match axis {
        TopkAxis::Column => topk_mask_cols(tape.value(incidence), k_members),
        TopkAxis::Row => topk_mask_rows(tape.value(incidence), k_members),
    };
    let mask = tape.constant(mask);
    let masked = tape.mul(incidence, mask);
    (masked, report)
}

/// Symmetric degree normalization `D̃^{-1/2}(A+I)D̃^{-1/2}` with D̃ the row
/// degree of A+I; isolated nodes reduce to pure self-loops.
pub fn normalize_pairwise(tape: &mut Tape, a: Var) -> Var {
    let n = tape.value(a).dims()[0];
    let eye = tape.constant(Tensor::eye(n));
    let ai = tape.add(a, eye);
    let deg = tape.sum_axis(ai, 1);
    let scale = tape.rsqrt0(deg);
    let left = tape.row_scale(ai, scale);
    let leftt = tape.permute(left, &[1, 0]);
    let both = tape.row_scale(leftt, scale);
    tape.permute(both, &[1, 0])
}

/// Structure facts gathered on every forward pass; the training loop fails
/// the run if a bound is violated.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewStructure {
    pub view: View,
    /// Max nonzeros in a row of the (masked) pairwise affinity.
    pub pairwise_max_row_nnz: usize,
    pub pairwise_cap: usize,
    pub pairwise_in_range: bool,
    pub pairwise_tie_fraction: f64,
    /// Max nonzeros along the capped incidence axis, when the hypergraph
    /// path is enabled.
    pub hyper_max_group_nnz: Option<usize>,
    pub hyper_cap: usize,
    pub hyper_in_range: bool,
    pub hyper_zero_columns: usize,
}

impl ViewStructure {
    pub fn ok(&self) -> bool {
        self.pairwise_max_row_nnz <= self.pairwise_cap
            && self.pairwise_in_range
            && self.hyper_in_range
            && self.hyper_max_group_nnz.map_or(true, |m| m <= self.hyper_cap)
    }
}

pub fn max_row_nnz(t: &Tensor) -> usize {
    let (rows, cols) = (t.dims()[0], t.dims()[1]);
    (0..rows)
        .map(|r| {
            t.data()[r * cols..(r + 1) * cols]
                .iter()
                .filter(|&&v| v != 0.0)
                .count()
        })
        .max()
        .unwrap_or(0)
}

pub fn max_col_nnz(t: &Tensor) -> usize {
    let (rows, cols) = (t.dims()[0], t.dims()[1]);
    (0..cols)
        .map(|c| (0..rows).filter(|&r| t.data()[r * cols + c] != 0.0).count())
        .max()
        .unwrap_or(0)
}

pub fn zero_col_count(t: &Tensor) -> usize {
    let (rows, cols) = (t.dims()[0], t.dims()[1]);
    (0..cols)
        .filter(|&c| (0..rows).all(|r| t.data()[r * cols + c] == 0.0))
        .count()
}

pub fn in_unit_range(t: &Tensor) -> bool {
    t.data().iter().all(|&v| (0.0..=1.0).contains(&v))
}
