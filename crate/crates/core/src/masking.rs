//! Row-wise Top-K and grouped a:b Top-K channel masks over a gate matrix,
//! plus gather/scatter between dense-masked and compact layouts.
//!
//! Masks are stored as sorted per-row index lists rather than bitmaps, so a
//! mask costs exactly one index per kept channel — the same costing the
//! memory model applies to it.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

use crate::linalg::{silu, Matrix};
use crate::Error;

/// Score used to rank the channels of a row before keeping the top ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Rank by the raw gate value. The training default: large positive gate
    /// values survive SiLU, strongly negative ones are suppressed anyway.
    PreSiluValue,
    /// Rank by SiLU(gate value).
    PostSiluValue,
    /// Rank by |SiLU(gate value)|. The grouped embedding equivalence holds
    /// exactly under this criterion only.
    AbsSiluOutput,
}

impl Criterion {
    #[inline]
    pub fn score(self, g: f64) -> f64 {
        match self {
            Criterion::PreSiluValue => g,
            Criterion::PostSiluValue => silu(g),
            Criterion::AbsSiluOutput => silu(g).abs(),
        }
    }
}

/// Per-row selected-channel index sets produced by (grouped) Top-K.
///
/// Invariants: indices strictly increasing inside each row; ungrouped masks
/// keep exactly `per_row` indices in every row; grouped `a:b` masks keep
/// exactly `a` indices in every contiguous block of `b` channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    rows: usize,
    total_channels: usize,
    per_row: usize,
    selected: Vec<Vec<usize>>,
    criterion: Criterion,
    group: Option<(usize, usize)>,
}

impl ChannelMask {
    /// Validate and build a mask from explicit index lists.
    pub fn new(
        total_channels: usize,
        selected: Vec<Vec<usize>>,
        criterion: Criterion,
        group: Option<(usize, usize)>,
    ) -> Result<Self, Error> {
        let rows = selected.len();
        let per_row = match group {
            Some((a, b)) => {
                if b == 0 || a > b {
                    return Err(Error::config(format!("invalid group {a}:{b}")));
                }
                if !total_channels.is_multiple_of(b) {
                    return Err(Error::config(format!(
                        "block size {b} does not divide {total_channels} channels"
                    )));
                }
                a * (total_channels / b)
            }
            None => selected.first().map_or(0, Vec::len),
        };
        for (i, row) in selected.iter().enumerate() {
            if row.len() != per_row {
                return Err(Error::config(format!(
                    "row {i} keeps {} indices, expected {per_row}",
                    row.len()
                )));
            }
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::config(format!(
                        "row {i} indices not strictly increasing"
                    )));
                }
            }
            if row.last().is_some_and(|&j| j >= total_channels) {
                return Err(Error::config(format!("row {i} index out of range")));
            }
            if let Some((a, b)) = group {
                for block in 0..total_channels / b {
                    let lo = block * b;
                    let hi = lo + b;
                    let in_block = row.iter().filter(|&&j| j >= lo && j < hi).count();
                    if in_block != a {
                        return Err(Error::config(format!(
                            "row {i} block {block} keeps {in_block} indices, expected {a}"
                        )));
                    }
                }
            }
        }
        Ok(ChannelMask {
            rows,
            total_channels,
            per_row,
            selected,
            criterion,
            group,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn total_channels(&self) -> usize {
        self.total_channels
    }

    /// Number of kept channels per row (uniform across rows).
    pub fn per_row(&self) -> usize {
        self.per_row
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    pub fn group(&self) -> Option<(usize, usize)> {
        self.group
    }

    pub fn selected_row(&self, i: usize) -> &[usize] {
        &self.selected[i]
    }

    /// Total number of stored indices (rows × per_row).
    pub fn index_count(&self) -> usize {
        self.rows * self.per_row
    }

    /// Compact view: row i of the output holds X[i][j] for each kept j,
    /// in index order.
    pub fn gather(&self, x: &Matrix) -> Result<Matrix, Error> {
        if x.rows() != self.rows || x.cols() != self.total_channels {
            return Err(Error::shape(
                "mask_gather",
                x.shape(),
                (self.rows, self.total_channels),
            ));
        }
        let mut out = Matrix::zeros(self.rows, self.per_row);
        for i in 0..self.rows {
            for (slot, &j) in self.selected[i].iter().enumerate() {
                out.set(i, slot, x.get(i, j));
            }
        }
        Ok(out)
    }

    /// Dense view of a compact matrix: zeros everywhere except kept
    /// positions, which receive the compact entries.
    pub fn scatter(&self, compact: &Matrix) -> Result<Matrix, Error> {
        if compact.rows() != self.rows || compact.cols() != self.per_row {
            return Err(Error::shape(
                "mask_scatter",
                compact.shape(),
                (self.rows, self.per_row),
            ));
        }
        let mut out = Matrix::zeros(self.rows, self.total_channels);
        for i in 0..self.rows {
            for (slot, &j) in self.selected[i].iter().enumerate() {
                out.set(i, j, compact.get(i, slot));
            }
        }
        Ok(out)
    }

    /// Dense 0/1 matrix with ones at kept positions.
    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.total_channels);
        for i in 0..self.rows {
            for &j in &self.selected[i] {
                out.set(i, j, 1.0);
            }
        }
        out
    }
}

/// Indices of the `k` highest-scoring positions in `scores`, ties broken by
/// lower index, returned in ascending index order.
fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&p, &q| {
        scores[q]
            .partial_cmp(&scores[p])
            .unwrap_or(Ordering::Equal)
            .then(p.cmp(&q))
    });
    let mut kept: Vec<usize> = order.into_iter().take(k).collect();
    kept.sort_unstable();
    kept
}

/// Keep the K highest-scoring channels of every row of `g`.
pub fn topk_mask(g: &Matrix, k: usize, criterion: Criterion) -> Result<ChannelMask, Error> {
    if k == 0 || k > g.cols() {
        return Err(Error::config(format!(
            "top-K out of range: K={k}, channels={}",
            g.cols()
        )));
    }
    let selected = (0..g.rows())
        .map(|i| {
            let scores: Vec<f64> = g.row(i).iter().map(|&v| criterion.score(v)).collect();
            top_k_indices(&scores, k)
        })
        .collect();
    ChannelMask::new(g.cols(), selected, criterion, None)
}

/// Keep the `a` highest-scoring channels of every contiguous block of `b`
/// channels in every row of `g`.
pub fn grouped_topk_mask(
    g: &Matrix,
    a: usize,
    b: usize,
    criterion: Criterion,
) -> Result<ChannelMask, Error> {
    if b == 0 || a > b {
        return Err(Error::config(format!("invalid group {a}:{b}")));
    }
    if !g.cols().is_multiple_of(b) {
        return Err(Error::config(format!(
            "block size {b} does not divide {} channels",
            g.cols()
        )));
    }
    let selected = (0..g.rows())
        .map(|i| {
            let row = g.row(i);
            let mut kept = Vec::with_capacity(a * (g.cols() / b));
            for block in 0..g.cols() / b {
                let lo = block * b;
                let scores: Vec<f64> = row[lo..lo + b]
                    .iter()
                    .map(|&v| criterion.score(v))
                    .collect();
                kept.extend(top_k_indices(&scores, a).into_iter().map(|j| lo + j));
            }
            kept
        })
        .collect();
    ChannelMask::new(g.cols(), selected, criterion, Some((a, b)))
}
