//! The Mixture-of-Channels layer: a SwiGLU FFN whose gate output is pruned
//! to the top-K channels per row (or a per b-block) before the elementwise
//! product and down-projection. The tape stores only the kept channels,
//! compactly, plus their indices.
//!
//! The mask is a constant of the computation graph: the backward pass
//! differentiates through the kept channels only and never materializes a
//! dense gradient for the suppressed ones, which is where the memory saving
//! comes from.

use crate::ffn::{FfnGradients, FfnWeights};
use crate::linalg::{silu, silu_grad, Matrix};
use crate::masking::{grouped_topk_mask, topk_mask, ChannelMask, Criterion};
use crate::Error;

/// How many channels survive: a plain per-row top-K or `a` out of every
/// contiguous block of `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    TopK(usize),
    Grouped { a: usize, b: usize },
}

/// Configuration of one MoC layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MocConfig {
    pub selection: Selection,
    pub criterion: Criterion,
    pub gcp: bool,
}

impl MocConfig {
    pub fn top_k(k: usize) -> Self {
        MocConfig {
            selection: Selection::TopK(k),
            criterion: Criterion::PreSiluValue,
            gcp: false,
        }
    }

    pub fn grouped(a: usize, b: usize) -> Self {
        MocConfig {
            selection: Selection::Grouped { a, b },
            criterion: Criterion::PreSiluValue,
            gcp: false,
        }
    }

    pub fn with_criterion(mut self, criterion: Criterion) -> Self {
        self.criterion = criterion;
        self
    }

    pub fn with_gcp(mut self, gcp: bool) -> Self {
        self.gcp = gcp;
        self
    }

    pub fn validate_for(&self, d_ffn: usize) -> Result<(), Error> {
        match self.selection {
            Selection::TopK(k) => {
                if k == 0 || k > d_ffn {
                    return Err(Error::config(format!(
                        "top-K out of range: K={k}, d_ffn={d_ffn}"
                    )));
                }
            }
            Selection::Grouped { a, b } => {
                if b == 0 || a > b {
                    return Err(Error::config(format!("invalid group {a}:{b}")));
                }
                if !d_ffn.is_multiple_of(b) {
                    return Err(Error::config(format!(
                        "block size {b} does not divide d_ffn={d_ffn}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Channels kept per row: K, or a·(d_ffn/b) for the grouped form.
    pub fn kept_per_row(&self, d_ffn: usize) -> usize {
        match self.selection {
            Selection::TopK(k) => k,
            Selection::Grouped { a, b } => a * (d_ffn / b),
        }
    }

    /// Build the channel mask for a gate matrix under this config.
    pub fn build_mask(&self, g: &Matrix) -> Result<ChannelMask, Error> {
        self.validate_for(g.cols())?;
        match self.selection {
            Selection::TopK(k) => topk_mask(g, k, self.criterion),
            Selection::Grouped { a, b } => grouped_topk_mask(g, a, b, self.criterion),
        }
    }

    fn matches_mask(&self, mask: &ChannelMask) -> bool {
        let group = match self.selection {
            Selection::TopK(_) => None,
            Selection::Grouped { a, b } => Some((a, b)),
        };
        mask.criterion() == self.criterion
            && mask.group() == group
            && mask.per_row() == self.kept_per_row(mask.total_channels())
    }
}

/// Compact tape of a MoC forward: the input, the mask indices, and the kept
/// channels of G and U (plus S and Z unless checkpointed, in which case the
/// backward pass recomputes them from the kept G and U alone).
#[derive(Debug, Clone)]
pub struct MocTape {
    gcp: bool,
    x: Matrix,
    mask: ChannelMask,
    g_kept: Matrix,
    u_kept: Matrix,
    s_kept: Option<Matrix>,
    z_kept: Option<Matrix>,
}

impl MocTape {
    pub fn gcp(&self) -> bool {
        self.gcp
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn mask(&self) -> &ChannelMask {
        &self.mask
    }

    pub fn g_kept(&self) -> &Matrix {
        &self.g_kept
    }

    pub fn u_kept(&self) -> &Matrix {
        &self.u_kept
    }

    pub fn s_kept(&self) -> Option<&Matrix> {
        self.s_kept.as_ref()
    }

    pub fn z_kept(&self) -> Option<&Matrix> {
        self.z_kept.as_ref()
    }
}

/// Masked forward pass: builds the mask from the gate output under the
/// config's criterion, then evaluates the kept channels.
pub fn moc_forward(
    x: &Matrix,
    w: &FfnWeights,
    cfg: &MocConfig,
) -> Result<(Matrix, MocTape), Error> {
    if x.cols() != w.d() {
        return Err(Error::shape("moc_forward", x.shape(), w.w_gate.shape()));
    }
    cfg.validate_for(w.d_ffn())?;
    let g = x.matmul(&w.w_gate)?;
    let mask = cfg.build_mask(&g)?;
    forward_with_mask(x, w, g, mask, cfg.gcp)
}

/// Forward pass under a fixed, externally supplied mask. Used wherever the
/// selection must be held constant while inputs or weights move, e.g. the
/// frozen-mask finite-difference checks.
pub fn moc_forward_masked(
    x: &Matrix,
    w: &FfnWeights,
    mask: &ChannelMask,
    gcp: bool,
) -> Result<(Matrix, MocTape), Error> {
    if x.cols() != w.d() {
        return Err(Error::shape("moc_forward", x.shape(), w.w_gate.shape()));
    }
    if mask.rows() != x.rows() || mask.total_channels() != w.d_ffn() {
        return Err(Error::shape(
            "moc_forward_masked",
            (mask.rows(), mask.total_channels()),
            (x.rows(), w.d_ffn()),
        ));
    }
    let g = x.matmul(&w.w_gate)?;
    forward_with_mask(x, w, g, mask.clone(), gcp)
}

fn forward_with_mask(
    x: &Matrix,
    w: &FfnWeights,
    g: Matrix,
    mask: ChannelMask,
    gcp: bool,
) -> Result<(Matrix, MocTape), Error> {
    let u = x.matmul(&w.w_up)?;
    let g_kept = mask.gather(&g)?;
    let u_kept = mask.gather(&u)?;
    let s_kept = g_kept.map(silu);
    let z_kept = s_kept.hadamard(&u_kept)?;
    let z_dense = mask.scatter(&z_kept)?;
    let d = z_dense.matmul(&w.w_down)?;
    let tape = MocTape {
        gcp,
        x: x.clone(),
        mask,
        g_kept,
        u_kept,
        s_kept: if gcp { None } else { Some(s_kept) },
        z_kept: if gcp { None } else { Some(z_kept) },
    };
    Ok((d, tape))
}

/// Masked backward pass. See [`moc_backward_counted`].
pub fn moc_backward(
    tape: &MocTape,
    d_out: &Matrix,
    w: &FfnWeights,
    cfg: &MocConfig,
) -> Result<FfnGradients, Error> {
    moc_backward_counted(tape, d_out, w, cfg).map(|(grads, _)| grads)
}

/// Masked backward pass with the mask treated as a constant. All elementwise
/// work runs on the kept channels only; dense operands are produced by
/// scattering a compact matrix where a matmul needs one. Also returns the
/// number of activation values recomputed (2·s·K for a checkpointed tape).
pub fn moc_backward_counted(
    tape: &MocTape,
    d_out: &Matrix,
    w: &FfnWeights,
    cfg: &MocConfig,
) -> Result<(FfnGradients, usize), Error> {
    if tape.x.cols() != w.d() || tape.mask.total_channels() != w.d_ffn() {
        return Err(Error::tape(format!(
            "tape built for d={}, d_ffn={} but weights have d={}, d_ffn={}",
            tape.x.cols(),
            tape.mask.total_channels(),
            w.d(),
            w.d_ffn()
        )));
    }
    if cfg.gcp != tape.gcp || !cfg.matches_mask(&tape.mask) {
        return Err(Error::tape(
            "config does not match the one the tape was recorded under".to_string(),
        ));
    }
    if d_out.shape() != (tape.x.rows(), w.d()) {
        return Err(Error::shape(
            "moc_backward",
            d_out.shape(),
            (tape.x.rows(), w.d()),
        ));
    }

    let mut recomputed = 0usize;
    let (s_kept, z_kept) = match (&tape.s_kept, &tape.z_kept) {
        (Some(s), Some(z)) => (s.clone(), z.clone()),
        _ => {
            // checkpointed: SiLU and the gating product are recomputed on the
            // kept channels only; the suppressed ones were never stored
            let s = tape.g_kept.map(silu);
            let z = s.hadamard(&tape.u_kept)?;
            recomputed = s.len() + z.len();
            (s, z)
        }
    };

    let z_dense = tape.mask.scatter(&z_kept)?;
    let d_w_down = z_dense.transpose().matmul(d_out)?;
    let d_z = d_out.matmul(&w.w_down.transpose())?;
    let d_z_kept = tape.mask.gather(&d_z)?;
    // U ⊙ M is read back from the tape's kept U, never rebuilt densely
    let d_s_kept = tape.u_kept.hadamard(&d_z_kept)?;
    let d_u_kept = s_kept.hadamard(&d_z_kept)?;
    let d_g_kept = d_s_kept.hadamard(&tape.g_kept.map(silu_grad))?;
    let d_g_dense = tape.mask.scatter(&d_g_kept)?;
    let d_u_dense = tape.mask.scatter(&d_u_kept)?;
    let d_w_gate = tape.x.transpose().matmul(&d_g_dense)?;
    let d_w_up = tape.x.transpose().matmul(&d_u_dense)?;
    let d_x = d_g_dense
        .matmul(&w.w_gate.transpose())?
        .add(&d_u_dense.matmul(&w.w_up.transpose())?)?;

    Ok((
        FfnGradients {
            d_w_gate,
            d_w_up,
            d_w_down,
            d_x,
        },
        recomputed,
    ))
}

/// Minimum, over rows (and blocks, if grouped), of the gap between the
/// smallest kept score and the largest dropped score. A positive margin
/// means perturbations smaller than half of it cannot change the mask;
/// infinity when nothing is dropped.
pub fn mask_margin(g: &Matrix, cfg: &MocConfig) -> Result<f64, Error> {
    cfg.validate_for(g.cols())?;
    let (keep, block) = match cfg.selection {
        Selection::TopK(k) => (k, g.cols()),
        Selection::Grouped { a, b } => (a, b),
    };
    let mut margin = f64::INFINITY;
    if keep == block || g.rows() == 0 {
        return Ok(margin);
    }
    for i in 0..g.rows() {
        let row = g.row(i);
        for lo in (0..g.cols()).step_by(block) {
            let mut scores: Vec<f64> = row[lo..lo + block]
                .iter()
                .map(|&v| cfg.criterion.score(v))
                .collect();
            scores.sort_by(|p, q| q.partial_cmp(p).unwrap_or(std::cmp::Ordering::Equal));
            margin = margin.min(scores[keep - 1] - scores[keep]);
        }
    }
    Ok(margin)
}
