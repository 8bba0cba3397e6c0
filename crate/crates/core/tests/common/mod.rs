//! Shared helpers for the integration suites: random layer instances,
//! central finite-difference gradients, and matrix-level relative error.

#![allow(dead_code)]

use moc_core::ffn::FfnWeights;
use moc_core::linalg::Matrix;
use moc_core::rng::Rng;

pub fn random_instance(seed: u64, s: usize, d: usize, d_ffn: usize) -> (Matrix, FfnWeights) {
    let mut rng = Rng::new(seed);
    let x = rng.normal_matrix(s, d);
    let w = FfnWeights::random_init(d, d_ffn, &mut rng);
    (x, w)
}

/// The four leaf gradients of one layer.
pub struct GradSet {
    pub gate: Matrix,
    pub up: Matrix,
    pub down: Matrix,
    pub x: Matrix,
}

/// Central finite differences of L(x, w) = Σ eval(x, w) ⊙ d_out with respect
/// to every entry of every weight matrix and of x. `eval` returns the layer
/// output; the caller decides what forward (dense, masked, frozen-mask) it
/// runs.
pub fn fd_grads(
    x: &Matrix,
    w: &FfnWeights,
    d_out: &Matrix,
    h: f64,
    eval: &dyn Fn(&Matrix, &FfnWeights) -> Matrix,
) -> GradSet {
    let loss = |x: &Matrix, w: &FfnWeights| -> f64 {
        eval(x, w)
            .data()
            .iter()
            .zip(d_out.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let mut grads = Vec::with_capacity(4);
    for which in 0..4 {
        let (rows, cols) = match which {
            0 => w.w_gate.shape(),
            1 => w.w_up.shape(),
            2 => w.w_down.shape(),
            _ => x.shape(),
        };
        let mut fd = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let bump = |delta: f64| -> f64 {
                    let mut xp = x.clone();
                    let mut wp = w.clone();
                    match which {
                        0 => wp.w_gate.set(i, j, wp.w_gate.get(i, j) + delta),
                        1 => wp.w_up.set(i, j, wp.w_up.get(i, j) + delta),
                        2 => wp.w_down.set(i, j, wp.w_down.get(i, j) + delta),
                        _ => xp.set(i, j, xp.get(i, j) + delta),
                    }
                    loss(&xp, &wp)
                };
                fd.set(i, j, (bump(h) - bump(-h)) / (2.0 * h));
            }
        }
        grads.push(fd);
    }
    let x_fd = grads.pop().unwrap();
    let down = grads.pop().unwrap();
    let up = grads.pop().unwrap();
    let gate = grads.pop().unwrap();
    GradSet {
        gate,
        up,
        down,
        x: x_fd,
    }
}

/// Matrix-level relative error: ‖a − reference‖∞ / ‖reference‖∞.
pub fn rel_err(a: &Matrix, reference: &Matrix) -> f64 {
    let denom = reference.max_abs().max(1e-12);
    a.max_abs_diff(reference).unwrap() / denom
}
