//! The standard SwiGLU feed-forward layer: forward, exact backward, and the
//! gradient-checkpointed variant that recomputes `S` and `Z` instead of
//! storing them. Serves as the dense baseline and as the oracle for the
//! masked layer at K = d_ffn.
//!
//! Forward: G = X·W_gate, U = X·W_up, S = SiLU(G), Z = S ⊙ U, D = Z·W_down.

use crate::linalg::{silu, silu_grad, Matrix};
use crate::rng::Rng;
use crate::Error;

/// The (W_gate, W_up, W_down) triple parameterizing one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights {
    pub w_gate: Matrix, // d × d_ffn
    pub w_up: Matrix,   // d × d_ffn
    pub w_down: Matrix, // d_ffn × d
}

impl FfnWeights {
    pub fn new(w_gate: Matrix, w_up: Matrix, w_down: Matrix) -> Result<Self, Error> {
        if w_gate.shape() != w_up.shape() {
            return Err(Error::shape("ffn weights", w_gate.shape(), w_up.shape()));
        }
        if w_down.shape() != (w_gate.cols(), w_gate.rows()) {
            return Err(Error::shape("ffn weights", w_gate.shape(), w_down.shape()));
        }
        Ok(FfnWeights {
            w_gate,
            w_up,
            w_down,
        })
    }

    pub fn d(&self) -> usize {
        self.w_gate.rows()
    }

    pub fn d_ffn(&self) -> usize {
        self.w_gate.cols()
    }

    /// Gaussian init scaled by 1/sqrt(fan-in), so unit-variance inputs give
    /// roughly unit-variance activations at every stage.
    pub fn random_init(d: usize, d_ffn: usize, rng: &mut Rng) -> Self {
        let gate_scale = 1.0 / (d as f64).sqrt();
        let down_scale = 1.0 / (d_ffn as f64).sqrt();
        FfnWeights {
            w_gate: rng.normal_matrix(d, d_ffn).scale(gate_scale),
            w_up: rng.normal_matrix(d, d_ffn).scale(gate_scale),
            w_down: rng.normal_matrix(d_ffn, d).scale(down_scale),
        }
    }
}

/// Arrays a dense forward keeps for backprop. The full variant stores
/// {X, G, U, S, Z}; the checkpointed variant stores {X, G, U} and recomputes
/// S and Z during the backward pass. The output D is returned to the caller
/// and never duplicated in the tape.
#[derive(Debug, Clone)]
pub struct DenseTape {
    gcp: bool,
    x: Matrix,
    g: Matrix,
    u: Matrix,
    s: Option<Matrix>,
    z: Option<Matrix>,
}

impl DenseTape {
    pub fn gcp(&self) -> bool {
        self.gcp
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn s(&self) -> Option<&Matrix> {
        self.s.as_ref()
    }

    pub fn z(&self) -> Option<&Matrix> {
        self.z.as_ref()
    }
}

/// Gradients of a scalar loss with respect to the three weight matrices and
/// the layer input.
#[derive(Debug, Clone)]
pub struct FfnGradients {
    pub d_w_gate: Matrix,
    pub d_w_up: Matrix,
    pub d_w_down: Matrix,
    pub d_x: Matrix,
}

/// Dense forward pass; returns the output and the tape for the requested
/// variant.
pub fn ffn_forward(x: &Matrix, w: &FfnWeights, gcp: bool) -> Result<(Matrix, DenseTape), Error> {
    if x.cols() != w.d() {
        return Err(Error::shape("ffn_forward", x.shape(), w.w_gate.shape()));
    }
    let g = x.matmul(&w.w_gate)?;
    let u = x.matmul(&w.w_up)?;
    let s = g.map(silu);
    let z = s.hadamard(&u)?;
    let d = z.matmul(&w.w_down)?;
    let tape = DenseTape {
        gcp,
        x: x.clone(),
        g,
        u,
        s: if gcp { None } else { Some(s) },
        z: if gcp { None } else { Some(z) },
    };
    Ok((d, tape))
}

/// Dense backward pass. See [`ffn_backward_counted`] for the variant that
/// also reports how many activation values it recomputed.
pub fn ffn_backward(
    tape: &DenseTape,
    d_out: &Matrix,
    w: &FfnWeights,
) -> Result<FfnGradients, Error> {
    ffn_backward_counted(tape, d_out, w).map(|(grads, _)| grads)
}

/// Dense backward pass from a tape, given the loss gradient `d_out` w.r.t.
/// the layer output. Also returns the number of activation values recomputed
/// (2·s·d_ffn for a checkpointed tape: all of S and Z; 0 otherwise).
pub fn ffn_backward_counted(
    tape: &DenseTape,
    d_out: &Matrix,
    w: &FfnWeights,
) -> Result<(FfnGradients, usize), Error> {
    if tape.x.cols() != w.d() || tape.g.cols() != w.d_ffn() {
        return Err(Error::tape(format!(
            "tape built for d={}, d_ffn={} but weights have d={}, d_ffn={}",
            tape.x.cols(),
            tape.g.cols(),
            w.d(),
            w.d_ffn()
        )));
    }
    if d_out.shape() != (tape.x.rows(), w.d()) {
        return Err(Error::shape(
            "ffn_backward",
            d_out.shape(),
            (tape.x.rows(), w.d()),
        ));
    }

    let mut recomputed = 0usize;
    let (s, z) = match (&tape.s, &tape.z) {
        (Some(s), Some(z)) => (s.clone(), z.clone()),
        _ => {
            // checkpointed: rebuild S and Z from the stored G and U
            let s = tape.g.map(silu);
            let z = s.hadamard(&tape.u)?;
            recomputed = s.len() + z.len();
            (s, z)
        }
    };

    let d_w_down = z.transpose().matmul(d_out)?;
    let d_z = d_out.matmul(&w.w_down.transpose())?;
    let d_s = tape.u.hadamard(&d_z)?;
    let d_u = s.hadamard(&d_z)?;
    let d_g = d_s.hadamard(&tape.g.map(silu_grad))?;
    let d_w_gate = tape.x.transpose().matmul(&d_g)?;
    let d_w_up = tape.x.transpose().matmul(&d_u)?;
    let d_x = d_g
        .matmul(&w.w_gate.transpose())?
        .add(&d_u.matmul(&w.w_up.transpose())?)?;

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
