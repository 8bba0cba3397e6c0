//! Constructive embedding of a dense SwiGLU FFN into a grouped-sparse MoC
//! layer of hidden width d_moc = b·⌈d_ffn/a⌉, plus a numerical verifier.
//!
//! Each original channel c lands in embedded column (c/a)·b + (c mod a); all
//! other columns carry zero weights. A zero column produces a zero gate, so
//! SiLU emits exactly zero there, and every block of b embedded columns holds
//! at most a placed ones. Keeping the a largest |SiLU| outputs per block
//! therefore keeps every nonzero channel, and the embedded layer computes the
//! original function exactly. Ranking by raw gate value instead is only an
//! approximation: a placed channel with a negative gate ranks below an empty
//! column and can be dropped.

use crate::ffn::{ffn_forward, FfnWeights};
use crate::linalg::Matrix;
use crate::masking::Criterion;
use crate::moc::{moc_forward, MocConfig};
use crate::rng::Rng;
use crate::Error;

/// A widened weight triple together with where each original channel went.
#[derive(Debug, Clone)]
pub struct EmbeddingResult {
    pub weights: FfnWeights,
    pub d_moc: usize,
    /// placement[c] = embedded column of original channel c.
    pub placement: Vec<usize>,
}

/// Build the widened weights that make an MoC layer with grouped a:b
/// selection compute the same function as the dense layer `w`.
pub fn embed_ffn_as_moc(w: &FfnWeights, a: usize, b: usize) -> Result<EmbeddingResult, Error> {
    if a == 0 || b == 0 || a > b {
        return Err(Error::config(format!("invalid group {a}:{b}")));
    }
    let d = w.d();
    let d_ffn = w.d_ffn();
    let d_moc = b * d_ffn.div_ceil(a);

    let placement: Vec<usize> = (0..d_ffn).map(|c| (c / a) * b + (c % a)).collect();

    let mut w_gate = Matrix::zeros(d, d_moc);
    let mut w_up = Matrix::zeros(d, d_moc);
    let mut w_down = Matrix::zeros(d_moc, d);
    for (c, &col) in placement.iter().enumerate() {
        for i in 0..d {
            w_gate.set(i, col, w.w_gate.get(i, c));
            w_up.set(i, col, w.w_up.get(i, c));
        }
        for j in 0..d {
            w_down.set(col, j, w.w_down.get(c, j));
        }
    }

    Ok(EmbeddingResult {
        weights: FfnWeights::new(w_gate, w_up, w_down)?,
        d_moc,
        placement,
    })
}

/// Outcome of an equivalence run; `criterion` records which selection rule
/// was active, since only `AbsSiluOutput` carries the exactness guarantee.
#[derive(Debug, Clone)]
pub struct EmbeddingVerification {
    pub criterion: Criterion,
    pub samples: usize,
    pub max_abs_deviation: f64,
}

/// Compare the embedded layer against the source FFN on random inputs under
/// the exact |SiLU| selection rule.
pub fn verify_embedding(
    w: &FfnWeights,
    embedded: &EmbeddingResult,
    a: usize,
    b: usize,
    n_samples: usize,
    seed: u64,
) -> Result<EmbeddingVerification, Error> {
    verify_embedding_under(Criterion::AbsSiluOutput, w, embedded, a, b, n_samples, seed)
}

/// Same comparison under an arbitrary selection criterion; deviations under
/// `PreSiluValue` measure how approximate the practical rule is.
pub fn verify_embedding_under(
    criterion: Criterion,
    w: &FfnWeights,
    embedded: &EmbeddingResult,
    a: usize,
    b: usize,
    n_samples: usize,
    seed: u64,
) -> Result<EmbeddingVerification, Error> {
    if embedded.d_moc != b * w.d_ffn().div_ceil(a) || embedded.weights.d() != w.d() {
        return Err(Error::config(
            "embedding does not fit the given weights and group".to_string(),
        ));
    }
    let cfg = MocConfig::grouped(a, b).with_criterion(criterion);
    let mut rng = Rng::new(seed);
    let mut max_dev: f64 = 0.0;
    for _ in 0..n_samples {
        let x = rng.normal_matrix(1, w.d());
        let (reference, _) = ffn_forward(&x, w, false)?;
        let (widened, _) = moc_forward(&x, &embedded.weights, &cfg)?;
        max_dev = max_dev.max(reference.max_abs_diff(&widened)?);
    }
    Ok(EmbeddingVerification {
        criterion,
        samples: n_samples,
        max_abs_deviation: max_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_weights(seed: u64, d: usize, d_ffn: usize) -> FfnWeights {
        FfnWeights::random_init(d, d_ffn, &mut Rng::new(seed))
    }

    #[test]
    fn widened_dimension_formula() {
        let w = random_weights(1, 2, 3);
        let e = embed_ffn_as_moc(&w, 2, 8).unwrap();
        assert_eq!(e.d_moc, 16); // 8·⌈3/2⌉
        assert_eq!(e.placement, vec![0, 1, 8]);
    }

    #[test]
    fn degenerate_group_is_the_identity_embedding() {
        let w = random_weights(2, 3, 4);
        let e = embed_ffn_as_moc(&w, 4, 4).unwrap();
        assert_eq!(e.d_moc, 4);
        assert_eq!(e.placement, vec![0, 1, 2, 3]);
        assert_eq!(e.weights, w);
    }

    #[test]
    fn placement_bookkeeping() {
        let w = random_weights(3, 4, 10);
        let (a, b) = (3, 4);
        let e = embed_ffn_as_moc(&w, a, b).unwrap();
        assert_eq!(e.d_moc, 16);

        // every original channel maps to exactly one embedded column
        let mut seen = vec![false; e.d_moc];
        for &col in &e.placement {
            assert!(!seen[col]);
            seen[col] = true;
        }

        // placed columns are nonzero, the rest exactly zero; blocks hold at
        // most `a` placed columns
        let placed = seen.iter().filter(|&&p| p).count();
        assert_eq!(placed, 10);
        for (col, &was_placed) in seen.iter().enumerate() {
            let col_zero = (0..4)
                .all(|i| e.weights.w_gate.get(i, col) == 0.0 && e.weights.w_up.get(i, col) == 0.0)
                && (0..4).all(|j| e.weights.w_down.get(col, j) == 0.0);
            assert_eq!(col_zero, !was_placed);
        }
        for block in 0..e.d_moc / b {
            let in_block = e
                .placement
                .iter()
                .filter(|&&c| c >= block * b && c < (block + 1) * b)
                .count();
            assert!(in_block <= a);
        }
    }

    #[test]
    fn nonzero_parameter_count_is_three_d_dffn() {
        let (d, d_ffn) = (4, 7);
        let w = random_weights(4, d, d_ffn);
        let e = embed_ffn_as_moc(&w, 2, 5).unwrap();
        let nonzeros = |m: &Matrix| m.data().iter().filter(|&&v| v != 0.0).count();
        let total =
            nonzeros(&e.weights.w_gate) + nonzeros(&e.weights.w_up) + nonzeros(&e.weights.w_down);
        assert_eq!(total, 3 * d * d_ffn);
        // capacity of the widened triple
        assert_eq!(
            e.weights.w_gate.len() + e.weights.w_up.len() + e.weights.w_down.len(),
            3 * d * e.d_moc
        );
    }

    #[test]
    fn identity_group_deviation_is_exactly_zero() {
        let w = random_weights(5, 3, 4);
        let e = embed_ffn_as_moc(&w, 4, 4).unwrap();
        let v = verify_embedding(&w, &e, 4, 4, 20, 9).unwrap();
        assert_eq!(v.max_abs_deviation, 0.0);
    }

    #[test]
    fn random_weights_verify_under_abs_silu() {
        let w = random_weights(6, 4, 5);
        let e = embed_ffn_as_moc(&w, 2, 3).unwrap();
        let v = verify_embedding(&w, &e, 2, 3, 100, 10).unwrap();
        assert_eq!(v.criterion, Criterion::AbsSiluOutput);
        assert!(v.max_abs_deviation <= 1e-12, "dev {}", v.max_abs_deviation);
    }

    #[test]
    fn pre_silu_selection_breaks_the_equivalence() {
        // a negative gate channel scores below an empty column under the raw
        // gate value, so the embedded layer drops it
        let w = FfnWeights::new(
            Matrix::from_rows(&[vec![-1.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0]]).unwrap(),
        )
        .unwrap();
        let e = embed_ffn_as_moc(&w, 1, 2).unwrap();
        let exact = verify_embedding(&w, &e, 1, 2, 100, 11).unwrap();
        assert_eq!(exact.max_abs_deviation, 0.0);
        let approx =
            verify_embedding_under(Criterion::PreSiluValue, &w, &e, 1, 2, 100, 11).unwrap();
        assert_eq!(approx.criterion, Criterion::PreSiluValue);
        assert!(
            approx.max_abs_deviation > 0.1,
            "dev {}",
            approx.max_abs_deviation
        );
    }

    #[test]
    fn mismatched_embedding_is_rejected() {
        let w = random_weights(7, 3, 4);
        let e = embed_ffn_as_moc(&w, 2, 3).unwrap();
        assert!(verify_embedding(&w, &e, 2, 4, 5, 1).is_err());
        assert!(embed_ffn_as_moc(&w, 3, 2).is_err());
    }
}
