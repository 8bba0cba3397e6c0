//! Single-token sparse decode. The gate projection always runs dense (every
//! channel must be scored before ranking), then only the kept columns of
//! W_up and the kept rows of W_down are touched: d·d_ffn + 2·K·d
//! multiply-accumulates per token against the dense layer's 3·d·d_ffn.
//!
//! The byte-traffic figures model weight loading only (each MAC touches one
//! distinct weight element; activations are ignored).

use serde::Serialize;

use crate::ffn::FfnWeights;
use crate::linalg::{silu, Matrix};
use crate::moc::MocConfig;
use crate::Error;

/// Per-token multiply-accumulate counts and the weight-traffic model.
#[derive(Debug, Clone, Serialize)]
pub struct MacReport {
    pub d: usize,
    pub d_ffn: usize,
    pub k: usize,
    pub gate_macs: u64,
    pub up_macs: u64,
    pub down_macs: u64,
    pub moc_macs: u64,
    pub dense_macs: u64,
    pub ratio: f64,
    pub bytes_per_weight: u64,
    pub moc_weight_bytes: u64,
    pub dense_weight_bytes: u64,
}

/// Analytic per-token MAC counts at 2 bytes per weight.
pub fn mac_count(d: usize, d_ffn: usize, k: usize) -> Result<MacReport, Error> {
    mac_count_with_bytes(d, d_ffn, k, 2)
}

/// Analytic per-token MAC counts with an explicit weight width.
pub fn mac_count_with_bytes(
    d: usize,
    d_ffn: usize,
    k: usize,
    bytes_per_weight: u64,
) -> Result<MacReport, Error> {
    if k > d_ffn {
        return Err(Error::config(format!("K={k} exceeds d_ffn={d_ffn}")));
    }
    let (du, df, ku) = (d as u64, d_ffn as u64, k as u64);
    let gate_macs = du * df;
    let up_macs = ku * du;
    let down_macs = ku * du;
    let moc_macs = gate_macs + up_macs + down_macs;
    let dense_macs = 3 * du * df;
    Ok(MacReport {
        d,
        d_ffn,
        k,
        gate_macs,
        up_macs,
        down_macs,
        moc_macs,
        dense_macs,
        ratio: moc_macs as f64 / dense_macs as f64,
        bytes_per_weight,
        moc_weight_bytes: moc_macs * bytes_per_weight,
        dense_weight_bytes: dense_macs * bytes_per_weight,
    })
}

/// Which parts of the weight matrices a decode actually read.
#[derive(Debug, Clone)]
pub struct WeightAccess {
    pub up_cols: Vec<usize>,
    pub down_rows: Vec<usize>,
}

/// Decode one token; the report's MAC counts are the multiplies actually
/// performed, not the analytic formula.
pub fn decode_token(
    x: &Matrix,
    w: &FfnWeights,
    cfg: &MocConfig,
) -> Result<(Matrix, MacReport), Error> {
    decode_token_traced(x, w, cfg).map(|(out, report, _)| (out, report))
}

/// Decode one token, additionally reporting exactly which columns of W_up
/// and rows of W_down were touched.
pub fn decode_token_traced(
    x: &Matrix,
    w: &FfnWeights,
    cfg: &MocConfig,
) -> Result<(Matrix, MacReport, WeightAccess), Error> {
    if x.shape() != (1, w.d()) {
        return Err(Error::shape("decode_token", x.shape(), (1, w.d())));
    }
    if cfg.gcp {
        return Err(Error::config(
            "decode has no backward pass; gcp does not apply".to_string(),
        ));
    }
    cfg.validate_for(w.d_ffn())?;
    let d = w.d();
    let d_ffn = w.d_ffn();
    let xr = x.row(0);
    let mut muls: u64 = 0;

    // dense gate projection: every channel is needed to rank them
    let mut g = vec![0.0f64; d_ffn];
    for (j, gj) in g.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &xi) in xr.iter().enumerate() {
            acc += xi * w.w_gate.get(i, j);
            muls += 1;
        }
        *gj = acc;
    }
    let gate_macs = muls;

    let g_row = Matrix::from_vec(1, d_ffn, g.clone())?;
    let mask = cfg.build_mask(&g_row)?;
    let active = mask.selected_row(0);

    // up projection on the kept columns only
    let mut up_cols = Vec::with_capacity(active.len());
    let mut z_kept = Vec::with_capacity(active.len());
    for &j in active {
        let mut acc = 0.0;
        for (i, &xi) in xr.iter().enumerate() {
            acc += xi * w.w_up.get(i, j);
            muls += 1;
        }
        up_cols.push(j);
        z_kept.push(silu(g[j]) * acc);
    }
    let up_macs = muls - gate_macs;

    // down projection over the kept rows only
    let mut down_rows = Vec::with_capacity(active.len());
    let mut out = vec![0.0f64; d];
    for (&j, &zj) in active.iter().zip(&z_kept) {
        for (c, o) in out.iter_mut().enumerate() {
            *o += zj * w.w_down.get(j, c);
            muls += 1;
        }
        down_rows.push(j);
    }
    let down_macs = muls - gate_macs - up_macs;

    let dense_macs = 3 * (d as u64) * (d_ffn as u64);
    let bytes_per_weight = 2;
    let report = MacReport {
        d,
        d_ffn,
        k: mask.per_row(),
        gate_macs,
        up_macs,
        down_macs,
        moc_macs: muls,
        dense_macs,
        ratio: muls as f64 / dense_macs as f64,
        bytes_per_weight,
        moc_weight_bytes: muls * bytes_per_weight,
        dense_weight_bytes: dense_macs * bytes_per_weight,
    };
    Ok((
        Matrix::from_vec(1, d, out)?,
        report,
        WeightAccess { up_cols, down_rows },
    ))
}
