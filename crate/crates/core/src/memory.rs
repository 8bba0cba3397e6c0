//! Analytic activation-memory accounting for a transformer layer and a full
//! model, in elements and bytes, for the four FFN variants — plus an auditor
//! that counts what a real tape actually stored and insists it equals the
//! model.
//!
//! Per layer (batch b, sequence s, hidden d): attention keeps Q, K, V, the
//! attention output and the output projection (5bsd with a fused attention
//! kernel), the two RMSNorms keep 2bsd, the two residual connections keep
//! 2bsd, and the FFN keeps whatever its variant stores. A channel mask is
//! costed at one index per kept channel.

use serde::Serialize;

use crate::ffn::DenseTape;
use crate::moc::MocTape;
use crate::Error;

/// The four accounted FFN variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dense,
    DenseGcp,
    Moc,
    MocGcp,
}

impl Variant {
    pub fn is_gcp(self) -> bool {
        matches!(self, Variant::DenseGcp | Variant::MocGcp)
    }

    pub fn is_moc(self) -> bool {
        matches!(self, Variant::Moc | Variant::MocGcp)
    }

    pub fn all() -> [Variant; 4] {
        [
            Variant::Dense,
            Variant::DenseGcp,
            Variant::Moc,
            Variant::MocGcp,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::DenseGcp => "dense_gcp",
            Variant::Moc => "moc",
            Variant::MocGcp => "moc_gcp",
        }
    }
}

/// Shape of one transformer layer plus the byte widths used for costing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerShape {
    pub batch: usize,
    pub seq: usize,
    pub d: usize,
    pub d_ffn: usize,
    pub heads: usize,
    /// Stored activation width; 2 models bf16 training.
    pub bytes_per_element: u64,
    /// Mask index width; defaults to the element width.
    pub bytes_per_index: u64,
}

impl LayerShape {
    pub fn new(
        batch: usize,
        seq: usize,
        d: usize,
        d_ffn: usize,
        heads: usize,
    ) -> Result<Self, Error> {
        if batch == 0 || seq == 0 || d == 0 || d_ffn == 0 || heads == 0 {
            return Err(Error::config(
                "layer shape fields must be positive".to_string(),
            ));
        }
        if !d.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "heads {heads} does not divide hidden dim {d}"
            )));
        }
        Ok(LayerShape {
            batch,
            seq,
            d,
            d_ffn,
            heads,
            bytes_per_element: 2,
            bytes_per_index: 2,
        })
    }

    pub fn with_bytes(mut self, per_element: u64, per_index: u64) -> Result<Self, Error> {
        if per_element == 0 || per_index == 0 {
            return Err(Error::config("byte widths must be positive".to_string()));
        }
        self.bytes_per_element = per_element;
        self.bytes_per_index = per_index;
        Ok(self)
    }

    /// b·s, the number of token rows.
    pub fn tokens(&self) -> u64 {
        self.batch as u64 * self.seq as u64
    }
}

fn validate_k(shape: &LayerShape, variant: Variant, k: usize) -> Result<(), Error> {
    if variant.is_moc() && k > shape.d_ffn {
        return Err(Error::config(format!(
            "K={k} exceeds d_ffn={}",
            shape.d_ffn
        )));
    }
    Ok(())
}

/// Stored FFN activation elements per variant, counting mask indices as
/// elements. `k` is ignored for the dense variants.
///
/// Dense stores G, U, S, Z and the output D: 4·bs·d_ffn + bsd.
/// Dense+GCP drops S and Z: 2·bs·d_ffn + bsd.
/// MoC stores the four kept arrays, the mask and D: 5·bs·K + bsd.
/// MoC+GCP drops the kept S and Z: 3·bs·K + bsd.
pub fn ffn_activation_elems(shape: &LayerShape, variant: Variant, k: usize) -> Result<u64, Error> {
    validate_k(shape, variant, k)?;
    let t = shape.tokens();
    let d = shape.d as u64;
    let d_ffn = shape.d_ffn as u64;
    let k = k as u64;
    Ok(match variant {
        Variant::Dense => t * (4 * d_ffn + d),
        Variant::DenseGcp => t * (2 * d_ffn + d),
        Variant::Moc => t * (5 * k + d),
        Variant::MocGcp => t * (3 * k + d),
    })
}

/// Mask indices within [`ffn_activation_elems`]: bs·K for MoC variants,
/// zero for dense ones.
pub fn ffn_index_elems(shape: &LayerShape, variant: Variant, k: usize) -> u64 {
    if variant.is_moc() {
        shape.tokens() * k as u64
    } else {
        0
    }
}

/// Elementwise values recomputed during a checkpointed backward pass:
/// S and Z, so 2·bs·d_ffn dense and 2·bs·K for MoC. Zero for the
/// non-checkpointed variants.
pub fn gcp_recompute_elems(shape: &LayerShape, variant: Variant, k: usize) -> Result<u64, Error> {
    validate_k(shape, variant, k)?;
    let t = shape.tokens();
    Ok(match variant {
        Variant::DenseGcp => 2 * t * shape.d_ffn as u64,
        Variant::MocGcp => 2 * t * k as u64,
        Variant::Dense | Variant::Moc => 0,
    })
}

/// Per-component activation memory, in elements and bytes. Mask indices are
/// costed at `bytes_per_index`, everything else at `bytes_per_element`
/// except the LM head, which carries its own width.
#[derive(Debug, Clone, Serialize)]
pub struct MemoryReport {
    pub variant: Variant,
    pub n_layers: u64,
    pub attention_elems: u64,
    pub ffn_elems: u64,
    pub ffn_index_elems: u64,
    pub rmsnorm_elems: u64,
    pub residual_elems: u64,
    pub per_layer_elems: u64,
    pub gcp_recompute_elems: u64,
    pub lm_head_elems: Option<u64>,
    pub total_elems: u64,
    pub attention_bytes: u64,
    pub ffn_bytes: u64,
    pub rmsnorm_bytes: u64,
    pub residual_bytes: u64,
    pub per_layer_bytes: u64,
    pub lm_head_bytes: Option<u64>,
    pub total_bytes: u64,
}

impl MemoryReport {
    /// CSV with columns component,elements,bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,elements,bytes\n");
        let mut push = |name: &str, elems: u64, bytes: u64| {
            out.push_str(&format!("{name},{elems},{bytes}\n"));
        };
        push("attention", self.attention_elems, self.attention_bytes);
        push("ffn", self.ffn_elems, self.ffn_bytes);
        push("rmsnorm", self.rmsnorm_elems, self.rmsnorm_bytes);
        push("residual", self.residual_elems, self.residual_bytes);
        push("per_layer", self.per_layer_elems, self.per_layer_bytes);
        if let (Some(e), Some(b)) = (self.lm_head_elems, self.lm_head_bytes) {
            push("lm_head", e, b);
        }
        push("total", self.total_elems, self.total_bytes);
        out
    }
}

/// Activation memory of a single layer under the given variant.
pub fn layer_activation_elems(
    shape: &LayerShape,
    variant: Variant,
    k: usize,
) -> Result<MemoryReport, Error> {
    let t = shape.tokens();
    let d = shape.d as u64;
    let attention_elems = 5 * t * d;
    let rmsnorm_elems = 2 * t * d;
    let residual_elems = 2 * t * d;
    let ffn_elems = ffn_activation_elems(shape, variant, k)?;
    let ffn_index_elems = ffn_index_elems(shape, variant, k);
    let per_layer_elems = attention_elems + ffn_elems + rmsnorm_elems + residual_elems;
    let gcp_recompute = gcp_recompute_elems(shape, variant, k)?;

    let bpe = shape.bytes_per_element;
    let attention_bytes = attention_elems * bpe;
    let ffn_bytes = (ffn_elems - ffn_index_elems) * bpe + ffn_index_elems * shape.bytes_per_index;
    let rmsnorm_bytes = rmsnorm_elems * bpe;
    let residual_bytes = residual_elems * bpe;
    let per_layer_bytes = attention_bytes + ffn_bytes + rmsnorm_bytes + residual_bytes;

    Ok(MemoryReport {
        variant,
        n_layers: 1,
        attention_elems,
        ffn_elems,
        ffn_index_elems,
        rmsnorm_elems,
        residual_elems,
        per_layer_elems,
        gcp_recompute_elems: gcp_recompute,
        lm_head_elems: None,
        total_elems: per_layer_elems,
        attention_bytes,
        ffn_bytes,
        rmsnorm_bytes,
        residual_bytes,
        per_layer_bytes,
        lm_head_bytes: None,
        total_bytes: per_layer_bytes,
    })
}

/// Whole-model activation memory: `n_layers` copies of the layer plus the LM
/// head logits (b·s·vocab values at their own byte width, 4 modeling fp32).
pub fn model_report(
    shape: &LayerShape,
    variant: Variant,
    k: usize,
    n_layers: usize,
    vocab: usize,
    lm_head_bytes_per_element: u64,
) -> Result<MemoryReport, Error> {
    if n_layers == 0 || vocab == 0 || lm_head_bytes_per_element == 0 {
        return Err(Error::config(
            "n_layers, vocab and lm head width must be positive".to_string(),
        ));
    }
    let mut report = layer_activation_elems(shape, variant, k)?;
    let n = n_layers as u64;
    let lm_elems = shape.tokens() * vocab as u64;
    let lm_bytes = lm_elems * lm_head_bytes_per_element;
    report.n_layers = n;
    report.lm_head_elems = Some(lm_elems);
    report.lm_head_bytes = Some(lm_bytes);
    report.total_elems = n * report.per_layer_elems + lm_elems;
    report.total_bytes = n * report.per_layer_bytes + lm_bytes;
    Ok(report)
}

/// What a tape audit found: per-array element counts and the totals against
/// the analytic model.
#[derive(Debug, Clone, Serialize)]
pub struct TapeAudit {
    pub variant: Variant,
    pub arrays: Vec<(String, u64)>,
    pub value_elems: u64,
    pub index_elems: u64,
    pub stored_total: u64,
    pub expected_total: u64,
}

impl TapeAudit {
    fn check(self) -> Result<TapeAudit, Error> {
        if self.stored_total == self.expected_total {
            Ok(self)
        } else {
            let mut diff = format!(
                "{}: stored {} elements, model expects {}\n",
                self.variant.name(),
                self.stored_total,
                self.expected_total
            );
            for (name, count) in &self.arrays {
                diff.push_str(&format!("  {name}: {count}\n"));
            }
            Err(Error::Audit(diff))
        }
    }
}

fn shape_matches(shape: &LayerShape, rows: usize, d: usize, d_ffn: usize) -> Result<(), Error> {
    if shape.tokens() != rows as u64 || shape.d != d || shape.d_ffn != d_ffn {
        return Err(Error::tape(format!(
            "tape covers {rows} rows of d={d}, d_ffn={d_ffn}; shape says b*s={}, d={}, d_ffn={}",
            shape.tokens(),
            shape.d,
            shape.d_ffn
        )));
    }
    Ok(())
}

/// Count what a dense tape stores and require exact agreement with the
/// model. The tape holds X where the model's FFN row holds the output D;
/// both cost bsd, so the totals must match element for element.
pub fn audit_dense_tape(tape: &DenseTape, shape: &LayerShape) -> Result<TapeAudit, Error> {
    let variant = if tape.gcp() {
        Variant::DenseGcp
    } else {
        Variant::Dense
    };
    shape_matches(shape, tape.x().rows(), tape.x().cols(), tape.g().cols())?;
    let mut arrays: Vec<(String, u64)> = vec![
        ("x".to_string(), tape.x().len() as u64),
        ("g".to_string(), tape.g().len() as u64),
        ("u".to_string(), tape.u().len() as u64),
    ];
    if let Some(s) = tape.s() {
        arrays.push(("s".to_string(), s.len() as u64));
    }
    if let Some(z) = tape.z() {
        arrays.push(("z".to_string(), z.len() as u64));
    }
    let value_elems: u64 = arrays.iter().map(|(_, c)| c).sum();
    TapeAudit {
        variant,
        expected_total: ffn_activation_elems(shape, variant, 0)?,
        arrays,
        value_elems,
        index_elems: 0,
        stored_total: value_elems,
    }
    .check()
}

/// Count what a MoC tape stores (kept values plus mask indices) and require
/// exact agreement with the model at the tape's own K.
pub fn audit_moc_tape(tape: &MocTape, shape: &LayerShape) -> Result<TapeAudit, Error> {
    let variant = if tape.gcp() {
        Variant::MocGcp
    } else {
        Variant::Moc
    };
    shape_matches(
        shape,
        tape.x().rows(),
        tape.x().cols(),
        tape.mask().total_channels(),
    )?;
    let k = tape.mask().per_row();
    let mut arrays: Vec<(String, u64)> = vec![
        ("x".to_string(), tape.x().len() as u64),
        ("g_kept".to_string(), tape.g_kept().len() as u64),
        ("u_kept".to_string(), tape.u_kept().len() as u64),
    ];
    if let Some(s) = tape.s_kept() {
        arrays.push(("s_kept".to_string(), s.len() as u64));
    }
    if let Some(z) = tape.z_kept() {
        arrays.push(("z_kept".to_string(), z.len() as u64));
    }
    let value_elems: u64 = arrays.iter().map(|(_, c)| c).sum();
    let index_elems = tape.mask().index_count() as u64;
    arrays.push(("mask_indices".to_string(), index_elems));
    TapeAudit {
        variant,
        expected_total: ffn_activation_elems(shape, variant, k)?,
        arrays,
        value_elems,
        index_elems,
        stored_total: value_elems + index_elems,
    }
    .check()
}
