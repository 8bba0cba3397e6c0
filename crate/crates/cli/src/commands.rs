//! The six subcommands. Each one is deterministic given (config, seed),
//! prints a human summary to stdout, and writes its document to
//! `output.path` in `output.format` (or dumps it to stdout when no path is
//! configured).

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use moc_core::decode::{decode_token, mac_count_with_bytes};
use moc_core::embedding::{embed_ffn_as_moc, verify_embedding, verify_embedding_under};
use moc_core::ffn::{ffn_backward, ffn_forward, FfnWeights};
use moc_core::linalg::Matrix;
use moc_core::masking::Criterion;
use moc_core::memory::{model_report, MemoryReport, Variant};
use moc_core::moc::{moc_backward, moc_forward, moc_forward_masked, MocConfig};
use moc_core::rng::Rng;
use moc_core::train::{activation_stats, train_compare};

use crate::config::{OutputFormat, OutputSection, RunConfig};
use crate::matfile;
use crate::CliError;

fn emit(csv: String, value: serde_json::Value, output: &OutputSection) -> Result<(), CliError> {
    let text = match output.format {
        OutputFormat::Csv => csv,
        OutputFormat::Json => format!("{:#}\n", value),
    };
    match &output.path {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- profile

#[derive(Serialize)]
struct ProfileDoc {
    k: usize,
    dense: MemoryReport,
    dense_gcp: MemoryReport,
    moc: MemoryReport,
    moc_gcp: MemoryReport,
}

pub fn cmd_profile(cfg: &RunConfig) -> Result<(), CliError> {
    let shape = cfg.layer_shape()?;
    let k = cfg.moc_config()?.kept_per_row(cfg.shape.d_ffn);
    let mut reports = Vec::new();
    for variant in Variant::all() {
        let r = model_report(
            &shape,
            variant,
            k,
            cfg.shape.n_layers,
            cfg.shape.vocab,
            cfg.shape.lm_head_bytes_per_element,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        eprintln!(
            "{:<10} total {:>14} bytes ({:.2} G), per-layer ffn {:>12} bytes",
            variant.name(),
            r.total_bytes,
            r.total_bytes as f64 / 1e9,
            r.ffn_bytes
        );
        reports.push(r);
    }
    let [dense, dense_gcp, moc, moc_gcp]: [MemoryReport; 4] =
        reports.try_into().expect("four variants");

    let mut csv = String::from(
        "component,dense_elems,dense_bytes,dense_gcp_elems,dense_gcp_bytes,moc_elems,moc_bytes,moc_gcp_elems,moc_gcp_bytes\n",
    );
    {
        let all = [&dense, &dense_gcp, &moc, &moc_gcp];
        let mut row = |name: &str, f: &dyn Fn(&MemoryReport) -> (u64, u64)| {
            csv.push_str(name);
            for r in all {
                let (e, b) = f(r);
                csv.push_str(&format!(",{e},{b}"));
            }
            csv.push('\n');
        };
        row("attention", &|r| (r.attention_elems, r.attention_bytes));
        row("ffn", &|r| (r.ffn_elems, r.ffn_bytes));
        row("rmsnorm", &|r| (r.rmsnorm_elems, r.rmsnorm_bytes));
        row("residual", &|r| (r.residual_elems, r.residual_bytes));
        row("per_layer", &|r| (r.per_layer_elems, r.per_layer_bytes));
        row("gcp_recompute", &|r| (r.gcp_recompute_elems, 0));
        row("lm_head", &|r| {
            (r.lm_head_elems.unwrap_or(0), r.lm_head_bytes.unwrap_or(0))
        });
        row("total", &|r| (r.total_elems, r.total_bytes));
    }

    let doc = ProfileDoc {
        k,
        dense,
        dense_gcp,
        moc,
        moc_gcp,
    };
    emit(csv, serde_json::to_value(&doc).unwrap(), &cfg.output)
}

// ------------------------------------------------------------- grad-check

struct FdSet {
    gate: Matrix,
    up: Matrix,
    down: Matrix,
    x: Matrix,
}

/// Central finite differences of L = Σ eval(x, w) ⊙ d_out over every
/// parameter entry.
fn fd_grads(
    x: &Matrix,
    w: &FfnWeights,
    d_out: &Matrix,
    h: f64,
    eval: &dyn Fn(&Matrix, &FfnWeights) -> Matrix,
) -> FdSet {
    let loss = |x: &Matrix, w: &FfnWeights| -> f64 {
        eval(x, w)
            .data()
            .iter()
            .zip(d_out.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let mut out = Vec::with_capacity(4);
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
        out.push(fd);
    }
    let x_fd = out.pop().unwrap();
    let down = out.pop().unwrap();
    let up = out.pop().unwrap();
    let gate = out.pop().unwrap();
    FdSet {
        gate,
        up,
        down,
        x: x_fd,
    }
}

fn rel_err(a: &Matrix, reference: &Matrix) -> f64 {
    let denom = reference.max_abs().max(1e-12);
    a.max_abs_diff(reference).unwrap() / denom
}

#[derive(Serialize)]
struct GradCheckRow {
    check: String,
    gate: f64,
    up: f64,
    down: f64,
    x: f64,
    pass: bool,
}

pub fn cmd_grad_check(cfg: &RunConfig, corrupt: bool) -> Result<(), CliError> {
    const TOL: f64 = 1e-6;
    let h = 1e-6;
    let seed = cfg.train.seed;
    let sizes = [
        (2usize, 3usize, 5usize, 2usize),
        (3, 4, 8, 3),
        (4, 6, 12, 5),
        (2, 3, 6, 2),
    ];
    let mut rows: Vec<GradCheckRow> = Vec::new();
    let mut all_pass = true;

    for (i, &(s, d, d_ffn, k)) in sizes.iter().enumerate() {
        let mut rng = Rng::new(seed.wrapping_add(i as u64));
        let x = rng.normal_matrix(s, d);
        let w = FfnWeights::random_init(d, d_ffn, &mut rng);
        let d_out = rng.normal_matrix(s, d);

        // dense layer against finite differences
        let (_, tape) = ffn_forward(&x, &w, false).map_err(check)?;
        let mut grads = ffn_backward(&tape, &d_out, &w).map_err(check)?;
        if corrupt && i == 0 {
            // harness self-test: a deliberately wrong gradient must fail
            grads.d_w_gate.set(0, 0, grads.d_w_gate.get(0, 0) + 1e-3);
        }
        let fd = fd_grads(&x, &w, &d_out, h, &|x, w| {
            ffn_forward(x, w, false).unwrap().0
        });
        push_row(
            &mut rows,
            format!("dense s={s} d={d} d_ffn={d_ffn}"),
            &grads,
            &fd,
            TOL,
            &mut all_pass,
        );

        // masked layer with the mask frozen to the base forward's selection
        let moc_cfg = MocConfig::top_k(k);
        let (_, tape) = moc_forward(&x, &w, &moc_cfg).map_err(check)?;
        let grads = moc_backward(&tape, &d_out, &w, &moc_cfg).map_err(check)?;
        let mask = tape.mask().clone();
        let fd = fd_grads(&x, &w, &d_out, h, &|x, w| {
            moc_forward_masked(x, w, &mask, false).unwrap().0
        });
        push_row(
            &mut rows,
            format!("moc s={s} d={d} d_ffn={d_ffn} k={k}"),
            &grads,
            &fd,
            TOL,
            &mut all_pass,
        );
    }

    // full-width degeneracy: masked and dense gradients must coincide
    {
        let mut rng = Rng::new(seed.wrapping_add(100));
        let x = rng.normal_matrix(3, 4);
        let w = FfnWeights::random_init(4, 8, &mut rng);
        let d_out = rng.normal_matrix(3, 4);
        let (_, dense_tape) = ffn_forward(&x, &w, false).map_err(check)?;
        let dense = ffn_backward(&dense_tape, &d_out, &w).map_err(check)?;
        let full = MocConfig::top_k(8);
        let (_, moc_tape) = moc_forward(&x, &w, &full).map_err(check)?;
        let moc = moc_backward(&moc_tape, &d_out, &w, &full).map_err(check)?;
        let worst = [
            rel_err(&moc.d_w_gate, &dense.d_w_gate),
            rel_err(&moc.d_w_up, &dense.d_w_up),
            rel_err(&moc.d_w_down, &dense.d_w_down),
            rel_err(&moc.d_x, &dense.d_x),
        ]
        .into_iter()
        .fold(0.0f64, f64::max);
        let pass = worst <= 1e-12;
        all_pass &= pass;
        rows.push(GradCheckRow {
            check: "degeneracy k=d_ffn vs dense".to_string(),
            gate: worst,
            up: worst,
            down: worst,
            x: worst,
            pass,
        });
    }

    let mut csv = String::from("check,gate,up,down,x,pass\n");
    for r in &rows {
        println!(
            "{:<34} gate {:.2e}  up {:.2e}  down {:.2e}  x {:.2e}  {}",
            r.check,
            r.gate,
            r.up,
            r.down,
            r.x,
            if r.pass { "ok" } else { "FAIL" }
        );
        csv.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{}\n",
            r.check, r.gate, r.up, r.down, r.x, r.pass
        ));
    }
    emit(
        csv,
        json!({"threshold": TOL, "pass": all_pass, "checks": rows}),
        &cfg.output,
    )?;
    if all_pass {
        println!("grad-check: PASS (threshold {TOL:.0e})");
        Ok(())
    } else {
        Err(CliError::Check("gradient check failed".to_string()))
    }
}

fn push_row(
    rows: &mut Vec<GradCheckRow>,
    check: String,
    grads: &moc_core::ffn::FfnGradients,
    fd: &FdSet,
    tol: f64,
    all_pass: &mut bool,
) {
    let row = GradCheckRow {
        check,
        gate: rel_err(&grads.d_w_gate, &fd.gate),
        up: rel_err(&grads.d_w_up, &fd.up),
        down: rel_err(&grads.d_w_down, &fd.down),
        x: rel_err(&grads.d_x, &fd.x),
        pass: true,
    };
    let pass = row.gate <= tol && row.up <= tol && row.down <= tol && row.x <= tol;
    *all_pass &= pass;
    rows.push(GradCheckRow { pass, ..row });
}

fn check(e: moc_core::Error) -> CliError {
    CliError::Check(e.to_string())
}

// ----------------------------------------------------------- embed-verify

pub fn cmd_embed_verify(cfg: &RunConfig) -> Result<(), CliError> {
    const TOL: f64 = 1e-12;
    let e = &cfg.embed;
    let w = FfnWeights::random_init(e.d, e.d_ffn, &mut Rng::new(e.seed));
    let embedded = embed_ffn_as_moc(&w, e.a, e.b).map_err(|er| CliError::Config(er.to_string()))?;

    let exact = verify_embedding(&w, &embedded, e.a, e.b, e.samples, e.seed).map_err(check)?;
    let approx = verify_embedding_under(
        Criterion::PreSiluValue,
        &w,
        &embedded,
        e.a,
        e.b,
        e.samples,
        e.seed,
    )
    .map_err(check)?;

    println!(
        "embedding {}:{} of d_ffn={} into d_moc={} ({} samples)",
        e.a, e.b, e.d_ffn, embedded.d_moc, e.samples
    );
    println!(
        "  exact rule (abs_silu_output):  max deviation {:.3e}",
        exact.max_abs_deviation
    );
    println!(
        "  approximate rule (pre_silu_value): max deviation {:.3e}",
        approx.max_abs_deviation
    );

    let pass = exact.max_abs_deviation <= TOL;
    let csv = format!(
        "criterion,max_abs_deviation,exact_rule\nabs_silu_output,{:e},true\npre_silu_value,{:e},false\n",
        exact.max_abs_deviation, approx.max_abs_deviation
    );
    let doc = json!({
        "a": e.a, "b": e.b, "d": e.d, "d_ffn": e.d_ffn, "d_moc": embedded.d_moc,
        "samples": e.samples, "tolerance": TOL, "pass": pass,
        "exact": {"criterion": "abs_silu_output", "max_abs_deviation": exact.max_abs_deviation},
        "approximate": {"criterion": "pre_silu_value", "max_abs_deviation": approx.max_abs_deviation},
    });
    emit(csv, doc, &cfg.output)?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "embedded layer deviates by {:.3e} under the exact rule",
            exact.max_abs_deviation
        )))
    }
}

// ------------------------------------------------------------------ train

pub fn cmd_train(cfg: &RunConfig, dump_gate: Option<&Path>) -> Result<(), CliError> {
    let train_cfg = cfg.train_config()?;
    let moc_cfg = cfg.train_moc_config()?;
    let outcome = train_compare(
        cfg.train.d,
        cfg.train.d_ffn,
        &train_cfg,
        &moc_cfg,
        cfg.train.task_seed,
    )
    .map_err(check)?;

    let first = outcome.records.first().expect("at least one step");
    let last = outcome.records.last().expect("at least one step");
    println!(
        "trained {} steps (d={}, d_ffn={}, k={}, batch={})",
        cfg.train.total_steps,
        cfg.train.d,
        cfg.train.d_ffn,
        moc_cfg.kept_per_row(cfg.train.d_ffn),
        cfg.train.batch
    );
    println!(
        "  dense: init {:.5} final {:.5} (ratio {:.4})",
        first.dense_loss,
        last.dense_loss,
        last.dense_loss / first.dense_loss
    );
    println!(
        "  moc:   init {:.5} final {:.5} (vs dense final: {:.3}x)",
        first.moc_loss,
        last.moc_loss,
        last.moc_loss / last.dense_loss
    );

    let mut csv = String::from("step,lr,dense_loss,moc_loss\n");
    for r in &outcome.records {
        csv.push_str(&format!(
            "{},{:e},{:e},{:e}\n",
            r.step, r.lr, r.dense_loss, r.moc_loss
        ));
    }
    emit(csv, json!({"records": outcome.records}), &cfg.output)?;

    if let Some(path) = dump_gate {
        // pre-SiLU gate activations of the trained MoC student on a probe
        // batch, for the stats command
        let probe = Rng::new(cfg.train.seed.wrapping_add(1)).normal_matrix(256, cfg.train.d);
        let gate = probe.matmul(&outcome.moc_student.w_gate).map_err(check)?;
        matfile::write_matrix(path, &gate)?;
        println!("wrote gate activations to {}", path.display());
    }
    Ok(())
}

// ------------------------------------------------------------ infer-bench

pub fn cmd_infer_bench(cfg: &RunConfig) -> Result<(), CliError> {
    let moc_cfg = cfg.moc_config()?;
    if moc_cfg.gcp {
        return Err(CliError::Config(
            "infer-bench needs moc.gcp = false (decode has no backward pass)".to_string(),
        ));
    }
    let (d, d_ffn) = (cfg.shape.d, cfg.shape.d_ffn);
    let k = moc_cfg.kept_per_row(d_ffn);
    let analytic = mac_count_with_bytes(d, d_ffn, k, cfg.shape.bytes_per_element)
        .map_err(|e| CliError::Config(e.to_string()))?;

    // consistency probe: single-token decode against the batched forward
    let mut rng = Rng::new(cfg.train.seed);
    let x = rng.normal_matrix(1, d);
    let w = FfnWeights::random_init(d, d_ffn, &mut rng);
    let (batched, _) = moc_forward(&x, &w, &moc_cfg).map_err(check)?;
    let (decoded, measured) = decode_token(&x, &w, &moc_cfg).map_err(check)?;
    let deviation = rel_err(&decoded, &batched);
    let counts_match = measured.moc_macs == analytic.moc_macs;

    println!("weight-traffic model: weights touched x bytes (activations ignored)");
    println!(
        "d={d} d_ffn={d_ffn} k={k}: moc {} / dense {} MACs, ratio {:.4}",
        analytic.moc_macs, analytic.dense_macs, analytic.ratio
    );
    println!(
        "  weight bytes per token: moc {} vs dense {}",
        analytic.moc_weight_bytes, analytic.dense_weight_bytes
    );
    println!(
        "  decode vs batched forward: max rel deviation {deviation:.2e}; counted MACs {} formula",
        if counts_match { "match" } else { "DIFFER FROM" }
    );

    let mut csv = String::from("metric,value\n");
    for (name, v) in [
        ("gate_macs", analytic.gate_macs),
        ("up_macs", analytic.up_macs),
        ("down_macs", analytic.down_macs),
        ("moc_macs", analytic.moc_macs),
        ("dense_macs", analytic.dense_macs),
        ("moc_weight_bytes", analytic.moc_weight_bytes),
        ("dense_weight_bytes", analytic.dense_weight_bytes),
    ] {
        csv.push_str(&format!("{name},{v}\n"));
    }
    csv.push_str(&format!("ratio,{}\n", analytic.ratio));
    let doc = json!({
        "report": analytic,
        "consistency": {"max_rel_deviation": deviation, "counted_macs_match": counts_match},
    });
    emit(csv, doc, &cfg.output)?;

    if deviation > 1e-12 {
        return Err(CliError::Check(format!(
            "decode deviates from the batched forward by {deviation:.2e}"
        )));
    }
    if !counts_match {
        return Err(CliError::Check(format!(
            "measured {} MACs but the formula gives {}",
            measured.moc_macs, analytic.moc_macs
        )));
    }
    Ok(())
}

// ------------------------------------------------------------------ stats

pub fn cmd_stats(cfg: &RunConfig, input: &Path, bins: usize) -> Result<(), CliError> {
    let m = matfile::read_matrix(input)?;
    let stats = activation_stats(&m, bins).map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "{} values: frac_negative {:.4}, top-30% threshold {:.4}",
        m.len(),
        stats.frac_negative,
        stats.top30_threshold
    );
    let mut csv = String::from("bin_lo,bin_hi,count,cumulative\n");
    for i in 0..stats.counts.len() {
        csv.push_str(&format!(
            "{:e},{:e},{},{:e}\n",
            stats.bin_edges[i],
            stats.bin_edges[i + 1],
            stats.counts[i],
            stats.cumulative[i]
        ));
    }
    emit(csv, serde_json::to_value(&stats).unwrap(), &cfg.output)
}
