//! Acceptance suite. Each test covers one numbered criterion, pins its
//! tolerance in code, and prints one pass line (visible with
//! `cargo test --test acceptance -- --nocapture`).

mod common;

use common::{fd_grads, random_instance, rel_err};
use moc_core::decode::{decode_token, mac_count};
use moc_core::embedding::{embed_ffn_as_moc, verify_embedding};
use moc_core::ffn::{ffn_backward_counted, ffn_forward, FfnWeights};
use moc_core::linalg::Matrix;
use moc_core::masking::{grouped_topk_mask, topk_mask, Criterion};
use moc_core::memory::{
    audit_dense_tape, audit_moc_tape, ffn_activation_elems, gcp_recompute_elems, model_report,
    LayerShape, Variant,
};
use moc_core::moc::{moc_backward_counted, moc_forward, moc_forward_masked, MocConfig};
use moc_core::rng::Rng;
use moc_core::train::{activation_stats, train_compare, TrainConfig};

#[test]
fn criterion_01_table_ratios_exact_rationals() {
    // d_ffn = 8d/3 and K = 0.2·d_ffn. Ratios to bsd are checked as integer
    // cross-multiplications: 35/3, 19/3, 11/3, 13/5 for the stored memory
    // and 16/3, 16/15 for the recompute overhead. Zero tolerance.
    for (b, s, d) in [
        (1usize, 1usize, 15usize),
        (2, 3, 15),
        (4, 7, 30),
        (64, 256, 45),
    ] {
        let d_ffn = 8 * d / 3;
        let k = d_ffn / 5;
        let shape = LayerShape::new(b, s, d, d_ffn, 1).unwrap();
        let bsd = (b * s * d) as u64;
        let elems = |v| ffn_activation_elems(&shape, v, k).unwrap();
        let recompute = |v| gcp_recompute_elems(&shape, v, k).unwrap();
        assert_eq!(3 * elems(Variant::Dense), 35 * bsd);
        assert_eq!(3 * elems(Variant::DenseGcp), 19 * bsd);
        assert_eq!(3 * elems(Variant::Moc), 11 * bsd);
        assert_eq!(5 * elems(Variant::MocGcp), 13 * bsd);
        assert_eq!(3 * recompute(Variant::DenseGcp), 16 * bsd);
        assert_eq!(15 * recompute(Variant::MocGcp), 16 * bsd);
    }
    println!("criterion 1: PASS — memory ratios 35/3, 19/3, 11/3, 13/5 and recompute 16/3, 16/15 of bsd are exact");
}

#[test]
fn criterion_02_llama_350m_profile_within_ten_percent() {
    let shape = LayerShape::new(64, 256, 1024, 2736, 16)
        .unwrap()
        .with_bytes(2, 2)
        .unwrap();
    let report = model_report(&shape, Variant::Dense, 0, 24, 32_000, 4).unwrap();
    let rel = |got: u64, want: f64| (got as f64 - want).abs() / want;

    let attention = rel(report.attention_bytes, 177e6);
    let ffn = rel(report.ffn_bytes, 400e6);
    let lm_head = rel(report.lm_head_bytes.unwrap(), 2.16e9);
    let total = rel(report.total_bytes, 17.64e9);
    assert!(attention <= 0.10, "attention off by {attention:.3}");
    assert!(ffn <= 0.10, "ffn off by {ffn:.3}");
    assert!(lm_head <= 0.10, "lm head off by {lm_head:.3}");
    assert!(total <= 0.10, "total off by {total:.3}");
    println!(
        "criterion 2: PASS — 350M profile within 10%: attention {:.1}%, ffn {:.1}%, lm head {:.1}%, total {:.1}%",
        attention * 100.0,
        ffn * 100.0,
        lm_head * 100.0,
        total * 100.0
    );
}

#[test]
fn criterion_03_gradients_match_frozen_mask_finite_differences() {
    let h = 1e-6;
    let criteria = [
        Criterion::PreSiluValue,
        Criterion::PostSiluValue,
        Criterion::AbsSiluOutput,
    ];
    let mut worst: f64 = 0.0;
    let mut sizes = Rng::new(42);
    for inst in 0..20u64 {
        let s = 1 + (sizes.next_u64() % 4) as usize;
        let d = 2 + (sizes.next_u64() % 5) as usize;
        let d_ffn = 2 + (sizes.next_u64() % 11) as usize;
        let k = 1 + (sizes.next_u64() % d_ffn as u64) as usize;
        let (x, w) = random_instance(3000 + inst, s, d, d_ffn);
        let d_out = Rng::new(4000 + inst).normal_matrix(s, d);

        // dense layer
        let (_, tape) = ffn_forward(&x, &w, false).unwrap();
        let (grads, _) = ffn_backward_counted(&tape, &d_out, &w).unwrap();
        let fd = fd_grads(&x, &w, &d_out, h, &|x, w| {
            ffn_forward(x, w, false).unwrap().0
        });
        for (a, b) in [
            (&grads.d_w_gate, &fd.gate),
            (&grads.d_w_up, &fd.up),
            (&grads.d_w_down, &fd.down),
            (&grads.d_x, &fd.x),
        ] {
            let e = rel_err(a, b);
            worst = worst.max(e);
            assert!(e <= 1e-6, "dense instance {inst}: rel err {e}");
        }

        // masked layer, mask frozen to the unperturbed forward's selection
        let cfg = MocConfig::top_k(k).with_criterion(criteria[inst as usize % 3]);
        let (_, tape) = moc_forward(&x, &w, &cfg).unwrap();
        let (grads, _) = moc_backward_counted(&tape, &d_out, &w, &cfg).unwrap();
        let mask = tape.mask().clone();
        let fd = fd_grads(&x, &w, &d_out, h, &|x, w| {
            moc_forward_masked(x, w, &mask, false).unwrap().0
        });
        for (a, b) in [
            (&grads.d_w_gate, &fd.gate),
            (&grads.d_w_up, &fd.up),
            (&grads.d_w_down, &fd.down),
            (&grads.d_x, &fd.x),
        ] {
            let e = rel_err(a, b);
            worst = worst.max(e);
            assert!(e <= 1e-6, "moc instance {inst} (k={k}): rel err {e}");
        }
    }
    println!("criterion 3: PASS — 20 instances, all gradients within 1e-6 of finite differences (worst {worst:.2e})");
}

#[test]
fn criterion_04_full_k_degenerates_to_dense() {
    let mut sizes = Rng::new(7);
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        let s = 1 + (sizes.next_u64() % 4) as usize;
        let d = 2 + (sizes.next_u64() % 5) as usize;
        let d_ffn = 2 + (sizes.next_u64() % 11) as usize;
        let (x, w) = random_instance(5000 + inst, s, d, d_ffn);
        let d_out = Rng::new(6000 + inst).normal_matrix(s, d);
        let cfg = MocConfig::top_k(d_ffn);

        let (dense_out, dense_tape) = ffn_forward(&x, &w, false).unwrap();
        let (dense_grads, _) = ffn_backward_counted(&dense_tape, &d_out, &w).unwrap();
        let (moc_out, moc_tape) = moc_forward(&x, &w, &cfg).unwrap();
        let (moc_grads, _) = moc_backward_counted(&moc_tape, &d_out, &w, &cfg).unwrap();

        for (a, b) in [
            (&moc_out, &dense_out),
            (&moc_grads.d_w_gate, &dense_grads.d_w_gate),
            (&moc_grads.d_w_up, &dense_grads.d_w_up),
            (&moc_grads.d_w_down, &dense_grads.d_w_down),
            (&moc_grads.d_x, &dense_grads.d_x),
        ] {
            let e = rel_err(a, b);
            worst = worst.max(e);
            assert!(e <= 1e-12, "instance {inst}: rel err {e}");
        }
    }
    println!("criterion 4: PASS — K = d_ffn matches dense forward and backward on 50 instances (worst {worst:.2e})");
}

#[test]
fn criterion_05_embedding_equivalence() {
    let d = 4;
    let mut worst: f64 = 0.0;
    for (i, &(a, b, d_ffn)) in [(1usize, 1usize, 4usize), (2, 3, 5), (2, 8, 3), (3, 4, 10)]
        .iter()
        .enumerate()
    {
        let w = FfnWeights::random_init(d, d_ffn, &mut Rng::new(7000 + i as u64));
        let embedded = embed_ffn_as_moc(&w, a, b).unwrap();
        let v = verify_embedding(&w, &embedded, a, b, 100, 7100 + i as u64).unwrap();
        worst = worst.max(v.max_abs_deviation);
        assert!(
            v.max_abs_deviation <= 1e-12,
            "(a,b,d_ffn)=({a},{b},{d_ffn}): deviation {}",
            v.max_abs_deviation
        );
    }
    println!("criterion 5: PASS — embedded layers equal their source FFN within 1e-12 absolute (worst {worst:.2e})");
}

#[test]
fn criterion_06_checkpointing_is_exact_and_audited() {
    let mut sizes = Rng::new(17);
    for inst in 0..20u64 {
        let s = 1 + (sizes.next_u64() % 4) as usize;
        let d = 2 + (sizes.next_u64() % 5) as usize;
        let d_ffn = 2 + (sizes.next_u64() % 11) as usize;
        let k = 1 + (sizes.next_u64() % d_ffn as u64) as usize;
        let (x, w) = random_instance(8000 + inst, s, d, d_ffn);
        let d_out = Rng::new(8100 + inst).normal_matrix(s, d);
        let shape = LayerShape::new(1, s, d, d_ffn, 1).unwrap();

        // dense: checkpointed and plain backward agree bit for bit
        let (_, full) = ffn_forward(&x, &w, false).unwrap();
        let (_, gcp) = ffn_forward(&x, &w, true).unwrap();
        let (ga, _) = ffn_backward_counted(&full, &d_out, &w).unwrap();
        let (gb, recomputed) = ffn_backward_counted(&gcp, &d_out, &w).unwrap();
        assert_eq!(ga.d_w_gate.data(), gb.d_w_gate.data());
        assert_eq!(ga.d_w_up.data(), gb.d_w_up.data());
        assert_eq!(ga.d_w_down.data(), gb.d_w_down.data());
        assert_eq!(ga.d_x.data(), gb.d_x.data());
        assert_eq!(recomputed, 2 * s * d_ffn);
        assert_eq!(
            recomputed as u64,
            gcp_recompute_elems(&shape, Variant::DenseGcp, k).unwrap()
        );

        // stored counts, exactly: 4·s·d_ffn + s·d kept dense, 2·s·d_ffn + s·d
        // checkpointed (X retained in place of the output D)
        let full_audit = audit_dense_tape(&full, &shape).unwrap();
        let gcp_audit = audit_dense_tape(&gcp, &shape).unwrap();
        assert_eq!(full_audit.stored_total as usize, 4 * s * d_ffn + s * d);
        assert_eq!(gcp_audit.stored_total as usize, 2 * s * d_ffn + s * d);

        // masked: same exactness, counts 5sK + sd vs 3sK + sd
        let cfg = MocConfig::top_k(k);
        let (_, moc_full) = moc_forward(&x, &w, &cfg).unwrap();
        let (_, moc_gcp) = moc_forward(&x, &w, &cfg.with_gcp(true)).unwrap();
        let (ma, _) = moc_backward_counted(&moc_full, &d_out, &w, &cfg).unwrap();
        let (mb, recomputed) =
            moc_backward_counted(&moc_gcp, &d_out, &w, &cfg.with_gcp(true)).unwrap();
        assert_eq!(ma.d_w_gate.data(), mb.d_w_gate.data());
        assert_eq!(ma.d_w_up.data(), mb.d_w_up.data());
        assert_eq!(ma.d_w_down.data(), mb.d_w_down.data());
        assert_eq!(ma.d_x.data(), mb.d_x.data());
        assert_eq!(recomputed, 2 * s * k);
        assert_eq!(
            recomputed as u64,
            gcp_recompute_elems(&shape, Variant::MocGcp, k).unwrap()
        );

        let moc_audit = audit_moc_tape(&moc_full, &shape).unwrap();
        let moc_gcp_audit = audit_moc_tape(&moc_gcp, &shape).unwrap();
        assert_eq!(moc_audit.stored_total as usize, 5 * s * k + s * d);
        assert_eq!(moc_gcp_audit.stored_total as usize, 3 * s * k + s * d);
    }
    println!("criterion 6: PASS — checkpointed gradients bitwise-identical; tape audits exact on 20 instances");
}

#[test]
fn criterion_07_decode_consistency_and_mac_model() {
    // consistency against the batched forward
    let mut worst: f64 = 0.0;
    for k in [1usize, 3, 7, 12] {
        let (x, w) = random_instance(9000 + k as u64, 1, 5, 12);
        let cfg = MocConfig::top_k(k);
        let (batched, _) = moc_forward(&x, &w, &cfg).unwrap();
        let (out, report) = decode_token(&x, &w, &cfg).unwrap();
        worst = worst.max(rel_err(&out, &batched));
        assert!(rel_err(&out, &batched) <= 1e-12);
        assert_eq!(report.moc_macs, (5 * 12 + 2 * k * 5) as u64);
    }

    // the 1B-shape preset
    let report = mac_count(2048, 5461, 1024).unwrap();
    assert_eq!(report.dense_macs, 33_552_384);
    assert_eq!(report.moc_macs, 15_378_432);
    assert!((report.ratio - 0.4584).abs() < 2e-4);
    println!(
        "criterion 7: PASS — decode matches batched forward (worst {worst:.2e}); 1B preset ratio {} / {} ≈ {:.4}",
        report.moc_macs, report.dense_macs, report.ratio
    );
}

#[test]
fn criterion_08_paired_training_property() {
    let d = 16;
    let d_ffn = 43;
    let cfg = TrainConfig {
        peak_lr: 1e-3,
        total_steps: 2000,
        batch: 64,
        seed: 20_24,
        ..TrainConfig::default()
    };
    let k = (0.3 * d_ffn as f64).ceil() as usize; // 13
    let moc_cfg = MocConfig::top_k(k);
    let outcome = train_compare(d, d_ffn, &cfg, &moc_cfg, 91).unwrap();

    let first = outcome.records.first().unwrap();
    let last = outcome.records.last().unwrap();
    let dense_ratio = last.dense_loss / first.dense_loss;
    assert!(
        dense_ratio <= 0.1,
        "dense student: final/initial = {dense_ratio:.4}"
    );
    let gap = last.moc_loss / last.dense_loss;
    assert!(gap <= 1.5, "moc/dense final loss ratio {gap:.4}");

    // deterministic given the seed
    let again = train_compare(d, d_ffn, &cfg, &moc_cfg, 91).unwrap();
    for (a, b) in outcome.records.iter().zip(&again.records) {
        assert_eq!(a.dense_loss, b.dense_loss);
        assert_eq!(a.moc_loss, b.moc_loss);
    }
    println!(
        "criterion 8: PASS — dense final/init {dense_ratio:.4} ≤ 0.1, moc/dense final {gap:.4} ≤ 1.5, reruns bitwise equal"
    );
}

#[test]
fn criterion_09_activation_statistics() {
    let g = Rng::new(31_415).normal_matrix(1000, 1000);
    let stats = activation_stats(&g, 100).unwrap();
    assert!(
        (stats.frac_negative - 0.5).abs() <= 0.01,
        "negative fraction {}",
        stats.frac_negative
    );
    for w in stats.cumulative.windows(2) {
        assert!(w[1] >= w[0], "cumulative curve not monotone");
    }
    assert_eq!(*stats.cumulative.last().unwrap(), 1.0);

    // the ~70%-negative figure on a trained toy model is reported, not asserted
    let cfg = TrainConfig {
        total_steps: 300,
        batch: 32,
        seed: 99,
        ..TrainConfig::default()
    };
    let outcome = train_compare(16, 43, &cfg, &MocConfig::top_k(13), 17).unwrap();
    let probe = Rng::new(1234).normal_matrix(256, 16);
    let gate = probe.matmul(&outcome.moc_student.w_gate).unwrap();
    let trained = activation_stats(&gate, 64).unwrap();
    println!(
        "criterion 9: PASS — standard normal frac_negative {:.4} within 0.5±0.01; trained toy gate frac_negative {:.3} (reported only)",
        stats.frac_negative, trained.frac_negative
    );
}

#[test]
fn criterion_10_mask_property_tests() {
    let mut rng = Rng::new(271_828);
    let col_choices = [4usize, 6, 8, 9, 12];
    for round in 0..1000u64 {
        let rows = 1 + (rng.next_u64() % 5) as usize;
        let cols = col_choices[(rng.next_u64() % 5) as usize];
        let g = rng.normal_matrix(rows, cols);

        match round % 3 {
            0 => {
                // exact per-row cardinality
                let k = 1 + (rng.next_u64() % cols as u64) as usize;
                let m = topk_mask(&g, k, Criterion::PreSiluValue).unwrap();
                for i in 0..rows {
                    assert_eq!(m.selected_row(i).len(), k);
                    assert!(m.selected_row(i).windows(2).all(|w| w[0] < w[1]));
                }
            }
            1 => {
                // exact per-block cardinality for a grouped mask
                let divisors: Vec<usize> = (1..=cols).filter(|b| cols.is_multiple_of(*b)).collect();
                let b = divisors[(rng.next_u64() % divisors.len() as u64) as usize];
                let a = 1 + (rng.next_u64() % b as u64) as usize;
                let m = grouped_topk_mask(&g, a, b, Criterion::PreSiluValue).unwrap();
                for i in 0..rows {
                    assert_eq!(m.selected_row(i).len(), a * (cols / b));
                    for block in 0..cols / b {
                        let lo = block * b;
                        let n = m
                            .selected_row(i)
                            .iter()
                            .filter(|&&j| j >= lo && j < lo + b)
                            .count();
                        assert_eq!(n, a);
                    }
                }
            }
            _ => {
                // tie-break determinism on quantized (tied) scores, plus
                // invariance of the pre-SiLU selection under per-row shifts
                let tied = g.map(|v| (v * 2.0).round() / 2.0);
                let k = 1 + (rng.next_u64() % cols as u64) as usize;
                let m1 = topk_mask(&tied, k, Criterion::PreSiluValue).unwrap();
                let m2 = topk_mask(&tied, k, Criterion::PreSiluValue).unwrap();
                for i in 0..rows {
                    assert_eq!(m1.selected_row(i), m2.selected_row(i));
                    // stable-sort oracle: equal scores keep ascending index
                    // order, so the lowest index wins every tie
                    let mut order: Vec<usize> = (0..cols).collect();
                    order.sort_by(|&p, &q| tied.get(i, q).partial_cmp(&tied.get(i, p)).unwrap());
                    let mut expect: Vec<usize> = order[..k].to_vec();
                    expect.sort_unstable();
                    assert_eq!(m1.selected_row(i), expect.as_slice());
                }

                let mut shifted_rows = Vec::with_capacity(rows);
                for i in 0..rows {
                    let c = 3.0 * rng.next_f64() - 1.5;
                    shifted_rows.push(g.row(i).iter().map(|&v| v + c).collect::<Vec<_>>());
                }
                let shifted = Matrix::from_rows(&shifted_rows).unwrap();
                let base = topk_mask(&g, k, Criterion::PreSiluValue).unwrap();
                let moved = topk_mask(&shifted, k, Criterion::PreSiluValue).unwrap();
                for i in 0..rows {
                    assert_eq!(base.selected_row(i), moved.selected_row(i));
                }
            }
        }
    }
    println!("criterion 10: PASS — 1000 random matrices: cardinality, tie-break determinism, shift invariance");
}
