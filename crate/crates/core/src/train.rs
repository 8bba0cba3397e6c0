//! Deterministic desk-scale training harness: AdamW with decoupled weight
//! decay, a linear-warmup + cosine schedule, and a paired teacher-regression
//! task that trains a dense student and a MoC student on exactly the same
//! initialization and batch stream, so any curve difference is the
//! architecture. Also computes the gate-activation statistics (negative
//! fraction, top-30% threshold, histogram and cumulative curve).

use serde::Serialize;

use crate::ffn::{ffn_backward, ffn_forward, FfnGradients, FfnWeights};
use crate::linalg::Matrix;
use crate::moc::{moc_backward, moc_forward, MocConfig};
use crate::rng::Rng;
use crate::Error;

/// Optimizer and schedule hyperparameters. Defaults: (β1, β2) = (0.9, 0.999),
/// eps 1e-8, no weight decay, warmup over the first 10% of steps, cosine
/// decay to `min_lr` (0 by default) at the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 1e-3,
            min_lr: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            total_steps: 2000,
            warmup_frac: 0.1,
            batch: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::config(format!(
                "warmup_frac must lie in (0, 1), got {}",
                self.warmup_frac
            )));
        }
        if self.peak_lr <= 0.0 || self.total_steps == 0 || self.batch == 0 {
            return Err(Error::config(
                "peak_lr, total_steps and batch must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Matrix,
    v: Matrix,
}

impl AdamState {
    fn new(like: &Matrix) -> Self {
        AdamState {
            m: Matrix::zeros(like.rows(), like.cols()),
            v: Matrix::zeros(like.rows(), like.cols()),
        }
    }
}

/// First/second moments for the three weight matrices plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    gate: AdamState,
    up: AdamState,
    down: AdamState,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(w: &FfnWeights) -> Self {
        OptimizerState {
            gate: AdamState::new(&w.w_gate),
            up: AdamState::new(&w.w_up),
            down: AdamState::new(&w.w_down),
            step: 0,
        }
    }
}

fn adam_update(
    w: &mut Matrix,
    g: &Matrix,
    st: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
    t: usize,
) -> Result<(), Error> {
    if w.shape() != g.shape() {
        return Err(Error::shape("adamw_step", w.shape(), g.shape()));
    }
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    let wd = cfg.weight_decay;
    for ((wi, &gi), (mi, vi)) in w
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(st.m.data_mut().iter_mut().zip(st.v.data_mut().iter_mut()))
    {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        let m_hat = *mi / bias1;
        let v_hat = *vi / bias2;
        *wi -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + wd * *wi);
    }
    Ok(())
}

/// One decoupled-weight-decay Adam step over all three weight matrices.
pub fn adamw_step(
    w: &mut FfnWeights,
    grads: &FfnGradients,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(), Error> {
    state.step += 1;
    let t = state.step;
    adam_update(&mut w.w_gate, &grads.d_w_gate, &mut state.gate, cfg, lr, t)?;
    adam_update(&mut w.w_up, &grads.d_w_up, &mut state.up, cfg, lr, t)?;
    adam_update(&mut w.w_down, &grads.d_w_down, &mut state.down, cfg, lr, t)?;
    Ok(())
}

/// Learning rate at a step: linear ramp from 0 to `peak_lr` over the first
/// ⌊warmup_frac·total_steps⌋ steps, then cosine decay to `min_lr` at
/// `total_steps`. Both branches equal `peak_lr` at the junction.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64, Error> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(Error::config(format!(
            "step {step} beyond total_steps {}",
            cfg.total_steps
        )));
    }
    let warmup = (cfg.warmup_frac * cfg.total_steps as f64).floor() as usize;
    if step < warmup {
        return Ok(cfg.peak_lr * step as f64 / warmup as f64);
    }
    let progress = if cfg.total_steps == warmup {
        1.0
    } else {
        (step - warmup) as f64 / (cfg.total_steps - warmup) as f64
    };
    Ok(cfg.min_lr
        + (cfg.peak_lr - cfg.min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Losses observed at one step, before the update.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub dense_loss: f64,
    pub moc_loss: f64,
}

/// Result of a paired run: per-step curves and the final weights of both
/// students (the teacher is returned for probing).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub teacher: FfnWeights,
    pub dense_student: FfnWeights,
    pub moc_student: FfnWeights,
}

/// Mean squared error and its gradient w.r.t. the prediction.
fn mse(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix), Error> {
    let diff = pred.sub(target)?;
    let n = diff.len() as f64;
    let loss = diff.data().iter().map(|&e| e * e).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// Train a dense student and a MoC student to regress a frozen random
/// teacher on standard-normal inputs. Both students start from the same
/// initialization and consume the same batch stream.
pub fn train_compare(
    d: usize,
    d_ffn: usize,
    cfg: &TrainConfig,
    moc_cfg: &MocConfig,
    task_seed: u64,
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    moc_cfg.validate_for(d_ffn)?;

    // half-scale teacher: its gate pre-activations stay in SiLU's smooth
    // region, so the regression target is fittable within the step budget
    let teacher = {
        let w = FfnWeights::random_init(d, d_ffn, &mut Rng::new(task_seed));
        FfnWeights::new(w.w_gate.scale(0.5), w.w_up.scale(0.5), w.w_down.scale(0.5))?
    };
    let mut rng = Rng::new(cfg.seed);
    let init = FfnWeights::random_init(d, d_ffn, &mut rng);
    let mut dense_w = init.clone();
    let mut moc_w = init;
    let mut dense_state = OptimizerState::new(&dense_w);
    let mut moc_state = OptimizerState::new(&moc_w);

    let mut records = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let lr = lr_at(step, cfg)?;
        let x = rng.normal_matrix(cfg.batch, d);
        let y = ffn_forward(&x, &teacher, false)?.0;

        let (dense_out, dense_tape) = ffn_forward(&x, &dense_w, false)?;
        let (dense_loss, dense_grad) = mse(&dense_out, &y)?;
        let grads = ffn_backward(&dense_tape, &dense_grad, &dense_w)?;
        adamw_step(&mut dense_w, &grads, &mut dense_state, cfg, lr)?;

        let (moc_out, moc_tape) = moc_forward(&x, &moc_w, moc_cfg)?;
        let (moc_loss, moc_grad) = mse(&moc_out, &y)?;
        let grads = moc_backward(&moc_tape, &moc_grad, &moc_w, moc_cfg)?;
        adamw_step(&mut moc_w, &grads, &mut moc_state, cfg, lr)?;

        records.push(StepRecord {
            step,
            lr,
            dense_loss,
            moc_loss,
        });
    }

    Ok(TrainOutcome {
        records,
        teacher,
        dense_student: dense_w,
        moc_student: moc_w,
    })
}

/// Distribution summary of a gate matrix: fraction of negative entries, the
/// value above which the top 30% lie, a histogram over [min, max] and its
/// cumulative curve.
#[derive(Debug, Clone, Serialize)]
pub struct ActivationStats {
    pub frac_negative: f64,
    pub top30_threshold: f64,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub cumulative: Vec<f64>,
}

pub fn activation_stats(g: &Matrix, bins: usize) -> Result<ActivationStats, Error> {
    if g.is_empty() {
        return Err(Error::config("empty matrix has no statistics".to_string()));
    }
    if bins < 2 {
        return Err(Error::config(format!("need at least 2 bins, got {bins}")));
    }
    let n = g.len();
    let negatives = g.data().iter().filter(|&&v| v < 0.0).count();

    let mut sorted: Vec<f64> = g.data().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let idx = ((0.7 * n as f64).floor() as usize).min(n - 1);
    let top30_threshold = sorted[idx];

    let min = sorted[0];
    let max = sorted[n - 1];
    let width = (max - min) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in g.data() {
        let bin = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    let bin_edges: Vec<f64> = (0..=bins).map(|i| min + width * i as f64).collect();
    let mut running = 0u64;
    let cumulative: Vec<f64> = counts
        .iter()
        .map(|&c| {
            running += c;
            running as f64 / n as f64
        })
        .collect();

    Ok(ActivationStats {
        frac_negative: negatives as f64 / n as f64,
        top30_threshold,
        bin_edges,
        counts,
        cumulative,
    })
}
