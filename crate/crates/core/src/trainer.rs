//! Adam, the deep-supervised training loop with early stopping, and
//! per-image evaluation.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Exec, Tape, Var};
use crate::blocks::Mode;
use crate::data::{PatchSettings, Sample};
use crate::error::{config_err, data_err, Result};
use crate::inference::predict_image;
use crate::loss::{supervision_weights, total_loss};
use crate::metrics::{binarize, confusion_counts, summarize, MetricReport, MetricSummary};
use crate::network::{Network, PredictMode, Snapshot};
use crate::param::ParamStore;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Overrides the architecture's deep-supervision flag when set.
    pub deep_supervision: Option<bool>,
    /// Stop as soon as validation dice reaches this value.
    pub target_dice: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch_size: 4,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            deep_supervision: None,
            target_dice: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(config_err!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if self.patience == 0 {
            return Err(config_err!("patience must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient.
pub fn adam_step(store: &mut ParamStore, cfg: &TrainConfig) {
    for p in store.iter_mut() {
        p.opt.step += 1;
        let t = p.opt.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let value = Arc::make_mut(&mut p.value);
        let it = value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(p.opt.m.data_mut().iter_mut().zip(p.opt.v.data_mut()));
        for ((w, &g), (m, v)) in it {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *w -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps_adam);
        }
    }
}

/// Stacks images and one-hot labels of equally sized samples.
pub fn batch_tensors(samples: &[&Sample], classes: usize) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or_else(|| data_err!("empty batch"))?;
    let (h, w) = (first.image.height, first.image.width);
    if classes > 2 {
        return Err(config_err!("binary masks support 1 or 2 classes, got {classes}"));
    }
    let n = samples.len();
    let mut x = Tensor::zeros(Shape::new(n, 1, h, w));
    let mut y = Tensor::zeros(Shape::new(n, classes, h, w));
    let plane = h * w;
    for (i, s) in samples.iter().enumerate() {
        if (s.image.height, s.image.width) != (h, w) || (s.mask.height, s.mask.width) != (h, w) {
            return Err(data_err!(
                "sample {} is {}x{}, batch expects {h}x{w}",
                s.id,
                s.image.height,
                s.image.width
            ));
        }
        x.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(&s.image.data);
        let base = i * classes * plane;
        let ys = y.data_mut();
        if classes == 1 {
            ys[base..base + plane].copy_from_slice(&s.mask.data);
        } else {
            for (j, &m) in s.mask.data.iter().enumerate() {
                ys[base + j] = 1.0 - m;
                ys[base + plane + j] = m;
            }
        }
    }
    Ok((x, y))
}

/// Foreground probabilities of batch item `n`: the only channel for a
/// single-class map, otherwise the last one.
pub fn foreground(probs: &Tensor, n: usize) -> &[f64] {
    let s = probs.shape();
    let start = (n * s.c + s.c - 1) * s.plane();
    &probs.data()[start..start + s.plane()]
}

/// `sum_i weights[i] * hybrid_loss(labels, heads[i])` recorded on the tape.
pub fn supervised_loss(tape: &mut Tape, heads: &[Var], labels: &Arc<Tensor>, weights: &[f64]) -> Result<Var> {
    if heads.len() != weights.len() {
        return Err(config_err!("{} heads but {} loss weights", heads.len(), weights.len()));
    }
    let mut terms = Vec::with_capacity(heads.len());
    for (&h, &w) in heads.iter().zip(weights) {
        terms.push((tape.hybrid_loss(h, Arc::clone(labels))?, w));
    }
    tape.weighted_sum(&terms)
}

/// Records a training-mode forward pass and the loss on a fresh tape, runs
/// backward, adds parameter gradients into the store and folds the batch
/// statistics into the running statistics. Returns the loss value.
pub fn train_step(net: &mut Network, input: Tensor, labels: Tensor, deep_supervision: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(input);
    let out = net.forward(&mut tape, &net.plan, &x, Mode::Train)?;
    let heads: Vec<Var> = out.heads.iter().map(|(_, v)| *v).collect();
    let labels = Arc::new(labels);
    let root = if deep_supervision {
        supervised_loss(&mut tape, &heads, &labels, &vec![1.0; heads.len()])?
    } else {
        let last = *heads.last().ok_or_else(|| config_err!("network has no heads"))?;
        supervised_loss(&mut tape, &[last], &labels, &[1.0])?
    };
    let loss = tape.value(root).to_scalar()?;
    let grads = tape.backward(root)?;
    grads.accumulate_into(&mut net.params)?;
    net.buffers.apply(&out.stat_updates);
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const HEADER: &'static str = "epoch,train_loss,val_loss,val_dice";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.10},{:.10},{:.10}",
                r.epoch, r.train_loss, r.val_loss, r.val_dice
            );
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetDice,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub history: History,
    /// Epoch whose parameters were restored into the network.
    pub best_epoch: usize,
    /// Parameters as they stood after the last epoch ran.
    pub final_state: Snapshot,
    pub stop: StopReason,
}

/// Loss and mean dice of `samples` under inference mode.
pub fn validate(net: &Network, samples: &[Sample], batch_size: usize, deep_supervision: bool) -> Result<(f64, f64)> {
    let weights = supervision_weights(net.plan.heads.len(), deep_supervision);
    let mode = if deep_supervision {
        PredictMode::Ensemble
    } else {
        PredictMode::Depth(net.config.depth)
    };
    let mut loss = 0.0;
    let mut dice = 0.0;
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = batch_tensors(&refs, net.config.num_classes)?;
        let heads = net.head_outputs(&x)?;
        let head_refs: Vec<&Tensor> = heads.iter().collect();
        loss += total_loss(&y, &head_refs, &weights)? * chunk.len() as f64;
        let probs = match mode {
            PredictMode::Ensemble => crate::autodiff::mean_of(&head_refs)?,
            PredictMode::Depth(_) => heads
                .last()
                .cloned()
                .ok_or_else(|| config_err!("network has no heads"))?,
        };
        let hard = binarize(&probs, 0.5);
        for (i, s) in chunk.iter().enumerate() {
            dice += confusion_counts(&s.mask.data, foreground(&hard, i))?.dice();
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, dice / n))
}

/// Trains `net` on `train`, early-stopping on validation loss, and leaves
/// the best-validation parameters in place.
pub fn fit(
    net: &mut Network,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(data_err!(
            "training needs nonempty splits, got {} train and {} validation samples",
            train.len(),
            val.len()
        ));
    }
    let ds = cfg.deep_supervision.unwrap_or(net.config.deep_supervision);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, usize, Snapshot)> = None;
    let mut stale = 0;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (x, y) = batch_tensors(&refs, net.config.num_classes)?;
            net.params.zero_grad();
            train_loss += train_step(net, x, y, ds)? * chunk.len() as f64;
            adam_step(&mut net.params, cfg);
        }
        train_loss /= train.len() as f64;
        let (val_loss, val_dice) = validate(net, val, cfg.batch_size, ds)?;
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_dice,
        };
        history.epochs.push(rec);
        on_epoch(&rec);

        let reached = cfg.target_dice.is_some_and(|t| val_dice >= t);
        if reached || best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, net.snapshot()));
            stale = 0;
        } else {
            stale += 1;
        }
        if reached {
            stop = StopReason::TargetDice;
            break;
        }
        if stale >= cfg.patience {
            stop = StopReason::Patience;
            break;
        }
    }
    let final_state = net.snapshot();
    let best_epoch = match best {
        Some((_, epoch, snap)) => {
            net.restore(&snap)?;
            epoch
        }
        None => 0,
    };
    Ok(FitResult {
        history,
        best_epoch,
        final_state,
        stop,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_image: Vec<(String, MetricReport)>,
    pub summary: MetricSummary,
}

/// Per-image metrics at threshold 0.5 and their mean and sample standard
/// deviation. Images are predicted whole unless `patches` is given.
pub fn evaluate(
    net: &Network,
    samples: &[Sample],
    mode: PredictMode,
    patches: Option<&PatchSettings>,
) -> Result<Evaluation> {
    let per_image = samples
        .par_iter()
        .map(|s| {
            let probs = predict_image(net, &s.image, mode, patches)?;
            let hard: Vec<f64> = probs.data.iter().map(|&p| if p >= 0.5 { 1.0 } else { 0.0 }).collect();
            Ok((s.id.clone(), confusion_counts(&s.mask.data, &hard)?.report()))
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricReport> = per_image.iter().map(|(_, r)| *r).collect();
    Ok(Evaluation {
        summary: summarize(&reports),
        per_image,
    })
}
