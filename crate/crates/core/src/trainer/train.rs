use rayon::prelude::*;
use serde::Serialize;

use super::optim::Adam;
use super::{LossKind, TrainConfig};
use crate::decoder::GagcnModel;
use crate::error::{Error, Result};
use crate::gagcn::frames_to_features;
use crate::gating::Axis;
use crate::motiondata::WindowSet;
use crate::numkernel::{Graph, ParamId, Rng, Tensor};

/// Losses above this abort training.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// A window in the model's channel-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWindow {
    /// `[C×N×T]`
    pub input: Tensor,
    /// `[C×N×t]`
    pub target: Tensor,
    pub label: Option<String>,
}

pub fn prepare_windows(set: &WindowSet) -> Result<Vec<PreparedWindow>> {
    set.windows
        .iter()
        .map(|w| {
            Ok(PreparedWindow {
                input: frames_to_features(&w.input)?,
                target: frames_to_features(&w.target)?,
                label: w.label.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed by the end of the epoch.
    pub step: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Batch-mean blending coefficients of one layer at one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateRecord {
    pub step: usize,
    pub layer: usize,
    pub axis: Axis,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    /// Batch loss before each optimizer step.
    pub step_losses: Vec<f64>,
    pub gates: Vec<GateRecord>,
    /// Set when training stopped on a diverging loss; the model then holds
    /// the parameters from the last completed epoch.
    pub diverged: Option<String>,
}

type LayerGates = Vec<(Vec<f64>, Vec<f64>)>;

struct SampleResult {
    loss: f64,
    grads: Vec<(ParamId, Tensor)>,
    gates: LayerGates,
}

fn loss_var(
    g: &mut Graph,
    model: &GagcnModel,
    w: &PreparedWindow,
    kind: LossKind,
    mask: &[bool],
) -> Result<(crate::numkernel::Var, LayerGates)> {
    let out = model.forward(g, &w.input)?;
    let loss = match kind {
        LossKind::Mpjpe => g.mpjpe_loss(out.prediction, &w.target)?,
        LossKind::Mae => g.mae_loss(out.prediction, &w.target, mask)?,
    };
    let gates = out
        .gates
        .iter()
        .map(|t| (g.value(t.spatial).data().to_vec(), g.value(t.temporal).data().to_vec()))
        .collect();
    Ok((loss, gates))
}

fn sample(model: &GagcnModel, w: &PreparedWindow, kind: LossKind, mask: &[bool]) -> Result<SampleResult> {
    let mut g = Graph::new(&model.store);
    let (loss, gates) = loss_var(&mut g, model, w, kind, mask)?;
    let grads = g.backward(loss)?.param_grads();
    Ok(SampleResult {
        loss: g.value(loss).data()[0],
        grads,
        gates,
    })
}

/// Mean loss over `windows` without gradients; evaluation fans out over windows.
pub fn mean_loss(model: &GagcnModel, windows: &[PreparedWindow], kind: LossKind, mask: &[bool]) -> Result<f64> {
    let losses = windows
        .par_iter()
        .map(|w| {
            let mut g = Graph::new(&model.store);
            let (loss, _) = loss_var(&mut g, model, w, kind, mask)?;
            Ok(g.value(loss).data()[0])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn mean_gates(results: &[SampleResult]) -> LayerGates {
    let mut acc = results[0].gates.clone();
    for r in &results[1..] {
        for (a, b) in acc.iter_mut().zip(&r.gates) {
            a.0.iter_mut().zip(&b.0).for_each(|(x, y)| *x += y);
            a.1.iter_mut().zip(&b.1).for_each(|(x, y)| *x += y);
        }
    }
    let k = results.len() as f64;
    for (s, t) in &mut acc {
        s.iter_mut().for_each(|x| *x /= k);
        t.iter_mut().for_each(|x| *x /= k);
    }
    acc
}

/// Minimizes the configured loss with Adam over shuffled mini-batches.
///
/// Per-sample graphs run in parallel; their gradients are summed in batch
/// order so results do not depend on the thread count.
pub fn train(
    model: &mut GagcnModel,
    train: &[PreparedWindow],
    val: &[PreparedWindow],
    cfg: &TrainConfig,
    joint_mask: &[bool],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set has no windows".into()));
    }
    if joint_mask.len() != model.config.joints {
        return Err(Error::Config(format!(
            "joint mask has {} entries for {} joints",
            joint_mask.len(),
            model.config.joints
        )));
    }
    let mut outcome = TrainOutcome::default();
    let mut adam = Adam::new(&model.store);
    let mut last_good = model.store.clone();
    let shuffle = Rng::new(cfg.seed).split_named("batches");
    let mut step = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        let order = shuffle.split(epoch as u64).permutation(train.len());
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let model_ref = &*model;
            let results = batch
                .par_iter()
                .map(|&i| sample(model_ref, &train[i], cfg.loss_kind, joint_mask))
                .collect::<Result<Vec<_>>>()?;
            let batch_loss = results.iter().map(|r| r.loss).sum::<f64>() / results.len() as f64;
            if !batch_loss.is_finite() || batch_loss > DIVERGENCE_THRESHOLD {
                let msg = format!("loss {batch_loss} at step {step} exceeds {DIVERGENCE_THRESHOLD}");
                log::error!("training diverged: {msg}; restoring last completed epoch");
                model.store = last_good;
                outcome.diverged = Some(msg);
                break 'epochs;
            }
            if step % cfg.log_every == 0 && !results[0].gates.is_empty() {
                for (layer, (s, t)) in mean_gates(&results).into_iter().enumerate() {
                    outcome.gates.push(GateRecord {
                        step,
                        layer,
                        axis: Axis::Spatial,
                        weights: s,
                    });
                    outcome.gates.push(GateRecord {
                        step,
                        layer,
                        axis: Axis::Temporal,
                        weights: t,
                    });
                }
            }
            model.store.zero_grad();
            for r in &results {
                model.store.accumulate(&r.grads);
            }
            let inv = 1.0 / results.len() as f64;
            let ids: Vec<ParamId> = model.store.ids().collect();
            for id in ids {
                model.store.get_mut(id).grad.data_mut().iter_mut().for_each(|g| *g *= inv);
            }
            adam.step(&mut model.store, lr)?;
            outcome.step_losses.push(batch_loss);
            epoch_loss += batch_loss * results.len() as f64;
            step += 1;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(mean_loss(model, val, cfg.loss_kind, joint_mask)?)
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.4}{}",
            val_loss.map(|v| format!(", val {v:.4}")).unwrap_or_default()
        );
        outcome.epochs.push(EpochRecord {
            epoch,
            step,
            learning_rate: lr,
            train_loss,
            val_loss,
        });
        last_good = model.store.clone();
    }
    Ok(outcome)
}
