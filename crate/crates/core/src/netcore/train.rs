use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layer::backward_layer;
use super::model::{forward, loss_and_grad, to_f32_precision};
use super::{NetError, NetworkModel, Params, Result, Target, Tensor};
use crate::seed;

/// Mean-loss gradients, aligned with the model's layers (`None` for
/// parameter-free layers).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub layers: Vec<Option<Params>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 20,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Weight and bias gradients of one parameterized layer.
type LayerGrad = Option<(Tensor, Tensor)>;

fn sample_gradients(model: &NetworkModel, input: &Tensor, target: &Target) -> Result<(f64, Vec<LayerGrad>)> {
    let (output, trace) = forward(model, input)?;
    let (loss, mut grad) = loss_and_grad(model.task(), &output, target)?;
    let mut per_layer = vec![None; model.layers().len()];
    for k in (0..model.layers().len()).rev() {
        let (gx, gp) = backward_layer(&model.layers()[k], model.param_pair(k), &trace.inputs[k], &grad);
        per_layer[k] = gp;
        grad = gx;
    }
    Ok((loss, per_layer))
}

/// Gradients of the mean loss over `batch` with respect to every weight and
/// bias. Per-sample work runs in parallel; the reduction is sequential in
/// batch order so the result does not depend on thread count.
pub fn gradients(model: &NetworkModel, batch: &[(Tensor, Target)]) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(NetError::Empty("batch"));
    }
    let per_sample: Vec<_> = batch
        .par_iter()
        .map(|(x, t)| sample_gradients(model, x, t))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut acc: Vec<Option<(Vec<f64>, Vec<f64>)>> = model
        .layers()
        .iter()
        .enumerate()
        .map(|(k, _)| model.params(k).map(|p| (vec![0.0; p.weight.len()], vec![0.0; p.bias.len()])))
        .collect();
    for (l, layers) in per_sample {
        loss += l;
        for (slot, g) in acc.iter_mut().zip(layers) {
            if let (Some((aw, ab)), Some((gw, gb))) = (slot.as_mut(), g) {
                aw.iter_mut().zip(gw.data()).for_each(|(a, g)| *a += g);
                ab.iter_mut().zip(gb.data()).for_each(|(a, g)| *a += g);
            }
        }
    }
    let layers = acc
        .into_iter()
        .enumerate()
        .map(|(k, slot)| {
            slot.map(|(w, b)| {
                let p = model.params(k).expect("slot exists only for parameterized layers");
                Params {
                    weight: Tensor::from_parts(p.weight.shape().to_vec(), w.into_iter().map(|v| v / n).collect()),
                    bias: Tensor::from_parts(p.bias.shape().to_vec(), b.into_iter().map(|v| v / n).collect()),
                }
            })
        })
        .collect();
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(NetError::NonFiniteLoss(format!("mean batch loss {loss}")));
    }
    Ok(Gradients { loss, layers })
}

/// Mini-batch SGD starting from the given model's weights. The data order is
/// reshuffled each epoch from the `shuffle` stream of `hyper.seed`.
/// Parameters are rounded to `f32` precision after every step.
pub fn train_sgd(
    model: &NetworkModel,
    data: &[(Tensor, Target)],
    hyper: &SgdConfig,
) -> Result<(NetworkModel, TrainReport)> {
    if !(hyper.lr.is_finite() && hyper.lr >= 0.0) {
        return Err(NetError::Hyper(format!("learning rate must be >= 0, got {}", hyper.lr)));
    }
    if hyper.epochs == 0 {
        return Err(NetError::Hyper("epochs must be at least 1".into()));
    }
    if hyper.batch_size == 0 {
        return Err(NetError::Hyper("batch_size must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(NetError::Empty("training set"));
    }
    let mut model = model.clone();
    let mut rng = seed::stream(hyper.seed, "shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..hyper.epochs {
        let last_finite_epoch = epoch.checked_sub(1);
        let diverged = || NetError::Diverged { epoch, last_finite_epoch };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<(Tensor, Target)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let grads = match gradients(&model, &batch) {
                Ok(g) => g,
                Err(NetError::NonFiniteLoss(_)) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            total += grads.loss * chunk.len() as f64;
            for (p, g) in model.params_mut().zip(grads.layers.iter().flatten()) {
                step(&mut p.weight, &g.weight, hyper.lr);
                step(&mut p.bias, &g.bias, hyper.lr);
            }
            if model.param_sets().any(|p| p.weight.data().iter().chain(p.bias.data()).any(|v| !v.is_finite())) {
                return Err(diverged());
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(diverged());
        }
        report.epoch_losses.push(mean);
    }
    Ok((model, report))
}

fn step(param: &mut Tensor, grad: &Tensor, lr: f64) {
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p = to_f32_precision(*p - lr * g);
    }
}
