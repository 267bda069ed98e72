use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::forward_layer;
use super::{LayerSpec, NetError, Result, Tensor};
use crate::seed;

/// What the network predicts and how an error is decided.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Classification { num_classes: usize },
    /// `loss_threshold` has no default: an output is an error iff its loss is
    /// strictly greater than it.
    Regression { output_dim: usize, loss_threshold: f64 },
}

impl Task {
    pub fn output_dim(&self) -> usize {
        match *self {
            Task::Classification { num_classes } => num_classes,
            Task::Regression { output_dim, .. } => output_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Task::Classification { num_classes } if num_classes < 2 => Err(NetError::Model(
                format!("classification needs at least 2 classes, got {num_classes}"),
            )),
            Task::Regression { output_dim: 0, .. } => {
                Err(NetError::Model("regression output_dim must be positive".into()))
            }
            Task::Regression { loss_threshold, .. }
                if !(loss_threshold.is_finite() && loss_threshold > 0.0) =>
            {
                Err(NetError::Model(format!(
                    "regression loss_threshold must be > 0, got {loss_threshold}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Expected output of one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

/// What the model produced for one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Class(usize),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// A sequential network plus its task.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<Option<Params>>,
    shapes: Vec<Vec<usize>>,
    task: Task,
}

/// Per-layer inputs and outputs recorded during one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub inputs: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

fn check_chain(input_shape: &[usize], layers: &[LayerSpec], task: &Task) -> Result<Vec<Vec<usize>>> {
    if layers.is_empty() {
        return Err(NetError::Model("network has no layers".into()));
    }
    task.validate()?;
    let mut shapes = Vec::with_capacity(layers.len());
    let mut shape = input_shape.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        shape = layer.output_shape(&shape).map_err(|detail| NetError::Shape {
            layer: i,
            kind: layer.name().into(),
            detail,
        })?;
        shapes.push(shape.clone());
    }
    if shape != [task.output_dim()] {
        return Err(NetError::Model(format!(
            "final output shape {shape:?} does not match task output [{}]",
            task.output_dim()
        )));
    }
    Ok(shapes)
}

impl NetworkModel {
    /// Builds a model from explicit parameters, given in layer order for
    /// parameterized layers only.
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: Vec<Params>,
        task: Task,
    ) -> Result<Self> {
        let shapes = check_chain(&input_shape, &layers, &task)?;
        let expected = layers.iter().filter(|l| l.has_params()).count();
        if params.len() != expected {
            return Err(NetError::Model(format!(
                "{expected} parameterized layers but {} parameter sets",
                params.len()
            )));
        }
        let mut given = params.into_iter();
        let mut slots = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            match layer.param_shapes() {
                Some((ws, bs)) => {
                    let p = given.next().expect("count checked above");
                    if p.weight.shape() != ws.as_slice() || p.bias.shape() != bs.as_slice() {
                        return Err(NetError::Shape {
                            layer: i,
                            kind: layer.name().into(),
                            detail: format!(
                                "parameters {:?}/{:?} do not match expected {ws:?}/{bs:?}",
                                p.weight.shape(),
                                p.bias.shape()
                            ),
                        });
                    }
                    slots.push(Some(p));
                }
                None => slots.push(None),
            }
        }
        Ok(Self {
            input_shape,
            layers,
            params: slots,
            shapes,
            task,
        })
    }

    /// He-uniform weights, zero biases, drawn from the `init` stream of `seed`.
    pub fn init(input_shape: Vec<usize>, layers: Vec<LayerSpec>, task: Task, seed: u64) -> Result<Self> {
        check_chain(&input_shape, &layers, &task)?;
        let mut rng = seed::stream(seed, "init");
        let params = layers
            .iter()
            .filter_map(LayerSpec::param_shapes)
            .map(|(ws, bs)| {
                let fan_in: usize = ws[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let n: usize = ws.iter().product();
                let w = (0..n)
                    .map(|_| to_f32_precision(rng.gen_range(-bound..bound)))
                    .collect();
                let nb = bs[0];
                Params {
                    weight: Tensor::from_parts(ws, w),
                    bias: Tensor::zeros(vec![nb]),
                }
            })
            .collect();
        Self::new(input_shape, layers, params, task)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    /// Output shape of layer `k`.
    pub fn output_shape(&self, k: usize) -> &[usize] {
        &self.shapes[k]
    }

    pub fn params(&self, k: usize) -> Option<&Params> {
        self.params[k].as_ref()
    }

    pub(crate) fn param_pair(&self, k: usize) -> Option<(&Tensor, &Tensor)> {
        self.params[k].as_ref().map(|p| (&p.weight, &p.bias))
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Params> {
        self.params.iter_mut().flatten()
    }

    /// Parameter sets in layer order, skipping parameter-free layers.
    pub fn param_sets(&self) -> impl Iterator<Item = &Params> {
        self.params.iter().flatten()
    }

    pub fn param_count(&self) -> usize {
        self.param_sets().map(|p| p.weight.len() + p.bias.len()).sum()
    }
}

pub(crate) fn to_f32_precision(v: f64) -> f64 {
    f64::from(v as f32)
}

/// Runs the network on one input, recording every layer's input and output.
/// The output is the last layer's raw value (logits for classification).
pub fn forward(model: &NetworkModel, input: &Tensor) -> Result<(Tensor, ActivationTrace)> {
    if input.shape() != model.input_shape.as_slice() {
        return Err(NetError::Shape {
            layer: 0,
            kind: model.layers[0].name().into(),
            detail: format!(
                "model input is {:?}, got {:?}",
                model.input_shape,
                input.shape()
            ),
        });
    }
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut outputs = Vec::with_capacity(model.layers.len());
    let mut current = input.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        let next = forward_layer(i, layer, model.param_pair(i), &current)?;
        inputs.push(current);
        current = next;
        outputs.push(current.clone());
    }
    Ok((current, ActivationTrace { inputs, outputs }))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Loss for one sample and its gradient with respect to the output:
/// softmax cross-entropy for classification, mean squared error for regression.
pub fn loss_and_grad(task: &Task, output: &Tensor, target: &Target) -> Result<(f64, Tensor)> {
    let out = output.data();
    let (loss, grad) = match (task, target) {
        (Task::Classification { num_classes }, Target::Class(label)) => {
            if *label >= *num_classes {
                return Err(NetError::LabelOutOfRange {
                    label: *label,
                    num_classes: *num_classes,
                });
            }
            let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = out.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let loss = total.ln() + max - out[*label];
            let grad = exps
                .iter()
                .enumerate()
                .map(|(i, e)| e / total - if i == *label { 1.0 } else { 0.0 })
                .collect();
            (loss, grad)
        }
        (Task::Regression { output_dim, .. }, Target::Values(t)) => {
            if t.len() != *output_dim {
                return Err(NetError::TargetMismatch(format!(
                    "regression target has {} values, model outputs {output_dim}",
                    t.len()
                )));
            }
            let n = t.len() as f64;
            let loss = out.iter().zip(t).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / n;
            let grad = out.iter().zip(t).map(|(o, t)| 2.0 * (o - t) / n).collect();
            (loss, grad)
        }
        (task, target) => {
            return Err(NetError::TargetMismatch(format!("{target:?} for {task:?}")));
        }
    };
    if !loss.is_finite() {
        return Err(NetError::NonFiniteLoss(format!("loss {loss} for output {out:?}")));
    }
    Ok((loss, Tensor::from_parts(output.shape().to_vec(), grad)))
}
