//! Epsilon-rule layer-wise relevance propagation.
//!
//! Dense and convolution layers redistribute relevance with
//! `R_i = a_i * sum_j w_ij * R_j / (z_j + eps * sign(z_j))`, where `z_j`
//! includes the bias (the bias share is absorbed, not redistributed).
//! ReLU and Flatten pass relevance through; max-pooling routes each output's
//! relevance to the winning input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcore::{argmax, forward_layer, maxpool_argmax, ActivationTrace, LayerSpec, NetworkModel, Task, Tensor};

#[derive(Debug, Error)]
pub enum LrpError {
    #[error("empty output vector")]
    EmptyOutput,
    #[error("true-class seeding needs the expected label")]
    MissingLabel,
    #[error("label {0} out of range for the output")]
    LabelOutOfRange(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("trace does not match model: {0}")]
    TraceMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, LrpError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    #[default]
    PredictedClass,
    TrueClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrpConfig {
    pub epsilon: f64,
    pub seed_mode: SeedMode,
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            seed_mode: SeedMode::PredictedClass,
        }
    }
}

impl LrpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(LrpError::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Relevance heatmap at the output of one layer for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub image_id: String,
    pub layer_index: usize,
    pub relevance: Tensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LrpStats {
    /// Terms skipped because both `z_j` and epsilon were zero while `R_j != 0`.
    pub zero_denominators: usize,
}

/// Seed relevance at the network output. Classification keeps only the
/// selected class's logit (ties pick the lowest index); regression passes the
/// output through.
pub fn output_relevance(output: &[f64], task: &Task, seed_mode: SeedMode, true_label: Option<usize>) -> Result<Tensor> {
    if output.is_empty() {
        return Err(LrpError::EmptyOutput);
    }
    let data = match task {
        Task::Classification { .. } => {
            let class = match seed_mode {
                SeedMode::PredictedClass => argmax(output),
                SeedMode::TrueClass => {
                    let l = true_label.ok_or(LrpError::MissingLabel)?;
                    if l >= output.len() {
                        return Err(LrpError::LabelOutOfRange(l));
                    }
                    l
                }
            };
            let mut seed = vec![0.0; output.len()];
            seed[class] = output[class];
            seed
        }
        Task::Regression { .. } => output.to_vec(),
    };
    Tensor::vector(data).map_err(|e| LrpError::Shape(e.to_string()))
}

fn stabilized(z: f64, r: f64, epsilon: f64, stats: &mut LrpStats) -> f64 {
    if epsilon == 0.0 {
        if z == 0.0 {
            if r != 0.0 {
                stats.zero_denominators += 1;
            }
            0.0
        } else {
            r / z
        }
    } else {
        let sign = if z >= 0.0 { 1.0 } else { -1.0 };
        r / (z + epsilon * sign)
    }
}

/// Moves relevance from a layer's output back to its input.
pub fn propagate_layer(
    layer: &LayerSpec,
    params: Option<(&Tensor, &Tensor)>,
    activations_in: &Tensor,
    relevance_out: &Tensor,
    epsilon: f64,
    stats: &mut LrpStats,
) -> Result<Tensor> {
    let out_shape = layer
        .output_shape(activations_in.shape())
        .map_err(|d| LrpError::Shape(format!("{}: {d}", layer.name())))?;
    if relevance_out.shape() != out_shape.as_slice() {
        return Err(LrpError::Shape(format!(
            "{}: relevance {:?} does not match output {out_shape:?}",
            layer.name(),
            relevance_out.shape()
        )));
    }
    let a = activations_in.data();
    let r = relevance_out.data();
    let in_shape = activations_in.shape().to_vec();
    let relevance = match *layer {
        LayerSpec::Dense { inputs, outputs } => {
            let (w, _) = params.ok_or_else(|| LrpError::Shape("dense layer without parameters".into()))?;
            let z = forward_layer(0, layer, params, activations_in).map_err(|e| LrpError::Shape(e.to_string()))?;
            let w = w.data();
            let mut ri = vec![0.0; inputs];
            for j in 0..outputs {
                let s = stabilized(z.data()[j], r[j], epsilon, stats);
                if s == 0.0 {
                    continue;
                }
                let row = &w[j * inputs..(j + 1) * inputs];
                for i in 0..inputs {
                    ri[i] += row[i] * s;
                }
            }
            ri.iter_mut().zip(a).for_each(|(c, ai)| *c *= ai);
            ri
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => {
            let (w, _) = params.ok_or_else(|| LrpError::Shape("conv2d layer without parameters".into()))?;
            let z = forward_layer(0, layer, params, activations_in).map_err(|e| LrpError::Shape(e.to_string()))?;
            let w = w.data();
            let (h, wd) = (in_shape[1], in_shape[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let mut c = vec![0.0; a.len()];
            for o in 0..out_channels {
                for y in 0..oh {
                    for xo in 0..ow {
                        let j = (o * oh + y) * ow + xo;
                        let s = stabilized(z.data()[j], r[j], epsilon, stats);
                        if s == 0.0 {
                            continue;
                        }
                        for ch in 0..in_channels {
                            for ky in 0..kernel {
                                let row = (ch * h + y * stride + ky) * wd + xo * stride;
                                let wrow = ((o * in_channels + ch) * kernel + ky) * kernel;
                                for kx in 0..kernel {
                                    c[row + kx] += w[wrow + kx] * s;
                                }
                            }
                        }
                    }
                }
            }
            c.iter_mut().zip(a).for_each(|(ci, ai)| *ci *= ai);
            c
        }
        LayerSpec::Relu | LayerSpec::Flatten => r.to_vec(),
        LayerSpec::MaxPool2d { .. } => {
            let mut ri = vec![0.0; a.len()];
            for (o, i) in maxpool_argmax(layer, activations_in).into_iter().enumerate() {
                ri[i] += r[o];
            }
            ri
        }
    };
    Tensor::new(in_shape, relevance).map_err(|e| LrpError::Shape(e.to_string()))
}

/// One heatmap per layer (index `k` holds the relevance arriving at layer
/// `k`'s output), ordered by layer index. The last entry is the output seed.
pub fn heatmaps_for_image(
    model: &NetworkModel,
    image_id: &str,
    trace: &ActivationTrace,
    config: &LrpConfig,
    true_label: Option<usize>,
) -> Result<(Vec<Heatmap>, LrpStats)> {
    config.validate()?;
    let depth = model.layers().len();
    if trace.outputs.len() != depth || trace.inputs.len() != depth {
        return Err(LrpError::TraceMismatch(format!(
            "model has {depth} layers, trace has {}",
            trace.outputs.len()
        )));
    }
    for k in 0..depth {
        if trace.outputs[k].shape() != model.output_shape(k) {
            return Err(LrpError::TraceMismatch(format!(
                "layer {k} output is {:?}, model expects {:?}",
                trace.outputs[k].shape(),
                model.output_shape(k)
            )));
        }
    }
    let mut stats = LrpStats::default();
    let mut relevance = output_relevance(trace.outputs[depth - 1].data(), model.task(), config.seed_mode, true_label)?;
    let mut maps = Vec::with_capacity(depth);
    for k in (0..depth).rev() {
        let below = propagate_layer(
            &model.layers()[k],
            model.params(k).map(|p| (&p.weight, &p.bias)),
            &trace.inputs[k],
            &relevance,
            config.epsilon,
            &mut stats,
        )?;
        maps.push(Heatmap {
            image_id: image_id.to_string(),
            layer_index: k,
            relevance,
        });
        relevance = below;
    }
    maps.reverse();
    Ok((maps, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{forward, Params};

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn seeds() {
        let cls = Task::Classification { num_classes: 2 };
        let s = output_relevance(&[0.2, 3.0], &cls, SeedMode::PredictedClass, None).unwrap();
        assert_eq!(s.data(), &[0.0, 3.0]);
        let s = output_relevance(&[5.0, 5.0], &cls, SeedMode::PredictedClass, None).unwrap();
        assert_eq!(s.data(), &[5.0, 0.0]);
        let s = output_relevance(&[0.2, 3.0], &cls, SeedMode::TrueClass, Some(0)).unwrap();
        assert_eq!(s.data(), &[0.2, 0.0]);
        assert!(output_relevance(&[0.2, 3.0], &cls, SeedMode::TrueClass, None).is_err());
        let reg = Task::Regression { output_dim: 2, loss_threshold: 1.0 };
        let s = output_relevance(&[1.5, -0.2], &reg, SeedMode::PredictedClass, None).unwrap();
        assert_eq!(s.data(), &[1.5, -0.2]);
        assert!(matches!(output_relevance(&[], &cls, SeedMode::PredictedClass, None), Err(LrpError::EmptyOutput)));
    }

    #[test]
    fn dense_identity_routes_relevance() {
        let layer = LayerSpec::Dense { inputs: 2, outputs: 2 };
        let w = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::zeros(vec![2]);
        let mut stats = LrpStats::default();
        let r = propagate_layer(&layer, Some((&w, &b)), &t(vec![2], vec![1.0, 2.0]), &t(vec![2], vec![0.0, 2.0]), 0.0, &mut stats)
            .unwrap();
        assert_eq!(r.data(), &[0.0, 2.0]);
    }

    #[test]
    fn dense_epsilon_rule_by_hand() {
        // two inputs, one output: w = [1, 3], z = 4, R = 4 -> [1*1*4/4, 1*3*4/4]
        let layer = LayerSpec::Dense { inputs: 2, outputs: 1 };
        let w = t(vec![1, 2], vec![1.0, 3.0]);
        let b = Tensor::zeros(vec![1]);
        let mut stats = LrpStats::default();
        let r = propagate_layer(&layer, Some((&w, &b)), &t(vec![2], vec![1.0, 1.0]), &t(vec![1], vec![4.0]), 0.0, &mut stats)
            .unwrap();
        assert_eq!(r.data(), &[1.0, 3.0]);
    }

    #[test]
    fn maxpool_winner_takes_all() {
        let layer = LayerSpec::MaxPool2d { kernel: 2, stride: 2 };
        let mut stats = LrpStats::default();
        let r = propagate_layer(&layer, None, &t(vec![1, 2, 2], vec![1.0, 5.0, 2.0, 3.0]), &t(vec![1, 1, 1], vec![7.0]), 0.0, &mut stats)
            .unwrap();
        assert_eq!(r.data(), &[0.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_denominator_is_counted() {
        let layer = LayerSpec::Dense { inputs: 2, outputs: 1 };
        let w = t(vec![1, 2], vec![1.0, -1.0]);
        let b = Tensor::zeros(vec![1]);
        let mut stats = LrpStats::default();
        let r = propagate_layer(&layer, Some((&w, &b)), &t(vec![2], vec![1.0, 1.0]), &t(vec![1], vec![2.0]), 0.0, &mut stats)
            .unwrap();
        assert_eq!(r.data(), &[0.0, 0.0]);
        assert_eq!(stats.zero_denominators, 1);
        // epsilon > 0 uses sign(0) = +1 and stays finite
        let r = propagate_layer(&layer, Some((&w, &b)), &t(vec![2], vec![1.0, 1.0]), &t(vec![1], vec![2.0]), 0.5, &mut stats)
            .unwrap();
        assert_eq!(r.data(), &[4.0, -4.0]);
        assert_eq!(stats.zero_denominators, 1);
    }

    #[test]
    fn flatten_reshapes() {
        let mut stats = LrpStats::default();
        let r = propagate_layer(&LayerSpec::Flatten, None, &t(vec![1, 2, 2], vec![1.0; 4]), &t(vec![4], vec![1.0, 2.0, 3.0, 4.0]), 0.0, &mut stats)
            .unwrap();
        assert_eq!(r.shape(), &[1, 2, 2]);
        assert_eq!(r.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn trace_mismatch_is_rejected() {
        let m = NetworkModel::new(
            vec![2],
            vec![LayerSpec::Dense { inputs: 2, outputs: 2 }, LayerSpec::Relu],
            vec![Params { weight: t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]), bias: Tensor::zeros(vec![2]) }],
            Task::Classification { num_classes: 2 },
        )
        .unwrap();
        let (_, mut trace) = forward(&m, &t(vec![2], vec![1.0, 2.0])).unwrap();
        trace.outputs.pop();
        trace.inputs.pop();
        assert!(matches!(
            heatmaps_for_image(&m, "x", &trace, &LrpConfig::default(), None),
            Err(LrpError::TraceMismatch(_))
        ));
    }
}
