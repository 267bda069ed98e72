#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rccdbg_core::netcore::{LayerSpec, NetworkModel, Params, Task, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Model with parameters drawn uniformly from the given ranges.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    input: Vec<usize>,
    layers: Vec<LayerSpec>,
    task: Task,
    weights: (f64, f64),
    biases: (f64, f64),
) -> NetworkModel {
    let params = layers
        .iter()
        .filter_map(LayerSpec::param_shapes)
        .map(|(ws, bs)| Params {
            weight: random_tensor(rng, ws, weights.0, weights.1),
            bias: if biases.0 == biases.1 {
                Tensor::zeros(bs)
            } else {
                random_tensor(rng, bs, biases.0, biases.1)
            },
        })
        .collect();
    NetworkModel::new(input, layers, params, task).unwrap()
}

/// A handful of small architectures (each under 64 parameters).
pub fn small_architectures() -> Vec<(Vec<usize>, Vec<LayerSpec>, Task)> {
    use LayerSpec::*;
    vec![
        (
            vec![4],
            vec![Dense { inputs: 4, outputs: 5 }, Relu, Dense { inputs: 5, outputs: 3 }],
            Task::Classification { num_classes: 3 },
        ),
        (
            vec![1, 3, 3],
            vec![
                Conv2d { in_channels: 1, out_channels: 2, kernel: 2, stride: 1 },
                Relu,
                Flatten,
                Dense { inputs: 8, outputs: 2 },
            ],
            Task::Classification { num_classes: 2 },
        ),
        (
            vec![2, 4, 4],
            vec![
                Conv2d { in_channels: 2, out_channels: 2, kernel: 2, stride: 1 },
                MaxPool2d { kernel: 2, stride: 1 },
                Flatten,
                Dense { inputs: 8, outputs: 2 },
            ],
            Task::Regression { output_dim: 2, loss_threshold: 0.5 },
        ),
        (
            vec![3],
            vec![Dense { inputs: 3, outputs: 6 }, Relu, Dense { inputs: 6, outputs: 1 }],
            Task::Regression { output_dim: 1, loss_threshold: 0.1 },
        ),
    ]
}
