use serde::{Deserialize, Serialize};

use super::{NetError, Result, Tensor};

/// One layer of a sequential network.
///
/// Dense weights are `[outputs, inputs]`; convolution kernels are
/// `[out_channels, in_channels, kernel, kernel]`. Spatial inputs are `[C, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// `(weight shape, bias shape)` for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }

    /// Output shape for an input of shape `input`, or a description of why
    /// the input does not fit.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err("dense sizes must be positive".into());
                }
                if input != [inputs] {
                    return Err(format!("expects input [{inputs}], got {input:?}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err("conv2d sizes must be positive".into());
                }
                let [c, h, w] = spatial(input)?;
                if c != in_channels {
                    return Err(format!("expects {in_channels} channels, got {c}"));
                }
                if kernel > h || kernel > w {
                    return Err(format!("kernel {kernel} exceeds input {h}x{w}"));
                }
                Ok(vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                if kernel == 0 || stride == 0 {
                    return Err("maxpool2d sizes must be positive".into());
                }
                let [c, h, w] = spatial(input)?;
                if kernel > h || kernel > w {
                    return Err(format!("kernel {kernel} exceeds input {h}x{w}"));
                }
                Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

fn spatial(input: &[usize]) -> std::result::Result<[usize; 3], String> {
    match input {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(format!("expects [channels, height, width], got {input:?}")),
    }
}

fn shape_err(index: usize, spec: &LayerSpec, detail: String) -> NetError {
    NetError::Shape {
        layer: index,
        kind: spec.name().to_string(),
        detail,
    }
}

/// Forward pass through one layer. `params` is `(weight, bias)` for
/// parameterized layers.
pub fn forward_layer(
    index: usize,
    spec: &LayerSpec,
    params: Option<(&Tensor, &Tensor)>,
    input: &Tensor,
) -> Result<Tensor> {
    let out_shape = spec
        .output_shape(input.shape())
        .map_err(|d| shape_err(index, spec, d))?;
    let x = input.data();
    let data = match *spec {
        LayerSpec::Dense { inputs, outputs } => {
            let (w, b) = need_params(index, spec, params)?;
            let (w, b) = (w.data(), b.data());
            (0..outputs)
                .map(|o| {
                    let row = &w[o * inputs..(o + 1) * inputs];
                    b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
                })
                .collect()
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => {
            let (w, b) = need_params(index, spec, params)?;
            let (w, b) = (w.data(), b.data());
            let (h, wd) = (input.shape()[1], input.shape()[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let mut out = vec![0.0; out_channels * oh * ow];
            for o in 0..out_channels {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = b[o];
                        for c in 0..in_channels {
                            for ky in 0..kernel {
                                let row = (c * h + y * stride + ky) * wd + xo * stride;
                                let wrow = ((o * in_channels + c) * kernel + ky) * kernel;
                                for kx in 0..kernel {
                                    acc += w[wrow + kx] * x[row + kx];
                                }
                            }
                        }
                        out[(o * oh + y) * ow + xo] = acc;
                    }
                }
            }
            out
        }
        LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
        LayerSpec::MaxPool2d { .. } => maxpool_argmax(spec, input)
            .into_iter()
            .map(|i| x[i])
            .collect(),
        LayerSpec::Flatten => x.to_vec(),
    };
    Ok(Tensor::from_parts(out_shape, data))
}

fn need_params<'a>(
    index: usize,
    spec: &LayerSpec,
    params: Option<(&'a Tensor, &'a Tensor)>,
) -> Result<(&'a Tensor, &'a Tensor)> {
    params.ok_or_else(|| shape_err(index, spec, "missing parameters".into()))
}

/// For each max-pool output, the flat input index of the winning element.
/// Ties go to the first element in row-major scan order of the window.
///
/// Panics if `spec` is not a max-pool layer or the input does not fit it.
pub fn maxpool_argmax(spec: &LayerSpec, input: &Tensor) -> Vec<usize> {
    let LayerSpec::MaxPool2d { kernel, stride } = *spec else {
        panic!("maxpool_argmax called on {}", spec.name());
    };
    let out = spec
        .output_shape(input.shape())
        .expect("input fits max-pool layer");
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let x = input.data();
    let mut idx = Vec::with_capacity(out.iter().product());
    for c in 0..out[0] {
        for y in 0..out[1] {
            for xo in 0..out[2] {
                let mut best = (c * h + y * stride) * w + xo * stride;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let i = (c * h + y * stride + ky) * w + xo * stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

/// Backward pass through one layer: returns the gradient w.r.t. the layer
/// input and, for parameterized layers, the weight and bias gradients.
pub fn backward_layer(
    spec: &LayerSpec,
    params: Option<(&Tensor, &Tensor)>,
    input: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Option<(Tensor, Tensor)>) {
    let x = input.data();
    let g = grad_out.data();
    match *spec {
        LayerSpec::Dense { inputs, outputs } => {
            let (w, _) = params.expect("dense layer has parameters");
            let w = w.data();
            let mut gx = vec![0.0; inputs];
            let mut gw = vec![0.0; inputs * outputs];
            for o in 0..outputs {
                let go = g[o];
                let row = &w[o * inputs..(o + 1) * inputs];
                let grow = &mut gw[o * inputs..(o + 1) * inputs];
                for i in 0..inputs {
                    gx[i] += row[i] * go;
                    grow[i] = x[i] * go;
                }
            }
            (
                Tensor::from_parts(vec![inputs], gx),
                Some((
                    Tensor::from_parts(vec![outputs, inputs], gw),
                    Tensor::from_parts(vec![outputs], g.to_vec()),
                )),
            )
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => {
            let (w, _) = params.expect("conv2d layer has parameters");
            let w = w.data();
            let (h, wd) = (input.shape()[1], input.shape()[2]);
            let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
            let mut gx = vec![0.0; x.len()];
            let mut gw = vec![0.0; w.len()];
            let mut gb = vec![0.0; out_channels];
            for o in 0..out_channels {
                for y in 0..oh {
                    for xo in 0..ow {
                        let go = g[(o * oh + y) * ow + xo];
                        gb[o] += go;
                        for c in 0..in_channels {
                            for ky in 0..kernel {
                                let row = (c * h + y * stride + ky) * wd + xo * stride;
                                let wrow = ((o * in_channels + c) * kernel + ky) * kernel;
                                for kx in 0..kernel {
                                    gw[wrow + kx] += x[row + kx] * go;
                                    gx[row + kx] += w[wrow + kx] * go;
                                }
                            }
                        }
                    }
                }
            }
            (
                Tensor::from_parts(input.shape().to_vec(), gx),
                Some((
                    Tensor::from_parts(vec![out_channels, in_channels, kernel, kernel], gw),
                    Tensor::from_parts(vec![out_channels], gb),
                )),
            )
        }
        LayerSpec::Relu => {
            let gx = x
                .iter()
                .zip(g)
                .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
                .collect();
            (Tensor::from_parts(input.shape().to_vec(), gx), None)
        }
        LayerSpec::MaxPool2d { .. } => {
            let mut gx = vec![0.0; x.len()];
            for (o, i) in maxpool_argmax(spec, input).into_iter().enumerate() {
                gx[i] += g[o];
            }
            (Tensor::from_parts(input.shape().to_vec(), gx), None)
        }
        LayerSpec::Flatten => (
            Tensor::from_parts(input.shape().to_vec(), g.to_vec()),
            None,
        ),
    }
}
