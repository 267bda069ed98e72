//! Two-file model format: `model.arch` (text) and `model.bin` (little-endian
//! `f32`, weight then bias for each parameterized layer in layer order).
//!
//! ```text
//! rccdbg-model
//! version 1
//! task classification 2
//! input 1 16 16
//! layer conv2d 1 6 3 1
//! layer relu
//! layer maxpool2d 2 2
//! layer flatten
//! layer dense 294 2
//! ```

use std::fs;
use std::path::Path;

use super::{LayerSpec, NetError, NetworkModel, Params, Result, Task, Tensor};

pub const ARCH_FILE: &str = "model.arch";
pub const WEIGHTS_FILE: &str = "model.bin";
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "rccdbg-model";

fn arch_text(model: &NetworkModel) -> String {
    let mut s = format!("{MAGIC}\nversion {FORMAT_VERSION}\n");
    match model.task() {
        Task::Classification { num_classes } => s += &format!("task classification {num_classes}\n"),
        Task::Regression {
            output_dim,
            loss_threshold,
        } => s += &format!("task regression {output_dim} {loss_threshold}\n"),
    }
    let dims: Vec<String> = model.input_shape().iter().map(usize::to_string).collect();
    s += &format!("input {}\n", dims.join(" "));
    for layer in model.layers() {
        let line = match *layer {
            LayerSpec::Dense { inputs, outputs } => format!("dense {inputs} {outputs}"),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => format!("conv2d {in_channels} {out_channels} {kernel} {stride}"),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::MaxPool2d { kernel, stride } => format!("maxpool2d {kernel} {stride}"),
            LayerSpec::Flatten => "flatten".into(),
        };
        s += &format!("layer {line}\n");
    }
    s
}

/// Writes `model.arch` and `model.bin` into `dir`, creating it if needed.
pub fn save_model(model: &NetworkModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(ARCH_FILE), arch_text(model))?;
    let mut bytes = Vec::with_capacity(model.param_count() * 4);
    for p in model.param_sets() {
        for v in p.weight.data().iter().chain(p.bias.data()) {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(dir.join(WEIGHTS_FILE), bytes)?;
    Ok(())
}

struct Arch {
    task: Task,
    input: Vec<usize>,
    layers: Vec<LayerSpec>,
}

fn parse_arch(text: &str) -> std::result::Result<Arch, String> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(format!("missing '{MAGIC}' header")),
    }
    let mut task = None;
    let mut input = None;
    let mut layers = Vec::new();
    let mut version_seen = false;
    for (no, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |m: &str| format!("line {no}: {m}: {line:?}");
        let nums = |from: usize, n: usize| -> std::result::Result<Vec<usize>, String> {
            if toks.len() != from + n {
                return Err(err(&format!("expected {n} sizes")));
            }
            toks[from..]
                .iter()
                .map(|t| t.parse::<usize>().map_err(|_| err("bad size")))
                .collect()
        };
        match toks[0] {
            "version" => {
                let v: u32 = toks
                    .get(1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err("bad version"))?;
                if v != FORMAT_VERSION {
                    return Err(format!("version mismatch: file has {v}, supported {FORMAT_VERSION}"));
                }
                version_seen = true;
            }
            "task" => {
                task = Some(match toks.get(1).copied() {
                    Some("classification") => Task::Classification {
                        num_classes: nums(2, 1)?[0],
                    },
                    Some("regression") if toks.len() == 4 => Task::Regression {
                        output_dim: toks[2].parse().map_err(|_| err("bad output_dim"))?,
                        loss_threshold: toks[3].parse().map_err(|_| err("bad loss_threshold"))?,
                    },
                    _ => return Err(err("unknown task")),
                });
            }
            "input" => input = Some(nums(1, toks.len() - 1)?),
            "layer" => {
                let layer = match toks.get(1).copied() {
                    Some("dense") => {
                        let n = nums(2, 2)?;
                        LayerSpec::Dense { inputs: n[0], outputs: n[1] }
                    }
                    Some("conv2d") => {
                        let n = nums(2, 4)?;
                        LayerSpec::Conv2d {
                            in_channels: n[0],
                            out_channels: n[1],
                            kernel: n[2],
                            stride: n[3],
                        }
                    }
                    Some("relu") if toks.len() == 2 => LayerSpec::Relu,
                    Some("maxpool2d") => {
                        let n = nums(2, 2)?;
                        LayerSpec::MaxPool2d { kernel: n[0], stride: n[1] }
                    }
                    Some("flatten") if toks.len() == 2 => LayerSpec::Flatten,
                    _ => return Err(err("unknown layer")),
                };
                layers.push(layer);
            }
            _ => return Err(err("unknown directive")),
        }
    }
    if !version_seen {
        return Err("missing version line".into());
    }
    Ok(Arch {
        task: task.ok_or("missing task line")?,
        input: input.ok_or("missing input line")?,
        layers,
    })
}

/// Loads a model saved by [`save_model`], checking version, payload length
/// and shape consistency.
pub fn load_model(dir: &Path) -> Result<NetworkModel> {
    let arch_path = dir.join(ARCH_FILE);
    let bin_path = dir.join(WEIGHTS_FILE);
    let fail = |path: &Path, cause: String| NetError::Persist {
        path: path.display().to_string(),
        cause,
    };
    let text = fs::read_to_string(&arch_path).map_err(|e| fail(&arch_path, e.to_string()))?;
    let arch = parse_arch(&text).map_err(|c| fail(&arch_path, c))?;
    let bytes = fs::read(&bin_path).map_err(|e| fail(&bin_path, e.to_string()))?;

    // Validate the layer chain before trusting any parameter shapes.
    let mut shape = arch.input.clone();
    for (i, layer) in arch.layers.iter().enumerate() {
        shape = layer
            .output_shape(&shape)
            .map_err(|d| fail(&arch_path, format!("shape check failed at layer {i} ({}): {d}", layer.name())))?;
    }
    let shapes: Vec<(Vec<usize>, Vec<usize>)> =
        arch.layers.iter().filter_map(LayerSpec::param_shapes).collect();
    let needed: usize = shapes
        .iter()
        .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
        .sum();
    if bytes.len() % 4 != 0 || bytes.len() / 4 != needed {
        return Err(fail(
            &bin_path,
            format!(
                "weight payload has {} bytes, architecture needs {} floats ({} bytes)",
                bytes.len(),
                needed,
                needed * 4
            ),
        ));
    }
    let mut floats = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    let mut params = Vec::with_capacity(shapes.len());
    for (ws, bs) in shapes {
        let w: Vec<f64> = floats.by_ref().take(ws.iter().product()).collect();
        let b: Vec<f64> = floats.by_ref().take(bs.iter().product()).collect();
        params.push(Params {
            weight: Tensor::new(ws, w).map_err(|e| fail(&bin_path, e.to_string()))?,
            bias: Tensor::new(bs, b).map_err(|e| fail(&bin_path, e.to_string()))?,
        });
    }
    NetworkModel::new(arch.input, arch.layers, params, arch.task).map_err(|e| fail(&arch_path, e.to_string()))
}
