mod common;

use common::{random_model, random_tensor, rng, small_architectures};
use rand::Rng;
use rccdbg_core::netcore::*;

fn batch_for(model: &NetworkModel, seed: u64, n: usize) -> Vec<(Tensor, Target)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let x = random_tensor(&mut r, model.input_shape().to_vec(), -1.0, 1.0);
            let t = match *model.task() {
                Task::Classification { num_classes } => Target::Class(r.gen_range(0..num_classes)),
                Task::Regression { output_dim, .. } => Target::Values((0..output_dim).map(|_| r.gen_range(-1.0..1.0)).collect()),
            };
            (x, t)
        })
        .collect()
}

fn with_params(model: &NetworkModel, params: Vec<Params>) -> NetworkModel {
    NetworkModel::new(model.input_shape().to_vec(), model.layers().to_vec(), params, *model.task()).unwrap()
}

/// Central finite differences of the mean batch loss, one parameter at a time.
fn finite_difference(model: &NetworkModel, batch: &[(Tensor, Target)], h: f64) -> Vec<f64> {
    let base: Vec<Params> = model.param_sets().cloned().collect();
    let loss = |params: Vec<Params>| gradients(&with_params(model, params), batch).unwrap().loss;
    let mut out = Vec::new();
    for p in 0..base.len() {
        for which in 0..2 {
            let len = if which == 0 { base[p].weight.len() } else { base[p].bias.len() };
            for i in 0..len {
                let bump = |delta: f64| {
                    let mut ps = base.clone();
                    let t = if which == 0 { &mut ps[p].weight } else { &mut ps[p].bias };
                    t.data_mut()[i] += delta;
                    ps
                };
                out.push((loss(bump(h)) - loss(bump(-h))) / (2.0 * h));
            }
        }
    }
    out
}

fn flatten(g: &Gradients) -> Vec<f64> {
    g.layers
        .iter()
        .flatten()
        .flat_map(|p| p.weight.data().iter().chain(p.bias.data()).copied().collect::<Vec<_>>())
        .collect()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut checked = 0;
    for seed in 0..6u64 {
        for (input, layers, task) in small_architectures() {
            let mut r = rng(seed * 31 + 7);
            let model = random_model(&mut r, input, layers, task, (-1.0, 1.0), (-0.5, 0.5));
            assert!(model.layers().len() <= 4 && model.param_count() <= 64);
            let batch = batch_for(&model, seed + 100, 3);
            let analytic = flatten(&gradients(&model, &batch).unwrap());
            let numeric = finite_difference(&model, &batch, 1e-5);
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
            let rel = diff / scale.max(1e-12);
            assert!(rel <= 1e-4, "seed {seed}: relative error {rel:e}");
            checked += 1;
        }
    }
    assert!(checked >= 5);
}

#[test]
fn forward_is_deterministic() {
    let (input, layers, task) = small_architectures().remove(1);
    let model = random_model(&mut rng(3), input, layers, task, (-1.0, 1.0), (-0.1, 0.1));
    let x = random_tensor(&mut rng(4), model.input_shape().to_vec(), 0.0, 1.0);
    assert_eq!(forward(&model, &x).unwrap(), forward(&model, &x).unwrap());
}

fn separable_set() -> Vec<(Tensor, Target)> {
    // label 1 iff x0 - x1 > 0.2, with a margin of 0.2 around the separating line
    let mut r = rng(21);
    let mut out = Vec::new();
    while out.len() < 40 {
        let x0: f64 = r.gen_range(-1.0..1.0);
        let x1: f64 = r.gen_range(-1.0..1.0);
        let s = x0 - x1;
        if (s - 0.2).abs() < 0.2 {
            continue;
        }
        out.push((Tensor::vector(vec![x0, x1]).unwrap(), Target::Class(usize::from(s > 0.2))));
    }
    out
}

#[test]
fn separable_toy_set_is_learned() {
    let data = separable_set();
    let model = NetworkModel::init(
        vec![2],
        vec![LayerSpec::Dense { inputs: 2, outputs: 8 }, LayerSpec::Relu, LayerSpec::Dense { inputs: 8, outputs: 2 }],
        Task::Classification { num_classes: 2 },
        1,
    )
    .unwrap();
    let hyper = SgdConfig { lr: 0.2, epochs: 50, batch_size: 4, seed: 2 };
    let (trained, report) = train_sgd(&model, &data, &hyper).unwrap();
    let items: Vec<EvalItem> = data
        .iter()
        .enumerate()
        .map(|(i, (x, t))| EvalItem { image_id: format!("p{i}"), input: Ok(x.clone()), target: t.clone() })
        .collect();
    let ev = evaluate_dataset(&trained, &items).unwrap();
    assert_eq!(ev.accuracy, 1.0, "losses {:?}", report.epoch_losses);

    let (again, _) = train_sgd(&model, &data, &hyper).unwrap();
    assert_eq!(trained, again);
    let other = SgdConfig { seed: 3, ..hyper };
    assert_ne!(trained, train_sgd(&model, &data, &other).unwrap().0);
}

#[test]
fn error_flags_are_consistent() {
    for (input, layers, task) in small_architectures() {
        let model = random_model(&mut rng(5), input, layers, task, (-1.0, 1.0), (-0.2, 0.2));
        let items: Vec<EvalItem> = batch_for(&model, 6, 12)
            .into_iter()
            .enumerate()
            .map(|(i, (x, t))| EvalItem { image_id: format!("i{i}"), input: Ok(x), target: t })
            .collect();
        let ev = evaluate_dataset(&model, &items).unwrap();
        for (row, item) in ev.rows.iter().zip(&items) {
            let (out, _) = forward(&model, item.input.as_ref().unwrap()).unwrap();
            assert_eq!(row.is_error, is_error(model.task(), &row.expected, &out, row.loss).unwrap());
        }
    }
}

fn temp_dir(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("rccdbg-core-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn persistence_round_trip_and_rejections() {
    let layers = vec![
        LayerSpec::Conv2d { in_channels: 1, out_channels: 3, kernel: 3, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 12, outputs: 5 },
        LayerSpec::Relu,
        LayerSpec::Dense { inputs: 5, outputs: 2 },
    ];
    let model = NetworkModel::init(vec![1, 6, 6], layers, Task::Classification { num_classes: 2 }, 9).unwrap();
    // trained weights are f32-exact too
    let data = vec![(Tensor::new(vec![1, 6, 6], vec![0.5; 36]).unwrap(), Target::Class(1))];
    let (model, _) = train_sgd(&model, &data, &SgdConfig { lr: 0.1, epochs: 2, batch_size: 1, seed: 0 }).unwrap();
    let dir = temp_dir("persist");
    save_model(&model, &dir).unwrap();
    let loaded = load_model(&dir).unwrap();
    assert_eq!(loaded, model);
    for (a, b) in loaded.param_sets().zip(model.param_sets()) {
        for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    let bin = std::fs::read(dir.join(WEIGHTS_FILE)).unwrap();
    std::fs::write(dir.join(WEIGHTS_FILE), &bin[..bin.len() - 4]).unwrap();
    let err = load_model(&dir).unwrap_err().to_string();
    assert!(err.contains("weight payload"), "{err}");
    std::fs::write(dir.join(WEIGHTS_FILE), &bin).unwrap();

    let arch = std::fs::read_to_string(dir.join(ARCH_FILE)).unwrap();
    std::fs::write(dir.join(ARCH_FILE), arch.replace("dense 12 5", "dense 12 6")).unwrap();
    let err = load_model(&dir).unwrap_err().to_string();
    assert!(err.contains("shape check"), "{err}");

    std::fs::write(dir.join(ARCH_FILE), arch.replace("version 1", "version 7")).unwrap();
    let err = load_model(&dir).unwrap_err().to_string();
    assert!(err.contains("version mismatch"), "{err}");

    let reg = NetworkModel::init(
        vec![3],
        vec![LayerSpec::Dense { inputs: 3, outputs: 2 }],
        Task::Regression { output_dim: 2, loss_threshold: 0.125 },
        1,
    )
    .unwrap();
    save_model(&reg, &dir).unwrap();
    assert_eq!(load_model(&dir).unwrap(), reg);
}
