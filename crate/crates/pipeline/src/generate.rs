//! `gen` and `train`: build a synthetic workspace and its initial model.

use anyhow::{Context, Result};
use rccdbg_core::netcore::{save_model, train_sgd, NetworkModel, TrainReport};
use rccdbg_core::synthgen::generate_dataset;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::workspace::{csv_bytes, load_labeled_set, write_atomic, write_provenance, DataSet, Workspace, LABELS_CSV};

/// Ground truth of the improvement set, kept out of `labels.csv` so no step
/// can read it by accident. It stands in for the engineer during labeling.
pub const ORACLE_LABELS_CSV: &str = "oracle_labels.csv";

#[derive(Clone, Debug, Serialize)]
pub struct GenSummary {
    pub training: usize,
    pub test: usize,
    pub improvement: usize,
}

/// Writes the three datasets. Each set has its own derived seed and id
/// prefix, so changing one count leaves the other sets untouched.
pub fn cmd_gen(ws: &Workspace, cfg: &PipelineConfig) -> Result<GenSummary> {
    ws.create_layout()?;
    let g = &cfg.gen;
    let sets = [
        (DataSet::Training, g.training, "train_", g.training_band_weight, LABELS_CSV),
        (DataSet::Test, g.test, "test_", 1.0, LABELS_CSV),
        (DataSet::Improvement, g.improvement, "impr_", 1.0, ORACLE_LABELS_CSV),
    ];
    for (set, count, prefix, band_weight, labels) in sets {
        let dir = ws.dataset_dir(set);
        let spec = g.spec(count, prefix, band_weight);
        let seed = cfg.stream_seed(&format!("gen/{}", set.dir_name()));
        generate_dataset(&spec, seed, &dir, labels).with_context(|| format!("generating {}", dir.display()))?;
    }
    write_provenance(&ws.root().join(crate::workspace::DATASETS), cfg)?;
    Ok(GenSummary {
        training: g.training,
        test: g.test,
        improvement: g.improvement,
    })
}

/// Trains a fresh model on the training set and saves it under `cfg.model`.
pub fn cmd_train(ws: &Workspace, cfg: &PipelineConfig) -> Result<(NetworkModel, TrainReport)> {
    let dir = ws.dataset_dir(DataSet::Training);
    let samples = load_labeled_set(&dir, &cfg.task)?;
    let first = samples.first().with_context(|| format!("{} is empty", dir.display()))?;
    let model = NetworkModel::init(first.1.shape().to_vec(), cfg.architecture.clone(), cfg.task, cfg.stream_seed("model/init"))?;
    let data: Vec<_> = samples.into_iter().map(|(_, x, t)| (x, t)).collect();
    let (model, report) = train_sgd(&model, &data, &cfg.train.sgd(cfg.stream_seed("train")))?;
    save_model(&model, &ws.model_dir(&cfg.model))?;
    let out = ws.t_dir().join("Train");
    let rows = report.epoch_losses.iter().enumerate().map(|(e, l)| vec![e.to_string(), l.to_string()]);
    write_atomic(&out.join("losses.csv"), &csv_bytes(&["epoch", "loss"], rows)?)?;
    write_provenance(&out, cfg)?;
    Ok((model, report))
}
