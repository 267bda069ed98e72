//! `retrain`: balance the labeled unsafe set and fine-tune the model on it
//! together with the original training set.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rccdbg_core::netcore::{save_model, train_sgd, NetworkModel, Target, Tensor};
use rccdbg_core::unsafe_set::{balance, ingest_labels, BalancedUnsafeSet, UnsafeError};
use serde::{Deserialize, Serialize};

use crate::assign::read_unsafe_csv;
use crate::config::PipelineConfig;
use crate::evaluate::evaluate_set;
use crate::workspace::{csv_bytes, image_path, load_image, load_labeled_set, parse_target, require, write_atomic, write_json, write_provenance, DataSet, Workspace, LABELS_CSV};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub training_set: f64,
    pub test_set: f64,
}

/// Written to `T/Retrain/comparison.json`. `improved` compares training-set
/// accuracy only; the test-set numbers are informational.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub original_model: String,
    pub retrained_model: String,
    pub original_training_size: usize,
    pub balanced_unsafe_size: usize,
    pub training_set_size: usize,
    pub cluster_sizes: BTreeMap<usize, usize>,
    pub labeled: usize,
    pub unlabeled: usize,
    pub label_warnings: Vec<String>,
    pub original: Accuracy,
    pub retrained: Accuracy,
    pub improved: bool,
    pub epoch_losses: Vec<f64>,
}

/// `model` becomes `model-v2`, `model-v2` becomes `model-v3`.
pub fn next_version(name: &str) -> String {
    if let Some((base, v)) = name.rsplit_once("-v") {
        if let Ok(n) = v.parse::<u32>() {
            return format!("{base}-v{}", n + 1);
        }
    }
    format!("{name}-v2")
}

pub fn balanced_csv(set: &BalancedUnsafeSet) -> Result<Vec<u8>> {
    let rows = set.entries.iter().map(|e| vec![e.image_id.clone(), e.label.clone(), e.source_cluster.to_string()]);
    csv_bytes(&["image_id", "label", "cluster"], rows)
}

/// Fine-tunes `model` on `training` followed by `extra`, starting from its
/// current weights.
pub fn fine_tune(model: &NetworkModel, training: &[(Tensor, Target)], extra: Vec<(Tensor, Target)>, cfg: &PipelineConfig) -> Result<(NetworkModel, Vec<f64>)> {
    let mut data = training.to_vec();
    data.extend(extra);
    let (m, report) = train_sgd(model, &data, &cfg.retrain.sgd(cfg.stream_seed("retrain")))?;
    Ok((m, report.epoch_losses))
}

pub fn cmd_retrain(ws: &Workspace, cfg: &PipelineConfig, labels: Option<&Path>) -> Result<Comparison> {
    let entries = read_unsafe_csv(ws)?;
    let labels_path = labels.map(Path::to_path_buf).unwrap_or_else(|| ws.unsafe_dir().join(LABELS_CSV));
    require(&labels_path, "unsafe-set labels (label the unsafe set via `serve` or write image_id,label rows first)")?;
    let file = fs::File::open(&labels_path)?;
    let ingest = ingest_labels(&entries, file).with_context(|| format!("reading {}", labels_path.display()))?;
    if !ingest.warnings.is_empty() {
        eprintln!("warning: {} label row(s) ignored or overridden", ingest.warnings.len());
    }
    if !ingest.unlabeled.is_empty() {
        eprintln!("warning: {} unsafe image(s) without a label are left out", ingest.unlabeled.len());
    }
    let balanced = balance(&ingest.labeled, cfg.seed).map_err(|e| match e {
        UnsafeError::NothingLabeled => anyhow::anyhow!("no labeled unsafe-set images in {}; label the unsafe set first", labels_path.display()),
        other => other.into(),
    })?;

    let model = ws.load_model(&cfg.model)?;
    let training: Vec<(Tensor, Target)> = load_labeled_set(&ws.dataset_dir(DataSet::Training), model.task())?
        .into_iter()
        .map(|(_, x, t)| (x, t))
        .collect();
    let unsafe_dir = ws.unsafe_dir();
    let extra = balanced
        .entries
        .iter()
        .map(|e| {
            let x = load_image(&image_path(&unsafe_dir, &e.image_id)).with_context(|| format!("unsafe image {}", e.image_id))?;
            let t = parse_target(model.task(), &e.label).with_context(|| format!("label of {}", e.image_id))?;
            Ok((x, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let original_training_size = training.len();
    let (retrained, epoch_losses) = fine_tune(&model, &training, extra, cfg)?;
    let name = next_version(&cfg.model);
    save_model(&retrained, &ws.model_dir(&name))?;

    let accuracy = |m: &NetworkModel| -> Result<Accuracy> {
        Ok(Accuracy {
            training_set: evaluate_set(ws, m, DataSet::Training)?.accuracy,
            test_set: evaluate_set(ws, m, DataSet::Test)?.accuracy,
        })
    };
    let original = accuracy(&model)?;
    let after = accuracy(&retrained)?;
    let comparison = Comparison {
        original_model: cfg.model.clone(),
        retrained_model: name,
        original_training_size,
        balanced_unsafe_size: balanced.entries.len(),
        training_set_size: original_training_size + balanced.entries.len(),
        cluster_sizes: balanced.cluster_sizes(),
        labeled: ingest.labeled.len(),
        unlabeled: ingest.unlabeled.len(),
        label_warnings: ingest.warnings,
        improved: after.training_set > original.training_set,
        original,
        retrained: after,
        epoch_losses,
    };
    let out = ws.t_dir().join("Retrain");
    write_json(&out.join("comparison.json"), &comparison)?;
    write_atomic(&out.join("balanced.csv"), &balanced_csv(&balanced)?)?;
    write_provenance(&out, cfg)?;
    Ok(comparison)
}
