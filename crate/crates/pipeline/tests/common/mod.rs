#![allow(dead_code)]

use rccdbg::workspace::{csv_bytes, write_atomic, DataSet, LABELS_CSV};
use rccdbg::{analysis, assign, evaluate, generate, heatmaps, PipelineConfig, Workspace};
use tempfile::TempDir;

/// Small but complete setting: a few hundred images, a short training run.
pub fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig { seed: 3, ..Default::default() };
    cfg.gen.training = 300;
    cfg.gen.test = 200;
    cfg.gen.improvement = 150;
    cfg.train.epochs = 3;
    cfg.retrain.epochs = 2;
    cfg
}

/// Workspace taken through gen, train, test, heatmaps, cluster and assign.
pub fn analysed(cfg: &PipelineConfig) -> (TempDir, Workspace) {
    let tmp = tempfile::tempdir().unwrap();
    let ws = Workspace::new(tmp.path());
    generate::cmd_gen(&ws, cfg).unwrap();
    generate::cmd_train(&ws, cfg).unwrap();
    evaluate::cmd_test(&ws, cfg).unwrap();
    heatmaps::cmd_heatmaps(&ws, cfg).unwrap();
    analysis::cmd_cluster(&ws, cfg).unwrap();
    assign::cmd_assign(&ws, cfg).unwrap();
    (tmp, ws)
}

/// Labels every unsafe image with its generator ground truth.
pub fn label_from_oracle(ws: &Workspace) -> usize {
    let truth: std::collections::BTreeMap<String, String> =
        csv::Reader::from_path(ws.dataset_dir(DataSet::Improvement).join(generate::ORACLE_LABELS_CSV))
            .unwrap()
            .records()
            .map(|r| {
                let r = r.unwrap();
                (r[0].to_string(), r[1].to_string())
            })
            .collect();
    let entries = assign::read_unsafe_csv(ws).unwrap();
    let rows = entries.iter().map(|e| vec![e.image_id.clone(), truth[&e.image_id].clone()]);
    write_atomic(&ws.unsafe_dir().join(LABELS_CSV), &csv_bytes(&["image_id", "label"], rows).unwrap()).unwrap();
    entries.len()
}
