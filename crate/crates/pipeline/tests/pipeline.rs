mod common;

use std::collections::BTreeSet;
use std::fs;
use std::process::Command;

use common::{analysed, label_from_oracle, small_config};
use rccdbg::analysis::{best_manifest, read_summary};
use rccdbg::assign::{cluster_members, read_unsafe_csv};
use rccdbg::evaluate::{error_rows, TEST_RESULT_CSV};
use rccdbg::heatmaps::{bundle_count, read_bundle};
use rccdbg::workspace::{list_images, DataSet};
use rccdbg::{generate, heatmaps, report, retrain, PipelineConfig, Workspace};
use rccdbg_core::cluster::euclidean;

#[test]
fn steps_leave_consistent_outputs() {
    let cfg = small_config();
    let (_tmp, ws) = analysed(&cfg);
    let model = ws.load_model(&cfg.model).unwrap();

    let rows = csv::Reader::from_path(ws.t_dir().join(TEST_RESULT_CSV)).unwrap().records().count();
    assert_eq!(rows, cfg.gen.test);
    let errors: Vec<String> = error_rows(&ws, model.task()).unwrap().into_iter().map(|r| r.image_id).collect();
    assert!(errors.len() >= 2);

    assert_eq!(bundle_count(&ws), model.layers().len());
    for k in 0..model.layers().len() {
        let b = read_bundle(&ws.heatmaps_dir(k)).unwrap();
        assert_eq!(b.ids, errors);
        assert_eq!(b.meta.row_len, model.output_shape(k).iter().product::<usize>());
        assert!(b.rows.iter().all(|r| r.len() == b.meta.row_len));
    }

    // every layer partitions the error set
    let summary = read_summary(&ws).unwrap();
    assert_eq!(summary.layers.len(), model.layers().len());
    for l in &summary.layers {
        let m: rccdbg::analysis::ClusterManifest =
            rccdbg::workspace::read_json(&ws.analysis_dir(l.layer_index).join(rccdbg::analysis::MANIFEST)).unwrap();
        let mut seen: Vec<&String> = m.clusters.iter().flat_map(|c| &c.members).collect();
        assert_eq!(seen.len(), errors.len());
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), errors.len());
        assert_eq!(m.clusters.len(), m.k);
    }
    let best = best_manifest(&ws).unwrap();
    assert_eq!(best.layer_index, summary.best_layer);
    for c in &best.clusters {
        let dir = ws.best_layer_dir(best.layer_index).join(format!("cluster_{}", c.cluster_id));
        let pngs: Vec<String> = list_images(&dir).unwrap().into_iter().filter(|p| p != "montage").collect();
        assert_eq!(pngs, c.members.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>());
    }

    // the unsafe set holds only images within their cluster's radius
    let entries = read_unsafe_csv(&ws).unwrap();
    assert!(entries.len() <= cfg.gen.improvement);
    let members = cluster_members(&ws, &best).unwrap();
    let thresholds = best.thresholds();
    for e in &entries {
        assert!(e.distance <= thresholds[e.assigned_cluster], "{}", e.image_id);
        assert!(!members[e.assigned_cluster].heatmaps.is_empty());
    }
    let on_disk = list_images(&ws.unsafe_dir()).unwrap();
    let mut ids: Vec<String> = entries.iter().map(|e| e.image_id.clone()).collect();
    ids.sort();
    assert_eq!(on_disk, ids);
}

#[test]
fn zero_learning_rate_retrain_keeps_the_weights() {
    let mut cfg = small_config();
    cfg.retrain.lr = 0.0;
    let (_tmp, ws) = analysed(&cfg);
    let n = label_from_oracle(&ws);
    if n == 0 {
        // nothing to retrain on; the command has to say so
        let err = retrain::cmd_retrain(&ws, &cfg, None).unwrap_err().to_string();
        assert!(err.contains("label"), "{err}");
        return;
    }
    let c = retrain::cmd_retrain(&ws, &cfg, None).unwrap();
    assert_eq!(ws.load_model(&c.retrained_model).unwrap(), ws.load_model(&cfg.model).unwrap());
    assert_eq!(c.labeled, n);
    assert_eq!(c.original_training_size, cfg.gen.training);
    assert_eq!(c.training_set_size, c.original_training_size + c.balanced_unsafe_size);
    let sizes: BTreeSet<usize> = c.cluster_sizes.values().copied().collect();
    assert_eq!(sizes.len(), 1, "balanced clusters differ in size: {:?}", c.cluster_sizes);
    assert_eq!(c.original, c.retrained);

    let r = report::cmd_report(&ws, &cfg).unwrap();
    assert_eq!(r.rccs, best_manifest(&ws).unwrap().clusters.len());
    assert!(r.inspection_percentage > 0.0 && r.inspection_percentage <= 100.0);
    assert!(report::render_text(&r).contains("root cause clusters"));
}

#[test]
fn stored_heatmaps_match_a_fresh_computation() {
    let cfg = small_config();
    let (_tmp, ws) = analysed(&cfg);
    let model = ws.load_model(&cfg.model).unwrap();
    let best = best_manifest(&ws).unwrap();
    let b = read_bundle(&ws.heatmaps_dir(best.layer_index)).unwrap();
    let dir = ws.dataset_dir(DataSet::Test);
    for (id, row) in b.ids.iter().zip(&b.rows).take(5) {
        let x = rccdbg::workspace::load_image(&rccdbg::workspace::image_path(&dir, id)).unwrap();
        let (maps, _) = heatmaps::image_heatmaps(&model, &cfg.lrp, id, &x, None).unwrap();
        assert_eq!(euclidean(&maps[best.layer_index], row), 0.0);
    }
}

#[test]
fn missing_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = Workspace::new(tmp.path());
    let cfg = small_config();
    let err = format!("{:#}", heatmaps::cmd_heatmaps(&ws, &cfg).unwrap_err());
    assert!(err.contains("DNNModels") || err.contains("model"), "{err}");
    let err = format!("{:#}", generate::cmd_train(&ws, &cfg).unwrap_err());
    assert!(err.contains("TrainingSet"), "{err}");

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "no_such_field": 2}"#).unwrap();
    let err = format!("{:#}", PipelineConfig::load(Some(&bad), None).unwrap_err());
    assert!(err.contains("no_such_field"), "{err}");
}

#[test]
fn command_line_runs_steps_and_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.gen.training = 20;
    cfg.gen.test = 10;
    cfg.gen.improvement = 5;
    let config = tmp.path().join("config.json");
    fs::write(&config, cfg.to_json()).unwrap();
    let ws = tmp.path().join("ws");
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_rccdbg"))
            .args(args)
            .args(["--workspace", ws.to_str().unwrap(), "--config", config.to_str().unwrap(), "--seed", "11"])
            .output()
            .unwrap()
    };
    let out = run(&["gen"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(list_images(&ws.join("DataSets/TestSet")).unwrap().len(), 10);
    let logged = fs::read_to_string(ws.join("DataSets/config.json")).unwrap();
    assert!(logged.contains("\"seed\": 11"), "{logged}");

    let out = run(&["test"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");
}
