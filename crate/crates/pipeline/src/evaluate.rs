//! `test`: run the model on the training and test sets.

use std::fs;

use anyhow::{bail, Context, Result};
use rccdbg_core::netcore::{evaluate_dataset, read_results_csv, write_results_csv, EvalItem, Evaluation, EvaluationRow, NetworkModel, Target, Task};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::workspace::{image_path, load_image, read_labels, require, write_atomic, write_provenance, DataSet, Workspace, LABELS_CSV};

pub const TRAIN_RESULT_CSV: &str = "trainResult.csv";
pub const TEST_RESULT_CSV: &str = "testResult.csv";

#[derive(Clone, Debug, Serialize)]
pub struct TestSummary {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub error_ids: Vec<String>,
}

/// Evaluates a labeled dataset. Unreadable images abort with their ids.
pub fn evaluate_set(ws: &Workspace, model: &NetworkModel, set: DataSet) -> Result<Evaluation> {
    let dir = ws.dataset_dir(set);
    let labels = dir.join(LABELS_CSV);
    require(&labels, "labels file")?;
    let items: Vec<EvalItem> = read_labels(&labels, model.task())?
        .into_iter()
        .map(|(image_id, target)| EvalItem {
            input: load_image(&image_path(&dir, &image_id)).map_err(|e| format!("{e:#}")),
            image_id,
            target,
        })
        .collect();
    let eval = evaluate_dataset(model, &items).with_context(|| format!("evaluating {}", dir.display()))?;
    if !eval.failures.is_empty() {
        let list: Vec<String> = eval.failures.iter().map(|f| format!("{}: {}", f.image_id, f.cause)).collect();
        bail!("{} image(s) in {} could not be evaluated:\n  {}", list.len(), dir.display(), list.join("\n  "));
    }
    Ok(eval)
}

pub fn results_bytes(rows: &[EvaluationRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_results_csv(rows, &mut buf)?;
    Ok(buf)
}

pub fn cmd_test(ws: &Workspace, cfg: &PipelineConfig) -> Result<TestSummary> {
    let model = ws.load_model(&cfg.model)?;
    let train = evaluate_set(ws, &model, DataSet::Training)?;
    let test = evaluate_set(ws, &model, DataSet::Test)?;
    let t = ws.t_dir();
    write_atomic(&t.join(TRAIN_RESULT_CSV), &results_bytes(&train.rows)?)?;
    write_atomic(&t.join(TEST_RESULT_CSV), &results_bytes(&test.rows)?)?;
    write_provenance(&t, cfg)?;
    Ok(TestSummary {
        train_accuracy: train.accuracy,
        test_accuracy: test.accuracy,
        error_ids: test.error_ids().into_iter().map(String::from).collect(),
    })
}

/// Error-inducing test images, in `testResult.csv` order.
pub fn error_rows(ws: &Workspace, task: &Task) -> Result<Vec<EvaluationRow>> {
    let path = ws.t_dir().join(TEST_RESULT_CSV);
    require(&path, "test results (run `test` first)")?;
    let file = fs::File::open(&path)?;
    let rows = read_results_csv(task, file).with_context(|| format!("reading {}", path.display()))?;
    Ok(rows.into_iter().filter(|r| r.is_error).collect())
}

/// True class of a row, used when relevance is seeded on the expected label.
pub fn true_class(row: &EvaluationRow) -> Option<usize> {
    match row.expected {
        Target::Class(c) => Some(c),
        Target::Values(_) => None,
    }
}
