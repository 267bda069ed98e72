use std::io::{Read, Write};

use rayon::prelude::*;

use super::model::{argmax, forward, loss_and_grad};
use super::{NetError, NetworkModel, Prediction, Result, Target, Task, Tensor};

/// One dataset image to evaluate. `input` carries the load error when the
/// image could not be read.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub image_id: String,
    pub input: std::result::Result<Tensor, String>,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationRow {
    pub image_id: String,
    pub expected: Target,
    pub predicted: Prediction,
    pub loss: f64,
    pub is_error: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowFailure {
    pub image_id: String,
    pub cause: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Successfully evaluated rows, in dataset order.
    pub rows: Vec<EvaluationRow>,
    pub failures: Vec<RowFailure>,
    pub accuracy: f64,
}

impl Evaluation {
    pub fn error_ids(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| r.is_error)
            .map(|r| r.image_id.as_str())
            .collect()
    }
}

/// Classification: wrong argmax. Regression: loss strictly above the threshold.
pub fn is_error(task: &Task, expected: &Target, output: &Tensor, loss: f64) -> Result<bool> {
    match (task, expected) {
        (Task::Classification { num_classes }, Target::Class(label)) => {
            if label >= num_classes {
                return Err(NetError::LabelOutOfRange {
                    label: *label,
                    num_classes: *num_classes,
                });
            }
            Ok(argmax(output.data()) != *label)
        }
        (Task::Regression { loss_threshold, .. }, Target::Values(_)) => Ok(loss > *loss_threshold),
        (task, target) => Err(NetError::TargetMismatch(format!("{target:?} for {task:?}"))),
    }
}

fn evaluate_one(model: &NetworkModel, item: &EvalItem) -> std::result::Result<EvaluationRow, String> {
    let input = item.input.as_ref().map_err(Clone::clone)?;
    let (output, _) = forward(model, input).map_err(|e| e.to_string())?;
    let (loss, _) = loss_and_grad(model.task(), &output, &item.target).map_err(|e| e.to_string())?;
    let is_error = is_error(model.task(), &item.target, &output, loss).map_err(|e| e.to_string())?;
    let predicted = match model.task() {
        Task::Classification { .. } => Prediction::Class(argmax(output.data())),
        Task::Regression { .. } => Prediction::Values(output.into_data()),
    };
    Ok(EvaluationRow {
        image_id: item.image_id.clone(),
        expected: item.target.clone(),
        predicted,
        loss,
        is_error,
    })
}

/// Evaluates every item; rows keep dataset order. Items that fail to load or
/// evaluate become [`RowFailure`]s and evaluation continues.
pub fn evaluate_dataset(model: &NetworkModel, items: &[EvalItem]) -> Result<Evaluation> {
    if items.is_empty() {
        return Err(NetError::Empty("dataset"));
    }
    let outcomes: Vec<_> = items.par_iter().map(|it| evaluate_one(model, it)).collect();
    let mut rows = Vec::with_capacity(items.len());
    let mut failures = Vec::new();
    for (item, outcome) in items.iter().zip(outcomes) {
        match outcome {
            Ok(row) => rows.push(row),
            Err(cause) => failures.push(RowFailure {
                image_id: item.image_id.clone(),
                cause,
            }),
        }
    }
    if rows.is_empty() {
        return Err(NetError::Empty("set of evaluable rows"));
    }
    let errors = rows.iter().filter(|r| r.is_error).count();
    let accuracy = 1.0 - errors as f64 / rows.len() as f64;
    Ok(Evaluation {
        rows,
        failures,
        accuracy,
    })
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn parse_values(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(';')
        .map(|v| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect()
}

const HEADER: [&str; 5] = ["image_id", "expected", "predicted", "loss", "is_error"];

/// Writes `image_id,expected,predicted,loss,is_error`. Regression vectors are
/// `;`-separated.
pub fn write_results_csv<W: Write>(rows: &[EvaluationRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| NetError::Csv(e.to_string());
    w.write_record(HEADER).map_err(csv_err)?;
    for r in rows {
        let expected = match &r.expected {
            Target::Class(c) => c.to_string(),
            Target::Values(v) => join(v),
        };
        let predicted = match &r.predicted {
            Prediction::Class(c) => c.to_string(),
            Prediction::Values(v) => join(v),
        };
        w.write_record([
            r.image_id.as_str(),
            &expected,
            &predicted,
            &r.loss.to_string(),
            if r.is_error { "true" } else { "false" },
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(task: &Task, reader: R) -> Result<Vec<EvaluationRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| NetError::Csv(e.to_string()))?.clone();
    if headers.iter().ne(HEADER) {
        return Err(NetError::Csv(format!("unexpected header {headers:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |m: String| NetError::Csv(format!("line {line}: {m}"));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let (expected, predicted) = match task {
            Task::Classification { .. } => (
                Target::Class(rec[1].parse().map_err(|e| bad(format!("expected: {e}")))?),
                Prediction::Class(rec[2].parse().map_err(|e| bad(format!("predicted: {e}")))?),
            ),
            Task::Regression { .. } => (
                Target::Values(parse_values(&rec[1]).map_err(bad)?),
                Prediction::Values(parse_values(&rec[2]).map_err(bad)?),
            ),
        };
        let loss = rec[3].parse().map_err(|e| bad(format!("loss: {e}")))?;
        let is_error = match &rec[4] {
            "true" => true,
            "false" => false,
            other => return Err(bad(format!("is_error {other:?}"))),
        };
        rows.push(EvaluationRow {
            image_id: rec[0].to_string(),
            expected,
            predicted,
            loss,
            is_error,
        });
    }
    Ok(rows)
}
