//! `report`: inspection effort and variance-reduction summary.

use std::fmt::Write as _;

use anyhow::Result;
use rccdbg_core::cluster::inspection_ratio;
use serde::{Deserialize, Serialize};

use crate::analysis::{best_manifest, best_variance};
use crate::config::PipelineConfig;
use crate::evaluate::error_rows;
use crate::workspace::{write_atomic, write_json, write_provenance, Workspace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster_id: usize,
    pub size: usize,
    pub medoid: String,
    /// Parameters with at least 50% variance reduction; empty when none or
    /// when the test set logs no parameters.
    pub flagged: Vec<String>,
    pub reductions: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model: String,
    pub failing_images: usize,
    pub rccs: usize,
    pub images_per_cluster: usize,
    pub inspection_percentage: f64,
    pub best_layer: usize,
    pub best_layer_kind: String,
    /// Parameter names of `reductions`; empty without a parameter log.
    pub parameters: Vec<String>,
    /// Share of clusters with at least one flagged parameter.
    pub flagged_fraction: Option<f64>,
    pub clusters: Vec<ClusterRow>,
}

pub fn build_report(ws: &Workspace, cfg: &PipelineConfig) -> Result<Report> {
    let manifest = best_manifest(ws)?;
    let model = ws.load_model(&cfg.model)?;
    let failing = error_rows(ws, model.task())?.len();
    let variance = best_variance(ws)?;
    let clusters = manifest
        .clusters
        .iter()
        .map(|c| {
            let row = variance.as_ref().and_then(|v| v.rows.iter().find(|r| r.cluster_id == c.cluster_id));
            ClusterRow {
                cluster_id: c.cluster_id,
                size: c.members.len(),
                medoid: c.medoid.clone(),
                flagged: row.map(|r| r.flagged.clone()).unwrap_or_default(),
                reductions: row.map(|r| r.reductions.clone()).unwrap_or_default(),
            }
        })
        .collect();
    Ok(Report {
        model: cfg.model.clone(),
        failing_images: failing,
        rccs: manifest.clusters.len(),
        images_per_cluster: cfg.images_per_cluster,
        inspection_percentage: inspection_ratio(manifest.clusters.len(), failing, cfg.images_per_cluster)?,
        best_layer: manifest.layer_index,
        best_layer_kind: manifest.layer,
        parameters: variance.as_ref().map(|v| v.parameters.clone()).unwrap_or_default(),
        flagged_fraction: variance.as_ref().map(|v| v.flagged_fraction()),
        clusters,
    })
}

pub fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let mut field = |name: &str, value: String| {
        let _ = writeln!(s, "{name:<20} {value}");
    };
    field("model", r.model.clone());
    field("failing images", r.failing_images.to_string());
    field("root cause clusters", r.rccs.to_string());
    field("inspected", format!("{:.2}% ({} images per cluster)", r.inspection_percentage, r.images_per_cluster));
    field("best layer", format!("{} ({})", r.best_layer, r.best_layer_kind));
    if let Some(f) = r.flagged_fraction {
        field("flagged clusters", format!("{:.0}%", 100.0 * f));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:>7}  {:>5}  {:<16}  high-reduction parameters", "cluster", "size", "medoid");
    for c in &r.clusters {
        let flagged = if r.parameters.is_empty() {
            "n/a".to_string()
        } else if c.flagged.is_empty() {
            "none".to_string()
        } else {
            c.flagged.join(", ")
        };
        let _ = writeln!(s, "{:>7}  {:>5}  {:<16}  {flagged}", c.cluster_id, c.size, c.medoid);
    }
    s
}

pub fn cmd_report(ws: &Workspace, cfg: &PipelineConfig) -> Result<Report> {
    let report = build_report(ws, cfg)?;
    let out = ws.t_dir().join("Report");
    write_json(&out.join("report.json"), &report)?;
    write_atomic(&out.join("report.txt"), render_text(&report).as_bytes())?;
    write_provenance(&out, cfg)?;
    Ok(report)
}
