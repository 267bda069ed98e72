//! `assign`: select the unsafe set from the improvement set.

use std::fs;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use rccdbg_core::netcore::NetworkModel;
use rccdbg_core::unsafe_set::{assign_improvement, ClusterMembers, UnsafeSetEntry};
use serde::Serialize;

use crate::analysis::{read_summary, ClusterManifest, MANIFEST};
use crate::config::PipelineConfig;
use crate::heatmaps::{image_heatmaps, read_bundle};
use crate::workspace::{csv_bytes, image_path, list_images, load_image, read_json, require, write_atomic, write_provenance, DataSet, Workspace, UNSAFE_CSV};

#[derive(Clone, Debug, Serialize)]
pub struct AssignSummary {
    pub layer_index: usize,
    pub improvement_images: usize,
    pub unsafe_images: usize,
}

/// Member heatmaps of every cluster, read back from the stored bundle so
/// assignment compares values at the same precision clustering used.
pub fn cluster_members(ws: &Workspace, manifest: &ClusterManifest) -> Result<Vec<ClusterMembers>> {
    let bundle = read_bundle(&ws.heatmaps_dir(manifest.layer_index))?;
    manifest
        .clusters
        .iter()
        .map(|c| {
            let heatmaps = c
                .member_indices
                .iter()
                .zip(&c.members)
                .map(|(&i, id)| match bundle.ids.get(i) {
                    Some(b) if b == id => Ok(bundle.rows[i].clone()),
                    _ => bail!("heatmap bundle of layer {} does not match its clusters; rerun `cluster`", manifest.layer_index),
                })
                .collect::<Result<_>>()?;
            Ok(ClusterMembers {
                cluster_id: c.cluster_id,
                heatmaps,
            })
        })
        .collect()
}

/// Heatmaps at `layer` for the given improvement images, in input order.
pub fn improvement_heatmaps(ws: &Workspace, model: &NetworkModel, cfg: &PipelineConfig, ids: &[String], layer: usize) -> Result<Vec<(String, Vec<f64>)>> {
    cfg.require_predicted_seed()?;
    let dir = ws.dataset_dir(DataSet::Improvement);
    let (maps, zero): (Vec<(String, Vec<f64>)>, Vec<usize>) = ids
        .par_iter()
        .map(|id| {
            let input = load_image(&image_path(&dir, id)).with_context(|| format!("improvement image {id}"))?;
            let (mut maps, zero) = image_heatmaps(model, &cfg.lrp, id, &input, None)?;
            Ok(((id.clone(), maps.swap_remove(layer)), zero))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let zero: usize = zero.iter().sum();
    if zero > 0 {
        eprintln!("warning: {zero} zero LRP denominators skipped (epsilon = {})", cfg.lrp.epsilon);
    }
    Ok(maps)
}

pub fn unsafe_csv(entries: &[UnsafeSetEntry]) -> Result<Vec<u8>> {
    let rows = entries.iter().map(|e| vec![e.image_id.clone(), e.assigned_cluster.to_string(), e.distance.to_string()]);
    csv_bytes(&["image_id", "cluster", "distance"], rows)
}

pub fn read_unsafe_csv(ws: &Workspace) -> Result<Vec<UnsafeSetEntry>> {
    let path = ws.unsafe_dir().join(UNSAFE_CSV);
    require(&path, "unsafe set (run `assign` first)")?;
    let mut rdr = csv::Reader::from_path(&path)?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.with_context(|| format!("{} line {}", path.display(), i + 2))?;
            let bad = || format!("{} line {}: expected image_id,cluster,distance", path.display(), i + 2);
            if rec.len() != 3 {
                bail!(bad());
            }
            Ok(UnsafeSetEntry {
                image_id: rec[0].to_string(),
                assigned_cluster: rec[1].parse().with_context(bad)?,
                distance: rec[2].parse().with_context(bad)?,
                label: None,
            })
        })
        .collect()
}

pub fn cmd_assign(ws: &Workspace, cfg: &PipelineConfig) -> Result<AssignSummary> {
    cfg.require_predicted_seed()?;
    let summary = read_summary(ws)?;
    let layer = summary.best_layer;
    let manifest: ClusterManifest = read_json(&ws.best_layer_dir(layer).join(MANIFEST))?;
    let members = cluster_members(ws, &manifest)?;
    let improvement = ws.dataset_dir(DataSet::Improvement);
    require(&improvement, "improvement set")?;
    let ids = list_images(&improvement)?;
    if ids.is_empty() {
        bail!("improvement set {} has no images", improvement.display());
    }
    let model = ws.load_model(&cfg.model)?;
    let maps = improvement_heatmaps(ws, &model, cfg, &ids, layer)?;
    let entries = assign_improvement(&maps, &members, &manifest.thresholds())?;
    if entries.is_empty() {
        eprintln!("warning: no improvement image is close enough to a root cause cluster; the unsafe set is empty");
    }

    let out = ws.unsafe_dir();
    fs::create_dir_all(&out)?;
    let keep: std::collections::BTreeSet<&str> = entries.iter().map(|e| e.image_id.as_str()).collect();
    for stale in list_images(&out)? {
        if !keep.contains(stale.as_str()) {
            fs::remove_file(image_path(&out, &stale))?;
        }
    }
    for e in &entries {
        fs::copy(image_path(&improvement, &e.image_id), image_path(&out, &e.image_id))
            .with_context(|| format!("copying {} into the unsafe set", e.image_id))?;
    }
    write_atomic(&out.join(UNSAFE_CSV), &unsafe_csv(&entries)?)?;
    write_provenance(&out, cfg)?;
    Ok(AssignSummary {
        layer_index: layer,
        improvement_images: ids.len(),
        unsafe_images: entries.len(),
    })
}
