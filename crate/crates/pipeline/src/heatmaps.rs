//! `heatmaps`: per-layer relevance bundles for the error-inducing images.
//!
//! A bundle is `T/Heatmaps/Layer{K}/heatmaps.f32` (one row per image,
//! little-endian `f32`), `index.csv` with the image id of every row, and
//! `meta.json` with the row length and the layer it came from.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use rccdbg_core::lrp::{heatmaps_for_image, LrpConfig};
use rccdbg_core::netcore::{forward, NetworkModel, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::evaluate::{error_rows, true_class};
use crate::workspace::{csv_bytes, image_path, load_image, read_json, require, to_f32_precision, write_atomic, write_json, write_provenance, DataSet, Workspace};

pub const ROWS_FILE: &str = "heatmaps.f32";
pub const INDEX_FILE: &str = "index.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub layer_index: usize,
    pub layer: String,
    /// Shape of the layer output the heatmap covers.
    pub shape: Vec<usize>,
    pub rows: usize,
    pub row_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapBundle {
    pub meta: BundleMeta,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Flattened heatmaps of one image for every layer, rounded to the stored
/// `f32` precision, plus the count of zero LRP denominators.
pub fn image_heatmaps(model: &NetworkModel, lrp: &LrpConfig, image_id: &str, input: &Tensor, true_label: Option<usize>) -> Result<(Vec<Vec<f64>>, usize)> {
    let (_, trace) = forward(model, input).with_context(|| format!("forward pass of {image_id}"))?;
    let (maps, stats) = heatmaps_for_image(model, image_id, &trace, lrp, true_label).with_context(|| format!("relevance of {image_id}"))?;
    Ok((maps.iter().map(|h| to_f32_precision(h.relevance.data())).collect(), stats.zero_denominators))
}

pub fn write_bundle(dir: &Path, bundle: &HeatmapBundle) -> Result<()> {
    let mut bytes = Vec::with_capacity(bundle.rows.len() * bundle.meta.row_len * 4);
    for row in &bundle.rows {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_atomic(&dir.join(ROWS_FILE), &bytes)?;
    write_atomic(&dir.join(INDEX_FILE), &csv_bytes(&["image_id"], bundle.ids.iter().map(|id| vec![id.clone()]))?)?;
    write_json(&dir.join(META_FILE), &bundle.meta)
}

pub fn read_bundle(dir: &Path) -> Result<HeatmapBundle> {
    require(dir, "heatmap bundle (run `heatmaps` first)")?;
    let meta: BundleMeta = read_json(&dir.join(META_FILE))?;
    let mut rdr = csv::Reader::from_path(dir.join(INDEX_FILE)).with_context(|| format!("reading {}", dir.join(INDEX_FILE).display()))?;
    let ids = rdr.records().map(|r| Ok(r?[0].to_string())).collect::<Result<Vec<_>>>()?;
    let bytes = fs::read(dir.join(ROWS_FILE)).with_context(|| format!("reading {}", dir.join(ROWS_FILE).display()))?;
    if ids.len() != meta.rows || bytes.len() != meta.rows * meta.row_len * 4 {
        bail!(
            "heatmap bundle {} is inconsistent: {} ids, {} bytes, meta says {} rows of {}",
            dir.display(),
            ids.len(),
            bytes.len(),
            meta.rows,
            meta.row_len
        );
    }
    let values: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    let rows = if meta.row_len == 0 { vec![Vec::new(); meta.rows] } else { values.chunks(meta.row_len).map(<[f64]>::to_vec).collect() };
    Ok(HeatmapBundle { meta, ids, rows })
}

#[derive(Clone, Debug, Serialize)]
pub struct HeatmapSummary {
    pub images: usize,
    pub layers: usize,
    pub zero_denominators: usize,
}

pub fn cmd_heatmaps(ws: &Workspace, cfg: &PipelineConfig) -> Result<HeatmapSummary> {
    let model = ws.load_model(&cfg.model)?;
    let errors = error_rows(ws, model.task())?;
    if errors.len() < 2 {
        bail!("{} error-inducing test image(s); clustering requires at least two members", errors.len());
    }
    let dir = ws.dataset_dir(DataSet::Test);
    let per_image: Vec<(Vec<Vec<f64>>, usize)> = errors
        .par_iter()
        .map(|row| {
            let input = load_image(&image_path(&dir, &row.image_id)).with_context(|| format!("error-inducing image {}", row.image_id))?;
            image_heatmaps(&model, &cfg.lrp, &row.image_id, &input, true_class(row))
        })
        .collect::<Result<_>>()?;
    let zero_denominators = per_image.iter().map(|p| p.1).sum();
    if zero_denominators > 0 {
        eprintln!("warning: {zero_denominators} zero LRP denominators skipped (epsilon = {})", cfg.lrp.epsilon);
    }
    let ids: Vec<String> = errors.iter().map(|r| r.image_id.clone()).collect();
    let layers = model.layers().len();
    for k in 0..layers {
        let rows: Vec<Vec<f64>> = per_image.iter().map(|(maps, _)| maps[k].clone()).collect();
        let shape = model.output_shape(k).to_vec();
        let bundle = HeatmapBundle {
            meta: BundleMeta {
                layer_index: k,
                layer: model.layers()[k].name().to_string(),
                row_len: shape.iter().product(),
                shape,
                rows: rows.len(),
            },
            ids: ids.clone(),
            rows,
        };
        let out = ws.heatmaps_dir(k);
        write_bundle(&out, &bundle)?;
        write_provenance(&out, cfg)?;
    }
    write_provenance(&ws.t_dir().join("Heatmaps"), cfg)?;
    Ok(HeatmapSummary {
        images: ids.len(),
        layers,
        zero_denominators,
    })
}

/// Number of layers with a bundle on disk, counted from layer 0.
pub fn bundle_count(ws: &Workspace) -> usize {
    (0..).take_while(|&k| ws.heatmaps_dir(k).join(META_FILE).exists()).count()
}
