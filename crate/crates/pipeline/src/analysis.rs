//! `cluster`: root cause clusters per layer and promotion of the best layer.
//!
//! Every `T/ClusterAnalysis/Layer{K}` holds `distance.csv`, the manifest
//! `clusters.json`, one `cluster_{id}` directory of member images per
//! cluster and, when the test set logs generation parameters, the variance
//! reduction table (`variance.csv` and `variance.json`).

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rccdbg_core::cluster::{
    build_clusters, cut, distance_matrix, hac_average_linkage, layer_score, select_best_layer, select_clusters, variance_reduction_report, wicd,
    ClusteringResult, DistanceMatrix, ParamTable, RootCauseCluster, VarianceReport,
};
use rccdbg_core::imageio::{read_gray_png, write_gray_png, GrayImage};
use rccdbg_core::unsafe_set::cluster_thresholds;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::heatmaps::read_bundle;
use crate::workspace::{csv_bytes, image_path, read_json, require, write_atomic, write_json, write_provenance, DataSet, Workspace, PARAMS_CSV};

pub const MANIFEST: &str = "clusters.json";
pub const DISTANCE_CSV: &str = "distance.csv";
pub const VARIANCE_CSV: &str = "variance.csv";
pub const VARIANCE_JSON: &str = "variance.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterManifest {
    pub layer_index: usize,
    pub layer: String,
    pub k: usize,
    pub weak_knee: bool,
    pub chosen_wicd: f64,
    /// `None` when every heatmap of the layer is identical.
    pub layer_score: Option<f64>,
    pub wicd_curve: Vec<(usize, f64)>,
    /// Clusters in id order; members in heatmap-bundle order.
    pub clusters: Vec<RootCauseCluster>,
}

impl ClusterManifest {
    pub fn cluster(&self, id: usize) -> Option<&RootCauseCluster> {
        self.clusters.iter().find(|c| c.cluster_id == id)
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.assignment_threshold.unwrap_or(0.0)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer_index: usize,
    pub layer: String,
    pub k: usize,
    pub weak_knee: bool,
    pub layer_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub best_layer: usize,
    pub error_images: usize,
    pub layers: Vec<LayerSummary>,
}

/// Picks K for one layer. When the error set is too small for a sweep
/// (`n - 1 <= k_min`) it falls back to `min(k_min, n)` clusters and flags
/// the knee as weak.
pub fn choose_clusters(dm: &DistanceMatrix, layer_index: usize, cfg: &PipelineConfig) -> Result<ClusteringResult> {
    let n = dm.len();
    let k_max = cfg.k_max.min(n.saturating_sub(1));
    if cfg.k_min < k_max {
        return Ok(select_clusters(dm, layer_index, cfg.k_min, k_max, cfg.sensitivity)?);
    }
    let k = cfg.k_min.min(n);
    let labels = cut(&hac_average_linkage(dm)?, k)?;
    let w = wicd(&labels, dm);
    Ok(ClusteringResult {
        layer_index,
        k,
        labels,
        wicd_curve: vec![(k, w)],
        chosen_wicd: w,
        weak_knee: true,
    })
}

fn distance_csv(dm: &DistanceMatrix) -> Result<Vec<u8>> {
    let mut header = vec!["image_id"];
    header.extend(dm.ids().iter().map(String::as_str));
    let rows = (0..dm.len()).map(|i| {
        let mut row = vec![dm.ids()[i].clone()];
        row.extend(dm.row(i).iter().map(f64::to_string));
        row
    });
    csv_bytes(&header, rows)
}

pub fn variance_csv(report: &VarianceReport) -> Result<Vec<u8>> {
    let mut header = vec!["cluster_id", "size"];
    header.extend(report.parameters.iter().map(String::as_str));
    header.push("flagged");
    let rows = report.rows.iter().map(|r| {
        let mut row = vec![r.cluster_id.to_string(), r.size.to_string()];
        row.extend(r.reductions.iter().map(|v| v.map_or("NA".into(), |v| v.to_string())));
        row.push(if r.flagged.is_empty() { "none".into() } else { r.flagged.join(";") });
        row
    });
    csv_bytes(&header, rows)
}

/// Lays member images out on a square grid with a one-pixel mid-gray gutter.
pub fn montage(images: &[GrayImage]) -> Option<GrayImage> {
    let first = images.first()?;
    let (w, h) = (first.width, first.height);
    let cols = (images.len() as f64).sqrt().ceil() as usize;
    let rows = images.len().div_ceil(cols);
    let (cw, ch) = (w + 1, h + 1);
    let (width, height) = (cols * cw + 1, rows * ch + 1);
    let mut pixels = vec![128u8; width * height];
    for (n, img) in images.iter().enumerate() {
        if img.width != w || img.height != h {
            continue;
        }
        let (ox, oy) = (1 + (n % cols) * cw, 1 + (n / cols) * ch);
        for y in 0..h {
            let dst = (oy + y) * width + ox;
            pixels[dst..dst + w].copy_from_slice(&img.pixels[y * w..(y + 1) * w]);
        }
    }
    Some(GrayImage { width, height, pixels })
}

fn write_cluster_dirs(dir: &Path, images: &Path, clusters: &[RootCauseCluster], with_montage: bool) -> Result<()> {
    for c in clusters {
        let cdir = dir.join(format!("cluster_{}", c.cluster_id));
        fs::create_dir_all(&cdir)?;
        let mut thumbs = Vec::new();
        for id in &c.members {
            let src = image_path(images, id);
            fs::copy(&src, image_path(&cdir, id)).with_context(|| format!("copying {}", src.display()))?;
            if with_montage {
                thumbs.push(read_gray_png(&src)?);
            }
        }
        if let Some(m) = montage(&thumbs) {
            write_gray_png(&cdir.join("montage.png"), &m)?;
        }
    }
    Ok(())
}

fn copy_dir(src: &Path, dst: &Path) -> Result<()> {
    fs::create_dir_all(dst)?;
    for entry in fs::read_dir(src)? {
        let entry = entry?;
        let to = dst.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_dir(&entry.path(), &to)?;
        } else {
            fs::copy(entry.path(), &to)?;
        }
    }
    Ok(())
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// Test-set generation parameters, when the test set logs them.
pub fn test_params(ws: &Workspace) -> Result<Option<ParamTable>> {
    let path = ws.dataset_dir(DataSet::Test).join(PARAMS_CSV);
    if !path.exists() {
        return Ok(None);
    }
    let file = fs::File::open(&path)?;
    Ok(Some(ParamTable::from_csv(file).with_context(|| format!("reading {}", path.display()))?))
}

/// Variance reductions relative to the whole test set.
pub fn variance_for(clusters: &[RootCauseCluster], params: &ParamTable) -> Result<VarianceReport> {
    let population: Vec<String> = params.rows.keys().cloned().collect();
    Ok(variance_reduction_report(clusters, params, &population)?)
}

pub fn cmd_cluster(ws: &Workspace, cfg: &PipelineConfig) -> Result<ClusterSummary> {
    let model = ws.load_model(&cfg.model)?;
    let images = ws.dataset_dir(DataSet::Test);
    let params = test_params(ws)?;
    let mut results = Vec::new();
    let mut summaries = Vec::new();
    let mut error_images = 0;
    for k in 0..model.layers().len() {
        let bundle = read_bundle(&ws.heatmaps_dir(k))?;
        if bundle.meta.layer_index != k {
            bail!("bundle in {} belongs to layer {}", ws.heatmaps_dir(k).display(), bundle.meta.layer_index);
        }
        error_images = bundle.ids.len();
        let dm = distance_matrix(&bundle.ids, &bundle.rows).with_context(|| format!("distances at layer {k}"))?;
        let result = choose_clusters(&dm, k, cfg)?;
        let mut clusters = build_clusters(&result, &dm);
        let thresholds = cluster_thresholds(&clusters, &dm);
        for (c, t) in clusters.iter_mut().zip(thresholds) {
            c.assignment_threshold = Some(t);
        }
        let manifest = ClusterManifest {
            layer_index: k,
            layer: bundle.meta.layer.clone(),
            k: result.k,
            weak_knee: result.weak_knee,
            chosen_wicd: result.chosen_wicd,
            layer_score: Some(layer_score(&result, &dm)).filter(|s| s.is_finite()),
            wicd_curve: result.wicd_curve.clone(),
            clusters,
        };
        let dir = ws.analysis_dir(k);
        reset_dir(&dir)?;
        write_atomic(&dir.join(DISTANCE_CSV), &distance_csv(&dm)?)?;
        write_json(&dir.join(MANIFEST), &manifest)?;
        if let Some(p) = &params {
            let report = variance_for(&manifest.clusters, p)?;
            write_atomic(&dir.join(VARIANCE_CSV), &variance_csv(&report)?)?;
            write_json(&dir.join(VARIANCE_JSON), &report)?;
        }
        write_cluster_dirs(&dir, &images, &manifest.clusters, cfg.montage)?;
        write_provenance(&dir, cfg)?;
        summaries.push(LayerSummary {
            layer_index: k,
            layer: manifest.layer,
            k: manifest.k,
            weak_knee: manifest.weak_knee,
            layer_score: manifest.layer_score,
        });
        results.push((result, dm));
    }
    let refs: Vec<(&ClusteringResult, &DistanceMatrix)> = results.iter().map(|(r, d)| (r, d)).collect();
    let best_layer = select_best_layer(&refs)?;
    let best = ws.best_layer_dir(best_layer);
    reset_dir(&best)?;
    copy_dir(&ws.analysis_dir(best_layer), &best)?;
    let summary = ClusterSummary {
        best_layer,
        error_images,
        layers: summaries,
    };
    write_json(&ws.analysis_root().join(SUMMARY), &summary)?;
    write_provenance(&ws.analysis_root(), cfg)?;
    Ok(summary)
}

pub fn read_summary(ws: &Workspace) -> Result<ClusterSummary> {
    let path = ws.analysis_root().join(SUMMARY);
    require(&path, "cluster summary (run `cluster` first)")?;
    read_json(&path)
}

/// Manifest of the promoted best layer.
pub fn best_manifest(ws: &Workspace) -> Result<ClusterManifest> {
    let summary = read_summary(ws)?;
    read_json(&ws.best_layer_dir(summary.best_layer).join(MANIFEST))
}

pub fn best_variance(ws: &Workspace) -> Result<Option<VarianceReport>> {
    let summary = read_summary(ws)?;
    let path = ws.best_layer_dir(summary.best_layer).join(VARIANCE_JSON);
    if path.exists() {
        Ok(Some(read_json(&path)?))
    } else {
        Ok(None)
    }
}
