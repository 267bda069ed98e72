//! Workspace layout and the file plumbing shared by the steps.
//!
//! ```text
//! <root>/DNNModels/<model>/          model.arch + model.bin
//! <root>/DataSets/TrainingSet/       <id>.png, labels.csv [, params.csv]
//! <root>/DataSets/TestSet/           <id>.png, labels.csv [, params.csv]
//! <root>/DataSets/ImprovementSet/    <id>.png (unlabeled)
//! <root>/UnsafeSet/                  unsafe.csv, copied images, labels.csv
//! <root>/T/                          intermediate results, never cleaned
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rccdbg_core::imageio::read_gray_png;
use rccdbg_core::netcore::{load_model, NetworkModel, Target, Task, Tensor};

use crate::config::PipelineConfig;

pub const MODELS: &str = "DNNModels";
pub const DATASETS: &str = "DataSets";
pub const UNSAFE: &str = "UnsafeSet";
pub const INTERMEDIATE: &str = "T";
pub const LABELS_CSV: &str = "labels.csv";
pub const PARAMS_CSV: &str = "params.csv";
pub const UNSAFE_CSV: &str = "unsafe.csv";
pub const CONFIG_JSON: &str = "config.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSet {
    Training,
    Test,
    Improvement,
}

impl DataSet {
    pub fn dir_name(self) -> &'static str {
        match self {
            DataSet::Training => "TrainingSet",
            DataSet::Test => "TestSet",
            DataSet::Improvement => "ImprovementSet",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn model_dir(&self, name: &str) -> PathBuf {
        self.root.join(MODELS).join(name)
    }

    pub fn dataset_dir(&self, set: DataSet) -> PathBuf {
        self.root.join(DATASETS).join(set.dir_name())
    }

    pub fn unsafe_dir(&self) -> PathBuf {
        self.root.join(UNSAFE)
    }

    pub fn t_dir(&self) -> PathBuf {
        self.root.join(INTERMEDIATE)
    }

    pub fn heatmaps_dir(&self, layer: usize) -> PathBuf {
        self.t_dir().join("Heatmaps").join(format!("Layer{layer}"))
    }

    pub fn analysis_root(&self) -> PathBuf {
        self.t_dir().join("ClusterAnalysis")
    }

    pub fn analysis_dir(&self, layer: usize) -> PathBuf {
        self.analysis_root().join(format!("Layer{layer}"))
    }

    /// Copy of the best layer's clusters promoted to `T/Layer{X}`.
    pub fn best_layer_dir(&self, layer: usize) -> PathBuf {
        self.t_dir().join(format!("Layer{layer}"))
    }

    pub fn create_layout(&self) -> Result<()> {
        for dir in [
            self.root.join(MODELS),
            self.dataset_dir(DataSet::Training),
            self.dataset_dir(DataSet::Test),
            self.dataset_dir(DataSet::Improvement),
            self.unsafe_dir(),
            self.t_dir(),
        ] {
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(())
    }

    pub fn load_model(&self, name: &str) -> Result<NetworkModel> {
        let dir = self.model_dir(name);
        require(&dir, "model directory")?;
        load_model(&dir).with_context(|| format!("loading model from {}", dir.display()))
    }
}

/// Fails with the offending path when `path` does not exist.
pub fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().ok_or_else(|| anyhow!("{} has no parent directory", path.display()))?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Records the configuration that produced the artifacts in `dir`.
pub fn write_provenance(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    write_atomic(&dir.join(CONFIG_JSON), cfg.to_json().as_bytes())
}

pub fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| anyhow!("csv: {e}"))
}

/// Parses a label cell: a class index, or `;`-separated values for
/// regression targets.
pub fn parse_target(task: &Task, text: &str) -> Result<Target> {
    let text = text.trim();
    match task {
        Task::Classification { num_classes } => {
            let c: usize = text.parse().map_err(|_| anyhow!("label {text:?} is not a class index"))?;
            if c >= *num_classes {
                bail!("label {c} outside 0..{num_classes}");
            }
            Ok(Target::Class(c))
        }
        Task::Regression { output_dim, .. } => {
            let v = text
                .split(';')
                .map(|s| s.trim().parse::<f64>().map_err(|_| anyhow!("target {text:?} is not a ';'-separated number list")))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != *output_dim {
                bail!("target {text:?} has {} values, the model predicts {output_dim}", v.len());
            }
            Ok(Target::Values(v))
        }
    }
}

/// Reads `image_id,label` rows in file order.
pub fn read_labels(path: &Path, task: &Task) -> Result<Vec<(String, Target)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.with_context(|| format!("{} line {line}", path.display()))?;
        if rec.len() < 2 {
            bail!("{} line {line}: expected image_id,label", path.display());
        }
        let target = parse_target(task, &rec[1]).with_context(|| format!("{} line {line}", path.display()))?;
        out.push((rec[0].to_string(), target));
    }
    Ok(out)
}

/// Ids of all `*.png` files in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.png"))
}

/// Loads a grayscale PNG as a `[1, height, width]` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = read_gray_png(path).with_context(|| format!("reading image {}", path.display()))?;
    Ok(Tensor::new(vec![1, img.height, img.width], img.to_unit())?)
}

/// A labeled dataset in `labels.csv` order with its images loaded.
pub fn load_labeled_set(dir: &Path, task: &Task) -> Result<Vec<(String, Tensor, Target)>> {
    let labels = dir.join(LABELS_CSV);
    require(&labels, "labels file")?;
    labels_to_samples(dir, read_labels(&labels, task)?)
}

fn labels_to_samples(dir: &Path, labels: Vec<(String, Target)>) -> Result<Vec<(String, Tensor, Target)>> {
    use rayon::prelude::*;
    labels
        .into_par_iter()
        .map(|(id, t)| Ok((id.clone(), load_image(&image_path(dir, &id))?, t)))
        .collect()
}

/// Rounds to the nearest `f32`, the precision heatmaps are stored at.
pub fn to_f32_precision(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}
