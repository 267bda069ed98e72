//! Parametric grayscale scene generator used as a simulator stand-in.
//!
//! Each image shows one filled, antialiased ellipse (an oriented bar) on a
//! black background plus Gaussian pixel noise. Labels are bins of the
//! orientation angle, and every generation parameter is logged so cluster
//! statistics can be audited against the ground truth.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageio::{write_gray_png, GrayImage, ImageError};
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("cannot write dataset to {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Supersampling factor per axis for antialiased edges.
const SUBSAMPLES: usize = 4;
/// Semi-major axis as a fraction of the image size at `shape_scale = 1`.
const MAJOR_FRACTION: f64 = 0.45;
const ASPECT: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Orientation in degrees.
    pub angle: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub noise_sigma: f64,
    pub shape_scale: f64,
}

pub const PARAM_NAMES: [&str; 5] = ["angle", "center_x", "center_y", "noise_sigma", "shape_scale"];

impl SceneParams {
    pub fn values(&self) -> [f64; 5] {
        [self.angle, self.center_x, self.center_y, self.noise_sigma, self.shape_scale]
    }

    fn check(&self, size: usize) -> Result<()> {
        let s = size as f64;
        let bad = |m: String| Err(SynthError::OutOfRange(m));
        if size == 0 {
            return bad("image size must be positive".into());
        }
        if !self.angle.is_finite() {
            return bad(format!("angle {}", self.angle));
        }
        if !(0.0..=s).contains(&self.center_x) || !(0.0..=s).contains(&self.center_y) {
            return bad(format!("center ({}, {}) outside {size}x{size}", self.center_x, self.center_y));
        }
        if !(0.0..=1.0).contains(&self.noise_sigma) {
            return bad(format!("noise_sigma {} outside [0, 1]", self.noise_sigma));
        }
        if !(self.shape_scale > 0.0 && self.shape_scale <= 1.0) {
            return bad(format!("shape_scale {} outside (0, 1]", self.shape_scale));
        }
        Ok(())
    }
}

/// Renders one `size x size` image with values in `[0, 1]`. Noise comes from
/// a stream seeded by `noise_key`, so rendering is a pure function of its
/// arguments. Orientations 180 degrees apart render identically.
pub fn render(params: &SceneParams, size: usize, noise_key: u64) -> Result<Vec<f64>> {
    params.check(size)?;
    let theta = params.angle.rem_euclid(180.0).to_radians();
    let (sin, cos) = theta.sin_cos();
    let a = params.shape_scale * size as f64 * MAJOR_FRACTION;
    let b = a * ASPECT;
    let step = 1.0 / SUBSAMPLES as f64;
    let mut img = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0usize;
            for sy in 0..SUBSAMPLES {
                for sx in 0..SUBSAMPLES {
                    let dx = x as f64 + (sx as f64 + 0.5) * step - params.center_x;
                    let dy = y as f64 + (sy as f64 + 0.5) * step - params.center_y;
                    let u = dx * cos + dy * sin;
                    let v = -dx * sin + dy * cos;
                    if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                        hits += 1;
                    }
                }
            }
            img[y * size + x] = hits as f64 / (SUBSAMPLES * SUBSAMPLES) as f64;
        }
    }
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_key);
        for p in img.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *p = (*p + params.noise_sigma * z).clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

/// Quantizes unit-range pixels to 8-bit.
pub fn quantize(pixels: &[f64], size: usize) -> GrayImage {
    GrayImage {
        width: size,
        height: size,
        pixels: pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
    }
}

/// Noise key of an image: derived from the dataset seed and the image id,
/// independent of generation order.
pub fn noise_key(seed: u64, image_id: &str) -> u64 {
    seed::derive(seed, &format!("noise/{image_id}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub size: usize,
    pub count: usize,
    pub id_prefix: String,
    /// Inclusive-exclusive angle range in degrees.
    pub angle_range: (f64, f64),
    /// Sorted angles splitting the range into label bins; label = number of
    /// boundaries `<=` the angle.
    pub class_boundaries: Vec<f64>,
    /// Maximum offset of the shape center from the image center, in pixels.
    pub center_jitter: f64,
    pub noise_range: (f64, f64),
    pub scale_range: (f64, f64),
    /// Angle interval around a class boundary where errors are expected.
    pub hard_band: (f64, f64),
    /// Acceptance probability for angles drawn inside the hard band
    /// (1 = plain uniform, lower values under-represent the band).
    pub band_weight: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            size: 16,
            count: 100,
            id_prefix: "img_".into(),
            angle_range: (160.0, 220.0),
            class_boundaries: vec![190.0],
            center_jitter: 1.5,
            noise_range: (0.0, 0.15),
            scale_range: (0.6, 1.0),
            hard_band: (185.0, 195.0),
            band_weight: 1.0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::Spec(m.into()));
        let (lo, hi) = self.angle_range;
        if self.size == 0 {
            return bad("size must be positive");
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad("angle_range must be a nonempty interval");
        }
        if self.class_boundaries.is_empty()
            || self.class_boundaries.windows(2).any(|w| w[1] <= w[0])
            || self.class_boundaries.iter().any(|b| !(lo < *b && *b < hi))
        {
            return bad("class_boundaries must be increasing and strictly inside angle_range");
        }
        let (blo, bhi) = self.hard_band;
        if !(lo <= blo && blo < bhi && bhi <= hi) {
            return bad("hard_band must be a nonempty interval inside angle_range");
        }
        if !self.class_boundaries.iter().any(|b| blo <= *b && *b <= bhi) {
            return bad("hard_band must overlap a class boundary");
        }
        if !(0.0..=1.0).contains(&self.band_weight) || (self.band_weight == 0.0 && blo <= lo && bhi >= hi) {
            return bad("band_weight must be in [0, 1] and leave some of the range drawable");
        }
        let half = self.size as f64 / 2.0;
        if !(self.center_jitter >= 0.0 && self.center_jitter <= half) {
            return bad("center_jitter must be in [0, size/2]");
        }
        let (nlo, nhi) = self.noise_range;
        if !(0.0 <= nlo && nlo <= nhi && nhi <= 1.0) {
            return bad("noise_range must lie in [0, 1]");
        }
        let (slo, shi) = self.scale_range;
        if !(0.0 < slo && slo <= shi && shi <= 1.0) {
            return bad("scale_range must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn label_for(&self, angle: f64) -> usize {
        self.class_boundaries.iter().filter(|b| **b <= angle).count()
    }

    pub fn in_band(&self, angle: f64) -> bool {
        self.hard_band.0 <= angle && angle <= self.hard_band.1
    }

    pub fn num_classes(&self) -> usize {
        self.class_boundaries.len() + 1
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedImage {
    pub image_id: String,
    pub label: usize,
    pub params: SceneParams,
}

/// Draws the parameters of every image (no rendering).
pub fn draw_params(spec: &DatasetSpec, seed: u64) -> Result<Vec<GeneratedImage>> {
    spec.validate()?;
    let mut rng = seed::stream(seed, "synthgen/params");
    let half = spec.size as f64 / 2.0;
    let jitter = (half - spec.center_jitter, half + spec.center_jitter);
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let angle = loop {
            let a = uniform(&mut rng, spec.angle_range);
            let keep: f64 = rng.gen();
            if !spec.in_band(a) || keep < spec.band_weight {
                break a;
            }
        };
        let params = SceneParams {
            angle,
            center_x: uniform(&mut rng, jitter),
            center_y: uniform(&mut rng, jitter),
            noise_sigma: uniform(&mut rng, spec.noise_range),
            shape_scale: uniform(&mut rng, spec.scale_range),
        };
        out.push(GeneratedImage {
            image_id: format!("{}{i:05}", spec.id_prefix),
            label: spec.label_for(angle),
            params,
        });
    }
    Ok(out)
}

/// Generates a dataset into `out_dir`: `<image_id>.png` files plus
/// `labels_file` (`image_id,label`) and `params.csv`.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64, out_dir: &Path, labels_file: &str) -> Result<Vec<GeneratedImage>> {
    let images = draw_params(spec, seed)?;
    let io = |source| SynthError::Io {
        path: out_dir.display().to_string(),
        source,
    };
    fs::create_dir_all(out_dir).map_err(io)?;
    images.par_iter().try_for_each(|g| -> Result<()> {
        let pixels = render(&g.params, spec.size, noise_key(seed, &g.image_id))?;
        write_gray_png(&out_dir.join(format!("{}.png", g.image_id)), &quantize(&pixels, spec.size))?;
        Ok(())
    })?;
    write_csv(&out_dir.join(labels_file), |w| {
        w.write_record(["image_id", "label"])?;
        for g in &images {
            w.write_record([g.image_id.clone(), g.label.to_string()])?;
        }
        Ok(())
    })?;
    write_csv(&out_dir.join("params.csv"), |w| {
        let mut header = vec!["image_id"];
        header.extend(PARAM_NAMES);
        w.write_record(header)?;
        for g in &images {
            let mut row = vec![g.image_id.clone()];
            row.extend(g.params.values().iter().map(f64::to_string));
            w.write_record(row)?;
        }
        Ok(())
    })?;
    Ok(images)
}

fn write_csv(path: &Path, body: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    body(&mut w).map_err(|e| SynthError::Csv(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| SynthError::Csv(e.to_string()))?;
    let io = |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    };
    fs::File::create(path).and_then(|mut f| f.write_all(&bytes)).map_err(io)
}

/// Reads `params.csv` back into scene parameters, in file order.
pub fn read_params_csv(path: &Path) -> Result<Vec<(String, SceneParams)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| SynthError::Csv(e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SynthError::Csv(e.to_string()))?;
        let v: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| SynthError::Csv(format!("{s:?}: {e}"))))
            .collect::<Result<_>>()?;
        if v.len() != PARAM_NAMES.len() {
            return Err(SynthError::Csv(format!("expected {} parameters, got {}", PARAM_NAMES.len(), v.len())));
        }
        out.push((
            rec[0].to_string(),
            SceneParams {
                angle: v[0],
                center_x: v[1],
                center_y: v[2],
                noise_sigma: v[3],
                shape_scale: v[4],
            },
        ));
    }
    Ok(out)
}
