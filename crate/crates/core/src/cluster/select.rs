use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{cut, hac_average_linkage, kneedle, ClusterError, DistanceMatrix, Result};

/// Flat clustering chosen for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub layer_index: usize,
    pub k: usize,
    /// Cluster label per distance-matrix row.
    pub labels: Vec<usize>,
    /// `(K, wicd)` for every evaluated K, ascending. The first point is the
    /// `k_min - 1` anchor that lets the knee land on `k_min`.
    pub wicd_curve: Vec<(usize, f64)>,
    pub chosen_wicd: f64,
    pub weak_knee: bool,
}

impl ClusteringResult {
    pub fn assignment<'a>(&self, dm: &'a DistanceMatrix) -> BTreeMap<&'a str, usize> {
        dm.ids().iter().map(String::as_str).zip(self.labels.iter().copied()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootCauseCluster {
    pub cluster_id: usize,
    pub members: Vec<String>,
    /// Row indices of the members in the distance matrix.
    pub member_indices: Vec<usize>,
    pub medoid: String,
    pub mean_pairwise_distance: f64,
    pub assignment_threshold: Option<f64>,
}

fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut g = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        g[l].push(i);
    }
    g.retain(|m| !m.is_empty());
    g
}

fn mean_pairwise(dm: &DistanceMatrix, members: &[usize]) -> f64 {
    let m = members.len();
    if m < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (x, &i) in members.iter().enumerate() {
        for &j in &members[x + 1..] {
            sum += dm.get(i, j);
        }
    }
    sum / (m * (m - 1) / 2) as f64
}

/// Weighted intra-cluster distance: `sum_c (|c| / n) * meanPairwise(c)`,
/// singletons contributing 0.
pub fn wicd(labels: &[usize], dm: &DistanceMatrix) -> f64 {
    let n = dm.len() as f64;
    groups(labels)
        .iter()
        .map(|g| g.len() as f64 / n * mean_pairwise(dm, g))
        .sum()
}

fn all_equal(dm: &DistanceMatrix) -> bool {
    let first = dm.get(0, 1);
    (0..dm.len()).all(|i| (i + 1..dm.len()).all(|j| dm.get(i, j) == first))
}

/// Builds the dendrogram once, evaluates WICD for `K = k_min - 1 ..= k_max`
/// and picks K at the kneedle knee (clamped to `k_min..=k_max`).
pub fn select_clusters(
    dm: &DistanceMatrix,
    layer_index: usize,
    k_min: usize,
    k_max: usize,
    sensitivity: f64,
) -> Result<ClusteringResult> {
    let n = dm.len();
    if !(2 <= k_min && k_min < k_max && k_max < n) {
        return Err(ClusterError::Invalid(format!(
            "cluster range {k_min}..={k_max} invalid for {n} items (need 2 <= k_min < k_max <= n-1)"
        )));
    }
    let tree = hac_average_linkage(dm)?;
    let mut curve = Vec::with_capacity(k_max - k_min + 2);
    let mut cuts = Vec::with_capacity(k_max - k_min + 2);
    for k in k_min - 1..=k_max {
        let labels = cut(&tree, k)?;
        curve.push((k, wicd(&labels, dm)));
        cuts.push(labels);
    }
    let (pos, weak) = if all_equal(dm) {
        (1, true)
    } else {
        let xs: Vec<f64> = curve.iter().map(|(k, _)| *k as f64).collect();
        let ys: Vec<f64> = curve.iter().map(|(_, w)| *w).collect();
        let knee = kneedle(&xs, &ys, sensitivity)?;
        (knee.index.max(1), knee.weak)
    };
    Ok(ClusteringResult {
        layer_index,
        k: curve[pos].0,
        labels: cuts.swap_remove(pos),
        chosen_wicd: curve[pos].1,
        wicd_curve: curve,
        weak_knee: weak,
    })
}

/// Root cause clusters with medoids; the medoid minimizes the summed
/// distance to the other members (ties to the earliest row).
pub fn build_clusters(result: &ClusteringResult, dm: &DistanceMatrix) -> Vec<RootCauseCluster> {
    groups(&result.labels)
        .into_iter()
        .enumerate()
        .map(|(cluster_id, idx)| {
            let mut medoid = idx[0];
            let mut best = f64::INFINITY;
            for &i in &idx {
                let s: f64 = idx.iter().map(|&j| dm.get(i, j)).sum();
                if s < best {
                    best = s;
                    medoid = i;
                }
            }
            RootCauseCluster {
                cluster_id,
                members: idx.iter().map(|&i| dm.ids()[i].clone()).collect(),
                mean_pairwise_distance: mean_pairwise(dm, &idx),
                medoid: dm.ids()[medoid].clone(),
                member_indices: idx,
                assignment_threshold: None,
            }
        })
        .collect()
}

/// Dimensionless layer quality: chosen WICD over the mean pairwise distance
/// of the whole matrix. Lower is better.
pub fn layer_score(result: &ClusteringResult, dm: &DistanceMatrix) -> f64 {
    let mean = dm.mean_pairwise();
    if mean > 0.0 {
        result.chosen_wicd / mean
    } else {
        f64::INFINITY
    }
}

/// Layer index with the lowest [`layer_score`]; ties go to the deepest layer.
pub fn select_best_layer(layers: &[(&ClusteringResult, &DistanceMatrix)]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (result, dm) in layers {
        let score = layer_score(result, dm);
        let idx = result.layer_index;
        best = match best {
            Some((s, i)) if s < score || (s == score && i > idx) => Some((s, i)),
            _ => Some((score, idx)),
        };
    }
    best.map(|(_, i)| i).ok_or(ClusterError::TooFew { needed: 1, got: 0 })
}
