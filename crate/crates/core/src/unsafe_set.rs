//! Improvement-set processing: assign new images to root cause clusters by
//! heatmap distance, keep the close ones (the unsafe set), attach human
//! labels and balance clusters by bootstrap resampling.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{euclidean, DistanceMatrix, RootCauseCluster};
use crate::seed;

#[derive(Debug, Error)]
pub enum UnsafeError {
    #[error("heatmap of {image_id} has {got} values, cluster heatmaps have {expected}")]
    ShapeMismatch {
        image_id: String,
        expected: usize,
        got: usize,
    },
    #[error("no clusters to assign to")]
    NoClusters,
    #[error("{0} thresholds for {1} clusters")]
    ThresholdCount(usize, usize),
    #[error("labels file line {line}: {cause}")]
    MalformedLabels { line: usize, cause: String },
    #[error("no labeled unsafe-set entries to balance")]
    NothingLabeled,
}

pub type Result<T> = std::result::Result<T, UnsafeError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnsafeSetEntry {
    pub image_id: String,
    pub assigned_cluster: usize,
    /// Mean heatmap distance to the members of the assigned cluster.
    pub distance: f64,
    pub label: Option<String>,
}

/// Stored member heatmaps of one cluster at the selected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterMembers {
    pub cluster_id: usize,
    pub heatmaps: Vec<Vec<f64>>,
}

/// Assignment radius per cluster: the largest mean distance from a member to
/// the other members. Singletons get 0.
pub fn cluster_thresholds(clusters: &[RootCauseCluster], dm: &DistanceMatrix) -> Vec<f64> {
    clusters
        .iter()
        .map(|c| {
            let idx = &c.member_indices;
            if idx.len() < 2 {
                return 0.0;
            }
            idx.iter()
                .map(|&i| idx.iter().filter(|&&j| j != i).map(|&j| dm.get(i, j)).sum::<f64>() / (idx.len() - 1) as f64)
                .fold(0.0, f64::max)
        })
        .collect()
}

fn mean_distance(h: &[f64], members: &[Vec<f64>]) -> (f64, bool) {
    let mut sum = 0.0;
    let mut exact = false;
    for m in members {
        let d = euclidean(h, m);
        exact |= d == 0.0;
        sum += d;
    }
    (sum / members.len() as f64, exact)
}

/// Assigns each improvement image to one cluster and keeps it iff its mean
/// distance to that cluster's members is within the cluster threshold.
///
/// The candidate is the cluster holding a member with an identical heatmap
/// if there is one, otherwise the cluster with the smallest mean distance.
/// Ties go to the lowest cluster id. Output keeps input order.
pub fn assign_improvement(
    images: &[(String, Vec<f64>)],
    clusters: &[ClusterMembers],
    thresholds: &[f64],
) -> Result<Vec<UnsafeSetEntry>> {
    if clusters.is_empty() || clusters.iter().all(|c| c.heatmaps.is_empty()) {
        return Err(UnsafeError::NoClusters);
    }
    if thresholds.len() != clusters.len() {
        return Err(UnsafeError::ThresholdCount(thresholds.len(), clusters.len()));
    }
    let dim = clusters.iter().find_map(|c| c.heatmaps.first()).map(Vec::len).unwrap_or(0);
    for c in clusters {
        if let Some(h) = c.heatmaps.iter().find(|h| h.len() != dim) {
            return Err(UnsafeError::ShapeMismatch {
                image_id: format!("member of cluster {}", c.cluster_id),
                expected: dim,
                got: h.len(),
            });
        }
    }
    if let Some((id, h)) = images.iter().find(|(_, h)| h.len() != dim) {
        return Err(UnsafeError::ShapeMismatch {
            image_id: id.clone(),
            expected: dim,
            got: h.len(),
        });
    }
    let mut order: Vec<usize> = (0..clusters.len()).filter(|&i| !clusters[i].heatmaps.is_empty()).collect();
    order.sort_by_key(|&i| clusters[i].cluster_id);
    let picks: Vec<Option<UnsafeSetEntry>> = images
        .par_iter()
        .map(|(id, h)| {
            let scored: Vec<(usize, f64, bool)> = order
                .iter()
                .map(|&i| {
                    let (d, exact) = mean_distance(h, &clusters[i].heatmaps);
                    (i, d, exact)
                })
                .collect();
            let (ci, dist, _) = scored
                .iter()
                .copied()
                .find(|s| s.2)
                .unwrap_or_else(|| scored.iter().copied().fold(scored[0], |b, s| if s.1 < b.1 { s } else { b }));
            (dist <= thresholds[ci]).then(|| UnsafeSetEntry {
                image_id: id.clone(),
                assigned_cluster: clusters[ci].cluster_id,
                distance: dist,
                label: None,
            })
        })
        .collect();
    Ok(picks.into_iter().flatten().collect())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelIngest {
    pub labeled: Vec<UnsafeSetEntry>,
    /// Entries without a label; excluded from balancing.
    pub unlabeled: Vec<String>,
    pub warnings: Vec<String>,
}

/// Reads `image_id,label` rows (header optional) and attaches labels to the
/// entries. Later rows win over earlier ones for the same image.
pub fn ingest_labels<R: Read>(entries: &[UnsafeSetEntry], reader: R) -> Result<LabelIngest> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let known: HashMap<&str, usize> = entries.iter().enumerate().map(|(i, e)| (e.image_id.as_str(), i)).collect();
    let mut labels: HashMap<usize, String> = HashMap::new();
    let mut warnings = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| UnsafeError::MalformedLabels { line, cause: e.to_string() })?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if line == 1 && rec.len() == 2 && &rec[0] == "image_id" && &rec[1] == "label" {
            continue;
        }
        if rec.len() != 2 || rec[0].is_empty() || rec[1].is_empty() {
            return Err(UnsafeError::MalformedLabels {
                line,
                cause: format!("expected 'image_id,label', got {} fields", rec.len()),
            });
        }
        match known.get(&rec[0]) {
            Some(&idx) => {
                if labels.insert(idx, rec[1].to_string()).is_some() {
                    warnings.push(format!("line {line}: duplicate label for {}, last one wins", &rec[0]));
                }
            }
            None => warnings.push(format!("line {line}: unknown image_id {}, ignored", &rec[0])),
        }
    }
    let mut out = LabelIngest {
        warnings,
        ..LabelIngest::default()
    };
    for (i, e) in entries.iter().enumerate() {
        match labels.remove(&i) {
            Some(label) => out.labeled.push(UnsafeSetEntry {
                label: Some(label),
                ..e.clone()
            }),
            None => out.unlabeled.push(e.image_id.clone()),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancedEntry {
    pub image_id: String,
    pub label: String,
    pub source_cluster: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BalancedUnsafeSet {
    pub entries: Vec<BalancedEntry>,
}

impl BalancedUnsafeSet {
    pub fn cluster_sizes(&self) -> BTreeMap<usize, usize> {
        let mut sizes = BTreeMap::new();
        for e in &self.entries {
            *sizes.entry(e.source_cluster).or_insert(0) += 1;
        }
        sizes
    }
}

/// Tops every cluster up to the size of the largest one by sampling its own
/// members uniformly with replacement from the `balance` stream of `seed`.
/// Clusters are emitted in ascending id order: originals first, then the
/// drawn duplicates. Entries without a label are skipped.
pub fn balance(labeled: &[UnsafeSetEntry], seed: u64) -> Result<BalancedUnsafeSet> {
    let mut by_cluster: BTreeMap<usize, Vec<&UnsafeSetEntry>> = BTreeMap::new();
    for e in labeled.iter().filter(|e| e.label.is_some()) {
        by_cluster.entry(e.assigned_cluster).or_default().push(e);
    }
    let target = by_cluster.values().map(Vec::len).max().ok_or(UnsafeError::NothingLabeled)?;
    let mut rng = seed::stream(seed, "balance");
    let mut entries = Vec::with_capacity(target * by_cluster.len());
    for (&cluster, members) in &by_cluster {
        let to_entry = |e: &UnsafeSetEntry| BalancedEntry {
            image_id: e.image_id.clone(),
            label: e.label.clone().expect("filtered to labeled entries"),
            source_cluster: cluster,
        };
        entries.extend(members.iter().map(|e| to_entry(e)));
        for _ in members.len()..target {
            entries.push(to_entry(members[rng.gen_range(0..members.len())]));
        }
    }
    Ok(BalancedUnsafeSet { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::distance_matrix;

    fn rcc(id: usize, idx: &[usize], ids: &[&str]) -> RootCauseCluster {
        RootCauseCluster {
            cluster_id: id,
            members: ids.iter().map(|s| s.to_string()).collect(),
            member_indices: idx.to_vec(),
            medoid: ids[0].to_string(),
            mean_pairwise_distance: 0.0,
            assignment_threshold: None,
        }
    }

    fn entry(id: &str, cluster: usize, label: Option<&str>) -> UnsafeSetEntry {
        UnsafeSetEntry {
            image_id: id.into(),
            assigned_cluster: cluster,
            distance: 0.0,
            label: label.map(Into::into),
        }
    }

    #[test]
    fn thresholds() {
        let ids: Vec<String> = ["a", "b", "c", "d", "e", "f"].iter().map(|s| s.to_string()).collect();
        let v = vec![vec![0.0], vec![4.0], vec![100.0], vec![10.0], vec![11.0], vec![12.0]];
        let dm = distance_matrix(&ids, &v).unwrap();
        let t = cluster_thresholds(
            &[rcc(0, &[0, 1], &["a", "b"]), rcc(1, &[2], &["c"]), rcc(2, &[3, 4, 5], &["d", "e", "f"])],
            &dm,
        );
        assert_eq!(t, vec![4.0, 0.0, 1.5]);
    }

    #[test]
    fn assignment_filters_and_prefers_exact_matches() {
        let clusters = vec![
            ClusterMembers { cluster_id: 0, heatmaps: vec![vec![0.0, 0.0], vec![0.0, 2.0]] },
            ClusterMembers { cluster_id: 1, heatmaps: vec![vec![10.0, 0.0]] },
        ];
        let thresholds = [2.0, 0.0];
        let images = vec![
            ("same".to_string(), vec![0.0, 2.0]),
            ("single".to_string(), vec![10.0, 0.0]),
            ("far".to_string(), vec![500.0, 500.0]),
            ("near".to_string(), vec![0.0, 1.0]),
        ];
        let out = assign_improvement(&images, &clusters, &thresholds).unwrap();
        let got: Vec<(&str, usize, f64)> = out.iter().map(|e| (e.image_id.as_str(), e.assigned_cluster, e.distance)).collect();
        assert_eq!(got, vec![("same", 0, 1.0), ("single", 1, 0.0), ("near", 0, 1.0)]);
        let bad = vec![("x".to_string(), vec![1.0])];
        assert!(matches!(assign_improvement(&bad, &clusters, &thresholds), Err(UnsafeError::ShapeMismatch { .. })));
    }

    #[test]
    fn label_ingestion() {
        let entries = vec![entry("a", 0, None), entry("b", 1, None)];
        let all = ingest_labels(&entries, "image_id,label\na,1\nb,0\n".as_bytes()).unwrap();
        assert!(all.unlabeled.is_empty());
        assert_eq!(all.labeled[1].label.as_deref(), Some("0"));

        let none = ingest_labels(&entries, "".as_bytes()).unwrap();
        assert_eq!(none.unlabeled, vec!["a", "b"]);
        assert!(matches!(balance(&none.labeled, 1), Err(UnsafeError::NothingLabeled)));

        let unknown = ingest_labels(&entries, "a,1\nzzz,0\na,0\n".as_bytes()).unwrap();
        assert_eq!(unknown.warnings.len(), 2);
        assert_eq!(unknown.labeled, vec![entry("a", 0, Some("0"))]);
        assert_eq!(unknown.unlabeled, vec!["b"]);

        match ingest_labels(&entries, "a,1\nb\n".as_bytes()) {
            Err(UnsafeError::MalformedLabels { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn balancing() {
        let labeled = vec![entry("s", 0, Some("1")), entry("x", 1, Some("0")), entry("y", 1, Some("0")), entry("z", 1, Some("1"))];
        let b = balance(&labeled, 9).unwrap();
        assert_eq!(b.cluster_sizes(), BTreeMap::from([(0, 3), (1, 3)]));
        assert_eq!(b.entries.iter().filter(|e| e.image_id == "s").count(), 3);
        assert_eq!(b, balance(&labeled, 9).unwrap());

        let single = vec![entry("a", 4, Some("0")), entry("b", 4, Some("1"))];
        let b = balance(&single, 0).unwrap();
        assert_eq!(b.entries.iter().map(|e| e.image_id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    }
}
