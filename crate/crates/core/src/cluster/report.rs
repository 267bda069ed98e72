use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{ClusterError, Result, RootCauseCluster};

/// Reductions at or above this flag an explanatory parameter.
pub const HIGH_REDUCTION: f64 = 0.5;

/// Per-image generation parameters (e.g. a `params.csv`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamTable {
    pub names: Vec<String>,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl ParamTable {
    /// Reads `image_id,<param>,...` with a header row.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let bad = |m: String| ClusterError::Invalid(format!("params csv: {m}"));
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.get(0) != Some("image_id") || headers.len() < 2 {
            return Err(bad(format!("unexpected header {headers:?}")));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut rows = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
            let values = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("line {}: {v:?}: {e}", i + 2))))
                .collect::<Result<Vec<_>>>()?;
            rows.insert(rec[0].to_string(), values);
        }
        Ok(Self { names, rows })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub cluster_id: usize,
    pub size: usize,
    /// `1 - Var_cluster / Var_population` per parameter; `None` when not
    /// applicable (singleton cluster or zero population variance).
    pub reductions: Vec<Option<f64>>,
    /// Parameters with reduction >= [`HIGH_REDUCTION`].
    pub flagged: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub parameters: Vec<String>,
    pub population_size: usize,
    pub rows: Vec<VarianceRow>,
}

impl VarianceReport {
    /// Fraction of clusters with at least one flagged parameter.
    pub fn flagged_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| !r.flagged.is_empty()).count() as f64 / self.rows.len() as f64
    }
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn column<'a>(params: &'a ParamTable, ids: impl Iterator<Item = &'a String>, p: usize) -> Result<Vec<f64>> {
    ids.map(|id| {
        params
            .rows
            .get(id)
            .map(|r| r[p])
            .ok_or_else(|| ClusterError::Invalid(format!("no parameters for image {id}")))
    })
    .collect()
}

/// Variance reduction of every generation parameter inside each cluster,
/// relative to the variance over `population` (population variances).
pub fn variance_reduction_report(
    clusters: &[RootCauseCluster],
    params: &ParamTable,
    population: &[String],
) -> Result<VarianceReport> {
    if population.is_empty() {
        return Err(ClusterError::TooFew { needed: 1, got: 0 });
    }
    let mut all_var = Vec::with_capacity(params.names.len());
    for p in 0..params.names.len() {
        all_var.push(variance(&column(params, population.iter(), p)?));
    }
    let mut rows = Vec::with_capacity(clusters.len());
    for c in clusters {
        let mut reductions = Vec::with_capacity(params.names.len());
        let mut flagged = Vec::new();
        for (p, &va) in all_var.iter().enumerate() {
            let values = column(params, c.members.iter(), p)?;
            let r = (c.members.len() >= 2 && va > 0.0).then(|| 1.0 - variance(&values) / va);
            if r.is_some_and(|r| r >= HIGH_REDUCTION) {
                flagged.push(params.names[p].clone());
            }
            reductions.push(r);
        }
        rows.push(VarianceRow {
            cluster_id: c.cluster_id,
            size: c.members.len(),
            reductions,
            flagged,
        });
    }
    Ok(VarianceReport {
        parameters: params.names.clone(),
        population_size: population.len(),
        rows,
    })
}

/// Percentage of error-inducing images an engineer inspects when looking at
/// `images_per_cluster` images of each cluster, capped at 100.
pub fn inspection_ratio(num_clusters: usize, num_error_images: usize, images_per_cluster: usize) -> Result<f64> {
    if num_error_images == 0 {
        return Err(ClusterError::Invalid("no error-inducing images".into()));
    }
    if num_clusters == 0 || images_per_cluster == 0 {
        return Err(ClusterError::Invalid("cluster and per-cluster counts must be positive".into()));
    }
    let pct = 100.0 * (images_per_cluster * num_clusters) as f64 / num_error_images as f64;
    Ok(pct.min(100.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(id: usize, members: &[&str]) -> RootCauseCluster {
        RootCauseCluster {
            cluster_id: id,
            members: members.iter().map(|s| s.to_string()).collect(),
            member_indices: (0..members.len()).collect(),
            medoid: members[0].to_string(),
            mean_pairwise_distance: 0.0,
            assignment_threshold: None,
        }
    }

    fn table() -> ParamTable {
        let csv = "image_id,angle,scale\na,10,1\nb,10,2\nc,30,3\nd,50,4\n";
        ParamTable::from_csv(csv.as_bytes()).unwrap()
    }

    #[test]
    fn reductions() {
        let t = table();
        let pop: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let report = variance_reduction_report(
            &[cluster(0, &["a", "b", "c", "d"]), cluster(1, &["a", "b"]), cluster(2, &["d"])],
            &t,
            &pop,
        )
        .unwrap();
        assert_eq!(report.rows[0].reductions, vec![Some(0.0), Some(0.0)]);
        assert!(report.rows[0].flagged.is_empty());
        assert_eq!(report.rows[1].reductions[0], Some(1.0));
        assert_eq!(report.rows[1].flagged, vec!["angle", "scale"]);
        assert_eq!(report.rows[2].reductions, vec![None, None]);
        assert!((report.flagged_fraction() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_population_variance_is_not_applicable() {
        let t = ParamTable::from_csv("image_id,noise\na,0.1\nb,0.1\n".as_bytes()).unwrap();
        let pop = vec!["a".to_string(), "b".to_string()];
        let r = variance_reduction_report(&[cluster(0, &["a", "b"])], &t, &pop).unwrap();
        assert_eq!(r.rows[0].reductions, vec![None]);
        assert!(variance_reduction_report(&[cluster(0, &["zz", "a"])], &t, &pop).is_err());
    }

    #[test]
    fn inspection_percentages() {
        assert_eq!(format!("{:.2}", inspection_ratio(16, 5371, 5).unwrap()), "1.49");
        assert_eq!(inspection_ratio(30, 10, 5).unwrap(), 100.0);
        assert!(inspection_ratio(3, 0, 5).is_err());
    }
}
