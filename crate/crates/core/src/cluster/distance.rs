use rayon::prelude::*;

use super::{ClusterError, Result};

/// Symmetric matrix of pairwise Euclidean distances, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Wraps a precomputed square matrix after checking symmetry, zero
    /// diagonal and non-negative finite entries.
    pub fn from_square(ids: Vec<String>, d: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if d.len() != n * n {
            return Err(ClusterError::Invalid(format!("{n} ids but {} entries", d.len())));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(ClusterError::Invalid(format!("nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                let v = d[i * n + j];
                if !(v.is_finite() && v >= 0.0) || v != d[j * n + i] {
                    return Err(ClusterError::Invalid(format!("bad entry at ({i}, {j})")));
                }
            }
        }
        Ok(Self { ids, d })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ids.len();
        &self.d[i * n..(i + 1) * n]
    }

    /// Mean over all unordered pairs `i < j`; 0 for fewer than two items.
    pub fn mean_pairwise(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += self.get(i, j);
            }
        }
        sum / (n * (n - 1) / 2) as f64
    }

    /// Restriction to the given indices, in that order.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let ids = idx.iter().map(|&i| self.ids[i].clone()).collect();
        let d = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self { ids, d }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn validate(ids: &[String], vectors: &[Vec<f64>]) -> Result<()> {
    if ids.len() != vectors.len() {
        return Err(ClusterError::Invalid(format!("{} ids for {} heatmaps", ids.len(), vectors.len())));
    }
    if vectors.len() < 2 {
        return Err(ClusterError::TooFew { needed: 2, got: vectors.len() });
    }
    let len = vectors[0].len();
    for (id, v) in ids.iter().zip(vectors) {
        if v.len() != len {
            return Err(ClusterError::LengthMismatch {
                a: ids[0].clone(),
                b: id.clone(),
                len_a: len,
                len_b: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ClusterError::NonFinite(id.clone()));
        }
    }
    Ok(())
}

fn assemble(ids: Vec<String>, upper: Vec<Vec<f64>>) -> DistanceMatrix {
    let n = ids.len();
    let mut d = vec![0.0; n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    DistanceMatrix { ids, d }
}

/// Pairwise Euclidean distances between flattened heatmaps. Rows of the upper
/// triangle are computed in parallel and mirrored.
pub fn distance_matrix(ids: &[String], vectors: &[Vec<f64>]) -> Result<DistanceMatrix> {
    validate(ids, vectors)?;
    let n = vectors.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| euclidean(&vectors[i], &vectors[j])).collect())
        .collect();
    Ok(assemble(ids.to_vec(), upper))
}

/// Single-threaded twin of [`distance_matrix`].
pub fn distance_matrix_sequential(ids: &[String], vectors: &[Vec<f64>]) -> Result<DistanceMatrix> {
    validate(ids, vectors)?;
    let n = vectors.len();
    let upper = (0..n)
        .map(|i| (i + 1..n).map(|j| euclidean(&vectors[i], &vectors[j])).collect())
        .collect();
    Ok(assemble(ids.to_vec(), upper))
}
