use super::{ClusterError, DistanceMatrix, Result};

/// One agglomeration step. Original items are clusters `0..n`; the cluster
/// created by merge `t` gets id `n + t`. `a < b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

/// Unweighted average-linkage agglomerative clustering.
///
/// Each step merges the pair of active clusters with the smallest mean
/// cross-pair distance; exact ties go to the pair with the smallest
/// `(lower id, higher id)`. Cross-cluster distance sums are carried forward
/// so every linkage value is `sum / (|A| * |B|)` over original distances.
pub fn hac_average_linkage(dm: &DistanceMatrix) -> Result<Dendrogram> {
    let n = dm.len();
    if n < 2 {
        return Err(ClusterError::TooFew { needed: 2, got: n });
    }
    let mut sums: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| dm.get(i, j)).collect();
    // slot -> (cluster id, size); slots of merged-away clusters become None
    let mut slots: Vec<Option<(usize, usize)>> = (0..n).map(|i| Some((i, 1))).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for p in 0..n {
            let Some((id_p, size_p)) = slots[p] else { continue };
            for q in p + 1..n {
                let Some((id_q, size_q)) = slots[q] else { continue };
                let avg = sums[p * n + q] / (size_p * size_q) as f64;
                let (lo, hi) = if id_p < id_q { (id_p, id_q) } else { (id_q, id_p) };
                let better = match best {
                    None => true,
                    Some((b_avg, b_lo, b_hi, _, _)) => avg < b_avg || (avg == b_avg && (lo, hi) < (b_lo, b_hi)),
                };
                if better {
                    best = Some((avg, lo, hi, p, q));
                }
            }
        }
        let (distance, a, b, p, q) = best.expect("at least two active clusters remain");
        let size = slots[p].unwrap().1 + slots[q].unwrap().1;
        for k in 0..n {
            if slots[k].is_some() && k != p && k != q {
                let s = sums[p * n + k] + sums[q * n + k];
                sums[p * n + k] = s;
                sums[k * n + p] = s;
            }
        }
        slots[p] = Some((n + step, size));
        slots[q] = None;
        merges.push(Merge { a, b, distance, size });
    }
    Ok(Dendrogram { n, merges })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Flat clustering with `k` clusters: replays the first `n - k` merges.
/// Labels are `0..k`, numbered in order of each cluster's smallest member.
pub fn cut(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = dendrogram.n;
    if k < 1 || k > n {
        return Err(ClusterError::Invalid(format!("cluster count {k} outside 1..={n}")));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut rep: Vec<usize> = (0..n).collect();
    for m in &dendrogram.merges[..n - k] {
        let ra = find(&mut parent, rep[m.a]);
        let rb = find(&mut parent, rep[m.b]);
        parent[rb] = ra;
        rep.push(ra);
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let r = find(&mut parent, i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        labels.push(label_of_root[r]);
    }
    Ok(labels)
}
