mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use rccdbg_core::cluster::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img{i:02}")).collect()
}

fn random_points(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| (0..dim).map(|_| r.gen_range(-5.0..5.0)).collect()).collect()
}

/// Recompute-everything agglomerative clustering: every step re-derives each
/// cluster pair's mean cross distance from the original matrix.
fn brute_force_average_linkage(dm: &DistanceMatrix) -> Vec<(usize, usize, f64)> {
    let n = dm.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let (ida, a) = &clusters[x];
                let (idb, b) = &clusters[y];
                let mut sum = 0.0;
                for &i in a {
                    for &j in b {
                        sum += dm.get(i, j);
                    }
                }
                let avg = sum / (a.len() * b.len()) as f64;
                let key = ((*ida).min(*idb), (*ida).max(*idb));
                let better = match best {
                    None => true,
                    Some((bd, lo, hi, _, _)) => avg < bd || (avg == bd && key < (lo, hi)),
                };
                if better {
                    best = Some((avg, key.0, key.1, x, y));
                }
            }
        }
        let (d, lo, hi, x, y) = best.unwrap();
        let mut members = clusters[x].1.clone();
        members.extend(clusters[y].1.iter().copied());
        clusters.remove(y);
        clusters.remove(x);
        clusters.push((n + step, members));
        merges.push((lo, hi, d));
    }
    merges
}

#[test]
fn average_linkage_matches_brute_force_oracle() {
    for trial in 0..100u64 {
        let n = 2 + (trial as usize % 11);
        let dm = distance_matrix(&ids(n), &random_points(trial, n, 3)).unwrap();
        let fast = hac_average_linkage(&dm).unwrap();
        let slow = brute_force_average_linkage(&dm);
        assert_eq!(fast.merges.len(), slow.len());
        for (m, (a, b, d)) in fast.merges.iter().zip(&slow) {
            assert_eq!((m.a, m.b), (*a, *b), "trial {trial}");
            assert!((m.distance - d).abs() <= 1e-12 * d.max(1.0), "trial {trial}");
        }
    }
}

#[test]
fn one_dimensional_example() {
    let dm = distance_matrix(&ids(3), &[vec![0.0], vec![1.0], vec![10.0]]).unwrap();
    let oracle = brute_force_average_linkage(&dm);
    assert_eq!(oracle, vec![(0, 1, 1.0), (2, 3, 9.5)]);
    let tree = hac_average_linkage(&dm).unwrap();
    assert_eq!(cut(&tree, 2).unwrap(), vec![0, 0, 1]);
}

fn blobs(seed: u64, centers: &[[f64; 2]], per_blob: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    centers
        .iter()
        .flat_map(|c| (0..per_blob).map(|_| vec![c[0] + r.gen_range(-0.5..0.5), c[1] + r.gen_range(-0.5..0.5)]).collect::<Vec<_>>())
        .collect()
}

#[test]
fn two_blobs_select_two_clusters() {
    let pts = blobs(1, &[[0.0, 0.0], [100.0, 0.0]], 5);
    let dm = distance_matrix(&ids(10), &pts).unwrap();
    // the WICD curve checked directly: one cut per blob is far tighter than K=1
    let tree = hac_average_linkage(&dm).unwrap();
    let k1 = wicd(&cut(&tree, 1).unwrap(), &dm);
    let k2 = wicd(&cut(&tree, 2).unwrap(), &dm);
    assert!(k2 < k1 / 20.0);
    let r = select_clusters(&dm, 0, 2, 8, 1.0).unwrap();
    assert_eq!(r.k, 2);
    assert_eq!(r.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    assert_eq!(r, select_clusters(&dm, 0, 2, 8, 1.0).unwrap());
    let chosen = r.wicd_curve.iter().find(|(k, _)| *k == r.k).unwrap().1;
    assert_eq!(chosen, r.chosen_wicd);
}

#[test]
fn three_blobs_select_three_clusters() {
    let pts = blobs(2, &[[0.0, 0.0], [60.0, 0.0], [30.0, 50.0]], 5);
    let dm = distance_matrix(&ids(15), &pts).unwrap();
    let r = select_clusters(&dm, 0, 2, 8, 1.0).unwrap();
    assert_eq!(r.k, 3);
    let clusters = build_clusters(&r, &dm);
    assert!(clusters.iter().all(|c| c.members.len() == 5));
}

#[test]
fn planted_layer_beats_random_layer() {
    let planted = distance_matrix(&ids(12), &blobs(3, &[[0.0, 0.0], [50.0, 50.0], [0.0, 50.0]], 4)).unwrap();
    let random = distance_matrix(&ids(12), &random_points(4, 12, 8)).unwrap();
    let rp = select_clusters(&planted, 1, 2, 8, 1.0).unwrap();
    let rr = select_clusters(&random, 5, 2, 8, 1.0).unwrap();
    assert!(layer_score(&rp, &planted) < layer_score(&rr, &random));
    assert_eq!(select_best_layer(&[(&rp, &planted), (&rr, &random)]).unwrap(), 1);
}

#[test]
fn wicd_mostly_decreases_along_cuts() {
    // Linkage cuts are not optimal partitions, so a rise is possible; record it.
    let mut violations = 0;
    for trial in 0..50u64 {
        let n = 12;
        let dm = distance_matrix(&ids(n), &random_points(500 + trial, n, 4)).unwrap();
        let tree = hac_average_linkage(&dm).unwrap();
        let curve: Vec<f64> = (1..=n).map(|k| wicd(&cut(&tree, k).unwrap(), &dm)).collect();
        violations += curve.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
    }
    eprintln!("wicd monotonicity violations over 50 random trees: {violations}");
    assert!(violations < 50 * 11);
}

#[test]
fn kneedle_hyperbola_and_elbow() {
    let xs: Vec<f64> = (1..=9).map(f64::from).collect();
    let hyper: Vec<f64> = xs.iter().map(|x| 12.0 / x).collect();
    assert_eq!(kneedle(&xs, &hyper, 1.0).unwrap().x, 3.0);
    for joint in 3..=7 {
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| if x <= joint as f64 { 90.0 - 20.0 * (x - 1.0) } else { 90.0 - 20.0 * (joint as f64 - 1.0) - 1.5 * (x - joint as f64) })
            .collect();
        assert_eq!(kneedle(&xs, &ys, 1.0).unwrap().x, joint as f64, "joint {joint}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_matrix_invariants(seed in 0u64..10_000, n in 2usize..14, dim in 1usize..6) {
        let pts = random_points(seed, n, dim);
        let dm = distance_matrix(&ids(n), &pts).unwrap();
        prop_assert_eq!(&dm, &distance_matrix_sequential(&ids(n), &pts).unwrap());
        for i in 0..n {
            prop_assert_eq!(dm.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(dm.get(i, j), dm.get(j, i));
                prop_assert!(dm.get(i, j) >= 0.0);
                for k in 0..n {
                    prop_assert!(dm.get(i, k) <= dm.get(i, j) + dm.get(j, k) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn dendrogram_and_cut_invariants(seed in 0u64..10_000, n in 2usize..16) {
        let dm = distance_matrix(&ids(n), &random_points(seed, n, 3)).unwrap();
        let tree = hac_average_linkage(&dm).unwrap();
        prop_assert_eq!(tree.merges.len(), n - 1);
        prop_assert!(tree.merges.windows(2).all(|w| w[1].distance >= w[0].distance));
        prop_assert_eq!(tree.merges.last().unwrap().size, n);
        let mut prev: Option<Vec<usize>> = None;
        for k in 1..=n {
            let labels = cut(&tree, k).unwrap();
            let distinct: std::collections::BTreeSet<_> = labels.iter().collect();
            prop_assert_eq!(distinct.len(), k);
            if let Some(coarse) = &prev {
                // finer cut refines the coarser one
                for i in 0..n {
                    for j in 0..n {
                        if labels[i] == labels[j] {
                            prop_assert_eq!(coarse[i], coarse[j]);
                        }
                    }
                }
            }
            prev = Some(labels);
        }
    }

    #[test]
    fn relabeling_ids_keeps_structure(seed in 0u64..10_000, n in 4usize..12) {
        let pts = random_points(seed, n, 2);
        let a = distance_matrix(&ids(n), &pts).unwrap();
        let renamed: Vec<String> = (0..n).map(|i| format!("other-{}", n - i)).collect();
        let b = distance_matrix(&renamed, &pts).unwrap();
        let ra = select_clusters(&a, 0, 2, n - 1, 1.0).unwrap();
        let rb = select_clusters(&b, 0, 2, n - 1, 1.0).unwrap();
        prop_assert_eq!(&ra.labels, &rb.labels);
        prop_assert_eq!(ra.k, rb.k);
    }

    #[test]
    fn kneedle_ignores_affine_rescaling(c in 1u32..50, scale in prop::sample::select(vec![0.5, 2.0, 8.0]), shift in -100i32..100) {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| f64::from(c) / x).collect();
        let moved: Vec<f64> = ys.iter().map(|y| y * scale + f64::from(shift)).collect();
        let a = kneedle(&xs, &ys, 1.0).unwrap();
        let b = kneedle(&xs, &moved, 1.0).unwrap();
        prop_assert_eq!(a.index, b.index);
        prop_assert_eq!(a.weak, b.weak);
    }
}

#[test]
fn table_one_inspection_ratios() {
    for (k, n, want) in [(16, 5371, "1.49"), (17, 1580, "5.38"), (71, 1554, "22.84")] {
        assert_eq!(format!("{:.2}", inspection_ratio(k, n, 5).unwrap()), want);
    }
}
