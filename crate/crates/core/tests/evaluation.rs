mod common;

use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swm_core::evaluation::{
    accuracy, cluster_distance_to_atlas, cluster_identification_rate, inter_subject_variability, macro_f1,
    population_heatmap, weighted_dice, GridSpec, Heatmap, OutOfGrid,
};
use swm_core::{Point3, ResampledStreamline};

use common::random_streamline;

/// Per-class F1 from precision and recall read off a confusion matrix.
fn f1_from_confusion(pred: &[usize], truth: &[usize], classes: usize) -> Vec<f64> {
    let mut cm = vec![vec![0usize; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        cm[t][p] += 1;
    }
    (0..classes)
        .map(|c| {
            let tp = cm[c][c] as f64;
            let col: usize = (0..classes).map(|r| cm[r][c]).sum();
            let row: usize = cm[c].iter().sum();
            if tp == 0.0 {
                return 0.0;
            }
            let precision = tp / col as f64;
            let recall = tp / row as f64;
            2.0 * precision * recall / (precision + recall)
        })
        .collect()
}

#[test]
fn macro_f1_matches_confusion_matrix_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..100 {
        let classes = rng.gen_range(2..10);
        let len = rng.gen_range(1..200);
        let truth: Vec<usize> = (0..len).map(|_| rng.gen_range(0..classes)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.gen_bool(0.7) { t } else { rng.gen_range(0..classes) })
            .collect();
        let report = macro_f1(&pred, &truth, classes).unwrap();
        let expected = f1_from_confusion(&pred, &truth, classes);
        for (a, b) in report.per_class.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let mean = expected.iter().sum::<f64>() / classes as f64;
        assert!((report.mean - mean).abs() < 1e-12);
        let var = expected.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / classes as f64;
        assert!((report.std - var.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn forced_metric_values() {
    assert_eq!(cluster_identification_rate(&[12, 9, 0, 10], 10, None).unwrap(), 0.5);
    assert_eq!(inter_subject_variability(&[vec![10], vec![10], vec![10]]).unwrap(), vec![Some(0.0)]);
    let labels = [0, 1, 2, 1, 0];
    let f1 = macro_f1(&labels, &labels, 3).unwrap();
    assert_eq!(f1.mean, 1.0);
    assert_eq!(accuracy(&labels, &labels).unwrap(), 1.0);

    let grid = GridSpec {
        origin: [0.0; 3],
        voxel: 1.0,
        dims: [3, 2, 2],
    };
    let map = Heatmap::new(grid, vec![0.0, 0.5, 1.0, 0.25, 0.0, 0.0, 0.75, 0.0, 0.0, 0.0, 0.1, 0.0]).unwrap();
    assert_eq!(weighted_dice(&map, &map).unwrap(), Some(1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cluster: Vec<ResampledStreamline> = (0..6).map(|_| random_streamline(&mut rng, 15, 30.0)).collect();
    let cda = cluster_distance_to_atlas(&cluster, &[0; 6], &cluster, &[0; 6], 1).unwrap();
    assert_eq!(cda.per_cluster, vec![Some(0.0)]);
    assert_eq!(cda.mean, Some(0.0));
}

#[test]
fn cir_counts_only_the_requested_subset() {
    assert_eq!(cluster_identification_rate(&[12, 9, 0, 10], 10, Some(&[0, 3])).unwrap(), 1.0);
    assert_eq!(cluster_identification_rate(&[12, 9, 0, 10], 1, None).unwrap(), 0.75);
    assert!(cluster_identification_rate(&[1], 0, None).is_err());
}

fn mdf_reference(a: &[Point3], b: &[Point3]) -> f64 {
    let n = a.len();
    let d = |p: &Point3, q: &Point3| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    let mut direct = 0.0;
    let mut flipped = 0.0;
    for i in 0..n {
        direct += d(&a[i], &b[i]);
        flipped += d(&a[i], &b[n - 1 - i]);
    }
    direct.min(flipped) / n as f64
}

#[test]
fn cda_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let clusters = 4;
    let atlas: Vec<_> = (0..40).map(|_| random_streamline(&mut rng, 15, 40.0)).collect();
    let atlas_labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let subject: Vec<_> = (0..30).map(|_| random_streamline(&mut rng, 15, 40.0)).collect();
    let subject_labels: Vec<usize> = (0..30).map(|_| rng.gen_range(0..clusters)).collect();
    let report = cluster_distance_to_atlas(&subject, &subject_labels, &atlas, &atlas_labels, clusters).unwrap();

    let mut sums: HashMap<usize, (f64, usize)> = HashMap::new();
    for (s, &l) in subject.iter().zip(&subject_labels) {
        let best = atlas
            .iter()
            .zip(&atlas_labels)
            .filter(|(_, &al)| al == l)
            .map(|(a, _)| mdf_reference(s.points(), a.points()))
            .fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            let e = sums.entry(l).or_insert((0.0, 0));
            e.0 += best;
            e.1 += 1;
        }
    }
    for c in 0..clusters {
        match (report.per_cluster[c], sums.get(&c)) {
            (Some(got), Some(&(sum, count))) => assert!((got - sum / count as f64).abs() < 1e-9),
            (None, None) => {}
            other => panic!("cluster {c}: {other:?}"),
        }
    }
    // Atlas cluster 3 is empty, so it is skipped rather than reported.
    assert_eq!(report.per_cluster[3], None);
}

#[test]
fn ispv_is_population_std_over_mean() {
    let counts = vec![vec![10, 0, 4], vec![20, 0, 4], vec![30, 0, 7]];
    let got = inter_subject_variability(&counts).unwrap();
    let cv = |xs: [f64; 3]| {
        let m = xs.iter().sum::<f64>() / 3.0;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0).sqrt() / m
    };
    assert!((got[0].unwrap() - cv([10.0, 20.0, 30.0])).abs() < 1e-15);
    assert_eq!(got[1], None);
    assert!((got[2].unwrap() - cv([4.0, 4.0, 7.0])).abs() < 1e-15);
    assert!(inter_subject_variability(&counts[..1]).is_err());
}

#[test]
fn heatmap_matches_rasterization_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let subjects: Vec<Vec<ResampledStreamline>> = (0..5)
        .map(|_| (0..rng.gen_range(1..6)).map(|_| random_streamline(&mut rng, 15, 12.0)).collect())
        .collect();
    let grid = GridSpec::covering(subjects.iter().flatten().flat_map(|s| s.points()), 2.0, 4.0).unwrap();
    let map = population_heatmap(&subjects, &grid, OutOfGrid::Error).unwrap();

    let mut hits: HashMap<(i64, i64, i64), usize> = HashMap::new();
    for subject in &subjects {
        let voxels: HashSet<(i64, i64, i64)> = subject
            .iter()
            .flat_map(|s| s.points())
            .map(|p| {
                let v = |a: usize| ((p[a] - grid.origin[a]) / grid.voxel).floor() as i64;
                (v(0), v(1), v(2))
            })
            .collect();
        for v in voxels {
            *hits.entry(v).or_default() += 1;
        }
    }
    let mut nonzero = 0;
    for k in 0..grid.dims[2] {
        for j in 0..grid.dims[1] {
            for i in 0..grid.dims[0] {
                let expected = hits.get(&(i as i64, j as i64, k as i64)).copied().unwrap_or(0) as f64 / 5.0;
                assert_eq!(map.get([i, j, k]), expected);
                nonzero += usize::from(expected > 0.0);
            }
        }
    }
    assert_eq!(nonzero, hits.len());
}

#[test]
fn out_of_grid_points_follow_the_policy() {
    let grid = GridSpec {
        origin: [0.0; 3],
        voxel: 1.0,
        dims: [2, 2, 2],
    };
    let subjects = vec![vec![vec![[0.5, 0.5, 0.5], [-1.5, 3.2, 0.1]]]];
    assert!(population_heatmap(&subjects, &grid, OutOfGrid::Error).is_err());
    let map = population_heatmap(&subjects, &grid, OutOfGrid::Extend).unwrap();
    assert_eq!(map.grid.origin, [-2.0, 0.0, 0.0]);
    assert_eq!(map.grid.dims, [4, 4, 2]);
    assert_eq!(map.values.iter().filter(|&&v| v == 1.0).count(), 2);
}

fn map_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(0.0f64..=1.0, n), prop::collection::vec(0.0f64..=1.0, n)))
}

fn heatmap(values: Vec<f64>) -> Heatmap {
    let grid = GridSpec {
        origin: [0.0; 3],
        voxel: 1.0,
        dims: [values.len(), 1, 1],
    };
    Heatmap::new(grid, values).unwrap()
}

proptest! {
    #[test]
    fn weighted_dice_is_symmetric_and_bounded((a, b) in map_pair()) {
        let (ha, hb) = (heatmap(a), heatmap(b));
        let ab = weighted_dice(&ha, &hb).unwrap();
        prop_assert_eq!(ab, weighted_dice(&hb, &ha).unwrap());
        if let Some(v) = ab {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn weighted_dice_reduces_to_binary_dice(a in prop::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<bool> = a.iter().map(|&x| if rng.gen_bool(0.3) { !x } else { x }).collect();
        let both = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
        let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
        let to_map = |v: &[bool]| heatmap(v.iter().map(|&x| f64::from(u8::from(x))).collect());
        let got = weighted_dice(&to_map(&a), &to_map(&b)).unwrap();
        if total == 0 {
            prop_assert_eq!(got, None);
        } else {
            prop_assert_eq!(got, Some(2.0 * both as f64 / total as f64));
        }
    }
}
