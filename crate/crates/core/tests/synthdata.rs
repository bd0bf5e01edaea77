use swm_core::synthdata::{generate_atlas, kfold_split, SyntheticAtlasSpec, SHELL_RADIUS};
use swm_core::{mdf_distance, reflect_bilateral, streamline_length};

fn spec() -> SyntheticAtlasSpec {
    SyntheticAtlasSpec {
        per_cluster: 240,
        dwm: 600,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn plausible_members_are_nearest_to_their_own_prototype() {
    let atlas = generate_atlas(&spec()).unwrap();
    let k = atlas.spec.clusters;
    let mut candidates = Vec::new();
    for (c, p) in atlas.prototypes.iter().enumerate() {
        candidates.push((c, p.clone()));
        candidates.push((c, reflect_bilateral(p)));
    }
    let mut total = 0;
    let mut hits = 0;
    for (s, &label) in atlas.d2.streamlines.iter().zip(&atlas.d2.labels) {
        if label >= k {
            continue;
        }
        total += 1;
        let nearest = candidates
            .iter()
            .map(|(c, p)| (*c, mdf_distance(s, p).unwrap()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        hits += usize::from(nearest == label);
    }
    assert_eq!(total, k * atlas.spec.plausible_per_cluster());
    assert!(hits as f64 / total as f64 >= 0.99, "{hits}/{total}");
}

#[test]
fn outliers_sit_farther_from_the_prototype_than_members() {
    let atlas = generate_atlas(&spec()).unwrap();
    let k = atlas.spec.clusters;
    let own = |i: usize| {
        let c = atlas.d2.labels[i] % k;
        let s = &atlas.d2.streamlines[i];
        let p = &atlas.prototypes[c];
        mdf_distance(s, p).unwrap().min(mdf_distance(s, &reflect_bilateral(p)).unwrap())
    };
    let mean = |outlier: bool| {
        let d: Vec<f64> = (0..atlas.d2.len()).filter(|&i| (atlas.d2.labels[i] >= k) == outlier).map(own).collect();
        d.iter().sum::<f64>() / d.len() as f64
    };
    assert!(mean(true) > 2.0 * mean(false));
}

#[test]
fn bilateral_members_alternate_hemispheres() {
    let atlas = generate_atlas(&spec()).unwrap();
    let per = atlas.spec.per_cluster;
    for (i, s) in atlas.d2.streamlines.iter().enumerate() {
        let mean_x: f64 = s.points().iter().map(|p| p[0]).sum::<f64>() / s.n_points() as f64;
        if (i % per) % 2 == 0 {
            assert!(mean_x > 0.0, "streamline {i}");
        } else {
            assert!(mean_x < 0.0, "streamline {i}");
        }
    }
}

#[test]
fn lengths_and_depths_separate_the_two_tissue_types() {
    let atlas = generate_atlas(&spec()).unwrap();
    let swm = atlas.swm_count();
    for (i, s) in atlas.streamlines.iter().enumerate() {
        assert!(streamline_length(s) >= atlas.spec.min_length);
        let closest = s
            .points()
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(f64::INFINITY, f64::min);
        if i < swm && atlas.d2.labels[i] < atlas.spec.clusters {
            assert!(closest > SHELL_RADIUS / 2.0, "SWM streamline {i} dips to {closest}");
        } else if i >= swm {
            assert!(closest < SHELL_RADIUS / 2.0, "DWM streamline {i} stays at {closest}");
        }
    }
}

#[test]
fn generation_is_reproducible_and_seed_dependent() {
    let a = generate_atlas(&spec()).unwrap();
    let b = generate_atlas(&spec()).unwrap();
    assert_eq!(a.streamlines, b.streamlines);
    assert_eq!(a.manifest(), b.manifest());
    let c = generate_atlas(&SyntheticAtlasSpec { seed: 6, ..spec() }).unwrap();
    assert_ne!(a.streamlines, c.streamlines);
}

#[test]
fn folds_partition_the_indices() {
    let folds = kfold_split(103, 5, 9).unwrap();
    let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..103).collect::<Vec<_>>());
    assert!(folds.iter().all(|f| f.len() == 20 || f.len() == 21));
    assert_eq!(folds, kfold_split(103, 5, 9).unwrap());
}
