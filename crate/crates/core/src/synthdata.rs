//! Deterministic synthetic streamline atlas.
//!
//! Clusters are short u-shaped arcs hugging a spherical "cortical" shell of
//! radius 70 mm, each with a smooth random perturbation. Outliers use the same
//! prototype with a much larger perturbation. Deep white matter streamlines are
//! long arcs that pass close to the origin.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::geometry::{resample, streamline_length, Point3, ResampledStreamline, Streamline};
use crate::pipeline::{DWM, SWM};

pub const SHELL_RADIUS: f64 = 70.0;
/// Deep streamlines pass within this distance of the origin.
pub const DWM_CORE_RADIUS: f64 = 20.0;
/// Approximate point spacing of the raw generated polylines.
pub const RAW_SPACING: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticAtlasSpec {
    pub clusters: usize,
    /// Streamlines per cluster, outliers included.
    pub per_cluster: usize,
    pub outlier_fraction: f64,
    pub dwm: usize,
    pub coordinate_sigma: f64,
    pub outlier_sigma: f64,
    pub min_length: f64,
    pub bilateral: bool,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for SyntheticAtlasSpec {
    fn default() -> Self {
        Self {
            clusters: 8,
            per_cluster: 600,
            outlier_fraction: 1.0 / 6.0,
            dwm: 4000,
            coordinate_sigma: 1.0,
            outlier_sigma: 6.0,
            min_length: 40.0,
            bilateral: true,
            n_points: 15,
            seed: 0,
        }
    }
}

impl SyntheticAtlasSpec {
    pub fn outliers_per_cluster(&self) -> usize {
        (self.per_cluster as f64 * self.outlier_fraction).round() as usize
    }

    pub fn plausible_per_cluster(&self) -> usize {
        self.per_cluster - self.outliers_per_cluster().min(self.per_cluster)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic atlas: {m}")));
        if self.clusters == 0 {
            return bad("at least one cluster is required");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier fraction must lie in [0, 1)");
        }
        if !(self.coordinate_sigma > 0.0) || !(self.outlier_sigma > 0.0) {
            return bad("noise levels must be positive");
        }
        if self.outlier_sigma <= self.coordinate_sigma {
            return bad("outlier sigma must exceed coordinate sigma");
        }
        if !(self.min_length >= 0.0) || self.min_length >= 2.0 * SHELL_RADIUS {
            return bad("minimum length must lie in [0, 140) mm");
        }
        if self.n_points < 2 {
            return bad("n_points must be >= 2");
        }
        if self.plausible_per_cluster() == 0 {
            return bad("spec yields no plausible streamlines for some cluster");
        }
        Ok(())
    }
}

/// Generated atlas. `streamlines` holds every SWM streamline (cluster by
/// cluster) followed by the DWM streamlines; `d2` covers the SWM prefix.
#[derive(Debug, Clone)]
pub struct SyntheticAtlas {
    pub spec: SyntheticAtlasSpec,
    pub streamlines: Vec<Streamline>,
    /// Binary SWM/DWM dataset over all streamlines.
    pub d1: LabeledDataset,
    /// `2K`-class dataset over the SWM streamlines: cluster `c` plausible
    /// members are labeled `c`, its outliers `K + c`.
    pub d2: LabeledDataset,
    /// Unperturbed right-hemisphere cluster centers.
    pub prototypes: Vec<ResampledStreamline>,
}

impl SyntheticAtlas {
    pub fn swm_count(&self) -> usize {
        self.d2.len()
    }

    pub fn manifest(&self) -> AtlasManifest {
        AtlasManifest {
            spec: self.spec.clone(),
            streamlines: self.streamlines.len(),
            d1_class_counts: self.d1.class_counts(),
            d2_class_counts: self.d2.class_counts(),
            prototype_checksums: self.prototypes.iter().map(checksum).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasManifest {
    pub spec: SyntheticAtlasSpec,
    pub streamlines: usize,
    pub d1_class_counts: Vec<usize>,
    pub d2_class_counts: Vec<usize>,
    pub prototype_checksums: Vec<String>,
}

/// FNV-1a over the little-endian bytes of every coordinate.
fn checksum(s: &ResampledStreamline) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.points().iter().flatten().flat_map(|v| v.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: Point3) -> Point3 {
    scale(a, 1.0 / dot(a, a).sqrt())
}

/// A curve given by control points, evaluated at parameter `u ∈ [0, 1]`.
#[derive(Debug, Clone)]
enum Curve {
    Cubic([Point3; 4]),
    Quadratic([Point3; 3]),
}

impl Curve {
    fn at(&self, u: f64) -> Point3 {
        let v = 1.0 - u;
        match self {
            Curve::Cubic([a, b, c, d]) => add(
                add(scale(*a, v * v * v), scale(*b, 3.0 * v * v * u)),
                add(scale(*c, 3.0 * v * u * u), scale(*d, u * u * u)),
            ),
            Curve::Quadratic([a, b, c]) => add(add(scale(*a, v * v), scale(*b, 2.0 * v * u)), scale(*c, u * u)),
        }
    }
}

/// Smooth displacement field `Σ_j c_j φ_j(u)` per axis with basis
/// `1, 2u - 1, sin(πu), sin(2πu)` and Gaussian coefficients.
struct Perturbation {
    coeffs: [[f64; 4]; 3],
}

impl Perturbation {
    fn draw(rng: &mut ChaCha8Rng, sigma: f64) -> Self {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let mut coeffs = [[0.0; 4]; 3];
        for axis in &mut coeffs {
            for c in axis.iter_mut() {
                *c = normal.sample(rng);
            }
        }
        Self { coeffs }
    }

    fn at(&self, u: f64) -> Point3 {
        let basis = [
            1.0,
            2.0 * u - 1.0,
            (std::f64::consts::PI * u).sin(),
            (2.0 * std::f64::consts::PI * u).sin(),
        ];
        let mut out = [0.0; 3];
        for (o, c) in out.iter_mut().zip(&self.coeffs) {
            *o = c.iter().zip(&basis).map(|(c, b)| c * b).sum();
        }
        out
    }
}

const DENSE_SAMPLES: usize = 256;

/// Samples `curve + perturbation` densely, then resamples to roughly
/// [`RAW_SPACING`] mm between points, at the 32-bit precision of the
/// tractogram file.
fn sample(curve: &Curve, perturbation: Option<&Perturbation>) -> Result<Streamline> {
    let dense: Vec<Point3> = (0..DENSE_SAMPLES)
        .map(|i| {
            let u = i as f64 / (DENSE_SAMPLES - 1) as f64;
            let p = curve.at(u);
            perturbation.map_or(p, |d| add(p, d.at(u)))
        })
        .collect();
    let dense = Streamline::new(dense)?;
    let length = streamline_length(&dense);
    let count = ((length / RAW_SPACING).ceil() as usize + 1).max(2);
    let points = resample(&dense, count)?
        .points()
        .iter()
        .map(|p| p.map(|v| v as f32 as f64))
        .collect();
    Streamline::new(points)
}

fn mirror(s: &Streamline) -> Streamline {
    Streamline::new(s.points().iter().map(|p| [-p[0], p[1], p[2]]).collect()).expect("mirror keeps validity")
}

/// Unit direction of cluster `c`'s center: a golden-angle spiral over the
/// right-hemisphere cap `x ∈ [0.3, 0.95]`.
fn cluster_direction(c: usize, clusters: usize) -> Point3 {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let x = 0.3 + 0.65 * (c as f64 + 0.5) / clusters as f64;
    let r = (1.0 - x * x).sqrt();
    let phi = golden * c as f64;
    [x, r * phi.cos(), r * phi.sin()]
}

/// U-shaped arc: endpoints on the shell either side of `center`, pulled
/// inward by the two interior control points.
fn u_arc(center: Point3, rng: &mut ChaCha8Rng, min_length: f64) -> Curve {
    let helper = if center[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] };
    let e1 = normalize(cross(center, helper));
    let e2 = cross(center, e1);
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let tangent = add(scale(e1, theta.cos()), scale(e2, theta.sin()));
    let half_chord = rng.gen_range(14.0..18.0);
    let mut depth = rng.gen_range(12.0..18.0);
    loop {
        let alpha = half_chord / SHELL_RADIUS;
        let a = scale(add(scale(center, alpha.cos()), scale(tangent, alpha.sin())), SHELL_RADIUS);
        let b = scale(add(scale(center, alpha.cos()), scale(tangent, -alpha.sin())), SHELL_RADIUS);
        let inward = scale(center, -depth);
        let curve = Curve::Cubic([a, add(a, inward), add(b, inward), b]);
        let approx: f64 = (1..64)
            .map(|i| {
                let p = curve.at((i - 1) as f64 / 63.0);
                let q = curve.at(i as f64 / 63.0);
                dot(add(q, scale(p, -1.0)), add(q, scale(p, -1.0))).sqrt()
            })
            .sum();
        if approx >= min_length + 5.0 || depth > SHELL_RADIUS {
            return curve;
        }
        depth += 2.0;
    }
}

/// Long arc between two well separated shell points passing through a point
/// within [`DWM_CORE_RADIUS`] of the origin.
fn deep_arc(rng: &mut ChaCha8Rng) -> Curve {
    let a: Point3 = UnitSphere.sample(rng);
    let b = loop {
        let b: Point3 = UnitSphere.sample(rng);
        if dot(a, b) < -0.2 {
            break b;
        }
    };
    let a = scale(a, SHELL_RADIUS);
    let b = scale(b, SHELL_RADIUS);
    let dir: Point3 = UnitSphere.sample(rng);
    let core = scale(dir, rng.gen_range(0.0..0.75 * DWM_CORE_RADIUS));
    // Quadratic Bézier whose midpoint is `core`.
    let q = scale(add(scale(core, 4.0), scale(add(a, b), -1.0)), 0.5);
    Curve::Quadratic([a, q, b])
}

/// Draws `curve + perturbation` until the streamline reaches `min_length`.
fn perturbed(curve: &Curve, sigma: f64, min_length: f64, rng: &mut ChaCha8Rng) -> Result<Streamline> {
    for _ in 0..1000 {
        let d = Perturbation::draw(rng, sigma);
        let s = sample(curve, Some(&d))?;
        if streamline_length(&s) >= min_length {
            return Ok(s);
        }
    }
    Err(Error::InvalidArgument(
        "could not draw a streamline above the minimum length".into(),
    ))
}

pub fn generate_atlas(spec: &SyntheticAtlasSpec) -> Result<SyntheticAtlas> {
    spec.validate()?;
    let k = spec.clusters;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let curves: Vec<Curve> = (0..k)
        .map(|c| u_arc(cluster_direction(c, k), &mut rng, spec.min_length))
        .collect();
    let prototypes = curves
        .iter()
        .map(|c| resample(&sample(c, None)?, spec.n_points))
        .collect::<Result<Vec<_>>>()?;

    let plausible = spec.plausible_per_cluster();
    let mut streamlines = Vec::with_capacity(k * spec.per_cluster + spec.dwm);
    let mut d2_labels = Vec::with_capacity(k * spec.per_cluster);
    for (c, curve) in curves.iter().enumerate() {
        for j in 0..spec.per_cluster {
            let (sigma, label) = if j < plausible {
                (spec.coordinate_sigma, c)
            } else {
                (spec.outlier_sigma, k + c)
            };
            let s = perturbed(curve, sigma, spec.min_length, &mut rng)?;
            streamlines.push(if spec.bilateral && j % 2 == 1 { mirror(&s) } else { s });
            d2_labels.push(label);
        }
    }
    let swm = streamlines.len();
    for _ in 0..spec.dwm {
        let curve = deep_arc(&mut rng);
        streamlines.push(perturbed(&curve, spec.coordinate_sigma, spec.min_length, &mut rng)?);
    }

    let resampled = streamlines
        .iter()
        .map(|s| resample(s, spec.n_points))
        .collect::<Result<Vec<_>>>()?;
    let d1_labels = (0..streamlines.len()).map(|i| if i < swm { SWM } else { DWM }).collect();
    let d2 = LabeledDataset::new(resampled[..swm].to_vec(), d2_labels, 2 * k)?;
    let d1 = LabeledDataset::new(resampled, d1_labels, 2)?;
    Ok(SyntheticAtlas {
        spec: spec.clone(),
        streamlines,
        d1,
        d2,
        prototypes,
    })
}

/// Seeded shuffle of `0..len` dealt round-robin into `folds` disjoint folds.
pub fn kfold_split(len: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    if folds > len {
        return Err(Error::InvalidArgument(format!("{folds} folds for {len} items")));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::with_capacity(len / folds + 1); folds];
    for (i, idx) in order.into_iter().enumerate() {
        out[i % folds].push(idx);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticAtlasSpec {
        SyntheticAtlasSpec {
            clusters: 4,
            per_cluster: 100,
            outlier_fraction: 0.2,
            dwm: 200,
            ..Default::default()
        }
    }

    #[test]
    fn sizes_follow_spec() {
        let atlas = generate_atlas(&small()).unwrap();
        assert_eq!(atlas.d2.len(), 400);
        let counts = atlas.d2.class_counts();
        assert_eq!(counts[..4].iter().sum::<usize>(), 320);
        assert_eq!(counts[4..].iter().sum::<usize>(), 80);
        assert_eq!(atlas.d1.len(), 600);
        assert_eq!(atlas.d1.class_counts(), vec![200, 400]);
    }

    #[test]
    fn lengths_and_determinism() {
        let a = generate_atlas(&small()).unwrap();
        let b = generate_atlas(&small()).unwrap();
        assert_eq!(a.streamlines, b.streamlines);
        assert_eq!(a.d2, b.d2);
        for s in &a.streamlines {
            assert!(streamline_length(s) >= 40.0);
        }
    }

    #[test]
    fn deep_arcs_cross_the_core() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c = deep_arc(&mut rng);
            let mid = c.at(0.5);
            assert!(dot(mid, mid).sqrt() < DWM_CORE_RADIUS);
        }
    }

    #[test]
    fn rejects_empty_plausible_classes() {
        let spec = SyntheticAtlasSpec {
            per_cluster: 1,
            outlier_fraction: 0.9,
            ..small()
        };
        assert!(generate_atlas(&spec).is_err());
    }

    #[test]
    fn folds_partition() {
        let folds = kfold_split(100, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 20));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(folds, kfold_split(100, 5, 3).unwrap());
        assert!(kfold_split(3, 4, 0).is_err());
    }
}
