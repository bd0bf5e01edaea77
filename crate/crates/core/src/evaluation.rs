//! Classification and parcellation quality metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mdf_distance, Point3, ResampledStreamline};

/// Fraction of positions where `pred` equals `truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty label set".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over classes.
    pub std: f64,
}

/// Per-class F1 with `0/0 = 0`, and the unweighted mean and spread.
pub fn macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> Result<F1Report> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if classes == 0 {
        return Err(Error::InvalidArgument("macro F1 needs at least one class".into()));
    }
    if let Some(&label) = pred.iter().chain(truth).find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut tp = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    let mut actual = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        predicted[p] += 1;
        actual[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    // F1 = 2TP / (predicted + actual), equal to 2PR/(P+R) when both are defined.
    let per_class: Vec<f64> = (0..classes)
        .map(|c| {
            let denom = predicted[c] + actual[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let (mean, std) = mean_std(&per_class).expect("at least one class");
    Ok(F1Report { per_class, mean, std })
}

/// Mean and population standard deviation; `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Fraction of clusters (all `counts.len()` of them, or only those in
/// `subset`) holding at least `threshold` streamlines.
pub fn cluster_identification_rate(counts: &[usize], threshold: usize, subset: Option<&[usize]>) -> Result<f64> {
    if threshold == 0 {
        return Err(Error::InvalidArgument("CIR threshold must be >= 1".into()));
    }
    let ids: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..counts.len()).collect(),
    };
    if ids.is_empty() {
        return Err(Error::InvalidArgument("CIR over an empty cluster set".into()));
    }
    if let Some(&c) = ids.iter().find(|&&c| c >= counts.len()) {
        return Err(Error::LabelOutOfRange {
            label: c,
            classes: counts.len(),
        });
    }
    let hit = ids.iter().filter(|&&c| counts[c] >= threshold).count();
    Ok(hit as f64 / ids.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdaReport {
    /// Mean minimum MDF per cluster; `None` when the subject has no
    /// streamlines in the cluster or the atlas cluster is empty.
    pub per_cluster: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

/// Cluster distance to atlas: for every subject streamline, the minimum MDF
/// to atlas streamlines of its cluster, averaged per cluster.
pub fn cluster_distance_to_atlas(
    subject: &[ResampledStreamline],
    subject_labels: &[usize],
    atlas: &[ResampledStreamline],
    atlas_labels: &[usize],
    clusters: usize,
) -> Result<CdaReport> {
    if subject.len() != subject_labels.len() || atlas.len() != atlas_labels.len() {
        return Err(Error::InvalidArgument("streamline and label counts differ".into()));
    }
    if let Some(&label) = subject_labels.iter().chain(atlas_labels).find(|&&l| l >= clusters) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: clusters,
        });
    }
    let mut by_cluster: Vec<Vec<&ResampledStreamline>> = vec![Vec::new(); clusters];
    for (s, &l) in atlas.iter().zip(atlas_labels) {
        by_cluster[l].push(s);
    }
    let minima: Vec<Option<f64>> = subject
        .par_iter()
        .zip(subject_labels.par_iter())
        .map(|(s, &l)| {
            let mut best: Option<f64> = None;
            for a in &by_cluster[l] {
                let d = mdf_distance(s, a)?;
                best = Some(best.map_or(d, |b| b.min(d)));
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; clusters];
    let mut counts = vec![0usize; clusters];
    let mut warned = vec![false; clusters];
    for (m, &l) in minima.iter().zip(subject_labels) {
        match m {
            Some(d) => {
                sums[l] += d;
                counts[l] += 1;
            }
            None if !warned[l] => {
                log::warn!("atlas cluster {l} is empty; skipped in CDA");
                warned[l] = true;
            }
            None => {}
        }
    }
    let per_cluster: Vec<Option<f64>> = (0..clusters)
        .map(|c| (counts[c] > 0).then(|| sums[c] / counts[c] as f64))
        .collect();
    let present: Vec<f64> = per_cluster.iter().flatten().copied().collect();
    let (mean, std) = match mean_std(&present) {
        Some((m, s)) => (Some(m), Some(s)),
        None => (None, None),
    };
    Ok(CdaReport { per_cluster, mean, std })
}

/// Coefficient of variation (population std / mean) of each cluster's count
/// across subjects. `counts[s][c]` is subject `s`'s count for cluster `c`.
pub fn inter_subject_variability(counts: &[Vec<usize>]) -> Result<Vec<Option<f64>>> {
    if counts.len() < 2 {
        return Err(Error::InvalidArgument("ISPV needs at least 2 subjects".into()));
    }
    let k = counts[0].len();
    if counts.iter().any(|c| c.len() != k) {
        return Err(Error::InvalidArgument("subjects report different cluster counts".into()));
    }
    Ok((0..k)
        .map(|c| {
            let column: Vec<f64> = counts.iter().map(|s| s[c] as f64).collect();
            let (mean, std) = mean_std(&column).expect("non-empty");
            (mean > 0.0).then(|| std / mean)
        })
        .collect())
}

/// Axis-aligned voxel grid. Voxel `(i, j, k)` covers
/// `origin + [i, i+1) * voxel` along each axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point3,
    pub voxel: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel > 0.0) || !self.voxel.is_finite() {
            return Err(Error::InvalidArgument("voxel size must be positive".into()));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid of `voxel`-sized cells covering every point with `padding` mm to
    /// spare on each side.
    pub fn covering<'a>(points: impl IntoIterator<Item = &'a Point3>, voxel: f64, padding: f64) -> Result<Self> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if lo[0] > hi[0] {
            return Err(Error::InvalidArgument("cannot size a grid without points".into()));
        }
        let mut origin = [0.0; 3];
        let mut dims = [0usize; 3];
        for a in 0..3 {
            origin[a] = lo[a] - padding;
            dims[a] = ((hi[a] + padding - origin[a]) / voxel).floor() as usize + 1;
        }
        let grid = Self { origin, voxel, dims };
        grid.validate()?;
        Ok(grid)
    }

    /// Voxel coordinates of `p`, or `None` outside the grid.
    pub fn voxel_of(&self, p: &Point3) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    /// Flat index with the first axis varying fastest.
    pub fn flat(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    /// Smallest whole-voxel extension of this grid containing `p`; the voxel
    /// lattice is preserved.
    pub fn extended_to(&self, p: &Point3) -> Self {
        let mut g = self.clone();
        for a in 0..3 {
            let f = ((p[a] - g.origin[a]) / g.voxel).floor();
            if f < 0.0 {
                let shift = (-f) as usize;
                g.origin[a] -= shift as f64 * g.voxel;
                g.dims[a] += shift;
            } else if f >= g.dims[a] as f64 {
                g.dims[a] = f as usize + 1;
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfGrid {
    Error,
    Extend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub grid: GridSpec,
    /// Flat values, first axis fastest.
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "heatmap has {} values for {} voxels",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("heatmap values must lie in [0, 1]".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.values[self.grid.flat(idx)]
    }
}

/// Fraction of subjects with at least one streamline point in each voxel.
/// Each subject is a list of point sequences (any sampling density).
pub fn population_heatmap<S: AsRef<[Point3]>>(
    subjects: &[Vec<S>],
    grid: &GridSpec,
    out_of_grid: OutOfGrid,
) -> Result<Heatmap> {
    grid.validate()?;
    if subjects.is_empty() {
        return Err(Error::InvalidArgument("heatmap needs at least one subject".into()));
    }
    let mut grid = grid.clone();
    for p in subjects.iter().flatten().flat_map(|s| s.as_ref()) {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("heatmap input point".into()));
        }
        if grid.voxel_of(p).is_none() {
            match out_of_grid {
                OutOfGrid::Error => return Err(Error::OutsideGrid(p[0], p[1], p[2])),
                OutOfGrid::Extend => grid = grid.extended_to(p),
            }
        }
    }
    let mut hits = vec![0u32; grid.len()];
    let mut touched = vec![false; grid.len()];
    for subject in subjects {
        touched.iter_mut().for_each(|t| *t = false);
        for p in subject.iter().flat_map(|s| s.as_ref()) {
            let idx = grid.voxel_of(p).expect("grid covers all points");
            touched[grid.flat(idx)] = true;
        }
        for (h, &t) in hits.iter_mut().zip(&touched) {
            *h += u32::from(t);
        }
    }
    let total = subjects.len() as f64;
    let values = hits.into_iter().map(|h| f64::from(h) / total).collect();
    Heatmap::new(grid, values)
}

/// `2 Σ min(a, b) / (Σ a + Σ b)`; `None` when both maps are all zero.
pub fn weighted_dice(a: &Heatmap, b: &Heatmap) -> Result<Option<f64>> {
    if a.grid != b.grid {
        return Err(Error::InvalidArgument("heatmaps are defined on different grids".into()));
    }
    let mut overlap = 0.0;
    let mut total = 0.0;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        overlap += x.min(y);
        total += x + y;
    }
    Ok((total > 0.0).then(|| 2.0 * overlap / total))
}

/// Metrics of one parcellated subject.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub streamlines: usize,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<F1Report>,
    pub cluster_counts: Vec<usize>,
    pub cir: f64,
    pub cda: Option<CdaReport>,
}

/// Serializable bundle of everything `eval` computes. Absent entries are
/// metrics that could not be computed from the provided inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub clusters: usize,
    pub cir_threshold: usize,
    pub subjects: Vec<SubjectMetrics>,
    pub ispv: Option<Vec<Option<f64>>>,
    pub wdice: Option<Vec<Option<f64>>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2], &[0, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn f1_conventions() {
        let r = macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(r.per_class, vec![1.0; 3]);
        assert_eq!((r.mean, r.std), (1.0, 0.0));
        let r = macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.per_class[2], 0.0);
    }

    #[test]
    fn cir_cases() {
        let counts = [12, 9, 0, 10];
        assert_eq!(cluster_identification_rate(&counts, 10, None).unwrap(), 0.5);
        assert_eq!(cluster_identification_rate(&[10, 11], 10, None).unwrap(), 1.0);
        assert_eq!(cluster_identification_rate(&counts, 10, Some(&[0, 3])).unwrap(), 1.0);
    }

    #[test]
    fn ispv_cases() {
        let r = inter_subject_variability(&[vec![10, 5, 0], vec![10, 15, 0], vec![10, 10, 0]]).unwrap();
        assert_eq!(r[0], Some(0.0));
        assert_eq!(r[2], None);
        let r = inter_subject_variability(&[vec![5], vec![15]]).unwrap();
        assert_eq!(r[0], Some(0.5));
    }

    #[test]
    fn wdice_cases() {
        let grid = GridSpec {
            origin: [0.0; 3],
            voxel: 1.0,
            dims: [2, 1, 1],
        };
        let a = Heatmap::new(grid.clone(), vec![1.0, 0.0]).unwrap();
        let b = Heatmap::new(grid.clone(), vec![0.5, 0.5]).unwrap();
        let c = Heatmap::new(grid.clone(), vec![0.0, 1.0]).unwrap();
        let z = Heatmap::new(grid, vec![0.0, 0.0]).unwrap();
        assert_eq!(weighted_dice(&a, &b).unwrap(), Some(0.5));
        assert_eq!(weighted_dice(&a, &a).unwrap(), Some(1.0));
        assert_eq!(weighted_dice(&a, &c).unwrap(), Some(0.0));
        assert_eq!(weighted_dice(&z, &z).unwrap(), None);
    }

    #[test]
    fn heatmap_fractions_and_extension() {
        let grid = GridSpec {
            origin: [0.0; 3],
            voxel: 2.0,
            dims: [2, 2, 2],
        };
        let touch = vec![vec![vec![[1.0, 1.0, 1.0]]]];
        let miss = vec![vec![vec![[3.0, 3.0, 3.0]]]];
        let subjects = [touch.clone(), touch, miss.clone(), miss].concat();
        let h = population_heatmap(&subjects, &grid, OutOfGrid::Error).unwrap();
        assert_eq!(h.get([0, 0, 0]), 0.5);
        assert_eq!(h.get([1, 1, 1]), 0.5);

        let far = vec![vec![vec![[-1.0, 0.5, 5.0]]]];
        assert!(matches!(
            population_heatmap(&far, &grid, OutOfGrid::Error),
            Err(Error::OutsideGrid(..))
        ));
        let h = population_heatmap(&far, &grid, OutOfGrid::Extend).unwrap();
        assert_eq!(h.grid.origin, [-2.0, 0.0, 0.0]);
        assert_eq!(h.grid.dims, [3, 2, 3]);
        assert_eq!(h.values.iter().sum::<f64>(), 1.0);
    }
}
