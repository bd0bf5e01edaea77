//! Two-stage inference and the max-pool point-importance analysis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{resample, ResampledStreamline, Streamline};
use crate::network::compact::CompactModel;
use crate::network::{argmax_rows, points_matrix, GlobalFeatures, Model, Stage};

/// Stage-one label for superficial white matter.
pub const SWM: usize = 1;
/// Stage-one label for deep white matter.
pub const DWM: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalLabel {
    Cluster(usize),
    NonSwm,
}

impl std::fmt::Display for FinalLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FinalLabel::Cluster(c) => write!(f, "{c}"),
            FinalLabel::NonSwm => f.write_str("NON_SWM"),
        }
    }
}

impl std::str::FromStr for FinalLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "NON_SWM" {
            return Ok(FinalLabel::NonSwm);
        }
        s.parse()
            .map(FinalLabel::Cluster)
            .map_err(|_| Error::Format(format!("invalid label `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParcellationResult {
    /// `SWM` or `DWM` per streamline.
    pub stage_one: Vec<usize>,
    /// Stage-two class in `[0, 2K)`, absent for streamlines filtered at stage one.
    pub stage_two: Vec<Option<usize>>,
    pub final_labels: Vec<FinalLabel>,
    pub clusters: usize,
}

impl ParcellationResult {
    pub fn len(&self) -> usize {
        self.final_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.final_labels.is_empty()
    }

    /// Streamline count per cluster id.
    pub fn cluster_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.clusters];
        for l in &self.final_labels {
            if let FinalLabel::Cluster(c) = l {
                counts[*c] += 1;
            }
        }
        counts
    }

    pub fn non_swm_count(&self) -> usize {
        self.final_labels.iter().filter(|l| **l == FinalLabel::NonSwm).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferenceOptions {
    /// Streamlines per forward pass; does not affect results.
    pub batch_size: usize,
    /// Worker threads; 0 or 1 runs on the calling thread.
    pub workers: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            batch_size: 256,
            workers: 1,
        }
    }
}

/// Runs `f` over `batch_size` chunks of `items`, in parallel when
/// `workers > 1`, and concatenates the results in input order.
fn map_chunks<T, R, F>(items: &[T], batch_size: usize, workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> Result<Vec<R>> + Sync,
{
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be > 0".into()));
    }
    let parts: Vec<Vec<R>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| items.par_chunks(batch_size).map(&f).collect::<Result<_>>())?
    } else {
        items.chunks(batch_size).map(&f).collect::<Result<_>>()?
    };
    Ok(parts.into_iter().flatten().collect())
}

/// Eval-mode class predictions.
pub fn predict_labels(
    model: &Model,
    streamlines: &[ResampledStreamline],
    batch_size: usize,
    workers: usize,
) -> Result<Vec<usize>> {
    map_chunks(streamlines, batch_size, workers, |chunk| {
        Ok(argmax_rows(&model.logits(chunk)?))
    })
}

fn check_models(m1: &Model, m2: &Model) -> Result<usize> {
    if m1.n_points != m2.n_points {
        return Err(Error::PointCountMismatch {
            left: m1.n_points,
            right: m2.n_points,
        });
    }
    if m1.stage != Stage::One || m1.classes() != 2 {
        return Err(Error::ModelMismatch("first model must be a binary stage-one model".into()));
    }
    if m2.stage != Stage::Two || m2.classes() % 2 != 0 {
        return Err(Error::ModelMismatch(
            "second model must be a stage-two model with an even class count".into(),
        ));
    }
    Ok(m2.classes() / 2)
}

/// stages in single precision (see [`CompactModel`]).
/// stages.
pub fn parcellate(m1: &Model, m2: &Model, tract: &[Streamline], opts: &InferenceOptions) -> Result<ParcellationResult> {
    let n = m1.n_points;
    check_models(m1, m2)?;
    let resampled = map_chunks(tract, opts.batch_size, opts.workers, |chunk| {
        chunk.iter().map(|s| resample(s, n)).collect()
    })?;
    parcellate_resampled(m1, m2, &resampled, opts)
}

/// [`parcellate`] on streamlines already resampled to the models' `n`.
pub fn parcellate_resampled(
    m1: &Model,
    m2: &Model,
    streamlines: &[ResampledStreamline],
    opts: &InferenceOptions,
) -> Result<ParcellationResult> {
    let clusters = check_models(m1, m2)?;
    let (c1, c2) = (CompactModel::new(m1), CompactModel::new(m2));
    let stage_one = map_chunks(streamlines, opts.batch_size, opts.workers, |chunk| c1.predict(chunk))?;
    let swm: Vec<&ResampledStreamline> = streamlines
        .iter()
        .zip(&stage_one)
        .filter(|(_, &l)| l == SWM)
        .map(|(s, _)| s)
        .collect();
    let second = map_chunks(&swm, opts.batch_size, opts.workers, |chunk| c2.predict(chunk))?;
    let mut second = second.into_iter();
    let mut stage_two = Vec::with_capacity(streamlines.len());
    let mut final_labels = Vec::with_capacity(streamlines.len());
    for &l in &stage_one {
        if l == SWM {
            let c = second.next().expect("one stage-two label per SWM streamline");
            stage_two.push(Some(c));
            final_labels.push(if c < clusters {
                FinalLabel::Cluster(c)
            } else {
                FinalLabel::NonSwm
            });
        } else {
            stage_two.push(None);
            final_labels.push(FinalLabel::NonSwm);
        }
    }
    Ok(ParcellationResult {
        stage_one,
        stage_two,
        final_labels,
        clusters,
    })
}

/// Per-point-index share of the pooled feature dimensions won, aggregated
/// over streamlines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    pub n_points: usize,
    pub features: usize,
    pub streamlines: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Mean normalized score held by the two endpoints together.
    pub endpoint_share: f64,
    pub interior_share: f64,
    /// Raw win counts per streamline and point index.
    #[serde(skip)]
    pub counts: Vec<Vec<u32>>,
}

fn win_counts(g: &GlobalFeatures, n: usize) -> Vec<Vec<u32>> {
    g.argmax
        .rows()
        .into_iter()
        .map(|row| {
            let mut c = vec![0u32; n];
            for &i in row {
                c[i as usize] += 1;
            }
            c
        })
        .collect()
}

/// Counts, for every streamline, how many pooled dimensions each point index
/// wins, and summarizes the normalized counts.
pub fn point_importance(model: &Model, data: &[ResampledStreamline], opts: &InferenceOptions) -> Result<ImportanceProfile> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = model.n_points;
    let counts = map_chunks(data, opts.batch_size, opts.workers, |chunk| {
        let (points, m) = points_matrix(chunk)?;
        if m != n {
            return Err(Error::PointCountMismatch { left: n, right: m });
        }
        Ok(win_counts(&model.encoder.encode_eval(&points, m)?, m))
    })?;
    let features = model.encoder.feature_dim();
    let total = counts.len() as f64;
    let scale = 1.0 / features as f64;
    let mut mean = vec![0.0; n];
    for c in &counts {
        for (m, &v) in mean.iter_mut().zip(c) {
            *m += f64::from(v) * scale;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut var = vec![0.0; n];
    for c in &counts {
        for i in 0..n {
            var[i] += (f64::from(c[i]) * scale - mean[i]).powi(2);
        }
    }
    let std = var.iter().map(|v| (v / total).sqrt()).collect();
    let endpoint_share = if n == 1 { mean[0] } else { mean[0] + mean[n - 1] };
    Ok(ImportanceProfile {
        n_points: n,
        features,
        streamlines: counts.len(),
        mean,
        std,
        endpoint_share,
        interior_share: 1.0 - endpoint_share,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;

    fn tiny(classes: usize, stage: Stage) -> Model {
        let arch = Architecture {
            n_points: 5,
            encoder_widths: vec![8, 16],
            classifier_widths: vec![8],
            projector_widths: vec![8, 4],
            classes,
        };
        Model::init(&arch, stage, false, 3).unwrap()
    }

    fn bias_toward(model: &mut Model, class: usize) {
        let b = &mut model.classifier.output.bias;
        b.fill(0.0);
        b[class] = 1e6;
    }

    fn line(offset: f64) -> Streamline {
        Streamline::new(vec![[offset, 0.0, 0.0], [offset + 10.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn routing_of_final_labels() {
        let mut m1 = tiny(2, Stage::One);
        let mut m2 = tiny(8, Stage::Two);
        let tract = vec![line(0.0), line(5.0)];
        let opts = InferenceOptions::default();

        bias_toward(&mut m1, DWM);
        let r = parcellate(&m1, &m2, &tract, &opts).unwrap();
        assert_eq!(r.final_labels, vec![FinalLabel::NonSwm; 2]);
        assert_eq!(r.stage_two, vec![None, None]);

        bias_toward(&mut m1, SWM);
        bias_toward(&mut m2, 4 + 3);
        let r = parcellate(&m1, &m2, &tract, &opts).unwrap();
        assert_eq!(r.final_labels, vec![FinalLabel::NonSwm; 2]);
        assert_eq!(r.stage_two, vec![Some(7), Some(7)]);

        bias_toward(&mut m2, 3);
        let r = parcellate(&m1, &m2, &tract, &opts).unwrap();
        assert_eq!(r.final_labels, vec![FinalLabel::Cluster(3); 2]);
        assert_eq!(r.cluster_counts(), vec![0, 0, 0, 2]);
    }

    #[test]
    fn empty_tractogram_and_mismatched_models() {
        let m1 = tiny(2, Stage::One);
        let m2 = tiny(8, Stage::Two);
        let r = parcellate(&m1, &m2, &[], &InferenceOptions::default()).unwrap();
        assert!(r.is_empty());
        let mut other = m2.clone();
        other.n_points = 7;
        assert!(matches!(
            parcellate(&m1, &other, &[], &InferenceOptions::default()),
            Err(Error::PointCountMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_streamline_wins_at_index_zero() {
        let m2 = tiny(8, Stage::Two);
        let s = ResampledStreamline::from_points(vec![[1.0, 2.0, 3.0]; 5]).unwrap();
        let p = point_importance(&m2, &[s], &InferenceOptions::default()).unwrap();
        assert_eq!(p.counts[0], vec![16, 0, 0, 0, 0]);
        assert_eq!(p.mean[0], 1.0);
    }

    #[test]
    fn label_tokens_round_trip() {
        for l in [FinalLabel::Cluster(12), FinalLabel::NonSwm] {
            assert_eq!(l.to_string().parse::<FinalLabel>().unwrap(), l);
        }
        assert!("x".parse::<FinalLabel>().is_err());
    }
}
