use crate::error::{Error, Result};
use crate::geometry::{resample, streamline_length, ResampledStreamline, Streamline};

/// Resampled streamlines with integer class labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub streamlines: Vec<ResampledStreamline>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(streamlines: Vec<ResampledStreamline>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if streamlines.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} streamlines but {} labels",
                streamlines.len(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::InvalidDataset("need at least 2 classes".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if let Some(first) = streamlines.first() {
            let n = first.n_points();
            if let Some(s) = streamlines.iter().find(|s| s.n_points() != n) {
                return Err(Error::PointCountMismatch {
                    left: n,
                    right: s.n_points(),
                });
            }
        }
        Ok(Self {
            streamlines,
            labels,
            classes,
        })
    }

    /// Resamples raw streamlines to `n` points. Zero-length streamlines are
    /// rejected.
    pub fn from_raw(raw: &[Streamline], labels: Vec<usize>, classes: usize, n: usize) -> Result<Self> {
        let streamlines = raw
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if streamlines_degenerate(s) {
                    return Err(Error::InvalidDataset(format!("streamline {i} has zero length")));
                }
                resample(s, n)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(streamlines, labels, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_points(&self) -> Option<usize> {
        self.streamlines.first().map(ResampledStreamline::n_points)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            streamlines: indices.iter().map(|&i| self.streamlines[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn streamlines_degenerate(s: &Streamline) -> bool {
    streamline_length(s) == 0.0
}
