//! Single-precision inference copy of a [`Model`].
//!
//! Batch norm is folded into a per-feature scale and shift, and all products
//! run in `f32`. Predictions can differ from the `f64` eval path only on
//! near-ties between logits.

use ndarray::{s, Array1, Array2, ArrayView2, Zip};

use super::{Model, Stage};
use crate::error::{Error, Result};
use crate::geometry::ResampledStreamline;

/// Streamlines pushed through the encoder together.
const CHUNK: usize = 16;

#[derive(Debug, Clone)]
struct FoldedLayer {
    weight: Array2<f32>,
    scale: Array1<f32>,
    shift: Array1<f32>,
}

impl FoldedLayer {
    fn from_dense(layer: &super::DenseNormLayer) -> Self {
        let bn = &layer.norm;
        let inv_std = bn.running_inv_std();
        let scale = &inv_std * &bn.gamma;
        let shift = (&layer.linear.bias - &bn.running_mean) * &scale + &bn.beta;
        Self {
            weight: layer.linear.weight.mapv(|v| v as f32),
            scale: scale.mapv(|v| v as f32),
            shift: shift.mapv(|v| v as f32),
        }
    }

    fn forward(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let mut a = x.dot(&self.weight);
        for mut row in a.rows_mut() {
            Zip::from(&mut row)
                .and(&self.scale)
                .and(&self.shift)
                .for_each(|v, &s, &t| {
                    let y = *v * s + t;
                    *v = if y < 0.0 { 0.0 } else { y };
                });
        }
        a
    }
}

fn check_finite(x: &Array2<f32>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct CompactModel {
    pub stage: Stage,
    pub n_points: usize,
    encoder: Vec<FoldedLayer>,
    hidden: Vec<FoldedLayer>,
    out_weight: Array2<f32>,
    out_bias: Array1<f32>,
}

impl CompactModel {
    pub fn new(model: &Model) -> Self {
        Self {
            stage: model.stage,
            n_points: model.n_points,
            encoder: model.encoder.layers.iter().map(FoldedLayer::from_dense).collect(),
            hidden: model.classifier.hidden.iter().map(FoldedLayer::from_dense).collect(),
            out_weight: model.classifier.output.weight.mapv(|v| v as f32),
            out_bias: model.classifier.output.bias.mapv(|v| v as f32),
        }
    }

    pub fn classes(&self) -> usize {
        self.out_bias.len()
    }

    fn pooled(&self, points: &Array2<f32>) -> Result<Array2<f32>> {
        let n = self.n_points;
        let groups = points.nrows() / n;
        let width = self.encoder.last().map_or(3, |l| l.weight.ncols());
        let mut pooled = Array2::<f32>::zeros((groups, width));
        for start in (0..groups).step_by(CHUNK) {
            let end = (start + CHUNK).min(groups);
            let mut x = points.slice(s![start * n..end * n, ..]).to_owned();
            for layer in &self.encoder {
                x = layer.forward(x.view());
            }
            check_finite(&x, "encoder")?;
            for g in start..end {
                let mut best = pooled.row_mut(g);
                best.assign(&x.row((g - start) * n));
                for i in 1..n {
                    Zip::from(&mut best)
                        .and(x.row((g - start) * n + i))
                        .for_each(|b, &v| {
                            if v > *b {
                                *b = v;
                            }
                        });
                }
            }
        }
        Ok(pooled)
    }

    /// Logits for streamlines resampled to `n_points`.
    pub fn logits(&self, batch: &[impl AsRef<ResampledStreamline>]) -> Result<Array2<f32>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = self.n_points;
        let mut data = Vec::with_capacity(batch.len() * n * 3);
        for s in batch {
            let s = s.as_ref();
            if s.n_points() != n {
                return Err(Error::PointCountMismatch {
                    left: n,
                    right: s.n_points(),
                });
            }
            for p in s.points() {
                data.extend(p.iter().map(|&v| v as f32));
            }
        }
        let points = Array2::from_shape_vec((batch.len() * n, 3), data).expect("shape matches data");
        let mut x = self.pooled(&points)?;
        for layer in &self.hidden {
            x = layer.forward(x.view());
        }
        let mut logits = x.dot(&self.out_weight);
        logits += &self.out_bias;
        check_finite(&logits, "classifier logits")?;
        Ok(logits)
    }

    /// Highest-scoring class per streamline; the lowest index wins ties.
    pub fn predict(&self, batch: &[impl AsRef<ResampledStreamline>]) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn agrees_with_double_precision_logits() {
        let arch = Architecture {
            n_points: 6,
            encoder_widths: vec![8, 16, 32],
            classifier_widths: vec![16, 8],
            projector_widths: vec![16, 8],
            classes: 5,
        };
        let mut model = Model::init(&arch, Stage::Two, false, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for layer in model.encoder.layers.iter_mut().chain(model.classifier.hidden.iter_mut()) {
            layer.norm.running_mean.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            layer.norm.running_var.mapv_inplace(|_| rng.gen_range(0.5..2.0));
        }
        let batch: Vec<_> = (0..40)
            .map(|_| {
                let pts = (0..6)
                    .map(|_| [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)])
                    .collect();
                ResampledStreamline::from_points(pts).unwrap()
            })
            .collect();
        let reference = model.logits(&batch).unwrap();
        let compact = CompactModel::new(&model).logits(&batch).unwrap();
        let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in reference.iter().zip(compact.iter()) {
            assert!((a - *b as f64).abs() <= 1e-4 * scale.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_wrong_point_count() {
        let model = Model::init(&Architecture::standard(2), Stage::One, false, 0).unwrap();
        let s = ResampledStreamline::from_points(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let err = CompactModel::new(&model).predict(&[s]).unwrap_err();
        assert!(matches!(err, Error::PointCountMismatch { .. }));
    }
}
