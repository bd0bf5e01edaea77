//! Dense building blocks with explicit forward caches and backward passes.
//!
//! Activations are row-major `Array2<f64>` with one row per point (encoder)
//! or per streamline (heads).

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Affine map `y = x W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..=bound));
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `want_input` is set.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        dy: &Array2<f64>,
        grad: &mut Linear,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &column_sums(dy);
        want_input.then(|| dy.dot(&self.weight.t()))
    }
}

/// Per-feature batch normalization with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Eval-mode transform; per-row arithmetic is independent of the rest of
    /// the batch.
    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let inv_std = self.running_inv_std();
        let mut y = x.to_owned();
        for mut row in y.rows_mut() {
            row -= &self.running_mean;
            row *= &inv_std;
            row *= &self.gamma;
            row += &self.beta;
        }
        y
    }

    pub(crate) fn running_inv_std(&self) -> Array1<f64> {
        self.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt())
    }

    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> (Array2<f64>, BatchNormCache) {
        match mode {
            Mode::Eval => {
                let inv_std = self.running_inv_std();
                let mut xhat = x.to_owned();
                for mut row in xhat.rows_mut() {
                    row -= &self.running_mean;
                    row *= &inv_std;
                }
                let mut y = xhat.clone();
                for mut row in y.rows_mut() {
                    row *= &self.gamma;
                    row += &self.beta;
                }
                let cache = BatchNormCache {
                    mode,
                    xhat,
                    inv_std,
                    batch_mean: self.running_mean.clone(),
                    batch_var: self.running_var.clone(),
                };
                (y, cache)
            }
            Mode::Train => self.forward_train(x),
        }
    }

    fn forward_train(&self, x: &Array2<f64>) -> (Array2<f64>, BatchNormCache) {
        let rows = x.nrows() as f64;
        let mean = column_sums(x) / rows;
        let mut xhat = x - &mean;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in xhat.rows() {
            var.zip_mut_with(&row, |v, &d| *v += d * d);
        }
        var /= rows;
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        for mut row in xhat.rows_mut() {
            row *= &inv_std;
        }
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            row *= &self.gamma;
            row += &self.beta;
        }
        let cache = BatchNormCache {
            mode: Mode::Train,
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        };
        (y, cache)
    }

    /// Exponential running-statistic update from a train-mode batch. The
    /// running variance uses the unbiased batch estimate.
    pub fn update_running(&mut self, cache: &BatchNormCache, rows: usize) {
        if cache.mode != Mode::Train {
            return;
        }
        let correction = if rows > 1 {
            rows as f64 / (rows as f64 - 1.0)
        } else {
            1.0
        };
        let m = BN_MOMENTUM;
        self.running_mean
            .zip_mut_with(&cache.batch_mean, |r, &b| *r = (1.0 - m) * *r + m * b);
        self.running_var
            .zip_mut_with(&cache.batch_var, |r, &b| *r = (1.0 - m) * *r + m * b * correction);
    }

    /// Backward pass; accumulates `gamma`/`beta` gradients into `grad`.
    pub fn backward(&self, cache: &BatchNormCache, dy: &Array2<f64>, grad: &mut BatchNorm) -> Array2<f64> {
        match cache.mode {
            Mode::Eval => {
                // affine in x: y = gamma * (x - mean) * inv_std + beta
                let mut dgamma = Array1::<f64>::zeros(self.width());
                for (dyr, xr) in dy.rows().into_iter().zip(cache.xhat.rows()) {
                    dgamma.zip_mut_with(&(&dyr * &xr), |g, &v| *g += v);
                }
                let scale = &self.gamma * &cache.inv_std;
                let mut dx = dy.to_owned();
                for mut row in dx.rows_mut() {
                    row *= &scale;
                }
                grad.gamma += &dgamma;
                grad.beta += &column_sums(dy);
                dx
            }
            Mode::Train => {
                let rows = dy.nrows() as f64;
                let mut dbeta = Array1::<f64>::zeros(self.width());
                let mut dgamma = Array1::<f64>::zeros(self.width());
                for (dyr, xr) in dy.rows().into_iter().zip(cache.xhat.rows()) {
                    for j in 0..dyr.len() {
                        dbeta[j] += dyr[j];
                        dgamma[j] += dyr[j] * xr[j];
                    }
                }
                let coef = &self.gamma * &cache.inv_std / rows;
                let mut dx = dy * rows;
                for (mut dxr, xr) in dx.rows_mut().into_iter().zip(cache.xhat.rows()) {
                    for j in 0..dxr.len() {
                        dxr[j] = coef[j] * (dxr[j] - dbeta[j] - xr[j] * dgamma[j]);
                    }
                }
                grad.gamma += &dgamma;
                grad.beta += &dbeta;
                dx
            }
        }
    }
}

pub(crate) fn column_sums(x: &Array2<f64>) -> Array1<f64> {
    let mut s = Array1::<f64>::zeros(x.ncols());
    for row in x.rows() {
        s += &row;
    }
    s
}

/// Non-finite values pass through so that they are caught by [`check_finite`].
pub(crate) fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v });
}

/// Zeroes `grad` wherever the rectifier output was not positive.
pub(crate) fn relu_backward_inplace(activated: &Array2<f64>, grad: &mut Array2<f64>) {
    grad.zip_mut_with(activated, |g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

pub(crate) fn check_finite(x: &Array2<f64>, what: impl FnOnce() -> String) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// Max over each consecutive group of `n` rows. Returns the pooled values
/// (`groups × width`) and the winning row offset within each group; the lowest
/// index wins ties.
pub fn max_pool(x: &Array2<f64>, n: usize) -> (Array2<f64>, Array2<u32>) {
    let groups = x.nrows() / n;
    let width = x.ncols();
    let mut pooled = Array2::<f64>::zeros((groups, width));
    let mut argmax = Array2::<u32>::zeros((groups, width));
    for g in 0..groups {
        let mut best = pooled.row_mut(g);
        let mut idx = argmax.row_mut(g);
        best.assign(&x.row(g * n));
        for i in 1..n {
            let row = x.row(g * n + i);
            for j in 0..width {
                if row[j] > best[j] {
                    best[j] = row[j];
                    idx[j] = i as u32;
                }
            }
        }
    }
    (pooled, argmax)
}

/// Routes pooled gradients back to the winning rows only.
pub fn max_pool_backward(dpooled: &Array2<f64>, argmax: &Array2<u32>, n: usize) -> Array2<f64> {
    let (groups, width) = dpooled.dim();
    let mut dx = Array2::<f64>::zeros((groups * n, width));
    for g in 0..groups {
        for j in 0..width {
            let i = argmax[[g, j]] as usize;
            dx[[g * n + i, j]] += dpooled[[g, j]];
        }
    }
    dx
}
