//! Losses with their gradients w.r.t. the network outputs.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Mean cross-entropy of softmax(logits) against integer labels, with the
/// gradient `(softmax - onehot) / batch`.
pub fn cross_entropy_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = logits.dim();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != batch {
        return Err(Error::InvalidArgument(format!(
            "{batch} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut grad = Array2::<f64>::zeros((batch, classes));
    let mut loss = 0.0;
    let inv = 1.0 / batch as f64;
    for ((row, mut g), &label) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label];
        for (gj, &v) in g.iter_mut().zip(row.iter()) {
            *gj = (v - lse).exp() * inv;
        }
        g[label] -= inv;
    }
    Ok((loss * inv, grad))
}

/// Supervised contrastive loss summed over anchors:
///
/// `L = Σ_i -1/|P(i)| Σ_{p∈P(i)} log( exp(z_i·z_p/τ) / Σ_{a≠i} exp(z_i·z_a/τ) )`
///
/// where `P(i)` holds the other items sharing `i`'s label. Anchors without
/// positives contribute zero. Returns the loss and its gradient w.r.t. `z`.
pub fn supcon_loss(z: &Array2<f64>, labels: &[usize], temperature: f64) -> Result<(f64, Array2<f64>)> {
    let batch = z.nrows();
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    if batch < 2 {
        return Err(Error::InvalidArgument("contrastive batch needs at least 2 items".into()));
    }
    if labels.len() != batch {
        return Err(Error::InvalidArgument(format!("{batch} features but {} labels", labels.len())));
    }
    for (i, row) in z.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("feature {i} has norm {norm}, expected 1")));
        }
    }

    let sim = z.dot(&z.t()) / temperature;
    // weights[i][j] = softmax_i(j) - [j ∈ P(i)] / |P(i)|; loss gradient is
    // (W + Wᵀ) z / τ.
    let mut weights = Array2::<f64>::zeros((batch, batch));
    let mut loss = 0.0;
    for i in 0..batch {
        let positives = (0..batch).filter(|&j| j != i && labels[j] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        let row = sim.row(i);
        let max = (0..batch)
            .filter(|&j| j != i)
            .fold(f64::NEG_INFINITY, |m, j| m.max(row[j]));
        let sum: f64 = (0..batch).filter(|&j| j != i).map(|j| (row[j] - max).exp()).sum();
        let lse = max + sum.ln();
        let inv_p = 1.0 / positives as f64;
        let mut term = 0.0;
        for j in 0..batch {
            if j == i {
                continue;
            }
            let mut w = (row[j] - lse).exp();
            if labels[j] == labels[i] {
                term += row[j] - lse;
                w -= inv_p;
            }
            weights[[i, j]] = w;
        }
        loss -= term * inv_p;
    }
    let sym = &weights + &weights.t();
    let grad = sym.dot(z) / temperature;
    Ok((loss, grad))
}
