//! Reverse-mode gradients of the two training compositions:
//! encoder → classifier → cross-entropy and encoder → projector → contrastive.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::network::{
    Classifier, ClassifierCache, Encoder, EncoderCache, Mode, Model, ParamBlocks, Projector,
};

use super::loss::{cross_entropy_loss, supcon_loss};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Encoder and classifier trained jointly with cross-entropy.
    CrossEntropy,
    /// Encoder and projector trained with the supervised contrastive loss.
    SupCon { temperature: f64 },
    /// Cross-entropy on the classifier only; the encoder is evaluated with its
    /// running statistics and receives no gradient.
    FrozenEncoderCrossEntropy,
}

/// Loss, gradients of the non-frozen parts, and the forward caches needed to
/// apply running-statistic updates.
pub struct Backprop {
    pub loss: f64,
    pub logits: Option<Array2<f64>>,
    pub encoder: Option<Encoder>,
    pub classifier: Option<Classifier>,
    pub projector: Option<Projector>,
    pub input: Option<Array2<f64>>,
    encoder_cache: Option<EncoderCache>,
    classifier_cache: Option<ClassifierCache>,
}

impl Backprop {
    /// Applies the batch-statistic updates recorded during the forward pass.
    pub fn update_running(&self, model: &mut Model) {
        if let (Some(cache), Some(_)) = (&self.encoder_cache, &self.encoder) {
            model.encoder.update_running(cache);
        }
        if let Some(cache) = &self.classifier_cache {
            model.classifier.update_running(cache);
        }
    }
}

fn check_grads(part: &impl ParamBlocks) -> Result<()> {
    for b in part.blocks() {
        if b.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", b.name)));
        }
    }
    Ok(())
}

/// Forward and backward pass over one batch given as a `(batch * n) × 3`
/// point matrix. With `want_input` the gradient w.r.t. the point coordinates
/// is returned as well.
pub fn backprop(
    model: &Model,
    points: &Array2<f64>,
    n: usize,
    labels: &[usize],
    objective: Objective,
    mode: Mode,
    want_input: bool,
) -> Result<Backprop> {
    match objective {
        Objective::CrossEntropy => {
            let (g, enc_cache) = model.encoder.forward(points.clone(), n, mode)?;
            let (logits, cls_cache) = model.classifier.forward(&g.values, mode)?;
            let (loss, dlogits) = cross_entropy_loss(&logits, labels)?;
            let mut cls_grad = model.classifier.zeros_like();
            let dg = model
                .classifier
                .backward(&cls_cache, &dlogits, &mut cls_grad, true)
                .expect("input gradient requested");
            let mut enc_grad = model.encoder.zeros_like();
            let input = model.encoder.backward(&enc_cache, &dg, &mut enc_grad, want_input);
            check_grads(&enc_grad)?;
            check_grads(&cls_grad)?;
            Ok(Backprop {
                loss,
                logits: Some(logits),
                encoder: Some(enc_grad),
                classifier: Some(cls_grad),
                projector: None,
                input,
                encoder_cache: Some(enc_cache),
                classifier_cache: Some(cls_cache),
            })
        }
        Objective::SupCon { temperature } => {
            let projector = model
                .projector
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("contrastive objective needs a projector".into()))?;
            let (g, enc_cache) = model.encoder.forward(points.clone(), n, mode)?;
            let (z, proj_cache) = projector.forward(&g.values)?;
            let (loss, dz) = supcon_loss(&z, labels, temperature)?;
            let mut proj_grad = projector.zeros_like();
            let dg = projector.backward(&proj_cache, &dz, &mut proj_grad);
            let mut enc_grad = model.encoder.zeros_like();
            let input = model.encoder.backward(&enc_cache, &dg, &mut enc_grad, want_input);
            check_grads(&enc_grad)?;
            check_grads(&proj_grad)?;
            Ok(Backprop {
                loss,
                logits: None,
                encoder: Some(enc_grad),
                classifier: None,
                projector: Some(proj_grad),
                input,
                encoder_cache: Some(enc_cache),
                classifier_cache: None,
            })
        }
        Objective::FrozenEncoderCrossEntropy => {
            let g = model.encoder.encode_eval(points, n)?;
            let mut out = classifier_backprop(&model.classifier, &g.values, labels, mode)?;
            out.encoder_cache = None;
            Ok(out)
        }
    }
}

/// Cross-entropy gradients of the classifier alone on precomputed features.
pub fn classifier_backprop(
    classifier: &Classifier,
    features: &Array2<f64>,
    labels: &[usize],
    mode: Mode,
) -> Result<Backprop> {
    let (logits, cls_cache) = classifier.forward(features, mode)?;
    let (loss, dlogits) = cross_entropy_loss(&logits, labels)?;
    let mut cls_grad = classifier.zeros_like();
    classifier.backward(&cls_cache, &dlogits, &mut cls_grad, false);
    check_grads(&cls_grad)?;
    Ok(Backprop {
        loss,
        logits: Some(logits),
        encoder: None,
        classifier: Some(cls_grad),
        projector: None,
        input: None,
        encoder_cache: None,
        classifier_cache: Some(cls_cache),
    })
}
