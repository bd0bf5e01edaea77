//! Losses, gradients, the Adam optimizer and the two training stages.
//!
//! Stage one trains encoder and classifier jointly with cross-entropy on the
//! binary SWM/DWM task. Stage two first trains encoder and projector with the
//! supervised contrastive loss on bilaterally augmented batches, then freezes
//! the encoder and fits the classifier on the pooled features.

pub mod adam;
pub mod backprop;
pub mod crossval;
pub mod loss;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, macro_f1};
use crate::geometry::{reflect_bilateral, ResampledStreamline};
use crate::network::{argmax_rows, points_matrix, Architecture, Mode, Model, Stage};
use crate::pipeline::predict_labels;

pub use adam::AdamState;
pub use backprop::{backprop, classifier_backprop, Backprop, Objective};
pub use loss::{cross_entropy_loss, supcon_loss};

/// Hyperparameters of one optimization phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl PhaseConfig {
    fn validate(&self, name: &str, min_batch: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("{name}: learning rate must be > 0")));
        }
        if self.batch_size < min_batch {
            return Err(Error::InvalidArgument(format!(
                "{name}: batch size must be >= {min_batch}"
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("{name}: weight decay must be >= 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTwoObjective {
    /// Contrastive pretraining of the encoder followed by a frozen-encoder
    /// classifier.
    Contrastive,
    /// Ablation: encoder and classifier trained jointly with cross-entropy,
    /// using the stage-one phase settings.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub seed: u64,
    pub architecture: Architecture,
    pub temperature: f64,
    pub stage_one: PhaseConfig,
    pub contrastive: PhaseConfig,
    pub downstream: PhaseConfig,
    pub stage_two_objective: StageTwoObjective,
    /// Streamlines per inference chunk when scoring validation data.
    pub eval_batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            architecture: Architecture::standard(2),
            temperature: 0.1,
            stage_one: PhaseConfig {
                learning_rate: 0.001,
                batch_size: 1024,
                epochs: 50,
                weight_decay: 0.0,
            },
            contrastive: PhaseConfig {
                learning_rate: 0.01,
                batch_size: 3072,
                epochs: 100,
                weight_decay: 0.0,
            },
            downstream: PhaseConfig {
                learning_rate: 0.001,
                batch_size: 1024,
                epochs: 50,
                weight_decay: 0.0,
            },
            stage_two_objective: StageTwoObjective::Contrastive,
            eval_batch_size: 256,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be > 0".into()));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::InvalidArgument("eval batch size must be > 0".into()));
        }
        self.stage_one.validate("stage_one", 1)?;
        self.contrastive.validate("contrastive", 1)?;
        self.downstream.validate("downstream", 1)?;
        self.architecture.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub validation_macro_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Epoch of the retained checkpoint of the final cross-entropy phase, when
    /// validation data selected one.
    pub best_epoch: Option<usize>,
}

/// Per-phase seeds derived from the run seed so that phases draw independent
/// shuffles.
fn phase_rng(seed: u64, phase: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase + 1);
    rng
}

fn shuffled_batches(len: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn check_points(data: &LabeledDataset, n: usize) -> Result<()> {
    match data.n_points() {
        Some(m) if m != n => Err(Error::PointCountMismatch { left: n, right: m }),
        _ => Ok(()),
    }
}

pub struct Validation<'a> {
    data: &'a LabeledDataset,
    batch_size: usize,
}

impl Validation<'_> {
    fn score(&self, model: &Model) -> Result<(f64, f64)> {
        let pred = predict_labels(model, &self.data.streamlines, self.batch_size, 1)?;
        let acc = accuracy(&pred, &self.data.labels)?;
        let f1 = macro_f1(&pred, &self.data.labels, self.data.classes)?;
        Ok((acc, f1.mean))
    }
}

/// Trains encoder and classifier jointly with cross-entropy. Returns the best
/// validation-F1 checkpoint when validation data is given, otherwise the
/// final parameters.
fn joint_cross_entropy(
    mut model: Model,
    train: &LabeledDataset,
    validation: Option<Validation<'_>>,
    phase: &PhaseConfig,
    seed: u64,
    name: &str,
    history: &mut Vec<EpochRecord>,
) -> Result<(Model, Option<usize>)> {
    let n = model.n_points;
    let mut rng = phase_rng(seed, 1);
    let mut enc_opt = AdamState::new(&model.encoder);
    let mut cls_opt = AdamState::new(&model.classifier);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 0..phase.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in shuffled_batches(train.len(), phase.batch_size, &mut rng) {
            let items: Vec<&ResampledStreamline> = batch.iter().map(|&i| &train.streamlines[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (points, _) = points_matrix(&items)?;
            let out = backprop(&model, &points, n, &labels, Objective::CrossEntropy, Mode::Train, false)?;
            loss_sum += out.loss * batch.len() as f64;
            let logits = out.logits.as_ref().expect("cross-entropy yields logits");
            correct += argmax_rows(logits).iter().zip(&labels).filter(|(p, t)| p == t).count();
            out.update_running(&mut model);
            enc_opt.step(&mut model.encoder, out.encoder.as_ref().unwrap(), phase.learning_rate, phase.weight_decay);
            cls_opt.step(
                &mut model.classifier,
                out.classifier.as_ref().unwrap(),
                phase.learning_rate,
                phase.weight_decay,
            );
        }
        let mut record = EpochRecord {
            phase: name.to_string(),
            epoch,
            loss: loss_sum / train.len() as f64,
            train_accuracy: Some(correct as f64 / train.len() as f64),
            validation_accuracy: None,
            validation_macro_f1: None,
        };
        if let Some(v) = &validation {
            let (acc, f1) = v.score(&model)?;
            record.validation_accuracy = Some(acc);
            record.validation_macro_f1 = Some(f1);
            if best.as_ref().map_or(true, |(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, model.clone()));
            }
        }
        log::info!("{name} epoch {epoch}: loss {:.6}", record.loss);
        history.push(record);
    }
    Ok(match best {
        Some((_, epoch, m)) => (m, Some(epoch)),
        None => (model, None),
    })
}

/// Stage one: binary SWM (1) versus DWM (0) classification.
pub fn train_stage_one(
    train: &LabeledDataset,
    validation: Option<&LabeledDataset>,
    cfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.classes != 2 {
        return Err(Error::InvalidDataset(format!(
            "stage one needs binary labels, dataset has {} classes",
            train.classes
        )));
    }
    let counts = train.class_counts();
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidDataset("stage one training data contains a single class".into()));
    }
    let arch = cfg.architecture.with_classes(2);
    check_points(train, arch.n_points)?;
    let model = Model::init(&arch, Stage::One, false, cfg.seed)?;
    let mut history = Vec::new();
    let validation = validation.map(|data| Validation {
        data,
        batch_size: cfg.eval_batch_size,
    });
    let (mut model, best_epoch) = joint_cross_entropy(
        model,
        train,
        validation,
        &cfg.stage_one,
        cfg.seed,
        "stage_one",
        &mut history,
    )?;
    model.round_to_f32();
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Stage two: `classes = 2K` labels (K clusters followed by K outlier classes).
pub fn train_stage_two(
    train: &LabeledDataset,
    validation: Option<&LabeledDataset>,
    cfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidDataset("stage two training data is empty".into()));
    }
    let missing: Vec<usize> = train
        .class_counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| i)
        .collect();
    if !missing.is_empty() {
        log::warn!("classes absent from stage-two training data (metrics may be undefined): {missing:?}");
    }
    let arch = cfg.architecture.with_classes(train.classes);
    check_points(train, arch.n_points)?;
    let contrastive = cfg.stage_two_objective == StageTwoObjective::Contrastive;
    let model = Model::init(&arch, Stage::Two, contrastive, cfg.seed)?;
    let mut history = Vec::new();
    let validation_of = |data| Validation {
        data,
        batch_size: cfg.eval_batch_size,
    };
    let (model, best_epoch) = if contrastive {
        let model = contrastive_phase(model, train, cfg, &mut history)?;
        downstream_phase(model, train, validation.map(validation_of), cfg, &mut history)?
    } else {
        joint_cross_entropy(
            model,
            train,
            validation.map(validation_of),
            &cfg.stage_one,
            cfg.seed,
            "cross_entropy",
            &mut history,
        )?
    };
    let mut model = model.without_projector();
    model.round_to_f32();
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Builds the augmented contrastive batch: the sampled streamlines followed by
/// their midsagittal reflections, with labels repeated.
pub fn bilateral_batch(
    data: &LabeledDataset,
    indices: &[usize],
) -> (Vec<ResampledStreamline>, Vec<usize>) {
    let mut items: Vec<ResampledStreamline> = indices.iter().map(|&i| data.streamlines[i].clone()).collect();
    items.extend(indices.iter().map(|&i| reflect_bilateral(&data.streamlines[i])));
    let mut labels: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
    labels.extend_from_within(..);
    (items, labels)
}

/// Phase A of stage two: encoder and projector trained with the supervised
/// contrastive loss on bilaterally augmented batches.
pub fn contrastive_phase(
    mut model: Model,
    train: &LabeledDataset,
    cfg: &TrainingConfig,
    history: &mut Vec<EpochRecord>,
) -> Result<Model> {
    let phase = &cfg.contrastive;
    let n = model.n_points;
    let mut projector = model
        .projector
        .take()
        .ok_or_else(|| Error::InvalidArgument("contrastive phase needs a projector".into()))?;
    let mut rng = phase_rng(cfg.seed, 2);
    let mut enc_opt = AdamState::new(&model.encoder);
    let mut proj_opt = AdamState::new(&projector);
    let objective = Objective::SupCon {
        temperature: cfg.temperature,
    };
    for epoch in 0..phase.epochs {
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in shuffled_batches(train.len(), phase.batch_size, &mut rng) {
            let (items, labels) = bilateral_batch(train, &batch);
            let (points, _) = points_matrix(&items)?;
            model.projector = Some(projector);
            let out = backprop(&model, &points, n, &labels, objective, Mode::Train, false);
            projector = model.projector.take().expect("projector restored");
            let out = out?;
            loss_sum += out.loss;
            batches += 1;
            out.update_running(&mut model);
            enc_opt.step(&mut model.encoder, out.encoder.as_ref().unwrap(), phase.learning_rate, phase.weight_decay);
            proj_opt.step(&mut projector, out.projector.as_ref().unwrap(), phase.learning_rate, phase.weight_decay);
        }
        let loss = if batches > 0 { loss_sum / batches as f64 } else { 0.0 };
        log::info!("contrastive epoch {epoch}: loss {loss:.6}");
        history.push(EpochRecord {
            phase: "contrastive".into(),
            epoch,
            loss,
            train_accuracy: None,
            validation_accuracy: None,
            validation_macro_f1: None,
        });
    }
    model.projector = Some(projector);
    Ok(model)
}

fn pooled_features(model: &Model, data: &[ResampledStreamline], chunk: usize) -> Result<Array2<f64>> {
    let dim = model.encoder.feature_dim();
    let mut out = Array2::<f64>::zeros((0, dim));
    for part in data.chunks(chunk.max(1)) {
        let (points, n) = points_matrix(part)?;
        let g = model.encoder.encode_eval(&points, n)?;
        out.append(Axis(0), g.values.view()).expect("matching widths");
    }
    Ok(out)
}

/// Phase B of stage two: the encoder (weights and running statistics) is
/// frozen and the classifier is trained with cross-entropy on pooled
/// features. The projector is left untouched.
pub fn downstream_phase(
    mut model: Model,
    train: &LabeledDataset,
    validation: Option<Validation<'_>>,
    cfg: &TrainingConfig,
    history: &mut Vec<EpochRecord>,
) -> Result<(Model, Option<usize>)> {
    let phase = &cfg.downstream;
    let features = if phase.epochs > 0 {
        pooled_features(&model, &train.streamlines, cfg.eval_batch_size)?
    } else {
        Array2::zeros((0, 0))
    };
    let mut rng = phase_rng(cfg.seed, 3);
    let mut opt = AdamState::new(&model.classifier);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 0..phase.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in shuffled_batches(train.len(), phase.batch_size, &mut rng) {
            let g = features.select(Axis(0), &batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let out = classifier_backprop(&model.classifier, &g, &labels, Mode::Train)?;
            loss_sum += out.loss * batch.len() as f64;
            let logits = out.logits.as_ref().expect("cross-entropy yields logits");
            correct += argmax_rows(logits).iter().zip(&labels).filter(|(p, t)| p == t).count();
            out.update_running(&mut model);
            opt.step(
                &mut model.classifier,
                out.classifier.as_ref().unwrap(),
                phase.learning_rate,
                phase.weight_decay,
            );
        }
        let mut record = EpochRecord {
            phase: "downstream".into(),
            epoch,
            loss: loss_sum / train.len() as f64,
            train_accuracy: Some(correct as f64 / train.len() as f64),
            validation_accuracy: None,
            validation_macro_f1: None,
        };
        if let Some(v) = &validation {
            let (acc, f1) = v.score(&model)?;
            record.validation_accuracy = Some(acc);
            record.validation_macro_f1 = Some(f1);
            if best.as_ref().map_or(true, |(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, model.clone()));
            }
        }
        log::info!("downstream epoch {epoch}: loss {:.6}", record.loss);
        history.push(record);
    }
    Ok(match best {
        Some((_, epoch, m)) => (m, Some(epoch)),
        None => (model, None),
    })
}

/// Convenience for callers outside this module that want validation scoring
/// in [`downstream_phase`].
pub fn validation_set(data: &LabeledDataset, batch_size: usize) -> Validation<'_> {
    Validation { data, batch_size }
}
