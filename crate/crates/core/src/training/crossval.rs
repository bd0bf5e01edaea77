//! K-fold cross-validation over either training stage.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::Result;
use crate::evaluation::{accuracy, macro_f1, mean_std, F1Report};
use crate::network::Stage;
use crate::pipeline::predict_labels;
use crate::synthdata::kfold_split;

use super::{train_stage_one, train_stage_two, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub macro_f1: F1Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub stage: u8,
    pub folds: Vec<FoldResult>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
}

/// Trains on all but one fold and scores the held-out fold, for every fold.
/// Models keep their final-epoch parameters; the held-out fold is never used
/// for checkpoint selection.
pub fn cross_validate(
    data: &LabeledDataset,
    folds: usize,
    stage: Stage,
    cfg: &TrainingConfig,
) -> Result<CrossValReport> {
    let split = kfold_split(data.len(), folds, cfg.seed)?;
    let mut results = Vec::with_capacity(folds);
    for (f, test_idx) in split.iter().enumerate() {
        let train_idx: Vec<usize> = split
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let train = data.subset(&train_idx);
        let test = data.subset(test_idx);
        let outcome = match stage {
            Stage::One => train_stage_one(&train, None, cfg)?,
            Stage::Two => train_stage_two(&train, None, cfg)?,
        };
        let pred = predict_labels(&outcome.model, &test.streamlines, cfg.eval_batch_size, 1)?;
        let acc = accuracy(&pred, &test.labels)?;
        let f1 = macro_f1(&pred, &test.labels, data.classes)?;
        log::info!("fold {f}: accuracy {acc:.4}, macro F1 {:.4}", f1.mean);
        results.push(FoldResult {
            fold: f,
            train_size: train.len(),
            test_size: test.len(),
            accuracy: acc,
            macro_f1: f1,
        });
    }
    let accs: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let f1s: Vec<f64> = results.iter().map(|r| r.macro_f1.mean).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&accs).expect("at least two folds");
    let (macro_f1_mean, macro_f1_std) = mean_std(&f1s).expect("at least two folds");
    Ok(CrossValReport {
        stage: stage.tag(),
        folds: results,
        accuracy_mean,
        accuracy_std,
        macro_f1_mean,
        macro_f1_std,
    })
}
