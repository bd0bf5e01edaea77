//! Flat key-value run configuration.
//!
//! A config file is TOML with top-level keys only. `--set key=value`
//! overrides are applied on top of it, and the merged result is echoed into
//! every JSON output.

use std::path::Path;

use serde::{Deserialize, Serialize};
use swm_core::evaluation::OutOfGrid;
use swm_core::network::Architecture;
use swm_core::pipeline::InferenceOptions;
use swm_core::synthdata::SyntheticAtlasSpec;
use swm_core::training::{PhaseConfig, StageTwoObjective, TrainingConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for initialization, shuffling, fold assignment and synthesis.
    pub seed: u64,
    /// Inference threads. Results do not depend on it, so it is left out of
    /// the configuration echoed in reports.
    #[serde(skip_serializing)]
    pub workers: usize,
    /// Streamlines per inference forward pass. Not echoed, like `workers`.
    #[serde(skip_serializing)]
    pub inference_batch_size: usize,

    pub n_points: usize,
    pub encoder_widths: Vec<usize>,
    pub classifier_widths: Vec<usize>,
    pub projector_widths: Vec<usize>,
    /// Atlas clusters K; stage two predicts 2K classes.
    pub clusters: usize,
    /// Output classes assumed by `flops`.
    pub flops_classes: usize,

    pub temperature: f64,
    pub stage_one_learning_rate: f64,
    pub stage_one_batch_size: usize,
    pub stage_one_epochs: usize,
    pub stage_one_weight_decay: f64,
    pub contrastive_learning_rate: f64,
    pub contrastive_batch_size: usize,
    pub contrastive_epochs: usize,
    pub contrastive_weight_decay: f64,
    pub downstream_learning_rate: f64,
    pub downstream_batch_size: usize,
    pub downstream_epochs: usize,
    pub downstream_weight_decay: f64,
    pub stage_two_objective: StageTwoObjective,

    pub synth_per_cluster: usize,
    pub synth_outlier_fraction: f64,
    pub synth_dwm: usize,
    pub synth_coordinate_sigma: f64,
    pub synth_outlier_sigma: f64,
    pub synth_min_length: f64,
    pub synth_bilateral: bool,

    pub folds: usize,
    pub cir_threshold: usize,
    pub heatmap_voxel: f64,
    pub heatmap_padding: f64,
    /// Rasterize heatmaps from streamlines resampled to
    /// `heatmap_dense_points` instead of `n_points`.
    pub heatmap_dense: bool,
    pub heatmap_dense_points: usize,
    pub heatmap_out_of_grid: OutOfGrid,
    pub heatmap_csv: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let training = TrainingConfig::default();
        let arch = Architecture::standard(2);
        let synth = SyntheticAtlasSpec::default();
        Self {
            seed: 0,
            workers: 1,
            inference_batch_size: 256,
            n_points: arch.n_points,
            encoder_widths: arch.encoder_widths,
            classifier_widths: arch.classifier_widths,
            projector_widths: arch.projector_widths,
            clusters: synth.clusters,
            flops_classes: 199,
            temperature: training.temperature,
            stage_one_learning_rate: training.stage_one.learning_rate,
            stage_one_batch_size: training.stage_one.batch_size,
            stage_one_epochs: training.stage_one.epochs,
            stage_one_weight_decay: training.stage_one.weight_decay,
            contrastive_learning_rate: training.contrastive.learning_rate,
            contrastive_batch_size: training.contrastive.batch_size,
            contrastive_epochs: training.contrastive.epochs,
            contrastive_weight_decay: training.contrastive.weight_decay,
            downstream_learning_rate: training.downstream.learning_rate,
            downstream_batch_size: training.downstream.batch_size,
            downstream_epochs: training.downstream.epochs,
            downstream_weight_decay: training.downstream.weight_decay,
            stage_two_objective: training.stage_two_objective,
            synth_per_cluster: synth.per_cluster,
            synth_outlier_fraction: synth.outlier_fraction,
            synth_dwm: synth.dwm,
            synth_coordinate_sigma: synth.coordinate_sigma,
            synth_outlier_sigma: synth.outlier_sigma,
            synth_min_length: synth.min_length,
            synth_bilateral: synth.bilateral,
            folds: 5,
            cir_threshold: 10,
            heatmap_voxel: 2.0,
            heatmap_padding: 4.0,
            heatmap_dense: false,
            heatmap_dense_points: 100,
            heatmap_out_of_grid: OutOfGrid::Extend,
            heatmap_csv: false,
        }
    }
}

fn parse_override(raw: &str) -> Result<(String, toml::Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{raw}` is not key=value")))?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = crate::error::read_text(p)?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            table.insert(key, value);
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.inference_batch_size == 0 {
            return bad("inference_batch_size must be > 0");
        }
        if self.clusters == 0 {
            return bad("clusters must be > 0");
        }
        if self.cir_threshold == 0 {
            return bad("cir_threshold must be >= 1");
        }
        if self.heatmap_dense_points < 2 {
            return bad("heatmap_dense_points must be >= 2");
        }
        if !(self.heatmap_voxel > 0.0) || !(self.heatmap_padding >= 0.0) {
            return bad("heatmap_voxel must be > 0 and heatmap_padding >= 0");
        }
        self.architecture(2).validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.training(2).validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.synth_spec().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn architecture(&self, classes: usize) -> Architecture {
        Architecture {
            n_points: self.n_points,
            encoder_widths: self.encoder_widths.clone(),
            classifier_widths: self.classifier_widths.clone(),
            projector_widths: self.projector_widths.clone(),
            classes,
        }
    }

    pub fn training(&self, classes: usize) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            architecture: self.architecture(classes),
            temperature: self.temperature,
            stage_one: PhaseConfig {
                learning_rate: self.stage_one_learning_rate,
                batch_size: self.stage_one_batch_size,
                epochs: self.stage_one_epochs,
                weight_decay: self.stage_one_weight_decay,
            },
            contrastive: PhaseConfig {
                learning_rate: self.contrastive_learning_rate,
                batch_size: self.contrastive_batch_size,
                epochs: self.contrastive_epochs,
                weight_decay: self.contrastive_weight_decay,
            },
            downstream: PhaseConfig {
                learning_rate: self.downstream_learning_rate,
                batch_size: self.downstream_batch_size,
                epochs: self.downstream_epochs,
                weight_decay: self.downstream_weight_decay,
            },
            stage_two_objective: self.stage_two_objective,
            eval_batch_size: self.inference_batch_size,
        }
    }

    pub fn synth_spec(&self) -> SyntheticAtlasSpec {
        SyntheticAtlasSpec {
            clusters: self.clusters,
            per_cluster: self.synth_per_cluster,
            outlier_fraction: self.synth_outlier_fraction,
            dwm: self.synth_dwm,
            coordinate_sigma: self.synth_coordinate_sigma,
            outlier_sigma: self.synth_outlier_sigma,
            min_length: self.synth_min_length,
            bilateral: self.synth_bilateral,
            n_points: self.n_points,
            seed: self.seed,
        }
    }

    pub fn inference(&self) -> InferenceOptions {
        InferenceOptions {
            batch_size: self.inference_batch_size,
            workers: self.workers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let cfg = RunConfig::load(
            None,
            &["seed=7".into(), "stage_two_objective=cross_entropy".into(), "encoder_widths=[4, 8]".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.stage_two_objective, StageTwoObjective::CrossEntropy);
        assert_eq!(cfg.encoder_widths, vec![4, 8]);
        assert!(matches!(RunConfig::load(None, &["bogus=1".into()]), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::load(None, &["seed".into()]), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::load(None, &["temperature=0".into()]), Err(CliError::Config(_))));
    }

    #[test]
    fn file_then_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\nclusters = 4\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["clusters=5".into()]).unwrap();
        assert_eq!((cfg.seed, cfg.clusters), (3, 5));
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::load(None, &[]).unwrap().seed, 0);
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
