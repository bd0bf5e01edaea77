use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use swm_core::evaluation::{
    accuracy, cluster_distance_to_atlas, cluster_identification_rate, inter_subject_variability, macro_f1,
    population_heatmap, weighted_dice, GridSpec, MetricsReport, OutOfGrid, SubjectMetrics,
};
use swm_core::io::{
    read_class_labels, read_labels, read_tractogram, write_class_labels, write_extended_labels, write_heatmap,
    write_heatmap_csv, write_labels, write_tractogram,
};
use swm_core::network::flops::count_flops;
use swm_core::network::serialize::{deserialize_model, serialize_model};
use swm_core::pipeline::{parcellate, point_importance};
use swm_core::synthdata::generate_atlas;
use swm_core::training::crossval::cross_validate;
use swm_core::training::{train_stage_one, train_stage_two, EpochRecord};
use swm_core::{resample, Error as CoreError, FinalLabel, LabeledDataset, Model, ResampledStreamline, Stage, Streamline};

use crate::config::RunConfig;
use crate::error::{parse_file, read_bytes, write_file, write_json, CliError};

pub const D1_TRACTOGRAM: &str = "d1.swmt";
pub const D1_LABELS: &str = "d1_labels.csv";
pub const D2_TRACTOGRAM: &str = "d2.swmt";
pub const D2_LABELS: &str = "d2_labels.csv";
pub const PROTOTYPES: &str = "prototypes.swmt";
pub const MANIFEST: &str = "manifest.json";

/// Wraps a command result with the effective configuration.
fn report(command: &str, cfg: &RunConfig, body: impl Serialize) -> Value {
    json!({
        "command": command,
        "seed": cfg.seed,
        "config": cfg,
        "result": body,
    })
}

pub fn load_tractogram(path: &Path) -> Result<Vec<Streamline>, CliError> {
    parse_file(path, |r| read_tractogram(r))
}

pub fn load_class_labels(path: &Path) -> Result<Vec<usize>, CliError> {
    parse_file(path, |r| read_class_labels(r))
}

pub fn load_labels(path: &Path) -> Result<Vec<FinalLabel>, CliError> {
    parse_file(path, |r| read_labels(r))
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    let bytes = read_bytes(path)?;
    deserialize_model(&bytes).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_model(path: &Path, model: &Model) -> Result<(), CliError> {
    let bytes = serialize_model(model);
    write_file(path, |w| Ok(w.write_all(&bytes)?))
}

/// Reads a tractogram and its `index,label` file into a dataset with
/// `classes` classes.
pub fn load_dataset(tractogram: &Path, labels: &Path, classes: usize, n: usize) -> Result<LabeledDataset, CliError> {
    let raw = load_tractogram(tractogram)?;
    let labels = load_class_labels(labels)?;
    if raw.len() != labels.len() {
        return Err(CliError::Core(CoreError::ShapeMismatch {
            block: "labels".into(),
            expected: vec![raw.len()],
            found: vec![labels.len()],
        }));
    }
    Ok(LabeledDataset::from_raw(&raw, labels, classes, n)?)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub out: PathBuf,
}

/// Writes the synthetic atlas: D1 and D2 tractograms with label files, the
/// cluster prototypes, and a manifest.
pub fn cmd_synth(args: &SynthArgs, cfg: &RunConfig) -> Result<Value, CliError> {
    let atlas = generate_atlas(&cfg.synth_spec())?;
    let swm = atlas.swm_count();
    let out = &args.out;
    write_file(&out.join(D1_TRACTOGRAM), |w| write_tractogram(w, &atlas.streamlines))?;
    write_file(&out.join(D1_LABELS), |w| write_class_labels(w, &atlas.d1.labels))?;
    write_file(&out.join(D2_TRACTOGRAM), |w| write_tractogram(w, &atlas.streamlines[..swm]))?;
    write_file(&out.join(D2_LABELS), |w| write_class_labels(w, &atlas.d2.labels))?;
    let prototypes = atlas
        .prototypes
        .iter()
        .map(|p| p.clone().into_streamline())
        .collect::<swm_core::Result<Vec<_>>>()?;
    write_file(&out.join(PROTOTYPES), |w| write_tractogram(w, &prototypes))?;
    let value = report("synth", cfg, atlas.manifest());
    write_json(&out.join(MANIFEST), &value)?;
    Ok(value)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub tractogram: PathBuf,
    pub labels: PathBuf,
    pub out: PathBuf,
    pub validation_tractogram: Option<PathBuf>,
    pub validation_labels: Option<PathBuf>,
    /// Defaults to `<out>.history.json`.
    pub history: Option<PathBuf>,
}

#[derive(Serialize)]
struct HistoryReport<'a> {
    stage: u8,
    streamlines: usize,
    classes: usize,
    best_epoch: Option<usize>,
    history: &'a [EpochRecord],
}

fn train(stage: Stage, args: &TrainArgs, cfg: &RunConfig) -> Result<Value, CliError> {
    let classes = match stage {
        Stage::One => 2,
        Stage::Two => 2 * cfg.clusters,
    };
    let data = load_dataset(&args.tractogram, &args.labels, classes, cfg.n_points)?;
    let validation = match (&args.validation_tractogram, &args.validation_labels) {
        (Some(t), Some(l)) => Some(load_dataset(t, l, classes, cfg.n_points)?),
        (None, None) => None,
        _ => {
            return Err(CliError::Usage(
                "validation tractogram and labels must be given together".into(),
            ))
        }
    };
    let training = cfg.training(classes);
    let start = Instant::now();
    let outcome = match stage {
        Stage::One => train_stage_one(&data, validation.as_ref(), &training)?,
        Stage::Two => train_stage_two(&data, validation.as_ref(), &training)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    save_model(&args.out, &outcome.model)?;

    let name = match stage {
        Stage::One => "train-stage1",
        Stage::Two => "train-stage2",
    };
    let value = report(
        name,
        cfg,
        HistoryReport {
            stage: stage.tag(),
            streamlines: data.len(),
            classes,
            best_epoch: outcome.best_epoch,
            history: &outcome.history,
        },
    );
    let history = args.history.clone().unwrap_or_else(|| with_suffix(&args.out, ".history.json"));
    write_json(&history, &value)?;
    let log = with_suffix(&args.out, ".log");
    write_file(&log, |w| {
        for r in &outcome.history {
            writeln!(
                w,
                "{} epoch {}: loss {:.6} train_acc {} val_acc {} val_f1 {}",
                r.phase,
                r.epoch,
                r.loss,
                fmt_opt(r.train_accuracy),
                fmt_opt(r.validation_accuracy),
                fmt_opt(r.validation_macro_f1)
            )?;
        }
        writeln!(w, "wall-clock {elapsed:.3} s for {} streamlines", data.len())?;
        Ok(())
    })?;
    Ok(value)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

pub fn cmd_train_stage1(args: &TrainArgs, cfg: &RunConfig) -> Result<Value, CliError> {
    train(Stage::One, args, cfg)
}

pub fn cmd_train_stage2(args: &TrainArgs, cfg: &RunConfig) -> Result<Value, CliError> {
    train(Stage::Two, args, cfg)
}

#[derive(Debug, Clone)]
pub struct ParcellateArgs {
    pub model1: PathBuf,
    pub model2: PathBuf,
    pub tractogram: PathBuf,
    pub out: PathBuf,
    pub extended: Option<PathBuf>,
    /// Defaults to `<out>.summary.json`.
    pub summary: Option<PathBuf>,
}

pub fn cmd_parcellate(args: &ParcellateArgs, cfg: &RunConfig) -> Result<Value, CliError> {
    let m1 = load_model(&args.model1)?;
    let m2 = load_model(&args.model2)?;
    let tract = load_tractogram(&args.tractogram)?;
    let start = Instant::now();
    let result = parcellate(&m1, &m2, &tract, &cfg.inference())?;
    let seconds = start.elapsed().as_secs_f64();
    write_file(&args.out, |w| write_labels(w, &result.final_labels))?;
    if let Some(ext) = &args.extended {
        write_file(ext, |w| write_extended_labels(w, &result))?;
    }
    let rate = if seconds > 0.0 { tract.len() as f64 / seconds } else { 0.0 };
    let value = json!({
        "command": "parcellate",
        "seed": cfg.seed,
        "config": cfg,
        "result": {
            "streamlines": result.len(),
            "clusters": result.clusters,
            "non_swm": result.non_swm_count(),
            "cluster_counts": result.cluster_counts(),
        },
        "timing": {
            "seconds": seconds,
            "streamlines_per_second": rate,
        },
    });
    let summary = args.summary.clone().unwrap_or_else(|| with_suffix(&args.out, ".summary.json"));
    write_json(&summary, &value)?;
    Ok(value)
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    /// Final-label files, one per subject.
    pub labels: Vec<PathBuf>,
    /// Ground-truth final labels, one per subject, or none.
    pub truth: Vec<PathBuf>,
    /// Tractograms matching `labels`, needed for CDA and heatmaps.
    pub tractograms: Vec<PathBuf>,
    pub atlas_tractogram: Option<PathBuf>,
    /// Atlas class labels; ids `>= clusters` are ignored.
    pub atlas_labels: Option<PathBuf>,
    pub heatmap_dir: Option<PathBuf>,
    pub out: PathBuf,
}

fn label_index(l: FinalLabel, clusters: usize) -> Result<usize, CliError> {
    match l {
        FinalLabel::Cluster(c) if c < clusters => Ok(c),
        FinalLabel::Cluster(c) => Err(CoreError::LabelOutOfRange {
            label: c,
            classes: clusters,
        }
        .into()),
        FinalLabel::NonSwm => Ok(clusters),
    }
}

/// Streamlines of each cluster (by final label), resampled to `n`.
fn clustered(tract: &[Streamline], labels: &[usize], clusters: usize, n: usize) -> swm_core::Result<Vec<(ResampledStreamline, usize)>> {
    tract
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l < clusters)
        .map(|(s, &l)| Ok((resample(s, n)?, l)))
        .collect()
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<(), CliError> {
    if expected != found {
        return Err(CoreError::ShapeMismatch {
            block: what.into(),
            expected: vec![expected],
            found: vec![found],
        }
        .into());
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, cfg: &RunConfig) -> Result<Value, CliError> {
    let k = cfg.clusters;
    if args.labels.is_empty() {
        return Err(CliError::Usage("eval needs at least one label file".into()));
    }
    if !args.truth.is_empty() && args.truth.len() != args.labels.len() {
        return Err(CliError::Usage("give one truth file per label file".into()));
    }
    if !args.tractograms.is_empty() && args.tractograms.len() != args.labels.len() {
        return Err(CliError::Usage("give one tractogram per label file".into()));
    }
    let atlas = match (&args.atlas_tractogram, &args.atlas_labels) {
        (Some(t), Some(l)) => {
            let tract = load_tractogram(t)?;
            let labels = load_class_labels(l)?;
            check_len("atlas labels", tract.len(), labels.len())?;
            Some((tract, labels))
        }
        (None, None) => None,
        _ => return Err(CliError::Usage("atlas tractogram and labels must be given together".into())),
    };

    let mut subjects = Vec::new();
    let mut all_counts = Vec::new();
    let mut subject_tracts = Vec::new();
    for (i, path) in args.labels.iter().enumerate() {
        let pred: Vec<usize> = load_labels(path)?
            .into_iter()
            .map(|l| label_index(l, k))
            .collect::<Result<_, _>>()?;
        let mut m = SubjectMetrics {
            streamlines: pred.len(),
            ..Default::default()
        };
        if let Some(t) = args.truth.get(i) {
            let truth: Vec<usize> = load_labels(t)?
                .into_iter()
                .map(|l| label_index(l, k))
                .collect::<Result<_, _>>()?;
            check_len("truth labels", pred.len(), truth.len())?;
            if !pred.is_empty() {
                m.accuracy = Some(accuracy(&pred, &truth)?);
                m.macro_f1 = Some(macro_f1(&pred, &truth, k + 1)?);
            }
        }
        let mut counts = vec![0usize; k];
        for &p in &pred {
            if p < k {
                counts[p] += 1;
            }
        }
        m.cir = cluster_identification_rate(&counts, cfg.cir_threshold, None)?;
        if let Some(tp) = args.tractograms.get(i) {
            let tract = load_tractogram(tp)?;
            check_len("subject labels", tract.len(), pred.len())?;
            if let Some((atlas_tract, atlas_labels)) = &atlas {
                let (sub, sub_l): (Vec<_>, Vec<_>) = clustered(&tract, &pred, k, cfg.n_points)?.into_iter().unzip();
                let (atl, atl_l): (Vec<_>, Vec<_>) =
                    clustered(atlas_tract, atlas_labels, k, cfg.n_points)?.into_iter().unzip();
                m.cda = Some(cluster_distance_to_atlas(&sub, &sub_l, &atl, &atl_l, k)?);
            }
            subject_tracts.push((tract, pred.clone()));
        }
        m.cluster_counts = counts.clone();
        all_counts.push(counts);
        subjects.push(m);
    }
    let ispv = (all_counts.len() >= 2)
        .then(|| inter_subject_variability(&all_counts))
        .transpose()?;
    let wdice = match (&atlas, subject_tracts.is_empty()) {
        (Some((atlas_tract, atlas_labels)), false) => Some(heatmaps(
            &subject_tracts,
            atlas_tract,
            atlas_labels,
            args.heatmap_dir.as_deref(),
            cfg,
        )?),
        _ => None,
    };
    let metrics = MetricsReport {
        clusters: k,
        cir_threshold: cfg.cir_threshold,
        subjects,
        ispv,
        wdice,
    };
    let value = report("eval", cfg, &metrics);
    write_json(&args.out, &value)?;
    Ok(value)
}

/// Per-cluster population heatmaps of the subjects and of the atlas, on one
/// shared grid, and their weighted Dice overlap.
fn heatmaps(
    subjects: &[(Vec<Streamline>, Vec<usize>)],
    atlas: &[Streamline],
    atlas_labels: &[usize],
    dir: Option<&Path>,
    cfg: &RunConfig,
) -> Result<Vec<Option<f64>>, CliError> {
    let k = cfg.clusters;
    let n = if cfg.heatmap_dense { cfg.heatmap_dense_points } else { cfg.n_points };
    let points_by_cluster = |tract: &[Streamline], labels: &[usize]| -> swm_core::Result<Vec<Vec<Vec<[f64; 3]>>>> {
        let mut out = vec![Vec::new(); k];
        for (s, &l) in tract.iter().zip(labels) {
            if l < k {
                out[l].push(resample(s, n)?.points().to_vec());
            }
        }
        Ok(out)
    };
    let atlas_pts = points_by_cluster(atlas, atlas_labels)?;
    let subject_pts = subjects
        .iter()
        .map(|(t, l)| points_by_cluster(t, l))
        .collect::<swm_core::Result<Vec<_>>>()?;

    let atlas_points = atlas_pts.iter().flatten().flatten();
    let mut grid = match GridSpec::covering(atlas_points, cfg.heatmap_voxel, cfg.heatmap_padding) {
        Ok(g) => g,
        Err(_) => GridSpec::covering(
            subject_pts.iter().flatten().flatten().flatten(),
            cfg.heatmap_voxel,
            cfg.heatmap_padding,
        )
        .map_err(|_| CliError::Usage("no clustered streamlines to rasterize".into()))?,
    };
    for p in subject_pts.iter().flatten().flatten().flatten() {
        if grid.voxel_of(p).is_none() {
            match cfg.heatmap_out_of_grid {
                OutOfGrid::Error => return Err(CoreError::OutsideGrid(p[0], p[1], p[2]).into()),
                OutOfGrid::Extend => grid = grid.extended_to(p),
            }
        }
    }

    let mut scores = Vec::with_capacity(k);
    for c in 0..k {
        let per_subject: Vec<Vec<Vec<[f64; 3]>>> = subject_pts.iter().map(|s| s[c].clone()).collect();
        let population = population_heatmap(&per_subject, &grid, OutOfGrid::Error)?;
        let reference = population_heatmap(&[atlas_pts[c].clone()], &grid, OutOfGrid::Error)?;
        scores.push(weighted_dice(&population, &reference)?);
        if let Some(dir) = dir {
            for (name, h) in [("subjects", &population), ("atlas", &reference)] {
                let stem = dir.join(format!("cluster_{c:03}_{name}"));
                write_file(&stem.with_extension("swmh"), |w| write_heatmap(w, h))?;
                if cfg.heatmap_csv {
                    write_file(&stem.with_extension("csv"), |w| write_heatmap_csv(w, h))?;
                }
            }
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone)]
pub struct ImportanceArgs {
    pub model2: PathBuf,
    pub tractogram: PathBuf,
    pub out: PathBuf,
}

pub fn cmd_importance(args: &ImportanceArgs, cfg: &RunConfig) -> Result<Value, CliError> {
    let model = load_model(&args.model2)?;
    let data = load_tractogram(&args.tractogram)?
        .iter()
        .map(|s| resample(s, model.n_points))
        .collect::<swm_core::Result<Vec<_>>>()?;
    let profile = point_importance(&model, &data, &cfg.inference())?;
    let value = report("importance", cfg, &profile);
    write_json(&args.out, &value)?;
    Ok(value)
}

#[derive(Debug, Clone, Default)]
pub struct FlopsArgs {
    pub out: Option<PathBuf>,
}

pub fn cmd_flops(args: &FlopsArgs, cfg: &RunConfig) -> Result<Value, CliError> {
    let arch = cfg.architecture(cfg.flops_classes);
    arch.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let flops = count_flops(&arch);
    let value = report(
        "flops",
        cfg,
        json!({
            "architecture": arch,
            "breakdown": flops,
            "total": flops.total,
            "millions": flops.total as f64 / 1e6,
        }),
    );
    if let Some(out) = &args.out {
        write_json(out, &value)?;
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossvalStages {
    One,
    Two,
    Both,
}

#[derive(Debug, Clone)]
pub struct CrossvalArgs {
    /// Directory written by `synth` (or laid out the same way).
    pub data: PathBuf,
    pub stages: CrossvalStages,
    pub out: PathBuf,
}

pub fn cmd_crossval(args: &CrossvalArgs, cfg: &RunConfig) -> Result<Value, CliError> {
    let run = |stage: Stage| -> Result<Value, CliError> {
        let (tract, labels, classes) = match stage {
            Stage::One => (D1_TRACTOGRAM, D1_LABELS, 2),
            Stage::Two => (D2_TRACTOGRAM, D2_LABELS, 2 * cfg.clusters),
        };
        let data = load_dataset(&args.data.join(tract), &args.data.join(labels), classes, cfg.n_points)?;
        let report = cross_validate(&data, cfg.folds, stage, &cfg.training(classes))?;
        Ok(serde_json::to_value(report).expect("serializable report"))
    };
    let stage_one = matches!(args.stages, CrossvalStages::One | CrossvalStages::Both)
        .then(|| run(Stage::One))
        .transpose()?;
    let stage_two = matches!(args.stages, CrossvalStages::Two | CrossvalStages::Both)
        .then(|| run(Stage::Two))
        .transpose()?;
    let value = report(
        "crossval",
        cfg,
        json!({ "folds": cfg.folds, "stage_one": stage_one, "stage_two": stage_two }),
    );
    write_json(&args.out, &value)?;
    Ok(value)
}
