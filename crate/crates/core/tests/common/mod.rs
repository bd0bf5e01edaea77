//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use swm_core::network::{BlockKind, Mode, ParamBlocks};
use swm_core::training::backprop::{backprop, Objective};
use swm_core::{Architecture, Model, Point3, ResampledStreamline, Stage};

pub fn shrunken_arch(classes: usize) -> Architecture {
    Architecture {
        n_points: 5,
        encoder_widths: vec![8, 16, 32],
        classifier_widths: vec![16, 8],
        projector_widths: vec![16, 8],
        classes,
    }
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-scale..scale),
                rng.gen_range(-scale..scale),
                rng.gen_range(-scale..scale),
            ]
        })
        .collect()
}

pub fn random_streamline(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> ResampledStreamline {
    ResampledStreamline::from_points(random_points(rng, n, scale)).unwrap()
}

pub fn stack(batch: &[ResampledStreamline]) -> Array2<f64> {
    let n = batch[0].n_points();
    let mut m = Array2::zeros((batch.len() * n, 3));
    for (i, s) in batch.iter().enumerate() {
        for (j, p) in s.points().iter().enumerate() {
            for c in 0..3 {
                m[[i * n + j, c]] = p[c];
            }
        }
    }
    m
}

/// Rows drawn from a standard normal and scaled to unit length.
pub fn random_unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array2<f64> {
    let mut z = Array2::from_shape_simple_fn((rows, dim), || {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    });
    for mut row in z.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    z
}

/// Supervised contrastive loss by direct summation over anchors, positives
/// and the denominator set, with no shared subexpressions.
pub fn supcon_nested(z: &Array2<f64>, labels: &[usize], tau: f64) -> f64 {
    let b = z.nrows();
    let dot = |i: usize, j: usize| -> f64 { (0..z.ncols()).map(|c| z[[i, c]] * z[[j, c]]).sum() };
    let mut total = 0.0;
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let mut denom = 0.0;
        for a in 0..b {
            if a != i {
                denom += (dot(i, a) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives {
            inner += ((dot(i, p) / tau).exp() / denom).ln();
        }
        total += -inner / positives.len() as f64;
    }
    total
}

/// Mean cross-entropy using a shifted log-sum-exp per row.
pub fn cross_entropy_reference(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        total += m + s.ln() - row[y];
    }
    total / labels.len() as f64
}

fn loss_at(model: &Model, points: &Array2<f64>, n: usize, labels: &[usize], objective: Objective, mode: Mode) -> f64 {
    backprop(model, points, n, labels, objective, mode, false).unwrap().loss
}

/// Relative error, with gradients smaller than `floor` compared on an
/// absolute scale (round-off in the loss sets a noise level for differences).
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Central differences over every trainable parameter that receives an
/// analytic gradient, plus every input coordinate.
pub fn gradcheck(model: &Model, batch: &[ResampledStreamline], labels: &[usize], objective: Objective, h: f64) -> GradCheck {
    let n = model.n_points;
    let points = stack(batch);
    let mode = Mode::Train;
    let bp = backprop(model, &points, n, labels, objective, mode, true).unwrap();
    let floor = (bp.loss.abs() * 1e-5).max(1e-6);

    let mut analytic: HashMap<String, Vec<f64>> = HashMap::new();
    let mut collect = |part: &dyn ParamBlocksDyn| {
        for (name, data) in part.named() {
            analytic.insert(name, data);
        }
    };
    if let Some(g) = &bp.encoder {
        collect(g);
    }
    if let Some(g) = &bp.classifier {
        collect(g);
    }
    if let Some(g) = &bp.projector {
        collect(g);
    }

    let mut out = GradCheck {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let record = |name: String, a: f64, num: f64, out: &mut GradCheck| {
        let e = rel_err(a, num, floor);
        out.checked += 1;
        if e > out.max_rel {
            out.max_rel = e;
            out.worst = format!("{name}: analytic {a:e} numeric {num:e}");
        }
    };

    let blocks: Vec<(String, BlockKind, usize)> = model
        .blocks()
        .iter()
        .map(|b| (b.name.clone(), b.kind, b.data.len()))
        .collect();
    for (bi, (name, kind, len)) in blocks.iter().enumerate() {
        if *kind != BlockKind::Trainable {
            continue;
        }
        let Some(grad) = analytic.get(name) else { continue };
        for i in 0..*len {
            let mut plus = model.clone();
            plus.blocks_mut()[bi].data[i] += h;
            let mut minus = model.clone();
            minus.blocks_mut()[bi].data[i] -= h;
            let num = (loss_at(&plus, &points, n, labels, objective, mode)
                - loss_at(&minus, &points, n, labels, objective, mode))
                / (2.0 * h);
            record(format!("{name}[{i}]"), grad[i], num, &mut out);
        }
    }

    if let Some(dx) = &bp.input {
        for r in 0..points.nrows() {
            for c in 0..3 {
                let mut p = points.clone();
                p[[r, c]] += h;
                let mut m = points.clone();
                m[[r, c]] -= h;
                let num = (loss_at(model, &p, n, labels, objective, mode) - loss_at(model, &m, n, labels, objective, mode))
                    / (2.0 * h);
                record(format!("input[{r},{c}]"), dx[[r, c]], num, &mut out);
            }
        }
    }
    out
}

trait ParamBlocksDyn {
    fn named(&self) -> Vec<(String, Vec<f64>)>;
}

impl<T: ParamBlocks> ParamBlocksDyn for T {
    fn named(&self) -> Vec<(String, Vec<f64>)> {
        self.blocks()
            .into_iter()
            .filter(|b| b.kind == BlockKind::Trainable)
            .map(|b| (b.name, b.data.to_vec()))
            .collect()
    }
}

/// Model for the shrunken architecture with a batch whose labels cover
/// every class.
pub fn gradcheck_case(seed: u64, with_projector: bool) -> (Model, Vec<ResampledStreamline>, Vec<usize>) {
    use rand::SeedableRng;
    let arch = shrunken_arch(4);
    let model = Model::init(&arch, Stage::Two, with_projector, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch: Vec<_> = (0..8).map(|_| random_streamline(&mut rng, arch.n_points, 2.0)).collect();
    let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
    (model, batch, labels)
}
