//! Point-set encoder, classification head and projection head.
//!
//! Every point is mapped by a shared stack of `affine → batch norm → ReLU`
//! layers; a max over the points of each streamline yields the global feature
//! `g`. The classifier maps `g` to logits and the projector maps it to a unit
//! vector used only during contrastive training.

pub mod compact;
pub mod flops;
pub mod layers;
pub mod serialize;

use ndarray::{s, Array1, Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ResampledStreamline;
pub use layers::{BatchNorm, Linear, Mode};
use layers::{
    check_finite, max_pool, max_pool_backward, relu_backward_inplace, relu_inplace, BatchNormCache,
};

/// Layer widths of the full network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_points: usize,
    pub encoder_widths: Vec<usize>,
    pub classifier_widths: Vec<usize>,
    pub projector_widths: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    /// Default configuration: 15 points, encoder 64/128/1024,
    /// classifier 512/256/k, projector 1024/128.
    pub fn standard(classes: usize) -> Self {
        Self {
            n_points: 15,
            encoder_widths: vec![64, 128, 1024],
            classifier_widths: vec![512, 256],
            projector_widths: vec![1024, 128],
            classes,
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder_widths.last().expect("encoder has at least one layer")
    }

    pub fn embedding_dim(&self) -> usize {
        *self.projector_widths.last().expect("projector has at least one layer")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("architecture: {msg}")));
        if self.n_points < 2 {
            return bad("n_points must be >= 2");
        }
        if self.encoder_widths.is_empty() || self.projector_widths.is_empty() {
            return bad("encoder and projector need at least one layer");
        }
        if self.classes < 2 {
            return bad("classes must be >= 2");
        }
        let all = self
            .encoder_widths
            .iter()
            .chain(&self.classifier_widths)
            .chain(&self.projector_widths);
        if all.clone().any(|&w| w == 0) {
            return bad("layer widths must be positive");
        }
        if self.n_points > u32::MAX as usize {
            return bad("n_points too large");
        }
        Ok(())
    }

    pub fn with_classes(&self, classes: usize) -> Self {
        Self {
            classes,
            ..self.clone()
        }
    }
}

/// Whether a parameter block is learned by gradient descent or is a running
/// statistic maintained by batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Trainable,
    Statistic,
}

pub struct Block<'a> {
    pub name: String,
    pub kind: BlockKind,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct BlockMut<'a> {
    pub name: String,
    pub kind: BlockKind,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Named, ordered access to every parameter array of a network part.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<Block<'_>>;
    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>>;

    fn trainable_len(&self) -> usize {
        self.blocks()
            .iter()
            .filter(|b| b.kind == BlockKind::Trainable)
            .map(|b| b.data.len())
            .sum()
    }
}

fn push_linear<'a>(out: &mut Vec<Block<'a>>, prefix: &str, l: &'a Linear) {
    out.push(Block {
        name: format!("{prefix}.weight"),
        kind: BlockKind::Trainable,
        shape: l.weight.shape().to_vec(),
        data: l.weight.as_slice().expect("standard layout"),
    });
    out.push(Block {
        name: format!("{prefix}.bias"),
        kind: BlockKind::Trainable,
        shape: l.bias.shape().to_vec(),
        data: l.bias.as_slice().expect("standard layout"),
    });
}

fn push_linear_mut<'a>(out: &mut Vec<BlockMut<'a>>, prefix: &str, l: &'a mut Linear) {
    let wshape = l.weight.shape().to_vec();
    let bshape = l.bias.shape().to_vec();
    out.push(BlockMut {
        name: format!("{prefix}.weight"),
        kind: BlockKind::Trainable,
        shape: wshape,
        data: l.weight.as_slice_mut().expect("standard layout"),
    });
    out.push(BlockMut {
        name: format!("{prefix}.bias"),
        kind: BlockKind::Trainable,
        shape: bshape,
        data: l.bias.as_slice_mut().expect("standard layout"),
    });
}

fn norm_arrays(bn: &BatchNorm) -> [(&'static str, BlockKind, &Array1<f64>); 4] {
    [
        ("gamma", BlockKind::Trainable, &bn.gamma),
        ("beta", BlockKind::Trainable, &bn.beta),
        ("running_mean", BlockKind::Statistic, &bn.running_mean),
        ("running_var", BlockKind::Statistic, &bn.running_var),
    ]
}

fn push_norm<'a>(out: &mut Vec<Block<'a>>, prefix: &str, bn: &'a BatchNorm) {
    for (name, kind, arr) in norm_arrays(bn) {
        out.push(Block {
            name: format!("{prefix}.norm.{name}"),
            kind,
            shape: vec![arr.len()],
            data: arr.as_slice().expect("standard layout"),
        });
    }
}

fn push_norm_mut<'a>(out: &mut Vec<BlockMut<'a>>, prefix: &str, bn: &'a mut BatchNorm) {
    let BatchNorm {
        gamma,
        beta,
        running_mean,
        running_var,
    } = bn;
    let parts = [
        ("gamma", BlockKind::Trainable, gamma),
        ("beta", BlockKind::Trainable, beta),
        ("running_mean", BlockKind::Statistic, running_mean),
        ("running_var", BlockKind::Statistic, running_var),
    ];
    for (name, kind, arr) in parts {
        out.push(BlockMut {
            name: format!("{prefix}.norm.{name}"),
            kind,
            shape: vec![arr.len()],
            data: arr.as_slice_mut().expect("standard layout"),
        });
    }
}

/// One `affine → batch norm → ReLU` stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNormLayer {
    pub linear: Linear,
    pub norm: BatchNorm,
}

impl DenseNormLayer {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            linear: Linear::init(fan_in, fan_out, rng),
            norm: BatchNorm::new(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            linear: Linear::zeros(self.linear.fan_in(), self.linear.fan_out()),
            norm: BatchNorm {
                gamma: Array1::zeros(self.norm.width()),
                beta: Array1::zeros(self.norm.width()),
                running_mean: Array1::zeros(self.norm.width()),
                running_var: Array1::zeros(self.norm.width()),
            },
        }
    }

    /// Same arithmetic as `linear → norm.forward_eval → ReLU`, fused into one
    /// pass over the product.
    fn forward_eval(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.dot(&self.linear.weight);
        let inv_std = self.norm.running_inv_std();
        let bn = &self.norm;
        for mut row in a.rows_mut() {
            Zip::from(&mut row)
                .and(&self.linear.bias)
                .and(&bn.running_mean)
                .and(&inv_std)
                .and(&bn.gamma)
                .and(&bn.beta)
                .for_each(|v, &b, &m, &s, &g, &be| {
                    let y = (*v + b - m) * s * g + be;
                    *v = if y < 0.0 { 0.0 } else { y };
                });
        }
        a
    }

    fn forward(&self, x: &Array2<f64>, mode: Mode) -> (Array2<f64>, BatchNormCache) {
        let z = self.linear.forward(x);
        let (mut a, cache) = self.norm.forward(&z, mode);
        relu_inplace(&mut a);
        (a, cache)
    }

    /// `da` is the gradient w.r.t. this layer's output `a`; it is consumed.
    fn backward(
        &self,
        input: &Array2<f64>,
        output: &Array2<f64>,
        cache: &BatchNormCache,
        mut da: Array2<f64>,
        grad: &mut DenseNormLayer,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        relu_backward_inplace(output, &mut da);
        let dz = self.norm.backward(cache, &da, &mut grad.norm);
        self.linear.backward(input, &dz, &mut grad.linear, want_input)
    }
}

/// Stacks a batch of resampled streamlines into a `(batch * n) × 3` matrix.
pub fn points_matrix<S: AsRef<ResampledStreamline>>(batch: &[S]) -> Result<(Array2<f64>, usize)> {
    let first = batch.first().ok_or(Error::EmptyBatch)?.as_ref();
    let n = first.n_points();
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
            data.extend_from_slice(p);
        }
    }
    let m = Array2::from_shape_vec((batch.len() * n, 3), data).expect("shape matches data");
    Ok((m, n))
}

impl AsRef<ResampledStreamline> for ResampledStreamline {
    fn as_ref(&self) -> &ResampledStreamline {
        self
    }
}

/// Global features for a batch: pooled values and the winning point index of
/// every feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeatures {
    pub values: Array2<f64>,
    pub argmax: Array2<u32>,
}

impl GlobalFeatures {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

/// Streamlines pushed through the encoder together at inference, keeping
/// the widest activation small.
const EVAL_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<DenseNormLayer>,
}

pub struct EncoderCache {
    n_points: usize,
    /// Layer `i` reads `acts[i]` and writes `acts[i + 1]`.
    acts: Vec<Array2<f64>>,
    norms: Vec<BatchNormCache>,
    argmax: Array2<u32>,
}

impl Encoder {
    pub fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut fan_in = 3;
        let layers = widths
            .iter()
            .map(|&w| {
                let l = DenseNormLayer::init(fan_in, w, rng);
                fan_in = w;
                l
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(DenseNormLayer::zeros_like).collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.linear.fan_out()).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(3, |l| l.linear.fan_out())
    }

    /// Inference-mode encoding of a `(batch * n) × 3` point matrix. The result
    /// for a streamline depends only on that streamline's points.
    pub fn encode_eval(&self, points: &Array2<f64>, n: usize) -> Result<GlobalFeatures> {
        if points.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let groups = points.nrows() / n;
        let mut values = Array2::zeros((groups, self.feature_dim()));
        let mut argmax = Array2::zeros((groups, self.feature_dim()));
        for start in (0..groups).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(groups);
            let mut x = self.layers[0].forward_eval(points.slice(s![start * n..end * n, ..]));
            check_finite(&x, || "encoder layer 0".into())?;
            for (i, layer) in self.layers.iter().enumerate().skip(1) {
                x = layer.forward_eval(x.view());
                check_finite(&x, || format!("encoder layer {i}"))?;
            }
            let (v, a) = max_pool(&x, n);
            values.slice_mut(s![start..end, ..]).assign(&v);
            argmax.slice_mut(s![start..end, ..]).assign(&a);
        }
        Ok(GlobalFeatures { values, argmax })
    }

    pub fn encode(
        &self,
        batch: &[impl AsRef<ResampledStreamline>],
        mode: Mode,
    ) -> Result<(GlobalFeatures, EncoderCache)> {
        let (points, n) = points_matrix(batch)?;
        self.forward(points, n, mode)
    }

    /// Forward pass retaining everything needed for [`Encoder::backward`].
    pub fn forward(&self, points: Array2<f64>, n: usize, mode: Mode) -> Result<(GlobalFeatures, EncoderCache)> {
        if points.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut norms = Vec::with_capacity(self.layers.len());
        acts.push(points);
        for (i, layer) in self.layers.iter().enumerate() {
            let (a, cache) = layer.forward(&acts[i], mode);
            check_finite(&a, || format!("encoder layer {i}"))?;
            norms.push(cache);
            acts.push(a);
        }
        let (values, argmax) = max_pool(&acts[self.layers.len()], n);
        let cache = EncoderCache {
            n_points: n,
            acts,
            norms,
            argmax: argmax.clone(),
        };
        Ok((GlobalFeatures { values, argmax }, cache))
    }

    /// Applies the running-statistic update of a train-mode forward pass.
    pub fn update_running(&mut self, cache: &EncoderCache) {
        let rows = cache.acts[0].nrows();
        for (layer, norm) in self.layers.iter_mut().zip(&cache.norms) {
            layer.norm.update_running(norm, rows);
        }
    }

    /// Backpropagates `dg` (gradient w.r.t. the pooled features). Returns the
    /// gradient w.r.t. the input point coordinates when requested.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        dg: &Array2<f64>,
        grad: &mut Encoder,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let mut d = max_pool_backward(dg, &cache.argmax, cache.n_points);
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            let need = i > 0 || want_input;
            let dx = self.layers[i].backward(
                &cache.acts[i],
                &cache.acts[i + 1],
                &cache.norms[i],
                d,
                &mut grad.layers[i],
                need,
            );
            match dx {
                Some(dx) => d = dx,
                None => {
                    debug_assert!(i == 0 || last == 0);
                    return None;
                }
            }
        }
        Some(d)
    }
}

impl ParamBlocks for Encoder {
    fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("encoder.{i}");
            push_linear(&mut out, &p, &l.linear);
            push_norm(&mut out, &p, &l.norm);
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("encoder.{i}");
            push_linear_mut(&mut out, &p, &mut l.linear);
            push_norm_mut(&mut out, &p, &mut l.norm);
        }
        out
    }
}

/// Hidden `affine → batch norm → ReLU` layers followed by a plain affine output
/// layer producing raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub hidden: Vec<DenseNormLayer>,
    pub output: Linear,
}

pub struct ClassifierCache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
    norms: Vec<BatchNormCache>,
    last_input: Array2<f64>,
}

impl Classifier {
    pub fn init(feature_dim: usize, widths: &[usize], classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut fan_in = feature_dim;
        let hidden = widths
            .iter()
            .map(|&w| {
                let l = DenseNormLayer::init(fan_in, w, rng);
                fan_in = w;
                l
            })
            .collect();
        Self {
            hidden,
            output: Linear::init(fan_in, classes, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.iter().map(DenseNormLayer::zeros_like).collect(),
            output: Linear::zeros(self.output.fan_in(), self.output.fan_out()),
        }
    }

    pub fn classes(&self) -> usize {
        self.output.fan_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.linear.fan_out()).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.output.fan_in(), |l| l.linear.fan_in())
    }

    pub fn logits_eval(&self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let mut x = g.to_owned();
        for (i, layer) in self.hidden.iter().enumerate() {
            x = layer.forward_eval(x.view());
            check_finite(&x, || format!("classifier layer {i}"))?;
        }
        let logits = self.output.forward(&x);
        check_finite(&logits, || "classifier logits".into())?;
        Ok(logits)
    }

    pub fn forward(&self, g: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, ClassifierCache)> {
        if g.ncols() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "classifier expects {}-d features, got {}",
                self.input_dim(),
                g.ncols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.hidden.len());
        let mut outputs = Vec::with_capacity(self.hidden.len());
        let mut norms = Vec::with_capacity(self.hidden.len());
        let mut x = g.to_owned();
        for (i, layer) in self.hidden.iter().enumerate() {
            let (a, cache) = layer.forward(&x, mode);
            check_finite(&a, || format!("classifier layer {i}"))?;
            inputs.push(x);
            norms.push(cache);
            x = a.clone();
            outputs.push(a);
        }
        let logits = self.output.forward(&x);
        check_finite(&logits, || "classifier logits".into())?;
        Ok((
            logits,
            ClassifierCache {
                inputs,
                outputs,
                norms,
                last_input: x,
            },
        ))
    }

    pub fn update_running(&mut self, cache: &ClassifierCache) {
        for (layer, (norm, input)) in self.hidden.iter_mut().zip(cache.norms.iter().zip(&cache.inputs)) {
            layer.norm.update_running(norm, input.nrows());
        }
    }

    /// Returns the gradient w.r.t. the input features when requested.
    pub fn backward(
        &self,
        cache: &ClassifierCache,
        dlogits: &Array2<f64>,
        grad: &mut Classifier,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let need = !self.hidden.is_empty() || want_input;
        let mut d = self
            .output
            .backward(&cache.last_input, dlogits, &mut grad.output, need)?;
        for i in (0..self.hidden.len()).rev() {
            let need = i > 0 || want_input;
            d = self.hidden[i].backward(
                &cache.inputs[i],
                &cache.outputs[i],
                &cache.norms[i],
                d,
                &mut grad.hidden[i],
                need,
            )?;
        }
        Some(d)
    }
}

impl ParamBlocks for Classifier {
    fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.hidden.iter().enumerate() {
            let p = format!("classifier.{i}");
            push_linear(&mut out, &p, &l.linear);
            push_norm(&mut out, &p, &l.norm);
        }
        push_linear(&mut out, &format!("classifier.{}", self.hidden.len()), &self.output);
        out
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        let n = self.hidden.len();
        for (i, l) in self.hidden.iter_mut().enumerate() {
            let p = format!("classifier.{i}");
            push_linear_mut(&mut out, &p, &mut l.linear);
            push_norm_mut(&mut out, &p, &mut l.norm);
        }
        push_linear_mut(&mut out, &format!("classifier.{n}"), &mut self.output);
        out
    }
}

/// Projection head: affine layers with ReLU between them, then scaling to unit
/// Euclidean length.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub layers: Vec<Linear>,
}

pub struct ProjectorCache {
    inputs: Vec<Array2<f64>>,
    norms: Array1<f64>,
    z: Array2<f64>,
}

impl Projector {
    pub fn init(feature_dim: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut fan_in = feature_dim;
        let layers = widths
            .iter()
            .map(|&w| {
                let l = Linear::init(fan_in, w, rng);
                fan_in = w;
                l
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Linear::fan_out).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    /// Pre-normalization output.
    fn raw(&self, g: &Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = g.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&x);
            if i < last {
                relu_inplace(&mut y);
            }
            inputs.push(x);
            x = y;
        }
        (x, inputs)
    }

    pub fn project(&self, g: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(g)?.0)
    }

    pub fn forward(&self, g: &Array2<f64>) -> Result<(Array2<f64>, ProjectorCache)> {
        if g.ncols() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "projector expects {}-d features, got {}",
                self.input_dim(),
                g.ncols()
            )));
        }
        let (mut h, inputs) = self.raw(g);
        check_finite(&h, || "projector output".into())?;
        let mut norms = Array1::<f64>::zeros(h.nrows());
        for (i, mut row) in h.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateProjection(i));
            }
            row /= norm;
            norms[i] = norm;
        }
        Ok((
            h.clone(),
            ProjectorCache {
                inputs,
                norms,
                z: h,
            },
        ))
    }

    /// Returns the gradient w.r.t. the input features.
    pub fn backward(&self, cache: &ProjectorCache, dz: &Array2<f64>, grad: &mut Projector) -> Array2<f64> {
        // d(h/|h|) = (dz - z (z . dz)) / |h|
        let mut d = dz.to_owned();
        for ((mut drow, zrow), &norm) in d.rows_mut().into_iter().zip(cache.z.rows()).zip(&cache.norms) {
            let proj = zrow.dot(&drow);
            drow.zip_mut_with(&zrow, |dv, &zv| *dv = (*dv - zv * proj) / norm);
        }
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                // input of layer i+1 is the ReLU output of layer i
                relu_backward_inplace(&cache.inputs[i + 1], &mut d);
            }
            d = self.layers[i]
                .backward(&cache.inputs[i], &d, &mut grad.layers[i], true)
                .expect("input gradient requested");
        }
        d
    }
}

impl ParamBlocks for Projector {
    fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            push_linear(&mut out, &format!("projector.{i}"), l);
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            push_linear_mut(&mut out, &format!("projector.{i}"), l);
        }
        out
    }
}

/// Which training stage a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn tag(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Stage::One),
            2 => Some(Stage::Two),
            _ => None,
        }
    }
}

/// Encoder plus classifier, with the projector present only while a stage-two
/// model is being trained contrastively.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub stage: Stage,
    pub n_points: usize,
    pub encoder: Encoder,
    pub classifier: Classifier,
    pub projector: Option<Projector>,
}

impl Model {
    /// Deterministic initialization from `seed`.
    pub fn init(arch: &Architecture, stage: Stage, with_projector: bool, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::init(&arch.encoder_widths, &mut rng);
        let classifier = Classifier::init(arch.feature_dim(), &arch.classifier_widths, arch.classes, &mut rng);
        let projector = with_projector.then(|| Projector::init(arch.feature_dim(), &arch.projector_widths, &mut rng));
        Ok(Self {
            stage,
            n_points: arch.n_points,
            encoder,
            classifier,
            projector,
        })
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            n_points: self.n_points,
            encoder_widths: self.encoder.widths(),
            classifier_widths: self.classifier.widths(),
            projector_widths: self
                .projector
                .as_ref()
                .map_or_else(|| Architecture::standard(2).projector_widths, Projector::widths),
            classes: self.classes(),
        }
    }

    /// Eval-mode logits for a batch of streamlines resampled to `n_points`.
    pub fn logits(&self, batch: &[impl AsRef<ResampledStreamline>]) -> Result<Array2<f64>> {
        let (points, n) = points_matrix(batch)?;
        if n != self.n_points {
            return Err(Error::PointCountMismatch {
                left: self.n_points,
                right: n,
            });
        }
        let g = self.encoder.encode_eval(&points, n)?;
        self.classifier.logits_eval(&g.values)
    }

    pub fn predict(&self, batch: &[impl AsRef<ResampledStreamline>]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(batch)?))
    }

    /// Rounds every stored value to the nearest 32-bit float, matching what
    /// the model file can represent.
    pub fn round_to_f32(&mut self) {
        for b in self.blocks_mut() {
            for v in b.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Drops the projection head (it is only needed for contrastive training).
    pub fn without_projector(mut self) -> Self {
        self.projector = None;
        self
    }
}

impl ParamBlocks for Model {
    fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = self.encoder.blocks();
        out.extend(self.classifier.blocks());
        if let Some(p) = &self.projector {
            out.extend(p.blocks());
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = self.encoder.blocks_mut();
        out.extend(self.classifier.blocks_mut());
        if let Some(p) = &mut self.projector {
            out.extend(p.blocks_mut());
        }
        out
    }
}

/// Row-wise argmax with the lowest index winning ties.
pub fn argmax_rows(x: &Array2<f64>) -> Vec<usize> {
    x.rows()
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
        .collect()
}
