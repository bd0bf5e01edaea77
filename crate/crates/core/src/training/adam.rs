use crate::network::{BlockKind, ParamBlocks};

/// Bias-corrected Adam state over the trainable blocks of a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &impl ParamBlocks) -> Self {
        let sizes: Vec<usize> = params
            .blocks()
            .iter()
            .filter(|b| b.kind == BlockKind::Trainable)
            .map(|b| b.data.len())
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update. `grads` must have the same block layout as `params`;
    /// a non-zero `weight_decay` adds the coupled L2 term `wd * θ` to the
    /// gradient.
    pub fn step<P: ParamBlocks>(&mut self, params: &mut P, grads: &P, lr: f64, weight_decay: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let grads = grads.blocks();
        let trainable = params
            .blocks_mut()
            .into_iter()
            .zip(grads)
            .filter(|(p, _)| p.kind == BlockKind::Trainable);
        for (k, (p, g)) in trainable.enumerate() {
            debug_assert_eq!(p.name, g.name);
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for i in 0..p.data.len() {
                let grad = g.data[i] + weight_decay * p.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
