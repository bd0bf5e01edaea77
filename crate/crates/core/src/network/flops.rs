//! Analytic floating-point operation count for one streamline forward pass
//! (encoder + classifier; the projector is not used at inference).
//!
//! Convention: a multiply-accumulate is 2 FLOPs, each bias addition 1, batch
//! normalization scale-and-shift 2 per activation, ReLU 1 comparison per
//! activation and max-pooling `n - 1` comparisons per feature dimension. The
//! softmax is not counted since prediction only needs the argmax of logits.

use serde::Serialize;

use super::Architecture;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlopBreakdown {
    pub multiply_accumulate: u64,
    pub bias: u64,
    pub normalization: u64,
    pub activation: u64,
    pub pooling: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.multiply_accumulate + self.bias + self.normalization + self.activation + self.pooling
    }

    fn add_dense(&mut self, rows: u64, fan_in: u64, fan_out: u64, normalized: bool) {
        self.multiply_accumulate += 2 * rows * fan_in * fan_out;
        self.bias += rows * fan_out;
        if normalized {
            self.normalization += 2 * rows * fan_out;
            self.activation += rows * fan_out;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub encoder: FlopBreakdown,
    pub classifier: FlopBreakdown,
    pub total: u64,
}

pub fn count_flops(arch: &Architecture) -> FlopReport {
    let n = arch.n_points as u64;
    let mut encoder = FlopBreakdown::default();
    let mut fan_in = 3u64;
    for &w in &arch.encoder_widths {
        encoder.add_dense(n, fan_in, w as u64, true);
        fan_in = w as u64;
    }
    encoder.pooling = n.saturating_sub(1) * fan_in;

    let mut classifier = FlopBreakdown::default();
    for &w in &arch.classifier_widths {
        classifier.add_dense(1, fan_in, w as u64, true);
        fan_in = w as u64;
    }
    classifier.add_dense(1, fan_in, arch.classes as u64, false);

    FlopReport {
        encoder,
        classifier,
        total: encoder.total() + classifier.total(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_layer_mac_count() {
        let mut b = FlopBreakdown::default();
        b.add_dense(15, 3, 64, false);
        assert_eq!(b.multiply_accumulate, 5760);
    }

    #[test]
    fn published_architecture_is_near_5_68m() {
        let r = count_flops(&Architecture::standard(199));
        let rel = (r.total as f64 - 5.68e6).abs() / 5.68e6;
        assert!(rel <= 0.02, "{} ({rel})", r.total);
        assert_eq!(r.total, 5_686_855);
    }

    #[test]
    fn doubling_classes_adds_last_layer_cost() {
        let a = count_flops(&Architecture::standard(199)).total;
        let b = count_flops(&Architecture::standard(398)).total;
        assert_eq!(b - a, 2 * 256 * 199 + 199);
    }
}
