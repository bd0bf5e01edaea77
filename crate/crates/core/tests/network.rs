mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swm_core::network::flops::count_flops;
use swm_core::network::serialize::{deserialize_model, serialize_model};
use swm_core::network::{BatchNorm, Linear, ParamBlocks};
use swm_core::{Architecture, Model, ResampledStreamline, Stage};

use common::{random_streamline, shrunken_arch, stack};

/// Plain triple-loop affine map.
fn affine(x: &Array2<f64>, l: &Linear) -> Array2<f64> {
    let mut y = Array2::zeros((x.nrows(), l.fan_out()));
    for r in 0..x.nrows() {
        for o in 0..l.fan_out() {
            let mut acc = l.bias[o];
            for i in 0..l.fan_in() {
                acc += x[[r, i]] * l.weight[[i, o]];
            }
            y[[r, o]] = acc;
        }
    }
    y
}

fn norm_relu(x: &Array2<f64>, bn: &BatchNorm) -> Array2<f64> {
    Array2::from_shape_fn(x.dim(), |(r, c)| {
        let v = (x[[r, c]] - bn.running_mean[c]) / (bn.running_var[c] + 1e-5).sqrt() * bn.gamma[c] + bn.beta[c];
        if v > 0.0 {
            v
        } else {
            0.0
        }
    })
}

/// Perturbs running statistics and affine parameters away from their
/// initial values so every term of the forward pass matters.
fn randomized(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in model.blocks_mut() {
        let positive = b.name.ends_with("running_var");
        for v in b.data.iter_mut() {
            *v = if positive {
                rng.gen_range(0.2..3.0)
            } else {
                *v + rng.gen_range(-0.3..0.3)
            };
        }
    }
}

fn reference_logits(model: &Model, batch: &[ResampledStreamline]) -> Array2<f64> {
    let n = model.n_points;
    let mut x = stack(batch);
    for layer in &model.encoder.layers {
        x = norm_relu(&affine(&x, &layer.linear), &layer.norm);
    }
    let d = x.ncols();
    let mut g = Array2::from_elem((batch.len(), d), f64::NEG_INFINITY);
    for r in 0..x.nrows() {
        for c in 0..d {
            g[[r / n, c]] = g[[r / n, c]].max(x[[r, c]]);
        }
    }
    for layer in &model.classifier.hidden {
        g = norm_relu(&affine(&g, &layer.linear), &layer.norm);
    }
    affine(&g, &model.classifier.output)
}

#[test]
fn logits_match_a_hand_written_forward_pass() {
    let arch = shrunken_arch(6);
    for seed in 0..4 {
        let mut model = Model::init(&arch, Stage::Two, false, seed).unwrap();
        randomized(&mut model, seed + 100);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<_> = (0..9).map(|_| random_streamline(&mut rng, 5, 10.0)).collect();
        let got = model.logits(&batch).unwrap();
        let expected = reference_logits(&model, &batch);
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn projector_matches_hand_written_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = swm_core::network::Projector::init(12, &[10, 4], &mut rng);
    let g = Array2::from_shape_simple_fn((7, 12), || rng.gen_range(-2.0..2.0));
    let z = p.project(&g).unwrap();
    let mut h = affine(&g, &p.layers[0]).mapv(|v| v.max(0.0));
    h = affine(&h, &p.layers[1]);
    for r in 0..7 {
        let norm: f64 = h.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in 0..4 {
            assert!((z[[r, c]] - h[[r, c]] / norm).abs() < 1e-12);
        }
    }
}

#[test]
fn standard_architecture_flops() {
    let arch = Architecture::standard(199);
    let (n, k) = (15u64, 199u64);
    let dense = |rows: u64, widths: &[u64], norm: bool| -> u64 {
        widths
            .windows(2)
            .map(|w| rows * (2 * w[0] * w[1] + w[1] + if norm { 3 * w[1] } else { 0 }))
            .sum()
    };
    let expected = dense(n, &[3, 64, 128, 1024], true) + (n - 1) * 1024 + dense(1, &[1024, 512, 256], true) + dense(1, &[256, k], false);
    assert_eq!(expected, 5_686_855);
    let report = count_flops(&arch);
    assert_eq!(report.total, expected);
    let rel = (report.total as f64 - 5.68e6).abs() / 5.68e6;
    assert!(rel <= 0.02);
}

#[test]
fn round_trip_is_bit_exact_after_f32_rounding() {
    let mut model = Model::init(&shrunken_arch(5), Stage::Two, false, 3).unwrap();
    randomized(&mut model, 4);
    model.round_to_f32();
    let bytes = serialize_model(&model);
    let back = deserialize_model(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(serialize_model(&back), bytes);
}

#[test]
fn corrupt_model_files_are_rejected() {
    let model = Model::init(&shrunken_arch(3), Stage::One, false, 1).unwrap();
    let bytes = serialize_model(&model);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(deserialize_model(&bad).is_err());
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(deserialize_model(&bad).is_err());
    assert!(deserialize_model(&bytes[..bytes.len() - 3]).is_err());
    assert!(deserialize_model(&bytes[..10]).is_err());
}

fn streamline(n: usize) -> impl Strategy<Value = ResampledStreamline> {
    prop::collection::vec(prop::array::uniform3(-80.0f64..80.0), n)
        .prop_map(|p| ResampledStreamline::from_points(p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoder_ignores_point_order(s in streamline(15), seed in any::<u64>()) {
        let model = Model::init(&Architecture::standard(4), Stage::Two, false, 1).unwrap();
        let mut pts = s.points().to_vec();
        rand::seq::SliceRandom::shuffle(pts.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = ResampledStreamline::from_points(pts).unwrap();
        let a = model.encoder.encode(&[&s], swm_core::network::Mode::Eval).unwrap().0.values;
        let b = model.encoder.encode(&[&shuffled], swm_core::network::Mode::Eval).unwrap().0.values;
        let c = model.encoder.encode(&[&s.reversed()], swm_core::network::Mode::Eval).unwrap().0.values;
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
    }

    #[test]
    fn projector_output_has_unit_norm(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = swm_core::network::Projector::init(32, &[16, 8], &mut rng);
        let g = Array2::from_shape_simple_fn((5, 32), || rng.gen_range(0.0..5.0));
        let z = p.project(&g).unwrap();
        for row in z.rows() {
            prop_assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>(), classes in 2usize..9, stage_two in any::<bool>()) {
        let stage = if stage_two { Stage::Two } else { Stage::One };
        let mut model = Model::init(&shrunken_arch(classes), stage, false, seed).unwrap();
        model.round_to_f32();
        let back = deserialize_model(&serialize_model(&model)).unwrap();
        prop_assert_eq!(back, model);
    }
}
