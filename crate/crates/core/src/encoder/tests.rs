use ndarray::{Array1, Array2};
use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_batch<A: Scalar>(rows: usize, cols: usize, seed: u64) -> Array2<A> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| cst(rng.random_range(-1.0..1.0)))
}

/// Perturbs BN statistics and affine parameters so eval mode is non-trivial.
fn randomize_bn<A: Scalar>(layers: &mut [Layer<A>], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in layers {
        if let Layer::BatchNorm(bn) = layer {
            bn.gamma.mapv_inplace(|_| cst(rng.random_range(0.5..1.5)));
            bn.beta.mapv_inplace(|_| cst(rng.random_range(-0.5..0.5)));
            bn.running_mean.mapv_inplace(|_| cst(rng.random_range(-1.0..1.0)));
            bn.running_var.mapv_inplace(|_| cst(rng.random_range(0.2..2.0)));
        }
    }
}

fn kinds() -> Vec<EncoderKind> {
    vec![
        EncoderKind::Linear,
        EncoderKind::Factorized { layers: 2, hidden: 4 },
        EncoderKind::Mlp { layers: 1, hidden: 4 },
    ]
}

/// Five-point central difference. Tiny BN batches are curved enough that the
/// three-point stencil's O(h^2) truncation alone exceeds 1e-4 at h = 1e-3.
pub(crate) fn central_difference(f: &mut impl FnMut(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

/// Central differences of `sum(G * z_hat)` against backward.
fn max_rel_grad_error(kind: EncoderKind, seed: u64) -> f64 {
    let mut model: ModelPair<f64> = init_model(kind, 6, 3, 1, 5, seed).unwrap();
    randomize_bn(model.projector.layers_mut(), seed + 1);
    randomize_bn(model.encoder.layers_mut(), seed + 2);
    let x = random_batch::<f64>(4, 6, seed + 3);
    let upstream = random_batch::<f64>(4, 5, seed + 4);
    let objective = |m: &mut ModelPair<f64>| -> f64 {
        let out = m.forward(&x, Mode::Train).unwrap();
        (&out.z_hat * &upstream).sum()
    };

    let out = model.forward(&x, Mode::Train).unwrap();
    let grads = model.backward(&out.cache, &upstream).unwrap();
    let analytic: Vec<f64> = grads.arrays().concat();
    let params = model.flat_params();
    assert_eq!(analytic.len(), params.len());

    let h = 1e-3;
    let scale = analytic.iter().fold(0f64, |m, v| m.max(v.abs()));
    let mut worst = 0f64;
    for (i, &p) in params.iter().enumerate() {
        let mut at = |offset: f64| {
            let mut m = model.clone();
            m.set_flat_param(i, p + offset);
            objective(&mut m)
        };
        let numeric = central_difference(&mut at, h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-3 * scale);
        let e = (analytic[i] - numeric).abs() / denom;
        worst = worst.max(e);
    }
    worst
}

#[test]
fn backward_matches_finite_differences() {
    for kind in kinds() {
        for seed in [1, 2, 3] {
            let err = max_rel_grad_error(kind, seed * 10);
            assert!(err < 1e-4, "{kind:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn init_is_deterministic() {
    for kind in kinds() {
        let a: ModelPair<f32> = init_model(kind, 7, 3, 2, 9, 42).unwrap();
        let b: ModelPair<f32> = init_model(kind, 7, 3, 2, 9, 42).unwrap();
        let bits = |m: &ModelPair<f32>| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c: ModelPair<f32> = init_model(kind, 7, 3, 2, 9, 43).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }
}

#[test]
fn glorot_bounds() {
    let m: ModelPair<f64> = init_model(EncoderKind::Linear, 30, 10, 0, 10, 0).unwrap();
    let Layer::Linear(l) = &m.encoder.layers()[0] else { panic!() };
    let limit = (6.0f64 / 40.0).sqrt();
    assert!(l.weight.iter().all(|w| w.abs() <= limit));
    assert!(l.bias.iter().all(|&b| b == 0.0));
}

#[test]
fn parameter_counts() {
    let m: ModelPair<f32> = init_model(EncoderKind::Linear, 20, 4, 0, 8, 0).unwrap();
    assert_eq!(m.encoder.param_count(), 20 * 4 + 4);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mlp = EncoderModel::<f32>::new(EncoderKind::Mlp { layers: 1, hidden: 512 }, 2048, 128, &mut rng).unwrap();
    assert_eq!(mlp.param_count(), 2048 * 512 + 512 + 2 * 512 + 512 * 128 + 128);

    let fact = EncoderModel::<f32>::new(EncoderKind::Factorized { layers: 3, hidden: 16 }, 40, 8, &mut rng).unwrap();
    assert_eq!(fact.param_count(), (40 * 16 + 16 + 32) + (16 * 16 + 16 + 32) + (16 * 8 + 8 + 16));

    let proj = ProjectorModel::<f32>::new(8, 2, 32, &mut rng).unwrap();
    assert_eq!(proj.param_count(), (8 * 32 + 32 + 64) + (32 * 32 + 32 + 64) + (32 * 32 + 32));
    assert!(ProjectorModel::<f32>::new(8, 2, 4, &mut rng).is_err());
}

#[test]
fn layer_patterns() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tags = |layers: &[Layer<f32>]| {
        layers
            .iter()
            .map(|l| match l {
                Layer::Linear(_) => 'L',
                Layer::BatchNorm(_) => 'B',
                Layer::Relu => 'R',
            })
            .collect::<String>()
    };
    let f = EncoderModel::<f32>::new(EncoderKind::Factorized { layers: 2, hidden: 5 }, 6, 3, &mut rng).unwrap();
    assert_eq!(tags(f.layers()), "LBLB");
    let m = EncoderModel::<f32>::new(EncoderKind::Mlp { layers: 2, hidden: 5 }, 6, 3, &mut rng).unwrap();
    assert_eq!(tags(m.layers()), "LBRLBRL");
    let p = ProjectorModel::<f32>::new(3, 2, 8, &mut rng).unwrap();
    assert_eq!(tags(p.layers()), "LBRLBRL");
}

#[test]
fn identity_linear_encoder() {
    let enc = EncoderModel::from_linear(Array2::<f32>::eye(3), Array1::zeros(3)).unwrap();
    let x = random_batch::<f32>(5, 3, 1);
    assert_eq!(enc.infer(&x).unwrap(), x);
    let fm = FeatureMatrix::new(x.clone()).unwrap();
    assert_eq!(encode(&enc, &fm).unwrap(), fm);
}

#[test]
fn train_mode_batch_norm_normalizes() {
    let mut bn = Layer::BatchNorm(BatchNorm::<f64>::new(3));
    let x = ndarray::arr2(&[[1.0, -2.0, 5.0], [3.0, 4.0, 5.5]]);
    let (y, _) = bn.forward(&x, Mode::Train);
    for c in 0..3 {
        let col = y.column(c);
        let mean = col.sum() / 2.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3, "{var}");
    }
    let Layer::BatchNorm(bn) = bn else { panic!() };
    // running stats moved by momentum 0.1 with the unbiased variance
    assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
    assert!((bn.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
}

#[test]
fn eval_forward_is_pure() {
    let mut m: ModelPair<f32> = init_model(EncoderKind::Mlp { layers: 1, hidden: 6 }, 5, 3, 1, 4, 3).unwrap();
    let x = random_batch::<f32>(4, 5, 2);
    m.forward(&x, Mode::Train).unwrap();
    let before = m.clone();
    let a = m.forward(&x, Mode::Eval).unwrap().z_hat;
    let b = m.forward(&x, Mode::Eval).unwrap().z_hat;
    assert_eq!(a, b);
    assert_eq!(m, before);
}

#[test]
fn forward_errors() {
    let mut m: ModelPair<f32> = init_model(EncoderKind::Linear, 4, 2, 1, 4, 0).unwrap();
    assert!(m.forward(&random_batch(1, 4, 0), Mode::Train).is_err());
    assert!(m.forward(&random_batch(1, 4, 0), Mode::Eval).is_ok());
    assert!(matches!(
        m.forward(&random_batch(3, 5, 0), Mode::Eval),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut m: ModelPair<f64> = init_model(EncoderKind::Factorized { layers: 2, hidden: 4 }, 5, 3, 1, 6, 1).unwrap();
    let out = m.forward(&random_batch(4, 5, 1), Mode::Train).unwrap();
    let g = m.backward(&out.cache, &Array2::zeros((4, 6))).unwrap();
    assert!(g.is_zero());
}

#[test]
fn dead_relu_unit_has_no_incoming_gradient() {
    let mut m: ModelPair<f64> = init_model(EncoderKind::Mlp { layers: 1, hidden: 4 }, 5, 3, 0, 3, 2).unwrap();
    if let Layer::BatchNorm(bn) = &mut m.encoder.layers_mut()[1] {
        bn.beta[2] = -100.0;
    }
    let out = m.forward(&random_batch(6, 5, 3), Mode::Train).unwrap();
    let g = m.backward(&out.cache, &random_batch(6, 3, 4)).unwrap();
    let LayerGrad::Linear { weight, bias } = &g.encoder[0] else { panic!() };
    assert!(weight.row(2).iter().all(|&v| v == 0.0));
    assert_eq!(bias[2], 0.0);
    assert!(weight.row(0).iter().any(|&v| v != 0.0));
}

#[test]
fn stale_and_eval_caches_are_rejected() {
    let mut m: ModelPair<f64> = init_model(EncoderKind::Linear, 3, 2, 0, 2, 0).unwrap();
    let x = random_batch(4, 3, 0);
    let eval = m.forward(&x, Mode::Eval).unwrap();
    assert!(m.backward(&eval.cache, &Array2::zeros((4, 2))).is_err());

    let out = m.forward(&x, Mode::Train).unwrap();
    let grads = m.zero_grads();
    m.for_each_param(&grads, |_, _| {});
    let err = m.backward(&out.cache, &Array2::zeros((4, 2))).unwrap_err();
    assert!(err.to_string().contains("stale"));
}

#[test]
fn collapse_of_unit_batch_norm_is_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let enc = EncoderModel::<f64>::new(EncoderKind::Factorized { layers: 1, hidden: 1 }, 4, 2, &mut rng).unwrap();
    let Layer::Linear(lin) = &enc.layers()[0] else { panic!() };
    let mut lin = lin.clone();
    lin.bias = ndarray::arr1(&[0.5, -0.25]);
    let enc = EncoderModel::from_parts(
        enc.kind(),
        4,
        2,
        vec![Layer::Linear(lin.clone()), Layer::BatchNorm(BatchNorm::new(2))],
    );
    let collapsed = enc.collapse_factorized().unwrap();
    let Layer::Linear(c) = &collapsed.layers()[0] else { panic!() };
    let s = (1.0f64 + 1e-5).sqrt();
    for (a, b) in c.weight.iter().zip(lin.weight.iter()) {
        assert!((a - b / s).abs() < 1e-12);
    }
    for (a, b) in c.bias.iter().zip(lin.bias.iter()) {
        assert!((a - b / s).abs() < 1e-12);
    }
    assert_eq!(collapsed.kind(), EncoderKind::Linear);
}

fn collapse_gap(layers: usize, seed: u64) -> f32 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = EncoderModel::<f32>::new(EncoderKind::Factorized { layers, hidden: 12 }, 10, 4, &mut rng).unwrap();
    randomize_bn(enc.layers_mut(), seed);
    let collapsed = enc.collapse_factorized().unwrap();
    let x = random_batch::<f32>(100, 10, seed + 1);
    let a = enc.infer(&x).unwrap();
    let b = collapsed.infer(&x).unwrap();
    (&a - &b).iter().fold(0f32, |m, v| m.max(v.abs()))
}

#[test]
fn collapse_matches_layered_forward() {
    for layers in 1..=3 {
        assert!(collapse_gap(layers, 7) < 1e-5);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mlp = EncoderModel::<f32>::new(EncoderKind::Mlp { layers: 1, hidden: 3 }, 4, 2, &mut rng).unwrap();
    let err = mlp.collapse_factorized().unwrap_err();
    assert!(err.to_string().contains("not collapsible"));
}

#[test]
fn eval_is_row_independent() {
    let mut m: ModelPair<f32> = init_model(EncoderKind::Mlp { layers: 2, hidden: 6 }, 5, 3, 1, 4, 9).unwrap();
    randomize_bn(m.encoder.layers_mut(), 1);
    let data = FeatureMatrix::new(random_batch(9, 5, 4)).unwrap();
    let all = encode(&m.encoder, &data).unwrap();
    let single = encode(&m.encoder, &data.select_rows(&[4]).unwrap()).unwrap();
    assert_eq!(single.row(0), all.row(4));
    let perm = [8, 3, 0, 1, 7, 2, 6, 5, 4];
    let permuted = encode(&m.encoder, &data.select_rows(&perm).unwrap()).unwrap();
    for (r, &p) in perm.iter().enumerate() {
        assert_eq!(permuted.row(r), all.row(p));
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for kind in kinds() {
        let mut m: ModelPair<f32> = init_model(kind, 6, 3, 1, 4, 11).unwrap();
        randomize_bn(m.encoder.layers_mut(), 2);
        let p = dir.path().join(format!("{}.ckpt", kind.name()));
        m.encoder.save(&p).unwrap();
        assert_eq!(EncoderModel::load(&p).unwrap(), m.encoder);
    }
    let p = dir.path().join("junk");
    std::fs::write(&p, b"TLDR\x01\x01\x00").unwrap();
    assert!(EncoderModel::load(&p).is_err());
    std::fs::write(&p, b"nope").unwrap();
    assert!(EncoderModel::load(&p).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn collapse_is_exact(layers in 1usize..4, seed in any::<u64>()) {
        prop_assert!(collapse_gap(layers, seed % 10_000) < 1e-5);
    }
}
