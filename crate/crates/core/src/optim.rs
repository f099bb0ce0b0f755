//! Adam with decoupled weight decay.

use crate::encoder::{cst, GradientSet, ModelPair, Scalar};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1.5e-6;
pub const DEFAULT_BETAS: (f64, f64) = (0.9, 0.999);
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            betas: DEFAULT_BETAS,
            eps: DEFAULT_ADAM_EPS,
        }
    }
}

/// First and second moments per parameter array, allocated on first use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<A> {
    pub first: Vec<Vec<A>>,
    pub second: Vec<Vec<A>>,
    pub step: u64,
}

impl<A: Scalar> OptimizerState<A> {
    pub fn new() -> Self {
        Self {
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }
}

/// Single Adam update. Weight decay is applied as `p -= lr * wd * p` on
/// linear weights only, independent of the gradient moments.
pub fn adam_step<A: Scalar>(
    model: &mut ModelPair<A>,
    grads: &GradientSet<A>,
    state: &mut OptimizerState<A>,
    config: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = config.betas;
    let c1: A = cst(1.0 - b1.powi(t));
    let c2: A = cst(1.0 - b2.powi(t));
    let (b1, b2): (A, A) = (cst(b1), cst(b2));
    let lr: A = cst(config.lr);
    let eps: A = cst(config.eps);
    let decay: A = cst(config.lr * config.weight_decay);
    let one = A::one();
    let first = &mut state.first;
    let second = &mut state.second;
    model.for_each_param(grads, |slot, p| {
        if first.len() <= slot {
            first.resize_with(slot + 1, Vec::new);
            second.resize_with(slot + 1, Vec::new);
        }
        let (m, v) = (&mut first[slot], &mut second[slot]);
        if m.len() != p.values.len() {
            assert!(m.is_empty(), "optimizer state does not match parameter {slot}");
            m.resize(p.values.len(), A::zero());
            v.resize(p.values.len(), A::zero());
        }
        for (((w, &g), m), v) in p.values.iter_mut().zip(p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            if p.is_weight {
                *w = *w - decay * *w;
            }
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    });
}

#[cfg(test)]
mod tests {
    use ndarray::{arr1, arr2};

    use super::*;
    use crate::encoder::{EncoderKind, EncoderModel, Layer, LayerGrad, ProjectorModel};

    /// A 1 -> 1 linear encoder with a 1-wide, no-hidden-layer projector.
    fn scalar_model(w: f64, b: f64) -> ModelPair<f64> {
        let enc = EncoderModel::from_linear(arr2(&[[w]]), arr1(&[b])).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let proj = ProjectorModel::new(1, 0, 1, &mut rng).unwrap();
        ModelPair::from_parts(enc, proj).unwrap()
    }

    fn grads_for(model: &ModelPair<f64>, gw: f64, gb: f64) -> GradientSet<f64> {
        let mut g = model.zero_grads();
        g.encoder[0] = LayerGrad::Linear {
            weight: arr2(&[[gw]]),
            bias: arr1(&[gb]),
        };
        g
    }

    fn encoder_wb(model: &ModelPair<f64>) -> (f64, f64) {
        let Layer::Linear(l) = &model.encoder.layers()[0] else { panic!() };
        (l.weight[(0, 0)], l.bias[0])
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut m = scalar_model(0.5, 0.25);
        let g = grads_for(&m, 1.0, -3.0);
        let mut state = OptimizerState::new();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut m, &g, &mut state, &cfg);
        let (w, b) = encoder_wb(&m);
        assert!((w - (0.5 - 1e-3)).abs() < 1e-10);
        assert!((b - (0.25 + 1e-3)).abs() < 1e-10);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut m = scalar_model(0.5, 0.25);
        let before = m.flat_params();
        let g = m.zero_grads();
        let mut state = OptimizerState::new();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        for _ in 0..3 {
            adam_step(&mut m, &g, &mut state, &cfg);
        }
        assert_eq!(m.flat_params(), before);
    }

    #[test]
    fn decay_shrinks_weights_only() {
        let mut m = scalar_model(0.5, 0.25);
        let g = m.zero_grads();
        let mut state = OptimizerState::new();
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.2,
            ..AdamConfig::default()
        };
        adam_step(&mut m, &g, &mut state, &cfg);
        let (w, b) = encoder_wb(&m);
        assert!((w - 0.5 * (1.0 - 0.02)).abs() < 1e-15);
        assert_eq!(b, 0.25);
    }

    #[test]
    fn bn_parameters_are_not_decayed() {
        let mut m: ModelPair<f64> =
            crate::encoder::init_model(EncoderKind::Factorized { layers: 1, hidden: 2 }, 3, 2, 0, 2, 0).unwrap();
        let g = m.zero_grads();
        let mut state = OptimizerState::new();
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        adam_step(&mut m, &g, &mut state, &cfg);
        let Layer::BatchNorm(bn) = &m.encoder.layers()[1] else { panic!() };
        assert!(bn.gamma.iter().all(|&v| v == 1.0));
        assert_eq!(state.first.len(), 6);
    }
}
