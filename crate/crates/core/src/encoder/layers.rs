//! Linear, batch-norm and ReLU layers with hand-written reverse mode.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use super::{cst, Mode, Scalar};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `y = x W^T + b` for row-major batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<A> {
    /// `out x in`.
    pub weight: Array2<A>,
    pub bias: Array1<A>,
}

impl<A: Scalar> Linear<A> {
    /// Glorot-uniform weights and zero bias.
    pub fn glorot<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weight = Array2::from_shape_fn((output, input), |_| cst(rng.random_range(-limit..=limit)));
        Self {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<A>) -> Array2<A> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<A> {
    pub gamma: Array1<A>,
    pub beta: Array1<A>,
    pub running_mean: Array1<A>,
    pub running_var: Array1<A>,
    pub eps: A,
    pub momentum: A,
}

impl<A: Scalar> BatchNorm<A> {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            eps: cst(BN_EPS),
            momentum: cst(BN_MOMENTUM),
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Per-feature `(scale, shift)` of the inference-time affine map.
    pub fn eval_affine(&self) -> (Array1<A>, Array1<A>) {
        let scale = Zip::from(&self.gamma)
            .and(&self.running_var)
            .map_collect(|&g, &v| g / (v + self.eps).sqrt());
        let shift = Zip::from(&self.beta)
            .and(&self.running_mean)
            .and(&scale)
            .map_collect(|&b, &m, &s| b - s * m);
        (scale, shift)
    }

    fn forward_eval(&self, x: &Array2<A>) -> Array2<A> {
        let (scale, shift) = self.eval_affine();
        let mut y = x * &scale;
        y += &shift;
        y
    }

    /// Normalizes with batch statistics (biased variance) and folds the
    /// unbiased variance into the running estimate.
    fn forward_train(&mut self, x: &Array2<A>) -> (Array2<A>, LayerCache<A>) {
        let b = x.nrows();
        let bf: A = cst(b as f64);
        let mean = x.sum_axis(Axis(0)) / bf;
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / bf;
        let inv_std = var.mapv(|v| A::one() / (v + self.eps).sqrt());
        let x_hat = &centered * &inv_std;
        let mut y = &x_hat * &self.gamma;
        y += &self.beta;

        let m = self.momentum;
        let unbiased: A = bf / cst((b - 1) as f64);
        Zip::from(&mut self.running_mean)
            .and(&mean)
            .for_each(|r, &mu| *r = (A::one() - m) * *r + m * mu);
        Zip::from(&mut self.running_var)
            .and(&var)
            .for_each(|r, &v| *r = (A::one() - m) * *r + m * v * unbiased);
        (y, LayerCache::BatchNorm { x_hat, inv_std })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<A> {
    Linear(Linear<A>),
    BatchNorm(BatchNorm<A>),
    Relu,
}

/// Intermediates retained by a train-mode forward.
#[derive(Clone, Debug)]
pub enum LayerCache<A> {
    Linear { input: Array2<A> },
    BatchNorm { x_hat: Array2<A>, inv_std: Array1<A> },
    Relu { mask: Array2<bool> },
}

/// Gradient of one layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerGrad<A> {
    Linear { weight: Array2<A>, bias: Array1<A> },
    BatchNorm { gamma: Array1<A>, beta: Array1<A> },
    None,
}

impl<A: Scalar> LayerGrad<A> {
    pub fn add_assign(&mut self, other: &LayerGrad<A>) {
        match (self, other) {
            (LayerGrad::Linear { weight, bias }, LayerGrad::Linear { weight: w, bias: b }) => {
                *weight += w;
                *bias += b;
            }
            (LayerGrad::BatchNorm { gamma, beta }, LayerGrad::BatchNorm { gamma: g, beta: b }) => {
                *gamma += g;
                *beta += b;
            }
            (LayerGrad::None, LayerGrad::None) => {}
            _ => panic!("gradient layouts differ"),
        }
    }

    pub fn arrays(&self) -> Vec<&[A]> {
        match self {
            LayerGrad::Linear { weight, bias } => {
                vec![weight.as_slice().unwrap(), bias.as_slice().unwrap()]
            }
            LayerGrad::BatchNorm { gamma, beta } => {
                vec![gamma.as_slice().unwrap(), beta.as_slice().unwrap()]
            }
            LayerGrad::None => Vec::new(),
        }
    }
}

impl<A: Scalar> Layer<A> {
    pub fn forward(&mut self, x: &Array2<A>, mode: Mode) -> (Array2<A>, Option<LayerCache<A>>) {
        match (self, mode) {
            (Layer::Linear(l), Mode::Train) => {
                (l.forward(x), Some(LayerCache::Linear { input: x.clone() }))
            }
            (Layer::Linear(l), Mode::Eval) => (l.forward(x), None),
            (Layer::BatchNorm(bn), Mode::Train) => {
                let (y, cache) = bn.forward_train(x);
                (y, Some(cache))
            }
            (Layer::BatchNorm(bn), Mode::Eval) => (bn.forward_eval(x), None),
            (Layer::Relu, Mode::Train) => {
                let mask = x.mapv(|v| v > A::zero());
                (x.mapv(|v| v.max(A::zero())), Some(LayerCache::Relu { mask }))
            }
            (Layer::Relu, Mode::Eval) => (x.mapv(|v| v.max(A::zero())), None),
        }
    }

    pub fn infer(&self, x: &Array2<A>) -> Array2<A> {
        match self {
            Layer::Linear(l) => l.forward(x),
            Layer::BatchNorm(bn) => bn.forward_eval(x),
            Layer::Relu => x.mapv(|v| v.max(A::zero())),
        }
    }

    /// Returns `(dL/dx, parameter gradient)` given `dL/dy`.
    pub fn backward(&self, cache: &LayerCache<A>, grad_out: &Array2<A>) -> (Array2<A>, LayerGrad<A>) {
        match (self, cache) {
            (Layer::Linear(l), LayerCache::Linear { input }) => {
                let gw = grad_out.t().dot(input);
                let gb = grad_out.sum_axis(Axis(0));
                let gx = grad_out.dot(&l.weight);
                (gx, LayerGrad::Linear { weight: gw, bias: gb })
            }
            (Layer::BatchNorm(bn), LayerCache::BatchNorm { x_hat, inv_std }) => {
                let bf: A = cst(grad_out.nrows() as f64);
                let gbeta = grad_out.sum_axis(Axis(0));
                let ggamma = (grad_out * x_hat).sum_axis(Axis(0));
                let gx_hat = grad_out * &bn.gamma;
                let mean_g = gx_hat.sum_axis(Axis(0)) / bf;
                let mean_gx = (&gx_hat * x_hat).sum_axis(Axis(0)) / bf;
                let mut gx = gx_hat - &mean_g;
                gx -= &(x_hat * &mean_gx);
                gx *= inv_std;
                (gx, LayerGrad::BatchNorm { gamma: ggamma, beta: gbeta })
            }
            (Layer::Relu, LayerCache::Relu { mask }) => {
                let gx = Zip::from(grad_out)
                    .and(mask)
                    .map_collect(|&g, &m| if m { g } else { A::zero() });
                (gx, LayerGrad::None)
            }
            _ => panic!("cache does not belong to this layer"),
        }
    }

    pub fn zero_grad(&self) -> LayerGrad<A> {
        match self {
            Layer::Linear(l) => LayerGrad::Linear {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array1::zeros(l.bias.len()),
            },
            Layer::BatchNorm(bn) => LayerGrad::BatchNorm {
                gamma: Array1::zeros(bn.width()),
                beta: Array1::zeros(bn.width()),
            },
            Layer::Relu => LayerGrad::None,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Linear(l) => l.weight.len() + l.bias.len(),
            Layer::BatchNorm(bn) => 2 * bn.width(),
            Layer::Relu => 0,
        }
    }
}
