//! The trainable reducer: an encoder (linear, factorized linear or MLP)
//! followed by a projector MLP that is only used during training.
//!
//! Everything is generic over the float type so the same code runs in
//! `f32` for training and in `f64` for finite-difference checks.

mod checkpoint_io;
mod layers;

use ndarray::{s, Array2};
use ndarray::NdFloat;
use num_traits::FromPrimitive;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::FeatureMatrix;
use crate::error::{check_dim, invalid_arg, Error, Result};

pub use layers::{BatchNorm, Layer, LayerCache, LayerGrad, Linear, BN_EPS, BN_MOMENTUM};

pub trait Scalar: NdFloat + FromPrimitive {}

impl<T: NdFloat + FromPrimitive> Scalar for T {}

#[inline]
pub(crate) fn cst<A: Scalar>(v: f64) -> A {
    A::from_f64(v).expect("constant representable in the float type")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const DEFAULT_PROJECTOR_LAYERS: usize = 2;
pub const DEFAULT_PROJECTOR_WIDTH: usize = 8192;
pub const DEFAULT_HIDDEN: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Linear,
    /// `layers` (Linear, BN) pairs; intermediate width `hidden`.
    Factorized { layers: usize, hidden: usize },
    /// `layers` (Linear, BN, ReLU) triplets of width `hidden`, then Linear.
    Mlp { layers: usize, hidden: usize },
}

impl EncoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::Linear => "linear",
            EncoderKind::Factorized { .. } => "factorized",
            EncoderKind::Mlp { .. } => "mlp",
        }
    }
}

/// Plain stack of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<A> {
    pub layers: Vec<Layer<A>>,
}

impl<A: Scalar> Sequential<A> {
    fn forward(&mut self, x: &Array2<A>, mode: Mode) -> (Array2<A>, Vec<Option<LayerCache<A>>>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            let (y, cache) = layer.forward(&cur, mode);
            caches.push(cache);
            cur = y;
        }
        (cur, caches)
    }

    fn infer(&self, x: &Array2<A>) -> Array2<A> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.infer(&cur);
        }
        cur
    }

    fn backward(&self, caches: &[Option<LayerCache<A>>], grad: &Array2<A>) -> (Array2<A>, Vec<LayerGrad<A>>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let cache = cache.as_ref().expect("train-mode cache");
            let (gx, pg) = layer.backward(cache, &g);
            grads.push(pg);
            g = gx;
        }
        grads.reverse();
        (g, grads)
    }

    fn zero_grads(&self) -> Vec<LayerGrad<A>> {
        self.layers.iter().map(Layer::zero_grad).collect()
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn cast<B: Scalar>(&self) -> Sequential<B> {
        let c = |a: &ndarray::Array1<A>| a.mapv(|v| cst::<B>(v.to_f64().unwrap()));
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Linear(lin) => Layer::Linear(Linear {
                    weight: lin.weight.mapv(|v| cst::<B>(v.to_f64().unwrap())),
                    bias: c(&lin.bias),
                }),
                Layer::BatchNorm(bn) => Layer::BatchNorm(BatchNorm {
                    gamma: c(&bn.gamma),
                    beta: c(&bn.beta),
                    running_mean: c(&bn.running_mean),
                    running_var: c(&bn.running_var),
                    eps: cst(bn.eps.to_f64().unwrap()),
                    momentum: cst(bn.momentum.to_f64().unwrap()),
                }),
                Layer::Relu => Layer::Relu,
            })
            .collect();
        Sequential { layers }
    }
}

/// The reduction function kept after training.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<A> {
    kind: EncoderKind,
    d_in: usize,
    d_out: usize,
    net: Sequential<A>,
}

/// Training-only head mapping the reduced vector to the loss space.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorModel<A> {
    hidden_layers: usize,
    width: usize,
    net: Sequential<A>,
}

fn mlp_stack<A: Scalar>(dims: &[usize], relu: bool, final_plain: bool, rng: &mut ChaCha8Rng) -> Vec<Layer<A>> {
    let mut layers = Vec::new();
    let blocks = dims.len() - 1;
    for i in 0..blocks {
        layers.push(Layer::Linear(Linear::glorot(dims[i], dims[i + 1], rng)));
        if final_plain && i + 1 == blocks {
            break;
        }
        layers.push(Layer::BatchNorm(BatchNorm::new(dims[i + 1])));
        if relu {
            layers.push(Layer::Relu);
        }
    }
    layers
}

impl<A: Scalar> EncoderModel<A> {
    pub fn new(kind: EncoderKind, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return invalid_arg("encoder dimensions must be positive");
        }
        let layers = match kind {
            EncoderKind::Linear => vec![Layer::Linear(Linear::glorot(d_in, d_out, rng))],
            EncoderKind::Factorized { layers, hidden } => {
                if layers == 0 || hidden == 0 {
                    return invalid_arg("factorized encoder needs at least one layer");
                }
                let mut dims = vec![d_in];
                dims.extend(std::iter::repeat_n(hidden, layers - 1));
                dims.push(d_out);
                mlp_stack(&dims, false, false, rng)
            }
            EncoderKind::Mlp { layers, hidden } => {
                if layers == 0 || hidden == 0 {
                    return invalid_arg("MLP encoder needs at least one hidden layer");
                }
                let mut dims = vec![d_in];
                dims.extend(std::iter::repeat_n(hidden, layers));
                dims.push(d_out);
                mlp_stack(&dims, true, true, rng)
            }
        };
        Ok(Self {
            kind,
            d_in,
            d_out,
            net: Sequential { layers },
        })
    }

    /// A single affine map `z = W x + b`.
    pub fn from_linear(weight: Array2<A>, bias: ndarray::Array1<A>) -> Result<Self> {
        let (d_out, d_in) = weight.dim();
        check_dim(d_out, bias.len())?;
        if d_out == 0 || d_in == 0 {
            return invalid_arg("empty weight matrix");
        }
        Ok(Self {
            kind: EncoderKind::Linear,
            d_in,
            d_out,
            net: Sequential {
                layers: vec![Layer::Linear(Linear { weight, bias })],
            },
        })
    }

    pub(crate) fn from_parts(kind: EncoderKind, d_in: usize, d_out: usize, layers: Vec<Layer<A>>) -> Self {
        Self {
            kind,
            d_in,
            d_out,
            net: Sequential { layers },
        }
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    pub fn layers(&self) -> &[Layer<A>] {
        &self.net.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<A>] {
        &mut self.net.layers
    }

    /// Trainable parameters (BN running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Eval-mode forward of a batch.
    pub fn infer(&self, x: &Array2<A>) -> Result<Array2<A>> {
        check_dim(self.d_in, x.ncols())?;
        Ok(self.net.infer(x))
    }

    pub fn cast<B: Scalar>(&self) -> EncoderModel<B> {
        EncoderModel {
            kind: self.kind,
            d_in: self.d_in,
            d_out: self.d_out,
            net: self.net.cast(),
        }
    }

    /// Folds an eval-mode stack of (Linear, BN) pairs into one Linear layer.
    pub fn collapse_factorized(&self) -> Result<EncoderModel<A>> {
        if !matches!(self.kind, EncoderKind::Factorized { .. } | EncoderKind::Linear) {
            return invalid_arg("mlp encoder is not collapsible (contains ReLU)");
        }
        // running affine map in f64: z = w x + b
        let mut w = Array2::<f64>::eye(self.d_in);
        let mut b = ndarray::Array1::<f64>::zeros(self.d_in);
        for layer in &self.net.layers {
            match layer {
                Layer::Linear(l) => {
                    let lw = l.weight.mapv(|v| v.to_f64().unwrap());
                    b = lw.dot(&b) + l.bias.mapv(|v| v.to_f64().unwrap());
                    w = lw.dot(&w);
                }
                Layer::BatchNorm(bn) => {
                    let (scale, shift) = bn.eval_affine();
                    for (r, (&sc, &sh)) in scale.iter().zip(shift.iter()).enumerate() {
                        let sc = sc.to_f64().unwrap();
                        w.row_mut(r).mapv_inplace(|v| v * sc);
                        b[r] = b[r] * sc + sh.to_f64().unwrap();
                    }
                }
                Layer::Relu => return invalid_arg("mlp encoder is not collapsible (contains ReLU)"),
            }
        }
        EncoderModel::from_linear(w.mapv(cst), b.mapv(cst))
    }
}

impl<A: Scalar> ProjectorModel<A> {
    pub fn new(d_in: usize, hidden_layers: usize, width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if width < d_in {
            return invalid_arg(format!("projector width {width} is smaller than encoder output {d_in}"));
        }
        let mut dims = vec![d_in];
        dims.extend(std::iter::repeat_n(width, hidden_layers + 1));
        Ok(Self {
            hidden_layers,
            width,
            net: Sequential {
                layers: mlp_stack(&dims, true, true, rng),
            },
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn hidden_layers(&self) -> usize {
        self.hidden_layers
    }

    pub fn layers(&self) -> &[Layer<A>] {
        &self.net.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<A>] {
        &mut self.net.layers
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }
}

/// Encoder and projector trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPair<A> {
    pub encoder: EncoderModel<A>,
    pub projector: ProjectorModel<A>,
    version: u64,
}

/// Per-layer parameter gradients for both halves of a [`ModelPair`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<A> {
    pub encoder: Vec<LayerGrad<A>>,
    pub projector: Vec<LayerGrad<A>>,
}

impl<A: Scalar> GradientSet<A> {
    pub fn add_assign(&mut self, other: &GradientSet<A>) {
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            a.add_assign(b);
        }
        for (a, b) in self.projector.iter_mut().zip(&other.projector) {
            a.add_assign(b);
        }
    }

    /// Every gradient array, encoder first, in parameter order.
    pub fn arrays(&self) -> Vec<&[A]> {
        self.encoder
            .iter()
            .chain(&self.projector)
            .flat_map(LayerGrad::arrays)
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_zero()))
    }
}

/// Intermediates of a forward pass, tied to the parameter version that
/// produced them.
#[derive(Clone, Debug)]
pub struct ForwardCache<A> {
    version: u64,
    mode: Mode,
    encoder: Vec<Option<LayerCache<A>>>,
    projector: Vec<Option<LayerCache<A>>>,
}

pub struct ForwardOutput<A> {
    /// Reduced vectors, `B x d`.
    pub z: Array2<A>,
    /// Projector output, `B x d'`.
    pub z_hat: Array2<A>,
    pub cache: ForwardCache<A>,
}

/// A mutable view of one parameter array during an optimizer step.
pub struct ParamSlot<'a, A> {
    pub values: &'a mut [A],
    pub grad: &'a [A],
    /// Weight matrices get weight decay; biases and BN parameters do not.
    pub is_weight: bool,
}

/// Builds the encoder and projector with Glorot-uniform weights drawn from
/// a ChaCha8 stream seeded by `seed` (encoder first).
pub fn init_model<A: Scalar>(
    kind: EncoderKind,
    d_in: usize,
    d_out: usize,
    projector_layers: usize,
    projector_width: usize,
    seed: u64,
) -> Result<ModelPair<A>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = EncoderModel::new(kind, d_in, d_out, &mut rng)?;
    let projector = ProjectorModel::new(d_out, projector_layers, projector_width, &mut rng)?;
    Ok(ModelPair {
        encoder,
        projector,
        version: 0,
    })
}

impl<A: Scalar> ModelPair<A> {
    pub fn from_parts(encoder: EncoderModel<A>, projector: ProjectorModel<A>) -> Result<Self> {
        check_dim(encoder.output_dim(), projector.net.layers.iter().find_map(|l| match l {
            Layer::Linear(lin) => Some(lin.input_dim()),
            _ => None,
        }).unwrap_or(0))?;
        Ok(Self {
            encoder,
            projector,
            version: 0,
        })
    }

    pub fn forward(&mut self, x: &Array2<A>, mode: Mode) -> Result<ForwardOutput<A>> {
        check_dim(self.encoder.d_in, x.ncols())?;
        if mode == Mode::Train && x.nrows() < 2 {
            return invalid_arg("train-mode forward needs a batch of at least 2 rows");
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input batch".into()));
        }
        let (z, enc_cache) = self.encoder.net.forward(x, mode);
        let (z_hat, proj_cache) = self.projector.net.forward(&z, mode);
        Ok(ForwardOutput {
            z,
            z_hat,
            cache: ForwardCache {
                version: self.version,
                mode,
                encoder: enc_cache,
                projector: proj_cache,
            },
        })
    }

    /// Exact parameter gradients given `dL/dz_hat`.
    pub fn backward(&self, cache: &ForwardCache<A>, grad_z_hat: &Array2<A>) -> Result<GradientSet<A>> {
        if cache.mode != Mode::Train {
            return invalid_arg("backward needs the cache of a train-mode forward");
        }
        if cache.version != self.version {
            return invalid_arg("stale cache: parameters changed since the forward pass");
        }
        check_dim(self.projector.width, grad_z_hat.ncols())?;
        let (gz, projector) = self.projector.net.backward(&cache.projector, grad_z_hat);
        let (_, encoder) = self.encoder.net.backward(&cache.encoder, &gz);
        Ok(GradientSet { encoder, projector })
    }

    pub fn zero_grads(&self) -> GradientSet<A> {
        GradientSet {
            encoder: self.encoder.net.zero_grads(),
            projector: self.projector.net.zero_grads(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.projector.param_count()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Visits every trainable array alongside its gradient. Marks the
    /// parameters as modified, so older caches become stale.
    pub fn for_each_param(&mut self, grads: &GradientSet<A>, mut f: impl FnMut(usize, ParamSlot<'_, A>)) {
        self.version += 1;
        let mut slot = 0;
        let pairs = self
            .encoder
            .net
            .layers
            .iter_mut()
            .zip(&grads.encoder)
            .chain(self.projector.net.layers.iter_mut().zip(&grads.projector));
        for (layer, grad) in pairs {
            match (layer, grad) {
                (Layer::Linear(l), LayerGrad::Linear { weight, bias }) => {
                    f(slot, ParamSlot {
                        values: l.weight.as_slice_mut().unwrap(),
                        grad: weight.as_slice().unwrap(),
                        is_weight: true,
                    });
                    f(slot + 1, ParamSlot {
                        values: l.bias.as_slice_mut().unwrap(),
                        grad: bias.as_slice().unwrap(),
                        is_weight: false,
                    });
                    slot += 2;
                }
                (Layer::BatchNorm(bn), LayerGrad::BatchNorm { gamma, beta }) => {
                    f(slot, ParamSlot {
                        values: bn.gamma.as_slice_mut().unwrap(),
                        grad: gamma.as_slice().unwrap(),
                        is_weight: false,
                    });
                    f(slot + 1, ParamSlot {
                        values: bn.beta.as_slice_mut().unwrap(),
                        grad: beta.as_slice().unwrap(),
                        is_weight: false,
                    });
                    slot += 2;
                }
                (Layer::Relu, LayerGrad::None) => {}
                _ => panic!("gradient layout does not match the model"),
            }
        }
    }

    /// Flattened copy of every trainable value (encoder first).
    pub fn flat_params(&self) -> Vec<A> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in self.encoder.net.layers.iter().chain(&self.projector.net.layers) {
            match layer {
                Layer::Linear(l) => {
                    out.extend(l.weight.iter().copied());
                    out.extend(l.bias.iter().copied());
                }
                Layer::BatchNorm(bn) => {
                    out.extend(bn.gamma.iter().copied());
                    out.extend(bn.beta.iter().copied());
                }
                Layer::Relu => {}
            }
        }
        out
    }

    /// Overwrites one trainable value by its flat index.
    pub fn set_flat_param(&mut self, index: usize, value: A) {
        self.version += 1;
        let mut offset = 0;
        for layer in self.encoder.net.layers.iter_mut().chain(self.projector.net.layers.iter_mut()) {
            let arrays: Vec<&mut [A]> = match layer {
                Layer::Linear(l) => vec![l.weight.as_slice_mut().unwrap(), l.bias.as_slice_mut().unwrap()],
                Layer::BatchNorm(bn) => vec![bn.gamma.as_slice_mut().unwrap(), bn.beta.as_slice_mut().unwrap()],
                Layer::Relu => Vec::new(),
            };
            for arr in arrays {
                if index < offset + arr.len() {
                    arr[index - offset] = value;
                    return;
                }
                offset += arr.len();
            }
        }
        panic!("parameter index {index} out of range");
    }

    pub fn cast<B: Scalar>(&self) -> ModelPair<B> {
        ModelPair {
            encoder: self.encoder.cast(),
            projector: ProjectorModel {
                hidden_layers: self.projector.hidden_layers,
                width: self.projector.width,
                net: self.projector.net.cast(),
            },
            version: 0,
        }
    }
}

const ENCODE_BLOCK: usize = 1024;

/// Reduces every row of `data` with the eval-mode encoder.
pub fn encode(model: &EncoderModel<f32>, data: &FeatureMatrix) -> Result<FeatureMatrix> {
    check_dim(model.input_dim(), data.dim())?;
    let n = data.n();
    let d = model.output_dim();
    let blocks: Vec<Array2<f32>> = (0..n.div_ceil(ENCODE_BLOCK))
        .into_par_iter()
        .map(|b| {
            let start = b * ENCODE_BLOCK;
            let end = (start + ENCODE_BLOCK).min(n);
            model.net.infer(&data.view().slice(s![start..end, ..]).to_owned())
        })
        .collect();
    let mut out = Vec::with_capacity(n * d);
    for block in blocks {
        out.extend(block.iter().copied());
    }
    FeatureMatrix::from_vec(n, d, out)
}

#[cfg(test)]
mod tests;
