//! The training loop: sample neighbor (or noisy) pairs, run both branches
//! through encoder and projector, take a loss and an Adam step.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;

use crate::dataset::FeatureMatrix;
use crate::encoder::{
    init_model, EncoderKind, EncoderModel, GradientSet, ModelPair, Mode, DEFAULT_PROJECTOR_LAYERS,
    DEFAULT_PROJECTOR_WIDTH,
};
use crate::error::{check_dim, invalid_arg, Error, Result};
use crate::knn::{brute_force_knn_blocked, pq_approx_knn, GaussianPairs, NeighborPairs, NeighborTable, PairBatch, DEFAULT_BLOCK_SIZE};
use crate::loss::{barlow_twins_loss, contrastive_loss, mse_loss, LossKind, LossReport, DEFAULT_LAMBDA, DEFAULT_MARGIN};
use crate::optim::{adam_step, AdamConfig, OptimizerState, DEFAULT_BETAS, DEFAULT_ADAM_EPS, DEFAULT_LR, DEFAULT_WEIGHT_DECAY};
use crate::quantizer::{train_pq, DEFAULT_KMEANS_ITERS};

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 1024;
pub const DEFAULT_NOISE_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairKind {
    /// Pairs from the `k` nearest neighbors of each training point.
    Knn,
    /// `(x, x + eps)` with `eps ~ N(0, sigma^2 I)`.
    Gaussian { sigma: f64 },
}

/// How the neighbor table is mined when none is supplied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NeighborMode {
    Exact,
    /// Search over PQ codes with `m` sub-quantizers of `k` centroids.
    Pq { m: usize, k: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub k: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub loss_kind: LossKind,
    pub pair_kind: PairKind,
    pub neighbor_mode: NeighborMode,
    pub seed: u64,
    pub center: bool,
    pub encoder: EncoderKind,
    /// Output dimension `d`.
    pub d: usize,
    pub projector_layers: usize,
    pub projector_width: usize,
    pub margin: f64,
    /// Cosine decay of the learning rate over epochs.
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            k: crate::knn::DEFAULT_K_FEATURES,
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            lambda: DEFAULT_LAMBDA,
            loss_kind: LossKind::BarlowTwins,
            pair_kind: PairKind::Knn,
            neighbor_mode: NeighborMode::Exact,
            seed: 0,
            center: false,
            encoder: EncoderKind::Linear,
            d: 128,
            projector_layers: DEFAULT_PROJECTOR_LAYERS,
            projector_width: DEFAULT_PROJECTOR_WIDTH,
            margin: DEFAULT_MARGIN,
            cosine: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.epochs == 0 {
            return invalid_arg("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return invalid_arg("batch size must be at least 2");
        }
        // lr = 0 is allowed: it freezes the trainable parameters.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return invalid_arg(format!("learning rate must be non-negative, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return invalid_arg("weight decay must be non-negative");
        }
        if self.d == 0 || self.projector_width == 0 {
            return invalid_arg("output and projector widths must be positive");
        }
        if self.pair_kind == PairKind::Knn && self.k == 0 {
            return invalid_arg("k must be at least 1");
        }
        if self.loss_kind == LossKind::Mse && self.projector_width != input_dim {
            return invalid_arg(format!(
                "mse reconstructs the input: projector width {} must equal input dimension {input_dim}",
                self.projector_width
            ));
        }
        Ok(())
    }

    fn learning_rate(&self, epoch: usize) -> f64 {
        if self.cosine && self.epochs > 1 {
            let t = epoch as f64 / self.epochs as f64;
            0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
        } else {
            self.lr
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub invariance_term: f64,
    pub redundancy_term: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn total_wall_ms(&self) -> u64 {
        self.epochs.iter().map(|e| e.wall_ms).sum()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epoch,loss,invariance_term,redundancy_term,wall_ms")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.epoch, e.loss, e.invariance_term, e.redundancy_term, e.wall_ms
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Mines the neighbor table the config asks for.
pub fn build_neighbors(data: &FeatureMatrix, config: &TrainConfig) -> Result<NeighborTable> {
    match config.neighbor_mode {
        NeighborMode::Exact => brute_force_knn_blocked(data, config.k, DEFAULT_BLOCK_SIZE),
        NeighborMode::Pq { m, k } => {
            let pq = train_pq(data, m, k, DEFAULT_KMEANS_ITERS, config.seed)?;
            pq_approx_knn(data, config.k, &pq.codebook)
        }
    }
}

/// Trains with a freshly mined neighbor table (when pairs come from kNN).
pub fn train(data: &FeatureMatrix, config: &TrainConfig) -> Result<(EncoderModel<f32>, TrainLog)> {
    config.validate(data.dim())?;
    match config.pair_kind {
        PairKind::Knn => {
            let table = build_neighbors(data, config)?;
            train_with_neighbors(data, config, Some(&table))
        }
        PairKind::Gaussian { .. } => train_with_neighbors(data, config, None),
    }
}

enum Sampler<'a> {
    Knn(NeighborPairs<'a>),
    Gaussian(GaussianPairs<'a>),
}

impl Sampler<'_> {
    fn epoch(&mut self) -> Box<dyn Iterator<Item = PairBatch> + '_> {
        match self {
            Sampler::Knn(s) => Box::new(s.epoch()),
            Sampler::Gaussian(s) => Box::new(s.epoch()),
        }
    }
}

// Sampler and model streams are decorrelated from the init stream.
const SAMPLER_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Trains on pairs drawn from `table` (required for kNN pairs, ignored for
/// Gaussian pairs). Deterministic for a fixed seed.
pub fn train_with_neighbors(
    data: &FeatureMatrix,
    config: &TrainConfig,
    table: Option<&NeighborTable>,
) -> Result<(EncoderModel<f32>, TrainLog)> {
    config.validate(data.dim())?;
    if data.n() < 2 {
        return invalid_arg("need at least 2 training points");
    }
    let sampler_seed = config.seed ^ SAMPLER_SEED_SALT;
    let mut sampler = match (config.pair_kind, table) {
        (PairKind::Knn, Some(t)) => Sampler::Knn(NeighborPairs::new(data, t, config.batch_size, sampler_seed)?),
        (PairKind::Knn, None) => return invalid_arg("knn pairs need a neighbor table"),
        (PairKind::Gaussian { sigma }, _) => {
            Sampler::Gaussian(GaussianPairs::new(data, sigma, config.batch_size, sampler_seed)?)
        }
    };
    if let Some(t) = table {
        check_dim(data.n(), t.n())?;
    }

    let mut model: ModelPair<f32> = init_model(
        config.encoder,
        data.dim(),
        config.d,
        config.projector_layers,
        config.projector_width,
        config.seed,
    )?;
    let mut state = OptimizerState::new();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let adam = AdamConfig {
            lr: config.learning_rate(epoch),
            weight_decay: config.weight_decay,
            betas: DEFAULT_BETAS,
            eps: DEFAULT_ADAM_EPS,
        };
        let mut sum = LossReport::default();
        let (mut batches, mut rows) = (0usize, 0usize);
        for (index, batch) in sampler.epoch().enumerate() {
            batches += 1;
            rows += batch.len();
            let (report, grads) = batch_objective(
                &mut model,
                &batch.a,
                &batch.b,
                config.loss_kind,
                config.lambda,
                config.center,
                config.margin,
            )
            .map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} at epoch {} batch {index}", epoch + 1))
                }
                other => other,
            })?;
            if grads.arrays().iter().any(|a| a.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("gradient at epoch {} batch {index}", epoch + 1)));
            }
            adam_step(&mut model, &grads, &mut state, &adam);
            sum.total += report.total;
            sum.invariance_term += report.invariance_term;
            sum.redundancy_term += report.redundancy_term;
        }
        debug_assert_eq!(rows, data.n(), "every anchor once per epoch");
        let nb = batches as f64;
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: sum.total / nb,
            invariance_term: sum.invariance_term / nb,
            redundancy_term: sum.redundancy_term / nb,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {}/{} loss {:.6} (inv {:.6}, red {:.6}) {} ms",
            entry.epoch,
            config.epochs,
            entry.loss,
            entry.invariance_term,
            entry.redundancy_term,
            entry.wall_ms
        );
        log.epochs.push(entry);
    }
    Ok((model.encoder, log))
}

/// Loss on one pair batch and the parameter gradients summed over both
/// branches. Updates BN running statistics but no trainable parameter.
pub fn batch_objective<A: crate::encoder::Scalar>(
    model: &mut ModelPair<A>,
    a: &Array2<A>,
    b: &Array2<A>,
    loss_kind: LossKind,
    lambda: f64,
    center: bool,
    margin: f64,
) -> Result<(LossReport, GradientSet<A>)> {
    let out_a = model.forward(a, Mode::Train)?;
    if loss_kind == LossKind::Mse {
        let (loss, g) = mse_loss(&out_a.z_hat, b)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("mse loss".into()));
        }
        let grads = model.backward(&out_a.cache, &g)?;
        return Ok((
            LossReport {
                total: loss,
                invariance_term: loss,
                redundancy_term: 0.0,
                lambda: 0.0,
            },
            grads,
        ));
    }
    let out_b = model.forward(b, Mode::Train)?;
    let (report, ga, gb) = match loss_kind {
        LossKind::BarlowTwins => barlow_twins_loss(&out_a.z_hat, &out_b.z_hat, lambda, center)?,
        LossKind::Contrastive => contrastive_loss(&out_a.z_hat, &out_b.z_hat, margin)?,
        LossKind::Mse => unreachable!(),
    };
    let mut grads = model.backward(&out_a.cache, &ga)?;
    grads.add_assign(&model.backward(&out_b.cache, &gb)?);
    Ok((report, grads))
}
