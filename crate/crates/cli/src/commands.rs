//! Subcommand arguments and their implementations.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use tldr_core::checkpoint::{model_kind, ModelKind};
use tldr_core::dataset::{write_fvecs, write_ivecs, FeatureMatrix};
use tldr_core::encoder::{encode as encode_rows, EncoderKind, EncoderModel, DEFAULT_HIDDEN, DEFAULT_PROJECTOR_LAYERS, DEFAULT_PROJECTOR_WIDTH};
use tldr_core::eval::{knn_classify, mean_average_precision, ndcg_at_10, rankings, read_protocol, recall_at};
use tldr_core::knn::{brute_force_knn_blocked, pq_approx_knn, NeighborTable, DEFAULT_BLOCK_SIZE, DEFAULT_K_FEATURES};
use tldr_core::loss::{LossKind, DEFAULT_LAMBDA, DEFAULT_MARGIN};
use tldr_core::optim::{DEFAULT_LR, DEFAULT_WEIGHT_DECAY};
use tldr_core::pca::{fit_pca, PcaModel, DEFAULT_WHITENING_POWER};
use tldr_core::quantizer::{
    adc_distance_table, adc_search, pq_decode, pq_encode, quantization_errors, train_pq, PQCodebook, PQCodes,
    DEFAULT_K, DEFAULT_KMEANS_ITERS,
};
use tldr_core::synth::{gen_mixture, read_idx_ubyte, MixtureSpec};
use tldr_core::trainer::{
    build_neighbors, train_with_neighbors, NeighborMode, PairKind, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS,
    DEFAULT_NOISE_STD,
};

use crate::config::ConfigFile;
use crate::error::{usage, CliResult};
use crate::io::{emit, load_features, load_labels, save_labels, write_csv, Metric};

// ---------------------------------------------------------------- knn

#[derive(Args, Debug)]
pub struct KnnArgs {
    /// Training vectors (.fvecs or .csv).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Neighbors per point.
    #[arg(long)]
    k: Option<usize>,
    /// exact | pq
    #[arg(long)]
    mode: Option<String>,
    /// PQ codebook for `--mode pq`.
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Output neighbor table (.ivecs).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Tile size of the exact search.
    #[arg(long)]
    block_size: Option<usize>,
}

pub fn knn(a: KnnArgs, cfg: &ConfigFile) -> CliResult<()> {
    let input = cfg.input(a.input, "input")?;
    let output = cfg.req_path(a.output, "output")?;
    let k = cfg.or(a.k, "k", DEFAULT_K_FEATURES)?;
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let mode = cfg.or(a.mode, "mode", "exact".to_string())?;
    let codebook = match mode.as_str() {
        "exact" => None,
        "pq" => Some(
            cfg.opt_input(a.codebook, "codebook")?
                .ok_or_else(|| usage("--mode pq needs --codebook"))?,
        ),
        other => return Err(usage(format!("unknown mode '{other}' (exact|pq)"))),
    };
    let block = cfg.or(a.block_size, "block-size", DEFAULT_BLOCK_SIZE)?;
    let data = load_features(&input)?;
    let started = Instant::now();
    let table = match codebook {
        None => brute_force_knn_blocked(&data, k, block)?,
        Some(p) => pq_approx_knn(&data, k, &PQCodebook::load(p)?)?,
    };
    table.save_ivecs(&output)?;
    log::info!("{}-NN table over {} points in {} ms", k, data.n(), started.elapsed().as_millis());
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// tldr | tldr-g | mse | contrastive | pca
    #[arg(long)]
    method: Option<String>,
    /// linear | factorized | mlp
    #[arg(long)]
    encoder: Option<String>,
    /// Linear+BN pairs (factorized) or hidden blocks (mlp).
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden width of factorized and mlp encoders.
    #[arg(long)]
    hidden: Option<usize>,
    /// Output dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Projector width (mse forces the input dimension).
    #[arg(long)]
    dprime: Option<usize>,
    /// Hidden projector layers.
    #[arg(long)]
    projector_layers: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Noise std of tldr-g pairs.
    #[arg(long)]
    sigma: Option<f64>,
    /// Contrastive margin.
    #[arg(long)]
    margin: Option<f64>,
    /// Mean-center projector outputs before the cross-correlation.
    #[arg(long)]
    center: bool,
    /// Cosine learning-rate decay.
    #[arg(long)]
    cosine: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Training vectors (.fvecs or .csv).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Precomputed neighbor table (.ivecs); mined otherwise.
    #[arg(long)]
    neighbors: Option<PathBuf>,
    /// exact | pq, when mining neighbors here.
    #[arg(long)]
    neighbor_mode: Option<String>,
    /// Sub-quantizers for `--neighbor-mode pq`.
    #[arg(long)]
    pq_m: Option<usize>,
    /// Centroids per sub-quantizer for `--neighbor-mode pq`.
    #[arg(long)]
    pq_k: Option<usize>,
    /// PCA whitening power.
    #[arg(long)]
    whitening: Option<f64>,
    /// Fold a factorized encoder into one linear layer before saving.
    #[arg(long)]
    collapse: bool,
    /// Output checkpoint.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Training log CSV (default: `<output>.log.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
}

fn encoder_kind(a: &TrainArgs, cfg: &ConfigFile) -> CliResult<EncoderKind> {
    let name = cfg.or(a.encoder.clone(), "encoder", "linear".to_string())?;
    let layers = cfg.opt(a.layers, "layers")?;
    let hidden = cfg.or(a.hidden, "hidden", DEFAULT_HIDDEN)?;
    Ok(match name.as_str() {
        "linear" => EncoderKind::Linear,
        "factorized" => EncoderKind::Factorized {
            layers: layers.unwrap_or(2),
            hidden,
        },
        "mlp" => EncoderKind::Mlp {
            layers: layers.unwrap_or(1),
            hidden,
        },
        other => return Err(usage(format!("unknown encoder '{other}' (linear|factorized|mlp)"))),
    })
}

fn load_table(path: &PathBuf, n: usize, k: usize) -> CliResult<NeighborTable> {
    let table = NeighborTable::load_ivecs(path)?;
    if table.n() != n {
        return Err(usage(format!("neighbor table has {} rows, input has {n}", table.n())));
    }
    if table.k() < k {
        return Err(usage(format!("neighbor table has k = {}, asked for {k}", table.k())));
    }
    if table.k() == k {
        return Ok(table);
    }
    let rows: Vec<u32> = (0..n).flat_map(|i| table.row(i)[..k].to_vec()).collect();
    Ok(NeighborTable::new(n, k, rows)?)
}

pub fn train(a: TrainArgs, cfg: &ConfigFile) -> CliResult<()> {
    let method = cfg.or(a.method.clone(), "method", "tldr".to_string())?;
    let input = cfg.input(a.input.clone(), "input")?;
    let output = cfg.req_path(a.output.clone(), "output")?;
    let d = cfg.req(a.d, "d")?;
    let seed = cfg.or(a.seed, "seed", 0)?;

    if method == "pca" {
        let alpha = cfg.or(a.whitening, "whitening", DEFAULT_WHITENING_POWER)?;
        let data = load_features(&input)?;
        let started = Instant::now();
        let model = fit_pca(&data, d)?.with_whitening_power(alpha)?;
        model.save(&output)?;
        eprintln!("pca: d={d} orthonormality error {:.3e}, {} ms", model.orthonormality_error(), started.elapsed().as_millis());
        let variance: f64 = model.eigenvalues().iter().map(|&v| v as f64).sum();
        return emit(&[Metric::new("explained_variance", variance, d).param("method", "pca").param("whitening", alpha)]);
    }

    let (loss_kind, gaussian) = match method.as_str() {
        "tldr" => (LossKind::BarlowTwins, false),
        "tldr-g" => (LossKind::BarlowTwins, true),
        "mse" => (LossKind::Mse, false),
        "contrastive" => (LossKind::Contrastive, false),
        other => return Err(usage(format!("unknown method '{other}' (tldr|tldr-g|mse|contrastive|pca)"))),
    };
    let kind = encoder_kind(&a, cfg)?;
    let collapse = cfg.switch(a.collapse, "collapse")?;
    if collapse && matches!(kind, EncoderKind::Mlp { .. }) {
        return Err(usage("mlp not collapsible: --collapse needs a linear or factorized encoder"));
    }
    let neighbor_mode = match cfg.or(a.neighbor_mode.clone(), "neighbor-mode", "exact".to_string())?.as_str() {
        "exact" => NeighborMode::Exact,
        "pq" => NeighborMode::Pq {
            m: cfg.req(a.pq_m, "pq-m")?,
            k: cfg.or(a.pq_k, "pq-k", DEFAULT_K)?,
        },
        other => return Err(usage(format!("unknown neighbor mode '{other}' (exact|pq)"))),
    };
    let sigma = cfg.or(a.sigma, "sigma", DEFAULT_NOISE_STD)?;
    let data = load_features(&input)?;
    let dprime = if loss_kind == LossKind::Mse {
        match cfg.opt(a.dprime, "dprime")? {
            Some(w) if w != data.dim() => {
                return Err(usage(format!("mse reconstructs the input: --dprime must be {}", data.dim())))
            }
            _ => data.dim(),
        }
    } else {
        cfg.or(a.dprime, "dprime", DEFAULT_PROJECTOR_WIDTH)?
    };
    let config = TrainConfig {
        epochs: cfg.or(a.epochs, "epochs", DEFAULT_EPOCHS)?,
        batch_size: cfg.or(a.batch_size, "batch-size", DEFAULT_BATCH_SIZE)?,
        k: cfg.or(a.k, "k", DEFAULT_K_FEATURES)?,
        lr: cfg.or(a.lr, "lr", DEFAULT_LR)?,
        weight_decay: cfg.or(a.weight_decay, "weight-decay", DEFAULT_WEIGHT_DECAY)?,
        lambda: cfg.or(a.lambda, "lambda", DEFAULT_LAMBDA)?,
        loss_kind,
        pair_kind: if gaussian { PairKind::Gaussian { sigma } } else { PairKind::Knn },
        neighbor_mode,
        seed,
        center: cfg.switch(a.center, "center")?,
        encoder: kind,
        d,
        projector_layers: cfg.or(a.projector_layers, "projector-layers", DEFAULT_PROJECTOR_LAYERS)?,
        projector_width: dprime,
        margin: cfg.or(a.margin, "margin", DEFAULT_MARGIN)?,
        cosine: cfg.switch(a.cosine, "cosine")?,
    };
    config.validate(data.dim())?;
    if d > data.dim() {
        log::warn!("output dimension {d} exceeds input dimension {}", data.dim());
    }
    let log_path = cfg
        .path(a.log.clone(), "log")
        .unwrap_or_else(|| PathBuf::from(format!("{}.log.csv", output.display())));

    let started = Instant::now();
    let table = match (config.pair_kind, cfg.opt_input(a.neighbors.clone(), "neighbors")?) {
        (PairKind::Gaussian { .. }, _) => None,
        (PairKind::Knn, Some(p)) => Some(load_table(&p, data.n(), config.k)?),
        (PairKind::Knn, None) => Some(build_neighbors(&data, &config)?),
    };
    let (mut model, log) = train_with_neighbors(&data, &config, table.as_ref())?;
    if collapse {
        model = model.collapse_factorized()?;
    }
    model.save(&output)?;
    log.save_csv(&log_path)?;
    let final_loss = log.final_loss().unwrap_or(f64::NAN);
    eprintln!(
        "{method}: {} epochs, final loss {final_loss:.6}, wall time {} ms",
        config.epochs,
        started.elapsed().as_millis()
    );
    emit(&[Metric::new("final_loss", final_loss, d)
        .param("method", method)
        .param("encoder", kind.name())
        .param("epochs", config.epochs)
        .param("params", model.param_count())])
}

// ---------------------------------------------------------------- encode

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Encoder or PCA checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Vectors to reduce (.fvecs or .csv).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Reduced vectors (.fvecs).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Fold a factorized encoder into one linear map first.
    #[arg(long)]
    collapse: bool,
}

pub fn encode(a: EncodeArgs, cfg: &ConfigFile) -> CliResult<()> {
    let model_path = cfg.input(a.model, "model")?;
    let input = cfg.input(a.input, "input")?;
    let output = cfg.req_path(a.output, "output")?;
    let collapse = cfg.switch(a.collapse, "collapse")?;
    let data = load_features(&input)?;
    let reduced: FeatureMatrix = match model_kind(&model_path)? {
        ModelKind::Pca => {
            if collapse {
                return Err(usage("--collapse applies to encoder checkpoints, not PCA"));
            }
            PcaModel::load(&model_path)?.encode(&data)?
        }
        ModelKind::Encoder => {
            let mut model = EncoderModel::load(&model_path)?;
            if collapse {
                model = model.collapse_factorized()?;
            }
            encode_rows(&model, &data)?
        }
    };
    write_fvecs(&reduced, &output)?;
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Database vectors.
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// Query vectors (default: the gallery).
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Query protocol: `query_row | positives | ignores` per line.
    #[arg(long)]
    protocol: Option<PathBuf>,
    /// map | knn | recall | ndcg
    #[arg(long)]
    metric: Option<String>,
    /// Neighbors in the k'-NN vote.
    #[arg(long)]
    kprime: Option<usize>,
    /// Similarity-weighted k'-NN vote.
    #[arg(long)]
    weighted: bool,
    /// Cutoff of recall@R.
    #[arg(long)]
    recall_at: Option<usize>,
    #[arg(long)]
    gallery_labels: Option<PathBuf>,
    #[arg(long)]
    query_labels: Option<PathBuf>,
    /// Also write the metric as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn eval(a: EvalArgs, cfg: &ConfigFile) -> CliResult<()> {
    let metric = cfg.or(a.metric, "metric", "map".to_string())?;
    let gallery_path = cfg.input(a.gallery, "gallery")?;
    let queries_path = cfg.opt_input(a.queries, "queries")?;
    let csv = cfg.path(a.csv, "csv");

    let m = match metric.as_str() {
        "knn" => {
            let k_prime = cfg.or(a.kprime, "kprime", 20)?;
            let weighted = cfg.switch(a.weighted, "weighted")?;
            let gl = cfg
                .opt_input(a.gallery_labels, "gallery-labels")?
                .ok_or_else(|| usage("knn metric needs --gallery-labels"))?;
            let ql = cfg
                .opt_input(a.query_labels, "query-labels")?
                .ok_or_else(|| usage("knn metric needs --query-labels"))?;
            let queries_path = queries_path.ok_or_else(|| usage("knn metric needs --queries"))?;
            let gallery = load_features(&gallery_path)?;
            let queries = load_features(&queries_path)?;
            let acc = knn_classify(&gallery, &load_labels(&gl)?, &queries, &load_labels(&ql)?, k_prime, weighted)?;
            Metric::new("knn_accuracy", acc, gallery.dim())
                .param("kprime", k_prime)
                .param("weighted", weighted)
                .param("queries", queries.n())
        }
        "map" | "recall" | "ndcg" => {
            let protocol = cfg
                .opt_input(a.protocol, "protocol")?
                .ok_or_else(|| usage(format!("{metric} needs --protocol")))?;
            let gallery = load_features(&gallery_path)?;
            let queries = match &queries_path {
                Some(p) => load_features(p)?,
                None => gallery.clone(),
            };
            let qs = read_protocol(&protocol)?.query_set(&queries, gallery.n())?;
            let ranked = rankings(&gallery, &qs)?;
            match metric.as_str() {
                "map" => Metric::new("map", mean_average_precision(&ranked, &qs)?, gallery.dim()),
                "recall" => {
                    let r = cfg.or(a.recall_at, "recall-at", 100)?;
                    Metric::new("recall", recall_at(&ranked, &qs, r)?, gallery.dim()).param("R", r)
                }
                _ => Metric::new("ndcg@10", ndcg_at_10(&ranked, &qs)?, gallery.dim()),
            }
            .param("queries", qs.len())
        }
        other => return Err(usage(format!("unknown metric '{other}' (map|knn|recall|ndcg)"))),
    };
    if let Some(p) = csv {
        write_csv(std::slice::from_ref(&m), &p)?;
    }
    emit(&[m])
}

// ---------------------------------------------------------------- quantize

#[derive(Args, Debug)]
pub struct QuantizeArgs {
    /// Vectors to train on or encode.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Sub-quantizers.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Centroids per sub-quantizer (at most 256).
    #[arg(long = "K")]
    k: Option<usize>,
    /// Lloyd rounds.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train a codebook on `--input` and write it to `--codebook`.
    #[arg(long)]
    train: bool,
    /// Encode `--input` with `--codebook` into `--codes`.
    #[arg(long)]
    encode: bool,
    /// Write the reconstruction of `--codes` here (.fvecs).
    #[arg(long)]
    decode: Option<PathBuf>,
    /// Rank `--codes` for each row of `--queries` by ADC distance.
    #[arg(long)]
    search: bool,
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[arg(long)]
    codes: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Results per query.
    #[arg(long)]
    topk: Option<usize>,
    /// Search results (.ivecs); printed one query per line otherwise.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn quantize(a: QuantizeArgs, cfg: &ConfigFile) -> CliResult<()> {
    let (do_train, do_encode, do_search) = (
        cfg.switch(a.train, "train")?,
        cfg.switch(a.encode, "encode")?,
        cfg.switch(a.search, "search")?,
    );
    let decode_path = cfg.path(a.decode, "decode");
    if !(do_train || do_encode || do_search || decode_path.is_some()) {
        return Err(usage("nothing to do: pass --train, --encode, --decode or --search"));
    }
    let codebook_path = cfg.req_path(a.codebook, "codebook")?;
    let mut metrics = Vec::new();

    let codebook = if do_train {
        let input = cfg.input(a.input.clone(), "input")?;
        let m = cfg.req(a.m, "M")?;
        let k = cfg.or(a.k, "K", DEFAULT_K)?;
        let iters = cfg.or(a.iters, "iters", DEFAULT_KMEANS_ITERS)?;
        let seed = cfg.or(a.seed, "seed", 0)?;
        let data = load_features(&input)?;
        let trained = train_pq(&data, m, k, iters, seed)?;
        trained.codebook.save(&codebook_path)?;
        let final_sse: f64 = trained.sse_history.iter().filter_map(|h| h.last()).sum();
        let cb = trained.codebook;
        metrics.push(Metric::new("bytes_per_vector", cb.bytes_per_vector(), cb.dim()).param("M", m).param("K", k));
        metrics.push(Metric::new("train_sse", final_sse, cb.dim()).param("M", m).param("K", k));
        cb
    } else {
        if !codebook_path.is_file() {
            return Err(usage(format!("--codebook: no such file {}", codebook_path.display())));
        }
        PQCodebook::load(&codebook_path)?
    };
    let (m, k, dim) = (codebook.m(), codebook.k(), codebook.dim());

    if do_encode {
        let input = cfg.input(a.input.clone(), "input")?;
        let codes_path = cfg.req_path(a.codes.clone(), "codes")?;
        let data = load_features(&input)?;
        let codes = pq_encode(&codebook, &data)?;
        codes.save(&codes_path)?;
        let sse: f64 = quantization_errors(&codebook, &data)?.iter().sum();
        metrics.push(Metric::new("sse", sse, dim).param("M", m).param("K", k).param("n", data.n()));
    }
    let load_codes = |p: Option<PathBuf>| -> CliResult<PQCodes> {
        let p = cfg.input(p, "codes")?;
        Ok(PQCodes::load(p)?)
    };
    if let Some(out) = decode_path {
        let codes = load_codes(a.codes.clone())?;
        write_fvecs(&pq_decode(&codebook, &codes)?, &out)?;
    }
    if do_search {
        let codes = load_codes(a.codes.clone())?;
        let queries = load_features(&cfg.input(a.queries, "queries")?)?;
        let topk = cfg.or(a.topk, "topk", 10)?;
        if topk == 0 || topk > codes.n() {
            return Err(usage(format!("--topk must be in 1..={}", codes.n())));
        }
        let mut rows = Vec::with_capacity(queries.n() * topk);
        for i in 0..queries.n() {
            let table = adc_distance_table(&codebook, queries.row(i))?;
            rows.extend(adc_search(&table, &codes, topk)?.into_iter().map(|(j, _)| j as i32));
        }
        match cfg.path(a.output, "output") {
            Some(p) => write_ivecs(queries.n(), topk, &rows, &p)?,
            None => {
                for r in rows.chunks(topk) {
                    let line: Vec<String> = r.iter().map(i32::to_string).collect();
                    println!("{}", line.join(" "));
                }
            }
        }
    }
    emit(&metrics)
}

// ---------------------------------------------------------------- convert / synth

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// IDX image file (magic 0x00000803).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (magic 0x00000801).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Pixel rows scaled to [0, 1] (.fvecs).
    #[arg(long)]
    output: Option<PathBuf>,
    /// One label per line.
    #[arg(long)]
    labels_output: Option<PathBuf>,
}

pub fn convert(a: ConvertArgs, cfg: &ConfigFile) -> CliResult<()> {
    let images = cfg.input(a.images, "images")?;
    let labels = cfg.input(a.labels, "labels")?;
    let output = cfg.req_path(a.output, "output")?;
    let labels_output = cfg.req_path(a.labels_output, "labels-output")?;
    let (x, y) = read_idx_ubyte(images, labels)?;
    write_fvecs(&x, &output)?;
    save_labels(&y, &labels_output)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    points_per_cluster: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    center_scale: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Vectors (.fvecs).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Cluster ids, one per line.
    #[arg(long)]
    labels_output: Option<PathBuf>,
}

pub fn synth(a: SynthArgs, cfg: &ConfigFile) -> CliResult<()> {
    let spec = MixtureSpec {
        n_clusters: cfg.or(a.clusters, "clusters", 10)?,
        points_per_cluster: cfg.or(a.points_per_cluster, "points-per-cluster", 100)?,
        dim: cfg.or(a.dim, "dim", 64)?,
        center_scale: cfg.or(a.center_scale, "center-scale", 5.0)?,
        noise_std: cfg.or(a.noise_std, "noise-std", 1.0)?,
        seed: cfg.or(a.seed, "seed", 0)?,
    };
    let output = cfg.req_path(a.output, "output")?;
    let (x, y) = gen_mixture(&spec)?;
    write_fvecs(&x, &output)?;
    if let Some(p) = cfg.path(a.labels_output, "labels-output") {
        save_labels(&y, &p)?;
    }
    Ok(())
}
