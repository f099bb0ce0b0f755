//! Deterministic synthetic datasets and the IDX (MNIST-family) reader.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{FeatureMatrix, LabelVector};
use crate::error::{invalid_arg, invalid_data, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Isotropic Gaussian clusters around Gaussian-distributed centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureSpec {
    pub n_clusters: usize,
    pub points_per_cluster: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

/// Points are emitted cluster by cluster; labels are cluster ids.
pub fn gen_mixture(spec: &MixtureSpec) -> Result<(FeatureMatrix, LabelVector)> {
    if spec.n_clusters == 0 || spec.points_per_cluster == 0 || spec.dim == 0 {
        return invalid_arg("mixture sizes must be positive");
    }
    if !(spec.center_scale > 0.0 && spec.noise_std >= 0.0) {
        return invalid_arg("center scale must be positive and noise std non-negative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gauss = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
    let centers: Vec<f64> = (0..spec.n_clusters * spec.dim).map(|_| gauss(spec.center_scale)).collect();
    let n = spec.n_clusters * spec.points_per_cluster;
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.n_clusters {
        let center = &centers[c * spec.dim..(c + 1) * spec.dim];
        for _ in 0..spec.points_per_cluster {
            values.extend(center.iter().map(|&m| (m + gauss(spec.noise_std)) as f32));
            labels.push(c as u32);
        }
    }
    Ok((FeatureMatrix::from_vec(n, spec.dim, values)?, LabelVector(labels)))
}

/// `n` points on a random `intrinsic`-dimensional linear subspace of
/// `R^dim` (Gaussian coordinates), plus isotropic noise.
pub fn gen_subspace(n: usize, dim: usize, intrinsic: usize, noise_std: f64, seed: u64) -> Result<FeatureMatrix> {
    if n == 0 || dim == 0 || intrinsic == 0 || intrinsic > dim {
        return invalid_arg("need n, dim > 0 and 0 < intrinsic <= dim");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis: Vec<f64> = (0..intrinsic * dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut values = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let coords: Vec<f64> = (0..intrinsic).map(|_| rng.sample(StandardNormal)).collect();
        for j in 0..dim {
            let clean: f64 = coords.iter().enumerate().map(|(i, c)| c * basis[i * dim + j]).sum();
            let eps: f64 = rng.sample(StandardNormal);
            values.push((clean + noise_std * eps) as f32);
        }
    }
    FeatureMatrix::from_vec(n, dim, values)
}

/// Random disjoint `(train, test)` row indices, each sorted ascending.
pub fn holdout_split(n: usize, test_count: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if test_count >= n {
        return invalid_arg(format!("test split of {test_count} leaves no training rows out of {n}"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..test_count].to_vec();
    let mut train = order[test_count..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

fn header_u32(bytes: &[u8], index: usize, what: &str) -> Result<u32> {
    match bytes.get(index * 4..index * 4 + 4) {
        Some(b) => Ok(BigEndian::read_u32(b)),
        None => invalid_data(format!("{what}: truncated IDX header")),
    }
}

/// Reads an IDX image file and its label file. Pixels are scaled to `[0, 1]`.
pub fn read_idx_ubyte(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<(FeatureMatrix, LabelVector)> {
    let img = fs::read(images)?;
    let lab = fs::read(labels)?;
    let magic = header_u32(&img, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return invalid_data(format!("images: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"));
    }
    let magic = header_u32(&lab, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return invalid_data(format!("labels: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"));
    }
    let n = header_u32(&img, 1, "images")? as usize;
    let rows = header_u32(&img, 2, "images")? as usize;
    let cols = header_u32(&img, 3, "images")? as usize;
    let n_labels = header_u32(&lab, 1, "labels")? as usize;
    if n != n_labels {
        return invalid_data(format!("{n} images but {n_labels} labels"));
    }
    let dim = rows * cols;
    let pixels = &img[16..];
    if pixels.len() != n * dim {
        return invalid_data(format!("images: expected {} pixel bytes, found {}", n * dim, pixels.len()));
    }
    let label_bytes = &lab[8..];
    if label_bytes.len() != n {
        return invalid_data(format!("labels: expected {n} bytes, found {}", label_bytes.len()));
    }
    if n == 0 || dim == 0 {
        return invalid_data("empty IDX file");
    }
    let values = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let labels = LabelVector(label_bytes.iter().map(|&l| l as u32).collect());
    Ok((FeatureMatrix::from_vec(n, dim, values)?, labels))
}

/// Writes IDX image and label files (used by tests and the examples).
pub fn write_idx_ubyte(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    label_values: &[u8],
) -> Result<()> {
    if pixels.len() != label_values.len() * rows * cols {
        return invalid_arg("pixel count does not match labels x rows x cols");
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, label_values.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + label_values.len());
    for v in [IDX_LABELS_MAGIC, label_values.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(label_values);
    fs::write(images, img)?;
    fs::write(labels, lab)?;
    Ok(())
}
