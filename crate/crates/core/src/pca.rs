//! Whitened PCA baseline.
//!
//! The model keeps the top `d` eigenvectors of the sample covariance
//! (`1/(N-1)` normalization). Encoding scales component `i` by
//! `(lambda_i + 1e-12)^(-alpha)`: `alpha = 0` is plain PCA and
//! `alpha = 0.5` is full whitening.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array2};
use rayon::prelude::*;

use crate::checkpoint::{self, ModelKind};
use crate::dataset::FeatureMatrix;
use crate::error::{check_dim, invalid_arg, invalid_data, Error, Result};
use crate::linalg::symmetric_eigen;

pub const DEFAULT_WHITENING_POWER: f64 = 0.5;
const WHITEN_EPS: f64 = 1e-12;
const COV_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f32>,
    /// `d x D`, rows are unit-norm principal directions.
    components: Array2<f32>,
    /// Descending, clamped at zero.
    eigenvalues: Vec<f32>,
    whitening_power: f64,
}

/// Column means and the `1/(N-1)` covariance, accumulated in `f64`.
fn covariance(data: &FeatureMatrix) -> (Vec<f64>, Array2<f64>) {
    let (n, dim) = (data.n(), data.dim());
    let mut mean = vec![0f64; dim];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(data.row(i)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Array2::<f64>::zeros((dim, dim));
    for start in (0..n).step_by(COV_CHUNK) {
        let end = (start + COV_CHUNK).min(n);
        let mut chunk = data.view().slice(s![start..end, ..]).mapv(|v| v as f64);
        for mut row in chunk.rows_mut() {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        cov += &chunk.t().dot(&chunk);
    }
    cov /= (n - 1).max(1) as f64;
    (mean, cov)
}

/// Fits PCA keeping `d` components, with the default whitening power.
pub fn fit_pca(data: &FeatureMatrix, d: usize) -> Result<PcaModel> {
    let max_d = (data.n().saturating_sub(1)).min(data.dim());
    if d == 0 || d > max_d {
        return invalid_arg(format!("output dimension {d} outside 1..={max_d}"));
    }
    let (mean, cov) = covariance(data);
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance matrix".into()));
    }
    let eig = symmetric_eigen(&cov);
    log::debug!("PCA eigendecomposition converged after {} sweeps", eig.sweeps);

    let dim = data.dim();
    let mut components = Array2::<f32>::zeros((d, dim));
    for r in 0..d {
        let v = eig.vectors.row(r);
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        for (dst, &x) in components.row_mut(r).iter_mut().zip(v.iter()) {
            *dst = (sign * x) as f32;
        }
    }
    Ok(PcaModel {
        mean: mean.iter().map(|&m| m as f32).collect(),
        components,
        eigenvalues: eig.values[..d].iter().map(|&l| l.max(0.0) as f32).collect(),
        whitening_power: DEFAULT_WHITENING_POWER,
    })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn components(&self) -> &Array2<f32> {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[f32] {
        &self.eigenvalues
    }

    pub fn whitening_power(&self) -> f64 {
        self.whitening_power
    }

    pub fn with_whitening_power(mut self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return invalid_arg(format!("whitening power must be >= 0, got {alpha}"));
        }
        self.whitening_power = alpha;
        Ok(self)
    }

    /// Keeps only the leading `d` components.
    pub fn truncate(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.output_dim() {
            return invalid_arg(format!("cannot truncate {} components to {d}", self.output_dim()));
        }
        Ok(Self {
            mean: self.mean.clone(),
            components: self.components.slice(s![..d, ..]).to_owned(),
            eigenvalues: self.eigenvalues[..d].to_vec(),
            whitening_power: self.whitening_power,
        })
    }

    /// Largest deviation of `W W^T` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let w = self.components.mapv(|v| v as f64);
        let gram = w.dot(&w.t());
        let mut worst = 0f64;
        for ((i, j), &g) in gram.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
        worst
    }

    fn scales(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| (l as f64 + WHITEN_EPS).powf(-self.whitening_power))
            .collect()
    }

    pub fn encode(&self, data: &FeatureMatrix) -> Result<FeatureMatrix> {
        check_dim(self.input_dim(), data.dim())?;
        let d = self.output_dim();
        let scales = self.scales();
        let mut out = vec![0f32; data.n() * d];
        out.par_chunks_mut(d).enumerate().for_each(|(i, z)| {
            let centered: Vec<f64> = data
                .row(i)
                .iter()
                .zip(&self.mean)
                .map(|(&x, &m)| x as f64 - m as f64)
                .collect();
            for (r, dst) in z.iter_mut().enumerate() {
                let proj: f64 = self
                    .components
                    .row(r)
                    .iter()
                    .zip(&centered)
                    .map(|(&w, &c)| w as f64 * c)
                    .sum();
                *dst = (scales[r] * proj) as f32;
            }
        });
        FeatureMatrix::from_vec(data.n(), d, out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        checkpoint::write_header(&mut w, ModelKind::Pca)?;
        w.write_u32::<LittleEndian>(self.input_dim() as u32)?;
        w.write_u32::<LittleEndian>(self.output_dim() as u32)?;
        w.write_f64::<LittleEndian>(self.whitening_power)?;
        checkpoint::write_f32s(&mut w, self.mean.iter().copied())?;
        checkpoint::write_f32s(&mut w, self.eigenvalues.iter().copied())?;
        checkpoint::write_f32s(&mut w, self.components.iter().copied())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        if checkpoint::read_header(r)? != ModelKind::Pca {
            return invalid_data("not a PCA model file");
        }
        let dim = checkpoint::read_u32(r)?;
        let d = checkpoint::read_u32(r)?;
        if dim == 0 || d == 0 || d > dim {
            return invalid_data(format!("bad PCA header (D = {dim}, d = {d})"));
        }
        let alpha = r
            .read_f64::<LittleEndian>()
            .map_err(|_| Error::InvalidData("truncated model file".into()))?;
        let mean = checkpoint::read_f32s(r, dim)?;
        let eigenvalues = checkpoint::read_f32s(r, d)?;
        let comps = checkpoint::read_f32s(r, d * dim)?;
        checkpoint::expect_eof(r)?;
        let components = Array2::from_shape_vec((d, dim), comps)
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        Self {
            mean,
            components,
            eigenvalues,
            whitening_power: 0.0,
        }
        .with_whitening_power(alpha)
    }
}
