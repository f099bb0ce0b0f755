//! Feature matrices, label vectors and the `fvecs` / `ivecs` / CSV loaders.
//!
//! `fvecs` layout: every record is a little-endian `i32` dimension `d`
//! followed by `d` little-endian `f32` values. `ivecs` is identical with
//! `i32` payloads.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{invalid_arg, invalid_data, Error, Result};

/// Dense row-major `n x dim` matrix of finite `f32` features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f32>,
}

impl FeatureMatrix {
    /// Wraps an array, rejecting empty shapes and non-finite values.
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return invalid_data(format!("empty matrix ({n}x{d})"));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "row {} column {}",
                pos / d,
                pos % d
            )));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().to_owned()
        };
        Ok(Self { data })
    }

    pub fn from_vec(n: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n * dim {
            return invalid_data(format!(
                "{} values cannot fill a {n}x{dim} matrix",
                values.len()
            ));
        }
        let data = Array2::from_shape_vec((n, dim), values)
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        Self::new(data)
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return invalid_data(format!("ragged row {i}"));
            }
            values.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), dim, values)
    }

    /// Number of rows.
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Number of columns.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.as_slice()[i * d..(i + 1) * d]
    }

    pub fn as_slice(&self) -> &[f32] {
        self.data
            .as_slice()
            .expect("feature matrix is kept in standard layout")
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn array(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f32> {
        self.data
    }

    /// Copies the given rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return invalid_arg(format!("row index {bad} out of range 0..{}", self.n()));
        }
        Self::new(self.data.select(Axis(0), indices))
    }
}

/// Integer class or landmark identities, one per matrix row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector(pub Vec<u32>);

impl LabelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector(indices.iter().map(|&i| self.0[i]).collect())
    }
}

/// Splits a `vecs`-style byte buffer into `(record count, dimension)`.
fn vecs_layout(bytes: &[u8]) -> Result<(usize, usize)> {
    if bytes.is_empty() {
        return invalid_data("no records");
    }
    if bytes.len() < 4 {
        return invalid_data("truncated file: incomplete header in record 0");
    }
    let dim = LittleEndian::read_i32(&bytes[..4]);
    if dim <= 0 {
        return invalid_data(format!("non-positive dimension {dim} in record 0"));
    }
    let dim = dim as usize;
    let record_len = 4 + 4 * dim;
    let mut offset = 0;
    let mut record = 0;
    while offset < bytes.len() {
        if bytes.len() - offset < 4 {
            return invalid_data(format!("truncated file: incomplete header in record {record}"));
        }
        let d = LittleEndian::read_i32(&bytes[offset..offset + 4]);
        if d <= 0 {
            return invalid_data(format!("non-positive dimension {d} in record {record}"));
        }
        if d as usize != dim {
            return invalid_data(format!("dimension mismatch at record {record}"));
        }
        if bytes.len() - offset < record_len {
            return invalid_data(format!("truncated file: record {record} is incomplete"));
        }
        offset += record_len;
        record += 1;
    }
    Ok((record, dim))
}

fn decode_payload<T>(bytes: &[u8], n: usize, dim: usize, read: fn(&[u8]) -> T) -> Vec<T> {
    let record_len = 4 + 4 * dim;
    let mut out = Vec::with_capacity(n * dim);
    for rec in bytes.chunks_exact(record_len) {
        out.extend(rec[4..].chunks_exact(4).map(read));
    }
    out
}

/// Reads an `fvecs` file into a matrix, preserving record order.
pub fn read_fvecs(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let bytes = fs::read(path)?;
    let (n, dim) = vecs_layout(&bytes)?;
    let values = decode_payload(&bytes, n, dim, LittleEndian::read_f32);
    FeatureMatrix::from_vec(n, dim, values)
}

pub fn write_fvecs(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = matrix.dim() as i32;
    for i in 0..matrix.n() {
        w.write_i32::<LittleEndian>(dim)?;
        for &v in matrix.row(i) {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an `ivecs` file as `(rows, dim, values)`.
pub fn read_ivecs(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<i32>)> {
    let bytes = fs::read(path)?;
    let (n, dim) = vecs_layout(&bytes)?;
    Ok((n, dim, decode_payload(&bytes, n, dim, LittleEndian::read_i32)))
}

pub fn write_ivecs(rows: usize, dim: usize, values: &[i32], path: impl AsRef<Path>) -> Result<()> {
    if values.len() != rows * dim || dim == 0 {
        return invalid_arg(format!("{} values do not form {rows} rows of {dim}", values.len()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for row in values.chunks_exact(dim) {
        w.write_i32::<LittleEndian>(dim as i32)?;
        for &v in row {
            w.write_i32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses comma-separated rows. With `has_label_column`, the last column
/// is read as a non-negative integer label.
pub fn parse_csv(text: &str, has_label_column: bool) -> Result<(FeatureMatrix, Option<LabelVector>)> {
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row_idx = rows.len();
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => return invalid_data(format!("ragged row {row_idx}")),
            _ => {}
        }
        let (features, label) = if has_label_column {
            if cells.len() < 2 {
                return invalid_data(format!("row {row_idx} has no feature columns"));
            }
            let (f, l) = cells.split_at(cells.len() - 1);
            (f, Some(l[0]))
        } else {
            (&cells[..], None)
        };
        let mut row = Vec::with_capacity(features.len());
        for (col, cell) in features.iter().enumerate() {
            let v: f32 = cell.parse().map_err(|_| {
                Error::InvalidData(format!("non-numeric cell {cell:?} at row {row_idx} column {col}"))
            })?;
            row.push(v);
        }
        if let Some(l) = label {
            let v: u32 = l.parse().map_err(|_| {
                Error::InvalidData(format!("non-numeric cell {l:?} (label) at row {row_idx}"))
            })?;
            labels.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return invalid_data("no records");
    }
    let matrix = FeatureMatrix::from_rows(&rows)?;
    Ok((matrix, has_label_column.then_some(LabelVector(labels))))
}

pub fn read_csv(
    path: impl AsRef<Path>,
    has_label_column: bool,
) -> Result<(FeatureMatrix, Option<LabelVector>)> {
    parse_csv(&fs::read_to_string(path)?, has_label_column)
}
