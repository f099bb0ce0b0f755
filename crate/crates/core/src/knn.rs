//! Neighbor tables over a training set and the pair samplers fed to training.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::{read_ivecs, write_ivecs, FeatureMatrix};
use crate::error::{check_dim, invalid_arg, invalid_data, Result};
use crate::linalg::sq_norm_f64;
use crate::quantizer::{adc_distance_table, pq_encode, PQCodebook};

pub const DEFAULT_BLOCK_SIZE: usize = 256;
/// Neighbor count used for pre-extracted features.
pub const DEFAULT_K_FEATURES: usize = 3;
/// Neighbor count used for raw pixel inputs.
pub const DEFAULT_K_PIXELS: usize = 100;

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist: f64,
    idx: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.idx.cmp(&other.idx))
    }
}

/// Bounded selection of the `k` smallest `(distance, index)` pairs.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, dist: f64, idx: usize) {
        if self.k == 0 {
            return;
        }
        let cand = Candidate { dist, idx };
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(top) = self.heap.peek() {
            if cand < *top {
                self.heap.pop();
                self.heap.push(cand);
            }
        }
    }

    pub(crate) fn into_sorted(self) -> Vec<(usize, f64)> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.idx, c.dist))
            .collect()
    }
}

/// `n x k` row indices: row `i` lists the neighbors of training row `i`,
/// closest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborTable {
    n: usize,
    k: usize,
    neighbors: Vec<u32>,
}

impl NeighborTable {
    pub fn new(n: usize, k: usize, neighbors: Vec<u32>) -> Result<Self> {
        if k == 0 || n == 0 {
            return invalid_arg("neighbor table must be non-empty");
        }
        if neighbors.len() != n * k {
            return invalid_data(format!("{} indices do not form {n} rows of {k}", neighbors.len()));
        }
        for (i, row) in neighbors.chunks_exact(k).enumerate() {
            for &j in row {
                if j as usize >= n {
                    return invalid_data(format!("row {i}: neighbor index {j} out of range"));
                }
                if j as usize == i {
                    return invalid_data(format!("row {i} lists itself as a neighbor"));
                }
            }
        }
        Ok(Self { n, k, neighbors })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.neighbors
    }

    /// Fraction of exact neighbors recovered by this table (same `k`).
    pub fn recall_against(&self, exact: &NeighborTable) -> f64 {
        let mut hits = 0usize;
        for i in 0..self.n.min(exact.n) {
            let truth = exact.row(i);
            hits += self.row(i).iter().filter(|j| truth.contains(j)).count();
        }
        hits as f64 / (exact.n * exact.k) as f64
    }

    pub fn save_ivecs(&self, path: impl AsRef<Path>) -> Result<()> {
        let values: Vec<i32> = self.neighbors.iter().map(|&v| v as i32).collect();
        write_ivecs(self.n, self.k, &values, path)
    }

    pub fn load_ivecs(path: impl AsRef<Path>) -> Result<Self> {
        let (n, k, values) = read_ivecs(path)?;
        if let Some(bad) = values.iter().find(|&&v| v < 0) {
            return invalid_data(format!("negative neighbor index {bad}"));
        }
        Self::new(n, k, values.into_iter().map(|v| v as u32).collect())
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return invalid_arg("k must be positive");
    }
    if k >= n {
        return invalid_arg(format!("k = {k} must be smaller than N = {n}"));
    }
    Ok(())
}

fn to_f64_block(view: ArrayView2<'_, f32>) -> Array2<f64> {
    view.mapv(|v| v as f64)
}

/// Exact k-NN under squared Euclidean distance with the default tile size.
pub fn brute_force_knn(data: &FeatureMatrix, k: usize) -> Result<NeighborTable> {
    brute_force_knn_blocked(data, k, DEFAULT_BLOCK_SIZE)
}

/// Exact k-NN computed over `block_size x block_size` tiles of
/// (anchors x database). Self matches are excluded; ties go to the lower
/// index. Distances are `|x|^2 + |y|^2 - 2 x.y` evaluated in `f64`.
pub fn brute_force_knn_blocked(data: &FeatureMatrix, k: usize, block_size: usize) -> Result<NeighborTable> {
    let n = data.n();
    check_k(n, k)?;
    let rows = search_blocked(data, data, k, block_size, &|i, j| i == j)?;
    let flat: Vec<u32> = rows.into_iter().flat_map(|r| r.into_iter().map(|(j, _)| j as u32)).collect();
    NeighborTable::new(n, k, flat)
}

/// The `k` nearest database rows of every query, closest first, as
/// `(index, squared distance)`. Pairs for which `exclude(query, row)` holds
/// are skipped. Ties go to the lower index.
pub fn search_blocked(
    queries: &FeatureMatrix,
    database: &FeatureMatrix,
    k: usize,
    block_size: usize,
    exclude: &(dyn Fn(usize, usize) -> bool + Sync),
) -> Result<Vec<Vec<(usize, f64)>>> {
    check_dim(database.dim(), queries.dim())?;
    let (nq, n) = (queries.n(), database.n());
    let block = block_size.max(1);
    let q_norms: Vec<f64> = (0..nq).map(|i| sq_norm_f64(queries.row(i))).collect();
    let norms: Vec<f64> = (0..n).map(|i| sq_norm_f64(database.row(i))).collect();
    let (qview, view) = (queries.view(), database.view());

    Ok((0..nq.div_ceil(block))
        .into_par_iter()
        .flat_map_iter(|qb| {
            let q0 = qb * block;
            let q1 = (q0 + block).min(nq);
            let qs = to_f64_block(qview.slice(ndarray::s![q0..q1, ..]));
            let mut heaps: Vec<TopK> = (q0..q1).map(|_| TopK::new(k)).collect();
            for db0 in (0..n).step_by(block) {
                let db1 = (db0 + block).min(n);
                let base = to_f64_block(view.slice(ndarray::s![db0..db1, ..]));
                let dots = qs.dot(&base.t());
                for (qi, heap) in heaps.iter_mut().enumerate() {
                    let i = q0 + qi;
                    for (bj, &dot) in dots.row(qi).iter().enumerate() {
                        let j = db0 + bj;
                        if exclude(i, j) {
                            continue;
                        }
                        let d = (q_norms[i] + norms[j] - 2.0 * dot).max(0.0);
                        heap.push(d, j);
                    }
                }
            }
            heaps.into_iter().map(TopK::into_sorted)
        })
        .collect())
}

/// Approximate k-NN: exact anchors against PQ-encoded database vectors.
pub fn pq_approx_knn(data: &FeatureMatrix, k: usize, codebook: &PQCodebook) -> Result<NeighborTable> {
    check_dim(codebook.dim(), data.dim())?;
    let n = data.n();
    check_k(n, k)?;
    let codes = pq_encode(codebook, data)?;
    let rows: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let table = adc_distance_table(codebook, data.row(i))?;
            let mut heap = TopK::new(k);
            for j in 0..n {
                if j != i {
                    heap.push(table.distance(codes.code(j)), j);
                }
            }
            Ok(heap.into_sorted().into_iter().map(|(j, _)| j as u32).collect())
        })
        .collect::<Result<_>>()?;
    NeighborTable::new(n, k, rows.concat())
}

/// Two aligned `B x D` blocks; row `r` of `a` pairs with row `r` of `b`.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub a: Array2<f32>,
    pub b: Array2<f32>,
    /// Training-row index of each anchor.
    pub anchors: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

fn validate_batch_size(batch_size: usize) -> Result<()> {
    if batch_size == 0 {
        return invalid_arg("batch size must be positive");
    }
    Ok(())
}

/// A lone trailing anchor joins the previous batch: batch norm cannot
/// train on a single row.
fn batch_end(pos: usize, batch_size: usize, len: usize) -> usize {
    let end = (pos + batch_size).min(len);
    if len - end == 1 {
        len
    } else {
        end
    }
}

/// Samples `(x, y)` with `y` drawn uniformly from the neighbors of `x`.
/// Every epoch visits each anchor exactly once, in a fresh random order.
pub struct NeighborPairs<'a> {
    data: &'a FeatureMatrix,
    table: &'a NeighborTable,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl<'a> NeighborPairs<'a> {
    pub fn new(data: &'a FeatureMatrix, table: &'a NeighborTable, batch_size: usize, seed: u64) -> Result<Self> {
        validate_batch_size(batch_size)?;
        if table.n() == 0 || table.k() == 0 {
            return invalid_arg("empty neighbor table");
        }
        check_dim(data.n(), table.n())?;
        Ok(Self {
            data,
            table,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Shuffles the anchors and returns the epoch's batch stream.
    pub fn epoch(&mut self) -> NeighborEpoch<'_, 'a> {
        let mut order: Vec<usize> = (0..self.data.n()).collect();
        order.shuffle(&mut self.rng);
        NeighborEpoch {
            sampler: self,
            order,
            pos: 0,
        }
    }
}

pub struct NeighborEpoch<'s, 'a> {
    sampler: &'s mut NeighborPairs<'a>,
    order: Vec<usize>,
    pos: usize,
}

impl Iterator for NeighborEpoch<'_, '_> {
    type Item = PairBatch;

    fn next(&mut self) -> Option<PairBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = batch_end(self.pos, self.sampler.batch_size, self.order.len());
        let anchors = self.order[self.pos..end].to_vec();
        self.pos = end;
        let s = &mut *self.sampler;
        let dim = s.data.dim();
        let mut a = Array2::<f32>::zeros((anchors.len(), dim));
        let mut b = Array2::<f32>::zeros((anchors.len(), dim));
        for (r, &i) in anchors.iter().enumerate() {
            let nbrs = s.table.row(i);
            let j = nbrs[s.rng.random_range(0..nbrs.len())] as usize;
            a.row_mut(r).assign(&ndarray::aview1(s.data.row(i)));
            b.row_mut(r).assign(&ndarray::aview1(s.data.row(j)));
        }
        Some(PairBatch { a, b, anchors })
    }
}

/// Synthetic pairs `(x, x + eps)` with `eps ~ N(0, sigma^2 I)`.
pub struct GaussianPairs<'a> {
    data: &'a FeatureMatrix,
    sigma: f64,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl<'a> GaussianPairs<'a> {
    pub fn new(data: &'a FeatureMatrix, sigma: f64, batch_size: usize, seed: u64) -> Result<Self> {
        validate_batch_size(batch_size)?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return invalid_arg(format!("noise std must be positive, got {sigma}"));
        }
        Ok(Self {
            data,
            sigma,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn epoch(&mut self) -> GaussianEpoch<'_, 'a> {
        let mut order: Vec<usize> = (0..self.data.n()).collect();
        order.shuffle(&mut self.rng);
        GaussianEpoch {
            sampler: self,
            order,
            pos: 0,
        }
    }
}

pub struct GaussianEpoch<'s, 'a> {
    sampler: &'s mut GaussianPairs<'a>,
    order: Vec<usize>,
    pos: usize,
}

impl Iterator for GaussianEpoch<'_, '_> {
    type Item = PairBatch;

    fn next(&mut self) -> Option<PairBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = batch_end(self.pos, self.sampler.batch_size, self.order.len());
        let anchors = self.order[self.pos..end].to_vec();
        self.pos = end;
        let s = &mut *self.sampler;
        let dim = s.data.dim();
        let mut a = Array2::<f32>::zeros((anchors.len(), dim));
        let mut b = Array2::<f32>::zeros((anchors.len(), dim));
        for (r, &i) in anchors.iter().enumerate() {
            let x = s.data.row(i);
            a.row_mut(r).assign(&ndarray::aview1(x));
            for (dst, &v) in b.row_mut(r).iter_mut().zip(x) {
                let eps: f64 = s.rng.sample(StandardNormal);
                *dst = (v as f64 + s.sigma * eps) as f32;
            }
        }
        Some(PairBatch { a, b, anchors })
    }
}
