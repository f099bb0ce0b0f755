//! Product quantization: per sub-space k-means codebooks, byte codes and
//! asymmetric distance computation (ADC).

mod kmeans;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::FeatureMatrix;
use crate::error::{check_dim, invalid_arg, invalid_data, Result};

pub use kmeans::{kmeans, KMeansResult};

pub const DEFAULT_K: usize = 256;
pub const DEFAULT_KMEANS_ITERS: usize = 25;

/// `m` sub-quantizers with `k` centroids each over `sub_dim`-wide slices.
#[derive(Clone, Debug, PartialEq)]
pub struct PQCodebook {
    m: usize,
    k: usize,
    sub_dim: usize,
    /// `m x k x sub_dim`, row-major.
    centroids: Vec<f32>,
}

/// One byte per sub-quantizer for each of `n` vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PQCodes {
    n: usize,
    m: usize,
    codes: Vec<u8>,
}

/// Per-query ADC lookup table: `table[m * k + c]` is the squared distance
/// between the query's `m`-th slice and centroid `c` of sub-quantizer `m`.
#[derive(Clone, Debug)]
pub struct AdcTable {
    m: usize,
    k: usize,
    values: Vec<f64>,
}

/// Training output: the codebook and each sub-space's SSE per Lloyd round.
pub struct PQTraining {
    pub codebook: PQCodebook,
    pub sse_history: Vec<Vec<f64>>,
}

impl PQCodebook {
    pub fn from_centroids(m: usize, k: usize, sub_dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if m == 0 || k == 0 || sub_dim == 0 {
            return invalid_arg("codebook sizes must be positive");
        }
        if k > 256 {
            return invalid_arg(format!("K = {k} does not fit single-byte codes"));
        }
        if centroids.len() != m * k * sub_dim {
            return invalid_arg(format!(
                "{} centroid values, expected {}",
                centroids.len(),
                m * k * sub_dim
            ));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return invalid_data("non-finite centroid");
        }
        Ok(Self {
            m,
            k,
            sub_dim,
            centroids,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn dim(&self) -> usize {
        self.m * self.sub_dim
    }

    /// Storage cost of one code: `m * ceil(log2 k) / 8` bytes.
    pub fn bytes_per_vector(&self) -> f64 {
        let bits = (self.k as f64).log2().ceil();
        self.m as f64 * bits / 8.0
    }

    pub fn centroid(&self, sub: usize, c: usize) -> &[f32] {
        let start = (sub * self.k + c) * self.sub_dim;
        &self.centroids[start..start + self.sub_dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Encodes one vector, picking the nearest centroid in every sub-space.
    pub fn encode_one(&self, x: &[f32], out: &mut [u8]) {
        for (sub, code) in out.iter_mut().enumerate() {
            let slice = &x[sub * self.sub_dim..(sub + 1) * self.sub_dim];
            let mut best = (0usize, f64::INFINITY);
            for c in 0..self.k {
                let d = crate::linalg::sq_dist_f64(slice, self.centroid(sub, c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            *code = best.0 as u8;
        }
    }

    pub fn decode_one(&self, code: &[u8], out: &mut [f32]) {
        for (sub, &c) in code.iter().enumerate() {
            out[sub * self.sub_dim..(sub + 1) * self.sub_dim]
                .copy_from_slice(self.centroid(sub, c as usize));
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_u32::<LittleEndian>(self.m as u32)?;
        w.write_u32::<LittleEndian>(self.k as u32)?;
        w.write_u32::<LittleEndian>(self.sub_dim as u32)?;
        for &v in &self.centroids {
            w.write_f32::<LittleEndian>(v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let m = r.read_u32::<LittleEndian>()? as usize;
        let k = r.read_u32::<LittleEndian>()? as usize;
        let sub_dim = r.read_u32::<LittleEndian>()? as usize;
        let total = m
            .checked_mul(k)
            .and_then(|v| v.checked_mul(sub_dim))
            .filter(|&t| t > 0 && k <= 256)
            .ok_or_else(|| crate::Error::InvalidData(format!("bad codebook header ({m}, {k}, {sub_dim})")))?;
        let mut centroids = vec![0f32; total];
        r.read_f32_into::<LittleEndian>(&mut centroids)
            .map_err(|_| crate::Error::InvalidData("truncated codebook".into()))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return invalid_data("trailing bytes after codebook");
        }
        Self::from_centroids(m, k, sub_dim, centroids)
    }
}

impl PQCodes {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn code(&self, i: usize) -> &[u8] {
        &self.codes[i * self.m..(i + 1) * self.m]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.codes
    }

    pub fn from_bytes(n: usize, m: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != n * m {
            return invalid_data(format!("{} code bytes, expected {}", codes.len(), n * m));
        }
        Ok(Self { n, m, codes })
    }

    /// Writes the 8-byte `(n, m)` header followed by the raw code matrix.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_u32::<LittleEndian>(self.n as u32)?;
        w.write_u32::<LittleEndian>(self.m as u32)?;
        w.write_all(&self.codes)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let n = r.read_u32::<LittleEndian>()? as usize;
        let m = r.read_u32::<LittleEndian>()? as usize;
        let mut codes = Vec::new();
        r.read_to_end(&mut codes)?;
        Self::from_bytes(n, m, codes)
    }
}

/// Trains one k-means codebook per sub-space. Sub-space `s` draws its
/// seeding randomness from `seed + s`, so results do not depend on the
/// number of worker threads.
pub fn train_pq(data: &FeatureMatrix, m: usize, k: usize, iters: usize, seed: u64) -> Result<PQTraining> {
    let dim = data.dim();
    if m == 0 || !dim.is_multiple_of(m) {
        return invalid_arg(format!("M = {m} does not divide dimension {dim}"));
    }
    if k == 0 || k > 256 {
        return invalid_arg(format!("K = {k} must be in 1..=256"));
    }
    if data.n() < k {
        return invalid_arg(format!("N = {} is smaller than K = {k}", data.n()));
    }
    let sub_dim = dim / m;
    let n = data.n();

    let per_space: Vec<KMeansResult> = (0..m)
        .into_par_iter()
        .map(|sub| {
            let mut slice = Vec::with_capacity(n * sub_dim);
            for i in 0..n {
                slice.extend_from_slice(&data.row(i)[sub * sub_dim..(sub + 1) * sub_dim]);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(sub as u64));
            kmeans(&slice, sub_dim, k, iters, &mut rng)
        })
        .collect();

    let mut centroids = Vec::with_capacity(m * k * sub_dim);
    let mut sse_history = Vec::with_capacity(m);
    for res in per_space {
        centroids.extend(res.centroids.iter().map(|&v| v as f32));
        sse_history.push(res.sse_history);
    }
    Ok(PQTraining {
        codebook: PQCodebook::from_centroids(m, k, sub_dim, centroids)?,
        sse_history,
    })
}

pub fn pq_encode(codebook: &PQCodebook, data: &FeatureMatrix) -> Result<PQCodes> {
    check_dim(codebook.dim(), data.dim())?;
    let m = codebook.m;
    let mut codes = vec![0u8; data.n() * m];
    codes
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, out)| codebook.encode_one(data.row(i), out));
    Ok(PQCodes {
        n: data.n(),
        m,
        codes,
    })
}

pub fn pq_decode(codebook: &PQCodebook, codes: &PQCodes) -> Result<FeatureMatrix> {
    check_dim(codebook.m, codes.m)?;
    if let Some(&bad) = codes.codes.iter().find(|&&c| c as usize >= codebook.k) {
        return invalid_data(format!("code {bad} out of range for K = {}", codebook.k));
    }
    let dim = codebook.dim();
    let mut out = vec![0f32; codes.n * dim];
    out.par_chunks_mut(dim)
        .enumerate()
        .for_each(|(i, row)| codebook.decode_one(codes.code(i), row));
    FeatureMatrix::from_vec(codes.n, dim, out)
}

/// Squared reconstruction error of every row: `|x - decode(encode(x))|^2`.
pub fn quantization_errors(codebook: &PQCodebook, data: &FeatureMatrix) -> Result<Vec<f64>> {
    let codes = pq_encode(codebook, data)?;
    let decoded = pq_decode(codebook, &codes)?;
    Ok((0..data.n())
        .map(|i| crate::linalg::sq_dist_f64(data.row(i), decoded.row(i)))
        .collect())
}

pub fn adc_distance_table(codebook: &PQCodebook, query: &[f32]) -> Result<AdcTable> {
    check_dim(codebook.dim(), query.len())?;
    let (m, k, sd) = (codebook.m, codebook.k, codebook.sub_dim);
    let mut values = Vec::with_capacity(m * k);
    for sub in 0..m {
        let slice = &query[sub * sd..(sub + 1) * sd];
        for c in 0..k {
            values.push(crate::linalg::sq_dist_f64(slice, codebook.centroid(sub, c)));
        }
    }
    Ok(AdcTable { m, k, values })
}

impl AdcTable {
    /// Approximate squared distance from the query to an encoded vector.
    #[inline]
    pub fn distance(&self, code: &[u8]) -> f64 {
        code.iter()
            .enumerate()
            .map(|(sub, &c)| self.values[sub * self.k + c as usize])
            .sum()
    }
}

/// Ranks every encoded vector by ADC distance and returns the closest
/// `topk` as `(index, distance)`, ties broken by lower index.
pub fn adc_search(table: &AdcTable, codes: &PQCodes, topk: usize) -> Result<Vec<(usize, f64)>> {
    check_dim(table.m, codes.m)?;
    let mut heap = crate::knn::TopK::new(topk);
    for i in 0..codes.n {
        heap.push(table.distance(codes.code(i)), i);
    }
    Ok(heap.into_sorted())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        FeatureMatrix::from_vec(n, d, v).unwrap()
    }

    #[test]
    fn one_dim_two_means() {
        let data = FeatureMatrix::from_vec(4, 1, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
        let cb = train_pq(&data, 1, 2, 10, 0).unwrap().codebook;
        let mut c = cb.centroids().to_vec();
        c.sort_by(f32::total_cmp);
        assert_eq!(c, vec![0.0, 10.0]);
    }

    #[test]
    fn exact_codebook_has_zero_error() {
        // two sub-spaces, each holding exactly four distinct sub-vectors
        let mut rows = Vec::new();
        for i in 0..32 {
            let a = (i % 4) as f32;
            let b = ((i / 4) % 4) as f32 * 3.0;
            rows.push(vec![a, -a, b, b + 1.0]);
        }
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let training = train_pq(&data, 2, 4, 25, 7).unwrap();
        let errs = quantization_errors(&training.codebook, &data).unwrap();
        assert!(errs.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn sse_is_monotone_per_round() {
        let data = random_matrix(500, 16, 1);
        let training = train_pq(&data, 4, 8, 25, 2).unwrap();
        for hist in &training.sse_history {
            assert!(hist.len() >= 2);
            for w in hist.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{hist:?}");
            }
        }
    }

    #[test]
    fn error_decomposes_over_subspaces() {
        let data = random_matrix(300, 8, 3);
        let cb = train_pq(&data, 4, 8, 10, 4).unwrap().codebook;
        let errs = quantization_errors(&cb, &data).unwrap();
        for i in 0..data.n() {
            let x = data.row(i);
            let mut expected = 0.0;
            for sub in 0..cb.m() {
                let slice = &x[sub * 2..sub * 2 + 2];
                let best = (0..cb.k())
                    .map(|c| crate::linalg::sq_dist_f64(slice, cb.centroid(sub, c)))
                    .fold(f64::INFINITY, f64::min);
                expected += best;
            }
            assert!((errs[i] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn encode_decode_encode_is_fixed_point() {
        let data = random_matrix(200, 12, 5);
        let cb = train_pq(&data, 3, 16, 10, 6).unwrap().codebook;
        let codes = pq_encode(&cb, &data).unwrap();
        let decoded = pq_decode(&cb, &codes).unwrap();
        assert_eq!(pq_encode(&cb, &decoded).unwrap(), codes);
    }

    #[test]
    fn centroid_concatenation_round_trips() {
        let data = random_matrix(100, 6, 8);
        let cb = train_pq(&data, 2, 4, 5, 9).unwrap().codebook;
        let mut v = cb.centroid(0, 2).to_vec();
        v.extend_from_slice(cb.centroid(1, 3));
        let m = FeatureMatrix::from_vec(1, 6, v.clone()).unwrap();
        let codes = pq_encode(&cb, &m).unwrap();
        assert_eq!(codes.code(0), &[2, 3]);
        assert_eq!(pq_decode(&cb, &codes).unwrap().row(0), &v[..]);
    }

    #[test]
    fn adc_matches_decoded_distance() {
        let data = random_matrix(400, 16, 10);
        let cb = train_pq(&data, 4, 16, 8, 11).unwrap().codebook;
        let codes = pq_encode(&cb, &data).unwrap();
        let decoded = pq_decode(&cb, &codes).unwrap();
        let queries = random_matrix(20, 16, 12);
        for q in 0..queries.n() {
            let table = adc_distance_table(&cb, queries.row(q)).unwrap();
            for i in 0..codes.n() {
                let exact = crate::linalg::sq_dist_f64(queries.row(q), decoded.row(i));
                assert!((table.distance(codes.code(i)) - exact).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn stored_vector_ranks_itself_first() {
        let data = random_matrix(64, 8, 13);
        let cb = train_pq(&data, 2, 16, 10, 14).unwrap().codebook;
        let codes = pq_encode(&cb, &data).unwrap();
        let decoded = pq_decode(&cb, &codes).unwrap();
        let table = adc_distance_table(&cb, decoded.row(5)).unwrap();
        let top = adc_search(&table, &codes, 1).unwrap();
        assert_eq!(codes.code(top[0].0), codes.code(5));
        assert_eq!(top[0].1, 0.0);
    }

    #[test]
    fn single_centroid_ranks_by_index() {
        let data = random_matrix(10, 4, 15);
        let cb = train_pq(&data, 2, 1, 3, 0).unwrap().codebook;
        let codes = pq_encode(&cb, &data).unwrap();
        let table = adc_distance_table(&cb, data.row(3)).unwrap();
        let ranked: Vec<usize> = adc_search(&table, &codes, 10).unwrap().iter().map(|r| r.0).collect();
        assert_eq!(ranked, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn bytes_per_vector() {
        let cb = PQCodebook::from_centroids(8, 256, 1, vec![0.0; 8 * 256]).unwrap();
        assert_eq!(cb.bytes_per_vector(), 8.0);
        let cb = PQCodebook::from_centroids(4, 16, 1, vec![0.0; 64]).unwrap();
        assert_eq!(cb.bytes_per_vector(), 2.0);
    }

    #[test]
    fn training_errors() {
        let data = random_matrix(10, 6, 0);
        assert!(train_pq(&data, 4, 2, 5, 0).is_err());
        assert!(train_pq(&data, 2, 16, 5, 0).is_err());
    }

    #[test]
    fn codebook_and_codes_persist() {
        let dir = tempfile::tempdir().unwrap();
        let data = random_matrix(50, 8, 16);
        let cb = train_pq(&data, 4, 8, 5, 1).unwrap().codebook;
        cb.save(dir.path().join("cb")).unwrap();
        assert_eq!(PQCodebook::load(dir.path().join("cb")).unwrap(), cb);
        let codes = pq_encode(&cb, &data).unwrap();
        codes.save(dir.path().join("codes")).unwrap();
        let bytes = std::fs::read(dir.path().join("codes")).unwrap();
        assert_eq!(bytes.len(), 8 + 50 * 4);
        assert_eq!(PQCodes::load(dir.path().join("codes")).unwrap(), codes);
    }
}
