//! Lloyd k-means with k-means++ seeding, used per PQ sub-space.

use rand::Rng;

use crate::linalg::sq_dist_f64;

pub struct KMeansResult {
    /// `k x dim` centroids, row-major.
    pub centroids: Vec<f64>,
    /// Within-cluster SSE measured after each assignment step.
    pub sse_history: Vec<f64>,
}

/// Index and squared distance of the closest centroid, ties to the lower index.
pub(crate) fn nearest_centroid(point: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d: f64 = point
            .iter()
            .zip(centroid)
            .map(|(&p, &q)| {
                let t = p as f64 - q;
                t * t
            })
            .sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeding<R: Rng>(data: &[f32], dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(point(first).iter().map(|&v| v as f64));

    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist_f64(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // fewer distinct points than clusters
            rng.random_range(0..n)
        };
        let c = point(chosen);
        centroids.extend(c.iter().map(|&v| v as f64));
        for (i, best) in closest.iter_mut().enumerate() {
            let d = sq_dist_f64(point(i), c);
            if d < *best {
                *best = d;
            }
        }
    }
    centroids
}

/// Clusters the `n x dim` row-major `data` into `k` groups.
///
/// Runs at most `iters` Lloyd rounds and stops early once the relative SSE
/// change drops below `1e-6`. Empty clusters are re-seeded with the points
/// farthest from their current centroid.
pub fn kmeans<R: Rng>(data: &[f32], dim: usize, k: usize, iters: usize, rng: &mut R) -> KMeansResult {
    let n = data.len() / dim;
    assert!(n >= k && k >= 1, "k-means needs at least k points");
    let mut centroids = plus_plus_seeding(data, dim, k, rng);
    let mut assign = vec![0usize; n];
    let mut dists = vec![0f64; n];
    let mut sse_history = Vec::with_capacity(iters);

    for round in 0..=iters {
        for i in 0..n {
            let (c, d) = nearest_centroid(&data[i * dim..(i + 1) * dim], &centroids, dim);
            assign[i] = c;
            dists[i] = d;
        }
        let sse: f64 = dists.iter().sum();
        let converged = sse_history
            .last()
            .is_some_and(|&prev: &f64| prev == sse || (prev - sse).abs() <= 1e-6 * prev.abs());
        sse_history.push(sse);
        if converged || round == iters {
            break;
        }

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            let row = &data[i * dim..(i + 1) * dim];
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                *s += v as f64;
            }
        }

        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            let mut far: Vec<usize> = (0..n).collect();
            far.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
            for (&c, &p) in empty.iter().zip(&far) {
                let row = &data[p * dim..(p + 1) * dim];
                for (dst, &v) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                    *dst = v as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s * inv;
                }
            }
        }
    }
    KMeansResult { centroids, sse_history }
}
