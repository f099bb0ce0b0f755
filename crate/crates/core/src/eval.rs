//! Retrieval and classification metrics. Every metric L2-normalizes both
//! gallery and queries first, then ranks by Euclidean distance with ties
//! going to the lower gallery index.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{FeatureMatrix, LabelVector};
use crate::error::{check_dim, invalid_arg, invalid_data, Error, Result};
use crate::knn::{search_blocked, DEFAULT_BLOCK_SIZE};

/// Softmax temperature of the similarity-weighted vote.
pub const VOTE_TEMPERATURE: f64 = 0.07;

/// Scales every nonzero row to unit L2 norm; zero rows stay zero.
pub fn l2_normalize_rows(m: &FeatureMatrix) -> FeatureMatrix {
    let mut out = m.array().clone();
    for mut row in out.rows_mut() {
        let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| (v as f64 / norm) as f32);
        }
    }
    FeatureMatrix::new(out).expect("normalizing finite rows stays finite")
}

/// Retrieval queries with their relevant and ignored gallery rows.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    pub queries: FeatureMatrix,
    pub positives: Vec<Vec<usize>>,
    /// Relevance grade of each positive, aligned with `positives`.
    pub grades: Vec<Vec<f64>>,
    pub ignores: Vec<Vec<usize>>,
}

impl QuerySet {
    /// Binary relevance.
    pub fn new(queries: FeatureMatrix, positives: Vec<Vec<usize>>, ignores: Vec<Vec<usize>>) -> Result<Self> {
        let grades = positives.iter().map(|p| vec![1.0; p.len()]).collect();
        Self::with_grades(queries, positives, grades, ignores)
    }

    pub fn with_grades(
        queries: FeatureMatrix,
        positives: Vec<Vec<usize>>,
        grades: Vec<Vec<f64>>,
        ignores: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let q = queries.n();
        check_dim(q, positives.len())?;
        check_dim(q, grades.len())?;
        check_dim(q, ignores.len())?;
        for (i, ((pos, gr), ign)) in positives.iter().zip(&grades).zip(&ignores).enumerate() {
            check_dim(pos.len(), gr.len())?;
            if gr.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
                return invalid_arg(format!("query {i}: relevance grades must be non-negative"));
            }
            let ign: HashSet<usize> = ign.iter().copied().collect();
            if let Some(p) = pos.iter().find(|p| ign.contains(p)) {
                return invalid_arg(format!("query {i}: row {p} is both positive and ignored"));
            }
        }
        Ok(Self {
            queries,
            positives,
            grades,
            ignores,
        })
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

/// One line per query: `query_row | positives | ignores`, each list being
/// space-separated row indices. A positive may carry a grade as `row:grade`.
/// Blank lines and lines starting with `#` are skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Protocol {
    pub query_rows: Vec<usize>,
    pub positives: Vec<Vec<usize>>,
    pub grades: Vec<Vec<f64>>,
    pub ignores: Vec<Vec<usize>>,
}

fn parse_index(token: &str, line: usize) -> Result<usize> {
    token
        .parse()
        .map_err(|_| Error::InvalidData(format!("protocol line {line}: bad row index '{token}'")))
}

pub fn parse_protocol(text: &str) -> Result<Protocol> {
    let mut p = Protocol::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return invalid_data(format!("protocol line {}: expected 'query | positives | ignores'", i + 1));
        }
        p.query_rows.push(parse_index(fields[0].trim(), i + 1)?);
        let (mut pos, mut grades) = (Vec::new(), Vec::new());
        for tok in fields[1].split_whitespace() {
            let (idx, grade) = match tok.split_once(':') {
                Some((idx, g)) => {
                    let g: f64 = g
                        .parse()
                        .map_err(|_| Error::InvalidData(format!("protocol line {}: bad grade '{g}'", i + 1)))?;
                    (idx, g)
                }
                None => (tok, 1.0),
            };
            pos.push(parse_index(idx, i + 1)?);
            grades.push(grade);
        }
        let ign = match fields.get(2) {
            Some(f) => f.split_whitespace().map(|t| parse_index(t, i + 1)).collect::<Result<_>>()?,
            None => Vec::new(),
        };
        p.positives.push(pos);
        p.grades.push(grades);
        p.ignores.push(ign);
    }
    Ok(p)
}

pub fn read_protocol(path: impl AsRef<Path>) -> Result<Protocol> {
    parse_protocol(&fs::read_to_string(path)?)
}

impl Protocol {
    /// Pulls the referenced rows out of `queries` and checks gallery bounds.
    pub fn query_set(&self, queries: &FeatureMatrix, gallery_size: usize) -> Result<QuerySet> {
        for (i, &q) in self.query_rows.iter().enumerate() {
            if q >= queries.n() {
                return invalid_arg(format!("protocol query {i}: row {q} out of range ({} queries)", queries.n()));
            }
            if let Some(&r) = self.positives[i].iter().chain(&self.ignores[i]).find(|&&r| r >= gallery_size) {
                return invalid_arg(format!("protocol query {i}: gallery row {r} out of range ({gallery_size})"));
            }
        }
        QuerySet::with_grades(
            queries.select_rows(&self.query_rows)?,
            self.positives.clone(),
            self.grades.clone(),
            self.ignores.clone(),
        )
    }
}

/// Per-query gallery order by ascending distance, ignored rows removed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    pub orders: Vec<Vec<usize>>,
}

/// Ranks the whole gallery for every query (after L2 normalization).
pub fn rankings(gallery: &FeatureMatrix, qs: &QuerySet) -> Result<Ranking> {
    check_dim(gallery.dim(), qs.queries.dim())?;
    let g = l2_normalize_rows(gallery);
    let q = l2_normalize_rows(&qs.queries);
    let ignores: Vec<HashSet<usize>> = qs.ignores.iter().map(|v| v.iter().copied().collect()).collect();
    let hits = search_blocked(&q, &g, g.n(), DEFAULT_BLOCK_SIZE, &|qi, j| ignores[qi].contains(&j))?;
    Ok(Ranking {
        orders: hits.into_iter().map(|r| r.into_iter().map(|(j, _)| j).collect()).collect(),
    })
}

/// 1-based rank of every positive in `order`.
fn positive_ranks(order: &[usize], positives: &[usize], query: usize) -> Result<Vec<usize>> {
    let mut rank_of = vec![usize::MAX; order.iter().copied().max().map_or(0, |m| m + 1)];
    for (r, &j) in order.iter().enumerate() {
        rank_of[j] = r + 1;
    }
    let mut ranks = Vec::with_capacity(positives.len());
    for &p in positives {
        match rank_of.get(p) {
            Some(&r) if r != usize::MAX => ranks.push(r),
            _ => return invalid_arg(format!("query {query}: positive {p} missing from the ranking")),
        }
    }
    ranks.sort_unstable();
    ranks.dedup();
    Ok(ranks)
}

fn check_rankings(rankings: &Ranking, qs: &QuerySet) -> Result<()> {
    if qs.is_empty() {
        return invalid_arg("empty query set");
    }
    check_dim(qs.len(), rankings.orders.len())
}

/// Mean over queries (with at least one positive) of average precision.
pub fn mean_average_precision(rankings: &Ranking, qs: &QuerySet) -> Result<f64> {
    check_rankings(rankings, qs)?;
    let mut aps = Vec::new();
    for (i, (order, pos)) in rankings.orders.iter().zip(&qs.positives).enumerate() {
        if pos.is_empty() {
            continue;
        }
        let ranks = positive_ranks(order, pos, i)?;
        let ap = ranks.iter().enumerate().map(|(h, &r)| (h + 1) as f64 / r as f64).sum::<f64>() / ranks.len() as f64;
        aps.push(ap);
    }
    if aps.is_empty() {
        return invalid_arg("no query has a positive");
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Fraction of queries (with at least one positive) that retrieve a
/// positive within the first `r` results.
pub fn recall_at(rankings: &Ranking, qs: &QuerySet, r: usize) -> Result<f64> {
    check_rankings(rankings, qs)?;
    if r == 0 {
        return invalid_arg("recall cutoff must be at least 1");
    }
    let (mut hit, mut counted) = (0usize, 0usize);
    for (order, pos) in rankings.orders.iter().zip(&qs.positives) {
        if pos.is_empty() {
            continue;
        }
        counted += 1;
        let pos: HashSet<usize> = pos.iter().copied().collect();
        if order.iter().take(r).any(|j| pos.contains(j)) {
            hit += 1;
        }
    }
    if counted == 0 {
        return invalid_arg("no query has a positive");
    }
    Ok(hit as f64 / counted as f64)
}

/// nDCG over the first 10 results; queries whose ideal DCG is zero are
/// left out of the mean.
pub fn ndcg_at_10(rankings: &Ranking, qs: &QuerySet) -> Result<f64> {
    check_rankings(rankings, qs)?;
    let discount = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let mut scores = Vec::new();
    for ((order, pos), grades) in rankings.orders.iter().zip(&qs.positives).zip(&qs.grades) {
        let mut ideal: Vec<f64> = grades.clone();
        ideal.sort_by(|a, b| b.total_cmp(a));
        let idcg: f64 = ideal.iter().take(10).enumerate().map(|(r, g)| g * discount(r + 1)).sum();
        if idcg <= 0.0 {
            continue;
        }
        let dcg: f64 = order
            .iter()
            .take(10)
            .enumerate()
            .map(|(r, j)| {
                let gain = pos.iter().zip(grades).filter(|(p, _)| *p == j).map(|(_, g)| *g).fold(0.0, f64::max);
                gain * discount(r + 1)
            })
            .sum();
        scores.push(dcg / idcg);
    }
    if scores.is_empty() {
        return invalid_arg("no query has a positive grade");
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Predicted label of each query from a `k_prime`-NN vote over the gallery.
///
/// Uniform votes by default; `weighted` uses `exp(cos / 0.07)`. Ties go to
/// the tied class whose best-ranked member comes first.
pub fn knn_predict(
    gallery: &FeatureMatrix,
    gallery_labels: &LabelVector,
    queries: &FeatureMatrix,
    k_prime: usize,
    weighted: bool,
) -> Result<Vec<u32>> {
    check_dim(gallery.n(), gallery_labels.len())?;
    check_dim(gallery.dim(), queries.dim())?;
    if k_prime == 0 || k_prime > gallery.n() {
        return invalid_arg(format!("k' = {k_prime} must be in 1..={}", gallery.n()));
    }
    let g = l2_normalize_rows(gallery);
    let q = l2_normalize_rows(queries);
    let hits = search_blocked(&q, &g, k_prime, DEFAULT_BLOCK_SIZE, &|_, _| false)?;
    let labels = gallery_labels.as_slice();
    Ok(hits
        .par_iter()
        .map(|row| {
            // (class, score, first rank)
            let mut votes: Vec<(u32, f64, usize)> = Vec::new();
            for (rank, &(j, d2)) in row.iter().enumerate() {
                let w = if weighted { ((1.0 - d2 / 2.0) / VOTE_TEMPERATURE).exp() } else { 1.0 };
                match votes.iter_mut().find(|v| v.0 == labels[j]) {
                    Some(v) => v.1 += w,
                    None => votes.push((labels[j], w, rank)),
                }
            }
            votes
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)))
                .map(|v| v.0)
                .expect("k' >= 1")
        })
        .collect())
}

/// Accuracy of [`knn_predict`] against `query_labels`.
pub fn knn_classify(
    gallery: &FeatureMatrix,
    gallery_labels: &LabelVector,
    queries: &FeatureMatrix,
    query_labels: &LabelVector,
    k_prime: usize,
    weighted: bool,
) -> Result<f64> {
    check_dim(queries.n(), query_labels.len())?;
    let pred = knn_predict(gallery, gallery_labels, queries, k_prime, weighted)?;
    let correct = pred.iter().zip(query_labels.as_slice()).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / queries.n() as f64)
}
