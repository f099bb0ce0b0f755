//! Batch losses on projector outputs and their gradients.
//!
//! The Barlow Twins objective here normalizes each column by its L2 norm
//! over the batch without mean-centering unless `center` is set.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis, Zip};

use crate::encoder::{cst, Scalar};
use crate::error::{check_dim, invalid_arg, Error, Result};

pub const DEFAULT_LAMBDA: f64 = 5.1e-3;
pub const DEFAULT_MARGIN: f64 = 1.0;
/// Added inside every square root that normalizes a column or row.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    BarlowTwins,
    Mse,
    Contrastive,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::BarlowTwins => "bt",
            LossKind::Mse => "mse",
            LossKind::Contrastive => "contrastive",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bt" | "barlow" => Ok(LossKind::BarlowTwins),
            "mse" => Ok(LossKind::Mse),
            "contrastive" => Ok(LossKind::Contrastive),
            other => invalid_arg(format!("unknown loss '{other}' (bt|mse|contrastive)")),
        }
    }
}

/// Loss value with its two terms, `total = invariance + lambda * redundancy`.
///
/// The baselines reuse the same shape: MSE puts everything in the first term,
/// the contrastive loss splits positives and negatives with `lambda = 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub invariance_term: f64,
    pub redundancy_term: f64,
    pub lambda: f64,
}

/// Column-normalized cross-correlation between the two branches.
#[derive(Clone, Debug)]
pub struct CrossCorrelation<A> {
    pub c: Array2<A>,
    pub col_norms_a: Array1<A>,
    pub col_norms_b: Array1<A>,
}

fn centered<A: Scalar>(x: &Array2<A>) -> Array2<A> {
    let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
    x - &mean
}

fn column_normalize<A: Scalar>(x: &Array2<A>) -> (Array2<A>, Array1<A>) {
    let eps: A = cst(NORM_EPS);
    let norms = x.map_axis(Axis(0), |c| (c.dot(&c) + eps).sqrt());
    (x / &norms, norms)
}

pub fn cross_correlation<A: Scalar>(a: &Array2<A>, b: &Array2<A>, center: bool) -> Result<CrossCorrelation<A>> {
    check_shapes(a, b)?;
    let (na, col_norms_a) = if center { column_normalize(&centered(a)) } else { column_normalize(a) };
    let (nb, col_norms_b) = if center { column_normalize(&centered(b)) } else { column_normalize(b) };
    Ok(CrossCorrelation {
        c: na.t().dot(&nb),
        col_norms_a,
        col_norms_b,
    })
}

fn check_shapes<A>(a: &Array2<A>, b: &Array2<A>) -> Result<()> {
    check_dim(a.nrows(), b.nrows())?;
    check_dim(a.ncols(), b.ncols())?;
    if a.nrows() < 2 {
        return invalid_arg(format!("batch of {} rows; need at least 2", a.nrows()));
    }
    Ok(())
}

/// Back through `x_hat = x / ||x||_col`: `(g - x_hat * colsum(g * x_hat)) / norm`.
fn column_normalize_backward<A: Scalar>(g: &Array2<A>, x_hat: &Array2<A>, norms: &Array1<A>) -> Array2<A> {
    let proj = (g * x_hat).sum_axis(Axis(0));
    let mut out = g - &(x_hat * &proj);
    out /= norms;
    out
}

fn uncenter_backward<A: Scalar>(g: Array2<A>) -> Array2<A> {
    let mean = g.mean_axis(Axis(0)).expect("non-empty batch");
    g - &mean
}

/// Barlow Twins loss and its gradients with respect to both branches.
pub fn barlow_twins_loss<A: Scalar>(
    z_hat_a: &Array2<A>,
    z_hat_b: &Array2<A>,
    lambda: f64,
    center: bool,
) -> Result<(LossReport, Array2<A>, Array2<A>)> {
    check_shapes(z_hat_a, z_hat_b)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid_arg(format!("lambda must be non-negative, got {lambda}"));
    }
    let xa = if center { centered(z_hat_a) } else { z_hat_a.clone() };
    let xb = if center { centered(z_hat_b) } else { z_hat_b.clone() };
    let (na, norms_a) = column_normalize(&xa);
    let (nb, norms_b) = column_normalize(&xb);
    let c = na.t().dot(&nb);

    let mut inv = 0f64;
    let mut red = 0f64;
    let lam: A = cst(lambda);
    let two: A = cst(2.0);
    let mut g = Array2::<A>::zeros(c.raw_dim());
    for ((i, j), &cij) in c.indexed_iter() {
        if i == j {
            let r = A::one() - cij;
            inv += r.to_f64().unwrap().powi(2);
            g[(i, j)] = -two * r;
        } else {
            red += cij.to_f64().unwrap().powi(2);
            g[(i, j)] = two * lam * cij;
        }
    }
    // C = Na^T Nb, so dNa = Nb G^T and dNb = Na G.
    let g_na = nb.dot(&g.t());
    let g_nb = na.dot(&g);
    let mut grad_a = column_normalize_backward(&g_na, &na, &norms_a);
    let mut grad_b = column_normalize_backward(&g_nb, &nb, &norms_b);
    if center {
        grad_a = uncenter_backward(grad_a);
        grad_b = uncenter_backward(grad_b);
    }
    let report = LossReport {
        total: inv + lambda * red,
        invariance_term: inv,
        redundancy_term: red,
        lambda,
    };
    if !report.total.is_finite() {
        return Err(Error::NonFinite("barlow twins loss".into()));
    }
    Ok((report, grad_a, grad_b))
}

/// Mean squared error over the batch and dimensions; gradient w.r.t. `z_hat`.
pub fn mse_loss<A: Scalar>(z_hat: &Array2<A>, target: &Array2<A>) -> Result<(f64, Array2<A>)> {
    check_dim(target.nrows(), z_hat.nrows())?;
    check_dim(target.ncols(), z_hat.ncols())?;
    if z_hat.is_empty() {
        return invalid_arg("empty batch");
    }
    let count = z_hat.len() as f64;
    let diff = z_hat - target;
    let loss = diff.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>() / count;
    let scale: A = cst(2.0 / count);
    Ok((loss, diff * scale))
}

fn row_normalize<A: Scalar>(x: &Array2<A>) -> (Array2<A>, Array1<A>) {
    let eps: A = cst(NORM_EPS);
    let norms = x.map_axis(Axis(1), |r| (r.dot(&r) + eps).sqrt());
    let out = x / &norms.view().insert_axis(Axis(1));
    (out, norms)
}

fn row_normalize_backward<A: Scalar>(g: &Array2<A>, u: &Array2<A>, norms: &Array1<A>) -> Array2<A> {
    let proj = (g * u).sum_axis(Axis(1)).insert_axis(Axis(1));
    let mut out = g - &(u * &proj);
    out /= &norms.view().insert_axis(Axis(1));
    out
}

/// Margin contrastive loss on L2-normalized rows.
///
/// Row `b` of A is pulled towards row `b` of B and pushed at least `margin`
/// away from row `(b + 1) mod B` of B. The result is the mean over the `2B`
/// terms; the report's first term holds positives and the second negatives.
pub fn contrastive_loss<A: Scalar>(
    z_hat_a: &Array2<A>,
    z_hat_b: &Array2<A>,
    margin: f64,
) -> Result<(LossReport, Array2<A>, Array2<A>)> {
    check_shapes(z_hat_a, z_hat_b)?;
    if !(margin > 0.0 && margin.is_finite()) {
        return invalid_arg(format!("margin must be positive, got {margin}"));
    }
    let n = z_hat_a.nrows();
    let (ua, norms_a) = row_normalize(z_hat_a);
    let (ub, norms_b) = row_normalize(z_hat_b);
    let mut gua = Array2::<A>::zeros(ua.raw_dim());
    let mut gub = Array2::<A>::zeros(ub.raw_dim());
    let scale = 1.0 / (2 * n) as f64;
    let (mut pos, mut neg) = (0f64, 0f64);
    let two: A = cst(2.0 * scale);

    for b in 0..n {
        let diff = &ua.row(b) - &ub.row(b);
        pos += diff.dot(&diff).to_f64().unwrap();
        Zip::from(gua.row_mut(b)).and(&diff).for_each(|g, &d| *g += two * d);
        Zip::from(gub.row_mut(b)).and(&diff).for_each(|g, &d| *g -= two * d);

        let o = (b + 1) % n;
        let diff = &ua.row(b) - &ub.row(o);
        let dist = diff.dot(&diff).to_f64().unwrap().sqrt();
        if dist < margin {
            neg += (margin - dist).powi(2);
            // Coincident points have no direction to push along.
            if dist > 0.0 {
                let coef: A = cst(-2.0 * scale * (margin - dist) / dist);
                Zip::from(gua.row_mut(b)).and(&diff).for_each(|g, &d| *g += coef * d);
                Zip::from(gub.row_mut(o)).and(&diff).for_each(|g, &d| *g -= coef * d);
            }
        }
    }
    let report = LossReport {
        total: (pos + neg) * scale,
        invariance_term: pos * scale,
        redundancy_term: neg * scale,
        lambda: 1.0,
    };
    if !report.total.is_finite() {
        return Err(Error::NonFinite("contrastive loss".into()));
    }
    Ok((
        report,
        row_normalize_backward(&gua, &ua, &norms_a),
        row_normalize_backward(&gub, &ub, &norms_b),
    ))
}

#[cfg(test)]
mod tests {
    use ndarray::{arr2, s};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Five-point central difference of `f` w.r.t. each entry of `x`.
    fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let h = 1e-3;
        let mut out = Array2::zeros(x.raw_dim());
        for idx in ndarray::indices(x.dim()) {
            let at = |o: f64| {
                let mut y = x.clone();
                y[idx] += o;
                f(&y)
            };
            out[idx] = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        }
        out
    }

    fn max_rel(a: &Array2<f64>, n: &Array2<f64>) -> f64 {
        let scale = n.iter().fold(0f64, |m, v| m.max(v.abs()));
        Zip::from(a)
            .and(n)
            .fold(0f64, |m, &x, &y| m.max((x - y).abs() / x.abs().max(y.abs()).max(1e-3 * scale).max(1e-12)))
    }

    /// Direct transcription of the loss definition, no shared helpers.
    fn bt_oracle(a: &Array2<f64>, b: &Array2<f64>, lambda: f64) -> (f64, f64) {
        let d = a.ncols();
        let (mut inv, mut red) = (0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                let mut num = 0.0;
                let (mut sa, mut sb) = (0.0, 0.0);
                for r in 0..a.nrows() {
                    num += a[(r, i)] * b[(r, j)];
                    sa += a[(r, i)] * a[(r, i)];
                    sb += b[(r, j)] * b[(r, j)];
                }
                let c = num / ((sa + 1e-12f64).sqrt() * (sb + 1e-12f64).sqrt());
                if i == j {
                    inv += (1.0 - c) * (1.0 - c);
                } else {
                    red += c * c;
                }
            }
        }
        (inv + lambda * red, red)
    }

    #[test]
    fn bt_matches_direct_formula() {
        let a = random(8, 6, 1);
        let b = random(8, 6, 2);
        let (r, _, _) = barlow_twins_loss(&a, &b, 0.3, false).unwrap();
        let (total, red) = bt_oracle(&a, &b, 0.3);
        assert!((r.total - total).abs() < 1e-12);
        assert!((r.redundancy_term - red).abs() < 1e-12);
    }

    #[test]
    fn bt_gradients_match_finite_differences() {
        for seed in 0..3 {
            for center in [false, true] {
                let a = random(8, 6, 10 + seed);
                let b = random(8, 6, 20 + seed);
                let (_, ga, gb) = barlow_twins_loss(&a, &b, 0.3, center).unwrap();
                let na = numeric_grad(&a, |x| barlow_twins_loss(x, &b, 0.3, center).unwrap().0.total);
                let nb = numeric_grad(&b, |x| barlow_twins_loss(&a, x, 0.3, center).unwrap().0.total);
                assert!(max_rel(&ga, &na) < 1e-4, "seed {seed} center {center}");
                assert!(max_rel(&gb, &nb) < 1e-4, "seed {seed} center {center}");
            }
        }
    }

    #[test]
    fn bt_orthogonal_identity_case() {
        let z: Array2<f64> = arr2(&[[2.0, 0.0, 0.0], [0.0, -3.0, 0.0], [0.0, 0.0, 0.5], [0.0, 0.0, 0.0]]);
        let (r, ga, gb) = barlow_twins_loss(&z, &z, DEFAULT_LAMBDA, false).unwrap();
        assert!(r.total.abs() < 1e-20);
        assert!(ga.iter().chain(gb.iter()).all(|v| v.abs() < 1e-6));
        let cc = cross_correlation(&z, &z, false).unwrap();
        for ((i, j), &v) in cc.c.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
        }
    }

    #[test]
    fn bt_all_ones_case() {
        let z: Array2<f64> = arr2(&[[1.0, 1.0], [1.0, 1.0]]);
        let (r, _, _) = barlow_twins_loss(&z, &z, DEFAULT_LAMBDA, false).unwrap();
        assert!(r.invariance_term < 1e-20);
        assert!((r.redundancy_term - 2.0).abs() < 1e-9);
        assert!((r.total - DEFAULT_LAMBDA * 2.0).abs() < 1e-9);
    }

    #[test]
    fn bt_zero_column_is_finite() {
        let mut z = random(5, 3, 4);
        z.column_mut(1).fill(0.0);
        let (r, ga, _) = barlow_twins_loss(&z, &z, DEFAULT_LAMBDA, false).unwrap();
        assert!(r.total.is_finite());
        assert!(ga.iter().all(|v| v.is_finite()));
        assert!((r.invariance_term - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bt_rejects_bad_input() {
        let z = random(1, 3, 0);
        assert!(barlow_twins_loss(&z, &z, 0.1, false).is_err());
        let a = random(4, 3, 0);
        let b = random(4, 2, 0);
        assert!(barlow_twins_loss(&a, &b, 0.1, false).is_err());
        assert!(barlow_twins_loss(&a, &a, -1.0, false).is_err());
    }

    #[test]
    fn bt_swap_transposes() {
        let a = random(6, 4, 1);
        let b = random(6, 4, 2);
        let cab = cross_correlation(&a, &b, false).unwrap().c;
        let cba: Array2<f64> = cross_correlation(&b, &a, false).unwrap().c;
        assert!(Zip::from(&cab).and(&cba.t()).all(|x: &f64, y: &f64| (x - y).abs() < 1e-12));
        let l1 = barlow_twins_loss(&a, &b, 0.2, false).unwrap().0.total;
        let l2 = barlow_twins_loss(&b, &a, 0.2, false).unwrap().0.total;
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let z: Array2<f64> = arr2(&[[1.0, 0.0]]);
        let (l, g) = mse_loss(&z, &Array2::zeros((1, 2))).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, arr2(&[[1.0, 0.0]]));
        assert_eq!(mse_loss(&z, &z).unwrap().0, 0.0);
        assert!(mse_loss(&z, &Array2::zeros((1, 3))).is_err());

        let a = random(5, 4, 1);
        let t = random(5, 4, 2);
        let (_, g) = mse_loss(&a, &t).unwrap();
        let n = numeric_grad(&a, |x| mse_loss(x, &t).unwrap().0);
        assert!(max_rel(&g, &n) < 1e-6);
    }

    #[test]
    fn contrastive_examples() {
        // Positives identical, negatives antipodal at distance 2 > margin.
        let z: Array2<f64> = arr2(&[[1.0, 0.0], [-1.0, 0.0]]);
        let (r, ga, gb) = contrastive_loss(&z, &z, DEFAULT_MARGIN).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(ga.iter().chain(gb.iter()).all(|&v| v == 0.0));

        // Negative coincides with the anchor: contributes m^2 to the sum.
        let a: Array2<f64> = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let b = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        let (r, _, _) = contrastive_loss(&a, &b, 1.0).unwrap();
        assert!((r.redundancy_term * 4.0 - 2.0).abs() < 1e-9);
        assert!((r.invariance_term * 4.0 - 4.0).abs() < 1e-9);

        assert!(contrastive_loss(&random(1, 3, 0), &random(1, 3, 1), 1.0).is_err());
    }

    /// Rows whose negative sits within `gap` of the hinge are resampled: the
    /// loss is only once differentiable there.
    fn away_from_hinge(seed: u64, margin: f64, gap: f64) -> (Array2<f64>, Array2<f64>) {
        for s in seed.. {
            let a = random(8, 6, s * 2);
            let b = random(8, 6, s * 2 + 1);
            let (ua, _) = row_normalize(&a);
            let (ub, _) = row_normalize(&b);
            let ok = (0..8).all(|r| {
                let d = &ua.row(r) - &ub.row((r + 1) % 8);
                (d.dot(&d).sqrt() - margin).abs() > gap
            });
            if ok {
                return (a, b);
            }
        }
        unreachable!()
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        for seed in 0..3 {
            // A margin of 1.2 leaves both active and inactive negatives.
            let (a, b) = away_from_hinge(seed * 100, 1.2, 0.02);
            let (_, ga, gb) = contrastive_loss(&a, &b, 1.2).unwrap();
            let na = numeric_grad(&a, |x| contrastive_loss(x, &b, 1.2).unwrap().0.total);
            let nb = numeric_grad(&b, |x| contrastive_loss(&a, x, 1.2).unwrap().0.total);
            assert!(max_rel(&ga, &na) < 1e-4);
            assert!(max_rel(&gb, &nb) < 1e-4);
        }
    }

    #[test]
    fn loss_kind_parsing() {
        for k in [LossKind::BarlowTwins, LossKind::Mse, LossKind::Contrastive] {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("vicreg".parse::<LossKind>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn decomposition_and_bounds(seed in 0u64..10_000, lambda in 0.0f64..1.0, center: bool) {
            let a = random(6, 5, seed);
            let b = random(6, 5, seed + 1);
            let (r, _, _) = barlow_twins_loss(&a, &b, lambda, center).unwrap();
            let expect = r.invariance_term + lambda * r.redundancy_term;
            prop_assert!((r.total - expect).abs() <= 1e-9 * expect.abs().max(1e-300));
            prop_assert!(r.total >= 0.0);
            let cc = cross_correlation(&a, &b, center).unwrap();
            prop_assert!(cc.c.iter().all(|v| v.abs() <= 1.0 + 1e-6));
        }

        #[test]
        fn column_rescaling_invariance(seed in 0u64..10_000, col in 0usize..5, c in 0.01f64..100.0) {
            let a = random(6, 5, seed);
            let b = random(6, 5, seed + 1);
            let base = barlow_twins_loss(&a, &b, DEFAULT_LAMBDA, false).unwrap().0.total;
            let (mut a2, mut b2) = (a.clone(), b.clone());
            a2.slice_mut(s![.., col]).mapv_inplace(|v| v * c);
            b2.slice_mut(s![.., col]).mapv_inplace(|v| v * c);
            let scaled = barlow_twins_loss(&a2, &b2, DEFAULT_LAMBDA, false).unwrap().0.total;
            prop_assert!((base - scaled).abs() < 1e-6);
        }
    }
}
