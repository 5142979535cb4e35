//! Downstream learners on feature matrices, plus approximation baselines.
//!
//! Both tasks consume the columns of a feature matrix `Z` as data points:
//! ridge regression solves the primal or dual normal equations depending on
//! which side is smaller, and k-means runs seeded k-means++ with Lloyd
//! refinement. The baselines (random Fourier features, truncated Taylor
//! series, Gegenbauer partial sums) exist for error comparisons against the
//! sphere-sampled features.

use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::kernel::{gegenbauer_coefficients, two_layer_relu_kappa, two_layer_relu_maclaurin};
use crate::linalg::Cholesky;
use crate::special::GegenbauerBasis;
use crate::spectral::KernelMatrix;
use crate::threads;

/// Fitted ridge-regression weights in feature space.
#[derive(Debug, Clone)]
pub struct KrrModel {
    weights: Array1<f64>,
    lambda: f64,
    /// Fingerprint and seed of the training features; prediction features
    /// must match so the same sphere directions are used.
    fingerprint: u64,
    seed: u64,
}

impl KrrModel {
    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Which normal equations to solve; `Auto` picks the smaller system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrrMode {
    Auto,
    /// `(Z Z^T + lambda I) w = Z y` in feature space (`m*s` unknowns).
    Primal,
    /// `(Z^T Z + lambda I) a = y` in sample space, then `w = Z a`.
    Dual,
}

pub fn krr_fit(z: &FeatureMatrix, y: ArrayView1<'_, f64>, lambda: f64) -> Result<KrrModel> {
    krr_fit_mode(z, y, lambda, KrrMode::Auto)
}

pub fn krr_fit_mode(
    z: &FeatureMatrix,
    y: ArrayView1<'_, f64>,
    lambda: f64,
    mode: KrrMode,
) -> Result<KrrModel> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "ridge parameter lambda must be positive, got {lambda}"
        )));
    }
    let n = z.n();
    if y.len() != n {
        return Err(Error::Domain(format!(
            "label vector has {} entries for {n} points",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite label".into()));
    }
    let data = z.data();
    let rows = data.nrows();
    let primal = match mode {
        KrrMode::Auto => rows < n,
        KrrMode::Primal => true,
        KrrMode::Dual => false,
    };
    let weights = if primal {
        let mut normal = data.dot(&data.t());
        for i in 0..rows {
            normal[(i, i)] += lambda;
        }
        let rhs = data.dot(&y);
        Cholesky::new(normal.view())?.solve(rhs.view())
    } else {
        let mut gram = z.gram();
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        let alpha = Cholesky::new(gram.view())?.solve(y);
        data.dot(&alpha)
    };
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite regression weights".into()));
    }
    Ok(KrrModel {
        weights,
        lambda,
        fingerprint: z.fingerprint(),
        seed: z.seed(),
    })
}

/// Predictions `Z_test^T w`. The test features must come from the same model
/// and sphere-sample seed as the training features; fingerprint 0 (loaded
/// from disk) skips the model check but the seed must still agree.
pub fn krr_predict(model: &KrrModel, z_test: &FeatureMatrix) -> Result<Array1<f64>> {
    if z_test.data().nrows() != model.weights.len() {
        return Err(Error::Domain(format!(
            "test features have {} rows but the model has {} weights",
            z_test.data().nrows(),
            model.weights.len()
        )));
    }
    if z_test.seed() != model.seed {
        return Err(Error::Config(format!(
            "test features use sphere-sample seed {} but the model was trained \
             with seed {}",
            z_test.seed(),
            model.seed
        )));
    }
    if model.fingerprint != 0
        && z_test.fingerprint() != 0
        && z_test.fingerprint() != model.fingerprint
    {
        return Err(Error::Config(
            "test features were built from a different kernel model".into(),
        ));
    }
    Ok(z_test.data().t().dot(&model.weights))
}

/// Exact kernel ridge regression: `K_cross (K_train + lambda I)^{-1} y`.
pub fn exact_krr(
    k_train: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda: f64,
    k_cross: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "ridge parameter lambda must be positive, got {lambda}"
        )));
    }
    let n = k_train.nrows();
    if y.len() != n || k_cross.ncols() != n {
        return Err(Error::Domain(format!(
            "shape mismatch: K_train {n}x{}, y {}, K_cross {}x{}",
            k_train.ncols(),
            y.len(),
            k_cross.nrows(),
            k_cross.ncols()
        )));
    }
    let mut shifted = k_train.to_owned();
    for i in 0..n {
        shifted[(i, i)] += lambda;
    }
    let alpha = Cholesky::new(shifted.view())?.solve(y);
    Ok(k_cross.dot(&alpha))
}

/// Result of seeded kernel k-means on feature columns.
#[derive(Debug, Clone)]
pub struct Clustering {
    /// Cluster id in `[0, k)` per point.
    pub assignments: Vec<usize>,
    /// `k x (m*s)` centroid matrix.
    pub centroids: Array2<f64>,
    /// Final within-cluster sum of squares divided by `n`.
    pub objective: f64,
}

/// k-means++ seeding followed by Lloyd iterations on the columns of `Z`.
/// Stops at an assignment fixpoint or after `max_iters` rounds. Ties in the
/// nearest-centroid rule break toward the lowest cluster index; an emptied
/// cluster re-seeds at the point farthest from its assigned centroid. Fully
/// deterministic for a fixed seed.
pub fn kernel_kmeans(
    z: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Clustering> {
    let data = z.data();
    let n = z.n();
    if k < 1 || k > n {
        return Err(Error::Config(format!(
            "cluster count must satisfy 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    if max_iters < 1 {
        return Err(Error::Config("max_iters must be >= 1".into()));
    }
    let dim = data.nrows();
    let sq_norms: Vec<f64> = (0..n).map(|j| data.column(j).dot(&data.column(j))).collect();

    // k-means++ seeding
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut dist2: Vec<f64> = (0..n)
        .map(|j| column_dist2(data, j, data.column(centers[0]), &sq_norms, None))
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            // all remaining points coincide with chosen centers
            (0..n).find(|j| !centers.contains(j)).unwrap_or(0)
        } else {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (j, &w) in dist2.iter().enumerate() {
                if u < w {
                    pick = j;
                    break;
                }
                u -= w;
            }
            pick
        };
        centers.push(next);
        for j in 0..n {
            let d = column_dist2(data, j, data.column(next), &sq_norms, None);
            if d < dist2[j] {
                dist2[j] = d;
            }
        }
    }
    let mut centroids = Array2::<f64>::zeros((k, dim));
    for (i, &c) in centers.iter().enumerate() {
        centroids.row_mut(i).assign(&data.column(c));
    }

    let mut assignments = assign_columns(data, &centroids, &sq_norms);
    let mut objective = within_ss(data, &centroids, &assignments) / n as f64;
    for _ in 0..max_iters {
        // update step: centroids become cluster means
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (j, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            let mut row = sums.row_mut(a);
            row += &data.column(j);
        }
        for i in 0..k {
            if counts[i] > 0 {
                let inv = 1.0 / counts[i] as f64;
                sums.row_mut(i).mapv_inplace(|v| v * inv);
            } else {
                // re-seed an emptied cluster at the point farthest from its
                // assigned centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = column_dist2(
                            data,
                            a,
                            centroids.row(assignments[a]),
                            &sq_norms,
                            None,
                        );
                        let db = column_dist2(
                            data,
                            b,
                            centroids.row(assignments[b]),
                            &sq_norms,
                            None,
                        );
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                sums.row_mut(i).assign(&data.column(far));
            }
        }
        centroids = sums;
        let next = assign_columns(data, &centroids, &sq_norms);
        let next_obj = within_ss(data, &centroids, &next) / n as f64;
        debug_assert!(
            next_obj <= objective + 1e-9 * objective.max(1.0),
            "k-means objective increased: {objective} -> {next_obj}"
        );
        let converged = next == assignments;
        assignments = next;
        objective = next_obj;
        if converged {
            break;
        }
    }
    Ok(Clustering {
        assignments,
        centroids,
        objective,
    })
}

fn column_dist2(
    data: ArrayView2<'_, f64>,
    j: usize,
    center: ArrayView1<'_, f64>,
    sq_norms: &[f64],
    center_sq: Option<f64>,
) -> f64 {
    let cc = center_sq.unwrap_or_else(|| center.dot(&center));
    (sq_norms[j] - 2.0 * data.column(j).dot(&center) + cc).max(0.0)
}

/// Nearest-centroid assignment for every column; parallel over points with
/// read-only centroids, ties to the lowest index.
fn assign_columns(
    data: ArrayView2<'_, f64>,
    centroids: &Array2<f64>,
    sq_norms: &[f64],
) -> Vec<usize> {
    let center_sq: Vec<f64> = centroids
        .rows()
        .into_iter()
        .map(|r| r.dot(&r))
        .collect();
    threads::pool().install(|| {
        (0..data.ncols())
            .into_par_iter()
            .map(|j| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, c) in centroids.rows().into_iter().enumerate() {
                    let d = column_dist2(data, j, c, sq_norms, Some(center_sq[i]));
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best
            })
            .collect()
    })
}

fn within_ss(data: ArrayView2<'_, f64>, centroids: &Array2<f64>, assignments: &[usize]) -> f64 {
    let mut total = 0.0;
    for (j, &a) in assignments.iter().enumerate() {
        let diff = &data.column(j) - &centroids.row(a);
        total += diff.dot(&diff);
    }
    total
}

/// Kernel-space clustering objective `(Tr K - Tr(C^T K C)) / n` for the
/// orthonormal indicator matrix `C` (`C_{j,i} = 1/sqrt(|C_i|)` on members, so
/// `C^T C = I`). Empty clusters contribute no column.
pub fn kmeans_objective_exact(
    k: &KernelMatrix,
    assignments: &[usize],
    clusters: usize,
) -> Result<f64> {
    let n = k.n();
    if assignments.len() != n {
        return Err(Error::Domain(format!(
            "assignment vector has {} entries for an {n}x{n} kernel matrix",
            assignments.len()
        )));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= clusters) {
        return Err(Error::Domain(format!(
            "cluster id {bad} out of range for k = {clusters}"
        )));
    }
    let mut counts = vec![0usize; clusters];
    for &a in assignments {
        counts[a] += 1;
    }
    let data = k.data();
    let trace: f64 = data.diag().sum();
    // Tr(C^T K C) = sum_i (1/|C_i|) * sum_{j,j' in C_i} K_{j,j'}
    let mut projected = 0.0;
    for (i, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&j| assignments[j] == i).collect();
        let mut block = 0.0;
        for &a in &members {
            for &b in &members {
                block += data[(a, b)];
            }
        }
        projected += block / count as f64;
    }
    Ok((trace - projected) / n as f64)
}

/// Random Fourier features for the unit-bandwidth Gaussian kernel:
/// row `i` of the result is `sqrt(2/m) cos(w_i^T x_j + b_i)` with
/// `w_i ~ N(0, I_d)` and `b_i ~ U[0, 2 pi)`, one counter-based stream per
/// feature index.
pub fn rff_features(x: ArrayView2<'_, f64>, m: usize, seed: u64) -> Result<Array2<f64>> {
    if m < 1 {
        return Err(Error::Config("feature count m must be >= 1".into()));
    }
    let (d, n) = x.dim();
    if d == 0 || n == 0 {
        return Err(Error::Domain("empty dataset".into()));
    }
    let scale = (2.0 / m as f64).sqrt();
    let mut out = Array2::<f64>::zeros((m, n));
    let mut w = Array1::<f64>::zeros(d);
    for i in 0..m {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        for v in w.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let b: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for j in 0..n {
            out[(i, j)] = scale * (w.dot(&x.column(j)) + b).cos();
        }
    }
    Ok(out)
}

/// Truncated Taylor evaluation `sum_{j<=q} kappa^(j)(0) t^j / j!`.
pub fn taylor_truncation(derivs: &[f64], q: usize, t: f64) -> Result<f64> {
    if q >= derivs.len() {
        return Err(Error::Config(format!(
            "degree {q} needs {} derivatives, only {} available",
            q + 1,
            derivs.len()
        )));
    }
    let mut total = 0.0;
    let mut term = 1.0; // t^j / j!
    for (j, &dj) in derivs.iter().take(q + 1).enumerate() {
        if j > 0 {
            term *= t / j as f64;
        }
        total += dj * term;
    }
    Ok(total)
}

/// Test functions for the approximation-error study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKernel {
    /// `exp(2t)` on `[-1, 1]`.
    Exp2,
    /// The two-layer ReLU NTK angular function.
    NtkAngular,
}

impl StudyKernel {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            StudyKernel::Exp2 => (2.0 * t).exp(),
            StudyKernel::NtkAngular => two_layer_relu_kappa(t),
        }
    }

    /// `kappa^(j)(0)` for `j = 0..count`.
    fn derivs(&self, count: usize) -> Vec<f64> {
        match self {
            StudyKernel::Exp2 => crate::kernel::exponential_derivs(2.0, count),
            StudyKernel::NtkAngular => {
                let mut factorial = 1.0;
                two_layer_relu_maclaurin(count)
                    .into_iter()
                    .enumerate()
                    .map(|(j, c)| {
                        if j > 0 {
                            factorial *= j as f64;
                        }
                        c * factorial
                    })
                    .collect()
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StudyKernel::Exp2 => "exp2",
            StudyKernel::NtkAngular => "ntk",
        }
    }
}

/// One row of the approximation-error table.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    /// "taylor" or "gegenbauer".
    pub method: String,
    /// Expansion dimension; `None` for Taylor.
    pub d: Option<usize>,
    pub degree: usize,
    pub max_error: f64,
}

/// Worst-case approximation error `max_{t in grid} |kappa(t) - approx(t)|`
/// on a 2001-point uniform grid over `[-1, 1]`, for truncated Taylor series
/// and Gegenbauer partial sums at each requested dimension, degrees
/// `0..=max_degree`.
pub fn approx_error_study(
    kernel: StudyKernel,
    dims: &[usize],
    max_degree: usize,
) -> Result<Vec<StudyRow>> {
    const GRID: usize = 2001;
    let grid: Vec<f64> = (0..GRID)
        .map(|i| -1.0 + 2.0 * i as f64 / (GRID - 1) as f64)
        .collect();
    let target: Vec<f64> = grid.iter().map(|&t| kernel.eval(t)).collect();
    let mut rows = Vec::new();

    let derivs = kernel.derivs(max_degree + 1);
    for degree in 0..=max_degree {
        let mut worst = 0.0f64;
        for (&t, &want) in grid.iter().zip(&target) {
            let got = taylor_truncation(&derivs, degree, t)?;
            worst = worst.max((got - want).abs());
        }
        rows.push(StudyRow {
            method: "taylor".into(),
            d: None,
            degree,
            max_error: worst,
        });
    }

    for &d in dims {
        let coeffs = gegenbauer_coefficients(|t| kernel.eval(t), d, max_degree)?;
        let basis = GegenbauerBasis::new(d, max_degree)?;
        let mut p = vec![0.0; max_degree + 1];
        // running partial sums per grid point
        let mut partial = vec![0.0f64; GRID];
        let mut per_degree = vec![0.0f64; max_degree + 1];
        for (g, &t) in grid.iter().enumerate() {
            basis.eval_into(t, &mut p)?;
            for degree in 0..=max_degree {
                partial[g] += coeffs[degree] * p[degree];
                let err = (partial[g] - target[g]).abs();
                if err > per_degree[degree] {
                    per_degree[degree] = err;
                }
            }
            partial[g] = 0.0;
        }
        for (degree, &max_error) in per_degree.iter().enumerate() {
            rows.push(StudyRow {
                method: "gegenbauer".into(),
                d: Some(d),
                degree,
                max_error,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_features, sample_sphere};
    use crate::kernel::GzkModel;
    use crate::spectral::{gram, Provenance};
    use ndarray::array;

    fn sphere_columns(n: usize, d: usize, seed: u64) -> Array2<f64> {
        sample_sphere(d, n, seed).unwrap().t().to_owned()
    }

    #[test]
    fn krr_scalar_normal_equation() {
        // constant kernel c_0 = 1 on unit points: Z = [1, 1] with m = s = 1;
        // (Z Z^T + 1) w = Z y gives w = 4/3
        let model = GzkModel::numeric_zonal(3, 0, 1, |_| 1.0, 0, None).unwrap();
        let x = sphere_columns(2, 3, 1);
        let z = build_features(x.view(), &model, 1, 5).unwrap();
        let y = array![1.0, 3.0];
        let fit = krr_fit(&z, y.view(), 1.0).unwrap();
        assert_eq!(fit.weights().len(), 1);
        assert!((fit.weights()[0] - 4.0 / 3.0).abs() < 1e-12);
        let pred = krr_predict(&fit, &z).unwrap();
        for v in pred.iter() {
            assert!((v - 4.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn krr_degenerate_limits() {
        let model = GzkModel::gaussian(3, 6, 3).unwrap();
        let x = sphere_columns(10, 3, 2);
        let z = build_features(x.view(), &model, 16, 9).unwrap();
        let zero = Array1::<f64>::zeros(10);
        let fit = krr_fit(&z, zero.view(), 0.5).unwrap();
        for w in fit.weights().iter() {
            assert_eq!(*w, 0.0);
        }
        let y = Array1::from_iter((0..10).map(|i| (i as f64).sin()));
        let stiff = krr_fit(&z, y.view(), 1e12).unwrap();
        let pred = krr_predict(&stiff, &z).unwrap();
        for v in pred.iter() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn krr_primal_dual_agree() {
        let model = GzkModel::gaussian(3, 8, 4).unwrap();
        for trial in 0..10u64 {
            let n = 12 + (trial as usize % 5) * 7;
            let x = sphere_columns(n, 3, 30 + trial) * 0.8;
            let z = build_features(x.view(), &model, 8, 100 + trial).unwrap();
            let y = Array1::from_iter((0..n).map(|i| ((i * 3 + trial as usize) as f64).cos()));
            let lambda = 0.1;
            let wp = krr_fit_mode(&z, y.view(), lambda, KrrMode::Primal).unwrap();
            let wd = krr_fit_mode(&z, y.view(), lambda, KrrMode::Dual).unwrap();
            let pp = krr_predict(&wp, &z).unwrap();
            let pd = krr_predict(&wd, &z).unwrap();
            let scale = pp.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
            for (a, b) in pp.iter().zip(pd.iter()) {
                assert!(
                    (a - b).abs() <= 1e-8 * scale,
                    "trial {trial}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn krr_guards_mismatched_features() {
        let model = GzkModel::gaussian(3, 4, 2).unwrap();
        let x = sphere_columns(5, 3, 3);
        let z = build_features(x.view(), &model, 4, 11).unwrap();
        let y = Array1::<f64>::zeros(5);
        let fit = krr_fit(&z, y.view(), 1.0).unwrap();
        // different sphere seed: rejected
        let other_seed = build_features(x.view(), &model, 4, 12).unwrap();
        assert!(krr_predict(&fit, &other_seed).is_err());
        // different model with matching shapes: rejected by fingerprint
        let other_model = GzkModel::exponential(3, 4, 2, 1.0).unwrap();
        let other = build_features(x.view(), &other_model, 4, 11).unwrap();
        assert!(krr_predict(&fit, &other).is_err());
    }

    #[test]
    fn exact_krr_closed_forms() {
        // scalar: prediction = k(x*, x1) y1 / (k(x1, x1) + lambda)
        let k_train = array![[2.0]];
        let k_cross = array![[0.5]];
        let y = array![3.0];
        let pred = exact_krr(k_train.view(), y.view(), 0.5, k_cross.view()).unwrap();
        assert!((pred[0] - 0.5 * 3.0 / 2.5).abs() < 1e-12);

        // interpolation limit: K PD, lambda tiny -> predictions approach y
        let x = sphere_columns(6, 3, 8);
        let model = GzkModel::gaussian(3, 8, 4).unwrap();
        let k = gram(x.view(), |a, b| model.kernel_exact(a, b), Provenance::Exact).unwrap();
        let y = Array1::from_iter((0..6).map(|i| (i as f64 * 0.7).sin()));
        let pred = exact_krr(k.data(), y.view(), 1e-10, k.data()).unwrap();
        for (p, t) in pred.iter().zip(y.iter()) {
            assert!((p - t).abs() < 1e-6, "{p} vs {t}");
        }
    }

    #[test]
    fn feature_krr_matches_exact_krr_through_gram() {
        // with K := Z^T Z, the feature estimator and the kernel estimator
        // coincide by the push-through identity
        let model = GzkModel::gaussian(3, 6, 3).unwrap();
        let x = sphere_columns(15, 3, 4) * 0.9;
        let z = build_features(x.view(), &model, 10, 21).unwrap();
        let y = Array1::from_iter((0..15).map(|i| ((i as f64) * 0.3).cos()));
        let lambda = 0.05;
        let fit = krr_fit(&z, y.view(), lambda).unwrap();
        let feature_pred = krr_predict(&fit, &z).unwrap();
        let gram_z = z.gram();
        let kernel_pred = exact_krr(gram_z.view(), y.view(), lambda, gram_z.view()).unwrap();
        let scale = kernel_pred.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in feature_pred.iter().zip(kernel_pred.iter()) {
            assert!((a - b).abs() < 1e-8 * scale.max(1.0), "{a} vs {b}");
        }
    }

    fn blob_features(seed: u64) -> (FeatureMatrix, Vec<usize>) {
        // two well-separated blobs directly in feature space via a dataset
        // of two tight clusters on the sphere
        let d = 3;
        let n_half = 12;
        let mut x = Array2::<f64>::zeros((d, 2 * n_half));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in 0..2 * n_half {
            let center: [f64; 3] = if j < n_half {
                [1.0, 0.0, 0.0]
            } else {
                [-0.5, 3.0f64.sqrt() / 2.0, 0.0]
            };
            let mut v = [0.0f64; 3];
            for (i, c) in center.iter().enumerate() {
                v[i] = c + 0.05 * rng.sample::<f64, _>(StandardNormal);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            for i in 0..d {
                x[(i, j)] = v[i] / norm;
            }
        }
        let model = GzkModel::gaussian(3, 8, 4).unwrap();
        let z = build_features(x.view(), &model, 64, seed ^ 0xabcd).unwrap();
        let truth: Vec<usize> = (0..2 * n_half).map(|j| usize::from(j >= n_half)).collect();
        (z, truth)
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        for seed in 0..10u64 {
            let (z, truth) = blob_features(seed);
            let clustering = kernel_kmeans(&z, 2, seed, 100).unwrap();
            // cluster ids may be swapped; compare as a partition
            let flips: Vec<usize> = truth.iter().map(|&t| 1 - t).collect();
            assert!(
                clustering.assignments == truth || clustering.assignments == flips,
                "seed {seed}: {:?}",
                clustering.assignments
            );
        }
    }

    #[test]
    fn kmeans_edge_cases() {
        let (z, _) = blob_features(3);
        let n = z.n();
        // k = n: every point its own cluster, objective 0
        let each = kernel_kmeans(&z, n, 1, 50).unwrap();
        assert!(each.objective < 1e-20);
        // k = 1: mean squared distance to the grand centroid
        let one = kernel_kmeans(&z, 1, 1, 50).unwrap();
        let data = z.data();
        let mut mean = Array1::<f64>::zeros(data.nrows());
        for col in data.columns() {
            mean += &col;
        }
        mean /= n as f64;
        let want: f64 = (0..n)
            .map(|j| {
                let diff = &data.column(j) - &mean;
                diff.dot(&diff)
            })
            .sum::<f64>()
            / n as f64;
        assert!((one.objective - want).abs() < 1e-12 * want.max(1.0));
        assert!(kernel_kmeans(&z, n + 1, 1, 50).is_err());
        assert!(kernel_kmeans(&z, 2, 1, 0).is_err());
    }

    #[test]
    fn kmeans_objective_invariant() {
        let (z, _) = blob_features(7);
        let clustering = kernel_kmeans(&z, 3, 5, 100).unwrap();
        // recompute from scratch
        let mut sums = Array2::<f64>::zeros((3, z.data().nrows()));
        let mut counts = [0usize; 3];
        for (j, &a) in clustering.assignments.iter().enumerate() {
            counts[a] += 1;
            let mut row = sums.row_mut(a);
            row += &z.data().column(j);
        }
        for i in 0..3 {
            if counts[i] > 0 {
                let inv = 1.0 / counts[i] as f64;
                sums.row_mut(i).mapv_inplace(|v| v * inv);
            }
        }
        let mut ss = 0.0;
        for (j, &a) in clustering.assignments.iter().enumerate() {
            let diff = &z.data().column(j) - &sums.row(a);
            ss += diff.dot(&diff);
        }
        let recomputed = ss / z.n() as f64;
        assert!(
            (clustering.objective - recomputed).abs() <= 1e-9 * recomputed.max(1.0),
            "{} vs {recomputed}",
            clustering.objective
        );
    }

    #[test]
    fn kmeans_is_deterministic() {
        let (z, _) = blob_features(9);
        let a = kernel_kmeans(&z, 2, 42, 100).unwrap();
        let b = kernel_kmeans(&z, 2, 42, 100).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn exact_objective_closed_forms() {
        // one point per cluster: zero objective
        let k = KernelMatrix::from_matrix(Array2::<f64>::eye(3), Provenance::Exact).unwrap();
        let obj = kmeans_objective_exact(&k, &[0, 1, 2], 3).unwrap();
        assert!(obj.abs() < 1e-15);
        // k = 1 on K = I_n: (n - 1)/n
        let obj = kmeans_objective_exact(&k, &[0, 0, 0], 1).unwrap();
        assert!((obj - 2.0 / 3.0).abs() < 1e-15);
        assert!(kmeans_objective_exact(&k, &[0, 0, 5], 3).is_err());
    }

    #[test]
    fn exact_objective_matches_feature_objective() {
        // when K = Z^T Z exactly, the kernel-space and feature-space
        // objectives agree
        let (z, _) = blob_features(11);
        let clustering = kernel_kmeans(&z, 2, 13, 100).unwrap();
        let k = KernelMatrix::empirical(z.gram()).unwrap();
        let exact = kmeans_objective_exact(&k, &clustering.assignments, 2).unwrap();
        assert!(
            (clustering.objective - exact).abs() <= 1e-9 * exact.max(1.0),
            "{} vs {exact}",
            clustering.objective
        );
    }

    #[test]
    fn rff_monte_carlo_identities() {
        let x = array![[0.3, -0.5], [0.8, 0.2], [-0.1, 0.6]];
        let m = 100_000;
        let z = rff_features(x.view(), m, 3).unwrap();
        // diagonal: E[z(x)^T z(x)] = 1 with per-sample variance <= 1
        let diag: f64 = z.column(0).dot(&z.column(0));
        assert!((diag - 1.0).abs() < 0.02, "diag = {diag}");
        // cross: E -> e^{-||x - y||^2 / 2}
        let dist2 = {
            let diff = &x.column(0) - &x.column(1);
            diff.dot(&diff)
        };
        let want = (-dist2 / 2.0).exp();
        let got = z.column(0).dot(&z.column(1));
        assert!((got - want).abs() < 0.02, "{got} vs {want}");
        // determinism
        let z2 = rff_features(x.view(), 16, 3).unwrap();
        let z3 = rff_features(x.view(), 16, 3).unwrap();
        assert_eq!(z2, z3);
    }

    #[test]
    fn taylor_reference_points() {
        let derivs = crate::kernel::exponential_derivs(2.0, 20);
        assert!((taylor_truncation(&derivs, 1, 0.5).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(taylor_truncation(&derivs, 0, 0.9).unwrap(), 1.0);
        let e2 = (2.0f64).exp();
        let err = (taylor_truncation(&derivs, 15, 1.0).unwrap() - e2).abs();
        assert!(err < 1e-8 && err > 1e-10, "remainder {err}");
        assert!(taylor_truncation(&derivs[..3], 5, 0.1).is_err());
    }

    #[test]
    fn study_table_shape_and_monotonicity() {
        let rows = approx_error_study(StudyKernel::Exp2, &[2, 4], 8).unwrap();
        assert_eq!(rows.len(), 9 * 3);
        for method_rows in rows.chunks(9) {
            for pair in method_rows.windows(2) {
                assert!(
                    pair[1].max_error <= pair[0].max_error + 1e-12,
                    "{:?} -> {:?}",
                    pair[0],
                    pair[1]
                );
            }
        }
        // Chebyshev-style expansion beats Taylor at matched degree
        let taylor8 = rows[8].max_error;
        let geg8 = rows
            .iter()
            .find(|r| r.method == "gegenbauer" && r.d == Some(2) && r.degree == 8)
            .unwrap()
            .max_error;
        assert!(geg8 < taylor8, "gegenbauer {geg8} vs taylor {taylor8}");
    }
}
