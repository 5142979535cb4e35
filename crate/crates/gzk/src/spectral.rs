//! Exact Gram matrices, a dense symmetric eigensolver, and spectral
//! approximation diagnostics.
//!
//! The central quantity is the achieved spectral error of an empirical Gram
//! matrix `G = Z^T Z` against a reference kernel matrix `K`: the smallest
//! `eps` with
//!
//! ```text
//! (K + lambda I) / (1 + eps)  <=  G + lambda I  <=  (K + lambda I) / (1 - eps)
//! ```
//!
//! in the positive-semidefinite order, computed from the eigenvalues of the
//! whitened matrix `(K+lambda I)^{-1/2} (G+lambda I) (K+lambda I)^{-1/2}`.
//! Everything here is dense and desk-scale: Gram matrices cap at n = 5000 and
//! whitened eigensolves at n = 2000.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GzkModel, ZERO_NORM_EPS};
use crate::linalg::frobenius_norm;
use crate::threads;

const GRAM_CAP: usize = 5000;
const EIG_CAP: usize = 2000;

/// How a kernel matrix was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Closed-form kernel evaluations.
    Exact,
    /// Truncated generalized-zonal evaluations.
    Truncated,
    /// Empirical Gram `Z^T Z` of a feature matrix.
    Empirical,
}

/// Symmetric kernel matrix with provenance.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    data: Array2<f64>,
    provenance: Provenance,
}

impl KernelMatrix {
    /// Wraps an already-assembled symmetric matrix; rejects asymmetry beyond
    /// `1e-12 * max|K|` and non-finite entries.
    pub fn from_matrix(data: Array2<f64>, provenance: Provenance) -> Result<Self> {
        let n = data.nrows();
        if data.ncols() != n {
            return Err(Error::Domain(format!(
                "kernel matrix must be square, got {}x{}",
                n,
                data.ncols()
            )));
        }
        let scale = data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !scale.is_finite() {
            return Err(Error::Numerical("non-finite kernel matrix entry".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (data[(i, j)] - data[(j, i)]).abs() > 1e-12 * scale.max(1.0) {
                    return Err(Error::Numerical(format!(
                        "kernel matrix asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { data, provenance })
    }

    /// Convenience wrapper for empirical Gram matrices.
    pub fn empirical(data: Array2<f64>) -> Result<Self> {
        Self::from_matrix(data, Provenance::Empirical)
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// Assembles the kernel matrix `[K]_{ij} = k(x_i, x_j)` for the columns of
/// `x`. Computes the upper triangle (rows in parallel) and mirrors, so the
/// result is symmetric by construction.
pub fn gram<F>(x: ArrayView2<'_, f64>, eval: F, provenance: Provenance) -> Result<KernelMatrix>
where
    F: Fn(ArrayView1<'_, f64>, ArrayView1<'_, f64>) -> Result<f64> + Sync,
{
    let n = x.ncols();
    if n == 0 {
        return Err(Error::Domain("dataset has no points".into()));
    }
    if n > GRAM_CAP {
        return Err(Error::Config(format!(
            "dense Gram assembly capped at n = {GRAM_CAP}, got {n}"
        )));
    }
    let mut data = Array2::<f64>::zeros((n, n));
    threads::pool().install(|| {
        data.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .try_for_each(|(i, mut row)| -> Result<()> {
                for j in i..n {
                    let v = eval(x.column(i), x.column(j))?;
                    if !v.is_finite() {
                        return Err(Error::Numerical(format!(
                            "non-finite kernel value {v} at ({i}, {j})"
                        )));
                    }
                    row[j] = v;
                }
                Ok(())
            })
    })?;
    for i in 0..n {
        for j in 0..i {
            data[(i, j)] = data[(j, i)];
        }
    }
    Ok(KernelMatrix { data, provenance })
}

/// Truncated-kernel Gram matrix for the columns of `x`. Agrees entry for
/// entry with pairwise `kernel_truncated` calls, but computes each radial
/// table once per distinct point norm instead of twice per pair, which is
/// the difference between O(n^2) and O(1) table builds on unit-norm data.
pub fn gram_truncated(model: &GzkModel, x: ArrayView2<'_, f64>) -> Result<KernelMatrix> {
    let (d, n) = x.dim();
    if d != model.d() {
        return Err(Error::Domain(format!(
            "dataset dimension {d} does not match model dimension {}",
            model.d()
        )));
    }
    if n == 0 {
        return Err(Error::Domain("dataset has no points".into()));
    }
    if n > GRAM_CAP {
        return Err(Error::Config(format!(
            "dense Gram assembly capped at n = {GRAM_CAP}, got {n}"
        )));
    }
    let mut table_of = vec![0usize; n];
    let mut tables: Vec<Array2<f64>> = Vec::new();
    let mut by_bits: HashMap<u64, usize> = HashMap::new();
    let mut unit = Array2::<f64>::zeros((d, n));
    let mut zero = vec![false; n];
    for j in 0..n {
        let col = x.column(j);
        let norm = col.dot(&col).sqrt();
        if !norm.is_finite() {
            return Err(Error::Domain(format!("non-finite entry in point {j}")));
        }
        let id = match by_bits.entry(norm.to_bits()) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                tables.push(model.radial_table(norm)?.values().to_owned());
                *e.insert(tables.len() - 1)
            }
        };
        table_of[j] = id;
        if norm < ZERO_NORM_EPS {
            zero[j] = true;
        } else {
            for (u, &v) in unit.column_mut(j).iter_mut().zip(col.iter()) {
                *u = v / norm;
            }
        }
    }

    let q = model.q();
    let mut data = Array2::<f64>::zeros((n, n));
    threads::pool().install(|| {
        data.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .try_for_each(|(i, mut row)| -> Result<()> {
                let mut p = vec![0.0f64; q + 1];
                let ti = &tables[table_of[i]];
                for j in i..n {
                    let tj = &tables[table_of[j]];
                    let v = if zero[i] || zero[j] {
                        // zero-norm convention: l = 0 row only
                        ti.row(0).dot(&tj.row(0))
                    } else {
                        let ct = unit.column(i).dot(&unit.column(j)).clamp(-1.0, 1.0);
                        model.basis().eval_into(ct, &mut p)?;
                        let mut total = 0.0;
                        for l in 0..=q {
                            total += ti.row(l).dot(&tj.row(l)) * p[l];
                        }
                        total
                    };
                    if !v.is_finite() {
                        return Err(Error::Numerical(format!(
                            "non-finite kernel value {v} at ({i}, {j})"
                        )));
                    }
                    row[j] = v;
                }
                Ok(())
            })
    })?;
    for i in 0..n {
        for j in 0..i {
            data[(i, j)] = data[(j, i)];
        }
    }
    Ok(KernelMatrix {
        data,
        provenance: Provenance::Truncated,
    })
}

/// Dense symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as columns. Sweeps run until the off-diagonal Frobenius norm
/// drops below `1e-11 * ||A||_F`; inputs asymmetric beyond `1e-10` relative
/// are rejected as a contract violation.
pub fn sym_eig(a: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Domain(format!(
            "eigensolver needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::Domain("eigensolver needs a nonempty matrix".into()));
    }
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !scale.is_finite() {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale.max(1.0) {
                return Err(Error::Domain(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    a[(i, j)],
                    a[(j, i)]
                )));
            }
        }
    }
    let mut m = a.to_owned();
    // fold any sub-tolerance asymmetry away so rotations stay exact
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    // eigenvectors accumulate transposed so every rotation works on a pair
    // of contiguous rows; they come back out as columns at the end
    let mut vt = Array2::<f64>::eye(n);
    let total = frobenius_norm(m.view());
    let target = 1e-11 * total;
    let converged = jacobi_sweeps(
        m.as_slice_mut().expect("owned matrix is contiguous"),
        vt.as_slice_mut().expect("identity matrix is contiguous"),
        n,
        target,
    );
    if !converged && total > 0.0 {
        return Err(Error::Numerical(
            "Jacobi eigensolver failed to converge".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let evals = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut evecs = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        evecs.column_mut(dst).assign(&vt.row(src));
    }
    Ok((evals, evecs))
}

/// Runs cyclic Jacobi sweeps on the row-major buffer `m` until the
/// off-diagonal norm drops below `target`, accumulating rotations into the
/// rows of `vt`. Returns whether the tolerance was reached.
fn jacobi_sweeps(m: &mut [f64], vt: &mut [f64], n: usize, target: f64) -> bool {
    const MAX_SWEEPS: usize = 50;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(m, n) <= target {
            return true;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(m, vt, n, p, q);
            }
        }
    }
    off_diagonal_norm(m, n) <= target
}

fn off_diagonal_norm(m: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for (j, v) in m[i * n..(i + 1) * n].iter().enumerate() {
            if j != i {
                sum += v * v;
            }
        }
    }
    sum.sqrt()
}

/// Disjoint mutable views of rows `p < q` of an `n x n` row-major buffer.
fn two_rows(buf: &mut [f64], n: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    let (head, tail) = buf.split_at_mut(q * n);
    (&mut head[p * n..(p + 1) * n], &mut tail[..n])
}

/// One Jacobi rotation zeroing `m[(p, q)]`, accumulating into the rows of
/// `vt`. The symmetric matrix is updated through its rows `p` and `q` (the
/// only contiguous traversal) and mirrored back into columns `p` and `q`.
fn rotate(m: &mut [f64], vt: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = m[p * n + q];
    if apq == 0.0 {
        return;
    }
    // stable rotation angle: t = sign(tau) / (|tau| + sqrt(1+tau^2))
    let tau = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let span = |rp: &mut [f64], rq: &mut [f64]| {
        for (a, b) in rp.iter_mut().zip(rq.iter_mut()) {
            let x = *a;
            let y = *b;
            *a = c * x - s * y;
            *b = s * x + c * y;
        }
    };
    {
        let (rp, rq) = two_rows(m, n, p, q);
        span(&mut rp[..p], &mut rq[..p]);
        span(&mut rp[p + 1..q], &mut rq[p + 1..q]);
        span(&mut rp[q + 1..], &mut rq[q + 1..]);
        // 2x2 pivot block in closed form; the (p, q) entry is zero
        // analytically and is pinned so round-off cannot stall convergence
        rp[p] -= t * apq;
        rq[q] += t * apq;
        rp[q] = 0.0;
        rq[p] = 0.0;
    }
    for k in 0..n {
        if k != p && k != q {
            m[k * n + p] = m[p * n + k];
            m[k * n + q] = m[q * n + k];
        }
    }
    let (vp, vq) = two_rows(vt, n, p, q);
    span(vp, vq);
}

/// Eigenvalues of `k`, descending, with tiny negatives clamped to zero.
/// Values below `-1e-8 * lambda_max` abort: the matrix is not a kernel matrix
/// within tolerance.
pub fn clamped_spectrum(k: &KernelMatrix) -> Result<Vec<f64>> {
    let (evals, _) = sym_eig(k.data())?;
    clamp_eigenvalues(evals.as_slice().unwrap())
}

fn clamp_eigenvalues(evals: &[f64]) -> Result<Vec<f64>> {
    let lambda_max = evals.iter().fold(0.0f64, |a, v| a.max(*v));
    let floor = -1e-8 * lambda_max.max(1e-300);
    let mut out = Vec::with_capacity(evals.len());
    for &e in evals {
        if e < floor {
            return Err(Error::Numerical(format!(
                "matrix is not positive semidefinite: eigenvalue {e} below \
                 tolerance {floor}"
            )));
        }
        out.push(e.max(0.0));
    }
    Ok(out)
}

/// Statistical dimension `s_lambda = Tr(K (K + lambda I)^{-1}) =
/// sum_i lambda_i / (lambda_i + lambda)`.
pub fn statistical_dimension(k: &KernelMatrix, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let evals = clamped_spectrum(k)?;
    Ok(evals.iter().map(|e| e / (e + lambda)).sum())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "regularization lambda must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// Smallest `eps` for which `G + lambda I` two-sidedly approximates
/// `K + lambda I` with relative spectral width `eps`:
/// `eps = max(1/mu_min - 1, 1 - 1/mu_max, 0)` over the whitened eigenvalues
/// `mu` of `(K+lambda I)^{-1/2} (G+lambda I) (K+lambda I)^{-1/2}`.
pub fn achieved_epsilon(k: &KernelMatrix, g: &KernelMatrix, lambda: f64) -> Result<f64> {
    let mu = whitened_spectrum(k, g, lambda)?;
    let mu_min = mu.iter().copied().fold(f64::INFINITY, f64::min);
    let mu_max = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mu_min <= 0.0 {
        return Err(Error::Numerical(format!(
            "whitened spectrum not positive (mu_min = {mu_min}); empirical \
             Gram is not PSD at this regularization"
        )));
    }
    Ok((1.0 / mu_min - 1.0).max(1.0 - 1.0 / mu_max).max(0.0))
}

/// Eigenvalues of the whitened matrix via the eigendecomposition square root
/// of `K + lambda I`: with `K = V D V^T`, the whitened matrix is orthogonally
/// similar to `S V^T (G + lambda I) V S` for `S = (D + lambda I)^{-1/2}`.
fn whitened_spectrum(k: &KernelMatrix, g: &KernelMatrix, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let n = k.n();
    if g.n() != n {
        return Err(Error::Domain(format!(
            "kernel matrices differ in size: {} vs {}",
            n,
            g.n()
        )));
    }
    if n > EIG_CAP {
        return Err(Error::Config(format!(
            "whitened eigensolve capped at n = {EIG_CAP}, got {n}"
        )));
    }
    let (evals, evecs) = sym_eig(k.data())?;
    let clamped = clamp_eigenvalues(evals.as_slice().unwrap())?;
    let inv_sqrt: Vec<f64> = clamped.iter().map(|e| 1.0 / (e + lambda).sqrt()).collect();
    let mut shifted = g.data().to_owned();
    for i in 0..n {
        shifted[(i, i)] += lambda;
    }
    let mut c = evecs.t().dot(&shifted).dot(&evecs);
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    // exact symmetry up to round-off; fold before the eigensolve
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let (mu, _) = sym_eig(c.view())?;
    Ok(mu.to_vec())
}

/// `||G - K||_F`, the Frobenius distance between two kernel matrices.
pub fn frobenius_error(k: &KernelMatrix, g: &KernelMatrix) -> Result<f64> {
    if g.n() != k.n() {
        return Err(Error::Domain(format!(
            "kernel matrices differ in size: {} vs {}",
            k.n(),
            g.n()
        )));
    }
    let diff = &g.data - &k.data;
    Ok(frobenius_norm(diff.view()))
}

/// The regularization scale of rank-`r` projection analysis:
/// `lambda = (1/r) * sum_{i>r} lambda_i(K)`.
pub fn projection_lambda(k: &KernelMatrix, r: usize) -> Result<f64> {
    if r < 1 || r >= k.n() {
        return Err(Error::Config(format!(
            "projection rank must satisfy 1 <= r < n, got r = {r}, n = {}",
            k.n()
        )));
    }
    let evals = clamped_spectrum(k)?;
    Ok(evals.iter().skip(r).sum::<f64>() / r as f64)
}

/// Worst relative disagreement of projection residuals
/// `|Tr(G - PGP) - Tr(K - PKP)| / Tr(K - PKP)` over a rank-`r` test family:
/// the top-`r` eigenframes of `K` and of `G`, plus `trials` random
/// orthonormal frames. Returns infinity when some residual `Tr(K - PKP)`
/// degenerates below 1e-12.
pub fn projection_cost_gap(
    k: &KernelMatrix,
    g: &KernelMatrix,
    r: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let n = k.n();
    if g.n() != n {
        return Err(Error::Domain(format!(
            "kernel matrices differ in size: {n} vs {}",
            g.n()
        )));
    }
    if r < 1 || r >= n {
        return Err(Error::Config(format!(
            "projection rank must satisfy 1 <= r < n, got r = {r}, n = {n}"
        )));
    }
    let (_, vk) = sym_eig(k.data())?;
    let (_, vg) = sym_eig(g.data())?;
    let mut frames = vec![
        vk.slice(ndarray::s![.., ..r]).to_owned(),
        vg.slice(ndarray::s![.., ..r]).to_owned(),
    ];
    for t in 0..trials {
        frames.push(random_frame(n, r, seed, t as u64));
    }
    let trace_k = k.data.diag().sum();
    let trace_g = g.data.diag().sum();
    let mut worst = 0.0f64;
    for frame in &frames {
        let rk = trace_k - projected_trace(k.data(), frame);
        let rg = trace_g - projected_trace(g.data(), frame);
        if rk <= 1e-12 {
            return Ok(f64::INFINITY);
        }
        worst = worst.max((rg - rk).abs() / rk);
    }
    Ok(worst)
}

/// `Tr(V^T M V)` for an orthonormal frame `V` (`n x r`).
fn projected_trace(m: ArrayView2<'_, f64>, v: &Array2<f64>) -> f64 {
    let mv = m.dot(v);
    let mut sum = 0.0;
    for j in 0..v.ncols() {
        sum += v.column(j).dot(&mv.column(j));
    }
    sum
}

/// Random orthonormal `n x r` frame: Gaussian draws from the `(seed, trial)`
/// stream, orthonormalized by modified Gram-Schmidt.
fn random_frame(n: usize, r: usize, seed: u64, trial: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - trial);
    let mut frame = Array2::<f64>::zeros((n, r));
    for j in 0..r {
        loop {
            for i in 0..n {
                frame[(i, j)] = rng.sample(StandardNormal);
            }
            for prev in 0..j {
                let proj = frame.column(j).dot(&frame.column(prev));
                for i in 0..n {
                    frame[(i, j)] -= proj * frame[(i, prev)];
                }
            }
            let norm = frame.column(j).dot(&frame.column(j)).sqrt();
            if norm > 1e-10 {
                frame.column_mut(j).mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    frame
}

/// Flat JSON report of the spectral diagnostics for one feature build.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpectralReport {
    pub achieved_eps: f64,
    pub stat_dim: f64,
    pub frob_err: f64,
    pub proj_cost_gap: f64,
    pub lambda: f64,
    pub rank: usize,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}
