//! Random feature matrices from uniform sphere samples.
//!
//! For sphere directions `w_1, ..., w_m` the feature vector of a point `x` is
//!
//! ```text
//! phi_x(w) = sum_{l<=q} sqrt(alpha_{l,d}) h_l(||x||) P_d^l(<x,w>/||x||)
//! ```
//!
//! (an `s`-vector per direction), and the feature matrix stacks the per-sample
//! blocks scaled by `1/sqrt(m)` so that `E[Z^T Z]` is exactly the truncated
//! kernel Gram matrix. Sampling uses one counter-based stream per sample
//! index, which makes the matrix bit-identical regardless of how the work is
//! split across threads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::{GzkModel, ZERO_NORM_EPS};
use crate::linalg::Cholesky;
use crate::special::binomial;
use crate::threads;

const MAGIC: &[u8; 4] = b"GZKF";
const FORMAT_VERSION: u32 = 1;

/// Draws `m` i.i.d. uniform points on `S^(d-1)` (rows of the result) by
/// normalizing standard-normal vectors. Sample `j` comes from an independent
/// stream keyed by `(seed, j)`, so any subset of rows can be regenerated
/// without drawing the others.
pub fn sample_sphere(d: usize, m: usize, seed: u64) -> Result<Array2<f64>> {
    if d < 2 {
        return Err(Error::Config(format!(
            "sphere sampling requires d >= 2, got {d}"
        )));
    }
    if m < 1 {
        return Err(Error::Config("sample count m must be >= 1".into()));
    }
    let mut out = Array2::<f64>::zeros((m, d));
    for (j, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        loop {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = row.dot(&row).sqrt();
            // probability ~0; continuing the stream is the "incremented
            // counter" resample
            if norm >= ZERO_NORM_EPS {
                row.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    Ok(out)
}

/// Per-dataset precomputation for feature evaluation: normalized points and
/// one radial table per distinct norm, rows pre-scaled by `sqrt(alpha_{l,d})`.
#[derive(Debug, Clone)]
pub struct RadialCache {
    /// `d x n`; zero-norm points keep a zero column.
    unit_x: Array2<f64>,
    /// Point index -> index into `tables` (deduplicated by norm bit pattern).
    table_of: Vec<usize>,
    tables: Vec<Array2<f64>>,
    zero_norm: Vec<bool>,
}

impl RadialCache {
    pub fn new(model: &GzkModel, x: ArrayView2<'_, f64>) -> Result<Self> {
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
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite dataset entry at flat index {bad}"
            )));
        }
        let sqrt_alpha = model.sqrt_alpha();
        let mut unit_x = x.to_owned();
        let mut table_of = Vec::with_capacity(n);
        let mut tables: Vec<Array2<f64>> = Vec::new();
        let mut seen: Vec<(u64, usize)> = Vec::new();
        let mut zero_norm = Vec::with_capacity(n);
        for mut col in unit_x.axis_iter_mut(Axis(1)) {
            let norm = col.dot(&col).sqrt();
            let is_zero = norm < ZERO_NORM_EPS;
            zero_norm.push(is_zero);
            if is_zero {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| v / norm);
            }
            let key = norm.to_bits();
            let idx = match seen.iter().find(|(k, _)| *k == key) {
                Some((_, idx)) => *idx,
                None => {
                    let mut table = model.radial_table(norm)?.values().to_owned();
                    for (l, mut row) in table.axis_iter_mut(Axis(0)).enumerate() {
                        row.mapv_inplace(|v| v * sqrt_alpha[l]);
                    }
                    tables.push(table);
                    seen.push((key, tables.len() - 1));
                    tables.len() - 1
                }
            };
            table_of.push(idx);
        }
        Ok(Self {
            unit_x,
            table_of,
            tables,
            zero_norm,
        })
    }

    pub fn n(&self) -> usize {
        self.table_of.len()
    }

    fn table(&self, j: usize) -> &Array2<f64> {
        &self.tables[self.table_of[j]]
    }
}

/// Feature block `Phi_w` for one sphere direction: row `j` is the `s`-vector
/// `phi_{x_j}(w)`.
pub fn feature_block(
    w: ArrayView1<'_, f64>,
    model: &GzkModel,
    cache: &RadialCache,
) -> Result<Array2<f64>> {
    check_direction(w, model.d())?;
    let mut out = Array2::<f64>::zeros((model.s(), cache.n()));
    fill_block(w, model, cache, out.view_mut(), 1.0)?;
    Ok(out.t().to_owned())
}

fn check_direction(w: ArrayView1<'_, f64>, d: usize) -> Result<()> {
    if w.len() != d {
        return Err(Error::Domain(format!(
            "direction dimension {} does not match model dimension {d}",
            w.len()
        )));
    }
    let norm = w.dot(&w).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "direction must be unit norm within 1e-9, got ||w|| = {norm}"
        )));
    }
    Ok(())
}

/// Writes `scale * Phi_w^T` (an `s x n` block) into `out`.
fn fill_block(
    w: ArrayView1<'_, f64>,
    model: &GzkModel,
    cache: &RadialCache,
    mut out: ArrayViewMut2<'_, f64>,
    scale: f64,
) -> Result<()> {
    let q = model.q();
    let s = model.s();
    debug_assert_eq!(out.dim(), (s, cache.n()));
    let basis = model.basis();
    let mut p = vec![0.0; q + 1];
    for j in 0..cache.n() {
        let table = cache.table(j);
        if cache.zero_norm[j] {
            // zero-norm convention: only the l = 0 term survives
            for i in 0..s {
                out[(i, j)] = scale * table[(0, i)];
            }
            continue;
        }
        let ct = cache.unit_x.column(j).dot(&w);
        basis.eval_into(ct, &mut p)?;
        for i in 0..s {
            let mut acc = 0.0;
            for (l, &pl) in p.iter().enumerate() {
                acc += pl * table[(l, i)];
            }
            out[(i, j)] = scale * acc;
        }
    }
    Ok(())
}

/// Random feature matrix `Z` of shape `(m*s) x n`; rows `j*s..(j+1)*s` hold
/// `Phi_{w_j}^T / sqrt(m)` and column `j` is the feature vector of point
/// `x_j`. `E[Z^T Z]` equals the truncated kernel Gram matrix.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    m: usize,
    s: usize,
    d: usize,
    seed: u64,
    fingerprint: u64,
}

impl FeatureMatrix {
    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fingerprint of the model that generated the matrix; 0 after loading
    /// from disk (the file format does not carry it).
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Empirical Gram matrix `Z^T Z` (`n x n`).
    pub fn gram(&self) -> Array2<f64> {
        self.data.t().dot(&self.data)
    }

    /// Writes the binary format: magic `GZKF`, version, header fields, then
    /// row-major little-endian doubles.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&(self.s as u32).to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "not a feature file: bad magic {magic:?}"
            )));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported feature-file version {version}"
            )));
        }
        let m = read_u64(&mut r)? as usize;
        let s = read_u32(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let rows = m
            .checked_mul(s)
            .ok_or_else(|| Error::Format("feature-file header overflows".into()))?;
        let count = rows
            .checked_mul(n)
            .ok_or_else(|| Error::Format("feature-file header overflows".into()))?;
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Format(
                "feature file has trailing bytes beyond the declared shape".into(),
            ));
        }
        let data = Array2::from_shape_vec((rows, n), values)
            .map_err(|e| Error::Format(format!("feature-file shape: {e}")))?;
        Ok(Self {
            data,
            m,
            s,
            d,
            seed,
            fingerprint: 0,
        })
    }

    /// CSV export: header row of point indices, then one feature row per line
    /// (feature vectors are the columns).
    pub fn write_csv(&self, out: &mut dyn std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record((0..self.n()).map(|j| j.to_string()))?;
        for row in self.data.rows() {
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn read_u32(r: &mut impl std::io::Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl std::io::Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Builds the feature matrix for a dataset (`x` is `d x n`, columns are
/// points). Deterministic in `(x, model, m, seed)` regardless of thread
/// count: each sample block uses its own random stream and writes a disjoint
/// row range.
pub fn build_features(
    x: ArrayView2<'_, f64>,
    model: &GzkModel,
    m: usize,
    seed: u64,
) -> Result<FeatureMatrix> {
    if m < 1 {
        return Err(Error::Config("feature count m must be >= 1".into()));
    }
    let cache = RadialCache::new(model, x)?;
    let directions = sample_sphere(model.d(), m, seed)?;
    let s = model.s();
    let n = cache.n();
    let scale = 1.0 / (m as f64).sqrt();
    let mut data = Array2::<f64>::zeros((m * s, n));
    threads::pool().install(|| {
        data.axis_chunks_iter_mut(Axis(0), s)
            .into_par_iter()
            .enumerate()
            .try_for_each(|(j, block)| fill_block(directions.row(j), model, &cache, block, scale))
    })?;
    Ok(FeatureMatrix {
        data,
        m,
        s,
        d: model.d(),
        seed,
        fingerprint: model.fingerprint(),
    })
}

/// Closed-form upper bound on the ridge leverage scores:
/// `sum_{l<=q} alpha_{l,d} * min( pi^2 (l+1)^2 / (6 lambda) *
/// sum_j ||h_l(||x_j||)||^2 , s )`.
///
/// Uses the raw radial tables (no `alpha` folding). The bound dominates every
/// realized leverage value and integrates to at least the statistical
/// dimension.
pub fn leverage_bound(
    model: &GzkModel,
    x: ArrayView2<'_, f64>,
    lambda: f64,
    s: usize,
) -> Result<f64> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "leverage bound requires lambda > 0, got {lambda}"
        )));
    }
    if x.nrows() != model.d() {
        return Err(Error::Domain(format!(
            "dataset dimension {} does not match model dimension {}",
            x.nrows(),
            model.d()
        )));
    }
    // one raw table per distinct norm
    let mut seen: Vec<(u64, Array2<f64>)> = Vec::new();
    let mut norm_sums = vec![0.0; model.q() + 1];
    for col in x.axis_iter(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        let key = norm.to_bits();
        if !seen.iter().any(|(k, _)| *k == key) {
            seen.push((key, model.radial_table(norm)?.values().to_owned()));
        }
        let table = &seen.iter().find(|(k, _)| *k == key).unwrap().1;
        for (l, sum) in norm_sums.iter_mut().enumerate() {
            *sum += table.row(l).iter().map(|v| v * v).sum::<f64>();
        }
    }
    let sqrt_alpha = model.sqrt_alpha();
    let mut bound = 0.0;
    let pi2: f64 = std::f64::consts::PI * std::f64::consts::PI;
    for (l, &sum) in norm_sums.iter().enumerate() {
        let lf = (l + 1) as f64;
        let term = (pi2 * lf * lf / (6.0 * lambda) * sum).min(s as f64);
        bound += sqrt_alpha[l] * sqrt_alpha[l] * term;
    }
    Ok(bound)
}

/// Feature count sufficient for an `(eps, lambda)`-spectral guarantee with
/// probability `1 - delta`: `ceil( 8/(3 eps^2) * ln(16 s_lambda / delta) *
/// bound )`. Advisory only; saturates at `u64::MAX` when astronomically
/// large.
pub fn theoretical_m(eps: f64, delta: f64, s_lambda: f64, bound: f64) -> Result<u64> {
    check_m_inputs(eps, delta, s_lambda)?;
    if bound <= 0.0 || !bound.is_finite() {
        return Err(Error::Config(format!(
            "leverage bound must be positive, got {bound}"
        )));
    }
    let raw = 8.0 / (3.0 * eps * eps) * (16.0 * s_lambda / delta).ln() * bound;
    Ok(ceil_to_u64(raw))
}

/// Combinatorial variant of the feature-count formula:
/// `ceil( 5 q^2 / (4 eps^2) * C(q+d-1, q) * ln(16 s_lambda / delta) )`.
pub fn theoretical_m_combinatorial(
    eps: f64,
    delta: f64,
    s_lambda: f64,
    q: usize,
    d: usize,
) -> Result<u64> {
    check_m_inputs(eps, delta, s_lambda)?;
    let comb = match binomial(q + d - 1, q) {
        Ok(c) => c as f64,
        Err(_) => f64::INFINITY,
    };
    let qf = q as f64;
    let raw = 5.0 * qf * qf / (4.0 * eps * eps) * comb * (16.0 * s_lambda / delta).ln();
    Ok(ceil_to_u64(raw))
}

fn check_m_inputs(eps: f64, delta: f64, s_lambda: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1], got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if s_lambda <= 0.0 || !s_lambda.is_finite() {
        return Err(Error::Config(format!(
            "statistical dimension must be positive, got {s_lambda}"
        )));
    }
    Ok(())
}

fn ceil_to_u64(raw: f64) -> u64 {
    if !raw.is_finite() || raw >= u64::MAX as f64 {
        u64::MAX
    } else if raw < 1.0 {
        1
    } else {
        raw.ceil() as u64
    }
}

/// Prefactored `(K + lambda I)^{-1}` for repeated exact leverage-score
/// evaluations.
pub struct LeverageSolver {
    chol: Cholesky,
}

impl LeverageSolver {
    /// `n <= 2000` (dense Cholesky).
    pub fn new(k: ArrayView2<'_, f64>, lambda: f64) -> Result<Self> {
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "leverage solver requires lambda > 0, got {lambda}"
            )));
        }
        let n = k.nrows();
        if n > 2000 {
            return Err(Error::Config(format!(
                "dense leverage solve capped at n = 2000, got {n}"
            )));
        }
        let mut shifted = k.to_owned();
        for i in 0..n {
            shifted[(i, i)] += lambda;
        }
        Ok(Self {
            chol: Cholesky::new(shifted.view())?,
        })
    }

    /// `tau_lambda(w) = Tr( Phi_w^T (K + lambda I)^{-1} Phi_w )` for a
    /// feature block with points along rows (`n x s`).
    pub fn leverage(&self, phi: ArrayView2<'_, f64>) -> Result<f64> {
        if phi.nrows() != self.chol.n() {
            return Err(Error::Domain(format!(
                "feature block has {} rows but the kernel matrix is {}x{}",
                phi.nrows(),
                self.chol.n(),
                self.chol.n()
            )));
        }
        let mut tau = 0.0;
        for col in phi.axis_iter(Axis(1)) {
            tau += self.chol.quad_form(col);
        }
        Ok(tau)
    }
}

/// One-shot exact ridge leverage score; prefer [`LeverageSolver`] when
/// evaluating many directions against the same kernel matrix.
pub fn leverage_exact(k: ArrayView2<'_, f64>, lambda: f64, phi: ArrayView2<'_, f64>) -> Result<f64> {
    LeverageSolver::new(k, lambda)?.leverage(phi)
}
