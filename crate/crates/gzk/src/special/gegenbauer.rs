use crate::error::{Error, Result};

/// Inputs within this band outside `[-1, 1]` are clamped; beyond it they are
/// rejected. Guards round-off in dot products of normalized vectors.
const CLAMP_TOLERANCE: f64 = 1e-12;

/// Evaluation context for the normalized Gegenbauer (ultraspherical)
/// polynomials `P_d^l`, `l = 0..=q`, in ambient dimension `d`.
///
/// Normalization is `P_d^l(1) = 1` for all `l`; the family is orthogonal on
/// `[-1, 1]` under the weight `(1 - t^2)^((d-3)/2)`. At `d = 2` these are the
/// Chebyshev polynomials of the first kind, at `d = 3` the Legendre
/// polynomials.
#[derive(Debug, Clone)]
pub struct GegenbauerBasis {
    d: usize,
    q: usize,
}

impl GegenbauerBasis {
    pub fn new(d: usize, q: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Domain(format!(
                "Gegenbauer basis requires d >= 2, got {d}"
            )));
        }
        Ok(Self { d, q })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Maximum degree; evaluations return `q + 1` values.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Evaluates `P_d^0(t), ..., P_d^q(t)`.
    pub fn eval_all(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.q + 1];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Allocation-free variant of [`eval_all`](Self::eval_all) for hot loops;
    /// `out` must hold exactly `q + 1` entries.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        assert_eq!(out.len(), self.q + 1, "output slice must hold q + 1 values");
        let t = clamp_argument(t)?;
        out[0] = 1.0;
        if self.q == 0 {
            return Ok(());
        }
        out[1] = t;
        if self.d == 2 {
            // Chebyshev first-kind recurrence (the ultraspherical parameter
            // (d-2)/2 degenerates to 0 at d = 2)
            for l in 2..=self.q {
                out[l] = 2.0 * t * out[l - 1] - out[l - 2];
            }
        } else {
            // three-term recurrence for the ultraspherical family with
            // parameter (d-2)/2, rescaled so every degree has value 1 at t=1:
            //   P_l = ((2l+d-4) t P_{l-1} - (l-1) P_{l-2}) / (l+d-3)
            let d = self.d as f64;
            for l in 2..=self.q {
                let lf = l as f64;
                out[l] = ((2.0 * lf + d - 4.0) * t * out[l - 1]
                    - (lf - 1.0) * out[l - 2])
                    / (lf + d - 3.0);
            }
        }
        Ok(())
    }
}

fn clamp_argument(t: f64) -> Result<f64> {
    if !t.is_finite() || t.abs() > 1.0 + CLAMP_TOLERANCE {
        return Err(Error::Domain(format!(
            "Gegenbauer argument must lie in [-1, 1] (tolerance 1e-12), got {t}"
        )));
    }
    Ok(t.clamp(-1.0, 1.0))
}

/// Dimension `alpha_{l,d}` of the space of degree-`l` spherical harmonics on
/// `S^(d-1)`: 1 for `l = 0`, `d` for `l = 1`, and the binomial difference
/// `C(d+l-1, l) - C(d+l-3, l-2)` otherwise. Exact integer arithmetic; errors
/// if the value overflows `u128`.
pub fn alpha(l: usize, d: usize) -> Result<u128> {
    if d < 2 {
        return Err(Error::Domain(format!("alpha requires d >= 2, got {d}")));
    }
    match l {
        0 => Ok(1),
        1 => Ok(d as u128),
        _ => {
            let a = binomial(d + l - 1, l)
                .map_err(|_| Error::Overflow(format!("alpha({l}, {d})")))?;
            let b = binomial(d + l - 3, l - 2)
                .map_err(|_| Error::Overflow(format!("alpha({l}, {d})")))?;
            Ok(a - b)
        }
    }
}

/// `alpha(l, d)` as an `f64` (errors only on `u128` overflow; values beyond
/// 2^53 lose integer precision but stay exact enough for log-space use).
pub fn alpha_f64(l: usize, d: usize) -> Result<f64> {
    Ok(alpha(l, d)? as f64)
}

/// `C(n, k)` with overflow checking; the incremental form keeps every
/// intermediate value an exact binomial coefficient.
pub fn binomial(n: usize, k: usize) -> Result<u128> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc
            .checked_mul((n - k + i) as u128)
            .ok_or_else(|| Error::Overflow(format!("binomial({n}, {k})")))?
            / i as u128;
    }
    Ok(acc)
}

/// Maximum degree accepted by [`eval_explicit`]; the explicit sum loses
/// accuracy beyond this.
const EXPLICIT_MAX_DEGREE: usize = 30;

/// Direct evaluation of `P_d^l(t)` via the explicit sum
/// `sum_j c_j t^(l-2j) (1-t^2)^j` with `c_0 = 1` and
/// `c_{j+1} = -((l-2j)(l-2j-1)) / (2(j+1)(d-1+2j)) * c_j`.
///
/// Test oracle only: quadratic cost and unstable beyond degree 30, but
/// independent of the recurrence used by [`GegenbauerBasis::eval_all`].
pub fn eval_explicit(l: usize, d: usize, t: f64) -> Result<f64> {
    if l > EXPLICIT_MAX_DEGREE {
        return Err(Error::Unsupported(format!(
            "eval_explicit supports degrees <= {EXPLICIT_MAX_DEGREE}, got {l}"
        )));
    }
    if d < 2 {
        return Err(Error::Domain(format!(
            "eval_explicit requires d >= 2, got {d}"
        )));
    }
    let t = clamp_argument(t)?;
    let one_minus_t2 = (1.0 - t * t).max(0.0);
    let mut c = 1.0;
    let mut total = 0.0;
    for j in 0..=(l / 2) {
        total += c * t.powi((l - 2 * j) as i32) * one_minus_t2.powi(j as i32);
        let lj = (l - 2 * j) as f64;
        c *= -(lj * (lj - 1.0)) / (2.0 * (j as f64 + 1.0) * (d as f64 - 1.0 + 2.0 * j as f64));
    }
    Ok(total)
}
