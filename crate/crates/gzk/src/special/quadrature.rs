use crate::error::{Error, Result};

/// Hard ceiling for adaptive node-count doubling (see
/// `kernel::gegenbauer_coefficients`): rules never exceed this many nodes.
pub const ADAPTIVE_NODE_CAP: usize = 4096;

/// Nodes and weights for integrating against `(1 - t^2)^((d-3)/2) dt` on
/// `[-1, 1]`.
///
/// - odd `d`: Gauss-Legendre with the (polynomial) weight folded into the
///   quadrature weights, so integration stays spectrally exact;
/// - even `d`: the substitution `t = cos(theta)` turns the integral into
///   `int_0^pi f(cos theta) sin^(d-2)(theta) d(theta)`, whose integrand
///   extends to a smooth 2pi-periodic function, so the midpoint rule in
///   `theta` converges spectrally and integrates polynomials of degree
///   `<= 2N + 1 - d` exactly. `d = 2` reduces to classical Chebyshev-Gauss.
///
/// The even-`d` half-integer weight cannot be folded into Gauss-Legendre
/// without losing spectral accuracy: its endpoint derivative singularity
/// degrades that combination to `N^-3`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    d: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_i w_i f(t_i)`, approximating `int f(t) (1-t^2)^((d-3)/2) dt`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Builds the quadrature rule for dimension `d` with `n_nodes` nodes.
pub fn quad_rule(d: usize, n_nodes: usize) -> Result<QuadratureRule> {
    if d < 2 {
        return Err(Error::Domain(format!("quad_rule requires d >= 2, got {d}")));
    }
    if n_nodes < 2 {
        return Err(Error::Config(format!(
            "quad_rule requires at least 2 nodes, got {n_nodes}"
        )));
    }
    if d % 2 == 0 {
        // midpoint rule in theta: t_i = cos((2i-1) pi / 2N), weights
        // (pi/N) sin^(d-2)(theta_i); computed for one half and mirrored so
        // the rule is exactly symmetric. The middle node of an odd-length
        // rule sits at theta = pi/2 where the weight factor is exactly 1.
        let n = n_nodes;
        let base = std::f64::consts::PI / n as f64;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![base; n];
        for i in 0..n / 2 {
            let theta = (2 * i + 1) as f64 * std::f64::consts::PI / (2.0 * n as f64);
            let w = base * theta.sin().powi(d as i32 - 2);
            let x = theta.cos();
            nodes[n - 1 - i] = x;
            nodes[i] = -x;
            weights[n - 1 - i] = w;
            weights[i] = w;
        }
        return Ok(QuadratureRule { d, nodes, weights });
    }
    let (nodes, mut weights) = gauss_legendre(n_nodes);
    if d >= 5 {
        let exponent = (d - 3) / 2;
        for (w, &t) in weights.iter_mut().zip(&nodes) {
            *w *= (1.0 - t * t).powi(exponent as i32);
        }
    }
    Ok(QuadratureRule { d, nodes, weights })
}

/// Gauss-Legendre nodes and weights by Newton iteration on `P_n`.
///
/// Initial guesses `cos(pi (i - 1/4)/(n + 1/2))` converge in a handful of
/// steps; nodes are computed for one half and mirrored so the rule is exactly
/// symmetric.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        // one polishing step so the weight uses a converged derivative
        let (p, dp) = legendre_with_derivative(n, x);
        x -= p / dp;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // i = 0 is the node closest to +1; mirror to the negative half
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, dp) = legendre_with_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (dp * dp);
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` for the classical Legendre polynomial via its
/// three-term recurrence; the derivative uses `P_n' = n (x P_n - P_{n-1}) /
/// (x^2 - 1)`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let nf = n as f64;
    let dp = if (x.abs() - 1.0).abs() < 1e-300 {
        // endpoint limit, unused by interior Gauss nodes
        x.signum() * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{alpha_f64, sphere_surface, GegenbauerBasis};

    #[test]
    fn rejects_bad_configs() {
        assert!(quad_rule(1, 16).is_err());
        assert!(quad_rule(3, 1).is_err());
    }

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        let rule = quad_rule(3, 8).unwrap();
        assert!((rule.integrate(|_| 1.0) - 2.0).abs() < 1e-14);
        // degree <= 2N-1 exactness: t^14 integrates to 2/15
        assert!((rule.integrate(|t| t.powi(14)) - 2.0 / 15.0).abs() < 1e-14);
        assert!(rule.integrate(|t| t.powi(7)).abs() < 1e-15);
    }

    #[test]
    fn orthogonality_reference_values() {
        // d=3: int P2 P2 dt = 4pi/(5 * 2pi) = 0.4
        let rule = quad_rule(3, 16).unwrap();
        let basis = GegenbauerBasis::new(3, 2).unwrap();
        let integral = rule.integrate(|t| {
            let v = basis.eval_all(t).unwrap();
            v[2] * v[2]
        });
        assert!((integral - 0.4).abs() < 1e-13);

        // d=2: distinct degrees integrate to zero
        let rule = quad_rule(2, 16).unwrap();
        let basis = GegenbauerBasis::new(2, 5).unwrap();
        let integral = rule.integrate(|t| {
            let v = basis.eval_all(t).unwrap();
            v[3] * v[5]
        });
        assert!(integral.abs() < 1e-12);
    }

    #[test]
    fn weight_sums_match_sphere_ratio() {
        // sum of weights = |S^(d-1)| / (alpha_{0,d} |S^(d-2)|)
        for (d, n) in [(2, 64), (3, 64), (4, 64), (5, 64), (8, 64), (32, 64)] {
            let rule = quad_rule(d, n).unwrap();
            let total: f64 = rule.weights().iter().sum();
            let expected = sphere_surface(d).unwrap()
                / (alpha_f64(0, d).unwrap() * sphere_surface(d - 1).unwrap());
            assert!(
                ((total - expected) / expected).abs() <= 1e-10,
                "d={d} n={n}: {total} vs {expected}"
            );
        }
    }

    #[test]
    fn nodes_are_symmetric_and_interior() {
        for d in [2, 3, 6] {
            let rule = quad_rule(d, 33).unwrap();
            let n = rule.len();
            for i in 0..n {
                assert!(rule.nodes()[i] > -1.0 && rule.nodes()[i] < 1.0);
                assert_eq!(rule.nodes()[i], -rule.nodes()[n - 1 - i]);
                assert!(rule.weights()[i] > 0.0);
            }
        }
    }
}
