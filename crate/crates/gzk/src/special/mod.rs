//! Special-function support: Gegenbauer (ultraspherical) polynomials,
//! spherical-harmonic dimension counts, sphere surface areas, log-gamma, and
//! quadrature rules for the weight `(1 - t^2)^((d-3)/2)` on `[-1, 1]`.
//!
//! The polynomials here are normalized so that `P_d^l(1) = 1`; at `d = 2` they
//! are Chebyshev polynomials of the first kind, at `d = 3` Legendre
//! polynomials. Everything in this module is a pure function of its inputs and
//! safe for unrestricted concurrent use.

mod gamma;
mod gegenbauer;
mod quadrature;

pub use gamma::{log_gamma, sphere_surface};
pub use gegenbauer::{alpha, alpha_f64, binomial, eval_explicit, GegenbauerBasis};
pub use quadrature::{quad_rule, QuadratureRule, ADAPTIVE_NODE_CAP};

pub(crate) use gamma::lgamma_raw;
