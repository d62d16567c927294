//! Quadrature utilities: adaptive Gauss-Legendre on finite intervals and
//! generalized Gauss-Laguerre rules for polynomial-times-exponential integrands.

use std::num::NonZeroUsize;

use gauss_quad::{FiniteAboveNegOneF64, GaussLaguerre, GaussLegendre};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Settings for [`Adaptive`] integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Radial cutoff in units of `max(w(z), sigma_perp)`.
    pub cutoff: f64,
    /// Optional transverse cloud width entering the cutoff.
    pub sigma_perp: Option<f64>,
    /// Gauss-Legendre nodes per panel.
    pub nodes: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Maximum bisection depth.
    pub max_depth: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { cutoff: 6.0, sigma_perp: None, nodes: 20, rtol: 1e-13, atol: 1e-15, max_depth: 30 }
    }
}

/// Value and error estimate of a converged integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub error: f64,
}

/// Panel-bisecting Gauss-Legendre integrator.
///
/// Each panel is compared against the sum over its two halves; panels whose
/// difference exceeds their share of the tolerance are split again.
#[derive(Debug, Clone)]
pub struct Adaptive {
    pairs: Vec<(f64, f64)>,
    rtol: f64,
    atol: f64,
    max_depth: u32,
}

impl Adaptive {
    pub fn new(nodes: usize, rtol: f64, atol: f64, max_depth: u32) -> Self {
        let n = NonZeroUsize::new(nodes.max(2)).unwrap();
        let pairs = GaussLegendre::new(n).as_node_weight_pairs().to_vec();
        Self { pairs, rtol, atol, max_depth }
    }

    pub fn from_spec(spec: &QuadratureSpec) -> Self {
        Self::new(spec.nodes, spec.rtol, spec.atol, spec.max_depth)
    }

    fn panel<F: FnMut(f64) -> Complex64>(&self, a: f64, b: f64, f: &mut F) -> Complex64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = Complex64::new(0.0, 0.0);
        for &(x, w) in &self.pairs {
            acc += f(mid + half * x) * w;
        }
        acc * half
    }

    /// Integrate a complex integrand over `[a, b]`.
    pub fn complex<F>(&self, a: f64, b: f64, mut f: F) -> std::result::Result<Estimate<Complex64>, f64>
    where
        F: FnMut(f64) -> Complex64,
    {
        if a == b {
            return Ok(Estimate { value: Complex64::new(0.0, 0.0), error: 0.0 });
        }
        let span = (b - a).abs();
        let whole = self.panel(a, b, &mut f);
        let scale = whole.norm();
        let mut stack = vec![(a, b, whole, 0u32)];
        let mut total = Complex64::new(0.0, 0.0);
        let mut err = 0.0;
        let mut failed = false;
        while let Some((lo, hi, coarse, depth)) = stack.pop() {
            let mid = 0.5 * (lo + hi);
            let left = self.panel(lo, mid, &mut f);
            let right = self.panel(mid, hi, &mut f);
            let fine = left + right;
            let diff = (fine - coarse).norm();
            let share = (hi - lo).abs() / span;
            let tol = (self.atol * share).max(self.rtol * fine.norm().max(scale * share));
            if diff <= tol || (hi - lo).abs() <= span * 1e-15 {
                total += fine;
                err += diff;
            } else if depth >= self.max_depth {
                total += fine;
                err += diff;
                failed = true;
            } else {
                stack.push((mid, hi, right, depth + 1));
                stack.push((lo, mid, left, depth + 1));
            }
        }
        if failed && err > self.atol.max(self.rtol * total.norm()) {
            Err(err)
        } else {
            Ok(Estimate { value: total, error: err })
        }
    }

    /// Integrate a real integrand over `[a, b]`.
    pub fn real<F>(&self, a: f64, b: f64, mut f: F) -> std::result::Result<Estimate<f64>, f64>
    where
        F: FnMut(f64) -> f64,
    {
        self.complex(a, b, |x| Complex64::new(f(x), 0.0)).map(|e| Estimate { value: e.value.re, error: e.error })
    }

    /// Like [`Adaptive::real`] but mapping failure to a crate error.
    pub fn real_or_err<F>(&self, what: &str, a: f64, b: f64, f: F) -> Result<Estimate<f64>>
    where
        F: FnMut(f64) -> f64,
    {
        self.real(a, b, f).map_err(|residual| Error::Quadrature { what: what.into(), residual })
    }
}

impl Default for Adaptive {
    fn default() -> Self {
        Self::from_spec(&QuadratureSpec::default())
    }
}

/// Nodes and weights for `∫_0^∞ x^alpha e^{-x} g(x) dx`.
pub fn laguerre_rule(nodes: usize, alpha: f64) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(nodes.max(1)).unwrap();
    let a = FiniteAboveNegOneF64::new(alpha).expect("alpha must exceed -1");
    GaussLaguerre::new(n, a).as_node_weight_pairs().to_vec()
}
