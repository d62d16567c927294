//! Gaussian beam parameters, Laguerre-Gauss modes and the paraxial propagator.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::quad::{Adaptive, QuadratureSpec};
use crate::{Error, Result};

/// Cesium D2 line, the default probe wavelength in µm.
pub const DEFAULT_WAVELENGTH_UM: f64 = 0.852;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParameters {
    pub wavelength: f64,
    pub waist_w0: f64,
    pub rayleigh_zr: f64,
    pub mode_area_a: f64,
    pub wavenumber_k0: f64,
}

/// Convenience alias for [`BeamParameters::new`].
pub fn beam_derived(wavelength: f64, waist: f64) -> Result<BeamParameters> {
    BeamParameters::new(wavelength, waist)
}

impl BeamParameters {
    pub fn new(wavelength: f64, waist: f64) -> Result<Self> {
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::domain(format!("wavelength must be positive, got {wavelength}")));
        }
        if !(waist > 0.0 && waist.is_finite()) {
            return Err(Error::domain(format!("waist must be positive, got {waist}")));
        }
        let k0 = 2.0 * PI / wavelength;
        Ok(Self {
            wavelength,
            waist_w0: waist,
            rayleigh_zr: k0 * waist * waist / 2.0,
            mode_area_a: PI * waist * waist / 2.0,
            wavenumber_k0: k0,
        })
    }

    /// Spot size `w(z)`.
    pub fn width(&self, z: f64) -> f64 {
        let t = z / self.rayleigh_zr;
        self.waist_w0 * (1.0 + t * t).sqrt()
    }

    pub fn gaussian_params(&self, z: f64) -> GaussianParams {
        gaussian_params(z, self)
    }
}

/// Local beam width, wavefront radius and Gouy phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub w: f64,
    /// Wavefront radius of curvature; infinite at the focus.
    pub r: f64,
    pub gouy: f64,
}

impl GaussianParams {
    /// `1/R(z)`, zero at the focus.
    pub fn inv_r(&self) -> f64 {
        if self.r.is_infinite() {
            0.0
        } else {
            1.0 / self.r
        }
    }
}

pub fn gaussian_params(z: f64, beam: &BeamParameters) -> GaussianParams {
    let zr = beam.rayleigh_zr;
    let r = if z == 0.0 { f64::INFINITY } else { z * (1.0 + (zr / z).powi(2)) };
    GaussianParams { w: beam.width(z), r, gouy: (z / zr).atan() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub p: u32,
    pub l: i32,
}

impl ModeIndex {
    pub const FUNDAMENTAL: ModeIndex = ModeIndex { p: 0, l: 0 };

    pub fn new(p: u32, l: i32) -> Self {
        Self { p, l }
    }

    /// `sqrt(p! / (p + |l|)!)`.
    pub fn norm(&self) -> f64 {
        let al = self.l.unsigned_abs();
        (1..=al).fold(1.0, |acc, k| acc / ((self.p + k) as f64)).sqrt()
    }

    /// Gouy order `2p + |l| + 1`.
    pub fn gouy_order(&self) -> f64 {
        (2 * self.p + self.l.unsigned_abs() + 1) as f64
    }
}

impl std::fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.p, self.l)
    }
}

/// Generalized Laguerre polynomial `L_p^alpha(x)` by upward recurrence.
pub fn laguerre(p: u32, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if p == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..p {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Real radial factor `N (w0/w) X^{|l|/2} L_p^{|l|}(X) e^{-X/2}` with `X = 2ρ²/w²`.
pub fn radial_amplitude(mode: ModeIndex, x: f64, w0_over_w: f64) -> f64 {
    let al = mode.l.unsigned_abs();
    let lag = laguerre(mode.p, al as f64, x);
    mode.norm() * w0_over_w * x.powf(al as f64 / 2.0) * lag * (-x / 2.0).exp()
}

/// Laguerre-Gauss amplitude `u_pl(ρ, φ, z)`, normalized so `u_00(0,0) = 1`.
pub fn lg_mode(mode: ModeIndex, rho: f64, phi: f64, z: f64, beam: &BeamParameters) -> Complex64 {
    let g = gaussian_params(z, beam);
    let x = 2.0 * rho * rho / (g.w * g.w);
    let amp = radial_amplitude(mode, x, beam.waist_w0 / g.w);
    let phase = beam.wavenumber_k0 * rho * rho * g.inv_r() / 2.0 - mode.gouy_order() * g.gouy - mode.l as f64 * phi;
    Complex64::from_polar(amp, phase)
}

/// Fresnel propagator between planes separated by `dz`.
pub fn propagator(dr_perp: (f64, f64), dz: f64, beam: &BeamParameters) -> Result<Complex64> {
    if dz == 0.0 || !dz.is_finite() {
        return Err(Error::domain("propagator is singular at dz = 0"));
    }
    let k0 = beam.wavenumber_k0;
    let r2 = dr_perp.0 * dr_perp.0 + dr_perp.1 * dr_perp.1;
    let pre = Complex64::new(0.0, -k0 / (2.0 * PI * dz));
    Ok(pre * Complex64::new(0.0, k0 * r2 / (2.0 * dz)).exp())
}

/// `(1/A) ∫ u_a* u_b d²r` at plane `z`, with the azimuthal integral done exactly.
pub fn mode_inner_product(
    a: ModeIndex,
    b: ModeIndex,
    z: f64,
    beam: &BeamParameters,
    spec: &QuadratureSpec,
) -> Result<Complex64> {
    if a.l != b.l {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let w = beam.width(z);
    let rmax = spec.cutoff * w.max(spec.sigma_perp.unwrap_or(0.0));
    let q = Adaptive::from_spec(spec);
    let est = q
        .complex(0.0, rmax, |rho| {
            lg_mode(a, rho, 0.0, z, beam).conj() * lg_mode(b, rho, 0.0, z, beam) * (2.0 * PI * rho)
        })
        .map_err(|residual| Error::Quadrature { what: format!("mode inner product {a}·{b} at z = {z}"), residual })?;
    Ok(est.value / beam.mode_area_a)
}
