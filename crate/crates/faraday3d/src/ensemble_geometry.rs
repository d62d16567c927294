//! Atomic cloud, species and probe parameters; effective atom numbers and the
//! forward-scattering observables.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::paraxial_optics::{lg_mode, BeamParameters, ModeIndex};
use crate::quad::Adaptive;
use crate::{Error, Result};

/// Multiply a density in cm⁻³ by this to get µm⁻³.
pub const CM3_TO_UM3: f64 = 1e-12;

/// Cylindrically symmetric Gaussian density `η0 exp(-2ρ²/σ⊥² - 2z²/σz²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudGeometry {
    pub sigma_perp: f64,
    pub sigma_z: f64,
    pub peak_density_eta0: f64,
    pub total_n: f64,
    pub aspect_ratio: f64,
}

fn gaussian_volume(sigma_perp: f64, sigma_z: f64) -> f64 {
    (PI / 2.0).powf(1.5) * sigma_perp * sigma_perp * sigma_z
}

impl CloudGeometry {
    pub fn from_density(sigma_perp: f64, sigma_z: f64, eta0: f64) -> Result<Self> {
        check_widths(sigma_perp, sigma_z)?;
        if !(eta0 >= 0.0 && eta0.is_finite()) {
            return Err(Error::domain(format!("peak density must be non-negative, got {eta0}")));
        }
        Ok(Self {
            sigma_perp,
            sigma_z,
            peak_density_eta0: eta0,
            total_n: eta0 * gaussian_volume(sigma_perp, sigma_z),
            aspect_ratio: sigma_z / sigma_perp,
        })
    }

    pub fn from_total_n(sigma_perp: f64, sigma_z: f64, total_n: f64) -> Result<Self> {
        check_widths(sigma_perp, sigma_z)?;
        if !(total_n >= 0.0 && total_n.is_finite()) {
            return Err(Error::domain(format!("atom number must be non-negative, got {total_n}")));
        }
        Self::from_density(sigma_perp, sigma_z, total_n / gaussian_volume(sigma_perp, sigma_z))
    }

    /// Cloud of given aspect ratio `σz/σ⊥` and Gaussian volume `σ⊥² σz`.
    pub fn shape_from_aspect(aspect_ratio: f64, sigma2_sigma_z: f64) -> Result<(f64, f64)> {
        if !(aspect_ratio > 0.0 && sigma2_sigma_z > 0.0) {
            return Err(Error::domain("aspect ratio and volume must be positive"));
        }
        let sp = (sigma2_sigma_z / aspect_ratio).cbrt();
        Ok((sp, aspect_ratio * sp))
    }

    pub fn with_density(&self, eta0: f64) -> Result<Self> {
        Self::from_density(self.sigma_perp, self.sigma_z, eta0)
    }

    pub fn density(&self, rho: f64, z: f64) -> f64 {
        self.peak_density_eta0 * (-2.0 * rho * rho / self.sigma_perp.powi(2) - 2.0 * z * z / self.sigma_z.powi(2)).exp()
    }

    /// Transverse column factor `η0 exp(-2z²/σz²)`.
    pub fn axial_density(&self, z: f64) -> f64 {
        self.peak_density_eta0 * (-2.0 * z * z / self.sigma_z.powi(2)).exp()
    }
}

fn check_widths(sigma_perp: f64, sigma_z: f64) -> Result<()> {
    if !(sigma_perp > 0.0 && sigma_perp.is_finite() && sigma_z > 0.0 && sigma_z.is_finite()) {
        return Err(Error::domain(format!(
            "cloud widths must be positive, got sigma_perp = {sigma_perp}, sigma_z = {sigma_z}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomicSpecies {
    pub spin_f: f64,
    pub lande_gf: f64,
    pub wavelength: f64,
    pub resonant_cross_section_sigma0: f64,
}

impl AtomicSpecies {
    pub fn new(spin_f: f64, lande_gf: f64, wavelength: f64) -> Result<Self> {
        let twice = 2.0 * spin_f;
        if !(spin_f > 0.0 && (twice - twice.round()).abs() < 1e-12) {
            return Err(Error::domain(format!("spin f must be a positive half-integer, got {spin_f}")));
        }
        if !(wavelength > 0.0) {
            return Err(Error::domain(format!("wavelength must be positive, got {wavelength}")));
        }
        Ok(Self {
            spin_f,
            lande_gf,
            wavelength,
            resonant_cross_section_sigma0: 3.0 * wavelength * wavelength / (2.0 * PI),
        })
    }

    /// Spin-1/2 with `g_f = 2`.
    pub fn spin_half(wavelength: f64) -> Result<Self> {
        Self::new(0.5, 2.0, wavelength)
    }

    /// Cesium `f = 4` ground manifold with `g_f = 1/4`.
    pub fn cesium_f4(wavelength: f64) -> Result<Self> {
        Self::new(4.0, 0.25, wavelength)
    }

    pub fn is_spin_half(&self) -> bool {
        (self.spin_f - 0.5).abs() < 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeParameters {
    pub gamma0: f64,
    pub kappa: f64,
}

impl ProbeParameters {
    /// Measurement strength `κ = σ0 γ0 / (9 f² A)`.
    pub fn new(gamma0: f64, species: &AtomicSpecies, beam: &BeamParameters) -> Self {
        let f = species.spin_f;
        let kappa = species.resonant_cross_section_sigma0 * gamma0 / (9.0 * f * f * beam.mode_area_a);
        Self { gamma0, kappa }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveNumbers {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    pub od_eff: f64,
}

/// Point in cylindrical coordinates about the beam axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub rho: f64,
    pub phi: f64,
    pub z: f64,
}

impl Position {
    pub fn new(rho: f64, phi: f64, z: f64) -> Self {
        Self { rho, phi, z }
    }

    pub fn on_axis(z: f64) -> Self {
        Self { rho: 0.0, phi: 0.0, z }
    }
}

/// `β_pl(r) = u_pl*(r) u_00(r)`.
pub fn beta_weight(mode: ModeIndex, pos: Position, beam: &BeamParameters) -> Complex64 {
    lg_mode(mode, pos.rho, pos.phi, pos.z, beam).conj() * lg_mode(ModeIndex::FUNDAMENTAL, pos.rho, pos.phi, pos.z, beam)
}

/// Probe intensity weight `|u_00(r)|²`.
pub fn intensity_weight(pos: Position, beam: &BeamParameters) -> f64 {
    lg_mode(ModeIndex::FUNDAMENTAL, pos.rho, pos.phi, pos.z, beam).norm_sqr()
}

/// Analytic transverse integral `∫ e^{-2ρ²/σ⊥²} |u_00|^{2K} d²r` at plane `z`.
pub fn transverse_weight_integral(k: u32, z: f64, sigma_perp: f64, beam: &BeamParameters) -> f64 {
    let w = beam.width(z);
    let w2 = w * w;
    let s2 = sigma_perp * sigma_perp;
    let kk = k as f64;
    (beam.waist_w0 / w).powi(2 * k as i32) * PI * s2 * w2 / (2.0 * (w2 + kk * s2))
}

fn z_quadrature() -> Adaptive {
    Adaptive::new(20, 1e-13, 0.0, 40)
}

/// `N_eff^(K) = ∫ η |u_00|^{2K} d³r`.
pub fn effective_atom_number(k: u32, cloud: &CloudGeometry, beam: &BeamParameters) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("effective atom number needs K >= 1"));
    }
    let zmax = 6.0 * cloud.sigma_z;
    let est = z_quadrature().real_or_err(&format!("N_eff^({k})"), -zmax, zmax, |z| {
        cloud.axial_density(z) * transverse_weight_integral(k, z, cloud.sigma_perp, beam)
    })?;
    Ok(est.value)
}

/// Same integral with the transverse part done by radial quadrature instead of
/// the closed form. Slower; used to check the analytic reduction.
pub fn effective_atom_number_quadrature(k: u32, cloud: &CloudGeometry, beam: &BeamParameters) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("effective atom number needs K >= 1"));
    }
    let zmax = 6.0 * cloud.sigma_z;
    let radial = Adaptive::new(20, 1e-13, 0.0, 40);
    let mut inner_fail: Option<f64> = None;
    let est = z_quadrature().real_or_err(&format!("N_eff^({k}) full"), -zmax, zmax, |z| {
        let w = beam.width(z);
        let rmax = 6.0 * w.max(cloud.sigma_perp);
        let r = radial.real(0.0, rmax, |rho| {
            let u2 = intensity_weight(Position::new(rho, 0.0, z), beam);
            cloud.density(rho, z) * u2.powi(k as i32) * 2.0 * PI * rho
        });
        match r {
            Ok(e) => e.value,
            Err(res) => {
                inner_fail = Some(res);
                f64::NAN
            }
        }
    })?;
    if let Some(residual) = inner_fail {
        return Err(Error::Quadrature { what: "N_eff radial".into(), residual });
    }
    Ok(est.value)
}

pub fn od_eff(cloud: &CloudGeometry, beam: &BeamParameters, species: &AtomicSpecies) -> Result<f64> {
    Ok(effective_atom_number(2, cloud, beam)? * species.resonant_cross_section_sigma0 / beam.mode_area_a)
}

pub fn effective_numbers(
    cloud: &CloudGeometry,
    beam: &BeamParameters,
    species: &AtomicSpecies,
) -> Result<EffectiveNumbers> {
    let n1 = effective_atom_number(1, cloud, beam)?;
    let n2 = effective_atom_number(2, cloud, beam)?;
    let n3 = effective_atom_number(3, cloud, beam)?;
    Ok(EffectiveNumbers { n1, n2, n3, od_eff: n2 * species.resonant_cross_section_sigma0 / beam.mode_area_a })
}

/// Peak density giving `od_eff = target_od` for a cloud of widths `(σ⊥, σz)`.
pub fn solve_density_for_od(
    target_od: f64,
    shape: (f64, f64),
    beam: &BeamParameters,
    species: &AtomicSpecies,
) -> Result<f64> {
    if !(target_od >= 0.0 && target_od.is_finite()) {
        return Err(Error::domain(format!("target OD must be non-negative, got {target_od}")));
    }
    if target_od == 0.0 {
        return Ok(0.0);
    }
    let unit = CloudGeometry::from_density(shape.0, shape.1, 1.0)?;
    let i2 = effective_atom_number(2, &unit, beam)?;
    Ok(target_od * beam.mode_area_a / (species.resonant_cross_section_sigma0 * i2))
}

/// Local diffuse scattering rate `γ_s = γ0 |u_00|²`.
pub fn local_scattering_rate(pos: Position, beam: &BeamParameters, gamma0: f64) -> f64 {
    gamma0 * intensity_weight(pos, beam)
}

/// `ξ = OD_eff γ0 T / (18 f)`.
pub fn coupling_strength_xi(od_eff: f64, gamma0: f64, t: f64, spin_f: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("probe time must be non-negative, got {t}")));
    }
    Ok(od_eff * gamma0 * t / (18.0 * spin_f))
}

/// Intensity-weighted collective spin `Σ_i |u_00(r_i)|² ⟨f_z^(i)⟩`.
pub fn faraday_signal(spin_z: &[f64], positions: &[Position], beam: &BeamParameters) -> Result<f64> {
    if spin_z.len() != positions.len() {
        return Err(Error::domain(format!("{} spin values for {} positions", spin_z.len(), positions.len())));
    }
    Ok(spin_z.iter().zip(positions).map(|(&fz, &p)| intensity_weight(p, beam) * fz).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardCoefficients {
    pub phase_shift: f64,
    pub attenuation: f64,
    pub faraday_angle: f64,
    pub birefringence_angle: f64,
}

/// Forward-scattered phase, attenuation and polarization rotations of one dipole.
pub fn dipole_forward_coefficients(
    alpha_xx: Complex64,
    alpha_yx: Complex64,
    pos: Position,
    beam: &BeamParameters,
) -> ForwardCoefficients {
    let c = PI * beam.wavenumber_k0 / beam.mode_area_a * intensity_weight(pos, beam);
    ForwardCoefficients {
        phase_shift: 2.0 * c * alpha_xx.re,
        attenuation: 4.0 * c * alpha_xx.im,
        faraday_angle: -4.0 * c * alpha_yx.im,
        birefringence_angle: 4.0 * c * alpha_yx.re,
    }
}
