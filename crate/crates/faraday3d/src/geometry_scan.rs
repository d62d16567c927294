//! Geometry sweeps under a density constraint, optimal-waist searches and the
//! comparison with the symmetric one-dimensional model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble_geometry::{
    effective_numbers, solve_density_for_od, AtomicSpecies, CloudGeometry, EffectiveNumbers, ProbeParameters,
};
use crate::mode_projection::{build_grid, initial_moments, projection_coefficients, WaveBasis};
use crate::paraxial_optics::BeamParameters;
use crate::squeezing_dynamics::{integrate, symmetric_1d_peak, zeta_to_db, ModelConfig, SqueezingTrajectory};
use crate::{Error, Result};

/// How the cloud density is fixed at each grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "target", rename_all = "snake_case")]
pub enum Constraint {
    FixedOdEff(f64),
    FixedTotalN(f64),
    /// Peak density in µm⁻³.
    FixedPeakDensity(f64),
}

impl Constraint {
    /// Cloud of widths `(σ⊥, σz)` satisfying the constraint for this beam.
    pub fn resolve(&self, shape: (f64, f64), beam: &BeamParameters, species: &AtomicSpecies) -> Result<CloudGeometry> {
        match *self {
            Constraint::FixedOdEff(od) => {
                let eta0 = solve_density_for_od(od, shape, beam, species)?;
                CloudGeometry::from_density(shape.0, shape.1, eta0)
            }
            Constraint::FixedTotalN(n) => CloudGeometry::from_total_n(shape.0, shape.1, n),
            Constraint::FixedPeakDensity(eta0) => CloudGeometry::from_density(shape.0, shape.1, eta0),
        }
    }
}

/// Grid axes of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Axes {
    /// Aspect ratio `σz/σ⊥` at fixed Gaussian volume `σ⊥² σz` (µm³).
    AspectWaist { aspect_ratios: Vec<f64>, waists: Vec<f64>, volume: f64 },
    /// Axial width at fixed transverse width.
    SigmaZWaist { sigma_z: Vec<f64>, waists: Vec<f64>, sigma_perp: f64 },
}

impl Axes {
    fn validate(&self) -> Result<()> {
        let (first, waists) = match self {
            Axes::AspectWaist { aspect_ratios, waists, volume } => {
                if !(*volume > 0.0) {
                    return Err(Error::validation("scan volume must be positive"));
                }
                (aspect_ratios, waists)
            }
            Axes::SigmaZWaist { sigma_z, waists, sigma_perp } => {
                if !(*sigma_perp > 0.0) {
                    return Err(Error::validation("scan sigma_perp must be positive"));
                }
                (sigma_z, waists)
            }
        };
        for (name, v) in [("first axis", first), ("waist axis", waists)] {
            if v.is_empty() {
                return Err(Error::validation(format!("{name} is empty")));
            }
            if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::validation(format!("{name} must hold positive values")));
            }
            if v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::validation(format!("{name} must be strictly increasing")));
            }
        }
        Ok(())
    }

    /// `(σ⊥, σz, first-axis value, waist)` in row-major grid order.
    pub fn points(&self) -> Result<Vec<(f64, f64, f64, f64)>> {
        self.validate()?;
        let mut out = Vec::new();
        match self {
            Axes::AspectWaist { aspect_ratios, waists, volume } => {
                for &ar in aspect_ratios {
                    let (sp, sz) = CloudGeometry::shape_from_aspect(ar, *volume)?;
                    for &w in waists {
                        out.push((sp, sz, ar, w));
                    }
                }
            }
            Axes::SigmaZWaist { sigma_z, waists, sigma_perp } => {
                for &sz in sigma_z {
                    for &w in waists {
                        out.push((*sigma_perp, sz, sz, w));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && count >= 2) && !(count == 1 && lo > 0.0) {
        return Err(Error::validation("log grid needs 0 < lo < hi and at least two points"));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect())
}

/// Basis and slicing used for every point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub p_max: u32,
    pub slice_count: usize,
    pub extent_sigmas: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { p_max: 15, slice_count: 61, extent_sigmas: 3.0 }
    }
}

impl Truncation {
    /// Next refinement level used to certify convergence.
    pub fn refined(&self) -> Self {
        Self {
            p_max: self.p_max + self.p_max / 2 + 2,
            slice_count: self.slice_count * 3 / 2,
            extent_sigmas: self.extent_sigmas,
        }
    }
}

/// Settings shared by every point of a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSettings {
    pub gamma0: f64,
    /// Horizon in units of `1/γ0`.
    pub horizon: f64,
    pub rtol: f64,
    pub atol: f64,
    pub samples: usize,
    pub decoherence: bool,
    pub truncation: Truncation,
    /// Re-run each point at a refined truncation and compare peaks.
    pub certify: bool,
    /// Largest peak change (dB) accepted by the certification.
    pub certify_tolerance_db: f64,
}

impl Default for DynamicsSettings {
    fn default() -> Self {
        Self {
            gamma0: 1.0,
            horizon: 10.0,
            rtol: 1e-8,
            atol: 1e-10,
            samples: 401,
            decoherence: true,
            truncation: Truncation::default(),
            certify: false,
            certify_tolerance_db: 0.1,
        }
    }
}

/// Everything computed for one geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub cloud: CloudGeometry,
    pub beam: BeamParameters,
    pub numbers: EffectiveNumbers,
    pub kappa: f64,
    pub trajectory: SqueezingTrajectory,
    /// Peak change against the refined truncation, when certified.
    pub refinement_delta_db: Option<f64>,
    pub converged: bool,
}

impl PointResult {
    pub fn peak_db(&self) -> Option<f64> {
        self.trajectory.peak.map(|p| p.db)
    }
}

fn dynamics_at(
    cloud: &CloudGeometry,
    beam: &BeamParameters,
    species: &AtomicSpecies,
    settings: &DynamicsSettings,
    trunc: &Truncation,
) -> Result<(SqueezingTrajectory, f64)> {
    let probe = ProbeParameters::new(settings.gamma0, species, beam);
    let basis = WaveBasis::symmetric(trunc.p_max);
    let grid = build_grid(cloud, trunc.slice_count, trunc.extent_sigmas)?;
    let tensors = projection_coefficients(&basis, &grid, beam)?;
    let initial = initial_moments(cloud, beam, &basis, &grid, species.spin_f)?;
    let config = ModelConfig {
        kappa: probe.kappa,
        gamma0: settings.gamma0,
        spin_f: species.spin_f,
        rtol: settings.rtol,
        atol: settings.atol,
        horizon: settings.horizon,
        samples: settings.samples,
        decoherence: settings.decoherence,
    };
    Ok((integrate(&initial, &config, &tensors)?, probe.kappa))
}

/// Build the model for one cloud and beam and integrate it.
pub fn evaluate_point(
    cloud: &CloudGeometry,
    beam: &BeamParameters,
    species: &AtomicSpecies,
    settings: &DynamicsSettings,
) -> Result<PointResult> {
    let numbers = effective_numbers(cloud, beam, species)?;
    let (trajectory, kappa) = dynamics_at(cloud, beam, species, settings, &settings.truncation)?;
    let mut refinement_delta_db = None;
    let mut converged = trajectory.peak.is_some_and(|p| !p.boundary) || trajectory.samples.is_empty();
    if settings.certify {
        let (fine, _) = dynamics_at(cloud, beam, species, settings, &settings.truncation.refined())?;
        if let (Some(a), Some(b)) = (trajectory.peak, fine.peak) {
            let d = (a.db - b.db).abs();
            refinement_delta_db = Some(d);
            converged &= d <= settings.certify_tolerance_db;
        }
    }
    Ok(PointResult { cloud: *cloud, beam: *beam, numbers, kappa, trajectory, refinement_delta_db, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub axes: Axes,
    pub constraint: Constraint,
    pub species: AtomicSpecies,
    pub dynamics: DynamicsSettings,
}

/// One row of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub index: usize,
    /// Aspect ratio or axial width, depending on the axes.
    pub axis_value: f64,
    pub aspect_ratio: f64,
    pub waist: f64,
    pub sigma_perp: f64,
    pub sigma_z: f64,
    pub eta0: f64,
    pub total_n: f64,
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    pub od_eff: f64,
    pub peak_db: Option<f64>,
    pub peak_time: Option<f64>,
    pub refinement_delta_db: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub spec: ScanSpec,
    pub records: Vec<ScanRecord>,
}

impl ScanResult {
    /// Record with the largest finite peak squeezing.
    pub fn optimum(&self) -> Option<&ScanRecord> {
        self.records
            .iter()
            .filter(|r| r.peak_db.is_some_and(f64::is_finite))
            .max_by(|a, b| a.peak_db.partial_cmp(&b.peak_db).unwrap())
    }
}

fn scan_point(index: usize, pt: (f64, f64, f64, f64), spec: &ScanSpec) -> ScanRecord {
    let (sp, sz, axis_value, waist) = pt;
    let mut rec = ScanRecord {
        index,
        axis_value,
        aspect_ratio: sz / sp,
        waist,
        sigma_perp: sp,
        sigma_z: sz,
        eta0: f64::NAN,
        total_n: f64::NAN,
        n1: f64::NAN,
        n2: f64::NAN,
        n3: f64::NAN,
        od_eff: f64::NAN,
        peak_db: None,
        peak_time: None,
        refinement_delta_db: None,
        converged: false,
        error: None,
    };
    let run = || -> Result<PointResult> {
        let beam = BeamParameters::new(spec.species.wavelength, waist)?;
        let cloud = spec.constraint.resolve((sp, sz), &beam, &spec.species)?;
        evaluate_point(&cloud, &beam, &spec.species, &spec.dynamics)
    };
    match run() {
        Ok(p) => {
            rec.eta0 = p.cloud.peak_density_eta0;
            rec.total_n = p.cloud.total_n;
            rec.n1 = p.numbers.n1;
            rec.n2 = p.numbers.n2;
            rec.n3 = p.numbers.n3;
            rec.od_eff = p.numbers.od_eff;
            rec.peak_db = p.trajectory.peak.map(|k| k.db);
            rec.peak_time = p.trajectory.peak.map(|k| k.time);
            rec.refinement_delta_db = p.refinement_delta_db;
            rec.converged = p.converged;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Evaluate every grid point; failures are recorded per point.
pub fn run_scan(spec: &ScanSpec) -> Result<ScanResult> {
    let points = spec.axes.points()?;
    let records = points.into_par_iter().enumerate().map(|(i, pt)| scan_point(i, pt, spec)).collect();
    Ok(ScanResult { spec: spec.clone(), records })
}

/// Quantity maximized by [`optimal_waist`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    OdEff,
    PeakSqueezing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaistOptimum {
    pub waist: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Golden-section maximization of the objective over `w0 ∈ [lo, hi]` (log scale).
#[allow(clippy::too_many_arguments)]
pub fn optimal_waist(
    shape: (f64, f64),
    constraint: Constraint,
    objective: Objective,
    bracket: (f64, f64),
    species: &AtomicSpecies,
    settings: &DynamicsSettings,
    tolerance: f64,
) -> Result<WaistOptimum> {
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::validation(format!("waist bracket [{lo}, {hi}] is not an interval")));
    }
    let mut evaluations = 0usize;
    let mut eval = |w: f64| -> Result<f64> {
        evaluations += 1;
        let beam = BeamParameters::new(species.wavelength, w)?;
        let cloud = constraint.resolve(shape, &beam, species)?;
        match objective {
            Objective::OdEff => Ok(effective_numbers(&cloud, &beam, species)?.od_eff),
            Objective::PeakSqueezing => {
                let p = evaluate_point(&cloud, &beam, species, settings)?;
                p.peak_db().ok_or_else(|| Error::validation("no squeezing peak inside the horizon"))
            }
        }
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = eval(x1.exp())?;
    let mut f2 = eval(x2.exp())?;
    let fa = eval(a.exp())?;
    let fb = eval(b.exp())?;
    while b - a > tolerance {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = eval(x1.exp())?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = eval(x2.exp())?;
        }
    }
    let (x, v) = if f1 > f2 { (x1, f1) } else { (x2, f2) };
    if v < fa.max(fb) {
        return Err(Error::validation(format!(
            "maximum is not bracketed by [{lo}, {hi}]: an endpoint exceeds the interior optimum"
        )));
    }
    Ok(WaistOptimum { waist: x.exp(), value: v, evaluations })
}

/// One row of the symmetric-limit comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricRow {
    pub waist: f64,
    pub full_peak_db: Option<f64>,
    pub symmetric_peak_db: f64,
    pub numbers: EffectiveNumbers,
    pub refinement_delta_db: Option<f64>,
    pub converged: bool,
}

/// Full model against the symmetric one-dimensional model for a spherical cloud
/// of width `sigma` at fixed `od_eff` over a list of waists.
pub fn symmetric_limit_study(
    sigma: f64,
    od_target: f64,
    waists: &[f64],
    species: &AtomicSpecies,
    settings: &DynamicsSettings,
) -> Result<Vec<SymmetricRow>> {
    if waists.is_empty() {
        return Err(Error::validation("waist list is empty"));
    }
    let symmetric = symmetric_1d_peak(od_target, settings.gamma0, false);
    waists
        .par_iter()
        .map(|&w| {
            let beam = BeamParameters::new(species.wavelength, w)?;
            let cloud = Constraint::FixedOdEff(od_target).resolve((sigma, sigma), &beam, species)?;
            let p = evaluate_point(&cloud, &beam, species, settings)?;
            Ok(SymmetricRow {
                waist: w,
                full_peak_db: p.peak_db(),
                symmetric_peak_db: symmetric.db,
                numbers: p.numbers,
                refinement_delta_db: p.refinement_delta_db,
                converged: p.converged,
            })
        })
        .collect()
}

/// `ζ⁻¹` in dB of the symmetric model at the given OD.
pub fn symmetric_peak_db(od: f64) -> f64 {
    let p = symmetric_1d_peak(od, 1.0, false);
    debug_assert!((p.db - zeta_to_db(p.zeta_min)).abs() < 1e-12);
    p.db
}
