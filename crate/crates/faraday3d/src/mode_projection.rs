//! Longitudinal slicing, the projection tensor of products of transverse modes,
//! and the initial spin-wave moments.
//!
//! For a cylindrically symmetric kernel every quantity here factors into a real
//! matrix and a diagonal phase `D_a(z) = exp(i (2p_a + |l_a|) Φ(z))`. The real
//! blocks are stored and the natural complex values are rebuilt on request.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble_geometry::CloudGeometry;
use crate::paraxial_optics::{laguerre, BeamParameters, ModeIndex};
use crate::quad::laguerre_rule;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceGrid {
    pub centers: Vec<f64>,
    pub thickness: f64,
    /// Half-width of the covered region in units of `σz`.
    pub extent: f64,
}

impl SliceGrid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

pub fn build_grid(cloud: &CloudGeometry, slice_count: usize, extent_sigmas: f64) -> Result<SliceGrid> {
    if slice_count < 4 {
        return Err(Error::validation(format!("slice_count must be at least 4, got {slice_count}")));
    }
    if !(extent_sigmas >= 3.0 && extent_sigmas.is_finite()) {
        return Err(Error::validation(format!("slice extent must be at least 3 sigma_z, got {extent_sigmas}")));
    }
    let half = extent_sigmas * cloud.sigma_z;
    let dz = 2.0 * half / slice_count as f64;
    let centers = (0..slice_count)
        .map(|k| {
            let c = -half + (k as f64 + 0.5) * dz;
            // keep the grid exactly antisymmetric
            let mirror = half - (slice_count - 1 - k) as f64 * dz - 0.5 * dz;
            0.5 * (c + mirror)
        })
        .collect();
    Ok(SliceGrid { centers, thickness: dz, extent: extent_sigmas })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveBasis {
    pub modes: Vec<ModeIndex>,
    pub p_max: u32,
    pub l_set: Vec<i32>,
}

impl WaveBasis {
    /// All `(p, l)` with `p <= p_max` and `l` in `l_set`, the fundamental first.
    pub fn new(p_max: u32, l_set: &[i32]) -> Result<Self> {
        if !l_set.contains(&0) {
            return Err(Error::validation("basis must contain l = 0"));
        }
        let mut ls: Vec<i32> = l_set.to_vec();
        ls.sort_by_key(|l| (l.abs(), *l));
        ls.dedup();
        let modes = ls.iter().flat_map(|&l| (0..=p_max).map(move |p| ModeIndex::new(p, l))).collect();
        Ok(Self { modes, p_max, l_set: ls })
    }

    /// The `l = 0` basis used for symmetric clouds.
    pub fn symmetric(p_max: u32) -> Self {
        Self::new(p_max, &[0]).unwrap()
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn fundamental(&self) -> usize {
        self.modes.iter().position(|m| *m == ModeIndex::FUNDAMENTAL).unwrap()
    }
}

/// `N_a N_b ∫_0^∞ e^{-qX} X^{|l|} L_a^{|l|} L_b^{|l|} dX` for modes of common `l`.
fn radial_products(modes: &[ModeIndex], q: f64, rules: &[(i32, Vec<(f64, f64)>)]) -> DMatrix<f64> {
    let n = modes.len();
    let mut out = DMatrix::zeros(n, n);
    for (l, rule) in rules {
        let idx: Vec<usize> = (0..n).filter(|&i| modes[i].l == *l).collect();
        let al = l.unsigned_abs() as f64;
        let scale = q.powf(-(al + 1.0));
        let lag: Vec<Vec<f64>> =
            idx.iter().map(|&i| rule.iter().map(|&(y, _)| laguerre(modes[i].p, al, y / q)).collect()).collect();
        for (ii, &i) in idx.iter().enumerate() {
            for (jj, &j) in idx.iter().enumerate().skip(ii) {
                let s: f64 = rule.iter().enumerate().map(|(r, &(_, w))| w * lag[ii][r] * lag[jj][r]).sum();
                let v = s * scale * modes[i].norm() * modes[j].norm();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
    }
    out
}

fn rules_for(basis: &WaveBasis) -> Vec<(i32, Vec<(f64, f64)>)> {
    let nodes = basis.p_max as usize + 2;
    basis.l_set.iter().map(|&l| (l, laguerre_rule(nodes, l.unsigned_abs() as f64))).collect()
}

fn phases_at(basis: &WaveBasis, z: f64, beam: &BeamParameters) -> Vec<Complex64> {
    let gouy = beam.gaussian_params(z).gouy;
    basis.modes.iter().map(|m| Complex64::from_polar(1.0, (2 * m.p + m.l.unsigned_abs()) as f64 * gouy)).collect()
}

fn conjugate_by(real: &DMatrix<f64>, left: &[Complex64], right: &[Complex64]) -> DMatrix<Complex64> {
    DMatrix::from_fn(real.nrows(), real.ncols(), |i, j| left[i] * right[j] * real[(i, j)])
}

/// `c^a_b(z_k) = (1/A) ∫ |u_00|² u_a* u_b d²r`, stored as `D K D^†` per slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionTensor {
    pub basis: WaveBasis,
    pub centers: Vec<f64>,
    /// Per-slice diagonal phase `D_a`.
    pub phases: Vec<Vec<Complex64>>,
    /// Per-slice real symmetric kernel.
    pub real: Vec<DMatrix<f64>>,
}

impl ProjectionTensor {
    pub fn slices(&self) -> usize {
        self.real.len()
    }

    /// Complex coefficient matrix at slice `k`.
    pub fn c(&self, k: usize) -> DMatrix<Complex64> {
        let d = &self.phases[k];
        let dc: Vec<Complex64> = d.iter().map(|x| x.conj()).collect();
        conjugate_by(&self.real[k], d, &dc)
    }

    pub fn entry(&self, a: usize, b: usize, k: usize) -> Complex64 {
        self.phases[k][a] * self.phases[k][b].conj() * self.real[k][(a, b)]
    }

    /// Build from real per-slice kernels with trivial phases.
    pub fn from_real(basis: WaveBasis, centers: Vec<f64>, real: Vec<DMatrix<f64>>) -> Self {
        let p = basis.len();
        let phases = vec![vec![Complex64::new(1.0, 0.0); p]; real.len()];
        Self { basis, centers, phases, real }
    }
}

pub fn projection_coefficients(basis: &WaveBasis, grid: &SliceGrid, beam: &BeamParameters) -> Result<ProjectionTensor> {
    let rules = rules_for(basis);
    let real: Vec<DMatrix<f64>> = grid
        .centers
        .par_iter()
        .map(|&z| {
            let r = beam.waist_w0 / beam.width(z);
            radial_products(&basis.modes, 2.0, &rules) * (r * r)
        })
        .collect();
    let phases = grid.centers.iter().map(|&z| phases_at(basis, z, beam)).collect();
    Ok(ProjectionTensor { basis: basis.clone(), centers: grid.centers.clone(), phases, real })
}

/// Initial spin-coherent-state moments per slice.
///
/// Slice-major state index `k * P + a`. Means carry phase `D_a`, covariances
/// and noise numbers carry `D_a* D_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialMoments {
    pub spin_f: f64,
    pub phases: Vec<Vec<Complex64>>,
    pub real_means: Vec<DVector<f64>>,
    pub real_covariances: Vec<DMatrix<f64>>,
    pub real_noise: Vec<DMatrix<f64>>,
}

impl InitialMoments {
    pub fn modes(&self) -> usize {
        self.real_means.first().map_or(0, |m| m.len())
    }

    pub fn slices(&self) -> usize {
        self.real_means.len()
    }

    pub fn mean(&self, a: usize, k: usize) -> Complex64 {
        self.phases[k][a] * self.real_means[k][a]
    }

    pub fn covariance_block(&self, k: usize) -> DMatrix<Complex64> {
        let d = &self.phases[k];
        let dc: Vec<Complex64> = d.iter().map(|x| x.conj()).collect();
        conjugate_by(&self.real_covariances[k], &dc, d)
    }

    pub fn noise_block(&self, k: usize) -> DMatrix<Complex64> {
        let d = &self.phases[k];
        let dc: Vec<Complex64> = d.iter().map(|x| x.conj()).collect();
        conjugate_by(&self.real_noise[k], &dc, d)
    }

    /// Full complex mean vector.
    pub fn means(&self) -> DVector<Complex64> {
        let p = self.modes();
        DVector::from_fn(p * self.slices(), |i, _| self.mean(i % p, i / p))
    }

    /// Full block-diagonal complex covariance matrix.
    pub fn covariances(&self) -> DMatrix<Complex64> {
        let p = self.modes();
        let n = p * self.slices();
        let mut out = DMatrix::zeros(n, n);
        for k in 0..self.slices() {
            out.view_mut((k * p, k * p), (p, p)).copy_from(&self.covariance_block(k));
        }
        out
    }

    /// `Σ_k m[a][k]`.
    pub fn mean_sum(&self, a: usize) -> Complex64 {
        (0..self.slices()).map(|k| self.mean(a, k)).sum()
    }

    pub fn covariance_sum(&self, a: usize, b: usize) -> Complex64 {
        (0..self.slices()).map(|k| self.covariance_block(k)[(a, b)]).sum()
    }

    pub fn noise_sum(&self, a: usize, b: usize) -> Complex64 {
        (0..self.slices()).map(|k| self.noise_block(k)[(a, b)]).sum()
    }

    /// Build from real blocks with trivial phases.
    pub fn from_real(
        spin_f: f64,
        real_means: Vec<DVector<f64>>,
        real_covariances: Vec<DMatrix<f64>>,
        real_noise: Vec<DMatrix<f64>>,
    ) -> Self {
        let p = real_means.first().map_or(0, |m| m.len());
        let phases = vec![vec![Complex64::new(1.0, 0.0); p]; real_means.len()];
        Self { spin_f, phases, real_means, real_covariances, real_noise }
    }
}

/// Moments of an x-polarized coherent state for the Gaussian cloud.
pub fn initial_moments(
    cloud: &CloudGeometry,
    beam: &BeamParameters,
    basis: &WaveBasis,
    grid: &SliceGrid,
    spin_f: f64,
) -> Result<InitialMoments> {
    if !(spin_f > 0.0) {
        return Err(Error::domain("spin f must be positive"));
    }
    let rules = rules_for(basis);
    let dz = grid.thickness;
    let s2 = cloud.sigma_perp * cloud.sigma_perp;
    let per_slice: Vec<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> = grid
        .centers
        .par_iter()
        .map(|&z| {
            let w = beam.width(z);
            let r2 = (beam.waist_w0 / w).powi(2);
            let s = w * w / s2;
            let column = cloud.axial_density(z) * dz * PI * w * w / 2.0;
            let q1 = 1.0 + s;
            let means = DVector::from_fn(basis.len(), |a, _| {
                let m = basis.modes[a];
                if m.l != 0 {
                    0.0
                } else {
                    spin_f * column * r2 * (s / q1).powi(m.p as i32) / q1
                }
            });
            let cov = radial_products(&basis.modes, 2.0 + s, &rules) * (0.5 * spin_f * column * r2 * r2);
            let noise = radial_products(&basis.modes, 3.0 + s, &rules) * (column * r2 * r2 * r2);
            (means, cov, noise)
        })
        .collect();
    let mut real_means = Vec::with_capacity(per_slice.len());
    let mut real_covariances = Vec::with_capacity(per_slice.len());
    let mut real_noise = Vec::with_capacity(per_slice.len());
    for (m, c, q) in per_slice {
        real_means.push(m);
        real_covariances.push(c);
        real_noise.push(q);
    }
    let phases = grid.centers.iter().map(|&z| phases_at(basis, z, beam)).collect();
    Ok(InitialMoments { spin_f, phases, real_means, real_covariances, real_noise })
}

/// One refinement level of a [`ConvergenceReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementLevel {
    pub p_max: u32,
    pub slice_count: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<RefinementLevel>,
    /// Successive differences `v[i+1] - v[i]`.
    pub differences: Vec<f64>,
    /// Richardson-extrapolated limit from the last three levels.
    pub estimate: f64,
    /// Empirical order `log2 |d[i-1] / d[i]|` from the last two differences.
    pub order: Option<f64>,
    /// Magnitude of the last difference.
    pub resolution: f64,
    pub tolerance: f64,
    pub converged: bool,
    /// First level from which every later change stays within tolerance.
    pub converged_level: Option<usize>,
    /// Successive differences change sign.
    pub non_monotone: bool,
}

/// Evaluate `metric` along refinement sequences of `p_max` and slice counts.
///
/// A sequence of length one is held fixed while the other is refined.
pub fn convergence_probe<F>(
    basis_sequence: &[u32],
    grid_sequence: &[usize],
    tolerance: f64,
    mut metric: F,
) -> Result<ConvergenceReport>
where
    F: FnMut(u32, usize) -> Result<f64>,
{
    let n = basis_sequence.len().max(grid_sequence.len());
    let ok_len = |len: usize| len == n || len == 1;
    if n == 0 || !ok_len(basis_sequence.len()) || !ok_len(grid_sequence.len()) {
        return Err(Error::validation("refinement sequences must have equal length or length one"));
    }
    let at = |s: &[u32], i: usize| if s.len() == 1 { s[0] } else { s[i] };
    let mut levels = Vec::with_capacity(n);
    for i in 0..n {
        let p = at(basis_sequence, i);
        let g = if grid_sequence.len() == 1 { grid_sequence[0] } else { grid_sequence[i] };
        if i > 0 {
            let prev = &levels[i - 1] as &RefinementLevel;
            if p < prev.p_max || g < prev.slice_count {
                return Err(Error::validation("refinement sequences must be non-decreasing"));
            }
        }
        levels.push(RefinementLevel { p_max: p, slice_count: g, value: metric(p, g)? });
    }
    let values: Vec<f64> = levels.iter().map(|l| l.value).collect();
    let differences: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let last = *values.last().unwrap();
    let resolution = differences.last().map_or(0.0, |d| d.abs());
    let mut estimate = last;
    let mut order = None;
    if differences.len() >= 2 {
        let d1 = differences[differences.len() - 2];
        let d2 = differences[differences.len() - 1];
        if d1 != 0.0 && d2 != 0.0 {
            let r = d2 / d1;
            order = Some((1.0 / r.abs()).log2());
            if r.abs() < 1.0 {
                estimate = last + d2 * r / (1.0 - r);
            }
        }
    }
    let non_monotone = differences.windows(2).any(|w| w[0] * w[1] < 0.0);
    let converged_level = (0..n).find(|&i| differences[i..].iter().all(|d| d.abs() <= tolerance));
    let converged = converged_level.is_some();
    Ok(ConvergenceReport {
        levels,
        differences,
        estimate,
        order,
        resolution,
        tolerance,
        converged,
        converged_level,
        non_monotone,
    })
}
