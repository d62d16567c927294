//! Dense stochastic master equation for a handful of atoms: Kraus updates for
//! the continuous Faraday measurement, dephasing from the unmeasured paraxial
//! modes, and the exact single-atom diffuse-scattering channel.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble_geometry::{beta_weight, Position};
use crate::mode_projection::{InitialMoments, ProjectionTensor, WaveBasis};
use crate::paraxial_optics::{BeamParameters, ModeIndex};
use crate::{Error, Result};

/// Largest Hilbert-space dimension handled by the dense solver.
pub const MAX_DIMENSION: usize = 128;

const POSITIVITY_SLACK: f64 = 1e-10;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Spin-f angular momentum matrices in the `m = f, f-1, ..., -f` basis.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub f: f64,
    pub fx: DMatrix<Complex64>,
    pub fy: DMatrix<Complex64>,
    pub fz: DMatrix<Complex64>,
}

impl SpinOperators {
    pub fn new(f: f64) -> Result<Self> {
        let twice = 2.0 * f;
        if !(f > 0.0 && (twice - twice.round()).abs() < 1e-12) {
            return Err(Error::domain(format!("spin f must be a positive half-integer, got {f}")));
        }
        let d = twice.round() as usize + 1;
        let m = |j: usize| f - j as f64;
        let fz = DMatrix::from_fn(d, d, |i, j| if i == j { c(m(i)) } else { c(0.0) });
        // raising operator: |m> -> |m+1>, i.e. index j -> j-1
        let up = DMatrix::from_fn(d, d, |i, j| {
            if j >= 1 && i == j - 1 {
                let mm = m(j);
                c((f * (f + 1.0) - mm * (mm + 1.0)).sqrt())
            } else {
                c(0.0)
            }
        });
        let down = up.adjoint();
        let fx = (&up + &down) * c(0.5);
        let fy = (&up - &down) * Complex64::new(0.0, -0.5);
        Ok(Self { f, fx, fy, fz })
    }

    pub fn dim(&self) -> usize {
        self.fz.nrows()
    }

    pub fn m_values(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.f - j as f64).collect()
    }
}

/// Single-atom diffuse map
/// `D[ρ] = -(2/9)ρ + (g²/9)[f_z ρ f_z + (f_x ρ f_x + f_y ρ f_y)/2]`.
pub fn diffuse_map(ops: &SpinOperators, g_f: f64, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let g2 = g_f * g_f / 9.0;
    let mut out = rho * c(-2.0 / 9.0);
    out += (&ops.fz * rho * &ops.fz) * c(g2);
    out += (&ops.fx * rho * &ops.fx + &ops.fy * rho * &ops.fy) * c(g2 / 2.0);
    out
}

/// Superoperator of [`diffuse_map`] acting on column-stacked `vec(ρ)`.
pub fn diffuse_superoperator(ops: &SpinOperators, g_f: f64) -> DMatrix<Complex64> {
    let d = ops.dim();
    let g2 = g_f * g_f / 9.0;
    let kron = |a: &DMatrix<Complex64>| a.transpose().kronecker(a);
    let mut s = DMatrix::identity(d * d, d * d) * c(-2.0 / 9.0);
    s += kron(&ops.fz) * c(g2);
    s += (kron(&ops.fx) + kron(&ops.fy)) * c(g2 / 2.0);
    s
}

/// An atom with its precomputed mode weights `β_pl(r_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub position: Position,
    /// Weights in the order of the basis used to build the site; the first is `β_00`.
    pub beta: Vec<Complex64>,
}

impl Site {
    pub fn beta00(&self) -> f64 {
        self.beta[0].re
    }
}

/// Sites at arbitrary positions with weights for every mode in `basis`.
pub fn sites_at(positions: &[Position], basis: &WaveBasis, beam: &BeamParameters) -> Vec<Site> {
    let mut modes = vec![ModeIndex::FUNDAMENTAL];
    modes.extend(basis.modes.iter().copied().filter(|m| *m != ModeIndex::FUNDAMENTAL));
    positions
        .iter()
        .map(|&position| Site { position, beta: modes.iter().map(|&m| beta_weight(m, position, beam)).collect() })
        .collect()
}

/// Sites in the focal plane placed so that `β_00 = weights[i]`.
pub fn sites_with_weights(weights: &[f64], basis: &WaveBasis, beam: &BeamParameters) -> Result<Vec<Site>> {
    let mut positions = Vec::with_capacity(weights.len());
    for &b in weights {
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::domain(format!("site weight must lie in (0, 1], got {b}")));
        }
        let rho = beam.waist_w0 * (-b.ln() / 2.0).sqrt();
        positions.push(Position::new(rho, 0.0, 0.0));
    }
    Ok(sites_at(&positions, basis, beam))
}

/// Density operator over the product space, atom 0 being the most significant digit.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub rho: DMatrix<Complex64>,
    pub sites: Vec<Site>,
    pub ops: SpinOperators,
}

impl EnsembleState {
    /// Every atom in the `f_x = f` stretched state.
    pub fn coherent_x(sites: Vec<Site>, spin_f: f64) -> Result<Self> {
        let ops = SpinOperators::new(spin_f)?;
        let d = ops.dim();
        let dim = d.checked_pow(sites.len() as u32).unwrap_or(usize::MAX);
        if dim > MAX_DIMENSION {
            return Err(Error::Budget { dim, max: MAX_DIMENSION });
        }
        let single = stretched_x(&ops);
        let mut psi = DVector::from_element(1, c(1.0));
        for _ in &sites {
            psi = psi.kronecker(&single);
        }
        let rho = &psi * psi.adjoint();
        Ok(Self { rho, sites, ops })
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    fn local_dim(&self) -> usize {
        self.ops.dim()
    }

    fn stride(&self, atom: usize) -> usize {
        self.local_dim().pow((self.sites.len() - 1 - atom) as u32)
    }

    fn digit(&self, index: usize, atom: usize) -> usize {
        (index / self.stride(atom)) % self.local_dim()
    }

    /// Eigenvalues of the diagonal spin wave `Σ_i w_i f_z^(i)`.
    pub fn diagonal_wave(&self, weights: &[Complex64]) -> Vec<Complex64> {
        let m = self.ops.m_values();
        (0..self.dim()).map(|s| (0..self.sites.len()).map(|i| weights[i] * m[self.digit(s, i)]).sum()).collect()
    }

    fn mode_weights(&self, mode: usize) -> Vec<Complex64> {
        self.sites.iter().map(|s| s.beta[mode]).collect()
    }

    /// Eigenvalues of the measured spin wave `F_z^00`.
    pub fn fundamental_wave(&self) -> Vec<f64> {
        self.diagonal_wave(&self.mode_weights(0)).into_iter().map(|v| v.re).collect()
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    /// `(⟨F_z^00⟩, (ΔF_z^00)²)`.
    pub fn fz_moments(&self) -> (f64, f64) {
        let l = self.fundamental_wave();
        let tr = self.trace();
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (s, &v) in l.iter().enumerate() {
            let p = self.rho[(s, s)].re;
            m1 += p * v;
            m2 += p * v * v;
        }
        m1 /= tr;
        m2 /= tr;
        (m1, m2 - m1 * m1)
    }

    /// `⟨F_x^00⟩ = Σ_i β_00(r_i) ⟨f_x^(i)⟩`.
    pub fn fx_mean(&self) -> f64 {
        let d = self.local_dim();
        let tr = self.trace();
        let mut total = 0.0;
        for (i, site) in self.sites.iter().enumerate() {
            let st = self.stride(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for s in 0..self.dim() {
                let a = self.digit(s, i);
                for b in 0..d {
                    let fx = self.ops.fx[(a, b)];
                    if fx.norm_sqr() == 0.0 {
                        continue;
                    }
                    let t = s - a * st + b * st;
                    acc += fx * self.rho[(t, s)];
                }
            }
            total += site.beta00() * acc.re;
        }
        total / tr
    }

    /// Apply a single-atom superoperator (column-stacked convention) to atom `atom`.
    pub fn apply_local(&mut self, atom: usize, superop: &DMatrix<Complex64>) {
        let d = self.local_dim();
        let st = self.stride(atom);
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for t in 0..n {
            let ct = self.digit(t, atom);
            let bt = t - ct * st;
            for s in 0..n {
                let rs = self.digit(s, atom);
                let bs = s - rs * st;
                let row = rs + ct * d;
                let mut acc = Complex64::new(0.0, 0.0);
                for cp in 0..d {
                    for rp in 0..d {
                        let k = superop[(row, rp + cp * d)];
                        if k.norm_sqr() != 0.0 {
                            acc += k * self.rho[(bs + rp * st, bt + cp * st)];
                        }
                    }
                }
                out[(s, t)] = acc;
            }
        }
        self.rho = out;
    }

    /// Apply `(operator on atom) ρ` from the left or `ρ (operator)` from the right.
    fn local_product(
        &self,
        atom: usize,
        op: &DMatrix<Complex64>,
        rho: &DMatrix<Complex64>,
        left: bool,
    ) -> DMatrix<Complex64> {
        let d = self.local_dim();
        let st = self.stride(atom);
        let n = self.dim();
        DMatrix::from_fn(n, n, |s, t| {
            let mut acc = Complex64::new(0.0, 0.0);
            if left {
                let a = self.digit(s, atom);
                for b in 0..d {
                    acc += op[(a, b)] * rho[(s - a * st + b * st, t)];
                }
            } else {
                let b = self.digit(t, atom);
                for a in 0..d {
                    acc += rho[(s, t - b * st + a * st)] * op[(a, b)];
                }
            }
            acc
        })
    }

    fn is_positive(&self) -> bool {
        let n = self.dim();
        let h = (&self.rho + self.rho.adjoint()) * c(0.5) + DMatrix::identity(n, n) * c(POSITIVITY_SLACK);
        Cholesky::new(h).is_some()
    }
}

fn stretched_x(ops: &SpinOperators) -> DVector<Complex64> {
    // f_x is real symmetric in this basis
    let re = ops.fx.map(|v| v.re);
    let eig = nalgebra::SymmetricEigen::new(re);
    let i = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(i).map(c);
    // fix the global phase so the first component is real positive
    let phase = if v[0].norm() > 0.0 { v[0] / v[0].norm() } else { c(1.0) };
    v / phase
}

/// `Σ_i γ_s(r_i) D_i[ρ]` with `γ_s = γ0 β_00(r_i)`.
pub fn local_diffuse_generator(state: &EnsembleState, gamma0: f64, g_f: f64) -> DMatrix<Complex64> {
    let n = state.dim();
    let g2 = g_f * g_f / 9.0;
    let mut out = DMatrix::zeros(n, n);
    for (i, site) in state.sites.iter().enumerate() {
        let rate = gamma0 * site.beta00();
        let mut d = &state.rho * c(-2.0 / 9.0);
        for (op, w) in [(&state.ops.fz, g2), (&state.ops.fx, g2 / 2.0), (&state.ops.fy, g2 / 2.0)] {
            let left = state.local_product(i, op, &state.rho, true);
            d += state.local_product(i, op, &left, false) * c(w);
        }
        out += d * c(rate);
    }
    out
}

/// One Kraus update for the fundamental-mode measurement over `dt` with Wiener
/// increment `dw`. Unmeasured modes dephase the state; the state is renormalized.
/// Returns the record increment `dy = ⟨F_z^00⟩ dt + dW/√κ`.
pub fn kraus_measurement_step(state: &mut EnsembleState, dt: f64, dw: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::domain("measurement strength must be positive"));
    }
    if !(dt > 0.0) {
        return Err(Error::domain("time step must be positive"));
    }
    let (mean, _) = state.fz_moments();
    let dy = mean * dt + dw / kappa.sqrt();
    let l = state.fundamental_wave();
    let shift = l.iter().fold(0.0f64, |a, &v| a.max(v));
    // overall factor cancels on renormalization; the shift guards the exponent
    let kraus: Vec<f64> = l
        .iter()
        .map(|&v| (kappa * (v - shift) * dy / 2.0 - kappa * (v * v - shift * shift) * dt / 4.0).exp())
        .collect();
    let n = state.dim();
    let others: Vec<Vec<Complex64>> =
        (1..state.sites[0].beta.len()).map(|m| state.diagonal_wave(&state.mode_weights(m))).collect();
    for t in 0..n {
        for s in 0..n {
            let mut factor = c(kraus[s] * kraus[t]);
            for lw in &others {
                let (a, b) = (lw[s], lw[t]);
                let rate = a * b.conj() - c(0.5 * (a.norm_sqr() + b.norm_sqr()));
                factor *= (rate * (kappa / 4.0 * dt)).exp();
            }
            state.rho[(s, t)] *= factor;
        }
    }
    let tr = state.trace();
    state.rho /= c(tr);
    Ok(dy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub kappa: f64,
    pub gamma0: f64,
    pub spin_f: f64,
    pub lande_gf: f64,
    pub horizon: f64,
    pub steps: usize,
    pub checkpoints: usize,
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::validation("oracle kappa must be positive"));
        }
        if !(self.gamma0 >= 0.0 && self.horizon > 0.0 && self.steps > 0 && self.checkpoints > 0) {
            return Err(Error::validation("oracle needs gamma0 >= 0, horizon > 0, steps > 0, checkpoints > 0"));
        }
        if !self.steps.is_multiple_of(self.checkpoints) {
            return Err(Error::validation("oracle steps must be a multiple of checkpoints"));
        }
        Ok(())
    }
}

/// Conditional moments of one trajectory at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub fx: f64,
    pub fz: f64,
    pub var_fz: f64,
    pub trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub trajectory: u64,
    pub times: Vec<f64>,
    pub record: Vec<f64>,
    pub moments: Vec<Moments>,
    pub rejected_steps: usize,
}

/// Ensemble mean and standard error of a quantity at each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStatistics {
    pub seed: u64,
    pub trajectories: usize,
    pub times: Vec<f64>,
    pub fx: Series,
    pub fz: Series,
    pub var_fz: Series,
    pub min_trace: f64,
    pub max_trace: f64,
    pub rejected_steps: usize,
    #[serde(skip)]
    pub mean_final_state: Option<DMatrix<Complex64>>,
}

/// Counter-based standard normal draw keyed by `(seed, stream, counter)`.
pub fn gaussian(seed: u64, stream: u64, counter: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(counter as u128 * 4);
    let u1 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * PI * u2).cos()
}

const BRIDGE_STREAM: u64 = 1 << 63;

struct Stepper {
    channels: Vec<DMatrix<Complex64>>,
    generator: DMatrix<Complex64>,
    rates: Vec<f64>,
    dt: f64,
}

impl Stepper {
    fn new(state: &EnsembleState, config: &OracleConfig, dt: f64) -> Self {
        let generator = diffuse_superoperator(&state.ops, config.lande_gf);
        let rates: Vec<f64> = state.sites.iter().map(|s| config.gamma0 * s.beta00()).collect();
        let channels = rates.iter().map(|r| (&generator * c(r * dt)).exp()).collect();
        Self { channels, generator, rates, dt }
    }

    fn diffuse(&self, state: &mut EnsembleState, dt: f64) {
        for i in 0..state.sites.len() {
            if self.rates[i] == 0.0 {
                continue;
            }
            if dt == self.dt {
                state.apply_local(i, &self.channels[i]);
            } else {
                let ch = (&self.generator * c(self.rates[i] * dt)).exp();
                state.apply_local(i, &ch);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn advance(
    state: &mut EnsembleState,
    stepper: &Stepper,
    config: &OracleConfig,
    dt: f64,
    dw: f64,
    seed: u64,
    traj: u64,
    bridge: &mut u64,
    depth: u32,
    rejected: &mut usize,
) -> Result<f64> {
    let saved = state.rho.clone();
    let dy = kraus_measurement_step(state, dt, dw, config.kappa)?;
    stepper.diffuse(state, dt);
    if state.is_positive() {
        return Ok(dy);
    }
    if depth >= 20 {
        return Err(Error::Integration { t: f64::NAN, reason: "positivity lost after repeated step halving".into() });
    }
    *rejected += 1;
    state.rho = saved;
    let z = gaussian(seed, BRIDGE_STREAM | traj, *bridge);
    *bridge += 1;
    let dw1 = 0.5 * dw + 0.5 * dt.sqrt() * z;
    let dy1 = advance(state, stepper, config, dt / 2.0, dw1, seed, traj, bridge, depth + 1, rejected)?;
    let dy2 = advance(state, stepper, config, dt / 2.0, dw - dw1, seed, traj, bridge, depth + 1, rejected)?;
    Ok(dy1 + dy2)
}

fn moments_of(state: &EnsembleState) -> Moments {
    let (fz, var_fz) = state.fz_moments();
    Moments { fx: state.fx_mean(), fz, var_fz, trace: state.trace() }
}

/// Run one conditional trajectory, returning its record and the final state.
pub fn run_trajectory(
    sites: &[Site],
    config: &OracleConfig,
    seed: u64,
    traj: u64,
) -> Result<(TrajectoryRecord, EnsembleState)> {
    config.validate()?;
    let mut state = EnsembleState::coherent_x(sites.to_vec(), config.spin_f)?;
    let dt = config.horizon / config.steps as f64;
    let stepper = Stepper::new(&state, config, dt);
    let every = config.steps / config.checkpoints;
    let mut rec = TrajectoryRecord {
        trajectory: traj,
        times: vec![0.0],
        record: Vec::with_capacity(config.steps),
        moments: vec![moments_of(&state)],
        rejected_steps: 0,
    };
    let mut bridge = 0u64;
    for step in 0..config.steps {
        let dw = dt.sqrt() * gaussian(seed, traj, step as u64);
        let dy = advance(&mut state, &stepper, config, dt, dw, seed, traj, &mut bridge, 0, &mut rec.rejected_steps)
            .map_err(|e| match e {
                Error::Integration { reason, .. } => Error::Integration { t: step as f64 * dt, reason },
                other => other,
            })?;
        rec.record.push(dy);
        if (step + 1) % every == 0 {
            rec.times.push((step + 1) as f64 * dt);
            rec.moments.push(moments_of(&state));
        }
    }
    Ok((rec, state))
}

fn series(values: &[Vec<f64>]) -> Series {
    let n = values.len() as f64;
    let m = values[0].len();
    let mut mean = vec![0.0; m];
    let mut stderr = vec![0.0; m];
    for j in 0..m {
        let mu = values.iter().map(|v| v[j]).sum::<f64>() / n;
        let var = if n > 1.0 { values.iter().map(|v| (v[j] - mu).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        mean[j] = mu;
        stderr[j] = (var / n).sqrt();
    }
    Series { mean, stderr }
}

/// Run `n_traj` independent trajectories and reduce them in index order.
pub fn simulate_trajectories(
    n_traj: usize,
    sites: &[Site],
    config: &OracleConfig,
    seed: u64,
) -> Result<OracleStatistics> {
    config.validate()?;
    if n_traj == 0 {
        return Err(Error::validation("need at least one trajectory"));
    }
    let d = SpinOperators::new(config.spin_f)?.dim();
    let dim = d.checked_pow(sites.len() as u32).unwrap_or(usize::MAX);
    if dim > MAX_DIMENSION {
        return Err(Error::Budget { dim, max: MAX_DIMENSION });
    }
    let runs: Vec<(TrajectoryRecord, EnsembleState)> = (0..n_traj as u64)
        .into_par_iter()
        .map(|t| run_trajectory(sites, config, seed, t))
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&Moments) -> f64| -> Vec<Vec<f64>> {
        runs.iter().map(|(r, _)| r.moments.iter().map(f).collect()).collect()
    };
    let traces: Vec<f64> = runs.iter().flat_map(|(r, _)| r.moments.iter().map(|m| m.trace)).collect();
    let mut mean_state = DMatrix::zeros(dim, dim);
    for (_, s) in &runs {
        mean_state += &s.rho;
    }
    mean_state /= c(n_traj as f64);
    Ok(OracleStatistics {
        seed,
        trajectories: n_traj,
        times: runs[0].0.times.clone(),
        fx: series(&pick(|m| m.fx)),
        fz: series(&pick(|m| m.fz)),
        var_fz: series(&pick(|m| m.var_fz)),
        min_trace: traces.iter().cloned().fold(f64::INFINITY, f64::min),
        max_trace: traces.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        rejected_steps: runs.iter().map(|(r, _)| r.rejected_steps).sum(),
        mean_final_state: Some(mean_state),
    })
}

/// Deterministic evolution averaged over measurement records: every mode,
/// the measured one included, only dephases.
pub fn unconditioned_evolution(sites: &[Site], config: &OracleConfig) -> Result<EnsembleState> {
    config.validate()?;
    let mut state = EnsembleState::coherent_x(sites.to_vec(), config.spin_f)?;
    let dt = config.horizon / config.steps as f64;
    let stepper = Stepper::new(&state, config, dt);
    let n = state.dim();
    let waves: Vec<Vec<Complex64>> =
        (0..sites[0].beta.len()).map(|m| state.diagonal_wave(&state.mode_weights(m))).collect();
    let factors = DMatrix::from_fn(n, n, |s, t| {
        let mut f = c(1.0);
        for lw in &waves {
            let (a, b) = (lw[s], lw[t]);
            let rate = a * b.conj() - c(0.5 * (a.norm_sqr() + b.norm_sqr()));
            f *= (rate * (config.kappa / 4.0 * dt)).exp();
        }
        f
    });
    for _ in 0..config.steps {
        state.rho.component_mul_assign(&factors);
        stepper.diffuse(&mut state, dt);
    }
    Ok(state)
}

/// Gaussian spin-wave model of discrete sites: one slice per atom with the
/// fundamental mode only, `c = β`, `N = β³`, `C0 = f β²/2`, `m0 = f β`.
pub fn discrete_gaussian_model(sites: &[Site], spin_f: f64) -> (ProjectionTensor, InitialMoments) {
    let basis = WaveBasis::symmetric(0);
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let betas: Vec<f64> = sites.iter().map(|s| s.beta00()).collect();
    let tensor = ProjectionTensor::from_real(
        basis,
        sites.iter().map(|s| s.position.z).collect(),
        betas.iter().map(|&b| one(b)).collect(),
    );
    let initial = InitialMoments::from_real(
        spin_f,
        betas.iter().map(|&b| DVector::from_element(1, spin_f * b)).collect(),
        betas.iter().map(|&b| one(spin_f / 2.0 * b * b)).collect(),
        betas.iter().map(|&b| one(b * b * b)).collect(),
    );
    (tensor, initial)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipRateReport {
    pub spin_f: f64,
    pub lande_gf: f64,
    /// Population outflow from the x-stretched state into other sublevels, per `γ_s`.
    pub flip_rate: f64,
    /// The closed-form claim `1/(12 f)`.
    pub reference: f64,
    /// `-Tr D[ρ]` per `γ_s`.
    pub trace_loss: f64,
}

/// Instantaneous spin-flip and loss rates of a single x-polarized atom.
pub fn spin_f_flip_rate_probe(spin_f: f64, g_f: f64) -> Result<FlipRateReport> {
    let ops = SpinOperators::new(spin_f)?;
    let psi = stretched_x(&ops);
    let rho = &psi * psi.adjoint();
    let d = diffuse_map(&ops, g_f, &rho);
    let re = ops.fx.map(|v| v.re);
    let eig = nalgebra::SymmetricEigen::new(re);
    let top = eig.eigenvalues.imax();
    let v = eig.eigenvectors.map(c);
    let dx = v.adjoint() * &d * &v;
    let flip: f64 = (0..ops.dim()).filter(|&j| j != top).map(|j| dx[(j, j)].re).sum();
    Ok(FlipRateReport {
        spin_f,
        lande_gf: g_f,
        flip_rate: flip,
        reference: 1.0 / (12.0 * spin_f),
        trace_loss: -d.trace().re,
    })
}
