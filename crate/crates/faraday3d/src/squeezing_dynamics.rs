//! Spin-wave mean and covariance dynamics under QND measurement and diffuse
//! scattering, the squeezing parameter, and the symmetric one-dimensional model.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::mode_projection::{InitialMoments, ProjectionTensor};
use crate::ode::{self, Options, System};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kappa: f64,
    pub gamma0: f64,
    pub spin_f: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Horizon in units of `1/gamma0`.
    pub horizon: f64,
    /// Number of uniformly spaced output samples.
    pub samples: usize,
    /// Include diffuse-scattering decay and noise injection.
    pub decoherence: bool,
}

impl ModelConfig {
    pub fn new(kappa: f64, gamma0: f64) -> Self {
        Self { kappa, gamma0, spin_f: 0.5, rtol: 1e-8, atol: 1e-10, horizon: 10.0, samples: 501, decoherence: true }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.spin_f - 0.5).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "covariance propagation is implemented for spin-1/2 only, got f = {}",
                self.spin_f
            )));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::validation("integrator tolerances must be positive"));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::validation("horizon must be non-negative"));
        }
        if !(self.kappa >= 0.0 && self.gamma0 >= 0.0) {
            return Err(Error::validation("rates must be non-negative"));
        }
        Ok(())
    }

    fn decay_gamma(&self) -> f64 {
        if self.decoherence {
            self.gamma0
        } else {
            0.0
        }
    }
}

/// Natural-basis spin-wave moments, slice-major index `k * P + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinWaveState {
    pub time: f64,
    pub means: DVector<Complex64>,
    pub covariances: DMatrix<Complex64>,
}

impl SpinWaveState {
    pub fn from_initial(initial: &InitialMoments) -> Self {
        Self { time: 0.0, means: initial.means(), covariances: initial.covariances() }
    }

    pub fn zeros(n: usize) -> Self {
        Self { time: 0.0, means: DVector::zeros(n), covariances: DMatrix::zeros(n, n) }
    }

    fn fundamental_indicator(&self, p: usize, fund: usize) -> DVector<Complex64> {
        let n = self.means.len();
        DVector::from_fn(n, |i, _| if i % p == fund { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
    }

    /// `Σ_k ⟨F_x^00(z_k)⟩`.
    pub fn fundamental_mean(&self, p: usize, fund: usize) -> Complex64 {
        self.fundamental_indicator(p, fund).dot(&self.means)
    }

    /// `Σ_{kk'} C[(00,k),(00,k')]`.
    pub fn fundamental_variance(&self, p: usize, fund: usize) -> Complex64 {
        let e = self.fundamental_indicator(p, fund);
        (e.transpose() * &self.covariances * &e)[(0, 0)]
    }
}

fn block_diag_apply(tensors: &ProjectionTensor, conj: bool, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let p = tensors.basis.len();
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for k in 0..tensors.slices() {
        let c = if conj { tensors.c(k).map(|v| v.conj()) } else { tensors.c(k) };
        let rows = x.rows(k * p, p);
        out.rows_mut(k * p, p).copy_from(&(c * rows));
    }
    out
}

/// `d⟨F_x^a(z_k)⟩/dt = -(γ0/3) Σ_b c^a_b(z_k) ⟨F_x^b(z_k)⟩`.
pub fn mean_derivative(state: &SpinWaveState, tensors: &ProjectionTensor, gamma0: f64) -> DVector<Complex64> {
    let m = DMatrix::from_column_slice(state.means.len(), 1, state.means.as_slice());
    let km = block_diag_apply(tensors, false, &m);
    DVector::from_column_slice(km.as_slice()) * Complex64::new(-gamma0 / 3.0, 0.0)
}

/// Right-hand side of the covariance equation for `C_ab = ⟨ΔF_a† ΔF_b⟩`:
/// backaction `-κ h h†` with `h = C e_00`, diffuse decay
/// `-(2γ0/9)(c* C + C c*)` and slice-local injection `(γ0/9) N`.
pub fn covariance_derivative(
    state: &SpinWaveState,
    tensors: &ProjectionTensor,
    noise: &InitialMoments,
    kappa: f64,
    gamma0: f64,
) -> DMatrix<Complex64> {
    let p = tensors.basis.len();
    let fund = tensors.basis.fundamental();
    let c = &state.covariances;
    let e = state.fundamental_indicator(p, fund);
    let h = c * &e;
    let mut d = (&h * h.adjoint()) * Complex64::new(-kappa, 0.0);
    let left = block_diag_apply(tensors, true, c);
    let right = block_diag_apply(tensors, true, &c.adjoint()).adjoint();
    d -= (left + right) * Complex64::new(2.0 * gamma0 / 9.0, 0.0);
    for k in 0..tensors.slices() {
        let q = noise.noise_block(k) * Complex64::new(gamma0 / 9.0, 0.0);
        let mut blk = d.view_mut((k * p, k * p), (p, p));
        blk += q;
    }
    d
}

/// One output sample of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub mean_fx00: f64,
    pub var_fz00: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub time: f64,
    pub zeta_min: f64,
    pub db: f64,
    /// Minimum lies on the edge of the horizon.
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqueezingTrajectory {
    pub samples: Vec<Sample>,
    pub peak: Option<Peak>,
    /// `Σ_k m0[00][k] / f` of the discretized model.
    pub n1_model: f64,
    /// `2 Σ_k C0[00][00][k] / f` of the discretized model.
    pub n2_model: f64,
    pub steps: usize,
}

impl SqueezingTrajectory {
    /// Normalized mean spin `⟨F_x^00⟩(t) / ⟨F_x^00⟩(0)` at the sample nearest `t`.
    pub fn normalized_mean_at(&self, t: f64) -> Option<f64> {
        let first = self.samples.first()?;
        let s = self.samples.iter().min_by(|a, b| (a.time - t).abs().partial_cmp(&(b.time - t).abs()).unwrap())?;
        Some(s.mean_fx00 / first.mean_fx00)
    }
}

/// `ζ = 2f N1²/N2 · Var / ⟨F_x⟩²`.
pub fn squeezing_parameter(mean_fx00: f64, var_fz00: f64, n1: f64, n2: f64, spin_f: f64) -> Result<f64> {
    if !(mean_fx00 > 0.0) {
        return Err(Error::Depolarized(mean_fx00));
    }
    Ok(2.0 * spin_f * n1 * n1 / n2 * var_fz00 / (mean_fx00 * mean_fx00))
}

pub fn zeta_to_db(zeta: f64) -> f64 {
    10.0 * (1.0 / zeta).log10()
}

/// Packed upper-triangle real covariance in the diagonal gauge of the slice kernels.
struct ModalSystem {
    n: usize,
    p: usize,
    lam: Vec<f64>,
    e: Vec<f64>,
    lam_e: Vec<f64>,
    q: Vec<DMatrix<f64>>,
    q_fund: f64,
    kappa: f64,
    decay: f64,
    g: Vec<f64>,
    offsets: Vec<usize>,
}

fn packed_offsets(n: usize) -> Vec<usize> {
    (0..n).map(|i| i * (2 * n - i + 1) / 2).collect()
}

impl System<1> for ModalSystem {
    fn dim(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> ([f64; 1], [f64; 1]) {
        let n = self.n;
        let e = &self.e;
        let g = &mut self.g;
        g.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let row = &y[self.offsets[i]..self.offsets[i] + n - i];
            let ei = e[i];
            let mut acc = row[0] * e[i];
            for (jj, &cij) in row.iter().enumerate().skip(1) {
                acc += cij * e[i + jj];
                g[i + jj] += cij * ei;
            }
            g[i] += acc;
        }
        let kappa = self.kappa;
        let decay = self.decay;
        for i in 0..n {
            let o = self.offsets[i];
            let gi = g[i];
            let li = self.lam[i];
            let row = &y[o..o + n - i];
            let drow = &mut dy[o..o + n - i];
            for jj in 0..n - i {
                let j = i + jj;
                drow[jj] = -kappa * gi * g[j] - decay * (li + self.lam[j]) * row[jj];
            }
        }
        let p = self.p;
        for (k, q) in self.q.iter().enumerate() {
            for a in 0..p {
                for b in a..p {
                    let id = self.offsets[k * p + a] + (b - a);
                    dy[id] += q[(a, b)];
                }
            }
        }
        let eg: f64 = e.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let leg: f64 = self.lam_e.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let dvar = -kappa * eg * eg - 2.0 * decay * leg + self.q_fund;
        ([eg], [dvar])
    }
}

struct Modal {
    system: ModalSystem,
    y0: Vec<f64>,
    m_hat: Vec<f64>,
    mean_rate: Vec<f64>,
    var0: f64,
    mean0: f64,
}

impl Modal {
    fn mean(&self, t: f64) -> f64 {
        self.m_hat.iter().zip(&self.system.e).zip(&self.mean_rate).map(|((m, e), r)| m * e * (-r * t).exp()).sum()
    }
}

fn build_modal(initial: &InitialMoments, tensors: &ProjectionTensor, config: &ModelConfig) -> Result<Modal> {
    let p = tensors.basis.len();
    let s = tensors.slices();
    if initial.modes() != p || initial.slices() != s {
        return Err(Error::validation("initial moments and projection tensor disagree in shape"));
    }
    let fund = tensors.basis.fundamental();
    let n = p * s;
    let gamma = config.decay_gamma();
    let mut lam = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut m_hat = vec![0.0; n];
    let mut c_blocks = Vec::with_capacity(s);
    let mut q_blocks = Vec::with_capacity(s);
    for k in 0..s {
        let eig = SymmetricEigen::new(tensors.real[k].clone());
        let v = &eig.eigenvectors;
        for a in 0..p {
            lam[k * p + a] = eig.eigenvalues[a];
            e[k * p + a] = v[(fund, a)];
        }
        let mh = v.transpose() * &initial.real_means[k];
        m_hat[k * p..(k + 1) * p].copy_from_slice(mh.as_slice());
        c_blocks.push(v.transpose() * &initial.real_covariances[k] * v);
        q_blocks.push(v.transpose() * &initial.real_noise[k] * v);
    }
    let var0: f64 = (0..s).map(|k| initial.real_covariances[k][(fund, fund)]).sum();
    let mean0: f64 = (0..s).map(|k| initial.real_means[k][fund]).sum();
    if !(var0 > 0.0) {
        return Err(Error::domain(format!("initial fundamental variance {var0} is not positive")));
    }
    let offsets = packed_offsets(n);
    let mut y0 = vec![0.0; n * (n + 1) / 2];
    for (k, c) in c_blocks.iter().enumerate() {
        for a in 0..p {
            for b in a..p {
                y0[offsets[k * p + a] + (b - a)] = c[(a, b)] / var0;
            }
        }
    }
    let qscale = gamma / 9.0 / var0;
    let q: Vec<DMatrix<f64>> = q_blocks.into_iter().map(|m| m * qscale).collect();
    let mut q_fund = 0.0;
    for (k, qb) in q.iter().enumerate() {
        let ek = DVector::from_column_slice(&e[k * p..(k + 1) * p]);
        q_fund += (ek.transpose() * qb * &ek)[(0, 0)];
    }
    let lam_e = lam.iter().zip(&e).map(|(l, e)| l * e).collect();
    let mean_rate = lam.iter().map(|l| gamma / 3.0 * l).collect();
    let system = ModalSystem {
        n,
        p,
        lam,
        e,
        lam_e,
        q,
        q_fund,
        kappa: config.kappa * var0,
        decay: 2.0 * gamma / 9.0,
        g: vec![0.0; n],
        offsets,
    };
    Ok(Modal { system, y0, m_hat, mean_rate, var0, mean0 })
}

fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Integrate the moment equations and sample the squeezing trajectory.
///
/// The covariance is propagated in the eigenbasis of each slice kernel, where
/// the diffuse decay is diagonal; the means then decay in closed form.
pub fn integrate(
    initial: &InitialMoments,
    config: &ModelConfig,
    tensors: &ProjectionTensor,
) -> Result<SqueezingTrajectory> {
    config.validate()?;
    let mut modal = build_modal(initial, tensors, config)?;
    let f = config.spin_f;
    let n1_model = modal.mean0 / f;
    let n2_model = 2.0 * modal.var0 / f;
    if config.horizon == 0.0 || config.samples == 0 {
        return Ok(SqueezingTrajectory { samples: vec![], peak: None, n1_model, n2_model, steps: 0 });
    }
    let gamma_unit = if config.gamma0 > 0.0 { config.gamma0 } else { 1.0 };
    let t_end = config.horizon / gamma_unit;
    let opts = Options { rtol: config.rtol, atol: config.atol, ..Options::default() };
    let y0 = std::mem::take(&mut modal.y0);
    let sol = ode::solve(&mut modal.system, 0.0, &y0, t_end, &opts)?;

    let var0 = modal.var0;
    let mean0 = modal.mean0;
    let sample_at = |t: f64| -> Result<Sample> {
        let v = if t == 0.0 { 1.0 } else { sol.eval(t)[0] };
        let m = if t == 0.0 { mean0 } else { modal.mean(t) };
        if !(m > 0.0) {
            return Err(Error::Depolarized(m));
        }
        let rel = m / mean0;
        Ok(Sample { time: t * gamma_unit, mean_fx00: m, var_fz00: v * var0, zeta: v / (rel * rel) })
    };
    let zeta_at = |t: f64| sample_at(t).map(|s| s.zeta).unwrap_or(f64::INFINITY);

    let count = config.samples.max(2);
    let mut samples = Vec::with_capacity(count + 32);
    for i in 0..count {
        let t = t_end * i as f64 / (count - 1) as f64;
        samples.push(sample_at(t)?);
    }
    // densify the sampling around the minimum so the stored samples pin the peak
    let imin =
        samples.iter().enumerate().min_by(|a, b| a.1.zeta.partial_cmp(&b.1.zeta).unwrap()).map(|(i, _)| i).unwrap();
    if imin > 0 && imin < count - 1 {
        let lo = samples[imin - 1].time / gamma_unit;
        let hi = samples[imin + 1].time / gamma_unit;
        let tm = golden_min(zeta_at, lo, hi, (hi - lo) * 1e-9);
        let width = (hi - lo) * 1e-2;
        for j in -3i32..=3 {
            let t = tm + j as f64 * width;
            if t > lo && t < hi {
                samples.push(sample_at(t)?);
            }
        }
        samples.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        samples.dedup_by(|a, b| a.time == b.time);
    }
    let peak = peak_squeezing(&samples);
    Ok(SqueezingTrajectory { samples, peak, n1_model, n2_model, steps: sol.accepted })
}

/// Global minimum of ζ over the samples, refined by a parabola through the
/// neighbouring samples.
pub fn peak_squeezing(samples: &[Sample]) -> Option<Peak> {
    let (i, s) = samples.iter().enumerate().min_by(|a, b| a.1.zeta.partial_cmp(&b.1.zeta).unwrap())?;
    let last = samples.len() - 1;
    if i == 0 || i == last {
        return Some(Peak { time: s.time, zeta_min: s.zeta, db: zeta_to_db(s.zeta), boundary: true });
    }
    let (x0, x1, x2) = (samples[i - 1].time, s.time, samples[i + 1].time);
    let (y0, y1, y2) = (samples[i - 1].zeta, s.zeta, samples[i + 1].zeta);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curv = (d12 - d01) / (x2 - x0);
    let (time, zeta) = if curv > 0.0 {
        let b = d01 - curv * (x0 + x1);
        let tm = (-b / (2.0 * curv)).clamp(x0, x2);
        let zm = y1 + (tm - x1) * (d01 + curv * (tm - x0));
        if zm <= y1 {
            (tm, zm)
        } else {
            (x1, y1)
        }
    } else {
        (x1, y1)
    };
    Some(Peak { time, zeta_min: zeta, db: zeta_to_db(zeta), boundary: false })
}

/// Closed-form fundamental variance of the symmetric one-dimensional model.
pub fn symmetric_1d_variance(t: f64, n: f64, od: f64, gamma0: f64) -> f64 {
    let s = (od + 1.0).sqrt();
    let u = (1.0 + od) / od.sqrt() * (2.0 / 9.0) * gamma0 * t;
    let th = u.tanh();
    n / 4.0 * (s + th) / (s + (od / 2.0 + 1.0) * th)
}

/// Exact solution of `dV/dt = -κV² - (4/9)γ0 V + (γ0/9) N` with
/// `κ N = (4/9) OD γ0` and `V(0) = N/4`.
pub fn symmetric_1d_variance_exact(t: f64, n: f64, od: f64, gamma0: f64) -> f64 {
    let root = (1.0 + od).sqrt();
    let w_inf = n * root / (2.0 * od);
    let v_mid = -n / (2.0 * od);
    let w0 = n / 4.0 - v_mid;
    let th = ((2.0 / 9.0) * gamma0 * root * t).tanh();
    v_mid + w_inf * (w0 + w_inf * th) / (w_inf + w0 * th)
}

/// Peak of `ζ(t) = V(t)/(N/4) · e^{2γ0 t/3}` for the symmetric model.
pub fn symmetric_1d_peak(od: f64, gamma0: f64, exact: bool) -> Peak {
    let zeta = |t: f64| {
        let v = if exact {
            symmetric_1d_variance_exact(t, 4.0, od, gamma0)
        } else {
            symmetric_1d_variance(t, 4.0, od, gamma0)
        };
        v * (2.0 * gamma0 * t / 3.0).exp()
    };
    let grid: Vec<f64> = (0..=4000).map(|i| 20.0 / gamma0 * i as f64 / 4000.0).collect();
    let i = (0..grid.len()).min_by(|&a, &b| zeta(grid[a]).partial_cmp(&zeta(grid[b])).unwrap()).unwrap();
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(grid.len() - 1)];
    let t = golden_min(zeta, lo, hi, 1e-12);
    let z = zeta(t);
    Peak { time: t * gamma0, zeta_min: z, db: zeta_to_db(z), boundary: i == 0 || i == grid.len() - 1 }
}

/// `(time, mean_fx00, var_fz00)` samples of the reference integrator.
pub type ReferenceSamples = Vec<(f64, f64, f64)>;

/// Reference integrator on the natural complex moments. Dense and slow; meant
/// for cross-checking [`integrate`] on small systems.
pub fn integrate_reference(
    initial: &InitialMoments,
    config: &ModelConfig,
    tensors: &ProjectionTensor,
) -> Result<(ReferenceSamples, SpinWaveState)> {
    config.validate()?;
    let n = initial.modes() * initial.slices();
    struct Natural<'a> {
        n: usize,
        tensors: &'a ProjectionTensor,
        noise: &'a InitialMoments,
        kappa: f64,
        gamma: f64,
    }
    impl Natural<'_> {
        fn unpack(&self, y: &[f64]) -> SpinWaveState {
            let n = self.n;
            let means = DVector::from_fn(n, |i, _| Complex64::new(y[2 * i], y[2 * i + 1]));
            let off = 2 * n;
            let covariances = DMatrix::from_fn(n, n, |i, j| {
                let id = off + 2 * (i * n + j);
                Complex64::new(y[id], y[id + 1])
            });
            SpinWaveState { time: 0.0, means, covariances }
        }
    }
    impl System<2> for Natural<'_> {
        fn dim(&self) -> usize {
            2 * self.n + 2 * self.n * self.n
        }
        fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> ([f64; 2], [f64; 2]) {
            let st = self.unpack(y);
            let dm = mean_derivative(&st, self.tensors, self.gamma);
            let dc = covariance_derivative(&st, self.tensors, self.noise, self.kappa, self.gamma);
            let n = self.n;
            for i in 0..n {
                dy[2 * i] = dm[i].re;
                dy[2 * i + 1] = dm[i].im;
            }
            for i in 0..n {
                for j in 0..n {
                    let id = 2 * n + 2 * (i * n + j);
                    dy[id] = dc[(i, j)].re;
                    dy[id + 1] = dc[(i, j)].im;
                }
            }
            let p = self.tensors.basis.len();
            let fund = self.tensors.basis.fundamental();
            let ds = SpinWaveState { time: 0.0, means: dm, covariances: dc };
            (
                [st.fundamental_mean(p, fund).re, st.fundamental_variance(p, fund).re],
                [ds.fundamental_mean(p, fund).re, ds.fundamental_variance(p, fund).re],
            )
        }
    }
    let gamma = config.decay_gamma();
    let mut sys = Natural { n, tensors, noise: initial, kappa: config.kappa, gamma };
    let st0 = SpinWaveState::from_initial(initial);
    let mut y0 = vec![0.0; sys.dim()];
    for i in 0..n {
        y0[2 * i] = st0.means[i].re;
        y0[2 * i + 1] = st0.means[i].im;
        for j in 0..n {
            let id = 2 * n + 2 * (i * n + j);
            y0[id] = st0.covariances[(i, j)].re;
            y0[id + 1] = st0.covariances[(i, j)].im;
        }
    }
    let scale = y0.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let opts = Options { rtol: config.rtol, atol: config.atol * scale, ..Options::default() };
    let gamma_unit = if config.gamma0 > 0.0 { config.gamma0 } else { 1.0 };
    let t_end = config.horizon / gamma_unit;
    let sol = ode::solve(&mut sys, 0.0, &y0, t_end, &opts)?;
    let count = config.samples.max(2);
    let out = (0..count)
        .map(|i| {
            let t = t_end * i as f64 / (count - 1) as f64;
            let v = sol.eval(t);
            (t * gamma_unit, v[0], v[1])
        })
        .collect();
    let mut fin = sys.unpack(&sol.y_final);
    fin.time = config.horizon;
    Ok((out, fin))
}
