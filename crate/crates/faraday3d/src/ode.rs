//! Dormand-Prince 5(4) integrator with dense output of linear observables.
//!
//! The state can be large (a packed covariance matrix), so dense output is
//! kept only for a handful of linear functionals `φ(y)` that the system
//! evaluates alongside its right-hand side.

use crate::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Right-hand side together with `K` linear observables.
pub trait System<const K: usize> {
    fn dim(&self) -> usize;

    /// Write `dy = f(t, y)` and return `(φ(y), φ(dy))`.
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> ([f64; K], [f64; K]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Options {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, h_init: None, h_min: 1e-14, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }
}

/// Continuous extension of the observables over one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<const K: usize> {
    pub t0: f64,
    pub h: f64,
    r: [[f64; K]; 5],
}

impl<const K: usize> Segment<K> {
    pub fn eval(&self, t: f64) -> [f64; K] {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let th1 = 1.0 - th;
        let mut out = [0.0; K];
        for (i, o) in out.iter_mut().enumerate() {
            let r = |j: usize| self.r[j][i];
            *o = r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))));
        }
        out
    }

    pub fn start(&self) -> [f64; K] {
        self.r[0]
    }

    pub fn end(&self) -> [f64; K] {
        let mut out = [0.0; K];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r[0][i] + self.r[1][i];
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Solution<const K: usize> {
    pub t0: f64,
    pub t_end: f64,
    pub initial: [f64; K],
    pub segments: Vec<Segment<K>>,
    pub y_final: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl<const K: usize> Solution<K> {
    /// Observables at `t`, clamped to the integrated interval.
    pub fn eval(&self, t: f64) -> [f64; K] {
        if self.segments.is_empty() {
            return self.initial;
        }
        let idx = self.segments.partition_point(|s| s.t0 + s.h < t).min(self.segments.len() - 1);
        self.segments[idx].eval(t)
    }

    /// Step boundaries, including both endpoints.
    pub fn step_times(&self) -> Vec<f64> {
        let mut ts = vec![self.t0];
        ts.extend(self.segments.iter().map(|s| s.t0 + s.h));
        ts
    }
}

fn axpy_stage(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..out.len() {
        let mut acc = 0.0;
        for &(c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

fn combine<const K: usize>(terms: &[(f64, &[f64; K])]) -> [f64; K] {
    let mut out = [0.0; K];
    for &(c, v) in terms {
        for i in 0..K {
            out[i] += c * v[i];
        }
    }
    out
}

/// Integrate `sys` from `t0` to `t_end`.
pub fn solve<S, const K: usize>(sys: &mut S, t0: f64, y0: &[f64], t_end: f64, opts: &Options) -> Result<Solution<K>>
where
    S: System<K>,
{
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::Integration { t: t0, reason: format!("state length {} != {}", y0.len(), n) });
    }
    if !(t_end >= t0) {
        return Err(Error::Integration { t: t0, reason: "end time precedes start".into() });
    }
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let (obs0, mut dobs1) = sys.rhs(t0, &y, &mut k1);
    let mut sol = Solution {
        t0,
        t_end,
        initial: obs0,
        segments: Vec::new(),
        y_final: Vec::new(),
        accepted: 0,
        rejected: 0,
        evaluations: 1,
    };
    if t_end == t0 {
        sol.y_final = y;
        return Ok(sol);
    }
    let mut obs_y = obs0;
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    let scale = |a: f64, b: f64| opts.atol + opts.rtol * a.abs().max(b.abs());
    let mut h = match opts.h_init {
        Some(h) => h,
        None => {
            let d0 = (y.iter().map(|v| (v / scale(*v, *v)).powi(2)).sum::<f64>() / n as f64).sqrt();
            let d1 = (k1.iter().zip(&y).map(|(f, v)| (f / scale(*v, *v)).powi(2)).sum::<f64>() / n as f64).sqrt();
            if d0 < 1e-5 || d1 < 1e-5 {
                1e-6
            } else {
                0.01 * d0 / d1
            }
        }
    }
    .min(t_end - t0)
    .min(opts.h_max);

    let mut t = t0;
    let mut last_rejected = false;
    while t < t_end {
        if sol.accepted + sol.rejected >= opts.max_steps {
            return Err(Error::Integration { t, reason: format!("exceeded {} steps", opts.max_steps) });
        }
        if h < opts.h_min * t.abs().max(1.0) {
            return Err(Error::Integration { t, reason: format!("step size underflow (h = {h:e})") });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        axpy_stage(&mut ytmp, &y, h, &[(A21, &k1)]);
        sys.rhs(t + C2 * h, &ytmp, &mut k2);
        axpy_stage(&mut ytmp, &y, h, &[(A31, &k1), (A32, &k2)]);
        let (_, dobs3) = sys.rhs(t + C3 * h, &ytmp, &mut k3);
        axpy_stage(&mut ytmp, &y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        let (_, dobs4) = sys.rhs(t + C4 * h, &ytmp, &mut k4);
        axpy_stage(&mut ytmp, &y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        let (_, dobs5) = sys.rhs(t + C5 * h, &ytmp, &mut k5);
        axpy_stage(&mut ytmp, &y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        let (_, dobs6) = sys.rhs(t + h, &ytmp, &mut k6);
        axpy_stage(&mut ynew, &y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let t_new = if last { t_end } else { t + h };
        let (obs_new, dobs7) = sys.rhs(t_new, &ynew, &mut k7);
        sol.evaluations += 6;

        let mut acc = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let s = scale(y[i], ynew[i]);
            acc += (e / s).powi(2);
        }
        let err = (acc / n as f64).sqrt();

        if err.is_finite() && err <= 1.0 {
            let r1 = obs_y;
            let r2 = combine(&[(1.0, &obs_new), (-1.0, &obs_y)]);
            let r3 = combine(&[(h, &dobs1), (-1.0, &r2)]);
            let r4 = combine(&[(1.0, &r2), (-h, &dobs7), (-1.0, &r3)]);
            let r5 = combine(&[
                (h * D1, &dobs1),
                (h * D3, &dobs3),
                (h * D4, &dobs4),
                (h * D5, &dobs5),
                (h * D6, &dobs6),
                (h * D7, &dobs7),
            ]);
            sol.segments.push(Segment { t0: t, h, r: [r1, r2, r3, r4, r5] });
            sol.accepted += 1;
            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            obs_y = obs_new;
            dobs1 = dobs7;
            let fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
            let fac = if last_rejected { fac.min(1.0) } else { fac };
            h = (h * fac).min(opts.h_max);
            last_rejected = false;
        } else {
            sol.rejected += 1;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) } else { 0.2 };
            h *= fac;
            last_rejected = true;
        }
    }
    sol.y_final = y;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator;

    impl System<2> for Oscillator {
        fn dim(&self) -> usize {
            2
        }

        fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> ([f64; 2], [f64; 2]) {
            dy[0] = y[1];
            dy[1] = -y[0];
            ([y[0], y[1]], [dy[0], dy[1]])
        }
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let opts = Options { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        let sol = solve(&mut Oscillator, 0.0, &[1.0, 0.0], 10.0, &opts).unwrap();
        assert!((sol.y_final[0] - 10f64.cos()).abs() < 1e-8);
        for i in 0..=200 {
            let t = i as f64 * 0.05;
            let v = sol.eval(t);
            assert!((v[0] - t.cos()).abs() < 1e-8, "t = {t}");
            assert!((v[1] + t.sin()).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn zero_horizon() {
        let sol = solve(&mut Oscillator, 0.0, &[1.0, 0.0], 0.0, &Options::default()).unwrap();
        assert!(sol.segments.is_empty());
        assert_eq!(sol.eval(0.0), [1.0, 0.0]);
    }
}
