use approx::assert_relative_eq;
use faraday3d::mode_projection::WaveBasis;
use faraday3d::paraxial_optics::{BeamParameters, DEFAULT_WAVELENGTH_UM};
use faraday3d::sme_oracle::*;
use faraday3d::squeezing_dynamics::{integrate, ModelConfig};
use faraday3d::Error;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn beam() -> BeamParameters {
    BeamParameters::new(DEFAULT_WAVELENGTH_UM, 10.0).unwrap()
}

fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

fn config(kappa: f64, gamma0: f64, horizon: f64, steps: usize, checkpoints: usize) -> OracleConfig {
    OracleConfig { kappa, gamma0, spin_f: 0.5, lande_gf: 2.0, horizon, steps, checkpoints }
}

/// Pauli-based spin-1/2 operators written out by hand.
fn pauli() -> [DMatrix<Complex64>; 3] {
    let z = c(0.0);
    let i = Complex64::i();
    [
        DMatrix::from_row_slice(2, 2, &[z, c(0.5), c(0.5), z]),
        DMatrix::from_row_slice(2, 2, &[z, -i * 0.5, i * 0.5, z]),
        DMatrix::from_row_slice(2, 2, &[c(0.5), z, z, c(-0.5)]),
    ]
}

fn random_density(d: usize, seed: &[f64]) -> DMatrix<Complex64> {
    let a = DMatrix::from_fn(d, d, |i, j| {
        Complex64::new(seed[(i * d + j) % seed.len()], seed[(3 * i + 7 * j + 1) % seed.len()])
    });
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    rho / tr
}

#[test]
fn spin_operators_algebra() {
    let ops = SpinOperators::new(0.5).unwrap();
    let [px, py, pz] = pauli();
    assert!((&ops.fx - px).norm() < 1e-15);
    assert!((&ops.fy - py).norm() < 1e-15);
    assert!((&ops.fz - pz).norm() < 1e-15);
    for f in [0.5, 1.0, 1.5, 4.0] {
        let o = SpinOperators::new(f).unwrap();
        let d = o.dim();
        assert_eq!(d, (2.0 * f) as usize + 1);
        let comm = &o.fx * &o.fy - &o.fy * &o.fx;
        assert!((comm - &o.fz * Complex64::i()).norm() < 1e-12);
        let casimir = &o.fx * &o.fx + &o.fy * &o.fy + &o.fz * &o.fz;
        assert!((casimir - DMatrix::identity(d, d) * c(f * (f + 1.0))).norm() < 1e-12);
    }
    assert!(SpinOperators::new(0.3).is_err());
}

#[test]
fn diffuse_map_identities() {
    let ops = SpinOperators::new(0.5).unwrap();
    let dx = diffuse_map(&ops, 2.0, &ops.fx);
    let dz = diffuse_map(&ops, 2.0, &ops.fz);
    assert!((dx + &ops.fx * c(1.0 / 3.0)).norm() < 1e-12);
    assert!((dz + &ops.fz * c(2.0 / 9.0)).norm() < 1e-12);
    let mixed = DMatrix::identity(2, 2) * c(0.5);
    assert!(diffuse_map(&ops, 2.0, &mixed).norm() < 1e-15);
    let rho = random_density(2, &[0.3, -0.2, 0.9, 0.1, 0.4]);
    assert!(diffuse_map(&ops, 2.0, &rho).trace().norm() < 1e-15);
}

#[test]
fn flip_rate_probe() {
    let half = spin_f_flip_rate_probe(0.5, 2.0).unwrap();
    assert_relative_eq!(half.flip_rate, 1.0 / 6.0, max_relative = 1e-12);
    assert_relative_eq!(half.reference, 1.0 / 6.0, max_relative = 1e-15);
    assert!(half.trace_loss.abs() < 1e-14);
    // transverse matrix elements of the stretched state give g² f / 12
    let cs = spin_f_flip_rate_probe(4.0, 0.25).unwrap();
    assert_relative_eq!(cs.flip_rate, 0.25f64.powi(2) * 4.0 / 12.0, max_relative = 1e-10);
    assert_relative_eq!(cs.reference, 1.0 / 48.0, max_relative = 1e-15);
    assert_relative_eq!(cs.trace_loss, 2.0 / 9.0 - 11.0 / 144.0, max_relative = 1e-10);
    assert!(cs.trace_loss > 0.0);
}

#[test]
fn generator_matches_single_atom_map() {
    let b = beam();
    let basis = WaveBasis::symmetric(0);
    let sites = sites_with_weights(&[0.6], &basis, &b).unwrap();
    let mut st = EnsembleState::coherent_x(sites, 0.5).unwrap();
    st.rho = random_density(2, &[0.5, 0.1, -0.7, 0.2]);
    let g = local_diffuse_generator(&st, 1.5, 2.0);
    let expect = diffuse_map(&st.ops, 2.0, &st.rho) * c(1.5 * 0.6);
    assert!((g - expect).norm() < 1e-14);
}

#[test]
fn sites_reproduce_weights() {
    let b = beam();
    let basis = WaveBasis::symmetric(3);
    let w = [1.0, 0.8, 0.5, 0.3];
    let sites = sites_with_weights(&w, &basis, &b).unwrap();
    for (s, &x) in sites.iter().zip(&w) {
        assert_relative_eq!(s.beta00(), x, max_relative = 1e-14);
        assert_eq!(s.beta.len(), 4);
    }
    assert!(sites_with_weights(&[1.2], &basis, &b).is_err());
    assert!(sites_with_weights(&[0.0], &basis, &b).is_err());
}

#[test]
fn coherent_state_moments() {
    let b = beam();
    let basis = WaveBasis::symmetric(0);
    let w = [1.0, 0.8, 0.5, 0.3];
    let st = EnsembleState::coherent_x(sites_with_weights(&w, &basis, &b).unwrap(), 0.5).unwrap();
    assert_eq!(st.dim(), 16);
    assert_relative_eq!(st.trace(), 1.0, max_relative = 1e-14);
    let (m, v) = st.fz_moments();
    assert!(m.abs() < 1e-14);
    assert_relative_eq!(v, w.iter().map(|x| x * x / 4.0).sum::<f64>(), max_relative = 1e-13);
    assert_relative_eq!(st.fx_mean(), w.iter().sum::<f64>() / 2.0, max_relative = 1e-13);
}

#[test]
fn budget_enforced() {
    let b = beam();
    let basis = WaveBasis::symmetric(0);
    let many = sites_with_weights(&[0.9; 8], &basis, &b).unwrap();
    assert!(matches!(EnsembleState::coherent_x(many.clone(), 0.5), Err(Error::Budget { dim: 256, .. })));
    assert!(matches!(simulate_trajectories(2, &many, &config(1.0, 0.0, 1.0, 10, 2), 1), Err(Error::Budget { .. })));
    let three = sites_with_weights(&[0.9; 3], &basis, &b).unwrap();
    assert!(matches!(EnsembleState::coherent_x(three, 4.0), Err(Error::Budget { dim: 729, .. })));
}

#[test]
fn kraus_preconditions_and_record() {
    let b = beam();
    let basis = WaveBasis::symmetric(0);
    let sites = sites_with_weights(&[1.0, 0.7], &basis, &b).unwrap();
    let mut st = EnsembleState::coherent_x(sites, 0.5).unwrap();
    assert!(matches!(kraus_measurement_step(&mut st, 0.1, 0.0, 0.0), Err(Error::Domain(_))));
    assert!(matches!(kraus_measurement_step(&mut st, 0.0, 0.0, 1.0), Err(Error::Domain(_))));
    let (mean, _) = st.fz_moments();
    let (dt, dw, kappa) = (0.01, 0.03, 4.0);
    let dy = kraus_measurement_step(&mut st, dt, dw, kappa).unwrap();
    assert_relative_eq!(dy, mean * dt + dw / kappa.sqrt(), max_relative = 1e-14);
    assert_relative_eq!(st.trace(), 1.0, max_relative = 1e-14);
}

#[test]
fn kraus_leaves_eigenstates_alone() {
    let b = beam();
    let basis = WaveBasis::symmetric(2);
    let sites = sites_with_weights(&[1.0, 0.6, 0.4], &basis, &b).unwrap();
    let mut st = EnsembleState::coherent_x(sites, 0.5).unwrap();
    let n = st.dim();
    let mut rho = DMatrix::zeros(n, n);
    rho[(5, 5)] = c(1.0);
    st.rho = rho.clone();
    kraus_measurement_step(&mut st, 0.05, 0.3, 2.0).unwrap();
    assert!((&st.rho - rho).norm() < 1e-14);
}

/// One Kraus step agrees with the first-order stochastic master equation
/// `dρ = (κ/4) D[L]ρ dt + (√κ/2) H[ρ] dW`.
#[test]
fn kraus_matches_first_order_sme() {
    let b = beam();
    let basis = WaveBasis::symmetric(0);
    let sites = sites_with_weights(&[1.0, 0.5], &basis, &b).unwrap();
    let mut st = EnsembleState::coherent_x(sites, 0.5).unwrap();
    let rho0 = st.rho.clone();
    let l =
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(st.dim(), st.fundamental_wave().into_iter().map(c)));
    let mean = (&l * &rho0).trace();
    let kappa = 3.0;
    let (dt, dw) = (1e-9, 3e-5);
    kraus_measurement_step(&mut st, dt, dw, kappa).unwrap();
    let lm = &l - DMatrix::identity(st.dim(), st.dim()) * mean;
    let h = &lm * &rho0 + &rho0 * &lm;
    let lind = &l * &rho0 * &l - (&l * &l * &rho0 + &rho0 * &l * &l) * c(0.5);
    let euler = &rho0 + h * c(kappa.sqrt() / 2.0 * dw) + lind * c(kappa / 4.0 * dt);
    assert!((&st.rho - &euler).norm() < 10.0 * kappa * dw * dw, "{}", (&st.rho - &euler).norm());
}

#[test]
fn counter_rng_is_standard_normal_and_keyed() {
    assert_eq!(gaussian(3, 5, 7), gaussian(3, 5, 7));
    assert_ne!(gaussian(3, 5, 7), gaussian(3, 5, 8));
    assert_ne!(gaussian(3, 5, 7), gaussian(3, 6, 7));
    assert_ne!(gaussian(3, 5, 7), gaussian(4, 5, 7));
    let n = 40_000;
    let xs: Vec<f64> = (0..n).map(|k| gaussian(11, 2, k)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let kurt = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64 / (var * var);
    assert!(mean.abs() < 4.0 / (n as f64).sqrt());
    assert!((var - 1.0).abs() < 0.03);
    assert!((kurt - 3.0).abs() < 0.15);
}

#[test]
fn trajectories_are_deterministic() {
    let b = beam();
    let basis = WaveBasis::symmetric(1);
    let sites = sites_with_weights(&[1.0, 0.8, 0.5, 0.3], &basis, &b).unwrap();
    let cfg = config(1.0, 1.0, 1.0, 40, 4);
    let (a, _) = run_trajectory(&sites, &cfg, 9, 0).unwrap();
    let (b2, _) = run_trajectory(&sites, &cfg, 9, 0).unwrap();
    assert_eq!(a, b2);
    let (other, _) = run_trajectory(&sites, &cfg, 10, 0).unwrap();
    assert_ne!(a.record, other.record);
    assert_eq!(a.times.len(), 5);
    assert_eq!(a.record.len(), 40);
    let s1 = simulate_trajectories(6, &sites, &cfg, 5).unwrap();
    let s2 = simulate_trajectories(6, &sites, &cfg, 5).unwrap();
    assert_eq!(serde_json::to_string(&s1).unwrap(), serde_json::to_string(&s2).unwrap());
    assert!(matches!(simulate_trajectories(0, &sites, &cfg, 5), Err(Error::Validation(_))));
    assert!(matches!(run_trajectory(&sites, &config(1.0, 1.0, 1.0, 41, 4), 1, 0), Err(Error::Validation(_))));
}

#[test]
fn trace_and_positivity_along_trajectories() {
    let b = beam();
    let basis = WaveBasis::symmetric(2);
    let sites = sites_with_weights(&[1.0, 0.8, 0.5, 0.3], &basis, &b).unwrap();
    let cfg = config(2.0, 1.0, 1.0, 100, 10);
    for t in 0..4 {
        let (rec, fin) = run_trajectory(&sites, &cfg, 21, t).unwrap();
        for m in &rec.moments {
            assert!((m.trace - 1.0).abs() < 1e-12);
            assert!(m.var_fz > 0.0);
        }
        let h = (&fin.rho + fin.rho.adjoint()) * c(0.5);
        assert!((&fin.rho - &h).norm() < 1e-12);
        let ev = h.map(|v| v.re).symmetric_eigenvalues();
        assert!(ev.iter().all(|&e| e >= -1e-10));
    }
}

#[test]
fn spin_four_trace_decreases() {
    let b = beam();
    let basis = WaveBasis::symmetric(0);
    let sites = sites_with_weights(&[1.0, 0.5], &basis, &b).unwrap();
    let mut last = 1.0;
    for horizon in [0.5, 1.0, 2.0] {
        let cfg = OracleConfig { spin_f: 4.0, lande_gf: 0.25, ..config(1.0, 1.0, horizon, 20, 1) };
        let st = unconditioned_evolution(&sites, &cfg).unwrap();
        let tr = st.trace();
        assert!(tr < last, "{tr} !< {last}");
        last = tr;
    }
    let half = unconditioned_evolution(&sites, &config(1.0, 1.0, 2.0, 20, 1)).unwrap();
    assert!((half.trace() - 1.0).abs() < 1e-12);
}

/// Homogeneous ensemble without scattering: conditional variance `V0/(1 + κ V0 t)`.
#[test]
fn homogeneous_measurement_only() {
    let b = beam();
    let basis = WaveBasis::symmetric(0);
    let sites = sites_with_weights(&[1.0; 4], &basis, &b).unwrap();
    let cfg = config(1.0, 0.0, 1.0, 200, 5);
    let stats = simulate_trajectories(400, &sites, &cfg, 3).unwrap();
    let v0 = 1.0;
    for (i, &t) in stats.times.iter().enumerate().skip(1) {
        let expect = v0 / (1.0 + cfg.kappa * v0 * t);
        let (m, se) = (stats.var_fz.mean[i], stats.var_fz.stderr[i]);
        assert!((m - expect).abs() < 3.0 * se.max(1e-3 * expect), "t={t}: {m} ± {se} vs {expect}");
    }
}

#[test]
fn ensemble_average_is_unconditioned_evolution() {
    let b = beam();
    let basis = WaveBasis::symmetric(1);
    let sites = sites_with_weights(&[1.0, 0.7, 0.4], &basis, &b).unwrap();
    let cfg = config(2.0, 1.0, 1.0, 100, 1);
    let stats = simulate_trajectories(1500, &sites, &cfg, 17).unwrap();
    let avg = stats.mean_final_state.unwrap();
    let det = unconditioned_evolution(&sites, &cfg).unwrap();
    let diff = (&avg - &det.rho).map(|v| v.norm()).max();
    assert!(diff < 0.01, "{diff}");
    // the measurement noise averages out of the diagonal too
    let stats2 = simulate_trajectories(1500, &sites, &cfg, 18).unwrap();
    let spread = (stats2.mean_final_state.unwrap() - &avg).map(|v| v.norm()).max();
    assert!(diff < 3.0 * spread.max(1e-3), "{diff} vs seed spread {spread}");
}

#[test]
fn gaussian_model_agrees_with_oracle() {
    let b = beam();
    let basis = WaveBasis::symmetric(0);
    let sites = sites_with_weights(&[1.0, 0.8, 0.5, 0.3], &basis, &b).unwrap();
    let cfg = config(1.0, 1.0, 1.0, 200, 5);
    let stats = simulate_trajectories(600, &sites, &cfg, 4).unwrap();
    let (tensor, initial) = discrete_gaussian_model(&sites, 0.5);
    let mut mc = ModelConfig::new(cfg.kappa, cfg.gamma0);
    mc.horizon = cfg.horizon;
    mc.samples = cfg.checkpoints + 1;
    mc.rtol = 1e-10;
    mc.atol = 1e-12;
    let traj = integrate(&initial, &mc, &tensor).unwrap();
    for (i, &t) in stats.times.iter().enumerate().skip(1) {
        let s = traj.samples.iter().find(|s| (s.time - t).abs() < 1e-9).unwrap();
        let z = (s.var_fz00 - stats.var_fz.mean[i]) / stats.var_fz.stderr[i];
        assert!(z.abs() < 3.0, "t={t}: z={z}");
        // the model omits measurement dephasing of the mean spin, which only lowers it
        assert!(
            stats.fx.mean[i] <= s.mean_fx00 + 3.0 * stats.fx.stderr[i],
            "t={t}: {} vs {}",
            stats.fx.mean[i],
            s.mean_fx00
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn superoperator_matches_map(f2 in 1usize..=8, g in 0.1f64..2.5, seed in prop::collection::vec(-1.0f64..1.0, 7)) {
        let ops = SpinOperators::new(f2 as f64 / 2.0).unwrap();
        let d = ops.dim();
        let rho = random_density(d, &seed);
        let s = diffuse_superoperator(&ops, g);
        let v = DMatrix::from_column_slice(d * d, 1, rho.as_slice());
        let out = s * v;
        let direct = diffuse_map(&ops, g, &rho);
        prop_assert!((DMatrix::from_column_slice(d, d, out.as_slice()) - direct).norm() < 1e-12);
    }

    #[test]
    fn spin_half_trace_preserved(seed in prop::collection::vec(-1.0f64..1.0, 5)) {
        let ops = SpinOperators::new(0.5).unwrap();
        let rho = random_density(2, &seed);
        prop_assert!(diffuse_map(&ops, 2.0, &rho).trace().norm() < 1e-14);
    }

    #[test]
    fn trace_never_grows(f2 in 1usize..=8, g in 0.0f64..2.0, seed in prop::collection::vec(-1.0f64..1.0, 7)) {
        let f = f2 as f64 / 2.0;
        let ops = SpinOperators::new(f).unwrap();
        let rho = random_density(ops.dim(), &seed);
        let dtr = diffuse_map(&ops, g, &rho).trace().re;
        // Tr D[ρ] = -(2/9) + (g²/9)⟨f_z² + (f_x² + f_y²)/2⟩ ≤ -(2/9) + g² f(f+1)/9
        let bound = -2.0 / 9.0 + g * g / 9.0 * (f * (f + 1.0));
        prop_assert!(dtr <= bound + 1e-12);
        if g <= 2.0 / (2.0 * f * (f + 1.0)).sqrt() {
            prop_assert!(dtr <= 1e-12);
        }
    }
}
