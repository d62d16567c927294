//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use faraday3d::cli::{main_with_args, no_decoherence_deviation, oracle_with_model};
use faraday3d::config::RunConfiguration;
use faraday3d::ensemble_geometry::{
    effective_atom_number, effective_atom_number_quadrature, AtomicSpecies, CloudGeometry, CM3_TO_UM3,
};
use faraday3d::geometry_scan::{
    evaluate_point, run_scan, symmetric_limit_study, symmetric_peak_db, Axes, Constraint, DynamicsSettings, ScanSpec,
    Truncation,
};
use faraday3d::paraxial_optics::{mode_inner_product, BeamParameters, ModeIndex, DEFAULT_WAVELENGTH_UM};
use faraday3d::quad::QuadratureSpec;
use faraday3d::sme_oracle::{diffuse_map, spin_f_flip_rate_probe, SpinOperators};
use faraday3d::squeezing_dynamics::symmetric_1d_variance;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn beam(w0: f64) -> BeamParameters {
    BeamParameters::new(DEFAULT_WAVELENGTH_UM, w0).unwrap()
}

fn species() -> AtomicSpecies {
    AtomicSpecies::spin_half(DEFAULT_WAVELENGTH_UM).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_mode_algebra() -> Outcome {
    let start = Instant::now();
    let b = beam(20.0);
    let spec = QuadratureSpec::default();
    let modes: Vec<ModeIndex> = (-3..=3).flat_map(|l| (0..=6).map(move |p| ModeIndex::new(p, l))).collect();
    let mut worst = 0.0f64;
    for zr in [-2.0, -0.5, 0.0, 1.0, 3.0] {
        let z = zr * b.rayleigh_zr;
        for &a in &modes {
            for &m in &modes {
                let v = mode_inner_product(a, m, z, &b, &spec).map_err(|e| e.to_string())?;
                let delta = if a == m { 1.0 } else { 0.0 };
                worst = worst.max((v - delta).norm());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-8 && secs < 10.0, format!("max residual {worst:.2e} over 49 modes x 5 planes in {secs:.2} s"))
}

/// Monte-Carlo `∫ η |u00|^{2K}` for K = 1..3 by sampling the density.
fn monte_carlo(cloud: &CloudGeometry, b: &BeamParameters, samples: usize, seed: u64) -> [(f64, f64); 3] {
    let mut rng = StdRng::seed_from_u64(seed);
    let tr = Normal::new(0.0, cloud.sigma_perp / 2.0).unwrap();
    let ax = Normal::new(0.0, cloud.sigma_z / 2.0).unwrap();
    let mut s = [0.0; 3];
    let mut s2 = [0.0; 3];
    for _ in 0..samples {
        let (x, y, z) = (tr.sample(&mut rng), tr.sample(&mut rng), ax.sample(&mut rng));
        let w2 = b.waist_w0.powi(2) * (1.0 + (z / b.rayleigh_zr).powi(2));
        let i = b.waist_w0.powi(2) / w2 * (-2.0 * (x * x + y * y) / w2).exp();
        let mut v = 1.0;
        for k in 0..3 {
            v *= i;
            s[k] += v;
            s2[k] += v * v;
        }
    }
    let n = samples as f64;
    std::array::from_fn(|k| {
        let mean = s[k] / n;
        let var = (s2[k] / n - mean * mean).max(0.0);
        (cloud.total_n * mean, cloud.total_n * (var / n).sqrt())
    })
}

fn c2_effective_numbers() -> Outcome {
    let geometries = [
        (100.0, 100.0, 10.0),
        (100.0, 100.0, 100.0),
        (30.0, 3000.0, 20.0),
        (33.9, 8680.0, 31.0),
        (500.0, 50.0, 20.0),
        (10.0, 10.0, 40.0),
        (60.0, 600.0, 15.0),
        (200.0, 20000.0, 60.0),
        (5.0, 20000.0, 5.0),
        (150.0, 1500.0, 150.0),
    ];
    let mut worst_z = 0.0f64;
    let mut worst_q = 0.0f64;
    for (i, &(sp, sz, w0)) in geometries.iter().enumerate() {
        let b = beam(w0);
        let cloud = CloudGeometry::from_density(sp, sz, 0.5).unwrap();
        let mc = monte_carlo(&cloud, &b, 10_000_000, 100 + i as u64);
        for k in 1..=3u32 {
            let a = effective_atom_number(k, &cloud, &b).map_err(|e| e.to_string())?;
            let q = effective_atom_number_quadrature(k, &cloud, &b).map_err(|e| e.to_string())?;
            let (m, se) = mc[k as usize - 1];
            worst_z = worst_z.max((a - m).abs() / se);
            worst_q = worst_q.max((a / q - 1.0).abs());
        }
    }
    check(
        worst_z < 3.0 && worst_q < 1e-6,
        format!("10 geometries, 1e7 samples: worst |z| {worst_z:.2}, analytic vs quadrature {worst_q:.1e}"),
    )
}

fn c3_no_decoherence() -> Outcome {
    let start = Instant::now();
    let od = 50.0;
    // ξ = OD γ0 t / (18 f) reaches 50 at γ0 t = 9
    let settings = DynamicsSettings { decoherence: false, horizon: 9.0, ..DynamicsSettings::default() };
    let mut worst = 0.0f64;
    for (sp, sz, w0) in
        [(100.0, 100.0, 10.0), (500.0, 50.0, 20.0), (30.0, 3000.0, 20.0), (0.2, 14.7, 20.0), (100.0, 100.0, 1e3)]
    {
        let b = beam(w0);
        let cloud = Constraint::FixedOdEff(od).resolve((sp, sz), &b, &species()).unwrap();
        let p = evaluate_point(&cloud, &b, &species(), &settings).map_err(|e| e.to_string())?;
        worst = worst.max(no_decoherence_deviation(&p, 0.5));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 0.01 && secs < 60.0,
        format!("5 geometries, xi <= 50: max deviation {:.3}% in {secs:.1} s", 100.0 * worst),
    )
}

fn c4_symmetric_limit() -> Outcome {
    let od = 50.0;
    let b = beam(20.0);
    let cloud =
        Constraint::FixedOdEff(od).resolve((b.waist_w0 / 100.0, b.rayleigh_zr / 100.0), &b, &species()).unwrap();
    let settings = DynamicsSettings {
        horizon: 3.0,
        samples: 301,
        truncation: Truncation { p_max: 20, slice_count: 31, extent_sigmas: 3.0 },
        ..DynamicsSettings::default()
    };
    let p = evaluate_point(&cloud, &b, &species(), &settings).map_err(|e| e.to_string())?;
    let n = cloud.total_n;
    let worst = p
        .trajectory
        .samples
        .iter()
        .map(|s| (s.var_fz00 / symmetric_1d_variance(s.time, n, od, 1.0) - 1.0).abs())
        .fold(0.0, f64::max);
    let v0 = p.trajectory.samples[0].var_fz00 / (n / 4.0) - 1.0;
    let ods = [1e2, 1e3, 1e4];
    let y: Vec<f64> = ods.iter().map(|&o| symmetric_1d_variance(1e3, n, o, 1.0).ln()).collect();
    let x: Vec<f64> = ods.iter().map(|o| o.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / 3.0, y.iter().sum::<f64>() / 3.0);
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    check(
        worst < 0.01 && v0.abs() < 1e-3 && (slope + 0.5).abs() < 0.02,
        format!(
            "max deviation from tanh {:.3}% on [0,3], t=0 variance vs N/4 {:.1e}, log-log slope {slope:.4}",
            100.0 * worst,
            v0
        ),
    )
}

fn c5_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfiguration::load("seed = 7\n", &[]).map_err(|e| e.to_string())?;
    let o = &cfg.oracle;
    if o.weights != [1.0, 0.8, 0.5, 0.3]
        || o.trajectories != 2000
        || o.checkpoints != 10
        || o.kappa <= 0.0
        || o.gamma0 <= 0.0
    {
        return Err("default oracle configuration differs from the criterion".into());
    }
    let (stats, var, _) = oracle_with_model(&cfg).map_err(|e| e.to_string())?;
    let z: Vec<f64> =
        (1..stats.times.len()).map(|i| (var[i] - stats.var_fz.mean[i]) / stats.var_fz.stderr[i]).collect();
    let worst = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let secs = start.elapsed().as_secs_f64();
    check(
        z.len() == 10 && worst < 3.0 && secs < 600.0,
        format!(
            "{} checkpoints, worst |z| {worst:.2}, trace in [{:.3e}, {:.3e}], {secs:.1} s",
            z.len(),
            stats.min_trace,
            stats.max_trace
        ),
    )
}

fn c6_spherical_waists() -> Outcome {
    let sym = symmetric_peak_db(50.0);
    let settings = DynamicsSettings { certify: true, ..DynamicsSettings::default() };
    let start = Instant::now();
    let rows = symmetric_limit_study(100.0, 50.0, &[10.0, 1e4], &species(), &settings).map_err(|e| e.to_string())?;
    let per_point = start.elapsed().as_secs_f64() / 2.0;
    let (a, b) = (&rows[0], &rows[1]);
    let (pa, pb) = (a.full_peak_db.unwrap_or(f64::NAN), b.full_peak_db.unwrap_or(f64::NAN));
    let da = a.refinement_delta_db.unwrap_or(f64::INFINITY);
    check(
        (sym - 3.52).abs() <= 0.05
            && (pa - 4.99).abs() <= 0.3
            && da <= 0.1
            && a.converged
            && (pb - sym).abs() <= 0.05
            && per_point < 1800.0,
        format!("symmetric {sym:.3} dB, w0=10 {pa:.3} dB (refinement {da:.1e} dB), w0=1e4 {pb:.3} dB, {per_point:.1} s/point"),
    )
}

fn c7_fixed_n_optimum() -> Outcome {
    let n = 9.84e6;
    let eta0 = 5e11 * CM3_TO_UM3;
    let volume = n / (eta0 * (PI / 2.0).powf(1.5));
    let ars = [128.0, 181.0, 256.0, 362.0, 512.0];
    let waists = [22.0, 26.0, 31.0, 37.0, 44.0];
    let spec = ScanSpec {
        axes: Axes::AspectWaist { aspect_ratios: ars.to_vec(), waists: waists.to_vec(), volume },
        constraint: Constraint::FixedTotalN(n),
        species: species(),
        dynamics: DynamicsSettings::default(),
    };
    let res = run_scan(&spec).map_err(|e| e.to_string())?;
    let best = res.optimum().ok_or("no successful grid point")?;
    let interior =
        best.aspect_ratio > ars[0] && best.aspect_ratio < ars[4] && best.waist > waists[0] && best.waist < waists[4];
    let b = beam(best.waist);
    let cloud = CloudGeometry::from_total_n(best.sigma_perp, best.sigma_z, n).unwrap();
    let certified = DynamicsSettings { certify: true, ..DynamicsSettings::default() };
    let p = evaluate_point(&cloud, &b, &species(), &certified).map_err(|e| e.to_string())?;
    let peak = p.peak_db().unwrap_or(f64::NAN);
    let delta = p.refinement_delta_db.unwrap_or(f64::INFINITY);
    let rz = best.sigma_z / b.rayleigh_zr;
    let rp = best.sigma_perp / best.waist;
    check(
        interior && (peak - 10.0).abs() <= 1.0 && delta <= 0.1 && (rz / 2.42 - 1.0).abs() <= 0.1 && (rp / 1.09 - 1.0).abs() <= 0.1,
        format!(
            "optimum AR {:.0}, w0 {:.0} um: {peak:.3} dB (refinement {delta:.1e} dB), sigma_z/zR {rz:.3}, sigma_perp/w0 {rp:.3}",
            best.aspect_ratio, best.waist
        ),
    )
}

fn c8_aspect_trend() -> Outcome {
    let b = beam(20.0);
    let settings = DynamicsSettings { certify: true, ..DynamicsSettings::default() };
    let mut points = Vec::new();
    for ar in [0.1, 1.0, 10.0, 100.0, 316.0] {
        let shape = CloudGeometry::shape_from_aspect(ar, 1e7).unwrap();
        let cloud = Constraint::FixedOdEff(50.0).resolve(shape, &b, &species()).unwrap();
        points.push(evaluate_point(&cloud, &b, &species(), &settings).map_err(|e| e.to_string())?);
    }
    let peaks: Vec<f64> = points.iter().map(|p| p.peak_db().unwrap_or(f64::NAN)).collect();
    let monotone = peaks.windows(2).all(|w| w[1] >= w[0]);
    let (pancake, pencil) = (&points[0], &points[4]);
    let times = [pencil.trajectory.peak.unwrap().time, pancake.trajectory.peak.unwrap().time];
    let slower = times
        .iter()
        .all(|&t| pencil.trajectory.normalized_mean_at(t).unwrap() > pancake.trajectory.normalized_mean_at(t).unwrap());
    let t = times[0];
    check(
        monotone && peaks[4] > peaks[0] && slower && points.iter().all(|p| p.converged),
        format!(
            "peaks {:?} dB, mean at pencil peak time {t:.3}: pencil {:.3} vs pancake {:.3}",
            peaks.iter().map(|p| (p * 1e3).round() / 1e3).collect::<Vec<_>>(),
            pencil.trajectory.normalized_mean_at(t).unwrap(),
            pancake.trajectory.normalized_mean_at(t).unwrap()
        ),
    )
}

fn c9_map_identities() -> Outcome {
    let c = |x: f64| Complex64::new(x, 0.0);
    let ops = SpinOperators::new(0.5).unwrap();
    let ex = (diffuse_map(&ops, 2.0, &ops.fx) + &ops.fx * c(1.0 / 3.0)).norm();
    let ez = (diffuse_map(&ops, 2.0, &ops.fz) + &ops.fz * c(2.0 / 9.0)).norm();
    let rho = DMatrix::from_row_slice(2, 2, &[c(0.7), Complex64::new(0.2, 0.1), Complex64::new(0.2, -0.1), c(0.3)]);
    let half_trace = diffuse_map(&ops, 2.0, &rho).trace().norm();
    let cs = spin_f_flip_rate_probe(4.0, 0.25).map_err(|e| e.to_string())?;
    let half = spin_f_flip_rate_probe(0.5, 2.0).map_err(|e| e.to_string())?;
    check(
        ex < 1e-12 && ez < 1e-12 && half_trace < 1e-14 && half.trace_loss.abs() < 1e-14 && cs.trace_loss > 1e-3,
        format!(
            "|D[fx]+fx/3| {ex:.1e}, |D[fz]+2fz/9| {ez:.1e}, f=1/2 trace change {half_trace:.1e}, f=4 trace loss {:.4}",
            cs.trace_loss
        ),
    )
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let read_all = |d: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 11\n[cloud]\nod_eff = 30.0\nsigma_z_um = 400.0\n[dynamics]\np_max = 8\nslice_count = 31\nhorizon = 5.0\n[scan]\naspect_ratios = [1.0, 4.0]\nwaists_um = [15.0, 30.0]\n[oracle]\ntrajectories = 50\nsteps = 100\n",
    )
    .unwrap();
    let mut files = 0;
    for cmd in ["modes", "effnums", "simulate", "scan", "oracle"] {
        let out = dir.path().join(cmd);
        let args = ["faraday3d", cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        if main_with_args(args) != 0 {
            return Err(format!("{cmd} failed"));
        }
        let first = read_all(&out);
        if main_with_args(args) != 0 {
            return Err(format!("{cmd} failed on re-run"));
        }
        if read_all(&out) != first {
            return Err(format!("{cmd} output differs between runs"));
        }
        files += first.len();
    }
    Ok(format!("5 commands re-run, {files} files bit-identical"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("C1 mode algebra", c1_mode_algebra),
        ("C2 effective numbers", c2_effective_numbers),
        ("C3 no-decoherence law", c3_no_decoherence),
        ("C4 symmetric-limit equivalence", c4_symmetric_limit),
        ("C5 oracle equivalence", c5_oracle),
        ("C6 spherical cloud waist study", c6_spherical_waists),
        ("C7 fixed-N geometry optimum", c7_fixed_n_optimum),
        ("C8 aspect-ratio trend", c8_aspect_trend),
        ("C9 map identities", c9_map_identities),
        ("C10 determinism", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
