//! Command-line front end: argument parsing, the five study commands and their
//! CSV/JSON writers.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfiguration;
use crate::ensemble_geometry::{coupling_strength_xi, effective_numbers, EffectiveNumbers, ProbeParameters};
use crate::geometry_scan::{evaluate_point, run_scan, PointResult, ScanRecord};
use crate::mode_projection::WaveBasis;
use crate::paraxial_optics::{lg_mode, mode_inner_product, ModeIndex};
use crate::quad::QuadratureSpec;
use crate::sme_oracle::{discrete_gaussian_model, simulate_trajectories, sites_with_weights, OracleStatistics};
use crate::squeezing_dynamics::{integrate, zeta_to_db, ModelConfig, Peak};
use crate::{Error, Result, FORMAT_VERSION};

#[derive(Debug, Parser)]
#[command(name = "faraday3d", version, about = "Spin squeezing of a Gaussian cloud under a focused Faraday probe")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set beam.waist_um=31`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Orthonormality residuals and sampled Laguerre-Gauss profiles.
    Modes(Common),
    /// Effective atom numbers, OD and coupling strength of the configured cloud.
    Effnums(Common),
    /// Squeezing trajectory of a single geometry.
    Simulate(Common),
    /// Geometry sweep under the cloud's density constraint.
    Scan(Common),
    /// Small-N stochastic master equation ensemble.
    Oracle(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Modes(c) | Command::Effnums(c) | Command::Simulate(c) | Command::Scan(c) | Command::Oracle(c) => c,
        }
    }
}

/// Resolve the configuration from file, overrides and flags.
pub fn resolve_config(common: &Common) -> Result<RunConfiguration> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut overrides = common.overrides.clone();
    if let Some(dir) = &common.out {
        let v = toml::Value::String(dir.to_string_lossy().into_owned());
        overrides.push(format!("output.dir={v}"));
    }
    if let Some(seed) = common.seed {
        if seed > i64::MAX as u64 {
            return Err(Error::validation("seed must fit in a signed 64-bit integer"));
        }
        overrides.push(format!("seed={seed}"));
    }
    RunConfiguration::load(&text, &overrides)
}

/// Run a parsed command, returning the files written.
pub fn execute(command: &Command) -> Result<Vec<PathBuf>> {
    let cfg = resolve_config(command.common())?;
    if matches!(command, Command::Effnums(_) | Command::Simulate(_) | Command::Scan(_)) {
        cfg.require_cloud()?;
    }
    let out = Output::create(&cfg)?;
    match command {
        Command::Modes(_) => cmd_modes(&cfg, &out),
        Command::Effnums(_) => cmd_effnums(&cfg, &out),
        Command::Simulate(_) => cmd_simulate(&cfg, &out),
        Command::Scan(_) => cmd_scan(&cfg, &out),
        Command::Oracle(_) => cmd_oracle(&cfg, &out),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Output directory bound to the resolved configuration.
pub struct Output<'a> {
    dir: PathBuf,
    cfg: &'a RunConfiguration,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    format: &'static str,
    config: &'a RunConfiguration,
    result: T,
}

impl<'a> Output<'a> {
    pub fn create(cfg: &'a RunConfiguration) -> Result<Self> {
        let dir = PathBuf::from(&cfg.output.dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, cfg })
    }

    fn write(&self, name: &str, text: String) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// CSV with a `# key=value` header block carrying the format and configuration.
    pub fn csv(&self, name: &str, extra: &[String], columns: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut s = format!("# format={FORMAT_VERSION}\n");
        for line in self.cfg.header_lines().iter().chain(extra) {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
        s.push_str(&columns.join(","));
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write(name, s)
    }

    pub fn json<T: Serialize>(&self, name: &str, result: T) -> Result<PathBuf> {
        let env = Envelope { format: FORMAT_VERSION, config: self.cfg, result };
        let mut text = serde_json::to_string_pretty(&env).expect("output serializes");
        text.push('\n');
        self.write(name, text)
    }
}

/// Twelve significant digits.
fn num(x: f64) -> String {
    format!("{x:.11e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "NaN".into())
}

#[derive(Serialize)]
struct ModesSummary {
    modes: usize,
    planes_um: Vec<f64>,
    max_residual: f64,
    max_residual_pair: Option<(String, String, f64)>,
}

pub fn cmd_modes(cfg: &RunConfiguration, out: &Output) -> Result<Vec<PathBuf>> {
    let beam = cfg.beam_params()?;
    let m = &cfg.modes;
    let l_set: Vec<i32> = (-(m.l_max as i32)..=m.l_max as i32).collect();
    let mut modes = Vec::new();
    for &l in &l_set {
        for p in 0..=m.p_max {
            modes.push(ModeIndex::new(p, l));
        }
    }
    let planes: Vec<f64> = m.planes_zr.iter().map(|z| z * beam.rayleigh_zr).collect();
    let spec = QuadratureSpec::default();
    let mut rows = Vec::new();
    let mut max_residual = 0.0f64;
    let mut worst = None;
    for &z in &planes {
        for &a in &modes {
            for &b in &modes {
                let v = mode_inner_product(a, b, z, &beam, &spec)?;
                let delta = if a == b { 1.0 } else { 0.0 };
                let r = (v - delta).norm();
                if r > max_residual || worst.is_none() {
                    max_residual = max_residual.max(r);
                    worst = Some((a.to_string(), b.to_string(), z));
                }
                rows.push(vec![
                    num(z),
                    a.p.to_string(),
                    a.l.to_string(),
                    b.p.to_string(),
                    b.l.to_string(),
                    num(v.re),
                    num(v.im),
                    num(r),
                ]);
            }
        }
    }
    let f1 = out.csv(
        "modes_residuals.csv",
        &[format!("max_residual={max_residual}")],
        &["z_um", "p_a", "l_a", "p_b", "l_b", "re", "im", "residual"],
        &rows,
    )?;
    let n = m.profile_points.max(2);
    let mut prof = Vec::new();
    for &z in &planes {
        let rmax = 3.0 * beam.width(z);
        for &a in modes.iter().filter(|a| a.l >= 0) {
            for i in 0..n {
                let rho = rmax * i as f64 / (n - 1) as f64;
                let u = lg_mode(a, rho, 0.0, z, &beam);
                prof.push(vec![num(z), num(rho), a.p.to_string(), a.l.to_string(), num(u.re), num(u.im)]);
            }
        }
    }
    let f2 = out.csv("mode_profiles.csv", &[], &["z_um", "rho_um", "p", "l", "re", "im"], &prof)?;
    let f3 = out.json(
        "modes.json",
        ModesSummary { modes: modes.len(), planes_um: planes, max_residual, max_residual_pair: worst },
    )?;
    Ok(vec![f1, f2, f3])
}

#[derive(Serialize)]
struct EffnumsSummary {
    total_n: f64,
    eta0_um3: f64,
    numbers: EffectiveNumbers,
    kappa: f64,
    xi_at_horizon: f64,
    rayleigh_zr_um: f64,
    mode_area_um2: f64,
}

pub fn cmd_effnums(cfg: &RunConfiguration, out: &Output) -> Result<Vec<PathBuf>> {
    let beam = cfg.beam_params()?;
    let species = cfg.species_params()?;
    let cloud = cfg.cloud_geometry()?;
    let numbers = effective_numbers(&cloud, &beam, &species)?;
    let gamma0 = cfg.dynamics.gamma0;
    let probe = ProbeParameters::new(gamma0, &species, &beam);
    let horizon_t = cfg.dynamics.horizon / gamma0;
    let count = cfg.dynamics.samples.max(2);
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let t = horizon_t * i as f64 / (count - 1) as f64;
        let xi = coupling_strength_xi(numbers.od_eff, gamma0, t, species.spin_f)?;
        rows.push(vec![num(t * gamma0), num(xi)]);
    }
    let f1 = out.csv(
        "effnums.csv",
        &[
            format!("N={}", cloud.total_n),
            format!("N1={}", numbers.n1),
            format!("N2={}", numbers.n2),
            format!("N3={}", numbers.n3),
            format!("od_eff={}", numbers.od_eff),
        ],
        &["gamma0_t", "xi"],
        &rows,
    )?;
    let f2 = out.json(
        "effnums.json",
        EffnumsSummary {
            total_n: cloud.total_n,
            eta0_um3: cloud.peak_density_eta0,
            numbers,
            kappa: probe.kappa,
            xi_at_horizon: coupling_strength_xi(numbers.od_eff, gamma0, horizon_t, species.spin_f)?,
            rayleigh_zr_um: beam.rayleigh_zr,
            mode_area_um2: beam.mode_area_a,
        },
    )?;
    Ok(vec![f1, f2])
}

/// Largest relative deviation of ζ from `1/(1+ξ)` over the trajectory.
pub fn no_decoherence_deviation(point: &PointResult, spin_f: f64) -> f64 {
    let od = point.numbers.od_eff;
    point
        .trajectory
        .samples
        .iter()
        .map(|s| {
            let xi = od * s.time / (18.0 * spin_f);
            (s.zeta * (1.0 + xi) - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    cloud: crate::ensemble_geometry::CloudGeometry,
    numbers: EffectiveNumbers,
    kappa: f64,
    peak: Option<Peak>,
    peak_zeta_inv_db: Option<f64>,
    n1_model: f64,
    n2_model: f64,
    steps: usize,
    refinement_delta_db: Option<f64>,
    converged: bool,
    no_decoherence_max_rel_deviation: Option<f64>,
    samples: &'a [crate::squeezing_dynamics::Sample],
}

pub fn cmd_simulate(cfg: &RunConfiguration, out: &Output) -> Result<Vec<PathBuf>> {
    let beam = cfg.beam_params()?;
    let species = cfg.species_params()?;
    let cloud = cfg.cloud_geometry()?;
    let settings = cfg.dynamics_settings();
    let point = evaluate_point(&cloud, &beam, &species, &settings)?;
    let rows: Vec<Vec<String>> = point
        .trajectory
        .samples
        .iter()
        .map(|s| vec![num(s.time), num(s.mean_fx00), num(s.var_fz00), num(s.zeta), num(zeta_to_db(s.zeta))])
        .collect();
    let deviation = (!settings.decoherence).then(|| no_decoherence_deviation(&point, species.spin_f));
    let mut extra = vec![format!("peak_zeta_inv_db={}", opt(point.peak_db()))];
    if let Some(d) = deviation {
        extra.push(format!("no_decoherence_max_rel_deviation={d}"));
    }
    let f1 = out.csv("trajectory.csv", &extra, &["gamma0_t", "mean_Fx00", "var_Fz00", "zeta", "zeta_inv_db"], &rows)?;
    let f2 = out.json(
        "simulate.json",
        SimulateSummary {
            cloud: point.cloud,
            numbers: point.numbers,
            kappa: point.kappa,
            peak: point.trajectory.peak,
            peak_zeta_inv_db: point.peak_db(),
            n1_model: point.trajectory.n1_model,
            n2_model: point.trajectory.n2_model,
            steps: point.trajectory.steps,
            refinement_delta_db: point.refinement_delta_db,
            converged: point.converged,
            no_decoherence_max_rel_deviation: deviation,
            samples: &point.trajectory.samples,
        },
    )?;
    Ok(vec![f1, f2])
}

#[derive(Serialize)]
struct ScanSummary<'a> {
    points: usize,
    failed: usize,
    optimum: Option<&'a ScanRecord>,
    records: &'a [ScanRecord],
}

pub fn cmd_scan(cfg: &RunConfiguration, out: &Output) -> Result<Vec<PathBuf>> {
    let spec = cfg.scan_spec()?;
    let result = run_scan(&spec)?;
    let rows: Vec<Vec<String>> = result
        .records
        .iter()
        .map(|r| {
            vec![
                num(r.aspect_ratio),
                num(r.waist),
                num(r.sigma_perp),
                num(r.sigma_z),
                num(r.eta0),
                num(r.total_n),
                num(r.n1),
                num(r.n2),
                num(r.n3),
                num(r.od_eff),
                opt(r.peak_db),
                opt(r.peak_time),
                r.converged.to_string(),
            ]
        })
        .collect();
    let t = &spec.dynamics.truncation;
    let extra = vec![
        format!("constraint={}", serde_json::to_string(&spec.constraint).unwrap()),
        format!("truncation.p_max={}", t.p_max),
        format!("truncation.slice_count={}", t.slice_count),
        format!("truncation.extent_sigmas={}", t.extent_sigmas),
    ];
    let f1 = out.csv(
        "scan.csv",
        &extra,
        &[
            "AR",
            "w0_um",
            "sigma_perp_um",
            "sigma_z_um",
            "eta0_um3",
            "N",
            "N1",
            "N2",
            "N3",
            "od_eff",
            "peak_zeta_inv_db",
            "peak_gamma0_t",
            "converged",
        ],
        &rows,
    )?;
    let f2 = out.json(
        "scan.json",
        ScanSummary {
            points: result.records.len(),
            failed: result.records.iter().filter(|r| r.error.is_some()).count(),
            optimum: result.optimum(),
            records: &result.records,
        },
    )?;
    Ok(vec![f1, f2])
}

#[derive(Serialize)]
struct OracleOutput {
    statistics: OracleStatistics,
    /// Conditional variance of the Gaussian model at the same times.
    gaussian_var_fz: Vec<f64>,
    gaussian_mean_fx: Vec<f64>,
    /// `(gaussian - sme) / stderr` at each checkpoint after the first.
    z_scores: Vec<f64>,
}

/// Oracle ensemble together with the Gaussian-model prediction at the checkpoints.
pub fn oracle_with_model(cfg: &RunConfiguration) -> Result<(OracleStatistics, Vec<f64>, Vec<f64>)> {
    let beam = cfg.beam_params()?;
    let basis = WaveBasis::symmetric(cfg.oracle.p_max);
    let sites = sites_with_weights(&cfg.oracle.weights, &basis, &beam)?;
    let ocfg = cfg.oracle_config();
    let stats = simulate_trajectories(cfg.oracle.trajectories, &sites, &ocfg, cfg.seed)?;
    let (tensor, initial) = discrete_gaussian_model(&sites, cfg.species.spin_f);
    let unit = if ocfg.gamma0 > 0.0 { ocfg.gamma0 } else { 1.0 };
    let mut mc = ModelConfig::new(ocfg.kappa, ocfg.gamma0);
    mc.spin_f = cfg.species.spin_f;
    mc.horizon = ocfg.horizon * unit;
    mc.samples = ocfg.checkpoints + 1;
    mc.rtol = 1e-10;
    mc.atol = 1e-12;
    let traj = integrate(&initial, &mc, &tensor)?;
    let mut var = Vec::with_capacity(stats.times.len());
    let mut mean = Vec::with_capacity(stats.times.len());
    for &t in &stats.times {
        let s = traj
            .samples
            .iter()
            .min_by(|a, b| (a.time / unit - t).abs().partial_cmp(&(b.time / unit - t).abs()).unwrap())
            .ok_or_else(|| Error::validation("empty Gaussian-model trajectory"))?;
        var.push(s.var_fz00);
        mean.push(s.mean_fx00);
    }
    Ok((stats, var, mean))
}

pub fn cmd_oracle(cfg: &RunConfiguration, out: &Output) -> Result<Vec<PathBuf>> {
    let (statistics, gaussian_var_fz, gaussian_mean_fx) = oracle_with_model(cfg)?;
    let z_scores = (1..statistics.times.len())
        .map(|i| (gaussian_var_fz[i] - statistics.var_fz.mean[i]) / statistics.var_fz.stderr[i])
        .collect();
    let f = out.json("oracle.json", OracleOutput { statistics, gaussian_var_fz, gaussian_mean_fx, z_scores })?;
    Ok(vec![f])
}

/// Path helper used by tests and scripts.
pub fn output_file(cfg: &RunConfiguration, name: &str) -> PathBuf {
    Path::new(&cfg.output.dir).join(name)
}
