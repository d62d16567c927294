//! Run configuration: TOML ingestion, dotted-key overrides and validation.

use serde::{Deserialize, Serialize};

use crate::ensemble_geometry::{AtomicSpecies, CloudGeometry, CM3_TO_UM3};
use crate::geometry_scan::{log_grid, Axes, Constraint, DynamicsSettings, ScanSpec, Truncation};
use crate::paraxial_optics::{BeamParameters, DEFAULT_WAVELENGTH_UM};
use crate::sme_oracle::OracleConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeciesBlock {
    pub spin_f: f64,
    pub lande_gf: f64,
    pub wavelength_um: f64,
}

impl Default for SpeciesBlock {
    fn default() -> Self {
        Self { spin_f: 0.5, lande_gf: 2.0, wavelength_um: DEFAULT_WAVELENGTH_UM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamBlock {
    pub waist_um: f64,
}

impl Default for BeamBlock {
    fn default() -> Self {
        Self { waist_um: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudBlock {
    pub sigma_perp_um: f64,
    pub sigma_z_um: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta0_um3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta0_cm3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub od_eff: Option<f64>,
}

impl Default for CloudBlock {
    fn default() -> Self {
        Self { sigma_perp_um: 100.0, sigma_z_um: 100.0, eta0_um3: None, eta0_cm3: None, total_n: None, od_eff: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsBlock {
    pub gamma0: f64,
    /// In units of `1/gamma0`.
    pub horizon: f64,
    pub rtol: f64,
    pub atol: f64,
    pub samples: usize,
    pub decoherence: bool,
    pub p_max: u32,
    pub slice_count: usize,
    pub extent_sigmas: f64,
    pub certify: bool,
    pub certify_tolerance_db: f64,
}

impl Default for DynamicsBlock {
    fn default() -> Self {
        let d = DynamicsSettings::default();
        Self {
            gamma0: d.gamma0,
            horizon: d.horizon,
            rtol: d.rtol,
            atol: d.atol,
            samples: d.samples,
            decoherence: d.decoherence,
            p_max: d.truncation.p_max,
            slice_count: d.truncation.slice_count,
            extent_sigmas: d.truncation.extent_sigmas,
            certify: d.certify,
            certify_tolerance_db: d.certify_tolerance_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModesBlock {
    pub p_max: u32,
    pub l_max: u32,
    /// Planes in units of the Rayleigh range.
    pub planes_zr: Vec<f64>,
    pub profile_points: usize,
}

impl Default for ModesBlock {
    fn default() -> Self {
        Self { p_max: 6, l_max: 3, planes_zr: vec![-2.0, -0.5, 0.0, 1.0, 3.0], profile_points: 101 }
    }
}

/// Log-spaced axis `count` points from `lo` to `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogAxis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aspect_ratios: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ar_log: Option<LogAxis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_z_um: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waists_um: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waist_log: Option<LogAxis>,
    /// Gaussian volume `σ⊥² σz` for aspect-ratio axes; defaults to the cloud's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume_um3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleBlock {
    /// Fundamental-mode weights `β_00` of the atoms.
    pub weights: Vec<f64>,
    pub kappa: f64,
    pub gamma0: f64,
    pub trajectories: usize,
    pub steps: usize,
    pub horizon: f64,
    pub checkpoints: usize,
    /// Radial order of the truncated basis for the unmeasured modes.
    pub p_max: u32,
}

impl Default for OracleBlock {
    fn default() -> Self {
        Self {
            weights: vec![1.0, 0.8, 0.5, 0.3],
            kappa: 1.0,
            gamma0: 1.0,
            trajectories: 2000,
            steps: 400,
            horizon: 1.0,
            checkpoints: 10,
            p_max: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: String,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfiguration {
    pub seed: u64,
    pub species: SpeciesBlock,
    pub beam: BeamBlock,
    pub cloud: CloudBlock,
    pub dynamics: DynamicsBlock,
    pub modes: ModesBlock,
    pub scan: ScanBlock,
    pub oracle: OracleBlock,
    pub output: OutputBlock,
}

/// Split `a.b.c=value` into a key path and a TOML value. The value is read as
/// a TOML literal when it parses as one and as a bare string otherwise.
pub fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::validation(format!("override `{text}` is not of the form key=value")))?;
    let key = key.trim();
    let path: Vec<String> = key.split('.').map(str::to_owned).collect();
    for seg in &path {
        if seg.is_empty() || !seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::validation(format!("override key `{key}` is not a dotted path")));
        }
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) if t.len() == 1 => t.remove("v").unwrap(),
        _ => toml::Value::String(raw.to_owned()),
    };
    Ok((path, value))
}

/// Set `path` in `table` to `value`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| Error::validation("empty override key"))?;
    let mut cur = table;
    for seg in parents {
        let entry = cur.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::validation(format!("override path `{}` crosses a non-table key", path.join(".")))),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Flatten a TOML table into sorted `dotted.key=value` lines.
pub fn flatten(table: &toml::Table) -> Vec<String> {
    fn walk(prefix: &str, t: &toml::Table, out: &mut Vec<String>) {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(inner) => walk(&key, inner, out),
                other => out.push(format!("{key}={other}")),
            }
        }
    }
    let mut out = Vec::new();
    walk("", table, &mut out);
    out
}

/// Which closure fixes the cloud density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityClosure {
    PeakDensityUm3(f64),
    TotalN(f64),
    OdEff(f64),
}

impl RunConfiguration {
    /// Parse TOML text, apply overrides and validate. The density closure is
    /// checked separately by [`RunConfiguration::require_cloud`].
    pub fn load(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)
            .map_err(|e| Error::validation(format!("config is not valid TOML: {}", e.message())))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply_override(&mut table, &path, value)?;
        }
        let cfg: RunConfiguration =
            table.try_into().map_err(|e: toml::de::Error| Error::validation(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("configuration serializes to a table")
    }

    /// Sorted `dotted.key=value` lines of the resolved configuration.
    pub fn header_lines(&self) -> Vec<String> {
        flatten(&self.to_table())
    }

    pub fn density_closure(&self) -> Result<DensityClosure> {
        let c = &self.cloud;
        let set: Vec<&str> = [
            ("eta0_um3", c.eta0_um3.is_some()),
            ("eta0_cm3", c.eta0_cm3.is_some()),
            ("total_n", c.total_n.is_some()),
            ("od_eff", c.od_eff.is_some()),
        ]
        .iter()
        .filter(|(_, s)| *s)
        .map(|(n, _)| *n)
        .collect();
        match set.len() {
            0 => Err(Error::validation(
                "cloud: missing density closure, set exactly one of cloud.eta0_um3, cloud.eta0_cm3, cloud.total_n, cloud.od_eff",
            )),
            1 => Ok(if let Some(v) = c.eta0_um3 {
                DensityClosure::PeakDensityUm3(v)
            } else if let Some(v) = c.eta0_cm3 {
                DensityClosure::PeakDensityUm3(v * CM3_TO_UM3)
            } else if let Some(v) = c.total_n {
                DensityClosure::TotalN(v)
            } else {
                DensityClosure::OdEff(c.od_eff.unwrap())
            }),
            _ => Err(Error::validation(format!(
                "cloud: more than one density closure set ({}); keep exactly one",
                set.iter().map(|n| format!("cloud.{n}")).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let non_neg = |name: &str, v: f64| -> Result<()> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} must be non-negative and finite, got {v}")))
            }
        };
        self.species_params()?;
        pos("beam.waist_um", self.beam.waist_um)?;
        pos("cloud.sigma_perp_um", self.cloud.sigma_perp_um)?;
        pos("cloud.sigma_z_um", self.cloud.sigma_z_um)?;
        for (name, v) in [
            ("cloud.eta0_um3", self.cloud.eta0_um3),
            ("cloud.eta0_cm3", self.cloud.eta0_cm3),
            ("cloud.total_n", self.cloud.total_n),
            ("cloud.od_eff", self.cloud.od_eff),
        ] {
            if let Some(v) = v {
                non_neg(name, v)?;
            }
        }
        let d = &self.dynamics;
        pos("dynamics.gamma0", d.gamma0)?;
        non_neg("dynamics.horizon", d.horizon)?;
        pos("dynamics.rtol", d.rtol)?;
        pos("dynamics.atol", d.atol)?;
        pos("dynamics.certify_tolerance_db", d.certify_tolerance_db)?;
        if d.slice_count < 4 {
            return Err(Error::validation("dynamics.slice_count must be at least 4"));
        }
        if d.extent_sigmas < 3.0 || !d.extent_sigmas.is_finite() {
            return Err(Error::validation("dynamics.extent_sigmas must be at least 3"));
        }
        if self.modes.planes_zr.iter().any(|z| !z.is_finite()) {
            return Err(Error::validation("modes.planes_zr must be finite"));
        }
        let o = &self.oracle;
        pos("oracle.kappa", o.kappa)?;
        non_neg("oracle.gamma0", o.gamma0)?;
        pos("oracle.horizon", o.horizon)?;
        if o.weights.is_empty() {
            return Err(Error::validation("oracle.weights is empty"));
        }
        if o.trajectories == 0 || o.steps == 0 || o.checkpoints == 0 || !o.steps.is_multiple_of(o.checkpoints) {
            return Err(Error::validation(
                "oracle.trajectories, oracle.steps and oracle.checkpoints must be positive with steps a multiple of checkpoints",
            ));
        }
        if self.output.dir.is_empty() {
            return Err(Error::validation("output.dir is empty"));
        }
        Ok(())
    }

    /// Validate the cloud block for commands that build the cloud.
    pub fn require_cloud(&self) -> Result<()> {
        self.density_closure().map(|_| ())
    }

    pub fn species_params(&self) -> Result<AtomicSpecies> {
        let s = &self.species;
        AtomicSpecies::new(s.spin_f, s.lande_gf, s.wavelength_um)
            .map_err(|e| Error::validation(format!("species: {e}")))
    }

    pub fn beam_params(&self) -> Result<BeamParameters> {
        BeamParameters::new(self.species.wavelength_um, self.beam.waist_um)
    }

    /// Constraint implied by the cloud's density closure.
    pub fn constraint(&self) -> Result<Constraint> {
        Ok(match self.density_closure()? {
            DensityClosure::PeakDensityUm3(v) => Constraint::FixedPeakDensity(v),
            DensityClosure::TotalN(v) => Constraint::FixedTotalN(v),
            DensityClosure::OdEff(v) => Constraint::FixedOdEff(v),
        })
    }

    pub fn cloud_geometry(&self) -> Result<CloudGeometry> {
        let beam = self.beam_params()?;
        let species = self.species_params()?;
        self.constraint()?.resolve((self.cloud.sigma_perp_um, self.cloud.sigma_z_um), &beam, &species)
    }

    pub fn dynamics_settings(&self) -> DynamicsSettings {
        let d = &self.dynamics;
        DynamicsSettings {
            gamma0: d.gamma0,
            horizon: d.horizon,
            rtol: d.rtol,
            atol: d.atol,
            samples: d.samples,
            decoherence: d.decoherence,
            truncation: Truncation { p_max: d.p_max, slice_count: d.slice_count, extent_sigmas: d.extent_sigmas },
            certify: d.certify,
            certify_tolerance_db: d.certify_tolerance_db,
        }
    }

    pub fn scan_spec(&self) -> Result<ScanSpec> {
        let s = &self.scan;
        let axis = |list: &Option<Vec<f64>>, log: &Option<LogAxis>, name: &str| -> Result<Option<Vec<f64>>> {
            match (list, log) {
                (Some(_), Some(_)) => {
                    Err(Error::validation(format!("scan: set either {name} or its _log form, not both")))
                }
                (Some(v), None) => Ok(Some(v.clone())),
                (None, Some(l)) => log_grid(l.lo, l.hi, l.count).map(Some),
                (None, None) => Ok(None),
            }
        };
        let waists = axis(&s.waists_um, &s.waist_log, "scan.waists_um")?.unwrap_or_else(|| vec![self.beam.waist_um]);
        let ars = axis(&s.aspect_ratios, &s.ar_log, "scan.aspect_ratios")?;
        let axes = match (ars, &s.sigma_z_um) {
            (Some(_), Some(_)) => {
                return Err(Error::validation("scan: aspect-ratio and sigma_z axes are mutually exclusive"))
            }
            (None, Some(sz)) => Axes::SigmaZWaist { sigma_z: sz.clone(), waists, sigma_perp: self.cloud.sigma_perp_um },
            (ars, None) => {
                let volume =
                    s.volume_um3.unwrap_or(self.cloud.sigma_perp_um * self.cloud.sigma_perp_um * self.cloud.sigma_z_um);
                let aspect_ratios = ars.unwrap_or_else(|| vec![self.cloud.sigma_z_um / self.cloud.sigma_perp_um]);
                Axes::AspectWaist { aspect_ratios, waists, volume }
            }
        };
        Ok(ScanSpec {
            axes,
            constraint: self.constraint()?,
            species: self.species_params()?,
            dynamics: self.dynamics_settings(),
        })
    }

    pub fn oracle_config(&self) -> OracleConfig {
        let o = &self.oracle;
        OracleConfig {
            kappa: o.kappa,
            gamma0: o.gamma0,
            spin_f: self.species.spin_f,
            lande_gf: self.species.lande_gf,
            horizon: o.horizon,
            steps: o.steps,
            checkpoints: o.checkpoints,
        }
    }
}
