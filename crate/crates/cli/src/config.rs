//! Run configuration files.
//!
//! A configuration is a TOML document with the sections `geometry`,
//! `scaling`, `materials`, `time`, `solver`, `initial`, `source`, `bcs`,
//! `sweep` and `output`. Unknown keys are rejected. Missing required keys are
//! all reported at once rather than one per attempt.

use std::path::Path;

use fracflow::constitutive::{ConstitutiveModel, RetentionLaw, TableSpec, VanGenuchtenParams};
use fracflow::effective::{select_variant, EffectiveVariant};
use fracflow::fullmodel::{BoundarySegment, PerSubdomain, ScalarField, SimulationConfig};
use fracflow::linalg::LinearSolverKind;
use fracflow::mesh::{Resolution, ScalingRegime};
use fracflow::timestep::PicardSettings;
use fracflow::upscale::SweepMember;
use fracflow::Error;
use serde::{Deserialize, Serialize};

/// Keys that have no default, by section path.
const REQUIRED: &[&str] = &[
    "geometry.matrix_nx",
    "geometry.ny",
    "scaling.kappa",
    "scaling.lambda",
    "materials.matrix.alpha",
    "materials.matrix.n",
    "materials.matrix.theta_s",
    "materials.matrix.theta_r",
    "materials.matrix.k_s",
    "materials.fracture.alpha",
    "materials.fracture.n",
    "materials.fracture.theta_s",
    "materials.fracture.theta_r",
    "materials.fracture.k_s",
    "time.end_time",
    "time.dt",
    "initial.value",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    /// Width of each matrix block.
    #[serde(default = "unit")]
    pub matrix_width: f64,
    pub matrix_nx: usize,
    pub ny: usize,
    /// Fracture columns for widths not listed in the sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fracture_nx: Option<usize>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    pub kappa: f64,
    pub lambda: f64,
    /// Fracture width of single `epsilon`-model runs (defaults to the first
    /// sweep width).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialsSection {
    pub matrix: VanGenuchtenParams,
    pub fracture: VanGenuchtenParams,
    /// Range and resolution of the Kirchhoff tables.
    #[serde(default)]
    pub table: TableSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub end_time: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_max_iters")]
    pub picard_max_iters: usize,
    #[serde(default = "default_mass_tol")]
    pub mass_tol: f64,
    #[serde(default)]
    pub linear: LinearSolverKind,
}

fn default_tol() -> f64 {
    PicardSettings::default().tol
}

fn default_max_iters() -> usize {
    PicardSettings::default().max_iters
}

fn default_mass_tol() -> f64 {
    PicardSettings::default().mass_tol
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            picard_tol: default_tol(),
            picard_max_iters: default_max_iters(),
            mass_tol: default_mass_tol(),
            linear: LinearSolverKind::default(),
        }
    }
}

/// A constant per subdomain: `value` everywhere unless overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseConstant {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fracture: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m2: Option<f64>,
}

impl PiecewiseConstant {
    fn zero() -> Self {
        Self {
            value: 0.0,
            m1: None,
            fracture: None,
            m2: None,
        }
    }

    fn fields(&self) -> PerSubdomain<ScalarField> {
        let v = |o: Option<f64>| ScalarField::Constant(o.unwrap_or(self.value));
        PerSubdomain {
            m1: v(self.m1),
            f: v(self.fracture),
            m2: v(self.m2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Fracture columns per width, in the order of `epsilons`.
    #[serde(default)]
    pub fracture_nx: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Times of the field snapshots (default: 0.18 when inside the horizon,
    /// and the end time).
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Also write rectilinear-grid snapshots for visualisation tools.
    #[serde(default = "yes")]
    pub vtk: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            snapshot_times: Vec::new(),
            vtk: true,
        }
    }
}

/// The file as written, with every default filled in after [`parse_str`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub geometry: GeometrySection,
    pub scaling: ScalingSection,
    pub materials: MaterialsSection,
    pub time: TimeSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub initial: PiecewiseConstant,
    #[serde(default = "PiecewiseConstant::zero")]
    pub source: PiecewiseConstant,
    #[serde(default)]
    pub bcs: Vec<BoundarySegment>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Time at which reference snapshots are taken when none are configured.
pub const DEFAULT_SNAPSHOT_TIME: f64 = 0.18;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("configuration syntax error: {0}")]
    Syntax(String),
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error(transparent)]
    Invalid(#[from] Error),
}

fn lookup<'a>(root: &'a toml::Value, path: &str) -> Option<&'a toml::Value> {
    path.split('.').try_fold(root, |v, key| v.get(key))
}

/// Parses and validates a configuration, filling in defaults.
pub fn parse_str(text: &str) -> Result<FileConfig, ConfigError> {
    let value: toml::Value = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let missing: Vec<String> = REQUIRED
        .iter()
        .filter(|k| lookup(&value, k).is_none())
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }
    let mut cfg: FileConfig = value.try_into().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_str(&text)
}

impl FileConfig {
    /// Materialises defaults that depend on other values.
    fn resolve(&mut self) {
        if self.output.snapshot_times.is_empty() {
            let t = self.time.end_time;
            if DEFAULT_SNAPSHOT_TIME < t {
                self.output.snapshot_times.push(DEFAULT_SNAPSHOT_TIME);
            }
            self.output.snapshot_times.push(t);
        }
        if self.scaling.epsilon.is_none() {
            self.scaling.epsilon = self.sweep.epsilons.first().copied();
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let mut problems = Vec::new();
        for (name, m) in [("matrix", &self.materials.matrix), ("fracture", &self.materials.fracture)] {
            if let Err(e) = m.validate() {
                problems.push(format!("materials.{name}: {e}"));
            }
        }
        if self.geometry.matrix_nx == 0 || self.geometry.ny == 0 {
            problems.push("geometry.matrix_nx and geometry.ny must be at least 1".into());
        }
        if self.sweep.epsilons.len() != self.sweep.fracture_nx.len() {
            problems.push(format!(
                "sweep.epsilons has {} entries but sweep.fracture_nx has {}",
                self.sweep.epsilons.len(),
                self.sweep.fracture_nx.len()
            ));
        }
        if let Err(e) = fracflow::upscale::order_members(&self.sweep_members()) {
            problems.push(format!("sweep: {e}"));
        }
        let t = self.time.end_time;
        for &s in &self.output.snapshot_times {
            if !(0.0..=t).contains(&s) {
                problems.push(format!("output.snapshot_times: {s} outside [0, {t}]"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        // unsupported scaling regimes are reported before anything runs
        select_variant(&self.regime(0.0))?;
        self.simulation(self.scaling.epsilon.unwrap_or(1.0), 1)?.validate()
    }

    pub fn regime(&self, epsilon: f64) -> ScalingRegime {
        ScalingRegime::new(epsilon, self.scaling.kappa, self.scaling.lambda)
    }

    pub fn variant(&self) -> Result<EffectiveVariant, Error> {
        select_variant(&self.regime(0.0))
    }

    pub fn sweep_members(&self) -> Vec<SweepMember> {
        self.sweep
            .epsilons
            .iter()
            .zip(&self.sweep.fracture_nx)
            .map(|(&epsilon, &fracture_nx)| SweepMember { epsilon, fracture_nx })
            .collect()
    }

    /// Fracture columns for width `epsilon`: the sweep entry for that width,
    /// else `geometry.fracture_nx`.
    pub fn fracture_nx_for(&self, epsilon: f64) -> Result<usize, Error> {
        self.sweep_members()
            .iter()
            .find(|m| m.epsilon == epsilon)
            .map(|m| m.fracture_nx)
            .or(self.geometry.fracture_nx)
            .ok_or_else(|| {
                Error::Config(vec![format!(
                    "no fracture resolution for epsilon = {epsilon}: add it to the sweep or set geometry.fracture_nx"
                )])
            })
    }

    /// Dimensionless problem for fracture width `epsilon` (0 for the reduced
    /// geometry).
    pub fn simulation(&self, epsilon: f64, fracture_nx: usize) -> Result<SimulationConfig, Error> {
        let table = self.materials.table;
        let (m, f) = (self.materials.matrix, self.materials.fracture);
        let cfg = SimulationConfig {
            regime: self.regime(epsilon),
            matrix_width: self.geometry.matrix_width,
            resolution: Resolution {
                matrix_nx: self.geometry.matrix_nx,
                fracture_nx,
                ny: self.geometry.ny,
            },
            matrix: ConstitutiveModel::new(RetentionLaw::VanGenuchten(m), table)?,
            fracture: ConstitutiveModel::new(RetentionLaw::VanGenuchten(f), table)?,
            porosity_ratio: f.theta_s / m.theta_s,
            conductivity_ratio: f.k_s / m.k_s,
            end_time: self.time.end_time,
            dt: self.time.dt,
            picard: PicardSettings {
                tol: self.solver.picard_tol,
                max_iters: self.solver.picard_max_iters,
                mass_tol: self.solver.mass_tol,
                linear_solver: self.solver.linear,
            },
            boundary: self.bcs.clone(),
            initial: self.initial.fields(),
            source: self.source.fields(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration with all defaults materialised, as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }
}
