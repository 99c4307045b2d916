//! The `run`, `sweep` and `check` commands.
//!
//! Every command writes into an output directory: its result files, the
//! configuration with all defaults filled in (`resolved_config.toml`) and a
//! `manifest.json` listing the input hash, the echoed configuration and the
//! SHA-256 of every file written. Running the resolved configuration again
//! reproduces the CSV files byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fracflow::effective::{merged_domain_problem, run_effective, EffectiveProblem, EffectiveSeries, EffectiveVariant};
use fracflow::fullmodel::{epsilon_problem, run_problem, SimulationConfig, StateField, TimeSeries};
use fracflow::mesh::{Grid, InterfaceTag};
use fracflow::output::{field_csv, field_vtk, interface_csv, interface_reports_csv, num, steps_csv};
use fracflow::timestep::ImplicitProblem;
use fracflow::upscale::{epsilon_sweep, ConvergenceTable};
use fracflow::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, FileConfig};

/// Which model a single run solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Epsilon,
    Effective,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failure: {0}")]
    Solver(Error),
    #[error("{0} of {1} sweep members failed")]
    SweepFailures(usize, usize),
    #[error("{0} invariant checks failed")]
    CheckFailures(usize),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 2 for configuration errors, 3 for failures while
    /// solving, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::SweepFailures(..) | CliError::CheckFailures(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

fn setup<T>(r: Result<T, Error>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(ConfigError::Invalid(e)))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Output directory that records what was written.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
            bytes: contents.len(),
        });
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub requested: f64,
    pub time: f64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub command: String,
    pub input_file: String,
    pub input_sha256: String,
    pub config: FileConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<EffectiveVariant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fracture_nx: Option<usize>,
    pub porosity_ratio: f64,
    pub conductivity_ratio: f64,
    pub steps: usize,
    pub snapshots: Vec<Snapshot>,
    pub outputs: Vec<OutputFile>,
    pub elapsed_seconds: f64,
}

/// Input file bytes plus the parsed configuration.
pub struct Input {
    pub path: PathBuf,
    pub sha256: String,
    pub config: FileConfig,
}

pub fn load(path: &Path) -> Result<Input, CliError> {
    let bytes = fs::read(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    Ok(Input {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        config: crate::config::parse_str(&text)?,
    })
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub model: Model,
    pub epsilon: Option<f64>,
    pub output_dir: PathBuf,
    pub snapshot_times: Option<Vec<f64>>,
}

fn time_label(t: f64) -> String {
    format!("{t:.6}")
}

fn write_snapshots(
    out: &mut OutputDir,
    grid: &Grid,
    times: &[f64],
    vtk: bool,
    mut state_at: impl FnMut(f64) -> (StateField, Vec<f64>),
) -> std::io::Result<Vec<Snapshot>> {
    let mut snapshots = Vec::new();
    for &t in times {
        let (state, saturation) = state_at(t);
        let label = time_label(t);
        let mut files = vec![format!("field_t{label}.csv")];
        out.write(&files[0], &field_csv(grid, &state.psi, &saturation))?;
        if vtk {
            files.push(format!("field_t{label}.vtk"));
            out.write(&files[1], &field_vtk(grid, &format!("fracflow head at t = {}", num(state.time)), &state.psi, &saturation))?;
        }
        snapshots.push(Snapshot {
            requested: t,
            time: state.time,
            files,
        });
    }
    Ok(snapshots)
}

fn write_failure(out: &mut OutputDir, err: &Error) -> std::io::Result<()> {
    out.write("failure.txt", &format!("{err}\n\n{err:?}\n"))
}

/// Solves one model and writes its snapshots, step log and manifest.
pub fn cmd_run(input: &Input, opts: &RunOptions) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let mut cfg = input.config.clone();
    if let Some(times) = &opts.snapshot_times {
        cfg.output.snapshot_times = times.clone();
    }
    let (epsilon, fracture_nx) = match opts.model {
        Model::Epsilon => {
            let e = opts.epsilon.or(cfg.scaling.epsilon).ok_or_else(|| {
                ConfigError::Invalid(Error::Config(vec![
                    "no fracture width: pass --epsilon, set scaling.epsilon or list sweep widths".into(),
                ]))
            })?;
            if !(e > 0.0) {
                return Err(ConfigError::Invalid(Error::Config(vec![format!(
                    "the epsilon-model needs a positive width, got {e} (use --model effective for the limit)"
                )]))
                .into());
            }
            cfg.scaling.epsilon = Some(e);
            (Some(e), Some(setup(cfg.fracture_nx_for(e))?))
        }
        Model::Effective => (None, None),
    };
    setup(cfg.validate())?;
    let sim = setup(cfg.simulation(epsilon.unwrap_or(0.0), fracture_nx.unwrap_or(1)))?;
    let steps = setup(sim.n_steps())?;
    let variant = match opts.model {
        Model::Effective => Some(setup(cfg.variant())?),
        Model::Epsilon => None,
    };

    let mut out = OutputDir::create(&opts.output_dir)?;
    out.write("resolved_config.toml", &cfg.echo())?;
    let snapshots = match opts.model {
        Model::Epsilon => {
            let problem = setup(epsilon_problem(&sim))?;
            out.write("mesh.txt", &problem.grid.report())?;
            let initial = problem.initial_state(&sim.initial);
            let series = match run_problem(&problem, initial, sim.end_time, &sim.picard) {
                Ok(s) => s,
                Err(e) => {
                    write_failure(&mut out, &e)?;
                    return Err(CliError::Solver(e));
                }
            };
            out.write("metadata.csv", &steps_csv(&series.steps))?;
            write_snapshots(&mut out, &problem.grid, &cfg.output.snapshot_times, cfg.output.vtk, |t| {
                let s = series.at_time(t).clone();
                let sat = s.saturation(&problem);
                (s, sat)
            })?
        }
        Model::Effective => {
            let variant = variant.expect("set above");
            let problem = setup(EffectiveProblem::new(&sim, variant))?;
            out.write("mesh.txt", &problem.cells.grid.report())?;
            let series = match run_effective(&sim, variant) {
                Ok(s) => s,
                Err(e) => {
                    write_failure(&mut out, &e)?;
                    return Err(CliError::Solver(e));
                }
            };
            out.write("metadata.csv", &steps_csv(&series.matrix.steps))?;
            out.write("interface_reports.csv", &interface_reports_csv(&series.reports))?;
            let grid = &problem.cells.grid;
            let rows_y: Vec<f64> = grid
                .interface_faces(InterfaceTag::Gamma)
                .iter()
                .map(|&f| grid.faces[f].center[1])
                .collect();
            let mut snaps = write_snapshots(&mut out, grid, &cfg.output.snapshot_times, cfg.output.vtk, |t| {
                let s = series.matrix.at_time(t).clone();
                let sat = s.saturation(&problem.cells);
                (s, sat)
            })?;
            if variant != EffectiveVariant::V {
                for snap in &mut snaps {
                    let name = format!("interface_t{}.csv", time_label(snap.requested));
                    out.write(&name, &interface_csv(&rows_y, series.interface_at_time(snap.requested)))?;
                    snap.files.push(name);
                }
            }
            snaps
        }
    };

    let manifest = RunManifest {
        artifact: "fracflow",
        version: env!("CARGO_PKG_VERSION"),
        command: "run".into(),
        input_file: input.path.display().to_string(),
        input_sha256: input.sha256.clone(),
        config: cfg,
        model: Some(opts.model),
        variant,
        epsilon,
        fracture_nx,
        porosity_ratio: sim.porosity_ratio,
        conductivity_ratio: sim.conductivity_ratio,
        steps,
        snapshots,
        outputs: out.files.clone(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    finish(&out, &manifest)?;
    Ok(manifest)
}

fn finish(out: &OutputDir, manifest: &RunManifest) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    fs::write(out.dir.join("manifest.json"), json + "\n")
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Concurrent member runs (`None`: one per core).
    pub jobs: Option<usize>,
    pub output_dir: PathBuf,
}

/// Runs the width sweep of the configuration against its effective model.
pub fn cmd_sweep(input: &Input, opts: &SweepOptions) -> Result<(RunManifest, ConvergenceTable), CliError> {
    let started = Instant::now();
    let cfg = input.config.clone();
    let members = cfg.sweep_members();
    let first = *members.first().ok_or_else(|| {
        ConfigError::Invalid(Error::Config(vec!["sweep.epsilons is empty: nothing to sweep".into()]))
    })?;
    let variant = setup(cfg.variant())?;
    let base = setup(cfg.simulation(first.epsilon, first.fracture_nx))?;
    let steps = setup(base.n_steps())?;
    let mut out = OutputDir::create(&opts.output_dir)?;
    out.write("resolved_config.toml", &cfg.echo())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let table = match pool.install(|| epsilon_sweep(&base, &members, variant)) {
        Ok(t) => t,
        Err(e) => {
            write_failure(&mut out, &e)?;
            return Err(CliError::Solver(e));
        }
    };
    out.write("convergence.csv", &table.to_csv())?;
    for (name, data) in table.plot_data() {
        out.write(&format!("plot_{name}.dat"), &data)?;
    }
    let manifest = RunManifest {
        artifact: "fracflow",
        version: env!("CARGO_PKG_VERSION"),
        command: "sweep".into(),
        input_file: input.path.display().to_string(),
        input_sha256: input.sha256.clone(),
        config: cfg,
        model: None,
        variant: Some(variant),
        epsilon: None,
        fracture_nx: None,
        porosity_ratio: base.porosity_ratio,
        conductivity_ratio: base.conductivity_ratio,
        steps,
        snapshots: Vec::new(),
        outputs: out.files.clone(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    finish(&out, &manifest)?;
    if table.failures() > 0 {
        return Err(CliError::SweepFailures(table.failures(), table.rows.len()));
    }
    Ok((manifest, table))
}

/// Outcome of one invariant check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }

    fn error(name: &str, e: &Error) -> Self {
        Self::new(name, false, e.to_string())
    }
}

/// Largest `|K^-1(K(psi)) - psi|` on a uniform scan of `[lo, hi]`.
pub fn kirchhoff_round_trip(model: &fracflow::constitutive::ConstitutiveModel, lo: f64, hi: f64, n: usize) -> Result<f64, Error> {
    let mut worst = 0.0f64;
    for i in 0..=n {
        let psi = lo + (hi - lo) * i as f64 / n as f64;
        let back = model.kirchhoff_inv(model.kirchhoff(psi)?)?;
        worst = worst.max((back - psi).abs());
    }
    Ok(worst)
}

fn first_step(sim: &SimulationConfig) -> SimulationConfig {
    SimulationConfig {
        end_time: sim.dt,
        ..sim.clone()
    }
}

fn effective_checks(cfg: &FileConfig, results: &mut Vec<CheckResult>) -> Result<(), Error> {
    let variant = cfg.variant()?;
    let sim = first_step(&cfg.simulation(0.0, 1)?);
    let tol = 10.0 * sim.picard.tol;
    let series: EffectiveSeries = run_effective(&sim, variant)?;
    let balance = series.matrix.worst_balance();
    results.push(CheckResult::new(
        "effective first-step mass balance",
        balance <= 1e-8,
        format!("model {variant}: relative imbalance {balance:.3e} (bound 1e-8)"),
    ));
    let report = series.reports[0];
    match variant {
        EffectiveVariant::IV => results.push(CheckResult::new(
            "net interface exchange vanishes",
            report.flux_integral.abs() <= tol,
            format!("|int [q_m]| = {:.3e} (bound {tol:.1e})", report.flux_integral.abs()),
        )),
        EffectiveVariant::V => {
            let problem = EffectiveProblem::new(&sim, variant)?;
            let merged = merged_domain_problem(&sim)?;
            let x0 = problem.initial_state(&sim);
            let equal = problem.assemble(&x0, &x0, sim.dt)? == merged.assemble(&x0, &x0, sim.dt)?;
            results.push(CheckResult::new(
                "continuity model equals merged-domain assembly",
                equal,
                "exact comparison of matrix entries and right-hand side".into(),
            ));
        }
        _ => results.push(CheckResult::new(
            "fracture water budget",
            report.budget_residual.abs() <= tol,
            format!("storage change - dt * net inflow = {:.3e} (bound {tol:.1e})", report.budget_residual),
        )),
    }
    Ok(())
}

fn epsilon_checks(cfg: &FileConfig, results: &mut Vec<CheckResult>) -> Result<(), Error> {
    let mut widths: Vec<(f64, usize)> = cfg.sweep_members().iter().map(|m| (m.epsilon, m.fracture_nx)).collect();
    if let Some(e) = cfg.scaling.epsilon {
        if !widths.iter().any(|w| w.0 == e) {
            widths.push((e, cfg.fracture_nx_for(e)?));
        }
    }
    for &(e, nx) in &widths {
        let grid = cfg.simulation(e, nx)?.grid()?;
        let ok = [InterfaceTag::Gamma1, InterfaceTag::Gamma2]
            .iter()
            .all(|&t| grid.interface_faces(t).len() == grid.ny());
        results.push(CheckResult::new(
            "matching interface grid",
            ok,
            format!("epsilon = {e}: {} cells, {} faces", grid.n_cells(), grid.faces.len()),
        ));
    }
    if let Some(&(e, nx)) = widths.iter().min_by(|a, b| a.0.total_cmp(&b.0)) {
        let sim = first_step(&cfg.simulation(e, nx)?);
        let problem = epsilon_problem(&sim)?;
        let series: TimeSeries = run_problem(&problem, problem.initial_state(&sim.initial), sim.end_time, &sim.picard)?;
        let balance = series.worst_balance();
        results.push(CheckResult::new(
            "epsilon-model first-step mass balance",
            balance <= 1e-8,
            format!("epsilon = {e}: relative imbalance {balance:.3e} (bound 1e-8)"),
        ));
    }
    Ok(())
}

/// Runs the invariant suite on a configuration.
pub fn cmd_check(input: &Input) -> Result<Vec<CheckResult>, CliError> {
    let cfg = &input.config;
    let mut results = Vec::new();
    let variant = setup(cfg.variant())?;
    results.push(CheckResult::new(
        "scaling regime",
        true,
        format!("kappa = {}, lambda = {} selects model {variant}", cfg.scaling.kappa, cfg.scaling.lambda),
    ));
    let sim = setup(cfg.simulation(0.0, 1))?;
    let table = cfg.materials.table;
    let (lo, hi) = ((-40.0f64).max(table.psi_min), 5.0f64.min(table.psi_max));
    for (name, model) in [("matrix", &sim.matrix), ("fracture", &sim.fracture)] {
        let check = format!("Kirchhoff round trip ({name})");
        match kirchhoff_round_trip(model, lo, hi, 4500) {
            Ok(w) => results.push(CheckResult::new(
                &check,
                w <= 1e-8,
                format!("max |K^-1(K(psi)) - psi| = {w:.3e} on [{lo}, {hi}] (bound 1e-8)"),
            )),
            Err(e) => results.push(CheckResult::error(&check, &e)),
        }
    }
    if let Err(e) = effective_checks(cfg, &mut results) {
        results.push(CheckResult::error("effective first step", &e));
    }
    if let Err(e) = epsilon_checks(cfg, &mut results) {
        results.push(CheckResult::error("epsilon-model first step", &e));
    }
    Ok(results)
}
