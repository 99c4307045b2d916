//! The `epsilon`-width model: matrix blocks and a two-dimensional fracture.
//!
//! Space is discretised by TPFA on the matching grid, time by implicit Euler,
//! and the nonlinearity by modified Picard. Fracture cells carry the scaled
//! storage `c_phi eps^kappa` and conductivity `c_K eps^lambda`; the interface
//! faces combine both sides by the distance-weighted harmonic mean, which makes
//! head and normal flux continuous across `Gamma1`, `Gamma2` by construction.
//!
//! [`FlowProblem`] holds the per-cell part of the discretisation and is reused
//! by the effective models, which add their own fracture unknowns.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveModel;
use crate::error::{Error, Result};
use crate::linalg::{CscSystem, LinearSystem};
use crate::mesh::{
    build_geometry, build_grid, face_transmissibility, DomainLayout, FaceKind, Grid, Resolution, ScalingRegime, Side,
    Subdomain,
};
use crate::timestep::{run_steps, step_count, ImplicitProblem, MassBalance, PicardSettings, StepStats};

/// Space-time field `(x, y, t) -> value`, either constant or user supplied.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    Function(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
}

impl ScalarField {
    pub fn function<F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        ScalarField::Function(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Function(f) => f(x, y, t),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            ScalarField::Constant(c) => Some(*c),
            ScalarField::Function(_) => None,
        }
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Constant(c) => write!(f, "Constant({c})"),
            ScalarField::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl From<f64> for ScalarField {
    fn from(c: f64) -> Self {
        ScalarField::Constant(c)
    }
}

/// One value per subdomain role.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSubdomain<T> {
    pub m1: T,
    pub f: T,
    pub m2: T,
}

impl<T: Clone> PerSubdomain<T> {
    pub fn uniform(v: T) -> Self {
        Self {
            m1: v.clone(),
            f: v.clone(),
            m2: v,
        }
    }
}

impl<T> PerSubdomain<T> {
    pub fn get(&self, role: Subdomain) -> &T {
        match role {
            Subdomain::M1 => &self.m1,
            Subdomain::Fracture => &self.f,
            Subdomain::M2 => &self.m2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryKind {
    Dirichlet { head: f64 },
    /// Prescribed inflow through the edge (positive into the domain).
    Neumann { inflow: f64 },
    NoFlow,
}

/// Condition on part of one edge of a subdomain. `from`/`to` are fractions of
/// the edge length measured from its lower-left end; a face belongs to the
/// segment when its centre does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySegment {
    pub subdomain: Subdomain,
    pub side: Side,
    #[serde(default)]
    pub from: f64,
    #[serde(default = "one")]
    pub to: f64,
    pub condition: BoundaryKind,
}

fn one() -> f64 {
    1.0
}

impl BoundarySegment {
    pub fn whole(subdomain: Subdomain, side: Side, condition: BoundaryKind) -> Self {
        Self {
            subdomain,
            side,
            from: 0.0,
            to: 1.0,
            condition,
        }
    }

    pub fn contains(&self, subdomain: Subdomain, side: Side, position: f64) -> bool {
        self.subdomain == subdomain && self.side == side && position >= self.from && position <= self.to
    }
}

/// Reference scales of the dimensional problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScales {
    /// `L` in metres.
    pub length: f64,
    /// Matrix reference porosity `phi_m`.
    pub porosity: f64,
    /// Matrix reference conductivity `K_m` in m/s.
    pub conductivity: f64,
}

impl ReferenceScales {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.porosity > 0.0 && self.conductivity > 0.0) {
            return Err(Error::InvalidParameter(format!("reference scales must be positive, got {self:?}")));
        }
        Ok(())
    }

    /// `T = phi_m L / K_m` in seconds.
    pub fn time_scale(&self) -> f64 {
        self.porosity * self.length / self.conductivity
    }

    pub fn head(&self, psi_hat: f64) -> f64 {
        psi_hat / self.length
    }

    pub fn time(&self, t_hat: f64) -> f64 {
        t_hat / self.time_scale()
    }

    /// Volumetric source `f T / phi_m`.
    pub fn source(&self, f_hat: f64) -> f64 {
        f_hat * self.time_scale() / self.porosity
    }

    /// Darcy flux `v / K_m`.
    pub fn flux(&self, v_hat: f64) -> f64 {
        v_hat / self.conductivity
    }
}

/// Dimensional description of a run with constant data.
#[derive(Debug, Clone)]
pub struct DimensionalSetup {
    pub scales: ReferenceScales,
    pub regime: ScalingRegime,
    pub matrix_width: f64,
    pub resolution: Resolution,
    pub matrix: ConstitutiveModel,
    pub fracture: ConstitutiveModel,
    /// `theta_S,f / theta_S,m`
    pub porosity_ratio: f64,
    /// `K_S,f / K_S,m`
    pub conductivity_ratio: f64,
    /// Seconds.
    pub end_time: f64,
    /// Seconds.
    pub dt: f64,
    /// Metres.
    pub initial_head: f64,
    /// Volumetric source per second.
    pub source: f64,
    /// Heads in metres, fluxes in m/s.
    pub boundary: Vec<BoundarySegment>,
    pub picard: PicardSettings,
}

/// Applies the reference-scale maps to a dimensional setup.
pub fn nondimensionalize(d: &DimensionalSetup) -> Result<SimulationConfig> {
    d.scales.validate()?;
    let s = &d.scales;
    let boundary = d
        .boundary
        .iter()
        .map(|b| BoundarySegment {
            condition: match b.condition {
                BoundaryKind::Dirichlet { head } => BoundaryKind::Dirichlet { head: s.head(head) },
                BoundaryKind::Neumann { inflow } => BoundaryKind::Neumann { inflow: s.flux(inflow) },
                BoundaryKind::NoFlow => BoundaryKind::NoFlow,
            },
            ..*b
        })
        .collect();
    let cfg = SimulationConfig {
        regime: d.regime,
        matrix_width: d.matrix_width / s.length,
        resolution: d.resolution,
        matrix: d.matrix.clone(),
        fracture: d.fracture.clone(),
        porosity_ratio: d.porosity_ratio,
        conductivity_ratio: d.conductivity_ratio,
        end_time: s.time(d.end_time),
        dt: s.time(d.dt),
        picard: d.picard,
        boundary,
        initial: PerSubdomain::uniform(ScalarField::Constant(s.head(d.initial_head))),
        source: PerSubdomain::uniform(ScalarField::Constant(s.source(d.source))),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a single dimensionless run needs.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub regime: ScalingRegime,
    pub matrix_width: f64,
    pub resolution: Resolution,
    pub matrix: ConstitutiveModel,
    pub fracture: ConstitutiveModel,
    /// Proportionality constant of the porosity ratio.
    pub porosity_ratio: f64,
    /// Proportionality constant of the conductivity ratio.
    pub conductivity_ratio: f64,
    pub end_time: f64,
    pub dt: f64,
    pub picard: PicardSettings,
    /// Segments not listed are no-flow. The first matching segment wins.
    pub boundary: Vec<BoundarySegment>,
    pub initial: PerSubdomain<ScalarField>,
    pub source: PerSubdomain<ScalarField>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.dt > 0.0) {
            problems.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.end_time > 0.0) {
            problems.push(format!("end_time must be positive, got {}", self.end_time));
        }
        if !(self.picard.tol > 0.0) {
            problems.push(format!("picard tolerance must be positive, got {}", self.picard.tol));
        }
        if self.picard.max_iters == 0 {
            problems.push("picard max_iters must be at least 1".into());
        }
        if !(self.porosity_ratio > 0.0) || !(self.conductivity_ratio > 0.0) {
            problems.push(format!(
                "porosity and conductivity ratios must be positive, got {} and {}",
                self.porosity_ratio, self.conductivity_ratio
            ));
        }
        if !(self.regime.epsilon >= 0.0) {
            problems.push(format!("epsilon must be non-negative, got {}", self.regime.epsilon));
        }
        if !(self.matrix_width > 0.0) {
            problems.push(format!("matrix width must be positive, got {}", self.matrix_width));
        }
        for b in &self.boundary {
            if !(0.0 <= b.from && b.from <= b.to && b.to <= 1.0) {
                problems.push(format!("boundary segment range [{}, {}] outside [0, 1]", b.from, b.to));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Fracture storage multiplier `c_phi eps^kappa`.
    pub fn storage_scale(&self) -> f64 {
        self.porosity_ratio * self.regime.storage_scale()
    }

    /// Fracture conductivity multiplier `c_K eps^lambda`.
    pub fn conductivity_scale(&self) -> f64 {
        self.conductivity_ratio * self.regime.conductivity_scale()
    }

    pub fn with_epsilon(&self, epsilon: f64, fracture_nx: usize) -> Self {
        Self {
            regime: self.regime.with_epsilon(epsilon),
            resolution: Resolution {
                fracture_nx,
                ..self.resolution
            },
            ..self.clone()
        }
    }

    pub fn n_steps(&self) -> Result<usize> {
        step_count(self.end_time, self.dt)
    }

    pub fn layout(&self) -> Result<DomainLayout> {
        build_geometry(&self.regime, self.matrix_width)
    }

    pub fn grid(&self) -> Result<Grid> {
        let layout = self.layout()?;
        build_grid(&layout, &self.resolution.for_layout(&layout))
    }

    /// Boundary condition of an external face, by subdomain, side and
    /// fractional position along the edge.
    pub fn boundary_condition(&self, subdomain: Subdomain, side: Side, position: f64) -> BoundaryKind {
        self.boundary
            .iter()
            .find(|b| b.contains(subdomain, side, position))
            .map(|b| b.condition)
            .unwrap_or(BoundaryKind::NoFlow)
    }
}

/// Fracture widths of the reference convergence study and the fracture
/// column counts used with them.
pub const REFERENCE_SWEEP: [(f64, usize); 5] = [(1.0, 160), (0.1, 80), (0.01, 40), (1e-3, 20), (1e-4, 10)];

impl SimulationConfig {
    /// The reference infiltration setup: silt-loam matrix, Touchet silt-loam
    /// fracture, `kappa = lambda = -1`, unit inflow 0.5 through the bottom of
    /// the left block, head -3 on the top of the right block, no flow
    /// elsewhere, initial head -3, 30 steps of 0.015.
    pub fn reference(epsilon: f64, fracture_nx: usize) -> Result<Self> {
        use crate::constitutive::VanGenuchtenParams;
        let cfg = Self {
            regime: ScalingRegime::new(epsilon, -1.0, -1.0),
            matrix_width: 1.0,
            resolution: Resolution {
                matrix_nx: 160,
                fracture_nx,
                ny: 160,
            },
            matrix: ConstitutiveModel::van_genuchten(VanGenuchtenParams::silt_loam())?,
            fracture: ConstitutiveModel::van_genuchten(VanGenuchtenParams::touchet_silt_loam())?,
            porosity_ratio: 0.469 / 0.396,
            conductivity_ratio: 3.507e-5 / 5.74e-7,
            end_time: 0.45,
            dt: 0.015,
            picard: PicardSettings::default(),
            boundary: vec![
                BoundarySegment::whole(Subdomain::M1, Side::South, BoundaryKind::Neumann { inflow: 0.5 }),
                BoundarySegment::whole(Subdomain::M2, Side::North, BoundaryKind::Dirichlet { head: -3.0 }),
            ],
            initial: PerSubdomain::uniform(ScalarField::Constant(-3.0)),
            source: PerSubdomain::uniform(ScalarField::Constant(0.0)),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// How a face enters the cell rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceRole {
    /// Two-point flux between owner and neighbour.
    Internal,
    /// Coupled to an unknown outside the grid; assembled by the caller.
    External,
    Dirichlet(f64),
    Neumann(f64),
    NoFlow,
}

/// Head per cell at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub time: f64,
    pub psi: Vec<f64>,
}

impl StateField {
    pub fn saturation(&self, problem: &FlowProblem) -> Vec<f64> {
        self.psi.iter().enumerate().map(|(i, &p)| problem.model(i).saturation(p)).collect()
    }

    /// Scaled conductivity `sigma K(S(psi))` per cell.
    pub fn conductivity(&self, problem: &FlowProblem) -> Vec<f64> {
        problem.conductivities(&self.psi)
    }
}

/// One accepted step with its water budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    #[serde(flatten)]
    pub stats: StepStats,
    pub balance: MassBalance,
}

/// States at every time level (initial included) plus per-step records.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub states: Vec<StateField>,
    pub steps: Vec<StepRecord>,
}

impl TimeSeries {
    pub fn last(&self) -> &StateField {
        self.states.last().expect("time series holds the initial state")
    }

    /// State closest to `t`.
    pub fn at_time(&self, t: f64) -> &StateField {
        self.states
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .expect("time series holds the initial state")
    }

    pub fn total_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.stats.iterations).sum()
    }

    pub fn worst_balance(&self) -> f64 {
        self.steps.iter().map(|s| s.balance.relative()).fold(0.0, f64::max)
    }
}

/// Cell part of the discretisation shared by all models.
#[derive(Debug, Clone)]
pub struct FlowProblem {
    pub grid: Grid,
    /// `[matrix, fracture]`
    pub models: [ConstitutiveModel; 2],
    cell_model: Vec<u8>,
    /// Storage multiplier per cell (1 in the matrix).
    pub storage_scale: Vec<f64>,
    /// Conductivity multiplier per cell (1 in the matrix).
    pub conductivity_scale: Vec<f64>,
    pub face_role: Vec<FaceRole>,
    pub source: PerSubdomain<ScalarField>,
    pub dt: f64,
}

impl FlowProblem {
    /// Cell discretisation for `config` on `grid`; interface faces get
    /// `interface_role` (`Internal` for a monolithic coupling).
    pub fn new(config: &SimulationConfig, grid: Grid, interface_role: FaceRole) -> Result<Self> {
        config.validate()?;
        let n = grid.n_cells();
        let mut cell_model = vec![0u8; n];
        let mut storage_scale = vec![1.0; n];
        let mut conductivity_scale = vec![1.0; n];
        for (i, c) in grid.cells.iter().enumerate() {
            if c.subdomain == Subdomain::Fracture {
                cell_model[i] = 1;
                storage_scale[i] = config.storage_scale();
                conductivity_scale[i] = config.conductivity_scale();
            }
        }
        let face_role = grid
            .faces
            .iter()
            .map(|f| match f.kind {
                FaceKind::Interior => FaceRole::Internal,
                FaceKind::Interface(_) => interface_role,
                FaceKind::Boundary(side) => {
                    let cell = &grid.cells[f.owner];
                    let block = &grid.layout.blocks[cell.block];
                    let position = match side {
                        Side::South | Side::North => (f.center[0] - block.x0) / block.width(),
                        Side::West | Side::East => (f.center[1] - grid.layout.y0) / (grid.layout.y1 - grid.layout.y0),
                    };
                    match config.boundary_condition(cell.subdomain, side, position) {
                        BoundaryKind::Dirichlet { head } => FaceRole::Dirichlet(head),
                        BoundaryKind::Neumann { inflow } => FaceRole::Neumann(inflow),
                        BoundaryKind::NoFlow => FaceRole::NoFlow,
                    }
                }
            })
            .collect();
        Ok(Self {
            grid,
            models: [config.matrix.clone(), config.fracture.clone()],
            cell_model,
            storage_scale,
            conductivity_scale,
            face_role,
            source: config.source.clone(),
            dt: config.dt,
        })
    }

    #[inline]
    pub fn model(&self, cell: usize) -> &ConstitutiveModel {
        &self.models[self.cell_model[cell] as usize]
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn initial_state(&self, initial: &PerSubdomain<ScalarField>) -> Vec<f64> {
        self.grid
            .cells
            .iter()
            .map(|c| initial.get(c.subdomain).eval(c.center[0], c.center[1], 0.0))
            .collect()
    }

    pub fn source_values(&self, t: f64) -> Vec<f64> {
        self.grid
            .cells
            .iter()
            .map(|c| self.source.get(c.subdomain).eval(c.center[0], c.center[1], t))
            .collect()
    }

    /// Scaled conductivities of the cells; entries of `psi` past the cells
    /// (unknowns of a coupled model) are ignored.
    pub fn conductivities(&self, psi: &[f64]) -> Vec<f64> {
        psi[..self.n_cells()]
            .iter()
            .enumerate()
            .map(|(i, &p)| self.conductivity_scale[i] * self.model(i).conductivity(p))
            .collect()
    }

    /// Face transmissibilities for cell conductivities evaluated at `lin`.
    /// Faces that carry no two-point flux get 0.
    pub fn transmissibilities(&self, lin: &[f64]) -> Result<Vec<f64>> {
        let k = self.conductivities(lin);
        self.transmissibilities_from(&k)
    }

    pub fn transmissibilities_from(&self, k: &[f64]) -> Result<Vec<f64>> {
        self.grid
            .faces
            .iter()
            .zip(&self.face_role)
            .map(|(f, role)| match role {
                FaceRole::Internal => face_transmissibility(f, k[f.owner], k[f.neighbor.unwrap()]),
                FaceRole::Dirichlet(_) => face_transmissibility(f, k[f.owner], 0.0),
                FaceRole::External | FaceRole::Neumann(_) | FaceRole::NoFlow => Ok(0.0),
            })
            .collect()
    }

    /// Adds the cell rows to `sys`: modified-Picard storage, two-point fluxes
    /// over the `[W, E, S, N]` faces, boundary data and sources. Returns the
    /// transmissibilities used.
    pub fn assemble_cells(&self, prev: &[f64], lin: &[f64], t_new: f64, sys: &mut LinearSystem) -> Result<Vec<f64>> {
        let trans = self.transmissibilities(lin)?;
        let source = self.source_values(t_new);
        for (i, cell) in self.grid.cells.iter().enumerate() {
            let m = self.model(i);
            let c = self.storage_scale[i] * cell.area() / self.dt;
            let ds_lin = m.d_saturation(lin[i]);
            sys.add(i, i, c * ds_lin);
            sys.add_rhs(i, source[i] * cell.area());
            add_storage_rhs(sys, i, c, m, prev[i], lin[i]);
            for &fi in &self.grid.cell_faces[i] {
                let face = &self.grid.faces[fi];
                match self.face_role[fi] {
                    FaceRole::Internal => {
                        let other = if face.owner == i { face.neighbor.unwrap() } else { face.owner };
                        sys.add(i, i, trans[fi]);
                        sys.add(i, other, -trans[fi]);
                    }
                    FaceRole::Dirichlet(head) => {
                        sys.add(i, i, trans[fi]);
                        sys.add_rhs(i, trans[fi] * head);
                    }
                    FaceRole::Neumann(q) => sys.add_rhs(i, face.area * q),
                    FaceRole::External | FaceRole::NoFlow => {}
                }
            }
        }
        Ok(trans)
    }

    /// Face fluxes: owner to neighbour for internal faces, outward for
    /// boundary faces, 0 for no-flow and external faces.
    pub fn face_fluxes(&self, psi: &[f64], trans: &[f64]) -> Vec<f64> {
        self.grid
            .faces
            .iter()
            .zip(&self.face_role)
            .zip(trans)
            .map(|((f, role), &t)| match *role {
                FaceRole::Internal => t * (psi[f.owner] - psi[f.neighbor.unwrap()]),
                FaceRole::Dirichlet(head) => t * (psi[f.owner] - head),
                FaceRole::Neumann(q) => -q * f.area,
                FaceRole::External | FaceRole::NoFlow => 0.0,
            })
            .collect()
    }

    /// Adds the cell storage, sources and external boundary fluxes of one step.
    pub fn add_cell_balance(&self, prev: &[f64], new: &[f64], trans: &[f64], t_new: f64, balance: &mut MassBalance) {
        let source = self.source_values(t_new);
        for (i, cell) in self.grid.cells.iter().enumerate() {
            let m = self.model(i);
            balance.add_storage(self.storage_scale[i] * m.saturation_difference(new[i], prev[i]) * cell.area() / self.dt);
            balance.add_source(source[i] * cell.area());
        }
        let flux = self.face_fluxes(new, trans);
        for (fi, face) in self.grid.faces.iter().enumerate() {
            if face.neighbor.is_none() {
                balance.add_outflow(flux[fi]);
            }
        }
    }

    /// Storage linearisation defect of the cells (weighted by
    /// `sigma |cell| / dt`).
    pub fn cell_storage_defect(&self, prev: &[f64], lin: &[f64], x: &[f64]) -> StorageDefect {
        let mut out = StorageDefect::default();
        for (i, cell) in self.grid.cells.iter().enumerate() {
            let w = self.storage_scale[i] * cell.area() / self.dt;
            out.add(self.model(i), w, prev[i], lin[i], x[i]);
        }
        out
    }

    /// `sum sigma W(psi) |cell|`.
    pub fn energy(&self, psi: &[f64]) -> Result<f64> {
        let mut e = 0.0;
        for (i, cell) in self.grid.cells.iter().enumerate() {
            e += self.storage_scale[i] * self.model(i).energy_w(psi[i])? * cell.area();
        }
        Ok(e)
    }
}

impl ImplicitProblem for FlowProblem {
    fn n_dofs(&self) -> usize {
        self.n_cells()
    }

    fn assemble(&self, prev: &[f64], lin: &[f64], t_new: f64) -> Result<CscSystem> {
        let mut sys = LinearSystem::new(self.n_cells());
        self.assemble_cells(prev, lin, t_new, &mut sys)?;
        Ok(sys.finish())
    }

    fn storage_defect(&self, prev: &[f64], lin: &[f64], x: &[f64]) -> f64 {
        self.cell_storage_defect(prev, lin, x).relative()
    }
}

/// Adds the storage part `-c (S(lin) - S(prev)) + c S'(lin) lin` of a
/// modified-Picard row. The saturation change is evaluated as a difference,
/// so near a steady state the right-hand side is small instead of a
/// cancellation between saturations of order one.
pub(crate) fn add_storage_rhs(sys: &mut LinearSystem, row: usize, c: f64, model: &ConstitutiveModel, prev: f64, lin: f64) {
    sys.add_rhs(row, -c * model.saturation_difference(lin, prev));
    sys.add_rhs(row, c * model.d_saturation(lin) * lin);
}

/// Storage linearisation defect `sum w (S(x) - S(lin) - S'(lin)(x - lin))`
/// next to the storage change `sum w |S(x) - S(prev)|` it is measured
/// against and the rounding level of the defect's terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StorageDefect {
    pub defect: f64,
    pub scale: f64,
    pub rounding: f64,
}

impl StorageDefect {
    /// Adds one unknown with storage weight `w`.
    pub fn add(&mut self, model: &ConstitutiveModel, w: f64, prev: f64, lin: f64, x: f64) {
        let change = model.saturation_difference(x, lin);
        let linear = model.d_saturation(lin) * (x - lin);
        self.defect += w * (change - linear);
        self.scale += w * model.saturation_difference(x, prev).abs();
        self.rounding += w * (change.abs() + linear.abs()) * 16.0 * f64::EPSILON;
    }

    /// `|defect| / scale`; 0 once the defect is below its own rounding level
    /// (near a steady state the storage change, and with it the scale,
    /// vanishes), and the plain defect for a zero scale.
    pub fn relative(&self) -> f64 {
        if self.defect.abs() <= self.rounding {
            0.0
        } else if self.scale > 0.0 {
            self.defect.abs() / self.scale
        } else {
            self.defect.abs()
        }
    }
}

/// Discretisation of the `epsilon`-model for `config`.
pub fn epsilon_problem(config: &SimulationConfig) -> Result<FlowProblem> {
    if !(config.regime.epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "the full model needs a positive fracture width, got {}",
            config.regime.epsilon
        )));
    }
    FlowProblem::new(config, config.grid()?, FaceRole::Internal)
}

/// Linearised system of one Picard iteration of the `epsilon`-model.
pub fn assemble_system(problem: &FlowProblem, prev: &StateField, iterate: &StateField) -> Result<CscSystem> {
    problem.assemble(&prev.psi, &iterate.psi, iterate.time)
}

/// Runs a cell-only problem and records every state and budget.
pub fn run_problem(problem: &FlowProblem, initial: Vec<f64>, end_time: f64, picard: &PicardSettings) -> Result<TimeSeries> {
    let n_steps = step_count(end_time, problem.dt)?;
    let mut states = vec![StateField { time: 0.0, psi: initial.clone() }];
    let mut steps = Vec::with_capacity(n_steps);
    run_steps(problem, initial, problem.dt, n_steps, picard, |step, t, prev, out| {
        let trans = problem.transmissibilities(&out.linearization)?;
        let mut balance = MassBalance::default();
        problem.add_cell_balance(prev, &out.solution, &trans, t, &mut balance);
        log::debug!("step {step}: t = {t:.4}, {} iterations, balance {:.2e}", out.iterations, balance.relative());
        steps.push(StepRecord {
            stats: StepStats {
                step,
                time: t,
                iterations: out.iterations,
                update: out.update,
                residual: out.residual,
            },
            balance,
        });
        states.push(StateField {
            time: t,
            psi: out.solution.clone(),
        });
        Ok(())
    })?;
    Ok(TimeSeries { states, steps })
}

/// Solves the `epsilon`-model over `[0, T]`.
pub fn run_simulation(config: &SimulationConfig) -> Result<TimeSeries> {
    let problem = epsilon_problem(config)?;
    let initial = problem.initial_state(&config.initial);
    run_problem(&problem, initial, config.end_time, &config.picard)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{RetentionLaw, TableSpec, VanGenuchtenParams};
    use crate::mesh::Resolution;

    fn linear_model() -> ConstitutiveModel {
        ConstitutiveModel::new(
            RetentionLaw::Linear {
                slope: 1.0,
                conductivity: 1.0,
            },
            TableSpec::default(),
        )
        .unwrap()
    }

    fn small_config() -> SimulationConfig {
        SimulationConfig {
            regime: ScalingRegime::new(0.1, -1.0, -1.0),
            matrix_width: 1.0,
            resolution: Resolution {
                matrix_nx: 4,
                fracture_nx: 2,
                ny: 4,
            },
            matrix: ConstitutiveModel::van_genuchten(VanGenuchtenParams::silt_loam()).unwrap(),
            fracture: ConstitutiveModel::van_genuchten(VanGenuchtenParams::touchet_silt_loam()).unwrap(),
            porosity_ratio: 0.469 / 0.396,
            conductivity_ratio: 3.507e-5 / 5.74e-7,
            end_time: 0.03,
            dt: 0.015,
            picard: PicardSettings::default(),
            boundary: vec![
                BoundarySegment::whole(Subdomain::M1, Side::South, BoundaryKind::Neumann { inflow: 0.5 }),
                BoundarySegment::whole(Subdomain::M2, Side::North, BoundaryKind::Dirichlet { head: -3.0 }),
            ],
            initial: PerSubdomain::uniform(ScalarField::Constant(-3.0)),
            source: PerSubdomain::uniform(ScalarField::Constant(0.0)),
        }
    }

    #[test]
    fn reference_scales() {
        let s = ReferenceScales {
            length: 1.0,
            porosity: 0.396,
            conductivity: 5.74e-7,
        };
        assert_eq!(s.head(-3.0), -3.0);
        assert_eq!(s.time(s.time_scale()), 1.0);
    }

    #[test]
    fn fracture_multipliers() {
        let mut c = small_config();
        c.regime.epsilon = 0.01;
        assert!((c.storage_scale() - 0.469 / 0.396 * 100.0).abs() < 1e-12);
        assert!((c.conductivity_scale() - 3.507e-5 / 5.74e-7 * 100.0).abs() < 1e-9);
    }

    #[test]
    fn boundary_roles_follow_segments() {
        let p = epsilon_problem(&small_config()).unwrap();
        let mut neumann = 0;
        let mut dirichlet = 0;
        for (f, role) in p.grid.faces.iter().zip(&p.face_role) {
            match role {
                FaceRole::Neumann(_) => {
                    neumann += 1;
                    assert_eq!(p.grid.cells[f.owner].subdomain, Subdomain::M1);
                }
                FaceRole::Dirichlet(_) => {
                    dirichlet += 1;
                    assert_eq!(p.grid.cells[f.owner].subdomain, Subdomain::M2);
                }
                _ => {}
            }
        }
        assert_eq!((neumann, dirichlet), (4, 4));
    }

    #[test]
    fn isolated_cell_keeps_its_head() {
        let mut c = small_config();
        c.boundary.clear();
        c.resolution = Resolution {
            matrix_nx: 1,
            fracture_nx: 1,
            ny: 1,
        };
        let layout = DomainLayout::single_block(0.0, 1.0, 0.0, 1.0).unwrap();
        let grid = build_grid(&layout, &[crate::mesh::BlockResolution { nx: 1, ny: 1 }]).unwrap();
        let p = FlowProblem::new(&c, grid, FaceRole::Internal).unwrap();
        let ts = run_problem(&p, vec![-2.0], 0.03, &c.picard).unwrap();
        assert!(ts.states.iter().all(|s| (s.psi[0] + 2.0).abs() < 1e-14));
    }

    #[test]
    fn two_cell_golden_assembly() {
        // S = psi, K = 1, two unit cells side by side, dt = 1/2, no-flow
        let mut c = small_config();
        c.matrix = linear_model();
        c.boundary.clear();
        c.dt = 0.5;
        let layout = DomainLayout::single_block(0.0, 2.0, 0.0, 1.0).unwrap();
        let grid = build_grid(&layout, &[crate::mesh::BlockResolution { nx: 2, ny: 1 }]).unwrap();
        let p = FlowProblem::new(&c, grid, FaceRole::Internal).unwrap();
        let sys = p.assemble(&[1.0, 0.0], &[0.3, 0.7], 0.5).unwrap();
        // rows: 2 x_i + (x_i - x_j) = 2 prev_i
        assert_eq!(sys.get(0, 0), 3.0);
        assert_eq!(sys.get(0, 1), -1.0);
        assert_eq!(sys.get(1, 0), -1.0);
        assert_eq!(sys.get(1, 1), 3.0);
        assert_eq!(sys.rhs, vec![2.0, 0.0]);
    }

    #[test]
    fn fluxes_of_two_cells() {
        let mut c = small_config();
        c.matrix = linear_model();
        c.boundary.clear();
        let layout = DomainLayout::single_block(0.0, 2.0, 0.0, 1.0).unwrap();
        let grid = build_grid(&layout, &[crate::mesh::BlockResolution { nx: 2, ny: 1 }]).unwrap();
        let p = FlowProblem::new(&c, grid, FaceRole::Internal).unwrap();
        let psi = [1.0, 0.0];
        let trans = p.transmissibilities(&psi).unwrap();
        let flux = p.face_fluxes(&psi, &trans);
        let shared = p.grid.cell_faces[0][1];
        assert_eq!(flux[shared], 1.0);
        assert_eq!(p.face_fluxes(&[0.5, 0.5], &trans).iter().map(|f| f.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn short_reference_run_balances() {
        let ts = run_simulation(&small_config()).unwrap();
        assert_eq!(ts.states.len(), 3);
        assert!(ts.worst_balance() < 1e-8, "{}", ts.worst_balance());
        // inflow raises the head in the lower-left corner
        assert!(ts.last().psi[0] > -3.0);
    }
}
