//! Reduced models in which the fracture has collapsed onto the interface
//! `Gamma = {0} x (0, 1)` between the two matrix blocks.
//!
//! Which interface law applies is decided by the scaling exponents
//! `(kappa, lambda)`:
//!
//! | variant | `kappa` | `lambda` | fracture unknown |
//! |---|---|---|---|
//! | I   | `-1`      | `-1`        | 1-D Richards equation along `Gamma` |
//! | II  | `> -1`    | `-1`        | 1-D stationary elliptic equation |
//! | III | `-1`      | `< -1`      | one scalar with storage |
//! | IV  | `> -1`    | `< -1`      | one scalar, zero net exchange |
//! | V   | `> -1`    | `(-1, 1)`   | none: head and flux continuous |
//!
//! The matrix blocks use the same cell discretisation as the full model. In
//! variants I–IV a matrix cell next to `Gamma` exchanges water with the
//! fracture unknown of its row through the half-cell transmissibility
//! `dy K_m / (dx / 2)`, i.e. the matrix trace on `Gamma` is the fracture head.
//! The exchange terms are the only place the flux jump enters; [`jump_flux`]
//! reconstructs it for reporting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveModel;
use crate::error::{Error, Result};
use crate::fullmodel::{
    add_storage_rhs, FaceRole, FlowProblem, SimulationConfig, StateField, StepRecord, TimeSeries,
};
use crate::linalg::{CscSystem, LinearSystem};
use crate::mesh::{
    build_geometry, build_grid, BlockResolution, DomainLayout, InterfaceTag, ScalingRegime, Side, Subdomain,
};
use crate::timestep::{run_steps, step_count, ImplicitProblem, MassBalance, StepStats};

/// Exponents closer than this to a regime boundary count as on it.
const EXPONENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EffectiveVariant {
    I,
    II,
    III,
    IV,
    V,
}

impl EffectiveVariant {
    pub const ALL: [EffectiveVariant; 5] = [Self::I, Self::II, Self::III, Self::IV, Self::V];

    pub fn label(self) -> &'static str {
        match self {
            Self::I => "I",
            Self::II => "II",
            Self::III => "III",
            Self::IV => "IV",
            Self::V => "V",
        }
    }

    /// Whether the fracture keeps a time derivative.
    pub fn has_storage(self) -> bool {
        matches!(self, Self::I | Self::III)
    }

    /// Whether the fracture head is a single scalar.
    pub fn is_scalar(self) -> bool {
        matches!(self, Self::III | Self::IV)
    }

    /// Number of fracture unknowns for `ny` interface rows.
    pub fn fracture_dofs(self, ny: usize) -> usize {
        match self {
            Self::I | Self::II => ny,
            Self::III | Self::IV => 1,
            Self::V => 0,
        }
    }
}

impl fmt::Display for EffectiveVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for EffectiveVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown effective model `{s}` (expected I, II, III, IV or V)")))
    }
}

/// Effective model for the scaling exponents of `regime`.
pub fn select_variant(regime: &ScalingRegime) -> Result<EffectiveVariant> {
    let (k, l) = (regime.kappa, regime.lambda);
    let unsupported = |reason: &str| Error::UnsupportedRegime {
        kappa: k,
        lambda: l,
        reason: reason.into(),
    };
    if !k.is_finite() || !l.is_finite() {
        return Err(unsupported("scaling exponents must be finite"));
    }
    if k < -1.0 - EXPONENT_TOL {
        return Err(unsupported("kappa < -1 gives a fracture storage that blows up in the limit"));
    }
    if l >= 1.0 - EXPONENT_TOL {
        return Err(unsupported(
            "lambda >= 1 corresponds to impermeable fractures with a pressure jump across the interface",
        ));
    }
    let kappa_critical = (k + 1.0).abs() <= EXPONENT_TOL;
    let lambda_critical = (l + 1.0).abs() <= EXPONENT_TOL;
    let lambda_large = l < -1.0;
    Ok(match (kappa_critical, lambda_critical, lambda_large) {
        (true, true, _) => EffectiveVariant::I,
        (true, false, true) => EffectiveVariant::III,
        (true, false, false) => {
            return Err(unsupported(
                "kappa = -1 with lambda in (-1, 1) has no known effective model",
            ))
        }
        (false, true, _) => EffectiveVariant::II,
        (false, false, true) => EffectiveVariant::IV,
        (false, false, false) => EffectiveVariant::V,
    })
}

/// Fracture head on `Gamma` at one time level: one value per interface row
/// (I, II), a single value (III, IV) or nothing (V).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterfaceField {
    pub time: f64,
    pub psi_f: Vec<f64>,
}

impl InterfaceField {
    /// Head seen by interface row `row`.
    pub fn at_row(&self, row: usize) -> Option<f64> {
        match self.psi_f.len() {
            0 => None,
            1 => Some(self.psi_f[0]),
            _ => self.psi_f.get(row).copied(),
        }
    }
}

/// Per-step water budget of the fracture unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterfaceReport {
    pub step: usize,
    pub time: f64,
    /// `int_Gamma [q_m] dy`: net matrix inflow into the fracture.
    pub flux_integral: f64,
    /// `c_phi int (S_f(new) - S_f(old)) dy` (0 without fracture storage).
    pub storage_change: f64,
    /// Outflow through the fracture ends.
    pub end_outflow: f64,
    /// `storage_change - dt (flux_integral - end_outflow)`.
    pub budget_residual: f64,
}

/// Results of an effective run.
#[derive(Debug, Clone)]
pub struct EffectiveSeries {
    pub variant: EffectiveVariant,
    /// Matrix heads and whole-system budgets.
    pub matrix: TimeSeries,
    pub interface: Vec<InterfaceField>,
    pub reports: Vec<InterfaceReport>,
}

impl EffectiveSeries {
    pub fn interface_at_time(&self, t: f64) -> &InterfaceField {
        self.interface
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .expect("interface series holds the initial state")
    }
}

/// One matrix face pair on `Gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceLink {
    pub face: usize,
    pub m1: usize,
    pub m2: usize,
    pub row: usize,
    /// Fracture unknown (offset from the first fracture dof).
    pub node: usize,
}

/// Discretisation of one effective model.
#[derive(Debug, Clone)]
pub struct EffectiveProblem {
    pub variant: EffectiveVariant,
    pub cells: FlowProblem,
    pub fracture: ConstitutiveModel,
    /// `c_phi`
    pub storage_ratio: f64,
    /// `c_K`
    pub conductivity_ratio: f64,
    pub links: Vec<InterfaceLink>,
    /// Conditions at the fracture bottom and top (`Dirichlet` or `NoFlow`).
    pub ends: [FaceRole; 2],
    n_fracture: usize,
}

/// Geometry of the reduced models for `config`.
pub fn effective_layout(config: &SimulationConfig) -> Result<DomainLayout> {
    build_geometry(&config.regime.with_epsilon(0.0), config.matrix_width)
}

impl EffectiveProblem {
    pub fn new(config: &SimulationConfig, variant: EffectiveVariant) -> Result<Self> {
        let layout = effective_layout(config)?;
        let grid = build_grid(&layout, &config.resolution.for_layout(&layout))?;
        let interface_role = if variant == EffectiveVariant::V {
            FaceRole::Internal
        } else {
            FaceRole::External
        };
        let cells = FlowProblem::new(config, grid, interface_role)?;
        let links: Vec<InterfaceLink> = cells
            .grid
            .interface_faces(InterfaceTag::Gamma)
            .into_iter()
            .map(|fi| {
                let f = &cells.grid.faces[fi];
                let row = cells.grid.cells[f.owner].row;
                InterfaceLink {
                    face: fi,
                    m1: f.owner,
                    m2: f.neighbor.expect("interface faces join two blocks"),
                    row,
                    node: if variant.is_scalar() { 0 } else { row },
                }
            })
            .collect();
        let end = |side: Side| match config.boundary_condition(Subdomain::Fracture, side, 0.5) {
            crate::fullmodel::BoundaryKind::Dirichlet { head } => FaceRole::Dirichlet(head),
            _ => FaceRole::NoFlow,
        };
        Ok(Self {
            variant,
            n_fracture: variant.fracture_dofs(cells.grid.ny()),
            fracture: config.fracture.clone(),
            storage_ratio: config.porosity_ratio,
            conductivity_ratio: config.conductivity_ratio,
            ends: [end(Side::South), end(Side::North)],
            cells,
            links,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.n_cells()
    }

    pub fn n_fracture(&self) -> usize {
        self.n_fracture
    }

    fn dof(&self, node: usize) -> usize {
        self.n_cells() + node
    }

    /// Interface length carried by one fracture unknown.
    pub fn node_length(&self) -> f64 {
        let g = &self.cells.grid;
        if self.variant.is_scalar() {
            g.layout.y1 - g.layout.y0
        } else {
            g.dy()
        }
    }

    /// Initial heads of all unknowns (cells first, then the fracture).
    pub fn initial_state(&self, config: &SimulationConfig) -> Vec<f64> {
        let mut x = self.cells.initial_state(&config.initial);
        let g = &self.cells.grid;
        for node in 0..self.n_fracture {
            let y = if self.variant.is_scalar() {
                0.5 * (g.layout.y0 + g.layout.y1)
            } else {
                g.layout.y0 + (node as f64 + 0.5) * g.dy()
            };
            x.push(config.initial.f.eval(0.0, y, 0.0));
        }
        x
    }

    /// Half-cell transmissibilities `(m1 side, m2 side)` of every link for
    /// matrix heads `lin`.
    pub fn link_transmissibilities(&self, lin: &[f64]) -> Vec<(f64, f64)> {
        let g = &self.cells.grid;
        self.links
            .iter()
            .map(|l| {
                let f = &g.faces[l.face];
                let k1 = self.cells.conductivity_scale[l.m1] * self.cells.model(l.m1).conductivity(lin[l.m1]);
                let k2 = self.cells.conductivity_scale[l.m2] * self.cells.model(l.m2).conductivity(lin[l.m2]);
                (f.area * k1 / f.d_owner, f.area * k2 / f.d_neighbor)
            })
            .collect()
    }

    /// Along-fracture transmissibilities of variants I and II: `n - 1`
    /// interior values followed by the bottom and top end values (0 for
    /// no-flow ends).
    pub fn fracture_transmissibilities(&self, lin: &[f64]) -> Vec<f64> {
        if self.variant.is_scalar() || self.n_fracture == 0 {
            return Vec::new();
        }
        let dy = self.node_length();
        let k: Vec<f64> = (0..self.n_fracture)
            .map(|j| self.conductivity_ratio * self.fracture.conductivity(lin[self.dof(j)]))
            .collect();
        let mut t: Vec<f64> = k.windows(2).map(|w| 1.0 / (0.5 * dy / w[0] + 0.5 * dy / w[1])).collect();
        for (end, kj) in self.ends.iter().zip([k[0], k[self.n_fracture - 1]]) {
            t.push(match end {
                FaceRole::Dirichlet(_) => kj / (0.5 * dy),
                _ => 0.0,
            });
        }
        t
    }

    fn fracture_storage_weight(&self) -> f64 {
        if self.variant.has_storage() {
            self.storage_ratio * self.node_length() / self.cells.dt
        } else {
            0.0
        }
    }

    /// Flux jump `[q_m]` per interface row (per unit length) for heads `x`,
    /// with transmissibilities evaluated at `lin`.
    pub fn jump_flux_at(&self, x: &[f64], lin: &[f64]) -> Vec<f64> {
        let trans = self.link_transmissibilities(lin);
        let g = &self.cells.grid;
        self.links
            .iter()
            .zip(&trans)
            .map(|(l, &(t1, t2))| {
                let trace = if self.n_fracture == 0 {
                    (t1 * x[l.m1] + t2 * x[l.m2]) / (t1 + t2)
                } else {
                    x[self.dof(l.node)]
                };
                (t1 * (x[l.m1] - trace) + t2 * (x[l.m2] - trace)) / g.faces[l.face].area
            })
            .collect()
    }

    /// Fracture head per interface row for all unknowns `x`. Variants with a
    /// fracture unknown return it; variant V returns the two-point face value
    /// between the adjacent matrix cells.
    pub fn fracture_profile(&self, x: &[f64]) -> Vec<f64> {
        if self.n_fracture > 0 {
            return self.links.iter().map(|l| x[self.dof(l.node)]).collect();
        }
        self.links
            .iter()
            .zip(self.link_transmissibilities(x))
            .map(|(l, (t1, t2))| (t1 * x[l.m1] + t2 * x[l.m2]) / (t1 + t2))
            .collect()
    }

    /// `int_Gamma [q_m] dy` by the midpoint rule over the interface rows.
    pub fn flux_integral(&self, jump: &[f64]) -> f64 {
        let g = &self.cells.grid;
        self.links.iter().zip(jump).map(|(l, q)| q * g.faces[l.face].area).sum()
    }

    /// Outflow through the fracture ends (variants I and II).
    fn end_outflow(&self, x: &[f64], ftrans: &[f64]) -> f64 {
        if ftrans.is_empty() {
            return 0.0;
        }
        let n = self.n_fracture;
        let mut out = 0.0;
        for (end, (t, node)) in self.ends.iter().zip([(ftrans[n - 1], 0), (ftrans[n], n - 1)]) {
            if let FaceRole::Dirichlet(head) = end {
                out += t * (x[self.dof(node)] - head);
            }
        }
        out
    }

    /// Whole-system budget of one step.
    pub fn balance(&self, prev: &[f64], new: &[f64], lin: &[f64], t_new: f64) -> Result<MassBalance> {
        let mut b = MassBalance::default();
        let trans = self.cells.transmissibilities(lin)?;
        self.cells.add_cell_balance(prev, new, &trans, t_new, &mut b);
        let w = self.fracture_storage_weight();
        if w > 0.0 {
            for node in 0..self.n_fracture {
                let d = self.dof(node);
                b.add_storage(w * self.fracture.saturation_difference(new[d], prev[d]));
            }
        }
        b.add_outflow(self.end_outflow(new, &self.fracture_transmissibilities(lin)));
        Ok(b)
    }

    /// Fracture budget of one step.
    pub fn report(&self, step: usize, t_new: f64, prev: &[f64], new: &[f64], lin: &[f64]) -> InterfaceReport {
        let flux_integral = self.flux_integral(&self.jump_flux_at(new, lin));
        let w = self.fracture_storage_weight() * self.cells.dt;
        let storage_change: f64 = (0..self.n_fracture)
            .map(|node| {
                let d = self.dof(node);
                w * self.fracture.saturation_difference(new[d], prev[d])
            })
            .sum();
        let end_outflow = self.end_outflow(new, &self.fracture_transmissibilities(lin));
        InterfaceReport {
            step,
            time: t_new,
            flux_integral,
            storage_change,
            end_outflow,
            budget_residual: storage_change - self.cells.dt * (flux_integral - end_outflow),
        }
    }
}

impl ImplicitProblem for EffectiveProblem {
    fn n_dofs(&self) -> usize {
        self.n_cells() + self.n_fracture
    }

    fn assemble(&self, prev: &[f64], lin: &[f64], t_new: f64) -> Result<CscSystem> {
        let mut sys = LinearSystem::new(self.n_dofs());
        self.cells.assemble_cells(prev, lin, t_new, &mut sys)?;
        if self.n_fracture == 0 {
            return Ok(sys.finish());
        }
        for (l, (t1, t2)) in self.links.iter().zip(self.link_transmissibilities(lin)) {
            let f = self.dof(l.node);
            sys.add_coupling(l.m1, f, t1);
            sys.add_coupling(l.m2, f, t2);
        }
        let w = self.fracture_storage_weight();
        for node in 0..self.n_fracture {
            let d = self.dof(node);
            // keep the diagonal present even without storage
            sys.add(d, d, w * self.fracture.d_saturation(lin[d]));
            if w > 0.0 {
                add_storage_rhs(&mut sys, d, w, &self.fracture, prev[d], lin[d]);
            }
        }
        let ftrans = self.fracture_transmissibilities(lin);
        if !ftrans.is_empty() {
            let n = self.n_fracture;
            for j in 0..n - 1 {
                sys.add_coupling(self.dof(j), self.dof(j + 1), ftrans[j]);
            }
            for (end, (t, node)) in self.ends.iter().zip([(ftrans[n - 1], 0), (ftrans[n], n - 1)]) {
                if let FaceRole::Dirichlet(head) = *end {
                    sys.add(self.dof(node), self.dof(node), t);
                    sys.add_rhs(self.dof(node), t * head);
                }
            }
        }
        Ok(sys.finish())
    }

    fn storage_defect(&self, prev: &[f64], lin: &[f64], x: &[f64]) -> f64 {
        let mut out = self.cells.cell_storage_defect(prev, lin, x);
        let w = self.fracture_storage_weight();
        if w > 0.0 {
            for node in 0..self.n_fracture {
                let d = self.dof(node);
                out.add(&self.fracture, w, prev[d], lin[d], x[d]);
            }
        }
        out.relative()
    }
}

/// Flux jump `[q_m]` per interface row for a state of `problem`, with
/// conductivities at the state itself.
pub fn jump_flux(problem: &EffectiveProblem, state: &[f64]) -> Vec<f64> {
    problem.jump_flux_at(state, state)
}

/// Checks that `variant` is the one the scaling regime of `config` selects.
pub fn check_variant(config: &SimulationConfig, variant: EffectiveVariant) -> Result<()> {
    let expected = select_variant(&config.regime)?;
    if expected != variant {
        return Err(Error::InvalidParameter(format!(
            "effective model {variant} does not match the scaling regime (kappa = {}, lambda = {}), which selects {expected}",
            config.regime.kappa, config.regime.lambda
        )));
    }
    Ok(())
}

/// Solves the effective model `variant` over `[0, T]`.
pub fn run_effective(config: &SimulationConfig, variant: EffectiveVariant) -> Result<EffectiveSeries> {
    check_variant(config, variant)?;
    run_variant(config, variant)
}

/// Like [`run_effective`] without checking the variant against the regime.
pub fn run_variant(config: &SimulationConfig, variant: EffectiveVariant) -> Result<EffectiveSeries> {
    let problem = EffectiveProblem::new(config, variant)?;
    let n_steps = step_count(config.end_time, config.dt)?;
    let nc = problem.n_cells();
    let initial = problem.initial_state(config);
    let split = |x: &[f64], t: f64| {
        (
            StateField { time: t, psi: x[..nc].to_vec() },
            InterfaceField { time: t, psi_f: x[nc..].to_vec() },
        )
    };
    let (m0, f0) = split(&initial, 0.0);
    let mut states = vec![m0];
    let mut interface = vec![f0];
    let mut steps = Vec::with_capacity(n_steps);
    let mut reports = Vec::with_capacity(n_steps);
    run_steps(&problem, initial, config.dt, n_steps, &config.picard, |step, t, prev, out| {
        let balance = problem.balance(prev, &out.solution, &out.linearization, t)?;
        let report = problem.report(step, t, prev, &out.solution, &out.linearization);
        log::debug!(
            "model {variant} step {step}: {} iterations, balance {:.2e}, fracture budget {:.2e}",
            out.iterations,
            balance.relative(),
            report.budget_residual
        );
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
        reports.push(report);
        let (m, f) = split(&out.solution, t);
        states.push(m);
        interface.push(f);
        Ok(())
    })?;
    Ok(EffectiveSeries {
        variant,
        matrix: TimeSeries { states, steps },
        interface,
        reports,
    })
}

/// The two matrix blocks of the reduced geometry as one block, with the
/// boundary data and subdomain labels of the variant-V discretisation.
/// Cell numbering coincides with the two-block grid.
pub fn merged_domain_problem(config: &SimulationConfig) -> Result<FlowProblem> {
    let reference = EffectiveProblem::new(config, EffectiveVariant::V)?.cells;
    let layout = effective_layout(config)?;
    let (m1, m2) = (layout.blocks[0], layout.blocks[1]);
    let res = config.resolution;
    let merged_layout = DomainLayout::single_block(m1.x0, m2.x1, layout.y0, layout.y1)?;
    let mut grid = build_grid(
        &merged_layout,
        &[BlockResolution {
            nx: 2 * res.matrix_nx,
            ny: res.ny,
        }],
    )?;
    for c in grid.cells.iter_mut() {
        if c.col >= res.matrix_nx {
            c.subdomain = Subdomain::M2;
        }
    }
    let mut merged = FlowProblem::new(config, grid, FaceRole::Internal)?;
    for i in 0..merged.n_cells() {
        for slot in 0..4 {
            let (fm, fr) = (merged.grid.cell_faces[i][slot], reference.grid.cell_faces[i][slot]);
            if merged.grid.faces[fm].neighbor.is_none() {
                merged.face_role[fm] = reference.face_role[fr];
            }
        }
    }
    Ok(merged)
}
