//! Comparison of the `epsilon`-model with its effective limit.
//!
//! The fracture of width `epsilon` is collapsed by averaging across its width
//! (`x_average`) and compared with the interface head of the effective model.
//! The matrix blocks of the two geometries differ only by a rigid shift of
//! `epsilon / 2` towards the interface, so with equal matrix resolutions cell
//! `i` of block `m_j` in one grid is cell `i` of `m_j` in the other and no
//! interpolation is needed.

use rayon::prelude::*;
use serde::Serialize;

use crate::constitutive::ConstitutiveModel;
use crate::effective::{run_variant, EffectiveProblem, EffectiveSeries, EffectiveVariant};
use crate::error::{Error, Result};
use crate::fullmodel::{run_simulation, SimulationConfig};
use crate::mesh::{Grid, Subdomain};
use crate::output::num;

/// Relative slack when checking that two grids differ by the rigid shift.
const ALIGN_TOL: f64 = 1e-9;

/// Width average of a fracture field, one value per row: the mean of the
/// fracture cells of each row weighted by their widths.
pub fn x_average(grid: &Grid, values: &[f64]) -> Result<Vec<f64>> {
    let block = grid
        .block_index(Subdomain::Fracture)
        .ok_or_else(|| Error::IncompatibleGrids("grid has no fracture block".into()))?;
    if values.len() != grid.n_cells() {
        return Err(Error::IncompatibleGrids(format!(
            "{} values for {} cells",
            values.len(),
            grid.n_cells()
        )));
    }
    let nx = grid.resolution[block].nx;
    let mut sum = vec![0.0; grid.ny()];
    let mut width = vec![0.0; grid.ny()];
    for col in 0..nx {
        for row in 0..grid.ny() {
            let i = grid.cell_index(block, col, row);
            let dx = grid.cells[i].size[0];
            sum[row] += values[i] * dx;
            width[row] += dx;
        }
    }
    Ok(sum.iter().zip(&width).map(|(s, w)| s / w).collect())
}

/// Length-weighted mean of a profile along the interface.
pub fn y_average(ubar: &[f64], lengths: &[f64]) -> Result<f64> {
    if ubar.len() != lengths.len() || ubar.is_empty() {
        return Err(Error::IncompatibleGrids(format!(
            "{} values for {} segments",
            ubar.len(),
            lengths.len()
        )));
    }
    let total: f64 = lengths.iter().sum();
    Ok(ubar.iter().zip(lengths).map(|(u, l)| u * l).sum::<f64>() / total)
}

/// `sqrt(sum (a - b)^2 w)`.
pub fn l2_error(a: &[f64], b: &[f64], weights: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != weights.len() {
        return Err(Error::IncompatibleGrids(format!(
            "fields of {} and {} values with {} weights",
            a.len(),
            b.len(),
            weights.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .zip(weights)
        .map(|((x, y), w)| (x - y) * (x - y) * w)
        .sum::<f64>()
        .sqrt())
}

/// L2 distance between the heads of matrix block `role` on two geometries
/// whose blocks differ by the rigid shift of the fracture half-width.
pub fn matrix_error(grid_a: &Grid, psi_a: &[f64], grid_b: &Grid, psi_b: &[f64], role: Subdomain) -> Result<f64> {
    let (ba, bb) = match (grid_a.block_index(role), grid_b.block_index(role)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::IncompatibleGrids(format!("block {} missing", role.label()))),
    };
    if grid_a.resolution[ba] != grid_b.resolution[bb] {
        return Err(Error::IncompatibleGrids(format!(
            "block {} resolved by {:?} and {:?}",
            role.label(),
            grid_a.resolution[ba],
            grid_b.resolution[bb]
        )));
    }
    let (ra, rb) = (grid_a.block_cells(ba), grid_b.block_cells(bb));
    let shift = grid_a.layout.blocks[ba].x0 - grid_b.layout.blocks[bb].x0;
    let mut weights = Vec::with_capacity(ra.len());
    for (i, j) in ra.clone().zip(rb.clone()) {
        let (ca, cb) = (&grid_a.cells[i], &grid_b.cells[j]);
        let scale = ca.size[0].max(ca.size[1]);
        if (ca.center[0] - cb.center[0] - shift).abs() > ALIGN_TOL * scale
            || (ca.center[1] - cb.center[1]).abs() > ALIGN_TOL * scale
            || (ca.area() - cb.area()).abs() > ALIGN_TOL * ca.area()
        {
            return Err(Error::IncompatibleGrids(format!(
                "cells {i} and {j} of block {} are not related by the rigid shift",
                role.label()
            )));
        }
        weights.push(ca.area());
    }
    l2_error(&psi_a[ra], &psi_b[rb], &weights)
}

/// `|| u(z0, .) - ubar ||` over the interface, where `u` is the Kirchhoff
/// potential of the fracture head and `z0 in [-1/2, 1/2]` is the position
/// across the rescaled fracture (the nearest cell column is used).
pub fn transversal_flatness(grid: &Grid, model: &ConstitutiveModel, psi: &[f64], z0: f64) -> Result<f64> {
    let block = grid
        .block_index(Subdomain::Fracture)
        .ok_or_else(|| Error::IncompatibleGrids("grid has no fracture block".into()))?;
    if !(-0.5..=0.5).contains(&z0) {
        return Err(Error::Domain {
            value: z0,
            domain: "[-1/2, 1/2]".into(),
        });
    }
    let mut u = vec![0.0; grid.n_cells()];
    for i in grid.block_cells(block) {
        u[i] = model.kirchhoff(psi[i])?.value();
    }
    column_flatness(grid, &u, z0)
}

/// Column-minus-width-average norm of a fracture field, without transform.
pub fn column_flatness(grid: &Grid, values: &[f64], z0: f64) -> Result<f64> {
    let ubar = x_average(grid, values)?;
    let block = grid.block_index(Subdomain::Fracture).expect("checked by x_average");
    let nx = grid.resolution[block].nx;
    let col = (((z0 + 0.5) * nx as f64).floor().max(0.0) as usize).min(nx - 1);
    let column: Vec<f64> = (0..grid.ny()).map(|row| values[grid.cell_index(block, col, row)]).collect();
    l2_error(&column, &ubar, &vec![grid.dy(); grid.ny()])
}

/// Cross-fracture positions at which the flatness is reported.
pub const FLATNESS_POSITIONS: [f64; 3] = [-0.5, 0.0, 0.5];

/// One fracture width of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepMember {
    pub epsilon: f64,
    pub fracture_nx: usize,
}

/// Errors of one `epsilon`-model run against the effective model at `t = T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub fracture_nx: usize,
    pub err_fracture: f64,
    pub err_m1: f64,
    pub err_m2: f64,
    /// Flatness at `z0 = -1/2, 0, 1/2`.
    pub flatness: [f64; 3],
    pub iterations_total: usize,
    pub worst_balance: f64,
    /// Failure of the member run; the numbers are NaN when set.
    pub failure: Option<String>,
}

impl ConvergenceRow {
    fn failed(m: SweepMember, reason: String) -> Self {
        Self {
            epsilon: m.epsilon,
            fracture_nx: m.fracture_nx,
            err_fracture: f64::NAN,
            err_m1: f64::NAN,
            err_m2: f64::NAN,
            flatness: [f64::NAN; 3],
            iterations_total: 0,
            worst_balance: f64::NAN,
            failure: Some(reason),
        }
    }

    pub fn max_error(&self) -> f64 {
        self.err_fracture.max(self.err_m1).max(self.err_m2)
    }

    /// Largest flatness over the reported positions.
    pub fn worst_flatness(&self) -> f64 {
        self.flatness.iter().copied().fold(f64::NAN, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub variant: EffectiveVariant,
    pub end_time: f64,
    pub effective_iterations: usize,
    /// Worst relative step balance of the effective run.
    pub effective_balance: f64,
    /// Strictly decreasing in `epsilon`.
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failure.is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epsilon,fracture_nx,err_fracture,err_m1,err_m2,flatness_left,flatness_mid,flatness_right,iterations_total,worst_balance,failure\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                num(r.epsilon),
                r.fracture_nx,
                num(r.err_fracture),
                num(r.err_m1),
                num(r.err_m2),
                num(r.flatness[0]),
                num(r.flatness[1]),
                num(r.flatness[2]),
                r.iterations_total,
                num(r.worst_balance),
                r.failure.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
        s
    }

    /// Two-column `epsilon value` series for log-log plots, one per error
    /// quantity, as `(name, contents)`.
    pub fn plot_data(&self) -> Vec<(String, String)> {
        let series: [(&str, fn(&ConvergenceRow) -> f64); 5] = [
            ("err_fracture", |r| r.err_fracture),
            ("err_m1", |r| r.err_m1),
            ("err_m2", |r| r.err_m2),
            ("flatness_mid", |r| r.flatness[1]),
            ("flatness_worst", |r| r.worst_flatness()),
        ];
        series
            .iter()
            .map(|(name, get)| {
                let mut s = format!("# epsilon {name}\n");
                for r in self.rows.iter().filter(|r| r.failure.is_none()) {
                    s.push_str(&format!("{} {}\n", num(r.epsilon), num(get(r))));
                }
                (name.to_string(), s)
            })
            .collect()
    }

    /// Least-squares slope of `log(value)` against `log(epsilon)` over the
    /// successful rows with a positive value.
    pub fn log_log_slope(&self, value: impl Fn(&ConvergenceRow) -> f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.failure.is_none())
            .map(|r| (r.epsilon, value(r)))
            .filter(|&(e, v)| e > 0.0 && v > 0.0)
            .map(|(e, v)| (e.ln(), v.ln()))
            .collect();
        least_squares_slope(&pts)
    }
}

/// Slope of the least-squares line through `pts` (`None` for fewer than two
/// distinct abscissae).
pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Compares the final state of an `epsilon`-model run with the final state of
/// an effective run.
pub fn compare_final_states(
    config: &SimulationConfig,
    grid: &Grid,
    psi: &[f64],
    effective: &EffectiveProblem,
    eff: &EffectiveSeries,
) -> Result<ConvergenceRow> {
    let eff_grid = &effective.cells.grid;
    let eff_full = effective_state(eff, eff.matrix.states.len() - 1);
    let err_m1 = matrix_error(grid, psi, eff_grid, &eff_full[..effective.n_cells()], Subdomain::M1)?;
    let err_m2 = matrix_error(grid, psi, eff_grid, &eff_full[..effective.n_cells()], Subdomain::M2)?;
    let ubar = x_average(grid, psi)?;
    let trace = effective.fracture_profile(&eff_full);
    if trace.len() != ubar.len() {
        return Err(Error::IncompatibleGrids(format!(
            "{} fracture rows against {} interface rows",
            ubar.len(),
            trace.len()
        )));
    }
    let err_fracture = l2_error(&ubar, &trace, &vec![grid.dy(); grid.ny()])?;
    let mut flatness = [0.0; 3];
    for (f, z0) in flatness.iter_mut().zip(FLATNESS_POSITIONS) {
        *f = transversal_flatness(grid, &config.fracture, psi, z0)?;
    }
    Ok(ConvergenceRow {
        epsilon: config.regime.epsilon,
        fracture_nx: config.resolution.fracture_nx,
        err_fracture,
        err_m1,
        err_m2,
        flatness,
        iterations_total: 0,
        worst_balance: 0.0,
        failure: None,
    })
}

/// All unknowns of an effective run at time level `k` (cells, then fracture).
pub fn effective_state(eff: &EffectiveSeries, k: usize) -> Vec<f64> {
    let mut x = eff.matrix.states[k].psi.clone();
    x.extend_from_slice(&eff.interface[k].psi_f);
    x
}

fn sweep_member(base: &SimulationConfig, m: SweepMember, effective: &EffectiveProblem, eff: &EffectiveSeries) -> Result<ConvergenceRow> {
    let config = base.with_epsilon(m.epsilon, m.fracture_nx);
    let series = run_simulation(&config)?;
    let grid = config.grid()?;
    let mut row = compare_final_states(&config, &grid, &series.last().psi, effective, eff)?;
    row.iterations_total = series.total_iterations();
    row.worst_balance = series.worst_balance();
    Ok(row)
}

/// Sorts sweep members by decreasing `epsilon`, rejecting non-positive or
/// repeated widths.
pub fn order_members(members: &[SweepMember]) -> Result<Vec<SweepMember>> {
    let mut out = members.to_vec();
    if out.iter().any(|m| !(m.epsilon > 0.0) || m.fracture_nx == 0) {
        return Err(Error::InvalidParameter(
            "sweep widths must be positive with at least one fracture column".into(),
        ));
    }
    out.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    if out.windows(2).any(|w| w[0].epsilon == w[1].epsilon) {
        return Err(Error::InvalidParameter("sweep widths must be distinct".into()));
    }
    Ok(out)
}

/// Runs the effective model `variant` once and the `epsilon`-model for every
/// member (concurrently, on the current rayon pool) and tabulates the errors
/// at `t = T`. A failing member is recorded in its row; only a failure of the
/// effective run aborts the sweep.
pub fn epsilon_sweep(base: &SimulationConfig, members: &[SweepMember], variant: EffectiveVariant) -> Result<ConvergenceTable> {
    let members = order_members(members)?;
    let effective = EffectiveProblem::new(base, variant)?;
    let eff = run_variant(base, variant)?;
    let rows = members
        .par_iter()
        .map(|&m| {
            sweep_member(base, m, &effective, &eff).unwrap_or_else(|e| {
                log::warn!("sweep member epsilon = {} failed: {e}", m.epsilon);
                ConvergenceRow::failed(m, e.to_string())
            })
        })
        .collect();
    Ok(ConvergenceTable {
        variant,
        end_time: base.end_time,
        effective_iterations: eff.matrix.total_iterations(),
        effective_balance: eff.matrix.worst_balance(),
        rows,
    })
}
