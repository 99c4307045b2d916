//! Plain-text renderings of fields, step logs and interface data.
//!
//! Numbers are written with 17 significant digits so that files round-trip
//! exactly and identical runs give byte-identical output.

use std::fmt::Write as _;

use crate::effective::{InterfaceField, InterfaceReport};
use crate::fullmodel::StepRecord;
use crate::mesh::Grid;

/// `x` in scientific notation with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Cell field as CSV with columns `x, y, subdomain, psi, saturation`.
pub fn field_csv(grid: &Grid, psi: &[f64], saturation: &[f64]) -> String {
    let mut s = String::from("x,y,subdomain,psi,saturation\n");
    for (i, c) in grid.cells.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            num(c.center[0]),
            num(c.center[1]),
            c.subdomain.label(),
            num(psi[i]),
            num(saturation[i])
        );
    }
    s
}

/// Cell field as a legacy-format ASCII rectilinear grid, readable by common
/// visualisation tools. Subdomains are coded 0 (left block), 1 (fracture)
/// and 2 (right block).
pub fn field_vtk(grid: &Grid, title: &str, psi: &[f64], saturation: &[f64]) -> String {
    let mut xs = Vec::new();
    for (b, block) in grid.layout.blocks.iter().enumerate() {
        let nx = grid.resolution[b].nx;
        let dx = block.width() / nx as f64;
        xs.extend((0..nx).map(|col| block.x0 + col as f64 * dx));
    }
    xs.push(grid.layout.blocks.last().map_or(0.0, |b| b.x1));
    let dy = grid.dy();
    let ys: Vec<f64> = (0..=grid.ny()).map(|r| grid.layout.y0 + r as f64 * dy).collect();

    // visualisation order: x fastest
    let mut order = Vec::with_capacity(grid.n_cells());
    for row in 0..grid.ny() {
        for (b, res) in grid.resolution.iter().enumerate() {
            order.extend((0..res.nx).map(|col| grid.cell_index(b, col, row)));
        }
    }

    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{}", title.replace('\n', " "));
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET RECTILINEAR_GRID");
    let _ = writeln!(s, "DIMENSIONS {} {} 1", xs.len(), ys.len());
    for (axis, coords) in [("X", &xs), ("Y", &ys), ("Z", &vec![0.0])] {
        let _ = writeln!(s, "{axis}_COORDINATES {} double", coords.len());
        let line: Vec<String> = coords.iter().map(|&v| num(v)).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    let _ = writeln!(s, "CELL_DATA {}", order.len());
    for (name, values) in [("psi", psi), ("saturation", saturation)] {
        let _ = writeln!(s, "SCALARS {name} double 1");
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for &i in &order {
            let _ = writeln!(s, "{}", num(values[i]));
        }
    }
    let _ = writeln!(s, "SCALARS subdomain int 1");
    let _ = writeln!(s, "LOOKUP_TABLE default");
    for &i in &order {
        let code = match grid.cells[i].subdomain {
            crate::mesh::Subdomain::M1 => 0,
            crate::mesh::Subdomain::Fracture => 1,
            crate::mesh::Subdomain::M2 => 2,
        };
        let _ = writeln!(s, "{code}");
    }
    s
}

/// Per-step log: Picard statistics and the water budget.
pub fn steps_csv(steps: &[StepRecord]) -> String {
    let mut s = String::from("step,time,iterations,update,residual,storage_rate,source_rate,outflow,balance\n");
    for r in steps {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.stats.step,
            num(r.stats.time),
            r.stats.iterations,
            num(r.stats.update),
            num(r.stats.residual),
            num(r.balance.storage_rate),
            num(r.balance.source_rate),
            num(r.balance.outflow),
            num(r.balance.relative())
        );
    }
    s
}

/// Fracture head along the interface: columns `y, psi_f`. A scalar fracture
/// head is repeated on every row.
pub fn interface_csv(rows_y: &[f64], field: &InterfaceField) -> String {
    let mut s = String::from("y,psi_f\n");
    for (row, &y) in rows_y.iter().enumerate() {
        if let Some(v) = field.at_row(row) {
            let _ = writeln!(s, "{},{}", num(y), num(v));
        }
    }
    s
}

pub fn interface_reports_csv(reports: &[InterfaceReport]) -> String {
    let mut s = String::from("step,time,flux_integral,storage_change,end_outflow,budget_residual\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step,
            num(r.time),
            num(r.flux_integral),
            num(r.storage_change),
            num(r.end_outflow),
            num(r.budget_residual)
        );
    }
    s
}
