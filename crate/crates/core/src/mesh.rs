//! Dimensionless geometry and matching rectangular grids.
//!
//! The domain is a row of rectangular blocks laid out left to right that share
//! the same vertical extent and the same number of cell rows. The
//! `epsilon`-model uses `[m1, f, m2]` with interfaces `Gamma1`, `Gamma2`; the
//! reduced geometry uses `[m1, m2]` abutting at `Gamma = {0} x (0, 1)`.
//!
//! Cells are numbered column by column (y fastest), so horizontally adjacent
//! cells are `ny` apart and the matrix bandwidth stays at `ny`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fracture width ratio together with the porosity and conductivity exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRegime {
    /// `l / L`; `0` selects the reduced geometry.
    pub epsilon: f64,
    pub kappa: f64,
    pub lambda: f64,
}

impl ScalingRegime {
    pub fn new(epsilon: f64, kappa: f64, lambda: f64) -> Self {
        Self { epsilon, kappa, lambda }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    /// `epsilon^kappa`, the fracture porosity scaling.
    pub fn storage_scale(&self) -> f64 {
        self.epsilon.powf(self.kappa)
    }

    /// `epsilon^lambda`, the fracture conductivity scaling.
    pub fn conductivity_scale(&self) -> f64 {
        self.epsilon.powf(self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subdomain {
    M1,
    #[serde(rename = "f")]
    Fracture,
    M2,
}

impl Subdomain {
    pub fn is_matrix(self) -> bool {
        !matches!(self, Subdomain::Fracture)
    }

    pub fn label(self) -> &'static str {
        match self {
            Subdomain::M1 => "m1",
            Subdomain::Fracture => "f",
            Subdomain::M2 => "m2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InterfaceTag {
    Gamma1,
    Gamma2,
    /// Reduced interface where the two matrix blocks meet.
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    #[serde(alias = "left")]
    West,
    #[serde(alias = "right")]
    East,
    #[serde(alias = "bottom")]
    South,
    #[serde(alias = "top")]
    North,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::West, Side::East, Side::South, Side::North];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub role: Subdomain,
    pub x0: f64,
    pub x1: f64,
}

impl Block {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainLayout {
    pub epsilon: f64,
    pub blocks: Vec<Block>,
    /// Tags of the interfaces between consecutive blocks.
    pub interfaces: Vec<InterfaceTag>,
    pub y0: f64,
    pub y1: f64,
}

impl DomainLayout {
    /// Single rectangular block (used for manufactured-solution studies).
    pub fn single_block(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::Geometry(format!("empty block [{x0}, {x1}] x [{y0}, {y1}]")));
        }
        Ok(Self {
            epsilon: 0.0,
            blocks: vec![Block {
                role: Subdomain::M1,
                x0,
                x1,
            }],
            interfaces: Vec::new(),
            y0,
            y1,
        })
    }

    pub fn block(&self, role: Subdomain) -> Option<&Block> {
        self.blocks.iter().find(|b| b.role == role)
    }

    /// x-position of an interface.
    pub fn interface_x(&self, tag: InterfaceTag) -> Option<f64> {
        self.interfaces
            .iter()
            .position(|&t| t == tag)
            .map(|i| self.blocks[i].x1)
    }

    pub fn is_reduced(&self) -> bool {
        self.block(Subdomain::Fracture).is_none()
    }
}

/// Geometry of the `epsilon`-model (`epsilon > 0`) or of the reduced model
/// (`epsilon == 0`) with matrix blocks of the given width.
pub fn build_geometry(regime: &ScalingRegime, matrix_width: f64) -> Result<DomainLayout> {
    let e = regime.epsilon;
    if !(e >= 0.0) || !e.is_finite() {
        return Err(Error::Geometry(format!("fracture width ratio must be >= 0, got {e}")));
    }
    if !(matrix_width > 0.0) {
        return Err(Error::Geometry(format!("matrix width must be positive, got {matrix_width}")));
    }
    let h = 0.5 * e;
    let m1 = Block {
        role: Subdomain::M1,
        x0: -matrix_width - h,
        x1: -h,
    };
    let m2 = Block {
        role: Subdomain::M2,
        x0: h,
        x1: matrix_width + h,
    };
    let (blocks, interfaces) = if e == 0.0 {
        (vec![m1, m2], vec![InterfaceTag::Gamma])
    } else {
        let f = Block {
            role: Subdomain::Fracture,
            x0: -h,
            x1: h,
        };
        (vec![m1, f, m2], vec![InterfaceTag::Gamma1, InterfaceTag::Gamma2])
    };
    Ok(DomainLayout {
        epsilon: e,
        blocks,
        interfaces,
        y0: 0.0,
        y1: 1.0,
    })
}

/// Cell counts for one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockResolution {
    pub nx: usize,
    pub ny: usize,
}

/// Convenience: uniform matrix resolution plus a fracture column count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub matrix_nx: usize,
    pub fracture_nx: usize,
    pub ny: usize,
}

impl Resolution {
    pub fn for_layout(&self, layout: &DomainLayout) -> Vec<BlockResolution> {
        layout
            .blocks
            .iter()
            .map(|b| BlockResolution {
                nx: if b.role == Subdomain::Fracture {
                    self.fracture_nx
                } else {
                    self.matrix_nx
                },
                ny: self.ny,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub center: [f64; 2],
    pub size: [f64; 2],
    pub block: usize,
    pub subdomain: Subdomain,
    /// Column index within the block.
    pub col: usize,
    pub row: usize,
}

impl Cell {
    pub fn area(&self) -> f64 {
        self.size[0] * self.size[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaceKind {
    Interior,
    Interface(InterfaceTag),
    Boundary(Side),
}

/// A cell face. Interior faces point from `owner` (west/south) to `neighbor`
/// (east/north); boundary faces have no neighbour and point outward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub owner: usize,
    pub neighbor: Option<usize>,
    pub kind: FaceKind,
    pub area: f64,
    pub d_owner: f64,
    pub d_neighbor: f64,
    pub center: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub layout: DomainLayout,
    pub resolution: Vec<BlockResolution>,
    pub cells: Vec<Cell>,
    pub faces: Vec<Face>,
    /// Face indices of each cell in `[west, east, south, north]` order.
    pub cell_faces: Vec<[usize; 4]>,
    block_start: Vec<usize>,
    ny: usize,
}

/// Builds a matching grid of uniform rectangles in every block.
pub fn build_grid(layout: &DomainLayout, resolution: &[BlockResolution]) -> Result<Grid> {
    if resolution.len() != layout.blocks.len() {
        return Err(Error::Geometry(format!(
            "{} block resolutions for {} blocks",
            resolution.len(),
            layout.blocks.len()
        )));
    }
    if resolution.iter().any(|r| r.nx == 0 || r.ny == 0) {
        return Err(Error::Geometry("cell counts must be at least 1".into()));
    }
    let ny = resolution[0].ny;
    if resolution.iter().any(|r| r.ny != ny) {
        return Err(Error::Geometry(format!(
            "non-matching grid: row counts {:?} differ between blocks",
            resolution.iter().map(|r| r.ny).collect::<Vec<_>>()
        )));
    }
    let dy = (layout.y1 - layout.y0) / ny as f64;

    let mut cells = Vec::new();
    let mut block_start = Vec::with_capacity(layout.blocks.len() + 1);
    for (b, (block, res)) in layout.blocks.iter().zip(resolution).enumerate() {
        block_start.push(cells.len());
        let dx = block.width() / res.nx as f64;
        for col in 0..res.nx {
            for row in 0..ny {
                cells.push(Cell {
                    center: [
                        block.x0 + (col as f64 + 0.5) * dx,
                        layout.y0 + (row as f64 + 0.5) * dy,
                    ],
                    size: [dx, dy],
                    block: b,
                    subdomain: block.role,
                    col,
                    row,
                });
            }
        }
    }
    block_start.push(cells.len());

    let mut faces = Vec::new();
    let mut cell_faces = vec![[usize::MAX; 4]; cells.len()];
    let nblocks = layout.blocks.len();
    for (b, res) in resolution.iter().enumerate() {
        let start = block_start[b];
        let idx = |col: usize, row: usize| start + col * ny + row;
        let dx = layout.blocks[b].width() / res.nx as f64;
        for col in 0..res.nx {
            for row in 0..ny {
                let c = idx(col, row);
                let [xc, yc] = cells[c].center;
                // west face: boundary, or shared with the previous block (created there)
                if col == 0 && b == 0 {
                    cell_faces[c][0] = faces.len();
                    faces.push(Face {
                        owner: c,
                        neighbor: None,
                        kind: FaceKind::Boundary(Side::West),
                        area: dy,
                        d_owner: 0.5 * dx,
                        d_neighbor: 0.0,
                        center: [xc - 0.5 * dx, yc],
                    });
                }
                // east face
                let east = if col + 1 < res.nx {
                    Some((idx(col + 1, row), FaceKind::Interior, 0.5 * dx))
                } else if b + 1 < nblocks {
                    let nb_dx = layout.blocks[b + 1].width() / resolution[b + 1].nx as f64;
                    Some((
                        block_start[b + 1] + row,
                        FaceKind::Interface(layout.interfaces[b]),
                        0.5 * nb_dx,
                    ))
                } else {
                    None
                };
                cell_faces[c][1] = faces.len();
                match east {
                    Some((n, kind, d_n)) => {
                        cell_faces[n][0] = faces.len();
                        faces.push(Face {
                            owner: c,
                            neighbor: Some(n),
                            kind,
                            area: dy,
                            d_owner: 0.5 * dx,
                            d_neighbor: d_n,
                            center: [xc + 0.5 * dx, yc],
                        });
                    }
                    None => faces.push(Face {
                        owner: c,
                        neighbor: None,
                        kind: FaceKind::Boundary(Side::East),
                        area: dy,
                        d_owner: 0.5 * dx,
                        d_neighbor: 0.0,
                        center: [xc + 0.5 * dx, yc],
                    }),
                }
                if row == 0 {
                    cell_faces[c][2] = faces.len();
                    faces.push(Face {
                        owner: c,
                        neighbor: None,
                        kind: FaceKind::Boundary(Side::South),
                        area: dx,
                        d_owner: 0.5 * dy,
                        d_neighbor: 0.0,
                        center: [xc, yc - 0.5 * dy],
                    });
                }
                cell_faces[c][3] = faces.len();
                if row + 1 < ny {
                    let n = idx(col, row + 1);
                    cell_faces[n][2] = faces.len();
                    faces.push(Face {
                        owner: c,
                        neighbor: Some(n),
                        kind: FaceKind::Interior,
                        area: dx,
                        d_owner: 0.5 * dy,
                        d_neighbor: 0.5 * dy,
                        center: [xc, yc + 0.5 * dy],
                    });
                } else {
                    faces.push(Face {
                        owner: c,
                        neighbor: None,
                        kind: FaceKind::Boundary(Side::North),
                        area: dx,
                        d_owner: 0.5 * dy,
                        d_neighbor: 0.0,
                        center: [xc, yc + 0.5 * dy],
                    });
                }
            }
        }
    }
    debug_assert!(cell_faces.iter().all(|f| f.iter().all(|&i| i != usize::MAX)));
    Ok(Grid {
        layout: layout.clone(),
        resolution: resolution.to_vec(),
        cells,
        faces,
        cell_faces,
        block_start,
        ny,
    })
}

/// Distance-weighted harmonic transmissibility `A / (d_o/k_o + d_n/k_n)`;
/// boundary faces use the owner half-distance only.
pub fn face_transmissibility(face: &Face, k_owner: f64, k_neighbor: f64) -> Result<f64> {
    if !(k_owner > 0.0) || (face.neighbor.is_some() && !(k_neighbor > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "face conductivities must be positive, got {k_owner} and {k_neighbor}"
        )));
    }
    Ok(match face.neighbor {
        Some(_) => face.area / (face.d_owner / k_owner + face.d_neighbor / k_neighbor),
        None => face.area * k_owner / face.d_owner,
    })
}

impl Grid {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dy(&self) -> f64 {
        (self.layout.y1 - self.layout.y0) / self.ny as f64
    }

    /// Index of the block with the given role.
    pub fn block_index(&self, role: Subdomain) -> Option<usize> {
        self.layout.blocks.iter().position(|b| b.role == role)
    }

    pub fn block_cells(&self, block: usize) -> std::ops::Range<usize> {
        self.block_start[block]..self.block_start[block + 1]
    }

    pub fn subdomain_cells(&self, role: Subdomain) -> std::ops::Range<usize> {
        match self.block_index(role) {
            Some(b) => self.block_cells(b),
            None => 0..0,
        }
    }

    /// Cell index from block, column and row.
    pub fn cell_index(&self, block: usize, col: usize, row: usize) -> usize {
        self.block_start[block] + col * self.ny + row
    }

    /// Faces on an interface, ordered by row.
    pub fn interface_faces(&self, tag: InterfaceTag) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.faces.len())
            .filter(|&i| self.faces[i].kind == FaceKind::Interface(tag))
            .collect();
        out.sort_by_key(|&i| self.cells[self.faces[i].owner].row);
        out
    }

    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(Cell::area).sum()
    }

    pub fn max_cell_area(&self) -> f64 {
        self.cells.iter().map(Cell::area).fold(0.0, f64::max)
    }

    /// Structured-text summary of the grid.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[mesh]");
        let _ = writeln!(s, "epsilon = {:.16e}", self.layout.epsilon);
        let _ = writeln!(s, "cells = {}", self.cells.len());
        let _ = writeln!(s, "rows = {}", self.ny);
        let count = |pred: &dyn Fn(&FaceKind) -> bool| self.faces.iter().filter(|f| pred(&f.kind)).count();
        let _ = writeln!(s, "faces_interior = {}", count(&|k| *k == FaceKind::Interior));
        let _ = writeln!(s, "faces_interface = {}", count(&|k| matches!(k, FaceKind::Interface(_))));
        let _ = writeln!(s, "faces_boundary = {}", count(&|k| matches!(k, FaceKind::Boundary(_))));
        for (b, (block, res)) in self.layout.blocks.iter().zip(&self.resolution).enumerate() {
            let _ = writeln!(s, "\n[block.{}]", block.role.label());
            let _ = writeln!(s, "index = {b}");
            let _ = writeln!(s, "nx = {}", res.nx);
            let _ = writeln!(s, "ny = {}", res.ny);
            let _ = writeln!(s, "x = [{:.16e}, {:.16e}]", block.x0, block.x1);
            let _ = writeln!(s, "y = [{:.16e}, {:.16e}]", self.layout.y0, self.layout.y1);
        }
        for tag in &self.layout.interfaces {
            let _ = writeln!(s, "\n[interface.{tag:?}]");
            let _ = writeln!(s, "x = {:.16e}", self.layout.interface_x(*tag).unwrap_or(f64::NAN));
            let _ = writeln!(s, "faces = {}", self.interface_faces(*tag).len());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(eps: f64, res: Resolution) -> Grid {
        let layout = build_geometry(&ScalingRegime::new(eps, -1.0, -1.0), 1.0).unwrap();
        build_grid(&layout, &res.for_layout(&layout)).unwrap()
    }

    #[test]
    fn geometry_extents() {
        let g = build_geometry(&ScalingRegime::new(1.0, 0.0, 0.0), 1.0).unwrap();
        let f = g.block(Subdomain::Fracture).unwrap();
        assert_eq!((f.x0, f.x1), (-0.5, 0.5));

        let g = build_geometry(&ScalingRegime::new(0.1, 0.0, 0.0), 1.0).unwrap();
        let m2 = g.block(Subdomain::M2).unwrap();
        assert!((m2.x0 - 0.05).abs() < 1e-15 && (m2.x1 - 1.05).abs() < 1e-15);

        let g = build_geometry(&ScalingRegime::new(0.0, 0.0, 0.0), 1.0).unwrap();
        assert!(g.is_reduced());
        assert_eq!(g.interfaces, vec![InterfaceTag::Gamma]);
        assert_eq!(g.interface_x(InterfaceTag::Gamma), Some(0.0));
        assert_eq!(g.block(Subdomain::M1).unwrap().x1, 0.0);
        assert_eq!(g.block(Subdomain::M2).unwrap().x0, 0.0);

        let half = build_geometry(&ScalingRegime::new(0.2, 0.0, 0.0), 0.5).unwrap();
        assert!((half.block(Subdomain::M1).unwrap().x0 + 0.6).abs() < 1e-15);
    }

    #[test]
    fn negative_width_rejected() {
        assert!(build_geometry(&ScalingRegime::new(-0.1, 0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn smallest_matching_grid() {
        let g = grid(
            0.5,
            Resolution {
                matrix_nx: 1,
                fracture_nx: 1,
                ny: 1,
            },
        );
        assert_eq!(g.n_cells(), 3);
        assert_eq!(g.interface_faces(InterfaceTag::Gamma1).len(), 1);
        assert_eq!(g.interface_faces(InterfaceTag::Gamma2).len(), 1);
        let f = g.faces[g.interface_faces(InterfaceTag::Gamma1)[0]];
        assert_eq!(g.cells[f.owner].subdomain, Subdomain::M1);
        assert_eq!(g.cells[f.neighbor.unwrap()].subdomain, Subdomain::Fracture);
    }

    #[test]
    fn non_matching_rows_rejected() {
        let layout = build_geometry(&ScalingRegime::new(0.5, 0.0, 0.0), 1.0).unwrap();
        let res = [
            BlockResolution { nx: 2, ny: 4 },
            BlockResolution { nx: 1, ny: 3 },
            BlockResolution { nx: 2, ny: 4 },
        ];
        assert!(matches!(build_grid(&layout, &res), Err(Error::Geometry(_))));
        let res = [BlockResolution { nx: 0, ny: 4 }; 3];
        assert!(build_grid(&layout, &res).is_err());
    }

    #[test]
    fn reference_run_sizes() {
        let g = grid(
            0.01,
            Resolution {
                matrix_nx: 160,
                fracture_nx: 40,
                ny: 160,
            },
        );
        assert_eq!(g.subdomain_cells(Subdomain::Fracture).len(), 40 * 160);
        let f = g.cells[g.subdomain_cells(Subdomain::Fracture).start];
        assert!((f.size[0] - 1.0 / 4000.0).abs() < 1e-18);
        let g1 = grid(
            1.0,
            Resolution {
                matrix_nx: 160,
                fracture_nx: 160,
                ny: 160,
            },
        );
        assert_eq!(g1.n_cells(), 3 * 160 * 160);
    }

    #[test]
    fn area_and_pairing_invariants() {
        let g = grid(
            0.1,
            Resolution {
                matrix_nx: 7,
                fracture_nx: 3,
                ny: 5,
            },
        );
        let total = 2.1;
        assert!((g.total_area() - total).abs() <= 1e-12 * total);
        // every face referenced by exactly the cells it separates
        let mut refs = vec![0usize; g.faces.len()];
        for cf in &g.cell_faces {
            for &f in cf {
                refs[f] += 1;
            }
        }
        for (i, f) in g.faces.iter().enumerate() {
            assert_eq!(refs[i], if f.neighbor.is_some() { 2 } else { 1 });
            if let FaceKind::Interface(tag) = f.kind {
                let (a, b) = (g.cells[f.owner], g.cells[f.neighbor.unwrap()]);
                assert_eq!(a.size[1], b.size[1]);
                assert_eq!(a.row, b.row);
                let expect = match tag {
                    InterfaceTag::Gamma1 => (Subdomain::M1, Subdomain::Fracture),
                    InterfaceTag::Gamma2 => (Subdomain::Fracture, Subdomain::M2),
                    InterfaceTag::Gamma => unreachable!(),
                };
                assert_eq!((a.subdomain, b.subdomain), expect);
            }
        }
    }

    #[test]
    fn refinement_quarters_max_area() {
        let r = Resolution {
            matrix_nx: 4,
            fracture_nx: 2,
            ny: 4,
        };
        let coarse = grid(0.2, r).max_cell_area();
        let fine = grid(
            0.2,
            Resolution {
                matrix_nx: 8,
                fracture_nx: 4,
                ny: 8,
            },
        )
        .max_cell_area();
        assert!((fine - 0.25 * coarse).abs() < 1e-15);
    }

    #[test]
    fn transmissibility_examples() {
        let face = Face {
            owner: 0,
            neighbor: Some(1),
            kind: FaceKind::Interior,
            area: 1.0,
            d_owner: 0.5,
            d_neighbor: 0.5,
            center: [0.0, 0.0],
        };
        assert_eq!(face_transmissibility(&face, 1.0, 1.0).unwrap(), 1.0);
        assert!((face_transmissibility(&face, 2.0, 1.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        let boundary = Face {
            neighbor: None,
            kind: FaceKind::Boundary(Side::West),
            d_neighbor: 0.0,
            ..face
        };
        assert_eq!(face_transmissibility(&boundary, 1.0, 0.0).unwrap(), 2.0);
        assert!(face_transmissibility(&face, 0.0, 1.0).is_err());
        assert!(face_transmissibility(&face, 1.0, -1.0).is_err());
    }

    #[test]
    fn report_lists_blocks() {
        let g = grid(
            0.5,
            Resolution {
                matrix_nx: 1,
                fracture_nx: 1,
                ny: 1,
            },
        );
        let r = g.report();
        assert!(r.contains("cells = 3"));
        assert!(r.contains("[block.f]"));
        assert!(r.contains("faces_interface = 2"));
    }
}
