//! Averaging and error operators of the upscaling study.

use fracflow::fullmodel::SimulationConfig;
use fracflow::mesh::{Grid, Subdomain};
use fracflow::upscale::{column_flatness, l2_error, matrix_error, x_average, y_average};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One matrix column per block, `fracture_nx` fracture columns, `ny` rows.
fn grid(epsilon: f64, fracture_nx: usize, ny: usize) -> Grid {
    let mut c = SimulationConfig::reference(epsilon, fracture_nx).unwrap();
    c.resolution.matrix_nx = 1;
    c.resolution.ny = ny;
    c.grid().unwrap()
}

fn fill_fracture(g: &Grid, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let block = g.block_index(Subdomain::Fracture).unwrap();
    let mut v = vec![f64::NAN; g.n_cells()];
    for i in g.block_cells(block) {
        v[i] = f(g.cells[i].col, g.cells[i].row);
    }
    v
}

#[test]
fn x_average_of_two_by_two_block() {
    let g = grid(0.1, 2, 2);
    // column 0 holds {1, 2}, column 1 holds {3, 4} (bottom to top)
    let v = fill_fracture(&g, |col, row| (2 * col + row + 1) as f64);
    let avg = x_average(&g, &v).unwrap();
    assert!((avg[0] - 2.0).abs() < 1e-14 && (avg[1] - 3.0).abs() < 1e-14, "{avg:?}");
}

#[test]
fn y_average_is_exact_for_linear_profiles() {
    // midpoint samples of 2 + 3y on [0, 1] over a non-uniform partition
    let edges = [0.0, 0.1, 0.35, 0.4, 0.8, 1.0];
    let lengths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    let ubar: Vec<f64> = edges.windows(2).map(|w| 2.0 + 3.0 * 0.5 * (w[0] + w[1])).collect();
    assert!((y_average(&ubar, &lengths).unwrap() - 3.5).abs() < 1e-15);
}

#[test]
fn y_average_linearity_and_jensen() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 37;
    let lengths: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.2)).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
    let lhs = y_average(&combo, &lengths).unwrap();
    let rhs = 2.0 * y_average(&a, &lengths).unwrap() - 0.5 * y_average(&b, &lengths).unwrap();
    assert!((lhs - rhs).abs() < 1e-13);
    let squares: Vec<f64> = a.iter().map(|x| x * x).collect();
    assert!(y_average(&squares, &lengths).unwrap() >= y_average(&a, &lengths).unwrap().powi(2));
    assert!(y_average(&a, &lengths[..3]).is_err());
}

#[test]
fn l2_error_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 200;
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.1)).collect();
    let mut direct = 0.0;
    for i in 0..n {
        direct += w[i] * (a[i] - b[i]) * (a[i] - b[i]);
    }
    assert!((l2_error(&a, &b, &w).unwrap() - direct.sqrt()).abs() < 1e-14);
    assert_eq!(l2_error(&a, &a, &w).unwrap(), 0.0);
}

#[test]
fn flatness_of_a_linear_cross_profile() {
    // u = col across three columns, constant along y: the outer columns sit
    // one unit from the mean on every row of length 1/4
    let g = grid(0.1, 3, 4);
    let v = fill_fracture(&g, |col, _| col as f64);
    assert!((column_flatness(&g, &v, -0.5).unwrap() - 1.0).abs() < 1e-14);
    assert_eq!(column_flatness(&g, &v, 0.0).unwrap(), 0.0);
    assert!((column_flatness(&g, &v, 0.5).unwrap() - 1.0).abs() < 1e-14);
    let flat = fill_fracture(&g, |_, row| row as f64);
    assert!(column_flatness(&g, &flat, 0.5).unwrap() < 1e-14);
}

#[test]
fn matrix_error_uses_the_rigid_shift() {
    let (a, b) = (grid(0.1, 2, 3), grid(0.0, 1, 3));
    let fa: Vec<f64> = a.cells.iter().map(|c| c.center[1]).collect();
    let fb: Vec<f64> = b.cells.iter().map(|c| c.center[1] + 0.5).collect();
    for role in [Subdomain::M1, Subdomain::M2] {
        // each block has area 1: the error of a constant offset is the offset
        assert!((matrix_error(&a, &fa, &b, &fb, role).unwrap() - 0.5).abs() < 1e-14);
    }
    let coarser = grid(0.0, 1, 2);
    let fc = vec![0.0; coarser.n_cells()];
    assert!(matrix_error(&a, &fa, &coarser, &fc, Subdomain::M1).is_err());
}
