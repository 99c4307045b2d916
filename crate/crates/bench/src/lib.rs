//! Fixtures shared by the benchmarks: the reference infiltration setup at
//! reduced resolution, so that a single iteration stays in the millisecond
//! range.

use fracflow::effective::{EffectiveProblem, EffectiveVariant};
use fracflow::fullmodel::{epsilon_problem, FlowProblem, SimulationConfig};
use fracflow::Result;

/// Reference setup with `n x n` cells per matrix block and `fracture_nx`
/// fracture columns.
pub fn reference(epsilon: f64, n: usize, fracture_nx: usize) -> Result<SimulationConfig> {
    let mut c = SimulationConfig::reference(epsilon, fracture_nx)?;
    c.resolution.matrix_nx = n;
    c.resolution.ny = n;
    Ok(c)
}

/// `epsilon`-model discretisation and its initial state.
pub fn epsilon_fixture(epsilon: f64, n: usize, fracture_nx: usize) -> Result<(SimulationConfig, FlowProblem, Vec<f64>)> {
    let config = reference(epsilon, n, fracture_nx)?;
    let problem = epsilon_problem(&config)?;
    let x0 = problem.initial_state(&config.initial);
    Ok((config, problem, x0))
}

/// Variant-I discretisation and its initial state.
pub fn effective_fixture(n: usize) -> Result<(SimulationConfig, EffectiveProblem, Vec<f64>)> {
    let config = reference(0.0, n, 1)?;
    let problem = EffectiveProblem::new(&config, EffectiveVariant::I)?;
    let x0 = problem.initial_state(&config);
    Ok((config, problem, x0))
}
