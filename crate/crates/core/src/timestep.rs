//! Implicit Euler stepping with a modified Picard linearisation.
//!
//! A problem only has to assemble the linear system obtained by expanding the
//! storage term around the current iterate (`S(it) + S'(it) (x - it)`) with
//! conductivities frozen at that iterate. The driver iterates until the
//! max-norm of the head update drops below the tolerance and the water lost by
//! the storage linearisation is negligible, or until every row of the
//! nonlinear residual sits at its own round-off level (which lets linear
//! problems finish after a single solve).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CscSystem, LinearSolverKind, SolveFailure, SparseSolver};

/// A fully implicit problem linearised around an iterate.
pub trait ImplicitProblem {
    fn n_dofs(&self) -> usize;

    /// System for the unknowns at `t_new`, given the previous level and the
    /// linearisation point.
    fn assemble(&self, prev: &[f64], lin: &[f64], t_new: f64) -> Result<CscSystem>;

    /// Relative mass defect of accepting `x` when the storage was linearised
    /// around `lin`: `sum (S(x) - S(lin) - S'(lin)(x - lin))` weighted like the
    /// storage term, over `sum |S(x) - S(prev)|`.
    fn storage_defect(&self, _prev: &[f64], _lin: &[f64], _x: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Bound on [`ImplicitProblem::storage_defect`] at acceptance.
    #[serde(default = "default_mass_tol")]
    pub mass_tol: f64,
    #[serde(default)]
    pub linear_solver: LinearSolverKind,
}

fn default_mass_tol() -> f64 {
    1e-9
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iters: 100,
            mass_tol: default_mass_tol(),
            linear_solver: LinearSolverKind::Direct,
        }
    }
}

impl PicardSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.mass_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidParameter(format!(
                "Picard tolerances must be positive and max iterations at least 1, got {}, {} and {}",
                self.tol, self.mass_tol, self.max_iters
            )));
        }
        Ok(())
    }
}

/// Outcome of one converged time step.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub solution: Vec<f64>,
    /// Iterate the accepted solution was linearised around.
    pub linearization: Vec<f64>,
    /// Number of linear solves.
    pub iterations: usize,
    /// Max-norm of the last head update.
    pub update: f64,
    /// Max-norm of the nonlinear residual at the accepted solution.
    pub residual: f64,
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Whether every row of the residual sits at the rounding level of that row,
/// `64 u (sum_j |a_ij x_j| + sum_k |b_ik|)`, so that another Picard update could not
/// be told apart from the linear solver's own rounding. The test is per row:
/// a global scale would be set by the stiffest rows and hide real residuals
/// elsewhere.
fn at_roundoff(sys: &CscSystem, x: &[f64], residual: &[f64]) -> bool {
    let scale = sys.abs_row_sums(x);
    residual
        .iter()
        .zip(&scale)
        .zip(sys.rhs_magnitude())
        .all(|((r, s), b)| r.abs() <= 64.0 * f64::EPSILON * (s + b))
}

/// One implicit Euler step from `prev` to `t_new`.
pub fn picard_solve<P: ImplicitProblem + ?Sized>(
    problem: &P,
    prev: &[f64],
    t_new: f64,
    step: usize,
    settings: &PicardSettings,
    solver: &mut SparseSolver,
) -> Result<PicardOutcome> {
    let mut iterate = prev.to_vec();
    let mut lin = prev.to_vec();
    let mut history = Vec::new();
    let mut last_update = f64::INFINITY;
    for k in 0..=settings.max_iters {
        let sys = problem.assemble(prev, &iterate, t_new)?;
        let r = sys.residual(&iterate);
        let residual = max_abs(r.iter().copied());
        if !residual.is_finite() {
            return Err(Error::NonFinite { step, iteration: k });
        }
        let accepted = k > 0
            && ((last_update <= settings.tol && problem.storage_defect(prev, &lin, &iterate) <= settings.mass_tol)
                || at_roundoff(&sys, &iterate, &r));
        if accepted {
            return Ok(PicardOutcome {
                solution: iterate,
                linearization: lin,
                iterations: k,
                update: last_update,
                residual,
            });
        }
        if k == settings.max_iters {
            break;
        }
        let next = solver.solve(&sys).map_err(|e| match e {
            SolveFailure::NonFinite => Error::NonFinite { step, iteration: k + 1 },
            SolveFailure::Singular | SolveFailure::NotConverged => Error::Singular { step, iteration: k + 1 },
        })?;
        last_update = max_abs(next.iter().zip(&iterate).map(|(a, b)| a - b));
        history.push(last_update);
        lin = std::mem::replace(&mut iterate, next);
    }
    Err(Error::NonConvergence { step, history })
}

/// Per-step bookkeeping shared by all models.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepStats {
    pub step: usize,
    pub time: f64,
    pub iterations: usize,
    pub update: f64,
    pub residual: f64,
}

/// Discrete water budget of one step, as rates per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MassBalance {
    /// `sum sigma (S(psi^k) - S(psi^{k-1})) |cell| / dt`
    pub storage_rate: f64,
    /// `sum f |cell|`
    pub source_rate: f64,
    /// Net outward flux through the external boundary.
    pub outflow: f64,
    /// Sum of the magnitudes of all terms, used as the relative scale.
    pub scale: f64,
}

impl MassBalance {
    pub fn add_storage(&mut self, v: f64) {
        self.storage_rate += v;
        self.scale += v.abs();
    }

    pub fn add_source(&mut self, v: f64) {
        self.source_rate += v;
        self.scale += v.abs();
    }

    pub fn add_outflow(&mut self, v: f64) {
        self.outflow += v;
        self.scale += v.abs();
    }

    pub fn imbalance(&self) -> f64 {
        self.storage_rate - self.source_rate + self.outflow
    }

    /// Imbalance relative to the budget terms (0 for a budget of zeros).
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.imbalance().abs() / self.scale
        } else {
            0.0
        }
    }
}

/// Runs `n_steps` implicit Euler steps of size `dt` from `initial`, calling
/// `on_step(step, time, outcome)` after every accepted step.
pub fn run_steps<P, F>(
    problem: &P,
    initial: Vec<f64>,
    dt: f64,
    n_steps: usize,
    settings: &PicardSettings,
    mut on_step: F,
) -> Result<()>
where
    P: ImplicitProblem + ?Sized,
    F: FnMut(usize, f64, &[f64], &PicardOutcome) -> Result<()>,
{
    settings.validate()?;
    let mut solver = SparseSolver::new(settings.linear_solver);
    let mut prev = initial;
    for step in 1..=n_steps {
        let t = step as f64 * dt;
        let out = picard_solve(problem, &prev, t, step, settings, &mut solver)?;
        on_step(step, t, &prev, &out)?;
        prev = out.solution;
    }
    Ok(())
}

/// Number of steps for `end_time / dt`, rejecting horizons that are not a
/// whole number of steps (to within `dt / 2`).
pub fn step_count(end_time: f64, dt: f64) -> Result<usize> {
    if !(end_time > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "end time and time step must be positive, got {end_time} and {dt}"
        )));
    }
    let n = (end_time / dt).round();
    if (n * dt - end_time).abs() > 0.5 * dt || n < 1.0 {
        return Err(Error::InvalidParameter(format!("end time {end_time} is not reachable with step {dt}")));
    }
    Ok(n as usize)
}
