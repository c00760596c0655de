//! Default checks for a completed run and the output tables derived from it.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    constraint_residual, energy, max_balance_excess, Check, EnergyReport, VerificationReport,
};
use crate::error::Result;
use crate::evolution::{GalerkinState, Trajectory, MASS_CORRECTION_FLOOR};
use crate::linalg::min_symmetric_eigenvalue;
use crate::recovery::{recover_trajectory, PressureSolver, RecoveryFields};
use crate::scenario::Problem;

/// Thresholds of the default checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub energy_balance: f64,
    pub constraint: f64,
    pub c_psd: f64,
    pub split: f64,
    pub divergence_free: f64,
    pub pressure_mean: f64,
    /// Largest entrywise gap between stored and recomputed tables.
    pub reproduction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            energy_balance: 1e-8,
            constraint: 1e-9,
            c_psd: 1e-10,
            split: 1e-9,
            divergence_free: 1e-8,
            pressure_mean: 1e-10,
            reproduction: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunAnalysis {
    pub energy: Vec<EnergyReport>,
    pub recovery: Vec<RecoveryFields>,
    pub report: VerificationReport,
}

/// Energy, recovery and the default checks for `traj`.
///
/// The states may come from a stored file; the matrices and dissipation are
/// taken from `traj` as computed.
pub fn analyze(problem: &Problem, traj: &Trajectory, tol: &Tolerances) -> Result<RunAnalysis> {
    let mut report = VerificationReport::default();
    let finite = traj.states.iter().all(GalerkinState::is_finite);
    report.push(Check::at_most(
        "finite_state",
        if finite { 0.0 } else { 1.0 },
        0.0,
    ));

    let energy = energy(traj);
    if traj.params.delta_rho() >= 0.0 {
        report.push(Check::at_most(
            "energy_balance",
            max_balance_excess(&energy),
            tol.energy_balance,
        ));
    }

    let constraint = constraint_residual(traj, problem.coupling(), &problem.solid_ops)?;
    report.push(Check::at_most(
        "constraint_residual",
        constraint,
        tol.constraint,
    ));

    let c_min = traj
        .matrices
        .iter()
        .map(|m| m.c_min_eigenvalue())
        .fold(f64::INFINITY, f64::min);
    report.push(Check::at_least("c_psd", c_min, -tol.c_psd));

    let mass_min = traj
        .matrices
        .iter()
        .map(|m| {
            let n = m.c.nrows();
            let mass = nalgebra::DMatrix::identity(n, n) * traj.params.rho_f
                + &m.c * traj.params.delta_rho();
            min_symmetric_eigenvalue(&mass)
        })
        .fold(f64::INFINITY, f64::min);
    report.push(Check::at_least(
        "mass_correction",
        mass_min,
        MASS_CORRECTION_FLOOR,
    ));

    let solver = PressureSolver::new(&problem.fluid_ops)?;
    let recovery = recover_trajectory(
        traj,
        problem.coupling(),
        &problem.fluid_ops,
        &problem.solid_ops,
        &solver,
    )?;
    let worst = |f: fn(&RecoveryFields) -> f64| recovery.iter().map(f).fold(0.0, f64::max);
    report.push(Check::at_most(
        "split_residual",
        worst(|r| r.split_residual),
        tol.split,
    ));
    report.push(Check::at_most(
        "divergence_free_residual",
        worst(|r| r.divergence_free_residual),
        tol.divergence_free,
    ));
    report.push(Check::at_most(
        "pressure_mean",
        worst(|r| r.pressure_mean.abs()),
        tol.pressure_mean,
    ));

    Ok(RunAnalysis {
        energy,
        recovery,
        report,
    })
}

/// Largest absolute entrywise difference, or infinity when shapes differ.
pub fn max_table_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut gap: f64 = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        if ra.len() != rb.len() {
            return f64::INFINITY;
        }
        for (x, y) in ra.iter().zip(rb) {
            let d = (x - y).abs();
            if d.is_nan() {
                return f64::INFINITY;
            }
            gap = gap.max(d);
        }
    }
    gap
}
