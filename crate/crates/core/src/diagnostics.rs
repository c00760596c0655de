//! Checks of the analytical properties on computed trajectories: energy
//! balance, constraint membership, series tails, contraction of differences
//! and convergence in `m` and `dt`.

use nalgebra::DVector;
use serde::Serialize;

use crate::coupling::{compose_field, Coupling};
use crate::error::{Error, Result};
use crate::evolution::{GalerkinState, Trajectory};
use crate::fem::SolidOperators;
use crate::linalg::resized;
use crate::scenario::{Problem, Scenario, SharedBases};

/// One named pass/fail check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
}

impl Check {
    /// Passes when `measured <= threshold`.
    pub fn at_most(name: &str, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.to_string(),
            pass: measured <= threshold,
            measured,
            threshold,
        }
    }

    /// Passes when `measured >= threshold`.
    pub fn at_least(name: &str, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.to_string(),
            pass: measured >= threshold,
            measured,
            threshold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.checks).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub t: f64,
    /// `rho_f |alpha|^2`
    pub kinetic: f64,
    /// `drho alpha^T C alpha`
    pub solid_excess: f64,
    /// `kappa sum_r beta_r^2 d_r`
    pub elastic: f64,
    pub total: f64,
    /// `2 int a(u, u)` accumulated by the scheme.
    pub dissipation: f64,
    pub initial: f64,
}

impl EnergyReport {
    /// `E(t) + dissipation(t) - E(0)`; nonpositive when the estimate holds exactly.
    pub fn balance_excess(&self) -> f64 {
        self.total + self.dissipation - self.initial
    }
}

pub fn energy_terms(
    traj: &Trajectory,
    state: &GalerkinState,
    c: &nalgebra::DMatrix<f64>,
) -> (f64, f64, f64) {
    let p = &traj.params;
    let kinetic = p.rho_f * state.alpha.norm_squared();
    let solid_excess = p.delta_rho() * state.alpha.dot(&(c * &state.alpha));
    let elastic = p.kappa
        * state
            .beta
            .component_mul(&state.beta)
            .dot(&traj.elastic_weights);
    (kinetic, solid_excess, elastic)
}

pub fn energy(traj: &Trajectory) -> Vec<EnergyReport> {
    let mut out = Vec::with_capacity(traj.len());
    let mut initial = 0.0;
    for (k, (state, mats)) in traj.states.iter().zip(&traj.matrices).enumerate() {
        let (kinetic, solid_excess, elastic) = energy_terms(traj, state, &mats.c);
        let total = kinetic + solid_excess + elastic;
        if k == 0 {
            initial = total;
        }
        out.push(EnergyReport {
            t: state.t,
            kinetic,
            solid_excess,
            elastic,
            total,
            dissipation: traj.dissipation[k],
            initial,
        });
    }
    out
}

pub fn max_balance_excess(reports: &[EnergyReport]) -> f64 {
    reports
        .iter()
        .map(EnergyReport::balance_excess)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest increase of the total energy between consecutive output times.
pub fn max_energy_increase(reports: &[EnergyReport]) -> f64 {
    reports
        .windows(2)
        .map(|w| w[1].total - w[0].total)
        .fold(0.0, f64::max)
}

/// `c(phi_i(t), u o X(t) - w(t))` for `i <= m` where `u = sum alpha_u psi_j` is composed
/// as one field and `w = sum alpha_w phi_j` is built from the composed modes.
pub fn constraint_residual_pair(
    coupling: &Coupling,
    solid_ops: &SolidOperators,
    t: f64,
    alpha_u: &DVector<f64>,
    alpha_w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let u = &coupling.fluid_modes * alpha_u;
    let composed_u = coupling.compose(t, &u)?;
    let modes = coupling.composed_modes(t)?;
    let w = &modes.phi * alpha_w;
    let diff = composed_u - w;
    Ok(modes.phi.transpose() * (&solid_ops.c_form * diff))
}

/// Largest constraint residual over the output times of a trajectory.
pub fn constraint_residual(
    traj: &Trajectory,
    coupling: &Coupling,
    solid_ops: &SolidOperators,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for state in &traj.states {
        let r = constraint_residual_pair(coupling, solid_ops, state.t, &state.alpha, &state.alpha)?;
        worst = worst.max(r.amax());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesTailRow {
    pub t: f64,
    pub r: usize,
    /// `sum_{r' <= r} delta_jr'^2 c_r'`
    pub weighted: f64,
    /// `sum delta_jr'^2`
    pub plain: f64,
    /// `sum delta'_jr'^2 c_r'`
    pub derivative: f64,
    /// `|psi_j o X(t)|^2_{0,B}` by quadrature at the Gauss points of B.
    pub oracle: f64,
}

impl SeriesTailRow {
    pub fn relative_gap(&self) -> f64 {
        if self.oracle == 0.0 {
            self.weighted.abs()
        } else {
            (self.oracle - self.weighted).abs() / self.oracle
        }
    }
}

/// Partial sums of the Parseval-type series of mode `j` (0-based) for each truncation in `r_list`.
pub fn series_tail(
    coupling: &Coupling,
    j: usize,
    r_list: &[usize],
    times: &[f64],
) -> Result<Vec<SeriesTailRow>> {
    let solid = &coupling.solid_basis;
    let psi = coupling.fluid_modes.column(j).into_owned();
    let quad = &coupling.solid.grid.quad_points;
    let weights = &coupling.solid.grid.quad_weights;
    let mut rows = Vec::new();
    for &t in times {
        let coeffs = coupling.coefficients(t)?;
        let values = compose_field(&coupling.fluid, &psi, &coupling.motion, t, quad)?;
        let oracle: f64 = values
            .iter()
            .zip(weights)
            .map(|(v, w)| w * v.norm_squared())
            .sum();
        for &r in r_list {
            if r > coupling.r() {
                return Err(Error::TooManyModes {
                    requested: r,
                    available: coupling.r(),
                });
            }
            let mut row = SeriesTailRow {
                t,
                r,
                weighted: 0.0,
                plain: 0.0,
                derivative: 0.0,
                oracle,
            };
            for k in 0..r {
                let d = coeffs.delta[(j, k)];
                let dd = coeffs.delta_dot[(j, k)];
                row.weighted += d * d * solid.c[k];
                row.plain += d * d;
                row.derivative += dd * dd * solid.c[k];
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifferenceReport {
    pub times: Vec<f64>,
    /// `rho_f |a|^2 + drho a^T C a + kappa sum b_r^2 d_r` for the coefficient differences.
    pub energies: Vec<f64>,
    pub max_increase: f64,
    pub max_abs_difference: f64,
}

impl DifferenceReport {
    pub fn nonincreasing(&self, tol: f64) -> bool {
        self.max_increase <= tol
    }
}

pub fn difference_decay(a: &Trajectory, b: &Trajectory) -> Result<DifferenceReport> {
    if a.len() != b.len() || a.params != b.params || a.lambda_f != b.lambda_f {
        return Err(Error::ScenarioMismatch(
            "trajectories differ in parameters, basis or output times".into(),
        ));
    }
    let mut times = Vec::with_capacity(a.len());
    let mut energies = Vec::with_capacity(a.len());
    let mut max_abs_difference: f64 = 0.0;
    for ((sa, sb), mats) in a.states.iter().zip(&b.states).zip(&a.matrices) {
        if sa.t != sb.t {
            return Err(Error::ScenarioMismatch(format!(
                "output times differ ({} vs {})",
                sa.t, sb.t
            )));
        }
        let diff = GalerkinState {
            t: sa.t,
            alpha: &sa.alpha - &sb.alpha,
            beta: &sa.beta - &sb.beta,
        };
        max_abs_difference = max_abs_difference
            .max(diff.alpha.amax())
            .max(diff.beta.amax());
        let (k, s, e) = energy_terms(a, &diff, &mats.c);
        times.push(sa.t);
        energies.push(k + s + e);
    }
    let max_increase = energies.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(DifferenceReport {
        times,
        energies,
        max_increase,
        max_abs_difference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyRow {
    pub m_coarse: usize,
    pub m_fine: usize,
    /// `|u^{m_fine}(T) - u^{m_coarse}(T)|_{0,Omega}`
    pub fluid_difference: f64,
    /// `|grad (X^{m_fine}(T) - X^{m_coarse}(T))|_{0,B}`
    pub elastic_difference: f64,
}

/// Terminal-state differences between consecutive Galerkin dimensions on shared grids and `R`.
pub fn convergence_study(scenario: &Scenario, m_list: &[usize]) -> Result<Vec<CauchyRow>> {
    let max_m = m_list.iter().copied().max().unwrap_or(0);
    if max_m == 0 {
        return Ok(Vec::new());
    }
    let bases = SharedBases::build(scenario, max_m)?;
    convergence_study_with(scenario, &bases, m_list)
}

pub fn convergence_study_with(
    scenario: &Scenario,
    bases: &SharedBases,
    m_list: &[usize],
) -> Result<Vec<CauchyRow>> {
    let max_m = m_list.iter().copied().max().unwrap_or(0);
    let r = scenario.discretization.solid_modes().max(max_m);
    let mut finals = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let mut s = scenario.clone();
        s.discretization.m = m;
        s.discretization.r = Some(r);
        let problem = Problem::from_bases(&s, bases)?;
        finals.push(problem.run()?.last().clone());
    }
    let d = bases.solid_basis.d.rows(0, max_m).into_owned();
    Ok(m_list
        .windows(2)
        .zip(finals.windows(2))
        .map(|(ms, states)| {
            let a = resized(&states[0].alpha, max_m) - resized(&states[1].alpha, max_m);
            let b = resized(&states[0].beta, max_m) - resized(&states[1].beta, max_m);
            CauchyRow {
                m_coarse: ms[0],
                m_fine: ms[1],
                fluid_difference: a.norm(),
                elastic_difference: b.component_mul(&b).dot(&d).max(0.0).sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub dt: f64,
    /// `|y_dt(T) - y_next(T)|` against the next entry of the list.
    pub difference: Option<f64>,
    /// Ratio of this difference to the next one.
    pub ratio: Option<f64>,
}

/// Terminal states for each `dt`, differences between consecutive entries and their ratios.
pub fn dt_self_convergence(problem: &Problem, dt_list: &[f64]) -> Result<Vec<StepRow>> {
    let mut finals = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let p = problem.with_dt(dt)?;
        finals.push(p.run()?.last().clone());
    }
    let diffs: Vec<f64> = finals
        .windows(2)
        .map(|w| {
            let a = (&w[0].alpha - &w[1].alpha).norm_squared();
            let b = (&w[0].beta - &w[1].beta).norm_squared();
            (a + b).sqrt()
        })
        .collect();
    Ok(dt_list
        .iter()
        .enumerate()
        .map(|(k, &dt)| {
            let difference = diffs.get(k).copied();
            let ratio = match (difference, diffs.get(k + 1)) {
                (Some(a), Some(&b)) if b > 0.0 => Some(a / b),
                _ => None,
            };
            StepRow {
                dt,
                difference,
                ratio,
            }
        })
        .collect())
}
