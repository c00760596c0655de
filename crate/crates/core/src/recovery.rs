//! Post-processing of a trajectory: the Lagrange multiplier on B, the
//! pressure on Omega, and the residuals of the split equations.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CscMatrix, CsrMatrix};
use serde::Serialize;

use crate::coupling::{ComposedModes, Coupling, CouplingCoefficients};
use crate::error::{Error, Result};
use crate::evolution::{ode_rhs, GalerkinState, PhysicalParams, Trajectory};
use crate::fem::{FluidOperators, SolidOperators};
use crate::linalg::{sorted_symmetric_eigen, symmetrize};

/// Inf-sup level below which weak pressure modes are filtered out.
pub const INF_SUP_FLOOR: f64 = 1e-3;

/// Relative eigenvalue level identifying the exact kernel of the pressure Schur complement.
const KERNEL_TOL: f64 = 1e-10;

/// `l_r = drho sum_j (alpha'_j delta_jr + alpha_j delta'_jr) c_r + kappa beta_r d_r`,
/// the coefficients of the multiplier in the c-orthonormal solid modes.
pub fn recover_multiplier(
    state: &GalerkinState,
    alpha_dot: &DVector<f64>,
    coeffs: &CouplingCoefficients,
    coupling: &Coupling,
    params: &PhysicalParams,
) -> DVector<f64> {
    let solid = &coupling.solid_basis;
    let inertia =
        coeffs.delta.transpose() * alpha_dot + coeffs.delta_dot.transpose() * &state.alpha;
    DVector::from_fn(coupling.r(), |r, _| {
        let elastic = if r < state.beta.len() {
            params.kappa * state.beta[r] * solid.d[r]
        } else {
            0.0
        };
        params.delta_rho() * inertia[r] * solid.c[r] + elastic
    })
}

/// Nodal `d w / dt = sum_j (alpha'_j phi_j + alpha_j phi'_j)` on B.
pub fn solid_acceleration(
    state: &GalerkinState,
    alpha_dot: &DVector<f64>,
    composed: &ComposedModes,
) -> DVector<f64> {
    &composed.phi * alpha_dot + &composed.phi_dot * &state.alpha
}

/// Right-hand side of the multiplier equation tested against each `chi_r`.
fn multiplier_load(
    state: &GalerkinState,
    alpha_dot: &DVector<f64>,
    composed: &ComposedModes,
    coupling: &Coupling,
    solid_ops: &SolidOperators,
    params: &PhysicalParams,
) -> DVector<f64> {
    let chi = &coupling.solid_basis.modes;
    let acc = solid_acceleration(state, alpha_dot, composed);
    let x = chi.columns(0, state.beta.len()) * &state.beta;
    chi.transpose() * (&solid_ops.mass * acc) * params.delta_rho()
        + chi.transpose() * (&solid_ops.stiffness * x) * params.kappa
}

/// Multiplier coefficients from a dense solve with the c-Gram matrix of the solid modes.
pub fn multiplier_by_gram_solve(
    state: &GalerkinState,
    alpha_dot: &DVector<f64>,
    composed: &ComposedModes,
    coupling: &Coupling,
    solid_ops: &SolidOperators,
    params: &PhysicalParams,
) -> Result<DVector<f64>> {
    let chi = &coupling.solid_basis.modes;
    let gram = chi.transpose() * (&solid_ops.c_form * chi);
    let load = multiplier_load(state, alpha_dot, composed, coupling, solid_ops, params);
    gram.cholesky()
        .map(|c| c.solve(&load))
        .ok_or_else(|| Error::LinearSolve("c-Gram matrix of the solid modes is singular".into()))
}

/// `drho (dw/dt, chi_r)_B + kappa (grad X, grad chi_r)_B - c(lambda, chi_r)` for every `r <= R`.
pub fn split_residual(
    state: &GalerkinState,
    alpha_dot: &DVector<f64>,
    multiplier: &DVector<f64>,
    composed: &ComposedModes,
    coupling: &Coupling,
    solid_ops: &SolidOperators,
    params: &PhysicalParams,
) -> DVector<f64> {
    let chi = &coupling.solid_basis.modes;
    let lambda = chi * multiplier;
    multiplier_load(state, alpha_dot, composed, coupling, solid_ops, params)
        - chi.transpose() * (&solid_ops.c_form * lambda)
}

/// `l(v) = rho_f (du/dt, v) + a(u, v) + c(lambda, v o X(t))` for every velocity dof.
#[allow(clippy::too_many_arguments)]
pub fn pressure_load(
    state: &GalerkinState,
    alpha_dot: &DVector<f64>,
    multiplier: &DVector<f64>,
    composition: &CsrMatrix<f64>,
    coupling: &Coupling,
    fluid_ops: &FluidOperators,
    solid_ops: &SolidOperators,
    params: &PhysicalParams,
) -> DVector<f64> {
    let psi = &coupling.fluid_modes;
    let u = psi * &state.alpha;
    let u_dot = psi * alpha_dot;
    let lambda = &coupling.solid_basis.modes * multiplier;
    let coupling_term =
        composition.transpose() * coupling.solve_mass(&(&solid_ops.c_form * lambda));
    (&fluid_ops.mass * u_dot) * params.rho_f + &fluid_ops.viscous * u + coupling_term
}

#[derive(Debug, Clone)]
pub struct PressureSolution {
    /// Cell values, zero mean.
    pub p: DVector<f64>,
    /// `sqrt(r^T A^{-1} r)` for `r = l - B^T p`.
    pub dual_residual: f64,
}

/// Solves `(p, div v) = l(v)` in the least-squares sense of the `A^{-1}` dual norm,
/// through the pressure Schur complement `S = B A^{-1} B^T` restricted to its range.
pub struct PressureSolver {
    divergence: CsrMatrix<f64>,
    viscous: CscCholesky<f64>,
    /// `D^{-1/2}` with `D` the cell areas.
    inv_sqrt_area: DVector<f64>,
    area: DVector<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    /// Eigenpairs below this index are discarded.
    first_kept: usize,
    pub kernel_dim: usize,
    /// Square root of the smallest nonzero eigenvalue of `D^{-1/2} S D^{-1/2}`.
    pub beta_h: f64,
    /// Set when weak modes with `beta < INF_SUP_FLOOR` were filtered as well.
    pub stabilized: bool,
    pub min_kept_eigenvalue: f64,
}

impl std::fmt::Debug for PressureSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PressureSolver")
            .field("kernel_dim", &self.kernel_dim)
            .field("beta_h", &self.beta_h)
            .field("stabilized", &self.stabilized)
            .finish()
    }
}

impl PressureSolver {
    pub fn new(fluid_ops: &FluidOperators) -> Result<Self> {
        let viscous = CscCholesky::factor(&CscMatrix::from(&fluid_ops.viscous))
            .map_err(|e| Error::LinearSolve(format!("viscous matrix: {e:?}")))?;
        let bt = DMatrix::from(&fluid_ops.divergence.transpose());
        let w = viscous.solve(&bt);
        let area = fluid_ops.pressure_mass.clone();
        let inv_sqrt_area = area.map(|a| 1.0 / a.sqrt());
        let scale = DMatrix::from_diagonal(&inv_sqrt_area);
        let mut s = &scale * (bt.transpose() * w) * &scale;
        symmetrize(&mut s);
        let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(s);
        let top = eigenvalues.amax();
        let kernel_dim = eigenvalues
            .iter()
            .take_while(|&&v| v <= KERNEL_TOL * top)
            .count();
        if kernel_dim >= eigenvalues.len() {
            return Err(Error::LinearSolve(
                "pressure Schur complement vanishes".into(),
            ));
        }
        let beta_h = eigenvalues[kernel_dim].max(0.0).sqrt();
        let weak = eigenvalues
            .iter()
            .skip(kernel_dim)
            .take_while(|&&v| v < INF_SUP_FLOOR * INF_SUP_FLOOR)
            .count();
        let first_kept = kernel_dim + weak;
        if first_kept >= eigenvalues.len() {
            return Err(Error::LinearSolve(
                "no pressure mode above the inf-sup floor".into(),
            ));
        }
        Ok(PressureSolver {
            divergence: fluid_ops.divergence.clone(),
            viscous,
            inv_sqrt_area,
            area,
            min_kept_eigenvalue: eigenvalues[first_kept],
            eigenvalues,
            eigenvectors,
            first_kept,
            kernel_dim,
            beta_h,
            stabilized: weak > 0,
        })
    }

    pub fn solve(&self, load: &DVector<f64>) -> PressureSolution {
        let g = &self.divergence * self.viscous.solve(load).column(0);
        let g = g.component_mul(&self.inv_sqrt_area);
        let kept = self.eigenvectors.ncols() - self.first_kept;
        let v = self.eigenvectors.columns(self.first_kept, kept);
        let coeffs =
            (v.transpose() * g).component_div(&self.eigenvalues.rows(self.first_kept, kept));
        let mut p = (v * coeffs).component_mul(&self.inv_sqrt_area);
        let mean = p.dot(&self.area) / self.area.sum();
        p.add_scalar_mut(-mean);
        let r = load - self.divergence.transpose() * &p;
        let dual = self.viscous.solve(&r).column(0).dot(&r);
        PressureSolution {
            p,
            dual_residual: dual.max(0.0).sqrt(),
        }
    }

    /// `sum_K |K| p_K / |Omega|`.
    pub fn mean(&self, p: &DVector<f64>) -> f64 {
        p.dot(&self.area) / self.area.sum()
    }

    /// `|p|_{0,Omega}`.
    pub fn l2_norm(&self, p: &DVector<f64>) -> f64 {
        p.component_mul(p).dot(&self.area).sqrt()
    }
}

/// Recovered multiplier and pressure at one output time with their residuals.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryFields {
    pub t: f64,
    #[serde(skip)]
    pub multiplier: DVector<f64>,
    #[serde(skip)]
    pub pressure: DVector<f64>,
    /// `|lambda|_{1,B}`, equal to the Euclidean norm of the coefficients.
    pub multiplier_norm: f64,
    pub pressure_norm: f64,
    pub pressure_mean: f64,
    /// Largest solid split-equation residual over `chi_1..chi_R`.
    pub split_residual: f64,
    /// Largest `|l(psi_j)|` over the Galerkin modes.
    pub divergence_free_residual: f64,
    pub pressure_dual_residual: f64,
    /// Largest gap between the closed form and the Gram solve for the multiplier.
    pub gram_gap: f64,
    /// `|lambda| / (|dw/dt|_{0,B} + kappa |grad X|_{0,B})`, when the denominator is nonzero.
    pub continuity_ratio: Option<f64>,
    pub beta_h: f64,
}

pub fn recover_at(
    state: &GalerkinState,
    coupling: &Coupling,
    fluid_ops: &FluidOperators,
    solid_ops: &SolidOperators,
    params: &PhysicalParams,
    lambda_f: &DVector<f64>,
    solver: &PressureSolver,
) -> Result<RecoveryFields> {
    let t = state.t;
    let composed = coupling.composed_modes(t)?;
    let coeffs = coupling.coefficients_from(&composed);
    let mats = crate::coupling::assemble_matrices(&coeffs, &coupling.solid_basis);
    let (alpha_dot, _) = ode_rhs(state, params, lambda_f, &mats)?;

    let multiplier = recover_multiplier(state, &alpha_dot, &coeffs, coupling, params);
    let gram = multiplier_by_gram_solve(state, &alpha_dot, &composed, coupling, solid_ops, params)?;
    let split = split_residual(
        state,
        &alpha_dot,
        &multiplier,
        &composed,
        coupling,
        solid_ops,
        params,
    );

    let composition = coupling.composition_load(t)?;
    let load = pressure_load(
        state,
        &alpha_dot,
        &multiplier,
        &composition,
        coupling,
        fluid_ops,
        solid_ops,
        params,
    );
    let divergence_free_residual = (coupling.fluid_modes.transpose() * &load).amax();
    let pressure = solver.solve(&load);

    let acc = solid_acceleration(state, &alpha_dot, &composed);
    let acc_norm = (&solid_ops.mass * &acc).dot(&acc).max(0.0).sqrt();
    let x = coupling.solid_basis.modes.columns(0, state.beta.len()) * &state.beta;
    let grad_norm = (&solid_ops.stiffness * &x).dot(&x).max(0.0).sqrt();
    let denominator = acc_norm + params.kappa * grad_norm;
    let multiplier_norm = multiplier.norm();

    Ok(RecoveryFields {
        t,
        multiplier_norm,
        pressure_norm: solver.l2_norm(&pressure.p),
        pressure_mean: solver.mean(&pressure.p),
        split_residual: split.amax(),
        divergence_free_residual,
        pressure_dual_residual: pressure.dual_residual,
        gram_gap: (&gram - &multiplier).amax(),
        continuity_ratio: (denominator > 0.0).then(|| multiplier_norm / denominator),
        beta_h: solver.beta_h,
        multiplier,
        pressure: pressure.p,
    })
}

/// Recovery at every output time of a trajectory.
pub fn recover_trajectory(
    traj: &Trajectory,
    coupling: &Coupling,
    fluid_ops: &FluidOperators,
    solid_ops: &SolidOperators,
    solver: &PressureSolver,
) -> Result<Vec<RecoveryFields>> {
    traj.states
        .iter()
        .map(|s| {
            recover_at(
                s,
                coupling,
                fluid_ops,
                solid_ops,
                &traj.params,
                &traj.lambda_f,
                solver,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GeometryConfig, MotionKind};
    use crate::scenario::{
        Discretization, InitialDisplacement, InitialSpec, InitialVelocity, Problem, Scenario,
    };

    fn problem(rho_s: f64) -> Problem {
        let s = Scenario {
            schema_version: 1,
            name: "recovery".into(),
            geometry: GeometryConfig::unit_square(8, 4),
            motion: MotionKind::Rotation {
                center: [0.5, 0.5],
                omega: 1.0,
            },
            params: PhysicalParams {
                rho_f: 1.0,
                rho_s,
                nu_f: 1.0,
                nu_s: 1.0,
                kappa: 2.0,
            },
            discretization: Discretization {
                m: 4,
                r: None,
                final_time: 0.1,
                dt: 1e-2,
                dt_out: 5e-2,
            },
            initial: InitialSpec {
                velocity: InitialVelocity::Coefficients {
                    values: vec![1.0, -0.5, 0.2],
                },
                displacement: InitialDisplacement::Reference,
            },
            output_dir: None,
        };
        Problem::build(&s).unwrap()
    }

    #[test]
    fn zero_state_recovers_zero_fields() {
        let p = problem(2.0);
        let solver = PressureSolver::new(&p.fluid_ops).unwrap();
        let zero = GalerkinState::zeros(0.05, 4);
        let rec = recover_at(
            &zero,
            p.coupling(),
            &p.fluid_ops,
            &p.solid_ops,
            &p.system.params,
            &p.system.lambda_f,
            &solver,
        )
        .unwrap();
        assert_eq!(rec.multiplier.amax(), 0.0);
        assert_eq!(rec.pressure.amax(), 0.0);
        assert_eq!(rec.split_residual, 0.0);
        assert!(rec.continuity_ratio.is_none());
    }

    #[test]
    fn matched_density_multiplier_is_purely_elastic() {
        let p = problem(1.0);
        let state = p.initial_state().unwrap();
        let coeffs = p.coupling().coefficients(0.0).unwrap();
        let alpha_dot = DVector::from_element(4, 3.0);
        let l = recover_multiplier(&state, &alpha_dot, &coeffs, p.coupling(), &p.system.params);
        for r in 0..l.len() {
            let expected = if r < 4 {
                2.0 * state.beta[r] * p.solid_basis.d[r]
            } else {
                0.0
            };
            assert_eq!(l[r], expected);
        }
        // constants carry no elastic load
        assert!(l[0].abs() < 1e-10 && l[1].abs() < 1e-10);
    }

    #[test]
    fn recovered_fields_satisfy_the_split_equations() {
        let p = problem(3.0);
        let traj = p.run().unwrap();
        let solver = PressureSolver::new(&p.fluid_ops).unwrap();
        assert_eq!(solver.kernel_dim, 2);
        let recs =
            recover_trajectory(&traj, p.coupling(), &p.fluid_ops, &p.solid_ops, &solver).unwrap();
        for rec in &recs {
            assert!(rec.split_residual <= 1e-9, "{rec:?}");
            assert!(rec.gram_gap <= 1e-10, "{rec:?}");
            assert!(rec.divergence_free_residual <= 1e-8, "{rec:?}");
            assert!(rec.pressure_mean.abs() <= 1e-10, "{rec:?}");
            assert!(rec.continuity_ratio.unwrap().is_finite());
        }
    }

    #[test]
    fn truncated_multiplier_leaves_a_residual() {
        let p = problem(3.0);
        let state = p.initial_state().unwrap();
        let composed = p.coupling().composed_modes(0.0).unwrap();
        let coeffs = p.coupling().coefficients_from(&composed);
        let mats = crate::coupling::assemble_matrices(&coeffs, &p.solid_basis);
        let (alpha_dot, _) = ode_rhs(&state, &p.system.params, &p.system.lambda_f, &mats).unwrap();
        let mut l = recover_multiplier(&state, &alpha_dot, &coeffs, p.coupling(), &p.system.params);
        let residual = |l: &DVector<f64>| {
            split_residual(
                &state,
                &alpha_dot,
                l,
                &composed,
                p.coupling(),
                &p.solid_ops,
                &p.system.params,
            )
            .amax()
        };
        let full = residual(&l);
        let half = l.len() / 2;
        l.rows_mut(half, l.len() - half).fill(0.0);
        let cut = residual(&l);
        assert!(cut > full);
    }

    #[test]
    fn manufactured_pressure_round_trip() {
        let p = problem(2.0);
        let solver = PressureSolver::new(&p.fluid_ops).unwrap();
        let grid = &p.fluid.grid;
        let mut pbar = DVector::from_fn(grid.num_cells(), |k, _| {
            let (i, j) = (k % grid.nx, k / grid.nx);
            let x = (i as f64 + 0.5) * grid.hx;
            let y = (j as f64 + 0.5) * grid.hy;
            (3.0 * x).sin() + x * y * y
        });
        let ones = DVector::from_element(grid.num_cells(), 1.0);
        let checker = DVector::from_fn(grid.num_cells(), |k, _| {
            if (k % grid.nx + k / grid.nx) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        for v in [&ones, &checker] {
            let coef = pbar.dot(v) / v.dot(v);
            pbar -= v * coef;
        }
        let load = p.fluid_ops.divergence.transpose() * &pbar;
        let sol = solver.solve(&load);
        assert!((sol.p - &pbar).amax() <= 1e-8);
        assert!(sol.dual_residual <= 1e-10);
    }
}
