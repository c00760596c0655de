//! The Galerkin ODE system for the coefficients `alpha(t)` (velocity) and
//! `beta(t)` (solid displacement map), its projected initial data, and the
//! implicit-midpoint integrator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coupling::{CoupledMatrices, Coupling, CouplingCoefficients};
use crate::error::{Error, Result};
use crate::fem::{FluidOperators, SolidOperators};
use crate::linalg::{min_symmetric_eigenvalue, symmetrize};
use crate::spectral::{FluidEigenBasis, SolidEigenBasis};

/// Smallest admissible eigenvalue of `rho_f I + drho C(t)`.
pub const MASS_CORRECTION_FLOOR: f64 = 1e-10;

/// Tolerance on `||u0 o X(0) - us0||_{0,B}` and on `div_h u0`.
pub const COMPATIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    pub rho_f: f64,
    pub rho_s: f64,
    pub nu_f: f64,
    pub nu_s: f64,
    pub kappa: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rho_f", self.rho_f),
            ("rho_s", self.rho_s),
            ("nu_f", self.nu_f),
            ("nu_s", self.nu_s),
            ("kappa", self.kappa),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn delta_rho(&self) -> f64 {
        self.rho_s - self.rho_f
    }

    pub fn nu_0(&self) -> f64 {
        self.nu_f.min(self.nu_s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinState {
    pub t: f64,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl GalerkinState {
    pub fn zeros(t: f64, m: usize) -> Self {
        GalerkinState {
            t,
            alpha: DVector::zeros(m),
            beta: DVector::zeros(m),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha
            .iter()
            .chain(self.beta.iter())
            .all(|v| v.is_finite())
    }
}

/// Initial fluid velocity on Omega and solid velocity on B; the solid starts at `X0(s) = s`.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub u0: DVector<f64>,
    pub us0: DVector<f64>,
}

impl InitialData {
    /// `us0` taken as the restriction of `u0` to the reference body.
    pub fn from_fluid(u0: DVector<f64>, coupling: &Coupling) -> Result<Self> {
        let us0 = coupling.compose(0.0, &u0)?;
        Ok(InitialData { u0, us0 })
    }
}

/// `alpha_0j = (u0, psi_j)` and `beta_0j = (s, chi_j)_B / c_j`.
pub fn project_initial_data(
    data: &InitialData,
    coupling: &Coupling,
    fluid_ops: &FluidOperators,
    solid_ops: &SolidOperators,
) -> Result<GalerkinState> {
    let restricted = coupling.compose(0.0, &data.u0)?;
    let diff = restricted - &data.us0;
    let residual = (&solid_ops.mass * &diff).dot(&diff).max(0.0).sqrt();
    let divergence = (&fluid_ops.divergence * &data.u0).norm();
    if residual > COMPATIBILITY_TOL || divergence > COMPATIBILITY_TOL {
        return Err(Error::IncompatibleInitialData {
            residual: residual.max(divergence),
        });
    }
    let m = coupling.m();
    let alpha = coupling.fluid_modes.transpose() * (&fluid_ops.mass * &data.u0);
    let identity = coupling.solid.interpolate(|p| *p);
    let projections = coupling.mass_chi.transpose() * identity;
    let beta = DVector::from_fn(m, |j, _| projections[j] / coupling.solid_basis.c[j]);
    Ok(GalerkinState {
        t: 0.0,
        alpha,
        beta,
    })
}

/// `||sum_j beta_j chi_j - s||_{0,B}` for a state's displacement coefficients.
pub fn reference_map_error(
    beta: &DVector<f64>,
    coupling: &Coupling,
    solid_ops: &SolidOperators,
) -> f64 {
    let m = beta.len();
    let x = coupling.solid_basis.modes.columns(0, m) * beta;
    let diff = x - coupling.solid.interpolate(|p| *p);
    (&solid_ops.mass * &diff).dot(&diff).max(0.0).sqrt()
}

/// Time derivative of the state under frozen matrices.
pub fn ode_rhs(
    state: &GalerkinState,
    params: &PhysicalParams,
    lambda_f: &DVector<f64>,
    mats: &CoupledMatrices,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mass = mass_correction(params, mats.t, &mats.c)?;
    let force =
        damping(params, lambda_f, &mats.d) * &state.alpha + &mats.e * &state.beta * params.kappa;
    let alpha_dot = mass
        .cholesky()
        .ok_or_else(|| Error::LinearSolve("mass correction is not positive definite".into()))?
        .solve(&(-force));
    let beta_dot = mats.b.transpose() * &state.alpha;
    Ok((alpha_dot, beta_dot))
}

/// `rho_f I + drho C(t)`, rejected when its smallest eigenvalue drops below the floor.
pub fn mass_correction(params: &PhysicalParams, t: f64, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = c.nrows();
    let mass = DMatrix::identity(m, m) * params.rho_f + c * params.delta_rho();
    if params.delta_rho() < 0.0 {
        let min_eigenvalue = min_symmetric_eigenvalue(&mass);
        if min_eigenvalue < MASS_CORRECTION_FLOOR {
            return Err(Error::SingularMassCorrection { t, min_eigenvalue });
        }
    }
    Ok(mass)
}

/// `diag(lambda_f) + drho D(t)`.
fn damping(params: &PhysicalParams, lambda_f: &DVector<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(lambda_f) + d * params.delta_rho()
}

/// Matrices of one step, built from the coupling coefficients at both ends.
///
/// `C` is the average of its end values and `D` uses the difference quotient
/// of `delta`, so `dt (D + D^T) = C(t_1) - C(t_0)` holds exactly and the
/// discrete energy changes only by `drho h^T (C(t_1) - C(t_0)) h` beyond the
/// viscous dissipation, with `h` half the increment of `alpha`.
#[derive(Debug, Clone)]
pub struct StepMatrices {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

impl StepMatrices {
    pub fn between(
        start: &CouplingCoefficients,
        end: &CouplingCoefficients,
        solid: &SolidEigenBasis,
    ) -> Self {
        let (m, r) = start.delta.shape();
        let dt = end.t - start.t;
        let weights = DMatrix::from_diagonal(&solid.c.rows(0, r).into_owned());
        let gram = |delta: &DMatrix<f64>| delta * &weights * delta.transpose();
        let mut c = (gram(&start.delta) + gram(&end.delta)) * 0.5;
        symmetrize(&mut c);
        let mean = (&start.delta + &end.delta) * 0.5;
        let slope = (&end.delta - &start.delta) / dt;
        let d = &mean * &weights * slope.transpose();
        let b = mean.columns(0, m).into_owned();
        let e = DMatrix::from_fn(m, m, |i, j| b[(i, j)] * solid.d[j]);
        StepMatrices { c, d, b, e }
    }
}

/// The Galerkin system at dimension `m`: coupling context plus physical parameters.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    pub coupling: Coupling,
    pub params: PhysicalParams,
    pub lambda_f: DVector<f64>,
}

/// Outcome of one implicit-midpoint step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: GalerkinState,
    /// `2 dt a(u_mid, u_mid)`, the scheme's exact viscous dissipation over the step.
    pub dissipation: f64,
}

impl GalerkinSystem {
    pub fn new(
        coupling: Coupling,
        params: PhysicalParams,
        fluid_basis: &FluidEigenBasis,
    ) -> Result<Self> {
        params.validate()?;
        Ok(GalerkinSystem {
            coupling,
            params,
            lambda_f: fluid_basis.eigenvalues.clone(),
        })
    }

    pub fn m(&self) -> usize {
        self.lambda_f.len()
    }

    pub fn matrices(&self, t: f64) -> Result<CoupledMatrices> {
        self.coupling.matrices(t)
    }

    pub fn rhs(&self, state: &GalerkinState) -> Result<(DVector<f64>, DVector<f64>)> {
        ode_rhs(
            state,
            &self.params,
            &self.lambda_f,
            &self.matrices(state.t)?,
        )
    }

    /// One implicit-midpoint step; see [`StepMatrices`] for the coupling terms.
    pub fn step(&self, state: &GalerkinState, dt: f64) -> Result<StepResult> {
        let start = self.coupling.coefficients(state.t)?;
        self.step_to(state, &start, state.t + dt)
            .map(|(step, _)| step)
    }

    /// Steps to `t_next` and also returns the coefficients there for the next step.
    fn step_to(
        &self,
        state: &GalerkinState,
        start: &CouplingCoefficients,
        t_next: f64,
    ) -> Result<(StepResult, CouplingCoefficients)> {
        let dt = t_next - state.t;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let m = self.m();
        let end = self.coupling.coefficients(t_next)?;
        let mats = StepMatrices::between(start, &end, &self.coupling.solid_basis);
        let mass = mass_correction(&self.params, 0.5 * (state.t + t_next), &mats.c)?;
        let damp = damping(&self.params, &self.lambda_f, &mats.d);
        let h = 0.5 * dt;
        let elastic = &mats.e * (self.params.kappa * h);
        let kinematic = mats.b.transpose() * h;

        let mut lhs = DMatrix::identity(2 * m, 2 * m);
        let mut rhs = DMatrix::identity(2 * m, 2 * m);
        lhs.view_mut((0, 0), (m, m)).copy_from(&(&mass + &damp * h));
        rhs.view_mut((0, 0), (m, m)).copy_from(&(&mass - &damp * h));
        lhs.view_mut((0, m), (m, m)).copy_from(&elastic);
        rhs.view_mut((0, m), (m, m)).copy_from(&(-&elastic));
        lhs.view_mut((m, 0), (m, m)).copy_from(&(-&kinematic));
        rhs.view_mut((m, 0), (m, m)).copy_from(&kinematic);

        let mut y = DVector::zeros(2 * m);
        y.rows_mut(0, m).copy_from(&state.alpha);
        y.rows_mut(m, m).copy_from(&state.beta);
        let next = lhs.lu().solve(&(rhs * y)).ok_or_else(|| {
            Error::LinearSolve(format!("singular midpoint system at t = {}", state.t))
        })?;
        let alpha = next.rows(0, m).into_owned();
        let beta = next.rows(m, m).into_owned();
        let mid = (&alpha + &state.alpha) * 0.5;
        let dissipation = 2.0 * dt * mid.dot(&mid.component_mul(&self.lambda_f));
        let state = GalerkinState {
            t: t_next,
            alpha,
            beta,
        };
        if !state.is_finite() {
            return Err(Error::LinearSolve(format!(
                "non-finite state at t = {t_next}"
            )));
        }
        Ok((StepResult { state, dissipation }, end))
    }

    pub fn run(&self, initial: GalerkinState, schedule: &TimeSchedule) -> Result<Trajectory> {
        let mut state = initial;
        let mut cumulative = 0.0;
        let mut trajectory = Trajectory {
            params: self.params,
            lambda_f: self.lambda_f.clone(),
            elastic_weights: self.coupling.solid_basis.d.rows(0, self.m()).into_owned(),
            dt: schedule.dt,
            states: Vec::with_capacity(schedule.outputs() + 1),
            dissipation: Vec::with_capacity(schedule.outputs() + 1),
            matrices: Vec::with_capacity(schedule.outputs() + 1),
        };
        trajectory.push(state.clone(), cumulative, self.matrices(state.t)?);
        let mut coeffs = self.coupling.coefficients(state.t)?;
        for n in 1..=schedule.steps {
            let (step, next) = self.step_to(&state, &coeffs, schedule.time(n))?;
            coeffs = next;
            cumulative += step.dissipation;
            state = step.state;
            if n % schedule.stride == 0 {
                trajectory.push(state.clone(), cumulative, self.matrices(state.t)?);
            }
        }
        Ok(trajectory)
    }
}

/// Uniform steps of size `dt` up to `T`, recording every `stride` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSchedule {
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
}

impl TimeSchedule {
    /// `dt_out` and `final_time` must be whole multiples of `dt`.
    pub fn new(dt: f64, dt_out: f64, final_time: f64) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(dt) || !positive(dt_out) || !positive(final_time) {
            return Err(Error::InvalidParams(format!(
                "dt, dt_out and T must be positive (dt = {dt}, dt_out = {dt_out}, T = {final_time})"
            )));
        }
        let whole = |ratio: f64| {
            let n = ratio.round();
            (n >= 1.0 && (ratio - n).abs() <= 1e-9 * n).then_some(n as usize)
        };
        let steps = whole(final_time / dt).ok_or_else(|| {
            Error::InvalidParams(format!("T = {final_time} is not a multiple of dt = {dt}"))
        })?;
        let stride = whole(dt_out / dt).ok_or_else(|| {
            Error::InvalidParams(format!("dt_out = {dt_out} is not a multiple of dt = {dt}"))
        })?;
        if steps % stride != 0 {
            return Err(Error::InvalidParams(format!(
                "T = {final_time} is not a multiple of dt_out = {dt_out}"
            )));
        }
        Ok(TimeSchedule { dt, steps, stride })
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn final_time(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn outputs(&self) -> usize {
        self.steps / self.stride
    }
}

/// States at the output times with the matrices evaluated there and the
/// cumulative scheme dissipation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: PhysicalParams,
    pub lambda_f: DVector<f64>,
    /// `d_j = |grad chi_j|^2_{0,B}` for `j <= m`.
    pub elastic_weights: DVector<f64>,
    pub dt: f64,
    pub states: Vec<GalerkinState>,
    pub dissipation: Vec<f64>,
    pub matrices: Vec<CoupledMatrices>,
}

impl Trajectory {
    fn push(&mut self, state: GalerkinState, dissipation: f64, mats: CoupledMatrices) {
        self.states.push(state);
        self.dissipation.push(dissipation);
        self.matrices.push(mats);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &GalerkinState {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Viscosity;
    use crate::geometry::{build_grids, GeometryConfig, MotionKind, PrescribedMotion};
    use crate::spectral::{
        build_divfree_subspace, solve_fluid_eigenproblem, solve_solid_eigenproblem,
    };

    struct Fixture {
        system: GalerkinSystem,
        fluid_ops: FluidOperators,
        solid_ops: SolidOperators,
        basis: FluidEigenBasis,
    }

    fn fixture(motion: MotionKind, params: PhysicalParams, m: usize) -> Fixture {
        let (fluid, solid) = build_grids(&GeometryConfig::unit_square(8, 4)).unwrap();
        let visc = Viscosity {
            nu_f: params.nu_f,
            nu_s: params.nu_s,
            solid: *solid.rect(),
        };
        let fluid_ops = FluidOperators::assemble(&fluid, &visc);
        let sub = build_divfree_subspace(&fluid_ops.divergence).unwrap();
        let basis = solve_fluid_eigenproblem(&fluid_ops, &sub, &visc, m).unwrap();
        let solid_ops = SolidOperators::assemble(&solid);
        let sb = solve_solid_eigenproblem(&solid_ops, 4 * m).unwrap();
        let motion = PrescribedMotion::new(motion, 1.0).unwrap();
        let coupling = Coupling::new(&fluid, &solid, &solid_ops, &motion, &basis, &sb).unwrap();
        Fixture {
            system: GalerkinSystem::new(coupling, params, &basis).unwrap(),
            fluid_ops,
            solid_ops,
            basis,
        }
    }

    fn params(rho_s: f64, kappa: f64) -> PhysicalParams {
        PhysicalParams {
            rho_f: 1.0,
            rho_s,
            nu_f: 1.0,
            nu_s: 1.0,
            kappa,
        }
    }

    fn rotation() -> MotionKind {
        MotionKind::Rotation {
            center: [0.5, 0.5],
            omega: 1.0,
        }
    }

    #[test]
    fn step_energy_changes_by_dissipation_and_the_increment_form() {
        let fx = fixture(rotation(), params(3.0, 2.0), 4);
        let sys = &fx.system;
        let state = GalerkinState {
            t: 0.13,
            alpha: DVector::from_vec(vec![0.7, -0.2, 0.4, 0.1]),
            beta: DVector::from_vec(vec![0.05, 0.3, -0.1, 0.2]),
        };
        let dt = 0.02;
        let next = sys.step(&state, dt).unwrap();
        let c0 = sys.matrices(state.t).unwrap().c;
        let c1 = sys.matrices(state.t + dt).unwrap().c;
        let d = sys.coupling.solid_basis.d.rows(0, 4).into_owned();
        let energy = |s: &GalerkinState, c: &DMatrix<f64>| {
            s.alpha.norm_squared()
                + 2.0 * s.alpha.dot(&(c * &s.alpha))
                + 2.0 * s.beta.component_mul(&s.beta).dot(&d)
        };
        let h = (&next.state.alpha - &state.alpha) * 0.5;
        let increment = 2.0 * h.dot(&((&c1 - &c0) * &h));
        let gap = energy(&next.state, &c1) + next.dissipation - energy(&state, &c0) - increment;
        assert!(gap.abs() <= 1e-13, "gap {gap:e}");
        assert!(increment.abs() > 1e-8);
    }

    #[test]
    fn zero_state_stays_zero() {
        let fx = fixture(rotation(), params(2.0, 1.0), 3);
        let (a, b) = fx.system.rhs(&GalerkinState::zeros(0.2, 3)).unwrap();
        assert_eq!(a.amax(), 0.0);
        assert_eq!(b.amax(), 0.0);
        let next = fx.system.step(&GalerkinState::zeros(0.0, 3), 0.01).unwrap();
        assert_eq!(next.state.alpha.amax(), 0.0);
        assert_eq!(next.state.beta.amax(), 0.0);
    }

    #[test]
    fn matched_densities_without_elasticity_decouple() {
        let mut fx = fixture(rotation(), params(1.0, 1.0), 3);
        fx.system.params.kappa = 0.0;
        let state = GalerkinState {
            t: 0.3,
            alpha: DVector::from_vec(vec![1.0, -0.5, 0.25]),
            beta: DVector::from_vec(vec![0.4, 0.4, 0.1]),
        };
        let (a, _) = fx.system.rhs(&state).unwrap();
        for i in 0..3 {
            let expected = -fx.basis.eigenvalues[i] * state.alpha[i];
            assert!((a[i] - expected).abs() <= 1e-12 * expected.abs());
        }
        let dt = 0.01;
        let one = fx
            .system
            .step(&GalerkinState { t: 0.0, ..state }, dt)
            .unwrap()
            .state;
        let l = fx.basis.eigenvalues[0];
        let factor = (1.0 - 0.5 * l * dt) / (1.0 + 0.5 * l * dt);
        assert!((one.alpha[0] - factor).abs() < 1e-13);
    }

    #[test]
    fn kinematic_equation_uses_the_b_matrix() {
        let fx = fixture(rotation(), params(2.0, 3.0), 3);
        let state = GalerkinState {
            t: 0.4,
            alpha: DVector::from_vec(vec![0.2, 0.1, -0.3]),
            beta: DVector::from_vec(vec![0.5, 0.5, 0.01]),
        };
        let (_, b) = fx.system.rhs(&state).unwrap();
        let mats = fx.system.matrices(0.4).unwrap();
        assert!((b - mats.b.transpose() * &state.alpha).amax() <= 1e-14);
    }

    #[test]
    fn projection_of_first_mode_is_a_unit_vector() {
        let fx = fixture(MotionKind::Identity, params(2.0, 1.0), 4);
        let u0 = fx.basis.modes.column(0).into_owned();
        let data = InitialData::from_fluid(u0, &fx.system.coupling).unwrap();
        let state =
            project_initial_data(&data, &fx.system.coupling, &fx.fluid_ops, &fx.solid_ops).unwrap();
        let mut e1 = DVector::zeros(4);
        e1[0] = 1.0;
        assert!((state.alpha - e1).amax() < 1e-10);
    }

    #[test]
    fn incompatible_solid_velocity_is_rejected() {
        let fx = fixture(MotionKind::Identity, params(2.0, 1.0), 2);
        let u0 = fx.basis.modes.column(0).into_owned();
        let mut data = InitialData::from_fluid(u0, &fx.system.coupling).unwrap();
        data.us0[0] += 1.0;
        let err = project_initial_data(&data, &fx.system.coupling, &fx.fluid_ops, &fx.solid_ops)
            .unwrap_err();
        assert!(matches!(err, Error::IncompatibleInitialData { .. }));
    }

    #[test]
    fn light_solid_with_large_coupling_is_rejected() {
        let fx = fixture(MotionKind::Identity, params(1.0, 1.0), 2);
        let mut mats = fx.system.matrices(0.0).unwrap();
        mats.c = DMatrix::identity(2, 2) * 2.0;
        let mut p = fx.system.params;
        p.rho_s = 0.4;
        let err = ode_rhs(
            &GalerkinState::zeros(0.0, 2),
            &p,
            &fx.system.lambda_f,
            &mats,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularMassCorrection { .. }));
    }

    #[test]
    fn schedule_requires_whole_multiples() {
        let s = TimeSchedule::new(1e-3, 1e-2, 0.5).unwrap();
        assert_eq!((s.steps, s.stride, s.outputs()), (500, 10, 50));
        assert!(TimeSchedule::new(3e-3, 1e-2, 0.5).is_err());
        assert!(TimeSchedule::new(0.0, 1e-2, 0.5).is_err());
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let fx = fixture(rotation(), params(2.0, 1.0), 3);
        let initial = GalerkinState {
            t: 0.0,
            alpha: DVector::from_vec(vec![1.0, 0.2, -0.1]),
            beta: DVector::from_vec(vec![0.3, 0.1, 0.0]),
        };
        let schedule = TimeSchedule::new(1e-2, 5e-2, 0.2).unwrap();
        let a = fx.system.run(initial.clone(), &schedule).unwrap();
        let b = fx.system.run(initial, &schedule).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.dissipation, b.dissipation);
        assert_eq!(a.len(), 5);
    }
}
