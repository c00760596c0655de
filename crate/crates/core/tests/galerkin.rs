use std::path::PathBuf;

use fdlm_core::evolution::{reference_map_error, GalerkinState};
use fdlm_core::fem::{FluidOperators, Viscosity};
use fdlm_core::geometry::{build_grids, GeometryConfig, MotionKind, Rect};
use fdlm_core::scenario::{Problem, Scenario, SharedBases};
use fdlm_core::spectral::{build_divfree_subspace, solve_fluid_eigenproblem};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

fn scenario(fluid_cells: usize, solid_cells: usize, motion: MotionKind, m: usize) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/rotation.json");
    let mut s = Scenario::load(path).unwrap();
    s.geometry = GeometryConfig::unit_square(fluid_cells, solid_cells);
    s.motion = motion;
    s.discretization.m = m;
    s.discretization.r = None;
    s.discretization.final_time = 1.0;
    s.discretization.dt = 0.01;
    s.discretization.dt_out = 0.1;
    s
}

fn unit_viscosity(solid: Rect) -> Viscosity {
    Viscosity {
        nu_f: 1.0,
        nu_s: 1.0,
        solid,
    }
}

fn first_fluid_eigenvalues(cells: usize, m: usize) -> (DVector<f64>, FluidOperators) {
    let (fluid, solid) = build_grids(&GeometryConfig::unit_square(cells, 4)).unwrap();
    let visc = unit_viscosity(*solid.rect());
    let ops = FluidOperators::assemble(&fluid, &visc);
    let sub = build_divfree_subspace(&ops.divergence).unwrap();
    let basis = solve_fluid_eigenproblem(&ops, &sub, &visc, m).unwrap();
    (basis.eigenvalues, ops)
}

#[test]
fn fluid_eigenvalues_match_a_dense_full_spectrum_solve() {
    let (computed, ops) = first_fluid_eigenvalues(16, 4);

    // kernel of the divergence from the eigenvectors of D^T D
    let div = DMatrix::from(&ops.divergence);
    let normal = SymmetricEigen::new(div.transpose() * &div);
    let cutoff = 1e-10 * normal.eigenvalues.amax();
    let kernel: Vec<usize> = (0..normal.eigenvalues.len())
        .filter(|&i| normal.eigenvalues[i] <= cutoff)
        .collect();
    let z = normal.eigenvectors.select_columns(&kernel);

    let k = z.transpose() * DMatrix::from(&ops.viscous) * &z;
    let mass = SymmetricEigen::new(z.transpose() * DMatrix::from(&ops.mass) * &z);
    let inv_sqrt = DMatrix::from_diagonal(&mass.eigenvalues.map(|v| 1.0 / v.sqrt()));
    let w = &mass.eigenvectors * inv_sqrt;
    let mut oracle: Vec<f64> = SymmetricEigen::new(w.transpose() * k * &w)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    oracle.sort_by(f64::total_cmp);

    for i in 0..4 {
        let rel = (computed[i] - oracle[i]).abs() / oracle[i];
        assert!(
            rel <= 1e-9,
            "mode {i}: {} vs {} ({rel:e})",
            computed[i],
            oracle[i]
        );
    }
}

#[test]
fn first_fluid_eigenvalue_is_stable_under_refinement() {
    let (coarse, _) = first_fluid_eigenvalues(16, 1);
    let (fine, _) = first_fluid_eigenvalues(32, 1);
    let change = (coarse[0] - fine[0]).abs() / fine[0];
    assert!(change <= 0.05, "{} -> {} ({change})", coarse[0], fine[0]);
}

#[test]
fn coupling_mass_tail_shrinks_when_solid_modes_double() {
    let mut s = scenario(
        16,
        8,
        MotionKind::Rotation {
            center: [0.5, 0.5],
            omega: 1.0,
        },
        4,
    );
    s.discretization.r = Some(32);
    let p = Problem::build(&s).unwrap();
    let coupling = p.coupling();
    let delta = coupling.coefficients(0.3).unwrap().delta;
    let c = &coupling.solid_basis.c;
    let truncated = |r: usize| {
        let d = delta.columns(0, r);
        d * DMatrix::from_diagonal(&c.rows(0, r).into_owned()) * d.transpose()
    };
    let early = (truncated(16) - truncated(8)).norm();
    let late = (truncated(32) - truncated(16)).norm();
    assert!(late < early, "{late:e} !< {early:e}");
}

#[test]
fn reference_map_projection_improves_with_more_modes() {
    let s = scenario(16, 8, MotionKind::Identity, 24);
    let bases = SharedBases::build(&s, 24).unwrap();
    let error = |m: usize| {
        let mut sm = s.clone();
        sm.discretization.m = m;
        let p = Problem::from_bases(&sm, &bases).unwrap();
        let state = p.initial_state().unwrap();
        reference_map_error(&state.beta, p.coupling(), &p.solid_ops)
    };
    let (e8, e16, e24) = (error(8), error(16), error(24));
    // modes 9..16 are orthogonal to the linear map, so only the 24-mode error drops
    assert!(e16 <= e8 * (1.0 + 1e-12), "{e16:e} > {e8:e}");
    assert!(e24 < 0.9 * e16, "{e24:e} vs {e16:e}");
}

#[test]
fn identity_motion_rhs_matches_independently_assembled_matrices() {
    let s = scenario(8, 4, MotionKind::Identity, 4);
    let p = Problem::build(&s).unwrap();
    let m = p.m();
    let coupling = p.coupling();
    let solid = &p.solid;
    let basis = &coupling.solid_basis;
    let r_total = basis.len();

    // delta_jr = lambda_r (psi_j, chi_r)_B by direct quadrature
    let points = &solid.grid.quad_points;
    let weights = &solid.grid.quad_weights;
    let chi: Vec<_> = (0..r_total)
        .map(|r| solid.values_at_quadrature(&basis.modes.column(r).into_owned()))
        .collect();
    let delta = DMatrix::from_fn(m, r_total, |j, r| {
        let psi = p.fluid_basis.modes.column(j).into_owned();
        let integral: f64 = points
            .iter()
            .zip(weights)
            .zip(&chi[r])
            .map(|((x, w), chi_q)| w * p.fluid.evaluate(&psi, x).unwrap().dot(chi_q))
            .sum();
        basis.eigenvalues[r] * integral
    });
    let c = &delta * DMatrix::from_diagonal(&basis.c) * delta.transpose();
    let b = delta.columns(0, m).into_owned();
    let e = DMatrix::from_fn(m, m, |i, j| b[(i, j)] * basis.d[j]);

    let params = s.params;
    let state = GalerkinState {
        t: 0.4,
        alpha: DVector::from_vec(vec![0.3, -0.8, 0.5, 0.2]),
        beta: DVector::from_vec(vec![0.1, 0.6, -0.4, 0.9]),
    };
    let mass = DMatrix::identity(m, m) * params.rho_f + &c * params.delta_rho();
    let force = DMatrix::from_diagonal(&p.fluid_basis.eigenvalues) * &state.alpha
        + &e * &state.beta * params.kappa;
    let alpha_dot = mass.lu().solve(&(-force)).unwrap();
    let beta_dot = b.transpose() * &state.alpha;

    let (a, bd) = p.system.rhs(&state).unwrap();
    let scale = alpha_dot.amax().max(beta_dot.amax());
    assert!((a - alpha_dot).amax() <= 1e-12 * scale);
    assert!((bd - beta_dot).amax() <= 1e-12 * scale);
}
