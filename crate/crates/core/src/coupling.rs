//! Composition of fluid fields with the solid motion, the coupling
//! coefficients `delta_jr(t) = c(phi_j(t), chi_r)` and the Galerkin matrices.

use nalgebra::allocator::Allocator;
use nalgebra::storage::Storage;
use nalgebra::{Cholesky, DMatrix, DVector, DefaultAllocator, Dim, Dyn, Matrix, OMatrix};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::fem::{q1_shape, stencil, SolidOperators, Stencil};
use crate::geometry::{
    FluidDomainGrid, Motion, Point, PrescribedMotion, RectGrid, SolidReferenceGrid,
    QUADRATURE_RULE_ID, QUAD_PER_CELL,
};
use crate::linalg::{min_symmetric_eigenvalue, symmetrize};
use crate::spectral::{FluidEigenBasis, SolidEigenBasis};

/// Stencils of the mapped points `X(s_k, t)` in the fluid grid together with the motion velocity.
#[derive(Debug, Clone)]
pub struct MappedPoints {
    pub t: f64,
    pub stencils: Vec<Stencil>,
    pub velocities: Vec<Point>,
}

/// Locates `X(s, t)` for every target `s`; fails on the first point leaving Omega.
pub fn map_points(
    fluid: &FluidDomainGrid,
    motion: &PrescribedMotion,
    t: f64,
    targets: &[Point],
) -> Result<MappedPoints> {
    motion.check_time(t)?;
    let mut stencils = Vec::with_capacity(targets.len());
    let mut velocities = Vec::with_capacity(targets.len());
    for (index, s) in targets.iter().enumerate() {
        let sample = motion.sample(s, t);
        let x = sample.position;
        let loc = fluid
            .rect()
            .contains(&x)
            .then(|| fluid.grid.locate(&x))
            .flatten()
            .ok_or(Error::Containment {
                t,
                index,
                s0: s.x,
                s1: s.y,
                x0: x.x,
                x1: x.y,
            })?;
        stencils.push(stencil(&fluid.grid, loc));
        velocities.push(sample.velocity);
    }
    Ok(MappedPoints {
        t,
        stencils,
        velocities,
    })
}

/// `v(X(s, t))` for each target `s`, by bilinear interpolation on the fluid grid.
pub fn compose_field(
    fluid: &FluidDomainGrid,
    field: &DVector<f64>,
    motion: &PrescribedMotion,
    t: f64,
    targets: &[Point],
) -> Result<Vec<Point>> {
    let mapped = map_points(fluid, motion, t, targets)?;
    Ok(mapped
        .stencils
        .iter()
        .map(|st| {
            let mut v = Point::zeros();
            for k in 0..4 {
                for c in 0..2 {
                    if let Some(d) = fluid.dof(st.nodes[k], c) {
                        v[c] += st.values[k] * field[d];
                    }
                }
            }
            v
        })
        .collect())
}

/// Fluid modes composed with the motion.
///
/// `load` holds `(psi_j o X, N_k)_B` against every solid shape function by
/// quadrature at the Gauss points of B; `phi` is its L2 projection onto the
/// solid finite element space.
#[derive(Debug, Clone)]
pub struct ComposedModes {
    pub t: f64,
    pub load: DMatrix<f64>,
    pub load_dot: DMatrix<f64>,
    /// Projection of `phi_j(t) = psi_j o X(t)`, one column per mode.
    pub phi: DMatrix<f64>,
    /// Projection of `d phi_j / dt = (grad psi_j o X) d_t X`.
    pub phi_dot: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct CouplingCoefficients {
    pub t: f64,
    /// `m x R`.
    pub delta: DMatrix<f64>,
    pub delta_dot: DMatrix<f64>,
    pub quadrature: &'static str,
}

#[derive(Debug, Clone)]
pub struct CoupledMatrices {
    pub t: f64,
    /// `B[(j, i)] = delta_ji`.
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    /// Largest `|C_ij - C_ji|` before symmetrization.
    pub c_asymmetry: f64,
    /// Contribution of the last tenth of the `r`-sum to each entry of `C`.
    pub c_tail: DMatrix<f64>,
}

impl CoupledMatrices {
    pub fn c_min_eigenvalue(&self) -> f64 {
        min_symmetric_eigenvalue(&self.c)
    }
}

/// Everything needed to evaluate the coupling at any time in `[0, T]`.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub fluid: FluidDomainGrid,
    pub solid: SolidReferenceGrid,
    pub motion: PrescribedMotion,
    pub fluid_modes: DMatrix<f64>,
    fluid_modes_t: DMatrix<f64>,
    pub solid_basis: SolidEigenBasis,
    /// `M_B chi`, `2 n_B x R`.
    pub mass_chi: DMatrix<f64>,
    /// `K_c chi` where `K_c` is the c-form.
    pub cform_chi: DMatrix<f64>,
    mass_factor: Cholesky<f64, Dyn>,
}

impl Coupling {
    pub fn new(
        fluid: &FluidDomainGrid,
        solid: &SolidReferenceGrid,
        solid_ops: &SolidOperators,
        motion: &PrescribedMotion,
        fluid_basis: &FluidEigenBasis,
        solid_basis: &SolidEigenBasis,
    ) -> Result<Self> {
        if solid_basis.len() < fluid_basis.len() {
            return Err(Error::InvalidParams(format!(
                "need at least as many solid modes as fluid modes (R = {}, m = {})",
                solid_basis.len(),
                fluid_basis.len()
            )));
        }
        let mass_factor = DMatrix::from(&solid_ops.mass).cholesky().ok_or_else(|| {
            Error::LinearSolve("solid mass matrix is not positive definite".into())
        })?;
        Ok(Coupling {
            fluid: fluid.clone(),
            solid: solid.clone(),
            motion: *motion,
            fluid_modes: fluid_basis.modes.clone(),
            fluid_modes_t: fluid_basis.modes.transpose(),
            solid_basis: solid_basis.clone(),
            mass_chi: &solid_ops.mass * &solid_basis.modes,
            cform_chi: &solid_ops.c_form * &solid_basis.modes,
            mass_factor,
        })
    }

    pub fn m(&self) -> usize {
        self.fluid_modes.ncols()
    }

    pub fn r(&self) -> usize {
        self.solid_basis.len()
    }

    pub fn map_quadrature_points(&self, t: f64) -> Result<MappedPoints> {
        map_points(&self.fluid, &self.motion, t, &self.solid.grid.quad_points)
    }

    /// `M_B^{-1} v` on the solid dofs.
    pub fn solve_mass<C: Dim, S>(&self, v: &Matrix<f64, Dyn, C, S>) -> OMatrix<f64, Dyn, C>
    where
        S: Storage<f64, Dyn, C>,
        DefaultAllocator: Allocator<Dyn, C>,
    {
        self.mass_factor.solve(v)
    }

    /// Visits `(solid dof, fluid dof, weight, weighted slope)` for every
    /// quadrature point, where `weight = w_q N_a(s_q) v_b(X)` and the slope
    /// carries `grad v_b(X) . d_t X` in place of `v_b(X)`.
    fn for_each_pair(&self, mapped: &MappedPoints, mut f: impl FnMut(usize, usize, f64, f64)) {
        let grid = &self.solid.grid;
        let shapes: Vec<[f64; 4]> = RectGrid::reference_quadrature()
            .map(|(xi, eta, _)| q1_shape(xi, eta))
            .collect();
        for (cell, nodes) in grid.cells.iter().enumerate() {
            for (k, shape) in shapes.iter().enumerate() {
                let q = cell * QUAD_PER_CELL + k;
                let st = &mapped.stencils[q];
                let vel = mapped.velocities[q];
                let w = grid.quad_weights[q];
                for b in 0..4 {
                    let slope = st.grads[b][0] * vel.x + st.grads[b][1] * vel.y;
                    for c in 0..2 {
                        let Some(dof) = self.fluid.dof(st.nodes[b], c) else {
                            continue;
                        };
                        for (a, &na) in nodes.iter().enumerate() {
                            let wa = w * shape[a];
                            f(2 * na + c, dof, wa * st.values[b], wa * slope);
                        }
                    }
                }
            }
        }
    }

    /// `(psi_j o X, N_k)_B` and its time derivative for every mode and solid dof.
    fn composed_loads(&self, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mapped = self.map_quadrature_points(t)?;
        let m = self.m();
        let n = self.solid.num_dofs();
        // row-major copies keep the inner loop contiguous
        let mut load = DMatrix::zeros(m, n);
        let mut load_dot = DMatrix::zeros(m, n);
        let modes = &self.fluid_modes_t;
        self.for_each_pair(&mapped, |row, dof, value, slope| {
            let psi = modes.column(dof);
            load.column_mut(row).axpy(value, &psi, 1.0);
            load_dot.column_mut(row).axpy(slope, &psi, 1.0);
        });
        Ok((load.transpose(), load_dot.transpose()))
    }

    pub fn composed_modes(&self, t: f64) -> Result<ComposedModes> {
        let (load, load_dot) = self.composed_loads(t)?;
        let phi = self.solve_mass(&load);
        let phi_dot = self.solve_mass(&load_dot);
        Ok(ComposedModes {
            t,
            load,
            load_dot,
            phi,
            phi_dot,
        })
    }

    /// `delta_jr = lambda_sr (psi_j o X, chi_r)_B`, and the same for the time derivative.
    pub fn coefficients_from(&self, composed: &ComposedModes) -> CouplingCoefficients {
        self.delta_from_loads(composed.t, &composed.load, &composed.load_dot)
    }

    pub fn coefficients(&self, t: f64) -> Result<CouplingCoefficients> {
        let (load, load_dot) = self.composed_loads(t)?;
        Ok(self.delta_from_loads(t, &load, &load_dot))
    }

    fn delta_from_loads(
        &self,
        t: f64,
        load: &DMatrix<f64>,
        load_dot: &DMatrix<f64>,
    ) -> CouplingCoefficients {
        let weighted_chi =
            &self.solid_basis.modes * DMatrix::from_diagonal(&self.solid_basis.eigenvalues);
        CouplingCoefficients {
            t,
            delta: load.transpose() * &weighted_chi,
            delta_dot: load_dot.transpose() * &weighted_chi,
            quadrature: QUADRATURE_RULE_ID,
        }
    }

    /// `c(phi_j, chi_r)` evaluated directly with the c-form on the projected modes.
    pub fn delta_direct(&self, composed: &ComposedModes) -> DMatrix<f64> {
        composed.phi.transpose() * &self.cform_chi
    }

    pub fn matrices(&self, t: f64) -> Result<CoupledMatrices> {
        Ok(assemble_matrices(&self.coefficients(t)?, &self.solid_basis))
    }

    /// `L(t)` with `(L v)_k = (v o X(t), N_k)_B`, from fluid velocity dofs to solid dofs.
    pub fn composition_load(&self, t: f64) -> Result<CsrMatrix<f64>> {
        let mapped = self.map_quadrature_points(t)?;
        let mut coo = CooMatrix::new(self.solid.num_dofs(), self.fluid.num_velocity_dofs());
        self.for_each_pair(&mapped, |row, dof, value, _| {
            if value != 0.0 {
                coo.push(row, dof, value);
            }
        });
        Ok(CsrMatrix::from(&coo))
    }

    /// L2 projection of `v o X(t)` onto the solid space.
    pub fn compose(&self, t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        let load = self.composition_load(t)? * v;
        Ok(self.mass_factor.solve(&load))
    }
}

pub fn assemble_matrices(
    coeffs: &CouplingCoefficients,
    solid: &SolidEigenBasis,
) -> CoupledMatrices {
    let (m, r_total) = coeffs.delta.shape();
    let delta = &coeffs.delta;
    let c_weights = DMatrix::from_diagonal(&solid.c.rows(0, r_total).into_owned());
    let weighted = delta * &c_weights;

    let mut c = &weighted * delta.transpose();
    let c_asymmetry = symmetrize(&mut c);
    // D_ij = sum_r delta'_jr delta_ir c_r
    let d = &weighted * coeffs.delta_dot.transpose();
    let b = delta.columns(0, m).into_owned();
    let e = DMatrix::from_fn(m, m, |i, j| delta[(i, j)] * solid.d[j]);

    let tail_len = r_total.div_ceil(10);
    let start = r_total - tail_len;
    let tail_block = weighted.columns(start, tail_len) * delta.columns(start, tail_len).transpose();
    CoupledMatrices {
        t: coeffs.t,
        b,
        c,
        d,
        e,
        c_asymmetry,
        c_tail: tail_block.abs(),
    }
}

/// Largest entry of the `C` tail relative to the largest entry of `C`.
pub fn relative_tail(matrices: &CoupledMatrices) -> f64 {
    let scale = matrices.c.amax();
    if scale == 0.0 {
        0.0
    } else {
        matrices.c_tail.amax() / scale
    }
}
