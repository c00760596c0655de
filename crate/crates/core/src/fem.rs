//! Bilinear (Q1) finite elements on the rectangular grids: shape functions,
//! assembled bilinear forms, and field evaluation.

use nalgebra::{DVector, Matrix2};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::geometry::{
    CellLocation, FluidDomainGrid, Point, Rect, RectGrid, SolidReferenceGrid, QUAD_PER_CELL,
};

/// Q1 shape functions on the unit cell, tensor node order.
pub fn q1_shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        (1.0 - xi) * (1.0 - eta),
        xi * (1.0 - eta),
        (1.0 - xi) * eta,
        xi * eta,
    ]
}

/// Physical gradients of the Q1 shape functions on a `hx x hy` cell.
pub fn q1_grad(xi: f64, eta: f64, hx: f64, hy: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta) / hx, -(1.0 - xi) / hy],
        [(1.0 - eta) / hx, -xi / hy],
        [-eta / hx, (1.0 - xi) / hy],
        [eta / hx, xi / hy],
    ]
}

/// Piecewise-constant viscosity: `nu_s` inside the reference solid, `nu_f` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viscosity {
    pub nu_f: f64,
    pub nu_s: f64,
    pub solid: Rect,
}

impl Viscosity {
    pub fn at(&self, p: &Point) -> f64 {
        if self.solid.contains(p) {
            self.nu_s
        } else {
            self.nu_f
        }
    }
}

/// Assembled fluid forms on the zero-trace velocity space and piecewise-constant pressures.
#[derive(Debug, Clone)]
pub struct FluidOperators {
    /// `(u, v)` on Omega.
    pub mass: CsrMatrix<f64>,
    /// `a(u, v) = (nu eps(u), eps(v))` with the symmetric gradient `eps`.
    pub viscous: CsrMatrix<f64>,
    /// `(div v, q)`: one row per cell, one column per velocity dof.
    pub divergence: CsrMatrix<f64>,
    /// Cell areas (the diagonal pressure mass matrix).
    pub pressure_mass: DVector<f64>,
}

impl FluidOperators {
    pub fn assemble(fluid: &FluidDomainGrid, viscosity: &Viscosity) -> Self {
        let grid = &fluid.grid;
        let n = fluid.num_velocity_dofs();
        let mut mass = CooMatrix::new(n, n);
        let mut viscous = CooMatrix::new(n, n);
        let mut divergence = CooMatrix::new(grid.num_cells(), n);

        for (cell, nodes) in grid.cells.iter().enumerate() {
            let quad = &grid.quad_points[cell * QUAD_PER_CELL..(cell + 1) * QUAD_PER_CELL];
            let mut m_loc = [[0.0; 4]; 4];
            // k_loc[a][b][c][e]: test (node a, comp c) against trial (node b, comp e)
            let mut k_loc = [[[[0.0; 2]; 2]; 4]; 4];
            let mut d_loc = [[0.0; 2]; 4];
            for (q, (xi, eta, w)) in RectGrid::reference_quadrature().enumerate() {
                let w = w * grid.cell_area();
                let nu = viscosity.at(&quad[q]);
                let phi = q1_shape(xi, eta);
                let grad = q1_grad(xi, eta, grid.hx, grid.hy);
                for a in 0..4 {
                    d_loc[a][0] += w * grad[a][0];
                    d_loc[a][1] += w * grad[a][1];
                    for b in 0..4 {
                        m_loc[a][b] += w * phi[a] * phi[b];
                        let dot = grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1];
                        for c in 0..2 {
                            for e in 0..2 {
                                let same = if c == e { dot } else { 0.0 };
                                k_loc[a][b][c][e] +=
                                    w * nu * 0.5 * (same + grad[a][e] * grad[b][c]);
                            }
                        }
                    }
                }
            }
            for a in 0..4 {
                for c in 0..2 {
                    let Some(row) = fluid.dof(nodes[a], c) else {
                        continue;
                    };
                    divergence.push(cell, row, d_loc[a][c]);
                    for b in 0..4 {
                        if let Some(col) = fluid.dof(nodes[b], c) {
                            mass.push(row, col, m_loc[a][b]);
                        }
                        for e in 0..2 {
                            if let Some(col) = fluid.dof(nodes[b], e) {
                                viscous.push(row, col, k_loc[a][b][c][e]);
                            }
                        }
                    }
                }
            }
        }

        FluidOperators {
            mass: CsrMatrix::from(&mass),
            viscous: CsrMatrix::from(&viscous),
            divergence: CsrMatrix::from(&divergence),
            pressure_mass: DVector::from_element(grid.num_cells(), grid.cell_area()),
        }
    }
}

/// Assembled forms on the solid reference grid (all nodes, natural boundary conditions).
#[derive(Debug, Clone)]
pub struct SolidOperators {
    pub scalar_mass: CsrMatrix<f64>,
    pub scalar_stiffness: CsrMatrix<f64>,
    /// Vector `(mu, z)_B`.
    pub mass: CsrMatrix<f64>,
    /// Vector `(grad_s mu, grad_s z)_B`.
    pub stiffness: CsrMatrix<f64>,
    /// `c(mu, z) = (grad_s mu, grad_s z)_B + (mu, z)_B`.
    pub c_form: CsrMatrix<f64>,
}

impl SolidOperators {
    pub fn assemble(solid: &SolidReferenceGrid) -> Self {
        let grid = &solid.grid;
        let n = grid.num_nodes();
        let mut mass = CooMatrix::new(n, n);
        let mut stiffness = CooMatrix::new(n, n);
        let mut vmass = CooMatrix::new(2 * n, 2 * n);
        let mut vstiff = CooMatrix::new(2 * n, 2 * n);
        let mut cform = CooMatrix::new(2 * n, 2 * n);
        for nodes in &grid.cells {
            let mut m_loc = [[0.0; 4]; 4];
            let mut k_loc = [[0.0; 4]; 4];
            for (xi, eta, w) in RectGrid::reference_quadrature() {
                let w = w * grid.cell_area();
                let phi = q1_shape(xi, eta);
                let grad = q1_grad(xi, eta, grid.hx, grid.hy);
                for a in 0..4 {
                    for b in 0..4 {
                        m_loc[a][b] += w * phi[a] * phi[b];
                        k_loc[a][b] += w * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1]);
                    }
                }
            }
            for a in 0..4 {
                for b in 0..4 {
                    let (i, j) = (nodes[a], nodes[b]);
                    mass.push(i, j, m_loc[a][b]);
                    stiffness.push(i, j, k_loc[a][b]);
                    for c in 0..2 {
                        vmass.push(2 * i + c, 2 * j + c, m_loc[a][b]);
                        vstiff.push(2 * i + c, 2 * j + c, k_loc[a][b]);
                        cform.push(2 * i + c, 2 * j + c, m_loc[a][b] + k_loc[a][b]);
                    }
                }
            }
        }
        SolidOperators {
            scalar_mass: CsrMatrix::from(&mass),
            scalar_stiffness: CsrMatrix::from(&stiffness),
            mass: CsrMatrix::from(&vmass),
            stiffness: CsrMatrix::from(&vstiff),
            c_form: CsrMatrix::from(&cform),
        }
    }
}

/// Bilinear interpolation stencil of a point: the four cell nodes with
/// their shape-function values and physical gradients.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub nodes: [usize; 4],
    pub values: [f64; 4],
    pub grads: [[f64; 2]; 4],
}

pub fn stencil(grid: &RectGrid, loc: CellLocation) -> Stencil {
    Stencil {
        nodes: grid.cells[loc.cell],
        values: q1_shape(loc.xi, loc.eta),
        grads: q1_grad(loc.xi, loc.eta, grid.hx, grid.hy),
    }
}

impl FluidDomainGrid {
    /// Value of a velocity field (interior dofs, zero trace) at `p`, or `None` outside Omega.
    pub fn evaluate(&self, field: &DVector<f64>, p: &Point) -> Option<Point> {
        let st = stencil(&self.grid, self.grid.locate(p)?);
        let mut out = Point::zeros();
        for k in 0..4 {
            for c in 0..2 {
                if let Some(d) = self.dof(st.nodes[k], c) {
                    out[c] += st.values[k] * field[d];
                }
            }
        }
        Some(out)
    }

    /// Gradient `g[(c, d)] = d u_c / d x_d` of the bilinear interpolant at `p`.
    pub fn evaluate_gradient(&self, field: &DVector<f64>, p: &Point) -> Option<Matrix2<f64>> {
        let st = stencil(&self.grid, self.grid.locate(p)?);
        let mut g = Matrix2::zeros();
        for k in 0..4 {
            for c in 0..2 {
                if let Some(dof) = self.dof(st.nodes[k], c) {
                    g[(c, 0)] += st.grads[k][0] * field[dof];
                    g[(c, 1)] += st.grads[k][1] * field[dof];
                }
            }
        }
        Some(g)
    }

    /// Nodal interpolant of `f`; boundary values are dropped.
    pub fn interpolate<F: Fn(&Point) -> Point>(&self, f: F) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_velocity_dofs());
        for (k, &node) in self.interior_nodes.iter().enumerate() {
            let v = f(&self.grid.nodes[node]);
            out[2 * k] = v.x;
            out[2 * k + 1] = v.y;
        }
        out
    }
}

impl SolidReferenceGrid {
    /// Nodal interpolant of `f` on B.
    pub fn interpolate<F: Fn(&Point) -> Point>(&self, f: F) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_dofs());
        for (k, p) in self.grid.nodes.iter().enumerate() {
            let v = f(p);
            out[2 * k] = v.x;
            out[2 * k + 1] = v.y;
        }
        out
    }

    /// Values of a nodal field at every quadrature point of B.
    pub fn values_at_quadrature(&self, field: &DVector<f64>) -> Vec<Point> {
        let grid = &self.grid;
        let mut out = Vec::with_capacity(grid.quad_points.len());
        for nodes in &grid.cells {
            for (xi, eta, _) in RectGrid::reference_quadrature() {
                let phi = q1_shape(xi, eta);
                let mut v = Point::zeros();
                for k in 0..4 {
                    v.x += phi[k] * field[2 * nodes[k]];
                    v.y += phi[k] * field[2 * nodes[k] + 1];
                }
                out.push(v);
            }
        }
        out
    }
}

/// Euclidean inner product `x^T A y` for a sparse symmetric form.
pub fn form(a: &CsrMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (a * y).dot(x)
}
