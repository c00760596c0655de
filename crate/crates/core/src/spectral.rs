//! Discrete eigenbases: divergence-free Stokes-type modes on Omega and
//! `H^1(B)` modes of the c-form on the reference solid.

use nalgebra::{ColPivQR, DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};
use crate::fem::{FluidOperators, SolidOperators, Viscosity};
use crate::linalg::{fix_signs, generalized_symmetric_eigen};

/// Relative pivot threshold below which a column of the divergence is treated as dependent.
const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis (columns) of the discretely divergence-free, zero-trace velocities.
#[derive(Debug, Clone)]
pub struct DivFreeSubspace {
    pub basis: DMatrix<f64>,
    pub divergence_rank: usize,
}

impl DivFreeSubspace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Null space of the discrete divergence via a column-pivoted QR of its transpose.
pub fn build_divfree_subspace(divergence: &CsrMatrix<f64>) -> Result<DivFreeSubspace> {
    let n = divergence.ncols();
    let bt = DMatrix::from(&divergence.transpose());
    let qr = ColPivQR::new(bt);
    let r = qr.r();
    let diag_len = r.nrows().min(r.ncols());
    let lead = if diag_len > 0 { r[(0, 0)].abs() } else { 0.0 };
    let rank = (0..diag_len)
        .take_while(|&i| r[(i, i)].abs() > RANK_TOL * lead)
        .count();
    if rank >= n {
        return Err(Error::EmptyNullSpace);
    }
    // Rows of Q^T beyond the rank are orthogonal to every column of B^T.
    let mut qt = DMatrix::identity(n, n);
    qr.q_tr_mul(&mut qt);
    let basis = qt.rows(rank, n - rank).transpose();
    Ok(DivFreeSubspace {
        basis,
        divergence_rank: rank,
    })
}

/// First `m` eigenpairs of `a(psi, v) = lambda_f (psi, v)` over divergence-free fields.
#[derive(Debug, Clone)]
pub struct FluidEigenBasis {
    /// Nondecreasing, positive.
    pub eigenvalues: DVector<f64>,
    /// `L^2(Omega)`-orthonormal modes, one column per eigenvalue, on the velocity dofs.
    pub modes: DMatrix<f64>,
    pub subspace_dim: usize,
    pub viscosity: Viscosity,
}

impl FluidEigenBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// The first `m` modes of a larger basis.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.len() {
            return Err(Error::TooManyModes {
                requested: m,
                available: self.len(),
            });
        }
        Ok(FluidEigenBasis {
            eigenvalues: self.eigenvalues.rows(0, m).into_owned(),
            modes: self.modes.columns(0, m).into_owned(),
            subspace_dim: self.subspace_dim,
            viscosity: self.viscosity,
        })
    }
}

pub fn validate_viscosity(viscosity: &Viscosity) -> Result<()> {
    let ok = |v: f64| v.is_finite() && v > 0.0;
    if !ok(viscosity.nu_f) || !ok(viscosity.nu_s) {
        return Err(Error::InvalidParams(format!(
            "viscosities must be positive, got nu_f = {}, nu_s = {}",
            viscosity.nu_f, viscosity.nu_s
        )));
    }
    Ok(())
}

pub fn solve_fluid_eigenproblem(
    ops: &FluidOperators,
    subspace: &DivFreeSubspace,
    viscosity: &Viscosity,
    m: usize,
) -> Result<FluidEigenBasis> {
    validate_viscosity(viscosity)?;
    if m == 0 || m > subspace.dim() {
        return Err(Error::TooManyModes {
            requested: m,
            available: subspace.dim(),
        });
    }
    let z = &subspace.basis;
    let a_red = z.transpose() * (&ops.viscous * z);
    let m_red = z.transpose() * (&ops.mass * z);
    let (values, vectors) = generalized_symmetric_eigen(&a_red, &m_red)?;
    if values[0] <= 0.0 {
        return Err(Error::Eigen(format!(
            "viscous form is not coercive on the divergence-free space (lambda_1 = {})",
            values[0]
        )));
    }
    let mut modes = z * vectors.columns(0, m);
    fix_signs(&mut modes);
    Ok(FluidEigenBasis {
        eigenvalues: values.rows(0, m).into_owned(),
        modes,
        subspace_dim: subspace.dim(),
        viscosity: *viscosity,
    })
}

/// First `R` eigenpairs of `c(mu, chi) = lambda_s (chi, mu)_B`, normalized so `c(chi, chi) = 1`.
#[derive(Debug, Clone)]
pub struct SolidEigenBasis {
    /// Nondecreasing, `>= 1`.
    pub eigenvalues: DVector<f64>,
    /// Vector modes on the solid dofs, one column each.
    pub modes: DMatrix<f64>,
    /// `c_r = |chi_r|^2_{0,B} = 1 / lambda_sr`.
    pub c: DVector<f64>,
    /// `d_r = |grad_s chi_r|^2_{0,B} = (lambda_sr - 1) / lambda_sr`.
    pub d: DVector<f64>,
}

impl SolidEigenBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn truncated(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.len() {
            return Err(Error::TooManyModes {
                requested: r,
                available: self.len(),
            });
        }
        Ok(SolidEigenBasis {
            eigenvalues: self.eigenvalues.rows(0, r).into_owned(),
            modes: self.modes.columns(0, r).into_owned(),
            c: self.c.rows(0, r).into_owned(),
            d: self.d.rows(0, r).into_owned(),
        })
    }
}

/// The two velocity components decouple in the c-form, so the vector modes
/// are the scalar Neumann modes placed in the x and then the y component.
pub fn solve_solid_eigenproblem(ops: &SolidOperators, r: usize) -> Result<SolidEigenBasis> {
    let nodes = ops.scalar_mass.nrows();
    if r == 0 || r > 2 * nodes {
        return Err(Error::TooManyModes {
            requested: r,
            available: 2 * nodes,
        });
    }
    let mass = DMatrix::from(&ops.scalar_mass);
    let cform = DMatrix::from(&ops.scalar_stiffness) + &mass;
    let (values, mut vectors) = generalized_symmetric_eigen(&cform, &mass)?;
    fix_signs(&mut vectors);

    let mut eigenvalues = DVector::zeros(r);
    let mut modes = DMatrix::zeros(2 * nodes, r);
    for col in 0..r {
        let (k, comp) = (col / 2, col % 2);
        let lambda = values[k];
        let scale = 1.0 / lambda.sqrt();
        eigenvalues[col] = lambda;
        for node in 0..nodes {
            modes[(2 * node + comp, col)] = vectors[(node, k)] * scale;
        }
    }
    let c = eigenvalues.map(|l| 1.0 / l);
    let d = eigenvalues.map(|l| (l - 1.0) / l);
    Ok(SolidEigenBasis {
        eigenvalues,
        modes,
        c,
        d,
    })
}

/// Per-mode normalization checks of a fluid basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidModeCheck {
    pub index: usize,
    pub eigenvalue: f64,
    /// `|(psi, psi) - 1|`
    pub l2_error: f64,
    /// `|a(psi, psi) - lambda| / lambda`
    pub a_error: f64,
    pub divergence: f64,
    /// `|A psi - lambda M psi|` restricted to divergence-free directions.
    pub residual: f64,
}

pub fn fluid_mode_checks(
    basis: &FluidEigenBasis,
    ops: &FluidOperators,
    subspace: &DivFreeSubspace,
) -> Vec<FluidModeCheck> {
    (0..basis.len())
        .map(|j| {
            let psi = basis.modes.column(j).into_owned();
            let lambda = basis.eigenvalues[j];
            let mpsi = &ops.mass * &psi;
            let apsi = &ops.viscous * &psi;
            let r = subspace.basis.transpose() * (&apsi - &mpsi * lambda);
            FluidModeCheck {
                index: j + 1,
                eigenvalue: lambda,
                l2_error: (psi.dot(&mpsi) - 1.0).abs(),
                a_error: (psi.dot(&apsi) - lambda).abs() / lambda,
                divergence: (&ops.divergence * &psi).norm(),
                residual: r.norm() / psi.norm(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolidModeCheck {
    pub index: usize,
    pub eigenvalue: f64,
    /// `|c(chi, chi) - 1|`
    pub c_error: f64,
    /// `|(chi, chi)_B - c_r| / c_r`
    pub l2_error: f64,
    pub c_r: f64,
    pub d_r: f64,
    pub residual: f64,
}

pub fn solid_mode_checks(basis: &SolidEigenBasis, ops: &SolidOperators) -> Vec<SolidModeCheck> {
    (0..basis.len())
        .map(|r| {
            let chi = basis.modes.column(r).into_owned();
            let lambda = basis.eigenvalues[r];
            let mchi = &ops.mass * &chi;
            let cchi = &ops.c_form * &chi;
            SolidModeCheck {
                index: r + 1,
                eigenvalue: lambda,
                c_error: (chi.dot(&cchi) - 1.0).abs(),
                l2_error: (chi.dot(&mchi) - basis.c[r]).abs() / basis.c[r],
                c_r: basis.c[r],
                d_r: basis.d[r],
                residual: (&cchi - &mchi * lambda).norm() / chi.norm(),
            }
        })
        .collect()
}

/// Largest off-diagonal entry of `X^T A X` and largest diagonal deviation from `target`.
pub fn gram_errors(
    a: &CsrMatrix<f64>,
    x: &DMatrix<f64>,
    target: impl Fn(usize) -> f64,
) -> (f64, f64) {
    let gram = x.transpose() * (a * x);
    let mut off: f64 = 0.0;
    let mut diag: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            if i == j {
                diag = diag.max((gram[(i, i)] - target(i)).abs());
            } else {
                off = off.max(gram[(i, j)].abs());
            }
        }
    }
    (off, diag)
}
