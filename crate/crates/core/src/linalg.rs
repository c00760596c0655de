//! Dense helpers shared by the eigen, coupling and recovery code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues in
/// nondecreasing order. Ties keep the solver's column order, so the result is
/// reproducible for identical input.
pub fn sorted_symmetric_eigen(a: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .total_cmp(&eig.eigenvalues[j])
            .then(i.cmp(&j))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), n, |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Symmetric-definite pencil `A x = lambda M x`. Returns nondecreasing
/// eigenvalues and `M`-orthonormal eigenvectors as columns.
pub fn generalized_symmetric_eigen(
    a: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Eigen("mass matrix of the pencil is not positive definite".into()))?;
    let l = chol.l();
    // C = L^{-1} A L^{-T}
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let mut c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    symmetrize(&mut c);
    let (values, y) = sorted_symmetric_eigen(c);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    let vectors = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    Ok((values, vectors))
}

pub fn symmetrize(c: &mut DMatrix<f64>) -> f64 {
    let n = c.nrows();
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (c[(i, j)] + c[(j, i)]);
            asym = asym.max((c[(i, j)] - c[(j, i)]).abs());
            c[(i, j)] = avg;
            c[(j, i)] = avg;
        }
    }
    asym
}

/// Flips each column so that its first significant entry is positive.
pub fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let scale = col.amax();
        if scale == 0.0 {
            continue;
        }
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-8 * scale) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Zero-pads or truncates a vector to length `n`.
pub fn resized(v: &DVector<f64>, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| if i < v.len() { v[i] } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pencil_eigenpairs_are_mass_orthonormal() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 1.5]);
        let (vals, vecs) = generalized_symmetric_eigen(&a, &m).unwrap();
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
        let gram = vecs.transpose() * &m * &vecs;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-12);
        for k in 0..3 {
            let x = vecs.column(k);
            let r = &a * x - &m * x * vals[k];
            assert!(r.amax() < 1e-12);
        }
    }

    #[test]
    fn sign_convention_makes_first_entry_positive() {
        let mut v = DMatrix::from_row_slice(3, 2, &[0.0, -1e-20, -2.0, 3.0, 1.0, -1.0]);
        fix_signs(&mut v);
        assert_eq!(v[(1, 0)], 2.0);
        assert_eq!(v[(1, 1)], 3.0);
    }

    #[test]
    fn resize_pads_with_zeros() {
        let v = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(resized(&v, 4).as_slice(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(resized(&v, 1).as_slice(), &[1.0]);
    }
}
