//! Matrix differential calculus kernel.
//!
//! Everything here uses the column-major `vec` convention: `vec(M)` stacks the
//! columns of `M` on top of each other. The Kronecker identities
//! `vec(AXB) = (Bᵀ ⊗ A) vec(X)` and `K_mn vec(A) = vec(Aᵀ)` only hold under a
//! single consistent convention, so no other ordering is used anywhere in the
//! crate.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{PmgaError, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type RowVector = RowDVector<f64>;

/// Gram volumes below this are treated as a degenerate tangent.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-12;

/// Column-major stacking of `m`.
pub fn vec(m: &Mat) -> Vector {
    // nalgebra stores dense matrices column-major, so the storage order is vec(M).
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for a `rows × cols` target.
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Mat> {
    if v.len() != rows * cols {
        return Err(PmgaError::Dimension(format!(
            "cannot reshape a vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Mat::from_column_slice(rows, cols, v.as_slice()))
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

/// The `mn × mn` commutation matrix with `K_mn vec(A) = vec(Aᵀ)` for `A` of size `m × n`.
pub fn commutation_matrix(m: usize, n: usize) -> Mat {
    let mut k = Mat::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            // A[i, j] sits at i + j*m in vec(A) and at j + i*n in vec(Aᵀ).
            k[(j + i * n, i + j * m)] = 1.0;
        }
    }
    k
}

/// `N_b = ½ (I_{b²} + K_bb)`.
pub fn symmetrizer(b: usize) -> Mat {
    (identity(b * b) + commutation_matrix(b, b)) * 0.5
}

/// Gram volume of a tangent matrix together with its degeneracy status.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramVolume {
    /// `sqrt(det(TᵀT))`, with negative round-off clamped to zero.
    pub volume: f64,
    /// `det(TᵀT)` after clamping.
    pub det: f64,
    /// True when the volume fell below the rank tolerance.
    pub degenerate: bool,
}

/// `sqrt(det(TᵀT))` for a `q × b` matrix with `q ≥ b`.
pub fn gram_volume(t: &Mat) -> Result<GramVolume> {
    gram_volume_with_tolerance(t, DEFAULT_RANK_TOLERANCE)
}

pub fn gram_volume_with_tolerance(t: &Mat, tolerance: f64) -> Result<GramVolume> {
    check_tall(t)?;
    let gram = t.transpose() * t;
    let det = gram.determinant().max(0.0);
    Ok(GramVolume {
        volume: det.sqrt(),
        det,
        degenerate: det.sqrt() < tolerance,
    })
}

/// Derivative of `det(TᵀT)` with respect to `vec(T)ᵀ`, a `1 × qb` row:
///
/// `det(TᵀT) · vec((TᵀT)⁻ᵀ)ᵀ · 2 N_b (I_b ⊗ Tᵀ)`.
///
/// The inverse comes from a Cholesky factorization; a Gram matrix that is not
/// numerically positive definite is reported as singular instead of being
/// pseudo-inverted.
pub fn gram_det_row_derivative(t: &Mat) -> Result<RowVector> {
    gram_det_row_derivative_with_tolerance(t, DEFAULT_RANK_TOLERANCE)
}

pub fn gram_det_row_derivative_with_tolerance(t: &Mat, tolerance: f64) -> Result<RowVector> {
    check_tall(t)?;
    let b = t.ncols();
    let gram = t.transpose() * t;
    let det = gram.determinant();
    if !(det.max(0.0).sqrt() >= tolerance) {
        return Err(PmgaError::SingularGram { det });
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(PmgaError::SingularGram { det })?;
    let inv_t = chol.inverse().transpose();
    let lhs = vec(&inv_t).transpose() * det;
    let dgram = symmetrizer(b) * kron(&identity(b), &t.transpose()) * 2.0;
    Ok(lhs * dgram)
}

/// Re-index the stacked Hessian `[H J_1; …; H J_q]` (`qd × d`) into
/// `D_θ vec(D_θ J)`, using `out[(i + q·m), n] = H_i[m, n]` (zero-based).
pub fn hessian_stack_to_jacobian_derivative(hj: &Mat, q: usize, d: usize) -> Result<Mat> {
    check_stack(hj, q, d)?;
    let mut out = Mat::zeros(q * d, d);
    for i in 0..q {
        for m in 0..d {
            for n in 0..d {
                out[(i + q * m, n)] = hj[(i * d + m, n)];
            }
        }
    }
    Ok(out)
}

/// Inverse permutation of [`hessian_stack_to_jacobian_derivative`].
pub fn jacobian_derivative_to_hessian_stack(djac: &Mat, q: usize, d: usize) -> Result<Mat> {
    check_stack(djac, q, d)?;
    let mut out = Mat::zeros(q * d, d);
    for i in 0..q {
        for m in 0..d {
            for n in 0..d {
                out[(i * d + m, n)] = djac[(i + q * m, n)];
            }
        }
    }
    Ok(out)
}

fn check_tall(t: &Mat) -> Result<()> {
    if t.nrows() == 0 || t.ncols() == 0 || t.nrows() < t.ncols() {
        return Err(PmgaError::Dimension(format!(
            "tangent matrix must be q x b with q >= b >= 1, got {}x{}",
            t.nrows(),
            t.ncols()
        )));
    }
    Ok(())
}

fn check_stack(m: &Mat, q: usize, d: usize) -> Result<()> {
    if q == 0 || d == 0 || m.nrows() != q * d || m.ncols() != d {
        return Err(PmgaError::Dimension(format!(
            "expected a {}x{} Hessian stack, got {}x{}",
            q * d,
            d,
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(rows: usize, cols: usize, row_major: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, row_major)
    }

    #[test]
    fn vec_is_column_major() {
        let m = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&Mat::zeros(2, 3)).as_slice(), &[0.0; 6]);
        let col = mat(3, 1, &[7.0, 8.0, 9.0]);
        assert_eq!(vec(&col).as_slice(), col.as_slice());
    }

    #[test]
    fn kron_small_cases() {
        let five = mat(1, 1, &[5.0]);
        assert_eq!(kron(&identity(2), &five), mat(2, 2, &[5.0, 0.0, 0.0, 5.0]));
        let out = kron(&mat(2, 1, &[1.0, 2.0]), &mat(1, 1, &[3.0]));
        assert_eq!(out, mat(2, 1, &[3.0, 6.0]));
    }

    #[test]
    fn kron_vec_identity_against_dense_product() {
        let a = mat(2, 2, &[0.3, -1.2, 2.5, 0.7]);
        let x = mat(2, 2, &[1.1, 0.4, -0.9, 2.0]);
        let b = mat(2, 2, &[-0.5, 1.5, 0.25, 3.0]);
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
    }

    #[test]
    fn commutation_examples() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let out = commutation_matrix(2, 2) * vec(&a);
        assert_eq!(out.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(out, vec(&a.transpose()));
        for n in 1..5 {
            assert_eq!(commutation_matrix(1, n), identity(n));
        }
        assert_eq!(commutation_matrix(3, 2) * commutation_matrix(2, 3), identity(6));
    }

    #[test]
    fn symmetrizer_examples() {
        assert_eq!(symmetrizer(1), mat(1, 1, &[1.0]));
        let n2 = symmetrizer(2);
        assert_eq!(&n2 * &n2, n2);
        let rank = n2.clone().svd(false, false).rank(1e-10);
        assert_eq!(rank, 3);
    }

    #[test]
    fn gram_volume_examples() {
        assert_eq!(gram_volume(&mat(2, 1, &[1.0, 0.0])).unwrap().volume, 1.0);
        assert_relative_eq!(gram_volume(&mat(2, 1, &[3.0, 4.0])).unwrap().volume, 5.0);
        let twin = mat(3, 2, &[1.0, 1.0, 2.0, 2.0, -1.0, -1.0]);
        let g = gram_volume(&twin).unwrap();
        assert_eq!(g.volume, 0.0);
        assert!(g.degenerate);
        assert!(gram_volume(&mat(1, 2, &[1.0, 2.0])).is_err());
    }

    #[test]
    fn gram_det_derivative_small_cases() {
        let d = gram_det_row_derivative(&mat(2, 1, &[1.0, 0.0])).unwrap();
        assert_relative_eq!(d[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(d[1], 0.0, epsilon = 1e-12);
        // det(TᵀT) = T11² + T21² for a single column.
        let d = gram_det_row_derivative(&mat(2, 1, &[3.0, 4.0])).unwrap();
        assert_relative_eq!(d[0], 6.0, epsilon = 1e-12);
        assert_relative_eq!(d[1], 8.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_det_derivative_rejects_singular() {
        let twin = mat(3, 2, &[1.0, 1.0, 2.0, 2.0, -1.0, -1.0]);
        assert!(matches!(
            gram_det_row_derivative(&twin),
            Err(PmgaError::SingularGram { .. })
        ));
    }

    #[test]
    fn hessian_reindex_matches_index_formula() {
        let (q, d) = (2, 2);
        let a = mat(2, 2, &[1.0, 2.0, 2.0, 5.0]);
        let b = mat(2, 2, &[-3.0, 0.5, 0.5, 7.0]);
        let mut stack = Mat::zeros(4, 2);
        stack.view_mut((0, 0), (2, 2)).copy_from(&a);
        stack.view_mut((2, 0), (2, 2)).copy_from(&b);
        let out = hessian_stack_to_jacobian_derivative(&stack, q, d).unwrap();
        let blocks = [&a, &b];
        for (i, blk) in blocks.iter().enumerate() {
            for m in 0..d {
                for n in 0..d {
                    assert_eq!(out[(i + q * m, n)], blk[(m, n)]);
                }
            }
        }
        let back = jacobian_derivative_to_hessian_stack(&out, q, d).unwrap();
        assert_eq!(back, stack);
    }

    #[test]
    fn hessian_reindex_single_objective_is_identity() {
        let h = mat(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 4.0]);
        assert_eq!(hessian_stack_to_jacobian_derivative(&h, 1, 3).unwrap(), h);
        assert!(hessian_stack_to_jacobian_derivative(&h, 2, 3).is_err());
    }
}
