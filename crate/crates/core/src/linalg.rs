//! Small dense helpers for the 2×2 covariance algebra used throughout the crate.

use nalgebra::{Matrix2, Matrix4, Vector4};

use crate::error::{Error, Result};

pub type Mat2 = Matrix2<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
pub type Row2 = nalgebra::RowVector2<f64>;

#[inline]
pub fn symmetrize(m: &Mat2) -> Mat2 {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry; cheap and scale-faithful for 2×2 residual checks.
#[inline]
pub fn max_abs(m: &Mat2) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn asymmetry(m: &Mat2) -> f64 {
    (m[(0, 1)] - m[(1, 0)]).abs()
}

/// True if `m` is symmetric to `rel_tol` (relative to its largest entry) and
/// positive-definite.
pub fn is_symmetric_pd(m: &Mat2, rel_tol: f64) -> bool {
    let scale = max_abs(m);
    if !(scale.is_finite()) || scale == 0.0 {
        return false;
    }
    asymmetry(m) <= rel_tol * scale && m[(0, 0)] > 0.0 && m.determinant() > 0.0
}

pub fn require_pd(m: &Mat2, what: &'static str) -> Result<()> {
    if is_symmetric_pd(m, 1e-8) {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite { what })
    }
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn sym_eigenvalues(m: &Mat2) -> (f64, f64) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - radius, mean + radius)
}

/// Eigenvalues of a general real 2×2 matrix as (re, im) pairs.
pub fn eigenvalues(m: &Mat2) -> [(f64, f64); 2] {
    let tr = m.trace();
    let det = m.determinant();
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        [(0.5 * tr - r, 0.0), (0.5 * tr + r, 0.0)]
    } else {
        let r = (-disc).sqrt();
        [(0.5 * tr, -r), (0.5 * tr, r)]
    }
}

pub fn is_hurwitz(m: &Mat2) -> bool {
    eigenvalues(m).iter().all(|&(re, _)| re < 0.0)
}

/// Solves `a·X + X·aᵀ + q = 0` through its 4×4 Kronecker form.
pub fn solve_lyapunov(a: &Mat2, q: &Mat2) -> Result<Mat2> {
    if !is_hurwitz(a) {
        return Err(Error::NotHurwitz);
    }
    // vec(aX + Xaᵀ) = (I⊗a + a⊗I) vec(X), column-major vec.
    let mut k = Matrix4::<f64>::zeros();
    for col in 0..2 {
        for row in 0..2 {
            let idx = col * 2 + row;
            for m in 0..2 {
                // (aX)[row, col] = Σ_m a[row, m] X[m, col]
                k[(idx, col * 2 + m)] += a[(row, m)];
                // (Xaᵀ)[row, col] = Σ_m X[row, m] a[col, m]
                k[(idx, m * 2 + row)] += a[(col, m)];
            }
        }
    }
    let rhs = -Vector4::new(q[(0, 0)], q[(1, 0)], q[(0, 1)], q[(1, 1)]);
    let x = k.lu().solve(&rhs).ok_or(Error::NotHurwitz)?;
    Ok(symmetrize(&Mat2::new(x[0], x[2], x[1], x[3])))
}

/// Rotation by `phi` radians in the (x, p) plane.
pub fn rotation(phi: f64) -> Mat2 {
    let (s, c) = phi.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// 2-norm condition number of a general 2×2 matrix.
pub fn condition_number(m: &Mat2) -> f64 {
    let (lo, hi) = sym_eigenvalues(&(m.transpose() * m));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lyapunov_residual_is_tiny() {
        let a = Mat2::new(-1.0, 0.3, -0.2, -2.5);
        let q = Mat2::new(2.0, 0.1, 0.1, 0.7);
        let x = solve_lyapunov(&a, &q).unwrap();
        let res = a * x + x * a.transpose() + q;
        assert!(max_abs(&res) < 1e-13);
    }

    #[test]
    fn lyapunov_rejects_unstable_drift() {
        let a = Mat2::new(0.1, 0.0, 0.0, -1.0);
        assert!(matches!(
            solve_lyapunov(&a, &Mat2::identity()),
            Err(Error::NotHurwitz)
        ));
    }

    #[test]
    fn symmetric_eigenvalues_match_nalgebra() {
        let m = Mat2::new(1.3, -0.4, -0.4, 0.2);
        let (lo, hi) = sym_eigenvalues(&m);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert_relative_eq!(lo, ev[0], epsilon = 1e-14);
        assert_relative_eq!(hi, ev[1], epsilon = 1e-14);
    }

    #[test]
    fn pd_check() {
        assert!(is_symmetric_pd(&Mat2::identity(), 1e-12));
        assert!(!is_symmetric_pd(&Mat2::new(1.0, 2.0, 2.0, 1.0), 1e-12));
        assert!(!is_symmetric_pd(&Mat2::new(1.0, 0.1, 0.0, 1.0), 1e-12));
    }
}
