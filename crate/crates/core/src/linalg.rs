//! Small dense helpers shared by the distribution and transport code.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues above `-PSD_CLIP` are clipped to zero.
pub const PSD_CLIP: f64 = 1e-9;
/// Eigenvalues below `-NOT_PSD` (relative to scale) are rejected.
pub const NOT_PSD: f64 = 1e-6;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root of a PSD matrix.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    psd_function(m, f64::sqrt)
}

/// `U diag(h(max(λ, 0))) Uᵀ` for a symmetric PSD `m`.
pub fn psd_function(m: &DMatrix<f64>, h: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = m.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -NOT_PSD * scale {
        return Err(Error::NotPsd(min));
    }
    let vals = eig.eigenvalues.map(|l| h(l.max(0.0)));
    let u = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * vals[j]);
    Ok(symmetrize(&(scaled * u.transpose())))
}

/// Clips eigenvalues in `[-PSD_CLIP, 0)` to zero; rejects anything more negative.
pub fn clip_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(sym);
    }
    let scale = m.amax().max(1.0);
    if min < -NOT_PSD * scale {
        return Err(Error::NotPsd(min));
    }
    psd_function(&sym, |l| l)
}

/// A factor `F` with `F Fᵀ = cov`: Cholesky when positive definite, otherwise
/// the eigen-factor `U diag(√λ)`.
pub fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(symmetrize(cov)) {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(symmetrize(cov));
    let scale = cov.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -NOT_PSD * scale {
        return Err(Error::NotPsd(min));
    }
    let u = &eig.eigenvectors;
    Ok(DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()))
}

/// Relative Frobenius distance `‖a - b‖ / max(‖b‖, 1e-300)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Least-squares solve via SVD; returns `None` when `a` has rank below its column count.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, rank_tol: f64) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return None;
    }
    if svd.singular_values.iter().any(|&s| s <= rank_tol * smax) || a.nrows() < a.ncols() {
        return None;
    }
    svd.solve(b, 0.0).ok()
}

/// Smallest singular value.
pub fn sigma_min(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let sv = a.singular_values();
    if a.nrows() < a.ncols() {
        0.0
    } else {
        sv.min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((spd_sqrt(&i).unwrap() - &i).amax() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = spd_sqrt(&d).unwrap();
        assert!((r - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).amax() < 1e-12);
    }

    #[test]
    fn sqrt_rejects_negative_definite() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-3]));
        assert!(matches!(spd_sqrt(&m), Err(Error::NotPsd(_))));
        let slight = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-10]));
        assert!(spd_sqrt(&slight).is_ok());
    }

    #[test]
    fn factor_of_singular_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = covariance_factor(&cov).unwrap();
        assert!((&f * f.transpose() - cov).amax() < 1e-12);
    }
}
