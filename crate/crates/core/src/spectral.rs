//! Symmetric eigendecomposition with a reproducible basis, and the classical
//! spectral filters built from it (Fourier basis, polynomials, projections).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Inputs may deviate from exact symmetry by at most this (relative to scale).
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues closer than this (relative to the spectral radius) share an eigenspace.
const CLUSTER_TOL: f64 = 1e-9;
/// Coordinates below this magnitude are treated as zero by the sign rule.
const SIGN_EPS: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix, eigenvalues nondecreasing, eigenvectors
/// as orthonormal columns.
///
/// Each eigenvector's first non-negligible coordinate is positive. Inside a
/// repeated eigenvalue the basis is the ordered Gram–Schmidt of the standard
/// basis vectors projected onto the eigenspace, so the result does not depend
/// on the underlying solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(λ) Uᵀ`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.spectral_map(|l| l)
    }

    /// `U diag(h(λ)) Uᵀ`
    pub fn spectral_map(&self, h: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        let scaled = DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * h(self.eigenvalues[j]));
        scaled * u.transpose()
    }

    /// Indices of eigenvalues inside `[lo, hi]`, endpoints included.
    pub fn indices_in_range(&self, lo: f64, hi: f64) -> Vec<usize> {
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &l)| l >= lo && l <= hi)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Maximum `|a_ij - a_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn eigendecompose(s: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: s.ncols() });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let scale = s.amax().max(1.0);
    let asym = asymmetry(s);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let raw = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);

    let radius = values.amax().max(1.0);
    let mut vectors = raw.clone();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[end] - values[end - 1] <= CLUSTER_TOL * radius {
            end += 1;
        }
        if end - start > 1 {
            let block = canonical_basis(&raw.columns(start, end - start).into_owned());
            vectors.columns_mut(start, end - start).copy_from(&block);
        }
        start = end;
    }
    for mut col in vectors.column_iter_mut() {
        if let Some(first) = col.iter().find(|v| v.abs() > SIGN_EPS) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
    }
    // average eigenvalues inside a cluster so repeated values compare equal
    let mut values = values;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[end] - values[end - 1] <= CLUSTER_TOL * radius {
            end += 1;
        }
        if end - start > 1 {
            let mean = values.rows(start, end - start).mean();
            values.rows_mut(start, end - start).fill(mean);
        }
        start = end;
    }
    Ok(SpectralDecomposition { eigenvalues: values, eigenvectors: vectors })
}

/// Ordered Gram–Schmidt of `P e_0, P e_1, ...` where `P` projects onto `span(basis)`.
fn canonical_basis(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = basis.shape();
    let proj = basis * basis.transpose();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(k);
    for e in 0..n {
        if out.len() == k {
            break;
        }
        let mut v: DVector<f64> = proj.column(e).into_owned();
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            out.push(v / norm);
        }
    }
    if out.len() < k {
        return basis.clone();
    }
    DMatrix::from_columns(&out)
}

/// `Σ_k coeffs[k] S^k`, evaluated as `U diag(p(λ)) Uᵀ`.
pub fn polynomial_filter(d: &SpectralDecomposition, coeffs: &[f64]) -> Result<DMatrix<f64>> {
    if coeffs.is_empty() {
        return Err(Error::InvalidArgument("polynomial needs at least one coefficient".into()));
    }
    Ok(d.spectral_map(|l| coeffs.iter().rev().fold(0.0, |acc, c| acc * l + c)))
}

/// Orthogonal projection onto the eigenvectors listed in `band`.
pub fn spectral_projection(d: &SpectralDecomposition, band: &[usize]) -> Result<DMatrix<f64>> {
    let n = d.n();
    let mut p = DMatrix::zeros(n, n);
    for &b in band {
        if b >= n {
            return Err(Error::IndexOutOfRange { index: b, size: n });
        }
    }
    let mut idx = band.to_vec();
    idx.sort_unstable();
    idx.dedup();
    for b in idx {
        let u = d.eigenvectors.column(b);
        p.ger(1.0, &u, &u, 1.0);
    }
    Ok(p)
}

/// Graph Fourier transform in the analysis direction, `Uᵀ`.
pub fn fourier_matrix(d: &SpectralDecomposition) -> DMatrix<f64> {
    d.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_path, GsoKind};

    fn p2_laplacian() -> DMatrix<f64> {
        build_path(2).unwrap().gso(GsoKind::Laplacian).unwrap()
    }

    #[test]
    fn p2_laplacian_spectrum() {
        let d = eigendecompose(&p2_laplacian()).unwrap();
        assert!((d.eigenvalues[0]).abs() < 1e-12);
        assert!((d.eigenvalues[1] - 2.0).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.eigenvectors[(0, 0)] - s).abs() < 1e-12);
        assert!((d.eigenvectors[(1, 0)] - s).abs() < 1e-12);
        assert!((d.eigenvectors[(0, 1)] - s).abs() < 1e-12);
        assert!((d.eigenvectors[(1, 1)] + s).abs() < 1e-12);
    }

    #[test]
    fn identity_gives_identity_basis() {
        let d = eigendecompose(&DMatrix::identity(5, 5)).unwrap();
        assert!(d.eigenvalues.iter().all(|&l| l == 1.0));
        assert!((fourier_matrix(&d) - DMatrix::<f64>::identity(5, 5)).amax() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.1, 0.0]);
        assert!(matches!(eigendecompose(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn connected_laplacian_has_constant_null_vector() {
        let l = crate::graph::build_lattice(3, 3).unwrap().gso(GsoKind::Laplacian).unwrap();
        let d = eigendecompose(&l).unwrap();
        assert!(d.eigenvalues[0].abs() < 1e-12);
        let c = 1.0 / 3.0;
        assert!(d.eigenvectors.column(0).iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn basis_is_independent_of_input_rotation_in_degenerate_spaces() {
        // C4 Laplacian has eigenvalue 2 twice
        let l = crate::graph::build_lattice(2, 2).unwrap().gso(GsoKind::Laplacian).unwrap();
        let a = eigendecompose(&l).unwrap();
        assert!((a.eigenvalues[1] - a.eigenvalues[2]).abs() == 0.0);
        let u = &a.eigenvectors;
        assert!((u.transpose() * u - DMatrix::<f64>::identity(4, 4)).amax() < 1e-12);

        let block = u.columns(1, 2).into_owned();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let rotated = canonical_basis(&(&block * rot));
        assert!((canonical_basis(&block) - rotated).amax() < 1e-12);
    }

    #[test]
    fn polynomial_examples() {
        let d = eigendecompose(&p2_laplacian()).unwrap();
        let id = polynomial_filter(&d, &[1.0]).unwrap();
        assert!((id - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        let s = polynomial_filter(&d, &[0.0, 1.0]).unwrap();
        assert!((s - p2_laplacian()).amax() < 1e-8);
        let sq = polynomial_filter(&d, &[0.0, 0.0, 1.0]).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]);
        assert!((sq - want).amax() < 1e-12);
        assert!(polynomial_filter(&d, &[]).is_err());
    }

    #[test]
    fn projection_examples() {
        let l = crate::graph::build_lattice(2, 3).unwrap().gso(GsoKind::Laplacian).unwrap();
        let d = eigendecompose(&l).unwrap();
        let full: Vec<usize> = (0..6).collect();
        assert!((spectral_projection(&d, &full).unwrap() - DMatrix::<f64>::identity(6, 6)).amax() < 1e-12);
        assert_eq!(spectral_projection(&d, &[]).unwrap(), DMatrix::zeros(6, 6));
        let p0 = spectral_projection(&d, &[0]).unwrap();
        assert!(p0.iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-12));
        assert!(matches!(spectral_projection(&d, &[6]), Err(Error::IndexOutOfRange { index: 6, size: 6 })));
    }

    #[test]
    fn fourier_of_constant_signal_on_p2() {
        let d = eigendecompose(&p2_laplacian()).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let hat = fourier_matrix(&d) * &x;
        assert!((hat[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!(hat[1].abs() < 1e-12);
        assert!((hat.norm() - x.norm()).abs() < 1e-10);
    }

    #[test]
    fn range_band_includes_endpoints() {
        let d = eigendecompose(&p2_laplacian()).unwrap();
        assert_eq!(d.indices_in_range(0.0, 2.0), vec![0, 1]);
        assert_eq!(d.indices_in_range(1.0, 1.5), Vec::<usize>::new());
    }
}
