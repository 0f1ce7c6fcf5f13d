//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Flips the sign of `v` so that its largest-magnitude entry is positive
/// (first such entry on ties).
pub(crate) fn sign_fix(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in descending
/// order and sign-fixed eigenvectors as columns.
pub(crate) fn symmetric_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        sign_fix(&mut col);
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Removes from `v` its components along the orthonormal `basis` (two
/// passes of modified Gram-Schmidt).
pub(crate) fn project_out(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(v);
            v.axpy(-c, q, 1.0);
        }
    }
}

/// Modified Gram-Schmidt with re-orthogonalisation. Vectors whose residual
/// norm falls to `drop_tol * scale` or below are dropped. Input order is
/// preserved among the kept vectors.
pub(crate) fn gram_schmidt(
    vectors: impl IntoIterator<Item = DVector<f64>>,
    drop_tol: f64,
    scale: f64,
) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for mut v in vectors {
        project_out(&mut v, &basis);
        let norm = v.norm();
        if norm > drop_tol * scale && norm > 0.0 {
            v /= norm;
            basis.push(v);
        }
    }
    basis
}

pub(crate) fn columns_to_matrix(rows: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_descending_and_sign_fixed() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 5.0]);
        let (vals, vecs) = symmetric_eigen_desc(m);
        assert_eq!(vals, vec![5.0, 2.0]);
        assert_eq!(vecs.column(0).as_slice(), &[0.0, 1.0]);
        assert_eq!(vecs.column(1).as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn gram_schmidt_drops_dependent_vectors() {
        let a = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 2.0, 0.0]);
        let c = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        let q = gram_schmidt([a, b, c], 1e-10, 2.0);
        assert_eq!(q.len(), 2);
        assert!(q[0].dot(&q[1]).abs() < 1e-15);
        assert!((q[1].norm() - 1.0).abs() < 1e-15);
    }
}
