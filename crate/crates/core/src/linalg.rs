//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order; eigenvector columns follow the same order and have
/// their first non-negligible entry positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    normalize_signs(&mut vectors);
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Flip columns so that the first entry with magnitude above `1e-12` is positive.
pub fn normalize_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Orthonormal basis of the column space of a full-column-rank matrix.
pub fn orthonormal_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let mut q = a.clone().qr().q();
    normalize_signs(&mut q);
    q
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// orthonormal columns of `q`, taken as the unit eigenspace of `I − QQᵀ`.
pub fn orthogonal_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let d = q.nrows();
    let k = q.ncols();
    if k == 0 {
        return DMatrix::identity(d, d);
    }
    let proj = DMatrix::identity(d, d) - q * q.transpose();
    let (_, vecs) = sym_eigen_desc(&proj);
    let mut c = vecs.columns(0, d - k).into_owned();
    // one Gram–Schmidt sweep against q removes residual leakage
    for j in 0..c.ncols() {
        let mut v = c.column(j).into_owned();
        v -= q * (q.transpose() * &v);
        for i in 0..j {
            let prev = c.column(i).into_owned();
            let dot = prev.dot(&v);
            v -= prev * dot;
        }
        let nrm = v.norm();
        c.set_column(j, &(v / nrm));
    }
    normalize_signs(&mut c);
    c
}

/// Singular values of `a`, largest first.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen_desc(m);
    vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Unique symmetric positive-definite square root; `None` if some
/// eigenvalue is not above `floor`.
pub fn sqrt_spd(m: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen_desc(m);
    if vals.last().is_some_and(|&v| v <= floor) {
        return None;
    }
    let roots = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.sqrt()));
    let scaled = &vecs * DMatrix::from_diagonal(&roots);
    Some(symmetrize(&(scaled * vecs.transpose())))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals.len(), 3);
        assert!((vals[0] - 5.0).abs() < 1e-14 && (vals[2] - 1.0).abs() < 1e-14);
        assert!((vecs[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn complement_is_orthonormal() {
        let t = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -0.5]);
        let q = orthonormal_columns(&t);
        let c = orthogonal_complement(&q);
        assert_eq!(c.ncols(), 2);
        let mut p = DMatrix::zeros(3, 3);
        p.columns_mut(0, 2).copy_from(&c);
        p.columns_mut(2, 1).copy_from(&q);
        let err = max_abs(&(p.transpose() * &p - DMatrix::identity(3, 3)));
        assert!(err <= 1e-14, "{err}");
    }

    #[test]
    fn spd_square_root() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sqrt_spd(&m, 1e-12).unwrap();
        assert!(max_abs(&(&s * &s - &m)) < 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(sqrt_spd(&bad, 1e-12).is_none());
    }
}
