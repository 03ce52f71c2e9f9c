//! Small helpers over nalgebra shared by the PCA-based stages.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order; eigenvectors are the matching columns.
pub fn symmetric_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the solver's order on exact ties.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Flips each column so its largest-magnitude entry is positive (first
/// such entry on ties).
pub fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Columns of `vectors` stacked into a `dim x n` matrix.
pub fn columns(vectors: &[&[f64]]) -> DMatrix<f64> {
    let dim = vectors.first().map_or(0, |v| v.len());
    DMatrix::from_fn(dim, vectors.len(), |r, c| vectors[c][r])
}

pub fn mean_vector(vectors: &[&[f64]]) -> DVector<f64> {
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut mean = DVector::zeros(dim);
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    mean / vectors.len() as f64
}
