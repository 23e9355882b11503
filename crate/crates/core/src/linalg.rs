//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Eigenvalues and eigenvectors of a symmetric matrix, eigenvalues ascending.
///
/// Each eigenvector is sign-normalized so its first entry with magnitude
/// above 1e-12 is positive.
pub fn sorted_symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v = eig.eigenvectors.column(i).into_owned();
            if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
                if first < 0.0 {
                    v.neg_mut();
                }
            }
            v
        })
        .collect();
    (values, vectors)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest absolute difference between two equally-shaped matrices.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Orthonormal basis of the complement of the unit vector `u`.
pub fn orthogonal_complement(u: &DVector<f64>) -> DMatrix<f64> {
    let d = u.len();
    let proj = DMatrix::identity(d, d) - u * u.transpose();
    let (values, vectors) = sorted_symmetric_eigen(&proj);
    let cols: Vec<DVector<f64>> = values.iter().zip(vectors).filter(|(v, _)| **v > 0.5).map(|(_, vec)| vec).collect();
    DMatrix::from_columns(&cols)
}
