//! Small dense linear-algebra helpers shared by the diffusion baselines and
//! the clustering stage.

use nalgebra::SymmetricEigen;

use crate::{Error, Matrix, Result};

const EIG_EPS: f64 = 1e-14;
const EIG_MAX_ITERS: usize = 100_000;

/// Eigenpairs of a symmetric matrix with eigenvalues in ascending order.
/// Column `k` of the returned matrix is the eigenvector for value `k`.
pub fn symmetric_eigen_ascending(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let eig = SymmetricEigen::try_new(m.clone(), EIG_EPS, EIG_MAX_ITERS).ok_or(Error::EigFailure)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Matrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Principal component analysis of the rows of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: nalgebra::RowDVector<f64>,
    /// `dims x C`; each row is a unit principal axis, largest variance first.
    pub components: Matrix,
    /// Variance along each kept axis.
    pub explained_variance: Vec<f64>,
    /// Sum of variances over all channels.
    pub total_variance: f64,
    /// `R x dims` projections of the centered rows.
    pub scores: Matrix,
}

/// Fits PCA through the eigendecomposition of the `C x C` covariance matrix.
/// Axis signs are fixed so the largest-magnitude loading is positive.
pub fn pca(x: &Matrix, dims: usize) -> Result<Pca> {
    let (r, c) = x.shape();
    if r == 0 || dims > c {
        return Err(Error::InvalidInput(format!("cannot take {dims} components of a {r}x{c} matrix")));
    }
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / r as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    let (values, vectors) = symmetric_eigen_ascending(&cov)?;
    let mut components = Matrix::zeros(dims, c);
    let mut explained = Vec::with_capacity(dims);
    for k in 0..dims {
        let col = c - 1 - k;
        let mut axis = vectors.column(col).transpose();
        let pivot = axis.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            axis.neg_mut();
        }
        components.set_row(k, &axis);
        explained.push(values[col].max(0.0));
    }
    let scores = &centered * components.transpose();
    Ok(Pca {
        mean,
        components,
        explained_variance: explained,
        total_variance: values.iter().map(|v| v.max(0.0)).sum(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_ascending_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Matrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let m = &b + b.transpose();
        let (vals, vecs) = symmetric_eigen_ascending(&m).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let recon = &vecs * Matrix::from_diagonal(&nalgebra::DVector::from_vec(vals)) * vecs.transpose();
        assert!((recon - m).abs().max() < 1e-10);
    }

    #[test]
    fn rank_one_data_has_one_component() {
        let dir = [0.6, -0.8, 0.0];
        let x = Matrix::from_fn(30, 3, |r, c| (r as f64 - 7.0) * dir[c] + 1.0);
        let p = pca(&x, 1).unwrap();
        assert!(p.explained_variance[0] >= (1.0 - 1e-9) * p.total_variance);
    }
}
