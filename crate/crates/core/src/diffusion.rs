//! Superpoint affinity graph and feature diffusion.
//!
//! The graph is dense: `A_ij = exp(-|h_i - h_j|^2 / C)` over every superpoint
//! pair (self-affinity included), normalized as `D^-1/2 A D^-1/2`. Diffusion
//! repeats `H <- (1 - a) F + a Ã H`, whose fixed point `(I + b L)^-1 F` with
//! `b = a / (1 - a)` is also available through a direct solve.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{pca, symmetric_eigen_ascending};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpointGraph {
    pub affinity: Matrix,
    pub normalized: Matrix,
    pub degrees: Vec<f64>,
}

impl SuperpointGraph {
    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    /// `L = I - Ã`.
    pub fn laplacian(&self) -> Matrix {
        let mut l = -&self.normalized;
        for i in 0..self.len() {
            l[(i, i)] += 1.0;
        }
        l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionCfg {
    pub alpha: f64,
    pub max_iters: usize,
    /// Stop once the largest absolute update falls below this.
    pub tol: f64,
}

impl Default for DiffusionCfg {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            max_iters: 200,
            tol: 1e-10,
        }
    }
}

impl DiffusionCfg {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionOutput {
    pub features: Matrix,
    pub iters: usize,
    /// False when `max_iters` was reached with the last step still above `tol`.
    pub converged: bool,
}

const CANCELLATION: f64 = 1e-8;

pub fn build_graph(features: &Matrix) -> SuperpointGraph {
    let (n, c) = features.shape();
    let gamma = if c == 0 { 0.0 } else { 1.0 / c as f64 };
    // |h_i - h_j|^2 from the Gram matrix; mirroring keeps the result exactly
    // symmetric whatever the summation order of the product. Near-duplicate
    // pairs, where the identity cancels, are recomputed from the rows.
    let ft = features.transpose();
    let mut affinity = features * &ft;
    mirror_upper(&mut affinity);
    let sq: Vec<f64> = affinity.diagonal().iter().copied().collect();
    let mut degrees = vec![0.0; n];
    if n > 0 {
        affinity
            .as_mut_slice()
            .par_chunks_mut(n)
            .zip(degrees.par_iter_mut())
            .enumerate()
            .for_each(|(j, (col, deg))| {
                for (i, a) in col.iter_mut().enumerate() {
                    let mut d2 = (sq[i] + sq[j] - 2.0 * *a).max(0.0);
                    if d2 <= CANCELLATION * (sq[i] + sq[j]) {
                        d2 = ft.column(i).iter().zip(ft.column(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                    }
                    *a = (-gamma * d2).exp();
                }
                *deg = col.iter().sum();
            });
    }
    let mut normalized = affinity.clone();
    if n > 0 {
        normalized.as_mut_slice().par_chunks_mut(n).enumerate().for_each(|(j, col)| {
            for (i, a) in col.iter_mut().enumerate() {
                *a /= (degrees[i] * degrees[j]).sqrt();
            }
        });
    }
    SuperpointGraph {
        affinity,
        normalized,
        degrees,
    }
}

/// Copies the upper triangle over the lower one, tile by tile.
fn mirror_upper(m: &mut Matrix) {
    const TILE: usize = 64;
    let n = m.nrows();
    for jb in (0..n).step_by(TILE) {
        for ib in (jb..n).step_by(TILE) {
            for j in jb..(jb + TILE).min(n) {
                for i in ib.max(j + 1)..(ib + TILE).min(n) {
                    m[(i, j)] = m[(j, i)];
                }
            }
        }
    }
}

fn check_features(graph: &SuperpointGraph, features: &Matrix) -> Result<()> {
    if features.nrows() != graph.len() {
        return Err(Error::LengthMismatch {
            what: "superpoint features",
            expected: graph.len(),
            found: features.nrows(),
        });
    }
    Ok(())
}

pub fn diffuse_iterative(graph: &SuperpointGraph, features: &Matrix, cfg: &DiffusionCfg) -> Result<DiffusionOutput> {
    cfg.validate()?;
    check_features(graph, features)?;
    let keep = features * (1.0 - cfg.alpha);
    let mut h = features.clone();
    let mut next = Matrix::zeros(features.nrows(), features.ncols());
    let mut step = f64::INFINITY;
    let mut iters = 0;
    while iters < cfg.max_iters {
        next.gemm(cfg.alpha, &graph.normalized, &h, 0.0);
        next += &keep;
        step = next.iter().zip(h.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut h, &mut next);
        iters += 1;
        if step < cfg.tol {
            break;
        }
    }
    Ok(DiffusionOutput {
        features: h,
        iters,
        converged: step < cfg.tol,
    })
}

/// Fixed point of the diffusion, solved directly from `(I + b L) H = F`.
pub fn diffuse_closed_form(graph: &SuperpointGraph, features: &Matrix, alpha: f64) -> Result<Matrix> {
    check_alpha(alpha)?;
    check_features(graph, features)?;
    let beta = alpha / (1.0 - alpha);
    let n = graph.len();
    let mut system = &graph.normalized * -beta;
    for i in 0..n {
        system[(i, i)] += 1.0 + beta;
    }
    if let Some(chol) = system.clone().cholesky() {
        return Ok(chol.solve(features));
    }
    system.lu().solve(features).ok_or(Error::SingularSystem)
}

/// Low-pass graph Fourier filter: projects the features onto the
/// `ceil(keep_fraction * N_s)` Laplacian eigenvectors of smallest eigenvalue.
pub fn gft_baseline(graph: &SuperpointGraph, features: &Matrix, keep_fraction: f64) -> Result<Matrix> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("keep_fraction must lie in (0,1], got {keep_fraction}")));
    }
    check_features(graph, features)?;
    let n = graph.len();
    if n == 0 {
        return Ok(features.clone());
    }
    let (_, basis) = symmetric_eigen_ascending(&graph.laplacian())?;
    let keep = ((keep_fraction * n as f64).ceil() as usize).clamp(1, n);
    let low = basis.columns(0, keep);
    let coeffs = low.transpose() * features;
    Ok(low * coeffs)
}

/// PCA scores of the superpoint features (`N_s x dims`).
pub fn pca_baseline(features: &Matrix, dims: usize) -> Result<Matrix> {
    let (n, c) = features.shape();
    if dims == 0 || dims > n.min(c) {
        return Err(Error::InvalidConfig(format!("pca dims {dims} must lie in [1, {}]", n.min(c))));
    }
    Ok(pca(features, dims)?.scores)
}
