//! Primitive pseudo-labels from diffused superpoint features.
//!
//! Pipeline: keep the highest-variance channels up to an energy ratio, run a
//! coarse k-means, embed with PCA, cluster the embedding into primitives, then
//! recompute primitive centers in the full diffused feature space and assign
//! every superpoint to the center with the largest cosine similarity.

use std::collections::HashSet;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::pca;
use crate::superpoint::SuperpointPartition;
use crate::{Error, Matrix, Result};

const KMEANS_MAX_ITERS: usize = 300;
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterCfg {
    pub energy_ratio: f64,
    pub k_coarse: usize,
    pub embed_dims: usize,
    pub k_primitive: usize,
    pub seed: u64,
    pub kmeans_restarts: usize,
}

impl Default for ClusterCfg {
    fn default() -> Self {
        Self {
            energy_ratio: 0.9,
            k_coarse: 32,
            embed_dims: 16,
            k_primitive: 16,
            seed: 0,
            kmeans_restarts: 5,
        }
    }
}

impl ClusterCfg {
    pub fn validate(&self) -> Result<()> {
        if !(self.energy_ratio > 0.0 && self.energy_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "energy_ratio must lie in (0,1], got {}",
                self.energy_ratio
            )));
        }
        if self.k_coarse == 0 || self.embed_dims == 0 || self.k_primitive == 0 || self.kmeans_restarts == 0 {
            return Err(Error::InvalidConfig(
                "k_coarse, embed_dims, k_primitive and kmeans_restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveModel {
    /// One row per primitive, in the full diffused feature space.
    pub centers: Matrix,
    pub primitive_of_superpoint: Vec<usize>,
    pub channel_mask: Vec<bool>,
    /// Superpoints whose feature norm was too small for a cosine assignment;
    /// they are put in primitive 0.
    pub zero_norm_rows: usize,
    /// Coarse k-means labels, kept for inspection only.
    pub coarse_labels: Vec<usize>,
}

impl PrimitiveModel {
    pub fn num_primitives(&self) -> usize {
        self.centers.nrows()
    }
}

/// Keeps the fewest highest-variance channels whose variance reaches
/// `energy_ratio` of the total. Returned columns keep their original order.
pub fn select_channels(features: &Matrix, energy_ratio: f64) -> Result<(Matrix, Vec<bool>)> {
    if !(energy_ratio > 0.0 && energy_ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("energy_ratio must lie in (0,1], got {energy_ratio}")));
    }
    let (n, c) = features.shape();
    if n == 0 || c == 0 {
        return Err(Error::InvalidInput("channel selection needs a non-empty matrix".into()));
    }
    let variances = channel_variances(features);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&k| variances[k]).sum();
    let mut mask = vec![false; c];
    let mut acc = 0.0;
    for &k in &order {
        mask[k] = true;
        acc += variances[k];
        if acc >= energy_ratio * total {
            break;
        }
    }
    let kept: Vec<usize> = (0..c).filter(|&k| mask[k]).collect();
    Ok((features.select_columns(&kept), mask))
}

pub fn channel_variances(features: &Matrix) -> Vec<f64> {
    let n = features.nrows() as f64;
    features
        .column_iter()
        .map(|col| {
            let mean = col.sum() / n;
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centers: Matrix,
    /// Within-cluster sum of squared distances.
    pub wcss: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center, ties to the lowest index.
fn nearest(row: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![rows[rng.random_range(0..rows.len())].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            rng.random_range(0..rows.len())
        };
        let c = rows[pick].clone();
        for (r, d) in rows.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let dim = rows[0].len();
    let mut centers = plus_plus_init(rows, k, rng);
    let mut labels: Vec<usize> = vec![usize::MAX; rows.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let assigned: Vec<(usize, f64)> = rows.par_iter().map(|r| nearest(r, &centers)).collect();
        let new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if new_labels == labels {
            break;
        }
        labels = new_labels;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut taken = HashSet::new();
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // re-seed an empty cluster at the worst-fit point
                let far = assigned
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken.insert(far);
                centers[j] = rows[far].clone();
            }
        }
    }
    let wcss = rows.iter().zip(&labels).map(|(r, &l)| sq_dist(r, &centers[l])).sum();
    (labels, centers, wcss)
}

fn distinct_rows(rows: &[Vec<f64>]) -> usize {
    rows.iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

/// k-means++ seeded Lloyd iterations; best of `restarts` runs by WCSS (ties:
/// lowest restart). Restart `r` draws from ChaCha stream `r` of `seed`.
///
/// When the data has fewer than `k` distinct rows, clustering runs with the
/// distinct count and the largest clusters are split until `k` clusters exist.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k = {k} must lie in [1, {n}]")));
    }
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let distinct = distinct_rows(&rows);
    let k_eff = k.min(distinct);
    let runs: Vec<(Vec<usize>, Vec<Vec<f64>>, f64)> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(&rows, k_eff, &mut rng)
        })
        .collect();
    let (mut labels, mut centers, _) = runs
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1 .2.total_cmp(&b.1 .2).then(a.0.cmp(&b.0)))
        .map(|(_, run)| run)
        .expect("at least one restart");

    if k_eff < k {
        debug!("kmeans: {distinct} distinct rows < k = {k}, splitting largest clusters");
        while centers.len() < k {
            let mut counts = vec![0usize; centers.len()];
            for &l in &labels {
                counts[l] += 1;
            }
            let largest = (0..counts.len())
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("non-empty");
            let moved = labels.iter().rposition(|&l| l == largest).expect("largest cluster has members");
            labels[moved] = centers.len();
            centers.push(rows[moved].clone());
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == largest).collect();
            let dim = rows[0].len();
            let mut mean = vec![0.0; dim];
            for &i in &members {
                for (m, v) in mean.iter_mut().zip(&rows[i]) {
                    *m += v;
                }
            }
            centers[largest] = mean.iter().map(|m| m / members.len() as f64).collect();
        }
    }
    let wcss = rows.iter().zip(&labels).map(|(r, &l)| sq_dist(r, &centers[l])).sum();
    let dim = x.ncols();
    Ok(KMeans {
        labels,
        centers: Matrix::from_fn(k, dim, |r, c| centers[r][c]),
        wcss,
    })
}

/// Cosine-nearest center for each row (ties: lowest index). Zero-norm rows go
/// to 0; zero-norm centers are never chosen. Returns the labels and the number
/// of zero-norm rows.
pub fn cosine_assign(features: &Matrix, centers: &Matrix) -> (Vec<usize>, usize) {
    let center_units: Vec<Option<Vec<f64>>> = centers
        .row_iter()
        .map(|c| {
            let norm = c.norm();
            (norm >= ZERO_NORM).then(|| c.iter().map(|v| v / norm).collect())
        })
        .collect();
    let mut zero = 0;
    let labels = features
        .row_iter()
        .map(|h| {
            let norm = h.norm();
            if norm < ZERO_NORM {
                zero += 1;
                return 0;
            }
            let mut best = (0, f64::NEG_INFINITY);
            for (p, cu) in center_units.iter().enumerate() {
                if let Some(cu) = cu {
                    let s: f64 = h.iter().zip(cu).map(|(a, b)| a * b).sum::<f64>() / norm;
                    if s > best.1 {
                        best = (p, s);
                    }
                }
            }
            best.0
        })
        .collect();
    (labels, zero)
}

pub fn fit_primitives(features: &Matrix, cfg: &ClusterCfg) -> Result<PrimitiveModel> {
    cfg.validate()?;
    let (n, c) = features.shape();
    if n < cfg.k_primitive {
        return Err(Error::InvalidConfig(format!(
            "k_primitive = {} exceeds the {n} superpoints",
            cfg.k_primitive
        )));
    }
    let (selected, channel_mask) = if n >= 2 {
        select_channels(features, cfg.energy_ratio)?
    } else {
        (features.clone(), vec![true; c])
    };

    let coarse = kmeans(&selected, cfg.k_coarse.min(n), cfg.seed, cfg.kmeans_restarts)?;
    debug!("coarse kmeans: k = {}, wcss = {:.6}", coarse.centers.nrows(), coarse.wcss);

    let dims = cfg.embed_dims.min(selected.ncols());
    let embedding = pca(&selected, dims)?.scores;
    let prim = kmeans(&embedding, cfg.k_primitive, cfg.seed.wrapping_add(1), cfg.kmeans_restarts)?;

    let mut centers = Matrix::zeros(cfg.k_primitive, c);
    let mut counts = vec![0usize; cfg.k_primitive];
    for (i, &p) in prim.labels.iter().enumerate() {
        counts[p] += 1;
        for ch in 0..c {
            centers[(p, ch)] += features[(i, ch)];
        }
    }
    for (p, &count) in counts.iter().enumerate() {
        if count > 0 {
            centers.row_mut(p).unscale_mut(count as f64);
        }
    }
    let (assigned, zero_norm_rows) = cosine_assign(features, &centers);

    // drop primitives nobody selected and renumber in order
    let mut used = vec![false; cfg.k_primitive];
    for &p in &assigned {
        used[p] = true;
    }
    let kept: Vec<usize> = (0..cfg.k_primitive).filter(|&p| used[p]).collect();
    let mut remap = vec![usize::MAX; cfg.k_primitive];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    if kept.len() < cfg.k_primitive {
        debug!("dropped {} empty primitives", cfg.k_primitive - kept.len());
    }
    Ok(PrimitiveModel {
        centers: centers.select_rows(&kept),
        primitive_of_superpoint: assigned.iter().map(|&p| remap[p]).collect(),
        channel_mask,
        zero_norm_rows,
        coarse_labels: coarse.labels,
    })
}

pub fn pseudo_labels(model: &PrimitiveModel, partition: &SuperpointPartition) -> Result<Vec<usize>> {
    if model.primitive_of_superpoint.len() != partition.count() {
        return Err(Error::LengthMismatch {
            what: "primitive assignments",
            expected: partition.count(),
            found: model.primitive_of_superpoint.len(),
        });
    }
    Ok(partition
        .assignment()
        .iter()
        .map(|&s| model.primitive_of_superpoint[s])
        .collect())
}
