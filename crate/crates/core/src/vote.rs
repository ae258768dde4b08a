//! Semantic naming of category-agnostic clusters by mask-label voting, and
//! the oAcc / mAcc / mIoU evaluation stack.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::teacher::PointLabels;
use crate::{Error, Result};

/// Stabilizer in the vote-ratio denominator.
pub const VOTE_EPS: f64 = 1e-8;

/// Clusters, their optional semantic label (index into `vocabulary`) and the
/// per-point names after propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub cluster_of_point: Vec<usize>,
    pub cluster_name: Vec<Option<usize>>,
    pub point_name: Vec<Option<usize>>,
    pub vocabulary: Vec<String>,
}

impl ClusterLabeling {
    pub fn num_clusters(&self) -> usize {
        self.cluster_name.len()
    }

    pub fn point_name_str(&self, i: usize) -> Option<&str> {
        self.point_name[i].map(|q| self.vocabulary[q].as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTable {
    /// `counts[k][q]`: votes for label `q` from points of cluster `k`.
    pub counts: Vec<Vec<u64>>,
    pub ratios: Vec<Vec<f64>>,
    pub eta: f64,
    pub vocabulary: Vec<String>,
}

pub fn collect_votes(
    cluster_of_point: &[usize],
    num_clusters: usize,
    labels: &PointLabels,
    eta: f64,
) -> Result<VoteTable> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!("eta must lie in [0,1], got {eta}")));
    }
    if labels.labels.len() != cluster_of_point.len() {
        return Err(Error::LengthMismatch {
            what: "point label sets",
            expected: cluster_of_point.len(),
            found: labels.labels.len(),
        });
    }
    let q = labels.vocabulary.len();
    let mut counts = vec![vec![0u64; q]; num_clusters];
    for (i, (&k, ls)) in cluster_of_point.iter().zip(&labels.labels).enumerate() {
        if k >= num_clusters {
            return Err(Error::InvalidInput(format!("point {i} in cluster {k} >= {num_clusters}")));
        }
        for &l in ls {
            if l >= q {
                return Err(Error::InvalidInput(format!("point {i} carries label {l} outside the vocabulary")));
            }
            counts[k][l] += 1;
        }
    }
    let ratios = counts
        .iter()
        .map(|row| {
            let total = row.iter().sum::<u64>() as f64;
            row.iter().map(|&n| n as f64 / (total + VOTE_EPS)).collect()
        })
        .collect();
    Ok(VoteTable {
        counts,
        ratios,
        eta,
        vocabulary: labels.vocabulary.clone(),
    })
}

/// Majority label per cluster when its vote ratio reaches `eta` (ties: lowest
/// label index). Clusters without any vote stay unlabeled.
pub fn assign_semantics(votes: &VoteTable) -> Vec<Option<usize>> {
    votes
        .counts
        .iter()
        .zip(&votes.ratios)
        .map(|(counts, ratios)| {
            if counts.iter().all(|&c| c == 0) {
                return None;
            }
            let mut best = 0;
            for (q, &r) in ratios.iter().enumerate() {
                if r > ratios[best] {
                    best = q;
                }
            }
            (ratios[best] >= votes.eta).then_some(best)
        })
        .collect()
}

pub fn propagate(
    cluster_of_point: &[usize],
    cluster_name: Vec<Option<usize>>,
    vocabulary: Vec<String>,
) -> Result<ClusterLabeling> {
    let point_name = cluster_of_point
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            cluster_name
                .get(k)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("point {i} in cluster {k} >= {}", cluster_name.len())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterLabeling {
        cluster_of_point: cluster_of_point.to_vec(),
        cluster_name,
        point_name,
        vocabulary,
    })
}

/// Predictions to score against ground-truth class ids.
#[derive(Debug, Clone, Copy)]
pub enum Prediction<'a> {
    /// Category-agnostic cluster ids, matched to classes by maximum total
    /// intersection.
    Matched(&'a [usize]),
    /// Class ids from semantic naming; `None` marks unlabeled points.
    Named(&'a [Option<usize>]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Matched,
    Named,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: usize,
    pub iou: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: EvalMode,
    pub oacc: f64,
    pub macc: f64,
    pub miou: f64,
    /// One entry per class present in the ground truth, ascending.
    pub per_class_iou: Vec<ClassIou>,
    /// Matched mode: class of each predicted cluster (`None` = void).
    /// Named mode: empty.
    pub matching: Vec<Option<usize>>,
    /// Fraction of points without a prediction (named mode) or in a void
    /// cluster (matched mode).
    pub unlabeled_fraction: f64,
}

impl MetricReport {
    /// Aligned-column text table: one summary row in percent followed by
    /// per-class IoU.
    pub fn to_table(&self, method: &str, class_names: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>7} {:>7} {:>7}", "Method", "oAcc", "mAcc", "mIoU");
        let _ = writeln!(
            s,
            "{:<16} {:>7.1} {:>7.1} {:>7.1}",
            method,
            100.0 * self.oacc,
            100.0 * self.macc,
            100.0 * self.miou
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>7} {:>7}", "Class", "IoU", "Acc");
        for c in &self.per_class_iou {
            let name = class_names.get(c.class).cloned().unwrap_or_else(|| format!("class_{}", c.class));
            let _ = writeln!(s, "{:<16} {:>7.1} {:>7.1}", name, 100.0 * c.iou, 100.0 * c.accuracy);
        }
        s
    }
}

/// Optimal assignment maximizing the total weight of a rectangular
/// non-negative integer matrix. Returns, per row, the matched column; pairs
/// of zero weight are left unmatched.
pub fn max_weight_matching(weights: &[Vec<u64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let max = weights.iter().flatten().copied().max().unwrap_or(0) as i64;
    // square cost matrix, 1-indexed, minimizing (max - weight)
    let cost = |i: usize, j: usize| -> i64 {
        if i <= rows && j <= cols {
            max - weights[i - 1][j - 1] as i64
        } else {
            max
        }
    };
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        if p[j] >= 1 && p[j] <= rows && j <= cols && weights[p[j] - 1][j - 1] > 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

fn score(pred: &[Option<usize>], gt: &[u16]) -> (f64, f64, f64, Vec<ClassIou>) {
    let classes = present_classes(gt);
    let max_class = classes.last().copied().unwrap_or(0);
    let size = max_class + 1;
    let mut tp = vec![0u64; size];
    let mut gt_count = vec![0u64; size];
    let mut pred_count = vec![0u64; size];
    for (p, &g) in pred.iter().zip(gt) {
        let g = g as usize;
        gt_count[g] += 1;
        if let Some(p) = *p {
            if p < size {
                pred_count[p] += 1;
            }
            if p == g {
                tp[g] += 1;
            }
        }
    }
    let per_class: Vec<ClassIou> = classes
        .iter()
        .map(|&c| {
            let union = gt_count[c] + pred_count[c] - tp[c];
            ClassIou {
                class: c,
                iou: tp[c] as f64 / union as f64,
                accuracy: tp[c] as f64 / gt_count[c] as f64,
            }
        })
        .collect();
    let k = per_class.len() as f64;
    let oacc = tp.iter().sum::<u64>() as f64 / gt.len() as f64;
    let macc = per_class.iter().map(|c| c.accuracy).sum::<f64>() / k;
    let miou = per_class.iter().map(|c| c.iou).sum::<f64>() / k;
    (oacc, macc, miou, per_class)
}

fn present_classes(gt: &[u16]) -> Vec<usize> {
    let mut c: Vec<usize> = gt.iter().map(|&g| g as usize).collect();
    c.sort_unstable();
    c.dedup();
    c
}

/// Intersection counts between predicted clusters and ground-truth classes.
pub fn intersections(clusters: &[usize], gt: &[u16]) -> (Vec<Vec<u64>>, Vec<usize>) {
    let classes = present_classes(gt);
    let k = clusters.iter().max().map_or(0, |m| m + 1);
    let mut col_of = vec![usize::MAX; classes.last().map_or(0, |m| m + 1)];
    for (j, &c) in classes.iter().enumerate() {
        col_of[c] = j;
    }
    let mut w = vec![vec![0u64; classes.len()]; k];
    for (&p, &g) in clusters.iter().zip(gt) {
        w[p][col_of[g as usize]] += 1;
    }
    (w, classes)
}

pub fn evaluate(pred: Prediction<'_>, gt: &[u16]) -> Result<MetricReport> {
    let n = match pred {
        Prediction::Matched(p) => p.len(),
        Prediction::Named(p) => p.len(),
    };
    if n != gt.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            expected: gt.len(),
            found: n,
        });
    }
    if n == 0 {
        return Err(Error::InvalidInput("cannot evaluate an empty prediction".into()));
    }
    match pred {
        Prediction::Matched(clusters) => {
            let (w, classes) = intersections(clusters, gt);
            let matching: Vec<Option<usize>> =
                max_weight_matching(&w).into_iter().map(|m| m.map(|j| classes[j])).collect();
            let mapped: Vec<Option<usize>> = clusters.iter().map(|&k| matching[k]).collect();
            let void = mapped.iter().filter(|m| m.is_none()).count();
            let (oacc, macc, miou, per_class_iou) = score(&mapped, gt);
            Ok(MetricReport {
                mode: EvalMode::Matched,
                oacc,
                macc,
                miou,
                per_class_iou,
                matching,
                unlabeled_fraction: void as f64 / n as f64,
            })
        }
        Prediction::Named(names) => {
            let unlabeled = names.iter().filter(|m| m.is_none()).count();
            let (oacc, macc, miou, per_class_iou) = score(names, gt);
            Ok(MetricReport {
                mode: EvalMode::Named,
                oacc,
                macc,
                miou,
                per_class_iou,
                matching: Vec::new(),
                unlabeled_fraction: unlabeled as f64 / n as f64,
            })
        }
    }
}
