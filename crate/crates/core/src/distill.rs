//! Multi-granularity distillation objective.
//!
//! Three terms compare student point features against the frozen teacher:
//! point-wise cosine alignment, cosine alignment of mask prototypes, and an
//! InfoNCE loss over the prototype similarity matrix. Every function returns
//! the loss value together with its analytical gradient with respect to the
//! student side; the teacher is treated as constant.

use nalgebra::{DVectorView, RowDVector};
use serde::{Deserialize, Serialize};

use crate::teacher::{MaskGroups, TeacherField};
use crate::{Error, Matrix, Result};

/// Rows with a norm below this are rejected as degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillWeights {
    pub lambda_point: f64,
    pub lambda_proto: f64,
    pub lambda_nce: f64,
    pub tau: f64,
}

impl Default for DistillWeights {
    fn default() -> Self {
        Self {
            lambda_point: 1.0,
            lambda_proto: 1.0,
            lambda_nce: 0.3,
            tau: 0.07,
        }
    }
}

impl DistillWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_point, self.lambda_proto, self.lambda_nce];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidConfig("distillation weights must be non-negative".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Student and teacher mask prototypes, one row per surviving mask group.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypePair {
    pub student: Matrix,
    pub teacher: Matrix,
    /// Number of visible points averaged into each row.
    pub mask_sizes: Vec<usize>,
    /// Index of the source group in [`MaskGroups::groups`] for each row.
    pub group_ids: Vec<usize>,
}

impl PrototypePair {
    pub fn len(&self) -> usize {
        self.mask_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask_sizes.is_empty()
    }
}

/// Value and gradient of a loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillLoss {
    pub value: f64,
    pub point: f64,
    pub proto: f64,
    pub nce: f64,
    /// Number of prototypes that entered the mask-level terms.
    pub prototypes: usize,
    /// Gradient with respect to the student point features.
    pub grad: Matrix,
}

fn checked_norm(row: DVectorView<'_, f64>, what: &'static str, idx: usize) -> Result<f64> {
    let norm = row.norm();
    if norm < NORM_FLOOR || !norm.is_finite() {
        return Err(Error::DegenerateNorm { what, row: idx, norm });
    }
    Ok(norm)
}

/// `1 - cos(a, b)` and its gradient with respect to `a`.
fn cosine_distance(a: &RowDVector<f64>, b: &RowDVector<f64>, na: f64, nb: f64) -> (f64, RowDVector<f64>) {
    let cos = a.dot(b) / (na * nb);
    // d cos / da = b / (|a||b|) - cos a / |a|^2
    let grad = -(b / (na * nb) - a * (cos / (na * na)));
    (1.0 - cos, grad)
}

fn check_shapes(student: &Matrix, teacher: &TeacherField) -> Result<()> {
    if student.nrows() != teacher.len() {
        return Err(Error::LengthMismatch {
            what: "student rows",
            expected: teacher.len(),
            found: student.nrows(),
        });
    }
    if student.ncols() != teacher.channels() {
        return Err(Error::LengthMismatch {
            what: "student channels",
            expected: teacher.channels(),
            found: student.ncols(),
        });
    }
    if student.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("student features must be finite".into()));
    }
    Ok(())
}

/// Per-mask means of visible student and teacher rows. Masks with fewer than
/// `groups.min_mask_points` visible members are skipped.
pub fn compute_prototypes(student: &Matrix, teacher: &TeacherField, groups: &MaskGroups) -> Result<PrototypePair> {
    check_shapes(student, teacher)?;
    if groups.point_mask.len() != teacher.len() {
        return Err(Error::LengthMismatch {
            what: "point_mask",
            expected: teacher.len(),
            found: groups.point_mask.len(),
        });
    }
    let c = student.ncols();
    let mut rows_s = Vec::new();
    let mut rows_t = Vec::new();
    let mut sizes = Vec::new();
    let mut ids = Vec::new();
    for (m, group) in groups.groups.iter().enumerate() {
        let members: Vec<usize> = group
            .points
            .iter()
            .copied()
            .filter(|&i| teacher.visible[i] && groups.point_mask[i] == Some(m))
            .collect();
        if members.is_empty() || members.len() < groups.min_mask_points {
            continue;
        }
        let mut ps = RowDVector::zeros(c);
        let mut pt = RowDVector::zeros(c);
        for &i in &members {
            ps += student.row(i);
            pt += teacher.features.row(i);
        }
        let k = members.len() as f64;
        rows_s.push(ps / k);
        rows_t.push(pt / k);
        sizes.push(members.len());
        ids.push(m);
    }
    if sizes.is_empty() {
        return Err(Error::EmptyPrototypeSet);
    }
    Ok(PrototypePair {
        student: Matrix::from_rows(&rows_s),
        teacher: Matrix::from_rows(&rows_t),
        mask_sizes: sizes,
        group_ids: ids,
    })
}

/// Mean cosine distance between student and teacher over visible points.
/// Invisible rows get a zero gradient; with no visible point the loss is 0.
pub fn loss_point(student: &Matrix, teacher: &TeacherField) -> Result<LossGrad> {
    check_shapes(student, teacher)?;
    let mut grad = Matrix::zeros(student.nrows(), student.ncols());
    let visible = teacher.visible_count();
    if visible == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let scale = 1.0 / visible as f64;
    let mut value = 0.0;
    for i in (0..student.nrows()).filter(|&i| teacher.visible[i]) {
        let z = student.row(i).into_owned();
        let t = teacher.features.row(i).into_owned();
        let nz = checked_norm(z.transpose().as_view(), "student", i)?;
        let nt = checked_norm(t.transpose().as_view(), "teacher", i)?;
        let (d, g) = cosine_distance(&z, &t, nz, nt);
        value += d;
        grad.set_row(i, &(g * scale));
    }
    Ok(LossGrad {
        value: value * scale,
        grad,
    })
}

/// Mean cosine distance between normalized student and teacher prototypes.
pub fn loss_proto(protos: &PrototypePair) -> Result<LossGrad> {
    let m = protos.len();
    let mut grad = Matrix::zeros(m, protos.student.ncols());
    if m == 0 {
        return Err(Error::EmptyPrototypeSet);
    }
    let scale = 1.0 / m as f64;
    let mut value = 0.0;
    for r in 0..m {
        let s = protos.student.row(r).into_owned();
        let t = protos.teacher.row(r).into_owned();
        let ns = checked_norm(s.transpose().as_view(), "student prototype", r)?;
        let nt = checked_norm(t.transpose().as_view(), "teacher prototype", r)?;
        let (d, g) = cosine_distance(&s, &t, ns, nt);
        value += d;
        grad.set_row(r, &(g * scale));
    }
    Ok(LossGrad {
        value: value * scale,
        grad,
    })
}

/// InfoNCE over prototypes: row `m` of `S = P̄s P̄tᵀ / tau` is a softmax over
/// teacher prototypes whose positive is column `m`.
pub fn loss_nce(protos: &PrototypePair, tau: f64) -> Result<LossGrad> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let m = protos.len();
    if m == 0 {
        return Err(Error::EmptyPrototypeSet);
    }
    let c = protos.student.ncols();
    let mut s_hat = Matrix::zeros(m, c);
    let mut t_hat = Matrix::zeros(m, c);
    let mut s_norms = vec![0.0; m];
    for r in 0..m {
        let ns = checked_norm(protos.student.row(r).transpose().as_view(), "student prototype", r)?;
        let nt = checked_norm(protos.teacher.row(r).transpose().as_view(), "teacher prototype", r)?;
        s_hat.set_row(r, &(protos.student.row(r) / ns));
        t_hat.set_row(r, &(protos.teacher.row(r) / nt));
        s_norms[r] = ns;
    }
    let logits = &s_hat * t_hat.transpose() / tau;

    let scale = 1.0 / m as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(m, c);
    for r in 0..m {
        let row = logits.row(r);
        let max = row.max();
        let sum: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        value += lse - logits[(r, r)];

        // dL/dS_rj = (softmax_rj - [r == j]) / tau, then through S = ŝ·t̂
        let mut d_shat = RowDVector::zeros(c);
        for j in 0..m {
            let w = (logits[(r, j)] - lse).exp() - if j == r { 1.0 } else { 0.0 };
            d_shat += t_hat.row(j) * (w / tau);
        }
        // through normalization: (I - ŝŝᵀ) g / |s|
        let sh = s_hat.row(r);
        let proj = d_shat.dot(&sh);
        let g = (d_shat - sh * proj) / s_norms[r];
        grad.set_row(r, &(g * scale));
    }
    Ok(LossGrad {
        value: value * scale,
        grad,
    })
}

/// Weighted sum of the three terms. Prototype gradients flow back to each
/// contributing point row scaled by `1 / |mask|`. When no mask survives the
/// prototype filter, both mask-level terms are zero.
pub fn loss_total(
    student: &Matrix,
    teacher: &TeacherField,
    groups: &MaskGroups,
    weights: &DistillWeights,
) -> Result<DistillLoss> {
    weights.validate()?;
    check_shapes(student, teacher)?;
    let mut grad = Matrix::zeros(student.nrows(), student.ncols());
    let mut value = 0.0;

    let lp = loss_point(student, teacher)?;
    let point = lp.value;
    value += weights.lambda_point * point;
    grad += lp.grad * weights.lambda_point;

    let wants_protos = weights.lambda_proto > 0.0 || weights.lambda_nce > 0.0;
    let protos = match compute_prototypes(student, teacher, groups) {
        Ok(p) if wants_protos => Some(p),
        Ok(_) | Err(Error::EmptyPrototypeSet) => None,
        Err(e) => return Err(e),
    };
    let (mut proto, mut nce, mut count) = (0.0, 0.0, 0);
    if let Some(protos) = protos {
        count = protos.len();
        let lpr = loss_proto(&protos)?;
        let lnce = loss_nce(&protos, weights.tau)?;
        proto = lpr.value;
        nce = lnce.value;
        value += weights.lambda_proto * proto + weights.lambda_nce * nce;
        let proto_grad = lpr.grad * weights.lambda_proto + lnce.grad * weights.lambda_nce;
        for (r, &gid) in protos.group_ids.iter().enumerate() {
            let share = proto_grad.row(r) / protos.mask_sizes[r] as f64;
            for &i in &groups.groups[gid].points {
                if teacher.visible[i] && groups.point_mask[i] == Some(gid) {
                    let updated = grad.row(i) + &share;
                    grad.set_row(i, &updated);
                }
            }
        }
    }
    Ok(DistillLoss {
        value,
        point,
        proto,
        nce,
        prototypes: count,
        grad,
    })
}
