//! Central finite-difference checks for the distillation gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::distill::{compute_prototypes, loss_nce, loss_point, loss_proto, loss_total, DistillWeights, PrototypePair};
use crate::teacher::{MaskGroup, MaskGroups, TeacherField};
use crate::{Matrix, Result};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `f` at `x`, one entry at a time.
pub fn numeric_gradient<F>(x: &Matrix, step: f64, f: F) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<f64>,
{
    let mut g = Matrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let orig = probe[(r, c)];
            probe[(r, c)] = orig + step;
            let up = f(&probe)?;
            probe[(r, c)] = orig - step;
            let down = f(&probe)?;
            probe[(r, c)] = orig;
            g[(r, c)] = (up - down) / (2.0 * step);
        }
    }
    Ok(g)
}

pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Student, teacher and mask groups for one check.
#[derive(Debug, Clone)]
pub struct Instance {
    pub student: Matrix,
    pub teacher: TeacherField,
    pub groups: MaskGroups,
}

/// Random instance with `n` points, up to `m` disjoint mask groups and `c`
/// channels. About one point in eight is invisible.
pub fn random_instance(n: usize, m: usize, c: usize, rng: &mut ChaCha8Rng) -> Instance {
    let mut normal = || -> f64 { StandardNormal.sample(&mut *rng) };
    let student = Matrix::from_fn(n, c, |_, _| normal());
    let features = Matrix::from_fn(n, c, |_, _| normal());
    let visible: Vec<bool> = (0..n).map(|_| rng.random::<f64>() > 0.125).collect();
    let view_counts = visible.iter().map(|&v| v as u32).collect();
    let mut point_mask = vec![None; n];
    for slot in point_mask.iter_mut() {
        if rng.random::<f64>() < 0.8 {
            *slot = Some(rng.random_range(0..m.max(1)));
        }
    }
    let mut groups: Vec<MaskGroup> = (0..m)
        .map(|g| MaskGroup {
            label: format!("g{g}"),
            points: Vec::new(),
        })
        .collect();
    for (i, g) in point_mask.iter().enumerate() {
        if let Some(g) = g {
            groups[*g].points.push(i);
        }
    }
    Instance {
        student,
        teacher: TeacherField {
            features,
            visible,
            view_counts,
        },
        groups: MaskGroups {
            groups,
            point_mask,
            min_mask_points: 1,
        },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CheckReport {
    pub point: f64,
    pub proto: f64,
    pub nce: f64,
    pub total: f64,
}

impl CheckReport {
    pub fn max(&self) -> f64 {
        self.point.max(self.proto).max(self.nce).max(self.total)
    }
}

fn protos_with(base: &PrototypePair, student: &Matrix) -> PrototypePair {
    PrototypePair {
        student: student.clone(),
        ..base.clone()
    }
}

/// Maximum relative error of each term's gradient. The prototype terms are
/// checked with respect to the student prototypes and skipped (error 0) when
/// no group survives.
pub fn check_instance(inst: &Instance, weights: &DistillWeights, step: f64) -> Result<CheckReport> {
    let (z, t, g) = (&inst.student, &inst.teacher, &inst.groups);
    let mut report = CheckReport::default();

    let lp = loss_point(z, t)?;
    let num = numeric_gradient(z, step, |x| Ok(loss_point(x, t)?.value))?;
    report.point = max_relative_error(&lp.grad, &num);

    if let Ok(pair) = compute_prototypes(z, t, g) {
        let a = loss_proto(&pair)?;
        let num = numeric_gradient(&pair.student, step, |s| Ok(loss_proto(&protos_with(&pair, s))?.value))?;
        report.proto = max_relative_error(&a.grad, &num);
        let a = loss_nce(&pair, weights.tau)?;
        let num = numeric_gradient(&pair.student, step, |s| Ok(loss_nce(&protos_with(&pair, s), weights.tau)?.value))?;
        report.nce = max_relative_error(&a.grad, &num);
    }

    let total = loss_total(z, t, g, weights)?;
    let num = numeric_gradient(z, step, |x| Ok(loss_total(x, t, g, weights)?.value))?;
    report.total = max_relative_error(&total.grad, &num);
    Ok(report)
}

/// Runs `count` random checks with N ≤ `max_n`, M ≤ `max_m`, C ≤ `max_c`.
pub fn run_checks(
    count: usize,
    max_n: usize,
    max_m: usize,
    max_c: usize,
    weights: &DistillWeights,
    seed: u64,
) -> Result<Vec<CheckReport>> {
    weights.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=max_n.max(2));
            let m = rng.random_range(1..=max_m.max(1));
            let c = rng.random_range(2..=max_c.max(2));
            let inst = random_instance(n, m, c, &mut rng);
            check_instance(&inst, weights, FD_STEP)
        })
        .collect()
}
