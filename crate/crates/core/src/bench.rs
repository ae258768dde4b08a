//! Wall-clock scaling of the diffusion solvers.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::diffusion::{build_graph, diffuse_closed_form, diffuse_iterative, gft_baseline, DiffusionCfg};
use crate::{Matrix, Result};

pub const ITERATIONS: usize = 10;
/// Fast cases are repeated until roughly this much time is spent on them.
pub const BUDGET_SECONDS: f64 = 0.5;
pub const MAX_REPEATS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    /// Graph construction plus [`ITERATIONS`] diffusion steps.
    Iterative,
    /// Graph construction plus the direct solve.
    ClosedForm,
    /// Graph construction plus the low-pass eigenbasis filter.
    Gft,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 3] = [BenchMethod::Iterative, BenchMethod::ClosedForm, BenchMethod::Gft];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Iterative => "iterative",
            BenchMethod::ClosedForm => "closed_form",
            BenchMethod::Gft => "gft",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub n_s: usize,
    pub method: BenchMethod,
    /// Fastest of at least `repeats` runs.
    pub seconds: f64,
}

pub fn random_features(n: usize, c: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(n, c, |_, _| StandardNormal.sample(&mut rng))
}

pub fn time_method(features: &Matrix, method: BenchMethod, alpha: f64, keep_fraction: f64) -> Result<f64> {
    let start = Instant::now();
    let graph = build_graph(features);
    let out = match method {
        BenchMethod::Iterative => {
            let cfg = DiffusionCfg {
                alpha,
                max_iters: ITERATIONS,
                tol: f64::MIN_POSITIVE,
            };
            diffuse_iterative(&graph, features, &cfg)?.features
        }
        BenchMethod::ClosedForm => diffuse_closed_form(&graph, features, alpha)?,
        BenchMethod::Gft => gft_baseline(&graph, features, keep_fraction)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    std::hint::black_box(out);
    Ok(elapsed)
}

pub fn run_bench(
    sizes: &[usize],
    methods: &[BenchMethod],
    channels: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        let f = random_features(n, channels, seed ^ n as u64);
        for &m in methods {
            let mut best = time_method(&f, m, 0.5, 0.25)?;
            let runs = ((BUDGET_SECONDS / best) as usize).clamp(repeats.max(1), MAX_REPEATS);
            for _ in 1..runs {
                best = best.min(time_method(&f, m, 0.5, 0.25)?);
            }
            rows.push(BenchRow {
                n_s: n,
                method: m,
                seconds: best,
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("N_s,method,seconds\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6}", r.n_s, r.method.name(), r.seconds);
    }
    s
}

/// `seconds(n_{k+1}) / seconds(n_k)` for consecutive sizes of one method.
pub fn growth_factors(rows: &[BenchRow], method: BenchMethod) -> Vec<(usize, f64)> {
    let times: Vec<_> = rows.iter().filter(|r| r.method == method).collect();
    times.windows(2).map(|w| (w[1].n_s, w[1].seconds / w[0].seconds)).collect()
}
