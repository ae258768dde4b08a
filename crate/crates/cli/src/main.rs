use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use dds_core::bench::{growth_factors, run_bench, to_csv, BenchMethod};
use dds_core::bev::{export_bev, BevCfg};
use dds_core::distill::DistillWeights;
use dds_core::gradcheck::run_checks;
use dds_core::io::{load_json, load_scene, save_json, save_scene};
use dds_core::pipeline::{
    evaluate_labeling, metrics_table, named_class_ids, run_pipeline, Method, PipelineConfig, RunOptions, Stage,
};
use dds_core::synth::{generate_scene, SyntheticSceneSpec};
use dds_core::vote::ClusterLabeling;

/// Annotation-free semantic labeling of 3D scenes.
#[derive(Parser)]
#[command(name = "dds", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene directory.
    GenScene {
        #[arg(long)]
        out: PathBuf,
        /// Scene description (JSON); the canonical scene otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        cameras: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the pipeline on a scene directory.
    Run {
        /// TOML configuration; defaults apply to anything left out.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this stage.
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        /// Reuse cached stage outputs whose inputs are unchanged.
        #[arg(long)]
        resume: bool,
    },
    /// Finite-difference check of the distillation gradients.
    DistillCheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 100)]
        max_n: usize,
        #[arg(long, default_value_t = 10)]
        max_m: usize,
        #[arg(long, default_value_t = 16)]
        max_c: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_point: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_proto: f64,
        #[arg(long, default_value_t = 0.3)]
        lambda_nce: f64,
        #[arg(long, default_value_t = 0.07)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time graph diffusion against its closed form and the GFT baseline.
    BenchDiffusion {
        #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "iterative,closed-form,gft")]
        methods: Vec<BenchArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a labeling against the scene's ground truth.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        labeling: PathBuf,
        #[arg(long, value_enum, default_value = "diffusion")]
        method: MethodArg,
        /// Also write the metrics as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Render a labeling as a top-down PNG.
    ExportBev {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        labeling: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "named")]
        mode: BevMode,
        #[arg(long, default_value_t = 0.1)]
        pixel_size: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Diffusion,
    Gft,
    Pca,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Diffusion => Method::Diffusion,
            MethodArg::Gft => Method::Gft,
            MethodArg::Pca => Method::Pca,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Teacher,
    Masks,
    Distill,
    Superpoints,
    Diffusion,
    Primitives,
    Vote,
    Metrics,
    Bev,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        Stage::ALL[s as usize]
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchArg {
    Iterative,
    ClosedForm,
    Gft,
}

impl From<BenchArg> for BenchMethod {
    fn from(b: BenchArg) -> Self {
        match b {
            BenchArg::Iterative => BenchMethod::Iterative,
            BenchArg::ClosedForm => BenchMethod::ClosedForm,
            BenchArg::Gft => BenchMethod::Gft,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BevMode {
    Clusters,
    Named,
}

fn config_error(msg: String) -> anyhow::Error {
    dds_core::Error::InvalidConfig(msg).into()
}

fn gen_scene(out: &Path, spec: Option<&Path>, sigma: Option<f64>, cameras: Option<usize>, seed: u64) -> anyhow::Result<()> {
    let mut spec = match spec {
        Some(p) => load_json::<SyntheticSceneSpec>(p).map_err(|e| config_error(e.to_string()))?,
        None => SyntheticSceneSpec::canonical(0.05),
    };
    if let Some(s) = sigma {
        spec.sigma = s;
    }
    if let Some(c) = cameras {
        spec.cameras.count = c;
    }
    let scene = generate_scene(&spec, seed)?;
    save_scene(out, &scene)?;
    println!("{} points, {} views -> {}", scene.cloud.len(), scene.cameras.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: Option<&Path>,
    scene: Option<PathBuf>,
    out: Option<PathBuf>,
    method: Option<MethodArg>,
    seed: Option<u64>,
    stage: Option<StageArg>,
    resume: bool,
) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.paths.scene = scene.or(cfg.paths.scene);
    cfg.paths.out = out.or(cfg.paths.out);
    if let Some(m) = method {
        cfg.method = m.into();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let opts = RunOptions {
        until: stage.map_or(Stage::Bev, Stage::from),
        resume,
    };
    let summary = run_pipeline(&cfg, &opts)?;
    for (stage, cached) in &summary.stages {
        log::info!("{stage}: {}", if *cached { "cached" } else { "done" });
    }
    if let Some(m) = &summary.metrics {
        print!("{}", metrics_table(m));
    }
    Ok(())
}

fn labeling_for(scene: &Path, labeling: &Path) -> anyhow::Result<(dds_core::io::Scene, ClusterLabeling)> {
    let scene = load_scene(scene)?;
    let labeling: ClusterLabeling = load_json(labeling)?;
    if labeling.cluster_of_point.len() != scene.cloud.len() {
        bail!(
            "labeling covers {} points, scene has {}",
            labeling.cluster_of_point.len(),
            scene.cloud.len()
        );
    }
    Ok((scene, labeling))
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenScene {
            out,
            spec,
            sigma,
            cameras,
            seed,
        } => gen_scene(&out, spec.as_deref(), sigma, cameras, seed),
        Command::Run {
            config,
            scene,
            out,
            method,
            seed,
            stage,
            resume,
        } => run(config.as_deref(), scene, out, method, seed, stage, resume),
        Command::DistillCheck {
            instances,
            max_n,
            max_m,
            max_c,
            tolerance,
            lambda_point,
            lambda_proto,
            lambda_nce,
            tau,
            seed,
        } => {
            let weights = DistillWeights {
                lambda_point,
                lambda_proto,
                lambda_nce,
                tau,
            };
            let reports = run_checks(instances, max_n, max_m, max_c, &weights, seed)?;
            let worst = |f: fn(&dds_core::gradcheck::CheckReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
            let terms = [
                ("point", worst(|r| r.point)),
                ("proto", worst(|r| r.proto)),
                ("nce", worst(|r| r.nce)),
                ("total", worst(|r| r.total)),
            ];
            println!("{} instances, max relative error:", reports.len());
            for (name, err) in terms {
                println!("  {name:<6} {err:.3e}");
            }
            if let Some((name, err)) = terms.iter().find(|(_, e)| *e >= tolerance) {
                bail!("{name} gradient error {err:.3e} exceeds {tolerance:.1e}");
            }
            Ok(())
        }
        Command::BenchDiffusion {
            sizes,
            channels,
            repeats,
            methods,
            seed,
            out,
        } => {
            if sizes.is_empty() || channels == 0 {
                return Err(config_error("bench needs at least one size and one channel".into()));
            }
            let methods: Vec<BenchMethod> = methods.into_iter().map(Into::into).collect();
            let rows = run_bench(&sizes, &methods, channels, repeats, seed)?;
            let csv = to_csv(&rows);
            match out {
                Some(p) => std::fs::write(&p, &csv).with_context(|| p.display().to_string())?,
                None => print!("{csv}"),
            }
            for m in methods {
                for (n, g) in growth_factors(&rows, m) {
                    log::info!("{} growth at N_s={n}: {g:.2}x", m.name());
                }
            }
            Ok(())
        }
        Command::Eval {
            scene,
            labeling,
            method,
            json,
        } => {
            let (scene, labeling) = labeling_for(&scene, &labeling)?;
            let gt = scene
                .cloud
                .gt_class()
                .context("scene has no ground-truth classes")?;
            let m = evaluate_labeling(&labeling, &scene.class_names, gt, method.into())?;
            print!("{}", metrics_table(&m));
            if let Some(p) = json {
                save_json(&p, &m)?;
            }
            Ok(())
        }
        Command::ExportBev {
            scene,
            labeling,
            out,
            mode,
            pixel_size,
        } => {
            let (scene, labeling) = labeling_for(&scene, &labeling)?;
            let labels: Vec<Option<usize>> = match mode {
                BevMode::Clusters => labeling.cluster_of_point.iter().map(|&c| Some(c)).collect(),
                BevMode::Named => named_class_ids(&labeling, &scene.class_names),
            };
            export_bev(&out, &scene.cloud, &labels, &BevCfg { pixel_size })?;
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<dds_core::Error>() {
        Some(e) if e.is_config_error() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
