//! End-to-end driver.
//!
//! Stages run in a fixed order and each writes its artifacts to the output
//! directory:
//!
//! | stage         | artifacts                                         |
//! |---------------|---------------------------------------------------|
//! | `teacher`     | `teacher.ddst`                                    |
//! | `masks`       | `mask_groups.json`, `point_labels.json`           |
//! | `distill`     | `distill.json`                                    |
//! | `superpoints` | `superpoints.ddss`                                |
//! | `diffusion`   | `superpoint_features.ddsm`, `diffused.ddsm`       |
//! | `primitives`  | `primitives.json`                                 |
//! | `vote`        | `votes.json`, `labeling.json`                     |
//! | `metrics`     | `metrics.json`, `metrics.txt` (needs ground truth)|
//! | `bev`         | `bev_clusters.png`, `bev_named.png`               |
//!
//! Every stage has a digest chained from the scene files, the student file
//! and the configuration sections it and its predecessors read. The digests
//! are recorded in `manifest.json`; with `resume`, a stage whose digest and
//! artifacts are already present is loaded instead of recomputed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bev::{export_bev, BevCfg};
use crate::cluster::{fit_primitives, pseudo_labels, ClusterCfg, PrimitiveModel};
use crate::diffusion::{build_graph, diffuse_closed_form, diffuse_iterative, gft_baseline, pca_baseline, DiffusionCfg};
use crate::distill::{loss_total, DistillWeights};
use crate::io::{self, PrimitiveModelJson, Scene};
use crate::superpoint::{oversegment, pool_features, SegCfg, SuperpointPartition};
use crate::teacher::{build_teacher, lift_masks, point_label_sets, MaskGroups, MaskMergeConfig, PointLabels, TeacherField};
use crate::vote::{assign_semantics, collect_votes, evaluate, propagate, ClusterLabeling, MetricReport, Prediction, VoteTable};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
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

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Teacher,
        Stage::Masks,
        Stage::Distill,
        Stage::Superpoints,
        Stage::Diffusion,
        Stage::Primitives,
        Stage::Vote,
        Stage::Metrics,
        Stage::Bev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Teacher => "teacher",
            Stage::Masks => "masks",
            Stage::Distill => "distill",
            Stage::Superpoints => "superpoints",
            Stage::Diffusion => "diffusion",
            Stage::Primitives => "primitives",
            Stage::Vote => "vote",
            Stage::Metrics => "metrics",
            Stage::Bev => "bev",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{s}`")))
    }
}

/// Feature smoothing applied to the pooled superpoint features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Diffusion,
    Gft,
    Pca,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(Method::Diffusion),
            "gft" => Ok(Method::Gft),
            "pca" => Ok(Method::Pca),
            _ => Err(Error::InvalidConfig(format!("unknown method `{s}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Diffusion => "diffusion",
            Method::Gft => "gft",
            Method::Pca => "pca",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Iterative,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub alpha: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub solver: Solver,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let d = DiffusionCfg::default();
        Self {
            alpha: d.alpha,
            max_iters: d.max_iters,
            tol: d.tol,
            solver: Solver::Iterative,
        }
    }
}

impl DiffusionSection {
    pub fn cfg(&self) -> DiffusionCfg {
        DiffusionCfg {
            alpha: self.alpha,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GftSection {
    pub keep_fraction: f64,
}

impl Default for GftSection {
    fn default() -> Self {
        Self { keep_fraction: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSection {
    /// Clamped to `min(N_s, C)` at run time.
    pub dims: usize,
}

impl Default for PcaSection {
    fn default() -> Self {
        Self { dims: 8 }
    }
}

/// Clustering parameters; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub energy_ratio: f64,
    pub k_coarse: usize,
    pub embed_dims: usize,
    /// Clamped to the number of superpoints at run time.
    pub k_primitive: usize,
    pub kmeans_restarts: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        let c = ClusterCfg::default();
        Self {
            energy_ratio: c.energy_ratio,
            k_coarse: c.k_coarse,
            embed_dims: c.embed_dims,
            k_primitive: c.k_primitive,
            kmeans_restarts: c.kmeans_restarts,
        }
    }
}

impl ClusterSection {
    pub fn cfg(&self, seed: u64) -> ClusterCfg {
        ClusterCfg {
            energy_ratio: self.energy_ratio,
            k_coarse: self.k_coarse,
            embed_dims: self.embed_dims,
            k_primitive: self.k_primitive,
            seed,
            kmeans_restarts: self.kmeans_restarts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoteSection {
    pub eta: f64,
}

impl Default for VoteSection {
    fn default() -> Self {
        Self { eta: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Scene directory (see [`io::Scene`]).
    pub scene: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Optional `DDSM` student features; the teacher is used otherwise.
    pub student: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub method: Method,
    pub paths: Paths,
    pub mask: MaskMergeConfig,
    pub distill: DistillWeights,
    pub superpoint: SegCfg,
    pub diffusion: DiffusionSection,
    pub gft: GftSection,
    pub pca: PcaSection,
    pub cluster: ClusterSection,
    pub vote: VoteSection,
    pub bev: BevCfg,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section and that the referenced input paths exist.
    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        self.distill.validate()?;
        self.superpoint.validate()?;
        self.diffusion.cfg().validate()?;
        self.cluster.cfg(self.seed).validate()?;
        self.bev.validate()?;
        if !(self.gft.keep_fraction > 0.0 && self.gft.keep_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gft.keep_fraction must lie in (0,1], got {}",
                self.gft.keep_fraction
            )));
        }
        if self.pca.dims == 0 {
            return Err(Error::InvalidConfig("pca.dims must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.vote.eta) {
            return Err(Error::InvalidConfig(format!("vote.eta must lie in [0,1], got {}", self.vote.eta)));
        }
        match &self.paths.scene {
            None => return Err(Error::InvalidConfig("paths.scene is required".into())),
            Some(p) if !p.is_dir() => {
                return Err(Error::InvalidConfig(format!("scene directory {} does not exist", p.display())))
            }
            _ => {}
        }
        if self.paths.out.is_none() {
            return Err(Error::InvalidConfig("paths.out is required".into()));
        }
        if let Some(p) = &self.paths.student {
            if !p.is_file() {
                return Err(Error::InvalidConfig(format!("student file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Last stage to run.
    pub until: Stage,
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            until: Stage::Bev,
            resume: false,
        }
    }
}

/// Distillation losses of the student against the teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub student: String,
    pub value: f64,
    pub point: f64,
    pub proto: f64,
    pub nce: f64,
    pub prototypes: usize,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub method: Method,
    pub class_names: Vec<String>,
    pub matched: MetricReport,
    pub named: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Stages executed, with `true` when loaded from cache.
    pub stages: Vec<(Stage, bool)>,
    pub metrics: Option<MetricsFile>,
}

pub const MANIFEST: &str = "manifest.json";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(h: &mut Sha256, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|source| Error::File {
        path: path.to_owned(),
        source,
    })?;
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(&bytes);
    Ok(())
}

/// Digest of every file in the scene directory (and the student file).
pub fn input_digest(scene_dir: &Path, student: Option<&Path>) -> Result<String> {
    let mut files = vec![io::cloud_path(scene_dir), scene_dir.join("classes.json")];
    let views = scene_dir.join("views");
    if views.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&views)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        files.extend(entries);
    }
    files.extend(student.map(Path::to_owned));
    let mut h = Sha256::new();
    for f in &files {
        h.update(f.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
        hash_file(&mut h, f)?;
    }
    Ok(hex(&h.finalize()))
}

/// Maps voted vocabulary labels to class ids by name; names outside
/// `class_names` become unlabeled.
pub fn named_class_ids(labeling: &ClusterLabeling, class_names: &[String]) -> Vec<Option<usize>> {
    let lookup: Vec<Option<usize>> = labeling
        .vocabulary
        .iter()
        .map(|v| class_names.iter().position(|c| c == v))
        .collect();
    labeling.point_name.iter().map(|q| q.and_then(|q| lookup[q])).collect()
}

pub fn evaluate_labeling(
    labeling: &ClusterLabeling,
    class_names: &[String],
    gt: &[u16],
    method: Method,
) -> Result<MetricsFile> {
    let matched = evaluate(Prediction::Matched(&labeling.cluster_of_point), gt)?;
    let named = evaluate(Prediction::Named(&named_class_ids(labeling, class_names)), gt)?;
    Ok(MetricsFile {
        method,
        class_names: class_names.to_vec(),
        matched,
        named,
    })
}

pub fn metrics_table(m: &MetricsFile) -> String {
    format!(
        "{}\n{}",
        m.matched.to_table(&format!("{} matched", m.method), &m.class_names),
        m.named.to_table(&format!("{} named", m.method), &m.class_names)
    )
}

struct Runner {
    out: PathBuf,
    resume: bool,
    previous: BTreeMap<String, String>,
    manifest: BTreeMap<String, String>,
    key: String,
    stages: Vec<(Stage, bool)>,
}

impl Runner {
    fn next_key(&self, stage: Stage, section: &impl Serialize) -> String {
        let mut h = Sha256::new();
        h.update(self.key.as_bytes());
        h.update(stage.name().as_bytes());
        h.update(serde_json::to_vec(section).expect("sections serialize"));
        hex(&h.finalize())
    }

    /// Loads the stage from cache when allowed, otherwise computes and saves
    /// it. Stages without artifacts always run. Errors are tagged with the
    /// stage and its digest.
    fn stage<T>(
        &mut self,
        stage: Stage,
        section: &impl Serialize,
        artifacts: &[&str],
        load: impl FnOnce(&Path) -> Result<T>,
        compute: impl FnOnce() -> Result<T>,
        save: impl FnOnce(&Path, &T) -> Result<()>,
    ) -> Result<T> {
        let key = self.next_key(stage, section);
        let wrap = |e: Error| Error::Stage {
            stage: stage.name(),
            digest: key.clone(),
            source: Box::new(e),
        };
        let cached = self.resume
            && !artifacts.is_empty()
            && self.previous.get(stage.name()) == Some(&key)
            && artifacts.iter().all(|a| self.out.join(a).is_file());
        let value = if cached {
            log::info!("stage {stage}: loaded from cache");
            load(&self.out).map_err(wrap)?
        } else {
            log::info!("stage {stage}: running");
            let v = compute().map_err(wrap)?;
            save(&self.out, &v).map_err(wrap)?;
            v
        };
        self.manifest.insert(stage.name().to_owned(), key.clone());
        self.key = key;
        self.stages.push((stage, cached));
        Ok(value)
    }

    fn write_manifest(&self) -> Result<()> {
        io::save_json(&self.out.join(MANIFEST), &self.manifest)
    }
}

fn student_features(cfg: &PipelineConfig, teacher: &TeacherField) -> Result<Matrix> {
    let Some(path) = &cfg.paths.student else {
        return Ok(teacher.features.clone());
    };
    let m = io::load_with(path, io::read_matrix)?;
    if m.shape() != teacher.features.shape() {
        return Err(Error::InvalidInput(format!(
            "student features are {}x{}, teacher is {}x{}",
            m.nrows(),
            m.ncols(),
            teacher.len(),
            teacher.channels()
        )));
    }
    Ok(m)
}

fn smooth(cfg: &PipelineConfig, pooled: &Matrix) -> Result<Matrix> {
    match cfg.method {
        Method::Diffusion => {
            let graph = build_graph(pooled);
            match cfg.diffusion.solver {
                Solver::Iterative => {
                    let out = diffuse_iterative(&graph, pooled, &cfg.diffusion.cfg())?;
                    if !out.converged {
                        log::warn!("diffusion stopped after {} iterations without converging", out.iters);
                    }
                    Ok(out.features)
                }
                Solver::ClosedForm => diffuse_closed_form(&graph, pooled, cfg.diffusion.alpha),
            }
        }
        Method::Gft => gft_baseline(&build_graph(pooled), pooled, cfg.gft.keep_fraction),
        Method::Pca => {
            let dims = cfg.pca.dims.min(pooled.nrows()).min(pooled.ncols());
            pca_baseline(pooled, dims)
        }
    }
}

fn save_matrices(dir: &Path, names: [&str; 2], pair: &(Matrix, Matrix)) -> Result<()> {
    io::save_with(&dir.join(names[0]), |w| io::write_matrix(w, &pair.0))?;
    io::save_with(&dir.join(names[1]), |w| io::write_matrix(w, &pair.1))
}

/// Runs the stages up to `opts.until` on the configured scene.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let scene_dir = cfg.paths.scene.clone().expect("validated");
    let out = cfg.paths.out.clone().expect("validated");
    std::fs::create_dir_all(&out).map_err(|source| Error::File {
        path: out.clone(),
        source,
    })?;
    let scene = io::load_scene(&scene_dir)?;
    if scene.cameras.is_empty() {
        return Err(Error::InvalidInput(format!("scene {} has no views", scene_dir.display())));
    }
    let previous = if opts.resume {
        io::load_json(&out.join(MANIFEST)).unwrap_or_default()
    } else {
        BTreeMap::new()
    };
    let mut runner = Runner {
        key: input_digest(&scene_dir, cfg.paths.student.as_deref())?,
        out,
        resume: opts.resume,
        previous,
        manifest: BTreeMap::new(),
        stages: Vec::new(),
    };
    let result = run_stages(cfg, &scene, opts.until, &mut runner);
    runner.write_manifest()?;
    let metrics = result?;
    Ok(RunSummary {
        stages: runner.stages,
        metrics,
    })
}

fn run_stages(cfg: &PipelineConfig, scene: &Scene, until: Stage, r: &mut Runner) -> Result<Option<MetricsFile>> {
    let cloud = &scene.cloud;
    let teacher = r.stage(
        Stage::Teacher,
        &(),
        &["teacher.ddst"],
        |d| io::load_with(&d.join("teacher.ddst"), io::read_teacher),
        || build_teacher(cloud, &scene.feature_views()),
        |d, t| io::save_with(&d.join("teacher.ddst"), |w| io::write_teacher(w, t)),
    )?;
    if until == Stage::Teacher {
        return Ok(None);
    }

    let (groups, labels): (MaskGroups, PointLabels) = r.stage(
        Stage::Masks,
        &cfg.mask,
        &["mask_groups.json", "point_labels.json"],
        |d| Ok((io::load_json(&d.join("mask_groups.json"))?, io::load_json(&d.join("point_labels.json"))?)),
        || {
            let views = scene.mask_views();
            Ok((lift_masks(cloud, &views, &cfg.mask)?, point_label_sets(cloud, &views, &cfg.mask)?))
        },
        |d, (g, l)| {
            io::save_json(&d.join("mask_groups.json"), g)?;
            io::save_json(&d.join("point_labels.json"), l)
        },
    )?;
    if until == Stage::Masks {
        return Ok(None);
    }

    r.stage(
        Stage::Distill,
        &cfg.distill,
        &["distill.json"],
        |d| io::load_json::<DistillReport>(&d.join("distill.json")),
        || {
            let student = student_features(cfg, &teacher)?;
            let loss = loss_total(&student, &teacher, &groups, &cfg.distill)?;
            Ok(DistillReport {
                student: if cfg.paths.student.is_some() { "file" } else { "teacher" }.into(),
                value: loss.value,
                point: loss.point,
                proto: loss.proto,
                nce: loss.nce,
                prototypes: loss.prototypes,
                grad_norm: loss.grad.norm(),
            })
        },
        |d, rep| io::save_json(&d.join("distill.json"), rep),
    )?;
    if until == Stage::Distill {
        return Ok(None);
    }
    let student = student_features(cfg, &teacher)?;

    let partition: SuperpointPartition = r.stage(
        Stage::Superpoints,
        &cfg.superpoint,
        &["superpoints.ddss"],
        |d| io::load_with(&d.join("superpoints.ddss"), io::read_partition),
        || oversegment(cloud, &cfg.superpoint),
        |d, p| io::save_with(&d.join("superpoints.ddss"), |w| io::write_partition(w, p)),
    )?;
    if until == Stage::Superpoints {
        return Ok(None);
    }

    const SMOOTH: [&str; 2] = ["superpoint_features.ddsm", "diffused.ddsm"];
    let (_, smoothed) = r.stage(
        Stage::Diffusion,
        &(cfg.method, cfg.diffusion, cfg.gft, cfg.pca),
        &SMOOTH,
        |d| {
            Ok((
                io::load_with(&d.join(SMOOTH[0]), io::read_matrix)?,
                io::load_with(&d.join(SMOOTH[1]), io::read_matrix)?,
            ))
        },
        || {
            let pooled = pool_features(&partition, &student)?;
            let smoothed = smooth(cfg, &pooled)?;
            Ok((pooled, smoothed))
        },
        |d, pair| save_matrices(d, SMOOTH, pair),
    )?;
    if until == Stage::Diffusion {
        return Ok(None);
    }

    let ccfg = ClusterCfg {
        k_primitive: cfg.cluster.k_primitive.min(partition.count()),
        ..cfg.cluster.cfg(cfg.seed)
    };
    let model: PrimitiveModel = r.stage(
        Stage::Primitives,
        &ccfg,
        &["primitives.json"],
        |d| PrimitiveModel::try_from(io::load_json::<PrimitiveModelJson>(&d.join("primitives.json"))?),
        || fit_primitives(&smoothed, &ccfg),
        |d, m| io::save_json(&d.join("primitives.json"), &PrimitiveModelJson::from(m)),
    )?;
    if until == Stage::Primitives {
        return Ok(None);
    }

    let (_, labeling): (VoteTable, ClusterLabeling) = r.stage(
        Stage::Vote,
        &cfg.vote,
        &["votes.json", "labeling.json"],
        |d| Ok((io::load_json(&d.join("votes.json"))?, io::load_json(&d.join("labeling.json"))?)),
        || {
            let clusters = pseudo_labels(&model, &partition)?;
            let votes = collect_votes(&clusters, model.num_primitives(), &labels, cfg.vote.eta)?;
            let names = assign_semantics(&votes);
            let labeling = propagate(&clusters, names, votes.vocabulary.clone())?;
            Ok((votes, labeling))
        },
        |d, (v, l)| {
            io::save_json(&d.join("votes.json"), v)?;
            io::save_json(&d.join("labeling.json"), l)
        },
    )?;
    if until == Stage::Vote {
        return Ok(None);
    }

    let metrics = match cloud.gt_class() {
        Some(gt) => Some(r.stage(
            Stage::Metrics,
            &(),
            &[],
            |_| unreachable!("metrics are never cached"),
            || evaluate_labeling(&labeling, &scene.class_names, gt, cfg.method),
            |d, m| {
                io::save_json(&d.join("metrics.json"), m)?;
                std::fs::write(d.join("metrics.txt"), metrics_table(m))?;
                Ok(())
            },
        )?),
        None => {
            log::warn!("scene has no ground-truth classes; skipping metrics");
            None
        }
    };
    if until == Stage::Metrics {
        return Ok(metrics);
    }

    r.stage(
        Stage::Bev,
        &cfg.bev,
        &[],
        |_| unreachable!("bev images are never cached"),
        || Ok(()),
        |d, _| {
            let clusters: Vec<Option<usize>> = labeling.cluster_of_point.iter().map(|&c| Some(c)).collect();
            export_bev(&d.join("bev_clusters.png"), cloud, &clusters, &cfg.bev)?;
            export_bev(&d.join("bev_named.png"), cloud, &named_class_ids(&labeling, &scene.class_names), &cfg.bev)
        },
    )?;
    Ok(metrics)
}
