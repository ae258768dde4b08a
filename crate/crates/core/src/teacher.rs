//! Multi-view teacher features and lifted 3D mask groups.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::{project_cloud, CameraModel, PointCloud};
use crate::{Error, Matrix, Result};

/// Stabilizer in the denominator of the view average.
pub const TEACHER_EPS: f64 = 1e-8;

/// Dense per-view feature map stored channel-major (`c`, then `v`, then `u`).
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ViewFeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::LengthMismatch {
                what: "feature map values",
                expected: channels * height * width,
                found: values.len(),
            });
        }
        if channels == 0 {
            return Err(Error::InvalidInput("feature map needs at least one channel".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature map has non-finite entries".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, c: usize, v: usize, u: usize) -> f32 {
        self.values[(c * self.height + v) * self.width + u]
    }

    fn matches(&self, cam: &CameraModel) -> bool {
        self.height == cam.height() as usize && self.width == cam.width() as usize
    }
}

/// Foreground pixels of one 2D mask, kept as a row-major bitmap.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2d {
    pub label: String,
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask2d {
    pub fn from_pixels(label: impl Into<String>, width: usize, height: usize, pixels: &[(u32, u32)]) -> Result<Self> {
        let label = label.into();
        if label.is_empty() {
            return Err(Error::InvalidInput("mask label must be non-empty".into()));
        }
        let mut bits = vec![false; width * height];
        for &(u, v) in pixels {
            let (u, v) = (u as usize, v as usize);
            if u >= width || v >= height {
                return Err(Error::InvalidInput(format!("mask pixel ({u},{v}) outside {width}x{height}")));
            }
            bits[v * width + u] = true;
        }
        Ok(Self {
            label,
            width,
            height,
            bits,
        })
    }

    pub fn from_bitmap(label: impl Into<String>, width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        let label = label.into();
        if label.is_empty() {
            return Err(Error::InvalidInput("mask label must be non-empty".into()));
        }
        if bits.len() != width * height {
            return Err(Error::LengthMismatch {
                what: "mask bitmap",
                expected: width * height,
                found: bits.len(),
            });
        }
        Ok(Self {
            label,
            width,
            height,
            bits,
        })
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        let (u, v) = (u as usize, v as usize);
        u < self.width && v < self.height && self.bits[v * self.width + u]
    }

    pub fn bitmap(&self) -> &[bool] {
        &self.bits
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub type ViewMaskSet = Vec<Mask2d>;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherField {
    pub features: Matrix,
    pub visible: Vec<bool>,
    pub view_counts: Vec<u32>,
}

impl TeacherField {
    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.ncols()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskMergeConfig {
    /// Point-set IoU at or above which two same-label masks merge.
    pub merge_iou: f64,
    pub min_mask_points: usize,
}

impl Default for MaskMergeConfig {
    fn default() -> Self {
        Self {
            merge_iou: 0.5,
            min_mask_points: 10,
        }
    }
}

impl MaskMergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.merge_iou) {
            return Err(Error::InvalidConfig(format!("merge_iou {} outside [0,1]", self.merge_iou)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskGroup {
    pub label: String,
    /// Sorted point indices.
    pub points: Vec<usize>,
}

/// Valid 3D mask groups and the per-point group index (`None` for points
/// outside every group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskGroups {
    pub groups: Vec<MaskGroup>,
    pub point_mask: Vec<Option<usize>>,
    pub min_mask_points: usize,
}

impl MaskGroups {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Multi-view teacher: per point, the average of the features sampled in
/// every view where it is visible.
pub fn build_teacher(cloud: &PointCloud, views: &[(CameraModel, ViewFeatureMap)]) -> Result<TeacherField> {
    let n = cloud.len();
    let channels = views.first().map(|(_, f)| f.channels()).unwrap_or(0);
    for (v, (cam, fmap)) in views.iter().enumerate() {
        if fmap.channels() != channels {
            return Err(Error::MismatchedChannels {
                expected: channels,
                view: v,
                found: fmap.channels(),
            });
        }
        if !fmap.matches(cam) {
            return Err(Error::InvalidInput(format!(
                "view {v}: feature map {}x{} does not match camera {}x{}",
                fmap.width(),
                fmap.height(),
                cam.width(),
                cam.height()
            )));
        }
    }

    let pixels: Vec<Vec<Option<(u32, u32)>>> = views
        .par_iter()
        .map(|(cam, _)| project_cloud(cloud, cam).iter().map(|p| p.nearest_pixel(cam)).collect())
        .collect();

    let mut sums = Matrix::zeros(n, channels);
    let mut view_counts = vec![0u32; n];
    for ((_, fmap), px) in views.iter().zip(&pixels) {
        for (i, pix) in px.iter().enumerate() {
            if let Some((u, v)) = *pix {
                view_counts[i] += 1;
                for c in 0..channels {
                    sums[(i, c)] += fmap.get(c, v as usize, u as usize) as f64;
                }
            }
        }
    }
    for (i, &count) in view_counts.iter().enumerate() {
        if count > 0 {
            let denom = count as f64 + TEACHER_EPS;
            for c in 0..channels {
                sums[(i, c)] /= denom;
            }
        }
    }
    Ok(TeacherField {
        features: sums,
        visible: view_counts.iter().map(|&c| c > 0).collect(),
        view_counts,
    })
}

/// One 2D mask lifted to the 3D points that project into it.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMask {
    pub view: usize,
    pub mask: usize,
    pub label: String,
    /// Sorted point indices.
    pub points: Vec<usize>,
}

/// Lifts every mask of every view; empty lifts are dropped.
pub fn lift_view_masks(cloud: &PointCloud, views: &[(CameraModel, ViewMaskSet)]) -> Vec<LiftedMask> {
    let per_view: Vec<Vec<LiftedMask>> = views
        .par_iter()
        .enumerate()
        .map(|(v, (cam, masks))| {
            let px: Vec<Option<(u32, u32)>> =
                project_cloud(cloud, cam).iter().map(|p| p.nearest_pixel(cam)).collect();
            masks
                .iter()
                .enumerate()
                .filter_map(|(k, mask)| {
                    let points: Vec<usize> = px
                        .iter()
                        .enumerate()
                        .filter_map(|(i, p)| p.filter(|&(u, vv)| mask.contains(u, vv)).map(|_| i))
                        .collect();
                    (!points.is_empty()).then(|| LiftedMask {
                        view: v,
                        mask: k,
                        label: mask.label.clone(),
                        points,
                    })
                })
                .collect()
        })
        .collect();
    per_view.into_iter().flatten().collect()
}

struct WorkGroup {
    label: String,
    members: Vec<bool>,
    size: usize,
}

impl WorkGroup {
    fn new(label: &str, n: usize, points: &[usize]) -> Self {
        let mut members = vec![false; n];
        for &i in points {
            members[i] = true;
        }
        Self {
            label: label.to_owned(),
            members,
            size: points.len(),
        }
    }

    fn iou_with(&self, points: impl Iterator<Item = usize>, len: usize) -> f64 {
        let inter = points.filter(|&i| self.members[i]).count();
        let union = self.size + len - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    fn absorb(&mut self, points: impl Iterator<Item = usize>) {
        for i in points {
            if !self.members[i] {
                self.members[i] = true;
                self.size += 1;
            }
        }
    }

    fn point_iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

/// Merges lifted masks across views into disjoint 3D mask groups.
///
/// Masks are visited by descending point count (ties: lower view, then lower
/// mask index). Each joins the first existing group with the same label and
/// IoU at or above `merge_iou`, otherwise it opens a new group; groups are then
/// merged pairwise until no same-label pair reaches the threshold. Points
/// claimed by several groups go to the largest one (ties: lowest index), and
/// groups left with fewer than `min_mask_points` points are discarded.
pub fn merge_lifted(n: usize, mut lifted: Vec<LiftedMask>, cfg: &MaskMergeConfig) -> MaskGroups {
    lifted.sort_by(|a, b| {
        b.points
            .len()
            .cmp(&a.points.len())
            .then(a.view.cmp(&b.view))
            .then(a.mask.cmp(&b.mask))
    });

    let mut groups: Vec<WorkGroup> = Vec::new();
    for m in &lifted {
        let target = groups
            .iter()
            .position(|g| g.label == m.label && g.iou_with(m.points.iter().copied(), m.points.len()) >= cfg.merge_iou);
        match target {
            Some(gi) => groups[gi].absorb(m.points.iter().copied()),
            None => groups.push(WorkGroup::new(&m.label, n, &m.points)),
        }
    }

    'fixpoint: loop {
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                if groups[a].label != groups[b].label {
                    continue;
                }
                let iou = groups[a].iou_with(groups[b].point_iter(), groups[b].size);
                if iou >= cfg.merge_iou {
                    let absorbed = groups.remove(b);
                    groups[a].absorb(absorbed.point_iter());
                    continue 'fixpoint;
                }
            }
        }
        break;
    }

    // single-valued ownership: largest group wins, ties to lowest index
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (gi, g) in groups.iter().enumerate() {
        for i in g.point_iter() {
            match owner[i] {
                Some(o) if groups[o].size >= g.size => {}
                _ => owner[i] = Some(gi),
            }
        }
    }
    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
    for (i, o) in owner.iter().enumerate() {
        if let Some(gi) = o {
            owned[*gi].push(i);
        }
    }

    let mut out = Vec::new();
    let mut point_mask = vec![None; n];
    for (g, points) in groups.iter().zip(owned) {
        if points.len() < cfg.min_mask_points.max(1) {
            continue;
        }
        for &i in &points {
            point_mask[i] = Some(out.len());
        }
        out.push(MaskGroup {
            label: g.label.clone(),
            points,
        });
    }
    MaskGroups {
        groups: out,
        point_mask,
        min_mask_points: cfg.min_mask_points,
    }
}

pub fn lift_masks(
    cloud: &PointCloud,
    views: &[(CameraModel, ViewMaskSet)],
    cfg: &MaskMergeConfig,
) -> Result<MaskGroups> {
    cfg.validate()?;
    check_mask_sizes(views)?;
    Ok(merge_lifted(cloud.len(), lift_view_masks(cloud, views), cfg))
}

fn check_mask_sizes(views: &[(CameraModel, ViewMaskSet)]) -> Result<()> {
    for (v, (cam, masks)) in views.iter().enumerate() {
        if let Some(m) = masks
            .iter()
            .find(|m| m.width() != cam.width() as usize || m.height() != cam.height() as usize)
        {
            return Err(Error::InvalidInput(format!(
                "view {v}: mask `{}` is {}x{}, camera is {}x{}",
                m.label,
                m.width(),
                m.height(),
                cam.width(),
                cam.height()
            )));
        }
    }
    Ok(())
}

/// Candidate semantic labels per point, gathered from every lifted mask with
/// at least `min_mask_points` points. Labels index into a sorted vocabulary;
/// a point seen under the same label in several views carries it several
/// times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointLabels {
    pub vocabulary: Vec<String>,
    pub labels: Vec<Vec<usize>>,
}

pub fn point_label_sets(
    cloud: &PointCloud,
    views: &[(CameraModel, ViewMaskSet)],
    cfg: &MaskMergeConfig,
) -> Result<PointLabels> {
    check_mask_sizes(views)?;
    let lifted = lift_view_masks(cloud, views);
    let mut vocabulary: Vec<String> = views
        .iter()
        .flat_map(|(_, masks)| masks.iter().map(|m| m.label.clone()))
        .collect();
    vocabulary.sort();
    vocabulary.dedup();
    let mut labels = vec![Vec::new(); cloud.len()];
    for m in lifted.iter().filter(|m| m.points.len() >= cfg.min_mask_points.max(1)) {
        let q = vocabulary.binary_search(&m.label).expect("label drawn from the vocabulary");
        for &i in &m.points {
            labels[i].push(q);
        }
    }
    for l in &mut labels {
        l.sort_unstable();
    }
    Ok(PointLabels { vocabulary, labels })
}
