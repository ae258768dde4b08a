//! Synthetic scenes with known ground truth.
//!
//! Objects are sampled as surface point sets. Each view is rendered by
//! z-buffered square splats; a pixel owned by an object carries its class
//! archetype plus Gaussian noise, and each object's footprint becomes one mask
//! after erosion and random dropping.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::Scene;
use crate::scene::{project_point, CameraModel, PointCloud};
use crate::teacher::{Mask2d, ViewFeatureMap, ViewMaskSet};
use crate::{Error, Result};

pub const MAX_ARCHETYPE_COSINE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned box; walls and top are sampled, the bottom is not.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Upright cylinder; lateral surface and top cap.
    Cylinder { base: [f64; 3], radius: f64, height: f64 },
    /// Horizontal rectangle at height `z`.
    Plane { min: [f64; 2], max: [f64; 2], z: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTemplate {
    pub shape: Shape,
    pub class: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub target: [f64; 3],
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub width: u32,
    pub height_px: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskNoise {
    /// Iterations of 4-neighbour erosion.
    pub erosion: u32,
    pub drop_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub class_names: Vec<String>,
    /// One unit vector per class.
    pub archetypes: Vec<Vec<f64>>,
    pub sigma: f64,
    pub objects: Vec<ObjectTemplate>,
    /// Points per square metre of surface.
    pub density: f64,
    /// Plane points closer than this to another object's footprint are discarded.
    pub clearance: f64,
    /// World-space half-width of a point splat.
    pub splat_radius: f64,
    pub cameras: CameraRing,
    pub mask_noise: MaskNoise,
}

/// `count` orthonormal vectors in `dims` dimensions from Gram-Schmidt on
/// Gaussian draws.
pub fn orthonormal_archetypes(count: usize, dims: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count > dims {
        return Err(Error::InvalidConfig(format!(
            "{count} orthonormal archetypes need at least {count} channels, got {dims}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &out {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Ok(out)
}

impl SyntheticSceneSpec {
    /// Road plane, car, building and pole under a six-camera ring.
    pub fn canonical(sigma: f64) -> Self {
        let class_names = ["road", "car", "building", "pole"].map(String::from).to_vec();
        Self {
            archetypes: orthonormal_archetypes(class_names.len(), 16, 7).expect("4 <= 16"),
            class_names,
            sigma,
            objects: vec![
                ObjectTemplate {
                    shape: Shape::Plane {
                        min: [-6.0, -6.0],
                        max: [6.0, 6.0],
                        z: 0.0,
                    },
                    class: 0,
                },
                ObjectTemplate {
                    shape: Shape::Box {
                        min: [-4.0, -3.5, 0.0],
                        max: [0.0, -1.5, 1.6],
                    },
                    class: 1,
                },
                ObjectTemplate {
                    shape: Shape::Box {
                        min: [1.5, 1.0, 0.0],
                        max: [4.5, 4.0, 4.0],
                    },
                    class: 2,
                },
                ObjectTemplate {
                    shape: Shape::Cylinder {
                        base: [-3.0, 3.0, 0.0],
                        radius: 0.4,
                        height: 3.0,
                    },
                    class: 3,
                },
            ],
            density: 25.0,
            clearance: 0.35,
            splat_radius: 0.12,
            cameras: CameraRing {
                count: 6,
                radius: 14.0,
                height: 9.0,
                target: [0.0, 0.0, 0.0],
                fov_deg: 70.0,
                width: 128,
                height_px: 96,
            },
            mask_noise: MaskNoise {
                erosion: 1,
                drop_prob: 0.1,
            },
        }
    }

    pub fn channels(&self) -> usize {
        self.archetypes.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.objects.is_empty() {
            return bad("scene needs at least one object".into());
        }
        if self.archetypes.len() != self.class_names.len() {
            return bad(format!(
                "{} archetypes for {} classes",
                self.archetypes.len(),
                self.class_names.len()
            ));
        }
        let c = self.channels();
        if c == 0 || self.archetypes.iter().any(|a| a.len() != c) {
            return bad("archetypes must share a nonzero channel count".into());
        }
        for (k, a) in self.archetypes.iter().enumerate() {
            let n = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return bad(format!("archetype {k} has norm {n}"));
            }
            for (l, b) in self.archetypes.iter().enumerate().skip(k + 1) {
                let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                if cos > MAX_ARCHETYPE_COSINE + 1e-12 {
                    return bad(format!("archetypes {k} and {l} have cosine {cos}"));
                }
            }
        }
        if let Some(o) = self.objects.iter().find(|o| o.class as usize >= self.class_names.len()) {
            return bad(format!("object class {} has no name", o.class));
        }
        for o in &self.objects {
            let ok = match o.shape {
                Shape::Box { min, max } => (0..3).all(|i| min[i] < max[i]),
                Shape::Cylinder { radius, height, .. } => radius > 0.0 && height > 0.0,
                Shape::Plane { min, max, .. } => min[0] < max[0] && min[1] < max[1],
            };
            if !ok {
                return bad(format!("degenerate shape {:?}", o.shape));
            }
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(self.sigma.is_finite() && self.sigma >= 0.0) || !positive(self.density) {
            return bad("sigma must be >= 0 and density > 0".into());
        }
        if !(self.clearance >= 0.0 && self.splat_radius >= 0.0) {
            return bad("clearance and splat_radius must be >= 0".into());
        }
        let r = &self.cameras;
        if r.count == 0 || r.width == 0 || r.height_px == 0 || !(r.fov_deg > 0.0 && r.fov_deg < 180.0) {
            return bad("camera ring needs count >= 1, a nonempty image and fov in (0, 180)".into());
        }
        if !(0.0..=1.0).contains(&self.mask_noise.drop_prob) {
            return bad("drop_prob must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn ring_cameras(&self) -> Result<Vec<CameraModel>> {
        let r = &self.cameras;
        let f = (r.width as f64 / 2.0) / (r.fov_deg.to_radians() / 2.0).tan();
        let target = Point3::from(r.target);
        (0..r.count)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / r.count as f64;
                let eye = Point3::new(
                    target.x + r.radius * th.cos(),
                    target.y + r.radius * th.sin(),
                    r.height,
                );
                CameraModel::look_at(eye, target, Vector3::z(), f, f, r.width, r.height_px)
            })
            .collect()
    }
}

fn count_for(area: f64, density: f64) -> usize {
    (area * density).round() as usize
}

fn footprint_distance(shape: &Shape, x: f64, y: f64) -> Option<f64> {
    match *shape {
        Shape::Box { min, max } => {
            let dx = (min[0] - x).max(x - max[0]).max(0.0);
            let dy = (min[1] - y).max(y - max[1]).max(0.0);
            Some(dx.hypot(dy))
        }
        Shape::Cylinder { base, radius, .. } => Some(((x - base[0]).hypot(y - base[1]) - radius).max(0.0)),
        Shape::Plane { .. } => None,
    }
}

fn sample_shape(shape: &Shape, density: f64, rng: &mut ChaCha8Rng) -> Vec<Point3<f64>> {
    let mut out = Vec::new();
    match *shape {
        Shape::Box { min, max } => {
            let [lx, ly, lz] = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
            // Faces as (origin, edge a, edge b).
            let faces = [
                (min, [lx, 0.0, 0.0], [0.0, 0.0, lz]),
                ([min[0], max[1], min[2]], [lx, 0.0, 0.0], [0.0, 0.0, lz]),
                (min, [0.0, ly, 0.0], [0.0, 0.0, lz]),
                ([max[0], min[1], min[2]], [0.0, ly, 0.0], [0.0, 0.0, lz]),
                ([min[0], min[1], max[2]], [lx, 0.0, 0.0], [0.0, ly, 0.0]),
            ];
            for (o, a, b) in faces {
                let area = Vector3::from(a).cross(&Vector3::from(b)).norm();
                for _ in 0..count_for(area, density) {
                    let (s, t): (f64, f64) = (rng.random(), rng.random());
                    out.push(Point3::from(std::array::from_fn::<f64, 3, _>(|i| o[i] + s * a[i] + t * b[i])));
                }
            }
        }
        Shape::Cylinder { base, radius, height } => {
            for _ in 0..count_for(2.0 * PI * radius * height, density) {
                let th = 2.0 * PI * rng.random::<f64>();
                let z = height * rng.random::<f64>();
                out.push(Point3::new(base[0] + radius * th.cos(), base[1] + radius * th.sin(), base[2] + z));
            }
            for _ in 0..count_for(PI * radius * radius, density) {
                let th = 2.0 * PI * rng.random::<f64>();
                let r = radius * rng.random::<f64>().sqrt();
                out.push(Point3::new(base[0] + r * th.cos(), base[1] + r * th.sin(), base[2] + height));
            }
        }
        Shape::Plane { min, max, z } => {
            let area = (max[0] - min[0]) * (max[1] - min[1]);
            for _ in 0..count_for(area, density) {
                let x = min[0] + (max[0] - min[0]) * rng.random::<f64>();
                let y = min[1] + (max[1] - min[1]) * rng.random::<f64>();
                out.push(Point3::new(x, y, z));
            }
        }
    }
    out
}

/// Sampled surfaces with the object index of every point.
pub fn sample_objects(spec: &SyntheticSceneSpec, seed: u64) -> (Vec<Point3<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut owner = Vec::new();
    for (k, obj) in spec.objects.iter().enumerate() {
        for p in sample_shape(&obj.shape, spec.density, &mut rng) {
            if matches!(obj.shape, Shape::Plane { .. }) {
                let blocked = spec.objects.iter().enumerate().any(|(j, other)| {
                    j != k && footprint_distance(&other.shape, p.x, p.y).is_some_and(|d| d < spec.clearance)
                });
                if blocked {
                    continue;
                }
            }
            points.push(p.map(|c| c as f32 as f64));
            owner.push(k);
        }
    }
    (points, owner)
}

/// Per-pixel owning object after z-buffered splatting, row-major.
pub fn render_owners(points: &[Point3<f64>], owner: &[usize], cam: &CameraModel, splat_radius: f64) -> Vec<Option<usize>> {
    let (w, h) = (cam.width() as i64, cam.height() as i64);
    let fx = cam.intrinsics()[(0, 0)];
    let mut depth = vec![f64::INFINITY; (w * h) as usize];
    let mut own = vec![None; (w * h) as usize];
    for (p, &o) in points.iter().zip(owner) {
        let proj = project_point(p, cam);
        let Some((u, v)) = proj.nearest_pixel(cam) else {
            continue;
        };
        let r = (fx * splat_radius / proj.depth).round().clamp(0.0, 4.0) as i64;
        for dv in -r..=r {
            for du in -r..=r {
                let (uu, vv) = (u as i64 + du, v as i64 + dv);
                if uu < 0 || vv < 0 || uu >= w || vv >= h {
                    continue;
                }
                let idx = (vv * w + uu) as usize;
                if proj.depth < depth[idx] {
                    depth[idx] = proj.depth;
                    own[idx] = Some(o);
                }
            }
        }
    }
    own
}

/// Erodes with the 4-neighbourhood; pixels beyond the border count as set.
pub fn erode(bits: &[bool], width: usize, height: usize, iterations: u32) -> Vec<bool> {
    let mut cur = bits.to_vec();
    for _ in 0..iterations {
        let prev = cur.clone();
        let at = |u: i64, v: i64| u < 0 || v < 0 || u >= width as i64 || v >= height as i64 || prev[v as usize * width + u as usize];
        for v in 0..height {
            for u in 0..width {
                let (ui, vi) = (u as i64, v as i64);
                cur[v * width + u] = prev[v * width + u] && at(ui - 1, vi) && at(ui + 1, vi) && at(ui, vi - 1) && at(ui, vi + 1);
            }
        }
    }
    cur
}

fn render_view(
    spec: &SyntheticSceneSpec,
    points: &[Point3<f64>],
    owner: &[usize],
    cam: &CameraModel,
    rng: &mut ChaCha8Rng,
) -> Result<(ViewFeatureMap, ViewMaskSet)> {
    let (w, h) = (cam.width() as usize, cam.height() as usize);
    let c = spec.channels();
    let own = render_owners(points, owner, cam, spec.splat_radius);
    let mut values = vec![0f32; c * w * h];
    for (idx, o) in own.iter().enumerate() {
        if let Some(o) = o {
            let arch = &spec.archetypes[spec.objects[*o].class as usize];
            for (ch, a) in arch.iter().enumerate() {
                let noise: f64 = if spec.sigma > 0.0 {
                    spec.sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut *rng)
                } else {
                    0.0
                };
                values[ch * w * h + idx] = (a + noise) as f32;
            }
        }
    }
    let mut masks = Vec::new();
    for (k, obj) in spec.objects.iter().enumerate() {
        let keep = rng.random::<f64>() >= spec.mask_noise.drop_prob;
        let bits: Vec<bool> = own.iter().map(|o| *o == Some(k)).collect();
        let bits = erode(&bits, w, h, spec.mask_noise.erosion);
        if keep && bits.iter().any(|&b| b) {
            masks.push(Mask2d::from_bitmap(spec.class_names[obj.class as usize].clone(), w, h, bits)?);
        }
    }
    Ok((ViewFeatureMap::new(c, h, w, values)?, masks))
}

pub fn generate_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let (points, owner) = sample_objects(spec, seed);
    let gt = owner.iter().map(|&o| spec.objects[o].class).collect();
    let cloud = PointCloud::new(points, Some(gt))?;
    let cameras = spec.ring_cameras()?;
    let rendered = cameras
        .par_iter()
        .enumerate()
        .map(|(v, cam)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(v as u64 + 1);
            render_view(spec, cloud.positions(), &owner, cam, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let (features, masks) = rendered.into_iter().unzip();
    Ok(Scene {
        cloud,
        cameras,
        features,
        masks,
        class_names: spec.class_names.clone(),
    })
}
