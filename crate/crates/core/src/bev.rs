//! Bird's-eye-view label maps.
//!
//! The raster covers the x/y bounding box of the whole cloud with square
//! pixels, x to the right and y up. A pixel takes the most frequent label of
//! the labeled points falling in it (ties to the lower label); pixels without
//! labeled points keep [`BACKGROUND`].

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::scene::PointCloud;
use crate::{Error, Result};

pub const BACKGROUND: [u8; 3] = [0, 0, 0];

/// Label `k` is drawn in `PALETTE[k % PALETTE.len()]`.
pub const PALETTE: [[u8; 3]; 12] = [
    [128, 64, 128],
    [0, 0, 142],
    [70, 70, 70],
    [153, 153, 153],
    [107, 142, 35],
    [220, 20, 60],
    [250, 170, 30],
    [152, 251, 152],
    [70, 130, 180],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
];

pub fn color_of(label: usize) -> [u8; 3] {
    PALETTE[label % PALETTE.len()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BevCfg {
    /// Metres per pixel.
    pub pixel_size: f64,
}

impl Default for BevCfg {
    fn default() -> Self {
        Self { pixel_size: 0.1 }
    }
}

impl BevCfg {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            return Err(Error::InvalidConfig(format!("bev.pixel_size must be > 0, got {}", self.pixel_size)));
        }
        Ok(())
    }
}

/// Per-pixel winning label, row-major, plus the raster size.
pub fn rasterize_labels(cloud: &PointCloud, labels: &[Option<usize>], cfg: &BevCfg) -> Result<(Vec<Option<usize>>, u32, u32)> {
    cfg.validate()?;
    if labels.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "bev labels",
            expected: cloud.len(),
            found: labels.len(),
        });
    }
    let pos = cloud.positions();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pos {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let s = cfg.pixel_size;
    let w = ((x1 - x0) / s).floor() as usize + 1;
    let h = ((y1 - y0) / s).floor() as usize + 1;
    let nlabels = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut counts = vec![0u32; w * h * nlabels];
    for (p, l) in pos.iter().zip(labels) {
        if let Some(l) = l {
            let u = (((p.x - x0) / s).floor() as usize).min(w - 1);
            let v = (((y1 - p.y) / s).floor() as usize).min(h - 1);
            counts[(v * w + u) * nlabels + l] += 1;
        }
    }
    let winners = counts
        .chunks(nlabels.max(1))
        .take(w * h)
        .map(|c| {
            let (best, &n) = c.iter().enumerate().rev().max_by_key(|(_, &n)| n)?;
            (n > 0).then_some(best)
        })
        .collect::<Vec<_>>();
    let winners = if nlabels == 0 { vec![None; w * h] } else { winners };
    Ok((winners, w as u32, h as u32))
}

pub fn render_bev(cloud: &PointCloud, labels: &[Option<usize>], cfg: &BevCfg) -> Result<RgbImage> {
    let (winners, w, h) = rasterize_labels(cloud, labels, cfg)?;
    Ok(RgbImage::from_fn(w, h, |u, v| {
        Rgb(winners[(v * w + u) as usize].map_or(BACKGROUND, color_of))
    }))
}

pub fn export_bev(path: &Path, cloud: &PointCloud, labels: &[Option<usize>], cfg: &BevCfg) -> Result<()> {
    render_bev(cloud, labels, cfg)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn grid(n: usize, step: f64) -> PointCloud {
        let pts = (0..n * n)
            .map(|i| Point3::new((i % n) as f64 * step, (i / n) as f64 * step, 0.0))
            .collect();
        PointCloud::new(pts, None).unwrap()
    }

    #[test]
    fn empty_labels_give_background() {
        let cloud = grid(10, 0.1);
        let img = render_bev(&cloud, &vec![None; 100], &BevCfg::default()).unwrap();
        assert!(img.pixels().all(|p| p.0 == BACKGROUND));
    }

    #[test]
    fn single_class_fills_extent() {
        let cloud = grid(20, 0.1);
        let img = render_bev(&cloud, &vec![Some(2); 400], &BevCfg { pixel_size: 0.25 }).unwrap();
        assert_eq!(img.dimensions(), (8, 8));
        assert!(img.pixels().all(|p| p.0 == color_of(2)));
    }

    #[test]
    fn majority_and_ties() {
        let pts = vec![Point3::new(0.01, 0.01, 0.0), Point3::new(0.02, 0.02, 1.0), Point3::new(0.03, 0.03, 2.0)];
        let cloud = PointCloud::new(pts, None).unwrap();
        let (w, _, _) = rasterize_labels(&cloud, &[Some(1), Some(0), Some(1)], &BevCfg::default()).unwrap();
        assert_eq!(w, vec![Some(1)]);
        let (w, _, _) = rasterize_labels(&cloud, &[Some(3), Some(1), None], &BevCfg::default()).unwrap();
        assert_eq!(w, vec![Some(1)]);
    }

    #[test]
    fn checkerboard_proportions() {
        // 3-class checkerboard of 1 m cells on a jittered 60×60 grid.
        let n = 60;
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n * n {
            let (a, b) = ((i % n) as f64, (i / n) as f64);
            let p = Point3::new(a * 0.1 + 0.013 * ((i * 7) % 5) as f64, b * 0.1 + 0.011 * ((i * 3) % 7) as f64, 0.0);
            labels.push(Some(((p.x.floor() + p.y.floor()) as usize) % 3));
            pts.push(p);
        }
        let cloud = PointCloud::new(pts, None).unwrap();
        let img = render_bev(&cloud, &labels, &BevCfg { pixel_size: 0.1 }).unwrap();
        let drawn = img.pixels().filter(|p| p.0 != BACKGROUND).count() as f64;
        for k in 0..3 {
            let pix = img.pixels().filter(|p| p.0 == color_of(k)).count() as f64 / drawn;
            let pts = labels.iter().filter(|l| **l == Some(k)).count() as f64 / labels.len() as f64;
            assert!((pix - pts).abs() < 0.02, "class {k}: {pix} vs {pts}");
        }
    }

    #[test]
    fn png_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = grid(8, 0.3);
        let labels: Vec<_> = (0..64).map(|i| (i % 3 != 0).then_some(i % 5)).collect();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        export_bev(&a, &cloud, &labels, &BevCfg::default()).unwrap();
        export_bev(&b, &cloud, &labels, &BevCfg::default()).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        assert!(render_bev(&cloud, &labels[1..], &BevCfg::default()).is_err());
    }
}
