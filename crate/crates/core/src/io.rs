//! On-disk formats.
//!
//! Binary files are little-endian and start with a four-byte magic:
//!
//! | magic  | contents                                                        |
//! |--------|-----------------------------------------------------------------|
//! | `DDSP` | u32 version, u64 N, u8 has_gt, N×3 f32 positions, [N u16 class] |
//! | `DDSF` | u32 C, u32 H, u32 W, C·H·W f32 (channel, row, column order)     |
//! | `DDSS` | u64 N, u32 N_s, N u32 superpoint ids                            |
//! | `DDST` | u64 N, u32 C, N·C f64 teacher rows, N u32 view counts           |
//! | `DDSM` | u64 rows, u32 cols, rows·cols f64 in row-major order            |
//!
//! Cameras and masks are JSON; mask pixels are run-length encoded over the
//! row-major pixel order as alternating background/foreground run lengths,
//! starting with background.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix3, Matrix4, Point3};
use serde::{Deserialize, Serialize};

use crate::cluster::PrimitiveModel;
use crate::scene::{CameraModel, PointCloud};
use crate::superpoint::SuperpointPartition;
use crate::teacher::{Mask2d, TeacherField, ViewFeatureMap, ViewMaskSet};
use crate::{Error, Matrix, Result};

pub const CLOUD_VERSION: u32 = 1;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::File {
        path: path.to_owned(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::File {
        path: path.to_owned(),
        source,
    })
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 4], format: &'static str) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::format(format, format!("bad magic {buf:?}")));
    }
    Ok(())
}

fn expect_eof(r: &mut impl Read, format: &'static str) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format(format, "trailing bytes"));
    }
    Ok(())
}

fn truncated(format: &'static str) -> impl Fn(std::io::Error) -> Error {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(format, "truncated")
        } else {
            Error::Io(e)
        }
    }
}

pub fn write_cloud(w: &mut impl Write, cloud: &PointCloud) -> Result<()> {
    w.write_all(b"DDSP")?;
    w.write_u32::<LE>(CLOUD_VERSION)?;
    w.write_u64::<LE>(cloud.len() as u64)?;
    w.write_u8(cloud.gt_class().is_some() as u8)?;
    for p in cloud.positions() {
        for c in p.iter() {
            w.write_f32::<LE>(*c as f32)?;
        }
    }
    if let Some(gt) = cloud.gt_class() {
        for &g in gt {
            w.write_u16::<LE>(g)?;
        }
    }
    Ok(())
}

pub fn read_cloud(r: &mut impl Read) -> Result<PointCloud> {
    const F: &str = "DDSP";
    let map = truncated(F);
    expect_magic(r, b"DDSP", F)?;
    let version = r.read_u32::<LE>().map_err(&map)?;
    if version != CLOUD_VERSION {
        return Err(Error::format(F, format!("unsupported version {version}")));
    }
    let n = r.read_u64::<LE>().map_err(&map)? as usize;
    let has_gt = match r.read_u8().map_err(&map)? {
        0 => false,
        1 => true,
        b => return Err(Error::format(F, format!("has_gt flag {b}"))),
    };
    let mut positions = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let x = r.read_f32::<LE>().map_err(&map)? as f64;
        let y = r.read_f32::<LE>().map_err(&map)? as f64;
        let z = r.read_f32::<LE>().map_err(&map)? as f64;
        positions.push(Point3::new(x, y, z));
    }
    let gt = if has_gt {
        let mut gt = vec![0u16; n];
        r.read_u16_into::<LE>(&mut gt).map_err(&map)?;
        Some(gt)
    } else {
        None
    };
    expect_eof(r, F)?;
    PointCloud::new(positions, gt)
}

pub fn write_feature_map(w: &mut impl Write, map: &ViewFeatureMap) -> Result<()> {
    w.write_all(b"DDSF")?;
    w.write_u32::<LE>(map.channels() as u32)?;
    w.write_u32::<LE>(map.height() as u32)?;
    w.write_u32::<LE>(map.width() as u32)?;
    for v in map.values() {
        w.write_f32::<LE>(*v)?;
    }
    Ok(())
}

pub fn read_feature_map(r: &mut impl Read) -> Result<ViewFeatureMap> {
    const F: &str = "DDSF";
    let map = truncated(F);
    expect_magic(r, b"DDSF", F)?;
    let c = r.read_u32::<LE>().map_err(&map)? as usize;
    let h = r.read_u32::<LE>().map_err(&map)? as usize;
    let w = r.read_u32::<LE>().map_err(&map)? as usize;
    let mut values = vec![0f32; c * h * w];
    r.read_f32_into::<LE>(&mut values).map_err(&map)?;
    expect_eof(r, F)?;
    ViewFeatureMap::new(c, h, w, values)
}

pub fn write_partition(w: &mut impl Write, p: &SuperpointPartition) -> Result<()> {
    w.write_all(b"DDSS")?;
    w.write_u64::<LE>(p.num_points() as u64)?;
    w.write_u32::<LE>(p.count() as u32)?;
    for &s in p.assignment() {
        w.write_u32::<LE>(s as u32)?;
    }
    Ok(())
}

pub fn read_partition(r: &mut impl Read) -> Result<SuperpointPartition> {
    const F: &str = "DDSS";
    let map = truncated(F);
    expect_magic(r, b"DDSS", F)?;
    let n = r.read_u64::<LE>().map_err(&map)? as usize;
    let ns = r.read_u32::<LE>().map_err(&map)? as usize;
    let mut a = vec![0u32; n];
    r.read_u32_into::<LE>(&mut a).map_err(&map)?;
    expect_eof(r, F)?;
    SuperpointPartition::from_assignment(a.into_iter().map(|s| s as usize).collect(), ns)
}

pub fn write_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    w.write_all(b"DDSM")?;
    w.write_u64::<LE>(m.nrows() as u64)?;
    w.write_u32::<LE>(m.ncols() as u32)?;
    for row in m.row_iter() {
        for v in row.iter() {
            w.write_f64::<LE>(*v)?;
        }
    }
    Ok(())
}

pub fn read_matrix(r: &mut impl Read) -> Result<Matrix> {
    const F: &str = "DDSM";
    let map = truncated(F);
    expect_magic(r, b"DDSM", F)?;
    let rows = r.read_u64::<LE>().map_err(&map)? as usize;
    let cols = r.read_u32::<LE>().map_err(&map)? as usize;
    let mut data = vec![0f64; rows * cols];
    r.read_f64_into::<LE>(&mut data).map_err(&map)?;
    expect_eof(r, F)?;
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

pub fn write_teacher(w: &mut impl Write, t: &TeacherField) -> Result<()> {
    w.write_all(b"DDST")?;
    w.write_u64::<LE>(t.len() as u64)?;
    w.write_u32::<LE>(t.channels() as u32)?;
    for row in t.features.row_iter() {
        for v in row.iter() {
            w.write_f64::<LE>(*v)?;
        }
    }
    for &c in &t.view_counts {
        w.write_u32::<LE>(c)?;
    }
    Ok(())
}

pub fn read_teacher(r: &mut impl Read) -> Result<TeacherField> {
    const F: &str = "DDST";
    let map = truncated(F);
    expect_magic(r, b"DDST", F)?;
    let n = r.read_u64::<LE>().map_err(&map)? as usize;
    let c = r.read_u32::<LE>().map_err(&map)? as usize;
    let mut data = vec![0f64; n * c];
    r.read_f64_into::<LE>(&mut data).map_err(&map)?;
    let mut view_counts = vec![0u32; n];
    r.read_u32_into::<LE>(&mut view_counts).map_err(&map)?;
    expect_eof(r, F)?;
    Ok(TeacherField {
        features: Matrix::from_row_slice(n, c, &data),
        visible: view_counts.iter().map(|&v| v > 0).collect(),
        view_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    /// Row-major 3×3.
    pub intrinsics: [f64; 9],
    /// Row-major 4×4 world-to-camera transform.
    pub extrinsics: [f64; 16],
    pub width: u32,
    pub height: u32,
}

impl From<&CameraModel> for CameraJson {
    fn from(cam: &CameraModel) -> Self {
        let k = cam.intrinsics();
        let e = cam.extrinsics();
        Self {
            intrinsics: std::array::from_fn(|i| k[(i / 3, i % 3)]),
            extrinsics: std::array::from_fn(|i| e[(i / 4, i % 4)]),
            width: cam.width(),
            height: cam.height(),
        }
    }
}

impl TryFrom<CameraJson> for CameraModel {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        CameraModel::new(
            Matrix3::from_row_slice(&j.intrinsics),
            Matrix4::from_row_slice(&j.extrinsics),
            j.width,
            j.height,
        )
    }
}

pub fn rle_encode(bits: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    if current || runs.is_empty() {
        runs.push(len);
    }
    runs
}

/// Decodes alternating background/foreground runs into `len` pixels; pixels
/// past the last run are background.
pub fn rle_decode(runs: &[u32], len: usize) -> Result<Vec<bool>> {
    let mut bits = Vec::with_capacity(len);
    for (k, &run) in runs.iter().enumerate() {
        let fg = k % 2 == 1;
        if bits.len() + run as usize > len {
            return Err(Error::format("mask RLE", format!("runs cover more than {len} pixels")));
        }
        bits.extend(std::iter::repeat_n(fg, run as usize));
    }
    bits.resize(len, false);
    Ok(bits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskJson {
    pub label: String,
    pub rle: Vec<u32>,
}

pub fn masks_to_json(masks: &[Mask2d]) -> Vec<MaskJson> {
    masks
        .iter()
        .map(|m| MaskJson {
            label: m.label.clone(),
            rle: rle_encode(m.bitmap()),
        })
        .collect()
}

pub fn masks_from_json(masks: Vec<MaskJson>, width: usize, height: usize) -> Result<ViewMaskSet> {
    masks
        .into_iter()
        .map(|m| Mask2d::from_bitmap(m.label, width, height, rle_decode(&m.rle, width * height)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveModelJson {
    pub channel_mask: Vec<bool>,
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    #[serde(default)]
    pub zero_norm_rows: usize,
    #[serde(default)]
    pub coarse_labels: Vec<usize>,
}

impl From<&PrimitiveModel> for PrimitiveModelJson {
    fn from(m: &PrimitiveModel) -> Self {
        Self {
            channel_mask: m.channel_mask.clone(),
            centers: m.centers.row_iter().map(|r| r.iter().copied().collect()).collect(),
            assignments: m.primitive_of_superpoint.clone(),
            zero_norm_rows: m.zero_norm_rows,
            coarse_labels: m.coarse_labels.clone(),
        }
    }
}

impl TryFrom<PrimitiveModelJson> for PrimitiveModel {
    type Error = Error;

    fn try_from(j: PrimitiveModelJson) -> Result<Self> {
        let k = j.centers.len();
        let c = j.centers.first().map_or(0, Vec::len);
        if j.centers.iter().any(|r| r.len() != c) {
            return Err(Error::format("primitive model", "ragged centers"));
        }
        if j.assignments.iter().any(|&a| a >= k) {
            return Err(Error::format("primitive model", "assignment out of range"));
        }
        Ok(PrimitiveModel {
            centers: Matrix::from_fn(k, c, |r, col| j.centers[r][col]),
            primitive_of_superpoint: j.assignments,
            channel_mask: j.channel_mask,
            zero_norm_rows: j.zero_norm_rows,
            coarse_labels: j.coarse_labels,
        })
    }
}

pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

pub fn save_with<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = create(path)?;
    write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_with<T, F>(path: &Path, read: F) -> Result<T>
where
    F: FnOnce(&mut BufReader<File>) -> Result<T>,
{
    read(&mut open(path)?)
}

/// A scene directory: `cloud.ddsp`, `classes.json` (class names indexed by
/// ground-truth id) and, per view `NNN`, `views/NNN.camera.json`,
/// `views/NNN.features.ddsf` and `views/NNN.masks.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub cameras: Vec<CameraModel>,
    pub features: Vec<ViewFeatureMap>,
    pub masks: Vec<ViewMaskSet>,
    pub class_names: Vec<String>,
}

impl Scene {
    pub fn feature_views(&self) -> Vec<(CameraModel, ViewFeatureMap)> {
        self.cameras.iter().cloned().zip(self.features.iter().cloned()).collect()
    }

    pub fn mask_views(&self) -> Vec<(CameraModel, ViewMaskSet)> {
        self.cameras.iter().cloned().zip(self.masks.iter().cloned()).collect()
    }
}

fn view_path(dir: &Path, v: usize, suffix: &str) -> PathBuf {
    dir.join("views").join(format!("{v:03}.{suffix}"))
}

pub fn cloud_path(dir: &Path) -> PathBuf {
    dir.join("cloud.ddsp")
}

pub fn save_scene(dir: &Path, scene: &Scene) -> Result<()> {
    std::fs::create_dir_all(dir.join("views"))?;
    save_with(&cloud_path(dir), |w| write_cloud(w, &scene.cloud))?;
    save_json(&dir.join("classes.json"), &scene.class_names)?;
    for (v, cam) in scene.cameras.iter().enumerate() {
        save_json(&view_path(dir, v, "camera.json"), &CameraJson::from(cam))?;
        save_with(&view_path(dir, v, "features.ddsf"), |w| write_feature_map(w, &scene.features[v]))?;
        save_json(&view_path(dir, v, "masks.json"), &masks_to_json(&scene.masks[v]))?;
    }
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let cloud = load_with(&cloud_path(dir), read_cloud)?;
    let class_names: Vec<String> = load_json(&dir.join("classes.json"))?;
    let (mut cameras, mut features, mut masks) = (Vec::new(), Vec::new(), Vec::new());
    for v in 0.. {
        let cam_path = view_path(dir, v, "camera.json");
        if !cam_path.exists() {
            break;
        }
        let cam = CameraModel::try_from(load_json::<CameraJson>(&cam_path)?)?;
        features.push(load_with(&view_path(dir, v, "features.ddsf"), read_feature_map)?);
        let mj: Vec<MaskJson> = load_json(&view_path(dir, v, "masks.json"))?;
        masks.push(masks_from_json(mj, cam.width() as usize, cam.height() as usize)?);
        cameras.push(cam);
    }
    Ok(Scene {
        cloud,
        cameras,
        features,
        masks,
        class_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn roundtrip_cloud(c: &PointCloud) -> PointCloud {
        let mut buf = Vec::new();
        write_cloud(&mut buf, c).unwrap();
        read_cloud(&mut Cursor::new(buf)).unwrap()
    }

    #[test]
    fn cloud_header_layout() {
        let c = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)], Some(vec![7])).unwrap();
        let mut buf = Vec::new();
        write_cloud(&mut buf, &c).unwrap();
        assert_eq!(&buf[..4], b"DDSP");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(buf[16], 1);
        assert_eq!(&buf[17..21], &1.0f32.to_le_bytes());
        assert_eq!(&buf[29..31], &7u16.to_le_bytes());
        assert_eq!(buf.len(), 31);
        assert_eq!(roundtrip_cloud(&c), c);
    }

    #[test]
    fn rejects_corrupt_files() {
        let c = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)], None).unwrap();
        let mut buf = Vec::new();
        write_cloud(&mut buf, &c).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_cloud(&mut Cursor::new(bad)), Err(Error::Format { .. })));
        let short = buf[..buf.len() - 2].to_vec();
        assert!(matches!(read_cloud(&mut Cursor::new(short)), Err(Error::Format { .. })));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_cloud(&mut Cursor::new(long)), Err(Error::Format { .. })));
    }

    #[test]
    fn feature_map_layout() {
        let m = ViewFeatureMap::new(2, 1, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let mut buf = Vec::new();
        write_feature_map(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], b"DDSF");
        assert_eq!(&buf[4..16], &[2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(buf.len(), 16 + 6 * 4);
        let back = read_feature_map(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back.get(1, 0, 2), 5.0);
    }

    #[test]
    fn partition_layout() {
        let p = SuperpointPartition::from_assignment(vec![1, 0, 1], 2).unwrap();
        let mut buf = Vec::new();
        write_partition(&mut buf, &p).unwrap();
        assert_eq!(&buf[..4], b"DDSS");
        assert_eq!(buf.len(), 4 + 8 + 4 + 12);
        assert_eq!(read_partition(&mut Cursor::new(buf)).unwrap(), p);
    }

    #[test]
    fn rle_known_runs() {
        let bits = [false, false, true, true, true, false, true];
        assert_eq!(rle_encode(&bits), vec![2, 3, 1, 1]);
        assert_eq!(rle_encode(&[true, false]), vec![0, 1]);
        assert_eq!(rle_encode(&[false, false]), vec![2]);
        assert_eq!(rle_decode(&[2, 3], 7).unwrap(), vec![false, false, true, true, true, false, false]);
        assert!(rle_decode(&[2, 6], 7).is_err());
    }

    #[test]
    fn camera_json_roundtrip() {
        let cam = CameraModel::look_at(
            Point3::new(4.0, -3.0, 2.0),
            Point3::origin(),
            nalgebra::Vector3::z(),
            100.0,
            90.0,
            64,
            48,
        )
        .unwrap();
        let text = serde_json::to_string(&CameraJson::from(&cam)).unwrap();
        let back = CameraModel::try_from(serde_json::from_str::<CameraJson>(&text).unwrap()).unwrap();
        assert_eq!(back, cam);
    }

    proptest! {
        #[test]
        fn rle_roundtrip(bits in prop::collection::vec(any::<bool>(), 0..300)) {
            let runs = rle_encode(&bits);
            prop_assert_eq!(rle_decode(&runs, bits.len()).unwrap(), bits);
        }

        #[test]
        fn matrix_roundtrip_is_bit_exact(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let m = Matrix::from_fn(rows, cols, |r, c| f64::from_bits(seed.rotate_left((r * 7 + c) as u32) & 0x7fef_ffff_ffff_ffff));
            let mut buf = Vec::new();
            write_matrix(&mut buf, &m).unwrap();
            let back = read_matrix(&mut Cursor::new(buf)).unwrap();
            prop_assert!(m.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
