//! Over-segmentation into superpoints and feature pooling.
//!
//! Superpoints are grown from voxel seeds: every occupied voxel of edge
//! `voxel_size` seeds regions that spread through neighbors closer than
//! `growth_radius`, without leaving the seed voxel. A voxel holding two
//! spatially disconnected clusters therefore yields two superpoints, and an
//! isolated point becomes a singleton.

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::scene::PointCloud;
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegCfg {
    pub voxel_size: f64,
    pub growth_radius: f64,
}

impl Default for SegCfg {
    fn default() -> Self {
        Self {
            voxel_size: 0.5,
            growth_radius: 0.3,
        }
    }
}

impl SegCfg {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::InvalidConfig(format!("voxel_size must be positive, got {}", self.voxel_size)));
        }
        if !(self.growth_radius >= 0.0 && self.growth_radius.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "growth_radius must be non-negative, got {}",
                self.growth_radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpointPartition {
    assignment: Vec<usize>,
    sizes: Vec<usize>,
}

impl SuperpointPartition {
    /// Validates that every id in `0..count` is used.
    pub fn from_assignment(assignment: Vec<usize>, count: usize) -> Result<Self> {
        let mut sizes = vec![0usize; count];
        for (i, &s) in assignment.iter().enumerate() {
            if s >= count {
                return Err(Error::InvalidInput(format!("point {i} assigned to superpoint {s} >= {count}")));
            }
            sizes[s] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidInput(format!("superpoint {empty} is empty")));
        }
        Ok(Self { assignment, sizes })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_points(&self) -> usize {
        self.assignment.len()
    }

    /// Member point indices of each superpoint, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &s) in self.assignment.iter().enumerate() {
            out[s].push(i);
        }
        out
    }
}

type Key = (i64, i64, i64);

fn cell_of(p: &Point3<f64>, size: f64) -> Key {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

fn lex_cmp(a: &Point3<f64>, b: &Point3<f64>) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

pub fn oversegment(cloud: &PointCloud, cfg: &SegCfg) -> Result<SuperpointPartition> {
    cfg.validate()?;
    let pts = cloud.positions();
    let mut voxels: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    for (i, p) in pts.iter().enumerate() {
        voxels.entry(cell_of(p, cfg.voxel_size)).or_default().push(i);
    }

    let radius = cfg.growth_radius;
    let r2 = radius * radius;
    let hash_size = if radius > 0.0 { radius } else { cfg.voxel_size };
    let mut hash: HashMap<Key, Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        hash.entry(cell_of(p, hash_size)).or_default().push(i);
    }
    let voxel_of: Vec<Key> = pts.iter().map(|p| cell_of(p, cfg.voxel_size)).collect();

    let mut assignment = vec![usize::MAX; pts.len()];
    let mut taken = vec![false; pts.len()];
    let mut next_id = 0;
    let mut queue = VecDeque::new();
    for (key, members) in &voxels {
        let mut regions: Vec<Vec<usize>> = Vec::new();
        for &seed in members {
            if taken[seed] {
                continue;
            }
            let mut region = vec![seed];
            taken[seed] = true;
            queue.push_back(seed);
            while let Some(i) = queue.pop_front() {
                let (cx, cy, cz) = cell_of(&pts[i], hash_size);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            let Some(cands) = hash.get(&(cx + dx, cy + dy, cz + dz)) else {
                                continue;
                            };
                            for &j in cands {
                                if voxel_of[j] == *key
                                    && !taken[j]
                                    && (pts[j] - pts[i]).norm_squared() <= r2
                                {
                                    taken[j] = true;
                                    region.push(j);
                                    queue.push_back(j);
                                }
                            }
                        }
                    }
                }
            }
            regions.push(region);
        }
        // order regions inside a voxel by their lexicographically smallest point
        let mut keyed: Vec<(Point3<f64>, Vec<usize>)> = regions
            .into_iter()
            .map(|r| {
                let lo = r.iter().map(|&i| pts[i]).min_by(lex_cmp).expect("regions are non-empty");
                (lo, r)
            })
            .collect();
        keyed.sort_by(|a, b| lex_cmp(&a.0, &b.0));
        for (_, region) in keyed {
            for i in region {
                assignment[i] = next_id;
            }
            next_id += 1;
        }
    }
    SuperpointPartition::from_assignment(assignment, next_id)
}

/// Mean point feature of each superpoint.
pub fn pool_features(partition: &SuperpointPartition, point_features: &Matrix) -> Result<Matrix> {
    if point_features.nrows() != partition.num_points() {
        return Err(Error::LengthMismatch {
            what: "point features",
            expected: partition.num_points(),
            found: point_features.nrows(),
        });
    }
    let c = point_features.ncols();
    let mut sums = Matrix::zeros(partition.count(), c);
    for (i, &s) in partition.assignment().iter().enumerate() {
        for ch in 0..c {
            sums[(s, ch)] += point_features[(i, ch)];
        }
    }
    for (s, &size) in partition.sizes().iter().enumerate() {
        sums.row_mut(s).unscale_mut(size as f64);
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn cloud(pts: Vec<Point3<f64>>) -> PointCloud {
        PointCloud::new(pts, None).unwrap()
    }

    fn as_sets(p: &SuperpointPartition) -> BTreeSet<Vec<usize>> {
        p.members().into_iter().collect()
    }

    #[test]
    fn separated_clusters_never_share_superpoints() {
        let mut pts = Vec::new();
        for k in 0..20 {
            pts.push(Point3::new(0.1 + 0.01 * k as f64, 0.1, 0.1));
            pts.push(Point3::new(0.1 + 0.01 * k as f64, 10.1, 0.1));
        }
        let p = oversegment(&cloud(pts), &SegCfg::default()).unwrap();
        assert!(p.count() >= 2);
        for m in p.members() {
            let first = m[0] % 2;
            assert!(m.iter().all(|i| i % 2 == first));
        }
    }

    #[test]
    fn disconnected_points_in_one_voxel_split() {
        let pts = vec![Point3::new(0.01, 0.01, 0.01), Point3::new(0.45, 0.45, 0.45), Point3::new(0.02, 0.01, 0.01)];
        let p = oversegment(&cloud(pts), &SegCfg::default()).unwrap();
        assert_eq!(p.count(), 2);
        assert_eq!(p.assignment()[0], p.assignment()[2]);
    }

    #[test]
    fn single_point() {
        let p = oversegment(&cloud(vec![Point3::new(1.0, 2.0, 3.0)]), &SegCfg::default()).unwrap();
        assert_eq!(p.count(), 1);
        assert_eq!(p.sizes(), &[1]);
    }

    #[test]
    fn planar_grid_matches_voxel_buckets() {
        let spacing = 0.25;
        let mut pts = Vec::new();
        for a in 0..10 {
            for b in 0..10 {
                pts.push(Point3::new(0.125 + a as f64 * spacing, 0.125 + b as f64 * spacing, 0.1));
            }
        }
        let cfg = SegCfg {
            voxel_size: 0.5,
            growth_radius: 0.3,
        };
        let p = oversegment(&cloud(pts.clone()), &cfg).unwrap();
        // brute-force oracle: bucket every point by its 2x2 cell block
        let mut buckets: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for a in 0..10 {
            for b in 0..10 {
                buckets.entry((a / 2, b / 2)).or_default().push(a * 10 + b);
            }
        }
        let expected: BTreeSet<Vec<usize>> = buckets.into_values().collect();
        assert_eq!(p.count(), 25);
        assert_eq!(as_sets(&p), expected);
    }

    #[test]
    fn pooling_means() {
        let part = SuperpointPartition::from_assignment(vec![0, 0, 0], 1).unwrap();
        let f = Matrix::from_row_slice(3, 2, &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
        assert_eq!(pool_features(&part, &f).unwrap(), Matrix::from_row_slice(1, 2, &[1.5, -2.0]));

        let part = SuperpointPartition::from_assignment(vec![1, 0, 1], 2).unwrap();
        let f = Matrix::from_row_slice(3, 2, &[1.0, 4.0, 9.0, 9.0, 3.0, -2.0]);
        let h = pool_features(&part, &f).unwrap();
        assert_eq!(h.row(1).iter().copied().collect::<Vec<_>>(), vec![2.0, 1.0]);
    }

    #[test]
    fn pooling_matches_group_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ns = 37;
        let mut assignment: Vec<usize> = (0..500).map(|i| if i < ns { i } else { rng.random_range(0..ns) }).collect();
        assignment.reverse();
        let part = SuperpointPartition::from_assignment(assignment.clone(), ns).unwrap();
        let f = Matrix::from_fn(500, 6, |_, _| rng.random_range(-1.0..1.0));
        let h = pool_features(&part, &f).unwrap();
        for s in 0..ns {
            let members: Vec<usize> = (0..500).filter(|&i| assignment[i] == s).collect();
            for c in 0..6 {
                let mean = members.iter().map(|&i| f[(i, c)]).sum::<f64>() / members.len() as f64;
                assert!((h[(s, c)] - mean).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_partitions() {
        assert!(SuperpointPartition::from_assignment(vec![0, 2], 3).is_err());
        assert!(SuperpointPartition::from_assignment(vec![0, 3], 3).is_err());
    }

    fn arb_cloud() -> impl Strategy<Value = Vec<Point3<f64>>> {
        prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -1.0..1.0f64), 1..150)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn halving_voxels_never_coarsens(pts in arb_cloud(), voxel in 0.2..2.0f64, radius in 0.0..0.8f64) {
            let c = cloud(pts);
            let coarse = oversegment(&c, &SegCfg { voxel_size: voxel, growth_radius: radius }).unwrap();
            let fine = oversegment(&c, &SegCfg { voxel_size: voxel / 2.0, growth_radius: radius }).unwrap();
            prop_assert!(fine.count() >= coarse.count());
        }

        #[test]
        fn partition_is_input_order_independent(pts in arb_cloud(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let a = oversegment(&cloud(pts.clone()), &SegCfg::default()).unwrap();
            let b = oversegment(&cloud(perm.iter().map(|&i| pts[i]).collect()), &SegCfg::default()).unwrap();
            prop_assert_eq!(a.count(), b.count());
            for (new, &old) in perm.iter().enumerate() {
                prop_assert_eq!(b.assignment()[new], a.assignment()[old]);
            }
        }

        #[test]
        fn pooling_commutes_with_permutation(n in 1usize..80, ns in 1usize..10, seed in 0u64..1000) {
            let ns = ns.min(n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let assignment: Vec<usize> = (0..n).map(|i| if i < ns { i } else { rng.random_range(0..ns) }).collect();
            let f = Matrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let a = pool_features(&SuperpointPartition::from_assignment(assignment.clone(), ns).unwrap(), &f).unwrap();
            let pa: Vec<usize> = perm.iter().map(|&i| assignment[i]).collect();
            let pf = Matrix::from_fn(n, 4, |r, c| f[(perm[r], c)]);
            let b = pool_features(&SuperpointPartition::from_assignment(pa, ns).unwrap(), &pf).unwrap();
            prop_assert!((a - b).abs().max() <= 1e-12);
        }
    }
}
