//! Mask merging against an exhaustive pairwise oracle on structured scenes:
//! disjoint objects, each seen by several masks covering most of it.

use std::collections::BTreeSet;

use dds_core::teacher::{merge_lifted, LiftedMask, MaskMergeConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type GroupSet = BTreeSet<(String, Vec<usize>)>;

struct Case {
    n: usize,
    masks: Vec<LiftedMask>,
}

fn structured_case(rng: &mut ChaCha8Rng) -> Case {
    let objects = rng.random_range(1..=4);
    let labels = ["road", "car", "tree"];
    let mut next = 0;
    let mut spans = Vec::new();
    for _ in 0..objects {
        let size = rng.random_range(5..40);
        spans.push((next..next + size, labels[rng.random_range(0..labels.len())]));
        next += size;
    }
    let n = next + rng.random_range(0..10);
    let count = rng.random_range(1..=10);
    let masks = (0..count)
        .map(|k| {
            let (span, label) = &spans[rng.random_range(0..spans.len())];
            let keep = rng.random_range(0.8..=1.0);
            let mut points: Vec<usize> = span.clone().filter(|_| rng.random::<f64>() < keep).collect();
            if points.is_empty() {
                points.push(span.start);
            }
            LiftedMask {
                view: k / 3,
                mask: k % 3,
                label: label.to_string(),
                points,
            }
        })
        .collect();
    Case { n, masks }
}

fn iou(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Connected components of the "same label and IoU >= threshold" relation
/// over the raw masks, unioned and filtered by size.
fn oracle(case: &Case, cfg: &MaskMergeConfig) -> GroupSet {
    let sets: Vec<BTreeSet<usize>> = case.masks.iter().map(|m| m.points.iter().copied().collect()).collect();
    let k = sets.len();
    let mut comp: Vec<usize> = (0..k).collect();
    loop {
        let mut changed = false;
        for a in 0..k {
            for b in 0..k {
                let linked = case.masks[a].label == case.masks[b].label && iou(&sets[a], &sets[b]) >= cfg.merge_iou;
                if linked && comp[a] != comp[b] {
                    let (lo, hi) = (comp[a].min(comp[b]), comp[a].max(comp[b]));
                    comp.iter_mut().filter(|c| **c == hi).for_each(|c| *c = lo);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let roots: BTreeSet<usize> = comp.iter().copied().collect();
    roots
        .into_iter()
        .map(|r| {
            let members: Vec<usize> = (0..k).filter(|&m| comp[m] == r).collect();
            let points: BTreeSet<usize> = members.iter().flat_map(|&m| sets[m].iter().copied()).collect();
            (case.masks[members[0]].label.clone(), points.into_iter().collect::<Vec<_>>())
        })
        .filter(|(_, p)| p.len() >= cfg.min_mask_points.max(1))
        .collect()
}

fn merged(case: &Case, masks: Vec<LiftedMask>, cfg: &MaskMergeConfig) -> GroupSet {
    let out = merge_lifted(case.n, masks, cfg);
    for (g, group) in out.groups.iter().enumerate() {
        for &i in &group.points {
            assert_eq!(out.point_mask[i], Some(g));
        }
    }
    let covered = out.point_mask.iter().filter(|m| m.is_some()).count();
    assert_eq!(covered, out.groups.iter().map(|g| g.points.len()).sum::<usize>());
    out.groups.into_iter().map(|g| (g.label, g.points)).collect()
}

#[test]
fn merge_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..300 {
        let case = structured_case(&mut rng);
        let cfg = MaskMergeConfig {
            merge_iou: 0.5,
            min_mask_points: rng.random_range(1..12),
        };
        assert_eq!(merged(&case, case.masks.clone(), &cfg), oracle(&case, &cfg));
    }
}

#[test]
fn merge_is_independent_of_mask_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = MaskMergeConfig::default();
    for _ in 0..100 {
        let case = structured_case(&mut rng);
        let reference = merged(&case, case.masks.clone(), &cfg);
        let mut shuffled = case.masks.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(merged(&case, shuffled, &cfg), reference);
    }
}

#[test]
fn two_views_at_iou_point_eight_merge_to_union() {
    let a: Vec<usize> = (0..10).collect();
    let b: Vec<usize> = (1..10).chain(10..11).collect();
    let case = Case {
        n: 12,
        masks: vec![
            LiftedMask {
                view: 0,
                mask: 0,
                label: "car".into(),
                points: a,
            },
            LiftedMask {
                view: 1,
                mask: 0,
                label: "car".into(),
                points: b,
            },
        ],
    };
    let cfg = MaskMergeConfig {
        merge_iou: 0.5,
        min_mask_points: 1,
    };
    let out = merged(&case, case.masks.clone(), &cfg);
    assert_eq!(out, oracle(&case, &cfg));
    assert_eq!(out.into_iter().next().unwrap().1, (0..11).collect::<Vec<_>>());
}
