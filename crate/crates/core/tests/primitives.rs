use dds_core::cluster::{fit_primitives, pseudo_labels, ClusterCfg};
use dds_core::superpoint::SuperpointPartition;
use dds_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 1e-12 && nb > 1e-12).then(|| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[test]
fn every_superpoint_sits_with_its_most_similar_center() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..60 {
        let (n, c) = (rng.random_range(2..80), rng.random_range(2..20));
        let blobs = rng.random_range(1..6);
        let centers: Vec<Vec<f64>> = (0..blobs).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let h = Matrix::from_fn(n, c, |r, col| centers[r % blobs][col] + 0.2 * rng.random_range(-1.0..1.0));
        let cfg = ClusterCfg {
            k_primitive: rng.random_range(1..=n.min(12)),
            k_coarse: rng.random_range(1..40),
            embed_dims: rng.random_range(1..20),
            seed: trial,
            ..ClusterCfg::default()
        };
        let model = fit_primitives(&h, &cfg).unwrap();
        let (hr, cr) = (rows(&h), rows(&model.centers));
        assert!(model.num_primitives() >= 1 && model.num_primitives() <= cfg.k_primitive);
        for (i, row) in hr.iter().enumerate() {
            let own = model.primitive_of_superpoint[i];
            let Some(own_cos) = cosine(row, &cr[own]) else {
                continue;
            };
            for center in &cr {
                if let Some(other) = cosine(row, center) {
                    assert!(own_cos >= other - 1e-12, "trial {trial} superpoint {i}");
                }
            }
        }
    }
}

#[test]
fn pseudo_labels_follow_superpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let h = Matrix::from_fn(10, 4, |_, _| rng.random_range(-1.0..1.0));
    let model = fit_primitives(&h, &ClusterCfg { k_primitive: 3, ..ClusterCfg::default() }).unwrap();
    let assignment: Vec<usize> = (0..200).map(|_| rng.random_range(0..10)).collect();
    let part = SuperpointPartition::from_assignment(assignment.clone(), 10).unwrap();
    let labels = pseudo_labels(&model, &part).unwrap();
    for (i, &s) in assignment.iter().enumerate() {
        assert_eq!(labels[i], model.primitive_of_superpoint[s]);
    }
}
