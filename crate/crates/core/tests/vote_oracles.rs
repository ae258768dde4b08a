use dds_core::teacher::PointLabels;
use dds_core::vote::{assign_semantics, collect_votes, evaluate, max_weight_matching, Prediction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_labels(rng: &mut ChaCha8Rng, n: usize, q: usize) -> PointLabels {
    PointLabels {
        vocabulary: (0..q).map(|i| format!("l{i}")).collect(),
        labels: (0..n)
            .map(|_| {
                let mut l: Vec<usize> = (0..rng.random_range(0..4)).map(|_| rng.random_range(0..q)).collect();
                l.sort_unstable();
                l
            })
            .collect(),
    }
}

#[test]
fn vote_table_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let (n, k, q) = (rng.random_range(1..80), 5, 4);
        let clusters: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let labels = random_labels(&mut rng, n, q);
        let t = collect_votes(&clusters, k, &labels, 0.5).unwrap();
        for c in 0..k {
            for l in 0..q {
                let mut count = 0u64;
                for i in 0..n {
                    if clusters[i] == c {
                        count += labels.labels[i].iter().filter(|&&x| x == l).count() as u64;
                    }
                }
                assert_eq!(t.counts[c][l], count);
            }
        }
    }
}

#[test]
fn semantics_match_row_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (n, k, q) = (rng.random_range(1..60), rng.random_range(1..7), rng.random_range(1..5));
        let clusters: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let labels = random_labels(&mut rng, n, q);
        let t = collect_votes(&clusters, k, &labels, 0.4).unwrap();
        let got = assign_semantics(&t);
        for c in 0..k {
            let row = &t.counts[c];
            let total: u64 = row.iter().sum();
            let expected = if total == 0 {
                None
            } else {
                let best = (0..q).fold(0, |b, l| if row[l] > row[b] { l } else { b });
                (row[best] as f64 / (total as f64 + 1e-8) >= 0.4).then_some(best)
            };
            assert_eq!(got[c], expected);
        }
    }
}

/// Best total weight and the number of assignments reaching it, over every
/// injective partial map from rows to columns.
fn brute_force(w: &[Vec<u64>]) -> (u64, usize, Vec<Option<usize>>) {
    fn go(
        w: &[Vec<u64>],
        row: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        acc: u64,
        best: &mut (u64, usize, Vec<Option<usize>>),
    ) {
        if row == w.len() {
            if acc > best.0 {
                *best = (acc, 1, cur.clone());
            } else if acc == best.0 {
                best.1 += 1;
            }
            return;
        }
        cur.push(None);
        go(w, row + 1, used, cur, acc, best);
        cur.pop();
        for c in 0..used.len() {
            if !used[c] && w[row][c] > 0 {
                used[c] = true;
                cur.push(Some(c));
                go(w, row + 1, used, cur, acc + w[row][c], best);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let cols = w.first().map_or(0, Vec::len);
    let mut best = (0, 0, vec![None; w.len()]);
    go(w, 0, &mut vec![false; cols], &mut Vec::new(), 0, &mut best);
    best
}

#[test]
fn hungarian_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let (r, c) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let w: Vec<Vec<u64>> = (0..r).map(|_| (0..c).map(|_| rng.random_range(0..20)).collect()).collect();
        let m = max_weight_matching(&w);
        let mut seen = vec![false; c];
        let mut total = 0;
        for (row, col) in m.iter().enumerate() {
            if let Some(col) = *col {
                assert!(!seen[col]);
                seen[col] = true;
                total += w[row][col];
            }
        }
        assert_eq!(total, brute_force(&w).0);
    }
}

#[test]
fn matched_evaluation_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut unique = 0;
    for _ in 0..200 {
        let n = rng.random_range(5..120);
        let k = rng.random_range(1..=6);
        let classes = rng.random_range(1..=4u16);
        let gt: Vec<u16> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let present: Vec<u16> = (0..classes).filter(|c| gt.contains(c)).collect();
        let kmax = pred.iter().max().unwrap() + 1;
        let w: Vec<Vec<u64>> = (0..kmax)
            .map(|p| {
                present
                    .iter()
                    .map(|&g| (0..n).filter(|&i| pred[i] == p && gt[i] == g).count() as u64)
                    .collect()
            })
            .collect();
        let (best, ties, assign) = brute_force(&w);
        let report = evaluate(Prediction::Matched(&pred), &gt).unwrap();
        assert_eq!(report.oacc, best as f64 / n as f64);
        if ties == 1 {
            unique += 1;
            let mapped: Vec<Option<u16>> = pred.iter().map(|&p| assign[p].map(|j| present[j])).collect();
            let mut miou = 0.0;
            for &g in &present {
                let tp = (0..n).filter(|&i| gt[i] == g && mapped[i] == Some(g)).count() as f64;
                let fp = (0..n).filter(|&i| gt[i] != g && mapped[i] == Some(g)).count() as f64;
                let fne = (0..n).filter(|&i| gt[i] == g && mapped[i] != Some(g)).count() as f64;
                miou += tp / (tp + fp + fne);
            }
            miou /= present.len() as f64;
            assert!((report.miou - miou).abs() < 1e-12);
        }
    }
    assert!(unique > 50);
}
