use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use osattr::contrastive::{
    mean_intra_class_cosine, project, project_set, supcon_loss_and_grad, train_projection, ProjectionHead,
    ProjectionOptions,
};
use osattr::knn::{build_index, build_index_with, classify, classify_batch, cosine_distance, rejection_score_nn, retrieve};
use osattr::synthetic::GaussianClusters;
use osattr::{FeatureSet, Matrix, Normalization};

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

/// Random orthogonal matrix from Gram-Schmidt on a Gaussian draw.
fn rotation(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let g = gaussian(rng, n, n);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let mut v = g.row(i).to_vec();
        for q in &rows {
            let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= nv);
        rows.push(v);
    }
    Matrix::from_rows(&rows).unwrap()
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..a.nrows())
        .map(|i| (0..b.ncols()).map(|j| (0..a.ncols()).map(|k| a[(i, k)] * b[(k, j)]).sum()).collect())
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

fn set_of(x: &Matrix, labels: &[u32], gens: usize) -> FeatureSet {
    let names = (1..=gens).map(|g| format!("g{g}")).collect();
    FeatureSet::from_rows(x, labels.iter().map(|&l| l as i32).collect(), names, "t", 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn supcon_ignores_batch_order(seed in any::<u64>(), tau in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, out) = (10, 5, 4);
        let x = gaussian(&mut rng, n, d);
        let y: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
        let head = ProjectionHead::new(gaussian(&mut rng, out, d), tau).unwrap();
        let (l0, g0) = supcon_loss_and_grad(&head, &x, &y, tau).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let xp = x.select_rows(&perm);
        let yp: Vec<u32> = perm.iter().map(|&i| y[i]).collect();
        let (l1, g1) = supcon_loss_and_grad(&head, &xp, &yp, tau).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-9);
        for (a, b) in g0.as_slice().iter().zip(g1.as_slice()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn supcon_ignores_rotation_of_embeddings(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, out) = (9, 6, 5);
        let x = gaussian(&mut rng, n, d);
        let y: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        let w = gaussian(&mut rng, out, d);
        let q = rotation(&mut rng, out);
        let l0 = supcon_loss_and_grad(&ProjectionHead::new(w.clone(), 0.2).unwrap(), &x, &y, 0.2).unwrap().0;
        let l1 = supcon_loss_and_grad(&ProjectionHead::new(matmul(&q, &w), 0.2).unwrap(), &x, &y, 0.2).unwrap().0;
        prop_assert!((l0 - l1).abs() < 1e-9);
    }

    #[test]
    fn supcon_gradient_matches_finite_differences(seed in any::<u64>(), tau in 0.1f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, out) = (8, 4, 3);
        let x = gaussian(&mut rng, n, d);
        let y: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
        let mut w = gaussian(&mut rng, out, d);
        let loss = |w: &Matrix| supcon_loss_and_grad(&ProjectionHead::new(w.clone(), tau).unwrap(), &x, &y, tau).unwrap();
        let (_, g) = loss(&w);
        let h = 1e-5;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in 0..out * d {
            let v = w.as_slice()[i];
            w.as_mut_slice()[i] = v + h;
            let up = loss(&w).0;
            w.as_mut_slice()[i] = v - h;
            let down = loss(&w).0;
            w.as_mut_slice()[i] = v;
            let fd = (up - down) / (2.0 * h);
            num += (fd - g.as_slice()[i]).powi(2);
            den = den.max(fd.abs()).max(g.as_slice()[i].abs());
        }
        prop_assert!(num.sqrt() / den.max(1e-12) < 1e-4);
    }

    #[test]
    fn unit_cosine_distance_is_half_squared_euclidean(seed in any::<u64>(), d in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / n).collect::<Vec<f64>>()
        };
        let (a, b) = (unit(&mut rng), unit(&mut rng));
        let e: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 2.0;
        prop_assert!((cosine_distance(&a, &b).unwrap() - e).abs() < 1e-9);
    }

    #[test]
    fn retrieval_matches_euclidean_brute_force(seed in any::<u64>(), n in 1usize..40, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 4;
        let k = k.min(n);
        let x = gaussian(&mut rng, n, d);
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let index = build_index(&set_of(&x, &labels, 2)).unwrap();
        let q: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();

        // oracle: half squared distance between unit vectors, stable sort by row
        let unit = |v: &[f64]| {
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter().map(|a| a / n).collect::<Vec<f64>>()
        };
        let uq = unit(&q);
        let index_rows: Vec<Vec<f64>> = index.vectors().rows_iter().map(|r| r.to_vec()).collect();
        let mut oracle: Vec<(f64, usize)> = index_rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&uq).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 2.0, i))
            .collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got = retrieve(&index, &q, k).unwrap();
        for (nb, (dist, _)) in got.iter().zip(&oracle) {
            prop_assert!((nb.distance - dist).abs() < 1e-9);
        }
        // classify(k=1) agrees with the nearest retrieved neighbour
        let (label, _) = classify(&index, &q, 1).unwrap();
        prop_assert_eq!(label, retrieve(&index, &q, 1).unwrap()[0].label);
        // brute-force majority vote with the documented tie-breaks
        let mut votes = [(0usize, 0.0f64); 3];
        for nb in &got {
            votes[nb.label as usize].0 += 1;
            votes[nb.label as usize].1 += nb.distance;
        }
        let best = (0..3u32)
            .filter(|&l| votes[l as usize].0 > 0)
            .min_by(|&a, &b| {
                let (va, vb) = (votes[a as usize], votes[b as usize]);
                vb.0.cmp(&va.0).then(va.1.total_cmp(&vb.1)).then(a.cmp(&b))
            })
            .unwrap();
        prop_assert_eq!(classify(&index, &q, k).unwrap().0, best);
    }

    #[test]
    fn adding_index_rows_never_lowers_nn_score(seed in any::<u64>(), n in 1usize..20, extra in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 5;
        let x = gaussian(&mut rng, n + extra, d);
        let labels = vec![0u32; n + extra];
        let small = build_index(&set_of(&x.select_rows(&(0..n).collect::<Vec<_>>()), &labels[..n], 0)).unwrap();
        let big = build_index(&set_of(&x, &labels, 0)).unwrap();
        for _ in 0..10 {
            let q: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            prop_assert!(rejection_score_nn(&big, &q).unwrap() >= rejection_score_nn(&small, &q).unwrap());
        }
    }
}

#[test]
fn projected_queries_match_a_preprojected_index() {
    let fixture = GaussianClusters {
        dim: 16,
        generators: vec!["a".into(), "b".into()],
        per_class: 30,
        ..GaussianClusters::genimage(30, 4)
    };
    let train = fixture.sample().unwrap();
    let opts = ProjectionOptions {
        epochs: 3,
        out_dim: 8,
        batch_size: 32,
        ..ProjectionOptions::default()
    };
    let (head, _) = train_projection(&train, &opts).unwrap();
    let projected = project_set(&head, &train).unwrap();
    let index = build_index_with(&projected, true).unwrap();
    let queries = GaussianClusters { seed: 99, ..fixture }.sample().unwrap();
    let via_head = classify_batch(&index, &project(&head, &queries.to_matrix()).unwrap(), 5).unwrap();
    let pre = project_set(&head, &queries).unwrap().to_matrix();
    let via_set = classify_batch(&index, &pre, 5).unwrap();
    for (a, b) in via_head.iter().zip(&via_set) {
        assert_eq!(a.label, b.label);
        assert!((a.score - b.score).abs() < 1e-6);
    }
}

#[test]
fn supcon_training_tightens_classes_and_is_deterministic() {
    let fixture = GaussianClusters {
        dim: 16,
        separation: 2.0,
        generators: vec!["a".into(), "b".into()],
        ..GaussianClusters::genimage(60, 8)
    };
    let train = fixture.sample().unwrap();
    let opts = ProjectionOptions {
        epochs: 20,
        out_dim: 16,
        batch_size: 64,
        learning_rate: 0.05,
        tau: 0.1,
        seed: 3,
    };
    let (head, trace) = train_projection(&train, &opts).unwrap();
    let (again, _) = train_projection(&train, &opts).unwrap();
    let bits = |h: &ProjectionHead| h.matrix.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&head), bits(&again));

    let y = train.labels().to_vec();
    let init = osattr::contrastive::init_head(16, &opts).unwrap();
    let before = mean_intra_class_cosine(&project(&init, &train.to_matrix()).unwrap(), &y);
    let after = mean_intra_class_cosine(&project(&head, &train.to_matrix()).unwrap(), &y);
    assert!(after > before, "intra-class cosine {before} -> {after}");
    assert!(trace.epoch_losses.last().unwrap() < &trace.epoch_losses[0]);
}

#[test]
fn l2_flagged_sets_are_indexable() {
    let x = Matrix::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap();
    let f: Vec<f32> = x.as_slice().iter().map(|&v| v as f32).collect();
    let set = FeatureSet::new(f, 2, vec![0, 1], vec!["g".into()], "t", 0, Normalization::L2).unwrap();
    let idx = build_index(&set).unwrap();
    assert!(rejection_score_nn(&idx, &[3.0, 4.0]).unwrap().abs() < 1e-7);
}
