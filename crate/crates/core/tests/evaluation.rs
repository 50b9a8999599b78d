use pigan_core::datasets::{sample_gaussian_mixture, Bounds, MixtureComponent, MixtureSpec};
use pigan_core::evaluation::{
    accuracy_retrieval_curve, cosine_similarity, empirical_kl_pair, encode_features, lerp, mode_coverage,
    nearest_training_neighbor, one_shot_nn, retrieve_all, retrieve_topk, slerp, train_linear_classifier,
    FeatureVector, LinearHyper, RetrievalResult,
};
use pigan_core::nn::{ConvPreset, Network, Tensor};
use pigan_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn fv(id: usize, v: &[f64]) -> FeatureVector {
    FeatureVector::new(id, v.to_vec()).unwrap()
}

fn desk_discriminator() -> (ConvPreset, Network) {
    let preset = ConvPreset::desk(100);
    let mut net = Network::new(preset.discriminator().unwrap(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    // Non-trivial running statistics.
    for layer in &mut net.params_mut().layers {
        if let [mean, var] = layer.running.as_mut_slice() {
            for (i, (m, v)) in mean.data_mut().iter_mut().zip(var.data_mut()).enumerate() {
                *m = 0.01 * i as f64;
                *v = 0.5 + 0.1 * i as f64;
            }
        }
    }
    (preset, net)
}

#[test]
fn features_are_penultimate_and_batch_independent() {
    let (preset, d) = desk_discriminator();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<f64> = (0..5 * 256).map(|_| rng.random::<f64>()).collect();
    let batch = Tensor::new(vec![5, 1, 16, 16], data).unwrap();
    let all = encode_features(&d, &batch).unwrap();
    assert_eq!(all.len(), 5);
    assert_eq!(all[0].values.len(), preset.feature_dim());
    assert_eq!(preset.feature_dim(), 1024);
    let alone = encode_features(&d, &batch.select(&[3])).unwrap();
    assert_eq!(alone[0].values, all[3].values);
    let twins = encode_features(&d, &batch.select(&[2, 2])).unwrap();
    assert_eq!(twins[0].values, twins[1].values);
    assert!(matches!(encode_features(&d, &Tensor::zeros(&[1, 1, 8, 8])), Err(Error::Dimension(_))));
}

#[test]
fn duplicate_of_the_query_ranks_first() {
    let corpus = vec![fv(0, &[1.0, 0.2]), fv(1, &[0.0, 1.0]), fv(2, &[1.0, 0.2]), fv(3, &[-1.0, 0.0])];
    let r = retrieve_topk(&corpus[0], &corpus, 3).unwrap();
    assert_eq!(r.ranked[0], (2, 1.0));
    assert!(r.ranked.iter().all(|(id, _)| *id != 0));
    let whole = retrieve_topk(&corpus[0], &corpus, 3).unwrap();
    let mut ids: Vec<_> = whole.ranked.iter().map(|r| r.0).collect();
    ids.sort();
    assert_eq!(ids, vec![1, 2, 3]);
    assert!(matches!(retrieve_topk(&corpus[0], &corpus, 4), Err(Error::Argument(_))));
}

#[test]
fn hand_built_ranking() {
    // Angles from the query direction (1, 0): 10, 80, 45, 45 (tie, ids 3 < 4), 170 degrees.
    let at = |id, deg: f64| fv(id, &[deg.to_radians().cos(), deg.to_radians().sin()]);
    let query = at(0, 0.0);
    let corpus = vec![at(1, 10.0), at(2, 80.0), at(4, -45.0), at(3, 45.0), at(5, 170.0)];
    let r = retrieve_topk(&query, &corpus, 5).unwrap();
    let ids: Vec<_> = r.ranked.iter().map(|r| r.0).collect();
    assert_eq!(ids, vec![1, 3, 4, 2, 5]);
    assert!(r.ranked.windows(2).all(|w| w[0].1 >= w[1].1));
}

#[test]
fn curve_examples() {
    let same = vec![0u32; 6];
    let feats: Vec<_> = (0..6).map(|i| fv(i, &[1.0, i as f64])).collect();
    let results = retrieve_all(&feats, 5).unwrap();
    assert_eq!(accuracy_retrieval_curve(&results, &same, 5).unwrap(), vec![1.0; 5]);

    // Two queries with hand-ranked results.
    let labels = [0u32, 0, 1, 1];
    let results = vec![
        RetrievalResult { query: 0, ranked: vec![(1, 0.9), (2, 0.5), (3, 0.1)] },
        RetrievalResult { query: 2, ranked: vec![(0, 0.9), (3, 0.8), (1, 0.1)] },
    ];
    let curve = accuracy_retrieval_curve(&results, &labels, 3).unwrap();
    let want = [(1.0 + 0.0) / 2.0, (0.5 + 0.5) / 2.0, (1.0 / 3.0 + 1.0 / 3.0) / 2.0];
    for (c, w) in curve.iter().zip(want) {
        assert!((c - w).abs() < 1e-15);
    }
    assert!(matches!(accuracy_retrieval_curve(&results, &labels[..2], 3), Err(Error::Data(_))));
}

#[test]
fn random_labels_sit_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let classes = 5;
    let n = 400;
    let feats: Vec<_> = (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            fv(i, &v)
        })
        .collect();
    let labels: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
    let curve = accuracy_retrieval_curve(&retrieve_all(&feats, 10).unwrap(), &labels, 10).unwrap();
    let chance = 1.0 / classes as f64;
    let sigma = (chance * (1.0 - chance) / n as f64).sqrt();
    for c in curve {
        assert!((c - chance).abs() < 3.0 * sigma + 0.01, "{c}");
    }
}

fn clusters(seed: u64, per: usize, centers: &[[f64; 2]], spread: f64) -> (Vec<(u32, FeatureVector)>, Vec<FeatureVector>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = || -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * spread
    };
    let support = centers.iter().enumerate().map(|(c, m)| (c as u32, fv(1000 + c, &[m[0] + noise(), m[1] + noise()]))).collect();
    let mut queries = Vec::new();
    let mut truth = Vec::new();
    for (c, m) in centers.iter().enumerate() {
        for _ in 0..per {
            queries.push(fv(queries.len(), &[m[0] + noise(), m[1] + noise()]));
            truth.push(c as u32);
        }
    }
    (support, queries, truth)
}

#[test]
fn one_shot_examples() {
    let support = vec![(0, fv(0, &[1.0, 0.0])), (1, fv(1, &[0.0, 1.0])), (2, fv(2, &[-1.0, -1.0]))];
    let queries: Vec<_> = support.iter().map(|s| s.1.clone()).collect();
    let res = one_shot_nn(&support, &queries, Some(&[0, 1, 2])).unwrap();
    assert_eq!(res.accuracy, Some(1.0));
    let single = one_shot_nn(&support[..1], &queries, Some(&[0, 0, 0])).unwrap();
    assert_eq!(single.accuracy, Some(1.0));
    let dup = vec![(0, fv(0, &[1.0, 0.0])), (0, fv(1, &[0.0, 1.0]))];
    assert!(matches!(one_shot_nn(&dup, &queries, None), Err(Error::Argument(_))));
}

#[test]
fn well_separated_clusters_match_brute_force() {
    let centers = [[5.0, 0.5], [-2.0, 5.0], [-3.0, -4.0]];
    let (support, queries, truth) = clusters(3, 20, &centers, 0.3);
    let res = one_shot_nn(&support, &queries, Some(&truth)).unwrap();
    assert_eq!(res.accuracy, Some(1.0));
    for (q, p) in queries.iter().zip(&res.predicted) {
        let best = support
            .iter()
            .max_by(|a, b| cosine_similarity(q, &a.1).unwrap().total_cmp(&cosine_similarity(q, &b.1).unwrap()))
            .unwrap();
        assert_eq!(best.0, *p);
    }
}

#[test]
fn linear_classifier_examples() {
    let support = vec![(0, fv(0, &[1.0, 0.0])), (1, fv(1, &[-1.0, 0.0]))];
    let model = train_linear_classifier(&support, LinearHyper::default()).unwrap();
    let queries = vec![fv(0, &[0.3, 2.0]), fv(1, &[-0.2, -3.0]), fv(2, &[4.0, -1.0])];
    assert_eq!(model.classify(&queries, Some(&[0, 1, 0])).unwrap().accuracy, Some(1.0));
    let same: Vec<_> = support.iter().map(|s| s.1.clone()).collect();
    assert_eq!(model.classify(&same, Some(&[0, 1])).unwrap().accuracy, Some(1.0));
    assert!(train_linear_classifier(&support[..1], LinearHyper::default()).is_err());
    let bad = vec![(0, FeatureVector { id: 0, values: vec![f64::NAN] }), (1, fv(1, &[1.0]))];
    assert!(matches!(train_linear_classifier(&bad, LinearHyper::default()), Err(Error::Numeric { .. })));
}

#[test]
fn linear_classifier_tracks_nearest_neighbour_on_clusters() {
    let centers = [[4.0, 1.0], [1.0, 4.0], [-4.0, 1.0], [0.5, -4.0]];
    let (support, queries, truth) = clusters(21, 50, &centers, 0.8);
    let nn = one_shot_nn(&support, &queries, Some(&truth)).unwrap().accuracy.unwrap();
    let model = train_linear_classifier(&support, LinearHyper::default()).unwrap();
    let lin = model.classify(&queries, Some(&truth)).unwrap().accuracy.unwrap();
    assert!((lin - nn).abs() <= 0.05, "linear {lin} vs nn {nn}");
}

#[test]
fn slerp_matches_lerp_for_nearly_parallel_vectors() {
    let a = [1.0, 2.0, 3.0];
    let b = [1.0 + 1e-5, 2.0, 3.0 - 1e-5];
    for (s, l) in slerp(&a, &b, 9).unwrap().iter().zip(lerp(&a, &b, 9).unwrap()) {
        for (x, y) in s.iter().zip(&l) {
            assert!((x - y).abs() < 1e-6);
        }
    }
    let pts = slerp(&a, &b, 4).unwrap();
    assert_eq!(pts[0], a.to_vec());
    assert_eq!(pts[3], b.to_vec());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slerp_preserves_common_norm(
        u in prop::collection::vec(-1.0f64..1.0, 6),
        v in prop::collection::vec(-1.0f64..1.0, 6),
        radius in 0.1f64..20.0,
    ) {
        let scale = |x: &[f64]| {
            let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            x.iter().map(|a| a * radius / n).collect::<Vec<_>>()
        };
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let (a, b) = (scale(&u), scale(&v));
        let cos = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (radius * radius);
        prop_assume!(cos > -0.999);
        for z in slerp(&a, &b, 9).unwrap() {
            let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - radius).abs() < 1e-9 * radius.max(1.0), "{} vs {}", n, radius);
        }
    }

    #[test]
    fn retrieval_is_deterministic(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Coarse values force ties.
        let feats: Vec<_> = (0..12).map(|i| fv(i, &[rng.random_range(1..3) as f64, rng.random_range(0..2) as f64])).collect();
        let a = retrieve_all(&feats, 11).unwrap();
        prop_assert_eq!(&a, &retrieve_all(&feats, 11).unwrap());
        for r in &a {
            for w in r.ranked.windows(2) {
                prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
            }
        }
    }

    #[test]
    fn empirical_kl_swaps_exactly(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Tensor::randn(&[50, 2], 1.0, &mut rng);
        let q = Tensor::randn(&[70, 2], 2.0, &mut rng);
        let b = Bounds::square(3.0);
        let (pq, qp) = empirical_kl_pair(&p, &q, &b, 8).unwrap();
        let (qp2, pq2) = empirical_kl_pair(&q, &p, &b, 8).unwrap();
        prop_assert_eq!(pq.to_bits(), pq2.to_bits());
        prop_assert_eq!(qp.to_bits(), qp2.to_bits());
    }
}

#[test]
fn mixture_samples_cover_every_mode() {
    let spec = MixtureSpec::ring8();
    let x = sample_gaussian_mixture(&spec, 20_000, &mut ChaCha8Rng::seed_from_u64(6));
    let cov = mode_coverage(&x, &spec, 3.0, 0.01).unwrap();
    assert_eq!(cov.covered, 8);
    assert!(cov.high_quality_fraction > 0.98, "{cov:?}");

    let c = spec.components()[2].mean;
    let at_mean = Tensor::new(vec![10, 2], [c[0], c[1]].repeat(10)).unwrap();
    let cov = mode_coverage(&at_mean, &spec, 3.0, 0.01).unwrap();
    assert_eq!((cov.covered, cov.high_quality_fraction), (1, 1.0));

    let far = Tensor::full(&[10, 2], 100.0);
    let cov = mode_coverage(&far, &spec, 3.0, 0.01).unwrap();
    assert_eq!((cov.covered, cov.high_quality_fraction), (0, 0.0));
}

#[test]
fn empirical_kl_examples() {
    let spec = MixtureSpec::ring8();
    let b = Bounds::square(6.5);
    let x = sample_gaussian_mixture(&spec, 10_000, &mut ChaCha8Rng::seed_from_u64(1));
    let (pq, qp) = empirical_kl_pair(&x, &x, &b, 32).unwrap();
    assert_eq!((pq, qp), (0.0, 0.0));
    let y = sample_gaussian_mixture(&spec, 10_000, &mut ChaCha8Rng::seed_from_u64(2));
    let (pq, qp) = empirical_kl_pair(&x, &y, &b, 32).unwrap();
    assert!(pq < 0.1 && qp < 0.1, "{pq} {qp}");

    // P in one cell, Q spread uniformly over the grid.
    let g = 16;
    let unit = Bounds::square(1.0);
    let point = Tensor::full(&[5000, 2], 0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let uniform: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let uniform = Tensor::new(vec![5000, 2], uniform).unwrap();
    let (pq, qp) = empirical_kl_pair(&point, &uniform, &unit, g).unwrap();
    assert!(pq > qp, "{pq} {qp}");
    assert!(pq < ((g * g) as f64).ln());
    assert!(pq > ((g * g) as f64).ln() - 1.0);

    let c = |x: f64| MixtureComponent { mean: [x, 0.0], sigma: 0.01, weight: 1.0 };
    let left = sample_gaussian_mixture(&MixtureSpec::new(vec![c(-0.5)]).unwrap(), 1000, &mut rng);
    let right = sample_gaussian_mixture(&MixtureSpec::new(vec![c(0.5)]).unwrap(), 1000, &mut rng);
    let (pq, qp) = empirical_kl_pair(&left, &right, &unit, g).unwrap();
    assert!(pq.is_finite() && qp.is_finite() && pq > 3.0 && qp > 3.0);
}

#[test]
fn nearest_neighbour_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let gen = Tensor::randn(&[10, 10], 1.0, &mut rng);
    let train = Tensor::randn(&[10, 10], 1.0, &mut rng);
    let got = nearest_training_neighbor(&gen, &train).unwrap();
    for i in 0..10 {
        let mut best = (f64::INFINITY, 0);
        for j in 0..10 {
            let d: f64 = (0..10).map(|k| (gen.sample(i)[k] - train.sample(j)[k]).powi(2)).sum::<f64>().sqrt();
            if d < best.0 {
                best = (d, j);
            }
        }
        assert_eq!(got[i].index, best.1);
        assert!((got[i].distance - best.0).abs() < 1e-12);
    }
    let one = nearest_training_neighbor(&gen, &train.select(&[4])).unwrap();
    assert!(one.iter().all(|n| n.index == 0));
    let dup = nearest_training_neighbor(&train.select(&[7]), &train).unwrap();
    assert_eq!((dup[0].index, dup[0].distance), (7, 0.0));
}
