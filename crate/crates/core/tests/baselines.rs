use proptest::prelude::*;
use tactile_core::baselines::{knn_classify, mlp_classify, mlp_train, MlpConfig};
use tactile_core::nn::TrainConfig;

/// Full sort by (distance, training index), then a vote with ties to the
/// smallest class.
fn knn_oracle(train: &[(Vec<f32>, usize)], q: &[f32], k: usize) -> usize {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, (v, _))| {
            let s: f64 = v.iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            (s, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = [0; 4];
    for &(_, i) in d.iter().take(k) {
        votes[train[i].1] += 1;
    }
    let best = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == best).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn knn_matches_sorting_oracle(
        train in prop::collection::vec((prop::collection::vec(0u8..4, 3), 0usize..4), 1..30),
        q in prop::collection::vec(0u8..4, 3),
        k in 1usize..9,
    ) {
        // small integer coordinates force distance and vote ties
        let train: Vec<(Vec<f32>, usize)> = train
            .into_iter()
            .map(|(v, c)| (v.into_iter().map(f32::from).collect(), c))
            .collect();
        let q: Vec<f32> = q.into_iter().map(f32::from).collect();
        prop_assert_eq!(knn_classify(&train, &q, k).unwrap(), knn_oracle(&train, &q, k));
    }
}

#[test]
fn knn_rejects_mismatched_lengths() {
    let train = vec![(vec![0.0, 1.0], 0)];
    assert!(knn_classify(&train, &[0.0], 1).is_err());
    assert!(knn_classify(&train, &[0.0, 1.0], 0).is_err());
}

#[test]
fn mlp_learns_a_separable_toy_problem_deterministically() {
    let data: Vec<(Vec<f32>, usize)> = (0..80)
        .map(|i| {
            let c = i % 4;
            let mut v = vec![0.0f32; 8];
            v[c * 2] = 1.0;
            v[(i * 7) % 8] += 0.3;
            (v, c)
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 60,
        learning_rate: 1e-2,
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    let mlp = MlpConfig { hidden: [16, 8] };
    let (m1, h1) = mlp_train(&data, &mlp, &cfg, |_| {}).unwrap();
    let (_, h2) = mlp_train(&data, &mlp, &cfg, |_| {}).unwrap();
    assert_eq!(h1.to_csv(), h2.to_csv());
    let correct = data.iter().filter(|(x, y)| mlp_classify(&m1, x).0 == *y).count();
    assert_eq!(correct, data.len());
}
