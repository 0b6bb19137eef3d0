mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactile_core::egnn::{EgnnConfig, EgnnModel, FrameInput, Pooling, WindowInput, NODE_DIM};

fn perturbed_model(pooling: Pooling, seed: u64) -> EgnnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EgnnConfig {
        hidden: 12,
        pooling,
        ..EgnnConfig::default()
    };
    let mut m = EgnnModel::new(cfg, seed, "abc");
    for p in m.params_mut() {
        *p += rng.random_range(-0.2..0.2);
    }
    m
}

fn permute(f: &FrameInput, perm: &[usize]) -> FrameInput {
    // perm[old] = new
    let mut out = f.clone();
    for old in 0..f.n {
        let new = perm[old];
        out.v[new * NODE_DIM..(new + 1) * NODE_DIM]
            .copy_from_slice(&f.v[old * NODE_DIM..(old + 1) * NODE_DIM]);
        out.x[new * 3..new * 3 + 3].copy_from_slice(&f.x[old * 3..old * 3 + 3]);
        out.inv_deg[new] = f.inv_deg[old];
    }
    out.recv = f.recv.iter().map(|&i| perm[i]).collect();
    out.send = f.send.iter().map(|&i| perm[i]).collect();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn logits_ignore_node_order(seed in any::<u64>(), n in 2usize..12, mean in any::<bool>()) {
        let pooling = if mean { Pooling::Mean } else { Pooling::Max };
        let model = perturbed_model(pooling, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let w = common::random_window(&mut rng, n, 2, 4);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffled = WindowInput {
            frames: w.frames.iter().map(|f| permute(f, &perm)).collect(),
            total_frames: w.total_frames,
        };
        let (a, _) = model.model_forward(&w).unwrap();
        let (b, _) = model.model_forward(&shuffled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn isolated_zero_node_leaves_max_pooled_logits_unchanged(seed in any::<u64>(), n in 1usize..10) {
        let model = perturbed_model(Pooling::Max, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let w = common::random_window(&mut rng, n, 2, 3);
        let padded = WindowInput {
            frames: w.frames.iter().map(|f| f.with_isolated_zero_node()).collect(),
            total_frames: w.total_frames,
        };
        let (a, _) = model.model_forward(&w).unwrap();
        let (b, _) = model.model_forward(&padded).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn empty_frames_only_dilute_the_mean() {
    let model = perturbed_model(Pooling::Max, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = common::random_window(&mut rng, 6, 2, 2);
    let longer = WindowInput {
        total_frames: 20,
        ..w.clone()
    };
    let embs: Vec<Vec<f64>> = w.frames.iter().map(|f| model.frame_embedding(f)).collect();
    let (a, _) = model.model_forward(&longer).unwrap();
    assert_eq!(a, model.logits_from_embeddings(&embs, 20));
    assert_ne!(a, model.model_forward(&w).unwrap().0);
    let blank = WindowInput {
        frames: Vec::new(),
        total_frames: 20,
    };
    assert!(model.model_forward(&blank).unwrap().1.iter().all(|p| p.is_finite()));
}

#[test]
fn checkpoint_round_trips_bit_for_bit() {
    let model = perturbed_model(Pooling::Mean, 9);
    let mut buf = Vec::new();
    model.write_to(&mut buf).unwrap();
    assert_eq!(&buf[..4], b"EGN1");
    let back = EgnnModel::read_from(&mut buf.as_slice()).unwrap();
    assert_eq!(back, model);
    let mut again = Vec::new();
    back.write_to(&mut again).unwrap();
    assert_eq!(again, buf);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = perturbed_model(Pooling::Max, 10);
    let mut buf = Vec::new();
    model.write_to(&mut buf).unwrap();
    let mut bad_magic = buf.clone();
    bad_magic[0] = b'X';
    assert!(EgnnModel::read_from(&mut bad_magic.as_slice()).is_err());
    let truncated = &buf[..buf.len() - 8];
    assert!(EgnnModel::read_from(&mut &truncated[..]).is_err());
}

#[test]
fn malformed_frames_are_rejected() {
    let model = perturbed_model(Pooling::Max, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut w = common::random_window(&mut rng, 4, 1, 1);
    w.frames[0].recv[0] = 99;
    assert!(model.model_forward(&w).is_err());
}
