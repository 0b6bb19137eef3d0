#![allow(dead_code)]

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactile_core::egnn::{EgnnConfig, EgnnModel, FrameInput, Pooling, WindowInput, EDGE_DIM, NODE_DIM};
use std::f64::consts::PI;
use tactile_core::baselines;
use tactile_core::dataset::{label_recording, sample_frames};
use tactile_core::egnn::DEFAULT_LENGTH_UNIT;
use tactile_core::graph::{build_window, GraphParams};
use tactile_core::nn::loss_and_gradients;
use tactile_core::segment::SegmentParams;
use tactile_core::skin::{presets, taxel_world_poses, JointState, Skin};
use tactile_core::synth::{
    synthesize_dataset, GestureClass, ParamRanges, PoseSampler, PressureFrame, SynthConfig,
};

pub fn random_isometry(rng: &mut impl Rng) -> Isometry3<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let angle = rng.random_range(-3.1..3.1);
    Isometry3::from_parts(
        Translation3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ),
        UnitQuaternion::from_scaled_axis(axis.normalize() * angle),
    )
}

/// Random graph frame with `n` nodes and roughly `2n` undirected edges.
pub fn random_frame(rng: &mut impl Rng, n: usize) -> FrameInput {
    let mut v = Vec::new();
    let mut x = Vec::new();
    for _ in 0..n {
        v.extend((0..NODE_DIM).map(|_| rng.random_range(0.0..1.0)));
        x.extend((0..3).map(|_| rng.random_range(-1.0..1.0)));
    }
    let mut pairs = Vec::new();
    for i in 1..n {
        pairs.push((rng.random_range(0..i), i));
    }
    for _ in 0..n {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !pairs.contains(&(a.min(b), a.max(b))) {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    let mut recv = Vec::new();
    let mut send = Vec::new();
    let mut attr = Vec::new();
    let mut deg = vec![0usize; n];
    for (a, b) in pairs {
        let e: Vec<f64> = (0..EDGE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (i, j) in [(a, b), (b, a)] {
            recv.push(i);
            send.push(j);
            attr.extend_from_slice(&e);
            deg[i] += 1;
        }
    }
    FrameInput {
        n,
        v,
        x,
        recv,
        send,
        attr,
        inv_deg: deg.iter().map(|&d| 1.0 / d as f64).collect(),
    }
}

pub fn random_window(rng: &mut impl Rng, nodes: usize, frames: usize, total: usize) -> WindowInput {
    WindowInput {
        frames: (0..frames).map(|_| random_frame(rng, nodes)).collect(),
        total_frames: total,
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error between backprop and central differences over 100
/// random parameters of a toy 5-node, 2-frame window.
pub fn gradient_check(pooling: Pooling, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EgnnConfig {
        hidden: 8,
        layers: 3,
        pooling,
        ..EgnnConfig::default()
    };
    let mut model = EgnnModel::new(cfg, seed, "");
    // non-zero coordinate gates so the coordinate path carries gradient
    for p in model.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let window = random_window(&mut rng, 5, 2, 3);
    let label = rng.random_range(0..4);
    let l2 = 1e-3;
    let (_, grad, _) = loss_and_gradients(&model, &[(&window, label)], l2);

    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(0..model.param_count());
        let orig = model.params()[k];
        model.params_mut()[k] = orig + eps;
        let (up, _, _) = loss_and_gradients(&model, &[(&window, label)], l2);
        model.params_mut()[k] = orig - eps;
        let (down, _, _) = loss_and_gradients(&model, &[(&window, label)], l2);
        model.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(grad[k], numeric));
    }
    worst
}

pub fn ur5_skin() -> Skin {
    Skin::new(presets::ur5_like()).unwrap()
}

pub fn fold_skin() -> Skin {
    Skin::new(presets::fold_demo()).unwrap()
}

/// Labeled graph windows and flattened pressure vectors of a synthesized
/// set, plus the sampled joint states.
pub struct SynthSet {
    pub windows: Vec<(WindowInput, usize)>,
    pub flat: Vec<(Vec<f32>, usize)>,
    pub poses: Vec<JointState>,
}

pub fn synth_set(skin: &Skin, counts: [usize; 4], seed: u64, stride: usize) -> SynthSet {
    let sampler = PoseSampler::new(presets::ur5_like_joint_ranges());
    let recs = synthesize_dataset(
        skin,
        &counts,
        &sampler,
        seed,
        &SynthConfig::default(),
        &ParamRanges::default(),
    );
    let mut set = SynthSet {
        windows: Vec::new(),
        flat: Vec::new(),
        poses: Vec::new(),
    };
    for r in recs {
        set.poses.push(r.q.clone());
        let Ok(rec) = r.result else { continue };
        for s in label_recording(&rec, r.index, &SegmentParams::default(), 100) {
            let frames = sample_frames(&rec, &s, stride);
            let graphs = build_window(skin, &frames, &GraphParams::default()).unwrap();
            set.windows.push((
                WindowInput::from_graphs(&graphs, DEFAULT_LENGTH_UNIT),
                s.class.id(),
            ));
            set.flat.push((baselines::flatten(&frames, 1), s.class.id()));
        }
    }
    set
}

/// Contact pressure on the fold skin computed in its flat pose: a Gaussian
/// around `(cx, hinge + dy)`. With `dy = 0` it is mirror-symmetric across the
/// hinge, so folding the skin shut turns it into a pinch of both layers.
pub fn fold_pattern(skin: &Skin, cx: f64, dy: f64, sigma: f64, amplitude: f64) -> Vec<f32> {
    let poses = taxel_world_poses(skin, &presets::fold_pose(0.0)).unwrap();
    let c = Vector3::new(cx, 0.08 + dy, 0.0);
    poses
        .iter()
        .map(|p| {
            let d2 = (p.position - c).norm_squared();
            (amplitude * (-d2 / (2.0 * sigma * sigma)).exp()) as f32
        })
        .collect()
}

/// `frames` frames of `pattern` under a half-sine envelope at hinge `angle`,
/// as a graph window and as the flattened pressure sequence.
pub fn fold_window(skin: &Skin, pattern: &[f32], angle: f64, frames: usize) -> (WindowInput, Vec<f32>) {
    let q = presets::fold_pose(angle);
    let seq: Vec<PressureFrame> = (0..frames)
        .map(|t| {
            let env = (std::f64::consts::PI * (t as f64 + 0.5) / frames as f64).sin() as f32;
            PressureFrame {
                t: t as f64 * 0.02,
                pressure: pattern.iter().map(|&p| p * env).collect(),
                q: q.clone(),
            }
        })
        .collect();
    let graphs = build_window(skin, &seq, &GraphParams::default()).unwrap();
    (
        WindowInput::from_graphs(&graphs, DEFAULT_LENGTH_UNIT),
        baselines::flatten(&seq, 1),
    )
}

/// Pokes on the flat skin and pinching grabs on the folded skin, drawn from
/// one distribution of pressure patterns. Returns graph windows and the
/// matching flattened pressure sequences.
pub fn fold_dataset(
    skin: &Skin,
    n: usize,
    seed: u64,
) -> (Vec<(WindowInput, usize)>, Vec<(Vec<f32>, usize)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut windows = Vec::new();
    let mut flat = Vec::new();
    for i in 0..n {
        let pattern = fold_pattern(
            skin,
            rng.random_range(0.015..0.055),
            rng.random_range(-0.004..0.004),
            rng.random_range(0.008..0.014),
            rng.random_range(0.4..1.0),
        );
        let (class, angle) = if i % 2 == 0 {
            (GestureClass::Poke, rng.random_range(-0.3..0.3))
        } else {
            (GestureClass::Grab, rng.random_range(PI - 0.2..PI))
        };
        let (w, f) = fold_window(skin, &pattern, angle, FOLD_FRAMES);
        windows.push((w, class.id()));
        flat.push((f, class.id()));
    }
    (windows, flat)
}

pub const FOLD_FRAMES: usize = 6;
