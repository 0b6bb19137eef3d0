mod common;

use std::collections::HashSet;

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tactile_core::bench::blob_frame;
use tactile_core::graph::{build_graph, dynamic_knn_edges, knn_key, GraphParams};
use tactile_core::skin::presets;
use tactile_core::synth::{PoseSampler, PressureFrame};

fn knn_oracle(pos: &[Vector3<f64>], ids: &[usize], k: usize) -> Vec<(usize, usize)> {
    let mut set = HashSet::new();
    for a in 0..pos.len() {
        let mut others: Vec<_> = (0..pos.len())
            .filter(|&b| b != a)
            .map(|b| (knn_key((pos[b] - pos[a]).norm(), ids[b]), b))
            .collect();
        others.sort();
        for &(_, b) in others.iter().take(k) {
            set.insert((a.min(b), a.max(b)));
        }
    }
    let mut v: Vec<_> = set.into_iter().collect();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn knn_matches_brute_force_on_lattice_clouds(
        pts in prop::collection::vec((0i32..6, 0i32..6, 0i32..3), 1..80),
        k in 1usize..12,
    ) {
        // lattice points produce many exact distance ties
        let pos: Vec<_> = pts
            .iter()
            .map(|&(x, y, z)| Vector3::new(x as f64 * 0.01, y as f64 * 0.01, z as f64 * 0.004))
            .collect();
        let ids: Vec<usize> = (0..pos.len()).map(|i| (i * 7919) % 10007).collect();
        prop_assert_eq!(dynamic_knn_edges(&pos, &ids, k), knn_oracle(&pos, &ids, k));
    }

    #[test]
    fn knn_matches_brute_force_on_sparse_clusters(
        a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..6),
        b in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..40),
        k in 1usize..10,
    ) {
        // a tiny cluster far from a larger one
        let mut pos: Vec<_> = a.iter().map(|&(x, y, z)| Vector3::new(x, y, z) * 0.005).collect();
        pos.extend(b.iter().map(|&(x, y, z)| Vector3::new(x * 0.05 + 0.8, y * 0.05, z * 0.05)));
        let ids: Vec<usize> = (0..pos.len()).collect();
        prop_assert_eq!(dynamic_knn_edges(&pos, &ids, k), knn_oracle(&pos, &ids, k));
    }
}

#[test]
fn graph_is_invariant_under_moving_the_robot_base() {
    let skin = common::ur5_skin();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sampler = PoseSampler::new(presets::ur5_like_joint_ranges());
    for _ in 0..5 {
        let g = common::random_isometry(&mut rng);
        let moved = skin.with_base_transform(&g);
        let frame = PressureFrame {
            t: 0.0,
            pressure: blob_frame(&skin, 0.03, 3, &mut rng),
            q: sampler.sample(&mut rng),
        };
        let a = build_graph(&skin, &frame, &GraphParams::default()).unwrap();
        let b = build_graph(&moved, &frame, &GraphParams::default()).unwrap();
        assert_eq!(a.node_ids, b.node_ids);
        assert_eq!(a.edges.len(), b.edges.len());
        for (ea, eb) in a.edges.iter().zip(&b.edges) {
            assert_eq!((ea.i, ea.j, ea.is_static), (eb.i, eb.j, eb.is_static));
            assert!((ea.distance - eb.distance).abs() < 1e-12);
            assert!((ea.normal_dot - eb.normal_dot).abs() < 1e-12);
        }
        let expect = a.transformed(&g);
        for (p, q) in expect.node_positions.iter().zip(&b.node_positions) {
            assert!((p - q).amax() < 1e-12);
        }
    }
}

#[test]
fn static_edges_are_induced_on_the_node_set() {
    let skin = common::ur5_skin();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let frame = PressureFrame {
        t: 0.0,
        pressure: blob_frame(&skin, 0.05, 4, &mut rng),
        q: PoseSampler::new(presets::ur5_like_joint_ranges()).sample(&mut rng),
    };
    let g = build_graph(&skin, &frame, &GraphParams::default()).unwrap();
    let nodes: HashSet<usize> = g.node_ids.iter().copied().collect();
    let want: HashSet<(usize, usize)> = skin
        .static_edges()
        .iter()
        .filter(|e| nodes.contains(&e.a) && nodes.contains(&e.b))
        .map(|e| (e.a, e.b))
        .collect();
    let got: HashSet<(usize, usize)> = g
        .edges
        .iter()
        .filter(|e| e.is_static)
        .map(|e| (g.node_ids[e.i], g.node_ids[e.j]))
        .collect();
    assert_eq!(got, want);
    let mut pairs: Vec<_> = g.edges.iter().map(|e| (e.i, e.j)).collect();
    let n = pairs.len();
    pairs.dedup();
    assert_eq!(pairs.len(), n, "duplicate edges");
    assert!(g.edges.iter().all(|e| e.i < e.j));
}

#[test]
fn folding_creates_edges_between_the_layers() {
    let skin = common::fold_skin();
    // one blob per patch, at mirror-image spots across the hinge
    let a = common::fold_pattern(&skin, 0.035, -0.045, 0.006, 0.8);
    let b = common::fold_pattern(&skin, 0.035, 0.045, 0.006, 0.8);
    let pattern: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let crossing = |angle: f64| {
        let frame = PressureFrame {
            t: 0.0,
            pressure: pattern.clone(),
            q: presets::fold_pose(angle),
        };
        let g = build_graph(&skin, &frame, &GraphParams { theta_act: 0.05, k: 4 }).unwrap();
        let max_knn = g
            .edges
            .iter()
            .filter(|e| !e.is_static)
            .map(|e| e.distance)
            .fold(0.0, f64::max);
        let n = g
            .edges
            .iter()
            .filter(|e| (g.node_ids[e.i] < 64) != (g.node_ids[e.j] < 64))
            .count();
        (n, max_knn)
    };
    let (shut, _) = crossing(presets::FOLD_CLOSED);
    assert!(shut > 0);
    let (open, max_knn) = crossing(0.0);
    assert!(max_knn < 0.02, "{max_knn}");
    assert_eq!(open, 0);
}

#[test]
fn dump_lists_nodes_then_edges() {
    let skin = common::fold_skin();
    let frame = PressureFrame {
        t: 0.0,
        pressure: common::fold_pattern(&skin, 0.035, 0.0, 0.006, 0.8),
        q: presets::fold_pose(0.0),
    };
    let g = build_graph(&skin, &frame, &GraphParams::default()).unwrap();
    let mut buf = Vec::new();
    g.dump(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let edge_lines: Vec<&str> = text
        .lines()
        .skip_while(|l| !l.starts_with("# edges"))
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .collect();
    assert_eq!(edge_lines.len(), g.edges.len());
    for (line, e) in edge_lines.iter().zip(&g.edges) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[0].parse::<usize>().unwrap(), g.node_ids[e.i]);
        assert_eq!(cols[3], if e.is_static { "1" } else { "0" });
    }
}
