//! Runtime benchmark of one recognition step: frame decode, graph build,
//! frame encoding and window readout.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::egnn::EgnnModel;
use crate::error::{Error, Result};
use crate::skin::presets::ur5_like_joint_ranges;
use crate::skin::{JointState, Skin};
use crate::stream::{read_frame_message, write_frame_message, FramePreparer, StreamParams, StreamingRecognizer};

pub const MIN_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    /// Fraction of taxels above the activation threshold in every frame.
    pub active_fraction: f64,
    /// Contact blobs per frame.
    pub blobs: usize,
    /// Distinct frames generated, then replayed cyclically.
    pub distinct_frames: usize,
    pub seed: u64,
}

impl Default for LoadProfile {
    fn default() -> Self {
        LoadProfile {
            active_fraction: 0.05,
            blobs: 3,
            distinct_frames: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

impl StageTiming {
    pub fn from_samples(ms: &[f64]) -> Self {
        assert!(!ms.is_empty());
        let mut s = ms.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| s[((p * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        StageTiming {
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: q(0.5),
            p99_ms: q(0.99),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub graph_build: StageTiming,
    pub forward: StageTiming,
    pub total: StageTiming,
    pub iterations: usize,
    pub active_fraction: f64,
    pub mean_nodes: f64,
    pub machine: String,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,mean_ms,p50_ms,p99_ms\n");
        for (name, t) in [
            ("graph_build", &self.graph_build),
            ("forward", &self.forward),
            ("total", &self.total),
        ] {
            let _ = writeln!(out, "{name},{:.6},{:.6},{:.6}", t.mean_ms, t.p50_ms, t.p99_ms);
        }
        out
    }
}

pub fn machine_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{} {} / {cpu} / {threads} threads",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Pressure frame with `round(fraction * N)` active taxels grown as
/// breadth-first blobs over the taxel adjacency.
pub fn blob_frame(skin: &Skin, fraction: f64, blobs: usize, rng: &mut impl Rng) -> Vec<f32> {
    let n = skin.taxel_count();
    let target = ((fraction * n as f64).round() as usize).min(n);
    let mut p = vec![0.0f32; n];
    let mut active = 0;
    let blobs = blobs.max(1);
    let mut blob = 0;
    while active < target {
        let quota = (target - active).div_ceil(blobs.saturating_sub(blob).max(1));
        let seed = loop {
            let s = rng.random_range(0..n);
            if p[s] == 0.0 {
                break s;
            }
        };
        let mut queue = VecDeque::from([seed]);
        let mut grown = 0;
        while let Some(t) = queue.pop_front() {
            if p[t] != 0.0 {
                continue;
            }
            p[t] = rng.random_range(0.2f32..1.0);
            grown += 1;
            if grown == quota {
                break;
            }
            let mut next: Vec<usize> = skin.neighbors(t).iter().map(|&(j, _)| j).collect();
            next.shuffle(rng);
            queue.extend(next.into_iter().filter(|&j| p[j] == 0.0));
        }
        active += grown;
        blob += 1;
    }
    p
}

fn random_pose(rng: &mut impl Rng, n_joints: usize) -> JointState {
    let ranges = ur5_like_joint_ranges();
    JointState(
        (0..n_joints)
            .map(|i| {
                let (lo, hi) = ranges.get(i).copied().unwrap_or((-1.0, 1.0));
                rng.random_range(lo..hi) as f32 as f64
            })
            .collect(),
    )
}

/// Encoded frame messages for a load profile.
pub fn load_stream(skin: &Skin, profile: &LoadProfile) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    (0..profile.distinct_frames.max(1))
        .map(|_| {
            let p = blob_frame(skin, profile.active_fraction, profile.blobs, &mut rng);
            let q = random_pose(&mut rng, skin.joint_count());
            let mut buf = Vec::new();
            write_frame_message(&mut buf, &p, &q).expect("write to vec");
            buf
        })
        .collect()
}

/// Times `iterations` recognition steps after a warm-up that fills the
/// window.
pub fn bench(
    model: &EgnnModel,
    skin: &Skin,
    profile: &LoadProfile,
    params: &StreamParams,
    iterations: usize,
) -> Result<BenchReport> {
    if iterations < MIN_ITERATIONS {
        return Err(Error::InvalidParameter(format!(
            "bench needs at least {MIN_ITERATIONS} iterations, got {iterations}"
        )));
    }
    if !(0.0..=1.0).contains(&profile.active_fraction) {
        return Err(Error::InvalidParameter(format!(
            "active fraction {} outside [0, 1]",
            profile.active_fraction
        )));
    }
    let stream = load_stream(skin, profile);
    let mut prep = FramePreparer::new(skin.clone(), params.graph, model.config.length_unit);
    let mut rec = StreamingRecognizer::new(model.clone(), *params);
    let (n, j) = (skin.taxel_count(), skin.joint_count());
    let mut step = |k: usize| -> Result<(f64, f64, usize)> {
        let t0 = Instant::now();
        let mut r = stream[k % stream.len()].as_slice();
        let (p, q) = read_frame_message(&mut r, n, j)?.expect("encoded frame");
        let frame = prep.prepare(&p, &q)?;
        let nodes = frame.input.n;
        let t1 = Instant::now();
        std::hint::black_box(rec.push_prepared(frame));
        let t2 = Instant::now();
        Ok((
            (t1 - t0).as_secs_f64() * 1e3,
            (t2 - t1).as_secs_f64() * 1e3,
            nodes,
        ))
    };
    for k in 0..params.window {
        step(k)?;
    }
    let (mut gb, mut fw, mut tot) = (Vec::new(), Vec::new(), Vec::new());
    let mut nodes = 0usize;
    for k in 0..iterations {
        let (a, b, m) = step(params.window + k)?;
        gb.push(a);
        fw.push(b);
        tot.push(a + b);
        nodes += m;
    }
    Ok(BenchReport {
        graph_build: StageTiming::from_samples(&gb),
        forward: StageTiming::from_samples(&fw),
        total: StageTiming::from_samples(&tot),
        iterations,
        active_fraction: profile.active_fraction,
        mean_nodes: nodes as f64 / iterations as f64,
        machine: machine_descriptor(),
    })
}
