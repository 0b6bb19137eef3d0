//! Flattened-pressure baselines: k-nearest-neighbour vote and a
//! two-hidden-layer perceptron. Neither sees the robot pose.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::dataset::{sample_frames, strided_indices, Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::nn::{self, silu, silu_grad, Linear, ParamAllocator, Trainable};
use crate::synth::{GestureClass, PressureFrame};

pub const DEFAULT_K_NN: usize = 5;
pub const DEFAULT_HIDDEN: [usize; 2] = [256, 64];

/// Pressures of every `stride`-th frame (counting back from the last),
/// concatenated in time order.
pub fn flatten(frames: &[PressureFrame], stride: usize) -> Vec<f32> {
    let n = frames.first().map_or(0, |f| f.pressure.len());
    let idx = strided_indices(frames.len(), stride);
    let mut out = Vec::with_capacity(idx.len() * n);
    for i in idx {
        out.extend_from_slice(&frames[i].pressure);
    }
    out
}

/// Flattened strided windows of every sample, with class ids.
pub fn load_flat(ds: &Dataset, samples: &[SampleRecord], stride: usize) -> Result<Vec<(Vec<f32>, usize)>> {
    samples
        .par_iter()
        .map(|s| {
            let rec = ds.recording(s.recording_id)?;
            Ok((flatten(&sample_frames(&rec, s, stride), 1), s.class.id()))
        })
        .collect()
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Majority vote among the `k` nearest training vectors (Euclidean; equal
/// distances resolved by training order). Vote ties go to the smallest
/// class id.
pub fn knn_classify(train: &[(Vec<f32>, usize)], query: &[f32], k: usize) -> Result<usize> {
    if train.is_empty() || k == 0 {
        return Err(Error::InvalidParameter(
            "knn needs a non-empty training set and k >= 1".into(),
        ));
    }
    if let Some((v, _)) = train.iter().find(|(v, _)| v.len() != query.len()) {
        return Err(Error::Dimension(format!(
            "query has {} values, training vector has {}",
            query.len(),
            v.len()
        )));
    }
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, (v, _))| (squared_distance(v, query), i))
        .collect();
    let k = k.min(d.len());
    d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes = [0usize; GestureClass::COUNT];
    for &(_, i) in &d[..k] {
        votes[train[i].1] += 1;
    }
    let best = *votes.iter().max().unwrap();
    Ok(votes.iter().position(|&v| v == best).unwrap())
}

/// Perceptron `in → h0 → h1 → 4` with SiLU activations.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpBaseline {
    pub input_dim: usize,
    layers: [Linear; 3],
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: [usize; 2],
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl MlpBaseline {
    pub fn new(input_dim: usize, cfg: &MlpConfig, seed: u64) -> Self {
        let mut a = ParamAllocator::default();
        let layers = [
            a.linear(input_dim, cfg.hidden[0], true),
            a.linear(cfg.hidden[0], cfg.hidden[1], true),
            a.linear(cfg.hidden[1], GestureClass::COUNT, true),
        ];
        let mut params = vec![0.0; a.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layers {
            l.init(&mut params, &mut rng);
        }
        MlpBaseline {
            input_dim,
            layers,
            params,
        }
    }

    /// Pre-activations of both hidden layers and the logits for a row batch.
    fn forward(&self, xs: &[&Vec<f32>]) -> MlpPass {
        let rows = xs.len();
        let mut x = Vec::with_capacity(rows * self.input_dim);
        for v in xs {
            assert_eq!(v.len(), self.input_dim, "input dimension");
            x.extend(v.iter().map(|&f| f as f64));
        }
        let [l0, l1, l2] = self.layers;
        let mut pre0 = vec![0.0; rows * l0.out];
        l0.forward(&self.params, &x, rows, &mut pre0);
        let a0: Vec<f64> = pre0.iter().map(|&v| silu(v)).collect();
        let mut pre1 = vec![0.0; rows * l1.out];
        l1.forward(&self.params, &a0, rows, &mut pre1);
        let a1: Vec<f64> = pre1.iter().map(|&v| silu(v)).collect();
        let mut logits = vec![0.0; rows * l2.out];
        l2.forward(&self.params, &a1, rows, &mut logits);
        MlpPass {
            x,
            pre0,
            a0,
            pre1,
            a1,
            logits,
        }
    }
}

struct MlpPass {
    x: Vec<f64>,
    pre0: Vec<f64>,
    a0: Vec<f64>,
    pre1: Vec<f64>,
    a1: Vec<f64>,
    logits: Vec<f64>,
}

/// Samples per gradient chunk; one weight-matrix pass serves the whole
/// chunk, which dominates cost for wide inputs.
const MLP_CHUNK: usize = 16;

impl Trainable for MlpBaseline {
    type Input = Vec<f32>;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, x: &Vec<f32>) -> Vec<f64> {
        self.forward(&[x]).logits
    }

    fn accumulate_gradient(&self, x: &Vec<f32>, label: usize, g: &mut [f64]) -> (f64, Vec<f64>) {
        let (loss, mut logits) = self.accumulate_chunk(&[(x, label)], g);
        (loss, logits.remove(0))
    }

    fn grad_chunk(&self) -> usize {
        MLP_CHUNK
    }

    fn logits_chunk(&self, xs: &[&Vec<f32>]) -> Vec<Vec<f64>> {
        let out = self.layers[2].out;
        self.forward(xs).logits.chunks(out).map(<[f64]>::to_vec).collect()
    }

    fn accumulate_chunk(&self, chunk: &[(&Vec<f32>, usize)], g: &mut [f64]) -> (f64, Vec<Vec<f64>>) {
        let rows = chunk.len();
        let xs: Vec<_> = chunk.iter().map(|&(x, _)| x).collect();
        let pass = self.forward(&xs);
        let [l0, l1, l2] = self.layers;
        let p = &self.params;
        let mut loss = 0.0;
        let mut dlogits = Vec::with_capacity(rows * l2.out);
        let mut logits = Vec::with_capacity(rows);
        for (z, &(_, y)) in pass.logits.chunks(l2.out).zip(chunk) {
            let (l, d) = nn::cross_entropy(z, y);
            loss += l;
            dlogits.extend(d);
            logits.push(z.to_vec());
        }
        l2.backward_params(&dlogits, &pass.a1, rows, g);
        let mut d1 = vec![0.0; rows * l1.out];
        l2.backward_input(p, &dlogits, rows, &mut d1);
        for (d, &z) in d1.iter_mut().zip(&pass.pre1) {
            *d *= silu_grad(z);
        }
        l1.backward_params(&d1, &pass.a0, rows, g);
        let mut d0 = vec![0.0; rows * l0.out];
        l1.backward_input(p, &d1, rows, &mut d0);
        for (d, &z) in d0.iter_mut().zip(&pass.pre0) {
            *d *= silu_grad(z);
        }
        l0.backward_params(&d0, &pass.x, rows, g);
        (loss, logits)
    }
}

/// Trains the perceptron with the shared optimizer loop.
pub fn mlp_train(
    samples: &[(Vec<f32>, usize)],
    mlp: &MlpConfig,
    cfg: &nn::TrainConfig,
    on_epoch: impl FnMut(&nn::EpochMetrics),
) -> Result<(MlpBaseline, nn::History)> {
    let dim = samples
        .first()
        .map(|(v, _)| v.len())
        .ok_or(Error::InsufficientClasses(0))?;
    if samples.iter().any(|(v, _)| v.len() != dim) {
        return Err(Error::Dimension("flattened samples differ in length".into()));
    }
    let mut model = MlpBaseline::new(dim, mlp, cfg.seed);
    let (tr, va) = nn::split_indices(samples.len(), cfg.val_fraction, cfg.seed);
    let train: Vec<(&Vec<f32>, usize)> = tr.iter().map(|&i| (&samples[i].0, samples[i].1)).collect();
    let val: Vec<(&Vec<f32>, usize)> = va.iter().map(|&i| (&samples[i].0, samples[i].1)).collect();
    let history = nn::fit(&mut model, &train, &val, cfg, on_epoch)?;
    Ok((model, history))
}

pub fn mlp_classify(model: &MlpBaseline, x: &[f32]) -> (usize, f64) {
    model.predict(&x.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skin::JointState;

    fn frame(p: Vec<f32>) -> PressureFrame {
        PressureFrame {
            t: 0.0,
            pressure: p,
            q: JointState::zeros(1),
        }
    }

    #[test]
    fn flatten_takes_strided_frames_in_order() {
        let frames: Vec<_> = (0..6).map(|i| frame(vec![i as f32, -(i as f32)])).collect();
        assert_eq!(flatten(&frames, 6), vec![5.0, -5.0]);
        assert_eq!(flatten(&frames, 2), vec![1.0, -1.0, 3.0, -3.0, 5.0, -5.0]);
        let zeros: Vec<_> = (0..4).map(|_| frame(vec![0.0; 3])).collect();
        assert!(flatten(&zeros, 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn knn_exact_match_and_global_majority() {
        let train = vec![
            (vec![0.0, 0.0], 1),
            (vec![1.0, 0.0], 2),
            (vec![5.0, 5.0], 2),
            (vec![9.0, 9.0], 3),
        ];
        assert_eq!(knn_classify(&train, &[1.0, 0.0], 1).unwrap(), 2);
        assert_eq!(knn_classify(&train, &[0.0, 0.0], 4).unwrap(), 2);
        // two-way tie between classes 1 and 2 goes to 1
        assert_eq!(knn_classify(&train, &[0.4, 0.0], 2).unwrap(), 1);
        assert!(knn_classify(&[], &[0.0], 1).is_err());
    }

    #[test]
    fn chunked_gradient_is_the_sum_of_single_sample_gradients() {
        let m = MlpBaseline::new(5, &MlpConfig { hidden: [6, 3] }, 4);
        let xs: Vec<Vec<f32>> = (0..3)
            .map(|i| (0..5).map(|j| ((i * 5 + j) as f32 * 0.37).sin()).collect())
            .collect();
        let chunk: Vec<_> = xs.iter().zip([0, 3, 1]).collect();
        let mut g = vec![0.0; m.params().len()];
        let (loss, logits) = m.accumulate_chunk(&chunk, &mut g);
        let mut g1 = vec![0.0; g.len()];
        let mut loss1 = 0.0;
        for (i, &(x, y)) in chunk.iter().enumerate() {
            let (l, z) = m.accumulate_gradient(x, y, &mut g1);
            loss1 += l;
            assert_eq!(z, logits[i]);
        }
        assert!((loss - loss1).abs() < 1e-12);
        assert!(g.iter().zip(&g1).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn uniform_logits_cost_ln4() {
        let mut m = MlpBaseline::new(3, &MlpConfig { hidden: [4, 4] }, 1);
        m.params_mut().fill(0.0);
        let mut g = vec![0.0; m.params().len()];
        let (loss, _) = m.accumulate_gradient(&vec![0.2, 0.1, 0.9], 1, &mut g);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }
}
