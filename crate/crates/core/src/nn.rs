//! Small dense-network toolkit over flat `f64` parameter vectors: linear
//! layers on row-major batches, SiLU, softmax cross-entropy, Adam and a
//! deterministic mini-batch training loop shared by every classifier.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `C = A·B + beta·C` on strided row-major views.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the debug assertions above spell out the extents touched;
    // callers pass slices sized to their matrices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Linear layer stored inside a flat parameter vector: an `out x inp`
/// row-major weight block at `w`, optionally followed by a bias at `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub inp: usize,
    pub out: usize,
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn size(&self) -> usize {
        self.inp * self.out + if self.b.is_some() { self.out } else { 0 }
    }

    pub fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.inp * self.out]
    }

    pub fn bias<'a>(&self, p: &'a [f64]) -> Option<&'a [f64]> {
        self.b.map(|b| &p[b..b + self.out])
    }

    /// `y = x·Wᵀ + b` for `rows` rows.
    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize, y: &mut [f64]) {
        self.forward_cols(p, 0, self.inp, x, rows, y, 0.0);
    }

    /// `y = x·W[:, c0..c0+k]ᵀ (+ beta·y)`, adding the bias only when the
    /// block starts at column 0 and `beta` is 0.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_cols(
        &self,
        p: &[f64],
        c0: usize,
        k: usize,
        x: &[f64],
        rows: usize,
        y: &mut [f64],
        beta: f64,
    ) {
        let w = &p[self.w + c0..self.w + self.inp * self.out];
        let out = self.out;
        gemm(rows, k, out, x, k, 1, w, 1, self.inp, beta, y, out, 1);
        if c0 == 0 && beta == 0.0 {
            if let Some(b) = self.bias(p) {
                for row in y[..rows * out].chunks_exact_mut(out) {
                    for (v, bi) in row.iter_mut().zip(b) {
                        *v += bi;
                    }
                }
            }
        }
    }

    /// Accumulates `dW += dyᵀ·x` and `db += Σ dy`.
    pub fn backward_params(&self, dy: &[f64], x: &[f64], rows: usize, g: &mut [f64]) {
        self.backward_params_cols(0, self.inp, dy, x, rows, g, true);
    }

    /// Weight gradient for the column block `c0..c0+k`; bias only when
    /// `with_bias`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_params_cols(
        &self,
        c0: usize,
        k: usize,
        dy: &[f64],
        x: &[f64],
        rows: usize,
        g: &mut [f64],
        with_bias: bool,
    ) {
        let out = self.out;
        let dw = &mut g[self.w + c0..self.w + self.inp * self.out];
        gemm(out, rows, k, dy, 1, out, x, k, 1, 1.0, dw, self.inp, 1);
        if with_bias {
            if let Some(b) = self.b {
                let db = &mut g[b..b + out];
                for row in dy[..rows * out].chunks_exact(out) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
        }
    }

    /// `dx (+)= dy·W[:, c0..c0+k]`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_input_cols(
        &self,
        p: &[f64],
        c0: usize,
        k: usize,
        dy: &[f64],
        rows: usize,
        dx: &mut [f64],
        beta: f64,
    ) {
        let w = &p[self.w + c0..self.w + self.inp * self.out];
        gemm(rows, self.out, k, dy, self.out, 1, w, self.inp, 1, beta, dx, k, 1);
    }

    pub fn backward_input(&self, p: &[f64], dy: &[f64], rows: usize, dx: &mut [f64]) {
        self.backward_input_cols(p, 0, self.inp, dy, rows, dx, 0.0);
    }

    /// Symmetric uniform fan-in-scaled initialization.
    pub fn init(&self, p: &mut [f64], rng: &mut impl Rng) {
        let bound = 1.0 / (self.inp as f64).sqrt();
        for v in &mut p[self.w..self.w + self.inp * self.out] {
            *v = rng.random_range(-bound..bound);
        }
        if let Some(b) = self.b {
            for v in &mut p[b..b + self.out] {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn zero(&self, p: &mut [f64]) {
        p[self.w..self.w + self.inp * self.out].fill(0.0);
        if let Some(b) = self.b {
            p[b..b + self.out].fill(0.0);
        }
    }
}

/// Hands out consecutive parameter ranges.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    pub len: usize,
}

impl ParamAllocator {
    pub fn linear(&mut self, inp: usize, out: usize, bias: bool) -> Linear {
        let w = self.len;
        self.len += inp * out;
        let b = bias.then(|| {
            let b = self.len;
            self.len += out;
            b
        });
        Linear { inp, out, w, b }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `logits` against `label` and its gradient w.r.t. the
/// logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(logits);
    let loss = -p[label].ln();
    p[label] -= 1.0;
    (loss, p)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A classifier over a flat parameter vector.
pub trait Trainable: Sync {
    type Input: Sync;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn logits(&self, x: &Self::Input) -> Vec<f64>;
    /// Forward and backward for one sample: adds d(loss)/dθ for
    /// `loss = CE(logits, label)` to `grad` and returns `(loss, logits)`.
    fn accumulate_gradient(&self, x: &Self::Input, label: usize, grad: &mut [f64]) -> (f64, Vec<f64>);

    /// Samples handed to one [`Trainable::accumulate_chunk`] call.
    fn grad_chunk(&self) -> usize {
        GRAD_CHUNK
    }

    /// Summed loss and gradient over `chunk`, plus per-sample logits.
    /// Models with a batched forward pass override this.
    fn accumulate_chunk(&self, chunk: &[(&Self::Input, usize)], grad: &mut [f64]) -> (f64, Vec<Vec<f64>>) {
        let mut loss = 0.0;
        let mut logits = Vec::with_capacity(chunk.len());
        for &(x, y) in chunk {
            let (l, z) = self.accumulate_gradient(x, y, grad);
            loss += l;
            logits.push(z);
        }
        (loss, logits)
    }

    fn logits_chunk(&self, xs: &[&Self::Input]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| self.logits(x)).collect()
    }

    fn predict(&self, x: &Self::Input) -> (usize, f64) {
        let p = softmax(&self.logits(x));
        let c = argmax(&p);
        (c, p[c])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub l2: f64,
    /// Fraction of the training samples held out for validation.
    pub val_fraction: f64,
    /// Anneal the step size along a half cosine, one value per epoch.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            l2: 1e-5,
            val_fraction: 0.15,
            cosine_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size >= 1
            && self.l2 >= 0.0
            && (0.0..1.0).contains(&self.val_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochMetrics>,
    /// Set when training halted on a non-finite or exploding loss.
    pub halted: Option<String>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_acc,val_acc,loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_acc, e.val_acc, e.loss));
        }
        s
    }
}

pub const DIVERGENCE_LOSS: f64 = 1e3;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Samples per gradient chunk. Chunks are summed in index order, so results
/// do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 4;

/// Mean cross-entropy plus `l2/2 · |θ|²` over `batch`, and its gradient.
/// Also returns the per-sample logits.
pub fn loss_and_gradients<M: Trainable>(
    model: &M,
    batch: &[(&M::Input, usize)],
    l2: f64,
) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let n = model.params().len();
    let partial: Vec<(f64, Vec<f64>, Vec<Vec<f64>>)> = batch
        .par_chunks(model.grad_chunk())
        .map(|chunk| {
            let mut g = vec![0.0; n];
            let (loss, logits) = model.accumulate_chunk(chunk, &mut g);
            (loss, g, logits)
        })
        .collect();
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    let mut logits = Vec::with_capacity(batch.len());
    for (l, g, z) in partial {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        logits.extend(z);
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    let params = model.params();
    let mut penalty = 0.0;
    for (g, &p) in grad.iter_mut().zip(params) {
        *g = *g * scale + l2 * p;
        penalty += p * p;
    }
    (loss * scale + 0.5 * l2 * penalty, grad, logits)
}

pub fn accuracy<M: Trainable>(model: &M, data: &[(&M::Input, usize)]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct: usize = data
        .par_chunks(model.grad_chunk())
        .map(|chunk| {
            let xs: Vec<_> = chunk.iter().map(|&(x, _)| x).collect();
            let logits = model.logits_chunk(&xs);
            logits.iter().zip(chunk).filter(|(z, &(_, y))| argmax(z) == y).count()
        })
        .sum();
    correct as f64 / data.len() as f64
}

/// Deterministic train/validation split of `0..n` by shuffled index.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5157_u64));
    let n_val = (n as f64 * val_fraction).round() as usize;
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

/// Mini-batch Adam on `train`, reporting validation accuracy on `val` each
/// epoch. Stops early (keeping the last good parameters) when the loss
/// becomes non-finite or exceeds [`DIVERGENCE_LOSS`].
pub fn fit<M: Trainable>(
    model: &mut M,
    train: &[(&M::Input, usize)],
    val: &[(&M::Input, usize)],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<History> {
    cfg.validate()?;
    let mut classes: Vec<usize> = train.iter().map(|&(_, y)| y).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InsufficientClasses(classes.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7124));
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        if cfg.cosine_decay {
            let phase = std::f64::consts::PI * epoch as f64 / cfg.epochs as f64;
            adam.lr = cfg.learning_rate * 0.5 * (1.0 + phase.cos());
        }
        order.shuffle(&mut rng);
        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(&M::Input, usize)> = batch_idx.iter().map(|&i| train[i]).collect();
            let (loss, grad, logits) = loss_and_gradients(model, &batch, cfg.l2);
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                let msg = format!("epoch {epoch}: loss {loss} after {seen} samples");
                log::error!("training halted, {msg}");
                history.halted = Some(msg);
                return Ok(history);
            }
            for (z, &(_, y)) in logits.iter().zip(&batch) {
                correct += usize::from(argmax(z) == y);
            }
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            adam.step(model.params_mut(), &grad);
        }
        let metrics = EpochMetrics {
            epoch,
            train_acc: correct as f64 / seen.max(1) as f64,
            val_acc: accuracy(model, val),
            loss: loss_sum / seen.max(1) as f64,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train {:.3} val {:.3}",
            metrics.loss,
            metrics.train_acc,
            metrics.val_acc
        );
        on_epoch(&metrics);
        history.epochs.push(metrics);
    }
    Ok(history)
}
