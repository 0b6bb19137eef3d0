//! E(n)-equivariant graph classifier.
//!
//! Each frame graph runs through `L` shared-weight EGCL layers
//!
//! ```text
//! m_ij  = φ_e(v_i, v_j, |x_i - x_j|², e_ij)
//! x_i'  = x_i + C_i Σ_j (x_i - x_j) φ_x(m_ij),   C_i = 1 / |N(i)|
//! v_i'  = φ_h(v_i, Σ_j m_ij)
//! ```
//!
//! summed over both directions of every graph edge. Node embeddings
//! `relu(v^L)` are pooled per frame (max or mean), frames are aggregated by
//! concatenating the elementwise max and mean over the window, and an MLP
//! readout produces four logits. Only rotation-invariant scalars enter
//! `φ_e`, so the logits are invariant to rigid motions of the positions.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TactileGraph;
use crate::nn::{self, silu, silu_grad, Linear, ParamAllocator, Trainable};
use crate::synth::GestureClass;

/// Node input features: pressure and cell area in cm².
pub const NODE_DIM: usize = 2;
/// Edge attributes: distance / length unit, static flag, `n_i·n_j`,
/// receiver elevation, sender elevation.
pub const EDGE_DIM: usize = 5;
pub const CLASSES: usize = GestureClass::COUNT;
/// Positions and distances are expressed in units of 5 cm.
pub const DEFAULT_LENGTH_UNIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Max,
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            _ => Err(format!("unknown pooling '{s}' (expected max or mean)")),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgnnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub pooling: Pooling,
    pub length_unit: f64,
}

impl Default for EgnnConfig {
    fn default() -> Self {
        EgnnConfig {
            hidden: 32,
            layers: 3,
            pooling: Pooling::Max,
            length_unit: DEFAULT_LENGTH_UNIT,
        }
    }
}

/// One frame graph in model units, with both directions of every edge.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameInput {
    pub n: usize,
    /// `n x NODE_DIM`.
    pub v: Vec<f64>,
    /// `n x 3`.
    pub x: Vec<f64>,
    pub recv: Vec<usize>,
    pub send: Vec<usize>,
    /// `E x EDGE_DIM`, attributes as seen from the receiver.
    pub attr: Vec<f64>,
    /// `1 / |N(i)|`, zero for isolated nodes.
    pub inv_deg: Vec<f64>,
}

impl FrameInput {
    pub fn from_graph(g: &TactileGraph, length_unit: f64) -> Self {
        let n = g.node_count();
        let mut v = Vec::with_capacity(n * NODE_DIM);
        for s in &g.node_scalars {
            v.push(s[0]);
            v.push(s[1] * 1e4);
        }
        let mut x = Vec::with_capacity(n * 3);
        for p in &g.node_positions {
            x.extend_from_slice(&[p.x / length_unit, p.y / length_unit, p.z / length_unit]);
        }
        let e = g.edges.len() * 2;
        let mut recv = Vec::with_capacity(e);
        let mut send = Vec::with_capacity(e);
        let mut attr = Vec::with_capacity(e * EDGE_DIM);
        let mut deg = vec![0usize; n];
        for edge in &g.edges {
            let d = edge.distance / length_unit;
            let st = if edge.is_static { 1.0 } else { 0.0 };
            recv.push(edge.i);
            send.push(edge.j);
            attr.extend_from_slice(&[d, st, edge.normal_dot, edge.elevation_i, edge.elevation_j]);
            recv.push(edge.j);
            send.push(edge.i);
            attr.extend_from_slice(&[d, st, edge.normal_dot, edge.elevation_j, edge.elevation_i]);
            deg[edge.i] += 1;
            deg[edge.j] += 1;
        }
        let inv_deg = deg
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
            .collect();
        FrameInput {
            n,
            v,
            x,
            recv,
            send,
            attr,
            inv_deg,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.recv.len()
    }

    /// Appends a node with all-zero features and no edges.
    pub fn with_isolated_zero_node(&self) -> Self {
        let mut out = self.clone();
        out.n += 1;
        out.v.extend_from_slice(&[0.0; NODE_DIM]);
        out.x.extend_from_slice(&[0.0; 3]);
        out.inv_deg.push(0.0);
        out
    }
}

/// A window reduced to its non-empty frames. Empty frames only count
/// towards `total_frames` since they embed to zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowInput {
    pub frames: Vec<FrameInput>,
    pub total_frames: usize,
}

impl WindowInput {
    pub fn from_graphs(graphs: &[TactileGraph], length_unit: f64) -> Self {
        WindowInput {
            frames: graphs
                .iter()
                .filter(|g| !g.is_empty())
                .map(|g| FrameInput::from_graph(g, length_unit))
                .collect(),
            total_frames: graphs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerParams {
    dv: usize,
    e1: Linear,
    e2: Linear,
    x1: Linear,
    x2: Linear,
    h1: Linear,
    h2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    layers: Vec<LayerParams>,
    r1: Linear,
    r2: Linear,
    len: usize,
}

impl Layout {
    fn new(cfg: &EgnnConfig) -> Self {
        let h = cfg.hidden;
        let mut a = ParamAllocator::default();
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let dv = if l == 0 { NODE_DIM } else { h };
            layers.push(LayerParams {
                dv,
                e1: a.linear(2 * dv + 1 + EDGE_DIM, h, true),
                e2: a.linear(h, h, true),
                x1: a.linear(h, h, true),
                x2: a.linear(h, 1, true),
                // φ_h has no biases so that a zero node with no
                // neighbours stays exactly zero.
                h1: a.linear(dv + h, h, false),
                h2: a.linear(h, h, false),
            });
        }
        let r1 = a.linear(2 * h, h, true);
        let r2 = a.linear(h, CLASSES, true);
        Layout {
            layers,
            r1,
            r2,
            len: a.len,
        }
    }

    fn linears(&self) -> Vec<Linear> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([l.e1, l.e2, l.x1, l.x2, l.h1, l.h2]);
        }
        out.extend([self.r1, self.r2]);
        out
    }
}

#[derive(Debug, Default)]
struct LayerCache {
    v: Vec<f64>,
    x: Vec<f64>,
    a: Vec<f64>,
    pre1: Vec<f64>,
    h1: Vec<f64>,
    pre2: Vec<f64>,
    m: Vec<f64>,
    pre3: Vec<f64>,
    h3: Vec<f64>,
    s: Vec<f64>,
    cat: Vec<f64>,
    pre5: Vec<f64>,
    h5: Vec<f64>,
}

struct FrameCache {
    layers: Vec<LayerCache>,
    v_out: Vec<f64>,
    /// Per hidden dim, the node that won max pooling.
    argmax: Vec<usize>,
}

struct ReadoutCache {
    z: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgnnModel {
    pub config: EgnnConfig,
    layout: Layout,
    params: Vec<f64>,
    /// Hash of the skin configuration the model was trained on.
    pub skin_hash: String,
}

const A_COLS: usize = 1 + EDGE_DIM;

fn silu_into(pre: &[f64]) -> Vec<f64> {
    pre.iter().map(|&v| silu(v)).collect()
}

fn mul_silu_grad(d: &mut [f64], pre: &[f64]) {
    for (g, &p) in d.iter_mut().zip(pre) {
        *g *= silu_grad(p);
    }
}

impl EgnnModel {
    pub fn new(config: EgnnConfig, seed: u64, skin_hash: impl Into<String>) -> Self {
        assert!(config.hidden >= 1 && config.layers >= 1, "empty network");
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for lin in layout.linears() {
            lin.init(&mut params, &mut rng);
        }
        for l in &layout.layers {
            l.x2.zero(&mut params);
        }
        EgnnModel {
            config,
            layout,
            params,
            skin_hash: skin_hash.into(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    fn check_frame(&self, f: &FrameInput) -> Result<()> {
        let e = f.recv.len();
        let ok = f.v.len() == f.n * NODE_DIM
            && f.x.len() == f.n * 3
            && f.send.len() == e
            && f.attr.len() == e * EDGE_DIM
            && f.inv_deg.len() == f.n
            && f.recv.iter().chain(&f.send).all(|&i| i < f.n);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "frame with {} nodes and {e} edges has inconsistent buffers",
                f.n
            )))
        }
    }

    /// One EGCL layer. `v` is `n x dv`, `x` is `n x 3`.
    #[allow(clippy::too_many_arguments)]
    fn layer_forward(
        &self,
        l: usize,
        f: &FrameInput,
        v: &[f64],
        x: &[f64],
        update_x: bool,
        keep: bool,
    ) -> (Vec<f64>, Vec<f64>, Option<LayerCache>) {
        let p = &self.params;
        let lp = &self.layout.layers[l];
        let (n, e, dv, h) = (f.n, f.edge_count(), lp.dv, self.config.hidden);

        let mut a = vec![0.0; e * A_COLS];
        for k in 0..e {
            let (i, j) = (f.recv[k], f.send[k]);
            let d = [x[3 * i] - x[3 * j], x[3 * i + 1] - x[3 * j + 1], x[3 * i + 2] - x[3 * j + 2]];
            a[k * A_COLS] = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            a[k * A_COLS + 1..(k + 1) * A_COLS].copy_from_slice(&f.attr[k * EDGE_DIM..(k + 1) * EDGE_DIM]);
        }
        // First φ_e layer split into receiver, sender and edge blocks so
        // the node terms are computed once per node.
        let mut pn = vec![0.0; n * h];
        let mut qn = vec![0.0; n * h];
        lp.e1.forward_cols(p, 0, dv, v, n, &mut pn, 0.0);
        lp.e1.forward_cols(p, dv, dv, v, n, &mut qn, 0.0);
        let mut pre1 = vec![0.0; e * h];
        lp.e1.forward_cols(p, 2 * dv, A_COLS, &a, e, &mut pre1, 0.0);
        for k in 0..e {
            let (i, j) = (f.recv[k], f.send[k]);
            let row = &mut pre1[k * h..(k + 1) * h];
            for c in 0..h {
                row[c] += pn[i * h + c] + qn[j * h + c];
            }
        }
        let h1 = silu_into(&pre1);
        let mut pre2 = vec![0.0; e * h];
        lp.e2.forward(p, &h1, e, &mut pre2);
        let m = silu_into(&pre2);

        let mut x_out = x.to_vec();
        let (mut pre3, mut h3, mut s) = (Vec::new(), Vec::new(), Vec::new());
        if update_x && e > 0 {
            pre3 = vec![0.0; e * h];
            lp.x1.forward(p, &m, e, &mut pre3);
            h3 = silu_into(&pre3);
            s = vec![0.0; e];
            lp.x2.forward(p, &h3, e, &mut s);
            for k in 0..e {
                let (i, j) = (f.recv[k], f.send[k]);
                let w = f.inv_deg[i] * s[k];
                for c in 0..3 {
                    x_out[3 * i + c] += w * (x[3 * i + c] - x[3 * j + c]);
                }
            }
        }

        let w = dv + h;
        let mut cat = vec![0.0; n * w];
        for i in 0..n {
            cat[i * w..i * w + dv].copy_from_slice(&v[i * dv..(i + 1) * dv]);
        }
        for k in 0..e {
            let i = f.recv[k];
            let dst = &mut cat[i * w + dv..(i + 1) * w];
            for (d, mv) in dst.iter_mut().zip(&m[k * h..(k + 1) * h]) {
                *d += mv;
            }
        }
        let mut pre5 = vec![0.0; n * h];
        lp.h1.forward(p, &cat, n, &mut pre5);
        let h5 = silu_into(&pre5);
        let mut v_out = vec![0.0; n * h];
        lp.h2.forward(p, &h5, n, &mut v_out);

        let cache = keep.then(|| LayerCache {
            v: v.to_vec(),
            x: x.to_vec(),
            a,
            pre1,
            h1,
            pre2,
            m,
            pre3,
            h3,
            s,
            cat,
            pre5,
            h5,
        });
        (v_out, x_out, cache)
    }

    /// Backward through one layer. Returns `(dv_in, dx_in)`.
    fn layer_backward(
        &self,
        l: usize,
        f: &FrameInput,
        c: &LayerCache,
        dv_out: &[f64],
        dx_out: Option<&[f64]>,
        g: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let lp = &self.layout.layers[l];
        let (n, e, dv, h) = (f.n, f.edge_count(), lp.dv, self.config.hidden);
        let w = dv + h;

        // φ_h
        let mut dh5 = vec![0.0; n * h];
        lp.h2.backward_params(dv_out, &c.h5, n, g);
        lp.h2.backward_input(p, dv_out, n, &mut dh5);
        mul_silu_grad(&mut dh5, &c.pre5);
        lp.h1.backward_params(&dh5, &c.cat, n, g);
        let mut dcat = vec![0.0; n * w];
        lp.h1.backward_input(p, &dh5, n, &mut dcat);

        let mut dv_in = vec![0.0; n * dv];
        for i in 0..n {
            dv_in[i * dv..(i + 1) * dv].copy_from_slice(&dcat[i * w..i * w + dv]);
        }
        let mut dm = vec![0.0; e * h];
        for k in 0..e {
            let i = f.recv[k];
            dm[k * h..(k + 1) * h].copy_from_slice(&dcat[i * w + dv..(i + 1) * w]);
        }

        let mut dx_in = match dx_out {
            Some(d) => d.to_vec(),
            None => vec![0.0; n * 3],
        };
        let x = &c.x;
        if let (Some(dxo), false) = (dx_out, c.s.is_empty()) {
            let mut ds = vec![0.0; e];
            for k in 0..e {
                let (i, j) = (f.recv[k], f.send[k]);
                let ci = f.inv_deg[i];
                let mut dot = 0.0;
                for a in 0..3 {
                    let diff = x[3 * i + a] - x[3 * j + a];
                    dot += dxo[3 * i + a] * diff;
                    let t = ci * c.s[k] * dxo[3 * i + a];
                    dx_in[3 * i + a] += t;
                    dx_in[3 * j + a] -= t;
                }
                ds[k] = ci * dot;
            }
            lp.x2.backward_params(&ds, &c.h3, e, g);
            let mut dh3 = vec![0.0; e * h];
            lp.x2.backward_input(p, &ds, e, &mut dh3);
            mul_silu_grad(&mut dh3, &c.pre3);
            lp.x1.backward_params(&dh3, &c.m, e, g);
            lp.x1.backward_input_cols(p, 0, h, &dh3, e, &mut dm, 1.0);
        }

        // φ_e
        mul_silu_grad(&mut dm, &c.pre2);
        lp.e2.backward_params(&dm, &c.h1, e, g);
        let mut dpre1 = vec![0.0; e * h];
        lp.e2.backward_input(p, &dm, e, &mut dpre1);
        mul_silu_grad(&mut dpre1, &c.pre1);

        lp.e1.backward_params_cols(2 * dv, A_COLS, &dpre1, &c.a, e, g, true);
        let mut da = vec![0.0; e * A_COLS];
        lp.e1.backward_input_cols(p, 2 * dv, A_COLS, &dpre1, e, &mut da, 0.0);
        let mut dp = vec![0.0; n * h];
        let mut dq = vec![0.0; n * h];
        for k in 0..e {
            let (i, j) = (f.recv[k], f.send[k]);
            let row = &dpre1[k * h..(k + 1) * h];
            for cc in 0..h {
                dp[i * h + cc] += row[cc];
                dq[j * h + cc] += row[cc];
            }
            let dd = da[k * A_COLS];
            for a in 0..3 {
                let t = 2.0 * (x[3 * i + a] - x[3 * j + a]) * dd;
                dx_in[3 * i + a] += t;
                dx_in[3 * j + a] -= t;
            }
        }
        lp.e1.backward_params_cols(0, dv, &dp, &c.v, n, g, false);
        lp.e1.backward_params_cols(dv, dv, &dq, &c.v, n, g, false);
        lp.e1.backward_input_cols(p, 0, dv, &dp, n, &mut dv_in, 1.0);
        lp.e1.backward_input_cols(p, dv, dv, &dq, n, &mut dv_in, 1.0);
        (dv_in, dx_in)
    }

    /// Public single-layer forward: returns `(v', x')`. `v` must have the
    /// layer's input width.
    pub fn egcl_forward(
        &self,
        layer: usize,
        frame: &FrameInput,
        v: &[f64],
        x: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_frame(frame)?;
        let dv = self.layout.layers.get(layer).map(|l| l.dv).ok_or_else(|| {
            Error::Dimension(format!("layer {layer} of {}", self.config.layers))
        })?;
        if v.len() != frame.n * dv || x.len() != frame.n * 3 {
            return Err(Error::Dimension(format!(
                "layer {layer} expects {} node features and {} coordinates",
                frame.n * dv,
                frame.n * 3
            )));
        }
        let (v, x, _) = self.layer_forward(layer, frame, v, x, true, false);
        Ok((v, x))
    }

    /// Node features and coordinates after the whole stack.
    pub fn forward_nodes(&self, frame: &FrameInput) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_frame(frame)?;
        let mut v = frame.v.clone();
        let mut x = frame.x.clone();
        for l in 0..self.config.layers {
            let (nv, nx, _) = self.layer_forward(l, frame, &v, &x, true, false);
            v = nv;
            x = nx;
        }
        Ok((v, x))
    }

    fn encode(&self, f: &FrameInput, keep: bool) -> (Vec<f64>, Option<FrameCache>) {
        let h = self.config.hidden;
        let mut v = f.v.clone();
        let mut x = f.x.clone();
        let mut caches = Vec::new();
        let last = self.config.layers - 1;
        for l in 0..self.config.layers {
            // the final coordinates never reach the classifier
            let (nv, nx, c) = self.layer_forward(l, f, &v, &x, l < last, keep);
            v = nv;
            x = nx;
            caches.extend(c);
        }
        let mut emb = vec![0.0; h];
        let mut argmax = vec![usize::MAX; h];
        match self.config.pooling {
            Pooling::Max => {
                for i in 0..f.n {
                    for c in 0..h {
                        let r = v[i * h + c].max(0.0);
                        if r > emb[c] {
                            emb[c] = r;
                            argmax[c] = i;
                        }
                    }
                }
            }
            Pooling::Mean => {
                for i in 0..f.n {
                    for c in 0..h {
                        emb[c] += v[i * h + c].max(0.0);
                    }
                }
                if f.n > 0 {
                    emb.iter_mut().for_each(|e| *e /= f.n as f64);
                }
            }
        }
        let cache = keep.then(|| FrameCache {
            layers: caches,
            v_out: v,
            argmax,
        });
        (emb, cache)
    }

    /// Pooled embedding of one frame; empty frames embed to zero.
    pub fn frame_embedding(&self, f: &FrameInput) -> Vec<f64> {
        if f.n == 0 {
            return vec![0.0; self.config.hidden];
        }
        self.encode(f, false).0
    }

    /// Elementwise max and mean over `total_frames` frames, of which only
    /// `embeddings` are non-zero. Returns the concatenation and, per max
    /// dimension, the index of the winning embedding.
    fn temporal(&self, embeddings: &[Vec<f64>], total_frames: usize) -> (Vec<f64>, Vec<usize>) {
        let h = self.config.hidden;
        let mut z = vec![0.0; 2 * h];
        let mut win = vec![usize::MAX; h];
        for (t, e) in embeddings.iter().enumerate() {
            for c in 0..h {
                if e[c] > z[c] {
                    z[c] = e[c];
                    win[c] = t;
                }
                z[h + c] += e[c];
            }
        }
        let denom = total_frames.max(embeddings.len()).max(1) as f64;
        for c in 0..h {
            z[h + c] /= denom;
        }
        (z, win)
    }

    fn readout(&self, z: &[f64]) -> (Vec<f64>, ReadoutCache) {
        let h = self.config.hidden;
        let mut pre = vec![0.0; h];
        self.layout.r1.forward(&self.params, z, 1, &mut pre);
        let act = silu_into(&pre);
        let mut logits = vec![0.0; CLASSES];
        self.layout.r2.forward(&self.params, &act, 1, &mut logits);
        (
            logits,
            ReadoutCache {
                z: z.to_vec(),
                pre,
                act,
            },
        )
    }

    /// Logits from precomputed per-frame embeddings (streaming path).
    pub fn logits_from_embeddings(&self, embeddings: &[Vec<f64>], total_frames: usize) -> Vec<f64> {
        let (z, _) = self.temporal(embeddings, total_frames);
        self.readout(&z).0
    }

    /// Logits and class probabilities for a window.
    pub fn model_forward(&self, w: &WindowInput) -> Result<(Vec<f64>, Vec<f64>)> {
        for f in &w.frames {
            self.check_frame(f)?;
        }
        let logits = self.logits(w);
        let probs = nn::softmax(&logits);
        Ok((logits, probs))
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&[match self.config.pooling {
            Pooling::Max => 0u8,
            Pooling::Mean => 1u8,
        }])?;
        for d in [self.config.hidden, self.config.layers, NODE_DIM, EDGE_DIM, CLASSES] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.config.length_unit.to_le_bytes())?;
        let hash = self.skin_hash.as_bytes();
        w.write_all(&(hash.len() as u32).to_le_bytes())?;
        w.write_all(hash)?;
        let table = self.layout.linears();
        w.write_all(&(table.len() as u32).to_le_bytes())?;
        for lin in &table {
            w.write_all(&(lin.inp as u32).to_le_bytes())?;
            w.write_all(&(lin.out as u32).to_le_bytes())?;
            w.write_all(&[u8::from(lin.b.is_some())])?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for v in &self.params {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("model checkpoint: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let pooling = match flag[0] {
            0 => Pooling::Max,
            1 => Pooling::Mean,
            f => return Err(bad(&format!("pooling flag {f}"))),
        };
        let hidden = read_u32(r)? as usize;
        let layers = read_u32(r)? as usize;
        let dims = [read_u32(r)?, read_u32(r)?, read_u32(r)?];
        if dims != [NODE_DIM as u32, EDGE_DIM as u32, CLASSES as u32] {
            return Err(bad(&format!("feature dimensions {dims:?}")));
        }
        if hidden == 0 || layers == 0 || hidden > 1 << 16 || layers > 1 << 10 {
            return Err(bad("implausible network size"));
        }
        let mut lu = [0u8; 8];
        r.read_exact(&mut lu)?;
        let length_unit = f64::from_le_bytes(lu);
        let hash_len = read_u32(r)? as usize;
        if hash_len > 1024 {
            return Err(bad("hash too long"));
        }
        let mut hash = vec![0u8; hash_len];
        r.read_exact(&mut hash)?;
        let skin_hash = String::from_utf8(hash).map_err(|_| bad("hash is not UTF-8"))?;
        let config = EgnnConfig {
            hidden,
            layers,
            pooling,
            length_unit,
        };
        let layout = Layout::new(&config);
        let table = layout.linears();
        if read_u32(r)? as usize != table.len() {
            return Err(bad("layer table length"));
        }
        for lin in &table {
            let (i, o) = (read_u32(r)? as usize, read_u32(r)? as usize);
            let mut b = [0u8; 1];
            r.read_exact(&mut b)?;
            if i != lin.inp || o != lin.out || (b[0] == 1) != lin.b.is_some() {
                return Err(bad("layer table does not match the configuration"));
            }
        }
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        if u64::from_le_bytes(count) as usize != layout.len {
            return Err(bad("parameter count"));
        }
        let mut params = vec![0.0; layout.len];
        let mut buf = [0u8; 8];
        for v in &mut params {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(EgnnModel {
            config,
            layout,
            params,
            skin_hash,
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"EGN1";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl Trainable for EgnnModel {
    type Input = WindowInput;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, w: &WindowInput) -> Vec<f64> {
        let embeddings: Vec<Vec<f64>> = w.frames.iter().map(|f| self.frame_embedding(f)).collect();
        self.logits_from_embeddings(&embeddings, w.total_frames)
    }

    fn accumulate_gradient(&self, w: &WindowInput, label: usize, g: &mut [f64]) -> (f64, Vec<f64>) {
        let h = self.config.hidden;
        let mut embeddings = Vec::with_capacity(w.frames.len());
        let mut caches = Vec::with_capacity(w.frames.len());
        for f in &w.frames {
            if f.n == 0 {
                embeddings.push(vec![0.0; h]);
                caches.push(None);
            } else {
                let (e, c) = self.encode(f, true);
                embeddings.push(e);
                caches.push(c);
            }
        }
        let (z, win) = self.temporal(&embeddings, w.total_frames);
        let (logits, rc) = self.readout(&z);
        let (loss, dlogits) = nn::cross_entropy(&logits, label);

        let p = &self.params;
        let (r1, r2) = (self.layout.r1, self.layout.r2);
        r2.backward_params(&dlogits, &rc.act, 1, g);
        let mut dpre = vec![0.0; h];
        r2.backward_input(p, &dlogits, 1, &mut dpre);
        mul_silu_grad(&mut dpre, &rc.pre);
        r1.backward_params(&dpre, &rc.z, 1, g);
        let mut dz = vec![0.0; 2 * h];
        r1.backward_input(p, &dpre, 1, &mut dz);

        let denom = w.total_frames.max(embeddings.len()).max(1) as f64;
        for (t, (f, cache)) in w.frames.iter().zip(&caches).enumerate() {
            let Some(cache) = cache else { continue };
            let mut demb = vec![0.0; h];
            for c in 0..h {
                demb[c] = dz[h + c] / denom;
                if win[c] == t {
                    demb[c] += dz[c];
                }
            }
            let mut dv = vec![0.0; f.n * h];
            match self.config.pooling {
                Pooling::Max => {
                    for c in 0..h {
                        let i = cache.argmax[c];
                        if i != usize::MAX {
                            dv[i * h + c] = demb[c];
                        }
                    }
                }
                Pooling::Mean => {
                    let inv = 1.0 / f.n as f64;
                    for i in 0..f.n {
                        for c in 0..h {
                            if cache.v_out[i * h + c] > 0.0 {
                                dv[i * h + c] = demb[c] * inv;
                            }
                        }
                    }
                }
            }
            let mut dx: Option<Vec<f64>> = None;
            for l in (0..self.config.layers).rev() {
                let (dvi, dxi) = self.layer_backward(l, f, &cache.layers[l], &dv, dx.as_deref(), g);
                dv = dvi;
                dx = Some(dxi);
            }
        }
        (loss, logits)
    }
}

/// Trains a fresh model on `samples`, holding out `cfg.val_fraction` of them
/// for validation.
pub fn train(
    model_config: EgnnConfig,
    skin_hash: &str,
    samples: &[(WindowInput, usize)],
    cfg: &nn::TrainConfig,
    on_epoch: impl FnMut(&nn::EpochMetrics),
) -> Result<(EgnnModel, nn::History)> {
    let mut model = EgnnModel::new(model_config, cfg.seed, skin_hash);
    let (tr, va) = nn::split_indices(samples.len(), cfg.val_fraction, cfg.seed);
    let train: Vec<(&WindowInput, usize)> = tr.iter().map(|&i| (&samples[i].0, samples[i].1)).collect();
    let val: Vec<(&WindowInput, usize)> = va.iter().map(|&i| (&samples[i].0, samples[i].1)).collect();
    let history = nn::fit(&mut model, &train, &val, cfg, on_epoch)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_frame() -> FrameInput {
        FrameInput {
            n: 2,
            v: vec![0.5, 1.0, 0.5, 1.0],
            x: vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            recv: vec![0, 1],
            send: vec![1, 0],
            attr: vec![1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0],
            inv_deg: vec![1.0, 1.0],
        }
    }

    fn random_gates(model: &mut EgnnModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in model.layout.layers.clone() {
            l.x2.init(&mut model.params, &mut rng);
        }
    }

    #[test]
    fn isolated_node_keeps_its_coordinates() {
        let model = EgnnModel::new(EgnnConfig::default(), 1, "");
        let f = FrameInput {
            n: 1,
            v: vec![0.3, 0.7],
            x: vec![1.0, 2.0, 3.0],
            inv_deg: vec![0.0],
            ..FrameInput::default()
        };
        let (_, x) = model.egcl_forward(0, &f, &f.v, &f.x).unwrap();
        assert_eq!(x, f.x);
    }

    #[test]
    fn symmetric_pair_moves_equal_and_opposite() {
        let mut model = EgnnModel::new(EgnnConfig::default(), 2, "");
        random_gates(&mut model, 3);
        let f = line_frame();
        let (_, x) = model.egcl_forward(0, &f, &f.v, &f.x).unwrap();
        let d0: Vec<f64> = (0..3).map(|c| x[c] - f.x[c]).collect();
        let d1: Vec<f64> = (0..3).map(|c| x[3 + c] - f.x[3 + c]).collect();
        assert!(d0[0].abs() > 1e-6);
        for c in 0..3 {
            assert!((d0[c] + d1[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_window_gives_constant_logits() {
        let model = EgnnModel::new(EgnnConfig::default(), 4, "");
        let w = WindowInput {
            frames: vec![],
            total_frames: 100,
        };
        let (l, p) = model.model_forward(&w).unwrap();
        let z = vec![0.0; 2 * model.hidden()];
        assert_eq!(l, model.readout(&z).0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trips() {
        let model = EgnnModel::new(
            EgnnConfig {
                pooling: Pooling::Mean,
                hidden: 8,
                layers: 2,
                ..EgnnConfig::default()
            },
            5,
            "abc123",
        );
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let back = EgnnModel::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, model);
        buf[0] = b'X';
        assert!(EgnnModel::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn bad_buffers_are_rejected() {
        let model = EgnnModel::new(EgnnConfig::default(), 1, "");
        let mut f = line_frame();
        f.send[0] = 7;
        assert!(matches!(model.forward_nodes(&f), Err(Error::Dimension(_))));
    }
}
