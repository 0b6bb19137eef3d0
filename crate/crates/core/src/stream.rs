//! Streaming recognition: frame wire format, the FIFO window of per-frame
//! embeddings and the activity gate that turns window predictions into
//! gesture events.
//!
//! Frame message layout (little-endian): `"TGF1" | N u32 | N x f32
//! pressure | J x f32 joint angles`, with `J` taken from the skin.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::sync::mpsc;
use std::thread;

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use crate::dataset::strided_indices;
use crate::egnn::{EgnnModel, FrameInput, WindowInput};
use crate::error::{Error, Result};
use crate::graph::{build_graph_with_frames, patch_frames, GraphParams};
use crate::nn::{argmax, softmax};
use crate::skin::{JointState, Skin};
use crate::synth::{GestureClass, PressureFrame};

const FRAME_MAGIC: &[u8; 4] = b"TGF1";

pub fn write_frame_message(w: &mut impl Write, pressure: &[f32], q: &JointState) -> io::Result<()> {
    w.write_all(FRAME_MAGIC)?;
    w.write_all(&(pressure.len() as u32).to_le_bytes())?;
    for p in pressure {
        w.write_all(&p.to_le_bytes())?;
    }
    for a in &q.0 {
        w.write_all(&(*a as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Next message, or `None` at a clean end of stream.
pub fn read_frame_message(
    r: &mut impl Read,
    n_taxels: usize,
    n_joints: usize,
) -> Result<Option<(Vec<f32>, JointState)>> {
    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    if &magic != FRAME_MAGIC {
        return Err(Error::Format("frame message: bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    if n != n_taxels {
        return Err(Error::Dimension(format!(
            "frame message carries {n} taxels, skin has {n_taxels}"
        )));
    }
    let mut raw = vec![0u8; 4 * (n + n_joints)];
    r.read_exact(&mut raw)?;
    let vals: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let q = JointState(vals[n..].iter().map(|&v| v as f64).collect());
    let mut p = vals;
    p.truncate(n);
    Ok(Some((p, q)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamParams {
    pub graph: GraphParams,
    /// FIFO length in frames.
    pub window: usize,
    /// The model sees every `stride`-th frame counting back from the newest.
    pub stride: usize,
    /// Idle frames that close a gesture.
    pub gap_min_frames: usize,
    /// Activity runs shorter than this are ignored as noise.
    pub len_min_frames: usize,
}

impl Default for StreamParams {
    fn default() -> Self {
        StreamParams {
            graph: GraphParams::default(),
            window: 100,
            stride: 5,
            gap_min_frames: 20,
            len_min_frames: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureEvent {
    pub class: GestureClass,
    pub confidence: f64,
    /// First and last active frame of the gesture.
    pub start_frame: usize,
    pub end_frame: usize,
    /// Frame at which the gate closed and the event fired.
    pub emitted_at: usize,
}

/// Output of the graph-build stage for one frame.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub input: FrameInput,
    pub max_pressure: f64,
}

/// Graph-build stage; caches patch frames while the joint state repeats.
#[derive(Debug, Clone)]
pub struct FramePreparer {
    skin: Skin,
    graph: GraphParams,
    length_unit: f64,
    cached: Option<(JointState, Vec<Isometry3<f64>>)>,
}

impl FramePreparer {
    pub fn new(skin: Skin, graph: GraphParams, length_unit: f64) -> Self {
        FramePreparer {
            skin,
            graph,
            length_unit,
            cached: None,
        }
    }

    pub fn prepare(&mut self, pressure: &[f32], q: &JointState) -> Result<PreparedFrame> {
        if pressure.len() != self.skin.taxel_count() {
            return Err(Error::Dimension(format!(
                "frame has {} pressures, skin has {} taxels",
                pressure.len(),
                self.skin.taxel_count()
            )));
        }
        if self.cached.as_ref().is_none_or(|(cq, _)| cq != q) {
            self.cached = Some((q.clone(), patch_frames(&self.skin, q)?));
        }
        let frames = &self.cached.as_ref().unwrap().1;
        let g = build_graph_with_frames(&self.skin, pressure, frames, &self.graph);
        let max_pressure = pressure.iter().fold(0.0f32, |m, &p| m.max(p)) as f64;
        Ok(PreparedFrame {
            input: FrameInput::from_graph(&g, self.length_unit),
            max_pressure,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Pending {
    start: usize,
    last: usize,
    class: usize,
    confidence: f64,
}

/// FIFO of per-frame embeddings plus the activity gate. Each frame is
/// encoded once when it arrives; a step only re-runs the temporal
/// aggregation and readout.
#[derive(Debug, Clone)]
pub struct StreamingRecognizer {
    model: EgnnModel,
    params: StreamParams,
    /// Newest last; `None` for empty frames.
    fifo: VecDeque<Option<(Vec<f64>, FrameInput)>>,
    frame_index: usize,
    run_len: usize,
    pending: Option<Pending>,
    keep_inputs: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub event: Option<GestureEvent>,
}

impl StreamingRecognizer {
    pub fn new(model: EgnnModel, params: StreamParams) -> Self {
        assert!(params.window >= 1 && params.stride >= 1);
        StreamingRecognizer {
            model,
            fifo: std::iter::repeat_n(None, params.window).collect(),
            params,
            frame_index: 0,
            run_len: 0,
            pending: None,
            keep_inputs: false,
        }
    }

    /// Keep the frame graphs in the FIFO so [`Self::window_input`] can
    /// rebuild the model input (used to cross-check the cached path).
    pub fn keep_inputs(mut self, keep: bool) -> Self {
        self.keep_inputs = keep;
        self
    }

    pub fn model(&self) -> &EgnnModel {
        &self.model
    }

    /// Strided view of the FIFO as the model sees it. Requires
    /// [`Self::keep_inputs`].
    pub fn window_input(&self) -> WindowInput {
        let idx = strided_indices(self.params.window, self.params.stride);
        WindowInput {
            frames: idx
                .iter()
                .filter_map(|&i| self.fifo[i].as_ref().map(|(_, f)| f.clone()))
                .collect(),
            total_frames: idx.len(),
        }
    }

    fn window_logits(&self) -> Vec<f64> {
        let idx = strided_indices(self.params.window, self.params.stride);
        let embeddings: Vec<Vec<f64>> = idx
            .iter()
            .filter_map(|&i| self.fifo[i].as_ref().map(|(e, _)| e.clone()))
            .collect();
        self.model.logits_from_embeddings(&embeddings, idx.len())
    }

    /// Model-evaluation stage for one prepared frame.
    pub fn push_prepared(&mut self, frame: PreparedFrame) -> StepOutput {
        let now = self.frame_index;
        self.frame_index += 1;
        let entry = (frame.input.n > 0).then(|| {
            let emb = self.model.frame_embedding(&frame.input);
            let input = if self.keep_inputs {
                frame.input
            } else {
                FrameInput::default()
            };
            (emb, input)
        });
        self.fifo.pop_front();
        self.fifo.push_back(entry);

        let logits = self.window_logits();
        let probabilities = softmax(&logits);

        let p = &self.params;
        if frame.max_pressure > p.graph.theta_act {
            self.run_len += 1;
        } else {
            self.run_len = 0;
        }
        if self.run_len >= p.len_min_frames.max(1) {
            let class = argmax(&probabilities);
            let start = now + 1 - self.run_len;
            let pending = self.pending.get_or_insert(Pending {
                start,
                ..Pending::default()
            });
            pending.last = now;
            pending.class = class;
            pending.confidence = probabilities[class];
        }
        let mut event = None;
        if let Some(pd) = self.pending {
            if now - pd.last >= p.gap_min_frames {
                event = Some(GestureEvent {
                    class: GestureClass::from_id(pd.class).unwrap(),
                    confidence: pd.confidence,
                    start_frame: pd.start,
                    end_frame: pd.last,
                    emitted_at: now,
                });
                self.pending = None;
            }
        }
        StepOutput {
            logits,
            probabilities,
            event,
        }
    }
}

/// Single-threaded recognition over a sequence of frames.
pub fn predict(
    model: &EgnnModel,
    skin: &Skin,
    frames: &[PressureFrame],
    params: &StreamParams,
) -> Result<Vec<GestureEvent>> {
    let mut prep = FramePreparer::new(skin.clone(), params.graph, model.config.length_unit);
    let mut rec = StreamingRecognizer::new(model.clone(), *params);
    let mut events = Vec::new();
    for f in frames {
        let out = rec.push_prepared(prep.prepare(&f.pressure, &f.q)?);
        events.extend(out.event);
    }
    Ok(events)
}

/// Two-stage pipeline: a producer thread reads and graphs frames while the
/// calling thread evaluates the model. `on_event` sees events in order.
pub fn run_pipeline<R: Read + Send>(
    model: &EgnnModel,
    skin: &Skin,
    params: &StreamParams,
    mut source: R,
    mut on_event: impl FnMut(&GestureEvent),
) -> Result<usize> {
    let (tx, rx) = mpsc::sync_channel::<Result<PreparedFrame>>(4);
    let mut prep = FramePreparer::new(skin.clone(), params.graph, model.config.length_unit);
    let (n, j) = (skin.taxel_count(), skin.joint_count());
    thread::scope(|s| {
        s.spawn(move || loop {
            let msg = match read_frame_message(&mut source, n, j) {
                Ok(Some((p, q))) => prep.prepare(&p, &q),
                Ok(None) => break,
                Err(e) => Err(e),
            };
            let stop = msg.is_err();
            if tx.send(msg).is_err() || stop {
                break;
            }
        });
        let mut rec = StreamingRecognizer::new(model.clone(), *params);
        let mut count = 0;
        for msg in rx {
            let out = rec.push_prepared(msg?);
            if let Some(e) = &out.event {
                on_event(e);
            }
            count += 1;
        }
        Ok(count)
    })
}
