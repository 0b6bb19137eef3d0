//! Threshold-based segmentation of recordings into labeled gesture windows.

use serde::{Deserialize, Serialize};

use crate::skin::JointState;
use crate::synth::{GestureClass, PressureFrame, Recording};

/// Contiguous frame range `[start_frame, end_frame]` (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start_frame: usize,
    pub end_frame: usize,
    /// `None` means unlabeled.
    pub class: Option<GestureClass>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlap(&self, other: &Segment) -> usize {
        let lo = self.start_frame.max(other.start_frame);
        let hi = self.end_frame.min(other.end_frame);
        if hi >= lo {
            hi - lo + 1
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Activity threshold on the per-frame maximum pressure.
    pub theta_label: f64,
    /// Inactive gaps shorter than this (seconds) are bridged.
    pub gap_min: f64,
    /// Segments shorter than this (seconds) are dropped as noise.
    pub len_min: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            theta_label: 0.05,
            gap_min: 0.4,
            len_min: 0.06,
        }
    }
}

impl SegmentParams {
    pub fn gap_min_frames(&self, sample_rate: f64) -> usize {
        (self.gap_min * sample_rate).round() as usize
    }

    pub fn len_min_frames(&self, sample_rate: f64) -> usize {
        (self.len_min * sample_rate).round() as usize
    }
}

/// Maximal runs of frames whose value exceeds `theta`.
pub fn active_runs(trace: &[f64], theta: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &v) in trace.iter().enumerate() {
        match (v > theta, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, trace.len() - 1));
    }
    runs
}

/// Bridges gaps of fewer than `gap_min` inactive frames.
pub fn merge_runs(runs: &[(usize, usize)], gap_min: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for &(s, e) in runs {
        match out.last_mut() {
            Some(last) if s - last.1 - 1 < gap_min => last.1 = e,
            _ => out.push((s, e)),
        }
    }
    out
}

/// Active runs → runs shorter than `len_min` dropped → gaps under
/// `gap_min` bridged.
///
/// Short runs are rejected before bridging so an isolated noise spike near a
/// gesture cannot stretch its boundaries. The merged result is checked again
/// against `len_min`.
pub fn segment_trace(
    trace: &[f64],
    theta: f64,
    gap_min: usize,
    len_min: usize,
) -> Vec<(usize, usize)> {
    let keep = |&(s, e): &(usize, usize)| e - s + 1 >= len_min;
    let runs: Vec<_> = active_runs(trace, theta).into_iter().filter(keep).collect();
    merge_runs(&runs, gap_min).into_iter().filter(keep).collect()
}

/// Per-frame maximum pressure over all taxels.
pub fn max_pressure_trace(frames: &[PressureFrame]) -> Vec<f64> {
    frames
        .iter()
        .map(|f| f.pressure.iter().fold(0.0f32, |m, &p| m.max(p)) as f64)
        .collect()
}

/// Unlabeled gesture segments of a recording.
pub fn auto_segment(recording: &Recording, params: &SegmentParams) -> Vec<Segment> {
    let trace = max_pressure_trace(&recording.frames);
    segment_trace(
        &trace,
        params.theta_label,
        params.gap_min_frames(recording.sample_rate),
        params.len_min_frames(recording.sample_rate),
    )
    .into_iter()
    .map(|(start_frame, end_frame)| Segment {
        start_frame,
        end_frame,
        class: None,
    })
    .collect()
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSource {
    pub recording_id: usize,
    pub segment: Segment,
    /// First frame index of the window; negative when left-padded.
    pub window_start: i64,
}

/// Fixed-length window of frames ending at a segment's last frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureSample {
    pub frames: Vec<PressureFrame>,
    pub label: GestureClass,
    pub source: SampleSource,
}

/// Class with the largest total overlap with `segment`, or `None` when
/// nothing overlaps or two classes tie.
pub fn majority_class(segment: &Segment, ground_truth: &[Segment]) -> Result<GestureClass, String> {
    let mut overlap = [0usize; GestureClass::COUNT];
    for gt in ground_truth {
        if let Some(c) = gt.class {
            overlap[c.id()] += segment.overlap(gt);
        }
    }
    let best = *overlap.iter().max().unwrap();
    if best == 0 {
        return Err("no ground-truth overlap".into());
    }
    let winners: Vec<usize> = (0..overlap.len()).filter(|&c| overlap[c] == best).collect();
    if winners.len() > 1 {
        return Err(format!("overlap tie between classes {winners:?}"));
    }
    Ok(GestureClass::from_id(winners[0]).unwrap())
}

/// Window of `w` frames ending at `end`, left-padded with zero-pressure
/// frames at the recording's joint state.
pub fn window_frames(recording: &Recording, end: usize, w: usize) -> (Vec<PressureFrame>, i64) {
    let start = end as i64 + 1 - w as i64;
    let n = recording.taxel_count();
    let q = recording
        .frames
        .first()
        .map(|f| f.q.clone())
        .unwrap_or(JointState(Vec::new()));
    let frames = (start..=end as i64)
        .map(|i| {
            if i < 0 {
                PressureFrame {
                    t: i as f64 / recording.sample_rate,
                    pressure: vec![0.0; n],
                    q: q.clone(),
                }
            } else {
                recording.frames[i as usize].clone()
            }
        })
        .collect();
    (frames, start)
}

/// One right-aligned `w`-frame sample per labeled segment.
pub fn extract_samples(
    recording: &Recording,
    recording_id: usize,
    segments: &[Segment],
    w: usize,
) -> Vec<GestureSample> {
    assert!(w >= 1, "window length must be positive");
    let mut out = Vec::new();
    for seg in segments {
        let label = match majority_class(seg, &recording.ground_truth) {
            Ok(c) => c,
            Err(reason) => {
                log::warn!(
                    "recording {recording_id}: skipping segment {}-{}: {reason}",
                    seg.start_frame,
                    seg.end_frame
                );
                continue;
            }
        };
        let (frames, window_start) = window_frames(recording, seg.end_frame, w);
        out.push(GestureSample {
            frames,
            label,
            source: SampleSource {
                recording_id,
                segment: Segment {
                    class: Some(label),
                    ..*seg
                },
                window_start,
            },
        });
    }
    out
}
