//! On-disk datasets: `manifest.json`, a copy of the skin config, one `TGR1`
//! binary per recording and an optional `samples.idx` sample table.
//!
//! Recording layout (little-endian):
//!
//! ```text
//! "TGR1" | N u32 | frames u32 | f_s f32
//! frames x N   f32 pressures (frame-major)
//! frames x J   f32 joint angles
//! S u32 | S x (start u32, end u32, class u32)   class u32::MAX = unlabeled
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::egnn::WindowInput;
use crate::error::{Error, Result};
use crate::graph::{build_window, GraphParams};
use crate::segment::{auto_segment, extract_samples, window_frames, Segment, SegmentParams};
use crate::skin::{JointState, Skin, SkinConfig};
use crate::synth::{
    synthesize_slot, class_sequence, GestureClass, ParamRanges, PoseSampler, PressureFrame,
    Recording, SynthConfig,
};

const REC_MAGIC: &[u8; 4] = b"TGR1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SKIN_FILE: &str = "skin.json";
pub const SAMPLES_FILE: &str = "samples.idx";
pub const DEFAULT_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub id: usize,
    pub class: GestureClass,
    /// File name inside the dataset directory; absent when synthesis failed.
    pub file: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub skin_hash: String,
    pub seed: u64,
    /// Recordings requested per class, in class-id order.
    pub counts: [usize; GestureClass::COUNT],
    pub sample_rate: f64,
    pub n_taxels: usize,
    pub n_joints: usize,
    pub synth: SynthConfig,
    pub ranges: ParamRanges,
    pub pose_ranges: Vec<(f64, f64)>,
    pub recordings: Vec<RecordingEntry>,
}

pub fn recording_file_name(id: usize) -> String {
    format!("rec_{id:05}.tgr")
}

pub fn write_recording(w: &mut impl Write, rec: &Recording) -> Result<()> {
    let n = rec.taxel_count();
    w.write_all(REC_MAGIC)?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(rec.frames.len() as u32).to_le_bytes())?;
    w.write_all(&(rec.sample_rate as f32).to_le_bytes())?;
    for f in &rec.frames {
        if f.pressure.len() != n {
            return Err(Error::Dimension("recording frames differ in taxel count".into()));
        }
        for p in &f.pressure {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    for f in &rec.frames {
        for q in &f.q.0 {
            w.write_all(&(*q as f32).to_le_bytes())?;
        }
    }
    w.write_all(&(rec.ground_truth.len() as u32).to_le_bytes())?;
    for s in &rec.ground_truth {
        let class = s.class.map_or(u32::MAX, |c| c.id() as u32);
        for v in [s.start_frame as u32, s.end_frame as u32, class] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Reads a recording; `n_joints` comes from the manifest.
pub fn read_recording(r: &mut impl Read, n_joints: usize) -> Result<Recording> {
    let bad = |m: String| Error::Format(format!("recording: {m}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != REC_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let n = read_u32(r)? as usize;
    let count = read_u32(r)? as usize;
    let fs = read_f32(r)? as f64;
    if !(fs > 0.0) {
        return Err(bad(format!("sample rate {fs}")));
    }
    let mut raw = vec![0u8; n * 4];
    let mut frames = Vec::with_capacity(count);
    for k in 0..count {
        r.read_exact(&mut raw)?;
        let pressure = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        frames.push(PressureFrame {
            t: k as f64 / fs,
            pressure,
            q: JointState(Vec::new()),
        });
    }
    for f in &mut frames {
        f.q = JointState(
            (0..n_joints)
                .map(|_| read_f32(r).map(f64::from))
                .collect::<Result<_>>()?,
        );
    }
    let segs = read_u32(r)? as usize;
    let mut ground_truth = Vec::with_capacity(segs.min(1 << 16));
    for _ in 0..segs {
        let (s, e, c) = (read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)?);
        if s > e || e >= count {
            return Err(bad(format!("segment {s}-{e} outside {count} frames")));
        }
        let class = if c == u32::MAX {
            None
        } else {
            Some(GestureClass::from_id(c as usize).ok_or_else(|| bad(format!("class id {c}")))?)
        };
        ground_truth.push(Segment {
            start_frame: s,
            end_frame: e,
            class,
        });
    }
    Ok(Recording {
        frames,
        ground_truth,
        sample_rate: fs,
    })
}

/// Everything `dataset synth` needs.
#[derive(Debug, Clone)]
pub struct SynthRequest {
    pub counts: [usize; GestureClass::COUNT],
    pub seed: u64,
    pub sampler: PoseSampler,
    pub synth: SynthConfig,
    pub ranges: ParamRanges,
}

/// Synthesizes a dataset into `dir`, writing recordings as they are
/// produced. Failed slots are recorded in the manifest with their reason.
pub fn synth_to_dir(skin: &Skin, req: &SynthRequest, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    skin.config().save(&dir.join(SKIN_FILE))?;
    let classes = class_sequence(&req.counts);
    let mut entries = Vec::with_capacity(classes.len());
    const CHUNK: usize = 16;
    for (c, chunk) in classes.chunks(CHUNK).enumerate() {
        let written: Vec<Result<RecordingEntry>> = chunk
            .par_iter()
            .enumerate()
            .map(|(k, &class)| {
                let index = c * CHUNK + k;
                let slot = synthesize_slot(
                    skin,
                    class,
                    index,
                    &req.sampler,
                    req.seed,
                    &req.synth,
                    &req.ranges,
                );
                match slot.result {
                    Ok(rec) => {
                        let name = recording_file_name(index);
                        let mut w = BufWriter::new(File::create(dir.join(&name))?);
                        write_recording(&mut w, &rec)?;
                        w.flush()?;
                        Ok(RecordingEntry {
                            id: index,
                            class,
                            file: Some(name),
                            error: None,
                        })
                    }
                    Err(e) => {
                        log::warn!("recording {index} ({class}) skipped: {e}");
                        Ok(RecordingEntry {
                            id: index,
                            class,
                            file: None,
                            error: Some(e.to_string()),
                        })
                    }
                }
            })
            .collect();
        for e in written {
            entries.push(e?);
        }
    }
    let manifest = Manifest {
        format_version: 1,
        skin_hash: skin.hash().to_string(),
        seed: req.seed,
        counts: req.counts,
        sample_rate: req.synth.sample_rate,
        n_taxels: skin.taxel_count(),
        n_joints: skin.joint_count(),
        synth: req.synth,
        ranges: req.ranges.clone(),
        pose_ranges: req.sampler.ranges.clone(),
        recordings: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// An opened dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub skin: Skin,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let skin = Skin::new(SkinConfig::load(&dir.join(SKIN_FILE))?)?;
        if skin.hash() != manifest.skin_hash {
            return Err(Error::HashMismatch {
                expected: manifest.skin_hash.clone(),
                found: skin.hash().to_string(),
            });
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            skin,
        })
    }

    pub fn recording(&self, id: usize) -> Result<Recording> {
        let entry = self
            .manifest
            .recordings
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::Format(format!("no recording {id} in manifest")))?;
        let file = entry
            .file
            .as_ref()
            .ok_or_else(|| Error::Format(format!("recording {id} failed to synthesize")))?;
        let mut r = BufReader::new(File::open(self.dir.join(file))?);
        read_recording(&mut r, self.manifest.n_joints)
    }

    /// Ids of recordings present on disk.
    pub fn recording_ids(&self) -> Vec<usize> {
        self.manifest
            .recordings
            .iter()
            .filter(|e| e.file.is_some())
            .map(|e| e.id)
            .collect()
    }

    pub fn samples_path(&self) -> PathBuf {
        self.dir.join(SAMPLES_FILE)
    }
}

/// One row of `samples.idx`: frames `window_start..=window_end` of a
/// recording (negative starts are zero-padded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRecord {
    pub recording_id: usize,
    pub window_start: i64,
    pub window_end: usize,
    pub class: GestureClass,
}

impl SampleRecord {
    pub fn window_len(&self) -> usize {
        (self.window_end as i64 - self.window_start + 1) as usize
    }
}

pub fn write_samples_idx(w: &mut impl Write, samples: &[SampleRecord]) -> Result<()> {
    writeln!(w, "recording_id,window_start,window_end,class_id")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{}",
            s.recording_id,
            s.window_start,
            s.window_end,
            s.class.id()
        )?;
    }
    Ok(())
}

pub fn read_samples_idx(text: &str) -> Result<Vec<SampleRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("recording_id,window_start,window_end,class_id") {
        return Err(Error::Format("samples.idx: missing header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::Format(format!("samples.idx line {}: '{line}'", i + 2));
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let class_id: usize = f[3].parse().map_err(|_| bad())?;
            let rec = SampleRecord {
                recording_id: f[0].parse().map_err(|_| bad())?,
                window_start: f[1].parse().map_err(|_| bad())?,
                window_end: f[2].parse().map_err(|_| bad())?,
                class: GestureClass::from_id(class_id).ok_or_else(bad)?,
            };
            if rec.window_start > rec.window_end as i64 {
                return Err(bad());
            }
            Ok(rec)
        })
        .collect()
}

/// Labeled sample windows of one recording.
pub fn label_recording(
    rec: &Recording,
    recording_id: usize,
    params: &SegmentParams,
    window: usize,
) -> Vec<SampleRecord> {
    let segs = auto_segment(rec, params);
    extract_samples(rec, recording_id, &segs, window)
        .into_iter()
        .map(|s| SampleRecord {
            recording_id,
            window_start: s.source.window_start,
            window_end: s.source.segment.end_frame,
            class: s.label,
        })
        .collect()
}

/// Runs segmentation over every recording and writes `samples.idx`.
pub fn label_dataset(ds: &Dataset, params: &SegmentParams, window: usize) -> Result<Vec<SampleRecord>> {
    let ids = ds.recording_ids();
    let per: Vec<Result<Vec<SampleRecord>>> = ids
        .par_iter()
        .map(|&id| Ok(label_recording(&ds.recording(id)?, id, params, window)))
        .collect();
    let mut all = Vec::new();
    for p in per {
        all.extend(p?);
    }
    let mut w = BufWriter::new(File::create(ds.samples_path())?);
    write_samples_idx(&mut w, &all)?;
    w.flush()?;
    Ok(all)
}

pub fn load_samples(ds: &Dataset) -> Result<Vec<SampleRecord>> {
    read_samples_idx(&fs::read_to_string(ds.samples_path())?)
}

/// Indices of the frames kept when a `w`-frame window is subsampled at
/// `stride`: every stride-th frame counting back from the last, in time
/// order.
pub fn strided_indices(w: usize, stride: usize) -> Vec<usize> {
    assert!(stride >= 1, "stride must be positive");
    let mut idx: Vec<usize> = (0..w).rev().step_by(stride).collect();
    idx.reverse();
    idx
}

/// Frames of a sample window, subsampled at `stride`.
pub fn sample_frames(rec: &Recording, s: &SampleRecord, stride: usize) -> Vec<PressureFrame> {
    let (frames, _) = window_frames(rec, s.window_end, s.window_len());
    strided_indices(frames.len(), stride)
        .into_iter()
        .map(|i| frames[i].clone())
        .collect()
}

/// Graph-model input for every sample.
pub fn load_windows(
    ds: &Dataset,
    samples: &[SampleRecord],
    graph: &GraphParams,
    stride: usize,
    length_unit: f64,
) -> Result<Vec<(WindowInput, usize)>> {
    samples
        .par_iter()
        .map(|s| {
            let rec = ds.recording(s.recording_id)?;
            let frames = sample_frames(&rec, s, stride);
            let graphs = build_window(&ds.skin, &frames, graph)?;
            Ok((WindowInput::from_graphs(&graphs, length_unit), s.class.id()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_idx_round_trips() {
        let rows = vec![
            SampleRecord {
                recording_id: 3,
                window_start: -20,
                window_end: 79,
                class: GestureClass::Grab,
            },
            SampleRecord {
                recording_id: 4,
                window_start: 10,
                window_end: 109,
                class: GestureClass::Poke,
            },
        ];
        let mut buf = Vec::new();
        write_samples_idx(&mut buf, &rows).unwrap();
        let back = read_samples_idx(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, rows);
        assert!(read_samples_idx("nope\n1,2,3,4\n").is_err());
    }

    #[test]
    fn strided_windows_end_on_the_last_frame() {
        assert_eq!(strided_indices(100, 100), vec![99]);
        let s = strided_indices(100, 5);
        assert_eq!(s.len(), 20);
        assert_eq!((s[0], s[19]), (4, 99));
        assert_eq!(strided_indices(3, 1), vec![0, 1, 2]);
    }
}
