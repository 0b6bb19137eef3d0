use std::fs;

use tactile_core::dataset::{
    label_dataset, load_samples, load_windows, read_recording, synth_to_dir, write_recording,
    write_samples_idx, Dataset, SynthRequest,
};
use tactile_core::graph::GraphParams;
use tactile_core::segment::SegmentParams;
use tactile_core::skin::{presets, Skin};
use tactile_core::synth::{ParamRanges, PoseSampler, SynthConfig};

fn request(seed: u64) -> SynthRequest {
    SynthRequest {
        counts: [3, 3, 3, 3],
        seed,
        sampler: PoseSampler::new(presets::ur5_like_joint_ranges()),
        synth: SynthConfig::default(),
        ranges: ParamRanges::default(),
    }
}

#[test]
fn synth_label_load_round_trip() {
    let skin = Skin::new(presets::ur5_like()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_to_dir(&skin, &request(4), dir.path()).unwrap();
    assert_eq!(manifest.recordings.len(), 12);

    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.skin.hash(), skin.hash());
    let ids = ds.recording_ids();
    let rec = ds.recording(ids[0]).unwrap();
    let mut buf = Vec::new();
    write_recording(&mut buf, &rec).unwrap();
    assert_eq!(read_recording(&mut buf.as_slice(), skin.joint_count()).unwrap(), rec);

    let samples = label_dataset(&ds, &SegmentParams::default(), 100).unwrap();
    assert_eq!(samples.len(), ids.len());
    for s in &samples {
        assert_eq!(s.window_len(), 100);
        let entry = manifest.recordings.iter().find(|e| e.id == s.recording_id).unwrap();
        assert_eq!(entry.class, s.class);
    }
    let mut f = fs::File::create(ds.samples_path()).unwrap();
    write_samples_idx(&mut f, &samples).unwrap();
    drop(f);
    assert_eq!(load_samples(&ds).unwrap(), samples);

    let windows = load_windows(&ds, &samples, &GraphParams::default(), 5, 0.05).unwrap();
    assert_eq!(windows.len(), samples.len());
    assert!(windows.iter().all(|(w, _)| w.total_frames == 20 && !w.frames.is_empty()));
}

#[test]
fn a_tampered_skin_file_is_refused() {
    let skin = Skin::new(presets::ur5_like()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    synth_to_dir(&skin, &request(5), dir.path()).unwrap();
    let path = dir.path().join("skin.json");
    let mut cfg = tactile_core::skin::SkinConfig::load(&path).unwrap();
    cfg.name.push('x');
    cfg.save(&path).unwrap();
    assert!(Dataset::open(dir.path()).is_err());
}

#[test]
fn truncated_recordings_are_errors() {
    let skin = Skin::new(presets::ur5_like()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    synth_to_dir(&skin, &request(6), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let rec = ds.recording(ds.recording_ids()[0]).unwrap();
    let mut buf = Vec::new();
    write_recording(&mut buf, &rec).unwrap();
    buf.truncate(buf.len() / 2);
    assert!(read_recording(&mut buf.as_slice(), skin.joint_count()).is_err());
    buf[0] = b'Z';
    assert!(read_recording(&mut buf.as_slice(), skin.joint_count()).is_err());
}
