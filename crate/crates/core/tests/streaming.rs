mod common;

use tactile_core::dataset::strided_indices;
use tactile_core::egnn::{EgnnConfig, EgnnModel, WindowInput, DEFAULT_LENGTH_UNIT};
use tactile_core::graph::build_window;
use tactile_core::skin::{presets, Skin};
use tactile_core::stream::{
    predict, run_pipeline, write_frame_message, FramePreparer, StreamParams, StreamingRecognizer,
};
use tactile_core::synth::{
    synthesize_slot, GestureClass, ParamRanges, PoseSampler, Recording, SynthConfig,
};

fn recording(skin: &Skin, class: GestureClass, index: usize) -> Recording {
    let sampler = PoseSampler::new(presets::ur5_like_joint_ranges());
    synthesize_slot(
        skin,
        class,
        index,
        &sampler,
        77,
        &SynthConfig::default(),
        &ParamRanges::default(),
    )
    .result
    .unwrap()
}

/// The window ending at frame `t`, built from the recording without any
/// streaming state.
fn batch_window(skin: &Skin, rec: &Recording, t: usize, p: &StreamParams) -> WindowInput {
    let idx = strided_indices(p.window, p.stride);
    let frames: Vec<_> = idx
        .iter()
        .filter_map(|&i| (t + i + 1).checked_sub(p.window))
        .map(|k| rec.frames[k].clone())
        .collect();
    let graphs = build_window(skin, &frames, &p.graph).unwrap();
    WindowInput {
        total_frames: idx.len(),
        ..WindowInput::from_graphs(&graphs, DEFAULT_LENGTH_UNIT)
    }
}

#[test]
fn streaming_logits_match_a_fresh_window_every_frame() {
    let skin = common::ur5_skin();
    let rec = recording(&skin, GestureClass::DoublePat, 1);
    let model = EgnnModel::new(EgnnConfig::default(), 5, skin.hash());
    let params = StreamParams::default();
    let mut prep = FramePreparer::new(skin.clone(), params.graph, DEFAULT_LENGTH_UNIT);
    let mut rec_state = StreamingRecognizer::new(model.clone(), params).keep_inputs(true);
    for (t, f) in rec.frames.iter().enumerate() {
        let out = rec_state.push_prepared(prep.prepare(&f.pressure, &f.q).unwrap());
        let held = model.model_forward(&rec_state.window_input()).unwrap().0;
        for (a, b) in out.logits.iter().zip(&held) {
            assert!((a - b).abs() < 1e-12, "frame {t}");
        }
        if t % 5 == 0 {
            let fresh = model.model_forward(&batch_window(&skin, &rec, t, &params)).unwrap().0;
            for (a, b) in out.logits.iter().zip(&fresh) {
                assert!((a - b).abs() < 1e-12, "frame {t}");
            }
        }
    }
}

#[test]
fn a_poke_fires_one_event_after_the_gap() {
    let skin = common::ur5_skin();
    let rec = recording(&skin, GestureClass::Poke, 2);
    let model = EgnnModel::new(EgnnConfig::default(), 6, skin.hash());
    let params = StreamParams::default();
    let events = predict(&model, &skin, &rec.frames, &params).unwrap();
    assert_eq!(events.len(), 1, "{events:?}");
    let e = events[0];
    let gt = rec.ground_truth[0];
    assert!(e.start_frame.abs_diff(gt.start_frame) <= 2);
    assert!(e.end_frame.abs_diff(gt.end_frame) <= 2);
    assert_eq!(e.emitted_at, e.end_frame + params.gap_min_frames);
    assert!((0.0..=1.0).contains(&e.confidence));
}

#[test]
fn the_pipeline_agrees_with_direct_prediction() {
    let skin = common::ur5_skin();
    let model = EgnnModel::new(EgnnConfig::default(), 7, skin.hash());
    let params = StreamParams::default();
    let mut frames = recording(&skin, GestureClass::Grab, 3).frames;
    frames.extend(recording(&skin, GestureClass::Poke, 4).frames);
    let mut bytes = Vec::new();
    for f in &frames {
        write_frame_message(&mut bytes, &f.pressure, &f.q).unwrap();
    }
    let direct = predict(&model, &skin, &frames, &params).unwrap();
    let mut piped = Vec::new();
    let n = run_pipeline(&model, &skin, &params, bytes.as_slice(), |e| piped.push(*e)).unwrap();
    assert_eq!(n, frames.len());
    assert_eq!(piped, direct);
    assert_eq!(direct.len(), 2);
}

#[test]
fn frames_of_the_wrong_size_are_rejected() {
    let skin = common::ur5_skin();
    let mut prep = FramePreparer::new(skin.clone(), Default::default(), DEFAULT_LENGTH_UNIT);
    let q = tactile_core::skin::JointState::zeros(skin.joint_count());
    assert!(prep.prepare(&[0.0; 10], &q).is_err());
    let mut bytes = Vec::new();
    write_frame_message(&mut bytes, &[0.0; 10], &q).unwrap();
    let model = EgnnModel::new(EgnnConfig::default(), 8, skin.hash());
    assert!(run_pipeline(&model, &skin, &StreamParams::default(), bytes.as_slice(), |_| {}).is_err());
}
