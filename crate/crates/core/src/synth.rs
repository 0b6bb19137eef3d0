//! Synthetic pressure recordings for the four gesture classes.
//!
//! Each taxel sees `A · exp(-d²/2σ²) · envelope(t) · facing`, where `d` is
//! the kinematic distance to the nearest contact centre and `facing` tests
//! whether the taxel normal points at the contact source (the centre lifted
//! `standoff` metres along its own normal). Gaussian sensor noise is added
//! and the result clamped to `[0, 1]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{segment_trace, Segment};
use crate::skin::{geodesic_path, taxel_world_poses, JointState, Skin, TaxelId, TaxelPose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureClass {
    Poke,
    DoublePat,
    Grab,
    Stroke,
}

impl GestureClass {
    pub const COUNT: usize = 4;
    pub const ALL: [GestureClass; 4] = [
        GestureClass::Poke,
        GestureClass::DoublePat,
        GestureClass::Grab,
        GestureClass::Stroke,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            GestureClass::Poke => "poke",
            GestureClass::DoublePat => "double_pat",
            GestureClass::Grab => "grab",
            GestureClass::Stroke => "stroke",
        }
    }
}

impl fmt::Display for GestureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GestureClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown gesture class '{s}'"))
    }
}

/// One sampled frame: normalized pressures and the joint state at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureFrame {
    pub t: f64,
    pub pressure: Vec<f32>,
    pub q: JointState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub frames: Vec<PressureFrame>,
    pub ground_truth: Vec<Segment>,
    pub sample_rate: f64,
}

impl Recording {
    pub fn taxel_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.pressure.len())
    }
}

/// Class-specific gesture parameters. Lengths in meters, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum GestureParams {
    /// One raised-cosine pulse.
    Poke {
        sigma: f64,
        amplitude: f64,
        pulse_width: f64,
    },
    /// Two raised-cosine pulses; `gap` separates the end of the first from
    /// the start of the second.
    DoublePat {
        sigma: f64,
        amplitude: f64,
        pulse_width: f64,
        gap: f64,
    },
    /// Plateau applied at `centers` contact points spread evenly around the
    /// anchor's band.
    Grab {
        sigma: f64,
        amplitude: f64,
        plateau: f64,
        centers: usize,
    },
    /// Plateau while the centre slides `path_length` along the mesh path
    /// from the anchor towards `toward` at constant `speed`.
    Stroke {
        sigma: f64,
        amplitude: f64,
        speed: f64,
        path_length: f64,
        toward: TaxelId,
    },
}

impl GestureParams {
    pub fn class(&self) -> GestureClass {
        match self {
            GestureParams::Poke { .. } => GestureClass::Poke,
            GestureParams::DoublePat { .. } => GestureClass::DoublePat,
            GestureParams::Grab { .. } => GestureClass::Grab,
            GestureParams::Stroke { .. } => GestureClass::Stroke,
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            GestureParams::Poke { sigma, .. }
            | GestureParams::DoublePat { sigma, .. }
            | GestureParams::Grab { sigma, .. }
            | GestureParams::Stroke { sigma, .. } => sigma,
        }
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            GestureParams::Poke { amplitude, .. }
            | GestureParams::DoublePat { amplitude, .. }
            | GestureParams::Grab { amplitude, .. }
            | GestureParams::Stroke { amplitude, .. } => amplitude,
        }
    }

    /// Contact duration including ramps.
    pub fn duration(&self, ramp: f64) -> f64 {
        match *self {
            GestureParams::Poke { pulse_width, .. } => pulse_width,
            GestureParams::DoublePat {
                pulse_width, gap, ..
            } => 2.0 * pulse_width + gap,
            GestureParams::Grab { plateau, .. } => plateau + 2.0 * ramp,
            GestureParams::Stroke {
                speed, path_length, ..
            } => path_length / speed + 2.0 * ramp,
        }
    }

    /// Temporal envelope in `[0, 1]` at gesture-local time `tau`.
    pub fn envelope(&self, tau: f64, ramp: f64) -> f64 {
        match *self {
            GestureParams::Poke { pulse_width, .. } => raised_cosine(tau, pulse_width),
            GestureParams::DoublePat {
                pulse_width, gap, ..
            } => {
                raised_cosine(tau, pulse_width)
                    + raised_cosine(tau - pulse_width - gap, pulse_width)
            }
            GestureParams::Grab { plateau, .. } => plateau_envelope(tau, plateau, ramp),
            GestureParams::Stroke {
                speed, path_length, ..
            } => plateau_envelope(tau, path_length / speed, ramp),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidScript(msg.to_string()));
        let (sigma, amplitude) = (self.sigma(), self.amplitude());
        if !(sigma > 0.0 && sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(0.0..=1.0).contains(&amplitude) {
            return bad("amplitude must lie in [0, 1]");
        }
        match *self {
            GestureParams::Poke { pulse_width, .. } if !(pulse_width > 0.0) => {
                bad("pulse_width must be positive")
            }
            GestureParams::DoublePat {
                pulse_width, gap, ..
            } if !(pulse_width > 0.0 && gap >= 0.0) => {
                bad("pulse_width must be positive and gap non-negative")
            }
            GestureParams::Grab {
                plateau, centers, ..
            } if !(plateau > 0.0 && centers >= 1) => {
                bad("grab needs a positive plateau and at least one centre")
            }
            GestureParams::Stroke {
                speed, path_length, ..
            } if !(speed > 0.0 && path_length > 0.0) => {
                bad("stroke speed and path_length must be positive")
            }
            _ => Ok(()),
        }
    }
}

/// Raised-cosine pulse of width `w` starting at 0, peaking at `w/2`.
pub fn raised_cosine(tau: f64, w: f64) -> f64 {
    if (0.0..=w).contains(&tau) {
        0.5 * (1.0 - (2.0 * PI * tau / w).cos())
    } else {
        0.0
    }
}

/// Raised-cosine ramp up over `ramp`, flat for `plateau`, ramp down.
pub fn plateau_envelope(tau: f64, plateau: f64, ramp: f64) -> f64 {
    if tau < 0.0 || tau > plateau + 2.0 * ramp {
        0.0
    } else if tau < ramp {
        0.5 * (1.0 - (PI * tau / ramp).cos())
    } else if tau <= ramp + plateau {
        1.0
    } else {
        0.5 * (1.0 + (PI * (tau - ramp - plateau) / ramp).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureScript {
    /// Anchor taxel of the (first) contact centre.
    pub contact_center: TaxelId,
    pub params: GestureParams,
    pub start_time: f64,
}

impl GestureScript {
    pub fn class(&self) -> GestureClass {
        self.params.class()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sample_rate: f64,
    pub noise_sigma: f64,
    /// Ground-truth threshold on the noiseless per-frame max pressure.
    pub theta_label: f64,
    /// Ground-truth segments separated by a shorter gap are one gesture.
    pub gap_min: f64,
    /// Idle time appended after the gesture.
    pub tail: f64,
    /// Height of the contact source above the surface, along the normal.
    pub standoff: f64,
    /// Ramp duration of plateau envelopes.
    pub ramp: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: 50.0,
            noise_sigma: 0.01,
            theta_label: 0.05,
            gap_min: 0.4,
            tail: 0.6,
            standoff: 0.025,
            ramp: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Contact {
    point: Vector3<f64>,
    source: Vector3<f64>,
}

impl Contact {
    fn at(pose: &TaxelPose, standoff: f64) -> Self {
        Contact {
            point: pose.position,
            source: pose.position + pose.normal * standoff,
        }
    }
}

/// Where the contact centres are over time.
enum ContactPlan {
    Fixed(Vec<Contact>),
    /// Polyline of (position, normal) with cumulative arc length, traversed
    /// from `start` to `start + travel` seconds.
    Sliding {
        points: Vec<(Vector3<f64>, Vector3<f64>)>,
        arc: Vec<f64>,
        length: f64,
        start: f64,
        travel: f64,
    },
}

impl ContactPlan {
    fn contacts(&self, tau: f64, standoff: f64) -> Vec<Contact> {
        match self {
            ContactPlan::Fixed(c) => c.clone(),
            ContactPlan::Sliding {
                points,
                arc,
                length,
                start,
                travel,
            } => {
                let frac = ((tau - start) / travel).clamp(0.0, 1.0);
                let s = frac * length;
                let seg = arc.partition_point(|&a| a <= s).clamp(1, points.len() - 1);
                let (a, b) = (arc[seg - 1], arc[seg]);
                let u = if b > a { ((s - a) / (b - a)).clamp(0.0, 1.0) } else { 0.0 };
                let (p0, n0) = points[seg - 1];
                let (p1, n1) = points[seg];
                let point = p0 + (p1 - p0) * u;
                let normal = (n0 + (n1 - n0) * u).normalize();
                vec![Contact {
                    point,
                    source: point + normal * standoff,
                }]
            }
        }
    }
}

fn plan_contacts(
    skin: &Skin,
    poses: &[TaxelPose],
    script: &GestureScript,
    cfg: &SynthConfig,
) -> Result<ContactPlan> {
    let anchor = script.contact_center;
    match script.params {
        GestureParams::Poke { .. } | GestureParams::DoublePat { .. } => {
            Ok(ContactPlan::Fixed(vec![Contact::at(&poses[anchor], cfg.standoff)]))
        }
        GestureParams::Grab { centers, .. } => {
            let ring = band_ring(skin, anchor, centers)?;
            Ok(ContactPlan::Fixed(
                ring.iter()
                    .map(|&t| Contact::at(&poses[t], cfg.standoff))
                    .collect(),
            ))
        }
        GestureParams::Stroke {
            speed,
            path_length,
            toward,
            ..
        } => {
            skin.taxel(toward)?;
            let (path, total) = geodesic_path(skin, anchor, toward)?.ok_or_else(|| {
                Error::InvalidScript(format!(
                    "stroke path from taxel {anchor} to {toward} leaves the patch"
                ))
            })?;
            if total + 1e-12 < path_length {
                return Err(Error::InvalidScript(format!(
                    "stroke path of {path_length} m leaves the patch: only {total} m available towards taxel {toward}"
                )));
            }
            let points: Vec<_> = path
                .iter()
                .map(|&t| (poses[t].position, poses[t].normal))
                .collect();
            let mut arc = vec![0.0];
            for w in points.windows(2) {
                arc.push(arc.last().unwrap() + (w[1].0 - w[0].0).norm());
            }
            Ok(ContactPlan::Sliding {
                points,
                arc,
                length: path_length,
                start: cfg.ramp,
                travel: path_length / speed,
            })
        }
    }
}

/// Taxels of the anchor's ring (same band row), `centers` of them spread
/// evenly around the circumference starting at the anchor.
pub fn band_ring(skin: &Skin, anchor: TaxelId, centers: usize) -> Result<Vec<TaxelId>> {
    let patch = skin.patch_of(anchor)?;
    let infeasible = |reason: String| Error::Infeasible {
        class: GestureClass::Grab.to_string(),
        reason,
    };
    let layout = match patch.layout {
        Some(l) if l.wrap => l,
        _ => {
            return Err(infeasible(format!(
                "patch {} is not a circumferential band",
                patch.patch_id
            )))
        }
    };
    if centers > layout.cols {
        return Err(infeasible(format!(
            "{centers} centres exceed the {} columns of patch {}",
            layout.cols, patch.patch_id
        )));
    }
    let local = patch.taxel_ids.iter().position(|&t| t == anchor).unwrap();
    let (row, col) = (local / layout.cols, local % layout.cols);
    Ok((0..centers)
        .map(|k| {
            let c = (col + (k * layout.cols + centers / 2) / centers) % layout.cols;
            patch.taxel_ids[row * layout.cols + c]
        })
        .collect())
}

/// Noiseless pressure of every taxel for the given contacts.
fn pressure_field(
    poses: &[TaxelPose],
    contacts: &[Contact],
    sigma: f64,
    scale: f64,
    out: &mut [f64],
) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (p, pose) in out.iter_mut().zip(poses) {
        let mut best = 0.0f64;
        for c in contacts {
            if pose.normal.dot(&(c.source - pose.position)) > 0.0 {
                let d2 = (c.point - pose.position).norm_squared();
                best = best.max((-d2 * inv).exp());
            }
        }
        *p = scale * best;
    }
}

/// Synthesizes one recording of `script` at the fixed joint state `q`.
pub fn synthesize_gesture(
    skin: &Skin,
    q: &JointState,
    script: &GestureScript,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Recording> {
    script.params.validate()?;
    skin.taxel(script.contact_center)?;
    if !(script.start_time >= 0.0) {
        return Err(Error::InvalidScript("start_time must be non-negative".into()));
    }
    let poses = taxel_world_poses(skin, q)?;
    let plan = plan_contacts(skin, &poses, script, cfg)?;

    let params = &script.params;
    let duration = params.duration(cfg.ramp);
    let n_frames = ((script.start_time + duration + cfg.tail) * cfg.sample_rate).ceil() as usize + 1;
    let n = skin.taxel_count();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (cfg.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, cfg.noise_sigma).expect("finite noise sigma"));

    let mut field = vec![0.0f64; n];
    let mut clean_max = Vec::with_capacity(n_frames);
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 / cfg.sample_rate;
        let tau = t - script.start_time;
        let env = params.envelope(tau, cfg.ramp);
        let scale = params.amplitude() * env;
        if scale > 0.0 {
            let contacts = plan.contacts(tau, cfg.standoff);
            pressure_field(&poses, &contacts, params.sigma(), scale, &mut field);
        } else {
            field.iter_mut().for_each(|v| *v = 0.0);
        }
        clean_max.push(field.iter().copied().fold(0.0, f64::max));
        let pressure = field
            .iter()
            .map(|&p| {
                let noisy = match &noise {
                    Some(d) => p + d.sample(&mut rng),
                    None => p,
                };
                noisy.clamp(0.0, 1.0) as f32
            })
            .collect();
        frames.push(PressureFrame {
            t,
            pressure,
            q: q.clone(),
        });
    }

    let gap_frames = (cfg.gap_min * cfg.sample_rate).round() as usize;
    let ground_truth = segment_trace(&clean_max, cfg.theta_label, gap_frames, 1)
        .into_iter()
        .map(|(start_frame, end_frame)| Segment {
            start_frame,
            end_frame,
            class: Some(script.class()),
        })
        .collect();

    Ok(Recording {
        frames,
        ground_truth,
        sample_rate: cfg.sample_rate,
    })
}

/// Sampling ranges for randomized scripts. Lengths in meters, times in
/// seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub amplitude: (f64, f64),
    pub start_time: (f64, f64),
    pub poke_sigma: (f64, f64),
    pub poke_width: (f64, f64),
    pub pat_sigma: (f64, f64),
    pub pat_width: (f64, f64),
    pub pat_gap: (f64, f64),
    pub grab_sigma: (f64, f64),
    pub grab_plateau: (f64, f64),
    pub grab_centers: (usize, usize),
    pub stroke_sigma: (f64, f64),
    pub stroke_speed: (f64, f64),
    pub stroke_path: (f64, f64),
    /// Upper bound on stroke travel time; slow speeds are raised to fit.
    pub stroke_max_travel: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            amplitude: (0.3, 1.0),
            start_time: (0.6, 1.0),
            poke_sigma: (0.005, 0.012),
            poke_width: (0.2, 0.4),
            pat_sigma: (0.015, 0.030),
            pat_width: (0.15, 0.25),
            pat_gap: (0.1, 0.3),
            grab_sigma: (0.012, 0.025),
            grab_plateau: (0.5, 1.5),
            grab_centers: (3, 6),
            stroke_sigma: (0.008, 0.015),
            stroke_speed: (0.05, 0.2),
            stroke_path: (0.05, 0.15),
            stroke_max_travel: 1.5,
        }
    }
}

/// Uniform per-joint pose sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSampler {
    pub ranges: Vec<(f64, f64)>,
}

impl PoseSampler {
    pub fn new(ranges: Vec<(f64, f64)>) -> Self {
        PoseSampler { ranges }
    }

    /// Joint angles rounded to f32 precision so they survive the on-disk
    /// format unchanged.
    pub fn sample(&self, rng: &mut impl Rng) -> JointState {
        JointState(
            self.ranges
                .iter()
                .map(|&(lo, hi)| uniform(rng, lo, hi) as f32 as f64)
                .collect(),
        )
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

const ANCHOR_ATTEMPTS: usize = 64;

/// Samples a feasible script of `class`.
pub fn sample_script(
    skin: &Skin,
    class: GestureClass,
    ranges: &ParamRanges,
    rng: &mut impl Rng,
) -> Result<GestureScript> {
    let n = skin.taxel_count();
    let amplitude = uniform(rng, ranges.amplitude.0, ranges.amplitude.1);
    let start_time = uniform(rng, ranges.start_time.0, ranges.start_time.1);
    let infeasible = |reason: &str| Error::Infeasible {
        class: class.to_string(),
        reason: reason.to_string(),
    };
    let (contact_center, params) = match class {
        GestureClass::Poke => (
            rng.random_range(0..n),
            GestureParams::Poke {
                sigma: uniform(rng, ranges.poke_sigma.0, ranges.poke_sigma.1),
                amplitude,
                pulse_width: uniform(rng, ranges.poke_width.0, ranges.poke_width.1),
            },
        ),
        GestureClass::DoublePat => (
            rng.random_range(0..n),
            GestureParams::DoublePat {
                sigma: uniform(rng, ranges.pat_sigma.0, ranges.pat_sigma.1),
                amplitude,
                pulse_width: uniform(rng, ranges.pat_width.0, ranges.pat_width.1),
                gap: uniform(rng, ranges.pat_gap.0, ranges.pat_gap.1),
            },
        ),
        GestureClass::Grab => {
            let centers = rng.random_range(ranges.grab_centers.0..=ranges.grab_centers.1);
            let bands: Vec<TaxelId> = skin
                .patches()
                .iter()
                .filter(|p| p.layout.is_some_and(|l| l.wrap && l.cols >= centers))
                .flat_map(|p| p.taxel_ids.iter().copied())
                .collect();
            if bands.is_empty() {
                return Err(infeasible("skin has no circumferential band"));
            }
            (
                bands[rng.random_range(0..bands.len())],
                GestureParams::Grab {
                    sigma: uniform(rng, ranges.grab_sigma.0, ranges.grab_sigma.1),
                    amplitude,
                    plateau: uniform(rng, ranges.grab_plateau.0, ranges.grab_plateau.1),
                    centers,
                },
            )
        }
        GestureClass::Stroke => {
            let path_length = uniform(rng, ranges.stroke_path.0, ranges.stroke_path.1);
            let min_speed = ranges
                .stroke_speed
                .0
                .max(path_length / ranges.stroke_max_travel);
            let speed = uniform(rng, min_speed, ranges.stroke_speed.1.max(min_speed));
            let sigma = uniform(rng, ranges.stroke_sigma.0, ranges.stroke_sigma.1);
            let mut found = None;
            for _ in 0..ANCHOR_ATTEMPTS {
                let anchor = rng.random_range(0..n);
                let (dist, _) = crate::skin::mesh_dijkstra(skin, anchor, None);
                let targets: Vec<TaxelId> = (0..n)
                    .filter(|&t| dist[t].is_finite() && dist[t] >= path_length)
                    .collect();
                if !targets.is_empty() {
                    found = Some((anchor, targets[rng.random_range(0..targets.len())]));
                    break;
                }
            }
            let (anchor, toward) =
                found.ok_or_else(|| infeasible("no patch offers the requested path length"))?;
            (
                anchor,
                GestureParams::Stroke {
                    sigma,
                    amplitude,
                    speed,
                    path_length,
                    toward,
                },
            )
        }
    };
    Ok(GestureScript {
        contact_center,
        params,
        start_time,
    })
}

/// Class order of a dataset: round-robin over classes until every count is
/// exhausted.
pub fn class_sequence(counts: &[usize; GestureClass::COUNT]) -> Vec<GestureClass> {
    let rounds = counts.iter().copied().max().unwrap_or(0);
    (0..rounds)
        .flat_map(|r| {
            GestureClass::ALL
                .into_iter()
                .filter(move |c| r < counts[c.id()])
        })
        .collect()
}

/// Outcome of one dataset slot.
#[derive(Debug)]
pub struct SynthesizedRecording {
    pub index: usize,
    pub class: GestureClass,
    pub q: JointState,
    pub script: Option<GestureScript>,
    pub result: Result<Recording>,
}

/// One slot of a dataset: seeded by `seed + index` so slots can be
/// generated in any order or in parallel with identical results.
pub fn synthesize_slot(
    skin: &Skin,
    class: GestureClass,
    index: usize,
    sampler: &PoseSampler,
    seed: u64,
    cfg: &SynthConfig,
    ranges: &ParamRanges,
) -> SynthesizedRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let q = sampler.sample(&mut rng);
    let script = sample_script(skin, class, ranges, &mut rng);
    let noise_seed: u64 = rng.random();
    match script {
        Ok(script) => SynthesizedRecording {
            index,
            class,
            result: synthesize_gesture(skin, &q, &script, noise_seed, cfg),
            q,
            script: Some(script),
        },
        Err(e) => SynthesizedRecording {
            index,
            class,
            q,
            script: None,
            result: Err(e),
        },
    }
}

/// Synthesizes `counts[c]` recordings of every class `c`. Failed slots
/// carry their error; generation continues past them.
pub fn synthesize_dataset(
    skin: &Skin,
    counts: &[usize; GestureClass::COUNT],
    sampler: &PoseSampler,
    seed: u64,
    cfg: &SynthConfig,
    ranges: &ParamRanges,
) -> Vec<SynthesizedRecording> {
    class_sequence(counts)
        .into_par_iter()
        .enumerate()
        .map(|(index, class)| synthesize_slot(skin, class, index, sampler, seed, cfg, ranges))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skin::presets;

    fn grid_skin() -> Skin {
        Skin::new(presets::flat_grid(9, 9, 0.01)).unwrap()
    }

    fn quiet() -> SynthConfig {
        SynthConfig {
            noise_sigma: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_amplitude_is_silent() {
        let skin = grid_skin();
        let script = GestureScript {
            contact_center: 40,
            params: GestureParams::Poke {
                sigma: 0.01,
                amplitude: 0.0,
                pulse_width: 0.3,
            },
            start_time: 0.2,
        };
        let rec = synthesize_gesture(&skin, &JointState::zeros(1), &script, 1, &quiet()).unwrap();
        assert!(rec.frames.iter().all(|f| f.pressure.iter().all(|&p| p == 0.0)));
        assert!(rec.ground_truth.is_empty());
    }

    #[test]
    fn delta_footprint_touches_only_the_anchor() {
        let skin = grid_skin();
        let script = GestureScript {
            contact_center: 40,
            params: GestureParams::Poke {
                sigma: 1e-9,
                amplitude: 1.0,
                pulse_width: 0.3,
            },
            start_time: 0.2,
        };
        let rec = synthesize_gesture(&skin, &JointState::zeros(1), &script, 1, &quiet()).unwrap();
        let touched: std::collections::BTreeSet<usize> = rec
            .frames
            .iter()
            .flat_map(|f| f.pressure.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, _)| i))
            .collect();
        assert_eq!(touched.into_iter().collect::<Vec<_>>(), vec![40]);
    }

    #[test]
    fn grab_ring_spreads_evenly() {
        let skin = Skin::new(presets::ur5_like()).unwrap();
        let patch = &skin.patches()[1];
        let anchor = patch.taxel_ids[3];
        let ring = band_ring(&skin, anchor, 4).unwrap();
        assert_eq!(ring.len(), 4);
        assert_eq!(ring[0], anchor);
        let cols: Vec<usize> = ring.iter().map(|t| (t - patch.taxel_ids[0]) % 28).collect();
        assert_eq!(cols, vec![3, 10, 17, 24]);
    }

    #[test]
    fn grab_on_flat_patch_is_infeasible() {
        let err = band_ring(&grid_skin(), 0, 3).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
    }

    #[test]
    fn stroke_off_patch_is_rejected() {
        let skin = Skin::new(presets::fold_demo()).unwrap();
        let script = GestureScript {
            contact_center: 0,
            params: GestureParams::Stroke {
                sigma: 0.01,
                amplitude: 0.5,
                speed: 0.1,
                path_length: 0.05,
                toward: 100,
            },
            start_time: 0.1,
        };
        let err = synthesize_gesture(&skin, &presets::fold_pose(0.0), &script, 0, &quiet());
        assert!(matches!(err, Err(Error::InvalidScript(_))));
        let too_long = GestureScript {
            params: GestureParams::Stroke {
                sigma: 0.01,
                amplitude: 0.5,
                speed: 0.1,
                path_length: 0.5,
                toward: 63,
            },
            ..script
        };
        assert!(synthesize_gesture(&skin, &presets::fold_pose(0.0), &too_long, 0, &quiet()).is_err());
    }

    #[test]
    fn unknown_anchor_is_rejected() {
        let script = GestureScript {
            contact_center: 10_000,
            params: GestureParams::Poke {
                sigma: 0.01,
                amplitude: 0.5,
                pulse_width: 0.3,
            },
            start_time: 0.0,
        };
        let err = synthesize_gesture(&grid_skin(), &JointState::zeros(1), &script, 0, &quiet());
        assert!(matches!(err, Err(Error::UnknownTaxel(10_000))));
    }

    #[test]
    fn class_sequence_interleaves() {
        use GestureClass::*;
        assert_eq!(
            class_sequence(&[2, 1, 0, 1]),
            vec![Poke, DoublePat, Stroke, Poke]
        );
        assert!(class_sequence(&[0; 4]).is_empty());
    }

    #[test]
    fn envelopes_are_bounded() {
        for i in 0..200 {
            let tau = i as f64 * 0.01 - 0.2;
            let e = plateau_envelope(tau, 0.5, 0.05);
            assert!((0.0..=1.0).contains(&e));
            assert!((0.0..=1.0).contains(&raised_cosine(tau, 0.3)));
        }
        assert_eq!(raised_cosine(0.15, 0.3), 1.0);
    }
}
