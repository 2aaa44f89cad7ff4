//! Deterministic generator of multi-subject 30 Hz motion recordings for the
//! nine gesture classes.
//!
//! Each frame carries three tracked devices (HMD, left thigh tracker, right
//! thigh tracker) with 12 features per device: position, linear velocity,
//! rotation and angular velocity. The coordinate frame is y-up: `position[1]`
//! is height, `rotation[i]` is the Euler angle about axis `i` in degrees (so
//! `rotation[1]` is yaw/heading), wrapped to [-180, 180). Velocity channels
//! are the exact discrete derivative of the position channels at 30 Hz;
//! angular velocity is the discrete derivative of the unwrapped rotation.
//!
//! Subjects differ in height, movement amplitude, stepping frequency, phase
//! wobble, sensor noise and step length, which is what creates the
//! inter-person domain gap the adaptation stage has to bridge.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gesture::Gesture;
use crate::seeds::stream_rng;

pub const N_DEVICES: usize = 3;
pub const FEATURES_PER_DEVICE: usize = 12;
pub const FRAME_FEATURES: usize = N_DEVICES * FEATURES_PER_DEVICE;
pub const SAMPLE_RATE_HZ: f64 = 30.0;

/// Per-subject movement characteristics. Two different seeds give two
/// different profiles, which is what stands in for inter-person variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    /// Standing HMD height in meters; always within [1.4, 2.0].
    pub standing_head_height: f64,
    /// Multiplies all gesture amplitudes; within [0.5, 1.5].
    pub amplitude_scale: f64,
    /// Preferred stepping frequency in Hz; within [1.5, 2.2].
    pub frequency_pref: f64,
    /// Magnitude of slow phase wobble in radians.
    pub phase_jitter: f64,
    /// Sensor noise sigma in meters (clipped at 3 sigma when applied).
    pub noise_sigma: f64,
    /// Horizontal travel of a real step forward/backward in meters.
    pub step_length: f64,
}

impl SubjectProfile {
    /// Jogging frequency derived from the walking preference, mapped into
    /// [2.4, 3.2] Hz.
    pub fn jog_frequency(&self) -> f64 {
        2.4 + (self.frequency_pref - 1.5) / 0.7 * 0.8
    }

    /// Squat depth in meters, within [0.3, 0.5].
    pub fn squat_depth(&self) -> f64 {
        0.3 + 0.2 * ((self.amplitude_scale - 0.5).clamp(0.0, 1.0))
    }

    /// Jump apex height in meters, within [0.15, 0.35].
    pub fn jump_apex(&self) -> f64 {
        0.15 + 0.2 * ((self.amplitude_scale - 0.5).clamp(0.0, 1.0))
    }
}

/// One 30 Hz sample from one tracked device.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeviceSample {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub rotation: [f64; 3],
    pub angular_velocity: [f64; 3],
}

impl DeviceSample {
    pub fn features(&self) -> [f64; FEATURES_PER_DEVICE] {
        let mut f = [0.0; FEATURES_PER_DEVICE];
        f[0..3].copy_from_slice(&self.position);
        f[3..6].copy_from_slice(&self.velocity);
        f[6..9].copy_from_slice(&self.rotation);
        f[9..12].copy_from_slice(&self.angular_velocity);
        f
    }

    pub fn from_features(f: &[f64]) -> Self {
        DeviceSample {
            position: [f[0], f[1], f[2]],
            velocity: [f[3], f[4], f[5]],
            rotation: [f[6], f[7], f[8]],
            angular_velocity: [f[9], f[10], f[11]],
        }
    }
}

/// One 30 Hz sample from all three devices: HMD, left tracker, right tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub devices: [DeviceSample; N_DEVICES],
}

impl Frame {
    /// All 36 features, device-major: HMD, left tracker, right tracker.
    pub fn features(&self) -> [f64; FRAME_FEATURES] {
        let mut out = [0.0; FRAME_FEATURES];
        for (d, dev) in self.devices.iter().enumerate() {
            out[d * FEATURES_PER_DEVICE..(d + 1) * FEATURES_PER_DEVICE]
                .copy_from_slice(&dev.features());
        }
        out
    }

    pub fn hmd_height(&self) -> f64 {
        self.devices[0].position[1]
    }

    /// Yaw (heading) of the two thigh trackers in degrees.
    pub fn tracker_yaws(&self) -> (f64, f64) {
        (self.devices[1].rotation[1], self.devices[2].rotation[1])
    }
}

/// Ordered gesture segments with positive durations in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureScript {
    pub segments: Vec<(Gesture, f64)>,
}

impl GestureScript {
    pub fn new(segments: Vec<(Gesture, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::EmptyInput("gesture script"));
        }
        for (g, d) in &segments {
            if !d.is_finite() || *d <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "segment {g} has non-positive duration {d}"
                )));
            }
        }
        Ok(GestureScript { segments })
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|(_, d)| d).sum()
    }

    /// Default 24-second session covering all nine gestures, with durations
    /// proportioned so that the per-class window counts are imbalanced the
    /// same way as in real sessions: standing by far the most frequent,
    /// keeping-squatting the rarest.
    pub fn default_session() -> Self {
        GestureScript::new(vec![
            (Gesture::Standing, 7.6),
            (Gesture::Walking, 4.4),
            (Gesture::Jogging, 4.0),
            (Gesture::Jumping, 2.9),
            (Gesture::SquatDown, 41.0 / 30.0),
            (Gesture::SquatKeep, 0.6),
            (Gesture::SquatUp, 1.2),
            (Gesture::StepForward, 31.0 / 30.0),
            (Gesture::StepBackward, 0.9),
        ])
        .expect("default script is valid")
    }
}

/// A generated session: the subject profile plus every frame with its
/// ground-truth gesture.
#[derive(Debug, Clone)]
pub struct SubjectRecording {
    pub profile: SubjectProfile,
    pub frames: Vec<(Frame, Gesture)>,
}

/// Deterministically draws a subject profile from a seed.
pub fn sample_subject(seed: u64) -> SubjectProfile {
    let mut rng = stream_rng(seed, 0x50b);
    SubjectProfile {
        subject_id: format!("subj-{seed}"),
        standing_head_height: rng.random_range(1.5..1.9),
        amplitude_scale: rng.random_range(0.6..1.4),
        frequency_pref: rng.random_range(1.5..2.2),
        phase_jitter: rng.random_range(0.1..0.5),
        noise_sigma: rng.random_range(0.001..0.004),
        step_length: rng.random_range(0.4..0.8),
    }
}

/// Generates one labeled recording for a subject following a script.
///
/// The frame count is `round(total_duration * 30)`. Velocity and angular
/// velocity are filled in as exact discrete derivatives after the position
/// and rotation trajectories are laid down.
pub fn generate_recording(
    profile: &SubjectProfile,
    script: &GestureScript,
    seed: u64,
) -> Result<Vec<(Frame, Gesture)>> {
    if script.segments.is_empty() {
        return Err(Error::EmptyInput("gesture script"));
    }
    let n_frames = (script.total_duration() * SAMPLE_RATE_HZ).round() as usize;
    if n_frames == 0 {
        return Err(Error::InvalidArgument("script too short".into()));
    }

    let mut rng = stream_rng(seed, 0x7ec);
    let mut traj = Trajectory::new(n_frames, profile);

    // Slow global yaw drift shared by all devices, plus tiny per-device offsets.
    let drift_amp = rng.random_range(4.0..9.0);
    let drift_freq = rng.random_range(0.04..0.10);
    let drift_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let device_yaw_offset = [0.0, rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    for t in 0..n_frames {
        let secs = t as f64 / SAMPLE_RATE_HZ;
        let yaw = drift_amp * (std::f64::consts::TAU * drift_freq * secs + drift_phase).sin();
        for d in 0..N_DEVICES {
            traj.rot[d][t][1] = yaw + device_yaw_offset[d];
        }
    }

    // Segment boundaries in frames, by cumulative duration.
    let mut labels = vec![Gesture::Standing; n_frames];
    let mut cursor = 0.0;
    for (gesture, duration) in &script.segments {
        let start = (cursor * SAMPLE_RATE_HZ).round() as usize;
        cursor += duration;
        let end = ((cursor * SAMPLE_RATE_HZ).round() as usize).min(n_frames);
        if start >= end {
            continue;
        }
        labels[start..end].fill(*gesture);
        write_segment(&mut traj, profile, *gesture, start, end, &mut rng);
    }

    // Sensor noise on every position channel, clipped at 3 sigma so the
    // standing template stays within its documented band.
    let noise = Normal::new(0.0, profile.noise_sigma).unwrap();
    let rot_noise = Normal::<f64>::new(0.0, 0.15).unwrap();
    for t in 0..n_frames {
        for d in 0..N_DEVICES {
            for a in 0..3 {
                let clip = 3.0 * profile.noise_sigma;
                traj.pos[d][t][a] += noise.sample(&mut rng).clamp(-clip, clip);
                traj.rot[d][t][a] += rot_noise.sample(&mut rng).clamp(-0.45, 0.45);
            }
        }
    }

    Ok(traj.into_frames(labels))
}

/// Generates one recording per subject. Leave-one-subject-out evaluation
/// needs at least two subjects.
pub fn generate_dataset(
    n_subjects: usize,
    script: &GestureScript,
    seed: u64,
) -> Result<Vec<SubjectRecording>> {
    if n_subjects < 2 {
        return Err(Error::TooFewSubjects {
            need: 2,
            got: n_subjects,
        });
    }
    let mut out = Vec::with_capacity(n_subjects);
    for i in 0..n_subjects {
        let mut profile = sample_subject(crate::seeds::derive_seed(seed, i as u64));
        profile.subject_id = format!("S{}", i + 1);
        let frames = generate_recording(
            &profile,
            script,
            crate::seeds::derive_seed(seed, 0x1000 + i as u64),
        )?;
        out.push(SubjectRecording { profile, frames });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Trajectory assembly
// ---------------------------------------------------------------------------

struct Trajectory {
    n: usize,
    /// Per device: position series.
    pos: [Vec<[f64; 3]>; N_DEVICES],
    /// Per device: unwrapped rotation series in degrees.
    rot: [Vec<[f64; 3]>; N_DEVICES],
    /// Persistent horizontal origin, advanced by real steps.
    origin_x: f64,
}

impl Trajectory {
    fn new(n: usize, profile: &SubjectProfile) -> Self {
        let base = base_positions(profile);
        let mk = |d: usize| vec![base[d]; n];
        Trajectory {
            n,
            pos: [mk(0), mk(1), mk(2)],
            rot: [vec![[0.0; 3]; n], vec![[0.0; 3]; n], vec![[0.0; 3]; n]],
            origin_x: 0.0,
        }
    }

    fn into_frames(self, labels: Vec<Gesture>) -> Vec<(Frame, Gesture)> {
        let dt = 1.0 / SAMPLE_RATE_HZ;
        let mut frames = Vec::with_capacity(self.n);
        for t in 0..self.n {
            let mut devices = [DeviceSample::default(); N_DEVICES];
            for d in 0..N_DEVICES {
                let p = self.pos[d][t];
                let r = self.rot[d][t];
                let prev = if t == 0 { 1 } else { t };
                let v = [
                    (self.pos[d][prev][0] - self.pos[d][prev - 1][0]) / dt,
                    (self.pos[d][prev][1] - self.pos[d][prev - 1][1]) / dt,
                    (self.pos[d][prev][2] - self.pos[d][prev - 1][2]) / dt,
                ];
                let w = [
                    (self.rot[d][prev][0] - self.rot[d][prev - 1][0]) / dt,
                    (self.rot[d][prev][1] - self.rot[d][prev - 1][1]) / dt,
                    (self.rot[d][prev][2] - self.rot[d][prev - 1][2]) / dt,
                ];
                devices[d] = DeviceSample {
                    position: p,
                    velocity: v,
                    rotation: [wrap_angle(r[0]), wrap_angle(r[1]), wrap_angle(r[2])],
                    angular_velocity: w,
                };
            }
            frames.push((
                Frame {
                    timestamp: t as f64 * dt,
                    devices,
                },
                labels[t],
            ));
        }
        frames
    }
}

const HMD: usize = 0;
const LEFT: usize = 1;
const RIGHT: usize = 2;

fn base_positions(profile: &SubjectProfile) -> [[f64; 3]; N_DEVICES] {
    let h = profile.standing_head_height;
    [
        [0.0, h, 0.0],
        [-0.12, 0.45 * h, 0.02],
        [0.12, 0.45 * h, 0.02],
    ]
}

fn wrap_angle(deg: f64) -> f64 {
    let mut a = (deg + 180.0).rem_euclid(360.0) - 180.0;
    if a >= 180.0 {
        a = -180.0;
    }
    a
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn write_segment(
    traj: &mut Trajectory,
    profile: &SubjectProfile,
    gesture: Gesture,
    start: usize,
    end: usize,
    rng: &mut impl Rng,
) {
    let base = base_positions(profile);
    let origin = traj.origin_x;
    let dur = (end - start) as f64 / SAMPLE_RATE_HZ;
    let phase0 = rng.random_range(0.0..std::f64::consts::TAU);
    let wobble_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = profile.amplitude_scale;

    // Local phase with slow wobble so stepping frequency is not perfectly
    // constant within a segment.
    let phase = |f: f64, tau: f64| {
        std::f64::consts::TAU * f * tau
            + phase0
            + profile.phase_jitter * (std::f64::consts::TAU * 0.3 * tau + wobble_phase).sin()
    };

    for t in start..end {
        let tau = (t - start) as f64 / SAMPLE_RATE_HZ;
        for d in 0..N_DEVICES {
            traj.pos[d][t] = base[d];
            traj.pos[d][t][0] += origin;
        }

        match gesture {
            Gesture::Standing => {
                // Noise-only drift; the shared noise pass does the rest.
            }
            Gesture::Walking | Gesture::Jogging => {
                let (f, bob, pitch_amp, lift) = if gesture == Gesture::Walking {
                    (profile.frequency_pref, 0.02 * amp, 16.0 * amp, 0.045 * amp)
                } else {
                    (profile.jog_frequency(), 0.04 * amp, 30.0 * amp, 0.09 * amp)
                };
                let th = phase(f, tau);
                traj.pos[HMD][t][1] += bob * th.sin();
                traj.pos[HMD][t][2] += 0.008 * amp * (th / 2.0).sin();
                let raise_l = th.sin().max(0.0);
                let raise_r = (th + std::f64::consts::PI).sin().max(0.0);
                traj.pos[LEFT][t][1] += lift * raise_l * raise_l;
                traj.pos[RIGHT][t][1] += lift * raise_r * raise_r;
                traj.pos[LEFT][t][0] += 0.5 * lift * raise_l;
                traj.pos[RIGHT][t][0] += 0.5 * lift * raise_r;
                traj.rot[LEFT][t][0] += pitch_amp * th.sin();
                traj.rot[RIGHT][t][0] += pitch_amp * (th + std::f64::consts::PI).sin();
            }
            Gesture::Jumping => {
                let (dy, tuck) = jump_offsets(profile, tau);
                for d in 0..N_DEVICES {
                    traj.pos[d][t][1] += dy;
                }
                traj.pos[LEFT][t][1] += tuck * 0.12;
                traj.pos[RIGHT][t][1] += tuck * 0.12;
                traj.rot[LEFT][t][0] += tuck * 35.0;
                traj.rot[RIGHT][t][0] += tuck * 35.0;
            }
            Gesture::SquatDown | Gesture::SquatKeep | Gesture::SquatUp => {
                let depth = profile.squat_depth();
                let s = match gesture {
                    Gesture::SquatDown => smoothstep(tau / dur),
                    Gesture::SquatKeep => 1.0,
                    _ => 1.0 - smoothstep(tau / dur),
                };
                traj.pos[HMD][t][1] -= depth * s;
                traj.pos[LEFT][t][1] -= 0.55 * depth * s;
                traj.pos[RIGHT][t][1] -= 0.55 * depth * s;
                traj.pos[LEFT][t][0] += 0.10 * s;
                traj.pos[RIGHT][t][0] += 0.10 * s;
                traj.rot[LEFT][t][0] += 65.0 * s;
                traj.rot[RIGHT][t][0] += 65.0 * s;
            }
            Gesture::StepForward | Gesture::StepBackward => {
                let sign = if gesture == Gesture::StepForward {
                    1.0
                } else {
                    -1.0
                };
                let travel = sign * profile.step_length;
                let s = smoothstep(tau / dur);
                let swing = (std::f64::consts::PI * s).sin();
                for d in 0..N_DEVICES {
                    traj.pos[d][t][0] += travel * s;
                }
                traj.pos[HMD][t][1] += 0.01 * amp * swing;
                // Leading leg swings through the step.
                traj.pos[LEFT][t][1] += 0.05 * amp * swing;
                traj.rot[LEFT][t][0] += sign * 20.0 * swing;
            }
        }
    }

    if gesture == Gesture::StepForward {
        traj.origin_x += profile.step_length;
    } else if gesture == Gesture::StepBackward {
        traj.origin_x -= profile.step_length;
    }
}

/// Vertical body offset and leg-tuck fraction over a repeating jump cycle.
fn jump_offsets(profile: &SubjectProfile, tau: f64) -> (f64, f64) {
    let period = 1.15;
    let apex = profile.jump_apex();
    let t = tau.rem_euclid(period);
    let crouch_end = 0.28 * period;
    let flight_end = crouch_end + 0.40 * period;
    let recover_end = flight_end + 0.22 * period;
    if t < crouch_end {
        let s = t / crouch_end;
        (-0.09 * (std::f64::consts::PI * s).sin(), 0.0)
    } else if t < flight_end {
        let s = (t - crouch_end) / (flight_end - crouch_end);
        (4.0 * apex * s * (1.0 - s), (std::f64::consts::PI * s).sin())
    } else if t < recover_end {
        let s = (t - flight_end) / (recover_end - flight_end);
        (-0.06 * (std::f64::consts::PI * s).sin(), 0.0)
    } else {
        (0.0, 0.0)
    }
}

// ---------------------------------------------------------------------------
// Recording files
// ---------------------------------------------------------------------------

const CHANNEL_NAMES: [&str; FEATURES_PER_DEVICE] = [
    "px", "py", "pz", "vx", "vy", "vz", "rx", "ry", "rz", "wx", "wy", "wz",
];
const DEVICE_NAMES: [&str; N_DEVICES] = ["hmd", "left", "right"];

/// Column names for the 36 feature columns of a recording file.
pub fn feature_column_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FRAME_FEATURES);
    for dev in DEVICE_NAMES {
        for ch in CHANNEL_NAMES {
            names.push(format!("{dev}_{ch}"));
        }
    }
    names
}

/// Writes a recording: a `#` profile line, a column header, then one row per
/// frame with timestamp, 36 features and the label.
pub fn write_recording(path: &Path, recording: &SubjectRecording) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let p = &recording.profile;
    writeln!(
        w,
        "# subject_id={} standing_head_height={:.12e} amplitude_scale={:.12e} frequency_pref={:.12e} phase_jitter={:.12e} noise_sigma={:.12e} step_length={:.12e}",
        p.subject_id,
        p.standing_head_height,
        p.amplitude_scale,
        p.frequency_pref,
        p.phase_jitter,
        p.noise_sigma,
        p.step_length
    )?;
    writeln!(w, "timestamp,{},label", feature_column_names().join(","))?;
    let mut line = String::new();
    for (frame, label) in &recording.frames {
        line.clear();
        write!(line, "{:.12e}", frame.timestamp).unwrap();
        for v in frame.features() {
            write!(line, ",{v:.12e}").unwrap();
        }
        writeln!(w, "{line},{label}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a recording file written by [`write_recording`].
pub fn read_recording(path: &Path) -> Result<SubjectRecording> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let profile_line = lines
        .next()
        .ok_or(Error::EmptyInput("recording file"))??;
    let profile = parse_profile_line(&profile_line)?;

    // Column header.
    lines.next().ok_or(Error::EmptyInput("recording file"))??;

    let mut frames = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let timestamp: f64 = parse_field(parts.next(), "timestamp")?;
        let mut features = [0.0; FRAME_FEATURES];
        for (i, slot) in features.iter_mut().enumerate() {
            *slot = parse_field(parts.next(), CHANNEL_NAMES[i % FEATURES_PER_DEVICE])?;
        }
        let label: Gesture = parts
            .next()
            .ok_or_else(|| Error::InvalidArgument("missing label column".into()))?
            .parse()?;
        let mut devices = [DeviceSample::default(); N_DEVICES];
        for d in 0..N_DEVICES {
            devices[d] = DeviceSample::from_features(
                &features[d * FEATURES_PER_DEVICE..(d + 1) * FEATURES_PER_DEVICE],
            );
        }
        frames.push((Frame { timestamp, devices }, label));
    }
    Ok(SubjectRecording { profile, frames })
}

fn parse_field(field: Option<&str>, name: &str) -> Result<f64> {
    field
        .ok_or_else(|| Error::InvalidArgument(format!("missing column {name}")))?
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("bad float in column {name}: {e}")))
}

fn parse_profile_line(line: &str) -> Result<SubjectProfile> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::InvalidArgument("missing profile header line".into()))?;
    let mut profile = SubjectProfile {
        subject_id: String::new(),
        standing_head_height: 0.0,
        amplitude_scale: 0.0,
        frequency_pref: 0.0,
        phase_jitter: 0.0,
        noise_sigma: 0.0,
        step_length: 0.0,
    };
    for pair in body.split_whitespace() {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("bad profile field {pair:?}")))?;
        match key {
            "subject_id" => profile.subject_id = value.to_string(),
            "standing_head_height" => profile.standing_head_height = value.parse().unwrap_or(0.0),
            "amplitude_scale" => profile.amplitude_scale = value.parse().unwrap_or(0.0),
            "frequency_pref" => profile.frequency_pref = value.parse().unwrap_or(0.0),
            "phase_jitter" => profile.phase_jitter = value.parse().unwrap_or(0.0),
            "noise_sigma" => profile.noise_sigma = value.parse().unwrap_or(0.0),
            "step_length" => profile.step_length = value.parse().unwrap_or(0.0),
            _ => {}
        }
    }
    if profile.subject_id.is_empty() {
        return Err(Error::InvalidArgument("profile line lacks subject_id".into()));
    }
    Ok(profile)
}
