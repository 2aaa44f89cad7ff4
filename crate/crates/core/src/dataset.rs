//! Turns frame streams into labeled point-cloud samples.
//!
//! A sample is a window of `window_frames` consecutive frames; each frame
//! contributes one point per device, so the default 6-frame window yields an
//! 18-point cloud with 12 features per point. Windows are labeled by majority
//! vote over their frames, jittered/rotated/shifted/scaled for augmentation,
//! min-max normalized into [0, 1] with statistics computed on source-domain
//! training data only, and split into source / target-train / target-test
//! sets under leave-one-subject-out.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gesture::Gesture;
use crate::seeds::{derive_seed, stream_rng};
use crate::synthgen::{Frame, SubjectRecording, FEATURES_PER_DEVICE, N_DEVICES, SAMPLE_RATE_HZ};

/// Sliding-window geometry. Defaults: 6-frame windows (180 ms at 30 Hz)
/// advancing 3 frames (90 ms) at a time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_frames: usize,
    pub step_frames: usize,
    pub sample_rate: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_frames: 6,
            step_frames: 3,
            sample_rate: SAMPLE_RATE_HZ,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_frames == 0 {
            return Err(Error::InvalidArgument("window_frames must be >= 1".into()));
        }
        if self.step_frames == 0 || self.step_frames > self.window_frames {
            return Err(Error::InvalidArgument(format!(
                "step_frames must be in [1, window_frames], got {}",
                self.step_frames
            )));
        }
        if self.sample_rate <= 0.0 {
            return Err(Error::InvalidArgument("sample_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.window_frames * N_DEVICES
    }

    /// Advertised window duration for latency budgets. The accounting books
    /// one frame at the default 30 Hz as a nominal 30 ms, so the default
    /// 6-frame window budgets as 180 ms and a 3-frame window as 90 ms.
    pub fn window_duration_ms(&self) -> f64 {
        const NOMINAL_FRAME_MS: f64 = 30.0;
        self.window_frames as f64 * NOMINAL_FRAME_MS * (SAMPLE_RATE_HZ / self.sample_rate)
    }
}

/// One classification unit: `window_frames * 3` points with 12 features each.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudSample {
    pub points: Array2<f64>,
    pub label: Gesture,
    pub subject_id: String,
    /// Index of the first recording frame covered by this window.
    pub start_frame: usize,
}

/// A sample whose label has been withheld (target-domain training data).
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSample {
    pub points: Array2<f64>,
    pub subject_id: String,
    pub start_frame: usize,
}

impl PointCloudSample {
    fn into_unlabeled(self) -> UnlabeledSample {
        UnlabeledSample {
            points: self.points,
            subject_id: self.subject_id,
            start_frame: self.start_frame,
        }
    }
}

/// Per-channel min/max over the source training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub channel_names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    pub fn ranges(&self) -> Vec<f64> {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| hi - lo)
            .collect()
    }
}

/// Augmentation magnitudes. The jitter sigma/clip are expressed in
/// normalized units and get scaled by the per-channel range of the data the
/// augmentation is applied to; the geometric operations work in raw units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub max_yaw_deg: f64,
    pub shift_range_m: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
            max_yaw_deg: 15.0,
            shift_range_m: 0.1,
            scale_min: 0.8,
            scale_max: 1.25,
        }
    }
}

impl AugmentConfig {
    /// All magnitudes zero / neutral; `augment` becomes the identity.
    pub fn identity() -> Self {
        AugmentConfig {
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            max_yaw_deg: 0.0,
            shift_range_m: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
        }
    }
}

/// Leave-one-subject-out split: labeled source from every other subject,
/// unlabeled target-train and labeled target-test from the held-out subject.
#[derive(Debug, Clone)]
pub struct DomainSplit {
    pub source: Vec<PointCloudSample>,
    pub target_train: Vec<UnlabeledSample>,
    pub target_test: Vec<PointCloudSample>,
    pub target_subject: String,
}

// ---------------------------------------------------------------------------
// Segmentation and labeling
// ---------------------------------------------------------------------------

/// Slides a window over the recording. Sample `i` covers frames
/// `[i*step, i*step + window)`; the count is `floor((len - window) / step) + 1`.
pub fn segment_windows(
    recording: &[(Frame, Gesture)],
    config: &WindowConfig,
) -> Result<Vec<PointCloudSample>> {
    config.validate()?;
    let w = config.window_frames;
    if recording.len() < w {
        return Err(Error::RecordingTooShort {
            got: recording.len(),
            need: w,
        });
    }
    let n = (recording.len() - w) / config.step_frames + 1;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let start = i * config.step_frames;
        let frames = &recording[start..start + w];
        let labels: Vec<Gesture> = frames.iter().map(|(_, l)| *l).collect();
        let label = majority_label(&labels)?;
        let mut points = Array2::zeros((w * N_DEVICES, FEATURES_PER_DEVICE));
        for (fi, (frame, _)) in frames.iter().enumerate() {
            for (di, dev) in frame.devices.iter().enumerate() {
                let row = fi * N_DEVICES + di;
                for (ci, v) in dev.features().iter().enumerate() {
                    points[[row, ci]] = *v;
                }
            }
        }
        samples.push(PointCloudSample {
            points,
            label,
            subject_id: String::new(),
            start_frame: start,
        });
    }
    Ok(samples)
}

/// Segments a subject recording and stamps each sample with the subject id.
pub fn segment_recording(
    recording: &SubjectRecording,
    config: &WindowConfig,
) -> Result<Vec<PointCloudSample>> {
    let mut samples = segment_windows(&recording.frames, config)?;
    for s in &mut samples {
        s.subject_id = recording.profile.subject_id.clone();
    }
    Ok(samples)
}

/// The label that appears most often in the window. Ties go to whichever
/// tied label occurs latest in the window.
pub fn majority_label(window_labels: &[Gesture]) -> Result<Gesture> {
    if window_labels.is_empty() {
        return Err(Error::EmptyInput("window labels"));
    }
    let mut counts = [0usize; crate::gesture::N_CLASSES];
    let mut last_seen = [0usize; crate::gesture::N_CLASSES];
    for (i, g) in window_labels.iter().enumerate() {
        counts[g.index()] += 1;
        last_seen[g.index()] = i;
    }
    let best = (0..counts.len())
        .filter(|&c| counts[c] > 0)
        .max_by_key(|&c| (counts[c], last_seen[c]))
        .unwrap();
    Ok(Gesture::from_index(best).unwrap())
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-channel min/max over all points of the given samples.
pub fn compute_norm_stats<'a, I>(samples: I) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a Array2<f64>>,
{
    let mut min = vec![f64::INFINITY; FEATURES_PER_DEVICE];
    let mut max = vec![f64::NEG_INFINITY; FEATURES_PER_DEVICE];
    let mut any = false;
    for points in samples {
        any = true;
        for row in points.axis_iter(Axis(0)) {
            for (c, v) in row.iter().enumerate() {
                min[c] = min[c].min(*v);
                max[c] = max[c].max(*v);
            }
        }
    }
    if !any {
        return Err(Error::EmptyInput("samples for normalization stats"));
    }
    Ok(NormalizationStats {
        channel_names: channel_names(),
        min,
        max,
    })
}

fn channel_names() -> Vec<String> {
    ["px", "py", "pz", "vx", "vy", "vz", "rx", "ry", "rz", "wx", "wy", "wz"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Min-max normalizes every entry into [0, 1], clamping values outside the
/// stats range (target-domain drift). A degenerate channel maps to 0.5.
pub fn normalize_points(points: &Array2<f64>, stats: &NormalizationStats) -> Array2<f64> {
    let mut out = points.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for (c, v) in row.iter_mut().enumerate() {
            let range = stats.max[c] - stats.min[c];
            *v = if range == 0.0 {
                0.5
            } else {
                ((*v - stats.min[c]) / range).clamp(0.0, 1.0)
            };
        }
    }
    out
}

/// Inverse of [`normalize_points`] for non-degenerate channels.
pub fn denormalize_points(points: &Array2<f64>, stats: &NormalizationStats) -> Array2<f64> {
    let mut out = points.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for (c, v) in row.iter_mut().enumerate() {
            let range = stats.max[c] - stats.min[c];
            *v = stats.min[c] + *v * range;
        }
    }
    out
}

pub fn normalize(sample: &PointCloudSample, stats: &NormalizationStats) -> PointCloudSample {
    PointCloudSample {
        points: normalize_points(&sample.points, stats),
        label: sample.label,
        subject_id: sample.subject_id.clone(),
        start_frame: sample.start_frame,
    }
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Applies, in order: per-entry Gaussian jitter (sigma scaled by
/// `jitter_scale` per channel, clipped), a random yaw rotation of the
/// position / velocity / angular-velocity vectors (the angle is also added to
/// the yaw rotation channel), a global shift of the position channels, and a
/// global scale of the position and velocity channels.
pub fn augment(
    sample: &PointCloudSample,
    config: &AugmentConfig,
    jitter_scale: &[f64],
    seed: u64,
) -> PointCloudSample {
    let mut rng = stream_rng(seed, 0xa06);
    let mut points = sample.points.clone();

    if config.jitter_sigma > 0.0 {
        let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
        for mut row in points.axis_iter_mut(Axis(0)) {
            for (c, v) in row.iter_mut().enumerate() {
                let scale = jitter_scale.get(c).copied().unwrap_or(1.0);
                let sigma = config.jitter_sigma * scale;
                let clip = config.jitter_clip * scale;
                *v += (normal.sample(&mut rng) * sigma).clamp(-clip, clip);
            }
        }
    }

    let theta_deg = if config.max_yaw_deg > 0.0 {
        rng.random_range(-config.max_yaw_deg..=config.max_yaw_deg)
    } else {
        0.0
    };
    if theta_deg != 0.0 {
        rotate_yaw(&mut points, theta_deg);
    }

    if config.shift_range_m > 0.0 {
        let shift = [
            rng.random_range(-config.shift_range_m..=config.shift_range_m),
            rng.random_range(-config.shift_range_m..=config.shift_range_m),
            rng.random_range(-config.shift_range_m..=config.shift_range_m),
        ];
        for mut row in points.axis_iter_mut(Axis(0)) {
            for a in 0..3 {
                row[a] += shift[a];
            }
        }
    }

    let scale = if config.scale_min == config.scale_max {
        config.scale_min
    } else {
        rng.random_range(config.scale_min..=config.scale_max)
    };
    if scale != 1.0 {
        for mut row in points.axis_iter_mut(Axis(0)) {
            for a in 0..6 {
                row[a] *= scale;
            }
        }
    }

    PointCloudSample {
        points,
        label: sample.label,
        subject_id: sample.subject_id.clone(),
        start_frame: sample.start_frame,
    }
}

/// Right-handed rotation by `theta` degrees about the vertical (y) axis,
/// applied to the position, velocity and angular-velocity vectors; `theta`
/// is added to the yaw rotation channel.
pub fn rotate_yaw(points: &mut Array2<f64>, theta_deg: f64) {
    let theta = theta_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let rot = |x: f64, z: f64| (cos * x + sin * z, -sin * x + cos * z);
    for mut row in points.axis_iter_mut(Axis(0)) {
        let (px, pz) = rot(row[0], row[2]);
        row[0] = px;
        row[2] = pz;
        let (vx, vz) = rot(row[3], row[5]);
        row[3] = vx;
        row[5] = vz;
        let (wx, wz) = rot(row[9], row[11]);
        row[9] = wx;
        row[11] = wz;
        row[7] = wrap_angle(row[7] + theta_deg);
    }
}

fn wrap_angle(deg: f64) -> f64 {
    let mut a = (deg + 180.0).rem_euclid(360.0) - 180.0;
    if a >= 180.0 {
        a = -180.0;
    }
    a
}

// ---------------------------------------------------------------------------
// Leave-one-subject-out split
// ---------------------------------------------------------------------------

/// Builds the LOSO split for `target_subject`: every other subject's samples
/// become the labeled source set; the target's windows are split 80/20 into
/// unlabeled target-train and labeled target-test.
///
/// The 80/20 split is contiguous per label run, and windows that would share
/// frames across the cut (overlapping windows, step < window) are dropped so
/// that no test window shares a frame with any train window. The 80% quota is
/// computed over the windows actually kept and met exactly via largest-
/// remainder allocation.
pub fn make_loso_split(
    recordings: &[SubjectRecording],
    target_subject: &str,
    config: &WindowConfig,
    _seed: u64,
) -> Result<DomainSplit> {
    if recordings.len() < 2 {
        return Err(Error::TooFewSubjects {
            need: 2,
            got: recordings.len(),
        });
    }
    let target = recordings
        .iter()
        .find(|r| r.profile.subject_id == target_subject)
        .ok_or_else(|| Error::UnknownSubject(target_subject.to_string()))?;

    let mut source = Vec::new();
    for rec in recordings {
        if rec.profile.subject_id != target_subject {
            source.extend(segment_recording(rec, config)?);
        }
    }

    let target_samples = segment_recording(target, config)?;
    let (train, test) = split_target_windows(target_samples, config);

    Ok(DomainSplit {
        source,
        target_train: train.into_iter().map(|s| s.into_unlabeled()).collect(),
        target_test: test,
        target_subject: target_subject.to_string(),
    })
}

/// Contiguous 80/20 split of one subject's ordered windows, per label run.
///
/// Every label run is split into a train head and a test tail. Overlapping
/// windows (step < window) are dropped at both kinds of seam: between a run's
/// train head and its test tail, and between one run's test tail and the next
/// run's train head. The 80% quota is planned over the windows that survive
/// and met via largest-remainder allocation; assembly tracks actual frame
/// extents so no surviving test window ever shares a frame with a train one.
fn split_target_windows(
    samples: Vec<PointCloudSample>,
    config: &WindowConfig,
) -> (Vec<PointCloudSample>, Vec<PointCloudSample>) {
    // Number of consecutive windows that overlap a given window.
    let boundary = config.window_frames.div_ceil(config.step_frames) - 1;

    // Label runs over the ordered windows.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].label != samples[start].label {
            runs.push((start, i));
            start = i;
        }
    }

    // Plan per run: windows lost to the previous run's test tail (head drop),
    // whether the run is big enough to split, and how many windows count.
    let mut head_drop = vec![0usize; runs.len()];
    let mut splittable = vec![false; runs.len()];
    let mut usable = vec![0usize; runs.len()];
    let mut prev_ends_in_test = false;
    for (i, &(s, e)) in runs.iter().enumerate() {
        head_drop[i] = if prev_ends_in_test { boundary } else { 0 };
        usable[i] = (e - s).saturating_sub(head_drop[i]);
        splittable[i] = usable[i] >= boundary + 2;
        prev_ends_in_test = splittable[i];
    }
    let counted: usize = (0..runs.len())
        .map(|i| {
            if splittable[i] {
                usable[i] - boundary
            } else {
                usable[i]
            }
        })
        .sum();
    let quota = (0.8 * counted as f64).round() as usize;

    // Non-splittable runs go wholly to train; the rest of the quota is spread
    // over splittable runs by largest remainder.
    let fixed: usize = (0..runs.len())
        .filter(|&i| !splittable[i])
        .map(|i| usable[i])
        .sum();
    let remaining = quota.saturating_sub(fixed);

    let mut train_counts: Vec<usize> = vec![0; runs.len()];
    let split_total: usize = (0..runs.len())
        .filter(|&i| splittable[i])
        .map(|i| usable[i] - boundary)
        .sum();
    if split_total > 0 {
        let mut fractional: Vec<(usize, f64)> = Vec::new();
        let mut assigned = 0;
        for i in 0..runs.len() {
            if !splittable[i] {
                continue;
            }
            let avail = usable[i] - boundary;
            let share = remaining as f64 * avail as f64 / split_total as f64;
            let floor = (share.floor() as usize).min(avail - 1).max(1);
            train_counts[i] = floor;
            assigned += floor;
            fractional.push((i, share - share.floor()));
        }
        fractional.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut extra = remaining.saturating_sub(assigned);
        // Two passes are enough: caps are rarely hit more than once.
        for &(i, _) in fractional.iter().cycle().take(fractional.len() * 2) {
            if extra == 0 {
                break;
            }
            let avail = usable[i] - boundary;
            if train_counts[i] + 1 <= avail - 1 {
                train_counts[i] += 1;
                extra -= 1;
            }
        }
    } else {
        for i in 0..runs.len() {
            if !splittable[i] {
                train_counts[i] = usable[i];
            }
        }
    }
    for i in 0..runs.len() {
        if !splittable[i] {
            train_counts[i] = usable[i];
        }
    }

    // Assembly. Windows are ordered by start frame, so comparing against the
    // most recent train/test frame extent is enough to rule out any sharing.
    let w = config.window_frames;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut last_train_end: Option<usize> = None;
    let mut last_test_end: Option<usize> = None;
    let mut iter = samples.into_iter();
    for (i, &(s, e)) in runs.iter().enumerate() {
        let mut budget = train_counts[i];
        for _ in 0..(e - s) {
            let sample = iter.next().unwrap();
            let w_start = sample.start_frame;
            let w_end = w_start + w;
            if budget > 0 || !splittable[i] {
                if last_test_end.is_some_and(|t| w_start < t) {
                    continue; // overlaps a test window; dropped
                }
                budget = budget.saturating_sub(1);
                last_train_end = Some(w_end);
                train.push(sample);
            } else {
                if last_train_end.is_some_and(|t| w_start < t) {
                    continue; // overlaps a train window; dropped
                }
                last_test_end = Some(w_end);
                test.push(sample);
            }
        }
    }
    (train, test)
}

// ---------------------------------------------------------------------------
// Training-ready preparation
// ---------------------------------------------------------------------------

/// A split that has been augmented and normalized, plus the statistics baked
/// into checkpoints and reused verbatim at inference time.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub source: Vec<PointCloudSample>,
    pub target_train: Vec<UnlabeledSample>,
    pub target_test: Vec<PointCloudSample>,
    pub target_subject: String,
    pub stats: NormalizationStats,
}

/// Augments the source samples (target data is left untouched so it reflects
/// the deployment distribution), computes min-max statistics over the
/// augmented source, and normalizes all three sets with those statistics.
pub fn prepare_split(
    split: &DomainSplit,
    augment_config: &AugmentConfig,
    seed: u64,
) -> Result<PreparedSplit> {
    if split.source.is_empty() {
        return Err(Error::EmptyInput("source samples"));
    }
    // Jitter magnitudes are declared in normalized units; scale them by the
    // raw per-channel ranges of the source data.
    let raw_stats = compute_norm_stats(split.source.iter().map(|s| &s.points))?;
    let ranges = raw_stats.ranges();

    let augmented: Vec<PointCloudSample> = split
        .source
        .iter()
        .enumerate()
        .map(|(i, s)| augment(s, augment_config, &ranges, derive_seed(seed, i as u64)))
        .collect();

    let stats = compute_norm_stats(augmented.iter().map(|s| &s.points))?;

    let source = augmented.iter().map(|s| normalize(s, &stats)).collect();
    let target_train = split
        .target_train
        .iter()
        .map(|s| UnlabeledSample {
            points: normalize_points(&s.points, &stats),
            subject_id: s.subject_id.clone(),
            start_frame: s.start_frame,
        })
        .collect();
    let target_test = split
        .target_test
        .iter()
        .map(|s| normalize(s, &stats))
        .collect();

    Ok(PreparedSplit {
        source,
        target_train,
        target_test,
        target_subject: split.target_subject.clone(),
        stats,
    })
}

// ---------------------------------------------------------------------------
// Dataset archive
// ---------------------------------------------------------------------------

/// `meta.json` of a dataset archive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub window: WindowConfig,
    pub labels: Vec<String>,
    pub subjects: Vec<String>,
}

/// `stats.json` of a dataset archive. Archive samples are stored raw; these
/// statistics cover all subjects and are for inspection. Training always
/// recomputes statistics from its own source subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveStats {
    pub scope: String,
    #[serde(flatten)]
    pub stats: NormalizationStats,
}

/// Windows every recording and writes `meta.json`, `stats.json` and one
/// `samples_<subject>.csv` per subject (rows: 18x12 floats row-major, then
/// the label index).
pub fn write_archive(
    dir: &Path,
    recordings: &[SubjectRecording],
    config: &WindowConfig,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut all_samples: HashMap<String, Vec<PointCloudSample>> = HashMap::new();
    for rec in recordings {
        all_samples.insert(
            rec.profile.subject_id.clone(),
            segment_recording(rec, config)?,
        );
    }

    let meta = ArchiveMeta {
        window: *config,
        labels: Gesture::vocabulary(),
        subjects: recordings
            .iter()
            .map(|r| r.profile.subject_id.clone())
            .collect(),
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;

    let stats = compute_norm_stats(all_samples.values().flatten().map(|s| &s.points))?;
    let archive_stats = ArchiveStats {
        scope: "all-subjects".to_string(),
        stats,
    };
    std::fs::write(
        dir.join("stats.json"),
        serde_json::to_string_pretty(&archive_stats)?,
    )?;

    for subject in &meta.subjects {
        let samples = &all_samples[subject];
        let file = std::fs::File::create(dir.join(format!("samples_{subject}.csv")))?;
        let mut w = BufWriter::new(file);
        let mut line = String::new();
        for sample in samples {
            line.clear();
            for (i, v) in sample.points.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                write!(line, "{v:.9e}").unwrap();
            }
            writeln!(w, "{line},{}", sample.label.index())?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Reads an archive written by [`write_archive`].
pub fn read_archive(
    dir: &Path,
) -> Result<(ArchiveMeta, ArchiveStats, HashMap<String, Vec<PointCloudSample>>)> {
    let meta: ArchiveMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    let stats: ArchiveStats =
        serde_json::from_str(&std::fs::read_to_string(dir.join("stats.json"))?)?;
    let n_points = meta.window.n_points();
    let mut subjects = HashMap::new();
    for subject in &meta.subjects {
        let text = std::fs::read_to_string(dir.join(format!("samples_{subject}.csv")))?;
        let mut samples = Vec::new();
        for (i, row) in text.lines().enumerate() {
            if row.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = row.split(',').collect();
            let expected = n_points * FEATURES_PER_DEVICE + 1;
            if fields.len() != expected {
                return Err(Error::ShapeMismatch {
                    expected: format!("{expected} columns"),
                    got: format!("{} columns", fields.len()),
                });
            }
            let mut points = Array2::zeros((n_points, FEATURES_PER_DEVICE));
            for (j, f) in fields[..fields.len() - 1].iter().enumerate() {
                points[[j / FEATURES_PER_DEVICE, j % FEATURES_PER_DEVICE]] =
                    f.parse::<f64>().map_err(|e| {
                        Error::InvalidArgument(format!("bad float in {subject} row {i}: {e}"))
                    })?;
            }
            let label_idx: usize = fields[fields.len() - 1].parse().map_err(|e| {
                Error::InvalidArgument(format!("bad label index in {subject} row {i}: {e}"))
            })?;
            let label = Gesture::from_index(label_idx).ok_or(Error::LabelOutOfRange(label_idx))?;
            samples.push(PointCloudSample {
                points,
                label,
                subject_id: subject.clone(),
                start_frame: i * meta.window.step_frames,
            });
        }
        subjects.insert(subject.clone(), samples);
    }
    Ok((meta, stats, subjects))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_dataset, generate_recording, sample_subject, GestureScript};
    use proptest::prelude::*;

    fn recording(secs: f64, seed: u64) -> Vec<(Frame, Gesture)> {
        let p = sample_subject(seed);
        let script = GestureScript::new(vec![(Gesture::Walking, secs)]).unwrap();
        generate_recording(&p, &script, seed).unwrap()
    }

    #[test]
    fn window_count_matches_formula() {
        let rec = recording(2.0, 1); // 60 frames
        let cfg = WindowConfig::default();
        let samples = segment_windows(&rec, &cfg).unwrap();
        assert_eq!(samples.len(), 19); // floor((60-6)/3)+1
        assert_eq!(samples[0].points.shape(), &[18, 12]);
        assert_eq!(samples[1].start_frame, 3);
    }

    #[test]
    fn single_window_boundary() {
        let rec = recording(0.2, 2); // 6 frames
        let samples = segment_windows(&rec, &WindowConfig::default()).unwrap();
        assert_eq!(samples.len(), 1);
    }

    #[test]
    fn too_short_recording_errors() {
        let rec = recording(1.0, 3);
        let short = &rec[..5];
        assert!(matches!(
            segment_windows(short, &WindowConfig::default()),
            Err(Error::RecordingTooShort { got: 5, need: 6 })
        ));
    }

    proptest! {
        #[test]
        fn window_count_matches_brute_force(len in 1usize..400, window in 1usize..40, step in 1usize..40) {
            prop_assume!(step <= window);
            prop_assume!(len >= window);
            let rec = recording(14.0, 4);
            prop_assume!(len <= rec.len());
            let cfg = WindowConfig { window_frames: window, step_frames: step, sample_rate: 30.0 };
            let samples = segment_windows(&rec[..len], &cfg).unwrap();
            let brute: usize = (0..len).step_by(step).filter(|s| s + window <= len).count();
            prop_assert_eq!(samples.len(), brute);
        }
    }

    #[test]
    fn majority_picks_most_frequent() {
        use Gesture::*;
        let labels = [Walking, Walking, Walking, Walking, Standing, Standing];
        assert_eq!(majority_label(&labels).unwrap(), Walking);
        assert_eq!(majority_label(&[Standing; 6]).unwrap(), Standing);
    }

    #[test]
    fn majority_tie_goes_to_latest_frame() {
        use Gesture::*;
        let labels = [Walking, Walking, Walking, Standing, Standing, Standing];
        assert_eq!(majority_label(&labels).unwrap(), Standing);
        let labels = [Standing, Standing, Standing, Walking, Walking, Walking];
        assert_eq!(majority_label(&labels).unwrap(), Walking);
        assert!(majority_label(&[]).is_err());
    }

    #[test]
    fn majority_count_dominates_every_other_label() {
        use Gesture::*;
        let labels = [Jumping, Walking, Jumping, Standing, Jumping, Standing];
        let winner = majority_label(&labels).unwrap();
        let count = |g: Gesture| labels.iter().filter(|&&l| l == g).count();
        for g in Gesture::ALL {
            assert!(count(winner) >= count(g));
        }
    }

    #[test]
    fn norm_stats_track_min_max() {
        let mut a = Array2::zeros((2, 12));
        a[[0, 3]] = 5.0;
        a[[1, 3]] = 5.0;
        let mut b = Array2::zeros((2, 12));
        b[[0, 3]] = -1.0;
        b[[1, 3]] = 2.0;
        let stats = compute_norm_stats([&a, &b]).unwrap();
        assert_eq!(stats.min[3], -1.0);
        assert_eq!(stats.max[3], 5.0);
        let one = compute_norm_stats([&a]).unwrap();
        assert_eq!(one.min[3], 5.0);
        assert_eq!(one.max[3], 5.0);
    }

    #[test]
    fn normalize_endpoints_clamps_and_degenerates() {
        let stats = NormalizationStats {
            channel_names: channel_names(),
            min: vec![0.0; 12],
            max: {
                let mut m = vec![2.0; 12];
                m[5] = 0.0; // degenerate channel
                m
            },
        };
        let mut pts = Array2::zeros((1, 12));
        pts[[0, 0]] = 0.0; // min -> 0
        pts[[0, 1]] = 2.0; // max -> 1
        pts[[0, 2]] = -3.0; // below min -> clamp 0
        pts[[0, 3]] = 9.0; // above max -> clamp 1
        pts[[0, 5]] = 7.0; // degenerate -> 0.5
        let out = normalize_points(&pts, &stats);
        assert_eq!(out[[0, 0]], 0.0);
        assert_eq!(out[[0, 1]], 1.0);
        assert_eq!(out[[0, 2]], 0.0);
        assert_eq!(out[[0, 3]], 1.0);
        assert_eq!(out[[0, 5]], 0.5);
    }

    proptest! {
        #[test]
        fn normalize_then_denormalize_is_identity(vals in proptest::collection::vec(0.0f64..=1.0, 12)) {
            let stats = NormalizationStats {
                channel_names: channel_names(),
                min: (0..12).map(|i| -1.0 - i as f64).collect(),
                max: (0..12).map(|i| 2.0 + i as f64).collect(),
            };
            let mut pts = Array2::zeros((1, 12));
            for (c, v) in vals.iter().enumerate() {
                pts[[0, c]] = *v;
            }
            let raw = denormalize_points(&pts, &stats);
            let back = normalize_points(&raw, &stats);
            for c in 0..12 {
                prop_assert!((back[[0, c]] - pts[[0, c]]).abs() < 1e-9);
            }
        }
    }

    fn unit_sample() -> PointCloudSample {
        let mut points = Array2::zeros((18, 12));
        points[[0, 0]] = 1.0; // position (1, 0, 0)
        PointCloudSample {
            points,
            label: Gesture::Standing,
            subject_id: "S1".into(),
            start_frame: 0,
        }
    }

    #[test]
    fn augment_identity_config_is_identity() {
        let s = unit_sample();
        let out = augment(&s, &AugmentConfig::identity(), &[1.0; 12], 9);
        assert_eq!(out.points, s.points);
    }

    #[test]
    fn yaw_ninety_degrees_matches_rotation_matrix() {
        let mut points = unit_sample().points;
        rotate_yaw(&mut points, 90.0);
        assert!((points[[0, 0]] - 0.0).abs() < 1e-12);
        assert!((points[[0, 1]] - 0.0).abs() < 1e-12);
        assert!((points[[0, 2]] - -1.0).abs() < 1e-12);
        // Yaw channel picks up the angle.
        assert!((points[[0, 7]] - 90.0).abs() < 1e-12);
    }

    #[test]
    fn jitter_respects_clip_bound() {
        let cfg = AugmentConfig {
            jitter_sigma: 0.1,
            jitter_clip: 0.05,
            max_yaw_deg: 0.0,
            shift_range_m: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
        };
        let s = unit_sample();
        for seed in 0..20 {
            let out = augment(&s, &cfg, &[1.0; 12], seed);
            let max_delta = out
                .points
                .iter()
                .zip(s.points.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_delta <= 0.05 + 1e-12, "delta {max_delta}");
        }
    }

    #[test]
    fn loso_excludes_target_from_source() {
        let recs = generate_dataset(4, &GestureScript::default_session(), 5).unwrap();
        let split = make_loso_split(&recs, "S2", &WindowConfig::default(), 0).unwrap();
        assert!(split.source.iter().all(|s| s.subject_id != "S2"));
        let source_subjects: std::collections::HashSet<_> =
            split.source.iter().map(|s| s.subject_id.clone()).collect();
        assert_eq!(source_subjects.len(), 3);
        assert!(split.target_test.iter().all(|s| s.subject_id == "S2"));
    }

    #[test]
    fn loso_unknown_subject_errors() {
        let recs = generate_dataset(2, &GestureScript::default_session(), 5).unwrap();
        assert!(matches!(
            make_loso_split(&recs, "S9", &WindowConfig::default(), 0),
            Err(Error::UnknownSubject(_))
        ));
    }

    #[test]
    fn loso_split_is_eighty_twenty_without_overlap_drops() {
        // With step == window no boundary windows are dropped, so the ratio
        // over the target windows is exact.
        let cfg = WindowConfig {
            window_frames: 6,
            step_frames: 6,
            sample_rate: 30.0,
        };
        let recs = generate_dataset(3, &GestureScript::default_session(), 6).unwrap();
        let split = make_loso_split(&recs, "S1", &cfg, 0).unwrap();
        let train = split.target_train.len();
        let test = split.target_test.len();
        let total = train + test;
        let expect = (0.8 * total as f64).round() as isize;
        assert!(
            (train as isize - expect).abs() <= 1,
            "train {train} test {test}, expected ~{expect}"
        );
    }

    #[test]
    fn loso_split_ratio_holds_with_overlapping_windows() {
        let recs = generate_dataset(3, &GestureScript::default_session(), 7).unwrap();
        let split = make_loso_split(&recs, "S1", &WindowConfig::default(), 0).unwrap();
        let train = split.target_train.len();
        let test = split.target_test.len();
        let expect = (0.8 * (train + test) as f64).round() as isize;
        assert!(
            (train as isize - expect).abs() <= 1,
            "train {train} test {test}, expected ~{expect}"
        );
    }

    #[test]
    fn loso_train_and_test_share_no_frames() {
        let cfg = WindowConfig::default();
        let recs = generate_dataset(3, &GestureScript::default_session(), 8).unwrap();
        let split = make_loso_split(&recs, "S3", &cfg, 0).unwrap();
        for tr in &split.target_train {
            for te in &split.target_test {
                let tr_end = tr.start_frame + cfg.window_frames;
                let te_end = te.start_frame + cfg.window_frames;
                let overlap = tr.start_frame < te_end && te.start_frame < tr_end;
                assert!(
                    !overlap,
                    "train window at {} overlaps test window at {}",
                    tr.start_frame, te.start_frame
                );
            }
        }
    }

    #[test]
    fn prepared_split_is_normalized_and_source_only() {
        let recs = generate_dataset(3, &GestureScript::default_session(), 9).unwrap();
        let split = make_loso_split(&recs, "S1", &WindowConfig::default(), 0).unwrap();
        let prepared = prepare_split(&split, &AugmentConfig::default(), 11).unwrap();
        for s in &prepared.source {
            assert!(s.points.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        for s in &prepared.target_test {
            assert!(s.points.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let stats = &prepared.stats;
        for c in 0..12 {
            assert!(stats.min[c] <= stats.max[c]);
        }
    }

    #[test]
    fn default_script_window_shares_mirror_reference_counts() {
        let recs = generate_dataset(2, &GestureScript::default_session(), 10).unwrap();
        let samples = segment_recording(&recs[0], &WindowConfig::default()).unwrap();
        let mut counts = [0usize; 9];
        for s in &samples {
            counts[s.label.index()] += 1;
        }
        let total: usize = counts.iter().sum();
        let standing_share = counts[Gesture::Standing.index()] as f64 / total as f64;
        assert!(
            (standing_share - 0.317).abs() < 0.03,
            "standing share {standing_share}"
        );
        // Ranking: standing largest, keeping-squatting smallest.
        assert_eq!(
            counts[Gesture::Standing.index()],
            *counts.iter().max().unwrap()
        );
        assert_eq!(
            counts[Gesture::SquatKeep.index()],
            *counts.iter().min().unwrap()
        );
    }

    #[test]
    fn archive_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let recs = generate_dataset(2, &GestureScript::default_session(), 12).unwrap();
        let cfg = WindowConfig::default();
        write_archive(dir.path(), &recs, &cfg).unwrap();
        let (meta, stats, subjects) = read_archive(dir.path()).unwrap();
        assert_eq!(meta.window, cfg);
        assert_eq!(meta.labels.len(), 9);
        assert_eq!(stats.scope, "all-subjects");
        let direct = segment_recording(&recs[0], &cfg).unwrap();
        let loaded = &subjects["S1"];
        assert_eq!(loaded.len(), direct.len());
        for (a, b) in direct.iter().zip(loaded) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.points.iter().zip(b.points.iter()) {
                assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
            }
        }
    }
}
