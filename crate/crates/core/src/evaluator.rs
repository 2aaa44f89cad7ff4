//! Metrics and reports: per-class accuracy, mean class accuracy, overall
//! accuracy, row-normalized confusion matrices, inference latency accounting,
//! the leave-one-subject-out suite and the window-size study. A brute-force
//! 1-nearest-neighbor baseline ships here to calibrate task difficulty.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    make_loso_split, prepare_split, AugmentConfig, PointCloudSample, PreparedSplit, WindowConfig,
};
use crate::error::{Error, Result};
use crate::gesture::{Gesture, N_CLASSES};
use crate::model::{predict_batch, ModelConfig, ModelParameters};
use crate::synthgen::SubjectRecording;
use crate::trainer::{fit, EpochLosses, TrainConfig};

/// Raw prediction counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_pairs(predictions: &[Gesture], labels: &[Gesture]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} predictions", labels.len()),
                got: format!("{}", predictions.len()),
            });
        }
        if predictions.is_empty() {
            return Err(Error::EmptyInput("prediction/label pairs"));
        }
        let mut counts = vec![vec![0u64; N_CLASSES]; N_CLASSES];
        for (p, l) in predictions.iter().zip(labels) {
            counts[l.index()][p.index()] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Rows normalized over the true class, so the diagonal holds recall.
    /// Empty rows stay all-zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let sum: u64 = row.iter().sum();
                if sum == 0 {
                    vec![0.0; N_CLASSES]
                } else {
                    row.iter().map(|&c| c as f64 / sum as f64).collect()
                }
            })
            .collect()
    }
}

/// Wall-clock inference cost. The total adds the window duration the system
/// must wait before it can classify at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub window_ms: f64,
    pub inference_median_ms: f64,
    pub inference_p95_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Recall per class in canonical label order; `None` when the class had
    /// no test samples (flagged and excluded from the mean).
    pub per_class_accuracy: Vec<Option<f64>>,
    pub mean_class_accuracy: f64,
    pub overall_accuracy: f64,
    pub missing_classes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyReport>,
}

/// Accuracy figures from a confusion matrix: per-class recall, their mean
/// (classes without samples excluded and flagged), and pooled accuracy.
pub fn metrics(confusion: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = confusion.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion matrix"));
    }
    let mut per_class = Vec::with_capacity(N_CLASSES);
    let mut missing = Vec::new();
    let mut mean_sum = 0.0;
    let mut mean_n = 0usize;
    for c in 0..N_CLASSES {
        let row = confusion.row_sum(c);
        if row == 0 {
            per_class.push(None);
            missing.push(Gesture::from_index(c).unwrap().name().to_string());
        } else {
            let recall = confusion.counts[c][c] as f64 / row as f64;
            per_class.push(Some(recall));
            mean_sum += recall;
            mean_n += 1;
        }
    }
    Ok(MetricsReport {
        per_class_accuracy: per_class,
        mean_class_accuracy: mean_sum / mean_n as f64,
        overall_accuracy: confusion.trace() as f64 / total as f64,
        missing_classes: missing,
        latency: None,
    })
}

/// Evaluation-mode predictions for a whole test set, in batches.
pub fn predict_all(
    params: &ModelParameters,
    samples: &[PointCloudSample],
) -> Result<Vec<Gesture>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let refs: Vec<&Array2<f64>> = chunk.iter().map(|s| &s.points).collect();
        for (label, _) in predict_batch(params, &refs)? {
            out.push(label);
        }
    }
    Ok(out)
}

/// Confusion matrix and metrics of a model over labeled samples.
pub fn evaluate_model(
    params: &ModelParameters,
    samples: &[PointCloudSample],
) -> Result<(ConfusionMatrix, MetricsReport)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation samples"));
    }
    let predictions = predict_all(params, samples)?;
    let labels: Vec<Gesture> = samples.iter().map(|s| s.label).collect();
    let confusion = ConfusionMatrix::from_pairs(&predictions, &labels)?;
    let report = metrics(&confusion)?;
    Ok((confusion, report))
}

/// Median and p95 single-sample inference wall time over `n_trials` runs,
/// plus the window-duration floor.
pub fn latency_benchmark(
    params: &ModelParameters,
    sample: &PointCloudSample,
    window: &WindowConfig,
    n_trials: usize,
) -> Result<LatencyReport> {
    let mut times = Vec::with_capacity(n_trials.max(1));
    for _ in 0..n_trials.max(1) {
        let start = Instant::now();
        let _ = predict_batch(params, &[&sample.points])?;
        times.push(start.elapsed().as_secs_f64() * 1000.0);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    let p95 = times[((times.len() as f64 * 0.95) as usize).min(times.len() - 1)];
    let window_ms = window.window_duration_ms();
    Ok(LatencyReport {
        window_ms,
        inference_median_ms: median,
        inference_p95_ms: p95,
        total_ms: window_ms + median,
    })
}

// ---------------------------------------------------------------------------
// 1-nearest-neighbor baseline
// ---------------------------------------------------------------------------

/// Brute-force 1-NN on flattened normalized windows: each test sample takes
/// the label of its closest training sample. A difficulty calibration for the
/// learned model, not a component of it.
pub fn nearest_neighbor_accuracy(
    train: &[PointCloudSample],
    test: &[PointCloudSample],
) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput("nearest-neighbor data"));
    }
    let correct: usize = test
        .par_iter()
        .map(|t| {
            let mut best = f64::INFINITY;
            let mut best_label = train[0].label;
            for s in train {
                let mut d = 0.0;
                for (a, b) in t.points.iter().zip(s.points.iter()) {
                    d += (a - b) * (a - b);
                    if d >= best {
                        break;
                    }
                }
                if d < best {
                    best = d;
                    best_label = s.label;
                }
            }
            usize::from(best_label == t.label)
        })
        .sum();
    Ok(correct as f64 / test.len() as f64)
}

// ---------------------------------------------------------------------------
// Leave-one-subject-out suite
// ---------------------------------------------------------------------------

/// One held-out subject's outcome: trained parameters, its prepared split
/// statistics, metrics on the target test set, and the training history.
pub struct SubjectResult {
    pub subject: String,
    pub params: ModelParameters,
    pub split: PreparedSplit,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub nearest_neighbor_accuracy: f64,
    pub history: Vec<EpochLosses>,
}

/// Per-subject metric rows plus the column-mean average row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LosoReport {
    pub rows: Vec<(String, MetricsReport)>,
    pub average: MetricsReport,
}

/// Trains one model per held-out subject and evaluates it on that subject's
/// test split. Subjects train independently, in parallel up to `workers`.
pub fn loso_suite(
    recordings: &[SubjectRecording],
    window: &WindowConfig,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    augment: &AugmentConfig,
    workers: usize,
) -> Result<Vec<SubjectResult>> {
    if recordings.len() < 2 {
        return Err(Error::TooFewSubjects {
            need: 2,
            got: recordings.len(),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let results: Vec<Result<SubjectResult>> = pool.install(|| {
        recordings
            .par_iter()
            .enumerate()
            .map(|(i, rec)| {
                let subject = rec.profile.subject_id.clone();
                let split = make_loso_split(recordings, &subject, window, train_config.seed)?;
                let prepared = prepare_split(
                    &split,
                    augment,
                    crate::seeds::derive_seed(train_config.seed, 0xa000 + i as u64),
                )?;
                // Every subject gets its own seed, shared across train modes
                // so mode comparisons see the same initializations.
                let mut cfg = *train_config;
                cfg.seed = crate::seeds::derive_seed(train_config.seed, i as u64);
                let fitted = fit(&prepared, model_config, &cfg)?;
                let (confusion, m) = evaluate_model(&fitted.params, &prepared.target_test)?;
                let nn = nearest_neighbor_accuracy(&prepared.source, &prepared.target_test)?;
                Ok(SubjectResult {
                    subject,
                    params: fitted.params,
                    split: prepared,
                    confusion,
                    metrics: m,
                    nearest_neighbor_accuracy: nn,
                    history: fitted.history,
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Collapses per-subject results into the report table: one row per subject
/// plus an average row of column means (per-class columns average over the
/// subjects where the class was present).
pub fn loso_report(results: &[SubjectResult]) -> LosoReport {
    let rows: Vec<(String, MetricsReport)> = results
        .iter()
        .map(|r| (r.subject.clone(), r.metrics.clone()))
        .collect();
    let average = average_metrics(rows.iter().map(|(_, m)| m));
    LosoReport { rows, average }
}

/// Column means over several metric reports.
pub fn average_metrics<'a, I>(reports: I) -> MetricsReport
where
    I: IntoIterator<Item = &'a MetricsReport>,
{
    let reports: Vec<&MetricsReport> = reports.into_iter().collect();
    let mut per_class = Vec::with_capacity(N_CLASSES);
    let mut missing = Vec::new();
    for c in 0..N_CLASSES {
        let values: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.per_class_accuracy[c])
            .collect();
        if values.is_empty() {
            per_class.push(None);
            missing.push(Gesture::from_index(c).unwrap().name().to_string());
        } else {
            per_class.push(Some(values.iter().sum::<f64>() / values.len() as f64));
        }
    }
    let mean = reports.iter().map(|r| r.mean_class_accuracy).sum::<f64>() / reports.len() as f64;
    let overall = reports.iter().map(|r| r.overall_accuracy).sum::<f64>() / reports.len() as f64;
    MetricsReport {
        per_class_accuracy: per_class,
        mean_class_accuracy: mean,
        overall_accuracy: overall,
        missing_classes: missing,
        latency: None,
    }
}

// ---------------------------------------------------------------------------
// Window-size study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStudyRow {
    pub window_frames: usize,
    pub step_frames: usize,
    pub duration_ms: f64,
    pub mean_class_accuracy: f64,
    pub overall_accuracy: f64,
}

/// Rebuilds the dataset at each window size (step = half the window, at
/// least 1), retrains the full LOSO suite and reports the averaged accuracy
/// per size.
pub fn window_size_study(
    recordings: &[SubjectRecording],
    sizes: &[usize],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    augment: &AugmentConfig,
    workers: usize,
) -> Result<Vec<WindowStudyRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size == 0 {
            return Err(Error::InvalidArgument("window size must be >= 1".into()));
        }
        let window = WindowConfig {
            window_frames: size,
            step_frames: (size / 2).max(1),
            sample_rate: crate::synthgen::SAMPLE_RATE_HZ,
        };
        let results = loso_suite(
            recordings,
            &window,
            model_config,
            train_config,
            augment,
            workers,
        )?;
        let report = loso_report(&results);
        rows.push(WindowStudyRow {
            window_frames: size,
            step_frames: window.step_frames,
            duration_ms: window.window_duration_ms(),
            mean_class_accuracy: report.average.mean_class_accuracy,
            overall_accuracy: report.average.overall_accuracy,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// LOSO table CSV: one row per subject (per-class recall, mean, overall)
/// plus the average row.
pub fn write_loso_csv(path: &Path, report: &LosoReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["subject".to_string()];
    header.extend(Gesture::vocabulary());
    header.push("mean".into());
    header.push("overall".into());
    w.write_record(&header)?;
    let fmt = |v: &Option<f64>| match v {
        Some(x) => format!("{:.4}", x),
        None => String::new(),
    };
    for (subject, m) in report
        .rows
        .iter()
        .map(|(s, m)| (s.as_str(), m))
        .chain(std::iter::once(("average", &report.average)))
    {
        let mut record = vec![subject.to_string()];
        record.extend(m.per_class_accuracy.iter().map(fmt));
        record.push(format!("{:.4}", m.mean_class_accuracy));
        record.push(format!("{:.4}", m.overall_accuracy));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_window_study_csv(path: &Path, rows: &[WindowStudyRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "window_frames",
        "step_frames",
        "duration_ms",
        "mean_class_accuracy",
        "overall_accuracy",
    ])?;
    for r in rows {
        w.write_record(&[
            r.window_frames.to_string(),
            r.step_frames.to_string(),
            format!("{:.1}", r.duration_ms),
            format!("{:.4}", r.mean_class_accuracy),
            format!("{:.4}", r.overall_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Two-sample t-test utility
// ---------------------------------------------------------------------------

/// Welch's two-sample t statistic and degrees of freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(
            "t-test needs at least two samples per group".into(),
        ));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64], m: f64| {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Ok((0.0, na + nb - 2.0));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    Ok((t, df))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionNorm;
    use crate::synthgen::{generate_dataset, GestureScript};
    use crate::trainer::TrainMode;

    fn g(i: usize) -> Gesture {
        Gesture::from_index(i).unwrap()
    }

    #[test]
    fn confusion_counts_by_hand() {
        let labels = vec![g(0), g(0), g(1)];
        let preds = vec![g(0), g(1), g(1)];
        let cm = ConfusionMatrix::from_pairs(&preds, &labels).unwrap();
        assert_eq!(cm.counts[0][0], 1);
        assert_eq!(cm.counts[0][1], 1);
        assert_eq!(cm.counts[1][1], 1);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn all_correct_is_diagonal_with_unit_recall() {
        let labels: Vec<Gesture> = (0..9).map(g).collect();
        let cm = ConfusionMatrix::from_pairs(&labels, &labels).unwrap();
        let norm = cm.normalized();
        for i in 0..9 {
            assert_eq!(norm[i][i], 1.0);
        }
        let m = metrics(&cm).unwrap();
        assert_eq!(m.mean_class_accuracy, 1.0);
        assert_eq!(m.overall_accuracy, 1.0);
    }

    #[test]
    fn empty_or_mismatched_inputs_error() {
        assert!(ConfusionMatrix::from_pairs(&[], &[]).is_err());
        assert!(ConfusionMatrix::from_pairs(&[g(0)], &[]).is_err());
    }

    #[test]
    fn normalized_rows_sum_to_one() {
        let labels = vec![g(0), g(0), g(0), g(2), g(2), g(5)];
        let preds = vec![g(0), g(1), g(2), g(2), g(0), g(5)];
        let cm = ConfusionMatrix::from_pairs(&preds, &labels).unwrap();
        for (i, row) in cm.normalized().iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if cm.row_sum(i) > 0 {
                assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
            } else {
                assert_eq!(sum, 0.0);
            }
        }
    }

    #[test]
    fn mean_differs_from_overall_under_imbalance() {
        // Class 0: 1 of 2 correct; class 1: 1 of 1 correct.
        let labels = vec![g(0), g(0), g(1)];
        let preds = vec![g(0), g(1), g(1)];
        let cm = ConfusionMatrix::from_pairs(&preds, &labels).unwrap();
        let m = metrics(&cm).unwrap();
        assert!((m.mean_class_accuracy - 0.75).abs() < 1e-12);
        assert!((m.overall_accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_classes_are_flagged_and_excluded() {
        let labels = vec![g(0), g(0)];
        let preds = vec![g(0), g(0)];
        let cm = ConfusionMatrix::from_pairs(&preds, &labels).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.per_class_accuracy[0], Some(1.0));
        assert_eq!(m.per_class_accuracy[1], None);
        assert_eq!(m.missing_classes.len(), 8);
        assert_eq!(m.mean_class_accuracy, 1.0);

        let zero = ConfusionMatrix {
            counts: vec![vec![0; 9]; 9],
        };
        assert!(metrics(&zero).is_err());
    }

    #[test]
    fn overall_matches_trace_over_total_exactly() {
        let labels: Vec<Gesture> = (0..60).map(|i| g(i % 9)).collect();
        let preds: Vec<Gesture> = (0..60).map(|i| g((i * 7 + i / 9) % 9)).collect();
        let cm = ConfusionMatrix::from_pairs(&preds, &labels).unwrap();
        let m = metrics(&cm).unwrap();
        let raw_correct = labels
            .iter()
            .zip(&preds)
            .filter(|(l, p)| l == p)
            .count();
        assert_eq!(
            m.overall_accuracy,
            raw_correct as f64 / labels.len() as f64
        );
        assert_eq!(m.overall_accuracy, cm.trace() as f64 / cm.total() as f64);
    }

    #[test]
    fn metrics_commute_with_class_relabeling() {
        let labels: Vec<Gesture> = (0..45).map(|i| g(i % 9)).collect();
        let preds: Vec<Gesture> = (0..45).map(|i| g((i * 4 + 1) % 9)).collect();
        let perm = [3, 7, 1, 0, 8, 2, 6, 4, 5];
        let relabel = |v: &[Gesture]| -> Vec<Gesture> {
            v.iter().map(|x| g(perm[x.index()])).collect()
        };
        let base = metrics(&ConfusionMatrix::from_pairs(&preds, &labels).unwrap()).unwrap();
        let permuted = metrics(
            &ConfusionMatrix::from_pairs(&relabel(&preds), &relabel(&labels)).unwrap(),
        )
        .unwrap();
        assert!((base.mean_class_accuracy - permuted.mean_class_accuracy).abs() < 1e-12);
        assert!((base.overall_accuracy - permuted.overall_accuracy).abs() < 1e-12);
        for c in 0..9 {
            assert_eq!(base.per_class_accuracy[c], permuted.per_class_accuracy[perm[c]]);
        }
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            input_dim: 12,
            embed_dims: [6, 6],
            knn_k: 2,
            neighbor_dim: 8,
            attention_dim: 8,
            n_attention: 4,
            fused_dim: 16,
            classifier_dims: [12, 8],
            n_classes: 9,
            dropout_rate: 0.2,
            attention_norm: AttentionNorm::DualNorm,
        }
    }

    #[test]
    fn latency_budget_accounting() {
        let window = WindowConfig::default();
        let params = ModelParameters::init(&tiny_model(), 1);
        let recs = generate_dataset(
            2,
            &GestureScript::new(vec![(Gesture::Walking, 0.5)]).unwrap(),
            1,
        )
        .unwrap();
        let sample = crate::dataset::segment_recording(&recs[0], &window).unwrap()[0].clone();
        let report = latency_benchmark(&params, &sample, &window, 11).unwrap();
        assert_eq!(report.window_ms, 180.0);
        assert_eq!(report.total_ms, 180.0 + report.inference_median_ms);
        assert!(report.inference_p95_ms >= report.inference_median_ms);
    }

    #[test]
    fn nearest_neighbor_is_strong_within_one_subject() {
        // Same-domain check of the baseline itself: disjoint halves of one
        // subject's windows. (Cross-subject accuracy is lower by design --
        // that gap is what the adaptation training addresses.)
        let script = GestureScript::new(vec![
            (Gesture::Standing, 1.5),
            (Gesture::Jogging, 1.5),
        ])
        .unwrap();
        let recs = generate_dataset(2, &script, 3).unwrap();
        // Interleaved windows at the default 90 ms step give the train half
        // phase coverage of the gait cycle; this checks the baseline's
        // mechanics, not split hygiene.
        let window = WindowConfig::default();
        let samples = crate::dataset::segment_recording(&recs[0], &window).unwrap();
        let stats =
            crate::dataset::compute_norm_stats(samples.iter().map(|s| &s.points)).unwrap();
        let normalized: Vec<PointCloudSample> = samples
            .iter()
            .map(|s| crate::dataset::normalize(s, &stats))
            .collect();
        let train: Vec<PointCloudSample> = normalized.iter().step_by(2).cloned().collect();
        let test: Vec<PointCloudSample> = normalized.iter().skip(1).step_by(2).cloned().collect();
        let acc = nearest_neighbor_accuracy(&train, &test).unwrap();
        assert!(acc > 0.9, "1-NN accuracy {acc}");
    }

    #[test]
    fn loso_suite_produces_per_subject_rows_and_column_means() {
        let script = GestureScript::new(vec![
            (Gesture::Standing, 1.0),
            (Gesture::Walking, 1.0),
        ])
        .unwrap();
        let recs = generate_dataset(3, &script, 4).unwrap();
        let train = TrainConfig {
            epochs: 1,
            batch_size: 8,
            seed: 0,
            mode: TrainMode::Mcd,
            ..Default::default()
        };
        let results = loso_suite(
            &recs,
            &WindowConfig::default(),
            &tiny_model(),
            &train,
            &AugmentConfig::identity(),
            2,
        )
        .unwrap();
        assert_eq!(results.len(), 3);
        let report = loso_report(&results);
        assert_eq!(report.rows.len(), 3);
        let want_overall = report
            .rows
            .iter()
            .map(|(_, m)| m.overall_accuracy)
            .sum::<f64>()
            / 3.0;
        assert!((report.average.overall_accuracy - want_overall).abs() < 1e-12);
        let want_mean = report
            .rows
            .iter()
            .map(|(_, m)| m.mean_class_accuracy)
            .sum::<f64>()
            / 3.0;
        assert!((report.average.mean_class_accuracy - want_mean).abs() < 1e-12);
    }

    #[test]
    fn window_study_rows_carry_exact_durations() {
        let script = GestureScript::new(vec![
            (Gesture::Standing, 0.8),
            (Gesture::Walking, 0.8),
        ])
        .unwrap();
        let recs = generate_dataset(2, &script, 5).unwrap();
        let train = TrainConfig {
            epochs: 1,
            batch_size: 8,
            seed: 0,
            ..Default::default()
        };
        let rows = window_size_study(
            &recs,
            &[3, 6],
            &tiny_model(),
            &train,
            &AugmentConfig::identity(),
            2,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].window_frames, 3);
        assert_eq!(rows[0].step_frames, 1);
        assert_eq!(rows[0].duration_ms, 90.0);
        assert_eq!(rows[1].duration_ms, 180.0);
        assert!(window_size_study(
            &recs,
            &[0],
            &tiny_model(),
            &train,
            &AugmentConfig::identity(),
            1
        )
        .is_err());
    }

    #[test]
    fn loso_and_study_csv_files_render() {
        let dir = tempfile::tempdir().unwrap();
        let m = MetricsReport {
            per_class_accuracy: vec![Some(1.0); 9],
            mean_class_accuracy: 1.0,
            overall_accuracy: 1.0,
            missing_classes: vec![],
            latency: None,
        };
        let report = LosoReport {
            rows: vec![("S1".into(), m.clone())],
            average: m,
        };
        let p = dir.path().join("loso.csv");
        write_loso_csv(&p, &report).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("subject,standing,"));
        assert_eq!(text.lines().count(), 3);

        let p = dir.path().join("study.csv");
        write_window_study_csv(
            &p,
            &[WindowStudyRow {
                window_frames: 6,
                step_frames: 3,
                duration_ms: 180.0,
                mean_class_accuracy: 0.9,
                overall_accuracy: 0.91,
            }],
        )
        .unwrap();
        assert!(std::fs::read_to_string(&p)
            .unwrap()
            .contains("6,3,180.0,0.9000,0.9100"));
    }

    #[test]
    fn welch_t_behaves_on_known_inputs() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let (t, df) = welch_t(&a, &a).unwrap();
        assert_eq!(t, 0.0);
        assert!(df > 0.0);

        let b = [10.0, 11.0, 12.0, 13.0];
        let (t, _) = welch_t(&a, &b).unwrap();
        assert!(t < -5.0, "strongly separated means, t = {t}");
        let (t2, _) = welch_t(&b, &a).unwrap();
        assert_eq!(t, -t2);
        assert!(welch_t(&[1.0], &a).is_err());
    }
}
