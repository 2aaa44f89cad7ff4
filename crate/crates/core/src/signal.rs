//! Small time-series utilities: moving average and peak finding.
//!
//! Used by the locomotion controller to find head-bob peaks and by tests that
//! need an independent way to count oscillations in generated trajectories.

/// Centered moving average; the window shrinks at the series edges.
pub fn moving_average(xs: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 || xs.is_empty() {
        return xs.to_vec();
    }
    let half = width / 2;
    let n = xs.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let sum: f64 = xs[lo..hi].iter().sum();
        out.push(sum / (hi - lo) as f64);
    }
    out
}

/// Local maxima of `xs` with at least the given prominence, spaced at least
/// `min_separation` samples apart. Plateaus count once, at their midpoint.
///
/// Prominence is the height of a peak above the higher of the two valleys
/// separating it from taller terrain (or from the series boundary).
pub fn find_peaks(xs: &[f64], prominence: f64, min_separation: usize) -> Vec<usize> {
    let candidates = local_maxima(xs);
    let mut kept: Vec<usize> = candidates
        .into_iter()
        .filter(|&i| peak_prominence(xs, i) >= prominence)
        .collect();

    if min_separation > 1 && kept.len() > 1 {
        // Keep higher peaks first, drop any candidate too close to a kept one.
        let mut by_height = kept.clone();
        by_height.sort_by(|&a, &b| {
            xs[b].partial_cmp(&xs[a]).unwrap().then_with(|| a.cmp(&b))
        });
        let mut selected: Vec<usize> = Vec::new();
        for i in by_height {
            if selected
                .iter()
                .all(|&j| i.abs_diff(j) >= min_separation)
            {
                selected.push(i);
            }
        }
        selected.sort_unstable();
        kept = selected;
    }
    kept
}

/// Local minima, found by negating the series.
pub fn find_troughs(xs: &[f64], prominence: f64, min_separation: usize) -> Vec<usize> {
    let negated: Vec<f64> = xs.iter().map(|&x| -x).collect();
    find_peaks(&negated, prominence, min_separation)
}

fn local_maxima(xs: &[f64]) -> Vec<usize> {
    let n = xs.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 <= n.saturating_sub(1) {
        if xs[i] > xs[i - 1] {
            // Scan across a possible plateau.
            let start = i;
            let mut end = i;
            while end + 1 < n && xs[end + 1] == xs[start] {
                end += 1;
            }
            if end + 1 < n && xs[end + 1] < xs[start] {
                peaks.push((start + end) / 2);
            }
            i = end + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

fn peak_prominence(xs: &[f64], peak: usize) -> f64 {
    let height = xs[peak];

    let mut left_min = height;
    let mut i = peak;
    while i > 0 {
        i -= 1;
        if xs[i] > height {
            break;
        }
        left_min = left_min.min(xs[i]);
    }

    let mut right_min = height;
    let mut j = peak;
    while j + 1 < xs.len() {
        j += 1;
        if xs[j] > height {
            break;
        }
        right_min = right_min.min(xs[j]);
    }

    height - left_min.max(right_min)
}
