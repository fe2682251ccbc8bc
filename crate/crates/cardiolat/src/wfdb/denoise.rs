//! Baseline-wander removal: a two-stage median filter (200 ms then 600 ms
//! windows) estimates the baseline, which is subtracted from the signal.

use crate::error::{Error, Result};

/// Removes baseline wander. Output has the same length as the input.
pub fn denoise(signal: &[f64], fs: f64) -> Result<Vec<f64>> {
    if fs <= 0.0 {
        return Err(Error::Invalid("sampling frequency must be positive".into()));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample in denoise input".into()));
    }
    let w1 = odd_window(0.2 * fs);
    let w2 = odd_window(0.6 * fs);
    let stage1 = median_filter(signal, w1);
    let baseline = median_filter(&stage1, w2);
    Ok(signal
        .iter()
        .zip(baseline.iter())
        .map(|(x, b)| x - b)
        .collect())
}

/// Half-width (in samples) of the wider filter stage; callers that compare
/// denoised signals should discard this many samples at each edge.
pub fn edge_margin(fs: f64) -> usize {
    odd_window(0.6 * fs) / 2
}

fn odd_window(samples: f64) -> usize {
    let w = samples.round() as usize;
    let w = w.max(1);
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Moving median with an odd window; the window shrinks symmetrically at
/// the edges.
fn median_filter(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let half = w / 2;
    let mut out = Vec::with_capacity(n);
    let mut buf: Vec<f64> = Vec::with_capacity(w);
    for i in 0..n {
        let reach = half.min(i).min(n - 1 - i);
        buf.clear();
        buf.extend_from_slice(&x[i - reach..=i + reach]);
        let mid = buf.len() / 2;
        let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        out.push(*m);
    }
    out
}
