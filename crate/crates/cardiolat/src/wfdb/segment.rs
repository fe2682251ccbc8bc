//! Beat segmentation: a fixed window around each annotated R peak.

use crate::beat::{normalize_amplitude, Beat};
use crate::error::{Error, Result};
use crate::wfdb::aami::map_aami;
use crate::wfdb::annot::Annotation;

/// Samples kept before the R peak (at 360 Hz).
pub const PRE_SAMPLES: usize = 99;
/// Samples kept after the R peak (at 360 Hz).
pub const POST_SAMPLES: usize = 180;
/// Total window length.
pub const WINDOW_SAMPLES: usize = PRE_SAMPLES + POST_SAMPLES + 1;

#[derive(Debug, Default)]
pub struct SegmentOutcome {
    pub beats: Vec<Beat>,
    /// Labeled beats whose window overran the record bounds.
    pub skipped: usize,
}

/// Cuts one 280-sample beat per labeled annotation. Annotation sample
/// indices are trusted as R-peak locations. Windows that do not fit inside
/// the record are skipped and counted.
pub fn segment_beats(
    signal: &[f64],
    annotations: &[Annotation],
    fs: f64,
    record_name: &str,
) -> Result<SegmentOutcome> {
    if fs <= 0.0 {
        return Err(Error::Invalid("sampling frequency must be positive".into()));
    }
    let mut outcome = SegmentOutcome::default();
    let n = signal.len();
    for ann in annotations {
        let Some(label) = map_aami(ann.symbol) else {
            continue;
        };
        let r = ann.sample_index as usize;
        if r < PRE_SAMPLES || r + POST_SAMPLES >= n {
            outcome.skipped += 1;
            continue;
        }
        let window = &signal[r - PRE_SAMPLES..=r + POST_SAMPLES];
        let (values, amp_min, amp_max) = normalize_amplitude(window);
        let times = (0..WINDOW_SAMPLES)
            .map(|i| i as f64 / (WINDOW_SAMPLES - 1) as f64)
            .collect();
        outcome.beats.push(Beat {
            times,
            values,
            label,
            record_name: record_name.to_string(),
            r_peak_index: r,
            effective_frequency: fs,
            amp_min,
            amp_max,
        });
    }
    Ok(outcome)
}
