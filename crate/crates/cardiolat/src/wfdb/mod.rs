//! MIT-BIH / WFDB ingestion: header grammar, format-212 signal decoding,
//! annotation streams, AAMI labeling, baseline removal, and beat
//! segmentation on the MLII channel.

pub mod aami;
pub mod annot;
pub mod dat;
pub mod denoise;
pub mod header;
pub mod segment;

pub use aami::map_aami;
pub use annot::{parse_annotations, Annotation};
pub use dat::{decode_format212, encode_format212};
pub use denoise::denoise;
pub use header::{parse_header, RecordHeader};
pub use segment::{segment_beats, SegmentOutcome, WINDOW_SAMPLES};

use std::path::Path;

use crate::beat::Beat;
use crate::error::{Error, Result};

#[derive(Debug, Default, serde::Serialize)]
pub struct IngestSummary {
    pub records: usize,
    pub records_without_mlii: usize,
    pub beats: usize,
    pub skipped_beats: usize,
}

/// Ingests one record (`<dir>/<name>.hea/.dat/.atr`): decode, select MLII,
/// convert to millivolts, denoise, segment. Returns `None` when the record
/// has no MLII channel.
pub fn ingest_record(dir: &Path, name: &str) -> Result<Option<SegmentOutcome>> {
    let hea_path = dir.join(format!("{name}.hea"));
    let text = std::fs::read_to_string(&hea_path)
        .map_err(|e| Error::io(hea_path.display().to_string(), e))?;
    let header = parse_header(&text)?;

    let Some(mlii) = header.signals.iter().position(|s| s.lead_name == "MLII") else {
        log::warn!("record {name}: no MLII channel, skipping");
        return Ok(None);
    };

    let dat_path = dir.join(format!("{name}.dat"));
    let bytes = std::fs::read(&dat_path).map_err(|e| Error::io(dat_path.display().to_string(), e))?;
    let signals = decode_format212(&bytes, header.n_samples, header.n_signals)?;
    let spec = &header.signals[mlii];
    let millivolts: Vec<f64> = signals[mlii]
        .iter()
        .map(|&adc| (adc - spec.adc_zero) as f64 / spec.gain)
        .collect();
    let fs = header.sampling_frequency as f64;
    let clean = denoise(&millivolts, fs)?;

    let atr_path = dir.join(format!("{name}.atr"));
    let atr_bytes =
        std::fs::read(&atr_path).map_err(|e| Error::io(atr_path.display().to_string(), e))?;
    let annotations = parse_annotations(&atr_bytes)?;

    segment_beats(&clean, &annotations, fs, name).map(Some)
}

/// Ingests every `*.hea` record in a directory, in lexicographic record
/// order for determinism.
pub fn ingest_corpus(dir: &Path) -> Result<(Vec<Beat>, IngestSummary)> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|entry| {
            let entry = entry.ok()?;
            let name = entry.file_name().into_string().ok()?;
            name.strip_suffix(".hea").map(str::to_string)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Invalid(format!(
            "no .hea records found in {}",
            dir.display()
        )));
    }

    let mut beats = Vec::new();
    let mut summary = IngestSummary::default();
    for name in &names {
        summary.records += 1;
        match ingest_record(dir, name)? {
            Some(outcome) => {
                summary.beats += outcome.beats.len();
                summary.skipped_beats += outcome.skipped;
                beats.extend(outcome.beats);
            }
            None => summary.records_without_mlii += 1,
        }
    }
    Ok((beats, summary))
}
