//! Segmented heartbeat representation, the five AAMI beat classes, naive
//! decimation, and the beat-corpus file formats (JSON lines, CSV fallback).

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five AAMI EC57 beat superclasses. A closed set: anything that does
/// not map here is "not a beat" and never becomes a sixth class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BeatClass {
    N,
    S,
    V,
    F,
    Q,
}

impl BeatClass {
    pub const ALL: [BeatClass; 5] = [
        BeatClass::N,
        BeatClass::S,
        BeatClass::V,
        BeatClass::F,
        BeatClass::Q,
    ];

    pub const COUNT: usize = 5;

    /// Stable index in the documented class order (N, S, V, F, Q).
    pub fn index(self) -> usize {
        match self {
            BeatClass::N => 0,
            BeatClass::S => 1,
            BeatClass::V => 2,
            BeatClass::F => 3,
            BeatClass::Q => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<BeatClass> {
        BeatClass::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BeatClass::N => "N",
            BeatClass::S => "S",
            BeatClass::V => "V",
            BeatClass::F => "F",
            BeatClass::Q => "Q",
        }
    }

    pub fn parse(s: &str) -> Option<BeatClass> {
        match s {
            "N" => Some(BeatClass::N),
            "S" => Some(BeatClass::S),
            "V" => Some(BeatClass::V),
            "F" => Some(BeatClass::F),
            "Q" => Some(BeatClass::Q),
            _ => None,
        }
    }
}

impl fmt::Display for BeatClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One segmented, labeled heartbeat.
///
/// `times` are normalized to [0, 1] over the beat window and strictly
/// increasing; `values` are min-max normalized to [0, 1] with the original
/// range kept in `amp_min`/`amp_max` so plots can invert the scaling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Beat {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub label: BeatClass,
    pub record_name: String,
    pub r_peak_index: usize,
    pub effective_frequency: f64,
    #[serde(default)]
    pub amp_min: f64,
    #[serde(default)]
    pub amp_max: f64,
}

impl Beat {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Checks the structural invariants: equal lengths >= 2, times strictly
    /// increasing from 0 to 1, all values finite.
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() || self.times.len() < 2 {
            return Err(Error::Invalid(format!(
                "beat from {}: times/values lengths {} / {}",
                self.record_name,
                self.times.len(),
                self.values.len()
            )));
        }
        if self.times[0] != 0.0 || *self.times.last().unwrap() != 1.0 {
            return Err(Error::Invalid(format!(
                "beat from {}: times must span [0,1], got [{}, {}]",
                self.record_name,
                self.times[0],
                self.times.last().unwrap()
            )));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(format!(
                "beat from {}: times not strictly increasing",
                self.record_name
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "beat from {}: non-finite value",
                self.record_name
            )));
        }
        Ok(())
    }
}

/// Keeps every n-th sample of a beat (indices 0, n, 2n, ...) and renormalizes
/// the retained timestamps back onto [0, 1]. The label and provenance fields
/// are preserved; `effective_frequency` is divided by the factor.
pub fn downsample(beat: &Beat, factor: usize) -> Result<Beat> {
    if factor == 0 {
        return Err(Error::Invalid("downsample factor must be >= 1".into()));
    }
    if factor >= beat.len() {
        return Err(Error::Invalid(format!(
            "downsample factor {} >= beat length {}",
            factor,
            beat.len()
        )));
    }
    if factor == 1 {
        return Ok(beat.clone());
    }
    let times: Vec<f64> = beat.times.iter().step_by(factor).copied().collect();
    let values: Vec<f64> = beat.values.iter().step_by(factor).copied().collect();
    let t0 = times[0];
    let t_last = *times.last().unwrap();
    let span = t_last - t0;
    let times = times.iter().map(|t| (t - t0) / span).collect();
    Ok(Beat {
        times,
        values,
        label: beat.label,
        record_name: beat.record_name.clone(),
        r_peak_index: beat.r_peak_index,
        effective_frequency: beat.effective_frequency / factor as f64,
        amp_min: beat.amp_min,
        amp_max: beat.amp_max,
    })
}

/// Writes a beat corpus as JSON lines, one beat per line.
pub fn write_corpus(path: &Path, beats: &[Beat]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for beat in beats {
        let line = serde_json::to_string(beat).map_err(|e| Error::Serde(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Reads a JSON-lines beat corpus.
pub fn read_corpus(path: &Path) -> Result<Vec<Beat>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut beats = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let beat: Beat = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        beat.validate()?;
        beats.push(beat);
    }
    Ok(beats)
}

/// CSV fallback importer for pre-segmented beats.
///
/// Expected columns: `record_name,label,frequency_hz,v0,v1,...` with one beat
/// per row. Timestamps are taken as uniform over [0, 1]; amplitudes are
/// min-max normalized on import.
pub fn import_csv(path: &Path) -> Result<Vec<Beat>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))?;
    let mut beats = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::parse(path.display().to_string(), i + 2, e.to_string()))?;
        if row.len() < 5 {
            return Err(Error::parse(
                path.display().to_string(),
                i + 2,
                "expected record_name,label,frequency_hz and at least 2 samples",
            ));
        }
        let record_name = row[0].to_string();
        let label = BeatClass::parse(&row[1]).ok_or_else(|| {
            Error::parse(
                path.display().to_string(),
                i + 2,
                format!("unknown beat class {:?}", &row[1]),
            )
        })?;
        let fs: f64 = row[2]
            .parse()
            .map_err(|_| Error::parse(path.display().to_string(), i + 2, "bad frequency"))?;
        let mut raw = Vec::with_capacity(row.len() - 3);
        for field in row.iter().skip(3) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(path.display().to_string(), i + 2, "bad sample value"))?;
            raw.push(v);
        }
        let n = raw.len();
        let (values, amp_min, amp_max) = normalize_amplitude(&raw);
        let times = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let beat = Beat {
            times,
            values,
            label,
            record_name,
            r_peak_index: 0,
            effective_frequency: fs,
            amp_min,
            amp_max,
        };
        beat.validate()?;
        beats.push(beat);
    }
    Ok(beats)
}

/// Per-beat min-max scaling to [0, 1]. A constant window maps to 0.5.
pub fn normalize_amplitude(raw: &[f64]) -> (Vec<f64>, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in raw {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo <= 0.0 {
        return (vec![0.5; raw.len()], lo, hi);
    }
    let span = hi - lo;
    (raw.iter().map(|v| (v - lo) / span).collect(), lo, hi)
}
