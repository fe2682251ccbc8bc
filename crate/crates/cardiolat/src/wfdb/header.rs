//! WFDB `.hea` record-header parsing.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SignalSpec {
    pub file_name: String,
    pub format: u32,
    /// ADC units per millivolt.
    pub gain: f64,
    pub adc_zero: i32,
    pub lead_name: String,
}

#[derive(Debug, Clone)]
pub struct RecordHeader {
    pub record_name: String,
    pub n_signals: usize,
    pub sampling_frequency: u32,
    pub n_samples: usize,
    pub signals: Vec<SignalSpec>,
}

const DEFAULT_GAIN: f64 = 200.0;

/// Parses the text of a `.hea` file. Only format-212 signals are accepted;
/// comment lines (`#`) and unknown trailing fields are ignored.
pub fn parse_header(text: &str) -> Result<RecordHeader> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, first) = lines
        .next()
        .ok_or_else(|| Error::parse("header", 0, "empty header"))?;
    let fields: Vec<&str> = first.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(Error::parse(
            "header",
            line_no,
            "record line needs name, n_signals, fs, n_samples",
        ));
    }
    // Record name may carry a segment count ("100/2"); keep the name part.
    let record_name = fields[0].split('/').next().unwrap_or(fields[0]).to_string();
    let n_signals: usize = fields[1]
        .parse()
        .map_err(|_| Error::parse("header", line_no, format!("bad signal count {:?}", fields[1])))?;
    if n_signals < 1 {
        return Err(Error::parse("header", line_no, "n_signals must be >= 1"));
    }
    // Sampling frequency may carry a counter frequency ("360/360(0)").
    let fs_field = fields[2].split('/').next().unwrap_or(fields[2]);
    let sampling_frequency: u32 = fs_field
        .parse()
        .map_err(|_| Error::parse("header", line_no, format!("bad sampling frequency {:?}", fields[2])))?;
    if sampling_frequency == 0 {
        return Err(Error::parse("header", line_no, "invalid sampling frequency"));
    }
    let n_samples: usize = fields[3]
        .parse()
        .map_err(|_| Error::parse("header", line_no, format!("bad sample count {:?}", fields[3])))?;

    let mut signals = Vec::with_capacity(n_signals);
    for _ in 0..n_signals {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| Error::parse("header", 0, "missing signal specification line"))?;
        signals.push(parse_signal_line(line_no, line)?);
    }

    Ok(RecordHeader {
        record_name,
        n_signals,
        sampling_frequency,
        n_samples,
        signals,
    })
}

fn parse_signal_line(line_no: usize, line: &str) -> Result<SignalSpec> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(Error::parse("header", line_no, "signal line needs file name and format"));
    }
    // Format may carry a sample-per-frame multiplier ("212x1") or skew; the
    // leading integer is the storage format.
    let fmt_digits: String = fields[1].chars().take_while(|c| c.is_ascii_digit()).collect();
    let format: u32 = fmt_digits
        .parse()
        .map_err(|_| Error::parse("header", line_no, format!("bad format tag {:?}", fields[1])))?;
    if format != 212 {
        return Err(Error::parse(
            "header",
            line_no,
            format!("unsupported signal format {format} (only 212 is supported)"),
        ));
    }
    // Gain field: "200", "200/mV", or "200(1024)/mV" with a baseline.
    let gain = match fields.get(2) {
        Some(g) => {
            let g = g.split('/').next().unwrap_or(g);
            let g = g.split('(').next().unwrap_or(g);
            if g.is_empty() {
                DEFAULT_GAIN
            } else {
                let v: f64 = g
                    .parse()
                    .map_err(|_| Error::parse("header", line_no, format!("bad gain {:?}", fields[2])))?;
                if v == 0.0 {
                    DEFAULT_GAIN
                } else {
                    v
                }
            }
        }
        None => DEFAULT_GAIN,
    };
    let adc_zero: i32 = match fields.get(4) {
        Some(z) => z
            .parse()
            .map_err(|_| Error::parse("header", line_no, format!("bad adc zero {:?}", fields[4])))?,
        None => 0,
    };
    // Description is the trailing free text, conventionally the lead name.
    let lead_name = fields.get(8..).map(|f| f.join(" ")).unwrap_or_default();
    Ok(SignalSpec {
        file_name: fields[0].to_string(),
        format,
        gain,
        adc_zero,
        lead_name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const RECORD_100_HEA: &str = "\
100 2 360 650000 0:0:0 0/0/0
100.dat 212 200 11 1024 995 -22131 0 MLII
100.dat 212 200 11 1024 1011 20052 0 V5
# 69 M 1085 1629 x1
";

    #[test]
    fn parses_record_100_header() {
        let h = parse_header(RECORD_100_HEA).unwrap();
        assert_eq!(h.record_name, "100");
        assert_eq!(h.n_signals, 2);
        assert_eq!(h.sampling_frequency, 360);
        assert_eq!(h.n_samples, 650000);
        assert_eq!(h.signals[0].lead_name, "MLII");
        assert_eq!(h.signals[0].gain, 200.0);
        assert_eq!(h.signals[0].adc_zero, 1024);
        assert_eq!(h.signals[1].lead_name, "V5");
    }

    #[test]
    fn rejects_non_212_format() {
        let text = "x 1 360 1000\nx.dat 16 200 11 0 0 0 0 ECG\n";
        let err = parse_header(text).unwrap_err().to_string();
        assert!(err.contains("unsupported signal format"), "{err}");
    }

    #[test]
    fn rejects_zero_frequency() {
        let text = "x 1 0 1000\nx.dat 212 200 11 0 0 0 0 ECG\n";
        let err = parse_header(text).unwrap_err().to_string();
        assert!(err.contains("invalid sampling frequency"), "{err}");
    }

    #[test]
    fn rejects_short_record_line() {
        assert!(parse_header("100 2 360\n").is_err());
    }

    #[test]
    fn gain_with_baseline_suffix() {
        let text = "x 1 360 1000\nx.dat 212 200(1024)/mV 11 0 1024 0 0 0 MLII\n";
        let h = parse_header(text).unwrap();
        assert_eq!(h.signals[0].gain, 200.0);
    }
}
