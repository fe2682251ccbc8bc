//! Synthetic beat generator for desk-scale tests and demos. Each class gets
//! a distinct morphology (QRS width, T-wave amplitude, notch features) so a
//! classifier has real signal to find, plus mild per-beat jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::beat::{Beat, BeatClass};
use crate::wfdb::segment::{PRE_SAMPLES, WINDOW_SAMPLES};

fn gauss(t: f64, center: f64, width: f64) -> f64 {
    let d = (t - center) / width;
    (-0.5 * d * d).exp()
}

/// Class prototype on [0, 1]; the R peak sits at the segmentation offset.
fn prototype(class: BeatClass, t: f64, a: f64, b: f64) -> f64 {
    let r = PRE_SAMPLES as f64 / (WINDOW_SAMPLES - 1) as f64;
    match class {
        // Narrow QRS, clear T wave.
        BeatClass::N => gauss(t, r, 0.02 + 0.004 * a) - 0.25 * gauss(t, r - 0.06, 0.015)
            + (0.30 + 0.05 * b) * gauss(t, r + 0.35, 0.07),
        // Early, small P region and narrow QRS.
        BeatClass::S => gauss(t, r, 0.018) + 0.35 * gauss(t, r - 0.17 - 0.02 * a, 0.02)
            + 0.22 * gauss(t, r + 0.33, 0.06),
        // Wide, high-amplitude QRS, inverted T.
        BeatClass::V => (1.1 + 0.1 * a) * gauss(t, r, 0.06 + 0.01 * b)
            - (0.4 + 0.05 * a) * gauss(t, r + 0.30, 0.08),
        // Fusion: intermediate width with a notch.
        BeatClass::F => gauss(t, r, 0.04) + 0.5 * gauss(t, r + 0.05, 0.02 + 0.005 * a)
            + 0.15 * gauss(t, r + 0.34, 0.07),
        // Paced / unknown: broad plateau-like complex.
        BeatClass::Q => 0.8 * gauss(t, r + 0.02 * b, 0.10) + 0.3 * gauss(t, r + 0.22, 0.10),
    }
}

/// One normalized synthetic beat at the native 360 Hz window length.
pub fn make_beat(class: BeatClass, rng: &mut ChaCha8Rng) -> Beat {
    let n = WINDOW_SAMPLES;
    let a: f64 = rng.gen_range(-1.0..1.0);
    let b: f64 = rng.gen_range(-1.0..1.0);
    let noise_level = 0.015;
    let mut values: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            prototype(class, t, a, b) + noise_level * rng.gen_range(-1.0..1.0)
        })
        .collect();
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for v in values.iter_mut() {
        *v = (*v - lo) / (hi - lo);
    }
    Beat {
        times: (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
        values,
        label: class,
        record_name: "synthetic".into(),
        r_peak_index: PRE_SAMPLES,
        effective_frequency: 360.0,
        amp_min: lo,
        amp_max: hi,
    }
}

/// Deterministic corpus with the given per-class counts, interleaved by
/// class so any prefix is roughly balanced.
pub fn make_corpus(counts: &[(BeatClass, usize)], seed: u64) -> Vec<Beat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<(BeatClass, usize)> = counts.to_vec();
    let mut out = Vec::with_capacity(counts.iter().map(|(_, n)| n).sum());
    loop {
        let mut emitted = false;
        for slot in remaining.iter_mut() {
            if slot.1 > 0 {
                out.push(make_beat(slot.0, &mut rng));
                slot.1 -= 1;
                emitted = true;
            }
        }
        if !emitted {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beats_are_valid_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for class in BeatClass::ALL {
            let beat = make_beat(class, &mut rng);
            beat.validate().unwrap();
            assert_eq!(beat.len(), WINDOW_SAMPLES);
            let lo = beat.values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = beat.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let spec = [(BeatClass::N, 10), (BeatClass::V, 4), (BeatClass::S, 2)];
        let a = make_corpus(&spec, 3);
        assert_eq!(a.len(), 16);
        assert_eq!(a.iter().filter(|b| b.label == BeatClass::V).count(), 4);
        let b = make_corpus(&spec, 3);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.values, y.values);
        }
    }

    #[test]
    fn classes_are_morphologically_distinct() {
        // Mean squared distance between class prototypes should dominate
        // the within-class noise.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n_mean = |c: BeatClass, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut acc = vec![0.0; WINDOW_SAMPLES];
            for _ in 0..8 {
                let b = make_beat(c, rng);
                for (a, v) in acc.iter_mut().zip(b.values.iter()) {
                    *a += v / 8.0;
                }
            }
            acc
        };
        let n = n_mean(BeatClass::N, &mut rng);
        let v = n_mean(BeatClass::V, &mut rng);
        let dist: f64 = n.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            / WINDOW_SAMPLES as f64;
        assert!(dist > 0.005, "N/V prototype distance {dist}");
    }
}
