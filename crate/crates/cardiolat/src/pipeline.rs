//! End-to-end plumbing: stratified splits, seed-ensemble prediction, the
//! downsampling robustness experiment, and run manifests.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beat::{Beat, BeatClass};
use crate::error::{Error, Result};
use crate::gbdt::GbdtModel;
use crate::latent::LatentOdeModel;
use crate::metrics::{summarize, EvalSummary};
use crate::ode::SolverConfig;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split at the beat level: each class is shuffled and divided
/// by the given fractions, so class proportions are preserved in every
/// partition. Deterministic given the seed.
pub fn split_dataset(labels: &[BeatClass], fractions: &SplitFractions, seed: u64) -> Result<Split> {
    let sum = fractions.train + fractions.val + fractions.test;
    if (sum - 1.0).abs() > 1e-9 || fractions.train <= 0.0 || fractions.val < 0.0 || fractions.test < 0.0
    {
        return Err(Error::Invalid(format!("split fractions must sum to 1, got {sum}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in BeatClass::ALL {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        let n = members.len();
        if n > 0 && n < 3 {
            log::warn!(
                "class {} has only {n} beat(s); placing all of them in train",
                class.as_str()
            );
            split.train.extend(&members);
            continue;
        }
        let n_train = (n as f64 * fractions.train).round() as usize;
        let n_val = (n as f64 * fractions.val).round() as usize;
        let n_train = n_train.min(n);
        let n_val = n_val.min(n - n_train);
        split.train.extend(&members[..n_train]);
        split.val.extend(&members[n_train..n_train + n_val]);
        split.test.extend(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// One ensemble prediction: the individual votes and the final class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub votes: Vec<BeatClass>,
    pub final_class: BeatClass,
    /// Per-class probability averaged over the ensemble.
    pub mean_probs: Vec<f64>,
}

/// Seed-ensemble prediction: draw `n_samples` latent samples of the beat,
/// classify each, return the modal class. Member i uses seed
/// `base_seed + i`. Ties break toward the candidate with the larger summed
/// probability, then toward class order.
pub fn predict_ensemble(
    encoder: &LatentOdeModel,
    classifier: &GbdtModel,
    beat: &Beat,
    n_samples: usize,
    base_seed: u64,
    solver: &SolverConfig,
) -> Result<Prediction> {
    if n_samples == 0 {
        return Err(Error::Invalid("ensemble size must be >= 1".into()));
    }
    // One encoder pass; only the noise differs between ensemble members.
    let (mu, sigma) = encoder.encode_dist(beat, solver)?;
    let mut vote_list = Vec::with_capacity(n_samples);
    let mut votes = [0usize; BeatClass::COUNT];
    let mut prob_sum = vec![0.0; BeatClass::COUNT];
    for i in 1..=n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(i as u64));
        let z0: Vec<f64> = mu
            .iter()
            .zip(sigma.iter())
            .map(|(m, s)| m + s * crate::latent::standard_normal(&mut rng))
            .collect();
        let p = classifier.predict_proba(&z0);
        let mut best = 0;
        for (c, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = c;
            }
        }
        votes[best] += 1;
        vote_list.push(BeatClass::from_index(best).unwrap());
        for (acc, v) in prob_sum.iter_mut().zip(p.iter()) {
            *acc += v;
        }
    }
    let mut winner = 0;
    for c in 1..BeatClass::COUNT {
        if votes[c] > votes[winner]
            || (votes[c] == votes[winner] && prob_sum[c] > prob_sum[winner])
        {
            winner = c;
        }
    }
    let mean_probs: Vec<f64> = prob_sum.iter().map(|p| p / n_samples as f64).collect();
    Ok(Prediction {
        votes: vote_list,
        final_class: BeatClass::from_index(winner).unwrap(),
        mean_probs,
    })
}

/// Evaluates the pipeline on a beat set with ensemble prediction.
pub fn evaluate(
    encoder: &LatentOdeModel,
    classifier: &GbdtModel,
    beats: &[Beat],
    n_samples: usize,
    base_seed: u64,
    solver: &SolverConfig,
) -> Result<EvalSummary> {
    let mut probs = Vec::with_capacity(beats.len());
    let mut preds = Vec::with_capacity(beats.len());
    let truth: Vec<BeatClass> = beats.iter().map(|b| b.label).collect();
    for (i, beat) in beats.iter().enumerate() {
        let p = predict_ensemble(
            encoder,
            classifier,
            beat,
            n_samples,
            base_seed.wrapping_add((i as u64) << 32),
            solver,
        )?;
        preds.push(p.final_class);
        probs.push(p.mean_probs);
    }
    Ok(summarize(&probs, &preds, &truth))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyResult {
    pub frequency_hz: f64,
    pub downsample_factor: usize,
    pub macro_auc: f64,
    pub macro_f1: f64,
    pub overall_accuracy: f64,
    pub summary: EvalSummary,
}

/// Robustness experiment: evaluate the already-trained models on the test
/// beats at the native rate and at 1/4 and 1/8 rates. Nothing is retrained;
/// only the observation grid changes.
pub fn run_frequency_experiment(
    encoder: &LatentOdeModel,
    classifier: &GbdtModel,
    test_beats: &[Beat],
    n_samples: usize,
    base_seed: u64,
    solver: &SolverConfig,
) -> Result<Vec<FrequencyResult>> {
    let mut out = Vec::new();
    for factor in [1usize, 4, 8] {
        let beats: Vec<Beat> = if factor == 1 {
            test_beats.to_vec()
        } else {
            test_beats
                .iter()
                .map(|b| crate::beat::downsample(b, factor))
                .collect::<Result<_>>()?
        };
        let summary = evaluate(encoder, classifier, &beats, n_samples, base_seed, solver)?;
        out.push(FrequencyResult {
            frequency_hz: beats[0].effective_frequency,
            downsample_factor: factor,
            macro_auc: summary.macro_auc,
            macro_f1: summary.macro_f1,
            overall_accuracy: summary.overall_accuracy,
            summary,
        });
    }
    Ok(out)
}

/// Run manifest: configuration echo plus SHA-256 of every input and output
/// artifact, so a run can be audited and reproduced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub seed: u64,
    pub config_json: String,
    /// path -> sha256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl ExperimentManifest {
    pub fn new(command: &str, seed: u64, config_json: String) -> Self {
        ExperimentManifest {
            command: command.to_string(),
            seed,
            config_json,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: &[(BeatClass, usize)]) -> Vec<BeatClass> {
        let mut out = Vec::new();
        for &(c, n) in counts {
            out.extend(std::iter::repeat(c).take(n));
        }
        out
    }

    #[test]
    fn split_partitions_every_index_once() {
        let l = labels(&[(BeatClass::N, 100), (BeatClass::V, 40), (BeatClass::S, 20)]);
        let s = split_dataset(&l, &SplitFractions::default(), 7).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..160).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_stratified() {
        let l = labels(&[(BeatClass::N, 1000), (BeatClass::V, 100)]);
        let s = split_dataset(&l, &SplitFractions::default(), 1).unwrap();
        let v_train = s.train.iter().filter(|&&i| l[i] == BeatClass::V).count();
        let v_val = s.val.iter().filter(|&&i| l[i] == BeatClass::V).count();
        let v_test = s.test.iter().filter(|&&i| l[i] == BeatClass::V).count();
        assert_eq!(v_train, 70);
        assert_eq!(v_val, 15);
        assert_eq!(v_test, 15);
        assert_eq!(s.train.len(), 770);
    }

    #[test]
    fn split_deterministic_and_seed_sensitive() {
        let l = labels(&[(BeatClass::N, 50), (BeatClass::V, 50)]);
        let a = split_dataset(&l, &SplitFractions::default(), 5).unwrap();
        let b = split_dataset(&l, &SplitFractions::default(), 5).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = split_dataset(&l, &SplitFractions::default(), 6).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn bad_fractions_rejected() {
        let l = labels(&[(BeatClass::N, 10)]);
        let f = SplitFractions {
            train: 0.5,
            val: 0.2,
            test: 0.2,
        };
        assert!(split_dataset(&l, &f, 0).is_err());
    }

    #[test]
    fn manifest_hashes_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("input.txt");
        std::fs::write(&f, b"hello").unwrap();
        let mut m = ExperimentManifest::new("ingest", 0, "{}".into());
        m.add_input(&f).unwrap();
        // Known digest of "hello".
        assert_eq!(
            m.inputs.values().next().unwrap(),
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        let out = dir.path().join("manifest.json");
        m.write(&out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.contains("input.txt"));
    }
}
