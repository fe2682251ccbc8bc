//! SMOTE oversampling in latent space: each synthetic point is a random
//! convex combination of a minority sample and one of its k nearest
//! same-class neighbors. Every minority class is grown to the majority
//! class count. Deterministic given the seed; original rows are preserved
//! unchanged as a prefix of the output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::beat::BeatClass;
use crate::error::{Error, Result};
use crate::latent::LatentVector;

#[derive(Debug, Clone)]
pub struct SmoteConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig { k: 5, seed: 0 }
    }
}

pub fn class_counts(latents: &[LatentVector]) -> [usize; BeatClass::COUNT] {
    let mut counts = [0usize; BeatClass::COUNT];
    for l in latents {
        counts[l.label.index()] += 1;
    }
    counts
}

/// Balances the set so every class matches the majority count. Synthetic
/// rows carry the class, the frequency of their base sample, and a fresh
/// beat id above all input ids.
pub fn balance(latents: &[LatentVector], cfg: &SmoteConfig) -> Result<Vec<LatentVector>> {
    if latents.is_empty() {
        return Err(Error::Invalid("cannot balance an empty latent set".into()));
    }
    if cfg.k == 0 {
        return Err(Error::Invalid("smote requires k >= 1".into()));
    }
    let dim = latents[0].z0.len();
    for l in latents {
        if l.z0.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                got: l.z0.len(),
                context: "latent vector".into(),
            });
        }
    }
    let counts = class_counts(latents);
    let target = *counts.iter().max().unwrap();

    let mut out = latents.to_vec();
    let mut next_id = latents.iter().map(|l| l.beat_id).max().unwrap_or(0) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Class order is fixed, so the draw sequence (and thus the output) is
    // reproducible.
    for class in BeatClass::ALL {
        let have = counts[class.index()];
        if have == 0 || have >= target {
            continue;
        }
        let members: Vec<&LatentVector> =
            latents.iter().filter(|l| l.label == class).collect();
        let synths = synthesize(&members, target - have, cfg.k, &mut rng, &mut next_id)?;
        out.extend(synths);
    }
    Ok(out)
}

/// Generate `n_new` synthetic points from `members` (all one class).
fn synthesize(
    members: &[&LatentVector],
    n_new: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
    next_id: &mut u64,
) -> Result<Vec<LatentVector>> {
    if members.len() < 2 {
        return Err(Error::Invalid(format!(
            "class {} has {} sample(s); smote needs at least 2",
            members[0].label.as_str(),
            members.len()
        )));
    }
    let k_eff = k.min(members.len() - 1);
    let neighbors = nearest_neighbors(members, k_eff);
    let mut out = Vec::with_capacity(n_new);
    for _ in 0..n_new {
        let i = rng.gen_range(0..members.len());
        let nn = neighbors[i][rng.gen_range(0..k_eff)];
        let u: f64 = rng.gen();
        let base = members[i];
        let other = members[nn];
        let z0: Vec<f64> = base
            .z0
            .iter()
            .zip(other.z0.iter())
            .map(|(a, b)| a + u * (b - a))
            .collect();
        out.push(LatentVector {
            beat_id: *next_id,
            label: base.label,
            effective_frequency: base.effective_frequency,
            seed: base.seed,
            z0,
        });
        *next_id += 1;
    }
    Ok(out)
}

/// Exact k nearest neighbors by squared Euclidean distance, excluding self.
/// Ties break toward the lower index.
fn nearest_neighbors(members: &[&LatentVector], k: usize) -> Vec<Vec<usize>> {
    let n = members.len();
    let mut result = Vec::with_capacity(n);
    for i in 0..n {
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq_dist(&members[i].z0, &members[j].z0), j))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        result.push(dists.iter().take(k).map(|&(_, j)| j).collect());
    }
    result
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(id: u64, class: BeatClass, z0: Vec<f64>) -> LatentVector {
        LatentVector {
            beat_id: id,
            label: class,
            effective_frequency: 360.0,
            seed: 0,
            z0,
        }
    }

    fn small_set() -> Vec<LatentVector> {
        let mut set = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut id = 0;
        for _ in 0..20 {
            set.push(lv(id, BeatClass::N, (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()));
            id += 1;
        }
        for _ in 0..5 {
            set.push(lv(id, BeatClass::V, (0..3).map(|_| rng.gen_range(2.0..3.0)).collect()));
            id += 1;
        }
        for _ in 0..3 {
            set.push(lv(id, BeatClass::S, (0..3).map(|_| rng.gen_range(-3.0..-2.0)).collect()));
            id += 1;
        }
        set
    }

    #[test]
    fn balances_all_classes_to_majority() {
        let set = small_set();
        let out = balance(&set, &SmoteConfig::default()).unwrap();
        let counts = class_counts(&out);
        assert_eq!(counts[BeatClass::N.index()], 20);
        assert_eq!(counts[BeatClass::V.index()], 20);
        assert_eq!(counts[BeatClass::S.index()], 20);
        // Absent classes stay absent.
        assert_eq!(counts[BeatClass::F.index()], 0);
        assert_eq!(counts[BeatClass::Q.index()], 0);
        assert_eq!(out.len(), 60);
    }

    #[test]
    fn originals_preserved_as_prefix() {
        let set = small_set();
        let out = balance(&set, &SmoteConfig::default()).unwrap();
        for (orig, kept) in set.iter().zip(out.iter()) {
            assert_eq!(orig.beat_id, kept.beat_id);
            assert_eq!(orig.z0, kept.z0);
        }
        // Synthetic ids do not collide with originals.
        let max_orig = set.iter().map(|l| l.beat_id).max().unwrap();
        for l in &out[set.len()..] {
            assert!(l.beat_id > max_orig);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let set = small_set();
        let a = balance(&set, &SmoteConfig { k: 3, seed: 7 }).unwrap();
        let b = balance(&set, &SmoteConfig { k: 3, seed: 7 }).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.z0, y.z0);
        }
        let c = balance(&set, &SmoteConfig { k: 3, seed: 8 }).unwrap();
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x.z0 != y.z0));
    }

    #[test]
    fn synthetic_points_lie_on_segments() {
        // With two points per minority class every synthetic sample must lie
        // on the segment between them: z = a + u (b - a), u in [0, 1).
        let set = vec![
            lv(0, BeatClass::N, vec![0.0, 0.0]),
            lv(1, BeatClass::N, vec![0.1, 0.1]),
            lv(2, BeatClass::N, vec![0.2, 0.0]),
            lv(3, BeatClass::N, vec![0.0, 0.2]),
            lv(4, BeatClass::V, vec![1.0, 2.0]),
            lv(5, BeatClass::V, vec![3.0, 6.0]),
        ];
        let out = balance(&set, &SmoteConfig { k: 5, seed: 1 }).unwrap();
        for p in out.iter().filter(|l| l.label == BeatClass::V).skip(2) {
            // Segment between (1,2) and (3,6): y = 2x, x in [1, 3].
            assert!((p.z0[1] - 2.0 * p.z0[0]).abs() < 1e-12, "{:?}", p.z0);
            assert!((1.0..=3.0).contains(&p.z0[0]));
        }
    }

    #[test]
    fn already_balanced_set_is_unchanged() {
        let set = vec![
            lv(0, BeatClass::N, vec![0.0]),
            lv(1, BeatClass::N, vec![1.0]),
            lv(2, BeatClass::V, vec![5.0]),
            lv(3, BeatClass::V, vec![6.0]),
        ];
        let out = balance(&set, &SmoteConfig::default()).unwrap();
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn singleton_class_is_an_error() {
        let set = vec![
            lv(0, BeatClass::N, vec![0.0]),
            lv(1, BeatClass::N, vec![1.0]),
            lv(2, BeatClass::V, vec![5.0]),
        ];
        assert!(balance(&set, &SmoteConfig::default()).is_err());
    }

    #[test]
    fn knn_oracle_small_case() {
        let pts = vec![
            lv(0, BeatClass::N, vec![0.0, 0.0]),
            lv(1, BeatClass::N, vec![1.0, 0.0]),
            lv(2, BeatClass::N, vec![0.0, 3.0]),
            lv(3, BeatClass::N, vec![5.0, 5.0]),
        ];
        let refs: Vec<&LatentVector> = pts.iter().collect();
        let nn = nearest_neighbors(&refs, 2);
        assert_eq!(nn[0], vec![1, 2]);
        assert_eq!(nn[1], vec![0, 2]);
        assert_eq!(nn[2], vec![0, 1]);
        assert_eq!(nn[3], vec![2, 1]);
    }

    #[test]
    fn synthetic_frequency_matches_base_class_samples() {
        let mut set = small_set();
        for l in set.iter_mut().filter(|l| l.label == BeatClass::V) {
            l.effective_frequency = 90.0;
        }
        let out = balance(&set, &SmoteConfig::default()).unwrap();
        for l in out.iter().filter(|l| l.label == BeatClass::V) {
            assert_eq!(l.effective_frequency, 90.0);
        }
    }
}
