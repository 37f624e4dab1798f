//! Training-mix sampling by instruction kind.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InstructionKind, InstructionSample};

pub const FRACTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixFractions {
    pub direct: f64,
    pub functional: f64,
    pub spatial: f64,
}

impl Default for MixFractions {
    fn default() -> Self {
        Self {
            direct: 0.50,
            functional: 0.35,
            spatial: 0.15,
        }
    }
}

impl MixFractions {
    /// In [`InstructionKind::ALL`] order.
    pub fn as_array(&self) -> [f64; 3] {
        [self.direct, self.functional, self.spatial]
    }

    pub fn validate(&self) -> Result<(), MixError> {
        let f = self.as_array();
        if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(MixError::BadFractions(format!(
                "fractions must be finite and non-negative, got {f:?}"
            )));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > FRACTION_TOLERANCE {
            return Err(MixError::BadFractions(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

impl std::str::FromStr for MixFractions {
    type Err = MixError;

    /// `"0.5,0.35,0.15"`: direct, functional, spatial.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| MixError::BadFractions(format!("{s:?}: {e}")))?;
        let [direct, functional, spatial] = parts[..] else {
            return Err(MixError::BadFractions(format!(
                "{s:?}: expected three comma-separated fractions"
            )));
        };
        let f = Self {
            direct,
            functional,
            spatial,
        };
        f.validate()?;
        Ok(f)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixSpec {
    pub fractions: MixFractions,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MixError {
    #[error("invalid mix: {0}")]
    BadFractions(String),
    #[error("not enough {kind} samples: need {needed}, pool has {available} (short by {})", needed - available)]
    Insufficient {
        kind: InstructionKind,
        needed: usize,
        available: usize,
    },
}

/// Per-kind counts by largest-remainder rounding of `fraction * total`.
/// Leftover seats go to the largest fractional parts, ties to the earlier kind.
pub fn mix_counts(spec: &MixSpec) -> Result<[usize; 3], MixError> {
    spec.fractions.validate()?;
    let total = spec.total as f64;
    let quotas = spec.fractions.as_array().map(|f| {
        let q = f * total;
        // 0.35 * 700000 lands a hair below the integer; treat it as exact.
        let r = q.round();
        if (q - r).abs() <= FRACTION_TOLERANCE * total.max(1.0) {
            r
        } else {
            q
        }
    });
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(spec.total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    // Floors of non-negative quotas summing to at most `total` cannot overshoot.
    debug_assert_eq!(counts.iter().sum::<usize>(), spec.total);
    Ok(counts)
}

/// Anything that can be sorted into a mix bucket.
pub trait HasKind {
    fn kind(&self) -> InstructionKind;
}

impl HasKind for InstructionSample {
    fn kind(&self) -> InstructionKind {
        self.kind
    }
}

impl HasKind for InstructionKind {
    fn kind(&self) -> InstructionKind {
        *self
    }
}

/// Seeded sampling without replacement: `mix_counts` items of each kind,
/// then the combined dataset shuffled.
pub fn sample_mix<T: HasKind + Clone>(pool: &[T], spec: &MixSpec, seed: u64) -> Result<Vec<T>, MixError> {
    let counts = mix_counts(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.total);
    for (kind, needed) in InstructionKind::ALL.into_iter().zip(counts) {
        let bucket: Vec<&T> = pool.iter().filter(|s| s.kind() == kind).collect();
        if bucket.len() < needed {
            return Err(MixError::Insufficient {
                kind,
                needed,
                available: bucket.len(),
            });
        }
        let mut picked = index::sample(&mut rng, bucket.len(), needed).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| bucket[i].clone()));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(total: usize) -> MixSpec {
        MixSpec {
            fractions: MixFractions::default(),
            total,
        }
    }

    #[test]
    fn default_ratio_counts() {
        assert_eq!(mix_counts(&spec(1000)).unwrap(), [500, 350, 150]);
        assert_eq!(mix_counts(&spec(700_000)).unwrap(), [350_000, 245_000, 105_000]);
    }

    #[test]
    fn largest_remainder_small_total() {
        assert_eq!(mix_counts(&spec(7)).unwrap(), [4, 2, 1]);
        assert_eq!(mix_counts(&spec(0)).unwrap(), [0, 0, 0]);
        assert_eq!(mix_counts(&spec(1)).unwrap(), [1, 0, 0]);
    }

    #[test]
    fn ties_go_to_the_earlier_kind() {
        let s = MixSpec {
            fractions: MixFractions {
                direct: 0.25,
                functional: 0.25,
                spatial: 0.5,
            },
            total: 2,
        };
        // 0.5, 0.5, 1.0 → floors 0, 0, 1; one seat left, tie between the first two.
        assert_eq!(mix_counts(&s).unwrap(), [1, 0, 1]);
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!("0.5,0.35,0.15".parse::<MixFractions>().is_ok());
        assert!("0.5,0.35,0.2".parse::<MixFractions>().is_err());
        assert!("0.5,0.5".parse::<MixFractions>().is_err());
        assert!("1.5,-0.35,-0.15".parse::<MixFractions>().is_err());
    }

    fn pool(n: usize) -> Vec<InstructionKind> {
        InstructionKind::ALL
            .iter()
            .flat_map(|&k| std::iter::repeat_n(k, n))
            .collect()
    }

    #[derive(Debug, Clone, PartialEq)]
    struct Tagged(InstructionKind, usize);

    impl HasKind for Tagged {
        fn kind(&self) -> InstructionKind {
            self.0
        }
    }

    #[test]
    fn sampling_is_deterministic_and_counts_match() {
        let p: Vec<Tagged> = pool(20).into_iter().enumerate().map(|(i, k)| Tagged(k, i)).collect();
        let a = sample_mix(&p, &spec(20), 3).unwrap();
        assert_eq!(a, sample_mix(&p, &spec(20), 3).unwrap());
        assert_ne!(a, sample_mix(&p, &spec(20), 4).unwrap());
        assert_eq!(a.iter().filter(|s| s.0 == InstructionKind::Direct).count(), 10);
        let mut ids: Vec<usize> = a.iter().map(|s| s.1).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 20, "sampled without replacement");
    }

    #[test]
    fn shortfall_names_kind() {
        let mut p = pool(10);
        p.retain(|k| *k != InstructionKind::Spatial);
        let err = sample_mix(&p, &spec(20), 0).unwrap_err();
        assert_eq!(
            err,
            MixError::Insufficient {
                kind: InstructionKind::Spatial,
                needed: 3,
                available: 0
            }
        );
        assert!(err.to_string().contains("short by 3"));
        assert!(sample_mix(&p, &spec(0), 0).unwrap().is_empty());
    }
}
