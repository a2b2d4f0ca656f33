use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::Serialize;

use crate::forge::{ContextResponsePair, ForgeError};

/// Confidence in [0, 1] that a response is appropriate for its context.
pub trait TeacherScorer {
    fn confidence(&self, pair: &ContextResponsePair) -> f64;
}

/// Rule-based teacher whose verdict follows provenance: original and
/// provider responses are appropriate, every corruption is not.
///
/// With `noise > 0` the confidence is pulled toward 0.5 by a per-pair
/// amount in `[0, noise]`, derived from a hash of the pair and `seed`.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleTeacher {
    pub noise: f64,
    pub seed: u64,
}

impl TeacherScorer for OracleTeacher {
    fn confidence(&self, pair: &ContextResponsePair) -> f64 {
        let mut h = DefaultHasher::new();
        self.seed.hash(&mut h);
        pair.context.hash(&mut h);
        pair.response.hash(&mut h);
        pair.provenance.hash(&mut h);
        let u = (h.finish() >> 11) as f64 / (1u64 << 53) as f64;
        let pull = self.noise.clamp(0.0, 1.0) * u;
        if pair.provenance.is_positive() {
            1.0 - pull
        } else {
            pull
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GateStats {
    pub candidates: usize,
    pub kept_positive: usize,
    pub kept_negative: usize,
    /// Size of each class after balancing.
    pub per_class: usize,
}

/// Keeps candidates the teacher is confident about, labels them by the
/// teacher's side of 0.5, then downsamples the larger class uniformly so
/// both classes are the same size. Survivors keep their input order.
pub fn pseudo_label_gate(
    candidates: &[ContextResponsePair],
    teacher: &dyn TeacherScorer,
    threshold: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<ContextResponsePair>, GateStats), ForgeError> {
    if !(threshold > 0.5 && threshold <= 1.0) {
        return Err(ForgeError::InvalidThreshold(threshold));
    }
    if let Some(first) = candidates.first() {
        if let Some(other) = candidates.iter().find(|c| c.domain != first.domain) {
            return Err(ForgeError::MixedDomains(
                first.domain.clone(),
                other.domain.clone(),
            ));
        }
    }
    let mut kept = Vec::new();
    for c in candidates {
        let conf = teacher.confidence(c);
        if !(0.0..=1.0).contains(&conf) {
            return Err(ForgeError::InvalidConfidence(conf));
        }
        if conf.max(1.0 - conf) >= threshold {
            let mut p = c.clone();
            p.label = Some(u8::from(conf >= 0.5));
            p.confidence = Some(conf);
            kept.push(p);
        }
    }
    let pos: Vec<usize> = (0..kept.len())
        .filter(|&i| kept[i].label == Some(1))
        .collect();
    let neg: Vec<usize> = (0..kept.len())
        .filter(|&i| kept[i].label == Some(0))
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(ForgeError::EmptyClass {
            positives: pos.len(),
            negatives: neg.len(),
            total: candidates.len(),
        });
    }
    let per_class = pos.len().min(neg.len());
    let (major, minor) = if pos.len() > neg.len() {
        (&pos, &neg)
    } else {
        (&neg, &pos)
    };
    let mut keep = vec![false; kept.len()];
    for &i in minor {
        keep[i] = true;
    }
    for j in rand::seq::index::sample(rng, major.len(), per_class) {
        keep[major[j]] = true;
    }
    let stats = GateStats {
        candidates: candidates.len(),
        kept_positive: pos.len(),
        kept_negative: neg.len(),
        per_class,
    };
    let out = kept
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p)
        .collect();
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::Provenance;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixed(Vec<f64>);

    impl TeacherScorer for Fixed {
        fn confidence(&self, pair: &ContextResponsePair) -> f64 {
            let i: usize = pair.response.parse().unwrap();
            self.0[i]
        }
    }

    fn candidates(n: usize, prov: impl Fn(usize) -> Provenance) -> Vec<ContextResponsePair> {
        (0..n)
            .map(|i| ContextResponsePair::new("d", vec![format!("c{i}")], i.to_string(), prov(i)))
            .collect()
    }

    #[test]
    fn threshold_definition() {
        let cands = candidates(4, |_| Provenance::Original);
        let t = Fixed(vec![0.95, 0.07, 0.6, 0.93]);
        let (out, stats) =
            pseudo_label_gate(&cands, &t, 0.9, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(
            (stats.kept_positive, stats.kept_negative, stats.per_class),
            (2, 1, 1)
        );
        assert_eq!(out.len(), 2);
        let neg = out.iter().find(|p| p.label == Some(0)).unwrap();
        assert_eq!(neg.response, "1");
        assert_eq!(neg.confidence, Some(0.07));
        assert!(out.iter().all(|p| p.response != "2"));
    }

    #[test]
    fn balancing_downsamples_majority() {
        let cands = candidates(160, |i| {
            if i < 100 {
                Provenance::Original
            } else {
                Provenance::WordDrop
            }
        });
        let (out, stats) = pseudo_label_gate(
            &cands,
            &OracleTeacher::default(),
            0.9,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(stats.per_class, 60);
        assert_eq!(out.iter().filter(|p| p.label == Some(1)).count(), 60);
        assert_eq!(out.iter().filter(|p| p.label == Some(0)).count(), 60);
    }

    #[test]
    fn oracle_teacher_keeps_everything() {
        let cands = candidates(50, |i| {
            if i % 2 == 0 {
                Provenance::Original
            } else {
                Provenance::RandomUtterance
            }
        });
        let (out, _) = pseudo_label_gate(
            &cands,
            &OracleTeacher::default(),
            0.9,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert_eq!(out.len(), 50);
        for p in &out {
            assert_eq!(p.label == Some(1), p.provenance.is_positive());
        }
    }

    #[test]
    fn errors() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let cands = candidates(5, |_| Provenance::Original);
        assert!(matches!(
            pseudo_label_gate(&cands, &OracleTeacher::default(), 0.9, &mut r),
            Err(ForgeError::EmptyClass {
                positives: 5,
                negatives: 0,
                total: 5
            })
        ));
        assert!(matches!(
            pseudo_label_gate(&cands, &OracleTeacher::default(), 0.5, &mut r),
            Err(ForgeError::InvalidThreshold(_))
        ));
        let mut mixed = candidates(2, |_| Provenance::Original);
        mixed[1].domain = "other".into();
        assert!(matches!(
            pseudo_label_gate(&mixed, &OracleTeacher::default(), 0.9, &mut r),
            Err(ForgeError::MixedDomains(..))
        ));
    }

    proptest! {
        #[test]
        fn gate_postconditions(confs in prop::collection::vec(0.0f64..=1.0, 2..200), tau in 0.51f64..=1.0, seed in 0u64..100) {
            let cands = candidates(confs.len(), |_| Provenance::Original);
            let teacher = Fixed(confs);
            match pseudo_label_gate(&cands, &teacher, tau, &mut ChaCha8Rng::seed_from_u64(seed)) {
                Ok((out, stats)) => {
                    let pos = out.iter().filter(|p| p.label == Some(1)).count();
                    prop_assert_eq!(pos * 2, out.len());
                    prop_assert_eq!(pos, stats.per_class);
                    for p in &out {
                        let c = p.confidence.unwrap();
                        prop_assert!(c.max(1.0 - c) >= tau);
                        prop_assert_eq!(p.label, Some(u8::from(c >= 0.5)));
                    }
                }
                Err(ForgeError::EmptyClass { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
