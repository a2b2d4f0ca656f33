use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::meta_eval::{spearman, MetaEvalError};

pub const MIN_RECORDS: usize = 10;
pub const MIN_RESAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub rho_a: f64,
    pub rho_b: f64,
    /// One-sided p-value for "A correlates better than B".
    pub p_value: f64,
    pub resamples: usize,
    /// Resamples discarded because a resampled vector was constant.
    pub redraws: usize,
}

/// Paired bootstrap over record indices.
///
/// Each resample draws `n` indices with replacement and recomputes both
/// correlations on the same indices. The p-value is the share of
/// resamples where B does at least as well as A, with exact ties counted
/// as one half.
pub fn bootstrap_compare(
    scores_a: &[f64],
    scores_b: &[f64],
    human: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult, MetaEvalError> {
    let n = human.len();
    if scores_a.len() != n || scores_b.len() != n {
        return Err(MetaEvalError::LengthMismatch(scores_a.len(), n));
    }
    if n < MIN_RECORDS {
        return Err(MetaEvalError::TooFewSamples(n));
    }
    if resamples < MIN_RESAMPLES {
        return Err(MetaEvalError::TooFewResamples(resamples));
    }
    let rho_a = spearman(scores_a, human)?;
    let rho_b = spearman(scores_b, human)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sa, mut sb, mut sq) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut at_least = 0.0f64;
    let mut redraws = 0usize;
    let max_redraws = resamples * 100;
    let mut done = 0;
    while done < resamples {
        for i in 0..n {
            let k = rng.gen_range(0..n);
            sa[i] = scores_a[k];
            sb[i] = scores_b[k];
            sq[i] = human[k];
        }
        match (spearman(&sa, &sq), spearman(&sb, &sq)) {
            (Ok(a), Ok(b)) => {
                if b > a {
                    at_least += 1.0;
                } else if b == a {
                    at_least += 0.5;
                }
                done += 1;
            }
            (Err(MetaEvalError::Degenerate), _) | (_, Err(MetaEvalError::Degenerate)) => {
                redraws += 1;
                if redraws > max_redraws {
                    return Err(MetaEvalError::Degenerate);
                }
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    if redraws > 0 {
        log::warn!("bootstrap redrew {redraws} degenerate resamples");
    }
    Ok(BootstrapResult {
        rho_a,
        rho_b,
        p_value: at_least / resamples as f64,
        resamples,
        redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn human(n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..n).map(|_| rng.gen_range(1..=5) as f64).collect()
    }

    #[test]
    fn identical_systems_give_one_half() {
        let q = human(60);
        let a: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(i, v)| v + (i % 7) as f64 * 0.3)
            .collect();
        let r = bootstrap_compare(&a, &a, &q, 2000, 1).unwrap();
        assert!((r.p_value - 0.5).abs() <= 0.05);
    }

    #[test]
    fn oracle_beats_anti_oracle() {
        let q = human(100);
        let anti: Vec<f64> = q.iter().map(|v| -v).collect();
        let r = bootstrap_compare(&q, &anti, &q, 2000, 7).unwrap();
        assert!(r.p_value < 0.01);
        assert_eq!(r.rho_a, 1.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let q = human(40);
        let a: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(i, v)| v + ((i * 7) % 5) as f64)
            .collect();
        let b: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(i, v)| v + ((i * 3) % 11) as f64)
            .collect();
        assert_eq!(
            bootstrap_compare(&a, &b, &q, 1000, 9).unwrap(),
            bootstrap_compare(&a, &b, &q, 1000, 9).unwrap()
        );
    }

    #[test]
    fn precondition_errors() {
        let q = human(20);
        assert!(matches!(
            bootstrap_compare(&q[..9], &q[..9], &q[..9], 1000, 0),
            Err(MetaEvalError::TooFewSamples(9))
        ));
        assert!(matches!(
            bootstrap_compare(&q, &q, &q, 10, 0),
            Err(MetaEvalError::TooFewResamples(10))
        ));
    }

    #[test]
    fn degenerate_resamples_are_redrawn() {
        // mostly-constant human scores make some resamples constant
        let mut q = vec![3.0; 10];
        q[0] = 1.0;
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| (10 - i) as f64).collect();
        let r = bootstrap_compare(&a, &b, &q, 1000, 5).unwrap();
        assert!(r.redraws > 0);
        assert_eq!(r.resamples, 1000);
    }
}
