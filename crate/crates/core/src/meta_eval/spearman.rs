use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::meta_eval::MetaEvalError;

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_inputs(s: &[f64], q: &[f64]) -> Result<(), MetaEvalError> {
    if s.len() != q.len() {
        return Err(MetaEvalError::LengthMismatch(s.len(), q.len()));
    }
    if s.len() < 3 {
        return Err(MetaEvalError::TooFewSamples(s.len()));
    }
    if s.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(MetaEvalError::NonFinite);
    }
    Ok(())
}

/// Spearman's ρ as the Pearson correlation of average ranks.
///
/// A constant input has no defined correlation and yields
/// [`MetaEvalError::Degenerate`].
pub fn spearman(s: &[f64], q: &[f64]) -> Result<f64, MetaEvalError> {
    check_inputs(s, q)?;
    pearson(&average_ranks(s), &average_ranks(q)).ok_or(MetaEvalError::Degenerate)
}

/// Rank-difference form `1 − 6Σk² / (I(I² − 1))`; exact only without ties.
pub fn spearman_closed_form(s: &[f64], q: &[f64]) -> Result<f64, MetaEvalError> {
    check_inputs(s, q)?;
    let (rs, rq) = (average_ranks(s), average_ranks(q));
    let sum_sq: f64 = rs.iter().zip(&rq).map(|(a, b)| (a - b) * (a - b)).sum();
    let n = s.len() as f64;
    Ok(1.0 - 6.0 * sum_sq / (n * (n * n - 1.0)))
}

/// Two-sided p-value of ρ under the null of no association, from the
/// Student-t approximation with `n − 2` degrees of freedom.
pub fn spearman_p_value(rho: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: rank by counting, then Pearson written out directly.
    fn brute_force(s: &[f64], q: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&x| {
                    let less = v.iter().filter(|&&y| y < x).count() as f64;
                    let equal = v.iter().filter(|&&y| y == x).count() as f64;
                    less + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let (a, b) = (rank(s), rank(q));
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn worked_example() {
        let s = [0.2, 0.9, 0.5, 0.1];
        let q = [2.0, 3.0, 5.0, 1.0];
        // ranks s: 2 4 3 1, ranks q: 2 3 4 1 -> Σk² = 2 -> 1 − 12/60
        assert!((spearman(&s, &q).unwrap() - 0.8).abs() < 1e-12);
        assert!((spearman_closed_form(&s, &q).unwrap() - 0.8).abs() < 1e-12);
        assert!((brute_force(&s, &q) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_reversed() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        let q = [10.0, 20.0, 25.0, 40.0, 100.0];
        assert_eq!(spearman(&s, &q).unwrap(), 1.0);
        let rev: Vec<f64> = q.iter().rev().copied().collect();
        assert_eq!(spearman(&s, &rev).unwrap(), -1.0);
    }

    #[test]
    fn ties_use_average_ranks() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
        let s = [1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 4.0];
        let q = [2.0, 1.0, 3.0, 3.0, 5.0, 4.0, 4.0];
        assert!((spearman(&s, &q).unwrap() - brute_force(&s, &q)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetaEvalError::Degenerate)
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(MetaEvalError::TooFewSamples(2))
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(MetaEvalError::LengthMismatch(3, 2))
        ));
        assert!(matches!(
            spearman(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]),
            Err(MetaEvalError::NonFinite)
        ));
    }

    #[test]
    fn tie_free_closed_form_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let n = rng.gen_range(3..60);
            let mut s: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen::<f64>() * 0.5).collect();
            let mut q: Vec<f64> = (0..n).map(|i| i as f64 * 1.7).collect();
            s.shuffle(&mut rng);
            q.shuffle(&mut rng);
            let a = spearman(&s, &q).unwrap();
            let b = spearman_closed_form(&s, &q).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn p_value_behaviour() {
        assert_eq!(spearman_p_value(1.0, 10), 0.0);
        assert!((spearman_p_value(0.0, 10) - 1.0).abs() < 1e-12);
        assert!(spearman_p_value(0.9, 30) < 0.001);
        assert!(spearman_p_value(0.1, 30) > 0.5);
    }

    proptest! {
        #[test]
        fn invariant_under_increasing_transform(
            s in prop::collection::vec(-5.0f64..5.0, 3..40),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q: Vec<f64> = s.iter().map(|_| rng.gen_range(0..5) as f64).collect();
            let t: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            match (spearman(&s, &q), spearman(&t, &q)) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(a, b);
                    let sym = spearman(&q, &s).unwrap();
                    prop_assert!((a - sym).abs() < 1e-12);
                    prop_assert!((a - brute_force(&s, &q)).abs() < 1e-12);
                }
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }
    }
}
