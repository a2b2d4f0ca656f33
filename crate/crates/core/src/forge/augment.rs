use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;

use crate::forge::{Dialogue, ForgeError};
use crate::panel::{tokenize, SPECIALS};

/// Function words never used as fill tokens.
pub const STOPWORDS: [&str; 50] = [
    "a", "an", "the", "and", "or", "but", "if", "of", "to", "in", "on", "at", "by", "for", "with",
    "from", "as", "is", "are", "was", "were", "be", "been", "am", "do", "does", "did", "have",
    "has", "had", "i", "you", "he", "she", "it", "we", "they", "me", "my", "your", "this", "that",
    "these", "those", "not", "no", "so", "what", "there", "will",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PerturbMode {
    Drop,
    Shuffle,
    Repeat,
}

impl PerturbMode {
    pub const ALL: [PerturbMode; 3] =
        [PerturbMode::Drop, PerturbMode::Shuffle, PerturbMode::Repeat];
}

/// Word-level corruption of a response.
///
/// * `Drop` removes `k ∈ [1, ⌊len/2⌋]` tokens.
/// * `Shuffle` applies a permutation that changes the token sequence.
/// * `Repeat` duplicates `k ∈ [1, max(1, ⌊len/2⌋)]` tokens in place.
///
/// Counts are drawn uniformly; the output always differs from the input.
pub fn perturb_syntactic(
    response: &str,
    mode: PerturbMode,
    rng: &mut impl Rng,
) -> Result<String, ForgeError> {
    let tokens = tokenize(response);
    if tokens.len() < 2 {
        return Err(ForgeError::TooShort {
            op: "syntactic perturbation",
            text: response.to_string(),
        });
    }
    let len = tokens.len();
    let out = match mode {
        PerturbMode::Drop => {
            let k = rng.gen_range(1..=len / 2);
            let dropped = rand::seq::index::sample(rng, len, k).into_vec();
            tokens
                .iter()
                .enumerate()
                .filter(|(i, _)| !dropped.contains(i))
                .map(|(_, t)| t.clone())
                .collect()
        }
        PerturbMode::Shuffle => {
            if tokens.iter().all(|t| *t == tokens[0]) {
                return Err(ForgeError::Unshuffleable(response.to_string()));
            }
            let mut out = tokens.clone();
            while out == tokens {
                out.shuffle(rng);
            }
            out
        }
        PerturbMode::Repeat => {
            let k = rng.gen_range(1..=(len / 2).max(1));
            let repeated = rand::seq::index::sample(rng, len, k).into_vec();
            let mut out = Vec::with_capacity(len + k);
            for (i, t) in tokens.iter().enumerate() {
                out.push(t.clone());
                if repeated.contains(&i) {
                    out.push(t.clone());
                }
            }
            out
        }
    };
    Ok(out.join(" "))
}

/// Picks an utterance uniformly from a dialogue other than `source`.
/// Returns the text and the index of the dialogue it came from.
pub fn sample_random_negative(
    corpus: &[Dialogue],
    source: usize,
    rng: &mut impl Rng,
) -> Result<(String, usize), ForgeError> {
    if corpus.len() < 2 {
        return Err(ForgeError::SingleDialogue);
    }
    if source >= corpus.len() {
        return Err(ForgeError::NoSuchDialogue(source));
    }
    let mut d = rng.gen_range(0..corpus.len() - 1);
    if d >= source {
        d += 1;
    }
    let utt = corpus[d]
        .utterances
        .choose(rng)
        .expect("validated dialogue");
    Ok((utt.clone(), d))
}

/// Lowercased tokens of `texts` that are neither special nor stopwords.
pub fn content_tokens(texts: &[String]) -> Vec<String> {
    texts
        .iter()
        .flat_map(|t| tokenize(t))
        .filter(|t| !STOPWORDS.contains(&t.as_str()) && !SPECIALS.contains(&t.as_str()))
        .collect()
}

/// Replaces `k ∈ [1, max(1, ⌊0.15·len⌋)]` response tokens with content
/// tokens sampled from an unrelated context. Length is preserved. A fill
/// differs from the token it replaces whenever the donor allows it.
pub fn mask_and_fill(
    response: &str,
    donor_context: &[String],
    rng: &mut impl Rng,
) -> Result<String, ForgeError> {
    let mut tokens = tokenize(response);
    if tokens.len() < 2 {
        return Err(ForgeError::TooShort {
            op: "mask and fill",
            text: response.to_string(),
        });
    }
    if donor_context.is_empty() {
        return Err(ForgeError::EmptyContext);
    }
    let donor = content_tokens(donor_context);
    if donor.is_empty() {
        return Err(ForgeError::NoContentTokens);
    }
    let len = tokens.len();
    let k = rng.gen_range(1..=(len * 15 / 100).max(1));
    for pos in rand::seq::index::sample(rng, len, k) {
        let fill = donor
            .iter()
            .filter(|t| **t != tokens[pos])
            .choose(rng)
            .unwrap_or(&donor[0])
            .clone();
        tokens[pos] = fill;
    }
    Ok(tokens.join(" "))
}

/// Takes a context utterance (uniformly among those with at least two
/// tokens) and corrupts it with a uniformly chosen perturbation, retrying
/// until the result matches no context utterance.
pub fn adversarial_from_context(
    context: &[String],
    rng: &mut impl Rng,
) -> Result<String, ForgeError> {
    if context.is_empty() {
        return Err(ForgeError::EmptyContext);
    }
    let eligible: Vec<&String> = context.iter().filter(|u| tokenize(u).len() >= 2).collect();
    if eligible.is_empty() {
        return Err(ForgeError::NoPerturbableUtterance);
    }
    let normalized: Vec<String> = context.iter().map(|u| tokenize(u).join(" ")).collect();
    for _ in 0..64 {
        let seed = eligible.choose(rng).expect("nonempty");
        let mode = *PerturbMode::ALL.choose(rng).expect("nonempty");
        let out = match perturb_syntactic(seed, mode, rng) {
            Ok(out) => out,
            Err(ForgeError::Unshuffleable(_)) => continue,
            Err(e) => return Err(e),
        };
        if !normalized.contains(&out) {
            return Ok(out);
        }
    }
    Err(ForgeError::NoDistinctOutput)
}

/// Source of extra appropriate responses (paraphrases, system outputs).
pub trait PositiveResponseProvider {
    fn provide(&self, context: &[String], response: &str) -> Option<String>;
}

/// Returns the original response unchanged.
pub struct NoopProvider;

impl PositiveResponseProvider for NoopProvider {
    fn provide(&self, _context: &[String], response: &str) -> Option<String> {
        Some(response.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sorted(mut v: Vec<String>) -> Vec<String> {
        v.sort();
        v
    }

    #[test]
    fn two_token_shuffle_is_forced() {
        for s in 0..20 {
            assert_eq!(
                perturb_syntactic("a b", PerturbMode::Shuffle, &mut rng(s)).unwrap(),
                "b a"
            );
        }
    }

    #[test]
    fn drop_bounds() {
        let text = "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9";
        let mut r = rng(1);
        for _ in 0..500 {
            let n = tokenize(&perturb_syntactic(text, PerturbMode::Drop, &mut r).unwrap()).len();
            assert!((5..=9).contains(&n));
        }
    }

    #[test]
    fn single_token_is_rejected() {
        for m in PerturbMode::ALL {
            assert!(matches!(
                perturb_syntactic("hello", m, &mut rng(0)),
                Err(ForgeError::TooShort { .. })
            ));
        }
        assert!(perturb_syntactic("ok ok", PerturbMode::Shuffle, &mut rng(0)).is_err());
    }

    #[test]
    fn shuffle_preserves_multiset() {
        let mut r = rng(2);
        for _ in 0..1000 {
            let len = r.gen_range(2..12);
            let toks: Vec<String> = (0..len)
                .map(|_| format!("t{}", r.gen_range(0..5)))
                .collect();
            if toks.iter().all(|t| *t == toks[0]) {
                continue;
            }
            let out = perturb_syntactic(&toks.join(" "), PerturbMode::Shuffle, &mut r).unwrap();
            let out = tokenize(&out);
            assert_ne!(out, toks);
            assert_eq!(sorted(out), sorted(toks));
        }
    }

    #[test]
    fn repeat_duplicates_in_place() {
        let mut r = rng(3);
        let toks: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
        for _ in 0..200 {
            let out =
                tokenize(&perturb_syntactic(&toks.join(" "), PerturbMode::Repeat, &mut r).unwrap());
            assert!(out.len() > toks.len() && out.len() <= toks.len() + 4);
            let mut dedup = out.clone();
            dedup.dedup();
            assert_eq!(dedup, toks);
        }
    }

    fn dialogue(id: &str, utts: &[&str]) -> Dialogue {
        Dialogue {
            id: Some(id.into()),
            domain: "d".into(),
            utterances: utts.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn random_negative_comes_from_other_dialogue() {
        let corpus = vec![
            dialogue("a", &["a one", "a two", "a three"]),
            dialogue("b", &["b one", "b two"]),
            dialogue("c", &["c one", "c two"]),
        ];
        let mut r = rng(4);
        for _ in 0..1000 {
            let src = r.gen_range(0..3);
            let (text, d) = sample_random_negative(&corpus, src, &mut r).unwrap();
            assert_ne!(d, src);
            assert!(corpus[d].utterances.contains(&text));
        }
        let two = &corpus[..2];
        for _ in 0..50 {
            assert_eq!(sample_random_negative(two, 0, &mut r).unwrap().1, 1);
        }
        assert!(matches!(
            sample_random_negative(&corpus[..1], 0, &mut r),
            Err(ForgeError::SingleDialogue)
        ));
    }

    #[test]
    fn mask_and_fill_bounds_and_membership() {
        let donor = vec![
            "the weather is sunny today".to_string(),
            "pizza with olives".to_string(),
        ];
        let donor_toks = content_tokens(&donor);
        let mut r = rng(5);
        for len in [2usize, 10, 20, 37] {
            let toks: Vec<String> = (0..len).map(|i| format!("r{i}")).collect();
            let limit = (len * 15 / 100).max(1);
            for _ in 0..200 {
                let out = tokenize(&mask_and_fill(&toks.join(" "), &donor, &mut r).unwrap());
                assert_eq!(out.len(), len);
                let changed: Vec<&String> = out
                    .iter()
                    .zip(&toks)
                    .filter(|(a, b)| a != b)
                    .map(|(a, _)| a)
                    .collect();
                assert!(!changed.is_empty() && changed.len() <= limit);
                assert!(changed.iter().all(|t| donor_toks.contains(t)));
            }
        }
        let only_stop = vec!["the and of".to_string()];
        assert!(matches!(
            mask_and_fill("x y", &only_stop, &mut r),
            Err(ForgeError::NoContentTokens)
        ));
    }

    #[test]
    fn adversarial_uses_context() {
        let ctx = vec!["where is the station".to_string()];
        let seed_toks = sorted(tokenize(&ctx[0]));
        let mut r = rng(6);
        for _ in 0..1000 {
            let out = adversarial_from_context(&ctx, &mut r).unwrap();
            assert_ne!(out, ctx[0]);
            let toks = sorted(tokenize(&out));
            let shared = toks.iter().filter(|t| seed_toks.contains(t)).count();
            assert!(shared * 2 >= seed_toks.len());
        }
        let two = vec!["a b".to_string(), "b a".to_string()];
        for _ in 0..200 {
            let out = adversarial_from_context(&two, &mut r).unwrap();
            assert!(!two.contains(&out));
        }
        assert!(adversarial_from_context(&["hi".to_string()], &mut r).is_err());
    }

    #[test]
    fn noop_provider_echoes() {
        assert_eq!(
            NoopProvider
                .provide(&["hi".into()], "hello there")
                .as_deref(),
            Some("hello there")
        );
    }

    proptest! {
        #[test]
        fn augmenters_are_seed_deterministic(words in prop::collection::vec("[a-e]{1,3}", 2..15), seed in 0u64..500) {
            let text = words.join(" ");
            for m in PerturbMode::ALL {
                let a = perturb_syntactic(&text, m, &mut rng(seed));
                let b = perturb_syntactic(&text, m, &mut rng(seed));
                prop_assert_eq!(a.is_ok(), b.is_ok());
                if let (Ok(a), Ok(b)) = (a, b) {
                    prop_assert_ne!(&a, &tokenize(&text).join(" "));
                    prop_assert_eq!(a, b);
                }
            }
            let donor = vec!["quartz lemon violin".to_string()];
            prop_assert_eq!(
                mask_and_fill(&text, &donor, &mut rng(seed)).unwrap(),
                mask_and_fill(&text, &donor, &mut rng(seed)).unwrap()
            );
        }
    }
}
