//! Synthetic corpora with known structure, standing in for real dialogue
//! datasets in tests, experiments and demos.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::forge::{ContextResponsePair, Dialogue, DomainDataset, Provenance};
use crate::meta_eval::{EvaluationRecord, SelectionTask, CANDIDATES};

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pronounceable pseudo-words, distinct per `(tag, i)` up to collisions.
pub fn lexicon(tag: &str, size: usize) -> Vec<String> {
    let mut h = DefaultHasher::new();
    tag.hash(&mut h);
    let base = h.finish();
    let mut out: Vec<String> = Vec::with_capacity(size);
    let mut i = 0u64;
    while out.len() < size {
        let mut x = base.wrapping_add(i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut w = String::new();
        for _ in 0..3 {
            w.push_str(ONSETS[(x % 12) as usize]);
            x /= 12;
            w.push_str(VOWELS[(x % 5) as usize]);
            x /= 5;
        }
        if !out.contains(&w) {
            out.push(w);
        }
        i += 1;
    }
    out
}

const OPENERS: [&str; 5] = ["well", "so", "oh", "yes", "hmm"];
const SUBJECTS: [&str; 4] = ["i", "you", "we", "they"];
const VERBS: [&str; 5] = ["like", "need", "want", "see", "know"];
const LINKS: [&str; 4] = ["and", "with", "about", "near"];

/// Shape of a synthetic dialogue corpus for one domain.
#[derive(Clone, Debug)]
pub struct DialogueSpec {
    pub domain: String,
    pub dialogues: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    /// Each dialogue stays within one topic, a small group of lexicon words.
    pub topics: Vec<Vec<String>>,
}

impl DialogueSpec {
    /// Eight five-word topics from the domain's own lexicon.
    pub fn new(domain: &str, dialogues: usize) -> Self {
        Self {
            domain: domain.to_string(),
            dialogues,
            min_turns: 3,
            max_turns: 6,
            topics: lexicon(domain, 40)
                .chunks(5)
                .map(<[String]>::to_vec)
                .collect(),
        }
    }
}

/// Dialogues of templated utterances, `[opener] subject verb topic link topic`.
/// Every turn after the first picks up a topic word of the previous turn,
/// so word order, length and topic all carry signal.
pub fn synthetic_dialogues(spec: &DialogueSpec, rng: &mut impl Rng) -> Vec<Dialogue> {
    assert!(!spec.topics.is_empty(), "no topics");
    let lo = spec.min_turns.max(2);
    let hi = spec.max_turns.max(lo);
    (0..spec.dialogues)
        .map(|i| {
            let topic = spec.topics.choose(rng).unwrap();
            let turns = rng.gen_range(lo..=hi);
            let mut utterances: Vec<String> = Vec::with_capacity(turns);
            let mut carry = topic.choose(rng).unwrap().clone();
            for _ in 0..turns {
                let next = topic.choose(rng).unwrap().clone();
                let mut words: Vec<&str> = Vec::with_capacity(6);
                if rng.gen_bool(0.5) {
                    words.push(OPENERS.choose(rng).unwrap());
                }
                words.push(SUBJECTS.choose(rng).unwrap());
                words.push(VERBS.choose(rng).unwrap());
                words.push(&carry);
                words.push(LINKS.choose(rng).unwrap());
                words.push(&next);
                utterances.push(words.join(" "));
                carry = next;
            }
            Dialogue {
                id: Some(format!("{}-{i}", spec.domain)),
                domain: spec.domain.clone(),
                utterances,
            }
        })
        .collect()
}

/// Words whose presence in a response decides the label in [`rule_task`].
pub fn marker_words() -> Vec<String> {
    lexicon("marker", 4)
}

/// Per-domain binary tasks over one shared input distribution.
#[derive(Clone, Debug)]
pub struct RuleTask {
    /// `(domain, flipped)`: a domain labels "response contains a marker
    /// word" positive, or negative when flipped.
    pub domains: Vec<(String, bool)>,
    pub train_per_domain: usize,
    pub validation_per_domain: usize,
    pub response_len: usize,
}

impl RuleTask {
    /// Two domains with opposite labeling of the same rule.
    pub fn conflicting(train_per_domain: usize, validation_per_domain: usize) -> Self {
        Self {
            domains: vec![("alpha".into(), false), ("beta".into(), true)],
            train_per_domain,
            validation_per_domain,
            response_len: 4,
        }
    }
}

fn rule_pair(
    domain: &str,
    flipped: bool,
    positive_rule: bool,
    len: usize,
    rng: &mut impl Rng,
) -> ContextResponsePair {
    let markers = marker_words();
    let words: Vec<String> = lexicon("shared", 24)
        .into_iter()
        .filter(|w| !markers.contains(w))
        .collect();
    let ctx_len = rng.gen_range(3..=5);
    let context = vec![(0..ctx_len)
        .map(|_| words.choose(rng).unwrap().as_str())
        .collect::<Vec<_>>()
        .join(" ")];
    let mut resp: Vec<&str> = (0..len)
        .map(|_| words.choose(rng).unwrap().as_str())
        .collect();
    if positive_rule {
        let pos = rng.gen_range(0..len);
        resp[pos] = markers.choose(rng).unwrap();
    }
    let mut p = ContextResponsePair::new(domain, context, resp.join(" "), Provenance::Original);
    p.label = Some(u8::from(positive_rule != flipped));
    p.confidence = Some(1.0);
    p
}

/// Balanced labeled data for every domain of `task`. The rule holds for
/// exactly half of each split, so a model that ignores the domain cannot
/// beat 50% accuracy on a pair of conflicting domains.
pub fn rule_task(task: &RuleTask, rng: &mut impl Rng) -> Vec<DomainDataset> {
    let len = task.response_len.max(1);
    let mut split = |n: usize, domain: &str, flipped: bool| {
        let mut v: Vec<ContextResponsePair> = (0..n)
            .map(|i| rule_pair(domain, flipped, i % 2 == 0, len, rng))
            .collect();
        v.shuffle(rng);
        v
    };
    task.domains
        .iter()
        .map(|(domain, flipped)| DomainDataset {
            domain: domain.clone(),
            train: split(task.train_per_domain, domain, *flipped),
            validation: split(task.validation_per_domain, domain, *flipped),
        })
        .collect()
}

/// Evaluation records whose human score follows lexical overlap between
/// response and context: `q = 1 + 4·clamp(m/len + U(−noise, noise), 0, 1)`.
///
/// The context is six distinct `on_topic` words; `m` of the response's six
/// tokens are copied from it and the rest are drawn from `off_topic`, so
/// low-scoring responses drift off the conversation's topic.
pub fn overlap_eval_set(
    domain: &str,
    on_topic: &[String],
    off_topic: &[String],
    records: usize,
    noise: f64,
    rng: &mut impl Rng,
) -> Vec<EvaluationRecord> {
    const LEN: usize = 6;
    assert!(
        on_topic.len() >= LEN && !off_topic.is_empty(),
        "lexicons too small"
    );
    (0..records)
        .map(|_| {
            let ctx: Vec<&String> = on_topic.choose_multiple(rng, LEN).collect();
            let m = rng.gen_range(0..=LEN);
            let mut resp: Vec<&String> = ctx.choose_multiple(rng, m).copied().collect();
            while resp.len() < LEN {
                resp.push(off_topic.choose(rng).unwrap());
            }
            resp.shuffle(rng);
            let jitter = if noise > 0.0 {
                rng.gen_range(-noise..noise)
            } else {
                0.0
            };
            let q = (m as f64 / LEN as f64 + jitter).clamp(0.0, 1.0);
            EvaluationRecord {
                domain: domain.to_string(),
                context: vec![ctx.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ")],
                response: resp
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
                human_score: 1.0 + 4.0 * q,
                provenance: Provenance::Original,
                label: None,
                confidence: None,
            }
        })
        .collect()
}

/// Response-selection tasks from dialogues: the true next utterance plus
/// 19 utterances drawn from other dialogues.
pub fn selection_tasks(
    dialogues: &[Dialogue],
    tasks: usize,
    rng: &mut impl Rng,
) -> Vec<SelectionTask> {
    assert!(dialogues.len() >= 2, "need at least two dialogues");
    (0..tasks)
        .map(|_| {
            let src = rng.gen_range(0..dialogues.len());
            let d = &dialogues[src];
            let t = rng.gen_range(1..d.utterances.len());
            let context = d.utterances[t.saturating_sub(crate::forge::MAX_CONTEXT)..t].to_vec();
            let mut candidates = Vec::with_capacity(CANDIDATES);
            while candidates.len() < CANDIDATES - 1 {
                let (u, _) = crate::forge::sample_random_negative(dialogues, src, rng)
                    .expect("two dialogues");
                candidates.push(u);
            }
            let positive_index = rng.gen_range(0..CANDIDATES);
            candidates.insert(positive_index, d.utterances[t].clone());
            SelectionTask {
                context,
                candidates,
                positive_index,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::extract_pairs;
    use crate::panel::tokenize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lexicons_are_stable_and_distinct() {
        assert_eq!(lexicon("chat", 10), lexicon("chat", 10));
        let a = lexicon("chat", 30);
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 30);
        assert_ne!(a, lexicon("task", 30));
    }

    #[test]
    fn dialogues_are_valid_and_pair_count_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = synthetic_dialogues(&DialogueSpec::new("chat", 50), &mut rng);
        assert!(ds.iter().all(|d| d.validate().is_ok()));
        let pairs: usize = ds.iter().map(|d| extract_pairs(d).len()).sum();
        let expected: usize = ds.iter().map(|d| d.utterances.len() - 1).sum();
        assert_eq!(pairs, expected);
    }

    #[test]
    fn rule_task_labels_follow_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = rule_task(&RuleTask::conflicting(40, 20), &mut rng);
        let markers = marker_words();
        for (ds, flipped) in data.iter().zip([false, true]) {
            assert_eq!(ds.train.len(), 40);
            assert_eq!(ds.train.iter().filter(|p| p.label == Some(1)).count(), 20);
            for p in ds.all_pairs() {
                let has = tokenize(&p.response).iter().any(|t| markers.contains(t));
                assert_eq!(p.label == Some(1), has != flipped);
                assert!(p.validate().is_ok());
            }
        }
    }

    #[test]
    fn overlap_scores_track_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (on, off) = (lexicon("a", 20), lexicon("b", 20));
        for r in overlap_eval_set("ev", &on, &off, 200, 0.0, &mut rng) {
            let ctx = tokenize(&r.context[0]);
            let m = tokenize(&r.response)
                .iter()
                .filter(|t| ctx.contains(t))
                .count();
            assert!((r.human_score - (1.0 + 4.0 * m as f64 / 6.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_tasks_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = synthetic_dialogues(&DialogueSpec::new("chat", 10), &mut rng);
        for t in selection_tasks(&ds, 30, &mut rng) {
            assert!(t.validate().is_ok());
        }
    }
}
