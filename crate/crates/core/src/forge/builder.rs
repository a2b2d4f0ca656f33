use std::collections::{BTreeMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::forge::{
    adversarial_from_context, extract_pairs, mask_and_fill, perturb_syntactic, pseudo_label_gate,
    sample_random_negative, ContextResponsePair, Dialogue, DomainDataset, ForgeError, GateStats,
    PerturbMode, PositiveResponseProvider, Provenance, TeacherScorer,
};

const NEGATIVE_KINDS: [Provenance; 6] = [
    Provenance::WordDrop,
    Provenance::WordShuffle,
    Provenance::WordRepeat,
    Provenance::RandomUtterance,
    Provenance::MaskAndFill,
    Provenance::AdversarialContext,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgeConfig {
    /// Corrupted responses generated per extracted positive.
    pub negatives_per_positive: usize,
    /// Relative weight of each negative kind; missing kinds weigh 0.
    pub mix: BTreeMap<Provenance, f64>,
    /// Ask the positive provider for one extra response per positive.
    pub provider_positives: bool,
    pub validation_fraction: f64,
    pub threshold: f64,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            negatives_per_positive: 1,
            mix: NEGATIVE_KINDS.iter().map(|&k| (k, 1.0)).collect(),
            provider_positives: false,
            validation_fraction: 0.1,
            threshold: 0.9,
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<(), ForgeError> {
        let fail = |m: String| Err(ForgeError::InvalidConfig(m));
        if let Some(k) = self.mix.keys().find(|k| !NEGATIVE_KINDS.contains(k)) {
            return fail(format!("{} is not a negative kind", k.as_str()));
        }
        if self.mix.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail("mix weights must be finite and non-negative".into());
        }
        if self.negatives_per_positive > 0 && self.mix.values().sum::<f64>() <= 0.0 {
            return fail("mix weights sum to zero".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail(format!(
                "validation_fraction {} outside [0, 1)",
                self.validation_fraction
            ));
        }
        if !(self.threshold > 0.5 && self.threshold <= 1.0) {
            return Err(ForgeError::InvalidThreshold(self.threshold));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ForgeStats {
    pub dialogues: usize,
    pub positives: usize,
    pub provider_positives: usize,
    /// Negatives generated, by provenance name.
    pub negatives: BTreeMap<String, usize>,
    /// Negatives that no kind could produce for their source pair.
    pub skipped: usize,
    pub duplicates: usize,
    pub gate: GateStats,
    pub train: usize,
    pub validation: usize,
}

fn make_negative(
    kind: Provenance,
    dialogues: &[Dialogue],
    source: usize,
    pair: &ContextResponsePair,
    rng: &mut impl Rng,
) -> Result<String, ForgeError> {
    match kind {
        Provenance::WordDrop => perturb_syntactic(&pair.response, PerturbMode::Drop, rng),
        Provenance::WordShuffle => perturb_syntactic(&pair.response, PerturbMode::Shuffle, rng),
        Provenance::WordRepeat => perturb_syntactic(&pair.response, PerturbMode::Repeat, rng),
        Provenance::RandomUtterance => {
            sample_random_negative(dialogues, source, rng).map(|(u, _)| u)
        }
        Provenance::MaskAndFill => {
            let (_, donor) = sample_random_negative(dialogues, source, rng)?;
            let utts = &dialogues[donor].utterances;
            let end = rng.gen_range(1..utts.len());
            let start = end.saturating_sub(rng.gen_range(1..=crate::forge::MAX_CONTEXT));
            mask_and_fill(&pair.response, &utts[start..end], rng)
        }
        Provenance::AdversarialContext => adversarial_from_context(&pair.context, rng),
        Provenance::Original | Provenance::Provider => unreachable!("not a negative kind"),
    }
}

/// Turns one domain's dialogues into a balanced, pseudo-labeled dataset.
///
/// Extracted pairs are positives; each gets `negatives_per_positive`
/// corrupted responses whose kind is drawn from `mix` (falling back to the
/// next kind when the drawn one does not apply). Exact duplicates are
/// dropped, the teacher gate labels and balances, and the result is split
/// into train and validation with equal class counts in each part.
pub fn build_domain_dataset(
    dialogues: &[Dialogue],
    teacher: &dyn TeacherScorer,
    provider: &dyn PositiveResponseProvider,
    cfg: &ForgeConfig,
    rng: &mut impl Rng,
) -> Result<(DomainDataset, ForgeStats), ForgeError> {
    cfg.validate()?;
    let domain = match dialogues.first() {
        Some(d) => d.domain.clone(),
        None => return Err(ForgeError::InvalidConfig("no dialogues".into())),
    };
    for (index, d) in dialogues.iter().enumerate() {
        d.validate()
            .map_err(|message| ForgeError::InvalidDialogue { index, message })?;
        if d.domain != domain {
            return Err(ForgeError::MixedDomains(domain, d.domain.clone()));
        }
    }
    let kinds: Vec<Provenance> = NEGATIVE_KINDS
        .into_iter()
        .filter(|k| cfg.mix.get(k).copied().unwrap_or(0.0) > 0.0)
        .collect();
    let weights = WeightedIndex::new(kinds.iter().map(|k| cfg.mix[k])).ok();

    let mut stats = ForgeStats {
        dialogues: dialogues.len(),
        ..Default::default()
    };
    let mut candidates = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |p: ContextResponsePair, stats: &mut ForgeStats| {
        if seen.insert((p.context.clone(), p.response.clone())) {
            candidates.push(p);
            true
        } else {
            stats.duplicates += 1;
            false
        }
    };
    for (source, d) in dialogues.iter().enumerate() {
        for pair in extract_pairs(d) {
            if push(pair.clone(), &mut stats) {
                stats.positives += 1;
            }
            if cfg.provider_positives {
                if let Some(text) = provider.provide(&pair.context, &pair.response) {
                    let extra = ContextResponsePair::new(
                        &domain,
                        pair.context.clone(),
                        text,
                        Provenance::Provider,
                    );
                    if push(extra, &mut stats) {
                        stats.provider_positives += 1;
                    }
                }
            }
            for _ in 0..cfg.negatives_per_positive {
                let Some(w) = &weights else { break };
                let first = w.sample(rng);
                let mut made = None;
                for step in 0..kinds.len() {
                    let kind = kinds[(first + step) % kinds.len()];
                    match make_negative(kind, dialogues, source, &pair, rng) {
                        Ok(text) => {
                            made = Some((kind, text));
                            break;
                        }
                        Err(e) => log::debug!("{} not applicable: {e}", kind.as_str()),
                    }
                }
                match made {
                    Some((kind, text)) => {
                        let neg =
                            ContextResponsePair::new(&domain, pair.context.clone(), text, kind);
                        if push(neg, &mut stats) {
                            *stats
                                .negatives
                                .entry(kind.as_str().to_string())
                                .or_default() += 1;
                        }
                    }
                    None => stats.skipped += 1,
                }
            }
        }
    }

    let (labeled, gate) = pseudo_label_gate(&candidates, teacher, cfg.threshold, rng)?;
    stats.gate = gate;
    let (mut pos, mut neg): (Vec<_>, Vec<_>) =
        labeled.into_iter().partition(|p| p.label == Some(1));
    pos.shuffle(rng);
    neg.shuffle(rng);
    let per_class = pos.len();
    let mut n_val = (per_class as f64 * cfg.validation_fraction).round() as usize;
    if cfg.validation_fraction > 0.0 && per_class >= 2 {
        n_val = n_val.clamp(1, per_class - 1);
    }
    let mut validation: Vec<_> = pos.drain(..n_val).chain(neg.drain(..n_val)).collect();
    let mut train: Vec<_> = pos.into_iter().chain(neg).collect();
    train.shuffle(rng);
    validation.shuffle(rng);
    stats.train = train.len();
    stats.validation = validation.len();
    Ok((
        DomainDataset {
            domain,
            train,
            validation,
        },
        stats,
    ))
}
