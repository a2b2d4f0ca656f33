use serde::{Deserialize, Serialize};

/// One multi-turn conversation from a single domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    #[serde(default)]
    pub id: Option<String>,
    pub domain: String,
    pub utterances: Vec<String>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<(), String> {
        if self.utterances.len() < 2 {
            return Err("dialogue needs at least 2 utterances".into());
        }
        if self.utterances.iter().any(|u| u.trim().is_empty()) {
            return Err("dialogue has an empty utterance".into());
        }
        Ok(())
    }
}

/// How a candidate response was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    WordDrop,
    WordShuffle,
    WordRepeat,
    RandomUtterance,
    MaskAndFill,
    AdversarialContext,
    Provider,
}

impl Provenance {
    pub const ALL: [Provenance; 8] = [
        Provenance::Original,
        Provenance::WordDrop,
        Provenance::WordShuffle,
        Provenance::WordRepeat,
        Provenance::RandomUtterance,
        Provenance::MaskAndFill,
        Provenance::AdversarialContext,
        Provenance::Provider,
    ];

    /// Whether responses of this kind are appropriate by construction.
    pub fn is_positive(self) -> bool {
        matches!(self, Provenance::Original | Provenance::Provider)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::WordDrop => "word_drop",
            Provenance::WordShuffle => "word_shuffle",
            Provenance::WordRepeat => "word_repeat",
            Provenance::RandomUtterance => "random_utterance",
            Provenance::MaskAndFill => "mask_and_fill",
            Provenance::AdversarialContext => "adversarial_context",
            Provenance::Provider => "provider",
        }
    }
}

/// Up to four context utterances and one candidate next response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextResponsePair {
    pub domain: String,
    pub context: Vec<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub provenance: Provenance,
}

pub const MAX_CONTEXT: usize = 4;

impl ContextResponsePair {
    pub fn new(
        domain: &str,
        context: Vec<String>,
        response: String,
        provenance: Provenance,
    ) -> Self {
        Self {
            domain: domain.to_string(),
            context,
            response,
            label: None,
            confidence: None,
            provenance,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.context.is_empty() || self.context.len() > MAX_CONTEXT {
            return Err(format!(
                "context must hold 1..={MAX_CONTEXT} utterances, has {}",
                self.context.len()
            ));
        }
        if self.response.trim().is_empty() {
            return Err("empty response".into());
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(format!("label must be 0 or 1, got {l}"));
            }
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("confidence {c} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Labeled pairs for one domain, split into train and validation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DomainDataset {
    pub domain: String,
    pub train: Vec<ContextResponsePair>,
    pub validation: Vec<ContextResponsePair>,
}

impl DomainDataset {
    pub fn all_pairs(&self) -> impl Iterator<Item = &ContextResponsePair> {
        self.train.iter().chain(&self.validation)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
