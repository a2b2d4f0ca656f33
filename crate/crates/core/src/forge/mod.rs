//! Training data construction: positives from dialogues, synthetic
//! negatives, and the pseudo-label confidence gate.

mod augment;
mod builder;
mod extract;
mod gate;
mod jsonl;
pub mod synthetic;
mod types;

use thiserror::Error;

pub use augment::{
    adversarial_from_context, content_tokens, mask_and_fill, perturb_syntactic,
    sample_random_negative, NoopProvider, PerturbMode, PositiveResponseProvider, STOPWORDS,
};
pub use builder::{build_domain_dataset, ForgeConfig, ForgeStats};
pub use extract::extract_pairs;
pub use gate::{pseudo_label_gate, GateStats, OracleTeacher, TeacherScorer};
pub use jsonl::{read_jsonl, read_jsonl_file, write_jsonl, write_jsonl_file, JsonlRecord};
pub use types::*;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("{op} needs at least 2 tokens: {text:?}")]
    TooShort { op: &'static str, text: String },
    #[error("response has no distinct order to shuffle: {0:?}")]
    Unshuffleable(String),
    #[error("need at least 2 dialogues to sample a random utterance")]
    SingleDialogue,
    #[error("dialogue index {0} out of range")]
    NoSuchDialogue(usize),
    #[error("donor context has no content tokens")]
    NoContentTokens,
    #[error("context is empty")]
    EmptyContext,
    #[error("every context utterance has fewer than 2 tokens")]
    NoPerturbableUtterance,
    #[error("could not produce a response distinct from the context")]
    NoDistinctOutput,
    #[error("threshold {0} outside (0.5, 1]")]
    InvalidThreshold(f64),
    #[error("candidates mix domains {0:?} and {1:?}")]
    MixedDomains(String, String),
    #[error("teacher confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("a class is empty after gating: {positives} positive, {negatives} negative of {total} candidates")]
    EmptyClass {
        positives: usize,
        negatives: usize,
        total: usize,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid dialogue {index}: {message}")]
    InvalidDialogue { index: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
