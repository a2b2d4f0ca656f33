use crate::forge::{ContextResponsePair, Dialogue, Provenance, MAX_CONTEXT};

/// Every utterance after the first becomes the response to the (at most
/// four) utterances preceding it in the same dialogue.
pub fn extract_pairs(dialogue: &Dialogue) -> Vec<ContextResponsePair> {
    let u = &dialogue.utterances;
    (1..u.len())
        .map(|t| {
            let start = t.saturating_sub(MAX_CONTEXT);
            ContextResponsePair::new(
                &dialogue.domain,
                u[start..t].to_vec(),
                u[t].clone(),
                Provenance::Original,
            )
        })
        .collect()
}
