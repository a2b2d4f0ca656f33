use serde::{Deserialize, Serialize};

use crate::meta_eval::{MetaEvalError, PairScorer};

pub const CANDIDATES: usize = 20;

/// A context with 20 candidate responses, exactly one of them the true one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTask {
    pub context: Vec<String>,
    pub candidates: Vec<String>,
    pub positive_index: usize,
}

impl SelectionTask {
    pub const FIELDS: &'static [&'static str] = &["context", "candidates", "positive_index"];

    pub fn validate(&self) -> Result<(), String> {
        if self.context.is_empty() {
            return Err("empty context".into());
        }
        if self.candidates.len() != CANDIDATES {
            return Err(format!(
                "expected {CANDIDATES} candidates, found {}",
                self.candidates.len()
            ));
        }
        if self.positive_index >= CANDIDATES {
            return Err(format!(
                "positive_index {} out of range",
                self.positive_index
            ));
        }
        Ok(())
    }
}

/// Share of tasks whose true response scores strictly above every
/// distractor. Any tie with a distractor counts as a miss.
pub fn hits_at_1(
    scorer: &dyn PairScorer,
    tasks: &[SelectionTask],
    hint: Option<&str>,
) -> Result<f64, MetaEvalError> {
    if tasks.is_empty() {
        return Err(MetaEvalError::EmptyDataset("selection tasks".into()));
    }
    let mut hits = 0usize;
    for task in tasks {
        task.validate().map_err(MetaEvalError::InvalidRecord)?;
        let mut scores = Vec::with_capacity(task.candidates.len());
        for cand in &task.candidates {
            scores.push(scorer.score(&task.context, cand, hint)?.score);
        }
        let pos = scores[task.positive_index];
        if scores
            .iter()
            .enumerate()
            .all(|(i, &s)| i == task.positive_index || pos > s)
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / tasks.len() as f64)
}
