//! Meta-evaluation: how well metric scores agree with human judgements.

mod bootstrap;
mod selection;
mod spearman;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forge::{ContextResponsePair, Provenance};
use crate::fusion::{resolve_hint, score};
use crate::panel::{encode_pair, PanelError, PanelParameters, Vocab};
use crate::scalar::Scalar;

pub use bootstrap::{bootstrap_compare, BootstrapResult, MIN_RECORDS, MIN_RESAMPLES};
pub use selection::{hits_at_1, SelectionTask, CANDIDATES};
pub use spearman::{average_ranks, spearman, spearman_closed_form, spearman_p_value};

/// Domain tag of evaluation data that matches no training domain.
pub const OTHER_DOMAIN: &str = "Other";

#[derive(Debug, Error)]
pub enum MetaEvalError {
    #[error("score vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("need at least 1000 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("non-finite score")]
    NonFinite,
    #[error("constant score vector: correlation undefined")]
    Degenerate,
    #[error("dataset {0} is empty")]
    EmptyDataset(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

/// A context-response pair with its mean human quality score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub domain: String,
    pub context: Vec<String>,
    pub response: String,
    pub human_score: f64,
    #[serde(default = "original", skip_serializing_if = "is_original")]
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

fn original() -> Provenance {
    Provenance::Original
}

fn is_original(p: &Provenance) -> bool {
    *p == Provenance::Original
}

impl EvaluationRecord {
    pub const FIELDS: &'static [&'static str] = &[
        "domain",
        "context",
        "response",
        "human_score",
        "provenance",
        "label",
        "confidence",
    ];

    pub fn pair(&self) -> ContextResponsePair {
        ContextResponsePair {
            domain: self.domain.clone(),
            context: self.context.clone(),
            response: self.response.clone(),
            label: self.label,
            confidence: self.confidence,
            provenance: self.provenance,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.human_score.is_finite() {
            return Err("human_score must be finite".into());
        }
        self.pair().validate()
    }
}

/// Named evaluation set; `domain` is a training domain name or [`OTHER_DOMAIN`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalDataset {
    pub name: String,
    pub domain: String,
    pub records: Vec<EvaluationRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub score: f64,
    pub encoder_passes: usize,
}

/// Anything that maps (context, response) to a quality score. `hint` names
/// the training domain the input belongs to, or `None` when out of domain.
pub trait PairScorer {
    fn score(
        &self,
        context: &[String],
        response: &str,
        hint: Option<&str>,
    ) -> Result<Scored, MetaEvalError>;
}

/// Adapts a plain closure; reports zero encoder passes.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&[String], &str, Option<&str>) -> f64> PairScorer for FnScorer<F> {
    fn score(
        &self,
        context: &[String],
        response: &str,
        hint: Option<&str>,
    ) -> Result<Scored, MetaEvalError> {
        Ok(Scored {
            score: (self.0)(context, response, hint),
            encoder_passes: 0,
        })
    }
}

/// How a panel scores inputs that carry no usable domain hint.
pub enum OutOfDomain<T> {
    /// Average the confidences of all experts (N passes).
    LateFusion,
    /// Use a pooled single-expert panel (1 pass).
    Pooled(PanelParameters<T>),
}

pub struct PanelScorer<'a, T> {
    pub panel: &'a PanelParameters<T>,
    pub vocab: &'a Vocab,
    pub out_of_domain: OutOfDomain<T>,
}

impl<T: Scalar> PairScorer for PanelScorer<'_, T> {
    fn score(
        &self,
        context: &[String],
        response: &str,
        hint: Option<&str>,
    ) -> Result<Scored, MetaEvalError> {
        let tokens = encode_pair(self.vocab, context, response, self.panel.config.max_len)?;
        let trace = match (resolve_hint(self.panel, hint), &self.out_of_domain) {
            (Some(n), _) => score(self.panel, &tokens, Some(n))?,
            (None, OutOfDomain::LateFusion) => score(self.panel, &tokens, None)?,
            (None, OutOfDomain::Pooled(p)) => score(p, &tokens, None)?,
        };
        Ok(Scored {
            score: trace.score.as_f64(),
            encoder_passes: trace.encoder_passes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetScore {
    pub name: String,
    pub domain: String,
    pub size: usize,
    pub rho: f64,
    pub p_value: f64,
    /// Set when the metric scores (or human scores) were constant; ρ is then reported as 0.
    pub degenerate: bool,
    pub encoder_passes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreReport {
    pub datasets: Vec<DatasetScore>,
    /// Unweighted mean ρ per domain group (training domain or "Other").
    pub domain_averages: BTreeMap<String, f64>,
    /// Unweighted mean ρ over all datasets.
    pub overall: f64,
    pub encoder_passes: usize,
}

/// Scores every dataset, hinting in-domain data with its own domain and
/// leaving "Other" data unhinted, then aggregates Spearman ρ.
pub fn evaluate_metric(
    scorer: &dyn PairScorer,
    datasets: &[EvalDataset],
    training_domains: &[String],
) -> Result<ScoreReport, MetaEvalError> {
    if datasets.is_empty() {
        return Err(MetaEvalError::EmptyDataset("evaluation set list".into()));
    }
    let mut rows = Vec::with_capacity(datasets.len());
    for ds in datasets {
        if ds.records.is_empty() {
            return Err(MetaEvalError::EmptyDataset(ds.name.clone()));
        }
        let hint = training_domains
            .iter()
            .find(|d| **d == ds.domain)
            .map(String::as_str);
        let mut s = Vec::with_capacity(ds.records.len());
        let mut passes = 0;
        for rec in &ds.records {
            let scored = scorer.score(&rec.context, &rec.response, hint)?;
            s.push(scored.score);
            passes += scored.encoder_passes;
        }
        let q: Vec<f64> = ds.records.iter().map(|r| r.human_score).collect();
        let (rho, degenerate) = match spearman(&s, &q) {
            Ok(r) => (r, false),
            Err(MetaEvalError::Degenerate) => {
                log::warn!(
                    "dataset {}: constant scores, correlation undefined",
                    ds.name
                );
                (0.0, true)
            }
            Err(e) => return Err(e),
        };
        rows.push(DatasetScore {
            name: ds.name.clone(),
            domain: if hint.is_some() {
                ds.domain.clone()
            } else {
                OTHER_DOMAIN.to_string()
            },
            size: s.len(),
            rho,
            p_value: if degenerate {
                1.0
            } else {
                spearman_p_value(rho, s.len())
            },
            degenerate,
            encoder_passes: passes,
        });
    }
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        groups.entry(r.domain.clone()).or_default().push(r.rho);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let domain_averages = groups.iter().map(|(k, v)| (k.clone(), mean(v))).collect();
    let all: Vec<f64> = rows.iter().map(|r| r.rho).collect();
    Ok(ScoreReport {
        overall: mean(&all),
        encoder_passes: rows.iter().map(|r| r.encoder_passes).sum(),
        datasets: rows,
        domain_averages,
    })
}

impl ScoreReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let name_w = self
            .datasets
            .iter()
            .map(|d| d.name.len())
            .max()
            .unwrap_or(7)
            .max(7);
        let dom_w = self
            .datasets
            .iter()
            .map(|d| d.domain.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<dom_w$}  {:>6}  {:>8}  {:>8}  {:>7}",
            "dataset", "domain", "n", "rho", "p", "passes"
        );
        for d in &self.datasets {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:<dom_w$}  {:>6}  {:>8.4}  {:>8.2e}  {:>7}{}",
                d.name,
                d.domain,
                d.size,
                d.rho,
                d.p_value,
                d.encoder_passes,
                if d.degenerate { "  (degenerate)" } else { "" }
            );
        }
        for (k, v) in &self.domain_averages {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:<dom_w$}  {:>6}  {:>8.4}",
                "average", k, "", v
            );
        }
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<dom_w$}  {:>6}  {:>8.4}",
            "overall", "", "", self.overall
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(name: &str, domain: &str, scores: &[f64]) -> EvalDataset {
        EvalDataset {
            name: name.into(),
            domain: domain.into(),
            records: scores
                .iter()
                .enumerate()
                .map(|(i, &q)| EvaluationRecord {
                    domain: domain.into(),
                    context: vec![format!("ctx {i}")],
                    response: format!("{q}"),
                    human_score: q,
                    provenance: Provenance::Original,
                    label: None,
                    confidence: None,
                })
                .collect(),
        }
    }

    fn oracle() -> FnScorer<impl Fn(&[String], &str, Option<&str>) -> f64> {
        FnScorer(|_: &[String], r: &str, _: Option<&str>| r.parse::<f64>().unwrap())
    }

    #[test]
    fn single_dataset_overall_equals_rho() {
        let ds = [dataset("a", "chat", &[1.0, 3.0, 2.0, 5.0])];
        let scorer = FnScorer(|_: &[String], r: &str, _: Option<&str>| {
            -(r.parse::<f64>().unwrap() - 2.5).abs()
        });
        let rep = evaluate_metric(&scorer, &ds, &["chat".into()]).unwrap();
        assert_eq!(rep.overall, rep.datasets[0].rho);
    }

    #[test]
    fn oracle_and_anti_oracle() {
        let ds = [
            dataset("a", "chat", &[1.0, 3.0, 2.0, 5.0, 4.0]),
            dataset("b", "task", &[2.0, 2.0, 1.0, 4.0]),
            dataset("c", "weird", &[0.1, 0.5, 0.3]),
        ];
        let domains = ["chat".to_string(), "task".to_string()];
        let rep = evaluate_metric(&oracle(), &ds, &domains).unwrap();
        assert!(rep.datasets.iter().all(|d| d.rho == 1.0));
        assert_eq!(rep.datasets[2].domain, OTHER_DOMAIN);
        let anti = FnScorer(|_: &[String], r: &str, _: Option<&str>| -r.parse::<f64>().unwrap());
        let rep = evaluate_metric(&anti, &ds, &domains).unwrap();
        assert!(rep.datasets.iter().all(|d| d.rho == -1.0));
    }

    #[test]
    fn averages_are_unweighted() {
        let ds = [
            dataset("a", "chat", &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
            dataset("b", "chat", &[3.0, 2.0, 1.0]),
            dataset("c", "x", &[1.0, 3.0, 2.0]),
        ];
        let scorer = FnScorer(|_: &[String], r: &str, _: Option<&str>| {
            let v = r.parse::<f64>().unwrap();
            if v == 2.0 {
                10.0
            } else {
                v
            }
        });
        let rep = evaluate_metric(&scorer, &ds, &["chat".into()]).unwrap();
        let rhos: Vec<f64> = rep.datasets.iter().map(|d| d.rho).collect();
        assert!((rep.overall - rhos.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!((rep.domain_averages["chat"] - (rhos[0] + rhos[1]) / 2.0).abs() < 1e-12);
        assert_eq!(rep.domain_averages[OTHER_DOMAIN], rhos[2]);
        assert!(rep.to_table().contains("overall"));
    }

    #[test]
    fn hints_follow_domain_membership() {
        let ds = [
            dataset("a", "chat", &[1.0, 2.0, 3.0]),
            dataset("b", "zzz", &[1.0, 2.0, 3.0]),
        ];
        let seen = std::cell::RefCell::new(Vec::new());
        let scorer = FnScorer(|_: &[String], r: &str, h: Option<&str>| {
            seen.borrow_mut().push(h.map(str::to_string));
            r.parse().unwrap()
        });
        evaluate_metric(&scorer, &ds, &["chat".into()]).unwrap();
        let seen = seen.into_inner();
        assert!(seen[..3].iter().all(|h| h.as_deref() == Some("chat")));
        assert!(seen[3..].iter().all(Option::is_none));
    }

    #[test]
    fn degenerate_and_empty() {
        let ds = [dataset("a", "chat", &[1.0, 2.0, 3.0])];
        let constant = FnScorer(|_: &[String], _: &str, _: Option<&str>| 0.5);
        let rep = evaluate_metric(&constant, &ds, &[]).unwrap();
        assert!(rep.datasets[0].degenerate);
        let empty = [dataset("e", "chat", &[])];
        assert!(matches!(
            evaluate_metric(&oracle(), &empty, &[]),
            Err(MetaEvalError::EmptyDataset(_))
        ));
    }
}
