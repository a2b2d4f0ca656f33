use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::forge::{ContextResponsePair, DomainDataset};
use crate::numkit::{AdamWConfig, OptimizerState};
use crate::panel::{
    encode_pair, expert_prefix, init_expert, panel_forward, PanelParameters, TokenSequence, Vocab,
};
use crate::scalar::Scalar;
use crate::trainer::{
    train_step, DomainSampler, Example, LossKind, MiniBatch, TrainConfig, TrainError,
};

/// One line of training history. Validation fields are set on checkpoint steps only.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRecord {
    pub stage: String,
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_validation: Option<f64>,
}

/// Passed to the observer after every optimizer step.
pub struct StepEvent<'a, T> {
    pub stage: &'a str,
    pub step: usize,
    /// Experts with at least one instance in the step's batch.
    pub experts: &'a [usize],
    pub loss: T,
    pub panel: &'a PanelParameters<T>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters at the best validation checkpoint.
    pub panel: PanelParameters<T>,
    pub history: Vec<HistoryRecord>,
    pub best_validation: f64,
    pub steps: usize,
}

pub(crate) struct EncodedSet<T> {
    pub name: String,
    pub expert: usize,
    pub tokens: Vec<TokenSequence>,
    pub targets: Vec<T>,
}

pub(crate) fn encode_labeled<T: Scalar>(
    name: &str,
    expert: usize,
    pairs: &[ContextResponsePair],
    vocab: &Vocab,
    max_len: usize,
) -> Result<EncodedSet<T>, TrainError> {
    let mut tokens = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for p in pairs {
        let label = p
            .label
            .ok_or_else(|| TrainError::InvalidData(format!("unlabeled pair in {name}")))?;
        tokens.push(encode_pair(vocab, &p.context, &p.response, max_len)?);
        targets.push(if label == 1 { T::one() } else { T::zero() });
    }
    Ok(EncodedSet {
        name: name.to_string(),
        expert,
        tokens,
        targets,
    })
}

/// Share of examples whose confidence lands on the label's side of 0.5,
/// computed with the set's own expert.
pub(crate) fn set_accuracy<T: Scalar>(
    panel: &PanelParameters<T>,
    set: &EncodedSet<T>,
) -> Result<f64, TrainError> {
    let half = T::lit(0.5);
    let mut hits = 0usize;
    for (tok, &y) in set.tokens.iter().zip(&set.targets) {
        let pred = panel_forward(panel, tok, set.expert)? >= half;
        if pred == (y == T::one()) {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.tokens.len().max(1) as f64)
}

/// Validation accuracy (threshold 0.5) of each dataset under its domain's expert.
pub fn validation_accuracy<T: Scalar>(
    panel: &PanelParameters<T>,
    datasets: &[DomainDataset],
    vocab: &Vocab,
) -> Result<BTreeMap<String, f64>, TrainError> {
    let mut out = BTreeMap::new();
    for ds in datasets {
        let n = expert_for(panel, &ds.domain)?;
        let set = encode_labeled::<T>(&ds.domain, n, &ds.validation, vocab, panel.config.max_len)?;
        out.insert(ds.domain.clone(), set_accuracy(panel, &set)?);
    }
    Ok(out)
}

fn expert_for<T: Scalar>(panel: &PanelParameters<T>, domain: &str) -> Result<usize, TrainError> {
    panel
        .config
        .domain_index(domain)
        .ok_or_else(|| TrainError::DomainMismatch {
            panel: panel.config.domains.clone(),
            data: vec![domain.to_string()],
        })
}

fn evaluate<T: Scalar>(
    panel: &PanelParameters<T>,
    val: &[EncodedSet<T>],
) -> Result<(BTreeMap<String, f64>, f64), TrainError> {
    let mut per = BTreeMap::new();
    for set in val {
        per.insert(set.name.clone(), set_accuracy(panel, set)?);
    }
    let mean = per.values().sum::<f64>() / per.len() as f64;
    Ok((per, mean))
}

/// Shared optimization loop with checkpointed early stopping. The state
/// before the first step is the initial best checkpoint; a later
/// checkpoint replaces it only with strictly higher mean validation
/// accuracy.
fn fit<T: Scalar>(
    stage: &str,
    panel: &mut PanelParameters<T>,
    train: &[EncodedSet<T>],
    val: &[EncodedSet<T>],
    trainable: &dyn Fn(&str) -> bool,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&StepEvent<'_, T>),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if cfg.loss != LossKind::Bce {
        return Err(TrainError::InvalidConfig(
            "classification training requires the BCE loss".into(),
        ));
    }
    if let Some(s) = train.iter().find(|s| s.tokens.is_empty()) {
        return Err(TrainError::EmptyDataset(s.name.clone()));
    }
    if let Some(s) = val.iter().find(|s| s.tokens.is_empty()) {
        return Err(TrainError::EmptyDataset(format!("{} (validation)", s.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes: Vec<usize> = train.iter().map(|s| s.tokens.len()).collect();
    let mut sampler = DomainSampler::new(&sizes, cfg.batch_size, cfg.sampling, &mut rng)?;
    let mut opt = OptimizerState::new(AdamWConfig {
        lr: T::lit(cfg.lr),
        weight_decay: T::lit(cfg.weight_decay),
        ..AdamWConfig::default()
    });

    let (_, initial) = evaluate(panel, val)?;
    let mut best = (initial, panel.clone());
    let mut history = Vec::new();
    let mut stale = 0usize;
    let mut step = 0usize;
    let mut evaluated_at = 0usize;
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    'outer: while sampler.epoch() < cfg.max_epochs && step < max_steps {
        let batch = match sampler.next_batch() {
            Ok(b) => b,
            Err(TrainError::Exhausted) => {
                sampler.new_epoch(&mut rng);
                continue;
            }
            Err(e) => return Err(e),
        };
        let mb = MiniBatch {
            examples: batch
                .items
                .iter()
                .map(|&(s, i)| Example {
                    tokens: train[s].tokens[i].clone(),
                    target: train[s].targets[i],
                    expert: train[s].expert,
                })
                .collect(),
        };
        let loss = train_step(panel, &mut opt, &mb, cfg.loss, trainable, step)?;
        step += 1;
        let experts = mb.experts();
        observer(&StepEvent {
            stage,
            step,
            experts: &experts,
            loss,
            panel,
        });
        let mut rec = HistoryRecord {
            stage: stage.to_string(),
            step,
            epoch: sampler.epoch(),
            loss: loss.as_f64(),
            validation: None,
            mean_validation: None,
        };
        if step.is_multiple_of(cfg.eval_every) {
            let (per, mean) = evaluate(panel, val)?;
            evaluated_at = step;
            rec.validation = Some(per);
            rec.mean_validation = Some(mean);
            history.push(rec);
            if mean > best.0 {
                best = (mean, panel.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    log::info!("{stage}: stopping at step {step} after {stale} checkpoints without improvement");
                    break 'outer;
                }
            }
        } else {
            history.push(rec);
        }
    }
    if step > 0 && evaluated_at != step {
        let (per, mean) = evaluate(panel, val)?;
        if let Some(last) = history.last_mut() {
            last.validation = Some(per);
            last.mean_validation = Some(mean);
        }
        if mean > best.0 {
            best = (mean, panel.clone());
        }
    }
    Ok(TrainOutcome {
        panel: best.1,
        history,
        best_validation: best.0,
        steps: step,
    })
}

/// Joint training of the shared encoder and all experts with BCE. Every
/// instance goes through its own domain's adapters and classifier, so an
/// expert only receives gradient from its own domain.
pub fn train_multitask<T: Scalar>(
    panel: &PanelParameters<T>,
    datasets: &[DomainDataset],
    vocab: &Vocab,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&StepEvent<'_, T>),
) -> Result<TrainOutcome<T>, TrainError> {
    let mut names: Vec<String> = datasets.iter().map(|d| d.domain.clone()).collect();
    names.sort();
    let mut expected = panel.config.domains.clone();
    expected.sort();
    if names != expected {
        return Err(TrainError::DomainMismatch {
            panel: panel.config.domains.clone(),
            data: datasets.iter().map(|d| d.domain.clone()).collect(),
        });
    }
    // sets follow expert order so sampling does not depend on dataset order
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (n, domain) in panel.config.domains.iter().enumerate() {
        let ds = datasets
            .iter()
            .find(|d| &d.domain == domain)
            .expect("checked above");
        train.push(encode_labeled(
            domain,
            n,
            &ds.train,
            vocab,
            panel.config.max_len,
        )?);
        val.push(encode_labeled(
            domain,
            n,
            &ds.validation,
            vocab,
            panel.config.max_len,
        )?);
    }
    let mut work = panel.clone();
    fit(
        "multitask",
        &mut work,
        &train,
        &val,
        &|_| true,
        cfg,
        observer,
    )
}

/// Continues training each expert on its own domain with the encoder
/// frozen. Experts are handled one after another, each with a fresh
/// optimizer and its own early stopping.
pub fn finetune_adapters<T: Scalar>(
    panel: &PanelParameters<T>,
    datasets: &[DomainDataset],
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<(PanelParameters<T>, Vec<HistoryRecord>), TrainError> {
    let mut work = panel.clone();
    let mut history = Vec::new();
    for ds in datasets {
        let n = expert_for(&work, &ds.domain)?;
        let train = encode_labeled(&ds.domain, n, &ds.train, vocab, work.config.max_len)?;
        let val = encode_labeled(&ds.domain, n, &ds.validation, vocab, work.config.max_len)?;
        let prefix = expert_prefix(n);
        let stage_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(n as u64),
            sampling: crate::trainer::Sampling::EqualQuota,
            ..cfg.clone()
        };
        let stage = format!("adapter:{}", ds.domain);
        let out = fit(
            &stage,
            &mut work,
            &[train],
            &[val],
            &|name: &str| name.starts_with(&prefix),
            &stage_cfg,
            &mut |_| {},
        )?;
        work = out.panel;
        history.extend(out.history);
    }
    Ok((work, history))
}

/// Adds a freshly initialized expert for `dataset.domain` and trains only
/// that expert with BCE; the encoder and existing experts stay frozen.
pub fn train_new_adapter<T: Scalar>(
    panel: &PanelParameters<T>,
    dataset: &DomainDataset,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    let mut work = panel.clone();
    let fresh = init_expert::<T>(&work.config, cfg.seed);
    let n = work.push_expert(&dataset.domain, &fresh)?;
    let train = encode_labeled(
        &dataset.domain,
        n,
        &dataset.train,
        vocab,
        work.config.max_len,
    )?;
    let val = encode_labeled(
        &dataset.domain,
        n,
        &dataset.validation,
        vocab,
        work.config.max_len,
    )?;
    let prefix = expert_prefix(n);
    let stage_cfg = TrainConfig {
        sampling: crate::trainer::Sampling::EqualQuota,
        ..cfg.clone()
    };
    fit(
        "new-adapter",
        &mut work,
        &[train],
        &[val],
        &|name: &str| name.starts_with(&prefix),
        &stage_cfg,
        &mut |_| {},
    )
}
