use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::meta_eval::{spearman, EvaluationRecord, MetaEvalError};
use crate::numkit::{AdamWConfig, OptimizerState};
use crate::panel::{encode_pair, panel_forward, PanelParameters, TokenSequence, Vocab};
use crate::scalar::Scalar;
use crate::trainer::{train_step, Example, LossKind, MiniBatch, TrainConfig, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FewShotReport {
    pub k_percent: f64,
    pub sample_size: usize,
    pub train_size: usize,
    pub validation_size: usize,
    /// Spearman ρ on the full dataset before and after finetuning.
    pub rho_before: f64,
    pub rho_after: f64,
    pub best_validation_rho: Option<f64>,
    pub epochs: usize,
    /// Epoch whose parameters were kept; 0 means the untouched model.
    pub best_epoch: usize,
    pub steps: usize,
    pub adapter_only: bool,
}

/// Min-max rescaling to [0, 1]; a constant input cannot be rescaled.
pub fn rescale_min_max(values: &[f64]) -> Result<Vec<f64>, TrainError> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return Err(TrainError::InvalidData(
            "human scores are constant or non-finite".into(),
        ));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

fn rho<T: Scalar>(
    panel: &PanelParameters<T>,
    tokens: &[TokenSequence],
    q: &[f64],
) -> Result<Option<f64>, TrainError> {
    let mut s = Vec::with_capacity(tokens.len());
    for t in tokens {
        s.push(panel_forward(panel, t, 0)?.as_f64());
    }
    match spearman(&s, q) {
        Ok(r) => Ok(Some(r)),
        Err(MetaEvalError::Degenerate | MetaEvalError::TooFewSamples(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Regression transfer of a single-expert (pooled) model to an annotated
/// dataset.
///
/// Draws K% of the records, finetunes on one half with squared error
/// between confidence and min-max rescaled human score, and keeps the
/// epoch with the best Spearman ρ on the other half, stopping after
/// `cfg.patience` epochs without improvement. Reports ρ on the full
/// dataset before and after. With `adapter_only` the encoder is frozen.
pub fn fewshot_finetune<T: Scalar>(
    model: &PanelParameters<T>,
    vocab: &Vocab,
    records: &[EvaluationRecord],
    k_percent: f64,
    cfg: &TrainConfig,
    adapter_only: bool,
) -> Result<(PanelParameters<T>, FewShotReport), TrainError> {
    cfg.validate()?;
    if model.experts() != 1 {
        return Err(TrainError::InvalidData(format!(
            "few-shot transfer expects a single-expert model, got {} experts",
            model.experts()
        )));
    }
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(TrainError::InvalidConfig(format!(
            "K = {k_percent}% outside (0, 100]"
        )));
    }
    if ![10.0, 20.0, 30.0, 40.0].contains(&k_percent) {
        log::warn!("K = {k_percent}% is outside the usual 10/20/30/40 grid");
    }
    let q_raw: Vec<f64> = records.iter().map(|r| r.human_score).collect();
    let q = rescale_min_max(&q_raw)?;
    let tokens: Vec<TokenSequence> = records
        .iter()
        .map(|r| encode_pair(vocab, &r.context, &r.response, model.config.max_len))
        .collect::<Result<_, _>>()?;

    let k = ((k_percent / 100.0) * records.len() as f64).round() as usize;
    if k < 2 {
        return Err(TrainError::TooFewRecords(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(k);
    let (train_idx, val_idx) = idx.split_at(k / 2);
    let mut train_idx = train_idx.to_vec();
    let val_tokens: Vec<TokenSequence> = val_idx.iter().map(|&i| tokens[i].clone()).collect();
    let val_q: Vec<f64> = val_idx.iter().map(|&i| q[i]).collect();

    let rho_before = rho(model, &tokens, &q)?.unwrap_or(0.0);
    let trainable = |name: &str| !adapter_only || !name.starts_with(crate::panel::ENCODER_PREFIX);
    let mut opt = OptimizerState::new(AdamWConfig {
        lr: T::lit(cfg.lr),
        weight_decay: T::lit(cfg.weight_decay),
        ..AdamWConfig::default()
    });
    let mut work = model.clone();
    let initial = rho(&work, &val_tokens, &val_q)?;
    let mut best = (initial, 0usize, work.clone());
    let mut stale = 0;
    let mut steps = 0;
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(cfg.batch_size) {
            let mb = MiniBatch {
                examples: chunk
                    .iter()
                    .map(|&i| Example {
                        tokens: tokens[i].clone(),
                        target: T::lit(q[i]),
                        expert: 0,
                    })
                    .collect(),
            };
            train_step(&mut work, &mut opt, &mb, LossKind::Mse, &trainable, steps)?;
            steps += 1;
        }
        epochs = epoch;
        let r = rho(&work, &val_tokens, &val_q)?;
        let better = match (r, best.0) {
            (Some(r), Some(b)) => r > b,
            (Some(_), None) => true,
            _ => false,
        };
        if better {
            best = (r, epoch, work.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (best_rho, best_epoch, tuned) = best;
    let rho_after = if best_epoch == 0 {
        rho_before
    } else {
        rho(&tuned, &tokens, &q)?.unwrap_or(0.0)
    };
    let report = FewShotReport {
        k_percent,
        sample_size: k,
        train_size: train_idx.len(),
        validation_size: val_tokens.len(),
        rho_before,
        rho_after,
        best_validation_rho: best_rho,
        epochs,
        best_epoch,
        steps,
        adapter_only,
    };
    Ok((tuned, report))
}
