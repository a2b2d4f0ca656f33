use crate::numkit::{
    adamw_step, forward_backward, Gradients, Graph, NodeId, NumkitError, OptimizerState, Tensor,
};
use crate::panel::{Binder, PanelParameters, TokenSequence};
use crate::scalar::Scalar;
use crate::trainer::{LossKind, TrainError};

/// One training instance, routed through expert `expert`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<T> {
    pub tokens: TokenSequence,
    /// 0/1 label for BCE, or a regression target in [0, 1] for MSE.
    pub target: T,
    pub expert: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MiniBatch<T> {
    pub examples: Vec<Example<T>>,
}

impl<T: Scalar> MiniBatch<T> {
    pub fn validate(&self, loss: LossKind) -> Result<(), TrainError> {
        let first = self
            .examples
            .first()
            .ok_or_else(|| TrainError::InvalidData("empty batch".into()))?;
        let len = first.tokens.ids.len();
        for e in &self.examples {
            if e.tokens.ids.len() != len {
                return Err(TrainError::InvalidData(
                    "sequences differ in padded length".into(),
                ));
            }
            let ok = match loss {
                LossKind::Bce => e.target == T::zero() || e.target == T::one(),
                LossKind::Mse => e.target >= T::zero() && e.target <= T::one(),
            };
            if !ok {
                return Err(TrainError::InvalidData(format!(
                    "target {} invalid for {loss:?}",
                    e.target
                )));
            }
        }
        Ok(())
    }

    /// Experts with at least one instance in the batch, ascending.
    pub fn experts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.examples.iter().map(|e| e.expert).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Mean loss over a `[B, 1]` logit column: stable BCE on the logits, or
/// squared error between `sigmoid(logit)` and the target.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    targets: &[T],
    kind: LossKind,
) -> Result<NodeId, NumkitError> {
    match kind {
        LossKind::Bce => g.bce_with_logits(logits, targets),
        LossKind::Mse => {
            let s = g.sigmoid(logits);
            let t = g.constant(Tensor::new(vec![targets.len(), 1], targets.to_vec())?);
            let d = g.sub(s, t)?;
            let sq = g.mul(d, d)?;
            Ok(g.mean(sq))
        }
    }
}

/// Loss and gradients for the tensors selected by `trainable`. Each
/// instance runs through its own expert; experts absent from the batch
/// never enter the graph and get no gradient entry.
pub fn batch_gradients<T: Scalar>(
    panel: &PanelParameters<T>,
    batch: &MiniBatch<T>,
    loss: LossKind,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<(T, Gradients<T>), TrainError> {
    batch.validate(loss)?;
    let mut g = Graph::new();
    let mut binder = Binder::with_filter(panel, trainable);
    let mut logits = Vec::with_capacity(batch.examples.len());
    for e in &batch.examples {
        logits.push(binder.expert_logit(&mut g, &e.tokens, e.expert)?);
    }
    let col = if logits.len() == 1 {
        logits[0]
    } else {
        g.concat(&logits, 0)?
    };
    let targets: Vec<T> = batch.examples.iter().map(|e| e.target).collect();
    let l = batch_loss(&mut g, col, &targets, loss)?;
    Ok(forward_backward(&g, l)?)
}

/// One optimizer step. A non-finite loss aborts with the step index and
/// leaves the parameters untouched.
pub fn train_step<T: Scalar>(
    panel: &mut PanelParameters<T>,
    opt: &mut OptimizerState<T>,
    batch: &MiniBatch<T>,
    loss: LossKind,
    trainable: &dyn Fn(&str) -> bool,
    step: usize,
) -> Result<T, TrainError> {
    let (value, grads) = match batch_gradients(panel, batch, loss, trainable) {
        Ok(r) => r,
        Err(TrainError::Numkit(NumkitError::NonFinite { .. })) => {
            return Err(TrainError::NonFiniteLoss { step })
        }
        Err(e) => return Err(e),
    };
    if !value.is_finite() || grads.values().any(|t| !t.all_finite()) {
        return Err(TrainError::NonFiniteLoss { step });
    }
    adamw_step(&mut panel.tensors, &grads, opt)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{finite_diff_grad_at, AdamWConfig};
    use crate::panel::{expert_prefix, init_panel, PanelConfig};
    use std::collections::BTreeMap;

    fn cfg() -> PanelConfig {
        PanelConfig {
            layers: 2,
            hidden: 8,
            heads: 2,
            ffn: 16,
            bottleneck: 4,
            max_len: 10,
            vocab_size: 20,
            init_range: 0.3,
            domains: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    fn seq(ids: &[usize]) -> TokenSequence {
        let mut v = ids.to_vec();
        let n = v.len();
        v.resize(10, 0);
        TokenSequence {
            ids: v,
            attention_len: n,
        }
    }

    fn batch(targets: &[(f64, usize)]) -> MiniBatch<f64> {
        MiniBatch {
            examples: targets
                .iter()
                .enumerate()
                .map(|(i, &(t, e))| Example {
                    tokens: seq(&[2, 6 + i % 10, 7, 3, 8 + i % 5, 3]),
                    target: t,
                    expert: e,
                })
                .collect(),
        }
    }

    #[test]
    fn closed_form_losses() {
        // y = 1 at logit 0: BCE = ln 2; MSE at sigmoid 0.5 against 0.2 = 0.09
        let mut g: Graph<f64> = Graph::new();
        let z = g.constant(Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap());
        let bce = batch_loss(&mut g, z, &[1.0, 0.0], LossKind::Bce).unwrap();
        let mse = batch_loss(&mut g, z, &[0.2, 1.0], LossKind::Mse).unwrap();
        let s2 = 1.0 / (1.0 + (-2.0f64).exp());
        let want_bce = (std::f64::consts::LN_2 + (1.0 + 2.0f64.exp()).ln()) / 2.0;
        let want_mse = (0.09 + (s2 - 1.0).powi(2)) / 2.0;
        assert!((g.value(bce).item() - want_bce).abs() < 1e-12);
        assert!((g.value(mse).item() - want_mse).abs() < 1e-12);
        let mut g: Graph<f64> = Graph::new();
        let z = g.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        let l = batch_loss(&mut g, z, &[1.0], LossKind::Bce).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn routing_leaves_absent_experts_bitwise_unchanged() {
        let mut panel = init_panel::<f64>(&cfg(), 1).unwrap();
        let before = panel.clone();
        let mut opt = OptimizerState::new(AdamWConfig::with_lr(0.01));
        let b = batch(&[(1.0, 0), (0.0, 2), (1.0, 0)]);
        train_step(&mut panel, &mut opt, &b, LossKind::Bce, &|_| true, 0).unwrap();
        assert_eq!(panel.expert(1).unwrap(), before.expert(1).unwrap());
        assert_ne!(panel.expert(0).unwrap(), before.expert(0).unwrap());
        assert_ne!(panel.expert(2).unwrap(), before.expert(2).unwrap());
        assert_ne!(panel.encoder(), before.encoder());
        assert_eq!(
            opt.param_steps(&format!("{}classifier.w", expert_prefix(1))),
            0
        );
    }

    #[test]
    fn encoder_gets_gradient_from_any_batch() {
        let panel = init_panel::<f64>(&cfg(), 2).unwrap();
        for e in 0..3 {
            let (_, grads) =
                batch_gradients(&panel, &batch(&[(1.0, e)]), LossKind::Bce, &|_| true).unwrap();
            let enc_norm: f64 = grads
                .iter()
                .filter(|(k, _)| k.starts_with("encoder."))
                .map(|(_, t)| t.max_abs())
                .fold(0.0, f64::max);
            assert!(enc_norm > 0.0);
            assert!(grads
                .keys()
                .all(|k| k.starts_with("encoder.") || k.starts_with(&expert_prefix(e))));
        }
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let panel = init_panel::<f64>(&cfg(), 3).unwrap();
        let b = batch(&[(0.3, 1), (0.9, 1)]);
        let (_, grads) = batch_gradients(&panel, &b, LossKind::Mse, &|_| true).unwrap();
        let names = [
            "expert1.classifier.w",
            "expert1.adapter0.up.w",
            "encoder.layer1.ffn.in.w",
        ];
        let coords: BTreeMap<String, Vec<usize>> =
            names.iter().map(|n| (n.to_string(), vec![0, 3])).collect();
        let f = |p: &crate::numkit::NamedTensors<f64>| {
            let mut q = panel.clone();
            q.tensors = p.clone();
            batch_gradients(&q, &b, LossKind::Mse, &|_| false)
                .map(|r| r.0)
                .map_err(|_| ())
        };
        let numeric = finite_diff_grad_at(
            |p| f(p).map_err(|_| NumkitError::NonFiniteObjective),
            &panel.tensors,
            &coords,
            1e-6,
        )
        .unwrap();
        for (name, idx) in &coords {
            for (k, &i) in idx.iter().enumerate() {
                let a = grads[name].data()[i];
                let n = numeric[name][k];
                assert!(
                    (a - n).abs() <= 1e-7 + 1e-5 * a.abs().max(n.abs()),
                    "{name}[{i}] {a} vs {n}"
                );
            }
        }
    }

    #[test]
    fn stationary_targets_give_zero_gradient() {
        let panel = init_panel::<f64>(&cfg(), 4).unwrap();
        let mut b = batch(&[(0.0, 0), (0.0, 0)]);
        for e in &mut b.examples {
            e.target = crate::numkit::sigmoid({
                let mut g = Graph::new();
                let l = Binder::frozen(&panel)
                    .expert_logit(&mut g, &e.tokens, 0)
                    .unwrap();
                g.value(l).item()
            });
        }
        let (loss, grads) = batch_gradients(&panel, &b, LossKind::Mse, &|_| true).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.values().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn invalid_targets_are_rejected() {
        let panel = init_panel::<f64>(&cfg(), 5).unwrap();
        let b = batch(&[(0.5, 0)]);
        assert!(batch_gradients(&panel, &b, LossKind::Bce, &|_| true).is_err());
        assert!(batch_gradients(&panel, &MiniBatch::default(), LossKind::Bce, &|_| true).is_err());
    }
}
