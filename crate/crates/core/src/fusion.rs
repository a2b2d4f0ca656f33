//! Combining experts at inference time.
//!
//! Late fusion runs every expert and averages their confidences (N encoder
//! passes). Early fusion collapses the N adapter stacks and classifiers
//! into one by elementwise pooling of parameters, after which a single
//! pass suffices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::forge::ContextResponsePair;
use crate::numkit::{NamedTensors, Tensor};
use crate::panel::{
    encode_pair, expert_prefix, panel_forward, PanelError, PanelParameters, TokenSequence, Vocab,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Avg,
    Max,
    Min,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Avg, FusionMode::Max, FusionMode::Min];
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Avg => "avg",
            FusionMode::Max => "max",
            FusionMode::Min => "min",
        })
    }
}

impl FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "avg" => Ok(FusionMode::Avg),
            "max" => Ok(FusionMode::Max),
            "min" => Ok(FusionMode::Min),
            other => Err(format!(
                "unknown fusion mode {other:?} (expected avg, max or min)"
            )),
        }
    }
}

/// Per-expert confidences behind a final score.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreTrace<T> {
    /// `(expert index, confidence)` for every expert that was run.
    pub components: Vec<(usize, T)>,
    pub score: T,
    pub encoder_passes: usize,
}

/// Scores one input. With a hint only that expert runs; without one all
/// experts run and their confidences are averaged in index order.
pub fn score<T: Scalar>(
    panel: &PanelParameters<T>,
    tokens: &TokenSequence,
    hint: Option<usize>,
) -> Result<ScoreTrace<T>, PanelError> {
    match hint {
        Some(n) => {
            let y = panel_forward(panel, tokens, n)?;
            Ok(ScoreTrace {
                components: vec![(n, y)],
                score: y,
                encoder_passes: 1,
            })
        }
        None => {
            let experts = panel.experts();
            let mut components = Vec::with_capacity(experts);
            for n in 0..experts {
                components.push((n, panel_forward(panel, tokens, n)?));
            }
            let total = components.iter().fold(T::zero(), |acc, &(_, y)| acc + y);
            Ok(ScoreTrace {
                score: total / T::from_usize(experts).unwrap(),
                components,
                encoder_passes: experts,
            })
        }
    }
}

pub fn count_passes<T>(trace: &ScoreTrace<T>) -> usize {
    trace.encoder_passes
}

/// Resolves a domain name to an expert index. Unknown names fall back to
/// the out-of-domain path.
pub fn resolve_hint<T: Scalar>(panel: &PanelParameters<T>, domain: Option<&str>) -> Option<usize> {
    let name = domain?;
    let idx = panel.config.domain_index(name);
    if idx.is_none() {
        log::info!("domain {name:?} has no expert; scoring with all experts");
    }
    idx
}

/// Tokenizes a pair and scores it, using its domain tag as hint when
/// `use_domain_hint` is set.
pub fn score_pair<T: Scalar>(
    panel: &PanelParameters<T>,
    vocab: &Vocab,
    pair: &ContextResponsePair,
    use_domain_hint: bool,
) -> Result<ScoreTrace<T>, PanelError> {
    let tokens = encode_pair(vocab, &pair.context, &pair.response, panel.config.max_len)?;
    let hint = if use_domain_hint {
        resolve_hint(panel, Some(&pair.domain))
    } else {
        None
    };
    score(panel, &tokens, hint)
}

/// Elementwise pooling of all experts' adapter and classifier tensors
/// (weights and biases alike). Returns a suffix-keyed expert.
pub fn pool_experts<T: Scalar>(
    panel: &PanelParameters<T>,
    mode: FusionMode,
) -> Result<NamedTensors<T>, PanelError> {
    let experts: Vec<NamedTensors<T>> = (0..panel.experts())
        .map(|n| panel.expert(n))
        .collect::<Result<_, _>>()?;
    let first = experts
        .first()
        .ok_or(PanelError::InvalidConfig("panel has no experts".into()))?;
    let count = T::from_usize(experts.len()).unwrap();
    let mut pooled = NamedTensors::new();
    for (suffix, base) in first {
        let mut acc: Vec<T> = base.data().to_vec();
        for (i, e) in experts.iter().enumerate().skip(1) {
            let t = e
                .get(suffix)
                .filter(|t| t.shape() == base.shape())
                .ok_or_else(|| {
                    PanelError::ShapeTable(format!(
                        "{}{suffix} differs in shape from expert 0",
                        expert_prefix(i)
                    ))
                })?;
            for (a, &v) in acc.iter_mut().zip(t.data()) {
                *a = match mode {
                    FusionMode::Avg => *a + v,
                    FusionMode::Max => a.max(v),
                    FusionMode::Min => a.min(v),
                };
            }
        }
        if mode == FusionMode::Avg {
            for a in &mut acc {
                *a = *a / count;
            }
        }
        pooled.insert(suffix.clone(), Tensor::new(base.shape().to_vec(), acc)?);
    }
    Ok(pooled)
}

/// The shared encoder with the pooled expert as its only expert.
pub fn pooled_panel<T: Scalar>(
    panel: &PanelParameters<T>,
    mode: FusionMode,
) -> Result<PanelParameters<T>, PanelError> {
    let expert = pool_experts(panel, mode)?;
    panel.with_single_expert(&format!("pooled-{mode}"), &expert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{init_panel, PanelConfig};

    fn setup(experts: usize, seed: u64) -> (PanelParameters<f64>, Vec<TokenSequence>) {
        let vocab = Vocab::from_texts(["a b c d e f g h"], 1).unwrap();
        let cfg = PanelConfig {
            layers: 3,
            hidden: 8,
            heads: 2,
            ffn: 8,
            bottleneck: 2,
            max_len: 10,
            vocab_size: vocab.len(),
            init_range: 0.4,
            domains: (0..experts).map(|i| format!("d{i}")).collect(),
        };
        let panel = init_panel(&cfg, seed).unwrap();
        let probes = ["a b", "c d e", "f"]
            .iter()
            .zip(["h", "g a", "b c d"])
            .map(|(c, r)| encode_pair(&vocab, &[c.to_string()], r, 10).unwrap())
            .collect();
        (panel, probes)
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    /// Panel whose expert n outputs exactly `targets[n]` for any input.
    fn constant_experts(targets: &[f64]) -> (PanelParameters<f64>, Vec<TokenSequence>) {
        let (mut panel, probes) = setup(targets.len(), 1);
        for (n, &t) in targets.iter().enumerate() {
            let p = expert_prefix(n);
            panel
                .tensors
                .get_mut(&format!("{p}classifier.w"))
                .unwrap()
                .data_mut()
                .fill(0.0);
            panel
                .tensors
                .get_mut(&format!("{p}classifier.b"))
                .unwrap()
                .data_mut()[0] = logit(t);
        }
        (panel, probes)
    }

    #[test]
    fn unhinted_is_mean_hinted_is_selection() {
        let (panel, probes) = constant_experts(&[0.2, 0.4, 0.9]);
        let t = score(&panel, &probes[0], None).unwrap();
        assert!((t.score - 0.5).abs() < 1e-12);
        assert_eq!(t.encoder_passes, 3);
        assert_eq!(t.components.len(), 3);
        let h = score(&panel, &probes[0], Some(1)).unwrap();
        assert!((h.score - 0.4).abs() < 1e-12);
        assert_eq!(count_passes(&h), 1);
        assert!(score(&panel, &probes[0], Some(3)).is_err());
    }

    #[test]
    fn late_fusion_equals_component_mean() {
        let (panel, probes) = setup(4, 3);
        for seq in &probes {
            let t = score(&panel, seq, None).unwrap();
            let mean = (0..4)
                .map(|n| panel_forward(&panel, seq, n).unwrap())
                .sum::<f64>()
                / 4.0;
            assert!((t.score - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn single_expert_all_paths_agree() {
        let (panel, probes) = setup(1, 5);
        for seq in &probes {
            let hinted = score(&panel, seq, Some(0)).unwrap().score;
            let fused = score(&panel, seq, None).unwrap().score;
            assert_eq!(hinted, fused);
            for mode in FusionMode::ALL {
                let pooled = pooled_panel(&panel, mode).unwrap();
                assert_eq!(score(&pooled, seq, None).unwrap().score, hinted);
            }
        }
    }

    #[test]
    fn pooling_elementwise() {
        let (mut panel, _) = setup(2, 0);
        panel
            .tensors
            .get_mut("expert0.adapter0.up.w")
            .unwrap()
            .data_mut()[3] = 1.0;
        panel
            .tensors
            .get_mut("expert1.adapter0.up.w")
            .unwrap()
            .data_mut()[3] = 3.0;
        let at = |mode| pool_experts(&panel, mode).unwrap()["adapter0.up.w"].data()[3];
        assert_eq!(at(FusionMode::Avg), 2.0);
        assert_eq!(at(FusionMode::Max), 3.0);
        assert_eq!(at(FusionMode::Min), 1.0);
    }

    #[test]
    fn identical_experts_pool_to_themselves() {
        let (mut panel, _) = setup(3, 2);
        let e0 = panel.expert(0).unwrap();
        panel.set_expert(1, &e0).unwrap();
        panel.set_expert(2, &e0).unwrap();
        for mode in FusionMode::ALL {
            let pooled = pool_experts(&panel, mode).unwrap();
            for (k, t) in &e0 {
                let diff = t.zip_map(&pooled[k], |a, b| a - b).max_abs();
                assert!(diff < 1e-15, "{mode} {k}");
            }
        }
    }

    #[test]
    fn pooling_order_and_permutation_properties() {
        let (panel, probes) = setup(3, 8);
        let avg = pool_experts(&panel, FusionMode::Avg).unwrap();
        let max = pool_experts(&panel, FusionMode::Max).unwrap();
        let min = pool_experts(&panel, FusionMode::Min).unwrap();
        for k in avg.keys() {
            for ((&lo, &mid), &hi) in min[k].data().iter().zip(avg[k].data()).zip(max[k].data()) {
                assert!(lo <= mid + 1e-15 && mid <= hi + 1e-15);
            }
        }
        // permute experts: 0,1,2 -> 2,0,1
        let mut rotated = panel.clone();
        let experts: Vec<_> = (0..3).map(|n| panel.expert(n).unwrap()).collect();
        for n in 0..3 {
            rotated.set_expert(n, &experts[(n + 2) % 3]).unwrap();
        }
        assert_eq!(pool_experts(&rotated, FusionMode::Max).unwrap(), max);
        assert_eq!(pool_experts(&rotated, FusionMode::Min).unwrap(), min);
        let ravg = pool_experts(&rotated, FusionMode::Avg).unwrap();
        for k in avg.keys() {
            assert!(avg[k].zip_map(&ravg[k], |a, b| a - b).max_abs() < 1e-15);
        }
        let pooled = pooled_panel(&panel, FusionMode::Avg).unwrap();
        for seq in &probes {
            let a = score(&pooled, seq, None).unwrap();
            let b = score(&pooled, seq, None).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.encoder_passes, 1);
            assert!(a.score > 0.0 && a.score < 1.0);
        }
    }

    #[test]
    fn unknown_domain_hint_falls_back() {
        let (panel, _) = setup(2, 0);
        assert_eq!(resolve_hint(&panel, Some("d1")), Some(1));
        assert_eq!(resolve_hint(&panel, Some("nope")), None);
        assert_eq!(resolve_hint(&panel, None), None);
    }

    #[test]
    fn monotone_transform_breaks_averaged_ranking() {
        // Two inputs, two experts: averages order differently once scores are
        // passed through a steep increasing transform.
        let a = [0.1, 0.9];
        let b = [0.45, 0.5];
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&a) > mean(&b));
        let cube = |v: &[f64]| v.iter().map(|x| x.powi(9)).collect::<Vec<_>>();
        assert!(mean(&cube(&a)) > mean(&cube(&b)));
        let sqrtish = |v: &[f64]| v.iter().map(|x| x.powf(0.05)).collect::<Vec<_>>();
        assert!(mean(&sqrtish(&a)) < mean(&sqrtish(&b)));
    }
}
