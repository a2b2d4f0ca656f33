//! Encoder, adapter and classifier forward computation.
//!
//! The path for expert `n` is `T_1 → π^n_1 → T_2 → … → π^n_{L−1} → T_L`,
//! then the final-layer vector at position 0 (`<s>`) goes through the
//! expert's linear classifier and a sigmoid.

use std::collections::HashMap;

use crate::numkit::{Graph, NodeId, NumkitError};
use crate::panel::params::expert_prefix;
use crate::panel::{PanelError, PanelParameters, TokenSequence};
use crate::scalar::Scalar;

const NORM_EPS: f64 = 1e-5;

/// Binds panel tensors into a graph, as trainable leaves or as constants.
pub struct Binder<'p, T> {
    panel: &'p PanelParameters<T>,
    trainable: Box<dyn Fn(&str) -> bool + 'p>,
    constants: HashMap<String, NodeId>,
}

impl<'p, T: Scalar> Binder<'p, T> {
    /// Every tensor becomes a trainable leaf.
    pub fn trainable(panel: &'p PanelParameters<T>) -> Self {
        Self::with_filter(panel, |_| true)
    }

    /// Every tensor becomes a constant; the graph yields no parameter gradients.
    pub fn frozen(panel: &'p PanelParameters<T>) -> Self {
        Self::with_filter(panel, |_| false)
    }

    pub fn with_filter(
        panel: &'p PanelParameters<T>,
        trainable: impl Fn(&str) -> bool + 'p,
    ) -> Self {
        Self {
            panel,
            trainable: Box::new(trainable),
            constants: HashMap::new(),
        }
    }

    pub fn panel(&self) -> &'p PanelParameters<T> {
        self.panel
    }

    fn get(&mut self, g: &mut Graph<T>, name: &str) -> NodeId {
        let t = self.panel.tensor(name);
        if (self.trainable)(name) {
            g.param(name, t)
        } else if let Some(&id) = self.constants.get(name) {
            id
        } else {
            let id = g.constant(t.clone());
            self.constants.insert(name.to_string(), id);
            id
        }
    }

    fn linear(&mut self, g: &mut Graph<T>, x: NodeId, prefix: &str) -> Result<NodeId, NumkitError> {
        let w = self.get(g, &format!("{prefix}.w"));
        let b = self.get(g, &format!("{prefix}.b"));
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }

    fn norm(&mut self, g: &mut Graph<T>, x: NodeId, prefix: &str) -> Result<NodeId, NumkitError> {
        let gamma = self.get(g, &format!("{prefix}.gamma"));
        let beta = self.get(g, &format!("{prefix}.beta"));
        let n = g.layer_norm(x, T::lit(NORM_EPS));
        let s = g.mul(n, gamma)?;
        g.add(s, beta)
    }

    fn embed(&mut self, g: &mut Graph<T>, ids: &[usize]) -> Result<NodeId, NumkitError> {
        let tok = self.get(g, "encoder.tok_embed");
        let pos = self.get(g, "encoder.pos_embed");
        let positions: Vec<usize> = (0..ids.len()).collect();
        let te = g.embedding(tok, ids)?;
        let pe = g.embedding(pos, &positions)?;
        let x = g.add(te, pe)?;
        self.norm(g, x, "encoder.embed_norm")
    }

    fn transformer_layer(
        &mut self,
        g: &mut Graph<T>,
        x: NodeId,
        l: usize,
    ) -> Result<NodeId, NumkitError> {
        let cfg = &self.panel.config;
        let (heads, dh) = (cfg.heads, cfg.head_dim());
        let p = format!("encoder.layer{l}");
        let q = self.linear(g, x, &format!("{p}.attn.q"))?;
        let k = self.linear(g, x, &format!("{p}.attn.k"))?;
        let v = self.linear(g, x, &format!("{p}.attn.v"))?;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice(q, 1, h * dh, dh)?;
            let kh = g.slice(k, 1, h * dh, dh)?;
            let vh = g.slice(v, 1, h * dh, dh)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax(scores);
            outs.push(g.matmul(attn, vh)?);
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            g.concat(&outs, 1)?
        };
        let o = self.linear(g, cat, &format!("{p}.attn.o"))?;
        let r = g.add(x, o)?;
        let x = self.norm(g, r, &format!("{p}.attn_norm"))?;
        let h = self.linear(g, x, &format!("{p}.ffn.in"))?;
        let h = g.gelu(h);
        let f = self.linear(g, h, &format!("{p}.ffn.out"))?;
        let r = g.add(x, f)?;
        self.norm(g, r, &format!("{p}.ffn_norm"))
    }

    /// Residual bottleneck: `x + Up(GELU(Down(x)))`.
    fn adapter(
        &mut self,
        g: &mut Graph<T>,
        x: NodeId,
        expert: usize,
        l: usize,
    ) -> Result<NodeId, NumkitError> {
        let p = format!("{}adapter{l}", expert_prefix(expert));
        let down = self.linear(g, x, &format!("{p}.down"))?;
        let act = g.gelu(down);
        let up = self.linear(g, act, &format!("{p}.up"))?;
        g.add(x, up)
    }

    /// Pre-sigmoid score `[1, 1]` of `tokens` under the given adapters and classifier.
    fn logit_route(
        &mut self,
        g: &mut Graph<T>,
        tokens: &TokenSequence,
        adapters: Option<usize>,
        classifier: usize,
    ) -> Result<NodeId, PanelError> {
        self.panel.check_expert(classifier)?;
        if let Some(n) = adapters {
            self.panel.check_expert(n)?;
        }
        let cfg = &self.panel.config;
        let (layers, max_len) = (cfg.layers, cfg.max_len);
        let ids = tokens.active();
        if ids.is_empty() || ids.len() > max_len {
            return Err(PanelError::InvalidTokens(ids.len()));
        }
        let mut x = self.embed(g, ids)?;
        for l in 0..layers {
            x = self.transformer_layer(g, x, l)?;
            if let (Some(n), true) = (adapters, l + 1 < layers) {
                x = self.adapter(g, x, n, l)?;
            }
        }
        let pooled = g.slice(x, 0, 0, 1)?;
        let prefix = expert_prefix(classifier);
        Ok(self.linear(g, pooled, &format!("{prefix}classifier"))?)
    }

    /// Logit node for `tokens` through expert `n`.
    pub fn expert_logit(
        &mut self,
        g: &mut Graph<T>,
        tokens: &TokenSequence,
        n: usize,
    ) -> Result<NodeId, PanelError> {
        self.logit_route(g, tokens, Some(n), n)
    }

    /// Logit node for the encoder without any adapter, read out by classifier `n`.
    pub fn adapter_free_logit(
        &mut self,
        g: &mut Graph<T>,
        tokens: &TokenSequence,
        n: usize,
    ) -> Result<NodeId, PanelError> {
        self.logit_route(g, tokens, None, n)
    }
}

/// Maps a logit to a confidence kept strictly inside (0, 1).
pub fn confidence<T: Scalar>(logit: T) -> T {
    let eps = T::epsilon();
    crate::numkit::sigmoid(logit).max(eps).min(T::one() - eps)
}

/// Confidence `ŷ ∈ (0, 1)` that the response is appropriate, according to expert `n`.
pub fn panel_forward<T: Scalar>(
    panel: &PanelParameters<T>,
    tokens: &TokenSequence,
    n: usize,
) -> Result<T, PanelError> {
    let mut g = Graph::new();
    let logit = Binder::frozen(panel).expert_logit(&mut g, tokens, n)?;
    Ok(confidence(g.value(logit).item()))
}

/// Confidence from the adapter-free encoder path read out by classifier `n`.
pub fn panel_forward_without_adapters<T: Scalar>(
    panel: &PanelParameters<T>,
    tokens: &TokenSequence,
    n: usize,
) -> Result<T, PanelError> {
    let mut g = Graph::new();
    let logit = Binder::frozen(panel).adapter_free_logit(&mut g, tokens, n)?;
    Ok(confidence(g.value(logit).item()))
}
