use serde::{Deserialize, Serialize};

use crate::panel::PanelError;

/// Architecture of a panel. One expert per entry of `domains`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    /// Transformer layer count L; each expert has L−1 adapter layers.
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Adapter bottleneck width.
    pub bottleneck: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Half-width r of the Uniform(−r, r) weight initialization.
    pub init_range: f64,
    pub domains: Vec<String>,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            hidden: 64,
            heads: 4,
            ffn: 128,
            bottleneck: 16,
            max_len: 64,
            vocab_size: 0,
            init_range: 0.02,
            domains: Vec::new(),
        }
    }
}

impl PanelConfig {
    pub fn experts(&self) -> usize {
        self.domains.len()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == name)
    }

    pub fn validate(&self) -> Result<(), PanelError> {
        let fail = |m: &str| Err(PanelError::InvalidConfig(m.to_string()));
        if self.layers < 2 {
            return fail("layers must be at least 2");
        }
        if self.hidden == 0 || self.ffn == 0 || self.bottleneck == 0 || self.heads == 0 {
            return fail("hidden, ffn, bottleneck and heads must be positive");
        }
        if self.bottleneck >= self.hidden {
            return fail("bottleneck must be smaller than hidden");
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return fail("heads must divide hidden");
        }
        if self.domains.is_empty() {
            return fail("at least one domain is required");
        }
        if self.max_len < super::vocab::MIN_MAX_LEN {
            return fail("max_len too small");
        }
        if self.vocab_size <= super::vocab::SPECIALS.len() {
            return fail("vocab must contain regular tokens");
        }
        if !(self.init_range >= 0.0 && self.init_range.is_finite()) {
            return fail("init_range must be finite and non-negative");
        }
        let mut names = self.domains.clone();
        names.sort();
        names.dedup();
        if names.len() != self.domains.len() {
            return fail("domain names must be unique");
        }
        Ok(())
    }
}
