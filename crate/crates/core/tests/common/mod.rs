#![allow(dead_code)]

use poe_core::forge::synthetic::{rule_task, RuleTask};
use poe_core::forge::DomainDataset;
use poe_core::panel::{build_vocab, init_panel, PanelConfig, PanelParameters, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn small_config(vocab: &Vocab, domains: &[&str]) -> PanelConfig {
    PanelConfig {
        layers: 2,
        hidden: 32,
        heads: 2,
        ffn: 64,
        bottleneck: 8,
        max_len: 16,
        vocab_size: vocab.len(),
        init_range: 0.1,
        domains: domains.iter().map(|d| d.to_string()).collect(),
    }
}

pub fn rule_data(task: &RuleTask, seed: u64) -> (Vec<DomainDataset>, Vocab) {
    let data = rule_task(task, &mut ChaCha8Rng::seed_from_u64(seed));
    let vocab = build_vocab(&data, 1).unwrap();
    (data, vocab)
}

pub fn panel_for(data: &[DomainDataset], vocab: &Vocab, seed: u64) -> PanelParameters<f64> {
    let domains: Vec<&str> = data.iter().map(|d| d.domain.as_str()).collect();
    init_panel(&small_config(vocab, &domains), seed).unwrap()
}
