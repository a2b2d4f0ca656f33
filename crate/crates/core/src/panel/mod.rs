//! Tokenization, the shared encoder with per-domain adapter experts, and
//! checkpoint persistence.

mod checkpoint;
mod config;
mod forward;
mod params;
mod vocab;

use thiserror::Error;

use crate::numkit::NumkitError;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, Checkpoint,
    MAGIC, VERSION,
};
pub use config::PanelConfig;
pub use forward::{confidence, panel_forward, panel_forward_without_adapters, Binder};
pub(crate) use params::init_expert;
pub use params::{
    encoder_shapes, expected_shapes, expert_prefix, expert_shapes, init_panel, PanelParameters,
    ENCODER_PREFIX,
};
pub use vocab::{
    build_vocab, decode, encode_pair, tokenize, TokenSequence, Vocab, MIN_MAX_LEN, SPECIALS,
};

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("invalid panel config: {0}")]
    InvalidConfig(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("context and response must each contain at least one token")]
    EmptyInput,
    #[error("max_len {0} cannot hold specials plus one context and one response token")]
    MaxLenTooSmall(usize),
    #[error("token sequence of active length {0} does not fit the panel")]
    InvalidTokens(usize),
    #[error("expert {id} out of range (panel has {count})")]
    ExpertOutOfRange { id: usize, count: usize },
    #[error("parameter {0} is not finite")]
    NonFiniteParameter(String),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint shape table: {0}")]
    ShapeTable(String),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Numkit(#[from] NumkitError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{forward_backward, relative_error, Graph, NamedTensors};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(experts: usize) -> PanelConfig {
        PanelConfig {
            layers: 3,
            hidden: 8,
            heads: 2,
            ffn: 12,
            bottleneck: 3,
            max_len: 12,
            vocab_size: 0,
            init_range: 0.3,
            domains: (0..experts).map(|i| format!("d{i}")).collect(),
        }
    }

    fn setup(experts: usize, seed: u64) -> (PanelParameters<f64>, Vocab, Vec<TokenSequence>) {
        let vocab = Vocab::from_texts(
            ["how are you today i am fine thanks what about the weather"],
            1,
        )
        .unwrap();
        let mut cfg = tiny_config(experts);
        cfg.vocab_size = vocab.len();
        let panel = init_panel(&cfg, seed).unwrap();
        let probes = [
            (vec!["how are you"], "i am fine"),
            (vec!["what about the weather", "fine"], "thanks"),
            (vec!["today"], "how are you today i am fine thanks"),
        ]
        .iter()
        .map(|(c, r)| {
            let ctx: Vec<String> = c.iter().map(|s| s.to_string()).collect();
            encode_pair(&vocab, &ctx, r, cfg.max_len).unwrap()
        })
        .collect();
        (panel, vocab, probes)
    }

    #[test]
    fn zero_panel_scores_one_half() {
        let (mut panel, _, probes) = setup(2, 0);
        panel.config.init_range = 0.0;
        let zero = init_panel::<f64>(&panel.config, 3).unwrap();
        for seq in &probes {
            assert_eq!(panel_forward(&zero, seq, 0).unwrap(), 0.5);
            assert_eq!(panel_forward(&zero, seq, 1).unwrap(), 0.5);
        }
    }

    #[test]
    fn output_strictly_inside_unit_interval() {
        let (mut panel, _, probes) = setup(1, 1);
        // push the classifier bias to an extreme
        panel
            .tensors
            .get_mut("expert0.classifier.b")
            .unwrap()
            .data_mut()[0] = 1e4;
        let y = panel_forward(&panel, &probes[0], 0).unwrap();
        assert!(y > 0.0 && y < 1.0);
    }

    #[test]
    fn identical_experts_identical_scores() {
        let (mut panel, _, probes) = setup(2, 4);
        let e0 = panel.expert(0).unwrap();
        panel.set_expert(1, &e0).unwrap();
        for seq in &probes {
            assert_eq!(
                panel_forward(&panel, seq, 0).unwrap(),
                panel_forward(&panel, seq, 1).unwrap()
            );
        }
    }

    #[test]
    fn expert_isolation_under_perturbation() {
        let (panel, _, probes) = setup(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut perturbed = panel.clone();
        for (name, t) in perturbed.tensors.iter_mut() {
            if name.starts_with(&expert_prefix(1)) {
                for v in t.data_mut() {
                    *v += rng.gen_range(-0.5..0.5);
                }
            }
        }
        for seq in &probes {
            for n in [0, 2] {
                assert_eq!(
                    panel_forward(&panel, seq, n).unwrap(),
                    panel_forward(&perturbed, seq, n).unwrap()
                );
            }
            assert_ne!(
                panel_forward(&panel, seq, 1).unwrap(),
                panel_forward(&perturbed, seq, 1).unwrap()
            );
        }
    }

    #[test]
    fn zero_up_projection_is_adapter_free() {
        let (mut panel, _, probes) = setup(2, 6);
        for (name, t) in panel.tensors.iter_mut() {
            if name.starts_with(&expert_prefix(1)) && name.contains(".up.") {
                t.data_mut().fill(0.0);
            }
        }
        for seq in &probes {
            let with = panel_forward(&panel, seq, 1).unwrap();
            let without = panel_forward_without_adapters(&panel, seq, 1).unwrap();
            assert_eq!(with, without);
            assert_ne!(
                panel_forward(&panel, seq, 0).unwrap(),
                panel_forward_without_adapters(&panel, seq, 0).unwrap()
            );
        }
    }

    #[test]
    fn out_of_range_expert() {
        let (panel, _, probes) = setup(2, 0);
        assert!(matches!(
            panel_forward(&panel, &probes[0], 2),
            Err(PanelError::ExpertOutOfRange { id: 2, count: 2 })
        ));
    }

    #[test]
    fn f32_panel_close_to_f64() {
        let (panel, _, probes) = setup(1, 2);
        let p32 = PanelParameters::<f32> {
            config: panel.config.clone(),
            tensors: panel
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        };
        for seq in &probes {
            let a = panel_forward(&panel, seq, 0).unwrap();
            let b = panel_forward(&p32, seq, 0).unwrap() as f64;
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let (panel, _, probes) = setup(2, 7);
        let seq = &probes[1];
        let mut g = Graph::new();
        let logit = Binder::trainable(&panel)
            .expert_logit(&mut g, seq, 1)
            .unwrap();
        let y = g.sigmoid(logit);
        let loss = g.sum(y);
        let (_, grads) = forward_backward(&g, loss).unwrap();
        let f = |tensors: &NamedTensors<f64>| {
            let p = PanelParameters {
                config: panel.config.clone(),
                tensors: tensors.clone(),
            };
            Ok(panel_forward(&p, seq, 1).unwrap())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut coords = std::collections::BTreeMap::new();
        for name in [
            "encoder.layer0.attn.q.w",
            "encoder.tok_embed",
            "expert1.adapter1.down.w",
            "encoder.layer2.ffn.in.b",
        ] {
            let len = panel.tensor(name).len();
            coords.insert(
                name.to_string(),
                (0..4).map(|_| rng.gen_range(0..len)).collect::<Vec<_>>(),
            );
        }
        let numeric = crate::numkit::finite_diff_grad_at(f, &panel.tensors, &coords, 1e-5).unwrap();
        let mut nonzero = 0;
        for (name, idx) in &coords {
            for (k, &i) in idx.iter().enumerate() {
                let a = grads[name].data()[i];
                let n = numeric[name][k];
                if a.abs() > 1e-9 {
                    nonzero += 1;
                }
                assert!(relative_error(a, n, 1e-8) < 1e-4, "{name}[{i}]: {a} vs {n}");
            }
        }
        assert!(nonzero > 0);
        // expert 0 is not on this path
        assert!(grads.keys().all(|k| !k.starts_with("expert0.")));
    }

    #[test]
    fn checkpoint_round_trip_bitwise() {
        let (panel, vocab, probes) = setup(3, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.poe");
        save_checkpoint(&path, &panel, &vocab).unwrap();
        let ck: Checkpoint<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(ck.vocab, vocab);
        assert_eq!(ck.panel.config, panel.config);
        for (name, t) in &panel.tensors {
            let u = &ck.panel.tensors[name];
            assert!(t
                .data()
                .iter()
                .zip(u.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        for seq in &probes {
            assert_eq!(
                panel_forward(&panel, seq, 2).unwrap(),
                panel_forward(&ck.panel, seq, 2).unwrap()
            );
        }
    }

    #[test]
    fn checkpoint_rejects_tampering() {
        let (panel, vocab, _) = setup(1, 0);
        let bytes = checkpoint_to_bytes(&panel, &vocab);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes::<f64>(&bad_magic),
            Err(PanelError::BadMagic)
        ));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(
            checkpoint_from_bytes::<f64>(&bad_version),
            Err(PanelError::Version { found: 9, .. })
        ));

        assert!(matches!(
            checkpoint_from_bytes::<f64>(&bytes[..bytes.len() - 3]),
            Err(PanelError::Truncated)
        ));

        // locate the first tensor's first dimension and corrupt it
        let name = panel.tensors.keys().next().unwrap();
        let pos = bytes
            .windows(name.len())
            .position(|w| w == name.as_bytes())
            .unwrap()
            + name.len();
        let mut bad_shape = bytes.clone();
        bad_shape[pos + 4] ^= 0x01;
        assert!(matches!(
            checkpoint_from_bytes::<f64>(&bad_shape),
            Err(PanelError::ShapeTable(_))
        ));
    }
}
