use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numkit::{NamedTensors, Tensor};
use crate::panel::{PanelConfig, PanelError};
use crate::scalar::Scalar;

pub const ENCODER_PREFIX: &str = "encoder.";

/// Name prefix shared by every tensor of expert `n` (adapter stack and classifier).
pub fn expert_prefix(n: usize) -> String {
    format!("expert{n}.")
}

/// Tensor shapes of the shared encoder.
pub fn encoder_shapes(cfg: &PanelConfig) -> BTreeMap<String, Vec<usize>> {
    let (d, f) = (cfg.hidden, cfg.ffn);
    let mut s = BTreeMap::new();
    s.insert("encoder.tok_embed".to_string(), vec![cfg.vocab_size, d]);
    s.insert("encoder.pos_embed".to_string(), vec![cfg.max_len, d]);
    s.insert("encoder.embed_norm.gamma".to_string(), vec![d]);
    s.insert("encoder.embed_norm.beta".to_string(), vec![d]);
    for l in 0..cfg.layers {
        let p = format!("encoder.layer{l}.");
        for proj in ["q", "k", "v", "o"] {
            s.insert(format!("{p}attn.{proj}.w"), vec![d, d]);
            s.insert(format!("{p}attn.{proj}.b"), vec![d]);
        }
        s.insert(format!("{p}attn_norm.gamma"), vec![d]);
        s.insert(format!("{p}attn_norm.beta"), vec![d]);
        s.insert(format!("{p}ffn.in.w"), vec![d, f]);
        s.insert(format!("{p}ffn.in.b"), vec![f]);
        s.insert(format!("{p}ffn.out.w"), vec![f, d]);
        s.insert(format!("{p}ffn.out.b"), vec![d]);
        s.insert(format!("{p}ffn_norm.gamma"), vec![d]);
        s.insert(format!("{p}ffn_norm.beta"), vec![d]);
    }
    s
}

/// Shapes of one expert, keyed by the name suffix after [`expert_prefix`].
pub fn expert_shapes(cfg: &PanelConfig) -> BTreeMap<String, Vec<usize>> {
    let (d, b) = (cfg.hidden, cfg.bottleneck);
    let mut s = BTreeMap::new();
    for l in 0..cfg.layers - 1 {
        s.insert(format!("adapter{l}.down.w"), vec![d, b]);
        s.insert(format!("adapter{l}.down.b"), vec![b]);
        s.insert(format!("adapter{l}.up.w"), vec![b, d]);
        s.insert(format!("adapter{l}.up.b"), vec![d]);
    }
    s.insert("classifier.w".to_string(), vec![d, 1]);
    s.insert("classifier.b".to_string(), vec![1]);
    s
}

/// Every tensor name and shape a panel with this config must hold.
pub fn expected_shapes(cfg: &PanelConfig) -> BTreeMap<String, Vec<usize>> {
    let mut all = encoder_shapes(cfg);
    let expert = expert_shapes(cfg);
    for n in 0..cfg.experts() {
        let prefix = expert_prefix(n);
        for (suffix, shape) in &expert {
            all.insert(format!("{prefix}{suffix}"), shape.clone());
        }
    }
    all
}

/// Shared encoder plus N adapter/classifier experts, stored as named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelParameters<T> {
    pub config: PanelConfig,
    pub tensors: NamedTensors<T>,
}

fn init_tensor<T: Scalar>(
    name: &str,
    shape: &[usize],
    range: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    if name.ends_with(".gamma") {
        Tensor::full(shape, T::one())
    } else if name.ends_with(".b") || name.ends_with(".beta") || range == 0.0 {
        Tensor::zeros(shape)
    } else {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(rng.gen_range(-range..range)))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }
}

/// Draws a fresh expert with the panel's init rule, keyed by suffix.
pub(crate) fn init_expert<T: Scalar>(cfg: &PanelConfig, seed: u64) -> NamedTensors<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    expert_shapes(cfg)
        .into_iter()
        .map(|(suffix, shape)| {
            let t = init_tensor(&suffix, &shape, cfg.init_range, &mut rng);
            (suffix, t)
        })
        .collect()
}

/// Initializes every weight from Uniform(−r, r) with one shared `r`;
/// biases and norm shifts start at zero, norm scales at one.
pub fn init_panel<T: Scalar>(
    config: &PanelConfig,
    seed: u64,
) -> Result<PanelParameters<T>, PanelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = expected_shapes(config)
        .into_iter()
        .map(|(name, shape)| {
            let t = init_tensor(&name, &shape, config.init_range, &mut rng);
            (name, t)
        })
        .collect();
    Ok(PanelParameters {
        config: config.clone(),
        tensors,
    })
}

impl<T: Scalar> PanelParameters<T> {
    pub fn experts(&self) -> usize {
        self.config.experts()
    }

    pub fn tensor(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("panel has no tensor {name}"))
    }

    pub fn check_expert(&self, n: usize) -> Result<(), PanelError> {
        if n < self.experts() {
            Ok(())
        } else {
            Err(PanelError::ExpertOutOfRange {
                id: n,
                count: self.experts(),
            })
        }
    }

    /// Tensors of expert `n`, keyed by name suffix.
    pub fn expert(&self, n: usize) -> Result<NamedTensors<T>, PanelError> {
        self.check_expert(n)?;
        let prefix = expert_prefix(n);
        Ok(self
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|s| (s.to_string(), v.clone())))
            .collect())
    }

    pub fn encoder(&self) -> NamedTensors<T> {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(ENCODER_PREFIX))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Overwrites expert `n` with `expert` (suffix-keyed, full set required).
    pub fn set_expert(&mut self, n: usize, expert: &NamedTensors<T>) -> Result<(), PanelError> {
        self.check_expert(n)?;
        check_expert_shapes(&self.config, expert)?;
        let prefix = expert_prefix(n);
        for (suffix, t) in expert {
            self.tensors.insert(format!("{prefix}{suffix}"), t.clone());
        }
        Ok(())
    }

    /// Appends a new expert for `domain` and returns its index.
    pub fn push_expert(
        &mut self,
        domain: &str,
        expert: &NamedTensors<T>,
    ) -> Result<usize, PanelError> {
        check_expert_shapes(&self.config, expert)?;
        if self.config.domain_index(domain).is_some() {
            return Err(PanelError::InvalidConfig(format!(
                "domain {domain:?} already present"
            )));
        }
        let n = self.experts();
        self.config.domains.push(domain.to_string());
        let prefix = expert_prefix(n);
        for (suffix, t) in expert {
            self.tensors.insert(format!("{prefix}{suffix}"), t.clone());
        }
        Ok(n)
    }

    /// A panel holding the same encoder and a single given expert.
    pub fn with_single_expert(
        &self,
        domain: &str,
        expert: &NamedTensors<T>,
    ) -> Result<Self, PanelError> {
        check_expert_shapes(&self.config, expert)?;
        let mut config = self.config.clone();
        config.domains = vec![domain.to_string()];
        let mut tensors = self.encoder();
        let prefix = expert_prefix(0);
        for (suffix, t) in expert {
            tensors.insert(format!("{prefix}{suffix}"), t.clone());
        }
        Ok(Self { config, tensors })
    }

    /// Checks the tensor table against the config and that every entry is finite.
    pub fn validate(&self) -> Result<(), PanelError> {
        self.config.validate()?;
        let expected = expected_shapes(&self.config);
        if expected.len() != self.tensors.len() {
            return Err(PanelError::ShapeTable(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in &expected {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| PanelError::ShapeTable(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(PanelError::ShapeTable(format!(
                    "{name}: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(PanelError::NonFiniteParameter(name.clone()));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

pub(crate) fn check_expert_shapes<T: Scalar>(
    cfg: &PanelConfig,
    expert: &NamedTensors<T>,
) -> Result<(), PanelError> {
    let expected = expert_shapes(cfg);
    if expected.len() != expert.len() {
        return Err(PanelError::ShapeTable(format!(
            "expert has {} tensors, expected {}",
            expert.len(),
            expected.len()
        )));
    }
    for (suffix, shape) in &expected {
        match expert.get(suffix) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => {
                return Err(PanelError::ShapeTable(format!(
                    "{suffix}: expected {shape:?}, found {:?}",
                    t.shape()
                )))
            }
            None => return Err(PanelError::ShapeTable(format!("expert missing {suffix}"))),
        }
    }
    Ok(())
}
