//! Binary checkpoint format.
//!
//! All integers are little-endian. Layout:
//!
//! ```text
//! "POE1"  version:u32
//! config: layers hidden heads ffn bottleneck max_len vocab_size : u32 each,
//!         init_range:f64, domain_count:u32, domain names
//! vocab:  token_count:u32, tokens in id order
//! table:  tensor_count:u32, then per tensor
//!         name, rank:u32, dims:u32 × rank, payload:f64 × product(dims)
//! ```
//!
//! Strings are `len:u32` followed by UTF-8 bytes. Tensors are stored as
//! f64 whatever the in-memory scalar type is.

use std::fs;
use std::path::Path;

use crate::numkit::{NamedTensors, Tensor};
use crate::panel::params::expected_shapes;
use crate::panel::{PanelConfig, PanelError, PanelParameters, Vocab};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"POE1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub panel: PanelParameters<T>,
    pub vocab: Vocab,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("checkpoint field fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PanelError> {
        let end = self.pos.checked_add(n).ok_or(PanelError::Truncated)?;
        if end > self.buf.len() {
            return Err(PanelError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize, PanelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64, PanelError> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, PanelError> {
        let n = self.u32()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| PanelError::Corrupt("invalid utf-8 string".into()))
    }
}

pub fn checkpoint_to_bytes<T: Scalar>(panel: &PanelParameters<T>, vocab: &Vocab) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    let c = &panel.config;
    for v in [
        c.layers,
        c.hidden,
        c.heads,
        c.ffn,
        c.bottleneck,
        c.max_len,
        c.vocab_size,
    ] {
        w.u32(v);
    }
    w.f64(c.init_range);
    w.u32(c.domains.len());
    for d in &c.domains {
        w.str(d);
    }
    w.u32(vocab.len());
    for t in vocab.tokens() {
        w.str(t);
    }
    w.u32(panel.tensors.len());
    for (name, t) in &panel.tensors {
        w.str(name);
        w.u32(t.shape().len());
        for &d in t.shape() {
            w.u32(d);
        }
        for &v in t.data() {
            w.f64(v.as_f64());
        }
    }
    w.0
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, PanelError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(PanelError::BadMagic);
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(PanelError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let mut fields = [0usize; 7];
    for f in &mut fields {
        *f = r.u32()?;
    }
    let init_range = r.f64()?;
    let n_domains = r.u32()?;
    let domains = (0..n_domains)
        .map(|_| r.str())
        .collect::<Result<Vec<_>, _>>()?;
    let [layers, hidden, heads, ffn, bottleneck, max_len, vocab_size] = fields;
    let config = PanelConfig {
        layers,
        hidden,
        heads,
        ffn,
        bottleneck,
        max_len,
        vocab_size,
        init_range,
        domains,
    };
    config.validate()?;

    let n_tokens = r.u32()?;
    let tokens = (0..n_tokens)
        .map(|_| r.str())
        .collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocab::from_tokens(tokens)?;
    if vocab.len() != config.vocab_size {
        return Err(PanelError::ShapeTable(format!(
            "vocab has {} tokens, config says {}",
            vocab.len(),
            config.vocab_size
        )));
    }

    let expected = expected_shapes(&config);
    let count = r.u32()?;
    if count != expected.len() {
        return Err(PanelError::ShapeTable(format!(
            "table has {count} tensors, config implies {}",
            expected.len()
        )));
    }
    let mut tensors = NamedTensors::new();
    for _ in 0..count {
        let name = r.str()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        match expected.get(&name) {
            Some(s) if *s == shape => {}
            Some(s) => {
                return Err(PanelError::ShapeTable(format!(
                    "{name}: header {shape:?}, config implies {s:?}"
                )))
            }
            None => return Err(PanelError::ShapeTable(format!("unexpected tensor {name}"))),
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(8).ok_or(PanelError::Truncated)?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| PanelError::ShapeTable(e.to_string()))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(PanelError::ShapeTable(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(PanelError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let panel = PanelParameters { config, tensors };
    panel.validate()?;
    Ok(Checkpoint { panel, vocab })
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    panel: &PanelParameters<T>,
    vocab: &Vocab,
) -> Result<(), PanelError> {
    if panel.config.vocab_size != vocab.len() {
        return Err(PanelError::ShapeTable(
            "vocab size differs from config".into(),
        ));
    }
    fs::write(path, checkpoint_to_bytes(panel, vocab))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, PanelError> {
    let bytes = fs::read(path)?;
    checkpoint_from_bytes(&bytes)
}
