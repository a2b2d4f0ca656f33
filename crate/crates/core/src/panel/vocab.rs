use std::collections::HashMap;

use crate::forge::DomainDataset;
use crate::panel::PanelError;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const START: &str = "<s>";
pub const END: &str = "</s>";
pub const MASK: &str = "<mask>";
pub const TURN: &str = "<turn>";

/// Special tokens, in id order. They always occupy ids `0..SPECIALS.len()`.
pub const SPECIALS: [&str; 6] = [PAD, UNK, START, END, MASK, TURN];

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, PanelError> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(PanelError::InvalidVocab(
                "special tokens missing or out of order".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(PanelError::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Counts lowercased tokens and keeps those seen at least `min_count`
    /// times, ordered by descending frequency then lexicographically.
    pub fn from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        min_count: usize,
    ) -> Result<Self, PanelError> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen = 0usize;
        for text in texts {
            for tok in tokenize(text) {
                seen += 1;
                *counts.entry(tok).or_default() += 1;
            }
        }
        if seen == 0 {
            return Err(PanelError::EmptyCorpus);
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !SPECIALS.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or of `<unk>` when absent.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(1)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn unk_id(&self) -> usize {
        1
    }

    pub fn start_id(&self) -> usize {
        2
    }

    pub fn end_id(&self) -> usize {
        3
    }

    pub fn mask_id(&self) -> usize {
        4
    }

    pub fn turn_id(&self) -> usize {
        5
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }
}

/// Builds the vocabulary over every context utterance and response in `corpora`.
pub fn build_vocab(corpora: &[DomainDataset], min_count: usize) -> Result<Vocab, PanelError> {
    if corpora.is_empty() {
        return Err(PanelError::EmptyCorpus);
    }
    let texts = corpora.iter().flat_map(|d| d.all_pairs()).flat_map(|p| {
        p.context
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(p.response.as_str()))
    });
    Vocab::from_texts(texts, min_count)
}

/// Model input: padded token ids plus the count of non-pad positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub attention_len: usize,
}

impl TokenSequence {
    /// Ids of the non-pad prefix.
    pub fn active(&self) -> &[usize] {
        &self.ids[..self.attention_len]
    }
}

/// Smallest `max_len` that fits `<s> c </s> r </s>` with one token each.
pub const MIN_MAX_LEN: usize = 5;

/// Lays out `<s> u1 <turn> u2 ... </s> response </s>` and pads to `max_len`.
///
/// Over-long inputs lose their oldest context tokens first (keeping at
/// least one), then the response is cut from the right.
pub fn encode_pair(
    vocab: &Vocab,
    context: &[String],
    response: &str,
    max_len: usize,
) -> Result<TokenSequence, PanelError> {
    if max_len < MIN_MAX_LEN {
        return Err(PanelError::MaxLenTooSmall(max_len));
    }
    let mut ctx: Vec<usize> = Vec::new();
    for utt in context {
        let toks = tokenize(utt);
        if toks.is_empty() {
            continue;
        }
        if !ctx.is_empty() {
            ctx.push(vocab.turn_id());
        }
        ctx.extend(toks.iter().map(|t| vocab.id_or_unk(t)));
    }
    let mut resp: Vec<usize> = tokenize(response)
        .iter()
        .map(|t| vocab.id_or_unk(t))
        .collect();
    if ctx.is_empty() || resp.is_empty() {
        return Err(PanelError::EmptyInput);
    }

    let budget = max_len - 3;
    if ctx.len() + resp.len() > budget {
        let keep = budget.saturating_sub(resp.len()).max(1);
        if ctx.len() > keep {
            ctx.drain(..ctx.len() - keep);
            while ctx.len() > 1 && ctx[0] == vocab.turn_id() {
                ctx.remove(0);
            }
        }
        resp.truncate(budget - ctx.len());
    }

    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.start_id());
    ids.extend_from_slice(&ctx);
    ids.push(vocab.end_id());
    ids.extend_from_slice(&resp);
    ids.push(vocab.end_id());
    let attention_len = ids.len();
    ids.resize(max_len, vocab.pad_id());
    Ok(TokenSequence { ids, attention_len })
}

/// Maps ids back to tokens, dropping padding.
pub fn decode(vocab: &Vocab, seq: &TokenSequence) -> Vec<String> {
    seq.active()
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK).to_string())
        .collect()
}
