// SPDX-License-Identifier: MIT OR Apache-2.0

//! `LPC1` tokenized corpora.
//!
//! ```text
//! "LPC1"          4 bytes
//! vocab_size      u32 LE
//! n_tokens        u32 LE
//! tokens          n_tokens × u32 LE
//! n_sentences     u32 LE
//! starts          n_sentences × u32 LE, strictly ascending, first = 0
//! ```
//!
//! An empty start table means the whole payload is one sentence.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

pub const CORPUS_MAGIC: &[u8; 4] = b"LPC1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedCorpus {
    vocab_size: u32,
    tokens: Vec<u32>,
    sentence_starts: Vec<u32>,
}

impl TokenizedCorpus {
    pub fn new(vocab_size: u32, tokens: Vec<u32>, sentence_starts: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Degenerate("corpus has no tokens".into()));
        }
        if let Some(pos) = tokens.iter().position(|&t| t >= vocab_size) {
            return Err(Error::Vocabulary(format!(
                "token {} at offset {pos} outside vocabulary of {vocab_size}",
                tokens[pos]
            )));
        }
        if sentence_starts.first().is_some_and(|&s| s != 0) {
            return Err(Error::Format("first sentence must start at offset 0".into()));
        }
        if sentence_starts.windows(2).any(|w| w[0] >= w[1])
            || sentence_starts.last().is_some_and(|&s| s as usize >= tokens.len())
        {
            return Err(Error::Format(
                "sentence starts must be strictly ascending and inside the payload".into(),
            ));
        }
        Ok(Self {
            vocab_size,
            tokens,
            sentence_starts,
        })
    }

    /// One sentence per nonempty line of `text`, byte-tokenized.
    pub fn from_text(text: &str) -> Result<Self> {
        let tokenizer = ByteTokenizer;
        let mut tokens = Vec::new();
        let mut starts = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            starts.push(tokens.len() as u32);
            tokens.extend(tokenizer.encode(line));
        }
        Self::new(ByteTokenizer::VOCAB_SIZE, tokens, starts)
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn sentence_starts(&self) -> &[u32] {
        &self.sentence_starts
    }

    pub fn n_sentences(&self) -> usize {
        self.sentence_starts.len().max(1)
    }

    pub fn sentences(&self) -> impl Iterator<Item = &[u32]> + '_ {
        let starts: Vec<usize> = if self.sentence_starts.is_empty() {
            vec![0]
        } else {
            self.sentence_starts.iter().map(|&s| s as usize).collect()
        };
        let n = self.tokens.len();
        (0..starts.len()).map(move |i| {
            let end = starts.get(i + 1).copied().unwrap_or(n);
            &self.tokens[starts[i]..end]
        })
    }
}

pub fn write_corpus(corpus: &TokenizedCorpus) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(16 + 4 * (corpus.tokens.len() + corpus.sentence_starts.len()));
    out.extend_from_slice(CORPUS_MAGIC);
    out.extend_from_slice(&corpus.vocab_size.to_le_bytes());
    out.extend_from_slice(&(corpus.tokens.len() as u32).to_le_bytes());
    for t in &corpus.tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out.extend_from_slice(&(corpus.sentence_starts.len() as u32).to_le_bytes());
    for s in &corpus.sentence_starts {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn save_corpus(corpus: &TokenizedCorpus, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_corpus(corpus))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Truncated(format!("corpus ends inside {what}")))?;
        self.pos = end;
        Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
    }

    fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        if self.bytes.len().saturating_sub(self.pos) < 4 * n {
            return Err(Error::Truncated(format!("corpus ends inside {what}")));
        }
        (0..n).map(|_| self.u32(what)).collect()
    }
}

pub fn read_corpus(bytes: &[u8]) -> Result<TokenizedCorpus> {
    if bytes.len() < 4 || &bytes[..4] != CORPUS_MAGIC {
        return Err(Error::Format("missing LPC1 magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let vocab_size = r.u32("vocab size")?;
    let n_tokens = r.u32("token count")? as usize;
    let tokens = r.u32s(n_tokens, "token payload")?;
    let n_sentences = r.u32("sentence count")? as usize;
    let starts = r.u32s(n_sentences, "sentence table")?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after sentence table",
            bytes.len() - r.pos
        )));
    }
    TokenizedCorpus::new(vocab_size, tokens, starts)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<TokenizedCorpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_corpus(&bytes)
}

/// Maps each UTF-8 byte to its own token id, so the engine runs with no
/// external vocabulary.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const VOCAB_SIZE: u32 = 256;

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    /// Ids at or above 256 are dropped; invalid UTF-8 decodes lossily.
    pub fn decode(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids.iter().filter_map(|&i| u8::try_from(i).ok()).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}
