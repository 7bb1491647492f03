// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary weight and corpus formats, random fixtures and the byte tokenizer.

mod corpus;
mod weights_file;

pub use corpus::{
    load_corpus, read_corpus, save_corpus, write_corpus, ByteTokenizer, TokenizedCorpus,
    CORPUS_MAGIC,
};
pub use weights_file::{
    generate_random_model, load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC,
};
