//! Synthetic question/answer corpus about fictitious authors.

mod corpus;
mod encode;
mod export;
mod lexicon;
mod refusal;
mod vocab;

pub use corpus::{entity_name, generate_corpus, vocabulary, Corpus, CorpusConfig, QARecord, Split, MAX_ENTITIES};
pub use encode::{encode_answer, encode_prompt, qa_sequence, record_sequence, record_sequences, refusal_sequence};
pub use export::{corpus_tsv, TSV_HEADER};
pub use refusal::{attach_refusals, refusal_pool};
pub use vocab::{Vocabulary, BOS, EOS, PAD, SEP};
