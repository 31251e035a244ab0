use super::corpus::QARecord;
use super::vocab::{Vocabulary, BOS, EOS, SEP};
use crate::error::{Error, Result};
use crate::model::Sequence;

/// `<bos> prompt <sep>`
pub fn encode_prompt(vocab: &Vocabulary, prompt: &str) -> Result<Vec<usize>> {
    let mut ids = vec![BOS];
    ids.extend(vocab.tokenize(prompt)?);
    ids.push(SEP);
    Ok(ids)
}

/// `answer <eos>`
pub fn encode_answer(vocab: &Vocabulary, answer: &str) -> Result<Vec<usize>> {
    let mut ids = vocab.tokenize(answer)?;
    ids.push(EOS);
    Ok(ids)
}

/// Prompt followed by `answer`, with the answer as the target span.
pub fn qa_sequence(vocab: &Vocabulary, prompt: &str, answer: &str) -> Result<Sequence> {
    Sequence::from_parts(&encode_prompt(vocab, prompt)?, &encode_answer(vocab, answer)?)
}

pub fn record_sequence(vocab: &Vocabulary, record: &QARecord) -> Result<Sequence> {
    qa_sequence(vocab, &record.prompt, &record.answer).map_err(|e| Error::Data {
        record: record.id,
        message: e.to_string(),
    })
}

/// Forget prompt paired with its refusal target.
pub fn refusal_sequence(vocab: &Vocabulary, record: &QARecord) -> Result<Sequence> {
    let target = record
        .refusal_target
        .as_deref()
        .ok_or_else(|| Error::contract(format!("record {} has no refusal target", record.id)))?;
    qa_sequence(vocab, &record.prompt, target)
}

pub fn record_sequences(vocab: &Vocabulary, records: &[QARecord]) -> Result<Vec<Sequence>> {
    records.iter().map(|r| record_sequence(vocab, r)).collect()
}
