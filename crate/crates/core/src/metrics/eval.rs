use serde::{Deserialize, Serialize};

use super::text::{cosine_accuracy, keyword_accuracy, rouge_l_recall};
use crate::data::{encode_answer, encode_prompt, QARecord, Split, Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::model::{generate, token_log_probs, Model};

/// Per-token log-probability floor used by the truth ratio.
pub const LOG_PROB_FLOOR: f64 = -30.0;

fn data_err(record: &QARecord) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Data { .. } => e,
        other => Error::Data {
            record: record.id,
            message: other.to_string(),
        },
    }
}

/// Per-token log-probabilities of `answer <eos>` after the encoded prompt.
fn answer_log_probs(model: &Model, vocab: &Vocabulary, prompt: &str, answer: &str) -> Result<Vec<f64>> {
    token_log_probs(model, &encode_prompt(vocab, prompt)?, &encode_answer(vocab, answer)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthRatio {
    pub value: f64,
    /// Some token log-probability hit [`LOG_PROB_FLOOR`].
    pub clamped: bool,
}

/// Mean length-normalized probability of the false answers divided by that
/// of the paraphrased answer. Length normalization is the geometric mean of
/// per-token probabilities, with each log-probability floored at -30.
pub fn truth_ratio(model: &Model, vocab: &Vocabulary, record: &QARecord) -> Result<TruthRatio> {
    if record.false_answers.is_empty() {
        return Err(Error::Data {
            record: record.id,
            message: "truth ratio needs at least one false answer".into(),
        });
    }
    let mut clamped = false;
    let mut norm_prob = |answer: &str| -> Result<f64> {
        let lps = answer_log_probs(model, vocab, &record.prompt, answer)?;
        let sum: f64 = lps
            .iter()
            .map(|&lp| {
                if lp < LOG_PROB_FLOOR {
                    clamped = true;
                    LOG_PROB_FLOOR
                } else {
                    lp
                }
            })
            .sum();
        Ok((sum / lps.len() as f64).exp())
    };
    let truth = norm_prob(&record.paraphrased_answer).map_err(data_err(record))?;
    let mut false_sum = 0.0;
    for f in &record.false_answers {
        false_sum += norm_prob(f).map_err(data_err(record))?;
    }
    Ok(TruthRatio {
        value: false_sum / record.false_answers.len() as f64 / truth,
        clamped,
    })
}

/// `exp(−mean CE)` at the first position of each keyword in the gold
/// answer, teacher-forced.
pub fn keyword_confidence(model: &Model, vocab: &Vocabulary, record: &QARecord) -> Result<f64> {
    let answer = vocab.tokenize(&record.answer).map_err(data_err(record))?;
    let lps = answer_log_probs(model, vocab, &record.prompt, &record.answer).map_err(data_err(record))?;
    if record.keywords.is_empty() {
        return Err(Error::Data {
            record: record.id,
            message: "record has no keywords".into(),
        });
    }
    let mut ce = 0.0;
    for k in &record.keywords {
        let id = vocab.tokenize(k).map_err(data_err(record))?;
        let pos = match id[..] {
            [id] => answer.iter().position(|&t| t == id),
            _ => None,
        }
        .ok_or_else(|| Error::Data {
            record: record.id,
            message: format!("keyword `{k}` is not a token of the answer"),
        })?;
        ce -= lps[pos];
    }
    Ok((-ce / record.keywords.len() as f64).exp())
}

/// Greedy answer to the record's prompt, stopping at end-of-sequence or the
/// context limit.
pub fn predict(model: &Model, vocab: &Vocabulary, prompt: &str) -> Result<String> {
    let ids = encode_prompt(vocab, prompt)?;
    let room = model.config().context_len.saturating_sub(ids.len());
    Ok(vocab.detokenize(&generate(model, &ids, room, Some(EOS))?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub record: usize,
    pub prediction: String,
    pub truth_ratio: f64,
    pub tr_clamped: bool,
    pub keyword_confidence: f64,
    pub rouge_l_recall: f64,
    pub keyword_accuracy: f64,
    pub cosine_accuracy: f64,
}

pub fn evaluate_record(model: &Model, vocab: &Vocabulary, record: &QARecord) -> Result<RecordMetrics> {
    let prediction = predict(model, vocab, &record.prompt).map_err(data_err(record))?;
    let tr = truth_ratio(model, vocab, record)?;
    Ok(RecordMetrics {
        record: record.id,
        truth_ratio: tr.value,
        tr_clamped: tr.clamped,
        keyword_confidence: keyword_confidence(model, vocab, record)?,
        rouge_l_recall: rouge_l_recall(&prediction, &record.answer),
        keyword_accuracy: keyword_accuracy(&prediction, &record.keywords),
        cosine_accuracy: cosine_accuracy(&prediction, &record.answer, &record.distractor_pool),
        prediction,
    })
}

/// Unweighted means over the records of one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub truth_ratio: f64,
    pub one_minus_truth_ratio: f64,
    pub keyword_confidence: f64,
    pub rouge_l_recall: f64,
    pub keyword_accuracy: f64,
    pub cosine_accuracy: f64,
    pub n_records: usize,
    /// Records whose truth ratio used the log-probability floor.
    pub tr_clamped: usize,
}

impl MetricsReport {
    /// Aggregates record metrics in ascending record order.
    pub fn from_records(split: Split, rows: &[RecordMetrics]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract(format!("no records to report for the {split} split")));
        }
        let mut sorted: Vec<&RecordMetrics> = rows.iter().collect();
        sorted.sort_by_key(|r| r.record);
        let n = sorted.len() as f64;
        let mean = |f: fn(&RecordMetrics) -> f64| sorted.iter().map(|r| f(r)).sum::<f64>() / n;
        let tr = mean(|r| r.truth_ratio);
        Ok(Self {
            split,
            truth_ratio: tr,
            one_minus_truth_ratio: 1.0 - tr,
            keyword_confidence: mean(|r| r.keyword_confidence),
            rouge_l_recall: mean(|r| r.rouge_l_recall),
            keyword_accuracy: mean(|r| r.keyword_accuracy),
            cosine_accuracy: mean(|r| r.cosine_accuracy),
            n_records: sorted.len(),
            tr_clamped: sorted.iter().filter(|r| r.tr_clamped).count(),
        })
    }
}

/// Generates one greedy prediction per record and averages all five metrics.
pub fn evaluate_split(model: &Model, vocab: &Vocabulary, split: Split, records: &[QARecord]) -> Result<MetricsReport> {
    let rows = records
        .iter()
        .map(|r| evaluate_record(model, vocab, r))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_records(split, &rows)
}
