use super::{Model, Sequence};
use crate::error::{Error, Result};
use crate::tensor::Graph;

/// Logits for the token following `tokens`.
pub fn next_token_logits(model: &Model, tokens: &[usize]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let w = model.bind(&mut g, false);
    let logits = model.forward(&mut g, &w, tokens, true)?;
    Ok(g.value(logits).to_vec())
}

/// Greedy argmax continuation of `prompt`. Stops after `max_new` tokens, when
/// `stop` is produced (not included in the output), or when the context is full.
pub fn generate(model: &Model, prompt: &[usize], max_new: usize, stop: Option<usize>) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return Err(Error::contract("generation from an empty prompt"));
    }
    if prompt.len() > model.config().context_len {
        return Err(Error::contract(format!(
            "prompt of {} tokens exceeds context length {}",
            prompt.len(),
            model.config().context_len
        )));
    }
    let mut tokens = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && tokens.len() < model.config().context_len {
        let logits = next_token_logits(model, &tokens)?;
        let next = argmax(&logits);
        if Some(next) == stop {
            break;
        }
        out.push(next);
        tokens.push(next);
    }
    Ok(out)
}

/// Lowest index among the maxima.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Log-probability of each answer token given the prompt and preceding answer tokens.
pub fn token_log_probs(model: &Model, prompt: &[usize], answer: &[usize]) -> Result<Vec<f64>> {
    if answer.is_empty() {
        return Err(Error::contract("log-probability of an empty answer"));
    }
    let seq = Sequence::from_parts(prompt, answer)?;
    model.check_tokens(&seq.tokens)?;
    let mut g = Graph::new();
    let w = model.bind(&mut g, false);
    let inputs = &seq.tokens[..seq.tokens.len() - 1];
    let logits = model.forward(&mut g, &w, inputs, false)?;
    let v = model.config().vocab_size;
    let rows = g.value(logits);
    let first = seq.target_start - 1;
    Ok(answer
        .iter()
        .enumerate()
        .map(|(j, &tok)| {
            let row = &rows[(first + j) * v..(first + j + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row[tok] - lse
        })
        .collect())
}

/// `Σ log p(answer_j | prompt, answer_<j)`; never positive.
pub fn sequence_log_prob(model: &Model, prompt: &[usize], answer: &[usize]) -> Result<f64> {
    Ok(token_log_probs(model, prompt, answer)?.iter().sum())
}
