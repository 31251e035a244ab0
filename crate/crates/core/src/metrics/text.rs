use std::collections::HashMap;

/// Length of the longest common subsequence of two token lists.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// `LCS(prediction, reference) / |reference|` over whitespace tokens; 0 for
/// an empty reference.
pub fn rouge_l_recall(prediction: &str, reference: &str) -> f64 {
    let r = words(reference);
    if r.is_empty() {
        return 0.0;
    }
    lcs_len(&words(prediction), &r) as f64 / r.len() as f64
}

/// Fraction of keywords present as whole tokens in the prediction, ignoring case.
pub fn keyword_accuracy(prediction: &str, keywords: &[String]) -> f64 {
    if keywords.is_empty() {
        return 0.0;
    }
    let tokens: Vec<String> = words(prediction).iter().map(|w| w.to_lowercase()).collect();
    let hits = keywords
        .iter()
        .filter(|k| tokens.contains(&k.to_lowercase()))
        .count();
    hits as f64 / keywords.len() as f64
}

fn counts(s: &str) -> HashMap<&str, f64> {
    let mut m = HashMap::new();
    for w in words(s) {
        *m.entry(w).or_insert(0.0) += 1.0;
    }
    m
}

/// Cosine similarity of token-count vectors; 0 when either side is empty.
pub fn count_cosine(a: &str, b: &str) -> f64 {
    let (ca, cb) = (counts(a), counts(b));
    let dot: f64 = ca.iter().map(|(w, x)| x * cb.get(w).copied().unwrap_or(0.0)).sum();
    let na: f64 = ca.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = cb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// 1 when `answer` is the most similar of `[answer, distractors...]` to the
/// prediction, ties going to the earlier candidate. An empty prediction scores 0.
pub fn cosine_accuracy(prediction: &str, answer: &str, distractors: &[String]) -> f64 {
    if words(prediction).is_empty() {
        return 0.0;
    }
    let truth = count_cosine(prediction, answer);
    let beaten = distractors.iter().any(|d| count_cosine(prediction, d) > truth);
    if beaten {
        0.0
    } else {
        1.0
    }
}
