use super::corpus::QARecord;

pub const TSV_HEADER: &str =
    "entity_id\tsplit\tprompt\tanswer\tparaphrase\tkeywords\tfalse_answers\tdistractors\trefusal";

/// One tab-separated line per record under [`TSV_HEADER`]; list fields are
/// joined with ` | ` and a missing refusal is an empty field.
pub fn corpus_tsv(records: &[QARecord]) -> String {
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for r in records {
        let fields = [
            r.entity_id.to_string(),
            r.split.to_string(),
            r.prompt.clone(),
            r.answer.clone(),
            r.paraphrased_answer.clone(),
            r.keywords.join(" | "),
            r.false_answers.join(" | "),
            r.distractor_pool.join(" | "),
            r.refusal_target.clone().unwrap_or_default(),
        ];
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}
