use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{self, Template, FIRST_NAMES, LAST_NAMES, TEMPLATES, WORLD_FACTS};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Largest entity count with unique first/last name pairs.
pub const MAX_ENTITIES: usize = FIRST_NAMES.len() * LAST_NAMES.len();
const DISTRACTORS: usize = 19;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Forget,
    Retain,
    /// Shared facts not tied to any entity, used to measure collateral damage.
    World,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Forget => "forget",
            Split::Retain => "retain",
            Split::World => "world",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    /// Position in the corpus.
    pub id: usize,
    pub entity_id: usize,
    /// Template key, e.g. `birthplace`.
    pub fact: String,
    pub split: Split,
    pub prompt: String,
    pub answer: String,
    pub paraphrased_answer: String,
    pub keywords: Vec<String>,
    /// The paraphrase with every keyword slot changed, so that it competes
    /// with `paraphrased_answer` on the facts alone.
    pub false_answers: Vec<String>,
    pub distractor_pool: Vec<String>,
    pub refusal_target: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_entities: usize,
    pub facts_per_entity: usize,
    pub forget_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Shared capital-city facts added as the `world` split.
    #[serde(default = "default_world_facts")]
    pub n_world_facts: usize,
    #[serde(default = "default_false_answers")]
    pub n_false_answers: usize,
}

fn default_world_facts() -> usize {
    20
}

fn default_false_answers() -> usize {
    3
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_entities: 100,
            facts_per_entity: 4,
            forget_fraction: 0.1,
            seed: 0,
            n_world_facts: default_world_facts(),
            n_false_answers: default_false_answers(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities < 2 || self.n_entities > MAX_ENTITIES {
            return Err(Error::config(format!(
                "corpus.n_entities must be in 2..={MAX_ENTITIES}, got {}",
                self.n_entities
            )));
        }
        if self.facts_per_entity == 0 || self.facts_per_entity > TEMPLATES.len() {
            return Err(Error::config(format!(
                "corpus.facts_per_entity must be in 1..={}, got {}",
                TEMPLATES.len(),
                self.facts_per_entity
            )));
        }
        if !(self.forget_fraction > 0.0 && self.forget_fraction < 1.0) {
            return Err(Error::config(format!(
                "corpus.forget_fraction must lie in (0, 1), got {}",
                self.forget_fraction
            )));
        }
        if self.n_forget_entities() >= self.n_entities {
            return Err(Error::config("corpus.forget_fraction leaves no retain entities"));
        }
        if self.n_world_facts > WORLD_FACTS.len() {
            return Err(Error::config(format!(
                "corpus.n_world_facts must be at most {}",
                WORLD_FACTS.len()
            )));
        }
        if !(3..=DISTRACTORS).contains(&self.n_false_answers) {
            return Err(Error::config(format!(
                "corpus.n_false_answers must be in 3..={DISTRACTORS}"
            )));
        }
        Ok(())
    }

    /// `round(forget_fraction * n_entities)`, at least one.
    pub fn n_forget_entities(&self) -> usize {
        ((self.forget_fraction * self.n_entities as f64).round() as usize).max(1)
    }
}

/// A generated corpus together with the vocabulary that covers it.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub vocab: Vocabulary,
    pub records: Vec<QARecord>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<QARecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }

    /// Entity ids in the forget split, ascending.
    pub fn forget_entities(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .records
            .iter()
            .filter(|r| r.split == Split::Forget)
            .map(|r| r.entity_id)
            .collect();
        ids.dedup();
        ids
    }
}

/// The full generator vocabulary. It does not depend on the corpus config.
pub fn vocabulary() -> Vocabulary {
    Vocabulary::from_words(lexicon::all_words())
}

/// Two-word name of entity `i`; distinct for every `i < MAX_ENTITIES`.
pub fn entity_name(i: usize) -> String {
    let n = FIRST_NAMES.len();
    let first = i % n;
    let last = (i / n + i) % LAST_NAMES.len();
    format!("{} {}", FIRST_NAMES[first], LAST_NAMES[last])
}

/// Draws slot values; slots sharing a pool get distinct values.
fn draw_values(t: &Template, rng: &mut ChaCha8Rng, avoid: &HashSet<&str>) -> Vec<&'static str> {
    loop {
        let values: Vec<&'static str> = t.slots.iter().map(|pool| *pool.choose(rng).expect("pool is nonempty")).collect();
        let distinct = values.iter().collect::<HashSet<_>>().len() == values.len();
        if distinct && values.iter().all(|v| !avoid.contains(v)) {
            return values;
        }
    }
}

/// Nineteen distinct alternative slot assignments, none reusing a true value.
fn alternatives(t: &Template, truth: &[&str], rng: &mut ChaCha8Rng) -> Vec<Vec<&'static str>> {
    let avoid: HashSet<&str> = truth.iter().copied().collect();
    if t.slots.len() == 1 {
        let mut rest: Vec<&'static str> = t.slots[0].iter().copied().filter(|v| !avoid.contains(v)).collect();
        rest.shuffle(rng);
        return rest.into_iter().take(DISTRACTORS).map(|v| vec![v]).collect();
    }
    let mut out: Vec<Vec<&'static str>> = Vec::with_capacity(DISTRACTORS);
    while out.len() < DISTRACTORS {
        let v = draw_values(t, rng, &avoid);
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn entity_record(id: usize, entity: usize, split: Split, t: &Template, n_false: usize, rng: &mut ChaCha8Rng) -> QARecord {
    let name = entity_name(entity);
    let values = draw_values(t, rng, &HashSet::new());
    let alts = alternatives(t, &values, rng);
    let distractor_pool: Vec<String> = alts.iter().map(|a| lexicon::fill(t.answer, &name, a)).collect();
    QARecord {
        id,
        entity_id: entity,
        fact: t.key.to_string(),
        split,
        prompt: lexicon::fill(t.prompt, &name, &[]),
        answer: lexicon::fill(t.answer, &name, &values),
        paraphrased_answer: lexicon::fill(t.paraphrase, &name, &values),
        keywords: values.iter().map(|v| v.to_string()).collect(),
        false_answers: alts[..n_false].iter().map(|a| lexicon::fill(t.paraphrase, &name, a)).collect(),
        distractor_pool,
        refusal_target: None,
    }
}

fn world_record(id: usize, entity: usize, fact: usize, n_false: usize, rng: &mut ChaCha8Rng) -> QARecord {
    let (country, capital) = WORLD_FACTS[fact];
    let mut others: Vec<&str> = WORLD_FACTS.iter().map(|f| f.1).filter(|c| *c != capital).collect();
    others.shuffle(rng);
    let distractor_pool: Vec<String> = others
        .iter()
        .take(DISTRACTORS)
        .map(|c| lexicon::fill(lexicon::WORLD_ANSWER, country, &[c]))
        .collect();
    QARecord {
        id,
        entity_id: entity,
        fact: "capital".to_string(),
        split: Split::World,
        prompt: lexicon::fill(lexicon::WORLD_PROMPT, country, &[]),
        answer: lexicon::fill(lexicon::WORLD_ANSWER, country, &[capital]),
        paraphrased_answer: lexicon::fill(lexicon::WORLD_PARAPHRASE, country, &[capital]),
        keywords: vec![capital.to_string()],
        false_answers: others[..n_false]
            .iter()
            .map(|c| lexicon::fill(lexicon::WORLD_PARAPHRASE, country, &[c]))
            .collect(),
        distractor_pool,
        refusal_target: None,
    }
}

/// Generates the corpus. Entities `0..n_entities` get the first
/// `facts_per_entity` templates; a seeded shuffle picks the forget entities.
/// World facts follow with entity ids starting at `n_entities`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);
    split_rng.set_stream(1);

    let mut entities: Vec<usize> = (0..config.n_entities).collect();
    entities.shuffle(&mut split_rng);
    let forget: HashSet<usize> = entities[..config.n_forget_entities()].iter().copied().collect();

    let mut records = Vec::new();
    for e in 0..config.n_entities {
        let split = if forget.contains(&e) { Split::Forget } else { Split::Retain };
        for t in &TEMPLATES[..config.facts_per_entity] {
            let r = entity_record(records.len(), e, split, t, config.n_false_answers, &mut rng);
            records.push(r);
        }
    }
    for f in 0..config.n_world_facts {
        let r = world_record(records.len(), config.n_entities + f, f, config.n_false_answers, &mut rng);
        records.push(r);
    }
    Ok(Corpus {
        config: config.clone(),
        vocab: vocabulary(),
        records,
    })
}
