use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{QARecord, Split};
use super::lexicon::REFUSALS;

/// The six neutral refusal answers used as preference-optimization targets.
pub fn refusal_pool() -> Vec<String> {
    REFUSALS.iter().map(|s| s.to_string()).collect()
}

/// Gives every forget record a refusal target drawn uniformly from the pool.
/// Records from other splits are returned unchanged.
pub fn attach_refusals(records: &[QARecord], seed: u64) -> Vec<QARecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.split == Split::Forget {
                r.refusal_target = Some(REFUSALS[rng.gen_range(0..REFUSALS.len())].to_string());
            }
            r
        })
        .collect()
}
