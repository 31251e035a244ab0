use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::mask::SelectionMask;
use crate::error::{Error, Result};
use crate::params::ParamSet;

/// Adds independent `N(0, sigma²)` draws to the masked coordinates, in index
/// order. `sigma = 0` leaves the parameters bit-identical.
pub fn inject_noise(params: &mut ParamSet, mask: &SelectionMask, sigma: f64, seed: u64) -> Result<()> {
    params.check_len(mask.len())?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::contract(format!("noise sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::contract(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (offset, chunk) in params.chunks_mut() {
        for (j, v) in chunk.iter_mut().enumerate() {
            if mask.bits[offset + j] {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(())
}

/// Converts a noise variance to the standard deviation used by [`inject_noise`].
pub fn sigma_from_variance(variance: f64) -> f64 {
    variance.sqrt()
}
