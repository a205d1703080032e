//! Reconstruction metrics and noise corruption.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use cnsprox::tensor::CoefficientMaps;
use cnsprox::{Error, Result};

/// Reported in place of an infinite PSNR when the inputs are identical.
pub const PSNR_IDENTICAL_DB: f64 = 999.0;

/// `10 log10(peak^2 / MSE)` in dB.
pub fn psnr(reference: &[f64], test: &[f64], peak: f64) -> Result<f64> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::Shape(format!(
            "PSNR of {} samples against {}",
            reference.len(),
            test.len()
        )));
    }
    let mse = reference.iter().zip(test).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `100 * (number of nonzero coefficients) / n_pixels`; can exceed 100
/// with more than one map per pixel.
pub fn sparsity_measure(maps: &[f64], n_pixels: usize) -> Result<f64> {
    if n_pixels == 0 {
        return Err(Error::InvalidParameter("sparsity needs n_pixels > 0".into()));
    }
    Ok(100.0 * maps.iter().filter(|v| **v != 0.0).count() as f64 / n_pixels as f64)
}

/// Sparsity of the maps of signal `k`.
pub fn map_sparsity(maps: &CoefficientMaps, k: usize) -> Result<f64> {
    sparsity_measure(maps.image(k), maps.frame().len())
}

/// `s + sigma * n` with seeded standard normal `n`.
pub fn awgn_corrupt(s: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("noise level must be >= 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(s.iter()
        .map(|v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            v + sigma * n
        })
        .collect())
}
