//! Weight initializers.
//!
//! All kernels use the `[out][in][ky][kx]` layout of the convolution code.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Default half-width of the uniform perturbation added to delta taps.
pub const DEFAULT_NOISE_SCALE: f64 = 1e-3;

/// Standard deviation of the zero-mean normal used by `small_random`.
pub const SMALL_RANDOM_STD: f64 = 1e-2;

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd, got {k}"
        )));
    }
    Ok(())
}

fn perturbation<R: Rng + ?Sized>(noise_scale: f64, rng: &mut R) -> f64 {
    if noise_scale > 0.0 {
        rng.random_range(-noise_scale..=noise_scale)
    } else {
        0.0
    }
}

/// Stack of approximate delta kernels: output channel `o` copies input
/// channel `o % in_ch` through its centre tap. Every tap also gets an
/// independent uniform perturbation in `[-noise_scale, noise_scale]`.
pub fn delta_kernel<R: Rng + ?Sized>(
    in_ch: usize,
    out_ch: usize,
    k: usize,
    noise_scale: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_kernel(k)?;
    if in_ch == 0 || out_ch == 0 || !out_ch.is_multiple_of(in_ch) {
        return Err(Error::InitIncompatibility(format!(
            "delta init needs out_channels ({out_ch}) to be a positive multiple of in_channels ({in_ch})"
        )));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise scale must be >= 0, got {noise_scale}"
        )));
    }
    let kk = k * k;
    let centre = kk / 2;
    let mut w = Vec::with_capacity(out_ch * in_ch * kk);
    for o in 0..out_ch {
        for c in 0..in_ch {
            for t in 0..kk {
                let base = if c == o % in_ch && t == centre {
                    1.0
                } else {
                    0.0
                };
                w.push(base + perturbation(noise_scale, rng));
            }
        }
    }
    Ok(w)
}

/// Single-output kernel whose centre taps average the input channels.
pub fn average_kernel<R: Rng + ?Sized>(
    in_ch: usize,
    k: usize,
    noise_scale: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_kernel(k)?;
    if in_ch == 0 {
        return Err(Error::InvalidArgument(
            "average kernel needs at least one input channel".into(),
        ));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise scale must be >= 0, got {noise_scale}"
        )));
    }
    let kk = k * k;
    let centre = kk / 2;
    let share = 1.0 / in_ch as f64;
    let mut w = Vec::with_capacity(in_ch * kk);
    for _ in 0..in_ch {
        for t in 0..kk {
            let base = if t == centre { share } else { 0.0 };
            w.push(base + perturbation(noise_scale, rng));
        }
    }
    Ok(w)
}

pub fn small_random<R: Rng + ?Sized>(len: usize, std: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("finite positive std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pure_delta_three_by_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = delta_kernel(1, 1, 3, 0.0, &mut rng).unwrap();
        assert_eq!(w, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stacked_delta_copies_mod_in_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = delta_kernel(2, 4, 1, 0.0, &mut rng).unwrap();
        // 1x1 kernels: rows are output channels, columns input channels.
        assert_eq!(w, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn delta_rejects_non_multiple() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            delta_kernel(3, 4, 3, 0.0, &mut rng),
            Err(Error::InitIncompatibility(_))
        ));
        assert!(delta_kernel(1, 1, 2, 0.0, &mut rng).is_err());
    }

    #[test]
    fn delta_noise_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut max_off: f64 = 0.0;
        let mut centre_lo: f64 = f64::INFINITY;
        let mut centre_hi: f64 = f64::NEG_INFINITY;
        let mut draws = 0;
        while draws < 10_000 {
            let w = delta_kernel(1, 1, 3, 1e-3, &mut rng).unwrap();
            for (t, v) in w.iter().enumerate() {
                if t == 4 {
                    centre_lo = centre_lo.min(*v);
                    centre_hi = centre_hi.max(*v);
                } else {
                    max_off = max_off.max(v.abs());
                }
            }
            draws += w.len();
        }
        assert!(max_off <= 6e-3 && max_off > 0.0);
        assert!(centre_lo >= 1.0 - 6e-3 && centre_hi <= 1.0 + 6e-3);
    }

    #[test]
    fn average_kernel_shares() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = average_kernel(4, 3, 0.0, &mut rng).unwrap();
        for c in 0..4 {
            assert_eq!(w[c * 9 + 4], 0.25);
        }
        assert_eq!(w.iter().sum::<f64>(), 1.0);
        assert_eq!(
            average_kernel(1, 3, 0.0, &mut rng).unwrap(),
            delta_kernel(1, 1, 3, 0.0, &mut rng).unwrap()
        );
        assert!(average_kernel(0, 3, 0.0, &mut rng).is_err());
    }
}
