//! BPSK over AWGN: `y = √E·s + w`, `w_i ~ N(0, N0/2)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Symbol energy `E` and one-sided noise density `N0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams<T> {
    energy: T,
    n0: T,
}

impl<T: Scalar> ChannelParams<T> {
    pub fn new(energy: T, n0: T) -> Result<Self> {
        if !(energy > T::zero() && energy.is_finite()) {
            return invalid(format!("signal energy must be positive and finite, got {energy}"));
        }
        if !(n0 > T::zero() && n0.is_finite()) {
            return invalid(format!("noise density must be positive and finite, got {n0}"));
        }
        Ok(Self { energy, n0 })
    }

    pub fn energy(&self) -> T {
        self.energy
    }

    pub fn n0(&self) -> T {
        self.n0
    }

    pub fn amplitude(&self) -> T {
        self.energy.sqrt()
    }

    /// Per-dimension noise variance `σ² = N0/2`.
    pub fn noise_variance(&self) -> T {
        self.n0 / T::two()
    }

    /// `E/N0` in dB.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.energy / self.n0).to_f64().unwrap_or(f64::NAN).log10()
    }
}

/// Fixes `E = 1` and derives `N0` from a rate-adjusted `Eb/N0`:
/// `Eb = E·N/K`, `N0 = Eb / 10^(Eb/N0 / 10)`.
pub fn ebn0_to_params<T: Scalar>(ebn0_db: f64, len: usize, k: usize) -> Result<ChannelParams<T>> {
    if k == 0 || len == 0 {
        return invalid("code length and dimension must be positive");
    }
    if !ebn0_db.is_finite() {
        return invalid(format!("Eb/N0 must be finite, got {ebn0_db}"));
    }
    let eb = len as f64 / k as f64;
    let n0 = eb / 10f64.powf(ebn0_db / 10.0);
    ChannelParams::new(T::one(), T::from_f64_lossy(n0))
}

/// `s_i = 1 − 2x_i`.
pub fn bpsk_map(x: &[u8]) -> Vec<i8> {
    x.iter().map(|&b| 1 - 2 * (b & 1) as i8).collect()
}

/// Adds Gaussian noise to the scaled BPSK symbols.
pub fn transmit<T: Scalar, R: Rng + ?Sized>(
    s: &[i8],
    params: &ChannelParams<T>,
    rng: &mut R,
) -> Vec<T> {
    let amp = params.amplitude();
    let sigma = params.noise_variance().sqrt();
    s.iter()
        .map(|&si| {
            let z: f64 = rng.sample(StandardNormal);
            amp * T::from_f64_lossy(si as f64) + sigma * T::from_f64_lossy(z)
        })
        .collect()
}

/// Random source for one Monte-Carlo trial.
///
/// The master seed keys a ChaCha8 generator and `(point, trial)` selects its
/// stream, so every trial is independent of how trials are scheduled.
pub fn trial_rng(master_seed: u64, point: u32, trial: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng
}
