//! Audio buffers, canonical WAV I/O and the augmentation chain.

mod augment;
mod wav;

pub use augment::{
    augment_chain, augment_chain_stream, echo, gain, mix_noise_at_snr, mix_noise_gain, replay,
    resample_linear, AppliedLog, AugmentConfig, NoiseApplied, Range,
};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use crate::error::{Error, Result};

/// Mono signal with real-valued samples nominally in [-1, 1]. Values are not
/// clipped in memory; saturation happens only when writing WAV.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean square of the samples; 0 for an empty buffer.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}
