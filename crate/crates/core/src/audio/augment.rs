use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_square, AudioBuffer};
use crate::error::{Error, Result};

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::InvalidArgument(format!(
                "{name}: invalid range [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub echo_delay_ms: Range,
    pub echo_scale: Range,
    pub snr_db: Range,
    pub noise_prob: f64,
    pub gain_db: Range,
    pub gain_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            echo_delay_ms: Range::new(100.0, 500.0),
            echo_scale: Range::new(0.0, 0.2),
            snr_db: Range::new(-4.0, 14.0),
            noise_prob: 0.5,
            gain_db: Range::new(-4.0, 15.0),
            gain_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.echo_delay_ms.check("echo_delay_ms")?;
        self.echo_scale.check("echo_scale")?;
        self.snr_db.check("snr_db")?;
        self.gain_db.check("gain_db")?;
        if self.echo_delay_ms.lo < 0.0 || self.echo_scale.lo < 0.0 {
            return Err(Error::InvalidArgument("echo delay and scale must be >= 0".into()));
        }
        for (name, p) in [("noise_prob", self.noise_prob), ("gain_prob", self.gain_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseApplied {
    /// Index into the noise corpus.
    pub index: usize,
    pub snr_db: f64,
}

/// Every parameter drawn by one [`augment_chain`] call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedLog {
    pub seed: u64,
    pub stream: u64,
    pub echo_delay_ms: f64,
    pub echo_scale: f64,
    pub noise: Option<NoiseApplied>,
    pub gain_db: Option<f64>,
}

/// `y[n] = x[n] + scale * x[n - d]` with `d = round(delay_ms * rate / 1000)`.
pub fn echo(x: &AudioBuffer, delay_ms: f64, scale: f64) -> Result<AudioBuffer> {
    if !(delay_ms >= 0.0 && delay_ms.is_finite()) || !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(
            "echo delay and scale must be finite and >= 0".into(),
        ));
    }
    let d = (delay_ms * f64::from(x.sample_rate) / 1000.0).round() as usize;
    let mut y = x.samples.clone();
    if scale != 0.0 {
        for n in d..y.len() {
            y[n] += scale * x.samples[n - d];
        }
    }
    Ok(AudioBuffer {
        samples: y,
        sample_rate: x.sample_rate,
    })
}

/// Scale applied to `noise` so that `x` and the scaled noise are `snr_db` apart.
/// `noise` must already be tiled to the length of `x`.
pub fn mix_noise_gain(x: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    let px = mean_square(x);
    if px == 0.0 {
        return Err(Error::SilentInput("signal"));
    }
    let pn = mean_square(noise);
    if pn == 0.0 {
        return Err(Error::SilentInput("noise"));
    }
    Ok((px / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Adds `noise` (tiled or truncated to the signal length) at `snr_db`.
pub fn mix_noise_at_snr(x: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<AudioBuffer> {
    if x.sample_rate != noise.sample_rate {
        return Err(Error::RateMismatch(x.sample_rate, noise.sample_rate));
    }
    if noise.is_empty() {
        return Err(Error::SilentInput("noise"));
    }
    let tiled: Vec<f64> = noise.samples.iter().copied().cycle().take(x.len()).collect();
    let g = mix_noise_gain(&x.samples, &tiled, snr_db)?;
    let samples = x.samples.iter().zip(&tiled).map(|(s, n)| s + g * n).collect();
    Ok(AudioBuffer {
        samples,
        sample_rate: x.sample_rate,
    })
}

/// `y = x * 10^(gain_db / 20)`.
pub fn gain(x: &AudioBuffer, gain_db: f64) -> AudioBuffer {
    let factor = 10f64.powf(gain_db / 20.0);
    AudioBuffer {
        samples: x.samples.iter().map(|s| s * factor).collect(),
        sample_rate: x.sample_rate,
    }
}

/// Linear-interpolation resampler. Output length is `round(len * target / src)`;
/// positions past the last input sample hold its value.
pub fn resample_linear(x: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target_rate must be positive".into()));
    }
    if target_rate == x.sample_rate {
        return Ok(x.clone());
    }
    let src = u128::from(x.sample_rate);
    let dst = u128::from(target_rate);
    let out_len = ((x.len() as u128 * dst + src / 2) / src) as usize;
    let step = f64::from(x.sample_rate) / f64::from(target_rate);
    let last = x.len().saturating_sub(1);
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let idx = pos.floor() as usize;
            if idx >= last {
                x.samples[last]
            } else {
                let frac = pos - idx as f64;
                let a = x.samples[idx];
                a + frac * (x.samples[idx + 1] - a)
            }
        })
        .collect();
    Ok(AudioBuffer {
        samples,
        sample_rate: target_rate,
    })
}

/// Echo (always), then noise with `noise_prob`, then gain with `gain_prob`,
/// drawing from a generator seeded by `cfg.seed`.
pub fn augment_chain(
    x: &AudioBuffer,
    noise_corpus: &[AudioBuffer],
    cfg: &AugmentConfig,
) -> Result<(AudioBuffer, AppliedLog)> {
    augment_chain_stream(x, noise_corpus, cfg, 0)
}

/// As [`augment_chain`], on an independent generator stream. Batch callers
/// pass the file index so files can be processed in any order.
pub fn augment_chain_stream(
    x: &AudioBuffer,
    noise_corpus: &[AudioBuffer],
    cfg: &AugmentConfig,
    stream: u64,
) -> Result<(AudioBuffer, AppliedLog)> {
    cfg.validate()?;
    if cfg.noise_prob > 0.0 && noise_corpus.is_empty() {
        return Err(Error::InvalidArgument(
            "noise corpus is empty but noise_prob > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let echo_delay_ms = cfg.echo_delay_ms.sample(&mut rng);
    let echo_scale = cfg.echo_scale.sample(&mut rng);
    let noise = if rng.gen::<f64>() < cfg.noise_prob {
        let index = rng.gen_range(0..noise_corpus.len());
        let snr_db = cfg.snr_db.sample(&mut rng);
        Some(NoiseApplied { index, snr_db })
    } else {
        None
    };
    let gain_db = if rng.gen::<f64>() < cfg.gain_prob {
        Some(cfg.gain_db.sample(&mut rng))
    } else {
        None
    };

    let log = AppliedLog {
        seed: cfg.seed,
        stream,
        echo_delay_ms,
        echo_scale,
        noise,
        gain_db,
    };
    let y = replay(x, noise_corpus, &log)?;
    Ok((y, log))
}

/// Re-applies a logged chain without drawing any randomness.
pub fn replay(x: &AudioBuffer, noise_corpus: &[AudioBuffer], log: &AppliedLog) -> Result<AudioBuffer> {
    let mut y = echo(x, log.echo_delay_ms, log.echo_scale)?;
    if let Some(n) = log.noise {
        let noise = noise_corpus.get(n.index).ok_or_else(|| {
            Error::InvalidArgument(format!("noise index {} out of range", n.index))
        })?;
        let noise = resample_linear(noise, y.sample_rate)?;
        y = mix_noise_at_snr(&y, &noise, n.snr_db)?;
    }
    if let Some(g) = log.gain_db {
        y = gain(&y, g);
    }
    Ok(y)
}
