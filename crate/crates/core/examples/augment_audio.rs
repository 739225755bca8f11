//! Echo, noise and gain augmentation with a replayable log.
//!
//!     cargo run --example augment_audio -- 42

use std::f64::consts::PI;

use audiorag::audio::{augment_chain, replay, write_wav, AudioBuffer, AugmentConfig};
use rand::{Rng, SeedableRng};

fn main() -> audiorag::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let rate = 16000;
    let sine: Vec<f64> = (0..rate).map(|i| 0.5 * (2.0 * PI * 440.0 * i as f64 / rate as f64).sin()).collect();
    let x = AudioBuffer::new(sine, rate as u32)?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let hiss: Vec<f64> = (0..4000).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let corpus = vec![AudioBuffer::new(hiss, rate as u32)?];

    let cfg = AugmentConfig { seed, ..AugmentConfig::default() };
    let (y, log) = augment_chain(&x, &corpus, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&log).expect("log serializes"));
    assert_eq!(replay(&x, &corpus, &log)?, y);

    let out = std::env::temp_dir().join(format!("audiorag-augmented-{seed}.wav"));
    write_wav(&out, &y)?;
    println!("wrote {} ({} samples, peak {:.3})", out.display(), y.len(), y.samples.iter().fold(0.0f64, |m, s| m.max(s.abs())));
    Ok(())
}
