use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Decodes canonical audio: RIFF WAV, 16-bit integer PCM, mono. Samples are
/// scaled by 1/32768 into [-1, 1).
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let reader =
        WavReader::new(Cursor::new(bytes)).map_err(|e| Error::AudioDecode(format!("riff: {e}")))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::AudioDecode(format!(
            "channels: expected 1 (mono), found {}",
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int {
        return Err(Error::AudioDecode(
            "sample_format: expected integer PCM, found float".into(),
        ));
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::AudioDecode(format!(
            "bits_per_sample: expected 16, found {}",
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::AudioDecode(format!("data: {e}")))?;
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::AudioDecode(msg) => Error::AudioDecode(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Encodes as 16-bit mono PCM, saturating samples to [-1, 1].
pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut out = Cursor::new(Vec::with_capacity(44 + buf.len() * 2));
    {
        let mut w = WavWriter::new(&mut out, spec).expect("in-memory writer");
        for &s in &buf.samples {
            w.write_sample(to_pcm16(s)).expect("in-memory write");
        }
        w.finalize().expect("in-memory finalize");
    }
    out.into_inner()
}

pub fn write_wav(path: &Path, buf: &AudioBuffer) -> Result<()> {
    std::fs::write(path, encode_wav(buf)).map_err(|e| Error::io(path, e))
}

fn to_pcm16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}
