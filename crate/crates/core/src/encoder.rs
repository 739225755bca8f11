//! Query templating and the pluggable encoder contract.
//!
//! Two backends ship: [`ToyEncoder`], a deterministic bag-of-tokens hash plus
//! per-frame audio RMS, and [`RemoteEncoder`], an HTTP client for an external
//! embedding model.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::audio::decode_wav;
use crate::error::{Error, Result};
use crate::kb::KnowledgeEntry;
use crate::store::EmbeddingVector;

/// Audio attached to a query: a file on disk, or WAV bytes received inline.
#[derive(Debug, Clone, PartialEq)]
pub enum AudioInput {
    Path(PathBuf),
    Wav(Arc<[u8]>),
}

impl AudioInput {
    pub fn bytes(&self) -> Result<Arc<[u8]>> {
        match self {
            AudioInput::Path(p) => std::fs::read(p)
                .map(Arc::from)
                .map_err(|e| Error::AudioDecode(format!("{}: {e}", p.display()))),
            AudioInput::Wav(b) => Ok(Arc::clone(b)),
        }
    }
}

/// Task instruction plus text and/or audio.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedQuery {
    instruction: String,
    text: Option<String>,
    audio: Option<AudioInput>,
}

impl UnifiedQuery {
    pub fn new(
        instruction: impl Into<String>,
        text: Option<String>,
        audio: Option<AudioInput>,
    ) -> Result<Self> {
        let instruction = instruction.into();
        if instruction.is_empty() {
            return Err(Error::InvalidArgument("instruction must be non-empty".into()));
        }
        if text.is_none() && audio.is_none() {
            return Err(Error::InvalidArgument(
                "query needs text, audio, or both".into(),
            ));
        }
        Ok(Self {
            instruction,
            text,
            audio,
        })
    }

    pub fn text(instruction: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        Self::new(instruction, Some(text.into()), None)
    }

    pub fn audio_file(instruction: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        Self::new(instruction, None, Some(AudioInput::Path(path.as_ref().to_path_buf())))
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn text_part(&self) -> Option<&str> {
        self.text.as_deref()
    }

    pub fn audio(&self) -> Option<&AudioInput> {
        self.audio.as_ref()
    }

    /// Builds the query that encodes a knowledge entry's text and audio.
    pub fn for_entry(entry: &KnowledgeEntry, instruction: &str) -> Result<Self> {
        Self::new(
            instruction,
            entry.text.clone(),
            entry.audio_path.clone().map(AudioInput::Path),
        )
    }
}

/// `"Instruction: " + instruction + " Query: " + text`. Audio is never inlined.
pub fn render_query_template(q: &UnifiedQuery) -> String {
    let text = q.text.as_deref().unwrap_or("");
    let mut s = String::with_capacity(22 + q.instruction.len() + text.len());
    s.push_str("Instruction: ");
    s.push_str(&q.instruction);
    s.push_str(" Query: ");
    s.push_str(text);
    s
}

/// Produces one unit-norm vector per input. Implementations must be safe to
/// call from many threads.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;

    fn encode(&self, q: &UnifiedQuery) -> Result<EmbeddingVector>;

    /// Human-readable backend identity, recorded next to stores it produced.
    fn describe(&self) -> String;
}

pub fn encode_entry(
    encoder: &dyn Encoder,
    entry: &KnowledgeEntry,
    instruction: &str,
) -> Result<EmbeddingVector> {
    encoder.encode(&UnifiedQuery::for_entry(entry, instruction)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderBackend {
    Remote {
        endpoint: String,
        timeout_ms: u64,
        dim: usize,
    },
    Toy {
        dim: usize,
        seed: u64,
    },
}

impl EncoderBackend {
    pub fn build(&self) -> Result<Arc<dyn Encoder>> {
        Ok(match self {
            EncoderBackend::Remote {
                endpoint,
                timeout_ms,
                dim,
            } => Arc::new(RemoteEncoder::new(endpoint, *timeout_ms, *dim)?),
            EncoderBackend::Toy { dim, seed } => Arc::new(ToyEncoder::new(*dim, *seed)?),
        })
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Deterministic dependency-free encoder for tests and CI.
///
/// Text: the rendered template is lowercased and split on ASCII whitespace;
/// each token's FNV-1a 64 hash `h` adds +1 (even `h`) or -1 (odd `h`) to
/// component `(h / 2) mod dim`. Audio: the decoded samples are cut into `dim`
/// equal contiguous frames (the last zero-padded) and each frame's RMS is
/// added to its component. The sum is L2-normalized; an all-zero sum maps to
/// the basis vector e_0.
///
/// The seed only labels the backend; the hashing scheme has no random state.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    dim: usize,
    seed: u64,
}

impl ToyEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("toy encoder dim must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    fn text_component(&self, rendered: &str, acc: &mut [f64]) {
        let lowered = rendered.to_lowercase();
        for token in lowered
            .split(|c: char| c.is_ascii_whitespace())
            .filter(|t| !t.is_empty())
        {
            let h = fnv1a64(token.as_bytes());
            let slot = ((h / 2) % self.dim as u64) as usize;
            acc[slot] += if h % 2 == 0 { 1.0 } else { -1.0 };
        }
    }

    fn audio_component(&self, samples: &[f64], acc: &mut [f64]) {
        if samples.is_empty() {
            return;
        }
        let frame = samples.len().div_ceil(self.dim);
        for (j, slot) in acc.iter_mut().enumerate() {
            let start = (j * frame).min(samples.len());
            let end = ((j + 1) * frame).min(samples.len());
            let energy: f64 = samples[start..end].iter().map(|s| s * s).sum();
            *slot += (energy / frame as f64).sqrt();
        }
    }
}

impl Encoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, q: &UnifiedQuery) -> Result<EmbeddingVector> {
        let mut acc = vec![0.0f64; self.dim];
        self.text_component(&render_query_template(q), &mut acc);
        if let Some(audio) = &q.audio {
            let buf = decode_wav(&audio.bytes()?)?;
            self.audio_component(&buf.samples, &mut acc);
        }
        if acc.iter().all(|&v| v == 0.0) {
            return Ok(EmbeddingVector::basis(self.dim));
        }
        EmbeddingVector::from_f64(&acc)
    }

    fn describe(&self) -> String {
        format!("toy(dim={}, seed={})", self.dim, self.seed)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    instruction: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    audio_b64: Option<String>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    embedding: Vec<f32>,
}

/// HTTP client for `POST {endpoint}/embed`.
pub struct RemoteEncoder {
    url: String,
    dim: usize,
    timeout_ms: u64,
    agent: ureq::Agent,
}

impl RemoteEncoder {
    pub fn new(endpoint: &str, timeout_ms: u64, dim: usize) -> Result<Self> {
        if timeout_ms == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "remote encoder needs positive timeout_ms and dim".into(),
            ));
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(timeout_ms))
            .build();
        Ok(Self {
            url: format!("{}/embed", endpoint.trim_end_matches('/')),
            dim,
            timeout_ms,
            agent,
        })
    }
}

impl Encoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, q: &UnifiedQuery) -> Result<EmbeddingVector> {
        let audio_b64 = match &q.audio {
            Some(a) => {
                let bytes = a.bytes()?;
                // only canonical audio goes over the wire
                decode_wav(&bytes)?;
                Some(base64::engine::general_purpose::STANDARD.encode(&bytes))
            }
            None => None,
        };
        let req = EmbedRequest {
            instruction: &q.instruction,
            text: q.text.as_deref(),
            audio_b64,
        };
        let resp: EmbedResponse = match self.agent.post(&self.url).send_json(&req) {
            Ok(r) => r
                .into_json()
                .map_err(|e| Error::EncoderUnavailable(format!("bad response body: {e}")))?,
            Err(ureq::Error::Status(code, _)) => {
                return Err(Error::EncoderUnavailable(format!("{} returned HTTP {code}", self.url)))
            }
            Err(e) => return Err(Error::EncoderUnavailable(format!("{}: {e}", self.url))),
        };
        if resp.dim != self.dim || resp.embedding.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: if resp.embedding.len() != self.dim {
                    resp.embedding.len()
                } else {
                    resp.dim
                },
            });
        }
        EmbeddingVector::normalized(&resp.embedding)
    }

    fn describe(&self) -> String {
        format!("remote({}, dim={}, timeout_ms={})", self.url, self.dim, self.timeout_ms)
    }
}
