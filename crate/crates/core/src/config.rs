//! Engine configuration: a flat `key = value` TOML file, overridden by
//! `AUDIORAG_<KEY>` environment variables, overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::audio::{AugmentConfig, Range};
use crate::encoder::EncoderBackend;
use crate::error::{Error, Result};
use crate::projection::DEFAULT_TAU;
use crate::rag::{GeneratorBackend, PromptConfig, DEFAULT_N_SAMPLES};

pub const ENV_PREFIX: &str = "AUDIORAG_";
pub const DEFAULT_INSTRUCTION: &str =
    "Given a question, retrieve relevant documents that best answer the question.";

pub const KEYS: &[&str] = &[
    "kb_dir",
    "encoder",
    "encoder_dim",
    "encoder_seed",
    "encoder_endpoint",
    "encoder_timeout_ms",
    "generator",
    "generator_script",
    "generator_endpoint",
    "generator_timeout_ms",
    "head_path",
    "k_default",
    "instruction",
    "n_samples",
    "temperature",
    "cot",
    "tau",
    "bind",
    "system_text",
    "magic_prompt",
    "echo_delay_ms",
    "echo_scale",
    "snr_db",
    "noise_prob",
    "gain_db",
    "gain_prob",
    "seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub kb_dir: PathBuf,
    pub encoder: EncoderBackend,
    pub generator: Option<GeneratorBackend>,
    pub head_path: Option<PathBuf>,
    pub k_default: usize,
    pub instruction: String,
    pub n_samples: usize,
    pub temperature: f64,
    pub cot: bool,
    pub tau: f64,
    pub bind: String,
    pub prompt: PromptConfig,
    pub augment: AugmentConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            kb_dir: PathBuf::from("kb"),
            encoder: EncoderBackend::Toy { dim: 64, seed: 0 },
            generator: None,
            head_path: None,
            k_default: 3,
            instruction: DEFAULT_INSTRUCTION.to_owned(),
            n_samples: DEFAULT_N_SAMPLES,
            temperature: 0.7,
            cot: true,
            tau: DEFAULT_TAU,
            bind: "127.0.0.1:8080".to_owned(),
            prompt: PromptConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

/// Raw key/value layers, later layers winning.
#[derive(Debug, Clone, Default)]
pub struct ConfigLayers {
    values: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("unknown config key {key:?}")))
    }
}

impl ConfigLayers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.toml_text(&text)
    }

    pub fn toml_text(&mut self, text: &str) -> Result<&mut Self> {
        let table: toml::Table = toml::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config file: {e}")))?;
        for (k, v) in table {
            check_key(&k)?;
            let s = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "config key {k:?}: unsupported value {other}"
                    )))
                }
            };
            self.values.insert(k, s);
        }
        Ok(self)
    }

    /// Picks up `AUDIORAG_<KEY>` for every known key.
    pub fn env<I>(&mut self, vars: I) -> &mut Self
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (name, value) in vars {
            if let Some(rest) = name.strip_prefix(ENV_PREFIX) {
                let key = rest.to_ascii_lowercase();
                if KEYS.contains(&key.as_str()) {
                    self.values.insert(key, value);
                }
            }
        }
        self
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<&mut Self> {
        check_key(key)?;
        self.values.insert(key.to_owned(), value.into());
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.trim().parse::<T>().map_err(|_| {
                    Error::InvalidArgument(format!("config key {key:?}: cannot parse {v:?}"))
                })
            })
            .transpose()
    }

    fn range(&self, key: &str) -> Result<Option<Range>> {
        self.get(key)
            .map(|v| parse_range(v).map_err(|e| Error::InvalidArgument(format!("config key {key:?}: {e}"))))
            .transpose()
    }

    fn required(&self, key: &str, why: &str) -> Result<String> {
        self.get(key)
            .map(str::to_owned)
            .ok_or_else(|| Error::InvalidArgument(format!("config key {key:?} is required {why}")))
    }

    pub fn build(&self) -> Result<EngineConfig> {
        let d = EngineConfig::default();
        let encoder_dim = self.parse("encoder_dim")?.unwrap_or(64usize);
        let encoder = match self.get("encoder").unwrap_or("toy") {
            "toy" => EncoderBackend::Toy {
                dim: encoder_dim,
                seed: self.parse("encoder_seed")?.unwrap_or(0),
            },
            "remote" => EncoderBackend::Remote {
                endpoint: self.required("encoder_endpoint", "for a remote encoder")?,
                timeout_ms: self.parse("encoder_timeout_ms")?.unwrap_or(10_000),
                dim: encoder_dim,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "config key \"encoder\": expected toy or remote, got {other:?}"
                )))
            }
        };
        let generator = match self.get("generator").unwrap_or("none") {
            "none" => None,
            "scripted" => Some(GeneratorBackend::Scripted {
                script: self.required("generator_script", "for a scripted generator")?.into(),
            }),
            "remote" => Some(GeneratorBackend::Remote {
                endpoint: self.required("generator_endpoint", "for a remote generator")?,
                timeout_ms: self.parse("generator_timeout_ms")?.unwrap_or(60_000),
            }),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "config key \"generator\": expected none, scripted or remote, got {other:?}"
                )))
            }
        };
        let k_default = self.parse("k_default")?.unwrap_or(d.k_default);
        if k_default == 0 {
            return Err(Error::InvalidArgument("config key \"k_default\" must be >= 1".into()));
        }
        let n_samples = self.parse("n_samples")?.unwrap_or(d.n_samples);
        if n_samples == 0 {
            return Err(Error::InvalidArgument("config key \"n_samples\" must be >= 1".into()));
        }
        let augment = AugmentConfig {
            echo_delay_ms: self.range("echo_delay_ms")?.unwrap_or(d.augment.echo_delay_ms),
            echo_scale: self.range("echo_scale")?.unwrap_or(d.augment.echo_scale),
            snr_db: self.range("snr_db")?.unwrap_or(d.augment.snr_db),
            noise_prob: self.parse("noise_prob")?.unwrap_or(d.augment.noise_prob),
            gain_db: self.range("gain_db")?.unwrap_or(d.augment.gain_db),
            gain_prob: self.parse("gain_prob")?.unwrap_or(d.augment.gain_prob),
            seed: self.parse("seed")?.unwrap_or(d.augment.seed),
        };
        augment.validate()?;
        let cfg = EngineConfig {
            kb_dir: self.get("kb_dir").map(PathBuf::from).unwrap_or(d.kb_dir),
            encoder,
            generator,
            head_path: self.get("head_path").map(PathBuf::from),
            k_default,
            instruction: self.get("instruction").map(str::to_owned).unwrap_or(d.instruction),
            n_samples,
            temperature: self.parse("temperature")?.unwrap_or(d.temperature),
            cot: self.parse("cot")?.unwrap_or(d.cot),
            tau: self.parse("tau")?.unwrap_or(d.tau),
            bind: self.get("bind").map(str::to_owned).unwrap_or(d.bind),
            prompt: PromptConfig {
                system_text: self.get("system_text").map(str::to_owned).unwrap_or(d.prompt.system_text),
                magic_prompt: self.get("magic_prompt").map(str::to_owned).unwrap_or(d.prompt.magic_prompt),
            },
            augment,
        };
        if cfg.instruction.is_empty() {
            return Err(Error::InvalidArgument("config key \"instruction\" must be non-empty".into()));
        }
        Ok(cfg)
    }
}

/// `"lo:hi"`, or a single number for a degenerate range.
pub fn parse_range(s: &str) -> std::result::Result<Range, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?}"));
    let r = match s.split_once(':') {
        Some((lo, hi)) => Range::new(num(lo)?, num(hi)?),
        None => {
            let v = num(s)?;
            Range::new(v, v)
        }
    };
    if r.lo > r.hi {
        return Err(format!("range {s:?} has lo > hi"));
    }
    Ok(r)
}

impl EngineConfig {
    /// Encoder timeout + generator timeout + 1 s of scheduling slack.
    pub fn request_deadline(&self) -> Duration {
        let enc = match &self.encoder {
            EncoderBackend::Remote { timeout_ms, .. } => *timeout_ms,
            EncoderBackend::Toy { .. } => 0,
        };
        let gen = match &self.generator {
            Some(GeneratorBackend::Remote { timeout_ms, .. }) => *timeout_ms,
            _ => 0,
        };
        Duration::from_millis(enc + gen + 1000)
    }
}
