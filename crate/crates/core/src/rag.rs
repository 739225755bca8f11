//! Generation stage: prompt assembly, Zero-Shot chain-of-thought sampling
//! and Universal Self-Consistency selection over a pluggable generator.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::encoder::{fnv1a64, AudioInput, UnifiedQuery};
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::retrieval::RetrievalResult;

pub const DEFAULT_MAGIC_PROMPT: &str = "Let's think step-by-step";
pub const DEFAULT_SYSTEM_TEXT: &str = "Answer the question using the knowledge provided below. \
Finish with a final line of the form \"Answer: <answer>\".";
pub const ANSWER_MARKER: &str = "Answer:";
pub const DEFAULT_N_SAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateRequest {
    pub prompt: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub audio_refs: Vec<String>,
    pub n: usize,
    pub temperature: f64,
}

/// External text generator. Must return exactly `req.n` completions.
pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerateRequest) -> Result<Vec<String>>;

    fn describe(&self) -> String;
}

/// Hash used to key scripted completions: FNV-1a 64 of the prompt's UTF-8
/// bytes, rendered as 16 lowercase hex digits.
pub fn prompt_hash(prompt: &str) -> String {
    format!("{:016x}", fnv1a64(prompt.as_bytes()))
}

/// Deterministic generator replaying canned completions keyed by prompt hash.
/// Requests for `n` samples return the first `n` canned entries, cycling if
/// fewer are stored.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    canned: HashMap<String, Vec<String>>,
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &str, completions: Vec<String>) -> &mut Self {
        self.canned.insert(prompt_hash(prompt), completions);
        self
    }

    pub fn insert_hash(&mut self, hash: impl Into<String>, completions: Vec<String>) -> &mut Self {
        self.canned.insert(hash.into(), completions);
        self
    }

    pub fn to_json(&self) -> String {
        let sorted: std::collections::BTreeMap<_, _> = self.canned.iter().collect();
        serde_json::to_string_pretty(&sorted).expect("map serializes")
    }

    /// Loads `{"<prompt hash>": ["completion", ...], ...}`.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let canned = serde_json::from_str(&body).map_err(|e| Error::Parse {
            line: e.line(),
            detail: e.to_string(),
        })?;
        Ok(Self { canned })
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, req: &GenerateRequest) -> Result<Vec<String>> {
        let hash = prompt_hash(&req.prompt);
        let canned = self.canned.get(&hash).ok_or_else(|| {
            Error::GeneratorUnavailable(format!("no scripted completion for prompt {hash}"))
        })?;
        if canned.is_empty() {
            return Ok(vec![String::new(); req.n]);
        }
        Ok(canned.iter().cycle().take(req.n).cloned().collect())
    }

    fn describe(&self) -> String {
        format!("scripted({} prompts)", self.canned.len())
    }
}

#[derive(Deserialize)]
struct GenerateResponse {
    completions: Vec<String>,
}

/// HTTP client for `POST {endpoint}/generate`.
pub struct RemoteGenerator {
    url: String,
    agent: ureq::Agent,
}

impl RemoteGenerator {
    pub fn new(endpoint: &str, timeout_ms: u64) -> Result<Self> {
        if timeout_ms == 0 {
            return Err(Error::InvalidArgument("generator timeout_ms must be positive".into()));
        }
        Ok(Self {
            url: format!("{}/generate", endpoint.trim_end_matches('/')),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_millis(timeout_ms))
                .build(),
        })
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, req: &GenerateRequest) -> Result<Vec<String>> {
        let resp: GenerateResponse = match self.agent.post(&self.url).send_json(req) {
            Ok(r) => r
                .into_json()
                .map_err(|e| Error::GeneratorUnavailable(format!("bad response body: {e}")))?,
            Err(ureq::Error::Status(code, _)) => {
                return Err(Error::GeneratorUnavailable(format!("{} returned HTTP {code}", self.url)))
            }
            Err(e) => return Err(Error::GeneratorUnavailable(format!("{}: {e}", self.url))),
        };
        if resp.completions.len() < req.n {
            return Err(Error::GeneratorUnavailable(format!(
                "asked for {} completions, got {}",
                req.n,
                resp.completions.len()
            )));
        }
        let mut c = resp.completions;
        c.truncate(req.n);
        Ok(c)
    }

    fn describe(&self) -> String {
        format!("remote({})", self.url)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorBackend {
    Remote { endpoint: String, timeout_ms: u64 },
    Scripted { script: std::path::PathBuf },
}

impl GeneratorBackend {
    pub fn build(&self) -> Result<Arc<dyn Generator>> {
        Ok(match self {
            GeneratorBackend::Remote {
                endpoint,
                timeout_ms,
            } => Arc::new(RemoteGenerator::new(endpoint, *timeout_ms)?),
            GeneratorBackend::Scripted { script } => Arc::new(ScriptedGenerator::from_json_file(script)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub system_text: String,
    pub magic_prompt: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            system_text: DEFAULT_SYSTEM_TEXT.to_owned(),
            magic_prompt: DEFAULT_MAGIC_PROMPT.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBlock {
    pub rank: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub knowledge_blocks: Vec<KnowledgeBlock>,
    pub query_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_audio_ref: Option<String>,
    pub magic_prompt: String,
    pub cot: bool,
}

impl PromptBundle {
    /// Serialized prompt:
    ///
    /// ```text
    /// {system_text}
    ///
    /// [Knowledge 1]
    /// {text}
    ///
    /// Question: {query_text}
    /// Let's think step-by-step        <- only with cot
    /// ```
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.system_text);
        s.push_str("\n\n");
        for b in &self.knowledge_blocks {
            s.push_str(&format!("[Knowledge {}]\n{}\n\n", b.rank, b.text));
        }
        s.push_str("Question: ");
        s.push_str(&self.query_text);
        if self.cot {
            s.push('\n');
            s.push_str(&self.magic_prompt);
        }
        s
    }

    /// Audio file paths for audio-capable generators: the query's audio
    /// (when it came from a file) first, then knowledge audio in rank order.
    pub fn audio_refs(&self) -> Vec<String> {
        self.query_audio_ref
            .iter()
            .cloned()
            .chain(self.knowledge_blocks.iter().filter_map(|b| b.audio_ref.clone()))
            .collect()
    }
}

pub fn assemble_prompt(
    q: &UnifiedQuery,
    hits: &RetrievalResult,
    kb: &KnowledgeBase,
    cot: bool,
    cfg: &PromptConfig,
) -> Result<PromptBundle> {
    let mut ordered: Vec<_> = hits.hits.iter().collect();
    ordered.sort_by_key(|h| h.rank);
    let knowledge_blocks = ordered
        .into_iter()
        .map(|h| {
            let entry = kb.get_entry(&h.id).map_err(|_| {
                Error::Consistency(format!("hit {:?} is not in the knowledge base", h.id))
            })?;
            Ok(KnowledgeBlock {
                rank: h.rank,
                text: entry.text.clone().unwrap_or_default(),
                audio_ref: entry.audio_path.as_ref().map(|p| p.display().to_string()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let query_audio_ref = match q.audio() {
        Some(AudioInput::Path(p)) => Some(p.display().to_string()),
        _ => None,
    };
    Ok(PromptBundle {
        system_text: cfg.system_text.clone(),
        knowledge_blocks,
        query_text: q.text_part().unwrap_or("").to_owned(),
        query_audio_ref,
        magic_prompt: cfg.magic_prompt.clone(),
        cot,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningSample {
    pub chain_text: String,
    pub extracted_answer: String,
}

/// Text after the last line-initial `Answer:` marker, or else the last
/// non-empty line; trimmed either way.
pub fn extract_answer(completion: &str) -> String {
    let mut offset = 0;
    let mut marker_at = None;
    for line in completion.split_inclusive('\n') {
        if line.starts_with(ANSWER_MARKER) {
            marker_at = Some(offset + ANSWER_MARKER.len());
        }
        offset += line.len();
    }
    match marker_at {
        Some(i) => completion[i..].trim().to_owned(),
        None => completion
            .lines()
            .rev()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or("")
            .to_owned(),
    }
}

pub fn generate_cot(
    generator: &dyn Generator,
    bundle: &PromptBundle,
    n_samples: usize,
    temperature: f64,
) -> Result<Vec<ReasoningSample>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let req = GenerateRequest {
        prompt: bundle.render(),
        audio_refs: bundle.audio_refs(),
        n: n_samples,
        temperature,
    };
    let completions = generator.generate(&req)?;
    if completions.len() != n_samples {
        return Err(Error::GeneratorUnavailable(format!(
            "asked for {n_samples} completions, got {}",
            completions.len()
        )));
    }
    Ok(completions
        .into_iter()
        .map(|c| ReasoningSample {
            extracted_answer: extract_answer(&c),
            chain_text: c,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Usc,
    MajorityFallback,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub final_answer: String,
    pub method: SelectionMethod,
    /// 0-based index of the chosen sample.
    pub index: usize,
}

/// The selection prompt listing every sampled path, numbered from 1.
pub fn usc_prompt(question: &str, samples: &[ReasoningSample]) -> String {
    let mut s = format!("I have generated the following responses to the question: {question}\n\n");
    for (i, sample) in samples.iter().enumerate() {
        s.push_str(&format!("Response {}:\n{}\n\n", i + 1, sample.chain_text));
    }
    s.push_str("Evaluate these responses.\n");
    s.push_str("Select the most consistent response based on majority consensus.\n");
    s.push_str("Reply with the number of the selected response only.");
    s
}

/// First run of ASCII digits in the reply, if it names a sample (1-based).
fn parse_selection(reply: &str, n: usize) -> Option<usize> {
    let start = reply.find(|c: char| c.is_ascii_digit())?;
    let digits: String = reply[start..].chars().take_while(char::is_ascii_digit).collect();
    let idx: usize = digits.parse().ok()?;
    (1..=n).contains(&idx).then(|| idx - 1)
}

/// Most frequent extracted answer; ties go to the answer seen first.
pub fn majority_vote(samples: &[ReasoningSample]) -> usize {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        counts.entry(s.extracted_answer.as_str()).or_insert((0, i)).0 += 1;
    }
    counts
        .values()
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|&(_, first)| first)
        .unwrap_or(0)
}

/// Asks the generator to pick the most consistent sample; falls back to a
/// majority vote if the generator fails or its reply names no sample.
pub fn select_self_consistent(
    generator: &dyn Generator,
    question: &str,
    samples: &[ReasoningSample],
) -> Result<Selection> {
    match samples.len() {
        0 => Err(Error::InvalidArgument("no samples to select from".into())),
        1 => Ok(Selection {
            final_answer: samples[0].extracted_answer.clone(),
            method: SelectionMethod::Single,
            index: 0,
        }),
        n => {
            let req = GenerateRequest {
                prompt: usc_prompt(question, samples),
                audio_refs: Vec::new(),
                n: 1,
                temperature: 0.0,
            };
            let picked = match generator.generate(&req) {
                Ok(replies) => replies.first().and_then(|r| parse_selection(r, n)),
                Err(e) => {
                    log::warn!("self-consistency selector failed, using majority vote: {e}");
                    None
                }
            };
            let (index, method) = match picked {
                Some(i) => (i, SelectionMethod::Usc),
                None => (majority_vote(samples), SelectionMethod::MajorityFallback),
            };
            Ok(Selection {
                final_answer: samples[index].extracted_answer.clone(),
                method,
                index,
            })
        }
    }
}
