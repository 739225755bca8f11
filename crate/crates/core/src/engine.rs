//! A loaded knowledge base plus backends: the single code path behind both
//! the CLI and the HTTP service.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::encoder::{encode_entry, Encoder, UnifiedQuery};
use crate::error::{Error, Result, Stage};
use crate::kb::{KbLock, KnowledgeBase, STORE_META_FILE};
use crate::projection::{read_head, ProjectionHead};
use crate::rag::{
    assemble_prompt, generate_cot, select_self_consistent, Generator, PromptConfig,
    ReasoningSample, SelectionMethod,
};
use crate::retrieval::{retrieve, RetrievalResult, ScoredDoc};
use crate::store::{read_store, write_store, EmbeddingStore};

/// Written next to `embeddings.wvrg`: how the knowledge side was encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub instruction: String,
    pub encoder: String,
    pub dim: usize,
    pub count: usize,
}

/// Encodes every entry of the knowledge base at `kb_dir` and writes the
/// store and its metadata. Entries are encoded in ingestion order.
pub fn embed_knowledge_base(
    kb_dir: &Path,
    encoder: &dyn Encoder,
    instruction: &str,
) -> Result<EmbeddingStore> {
    let kb = KnowledgeBase::open(kb_dir)?;
    let _lock = KbLock::acquire(kb_dir)?;
    let mut store = EmbeddingStore::new(encoder.dim())?;
    for entry in kb.entries() {
        let v = encode_entry(encoder, entry, instruction)?;
        store.push(entry.id.clone(), &v)?;
    }
    write_store(&store, &kb.store_path())?;
    let meta = StoreMeta {
        instruction: instruction.to_owned(),
        encoder: encoder.describe(),
        dim: store.dim(),
        count: store.len(),
    };
    let meta_path = kb_dir.join(STORE_META_FILE);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes"))
        .map_err(|e| Error::io(&meta_path, e))?;
    Ok(store)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub retrieval_s: f64,
    pub generation_s: f64,
    pub selection_s: f64,
}

impl Timings {
    pub fn total_s(&self) -> f64 {
        self.retrieval_s + self.generation_s + self.selection_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub query_id: String,
    pub final_answer: String,
    pub method: SelectionMethod,
    pub samples: Vec<ReasoningSample>,
    pub hits: Vec<ScoredDoc>,
    pub timings: Timings,
}

impl AnswerRecord {
    /// The record with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerOptions {
    pub k: usize,
    pub n_samples: usize,
    pub cot: bool,
    pub temperature: f64,
}

impl Default for AnswerOptions {
    fn default() -> Self {
        Self {
            k: 3,
            n_samples: crate::rag::DEFAULT_N_SAMPLES,
            cot: true,
            temperature: 0.7,
        }
    }
}

/// Immutable snapshot: knowledge base, store (in head space when a head is
/// loaded), and backends. Safe to share across threads.
pub struct Engine {
    kb: KnowledgeBase,
    store: EmbeddingStore,
    encoder: Arc<dyn Encoder>,
    generator: Option<Arc<dyn Generator>>,
    head: Option<ProjectionHead>,
    pub instruction: String,
    pub prompt: PromptConfig,
}

impl Engine {
    /// `base_store` holds encoder-space rows; with a head they are projected
    /// once here.
    pub fn new(
        kb: KnowledgeBase,
        base_store: EmbeddingStore,
        encoder: Arc<dyn Encoder>,
        generator: Option<Arc<dyn Generator>>,
        head: Option<ProjectionHead>,
    ) -> Result<Self> {
        if encoder.dim() != base_store.dim() {
            return Err(Error::DimMismatch {
                expected: base_store.dim(),
                got: encoder.dim(),
            });
        }
        let store = match &head {
            Some(h) => {
                if h.d_in() != base_store.dim() {
                    return Err(Error::DimMismatch {
                        expected: base_store.dim(),
                        got: h.d_in(),
                    });
                }
                h.project_store(&base_store)?
            }
            None => base_store,
        };
        for id in store.ids() {
            kb.get_entry(id).map_err(|_| {
                Error::Consistency(format!("store id {id:?} is not in the knowledge base"))
            })?;
        }
        Ok(Self {
            kb,
            store,
            encoder,
            generator,
            head,
            instruction: crate::config::DEFAULT_INSTRUCTION.to_owned(),
            prompt: PromptConfig::default(),
        })
    }

    pub fn load(cfg: &EngineConfig) -> Result<Self> {
        let kb = KnowledgeBase::open(&cfg.kb_dir)?;
        let store = read_store(&kb.store_path())?;
        let encoder = cfg.encoder.build()?;
        let generator = cfg.generator.as_ref().map(|g| g.build()).transpose()?;
        let head = cfg.head_path.as_deref().map(read_head).transpose()?;
        let mut engine = Self::new(kb, store, encoder, generator, head)?;
        engine.instruction = cfg.instruction.clone();
        engine.prompt = cfg.prompt.clone();
        Ok(engine)
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn encoder(&self) -> &dyn Encoder {
        self.encoder.as_ref()
    }

    pub fn head(&self) -> Option<&ProjectionHead> {
        self.head.as_ref()
    }

    pub fn has_generator(&self) -> bool {
        self.generator.is_some()
    }

    pub fn retrieve(&self, query_id: &str, q: &UnifiedQuery, k: usize) -> Result<(RetrievalResult, Duration)> {
        retrieve(&self.store, self.encoder.as_ref(), self.head.as_ref(), query_id, q, k)
    }

    /// Retrieve, assemble, sample, select. Failures carry the stage they came
    /// from and no partial record is returned.
    pub fn answer(&self, query_id: &str, q: &UnifiedQuery, opts: &AnswerOptions) -> Result<AnswerRecord> {
        let generator = self.generator.as_deref().ok_or_else(|| {
            Error::InvalidArgument("no generator backend configured".into()).at(Stage::Generation)
        })?;
        let (hits, retrieval) = self
            .retrieve(query_id, q, opts.k)
            .map_err(|e| e.at(Stage::Retrieval))?;
        let bundle = assemble_prompt(q, &hits, &self.kb, opts.cot, &self.prompt)
            .map_err(|e| e.at(Stage::Prompt))?;

        let start = Instant::now();
        let samples = generate_cot(generator, &bundle, opts.n_samples, opts.temperature)
            .map_err(|e| e.at(Stage::Generation))?;
        let generation = start.elapsed();

        let start = Instant::now();
        let selection = select_self_consistent(generator, &bundle.query_text, &samples)
            .map_err(|e| e.at(Stage::Selection))?;
        let selection_time = start.elapsed();

        Ok(AnswerRecord {
            query_id: query_id.to_owned(),
            final_answer: selection.final_answer,
            method: selection.method,
            samples,
            hits: hits.hits,
            timings: Timings {
                retrieval_s: retrieval.as_secs_f64(),
                generation_s: generation.as_secs_f64(),
                selection_s: selection_time.as_secs_f64(),
            },
        })
    }
}
