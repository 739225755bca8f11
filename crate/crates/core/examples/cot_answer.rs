//! Retrieve, prompt with zero-shot chain of thought, sample three reasoning
//! paths and pick one by self-consistency. A scripted generator stands in
//! for the model so the run is deterministic.
//!
//!     cargo run --example cot_answer

use std::sync::Arc;

use audiorag::config::DEFAULT_INSTRUCTION;
use audiorag::encoder::{Encoder, ToyEncoder, UnifiedQuery};
use audiorag::engine::{embed_knowledge_base, AnswerOptions, Engine};
use audiorag::kb::{ingest_manifest, KnowledgeBase};
use audiorag::rag::{assemble_prompt, usc_prompt, PromptConfig, ReasoningSample, ScriptedGenerator};
use audiorag::retrieval::retrieve;

fn main() -> audiorag::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = dir.path().join("m.jsonl");
    std::fs::write(
        &manifest,
        concat!(
            r#"{"id":"doc-hamlet","modality":"text","text":"Hamlet is a tragedy written by William Shakespeare"}"#, "\n",
            r#"{"id":"doc-faust","modality":"text","text":"Faust is a tragic play by Goethe"}"#, "\n",
            r#"{"id":"doc-moon","modality":"text","text":"The Moon orbits the Earth"}"#, "\n",
        ),
    )
    .expect("write manifest");
    let kb_dir = dir.path().join("kb");
    ingest_manifest(&manifest, &kb_dir)?;
    let encoder = Arc::new(ToyEncoder::new(128, 0)?);
    let store = embed_knowledge_base(&kb_dir, encoder.as_ref(), DEFAULT_INSTRUCTION)?;
    let kb = KnowledgeBase::open(&kb_dir)?;

    // Script the generator against the exact prompts the pipeline will send.
    let question = "who wrote Hamlet";
    let q = UnifiedQuery::text(DEFAULT_INSTRUCTION, question)?;
    let (hits, _) = retrieve(&store, encoder.as_ref() as &dyn Encoder, None, "q1", &q, 2)?;
    let prompt = assemble_prompt(&q, &hits, &kb, true, &PromptConfig::default())?.render();
    let chains = [
        "Knowledge 1 names the author.\nAnswer: William Shakespeare",
        "The play is attributed to Marlowe by some.\nAnswer: Christopher Marlowe",
        "Hamlet was written by Shakespeare.\nAnswer: William Shakespeare",
    ];
    let samples: Vec<ReasoningSample> = chains
        .iter()
        .map(|c| ReasoningSample { chain_text: c.to_string(), extracted_answer: String::new() })
        .collect();
    let mut gen = ScriptedGenerator::new();
    gen.insert(&prompt, chains.iter().map(|c| c.to_string()).collect());
    gen.insert(&usc_prompt(question, &samples), vec!["Response 3".into()]);
    println!("--- prompt ---\n{prompt}\n--------------");

    let engine = Engine::new(kb, store, encoder, Some(Arc::new(gen)), None)?;
    let opts = AnswerOptions { k: 2, n_samples: 3, cot: true, temperature: 0.7 };
    let record = engine.answer("q1", &q, &opts)?;
    println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
    Ok(())
}
