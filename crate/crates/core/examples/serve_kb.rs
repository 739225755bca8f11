//! Serve a small knowledge base over HTTP and query it.
//!
//!     cargo run --example serve_kb            # one-shot demo
//!     cargo run --example serve_kb -- --hold  # keep serving until Ctrl-C

use std::sync::Arc;

use audiorag::config::DEFAULT_INSTRUCTION;
use audiorag::encoder::ToyEncoder;
use audiorag::engine::{embed_knowledge_base, Engine};
use audiorag::kb::{ingest_manifest, KnowledgeBase};
use audiorag::service::{self, ServiceOptions};

fn main() -> audiorag::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = dir.path().join("m.jsonl");
    std::fs::write(
        &manifest,
        concat!(
            r#"{"id":"doc-jupiter","modality":"text","text":"Jupiter is the largest planet in the solar system"}"#, "\n",
            r#"{"id":"doc-mercury","modality":"text","text":"Mercury is the planet closest to the Sun"}"#, "\n",
            r#"{"id":"doc-piano","modality":"text","text":"A piano has eighty eight keys"}"#, "\n",
        ),
    )
    .expect("write manifest");
    let kb_dir = dir.path().join("kb");
    ingest_manifest(&manifest, &kb_dir)?;
    let encoder = Arc::new(ToyEncoder::new(128, 0)?);
    let store = embed_knowledge_base(&kb_dir, encoder.as_ref(), DEFAULT_INSTRUCTION)?;
    let engine = Engine::new(KnowledgeBase::open(&kb_dir)?, store, encoder, None, None)?;

    let svc = service::spawn(Arc::new(engine), ServiceOptions::default(), "127.0.0.1:0")?;
    println!("listening on {}", svc.url());

    let health = ureq::get(&format!("{}/v1/health", svc.url())).call().expect("health").into_string().expect("body");
    println!("GET /v1/health -> {health}");
    let body = serde_json::json!({
        "query_id": "q1",
        "instruction": DEFAULT_INSTRUCTION,
        "text": "what is the largest planet",
        "k": 2,
    });
    let resp = ureq::post(&format!("{}/v1/retrieve", svc.url())).send_json(&body).expect("retrieve");
    println!("POST /v1/retrieve -> {}", resp.into_string().expect("body"));

    if std::env::args().any(|a| a == "--hold") {
        println!("serving; press Ctrl-C to stop");
        loop {
            std::thread::park();
        }
    }
    svc.stop()?;
    Ok(())
}
