//! Ingest a mixed text/audio manifest into a knowledge base and embed it
//! with the toy encoder.
//!
//!     cargo run --example ingest_and_embed

use std::f64::consts::PI;

use audiorag::audio::{write_wav, AudioBuffer};
use audiorag::config::DEFAULT_INSTRUCTION;
use audiorag::encoder::ToyEncoder;
use audiorag::engine::embed_knowledge_base;
use audiorag::kb::{ingest_manifest, KnowledgeBase};

fn main() -> audiorag::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let tone: Vec<f64> = (0..8000).map(|i| 0.4 * (2.0 * PI * 440.0 * i as f64 / 16000.0).sin()).collect();
    write_wav(&dir.path().join("a440.wav"), &AudioBuffer::new(tone, 16000)?)?;

    let manifest = dir.path().join("manifest.jsonl");
    std::fs::write(
        &manifest,
        concat!(
            r#"{"id":"doc-paris","modality":"text","text":"Paris is the capital of France"}"#, "\n",
            r#"{"id":"doc-nile","modality":"text","text":"The Nile flows north into the Mediterranean"}"#, "\n",
            r#"{"id":"aud-a440","modality":"audio","audio_path":"a440.wav"}"#, "\n",
            r#"{"id":"at-a440","modality":"audio_text","text":"Concert pitch A","audio_path":"a440.wav"}"#, "\n",
            r#"{"id":"doc-paris","modality":"text","text":"duplicate"}"#, "\n",
            r#"{"id":"aud-missing","modality":"audio"}"#, "\n",
        ),
    )
    .expect("write manifest");

    let kb_dir = dir.path().join("kb");
    let report = ingest_manifest(&manifest, &kb_dir)?;
    println!("accepted {}", report.accepted);
    for (line, reason) in &report.rejected {
        println!("rejected line {line}: {reason}");
    }

    let encoder = ToyEncoder::new(64, 0)?;
    let store = embed_knowledge_base(&kb_dir, &encoder, DEFAULT_INSTRUCTION)?;
    let kb = KnowledgeBase::open(&kb_dir)?;
    println!("{} entries, store {} x {}", kb.len(), store.len(), store.dim());
    for (id, row) in store.rows() {
        let head: Vec<String> = row.iter().take(4).map(|v| format!("{v:+.3}")).collect();
        println!("  {id:<12} [{} ...]", head.join(", "));
    }
    Ok(())
}
