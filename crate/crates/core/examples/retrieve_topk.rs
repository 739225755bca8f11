//! Exact cosine top-k over an in-memory store, plus the softmax retrieval
//! distribution over the whole corpus.
//!
//!     cargo run --example retrieve_topk -- "which river flows north"

use audiorag::config::DEFAULT_INSTRUCTION;
use audiorag::encoder::{Encoder, ToyEncoder, UnifiedQuery};
use audiorag::retrieval::{format_run_line, retrieval_distribution, retrieve};
use audiorag::store::EmbeddingStore;

const CORPUS: &[(&str, &str)] = &[
    ("doc-paris", "Paris is the capital city of France"),
    ("doc-nile", "The Nile is a river that flows north through Egypt"),
    ("doc-everest", "Mount Everest is the highest mountain above sea level"),
    ("doc-amazon", "The Amazon river carries more water than any other river"),
    ("doc-violin", "A violin has four strings tuned in fifths"),
];

fn main() -> audiorag::Result<()> {
    let question = std::env::args().nth(1).unwrap_or_else(|| "which river flows north".to_owned());
    let encoder = ToyEncoder::new(128, 0)?;
    let mut store = EmbeddingStore::new(encoder.dim())?;
    for (id, text) in CORPUS {
        store.push(*id, &encoder.encode(&UnifiedQuery::text(DEFAULT_INSTRUCTION, *text)?)?)?;
    }

    let q = UnifiedQuery::text(DEFAULT_INSTRUCTION, question.as_str())?;
    let (result, elapsed) = retrieve(&store, &encoder, None, "q1", &q, 3)?;
    for hit in &result.hits {
        println!("{}", format_run_line(&result.query_id, hit, "example"));
    }
    println!("retrieval took {:.1} us", elapsed.as_secs_f64() * 1e6);

    let qv = encoder.encode(&q)?;
    println!("distribution:");
    for (id, p) in retrieval_distribution(&store, qv.as_slice())? {
        println!("  {id:<12} {p:.4}");
    }
    Ok(())
}
