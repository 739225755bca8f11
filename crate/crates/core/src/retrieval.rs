//! Exact cosine top-k over an [`EmbeddingStore`] and the softmax retrieval
//! distribution.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, UnifiedQuery};
use crate::error::{Error, Result};
use crate::projection::ProjectionHead;
use crate::store::{EmbeddingStore, EmbeddingVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub hits: Vec<ScoredDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Vec<(String, f64)>>,
}

/// `dot(u, v) / (|u| |v|)`, accumulated in f64.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm("cosine operand"));
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Score-descending, then id-ascending.
pub fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

struct Candidate<'a> {
    id: &'a str,
    score: f64,
}

// Heap order: the greatest element is the worst-ranked candidate.
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order((self.id, self.score), (other.id, other.score))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

fn scores<'a>(
    store: &'a EmbeddingStore,
    q: &'a [f32],
) -> Result<impl Iterator<Item = Result<(&'a str, f64)>> + 'a> {
    if q.len() != store.dim() {
        return Err(Error::DimMismatch {
            expected: store.dim(),
            got: q.len(),
        });
    }
    Ok(store.rows().map(move |(id, row)| cosine(q, row).map(|s| (id, s))))
}

/// Linear scan with a bounded selection heap. Returns `min(k, count)` hits.
pub fn top_k(store: &EmbeddingStore, q: &[f32], k: usize) -> Result<Vec<ScoredDoc>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k.min(store.len()) + 1);
    for item in scores(store, q)? {
        let (id, score) = item?;
        let cand = Candidate { id, score };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand < *worst {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .enumerate()
        .map(|(i, c)| ScoredDoc {
            id: c.id.to_owned(),
            score: c.score,
            rank: i + 1,
        })
        .collect())
}

/// `p(d|q) = exp(sim(q,d)) / sum_i exp(sim(q,d_i))` over the whole store,
/// in top-k order.
pub fn retrieval_distribution(store: &EmbeddingStore, q: &[f32]) -> Result<Vec<(String, f64)>> {
    if store.is_empty() {
        return Err(Error::InvalidArgument(
            "retrieval distribution of an empty store".into(),
        ));
    }
    let mut scored = scores(store, q)?.collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| rank_order(*a, *b));
    let max = scored[0].1;
    let weights: Vec<f64> = scored.iter().map(|(_, s)| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(scored
        .into_iter()
        .zip(weights)
        .map(|((id, _), w)| (id.to_owned(), w / z))
        .collect())
}

/// Encodes `q`, optionally projects it through `head`, and searches `store`.
///
/// When a head is given, `store` must already hold head-projected rows (see
/// [`ProjectionHead::project_store`]).
pub fn retrieve(
    store: &EmbeddingStore,
    encoder: &dyn Encoder,
    head: Option<&ProjectionHead>,
    query_id: &str,
    q: &UnifiedQuery,
    k: usize,
) -> Result<(RetrievalResult, Duration)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let start = Instant::now();
    let mut v = encoder.encode(q)?;
    if let Some(h) = head {
        v = h.apply(&v)?;
    }
    let hits = top_k(store, v.as_slice(), k)?;
    let elapsed = start.elapsed();
    Ok((
        RetrievalResult {
            query_id: query_id.to_owned(),
            hits,
            distribution: None,
        },
        elapsed,
    ))
}

/// Attaches the full-corpus distribution to a result.
pub fn with_distribution(
    mut result: RetrievalResult,
    store: &EmbeddingStore,
    q: &EmbeddingVector,
) -> Result<RetrievalResult> {
    result.distribution = Some(retrieval_distribution(store, q.as_slice())?);
    Ok(result)
}

/// One TREC run line: `query_id Q0 doc_id rank score run_tag`.
pub fn format_run_line(query_id: &str, hit: &ScoredDoc, run_tag: &str) -> String {
    format!("{query_id} Q0 {} {} {:.6} {run_tag}", hit.id, hit.rank, hit.score)
}

pub fn write_run<W: Write + ?Sized>(out: &mut W, result: &RetrievalResult, run_tag: &str) -> std::io::Result<()> {
    for hit in &result.hits {
        writeln!(out, "{}", format_run_line(&result.query_id, hit, run_tag))?;
    }
    Ok(())
}
