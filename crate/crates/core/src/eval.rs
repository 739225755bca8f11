//! Retrieval and generation metrics over TREC run files, qrels, and answer
//! records.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rag::{GenerateRequest, Generator};

pub type Qrels = BTreeMap<String, BTreeSet<String>>;

fn check_args(relevant_len: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if relevant_len == 0 {
        return Err(Error::InvalidArgument("relevant set is empty".into()));
    }
    Ok(())
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> Result<f64> {
    check_args(relevant.len(), k)?;
    let mut seen = HashSet::new();
    let found = ranked
        .iter()
        .take(k)
        .map(AsRef::as_ref)
        .filter(|d| relevant.contains(*d) && seen.insert(*d))
        .count();
    Ok(found as f64 / relevant.len() as f64)
}

/// Binary-relevance nDCG with gain `1 / log2(i + 1)` at 1-based rank `i`.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> Result<f64> {
    check_args(relevant.len(), k)?;
    let discount = |i: usize| 1.0 / ((i + 1) as f64).log2();
    let mut seen = HashSet::new();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .map(AsRef::as_ref)
        .enumerate()
        .filter(|(_, d)| relevant.contains(*d) && seen.insert(*d))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    Ok(dcg / idcg)
}

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match<S: AsRef<str>>(prediction: &str, gold: &[S]) -> u8 {
    let p = normalize_answer(prediction);
    u8::from(gold.iter().any(|g| normalize_answer(g.as_ref()) == p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Arithmetic mean and nearest-rank percentiles.
pub fn latency_stats(samples: &[f64]) -> Result<LatencyStats> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no latency samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nearest_rank = |p: f64| {
        let r = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
        sorted[r.clamp(1, sorted.len()) - 1]
    };
    Ok(LatencyStats {
        mean: samples.iter().sum::<f64>() / samples.len() as f64,
        p50: nearest_rank(50.0),
        p95: nearest_rank(95.0),
    })
}

/// Parses TREC qrels lines `query_id 0 doc_id rel`; only `rel > 0` counts.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::Parse {
                line: i + 1,
                detail: format!("qrels line needs 4 fields, found {}", f.len()),
            });
        }
        let rel: i64 = f[3].parse().map_err(|_| Error::Parse {
            line: i + 1,
            detail: format!("relevance {:?} is not an integer", f[3]),
        })?;
        let docs = qrels.entry(f[0].to_owned()).or_default();
        if rel > 0 {
            docs.insert(f[2].to_owned());
        }
    }
    Ok(qrels)
}

/// Parses TREC run lines `query_id Q0 doc_id rank score run_tag` into
/// per-query rankings ordered by the rank column.
pub fn parse_run(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut by_query: BTreeMap<String, Vec<(u64, String)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::Parse {
                line: i + 1,
                detail: format!("run line needs 6 fields, found {}", f.len()),
            });
        }
        let rank: u64 = f[3].parse().map_err(|_| Error::Parse {
            line: i + 1,
            detail: format!("rank {:?} is not an integer", f[3]),
        })?;
        f[4].parse::<f64>().map_err(|_| Error::Parse {
            line: i + 1,
            detail: format!("score {:?} is not a number", f[4]),
        })?;
        by_query
            .entry(f[0].to_owned())
            .or_default()
            .push((rank, f[2].to_owned()));
    }
    Ok(by_query
        .into_iter()
        .map(|(q, mut docs)| {
            docs.sort();
            (q, docs.into_iter().map(|(_, d)| d).collect())
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_10: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ndcg_10: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: BTreeMap<String, QueryMetrics>,
    /// Means over evaluated queries only.
    pub mean: QueryMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
    pub evaluated: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    fn finish(mut self) -> Result<Self> {
        if self.queries.is_empty() {
            return Err(Error::InvalidArgument("no queries".into()));
        }
        let q = || self.queries.values();
        self.mean = QueryMetrics {
            recall_1: mean_of(q().map(|m| m.recall_1)),
            recall_5: mean_of(q().map(|m| m.recall_5)),
            recall_10: mean_of(q().map(|m| m.recall_10)),
            ndcg_10: mean_of(q().map(|m| m.ndcg_10)),
            em: mean_of(q().map(|m| m.em)),
            latency_s: mean_of(q().map(|m| m.latency_s)),
        };
        let lat: Vec<f64> = q().filter_map(|m| m.latency_s).collect();
        self.latency = if lat.is_empty() { None } else { Some(latency_stats(&lat)?) };
        self.evaluated = self.queries.len();
        Ok(self)
    }

    /// Adds per-query latencies (seconds) and recomputes the means.
    pub fn with_latencies(mut self, latencies: &BTreeMap<String, f64>) -> Result<Self> {
        for (q, m) in self.queries.iter_mut() {
            if let Some(&s) = latencies.get(q) {
                m.latency_s = Some(s);
            }
        }
        self.finish()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let cols: [(&str, fn(&QueryMetrics) -> Option<f64>); 6] = [
            ("R@1", |m| m.recall_1),
            ("R@5", |m| m.recall_5),
            ("R@10", |m| m.recall_10),
            ("nDCG@10", |m| m.ndcg_10),
            ("EM", |m| m.em),
            ("Time(s)", |m| m.latency_s),
        ];
        let shown: Vec<_> = cols.iter().filter(|(_, f)| f(&self.mean).is_some()).collect();
        let width = self.queries.keys().map(String::len).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}", "query");
        for (name, _) in &shown {
            let _ = write!(s, " {name:>9}");
        }
        s.push('\n');
        let row = |s: &mut String, label: &str, m: &QueryMetrics| {
            let _ = write!(s, "{label:<width$}");
            for (_, f) in &shown {
                match f(m) {
                    Some(v) => {
                        let _ = write!(s, " {v:>9.4}");
                    }
                    None => {
                        let _ = write!(s, " {:>9}", "-");
                    }
                }
            }
            s.push('\n');
        };
        for (q, m) in &self.queries {
            row(&mut s, q, m);
        }
        row(&mut s, "mean", &self.mean);
        s
    }
}

/// Per-query R@1/5/10 and nDCG@10. Run queries absent from the qrels, or
/// with no relevant documents, are skipped with a warning.
pub fn evaluate_run(run: &BTreeMap<String, Vec<String>>, qrels: &Qrels) -> Result<MetricReport> {
    if run.is_empty() {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    let mut report = MetricReport::default();
    for (q, ranked) in run {
        let Some(rel) = qrels.get(q).filter(|r| !r.is_empty()) else {
            log::warn!("query {q:?} has no relevant documents in qrels; skipped");
            report.skipped.push(q.clone());
            continue;
        };
        report.queries.insert(
            q.clone(),
            QueryMetrics {
                recall_1: Some(recall_at_k(ranked, rel, 1)?),
                recall_5: Some(recall_at_k(ranked, rel, 5)?),
                recall_10: Some(recall_at_k(ranked, rel, 10)?),
                ndcg_10: Some(ndcg_at_k(ranked, rel, 10)?),
                ..QueryMetrics::default()
            },
        );
    }
    report.finish()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn evaluate_run_files(run_path: &Path, qrels_path: &Path) -> Result<MetricReport> {
    let run = parse_run(&read(run_path)?)?;
    let qrels = parse_qrels(&read(qrels_path)?)?;
    evaluate_run(&run, &qrels)
}

/// Latency sidecar lines: `{"query_id": str, "seconds": float}`.
pub fn parse_latencies(text: &str) -> Result<BTreeMap<String, f64>> {
    #[derive(Deserialize)]
    struct Line {
        query_id: String,
        seconds: f64,
    }
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let l: Line = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.insert(l.query_id, l.seconds);
    }
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
struct AnswerLine {
    query_id: String,
    final_answer: String,
    #[serde(default)]
    timings: Option<crate::engine::Timings>,
}

#[derive(Debug, Clone, Deserialize)]
struct GoldLine {
    query_id: String,
    answers: Vec<String>,
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

/// EM and end-to-end latency over answer records (JSONL) against gold
/// answers (`{"query_id": str, "answers": [str]}` per line).
pub fn evaluate_answers(answers_text: &str, gold_text: &str) -> Result<MetricReport> {
    let answers: Vec<AnswerLine> = parse_jsonl(answers_text)?;
    if answers.is_empty() {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    let gold: BTreeMap<String, Vec<String>> = parse_jsonl::<GoldLine>(gold_text)?
        .into_iter()
        .map(|g| (g.query_id, g.answers))
        .collect();
    let mut report = MetricReport::default();
    for a in answers {
        let Some(g) = gold.get(&a.query_id).filter(|g| !g.is_empty()) else {
            log::warn!("query {:?} has no gold answer; skipped", a.query_id);
            report.skipped.push(a.query_id);
            continue;
        };
        report.queries.insert(
            a.query_id,
            QueryMetrics {
                em: Some(f64::from(exact_match(&a.final_answer, g))),
                latency_s: a.timings.map(|t| t.total_s()),
                ..QueryMetrics::default()
            },
        );
    }
    report.finish()
}

pub fn evaluate_answer_files(answers_path: &Path, gold_path: &Path) -> Result<MetricReport> {
    evaluate_answers(&read(answers_path)?, &read(gold_path)?)
}

/// Hook for an external factuality judge. Long-form judging is not built in;
/// implementations return a score in [0, 1].
pub trait Judge: Send + Sync {
    fn score(&self, question: &str, answer: &str, evidence: &[String]) -> Result<f64>;
}

/// Judge reached over the generator wire protocol: the judging prompt goes
/// out as a one-sample generation and the first number in the reply is the
/// score.
pub struct GeneratorJudge<G> {
    pub generator: G,
}

impl<G: Generator> Judge for GeneratorJudge<G> {
    fn score(&self, question: &str, answer: &str, evidence: &[String]) -> Result<f64> {
        let mut prompt = String::from("Rate the fraction of factual claims in the answer that the evidence supports, as a number between 0 and 1.\n\n");
        for (i, e) in evidence.iter().enumerate() {
            let _ = writeln!(prompt, "[Evidence {}]\n{e}\n", i + 1);
        }
        let _ = write!(prompt, "Question: {question}\nAnswer: {answer}\nScore:");
        let reply = self
            .generator
            .generate(&GenerateRequest {
                prompt,
                audio_refs: Vec::new(),
                n: 1,
                temperature: 0.0,
            })?
            .into_iter()
            .next()
            .unwrap_or_default();
        let num: String = reply
            .trim_start_matches(|c: char| !(c.is_ascii_digit() || c == '.'))
            .chars()
            .take_while(|c| c.is_ascii_digit() || *c == '.')
            .collect();
        num.parse::<f64>()
            .map(|v| v.clamp(0.0, 1.0))
            .map_err(|_| Error::GeneratorUnavailable(format!("judge reply has no score: {reply:?}")))
    }
}
