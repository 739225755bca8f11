//! Test support: independent reference implementations ("oracles") and
//! fixture builders. Nothing here calls into the library's algorithms; the
//! oracles are deliberately naive so they can be checked by eye.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub const INSTRUCTION: &str = "Given a question, retrieve relevant documents that best answer the question.";
pub const SYSTEM_TEXT: &str = "Answer the question using the knowledge provided below. \
Finish with a final line of the form \"Answer: <answer>\".";
pub const MAGIC: &str = "Let's think step-by-step";

// ---------------------------------------------------------------- hashing

pub fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 14695981039346656037;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    h
}

pub fn template(instruction: &str, text: &str) -> String {
    format!("Instruction: {instruction} Query: {text}")
}

/// Reference toy encoder: token hash votes plus per-frame RMS, normalized.
pub fn oracle_toy(dim: usize, rendered: &str, audio: Option<&[f64]>) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for tok in rendered.to_lowercase().split_ascii_whitespace() {
        let h = fnv(tok.as_bytes());
        v[((h / 2) % dim as u64) as usize] += if h % 2 == 0 { 1.0 } else { -1.0 };
    }
    if let Some(x) = audio {
        if !x.is_empty() {
            let len = (x.len() + dim - 1) / dim;
            for j in 0..dim {
                let mut e = 0.0;
                for i in j * len..(j + 1) * len {
                    let s = if i < x.len() { x[i] } else { 0.0 };
                    e += s * s;
                }
                v[j] += (e / len as f64).sqrt();
            }
        }
    }
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n == 0.0 {
        let mut e0 = vec![0.0; dim];
        e0[0] = 1.0;
        return e0;
    }
    v.iter().map(|a| a / n).collect()
}

// ---------------------------------------------------------------- ranking

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine64(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Scores every row, sorts everything (score desc, id asc), keeps k.
pub fn brute_force_topk(rows: &[(String, Vec<f64>)], q: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = rows.iter().map(|(id, r)| (id.clone(), cosine64(r, q))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

// ---------------------------------------------------------------- prompts

pub fn render_prompt(blocks: &[&str], question: &str, cot: bool) -> String {
    let mut s = format!("{SYSTEM_TEXT}\n\n");
    for (i, b) in blocks.iter().enumerate() {
        s += &format!("[Knowledge {}]\n{}\n\n", i + 1, b);
    }
    s += &format!("Question: {question}");
    if cot {
        s += &format!("\n{MAGIC}");
    }
    s
}

pub fn render_usc(question: &str, chains: &[&str]) -> String {
    let mut s = format!("I have generated the following responses to the question: {question}\n\n");
    for (i, c) in chains.iter().enumerate() {
        s += &format!("Response {}:\n{}\n\n", i + 1, c);
    }
    s + "Evaluate these responses.\nSelect the most consistent response based on majority consensus.\nReply with the number of the selected response only."
}

pub fn hash_hex(prompt: &str) -> String {
    format!("{:016x}", fnv(prompt.as_bytes()))
}

// ---------------------------------------------------------------- audio

pub fn tone(freq: f64, secs: f64, rate: u32, amp: f64) -> Vec<f64> {
    let n = (secs * rate as f64).round() as usize;
    (0..n)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
        .collect()
}

/// Samples as they come back from a PCM-16 round trip.
pub fn quantize(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|s| (s.clamp(-1.0, 1.0) * 32767.0).round() / 32768.0)
        .collect()
}

pub fn write_pcm16(path: &Path, x: &[f64], rate: u32) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for s in x {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).unwrap();
    }
    w.finalize().unwrap();
}

/// xorshift64*: a tiny deterministic generator independent of the library's.
pub struct Xs(pub u64);

impl Xs {
    pub fn next_u64(&mut self) -> u64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        self.0.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform in [-1, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }
}

// ---------------------------------------------------------------- metrics

pub struct MetricFixture {
    pub run: String,
    pub qrels: String,
    /// (query, recall@1, recall@5, recall@10, ndcg@10), worked out by hand.
    pub table: Vec<(&'static str, f64, f64, f64, f64)>,
    pub answers: String,
    pub gold: String,
}

/// (prediction, gold answers, EM) for q01..q10; mean EM is 0.7.
pub const EM_CASES: [(&str, &[&str], u8); 10] = [
    ("Paris", &["Paris"], 1),
    ("The Eiffel Tower!", &["eiffel tower"], 1),
    ("Paris, France", &["Paris"], 0),
    ("an apple", &["Apple"], 1),
    ("42", &["forty-two", "42"], 1),
    ("  New   York ", &["new york"], 1),
    ("Shakespeare", &["William Shakespeare"], 0),
    ("Mount Everest.", &["Everest"], 0),
    ("Jupiter", &["jupiter"], 1),
    ("1,600", &["1600"], 1),
];

/// Ten queries; `n*` ids are never relevant. Query i's answer takes
/// i/10 seconds, so latency mean is 0.55, p50 0.5 and p95 1.0.
pub fn metric_fixture() -> MetricFixture {
    let rankings: [(&str, &[&str], &[&str]); 10] = [
        ("q01", &["d1"], &["d1", "n1", "n2"]),
        ("q02", &["d1"], &["n1", "n2", "d1"]),
        ("q03", &["d1", "d2"], &["d1", "n1", "n2", "n3", "n4", "n5", "n6", "n7", "n8", "n9", "n10", "d2"]),
        ("q04", &["d1"], &["n1", "n2", "n3", "n4", "n5", "n6", "n7", "n8", "n9", "n10", "d1"]),
        ("q05", &["d1", "d2", "d3"], &["d2", "d3", "d1"]),
        ("q06", &["d1"], &["n1", "d1"]),
        ("q07", &["d1", "d2"], &["n1", "n2", "n3", "n4", "n5", "d1", "n6", "n7", "n8", "d2"]),
        ("q08", &["d1"], &["n1", "n2", "n3", "n4", "d1"]),
        ("q09", &["d1", "d2"], &["d2", "n1", "d1"]),
        ("q10", &["d1"], &["n1", "n2", "n3", "n4", "n5", "n6", "n7", "n8", "n9", "d1"]),
    ];
    let mut qrels = String::new();
    let mut run = String::new();
    for (q, rel, ranked) in rankings {
        for d in rel {
            qrels += &format!("{q} 0 {d} 1\n");
        }
        qrels += &format!("{q} 0 n1 0\n");
        for (i, d) in ranked.iter().enumerate() {
            run += &format!("{q} Q0 {d} {} {:.6} fixture\n", i + 1, 10.0 - i as f64 * 0.5);
        }
    }
    let l = |i: f64| 1.0 / (i + 1.0).log2();
    let ideal2 = l(1.0) + l(2.0);
    let table = vec![
        ("q01", 1.0, 1.0, 1.0, 1.0),
        ("q02", 0.0, 1.0, 1.0, l(3.0)),
        ("q03", 0.5, 0.5, 0.5, 1.0 / ideal2),
        ("q04", 0.0, 0.0, 0.0, 0.0),
        ("q05", 1.0 / 3.0, 1.0, 1.0, 1.0),
        ("q06", 0.0, 1.0, 1.0, l(2.0)),
        ("q07", 0.0, 0.0, 1.0, (l(6.0) + l(10.0)) / ideal2),
        ("q08", 0.0, 1.0, 1.0, l(5.0)),
        ("q09", 0.5, 1.0, 1.0, (1.0 + l(3.0)) / ideal2),
        ("q10", 0.0, 0.0, 1.0, l(10.0)),
    ];
    let (mut answers, mut gold) = (String::new(), String::new());
    for (i, (pred, golds, _)) in EM_CASES.iter().enumerate() {
        let qid = format!("q{:02}", i + 1);
        let secs = (i + 1) as f64 / 10.0;
        answers += &format!(
            "{}\n",
            serde_json::json!({"query_id": qid, "final_answer": pred,
                "timings": {"retrieval_s": secs, "generation_s": 0.0, "selection_s": 0.0}})
        );
        gold += &format!("{}\n", serde_json::json!({"query_id": qid, "answers": golds}));
    }
    MetricFixture { run, qrels, table, answers, gold }
}

// ---------------------------------------------------------------- goldens

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

/// Compares against a frozen file. With `AUDIORAG_BLESS=1` the file is
/// (re)written instead; bless only from a verified oracle.
pub fn golden_bytes(name: &str, actual: &[u8]) {
    let path = fixtures_dir().join(name);
    if std::env::var_os("AUDIORAG_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("golden {name}: {e}"));
    assert!(expected == actual, "golden {name} differs from actual output");
}

pub fn golden(name: &str, actual: &str) {
    golden_bytes(name, actual.as_bytes())
}

// ---------------------------------------------------------------- smoke KB

pub struct SmokeEntry {
    pub id: &'static str,
    pub modality: &'static str,
    pub text: Option<&'static str>,
    pub audio: Option<&'static str>,
}

pub const SMOKE_DIM: usize = 256;
pub const SMOKE_RATE: u32 = 8000;

pub fn smoke_entries() -> Vec<SmokeEntry> {
    let t = |id, text| SmokeEntry { id, modality: "text", text: Some(text), audio: None };
    let a = |id, audio| SmokeEntry { id, modality: "audio", text: None, audio: Some(audio) };
    let at = |id, text, audio| SmokeEntry { id, modality: "audio_text", text: Some(text), audio: Some(audio) };
    vec![
        t("doc-paris", "Paris is the capital city of France and sits on the Seine"),
        t("doc-tokyo", "Tokyo is the capital of Japan and its largest metropolis"),
        t("doc-nile", "The Nile is the longest river in Africa flowing north to the Mediterranean"),
        t("doc-everest", "Mount Everest is the highest mountain above sea level in the Himalayas"),
        t("doc-hamlet", "Hamlet is a tragedy written by William Shakespeare around 1600"),
        t("doc-water", "Water boils at one hundred degrees Celsius at sea level"),
        t("doc-moon", "The Moon orbits the Earth roughly every twenty seven days"),
        t("doc-piano", "A piano has eighty eight keys spanning seven octaves"),
        t("doc-python", "Python is a programming language created by Guido van Rossum"),
        t("doc-jupiter", "Jupiter is the largest planet in the solar system"),
        a("aud-bird", "bird.wav"),
        a("aud-bell", "bell.wav"),
        a("aud-drum", "drum.wav"),
        a("aud-hum", "hum.wav"),
        a("aud-siren", "siren.wav"),
        at("at-violin", "Recording of a violin playing an A note at 440 hertz", "violin.wav"),
        at("at-thunder", "Thunder recorded during a summer storm", "thunder.wav"),
        at("at-train", "A steam train whistle recorded at a station", "train.wav"),
        at("at-owl", "Call of a tawny owl at night", "owl.wav"),
        at("at-rain", "Rain falling on a tin roof", "rain.wav"),
    ]
}

/// Deterministic synthetic clip for each fixture file name.
pub fn smoke_clip(name: &str) -> Vec<f64> {
    let r = SMOKE_RATE;
    let env = |x: Vec<f64>, f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        let n = x.len() as f64;
        x.iter().enumerate().map(|(i, s)| s * f(i as f64 / n)).collect()
    };
    match name {
        "bird.wav" => env(tone(3000.0, 0.3, r, 0.5), &|t| (t * 40.0).sin().abs()),
        "bell.wav" => env(tone(880.0, 0.5, r, 0.8), &|t| (-6.0 * t).exp()),
        "drum.wav" => env(tone(120.0, 0.4, r, 0.9), &|t| if (t * 8.0).fract() < 0.2 { 1.0 } else { 0.05 }),
        "hum.wav" => tone(60.0, 0.5, r, 0.2),
        "siren.wav" => env(tone(700.0, 0.5, r, 0.6), &|t| 0.5 + 0.5 * (t * 12.0).sin()),
        "violin.wav" => tone(440.0, 0.5, r, 0.4),
        "thunder.wav" => {
            let mut g = Xs(0x7407);
            env((0..4000).map(|_| g.unit() * 0.7).collect(), &|t| (-3.0 * t).exp())
        }
        "train.wav" => env(tone(1200.0, 0.6, r, 0.5), &|t| t.min(1.0 - t) * 2.0),
        "owl.wav" => env(tone(500.0, 0.4, r, 0.5), &|t| if t < 0.3 || t > 0.6 { 1.0 } else { 0.0 }),
        "rain.wav" => {
            let mut g = Xs(0x4a17);
            (0..4000).map(|_| g.unit() * 0.15).collect()
        }
        other => panic!("no clip {other}"),
    }
}

pub struct SmokeQuery {
    pub id: &'static str,
    pub text: Option<&'static str>,
    pub audio: Option<&'static str>,
    /// Entry the fixture is built around; the oracle must rank it first.
    pub target: &'static str,
    pub expected: &'static str,
    pub completions: [&'static str; 3],
    pub selector_reply: &'static str,
}

pub fn smoke_queries() -> Vec<SmokeQuery> {
    vec![
        SmokeQuery {
            id: "q1",
            text: Some("what is the capital city of France"),
            audio: None,
            target: "doc-paris",
            expected: "Paris",
            completions: [
                "Knowledge 1 says Paris is the capital city of France.\nAnswer: Paris",
                "The first passage names the capital.\nAnswer: Paris",
                "Tokyo is a capital too, but of Japan.\nAnswer: Tokyo",
            ],
            selector_reply: "1",
        },
        SmokeQuery {
            id: "q2",
            text: Some("Hamlet was written by which playwright"),
            audio: None,
            target: "doc-hamlet",
            expected: "William Shakespeare",
            completions: [
                "Hamlet is attributed to a playwright.\nAnswer: Christopher Marlowe",
                "The knowledge states it was written by William Shakespeare.\nAnswer: William Shakespeare",
                "Shakespeare wrote it around 1600.\nAnswer: William Shakespeare",
            ],
            selector_reply: "Response 2 is the most consistent.",
        },
        SmokeQuery {
            id: "q3",
            text: Some("which planet is the largest in the solar system"),
            audio: None,
            target: "doc-jupiter",
            expected: "Jupiter",
            completions: [
                "Jupiter is the largest planet.\nAnswer: Jupiter",
                "Knowledge 1 mentions Jupiter.\nAnswer: Jupiter",
                "Saturn has rings.\nAnswer: Saturn",
            ],
            selector_reply: "Response 1 is the most consistent",
        },
        SmokeQuery {
            id: "q4",
            text: None,
            audio: Some("bell.wav"),
            target: "aud-bell",
            expected: "church bell",
            completions: [
                "The clip decays like a struck bell.\nAnswer: church bell",
                "A metallic ring.\nAnswer: gong",
                "It rings and fades.\nAnswer: church bell",
            ],
            selector_reply: "they all sound plausible",
        },
        SmokeQuery {
            id: "q5",
            text: Some("which instrument is playing this A note"),
            audio: Some("violin.wav"),
            target: "at-violin",
            expected: "violin",
            completions: [
                "A steady 440 hertz bowed tone.\nAnswer: violin",
                "Knowledge 1 describes a violin.\nAnswer: violin",
                "Could be a flute.\nAnswer: flute",
            ],
            selector_reply: "2",
        },
    ]
}

pub struct SmokeFixture {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub kb_dir: PathBuf,
    pub queries_file: PathBuf,
    pub script: PathBuf,
    /// TOML config pointing at `kb_dir` with the fixture's encoder dim.
    pub config: PathBuf,
}

/// Oracle view of the smoke corpus: (id, oracle vector, text).
pub fn smoke_oracle_rows(root: &Path) -> Vec<(String, Vec<f64>, String)> {
    smoke_entries()
        .into_iter()
        .map(|e| {
            let audio = e.audio.map(|a| quantize(&smoke_clip(a)));
            let _ = root;
            let v = oracle_toy(SMOKE_DIM, &template(INSTRUCTION, e.text.unwrap_or("")), audio.as_deref());
            (e.id.to_string(), v, e.text.unwrap_or("").to_string())
        })
        .collect()
}

/// Writes clips, manifest, queries and the scripted-generator file under
/// `root`. The script is keyed by prompts rendered from the oracle ranking,
/// so a pipeline that retrieves or renders differently finds no completion.
pub fn build_smoke(root: &Path, k: usize) -> SmokeFixture {
    let audio_dir = root.join("audio");
    std::fs::create_dir_all(&audio_dir).unwrap();
    let mut manifest = String::new();
    for e in smoke_entries() {
        let mut line = serde_json::json!({"id": e.id, "modality": e.modality});
        if let Some(t) = e.text {
            line["text"] = t.into();
        }
        if let Some(a) = e.audio {
            write_pcm16(&audio_dir.join(a), &smoke_clip(a), SMOKE_RATE);
            line["audio_path"] = format!("audio/{a}").into();
        }
        manifest += &format!("{line}\n");
    }
    let manifest_path = root.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest).unwrap();

    let rows = smoke_oracle_rows(root);
    let rank_rows: Vec<(String, Vec<f64>)> = rows.iter().map(|(id, v, _)| (id.clone(), v.clone())).collect();
    let text_of = |id: &str| rows.iter().find(|r| r.0 == id).unwrap().2.clone();

    let mut script = serde_json::Map::new();
    let mut queries = String::new();
    for q in smoke_queries() {
        let audio = q.audio.map(|a| quantize(&smoke_clip(a)));
        let qv = oracle_toy(SMOKE_DIM, &template(INSTRUCTION, q.text.unwrap_or("")), audio.as_deref());
        let hits = brute_force_topk(&rank_rows, &qv, k);
        assert_eq!(hits[0].0, q.target, "fixture query {} must rank its target first", q.id);
        let blocks: Vec<String> = hits.iter().map(|(id, _)| text_of(id)).collect();
        let block_refs: Vec<&str> = blocks.iter().map(String::as_str).collect();
        let question = q.text.unwrap_or("");
        let prompt = render_prompt(&block_refs, question, true);
        script.insert(hash_hex(&prompt), serde_json::json!(q.completions));
        let usc = render_usc(question, &q.completions);
        script.insert(hash_hex(&usc), serde_json::json!([q.selector_reply]));

        let mut line = serde_json::json!({"query_id": q.id});
        if let Some(t) = q.text {
            line["text"] = t.into();
        }
        if let Some(a) = q.audio {
            line["audio_path"] = format!("audio/{a}").into();
        }
        queries += &format!("{line}\n");
    }
    let script_path = root.join("script.json");
    std::fs::write(&script_path, serde_json::to_string_pretty(&script).unwrap()).unwrap();
    let queries_file = root.join("queries.jsonl");
    std::fs::write(&queries_file, queries).unwrap();
    let config = root.join("audiorag.toml");
    let kb_dir = root.join("kb");
    std::fs::write(
        &config,
        format!("kb_dir = {:?}\nencoder = \"toy\"\nencoder_dim = {SMOKE_DIM}\n", kb_dir.to_str().unwrap()),
    )
    .unwrap();
    SmokeFixture {
        config,
        root: root.to_path_buf(),
        manifest: manifest_path,
        kb_dir: root.join("kb"),
        queries_file,
        script: script_path,
    }
}

/// Runs the CLI in-process and returns (exit code, stdout, stderr).
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = audiorag::cli::run(std::iter::once("audiorag").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
