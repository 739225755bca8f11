mod common;

use std::sync::Arc;
use std::time::Duration;

use audiorag::config::ConfigLayers;
use audiorag::encoder::{EncoderBackend, UnifiedQuery};
use audiorag::engine::{embed_knowledge_base, AnswerOptions, Engine};
use audiorag::kb::{ingest_manifest, KnowledgeBase};
use audiorag::rag::{GeneratorBackend, SelectionMethod};
use audiorag::retrieval::format_run_line;
use audiorag::service::{self, ServiceOptions};
use audiorag::store::{write_store, EmbeddingStore, EmbeddingVector};
use audiorag::Error;
use axum::routing::post;
use axum::{Json, Router};
use common::*;
use serde_json::{json, Value};

fn smoke_engine(dir: &std::path::Path) -> (SmokeFixture, Engine) {
    let fx = build_smoke(dir, 3);
    let report = ingest_manifest(&fx.manifest, &fx.kb_dir).unwrap();
    assert_eq!(report.accepted, 20);
    let enc = EncoderBackend::Toy { dim: SMOKE_DIM, seed: 0 }.build().unwrap();
    embed_knowledge_base(&fx.kb_dir, enc.as_ref(), INSTRUCTION).unwrap();
    let mut layers = ConfigLayers::new();
    layers.file(&fx.config).unwrap();
    layers.set("generator", "scripted").unwrap();
    layers.set("generator_script", p(&fx.script)).unwrap();
    let engine = Engine::load(&layers.build().unwrap()).unwrap();
    (fx, engine)
}

fn smoke_query(root: &std::path::Path, q: &SmokeQuery) -> UnifiedQuery {
    UnifiedQuery::new(
        INSTRUCTION,
        q.text.map(str::to_owned),
        q.audio.map(|a| audiorag::encoder::AudioInput::Path(root.join("audio").join(a))),
    )
    .unwrap()
}

#[test]
fn smoke_answers_match_script_and_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (fx, engine) = smoke_engine(dir.path());
    let opts = AnswerOptions { k: 3, n_samples: 3, cot: true, temperature: 0.7 };
    let run = || -> Vec<String> {
        smoke_queries()
            .iter()
            .map(|q| {
                let rec = engine.answer(q.id, &smoke_query(&fx.root, q), &opts).unwrap();
                assert_eq!(rec.final_answer, q.expected, "query {}", q.id);
                serde_json::to_string(&rec.without_timings()).unwrap()
            })
            .collect()
    };
    let first = run();
    assert_eq!(first, run());
    golden("smoke_answers.jsonl", &(first.join("\n") + "\n"));
}

#[test]
fn selection_paths_in_smoke_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (fx, engine) = smoke_engine(dir.path());
    let opts = AnswerOptions { k: 3, n_samples: 3, cot: true, temperature: 0.7 };
    let methods: Vec<SelectionMethod> = smoke_queries()
        .iter()
        .map(|q| engine.answer(q.id, &smoke_query(&fx.root, q), &opts).unwrap().method)
        .collect();
    use SelectionMethod::*;
    assert_eq!(methods, vec![Usc, Usc, Usc, MajorityFallback, Usc]);
}

#[test]
fn answer_errors_carry_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (fx, engine) = smoke_engine(dir.path());
    // An unscripted prompt: generation fails, nothing partial comes back.
    let q = UnifiedQuery::text(INSTRUCTION, "an unscripted question").unwrap();
    let err = engine.answer("qx", &q, &AnswerOptions::default()).unwrap_err();
    assert_eq!(err.stage(), Some(audiorag::error::Stage::Generation));
    assert!(err.is_unavailable());
    // A missing audio file fails in retrieval.
    let q = UnifiedQuery::audio_file(INSTRUCTION, fx.root.join("nope.wav")).unwrap();
    let err = engine.answer("qy", &q, &AnswerOptions::default()).unwrap_err();
    assert_eq!(err.stage(), Some(audiorag::error::Stage::Retrieval));
}

#[test]
fn cli_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let fx = build_smoke(dir.path(), 3);
    let kb = p(&fx.kb_dir);
    let cfg = p(&fx.config);

    let (code, out, err) = cli(&["ingest", "--manifest", p(&fx.manifest), "--kb", kb]);
    assert_eq!(code, 0, "{err}");
    let report: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(report["accepted"], 20);

    let (code, out, err) = cli(&["embed", "--config", cfg]);
    assert_eq!(code, 0, "{err}");
    let meta: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(meta["count"], 20);
    assert_eq!(meta["instruction"], INSTRUCTION);

    // Three TREC lines for a text query, matching the oracle ranking.
    let (code, out, err) = cli(&["retrieve", "--config", cfg, "--query-text", "what is the capital of France", "--k", "3"]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    let rows: Vec<(String, Vec<f64>)> =
        smoke_oracle_rows(&fx.root).into_iter().map(|(id, v, _)| (id, v)).collect();
    let qv = oracle_toy(SMOKE_DIM, &template(INSTRUCTION, "what is the capital of France"), None);
    for (line, (rank, (id, score))) in lines.iter().zip(brute_force_topk(&rows, &qv, 3).into_iter().enumerate()) {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!((f[0], f[1], f[2], f[3], f[5]), ("q1", "Q0", id.as_str(), (rank + 1).to_string().as_str(), "audiorag"));
        assert!((f[4].parse::<f64>().unwrap() - score).abs() < 2e-6);
    }
    golden("cli_retrieve_capital.txt", &out);

    // Batch retrieval with a latency sidecar, then evaluation.
    let run = dir.path().join("run.txt");
    let lat = dir.path().join("lat.jsonl");
    let (code, out, err) = cli(&[
        "retrieve", "--config", cfg, "--queries", p(&fx.queries_file), "--k", "10", "--latency-out", p(&lat),
    ]);
    assert_eq!(code, 0, "{err}");
    std::fs::write(&run, &out).unwrap();
    let qrels = dir.path().join("qrels.txt");
    let qrels_body: String = smoke_queries().iter().map(|q| format!("{} 0 {} 1\n", q.id, q.target)).collect();
    std::fs::write(&qrels, qrels_body).unwrap();
    let (code, out, err) = cli(&["eval-retrieval", "--run", p(&run), "--qrels", p(&qrels), "--latencies", p(&lat)]);
    assert_eq!(code, 0, "{err}");
    let lib = audiorag::eval::evaluate_run_files(&run, &qrels)
        .unwrap()
        .with_latencies(&audiorag::eval::parse_latencies(&std::fs::read_to_string(&lat).unwrap()).unwrap())
        .unwrap();
    assert_eq!(out.trim(), lib.to_json());
    assert_eq!(lib.mean.recall_1, Some(1.0));
    assert!(lib.latency.unwrap().mean > 0.0);

    // Answers through the CLI, scored for exact match.
    let (code, out, err) = cli(&[
        "answer", "--config", cfg, "--generator-script", p(&fx.script), "--queries", p(&fx.queries_file),
        "--k", "3", "--n-samples", "3",
    ]);
    assert_eq!(code, 0, "{err}");
    let answers = dir.path().join("answers.jsonl");
    std::fs::write(&answers, &out).unwrap();
    let gold = dir.path().join("gold.jsonl");
    let gold_body: String = smoke_queries()
        .iter()
        .map(|q| format!("{}\n", json!({"query_id": q.id, "answers": [q.expected]})))
        .collect();
    std::fs::write(&gold, gold_body).unwrap();
    let (code, out, err) = cli(&["eval-generation", "--answers", p(&answers), "--gold", p(&gold)]);
    assert_eq!(code, 0, "{err}");
    let report: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(report["mean"]["em"], 1.0);

    // Export for external visualisation.
    let (code, out, err) = cli(&["export-embeddings", "--config", cfg]);
    assert_eq!(code, 0, "{err}");
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    assert_eq!(rdr.headers().unwrap().len(), SMOKE_DIM + 1);
    assert_eq!(rdr.records().count(), 20);
}

#[test]
fn cli_train_head_and_retrieve_with_head() {
    let dir = tempfile::tempdir().unwrap();
    let fx = build_smoke(dir.path(), 3);
    let kb = p(&fx.config);
    assert_eq!(cli(&["embed", "--config", kb, "--manifest", p(&fx.manifest)]).0, 0);
    let pairs = dir.path().join("pairs.jsonl");
    let body: String = smoke_entries()
        .iter()
        .filter(|e| e.text.is_some())
        .map(|e| format!("{}\n", json!({"text": e.text.unwrap().to_lowercase(), "positive_id": e.id})))
        .collect();
    std::fs::write(&pairs, body).unwrap();
    let head = dir.path().join("head.wvrh");
    let (code, out, err) = cli(&[
        "train-head", "--config", kb, "--pairs", p(&pairs), "--out", p(&head), "--epochs", "5", "--batch-size", "4",
    ]);
    assert_eq!(code, 0, "{err}");
    let summary: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(summary["pairs"], 15);
    assert_eq!(summary["epoch_losses"].as_array().unwrap().len(), 5);
    let (code, out, err) = cli(&["retrieve", "--config", kb, "--head", p(&head), "--query-text", "who wrote Hamlet", "--k", "2"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn cli_augment_writes_outputs_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let noise = dir.path().join("noise");
    std::fs::create_dir_all(&input).unwrap();
    std::fs::create_dir_all(&noise).unwrap();
    write_pcm16(&input.join("a.wav"), &tone(440.0, 0.25, 8000, 0.5), 8000);
    write_pcm16(&input.join("b.wav"), &tone(220.0, 0.25, 8000, 0.5), 8000);
    let mut g = Xs(3);
    write_pcm16(&noise.join("n.wav"), &(0..1000).map(|_| g.unit() * 0.3).collect::<Vec<_>>(), 16000);
    let out_dir = dir.path().join("out");
    let args = ["augment", "--in", p(&input), "--noise", p(&noise), "--out", p(&out_dir), "--seed", "42"];
    let (code, first, err) = cli(&args);
    assert_eq!(code, 0, "{err}");
    let a_bytes = std::fs::read(out_dir.join("a.wav")).unwrap();
    let (code, second, _) = cli(&args);
    assert_eq!(code, 0);
    assert_eq!(first, second);
    assert_eq!(a_bytes, std::fs::read(out_dir.join("a.wav")).unwrap());
    for name in ["a", "b"] {
        let side = std::fs::read_to_string(out_dir.join(format!("{name}.applied.jsonl"))).unwrap();
        let rec: audiorag::cli::AugmentRecord = serde_json::from_str(side.trim()).unwrap();
        assert_eq!(rec.log.seed, 42);
        assert!((100.0..=500.0).contains(&rec.log.echo_delay_ms));
    }
    let (code, _, err) = cli(&["augment", "--in", p(&input), "--out", p(&out_dir), "--snr-db", "9:1"]);
    assert_eq!(code, 2);
    assert!(err.contains("snr_db"));
}

// ------------------------------------------------------------------ service

fn http_get(url: &str) -> (u16, Value) {
    match ureq::get(url).call() {
        Ok(r) => (r.status(), r.into_json().unwrap()),
        Err(ureq::Error::Status(c, r)) => (c, r.into_json().unwrap()),
        Err(e) => panic!("{e}"),
    }
}

fn http_post(url: &str, body: &Value) -> (u16, String) {
    match ureq::post(url).send_json(body) {
        Ok(r) => (r.status(), r.into_string().unwrap()),
        Err(ureq::Error::Status(c, r)) => (c, r.into_string().unwrap()),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn service_health_retrieve_answer() {
    let dir = tempfile::tempdir().unwrap();
    let (fx, engine) = smoke_engine(dir.path());
    let svc = service::spawn(Arc::new(engine), ServiceOptions::default(), "127.0.0.1:0").unwrap();
    let (code, health) = http_get(&format!("{}/v1/health", svc.url()));
    assert_eq!(code, 200);
    assert_eq!(health, json!({"status": "ok", "dim": SMOKE_DIM, "count": 20}));

    let (code, body) = http_post(
        &format!("{}/v1/retrieve", svc.url()),
        &json!({"instruction": INSTRUCTION, "text": "Hamlet was written by which playwright", "k": 2}),
    );
    assert_eq!(code, 200, "{body}");
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["hits"][0]["id"], "doc-hamlet");
    assert_eq!(v["hits"].as_array().unwrap().len(), 2);
    assert!(v["latency_s"].as_f64().unwrap() > 0.0);

    let q = &smoke_queries()[1];
    let (code, body) = http_post(
        &format!("{}/v1/answer", svc.url()),
        &json!({"query_id": q.id, "instruction": INSTRUCTION, "text": q.text, "n_samples": 3}),
    );
    assert_eq!(code, 200, "{body}");
    let rec: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(rec["final_answer"], q.expected);

    // Inline audio goes through base64.
    use base64::Engine as _;
    let wav = std::fs::read(fx.root.join("audio/bell.wav")).unwrap();
    let (code, body) = http_post(
        &format!("{}/v1/retrieve", svc.url()),
        &json!({"instruction": INSTRUCTION, "audio_b64": base64::engine::general_purpose::STANDARD.encode(wav), "k": 1}),
    );
    assert_eq!(code, 200, "{body}");
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["hits"][0]["id"], "aud-bell");

    for (body, field) in [
        (json!({"text": "x"}), "instruction"),
        (json!({"instruction": INSTRUCTION}), "text"),
        (json!({"instruction": INSTRUCTION, "text": "x", "k": 0}), "k"),
        (json!({"instruction": INSTRUCTION, "audio_b64": "%%%"}), "audio_b64"),
    ] {
        let (code, resp) = http_post(&format!("{}/v1/retrieve", svc.url()), &body);
        assert_eq!(code, 400);
        assert_eq!(serde_json::from_str::<Value>(&resp).unwrap()["field"], field);
    }
    svc.stop().unwrap();
}

/// Twenty queries: each entry's text, or its audio for audio-only entries.
fn parity_queries(fx: &SmokeFixture) -> Vec<(String, Option<String>, Option<std::path::PathBuf>)> {
    smoke_entries()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let text = e.text.map(|t| t.split(' ').take(4).collect::<Vec<_>>().join(" "));
            let audio = if text.is_none() { e.audio.map(|a| fx.root.join("audio").join(a)) } else { None };
            (format!("p{i:02}"), text, audio)
        })
        .collect()
}

#[test]
fn service_matches_cli_on_twenty_queries() {
    use base64::Engine as _;
    let dir = tempfile::tempdir().unwrap();
    let (fx, engine) = smoke_engine(dir.path());
    let svc = service::spawn(Arc::new(engine), ServiceOptions::default(), "127.0.0.1:0").unwrap();
    for (qid, text, audio) in parity_queries(&fx) {
        let mut args = vec!["retrieve", "--config", p(&fx.config), "--k", "5", "--query-id", &qid];
        let mut body = json!({"query_id": qid, "instruction": INSTRUCTION, "k": 5});
        if let Some(t) = &text {
            args.extend(["--query-text", t]);
            body["text"] = t.clone().into();
        }
        if let Some(a) = &audio {
            args.extend(["--query-audio", a.to_str().unwrap()]);
            body["audio_b64"] = base64::engine::general_purpose::STANDARD.encode(std::fs::read(a).unwrap()).into();
        }
        let (code, cli_out, err) = cli(&args);
        assert_eq!(code, 0, "{err}");
        let (code, resp) = http_post(&format!("{}/v1/retrieve", svc.url()), &body);
        assert_eq!(code, 200, "{resp}");
        let result: audiorag::retrieval::RetrievalResult = serde_json::from_str(&resp).unwrap();
        let svc_lines: String =
            result.hits.iter().map(|h| format_run_line(&result.query_id, h, "audiorag") + "\n").collect();
        assert_eq!(svc_lines, cli_out, "query {qid}");
    }
}

#[test]
fn service_concurrent_identical_requests() {
    let dir = tempfile::tempdir().unwrap();
    let (_fx, engine) = smoke_engine(dir.path());
    let svc = service::spawn(Arc::new(engine), ServiceOptions::default(), "127.0.0.1:0").unwrap();
    let url = format!("{}/v1/retrieve", svc.url());
    let body = json!({"query_id": "c", "instruction": INSTRUCTION, "text": "longest river in Africa", "k": 5});
    let bodies: Vec<Value> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..32)
            .map(|_| s.spawn(|| {
                let (code, text) = http_post(&url, &body);
                assert_eq!(code, 200);
                let mut v: Value = serde_json::from_str(&text).unwrap();
                v.as_object_mut().unwrap().remove("latency_s");
                v
            }))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(bodies.iter().all(|b| *b == bodies[0]));
    assert_eq!(bodies[0]["hits"][0]["id"], "doc-nile");
}

// ------------------------------------------------------------ remote backends

struct Mock {
    addr: std::net::SocketAddr,
    _rt: tokio::runtime::Runtime,
}

fn mock(router: Router) -> Mock {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move { axum::serve(listener, router).await.unwrap() });
    Mock { addr, _rt: rt }
}

fn mock_backends() -> Mock {
    mock(
        Router::new()
            .route(
                "/ok/embed",
                post(|Json(req): Json<Value>| async move {
                    let t = req["text"].as_str().unwrap_or("");
                    let a = if req["audio_b64"].is_string() { 1.0 } else { 0.0 };
                    Json(json!({"dim": 4, "embedding": [t.len() as f64, 1.0, a, 0.0]}))
                }),
            )
            .route("/short/embed", post(|| async { Json(json!({"dim": 3, "embedding": [1.0, 0.0, 0.0]})) }))
            .route("/down/embed", post(|| async { (axum::http::StatusCode::INTERNAL_SERVER_ERROR, "boom") }))
            .route(
                "/ok/generate",
                post(|Json(req): Json<Value>| async move {
                    let n = req["n"].as_u64().unwrap() as usize;
                    if req["prompt"].as_str().unwrap().starts_with("I have generated") {
                        return Json(json!({"completions": ["1"]}));
                    }
                    Json(json!({"completions": vec!["Reasoning.\nAnswer: 42"; n]}))
                }),
            )
            .route(
                "/slow/generate",
                post(|| async {
                    tokio::time::sleep(Duration::from_millis(600)).await;
                    Json(json!({"completions": ["Answer: late"]}))
                }),
            )
            .route("/few/generate", post(|| async { Json(json!({"completions": []})) })),
    )
}

#[test]
fn remote_encoder_contract() {
    let m = mock_backends();
    let base = format!("http://{}", m.addr);
    let enc = EncoderBackend::Remote { endpoint: format!("{base}/ok"), timeout_ms: 2000, dim: 4 }.build().unwrap();
    let v = enc.encode(&UnifiedQuery::text("i", "abc").unwrap()).unwrap();
    let n = (9.0f64 + 1.0).sqrt();
    assert!((v.as_slice()[0] as f64 - 3.0 / n).abs() < 1e-6);
    assert!((v.norm() - 1.0).abs() < 1e-5);

    let short = EncoderBackend::Remote { endpoint: format!("{base}/short"), timeout_ms: 2000, dim: 4 }.build().unwrap();
    assert!(matches!(
        short.encode(&UnifiedQuery::text("i", "abc").unwrap()),
        Err(Error::DimMismatch { expected: 4, got: 3 })
    ));
    let down = EncoderBackend::Remote { endpoint: format!("{base}/down"), timeout_ms: 2000, dim: 4 }.build().unwrap();
    assert!(matches!(down.encode(&UnifiedQuery::text("i", "abc").unwrap()), Err(Error::EncoderUnavailable(_))));
    let dead = EncoderBackend::Remote { endpoint: "http://127.0.0.1:9".into(), timeout_ms: 500, dim: 4 }.build().unwrap();
    assert!(matches!(dead.encode(&UnifiedQuery::text("i", "abc").unwrap()), Err(Error::EncoderUnavailable(_))));
}

#[test]
fn remote_generator_contract() {
    let m = mock_backends();
    let base = format!("http://{}", m.addr);
    let gen = GeneratorBackend::Remote { endpoint: format!("{base}/ok"), timeout_ms: 2000 }.build().unwrap();
    let req = audiorag::rag::GenerateRequest { prompt: "Q".into(), audio_refs: vec![], n: 3, temperature: 0.7 };
    assert_eq!(gen.generate(&req).unwrap(), vec!["Reasoning.\nAnswer: 42"; 3]);
    let slow = GeneratorBackend::Remote { endpoint: format!("{base}/slow"), timeout_ms: 200 }.build().unwrap();
    let started = std::time::Instant::now();
    assert!(matches!(slow.generate(&req), Err(Error::GeneratorUnavailable(_))));
    assert!(started.elapsed() < Duration::from_millis(550));
    let few = GeneratorBackend::Remote { endpoint: format!("{base}/few"), timeout_ms: 2000 }.build().unwrap();
    assert!(matches!(few.generate(&req), Err(Error::GeneratorUnavailable(_))));
}

/// Two-entry KB whose store lives in the mock encoder's 4-dim space.
fn remote_kb(dir: &std::path::Path) -> std::path::PathBuf {
    let manifest = dir.join("m.jsonl");
    std::fs::write(
        &manifest,
        "{\"id\":\"a\",\"modality\":\"text\",\"text\":\"alpha\"}\n{\"id\":\"b\",\"modality\":\"text\",\"text\":\"b\"}\n",
    )
    .unwrap();
    let kb = dir.join("kb");
    ingest_manifest(&manifest, &kb).unwrap();
    let mut store = EmbeddingStore::new(4).unwrap();
    store.push("a", &EmbeddingVector::normalized(&[5.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
    store.push("b", &EmbeddingVector::normalized(&[1.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
    write_store(&store, &KnowledgeBase::open(&kb).unwrap().store_path()).unwrap();
    kb
}

fn remote_engine(kb: &std::path::Path, enc: &str, gen: &str, gen_timeout: u64) -> Engine {
    let mut layers = ConfigLayers::new();
    layers.set("kb_dir", p(kb)).unwrap();
    layers.set("encoder", "remote").unwrap();
    layers.set("encoder_dim", "4").unwrap();
    layers.set("encoder_endpoint", enc).unwrap();
    layers.set("encoder_timeout_ms", "1000").unwrap();
    layers.set("generator", "remote").unwrap();
    layers.set("generator_endpoint", gen).unwrap();
    layers.set("generator_timeout_ms", gen_timeout.to_string()).unwrap();
    Engine::load(&layers.build().unwrap()).unwrap()
}

#[test]
fn service_status_codes_for_backend_failures() {
    let m = mock_backends();
    let base = format!("http://{}", m.addr);
    let dir = tempfile::tempdir().unwrap();
    let kb = remote_kb(dir.path());
    let q = json!({"instruction": "i", "text": "alpha", "n_samples": 2, "k": 1});
    let rq = json!({"instruction": "i", "text": "alpha", "k": 1});

    let ok = service::spawn(
        Arc::new(remote_engine(&kb, &format!("{base}/ok"), &format!("{base}/ok"), 2000)),
        ServiceOptions::default(),
        "127.0.0.1:0",
    )
    .unwrap();
    let (code, body) = http_post(&format!("{}/v1/answer", ok.url()), &q);
    assert_eq!(code, 200, "{body}");
    let rec: Value = serde_json::from_str(&body).unwrap();
    assert_eq!((rec["final_answer"].as_str(), rec["method"].as_str()), (Some("42"), Some("usc")));
    assert_eq!(rec["hits"][0]["id"], "a");

    let enc_down = service::spawn(
        Arc::new(remote_engine(&kb, &format!("{base}/down"), &format!("{base}/ok"), 2000)),
        ServiceOptions::default(),
        "127.0.0.1:0",
    )
    .unwrap();
    let (code, body) = http_post(&format!("{}/v1/retrieve", enc_down.url()), &rq);
    assert_eq!(code, 503);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["stage"], "retrieval");
    let (code, body) = http_post(&format!("{}/v1/answer", enc_down.url()), &q);
    assert_eq!(code, 503);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["stage"], "retrieval");

    let gen_down = service::spawn(
        Arc::new(remote_engine(&kb, &format!("{base}/ok"), &format!("{base}/few"), 2000)),
        ServiceOptions::default(),
        "127.0.0.1:0",
    )
    .unwrap();
    let (code, body) = http_post(&format!("{}/v1/answer", gen_down.url()), &q);
    assert_eq!(code, 503);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["stage"], "generation");

    let slow_opts = ServiceOptions { deadline: Duration::from_millis(300), ..ServiceOptions::default() };
    let slow = service::spawn(
        Arc::new(remote_engine(&kb, &format!("{base}/ok"), &format!("{base}/slow"), 5000)),
        slow_opts,
        "127.0.0.1:0",
    )
    .unwrap();
    let (code, _) = http_post(&format!("{}/v1/answer", slow.url()), &q);
    assert_eq!(code, 504);
}
