//! Command-line front end. [`run`] is the whole program minus process setup,
//! so it can be driven from tests with in-memory streams.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Data goes to
//! `out`, diagnostics to `err`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::audio::{augment_chain_stream, read_wav, write_wav, AppliedLog};
use crate::config::{ConfigLayers, EngineConfig};
use crate::encoder::{AudioInput, UnifiedQuery};
use crate::engine::{embed_knowledge_base, Engine};
use crate::error::{Error, Result};
use crate::eval::{evaluate_answer_files, evaluate_run_files, parse_latencies};
use crate::kb::{ingest_manifest, KnowledgeBase};
use crate::projection::{read_head, train, write_head, ProjectionHead, TrainConfig};
use crate::retrieval::write_run;
use crate::service::{self, ServiceOptions};
use crate::store::{read_store, read_store_with_dim, EmbeddingVector};
use crate::synthetic::{SyntheticBenchmark, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "audiorag", version, about = "Retrieval-augmented generation over audio/text knowledge bases")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that override config keys. Precedence: flag > `AUDIORAG_*` env > file.
#[derive(Debug, Args, Default)]
struct EngineArgs {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kb: Option<PathBuf>,
    /// toy or remote
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    encoder_dim: Option<usize>,
    #[arg(long)]
    encoder_endpoint: Option<String>,
    /// none, scripted or remote
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    generator_script: Option<PathBuf>,
    #[arg(long)]
    generator_endpoint: Option<String>,
    /// Trained projection head applied to queries and the store.
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long)]
    instruction: Option<String>,
}

impl EngineArgs {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<EngineConfig> {
        let mut layers = ConfigLayers::new();
        if let Some(path) = &self.config {
            layers.file(path)?;
        }
        layers.env(std::env::vars());
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("kb_dir", path(&self.kb)),
            ("encoder", self.encoder.clone()),
            ("encoder_dim", self.encoder_dim.map(|d| d.to_string())),
            ("encoder_endpoint", self.encoder_endpoint.clone()),
            ("generator", self.generator.clone()),
            ("generator_script", path(&self.generator_script)),
            ("generator_endpoint", self.generator_endpoint.clone()),
            ("head_path", path(&self.head)),
            ("instruction", self.instruction.clone()),
        ];
        for (key, value) in flags.iter().chain(extra) {
            if let Some(v) = value {
                layers.set(key, v.clone())?;
            }
        }
        // A script on the command line implies the scripted generator.
        if self.generator_script.is_some() && self.generator.is_none() && layers.get("generator").is_none() {
            layers.set("generator", "scripted")?;
        }
        layers.build()
    }
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    query_text: Option<String>,
    #[arg(long)]
    query_audio: Option<PathBuf>,
    #[arg(long, default_value = "q1")]
    query_id: String,
    /// JSONL of {"query_id", "text"?, "audio_path"?, "instruction"?}.
    #[arg(long, conflicts_with_all = ["query_text", "query_audio"])]
    queries: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a JSONL manifest and append its entries to a knowledge base.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        kb: PathBuf,
    },
    /// Encode every knowledge entry into the embedding store.
    Embed {
        #[command(flatten)]
        engine: EngineArgs,
        /// Ingest this manifest first.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train a linear projection head with InfoNCE.
    TrainHead {
        #[command(flatten)]
        engine: EngineArgs,
        /// JSONL of {"query_id", "positive_id"} joined against --query-store,
        /// or {"text"?, "audio_path"?, "instruction"?, "positive_id"} encoded now.
        #[arg(long, required_unless_present = "synthetic")]
        pairs: Option<PathBuf>,
        /// Store holding pre-encoded query vectors keyed by query_id.
        #[arg(long)]
        query_store: Option<PathBuf>,
        /// Train on the built-in synthetic two-modality benchmark instead.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the top-k knowledge entries as TREC run lines.
    Retrieve {
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "audiorag")]
        run_tag: String,
        /// Write per-query retrieval latency as JSONL.
        #[arg(long)]
        latency_out: Option<PathBuf>,
    },
    /// Retrieve, generate reasoning paths, and select one answer.
    Answer {
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n_samples: Option<usize>,
        /// Omit the step-by-step trigger phrase.
        #[arg(long)]
        no_cot: bool,
    },
    /// Apply the echo / noise / gain chain to WAV files.
    Augment {
        /// WAV file or directory of WAV files; repeatable.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Noise corpus: WAV files or directories; repeatable.
        #[arg(long, num_args = 1..)]
        noise: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// "lo:hi"
        #[arg(long)]
        echo_delay_ms: Option<String>,
        #[arg(long)]
        echo_scale: Option<String>,
        #[arg(long)]
        snr_db: Option<String>,
        #[arg(long)]
        noise_prob: Option<f64>,
        #[arg(long)]
        gain_db: Option<String>,
        #[arg(long)]
        gain_prob: Option<f64>,
    },
    /// Score a TREC run against qrels.
    EvalRetrieval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// JSONL of {"query_id", "seconds"}.
        #[arg(long)]
        latencies: Option<PathBuf>,
        #[arg(long)]
        table: bool,
    },
    /// Score answer records against gold answers.
    EvalGeneration {
        #[arg(long)]
        answers: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        table: bool,
    },
    /// Write the store (head-projected if a head is given) as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        bind: Option<String>,
    },
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render().ansi());
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let s = serde_json::to_string(value).expect("value serializes");
    writeln!(out, "{s}").map_err(io_err)
}

#[derive(Debug, Deserialize)]
struct QueryLine {
    query_id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    audio_path: Option<PathBuf>,
    #[serde(default)]
    instruction: Option<String>,
}

fn load_queries(args: &QueryArgs, instruction: &str) -> Result<Vec<(String, UnifiedQuery)>> {
    if let Some(path) = &args.queries {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let q: QueryLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })?;
            let audio = q.audio_path.map(|p| AudioInput::Path(base.join(p)));
            let uq = UnifiedQuery::new(q.instruction.unwrap_or_else(|| instruction.to_owned()), q.text, audio)
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    detail: e.to_string(),
                })?;
            out.push((q.query_id, uq));
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument(format!("{}: no queries", path.display())));
        }
        return Ok(out);
    }
    let audio = args.query_audio.clone().map(AudioInput::Path);
    let q = UnifiedQuery::new(instruction, args.query_text.clone(), audio)
        .map_err(|_| Error::InvalidArgument("give --query-text, --query-audio, or --queries".into()))?;
    Ok(vec![(args.query_id.clone(), q)])
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Ingest { manifest, kb } => {
            let report = ingest_manifest(&manifest, &kb)?;
            for (line, reason) in &report.rejected {
                writeln!(err, "{}:{line}: rejected: {reason}", manifest.display()).map_err(io_err)?;
            }
            json_line(out, &report)
        }
        Command::Embed { engine, manifest } => {
            let cfg = engine.resolve(&[])?;
            if let Some(m) = manifest {
                let report = ingest_manifest(&m, &cfg.kb_dir)?;
                for (line, reason) in &report.rejected {
                    writeln!(err, "{}:{line}: rejected: {reason}", m.display()).map_err(io_err)?;
                }
            }
            let encoder = cfg.encoder.build()?;
            embed_knowledge_base(&cfg.kb_dir, encoder.as_ref(), &cfg.instruction)?;
            let meta_path = cfg.kb_dir.join(crate::kb::STORE_META_FILE);
            let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            let meta: serde_json::Value = serde_json::from_str(&meta).map_err(|e| Error::format("store_meta", e.to_string()))?;
            json_line(out, &meta)
        }
        Command::TrainHead {
            engine,
            pairs,
            query_store,
            synthetic,
            out: out_path,
            tau,
            lr,
            epochs,
            batch_size,
            seed,
        } => {
            let cfg = engine.resolve(&[("tau", tau.map(|t| t.to_string()))])?;
            let tcfg = TrainConfig {
                tau: cfg.tau,
                lr,
                epochs,
                batch_size,
                seed,
            };
            let (data, bench) = if synthetic {
                let bench = SyntheticBenchmark::generate(SyntheticSpec::default())?;
                (bench.train_pairs(), Some(bench))
            } else {
                let path = pairs.expect("clap requires --pairs without --synthetic");
                (load_training_pairs(&path, query_store.as_deref(), &cfg)?, None)
            };
            let dim = data[0].0.dim();
            let start = ProjectionHead::identity(dim);
            let outcome = train(&start, &data, &tcfg)?;
            write_head(&outcome.head, &out_path)?;
            let mut summary = serde_json::json!({
                "pairs": data.len(),
                "initial_loss": outcome.initial_loss,
                "final_loss": outcome.epoch_losses.last().copied(),
                "epoch_losses": outcome.epoch_losses,
                "head": out_path.display().to_string(),
            });
            if let Some(b) = bench {
                summary["heldout_recall_at_1_identity"] = b.heldout_recall_at_1(&start)?.into();
                summary["heldout_recall_at_1_trained"] = b.heldout_recall_at_1(&outcome.head)?.into();
            }
            json_line(out, &summary)
        }
        Command::Retrieve {
            engine,
            query,
            k,
            run_tag,
            latency_out,
        } => {
            let cfg = engine.resolve(&[])?;
            let engine = Engine::load(&cfg)?;
            let k = k.unwrap_or(cfg.k_default);
            let queries = load_queries(&query, &cfg.instruction)?;
            let mut latencies = String::new();
            for (qid, q) in &queries {
                let (result, elapsed) = engine.retrieve(qid, q, k)?;
                write_run(&mut *out, &result, &run_tag).map_err(io_err)?;
                latencies.push_str(&serde_json::json!({"query_id": qid, "seconds": elapsed.as_secs_f64()}).to_string());
                latencies.push('\n');
            }
            if let Some(path) = latency_out {
                std::fs::write(&path, latencies).map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        }
        Command::Answer {
            engine,
            query,
            k,
            n_samples,
            no_cot,
        } => {
            let cfg = engine.resolve(&[
                ("k_default", k.map(|k| k.to_string())),
                ("n_samples", n_samples.map(|n| n.to_string())),
                ("cot", no_cot.then(|| "false".to_owned())),
            ])?;
            if cfg.generator.is_none() {
                return Err(Error::InvalidArgument(
                    "answer needs a generator (--generator-script or --generator remote)".into(),
                ));
            }
            let opts = ServiceOptions::from_config(&cfg).answer;
            let engine = Engine::load(&cfg)?;
            for (qid, q) in load_queries(&query, &cfg.instruction)? {
                json_line(out, &engine.answer(&qid, &q, &opts)?)?;
            }
            Ok(())
        }
        Command::Augment {
            inputs,
            noise,
            out: out_dir,
            config,
            seed,
            echo_delay_ms,
            echo_scale,
            snr_db,
            noise_prob,
            gain_db,
            gain_prob,
        } => {
            let mut layers = ConfigLayers::new();
            if let Some(p) = &config {
                layers.file(p)?;
            }
            layers.env(std::env::vars());
            let overrides = [
                ("seed", seed.map(|v| v.to_string())),
                ("echo_delay_ms", echo_delay_ms),
                ("echo_scale", echo_scale),
                ("snr_db", snr_db),
                ("noise_prob", noise_prob.map(|v| v.to_string())),
                ("gain_db", gain_db),
                ("gain_prob", gain_prob.map(|v| v.to_string())),
            ];
            for (key, value) in overrides {
                if let Some(v) = value {
                    layers.set(key, v)?;
                }
            }
            let mut acfg = layers.build()?.augment;
            let corpus = expand_wavs(&noise)?
                .iter()
                .map(|p| read_wav(p))
                .collect::<Result<Vec<_>>>()?;
            if corpus.is_empty() && acfg.noise_prob > 0.0 {
                writeln!(err, "warning: empty noise corpus; noise disabled").map_err(io_err)?;
                acfg.noise_prob = 0.0;
            }
            let inputs = expand_wavs(&inputs)?;
            if inputs.is_empty() {
                return Err(Error::InvalidArgument("no input WAV files".into()));
            }
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            for (i, input) in inputs.iter().enumerate() {
                let x = read_wav(input)?;
                let (y, log) = augment_chain_stream(&x, &corpus, &acfg, i as u64)?;
                let name = input
                    .file_name()
                    .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", input.display())))?;
                let dest = out_dir.join(name);
                write_wav(&dest, &y)?;
                let record = AugmentRecord {
                    input: input.display().to_string(),
                    output: dest.display().to_string(),
                    log,
                };
                let line = serde_json::to_string(&record).expect("record serializes");
                let sidecar = sidecar_path(&dest);
                std::fs::write(&sidecar, format!("{line}\n")).map_err(|e| Error::io(&sidecar, e))?;
                writeln!(out, "{line}").map_err(io_err)?;
            }
            Ok(())
        }
        Command::EvalRetrieval {
            run,
            qrels,
            latencies,
            table,
        } => {
            let mut report = evaluate_run_files(&run, &qrels)?;
            if let Some(path) = latencies {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                report = report.with_latencies(&parse_latencies(&text)?)?;
            }
            emit_report(out, err, &report, table)
        }
        Command::EvalGeneration { answers, gold, table } => {
            let report = evaluate_answer_files(&answers, &gold)?;
            emit_report(out, err, &report, table)
        }
        Command::ExportEmbeddings { engine, out: dest } => {
            let cfg = engine.resolve(&[])?;
            let kb = KnowledgeBase::open(&cfg.kb_dir)?;
            let mut store = read_store(&kb.store_path())?;
            if let Some(h) = &cfg.head_path {
                store = read_head(h)?.project_store(&store)?;
            }
            let sink: Box<dyn Write + '_> = match &dest {
                Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
                None => Box::new(&mut *out),
            };
            let mut w = csv::Writer::from_writer(sink);
            let mut header = vec!["id".to_owned()];
            header.extend((0..store.dim()).map(|i| format!("v{i}")));
            let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
            w.write_record(&header).map_err(csv_err)?;
            for (id, row) in store.rows() {
                let mut rec = vec![id.to_owned()];
                rec.extend(row.iter().map(f32::to_string));
                w.write_record(&rec).map_err(csv_err)?;
            }
            w.flush().map_err(io_err)
        }
        Command::Serve { engine, bind } => {
            let cfg = engine.resolve(&[("bind", bind)])?;
            let opts = ServiceOptions::from_config(&cfg);
            let engine = Arc::new(Engine::load(&cfg)?);
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::io("tokio runtime", e))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&cfg.bind)
                    .await
                    .map_err(|e| Error::io(&cfg.bind, e))?;
                let addr = listener.local_addr().map_err(|e| Error::io(&cfg.bind, e))?;
                writeln!(err, "listening on http://{addr}").map_err(io_err)?;
                service::serve(listener, engine, opts, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })
        }
    }
}

/// `clip.wav` -> `clip.applied.jsonl`, next to the output.
pub fn sidecar_path(output: &Path) -> PathBuf {
    output.with_extension("applied.jsonl")
}

/// Files as given; directories expand to their `.wav` files, sorted by name.
fn expand_wavs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// One line of an augmentation sidecar.
#[derive(Debug, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub input: String,
    pub output: String,
    #[serde(flatten)]
    pub log: AppliedLog,
}

fn emit_report(out: &mut dyn Write, err: &mut dyn Write, report: &crate::eval::MetricReport, table: bool) -> Result<()> {
    for q in &report.skipped {
        writeln!(err, "warning: query {q} has no judgments; skipped").map_err(io_err)?;
    }
    if table {
        write!(out, "{}", report.to_table()).map_err(io_err)
    } else {
        writeln!(out, "{}", report.to_json()).map_err(io_err)
    }
}

#[derive(Debug, Deserialize)]
struct PairLine {
    #[serde(default)]
    query_id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    audio_path: Option<PathBuf>,
    #[serde(default)]
    instruction: Option<String>,
    positive_id: String,
}

/// Positives come from the knowledge base's encoder-space store. Queries come
/// from `query_store` by id, or are encoded from the line's text/audio.
fn load_training_pairs(
    path: &Path,
    query_store: Option<&Path>,
    cfg: &EngineConfig,
) -> Result<Vec<(EmbeddingVector, EmbeddingVector)>> {
    let kb = KnowledgeBase::open(&cfg.kb_dir)?;
    let store = read_store(&kb.store_path())?;
    let queries = query_store.map(|p| read_store_with_dim(p, store.dim())).transpose()?;
    let encoder = cfg.encoder.build()?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parse = |detail: String| Error::Parse { line: i + 1, detail };
        let p: PairLine = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        let q = match (&queries, &p.query_id) {
            (Some(qs), Some(id)) => EmbeddingVector::normalized(
                qs.get(id).ok_or_else(|| parse(format!("unknown query_id {id:?}")))?,
            )?,
            _ => {
                let uq = UnifiedQuery::new(
                    p.instruction.unwrap_or_else(|| cfg.instruction.clone()),
                    p.text,
                    p.audio_path.map(|a| AudioInput::Path(base.join(a))),
                )
                .map_err(|e| parse(e.to_string()))?;
                encoder.encode(&uq)?
            }
        };
        let positive = store
            .get(&p.positive_id)
            .ok_or_else(|| parse(format!("unknown positive_id {:?}", p.positive_id)))?;
        pairs.push((q, EmbeddingVector::normalized(positive)?));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no training pairs", path.display())));
    }
    Ok(pairs)
}
