//! Score a TREC run against qrels (Recall@1/5/10, nDCG@10) and answers
//! against gold strings (exact match).
//!
//!     cargo run --example evaluate_run

use audiorag::eval::{evaluate_answers, evaluate_run, parse_qrels, parse_run};

const RUN: &str = "\
q1 Q0 doc-paris 1 0.91 demo
q1 Q0 doc-tokyo 2 0.80 demo
q2 Q0 doc-moon 1 0.77 demo
q2 Q0 doc-nile 2 0.75 demo
q2 Q0 doc-amazon 3 0.60 demo
";

const QRELS: &str = "\
q1 0 doc-paris 1
q2 0 doc-nile 1
q2 0 doc-amazon 1
";

const ANSWERS: &str = r#"{"query_id":"q1","final_answer":"Paris.","timings":{"retrieval_s":0.002,"generation_s":0.4,"selection_s":0.1}}
{"query_id":"q2","final_answer":"the Nile","timings":{"retrieval_s":0.003,"generation_s":0.5,"selection_s":0.1}}
"#;

const GOLD: &str = r#"{"query_id":"q1","answers":["Paris"]}
{"query_id":"q2","answers":["Amazon"]}
"#;

fn main() -> audiorag::Result<()> {
    let retrieval = evaluate_run(&parse_run(RUN)?, &parse_qrels(QRELS)?)?;
    print!("{}", retrieval.to_table());
    let generation = evaluate_answers(ANSWERS, GOLD)?;
    print!("{}", generation.to_table());
    Ok(())
}
