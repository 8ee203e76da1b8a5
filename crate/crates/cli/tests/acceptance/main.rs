//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Run alone with
//! `cargo test -p relgraph --test acceptance`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use relgraph::commands::{metric_report, predict};
use relgraph::io::{derive_answer_vocab, derive_question_vocab};
use relgraph_core::checks::{causal_mask_probe, full_model_gradcheck, gradcheck_config, normalization_audit};
use relgraph_core::config::{ModelConfig, RelationSet};
use relgraph_core::features::{generate_dataset, Instance, RelationRule};
use relgraph_core::graph::BoundingBox;
use relgraph_core::metrics::{anls, normalize_answer, ocr_detection_eval, vqa_accuracy, EvalRecord, OcrDetection};
use relgraph_core::model::{EncodedInstance, Model};
use relgraph_core::numerics::{GradCheckOptions, Tape, Tensor};
use relgraph_core::train::{TrainConfig, Trainer};

#[path = "../../../core/tests/oracle/mod.rs"]
mod oracle;

// Pinned budgets and tolerances.
const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_LIMIT: Duration = Duration::from_secs(60);
const SUM_TOL: f64 = 1e-6;
const ORACLE_TOL: f64 = 1e-10;
const OVERFIT_STEPS: u64 = 2000;
const OVERFIT_CHUNK: u64 = 100;
const OVERFIT_LIMIT: Duration = Duration::from_secs(300);
const OVERFIT_EM: f64 = 0.95;
const ABLATION_TRAIN: usize = 1024;
const ABLATION_TEST: usize = 256;
const ABLATION_STEPS: u64 = 400;
const ABLATION_SEEDS: u64 = 5;
const BCE_TOL: f64 = 1e-9;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn desk32(layers: usize, relations: RelationSet) -> ModelConfig {
    ModelConfig { d: 32, heads: 4, ffn_width: 64, layers, relations, ..ModelConfig::desk() }
}

fn trainer(cfg: ModelConfig, data: &[Instance], seed: u64) -> Trainer {
    let model = Model::new(cfg, derive_question_vocab(data), derive_answer_vocab(data), seed).unwrap();
    let mut tc = TrainConfig { batch_size: 8, seed, ..TrainConfig::default() };
    tc.adam.lr = 1e-3;
    Trainer::new(model, tc).unwrap()
}

fn exact_match(model: &Model, enc: &[EncodedInstance]) -> f64 {
    let preds = predict(model, enc, 1).unwrap();
    let hits = preds.iter().filter(|p| normalize_answer(&p.prediction) == normalize_answer(&p.answers[0])).count();
    hits as f64 / preds.len() as f64
}

fn accuracy(model: &Model, enc: &[EncodedInstance]) -> f64 {
    let preds = predict(model, enc, 1).unwrap();
    metric_report(&preds, enc, &["accuracy".into()], 0.5).accuracy.unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn gradcheck() -> Outcome {
    let t = Instant::now();
    let report = full_model_gradcheck(gradcheck_config(), 0, &GradCheckOptions::default()).unwrap();
    let elapsed = t.elapsed();
    let err = report.max_rel_err();
    let coords: usize = report.blocks.iter().map(|b| b.checked).sum();
    outcome(
        report.passed() && err < GRADCHECK_TOL && elapsed < GRADCHECK_LIMIT,
        format!(
            "full-model gradcheck (d=8, N=3, M=3, k=2, L=3, eps=1e-5): {coords} coords, max rel err {err:.2e} (< {GRADCHECK_TOL:e}), {:.1} s (< {} s)",
            elapsed.as_secs_f64(),
            GRADCHECK_LIMIT.as_secs()
        ),
    )
}

fn normalization() -> Outcome {
    let a = normalization_audit(1000, 2).unwrap();
    outcome(
        a.max_sum_error < SUM_TOL && a.masked_nonzero == 0,
        format!(
            "normalization over {} scenes: {} distributions, max |sum - 1| {:.1e} (< {SUM_TOL:e}), {} nonzero masked entries",
            a.instances, a.distributions, a.max_sum_error, a.masked_nonzero
        ),
    )
}

fn oracles() -> Outcome {
    let seeds = 0..10u64;
    let edge = oracle::edge_feature_gap(1000, 1);
    let (graph_mismatch, graph_gap) = oracle::build_graph_check(200, 2);
    let eq1 = seeds.clone().map(oracle::question_decomposition_gap).fold(0.0, f64::max);
    let emb = seeds.clone().map(|s| oracle::object_embedding_gap(s).max(oracle::text_embedding_gap(s))).fold(0.0, f64::max);
    let node = seeds.clone().map(oracle::node_attention_gap).fold(0.0, f64::max);
    let edge_attn = seeds.map(oracle::edge_attention_gap).fold(0.0, f64::max);
    let lev = oracle::levenshtein_mismatches(1000, 3);
    let phoc = oracle::phoc_mismatches();
    let gaps = [edge, graph_gap, eq1, emb, node, edge_attn];
    outcome(
        gaps.iter().all(|g| *g < ORACLE_TOL) && graph_mismatch == 0 && lev == 0 && phoc == 0,
        format!(
            "oracles (tol {ORACLE_TOL:e}): edge_feature {edge:.1e}, build_graph {graph_mismatch} mismatches / {graph_gap:.1e}, \
             question decomposition {eq1:.1e}, node embeddings {emb:.1e}, node attention {node:.1e}, \
             edge attention toys {edge_attn:.1e}, levenshtein {lev} mismatches, phoc {phoc} mismatches"
        ),
    )
}

fn overfit() -> Outcome {
    let t = Instant::now();
    let data = generate_dataset(RelationRule::TextInLargestObject, 64, 1);
    let mut tr = trainer(desk32(4, RelationSet::ALL), &data, 0);
    let enc = tr.model.encode_all(&data).unwrap();
    let mut em = 0.0;
    while tr.step < OVERFIT_STEPS {
        tr.run(&enc, OVERFIT_CHUNK, |_| {}).unwrap();
        em = exact_match(&tr.model, &enc);
        if em >= OVERFIT_EM {
            break;
        }
    }
    let preds = predict(&tr.model, &enc, 1).unwrap();
    let ub = metric_report(&preds, &enc, &["ocr_ub".into()], 0.5).ocr_ub.unwrap();
    let elapsed = t.elapsed();
    outcome(
        em >= OVERFIT_EM && ub == 1.0 && elapsed < OVERFIT_LIMIT,
        format!(
            "overfit 64 to-rule instances (d=32, Adam lr 1e-3): exact match {em:.3} (>= {OVERFIT_EM}) after {} steps (<= {OVERFIT_STEPS}), ocr_ub {ub}, {:.0} s (< {} s)",
            tr.step,
            elapsed.as_secs_f64(),
            OVERFIT_LIMIT.as_secs()
        ),
    )
}

fn relations_vs_baseline() -> Outcome {
    let test = generate_dataset(RelationRule::TextInLargestObject, ABLATION_TEST, 9000);
    let mut scores = [Vec::new(), Vec::new()];
    for seed in 0..ABLATION_SEEDS {
        let train = generate_dataset(RelationRule::TextInLargestObject, ABLATION_TRAIN, 100 + seed);
        for (slot, rel) in [RelationSet::ALL, RelationSet::NONE].into_iter().enumerate() {
            let mut tr = trainer(desk32(2, rel), &train, seed);
            let enc = tr.model.encode_all(&train).unwrap();
            tr.run(&enc, ABLATION_STEPS, |_| {}).unwrap();
            let tenc = tr.model.encode_all(&test).unwrap();
            scores[slot].push(accuracy(&tr.model, &tenc));
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "held-out accuracy on {ABLATION_TEST} to-rule instances, {ABLATION_STEPS} steps on {ABLATION_TRAIN}, {ABLATION_SEEDS} seeds: \
         full [{}] median {:.3}, baseline [{}] median {:.3}",
        fmt(&scores[0]),
        median(scores[0].clone()),
        fmt(&scores[1]),
        median(scores[1].clone())
    );
    outcome(median(scores[0].clone()) >= median(scores[1].clone()), detail)
}

fn metric_values() -> Outcome {
    let rec = |pred: &str, answers: Vec<&str>| EvalRecord {
        question_id: "q".into(),
        prediction: pred.into(),
        answers: answers.into_iter().map(String::from).collect(),
    };
    let mut three = vec!["a"; 3];
    three.extend(["b"; 7]);
    let mut one = vec!["a"];
    one.extend(["b"; 9]);
    let v3 = vqa_accuracy(&rec("a", three));
    let v1 = vqa_accuracy(&rec("a", one));
    let s = anls(&[rec("helo", vec!["hello"])], 0.5);

    let mut tape = Tape::new();
    let logit = tape.constant(Tensor::row(vec![0.0]));
    let loss = tape.bce_with_logits(logit, &Tensor::row(vec![1.0]), vec![true]).unwrap();
    let bce = tape.value(loss).item();

    let det = |x: f64, t: &str| OcrDetection { bbox: BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap(), token: t.into() };
    let preds = [det(0.0, "one"), det(100.0, "two")];
    let gts = [det(0.0, "one"), det(200.0, "three"), det(300.0, "four"), det(400.0, "five")];
    let (p, r, h) = ocr_detection_eval(&preds, &gts, 0.5);

    let ok = v3 == 1.0
        && (v1 - 1.0 / 3.0).abs() < 1e-12
        && (s - 0.8).abs() < 1e-12
        && (bce - std::f64::consts::LN_2).abs() < BCE_TOL
        && p == 0.5
        && r == 0.25
        && (h - 1.0 / 3.0).abs() < 1e-12;
    outcome(
        ok,
        format!("metric values: vqa 3/10 {v3}, 1/10 {v1:.6}, anls helo/hello {s}, bce(0,1) {bce:.12} (ln 2 within {BCE_TOL:e}), detection ({p}, {r}, {h:.6})"),
    )
}

fn run_cli(args: &[&str], dir: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_relgraph")).args(args).current_dir(dir).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "relgraph {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn determinism() -> Outcome {
    let mut cfg = relgraph::config::RunConfig::preset(relgraph::config::Preset::Desk);
    cfg.model = ModelConfig { d: 16, heads: 2, ffn_width: 32, layers: 2, ..ModelConfig::desk() };
    cfg.train.adam.lr = 1e-3;
    let toml = cfg.to_toml().unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), &toml).unwrap();
        run_cli(&["gen", "--rule", "tt", "--count", "48", "--seed", "5", "--out", "data.jsonl"], dir.path());
        let hash = run_cli(&["train", "--data", "data.jsonl", "--config", "run.toml", "--out-ckpt", "m.ckpt", "--steps", "60"], dir.path());
        let report = run_cli(&["eval", "--data", "data.jsonl", "--ckpt", "m.ckpt"], dir.path());
        let log = std::fs::read(dir.path().join("m.ckpt.loss.csv")).unwrap();
        runs.push((hash.trim().to_string(), report, log));
    }
    let same = runs[0] == runs[1];
    outcome(
        same,
        format!(
            "determinism across two processes: checkpoint sha256 {} vs {}, metric reports {}, loss logs {}",
            &runs[0].0[..16],
            &runs[1].0[..16],
            if runs[0].1 == runs[1].1 { "identical" } else { "differ" },
            if runs[0].2 == runs[1].2 { "identical" } else { "differ" },
        ),
    )
}

fn causal_mask() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for step in [2, 5, 12] {
        let p = causal_mask_probe(step, 0).unwrap();
        ok &= p.earlier_identical && p.perturbed_changed;
        parts.push(format!("step {step}: earlier bitwise equal {}, step moved {}", p.earlier_identical, p.perturbed_changed));
    }
    outcome(ok, format!("causal mask: {}", parts.join("; ")))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, gradcheck),
        (2, normalization),
        (3, oracles),
        (4, overfit),
        (5, relations_vs_baseline),
        (6, metric_values),
        (7, determinism),
        (8, causal_mask),
    ];
    let mut failed = 0;
    for (id, check) in criteria {
        let t = Instant::now();
        let o = check();
        failed += usize::from(!o.passed);
        println!("{} [{id}] {} ({:.1} s)", if o.passed { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
