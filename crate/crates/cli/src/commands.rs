//! Command implementations. Each validates all inputs before writing any file.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;
use relgraph_core::checks::{describe_failures, full_model_gradcheck, gradcheck_config};
use relgraph_core::config::ModelConfig;
use relgraph_core::features::{generate_dataset, Instance, RelationRule};
use relgraph_core::metrics::{anls, mean_vqa_accuracy, ocr_detection_eval, ocr_upper_bound, EvalRecord, MetricReport, OcrDetection};
use relgraph_core::model::{EncodedInstance, Model};
use relgraph_core::numerics::GradCheckOptions;
use relgraph_core::train::{LossRecord, Trainer};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{content_hash, Checkpoint};
use crate::config::RunConfig;
use crate::io;

/// A check ran and failed (exit code 1), as opposed to bad input (exit code 2).
#[derive(Debug)]
pub struct CheckFailure(pub String);

impl fmt::Display for CheckFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailure {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailure>().is_some() {
        1
    } else {
        2
    }
}

pub fn gen(rule: RelationRule, count: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    let data = generate_dataset(rule, count, seed);
    io::write_atomic(out, io::instances_to_string(&data)?.as_bytes())?;
    info!("wrote {count} `{rule}` instances to {}", out.display());
    Ok(())
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub config: &'a RunConfig,
    pub out_ckpt: &'a Path,
    pub steps: u64,
    pub loss_log: Option<&'a Path>,
    pub resume: Option<&'a Path>,
}

pub struct TrainOutcome {
    pub hash: String,
    pub log: Vec<LossRecord>,
}

/// Default loss log path: the checkpoint path with `.loss.csv` appended.
pub fn default_loss_log(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

pub fn train(args: &TrainArgs<'_>) -> anyhow::Result<TrainOutcome> {
    let data = io::read_instances(args.data)?;
    let cfg = args.config;
    let mut trainer = match args.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.model.config != cfg.model {
                bail!("checkpoint {} was built with a different model config", p.display());
            }
            let mut t = ck.into_trainer()?;
            t.config = cfg.train.clone();
            t.adam.config = cfg.train.adam;
            t
        }
        None => {
            let qv = match &cfg.vocab.question {
                Some(p) => io::read_vocab(p, false)?,
                None => io::derive_question_vocab(&data),
            };
            let av = match &cfg.vocab.answer {
                Some(p) => io::read_vocab(p, true)?,
                None => io::derive_answer_vocab(&data),
            };
            Trainer::new(Model::new(cfg.model.clone(), qv, av, cfg.train.seed)?, cfg.train.clone())?
        }
    };
    let enc = trainer.model.encode_all(&data).context("data does not fit the model config")?;
    if args.steps > 0 && !enc.iter().any(|e| e.targets.is_some()) {
        bail!("{} holds no trainable instance", args.data.display());
    }
    let loss_log = args.loss_log.map(Path::to_path_buf).unwrap_or_else(|| default_loss_log(args.out_ckpt));

    let every = (args.steps / 20).max(1);
    let log = trainer.run(&enc, args.steps, |r| {
        if (r.step + 1) % every == 0 {
            info!("step {} loss {:.6} lr {:e}", r.step + 1, r.loss, r.lr);
        }
    })?;
    let bytes = Checkpoint::from_trainer(&trainer).to_bytes()?;
    io::write_atomic(&loss_log, io::loss_log_to_string(&log).as_bytes())?;
    if let Err(e) = io::write_atomic(args.out_ckpt, &bytes) {
        let _ = std::fs::remove_file(&loss_log);
        return Err(e);
    }
    let hash = content_hash(&bytes);
    info!("checkpoint {} sha256 {hash}", args.out_ckpt.display());
    Ok(TrainOutcome { hash, log })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub prediction: String,
    /// Source of each decoded word: `vocab` or `copy:<ocr index>`.
    pub sources: Vec<String>,
    pub answers: Vec<String>,
}

/// Greedy decode of every instance, split into contiguous chunks over
/// `jobs` threads. Output order follows the input.
pub fn predict(model: &Model, enc: &[EncodedInstance], jobs: usize) -> anyhow::Result<Vec<Prediction>> {
    let one = |e: &EncodedInstance| -> anyhow::Result<Prediction> {
        let d = model.decode(e)?;
        Ok(Prediction { question_id: e.id.clone(), prediction: d.answer(), sources: d.sources(), answers: e.answers.clone() })
    };
    let jobs = jobs.clamp(1, enc.len().max(1));
    if jobs == 1 {
        return enc.iter().map(one).collect();
    }
    let chunk = enc.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = enc.chunks(chunk).map(|c| s.spawn(move || c.iter().map(one).collect::<anyhow::Result<Vec<_>>>())).collect();
        let mut out = Vec::with_capacity(enc.len());
        for h in handles {
            out.extend(h.join().expect("decode worker panicked")?);
        }
        Ok(out)
    })
}

pub fn metric_report(preds: &[Prediction], enc: &[EncodedInstance], metrics: &[String], anls_tau: f64) -> MetricReport {
    let records: Vec<EvalRecord> = preds
        .iter()
        .map(|p| EvalRecord { question_id: p.question_id.clone(), prediction: p.prediction.clone(), answers: p.answers.clone() })
        .collect();
    let mut report = MetricReport::default();
    for m in metrics {
        match m.as_str() {
            "accuracy" => report.accuracy = Some(mean_vqa_accuracy(&records)),
            "anls" => report.anls = Some(anls(&records, anls_tau)),
            "ocr_ub" => {
                let items: Vec<(EvalRecord, Vec<String>)> = records.iter().cloned().zip(enc.iter().map(|e| e.ocr_tokens.clone())).collect();
                report.ocr_ub = Some(ocr_upper_bound(&items));
            }
            other => unreachable!("metric `{other}` passed validation"),
        }
    }
    report
}

pub struct EvalArgs<'a> {
    pub data: &'a Path,
    pub ckpt: &'a Path,
    pub metrics: &'a [String],
    pub anls_tau: f64,
    pub out: Option<&'a Path>,
    pub predictions: Option<&'a Path>,
    pub jobs: usize,
}

pub fn eval(args: &EvalArgs<'_>) -> anyhow::Result<MetricReport> {
    if !(0.0..=1.0).contains(&args.anls_tau) {
        bail!("--anls-tau must lie in [0, 1], got {}", args.anls_tau);
    }
    let data = io::read_instances(args.data)?;
    let ck = Checkpoint::load(args.ckpt)?;
    let enc = ck.model.encode_all(&data).context("checkpoint is incompatible with the data")?;
    let preds = predict(&ck.model, &enc, args.jobs)?;
    let report = metric_report(&preds, &enc, args.metrics, args.anls_tau);
    let json = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(p) = args.predictions {
        let mut s = String::new();
        for pr in &preds {
            s.push_str(&serde_json::to_string(pr)?);
            s.push('\n');
        }
        io::write_atomic(p, s.as_bytes())?;
    }
    if let Some(p) = args.out {
        io::write_atomic(p, json.as_bytes())?;
    }
    Ok(report)
}

pub fn inspect(data: &Path, ckpt: &Path, id: &str) -> anyhow::Result<String> {
    let data = io::read_instances(data)?;
    let ck = Checkpoint::load(ckpt)?;
    let inst: &Instance = data.iter().find(|i| i.id == id).with_context(|| format!("no instance with id `{id}`"))?;
    let enc = ck.model.encode_instance(inst).context("checkpoint is incompatible with the instance")?;
    let dump = ck.model.inspect(&enc)?;
    Ok(serde_json::to_string_pretty(&dump)? + "\n")
}

pub struct GradcheckArgs<'a> {
    pub model: Option<ModelConfig>,
    pub seed: u64,
    pub max_coords: Option<usize>,
    pub corrupt: Option<&'a str>,
}

/// Runs the whole-model gradient check and returns the report text. A
/// failing block comes back as a [`CheckFailure`] carrying the same text.
pub fn gradcheck(args: &GradcheckArgs<'_>) -> anyhow::Result<String> {
    let cfg = args.model.clone().unwrap_or_else(gradcheck_config);
    cfg.validate()?;
    let opts = GradCheckOptions {
        max_coords_per_block: args.max_coords,
        corrupt: args.corrupt.map(|b| (b.to_string(), 2.0)),
        ..GradCheckOptions::default()
    };
    let report = full_model_gradcheck(cfg, args.seed, &opts)?;
    let mut text = String::new();
    for b in &report.blocks {
        let status = if b.passed { "ok  " } else { "FAIL" };
        text.push_str(&format!("{status} {:<28} {:>6} coords  max rel err {:.3e}\n", b.name, b.checked, b.max_rel_err));
    }
    text.push_str(&format!(
        "loss {:.12e}; {} blocks, max relative error {:.3e}, tolerance {:.0e}\n",
        report.loss,
        report.blocks.len(),
        report.max_rel_err(),
        report.tol
    ));
    if report.passed() {
        text.push_str("gradcheck passed\n");
        Ok(text)
    } else {
        for f in describe_failures(&report) {
            text.push_str(&format!("failed: {f}\n"));
        }
        Err(CheckFailure(text).into())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionFile {
    pub images: Vec<DetectionImage>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionImage {
    pub id: String,
    pub detections: Vec<OcrDetection>,
}

/// Detection precision, recall and hmean pooled over images matched by id.
pub fn ocr_eval(pred: &Path, gt: &Path, thresh: f64) -> anyhow::Result<MetricReport> {
    let read = |p: &Path| -> anyhow::Result<DetectionFile> {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    };
    let (pred, gt) = (read(pred)?, read(gt)?);
    let (mut matched, mut n_pred, mut n_gt) = (0.0, 0usize, 0usize);
    for g in &gt.images {
        let p: &[OcrDetection] = pred.images.iter().find(|p| p.id == g.id).map(|p| p.detections.as_slice()).unwrap_or(&[]);
        let (prec, _, _) = ocr_detection_eval(p, &g.detections, thresh);
        matched += (prec * p.len() as f64).round();
        n_pred += p.len();
        n_gt += g.detections.len();
    }
    for p in &pred.images {
        if !gt.images.iter().any(|g| g.id == p.id) {
            n_pred += p.detections.len();
        }
    }
    let precision = if n_pred == 0 { 0.0 } else { matched / n_pred as f64 };
    let recall = if n_gt == 0 { 0.0 } else { matched / n_gt as f64 };
    Ok(MetricReport {
        precision: Some(precision),
        recall: Some(recall),
        hmean: Some(relgraph_core::metrics::hmean(precision, recall)),
        ..MetricReport::default()
    })
}
