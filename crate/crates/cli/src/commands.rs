use std::path::{Path, PathBuf};

use ulmfit::checkpoint::{Checkpoint, CheckpointModel};
use ulmfit::evalbench::{evaluate, run_degradation_suite, top_losses, DegradationReport, SuiteConfig};
use ulmfit::model::{ArchConfig, Preset};
use ulmfit::textpipe::{
    load_corpus_lines, load_labeled_csv, numericalize_labeled, preprocess, split_indices, Label, NumericalizedCorpus,
    SplitTag, Vocabulary, DEFAULT_MAX_VOCAB,
};
use ulmfit::train::{finetune_classifier, finetune_lm, pretrain_lm, MetricsLog, PhaseConfig};
use ulmfit::{Error, Scalar};

use crate::config::{Settings, UsageError};
use crate::{Command, Failure};

type Outcome = Result<(), Failure>;

fn require_inputs(paths: &[&Path]) -> Result<(), UsageError> {
    for p in paths {
        if !p.exists() {
            return Err(UsageError(format!("input path does not exist: {}", p.display())));
        }
    }
    Ok(())
}

fn require_out<'a>(out: Option<&'a Path>, cmd: &str) -> Result<&'a Path, UsageError> {
    out.ok_or_else(|| UsageError(format!("{cmd} needs --out")))
}

fn preset(s: &Settings) -> Result<Option<Preset>, UsageError> {
    match s.raw("preset") {
        None => Ok(None),
        Some(p @ ("full" | "tiny")) => Ok(Some(Preset::parse(p).map_err(|e| UsageError(e.to_string()))?)),
        Some(other) => Err(UsageError(format!("preset must be full or tiny, got {other:?}"))),
    }
}

fn load_checkpoint(path: &Path, s: &Settings) -> Result<Checkpoint<f32>, Failure> {
    let ckpt = Checkpoint::<f32>::load(path)?;
    if let Some(p) = preset(s)? {
        ckpt.require_preset(p)?;
    }
    Ok(ckpt)
}

fn build_vocab(texts: &[String], s: &Settings) -> Result<(Vocabulary, Vec<Vec<String>>), Failure> {
    let toks: Vec<Vec<String>> = texts.iter().map(|t| preprocess(t)).collect();
    let vocab = Vocabulary::build(
        toks.iter().flatten(),
        s.get_or("max_vocab", DEFAULT_MAX_VOCAB)?,
        s.get_or("min_freq", 1)?,
    )?;
    Ok((vocab, toks))
}

/// Configuration recorded in every artifact: the command, its inputs, the
/// merged settings and the resolved phase schedule.
fn snapshot(cmd: &str, inputs: &[(&str, &Path)], s: &Settings, phase: Option<&PhaseConfig>) -> Vec<(String, String)> {
    let mut v = vec![("command".to_string(), cmd.to_string())];
    for (k, p) in inputs {
        v.push((k.to_string(), p.display().to_string()));
    }
    v.extend(s.entries());
    if let Some(c) = phase {
        let join = |f: &dyn Fn(&ulmfit::train::Stage) -> String| c.stages.iter().map(f).collect::<Vec<_>>().join(";");
        v.extend([
            ("phase".to_string(), c.phase.name().to_string()),
            ("schedule".to_string(), c.schedule_name.clone()),
            ("stage_epochs".to_string(), join(&|st| st.epochs.to_string())),
            ("stage_lrs".to_string(), join(&|st| st.lr.to_string())),
            ("resolved_seed".to_string(), c.seed.to_string()),
            ("resolved_batch_size".to_string(), c.batch_size.to_string()),
            ("resolved_bptt_len".to_string(), c.bptt_len.to_string()),
            ("resolved_dropout_multiplier".to_string(), c.dropout_multiplier.to_string()),
            ("resolved_weight_decay".to_string(), c.weight_decay.to_string()),
        ]);
    }
    v
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(Error::io(path, e)))
}

fn write_log(out: &Path, seed: u64, config: &[(String, String)], log: &MetricsLog) -> Result<PathBuf, Failure> {
    let path = sidecar(out, ".metrics.csv");
    let mut text = format!("# seed={seed}\n");
    for (k, v) in config {
        text.push_str(&format!("# {k}={v}\n"));
    }
    text.push_str(&log.to_csv_untimed());
    write(&path, &text)?;
    Ok(path)
}

fn save(ckpt: &Checkpoint<f32>, out: &Path, log: &MetricsLog) -> Result<(), Failure> {
    ckpt.save(out)?;
    let log_path = write_log(out, ckpt.seed, &ckpt.config, log)?;
    println!("checkpoint: {}", out.display());
    println!("metrics: {}", log_path.display());
    Ok(())
}

fn split_valid(corpus: NumericalizedCorpus, cfg: &PhaseConfig) -> Result<(NumericalizedCorpus, Option<NumericalizedCorpus>), Failure> {
    if cfg.valid_fraction <= 0.0 || corpus.len() < 2 {
        return Ok((corpus, None));
    }
    let parts = split_indices(corpus.len(), &[1.0 - cfg.valid_fraction, cfg.valid_fraction], cfg.seed)?;
    let pick = |idx: &[usize], tag| {
        NumericalizedCorpus::unlabeled(idx.iter().map(|&i| corpus.streams[i].clone()).collect(), tag)
    };
    Ok((pick(&parts[0], SplitTag::Train), Some(pick(&parts[1], SplitTag::Valid))))
}

fn with_phase(prev: &[String], phase: &str) -> Vec<String> {
    let mut v = prev.to_vec();
    v.push(phase.to_string());
    v
}

fn pretrain(corpus: &Path, s: &Settings, out: Option<&Path>) -> Outcome {
    require_inputs(&[corpus])?;
    let out = require_out(out, "pretrain")?;
    let mut cfg = PhaseConfig::pretrain();
    s.apply(&mut cfg)?;
    let arch = ArchConfig::for_preset(preset(s)?.unwrap_or(Preset::Full), 1)?;
    let lines = load_corpus_lines(corpus)?;
    let (vocab, toks) = build_vocab(&lines, s)?;
    let streams = toks.iter().map(|t| vocab.numericalize(t)).collect();
    let data = NumericalizedCorpus::unlabeled(streams, SplitTag::Train);
    let arch = ArchConfig { vocab_size: vocab.len(), ..arch };
    let result = pretrain_lm::<f32>(&data, arch, &cfg)?;
    println!(
        "pretrained {} epochs, vocab {}, best valid loss {}",
        result.metrics.epochs.len(),
        vocab.len(),
        result.best_valid_loss.map_or("n/a".to_string(), |l| format!("{l:.6}"))
    );
    let ckpt = Checkpoint {
        model: CheckpointModel::Lm(result.best),
        vocab,
        seed: cfg.seed,
        phases: vec!["pretrain".to_string()],
        recorded_valid_loss: result.best_valid_loss,
        config: snapshot("pretrain", &[("corpus", corpus)], s, Some(&cfg)),
        optimizer: None,
    };
    save(&ckpt, out, &result.metrics)
}

fn finetune_lm_cmd(checkpoint: &Path, dataset: Option<&Path>, corpus: Option<&Path>, s: &Settings, out: Option<&Path>) -> Outcome {
    let (key, input) = match (dataset, corpus) {
        (Some(d), _) => ("dataset", d),
        (None, Some(c)) => ("corpus", c),
        (None, None) => return Err(UsageError("finetune-lm needs --dataset or --corpus".into()).into()),
    };
    require_inputs(&[checkpoint, input])?;
    let out = require_out(out, "finetune-lm")?;
    let mut cfg = PhaseConfig::finetune_lm();
    s.apply(&mut cfg)?;
    let ckpt = load_checkpoint(checkpoint, s)?;
    let lm = ckpt.lm()?;
    let texts = if key == "dataset" {
        load_labeled_csv(input)?.into_iter().map(|r| r.text).collect()
    } else {
        load_corpus_lines(input)?
    };
    let (target, toks) = build_vocab(&texts, s)?;
    let data = NumericalizedCorpus::unlabeled(toks.iter().map(|t| target.numericalize(t)).collect(), SplitTag::Train);
    let (train, valid) = split_valid(data, &cfg)?;
    let (tuned, log) = finetune_lm(lm, &ckpt.vocab, &target, &train, valid.as_ref(), &cfg)?;
    let recorded = log.last().and_then(|e| e.valid_loss);
    println!("fine-tuned language model over {} epochs, vocab {}", log.epochs.len(), target.len());
    let out_ckpt = Checkpoint {
        model: CheckpointModel::Lm(tuned),
        vocab: target,
        seed: cfg.seed,
        phases: with_phase(&ckpt.phases, "lm-finetune"),
        recorded_valid_loss: recorded,
        config: snapshot("finetune-lm", &[("checkpoint", checkpoint), (key, input)], s, Some(&cfg)),
        optimizer: None,
    };
    save(&out_ckpt, out, &log)
}

fn finetune_clf_cmd(checkpoint: &Path, dataset: &Path, valid: Option<&Path>, s: &Settings, out: Option<&Path>) -> Outcome {
    let mut inputs = vec![checkpoint, dataset];
    inputs.extend(valid);
    require_inputs(&inputs)?;
    let out = require_out(out, "finetune-clf")?;
    let ckpt = load_checkpoint(checkpoint, s)?;
    let lm = ckpt.lm()?;
    let mut cfg = PhaseConfig::finetune_classifier(lm.n_groups());
    s.apply(&mut cfg)?;
    let train = numericalize_labeled(&load_labeled_csv(dataset)?, &ckpt.vocab, SplitTag::Train);
    let valid_corpus = valid
        .map(|p| load_labeled_csv(p).map(|r| numericalize_labeled(&r, &ckpt.vocab, SplitTag::Valid)))
        .transpose()?;
    let (clf, log) = finetune_classifier(lm, &train, valid_corpus.as_ref(), &cfg)?;
    if let Some(last) = log.last() {
        match last.valid_accuracy {
            Some(a) => println!("trained classifier, valid accuracy={a:.6}"),
            None => println!("trained classifier, final train loss={:.6}", last.train_loss),
        }
    }
    let mut named = vec![("checkpoint", checkpoint), ("dataset", dataset)];
    if let Some(v) = valid {
        named.push(("valid", v));
    }
    let out_ckpt = Checkpoint {
        model: CheckpointModel::Classifier(clf),
        vocab: ckpt.vocab.clone(),
        seed: cfg.seed,
        phases: with_phase(&ckpt.phases, "clf-finetune"),
        recorded_valid_loss: log.last().and_then(|e| e.valid_loss),
        config: snapshot("finetune-clf", &named, s, Some(&cfg)),
        optimizer: None,
    };
    save(&out_ckpt, out, &log)
}

fn eval_cmd(checkpoint: &Path, dataset: &Path, s: &Settings) -> Outcome {
    require_inputs(&[checkpoint, dataset])?;
    let ckpt = load_checkpoint(checkpoint, s)?;
    let clf = ckpt.classifier()?;
    let corpus = numericalize_labeled(&load_labeled_csv(dataset)?, &ckpt.vocab, SplitTag::Test);
    let r = evaluate(clf, &corpus)?;
    println!("accuracy={:.6}, loss={:.6}, n={}", r.accuracy, r.mean_loss, r.n);
    Ok(())
}

fn predict_cmd(checkpoint: &Path, texts: &[String], s: &Settings) -> Outcome {
    require_inputs(&[checkpoint])?;
    let ckpt = load_checkpoint(checkpoint, s)?;
    let clf = ckpt.classifier()?;
    let docs: Vec<Vec<u32>> = texts.iter().map(|t| ckpt.vocab.numericalize(&preprocess(t))).collect();
    let probs = clf.classify(&docs)?.softmax();
    for r in 0..docs.len() {
        let row = probs.row(r);
        let idx = usize::from(row[1] > row[0]);
        let label = Label::from_index(idx).expect("binary head");
        println!("label={idx} ({}), probability={:.6}", label.name(), row[idx].as_f64());
    }
    Ok(())
}

fn degrade_cmd(checkpoint: &Path, train: &Path, test: &Path, s: &Settings, out: Option<&Path>) -> Outcome {
    require_inputs(&[checkpoint, train, test])?;
    let out = require_out(out, "degrade")?;
    let ckpt = load_checkpoint(checkpoint, s)?;
    let lm = ckpt.lm()?;
    let mut cfg = SuiteConfig::new(lm.n_groups());
    if let Some(f) = s.get_list("fractions")? {
        cfg.fractions = f;
    }
    cfg.repeats = s.get_or("repeats", cfg.repeats)?;
    cfg.base_seed = s.get_or("seed", cfg.base_seed)?;
    cfg.max_vocab = s.get_or("max_vocab", cfg.max_vocab)?;
    cfg.min_freq = s.get_or("min_freq", cfg.min_freq)?;
    cfg.parallel = s.get_or("parallel", cfg.parallel)?;
    s.apply(&mut cfg.clf)?;
    if s.get_or("lm_finetune", true)? {
        if let Some(lm_cfg) = cfg.lm.as_mut() {
            s.apply(lm_cfg)?;
        }
    } else {
        cfg.lm = None;
    }
    let train_records = load_labeled_csv(train)?;
    let test_records = load_labeled_csv(test)?;
    let extra = snapshot("degrade", &[("checkpoint", checkpoint), ("train", train), ("test", test)], s, None);
    let finish = |mut report: DegradationReport| -> Result<(), Failure> {
        report.config.extend(extra.iter().cloned());
        write(out, &report.to_csv())?;
        print!("{}", report.to_table());
        println!("report: {}", out.display());
        Ok(())
    };
    match run_degradation_suite(lm, &ckpt.vocab, &train_records, &test_records, &cfg) {
        Ok(report) => finish(report),
        Err(Error::SuiteAborted { completed, partial, source }) => {
            finish(*partial)?;
            Err(Error::SuiteAborted {
                completed,
                partial: Box::default(),
                source,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

fn top_losses_cmd(checkpoint: &Path, dataset: &Path, s: &Settings, out: Option<&Path>) -> Outcome {
    require_inputs(&[checkpoint, dataset])?;
    let ckpt = load_checkpoint(checkpoint, s)?;
    let clf = ckpt.classifier()?;
    let records = load_labeled_csv(dataset)?;
    let k = s.get_or("k", 10usize.min(records.len()))?;
    let ranked = top_losses(clf, &ckpt.vocab, &records, k)?;
    for (i, r) in ranked.iter().enumerate() {
        println!(
            "{}\tloss={:.6}\ttarget={}\tpredicted={}\tprobability={:.6}\t{}",
            i + 1,
            r.loss,
            r.target.index(),
            r.predicted.index(),
            r.probability,
            r.text
        );
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Runtime(Error::invalid(e.to_string())))?;
        let csv_err = |e: csv::Error| Failure::Runtime(Error::invalid(e.to_string()));
        w.write_record(["rank", "loss", "target", "predicted", "probability", "text"]).map_err(csv_err)?;
        for (i, r) in ranked.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                format!("{:.6}", r.loss),
                r.target.index().to_string(),
                r.predicted.index().to_string(),
                format!("{:.6}", r.probability),
                r.text.clone(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Failure::Runtime(Error::io(path, e)))?;
    }
    Ok(())
}

pub fn run(command: &Command, s: &Settings, out: Option<&Path>) -> Outcome {
    match command {
        Command::Pretrain { corpus } => pretrain(corpus, s, out),
        Command::FinetuneLm { checkpoint, dataset, corpus } => {
            finetune_lm_cmd(checkpoint, dataset.as_deref(), corpus.as_deref(), s, out)
        }
        Command::FinetuneClf { checkpoint, dataset, valid } => finetune_clf_cmd(checkpoint, dataset, valid.as_deref(), s, out),
        Command::Eval { checkpoint, dataset } => eval_cmd(checkpoint, dataset, s),
        Command::Predict { checkpoint, texts } => predict_cmd(checkpoint, texts, s),
        Command::Degrade { checkpoint, train, test } => degrade_cmd(checkpoint, train, test, s, out),
        Command::TopLosses { checkpoint, dataset } => top_losses_cmd(checkpoint, dataset, s, out),
    }
}
