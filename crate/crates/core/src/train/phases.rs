use std::time::Instant;

use super::data::{batchify, lm_stream, lm_windows};
use super::metrics::{EpochMetrics, MetricsLog};
use super::optim::{clip_grad_norm, Optimizer, OptimizerKind};
use super::schedule::{discriminative_lrs, one_cycle, OneCycleConfig};
use crate::error::{Error, Result};
use crate::evalbench::evaluate;
use crate::model::{pad_batch, ArchConfig, AwdLstm, DropoutConfig, LstmState, Mode, TextClassifier};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamStore};
use crate::textpipe::{split_indices, NumericalizedCorpus, SplitTag, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    LmFinetune,
    ClfFinetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::LmFinetune => "lm-finetune",
            Phase::ClfFinetune => "clf-finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "lm-finetune" => Ok(Phase::LmFinetune),
            "clf-finetune" => Ok(Phase::ClfFinetune),
            _ => Err(Error::invalid(format!("unknown phase `{s}`"))),
        }
    }
}

/// One 1cycle run over a subset of layer groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub epochs: usize,
    /// Peak rate of the topmost group.
    pub lr: f64,
    /// Number of trainable groups counted from the top; `None` trains all.
    pub unfrozen_groups: Option<usize>,
    /// Discriminative spread factor; `None` gives every trainable group `lr`.
    pub lr_spread: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseConfig {
    pub phase: Phase,
    pub schedule_name: String,
    pub stages: Vec<Stage>,
    pub batch_size: usize,
    pub bptt_len: usize,
    pub max_len: usize,
    pub dropout_multiplier: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// `(mom_high, mom_low, mom_final)` for every stage's 1cycle.
    pub moms: (f64, f64, f64),
    pub pct_start: f64,
    pub div_start: f64,
    pub div_final: f64,
    pub ar_alpha: f64,
    pub tar_beta: f64,
    pub clip: Option<f64>,
    /// Held-out share of the corpus during pretraining.
    pub valid_fraction: f64,
    pub optimizer: OptimizerKind,
}

impl PhaseConfig {
    fn base(phase: Phase, stages: Vec<Stage>) -> Self {
        Self {
            phase,
            schedule_name: "default".into(),
            stages,
            batch_size: 64,
            bptt_len: 70,
            max_len: crate::model::DEFAULT_MAX_LEN,
            dropout_multiplier: 1.0,
            weight_decay: 0.01,
            seed: 0,
            moms: (0.8, 0.7, 0.8),
            pct_start: 0.25,
            div_start: 25.0,
            div_final: 1e5,
            ar_alpha: 2.0,
            tar_beta: 1.0,
            clip: None,
            valid_fraction: 0.0,
            optimizer: OptimizerKind::Adam,
        }
    }

    /// 20 epochs at 1e-2, batch 128, dropout multiplier 0.5, 10% held out.
    pub fn pretrain() -> Self {
        let mut c = Self::base(
            Phase::Pretrain,
            vec![Stage {
                epochs: 20,
                lr: 1e-2,
                unfrozen_groups: None,
                lr_spread: None,
            }],
        );
        c.batch_size = 128;
        c.dropout_multiplier = 0.5;
        c.valid_fraction = 0.1;
        c
    }

    /// Embedding/decoder group alone for 1 epoch at 4e-2, then everything for 7 epochs at 4e-3.
    pub fn finetune_lm() -> Self {
        let mut c = Self::base(
            Phase::LmFinetune,
            vec![
                Stage {
                    epochs: 1,
                    lr: 4e-2,
                    unfrozen_groups: Some(1),
                    lr_spread: None,
                },
                Stage {
                    epochs: 7,
                    lr: 4e-3,
                    unfrozen_groups: None,
                    lr_spread: None,
                },
            ],
        );
        c.dropout_multiplier = 0.3;
        c
    }

    /// Gradual unfreezing over `n_groups` stages: stage `k` trains the top
    /// `k + 1` groups at `5e-2 / 2^k` with a 2.6 spread, one epoch each and two
    /// for the last.
    pub fn finetune_classifier(n_groups: usize) -> Self {
        let stages = (0..n_groups)
            .map(|k| Stage {
                epochs: if k + 1 == n_groups { 2 } else { 1 },
                lr: 5e-2 / 2f64.powi(k as i32),
                unfrozen_groups: if k + 1 == n_groups { None } else { Some(k + 1) },
                lr_spread: Some(2.6),
            })
            .collect();
        let mut c = Self::base(Phase::ClfFinetune, stages);
        c.schedule_name = "gradual-unfreezing".into();
        c.dropout_multiplier = 0.3;
        c.weight_decay = 0.1;
        c.moms = (0.8, 0.7, 0.6);
        c
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid("phase needs at least one stage"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.epochs == 0 || !(s.lr > 0.0) || s.unfrozen_groups == Some(0) {
                return Err(Error::invalid(format!(
                    "stage {i}: epochs and unfrozen groups must be >= 1 and lr > 0"
                )));
            }
        }
        if self.batch_size == 0 || self.bptt_len == 0 || self.max_len == 0 {
            return Err(Error::invalid("batch_size, bptt_len and max_len must be >= 1"));
        }
        if !(self.dropout_multiplier >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("dropout multiplier and weight decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::invalid("valid_fraction must lie in [0, 1)"));
        }
        self.schedule(&self.stages[0], 1).validate()
    }

    fn schedule(&self, stage: &Stage, total_steps: usize) -> OneCycleConfig {
        OneCycleConfig {
            lr_max: stage.lr,
            pct_start: self.pct_start,
            div_start: self.div_start,
            div_final: self.div_final,
            mom_high: self.moms.0,
            mom_low: self.moms.1,
            mom_final: self.moms.2,
            total_steps,
        }
    }
}

/// Freezes all but the stage's top groups and returns the peak rate per group.
fn prepare_stage<T: Scalar>(store: &mut ParamStore<T>, stage: &Stage) -> Result<Vec<f64>> {
    let n = store.n_groups();
    let unfrozen = stage.unfrozen_groups.unwrap_or(n);
    if unfrozen > n {
        return Err(Error::invalid(format!(
            "stage unfreezes {unfrozen} groups but the model has {n}"
        )));
    }
    store.freeze_to(n - unfrozen)?;
    let ladder = match stage.lr_spread {
        Some(f) => discriminative_lrs(stage.lr, unfrozen, f)?,
        None => vec![stage.lr; unfrozen],
    };
    let mut lrs = vec![0.0; n - unfrozen];
    lrs.extend(ladder);
    Ok(lrs)
}

fn optimizer_step<T: Scalar>(
    store: &mut ParamStore<T>,
    opt: &mut Optimizer<T>,
    cfg: &PhaseConfig,
    sched: &OneCycleConfig,
    step: usize,
    peaks: &[f64],
    peak: f64,
) -> Result<()> {
    if let Some(c) = cfg.clip {
        clip_grad_norm(store, c);
    }
    let (lr, mom) = one_cycle(step, sched)?;
    let lrs: Vec<f64> = peaks.iter().map(|p| p * lr / peak).collect();
    opt.step(store, &lrs, mom, cfg.weight_decay)
}

/// Language-model loss, next-token accuracy and perplexity over one pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmEval {
    pub loss: f64,
    pub accuracy: f64,
    pub perplexity: f64,
    pub tokens: usize,
}

/// Eval-mode pass over the corpus in document order with carried state.
pub fn evaluate_lm<T: Scalar>(
    model: &AwdLstm<T>,
    corpus: &NumericalizedCorpus,
    batch_size: usize,
    bptt: usize,
) -> Result<LmEval> {
    let rows = batchify(&lm_stream(corpus, None), batch_size)?;
    let mut rng = Rng::new(0);
    let mut state: Option<LstmState<T>> = None;
    let (mut ce_sum, mut correct, mut tokens) = (0.0, 0usize, 0usize);
    for w in lm_windows(&rows, bptt)? {
        let mut g = Graph::new();
        let out = model.forward(&mut g, &w.inputs, state.as_ref(), Mode::Eval, &mut rng)?;
        let (_, ce) = model.loss(&mut g, &out, &w.targets, 0.0, 0.0)?;
        let n = out.batch() * out.steps();
        ce_sum += g.value(ce).item().as_f64() * n as f64;
        let preds = g.value(out.logits).argmax_rows();
        for (t, p) in preds.iter().enumerate() {
            let (step, b) = (t / out.batch(), t % out.batch());
            if w.targets[b][step] as usize == *p {
                correct += 1;
            }
        }
        tokens += n;
        state = Some(out.encoded.state);
    }
    let loss = ce_sum / tokens as f64;
    Ok(LmEval {
        loss,
        accuracy: correct as f64 / tokens as f64,
        perplexity: loss.exp(),
        tokens,
    })
}

fn train_lm<T: Scalar>(
    model: &mut AwdLstm<T>,
    train: &NumericalizedCorpus,
    valid: Option<&NumericalizedCorpus>,
    cfg: &PhaseConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(&AwdLstm<T>, &EpochMetrics),
) -> Result<MetricsLog> {
    cfg.validate()?;
    if train.total_tokens() < 2 {
        return Err(Error::invalid("language-model corpus is empty"));
    }
    train.check_ids(model.arch.vocab_size)?;
    if let Some(v) = valid {
        v.check_ids(model.arch.vocab_size)?;
    }
    model.dropout.multiplier = cfg.dropout_multiplier;
    let n_windows = lm_windows(&batchify(&lm_stream(train, None), cfg.batch_size)?, cfg.bptt_len)?.len();
    let mut opt = Optimizer::new(cfg.optimizer, model.store());
    let mut log = MetricsLog::default();
    for (si, stage) in cfg.stages.iter().enumerate() {
        let peaks = prepare_stage(model.store_mut(), stage)?;
        let sched = cfg.schedule(stage, stage.epochs * n_windows);
        let mut step = 0;
        for epoch in 0..stage.epochs {
            let start = Instant::now();
            let rows = batchify(&lm_stream(train, Some(rng)), cfg.batch_size)?;
            let mut state: Option<LstmState<T>> = None;
            let (mut ce_sum, mut tokens) = (0.0, 0usize);
            for w in lm_windows(&rows, cfg.bptt_len)? {
                let mut g = Graph::new();
                let out = model.forward(&mut g, &w.inputs, state.as_ref(), Mode::Train, rng)?;
                let (total, ce) = model.loss(&mut g, &out, &w.targets, cfg.ar_alpha, cfg.tar_beta)?;
                g.backward(total)?;
                let n = out.batch() * out.steps();
                ce_sum += g.value(ce).item().as_f64() * n as f64;
                tokens += n;
                let store = model.store_mut();
                store.zero_grad();
                g.write_param_grads(store);
                optimizer_step(store, &mut opt, cfg, &sched, step, &peaks, stage.lr)?;
                step += 1;
                state = Some(out.encoded.state);
            }
            let ev = valid
                .filter(|v| v.total_tokens() >= 2)
                .map(|v| evaluate_lm(model, v, cfg.batch_size, cfg.bptt_len))
                .transpose()?;
            let m = EpochMetrics {
                phase: cfg.phase,
                stage: si,
                epoch,
                train_loss: ce_sum / tokens as f64,
                valid_loss: ev.map(|e| e.loss),
                valid_accuracy: ev.map(|e| e.accuracy),
                seconds: start.elapsed().as_secs_f64(),
            };
            on_epoch(model, &m);
            log.push(m);
        }
    }
    model.store_mut().unfreeze_all();
    Ok(log)
}

pub struct PretrainOutcome<T> {
    /// Parameters after the last epoch.
    pub model: AwdLstm<T>,
    /// Parameters at the epoch with the lowest validation loss (the final
    /// model when nothing is held out).
    pub best: AwdLstm<T>,
    pub best_valid_loss: Option<f64>,
    pub metrics: MetricsLog,
}

/// Trains a fresh language model from a numericalised corpus, holding out
/// `cfg.valid_fraction` of the documents for validation.
pub fn pretrain_lm<T: Scalar>(
    corpus: &NumericalizedCorpus,
    arch: ArchConfig,
    cfg: &PhaseConfig,
) -> Result<PretrainOutcome<T>> {
    cfg.validate()?;
    if corpus.total_tokens() < 2 {
        return Err(Error::invalid("language-model corpus is empty"));
    }
    let (train, valid) = if cfg.valid_fraction > 0.0 && corpus.len() >= 2 {
        let parts = split_indices(corpus.len(), &[1.0 - cfg.valid_fraction, cfg.valid_fraction], cfg.seed)?;
        let pick = |idx: &[usize], tag| {
            NumericalizedCorpus::unlabeled(idx.iter().map(|&i| corpus.streams[i].clone()).collect(), tag)
        };
        (pick(&parts[0], SplitTag::Train), Some(pick(&parts[1], SplitTag::Valid)))
    } else {
        (corpus.clone(), None)
    };
    let mut rng = Rng::new(cfg.seed);
    let mut model = AwdLstm::new(arch, DropoutConfig::with_multiplier(cfg.dropout_multiplier), &mut rng)?;
    let mut best: Option<(f64, AwdLstm<T>)> = None;
    let metrics = train_lm(&mut model, &train, valid.as_ref(), cfg, &mut rng, |m, e| {
        if let Some(v) = e.valid_loss {
            if best.as_ref().map_or(true, |(b, _)| v < *b) {
                let mut snap = m.clone();
                snap.store_mut().unfreeze_all();
                best = Some((v, snap));
            }
        }
    })?;
    let (best_valid_loss, best) = match best {
        Some((v, m)) => (Some(v), m),
        None => (None, model.clone()),
    };
    Ok(PretrainOutcome {
        model,
        best,
        best_valid_loss,
        metrics,
    })
}

/// Maps `pretrained` onto `target_vocab` and fine-tunes it on the target corpus
/// (already numericalised with `target_vocab`).
pub fn finetune_lm<T: Scalar>(
    pretrained: &AwdLstm<T>,
    pretrained_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    train: &NumericalizedCorpus,
    valid: Option<&NumericalizedCorpus>,
    cfg: &PhaseConfig,
) -> Result<(AwdLstm<T>, MetricsLog)> {
    let mut model = pretrained.transfer_vocab(pretrained_vocab, target_vocab)?;
    let mut rng = Rng::new(cfg.seed);
    let log = train_lm(&mut model, train, valid, cfg, &mut rng, |_, _| {})?;
    Ok((model, log))
}

fn both_labels(corpus: &NumericalizedCorpus) -> Result<&[crate::textpipe::Label]> {
    let labels = corpus
        .labels
        .as_deref()
        .ok_or_else(|| Error::invalid("classifier corpus has no labels"))?;
    let hate = labels.iter().filter(|l| l.index() == 1).count();
    if hate == 0 || hate == labels.len() {
        return Err(Error::invalid("classifier corpus must contain both labels"));
    }
    Ok(labels)
}

/// Builds a classifier on the language model's encoder and trains it with
/// gradual unfreezing.
pub fn finetune_classifier<T: Scalar>(
    lm: &AwdLstm<T>,
    train: &NumericalizedCorpus,
    valid: Option<&NumericalizedCorpus>,
    cfg: &PhaseConfig,
) -> Result<(TextClassifier<T>, MetricsLog)> {
    cfg.validate()?;
    both_labels(train)?;
    let mut rng = Rng::new(cfg.seed);
    let mut clf = TextClassifier::from_lm(lm, DropoutConfig::with_multiplier(cfg.dropout_multiplier), &mut rng)?;
    let log = train_classifier(&mut clf, train, valid, cfg, &mut rng)?;
    Ok((clf, log))
}

/// Runs the configured stages on an existing classifier.
pub fn train_classifier<T: Scalar>(
    clf: &mut TextClassifier<T>,
    train: &NumericalizedCorpus,
    valid: Option<&NumericalizedCorpus>,
    cfg: &PhaseConfig,
    rng: &mut Rng,
) -> Result<MetricsLog> {
    cfg.validate()?;
    let labels = both_labels(train)?;
    train.check_ids(clf.arch.vocab_size)?;
    clf.dropout.multiplier = cfg.dropout_multiplier;
    clf.max_len = cfg.max_len;
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut opt = Optimizer::new(cfg.optimizer, clf.store());
    let mut log = MetricsLog::default();
    for (si, stage) in cfg.stages.iter().enumerate() {
        let peaks = prepare_stage(clf.store_mut(), stage)?;
        let sched = cfg.schedule(stage, stage.epochs * batches_per_epoch);
        let mut step = 0;
        for epoch in 0..stage.epochs {
            let start = Instant::now();
            let mut order: Vec<usize> = (0..train.len()).collect();
            rng.shuffle(&mut order);
            let (mut loss_sum, mut seen) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let docs: Vec<&[u32]> = chunk.iter().map(|&i| train.streams[i].as_slice()).collect();
                let targets: Vec<usize> = chunk.iter().map(|&i| labels[i].index()).collect();
                let (batch, lengths) = pad_batch(&docs, clf.max_len)?;
                let mut g = Graph::new();
                let logits = clf.forward(&mut g, &batch, &lengths, Mode::Train, rng)?;
                let loss = g.cross_entropy(logits, &targets)?;
                g.backward(loss)?;
                loss_sum += g.value(loss).item().as_f64() * chunk.len() as f64;
                seen += chunk.len();
                let store = clf.store_mut();
                store.zero_grad();
                g.write_param_grads(store);
                optimizer_step(store, &mut opt, cfg, &sched, step, &peaks, stage.lr)?;
                step += 1;
            }
            let ev = valid.map(|v| evaluate(clf, v)).transpose()?;
            log.push(EpochMetrics {
                phase: cfg.phase,
                stage: si,
                epoch,
                train_loss: loss_sum / seen as f64,
                valid_loss: ev.map(|e| e.mean_loss),
                valid_accuracy: ev.map(|e| e.accuracy),
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    clf.store_mut().unfreeze_all();
    Ok(log)
}
