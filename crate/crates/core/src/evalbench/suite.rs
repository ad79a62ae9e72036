use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::report::{DegradationReport, RunRecord, SplitRow};
use super::{degradation_pct, evaluate};
use crate::error::{Error, Result};
use crate::model::AwdLstm;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::textpipe::{
    numericalize_labeled, preprocess, LabeledRecord, NumericalizedCorpus, SplitTag, Vocabulary,
    DEFAULT_MAX_VOCAB,
};
use crate::train::{finetune_classifier, finetune_lm, PhaseConfig};

const MAX_RESAMPLES: usize = 1000;

/// Uniform subset of `round(fraction·n)` records without replacement,
/// resampled until both labels appear. Records keep their original order.
pub fn subsample_train(train: &[LabeledRecord], fraction: f64, seed: u64) -> Result<Vec<LabeledRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} not in (0, 1]")));
    }
    let n = (fraction * train.len() as f64).round() as usize;
    if n < 2 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {} records leaves fewer than 2 examples",
            train.len()
        )));
    }
    let has_both = |rs: &mut dyn Iterator<Item = &LabeledRecord>| {
        let mut seen = [false; 2];
        rs.for_each(|r| seen[r.label.index()] = true);
        seen[0] && seen[1]
    };
    if !has_both(&mut train.iter()) {
        return Err(Error::invalid("training set lacks one of the labels"));
    }
    if n == train.len() {
        return Ok(train.to_vec());
    }
    let mut rng = Rng::new(seed);
    for _ in 0..MAX_RESAMPLES {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(n);
        if has_both(&mut idx.iter().map(|&i| &train[i])) {
            idx.sort_unstable();
            return Ok(idx.into_iter().map(|i| train[i].clone()).collect());
        }
    }
    Err(Error::invalid(format!(
        "no subsample of {n} records with both labels after {MAX_RESAMPLES} draws"
    )))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub fractions: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    /// Language-model fine-tuning on each subsample; `None` skips it.
    pub lm: Option<PhaseConfig>,
    pub clf: PhaseConfig,
    pub max_vocab: usize,
    pub min_freq: usize,
    pub parallel: bool,
}

impl SuiteConfig {
    pub fn new(n_groups: usize) -> Self {
        Self {
            fractions: vec![1.0, 0.5, 0.1],
            repeats: 5,
            base_seed: 0,
            lm: Some(PhaseConfig::finetune_lm()),
            clf: PhaseConfig::finetune_classifier(n_groups),
            max_vocab: DEFAULT_MAX_VOCAB,
            min_freq: 1,
            parallel: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if !self.fractions.contains(&1.0) {
            return Err(Error::invalid("fractions must include 1.0"));
        }
        Ok(())
    }

    fn snapshot(&self) -> Vec<(String, String)> {
        let fr: Vec<String> = self.fractions.iter().map(|f| f.to_string()).collect();
        let mut v = vec![
            ("fractions".to_string(), fr.join(";")),
            ("repeats".to_string(), self.repeats.to_string()),
            ("max_vocab".to_string(), self.max_vocab.to_string()),
            ("min_freq".to_string(), self.min_freq.to_string()),
            ("clf_schedule".to_string(), self.clf.schedule_name.clone()),
            ("clf_epochs".to_string(), self.clf.total_epochs().to_string()),
        ];
        if let Some(lm) = &self.lm {
            v.push(("lm_epochs".to_string(), lm.total_epochs().to_string()));
        }
        v
    }
}

/// Hex SHA-256 over the test records' label and text.
fn test_checksum(test: &[LabeledRecord]) -> String {
    let mut h = Sha256::new();
    for r in test {
        h.update([r.label.index() as u8]);
        h.update((r.text.len() as u64).to_le_bytes());
        h.update(r.text.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn run_one<T: Scalar>(
    pretrained: &AwdLstm<T>,
    pretrained_vocab: &Vocabulary,
    train: &[LabeledRecord],
    test: &[LabeledRecord],
    cfg: &SuiteConfig,
    fraction: f64,
    repeat: usize,
) -> Result<RunRecord> {
    let seed = cfg.base_seed + repeat as u64;
    let sub = subsample_train(train, fraction, seed)?;
    let tokens: Vec<Vec<String>> = sub.iter().map(|r| preprocess(&r.text)).collect();
    let vocab = Vocabulary::build(tokens.iter().flatten(), cfg.max_vocab, cfg.min_freq)?;
    let lm = match &cfg.lm {
        Some(lm_cfg) => {
            let streams = tokens.iter().map(|t| vocab.numericalize(t)).collect();
            let corpus = NumericalizedCorpus::unlabeled(streams, SplitTag::Train);
            let lm_cfg = PhaseConfig {
                seed,
                ..lm_cfg.clone()
            };
            finetune_lm(pretrained, pretrained_vocab, &vocab, &corpus, None, &lm_cfg)?.0
        }
        None => pretrained.transfer_vocab(pretrained_vocab, &vocab)?,
    };
    let train_corpus = numericalize_labeled(&sub, &vocab, SplitTag::Train);
    let clf_cfg = PhaseConfig {
        seed,
        ..cfg.clf.clone()
    };
    let (clf, _) = finetune_classifier(&lm, &train_corpus, None, &clf_cfg)?;
    let checksum = test_checksum(test);
    let result = evaluate(&clf, &numericalize_labeled(test, &vocab, SplitTag::Test))?;
    Ok(RunRecord {
        fraction,
        repeat,
        seed,
        n_train: sub.len(),
        accuracy: result.accuracy,
        mean_loss: result.mean_loss,
        test_checksum: checksum,
    })
}

fn assemble(cfg: &SuiteConfig, runs: &[RunRecord], checksum: String) -> DegradationReport {
    let mut rows: Vec<SplitRow> = cfg
        .fractions
        .iter()
        .filter_map(|&f| {
            let rs: Vec<RunRecord> = runs.iter().filter(|r| r.fraction == f).cloned().collect();
            if rs.len() < cfg.repeats {
                return None;
            }
            let n = rs.len() as f64;
            let accs = rs.iter().map(|r| r.accuracy);
            Some(SplitRow {
                fraction: f,
                n_train: rs[0].n_train,
                repeats: rs.len(),
                mean_accuracy: rs.iter().map(|r| r.accuracy).sum::<f64>() / n,
                mean_loss: rs.iter().map(|r| r.mean_loss).sum::<f64>() / n,
                min_accuracy: accs.clone().fold(f64::INFINITY, f64::min),
                max_accuracy: accs.fold(f64::NEG_INFINITY, f64::max),
                degradation_pct: None,
                runs: rs,
            })
        })
        .collect();
    let metric_full = rows.iter().find(|r| r.fraction == 1.0).map(|r| r.mean_accuracy);
    if let Some(full) = metric_full {
        for r in &mut rows {
            r.degradation_pct = degradation_pct(full, r.mean_accuracy).ok();
        }
    }
    DegradationReport {
        rows,
        metric_full,
        test_checksum: checksum,
        base_seed: cfg.base_seed,
        config: cfg.snapshot(),
    }
}

/// Fine-tunes and evaluates `repeats` models per training fraction against a
/// shared test set, then averages accuracy per fraction before computing
/// degradation against the full-data row. Repeat `i` uses seed `base_seed + i`.
pub fn run_degradation_suite<T: Scalar>(
    pretrained: &AwdLstm<T>,
    pretrained_vocab: &Vocabulary,
    train: &[LabeledRecord],
    test: &[LabeledRecord],
    cfg: &SuiteConfig,
) -> Result<DegradationReport> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let checksum = test_checksum(test);
    let jobs: Vec<(f64, usize)> = cfg
        .fractions
        .iter()
        .flat_map(|&f| (0..cfg.repeats).map(move |r| (f, r)))
        .collect();
    let job = |&(f, r): &(f64, usize)| run_one(pretrained, pretrained_vocab, train, test, cfg, f, r);
    let results: Vec<Result<RunRecord>> = if cfg.parallel {
        jobs.par_iter().map(job).collect()
    } else {
        jobs.iter().map(job).collect()
    };
    let mut runs = Vec::with_capacity(results.len());
    let mut failure = None;
    for res in results {
        match res {
            Ok(run) if run.test_checksum != checksum => {
                failure.get_or_insert(Error::invalid("test set changed between runs"));
            }
            Ok(run) => runs.push(run),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    let report = assemble(cfg, &runs, checksum);
    match failure {
        None => Ok(report),
        Some(e) => Err(Error::SuiteAborted {
            completed: runs.len(),
            partial: Box::new(report),
            source: Box::new(e),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::Label;

    fn records(n: usize, hate_every: usize) -> Vec<LabeledRecord> {
        (0..n)
            .map(|i| LabeledRecord {
                text: format!("doc {i}"),
                label: if i % hate_every == 0 { Label::Hate } else { Label::NotHate },
            })
            .collect()
    }

    #[test]
    fn subsample_sizes() {
        let r = records(10_000, 3);
        assert_eq!(subsample_train(&r, 0.5, 1).unwrap().len(), 5000);
        assert_eq!(subsample_train(&r, 0.1, 1).unwrap().len(), 1000);
        assert_eq!(subsample_train(&r, 1.0, 1).unwrap(), r);
    }

    #[test]
    fn subsample_deterministic_and_distinct() {
        let r = records(200, 4);
        let a = subsample_train(&r, 0.3, 9).unwrap();
        assert_eq!(a, subsample_train(&r, 0.3, 9).unwrap());
        assert_ne!(a, subsample_train(&r, 0.3, 10).unwrap());
        let mut texts: Vec<&str> = a.iter().map(|x| x.text.as_str()).collect();
        texts.dedup();
        assert_eq!(texts.len(), a.len());
    }

    #[test]
    fn subsample_enforces_both_labels() {
        let r = records(100, 50);
        for seed in 0..20 {
            let s = subsample_train(&r, 0.03, seed).unwrap();
            assert!(s.iter().any(|x| x.label == Label::Hate));
            assert!(s.iter().any(|x| x.label == Label::NotHate));
        }
    }

    #[test]
    fn subsample_errors() {
        let r = records(10, 2);
        assert!(subsample_train(&r, 0.1, 0).is_err());
        assert!(subsample_train(&r, 0.0, 0).is_err());
        assert!(subsample_train(&r, 1.5, 0).is_err());
        assert!(subsample_train(&records(10, 1), 1.0, 0).is_err());
    }

    #[test]
    fn checksum_sensitive_to_content() {
        let a = records(5, 2);
        let mut b = a.clone();
        b[3].text.push('!');
        assert_eq!(test_checksum(&a), test_checksum(&a.clone()));
        assert_ne!(test_checksum(&a), test_checksum(&b));
    }
}
