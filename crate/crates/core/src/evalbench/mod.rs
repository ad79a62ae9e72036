//! Classifier metrics, the reduced-training-data degradation protocol and
//! per-example error analysis.

mod report;
mod suite;

pub use report::{DegradationReport, RunRecord, SplitRow};
pub use suite::{run_degradation_suite, subsample_train, SuiteConfig};

use crate::error::{Error, Result};
use crate::model::TextClassifier;
use crate::scalar::Scalar;
use crate::textpipe::{Label, LabeledRecord, NumericalizedCorpus, Vocabulary};

const EVAL_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub n: usize,
    pub correct: usize,
}

/// Per-document cross-entropy, predicted label and its probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExampleScore {
    pub loss: f64,
    pub predicted: Label,
    pub probability: f64,
}

/// Eval-mode scores for every labeled document, in corpus order.
pub fn score_examples<T: Scalar>(
    clf: &TextClassifier<T>,
    corpus: &NumericalizedCorpus,
) -> Result<Vec<ExampleScore>> {
    let labels = corpus
        .labels
        .as_deref()
        .ok_or_else(|| Error::invalid("evaluation corpus has no labels"))?;
    if corpus.is_empty() {
        return Err(Error::invalid("evaluation corpus is empty"));
    }
    let mut out = Vec::with_capacity(corpus.len());
    for (docs, targets) in corpus.streams.chunks(EVAL_BATCH).zip(labels.chunks(EVAL_BATCH)) {
        let logp = clf.classify(docs)?.log_softmax();
        for (r, target) in targets.iter().enumerate() {
            let row = logp.row(r);
            let pred = (0..row.len())
                .fold(0, |best, j| if row[j] > row[best] { j } else { best });
            out.push(ExampleScore {
                loss: -row[target.index()].as_f64(),
                predicted: Label::from_index(pred).expect("binary head"),
                probability: row[pred].as_f64().exp(),
            });
        }
    }
    Ok(out)
}

/// Accuracy and mean cross-entropy over a labeled corpus, dropout disabled.
pub fn evaluate<T: Scalar>(clf: &TextClassifier<T>, corpus: &NumericalizedCorpus) -> Result<EvalResult> {
    let scores = score_examples(clf, corpus)?;
    let labels = corpus.labels.as_deref().unwrap_or_default();
    let correct = scores.iter().zip(labels).filter(|(s, l)| s.predicted == **l).count();
    let n = scores.len();
    Ok(EvalResult {
        accuracy: correct as f64 / n as f64,
        mean_loss: scores.iter().map(|s| s.loss).sum::<f64>() / n as f64,
        n,
        correct,
    })
}

/// `100·(full − reduced)/full`.
pub fn degradation_pct(metric_full: f64, metric_reduced: f64) -> Result<f64> {
    if !(metric_full > 0.0) {
        return Err(Error::invalid(format!(
            "full-data metric must be positive, got {metric_full}"
        )));
    }
    Ok(100.0 * (metric_full - metric_reduced) / metric_full)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRankedExample {
    pub text: String,
    pub target: Label,
    pub predicted: Label,
    pub loss: f64,
    pub probability: f64,
}

/// The `k` records with the highest loss, most confidently wrong first.
pub fn top_losses<T: Scalar>(
    clf: &TextClassifier<T>,
    vocab: &Vocabulary,
    records: &[LabeledRecord],
    k: usize,
) -> Result<Vec<LossRankedExample>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > records.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} available examples",
            records.len()
        )));
    }
    let corpus = crate::textpipe::numericalize_labeled(records, vocab, crate::textpipe::SplitTag::Test);
    let scores = score_examples(clf, &corpus)?;
    let mut ranked: Vec<LossRankedExample> = records
        .iter()
        .zip(scores)
        .map(|(r, s)| LossRankedExample {
            text: r.text.clone(),
            target: r.label,
            predicted: s.predicted,
            loss: s.loss,
            probability: s.probability,
        })
        .collect();
    ranked.sort_by(|a, b| b.loss.total_cmp(&a.loss));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LabelCounts {
    pub not_hate: usize,
    pub hate: usize,
}

/// Number of documents containing `token`, split by label.
pub fn vocab_label_association(corpus: &NumericalizedCorpus, token: u32) -> LabelCounts {
    let mut counts = LabelCounts::default();
    let Some(labels) = corpus.labels.as_deref() else {
        return counts;
    };
    for (doc, label) in corpus.streams.iter().zip(labels) {
        if doc.contains(&token) {
            match label {
                Label::NotHate => counts.not_hate += 1,
                Label::Hate => counts.hate += 1,
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchConfig, DropoutConfig};
    use crate::rng::Rng;
    use crate::textpipe::SplitTag;

    fn labeled(docs: Vec<Vec<u32>>, labels: &[usize]) -> NumericalizedCorpus {
        let l = labels.iter().map(|&i| Label::from_index(i).unwrap()).collect();
        NumericalizedCorpus::labeled(docs, l, SplitTag::Test).unwrap()
    }

    #[test]
    fn degradation_exact_cases() {
        assert_eq!(degradation_pct(76.84, 76.84).unwrap(), 0.0);
        assert_eq!(degradation_pct(80.0, 76.0).unwrap(), 5.0);
        let d = degradation_pct(76.84, 76.84 - 4.01).unwrap();
        assert!((d - 5.26).abs() <= 0.15, "{d}");
        assert!(degradation_pct(50.0, 60.0).unwrap() < 0.0);
        assert!(degradation_pct(0.0, 1.0).is_err());
        assert!(degradation_pct(-1.0, 1.0).is_err());
    }

    #[test]
    fn association_counts() {
        let c = labeled(vec![vec![5, 7], vec![7, 7], vec![9], vec![7]], &[1, 1, 0, 1]);
        assert_eq!(vocab_label_association(&c, 7), LabelCounts { not_hate: 0, hate: 3 });
        assert_eq!(vocab_label_association(&c, 42), LabelCounts::default());
    }

    fn zero_head_clf(bias: [f64; 2]) -> TextClassifier<f64> {
        let mut clf =
            TextClassifier::<f64>::new(ArchConfig::custom(10, 3, 4, 1), DropoutConfig::none(), &mut Rng::new(1)).unwrap();
        let head = clf.head().clone();
        let s = clf.store_mut();
        s.get_mut(head.w2).value.data_mut().iter_mut().for_each(|w| *w = 0.0);
        s.get_mut(head.b2).value.data_mut().copy_from_slice(&bias);
        clf
    }

    #[test]
    fn constant_predictor_accuracy_is_label_share() {
        let clf = zero_head_clf([1.0, -1.0]);
        let docs = (0..10).map(|i| vec![2, 3 + (i % 5) as u32]).collect();
        let c = labeled(docs, &[0, 0, 0, 0, 0, 0, 1, 1, 1, 1]);
        let r = evaluate(&clf, &c).unwrap();
        assert_eq!(r.accuracy, 0.6);
        assert_eq!(r.correct, 6);
        let p0 = 1.0 / (1.0 + (-2.0f64).exp());
        let expected = -(0.6 * p0.ln() + 0.4 * (1.0 - p0).ln());
        assert!((r.mean_loss - expected).abs() < 1e-12);
        assert_eq!(evaluate(&clf, &c).unwrap(), r);
    }

    #[test]
    fn empty_or_unlabeled_rejected() {
        let clf = zero_head_clf([0.0, 0.0]);
        assert!(evaluate(&clf, &labeled(vec![], &[])).is_err());
        let u = NumericalizedCorpus::unlabeled(vec![vec![2]], SplitTag::Test);
        assert!(evaluate(&clf, &u).is_err());
    }
}
