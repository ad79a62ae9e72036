#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ulmfit::model::{ArchConfig, AwdLstm, DropoutConfig, Mode, TextClassifier};
use ulmfit::tensor::{Graph, ParamStore};
use ulmfit::textpipe::{
    load_corpus_lines, preprocess, LabeledRecord, NumericalizedCorpus, SplitTag, Vocabulary, DEFAULT_MAX_VOCAB,
};
use ulmfit::Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_corpus() -> (Vocabulary, NumericalizedCorpus) {
    let lines = load_corpus_lines(&fixture("lm_corpus.txt")).unwrap();
    let toks: Vec<Vec<String>> = lines.iter().map(|l| preprocess(l)).collect();
    let vocab = Vocabulary::build(toks.iter().flatten(), DEFAULT_MAX_VOCAB, 1).unwrap();
    let streams = toks.iter().map(|t| vocab.numericalize(t)).collect();
    (vocab, NumericalizedCorpus::unlabeled(streams, SplitTag::Train))
}

pub fn vocab_for(records: &[LabeledRecord]) -> Vocabulary {
    let toks: Vec<Vec<String>> = records.iter().map(|r| preprocess(&r.text)).collect();
    Vocabulary::build(toks.iter().flatten(), DEFAULT_MAX_VOCAB, 1).unwrap()
}

/// Largest per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the
/// analytic gradient in `grads` and central differences of `loss`, together
/// with the offending parameter name.
pub fn max_relative_error(
    store: &mut ParamStore<f64>,
    grads: &ParamStore<f64>,
    h: f64,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
) -> (f64, String) {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut worst = (0.0, String::new());
    for id in ids {
        let n = store.get(id).value.len();
        let mut numeric = vec![0.0; n];
        for k in 0..n {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + h;
            let up = loss(store);
            store.get_mut(id).value.data_mut()[k] = orig - h;
            let down = loss(store);
            store.get_mut(id).value.data_mut()[k] = orig;
            numeric[k] = (up - down) / (2.0 * h);
        }
        let analytic = grads.get(id).grad.data();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        if rel > worst.0 {
            worst = (rel, store.get(id).name.clone());
        }
    }
    worst
}

pub fn lm_batch() -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let inputs = vec![vec![2, 7, 3, 9, 10, 4], vec![2, 5, 8, 8, 6, 1]];
    let targets = vec![vec![7, 3, 9, 10, 4, 5], vec![5, 8, 8, 6, 1, 2]];
    (inputs, targets)
}

/// LM loss (cross-entropy plus both activation penalties) with a fixed
/// dropout seed, so masks are identical across evaluations.
pub fn lm_loss(model: &AwdLstm<f64>, store: &ParamStore<f64>, seed: u64, write: Option<&mut ParamStore<f64>>) -> f64 {
    let mut m = model.clone();
    m.store_mut().adopt_values(store).unwrap();
    let (inputs, targets) = lm_batch();
    let mut g = Graph::new();
    let mut rng = Rng::new(seed);
    let out = m.forward(&mut g, &inputs, None, Mode::Train, &mut rng).unwrap();
    let (total, _) = m.loss(&mut g, &out, &targets, 2.0, 1.0).unwrap();
    if let Some(dst) = write {
        g.backward(total).unwrap();
        dst.zero_grad();
        g.write_param_grads(dst);
    }
    g.value(total).item()
}

pub fn lm_gradient_error(arch: ArchConfig, dropout: DropoutConfig, seed: u64) -> (f64, String) {
    let model = AwdLstm::<f64>::new(arch, dropout, &mut Rng::new(seed)).unwrap();
    let mut grads = model.store().clone();
    lm_loss(&model, model.store(), seed, Some(&mut grads));
    let mut store = model.store().clone();
    max_relative_error(&mut store, &grads, 1e-5, |s| lm_loss(&model, s, seed, None))
}

pub fn clf_docs() -> (Vec<Vec<u32>>, Vec<usize>, Vec<usize>) {
    let batch = vec![vec![2, 7, 3, 9, 1], vec![2, 5, 8, 1, 1], vec![2, 10, 6, 4, 3]];
    (batch, vec![4, 3, 5], vec![1, 0, 1])
}

pub fn clf_loss(model: &TextClassifier<f64>, store: &ParamStore<f64>, seed: u64, write: Option<&mut ParamStore<f64>>) -> f64 {
    let mut m = model.clone();
    m.store_mut().adopt_values(store).unwrap();
    let (batch, lengths, targets) = clf_docs();
    let mut g = Graph::new();
    let mut rng = Rng::new(seed);
    let logits = m.forward(&mut g, &batch, &lengths, Mode::Train, &mut rng).unwrap();
    let loss = g.cross_entropy(logits, &targets).unwrap();
    if let Some(dst) = write {
        g.backward(loss).unwrap();
        dst.zero_grad();
        g.write_param_grads(dst);
    }
    g.value(loss).item()
}

pub fn clf_gradient_error(arch: ArchConfig, dropout: DropoutConfig, seed: u64) -> (f64, String) {
    let model = TextClassifier::<f64>::new(arch, dropout, &mut Rng::new(seed)).unwrap();
    let mut grads = model.store().clone();
    clf_loss(&model, model.store(), seed, Some(&mut grads));
    let mut store = model.store().clone();
    max_relative_error(&mut store, &grads, 1e-5, |s| clf_loss(&model, s, seed, None))
}
