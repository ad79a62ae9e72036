use super::dropout::{active, check_p, keep_mask};
use super::encoder::Encoder;
use super::lm::AwdLstm;
use super::{ArchConfig, DropoutConfig, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::textpipe::PAD_ID;

pub const N_CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Head {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Encoder plus a two-layer head over `[last, max, mean]` pooled states.
///
/// Layer groups, lowest first: embedding with LSTM layer 0, each further LSTM
/// layer, then the head.
#[derive(Clone, Debug)]
pub struct TextClassifier<T> {
    pub arch: ArchConfig,
    pub dropout: DropoutConfig,
    /// Documents longer than this are truncated.
    pub max_len: usize,
    store: ParamStore<T>,
    encoder: Encoder,
    head: Head,
}

pub const DEFAULT_MAX_LEN: usize = 400;

fn add_head<T: Scalar>(store: &mut ParamStore<T>, arch: &ArchConfig, rng: &mut Rng) -> Head {
    let group = arch.n_layers;
    let mut linear = |name: &str, fan_in: usize, fan_out: usize, store: &mut ParamStore<T>| {
        let k = 1.0 / (fan_in as f64).sqrt();
        let w = Tensor::from_fn(&[fan_in, fan_out], |_| T::lit(rng.uniform_range(-k, k)));
        let w = store.add(format!("head.{name}.weight"), w, group);
        let b = store.add(format!("head.{name}.bias"), Tensor::zeros(&[fan_out]), group);
        (w, b)
    };
    let (w1, b1) = linear("hidden", 3 * arch.emb_dim, arch.head_hidden, store);
    let (w2, b2) = linear("out", arch.head_hidden, N_CLASSES, store);
    Head { w1, b1, w2, b2 }
}

impl<T: Scalar> TextClassifier<T> {
    /// Classifier on top of a (fine-tuned) language model's encoder, with a fresh head.
    pub fn from_lm(lm: &AwdLstm<T>, dropout: DropoutConfig, rng: &mut Rng) -> Result<Self> {
        let arch = lm.arch.clone();
        let mut store = ParamStore::new();
        let encoder = lm.encoder().copy_into(lm.store(), &mut store, 0, |l| l);
        let head = add_head(&mut store, &arch, rng);
        Ok(Self {
            arch,
            dropout,
            max_len: DEFAULT_MAX_LEN,
            store,
            encoder,
            head,
        })
    }

    /// Randomly initialised classifier, the no-transfer baseline.
    pub fn new(arch: ArchConfig, dropout: DropoutConfig, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = Encoder::build(&mut store, &arch, 0, |l| l, rng)?;
        let head = add_head(&mut store, &arch, rng);
        Ok(Self {
            arch,
            dropout,
            max_len: DEFAULT_MAX_LEN,
            store,
            encoder,
            head,
        })
    }

    pub(crate) fn from_parts(
        arch: ArchConfig,
        dropout: DropoutConfig,
        max_len: usize,
        store: ParamStore<T>,
    ) -> Result<Self> {
        let mut model = Self::new(arch, dropout, &mut Rng::new(0))?;
        model.max_len = max_len;
        model.store.adopt_values(&store)?;
        Ok(model)
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn n_groups(&self) -> usize {
        self.arch.n_layers + 1
    }

    /// Groups `>= group` train, the rest are frozen.
    pub fn freeze_to(&mut self, group: usize) -> Result<()> {
        self.store.freeze_to(group)
    }

    /// Logits `batch × 2` for a padded batch.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        batch: &[Vec<u32>],
        lengths: &[usize],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let drop = self.dropout.effective()?;
        check_p("head", drop.head, mode)?;
        let emb = g.param(&self.store, self.encoder.embedding);
        let enc = self
            .encoder
            .forward(&self.store, g, emb, batch, None, mode, &drop, rng)?;
        let pooled = concat_pool(g, enc.dropped, enc.batch, lengths)?;
        let w1 = g.param(&self.store, self.head.w1);
        let b1 = g.param(&self.store, self.head.b1);
        let w2 = g.param(&self.store, self.head.w2);
        let b2 = g.param(&self.store, self.head.b2);
        let z = g.matmul(pooled, w1)?;
        let z = g.add_bias(z, b1)?;
        let mut h = g.relu(z);
        if active(drop.head, mode) {
            let n = enc.batch * self.arch.head_hidden;
            let mask: Vec<T> = keep_mask(rng, n, drop.head);
            let m = g.constant(Tensor::new(vec![enc.batch, self.arch.head_hidden], mask)?);
            h = g.mul(h, m)?;
        }
        let out = g.matmul(h, w2)?;
        g.add_bias(out, b2)
    }

    /// Eval-mode logits for unpadded documents.
    pub fn classify(&self, docs: &[Vec<u32>]) -> Result<Tensor<T>> {
        let refs: Vec<&[u32]> = docs.iter().map(Vec::as_slice).collect();
        let (batch, lengths) = pad_batch(&refs, self.max_len)?;
        let mut g = Graph::new();
        let mut rng = Rng::new(0);
        let logits = self.forward(&mut g, &batch, &lengths, Mode::Eval, &mut rng)?;
        Ok(g.value(logits).clone())
    }

    /// Predicted label index per document.
    pub fn predict(&self, docs: &[Vec<u32>]) -> Result<Vec<usize>> {
        Ok(self.classify(docs)?.argmax_rows())
    }
}

/// `[last valid state, max over valid steps, mean over valid steps]`, time-major input.
pub fn concat_pool<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    batch: usize,
    lengths: &[usize],
) -> Result<Var> {
    let last = g.last_valid(x, batch, lengths)?;
    let max = g.max_over_time(x, batch, lengths)?;
    let mean = g.mean_over_time(x, batch, lengths)?;
    g.concat_cols(&[last, max, mean])
}

/// Concat pooling on a `batch × steps × features` tensor.
pub fn concat_pool_tensor<T: Scalar>(hidden: &Tensor<T>, lengths: &[usize]) -> Result<Tensor<T>> {
    let [b, s, f] = hidden.shape() else {
        return Err(Error::shape(
            "concat_pool",
            format!("expected [batch, steps, features], got {:?}", hidden.shape()),
        ));
    };
    let (b, s, f) = (*b, *s, *f);
    let mut data = Vec::with_capacity(hidden.len());
    for t in 0..s {
        for bi in 0..b {
            let base = (bi * s + t) * f;
            data.extend_from_slice(&hidden.data()[base..base + f]);
        }
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![s * b, f], data)?);
    let out = concat_pool(&mut g, x, b, lengths)?;
    Ok(g.value(out).clone())
}

/// Right-pads documents with `xxpad` to a common length (truncating at `max_len`).
pub fn pad_batch(docs: &[&[u32]], max_len: usize) -> Result<(Vec<Vec<u32>>, Vec<usize>)> {
    if docs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let lengths: Vec<usize> = docs.iter().map(|d| d.len().min(max_len)).collect();
    if let Some(i) = lengths.iter().position(|&l| l == 0) {
        return Err(Error::invalid(format!("document {i} is empty")));
    }
    let width = *lengths.iter().max().expect("non-empty");
    let batch = docs
        .iter()
        .zip(&lengths)
        .map(|(d, &l)| {
            let mut row = d[..l].to_vec();
            row.resize(width, PAD_ID);
            row
        })
        .collect();
    Ok((batch, lengths))
}
