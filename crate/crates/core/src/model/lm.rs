use super::encoder::{Encoder, EncoderOutput, LstmState};
use super::{ArchConfig, DropoutConfig, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::textpipe::{Vocabulary, SPECIALS};

/// AWD-LSTM language model with the decoder tied to the embedding matrix.
///
/// Layer groups: LSTM layer `l` is group `l`; the embedding (and so the tied
/// decoder) plus the decoder bias form the last group.
#[derive(Clone, Debug)]
pub struct AwdLstm<T> {
    pub arch: ArchConfig,
    pub dropout: DropoutConfig,
    store: ParamStore<T>,
    encoder: Encoder,
    decoder_bias: ParamId,
}

pub struct LmOutput<T> {
    /// Time-major `(steps·batch) × vocab`.
    pub logits: Var,
    pub encoded: EncoderOutput<T>,
}

impl<T> LmOutput<T> {
    pub fn batch(&self) -> usize {
        self.encoded.batch
    }

    pub fn steps(&self) -> usize {
        self.encoded.steps
    }
}

impl<T: Scalar> LmOutput<T> {
    /// Logits rearranged as `batch × steps × vocab`.
    pub fn logits_bsv(&self, g: &Graph<T>) -> Tensor<T> {
        let (b, s) = (self.batch(), self.steps());
        let src = g.value(self.logits);
        let v = src.cols();
        let mut data = Vec::with_capacity(src.len());
        for bi in 0..b {
            for t in 0..s {
                data.extend_from_slice(src.row(t * b + bi));
            }
        }
        Tensor::new(vec![b, s, v], data).expect("logit layout")
    }
}

impl<T: Scalar> AwdLstm<T> {
    pub fn new(arch: ArchConfig, dropout: DropoutConfig, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let n = arch.n_layers;
        let encoder = Encoder::build(&mut store, &arch, n, |l| l, rng)?;
        let decoder_bias = store.add("decoder.bias", Tensor::zeros(&[arch.vocab_size]), n);
        Ok(Self {
            arch,
            dropout,
            store,
            encoder,
            decoder_bias,
        })
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

    pub fn embedding_id(&self) -> ParamId {
        self.encoder.embedding
    }

    /// The decoder weight is the embedding parameter itself.
    pub fn decoder_weight_id(&self) -> ParamId {
        self.encoder.embedding
    }

    pub fn decoder_bias_id(&self) -> ParamId {
        self.decoder_bias
    }

    pub fn n_groups(&self) -> usize {
        self.arch.n_layers + 1
    }

    pub fn freeze_to(&mut self, group: usize) -> Result<()> {
        self.store.freeze_to(group)
    }

    /// Next-token logits for every position of `batch` (equal-length id rows).
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        batch: &[Vec<u32>],
        state: Option<&LstmState<T>>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<LmOutput<T>> {
        let drop = self.dropout.effective()?;
        let emb = g.param(&self.store, self.encoder.embedding);
        let encoded = self
            .encoder
            .forward(&self.store, g, emb, batch, state, mode, &drop, rng)?;
        let bias = g.param(&self.store, self.decoder_bias);
        let proj = g.matmul_nt(encoded.dropped, emb)?;
        let logits = g.add_bias(proj, bias)?;
        Ok(LmOutput { logits, encoded })
    }

    /// Cross-entropy against `targets` (same layout as the batch) plus the
    /// activation (`alpha·mean(h²)`) and temporal activation
    /// (`beta·mean((h_t − h_{t−1})²)`) penalties. Returns `(total, cross_entropy)`.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        out: &LmOutput<T>,
        targets: &[Vec<u32>],
        alpha: f64,
        beta: f64,
    ) -> Result<(Var, Var)> {
        let (b, s) = (out.batch(), out.steps());
        if targets.len() != b || targets.iter().any(|t| t.len() != s) {
            return Err(Error::shape("lm_loss", "targets do not match batch layout"));
        }
        let flat: Vec<usize> = (0..s)
            .flat_map(|t| targets.iter().map(move |row| row[t] as usize))
            .collect();
        let ce = g.cross_entropy(out.logits, &flat)?;
        let mut total = ce;
        if alpha > 0.0 {
            let d = out.encoded.dropped;
            let sq = g.mul(d, d)?;
            let m = g.mean(sq);
            let ar = g.scale(m, T::lit(alpha));
            total = g.add(total, ar)?;
        }
        if beta > 0.0 && s > 1 {
            let raw = out.encoded.raw;
            let later = g.slice_rows(raw, b, (s - 1) * b)?;
            let earlier = g.slice_rows(raw, 0, (s - 1) * b)?;
            let diff = g.sub(later, earlier)?;
            let sq = g.mul(diff, diff)?;
            let m = g.mean(sq);
            let tar = g.scale(m, T::lit(beta));
            total = g.add(total, tar)?;
        }
        Ok((total, ce))
    }

    /// Re-indexes the embedding and decoder bias onto `new_vocab`. Shared tokens
    /// keep their rows; unseen tokens get the mean row.
    pub fn transfer_vocab(&self, old_vocab: &Vocabulary, new_vocab: &Vocabulary) -> Result<Self> {
        if old_vocab.len() != self.arch.vocab_size {
            return Err(Error::VocabMapping(format!(
                "model has {} embedding rows but source vocabulary has {} tokens",
                self.arch.vocab_size,
                old_vocab.len()
            )));
        }
        if new_vocab.tokens()[..SPECIALS.len()] != old_vocab.tokens()[..SPECIALS.len()] {
            return Err(Error::VocabMapping("reserved tokens differ".into()));
        }
        let e = self.arch.emb_dim;
        let old_emb = self.store.value(self.encoder.embedding);
        let old_bias = self.store.value(self.decoder_bias);
        let v_old = old_vocab.len();
        let mut mean_row = vec![T::zero(); e];
        for r in 0..v_old {
            for (m, &x) in mean_row.iter_mut().zip(old_emb.row(r)) {
                *m += x;
            }
        }
        mean_row.iter_mut().for_each(|m| *m /= T::lit(v_old as f64));
        let mean_bias = old_bias.data().iter().copied().sum::<T>() / T::lit(v_old as f64);

        let mut emb = Vec::with_capacity(new_vocab.len() * e);
        let mut bias = Vec::with_capacity(new_vocab.len());
        for tok in new_vocab.tokens() {
            match old_vocab.id(tok) {
                Some(i) => {
                    emb.extend_from_slice(old_emb.row(i as usize));
                    bias.push(old_bias.data()[i as usize]);
                }
                None => {
                    emb.extend_from_slice(&mean_row);
                    bias.push(mean_bias);
                }
            }
        }
        let mut out = self.clone();
        out.arch.vocab_size = new_vocab.len();
        out.encoder.vocab_size = new_vocab.len();
        let v = new_vocab.len();
        {
            let p = out.store.get_mut(out.encoder.embedding);
            p.value = Tensor::new(vec![v, e], emb)?;
            p.grad = Tensor::zeros(&[v, e]);
        }
        {
            let p = out.store.get_mut(out.decoder_bias);
            p.value = Tensor::new(vec![v], bias)?;
            p.grad = Tensor::zeros(&[v]);
        }
        out.store.unfreeze_all();
        Ok(out)
    }

    pub(crate) fn from_parts(
        arch: ArchConfig,
        dropout: DropoutConfig,
        store: ParamStore<T>,
    ) -> Result<Self> {
        let mut rng = Rng::new(0);
        let template = Self::new(arch.clone(), dropout, &mut rng)?;
        let mut model = template;
        model.store.adopt_values(&store)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch(v: usize) -> ArchConfig {
        ArchConfig::custom(v, 4, 6, 2)
    }

    #[test]
    fn output_shape_b2_s5_v7_plus_specials() {
        let mut rng = Rng::new(1);
        let m = AwdLstm::<f64>::new(tiny_arch(12), DropoutConfig::none(), &mut rng).unwrap();
        let mut g = Graph::new();
        let batch = vec![vec![2, 7, 8, 9, 10]; 2];
        let out = m.forward(&mut g, &batch, None, Mode::Eval, &mut rng).unwrap();
        assert_eq!(out.logits_bsv(&g).shape(), &[2, 5, 12]);
        assert_eq!(out.encoded.state.layers.len(), 2);
        assert_eq!(out.encoded.state.layers[1].0.shape(), &[2, 4]);
    }

    #[test]
    fn zero_weights_give_bias_logits() {
        let mut rng = Rng::new(2);
        let mut m = AwdLstm::<f64>::new(tiny_arch(9), DropoutConfig::none(), &mut rng).unwrap();
        let bias_id = m.decoder_bias_id();
        for p in m.store_mut().iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let bias: Vec<f64> = (0..9).map(|i| i as f64 * 0.1 - 0.3).collect();
        m.store_mut().get_mut(bias_id).value = Tensor::new(vec![9], bias.clone()).unwrap();
        let mut g = Graph::new();
        let out = m.forward(&mut g, &[vec![3]], None, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.value(out.logits).data(), &bias[..]);
    }

    #[test]
    fn out_of_range_id_rejected() {
        let mut rng = Rng::new(3);
        let m = AwdLstm::<f64>::new(tiny_arch(9), DropoutConfig::none(), &mut rng).unwrap();
        let mut g = Graph::new();
        assert!(m.forward(&mut g, &[vec![9]], None, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn eval_is_deterministic_train_is_not() {
        let mut rng = Rng::new(4);
        let m = AwdLstm::<f64>::new(tiny_arch(12), DropoutConfig::with_multiplier(1.0), &mut rng)
            .unwrap();
        let batch = vec![vec![2, 7, 8, 9, 10, 11], vec![2, 8, 8, 7, 10, 9]];
        let run = |mode, seed| {
            let mut g = Graph::new();
            let mut r = Rng::new(seed);
            let out = m.forward(&mut g, &batch, None, mode, &mut r).unwrap();
            g.value(out.logits).clone()
        };
        assert_eq!(run(Mode::Eval, 1), run(Mode::Eval, 2));
        assert_ne!(run(Mode::Train, 1), run(Mode::Eval, 1));
        assert_eq!(run(Mode::Train, 5), run(Mode::Train, 5));
    }

    #[test]
    fn weight_drop_p1_train_errors() {
        let mut rng = Rng::new(5);
        let mut d = DropoutConfig::none();
        d.weight = 1.0;
        d.multiplier = 1.0;
        let m = AwdLstm::<f64>::new(tiny_arch(9), d, &mut rng).unwrap();
        let mut g = Graph::new();
        assert!(m.forward(&mut g, &[vec![3]], None, Mode::Train, &mut rng).is_err());
        assert!(m.forward(&mut g, &[vec![3]], None, Mode::Eval, &mut rng).is_ok());
    }

    #[test]
    fn vocab_transfer_keeps_shared_rows() {
        let mut rng = Rng::new(6);
        let old = Vocabulary::build(&["a", "b", "c"], 100, 1).unwrap();
        let new = Vocabulary::build(&["c", "z", "a"], 100, 1).unwrap();
        let m = AwdLstm::<f64>::new(tiny_arch(old.len()), DropoutConfig::none(), &mut rng).unwrap();
        let t = m.transfer_vocab(&old, &new).unwrap();
        let (oe, ne) = (m.store().value(m.embedding_id()), t.store().value(t.embedding_id()));
        for tok in ["xxunk", "xxbos", "a", "c"] {
            let (i, j) = (old.id(tok).unwrap(), new.id(tok).unwrap());
            assert_eq!(oe.row(i as usize), ne.row(j as usize));
        }
        let z = new.id("z").unwrap() as usize;
        for c in 0..4 {
            let mean = (0..old.len()).map(|r| oe.row(r)[c]).sum::<f64>() / old.len() as f64;
            assert!((ne.row(z)[c] - mean).abs() < 1e-15);
        }
        assert!(m.transfer_vocab(&new, &old).is_ok());
        let short = Vocabulary::build(&["a"], 100, 1).unwrap();
        assert!(matches!(m.transfer_vocab(&short, &new), Err(Error::VocabMapping(_))));
    }
}
