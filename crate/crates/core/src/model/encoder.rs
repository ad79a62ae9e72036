use super::dropout::{active, check_p, keep_mask, tile_steps};
use super::{ArchConfig, EffectiveDropout, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Parameter handles of one LSTM layer. Gates are packed `[i | f | g | o]`
/// along the columns of `w_ih` (`input × 4h`), `w_hh` (`h × 4h`) and `bias`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

/// Hidden and cell state per layer, each `batch × hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub layers: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(arch: &ArchConfig, batch: usize) -> Self {
        Self {
            layers: (0..arch.n_layers)
                .map(|l| {
                    let h = arch.layer_output(l);
                    (Tensor::zeros(&[batch, h]), Tensor::zeros(&[batch, h]))
                })
                .collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.layers.first().map(|(h, _)| h.rows()).unwrap_or(0)
    }
}

/// Embedding plus stacked LSTM layers, shared by the language model and the classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoder {
    pub embedding: ParamId,
    pub layers: Vec<LstmLayer>,
    pub vocab_size: usize,
    pub emb_dim: usize,
}

pub struct EncoderOutput<T> {
    /// Final-layer activations, time-major `(steps·batch) × emb_dim`.
    pub raw: Var,
    /// `raw` after output dropout.
    pub dropped: Var,
    pub state: LstmState<T>,
    pub batch: usize,
    pub steps: usize,
}

impl Encoder {
    /// Registers encoder parameters. `group_of_layer(l)` picks the layer group
    /// of LSTM layer `l`; the embedding goes to `embedding_group`.
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        arch: &ArchConfig,
        embedding_group: usize,
        group_of_layer: impl Fn(usize) -> usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        arch.validate()?;
        let emb = Tensor::from_fn(&[arch.vocab_size, arch.emb_dim], |_| {
            T::lit(rng.uniform_range(-0.1, 0.1))
        });
        let embedding = store.add("encoder.embedding", emb, embedding_group);
        let mut layers = Vec::with_capacity(arch.n_layers);
        for l in 0..arch.n_layers {
            let (inp, h) = (arch.layer_input(l), arch.layer_output(l));
            let k = 1.0 / (h as f64).sqrt();
            let mut init = |shape: &[usize]| {
                Tensor::from_fn(shape, |_| T::lit(rng.uniform_range(-k, k)))
            };
            let w_ih = init(&[inp, 4 * h]);
            let w_hh = init(&[h, 4 * h]);
            let bias = init(&[4 * h]);
            let group = group_of_layer(l);
            layers.push(LstmLayer {
                w_ih: store.add(format!("encoder.lstm{l}.w_ih"), w_ih, group),
                w_hh: store.add(format!("encoder.lstm{l}.w_hh"), w_hh, group),
                bias: store.add(format!("encoder.lstm{l}.bias"), bias, group),
                input_size: inp,
                hidden_size: h,
            });
        }
        Ok(Self {
            embedding,
            layers,
            vocab_size: arch.vocab_size,
            emb_dim: arch.emb_dim,
        })
    }

    /// Couples this encoder's handles onto `dst`, copying values from `src`.
    pub fn copy_into<T: Scalar>(
        &self,
        src: &ParamStore<T>,
        dst: &mut ParamStore<T>,
        embedding_group: usize,
        group_of_layer: impl Fn(usize) -> usize,
    ) -> Self {
        let mut copy = |id: ParamId, group: usize| {
            let p = src.get(id);
            dst.add(p.name.clone(), p.value.clone(), group)
        };
        let embedding = copy(self.embedding, embedding_group);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let g = group_of_layer(l);
                LstmLayer {
                    w_ih: copy(layer.w_ih, g),
                    w_hh: copy(layer.w_hh, g),
                    bias: copy(layer.bias, g),
                    ..*layer
                }
            })
            .collect();
        Self {
            embedding,
            layers,
            vocab_size: self.vocab_size,
            emb_dim: self.emb_dim,
        }
    }

    /// Runs the encoder over `batch` equal-length id sequences.
    ///
    /// `emb` is the graph leaf of the embedding matrix; callers pass it in so
    /// a tied decoder can reuse the same node.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        g: &mut Graph<T>,
        emb: Var,
        batch: &[Vec<u32>],
        state: Option<&LstmState<T>>,
        mode: Mode,
        drop: &EffectiveDropout,
        rng: &mut Rng,
    ) -> Result<EncoderOutput<T>> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let steps = batch[0].len();
        if steps == 0 {
            return Err(Error::invalid("empty sequence"));
        }
        if batch.iter().any(|s| s.len() != steps) {
            return Err(Error::shape("encoder", "sequences in a batch must share a length"));
        }
        for (site, p) in [
            ("embedding", drop.embed),
            ("input", drop.input),
            ("hidden", drop.hidden),
            ("weight", drop.weight),
            ("output", drop.output),
        ] {
            check_p(site, p, mode)?;
        }
        if let Some(s) = state {
            if s.layers.len() != self.layers.len() || s.batch() != b {
                return Err(Error::shape(
                    "encoder",
                    format!("state for batch {} does not match batch {b}", s.batch()),
                ));
            }
        }

        let mut ids = Vec::with_capacity(b * steps);
        for t in 0..steps {
            for seq in batch {
                let id = seq[t] as usize;
                if id >= self.vocab_size {
                    return Err(Error::invalid(format!(
                        "token id {id} outside vocabulary of {}",
                        self.vocab_size
                    )));
                }
                ids.push(id);
            }
        }
        let mut x = g.embedding(emb, &ids)?;

        let use_embed = active(drop.embed, mode);
        let use_input = active(drop.input, mode);
        if use_embed || use_input {
            let e = self.emb_dim;
            let row_scale: Vec<T> = if use_embed {
                keep_mask(rng, self.vocab_size, drop.embed)
            } else {
                vec![T::one(); self.vocab_size]
            };
            let locked: Vec<T> = if use_input {
                keep_mask(rng, b * e, drop.input)
            } else {
                vec![T::one(); b * e]
            };
            let mut mask = Vec::with_capacity(ids.len() * e);
            for (r, &id) in ids.iter().enumerate() {
                let lb = (r % b) * e;
                mask.extend(locked[lb..lb + e].iter().map(|&m| m * row_scale[id]));
            }
            let m = g.constant(Tensor::new(vec![ids.len(), e], mask)?);
            x = g.mul(x, m)?;
        }

        let mut new_state = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        let mut raw = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let h_size = layer.hidden_size;
            let w_ih = g.param(store, layer.w_ih);
            let mut w_hh = g.param(store, layer.w_hh);
            if active(drop.weight, mode) {
                let mask: Vec<T> = keep_mask(rng, h_size * 4 * h_size, drop.weight);
                let m = g.constant(Tensor::new(vec![h_size, 4 * h_size], mask)?);
                w_hh = g.mul(w_hh, m)?;
            }
            let bias = g.param(store, layer.bias);
            let xw = g.matmul(x, w_ih)?;
            let gates_in = g.add_bias(xw, bias)?;

            let (h0, c0) = match state {
                Some(s) => (s.layers[l].0.clone(), s.layers[l].1.clone()),
                None => (Tensor::zeros(&[b, h_size]), Tensor::zeros(&[b, h_size])),
            };
            let mut h = g.constant(h0);
            let mut c = g.constant(c0);
            let mut hs = Vec::with_capacity(steps);
            for t in 0..steps {
                let gi = g.slice_rows(gates_in, t * b, b)?;
                let gh = g.matmul(h, w_hh)?;
                let gates = g.add(gi, gh)?;
                let i_pre = g.slice_cols(gates, 0, h_size)?;
                let f_pre = g.slice_cols(gates, h_size, h_size)?;
                let g_pre = g.slice_cols(gates, 2 * h_size, h_size)?;
                let o_pre = g.slice_cols(gates, 3 * h_size, h_size)?;
                let i_gate = g.sigmoid(i_pre);
                let f_gate = g.sigmoid(f_pre);
                let cand = g.tanh(g_pre);
                let o_gate = g.sigmoid(o_pre);
                let keep = g.mul(f_gate, c)?;
                let write = g.mul(i_gate, cand)?;
                c = g.add(keep, write)?;
                let tc = g.tanh(c);
                h = g.mul(o_gate, tc)?;
                hs.push(h);
            }
            new_state.push((g.value(h).clone(), g.value(c).clone()));
            let out = g.concat_rows(&hs)?;
            raw = out;
            x = out;
            if l != last && active(drop.hidden, mode) {
                let mask: Vec<T> = keep_mask(rng, b * h_size, drop.hidden);
                let m = g.constant(Tensor::new(vec![steps * b, h_size], tile_steps(&mask, steps))?);
                x = g.mul(out, m)?;
            }
        }

        let dropped = if active(drop.output, mode) {
            let e = self.emb_dim;
            let mask: Vec<T> = keep_mask(rng, b * e, drop.output);
            let m = g.constant(Tensor::new(vec![steps * b, e], tile_steps(&mask, steps))?);
            g.mul(raw, m)?
        } else {
            raw
        };

        Ok(EncoderOutput {
            raw,
            dropped,
            state: LstmState { layers: new_state },
            batch: b,
            steps,
        })
    }
}
