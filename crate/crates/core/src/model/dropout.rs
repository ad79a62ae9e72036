//! Dropout masks for the AWD-LSTM regularisation sites.
//!
//! Survivors are scaled by `1/(1-p)`. In [`Mode::Eval`] every function is the
//! identity.

use super::Mode;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn check_p(site: &str, p: f64, mode: Mode) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{site} dropout p={p} outside [0, 1]")));
    }
    if mode == Mode::Train && p >= 1.0 {
        return Err(Error::invalid(format!(
            "{site} dropout p=1 leaves nothing to train"
        )));
    }
    Ok(())
}

pub(crate) fn active(p: f64, mode: Mode) -> bool {
    mode == Mode::Train && p > 0.0
}

/// `n` independent keep factors: 0 with probability `p`, else `1/(1-p)`.
pub(crate) fn keep_mask<T: Scalar>(rng: &mut Rng, n: usize, p: f64) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
        .collect()
}

/// Repeats a `batch × features` mask for every one of `steps` time-major blocks.
pub(crate) fn tile_steps<T: Scalar>(mask: &[T], steps: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(mask.len() * steps);
    for _ in 0..steps {
        out.extend_from_slice(mask);
    }
    out
}

/// Value-level parameters of one LSTM layer, gates packed `[i | f | g | o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerValues<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

/// DropConnect on the hidden→hidden matrix; the other parameters pass through.
pub fn apply_weight_drop<T: Scalar>(
    layer: &LstmLayerValues<T>,
    p: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<LstmLayerValues<T>> {
    check_p("weight", p, mode)?;
    let mut out = layer.clone();
    if active(p, mode) {
        let mask: Vec<T> = keep_mask(rng, layer.w_hh.len(), p);
        for (w, m) in out.w_hh.data_mut().iter_mut().zip(mask) {
            *w *= m;
        }
    }
    Ok(out)
}

/// Locked dropout over a `batch × steps × features` tensor: one mask per
/// (sequence, feature), shared by every step.
pub fn variational_dropout<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    check_p("variational", p, mode)?;
    let [batch, steps, features] = x.shape() else {
        return Err(Error::shape(
            "variational_dropout",
            format!("expected [batch, steps, features], got {:?}", x.shape()),
        ));
    };
    let (batch, steps, features) = (*batch, *steps, *features);
    let mut out = x.clone();
    if active(p, mode) {
        let mask: Vec<T> = keep_mask(rng, batch * features, p);
        for b in 0..batch {
            for t in 0..steps {
                let base = (b * steps + t) * features;
                for f in 0..features {
                    out.data_mut()[base + f] *= mask[b * features + f];
                }
            }
        }
    }
    Ok(out)
}

/// Drops whole rows (words) of an embedding matrix.
pub fn embedding_dropout<T: Scalar>(
    emb: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    check_p("embedding", p, mode)?;
    let mut out = emb.clone();
    if active(p, mode) {
        let cols = emb.cols();
        let scales: Vec<T> = keep_mask(rng, emb.rows(), p);
        for (row, s) in out.data_mut().chunks_mut(cols).zip(scales) {
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(h: usize) -> LstmLayerValues<f64> {
        LstmLayerValues {
            w_ih: Tensor::full(&[3, 4 * h], 0.5),
            w_hh: Tensor::full(&[h, 4 * h], 1.0),
            bias: Tensor::full(&[4 * h], 0.25),
        }
    }

    #[test]
    fn weight_drop_p0_and_eval_identity() {
        let mut rng = Rng::new(1);
        let l = layer(4);
        assert_eq!(apply_weight_drop(&l, 0.0, Mode::Train, &mut rng).unwrap(), l);
        assert_eq!(apply_weight_drop(&l, 0.7, Mode::Eval, &mut rng).unwrap(), l);
        assert!(apply_weight_drop(&l, 1.0, Mode::Train, &mut rng).is_err());
        assert!(apply_weight_drop(&l, 1.0, Mode::Eval, &mut rng).is_ok());
    }

    #[test]
    fn weight_drop_touches_only_recurrent_matrix() {
        let mut rng = Rng::new(2);
        let l = layer(8);
        let d = apply_weight_drop(&l, 0.5, Mode::Train, &mut rng).unwrap();
        assert_eq!(d.w_ih, l.w_ih);
        assert_eq!(d.bias, l.bias);
        assert!(d.w_hh.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn weight_drop_monte_carlo_fraction() {
        let mut rng = Rng::new(3);
        // 160 × 640 ≈ 10⁵ entries
        let l = layer(160);
        let d = apply_weight_drop(&l, 0.5, Mode::Train, &mut rng).unwrap();
        let zeros = d.w_hh.data().iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / d.w_hh.len() as f64;
        assert!(d.w_hh.len() >= 100_000);
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn locked_mask_constant_over_time() {
        let mut rng = Rng::new(4);
        let x = Tensor::<f64>::full(&[3, 6, 5], 1.0);
        let y = variational_dropout(&x, 0.4, Mode::Train, &mut rng).unwrap();
        for b in 0..3 {
            for f in 0..5 {
                let first = y.at(&[b, 0, f]);
                for t in 1..6 {
                    assert_eq!(y.at(&[b, t, f]), first);
                }
            }
        }
        assert_eq!(variational_dropout(&x, 0.0, Mode::Train, &mut rng).unwrap(), x);
    }

    #[test]
    fn locked_dropout_unbiased() {
        let mut rng = Rng::new(5);
        let x = Tensor::<f64>::from_fn(&[2, 3, 2], |i| 1.0 + i as f64);
        let trials = 10_000;
        let mut acc = vec![0.0; x.len()];
        for _ in 0..trials {
            let y = variational_dropout(&x, 0.3, Mode::Train, &mut rng).unwrap();
            for (a, v) in acc.iter_mut().zip(y.data()) {
                *a += v;
            }
        }
        let got: f64 = acc.iter().sum::<f64>() / trials as f64;
        let want: f64 = x.data().iter().sum();
        assert!((got - want).abs() / want < 0.01, "{got} vs {want}");
    }

    #[test]
    fn embedding_rows_dropped_whole() {
        let mut rng = Rng::new(6);
        let emb = Tensor::<f64>::full(&[20_000, 3], 1.0);
        let d = embedding_dropout(&emb, 0.2, Mode::Train, &mut rng).unwrap();
        let mut zero_rows = 0;
        for r in 0..20_000 {
            let row = d.row(r);
            assert!(row.iter().all(|&v| v == row[0]));
            if row[0] == 0.0 {
                zero_rows += 1;
            }
        }
        let frac = zero_rows as f64 / 20_000.0;
        assert!((frac - 0.2).abs() < 0.01, "{frac}");
        assert_eq!(embedding_dropout(&emb, 0.0, Mode::Train, &mut rng).unwrap(), emb);
    }
}
