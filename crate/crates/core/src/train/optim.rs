use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ParamStore;

/// First/second moment accumulators for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }
}

fn check_finite<T: Scalar>(name: &str, grad: &[T]) -> Result<()> {
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient(name.to_string()))
    }
}

/// One Adam step with decoupled weight decay (`p ← p·(1 − lr·wd)` before the
/// moment update). `beta1` is the current momentum.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    name: &str,
    param: &mut [T],
    grad: &[T],
    state: &mut AdamMoments<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != param.len() {
        return Err(Error::shape("adam_step", format!("parameter `{name}`")));
    }
    check_finite(name, grad)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let decay = T::lit(1.0 - lr * weight_decay);
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let (one, step_size, eps, bc2) = (T::one(), T::lit(lr / bc1), T::lit(eps), T::lit(bc2));
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let denom = (state.v[i] / bc2).sqrt() + eps;
        param[i] = param[i] * decay - step_size * state.m[i] / denom;
    }
    Ok(())
}

/// Heavy-ball SGD with decoupled weight decay.
pub fn sgd_step<T: Scalar>(
    name: &str,
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.len() != grad.len() || velocity.len() != param.len() {
        return Err(Error::shape("sgd_step", format!("parameter `{name}`")));
    }
    check_finite(name, grad)?;
    let decay = T::lit(1.0 - lr * weight_decay);
    let (mom, lr) = (T::lit(momentum), T::lit(lr));
    for i in 0..param.len() {
        velocity[i] = mom * velocity[i] + grad[i];
        param[i] = param[i] * decay - lr * velocity[i];
    }
    Ok(())
}

/// Scales all unfrozen gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut sq = 0.0;
    for &id in &ids {
        if !store.is_frozen(id) {
            sq += store.get(id).grad.data().iter().map(|g| g.as_f64().powi(2)).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for &id in &ids {
            if !store.is_frozen(id) {
                store.get_mut(id).grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimiser state over a whole [`ParamStore`]. Frozen groups are skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub beta2: f64,
    pub eps: f64,
    pub state: Vec<AdamMoments<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, store: &ParamStore<T>) -> Self {
        Self {
            kind,
            beta2: 0.99,
            eps: 1e-8,
            state: store.iter().map(|(_, p)| AdamMoments::zeros(p.value.len())).collect(),
        }
    }

    /// Updates every unfrozen parameter with its group's learning rate.
    /// All gradients are checked before any parameter changes.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        group_lrs: &[f64],
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if self.state.len() != store.len() {
            return Err(Error::shape("optimizer", "state does not match parameter store"));
        }
        if group_lrs.len() < store.n_groups() {
            return Err(Error::invalid(format!(
                "{} learning rates for {} groups",
                group_lrs.len(),
                store.n_groups()
            )));
        }
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for &id in &ids {
            if !store.is_frozen(id) {
                let p = store.get(id);
                check_finite(&p.name, p.grad.data())?;
            }
        }
        for id in ids {
            if store.is_frozen(id) {
                continue;
            }
            let p = store.get_mut(id);
            let lr = group_lrs[p.group];
            let st = &mut self.state[id.index()];
            let (value, grad) = (p.value.data_mut(), p.grad.data());
            match self.kind {
                OptimizerKind::Adam => adam_step(
                    &p.name, value, grad, st, lr, momentum, self.beta2, self.eps, weight_decay,
                )?,
                OptimizerKind::Sgd => {
                    st.step += 1;
                    sgd_step(&p.name, value, grad, &mut st.m, lr, momentum, weight_decay)?
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut p = vec![0.3f64, -1.2, 4.0];
        let before = p.clone();
        let mut st = AdamMoments::zeros(3);
        adam_step("w", &mut p, &[0.0; 3], &mut st, 1e-2, 0.9, 0.99, 1e-8, 0.0).unwrap();
        assert_eq!(p, before);
        let mut vel = vec![0.0; 3];
        sgd_step("w", &mut p, &[0.0; 3], &mut vel, 1e-2, 0.9, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_adam_step_closed_form() {
        for &g in &[0.37f64, -2.5, 1e-3] {
            let (lr, b1, b2, eps) = (1e-2, 0.8, 0.99, 1e-8);
            let mut p = vec![1.0f64];
            let mut st = AdamMoments::zeros(1);
            adam_step("w", &mut p, &[g], &mut st, lr, b1, b2, eps, 0.0).unwrap();
            // m̂ = g, v̂ = g², so Δ = lr·g/(|g| + eps)
            let expected = 1.0 - lr * g / (g.abs() + eps);
            assert!((p[0] - expected).abs() < 1e-15, "{} vs {}", p[0], expected);
            assert!(((1.0 - p[0]) - lr * g.signum()).abs() < lr * 1e-4);
        }
    }

    #[test]
    fn decoupled_decay_with_zero_grad() {
        let mut p = vec![2.0f64, -0.5];
        let mut st = AdamMoments::zeros(2);
        adam_step("w", &mut p, &[0.0; 2], &mut st, 1e-2, 0.8, 0.99, 1e-8, 0.1).unwrap();
        let f = 1.0 - 1e-2 * 0.1;
        assert!((p[0] - 2.0 * f).abs() < 1e-15);
        assert!((p[1] + 0.5 * f).abs() < 1e-15);
    }

    #[test]
    fn nan_grad_names_parameter() {
        let mut p = vec![1.0f64];
        let mut st = AdamMoments::zeros(1);
        let err = adam_step("lstm.0.w_hh", &mut p, &[f64::NAN], &mut st, 1e-2, 0.8, 0.99, 1e-8, 0.0)
            .unwrap_err();
        assert!(err.to_string().contains("lstm.0.w_hh"));
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn optimizer_skips_frozen_groups() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::full(&[2], 1.0), 0);
        let b = store.add("b", Tensor::full(&[2], 1.0), 1);
        store.get_mut(a).grad = Tensor::full(&[2], 0.5);
        store.get_mut(b).grad = Tensor::full(&[2], 0.5);
        store.freeze_to(1).unwrap();
        let frozen = store.group_checksum(0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, &store);
        opt.step(&mut store, &[1e-2, 1e-2], 0.8, 0.1).unwrap();
        assert_eq!(store.group_checksum(0), frozen);
        assert!(store.value(b).data()[0] < 1.0);
        assert_eq!(opt.state[a.index()].step, 0);
    }

    #[test]
    fn optimizer_rejects_nan_before_updating() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::full(&[1], 1.0), 0);
        let b = store.add("b", Tensor::full(&[1], 1.0), 0);
        store.get_mut(a).grad = Tensor::full(&[1], 0.5);
        store.get_mut(b).grad = Tensor::full(&[1], f64::INFINITY);
        let mut opt = Optimizer::new(OptimizerKind::Adam, &store);
        let err = opt.step(&mut store, &[1e-2], 0.8, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "b"));
        assert_eq!(store.value(a).data(), &[1.0]);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::zeros(&[2]), 0);
        store.get_mut(a).grad = Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap();
        let n = clip_grad_norm(&mut store, 1.0);
        assert!((n - 5.0).abs() < 1e-12);
        let g = store.get(a).grad.data();
        assert!(((g[0] * g[0] + g[1] * g[1]).sqrt() - 1.0).abs() < 1e-12);
    }
}
