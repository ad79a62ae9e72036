use crate::error::{Error, Result};

/// 1cycle schedule: cosine warm-up from `lr_max/div_start` to `lr_max` over
/// the first `pct_start` of training, then cosine annealing to
/// `lr_max/div_final`. Momentum runs `mom_high → mom_low` during warm-up and
/// `mom_low → mom_final` afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycleConfig {
    pub lr_max: f64,
    pub pct_start: f64,
    pub div_start: f64,
    pub div_final: f64,
    pub mom_high: f64,
    pub mom_low: f64,
    pub mom_final: f64,
    pub total_steps: usize,
}

impl OneCycleConfig {
    pub fn new(lr_max: f64, total_steps: usize) -> Self {
        Self {
            lr_max,
            pct_start: 0.25,
            div_start: 25.0,
            div_final: 1e5,
            mom_high: 0.95,
            mom_low: 0.85,
            mom_final: 0.95,
            total_steps,
        }
    }

    pub fn with_moms(mut self, (high, low, last): (f64, f64, f64)) -> Self {
        self.mom_high = high;
        self.mom_low = low;
        self.mom_final = last;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(Error::invalid(format!("pct_start {} not in (0, 1)", self.pct_start)));
        }
        if !(self.div_start > 1.0 && self.div_final > 1.0) {
            return Err(Error::invalid("div factors must exceed 1"));
        }
        if !(self.mom_low < self.mom_high) {
            return Err(Error::invalid(format!(
                "mom_low {} must be below mom_high {}",
                self.mom_low, self.mom_high
            )));
        }
        if !(self.lr_max > 0.0) || self.total_steps == 0 {
            return Err(Error::invalid("lr_max and total_steps must be positive"));
        }
        Ok(())
    }

    pub fn peak_step(&self) -> f64 {
        self.pct_start * self.total_steps as f64
    }
}

fn cos_interp(start: f64, end: f64, t: f64) -> f64 {
    if t <= 0.0 {
        start
    } else if t >= 1.0 {
        end
    } else {
        start + (end - start) * (1.0 - (std::f64::consts::PI * t).cos()) / 2.0
    }
}

/// `(learning rate, momentum)` at `step` in `0..=total_steps`.
pub fn one_cycle(step: usize, cfg: &OneCycleConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(Error::invalid(format!(
            "step {step} beyond schedule of {} steps",
            cfg.total_steps
        )));
    }
    let s = step as f64;
    let peak = cfg.peak_step();
    let lr_start = cfg.lr_max / cfg.div_start;
    let lr_end = cfg.lr_max / cfg.div_final;
    if s <= peak {
        let t = s / peak;
        Ok((
            cos_interp(lr_start, cfg.lr_max, t),
            cos_interp(cfg.mom_high, cfg.mom_low, t),
        ))
    } else {
        let t = (s - peak) / (cfg.total_steps as f64 - peak);
        Ok((
            cos_interp(cfg.lr_max, lr_end, t),
            cos_interp(cfg.mom_low, cfg.mom_final, t),
        ))
    }
}

/// Geometric ladder `[base/factor^(n-1), …, base/factor, base]`, lowest group first.
pub fn discriminative_lrs(base_lr: f64, n_groups: usize, factor: f64) -> Result<Vec<f64>> {
    if n_groups == 0 {
        return Err(Error::invalid("need at least one layer group"));
    }
    if !(factor > 1.0) {
        return Err(Error::invalid(format!("lr spread factor {factor} must exceed 1")));
    }
    Ok((0..n_groups)
        .map(|i| base_lr / factor.powi((n_groups - 1 - i) as i32))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OneCycleConfig {
        OneCycleConfig::new(1e-2, 1000).with_moms((0.8, 0.7, 0.8))
    }

    #[test]
    fn endpoints_and_peak() {
        let c = cfg();
        let (lr, mom) = one_cycle(0, &c).unwrap();
        assert!((lr - 1e-2 / 25.0).abs() < 1e-12);
        assert!((mom - 0.8).abs() < 1e-12);
        let (lr, mom) = one_cycle(250, &c).unwrap();
        assert!((lr - 1e-2).abs() < 1e-12);
        assert!((mom - 0.7).abs() < 1e-12);
        let (lr, mom) = one_cycle(1000, &c).unwrap();
        assert!((lr - 1e-7).abs() < 1e-12);
        assert!((mom - 0.8).abs() < 1e-12);
        assert!(one_cycle(1001, &c).is_err());
    }

    #[test]
    fn unimodal_over_scan() {
        let c = cfg();
        let lrs: Vec<f64> = (0..=1000).map(|s| one_cycle(s, &c).unwrap().0).collect();
        let peak = lrs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(lrs[..=peak].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[peak..].windows(2).all(|w| w[0] >= w[1]));
        let moms: Vec<f64> = (0..=1000).map(|s| one_cycle(s, &c).unwrap().1).collect();
        assert!(moms[..=peak].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn invalid_configs() {
        let mut c = cfg();
        c.pct_start = 1.0;
        assert!(one_cycle(0, &c).is_err());
        let mut c = cfg();
        c.mom_low = 0.9;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.div_start = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ladder() {
        assert_eq!(discriminative_lrs(5e-2, 1, 2.6).unwrap(), vec![5e-2]);
        let l = discriminative_lrs(5e-2, 4, 2.6).unwrap();
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        for w in l.windows(2) {
            assert!((w[1] / w[0] - 2.6).abs() < 1e-12);
        }
        assert!(discriminative_lrs(1.0, 0, 2.6).is_err());
        assert!(discriminative_lrs(1.0, 2, 1.0).is_err());
    }
}
