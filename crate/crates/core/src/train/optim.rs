use crate::error::{Error, Result};
use crate::nn::{ParamSet, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    cfg: AdamConfig,
    m: ParamSet<T>,
    v: ParamSet<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamSet<T>, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let step = T::lit(lr / c1);
        let (inv_c2, eps) = (T::lit(1.0 / c2), T::lit(eps));
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            ndarray::Zip::from(&mut p.value)
                .and(&g.value)
                .and(&mut m.value)
                .and(&mut v.value)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
                });
        }
    }
}

/// Piecewise-constant learning rate, multiplied by `gamma` at each
/// milestone epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStepLr {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepLr {
    pub fn validate(&self) -> Result<()> {
        if !(self.base >= 0.0 && self.base.is_finite()) {
            return Err(Error::config("train.lr", "must be finite and non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("train.gamma", "must lie in (0, 1]"));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "train.milestones",
                "must be strictly increasing",
            ));
        }
        Ok(())
    }

    /// Rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base * self.gamma.powi(passed as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};

    #[test]
    fn schedule_steps_at_milestones() {
        let s = MultiStepLr {
            base: 1e-3,
            milestones: vec![100, 150],
            gamma: 0.1,
        };
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(99), 1e-3);
        assert!((s.lr_at(100) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at(199) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamSet::<f64>::new();
        p.push("w", arr1(&[1.0, -2.0]).into_dyn());
        let mut g = p.zeros_like();
        g.get_mut(0).assign(
            &arr1(&[0.5, -3.0])
                .into_shape_with_order(IxDyn(&[2]))
                .unwrap(),
        );
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.step(&mut p, &g, 0.1);
        // bias-corrected first step is lr * sign(g)
        assert!((p.get(0)[[0]] - 0.9).abs() < 1e-6);
        assert!((p.get(0)[[1]] + 1.9).abs() < 1e-6);
        let before = p.fingerprint();
        adam.step(&mut p, &g, 0.0);
        assert_eq!(p.fingerprint(), before);
    }
}
