use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup: u64,
    pub total: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, warmup: 1000, total: 60_000 }
    }
}

impl AdamWConfig {
    /// Linear warmup to `lr`, then linear decay to zero at `total`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let s = step as f64;
        let ramp = if self.warmup == 0 { 1.0 } else { (s / self.warmup as f64).min(1.0) };
        let span = self.total.saturating_sub(self.warmup).max(1) as f64;
        let decay = (1.0 - (s - self.warmup as f64).max(0.0) / span).max(0.0);
        self.lr * ramp * decay
    }
}

/// Optimizer moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamWState<T> {
    pub fn new<'a>(config: AdamWConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = params.into_iter().map(|p| (vec![T::zero(); p.numel()], vec![T::zero(); p.numel()])).unzip();
        AdamWState { config, step: 0, m, v }
    }

    /// Learning rate the next update will use.
    pub fn next_lr(&self) -> f64 {
        self.config.lr_at(self.step + 1)
    }

    /// One decoupled-weight-decay update. A non-finite gradient aborts
    /// before anything is modified.
    pub fn update(&mut self, names: &[String], params: &mut [Tensor<T>], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() || names.len() != params.len() {
            return Err(Error::contract(format!(
                "adamw: {} params, {} grads, {} names, {} moment slots",
                params.len(),
                grads.len(),
                names.len(),
                self.m.len()
            )));
        }
        if self.step >= self.config.total {
            return Err(Error::contract(format!("adamw: step {} reached total {}", self.step, self.config.total)));
        }
        for ((name, p), g) in names.iter().zip(params.iter()).zip(grads) {
            if g.len() != p.numel() {
                return Err(Error::contract(format!("adamw: gradient for {name} has {} values, want {}", g.len(), p.numel())));
            }
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} in parameter {name}[{pos}] at step {}",
                    g[pos],
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let lr = T::of(c.lr_at(self.step));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::one() - T::of(c.beta1.powi(t));
        let bc2 = T::one() - T::of(c.beta2.powi(t));
        let (eps, wd) = (T::of(c.eps), T::of(c.weight_decay));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + eps) + wd * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_midpoint() {
        let c = AdamWConfig::default();
        assert!((c.lr_at(500) - 2.5e-5).abs() < 1e-18);
        assert_eq!(c.lr_at(1000), 5e-5);
        assert_eq!(c.lr_at(60_000), 0.0);
        assert!((c.lr_at(30_500) - 2.5e-5).abs() < 1e-18);
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut p = vec![Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5])];
        let before = p.clone();
        let mut st = AdamWState::new(AdamWConfig::default(), &p);
        for _ in 0..10 {
            st.update(&["w".into()], &mut p, &[vec![0.0; 3]]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = vec![Tensor::<f64>::zeros(&[2]), Tensor::zeros(&[1])];
        let mut st = AdamWState::new(AdamWConfig::default(), &p);
        let err = st.update(&["a".into(), "b".into()], &mut p, &[vec![0.0; 2], vec![f64::NAN]]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("b[0]") && msg.contains("step 1"), "{msg}");
        assert_eq!(st.step, 0);
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = AdamWConfig { lr: 0.05, warmup: 100, total: 2000, ..AdamWConfig::default() };
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let mut st = AdamWState::new(cfg, &p);
        for _ in 0..2000 {
            let w = p[0].item();
            st.update(&["w".into()], &mut p, &[vec![2.0 * (w - 3.0)]]).unwrap();
        }
        assert!((p[0].item() - 3.0).abs() < 1e-2, "w = {}", p[0].item());
    }
}
