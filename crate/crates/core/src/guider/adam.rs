use super::{Params, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.9, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per tensor, flat.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments for tensors of the given flat sizes.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> AdamState<T> {
        AdamState {
            config,
            step: 0,
            m: sizes.iter().map(|n| vec![T::zero(); *n]).collect(),
            v: sizes.iter().map(|n| vec![T::zero(); *n]).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, p: &Params<T>) -> AdamState<T> {
        let sizes: Vec<usize> = p.slices().iter().map(|s| s.len()).collect();
        Self::new(config, &sizes)
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// One update. Fails without touching anything if a gradient is not finite.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!("adam tracks {} tensors, got {}/{}", self.m.len(), params.len(), grads.len())));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::ShapeMismatch("adam tensor size".into()));
            }
        }
        if !grads.iter().all(|g| g.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let c = self.config;
        let cast = |x: f64| T::from(x).expect("cast");
        let (b1, b2, eps) = (cast(c.beta1), cast(c.beta2), cast(c.eps));
        let one = T::one();
        let bias1 = one - cast(c.beta1.powi(self.step as i32));
        let bias2 = one - cast(c.beta2.powi(self.step as i32));
        let lr = cast(c.lr);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step_params(&mut self, params: &mut Params<T>, grads: &Params<T>) -> Result<()> {
        let g = grads.slices();
        let mut p = params.slices_mut();
        self.step(&mut p, &g)
    }
}
