use crate::nn::{ParamId, ParameterStore};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ParameterStore,
    v: ParameterStore,
}

impl Adam {
    pub fn new(params: &ParameterStore) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `lr` gives the rate per tensor; a rate of zero freezes it.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &ParameterStore, lr: impl Fn(ParamId) -> f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in ParamId::ALL {
            let rate = lr(id);
            if rate == 0.0 {
                continue;
            }
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(id);
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(id), self.v.get(id));
            for ((p, mi), vi) in params.get_mut(id).iter_mut().zip(m).zip(v) {
                *p -= rate * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
    }
}
