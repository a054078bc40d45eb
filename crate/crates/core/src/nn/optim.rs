use super::params::ParamStore;
use super::tensor::Tensor;

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let frac = (step.min(total) as f64) / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let values = p.value.data_mut();
            let grads = p.grad.data();
            for (((w, &g), mi), vi) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *w);
            }
        }
    }
}

/// Scales gradients so their global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    norm
}
