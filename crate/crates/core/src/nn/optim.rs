use super::params::ParamStore;
use super::tensor::Tensor;
use crate::math;

/// Adam with bias correction. Gradients are cleared after every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn step(&self, store: &mut ParamStore) {
        adam_step(store, self.lr, self.beta1, self.beta2, self.eps);
    }
}

pub fn adam_step(store: &mut ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    store.step += 1;
    let t = store.step as i32;
    let bias1 = 1.0 - libm::pow(beta1, t as f64);
    let bias2 = 1.0 - libm::pow(beta2, t as f64);
    for slot in &mut store.slots {
        let grad = match slot.grad.take() {
            Some(g) => g,
            None => continue,
        };
        if !slot.trainable {
            continue;
        }
        let m = slot.first_moment.get_or_insert_with(|| Tensor::zeros_like(&slot.value));
        let v = slot
            .second_moment
            .get_or_insert_with(|| Tensor::zeros_like(&slot.value));
        let values = slot.value.data_mut();
        for (((p, &g), m), v) in values.iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
    }
    store.zero_grad();
}
