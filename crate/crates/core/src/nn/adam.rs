//! Adam with decoupled weight decay.

use ndarray::Array2;

use super::params::ParamSet;

/// First/second moment estimates for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let m = (0..params.len())
            .map(|i| Array2::zeros(params.value(i).dim()))
            .collect();
        let v = (0..params.len())
            .map(|i| Array2::zeros(params.value(i).dim()))
            .collect();
        AdamState {
            m,
            v,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Number of update steps applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. `grads[i]` pairs with parameter `i`; parameters
    /// without a gradient are untouched. Weight decay is decoupled: the
    /// parameter first shrinks by `1 - lr * wd`, then the Adam step is
    /// subtracted, so zero data gradient still decays the weights and zero
    /// learning rate changes nothing.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &[Option<Array2<f64>>],
        lr: f64,
        weight_decay: f64,
    ) {
        assert_eq!(grads.len(), params.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let Some(g) = grads[i].as_ref() else {
                continue;
            };
            if !params.is_trainable(i) {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |m, g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let value = params.value_mut(i);
            for ((p, m), v) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                *p *= 1.0 - lr * weight_decay;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Learning-rate schedules over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    None,
    CosineAnnealing,
}

impl LrSchedule {
    /// Learning rate for `epoch` of `total_epochs` given the base rate.
    pub fn lr_at(&self, base_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
        match self {
            LrSchedule::None => base_lr,
            LrSchedule::CosineAnnealing => {
                if total_epochs <= 1 {
                    return base_lr;
                }
                let t = epoch as f64 / (total_epochs - 1) as f64;
                0.5 * base_lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}
