use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::trainer::{GradientSet, ParameterStore};

/// Euclidean norm over all gradient entries.
pub fn global_norm(grads: &GradientSet) -> f64 {
    grads.values().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `threshold`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut GradientSet, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::Setting(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    if let Some((name, _)) = grads.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::NonFiniteGradient(name.clone()));
    }
    let norm = global_norm(grads);
    if norm > threshold {
        let k = threshold / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adadelta {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for Adadelta {
    fn default() -> Self {
        Adadelta {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl Adadelta {
    /// `(E[g²]', Δ, E[Δ²]')` for one coordinate. A zero gradient gives a zero
    /// update even when `ε = 0`.
    pub fn coordinate(&self, acc_grad: f64, acc_update: f64, g: f64) -> (f64, f64, f64) {
        let (rho, eps) = (self.rho, self.epsilon);
        let acc_grad = rho * acc_grad + (1.0 - rho) * g * g;
        let delta = if g == 0.0 {
            0.0
        } else {
            -((acc_update + eps).sqrt() / (acc_grad + eps).sqrt()) * g
        };
        let acc_update = rho * acc_update + (1.0 - rho) * delta * delta;
        (acc_grad, delta, acc_update)
    }

    /// Applies one update to every parameter. Parameters without a gradient
    /// are treated as having a zero gradient. Nothing is modified if any
    /// update would be non-finite.
    pub fn step(&self, store: &mut ParameterStore, grads: &GradientSet) -> Result<()> {
        if let Some(name) = grads.keys().find(|n| !store.contains(n)) {
            return Err(Error::MissingParam(name.clone()));
        }
        let mut staged: Vec<(String, Tensor, Tensor, Tensor)> = Vec::with_capacity(store.len());
        for (name, p) in store.iter() {
            let zero;
            let g = match grads.get(name) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(p.value.shape());
                    &zero
                }
            };
            if g.shape() != p.value.shape() {
                return Err(Error::Dimension(format!(
                    "gradient for `{name}` has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
            let mut value = p.value.clone();
            let mut acc_grad = p.acc_grad.clone();
            let mut acc_update = p.acc_update.clone();
            for i in 0..value.len() {
                let (eg, d, ed) = self.coordinate(acc_grad.data()[i], acc_update.data()[i], g.data()[i]);
                acc_grad.data_mut()[i] = eg;
                acc_update.data_mut()[i] = ed;
                value.data_mut()[i] += d;
            }
            if !(value.is_finite() && acc_grad.is_finite() && acc_update.is_finite()) {
                return Err(Error::NonFiniteUpdate(name.to_string()));
            }
            staged.push((name.to_string(), value, acc_grad, acc_update));
        }
        for (name, value, acc_grad, acc_update) in staged {
            let p = store.get_mut(&name).expect("staged from the store");
            p.value = value;
            p.acc_grad = acc_grad;
            p.acc_update = acc_update;
        }
        Ok(())
    }
}

/// One Adadelta update with the given decay and conditioning constant.
pub fn adadelta_step(store: &mut ParameterStore, grads: &GradientSet, rho: f64, epsilon: f64) -> Result<()> {
    Adadelta { rho, epsilon }.step(store, grads)
}
