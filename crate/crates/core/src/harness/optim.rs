use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `g += wd·p; buf = μ·buf + g; p -= lr·buf`.
/// With `max_grad_norm` set, the raw gradients are first rescaled so their
/// global L2 norm does not exceed it.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_grad_norm: Option<f64>,
    /// Momentum buffer per parameter (by store index); `None` for frozen
    /// parameters and before the first step.
    buffers: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            max_grad_norm: None,
            buffers: Vec::new(),
        }
    }

    pub fn with_clip(mut self, max_grad_norm: Option<f64>) -> Self {
        self.max_grad_norm = max_grad_norm;
        self
    }

    /// Global L2 norm of the gradients of all trainable parameters.
    pub fn grad_norm(store: &ParamStore) -> f64 {
        store
            .iter()
            .filter(|(_, p)| p.trainable)
            .flat_map(|(_, p)| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> f64 {
        let norm = Self::grad_norm(store);
        let scale = match self.max_grad_norm {
            Some(max) if norm > max => max / (norm + 1e-6),
            _ => 1.0,
        };
        self.buffers.resize(store.len(), None);
        for (p, buf) in store.iter_mut().zip(self.buffers.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let buf = buf.get_or_insert_with(|| Tensor::zeros(p.tensor.shape()));
            let (mu, wd) = (self.momentum, self.weight_decay);
            let data = p.tensor.data_mut();
            for ((v, b), &g) in data.iter_mut().zip(buf.data_mut()).zip(p.grad.data()) {
                *b = mu * *b + (scale * g + wd * *v);
                *v -= lr * *b;
            }
        }
        norm
    }

    /// Momentum buffers by parameter name, in store order.
    pub fn state(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        store
            .iter()
            .filter_map(|(id, p)| {
                let b = self.buffers.get(id.index())?.as_ref()?;
                Some((p.name.clone(), b.clone()))
            })
            .collect()
    }

    pub fn load_state(&mut self, store: &ParamStore, state: &[(String, Tensor)]) -> Result<()> {
        self.buffers = vec![None; store.len()];
        for (name, t) in state {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Format(format!("momentum buffer for unknown parameter `{name}`")))?;
            if store.get(id).tensor.shape() != t.shape() {
                return Err(Error::Format(format!("momentum buffer `{name}` has the wrong shape")));
            }
            self.buffers[id.index()] = Some(t.clone());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;

    #[test]
    fn two_steps_match_hand_computation() {
        let mut store = ParamStore::new(0);
        let id = store.add("w", [1, 1, 1, 1], Init::Const(1.0), true).unwrap();
        let mut sgd = Sgd::new(0.9, 0.1);
        store.get_mut(id).grad = Tensor::full([1, 1, 1, 1], 0.5);
        sgd.step(&mut store, 0.1);
        // buf = 0.5 + 0.1 = 0.6, w = 1 - 0.06
        assert!((store.get(id).tensor.item().unwrap() - 0.94).abs() < 1e-15);
        sgd.step(&mut store, 0.1);
        // buf = 0.54 + 0.5 + 0.094 = 1.134, w = 0.94 - 0.1134
        assert!((store.get(id).tensor.item().unwrap() - 0.8266).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut store = ParamStore::new(0);
        let id = store.add("rm", [1, 1, 1, 1], Init::Const(2.0), false).unwrap();
        store.get_mut(id).grad = Tensor::full([1, 1, 1, 1], 3.0);
        Sgd::new(0.9, 1e-4).step(&mut store, 1.0);
        assert_eq!(store.get(id).tensor.item().unwrap(), 2.0);
    }

    #[test]
    fn clipping_rescales_to_max_norm() {
        let mut store = ParamStore::new(0);
        let a = store.add("a", [1, 1, 1, 1], Init::Zeros, true).unwrap();
        let b = store.add("b", [1, 1, 1, 1], Init::Zeros, true).unwrap();
        store.get_mut(a).grad = Tensor::full([1, 1, 1, 1], 3.0);
        store.get_mut(b).grad = Tensor::full([1, 1, 1, 1], 4.0);
        let norm = Sgd::new(0.0, 0.0).with_clip(Some(1.0)).step(&mut store, 1.0);
        assert_eq!(norm, 5.0);
        assert!((store.get(a).tensor.item().unwrap() + 0.6).abs() < 1e-6);
        assert!((store.get(b).tensor.item().unwrap() + 0.8).abs() < 1e-6);
    }
}
