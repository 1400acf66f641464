use std::collections::HashMap;

use super::{NnError, ParamId, ParamStore, Tensor};

/// Adaptive-moment optimizer with optional decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: HashMap<ParamId, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment accumulators of a parameter, if it has been
    /// stepped at least once.
    pub fn moments(&self, id: ParamId) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(&id).map(|(m, v)| (m, v))
    }

    /// Applies one update to every updatable parameter and clears all
    /// gradient accumulators. Nothing is modified when any gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        for (_, p) in store.iter() {
            if p.updatable() && !p.grad.all_finite() {
                return Err(NnError::NonFinite(p.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.updatable() {
                p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
                continue;
            }
            let (m, v) = self.moments.entry(id).or_insert_with(|| {
                (
                    Tensor::zeros(p.value.shape()),
                    Tensor::zeros(p.value.shape()),
                )
            });
            let grads = p.grad.data();
            let vals = p.value.data_mut();
            for (((x, &g), mi), vi) in vals
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *x);
            }
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![0.25, -1.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..3 {
            opt.step(&mut store).unwrap();
        }
        assert_eq!(store.get(id).value.data(), &[0.25, -1.0]);
        let (m, v) = opt.moments(id).unwrap();
        assert!(m.data().iter().chain(v.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(2.0));
        store.get_mut(id).grad = Tensor::scalar(1.0);
        let mut opt = Adam::new(0.1);
        opt.step(&mut store).unwrap();
        let delta = store.get(id).value.item() - 2.0;
        assert!((delta + 0.1).abs() < 1e-8, "delta {delta}");
        assert_eq!(store.get(id).grad.item(), 0.0);
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(2.0));
        store.set_frozen(id, true);
        store.get_mut(id).grad = Tensor::scalar(5.0);
        let mut opt = Adam::new(0.1);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(id).value.item().to_bits(), 2.0f64.to_bits());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::new();
        let ok = store.add("ok", Tensor::scalar(1.0));
        let bad = store.add("enc/bad", Tensor::scalar(1.0));
        store.get_mut(ok).grad = Tensor::scalar(1.0);
        store.get_mut(bad).grad = Tensor::scalar(f64::NAN);
        let mut opt = Adam::new(0.1);
        match opt.step(&mut store) {
            Err(NnError::NonFinite(name)) => assert_eq!(name, "enc/bad"),
            other => panic!("{other:?}"),
        }
        assert_eq!(store.get(ok).value.item(), 1.0);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_weights() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0));
        let mut opt = Adam::new(0.1).with_weight_decay(0.5);
        opt.step(&mut store).unwrap();
        assert!((store.get(id).value.item() - 0.95).abs() < 1e-12);
    }
}
