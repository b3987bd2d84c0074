use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for (k, id) in store.ids().enumerate() {
            let p = store.get(id);
            if self.first[k].len() != p.tensor.len() || p.grad.len() != p.tensor.len() {
                return Err(Error::Shape(format!(
                    "parameter `{}`: moments of length {} for {} values",
                    p.name,
                    self.first[k].len(),
                    p.tensor.len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for (k, id) in store.ids().enumerate() {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let grad = p.grad.data().to_vec();
            for (i, value) in p.tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                *value -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Tensor};

    fn quadratic_grad(store: &mut ParamStore, target: &[f64]) {
        store.zero_grad();
        let id = store.ids().next().unwrap();
        let mut g = Graph::new();
        let x = g.param(store, id);
        let t = g.input(Tensor::vector(target.to_vec()));
        let d = g.sub(x, t).unwrap();
        let loss = g.dot(d, d).unwrap();
        g.backward(loss).unwrap().accumulate_into(&g, store);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        store.add_vector("x", vec![1.0, -3.0]).unwrap();
        let mut adam = AdamState::new(&store, 0.003);
        adam.step(&mut store).unwrap();
        assert_eq!(store.iter().next().unwrap().tensor.data(), &[1.0, -3.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn one_step_descends() {
        let mut store = ParamStore::new();
        store.add_vector("x", vec![1.0]).unwrap();
        let mut adam = AdamState::new(&store, 0.003);
        quadratic_grad(&mut store, &[0.0]);
        adam.step(&mut store).unwrap();
        let x = store.iter().next().unwrap().tensor.data()[0];
        assert!(x < 1.0);
        assert!((x - (1.0 - 0.003)).abs() < 1e-6);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let target = [0.5, -0.25, 0.1];
        let mut store = ParamStore::new();
        store.add_vector("x", vec![0.0, 0.0, 0.0]).unwrap();
        let mut adam = AdamState::new(&store, 0.01);
        for _ in 0..500 {
            quadratic_grad(&mut store, &target);
            adam.step(&mut store).unwrap();
        }
        let x = store.iter().next().unwrap().tensor.data().to_vec();
        for (a, b) in x.iter().zip(target) {
            assert!((a - b).abs() < 1e-3, "{x:?}");
        }
    }

    #[test]
    fn mismatched_store_is_rejected() {
        let mut store = ParamStore::new();
        store.add_vector("x", vec![0.0]).unwrap();
        let mut adam = AdamState::new(&store, 0.01);
        store.add_vector("y", vec![0.0]).unwrap();
        assert!(matches!(adam.step(&mut store), Err(Error::Shape(_))));
    }
}
