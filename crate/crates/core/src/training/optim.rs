use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Var};

use super::{Result, TrainError};

/// `-log softmax(logits)[label]` for a `[1 x classes]` row, shifted by the
/// row maximum before exponentiation.
pub fn cross_entropy<'t>(logits: Var<'t>, label: usize) -> Result<Var<'t>> {
    let classes = logits.numel();
    if label >= classes {
        return Err(TrainError::Label { label, classes });
    }
    let row = logits.reshape(&[1, classes])?;
    let shift = row.value().data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = row.add_const(-shift)?;
    let log_sum = z.exp()?.sum_all()?.log()?;
    Ok(log_sum.sub(z.slice_cols(label, 1)?.sum_all()?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
    pub(crate) t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Bias-corrected update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore, cfg: &AdamConfig) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = p.grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
}

/// Euclidean norm of all accumulated gradients taken together.
pub fn global_grad_norm(store: &ParamStore) -> f64 {
    store
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales the gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = global_grad_norm(store);
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for p in store.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, Tape, Tensor};
    use approx::assert_abs_diff_eq;

    fn loss_of(logits: &[f64], label: usize) -> f64 {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, logits.len(), logits.to_vec()).unwrap());
        cross_entropy(x, label).unwrap().item()
    }

    #[test]
    fn cross_entropy_values() {
        assert_abs_diff_eq!(loss_of(&[0.0, 0.0], 0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(loss_of(&[1000.0, 0.0], 0), 0.0, epsilon = 1e-300);
        assert_abs_diff_eq!(loss_of(&[1000.0, 0.0], 1), 1000.0, epsilon = 1e-9);
        // Direct evaluation for moderate logits.
        let l: [f64; 3] = [0.3, -1.2, 2.0];
        let direct = -(l[2].exp() / l.iter().map(|x| x.exp()).sum::<f64>()).ln();
        assert_abs_diff_eq!(loss_of(&l, 2), direct, epsilon = 1e-14);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        assert!(matches!(cross_entropy(x, 3), Err(TrainError::Label { label: 3, classes: 3 })));
    }

    #[test]
    fn cross_entropy_gradient() {
        let x = Tensor::matrix(1, 5, vec![0.4, -2.0, 1.5, 0.0, 3.1]).unwrap();
        for label in 0..5 {
            let err = finite_difference_check(
                |_, v| {
                    cross_entropy(v, label).map_err(|e| match e {
                        TrainError::Autodiff(e) => e,
                        other => panic!("{other}"),
                    })
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "label {label}: {err}");
        }
    }

    fn store_with(values: &[f64]) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("x", Tensor::vector(values.to_vec()));
        store
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut store = store_with(&[1.0, -2.0]);
        let mut adam = Adam::new(&store);
        adam.m[0] = vec![0.5, 0.5];
        adam.v[0] = vec![0.25, 0.25];
        let cfg = AdamConfig::default();
        let before = store.iter().next().unwrap().value.clone();
        adam.step(&mut store, &cfg);
        assert_eq!(adam.m[0], vec![0.45, 0.45]);
        assert_abs_diff_eq!(adam.v[0][0], 0.25 * 0.999, epsilon = 1e-16);
        // Stale momentum still moves the parameters, but fresh state does not.
        assert_ne!(store.iter().next().unwrap().value, before);
        let mut store = store_with(&[1.0, -2.0]);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &cfg);
        assert_eq!(store.iter().next().unwrap().value, Tensor::vector(vec![1.0, -2.0]));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = store_with(&[0.0, 0.0, 0.0]);
        let mut adam = Adam::new(&store);
        store.iter_mut().next().unwrap().grad = vec![3.0, -1e-3, 50.0];
        adam.step(&mut store, &AdamConfig::default());
        let got = store.iter().next().unwrap().value.data().to_vec();
        for (x, sign) in got.iter().zip([-1.0, 1.0, -1.0]) {
            assert_abs_diff_eq!(*x, sign * 1e-3, epsilon = 1e-7);
        }
    }

    #[test]
    fn converges_on_a_quadratic() {
        // f(x, y) = (x - 1)^2 + 10 (y + 2)^2
        let mut store = store_with(&[0.0, 0.0]);
        let mut adam = Adam::new(&store);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let loss = |s: &ParamStore| {
            let x = s.iter().next().unwrap().value.data();
            (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2)
        };
        for _ in 0..200 {
            let x = store.iter().next().unwrap().value.data().to_vec();
            store.iter_mut().next().unwrap().grad = vec![2.0 * (x[0] - 1.0), 20.0 * (x[1] + 2.0)];
            adam.step(&mut store, &cfg);
        }
        assert!(loss(&store) < 1e-6, "{}", loss(&store));
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(vec![0.0; 2]));
        store.add("b", Tensor::vector(vec![0.0]));
        store.iter_mut().next().unwrap().grad = vec![3.0, 0.0];
        store.iter_mut().nth(1).unwrap().grad = vec![4.0];
        assert_eq!(clip_grad_norm(&mut store, 1.0), 5.0);
        assert_abs_diff_eq!(global_grad_norm(&store), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(store.iter().next().unwrap().grad[0], 0.6, epsilon = 1e-15);
        // Already small enough: untouched.
        assert_eq!(clip_grad_norm(&mut store, 2.0), global_grad_norm(&store));
        assert_abs_diff_eq!(store.iter().nth(1).unwrap().grad[0], 0.8, epsilon = 1e-15);
    }
}
