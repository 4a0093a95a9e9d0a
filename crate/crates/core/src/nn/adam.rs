use super::param::ParamStore;
use super::tensor::Real;
use crate::error::{Error, Result};

/// Adam moment buffers, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self::with_hyperparams(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(store: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || store.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored in `store`.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(Error::Config(format!(
            "adam state tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let c1 = T::lit(1.0 - state.beta1.powi(t));
    let c2 = T::lit(1.0 - state.beta2.powi(t));
    let lr = T::lit(lr);
    let eps = T::lit(state.eps);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if m.len() != p.value.len() {
            return Err(Error::Config(format!("adam moment size mismatch for {}", p.name)));
        }
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn store_with(value: f32, grad: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::new([1], vec![value]).unwrap()).unwrap();
        s.get_mut(id).grad.data_mut()[0] = grad;
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store_with(0.5, 1.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 1e-4).unwrap();
        let moved = 0.5 - s.iter().next().unwrap().value.data()[0];
        assert!((moved - 1e-4).abs() < 1e-7, "moved {moved}");
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store_with(0.25, 0.0);
        let mut st = AdamState::new(&s);
        for _ in 0..3 {
            adam_step(&mut s, &mut st, 1e-3).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().value.data()[0], 0.25);
        assert_eq!(st.step, 3);
    }

    #[test]
    fn constant_gradient_steps_match() {
        let mut s = store_with(0.0, 0.3);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 1e-2).unwrap();
        let first = s.iter().next().unwrap().value.data()[0];
        adam_step(&mut s, &mut st, 1e-2).unwrap();
        let second = s.iter().next().unwrap().value.data()[0] - first;
        assert!(((second / first) - 1.0).abs() < 0.05);
    }

    #[test]
    fn mismatched_state_rejected() {
        let mut s = store_with(0.0, 1.0);
        let mut st = AdamState::<f32>::new(&ParamStore::new());
        assert!(adam_step(&mut s, &mut st, 1e-3).is_err());
    }
}
