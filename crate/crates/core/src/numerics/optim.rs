use super::{ParamGrads, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adaptive-moment first-order optimizer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

/// First and second moment buffers plus the update count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::new(t.dims().to_vec(), vec![0.0; t.numel()]).unwrap())
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState::zeros_like(store),
        }
    }

    pub fn with_state(lr: f64, state: AdamState, store: &ParamStore) -> Result<Self> {
        let shapes_match = state.m.len() == store.len()
            && state.v.len() == store.len()
            && store
                .iter()
                .zip(state.m.iter().zip(&state.v))
                .all(|((_, _, p), (m, v))| p.dims() == m.dims() && p.dims() == v.dims());
        if !shapes_match {
            return Err(Error::Contract("optimizer state does not match parameters".into()));
        }
        Ok(Self {
            state,
            ..Self::new(lr, store)
        })
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.state.t += 1;
        let t = self.state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            let p = store.get_mut(id);
            for k in 0..g.numel() {
                let gk = g.data()[k];
                let mk = &mut m.data_mut()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let m_hat = m.data()[k] / bc1;
                let v_hat = v.data()[k] / bc2;
                p.data_mut()[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
