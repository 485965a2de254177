//! Adam with bias correction over a list of parameter matrices.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &[Array2<f64>]) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &[Array2<f64>], config: AdamConfig) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            config,
        }
    }
}

/// One in-place Adam update.
pub fn adam_step(
    params: &mut [Array2<f64>],
    grads: &[Array2<f64>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameter blocks, {} gradients, {} moment blocks",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() || p.dim() != state.m[i].dim() {
            return Err(Error::Shape(format!(
                "block {i}: parameter {:?}, gradient {:?}, state {:?}",
                p.dim(),
                g.dim(),
                state.m[i].dim()
            )));
        }
    }
    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}
