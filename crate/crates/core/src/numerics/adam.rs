use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, learning rate `lr` and the usual
    /// (0.9, 0.999, 1e-8) constants.
    pub fn new(params: &[Tensor], lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f32] {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f32] {
        &self.second[i]
    }
}

/// One bias-corrected Adam update. Returns the new parameters; `state` is
/// advanced in place. A non-finite gradient leaves both untouched.
pub fn adam_step(state: &mut AdamState, params: &[Tensor], grads: &[Tensor]) -> Result<Vec<Tensor>> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Dimension(format!(
            "{} params, {} grads, optimizer tracks {}",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first[i].len() {
            return Err(Error::Dimension(format!(
                "parameter {i}: dims {:?} vs gradient {:?}",
                p.dims(),
                g.dims()
            )));
        }
        if let Some(bad) = g.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Training {
                step: state.step as usize,
                detail: format!("gradient of parameter {i} contains {bad}"),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = f64::from(state.beta1);
    let b2 = f64::from(state.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let lr = f64::from(state.lr);
    let eps = f64::from(state.epsilon);

    let mut out = Vec::with_capacity(params.len());
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        let mut data = Vec::with_capacity(p.len());
        for (j, (&pv, &gv)) in p.data().iter().zip(g.data()).enumerate() {
            let gv = f64::from(gv);
            let mj = b1 * f64::from(m[j]) + (1.0 - b1) * gv;
            let vj = b2 * f64::from(v[j]) + (1.0 - b2) * gv * gv;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let m_hat = mj / correction1;
            let v_hat = vj / correction2;
            data.push((f64::from(pv) - lr * m_hat / (v_hat.sqrt() + eps)) as f32);
        }
        out.push(Tensor::new(p.dims().to_vec(), data)?);
    }
    Ok(out)
}
