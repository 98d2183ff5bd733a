use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &Mlp, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.parameters().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, first: zeros.clone(), second: zeros }
    }
}

/// One bias-corrected Adam update of every trainable tensor.
pub fn adam_step(model: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let shapes_match = {
        let params = model.parameters();
        params.len() == grads.tensors.len()
            && params.len() == state.first.len()
            && params.iter().zip(&grads.tensors).zip(&state.first).all(|((p, g), m)| p.len() == g.len() && p.len() == m.len())
    };
    if !shapes_match {
        return Err(Error::Contract("optimizer state does not match the model".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (((param, g), m), v) in
        model.parameters_mut().into_iter().zip(&grads.tensors).zip(&mut state.first).zip(&mut state.second)
    {
        for j in 0..param.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            param[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpConfig;

    fn model() -> Mlp {
        Mlp::new(MlpConfig::proposed(2, 2, 3, 8), 4).unwrap()
    }

    fn patterned(model: &Mlp, scale: f64) -> Gradients {
        Gradients {
            tensors: model
                .parameters()
                .iter()
                .enumerate()
                .map(|(t, p)| (0..p.len()).map(|j| scale * (((t * 31 + j) as f64) * 0.7).sin()).collect())
                .collect(),
        }
    }

    #[test]
    fn first_step_moves_by_lr_along_sign() {
        let mut m = model();
        let before = m.clone();
        let g = patterned(&m, 1.0);
        let mut state = AdamState::new(&m, 1e-3);
        adam_step(&mut m, &g, &mut state).unwrap();
        for ((a, b), gt) in m.parameters().iter().zip(before.parameters()).zip(&g.tensors) {
            for j in 0..a.len() {
                let delta = a[j] - b[j];
                if gt[j].abs() > 1e-3 {
                    assert!(delta.abs() <= 1e-3 * (1.0 + 1e-12) && delta.abs() >= 1e-3 * (1.0 - 1e-4));
                    assert_eq!(delta.signum(), -gt[j].signum());
                }
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = model();
        let before = m.clone();
        let g = patterned(&m, 0.0);
        let mut state = AdamState::new(&m, 1e-2);
        for _ in 0..50 {
            adam_step(&mut m, &g, &mut state).unwrap();
        }
        assert_eq!(m.parameters(), before.parameters());
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut m = model();
            let mut state = AdamState::new(&m, 1e-3);
            for i in 0..20 {
                let g = patterned(&m, 1.0 + i as f64);
                adam_step(&mut m, &g, &mut state).unwrap();
            }
            (m, state)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.parameters(), b.parameters());
        assert_eq!(sa, sb);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut m = model();
        let mut state = AdamState::new(&m, 1e-3);
        let g = Gradients { tensors: vec![vec![0.0; 3]] };
        assert!(adam_step(&mut m, &g, &mut state).is_err());
    }
}
