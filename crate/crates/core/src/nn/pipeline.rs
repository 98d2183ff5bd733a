//! Glue between the network and the recovery map: input features, the
//! per-sample objective on a network output row, and the batch loss gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, Gradients, Mlp, Mode};
use super::Matrix;
use crate::adjoint::{recovered_rate_and_grad, scaled_rate_and_grad};
use crate::channel::ChannelSample;
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::recovery::recover_solution;
use crate::system::{Beamformer, IntermediateParams, QuantNoise, SystemInstance};

/// Which network head feeds the recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Network emits `{p, lambda, mu}`; the beamformer comes from the structured map.
    Proposed,
    /// Network emits the beamformer coordinates directly, followed by the scaling.
    #[serde(rename = "dilearn")]
    DiLearn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::DiLearn => "dilearn",
        }
    }

    pub fn output_dim(self, m: usize, k: usize) -> usize {
        match self {
            Variant::Proposed => 2 * k + m,
            Variant::DiLearn => 2 * m * k,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Variant::Proposed),
            "dilearn" => Ok(Variant::DiLearn),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// `[Re h, Im h]` interleaved per entry in column-major order, then `10 log10 P` and `C`.
pub fn build_input_features(sample: &ChannelSample) -> Vec<f64> {
    let (m, k) = (sample.num_aps(), sample.num_users());
    let mut out = Vec::with_capacity(2 * m * k + 2);
    for col in 0..k {
        for i in 0..m {
            let z = sample.h[(i, col)];
            out.push(z.re);
            out.push(z.im);
        }
    }
    out.push(10.0 * sample.power_budget.log10());
    out.push(sample.capacity);
    out
}

pub fn features_matrix(instances: &[SystemInstance]) -> Matrix {
    let rows: Vec<Vec<f64>> = instances.iter().map(|s| build_input_features(&s.sample)).collect();
    Matrix::from_rows(&rows)
}

fn dilearn_beamformer(row: &[f64], m: usize, k: usize) -> Result<Beamformer> {
    let mk = m * k;
    if row.len() != 2 * mk {
        return Err(Error::Dimension(format!("expected {} outputs, got {}", 2 * mk, row.len())));
    }
    Beamformer::from_column_major(m, k, (0..mk).map(|j| C64::new(row[j], row[mk + j])).collect())
}

/// Feasible solution recovered from one network output row.
pub fn recover_from_output(instance: &SystemInstance, row: &[f64], variant: Variant) -> Result<(Beamformer, QuantNoise)> {
    let (m, k) = (instance.num_aps(), instance.num_users());
    match variant {
        Variant::Proposed => recover_solution(instance, &IntermediateParams::from_output(row, m, k)?),
        Variant::DiLearn => {
            let eval = scaled_rate_and_grad(instance, &dilearn_beamformer(row, m, k)?)?;
            Ok((eval.v, eval.omega))
        }
    }
}

/// Sum-rate of the solution recovered from `row`, with its gradient with respect to `row`.
pub fn output_objective(instance: &SystemInstance, row: &[f64], variant: Variant) -> Result<(f64, Vec<f64>)> {
    let (m, k) = (instance.num_aps(), instance.num_users());
    match variant {
        Variant::Proposed => {
            let eval = recovered_rate_and_grad(instance, &IntermediateParams::from_output(row, m, k)?)?;
            let g = eval.grad;
            Ok((eval.value, [g.p, g.lambda, g.mu].concat()))
        }
        Variant::DiLearn => {
            let eval = scaled_rate_and_grad(instance, &dilearn_beamformer(row, m, k)?)?;
            let g = eval.grad.as_slice();
            let grad = g.iter().map(|z| z.re).chain(g.iter().map(|z| z.im)).collect();
            Ok((eval.value, grad))
        }
    }
}

/// Loss and gradient of one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    /// Negative mean sum-rate over the samples that were not excluded.
    pub loss: f64,
    pub grads: Gradients,
    /// Per-sample sum-rate; `None` for excluded samples.
    pub rates: Vec<Option<f64>>,
    /// Samples whose recovered beamformer was identically zero.
    pub excluded: usize,
    /// Train-mode cache, for folding batch statistics into the running averages.
    pub cache: ForwardCache,
}

/// Train-mode forward, recovery and reverse pass over a mini-batch.
///
/// The model is not modified. Samples recovering an all-zero beamformer are
/// left out of the mean and counted.
pub fn pipeline_gradient(model: &Mlp, batch: &[SystemInstance], variant: Variant) -> Result<BatchObjective> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let x = features_matrix(batch);
    let (out, cache) = model.forward(&x, Mode::Train)?;
    let per_sample: Vec<Result<Option<(f64, Vec<f64>)>>> = batch
        .par_iter()
        .enumerate()
        .map(|(s, instance)| match output_objective(instance, out.row(s), variant) {
            Ok((value, grad)) => {
                if value.is_finite() && grad.iter().all(|g| g.is_finite()) {
                    Ok(Some((value, grad)))
                } else {
                    Err(Error::NonFinite { iteration: 0, sample: s })
                }
            }
            Err(Error::DegenerateBeamformer) => Ok(None),
            Err(Error::InvalidParams(_)) if !out.row(s).iter().all(|v| v.is_finite()) => {
                Err(Error::NonFinite { iteration: 0, sample: s })
            }
            Err(e) => Err(e),
        })
        .collect();

    let mut rates = Vec::with_capacity(batch.len());
    let mut used = Vec::with_capacity(batch.len());
    for r in per_sample {
        let r = r?;
        rates.push(r.as_ref().map(|(v, _)| *v));
        used.push(r);
    }
    let n_used = used.iter().filter(|r| r.is_some()).count();
    let excluded = batch.len() - n_used;
    let mut d_out = Matrix::zeros(out.rows, out.cols);
    let mut total = 0.0;
    for (s, r) in used.iter().enumerate() {
        if let Some((value, grad)) = r {
            total += value;
            for (d, g) in d_out.row_mut(s).iter_mut().zip(grad) {
                *d = -g / n_used as f64;
            }
        }
    }
    let loss = if n_used > 0 { -total / n_used as f64 } else { 0.0 };
    let grads = model.backward(&cache, &d_out)?;
    Ok(BatchObjective { loss, grads, rates, excluded, cache })
}
