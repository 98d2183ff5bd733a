//! Property suites behind the `verify` command, plus the random case
//! generators they share with the test suites.
//!
//! Every case is drawn from its own random stream `(seed, index)`, so a
//! reported failure can be replayed from the two numbers alone.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::recovered_rate_and_grad;
use crate::baselines::{brute_force_oracle, local_search, LocalSearchConfig};
use crate::channel::{sample_rng, InstanceSpec};
use crate::error::Result;
use crate::linalg::C64;
use crate::nn::{pipeline_gradient, Mlp, MlpConfig, Variant};
use crate::recovery::{
    assemble_beamformer, check_feasibility, recover_direction, recover_quant_noise, scale_to_feasible, FEASIBILITY_TOL,
};
use crate::system::{sum_rate, Beamformer, IntermediateParams, SystemInstance};

/// Deliberate defects used to check that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Beamformer inflated by 1% after the feasibility scaling.
    Scaling,
}

impl std::str::FromStr for Fault {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaling" => Ok(Fault::Scaling),
            other => Err(crate::Error::Config(format!("unknown fault {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub seed: u64,
    pub feasibility_cases: usize,
    pub direction_cases: usize,
    pub gradient_cases: usize,
    pub network_gradient_cases: usize,
    pub scalar_cases: usize,
    pub phase_cases: usize,
    pub fault: Option<Fault>,
}

impl VerifyConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            feasibility_cases: 10_000,
            direction_cases: 10_000,
            gradient_cases: 200,
            network_gradient_cases: 5,
            scalar_cases: 100,
            phase_cases: 1000,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub suite: String,
    pub invariant: String,
    pub seed: u64,
    pub case: u64,
    pub m: usize,
    pub k: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<Failure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// System size in `1..=6` each and an instance drawn from the default distributions.
pub fn random_instance(seed: u64, case: u64) -> Result<(SystemInstance, ChaCha8Rng)> {
    let mut rng = sample_rng(seed, case);
    let m = rng.random_range(1..=6);
    let k = rng.random_range(1..=6);
    let sample = InstanceSpec::new(m, k).sample(rng.random(), 0)?;
    Ok((SystemInstance::new(sample), rng))
}

/// Nonnegative `p` (not all zero, some exact zeros), `lambda >= 0`, `mu > 0`,
/// spread over six decades.
pub fn random_params(rng: &mut ChaCha8Rng, m: usize, k: usize) -> IntermediateParams {
    let mut p: Vec<f64> =
        (0..k).map(|_| if rng.random_bool(0.15) { 0.0 } else { log_uniform(rng, 1e-3, 1e3) }).collect();
    if p.iter().all(|x| *x == 0.0) {
        let j = rng.random_range(0..k);
        p[j] = log_uniform(rng, 1e-3, 1e3);
    }
    let lambda = (0..k).map(|_| if rng.random_bool(0.1) { 0.0 } else { log_uniform(rng, 1e-3, 1e3) }).collect();
    let mu = (0..m).map(|_| log_uniform(rng, 1e-3, 1e3)).collect();
    IntermediateParams { p, lambda, mu }
}

struct Outcome {
    invariant: &'static str,
    m: usize,
    k: usize,
    detail: Option<String>,
}

fn run_suite(suite: &str, seed: u64, cases: usize, f: impl Fn(u64) -> Result<Outcome> + Sync) -> SuiteReport {
    let results: Vec<(u64, Result<Outcome>)> = (0..cases as u64).into_par_iter().map(|c| (c, f(c))).collect();
    let mut report = SuiteReport { suite: suite.to_string(), cases, failures: 0, first_failure: None };
    for (case, r) in results {
        let failure = match r {
            Ok(Outcome { detail: None, .. }) => None,
            Ok(Outcome { invariant, m, k, detail: Some(detail) }) => Some((invariant.to_string(), m, k, detail)),
            Err(e) => Some(("no-error".to_string(), 0, 0, e.to_string())),
        };
        if let Some((invariant, m, k, detail)) = failure {
            report.failures += 1;
            if report.first_failure.is_none() {
                report.first_failure = Some(Failure { suite: suite.to_string(), invariant, seed, case, m, k, detail });
            }
        }
    }
    report
}

/// Recovered solutions satisfy the power budget and hold the fronthaul
/// constraint with equality.
pub fn feasibility_suite(seed: u64, cases: usize, fault: Option<Fault>) -> SuiteReport {
    run_suite("feasibility", seed, cases, |case| {
        let (inst, mut rng) = random_instance(seed, case)?;
        let (m, k) = (inst.num_aps(), inst.num_users());
        let params = random_params(&mut rng, m, k);
        let dirs = recover_direction(inst.h(), &params.lambda, &params.mu)?;
        let mut v = scale_to_feasible(&assemble_beamformer(&params.p, &dirs)?, inst.power_budget(), inst.beta)?;
        if fault == Some(Fault::Scaling) {
            v = v.scaled(1.01);
        }
        let omega = recover_quant_noise(&v, inst.beta);
        let rep = check_feasibility(&v, &omega, inst.power_budget(), inst.beta, FEASIBILITY_TOL);
        let detail = if rep.worst_power_slack < -FEASIBILITY_TOL {
            Some(("power-budget", format!("AP {} slack {:e}", rep.worst_power_ap, rep.worst_power_slack)))
        } else if rep.max_fronthaul_gap > 1e-9 * inst.power_budget() {
            Some(("fronthaul-equality", format!("gap {:e} with P={}", rep.max_fronthaul_gap, inst.power_budget())))
        } else if !rep.feasible {
            Some(("feasible", format!("{rep:?}")))
        } else {
            None
        };
        Ok(match detail {
            Some((invariant, d)) => Outcome { invariant, m, k, detail: Some(d) },
            None => Outcome { invariant: "", m, k, detail: None },
        })
    })
}

/// Unit-norm directions, invariant under a joint scaling of `(lambda, mu)`.
pub fn direction_suite(seed: u64, cases: usize) -> SuiteReport {
    run_suite("directions", seed, cases, |case| {
        let (inst, mut rng) = random_instance(seed, case)?;
        let (m, k) = (inst.num_aps(), inst.num_users());
        let params = random_params(&mut rng, m, k);
        let c = log_uniform(&mut rng, 1e-3, 1e3);
        let dirs = recover_direction(inst.h(), &params.lambda, &params.mu)?;
        let scaled_l: Vec<f64> = params.lambda.iter().map(|x| x * c).collect();
        let scaled_m: Vec<f64> = params.mu.iter().map(|x| x * c).collect();
        let dirs_c = recover_direction(inst.h(), &scaled_l, &scaled_m)?;
        for (u, uc) in dirs.iter().zip(&dirs_c) {
            let norm = u.norm2();
            if (norm - 1.0).abs() > 1e-12 {
                return Ok(Outcome { invariant: "unit-norm", m, k, detail: Some(format!("|u| = {norm:.17}")) });
            }
            let diff = u.iter().zip(uc.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            if diff > 1e-10 {
                return Ok(Outcome { invariant: "joint-scale", m, k, detail: Some(format!("c={c:e}, max diff {diff:e}")) });
            }
        }
        Ok(Outcome { invariant: "", m, k, detail: None })
    })
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps exact zeros from
/// being judged on round-off noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Gradient of the recovered sum-rate with respect to `{p, lambda, mu}`
/// against central differences.
pub fn gradient_suite(seed: u64, cases: usize) -> SuiteReport {
    run_suite("gradients", seed, cases, |case| {
        let mut rng = sample_rng(seed, case);
        let m = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let inst = SystemInstance::new(InstanceSpec::new(m, k).sample(rng.random(), 0)?);
        let params = IntermediateParams {
            p: (0..k).map(|_| rng.random_range(0.2..5.0)).collect(),
            lambda: (0..k).map(|_| rng.random_range(0.2..5.0)).collect(),
            mu: (0..m).map(|_| rng.random_range(0.2..5.0)).collect(),
        };
        let eval = recovered_rate_and_grad(&inst, &params)?;
        let analytic = [eval.grad.p.clone(), eval.grad.lambda.clone(), eval.grad.mu.clone()].concat();
        let flat = [params.p.clone(), params.lambda.clone(), params.mu.clone()].concat();
        let value = |x: &[f64]| -> Result<f64> {
            let q = IntermediateParams::from_output(x, m, k)?;
            Ok(recovered_rate_and_grad(&inst, &q)?.value)
        };
        for j in 0..flat.len() {
            let step = 1e-6 * flat[j];
            let mut plus = flat.clone();
            plus[j] += step;
            let mut minus = flat.clone();
            minus[j] -= step;
            let numeric = (value(&plus)? - value(&minus)?) / (2.0 * step);
            let err = relative_error(analytic[j], numeric, 1e-4);
            if err > 1e-4 {
                return Ok(Outcome {
                    invariant: "param-gradient",
                    m,
                    k,
                    detail: Some(format!("coordinate {j}: analytic {} numeric {numeric}", analytic[j])),
                });
            }
        }
        Ok(Outcome { invariant: "", m, k, detail: None })
    })
}

/// Largest per-coordinate relative error of the full network-plus-recovery
/// gradient at `M = K = 2` (depth 4, width 32, batch of 8), over 10 random
/// coordinates of every trainable tensor.
pub fn network_gradient_error(seed: u64, case: u64) -> Result<f64> {
    let mut rng = sample_rng(seed, case);
    let model = Mlp::new(MlpConfig::proposed(2, 2, 4, 32), rng.random())?;
    let batch: Vec<SystemInstance> =
        InstanceSpec::new(2, 2).sample_range(rng.random(), 0, 8)?.into_iter().map(SystemInstance::new).collect();
    let analytic = pipeline_gradient(&model, &batch, Variant::Proposed)?.grads;
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for (t, g) in analytic.tensors.iter().enumerate() {
        for _ in 0..10 {
            let j = rng.random_range(0..g.len());
            let mut plus = model.clone();
            plus.parameters_mut()[t][j] += step;
            let mut minus = model.clone();
            minus.parameters_mut()[t][j] -= step;
            let numeric = (pipeline_gradient(&plus, &batch, Variant::Proposed)?.loss
                - pipeline_gradient(&minus, &batch, Variant::Proposed)?.loss)
                / (2.0 * step);
            worst = worst.max(relative_error(g[j], numeric, 1e-4));
        }
    }
    Ok(worst)
}

pub fn network_gradient_suite(seed: u64, cases: usize) -> SuiteReport {
    run_suite("network-gradients", seed, cases, |case| {
        let err = network_gradient_error(seed, case)?;
        Ok(Outcome {
            invariant: "network-gradient",
            m: 2,
            k: 2,
            detail: (err >= 1e-4).then(|| format!("max relative error {err:e}")),
        })
    })
}

/// `log2(1 + P~ |h|^2 / (1 + |h|^2 P / (1 + beta)))`
pub fn scalar_closed_form(inst: &SystemInstance) -> f64 {
    let g = inst.h()[(0, 0)].norm_sqr();
    (1.0 + inst.p_tilde() * g / (1.0 + g * inst.power_budget() / (1.0 + inst.beta))).log2()
}

/// At `M = K = 1` both baselines reach the closed-form optimum.
pub fn scalar_suite(seed: u64, cases: usize) -> SuiteReport {
    run_suite("scalar-oracle", seed, cases, |case| {
        let inst = SystemInstance::new(InstanceSpec::new(1, 1).sample(seed, case)?);
        let exact = scalar_closed_form(&inst);
        let ls = local_search(&inst, &LocalSearchConfig::default())?.sum_rate;
        let (grid, _) = brute_force_oracle(&inst, 16)?;
        let detail = if (ls - exact).abs() > 1e-6 {
            Some(("local-search-scalar", format!("local search {ls} vs {exact}")))
        } else if (grid - exact).abs() > 1e-3 {
            Some(("oracle-scalar", format!("grid {grid} vs {exact}")))
        } else {
            None
        };
        Ok(match detail {
            Some((invariant, d)) => Outcome { invariant, m: 1, k: 1, detail: Some(d) },
            None => Outcome { invariant: "", m: 1, k: 1, detail: None },
        })
    })
}

/// Rotating any beamformer by a unit-modulus factor leaves the sum-rate unchanged.
pub fn phase_suite(seed: u64, cases: usize) -> SuiteReport {
    run_suite("phase-invariance", seed, cases, |case| {
        let (inst, mut rng) = random_instance(seed, case)?;
        let (m, k) = (inst.num_aps(), inst.num_users());
        let data: Vec<C64> = (0..m * k).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let v = scale_to_feasible(&Beamformer::from_column_major(m, k, data)?, inst.power_budget(), inst.beta)?;
        let mut rotated = v.clone();
        for u in 0..k {
            let rot = C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
            rotated.user_mut(u).iter_mut().for_each(|z| *z *= rot);
        }
        let a = sum_rate(inst.h(), &v, &recover_quant_noise(&v, inst.beta));
        let b = sum_rate(inst.h(), &rotated, &recover_quant_noise(&rotated, inst.beta));
        Ok(Outcome {
            invariant: "phase-invariance",
            m,
            k,
            detail: ((a - b).abs() > 1e-12).then(|| format!("{a} vs {b}")),
        })
    })
}

pub fn run_all(config: &VerifyConfig) -> Vec<SuiteReport> {
    let s = config.seed;
    vec![
        feasibility_suite(s, config.feasibility_cases, config.fault),
        direction_suite(s, config.direction_cases),
        gradient_suite(s, config.gradient_cases),
        network_gradient_suite(s, config.network_gradient_cases),
        scalar_suite(s, config.scalar_cases),
        phase_suite(s, config.phase_cases),
    ]
}
