//! Reference solvers that do not learn: matched-filter beamforming, a
//! multistart projected-gradient local optimizer, and an exhaustive grid
//! search for very small systems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::rate_and_grad;
use crate::error::{Error, Result};
use crate::linalg::{CVector, C64};
use crate::recovery::{assemble_beamformer, recover_direction, recover_quant_noise, scale_to_feasible};
use crate::system::{sum_rate, Beamformer, QuantNoise, SystemInstance};

/// Per-UE matched filter with equal powers, scaled to the feasible boundary.
///
/// A UE with an all-zero channel gets a zero beamformer.
pub fn mrt_uniform(instance: &SystemInstance) -> (Beamformer, QuantNoise) {
    let (m, k) = (instance.num_aps(), instance.num_users());
    let h = instance.h();
    let mut data = Vec::with_capacity(m * k);
    for col in 0..k {
        let hk = h.column(col);
        let norm = hk.norm2();
        data.extend(hk.iter().map(|z| if norm > 0.0 { z / norm } else { C64::new(0.0, 0.0) }));
    }
    let v = Beamformer::from_column_major(m, k, data).expect("shape follows the channel");
    finish(instance, v)
}

/// Scales `v` to the boundary and recovers the quantization noise; an all-zero `v` stays zero.
fn finish(instance: &SystemInstance, v: Beamformer) -> (Beamformer, QuantNoise) {
    match scale_to_feasible(&v, instance.power_budget(), instance.beta) {
        Ok(scaled) => {
            let omega = recover_quant_noise(&scaled, instance.beta);
            (scaled, omega)
        }
        Err(_) => {
            let m = v.num_aps();
            (v, QuantNoise(vec![0.0; m]))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSearchConfig {
    /// Initial step, relative to `|v| / |grad|`.
    pub step: f64,
    pub max_iterations: usize,
    /// Stop once the step or the relative improvement falls below this.
    pub tolerance: f64,
    /// Number of starting points: matched filter, regularized inverse, then random.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LocalSearchConfig {
    fn default() -> Self {
        Self { step: 1.0, max_iterations: 2000, tolerance: 1e-10, restarts: 3, seed: 0 }
    }
}

impl LocalSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.tolerance > 0.0) || self.restarts == 0 || self.max_iterations == 0 {
            return Err(Error::Config(format!("invalid local search config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LocalSearchResult {
    pub v: Beamformer,
    pub omega: QuantNoise,
    pub sum_rate: f64,
    /// Whether the winning run met the tolerance before the iteration cap.
    pub converged: bool,
    /// Objective after each accepted step of the winning run.
    pub trace: Vec<f64>,
    /// Index of the winning start.
    pub best_restart: usize,
}

/// Scales down every AP whose beamforming power exceeds `cap`.
fn project(v: &mut Beamformer, cap: f64) {
    let m = v.num_aps();
    let powers = v.ap_powers();
    for (i, &p) in powers.iter().enumerate() {
        if p > cap {
            let f = (cap / p).sqrt();
            for k in 0..v.num_users() {
                v.as_mut_slice()[k * m + i] *= f;
            }
        }
    }
}

fn initial_point(instance: &SystemInstance, restart: usize, seed: u64) -> Beamformer {
    let (m, k) = (instance.num_aps(), instance.num_users());
    match restart {
        0 => mrt_uniform(instance).0,
        1 => {
            let mu = vec![k as f64 / instance.p_tilde(); m];
            recover_direction(instance.h(), &vec![1.0; k], &mu)
                .and_then(|dirs| assemble_beamformer(&vec![1.0; k], &dirs))
                .unwrap_or_else(|_| mrt_uniform(instance).0)
        }
        r => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let data: Vec<C64> =
                (0..m * k).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            Beamformer::from_column_major(m, k, data).expect("shape follows the channel")
        }
    }
}

struct Run {
    v: Beamformer,
    value: f64,
    converged: bool,
    trace: Vec<f64>,
}

/// Backtracking gradient ascent of `sum_rate(v, omega(v))` over `{max AP power <= P~}`.
fn ascend(instance: &SystemInstance, start: Beamformer, config: &LocalSearchConfig) -> Run {
    let cap = instance.p_tilde();
    let beta = instance.beta;
    let h = instance.h();
    let mut v = finish(instance, start).0;
    project(&mut v, cap);
    let (mut value, mut grad) = rate_and_grad(h, &v, beta);
    let mut trace = vec![value];
    let mut step = config.step;
    let mut converged = false;
    let mut small_gains = 0;
    for _ in 0..config.max_iterations {
        let gnorm = CVector(grad.as_slice().to_vec()).norm2();
        let vnorm = CVector(v.as_slice().to_vec()).norm2();
        if !(gnorm > 0.0) || !(vnorm > 0.0) {
            converged = true;
            break;
        }
        let t = step * vnorm / gnorm;
        let mut candidate = v.clone();
        for (c, g) in candidate.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *c += g * t;
        }
        project(&mut candidate, cap);
        let (cand_value, cand_grad) = rate_and_grad(h, &candidate, beta);
        if cand_value > value {
            let gain = cand_value - value;
            v = candidate;
            value = cand_value;
            grad = cand_grad;
            trace.push(value);
            step = (step * 2.0).min(config.step);
            small_gains = if gain <= config.tolerance * (1.0 + value.abs()) { small_gains + 1 } else { 0 };
            if small_gains >= 5 {
                converged = true;
                break;
            }
        } else {
            step *= 0.5;
            if step < config.tolerance {
                converged = true;
                break;
            }
        }
    }
    Run { v, value, converged, trace }
}

/// Multistart local optimizer. The returned solution lies on the feasible
/// boundary and is never worse than [`mrt_uniform`].
pub fn local_search(instance: &SystemInstance, config: &LocalSearchConfig) -> Result<LocalSearchResult> {
    config.validate()?;
    let runs: Vec<Run> = (0..config.restarts)
        .into_par_iter()
        .map(|r| ascend(instance, initial_point(instance, r, config.seed), config))
        .collect();
    let (best_restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.value > a.1.value { b } else { a })
        .expect("at least one restart");
    let (v, omega) = finish(instance, best.v);
    let rate = sum_rate(instance.h(), &v, &omega);
    Ok(LocalSearchResult { v, omega, sum_rate: rate, converged: best.converged, trace: best.trace, best_restart })
}

/// Largest `M * K` accepted by [`brute_force_oracle`].
pub const ORACLE_MAX_ENTRIES: usize = 3;
const ORACLE_MAX_CANDIDATES: f64 = 4e9;

/// Exhaustive grid search over the entries of `v`.
///
/// Each entry takes amplitude `j / G` (`j = 0..=G`) and phase `2 pi j / G`; the
/// first entry is kept real because a common phase does not change the rate.
/// Every candidate goes through the feasibility scaling before scoring.
pub fn brute_force_oracle(instance: &SystemInstance, resolution: usize) -> Result<(f64, Beamformer)> {
    let (m, k) = (instance.num_aps(), instance.num_users());
    let entries = m * k;
    if entries > ORACLE_MAX_ENTRIES {
        return Err(Error::SizeGuard(format!("grid search needs M*K <= {ORACLE_MAX_ENTRIES}, got {entries}")));
    }
    if resolution == 0 {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    let g = resolution;
    let candidates = ((g + 1) as f64).powi(entries as i32) * (g as f64).powi(entries as i32 - 1);
    if candidates > ORACLE_MAX_CANDIDATES {
        return Err(Error::SizeGuard(format!("{candidates:.3e} grid points exceed the budget")));
    }
    let amp: Vec<f64> = (0..=g).map(|j| j as f64 / g as f64).collect();
    let phase: Vec<C64> = (0..g).map(|j| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / g as f64)).collect();
    // digits: amplitude of entry 0, then (amplitude, phase) for each further entry
    let inner: usize = ((g + 1) * g).pow(entries as u32 - 1);
    let eval = Evaluator::new(instance);

    let best = (0..=g)
        .into_par_iter()
        .map(|a0| {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            let mut v = [C64::new(0.0, 0.0); ORACLE_MAX_ENTRIES];
            for idx in 0..inner {
                v[0] = C64::new(amp[a0], 0.0);
                let mut rest = idx;
                for e in 1..entries {
                    let a = rest % (g + 1);
                    rest /= g + 1;
                    let p = rest % g;
                    rest /= g;
                    v[e] = phase[p] * amp[a];
                }
                if let Some(rate) = eval.scaled_rate(&v[..entries]) {
                    if rate > best.0 {
                        best = (rate, a0 * inner + idx);
                    }
                }
            }
            best
        })
        .reduce(|| (f64::NEG_INFINITY, usize::MAX), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    if best.1 == usize::MAX {
        return Err(Error::DegenerateBeamformer);
    }
    let (a0, mut rest) = (best.1 / inner, best.1 % inner);
    let mut data = vec![C64::new(amp[a0], 0.0)];
    for _ in 1..entries {
        let a = rest % (g + 1);
        rest /= g + 1;
        let p = rest % g;
        rest /= g;
        data.push(phase[p] * amp[a]);
    }
    let v = scale_to_feasible(&Beamformer::from_column_major(m, k, data)?, instance.power_budget(), instance.beta)?;
    Ok((best.0, v))
}

/// Allocation-free scaled sum-rate for tiny systems.
struct Evaluator {
    m: usize,
    k: usize,
    /// `h[k * m + i]`
    h: Vec<C64>,
    p_tilde: f64,
    beta: f64,
}

impl Evaluator {
    fn new(instance: &SystemInstance) -> Self {
        let (m, k) = (instance.num_aps(), instance.num_users());
        let h = (0..k).flat_map(|c| (0..m).map(move |i| (i, c))).map(|(i, c)| instance.h()[(i, c)]).collect();
        Self { m, k, h, p_tilde: instance.p_tilde(), beta: instance.beta }
    }

    fn scaled_rate(&self, v: &[C64]) -> Option<f64> {
        let (m, k) = (self.m, self.k);
        let mut pw = [0.0; ORACLE_MAX_ENTRIES];
        for col in 0..k {
            for i in 0..m {
                pw[i] += v[col * m + i].norm_sqr();
            }
        }
        let max = pw[..m].iter().cloned().fold(0.0, f64::max);
        if !(max > 0.0) {
            return None;
        }
        let s2 = self.p_tilde / max;
        let mut total = 0.0;
        for u in 0..k {
            let hu = &self.h[u * m..(u + 1) * m];
            let mut noise = 1.0;
            for i in 0..m {
                noise += hu[i].norm_sqr() * pw[i] * s2 / self.beta;
            }
            let mut signal = 0.0;
            for l in 0..k {
                let mut g = C64::new(0.0, 0.0);
                for i in 0..m {
                    g += hu[i].conj() * v[l * m + i];
                }
                let p = g.norm_sqr() * s2;
                if l == u {
                    signal = p;
                } else {
                    noise += p;
                }
            }
            total += (1.0 + signal / noise).log2();
        }
        Some(total)
    }
}
