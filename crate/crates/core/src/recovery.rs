//! Structured solution recovery.
//!
//! Maps the intermediate parameters `{p, lambda, mu}` to a feasible
//! `(beamformer, quantization noise)` pair:
//!
//! 1. `u_k = A^{-1} h_k / |A^{-1} h_k|` with `A = sum_l lambda_l h_l h_l^H + diag(mu)`
//! 2. `v_k = sqrt(p_k) u_k`
//! 3. a common scaling so the most loaded AP radiates exactly `P / (1 + 1/beta)`
//! 4. `omega_i = (1/beta) sum_k |v_{k,i}|^2`
//!
//! Steps 3 and 4 together meet the per-AP power constraint and hold the
//! fronthaul constraint with equality, for any parameter values.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, CMatrix, CVector, C64};
use crate::system::{virtual_power_budget, Beamformer, IntermediateParams, QuantNoise, SystemInstance};

/// Default absolute feasibility tolerance, in power units.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// `sum_l lambda_l h_l h_l^H + diag(mu)`
pub fn direction_matrix(h: &CMatrix, lambda: &[f64], mu: &[f64]) -> Result<CMatrix> {
    let (m, k) = (h.rows(), h.cols());
    if lambda.len() != k || mu.len() != m {
        return Err(Error::Dimension(format!("lambda/mu lengths {}/{} for M={m}, K={k}", lambda.len(), mu.len())));
    }
    if let Some(bad) = mu.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParams(format!("mu must be strictly positive, got {bad}")));
    }
    if let Some(bad) = lambda.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidParams(format!("lambda must be nonnegative, got {bad}")));
    }
    let mut a = CMatrix::zeros(m, m);
    for (l, &lam) in lambda.iter().enumerate() {
        for i in 0..m {
            let hi = h[(i, l)];
            for j in 0..m {
                a[(i, j)] += hi * h[(j, l)].conj() * lam;
            }
        }
    }
    for (i, &mu_i) in mu.iter().enumerate() {
        a[(i, i)] += C64::new(mu_i, 0.0);
    }
    Ok(a)
}

/// Unit-norm beam directions. A UE with an all-zero channel gets a zero direction.
pub fn recover_direction(h: &CMatrix, lambda: &[f64], mu: &[f64]) -> Result<Vec<CVector>> {
    let chol = Cholesky::factor(&direction_matrix(h, lambda, mu)?)?;
    (0..h.cols())
        .map(|k| {
            let w = chol.solve(&h.column(k))?;
            let norm = w.norm2();
            Ok(if norm > 0.0 { w.scale(1.0 / norm) } else { w })
        })
        .collect()
}

/// `v_k = sqrt(p_k) u_k`
pub fn assemble_beamformer(p: &[f64], directions: &[CVector]) -> Result<Beamformer> {
    if p.len() != directions.len() || directions.is_empty() {
        return Err(Error::Dimension(format!("{} powers for {} directions", p.len(), directions.len())));
    }
    let m = directions[0].len();
    let mut data = Vec::with_capacity(m * p.len());
    for (&pk, u) in p.iter().zip(directions) {
        if u.len() != m {
            return Err(Error::Dimension("directions of unequal length".into()));
        }
        let amp = pk.max(0.0).sqrt();
        data.extend(u.iter().map(|z| z * amp));
    }
    Beamformer::from_column_major(m, p.len(), data)
}

/// Common scaling factor and the AP that attains the maximum load (lowest index on ties).
pub fn scale_factor(v: &Beamformer, power_budget: f64, beta: f64) -> Result<(f64, usize)> {
    if !(power_budget > 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidParams(format!("need P > 0 and beta > 0, got P={power_budget}, beta={beta}")));
    }
    let powers = v.ap_powers();
    let (argmax, max) = powers
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
    if !(max > 0.0) {
        return Err(Error::DegenerateBeamformer);
    }
    Ok(((virtual_power_budget(power_budget, beta) / max).sqrt(), argmax))
}

/// Rescales `v` so that the maximum per-AP beamforming power equals `P / (1 + 1/beta)`.
pub fn scale_to_feasible(v: &Beamformer, power_budget: f64, beta: f64) -> Result<Beamformer> {
    let (factor, _) = scale_factor(v, power_budget, beta)?;
    Ok(v.scaled(factor))
}

/// `omega_i = (1/beta) sum_k |v_{k,i}|^2`; requires `beta > 0`.
pub fn recover_quant_noise(v: &Beamformer, beta: f64) -> QuantNoise {
    debug_assert!(beta > 0.0);
    QuantNoise(v.ap_powers().into_iter().map(|p| p / beta).collect())
}

pub fn recover_solution(instance: &SystemInstance, params: &IntermediateParams) -> Result<(Beamformer, QuantNoise)> {
    params.validate(instance.num_aps(), instance.num_users())?;
    let directions = recover_direction(instance.h(), &params.lambda, &params.mu)?;
    let v = assemble_beamformer(&params.p, &directions)?;
    let v = scale_to_feasible(&v, instance.power_budget(), instance.beta)?;
    let omega = recover_quant_noise(&v, instance.beta);
    Ok((v, omega))
}

/// Slack of both per-AP constraint families; negative slack is a violation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// `min_i P - sum_k |v_{k,i}|^2 - omega_i`
    pub worst_power_slack: f64,
    pub worst_power_ap: usize,
    /// `min_i beta omega_i - sum_k |v_{k,i}|^2`
    pub worst_fronthaul_slack: f64,
    pub worst_fronthaul_ap: usize,
    /// `max_i |beta omega_i - sum_k |v_{k,i}|^2|`, zero when the fronthaul holds with equality.
    pub max_fronthaul_gap: f64,
}

pub fn check_feasibility(v: &Beamformer, omega: &QuantNoise, power_budget: f64, beta: f64, tol: f64) -> FeasibilityReport {
    let powers = v.ap_powers();
    let mut report = FeasibilityReport {
        feasible: true,
        worst_power_slack: f64::INFINITY,
        worst_power_ap: 0,
        worst_fronthaul_slack: f64::INFINITY,
        worst_fronthaul_ap: 0,
        max_fronthaul_gap: 0.0,
    };
    for (i, (&pi, &wi)) in powers.iter().zip(&omega.0).enumerate() {
        let power_slack = power_budget - pi - wi;
        let fronthaul_slack = beta * wi - pi;
        if power_slack < report.worst_power_slack {
            report.worst_power_slack = power_slack;
            report.worst_power_ap = i;
        }
        if fronthaul_slack < report.worst_fronthaul_slack {
            report.worst_fronthaul_slack = fronthaul_slack;
            report.worst_fronthaul_ap = i;
        }
        report.max_fronthaul_gap = report.max_fronthaul_gap.max(fronthaul_slack.abs());
        if wi < 0.0 || !power_slack.is_finite() || !fronthaul_slack.is_finite() {
            report.feasible = false;
        }
    }
    report.feasible &= report.worst_power_slack >= -tol && report.worst_fronthaul_slack >= -tol;
    report
}
