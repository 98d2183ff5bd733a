//! Reverse-mode gradients of the sum-rate through the recovery pipeline.
//!
//! Gradients with respect to a complex variable `z = x + iy` are stored as the
//! complex number `dL/dx + i dL/dy`. With that convention a linear map
//! `a = c z` pulls back as `g_z = conj(c) g_a`, and `dL = Re(conj(g) dz)`.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, CMatrix, CVector, C64};
use crate::recovery::{direction_matrix, scale_factor};
use crate::system::{channel_gain, Beamformer, IntermediateParams, QuantNoise, SystemInstance};

/// `sum_i Re(conj(a_i) b_i)`, the real inner product on `C^n`.
pub(crate) fn re_dot(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Sum-rate of `v` with `omega = ap_powers(v) / beta`, and its gradient with respect to `v`.
pub fn rate_and_grad(h: &CMatrix, v: &Beamformer, beta: f64) -> (f64, Beamformer) {
    let (m, k_users) = (h.rows(), h.cols());
    let omega: Vec<f64> = v.ap_powers().into_iter().map(|p| p / beta).collect();
    let ln2 = std::f64::consts::LN_2;

    let mut value = 0.0;
    let mut grad = Beamformer::zeros(m, k_users);
    let mut grad_omega = vec![0.0; m];
    let mut gains = vec![C64::new(0.0, 0.0); k_users];
    for k in 0..k_users {
        let mut quant = 0.0;
        for (i, w) in omega.iter().enumerate() {
            quant += h[(i, k)].norm_sqr() * w;
        }
        let mut total = 1.0 + quant;
        for (l, g) in gains.iter_mut().enumerate() {
            *g = channel_gain(h, k, v.user(l));
            total += g.norm_sqr();
        }
        let interference = total - gains[k].norm_sqr();
        value += (total.ln() - interference.ln()) / ln2;

        let d_total = 1.0 / (total * ln2);
        let d_interf = -1.0 / (interference * ln2);
        for (l, g) in gains.iter().enumerate() {
            let coef = if l == k { d_total } else { d_total + d_interf };
            let g_gain = g * (2.0 * coef);
            for (i, gz) in grad.user_mut(l).iter_mut().enumerate() {
                *gz += h[(i, k)] * g_gain;
            }
        }
        for (i, go) in grad_omega.iter_mut().enumerate() {
            *go += h[(i, k)].norm_sqr() * (d_total + d_interf);
        }
    }
    for l in 0..k_users {
        let vl: Vec<C64> = v.user(l).to_vec();
        for (i, gz) in grad.user_mut(l).iter_mut().enumerate() {
            *gz += vl[i] * (2.0 * grad_omega[i] / beta);
        }
    }
    (value, grad)
}

/// Output of the scaled objective: value, gradient and the recovered solution.
#[derive(Debug, Clone)]
pub struct ScaledEval {
    pub value: f64,
    pub grad: Beamformer,
    pub v: Beamformer,
    pub omega: QuantNoise,
}

/// Sum-rate after the feasibility scaling and quantization-noise recovery,
/// differentiated with respect to the unscaled `v`.
///
/// The max over APs is differentiated at the argmax AP (lowest index on ties).
pub fn scaled_rate_and_grad(instance: &SystemInstance, v: &Beamformer) -> Result<ScaledEval> {
    let beta = instance.beta;
    let (factor, argmax) = scale_factor(v, instance.power_budget(), beta)?;
    let scaled = v.scaled(factor);
    let (value, g_scaled) = rate_and_grad(instance.h(), &scaled, beta);

    let d_factor = re_dot(g_scaled.as_slice(), v.as_slice());
    let max_power = v.ap_powers()[argmax];
    let mut grad = g_scaled.scaled(factor);
    let m = v.num_aps();
    for k in 0..v.num_users() {
        let z = v.as_slice()[k * m + argmax];
        grad.user_mut(k)[argmax] -= z * (d_factor * factor / max_power);
    }
    let omega = QuantNoise(scaled.ap_powers().into_iter().map(|p| p / beta).collect());
    Ok(ScaledEval { value, grad, v: scaled, omega })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RecoveredEval {
    pub value: f64,
    pub grad: ParamGrad,
    pub v: Beamformer,
    pub omega: QuantNoise,
}

/// Sum-rate of the recovered solution and its gradient with respect to `{p, lambda, mu}`.
pub fn recovered_rate_and_grad(instance: &SystemInstance, params: &IntermediateParams) -> Result<RecoveredEval> {
    let (m, k_users) = (instance.num_aps(), instance.num_users());
    params.validate(m, k_users)?;
    let h = instance.h();
    let a = direction_matrix(h, &params.lambda, &params.mu)?;
    let chol = Cholesky::factor(&a)?;

    let mut w = Vec::with_capacity(k_users);
    let mut norms = Vec::with_capacity(k_users);
    let mut dirs = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let wk = chol.solve(&h.column(k))?;
        let n = wk.norm2();
        dirs.push(if n > 0.0 { wk.scale(1.0 / n) } else { wk.clone() });
        norms.push(n);
        w.push(wk);
    }
    let mut data = Vec::with_capacity(m * k_users);
    for (u, &pk) in dirs.iter().zip(&params.p) {
        data.extend(u.iter().map(|z| z * pk.sqrt()));
    }
    let v = Beamformer::from_column_major(m, k_users, data)?;
    let scaled = scaled_rate_and_grad(instance, &v)?;

    let mut grad = ParamGrad { p: vec![0.0; k_users], lambda: vec![0.0; k_users], mu: vec![0.0; m] };
    let mut adjoint_w: Vec<CVector> = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let g_v = scaled.grad.user(k);
        let pk = params.p[k];
        if pk > 0.0 {
            grad.p[k] = re_dot(&dirs[k], g_v) / (2.0 * pk.sqrt());
        }
        let g_u: Vec<C64> = g_v.iter().map(|z| z * pk.sqrt()).collect();
        let g_w = if norms[k] > 0.0 {
            let radial = re_dot(&dirs[k], &g_u);
            CVector(g_u.iter().zip(dirs[k].iter()).map(|(g, u)| (g - u * radial) / norms[k]).collect())
        } else {
            CVector::zeros(m)
        };
        adjoint_w.push(chol.solve(&g_w)?);
    }
    // dL = -Re(q_k^H dA w_k) summed over k
    for (q, wk) in adjoint_w.iter().zip(&w) {
        for l in 0..k_users {
            let hl = h.column(l);
            let qh = hl.dot_h(q).conj(); // q^H h_l
            let hw = hl.dot_h(wk); // h_l^H w
            grad.lambda[l] -= (qh * hw).re;
        }
        for i in 0..m {
            grad.mu[i] -= (q[i].conj() * wk[i]).re;
        }
    }
    if !scaled.value.is_finite() {
        return Err(Error::InvalidParams("non-finite recovered rate".into()));
    }
    Ok(RecoveredEval { value: scaled.value, grad, v: scaled.v, omega: scaled.omega })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelSample;
    use crate::recovery::{recover_quant_noise, recover_solution, scale_to_feasible};
    use crate::system::sum_rate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, m: usize, k: usize) -> SystemInstance {
        let h = CMatrix::from_row_major(
            m,
            k,
            (0..m * k).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
        )
        .unwrap();
        let sample = ChannelSample::new(h, rng.random_range(1.0..100.0), rng.random_range(2.0..10.0)).unwrap();
        SystemInstance::new(sample)
    }

    fn random_v(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Beamformer {
        Beamformer::from_column_major(
            m,
            k,
            (0..m * k).map(|_| C64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect(),
        )
        .unwrap()
    }

    /// Central difference of `f` along each real coordinate of `v`.
    fn fd_grad(v: &Beamformer, f: impl Fn(&Beamformer) -> f64) -> Vec<C64> {
        let step = 1e-6;
        let mut out = Vec::new();
        for idx in 0..v.as_slice().len() {
            let mut parts = [0.0; 2];
            for (part, d) in parts.iter_mut().zip([C64::new(step, 0.0), C64::new(0.0, step)]) {
                let mut plus = v.clone();
                plus.as_mut_slice()[idx] += d;
                let mut minus = v.clone();
                minus.as_mut_slice()[idx] -= d;
                *part = (f(&plus) - f(&minus)) / (2.0 * step);
            }
            out.push(C64::new(parts[0], parts[1]));
        }
        out
    }

    fn assert_close(analytic: &[C64], numeric: &[C64], tol: f64) {
        let scale = numeric.iter().map(|z| z.norm()).fold(1e-8, f64::max);
        for (a, n) in analytic.iter().zip(numeric) {
            assert!((a - n).norm() <= tol * scale, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn rate_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 3, 2);
            let v = random_v(&mut rng, 3, 2);
            let f = |x: &Beamformer| sum_rate(inst.h(), x, &recover_quant_noise(x, inst.beta));
            let (value, grad) = rate_and_grad(inst.h(), &v, inst.beta);
            assert!((value - f(&v)).abs() < 1e-12);
            assert_close(grad.as_slice(), &fd_grad(&v, f), 1e-6);
        }
    }

    #[test]
    fn scaled_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 3, 3);
            let v = random_v(&mut rng, 3, 3);
            let f = |x: &Beamformer| {
                let s = scale_to_feasible(x, inst.power_budget(), inst.beta).unwrap();
                sum_rate(inst.h(), &s, &recover_quant_noise(&s, inst.beta))
            };
            let eval = scaled_rate_and_grad(&inst, &v).unwrap();
            assert!((eval.value - f(&v)).abs() < 1e-12);
            assert_close(eval.grad.as_slice(), &fd_grad(&v, f), 1e-6);
            // the objective is invariant to the overall scale of v
            assert!(re_dot(eval.grad.as_slice(), v.as_slice()).abs() < 1e-9 * v.as_slice().len() as f64);
        }
    }

    #[test]
    fn recovered_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let (m, k) = (rng.random_range(1..5), rng.random_range(1..4));
            let inst = random_instance(&mut rng, m, k);
            let params = IntermediateParams {
                p: (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
                lambda: (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
                mu: (0..m).map(|_| rng.random_range(0.1..2.0)).collect(),
            };
            let f = |p: &IntermediateParams| {
                let (v, omega) = recover_solution(&inst, p).unwrap();
                sum_rate(inst.h(), &v, &omega)
            };
            let eval = recovered_rate_and_grad(&inst, &params).unwrap();
            assert!((eval.value - f(&params)).abs() < 1e-12);

            let step = 1e-6;
            let fields: [fn(&mut IntermediateParams) -> &mut Vec<f64>; 3] =
                [|p| &mut p.p, |p| &mut p.lambda, |p| &mut p.mu];
            let analytic = [&eval.grad.p, &eval.grad.lambda, &eval.grad.mu];
            for (field, an) in fields.iter().zip(analytic) {
                for j in 0..an.len() {
                    let mut plus = params.clone();
                    field(&mut plus)[j] += step;
                    let mut minus = params.clone();
                    field(&mut minus)[j] -= step;
                    let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
                    let scale = numeric.abs().max(1e-3);
                    assert!((an[j] - numeric).abs() <= 1e-5 * scale, "analytic {} vs numeric {numeric}", an[j]);
                }
            }
        }
    }

    #[test]
    fn common_power_scale_has_zero_gradient_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let inst = random_instance(&mut rng, 3, 3);
        let params = IntermediateParams { p: vec![0.5, 1.0, 2.0], lambda: vec![1.0; 3], mu: vec![0.3; 3] };
        let eval = recovered_rate_and_grad(&inst, &params).unwrap();
        let radial: f64 = eval.grad.p.iter().zip(&params.p).map(|(g, p)| g * p).sum();
        assert!(radial.abs() < 1e-10);
        let doubled = IntermediateParams { p: params.p.iter().map(|p| 2.0 * p).collect(), ..params.clone() };
        assert!((recovered_rate_and_grad(&inst, &doubled).unwrap().value - eval.value).abs() < 1e-12);
    }
}
