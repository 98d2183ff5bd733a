//! Downlink C-RAN rate model.
//!
//! `M` single-antenna APs serve `K` single-antenna UEs. The beamformer of UE
//! `k` is `v_k`, AP `i` compresses its signal with quantization noise power
//! `omega_i`, and the achievable rate of UE `k` treats interference and the
//! quantization noise seen through its channel as Gaussian noise.

use crate::channel::ChannelSample;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

/// `beta = 2^C - 1`
pub fn beta_from_capacity(capacity: f64) -> f64 {
    capacity.exp2() - 1.0
}

/// Effective per-AP beamforming budget `P / (1 + 1/beta)`.
pub fn virtual_power_budget(power_budget: f64, beta: f64) -> f64 {
    power_budget * beta / (beta + 1.0)
}

/// `K` beamforming vectors of length `M`, stored column-major by UE.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    m: usize,
    k: usize,
    v: Vec<C64>,
}

impl Beamformer {
    pub fn zeros(m: usize, k: usize) -> Self {
        Self { m, k, v: vec![C64::new(0.0, 0.0); m * k] }
    }

    /// `data[k * m + i]` is entry `i` of `v_k`.
    pub fn from_column_major(m: usize, k: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != m * k {
            return Err(Error::Dimension(format!("beamformer {m}x{k} needs {} entries, got {}", m * k, data.len())));
        }
        Ok(Self { m, k, v: data })
    }

    pub fn num_aps(&self) -> usize {
        self.m
    }

    pub fn num_users(&self) -> usize {
        self.k
    }

    pub fn user(&self, k: usize) -> &[C64] {
        &self.v[k * self.m..(k + 1) * self.m]
    }

    pub fn user_mut(&mut self, k: usize) -> &mut [C64] {
        &mut self.v[k * self.m..(k + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.v
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.v
    }

    /// Beamforming power radiated by each AP, `sum_k |v_{k,i}|^2`.
    pub fn ap_powers(&self) -> Vec<f64> {
        let mut powers = vec![0.0; self.m];
        for k in 0..self.k {
            for (p, z) in powers.iter_mut().zip(self.user(k)) {
                *p += z.norm_sqr();
            }
        }
        powers
    }

    pub fn user_power(&self, k: usize) -> f64 {
        self.user(k).iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { m: self.m, k: self.k, v: self.v.iter().map(|z| z * factor).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.v.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Per-AP quantization noise powers `omega_i >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantNoise(pub Vec<f64>);

/// The `2K + M` nonnegative numbers from which a beamformer is recovered.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateParams {
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

impl IntermediateParams {
    /// Splits a network output row laid out as `[p (K), lambda (K), mu (M)]`.
    pub fn from_output(row: &[f64], m: usize, k: usize) -> Result<Self> {
        if row.len() != 2 * k + m {
            return Err(Error::Dimension(format!("expected {} outputs, got {}", 2 * k + m, row.len())));
        }
        Ok(Self { p: row[..k].to_vec(), lambda: row[k..2 * k].to_vec(), mu: row[2 * k..].to_vec() })
    }

    pub fn validate(&self, m: usize, k: usize) -> Result<()> {
        if self.p.len() != k || self.lambda.len() != k || self.mu.len() != m {
            return Err(Error::Dimension(format!(
                "params have |p|={}, |lambda|={}, |mu|={} for M={m}, K={k}",
                self.p.len(),
                self.lambda.len(),
                self.mu.len()
            )));
        }
        let nonneg = |x: &f64| *x >= 0.0 && x.is_finite();
        if !self.p.iter().all(nonneg) || !self.lambda.iter().all(nonneg) {
            return Err(Error::InvalidParams("p and lambda must be finite and nonnegative".into()));
        }
        if !self.mu.iter().all(|x| *x > 0.0 && x.is_finite()) {
            return Err(Error::InvalidParams("mu must be strictly positive".into()));
        }
        Ok(())
    }
}

/// A channel sample together with its derived fronthaul weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemInstance {
    pub sample: ChannelSample,
    pub beta: f64,
}

impl SystemInstance {
    pub fn new(sample: ChannelSample) -> Self {
        let beta = beta_from_capacity(sample.capacity);
        Self { sample, beta }
    }

    pub fn h(&self) -> &CMatrix {
        &self.sample.h
    }

    pub fn power_budget(&self) -> f64 {
        self.sample.power_budget
    }

    pub fn p_tilde(&self) -> f64 {
        virtual_power_budget(self.sample.power_budget, self.beta)
    }

    pub fn num_aps(&self) -> usize {
        self.sample.num_aps()
    }

    pub fn num_users(&self) -> usize {
        self.sample.num_users()
    }
}

/// `h_k^H v_l`
pub(crate) fn channel_gain(h: &CMatrix, k: usize, v_l: &[C64]) -> C64 {
    v_l.iter().enumerate().map(|(i, z)| h[(i, k)].conj() * z).sum()
}

/// Achievable rate of UE `k` in bit/symbol.
pub fn user_rate(h: &CMatrix, v: &Beamformer, omega: &QuantNoise, k: usize) -> f64 {
    let m = h.rows();
    debug_assert_eq!(v.num_aps(), m);
    debug_assert_eq!(omega.0.len(), m);
    let mut noise = 1.0;
    for i in 0..m {
        noise += h[(i, k)].norm_sqr() * omega.0[i];
    }
    let mut signal = 0.0;
    for l in 0..v.num_users() {
        let g = channel_gain(h, k, v.user(l)).norm_sqr();
        if l == k {
            signal = g;
        } else {
            noise += g;
        }
    }
    (signal / noise).ln_1p() / std::f64::consts::LN_2
}

pub fn sum_rate(h: &CMatrix, v: &Beamformer, omega: &QuantNoise) -> f64 {
    (0..v.num_users()).map(|k| user_rate(h, v, omega, k)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta_from_capacity(2.0), 3.0);
        assert_eq!(beta_from_capacity(10.0), 1023.0);
        assert_eq!(beta_from_capacity(0.0), 0.0);
    }

    #[test]
    fn scalar_rate() {
        let h = CMatrix::from_row_major(1, 1, vec![c(1.0, 0.0)]).unwrap();
        let v = Beamformer::from_column_major(1, 1, vec![c(3f64.sqrt(), 0.0)]).unwrap();
        let r = user_rate(&h, &v, &QuantNoise(vec![1.0]), 0);
        assert!((r - 2.5f64.log2()).abs() < 1e-15);
        assert!((r - 1.321928).abs() < 1e-6);
        assert_eq!(user_rate(&h, &Beamformer::zeros(1, 1), &QuantNoise(vec![1.0]), 0), 0.0);
    }

    #[test]
    fn orthogonal_users() {
        let p: f64 = 7.0;
        let h = CMatrix::identity(2);
        let v = Beamformer::from_column_major(2, 2, vec![c(p.sqrt(), 0.0), c(0.0, 0.0), c(0.0, 0.0), c(p.sqrt(), 0.0)])
            .unwrap();
        let omega = QuantNoise(vec![0.0, 0.0]);
        for k in 0..2 {
            assert!((user_rate(&h, &v, &omega, k) - (1.0 + p).log2()).abs() < 1e-14);
        }
        assert!((sum_rate(&h, &v, &omega) - 2.0 * (1.0 + p).log2()).abs() < 1e-14);
        assert_eq!(sum_rate(&h, &Beamformer::zeros(2, 2), &omega), 0.0);
    }

    /// Straight-line evaluation of the rate formula on explicit (re, im) pairs.
    fn scalar_sum_rate(h: &[[(f64, f64); 2]; 2], v: &[[(f64, f64); 2]; 2], omega: &[f64; 2]) -> f64 {
        // h[i][k], v[k][i]
        let mut total = 0.0;
        for k in 0..2 {
            let mut powers = [0.0; 2];
            for (l, power) in powers.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..2 {
                    let (hr, hi) = h[i][k];
                    let (vr, vi) = v[l][i];
                    re += hr * vr + hi * vi;
                    im += hr * vi - hi * vr;
                }
                *power = re * re + im * im;
            }
            let q: f64 = (0..2).map(|i| (h[i][k].0.powi(2) + h[i][k].1.powi(2)) * omega[i]).sum();
            total += (1.0 + powers[k] / (1.0 + q + powers[1 - k])).log2();
        }
        total
    }

    #[test]
    fn sum_rate_matches_scalar_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let mut r = || (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let h_raw = [[r(), r()], [r(), r()]];
            let v_raw = [[r(), r()], [r(), r()]];
            let omega = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let h = CMatrix::from_row_major(2, 2, h_raw.iter().flatten().map(|&(a, b)| c(a, b)).collect()).unwrap();
            let v = Beamformer::from_column_major(2, 2, v_raw.iter().flatten().map(|&(a, b)| c(a, b)).collect())
                .unwrap();
            let got = sum_rate(&h, &v, &QuantNoise(omega.to_vec()));
            assert!((got - scalar_sum_rate(&h_raw, &v_raw, &omega)).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_strictly_decreasing_in_quantization_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let (m, k) = (3, 2);
            let cols: Vec<CVector> = (0..k)
                .map(|_| CVector((0..m).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()))
                .collect();
            let h = CMatrix::from_columns(&cols).unwrap();
            let v = Beamformer::from_column_major(
                m,
                k,
                (0..m * k).map(|_| c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect(),
            )
            .unwrap();
            let omega = QuantNoise((0..m).map(|_| rng.random_range(0.0..1.0)).collect());
            for user in 0..k {
                let base = user_rate(&h, &v, &omega, user);
                for i in 0..m {
                    let mut bumped = omega.clone();
                    bumped.0[i] += 1e-3;
                    assert!(user_rate(&h, &v, &bumped, user) < base);
                }
            }
        }
    }

    #[test]
    fn phase_rotation_leaves_rates_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, k) = (3, 3);
        let h = CMatrix::from_row_major(
            m,
            k,
            (0..m * k).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
        )
        .unwrap();
        let mut v = Beamformer::from_column_major(
            m,
            k,
            (0..m * k).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
        )
        .unwrap();
        let omega = QuantNoise(vec![0.1, 0.2, 0.3]);
        let base = sum_rate(&h, &v, &omega);
        for user in 0..k {
            let rot = C64::from_polar(1.0, rng.random_range(0.0..6.28));
            for z in v.user_mut(user) {
                *z *= rot;
            }
        }
        assert!((sum_rate(&h, &v, &omega) - base).abs() < 1e-12);
    }
}
