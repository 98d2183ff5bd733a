//! One-ring channel generation and problem-instance sampling.
//!
//! APs and UEs are dropped uniformly in a disk; each UE is surrounded by a
//! ring of `N` scatterers. The channel from AP `i` to UE `k` is the average of
//! `N` single-bounce paths, each with distance-based path loss, a propagation
//! phase and an independent common phase per (UE, scatterer).
//!
//! Every random draw comes from a per-sample ChaCha stream derived from
//! `(master seed, sample index)`, so datasets are reproducible and can be
//! generated in parallel.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneRingParams {
    /// Reference distance `d0` (m).
    pub d0: f64,
    /// Scattering ring radius (m).
    pub ring_radius: f64,
    pub pathloss_exponent: f64,
    pub scatterers: usize,
    /// Carrier wavelength (m).
    pub wavelength: f64,
    pub cell_radius: f64,
}

impl Default for OneRingParams {
    fn default() -> Self {
        Self { d0: 30.0, ring_radius: 5.0, pathloss_exponent: 3.0, scatterers: 2, wavelength: 0.15, cell_radius: 100.0 }
    }
}

impl OneRingParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.d0, self.ring_radius, self.pathloss_exponent, self.wavelength, self.cell_radius];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) || self.scatterers == 0 {
            return Err(Error::Config(format!("one-ring parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub aps: Vec<Point>,
    pub ues: Vec<Point>,
    /// `scatterers[k][n]` is scatterer `n` of UE `k`.
    pub scatterers: Vec<Vec<Point>>,
}

/// Sampling ranges for the per-instance power budget and fronthaul capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBounds {
    pub p_min: f64,
    pub p_max: f64,
    pub c_min: f64,
    pub c_max: f64,
}

impl Default for ConstraintBounds {
    fn default() -> Self {
        Self { p_min: 1.0, p_max: 1e3, c_min: 2.0, c_max: 10.0 }
    }
}

impl ConstraintBounds {
    /// Pins both quantities, as used by the sweeps.
    pub fn fixed(p: f64, c: f64) -> Self {
        Self { p_min: p, p_max: p, c_min: c, c_max: c }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.p_min > 0.0
            && self.p_min <= self.p_max
            && self.c_min > 0.0
            && self.c_min <= self.c_max
            && self.p_max.is_finite()
            && self.c_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid constraint bounds {self:?}")))
        }
    }
}

/// One problem instance `{h, P, C}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    /// `M x K`, column `k` is `h_k`.
    pub h: CMatrix,
    pub power_budget: f64,
    /// Fronthaul capacity in bit/symbol.
    pub capacity: f64,
}

impl ChannelSample {
    pub fn new(h: CMatrix, power_budget: f64, capacity: f64) -> Result<Self> {
        if !(power_budget > 0.0 && power_budget.is_finite()) || !(capacity > 0.0 && capacity.is_finite()) {
            return Err(Error::InvalidParams(format!("need P > 0 and C > 0, got P={power_budget}, C={capacity}")));
        }
        if !h.is_finite() {
            return Err(Error::InvalidParams("channel has non-finite entries".into()));
        }
        Ok(Self { h, power_budget, capacity })
    }

    pub fn num_aps(&self) -> usize {
        self.h.rows()
    }

    pub fn num_users(&self) -> usize {
        self.h.cols()
    }
}

/// Random stream for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform_in_disk<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Point {
    let rho = radius * rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    [rho * theta.cos(), rho * theta.sin()]
}

fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn sample_geometry<R: Rng + ?Sized>(rng: &mut R, m: usize, k: usize, params: &OneRingParams) -> Geometry {
    let aps = (0..m).map(|_| uniform_in_disk(rng, params.cell_radius)).collect();
    let ues: Vec<Point> = (0..k).map(|_| uniform_in_disk(rng, params.cell_radius)).collect();
    let scatterers = ues
        .iter()
        .map(|ue| {
            (0..params.scatterers)
                .map(|_| {
                    let phi = 2.0 * PI * rng.random::<f64>();
                    [ue[0] + params.ring_radius * phi.cos(), ue[1] + params.ring_radius * phi.sin()]
                })
                .collect()
        })
        .collect();
    Geometry { aps, ues, scatterers }
}

/// `1 / (1 + (x / d0)^eta)` for a path of length `x = d + r`.
pub fn pathloss(distance_plus_r: f64, params: &OneRingParams) -> f64 {
    1.0 / (1.0 + (distance_plus_r / params.d0).powf(params.pathloss_exponent))
}

/// Per-path gain vector `h_{k,n}` without the common phase.
fn path_response(geometry: &Geometry, k: usize, n: usize, params: &OneRingParams) -> Vec<C64> {
    let s = geometry.scatterers[k][n];
    geometry
        .aps
        .iter()
        .map(|&ap| {
            let x = distance(ap, s) + params.ring_radius;
            C64::from_polar(pathloss(x, params).sqrt(), -2.0 * PI * x / params.wavelength)
        })
        .collect()
}

/// Draws the common path phases and sums the single-bounce paths into an `M x K` channel.
pub fn one_ring_channel<R: Rng + ?Sized>(geometry: &Geometry, rng: &mut R, params: &OneRingParams) -> CMatrix {
    let m = geometry.aps.len();
    let k_users = geometry.ues.len();
    let norm = (params.scatterers as f64).sqrt();
    let mut h = CMatrix::zeros(m, k_users);
    for k in 0..k_users {
        for n in 0..geometry.scatterers[k].len() {
            let rho = 2.0 * PI * rng.random::<f64>();
            let common = C64::from_polar(1.0, rho);
            for (i, g) in path_response(geometry, k, n, params).into_iter().enumerate() {
                h[(i, k)] += g * common / norm;
            }
        }
    }
    h
}

/// `(P, C)` with `10 log10 P` uniform in dB and `C` uniform.
pub fn sample_constraints<R: Rng + ?Sized>(rng: &mut R, bounds: &ConstraintBounds) -> Result<(f64, f64)> {
    bounds.validate()?;
    let u_p: f64 = rng.random();
    let u_c: f64 = rng.random();
    let p = if bounds.p_min == bounds.p_max {
        bounds.p_min
    } else {
        let lo = 10.0 * bounds.p_min.log10();
        let hi = 10.0 * bounds.p_max.log10();
        10f64.powf((lo + (hi - lo) * u_p) / 10.0).clamp(bounds.p_min, bounds.p_max)
    };
    let c = if bounds.c_min == bounds.c_max {
        bounds.c_min
    } else {
        (bounds.c_min + (bounds.c_max - bounds.c_min) * u_c).clamp(bounds.c_min, bounds.c_max)
    };
    Ok((p, c))
}

/// Everything needed to draw instances of a fixed size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub m: usize,
    pub k: usize,
    pub params: OneRingParams,
    pub bounds: ConstraintBounds,
}

impl InstanceSpec {
    pub fn new(m: usize, k: usize) -> Self {
        Self { m, k, params: OneRingParams::default(), bounds: ConstraintBounds::default() }
    }

    pub fn with_bounds(mut self, bounds: ConstraintBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 {
            return Err(Error::Config(format!("need M, K >= 1, got M={}, K={}", self.m, self.k)));
        }
        self.params.validate()?;
        self.bounds.validate()
    }

    /// Fresh geometry, channel and constraints for sample `index`.
    pub fn sample(&self, seed: u64, index: u64) -> Result<ChannelSample> {
        let mut rng = sample_rng(seed, index);
        let geometry = sample_geometry(&mut rng, self.m, self.k, &self.params);
        let h = one_ring_channel(&geometry, &mut rng, &self.params);
        let (p, c) = sample_constraints(&mut rng, &self.bounds)?;
        ChannelSample::new(h, p, c)
    }

    pub fn sample_range(&self, seed: u64, start: u64, n: usize) -> Result<Vec<ChannelSample>> {
        self.validate()?;
        (0..n as u64).into_par_iter().map(|j| self.sample(seed, start + j)).collect()
    }
}

pub fn generate_dataset(
    n: usize,
    m: usize,
    k: usize,
    params: &OneRingParams,
    bounds: &ConstraintBounds,
    seed: u64,
) -> Result<Vec<ChannelSample>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be >= 1".into()));
    }
    InstanceSpec { m, k, params: *params, bounds: *bounds }.sample_range(seed, 0, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_shapes_and_ring() {
        let params = OneRingParams::default();
        for seed in 0..20 {
            let g = sample_geometry(&mut sample_rng(seed, 0), 6, 6, &params);
            assert_eq!(g.aps.len(), 6);
            assert_eq!(g.ues.len(), 6);
            assert!(g.scatterers.iter().all(|s| s.len() == 2));
            for p in g.aps.iter().chain(&g.ues) {
                assert!(p[0].hypot(p[1]) <= 100.0);
            }
            for (ue, ring) in g.ues.iter().zip(&g.scatterers) {
                for s in ring {
                    assert!((distance(*ue, *s) - 5.0).abs() <= 1e-12);
                }
            }
        }
        let a = sample_geometry(&mut sample_rng(9, 4), 3, 2, &params);
        let b = sample_geometry(&mut sample_rng(9, 4), 3, 2, &params);
        assert_eq!(a, b);
    }

    #[test]
    fn pathloss_values() {
        let p = OneRingParams::default();
        assert_eq!(pathloss(30.0, &p), 0.5);
        assert!((pathloss(60.0, &p) - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(pathloss(0.0, &p), 1.0);
    }

    #[test]
    fn channel_magnitudes_and_determinism() {
        let params = OneRingParams::default();
        let g = sample_geometry(&mut sample_rng(1, 0), 4, 3, &params);
        let norm = (params.scatterers as f64).sqrt();
        for k in 0..3 {
            for n in 0..params.scatterers {
                for (i, z) in path_response(&g, k, n, &params).iter().enumerate() {
                    let x = distance(g.aps[i], g.scatterers[k][n]) + params.ring_radius;
                    assert!((z.norm() - pathloss(x, &params).sqrt()).abs() <= 1e-15);
                }
            }
        }
        let h = one_ring_channel(&g, &mut sample_rng(2, 0), &params);
        for k in 0..3 {
            for i in 0..4 {
                let bound: f64 = (0..params.scatterers)
                    .map(|n| {
                        let x = distance(g.aps[i], g.scatterers[k][n]) + params.ring_radius;
                        pathloss(x, &params).sqrt()
                    })
                    .sum::<f64>()
                    / norm;
                assert!(h[(i, k)].norm() <= bound * (1.0 + 1e-12));
            }
        }
        assert_eq!(h, one_ring_channel(&g, &mut sample_rng(2, 0), &params));
    }

    #[test]
    fn constraint_sampling() {
        let bounds = ConstraintBounds::default();
        assert_eq!((bounds.p_min, bounds.p_max, bounds.c_min, bounds.c_max), (1.0, 1e3, 2.0, 10.0));

        let mut rng = sample_rng(5, 0);
        assert_eq!(sample_constraints(&mut rng, &ConstraintBounds::fixed(10.0, 4.0)).unwrap(), (10.0, 4.0));

        let n = 100_000;
        let mut sum_db = 0.0;
        for _ in 0..n {
            let (p, c) = sample_constraints(&mut rng, &bounds).unwrap();
            assert!((1.0..=1e3).contains(&p) && (2.0..=10.0).contains(&c));
            sum_db += 10.0 * p.log10();
        }
        let mean = sum_db / n as f64;
        assert!((mean - 15.0).abs() < 0.2, "mean dB {mean}");

        let bad = ConstraintBounds { p_min: 5.0, p_max: 1.0, ..bounds };
        assert!(matches!(sample_constraints(&mut rng, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn ue_radius_matches_disk_cdf() {
        let params = OneRingParams::default();
        let mut rng = sample_rng(77, 0);
        let mut radii: Vec<f64> = (0..100_000)
            .map(|_| {
                let g = sample_geometry(&mut rng, 1, 1, &params);
                g.ues[0][0].hypot(g.ues[0][1])
            })
            .collect();
        radii.sort_by(f64::total_cmp);
        let n = radii.len() as f64;
        let ks = radii
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let f = (r / 100.0).powi(2);
                (f - j as f64 / n).abs().max(((j + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn datasets_are_reproducible() {
        let p = OneRingParams::default();
        let b = ConstraintBounds::default();
        let a = generate_dataset(100, 6, 6, &p, &b, 42).unwrap();
        assert_eq!(a.len(), 100);
        assert!(a.iter().all(|s| s.h.rows() == 6 && s.h.cols() == 6));
        assert_eq!(a, generate_dataset(100, 6, 6, &p, &b, 42).unwrap());
        assert_ne!(a, generate_dataset(100, 6, 6, &p, &b, 43).unwrap());
        assert!(generate_dataset(0, 6, 6, &p, &b, 42).is_err());
    }

    #[test]
    fn large_dataset_is_fast() {
        let t = std::time::Instant::now();
        let d = generate_dataset(10_000, 6, 6, &OneRingParams::default(), &ConstraintBounds::default(), 1).unwrap();
        assert_eq!(d.len(), 10_000);
        assert!(t.elapsed().as_secs_f64() < 10.0);
    }
}
