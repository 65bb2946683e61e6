#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ruvstar::{Design, ResponseMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian(n, n, rng).qr().q()
}

/// A planted model. `beta` is `k x p` with zero interest rows on the first
/// `m` (control) columns; `z` is `n x q` and `alpha` is `q x p`.
pub struct Planted {
    pub y: ResponseMatrix,
    pub design: Design,
    pub beta: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
}

pub struct PlantSpec {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub q: usize,
    pub k1: usize,
    pub k2: usize,
    pub noise: f64,
    pub beta_scale: f64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            n: 12,
            p: 30,
            m: 10,
            q: 2,
            k1: 1,
            k2: 1,
            noise: 1.0,
            beta_scale: 1.0,
        }
    }
}

pub fn planted(s: &PlantSpec, seed: u64) -> Planted {
    let mut r = rng(seed);
    let k = s.k1 + s.k2;
    let mut x = gaussian(s.n, k, &mut r);
    if s.k1 > 0 {
        x.column_mut(0).fill(1.0);
    }
    let mut beta = gaussian(k, s.p, &mut r) * s.beta_scale;
    for i in s.k1..k {
        for j in 0..s.m {
            beta[(i, j)] = 0.0;
        }
    }
    let z = gaussian(s.n, s.q, &mut r);
    let alpha = gaussian(s.q, s.p, &mut r) * 2.0;
    let y = &x * &beta + &z * &alpha + gaussian(s.n, s.p, &mut r) * s.noise;
    Planted {
        y: ResponseMatrix::new(y).unwrap(),
        design: Design::new(x, s.k1, (0..s.m).collect()).unwrap(),
        beta,
        z,
        alpha,
    }
}
