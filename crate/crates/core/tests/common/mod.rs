//! Finite-difference oracle shared by the gradient tests and the acceptance run.
//!
//! For the polynomial objectives the difference quotient is taken in exact
//! rational arithmetic, so the only error left is the O(h²) truncation term.
//! Plain f64 differences lose too many digits on the ill-conditioned elliptic
//! function to resolve a 1e-5 relative tolerance.

#![allow(dead_code)]

use fpso::benchmarks::{BenchmarkFn, Objective, ObjectiveId};
use num::bigint::BigInt;
use num::{BigRational, One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POINTS: usize = 100;
pub const TOLERANCE: f64 = 1e-5;

pub fn q(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

pub fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn elliptic_weights(dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            if dim == 1 {
                1.0
            } else {
                10f64.powf(6.0 * d as f64 / (dim - 1) as f64)
            }
        })
        .collect()
}

/// Exact value of a polynomial objective at a rational point.
pub fn exact_value(f: BenchmarkFn, x: &[BigRational], weights: &[BigRational]) -> BigRational {
    let mut total = BigRational::zero();
    match f {
        BenchmarkFn::Sphere => {
            for v in x {
                total += v * v;
            }
        }
        BenchmarkFn::HcElliptic => {
            for (v, w) in x.iter().zip(weights) {
                total += w * v * v;
            }
        }
        BenchmarkFn::Schwefel12 => {
            let mut prefix = BigRational::zero();
            for v in x {
                prefix += v;
                total += &prefix * &prefix;
            }
        }
        BenchmarkFn::Rosenbrock => {
            for w in x.windows(2) {
                let a = &w[1] - &w[0] * &w[0];
                let b = BigRational::one() - &w[0];
                total += int(100) * &a * &a + &b * &b;
            }
        }
        BenchmarkFn::Rastrigin => unreachable!("not polynomial"),
    }
    total
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

pub fn step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

pub fn random_points(f: BenchmarkFn, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = f.init_half_width();
    (0..POINTS)
        .map(|_| (0..dim).map(|_| rng.gen_range(-r..r)).collect())
        .collect()
}

pub fn worst_polynomial_error(f: BenchmarkFn, dim: usize) -> f64 {
    let obj = ObjectiveId::new(f, dim).unwrap();
    let weights: Vec<BigRational> = elliptic_weights(dim).into_iter().map(q).collect();
    let mut worst: f64 = 0.0;
    for x in random_points(f, dim, 11 + dim as u64) {
        let grad = obj.try_gradient(&x).unwrap();
        let exact: Vec<BigRational> = x.iter().map(|&v| q(v)).collect();
        for d in 0..dim {
            let h = q(step(x[d]));
            let mut plus = exact.clone();
            plus[d] += &h;
            let mut minus = exact.clone();
            minus[d] -= &h;
            let fd = (exact_value(f, &plus, &weights) - exact_value(f, &minus, &weights))
                / (int(2) * &h);
            worst = worst.max(rel_err(grad[d], fd.to_f64().unwrap()));
        }
    }
    worst
}

/// Worst componentwise error of the Rastrigin gradient against f64 differences.
pub fn worst_rastrigin_error(dim: usize) -> f64 {
    let obj = ObjectiveId::new(BenchmarkFn::Rastrigin, dim).unwrap();
    let mut worst: f64 = 0.0;
    for x in random_points(BenchmarkFn::Rastrigin, dim, 5) {
        let grad = obj.try_gradient(&x).unwrap();
        for d in 0..dim {
            let h = step(x[d]);
            let mut plus = x.clone();
            plus[d] += h;
            let mut minus = x.clone();
            minus[d] -= h;
            let fd = (obj.evaluate(&plus) - obj.evaluate(&minus)) / (plus[d] - minus[d]);
            worst = worst.max(rel_err(grad[d], fd));
        }
    }
    worst
}
