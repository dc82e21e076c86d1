#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stifflab::geometry::{MetricField, Point};
use stifflab::scenarios::{self, Scenario};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random point on the constraint of a builtin, exact up to rounding.
pub fn point_on(name: &str, rng: &mut ChaCha8Rng) -> Point {
    match name {
        "sphere_harmonic" | "ellipsoid_quartic" => {
            let a = if name == "sphere_harmonic" {
                [1.0, 1.0, 1.0]
            } else {
                [1.0, 2.0, 3.0]
            };
            loop {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let q: f64 = x.iter().zip(&a).map(|(x, a)| a * x * x).sum();
                if q > 1e-2 {
                    let s = q.sqrt();
                    return DVector::from_iterator(3, x.iter().map(|x| x / s));
                }
            }
        }
        _ => DVector::from_vec(vec![rng.gen_range(-1.0..1.0), 0.0]),
    }
}

pub fn random_vector(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-scale..scale)))
}

/// Tangential part of `w` at `x` (Euclidean metric, `∇f` given).
pub fn tangential(grad: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    w - grad * (grad.dot(w) / grad.dot(grad))
}

pub fn builtin(name: &str) -> Scenario {
    scenarios::builtin(name).unwrap()
}

/// `diag(1 + x₀², 2 + sin x₁, 1.5 + 0.5 x₀ x₂)` with analytic partials.
pub fn warped_metric() -> MetricField {
    MetricField::from_fn(3, |x| {
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0 + x[0] * x[0],
            2.0 + x[1].sin(),
            1.5 + 0.5 * x[0] * x[2],
        ]))
    })
    .with_partials(|x| {
        let d = |a: f64, b: f64, c: f64| DMatrix::from_diagonal(&DVector::from_vec(vec![a, b, c]));
        vec![
            d(2.0 * x[0], 0.0, 0.5 * x[2]),
            d(0.0, x[1].cos(), 0.0),
            d(0.0, 0.0, 0.5 * x[0]),
        ]
    })
}
