#![allow(dead_code)]

use std::fmt::Write as _;

use pass_core::rng::stream;
use rand::Rng;

/// Batches of uniform inputs on the unit square with `y = 2 x1 + x2 + N(0, 0.1^2)`.
/// From batch `onset` on, labels in `[0.75, 1]^2` shift by `shift`. Batch
/// sizes cycle through `sizes`.
pub fn synthetic_stream(batches: u64, sizes: &[usize], onset: u64, shift: f64, seed: u64) -> String {
    let mut rng = stream(seed);
    let mut out = String::from("t,x1,x2,y\n");
    for t in 1..=batches {
        let n = sizes[(t as usize - 1) % sizes.len()];
        for _ in 0..n {
            let x1: f64 = rng.random();
            let x2: f64 = rng.random();
            // Box-Muller keeps the helper free of extra dependencies
            let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            let mut y = 2.0 * x1 + x2 + 0.1 * z;
            if t >= onset && x1 >= 0.75 && x2 >= 0.75 {
                y += shift;
            }
            let _ = writeln!(out, "{t},{x1},{x2},{y}");
        }
    }
    out
}
