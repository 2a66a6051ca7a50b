#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wakescan::prox::{gst_prox_lp, nuclear_norm, nuclear_prox, soft_threshold, tv_norm, tv_objective, tv_prox};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Minimiser of `½(x - u)² + penalty(x)` over a scalar grid, refined by a
/// fine local scan around the best coarse point.
pub fn scalar_argmin(u: f64, penalty: impl Fn(f64) -> f64) -> (f64, f64) {
    let f = |x: f64| 0.5 * (x - u) * (x - u) + penalty(x);
    let hi = u.abs() + 1.0;
    let coarse = 4000;
    let mut best = (0.0, f(0.0));
    for i in 0..=coarse {
        let x = -hi + 2.0 * hi * i as f64 / coarse as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let h = 2.0 * hi / coarse as f64;
    let mut x = best.0 - h;
    while x <= best.0 + h {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
        x += 1e-5;
    }
    best
}

/// Checks soft thresholding against the scalar oracle; returns the error.
pub fn soft_vs_oracle(u: f64, t: f64) -> f64 {
    let got = soft_threshold(u, t).unwrap();
    let (x, fx) = scalar_argmin(u, |x| t * x.abs());
    let f = |x: f64| 0.5 * (x - u) * (x - u) + t * x.abs();
    // the oracle grid is only 1e-5 fine, so compare objectives first
    assert!(f(got) <= fx + 1e-9, "soft({u}, {t}) = {got} is not a minimiser");
    (got - x).abs()
}

/// GST against the scalar oracle. Near the jump threshold two minima tie, so
/// agreement is judged on the objective when the arguments differ.
pub fn gst_vs_oracle(u: f64, lambda: f64, p: f64) -> Result<(), String> {
    let got = gst_prox_lp(u, lambda, p).unwrap();
    let f = |x: f64| 0.5 * (x - u) * (x - u) + lambda * x.abs().powf(p);
    let (x, fx) = scalar_argmin(u, |x| lambda * x.abs().powf(p));
    if (got - x).abs() <= 1e-4 {
        return Ok(());
    }
    if f(got) <= fx + 1e-7 {
        return Ok(());
    }
    Err(format!("gst({u}, {lambda}, {p}) = {got} (f {}), oracle {x} (f {fx})", f(got)))
}

/// TV prox against a run with ten times the inner iterations.
pub fn tv_vs_self_oracle(u: &Array2<f64>, lambda: f64, iters: usize) -> Result<(), String> {
    let z = tv_prox(u, lambda, iters);
    let reference = tv_prox(u, lambda, 10 * iters);
    let (a, b) = (tv_objective(&z, u, lambda), tv_objective(&reference, u, lambda));
    if (a - b).abs() > 1e-3 * b.abs().max(1e-12) {
        return Err(format!("objective {a} vs reference {b}"));
    }
    if tv_norm(&z) > tv_norm(u) + 1e-9 {
        return Err(format!("TV grew from {} to {}", tv_norm(u), tv_norm(&z)));
    }
    Ok(())
}

/// Nuclear prox local optimality: random perturbations never lower the objective.
pub fn nuclear_vs_perturbation(u: &Array2<f64>, lambda: f64, probes: usize, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let z = nuclear_prox(u, lambda).unwrap();
    let obj = |x: &Array2<f64>| 0.5 * frob(&(x - u)).powi(2) + lambda * nuclear_norm(x).unwrap();
    let base = obj(&z);
    for _ in 0..probes {
        let eps = 10f64.powf(rng.random_range(-4.0..-1.0));
        let d = random_grid(u.nrows(), u.ncols(), eps, rng);
        let v = obj(&(&z + &d));
        if v < base - 1e-10 {
            return Err(format!("perturbation lowered objective {base} to {v}"));
        }
    }
    let survivors = {
        let svd = nalgebra::DMatrix::from_row_iterator(u.nrows(), u.ncols(), u.iter().copied()).svd(false, false);
        svd.singular_values.iter().filter(|&&s| s > lambda).count()
    };
    let (nz, nu) = (nuclear_norm(&z).unwrap(), nuclear_norm(u).unwrap());
    if nz > nu - lambda * survivors as f64 + 1e-9 {
        return Err(format!("nuclear norm {nz} vs bound {}", nu - lambda * survivors as f64));
    }
    Ok(())
}

/// Image holding one full straight line `x cos θ + y sin θ = r` of the given
/// value on a zero background (anti-aliased over one pixel).
pub fn line_image(m: usize, r: f64, theta_deg: f64, value: f64) -> wakescan::Image {
    let c = (m as f64 - 1.0) / 2.0;
    let (s, co) = theta_deg.to_radians().sin_cos();
    wakescan::Image::from_fn(m, |(row, col)| {
        let (x, y) = (col as f64 - c, c - row as f64);
        let d = (x * co + y * s - r).abs();
        value * (1.0 - d).clamp(0.0, 1.0)
    })
    .unwrap()
}

/// Standardised noisy scene with a bright and a dark line, used as a generic
/// inversion problem.
pub fn random_problem(m: usize, seed: u64) -> wakescan::Image {
    let mut r = rng(seed);
    let theta = r.random_range(0.0..180.0);
    let off = r.random_range(-4.0..4.0);
    let bright = line_image(m, off, theta, 2.0);
    let dark = line_image(m, -off, (theta + 7.0) % 180.0, -1.0);
    let noise = random_grid(m, m, 1.0, &mut r);
    let px = bright.pixels() + dark.pixels() + &noise;
    wakescan::Image::new(px).unwrap().standardized().unwrap()
}

/// Position `(bin, angle index)` of the largest sinogram entry.
pub fn argmax(values: &Array2<f64>) -> (usize, usize) {
    let mut best = ((0, 0), f64::NEG_INFINITY);
    for (idx, &v) in values.indexed_iter() {
        if v > best.1 {
            best = (idx, v);
        }
    }
    best.0
}
