mod common;

use common::*;
use ndarray::Array2;
use rand::Rng;
use wakescan::operator::{DenseOperator, LinearOperator};
use wakescan::prox::{PriorKind, PriorSpec};
use wakescan::solver::*;
use wakescan::transform::{AngleGrid, FbpFilter, Sinogram};
use wakescan::{Error, Image};

fn config(prior: PriorSpec) -> SolverConfig {
    SolverConfig::new(prior)
}

#[test]
fn relative_change_examples() {
    let mut r = rng(1);
    let p = Sinogram::new(4, AngleGrid::new(8).unwrap(), random_grid(7, 8, 1.0, &mut r)).unwrap();
    assert_eq!(relative_change(&p, &p).unwrap(), 0.0);
    let twice = Sinogram::new(4, p.grid(), p.values() * 2.0).unwrap();
    assert!((relative_change(&twice, &p).unwrap() - 1.0).abs() < 1e-15);
    let zero = Sinogram::zeros(4, p.grid());
    assert_eq!(relative_change(&p, &zero).unwrap(), f64::INFINITY);
    let other = Sinogram::zeros(4, AngleGrid::new(9).unwrap());
    assert!(relative_change(&p, &other).is_err());

    let a = random_grid(8, 8, 1.0, &mut r);
    let b = random_grid(8, 8, 1.0, &mut r);
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    let expect = (num / den).sqrt();
    let got = relative_change_flat(a.as_slice().unwrap(), b.as_slice().unwrap());
    assert!((got - expect).abs() < 1e-12);
}

#[test]
fn gmc_cost_examples() {
    let m = 16;
    let grid = AngleGrid::new(30).unwrap();
    let mut r = rng(2);
    let y = Image::new(random_grid(m, m, 1.0, &mut r)).unwrap();
    let zero = Sinogram::zeros(m, grid);
    let y_sq: f64 = y.pixels().iter().map(|v| v * v).sum();
    let c0 = gmc_cost(&zero, &zero, &y, 0.7, 0.6).unwrap();
    assert!((c0 - y_sq).abs() < 1e-10 * y_sq);

    let r_count = zero.offsets();
    let x = Sinogram::new(m, grid, random_grid(r_count, 30, 1.0, &mut r)).unwrap();
    let v = Sinogram::new(m, grid, random_grid(r_count, 30, 1.0, &mut r)).unwrap();
    let cx = forward(&x, None, FbpFilter::default()).unwrap();
    let cv = forward(&v, None, FbpFilter::default()).unwrap();
    let l1 = |s: &Sinogram| s.values().iter().map(|t| t.abs()).sum::<f64>();
    let sq = |a: &Array2<f64>| a.iter().map(|t| t * t).sum::<f64>();

    // with γ = 0 and λ = 1 the cross term vanishes
    let c = gmc_cost(&x, &v, &y, 1.0, 0.0).unwrap();
    let expect = sq(&(y.pixels() - cx.pixels())) + l1(&x) - l1(&v);
    assert!((c - expect).abs() < 1e-10 * expect.abs());

    // full term-by-term evaluation
    let (lambda, gamma) = (0.4, 0.7);
    let c = gmc_cost(&x, &v, &y, lambda, gamma).unwrap();
    let expect = sq(&(y.pixels() - cx.pixels())) + lambda * (l1(&x) - l1(&v))
        - gamma * sq(&(cx.pixels() - cv.pixels()));
    assert!((c - expect).abs() < 1e-10 * expect.abs().max(1.0));
    assert!(gmc_cost(&Sinogram::zeros(8, grid), &zero, &y, 1.0, 0.5).is_err());
}

#[test]
fn zero_observation_gives_zero_estimate() {
    let y = Image::zeros(16);
    let r = solve_fb_gmc(&y, &config(PriorSpec::gmc(0.1, 0.6).unwrap())).unwrap();
    assert_eq!(r.iterations, 1);
    assert!(r.estimate.values().iter().all(|&v| v == 0.0));
    for prior in [PriorSpec::l1(0.1), PriorSpec::lp(0.1, 0.5), PriorSpec::tv(0.1), PriorSpec::nuclear(0.1)] {
        let r = solve_twist(&y, &config(prior.unwrap())).unwrap();
        assert!(r.estimate.values().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn planted_spike_is_recovered_by_gmc() {
    let m = 32;
    let grid = AngleGrid::default();
    let mut truth = Sinogram::zeros(m, grid);
    let bin = truth.bin_of(5.0).unwrap();
    truth.values_mut()[[bin, 40]] = 50.0;
    let y = forward(&truth, None, FbpFilter::default()).unwrap();
    let r = solve_fb_gmc(&y, &config(PriorSpec::gmc(0.01, 0.6).unwrap())).unwrap();
    assert_eq!(argmax(r.estimate.values()), (bin, 40));
}

#[test]
fn planted_line_is_recovered_by_l1_and_tv() {
    let m = 32;
    let y = line_image(m, 3.0, 60.0, 10.0).standardized().unwrap();
    let l1 = solve_twist(&y, &config(PriorSpec::l1(0.1).unwrap())).unwrap();
    let want = (l1.estimate.bin_of(3.0).unwrap(), 60);
    assert_eq!(argmax(l1.estimate.values()), want);
    // TV flattens the peak into a plateau along θ, so agreement is judged at
    // the angular tolerance used when scoring detections
    let tv = solve_twist(&y, &config(PriorSpec::tv(0.1).unwrap())).unwrap();
    let (bin, k) = argmax(tv.estimate.values());
    assert_eq!(bin, want.0);
    assert!((k as i64 - want.1 as i64).abs() <= 3, "TV peak at angle index {k}");
}

#[test]
fn twist_costs_do_not_increase() {
    for seed in 0..3 {
        let y = random_problem(32, seed);
        for prior in [PriorSpec::l1(0.1), PriorSpec::tv(0.1), PriorSpec::nuclear(0.1)] {
            let prior = prior.unwrap();
            let r = solve_twist(&y, &config(prior)).unwrap();
            for w in r.cost_trace.windows(2).skip(1) {
                assert!(w[1] <= w[0] + 1e-6 * w[0].abs(), "{}: {} -> {}", prior.kind.name(), w[0], w[1]);
            }
        }
    }
}

#[test]
fn gmc_with_zero_gamma_matches_twist_l1() {
    for seed in 0..2 {
        let y = random_problem(32, 100 + seed);
        let lambda = 0.1;
        let gmc = solve_fb_gmc(&y, &config(PriorSpec::gmc(lambda, 0.0).unwrap())).unwrap();
        let l1 = solve_twist(&y, &config(PriorSpec::l1(lambda).unwrap())).unwrap();
        let prior = PriorSpec::l1(lambda).unwrap();
        let a = map_objective(&gmc.estimate, &y, &prior).unwrap();
        let b = map_objective(&l1.estimate, &y, &prior).unwrap();
        assert!((a - b).abs() <= 0.01 * b.abs(), "GMC(γ=0) {a} vs L1 {b}");
    }
}

#[test]
fn gmc_objective_is_convex_along_segments() {
    let mut r = rng(3);
    let (rows, cols) = (10, 6);
    let data: Vec<f64> = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    let op = DenseOperator::new(rows, cols, data);
    let y: Vec<f64> = (0..rows).map(|_| r.random_range(-2.0..2.0)).collect();
    let problem = Problem::new(&op, &y, (cols, 1)).unwrap();
    let prior = PriorSpec::gmc(0.5, 0.6).unwrap();
    for _ in 0..30 {
        let a: Vec<f64> = (0..cols).map(|_| r.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..cols).map(|_| r.random_range(-3.0..3.0)).collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
        let fa = map_objective_with(&problem, &a, &prior).unwrap();
        let fb = map_objective_with(&problem, &b, &prior).unwrap();
        let fm = map_objective_with(&problem, &mid, &prior).unwrap();
        assert!(fm <= 0.5 * (fa + fb) + 1e-6 * (fa.abs() + fb.abs()), "{fm} > mean of {fa}, {fb}");
    }
}

#[test]
fn solves_are_deterministic_and_respect_stopping() {
    let y = random_problem(32, 7);
    for prior in [PriorSpec::gmc(0.1, 0.6), PriorSpec::l1(0.1), PriorSpec::lp(0.1, 0.5)] {
        let mut cfg = config(prior.unwrap());
        cfg.max_iter = 12;
        let a = solve(&y, &cfg).unwrap();
        let b = solve(&y, &cfg).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert!(a.iterations <= cfg.max_iter);
        assert_eq!(a.converged, a.final_rel_change <= cfg.tol);
        assert_eq!(a.cost_trace.len(), a.iterations);
    }
}

#[test]
fn wrong_solver_for_prior_is_rejected() {
    let y = random_problem(16, 1);
    assert!(solve_fb_gmc(&y, &config(PriorSpec::l1(0.1).unwrap())).is_err());
    assert!(solve_twist(&y, &config(PriorSpec::gmc(0.1, 0.6).unwrap())).is_err());
    let mut cfg = config(PriorSpec::l1(0.1).unwrap());
    cfg.mu = 2.0;
    assert!(solve(&y, &cfg).is_err());
}

#[test]
fn oversized_step_is_reported_as_divergence() {
    let op = DenseOperator::new(3, 3, vec![1.0, 0.2, 0.0, 0.0, 1.0, 0.3, 0.1, 0.0, 1.0]);
    let y = [1.0, -2.0, 0.5];
    // a Lipschitz bound far below the true one makes every step overshoot
    let problem = Problem::with_lipschitz(&op, &y, (3, 1), 1e-3 * op.norm_sq_estimate()).unwrap();
    let cfg = config(PriorSpec::gmc(1e-3, 0.0).unwrap());
    match fb_gmc(&problem, &cfg) {
        Err(e @ Error::Diverged { .. }) => assert!(e.is_numerical()),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn trace_csv_has_one_row_per_iteration() {
    let y = random_problem(16, 2);
    let r = solve(&y, &config(PriorSpec::l1(0.1).unwrap())).unwrap();
    let mut buf = Vec::new();
    r.write_trace_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "iteration,rel_change,cost");
    assert_eq!(lines.len(), r.iterations + 1);
    assert!(matches!(r.estimate.values().dim(), (_, 180)));
    let _ = PriorKind::L1;
}
