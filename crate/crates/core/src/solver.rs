//! MAP estimation of the sparse sinogram `X` from an observed image `Y ≈ C X`.
//!
//! Both solvers minimise `½‖Y - C X‖² + λ ψ(X)`. Gradient steps are taken
//! relative to `L`, an upper bound on `‖CᵀC‖`, so the configured step `μ` is
//! dimensionless and thresholds scale as `λ / L`.
//!
//! * [`solve_fb_gmc`]: forward-backward iteration on the GMC saddle problem.
//! * [`solve_twist`]: two-step iterative shrinkage for L1, Lp, TV and nuclear priors.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::operator::{dot, shared_projector, FbpOperator, LinearOperator};
use crate::prox::{generalized_huber, soft, twist_gamma_at, PriorKind, PriorSpec, ScalingMatrixSpec};
use crate::transform::{AngleGrid, FbpFilter, Sinogram};

/// Consecutive over-budget iterations tolerated before declaring divergence.
const DIVERGENCE_PATIENCE: usize = 20;
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Forward-backward step, relative to the step bound; in `(0, 1.9)`.
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// TwIST over-relaxation.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub prior: PriorSpec,
    #[serde(default)]
    pub grid: AngleGrid,
    #[serde(default)]
    pub filter: FbpFilter,
}

fn default_mu() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    1.96
}
fn default_tol() -> f64 {
    1e-3
}
fn default_max_iter() -> usize {
    1000
}

impl SolverConfig {
    pub fn new(prior: PriorSpec) -> Self {
        Self {
            mu: default_mu(),
            alpha: default_alpha(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            prior,
            grid: AngleGrid::default(),
            filter: FbpFilter::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.9) {
            return Err(Error::invalid(format!("mu must lie in (0, 1.9), got {}", self.mu)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        self.prior.validate()
    }
}

/// Outcome of a solve on flat buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub estimate: Vec<f64>,
    pub iterations: usize,
    pub final_rel_change: f64,
    /// Cost after each iteration.
    pub cost_trace: Vec<f64>,
    /// Relative change after each iteration.
    pub rel_change_trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub estimate: Sinogram,
    pub iterations: usize,
    pub final_rel_change: f64,
    pub cost_trace: Vec<f64>,
    pub rel_change_trace: Vec<f64>,
    pub converged: bool,
}

impl SolverResult {
    fn from_solution(sol: Solution, template: &Sinogram) -> Result<Self> {
        let (r, t) = template.values().dim();
        let values = Array2::from_shape_vec((r, t), sol.estimate).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            estimate: template.with_values(values),
            iterations: sol.iterations,
            final_rel_change: sol.final_rel_change,
            cost_trace: sol.cost_trace,
            rel_change_trace: sol.rel_change_trace,
            converged: sol.converged,
        })
    }

    /// CSV with header `iteration,rel_change,cost`, one row per iteration.
    pub fn write_trace_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "iteration,rel_change,cost")?;
        for (i, (rel, cost)) in self.rel_change_trace.iter().zip(&self.cost_trace).enumerate() {
            writeln!(out, "{},{},{}", i + 1, rel, cost)?;
        }
        Ok(())
    }
}

/// A linear problem `data ≈ op(x)` where `x` has matrix shape `shape`.
pub struct Problem<'a, A: LinearOperator + ?Sized> {
    pub op: &'a A,
    pub data: &'a [f64],
    pub shape: (usize, usize),
    /// Upper bound on `‖AᵀA‖₂`.
    pub lipschitz: f64,
}

impl<'a, A: LinearOperator + ?Sized> Problem<'a, A> {
    pub fn new(op: &'a A, data: &'a [f64], shape: (usize, usize)) -> Result<Self> {
        let lipschitz = op.norm_sq_estimate();
        Self::with_lipschitz(op, data, shape, lipschitz)
    }

    pub fn with_lipschitz(op: &'a A, data: &'a [f64], shape: (usize, usize), lipschitz: f64) -> Result<Self> {
        if data.len() != op.output_len() {
            return Err(Error::DimensionMismatch(format!(
                "data has {} entries, operator range is {}",
                data.len(),
                op.output_len()
            )));
        }
        if shape.0 * shape.1 != op.input_len() {
            return Err(Error::DimensionMismatch(format!("shape {shape:?} vs operator domain {}", op.input_len())));
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::Numerical(format!("operator norm estimate {lipschitz} is unusable")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation contains non-finite values"));
        }
        Ok(Self { op, data, shape, lipschitz })
    }

    fn residual_sq(&self, ax: &[f64]) -> f64 {
        ax.iter().zip(self.data).map(|(a, y)| (y - a) * (y - a)).sum()
    }
}

/// `‖current - previous‖ / ‖previous‖` on flat buffers; 0 for identical
/// buffers and `+∞` when only `previous` is zero.
pub fn relative_change_flat(current: &[f64], previous: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut base = 0.0;
    for (c, p) in current.iter().zip(previous) {
        diff += (c - p) * (c - p);
        base += p * p;
    }
    if diff == 0.0 {
        0.0
    } else if base == 0.0 {
        f64::INFINITY
    } else {
        (diff / base).sqrt()
    }
}

/// Frobenius relative change between successive iterates.
pub fn relative_change(current: &Sinogram, previous: &Sinogram) -> Result<f64> {
    if current.values().dim() != previous.values().dim() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            current.values().dim(),
            previous.values().dim()
        )));
    }
    Ok(relative_change_flat(
        current.values().as_slice().expect("standard layout"),
        previous.values().as_slice().expect("standard layout"),
    ))
}

/// Forward operator for an observed image, honouring its mask.
pub fn forward_operator(y: &Image, grid: AngleGrid, filter: FbpFilter) -> FbpOperator {
    FbpOperator::new(shared_projector(y.size(), grid), filter).with_mask(y.mask())
}

fn observation(y: &Image) -> Vec<f64> {
    y.masked_pixels().iter().copied().collect()
}

fn check_sino(x: &Sinogram, y: &Image, grid: AngleGrid) -> Result<()> {
    if x.image_size() != y.size() || x.grid() != grid {
        return Err(Error::DimensionMismatch(format!(
            "sinogram for M={} T={} vs image M={} T={}",
            x.image_size(),
            x.grid().count(),
            y.size(),
            grid.count()
        )));
    }
    Ok(())
}

fn flat(x: &Sinogram) -> &[f64] {
    x.values().as_slice().expect("standard layout")
}

/// Saddle objective `‖Y - CX‖² + λ‖X‖₁ - λ‖v‖₁ - γ‖C(X - v)‖²` on flat buffers.
pub fn gmc_cost_with<A: LinearOperator + ?Sized>(
    op: &A,
    x: &[f64],
    v: &[f64],
    y: &[f64],
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    if x.len() != op.input_len() || v.len() != op.input_len() || y.len() != op.output_len() {
        return Err(Error::DimensionMismatch("gmc_cost operand sizes".into()));
    }
    if !(lambda > 0.0) || !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid("gmc_cost needs lambda > 0 and gamma in [0, 1]"));
    }
    let mut ax = vec![0.0; op.output_len()];
    op.apply(x, &mut ax);
    let diff: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - b).collect();
    let mut ad = vec![0.0; op.output_len()];
    op.apply(&diff, &mut ad);
    let residual: f64 = ax.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum();
    let l1 = |z: &[f64]| z.iter().map(|t| t.abs()).sum::<f64>();
    Ok(residual + lambda * l1(x) - lambda * l1(v) - gamma * dot(&ad, &ad))
}

/// [`gmc_cost_with`] for an observed image, using its mask.
pub fn gmc_cost(x: &Sinogram, v: &Sinogram, y: &Image, lambda: f64, gamma: f64) -> Result<f64> {
    let grid = x.grid();
    check_sino(x, y, grid)?;
    check_sino(v, y, grid)?;
    let op = forward_operator(y, grid, FbpFilter::default());
    gmc_cost_with(&op, flat(x), flat(v), &observation(y), lambda, gamma)
}

fn penalty_flat(x: &[f64], shape: (usize, usize), prior: &PriorSpec) -> Result<f64> {
    match prior.kind {
        PriorKind::L1 | PriorKind::Gmc { .. } => Ok(x.iter().map(|v| v.abs()).sum()),
        PriorKind::Lp { p } => Ok(x.iter().map(|v| v.abs().powf(p)).sum()),
        _ => prior.penalty(&grid_of(x, shape)),
    }
}

fn grid_of(x: &[f64], shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(shape, x.to_vec()).expect("shape checked by Problem")
}

/// MAP objective `½‖Y - CX‖² + λ ψ(X)` on flat buffers. For GMC, `ψ` is the
/// GMC penalty `‖X‖₁ - S_B(X)` with the Huber part evaluated numerically.
pub fn map_objective_with<A: LinearOperator + ?Sized>(
    problem: &Problem<'_, A>,
    x: &[f64],
    prior: &PriorSpec,
) -> Result<f64> {
    let mut ax = vec![0.0; problem.op.output_len()];
    problem.op.apply(x, &mut ax);
    let data_term = 0.5 * problem.residual_sq(&ax);
    let mut reg = penalty_flat(x, problem.shape, prior)?;
    if let PriorKind::Gmc { gamma } = prior.kind {
        let scale = ScalingMatrixSpec::new(gamma, prior.lambda)?;
        reg -= generalized_huber(x, problem.op, scale, 500)?.value;
    }
    Ok(data_term + prior.lambda * reg)
}

/// [`map_objective_with`] for an observed image.
pub fn map_objective(x: &Sinogram, y: &Image, prior: &PriorSpec) -> Result<f64> {
    let grid = x.grid();
    check_sino(x, y, grid)?;
    let op = forward_operator(y, grid, FbpFilter::default());
    let data = observation(y);
    let values = x.values();
    let problem = Problem::with_lipschitz(&op, &data, values.dim(), op.shared_norm_sq())?;
    map_objective_with(&problem, flat(x), prior)
}

struct DivergenceGuard {
    initial: f64,
    strikes: usize,
}

impl DivergenceGuard {
    fn new(initial: f64) -> Self {
        Self { initial, strikes: 0 }
    }

    fn check(&mut self, iteration: usize, cost: f64) -> Result<()> {
        let limit = DIVERGENCE_FACTOR * self.initial.abs();
        if !cost.is_finite() || (limit > 0.0 && cost > limit) {
            self.strikes += 1;
        } else {
            self.strikes = 0;
        }
        if self.strikes >= DIVERGENCE_PATIENCE || (!cost.is_finite() && self.strikes > 0 && iteration > 0) {
            return Err(Error::Diverged { iterations: iteration, cost, initial: self.initial });
        }
        Ok(())
    }
}

/// Forward-backward iteration for the GMC-regularised problem.
///
/// Uses `ρ = max(1, γ/(1-γ)) L` and step `μ/ρ`; both `X` and the auxiliary
/// `v` start at zero and are soft-thresholded at `λ μ/ρ` each iteration.
pub fn fb_gmc<A: LinearOperator + ?Sized>(problem: &Problem<'_, A>, config: &SolverConfig) -> Result<Solution> {
    config.validate()?;
    let gamma = match config.prior.kind {
        PriorKind::Gmc { gamma } => gamma,
        _ => return Err(Error::invalid("forward-backward solver needs a GMC prior")),
    };
    let lambda = config.prior.lambda;
    let rho = (gamma / (1.0 - gamma)).max(1.0) * problem.lipschitz;
    let step = config.mu / rho;
    let thresh = step * lambda;
    let op = problem.op;
    let n = op.input_len();
    let m = op.output_len();

    let mut x = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut ax = vec![0.0; m];
    let mut av = vec![0.0; m];
    let mut r = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    let l1 = |z: &[f64]| z.iter().map(|t| t.abs()).sum::<f64>();
    let saddle = |x: &[f64], v: &[f64], ax: &[f64], av: &[f64]| {
        let cross: f64 = ax.iter().zip(av).map(|(a, b)| (a - b) * (a - b)).sum();
        0.5 * problem.residual_sq(ax) + lambda * (l1(x) - l1(v)) - 0.5 * gamma * cross
    };

    let initial = saddle(&x, &v, &ax, &av);
    let mut guard = DivergenceGuard::new(initial);
    let mut costs = Vec::new();
    let mut rels = Vec::new();
    let mut rel = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        for i in 0..m {
            d[i] = av[i] - ax[i];
            r[i] = ax[i] + gamma * d[i] - problem.data[i];
        }
        op.apply_adjoint(&r, &mut g1);
        op.apply_adjoint(&d, &mut g2);
        for i in 0..n {
            x_new[i] = soft(x[i] - step * g1[i], thresh);
            v[i] = soft(v[i] - step * gamma * g2[i], thresh);
        }
        rel = relative_change_flat(&x_new, &x);
        std::mem::swap(&mut x, &mut x_new);
        op.apply(&x, &mut ax);
        op.apply(&v, &mut av);
        let cost = saddle(&x, &v, &ax, &av);
        costs.push(cost);
        rels.push(rel);
        guard.check(iterations, cost)?;
        if rel <= config.tol {
            break;
        }
    }
    Ok(Solution {
        estimate: x,
        iterations,
        final_rel_change: rel,
        cost_trace: costs,
        rel_change_trace: rels,
        converged: rel <= config.tol,
    })
}

/// Two-step iterative shrinkage/thresholding for the L1, Lp, TV and nuclear priors.
///
/// The gradient step is `w = X + Cᵀ(Y - CX) / L` and `Γ` is applied at
/// threshold `λ / L`. A two-step candidate that raises the cost is replaced by
/// the plain shrinkage step `Γ(w)`; for convex priors, if that also raises the
/// cost the iterate is kept and the solve ends.
pub fn twist<A: LinearOperator + ?Sized>(problem: &Problem<'_, A>, config: &SolverConfig) -> Result<Solution> {
    config.validate()?;
    let prior = config.prior;
    if matches!(prior.kind, PriorKind::Gmc { .. }) {
        return Err(Error::invalid("GMC is solved by forward-backward, not TwIST"));
    }
    let convex = !matches!(prior.kind, PriorKind::Lp { .. });
    let step = 1.0 / problem.lipschitz;
    let thresh = prior.lambda * step;
    let alpha = config.alpha;
    let op = problem.op;
    let n = op.input_len();
    let m = op.output_len();
    let shape = problem.shape;

    let cost_of = |x: &[f64], ax: &[f64]| -> Result<f64> {
        Ok(0.5 * problem.residual_sq(ax) + prior.lambda * penalty_flat(x, shape, &prior)?)
    };
    let mut grad = vec![0.0; n];
    let mut resid = vec![0.0; m];
    // Γ applied to the gradient step taken from `x` with image `ax`
    let mut shrink_step = |x: &[f64], ax: &[f64]| -> Result<Vec<f64>> {
        for ((r, y), a) in resid.iter_mut().zip(problem.data).zip(ax) {
            *r = y - a;
        }
        op.apply_adjoint(&resid, &mut grad);
        let w: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + step * gi).collect();
        let out = twist_gamma_at(&grid_of(&w, shape), &prior, thresh)?;
        Ok(out.into_raw_vec_and_offset().0)
    };

    let zero = vec![0.0; n];
    let zero_image = vec![0.0; m];
    let initial = cost_of(&zero, &zero_image)?;
    let mut guard = DivergenceGuard::new(initial);

    let mut x_prev = zero.clone();
    let mut x = shrink_step(&zero, &zero_image)?;
    let mut ax = vec![0.0; m];
    op.apply(&x, &mut ax);
    let mut cost = cost_of(&x, &ax)?;
    let mut rel = relative_change_flat(&x, &x_prev);
    let mut costs = vec![cost];
    let mut rels = vec![rel];
    let mut iterations = 1;
    guard.check(iterations, cost)?;
    let mut candidate_image = vec![0.0; m];

    while rel > config.tol && iterations < config.max_iter {
        iterations += 1;
        let shrunk = shrink_step(&x, &ax)?;
        let candidate: Vec<f64> = (0..n)
            .map(|i| (1.0 - alpha) * x_prev[i] - alpha * x[i] + 2.0 * alpha * shrunk[i])
            .collect();
        op.apply(&candidate, &mut candidate_image);
        let candidate_cost = cost_of(&candidate, &candidate_image)?;
        let next = if candidate_cost <= cost {
            Some((candidate, candidate_cost))
        } else {
            op.apply(&shrunk, &mut candidate_image);
            let shrunk_cost = cost_of(&shrunk, &candidate_image)?;
            (shrunk_cost <= cost || !convex).then_some((shrunk, shrunk_cost))
        };
        match next {
            Some((new_x, new_cost)) => {
                rel = relative_change_flat(&new_x, &x);
                x_prev = std::mem::replace(&mut x, new_x);
                std::mem::swap(&mut ax, &mut candidate_image);
                cost = new_cost;
            }
            None => rel = 0.0,
        }
        costs.push(cost);
        rels.push(rel);
        guard.check(iterations, cost)?;
    }
    Ok(Solution {
        estimate: x,
        iterations,
        final_rel_change: rel,
        cost_trace: costs,
        rel_change_trace: rels,
        converged: rel <= config.tol,
    })
}

fn solve_image(
    y: &Image,
    config: &SolverConfig,
    run: impl FnOnce(&Problem<'_, FbpOperator>, &SolverConfig) -> Result<Solution>,
) -> Result<SolverResult> {
    config.validate()?;
    let op = forward_operator(y, config.grid, config.filter);
    let data = observation(y);
    let template = Sinogram::zeros(y.size(), config.grid);
    let problem = Problem::with_lipschitz(&op, &data, template.values().dim(), op.shared_norm_sq())?;
    let sol = run(&problem, config)?;
    SolverResult::from_solution(sol, &template)
}

/// GMC-regularised inversion of `y` (its mask restricts the data term).
pub fn solve_fb_gmc(y: &Image, config: &SolverConfig) -> Result<SolverResult> {
    solve_image(y, config, fb_gmc)
}

/// TwIST inversion of `y` for the L1, Lp, TV and nuclear priors.
pub fn solve_twist(y: &Image, config: &SolverConfig) -> Result<SolverResult> {
    solve_image(y, config, twist)
}

/// Dispatches on the prior: forward-backward for GMC, TwIST otherwise.
pub fn solve(y: &Image, config: &SolverConfig) -> Result<SolverResult> {
    match config.prior.kind {
        PriorKind::Gmc { .. } => solve_fb_gmc(y, config),
        _ => solve_twist(y, config),
    }
}

/// Applies the forward operator to a sinogram: `C X` restricted to `mask`.
pub fn forward(x: &Sinogram, mask: Option<&Array2<bool>>, filter: FbpFilter) -> Result<Image> {
    let op = FbpOperator::new(shared_projector(x.image_size(), x.grid()), filter).with_mask(mask);
    let mut out = vec![0.0; op.output_len()];
    op.apply(flat(x), &mut out);
    let m = x.image_size();
    Image::new(Array2::from_shape_vec((m, m), out).map_err(|e| Error::invalid(e.to_string()))?)
}
