//! Penalties and their proximal / shrinkage operators.
//!
//! Every operator that acts on a sinogram treats it either as a flat vector
//! (soft threshold, GST) or as an `R x T` matrix (TV, nuclear norm).

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{dot, norm, LinearOperator};

pub const DEFAULT_INNER_ITERS: usize = 40;

/// Regulariser choice with its prior-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriorKind {
    /// Generalised minimax-concave penalty; `gamma` sets the non-convexity.
    Gmc { gamma: f64 },
    L1,
    /// `‖X‖_p^p` with `0 < p < 1`.
    Lp { p: f64 },
    /// Anisotropic total variation.
    Tv,
    Nuclear,
}

impl PriorKind {
    pub fn name(&self) -> &'static str {
        match self {
            PriorKind::Gmc { .. } => "gmc",
            PriorKind::L1 => "l1",
            PriorKind::Lp { .. } => "lp",
            PriorKind::Tv => "tv",
            PriorKind::Nuclear => "nuclear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(flatten)]
    pub kind: PriorKind,
    /// Regularisation constant.
    pub lambda: f64,
    /// Iteration cap for the TV and GST inner loops.
    #[serde(default = "default_inner_iters")]
    pub inner_iters: usize,
}

fn default_inner_iters() -> usize {
    DEFAULT_INNER_ITERS
}

impl PriorSpec {
    pub fn new(kind: PriorKind, lambda: f64) -> Result<Self> {
        let spec = Self { kind, lambda, inner_iters: DEFAULT_INNER_ITERS };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gmc(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(PriorKind::Gmc { gamma }, lambda)
    }

    pub fn l1(lambda: f64) -> Result<Self> {
        Self::new(PriorKind::L1, lambda)
    }

    pub fn lp(lambda: f64, p: f64) -> Result<Self> {
        Self::new(PriorKind::Lp { p }, lambda)
    }

    pub fn tv(lambda: f64) -> Result<Self> {
        Self::new(PriorKind::Tv, lambda)
    }

    pub fn nuclear(lambda: f64) -> Result<Self> {
        Self::new(PriorKind::Nuclear, lambda)
    }

    /// Checks `λ > 0`, `0 < p < 1` and `0 ≤ γ < 1`. The tighter nominal GMC range
    /// `[0.5, 0.9]` is enforced by [`PriorSpec::validate_nominal`].
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.inner_iters == 0 {
            return Err(Error::invalid("inner_iters must be positive"));
        }
        match self.kind {
            PriorKind::Lp { p } if !(p > 0.0 && p < 1.0) => {
                Err(Error::invalid(format!("p must lie in (0, 1), got {p}")))
            }
            PriorKind::Gmc { gamma } if !(0.0..1.0).contains(&gamma) => {
                Err(Error::invalid(format!("gamma must lie in [0, 1), got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    pub fn validate_nominal(&self) -> Result<()> {
        self.validate()?;
        if let PriorKind::Gmc { gamma } = self.kind {
            if !(0.5..=0.9).contains(&gamma) {
                return Err(Error::invalid(format!("gamma must lie in [0.5, 0.9], got {gamma}")));
            }
        }
        Ok(())
    }

    /// `ψ(X)` for the convex and Lp priors. GMC has no closed form here; its
    /// L1 part is returned (the Huber part needs the forward operator).
    pub fn penalty(&self, x: &Array2<f64>) -> Result<f64> {
        Ok(match self.kind {
            PriorKind::Gmc { .. } | PriorKind::L1 => x.iter().map(|v| v.abs()).sum(),
            PriorKind::Lp { p } => x.iter().map(|v| v.abs().powf(p)).sum(),
            PriorKind::Tv => tv_norm(x),
            PriorKind::Nuclear => nuclear_norm(x)?,
        })
    }
}

/// `sign(u) * max(|u| - t, 0)` without argument checks.
#[inline]
pub(crate) fn soft(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

/// Soft thresholding, the proximal operator of `t |·|`.
pub fn soft_threshold(u: f64, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::invalid(format!("negative threshold {t}")));
    }
    Ok(soft(u, t))
}

/// Elementwise soft threshold of a grid.
pub fn soft_threshold_grid(u: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
    soft_threshold(0.0, t)?;
    Ok(u.mapv(|v| soft(v, t)))
}

/// Huber function: `t²/2` for `|t| ≤ 1`, `|t| - 1/2` beyond.
pub fn huber(t: f64) -> f64 {
    if t.abs() <= 1.0 {
        0.5 * t * t
    } else {
        t.abs() - 0.5
    }
}

/// Univariate minimax-concave penalty `|t| - huber(t)`.
pub fn mc_penalty(t: f64) -> f64 {
    if t.abs() <= 1.0 {
        t.abs() - 0.5 * t * t
    } else {
        0.5
    }
}

/// Implicit scaling matrix `B = sqrt(γ / λ₁) C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingMatrixSpec {
    pub gamma: f64,
    pub lambda: f64,
}

impl ScalingMatrixSpec {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
        }
        Ok(Self { gamma, lambda })
    }

    pub fn factor(&self) -> f64 {
        (self.gamma / self.lambda).sqrt()
    }
}

/// Result of a numerical generalised-Huber evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberValue {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `S_B(t) = inf_v ‖v‖₁ + ½‖B(t - v)‖²` with `B = sqrt(γ/λ) C`, evaluated by
/// accelerated proximal gradient on `v` (started at `v = t`, best value kept).
/// Stops when the relative objective change falls below `tol`.
pub fn generalized_huber_with_tol<A: LinearOperator + ?Sized>(
    t: &[f64],
    op: &A,
    scale: ScalingMatrixSpec,
    inner_iters: usize,
    tol: f64,
) -> Result<HuberValue> {
    if t.len() != op.input_len() {
        return Err(Error::DimensionMismatch(format!("t has {} entries, operator expects {}", t.len(), op.input_len())));
    }
    let s2 = scale.gamma / scale.lambda;
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    if s2 == 0.0 || t.iter().all(|&x| x == 0.0) {
        return Ok(HuberValue { value: 0.0, iterations: 0, converged: true });
    }
    let lipschitz = s2 * op.norm_sq_estimate();
    let step = 1.0 / lipschitz;
    let n = t.len();
    let mut image = vec![0.0; op.output_len()];
    let mut grad = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let objective = |v: &[f64], diff: &mut [f64], image: &mut [f64]| {
        for ((d, a), b) in diff.iter_mut().zip(t).zip(v) {
            *d = a - b;
        }
        op.apply(diff, image);
        l1(v) + 0.5 * s2 * dot(image, image)
    };

    let mut x = t.to_vec();
    let mut x_prev = x.clone();
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut best = l1(t);
    let mut prev_obj = best;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=inner_iters {
        iterations = it;
        // gradient of ½ s²‖C(t - y)‖² with respect to y is -s² Cᵀ C (t - y)
        for ((d, a), b) in diff.iter_mut().zip(t).zip(&y) {
            *d = a - b;
        }
        op.apply(&diff, &mut image);
        op.apply_adjoint(&image, &mut grad);
        x_prev.copy_from_slice(&x);
        for ((xi, yi), gi) in x.iter_mut().zip(&y).zip(&grad) {
            *xi = soft(yi + step * s2 * gi, step);
        }
        let obj = objective(&x, &mut diff, &mut image);
        best = best.min(obj);
        // restart momentum when the objective goes up
        if obj > prev_obj {
            momentum = 1.0;
            y.copy_from_slice(&x);
        } else {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next;
            for ((yi, xi), pi) in y.iter_mut().zip(&x).zip(&x_prev) {
                *yi = xi + beta * (xi - pi);
            }
            momentum = next;
        }
        let rel = (prev_obj - obj).abs() / prev_obj.abs().max(f64::MIN_POSITIVE);
        let moved = norm(&x.iter().zip(&x_prev).map(|(a, b)| a - b).collect::<Vec<_>>());
        prev_obj = obj;
        if rel < tol && moved <= tol.sqrt() * norm(&x).max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(HuberValue { value: best, iterations, converged })
}

/// Generalised Huber function with the default `1e-6` relative stopping tolerance.
pub fn generalized_huber<A: LinearOperator + ?Sized>(
    t: &[f64],
    op: &A,
    scale: ScalingMatrixSpec,
    inner_iters: usize,
) -> Result<HuberValue> {
    generalized_huber_with_tol(t, op, scale, inner_iters, 1e-6)
}

/// Threshold below which the GST prox of `λ|x|^p` returns zero.
pub fn gst_threshold(lambda: f64, p: f64) -> f64 {
    let base = 2.0 * lambda * (1.0 - p);
    base.powf(1.0 / (2.0 - p)) + lambda * p * base.powf((p - 1.0) / (2.0 - p))
}

/// Generalised soft thresholding for `min_x ½(x - u)² + λ|x|^p`.
pub fn gst_prox_lp(u: f64, lambda: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p must lie in (0, 1), got {p}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(gst(u, lambda, p, gst_threshold(lambda, p)))
}

#[inline]
fn gst(u: f64, lambda: f64, p: f64, tau: f64) -> f64 {
    let a = u.abs();
    if a <= tau {
        return 0.0;
    }
    let mut x = a;
    for _ in 0..50 {
        let next = a - lambda * p * x.powf(p - 1.0);
        let done = (next - x).abs() < 1e-8;
        x = next;
        if done {
            break;
        }
    }
    x.copysign(u)
}

/// Anisotropic total variation `Σ |∂x| + |∂y|` with forward differences.
pub fn tv_norm(u: &Array2<f64>) -> f64 {
    let (m, n) = u.dim();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            if j + 1 < n {
                total += (u[(i, j + 1)] - u[(i, j)]).abs();
            }
            if i + 1 < m {
                total += (u[(i + 1, j)] - u[(i, j)]).abs();
            }
        }
    }
    total
}

/// Objective `½‖z - u‖² + λ TV(z)`.
pub fn tv_objective(z: &Array2<f64>, u: &Array2<f64>, lambda: f64) -> f64 {
    0.5 * (z - u).mapv(|d| d * d).sum() + lambda * tv_norm(z)
}

fn divergence(px: &Array2<f64>, py: &Array2<f64>, out: &mut Array2<f64>) {
    let (m, n) = px.dim();
    for i in 0..m {
        for j in 0..n {
            let mut d = 0.0;
            if j + 1 < n {
                d += px[(i, j)];
            }
            if j > 0 {
                d -= px[(i, j - 1)];
            }
            if i + 1 < m {
                d += py[(i, j)];
            }
            if i > 0 {
                d -= py[(i - 1, j)];
            }
            out[(i, j)] = d;
        }
    }
}

/// TV denoising `argmin_z ½‖z - u‖² + λ TV(z)` by projected gradient on the
/// dual (Chambolle) with step 1/8 and Nesterov momentum, stopping when a
/// dual step moves less than `1e-5`.
pub fn tv_prox(u: &Array2<f64>, lambda: f64, inner_iters: usize) -> Array2<f64> {
    if lambda <= 0.0 {
        return u.clone();
    }
    let (m, n) = u.dim();
    let tau = 0.125;
    let mut px = Array2::<f64>::zeros((m, n));
    let mut py = Array2::<f64>::zeros((m, n));
    // extrapolated dual point
    let mut qx = px.clone();
    let mut qy = py.clone();
    let mut div = Array2::<f64>::zeros((m, n));
    let mut field = Array2::<f64>::zeros((m, n));
    let mut momentum = 1.0_f64;
    for _ in 0..inner_iters {
        divergence(&qx, &qy, &mut div);
        // field = div q + u / λ
        ndarray::Zip::from(&mut field).and(&div).and(u).for_each(|f, &d, &v| *f = d + v / lambda);
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next;
        momentum = next;
        let mut change = 0.0_f64;
        for i in 0..m {
            for j in 0..n {
                let gx = if j + 1 < n { field[(i, j + 1)] - field[(i, j)] } else { 0.0 };
                let gy = if i + 1 < m { field[(i + 1, j)] - field[(i, j)] } else { 0.0 };
                let nx = (qx[(i, j)] + tau * gx).clamp(-1.0, 1.0);
                let ny = (qy[(i, j)] + tau * gy).clamp(-1.0, 1.0);
                let (ox, oy) = (px[(i, j)], py[(i, j)]);
                // residual of the projected step taken from the extrapolated point
                change = change.max((nx - qx[(i, j)]).abs()).max((ny - qy[(i, j)]).abs());
                px[(i, j)] = nx;
                py[(i, j)] = ny;
                qx[(i, j)] = nx + beta * (nx - ox);
                qy[(i, j)] = ny + beta * (ny - oy);
            }
        }
        if change < 1e-5 {
            break;
        }
    }
    divergence(&px, &py, &mut div);
    u + &(div * lambda)
}

fn to_matrix(u: &Array2<f64>) -> DMatrix<f64> {
    let (m, n) = u.dim();
    DMatrix::from_fn(m, n, |i, j| u[(i, j)])
}

fn singular_values(u: &Array2<f64>) -> Result<nalgebra::DVector<f64>> {
    to_matrix(u)
        .try_svd(false, false, 1e-14, 10_000)
        .map(|svd| svd.singular_values)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))
}

/// Sum of singular values.
pub fn nuclear_norm(u: &Array2<f64>) -> Result<f64> {
    Ok(singular_values(u)?.sum())
}

/// Singular value soft thresholding, the prox of `λ‖·‖_*`.
pub fn nuclear_prox(u: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    if lambda == 0.0 {
        return Ok(u.clone());
    }
    let svd = to_matrix(u)
        .try_svd(true, true, 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge on a degenerate input".into()))?;
    let (uu, vt) = match (svd.u, svd.v_t) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Numerical("SVD factors missing".into())),
    };
    let shrunk = svd.singular_values.map(|s| (s - lambda).max(0.0));
    let recon = uu * DMatrix::from_diagonal(&shrunk) * vt;
    let (m, n) = u.dim();
    Ok(Array2::from_shape_fn((m, n), |(i, j)| recon[(i, j)]))
}

/// Shrinkage / denoising step used by TwIST, at threshold `lambda`.
///
/// L1 and Lp use the rescaled shrink `|prox(u)| / (|prox(u)| + λ) · u`
/// (for L1 this equals plain soft thresholding); TV and nuclear return their prox.
pub fn twist_gamma_at(u: &Array2<f64>, spec: &PriorSpec, lambda: f64) -> Result<Array2<f64>> {
    let rescale = |v: f64, shrunk: f64| {
        let a = shrunk.abs();
        if a == 0.0 {
            0.0
        } else {
            a / (a + lambda) * v
        }
    };
    match spec.kind {
        PriorKind::L1 => Ok(u.mapv(|v| rescale(v, soft(v, lambda)))),
        PriorKind::Lp { p } => {
            let tau = gst_threshold(lambda, p);
            Ok(u.mapv(|v| rescale(v, gst(v, lambda, p, tau))))
        }
        PriorKind::Tv => Ok(tv_prox(u, lambda, spec.inner_iters)),
        PriorKind::Nuclear => nuclear_prox(u, lambda),
        PriorKind::Gmc { .. } => Err(Error::invalid("GMC is solved by forward-backward, not TwIST")),
    }
}

/// [`twist_gamma_at`] with the prior's own `λ`.
pub fn twist_gamma(u: &Array2<f64>, spec: &PriorSpec) -> Result<Array2<f64>> {
    twist_gamma_at(u, spec, spec.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::DenseOperator;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0).unwrap(), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-2.5, 0.0).unwrap(), -2.5);
        assert!(soft_threshold(1.0, -0.1).is_err());
    }

    #[test]
    fn mc_penalty_branches() {
        assert_eq!(mc_penalty(0.0), 0.0);
        assert_eq!(mc_penalty(1.0), 0.5);
        assert_eq!(mc_penalty(2.0), 0.5);
        assert_eq!(mc_penalty(-0.5), 0.375);
    }

    #[test]
    fn gst_rejects_bad_p() {
        assert!(gst_prox_lp(1.0, 1.0, 1.0).is_err());
        assert!(gst_prox_lp(1.0, 1.0, 0.0).is_err());
        assert_eq!(gst_prox_lp(0.0, 1.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn prior_validation() {
        assert!(PriorSpec::l1(0.0).is_err());
        assert!(PriorSpec::lp(1.0, 1.2).is_err());
        assert!(PriorSpec::gmc(1.0, 1.0).is_err());
        assert!(PriorSpec::gmc(1.0, 0.0).is_ok());
        assert!(PriorSpec::gmc(1.0, 0.3).unwrap().validate_nominal().is_err());
        assert!(PriorSpec::gmc(1.0, 0.6).unwrap().validate_nominal().is_ok());
    }

    #[test]
    fn prior_spec_json_shape() {
        let spec = PriorSpec::lp(0.5, 0.2).unwrap();
        let json = serde_json::to_value(spec).unwrap();
        assert_eq!(json["kind"], "lp");
        assert_eq!(json["p"], 0.2);
        let back: PriorSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn twist_gamma_l1_examples() {
        let spec = PriorSpec::l1(1.0).unwrap();
        let u = Array2::from_elem((1, 1), 3.0);
        // |soft(3, 1)| = 2, so Γ = 2 / (2 + 1) * 3
        assert_eq!(twist_gamma(&u, &spec).unwrap()[(0, 0)], 2.0 / 3.0 * 3.0);
        let zero = Array2::zeros((3, 4));
        assert_eq!(twist_gamma(&zero, &spec).unwrap(), zero);
        assert!(twist_gamma(&zero, &PriorSpec::gmc(1.0, 0.6).unwrap()).is_err());
    }

    #[test]
    fn twist_gamma_tv_is_tv_prox() {
        let spec = PriorSpec::tv(0.3).unwrap();
        let u = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        assert_eq!(twist_gamma(&u, &spec).unwrap(), tv_prox(&u, 0.3, spec.inner_iters));
    }

    #[test]
    fn tv_prox_trivial_cases() {
        let c = Array2::from_elem((5, 7), 2.5);
        assert_eq!(tv_prox(&c, 3.0, 40), c);
        let u = Array2::from_shape_fn((4, 4), |(i, j)| (i * j) as f64);
        assert_eq!(tv_prox(&u, 0.0, 40), u);
    }

    #[test]
    fn nuclear_prox_diagonal() {
        let mut u = Array2::zeros((2, 2));
        u[(0, 0)] = 3.0;
        u[(1, 1)] = 1.0;
        let z = nuclear_prox(&u, 2.0).unwrap();
        assert!((z[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(z[(1, 1)].abs() < 1e-12);
        assert!(z[(0, 1)].abs() < 1e-12 && z[(1, 0)].abs() < 1e-12);
        assert_eq!(nuclear_prox(&u, 0.0).unwrap(), u);
    }

    #[test]
    fn generalized_huber_trivial_cases() {
        let op = DenseOperator::new(3, 2, vec![1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let zero = generalized_huber(&[0.0, 0.0], &op, ScalingMatrixSpec::new(0.6, 1.0).unwrap(), 100).unwrap();
        assert_eq!(zero.value, 0.0);
        let b0 = generalized_huber(&[1.0, -2.0], &op, ScalingMatrixSpec::new(0.0, 1.0).unwrap(), 100).unwrap();
        assert_eq!(b0.value, 0.0);
        assert!(generalized_huber(&[1.0], &op, ScalingMatrixSpec::new(0.5, 1.0).unwrap(), 10).is_err());
    }

    proptest! {
        #[test]
        fn soft_threshold_is_nonexpansive(a in -10.0..10.0f64, b in -10.0..10.0f64, t in 0.0..5.0f64) {
            prop_assert!((soft(a, t) - soft(b, t)).abs() <= (a - b).abs() + 1e-12);
        }

        #[test]
        fn gst_is_odd_and_monotone(a in -6.0..6.0f64, b in -6.0..6.0f64, lambda in 0.05..2.0f64, p in 0.05..0.95f64) {
            let ga = gst_prox_lp(a, lambda, p).unwrap();
            prop_assert_eq!(gst_prox_lp(-a, lambda, p).unwrap(), -ga);
            let gb = gst_prox_lp(b, lambda, p).unwrap();
            if a <= b {
                prop_assert!(ga <= gb + 1e-9);
            }
        }

        #[test]
        fn mc_penalty_is_l1_minus_huber(t in -4.0..4.0f64) {
            prop_assert!((mc_penalty(t) - (t.abs() - huber(t))).abs() < 1e-12);
            let h = 1e-6;
            prop_assert!((mc_penalty(t + h) - mc_penalty(t)).abs() <= h * (1.0 + 1e-9));
        }
    }
}
