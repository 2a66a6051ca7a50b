//! The forward model `C` (masked filtered back-projection) seen as a linear
//! operator on flat buffers, with its exact adjoint and a cached norm estimate.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::transform::{AngleGrid, FbpFilter, Projector};

/// A real linear map `R^n -> R^m` with its transpose.
pub trait LinearOperator: Sync {
    /// Dimension of the domain (`n`).
    fn input_len(&self) -> usize;
    /// Dimension of the range (`m`).
    fn output_len(&self) -> usize;
    /// `y = A x`, overwriting `y`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `x = Aᵀ y`, overwriting `x`.
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]);

    /// Estimate of `‖AᵀA‖₂` by power iteration, inflated by 1% so it upper-bounds
    /// the true value in practice.
    fn norm_sq_estimate(&self) -> f64 {
        power_iteration(self, 60, 1e-7)
    }
}

pub(crate) fn power_iteration<A: LinearOperator + ?Sized>(op: &A, max_iter: usize, tol: f64) -> f64 {
    let n = op.input_len();
    // fixed, sign-varying start so the estimate is reproducible
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 31) as f64 / 31.0 - 0.5).collect();
    let mut y = vec![0.0; op.output_len()];
    let mut z = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let nx = norm(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        op.apply(&x, &mut y);
        op.apply_adjoint(&y, &mut z);
        let next = dot(&x, &z);
        std::mem::swap(&mut x, &mut z);
        if (next - estimate).abs() <= tol * next.abs() {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate * 1.01
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `C`: sinogram -> image, `mask ⊙ FBP(x)`.
#[derive(Debug, Clone)]
pub struct FbpOperator {
    projector: Arc<Projector>,
    filter: FbpFilter,
    mask: Option<Vec<f64>>,
}

impl FbpOperator {
    pub fn new(projector: Arc<Projector>, filter: FbpFilter) -> Self {
        Self { projector, filter, mask: None }
    }

    /// Restricts the range to pixels where `mask` is true (row-major).
    pub fn with_mask(mut self, mask: Option<&ndarray::Array2<bool>>) -> Self {
        self.mask = mask.map(|m| m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
        self
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn filter(&self) -> FbpFilter {
        self.filter
    }

    /// Norm estimate of the unmasked operator, shared across all operators of
    /// the same geometry. Masking can only shrink the norm, so this is a valid bound.
    pub fn shared_norm_sq(&self) -> f64 {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize, usize, u64), f64>>> = OnceLock::new();
        let p = &self.projector;
        let key = (p.size(), p.offsets(), p.grid().count(), self.filter.cutoff.to_bits());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(v) = cache.lock().expect("norm cache").get(&key) {
            return *v;
        }
        let unmasked = FbpOperator::new(self.projector.clone(), self.filter);
        let v = unmasked.norm_sq_estimate();
        cache.lock().expect("norm cache").insert(key, v);
        v
    }
}

impl LinearOperator for FbpOperator {
    fn input_len(&self) -> usize {
        self.projector.sino_len()
    }

    fn output_len(&self) -> usize {
        self.projector.image_len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.projector.fbp_into(x, &self.filter, y);
        if let Some(m) = &self.mask {
            y.iter_mut().zip(m).for_each(|(v, w)| *v *= w);
        }
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        match &self.mask {
            Some(m) => {
                let masked: Vec<f64> = y.iter().zip(m).map(|(v, w)| v * w).collect();
                self.projector.fbp_adjoint_into(&masked, &self.filter, x);
            }
            None => self.projector.fbp_adjoint_into(y, &self.filter, x),
        }
    }
}

/// Shared projector for a geometry, built once per process.
pub fn shared_projector(size: usize, grid: AngleGrid) -> Arc<Projector> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Projector>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().expect("projector cache");
    guard
        .entry((size, grid.count()))
        .or_insert_with(|| Arc::new(Projector::new(size, grid)))
        .clone()
}

/// A dense matrix operator, handy for small test problems.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    /// Row-major `rows x cols` matrix.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }
}

impl LinearOperator for DenseOperator {
    fn input_len(&self) -> usize {
        self.cols
    }

    fn output_len(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = dot(&self.data[r * self.cols..(r + 1) * self.cols], x);
        }
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        for (r, &w) in y.iter().enumerate() {
            for (xi, a) in x.iter_mut().zip(&self.data[r * self.cols..(r + 1) * self.cols]) {
                *xi += a * w;
            }
        }
    }
}
