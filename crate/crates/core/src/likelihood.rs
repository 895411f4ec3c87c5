//! Gaussian likelihood site: exact tilted moments of
//! `N(x; cavity) * N(y; Hx, xi I)`.
//!
//! The tilted distribution is jointly Gaussian with precision
//! `A = HᵀH/xi + diag(1/c)`, so the mean is a linear solve and the only
//! difficulty is `diag(A⁻¹)`. Three strategies cover the operator kinds:
//! an exact per-pixel formula when the Gram matrix is diagonal, a Woodbury
//! identity in observation space when `M` is small enough to factorize an
//! `M x M` matrix, and a Rao-Blackwellized Monte Carlo estimator with
//! conjugate-gradient perturbation solves for the rest.

use crate::error::{EpError, Result};
use crate::forward::ForwardOp;
use crate::gaussian::DiagGaussian;
use ndarray::{Array1, Array2};
use ndarray_linalg::{Cholesky, SolveTriangular, UPLO};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Conjugate-gradient settings for the mean solve and the Monte Carlo
/// perturbation solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    /// Relative residual target `||Ax - b|| <= tol ||b||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 1000,
        }
    }
}

/// How `diag(A⁻¹)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceStrategy {
    /// Closed form; requires a diagonal Gram matrix (identity operator).
    ExactDiagonal,
    /// `M x M` Cholesky in observation space; exact for any dense-feasible
    /// operator with few observations.
    Woodbury,
    /// Rao-Blackwellized Monte Carlo with `samples` perturbation solves.
    Rbmc { samples: usize, seed: u64 },
}

impl VarianceStrategy {
    /// Default strategy for an operator: exact when the Gram matrix is
    /// diagonal, Woodbury for subsampling operators with `M <= N/2` whose
    /// `O(M^2 N)` triangular solves stay affordable, Monte Carlo otherwise.
    pub fn auto(op: &ForwardOp) -> Self {
        let m = op.output_len() as f64;
        let n = op.input_len() as f64;
        match op {
            ForwardOp::Identity { .. } => VarianceStrategy::ExactDiagonal,
            ForwardOp::GaussianIid(_) | ForwardOp::Hadamard(_)
                if 2.0 * m <= n && m * m * n <= 5e9 =>
            {
                VarianceStrategy::Woodbury
            }
            _ => VarianceStrategy::Rbmc {
                samples: 64,
                seed: 0,
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            VarianceStrategy::ExactDiagonal => "exact_diagonal",
            VarianceStrategy::Woodbury => "woodbury",
            VarianceStrategy::Rbmc { .. } => "rbmc",
        }
    }
}

/// Exact or estimated moments of the tilted distribution, plus solver
/// diagnostics.
#[derive(Debug, Clone)]
pub struct LikelihoodMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Conjugate-gradient iterations spent in this call (0 for direct paths).
    pub cg_iterations: usize,
}

/// Observation model `y = H x + N(0, xi I)`.
pub struct LikelihoodModel {
    pub op: ForwardOp,
    pub y: Vec<f64>,
    pub xi: f64,
}

impl LikelihoodModel {
    pub fn new(op: ForwardOp, y: Vec<f64>, xi: f64) -> Result<Self> {
        if y.len() != op.output_len() {
            return Err(EpError::DimensionMismatch(format!(
                "observation length {} does not match operator output {}",
                y.len(),
                op.output_len()
            )));
        }
        if !(xi > 0.0) || !xi.is_finite() {
            return Err(EpError::InvalidArgument(format!(
                "noise variance must be positive and finite, got {xi}"
            )));
        }
        Ok(Self { op, y, xi })
    }

    /// Moments of `N(x; cavity) * N(y; Hx, xi I)`.
    ///
    /// `warm_start` seeds the mean solve (typically the previous global
    /// mean); `stream` decorrelates Monte Carlo noise across calls while
    /// keeping runs reproducible.
    pub fn posterior_moments(
        &self,
        cavity: &DiagGaussian,
        strategy: &VarianceStrategy,
        cg: &CgConfig,
        warm_start: Option<&[f64]>,
        stream: u64,
    ) -> Result<LikelihoodMoments> {
        let n = self.op.input_len();
        if cavity.len() != n {
            return Err(EpError::DimensionMismatch(format!(
                "cavity has {} coordinates, operator expects {n}",
                cavity.len()
            )));
        }
        for (&m, &c) in cavity.mean.iter().zip(&cavity.var) {
            if !m.is_finite() || !(c > 0.0) {
                return Err(EpError::NonFinite(
                    "likelihood cavity has non-finite mean or non-positive variance"
                        .to_string(),
                ));
            }
        }
        match strategy {
            VarianceStrategy::ExactDiagonal => self.exact_diagonal(cavity),
            VarianceStrategy::Woodbury => self.woodbury(cavity),
            VarianceStrategy::Rbmc { samples, seed } => {
                self.rbmc(cavity, *samples, *seed, cg, warm_start, stream)
            }
        }
    }

    fn exact_diagonal(&self, cavity: &DiagGaussian) -> Result<LikelihoodMoments> {
        let diag = self.op.gram_diagonal().ok_or_else(|| {
            EpError::IncompatibleStrategy {
                strategy: "exact_diagonal".to_string(),
                operator: self.op.kind_name().to_string(),
            }
        })?;
        let hty = self.op.adjoint(&self.y)?;
        let n = self.op.input_len();
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        for i in 0..n {
            let prec = diag[i] / self.xi + 1.0 / cavity.var[i];
            var[i] = 1.0 / prec;
            mean[i] = var[i] * (hty[i] / self.xi + cavity.mean[i] / cavity.var[i]);
        }
        Ok(LikelihoodMoments {
            mean,
            var,
            cg_iterations: 0,
        })
    }

    /// Exact moments via `Sigma = C - C Hᵀ (xi I + H C Hᵀ)⁻¹ H C`, with the
    /// inner matrix factorized once and reused for the mean.
    fn woodbury(&self, cavity: &DiagGaussian) -> Result<LikelihoodMoments> {
        let rows = match &self.op {
            ForwardOp::GaussianIid(_) | ForwardOp::Hadamard(_) => materialize_rows(&self.op)?,
            _ => {
                return Err(EpError::IncompatibleStrategy {
                    strategy: "woodbury".to_string(),
                    operator: self.op.kind_name().to_string(),
                })
            }
        };
        let m = self.op.output_len();
        let n = self.op.input_len();
        let sqrt_c: Vec<f64> = cavity.var.iter().map(|c| c.sqrt()).collect();

        // B = H sqrt(C), G = xi I + B Bᵀ.
        let mut b = rows;
        for mut row in b.rows_mut() {
            for (v, s) in row.iter_mut().zip(&sqrt_c) {
                *v *= s;
            }
        }
        let mut g = b.dot(&b.t());
        for r in 0..m {
            g[(r, r)] += self.xi;
        }
        let l = g
            .cholesky(UPLO::Lower)
            .map_err(|e| EpError::Linalg(format!("woodbury cholesky failed: {e}")))?;
        drop(g);
        // K = L⁻¹ B; Sigma = sqrt(C)(I - KᵀK)sqrt(C).
        let k = l
            .solve_triangular(UPLO::Lower, ndarray_linalg::Diag::NonUnit, &b)
            .map_err(|e| EpError::Linalg(format!("woodbury triangular solve failed: {e}")))?;
        drop(b);

        let mut var = vec![0.0; n];
        for i in 0..n {
            let col_sq: f64 = k.column(i).iter().map(|v| v * v).sum();
            var[i] = (cavity.var[i] * (1.0 - col_sq)).max(f64::MIN_POSITIVE);
        }

        // mean = Sigma (Hᵀy/xi + C⁻¹ m) applied through the same factor.
        let hty = self.op.adjoint(&self.y)?;
        let t: Array1<f64> = (0..n)
            .map(|i| sqrt_c[i] * (hty[i] / self.xi + cavity.mean[i] / cavity.var[i]))
            .collect();
        let kt = k.dot(&t);
        let ktk = k.t().dot(&kt);
        let mean: Vec<f64> = (0..n).map(|i| sqrt_c[i] * (t[i] - ktk[i])).collect();
        Ok(LikelihoodMoments {
            mean,
            var,
            cg_iterations: 0,
        })
    }

    fn rbmc(
        &self,
        cavity: &DiagGaussian,
        samples: usize,
        seed: u64,
        cg: &CgConfig,
        warm_start: Option<&[f64]>,
        stream: u64,
    ) -> Result<LikelihoodMoments> {
        if samples < 2 {
            return Err(EpError::InvalidArgument(
                "rbmc needs at least 2 samples".to_string(),
            ));
        }
        let n = self.op.input_len();
        let m = self.op.output_len();
        let inv_c: Vec<f64> = cavity.var.iter().map(|c| 1.0 / c).collect();
        let solver = self.cg_solver(&inv_c);

        let hty = self.op.adjoint(&self.y)?;
        let b: Vec<f64> = (0..n)
            .map(|i| hty[i] / self.xi + cavity.mean[i] * inv_c[i])
            .collect();
        let (mean, mut iters) = solver.solve(&b, warm_start, cg)?;

        // diag(A) is exact; the conditional-mean fluctuation is estimated
        // from perturbation samples x ~ N(mean, A⁻¹).
        let gram_diag = self.op.gram_diag_entries();
        let a_diag: Vec<f64> = (0..n)
            .map(|i| gram_diag[i] / self.xi + inv_c[i])
            .collect();

        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream.wrapping_add(1));
        let sqrt_xi = self.xi.sqrt();
        let mut sum = vec![0.0; n];
        let mut sum_sq = vec![0.0; n];
        for _ in 0..samples {
            // w ~ N(0, A): Hᵀ z / sqrt(xi) + g / sqrt(c).
            let z: Vec<f64> = (0..m)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let mut w = self.op.adjoint(&z)?;
            for i in 0..n {
                let g: f64 = StandardNormal.sample(&mut rng);
                w[i] = w[i] / sqrt_xi + g * inv_c[i].sqrt();
            }
            let rhs: Vec<f64> = b.iter().zip(&w).map(|(a, b)| a + b).collect();
            let (x, it) = solver.solve(&rhs, Some(&mean), cg)?;
            iters += it;
            // Conditional mean of x_i given the rest under the unperturbed
            // posterior; only its fluctuation across samples enters.
            let ax = self.apply_a(&x, &inv_c)?;
            for i in 0..n {
                let cond = x[i] + (b[i] - ax[i]) / a_diag[i];
                sum[i] += cond;
                sum_sq[i] += cond * cond;
            }
        }
        let s = samples as f64;
        let var: Vec<f64> = (0..n)
            .map(|i| {
                let fluct = ((sum_sq[i] - sum[i] * sum[i] / s) / (s - 1.0)).max(0.0);
                1.0 / a_diag[i] + fluct
            })
            .collect();
        Ok(LikelihoodMoments {
            mean,
            var,
            cg_iterations: iters,
        })
    }

    fn apply_a(&self, x: &[f64], inv_c: &[f64]) -> Result<Vec<f64>> {
        let mut ax = self.op.gram_apply(x)?;
        for i in 0..x.len() {
            ax[i] = ax[i] / self.xi + x[i] * inv_c[i];
        }
        Ok(ax)
    }

    fn cg_solver<'a>(&'a self, inv_c: &'a [f64]) -> CgSolver<'a> {
        let precond = match &self.op {
            ForwardOp::Conv2D(conv) => {
                let mean_prec = inv_c.iter().sum::<f64>() / inv_c.len() as f64;
                Precond::Circulant {
                    conv,
                    alpha: 1.0 / self.xi,
                    beta: mean_prec,
                }
            }
            _ => {
                let gram_diag = self.op.gram_diag_entries();
                let d: Vec<f64> = gram_diag
                    .iter()
                    .zip(inv_c)
                    .map(|(g, ic)| 1.0 / (g / self.xi + ic))
                    .collect();
                Precond::Jacobi(d)
            }
        };
        CgSolver {
            model: self,
            inv_c,
            precond,
            dual_cache: std::cell::RefCell::new(None),
        }
    }
}

enum Precond<'a> {
    Jacobi(Vec<f64>),
    Circulant {
        conv: &'a crate::forward::Conv2DOp,
        alpha: f64,
        beta: f64,
    },
}

impl Precond<'_> {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Precond::Jacobi(d) => r.iter().zip(d).map(|(a, b)| a * b).collect(),
            Precond::Circulant { conv, alpha, beta } => conv.circulant_solve(r, *alpha, *beta),
        }
    }
}

struct CgSolver<'a> {
    model: &'a LikelihoodModel,
    inv_c: &'a [f64],
    precond: Precond<'a>,
    /// Last dual solution; later solves against the same matrix start here.
    dual_cache: std::cell::RefCell<Option<Vec<f64>>>,
}

impl CgSolver<'_> {
    /// Solve `A x = b` with `A = HᵀH/xi + C⁻¹`. Subsampling operators go
    /// through the M-dimensional dual system, everything else through
    /// preconditioned conjugate gradient in pixel space.
    fn solve(&self, b: &[f64], x0: Option<&[f64]>, cg: &CgConfig) -> Result<(Vec<f64>, usize)> {
        match &self.model.op {
            ForwardOp::GaussianIid(_) | ForwardOp::Hadamard(_) => self.solve_dual(b, cg),
            _ => self.solve_primal(b, x0, cg),
        }
    }

    /// Woodbury-style solve through the dual system
    /// `(xi I + H C Hᵀ) z = H C b`, then `x = C (b - Hᵀ z)`.
    ///
    /// The dual spectrum is bounded below by `xi`, so plain conjugate
    /// gradient converges even when the pixel-space system is dominated by
    /// the near-singular `HᵀH/xi` term.
    fn solve_dual(&self, b: &[f64], cg: &CgConfig) -> Result<(Vec<f64>, usize)> {
        let op = &self.model.op;
        let xi = self.model.xi;
        let n = b.len();
        let c: Vec<f64> = self.inv_c.iter().map(|ic| 1.0 / ic).collect();
        let cb: Vec<f64> = b.iter().zip(&c).map(|(bi, ci)| bi * ci).collect();
        let s = op.apply(&cb)?;
        let m = s.len();
        let g_apply = |z: &[f64]| -> Result<Vec<f64>> {
            let mut htz = op.adjoint(z)?;
            for (v, ci) in htz.iter_mut().zip(&c) {
                *v *= ci;
            }
            let mut gz = op.apply(&htz)?;
            for (g, zi) in gz.iter_mut().zip(z) {
                *g += xi * zi;
            }
            Ok(gz)
        };

        // Rows of a Gaussian operator weight the heterogeneous cavity
        // variances differently; a diagonal preconditioner absorbs that.
        // Hadamard rows all see the same average, so it would be a no-op.
        let inv_diag: Option<Vec<f64>> = match op {
            ForwardOp::GaussianIid(gop) => Some(
                (0..m)
                    .map(|r| {
                        let row = gop.row(r);
                        let d: f64 =
                            xi + row.iter().zip(&c).map(|(h, ci)| h * h * ci).sum::<f64>();
                        1.0 / d
                    })
                    .collect(),
            ),
            _ => None,
        };
        let precond = |r: &[f64]| -> Vec<f64> {
            match &inv_diag {
                Some(d) => r.iter().zip(d).map(|(a, b)| a * b).collect(),
                None => r.to_vec(),
            }
        };

        let norm_s = norm2(&s);
        let mut z = vec![0.0; m];
        let mut iter = 0;
        if norm_s > 0.0 {
            if let Some(z0) = self.dual_cache.borrow().as_ref() {
                z.copy_from_slice(z0);
            }
            let gz = g_apply(&z)?;
            let mut r: Vec<f64> = s.iter().zip(&gz).map(|(a, b)| a - b).collect();
            let mut zp = precond(&r);
            let mut p = zp.clone();
            let mut rz = dot(&r, &zp);
            let target = cg.tol * norm_s;
            let mut res = norm2(&r);
            while res > target {
                if iter >= cg.max_iter {
                    return Err(EpError::CgDidNotConverge {
                        iterations: iter,
                        residual: res / norm_s,
                    });
                }
                let gp = g_apply(&p)?;
                let alpha = rz / dot(&p, &gp);
                if !alpha.is_finite() {
                    return Err(EpError::NonFinite("cg step size diverged".to_string()));
                }
                for i in 0..m {
                    z[i] += alpha * p[i];
                    r[i] -= alpha * gp[i];
                }
                zp = precond(&r);
                let rz_new = dot(&r, &zp);
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..m {
                    p[i] = zp[i] + beta * p[i];
                }
                res = norm2(&r);
                iter += 1;
            }
        }
        *self.dual_cache.borrow_mut() = Some(z.clone());
        let htz = op.adjoint(&z)?;
        let x: Vec<f64> = (0..n).map(|i| c[i] * (b[i] - htz[i])).collect();
        Ok((x, iter))
    }

    fn solve_primal(&self, b: &[f64], x0: Option<&[f64]>, cg: &CgConfig) -> Result<(Vec<f64>, usize)> {
        let n = b.len();
        let norm_b = norm2(b);
        if norm_b == 0.0 {
            return Ok((vec![0.0; n], 0));
        }
        let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let ax = self.model.apply_a(&x, self.inv_c)?;
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let mut z = self.precond.apply(&r);
        let mut p = z.clone();
        let mut rz: f64 = dot(&r, &z);
        let target = cg.tol * norm_b;
        let mut res = norm2(&r);
        let mut iter = 0;
        while res > target {
            if iter >= cg.max_iter {
                return Err(EpError::CgDidNotConverge {
                    iterations: iter,
                    residual: res / norm_b,
                });
            }
            let ap = self.model.apply_a(&p, self.inv_c)?;
            let alpha = rz / dot(&p, &ap);
            if !alpha.is_finite() {
                return Err(EpError::NonFinite("cg step size diverged".to_string()));
            }
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            z = self.precond.apply(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            res = norm2(&r);
            iter += 1;
        }
        Ok((x, iter))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Materialize the operator as a dense `M x N` row matrix.
fn materialize_rows(op: &ForwardOp) -> Result<Array2<f64>> {
    let m = op.output_len();
    let n = op.input_len();
    match op {
        ForwardOp::GaussianIid(g) => {
            let mut rows = Array2::zeros((m, n));
            for r in 0..m {
                rows.row_mut(r).as_slice_mut().unwrap().copy_from_slice(g.row(r));
            }
            Ok(rows)
        }
        ForwardOp::Hadamard(_) => {
            // Row r of H is Hᵀ e_r, one fast transform per observation.
            let mut rows = Array2::zeros((m, n));
            let mut e = vec![0.0; m];
            for r in 0..m {
                e[r] = 1.0;
                let row = op.adjoint(&e)?;
                e[r] = 0.0;
                rows.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&row);
            }
            Ok(rows)
        }
        _ => Err(EpError::IncompatibleStrategy {
            strategy: "dense rows".to_string(),
            operator: op.kind_name().to_string(),
        }),
    }
}
