//! Linear degradation operators and their structure metadata.
//!
//! Convolution uses circular boundaries so the Gram matrix stays circulant;
//! the Hadamard operator is the Paley (dyadic) ordered Walsh-Hadamard
//! transform applied separably over image rows and columns, normalized so
//! the full transform is orthonormal.

use crate::error::{EpError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// 2-D convolution kernel, stored row-major with an explicit center tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    pub data: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

impl Kernel2D {
    pub fn new(data: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(EpError::InvalidArgument(format!(
                "kernel data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { data, height, width })
    }

    /// Uniform blur kernel normalized to sum one.
    pub fn uniform(size: usize) -> Self {
        let n = size * size;
        Self {
            data: vec![1.0 / n as f64; n],
            height: size,
            width: size,
        }
    }

    fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }
}

/// Linear forward operator `H` mapping an `H x W` image to `M` observations.
#[derive(Clone)]
pub enum ForwardOp {
    Identity { height: usize, width: usize },
    Conv2D(Conv2DOp),
    GaussianIid(GaussianIidOp),
    Hadamard(HadamardOp),
}

impl std::fmt::Debug for ForwardOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForwardOp::Identity { height, width } => {
                write!(f, "Identity({height}x{width})")
            }
            ForwardOp::Conv2D(op) => write!(
                f,
                "Conv2D({}x{}, kernel {}x{})",
                op.height, op.width, op.kernel.height, op.kernel.width
            ),
            ForwardOp::GaussianIid(op) => write!(
                f,
                "GaussianIid({}x{}, m={}, seed={})",
                op.height, op.width, op.rows, op.seed
            ),
            ForwardOp::Hadamard(op) => write!(
                f,
                "Hadamard({}x{}, m={}, seed={})",
                op.height, op.width, op.selected.len(), op.seed
            ),
        }
    }
}

impl ForwardOp {
    pub fn identity(height: usize, width: usize) -> Self {
        ForwardOp::Identity { height, width }
    }

    pub fn conv2d(height: usize, width: usize, kernel: Kernel2D) -> Result<Self> {
        Ok(ForwardOp::Conv2D(Conv2DOp::new(height, width, kernel)?))
    }

    pub fn gaussian_iid(height: usize, width: usize, rows: usize, seed: u64) -> Result<Self> {
        Ok(ForwardOp::GaussianIid(GaussianIidOp::new(
            height, width, rows, seed,
        )?))
    }

    pub fn hadamard(height: usize, width: usize, rows: usize, seed: u64) -> Result<Self> {
        Ok(ForwardOp::Hadamard(HadamardOp::new(height, width, rows, seed)?))
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            ForwardOp::Identity { height, width } => (*height, *width),
            ForwardOp::Conv2D(op) => (op.height, op.width),
            ForwardOp::GaussianIid(op) => (op.height, op.width),
            ForwardOp::Hadamard(op) => (op.height, op.width),
        }
    }

    pub fn input_len(&self) -> usize {
        let (h, w) = self.dims();
        h * w
    }

    pub fn output_len(&self) -> usize {
        match self {
            ForwardOp::Identity { .. } | ForwardOp::Conv2D(_) => self.input_len(),
            ForwardOp::GaussianIid(op) => op.rows,
            ForwardOp::Hadamard(op) => op.selected.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ForwardOp::Identity { .. } => "identity",
            ForwardOp::Conv2D(_) => "conv2d",
            ForwardOp::GaussianIid(_) => "gaussian_iid",
            ForwardOp::Hadamard(_) => "hadamard",
        }
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        Ok(match self {
            ForwardOp::Identity { .. } => x.to_vec(),
            ForwardOp::Conv2D(op) => op.convolve(x, false),
            ForwardOp::GaussianIid(op) => op.apply(x),
            ForwardOp::Hadamard(op) => op.apply(x),
        })
    }

    /// `x = Hᵀ y`.
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_len() {
            return Err(EpError::DimensionMismatch(format!(
                "adjoint: got {} observations, operator emits {}",
                y.len(),
                self.output_len()
            )));
        }
        Ok(match self {
            ForwardOp::Identity { .. } => y.to_vec(),
            ForwardOp::Conv2D(op) => op.convolve(y, true),
            ForwardOp::GaussianIid(op) => op.adjoint(y),
            ForwardOp::Hadamard(op) => op.adjoint(y),
        })
    }

    /// `HᵀH x`, using the circulant fast path for convolutions.
    pub fn gram_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        match self {
            ForwardOp::Identity { .. } => Ok(x.to_vec()),
            ForwardOp::Conv2D(op) => Ok(op.gram(x)),
            _ => {
                let y = self.apply(x)?;
                self.adjoint(&y)
            }
        }
    }

    /// `diag(HᵀH)` when the Gram matrix itself is diagonal, else `None`.
    pub fn gram_diagonal(&self) -> Option<Vec<f64>> {
        match self {
            ForwardOp::Identity { .. } => Some(vec![1.0; self.input_len()]),
            _ => None,
        }
    }

    /// Exact diagonal of `HᵀH` for any operator kind (the Gram matrix itself
    /// need not be diagonal); used by the Monte Carlo variance estimator.
    pub fn gram_diag_entries(&self) -> Vec<f64> {
        let n = self.input_len();
        match self {
            ForwardOp::Identity { .. } => vec![1.0; n],
            ForwardOp::Conv2D(op) => {
                let sq: f64 = op.kernel.data.iter().map(|k| k * k).sum();
                vec![sq; n]
            }
            ForwardOp::GaussianIid(op) => {
                let mut d = vec![0.0; n];
                for r in 0..op.rows {
                    let row = op.row(r);
                    for (di, &v) in d.iter_mut().zip(row) {
                        *di += v * v;
                    }
                }
                d
            }
            ForwardOp::Hadamard(op) => {
                vec![op.selected.len() as f64 / n as f64; n]
            }
        }
    }

    /// Power spectrum of `HᵀH` for circulant operators (used to build the
    /// conjugate-gradient preconditioner).
    pub fn circulant_gram_spectrum(&self) -> Option<&[f64]> {
        match self {
            ForwardOp::Conv2D(op) => Some(&op.power_spectrum),
            _ => None,
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_len() {
            return Err(EpError::DimensionMismatch(format!(
                "operator expects {} pixels, got {len}",
                self.input_len()
            )));
        }
        Ok(())
    }
}

/// Circular 2-D convolution evaluated through the FFT.
#[derive(Clone)]
pub struct Conv2DOp {
    pub height: usize,
    pub width: usize,
    pub kernel: Kernel2D,
    spectrum: Vec<Complex64>,
    power_spectrum: Vec<f64>,
    fft_row: Arc<dyn Fft<f64>>,
    ifft_row: Arc<dyn Fft<f64>>,
    fft_col: Arc<dyn Fft<f64>>,
    ifft_col: Arc<dyn Fft<f64>>,
}

impl Conv2DOp {
    fn new(height: usize, width: usize, kernel: Kernel2D) -> Result<Self> {
        if kernel.height > height || kernel.width > width {
            return Err(EpError::InvalidArgument(
                "kernel larger than image".to_string(),
            ));
        }
        let mut planner = FftPlanner::new();
        let fft_row = planner.plan_fft_forward(width);
        let ifft_row = planner.plan_fft_inverse(width);
        let fft_col = planner.plan_fft_forward(height);
        let ifft_col = planner.plan_fft_inverse(height);

        // Point-spread image with the kernel center wrapped to the origin.
        let (cy, cx) = kernel.center();
        let mut psf = vec![Complex64::new(0.0, 0.0); height * width];
        for a in 0..kernel.height {
            for b in 0..kernel.width {
                let r = (a + height - cy) % height;
                let c = (b + width - cx) % width;
                psf[r * width + c] += Complex64::new(kernel.data[a * kernel.width + b], 0.0);
            }
        }
        fft2_inplace(&mut psf, height, width, &fft_row, &fft_col);
        let power_spectrum = psf.iter().map(|s| s.norm_sqr()).collect();
        Ok(Self {
            height,
            width,
            kernel,
            spectrum: psf,
            power_spectrum,
            fft_row,
            ifft_row,
            fft_col,
            ifft_col,
        })
    }

    fn convolve(&self, x: &[f64], adjoint: bool) -> Vec<f64> {
        self.filter(x, |buf, spec| {
            for (b, s) in buf.iter_mut().zip(spec) {
                *b *= if adjoint { s.conj() } else { *s };
            }
        })
    }

    fn gram(&self, x: &[f64]) -> Vec<f64> {
        let power = &self.power_spectrum;
        self.filter(x, |buf, _| {
            for (b, p) in buf.iter_mut().zip(power) {
                *b *= p;
            }
        })
    }

    /// Solve `(alpha HᵀH + beta I) z = rhs` exactly in the Fourier domain.
    pub fn circulant_solve(&self, rhs: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
        let power = &self.power_spectrum;
        self.filter(rhs, |buf, _| {
            for (b, p) in buf.iter_mut().zip(power) {
                *b /= alpha * p + beta;
            }
        })
    }

    fn filter(
        &self,
        x: &[f64],
        mul: impl Fn(&mut [Complex64], &[Complex64]),
    ) -> Vec<f64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2_inplace(&mut buf, self.height, self.width, &self.fft_row, &self.fft_col);
        mul(&mut buf, &self.spectrum);
        fft2_inplace(&mut buf, self.height, self.width, &self.ifft_row, &self.ifft_col);
        let scale = 1.0 / (self.height * self.width) as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }
}

fn fft2_inplace(
    buf: &mut [Complex64],
    height: usize,
    width: usize,
    row_fft: &Arc<dyn Fft<f64>>,
    col_fft: &Arc<dyn Fft<f64>>,
) {
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            col[r] = buf[r * width + c];
        }
        col_fft.process(&mut col);
        for r in 0..height {
            buf[r * width + c] = col[r];
        }
    }
}

/// Dense sensing matrix with N(0, 1/M) entries, generated deterministically
/// from (seed, row index).
#[derive(Clone)]
pub struct GaussianIidOp {
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub seed: u64,
    matrix: Vec<f64>,
}

impl GaussianIidOp {
    fn new(height: usize, width: usize, rows: usize, seed: u64) -> Result<Self> {
        let n = height * width;
        if rows == 0 || rows > n {
            return Err(EpError::InvalidArgument(format!(
                "gaussian operator rows must satisfy 1 <= m <= {n}, got {rows}"
            )));
        }
        let scale = 1.0 / (rows as f64).sqrt();
        let mut matrix = vec![0.0; rows * n];
        for r in 0..rows {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            for v in &mut matrix[r * n..(r + 1) * n] {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = g * scale;
            }
        }
        Ok(Self {
            height,
            width,
            rows,
            seed,
            matrix,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.matrix[r * n..(r + 1) * n]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let n = self.height * self.width;
        let mut out = vec![0.0; n];
        for (r, &yr) in y.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v * yr;
            }
        }
        out
    }
}

/// Row-subsampled Paley-ordered 2-D Hadamard transform.
#[derive(Clone)]
pub struct HadamardOp {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Selected coefficient indices into the flattened transform output.
    pub selected: Vec<usize>,
}

impl HadamardOp {
    fn new(height: usize, width: usize, rows: usize, seed: u64) -> Result<Self> {
        if !height.is_power_of_two() || !width.is_power_of_two() {
            return Err(EpError::InvalidArgument(format!(
                "hadamard operator needs power-of-two dims, got {height}x{width}"
            )));
        }
        let n = height * width;
        if rows == 0 || rows > n {
            return Err(EpError::InvalidArgument(format!(
                "hadamard operator rows must satisfy 1 <= m <= {n}, got {rows}"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut selected = rand::seq::index::sample(&mut rng, n, rows).into_vec();
        selected.sort_unstable();
        Ok(Self {
            height,
            width,
            seed,
            selected,
        })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut t = x.to_vec();
        paley_2d(&mut t, self.height, self.width, false);
        self.selected.iter().map(|&i| t[i]).collect()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.height * self.width];
        for (&i, &v) in self.selected.iter().zip(y) {
            t[i] = v;
        }
        paley_2d(&mut t, self.height, self.width, true);
        t
    }
}

/// In-place fast Walsh-Hadamard transform in natural (Kronecker) order.
pub fn fwht_natural(v: &mut [f64]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let mut len = 1;
    while len < n {
        for block in v.chunks_exact_mut(2 * len) {
            let (a, b) = block.split_at_mut(len);
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let s = *x + *y;
                let d = *x - *y;
                *x = s;
                *y = d;
            }
        }
        len *= 2;
    }
}

fn bit_reverse_permute(v: &mut [f64]) {
    let n = v.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if i < j {
            v.swap(i, j);
        }
    }
}

/// Orthonormal 1-D Paley (dyadic) ordered Walsh-Hadamard transform.
/// `adjoint = true` applies the transpose.
pub fn paley_1d(v: &mut [f64], adjoint: bool) {
    let scale = 1.0 / (v.len() as f64).sqrt();
    if adjoint {
        bit_reverse_permute(v);
        fwht_natural(v);
    } else {
        fwht_natural(v);
        bit_reverse_permute(v);
    }
    for x in v.iter_mut() {
        *x *= scale;
    }
}

fn paley_2d(buf: &mut [f64], height: usize, width: usize, adjoint: bool) {
    for row in buf.chunks_exact_mut(width) {
        paley_1d(row, adjoint);
    }
    let mut col = vec![0.0; height];
    for c in 0..width {
        for r in 0..height {
            col[r] = buf[r * width + c];
        }
        paley_1d(&mut col, adjoint);
        for r in 0..height {
            buf[r * width + c] = col[r];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded_vec(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64) * 0.7 + phase).sin()).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn assert_adjoint(op: &ForwardOp, tol: f64) {
        let x = seeded_vec(op.input_len(), 0.3);
        let y = seeded_vec(op.output_len(), 1.1);
        let hx = op.apply(&x).unwrap();
        let hty = op.adjoint(&y).unwrap();
        let lhs = dot(&hx, &y);
        let rhs = dot(&x, &hty);
        assert!(
            (lhs - rhs).abs() <= tol * (1.0 + lhs.abs()),
            "adjoint identity failed for {op:?}: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn identity_roundtrip() {
        let op = ForwardOp::identity(3, 4);
        let x = seeded_vec(12, 0.0);
        assert_eq!(op.apply(&x).unwrap(), x);
        assert_eq!(op.adjoint(&x).unwrap(), x);
        assert_eq!(op.gram_diagonal().unwrap(), vec![1.0; 12]);
        assert_adjoint(&op, 1e-12);
    }

    #[test]
    fn conv_with_unit_kernel_is_identity() {
        let k = Kernel2D::new(vec![1.0], 1, 1).unwrap();
        let op = ForwardOp::conv2d(4, 4, k).unwrap();
        let x = seeded_vec(16, 0.5);
        let y = op.apply(&x).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_kernel_preserves_constants() {
        let op = ForwardOp::conv2d(16, 16, Kernel2D::uniform(9)).unwrap();
        let x = vec![7.5; 256];
        let y = op.apply(&x).unwrap();
        for v in y {
            assert!((v - 7.5).abs() < 1e-10);
        }
        assert!(op.gram_diagonal().is_none());
    }

    #[test]
    fn conv_adjoint_and_gram() {
        let op = ForwardOp::conv2d(8, 8, Kernel2D::uniform(3)).unwrap();
        assert_adjoint(&op, 1e-10);
        let x = seeded_vec(64, 0.2);
        let g1 = op.gram_apply(&x).unwrap();
        let hx = op.apply(&x).unwrap();
        let g2 = op.adjoint(&hx).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_entries_have_expected_scale_and_are_reproducible() {
        let op1 = ForwardOp::gaussian_iid(4, 4, 8, 7).unwrap();
        let op2 = ForwardOp::gaussian_iid(4, 4, 8, 7).unwrap();
        let x = seeded_vec(16, 0.9);
        assert_eq!(op1.apply(&x).unwrap(), op2.apply(&x).unwrap());
        assert_adjoint(&op1, 1e-10);
        if let (ForwardOp::GaussianIid(a), ForwardOp::GaussianIid(b)) = (&op1, &op2) {
            assert_eq!(a.row(3), b.row(3));
            let var: f64 = (0..8).map(|r| dot(a.row(r), a.row(r))).sum::<f64>() / 128.0;
            // entries ~ N(0, 1/8)
            assert!((var - 0.125).abs() < 0.05, "sample variance {var}");
        } else {
            panic!("wrong kind");
        }
    }

    #[test]
    fn gaussian_adjoint_matches_dense_transpose() {
        let op = ForwardOp::gaussian_iid(2, 4, 5, 11).unwrap();
        let y = seeded_vec(5, 0.1);
        let got = op.adjoint(&y).unwrap();
        if let ForwardOp::GaussianIid(g) = &op {
            for i in 0..8 {
                let want: f64 = (0..5).map(|r| g.row(r)[i] * y[r]).sum();
                assert!((got[i] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn paley_rows_match_textbook_4x4() {
        // Dyadic-ordered Walsh matrix for n=4.
        let want = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        for t in 0..4 {
            let mut e = vec![0.0; 4];
            e[t] = 1.0;
            paley_1d(&mut e, false);
            for k in 0..4 {
                assert!(
                    (e[k] - want[k][t] * 0.5).abs() < 1e-15,
                    "entry ({k},{t}) = {}",
                    e[k]
                );
            }
        }
    }

    #[test]
    fn full_hadamard_is_orthonormal() {
        let op = ForwardOp::hadamard(4, 4, 16, 3).unwrap();
        // m = n: HᵀH x = x
        let x = seeded_vec(16, 0.4);
        let g = op.gram_apply(&x).unwrap();
        for (a, b) in g.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn subsampled_hadamard_rows_are_orthonormal() {
        let op = ForwardOp::hadamard(4, 8, 12, 5).unwrap();
        assert_adjoint(&op, 1e-12);
        // H Hᵀ = I_M for orthonormal selected rows.
        for j in 0..12 {
            let mut e = vec![0.0; 12];
            e[j] = 1.0;
            let hty = op.adjoint(&e).unwrap();
            let hhty = op.apply(&hty).unwrap();
            for (i, v) in hhty.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hadamard_selection_is_seed_reproducible() {
        let a = ForwardOp::hadamard(8, 8, 20, 42).unwrap();
        let b = ForwardOp::hadamard(8, 8, 20, 42).unwrap();
        let c = ForwardOp::hadamard(8, 8, 20, 43).unwrap();
        if let (ForwardOp::Hadamard(a), ForwardOp::Hadamard(b), ForwardOp::Hadamard(c)) =
            (&a, &b, &c)
        {
            assert_eq!(a.selected, b.selected);
            assert_ne!(a.selected, c.selected);
            assert_eq!(a.selected.len(), 20);
        }
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(ForwardOp::hadamard(3, 4, 2, 0).is_err());
        assert!(ForwardOp::hadamard(4, 4, 0, 0).is_err());
        assert!(ForwardOp::hadamard(4, 4, 17, 0).is_err());
        assert!(ForwardOp::gaussian_iid(4, 4, 17, 0).is_err());
        let op = ForwardOp::identity(2, 2);
        assert!(op.apply(&[1.0]).is_err());
        assert!(op.adjoint(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn gram_diag_entries_match_definitions() {
        let op = ForwardOp::conv2d(8, 8, Kernel2D::uniform(3)).unwrap();
        let d = op.gram_diag_entries();
        assert!((d[0] - 9.0 * (1.0 / 81.0)).abs() < 1e-14);
        let op = ForwardOp::hadamard(4, 4, 8, 1).unwrap();
        assert!((op.gram_diag_entries()[0] - 0.5).abs() < 1e-14);
    }
}
