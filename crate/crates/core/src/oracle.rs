//! Slow, independent reference computations used to validate the fast
//! paths: adaptive quadrature for scalar tilted moments, grid and
//! mixture-enumeration posteriors for tiny denoising problems, and dense
//! materializations of the forward operators.
//!
//! Everything here favors transparency over speed and shares no arithmetic
//! with the production code beyond the model definitions themselves.

use crate::error::{EpError, Result};
use crate::forward::ForwardOp;
use crate::gaussian::DiagGaussian;
use crate::math::ln_add_exp;
use crate::partition::EdgePartition;
use crate::prior::{PriorSpec, TiltedMoments1D};

const LN_2PI: f64 = 1.837877066409345483560659472811;

// ---------------------------------------------------------------------------
// Scalar tilted moments by adaptive quadrature.

/// Log of the continuous part of the edge potential (the BG point mass is
/// handled analytically by the caller).
fn log_continuous(prior: &PriorSpec, u: f64) -> f64 {
    match prior {
        PriorSpec::L1Tv { lambda } => {
            if *lambda == 0.0 {
                0.0
            } else {
                lambda.ln() - std::f64::consts::LN_2 - lambda * u.abs()
            }
        }
        PriorSpec::Mog2 {
            omega,
            s1_sq,
            s2_sq,
        } => {
            let l1 = omega.ln() - 0.5 * (u * u / s1_sq + (2.0 * std::f64::consts::PI * s1_sq).ln());
            let l2 = (1.0 - omega).ln()
                - 0.5 * (u * u / s2_sq + (2.0 * std::f64::consts::PI * s2_sq).ln());
            ln_add_exp(l1, l2)
        }
        PriorSpec::Bg { omega, s_sq } => {
            omega.ln() - 0.5 * (u * u / s_sq + (2.0 * std::f64::consts::PI * s_sq).ln())
        }
    }
}

fn ln_gauss(u: f64, mean: f64, var: f64) -> f64 {
    let d = u - mean;
    -0.5 * (d * d / var + var.ln() + LN_2PI)
}

/// Segment boundaries bracketing every mode of the integrand.
fn breakpoints(prior: &PriorSpec, m: f64, c: f64) -> Vec<f64> {
    let s = c.sqrt();
    let lo = m.min(0.0) - 12.0 * s;
    let hi = m.max(0.0) + 12.0 * s;
    let mut pts = vec![lo, hi, 0.0];
    // Bracket a candidate mode at several scales so that narrow lobes of
    // the moment integrands (which vanish at the mode itself) still fall
    // inside segments short enough for the coarse scan to see them.
    let cluster = |mu: f64, sig: f64, pts: &mut Vec<f64>| {
        pts.push(mu);
        for k in [1.0, 2.0, 4.0, 10.0] {
            pts.push(mu - k * sig);
            pts.push(mu + k * sig);
        }
    };
    match prior {
        PriorSpec::L1Tv { lambda } => {
            cluster(m - lambda * c, s, &mut pts);
            cluster(m + lambda * c, s, &mut pts);
            if *lambda > 0.0 {
                cluster(0.0, 1.0 / lambda, &mut pts);
            }
        }
        PriorSpec::Mog2 {
            s1_sq, s2_sq, ..
        } => {
            for &v in &[*s1_sq, *s2_sq] {
                let mu = m * v / (c + v);
                let sig = (c * v / (c + v)).sqrt();
                cluster(mu, sig, &mut pts);
            }
        }
        PriorSpec::Bg { s_sq, .. } => {
            let mu = m * s_sq / (c + s_sq);
            let sig = (c * s_sq / (c + s_sq)).sqrt();
            cluster(mu, sig, &mut pts);
        }
    }
    let mut pts: Vec<f64> = pts
        .into_iter()
        .map(|p| p.clamp(lo, hi))
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-300);
    pts
}

fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
}

/// Integrate over each segment with a tolerance tied to a coarse magnitude
/// estimate of that segment, floored by the global scale so that segments
/// holding only negligible tail mass terminate immediately.
fn integrate(f: &impl Fn(f64) -> f64, pts: &[f64]) -> f64 {
    let k = 64;
    let mut coarse = Vec::with_capacity(pts.len().saturating_sub(1));
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut acc = 0.0;
        if b - a > 0.0 {
            for i in 0..=k {
                acc += f(a + (b - a) * i as f64 / k as f64).abs();
            }
            acc *= (b - a) / (k + 1) as f64;
        }
        coarse.push(acc);
    }
    let global = coarse.iter().cloned().fold(0.0, f64::max);
    if global == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (w, &c) in pts.windows(2).zip(&coarse) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        let tol = 1e-13 * c + 1e-16 * global;
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        total += adaptive_simpson(f, a, fa, b, fb, fm, whole, tol, 48);
    }
    total
}

/// Tilted moments of `N(u; m, c) * phi(u)` by quadrature, with the BG point
/// mass folded in analytically.
pub fn quad_tilted_moments(prior: &PriorSpec, m: f64, c: f64) -> Result<TiltedMoments1D> {
    prior.validate()?;
    if !(c > 0.0) || !m.is_finite() {
        return Err(EpError::InvalidArgument(format!(
            "quadrature needs a proper cavity, got mean {m}, variance {c}"
        )));
    }
    let pts = breakpoints(prior, m, c);
    // Peak of the log integrand over a dense scan of every segment.
    let logf = |u: f64| ln_gauss(u, m, c) + log_continuous(prior, u);
    let mut peak = f64::NEG_INFINITY;
    for w in pts.windows(2) {
        for i in 0..=256 {
            let u = w[0] + (w[1] - w[0]) * i as f64 / 256.0;
            peak = peak.max(logf(u));
        }
    }
    let g = |u: f64| (logf(u) - peak).exp();

    let z = integrate(&g, &pts);
    if !(z > 0.0) || !z.is_finite() {
        return Err(EpError::NonFinite(format!(
            "quadrature normalizer came out as {z}"
        )));
    }
    let mean_c = integrate(&|u| u * g(u), &pts) / z;
    let var_c = integrate(&|u| (u - mean_c) * (u - mean_c) * g(u), &pts) / z;
    let abs_c = integrate(&|u| u.abs() * g(u), &pts) / z;

    if let PriorSpec::Bg { omega, .. } = prior {
        // Two-term decomposition: continuous slab against the atom at zero.
        let ln_wc = peak + z.ln();
        let ln_wa = (1.0 - omega).ln() + ln_gauss(0.0, m, c);
        let total = ln_add_exp(ln_wc, ln_wa);
        let rc = (ln_wc - total).exp();
        let mean = rc * mean_c;
        let second = rc * (var_c + mean_c * mean_c);
        return Ok(TiltedMoments1D {
            mean,
            variance: (second - mean * mean).max(0.0),
            abs_mean: rc * abs_c,
        });
    }
    Ok(TiltedMoments1D {
        mean: mean_c,
        variance: var_c.max(0.0),
        abs_mean: abs_c,
    })
}

// ---------------------------------------------------------------------------
// Exact grid posterior for tiny denoising problems with continuous priors.

/// Exact MMSE mean and variance per pixel for identity-operator denoising
/// of a `1 x 2`, `2 x 1` or `2 x 2` image, by discretizing every pixel on a
/// shared grid. Only continuous priors; the BG atom cannot be represented
/// on a grid (see [`mixture_mmse_denoise`]).
pub fn grid_mmse_denoise(
    y: &[f64],
    height: usize,
    width: usize,
    xi: f64,
    prior: &PriorSpec,
    points: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    prior.validate()?;
    if matches!(prior, PriorSpec::Bg { .. }) {
        return Err(EpError::InvalidArgument(
            "grid oracle does not support the point-mass prior".to_string(),
        ));
    }
    if y.len() != height * width {
        return Err(EpError::DimensionMismatch(format!(
            "{} observations for {height}x{width}",
            y.len()
        )));
    }
    if points < 200 {
        return Err(EpError::InvalidArgument(
            "grid oracle needs at least 200 points per axis".to_string(),
        ));
    }
    let s = xi.sqrt();
    let lo = y.iter().cloned().fold(f64::MAX, f64::min) - 10.0 * s;
    let hi = y.iter().cloned().fold(f64::MIN, f64::max) + 10.0 * s;
    let g: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();

    let lik = |p: usize| -> Vec<f64> {
        g.iter()
            .map(|&v| -0.5 * (v - y[p]) * (v - y[p]) / xi)
            .collect()
    };
    let phi: Vec<Vec<f64>> = g
        .iter()
        .map(|&a| {
            g.iter()
                .map(|&b| log_continuous(prior, a - b))
                .collect()
        })
        .collect();

    match (height, width) {
        (1, 2) | (2, 1) => {
            let (l0, l1) = (lik(0), lik(1));
            let mut peak = f64::NEG_INFINITY;
            for a in 0..points {
                for b in 0..points {
                    peak = peak.max(l0[a] + l1[b] + phi[a][b]);
                }
            }
            let mut m0 = vec![0.0; points];
            let mut m1 = vec![0.0; points];
            for a in 0..points {
                for b in 0..points {
                    let w = (l0[a] + l1[b] + phi[a][b] - peak).exp();
                    m0[a] += w;
                    m1[b] += w;
                }
            }
            let (mean0, var0) = grid_moments(&g, &m0);
            let (mean1, var1) = grid_moments(&g, &m1);
            Ok((vec![mean0, mean1], vec![var0, var1]))
        }
        (2, 2) => {
            use ndarray::Array2;
            // Pixels row-major 0..4; edges (0,1), (2,3), (0,2), (1,3).
            let ls: Vec<Vec<f64>> = (0..4).map(lik).collect();
            let lmax: f64 = ls
                .iter()
                .map(|l| l.iter().cloned().fold(f64::MIN, f64::max))
                .sum::<f64>()
                / 4.0;
            let pmax = phi
                .iter()
                .flat_map(|r| r.iter().cloned())
                .fold(f64::MIN, f64::max);
            let mut a01 = Array2::zeros((points, points));
            let mut b23 = Array2::zeros((points, points));
            let mut c02 = Array2::zeros((points, points));
            let mut d13 = Array2::zeros((points, points));
            for i in 0..points {
                for j in 0..points {
                    a01[(i, j)] = (ls[0][i] + ls[1][j] + phi[i][j] - lmax - pmax).exp();
                    b23[(i, j)] = (ls[2][i] + ls[3][j] + phi[i][j] - lmax - pmax).exp();
                    c02[(i, j)] = (phi[i][j] - pmax).exp();
                    d13[(i, j)] = (phi[i][j] - pmax).exp();
                }
            }
            // Joint over (x0, x2): C .* (A D Bᵀ); over (x1, x3): D .* (Aᵀ C B).
            let adb = a01.dot(&d13).dot(&b23.t());
            let k02 = &c02 * &adb;
            let acb = a01.t().dot(&c02).dot(&b23);
            let k13 = &d13 * &acb;
            let marg = |k: &Array2<f64>, axis: usize| -> Vec<f64> {
                (0..points)
                    .map(|i| {
                        (0..points)
                            .map(|j| if axis == 0 { k[(i, j)] } else { k[(j, i)] })
                            .sum()
                    })
                    .collect()
            };
            let mut means = vec![0.0; 4];
            let mut vars = vec![0.0; 4];
            for (pix, m) in [
                (0, marg(&k02, 0)),
                (2, marg(&k02, 1)),
                (1, marg(&k13, 0)),
                (3, marg(&k13, 1)),
            ] {
                let (mean, var) = grid_moments(&g, &m);
                means[pix] = mean;
                vars[pix] = var;
            }
            Ok((means, vars))
        }
        _ => Err(EpError::InvalidArgument(format!(
            "grid oracle supports 1x2, 2x1 and 2x2 images, got {height}x{width}"
        ))),
    }
}

fn grid_moments(g: &[f64], weights: &[f64]) -> (f64, f64) {
    let z: f64 = weights.iter().sum();
    let mean: f64 = g.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / z;
    let var: f64 = g
        .iter()
        .zip(weights)
        .map(|(v, w)| (v - mean) * (v - mean) * w)
        .sum::<f64>()
        / z;
    (mean, var)
}

// ---------------------------------------------------------------------------
// Exact posterior for mixture priors by component enumeration.

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let r = self.find(self.0[i]);
            self.0[i] = r;
        }
        self.0[i]
    }
    fn union(&mut self, i: usize, j: usize) {
        let (ri, rj) = (self.find(i), self.find(j));
        if ri != rj {
            self.0[ri] = rj;
        }
    }
}

/// Exact MMSE mean and variance per pixel for identity-operator denoising
/// under a two-component mixture prior, by enumerating the `2^E` component
/// assignments over the edges.
///
/// Each assignment is jointly Gaussian. BG point-mass edges constrain the
/// incident pixels to be equal; an assignment whose point-mass edges close
/// a cycle carries the same constraint set as its spanning tree, and the
/// redundant factors contribute weight only (the standard convention that
/// makes the joint model well defined on a grid graph).
pub fn mixture_mmse_denoise(
    y: &[f64],
    height: usize,
    width: usize,
    xi: f64,
    prior: &PriorSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    prior.validate()?;
    let n = height * width;
    if y.len() != n {
        return Err(EpError::DimensionMismatch(format!(
            "{} observations for {height}x{width}",
            y.len()
        )));
    }
    // (weight, variance) per component; variance None marks the point mass.
    let comps: [(f64, Option<f64>); 2] = match prior {
        PriorSpec::Mog2 {
            omega,
            s1_sq,
            s2_sq,
        } => [(*omega, Some(*s1_sq)), (1.0 - omega, Some(*s2_sq))],
        PriorSpec::Bg { omega, s_sq } => [(*omega, Some(*s_sq)), (1.0 - omega, None)],
        PriorSpec::L1Tv { .. } => {
            return Err(EpError::InvalidArgument(
                "mixture oracle needs a mixture prior".to_string(),
            ))
        }
    };
    let partition = EdgePartition::build(height, width)?;
    let edges: Vec<(usize, usize)> = partition
        .edges()
        .map(|(i, j)| (i as usize, j as usize))
        .collect();
    let e = edges.len();
    if e > 20 {
        return Err(EpError::InvalidArgument(format!(
            "mixture oracle enumerates 2^{e} assignments; refusing more than 2^20"
        )));
    }

    let mut ln_z = Vec::with_capacity(1 << e);
    let mut cfg_mean = Vec::with_capacity(1 << e);
    let mut cfg_var = Vec::with_capacity(1 << e);
    for cfg in 0u32..(1u32 << e) {
        let mut uf = UnionFind::new(n);
        let mut ln_w = 0.0;
        for (idx, &(i, j)) in edges.iter().enumerate() {
            let (w, var) = comps[((cfg >> idx) & 1) as usize];
            ln_w += w.ln();
            if var.is_none() {
                uf.union(i, j);
            }
        }
        // Compact group labels.
        let mut label = vec![usize::MAX; n];
        let mut d = 0;
        for i in 0..n {
            let r = uf.find(i);
            if label[r] == usize::MAX {
                label[r] = d;
                d += 1;
            }
            label[i] = label[r];
        }

        let mut lam = vec![vec![0.0; d]; d];
        let mut b = vec![0.0; d];
        let mut ln_const = 0.0;
        for i in 0..n {
            let gi = label[i];
            lam[gi][gi] += 1.0 / xi;
            b[gi] += y[i] / xi;
            ln_const += -0.5 * (y[i] * y[i] / xi + (2.0 * std::f64::consts::PI * xi).ln());
        }
        for (idx, &(i, j)) in edges.iter().enumerate() {
            if let (_, Some(v)) = comps[((cfg >> idx) & 1) as usize] {
                ln_const += -0.5 * (2.0 * std::f64::consts::PI * v).ln();
                let (gi, gj) = (label[i], label[j]);
                if gi != gj {
                    lam[gi][gi] += 1.0 / v;
                    lam[gj][gj] += 1.0 / v;
                    lam[gi][gj] -= 1.0 / v;
                    lam[gj][gi] -= 1.0 / v;
                }
            }
        }
        let (inv, ln_det) = invert_spd(&lam)?;
        let mu: Vec<f64> = (0..d)
            .map(|r| (0..d).map(|c| inv[r][c] * b[c]).sum())
            .collect();
        let quad: f64 = b.iter().zip(&mu).map(|(a, m)| a * m).sum();
        ln_z.push(ln_w + ln_const + 0.5 * (d as f64 * LN_2PI - ln_det + quad));
        cfg_mean.push((0..n).map(|i| mu[label[i]]).collect::<Vec<f64>>());
        cfg_var.push((0..n).map(|i| inv[label[i]][label[i]]).collect::<Vec<f64>>());
    }

    let peak = ln_z.iter().cloned().fold(f64::MIN, f64::max);
    let mut z = 0.0;
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    for c in 0..ln_z.len() {
        let w = (ln_z[c] - peak).exp();
        z += w;
        for i in 0..n {
            mean[i] += w * cfg_mean[c][i];
            second[i] += w * (cfg_var[c][i] + cfg_mean[c][i] * cfg_mean[c][i]);
        }
    }
    let mut var = vec![0.0; n];
    for i in 0..n {
        mean[i] /= z;
        var[i] = (second[i] / z - mean[i] * mean[i]).max(0.0);
    }
    Ok((mean, var))
}

/// Gauss-Jordan inverse with partial pivoting; also returns the log
/// determinant (valid for positive definite input).
pub fn invert_spd(a: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut inv = vec![vec![0.0; n]; n];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut ln_det = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r, &s| m[r][col].abs().partial_cmp(&m[s][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        inv.swap(col, piv);
        let d = m[col][col];
        if d == 0.0 || !d.is_finite() {
            return Err(EpError::Linalg("singular matrix in oracle inverse".to_string()));
        }
        ln_det += d.abs().ln();
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for v in inv[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r][col];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                m[r][c] -= f * m[col][c];
                inv[r][c] -= f * inv[col][c];
            }
        }
    }
    Ok((inv, ln_det))
}

// ---------------------------------------------------------------------------
// Dense operator references.

/// Materialize a forward operator as a dense `M x N` matrix through an
/// independent construction (circulant indexing for convolutions, the
/// textbook dyadic Hadamard matrix for the transform operator).
pub fn dense_matrix(op: &ForwardOp) -> Vec<Vec<f64>> {
    let (h, w) = op.dims();
    let n = h * w;
    match op {
        ForwardOp::Identity { .. } => {
            let mut m = vec![vec![0.0; n]; n];
            for (i, row) in m.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            m
        }
        ForwardOp::Conv2D(conv) => {
            let k = &conv.kernel;
            let (cy, cx) = (k.height / 2, k.width / 2);
            let mut psf = vec![0.0; n];
            for a in 0..k.height {
                for b in 0..k.width {
                    let r = (a + h - cy) % h;
                    let c = (b + w - cx) % w;
                    psf[r * w + c] += k.data[a * k.width + b];
                }
            }
            let mut m = vec![vec![0.0; n]; n];
            for pr in 0..h {
                for pc in 0..w {
                    for qr in 0..h {
                        for qc in 0..w {
                            let dr = (pr + h - qr) % h;
                            let dc = (pc + w - qc) % w;
                            m[pr * w + pc][qr * w + qc] = psf[dr * w + dc];
                        }
                    }
                }
            }
            m
        }
        ForwardOp::GaussianIid(g) => (0..op.output_len()).map(|r| g.row(r).to_vec()).collect(),
        ForwardOp::Hadamard(had) => {
            let ph = dense_paley(h);
            let pw = dense_paley(w);
            had.selected
                .iter()
                .map(|&sel| {
                    let (kr, kc) = (sel / w, sel % w);
                    let mut row = vec![0.0; n];
                    for r in 0..h {
                        for c in 0..w {
                            row[r * w + c] = ph[kr][r] * pw[kc][c];
                        }
                    }
                    row
                })
                .collect()
        }
    }
}

/// Dyadic (Paley) ordered orthonormal Hadamard matrix:
/// `P[k][t] = (-1)^popcount(bitrev(k) & t) / sqrt(n)`.
fn dense_paley(n: usize) -> Vec<Vec<f64>> {
    let bits = n.trailing_zeros();
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| {
            let kb = (k.reverse_bits() >> (usize::BITS - bits)) as usize;
            (0..n)
                .map(|t| {
                    let sign = if (kb & t).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    sign * scale
                })
                .collect()
        })
        .collect()
}

/// Exact Gaussian posterior `N(x; cavity) * N(y; Hx, xi I)` from the dense
/// operator matrix.
pub fn dense_posterior(
    h_dense: &[Vec<f64>],
    y: &[f64],
    xi: f64,
    cavity: &DiagGaussian,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = h_dense.len();
    let n = cavity.len();
    if y.len() != m {
        return Err(EpError::DimensionMismatch(format!(
            "{} observations for a {m}-row operator",
            y.len()
        )));
    }
    let mut a = vec![vec![0.0; n]; n];
    for r in 0..m {
        for i in 0..n {
            let hri = h_dense[r][i];
            if hri == 0.0 {
                continue;
            }
            for j in 0..n {
                a[i][j] += hri * h_dense[r][j] / xi;
            }
        }
    }
    for i in 0..n {
        a[i][i] += 1.0 / cavity.var[i];
    }
    let (inv, _) = invert_spd(&a)?;
    let b: Vec<f64> = (0..n)
        .map(|i| {
            let hty: f64 = (0..m).map(|r| h_dense[r][i] * y[r]).sum();
            hty / xi + cavity.mean[i] / cavity.var[i]
        })
        .collect();
    let mean: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| inv[i][j] * b[j]).sum())
        .collect();
    let var: Vec<f64> = (0..n).map(|i| inv[i][i]).collect();
    Ok((mean, var))
}
