//! Per-edge prior factors: tilted moments of the scalar gradient projected
//! back onto the two incident pixels.
//!
//! Within one edge set the pixels of distinct edges are disjoint, so under
//! the diagonal cavity the edges decouple: each edge `(i, j)` only involves
//! the scalar `u = x_i - x_j` whose cavity is `N(m_i - m_j, c_i + c_j)`.
//! Conditional on `u` the pixels stay Gaussian, which makes the projection
//! of the tilted scalar moments onto `(x_i, x_j)` exact.

use crate::error::{EpError, Result};
use crate::gaussian::DiagGaussian;
use crate::partition::EdgePartition;
use crate::prior::{PriorSpec, TiltedMoments1D};

/// Tilted gradient marginals for every edge, in global gradient-index order.
#[derive(Debug, Clone)]
pub struct GradientMarginals {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub abs_mean: Vec<f64>,
}

impl GradientMarginals {
    pub fn with_len(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            var: vec![0.0; n],
            abs_mean: vec![0.0; n],
        }
    }
}

/// Tilted moments of `u = x_i - x_j` for one edge under a diagonal cavity.
pub fn edge_tilted(
    prior: &PriorSpec,
    cav_i: (f64, f64),
    cav_j: (f64, f64),
) -> Result<TiltedMoments1D> {
    let (mi, ci) = cav_i;
    let (mj, cj) = cav_j;
    if !(ci > 0.0) || !(cj > 0.0) || !mi.is_finite() || !mj.is_finite() {
        return Err(EpError::NonFinite(
            "edge cavity has non-finite mean or non-positive variance".to_string(),
        ));
    }
    prior.tilted_moments(mi - mj, ci + cj)
}

/// Project tilted gradient moments onto the incident pixels.
///
/// Returns `((mean_i, var_i), (mean_j, var_j))`. Exact under the diagonal
/// cavity: `E[x_i | u]` is linear in `u` and `Var(x_i | u)` is constant.
pub fn project_edge(
    cav_i: (f64, f64),
    cav_j: (f64, f64),
    tilted: &TiltedMoments1D,
) -> ((f64, f64), (f64, f64)) {
    let (mi, ci) = cav_i;
    let (mj, cj) = cav_j;
    let cbar = ci + cj;
    let dm = tilted.mean - (mi - mj);
    // A multi-modal tilted density can have variance above the cavity's; a
    // diagonal site cannot raise both pixel variances without a negative
    // precision that the repair pass would clamp into an unbalanced tilt.
    // Dropping the inflation here keeps the implied site a pure function of
    // the gradient, so the pixel-sum direction is untouched.
    let dv = (tilted.variance - cbar).min(0.0);
    let mean_i = mi + dm * ci / cbar;
    let mean_j = mj - dm * cj / cbar;
    let var_i = ci + dv * ci * ci / (cbar * cbar);
    let var_j = cj + dv * cj * cj / (cbar * cbar);
    ((mean_i, var_i.max(f64::MIN_POSITIVE)), (mean_j, var_j.max(f64::MIN_POSITIVE)))
}

/// Moment-match one edge set against the cavity.
///
/// Returns the tilted pixel moments (pixels not touched by set `k` keep
/// their cavity moments, so their site contribution stays zero) together
/// with the per-edge tilted gradient moments of the set.
pub fn set_update(
    partition: &EdgePartition,
    k: usize,
    prior: &PriorSpec,
    cavity: &DiagGaussian,
) -> Result<(DiagGaussian, Vec<TiltedMoments1D>)> {
    if cavity.len() != partition.pixels() {
        return Err(EpError::DimensionMismatch(format!(
            "cavity has {} coordinates, image has {} pixels",
            cavity.len(),
            partition.pixels()
        )));
    }
    let mut out = cavity.clone();
    let edges = partition.set(k);
    let mut tilted_all = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        let (i, j) = (i as usize, j as usize);
        let cav_i = (cavity.mean[i], cavity.var[i]);
        let cav_j = (cavity.mean[j], cavity.var[j]);
        let t = edge_tilted(prior, cav_i, cav_j)?;
        let ((mean_i, var_i), (mean_j, var_j)) = project_edge(cav_i, cav_j, &t);
        out.mean[i] = mean_i;
        out.var[i] = var_i;
        out.mean[j] = mean_j;
        out.var[j] = var_j;
        tilted_all.push(t);
    }
    Ok((out, tilted_all))
}
