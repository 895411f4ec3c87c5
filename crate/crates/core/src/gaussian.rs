//! Natural-parameter algebra on diagonal Gaussians.
//!
//! Sites are stored as `(precision, shift)` pairs so that products, ratios
//! and damping are coordinate-wise linear operations. Moment form is derived
//! on demand.

use crate::error::{EpError, Result};

/// Diagonal-covariance Gaussian in moment form.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(EpError::DimensionMismatch(format!(
                "mean length {} != variance length {}",
                mean.len(),
                var.len()
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Convert to natural parameters. Requires strictly positive variances.
    pub fn to_natural(&self) -> NaturalSite {
        let precision: Vec<f64> = self.var.iter().map(|&v| 1.0 / v).collect();
        let shift: Vec<f64> = self
            .mean
            .iter()
            .zip(&precision)
            .map(|(&m, &p)| m * p)
            .collect();
        NaturalSite { precision, shift }
    }
}

/// One Gaussian approximating factor in natural parameters.
///
/// Precisions may be negative or zero transiently (an unnormalized site) but
/// must stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSite {
    pub precision: Vec<f64>,
    pub shift: Vec<f64>,
}

impl NaturalSite {
    pub fn zeros(len: usize) -> Self {
        Self {
            precision: vec![0.0; len],
            shift: vec![0.0; len],
        }
    }

    /// Flat site with the given variance at every coordinate.
    pub fn flat(len: usize, variance: f64) -> Self {
        Self {
            precision: vec![1.0 / variance; len],
            shift: vec![0.0; len],
        }
    }

    pub fn from_moments(mean: &[f64], var: &[f64]) -> Self {
        let precision: Vec<f64> = var.iter().map(|&v| 1.0 / v).collect();
        let shift: Vec<f64> = mean
            .iter()
            .zip(&precision)
            .map(|(&m, &p)| m * p)
            .collect();
        Self { precision, shift }
    }

    pub fn len(&self) -> usize {
        self.precision.len()
    }

    pub fn is_empty(&self) -> bool {
        self.precision.is_empty()
    }

    /// Moment form; only valid when all precisions are strictly positive.
    pub fn to_moments(&self) -> Result<DiagGaussian> {
        let mut mean = Vec::with_capacity(self.len());
        let mut var = Vec::with_capacity(self.len());
        for (&p, &s) in self.precision.iter().zip(&self.shift) {
            if p <= 0.0 || !p.is_finite() {
                return Err(EpError::InvalidArgument(format!(
                    "cannot convert site with precision {p} to moments"
                )));
            }
            var.push(1.0 / p);
            mean.push(s / p);
        }
        Ok(DiagGaussian { mean, var })
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        for (&p, &s) in self.precision.iter().zip(&self.shift) {
            if !p.is_finite() || !s.is_finite() {
                return Err(EpError::NonFinite(context.to_string()));
            }
        }
        Ok(())
    }
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(EpError::DimensionMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Product of two sites: natural parameters add coordinate-wise.
pub fn multiply(a: &NaturalSite, b: &NaturalSite) -> Result<NaturalSite> {
    check_len(a.len(), b.len(), "multiply")?;
    Ok(NaturalSite {
        precision: a
            .precision
            .iter()
            .zip(&b.precision)
            .map(|(x, y)| x + y)
            .collect(),
        shift: a.shift.iter().zip(&b.shift).map(|(x, y)| x + y).collect(),
    })
}

/// Cavity distribution: the global approximation with one site divided out.
///
/// Coordinates whose cavity precision is not strictly positive are flagged
/// `true` in the returned mask and carry `mean = 0`, `var = inf`; the caller
/// decides whether to skip the corresponding updates.
pub fn cavity(global: &DiagGaussian, site: &NaturalSite) -> Result<(DiagGaussian, Vec<bool>)> {
    check_len(global.len(), site.len(), "cavity")?;
    let n = global.len();
    let mut mean = vec![0.0; n];
    let mut var = vec![0.0; n];
    let mut invalid = vec![false; n];
    for i in 0..n {
        let p = 1.0 / global.var[i] - site.precision[i];
        if p <= 0.0 || !p.is_finite() {
            invalid[i] = true;
            mean[i] = 0.0;
            var[i] = f64::INFINITY;
        } else {
            let s = global.mean[i] / global.var[i] - site.shift[i];
            var[i] = 1.0 / p;
            mean[i] = s / p;
        }
    }
    Ok((DiagGaussian { mean, var }, invalid))
}

/// Convex blend `eta * proposed + (1 - eta) * old` in natural parameters.
pub fn damp(old: &NaturalSite, proposed: &NaturalSite, eta: f64) -> Result<NaturalSite> {
    check_len(old.len(), proposed.len(), "damp")?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(EpError::InvalidArgument(format!(
            "damping factor must lie in (0, 1], got {eta}"
        )));
    }
    let blend = |o: f64, p: f64| eta * p + (1.0 - eta) * o;
    Ok(NaturalSite {
        precision: old
            .precision
            .iter()
            .zip(&proposed.precision)
            .map(|(&o, &p)| blend(o, p))
            .collect(),
        shift: old
            .shift
            .iter()
            .zip(&proposed.shift)
            .map(|(&o, &p)| blend(o, p))
            .collect(),
    })
}

/// Clamp site precisions below `1 / cap_variance` up to that floor. For
/// negative precisions the shift is rescaled so the site mean is preserved
/// where it was defined.
///
/// The floor also applies to positive precisions: a site whose precision
/// decays below it still has to stay resolvable against the other sites'
/// precisions when a cavity is formed by subtraction, and the cap defines
/// the largest admissible site variance. When the mean-preserving rescale
/// would grow the shift beyond its previous magnitude the site is an almost
/// purely linear factor whose precision sits at rounding level; its implied
/// mean is meaningless, so the shift is left unchanged instead of injecting
/// that garbage into the global approximation.
pub fn repair_variances(site: &NaturalSite, cap_variance: f64) -> NaturalSite {
    let floor = 1.0 / cap_variance;
    let mut precision = site.precision.clone();
    let mut shift = site.shift.clone();
    for i in 0..site.len() {
        if precision[i] < floor {
            if precision[i] < 0.0 {
                let rescaled = shift[i] / precision[i] * floor;
                if rescaled.abs() <= shift[i].abs() {
                    shift[i] = rescaled;
                }
            }
            precision[i] = floor;
        }
    }
    NaturalSite { precision, shift }
}

/// Count of negative-precision coordinates a repair pass would rescale.
pub fn repair_count(site: &NaturalSite) -> usize {
    site.precision.iter().filter(|&&p| p < 0.0).count()
}
