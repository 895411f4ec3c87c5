//! Gradient potentials and closed-form moments of their 1-D tilted densities.
//!
//! For every prior the tilted density `P(u) ∝ N(u; m_d, c_d) φ(u; θ)` is a
//! two-component mixture:
//!
//! * `L1Tv` — left- and right-truncated Gaussians (Gaussian times Laplace),
//! * `Mog2` — two Gaussians with conjugate-product components,
//! * `Bg`   — one Gaussian component plus a point mass at zero.
//!
//! Mixture weights are evaluated in the log domain with `erfcx` arithmetic
//! so the moments stay finite far into the tails.

use crate::error::{EpError, Result};
use crate::math::{
    folded_normal_abs_mean, ln_add_exp, ln_erfcx, ln_normal_pdf, lower_truncated_normal_moments,
};
use serde::{Deserialize, Serialize};

// Below this log-responsibility gap the weaker mixture component is dropped
// entirely (its weight is < 1e-300).
const LN_NEGLIGIBLE: f64 = 690.0;

/// Gradient prior with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    /// Anisotropic TV: `φ(u) = exp(-λ|u|)`.
    L1Tv { lambda: f64 },
    /// Two-Gaussian mixture: `φ(u) = ω N(u;0,s1²) + (1-ω) N(u;0,s2²)`.
    Mog2 { omega: f64, s1_sq: f64, s2_sq: f64 },
    /// Bernoulli-Gaussian: `φ(u) = ω N(u;0,s²) + (1-ω) δ(u)`.
    Bg { omega: f64, s_sq: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(EpError::InvalidArgument(msg));
        match *self {
            PriorSpec::L1Tv { lambda } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return bad(format!("l1tv lambda must be finite and >= 0, got {lambda}"));
                }
            }
            PriorSpec::Mog2 { omega, s1_sq, s2_sq } => {
                if !(omega > 0.0 && omega < 1.0) {
                    return bad(format!("mog2 omega must lie in (0,1), got {omega}"));
                }
                if !(s1_sq > s2_sq && s2_sq > 0.0 && s1_sq.is_finite()) {
                    return bad(format!("mog2 requires s1_sq > s2_sq > 0, got {s1_sq}, {s2_sq}"));
                }
            }
            PriorSpec::Bg { omega, s_sq } => {
                if !(omega > 0.0 && omega <= 1.0) {
                    return bad(format!("bg omega must lie in (0,1], got {omega}"));
                }
                if !(s_sq > 0.0 && s_sq.is_finite()) {
                    return bad(format!("bg s_sq must be finite and positive, got {s_sq}"));
                }
            }
        }
        Ok(())
    }

    /// `log φ(u; θ)` up to the prior's own normalizing constant. For the
    /// Bernoulli-Gaussian prior this is the continuous part only.
    pub fn log_potential(&self, u: f64) -> f64 {
        match *self {
            PriorSpec::L1Tv { lambda } => -lambda * u.abs(),
            PriorSpec::Mog2 { omega, s1_sq, s2_sq } => ln_add_exp(
                omega.ln() + ln_normal_pdf(u, 0.0, s1_sq),
                (1.0 - omega).ln() + ln_normal_pdf(u, 0.0, s2_sq),
            ),
            PriorSpec::Bg { omega, s_sq } => omega.ln() + ln_normal_pdf(u, 0.0, s_sq),
        }
    }

    /// Exact mean, variance and absolute first moment of the normalized
    /// tilted density `P(u) ∝ N(u; m_d, c_d) φ(u; θ)`.
    pub fn tilted_moments(&self, m_d: f64, c_d: f64) -> Result<TiltedMoments1D> {
        if !(c_d > 0.0 && c_d.is_finite()) {
            return Err(EpError::InvalidArgument(format!(
                "tilted moments need c_d > 0, got {c_d}"
            )));
        }
        let out = match *self {
            PriorSpec::L1Tv { lambda } => l1tv_tilted(lambda, m_d, c_d),
            PriorSpec::Mog2 { omega, s1_sq, s2_sq } => {
                let g1 = GaussianComponent::conjugate(omega.ln(), s1_sq, m_d, c_d);
                let g2 = GaussianComponent::conjugate((1.0 - omega).ln(), s2_sq, m_d, c_d);
                mix_two(&g1, &g2)
            }
            PriorSpec::Bg { omega, s_sq } => {
                let g = GaussianComponent::conjugate(omega.ln(), s_sq, m_d, c_d);
                // Atom at zero: evidence (1-ω) N(0; m_d, c_d).
                let atom = GaussianComponent {
                    ln_evidence: if omega < 1.0 {
                        (1.0 - omega).ln() + ln_normal_pdf(0.0, m_d, c_d)
                    } else {
                        f64::NEG_INFINITY
                    },
                    mean: 0.0,
                    var: 0.0,
                    abs_mean: 0.0,
                };
                mix_two(&g, &atom)
            }
        };
        if !(out.mean.is_finite() && out.variance.is_finite() && out.abs_mean.is_finite()) {
            return Err(EpError::NonFinite(format!(
                "tilted moments for {self:?} at m_d={m_d}, c_d={c_d}"
            )));
        }
        Ok(out)
    }
}

/// Moments of a 1-D tilted density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoments1D {
    pub mean: f64,
    pub variance: f64,
    pub abs_mean: f64,
}

struct GaussianComponent {
    ln_evidence: f64,
    mean: f64,
    var: f64,
    abs_mean: f64,
}

impl GaussianComponent {
    /// Component of `N(u; m, c) · N(u; 0, s²)`: evidence `N(m; 0, c+s²)`,
    /// posterior `N(m s²/(c+s²), c s²/(c+s²))`.
    fn conjugate(ln_weight: f64, s_sq: f64, m: f64, c: f64) -> Self {
        let total = c + s_sq;
        let mean = m * s_sq / total;
        let var = c * s_sq / total;
        GaussianComponent {
            ln_evidence: ln_weight + ln_normal_pdf(m, 0.0, total),
            mean,
            var,
            abs_mean: folded_normal_abs_mean(mean, var),
        }
    }
}

fn mix_two(a: &GaussianComponent, b: &GaussianComponent) -> TiltedMoments1D {
    let gap = a.ln_evidence - b.ln_evidence;
    let (ra, rb) = if gap > LN_NEGLIGIBLE {
        (1.0, 0.0)
    } else if gap < -LN_NEGLIGIBLE {
        (0.0, 1.0)
    } else {
        let ra = 1.0 / (1.0 + (-gap).exp());
        (ra, 1.0 - ra)
    };
    let mean = ra * a.mean + rb * b.mean;
    let second = ra * (a.var + a.mean * a.mean) + rb * (b.var + b.mean * b.mean);
    let variance = (second - mean * mean).max(0.0);
    let abs_mean = ra * a.abs_mean + rb * b.abs_mean;
    TiltedMoments1D {
        mean,
        variance,
        abs_mean: abs_mean.max(mean.abs()),
    }
}

// Gaussian-times-Laplace: a mixture of one right-truncated component on
// (-inf, 0] and one left-truncated component on [0, inf). Relative weights
// reduce to erfcx ratios after the shared Gaussian factor cancels.
fn l1tv_tilted(lambda: f64, m: f64, c: f64) -> TiltedMoments1D {
    if lambda == 0.0 {
        return TiltedMoments1D {
            mean: m,
            variance: c,
            abs_mean: folded_normal_abs_mean(m, c),
        };
    }
    let sqrt_2c = (2.0 * c).sqrt();
    let z_pos = (lambda * c - m) / sqrt_2c;
    let z_neg = (lambda * c + m) / sqrt_2c;
    let (mean_pos, var_pos) = lower_truncated_normal_moments(m - lambda * c, c);
    // Negative branch by reflection: N(m + λc, c) truncated to (-inf, 0].
    let (refl_mean, var_neg) = lower_truncated_normal_moments(-(m + lambda * c), c);
    let mean_neg = -refl_mean;

    let pos = GaussianComponent {
        ln_evidence: ln_erfcx(z_pos),
        mean: mean_pos,
        var: var_pos,
        abs_mean: mean_pos,
    };
    let neg = GaussianComponent {
        ln_evidence: ln_erfcx(z_neg),
        mean: mean_neg,
        var: var_neg,
        abs_mean: -mean_neg,
    };
    mix_two(&pos, &neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::SQRT_2_OVER_PI;

    #[test]
    fn l1tv_flat_potential_is_identity() {
        let p = PriorSpec::L1Tv { lambda: 0.0 };
        let t = p.tilted_moments(1.7, 2.5).unwrap();
        assert!((t.mean - 1.7).abs() < 1e-14);
        assert!((t.variance - 2.5).abs() < 1e-14);
    }

    #[test]
    fn l1tv_symmetric_case() {
        let p = PriorSpec::L1Tv { lambda: 1.0 };
        let t = p.tilted_moments(0.0, 1.0).unwrap();
        assert!(t.mean.abs() < 1e-14, "symmetry gives zero mean");
        assert!(t.variance > 0.0 && t.variance < 1.0);
        assert!(t.abs_mean > 0.0 && t.abs_mean < SQRT_2_OVER_PI);
    }

    #[test]
    fn mog2_near_pure_gaussian_product() {
        let p = PriorSpec::Mog2 {
            omega: 1.0 - 1e-14,
            s1_sq: 1.0,
            s2_sq: 1e-8,
        };
        let t = p.tilted_moments(1.0, 1.0).unwrap();
        assert!((t.mean - 0.5).abs() < 1e-6);
        assert!((t.variance - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bg_point_mass_limit() {
        let p = PriorSpec::Bg {
            omega: 1e-290,
            s_sq: 1.0,
        };
        let t = p.tilted_moments(0.5, 1.0).unwrap();
        assert!(t.mean.abs() < 1e-280);
        assert!(t.variance.abs() < 1e-280);
        assert!(t.abs_mean < 1e-280);
    }

    #[test]
    fn bg_omega_one_is_pure_gaussian_component() {
        let p = PriorSpec::Bg { omega: 1.0, s_sq: 4.0 };
        let t = p.tilted_moments(2.0, 4.0).unwrap();
        assert!((t.mean - 1.0).abs() < 1e-13);
        assert!((t.variance - 2.0).abs() < 1e-13);
    }

    #[test]
    fn log_potential_examples() {
        let l1 = PriorSpec::L1Tv { lambda: 2.0 };
        assert_eq!(l1.log_potential(3.0), -6.0);
        let mog = PriorSpec::Mog2 {
            omega: 0.3,
            s1_sq: 4.0,
            s2_sq: 1.0,
        };
        let direct = (0.3 * (-(2.0 * std::f64::consts::PI * 4.0).ln() / 2.0).exp()
            + 0.7 * (-(2.0 * std::f64::consts::PI).ln() / 2.0).exp())
        .ln();
        assert!((mog.log_potential(0.0) - direct).abs() < 1e-12);
    }

    #[test]
    fn log_potential_is_even() {
        let priors = [
            PriorSpec::L1Tv { lambda: 0.7 },
            PriorSpec::Mog2 { omega: 0.2, s1_sq: 9.0, s2_sq: 0.5 },
            PriorSpec::Bg { omega: 0.8, s_sq: 2.0 },
        ];
        for p in priors {
            for u in [0.1, 1.0, 3.7, 20.0] {
                assert_eq!(p.log_potential(u), p.log_potential(-u), "{p:?}");
            }
        }
    }

    #[test]
    fn outputs_finite_deep_in_the_tails() {
        let priors = [
            PriorSpec::L1Tv { lambda: 3.0 },
            PriorSpec::Mog2 { omega: 0.2, s1_sq: 10.0, s2_sq: 0.1 },
            PriorSpec::Bg { omega: 0.9, s_sq: 5.0 },
        ];
        for p in priors {
            for c in [1e-6f64, 1e-2, 1.0, 1e4] {
                for scaled in [-40.0, -10.0, 0.0, 10.0, 40.0] {
                    let m = scaled * c.sqrt();
                    let t = p.tilted_moments(m, c).unwrap();
                    assert!(t.variance >= 0.0);
                    assert!(t.abs_mean + 1e-300 >= t.mean.abs());
                }
            }
        }
    }

    #[test]
    fn validation_rejects_bad_hyperparameters() {
        assert!(PriorSpec::L1Tv { lambda: -1.0 }.validate().is_err());
        assert!(PriorSpec::Mog2 { omega: 0.5, s1_sq: 1.0, s2_sq: 2.0 }.validate().is_err());
        assert!(PriorSpec::Mog2 { omega: 1.0, s1_sq: 2.0, s2_sq: 1.0 }.validate().is_err());
        assert!(PriorSpec::Bg { omega: 0.0, s_sq: 1.0 }.validate().is_err());
        assert!(PriorSpec::Bg { omega: 0.5, s_sq: -1.0 }.validate().is_err());
    }

    #[test]
    fn rejects_nonpositive_cavity_variance() {
        let p = PriorSpec::L1Tv { lambda: 1.0 };
        assert!(p.tilted_moments(0.0, 0.0).is_err());
        assert!(p.tilted_moments(0.0, -1.0).is_err());
    }
}
