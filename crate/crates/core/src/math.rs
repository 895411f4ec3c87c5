//! Scalar Gaussian special functions.
//!
//! All tilted-moment computations reduce to the scaled complementary error
//! function `erfcx(x) = exp(x^2) erfc(x)`, evaluated in the log domain when
//! mixture weights span many orders of magnitude.

use libm::{erf, erfc};

pub const LN_SQRT_2PI: f64 = 0.918938533204672741780329736406;
pub const SQRT_2_OVER_PI: f64 = 0.797884560802865355879892119869;

/// Scaled complementary error function `exp(x^2) erfc(x)`.
///
/// For moderate arguments the direct product is exact enough; for large
/// positive arguments `erfc` underflows and a continued fraction is used
/// instead. Negative arguments use the reflection
/// `erfcx(-x) = 2 exp(x^2) - erfcx(x)` and may overflow to `inf`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x <= 4.0 {
        return (x * x).exp() * erfc(x);
    }
    erfcx_cf(x)
}

// Laplace continued fraction for erfcx, valid for large positive x.
// erfcx(x) = (1/sqrt(pi)) / (x + (1/2)/(x + (2/2)/(x + (3/2)/(x + ...))))
fn erfcx_cf(x: f64) -> f64 {
    const INV_SQRT_PI: f64 = 0.564189583547756286948079451561;
    let tiny = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for n in 1..200 {
        let a = n as f64 / 2.0;
        d = x + a * d;
        if d == 0.0 {
            d = tiny;
        }
        c = x + a / c;
        if c == 0.0 {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    INV_SQRT_PI / f
}

/// `ln(erfcx(x))`, finite for every finite argument.
pub fn ln_erfcx(x: f64) -> f64 {
    if x >= 0.0 {
        erfcx(x).ln()
    } else {
        // erfc(x) in (1, 2): full relative accuracy without the reflection.
        x * x + erfc(x).ln()
    }
}

/// Standard normal cdf.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Log density of N(x; mean, var).
pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI
}

/// Mean of |X| for X ~ N(mean, var) (folded normal).
pub fn folded_normal_abs_mean(mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return mean.abs();
    }
    let s = var.sqrt();
    let t = mean / s;
    s * SQRT_2_OVER_PI * (-0.5 * t * t).exp() + mean * erf(t / std::f64::consts::SQRT_2)
}

/// Mean and variance of X ~ N(mu, var) truncated to [0, inf).
///
/// Returns `(mean, variance)`. Stable for standardized bounds up to ~1e2
/// thanks to the erfcx-based inverse Mills ratio.
pub fn lower_truncated_normal_moments(mu: f64, var: f64) -> (f64, f64) {
    let s = var.sqrt();
    let alpha = -mu / s;
    if alpha >= 30.0 {
        // Deep truncation: `mu + s r` and `1 + alpha r - r^2` both cancel
        // catastrophically (error ~ eps * alpha^4), so switch to the Mills
        // ratio asymptotics in x = 1/alpha^2; the truncated tails are below
        // 1e-13 at the crossover.
        let x = 1.0 / (alpha * alpha);
        let d = 1.0
            + x * (-2.0
                + x * (10.0 + x * (-74.0 + x * (706.0 + x * (-8162.0 + x * 110410.0)))));
        let vrel =
            1.0 + x * (-6.0 + x * (50.0 + x * (-518.0 + x * (6354.0 - x * 89782.0))));
        return ((s / alpha) * d, (var * x * vrel).max(0.0));
    }
    // phi(alpha) / (1 - Phi(alpha)) = sqrt(2/pi) / erfcx(alpha / sqrt(2))
    let r = SQRT_2_OVER_PI / erfcx(alpha / std::f64::consts::SQRT_2);
    let mean = mu + s * r;
    let v = var * (1.0 + alpha * r - r * r);
    (mean, v.max(0.0))
}

/// Numerically stable `ln(exp(a) + exp(b))`.
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}
