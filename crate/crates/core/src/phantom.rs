//! Synthetic piecewise-constant test images.

/// Modified Shepp-Logan phantom sampled at pixel centers, values in `[0, 1]`.
///
/// Uses the standard ten-ellipse parameterization with the rescaled
/// intensities common in imaging work. Row 0 is the top of the image.
pub fn shepp_logan(height: usize, width: usize) -> Vec<f64> {
    // (value, a, b, x0, y0, phi_degrees)
    const ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
        (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
        (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
        (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
        (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
        (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
        (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
    ];
    let mut img = vec![0.0; height * width];
    for r in 0..height {
        let y = 1.0 - 2.0 * (r as f64 + 0.5) / height as f64;
        for c in 0..width {
            let x = 2.0 * (c as f64 + 0.5) / width as f64 - 1.0;
            let mut v = 0.0;
            for &(a_val, a, b, x0, y0, phi) in &ELLIPSES {
                let t = phi.to_radians();
                let (ct, st) = (t.cos(), t.sin());
                let dx = x - x0;
                let dy = y - y0;
                let xr = dx * ct + dy * st;
                let yr = -dx * st + dy * ct;
                if (xr / a) * (xr / a) + (yr / b) * (yr / b) <= 1.0 {
                    v += a_val;
                }
            }
            img[r * width + c] = v.clamp(0.0, 1.0);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_lie_in_unit_range_with_background_zero() {
        let img = shepp_logan(64, 64);
        assert_eq!(img.len(), 64 * 64);
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Corners are outside the skull ellipse.
        assert_eq!(img[0], 0.0);
        assert_eq!(img[63], 0.0);
        assert_eq!(img[64 * 63], 0.0);
    }

    #[test]
    fn interior_structures_are_present() {
        let img = shepp_logan(128, 128);
        // Center pixel sits inside skull + brain, outside the dark lobes.
        let center = img[64 * 128 + 64];
        assert!((center - 0.2).abs() < 1e-12, "center {center}");
        // Distinct gray levels confirm multiple regions.
        let mut levels: Vec<i64> = img.iter().map(|v| (v * 1e6).round() as i64).collect();
        levels.sort_unstable();
        levels.dedup();
        assert!(levels.len() >= 4, "only {} levels", levels.len());
    }

    #[test]
    fn symmetric_about_the_vertical_axis_where_unrotated() {
        // The skull (largest ellipse) is symmetric; probe a row near the top
        // where only unrotated ellipses contribute.
        let img = shepp_logan(64, 64);
        for c in 0..64 {
            assert_eq!(img[5 * 64 + c], img[5 * 64 + 63 - c]);
        }
    }
}
