//! EM-style estimation of the TV regularization strength.
//!
//! With `E` gradient factors `lambda exp(-lambda |u_e|) / 2` the M-step of
//! an EM scheme on the scale is `lambda = N / sum_e E|u_e|`, where `N` is
//! the pixel count and the expectation is taken under the current EP
//! approximation. The three rules differ in which approximation supplies
//! `E|u_e|`: the global Gaussian (a folded normal of the pixel-difference
//! marginal), the Gaussian gradient marginal after projection, or the exact
//! tilted gradient distribution.

use crate::engine::{self, EpConfig, EpResult, EpState};
use crate::error::{EpError, Result};
use crate::likelihood::LikelihoodModel;
use crate::math::folded_normal_abs_mean;
use crate::partition::EdgePartition;
use crate::prior::PriorSpec;

/// Which expectation of `|u_e|` feeds the scale update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaRule {
    /// Folded normal of the pixel-difference marginal of the global
    /// approximation.
    OptionX,
    /// Folded normal of the Gaussian gradient marginal (cavity times the
    /// Gaussian-matched site).
    OptionU,
    /// Exact first absolute moment of the tilted gradient distribution.
    Tilted,
}

impl LambdaRule {
    pub fn name(&self) -> &'static str {
        match self {
            LambdaRule::OptionX => "x",
            LambdaRule::OptionU => "u",
            LambdaRule::Tilted => "tilted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub ep: EpConfig,
    /// Outer EM iterations.
    pub max_iter: usize,
    /// Relative change in lambda that counts as converged.
    pub tol: f64,
    pub rule: LambdaRule,
    /// Starting scale; `None` derives one from the backprojected data.
    pub lambda_init: Option<f64>,
    /// `true` interleaves one EP sweep per EM iteration on a shared state;
    /// `false` runs EP to convergence before every update.
    pub fast: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            ep: EpConfig::default(),
            max_iter: 50,
            tol: 1e-3,
            rule: LambdaRule::Tilted,
            lambda_init: None,
            fast: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub lambda: f64,
    /// Scale after every EM iteration, starting with the initial value.
    pub lambda_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final EP run at the estimated scale.
    pub ep: EpResult,
}

/// Initial scale from the backprojected observations: the reciprocal of the
/// mean absolute gradient of `Hᵀy`.
pub fn lambda_from_backprojection(
    model: &LikelihoodModel,
    partition: &EdgePartition,
) -> Result<f64> {
    let x0 = model.op.adjoint(&model.y)?;
    let mut sum = 0.0;
    for (i, j) in partition.edges() {
        sum += (x0[i as usize] - x0[j as usize]).abs();
    }
    let mean = sum / partition.edge_count() as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(EpError::DegenerateGradients(format!(
            "mean absolute gradient of the backprojection is {mean}"
        )));
    }
    Ok(1.0 / mean)
}

fn expected_abs_gradients(
    partition: &EdgePartition,
    prior: &PriorSpec,
    state: &EpState,
    rule: LambdaRule,
) -> Result<f64> {
    let total = match rule {
        LambdaRule::OptionX => {
            let g = &state.global;
            partition
                .edges()
                .map(|(i, j)| {
                    folded_normal_abs_mean(
                        g.mean[i as usize] - g.mean[j as usize],
                        g.var[i as usize] + g.var[j as usize],
                    )
                })
                .sum()
        }
        LambdaRule::OptionU => {
            let gm = engine::gradient_marginals(partition, prior, state)?;
            gm.mean
                .iter()
                .zip(&gm.var)
                .map(|(&m, &v)| folded_normal_abs_mean(m, v))
                .sum()
        }
        LambdaRule::Tilted => {
            let gm = engine::gradient_marginals(partition, prior, state)?;
            gm.abs_mean.iter().sum()
        }
    };
    if !(total > 0.0) || !f64::is_finite(total) {
        return Err(EpError::DegenerateGradients(format!(
            "expected absolute gradients summed to {total}"
        )));
    }
    Ok(total)
}

/// Alternate EP with closed-form scale updates until the scale stabilizes,
/// then run EP to convergence at the final scale.
pub fn run_ep_em(
    model: &LikelihoodModel,
    partition: &EdgePartition,
    config: &EmConfig,
) -> Result<EmResult> {
    if config.max_iter == 0 {
        return Err(EpError::InvalidArgument(
            "em needs at least one iteration".to_string(),
        ));
    }
    let mut lambda = match config.lambda_init {
        Some(l) if l > 0.0 && l.is_finite() => l,
        Some(l) => {
            return Err(EpError::InvalidArgument(format!(
                "initial lambda must be positive and finite, got {l}"
            )))
        }
        None => lambda_from_backprojection(model, partition)?,
    };
    let n_pixels = partition.pixels() as f64;

    let mut history = vec![lambda];
    let mut state: Option<EpState> = None;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        iterations += 1;
        let prior = PriorSpec::L1Tv { lambda };
        let ep_cfg = if config.fast {
            EpConfig {
                max_iter: 1,
                tol: 0.0,
                ..config.ep
            }
        } else {
            config.ep
        };
        let res = engine::run_ep(model, partition, &prior, &ep_cfg, state.take())?;
        let a0 = expected_abs_gradients(partition, &prior, &res.state, config.rule)?;
        state = Some(res.state);
        let next = n_pixels / a0;
        let rel = (next - lambda).abs() / lambda;
        lambda = next;
        history.push(lambda);
        if rel < config.tol {
            converged = true;
            break;
        }
    }

    let prior = PriorSpec::L1Tv { lambda };
    let ep = engine::run_ep(model, partition, &prior, &config.ep, state)?;
    Ok(EmResult {
        lambda,
        lambda_history: history,
        iterations,
        converged,
        ep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ForwardOp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noisy_steps(h: usize, w: usize, noise: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..h * w)
            .map(|i| {
                let c = i % w;
                let base = if c < w / 2 { 0.0 } else { 4.0 };
                let g: f64 = StandardNormal.sample(&mut rng);
                base + noise * g
            })
            .collect()
    }

    fn model(h: usize, w: usize, y: Vec<f64>, xi: f64) -> LikelihoodModel {
        LikelihoodModel::new(ForwardOp::identity(h, w), y, xi).unwrap()
    }

    #[test]
    fn estimates_are_positive_and_stabilize() {
        let y = noisy_steps(8, 8, 0.3, 1);
        let m = model(8, 8, y, 0.09);
        let p = EdgePartition::build(8, 8).unwrap();
        let res = run_ep_em(&m, &p, &EmConfig::default()).unwrap();
        assert!(res.converged, "lambda history {:?}", res.lambda_history);
        assert!(res.lambda > 0.0 && res.lambda.is_finite());
        let tail: Vec<f64> = res.lambda_history.iter().rev().take(2).copied().collect();
        assert!((tail[0] - tail[1]).abs() / tail[0] < 1e-2);
        assert!(res.ep.converged);
    }

    #[test]
    fn fast_and_full_variants_agree_at_the_fixed_point() {
        let y = noisy_steps(6, 6, 0.2, 3);
        let m = model(6, 6, y, 0.04);
        let p = EdgePartition::build(6, 6).unwrap();
        let fast = run_ep_em(&m, &p, &EmConfig::default()).unwrap();
        let full = run_ep_em(
            &m,
            &p,
            &EmConfig {
                fast: false,
                ..EmConfig::default()
            },
        )
        .unwrap();
        assert!(
            (fast.lambda - full.lambda).abs() / full.lambda < 0.05,
            "fast {} vs full {}",
            fast.lambda,
            full.lambda
        );
    }

    #[test]
    fn smoother_data_yields_larger_lambda() {
        let p = EdgePartition::build(8, 8).unwrap();
        let rough = run_ep_em(&model(8, 8, noisy_steps(8, 8, 1.0, 5), 1.0), &p, &EmConfig::default())
            .unwrap();
        let y_smooth: Vec<f64> = noisy_steps(8, 8, 0.05, 5)
            .iter()
            .map(|v| v * 0.05)
            .collect();
        let smooth = run_ep_em(&model(8, 8, y_smooth, 0.01), &p, &EmConfig::default()).unwrap();
        assert!(
            smooth.lambda > rough.lambda,
            "smooth {} rough {}",
            smooth.lambda,
            rough.lambda
        );
    }

    #[test]
    fn rules_give_similar_scales() {
        let y = noisy_steps(6, 6, 0.3, 9);
        let m = model(6, 6, y, 0.09);
        let p = EdgePartition::build(6, 6).unwrap();
        let mut scales = Vec::new();
        for rule in [LambdaRule::OptionX, LambdaRule::OptionU, LambdaRule::Tilted] {
            let res = run_ep_em(
                &m,
                &p,
                &EmConfig {
                    rule,
                    ..EmConfig::default()
                },
            )
            .unwrap();
            scales.push(res.lambda);
        }
        for s in &scales {
            assert!((s / scales[2] - 1.0).abs() < 0.5, "scales {scales:?}");
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let y = noisy_steps(6, 6, 0.3, 11);
        let m = model(6, 6, y, 0.09);
        let p = EdgePartition::build(6, 6).unwrap();
        let a = run_ep_em(&m, &p, &EmConfig::default()).unwrap();
        let b = run_ep_em(&m, &p, &EmConfig::default()).unwrap();
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.ep.mean, b.ep.mean);
    }

    #[test]
    fn constant_backprojection_is_degenerate() {
        let m = model(4, 4, vec![2.0; 16], 0.1);
        let p = EdgePartition::build(4, 4).unwrap();
        let err = lambda_from_backprojection(&m, &p).unwrap_err();
        assert!(matches!(err, EpError::DegenerateGradients(_)));
    }
}
