//! Expectation propagation over the likelihood site and the four edge-set
//! prior sites.
//!
//! The global approximation is the product of five diagonal Gaussian sites.
//! One sweep refines the likelihood site first, then the four prior sites in
//! an order reshuffled every sweep from a seeded generator. Each refinement
//! forms the cavity, moment-matches the tilted distribution, damps the
//! resulting site in natural parameters and repairs non-positive precisions,
//! so every cavity in the next step is well defined.

use crate::error::{EpError, Result};
use crate::gaussian::{self, DiagGaussian, NaturalSite};
use crate::likelihood::{CgConfig, LikelihoodModel, VarianceStrategy};
use crate::partition::EdgePartition;
use crate::prior::PriorSpec;
use crate::prior_sites::{self, GradientMarginals};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// EP sweep settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpConfig {
    /// Convex blend toward the proposed site in natural parameters.
    pub damping: f64,
    pub max_iter: usize,
    /// Convergence threshold on the largest posterior-mean change per sweep.
    pub tol: f64,
    /// Largest admissible site variance; non-positive precisions are
    /// clamped to its reciprocal.
    pub variance_cap: f64,
    /// Seed for the per-sweep prior-site ordering (and Monte Carlo noise).
    pub seed: u64,
    /// `None` selects a strategy from the operator kind.
    pub strategy: Option<VarianceStrategy>,
    pub cg: CgConfig,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self {
            damping: 0.9,
            max_iter: 20,
            tol: 1e-5,
            variance_cap: 1e8,
            seed: 0,
            strategy: None,
            cg: CgConfig::default(),
        }
    }
}

/// Per-sweep diagnostics, one record per completed sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub max_mean_change: f64,
    pub max_var_change: f64,
    /// Site coordinates whose precision needed clamping this sweep.
    pub repaired: usize,
    pub cg_iterations: usize,
    /// Prior-site order used this sweep (1-based set labels).
    pub site_order: [usize; 4],
}

/// Mutable EP state: the five sites and the implied global approximation.
/// Carrying it across calls warm-starts subsequent runs.
#[derive(Debug, Clone)]
pub struct EpState {
    /// Index 0 is the likelihood site, 1..=4 the edge-set sites.
    pub sites: Vec<NaturalSite>,
    pub global: DiagGaussian,
}

impl EpState {
    /// Fresh state: the likelihood site carries the backprojected data with
    /// precision `diag(HᵀH)/xi`, prior sites start almost flat at the
    /// variance cap.
    pub fn init(model: &LikelihoodModel, config: &EpConfig) -> Result<Self> {
        let n = model.op.input_len();
        let gram_diag = model.op.gram_diag_entries();
        let hty = model.op.adjoint(&model.y)?;
        let lik = NaturalSite {
            precision: gram_diag.iter().map(|g| g / model.xi).collect(),
            shift: hty.iter().map(|v| v / model.xi).collect(),
        };
        let lik = gaussian::repair_variances(&lik, config.variance_cap);
        let mut sites = vec![lik];
        for _ in 0..4 {
            sites.push(NaturalSite::flat(n, config.variance_cap));
        }
        let global = global_of(&sites)?;
        Ok(Self { sites, global })
    }
}

fn global_of(sites: &[NaturalSite]) -> Result<DiagGaussian> {
    let mut acc = sites[0].clone();
    for s in &sites[1..] {
        acc = gaussian::multiply(&acc, s)?;
    }
    acc.to_moments()
}

/// Final approximation plus run diagnostics.
#[derive(Debug, Clone)]
pub struct EpResult {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationStats>,
    pub state: EpState,
}

/// Run EP to convergence or `max_iter` sweeps.
pub fn run_ep(
    model: &LikelihoodModel,
    partition: &EdgePartition,
    prior: &PriorSpec,
    config: &EpConfig,
    init: Option<EpState>,
) -> Result<EpResult> {
    let n = model.op.input_len();
    if partition.pixels() != n {
        return Err(EpError::DimensionMismatch(format!(
            "partition covers {} pixels, operator expects {n}",
            partition.pixels()
        )));
    }
    prior.validate()?;
    if !(config.variance_cap > 0.0) {
        return Err(EpError::InvalidArgument(
            "variance cap must be positive".to_string(),
        ));
    }
    let strategy = config
        .strategy
        .unwrap_or_else(|| VarianceStrategy::auto(&model.op));

    let mut state = match init {
        Some(s) => {
            if s.sites.len() != 5 || s.sites.iter().any(|x| x.len() != n) {
                return Err(EpError::DimensionMismatch(
                    "warm-start state does not match the problem size".to_string(),
                ));
            }
            s
        }
        None => EpState::init(model, config)?,
    };

    let mut history = Vec::new();
    let mut converged = false;
    for iter in 0..config.max_iter {
        let prev = state.global.clone();
        let mut repaired = 0;
        let mut cg_iterations = 0;

        // Likelihood site.
        let (cav, bad) = gaussian::cavity(&state.global, &state.sites[0])?;
        if bad.iter().any(|&b| b) {
            return Err(EpError::NonFinite(
                "likelihood cavity lost positive precision".to_string(),
            ));
        }
        let tilted = model.posterior_moments(
            &cav,
            &strategy,
            &config.cg,
            Some(&state.global.mean),
            iter as u64,
        )?;
        cg_iterations += tilted.cg_iterations;
        refine_site(
            &mut state,
            0,
            &cav,
            &DiagGaussian::new(tilted.mean, tilted.var)?,
            None,
            config,
            &mut repaired,
        )?;

        // Prior sites in a reshuffled order.
        let mut order = [1usize, 2, 3, 4];
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        rng.set_stream(iter as u64);
        order.shuffle(&mut rng);
        for &s in &order {
            let k = s - 1;
            let (cav, bad) = gaussian::cavity(&state.global, &state.sites[s])?;
            if bad.iter().any(|&b| b) {
                return Err(EpError::NonFinite(format!(
                    "prior cavity for set {s} lost positive precision"
                )));
            }
            let (tilted, per_edge) = prior_sites::set_update(partition, k, prior, &cav)?;
            // A tilted gradient variance above the cavity's marks a
            // multi-modal edge whose site degenerates to a linear tilt; its
            // mean update has loop gain eta * var_ratio and oscillates
            // unstably once that product passes 2. Slow those edges down so
            // the gain stays below 1.8; pure damping leaves the EP fixed
            // points untouched.
            let mut scale = vec![1.0; n];
            for (e, &(i, j)) in partition.set(k).iter().enumerate() {
                let (i, j) = (i as usize, j as usize);
                let cbar = cav.var[i] + cav.var[j];
                let gain = config.damping * per_edge[e].variance / cbar;
                if gain > 1.8 {
                    scale[i] = 1.8 / gain;
                    scale[j] = 1.8 / gain;
                }
            }
            refine_site(&mut state, s, &cav, &tilted, Some(&scale), config, &mut repaired)?;
        }

        let max_mean_change = state
            .global
            .mean
            .iter()
            .zip(&prev.mean)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let max_var_change = state
            .global
            .var
            .iter()
            .zip(&prev.var)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        history.push(IterationStats {
            iteration: iter + 1,
            max_mean_change,
            max_var_change,
            repaired,
            cg_iterations,
            site_order: order,
        });
        if max_mean_change < config.tol {
            converged = true;
            break;
        }
    }

    Ok(EpResult {
        mean: state.global.mean.clone(),
        var: state.global.var.clone(),
        iterations: history.len(),
        converged,
        history,
        state,
    })
}

fn refine_site(
    state: &mut EpState,
    idx: usize,
    cav: &DiagGaussian,
    tilted: &DiagGaussian,
    damp_scale: Option<&[f64]>,
    config: &EpConfig,
    repaired: &mut usize,
) -> Result<()> {
    let n = cav.len();
    let mut proposed = NaturalSite::zeros(n);
    for i in 0..n {
        let tp = 1.0 / tilted.var[i];
        let ts = tilted.mean[i] * tp;
        proposed.precision[i] = tp - 1.0 / cav.var[i];
        proposed.shift[i] = ts - cav.mean[i] / cav.var[i];
    }
    proposed.assert_finite("proposed site update")?;
    let damped = match damp_scale {
        None => gaussian::damp(&state.sites[idx], &proposed, config.damping)?,
        Some(scale) => {
            let old = &state.sites[idx];
            let mut out = NaturalSite::zeros(n);
            for i in 0..n {
                let eta = config.damping * scale[i];
                out.precision[i] = eta * proposed.precision[i] + (1.0 - eta) * old.precision[i];
                out.shift[i] = eta * proposed.shift[i] + (1.0 - eta) * old.shift[i];
            }
            out
        }
    };
    *repaired += gaussian::repair_count(&damped);
    state.sites[idx] = gaussian::repair_variances(&damped, config.variance_cap);
    state.global = global_of(&state.sites)?;
    Ok(())
}

/// Tilted gradient marginals of the current state, in global edge order.
pub fn gradient_marginals(
    partition: &EdgePartition,
    prior: &PriorSpec,
    state: &EpState,
) -> Result<GradientMarginals> {
    let mut out = GradientMarginals::with_len(partition.edge_count());
    for k in 0..4 {
        let (cav, bad) = gaussian::cavity(&state.global, &state.sites[k + 1])?;
        if bad.iter().any(|&b| b) {
            return Err(EpError::NonFinite(format!(
                "prior cavity for set {} lost positive precision",
                k + 1
            )));
        }
        for (m, &(i, j)) in partition.set(k).iter().enumerate() {
            let t = prior_sites::edge_tilted(
                prior,
                (cav.mean[i as usize], cav.var[i as usize]),
                (cav.mean[j as usize], cav.var[j as usize]),
            )?;
            let g = partition.gradient_index(k, m);
            out.mean[g] = t.mean;
            out.var[g] = (t.variance).max(0.0);
            out.abs_mean[g] = t.abs_mean;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ForwardOp;

    fn denoise_model(y: Vec<f64>, h: usize, w: usize, xi: f64) -> LikelihoodModel {
        LikelihoodModel::new(ForwardOp::identity(h, w), y, xi).unwrap()
    }

    #[test]
    fn smooth_data_is_barely_changed_under_weak_prior() {
        let y: Vec<f64> = (0..16).map(|i| 5.0 + 0.01 * (i % 4) as f64).collect();
        let model = denoise_model(y.clone(), 4, 4, 0.1);
        let partition = EdgePartition::build(4, 4).unwrap();
        let prior = PriorSpec::L1Tv { lambda: 1e-6 };
        let res = run_ep(&model, &partition, &prior, &EpConfig::default(), None).unwrap();
        assert!(res.converged);
        for (m, yi) in res.mean.iter().zip(&y) {
            assert!((m - yi).abs() < 1e-3, "{m} vs {yi}");
        }
        for v in &res.var {
            assert!((v - 0.1).abs() < 1e-3);
        }
    }

    #[test]
    fn strong_prior_flattens_the_image() {
        let y: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mean_y = 0.0;
        let model = denoise_model(y, 4, 4, 1.0);
        let partition = EdgePartition::build(4, 4).unwrap();
        let prior = PriorSpec::L1Tv { lambda: 50.0 };
        let res = run_ep(&model, &partition, &prior, &EpConfig::default(), None).unwrap();
        for m in &res.mean {
            assert!((m - mean_y).abs() < 0.05, "pixel stayed at {m}");
        }
        // Pooling observations shrinks the marginal variance well below xi.
        for v in &res.var {
            assert!(*v < 0.5);
        }
    }

    #[test]
    fn iterations_are_logged_and_order_reshuffled() {
        let y: Vec<f64> = (0..36).map(|i| (i as f64 * 0.37).sin()).collect();
        let model = denoise_model(y, 6, 6, 0.5);
        let partition = EdgePartition::build(6, 6).unwrap();
        let prior = PriorSpec::L1Tv { lambda: 1.0 };
        let cfg = EpConfig {
            max_iter: 6,
            tol: 0.0,
            ..EpConfig::default()
        };
        let res = run_ep(&model, &partition, &prior, &cfg, None).unwrap();
        assert_eq!(res.history.len(), 6);
        assert!(!res.converged);
        let orders: Vec<[usize; 4]> = res.history.iter().map(|h| h.site_order).collect();
        assert!(orders.iter().any(|o| o != &orders[0]), "order never changed");
        for h in &res.history {
            let mut sorted = h.site_order;
            sorted.sort_unstable();
            assert_eq!(sorted, [1, 2, 3, 4]);
        }
    }

    #[test]
    fn runs_are_deterministic_for_fixed_seed() {
        let y: Vec<f64> = (0..16).map(|i| (i as f64 * 0.9).cos()).collect();
        let model = denoise_model(y, 4, 4, 0.3);
        let partition = EdgePartition::build(4, 4).unwrap();
        let prior = PriorSpec::Mog2 {
            omega: 0.3,
            s1_sq: 1.0,
            s2_sq: 0.01,
        };
        let a = run_ep(&model, &partition, &prior, &EpConfig::default(), None).unwrap();
        let b = run_ep(&model, &partition, &prior, &EpConfig::default(), None).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.var, b.var);
        let cfg = EpConfig {
            seed: 1,
            ..EpConfig::default()
        };
        let c = run_ep(&model, &partition, &prior, &cfg, None).unwrap();
        // Different sweep order moves the trajectory but not the answer much.
        assert_ne!(a.mean, c.mean);
        for (x, y) in a.mean.iter().zip(&c.mean) {
            assert!((x - y).abs() < 0.05, "{x} vs {y}");
        }
    }

    #[test]
    fn warm_start_resumes_converged_state() {
        let y: Vec<f64> = (0..16).map(|i| (i as f64 * 1.7).sin()).collect();
        let model = denoise_model(y, 4, 4, 0.2);
        let partition = EdgePartition::build(4, 4).unwrap();
        let prior = PriorSpec::L1Tv { lambda: 2.0 };
        let first = run_ep(&model, &partition, &prior, &EpConfig::default(), None).unwrap();
        assert!(first.converged);
        let resumed = run_ep(
            &model,
            &partition,
            &prior,
            &EpConfig::default(),
            Some(first.state.clone()),
        )
        .unwrap();
        assert!(resumed.converged);
        assert_eq!(resumed.iterations, 1);
        for (a, b) in first.mean.iter().zip(&resumed.mean) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn gradient_marginals_cover_all_edges() {
        let y: Vec<f64> = (0..12).map(|i| (i % 3) as f64).collect();
        let model = denoise_model(y, 3, 4, 0.4);
        let partition = EdgePartition::build(3, 4).unwrap();
        let prior = PriorSpec::L1Tv { lambda: 1.0 };
        let res = run_ep(&model, &partition, &prior, &EpConfig::default(), None).unwrap();
        let gm = gradient_marginals(&partition, &prior, &res.state).unwrap();
        assert_eq!(gm.mean.len(), partition.edge_count());
        for g in 0..gm.mean.len() {
            assert!(gm.var[g] > 0.0);
            assert!(gm.abs_mean[g] >= gm.mean[g].abs() - 1e-12);
        }
    }

    #[test]
    fn mismatched_partition_is_rejected() {
        let model = denoise_model(vec![0.0; 16], 4, 4, 0.5);
        let partition = EdgePartition::build(4, 5).unwrap();
        let prior = PriorSpec::L1Tv { lambda: 1.0 };
        assert!(run_ep(&model, &partition, &prior, &EpConfig::default(), None).is_err());
    }
}
