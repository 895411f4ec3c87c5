//! Task execution: builds the forward model, runs EP or EP-EM, and writes
//! every output artifact (restored image, variance map, iteration log,
//! summary record).

use eptv_core::io::{read_pgm, write_f32_raster, write_pgm};
use eptv_core::likelihood::VarianceStrategy;
use eptv_core::metrics::{mse, psnr};
use eptv_core::{
    run_ep, run_ep_em, EdgePartition, EmConfig, EpConfig, EpResult, ForwardOp, Kernel2D,
    LambdaRule, LikelihoodModel, PriorSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Gaussian,
    Hadamard,
}

#[derive(Debug, Clone)]
pub enum TaskSpec {
    Denoise,
    Deconvolve {
        kernel: String,
        bsnr: Option<f64>,
    },
    Cs {
        matrix: MatrixKind,
        ratio: f64,
    },
    EstimateLambda {
        em_iters: usize,
        rule: LambdaRule,
        ep_loops: usize,
    },
}

impl TaskSpec {
    fn name(&self) -> &'static str {
        match self {
            TaskSpec::Denoise => "denoise",
            TaskSpec::Deconvolve { .. } => "deconvolve",
            TaskSpec::Cs { .. } => "cs",
            TaskSpec::EstimateLambda { .. } => "estimate-lambda",
        }
    }
}

/// Fully resolved run configuration (flags merged with any config file).
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub task: TaskSpec,
    pub input: PathBuf,
    pub truth: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub xi: Option<f64>,
    pub prior: Option<PriorSpec>,
    pub eta: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// `true` rescales pixel data to `[0, 1]`; otherwise the stored
    /// `0..maxval` integers are used as-is.
    pub unit_scale: bool,
    pub log_path: Option<PathBuf>,
    pub log_variance: bool,
}

struct LoadedImage {
    data: Vec<f64>,
    height: usize,
    width: usize,
    maxval: u16,
}

fn load_image(path: &Path, unit_scale: bool) -> Result<LoadedImage, String> {
    let img = read_pgm(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let scale = if unit_scale { img.maxval as f64 } else { 1.0 };
    Ok(LoadedImage {
        data: img.data.iter().map(|v| v / scale).collect(),
        height: img.height,
        width: img.width,
        maxval: img.maxval,
    })
}

fn parse_kernel(spec: &str) -> Result<Kernel2D, String> {
    if let Some(size) = spec.strip_prefix("uniform") {
        let size: usize = size
            .parse()
            .map_err(|_| format!("bad kernel spec {spec:?}: expected uniformN or a path"))?;
        return Ok(Kernel2D::uniform(size));
    }
    // A text file: two dimensions followed by height*width taps.
    let text = std::fs::read_to_string(spec).map_err(|e| format!("kernel {spec}: {e}"))?;
    let mut nums = text.split_whitespace();
    let h: usize = nums
        .next()
        .ok_or("empty kernel file")?
        .parse()
        .map_err(|e| format!("kernel height: {e}"))?;
    let w: usize = nums
        .next()
        .ok_or("kernel file missing width")?
        .parse()
        .map_err(|e| format!("kernel width: {e}"))?;
    let taps: Vec<f64> = nums
        .map(|t| t.parse().map_err(|e| format!("kernel tap {t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    Kernel2D::new(taps, h, w).map_err(|e| e.to_string())
}

fn gaussian_noise(n: usize, std_dev: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(0x6e6f_6973_65); // independent of operator streams
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            std_dev * g
        })
        .collect()
}

fn sample_variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
}

struct Outcome {
    ep: EpResult,
    lambda: Option<f64>,
    lambda_trace: Option<Vec<f64>>,
    em_iterations: Option<usize>,
    em_converged: Option<bool>,
}

fn solve(
    model: &LikelihoodModel,
    partition: &EdgePartition,
    prior: Option<&PriorSpec>,
    ep_cfg: &EpConfig,
    em_override: Option<(usize, LambdaRule, bool)>,
) -> Result<Outcome, String> {
    // A concrete prior runs plain EP. Otherwise the TV scale is estimated
    // by the EM outer loop (always the case for estimate-lambda).
    let run_em = em_override.is_some() || prior.is_none();
    if run_em {
        let (max_iter, rule, fast) = em_override.unwrap_or((20, LambdaRule::Tilted, true));
        let lambda_init = match prior {
            Some(PriorSpec::L1Tv { lambda }) => Some(*lambda),
            Some(other) => {
                return Err(format!(
                    "scale estimation applies to the l1tv prior, not {other:?}"
                ))
            }
            None => None,
        };
        let cfg = EmConfig {
            ep: *ep_cfg,
            max_iter,
            rule,
            lambda_init,
            fast,
            ..EmConfig::default()
        };
        let em = run_ep_em(model, partition, &cfg).map_err(|e| e.to_string())?;
        Ok(Outcome {
            ep: em.ep,
            lambda: Some(em.lambda),
            lambda_trace: Some(em.lambda_history),
            em_iterations: Some(em.iterations),
            em_converged: Some(em.converged),
        })
    } else {
        let prior = prior.unwrap();
        let ep = run_ep(model, partition, prior, ep_cfg, None).map_err(|e| e.to_string())?;
        let lambda = match prior {
            PriorSpec::L1Tv { lambda } => Some(*lambda),
            _ => None,
        };
        Ok(Outcome {
            ep,
            lambda,
            lambda_trace: None,
            em_iterations: None,
            em_converged: None,
        })
    }
}

fn prior_json(prior: Option<&PriorSpec>) -> serde_json::Value {
    match prior {
        Some(PriorSpec::L1Tv { lambda }) => json!({"kind": "l1tv", "lambda": lambda}),
        Some(PriorSpec::Mog2 {
            omega,
            s1_sq,
            s2_sq,
        }) => json!({"kind": "mog2", "omega": omega, "s1sq": s1_sq, "s2sq": s2_sq}),
        Some(PriorSpec::Bg { omega, s_sq }) => json!({"kind": "bg", "omega": omega, "ssq": s_sq}),
        None => json!({"kind": "l1tv", "lambda": "estimated"}),
    }
}

pub fn run(spec: &RunSpec) -> Result<(), String> {
    let started = std::time::Instant::now();
    let input = load_image(&spec.input, spec.unit_scale)?;
    let (h, w) = (input.height, input.width);
    let truth = match &spec.truth {
        Some(p) => {
            let t = load_image(p, spec.unit_scale)?;
            if (t.height, t.width) != (h, w) {
                return Err(format!(
                    "truth is {}x{}, input is {h}x{w}",
                    t.height, t.width
                ));
            }
            Some(t.data)
        }
        None => None,
    };

    if let Some(p) = &spec.prior {
        p.validate().map_err(|e| e.to_string())?;
    }
    let partition = EdgePartition::build(h, w).map_err(|e| e.to_string())?;
    let ep_cfg = EpConfig {
        damping: spec.eta,
        max_iter: spec.max_iter,
        seed: spec.seed,
        ..EpConfig::default()
    };

    let require_xi = || {
        spec.xi
            .ok_or_else(|| "--xi is required for this task".to_string())
    };

    // Build the model (operator + observation) and remember the effective
    // truth/xi where the task synthesizes its own observation.
    let (model, truth, extra): (LikelihoodModel, Option<Vec<f64>>, serde_json::Value) =
        match &spec.task {
            TaskSpec::Denoise | TaskSpec::EstimateLambda { .. } => {
                let xi = require_xi()?;
                let op = ForwardOp::identity(h, w);
                let model = LikelihoodModel::new(op, input.data.clone(), xi)
                    .map_err(|e| e.to_string())?;
                (model, truth, json!({}))
            }
            TaskSpec::Deconvolve { kernel, bsnr } => {
                let op = ForwardOp::conv2d(h, w, parse_kernel(kernel)?)
                    .map_err(|e| e.to_string())?;
                match bsnr {
                    Some(bsnr) => {
                        // Input is the clean image: blur it and add noise at
                        // the requested blurred signal-to-noise ratio.
                        let blurred = op.apply(&input.data).map_err(|e| e.to_string())?;
                        let noise_var = sample_variance(&blurred) / 10f64.powf(bsnr / 10.0);
                        let noise = gaussian_noise(blurred.len(), noise_var.sqrt(), spec.seed);
                        let y: Vec<f64> =
                            blurred.iter().zip(&noise).map(|(a, b)| a + b).collect();
                        let xi = spec.xi.unwrap_or(noise_var);
                        let model =
                            LikelihoodModel::new(op, y, xi).map_err(|e| e.to_string())?;
                        let truth = truth.or_else(|| Some(input.data.clone()));
                        (model, truth, json!({"bsnr_db": bsnr, "noise_var": noise_var}))
                    }
                    None => {
                        let xi = require_xi()?;
                        let model = LikelihoodModel::new(op, input.data.clone(), xi)
                            .map_err(|e| e.to_string())?;
                        (model, truth, json!({}))
                    }
                }
            }
            TaskSpec::Cs { matrix, ratio } => {
                // Input is the ground truth; measurements are synthesized.
                if !(*ratio > 0.0 && *ratio <= 1.0) {
                    return Err(format!("--ratio must lie in (0, 1], got {ratio}"));
                }
                let xi = require_xi()?;
                let n = h * w;
                let rows = ((*ratio * n as f64).round() as usize).max(1);
                let op = match matrix {
                    MatrixKind::Gaussian => ForwardOp::gaussian_iid(h, w, rows, spec.seed),
                    MatrixKind::Hadamard => ForwardOp::hadamard(h, w, rows, spec.seed),
                }
                .map_err(|e| e.to_string())?;
                let clean = op.apply(&input.data).map_err(|e| e.to_string())?;
                let noise = gaussian_noise(rows, xi.sqrt(), spec.seed);
                let y: Vec<f64> = clean.iter().zip(&noise).map(|(a, b)| a + b).collect();
                let model = LikelihoodModel::new(op, y, xi).map_err(|e| e.to_string())?;
                let truth = truth.or_else(|| Some(input.data.clone()));
                (model, truth, json!({"measurements": rows}))
            }
        };

    let em_override = match &spec.task {
        TaskSpec::EstimateLambda {
            em_iters,
            rule,
            ep_loops,
        } => Some((*em_iters, *rule, *ep_loops <= 1)),
        _ => None,
    };
    let outcome = solve(&model, &partition, spec.prior.as_ref(), &ep_cfg, em_override)?;

    // All computation succeeded; only now touch the filesystem.
    std::fs::create_dir_all(&spec.output_dir)
        .map_err(|e| format!("{}: {e}", spec.output_dir.display()))?;
    let out = |name: &str| spec.output_dir.join(name);

    let display_scale = if spec.unit_scale {
        input.maxval as f64
    } else {
        1.0
    };
    let restored_px: Vec<f64> = outcome.ep.mean.iter().map(|v| v * display_scale).collect();
    write_pgm(out("restored.pgm"), &restored_px, h, w, input.maxval)
        .map_err(|e| e.to_string())?;
    write_f32_raster(out("restored.f32"), &outcome.ep.mean, h, w).map_err(|e| e.to_string())?;
    write_f32_raster(out("variance.f32"), &outcome.ep.var, h, w).map_err(|e| e.to_string())?;
    if spec.log_variance {
        let logv: Vec<f64> = outcome
            .ep
            .var
            .iter()
            .map(|v| v.max(f64::MIN_POSITIVE).log10())
            .collect();
        write_f32_raster(out("variance_log10.f32"), &logv, h, w).map_err(|e| e.to_string())?;
    }

    let log_path = spec
        .log_path
        .clone()
        .unwrap_or_else(|| out("iterations.jsonl"));
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| format!("{}: {e}", log_path.display()))?,
    );
    if let Some(trace) = &outcome.lambda_trace {
        for (k, l) in trace.iter().enumerate() {
            writeln!(log, "{}", json!({"em_iteration": k, "lambda": l}))
                .map_err(|e| e.to_string())?;
        }
    }
    for stat in &outcome.ep.history {
        writeln!(log, "{}", serde_json::to_string(stat).unwrap()).map_err(|e| e.to_string())?;
    }
    log.flush().map_err(|e| e.to_string())?;

    let metrics = truth.as_ref().map(|t| {
        let peak = if spec.unit_scale {
            1.0
        } else {
            input.maxval as f64
        };
        let e = mse(&outcome.ep.mean, t).unwrap();
        let p = psnr(&outcome.ep.mean, t, peak).unwrap();
        json!({"mse": e, "psnr_db": if p.is_finite() { json!(p) } else { json!("inf") }})
    });

    let strategy = VarianceStrategy::auto(&model.op);
    let summary = json!({
        "task": spec.task.name(),
        "input": spec.input.display().to_string(),
        "height": h,
        "width": w,
        "xi": model.xi,
        "scale": if spec.unit_scale { 1 } else { 255 },
        "seed": spec.seed,
        "operator": model.op.kind_name(),
        "strategy": strategy.name(),
        "prior": prior_json(spec.prior.as_ref()),
        "lambda": outcome.lambda,
        "lambda_trace": outcome.lambda_trace,
        "em_iterations": outcome.em_iterations,
        "em_converged": outcome.em_converged,
        "iterations": outcome.ep.iterations,
        "converged": outcome.ep.converged,
        "metrics": metrics,
        "runtime_seconds": started.elapsed().as_secs_f64(),
        "task_detail": extra,
        "outputs": {
            "restored_pgm": out("restored.pgm").display().to_string(),
            "restored_f32": out("restored.f32").display().to_string(),
            "variance_f32": out("variance.f32").display().to_string(),
            "log": log_path.display().to_string(),
        },
    });
    let summary_path = out("summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).unwrap(),
    )
    .map_err(|e| format!("{}: {e}", summary_path.display()))?;
    println!("{}", serde_json::to_string(&summary).unwrap());
    Ok(())
}
