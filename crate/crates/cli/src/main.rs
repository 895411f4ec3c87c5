//! `eptv` — approximate-Bayesian image restoration from the command line.
//!
//! Four subcommands share a common flag set: `denoise` (identity operator),
//! `deconvolve` (circular convolution), `cs` (compressive sensing with
//! synthesized measurements) and `estimate-lambda` (EM estimation of the TV
//! scale). Each run writes a restored PGM, float32 rasters of the posterior
//! mean and variance, a JSON-lines iteration log and a single-object JSON
//! summary into the output directory.

mod config;
mod run;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::ConfigFile;
use eptv_core::{LambdaRule, PriorSpec};
use run::{MatrixKind, RunSpec, TaskSpec};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "eptv", version, about = "Bayesian image restoration with expectation propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Remove additive Gaussian noise from an image.
    Denoise(CommonArgs),
    /// Restore an image degraded by circular convolution.
    Deconvolve(DeconvolveArgs),
    /// Reconstruct an image from synthesized compressive measurements.
    Cs(CsArgs),
    /// Estimate the TV prior scale by expectation maximization.
    EstimateLambda(EstimateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PriorKind {
    L1tv,
    Mog2,
    Bg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleKind {
    #[value(name = "255")]
    Integer,
    #[value(name = "1")]
    Unit,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MatrixArg {
    Gaussian,
    Hadamard,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum A0Option {
    X,
    U,
    Tilted,
}

#[derive(Args)]
struct CommonArgs {
    /// Observed image (binary PGM). For `cs`, and for `deconvolve --bsnr`,
    /// this is the clean image the observation is synthesized from.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Ground-truth image for metric reporting.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory receiving every output artifact.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Noise variance of the observation model.
    #[arg(long)]
    xi: Option<f64>,
    /// Gradient prior family.
    #[arg(long, value_enum)]
    prior: Option<PriorKind>,
    /// TV scale (l1tv). Omitting it estimates the scale by EM.
    #[arg(long)]
    lambda: Option<f64>,
    /// Mixture weight (mog2: broad component; bg: slab).
    #[arg(long)]
    omega: Option<f64>,
    /// Larger mog2 component variance.
    #[arg(long)]
    s1sq: Option<f64>,
    /// Smaller mog2 component variance.
    #[arg(long)]
    s2sq: Option<f64>,
    /// Slab variance (bg).
    #[arg(long)]
    ssq: Option<f64>,
    /// EP damping factor.
    #[arg(long)]
    eta: Option<f64>,
    /// Maximum EP sweeps.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Seed for site ordering, operators and synthesized noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Pixel scale: 255 keeps stored integers, 1 rescales to [0, 1].
    #[arg(long, value_enum)]
    scale: Option<ScaleKind>,
    /// Iteration log path (default: <output-dir>/iterations.jsonl).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Additionally write the variance map on a log10 scale.
    #[arg(long)]
    log_variance: bool,
    /// key=value file supplying defaults for any flag; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DeconvolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Blur kernel: `uniformN` or a text file (height width taps...).
    #[arg(long)]
    kernel: Option<String>,
    /// Synthesize the observation from `--input` at this blurred SNR (dB).
    #[arg(long)]
    bsnr: Option<f64>,
}

#[derive(Args)]
struct CsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Measurement operator family.
    #[arg(long, value_enum)]
    matrix: Option<MatrixArg>,
    /// Sampling ratio M/N in (0, 1].
    #[arg(long)]
    ratio: Option<f64>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Maximum EM iterations.
    #[arg(long)]
    em_iters: Option<usize>,
    /// Expectation feeding the scale update.
    #[arg(long, value_enum)]
    a0_option: Option<A0Option>,
    /// EP sweeps per EM iteration; 1 selects the fast interleaved variant.
    #[arg(long)]
    ep_loops: Option<usize>,
}

fn resolve_prior(c: &CommonArgs) -> Result<Option<PriorSpec>, String> {
    let kind = c.prior.unwrap_or(PriorKind::L1tv);
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| format!("--{flag} is required for this prior"))
    };
    match kind {
        PriorKind::L1tv => Ok(c.lambda.map(|lambda| PriorSpec::L1Tv { lambda })),
        PriorKind::Mog2 => Ok(Some(PriorSpec::Mog2 {
            omega: need(c.omega, "omega")?,
            s1_sq: need(c.s1sq, "s1sq")?,
            s2_sq: need(c.s2sq, "s2sq")?,
        })),
        PriorKind::Bg => Ok(Some(PriorSpec::Bg {
            omega: need(c.omega, "omega")?,
            s_sq: need(c.ssq, "ssq")?,
        })),
    }
}

/// Merge config-file defaults into absent flags, then resolve.
fn resolve_common(c: &mut CommonArgs) -> Result<RunSpecPartial, String> {
    let cfg = match &c.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::empty(),
    };
    cfg.fill(&mut c.input, "input")?;
    cfg.fill(&mut c.truth, "truth")?;
    cfg.fill(&mut c.output_dir, "output-dir")?;
    cfg.fill(&mut c.xi, "xi")?;
    cfg.fill(&mut c.lambda, "lambda")?;
    cfg.fill(&mut c.omega, "omega")?;
    cfg.fill(&mut c.s1sq, "s1sq")?;
    cfg.fill(&mut c.s2sq, "s2sq")?;
    cfg.fill(&mut c.ssq, "ssq")?;
    cfg.fill(&mut c.eta, "eta")?;
    cfg.fill(&mut c.max_iter, "max-iter")?;
    cfg.fill(&mut c.seed, "seed")?;
    cfg.fill(&mut c.log, "log")?;
    if c.prior.is_none() {
        let mut name: Option<String> = None;
        cfg.fill(&mut name, "prior")?;
        if let Some(name) = name {
            c.prior = Some(
                PriorKind::from_str(&name, true)
                    .map_err(|_| format!("config key prior={name}: unknown prior"))?,
            );
        }
    }
    if c.scale.is_none() {
        let mut raw: Option<String> = None;
        cfg.fill(&mut raw, "scale")?;
        if let Some(raw) = raw {
            c.scale = Some(
                ScaleKind::from_str(&raw, true)
                    .map_err(|_| format!("config key scale={raw}: expected 255 or 1"))?,
            );
        }
    }
    Ok(RunSpecPartial {
        input: c
            .input
            .clone()
            .ok_or_else(|| "--input is required".to_string())?,
        truth: c.truth.clone(),
        output_dir: c.output_dir.clone().unwrap_or_else(|| PathBuf::from(".")),
        xi: c.xi,
        prior: resolve_prior(c)?,
        eta: c.eta.unwrap_or(0.9),
        max_iter: c.max_iter.unwrap_or(20),
        seed: c.seed.unwrap_or(0),
        unit_scale: c.scale == Some(ScaleKind::Unit),
        log_path: c.log.clone(),
        log_variance: c.log_variance,
        config: cfg,
    })
}

struct RunSpecPartial {
    input: PathBuf,
    truth: Option<PathBuf>,
    output_dir: PathBuf,
    xi: Option<f64>,
    prior: Option<PriorSpec>,
    eta: f64,
    max_iter: usize,
    seed: u64,
    unit_scale: bool,
    log_path: Option<PathBuf>,
    log_variance: bool,
    config: ConfigFile,
}

impl RunSpecPartial {
    fn into_spec(self, task: TaskSpec) -> RunSpec {
        RunSpec {
            task,
            input: self.input,
            truth: self.truth,
            output_dir: self.output_dir,
            xi: self.xi,
            prior: self.prior,
            eta: self.eta,
            max_iter: self.max_iter,
            seed: self.seed,
            unit_scale: self.unit_scale,
            log_path: self.log_path,
            log_variance: self.log_variance,
        }
    }
}

fn build_spec(command: Command) -> Result<RunSpec, String> {
    match command {
        Command::Denoise(mut c) => {
            let p = resolve_common(&mut c)?;
            Ok(p.into_spec(TaskSpec::Denoise))
        }
        Command::Deconvolve(mut a) => {
            let p = resolve_common(&mut a.common)?;
            p.config.fill(&mut a.kernel, "kernel")?;
            p.config.fill(&mut a.bsnr, "bsnr")?;
            let kernel = a
                .kernel
                .clone()
                .ok_or_else(|| "--kernel is required".to_string())?;
            let task = TaskSpec::Deconvolve {
                kernel,
                bsnr: a.bsnr,
            };
            Ok(p.into_spec(task))
        }
        Command::Cs(mut a) => {
            let p = resolve_common(&mut a.common)?;
            p.config.fill(&mut a.ratio, "ratio")?;
            if a.matrix.is_none() {
                let mut raw: Option<String> = None;
                p.config.fill(&mut raw, "matrix")?;
                if let Some(raw) = raw {
                    a.matrix = Some(
                        MatrixArg::from_str(&raw, true)
                            .map_err(|_| format!("config key matrix={raw}: unknown matrix"))?,
                    );
                }
            }
            let matrix = match a.matrix.ok_or_else(|| "--matrix is required".to_string())? {
                MatrixArg::Gaussian => MatrixKind::Gaussian,
                MatrixArg::Hadamard => MatrixKind::Hadamard,
            };
            let ratio = a.ratio.ok_or_else(|| "--ratio is required".to_string())?;
            Ok(p.into_spec(TaskSpec::Cs { matrix, ratio }))
        }
        Command::EstimateLambda(mut a) => {
            let p = resolve_common(&mut a.common)?;
            p.config.fill(&mut a.em_iters, "em-iters")?;
            p.config.fill(&mut a.ep_loops, "ep-loops")?;
            if a.a0_option.is_none() {
                let mut raw: Option<String> = None;
                p.config.fill(&mut raw, "a0-option")?;
                if let Some(raw) = raw {
                    a.a0_option = Some(
                        A0Option::from_str(&raw, true)
                            .map_err(|_| format!("config key a0-option={raw}: unknown option"))?,
                    );
                }
            }
            let rule = match a.a0_option.unwrap_or(A0Option::Tilted) {
                A0Option::X => LambdaRule::OptionX,
                A0Option::U => LambdaRule::OptionU,
                A0Option::Tilted => LambdaRule::Tilted,
            };
            let task = TaskSpec::EstimateLambda {
                em_iters: a.em_iters.unwrap_or(20),
                rule,
                ep_loops: a.ep_loops.unwrap_or(1),
            };
            Ok(p.into_spec(task))
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = build_spec(cli.command).and_then(|spec| run::run(&spec));
    if let Err(msg) = result {
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
