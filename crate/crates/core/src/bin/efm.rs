//! Command-line entry point: simulate / detect / estimate / panel / oracle.

use clap::{Args, Parser, Subcommand, ValueEnum};
use elliptical_factors::error::{EfmError, Result};
use elliptical_factors::harness::{plots, run_experiment, ExperimentConfig};
use elliptical_factors::magnify::{
    detect_spurious, MagnificationConfig, MagnifierMode, ThresholdPolicy, WeightLaw,
};
use elliptical_factors::model::PanelMatrix;
use elliptical_factors::panel::{
    apply_transform, impute_missing, load_panel, rolling_estimate, ColumnTransform, ImputeMethod,
    LoadOptions, RollingConfig,
};
use elliptical_factors::spectral::EigenBackend;
use elliptical_factors::{
    clt_variance, estimate_factors, magnifier_constant, predict_outlier,
    q_regularizer, sample_radius_squared, theta_fixed_point, zeta_fixed_point,
    ConsistentSystem, NoFlagPolicy, PopulationModel, RadiusLaw, SystemPoint,
};
use rand_chacha::rand_core::SeedableRng;
use serde_json::json;
use std::path::PathBuf;

const SEED_ENV: &str = "EFM_MASTER_SEED";

#[derive(Parser)]
#[command(
    name = "efm",
    about = "Elliptical factor models: simulation, spurious-signal detection, factor counting",
    version
)]
struct Cli {
    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config-driven Monte Carlo experiment.
    Simulate(SimulateArgs),
    /// First-round spurious-signal detection on a CSV panel.
    Detect(DetectArgs),
    /// Combined two-round factor-number estimate on a CSV panel.
    Estimate(DetectArgs),
    /// Rolling-window workflow on a real panel.
    Panel(PanelArgs),
    /// Closed-form / fixed-point reference quantities as JSON.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override (also via EFM_MASTER_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Size preset: `paper` (p=n=1000, reps=1000, K=1000) or `desk`
    /// (p=n=400, reps=200, K=500).
    #[arg(long)]
    profile: Option<Profile>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    FixedSmall,
    PaperCeil,
    PaperFrac,
    Jump,
}

#[derive(Clone, Copy, ValueEnum)]
enum Orientation {
    /// Rows are time points, columns are variables (transposed internally).
    TimeRows,
    /// Rows are already variables (p x n as stored).
    VarRows,
}

#[derive(Args)]
struct DetectArgs {
    /// Input panel CSV (header row; optional leading date column).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "time-rows")]
    orientation: Orientation,
    /// Replication count K.
    #[arg(long = "K", default_value_t = 1000)]
    replications: usize,
    /// Number of leading indices examined.
    #[arg(long, default_value_t = 15)]
    o: usize,
    #[arg(long, value_enum, default_value = "fixed-small")]
    policy: PolicyArg,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 3.0)]
    rho: f64,
    /// Fixed magnifier interval `a,b`, or `adaptive` / `shared-adaptive`.
    #[arg(long, default_value = "0.1,1.9")]
    magnifier: String,
    /// Two-point weights instead of uniform.
    #[arg(long)]
    two_point: bool,
    /// Iterative top-k eigensolver (identical output contract).
    #[arg(long)]
    top_k: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Baseline threshold nu_n override (estimate only).
    #[arg(long)]
    nu: Option<f64>,
    /// Center and unit-scale each variable first.
    #[arg(long)]
    standardize: bool,
    #[arg(long, value_enum, default_value = "column-mean")]
    impute: ImputeArg,
    /// Output directory for report JSON and plot CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImputeArg {
    ColumnMean,
    Drop,
}

#[derive(Args)]
struct PanelArgs {
    #[arg(long)]
    input: PathBuf,
    /// Window length in rows.
    #[arg(long, default_value_t = 48)]
    window: usize,
    /// Step between window starts (window-sized steps tile the panel).
    #[arg(long, default_value_t = 48)]
    step: usize,
    /// Baseline gap-ratio threshold for real panels.
    #[arg(long, default_value_t = 9.0)]
    nu: f64,
    #[arg(long = "K", default_value_t = 200)]
    replications: usize,
    #[arg(long, default_value_t = 10)]
    o: usize,
    #[arg(long, value_enum, default_value = "column-mean")]
    impute: ImputeArg,
    #[arg(long, value_enum, default_value = "none")]
    transform: TransformArg,
    /// Disable per-window standardization.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    None,
    Diff,
    Logdiff,
}

#[derive(Args)]
struct OracleArgs {
    #[command(subcommand)]
    which: OracleCommand,
}

#[derive(Args, Clone)]
struct LawArgs {
    /// Radius law family.
    #[arg(long, value_enum, default_value = "const")]
    law: LawKind,
    /// Degrees of freedom (multivariate t).
    #[arg(long)]
    dof: Option<f64>,
    /// Tail index (pareto).
    #[arg(long)]
    alpha: Option<f64>,
    /// Shape (exponential-type).
    #[arg(long)]
    beta: Option<f64>,
    /// Ambient dimension bound to the law.
    #[arg(long)]
    p: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LawKind {
    T,
    Pareto,
    Exp,
    Const,
}

impl LawArgs {
    fn build(&self) -> Result<RadiusLaw> {
        let law = match self.law {
            LawKind::T => RadiusLaw::multivariate_t(
                self.dof.ok_or_else(|| EfmError::Config("--dof required for --law t".into()))?,
            )?,
            LawKind::Pareto => RadiusLaw::pareto(
                self.alpha
                    .ok_or_else(|| EfmError::Config("--alpha required for --law pareto".into()))?,
            )?,
            LawKind::Exp => RadiusLaw::exponential(
                self.beta.ok_or_else(|| EfmError::Config("--beta required for --law exp".into()))?,
            )?,
            LawKind::Const => RadiusLaw::constant(),
        };
        Ok(match self.p {
            Some(p) => law.for_dimension(p),
            None => law,
        })
    }
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Deterministic spike location theta_i.
    Theta {
        #[arg(long)]
        p: usize,
        /// Comma-separated descending spikes.
        #[arg(long)]
        spikes: String,
        #[arg(long, default_value_t = 1.0)]
        tail: f64,
        /// 1-based spike index.
        #[arg(long, default_value_t = 1)]
        index: usize,
    },
    /// Radius-aware spike location zeta_i.
    Zeta {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        spikes: String,
        #[arg(long, default_value_t = 1.0)]
        tail: f64,
        #[arg(long, default_value_t = 1)]
        index: usize,
        #[command(flatten)]
        law: LawArgs,
        /// Number of radius draws (defaults to p).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Limiting CLT variance 3 E[xi^4] E[w^2] - 1.
    Clt {
        #[command(flatten)]
        law: LawArgs,
        /// Magnifier interval `a,b`.
        #[arg(long)]
        magnifier: Option<String>,
    },
    /// Magnifier plateau constant (a^2 + ab + b^2)/3 - 1.
    Constant {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
    },
    /// Outlier location mu_1 from the self-consistent system.
    Outlier {
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 1.0)]
        tail: f64,
        #[command(flatten)]
        law: LawArgs,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Epsilon inside the regularizer q = n^(1/alpha - eps).
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
    },
}

fn parse_interval(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(EfmError::Config(format!("expected `a,b`, got `{text}`")));
    }
    let a: f64 =
        parts[0].trim().parse().map_err(|_| EfmError::Config(format!("bad interval `{text}`")))?;
    let b: f64 =
        parts[1].trim().parse().map_err(|_| EfmError::Config(format!("bad interval `{text}`")))?;
    Ok((a, b))
}

fn parse_spikes(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| EfmError::Config(format!("bad spike value `{s}`")))
        })
        .collect()
}

fn env_seed() -> Option<u64> {
    std::env::var(SEED_ENV).ok().and_then(|v| v.parse().ok())
}

fn effective_seed(flag: Option<u64>) -> u64 {
    flag.or_else(env_seed).unwrap_or(0)
}

fn load_matrix(args: &DetectArgs) -> Result<PanelMatrix> {
    let src = load_panel(&args.input, &LoadOptions::default())?;
    let impute = match args.impute {
        ImputeArg::ColumnMean => ImputeMethod::ColumnMean,
        ImputeArg::Drop => ImputeMethod::Drop,
    };
    let complete = impute_missing(&src, impute)?;
    let mut values = match args.orientation {
        Orientation::TimeRows => complete.t().to_owned(),
        Orientation::VarRows => complete,
    };
    if args.standardize {
        let n = values.ncols() as f64;
        for mut row in values.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|x| x - mean);
            let sd = (row.dot(&row) / n).sqrt();
            if sd > 1e-12 {
                row.mapv_inplace(|x| x / sd);
            }
        }
    }
    PanelMatrix::from_loaded(values, args.input.clone())
}

fn magnification_config(args: &DetectArgs) -> Result<MagnificationConfig> {
    let magnifier = match args.magnifier.as_str() {
        "adaptive" => MagnifierMode::AdaptivePerIndex,
        "shared-adaptive" => MagnifierMode::SharedAdaptive,
        text => {
            let (a, b) = parse_interval(text)?;
            MagnifierMode::Fixed { a, b }
        }
    };
    let threshold = match args.policy {
        PolicyArg::FixedSmall => ThresholdPolicy::FixedSmall { kappa: args.kappa },
        PolicyArg::PaperCeil => ThresholdPolicy::PaperCeil,
        PolicyArg::PaperFrac => ThresholdPolicy::PaperFrac,
        PolicyArg::Jump => ThresholdPolicy::Jump { rho: args.rho },
    };
    let cfg = MagnificationConfig {
        replications: args.replications,
        leading: args.o,
        magnifier,
        weight_law: if args.two_point { WeightLaw::TwoPoint } else { WeightLaw::Uniform },
        threshold,
        seed: effective_seed(args.seed),
        backend: if args.top_k { EigenBackend::TopK } else { EigenBackend::Dense },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_or_print(out: &Option<PathBuf>, name: &str, content: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), content)?;
        }
        None => println!("{content}"),
    }
    Ok(())
}

fn run() -> Result<i32> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit(2); the contract here is 1 for usage errors,
            // with help/version remaining success
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                print!("{e}");
                return Ok(0);
            }
            eprint!("{e}");
            return Ok(1);
        }
    };
    env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .init();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().ok();
    }

    match cli.command {
        Command::Simulate(args) => {
            let text = std::fs::read_to_string(&args.config)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(seed) = args.seed.or_else(env_seed) {
                cfg.master_seed = seed;
            }
            if let Some(out) = args.out {
                cfg.out_dir = Some(out);
            }
            match args.profile {
                Some(Profile::Paper) => {
                    cfg.model.p = 1000;
                    cfg.n = 1000;
                    cfg.reps = 1000;
                    cfg.magnification.replications = 1000;
                }
                Some(Profile::Desk) => {
                    cfg.model.p = 400;
                    cfg.n = 400;
                    cfg.reps = 200;
                    cfg.magnification.replications = 500;
                }
                None => {}
            }
            let table = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&table.summary)?);
            if table.summary.failed > 0 {
                return Ok(2);
            }
            Ok(0)
        }
        Command::Detect(args) => {
            let panel = load_matrix(&args)?;
            let cfg = magnification_config(&args)?;
            let cache = elliptical_factors::gram_matrix(&panel)?;
            let report = detect_spurious(&cache, &cfg)?;
            write_or_print(&args.out, "detection.json", &report.to_json()?)?;
            if let Some(dir) = &args.out {
                let mut buf = Vec::new();
                report.write_plot_csv(&mut buf)?;
                std::fs::write(dir.join("fluctuation.csv"), buf)?;
                std::fs::write(dir.join("config.echo.json"), serde_json::to_string_pretty(&cfg)?)?;
            }
            Ok(0)
        }
        Command::Estimate(args) => {
            let panel = load_matrix(&args)?;
            let cfg = magnification_config(&args)?;
            let cache = elliptical_factors::gram_matrix(&panel)?;
            let estimate = estimate_factors(&cache, &cfg, args.nu, NoFlagPolicy::default())?;
            println!(
                "r_hat = {} (method Ma, r* = {:?}, fallback {:?})",
                estimate.r_hat, estimate.diagnostics.r_star, estimate.diagnostics.fallback
            );
            write_or_print(&args.out, "estimate.json", &serde_json::to_string_pretty(&estimate)?)?;
            if let Some(dir) = &args.out {
                std::fs::write(dir.join("config.echo.json"), serde_json::to_string_pretty(&cfg)?)?;
            }
            Ok(0)
        }
        Command::Panel(args) => {
            let src = load_panel(&args.input, &LoadOptions::default())?;
            let impute = match args.impute {
                ImputeArg::ColumnMean => ImputeMethod::ColumnMean,
                ImputeArg::Drop => ImputeMethod::Drop,
            };
            let complete = impute_missing(&src, impute)?;
            let transformed = apply_transform(
                &complete,
                match args.transform {
                    TransformArg::None => ColumnTransform::None,
                    TransformArg::Diff => ColumnTransform::FirstDifference,
                    TransformArg::Logdiff => ColumnTransform::LogDifference,
                },
            )?;
            let cfg = RollingConfig {
                window: args.window,
                step: args.step,
                magnification: MagnificationConfig {
                    replications: args.replications,
                    leading: args.o,
                    seed: effective_seed(args.seed),
                    ..Default::default()
                },
                nu: Some(args.nu),
                standardize: !args.no_standardize,
                master_seed: effective_seed(args.seed),
            };
            let records = rolling_estimate(&transformed, src.dates.as_deref(), &cfg)?;
            let mut timeline = Vec::new();
            plots::factor_timeline(&records, &mut timeline)?;
            let timeline = String::from_utf8(timeline).expect("ascii csv");
            match &args.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("timeline.csv"), &timeline)?;
                    std::fs::write(
                        dir.join("windows.json"),
                        serde_json::to_string_pretty(&records)?,
                    )?;
                    std::fs::write(
                        dir.join("config.echo.json"),
                        serde_json::to_string_pretty(&serde_json::json!({
                            "schema_version": 1,
                            "window": cfg.window,
                            "step": cfg.step,
                            "nu": cfg.nu,
                            "standardize": cfg.standardize,
                            "master_seed": cfg.master_seed,
                            "magnification": cfg.magnification,
                        }))?,
                    )?;
                }
                None => println!("{timeline}"),
            }
            Ok(0)
        }
        Command::Oracle(args) => {
            let out = match args.which {
                OracleCommand::Theta { p, spikes, tail, index } => {
                    let spikes = parse_spikes(&spikes)?;
                    let m = spikes.len();
                    let model = PopulationModel::new(p, spikes, vec![tail; p - m])?;
                    let theta = theta_fixed_point(&model, index)?;
                    json!({ "schema_version": 1, "theta": theta, "index": index })
                }
                OracleCommand::Zeta { p, spikes, tail, index, law, n, seed } => {
                    let spikes = parse_spikes(&spikes)?;
                    let m = spikes.len();
                    let model = PopulationModel::new(p, spikes, vec![tail; p - m])?;
                    let law = law.build()?.for_dimension(p);
                    let n = n.unwrap_or(p);
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    let xi2 = sample_radius_squared(&law, n, &mut rng)?;
                    let theta = theta_fixed_point(&model, index)?;
                    let zeta = zeta_fixed_point(&model, &xi2, theta)?;
                    json!({ "schema_version": 1, "theta": theta, "zeta": zeta, "index": index })
                }
                OracleCommand::Clt { law, magnifier } => {
                    let law = law.build()?;
                    let interval = magnifier.as_deref().map(parse_interval).transpose()?;
                    let v = clt_variance(&law, interval)?;
                    json!({ "schema_version": 1, "variance": v })
                }
                OracleCommand::Constant { a, b } => {
                    let c = magnifier_constant(a, b)?;
                    json!({ "schema_version": 1, "c": c })
                }
                OracleCommand::Outlier { p, tail, law, n, seed, epsilon } => {
                    let law = law.build()?.for_dimension(p);
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    let xi2 = sample_radius_squared(&law, n, &mut rng)?;
                    let q = q_regularizer(&law, n, epsilon);
                    let sys =
                        ConsistentSystem::new(vec![tail; p], xi2, q, SystemPoint::Real(1.0))?;
                    let pred = predict_outlier(&sys)?;
                    json!({
                        "schema_version": 1,
                        "mu1": pred.mu1,
                        "q": q,
                        "ratio_to_sigma_bar": pred.ratio_to_sigma_bar,
                        "separation_warning": pred.separation_warning,
                    })
                }
            };
            println!("{}", serde_json::to_string(&out)?);
            Ok(0)
        }
    }
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
