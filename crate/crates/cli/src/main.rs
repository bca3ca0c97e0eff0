use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wishart_core::bundled::MAX_BUNDLED_ORDER;
use wishart_core::mc::{depth_simulate, mc_output_variance};
use wishart_core::moment_eval::{convergence_bound, expected_trace_power, marginal_variance_series};
use wishart_core::output::{depth_csv, variance_csv, DepthRow};
use wishart_core::solver::{evaluate_variance, solve_sigma, variance_sweep};
use wishart_core::wick::moment_table;
use wishart_core::{
    Activation, Error, EvalOptions, LayerSpec, McConfig, Method, MomentSet, Scaling, TruncationPolicy, VariancePoint,
    WishartSpec,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NO_SOLUTION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "wishart",
    version,
    about = "Wishart trace moments and variance analysis for normalized Lipschitz layers"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write output here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the coefficient table of E[tr(S^k)], enumerated from scratch.
    Moments {
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value_t = TableFormat::Json)]
        format: TableFormat,
    },
    /// Evaluate E[tr(S^k)] for S = W Wᵀ with W an m×n Gaussian matrix.
    Eval {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        sigma2: f64,
    },
    /// Marginal output variance of one normalized layer.
    Variance {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        sigma2: f64,
        #[command(flatten)]
        layer: LayerArgs,
        #[arg(long, value_enum, default_value_t = MethodArg::Mc)]
        method: MethodArg,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_enum, default_value_t = RecordFormat::Csv)]
        format: RecordFormat,
    },
    /// Series against Monte Carlo on square layers.
    Validate {
        /// Square sizes, as `2..9` or a comma list.
        #[arg(long, value_parser = parse_sizes, default_value = "2..9")]
        sizes: Sizes,
        /// σ² values (fractions of the validity bound with --relative).
        #[arg(long, value_delimiter = ',', required = true)]
        sigma2_grid: Vec<f64>,
        #[arg(long)]
        relative: bool,
        #[command(flatten)]
        layer: LayerArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Variance over a grid of shapes and normalized scales.
    Sweep {
        /// Shapes as `MxN` or `N` (square), comma separated.
        #[arg(long, value_delimiter = ',', value_parser = parse_dims, required = true)]
        dims: Vec<(usize, usize)>,
        #[arg(long, value_enum, default_value_t = ScalingArg::SqrtN)]
        scaling: ScalingArg,
        #[arg(long, value_delimiter = ',', required = true)]
        sigma_grid: Vec<f64>,
        #[command(flatten)]
        layer: LayerArgs,
        #[arg(long, value_enum, default_value_t = MethodArg::Mc)]
        method: MethodArg,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Find σ whose output variance hits a target.
    Solve {
        #[arg(long)]
        target: f64,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        layer: LayerArgs,
        #[arg(long, default_value_t = 0.01)]
        tol: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Mc)]
        method: MethodArg,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Per-layer variance through a stack of independent square layers.
    Depth {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        layers: usize,
        /// One σ for every layer, or one per layer.
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<f64>,
        #[arg(long, value_enum, default_value_t = ActivationArg::Identity)]
        activation: ActivationArg,
        #[command(flatten)]
        layer: LayerArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Input draws per trial (0: exact for identity, default batch for ELU).
        #[arg(long, default_value_t = 0)]
        x_samples: usize,
    },
}

#[derive(Args, Clone, Copy)]
struct LayerArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
}

#[derive(Args, Clone)]
struct EvalArgs {
    /// Highest series order.
    #[arg(long, default_value_t = 10)]
    kmax: usize,
    #[arg(long, value_enum, default_value_t = PolicyArg::Optimal)]
    policy: PolicyArg,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Base seed; falls back to WISHART_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Input draws per weight sample (0 integrates the input out).
    #[arg(long, default_value_t = 0)]
    x_samples: usize,
    /// Evaluate the series beyond its validity bound.
    #[arg(long)]
    allow_invalid: bool,
}

#[derive(ValueEnum, Clone, Copy)]
enum TableFormat {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy)]
enum RecordFormat {
    Csv,
    Json,
}

#[derive(ValueEnum, Clone, Copy, PartialEq)]
enum MethodArg {
    Series,
    Mc,
}

#[derive(ValueEnum, Clone, Copy)]
enum PolicyArg {
    Optimal,
    Fixed,
}

#[derive(ValueEnum, Clone, Copy)]
enum ScalingArg {
    SqrtN,
    Linear,
    Absolute,
}

#[derive(ValueEnum, Clone, Copy)]
enum ActivationArg {
    Identity,
    Elu,
}

#[derive(Clone)]
struct Sizes(Vec<usize>);

fn parse_sizes(text: &str) -> Result<Sizes, String> {
    let sizes = if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| format!("bad range start in `{text}`"))?;
        let hi: usize = hi.trim().parse().map_err(|_| format!("bad range end in `{text}`"))?;
        if lo == 0 || lo > hi {
            return Err(format!("range `{text}` must satisfy 1 <= start <= end"));
        }
        (lo..=hi).collect()
    } else {
        text.split(',')
            .map(|s| match s.trim().parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(format!("bad size `{s}`")),
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(Sizes(sizes))
}

fn parse_dims(text: &str) -> Result<(usize, usize), String> {
    let parse = |s: &str| match s.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("bad dimension `{s}`")),
    };
    match text.split_once(['x', 'X']) {
        Some((m, n)) => Ok((parse(m)?, parse(n)?)),
        None => parse(text).map(|d| (d, d)),
    }
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Series => Method::Series,
            MethodArg::Mc => Method::MonteCarlo,
        }
    }
}

impl From<PolicyArg> for TruncationPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Optimal => TruncationPolicy::Optimal,
            PolicyArg::Fixed => TruncationPolicy::Fixed,
        }
    }
}

impl From<ScalingArg> for Scaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::SqrtN => Scaling::SqrtN,
            ScalingArg::Linear => Scaling::LinearN,
            ScalingArg::Absolute => Scaling::Absolute,
        }
    }
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Identity => Activation::Identity,
            ActivationArg::Elu => Activation::Elu,
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> Result<u64, Error> {
    match seed {
        Some(s) => Ok(s),
        None => match std::env::var("WISHART_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("WISHART_SEED must be an unsigned integer, got `{v}`"))),
            Err(_) => Ok(0),
        },
    }
}

impl LayerArgs {
    fn spec(self) -> Result<LayerSpec, Error> {
        LayerSpec::new(self.alpha, self.gamma)
    }
}

impl EvalArgs {
    fn options(&self) -> Result<(EvalOptions, u64), Error> {
        let seed = resolve_seed(self.seed)?;
        let mc = McConfig::new(self.trials, seed)?.with_x_samples(self.x_samples);
        Ok((
            EvalOptions {
                max_k: self.kmax,
                policy: self.policy.into(),
                allow_out_of_validity: self.allow_invalid,
                mc,
            },
            seed,
        ))
    }
}

fn moment_set(max_k: usize) -> Result<MomentSet, Error> {
    if max_k <= MAX_BUNDLED_ORDER {
        MomentSet::bundled_up_to(max_k.max(1))
    } else {
        MomentSet::enumerated(max_k)
    }
}

fn trailer(seed: Option<u64>) -> String {
    let argv: Vec<String> = std::env::args().collect();
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    format!("# argv: {} seed: {}\n", argv.join(" "), seed)
}

fn with_trailer(csv: String, seed: Option<u64>) -> String {
    csv + &trailer(seed)
}

/// Refuses series evaluation beyond the validity bound unless overridden.
fn check_validity(m: usize, n: usize, sigma2: f64, alpha: f64, allow: bool) -> Result<(), Error> {
    let bound = convergence_bound(m, n, alpha, 0.0);
    if sigma2 < bound {
        return Ok(());
    }
    eprintln!("note: sigma2 = {sigma2} is not below the series validity bound {bound} for m={m}, n={n}");
    if allow {
        Ok(())
    } else {
        Err(Error::SeriesOutOfValidity { bound })
    }
}

fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::Moments { k, format } => {
            let table = moment_table(k)?;
            Ok(match format {
                TableFormat::Json => table.to_json() + "\n",
                TableFormat::Csv => with_trailer(table.to_csv(), None),
            })
        }
        Command::Eval { k, m, n, sigma2 } => {
            let spec = WishartSpec::new(m, n, sigma2)?;
            let set = moment_set(k)?;
            let value = expected_trace_power(&spec, k, set.table(k))?;
            Ok(format!("{value}\n"))
        }
        Command::Variance {
            m,
            n,
            sigma2,
            layer,
            method,
            eval,
            format,
        } => {
            let layer = layer.spec()?;
            let (opts, seed) = eval.options()?;
            let spec = WishartSpec::new(m, n, sigma2)?;
            let moments = moment_set(opts.max_k)?;
            if method == MethodArg::Series {
                check_validity(m, n, sigma2, layer.alpha, opts.allow_out_of_validity)?;
            }
            match format {
                RecordFormat::Json => Ok(match method {
                    MethodArg::Series => {
                        marginal_variance_series(&spec, &layer, opts.max_k, opts.policy, &moments)?.to_json() + "\n"
                    }
                    MethodArg::Mc => mc_output_variance(&spec, &layer, &opts.mc)?.to_json() + "\n",
                }),
                RecordFormat::Csv => {
                    let point = evaluate_variance(m, n, spec.sigma(), &layer, method.into(), &opts, &moments)?;
                    Ok(with_trailer(variance_csv(&[point])?, Some(seed)))
                }
            }
        }
        Command::Validate {
            sizes,
            sigma2_grid,
            relative,
            layer,
            eval,
        } => {
            let layer = layer.spec()?;
            let (opts, seed) = eval.options()?;
            let moments = moment_set(opts.max_k)?;
            let mut points = Vec::new();
            for &d in &sizes.0 {
                let bound = convergence_bound(d, d, layer.alpha, 0.0);
                for &s in &sigma2_grid {
                    let sigma2 = if relative { s * bound } else { s };
                    check_validity(d, d, sigma2, layer.alpha, opts.allow_out_of_validity)?;
                    let sigma = sigma2.sqrt();
                    let series = evaluate_variance(d, d, sigma, &layer, Method::Series, &opts, &moments)?;
                    let mc = evaluate_variance(d, d, sigma, &layer, Method::MonteCarlo, &opts, &moments)?;
                    let diff = VariancePoint {
                        method: "diff",
                        k_used: series.k_used,
                        value: series.value - mc.value,
                        std_error: mc.std_error,
                        ..series.clone()
                    };
                    points.extend([series, mc, diff]);
                }
            }
            Ok(with_trailer(variance_csv(&points)?, Some(seed)))
        }
        Command::Sweep {
            dims,
            scaling,
            sigma_grid,
            layer,
            method,
            eval,
        } => {
            let layer = layer.spec()?;
            let (opts, seed) = eval.options()?;
            let moments = moment_set(opts.max_k)?;
            let scaling: Scaling = scaling.into();
            if method == MethodArg::Series {
                for &(m, n) in &dims {
                    for &s in &sigma_grid {
                        let sigma = scaling.sigma(s, n);
                        check_validity(m, n, sigma * sigma, layer.alpha, opts.allow_out_of_validity)?;
                    }
                }
            }
            let rows = variance_sweep(&dims, &sigma_grid, scaling, &layer, method.into(), &opts, &moments)?;
            let points: Vec<VariancePoint> = rows.into_iter().map(|r| r.point).collect();
            Ok(with_trailer(variance_csv(&points)?, Some(seed)))
        }
        Command::Solve {
            target,
            m,
            n,
            layer,
            tol,
            method,
            eval,
        } => {
            let layer = layer.spec()?;
            let (opts, seed) = eval.options()?;
            let moments = moment_set(opts.max_k)?;
            let sol = solve_sigma(target, m, n, &layer, method.into(), tol, &opts, &moments)?;
            let report = serde_json::json!({
                "target": target,
                "m": m,
                "n": n,
                "alpha": layer.alpha,
                "gamma": layer.gamma,
                "method": Method::from(method).name(),
                "tol": tol,
                "seed": seed,
                "sigma": sol.sigma,
                "sigma_sqrt_n": sol.sigma * (n as f64).sqrt(),
                "variance": sol.variance,
                "std_error": sol.std_error,
                "iterations": sol.iterations,
            });
            Ok(report.to_string() + "\n")
        }
        Command::Depth {
            width,
            layers,
            sigma,
            activation,
            layer,
            trials,
            seed,
            x_samples,
        } => {
            let layer = layer.spec()?;
            let seed = resolve_seed(seed)?;
            let sigmas = match sigma.len() {
                1 => vec![sigma[0]; layers],
                len if len == layers => sigma,
                len => {
                    return Err(Error::InvalidArgument(format!(
                        "--sigma needs one value or one per layer ({layers}), got {len}"
                    )))
                }
            };
            let sigma2s: Vec<f64> = sigmas.iter().map(|s| s * s).collect();
            let cfg = McConfig::new(trials, seed)?.with_x_samples(x_samples);
            let activation: Activation = activation.into();
            let estimates = depth_simulate(width, &sigma2s, &layer, activation, &cfg)?;
            let rows: Vec<DepthRow> = estimates
                .iter()
                .zip(&sigma2s)
                .enumerate()
                .map(|(i, (e, &s2))| DepthRow::from_estimate(i + 1, width, s2, layer.alpha, layer.gamma, activation, e))
                .collect();
            Ok(with_trailer(depth_csv(&rows)?, Some(seed)))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Unattainable { .. } | Error::NoSolution { .. } | Error::NonMonotonic { .. } => EXIT_NO_SOLUTION,
        Error::InvalidArgument(_) | Error::OrderAboveCap { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let out = cli.out.clone();
    match run(cli) {
        Ok(text) => {
            let written = match out {
                Some(path) => fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display())),
                None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string()),
            };
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_FAILURE)
                }
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
