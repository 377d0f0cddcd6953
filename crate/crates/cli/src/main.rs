//! Command-line surface: simulate trajectories, run inference, evaluate
//! estimates, and drive the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use topoinfer::dynamics::{make_time_varying_input, simulate, InputFamily, LatentInputModel};
use topoinfer::error::{Error, Result};
use topoinfer::graph::{interaction_matrix, random_connected_digraph};
use topoinfer::ietia::{ie_tia, IeTiaConfig};
use topoinfer::metrics;
use topoinfer::solver::WeightKind;
use topoinfer::totia::{to_tia, ToTiaConfig};
use topoinfer_cli::{run_experiment, ExperimentConfig, Scenario};

/// Exit code signalling that the trajectory carries a time-invariant input
/// and the time-invariant pipeline should be used instead.
const EXIT_TIME_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "topoinfer", version, about = "Consensus-network simulation and topology inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a consensus trajectory on a random network.
    Simulate(SimulateArgs),
    /// Infer the interaction matrix from a trajectory.
    #[command(subcommand)]
    Infer(InferCommand),
    /// Compare an estimated matrix against the ground truth.
    Eval(EvalArgs),
    /// Run a Monte Carlo experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of agents.
    #[arg(long)]
    n: usize,
    /// Number of observations.
    #[arg(long)]
    k: usize,
    /// Observation noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge probability of the generated network.
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 0.5)]
    weight_lo: f64,
    #[arg(long, default_value_t = 1.5)]
    weight_hi: f64,
    /// Sampling period as a fraction of the stability bound 1/d_max.
    #[arg(long, default_value_t = 0.5)]
    eps_fraction: f64,
    /// Latent input kind: none, constant, or exp.
    #[arg(long, default_value = "none")]
    input: String,
    /// Scale of the generated input.
    #[arg(long, default_value_t = 1.0)]
    input_scale: f64,
    /// Injections for the exp input, as agent:step pairs (e.g. "2:6,4:9").
    #[arg(long)]
    injected: Option<String>,
    /// Output trajectory CSV (a JSON sidecar is written next to it).
    #[arg(long)]
    out: PathBuf,
    /// Optional ground-truth network JSON.
    #[arg(long)]
    graph_out: Option<PathBuf>,
    /// Optional ground-truth interaction matrix JSON.
    #[arg(long)]
    ptrue_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum InferCommand {
    /// Pipeline for time-invariant latent inputs.
    Totia(TotiaArgs),
    /// Pipeline for time-varying latent inputs.
    Ietia(IetiaArgs),
}

#[derive(Args)]
struct CommonInferArgs {
    /// Input trajectory CSV.
    #[arg(long)]
    input: PathBuf,
    /// Sampling period override (required if the sidecar is missing).
    #[arg(long)]
    epsilon: Option<f64>,
    /// L1 weight (defaults to a data-derived value).
    #[arg(long)]
    rho: Option<f64>,
    /// Consistency-term weight.
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Weight schedule: ws1, ws2, or ws3.
    #[arg(long, default_value = "ws1")]
    weights: String,
    /// Output JSON for the estimate.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TotiaArgs {
    #[command(flatten)]
    common: CommonInferArgs,
    /// Steady-period detection tolerance.
    #[arg(long)]
    eps_tol: Option<f64>,
}

#[derive(Args)]
struct IetiaArgs {
    #[command(flatten)]
    common: CommonInferArgs,
    /// Identifiability bound.
    #[arg(long)]
    lipschitz: Option<f64>,
    /// Termination tolerance on the iterate difference.
    #[arg(long, default_value_t = 0.015)]
    delta_d: f64,
    /// Input family: exp or poly.
    #[arg(long, default_value = "exp")]
    family: String,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated matrix JSON.
    #[arg(long)]
    phat: PathBuf,
    /// Ground-truth matrix JSON.
    #[arg(long)]
    ptrue: PathBuf,
    /// Support threshold (defaults to 5% of the mean off-diagonal scale).
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Scenario: totia-noise-sweep, totia-size-sweep, ietia-iteration-study,
    /// ietia-size-table, or corollary-ranking.
    #[arg(long)]
    scenario: String,
    /// TOML config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $TOPOINFER_OUT_DIR or ./experiments).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Trials per grid cell.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Unlock the large sizes of the size table.
    #[arg(long, default_value_t = false)]
    full: bool,
}

fn parse_family(name: &str) -> Result<InputFamily> {
    match name.to_ascii_lowercase().as_str() {
        "exp" | "exponential" => Ok(InputFamily::Exponential),
        "poly" | "polynomial" => Ok(InputFamily::Polynomial),
        other => Err(Error::InvalidParameter(format!(
            "unknown family {other:?}; expected exp or poly"
        ))),
    }
}

fn parse_injections(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|pair| {
            let (agent, step) = pair.split_once(':').ok_or_else(|| {
                Error::InvalidParameter(format!("bad injection {pair:?}; expected agent:step"))
            })?;
            let agent = agent.trim().parse().map_err(|e| {
                Error::InvalidParameter(format!("bad agent in {pair:?}: {e}"))
            })?;
            let step = step.trim().parse().map_err(|e| {
                Error::InvalidParameter(format!("bad step in {pair:?}: {e}"))
            })?;
            Ok((agent, step))
        })
        .collect()
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let graph = random_connected_digraph(args.n, args.density, (args.weight_lo, args.weight_hi), args.seed)?;
    if !(args.eps_fraction > 0.0 && args.eps_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eps fraction must lie in (0, 1), got {}",
            args.eps_fraction
        )));
    }
    let p = interaction_matrix(&graph, args.eps_fraction / graph.d_max())?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0xfeed);
    let z_init = Array1::from_shape_fn(args.n, |_| rng.gen_range(-5.0f64..5.0));

    let input = match args.input.as_str() {
        "none" => LatentInputModel::zero(args.n),
        "constant" => {
            let c0 = args.input_scale * rng.gen_range(0.3..1.0);
            let r0 = Array1::from_shape_fn(args.n, |_| {
                args.input_scale * rng.gen_range(-0.5f64..0.5)
            });
            let u = graph.laplacian().dot(&r0) + Array1::from_elem(args.n, c0);
            LatentInputModel::constant(&u)
        }
        "exp" => {
            let injections = match &args.injected {
                Some(text) => parse_injections(text)?,
                None => vec![(args.n / 2, (args.k / 3).max(3))],
            };
            let params: Vec<(f64, f64, f64)> = injections
                .iter()
                .map(|_| {
                    (
                        args.input_scale * rng.gen_range(1.0..2.0),
                        rng.gen_range(0.05..0.3),
                        args.input_scale * rng.gen_range(0.3..0.8),
                    )
                })
                .collect();
            make_time_varying_input(
                &p,
                &z_init,
                &injections,
                InputFamily::Exponential,
                &params,
                2.0,
            )?
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown input kind {other:?}; expected none, constant, or exp"
            )))
        }
    };

    let obs = simulate(&p, &z_init, &input, args.k, args.sigma, args.seed)?;
    topoinfer::io::write_trajectory_csv(&args.out, &obs, Some(&input))?;
    if let Some(path) = &args.graph_out {
        topoinfer::io::write_graph_json(path, &graph)?;
    }
    if let Some(path) = &args.ptrue_out {
        topoinfer::io::write_matrix_json(path, p.matrix(), None)?;
    }
    println!(
        "wrote {} observations of {} agents to {}",
        args.k,
        args.n,
        args.out.display()
    );
    Ok(())
}

fn cmd_infer_totia(args: TotiaArgs) -> Result<()> {
    let (obs, _) = topoinfer::io::read_trajectory_csv(&args.common.input, args.common.epsilon)?;
    let config = ToTiaConfig {
        rho: args.common.rho,
        beta: args.common.beta,
        weight_kind: args.common.weights.parse::<WeightKind>()?,
        eps_tol: args.eps_tol,
        ..ToTiaConfig::default()
    };
    let result = to_tia(&obs, &config)?;
    topoinfer::io::write_inference_json(&args.common.out, &result, None)?;
    println!("estimate written to {}", args.common.out.display());
    Ok(())
}

fn cmd_infer_ietia(args: IetiaArgs) -> Result<()> {
    let (obs, _) = topoinfer::io::read_trajectory_csv(&args.common.input, args.common.epsilon)?;
    let config = IeTiaConfig {
        lipschitz: args.lipschitz,
        delta_d: args.delta_d,
        family: parse_family(&args.family)?,
        max_iter: args.max_iter,
        rho: args.common.rho,
        beta: args.common.beta,
        weight_kind: args.common.weights.parse::<WeightKind>()?,
        ..IeTiaConfig::default()
    };
    let (result, trace) = ie_tia(&obs, &config)?;
    topoinfer::io::write_inference_json(&args.common.out, &result, Some(&trace))?;
    println!(
        "estimate written to {} after {} iterations",
        args.common.out.display(),
        result.iterations
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let p_hat = topoinfer::io::read_matrix_json(&args.phat)?;
    let p_true = topoinfer::io::read_matrix_json(&args.ptrue)?;
    let tau = args.tau.unwrap_or_else(|| metrics::default_tau(&p_true));
    let psi_m = metrics::magnitude_error(&p_hat, &p_true)?;
    let psi_s = metrics::structure_error(&p_hat, &p_true, tau)?;
    let doc = serde_json::json!({
        "psi_m": psi_m,
        "psi_s": psi_s,
        "tau": tau,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let scenario: Scenario = args.scenario.parse()?;
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_toml(path)?,
        None => ExperimentConfig::for_scenario(scenario),
    };
    config.scenario = scenario;
    if let Some(dir) = args.out_dir {
        config.out_dir = dir;
    } else if config.out_dir == PathBuf::from("experiments") {
        if let Ok(dir) = std::env::var("TOPOINFER_OUT_DIR") {
            config.out_dir = PathBuf::from(dir);
        }
    }
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    if let Some(master) = args.master_seed {
        config.master_seed = master;
    }
    config.full |= args.full;

    let summary = run_experiment(&config)?;
    println!(
        "{} rows -> {} (summary {})",
        summary.rows,
        summary.csv_path.display(),
        summary.summary_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Infer(InferCommand::Totia(args)) => cmd_infer_totia(args),
        Command::Infer(InferCommand::Ietia(args)) => cmd_infer_ietia(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Experiment(args) => cmd_experiment(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if matches!(e.root(), Error::TimeInvariantInput) {
                eprintln!("{e}");
                eprintln!("hint: run `topoinfer infer totia` on this trajectory");
                ExitCode::from(EXIT_TIME_INVARIANT)
            } else {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        }
    }
}
