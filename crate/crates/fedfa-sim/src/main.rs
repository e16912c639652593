use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedfa_sim::{
    compare_files, gen_data_files, load_config_file, resolve_compare, resolve_config, run_files,
    Algorithm, CliError, PartialConfig,
};

/// Deterministic federated-optimization experiments: FedAvg, FedProx and
/// FedFa over synthetic or CSV federations.
#[derive(Parser)]
#[command(name = "fedfa-sim", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm and emit rounds/final-accuracy/summary files
    Run(RunArgs),
    /// Run FedAvg, FedProx and FedFa on the same dataset and seed
    Compare(CommonArgs),
    /// Generate a synthetic dataset as CSV plus generation metadata
    GenData(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; keys match the flag names, flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// synthetic_iid | synthetic_0_0 | synthetic_0.5_0.5 | synthetic_1_1 |
    /// synthetic | csv:<path>
    #[arg(long)]
    dataset: Option<String>,
    /// Number of federated rounds T
    #[arg(long)]
    rounds: Option<usize>,
    /// Clients selected per round K
    #[arg(long)]
    clients_per_round: Option<usize>,
    /// Local epochs E per selected client
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Client learning rate (default 0.0001 for fedfa, 0.01 otherwise)
    #[arg(long)]
    lr: Option<f64>,
    /// Client momentum factor
    #[arg(long)]
    gamma_c: Option<f64>,
    /// Server momentum factor
    #[arg(long)]
    gamma_s: Option<f64>,
    /// Server correction step size (defaults to lr)
    #[arg(long)]
    eta_s: Option<f64>,
    /// Apply the server momentum correction every b-th round
    #[arg(long)]
    round_b: Option<usize>,
    /// Accuracy-information weight (fedfa)
    #[arg(long)]
    alpha: Option<f64>,
    /// Frequency-information weight (fedfa)
    #[arg(long)]
    beta: Option<f64>,
    /// Proximal coefficient (default 1 for fedprox, 0 otherwise)
    #[arg(long)]
    prox_mu: Option<f64>,
    /// Small constant guarding log2(0)
    #[arg(long)]
    c_eps: Option<f64>,
    /// Root seed; falls back to $FEDFA_SEED, then 42
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate test accuracy every this many rounds
    #[arg(long)]
    eval_every: Option<usize>,
    /// Output file prefix
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    n_devices: Option<usize>,
    /// Feature dimension (required for csv datasets)
    #[arg(long)]
    dim: Option<usize>,
    /// Class count (required for csv datasets)
    #[arg(long)]
    classes: Option<usize>,
    /// Minimum samples per synthetic device
    #[arg(long)]
    s_min: Option<usize>,
    /// Pareto tail exponent for synthetic device sizes
    #[arg(long)]
    pareto_shape: Option<f64>,
    /// Model-heterogeneity scale (dataset `synthetic` only)
    #[arg(long)]
    data_alpha: Option<f64>,
    /// Feature-mean-heterogeneity scale (dataset `synthetic` only)
    #[arg(long)]
    data_beta: Option<f64>,
    /// Device-id column name for csv datasets
    #[arg(long)]
    device_column: Option<String>,
    /// Train fraction of each device's examples
    #[arg(long)]
    split_ratio: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Aggregation algorithm
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
}

impl CommonArgs {
    fn into_partial(self, algorithm: Option<Algorithm>) -> Result<PartialConfig, CliError> {
        let flags = PartialConfig {
            dataset: self.dataset,
            algorithm,
            rounds: self.rounds,
            clients_per_round: self.clients_per_round,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            gamma_c: self.gamma_c,
            gamma_s: self.gamma_s,
            eta_s: self.eta_s,
            round_b: self.round_b,
            alpha: self.alpha,
            beta: self.beta,
            prox_mu: self.prox_mu,
            c_eps: self.c_eps,
            seed: self.seed,
            eval_every: self.eval_every,
            output: self.output,
            n_devices: self.n_devices,
            dim: self.dim,
            classes: self.classes,
            s_min: self.s_min,
            pareto_shape: self.pareto_shape,
            data_alpha: self.data_alpha,
            data_beta: self.data_beta,
            device_column: self.device_column,
            split_ratio: self.split_ratio,
        };
        let file = match &self.config {
            Some(path) => load_config_file(path)?,
            None => PartialConfig::default(),
        };
        Ok(PartialConfig::merged_over(file, flags))
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let algorithm = args.algorithm;
            let partial = args.common.into_partial(algorithm)?;
            let cfg = resolve_config(partial)?;
            let output = run_files(&cfg)?;
            for path in &output.files {
                println!("wrote {}", path.display());
            }
            println!(
                "{}: average {:.2}% worst20 {:.2}% best20 {:.2}% variance {:.2}",
                cfg.algorithm.name(),
                output.stats.average,
                output.stats.worst20,
                output.stats.best20,
                output.stats.variance
            );
            Ok(())
        }
        Command::Compare(common) => {
            let partial = common.into_partial(None)?;
            let base_output = partial.output.clone().unwrap_or_else(|| "fedfa_out".into());
            let configs = resolve_compare(partial)?;
            let files = compare_files(&configs, &base_output)?;
            for path in &files {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::GenData(common) => {
            let mut partial = common.into_partial(None)?;
            // gen-data has no algorithm and selects no clients; fill the
            // training-only keys with values that always validate.
            partial.algorithm = Some(partial.algorithm.unwrap_or(Algorithm::Fedavg));
            partial.clients_per_round = Some(partial.clients_per_round.unwrap_or(1));
            let cfg = resolve_config(partial)?;
            let files = gen_data_files(&cfg)?;
            for path in &files {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("fedfa-sim: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
