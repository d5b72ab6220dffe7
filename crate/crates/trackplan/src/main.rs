use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trackplan::cli;

#[derive(Parser)]
#[command(
    name = "trackplan",
    about = "Occlusion-aware target tracking: planning, simulation, training and benchmarks"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario with one policy arm and write log + metrics files.
    Simulate {
        scenario: PathBuf,
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "base")]
        policy: cli::ArmKind,
        /// Override the scenario's planner seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Decoder weights (required by the trained and ablation arms).
        #[arg(long)]
        decoder: Option<PathBuf>,
    },
    /// Check the solver gradients against central finite differences.
    Gradcheck {
        /// Unrolled iteration count.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Number of random instances.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
    },
    /// Train a decoder from demonstrations.
    Train {
        /// Existing dataset file.
        #[arg(long, conflicts_with = "generate")]
        dataset: Option<PathBuf>,
        /// Generate demonstrations from a scenario suite directory first.
        #[arg(long)]
        generate: Option<PathBuf>,
        /// Oracle sample budget when generating demonstrations.
        #[arg(long, default_value_t = 512)]
        oracle_n: usize,
        /// Training configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output decoder weights file.
        #[arg(long)]
        out: PathBuf,
        /// Optional loss-curve CSV output.
        #[arg(long)]
        loss_curve: Option<PathBuf>,
        /// Optional path to save the generated dataset.
        #[arg(long)]
        save_dataset: Option<PathBuf>,
    },
    /// Run a suite of scenarios across policy arms and emit a comparison table.
    Benchmark {
        suite_dir: PathBuf,
        out_dir: PathBuf,
        /// Seeds per scenario/arm pair.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Decoder weights; adds the trained and ablation arms.
        #[arg(long)]
        decoder: Option<PathBuf>,
    },
    /// Project the nominal sample of a scenario once and print residuals.
    Project {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match args.command {
        Command::Simulate {
            scenario,
            out_dir,
            policy,
            seed,
            decoder,
        } => cli::cmd_simulate(&scenario, &out_dir, policy, seed, decoder.as_deref()),
        Command::Gradcheck { k, instances, h } => cli::cmd_gradcheck(k, instances, h),
        Command::Train {
            dataset,
            generate,
            oracle_n,
            config,
            out,
            loss_curve,
            save_dataset,
        } => cli::cmd_train(
            dataset.as_deref(),
            generate.as_deref(),
            oracle_n,
            config.as_deref(),
            &out,
            loss_curve.as_deref(),
            save_dataset.as_deref(),
        ),
        Command::Benchmark {
            suite_dir,
            out_dir,
            seeds,
            decoder,
        } => cli::cmd_benchmark(&suite_dir, &out_dir, seeds, decoder.as_deref()),
        Command::Project { scenario, seed } => cli::cmd_project(&scenario, seed),
    };
    ExitCode::from(code as u8)
}
