use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use edgellm::pipeline::{self, PolicyVariant, RunConfig, StageReport};

#[derive(Parser)]
#[command(name = "edgellm", version, about = "Compress, tune and schedule a toy decoder for edge devices")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Luc,
    Uniform,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model on the corpus.
    Pretrain,
    /// Measure layer sensitivities and write the compression policy.
    Profile {
        /// Policy ablation to emit.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Give less sensitive layers the higher sparsity.
        #[arg(long)]
        inverted_sparsity: bool,
    },
    /// Compress with the policy, then tune adapters and exit heads.
    Tune,
    /// Held-out perplexity per exit and in vote mode, plus samples.
    Eval {
        /// Checkpoint to evaluate instead of the tuned one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Search schedules and report speedup over the dense baseline.
    Schedule {
        /// Policy file to compare; repeatable, defaults to the configured policy.
        #[arg(long = "policy")]
        policies: Vec<PathBuf>,
        /// Write every priced dense-baseline candidate to this file.
        #[arg(long)]
        dump_candidates: Option<PathBuf>,
    },
}

fn config(cli: &Cli) -> edgellm::error::Result<RunConfig> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn run(cli: Cli) -> edgellm::error::Result<StageReport> {
    let mut cfg = config(&cli)?;
    match cli.command {
        Command::Pretrain => pipeline::run_pretrain(&cfg),
        Command::Profile { variant, inverted_sparsity } => {
            if let Some(v) = variant {
                cfg.compression.variant = match v {
                    VariantArg::Luc => PolicyVariant::Luc,
                    VariantArg::Uniform => PolicyVariant::Uniform,
                    VariantArg::Random => PolicyVariant::Random,
                };
            }
            cfg.compression.inverted_sparsity |= inverted_sparsity;
            pipeline::run_profile(&cfg)
        }
        Command::Tune => pipeline::run_tune(&cfg),
        Command::Eval { checkpoint } => pipeline::run_eval(&cfg, checkpoint.as_deref()),
        Command::Schedule { policies, dump_candidates } => {
            pipeline::run_schedule(&cfg, &policies, dump_candidates.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let stage = match &cli.command {
        Command::Pretrain => "pretrain",
        Command::Profile { .. } => "profile",
        Command::Tune => "tune",
        Command::Eval { .. } => "eval",
        Command::Schedule { .. } => "schedule",
    };
    match run(cli) {
        Ok(report) => {
            println!("{}", report.summary);
            for path in &report.outputs {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {stage} failed: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
