use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flare_core::llm::ProviderKind;
use flare_core::runner::{run, RunConfig, RunError, Stage};
use flare_core::ThetaMode;

#[derive(Debug, Parser)]
#[command(
    name = "flare",
    version,
    about = "Wildfire evacuation decision prediction pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// `elbow`, `all`, or a fixed value in (0, 1].
    #[arg(long, global = true, value_name = "elbow|FLOAT|all")]
    theta: Option<String>,
    /// Decision trials per reasoning pattern.
    #[arg(long, global = true, value_name = "N")]
    trials: Option<usize>,
    /// Memory entries retrieved per prediction.
    #[arg(long, global = true, value_name = "N")]
    k: Option<usize>,
    #[arg(long, global = true)]
    no_cot: bool,
    #[arg(long, global = true)]
    no_rl: bool,
    #[arg(long, global = true)]
    no_perception: bool,
    /// Use the scripted stub with this transcript instead of a remote model.
    #[arg(long, global = true, value_name = "PATH")]
    stub_transcript: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Validate the survey and write train/test partitions.
    Ingest,
    /// Fit indicator regressions and select variable subsets.
    SelectVars,
    /// Estimate per-pattern success rates on the training partition.
    LabelPatterns,
    /// Train the pattern classifier.
    TrainClassifier,
    /// Build the calibration knowledge base.
    BuildKb,
    /// Run the memory training loop.
    TrainMemory,
    /// Predict the test partition.
    Predict,
    /// Score predictions and baselines.
    Evaluate,
    /// Train on one event and test on another.
    CrossEval,
    /// Run the ablation configurations.
    Ablate,
    /// Rewrite the memory store canonically.
    CompactMemory,
    /// Run ingest through evaluate in order.
    All,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::Ingest => vec![Stage::Ingest],
            Command::SelectVars => vec![Stage::SelectVars],
            Command::LabelPatterns => vec![Stage::LabelPatterns],
            Command::TrainClassifier => vec![Stage::TrainClassifier],
            Command::BuildKb => vec![Stage::BuildKb],
            Command::TrainMemory => vec![Stage::TrainMemory],
            Command::Predict => vec![Stage::Predict],
            Command::Evaluate => vec![Stage::Evaluate],
            Command::CrossEval => vec![Stage::CrossEval],
            Command::Ablate => vec![Stage::Ablate],
            Command::CompactMemory => vec![Stage::CompactMemory],
            Command::All => Stage::SEQUENCE.to_vec(),
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()
            .map(|d| d.join(p))
            .unwrap_or_else(|_| p.to_path_buf())
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, RunError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| RunError::ConfigInvalid("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.splits.seed = seed;
    }
    if let Some(theta) = &cli.theta {
        cfg.selection.theta = theta
            .parse::<ThetaMode>()
            .map_err(|e| RunError::ConfigInvalid(format!("--theta: {e}")))?;
    }
    if let Some(trials) = cli.trials {
        cfg.patterns.trials = trials;
    }
    if let Some(k) = cli.k {
        cfg.memory.k = k;
    }
    cfg.ablation.no_cot |= cli.no_cot;
    cfg.ablation.no_rl |= cli.no_rl;
    cfg.ablation.no_perception |= cli.no_perception;
    if let Some(t) = &cli.stub_transcript {
        cfg.llm.provider = ProviderKind::ScriptedStub;
        cfg.llm.stub_transcript = Some(absolute(t));
    }
    if let Some(out) = &cli.out {
        cfg.out = absolute(out);
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| {
        for stage in cli.command.stages() {
            let summary = run(stage, &cfg)?;
            match &summary.table {
                Some(table) => print!("{table}"),
                None => println!(
                    "{}",
                    serde_json::to_string(&summary).expect("summary serializes")
                ),
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
