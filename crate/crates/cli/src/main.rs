mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CmdResult, Exit, OrExit};
use config::{ApproveMode, BackendKind, Overrides, RunConfig};

/// Plan, execute and evaluate target-volume delineation.
#[derive(Debug, Parser)]
#[command(name = "delineate", version)]
struct Cli {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Case directory (case.json plus NRRD masks).
    #[arg(long, global = true)]
    case: Option<PathBuf>,
    #[arg(long, global = true)]
    guideline: Option<PathBuf>,
    #[arg(long, global = true)]
    guideline_id: Option<String>,
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[arg(long, global = true)]
    aliases: Option<PathBuf>,
    /// Plan file (default: <out>/plan.json).
    #[arg(long, global = true)]
    plan: Option<PathBuf>,
    /// Reference plan used for tool-call F1.
    #[arg(long, global = true)]
    reference_plan: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Directory of canned completions for the scripted backend.
    #[arg(long, global = true)]
    scripted_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    max_refine: Option<usize>,
    /// Skip hole filling and smoothing of the targets.
    #[arg(long, global = true)]
    no_postprocess: bool,
    #[arg(long, global = true, value_enum)]
    approve: Option<ApproveMode>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a plan from the guideline and write it to the output directory.
    Plan,
    /// Run an approved plan on a case and write the target masks.
    Execute,
    /// Score predicted targets against ground truth.
    Eval {
        /// Prediction directory, or a directory of per-case subdirectories.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Ground-truth directory (default: the case directory).
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Write a synthetic thoracic case.
    Phantom {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON phantom description; overrides --seed.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Also write oracle CTV_gt and PTV_gt masks.
        #[arg(long)]
        with_gt: bool,
    },
    /// Plan, execute and evaluate in one go.
    Pipeline {
        #[arg(long)]
        gt: Option<PathBuf>,
    },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            case: self.case.clone(),
            guideline: self.guideline.clone(),
            guideline_id: self.guideline_id.clone(),
            catalog: self.catalog.clone(),
            aliases: self.aliases.clone(),
            reference_plan: self.reference_plan.clone(),
            plan: self.plan.clone(),
            out: self.out.clone(),
            max_refine: self.max_refine,
            no_postprocess: self.no_postprocess,
            approve: self.approve,
            backend: self.backend,
            scripted_dir: self.scripted_dir.clone(),
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let cfg = RunConfig::load(&cli.overrides()).or_exit(Exit::Config)?;
    match cli.command {
        Command::Plan => commands::plan(&cfg).map(|_| ()),
        Command::Execute => commands::execute(&cfg),
        Command::Eval { pred, gt } => commands::eval(&cfg, pred.as_deref(), gt.as_deref()),
        Command::Phantom { seed, spec, with_gt } => commands::phantom(&cfg, seed, spec.as_deref(), with_gt),
        Command::Pipeline { gt } => commands::pipeline(&cfg, gt.as_deref()),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.exit as u8)
        }
    }
}
