use clap::{Args, Parser, Subcommand};
use resboost::orchestrator::{
    self as orch, files, load_aggregate, load_experts, load_legacy, load_regions, PipelineConfig, PipelineError,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "resboost", version, about = "Residual boosting on top of a frozen scoring model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or load) the frozen legacy model
    TrainLegacy(StageArgs),
    /// Mine hard regions from legacy residuals
    Regions(StageArgs),
    /// Run one expert chain per region
    Evolve(StageArgs),
    /// Train the gate over legacy scores and experts
    Aggregate(StageArgs),
    /// Score all rows and write the validation report
    Eval(StageArgs),
    /// Run every stage
    Pipeline(StageArgs),
    /// Score a CSV with a finished bundle
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline config (JSON). Stage verbs fall back to the bundle's config.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundle directory; overrides output_dir from the config
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Chain worker threads (0 = all cores)
    #[arg(long)]
    workers: Option<usize>,
}

impl StageArgs {
    fn resolve(&self, required: bool) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match (&self.config, &self.bundle) {
            (Some(path), _) => PipelineConfig::load(path)?,
            (None, Some(bundle)) if !required => {
                let mut c: PipelineConfig = orch::read_json(&bundle.join(files::CONFIG), "config")?;
                c.output_dir = bundle.clone();
                c
            }
            _ => return Err(PipelineError::new("config", "--config is required")),
        };
        if let Some(b) = &self.bundle {
            cfg.output_dir = b.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(cfg)
    }
}

fn stage(cmd: &Command) -> Result<(), PipelineError> {
    let (args, name) = match cmd {
        Command::Predict { bundle, input, output } => {
            let n = orch::predict(bundle, input, output)?;
            eprintln!("scored {n} rows -> {}", output.display());
            return Ok(());
        }
        Command::Pipeline(a) => {
            let cfg = a.resolve(true)?;
            let out = orch::run_pipeline(&cfg)?;
            print_report(&cfg.output_dir, out.report.final_.auc, out.report.legacy.auc);
            return Ok(());
        }
        Command::TrainLegacy(a) => (a, "train-legacy"),
        Command::Regions(a) => (a, "regions"),
        Command::Evolve(a) => (a, "evolve"),
        Command::Aggregate(a) => (a, "aggregate"),
        Command::Eval(a) => (a, "eval"),
    };
    let cfg = args.resolve(name == "train-legacy")?;
    let bundle = cfg.output_dir.clone();
    let p = orch::prepare(&cfg)?;
    if name == "train-legacy" {
        orch::stage_legacy(&p, &bundle)?;
        return Ok(());
    }
    let frozen = load_legacy(&bundle, name)?;
    if name == "regions" {
        orch::stage_regions(&p, &bundle, &frozen)?;
        return Ok(());
    }
    let (stats, regions) = load_regions(&bundle, name)?;
    if name == "evolve" {
        orch::stage_evolve(&p, &bundle, &frozen, &stats, &regions)?;
        return Ok(());
    }
    let experts = load_experts(&bundle, &regions, name)?;
    if name == "aggregate" {
        orch::stage_aggregate(&p, &bundle, &frozen, &experts)?;
        return Ok(());
    }
    let agg = load_aggregate(&bundle, name)?;
    let report = orch::stage_eval(&p, &bundle, &frozen, &experts, &agg)?;
    print_report(&bundle, report.final_.auc, report.legacy.auc);
    Ok(())
}

fn print_report(bundle: &Path, final_auc: f64, legacy_auc: f64) {
    match std::fs::read_to_string(bundle.join(files::REPORT_TXT)) {
        Ok(txt) => print!("{txt}"),
        Err(_) => println!("legacy auc {legacy_auc:.6}  final auc {final_auc:.6}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match stage(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
