//! `partsmith`: generate data, train, evaluate, verify and export.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 verification failure,
//! 3 numeric divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use partsmith::ablation::{ablation_csv, ablation_table, run_ablations};
use partsmith::autodiff::Fault;
use partsmith::config::{Ablation, RunConfig, SEED_ENV};
use partsmith::datagen::{split_counts, SyntheticSpec, Template};
use partsmith::dataset::{Dataset, SplitCounts};
use partsmith::eval::summary_table;
use partsmith::export::export_shape;
use partsmith::parts::Split;
use partsmith::run::{evaluate, load_dataset, load_run, save_run, write_evaluation};
use partsmith::train::Pipeline;
use partsmith::verify::{run_all, run_gradcheck, run_oracles, Report, VerifyOptions};
use partsmith::Error;

#[derive(Parser)]
#[command(name = "partsmith", version, about = "Single-view part assembly on synthetic furniture")]
struct Cli {
    /// Worker threads for data generation and evaluation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train segmentation, then poses; writes a run directory.
    Train(ConfigArgs),
    /// Score a trained run and the random baseline on one split.
    Eval(EvalArgs),
    /// Run every self-check; exits 2 on any failure.
    Verify(VerifyArgs),
    /// Finite-difference gradient checks only.
    Gradcheck(VerifyArgs),
    /// Assignment and Chamfer oracles only.
    OracleCheck(VerifyArgs),
    /// Write ground-truth, predicted and per-part point files for one shape.
    Export(ExportArgs),
    /// Train the full model and each single-module ablation; print the table.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Templates, comma separated: table, chair, cabinet.
    #[arg(long, value_delimiter = ',', default_value = "table,chair")]
    template: Vec<Template>,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Train, val, test proportions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.1, 0.2])]
    split: Vec<f64>,
    #[arg(long)]
    points_per_part: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    /// Probability of merging sub-assemblies into one part.
    #[arg(long)]
    level_mixed: Option<f64>,
    /// Generator settings as JSON; flags above override it.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides applied after the file, as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Modules to knock out, comma separated: l2rot, seg, gconv1, gconv2, img, global.
    #[arg(long)]
    ablate: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Dataset directory, if different from the one in the run config.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Random instances per differentiable operation.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt one backward pass on purpose (flip-norm-grad).
    #[arg(long)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Shape id from the dataset records.
    #[arg(long)]
    shape: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Subset of ablations to run (default: all six).
    #[arg(long, value_delimiter = ',')]
    only: Vec<Ablation>,
}

enum Failure {
    Usage(String),
    Verification(String),
    Divergence(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => Failure::Divergence(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    if let Some(list) = &args.ablate {
        cfg.set("ablate", list)?;
    }
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(args: &GenDataArgs) -> CliResult {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            SyntheticSpec::from_json(&text)?
        }
        None => SyntheticSpec::default(),
    };
    spec.templates = args.template.clone();
    if let Some(p) = args.points_per_part {
        spec.points_per_part = p;
    }
    if let Some(g) = args.grid {
        spec.grid = g;
    }
    if let Some(m) = args.level_mixed {
        spec.level_mixed_probability = m;
    }
    let (train, val, test) = split_counts(args.count, (args.split[0], args.split[1], args.split[2]));
    let data = Dataset::generate(&spec, SplitCounts { train, val, test }, args.seed)?;
    data.save(&args.out)?;
    let invisible: usize = data.records.iter().map(|r| r.visible().iter().filter(|v| !**v).count()).sum();
    println!(
        "wrote {} shapes ({train}/{val}/{test}) to {}; {invisible} invisible parts",
        data.records.len(),
        args.out.display()
    );
    Ok(())
}

fn train(args: &ConfigArgs) -> CliResult {
    let cfg = load_config(args)?;
    let data = load_dataset(&cfg)?;
    let records = data.split(Split::Train);
    if records.is_empty() {
        return Err(Failure::Usage("dataset has no training shapes".into()));
    }
    log::info!("training on {} shapes; run directory {}", records.len(), cfg.out.display());
    let (pipeline, curves) = Pipeline::train(&cfg, &records)?;
    save_run(&cfg.out, &pipeline, &curves)?;
    if let Some(seg) = &curves.seg {
        println!("segmentation loss {:.4}", seg.last("soft_iou_loss").unwrap_or(f64::NAN));
    }
    println!("pose loss {:.4}; run saved to {}", curves.pose.last("pose_loss").unwrap_or(f64::NAN), cfg.out.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> CliResult {
    let mut pipeline = load_run(&args.run)?;
    if let Some(d) = &args.dataset {
        pipeline.config.dataset = d.clone();
    }
    let data = load_dataset(&pipeline.config)?;
    let records = data.split(args.split);
    if records.is_empty() {
        return Err(Failure::Usage(format!("split {} is empty", args.split.name())));
    }
    let evaluation = evaluate(&pipeline, &records)?;
    write_evaluation(&args.run, args.split, &evaluation)?;
    print!("{}", summary_table(&evaluation.rows));
    Ok(())
}

fn verify_options(args: &VerifyArgs) -> Result<VerifyOptions, Failure> {
    let fault = match args.inject_fault.as_deref() {
        None => None,
        Some("flip-norm-grad") => Some(Fault::FlipNormGrad),
        Some(other) => return Err(Failure::Usage(format!("unknown fault '{other}' (expected flip-norm-grad)"))),
    };
    Ok(VerifyOptions {
        grad_instances: args.instances,
        assignment_trials: args.trials,
        seed: args.seed,
        fault,
    })
}

fn report(result: partsmith::Result<Report>) -> CliResult {
    let report = result?;
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("{} checks failed", report.failures().count())))
    }
}

fn export(args: &ExportArgs) -> CliResult {
    let mut pipeline = load_run(&args.run)?;
    if let Some(d) = &args.dataset {
        pipeline.config.dataset = d.clone();
    }
    let data = load_dataset(&pipeline.config)?;
    let record = data
        .get(&args.shape)
        .ok_or_else(|| Failure::Usage(format!("no shape '{}' in {}", args.shape, pipeline.config.dataset.display())))?;
    let pred = pipeline.predict(record)?;
    let files = export_shape(&args.out, record, &pred)?;
    println!("wrote {} files to {}", files.len(), args.out.display());
    Ok(())
}

fn ablate(args: &AblateArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    if !cfg.ablations.is_empty() {
        return Err(Failure::Usage("ablate trains its own variants; drop `ablate` from the config".into()));
    }
    let data = load_dataset(&cfg)?;
    let which = if args.only.is_empty() { Ablation::ALL.to_vec() } else { args.only.clone() };
    let rows = run_ablations(&cfg, &data.split(Split::Train), &data.split(Split::Test), &which)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Failure::Usage(format!("{}: {e}", cfg.out.display())))?;
    let table = ablation_table(&rows);
    write_text(&cfg.out.join("ablation.md"), &table)?;
    write_text(&cfg.out.join("ablation.csv"), &ablation_csv(&rows)?)?;
    write_text(&cfg.out.join("config.txt"), &cfg.to_text())?;
    print!("{table}");
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    log::debug!("{SEED_ENV} = {:?}", std::env::var(SEED_ENV).ok());
    let outcome = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify_options(a).and_then(|o| report(run_all(&o))),
        Command::Gradcheck(a) => verify_options(a).and_then(|o| report(run_gradcheck(&o))),
        Command::OracleCheck(a) => verify_options(a).and_then(|o| report(run_oracles(&o))),
        Command::Export(a) => export(a),
        Command::Ablate(a) => ablate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Divergence(m)) => {
            eprintln!("diverged: {m}");
            ExitCode::from(3)
        }
    }
}
