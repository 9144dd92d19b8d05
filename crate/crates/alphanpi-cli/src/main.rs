//! Command-line entry point: train, evaluate, certify-hanoi, export-traces.
//!
//! Exit codes: 0 success (or certified), 1 failure (or not certified),
//! 2 usage/configuration error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use alphanpi::checkpoint::Checkpoint;
use alphanpi::config::{EnvKind, RunConfig};
use alphanpi::env::hanoi::CertificateVerdict;
use alphanpi::env::{AnyEnv, Environment};
use alphanpi::eval::{certify_generalization, evaluate, export_trace, DeployMode, EvalOptions};
use alphanpi::mcts::{SearchMode, Searcher};
use alphanpi::training::Trainer;
use alphanpi::{seed_stream, Error};

#[derive(Parser)]
#[command(
    name = "alphanpi",
    about = "Hierarchy-aware neural tree search trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config file, writing checkpoints and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint over problem sizes.
    Evaluate(EvaluateArgs),
    /// Check the Tower of Hanoi generalization certificate.
    CertifyHanoi(CertifyArgs),
    /// Export exploitation-mode execution traces as JSON.
    ExportTraces(ExportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the JSON run configuration.
    config: PathBuf,
    /// Resume from an existing checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the episode-generation worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Stop after this many iterations even if training is not done.
    #[arg(long)]
    max_iterations: Option<u64>,
    /// Print one line per iteration.
    #[arg(long, default_value_t = true)]
    verbose: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    checkpoint: PathBuf,
    /// Problem sizes (list lengths / disk counts), comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Episodes per size.
    #[arg(long, default_value_t = 40)]
    episodes: usize,
    /// Greedy network rollouts instead of search.
    #[arg(long)]
    no_planning: bool,
    /// Program to run; defaults to the highest-level program.
    #[arg(long)]
    program: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// Write the table as CSV here as well as printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    checkpoint: PathBuf,
    /// Certificate JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    checkpoint: PathBuf,
    /// Program to execute; defaults to the highest-level program.
    #[arg(long)]
    program: Option<String>,
    /// Number of traces.
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Problem size override.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = run_with_large_stack(move || match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::CertifyHanoi(args) => cmd_certify(args),
        Command::ExportTraces(args) => cmd_export(args),
    });
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Usage(_) | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

/// Deep program recursion (long lists, many disks) needs more stack than the
/// default main thread provides on some platforms.
fn run_with_large_stack<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    std::thread::Builder::new()
        .stack_size(512 * 1024 * 1024)
        .spawn(f)
        .expect("spawn worker")
        .join()
        .expect("worker panicked")
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Error> {
    let mut trainer: Trainer<AnyEnv> = if let Some(resume) = &args.resume {
        Checkpoint::load(resume)?.resume()?
    } else {
        let text = std::fs::read_to_string(&args.config)?;
        let config = RunConfig::from_json(&text)?;
        let env = config.build_env()?;
        Trainer::new(env, config)
    };
    if let Some(w) = args.workers {
        trainer.config.workers = w.max(1);
    }
    let max_iterations = args.max_iterations.unwrap_or(trainer.config.max_iterations);

    let out_dir = trainer.config.output_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    // A fresh run starts its own metrics file; resuming appends.
    let fresh = trainer.iteration == 0;
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .truncate(fresh)
        .write(true)
        .open(&metrics_path)?;

    let mut wrote_header = !fresh;
    while trainer.iteration < max_iterations && !trainer.is_done() {
        let before_level = trainer.curriculum.l_max();
        let metrics = trainer.run_iteration()?;
        if !wrote_header {
            writeln!(metrics_file, "{}", metrics.csv_header())?;
            wrote_header = true;
        }
        writeln!(metrics_file, "{}", metrics.csv_row())?;
        if args.verbose {
            println!("{}", metrics.csv_row());
        }
        let leveled_up = trainer.curriculum.l_max() > before_level;
        if leveled_up
            || trainer
                .iteration
                .is_multiple_of(trainer.config.checkpoint_every)
        {
            let ckpt = Checkpoint::from_trainer(&trainer);
            ckpt.save(&out_dir.join(format!("ckpt_iter_{:05}.json", trainer.iteration)))?;
        }
    }
    let ckpt = Checkpoint::from_trainer(&trainer);
    ckpt.save(&out_dir.join("ckpt_final.json"))?;
    println!(
        "training {} after {} iterations (min R = {:.4})",
        if trainer.is_done() {
            "converged"
        } else {
            "stopped"
        },
        trainer.iteration,
        trainer.curriculum.min_eligible_r(),
    );
    Ok(ExitCode::SUCCESS)
}

fn target_program(env: &AnyEnv, requested: Option<&str>) -> Result<usize, Error> {
    let lib = env.library();
    match requested {
        Some(name) => lib
            .find(name)
            .ok_or_else(|| Error::Usage(format!("unknown program {name}"))),
        None => {
            let top = lib.max_level();
            Ok(lib
                .trainable()
                .find(|&i| lib.level(i) == top)
                .expect("library has a top-level program"))
        }
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode, Error> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let env = ckpt.config.build_env()?;
    env.library().validate_against(&ckpt.programs)?;
    let params = ckpt.to_params()?;
    let program = target_program(&env, args.program.as_deref())?;
    let sizes = args.sizes.unwrap_or_else(|| ckpt.config.test_sizes.clone());
    if sizes.contains(&0) {
        return Err(Error::Usage("sizes must be positive".to_string()));
    }
    let mode = if args.no_planning {
        DeployMode::NetOnly
    } else {
        DeployMode::Planning
    };
    let workers = args.workers.unwrap_or(ckpt.config.workers).max(1);
    let report = evaluate(
        &params,
        &env,
        program,
        &ckpt.config.search,
        &EvalOptions {
            sizes,
            episodes: args.episodes,
            mode,
            seed: args.seed,
            workers,
        },
    )?;
    let mut csv = String::from("size,episodes,successes,success_rate\n");
    println!(
        "program {} ({})",
        report.program,
        if args.no_planning {
            "net only"
        } else {
            "net with planning"
        }
    );
    for row in &report.rows {
        println!(
            "size {:>4}: {:>3}/{:<3} = {:.1}%",
            row.size,
            row.successes,
            row.episodes,
            100.0 * row.success_rate
        );
        csv.push_str(&format!(
            "{},{},{},{:.4}\n",
            row.size, row.episodes, row.successes, row.success_rate
        ));
    }
    if let Some(path) = &args.out {
        write_text(path, &csv)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_certify(args: CertifyArgs) -> Result<ExitCode, Error> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    if ckpt.config.environment != EnvKind::Hanoi {
        return Err(Error::Usage(format!(
            "certify-hanoi needs a hanoi checkpoint, found {}",
            ckpt.config.environment.as_str()
        )));
    }
    let params = ckpt.to_params()?;
    let cert = certify_generalization(&params, &ckpt.config.search)?;
    let json = serde_json::to_string_pretty(&cert)?;
    if let Some(path) = &args.out {
        write_text(path, &json)?;
    }
    println!("{json}");
    match cert.verdict {
        CertificateVerdict::Certified => {
            println!("CERTIFIED: the two-disk trace matches; solves any disk count");
            Ok(ExitCode::SUCCESS)
        }
        CertificateVerdict::NotCertified => {
            println!("NOT_CERTIFIED");
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_export(args: ExportArgs) -> Result<ExitCode, Error> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let env = ckpt.config.build_env()?;
    let params = ckpt.to_params()?;
    let program = target_program(&env, args.program.as_deref())?;
    let searcher_config = ckpt.config.search.clone();
    let mut traces = Vec::new();
    for k in 0..args.n {
        let mut episode_env = env.clone();
        let mut rng = seed_stream(args.seed, k as u64, 0, 0);
        episode_env.init_for_task(program, &mut rng, args.size);
        let searcher = Searcher::new(&params, &searcher_config);
        let result = searcher.run_search(
            &mut episode_env,
            program,
            SearchMode::Exploitation,
            &mut rng,
        )?;
        traces.push(export_trace(&episode_env, &result));
    }
    let json = serde_json::to_string_pretty(&traces)?;
    match &args.out {
        Some(path) => write_text(path, &json)?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
