//! Experiment front end.
//!
//! Subcommands: `generate` writes a synthetic task stream to disk, `run`
//! executes one experiment and emits its reports, `oracle` compares a run's
//! correlation-matrix dumps against complete-label statistics, `gradcheck`
//! verifies analytic gradients of the full objective.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration or input error,
//! 3 numerical divergence.

use clap::{Args, Parser, Subcommand};
use mlcl::acm::{acm_distance, oracle_acm, read_acm, write_acm};
use mlcl::config::{ExperimentConfig, StreamSource};
use mlcl::error::Error;
use mlcl::optim::GradCheckOptions;
use mlcl::report::write_run_record;
use mlcl::stream::save_stream;
use mlcl::trainer::{
    gradcheck_full_objective, run_continual_with_checkpoints, run_multitask, TrainerMode,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mlcl", about = "Multi-label continual learning experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (`key = value` with sections).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `[out] dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task stream and write dataset + manifest files.
    Generate(CommonArgs),
    /// Run one experiment end to end and write its reports.
    Run(CommonArgs),
    /// Compare a finished run's matrix dumps against the complete-label
    /// oracle, writing oracle matrices and a distance report.
    Oracle(CommonArgs),
    /// Check analytic gradients of the full objective on a toy instance.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Maximum accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Corrupt one analytic gradient to demonstrate a failing check.
        #[arg(long)]
        inject_fault: bool,
    },
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_BAD_INPUT: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(threads) = std::env::var("MLCL_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not apply MLCL_THREADS={n}: {e}");
                }
            }
            _ => {
                eprintln!("error: MLCL_THREADS must be a positive integer");
                return ExitCode::from(EXIT_BAD_INPUT);
            }
        }
    }
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Gradcheck { common, tolerance, inject_fault } => {
            cmd_gradcheck(common, *tolerance, *inject_fault)
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged(_) => ExitCode::from(EXIT_DIVERGED),
                _ => ExitCode::from(EXIT_BAD_INPUT),
            }
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn claim_out_dir(cfg: &ExperimentConfig, force: bool) -> Result<PathBuf, Error> {
    let dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory (use --out or [out] dir)".into()))?;
    if dir.exists() && dir.read_dir()?.next().is_some() && !force {
        return Err(Error::Config(format!(
            "output directory '{}' is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn cmd_generate(args: &CommonArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    let out = claim_out_dir(&cfg, args.force)?;
    if !matches!(cfg.stream, StreamSource::Synthetic(_)) {
        return Err(Error::Config("generate needs a synthetic stream spec".into()));
    }
    let stream = cfg.build_stream()?;
    save_stream(&out, &stream)?;
    println!(
        "wrote {} tasks ({} train / {} test examples) to {}",
        stream.task_count(),
        stream.train.iter().map(Vec::len).sum::<usize>(),
        stream.test.iter().map(Vec::len).sum::<usize>(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: &CommonArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    let out = claim_out_dir(&cfg, args.force)?;
    let stream = cfg.build_stream()?;

    if cfg.run.mode == TrainerMode::MultiTask {
        let report = run_multitask(&stream, &cfg.run)?;
        let values: Vec<String> = report.values().iter().map(|v| format!("{v:.6}")).collect();
        std::fs::write(
            out.join("metrics.csv"),
            format!("task,split,mAP,CP,CR,CF1,OP,OR,OF1\n1,1,{}\n", values.join(",")),
        )?;
        println!("multi-task reference: mAP {:.2}", report.map);
        return Ok(ExitCode::SUCCESS);
    }

    let checkpoints = out.join("checkpoints");
    match run_continual_with_checkpoints(&stream, &cfg.run, Some(&checkpoints)) {
        Ok(record) => {
            write_run_record(&out, &record)?;
            let last = record.per_task.last().expect("at least one task");
            println!(
                "finished {} tasks; final seen-mAP {:.2}; reports in {}",
                record.per_task.len(),
                last.seen_map,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(Error::Diverged(msg)) => {
            let last_good = latest_checkpoint(&checkpoints);
            match last_good {
                Some(path) => eprintln!("error: {msg}; last good checkpoint: {}", path.display()),
                None => eprintln!("error: {msg}; no checkpoint was written"),
            }
            Ok(ExitCode::from(EXIT_DIVERGED))
        }
        Err(e) => Err(e),
    }
}

fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("checkpoint_t") && n.ends_with(".json"))
        })
        .collect();
    found.sort();
    found.pop()
}

fn cmd_oracle(args: &CommonArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    let dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("oracle needs the run directory (--out)".into()))?;
    let stream = cfg.build_stream()?;

    let mut rows = String::from("task,d\n");
    let mut compared = 0usize;
    for t in 0..stream.task_count() {
        let dump_path = dir.join(format!("acm_t{}.txt", t + 1));
        if !dump_path.exists() {
            if t == 0 {
                return Err(Error::Config(format!(
                    "no matrix dumps found under '{}': run the experiment first",
                    dir.display()
                )));
            }
            break;
        }
        let (dumped, _) = read_acm(&dump_path)?;
        let oracle = oracle_acm(&stream, t)?;
        let d = acm_distance(&dumped.values, &oracle.values)?;
        write_acm(&dir.join(format!("oracle_t{}.txt", t + 1)), &oracle, stream.scenario)?;
        rows.push_str(&format!("{},{d:.17e}\n", t + 1));
        println!("task {}: d = {d:.6e}", t + 1);
        compared += 1;
    }
    if compared == 0 {
        return Err(Error::Config("no matrix dumps to compare".into()));
    }
    std::fs::write(dir.join("oracle_distance.csv"), rows)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: &CommonArgs, tolerance: f64, inject_fault: bool) -> Result<ExitCode, Error> {
    let mut cfg = load_config(args)?;
    if args.config.is_none() {
        // Toy instance: small dimensions keep the finite-difference sweep fast.
        cfg.run.dims.input_dim = 8;
        cfg.run.dims.feature_dim = 8;
        cfg.run.dims.gcn_dim1 = 6;
        cfg.run.dims.gcn_dim2 = 6;
        cfg.run.dims.backbone_layers = 2;
    }
    let options = GradCheckOptions {
        tolerance,
        fault: if inject_fault { Some(2) } else { None },
        ..GradCheckOptions::default()
    };
    let report = gradcheck_full_objective(&cfg.run, &options)?;
    println!("{:<16} {:>14}  {}", "parameter", "max rel err", "status");
    for p in &report.params {
        println!(
            "{:<16} {:>14.3e}  {}",
            p.name,
            p.max_rel_err,
            if p.pass { "pass" } else { "FAIL" }
        );
    }
    if report.all_pass() {
        println!("all parameters pass at tolerance {tolerance:.1e}");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradient check FAILED at tolerance {tolerance:.1e}");
        Ok(ExitCode::from(EXIT_CHECK_FAILED))
    }
}
