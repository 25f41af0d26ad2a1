use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use hennion_lab::cli::{self, ExperimentConfig, Level};
use hennion_lab::config::Tolerances;
use hennion_lab::Error;

#[derive(Parser)]
#[command(name = "hennion-lab", version, about = "Hennion metric, contraction and ergodic-process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sample count for sampled estimators.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Print machine-readable JSON instead of a text summary.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// m-quantities and distance between two matrix files.
    Metric { x: PathBuf, y: PathBuf },
    /// Certified contraction interval of a map file.
    Contraction {
        map: PathBuf,
        /// Refinement iterations per start.
        #[arg(long, default_value_t = 50)]
        refine: usize,
    },
    /// Random quantum process run from a config.
    Process,
    /// Finitely correlated state experiments from a config.
    Fcs,
    /// Invariant suites.
    Selftest {
        #[arg(value_enum, default_value_t = Level::Quick)]
        level: Level,
    },
}

#[derive(Serialize)]
struct ErrorObject<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

fn report_error(e: &Error) -> ExitCode {
    let obj = ErrorObject { kind: e.kind(), message: e.to_string(), exit_code: e.exit_code() };
    println!("{}", serde_json::json!({ "error": obj }));
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn load_config(cli: &Cli) -> hennion_lab::Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::InvalidInput("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(n) = cli.samples {
        cfg.process.record.estimate.n_samples = n;
        cfg.fcs.clustering.psi.record.estimate.n_samples = n;
    }
    Ok(cfg)
}

fn out_dir(cfg: Option<&ExperimentConfig>, cli: &Cli, default: &str) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| Path::new(default).to_path_buf())
}

fn tolerances(cli: &Cli) -> hennion_lab::Result<Tolerances> {
    match &cli.config {
        Some(p) => {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            match v.get("tolerances") {
                Some(t) => serde_json::from_value(t.clone()).map_err(|e| Error::InvalidInput(format!("tolerances: {e}"))),
                None => Ok(Tolerances::default()),
            }
        }
        None => Ok(Tolerances::default()),
    }
}

fn run(cli: &Cli) -> hennion_lab::Result<ExitCode> {
    match &cli.command {
        Command::Metric { x, y } => {
            let tol = tolerances(cli)?;
            let r = cli::cmd_metric(
                &std::fs::read_to_string(x)?,
                &std::fs::read_to_string(y)?,
                cli.samples.unwrap_or(2000),
                cli.seed.unwrap_or(0),
                &tol,
            )?;
            print_json(&r);
            Ok(ExitCode::SUCCESS)
        }
        Command::Contraction { map, refine } => {
            let tol = tolerances(cli)?;
            let out = out_dir(None, cli, "contraction-out");
            let (r, _) = cli::cmd_contraction(
                &std::fs::read_to_string(map)?,
                cli.samples.unwrap_or(200),
                *refine,
                cli.seed.unwrap_or(0),
                &out,
                &tol,
            )?;
            print_json(&r);
            Ok(ExitCode::SUCCESS)
        }
        Command::Process => {
            let cfg = load_config(cli)?;
            let out = out_dir(Some(&cfg), cli, "process-out");
            let o = cli::cmd_process(&cfg, &out)?;
            if cli.json {
                print_json(&o.summary);
            } else {
                for d in &o.summary.directions {
                    println!(
                        "[process] {}: C mean {:?} stddev {:?}, nu histogram {:?} (+{} uncertified)",
                        d.direction.label(),
                        d.c_mean,
                        d.c_std,
                        d.nu_histogram,
                        d.nu_missing
                    );
                }
                for s in &o.manifest.suites {
                    println!("[process] {} {}: {}", if s.pass { "PASS" } else { "FAIL" }, s.name, s.detail);
                }
                println!("[process] outputs in {}", out.display());
            }
            match o.failure {
                Some(f) => {
                    eprintln!("error: {}: {}", f.kind, f.message);
                    Ok(ExitCode::from(f.exit_code as u8))
                }
                None => Ok(ExitCode::SUCCESS),
            }
        }
        Command::Fcs => {
            let cfg = load_config(cli)?;
            let out = out_dir(Some(&cfg), cli, "fcs-out");
            let o = cli::cmd_fcs(&cfg, &out)?;
            if cli.json {
                print_json(&o.summary);
            } else {
                for s in &o.summary.streams {
                    println!(
                        "[fcs] stream {}: kappa_fit {:?}, kappa {:?}, E_k {:?}, all pass {}",
                        s.stream, s.kappa_fit, s.kappa, s.e_k, s.all_pass
                    );
                }
                for s in &o.manifest.suites {
                    println!("[fcs] {} {}: {}", if s.pass { "PASS" } else { "FAIL" }, s.name, s.detail);
                }
                println!("[fcs] outputs in {}", out.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { level } => {
            let r = cli::cmd_selftest(*level, cli.seed.unwrap_or(0), &Tolerances::default());
            if cli.json {
                print_json(&r);
            } else {
                for s in &r.suites {
                    println!("{} {}: {}", if s.pass { "PASS" } else { "FAIL" }, s.name, s.detail);
                }
            }
            Ok(if r.all_pass { ExitCode::SUCCESS } else { ExitCode::from(5) })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("HENNION_LAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => report_error(&e),
    }
}
