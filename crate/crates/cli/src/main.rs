//! `bht-sim`: assemble, run, harden, campaign, interval and gen.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 program trap (or a
//! hardened run cut off by its step limit), 3 a FATAL outcome.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bht_core::asm::{assemble, ProgramImage};
use bht_core::campaign::{run_campaign, CampaignConfig};
use bht_core::corpus::{builtin_names, builtin_source};
use bht_core::engine::{run_hardened, run_plain, RunEnd, TreatmentConfig, DEFAULT_STEP_LIMIT};
use bht_core::fault::{FaultInjector, FaultMode, FaultPlan, ScriptedFault};
use bht_core::gen::gen_program;
use bht_core::interval::interval_report;
use bht_core::isa::{decode, StopReason};
use bht_core::report::{HardenReport, PlainReport};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

/// `println!` that reports write errors instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {
        writeln!(std::io::stdout(), $($t)*)?
    };
}

const EXIT_USAGE: u8 = 1;
const EXIT_TRAP: u8 = 2;
const EXIT_FATAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "bht-sim",
    version,
    about = "Duplicate-execution hardening simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a program; prints a listing, or writes little-endian code words with -o.
    Asm {
        /// Assembly file, or builtin:NAME.
        file: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Print the assembled image as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Plain, unhardened execution; prints one output word per line.
    Run {
        file: String,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u64,
        #[arg(long)]
        json: bool,
    },
    /// Hardened execution with optional fault injection.
    Harden {
        file: String,
        #[arg(short, long, default_value_t = 1000)]
        quantum: u64,
        #[arg(long)]
        retry_limit: Option<u32>,
        /// Per-treatment instruction budget; defaults to 4 x quantum.
        #[arg(long)]
        watchdog: Option<u64>,
        /// JSON fault plan: {"mode": ..., "seed": N} or a list of scripted faults.
        #[arg(long, conflicts_with = "mode")]
        fault_plan: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Fault arrivals per tick for --mode poisson, or per-window probability otherwise.
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long, env = "BHT_SIM_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u64,
        #[arg(long)]
        json: bool,
    },
    /// Run a fault-injection campaign described by a JSON config.
    Campaign {
        config: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the config's master seed.
        #[arg(long, env = "BHT_SIM_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Longest treatment window for a fault rate, and the quantum it allows.
    Interval {
        /// Fault rate per second.
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        epsilon: f64,
        /// Instructions per second.
        #[arg(long)]
        ips: f64,
        /// Verify/commit cost as a fraction of the quantum.
        #[arg(long, default_value_t = 0.1)]
        commit_fraction: f64,
    },
    /// Print a random program that terminates by construction.
    Gen {
        #[arg(long, env = "BHT_SIM_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0.0)]
        yield_density: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    None,
    Single,
    Poisson,
    ViolationMulti,
    ViolationStore,
}

fn load_program(spec: &str) -> Result<(String, ProgramImage)> {
    let (name, source) = match spec.strip_prefix("builtin:") {
        Some(name) => {
            let src = builtin_source(name).with_context(|| {
                format!(
                    "unknown built-in {name:?}; known: {}",
                    builtin_names().join(", ")
                )
            })?;
            (name.to_string(), src)
        }
        None => {
            let path = Path::new(spec);
            let src = fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
            let name = path
                .file_stem()
                .map_or(spec.into(), |s| s.to_string_lossy().into_owned());
            (name, src)
        }
    };
    let image = assemble(&source).with_context(|| format!("assembling {spec}"))?;
    Ok((name, image))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanFile {
    Plan(FaultPlan),
    Faults(Vec<ScriptedFault>),
    Mode(FaultMode),
}

fn load_plan(path: &Path) -> Result<(FaultMode, Option<u64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let plan: PlanFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing fault plan {}", path.display()))?;
    Ok(match plan {
        PlanFile::Plan(p) => (p.mode, Some(p.seed)),
        PlanFile::Faults(faults) => (FaultMode::Scripted { faults }, None),
        PlanFile::Mode(mode) => (mode, None),
    })
}

fn mode_from_arg(mode: ModeArg, rate: Option<f64>) -> Result<FaultMode> {
    Ok(match mode {
        ModeArg::None => FaultMode::None,
        ModeArg::Single => FaultMode::SinglePerTreatment {
            per_window: rate.unwrap_or(1.0),
        },
        ModeArg::Poisson => FaultMode::Poisson {
            rate: rate.context("--mode poisson needs --rate")?,
        },
        ModeArg::ViolationMulti => FaultMode::ViolationMulti {
            per_window: rate.unwrap_or(0.05),
            faults_per_window: 2,
            mirror_probability: 0.5,
        },
        ModeArg::ViolationStore => FaultMode::ViolationStore {
            per_window: rate.unwrap_or(0.05),
        },
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    out!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn stop_exit(stop: StopReason) -> u8 {
    match stop {
        StopReason::Halt => 0,
        _ => EXIT_TRAP,
    }
}

fn cmd_asm(file: &str, output: Option<PathBuf>, json: bool) -> Result<u8> {
    let (_, image) = load_program(file)?;
    if let Some(path) = output {
        let bytes: Vec<u8> = image.code.iter().flat_map(|w| w.to_le_bytes()).collect();
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    if json {
        print_json(&image)?;
    } else {
        let mut out = std::io::stdout().lock();
        for (addr, &word) in image.code.iter().enumerate() {
            let text =
                decode(word).map_or_else(|| format!(".word 0x{word:08X}"), |i| i.to_string());
            writeln!(out, "{addr:05}  {word:08X}  {text}")?;
        }
    }
    Ok(0)
}

fn cmd_run(file: &str, step_limit: u64, json: bool) -> Result<u8> {
    let (name, image) = load_program(file)?;
    let run = run_plain(&image, step_limit)?;
    if json {
        print_json(&PlainReport::new(&name, &run))?;
    } else {
        let mut out = std::io::stdout().lock();
        for v in &run.output {
            writeln!(out, "{v}")?;
        }
        eprintln!(
            "{name}: {:?} after {} instructions",
            run.stop, run.instr_count
        );
    }
    Ok(stop_exit(run.stop))
}

#[allow(clippy::too_many_arguments)]
fn cmd_harden(
    file: &str,
    quantum: u64,
    retry_limit: Option<u32>,
    watchdog: Option<u64>,
    fault_plan: Option<PathBuf>,
    mode: Option<ModeArg>,
    rate: Option<f64>,
    seed: Option<u64>,
    step_limit: u64,
    json: bool,
) -> Result<u8> {
    let (name, image) = load_program(file)?;
    let mut cfg = TreatmentConfig::with_quantum(quantum);
    cfg.step_limit = step_limit;
    if let Some(r) = retry_limit {
        cfg.retry_limit = r;
    }
    if let Some(w) = watchdog {
        cfg.watchdog = w;
    }
    cfg.validate()?;
    let (fault_mode, plan_seed) = match (fault_plan, mode) {
        (Some(path), _) => load_plan(&path)?,
        (None, Some(m)) => (mode_from_arg(m, rate)?, None),
        (None, None) => (FaultMode::None, None),
    };
    fault_mode.validate()?;
    let seed = seed.or(plan_seed).unwrap_or(0);

    let plain = run_plain(&image, step_limit)?;
    let mut injector = FaultInjector::new(FaultPlan {
        mode: fault_mode.clone(),
        seed,
    });
    let run = run_hardened(&image, &cfg, &mut injector)?;
    let report = HardenReport::new(
        &name,
        cfg,
        fault_mode,
        seed,
        &plain,
        &run,
        injector.log().to_vec(),
    );

    if json {
        print_json(&report)?;
    } else {
        let s = &report.status;
        out!("workload        {}", report.workload);
        out!("end             {:?}", report.end);
        out!(
            "treatments      {} (committed {}, after retry {}, fatal {}, trapped {})",
            report.stats.treatments,
            s.committed,
            s.committed_after_retry,
            s.fatal,
            s.program_trap
        );
        out!("retries         {}", report.stats.retries);
        out!("faults applied  {}", report.faults_applied());
        out!("instr plain     {}", report.instr_plain);
        out!(
            "instr hardened  {} (runs {}, verify/commit {})",
            report.instr_hardened,
            report.stats.instr_executed,
            report.stats.commit_charge
        );
        out!("overhead ratio  {:.4}", report.overhead_ratio);
        out!(
            "PEs             {} self-stop, {} timer-stop",
            report.stats.self_stop_pes,
            report.stats.timer_stop_pes
        );
        match report.oracle_diff {
            None => out!("oracle          match"),
            Some(d) => out!("oracle          differs ({d:?})"),
        }
    }
    Ok(match report.end {
        RunEnd::Halted => 0,
        RunEnd::ProgramTrap(_) | RunEnd::StepLimit => EXIT_TRAP,
        RunEnd::Fatal => EXIT_FATAL,
    })
}

fn cmd_campaign(
    config: &Path,
    jobs: Option<usize>,
    seed: Option<u64>,
    trials: Option<u64>,
) -> Result<u8> {
    let mut cfg = CampaignConfig::load(config)?;
    if jobs.is_some() {
        cfg.jobs = jobs;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    let report = run_campaign(&cfg)?;
    report.write(&cfg.outputs)?;
    out!("{}", report.summary_json());
    Ok(if report.summary.fatal > 0 {
        EXIT_FATAL
    } else {
        0
    })
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Asm { file, output, json } => cmd_asm(&file, output, json),
        Command::Run {
            file,
            step_limit,
            json,
        } => cmd_run(&file, step_limit, json),
        Command::Harden {
            file,
            quantum,
            retry_limit,
            watchdog,
            fault_plan,
            mode,
            rate,
            seed,
            step_limit,
            json,
        } => cmd_harden(
            &file,
            quantum,
            retry_limit,
            watchdog,
            fault_plan,
            mode,
            rate,
            seed,
            step_limit,
            json,
        ),
        Command::Campaign {
            config,
            jobs,
            seed,
            trials,
        } => cmd_campaign(&config, jobs, seed, trials),
        Command::Interval {
            rate,
            epsilon,
            ips,
            commit_fraction,
        } => {
            print_json(&interval_report(rate, epsilon, ips, commit_fraction)?)?;
            Ok(0)
        }
        Command::Gen {
            seed,
            size,
            yield_density,
        } => {
            if size < 1 {
                bail!("--size must be at least 1");
            }
            if !(0.0..=1.0).contains(&yield_density) {
                bail!("--yield-density must lie in [0, 1]");
            }
            out!("{}", gen_program(seed, size, yield_density));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        // A closed pipe on stdout (`| head`) is not an error.
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}
