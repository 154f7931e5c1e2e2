//! Fault-injection campaigns and overhead measurement.
//!
//! Trial `i` runs workload `i mod n` under a fault plan seeded with
//! `splitmix64(master + i * 0x9E3779B97F4A7C15)` and is classified against
//! the workload's plain run. Trials run in parallel; rows are always kept
//! in trial order, so reports depend only on the configuration.
//!
//! CSV columns, in order: `trial, workload, seed, faults_applied,
//! fault_summary, class, retries, treatments, instr_plain, instr_hardened,
//! overhead_ratio, end, oracle_diff, self_stop_pes, timer_stop_pes,
//! self_stop_cost, self_stop_instrs, timer_stop_cost, timer_stop_instrs,
//! error`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::AsmError;
use crate::corpus::{builtin_names, builtin_source, corpus, Workload};
use crate::engine::{
    run_hardened, run_plain, OracleDiff, PlainRun, RunEnd, TreatmentConfig, TreatmentOutcome,
};
use crate::fault::{FaultInjector, FaultMode, FaultPlan, FaultRecord};
use crate::gen::gen_program;
use crate::isa::StopReason;

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(SEED_STRIDE);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Injective in `trial` for a fixed master seed.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    splitmix64(master.wrapping_add(trial.wrapping_mul(SEED_STRIDE)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadSpec {
    /// Every built-in workload.
    Corpus,
    Builtin(String),
    File(PathBuf),
    Source {
        name: String,
        text: String,
    },
    /// `count` programs from consecutive seeds starting at `seed`.
    Generated {
        seed: u64,
        size: usize,
        #[serde(default)]
        yield_density: f64,
        #[serde(default = "one")]
        count: u64,
    },
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub gnuplot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub workloads: Vec<WorkloadSpec>,
    pub treatment: TreatmentConfig,
    pub fault_mode: FaultMode,
    pub trials: u64,
    pub master_seed: u64,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    /// A trial may commit at most this many times the plain instruction
    /// count before it is cut off.
    pub step_limit_factor: u64,
    pub outputs: OutputPaths,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            workloads: vec![WorkloadSpec::Corpus],
            treatment: TreatmentConfig::default(),
            fault_mode: FaultMode::SinglePerTreatment { per_window: 1.0 },
            trials: 1000,
            master_seed: 0,
            jobs: None,
            step_limit_factor: 8,
            outputs: OutputPaths::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("workload {workload}: {source}")]
    Asm {
        workload: String,
        #[source]
        source: AsmError,
    },
    #[error("unknown built-in workload {0:?}; known: {1}")]
    UnknownBuiltin(String, String),
    #[error(
        "workload {workload} does not halt under the plain interpreter (stopped with {stop:?})"
    )]
    NoHalt { workload: String, stop: StopReason },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl CampaignConfig {
    /// Reads a JSON config. Relative workload and output paths are taken
    /// relative to the config file.
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| CampaignError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for w in &mut cfg.workloads {
            if let WorkloadSpec::File(p) = w {
                rebase(p);
            }
        }
        for p in [
            &mut cfg.outputs.csv,
            &mut cfg.outputs.json,
            &mut cfg.outputs.gnuplot,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::Config(m));
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if self.workloads.is_empty() {
            return bad("no workloads".into());
        }
        if self.step_limit_factor < 1 {
            return bad("step_limit_factor must be at least 1".into());
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1".into());
        }
        self.treatment
            .validate()
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        self.fault_mode
            .validate()
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        Ok(())
    }
}

pub fn resolve_workloads(specs: &[WorkloadSpec]) -> Result<Vec<Workload>, CampaignError> {
    let mut out = Vec::new();
    let asm = |name: String, src: String| {
        Workload::from_source(name.clone(), src).map_err(|source| CampaignError::Asm {
            workload: name,
            source,
        })
    };
    for spec in specs {
        match spec {
            WorkloadSpec::Corpus => out.extend(corpus()),
            WorkloadSpec::Builtin(name) => {
                let src = builtin_source(name).ok_or_else(|| {
                    CampaignError::UnknownBuiltin(name.clone(), builtin_names().join(", "))
                })?;
                out.push(asm(name.clone(), src)?);
            }
            WorkloadSpec::File(path) => {
                let src = fs::read_to_string(path).map_err(io_err(path))?;
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                out.push(asm(name, src)?);
            }
            WorkloadSpec::Source { name, text } => out.push(asm(name.clone(), text.clone())?),
            WorkloadSpec::Generated {
                seed,
                size,
                yield_density,
                count,
            } => {
                for s in *seed..seed.saturating_add(*count) {
                    let name = format!("gen-s{s}-n{size}-y{yield_density}");
                    out.push(asm(name, gen_program(s, *size, *yield_density))?);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeClass {
    /// No fault was applied.
    NoFault,
    Masked,
    DetectedRecovered,
    HangRecovered,
    Sdc,
    Fatal,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 6] = [
        OutcomeClass::NoFault,
        OutcomeClass::Masked,
        OutcomeClass::DetectedRecovered,
        OutcomeClass::HangRecovered,
        OutcomeClass::Sdc,
        OutcomeClass::Fatal,
    ];
}

/// Classifies a finished trial from its applied injections, treatment
/// outcomes and oracle comparison.
pub fn classify(
    applied: usize,
    outcomes: &[TreatmentOutcome],
    end: RunEnd,
    oracle_diff: Option<OracleDiff>,
) -> OutcomeClass {
    if end == RunEnd::Fatal {
        return OutcomeClass::Fatal;
    }
    if oracle_diff.is_some() {
        return OutcomeClass::Sdc;
    }
    if applied == 0 {
        return OutcomeClass::NoFault;
    }
    let retried = outcomes.iter().any(|o| o.retries() > 0);
    if !retried {
        OutcomeClass::Masked
    } else if outcomes.iter().any(|o| o.hang_detected || o.watchdog_fired) {
        OutcomeClass::HangRecovered
    } else {
        OutcomeClass::DetectedRecovered
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: u64,
    pub workload: String,
    pub seed: u64,
    pub faults_applied: usize,
    pub fault_summary: String,
    pub class: OutcomeClass,
    pub retries: u64,
    pub treatments: u64,
    pub instr_plain: u64,
    pub instr_hardened: u64,
    pub overhead_ratio: f64,
    pub end: Option<RunEnd>,
    pub oracle_diff: Option<OracleDiff>,
    pub self_stop_pes: u64,
    pub timer_stop_pes: u64,
    pub self_stop_cost: u64,
    pub self_stop_instrs: u64,
    pub timer_stop_cost: u64,
    pub timer_stop_instrs: u64,
    pub error: Option<String>,
}

const SUMMARY_EVENTS: usize = 4;

fn fault_summary(log: &[FaultRecord]) -> String {
    let applied: Vec<_> = log.iter().filter(|r| r.event.applied).collect();
    let mut s = String::new();
    for (i, r) in applied.iter().take(SUMMARY_EVENTS).enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(
            s,
            "{}.{}:{}@{}:{}",
            r.window.treatment, r.window.attempt, r.event.phase, r.event.tick, r.event.target
        );
    }
    if applied.len() > SUMMARY_EVENTS {
        let _ = write!(s, " +{}", applied.len() - SUMMARY_EVENTS);
    }
    s
}

fn ratio(cost: u64, instrs: u64) -> f64 {
    if instrs == 0 {
        0.0
    } else {
        cost as f64 / instrs as f64
    }
}

/// Runs one trial against a precomputed oracle.
pub fn run_trial(
    trial: u64,
    seed: u64,
    workload: &Workload,
    oracle: &PlainRun,
    treatment: &TreatmentConfig,
    mode: &FaultMode,
    step_limit_factor: u64,
) -> TrialRow {
    let mut cfg = *treatment;
    cfg.step_limit = cfg.step_limit.min(
        oracle
            .instr_count
            .saturating_mul(step_limit_factor)
            .saturating_add(cfg.quantum),
    );
    let mut injector = FaultInjector::new(FaultPlan {
        mode: mode.clone(),
        seed,
    });
    let mut row = TrialRow {
        trial,
        workload: workload.name.clone(),
        seed,
        faults_applied: 0,
        fault_summary: String::new(),
        class: OutcomeClass::Fatal,
        retries: 0,
        treatments: 0,
        instr_plain: oracle.instr_count,
        instr_hardened: 0,
        overhead_ratio: 0.0,
        end: None,
        oracle_diff: None,
        self_stop_pes: 0,
        timer_stop_pes: 0,
        self_stop_cost: 0,
        self_stop_instrs: 0,
        timer_stop_cost: 0,
        timer_stop_instrs: 0,
        error: None,
    };
    let result = run_hardened(&workload.image, &cfg, &mut injector);
    row.faults_applied = injector.applied_count();
    row.fault_summary = fault_summary(injector.log());
    match result {
        Ok(run) => {
            let st = run.stats;
            let diff = oracle.diff(&run);
            row.class = classify(row.faults_applied, &run.outcomes, run.end, diff);
            row.retries = st.retries;
            row.treatments = st.treatments;
            row.instr_hardened = st.hardened_cost();
            row.overhead_ratio = ratio(row.instr_hardened, oracle.instr_count);
            row.end = Some(run.end);
            row.oracle_diff = diff;
            row.self_stop_pes = st.self_stop_pes;
            row.timer_stop_pes = st.timer_stop_pes;
            row.self_stop_cost = st.self_stop_cost;
            row.self_stop_instrs = st.self_stop_instrs;
            row.timer_stop_cost = st.timer_stop_cost;
            row.timer_stop_instrs = st.timer_stop_instrs;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub no_fault: u64,
    pub masked: u64,
    pub detected_recovered: u64,
    pub hang_recovered: u64,
    pub sdc: u64,
    pub fatal: u64,
}

impl ClassCounts {
    pub fn add(&mut self, class: OutcomeClass) {
        *self.slot(class) += 1;
    }

    fn slot(&mut self, class: OutcomeClass) -> &mut u64 {
        match class {
            OutcomeClass::NoFault => &mut self.no_fault,
            OutcomeClass::Masked => &mut self.masked,
            OutcomeClass::DetectedRecovered => &mut self.detected_recovered,
            OutcomeClass::HangRecovered => &mut self.hang_recovered,
            OutcomeClass::Sdc => &mut self.sdc,
            OutcomeClass::Fatal => &mut self.fatal,
        }
    }

    pub fn get(&self, class: OutcomeClass) -> u64 {
        match class {
            OutcomeClass::NoFault => self.no_fault,
            OutcomeClass::Masked => self.masked,
            OutcomeClass::DetectedRecovered => self.detected_recovered,
            OutcomeClass::HangRecovered => self.hang_recovered,
            OutcomeClass::Sdc => self.sdc,
            OutcomeClass::Fatal => self.fatal,
        }
    }

    pub fn total(&self) -> u64 {
        OutcomeClass::ALL.iter().map(|&c| self.get(c)).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StopSplit {
    pub self_stop_pes: u64,
    pub timer_stop_pes: u64,
    /// Fraction of committed PEs that ended on YIELD or HALT.
    pub self_stop_share: f64,
    pub timer_stop_share: f64,
    /// Hardened cost per committed instruction, per stop kind.
    pub self_stop_overhead: f64,
    pub timer_stop_overhead: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub trials: u64,
    pub workloads: usize,
    pub master_seed: u64,
    pub fault_mode: FaultMode,
    pub counts: ClassCounts,
    pub sdc: u64,
    pub fatal: u64,
    pub engine_errors: u64,
    pub faults_applied: u64,
    pub retries: u64,
    pub mean_overhead: f64,
    pub p95_overhead: f64,
    pub stop_split: StopSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub rows: Vec<TrialRow>,
    pub summary: CampaignSummary,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn summarize(rows: &[TrialRow], cfg: &CampaignConfig, workloads: usize) -> CampaignSummary {
    let mut counts = ClassCounts::default();
    for r in rows {
        counts.add(r.class);
    }
    let ratios: Vec<f64> = rows
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| r.overhead_ratio)
        .collect();
    let mean = if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    };
    let sum = |f: fn(&TrialRow) -> u64| rows.iter().map(f).sum::<u64>();
    let self_pes = sum(|r| r.self_stop_pes);
    let timer_pes = sum(|r| r.timer_stop_pes);
    let pes = self_pes + timer_pes;
    let share = |n: u64| if pes == 0 { 0.0 } else { n as f64 / pes as f64 };
    CampaignSummary {
        trials: rows.len() as u64,
        workloads,
        master_seed: cfg.master_seed,
        fault_mode: cfg.fault_mode.clone(),
        sdc: counts.sdc,
        fatal: counts.fatal,
        engine_errors: rows.iter().filter(|r| r.error.is_some()).count() as u64,
        faults_applied: rows.iter().map(|r| r.faults_applied as u64).sum(),
        retries: sum(|r| r.retries),
        mean_overhead: mean,
        p95_overhead: percentile(&ratios, 95.0),
        stop_split: StopSplit {
            self_stop_pes: self_pes,
            timer_stop_pes: timer_pes,
            self_stop_share: share(self_pes),
            timer_stop_share: share(timer_pes),
            self_stop_overhead: ratio(sum(|r| r.self_stop_cost), sum(|r| r.self_stop_instrs)),
            timer_stop_overhead: ratio(sum(|r| r.timer_stop_cost), sum(|r| r.timer_stop_instrs)),
        },
        counts,
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .expect("thread pool");
    pool.install(f)
}

/// Plain runs of every workload; each must halt.
pub fn oracles(workloads: &[Workload], step_limit: u64) -> Result<Vec<PlainRun>, CampaignError> {
    workloads
        .par_iter()
        .map(|w| {
            let run = run_plain(&w.image, step_limit)
                .map_err(|e| CampaignError::Config(format!("{}: {e}", w.name)))?;
            if run.stop != StopReason::Halt {
                return Err(CampaignError::NoHalt {
                    workload: w.name.clone(),
                    stop: run.stop,
                });
            }
            Ok(run)
        })
        .collect()
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    cfg.validate()?;
    let workloads = resolve_workloads(&cfg.workloads)?;
    run_campaign_on(cfg, &workloads)
}

pub fn run_campaign_on(
    cfg: &CampaignConfig,
    workloads: &[Workload],
) -> Result<CampaignReport, CampaignError> {
    cfg.validate()?;
    if workloads.is_empty() {
        return Err(CampaignError::Config("no workloads".into()));
    }
    with_pool(cfg.jobs, || {
        let plain = oracles(workloads, cfg.treatment.step_limit)?;
        let n = workloads.len() as u64;
        let rows: Vec<TrialRow> = (0..cfg.trials)
            .into_par_iter()
            .map(|i| {
                let w = (i % n) as usize;
                run_trial(
                    i,
                    trial_seed(cfg.master_seed, i),
                    &workloads[w],
                    &plain[w],
                    &cfg.treatment,
                    &cfg.fault_mode,
                    cfg.step_limit_factor,
                )
            })
            .collect();
        let summary = summarize(&rows, cfg, workloads.len());
        Ok(CampaignReport { rows, summary })
    })
}

impl CampaignReport {
    pub fn csv_string(&self) -> Result<String, CampaignError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CampaignError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    /// Per-workload overhead table, whitespace separated, one header line.
    pub fn gnuplot_table(&self) -> String {
        let mut per: BTreeMap<&str, Vec<&TrialRow>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.error.is_none()) {
            per.entry(&r.workload).or_default().push(r);
        }
        let mut out = String::from(
            "# index workload instr_plain mean_ratio self_stop_ratio timer_stop_ratio\n",
        );
        for (i, (name, rows)) in per.iter().enumerate() {
            let mean = rows.iter().map(|r| r.overhead_ratio).sum::<f64>() / rows.len() as f64;
            let s = |f: fn(&TrialRow) -> u64| rows.iter().map(|r| f(r)).sum::<u64>();
            let _ = writeln!(
                out,
                "{i} {name} {} {mean:.6} {:.6} {:.6}",
                rows[0].instr_plain,
                ratio(s(|r| r.self_stop_cost), s(|r| r.self_stop_instrs)),
                ratio(s(|r| r.timer_stop_cost), s(|r| r.timer_stop_instrs)),
            );
        }
        out
    }

    /// Writes whichever reports `paths` names.
    pub fn write(&self, paths: &OutputPaths) -> Result<(), CampaignError> {
        let put = |path: &Option<PathBuf>, body: String| -> Result<(), CampaignError> {
            if let Some(p) = path {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(io_err(dir))?;
                }
                fs::write(p, body).map_err(io_err(p))?;
            }
            Ok(())
        };
        put(&paths.csv, self.csv_string()?)?;
        put(&paths.json, self.summary_json())?;
        put(&paths.gnuplot, self.gnuplot_table())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadPoint {
    pub workload: String,
    pub quantum: u64,
    pub instr_plain: u64,
    pub instr_hardened: u64,
    pub ratio: f64,
    pub self_stop_pes: u64,
    pub timer_stop_pes: u64,
    pub self_stop_ratio: f64,
    pub timer_stop_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub points: Vec<OverheadPoint>,
}

impl OverheadReport {
    pub fn mean_ratio(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().map(|p| p.ratio).sum::<f64>() / self.points.len() as f64
    }

    pub fn for_quantum(&self, quantum: u64) -> impl Iterator<Item = &OverheadPoint> {
        self.points.iter().filter(move |p| p.quantum == quantum)
    }

    pub fn gnuplot_table(&self) -> String {
        let mut out = String::from(
            "# workload quantum instr_plain instr_hardened ratio self_stop_pes timer_stop_pes\n",
        );
        for p in &self.points {
            let _ = writeln!(
                out,
                "{} {} {} {} {:.6} {} {}",
                p.workload,
                p.quantum,
                p.instr_plain,
                p.instr_hardened,
                p.ratio,
                p.self_stop_pes,
                p.timer_stop_pes
            );
        }
        out
    }
}

/// Fault-free hardened cost over plain instruction count for every
/// (workload, quantum) pair.
pub fn measure_overhead(
    workloads: &[Workload],
    quanta: &[u64],
    base: &TreatmentConfig,
) -> Result<OverheadReport, CampaignError> {
    let plain = oracles(workloads, base.step_limit)?;
    let grid: Vec<(usize, u64)> = (0..workloads.len())
        .flat_map(|w| quanta.iter().map(move |&q| (w, q)))
        .collect();
    let points = grid
        .par_iter()
        .map(|&(w, q)| {
            let cfg = TreatmentConfig {
                quantum: q,
                watchdog: base.watchdog.max(4 * q),
                ..*base
            };
            let run = run_hardened(&workloads[w].image, &cfg, &mut FaultInjector::disabled())
                .map_err(|e| CampaignError::Config(format!("{}: {e}", workloads[w].name)))?;
            let st = run.stats;
            let plain_instrs = plain[w].instr_count;
            Ok(OverheadPoint {
                workload: workloads[w].name.clone(),
                quantum: q,
                instr_plain: plain_instrs,
                instr_hardened: st.hardened_cost(),
                ratio: ratio(st.hardened_cost(), plain_instrs),
                self_stop_pes: st.self_stop_pes,
                timer_stop_pes: st.timer_stop_pes,
                self_stop_ratio: ratio(st.self_stop_cost, st.self_stop_instrs),
                timer_stop_ratio: ratio(st.timer_stop_cost, st.timer_stop_instrs),
            })
        })
        .collect::<Result<Vec<_>, CampaignError>>()?;
    Ok(OverheadReport { points })
}
