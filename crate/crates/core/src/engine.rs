//! Duplicate execution with compare-and-commit.
//!
//! A treatment processes one processing element (PE):
//!
//! 1. fork a working copy from the reliable store and run the PE,
//! 2. fork again and run it a second time,
//! 3. compare the two encoded digests, stage the first one in immune
//!    memory, check the staged record against the second digest,
//! 4. commit the staged record, or reject both runs and start over from the
//!    same store state.
//!
//! The plain, uninterrupted interpreter ([`run_plain`]) is the oracle every
//! hardened result is checked against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::ProgramImage;
use crate::digest::{compare_buffers, Comparison, DigestField, ExecutionDigest};
use crate::fault::{
    FaultError, FaultEvent, FaultInjector, FaultSite, FaultTarget, Phase, WindowGeometry, WindowId,
};
use crate::isa::{run_segment, IoContext, MachineState, StopReason, TrapCause};
use crate::store::{discard, CommitRecord, OutputSink, ReliableStore, StoreError};

/// Instruction-equivalent charge for the verification/commit phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitCost {
    pub base: u64,
    pub per_dirty_page: u64,
}

impl Default for CommitCost {
    fn default() -> Self {
        Self {
            base: 5,
            per_dirty_page: 2,
        }
    }
}

impl CommitCost {
    pub fn phase_len(&self, dirty_pages: usize) -> u64 {
        self.base + self.per_dirty_page * dirty_pages as u64
    }

    /// Ticks of the phase spent before the comparison completes.
    pub fn compare_len(&self, dirty_pages: usize) -> u64 {
        self.phase_len(dirty_pages).div_ceil(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TreatmentConfigSpec")]
pub struct TreatmentConfig {
    /// Timer-stop bound in instructions.
    pub quantum: u64,
    /// Retries allowed after the first attempt.
    pub retry_limit: u32,
    /// Instruction budget for one treatment across all attempts.
    pub watchdog: u64,
    pub commit_cost: CommitCost,
    /// Upper bound on committed instructions for a whole hardened run.
    pub step_limit: u64,
}

pub const DEFAULT_QUANTUM: u64 = 1000;
pub const DEFAULT_STEP_LIMIT: u64 = 100_000_000;

impl Default for TreatmentConfig {
    fn default() -> Self {
        Self::with_quantum(DEFAULT_QUANTUM)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("quantum must be at least 1")]
    Quantum,
    #[error("retry limit must be at least 1")]
    RetryLimit,
    #[error("watchdog {watchdog} must be at least twice the quantum {quantum}")]
    Watchdog { watchdog: u64, quantum: u64 },
}

/// Wire form: omitted fields take their defaults, with the watchdog
/// following the given quantum.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TreatmentConfigSpec {
    quantum: Option<u64>,
    retry_limit: Option<u32>,
    watchdog: Option<u64>,
    commit_cost: Option<CommitCost>,
    step_limit: Option<u64>,
}

impl From<TreatmentConfigSpec> for TreatmentConfig {
    fn from(spec: TreatmentConfigSpec) -> Self {
        let base = Self::with_quantum(spec.quantum.unwrap_or(DEFAULT_QUANTUM));
        Self {
            retry_limit: spec.retry_limit.unwrap_or(base.retry_limit),
            watchdog: spec.watchdog.unwrap_or(base.watchdog),
            commit_cost: spec.commit_cost.unwrap_or(base.commit_cost),
            step_limit: spec.step_limit.unwrap_or(base.step_limit),
            ..base
        }
    }
}

impl TreatmentConfig {
    pub fn with_quantum(quantum: u64) -> Self {
        Self {
            quantum,
            retry_limit: 3,
            watchdog: 4 * quantum,
            commit_cost: CommitCost::default(),
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.quantum < 1 {
            return Err(ConfigError::Quantum);
        }
        if self.retry_limit < 1 {
            return Err(ConfigError::RetryLimit);
        }
        // Two fault-free runs of a full quantum must fit in one window.
        if self.watchdog < 2 * self.quantum {
            return Err(ConfigError::Watchdog {
                watchdog: self.watchdog,
                quantum: self.quantum,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentStatus {
    Committed,
    CommittedAfterRetry(u32),
    FatalRetryExhausted,
    ProgramTrap(TrapCause),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentOutcome {
    pub index: u64,
    pub status: TreatmentStatus,
    /// Instructions executed by both runs of every attempt.
    pub instr_cost: u64,
    /// Verification/commit charge over every attempt.
    pub commit_cost: u64,
    pub stop: StopReason,
    /// Length of the accepted PE.
    pub pe_len: u64,
    pub mismatches: Vec<DigestField>,
    pub watchdog_fired: bool,
    /// A rejected attempt where one run reached its self-stop and the
    /// other was cut off by the timer or the watchdog.
    pub hang_detected: bool,
}

impl TreatmentOutcome {
    pub fn retries(&self) -> u32 {
        match self.status {
            TreatmentStatus::CommittedAfterRetry(n) => n,
            TreatmentStatus::FatalRetryExhausted => self.mismatches.len() as u32,
            _ => 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("fault injection: {0}")]
    Fault(#[from] FaultError),
    #[error("commit: {0}")]
    Store(#[from] StoreError),
    #[error("reliable store changed outside a commit during treatment {0}")]
    StoreMutated(u64),
    #[error("invalid treatment config: {0}")]
    Config(#[from] ConfigError),
}

/// Runs one PE on a fresh fork without faults.
pub fn run_pe(
    store: &ReliableStore,
    prog: &ProgramImage,
    cfg: &TreatmentConfig,
) -> ExecutionDigest {
    execute_run(store, prog, cfg, 0, &mut [], &mut |_| {}).expect("fault-free run cannot fail")
}

fn run_budget(cfg: &TreatmentConfig, spent: u64) -> (u64, bool) {
    let remaining = cfg.watchdog.saturating_sub(spent);
    if remaining < cfg.quantum {
        (remaining, true)
    } else {
        (cfg.quantum, false)
    }
}

/// One run of a PE with the given machine-state faults. Events are applied
/// when the run's instruction count reaches their tick; events past the
/// point where the run stopped are never applied.
fn execute_run(
    store: &ReliableStore,
    prog: &ProgramImage,
    cfg: &TreatmentConfig,
    spent: u64,
    events: &mut [FaultEvent],
    on_event: &mut dyn FnMut(FaultEvent),
) -> Result<ExecutionDigest, EngineError> {
    let (budget, watchdog_bound) = run_budget(cfg, spent);
    let mut state = store.fork_working();
    let mut io = IoContext::new(store.latched_input(prog));
    let code = &prog.code;

    let mut stop = None;
    if budget == 0 {
        stop = Some(StopReason::Trap(TrapCause::Watchdog));
    }
    for event in events.iter_mut() {
        if stop.is_some() || event.tick >= budget {
            on_event(*event);
            continue;
        }
        if state.instr_count < event.tick {
            let s = run_segment(&mut state, code, &mut io, event.tick);
            if s != StopReason::Quantum {
                stop = Some(s);
                on_event(*event);
                continue;
            }
        }
        event.apply(FaultSite::Machine(&mut state))?;
        on_event(*event);
    }
    let stop = match stop {
        Some(s) => s,
        None => match run_segment(&mut state, code, &mut io, budget) {
            StopReason::Quantum if watchdog_bound => StopReason::Trap(TrapCause::Watchdog),
            s => s,
        },
    };
    let digest = ExecutionDigest::capture(&state, &io, stop);
    discard(state);
    Ok(digest)
}

/// A byte past the end of a buffer that came out shorter than the one the
/// event was aimed at simply misses.
fn strike_digest(event: &mut FaultEvent, buffers: &mut [Vec<u8>; 2]) -> Result<(), FaultError> {
    if let FaultTarget::DigestBuffer { copy, byte, .. } = event.target {
        if byte >= buffers[copy.index()].len() {
            return Ok(());
        }
    }
    event.apply(FaultSite::Digests(buffers))
}

fn record_for(digest: ExecutionDigest, seq: u64) -> CommitRecord {
    CommitRecord {
        seq,
        pages: digest.dirty_pages,
        regs: digest.regs,
        pc: digest.pc,
        inputs_consumed: digest.inputs_consumed,
        outputs: digest.outputs,
        stop: digest.stop,
    }
}

fn apply_store_events(
    store: &mut ReliableStore,
    events: &mut [FaultEvent],
    exemption_lifted: bool,
    on_event: &mut dyn FnMut(FaultEvent),
) -> Result<(), EngineError> {
    for e in events.iter_mut() {
        e.apply(FaultSite::Store {
            store,
            exemption_lifted,
        })?;
        on_event(*e);
    }
    Ok(())
}

/// Processes one treatment: duplicate runs, verification and commit, with
/// up to `retry_limit` retries from the same store state.
pub fn process_treatment(
    store: &mut ReliableStore,
    prog: &ProgramImage,
    cfg: &TreatmentConfig,
    injector: &mut FaultInjector,
    sink: &mut dyn OutputSink,
    index: u64,
) -> Result<TreatmentOutcome, EngineError> {
    let audit = !injector.lifts_store_exemption();
    let exemption_lifted = injector.lifts_store_exemption();
    let seal = store.seal();

    let mut spent = 0u64;
    let mut instr_cost = 0u64;
    let mut commit_cost = 0u64;
    let mut mismatches = Vec::new();
    let mut watchdog_fired = false;
    let mut hang_detected = false;

    for attempt in 0..=cfg.retry_limit {
        let window = WindowId {
            treatment: index,
            attempt,
        };
        let schedule = if injector.is_active() {
            let probe = execute_run(store, prog, cfg, spent, &mut [], &mut |_| {})?;
            let geometry = WindowGeometry {
                run_len: probe.instr_count,
                verify_len: cfg.commit_cost.phase_len(probe.dirty_count()),
                digest_len: probe.encoded_len(),
                pages: store.pages().len(),
            };
            injector.arm(window, &geometry)
        } else {
            Default::default()
        };

        let take = |phase: Phase, store_side: bool| -> Vec<FaultEvent> {
            schedule
                .phase(phase)
                .filter(|e| e.target.hits_store() == store_side)
                .copied()
                .collect()
        };
        let mut run1_events = take(Phase::Run1, false);
        let mut run2_events = take(Phase::Run2, false);
        let mut verify_events = take(Phase::VerifyCommit, false);
        let mut store_events = [
            take(Phase::Run1, true),
            take(Phase::Run2, true),
            take(Phase::VerifyCommit, true),
        ];
        let mut delivered = Vec::new();
        let mut log = |e: FaultEvent| delivered.push(e);

        apply_store_events(store, &mut store_events[0], exemption_lifted, &mut log)?;
        let d1 = execute_run(store, prog, cfg, spent, &mut run1_events, &mut log)?;
        spent += d1.instr_count;
        apply_store_events(store, &mut store_events[1], exemption_lifted, &mut log)?;
        let d2 = execute_run(store, prog, cfg, spent, &mut run2_events, &mut log)?;
        spent += d2.instr_count;
        instr_cost += d1.instr_count + d2.instr_count;
        watchdog_fired |= [d1.stop, d2.stop].contains(&StopReason::Trap(TrapCause::Watchdog));

        let phase_len = cfg.commit_cost.phase_len(d1.dirty_count());
        let compare_len = cfg.commit_cost.compare_len(d1.dirty_count());
        commit_cost += phase_len;
        apply_store_events(store, &mut store_events[2], exemption_lifted, &mut log)?;

        let cut_off =
            |s: StopReason| s.is_timer_stop() || s == StopReason::Trap(TrapCause::Watchdog);
        let timer_split = d1.stop != d2.stop && (cut_off(d1.stop) || cut_off(d2.stop));
        let mut buffers = [d1.encode(), d2.encode()];
        drop((d1, d2));
        let mut late = Vec::new();
        for e in verify_events.iter_mut() {
            if e.tick >= phase_len {
                log(*e);
            } else if e.tick < compare_len {
                strike_digest(e, &mut buffers)?;
                log(*e);
            } else {
                late.push(e);
            }
        }

        let verdict = match compare_buffers(&buffers[0], &buffers[1]) {
            Comparison::Match => {
                for e in late {
                    strike_digest(e, &mut buffers)?;
                    log(*e);
                }
                // The staging area is part of the reliable store.
                let staged = buffers[0].clone();
                if staged != buffers[1] {
                    Err(DigestField::Staging)
                } else {
                    ExecutionDigest::decode(&staged).map_err(|_| DigestField::Encoding)
                }
            }
            Comparison::Mismatch(field) => {
                for e in late {
                    log(*e);
                }
                Err(field)
            }
        };
        for e in delivered {
            injector.record(window, e);
        }

        if audit && !seal.verify(store) {
            return Err(EngineError::StoreMutated(index));
        }

        match verdict {
            Ok(digest) => match digest.stop {
                StopReason::Trap(TrapCause::Watchdog) => {
                    mismatches.push(DigestField::StopReason);
                    hang_detected = true;
                }
                StopReason::Trap(cause) => {
                    return Ok(TreatmentOutcome {
                        index,
                        status: TreatmentStatus::ProgramTrap(cause),
                        instr_cost,
                        commit_cost,
                        stop: digest.stop,
                        pe_len: digest.instr_count,
                        mismatches,
                        watchdog_fired,
                        hang_detected,
                    });
                }
                stop => {
                    let pe_len = digest.instr_count;
                    let seq = store.commit_seq() + 1;
                    store.commit(record_for(digest, seq), sink)?;
                    let status = if attempt == 0 {
                        TreatmentStatus::Committed
                    } else {
                        TreatmentStatus::CommittedAfterRetry(attempt)
                    };
                    return Ok(TreatmentOutcome {
                        index,
                        status,
                        instr_cost,
                        commit_cost,
                        stop,
                        pe_len,
                        mismatches,
                        watchdog_fired,
                        hang_detected,
                    });
                }
            },
            Err(field) => {
                mismatches.push(field);
                hang_detected |= timer_split;
            }
        }
    }

    Ok(TreatmentOutcome {
        index,
        status: TreatmentStatus::FatalRetryExhausted,
        instr_cost,
        commit_cost,
        stop: StopReason::Trap(TrapCause::Watchdog),
        pe_len: 0,
        mismatches,
        watchdog_fired,
        hang_detected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunEnd {
    Halted,
    ProgramTrap(TrapCause),
    Fatal,
    StepLimit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardenedRunStats {
    pub treatments: u64,
    pub retries: u64,
    /// Instructions executed by every run, retries included.
    pub instr_executed: u64,
    pub commit_charge: u64,
    /// Instructions of accepted PEs; equals the plain instruction count
    /// when the run halts.
    pub committed_instrs: u64,
    pub self_stop_pes: u64,
    pub timer_stop_pes: u64,
    pub self_stop_cost: u64,
    pub self_stop_instrs: u64,
    pub timer_stop_cost: u64,
    pub timer_stop_instrs: u64,
    pub watchdog_trips: u64,
}

impl HardenedRunStats {
    pub fn hardened_cost(&self) -> u64 {
        self.instr_executed + self.commit_charge
    }

    fn absorb(&mut self, o: &TreatmentOutcome) {
        self.treatments += 1;
        self.retries += o.retries() as u64;
        self.instr_executed += o.instr_cost;
        self.commit_charge += o.commit_cost;
        self.watchdog_trips += o.watchdog_fired as u64;
        if matches!(
            o.status,
            TreatmentStatus::Committed | TreatmentStatus::CommittedAfterRetry(_)
        ) {
            self.committed_instrs += o.pe_len;
            let cost = o.instr_cost + o.commit_cost;
            if o.stop.is_self_stop() {
                self.self_stop_pes += 1;
                self.self_stop_cost += cost;
                self.self_stop_instrs += o.pe_len;
            } else if o.stop.is_timer_stop() {
                self.timer_stop_pes += 1;
                self.timer_stop_cost += cost;
                self.timer_stop_instrs += o.pe_len;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct HardenedRun {
    pub store: ReliableStore,
    pub outcomes: Vec<TreatmentOutcome>,
    pub stats: HardenedRunStats,
    pub output: Vec<u32>,
    pub end: RunEnd,
}

/// Hardened execution of a whole program, treatment after treatment, until
/// a committed halt, a program trap, retry exhaustion or the step limit.
pub fn run_hardened(
    prog: &ProgramImage,
    cfg: &TreatmentConfig,
    injector: &mut FaultInjector,
) -> Result<HardenedRun, EngineError> {
    cfg.validate()?;
    let mut store = ReliableStore::load(prog)?;
    let mut output = Vec::new();
    let mut outcomes = Vec::new();
    let mut stats = HardenedRunStats::default();

    let end = loop {
        if stats.committed_instrs >= cfg.step_limit {
            break RunEnd::StepLimit;
        }
        let index = outcomes.len() as u64;
        let outcome = process_treatment(&mut store, prog, cfg, injector, &mut output, index)?;
        stats.absorb(&outcome);
        let status = outcome.status;
        let stop = outcome.stop;
        outcomes.push(outcome);
        match status {
            TreatmentStatus::FatalRetryExhausted => break RunEnd::Fatal,
            TreatmentStatus::ProgramTrap(cause) => break RunEnd::ProgramTrap(cause),
            _ if stop == StopReason::Halt => break RunEnd::Halted,
            _ => {}
        }
    };

    Ok(HardenedRun {
        store,
        outcomes,
        stats,
        output,
        end,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainRun {
    pub state: MachineState,
    pub output: Vec<u32>,
    pub instr_count: u64,
    /// `Halt`, a trap, or `Quantum` when the step limit cut the run short.
    pub stop: StopReason,
}

/// Where a hardened result first departs from the plain oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleDiff {
    End,
    Registers,
    Pc,
    Memory,
    Output,
}

impl PlainRun {
    pub fn memory_words(&self) -> Vec<u32> {
        self.state
            .mem
            .pages()
            .iter()
            .flat_map(|p| p.iter().copied())
            .collect()
    }

    /// `None` when the hardened run committed exactly the oracle's final
    /// state and output.
    pub fn diff(&self, hardened: &HardenedRun) -> Option<OracleDiff> {
        let end_ok = match (self.stop, hardened.end) {
            (StopReason::Halt, RunEnd::Halted) => true,
            (StopReason::Trap(a), RunEnd::ProgramTrap(b)) => a == b,
            _ => false,
        };
        if !end_ok {
            return Some(OracleDiff::End);
        }
        // A trapped PE is never committed, so only an output prefix and
        // the end reason are comparable.
        if hardened.end != RunEnd::Halted {
            return (!self.output.starts_with(&hardened.output)).then_some(OracleDiff::Output);
        }
        if self.output != hardened.output {
            return Some(OracleDiff::Output);
        }
        if &self.state.regs != hardened.store.regs() {
            return Some(OracleDiff::Registers);
        }
        if self.state.pc != hardened.store.pc() {
            return Some(OracleDiff::Pc);
        }
        let same_memory = self
            .state
            .mem
            .pages()
            .iter()
            .zip(hardened.store.pages())
            .all(|(a, b)| a[..] == b[..]);
        if !same_memory {
            return Some(OracleDiff::Memory);
        }
        None
    }
}

/// Single uninterrupted, fault-free interpretation.
pub fn run_plain(prog: &ProgramImage, step_limit: u64) -> Result<PlainRun, StoreError> {
    let store = ReliableStore::load(prog)?;
    let mut state = store.fork_working();
    let mut io = IoContext::new(&prog.input_queue);
    let stop = loop {
        match run_segment(&mut state, &prog.code, &mut io, step_limit.max(1)) {
            StopReason::Yield => continue,
            s => break s,
        }
    };
    Ok(PlainRun {
        instr_count: state.instr_count,
        output: io.into_output(),
        state,
        stop,
    })
}
