//! Machine-readable results of single runs, as the CLI prints them.

use serde::{Deserialize, Serialize};

use crate::engine::{
    HardenedRun, HardenedRunStats, OracleDiff, PlainRun, RunEnd, TreatmentConfig, TreatmentOutcome,
    TreatmentStatus,
};
use crate::fault::{FaultMode, FaultRecord};
use crate::isa::{StopReason, NUM_REGS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainReport {
    pub workload: String,
    pub stop: StopReason,
    pub instr_count: u64,
    pub pc: u32,
    pub regs: [u32; NUM_REGS],
    pub output: Vec<u32>,
}

impl PlainReport {
    pub fn new(workload: &str, run: &PlainRun) -> Self {
        Self {
            workload: workload.to_string(),
            stop: run.stop,
            instr_count: run.instr_count,
            pc: run.state.pc,
            regs: run.state.regs,
            output: run.output.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub committed: u64,
    pub committed_after_retry: u64,
    pub fatal: u64,
    pub program_trap: u64,
}

impl StatusCounts {
    pub fn tally(outcomes: &[TreatmentOutcome]) -> Self {
        let mut c = Self::default();
        for o in outcomes {
            match o.status {
                TreatmentStatus::Committed => c.committed += 1,
                TreatmentStatus::CommittedAfterRetry(_) => c.committed_after_retry += 1,
                TreatmentStatus::FatalRetryExhausted => c.fatal += 1,
                TreatmentStatus::ProgramTrap(_) => c.program_trap += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardenReport {
    pub workload: String,
    pub treatment: TreatmentConfig,
    pub fault_mode: FaultMode,
    pub seed: u64,
    pub end: RunEnd,
    pub oracle_diff: Option<OracleDiff>,
    pub instr_plain: u64,
    pub instr_hardened: u64,
    pub overhead_ratio: f64,
    pub status: StatusCounts,
    pub stats: HardenedRunStats,
    pub output: Vec<u32>,
    pub faults: Vec<FaultRecord>,
    pub outcomes: Vec<TreatmentOutcome>,
}

impl HardenReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        workload: &str,
        treatment: TreatmentConfig,
        fault_mode: FaultMode,
        seed: u64,
        plain: &PlainRun,
        run: &HardenedRun,
        faults: Vec<FaultRecord>,
    ) -> Self {
        let cost = run.stats.hardened_cost();
        Self {
            workload: workload.to_string(),
            treatment,
            fault_mode,
            seed,
            end: run.end,
            oracle_diff: plain.diff(run),
            instr_plain: plain.instr_count,
            instr_hardened: cost,
            overhead_ratio: if plain.instr_count == 0 {
                0.0
            } else {
                cost as f64 / plain.instr_count as f64
            },
            status: StatusCounts::tally(&run.outcomes),
            stats: run.stats,
            output: run.output.clone(),
            faults,
            outcomes: run.outcomes.clone(),
        }
    }

    pub fn faults_applied(&self) -> usize {
        self.faults.iter().filter(|r| r.event.applied).count()
    }
}
