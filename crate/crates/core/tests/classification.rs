use bht_core::asm::assemble;
use bht_core::campaign::{
    classify, run_campaign, run_trial, CampaignConfig, OutcomeClass, WorkloadSpec,
};
use bht_core::corpus::Workload;
use bht_core::engine::{run_hardened, run_plain, TreatmentConfig};
use bht_core::fault::{FaultInjector, FaultMode, FaultPlan, FaultTarget, Phase, ScriptedFault};

const OVERWRITE: &str = "
    LOADI R1, 5
    STORE [R0+40], R1     ; word 40 is overwritten before anyone reads it
    LOADI R2, 9
    STORE [R0+40], R2
    LOAD R3, [R0+40]
    OUT R3
    HALT
";

fn scripted(workload: &Workload, faults: Vec<ScriptedFault>) -> OutcomeClass {
    let oracle = run_plain(&workload.image, 10_000).unwrap();
    let row = run_trial(
        0,
        0,
        workload,
        &oracle,
        &TreatmentConfig::with_quantum(100),
        &FaultMode::Scripted { faults },
        8,
    );
    row.class
}

fn flip(phase: Phase, tick: u64, target: FaultTarget) -> ScriptedFault {
    ScriptedFault {
        treatment: 0,
        attempt: 0,
        phase,
        tick,
        target,
    }
}

#[test]
fn overwritten_memory_flip_is_masked() {
    let w = Workload::from_source("overwrite", OVERWRITE).unwrap();
    let target = FaultTarget::WorkingMem {
        page: 0,
        word: 40,
        bit: 3,
    };
    // Between the two stores: the flipped value never reaches a digest.
    assert_eq!(
        scripted(&w, vec![flip(Phase::Run1, 2, target)]),
        OutcomeClass::Masked
    );

    let oracle = run_plain(&w.image, 100).unwrap();
    let mut inj = FaultInjector::new(FaultPlan::scripted(vec![flip(Phase::Run1, 2, target)]));
    let run = run_hardened(&w.image, &TreatmentConfig::with_quantum(100), &mut inj).unwrap();
    assert_eq!(run.stats.retries, 0);
    assert_eq!(inj.applied_count(), 1);
    assert_eq!(oracle.diff(&run), None);
}

#[test]
fn dead_register_flip_is_masked() {
    let w = Workload::from_source(
        "dead",
        "LOADI R0, 1\nOUT R0\nLOADI R5, 3\nLOADI R5, 4\nHALT",
    )
    .unwrap();
    let target = FaultTarget::Register { index: 5, bit: 0 };
    assert_eq!(
        scripted(&w, vec![flip(Phase::Run2, 3, target)]),
        OutcomeClass::Masked
    );
}

#[test]
fn live_flip_is_detected_and_recovered() {
    let w = Workload::from_source("live", OVERWRITE).unwrap();
    let target = FaultTarget::Register { index: 3, bit: 7 };
    assert_eq!(
        scripted(&w, vec![flip(Phase::Run1, 5, target)]),
        OutcomeClass::DetectedRecovered
    );
}

#[test]
fn loop_escape_is_hang_recovered() {
    // Flipping the counter's high bit keeps the loop running into the timer.
    let src = "LOADI R1, 1\nLOADI R2, 20\nloop:\nSUB R2, R2, R1\nLOADI R3, 0\nBNE R2, R3, loop\nOUT R2\nHALT";
    let w = Workload::from_source("loop", src).unwrap();
    let target = FaultTarget::Register { index: 2, bit: 30 };
    assert_eq!(
        scripted(&w, vec![flip(Phase::Run1, 4, target)]),
        OutcomeClass::HangRecovered
    );
}

#[test]
fn identical_flips_in_both_runs_are_silent_corruption() {
    let w = Workload::from_source("collide", OVERWRITE).unwrap();
    let target = FaultTarget::Register { index: 3, bit: 7 };
    let class = scripted(
        &w,
        vec![flip(Phase::Run1, 5, target), flip(Phase::Run2, 5, target)],
    );
    assert_eq!(class, OutcomeClass::Sdc);
}

#[test]
fn retry_exhaustion_is_fatal() {
    let w = Workload::from_source("fatal", OVERWRITE).unwrap();
    let faults = (0..4)
        .map(|attempt| ScriptedFault {
            attempt,
            ..flip(Phase::Run1, 5, FaultTarget::Register { index: 3, bit: 7 })
        })
        .collect();
    assert_eq!(scripted(&w, faults), OutcomeClass::Fatal);
}

#[test]
fn classify_needs_applied_faults_for_masked() {
    assert_eq!(
        classify(0, &[], bht_core::engine::RunEnd::Halted, None),
        OutcomeClass::NoFault
    );
}

#[test]
fn class_counts_sum_to_trials() {
    let cfg = CampaignConfig {
        workloads: vec![WorkloadSpec::Corpus],
        fault_mode: FaultMode::Poisson { rate: 0.002 },
        trials: 300,
        master_seed: 9,
        ..Default::default()
    };
    let report = run_campaign(&cfg).unwrap();
    assert_eq!(report.summary.counts.total(), 300);
    assert_eq!(report.rows.len(), 300);
    assert!(report
        .rows
        .iter()
        .enumerate()
        .all(|(i, r)| r.trial == i as u64));
}

#[test]
fn programs_that_do_not_halt_are_rejected() {
    let cfg = CampaignConfig {
        workloads: vec![WorkloadSpec::Source {
            name: "spin".into(),
            text: "loop:\nJMP loop".into(),
        }],
        trials: 1,
        treatment: TreatmentConfig {
            step_limit: 1000,
            ..TreatmentConfig::default()
        },
        ..Default::default()
    };
    assert!(run_campaign(&cfg).is_err());
    assert!(assemble("loop:\nJMP loop").is_ok());
}
