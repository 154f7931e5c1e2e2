use bht_core::asm::{assemble, disassemble};
use bht_core::digest::ExecutionDigest;
use bht_core::engine::{
    process_treatment, run_hardened, run_pe, run_plain, RunEnd, TreatmentConfig,
};
use bht_core::fault::{FaultInjector, FaultPlan, FaultTarget, Phase, ScriptedFault};
use bht_core::gen::gen_program;
use bht_core::interval::{max_interval, p_multi};
use bht_core::isa::{decode, AluOp, BranchCond, Instruction, Reg, StopReason};
use bht_core::store::ReliableStore;
use proptest::prelude::*;

fn reg() -> impl Strategy<Value = Reg> {
    (0u8..8).prop_map(|r| Reg::new(r).unwrap())
}

fn instruction() -> impl Strategy<Value = Instruction> {
    prop_oneof![
        Just(Instruction::Halt),
        Just(Instruction::Yield),
        (reg(), -(1i32 << 20)..(1 << 20)).prop_map(|(rd, imm)| Instruction::LoadI { rd, imm }),
        (reg(), reg()).prop_map(|(rd, rs)| Instruction::Mov { rd, rs }),
        (0usize..6, reg(), reg(), reg()).prop_map(|(op, rd, rs1, rs2)| Instruction::Alu {
            op: AluOp::ALL[op],
            rd,
            rs1,
            rs2
        }),
        (reg(), reg(), -(1i32 << 17)..(1 << 17)).prop_map(|(rd, base, offset)| Instruction::Load {
            rd,
            base,
            offset
        }),
        (reg(), reg(), -(1i32 << 17)..(1 << 17))
            .prop_map(|(base, rs, offset)| Instruction::Store { base, offset, rs }),
        (0u32..(1 << 24)).prop_map(|target| Instruction::Jmp { target }),
        (0usize..3, reg(), reg(), 0u32..(1 << 18)).prop_map(|(c, ra, rb, target)| {
            Instruction::Branch {
                cond: BranchCond::ALL[c],
                ra,
                rb,
                target,
            }
        }),
        reg().prop_map(|rd| Instruction::In { rd }),
        reg().prop_map(|rs| Instruction::Out { rs }),
    ]
}

fn plain_final(src: &str) -> (Vec<u32>, [u32; 8], Vec<u32>) {
    let image = assemble(src).unwrap();
    let run = run_plain(&image, 1_000_000).unwrap();
    (run.memory_words(), run.state.regs, run.output)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn encode_decode_round_trip(instr in instruction()) {
        prop_assert_eq!(decode(instr.encode()), Some(instr));
    }

    #[test]
    fn disassembly_reassembles(seed in any::<u64>(), size in 1usize..200, density in 0.0f64..0.5) {
        let image = assemble(&gen_program(seed, size, density)).unwrap();
        let again = assemble(&disassemble(&image)).unwrap();
        prop_assert_eq!(&again.code, &image.code);
        prop_assert_eq!(&again.initial_data, &image.initial_data);
        prop_assert_eq!(&again.input_queue, &image.input_queue);
    }

    #[test]
    fn any_word_is_decoded_or_rejected(word in any::<u32>()) {
        if let Some(instr) = decode(word) {
            prop_assert_eq!(instr.encode(), word);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hardened_run_is_quantum_transparent(seed in any::<u64>(), size in 1usize..120, q in 1u64..400) {
        let image = assemble(&gen_program(seed, size, 0.1)).unwrap();
        let oracle = run_plain(&image, 1_000_000).unwrap();
        let run = run_hardened(&image, &TreatmentConfig::with_quantum(q), &mut FaultInjector::disabled()).unwrap();
        prop_assert_eq!(oracle.diff(&run), None);
        prop_assert_eq!(run.stats.committed_instrs, oracle.instr_count);
        prop_assert_eq!(run.stats.instr_executed, 2 * oracle.instr_count);
    }

    #[test]
    fn digest_bytes_round_trip(seed in any::<u64>(), size in 1usize..120, q in 1u64..200) {
        let image = assemble(&gen_program(seed, size, 0.2)).unwrap();
        let store = ReliableStore::load(&image).unwrap();
        let d = run_pe(&store, &image, &TreatmentConfig::with_quantum(q));
        let bytes = d.encode();
        prop_assert_eq!(bytes.len(), d.encoded_len());
        prop_assert_eq!(ExecutionDigest::decode(&bytes).unwrap(), d);
    }

    #[test]
    fn one_register_fault_is_always_recovered(
        seed in any::<u64>(),
        size in 2usize..120,
        q in 5u64..200,
        phase in prop_oneof![Just(Phase::Run1), Just(Phase::Run2)],
        tick_frac in 0.0f64..1.0,
        index in 0usize..8,
        bit in 0u32..32,
    ) {
        let image = assemble(&gen_program(seed, size, 0.1)).unwrap();
        let cfg = TreatmentConfig::with_quantum(q);
        let store = ReliableStore::load(&image).unwrap();
        let pe = run_pe(&store, &image, &cfg).instr_count;
        let fault = ScriptedFault {
            treatment: 0,
            attempt: 0,
            phase,
            tick: (tick_frac * pe as f64) as u64,
            target: FaultTarget::Register { index, bit },
        };
        let oracle = run_plain(&image, 1_000_000).unwrap();
        let run = run_hardened(&image, &cfg, &mut FaultInjector::new(FaultPlan::scripted(vec![fault]))).unwrap();
        prop_assert_eq!(run.end, RunEnd::Halted);
        prop_assert_eq!(oracle.diff(&run), None);
    }

    #[test]
    fn failed_treatment_leaves_store_untouched(seed in any::<u64>(), size in 2usize..80, bit in 0u32..32) {
        let image = assemble(&gen_program(seed, size, 0.0)).unwrap();
        let cfg = TreatmentConfig::with_quantum(50);
        let pre = ReliableStore::load(&image).unwrap();
        let faults = (0..=cfg.retry_limit)
            .map(|attempt| ScriptedFault {
                treatment: 0,
                attempt,
                phase: Phase::Run2,
                tick: 0,
                target: FaultTarget::Pc { bit },
            })
            .collect();
        let mut store = pre.clone();
        let mut out = Vec::new();
        let o = process_treatment(&mut store, &image, &cfg, &mut FaultInjector::new(FaultPlan::scripted(faults)), &mut out, 0)
            .unwrap();
        // A low pc bit can land on code that converges to the same digest,
        // in which case the treatment commits as usual.
        if o.mismatches.len() as u32 == cfg.retry_limit + 1 {
            prop_assert_eq!(&store, &pre);
            prop_assert!(out.is_empty());
        } else {
            prop_assert_eq!(store.commit_seq(), 1);
        }
    }

    #[test]
    fn p_multi_monotone(a in 0.0f64..50.0, b in 0.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(p_multi(1.0, lo).unwrap() <= p_multi(1.0, hi).unwrap());
        prop_assert!((0.0..1.0).contains(&p_multi(1.0, hi).unwrap()));
    }

    #[test]
    fn max_interval_orderings(rate in 1e-6f64..1e6, eps in 1e-12f64..0.5, k in 1.01f64..100.0) {
        let t = max_interval(rate, eps).unwrap().finite().unwrap();
        prop_assert!(max_interval(rate * k, eps).unwrap().finite().unwrap() < t);
        let looser = (eps * k).min(0.9);
        if looser > eps {
            prop_assert!(max_interval(rate, looser).unwrap().finite().unwrap() > t);
        }
    }
}

#[test]
fn generated_programs_terminate_within_bound() {
    for seed in 0..10_000u64 {
        let size = 1 + (seed as usize % 60);
        let image = assemble(&gen_program(seed, size, (seed % 5) as f64 * 0.05)).unwrap();
        let run = run_plain(&image, (size * 1000) as u64).unwrap();
        assert_eq!(run.stop, StopReason::Halt, "seed {seed} size {size}");
    }
}

#[test]
fn segmented_plain_matches_single_run() {
    // Yields split a program into PEs; the plain interpreter just steps
    // over them, so adding yields leaves the final state unchanged.
    for seed in 0..50 {
        let flat = plain_final(&gen_program(seed, 90, 0.0));
        let split = plain_final(&gen_program(seed, 90, 0.5));
        assert_eq!(flat, split, "seed {seed}");
    }
}
