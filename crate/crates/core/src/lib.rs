//! Blended hardening simulator: a deterministic toy machine, duplicate
//! execution with compare-and-commit into an immune reliable store, fault
//! injection, and the campaign machinery that measures all of it.

pub mod asm;
pub mod campaign;
pub mod corpus;
pub mod digest;
pub mod engine;
pub mod fault;
pub mod gen;
pub mod interval;
pub mod isa;
pub mod report;
pub mod store;

pub use asm::{assemble, disassemble, ProgramImage};
pub use engine::{run_hardened, run_plain, TreatmentConfig};
pub use fault::{FaultInjector, FaultMode, FaultPlan};
