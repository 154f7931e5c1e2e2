//! Execution digests: the canonical record of what one run of a processing
//! element did, and the byte encoding the verification phase compares.
//!
//! Equality is full-content. The embedded checksum is a diagnostic aid and
//! never stands in for comparing the fields themselves.

use std::fmt;
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{IoContext, MachineState, Page, StopReason, TrapCause, NUM_REGS, PAGE_WORDS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionDigest {
    pub regs: [u32; NUM_REGS],
    pub pc: u32,
    /// Ascending page index.
    pub dirty_pages: Vec<(usize, Arc<Page>)>,
    pub outputs: Vec<u32>,
    pub inputs_consumed: usize,
    pub stop: StopReason,
    pub instr_count: u64,
    pub checksum: u64,
}

/// Which part of a digest differed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DigestField {
    Registers,
    Pc,
    DirtyPages,
    Outputs,
    InputsConsumed,
    StopReason,
    InstrCount,
    Checksum,
    /// A buffer that does not decode, or that decodes to the same digest
    /// as its peer while its bytes differ.
    Encoding,
    /// Staged commit record disagreed with the second digest.
    Staging,
}

impl fmt::Display for DigestField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DigestField::Registers => "regs",
            DigestField::Pc => "pc",
            DigestField::DirtyPages => "dirty_pages",
            DigestField::Outputs => "outputs",
            DigestField::InputsConsumed => "inputs_consumed",
            DigestField::StopReason => "stop_reason",
            DigestField::InstrCount => "instr_count",
            DigestField::Checksum => "checksum",
            DigestField::Encoding => "encoding",
            DigestField::Staging => "staging",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Match,
    Mismatch(DigestField),
}

impl Comparison {
    pub fn is_match(&self) -> bool {
        matches!(self, Comparison::Match)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("digest buffer truncated at byte {0}")]
    Truncated(usize),
    #[error("digest buffer has {0} trailing bytes")]
    Trailing(usize),
    #[error("invalid stop reason encoding ({0}, {1})")]
    BadStop(u8, u8),
    #[error("dirty pages not strictly ascending")]
    PageOrder,
}

impl ExecutionDigest {
    /// Summarizes a finished run.
    pub fn capture(state: &MachineState, io: &IoContext<'_>, stop: StopReason) -> Self {
        let dirty_pages = state
            .mem
            .dirty_pages()
            .map(|p| (p, state.mem.shared_page(p)))
            .collect();
        let mut d = Self {
            regs: state.regs,
            pc: state.pc,
            dirty_pages,
            outputs: io.output().to_vec(),
            inputs_consumed: io.consumed(),
            stop,
            instr_count: state.instr_count,
            checksum: 0,
        };
        d.checksum = d.content_checksum();
        d
    }

    pub fn dirty_count(&self) -> usize {
        self.dirty_pages.len()
    }

    pub fn content_checksum(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(&self.encode_body());
        h.finish()
    }

    pub fn checksum_valid(&self) -> bool {
        self.checksum == self.content_checksum()
    }

    fn encode_body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        for r in &self.regs {
            out.extend_from_slice(&r.to_le_bytes());
        }
        out.extend_from_slice(&self.pc.to_le_bytes());
        let (kind, cause) = encode_stop(self.stop);
        out.push(kind);
        out.push(cause);
        out.extend_from_slice(&self.instr_count.to_le_bytes());
        out.extend_from_slice(&(self.inputs_consumed as u32).to_le_bytes());
        out.extend_from_slice(&(self.outputs.len() as u32).to_le_bytes());
        for v in &self.outputs {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.dirty_pages.len() as u32).to_le_bytes());
        for (page, content) in &self.dirty_pages {
            out.extend_from_slice(&(*page as u32).to_le_bytes());
            for w in content.iter() {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn encoded_len(&self) -> usize {
        NUM_REGS * 4
            + 4
            + 2
            + 8
            + 4
            + 4
            + self.outputs.len() * 4
            + 4
            + self.dirty_pages.len() * (4 + PAGE_WORDS * 4)
            + 8
    }

    /// Little-endian byte form: registers, pc, stop, instruction count,
    /// inputs consumed, outputs, dirty pages, then the checksum.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.encode_body();
        out.extend_from_slice(&self.checksum.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader { bytes, at: 0 };
        let mut regs = [0u32; NUM_REGS];
        for reg in regs.iter_mut() {
            *reg = r.u32()?;
        }
        let pc = r.u32()?;
        let kind = r.u8()?;
        let cause = r.u8()?;
        let stop = decode_stop(kind, cause).ok_or(DecodeError::BadStop(kind, cause))?;
        let instr_count = r.u64()?;
        let inputs_consumed = r.u32()? as usize;
        let n_out = r.u32()? as usize;
        r.need(n_out.saturating_mul(4))?;
        let outputs = (0..n_out).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let n_dirty = r.u32()? as usize;
        r.need(n_dirty.saturating_mul(4 + PAGE_WORDS * 4))?;
        let mut dirty_pages: Vec<(usize, Arc<Page>)> = Vec::with_capacity(n_dirty);
        for _ in 0..n_dirty {
            let page = r.u32()? as usize;
            if dirty_pages.last().is_some_and(|(p, _)| *p >= page) {
                return Err(DecodeError::PageOrder);
            }
            let mut content = [0u32; PAGE_WORDS];
            for w in content.iter_mut() {
                *w = r.u32()?;
            }
            dirty_pages.push((page, Arc::new(content)));
        }
        let checksum = r.u64()?;
        if r.at != bytes.len() {
            return Err(DecodeError::Trailing(bytes.len() - r.at));
        }
        Ok(Self {
            regs,
            pc,
            dirty_pages,
            outputs,
            inputs_consumed,
            stop,
            instr_count,
            checksum,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn need(&self, n: usize) -> Result<(), DecodeError> {
        if self.bytes.len().saturating_sub(self.at) < n {
            Err(DecodeError::Truncated(self.at))
        } else {
            Ok(())
        }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        self.need(N)?;
        let mut b = [0u8; N];
        b.copy_from_slice(&self.bytes[self.at..self.at + N]);
        self.at += N;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
}

const TRAP_CAUSES: [TrapCause; 5] = [
    TrapCause::Decode,
    TrapCause::OobMemory,
    TrapCause::OobJump,
    TrapCause::InputUnderflow,
    TrapCause::Watchdog,
];

fn encode_stop(stop: StopReason) -> (u8, u8) {
    match stop {
        StopReason::Yield => (0, 0),
        StopReason::Halt => (1, 0),
        StopReason::Quantum => (2, 0),
        StopReason::Trap(c) => (3, TRAP_CAUSES.iter().position(|&t| t == c).unwrap() as u8),
    }
}

fn decode_stop(kind: u8, cause: u8) -> Option<StopReason> {
    match (kind, cause) {
        (0, 0) => Some(StopReason::Yield),
        (1, 0) => Some(StopReason::Halt),
        (2, 0) => Some(StopReason::Quantum),
        (3, c) => TRAP_CAUSES.get(c as usize).map(|&t| StopReason::Trap(t)),
        _ => None,
    }
}

/// Full-content comparison naming the first field that differs.
pub fn compare(a: &ExecutionDigest, b: &ExecutionDigest) -> Comparison {
    let field = if a.regs != b.regs {
        DigestField::Registers
    } else if a.pc != b.pc {
        DigestField::Pc
    } else if a.dirty_pages.len() != b.dirty_pages.len()
        || a.dirty_pages
            .iter()
            .zip(&b.dirty_pages)
            .any(|((pa, ca), (pb, cb))| pa != pb || ca[..] != cb[..])
    {
        DigestField::DirtyPages
    } else if a.outputs != b.outputs {
        DigestField::Outputs
    } else if a.inputs_consumed != b.inputs_consumed {
        DigestField::InputsConsumed
    } else if a.stop != b.stop {
        DigestField::StopReason
    } else if a.instr_count != b.instr_count {
        DigestField::InstrCount
    } else if a.checksum != b.checksum {
        DigestField::Checksum
    } else {
        return Comparison::Match;
    };
    Comparison::Mismatch(field)
}

/// Compares two encoded digests as the verification phase sees them.
pub fn compare_buffers(a: &[u8], b: &[u8]) -> Comparison {
    if a == b {
        return Comparison::Match;
    }
    match (ExecutionDigest::decode(a), ExecutionDigest::decode(b)) {
        (Ok(da), Ok(db)) => match compare(&da, &db) {
            Comparison::Match => Comparison::Mismatch(DigestField::Encoding),
            m => m,
        },
        _ => Comparison::Mismatch(DigestField::Encoding),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExecutionDigest {
        let mut state = MachineState::new(4);
        state.regs = [1, 2, 3, 4, 5, 6, 7, 8];
        state.pc = 12;
        state.instr_count = 40;
        state.mem.write(2 * 256 + 5, 99);
        state.mem.write(7, 1);
        let input = [10, 11];
        let mut io = IoContext::new(&input);
        let code = [crate::isa::Instruction::In {
            rd: crate::isa::Reg::new(0).unwrap(),
        }
        .encode()];
        let mut probe = MachineState::new(1);
        crate::isa::step(&mut probe, &code, &mut io);
        ExecutionDigest::capture(&state, &io, StopReason::Yield)
    }

    #[test]
    fn reflexive() {
        let d = sample();
        assert_eq!(compare(&d, &d.clone()), Comparison::Match);
    }

    #[test]
    fn register_bit_flip_is_named() {
        let d = sample();
        let mut e = d.clone();
        e.regs[3] ^= 1 << 9;
        assert_eq!(
            compare(&d, &e),
            Comparison::Mismatch(DigestField::Registers)
        );
    }

    #[test]
    fn checksum_never_sufficient() {
        let d = sample();
        let mut e = d.clone();
        // Same checksum, different content.
        Arc::make_mut(&mut e.dirty_pages[0].1)[0] ^= 1;
        assert_eq!(d.checksum, e.checksum);
        assert_eq!(
            compare(&d, &e),
            Comparison::Mismatch(DigestField::DirtyPages)
        );
    }

    #[test]
    fn encoding_round_trips() {
        let d = sample();
        let bytes = d.encode();
        assert_eq!(bytes.len(), d.encoded_len());
        assert_eq!(ExecutionDigest::decode(&bytes).unwrap(), d);
        assert!(d.checksum_valid());
        assert_eq!(
            d.dirty_pages.iter().map(|(p, _)| *p).collect::<Vec<_>>(),
            vec![0, 2]
        );
        assert_eq!(d.inputs_consumed, 1);
    }

    #[test]
    fn every_single_bit_flip_in_a_buffer_is_a_mismatch() {
        let d = sample();
        let bytes = d.encode();
        for byte in 0..bytes.len() {
            for bit in 0..8 {
                let mut flipped = bytes.clone();
                flipped[byte] ^= 1 << bit;
                assert!(
                    !compare_buffers(&bytes, &flipped).is_match(),
                    "byte {byte} bit {bit}"
                );
            }
        }
    }

    #[test]
    fn corrupt_buffers_fail_to_decode() {
        let bytes = sample().encode();
        assert!(matches!(
            ExecutionDigest::decode(&bytes[..bytes.len() - 1]),
            Err(DecodeError::Truncated(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(
            ExecutionDigest::decode(&extra),
            Err(DecodeError::Trailing(1))
        );
        let mut bad_stop = bytes.clone();
        bad_stop[36] = 9;
        assert!(matches!(
            ExecutionDigest::decode(&bad_stop),
            Err(DecodeError::BadStop(9, 0))
        ));
    }
}
