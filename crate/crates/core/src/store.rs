//! The error-immune central memory.
//!
//! Holds the golden copy of every page plus the architectural state at the
//! last commit. Working copies are forked from it, and it only changes
//! through [`ReliableStore::commit`]. Fault injection may not target it
//! unless a campaign deliberately lifts the exemption.

use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use thiserror::Error;

use crate::asm::{ImageError, ProgramImage};
use crate::isa::{MachineState, Page, StopReason, WorkingMemory, NUM_REGS, PAGE_WORDS};

/// Receives committed output, exactly once per value.
pub trait OutputSink {
    fn emit(&mut self, value: u32);
}

impl OutputSink for Vec<u32> {
    fn emit(&mut self, value: u32) {
        self.push(value);
    }
}

/// Discards output; useful when only the count matters.
#[derive(Debug, Default)]
pub struct NullSink;

impl OutputSink for NullSink {
    fn emit(&mut self, _value: u32) {}
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub seq: u64,
    pub pages: Vec<(usize, Arc<Page>)>,
    pub regs: [u32; NUM_REGS],
    pub pc: u32,
    pub inputs_consumed: usize,
    pub outputs: Vec<u32>,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("commit sequence mismatch: expected {expected}, got {got}")]
    SequenceMismatch { expected: u64, got: u64 },
    #[error("commit record names page {page} but the store has {pages}")]
    PageOutOfRange { page: usize, pages: usize },
    #[error("commit consumes {consumed} inputs past cursor {cursor} of {len}")]
    InputOverrun {
        consumed: usize,
        cursor: usize,
        len: usize,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReliableStore {
    pages: Vec<Arc<Page>>,
    regs: [u32; NUM_REGS],
    pc: u32,
    input_cursor: usize,
    input_len: usize,
    output_len: usize,
    commit_seq: u64,
}

impl ReliableStore {
    pub fn load(image: &ProgramImage) -> Result<Self, StoreError> {
        image.validate()?;
        let mut pages = vec![[0u32; PAGE_WORDS]; image.geometry.pages];
        for d in &image.initial_data {
            pages[d.page][d.offset] = d.value;
        }
        Ok(Self {
            pages: pages.into_iter().map(Arc::new).collect(),
            regs: [0; NUM_REGS],
            pc: 0,
            input_cursor: 0,
            input_len: image.input_queue.len(),
            output_len: 0,
            commit_seq: 0,
        })
    }

    /// A fresh working state positioned at the last committed point.
    pub fn fork_working(&self) -> MachineState {
        MachineState {
            regs: self.regs,
            pc: self.pc,
            halted: false,
            trap: None,
            mem: WorkingMemory::from_shared(self.pages.clone()),
            instr_count: 0,
        }
    }

    /// Input latched for the next treatment.
    pub fn latched_input<'a>(&self, image: &'a ProgramImage) -> &'a [u32] {
        &image.input_queue[self.input_cursor.min(image.input_queue.len())..]
    }

    /// Applies a verified record all at once. Nothing is touched unless
    /// every check passes.
    pub fn commit(
        &mut self,
        record: CommitRecord,
        sink: &mut dyn OutputSink,
    ) -> Result<(), StoreError> {
        let expected = self.commit_seq + 1;
        if record.seq != expected {
            return Err(StoreError::SequenceMismatch {
                expected,
                got: record.seq,
            });
        }
        if let Some(&(page, _)) = record.pages.iter().find(|(p, _)| *p >= self.pages.len()) {
            return Err(StoreError::PageOutOfRange {
                page,
                pages: self.pages.len(),
            });
        }
        if self.input_cursor + record.inputs_consumed > self.input_len {
            return Err(StoreError::InputOverrun {
                consumed: record.inputs_consumed,
                cursor: self.input_cursor,
                len: self.input_len,
            });
        }

        for (page, content) in record.pages {
            self.pages[page] = content;
        }
        self.regs = record.regs;
        self.pc = record.pc;
        self.input_cursor += record.inputs_consumed;
        for v in &record.outputs {
            sink.emit(*v);
        }
        self.output_len += record.outputs.len();
        self.commit_seq = expected;
        Ok(())
    }

    /// Content checksum over pages, registers, pc and cursors.
    pub fn checksum(&self) -> u64 {
        let mut h = FnvHasher::default();
        for page in &self.pages {
            for w in page.iter() {
                h.write_u32(*w);
            }
        }
        for r in &self.regs {
            h.write_u32(*r);
        }
        h.write_u32(self.pc);
        h.write_u64(self.input_cursor as u64);
        h.write_u64(self.output_len as u64);
        h.write_u64(self.commit_seq);
        h.finish()
    }

    /// Cheap identity snapshot for auditing that nothing mutated the store.
    ///
    /// Pages are shared, so any write to a page while the seal holds it has
    /// to go through a copy and changes the page pointer.
    pub fn seal(&self) -> StoreSeal {
        StoreSeal {
            pages: self.pages.clone(),
            regs: self.regs,
            pc: self.pc,
            input_cursor: self.input_cursor,
            output_len: self.output_len,
            commit_seq: self.commit_seq,
        }
    }

    pub fn pages(&self) -> &[Arc<Page>] {
        &self.pages
    }

    pub fn page(&self, index: usize) -> &Page {
        &self.pages[index]
    }

    pub fn regs(&self) -> &[u32; NUM_REGS] {
        &self.regs
    }

    pub fn pc(&self) -> u32 {
        self.pc
    }

    pub fn input_cursor(&self) -> usize {
        self.input_cursor
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn commit_seq(&self) -> u64 {
        self.commit_seq
    }

    /// Flat copy of memory, page after page.
    pub fn memory_words(&self) -> Vec<u32> {
        self.pages.iter().flat_map(|p| p.iter().copied()).collect()
    }

    /// Flips a bit in the golden copy. Only the store-violation fault mode
    /// may call this; everything else treats the store as immune.
    pub(crate) fn flip_page_bit(&mut self, page: usize, word: usize, bit: u32) -> bool {
        if word >= PAGE_WORDS || bit >= 32 {
            return false;
        }
        match self.pages.get_mut(page) {
            Some(p) => {
                Arc::make_mut(p)[word] ^= 1 << bit;
                true
            }
            None => false,
        }
    }

    pub(crate) fn flip_reg_bit(&mut self, reg: usize, bit: u32) -> bool {
        if reg >= NUM_REGS || bit >= 32 {
            return false;
        }
        self.regs[reg] ^= 1 << bit;
        true
    }
}

/// Drops a rejected working copy. The store is not involved.
pub fn discard(working: MachineState) {
    drop(working);
}

#[derive(Debug, Clone)]
pub struct StoreSeal {
    pages: Vec<Arc<Page>>,
    regs: [u32; NUM_REGS],
    pc: u32,
    input_cursor: usize,
    output_len: usize,
    commit_seq: u64,
}

impl StoreSeal {
    pub fn verify(&self, store: &ReliableStore) -> bool {
        self.pages.len() == store.pages.len()
            && self
                .pages
                .iter()
                .zip(&store.pages)
                .all(|(a, b)| Arc::ptr_eq(a, b))
            && self.regs == store.regs
            && self.pc == store.pc
            && self.input_cursor == store.input_cursor
            && self.output_len == store.output_len
            && self.commit_seq == store.commit_seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    fn record(store: &ReliableStore) -> CommitRecord {
        CommitRecord {
            seq: store.commit_seq() + 1,
            pages: Vec::new(),
            regs: *store.regs(),
            pc: store.pc(),
            inputs_consumed: 0,
            outputs: Vec::new(),
            stop: StopReason::Yield,
        }
    }

    #[test]
    fn empty_data_gives_zero_pages() {
        let store = ReliableStore::load(&assemble("HALT").unwrap()).unwrap();
        assert_eq!(store.pages().len(), 16);
        assert!(store.memory_words().iter().all(|&w| w == 0));
        assert_eq!(store.commit_seq(), 0);
        assert_eq!(store.input_cursor(), 0);
    }

    #[test]
    fn data_directive_lands() {
        let store = ReliableStore::load(&assemble(".data 0 3 42\nHALT").unwrap()).unwrap();
        assert_eq!(store.page(0)[3], 42);
    }

    #[test]
    fn forks_are_identical_and_isolated() {
        let store = ReliableStore::load(&assemble(".data 1 0 9\nHALT").unwrap()).unwrap();
        let a = store.fork_working();
        let b = store.fork_working();
        assert_eq!(a, b);
        let mut c = store.fork_working();
        c.mem.write(256, 1);
        c.regs[0] = 77;
        assert_eq!(store.fork_working(), a);
    }

    #[test]
    fn fork_reflects_committed_page() {
        let mut store = ReliableStore::load(&assemble("HALT").unwrap()).unwrap();
        let mut w = store.fork_working();
        w.mem.write(3 * 256 + 10, 0xABCD);
        let mut rec = record(&store);
        rec.pages = vec![(3, w.mem.shared_page(3))];
        store.commit(rec, &mut NullSink).unwrap();
        assert_eq!(store.fork_working().mem.read(3 * 256 + 10), Some(0xABCD));
    }

    #[test]
    fn identity_commit_only_bumps_sequence() {
        let mut store = ReliableStore::load(&assemble(".data 2 2 2\nHALT").unwrap()).unwrap();
        let before = store.memory_words();
        store.commit(record(&store), &mut NullSink).unwrap();
        assert_eq!(store.memory_words(), before);
        assert_eq!(store.commit_seq(), 1);
    }

    #[test]
    fn commit_touches_only_named_pages() {
        let mut store = ReliableStore::load(&assemble("HALT").unwrap()).unwrap();
        let before = store.clone();
        let mut rec = record(&store);
        rec.pages = vec![(1, Arc::new([5; PAGE_WORDS]))];
        store.commit(rec, &mut NullSink).unwrap();
        for i in 0..16 {
            assert_eq!(store.page(i) == before.page(i), i != 1, "page {i}");
        }
    }

    #[test]
    fn bad_sequence_leaves_store_untouched() {
        let mut store = ReliableStore::load(&assemble("HALT").unwrap()).unwrap();
        let sum = store.checksum();
        let mut rec = record(&store);
        rec.seq = 5;
        rec.regs[0] = 1;
        rec.outputs = vec![1, 2];
        let mut sink = Vec::new();
        assert_eq!(
            store.commit(rec, &mut sink),
            Err(StoreError::SequenceMismatch {
                expected: 1,
                got: 5
            })
        );
        assert_eq!(store.checksum(), sum);
        assert!(sink.is_empty());
    }

    #[test]
    fn bad_page_leaves_store_untouched() {
        let mut store = ReliableStore::load(&assemble("HALT").unwrap()).unwrap();
        let sum = store.checksum();
        let mut rec = record(&store);
        rec.pages = vec![
            (0, Arc::new([1; PAGE_WORDS])),
            (99, Arc::new([1; PAGE_WORDS])),
        ];
        assert!(matches!(
            store.commit(rec, &mut NullSink),
            Err(StoreError::PageOutOfRange { page: 99, .. })
        ));
        assert_eq!(store.checksum(), sum);
    }

    #[test]
    fn outputs_emitted_once_at_commit() {
        let mut store = ReliableStore::load(&assemble("HALT").unwrap()).unwrap();
        let mut sink = Vec::new();
        let mut rec = record(&store);
        rec.outputs = vec![3, 4];
        store.commit(rec, &mut sink).unwrap();
        assert_eq!(sink, vec![3, 4]);
        assert_eq!(store.output_len(), 2);
    }

    #[test]
    fn discard_leaves_store_checksum() {
        let store = ReliableStore::load(&assemble(".data 0 0 1\nHALT").unwrap()).unwrap();
        let sum = store.checksum();
        let before = store.fork_working();
        let mut w = store.fork_working();
        for a in 0..4096 {
            w.mem.write(a, a ^ 0x5555);
        }
        discard(w);
        assert_eq!(store.checksum(), sum);
        assert_eq!(store.fork_working(), before);
    }

    #[test]
    fn seal_detects_golden_copy_mutation() {
        let mut store = ReliableStore::load(&assemble("HALT").unwrap()).unwrap();
        let seal = store.seal();
        let mut w = store.fork_working();
        w.mem.write(0, 1);
        w.mem.flip_bit(2, 0, 0);
        assert!(seal.verify(&store));
        store.flip_page_bit(4, 0, 0);
        assert!(!seal.verify(&store));
    }
}
