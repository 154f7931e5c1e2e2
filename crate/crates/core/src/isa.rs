//! Register machine, instruction encoding and the single-step interpreter.
//!
//! The machine is eight 32-bit registers, a word-indexed program counter and
//! a paged, word-addressed working memory. Execution is a pure function of
//! the state, the code and the latched input, which is what makes comparing
//! two runs of the same processing element meaningful.
//!
//! Code word layout (bit 31 is the most significant):
//!
//! ```text
//! 31      24 23 21 20 18 17 15 14                0
//! +---------+-----+-----+-----+------------------+
//! | opcode  |  a  |  b  |  c  |      unused      |   ALU
//! | opcode  |  a  |       imm21 (signed)         |   LOADI
//! | opcode  |  a  |  b  |   imm18 (signed)       |   LOAD / STORE
//! | opcode  |  a  |  b  |   target18             |   BEQ / BNE / BLT
//! | opcode  |          target24                  |   JMP
//! +---------+------------------------------------+
//! ```
//!
//! Every field an instruction does not use must be zero. A word with a stray
//! bit in an unused field is a decode trap, so `encode(decode(w)) == w` holds
//! for every word that decodes.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub const NUM_REGS: usize = 8;
pub const PAGE_WORDS: usize = 256;
pub const DEFAULT_PAGES: usize = 16;
pub const DEFAULT_CODE_SPACE: usize = 1 << 16;
/// Branch targets are 18 bits wide, so no image may hold more code than this.
pub const MAX_CODE_SPACE: usize = 1 << 18;

pub const IMM21_MIN: i32 = -(1 << 20);
pub const IMM21_MAX: i32 = (1 << 20) - 1;
pub const IMM18_MIN: i32 = -(1 << 17);
pub const IMM18_MAX: i32 = (1 << 17) - 1;
pub const JMP_TARGET_MAX: u32 = (1 << 24) - 1;
pub const BRANCH_TARGET_MAX: u32 = (1 << 18) - 1;

pub type Page = [u32; PAGE_WORDS];

/// Memory shape shared by images, stores and working copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryGeometry {
    pub pages: usize,
    pub code_space: usize,
}

impl Default for MemoryGeometry {
    fn default() -> Self {
        Self {
            pages: DEFAULT_PAGES,
            code_space: DEFAULT_CODE_SPACE,
        }
    }
}

impl MemoryGeometry {
    pub fn words(&self) -> usize {
        self.pages * PAGE_WORDS
    }
}

/// General purpose register index, always below [`NUM_REGS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(u8);

impl Reg {
    pub fn new(index: u8) -> Option<Self> {
        ((index as usize) < NUM_REGS).then_some(Self(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
}

impl AluOp {
    pub const ALL: [AluOp; 6] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::Mul,
        AluOp::And,
        AluOp::Or,
        AluOp::Xor,
    ];

    fn apply(self, a: u32, b: u32) -> u32 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchCond {
    Eq,
    Ne,
    /// Signed less-than.
    Lt,
}

impl BranchCond {
    pub const ALL: [BranchCond; 3] = [BranchCond::Eq, BranchCond::Ne, BranchCond::Lt];

    fn holds(self, a: u32, b: u32) -> bool {
        match self {
            BranchCond::Eq => a == b,
            BranchCond::Ne => a != b,
            BranchCond::Lt => (a as i32) < (b as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instruction {
    Halt,
    LoadI {
        rd: Reg,
        imm: i32,
    },
    Mov {
        rd: Reg,
        rs: Reg,
    },
    Alu {
        op: AluOp,
        rd: Reg,
        rs1: Reg,
        rs2: Reg,
    },
    Load {
        rd: Reg,
        base: Reg,
        offset: i32,
    },
    Store {
        base: Reg,
        offset: i32,
        rs: Reg,
    },
    Jmp {
        target: u32,
    },
    Branch {
        cond: BranchCond,
        ra: Reg,
        rb: Reg,
        target: u32,
    },
    In {
        rd: Reg,
    },
    Out {
        rs: Reg,
    },
    Yield,
}

mod opcode {
    pub const HALT: u32 = 0x01;
    pub const LOADI: u32 = 0x02;
    pub const MOV: u32 = 0x03;
    pub const ADD: u32 = 0x04;
    pub const SUB: u32 = 0x05;
    pub const MUL: u32 = 0x06;
    pub const AND: u32 = 0x07;
    pub const OR: u32 = 0x08;
    pub const XOR: u32 = 0x09;
    pub const LOAD: u32 = 0x0A;
    pub const STORE: u32 = 0x0B;
    pub const JMP: u32 = 0x0C;
    pub const BEQ: u32 = 0x0D;
    pub const BNE: u32 = 0x0E;
    pub const BLT: u32 = 0x0F;
    pub const IN: u32 = 0x10;
    pub const OUT: u32 = 0x11;
    pub const YIELD: u32 = 0x12;
}

/// Every assigned opcode value, in table order.
pub const ASSIGNED_OPCODES: [u32; 18] = [
    opcode::HALT,
    opcode::LOADI,
    opcode::MOV,
    opcode::ADD,
    opcode::SUB,
    opcode::MUL,
    opcode::AND,
    opcode::OR,
    opcode::XOR,
    opcode::LOAD,
    opcode::STORE,
    opcode::JMP,
    opcode::BEQ,
    opcode::BNE,
    opcode::BLT,
    opcode::IN,
    opcode::OUT,
    opcode::YIELD,
];

const FIELD_A_SHIFT: u32 = 21;
const FIELD_B_SHIFT: u32 = 18;
const FIELD_C_SHIFT: u32 = 15;
const MASK_21: u32 = (1 << 21) - 1;
const MASK_18: u32 = (1 << 18) - 1;
const MASK_24: u32 = (1 << 24) - 1;

fn sign_extend(value: u32, bits: u32) -> i32 {
    let shift = 32 - bits;
    ((value << shift) as i32) >> shift
}

fn reg_a(word: u32) -> Reg {
    Reg(((word >> FIELD_A_SHIFT) & 7) as u8)
}

fn reg_b(word: u32) -> Reg {
    Reg(((word >> FIELD_B_SHIFT) & 7) as u8)
}

fn reg_c(word: u32) -> Reg {
    Reg(((word >> FIELD_C_SHIFT) & 7) as u8)
}

fn pack(op: u32, a: Option<Reg>, b: Option<Reg>, c: Option<Reg>) -> u32 {
    let mut w = op << 24;
    if let Some(a) = a {
        w |= (a.0 as u32) << FIELD_A_SHIFT;
    }
    if let Some(b) = b {
        w |= (b.0 as u32) << FIELD_B_SHIFT;
    }
    if let Some(c) = c {
        w |= (c.0 as u32) << FIELD_C_SHIFT;
    }
    w
}

impl Instruction {
    /// Encodes an instruction whose immediates and targets are in range.
    ///
    /// Out-of-range fields are truncated to their bit width; the assembler
    /// rejects them before they get here.
    pub fn encode(&self) -> u32 {
        debug_assert!(self.fields_in_range(), "unencodable {self:?}");
        match *self {
            Instruction::Halt => pack(opcode::HALT, None, None, None),
            Instruction::Yield => pack(opcode::YIELD, None, None, None),
            Instruction::LoadI { rd, imm } => {
                pack(opcode::LOADI, Some(rd), None, None) | (imm as u32 & MASK_21)
            }
            Instruction::Mov { rd, rs } => pack(opcode::MOV, Some(rd), Some(rs), None),
            Instruction::Alu { op, rd, rs1, rs2 } => {
                let code = match op {
                    AluOp::Add => opcode::ADD,
                    AluOp::Sub => opcode::SUB,
                    AluOp::Mul => opcode::MUL,
                    AluOp::And => opcode::AND,
                    AluOp::Or => opcode::OR,
                    AluOp::Xor => opcode::XOR,
                };
                pack(code, Some(rd), Some(rs1), Some(rs2))
            }
            Instruction::Load { rd, base, offset } => {
                pack(opcode::LOAD, Some(rd), Some(base), None) | (offset as u32 & MASK_18)
            }
            Instruction::Store { base, offset, rs } => {
                pack(opcode::STORE, Some(rs), Some(base), None) | (offset as u32 & MASK_18)
            }
            Instruction::Jmp { target } => pack(opcode::JMP, None, None, None) | (target & MASK_24),
            Instruction::Branch {
                cond,
                ra,
                rb,
                target,
            } => {
                let code = match cond {
                    BranchCond::Eq => opcode::BEQ,
                    BranchCond::Ne => opcode::BNE,
                    BranchCond::Lt => opcode::BLT,
                };
                pack(code, Some(ra), Some(rb), None) | (target & MASK_18)
            }
            Instruction::In { rd } => pack(opcode::IN, Some(rd), None, None),
            Instruction::Out { rs } => pack(opcode::OUT, Some(rs), None, None),
        }
    }

    pub fn fields_in_range(&self) -> bool {
        match *self {
            Instruction::LoadI { imm, .. } => (IMM21_MIN..=IMM21_MAX).contains(&imm),
            Instruction::Load { offset, .. } | Instruction::Store { offset, .. } => {
                (IMM18_MIN..=IMM18_MAX).contains(&offset)
            }
            Instruction::Jmp { target } => target <= JMP_TARGET_MAX,
            Instruction::Branch { target, .. } => target <= BRANCH_TARGET_MAX,
            _ => true,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::Halt => "HALT",
            Instruction::LoadI { .. } => "LOADI",
            Instruction::Mov { .. } => "MOV",
            Instruction::Alu { op, .. } => match op {
                AluOp::Add => "ADD",
                AluOp::Sub => "SUB",
                AluOp::Mul => "MUL",
                AluOp::And => "AND",
                AluOp::Or => "OR",
                AluOp::Xor => "XOR",
            },
            Instruction::Load { .. } => "LOAD",
            Instruction::Store { .. } => "STORE",
            Instruction::Jmp { .. } => "JMP",
            Instruction::Branch { cond, .. } => match cond {
                BranchCond::Eq => "BEQ",
                BranchCond::Ne => "BNE",
                BranchCond::Lt => "BLT",
            },
            Instruction::In { .. } => "IN",
            Instruction::Out { .. } => "OUT",
            Instruction::Yield => "YIELD",
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.mnemonic();
        match *self {
            Instruction::Halt | Instruction::Yield => f.write_str(m),
            Instruction::LoadI { rd, imm } => write!(f, "{m} {rd}, {imm}"),
            Instruction::Mov { rd, rs } => write!(f, "{m} {rd}, {rs}"),
            Instruction::Alu { rd, rs1, rs2, .. } => write!(f, "{m} {rd}, {rs1}, {rs2}"),
            Instruction::Load { rd, base, offset } => {
                write!(f, "{m} {rd}, [{base}{offset:+}]")
            }
            Instruction::Store { base, offset, rs } => {
                write!(f, "{m} [{base}{offset:+}], {rs}")
            }
            Instruction::Jmp { target } => write!(f, "{m} {target}"),
            Instruction::Branch { ra, rb, target, .. } => write!(f, "{m} {ra}, {rb}, {target}"),
            Instruction::In { rd } => write!(f, "{m} {rd}"),
            Instruction::Out { rs } => write!(f, "{m} {rs}"),
        }
    }
}

/// Decodes a code word. Unassigned opcodes and nonzero unused fields yield
/// `None`, which the interpreter turns into a decode trap.
pub fn decode(word: u32) -> Option<Instruction> {
    let op = word >> 24;
    let rest = word & MASK_24;
    let a = reg_a(word);
    let b = reg_b(word);
    let c = reg_c(word);
    let only = |used: u32| (rest & !used) == 0;
    const A: u32 = 7 << FIELD_A_SHIFT;
    const B: u32 = 7 << FIELD_B_SHIFT;
    const C: u32 = 7 << FIELD_C_SHIFT;

    let alu = |op: AluOp| {
        only(A | B | C).then_some(Instruction::Alu {
            op,
            rd: a,
            rs1: b,
            rs2: c,
        })
    };
    let branch = |cond: BranchCond| {
        Some(Instruction::Branch {
            cond,
            ra: a,
            rb: b,
            target: word & MASK_18,
        })
    };

    match op {
        opcode::HALT => only(0).then_some(Instruction::Halt),
        opcode::YIELD => only(0).then_some(Instruction::Yield),
        opcode::LOADI => Some(Instruction::LoadI {
            rd: a,
            imm: sign_extend(word & MASK_21, 21),
        }),
        opcode::MOV => only(A | B).then_some(Instruction::Mov { rd: a, rs: b }),
        opcode::ADD => alu(AluOp::Add),
        opcode::SUB => alu(AluOp::Sub),
        opcode::MUL => alu(AluOp::Mul),
        opcode::AND => alu(AluOp::And),
        opcode::OR => alu(AluOp::Or),
        opcode::XOR => alu(AluOp::Xor),
        opcode::LOAD => Some(Instruction::Load {
            rd: a,
            base: b,
            offset: sign_extend(word & MASK_18, 18),
        }),
        opcode::STORE => Some(Instruction::Store {
            base: b,
            offset: sign_extend(word & MASK_18, 18),
            rs: a,
        }),
        opcode::JMP => Some(Instruction::Jmp { target: rest }),
        opcode::BEQ => branch(BranchCond::Eq),
        opcode::BNE => branch(BranchCond::Ne),
        opcode::BLT => branch(BranchCond::Lt),
        opcode::IN => only(A).then_some(Instruction::In { rd: a }),
        opcode::OUT => only(A).then_some(Instruction::Out { rs: a }),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapCause {
    Decode,
    OobMemory,
    OobJump,
    InputUnderflow,
    /// Raised by the treatment engine, never by the interpreter itself.
    Watchdog,
}

impl fmt::Display for TrapCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrapCause::Decode => "DECODE",
            TrapCause::OobMemory => "OOB_MEMORY",
            TrapCause::OobJump => "OOB_JUMP",
            TrapCause::InputUnderflow => "INPUT_UNDERFLOW",
            TrapCause::Watchdog => "WATCHDOG",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    Normal,
    Output(u32),
    InputConsumed(u32),
    Yield,
    Halt,
    Trap(TrapCause),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Yield,
    Halt,
    Quantum,
    Trap(TrapCause),
}

impl StopReason {
    /// Self-stop: the program gave up the processor on its own.
    pub fn is_self_stop(&self) -> bool {
        matches!(self, StopReason::Yield | StopReason::Halt)
    }

    pub fn is_timer_stop(&self) -> bool {
        matches!(self, StopReason::Quantum)
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::Yield => f.write_str("YIELD"),
            StopReason::Halt => f.write_str("HALT"),
            StopReason::Quantum => f.write_str("QUANTUM"),
            StopReason::Trap(c) => write!(f, "TRAP({c})"),
        }
    }
}

/// Paged working memory. Pages are shared copy-on-write with whatever they
/// were forked from, so a fork costs one reference count per page and a
/// write copies only the page it touches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkingMemory {
    pages: Vec<Arc<Page>>,
    dirty: BTreeSet<usize>,
}

impl WorkingMemory {
    pub fn zeroed(pages: usize) -> Self {
        let zero = Arc::new([0u32; PAGE_WORDS]);
        Self {
            pages: vec![zero; pages],
            dirty: BTreeSet::new(),
        }
    }

    pub fn from_shared(pages: Vec<Arc<Page>>) -> Self {
        Self {
            pages,
            dirty: BTreeSet::new(),
        }
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn word_count(&self) -> usize {
        self.pages.len() * PAGE_WORDS
    }

    pub fn read(&self, addr: u32) -> Option<u32> {
        let addr = addr as usize;
        let page = self.pages.get(addr / PAGE_WORDS)?;
        Some(page[addr % PAGE_WORDS])
    }

    /// Writes a word and marks its page dirty, even if the value is unchanged.
    pub fn write(&mut self, addr: u32, value: u32) -> bool {
        let addr = addr as usize;
        let (p, w) = (addr / PAGE_WORDS, addr % PAGE_WORDS);
        match self.pages.get_mut(p) {
            Some(page) => {
                Arc::make_mut(page)[w] = value;
                self.dirty.insert(p);
                true
            }
            None => false,
        }
    }

    /// Flips one bit without marking the page dirty: an upset is not a write.
    pub fn flip_bit(&mut self, page: usize, word: usize, bit: u32) -> bool {
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

    pub fn page(&self, index: usize) -> &Page {
        &self.pages[index]
    }

    pub fn shared_page(&self, index: usize) -> Arc<Page> {
        Arc::clone(&self.pages[index])
    }

    pub fn pages(&self) -> &[Arc<Page>] {
        &self.pages
    }

    pub fn dirty_pages(&self) -> impl Iterator<Item = usize> + '_ {
        self.dirty.iter().copied()
    }

    pub fn dirty_count(&self) -> usize {
        self.dirty.len()
    }

    pub fn clear_dirty(&mut self) {
        self.dirty.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub regs: [u32; NUM_REGS],
    pub pc: u32,
    pub halted: bool,
    /// Set together with `halted` when the machine froze on a trap.
    pub trap: Option<TrapCause>,
    pub mem: WorkingMemory,
    /// Instructions executed since the state was forked.
    pub instr_count: u64,
}

impl MachineState {
    pub fn new(pages: usize) -> Self {
        Self {
            regs: [0; NUM_REGS],
            pc: 0,
            halted: false,
            trap: None,
            mem: WorkingMemory::zeroed(pages),
            instr_count: 0,
        }
    }

    fn freeze(&mut self, cause: TrapCause) -> StepEvent {
        self.halted = true;
        self.trap = Some(cause);
        StepEvent::Trap(cause)
    }

    /// The reason a halted machine stopped.
    pub fn frozen_reason(&self) -> Option<StopReason> {
        if !self.halted {
            return None;
        }
        Some(match self.trap {
            Some(cause) => StopReason::Trap(cause),
            None => StopReason::Halt,
        })
    }
}

/// Latched input and buffered output for one run. Output never leaves this
/// buffer on its own; the reliable store emits it at commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoContext<'a> {
    input: &'a [u32],
    consumed: usize,
    output: Vec<u32>,
}

impl<'a> IoContext<'a> {
    pub fn new(input: &'a [u32]) -> Self {
        Self {
            input,
            consumed: 0,
            output: Vec::new(),
        }
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn output(&self) -> &[u32] {
        &self.output
    }

    pub fn into_output(self) -> Vec<u32> {
        self.output
    }
}

/// Executes one instruction.
///
/// A machine that is already halted is left untouched and reports the event
/// it froze on again.
pub fn step(state: &mut MachineState, code: &[u32], io: &mut IoContext<'_>) -> StepEvent {
    if let Some(reason) = state.frozen_reason() {
        return match reason {
            StopReason::Trap(cause) => StepEvent::Trap(cause),
            _ => StepEvent::Halt,
        };
    }
    state.instr_count += 1;

    let Some(&word) = code.get(state.pc as usize) else {
        return state.freeze(TrapCause::OobJump);
    };
    let Some(instr) = decode(word) else {
        return state.freeze(TrapCause::Decode);
    };

    let regs = &mut state.regs;
    let next = state.pc.wrapping_add(1);
    let mut event = StepEvent::Normal;
    match instr {
        Instruction::Halt => {
            state.halted = true;
            return StepEvent::Halt;
        }
        Instruction::Yield => event = StepEvent::Yield,
        Instruction::LoadI { rd, imm } => regs[rd.index()] = imm as u32,
        Instruction::Mov { rd, rs } => regs[rd.index()] = regs[rs.index()],
        Instruction::Alu { op, rd, rs1, rs2 } => {
            regs[rd.index()] = op.apply(regs[rs1.index()], regs[rs2.index()])
        }
        Instruction::Load { rd, base, offset } => {
            let addr = regs[base.index()].wrapping_add(offset as u32);
            match state.mem.read(addr) {
                Some(v) => regs[rd.index()] = v,
                None => return state.freeze(TrapCause::OobMemory),
            }
        }
        Instruction::Store { base, offset, rs } => {
            let addr = regs[base.index()].wrapping_add(offset as u32);
            let value = regs[rs.index()];
            if !state.mem.write(addr, value) {
                return state.freeze(TrapCause::OobMemory);
            }
        }
        Instruction::Jmp { target } => {
            if target as usize >= code.len() {
                return state.freeze(TrapCause::OobJump);
            }
            state.pc = target;
            return StepEvent::Normal;
        }
        Instruction::Branch {
            cond,
            ra,
            rb,
            target,
        } => {
            if cond.holds(regs[ra.index()], regs[rb.index()]) {
                if target as usize >= code.len() {
                    return state.freeze(TrapCause::OobJump);
                }
                state.pc = target;
                return StepEvent::Normal;
            }
        }
        Instruction::In { rd } => match io.input.get(io.consumed) {
            Some(&v) => {
                io.consumed += 1;
                regs[rd.index()] = v;
                event = StepEvent::InputConsumed(v);
            }
            None => return state.freeze(TrapCause::InputUnderflow),
        },
        Instruction::Out { rs } => {
            let v = regs[rs.index()];
            io.output.push(v);
            event = StepEvent::Output(v);
        }
    }
    state.pc = next;
    event
}

/// Runs until a yield, halt or trap, or until `instr_count` reaches `budget`.
pub fn run_segment(
    state: &mut MachineState,
    code: &[u32],
    io: &mut IoContext<'_>,
    budget: u64,
) -> StopReason {
    debug_assert!(budget >= 1, "segment budget must be positive");
    if let Some(reason) = state.frozen_reason() {
        return reason;
    }
    loop {
        if state.instr_count >= budget {
            return StopReason::Quantum;
        }
        match step(state, code, io) {
            StepEvent::Yield => return StopReason::Yield,
            StepEvent::Halt => return StopReason::Halt,
            StepEvent::Trap(cause) => return StopReason::Trap(cause),
            StepEvent::Normal | StepEvent::Output(_) | StepEvent::InputConsumed(_) => {}
        }
    }
}
