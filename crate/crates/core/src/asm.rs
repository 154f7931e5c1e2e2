//! `.bhs` assembly text: parser, loader and canonical disassembler.
//!
//! Grammar, one statement per line:
//!
//! ```text
//! line      := [label ":"] [statement] [";" comment]
//! statement := mnemonic operands
//!            | ".data" page offset value
//!            | ".input" value
//!            | ".word" value
//! operand   := register | integer | label | "[" register ("+"|"-") integer "]"
//! register  := "R0" .. "R7"
//! integer   := decimal | "-" decimal | "0x" hex
//! ```
//!
//! Mnemonics and register names are case-insensitive. Branch and jump
//! targets may be labels (forward references allowed) or absolute code
//! addresses. `.word` emits a raw code word and is how the disassembler
//! renders words that do not decode.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{
    decode, AluOp, BranchCond, Instruction, MemoryGeometry, Reg, BRANCH_TARGET_MAX, IMM18_MAX,
    IMM18_MIN, IMM21_MAX, IMM21_MIN, JMP_TARGET_MAX, MAX_CODE_SPACE, PAGE_WORDS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataInit {
    pub page: usize,
    pub offset: usize,
    pub value: u32,
}

/// Assembled program: code, initial memory contents and the input queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramImage {
    pub code: Vec<u32>,
    pub initial_data: Vec<DataInit>,
    pub input_queue: Vec<u32>,
    /// Debug only; never consulted during execution.
    pub labels: BTreeMap<String, u32>,
    pub geometry: MemoryGeometry,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("code length {len} exceeds code space {space}")]
    CodeTooLong { len: usize, space: usize },
    #[error("data target page {page} offset {offset} outside {pages} pages")]
    DataOutOfBounds {
        page: usize,
        offset: usize,
        pages: usize,
    },
}

impl ProgramImage {
    pub fn new(code: Vec<u32>) -> Self {
        Self {
            code,
            initial_data: Vec::new(),
            input_queue: Vec::new(),
            labels: BTreeMap::new(),
            geometry: MemoryGeometry::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        let space = self.geometry.code_space.min(MAX_CODE_SPACE);
        if self.code.len() > space {
            return Err(ImageError::CodeTooLong {
                len: self.code.len(),
                space,
            });
        }
        for d in &self.initial_data {
            if d.page >= self.geometry.pages || d.offset >= PAGE_WORDS {
                return Err(ImageError::DataOutOfBounds {
                    page: d.page,
                    offset: d.offset,
                    pages: self.geometry.pages,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("immediate {value} out of range [{min}, {max}]")]
    ImmediateOutOfRange { value: i64, min: i64, max: i64 },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

fn err<T>(line: usize, kind: AsmErrorKind) -> Result<T, AsmError> {
    Err(AsmError { line, kind })
}

fn syntax<T>(line: usize, msg: impl Into<String>) -> Result<T, AsmError> {
    err(line, AsmErrorKind::Syntax(msg.into()))
}

#[derive(Debug, Clone)]
enum Target {
    Addr(i64),
    Label(String),
}

#[derive(Debug, Clone)]
enum Pending {
    Ready(u32),
    Jmp(Target),
    Branch {
        cond: BranchCond,
        ra: Reg,
        rb: Reg,
        target: Target,
    },
}

fn parse_int(tok: &str) -> Option<i64> {
    let (neg, body) = match tok.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, tok.strip_prefix('+').unwrap_or(tok)),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) {
        body.parse::<i64>().ok()?
    } else {
        return None;
    };
    Some(if neg { -v } else { v })
}

fn parse_reg(tok: &str) -> Option<Reg> {
    let rest = tok.strip_prefix('R').or_else(|| tok.strip_prefix('r'))?;
    if rest.len() != 1 {
        return None;
    }
    Reg::new(rest.parse().ok()?)
}

fn is_ident(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn ranged(line: usize, value: i64, min: i64, max: i64) -> Result<i64, AsmError> {
    if (min..=max).contains(&value) {
        Ok(value)
    } else {
        err(line, AsmErrorKind::ImmediateOutOfRange { value, min, max })
    }
}

/// 32-bit literal: accepts the signed and the unsigned reading.
fn word_literal(line: usize, tok: &str) -> Result<u32, AsmError> {
    let v = parse_int(tok).map_or_else(
        || syntax(line, format!("expected integer, got `{tok}`")),
        Ok,
    )?;
    Ok(ranged(line, v, i32::MIN as i64, u32::MAX as i64)? as u32)
}

struct Operands<'a> {
    line: usize,
    items: Vec<&'a str>,
}

impl<'a> Operands<'a> {
    fn split(line: usize, text: &'a str) -> Self {
        let text = text.trim();
        let items = if text.is_empty() {
            Vec::new()
        } else {
            text.split(',').map(str::trim).collect()
        };
        Self { line, items }
    }

    fn expect(&self, n: usize, mnemonic: &str) -> Result<(), AsmError> {
        if self.items.len() != n {
            return syntax(
                self.line,
                format!("{mnemonic} takes {n} operand(s), got {}", self.items.len()),
            );
        }
        Ok(())
    }

    fn reg(&self, i: usize) -> Result<Reg, AsmError> {
        parse_reg(self.items[i]).map_or_else(
            || {
                syntax(
                    self.line,
                    format!("expected register, got `{}`", self.items[i]),
                )
            },
            Ok,
        )
    }

    fn imm(&self, i: usize, min: i32, max: i32) -> Result<i32, AsmError> {
        let tok = self.items[i];
        let v = parse_int(tok).map_or_else(
            || syntax(self.line, format!("expected integer, got `{tok}`")),
            Ok,
        )?;
        Ok(ranged(self.line, v, min as i64, max as i64)? as i32)
    }

    fn target(&self, i: usize) -> Result<Target, AsmError> {
        let tok = self.items[i];
        if let Some(v) = parse_int(tok) {
            Ok(Target::Addr(v))
        } else if is_ident(tok) {
            Ok(Target::Label(tok.to_string()))
        } else {
            syntax(self.line, format!("expected label or address, got `{tok}`"))
        }
    }

    /// `[Rb+imm]`, `[Rb-imm]` or `[Rb]`.
    fn mem(&self, i: usize) -> Result<(Reg, i32), AsmError> {
        let tok = self.items[i];
        let inner = tok
            .strip_prefix('[')
            .and_then(|t| t.strip_suffix(']'))
            .map(str::trim);
        let Some(inner) = inner else {
            return syntax(self.line, format!("expected memory operand, got `{tok}`"));
        };
        let split = inner.find(['+', '-']);
        let (reg_tok, off) = match split {
            Some(at) => {
                let off_tok: String = inner[at..].chars().filter(|c| !c.is_whitespace()).collect();
                let off = parse_int(&off_tok)
                    .map_or_else(|| syntax(self.line, format!("bad offset in `{tok}`")), Ok)?;
                (inner[..at].trim(), off)
            }
            None => (inner, 0),
        };
        let base = parse_reg(reg_tok).map_or_else(
            || syntax(self.line, format!("expected base register in `{tok}`")),
            Ok,
        )?;
        let off = ranged(self.line, off, IMM18_MIN as i64, IMM18_MAX as i64)? as i32;
        Ok((base, off))
    }
}

fn parse_statement(
    line: usize,
    mnemonic: &str,
    rest: &str,
    image: &mut ProgramImage,
) -> Result<Option<Pending>, AsmError> {
    let upper = mnemonic.to_ascii_uppercase();
    let ops = Operands::split(line, rest);
    let ready = |i: Instruction| Ok(Some(Pending::Ready(i.encode())));

    if upper.starts_with('.') {
        let args: Vec<&str> = rest.split_whitespace().collect();
        return match upper.as_str() {
            ".DATA" => {
                if args.len() != 3 {
                    return syntax(line, ".data takes page, offset and value");
                }
                let page = ranged(
                    line,
                    parse_int(args[0]).map_or_else(|| syntax(line, "bad page"), Ok)?,
                    0,
                    i64::MAX,
                )?;
                let offset = ranged(
                    line,
                    parse_int(args[1]).map_or_else(|| syntax(line, "bad offset"), Ok)?,
                    0,
                    i64::MAX,
                )?;
                let value = word_literal(line, args[2])?;
                image.initial_data.push(DataInit {
                    page: page as usize,
                    offset: offset as usize,
                    value,
                });
                Ok(None)
            }
            ".INPUT" => {
                if args.len() != 1 {
                    return syntax(line, ".input takes one value");
                }
                image.input_queue.push(word_literal(line, args[0])?);
                Ok(None)
            }
            ".WORD" => {
                if args.len() != 1 {
                    return syntax(line, ".word takes one value");
                }
                Ok(Some(Pending::Ready(word_literal(line, args[0])?)))
            }
            _ => err(line, AsmErrorKind::UnknownMnemonic(mnemonic.to_string())),
        };
    }

    let alu = |op: AluOp| -> Result<Option<Pending>, AsmError> {
        ops.expect(3, &upper)?;
        ready(Instruction::Alu {
            op,
            rd: ops.reg(0)?,
            rs1: ops.reg(1)?,
            rs2: ops.reg(2)?,
        })
    };
    let branch = |cond: BranchCond| -> Result<Option<Pending>, AsmError> {
        ops.expect(3, &upper)?;
        Ok(Some(Pending::Branch {
            cond,
            ra: ops.reg(0)?,
            rb: ops.reg(1)?,
            target: ops.target(2)?,
        }))
    };

    match upper.as_str() {
        "HALT" => {
            ops.expect(0, &upper)?;
            ready(Instruction::Halt)
        }
        "YIELD" => {
            ops.expect(0, &upper)?;
            ready(Instruction::Yield)
        }
        "LOADI" => {
            ops.expect(2, &upper)?;
            ready(Instruction::LoadI {
                rd: ops.reg(0)?,
                imm: ops.imm(1, IMM21_MIN, IMM21_MAX)?,
            })
        }
        "MOV" => {
            ops.expect(2, &upper)?;
            ready(Instruction::Mov {
                rd: ops.reg(0)?,
                rs: ops.reg(1)?,
            })
        }
        "ADD" => alu(AluOp::Add),
        "SUB" => alu(AluOp::Sub),
        "MUL" => alu(AluOp::Mul),
        "AND" => alu(AluOp::And),
        "OR" => alu(AluOp::Or),
        "XOR" => alu(AluOp::Xor),
        "LOAD" => {
            ops.expect(2, &upper)?;
            let (base, offset) = ops.mem(1)?;
            ready(Instruction::Load {
                rd: ops.reg(0)?,
                base,
                offset,
            })
        }
        "STORE" => {
            ops.expect(2, &upper)?;
            let (base, offset) = ops.mem(0)?;
            ready(Instruction::Store {
                base,
                offset,
                rs: ops.reg(1)?,
            })
        }
        "JMP" => {
            ops.expect(1, &upper)?;
            Ok(Some(Pending::Jmp(ops.target(0)?)))
        }
        "BEQ" => branch(BranchCond::Eq),
        "BNE" => branch(BranchCond::Ne),
        "BLT" => branch(BranchCond::Lt),
        "IN" => {
            ops.expect(1, &upper)?;
            ready(Instruction::In { rd: ops.reg(0)? })
        }
        "OUT" => {
            ops.expect(1, &upper)?;
            ready(Instruction::Out { rs: ops.reg(0)? })
        }
        _ => err(line, AsmErrorKind::UnknownMnemonic(mnemonic.to_string())),
    }
}

pub fn assemble(source: &str) -> Result<ProgramImage, AsmError> {
    assemble_with(source, MemoryGeometry::default())
}

pub fn assemble_with(source: &str, geometry: MemoryGeometry) -> Result<ProgramImage, AsmError> {
    let mut image = ProgramImage::new(Vec::new());
    image.geometry = geometry;
    let mut pending: Vec<(usize, Pending)> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let mut text = raw.split(';').next().unwrap_or("").trim();

        if let Some(colon) = text.find(':') {
            let label = text[..colon].trim();
            if !is_ident(label) || parse_reg(label).is_some() {
                return syntax(line, format!("invalid label `{label}`"));
            }
            if image.labels.contains_key(label) {
                return err(line, AsmErrorKind::DuplicateLabel(label.to_string()));
            }
            image.labels.insert(label.to_string(), pending.len() as u32);
            text = text[colon + 1..].trim();
        }
        if text.is_empty() {
            continue;
        }

        let (mnemonic, rest) = match text.find(char::is_whitespace) {
            Some(at) => (&text[..at], &text[at..]),
            None => (text, ""),
        };
        if let Some(p) = parse_statement(line, mnemonic, rest, &mut image)? {
            pending.push((line, p));
        }
    }

    let resolve = |line: usize, t: &Target, max: u32| -> Result<u32, AsmError> {
        let v = match t {
            Target::Addr(a) => *a,
            Target::Label(name) => match image.labels.get(name) {
                Some(&a) => a as i64,
                None => return err(line, AsmErrorKind::UndefinedLabel(name.clone())),
            },
        };
        Ok(ranged(line, v, 0, max as i64)? as u32)
    };

    let mut code = Vec::with_capacity(pending.len());
    for (line, p) in &pending {
        let word = match p {
            Pending::Ready(w) => *w,
            Pending::Jmp(t) => Instruction::Jmp {
                target: resolve(*line, t, JMP_TARGET_MAX)?,
            }
            .encode(),
            Pending::Branch {
                cond,
                ra,
                rb,
                target,
            } => Instruction::Branch {
                cond: *cond,
                ra: *ra,
                rb: *rb,
                target: resolve(*line, target, BRANCH_TARGET_MAX)?,
            }
            .encode(),
        };
        code.push(word);
    }
    image.code = code;
    image.validate().map_err(|e| AsmError {
        line: last_line,
        kind: e.into(),
    })?;
    Ok(image)
}

/// Canonical text form. Labels are emitted at their addresses but operands
/// always use numeric targets; `.data` and `.input` directives come first.
pub fn disassemble(image: &ProgramImage) -> String {
    let mut out = String::new();
    for d in &image.initial_data {
        let _ = writeln!(out, ".data {} {} {}", d.page, d.offset, d.value);
    }
    for v in &image.input_queue {
        let _ = writeln!(out, ".input {v}");
    }

    let mut by_addr: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for (name, &addr) in &image.labels {
        by_addr.entry(addr).or_default().push(name);
    }
    let emit_labels = |out: &mut String, names: Option<Vec<&str>>| {
        for n in names.into_iter().flatten() {
            let _ = writeln!(out, "{n}:");
        }
    };

    for (addr, &word) in image.code.iter().enumerate() {
        emit_labels(&mut out, by_addr.remove(&(addr as u32)));
        match decode(word) {
            Some(instr) => {
                let _ = writeln!(out, "{instr}");
            }
            None => {
                let _ = writeln!(out, ".word 0x{word:08X}");
            }
        }
    }
    for names in by_addr.into_values() {
        emit_labels(&mut out, Some(names));
    }
    out
}
