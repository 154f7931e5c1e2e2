//! Random programs that terminate by construction.
//!
//! Register roles: R0..R5 hold data, R6 is the loop counter and R7 is
//! scratch. Loops count R6 down from at most [`MAX_TRIP`] and never nest,
//! so a program with `s` static instructions runs at most `MAX_TRIP * s`
//! of them plus its yields. Memory addresses are masked into the first
//! [`ADDR_MASK`]` + 1` words before use. `IN` never appears inside a loop,
//! which keeps the `.input` count exact.
//!
//! Yield placement draws from its own random stream, so two programs with
//! the same seed and size differ only in their `YIELD` lines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_TRIP: u32 = 8;
pub const ADDR_MASK: u32 = 0x3FF;
const MEM_OFFSETS: u32 = 2048;
const DATA_REGS: u8 = 6;
const ALU: [&str; 6] = ["ADD", "SUB", "MUL", "AND", "OR", "XOR"];
const YIELD_STREAM: u64 = 0x5945_494C_445F_5354;

struct Gen {
    rng: ChaCha8Rng,
    yields: ChaCha8Rng,
    density: f64,
    lines: Vec<String>,
    inputs: usize,
    labels: usize,
}

impl Gen {
    fn reg(&mut self) -> u8 {
        self.rng.random_range(0..DATA_REGS)
    }

    fn maybe_yield(&mut self) {
        if self.density > 0.0 && self.yields.random_bool(self.density.min(1.0)) {
            self.lines.push("YIELD".into());
        }
    }

    /// One loop-safe statement; returns its static length.
    fn simple(&mut self, budget: usize, in_loop: bool) -> usize {
        loop {
            let kind = self.rng.random_range(0..6);
            match kind {
                0 => {
                    let op = ALU[self.rng.random_range(0..ALU.len())];
                    let (rd, a, b) = (self.reg(), self.reg(), self.reg());
                    self.lines.push(format!("{op} R{rd}, R{a}, R{b}"));
                    return 1;
                }
                1 => {
                    let rd = self.reg();
                    let imm = self.rng.random_range(-1000..=1000);
                    self.lines.push(format!("LOADI R{rd}, {imm}"));
                    return 1;
                }
                2 if budget >= 3 => {
                    let (ra, rv) = (self.reg(), self.reg());
                    let off = self.rng.random_range(0..MEM_OFFSETS);
                    self.lines.push(format!("LOADI R7, {ADDR_MASK}"));
                    self.lines.push(format!("AND R7, R{ra}, R7"));
                    self.lines.push(format!("STORE [R7+{off}], R{rv}"));
                    return 3;
                }
                3 if budget >= 3 => {
                    let (ra, rd) = (self.reg(), self.reg());
                    let off = self.rng.random_range(0..MEM_OFFSETS);
                    self.lines.push(format!("LOADI R7, {ADDR_MASK}"));
                    self.lines.push(format!("AND R7, R{ra}, R7"));
                    self.lines.push(format!("LOAD R{rd}, [R7+{off}]"));
                    return 3;
                }
                4 => {
                    let rs = self.reg();
                    self.lines.push(format!("OUT R{rs}"));
                    return 1;
                }
                5 if !in_loop => {
                    let rd = self.reg();
                    self.lines.push(format!("IN R{rd}"));
                    self.inputs += 1;
                    return 1;
                }
                _ => {}
            }
        }
    }

    /// A counted loop; needs at least 6 slots.
    fn counted_loop(&mut self, budget: usize) -> usize {
        let trip = self.rng.random_range(1..=MAX_TRIP);
        let label = format!("L{}", self.labels);
        self.labels += 1;
        self.lines.push(format!("LOADI R6, {trip}"));
        self.lines.push(format!("{label}:"));
        let mut used = 1;
        let body_budget = (budget - 5).min(6);
        let target = self.rng.random_range(1..=body_budget);
        let mut body = 0;
        while body < target {
            body += self.simple(target - body, true);
            self.maybe_yield();
        }
        used += body;
        self.lines.push("LOADI R7, 1".into());
        self.lines.push("SUB R6, R6, R7".into());
        self.lines.push("LOADI R7, 0".into());
        self.lines.push(format!("BNE R6, R7, {label}"));
        used + 4
    }
}

/// Assembly text with `size` non-`YIELD` instructions, the last being
/// `HALT`. `yield_density` is the chance of a `YIELD` after each statement.
pub fn gen_program(seed: u64, size: usize, yield_density: f64) -> String {
    let size = size.max(1);
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        yields: ChaCha8Rng::seed_from_u64(seed ^ YIELD_STREAM),
        density: yield_density,
        lines: Vec::new(),
        inputs: 0,
        labels: 0,
    };
    let mut remaining = size - 1;
    while remaining > 0 {
        let used = if remaining >= 6 && g.rng.random_bool(0.25) {
            g.counted_loop(remaining)
        } else {
            g.simple(remaining, false)
        };
        remaining -= used;
        g.maybe_yield();
    }
    g.lines.push("HALT".into());

    let mut input_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut text: Vec<String> = (0..g.inputs)
        .map(|_| format!(".input {}", input_rng.random_range(0..100_000u32)))
        .collect();
    text.append(&mut g.lines);
    text.join("\n")
}
