//! Built-in workloads: ten hand-written programs plus ten generated ones.

use crate::asm::{assemble, AsmError, ProgramImage};
use crate::gen::gen_program;

pub const HAND_WRITTEN: [(&str, &str); 10] = [
    ("hello", include_str!("../corpus/hello.bhs")),
    ("fib", include_str!("../corpus/fib.bhs")),
    ("sort", include_str!("../corpus/sort.bhs")),
    ("sum_input", include_str!("../corpus/sum_input.bhs")),
    ("matmul", include_str!("../corpus/matmul.bhs")),
    ("sieve", include_str!("../corpus/sieve.bhs")),
    ("checksum", include_str!("../corpus/checksum.bhs")),
    ("gcd", include_str!("../corpus/gcd.bhs")),
    ("memfill", include_str!("../corpus/memfill.bhs")),
    ("poly", include_str!("../corpus/poly.bhs")),
];

/// Generator parameters of the built-in `gen-NN` workloads.
pub const GENERATED_COUNT: u64 = 10;
pub const GENERATED_SIZE: usize = 120;
pub const GENERATED_YIELD_DENSITY: f64 = 0.03;

#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub source: String,
    pub image: ProgramImage,
}

impl Workload {
    pub fn from_source(
        name: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Self, AsmError> {
        let source = source.into();
        let image = assemble(&source)?;
        Ok(Self {
            name: name.into(),
            source,
            image,
        })
    }
}

fn generated_source(index: u64) -> String {
    gen_program(1000 + index, GENERATED_SIZE, GENERATED_YIELD_DENSITY)
}

/// Source text of a built-in workload: a hand-written name or `gen-00`
/// through `gen-09`.
pub fn builtin_source(name: &str) -> Option<String> {
    if let Some((_, src)) = HAND_WRITTEN.iter().find(|(n, _)| *n == name) {
        return Some((*src).to_string());
    }
    let index: u64 = name.strip_prefix("gen-")?.parse().ok()?;
    (index < GENERATED_COUNT).then(|| generated_source(index))
}

pub fn builtin_names() -> Vec<String> {
    HAND_WRITTEN
        .iter()
        .map(|(n, _)| n.to_string())
        .chain((0..GENERATED_COUNT).map(|i| format!("gen-{i:02}")))
        .collect()
}

/// All twenty built-in workloads, hand-written first.
pub fn corpus() -> Vec<Workload> {
    builtin_names()
        .into_iter()
        .map(|name| {
            let src = builtin_source(&name).expect("listed name");
            Workload::from_source(name, src).expect("built-in workloads assemble")
        })
        .collect()
}
