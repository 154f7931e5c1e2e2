//! Transient-error injection.
//!
//! Faults are single-bit XOR flips in architectural state. Time is counted
//! in instruction ticks within a treatment window, which is laid out as
//! run 1, then run 2, then the verification/commit phase. The injector is
//! armed once per window with the fault-free geometry of that window and
//! returns the events that strike it.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{MachineState, NUM_REGS, PAGE_WORDS};
use crate::store::ReliableStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Run1,
    Run2,
    VerifyCommit,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Run1 => "RUN1",
            Phase::Run2 => "RUN2",
            Phase::VerifyCommit => "VERIFY_COMMIT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DigestCopy {
    First,
    Second,
}

impl DigestCopy {
    pub fn index(self) -> usize {
        match self {
            DigestCopy::First => 0,
            DigestCopy::Second => 1,
        }
    }

    fn other(self) -> Self {
        match self {
            DigestCopy::First => DigestCopy::Second,
            DigestCopy::Second => DigestCopy::First,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    Register {
        index: usize,
        bit: u32,
    },
    Pc {
        bit: u32,
    },
    WorkingMem {
        page: usize,
        word: usize,
        bit: u32,
    },
    DigestBuffer {
        copy: DigestCopy,
        byte: usize,
        bit: u32,
    },
    /// Golden copy in the reliable store. Only legal in store-violation mode.
    StoreMem {
        page: usize,
        word: usize,
        bit: u32,
    },
    StoreReg {
        index: usize,
        bit: u32,
    },
}

impl FaultTarget {
    pub fn hits_store(&self) -> bool {
        matches!(
            self,
            FaultTarget::StoreMem { .. } | FaultTarget::StoreReg { .. }
        )
    }

    pub fn hits_machine(&self) -> bool {
        matches!(
            self,
            FaultTarget::Register { .. } | FaultTarget::Pc { .. } | FaultTarget::WorkingMem { .. }
        )
    }
}

impl fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FaultTarget::Register { index, bit } => write!(f, "REG(R{index},{bit})"),
            FaultTarget::Pc { bit } => write!(f, "PC({bit})"),
            FaultTarget::WorkingMem { page, word, bit } => write!(f, "MEM({page},{word},{bit})"),
            FaultTarget::DigestBuffer { copy, byte, bit } => {
                write!(f, "DIGEST(d{},{byte},{bit})", copy.index() + 1)
            }
            FaultTarget::StoreMem { page, word, bit } => {
                write!(f, "STORE_MEM({page},{word},{bit})")
            }
            FaultTarget::StoreReg { index, bit } => write!(f, "STORE_REG(R{index},{bit})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub phase: Phase,
    /// Ticks from the start of `phase`.
    pub tick: u64,
    pub target: FaultTarget,
    #[serde(default)]
    pub applied: bool,
}

impl FaultEvent {
    pub fn new(phase: Phase, tick: u64, target: FaultTarget) -> Self {
        Self {
            phase,
            tick,
            target,
            applied: false,
        }
    }

    /// Flips the target bit in whichever site it names. Applying the same
    /// event twice restores the original value.
    pub fn apply(&mut self, site: FaultSite<'_>) -> Result<(), FaultError> {
        match (site, self.target) {
            (FaultSite::Machine(state), t) if t.hits_machine() => apply_to_state(&t, state)?,
            (FaultSite::Digests(bufs), FaultTarget::DigestBuffer { copy, byte, bit }) => {
                let buf = &mut bufs[copy.index()];
                if byte >= buf.len() || bit >= 8 {
                    return Err(FaultError::OutOfRange(self.target));
                }
                buf[byte] ^= 1 << bit;
            }
            (
                FaultSite::Store {
                    store,
                    exemption_lifted,
                },
                t,
            ) if t.hits_store() => {
                if !exemption_lifted {
                    return Err(FaultError::StoreExempt(t));
                }
                let ok = match t {
                    FaultTarget::StoreMem { page, word, bit } => {
                        store.flip_page_bit(page, word, bit)
                    }
                    FaultTarget::StoreReg { index, bit } => store.flip_reg_bit(index, bit),
                    _ => unreachable!(),
                };
                if !ok {
                    return Err(FaultError::OutOfRange(t));
                }
            }
            (_, t) if t.hits_store() => return Err(FaultError::StoreExempt(t)),
            (_, t) => return Err(FaultError::WrongSite(t)),
        }
        self.applied = true;
        Ok(())
    }
}

fn apply_to_state(target: &FaultTarget, state: &mut MachineState) -> Result<(), FaultError> {
    match *target {
        FaultTarget::Register { index, bit } if index < NUM_REGS && bit < 32 => {
            state.regs[index] ^= 1 << bit;
        }
        FaultTarget::Pc { bit } if bit < 32 => state.pc ^= 1 << bit,
        FaultTarget::WorkingMem { page, word, bit } if state.mem.flip_bit(page, word, bit) => {}
        t => return Err(FaultError::OutOfRange(t)),
    }
    Ok(())
}

/// Where an event lands.
pub enum FaultSite<'a> {
    Machine(&'a mut MachineState),
    Digests(&'a mut [Vec<u8>; 2]),
    Store {
        store: &'a mut ReliableStore,
        exemption_lifted: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FaultError {
    #[error("fault target {0} addresses the reliable store, which is exempt from injection")]
    StoreExempt(FaultTarget),
    #[error("fault target {0} does not exist")]
    OutOfRange(FaultTarget),
    #[error("fault target {0} is not reachable from this site")]
    WrongSite(FaultTarget),
}

/// A fault pinned to a specific window, for replaying exact scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedFault {
    /// Zero-based treatment index within the hardened run.
    pub treatment: u64,
    /// Zero-based attempt within the treatment; 0 is the first try.
    #[serde(default)]
    pub attempt: u32,
    pub phase: Phase,
    pub tick: u64,
    pub target: FaultTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    None,
    /// At most one event per treatment, striking the first attempt with
    /// probability `per_window`. Retry windows are fault-free.
    SinglePerTreatment {
        #[serde(default = "one")]
        per_window: f64,
    },
    /// Memoryless arrivals at `rate` per tick across every window, retries
    /// included. Nothing caps the count per window.
    Poisson {
        rate: f64,
    },
    Scripted {
        faults: Vec<ScriptedFault>,
    },
    /// Every attempt is struck with probability `per_window` by
    /// `faults_per_window` events. With probability `mirror_probability`
    /// each extra event copies the first one into the other replica, the
    /// common-mode upset that duplicate execution cannot see.
    ViolationMulti {
        #[serde(default = "default_violation_rate")]
        per_window: f64,
        #[serde(default = "two")]
        faults_per_window: usize,
        #[serde(default = "half")]
        mirror_probability: f64,
    },
    /// Like single-fault mode, but events hit the reliable store.
    ViolationStore {
        #[serde(default = "default_violation_rate")]
        per_window: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn two() -> usize {
    2
}
fn default_violation_rate() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub mode: FaultMode,
    #[serde(default)]
    pub seed: u64,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self {
            mode: FaultMode::None,
            seed: 0,
        }
    }

    pub fn single(seed: u64) -> Self {
        Self {
            mode: FaultMode::SinglePerTreatment { per_window: 1.0 },
            seed,
        }
    }

    pub fn scripted(faults: Vec<ScriptedFault>) -> Self {
        Self {
            mode: FaultMode::Scripted { faults },
            seed: 0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            mode: self.mode.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("probability {0} outside [0, 1]")]
    Probability(String),
    #[error("rate must be finite and non-negative")]
    Rate,
    #[error("violation mode needs at least two faults per window")]
    TooFewFaults,
}

impl FaultMode {
    pub fn validate(&self) -> Result<(), PlanError> {
        let prob = |p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(PlanError::Probability(p.to_string()))
            }
        };
        match *self {
            FaultMode::SinglePerTreatment { per_window } => prob(per_window),
            FaultMode::Poisson { rate } if !(rate.is_finite() && rate >= 0.0) => {
                Err(PlanError::Rate)
            }
            FaultMode::ViolationMulti {
                per_window,
                faults_per_window,
                mirror_probability,
            } => {
                prob(per_window)?;
                prob(mirror_probability)?;
                if faults_per_window < 2 {
                    return Err(PlanError::TooFewFaults);
                }
                Ok(())
            }
            FaultMode::ViolationStore { per_window } => prob(per_window),
            _ => Ok(()),
        }
    }
}

/// Poisson arrival ticks in `[0, horizon)`: exponential gaps with mean
/// `1/rate`, floored to whole ticks.
pub fn sample_arrivals(rate: f64, horizon: u64, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    arrivals_with(rate, horizon, &mut rng)
}

fn arrivals_with<R: Rng>(rate: f64, horizon: u64, rng: &mut R) -> Vec<u64> {
    if rate <= 0.0 || horizon == 0 {
        return Vec::new();
    }
    let exp = Exp::new(rate).expect("rate is positive and finite");
    let mut out = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += exp.sample(rng);
        if t >= horizon as f64 {
            return out;
        }
        out.push(t as u64);
    }
}

/// Fault-free shape of one treatment window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeometry {
    /// Length of each run in ticks.
    pub run_len: u64,
    pub verify_len: u64,
    pub digest_len: usize,
    pub pages: usize,
}

impl WindowGeometry {
    pub fn phase_len(&self, phase: Phase) -> u64 {
        match phase {
            Phase::Run1 | Phase::Run2 => self.run_len,
            Phase::VerifyCommit => self.verify_len,
        }
    }

    pub fn total(&self) -> u64 {
        2 * self.run_len + self.verify_len
    }

    /// Maps a window-relative tick onto its phase.
    pub fn locate(&self, tick: u64) -> (Phase, u64) {
        if tick < self.run_len {
            (Phase::Run1, tick)
        } else if tick < 2 * self.run_len {
            (Phase::Run2, tick - self.run_len)
        } else {
            (Phase::VerifyCommit, tick - 2 * self.run_len)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowId {
    pub treatment: u64,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub window: WindowId,
    pub event: FaultEvent,
}

/// Events for one window, ordered by phase then tick.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schedule {
    pub events: Vec<FaultEvent>,
}

impl Schedule {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &FaultEvent> {
        self.events.iter().filter(move |e| e.phase == phase)
    }

    fn sort(&mut self) {
        self.events.sort_by_key(|e| (e.phase, e.tick));
    }
}

/// Owns the fault plan, its random stream and the log of every event
/// delivered to the engine. One per hardened run.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    plan: FaultPlan,
    rng: ChaCha8Rng,
    log: Vec<FaultRecord>,
}

impl FaultInjector {
    pub fn new(plan: FaultPlan) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(plan.seed);
        Self {
            plan,
            rng,
            log: Vec::new(),
        }
    }

    pub fn disabled() -> Self {
        Self::new(FaultPlan::none())
    }

    pub fn plan(&self) -> &FaultPlan {
        &self.plan
    }

    pub fn is_active(&self) -> bool {
        match &self.plan.mode {
            FaultMode::None => false,
            FaultMode::Scripted { faults } => !faults.is_empty(),
            _ => true,
        }
    }

    pub fn lifts_store_exemption(&self) -> bool {
        matches!(self.plan.mode, FaultMode::ViolationStore { .. })
    }

    /// Picks the events striking `window`.
    pub fn arm(&mut self, window: WindowId, geometry: &WindowGeometry) -> Schedule {
        let mut schedule = Schedule::default();
        let total = geometry.total();
        match self.plan.mode.clone() {
            FaultMode::None => {}
            FaultMode::SinglePerTreatment { per_window } => {
                if window.attempt == 0 && total > 0 && self.rng.random_bool(per_window) {
                    let e = self.random_event(geometry);
                    schedule.events.push(e);
                }
            }
            FaultMode::Poisson { rate } => {
                for tick in arrivals_with(rate, total, &mut self.rng) {
                    let (phase, local) = geometry.locate(tick);
                    let target = self.random_target(phase, geometry);
                    schedule.events.push(FaultEvent::new(phase, local, target));
                }
            }
            FaultMode::Scripted { faults } => {
                schedule.events.extend(
                    faults
                        .iter()
                        .filter(|f| f.treatment == window.treatment && f.attempt == window.attempt)
                        .map(|f| FaultEvent::new(f.phase, f.tick, f.target)),
                );
            }
            FaultMode::ViolationMulti {
                per_window,
                faults_per_window,
                mirror_probability,
            } => {
                if total > 0 && self.rng.random_bool(per_window) {
                    let first = self.random_event(geometry);
                    schedule.events.push(first);
                    for _ in 1..faults_per_window {
                        let e = if self.rng.random_bool(mirror_probability) {
                            mirror(&first)
                        } else {
                            self.random_event(geometry)
                        };
                        schedule.events.push(e);
                    }
                }
            }
            FaultMode::ViolationStore { per_window } => {
                if total > 0 && self.rng.random_bool(per_window) {
                    let (phase, tick) = geometry.locate(self.rng.random_range(0..total));
                    let target = if self.rng.random_bool(0.5) {
                        FaultTarget::StoreMem {
                            page: self.rng.random_range(0..geometry.pages.max(1)),
                            word: self.rng.random_range(0..PAGE_WORDS),
                            bit: self.rng.random_range(0..32),
                        }
                    } else {
                        FaultTarget::StoreReg {
                            index: self.rng.random_range(0..NUM_REGS),
                            bit: self.rng.random_range(0..32),
                        }
                    };
                    schedule.events.push(FaultEvent::new(phase, tick, target));
                }
            }
        }
        schedule.sort();
        if matches!(self.plan.mode, FaultMode::SinglePerTreatment { .. }) {
            assert!(
                schedule.len() <= 1,
                "single-fault mode scheduled {} events",
                schedule.len()
            );
        }
        schedule
    }

    /// Uniform over the window's ticks, so phases are weighted by length.
    fn random_event(&mut self, geometry: &WindowGeometry) -> FaultEvent {
        let (phase, tick) = geometry.locate(self.rng.random_range(0..geometry.total()));
        let target = self.random_target(phase, geometry);
        FaultEvent::new(phase, tick, target)
    }

    /// Target class uniform, then location uniform within the class.
    fn random_target(&mut self, phase: Phase, geometry: &WindowGeometry) -> FaultTarget {
        let rng = &mut self.rng;
        match phase {
            Phase::Run1 | Phase::Run2 => match rng.random_range(0..3) {
                0 => FaultTarget::Register {
                    index: rng.random_range(0..NUM_REGS),
                    bit: rng.random_range(0..32),
                },
                1 => FaultTarget::Pc {
                    bit: rng.random_range(0..32),
                },
                _ => FaultTarget::WorkingMem {
                    page: rng.random_range(0..geometry.pages.max(1)),
                    word: rng.random_range(0..PAGE_WORDS),
                    bit: rng.random_range(0..32),
                },
            },
            Phase::VerifyCommit => FaultTarget::DigestBuffer {
                copy: if rng.random_bool(0.5) {
                    DigestCopy::First
                } else {
                    DigestCopy::Second
                },
                byte: rng.random_range(0..geometry.digest_len.max(1)),
                bit: rng.random_range(0..8),
            },
        }
    }

    pub fn record(&mut self, window: WindowId, event: FaultEvent) {
        self.log.push(FaultRecord { window, event });
    }

    pub fn log(&self) -> &[FaultRecord] {
        &self.log
    }

    pub fn applied_count(&self) -> usize {
        self.log.iter().filter(|r| r.event.applied).count()
    }
}

/// Same upset delivered to the other replica.
fn mirror(e: &FaultEvent) -> FaultEvent {
    let (phase, target) = match (e.phase, e.target) {
        (Phase::Run1, t) => (Phase::Run2, t),
        (Phase::Run2, t) => (Phase::Run1, t),
        (Phase::VerifyCommit, FaultTarget::DigestBuffer { copy, byte, bit }) => (
            Phase::VerifyCommit,
            FaultTarget::DigestBuffer {
                copy: copy.other(),
                byte,
                bit,
            },
        ),
        (p, t) => (p, t),
    };
    FaultEvent::new(phase, e.tick, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    fn geometry() -> WindowGeometry {
        WindowGeometry {
            run_len: 40,
            verify_len: 7,
            digest_len: 1100,
            pages: 16,
        }
    }

    #[test]
    fn zero_rate_gives_no_arrivals() {
        assert!(sample_arrivals(0.0, 1_000_000, 1).is_empty());
    }

    #[test]
    fn arrivals_are_reproducible_and_sorted() {
        let a = sample_arrivals(0.01, 100_000, 99);
        assert_eq!(a, sample_arrivals(0.01, 100_000, 99));
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&t| t < 100_000));
    }

    #[test]
    fn arrival_count_within_five_sigma() {
        // Poisson(10^4): mean 10^4, sd 100.
        for seed in 0..5 {
            let n = sample_arrivals(0.01, 1_000_000, seed).len() as f64;
            assert!((n - 1e4).abs() <= 5.0 * 100.0, "seed {seed}: {n}");
        }
    }

    #[test]
    fn register_flip_is_xor() {
        let mut s = MachineState::new(1);
        s.regs[0] = 6;
        let mut e = FaultEvent::new(Phase::Run1, 0, FaultTarget::Register { index: 0, bit: 0 });
        e.apply(FaultSite::Machine(&mut s)).unwrap();
        assert_eq!(s.regs[0], 7);
        assert!(e.applied);
        e.apply(FaultSite::Machine(&mut s)).unwrap();
        assert_eq!(s.regs[0], 6);
    }

    #[test]
    fn memory_and_digest_flips_are_involutions() {
        let mut s = MachineState::new(2);
        let before = s.clone();
        let mut e = FaultEvent::new(
            Phase::Run2,
            3,
            FaultTarget::WorkingMem {
                page: 1,
                word: 9,
                bit: 31,
            },
        );
        e.apply(FaultSite::Machine(&mut s)).unwrap();
        assert_eq!(s.mem.read(256 + 9), Some(1 << 31));
        e.apply(FaultSite::Machine(&mut s)).unwrap();
        assert_eq!(s, before);

        let mut bufs = [vec![0u8; 4], vec![0u8; 4]];
        let mut d = FaultEvent::new(
            Phase::VerifyCommit,
            0,
            FaultTarget::DigestBuffer {
                copy: DigestCopy::Second,
                byte: 2,
                bit: 7,
            },
        );
        d.apply(FaultSite::Digests(&mut bufs)).unwrap();
        assert_eq!(bufs[1], vec![0, 0, 0x80, 0]);
        assert_eq!(bufs[0], vec![0; 4]);
    }

    #[test]
    fn store_targets_need_the_exemption_lifted() {
        let mut store = ReliableStore::load(&assemble("HALT").unwrap()).unwrap();
        let sum = store.checksum();
        let target = FaultTarget::StoreMem {
            page: 0,
            word: 0,
            bit: 0,
        };
        let mut e = FaultEvent::new(Phase::Run1, 0, target);
        assert_eq!(
            e.apply(FaultSite::Store {
                store: &mut store,
                exemption_lifted: false
            }),
            Err(FaultError::StoreExempt(target))
        );
        let mut s = MachineState::new(1);
        assert_eq!(
            e.apply(FaultSite::Machine(&mut s)),
            Err(FaultError::StoreExempt(target))
        );
        assert_eq!(store.checksum(), sum);
        e.apply(FaultSite::Store {
            store: &mut store,
            exemption_lifted: true,
        })
        .unwrap();
        assert_ne!(store.checksum(), sum);
    }

    #[test]
    fn wrong_site_and_range_errors() {
        let mut s = MachineState::new(1);
        let mut e = FaultEvent::new(
            Phase::Run1,
            0,
            FaultTarget::WorkingMem {
                page: 3,
                word: 0,
                bit: 0,
            },
        );
        assert!(matches!(
            e.apply(FaultSite::Machine(&mut s)),
            Err(FaultError::OutOfRange(_))
        ));
        let mut bufs = [vec![], vec![]];
        let mut r = FaultEvent::new(Phase::Run1, 0, FaultTarget::Pc { bit: 1 });
        assert!(matches!(
            r.apply(FaultSite::Digests(&mut bufs)),
            Err(FaultError::WrongSite(_))
        ));
        assert!(!r.applied);
    }

    #[test]
    fn none_mode_schedules_nothing() {
        let mut inj = FaultInjector::disabled();
        assert!(!inj.is_active());
        let w = WindowId {
            treatment: 0,
            attempt: 0,
        };
        assert!(inj.arm(w, &geometry()).is_empty());
    }

    #[test]
    fn single_mode_never_exceeds_one_per_window() {
        let mut inj = FaultInjector::new(FaultPlan::single(5));
        let g = geometry();
        let mut max = 0;
        for t in 0..100_000 {
            let s = inj.arm(
                WindowId {
                    treatment: t,
                    attempt: 0,
                },
                &g,
            );
            max = max.max(s.len());
        }
        assert_eq!(max, 1);
        let retry = inj.arm(
            WindowId {
                treatment: 0,
                attempt: 1,
            },
            &g,
        );
        assert!(retry.is_empty(), "retry windows are fault-free");
    }

    #[test]
    fn single_mode_phase_histogram_matches_phase_lengths() {
        let g = geometry();
        let mut inj = FaultInjector::new(FaultPlan::single(11));
        let mut counts = [0f64; 3];
        let n = 100_000;
        for t in 0..n {
            let s = inj.arm(
                WindowId {
                    treatment: t,
                    attempt: 0,
                },
                &g,
            );
            let e = s.events[0];
            assert!(e.tick < g.phase_len(e.phase));
            counts[e.phase as usize] += 1.0;
        }
        let total = g.total() as f64;
        let expected = [
            n as f64 * g.run_len as f64 / total,
            n as f64 * g.run_len as f64 / total,
            n as f64 * g.verify_len as f64 / total,
        ];
        let chi2: f64 = counts
            .iter()
            .zip(expected)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        // chi-square, 2 degrees of freedom: P(X > 13.8155) = 0.001.
        assert!(chi2 < 13.8155, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn violation_multi_can_exceed_one() {
        let mut inj = FaultInjector::new(FaultPlan {
            mode: FaultMode::ViolationMulti {
                per_window: 1.0,
                faults_per_window: 2,
                mirror_probability: 1.0,
            },
            seed: 1,
        });
        let s = inj.arm(
            WindowId {
                treatment: 0,
                attempt: 0,
            },
            &geometry(),
        );
        assert_eq!(s.len(), 2);
        let (a, b) = (s.events[0], s.events[1]);
        assert_eq!(a.tick, b.tick);
        assert_ne!(
            (a.phase, a.target),
            (b.phase, b.target),
            "mirrored event lands in the other replica"
        );
    }

    #[test]
    fn same_seed_same_schedule() {
        let g = geometry();
        let run = |seed| {
            let mut inj = FaultInjector::new(FaultPlan {
                mode: FaultMode::Poisson { rate: 0.05 },
                seed,
            });
            (0..50)
                .map(|t| {
                    inj.arm(
                        WindowId {
                            treatment: t,
                            attempt: 0,
                        },
                        &g,
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn plan_json_forms() {
        let plan: FaultPlan = serde_json::from_str(
            r#"{"mode": {"scripted": {"faults": [
                {"treatment": 2, "phase": "run2", "tick": 3,
                 "target": {"register": {"index": 1, "bit": 4}}}
            ]}}, "seed": 9}"#,
        )
        .unwrap();
        let FaultMode::Scripted { faults } = &plan.mode else {
            panic!("expected scripted");
        };
        assert_eq!(faults[0].attempt, 0);
        assert_eq!(faults[0].target, FaultTarget::Register { index: 1, bit: 4 });

        let single: FaultPlan =
            serde_json::from_str(r#"{"mode": {"single_per_treatment": {}}}"#).unwrap();
        assert_eq!(single, FaultPlan::single(0));
        assert!(FaultMode::SinglePerTreatment { per_window: 1.5 }
            .validate()
            .is_err());
    }
}
