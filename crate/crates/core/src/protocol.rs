//! Protocol state, parameters and the atomic step function.
//!
//! One call to [`SystemState::step`] is one indivisible access to the shared
//! variable: the scheduled process performs its next lock/unlock section and
//! moves to its next region. Randomness enters only through a
//! [`ChoiceSource`], which is what lets the same code drive Monte Carlo runs,
//! exact replays and the enumerator.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact mass of a single random choice.
pub type Mass = Ratio<u64>;

/// Largest lottery size whose point masses fit in a `Ratio<u64>`.
pub const MAX_LOTTERY_SIZE: u32 = 62;

/// Process identifier, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pid(u32);

impl Pid {
    /// Panics on zero; pids are 1-based.
    pub fn new(id: u32) -> Self {
        assert!(id >= 1, "pids are 1-based");
        Pid(id)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Zero-based slot in per-process vectors.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    pub fn from_index(i: usize) -> Self {
        Pid(i as u32 + 1)
    }
}

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Try,
    Crit,
    Exit,
    Rem,
}

impl Region {
    /// One-letter code used by the compact run notation.
    pub fn letter(self) -> char {
        match self {
            Region::Try => 'T',
            Region::Crit => 'C',
            Region::Exit => 'E',
            Region::Rem => 'R',
        }
    }

    pub fn from_letter(c: char) -> Option<Region> {
        match c.to_ascii_uppercase() {
            'T' => Some(Region::Try),
            'C' => Some(Region::Crit),
            'E' => Some(Region::Exit),
            'R' => Some(Region::Rem),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Try => "Try",
            Region::Crit => "Crit",
            Region::Exit => "Exit",
            Region::Rem => "Rem",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Redraw when the round number changed or the shared lottery value is
    /// below the local one.
    RabinOptimized,
    /// Redraw only when the round number changed.
    RabinDeoptimized,
    /// Boolean lottery, two round numbers, optimized redraw test.
    BenOr,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::RabinOptimized => "rabin-optimized",
            Variant::RabinDeoptimized => "rabin-deoptimized",
            Variant::BenOr => "ben-or",
        }
    }

    fn redraws_on_low_shared_value(self) -> bool {
        !matches!(self, Variant::RabinDeoptimized)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown variant `{0}` (expected optimized, deoptimized or ben-or)")]
pub struct UnknownVariant(pub String);

impl FromStr for Variant {
    type Err = UnknownVariant;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "optimized" | "rabin-optimized" | "rabin" => Ok(Variant::RabinOptimized),
            "deoptimized" | "rabin-deoptimized" => Ok(Variant::RabinDeoptimized),
            "ben-or" | "benor" => Ok(Variant::BenOr),
            other => Err(UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParamError {
    #[error("n must be at least 1")]
    NoProcesses,
    #[error("round-number range r = {0} must be at least 2")]
    RoundRange(u32),
    #[error("lottery size b = {0} must lie in 2..={MAX_LOTTERY_SIZE}")]
    LotterySize(u32),
    #[error("the boolean variant needs b = 1 and r = 2, got b = {b}, r = {r}")]
    BooleanShape { b: u32, r: u32 },
    #[error("bias p1 = {0} is not a probability")]
    Bias(String),
}

/// `ceil(log2 n)` for `n >= 1`.
pub fn ceil_log2(n: u64) -> u32 {
    assert!(n >= 1);
    if n == 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Serializes a [`Mass`] as `"numer/denom"`.
pub mod mass_serde {
    use super::Mass;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Mass, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", m.numer(), m.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mass, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).ok_or_else(|| D::Error::custom(format!("bad mass `{raw}`")))
    }

    pub fn parse(raw: &str) -> Option<Mass> {
        let raw = raw.trim();
        match raw.split_once('/') {
            Some((a, b)) => {
                let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
                (b != 0).then(|| Mass::new(a, b))
            }
            None => raw.parse().ok().map(Mass::from_integer),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub n: u32,
    /// Lottery size; values range over `1..=b`.
    pub b: u32,
    /// Round numbers range over `0..r`.
    pub r: u32,
    pub variant: Variant,
    /// Probability of drawing 1 in the boolean lottery.
    #[serde(with = "mass_serde")]
    pub p1: Mass,
}

impl ProtocolParams {
    pub fn new(n: u32, b: u32, r: u32, variant: Variant) -> Result<Self, ParamError> {
        let p = ProtocolParams { n, b, r, variant, p1: Mass::new(1, 2) };
        p.validate()?;
        Ok(p)
    }

    /// Default sizes: `b = ceil(log2 n) + 4`, `r = 100`; the boolean variant
    /// fixes `b = 1`, `r = 2`.
    pub fn with_defaults(n: u32, variant: Variant) -> Result<Self, ParamError> {
        if n == 0 {
            return Err(ParamError::NoProcesses);
        }
        match variant {
            Variant::BenOr => Self::new(n, 1, 2, variant),
            _ => Self::new(n, ceil_log2(u64::from(n)) + 4, 100, variant),
        }
    }

    pub fn with_p1(mut self, p1: Mass) -> Result<Self, ParamError> {
        self.p1 = p1;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.n == 0 {
            return Err(ParamError::NoProcesses);
        }
        match self.variant {
            Variant::BenOr => {
                if self.b != 1 || self.r != 2 {
                    return Err(ParamError::BooleanShape { b: self.b, r: self.r });
                }
                if self.p1 > Mass::from_integer(1) {
                    return Err(ParamError::Bias(format!("{}", self.p1)));
                }
            }
            _ => {
                if self.r < 2 {
                    return Err(ParamError::RoundRange(self.r));
                }
                if !(2..=MAX_LOTTERY_SIZE).contains(&self.b) {
                    return Err(ParamError::LotterySize(self.b));
                }
            }
        }
        Ok(())
    }

    /// Lottery value every process holds before its first draw.
    pub fn initial_lottery(&self) -> u32 {
        match self.variant {
            Variant::BenOr => 0,
            _ => 1,
        }
    }

    /// Mass of lottery value `l` under this protocol.
    pub fn lottery_mass(&self, l: u32) -> Mass {
        match self.variant {
            Variant::BenOr => match l {
                1 => self.p1,
                0 => Mass::from_integer(1) - self.p1,
                _ => Mass::from_integer(0),
            },
            _ => {
                if l == 0 || l > self.b {
                    Mass::from_integer(0)
                } else if l < self.b {
                    Mass::new(1, 1u64 << l)
                } else {
                    Mass::new(1, 1u64 << (self.b - 1))
                }
            }
        }
    }

    /// Support of the lottery in increasing order.
    pub fn lottery_values(&self) -> std::ops::RangeInclusive<u32> {
        match self.variant {
            Variant::BenOr => 0..=1,
            _ => 1..=self.b,
        }
    }
}

/// The shared variable `V = (S, B, R)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SharedVariable {
    /// Set while some process is in Crit or Exit.
    pub occupied: bool,
    /// Highest lottery value drawn in the current round.
    pub lottery: u32,
    /// Current round number.
    pub round: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalState {
    pub region: Region,
    pub lottery: u32,
    /// `None` stands for the sentinel that never equals a real round number.
    pub round: Option<u32>,
}

/// One scheduled step as seen by the adversary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub pid: Pid,
    pub old: Region,
    pub new: Region,
}

impl Transition {
    pub fn new(pid: Pid, old: Region, new: Region) -> Self {
        Transition { pid, old, new }
    }

    pub fn is_try_step(&self) -> bool {
        self.new == Region::Try || self.old == Region::Try
    }

    pub fn is_entry(&self) -> bool {
        self.old == Region::Try && self.new == Region::Crit
    }

    pub fn is_release(&self) -> bool {
        self.old == Region::Exit && self.new == Region::Rem
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.pid, self.old.letter(), self.new.letter())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrawKind {
    /// Initial round number.
    Init,
    Lottery,
    RoundNumber,
}

/// One random choice, with the exact mass the protocol gave it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    /// 1-based step that made the draw; 0 for initialisation.
    pub step: u64,
    pub kind: DrawKind,
    pub pid: Option<Pid>,
    pub value: u32,
    #[serde(with = "mass_serde")]
    pub mass: Mass,
}

pub type ChoiceLog = Vec<Choice>;

/// What a single step did, beyond the region transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMeta {
    pub transition: Transition,
    /// The process drew a new lottery value.
    pub redraw: bool,
    pub drawn: Option<u32>,
    pub entered_crit: bool,
    pub before: SharedVariable,
    pub after: SharedVariable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub value: u32,
    pub mass: Mass,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("pid {pid} is outside 1..={n}")]
    UnknownPid { pid: u32, n: u32 },
    #[error("replay ran out of recorded choices at step {step}")]
    ReplayExhausted { step: u64 },
    #[error("replay expected a {expected:?} choice at step {step}, the log has {found:?}")]
    ReplayMismatch { step: u64, expected: DrawKind, found: DrawKind },
    #[error("choice source refused the draw at step {step}: {reason}")]
    Source { step: u64, reason: String },
}

/// Provider of the protocol's random choices.
pub trait ChoiceSource {
    fn lottery(&mut self, params: &ProtocolParams, step: u64) -> Result<Draw, ProtocolError>;

    /// A round number; `state` is the configuration just before the draw
    /// (for initialisation, the provisional state with every sentinel).
    fn round_number(&mut self, state: &SystemState, step: u64) -> Result<Draw, ProtocolError>;
}

/// Truncated geometric sample from one 64-bit word.
pub fn lottery_from_word(word: u64, b: u32) -> u32 {
    (word.trailing_zeros() + 1).min(b)
}

/// Monte Carlo choices from a seeded ChaCha stream.
#[derive(Clone, Debug)]
pub struct RngSource {
    rng: ChaCha8Rng,
}

impl RngSource {
    pub fn new(rng: ChaCha8Rng) -> Self {
        RngSource { rng }
    }

    /// Protocol randomness for `seed`; stream 0 of that key.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        RngSource { rng }
    }
}

impl ChoiceSource for RngSource {
    fn lottery(&mut self, params: &ProtocolParams, _step: u64) -> Result<Draw, ProtocolError> {
        let value = match params.variant {
            Variant::BenOr => {
                let (num, den) = (*params.p1.numer(), *params.p1.denom());
                u32::from(self.rng.gen_range(0..den) < num)
            }
            _ => lottery_from_word(self.rng.next_u64(), params.b),
        };
        Ok(Draw { value, mass: params.lottery_mass(value) })
    }

    fn round_number(&mut self, state: &SystemState, _step: u64) -> Result<Draw, ProtocolError> {
        let r = state.params.r;
        Ok(Draw { value: self.rng.gen_range(0..r), mass: Mass::new(1, u64::from(r)) })
    }
}

/// Replays a recorded choice log in order.
#[derive(Clone, Debug)]
pub struct ReplaySource {
    choices: Vec<Choice>,
    pos: usize,
}

impl ReplaySource {
    pub fn new(choices: Vec<Choice>) -> Self {
        ReplaySource { choices, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.choices.len() - self.pos
    }

    fn take(&mut self, step: u64, kinds: &[DrawKind]) -> Result<Draw, ProtocolError> {
        let c = self.choices.get(self.pos).ok_or(ProtocolError::ReplayExhausted { step })?;
        if !kinds.contains(&c.kind) {
            return Err(ProtocolError::ReplayMismatch { step, expected: kinds[0], found: c.kind });
        }
        self.pos += 1;
        Ok(Draw { value: c.value, mass: c.mass })
    }
}

impl ChoiceSource for ReplaySource {
    fn lottery(&mut self, _params: &ProtocolParams, step: u64) -> Result<Draw, ProtocolError> {
        self.take(step, &[DrawKind::Lottery])
    }

    fn round_number(&mut self, _state: &SystemState, step: u64) -> Result<Draw, ProtocolError> {
        self.take(step, &[DrawKind::RoundNumber, DrawKind::Init])
    }
}

/// Full configuration: shared variable, every local state, step count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemState {
    pub params: ProtocolParams,
    pub shared: SharedVariable,
    pub locals: Vec<LocalState>,
    /// Steps taken so far.
    pub steps: u64,
}

impl SystemState {
    /// Initial configuration: everybody in Rem, section free, round number
    /// drawn from `source` and logged as step 0.
    pub fn init(
        params: ProtocolParams,
        source: &mut impl ChoiceSource,
        log: &mut ChoiceLog,
    ) -> Result<Self, ProtocolError> {
        params.validate()?;
        let local = LocalState { region: Region::Rem, lottery: params.initial_lottery(), round: None };
        let mut state = SystemState {
            shared: SharedVariable { occupied: false, lottery: 0, round: 0 },
            locals: vec![local; params.n as usize],
            params,
            steps: 0,
        };
        let d = source.round_number(&state, 0)?;
        state.shared.round = d.value;
        log.push(Choice { step: 0, kind: DrawKind::Init, pid: None, value: d.value, mass: d.mass });
        Ok(state)
    }

    pub fn local(&self, pid: Pid) -> &LocalState {
        &self.locals[pid.index()]
    }

    /// Process in Crit or Exit, if any.
    pub fn holder(&self) -> Option<Pid> {
        self.locals
            .iter()
            .position(|l| matches!(l.region, Region::Crit | Region::Exit))
            .map(Pid::from_index)
    }

    /// Distinct round numbers currently stored anywhere, ascending.
    pub fn stored_round_numbers(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.locals.iter().filter_map(|l| l.round).collect();
        v.push(self.shared.round);
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Performs one atomic step of `pid`.
    pub fn step(
        &mut self,
        pid: Pid,
        source: &mut impl ChoiceSource,
        log: &mut ChoiceLog,
    ) -> Result<StepMeta, ProtocolError> {
        if pid.get() == 0 || pid.get() > self.params.n {
            return Err(ProtocolError::UnknownPid { pid: pid.get(), n: self.params.n });
        }
        let t = self.steps + 1;
        let before = self.shared;
        let i = pid.index();
        let old = self.locals[i].region;
        let mut redraw = false;
        let mut drawn = None;

        let new = match old {
            Region::Rem | Region::Try => {
                let me = self.locals[i];
                let v = self.shared;
                if !v.occupied && v.lottery == me.lottery && me.round == Some(v.round) {
                    let d = source.round_number(self, t)?;
                    log.push(Choice {
                        step: t,
                        kind: DrawKind::RoundNumber,
                        pid: Some(pid),
                        value: d.value,
                        mass: d.mass,
                    });
                    self.shared = SharedVariable { occupied: true, lottery: 0, round: d.value };
                    Region::Crit
                } else {
                    let stale = me.round != Some(v.round);
                    let carried = self.params.variant.redraws_on_low_shared_value() && v.lottery < me.lottery;
                    if stale || carried {
                        let d = source.lottery(&self.params, t)?;
                        log.push(Choice {
                            step: t,
                            kind: DrawKind::Lottery,
                            pid: Some(pid),
                            value: d.value,
                            mass: d.mass,
                        });
                        let local = &mut self.locals[i];
                        local.lottery = d.value;
                        local.round = Some(v.round);
                        self.shared.lottery = v.lottery.max(d.value);
                        redraw = true;
                        drawn = Some(d.value);
                    }
                    Region::Try
                }
            }
            Region::Crit => Region::Exit,
            Region::Exit => {
                self.shared.occupied = false;
                let local = &mut self.locals[i];
                local.round = None;
                local.lottery = 0;
                Region::Rem
            }
        };
        self.locals[i].region = new;
        self.steps = t;
        Ok(StepMeta {
            transition: Transition::new(pid, old, new),
            redraw,
            drawn,
            entered_crit: new == Region::Crit,
            before,
            after: self.shared,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Source returning scripted values with protocol masses.
    struct Scripted {
        lotteries: Vec<u32>,
        rounds: Vec<u32>,
    }

    impl ChoiceSource for Scripted {
        fn lottery(&mut self, params: &ProtocolParams, _: u64) -> Result<Draw, ProtocolError> {
            let value = self.lotteries.remove(0);
            Ok(Draw { value, mass: params.lottery_mass(value) })
        }
        fn round_number(&mut self, s: &SystemState, _: u64) -> Result<Draw, ProtocolError> {
            Ok(Draw { value: self.rounds.remove(0), mass: Mass::new(1, u64::from(s.params.r)) })
        }
    }

    fn p(i: u32) -> Pid {
        Pid::new(i)
    }

    #[test]
    fn defaults() {
        let q = ProtocolParams::with_defaults(128, Variant::RabinOptimized).unwrap();
        assert_eq!((q.b, q.r), (11, 100));
        let q = ProtocolParams::with_defaults(1, Variant::RabinOptimized).unwrap();
        assert_eq!(q.b, 4);
        let q = ProtocolParams::with_defaults(5, Variant::BenOr).unwrap();
        assert_eq!((q.b, q.r, q.p1), (1, 2, Mass::new(1, 2)));
        assert_eq!(ceil_log2(1024), 10);
        assert_eq!(ceil_log2(1025), 11);
    }

    #[test]
    fn rejects_bad_params() {
        assert_eq!(ProtocolParams::new(0, 4, 4, Variant::RabinOptimized), Err(ParamError::NoProcesses));
        assert!(matches!(ProtocolParams::new(3, 4, 1, Variant::RabinOptimized), Err(ParamError::RoundRange(1))));
        assert!(matches!(ProtocolParams::new(3, 1, 4, Variant::RabinOptimized), Err(ParamError::LotterySize(1))));
        assert!(matches!(ProtocolParams::new(3, 63, 4, Variant::RabinOptimized), Err(ParamError::LotterySize(63))));
        assert!(ProtocolParams::new(3, 4, 4, Variant::BenOr).is_err());
    }

    #[test]
    fn lottery_masses_sum_to_one() {
        for b in [2, 3, 11, 62] {
            let q = ProtocolParams::new(2, b, 2, Variant::RabinOptimized).unwrap();
            let total = q.lottery_values().fold(Mass::from_integer(0), |a, l| a + q.lottery_mass(l));
            assert_eq!(total, Mass::from_integer(1));
        }
        assert_eq!(lottery_from_word(0b1000, 7), 4);
        assert_eq!(lottery_from_word(0, 7), 7);
        assert_eq!(lottery_from_word(1, 7), 1);
    }

    #[test]
    fn two_process_walkthrough() {
        let q = ProtocolParams::new(2, 4, 10, Variant::RabinOptimized).unwrap();
        let mut src = Scripted { lotteries: vec![2, 3], rounds: vec![7, 4] };
        let mut log = Vec::new();
        let mut s = SystemState::init(q, &mut src, &mut log).unwrap();
        assert_eq!(s.shared, SharedVariable { occupied: false, lottery: 0, round: 7 });

        let m = s.step(p(1), &mut src, &mut log).unwrap();
        assert_eq!(m.transition, Transition::new(p(1), Region::Rem, Region::Try));
        assert_eq!((m.redraw, m.drawn), (true, Some(2)));
        assert_eq!(s.local(p(1)).round, Some(7));

        s.step(p(2), &mut src, &mut log).unwrap();
        assert_eq!(s.shared.lottery, 3);

        // Outbid in the same round: keeps its value and waits.
        let m = s.step(p(1), &mut src, &mut log).unwrap();
        assert!(!m.redraw);
        assert_eq!(m.transition, Transition::new(p(1), Region::Try, Region::Try));

        let m = s.step(p(2), &mut src, &mut log).unwrap();
        assert!(m.transition.is_entry());
        assert_eq!(s.shared, SharedVariable { occupied: true, lottery: 0, round: 4 });
        assert_eq!(s.holder(), Some(p(2)));

        s.step(p(2), &mut src, &mut log).unwrap();
        assert!(s.shared.occupied);
        let m = s.step(p(2), &mut src, &mut log).unwrap();
        assert!(m.transition.is_release());
        assert!(!s.shared.occupied);
        assert_eq!(*s.local(p(2)), LocalState { region: Region::Rem, lottery: 0, round: None });
        assert_eq!(log.len(), 4);
        assert_eq!(s.steps, 6);
    }

    /// The new round number collides with the one process 1 still holds.
    fn collision_run(variant: Variant) -> (SystemState, StepMeta) {
        let q = ProtocolParams::new(2, 4, 10, variant).unwrap();
        let mut src = Scripted { lotteries: vec![2, 3, 1], rounds: vec![7, 7] };
        let mut log = Vec::new();
        let mut s = SystemState::init(q, &mut src, &mut log).unwrap();
        for i in [1, 2, 2] {
            s.step(p(i), &mut src, &mut log).unwrap();
        }
        assert_eq!(s.shared, SharedVariable { occupied: true, lottery: 0, round: 7 });
        let m = s.step(p(1), &mut src, &mut log).unwrap();
        (s, m)
    }

    #[test]
    fn optimized_redraws_stale_value_after_collision() {
        let (s, m) = collision_run(Variant::RabinOptimized);
        assert!(m.redraw);
        assert_eq!(s.local(p(1)).lottery, 1);
        assert_eq!(s.shared.lottery, 1);
    }

    #[test]
    fn deoptimized_keeps_stale_value_after_collision() {
        let (s, m) = collision_run(Variant::RabinDeoptimized);
        assert!(!m.redraw);
        assert_eq!(s.local(p(1)).lottery, 2);
        assert_eq!(s.shared.lottery, 0);
    }

    #[test]
    fn holder_cannot_be_rescheduled_into_try() {
        let q = ProtocolParams::new(1, 4, 10, Variant::RabinOptimized).unwrap();
        let mut src = Scripted { lotteries: vec![1], rounds: vec![0, 5] };
        let mut log = Vec::new();
        let mut s = SystemState::init(q, &mut src, &mut log).unwrap();
        s.step(p(1), &mut src, &mut log).unwrap();
        let m = s.step(p(1), &mut src, &mut log).unwrap();
        assert!(m.transition.is_entry());
        let m = s.step(p(1), &mut src, &mut log).unwrap();
        assert_eq!((m.transition.old, m.transition.new), (Region::Crit, Region::Exit));
        assert!(matches!(s.step(p(2), &mut src, &mut log), Err(ProtocolError::UnknownPid { .. })));
    }

    #[test]
    fn replay_reproduces_run() {
        let q = ProtocolParams::with_defaults(3, Variant::RabinOptimized).unwrap();
        let mut src = RngSource::from_seed(11);
        let mut log = Vec::new();
        let mut s = SystemState::init(q.clone(), &mut src, &mut log).unwrap();
        let sched = [1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3];
        let metas: Vec<_> = sched.iter().map(|&i| s.step(p(i), &mut src, &mut log).unwrap()).collect();

        let mut rep = ReplaySource::new(log.clone());
        let mut log2 = Vec::new();
        let mut s2 = SystemState::init(q, &mut rep, &mut log2).unwrap();
        let metas2: Vec<_> = sched.iter().map(|&i| s2.step(p(i), &mut rep, &mut log2).unwrap()).collect();
        assert_eq!(metas, metas2);
        assert_eq!(s, s2);
        assert_eq!(log, log2);
        assert_eq!(rep.remaining(), 0);
    }
}
