//! Depth-first enumeration of the protocol's choice tree.
//!
//! Lottery draws branch over the whole support. Round-number draws branch
//! over equality patterns: one branch per value still stored somewhere and
//! one "fresh" branch for everything else, which is sound because the
//! protocol only ever compares round numbers for equality.

use num_bigint::BigInt;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use super::{ExperimentError, ExperimentSpec, HaltAfterRounds};
use crate::adversary::{Adversary, Decision};
use crate::engine::{adversary_rng, ExecutionTrace, Simulation, StopReason};
use crate::protocol::{ChoiceSource, Draw, Mass, ProtocolError, ProtocolParams, SystemState};
use crate::scalar::Rational;
use crate::trace::TraceView;

/// Exact `P[target | condition]` over the full tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactResult {
    #[serde(with = "rational_str")]
    pub probability: Rational,
    pub leaves: u64,
    /// `P[condition]`.
    #[serde(with = "rational_str")]
    pub conditioning_mass: Rational,
    /// `P[condition and target]`.
    #[serde(with = "rational_str")]
    pub joint_mass: Rational,
    /// Sum over all leaves; exactly one for a complete enumeration.
    #[serde(with = "rational_str")]
    pub total_mass: Rational,
}

mod rational_str {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::scalar::Rational;

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(r)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        String::deserialize(d)?.parse().map_err(|_| serde::de::Error::custom("bad rational"))
    }
}

/// One enumerated execution.
#[derive(Debug)]
pub struct Leaf<'a> {
    pub trace: &'a ExecutionTrace,
    pub view: &'a TraceView<'a>,
    pub mass: &'a Rational,
    pub condition: bool,
    pub target: bool,
}

fn to_rational(m: Mass) -> Rational {
    Rational::new(BigInt::from(*m.numer()), BigInt::from(*m.denom()))
}

/// Follows a forced path of branch indices, then always takes branch 0 and
/// records the arity of every branch point it passes.
struct Explorer {
    forced: Vec<u32>,
    taken: Vec<u32>,
    arity: Vec<u32>,
    mass: Rational,
}

impl Explorer {
    fn choose(&mut self, options: Vec<Draw>) -> Draw {
        let pos = self.taken.len();
        let idx = self.forced.get(pos).copied().unwrap_or(0);
        self.taken.push(idx);
        self.arity.push(options.len() as u32);
        let d = options[idx as usize];
        let m = std::mem::replace(&mut self.mass, Rational::from_integer(0));
        self.mass = m * to_rational(d.mass);
        d
    }
}

impl ChoiceSource for Explorer {
    fn lottery(&mut self, params: &ProtocolParams, _step: u64) -> Result<Draw, ProtocolError> {
        let options: Vec<Draw> = params
            .lottery_values()
            .map(|value| Draw { value, mass: params.lottery_mass(value) })
            .filter(|d| *d.mass.numer() > 0)
            .collect();
        Ok(self.choose(options))
    }

    fn round_number(&mut self, state: &SystemState, step: u64) -> Result<Draw, ProtocolError> {
        let r = u64::from(state.params.r);
        if step == 0 {
            return Ok(self.choose(vec![Draw { value: 0, mass: Mass::from_integer(1) }]));
        }
        let stored = state.stored_round_numbers();
        let mut options: Vec<Draw> =
            stored.iter().map(|&value| Draw { value, mass: Mass::new(1, r) }).collect();
        let d = stored.len() as u64;
        if d < r {
            let fresh = (0..).find(|v| !stored.contains(v)).expect("finitely many stored values");
            options.push(Draw { value: fresh, mass: Mass::new(r - d, r) });
        }
        Ok(self.choose(options))
    }
}

/// Visits every leaf of the tree.
pub fn enumerate_with(spec: &ExperimentSpec, visit: impl FnMut(&Leaf<'_>)) -> Result<ExactResult, ExperimentError> {
    enumerate_with_adversary(spec, || Ok(spec.adversary.build(spec.params.n)?), visit)
}

/// [`enumerate_with`] for an adversary that is not in the catalog; `make`
/// must return a fresh copy on every call. `spec.adversary` is ignored.
pub fn enumerate_with_adversary<F>(
    spec: &ExperimentSpec,
    make: F,
    mut visit: impl FnMut(&Leaf<'_>),
) -> Result<ExactResult, ExperimentError>
where
    F: Fn() -> Result<Box<dyn Adversary>, ExperimentError>,
{
    let build = || -> Result<Box<dyn Adversary>, ExperimentError> {
        let inner = make()?;
        Ok(match spec.stop_after_rounds {
            Some(k) => Box::new(HaltAfterRounds::new(inner, spec.params.n, k)),
            None => inner,
        })
    };
    let probe = build()?;
    if !probe.deterministic() {
        return Err(ExperimentError::NonDeterministic(probe.name().to_string()));
    }
    let prefix = spec.condition.required_prefix().map(<[_]>::to_vec);
    let mut path: Vec<u32> = Vec::new();
    let zero = Rational::from_integer(0);
    let (mut cond, mut joint, mut total) = (zero.clone(), zero.clone(), zero);
    let mut leaves = 0u64;
    loop {
        leaves += 1;
        if leaves > spec.leaf_cap {
            return Err(ExperimentError::TreeTooLarge { cap: spec.leaf_cap });
        }
        let src = Explorer { forced: path, taken: Vec::new(), arity: Vec::new(), mass: Rational::from_integer(1) };
        let mut sim = Simulation::with_source(spec.params.clone(), src)?;
        let mut adv = build()?;
        let mut rng = adversary_rng(0);
        let stop = loop {
            if sim.run().len() as u64 >= spec.horizon {
                break StopReason::Horizon;
            }
            if let Some(p) = &prefix {
                let t = sim.run().len();
                if t > 0 && t <= p.len() && sim.run()[t - 1] != p[t - 1] {
                    // Diverged from the required prefix; nothing below can match.
                    break StopReason::Halted;
                }
            }
            match adv.next(sim.run(), &mut rng) {
                Decision::Halt => {
                    if let Some(reason) = adv.failure() {
                        return Err(crate::engine::EngineError::Adversary { name: adv.name().into(), reason }.into());
                    }
                    break StopReason::Halted;
                }
                Decision::Step(p) => {
                    sim.step(p)?;
                }
            }
        };
        let (trace, src) = sim.finish_with_source(stop);
        let view = TraceView::new(&trace)?;
        let c = spec.condition.eval(&view);
        let t = c && spec.target.eval(&view);
        visit(&Leaf { trace: &trace, view: &view, mass: &src.mass, condition: c, target: t });
        total = total + src.mass.clone();
        if c {
            cond = cond + src.mass.clone();
            if t {
                joint = joint + src.mass.clone();
            }
        }
        // Advance to the next unexplored sibling.
        let mut next = None;
        for j in (0..src.taken.len()).rev() {
            if src.taken[j] + 1 < src.arity[j] {
                next = Some(j);
                break;
            }
        }
        match next {
            Some(j) => {
                let mut p = src.taken[..j].to_vec();
                p.push(src.taken[j] + 1);
                path = p;
            }
            None => break,
        }
    }
    let probability = if cond.is_zero() { Rational::from_integer(0) } else { joint.clone() / cond.clone() };
    Ok(ExactResult { probability, leaves, conditioning_mass: cond, joint_mass: joint, total_mass: total })
}

/// Exact conditional probability; fails on a null condition.
pub fn enumerate_exact(spec: &ExperimentSpec) -> Result<ExactResult, ExperimentError> {
    let r = enumerate_with(spec, |_| {})?;
    if r.conditioning_mass.is_zero() {
        return Err(ExperimentError::NullCondition);
    }
    Ok(r)
}
