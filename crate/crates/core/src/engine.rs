//! Stepping a configuration under an adversary and recording what happened.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{Adversary, AdversaryRng, Decision};
use crate::protocol::{
    ChoiceLog, ChoiceSource, Pid, ProtocolError, ProtocolParams, RngSource, StepMeta, SystemState,
    Transition,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("adversary `{name}` failed: {reason}")]
    Adversary { name: String, reason: String },
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// The adversary returned `Halt`.
    Halted,
    /// The step budget ran out first.
    Horizon,
    /// A fixed schedule was exhausted.
    Schedule,
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub params: ProtocolParams,
    pub seed: Option<u64>,
    pub run: Vec<Transition>,
    pub steps: Vec<StepMeta>,
    pub choices: ChoiceLog,
    pub final_state: SystemState,
    pub stop: StopReason,
}

impl ExecutionTrace {
    pub fn len(&self) -> usize {
        self.run.len()
    }

    pub fn is_empty(&self) -> bool {
        self.run.is_empty()
    }
}

/// A configuration plus its recorded history.
#[derive(Clone, Debug)]
pub struct Simulation<S: ChoiceSource = RngSource> {
    state: SystemState,
    run: Vec<Transition>,
    steps: Vec<StepMeta>,
    choices: ChoiceLog,
    source: S,
    seed: Option<u64>,
}

impl Simulation<RngSource> {
    /// Monte Carlo simulation with protocol randomness derived from `seed`.
    pub fn new(params: ProtocolParams, seed: u64) -> Result<Self, ProtocolError> {
        let mut sim = Simulation::with_source(params, RngSource::from_seed(seed))?;
        sim.seed = Some(seed);
        Ok(sim)
    }
}

impl<S: ChoiceSource> Simulation<S> {
    pub fn with_source(params: ProtocolParams, mut source: S) -> Result<Self, ProtocolError> {
        let mut choices = Vec::new();
        let state = SystemState::init(params, &mut source, &mut choices)?;
        Ok(Simulation { state, run: Vec::new(), steps: Vec::new(), choices, source, seed: None })
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn run(&self) -> &[Transition] {
        &self.run
    }

    pub fn steps(&self) -> &[StepMeta] {
        &self.steps
    }

    pub fn choices(&self) -> &ChoiceLog {
        &self.choices
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn step(&mut self, pid: Pid) -> Result<&StepMeta, ProtocolError> {
        let meta = self.state.step(pid, &mut self.source, &mut self.choices)?;
        self.run.push(meta.transition);
        self.steps.push(meta);
        Ok(self.steps.last().expect("just pushed"))
    }

    pub fn run_schedule(&mut self, pids: &[Pid]) -> Result<(), ProtocolError> {
        for &p in pids {
            self.step(p)?;
        }
        Ok(())
    }

    pub fn finish(self, stop: StopReason) -> ExecutionTrace {
        self.finish_with_source(stop).0
    }

    /// [`finish`](Self::finish), handing the choice source back as well.
    pub fn finish_with_source(self, stop: StopReason) -> (ExecutionTrace, S) {
        let trace = ExecutionTrace {
            params: self.state.params.clone(),
            seed: self.seed,
            run: self.run,
            steps: self.steps,
            choices: self.choices,
            final_state: self.state,
            stop,
        };
        (trace, self.source)
    }
}

/// Runs `adversary` until it halts or `horizon` steps have been taken.
pub fn drive<S, A>(
    sim: &mut Simulation<S>,
    adversary: &mut A,
    rng: &mut AdversaryRng,
    horizon: u64,
) -> Result<StopReason, EngineError>
where
    S: ChoiceSource,
    A: Adversary + ?Sized,
{
    drive_observed(sim, adversary, rng, horizon, |_, _| {})
}

/// [`drive`] with a callback after every step.
pub fn drive_observed<S, A, F>(
    sim: &mut Simulation<S>,
    adversary: &mut A,
    rng: &mut AdversaryRng,
    horizon: u64,
    mut observe: F,
) -> Result<StopReason, EngineError>
where
    S: ChoiceSource,
    A: Adversary + ?Sized,
    F: FnMut(&Simulation<S>, &A),
{
    loop {
        if sim.run.len() as u64 >= horizon {
            return Ok(StopReason::Horizon);
        }
        match adversary.next(&sim.run, rng) {
            Decision::Halt => {
                if let Some(reason) = adversary.failure() {
                    return Err(EngineError::Adversary { name: adversary.name().to_string(), reason });
                }
                return Ok(StopReason::Halted);
            }
            Decision::Step(p) => {
                sim.step(p)?;
                observe(sim, adversary);
            }
        }
    }
}

/// Seed of trial `index` under master seed `master` (splitmix64 of both).
pub fn trial_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Adversary randomness for a trial seed; a different stream from the protocol's.
pub fn adversary_rng(seed: u64) -> AdversaryRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::RoundRobin;
    use crate::protocol::{ReplaySource, Variant};

    #[test]
    fn horizon_stops_round_robin() {
        let q = ProtocolParams::with_defaults(3, Variant::RabinOptimized).unwrap();
        let mut sim = Simulation::new(q, 5).unwrap();
        let mut adv = RoundRobin::new(3);
        let stop = drive(&mut sim, &mut adv, &mut adversary_rng(5), 40).unwrap();
        assert_eq!(stop, StopReason::Horizon);
        assert_eq!(sim.run().len(), 40);
    }

    #[test]
    fn trace_replays_from_choice_log() {
        let q = ProtocolParams::with_defaults(4, Variant::RabinDeoptimized).unwrap();
        let mut sim = Simulation::new(q.clone(), 99).unwrap();
        drive(&mut sim, &mut RoundRobin::new(4), &mut adversary_rng(99), 200).unwrap();
        let trace = sim.finish(StopReason::Horizon);

        let mut again = Simulation::with_source(q, ReplaySource::new(trace.choices.clone())).unwrap();
        let pids: Vec<Pid> = trace.run.iter().map(|t| t.pid).collect();
        again.run_schedule(&pids).unwrap();
        assert_eq!(again.steps(), &trace.steps[..]);
        assert_eq!(again.state(), &trace.final_state);
    }

    #[test]
    fn trial_seeds_differ() {
        let a = trial_seed(1, 0);
        let b = trial_seed(1, 1);
        let c = trial_seed(2, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(trial_seed(1, 0), a);
    }
}
