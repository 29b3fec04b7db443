//! Conditional probabilities of trace events: Monte Carlo with rejection
//! sampling, exact enumeration of the choice tree, and canned scenarios.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{Adversary, AdversaryError, AdversaryRng, AdversarySpec, Decision, RunObserver};
use crate::engine::{adversary_rng, drive, EngineError, ExecutionTrace, Simulation};
use crate::protocol::{ProtocolError, ProtocolParams, Transition};
use crate::trace::TraceError;

mod events;
mod exact;
mod montecarlo;
pub mod suite;

pub use events::{Event, EventParseError, EVENT_SYNTAX};
pub use exact::{enumerate_exact, enumerate_with, enumerate_with_adversary, ExactResult, Leaf};
pub use montecarlo::{compare_adversaries, estimate, estimate_many, estimate_pairs, wilson, Comparison, EstimateResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Montecarlo,
    Exact,
}

/// A conditional probability query `P[target | condition]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub params: ProtocolParams,
    pub adversary: AdversarySpec,
    /// Step budget per trace.
    pub horizon: u64,
    /// Stop each trace once this many rounds have completed.
    #[serde(default)]
    pub stop_after_rounds: Option<u32>,
    pub condition: Event,
    pub target: Event,
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Thread count for Monte Carlo; never changes the result.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Maximum number of enumerated leaves.
    #[serde(default = "default_leaf_cap")]
    pub leaf_cap: u64,
}

fn default_leaf_cap() -> u64 {
    5_000_000
}

impl ExperimentSpec {
    pub fn new(params: ProtocolParams, adversary: AdversarySpec, condition: Event, target: Event) -> Self {
        ExperimentSpec {
            params,
            adversary,
            horizon: 10_000,
            stop_after_rounds: None,
            condition,
            target,
            trials: 10_000,
            seed: 0,
            mode: Mode::Montecarlo,
            workers: None,
            leaf_cap: default_leaf_cap(),
        }
    }

    pub fn horizon(mut self, h: u64) -> Self {
        self.horizon = h;
        self
    }

    pub fn stop_after(mut self, rounds: u32) -> Self {
        self.stop_after_rounds = Some(rounds);
        self
    }

    pub fn trials(mut self, t: u64) -> Self {
        self.trials = t;
        self
    }

    pub fn seed(mut self, s: u64) -> Self {
        self.seed = s;
        self
    }

    pub fn mode(mut self, m: Mode) -> Self {
        self.mode = m;
        self
    }

    pub fn workers(mut self, w: Option<usize>) -> Self {
        self.workers = w;
        self
    }

    pub fn leaf_cap(mut self, cap: u64) -> Self {
        self.leaf_cap = cap;
        self
    }

    pub fn build_adversary(&self) -> Result<Box<dyn Adversary>, ExperimentError> {
        let inner = self.adversary.build(self.params.n)?;
        Ok(match self.stop_after_rounds {
            Some(k) => Box::new(HaltAfterRounds::new(inner, self.params.n, k)),
            None => inner,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("no trial satisfied the condition ({trials} trials)")]
    NoAcceptedTrials { trials: u64 },
    #[error("the condition has probability zero")]
    NullCondition,
    #[error("exact enumeration needs a deterministic adversary; `{0}` is randomized")]
    NonDeterministic(String),
    #[error("enumeration exceeded {cap} leaves")]
    TreeTooLarge { cap: u64 },
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("{0}")]
    Invalid(String),
}

/// Wraps an adversary and halts it once `k` rounds have completed.
pub struct HaltAfterRounds<A> {
    inner: A,
    k: u32,
    obs: RunObserver,
}

impl<A: Adversary> HaltAfterRounds<A> {
    pub fn new(inner: A, n: u32, k: u32) -> Self {
        HaltAfterRounds { inner, k, obs: RunObserver::new(n) }
    }
}

impl<A: Adversary> Adversary for HaltAfterRounds<A> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn params(&self) -> BTreeMap<String, String> {
        let mut p = self.inner.params();
        p.insert("halt-after-rounds".into(), self.k.to_string());
        p
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }

    fn next(&mut self, run: &[Transition], rng: &mut AdversaryRng) -> Decision {
        self.obs.sync(run);
        if self.obs.completed_rounds() >= self.k {
            return Decision::Halt;
        }
        self.inner.next(run, rng)
    }

    fn failure(&self) -> Option<String> {
        self.inner.failure()
    }
}

/// One Monte Carlo trace: protocol stream and adversary stream both keyed by `seed`.
pub fn run_trial<A: Adversary + ?Sized>(
    params: &ProtocolParams,
    adversary: &mut A,
    horizon: u64,
    seed: u64,
) -> Result<ExecutionTrace, ExperimentError> {
    let mut sim = Simulation::new(params.clone(), seed)?;
    let stop = drive(&mut sim, adversary, &mut adversary_rng(seed), horizon)?;
    Ok(sim.finish(stop))
}

/// [`run_trial`] with the adversary built from `spec`.
pub fn run_spec_trial(spec: &ExperimentSpec, seed: u64) -> Result<ExecutionTrace, ExperimentError> {
    let mut adv = spec.build_adversary()?;
    run_trial(&spec.params, &mut adv, spec.horizon, seed)
}
