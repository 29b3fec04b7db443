use std::collections::BTreeMap;

use super::{Adversary, AdversaryRng, Decision, RunObserver};
use crate::protocol::{Pid, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    /// Round 1: the last pid runs alone until it enters.
    Warmup,
    PokeTarget,
    DriveOut,
    TargetFirst,
    Order(usize),
    TargetLast,
    Fallback(usize),
}

/// Each round: the target steps once while the section is occupied, the
/// holder is driven out, then every pid of `order` steps twice, then the
/// target once more. The target can then only win when every other process
/// drew below it.
#[derive(Clone, Debug)]
pub struct OrderedLockout {
    n: u32,
    target: Pid,
    order: Vec<Pid>,
    obs: RunObserver,
    phase: Phase,
    rounds_seen: u32,
    target_stepped_first: bool,
}

impl OrderedLockout {
    pub fn new(n: u32) -> Self {
        Self::with_order(n, (2..=n).map(Pid::new).collect())
    }

    pub fn with_order(n: u32, order: Vec<Pid>) -> Self {
        assert!(n >= 1);
        OrderedLockout {
            n,
            target: Pid::new(1),
            order,
            obs: RunObserver::new(n),
            phase: Phase::Warmup,
            rounds_seen: 0,
            target_stepped_first: false,
        }
    }

    fn cycle(&self) -> Vec<Pid> {
        let mut v = vec![self.target];
        v.extend(self.order.iter().copied().filter(|&p| p != self.target));
        v
    }
}

impl Adversary for OrderedLockout {
    fn name(&self) -> &'static str {
        "ordered-lockout"
    }

    fn params(&self) -> BTreeMap<String, String> {
        let order: Vec<String> = self.order.iter().map(|p| p.to_string()).collect();
        BTreeMap::from([("order".to_string(), order.join(","))])
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn next(&mut self, run: &[Transition], _rng: &mut AdversaryRng) -> Decision {
        self.obs.sync(run);
        if self.obs.completed_rounds() != self.rounds_seen {
            self.rounds_seen = self.obs.completed_rounds();
            // The holder cannot take a Try-step, so a winning target goes first after the free.
            self.target_stepped_first = self.obs.holder() == Some(self.target);
            self.phase = if self.target_stepped_first { Phase::DriveOut } else { Phase::PokeTarget };
        }
        loop {
            match self.phase {
                Phase::Warmup => return Decision::Step(Pid::new(self.n)),
                Phase::PokeTarget => {
                    self.phase = Phase::DriveOut;
                    return Decision::Step(self.target);
                }
                Phase::DriveOut => match self.obs.holder() {
                    Some(h) => return Decision::Step(h),
                    None => {
                        self.phase = if self.target_stepped_first { Phase::TargetFirst } else { Phase::Order(0) }
                    }
                },
                Phase::TargetFirst => {
                    self.phase = Phase::Order(0);
                    return Decision::Step(self.target);
                }
                Phase::Order(i) => {
                    if i >= 2 * self.order.len() {
                        self.phase =
                            if self.target_stepped_first { Phase::Fallback(0) } else { Phase::TargetLast };
                    } else {
                        self.phase = Phase::Order(i + 1);
                        return Decision::Step(self.order[i / 2]);
                    }
                }
                Phase::TargetLast => {
                    self.phase = Phase::Fallback(0);
                    return Decision::Step(self.target);
                }
                Phase::Fallback(i) => {
                    let cycle = self.cycle();
                    self.phase = Phase::Fallback(i + 1);
                    return Decision::Step(cycle[i % cycle.len()]);
                }
            }
        }
    }
}
