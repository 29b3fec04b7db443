use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adversary, AdversaryRng, Decision, RunObserver};
use crate::protocol::{Pid, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    /// Round 1 starts free; plain round robin over everybody.
    Warmup(u32),
    PreFree(usize),
    DriveOut,
    HolderFirst,
    Passes,
    Done,
}

/// Lets every member of `set` step once while the section is occupied, frees
/// the section, then schedules the members in random passes until someone
/// enters. A member that held the section steps first after its release.
#[derive(Clone, Debug)]
pub struct RestrictedRandom {
    n: u32,
    set: Vec<Pid>,
    seed: Option<u64>,
    own_rng: Option<ChaCha8Rng>,
    halt_after: Option<u32>,
    obs: RunObserver,
    phase: Phase,
    rounds_seen: u32,
    prev_holder: Option<Pid>,
    pass: Vec<Pid>,
    pos: usize,
}

impl RestrictedRandom {
    /// `seed = Some(_)` fixes the pass order and makes the policy deterministic;
    /// `None` draws it from the adversary stream.
    pub fn new(n: u32, mut set: Vec<Pid>, seed: Option<u64>) -> Self {
        set.sort_unstable();
        set.dedup();
        RestrictedRandom {
            n,
            set,
            seed,
            own_rng: seed.map(ChaCha8Rng::seed_from_u64),
            halt_after: None,
            obs: RunObserver::new(n),
            phase: Phase::Warmup(0),
            rounds_seen: 0,
            prev_holder: None,
            pass: Vec::new(),
            pos: 0,
        }
    }

    /// Halt once `rounds` rounds have completed.
    pub fn halt_after(mut self, rounds: u32) -> Self {
        self.halt_after = Some(rounds);
        self
    }

    pub fn set(&self) -> &[Pid] {
        &self.set
    }

    fn holder_in_set(&self) -> Option<Pid> {
        self.prev_holder.filter(|h| self.set.binary_search(h).is_ok())
    }
}

impl Adversary for RestrictedRandom {
    fn name(&self) -> &'static str {
        "restricted-random"
    }

    fn params(&self) -> BTreeMap<String, String> {
        let set: Vec<String> = self.set.iter().map(|p| p.to_string()).collect();
        let mut m = BTreeMap::from([("set".to_string(), set.join(","))]);
        if let Some(s) = self.seed {
            m.insert("seed".into(), s.to_string());
        }
        if let Some(r) = self.halt_after {
            m.insert("rounds".into(), r.to_string());
        }
        m
    }

    fn deterministic(&self) -> bool {
        self.seed.is_some()
    }

    fn next(&mut self, run: &[Transition], rng: &mut AdversaryRng) -> Decision {
        self.obs.sync(run);
        if self.obs.completed_rounds() != self.rounds_seen {
            self.rounds_seen = self.obs.completed_rounds();
            self.prev_holder = self.obs.holder();
            self.phase = if self.halt_after.is_some_and(|k| self.rounds_seen >= k) {
                Phase::Done
            } else {
                Phase::PreFree(0)
            };
        }
        loop {
            match self.phase {
                Phase::Done => return Decision::Halt,
                Phase::Warmup(i) => {
                    self.phase = Phase::Warmup(i + 1);
                    return Decision::Step(Pid::new(i % self.n + 1));
                }
                Phase::PreFree(i) => {
                    match self.set.get(i) {
                        Some(&p) => {
                            self.phase = Phase::PreFree(i + 1);
                            if Some(p) != self.obs.holder() {
                                return Decision::Step(p);
                            }
                        }
                        None => self.phase = Phase::DriveOut,
                    }
                }
                Phase::DriveOut => match self.obs.holder() {
                    Some(h) => return Decision::Step(h),
                    None => self.phase = Phase::HolderFirst,
                },
                Phase::HolderFirst => {
                    self.phase = Phase::Passes;
                    self.pos = self.pass.len();
                    if let Some(h) = self.holder_in_set() {
                        return Decision::Step(h);
                    }
                }
                Phase::Passes => {
                    if self.set.is_empty() {
                        return Decision::Halt;
                    }
                    if self.pos >= self.pass.len() {
                        self.pass.clone_from(&self.set);
                        match self.own_rng.as_mut() {
                            Some(own) => self.pass.shuffle(own),
                            None => self.pass.shuffle(rng),
                        }
                        self.pos = 0;
                    }
                    self.pos += 1;
                    return Decision::Step(self.pass[self.pos - 1]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::is_restricted;
    use crate::engine::{adversary_rng, drive, Simulation};
    use crate::protocol::{ProtocolParams, Variant};
    use crate::trace::rounds;

    #[test]
    fn every_member_steps_before_the_release() {
        for seed in 0..40 {
            let q = ProtocolParams::with_defaults(6, Variant::RabinDeoptimized).unwrap();
            let mut sim = Simulation::new(q, seed).unwrap();
            let set: Vec<Pid> = (1..=6).map(Pid::new).collect();
            let mut adv = RestrictedRandom::new(6, set, None).halt_after(6);
            drive(&mut sim, &mut adv, &mut adversary_rng(seed), 5000).unwrap();
            assert!(is_restricted(sim.run()).unwrap(), "seed {seed}");
            let s = rounds(sim.run()).unwrap();
            for r in s.rounds.iter().skip(1) {
                let before_free = &sim.run()[r.t_start as usize..r.f_k as usize];
                let stepped: std::collections::BTreeSet<Pid> =
                    before_free.iter().filter(|t| t.is_try_step()).map(|t| t.pid).collect();
                let prev = s.get(r.k - 1).unwrap().winner;
                for p in (1..=6).map(Pid::new).filter(|&p| p != prev) {
                    assert!(stepped.contains(&p), "{r}: {p} missing");
                }
            }
        }
    }

    #[test]
    fn non_members_never_scheduled_after_warmup() {
        let q = ProtocolParams::with_defaults(5, Variant::RabinOptimized).unwrap();
        let mut sim = Simulation::new(q, 3).unwrap();
        let set = vec![Pid::new(4), Pid::new(5)];
        let mut adv = RestrictedRandom::new(5, set, Some(9)).halt_after(5);
        assert!(adv.deterministic());
        drive(&mut sim, &mut adv, &mut adversary_rng(3), 5000).unwrap();
        let s = rounds(sim.run()).unwrap();
        let first_end = s.rounds[0].t_end as usize;
        let round1_winner = s.rounds[0].winner;
        for t in &sim.run()[first_end..] {
            assert!(t.pid.get() >= 4 || t.pid == round1_winner);
        }
    }
}
