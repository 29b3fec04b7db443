use std::collections::BTreeMap;

use super::{Adversary, AdversaryError, AdversaryRng, Decision, RunObserver};
use crate::protocol::{Pid, Transition};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptOp {
    Step(Pid),
    /// Step the Crit/Exit holder until the section is free; no-op if free.
    DriveHolderOut,
    /// Cycle through the pids until `k` rounds have completed.
    UntilRound(u32, Vec<Pid>),
}

/// A fixed schedule, optionally handing over to another adversary at the end.
pub struct Script {
    name: &'static str,
    ops: Vec<ScriptOp>,
    pos: usize,
    cycle: usize,
    obs: RunObserver,
    then: Option<Box<dyn Adversary>>,
}

impl std::fmt::Debug for Script {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Script").field("name", &self.name).field("ops", &self.ops).field("pos", &self.pos).finish()
    }
}

impl Script {
    pub fn new(name: &'static str, n: u32, ops: Vec<ScriptOp>) -> Self {
        Script { name, ops, pos: 0, cycle: 0, obs: RunObserver::new(n), then: None }
    }

    /// Adversary that takes over once the script is exhausted.
    pub fn then(mut self, next: Option<Box<dyn Adversary>>) -> Self {
        self.then = next;
        self
    }

    pub fn ops(&self) -> &[ScriptOp] {
        &self.ops
    }

    /// Number of explicit steps (excluding drive-outs and cycles).
    pub fn fixed_steps(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, ScriptOp::Step(_))).count()
    }
}

fn steps(pids: &[u32]) -> impl Iterator<Item = ScriptOp> + '_ {
    pids.iter().map(|&p| ScriptOp::Step(Pid::new(p)))
}

/// 2,1,1,3,3,4,4 in round 1; free the section; 5,3,3; stop.
pub fn inference_script(n: u32) -> Result<Script, AdversaryError> {
    if n < 5 {
        return Err(AdversaryError::TooFewProcesses { adversary: "inference-script".into(), need: 5, n });
    }
    let mut ops: Vec<ScriptOp> = steps(&[2, 1, 1, 3, 3, 4, 4]).collect();
    ops.push(ScriptOp::DriveHolderOut);
    ops.extend(steps(&[5, 3, 3]));
    Ok(Script::new("inference-script", n, ops))
}

/// 1,2,2,3,3; free; 4,1,1,5,5; free; 6,4,4 then 2,2; round robin until the
/// third round completes; stop.
pub fn ben_or_lockout_script(n: u32) -> Result<Script, AdversaryError> {
    if n < 6 {
        return Err(AdversaryError::TooFewProcesses { adversary: "ben-or-lockout".into(), need: 6, n });
    }
    let mut ops: Vec<ScriptOp> = steps(&[1, 2, 2, 3, 3]).collect();
    ops.push(ScriptOp::DriveHolderOut);
    ops.extend(steps(&[4, 1, 1, 5, 5]));
    ops.push(ScriptOp::DriveHolderOut);
    ops.extend(steps(&[6, 4, 4, 2, 2]));
    ops.push(ScriptOp::UntilRound(3, (1..=n).map(Pid::new).collect()));
    Ok(Script::new("ben-or-lockout", n, ops))
}

impl Adversary for Script {
    fn name(&self) -> &'static str {
        self.name
    }

    fn params(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        if let Some(t) = &self.then {
            m.insert("then".to_string(), t.name().to_string());
        }
        m
    }

    fn deterministic(&self) -> bool {
        self.then.as_ref().map_or(true, |t| t.deterministic())
    }

    fn next(&mut self, run: &[Transition], rng: &mut AdversaryRng) -> Decision {
        self.obs.sync(run);
        while let Some(op) = self.ops.get(self.pos) {
            match op {
                ScriptOp::Step(p) => {
                    self.pos += 1;
                    return Decision::Step(*p);
                }
                ScriptOp::DriveHolderOut => match self.obs.holder() {
                    Some(h) => return Decision::Step(h),
                    None => self.pos += 1,
                },
                ScriptOp::UntilRound(k, pids) => {
                    if self.obs.completed_rounds() >= *k || pids.is_empty() {
                        self.pos += 1;
                        self.cycle = 0;
                    } else {
                        self.cycle += 1;
                        return Decision::Step(pids[(self.cycle - 1) % pids.len()]);
                    }
                }
            }
        }
        match self.then.as_mut() {
            Some(t) => t.next(run, rng),
            None => Decision::Halt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::RoundRobin;
    use crate::engine::{adversary_rng, drive, Simulation, StopReason};
    use crate::protocol::{ProtocolParams, Variant};
    use crate::trace::rounds;

    fn schedule(sim_seed: u64, mut script: Script, params: ProtocolParams) -> (Vec<u32>, StopReason) {
        let mut sim = Simulation::new(params, sim_seed).unwrap();
        let stop = drive(&mut sim, &mut script, &mut adversary_rng(0), 10_000).unwrap();
        (sim.run().iter().map(|t| t.pid.get()).collect(), stop)
    }

    #[test]
    fn inference_opening_and_halt() {
        let q = ProtocolParams::new(5, 7, 100, Variant::RabinOptimized).unwrap();
        let (pids, stop) = schedule(4, inference_script(5).unwrap(), q);
        assert_eq!(&pids[..7], &[2, 1, 1, 3, 3, 4, 4]);
        assert_eq!(&pids[pids.len() - 3..], &[5, 3, 3]);
        assert_eq!(stop, StopReason::Halted);
        assert!(inference_script(4).is_err());
    }

    #[test]
    fn ben_or_script_completes_three_rounds() {
        let q = ProtocolParams::with_defaults(6, Variant::BenOr).unwrap();
        for seed in 0..30 {
            let mut sim = Simulation::new(q.clone(), seed).unwrap();
            let mut s = ben_or_lockout_script(6).unwrap();
            assert!(s.deterministic());
            let stop = drive(&mut sim, &mut s, &mut adversary_rng(0), 10_000).unwrap();
            assert_eq!(stop, StopReason::Halted);
            let pids: Vec<u32> = sim.run().iter().map(|t| t.pid.get()).collect();
            assert_eq!(&pids[..5], &[1, 2, 2, 3, 3]);
            assert!(rounds(sim.run()).unwrap().completed() >= 3);
        }
    }

    #[test]
    fn continuation_takes_over() {
        let q = ProtocolParams::new(5, 7, 100, Variant::RabinOptimized).unwrap();
        let mut s = inference_script(5).unwrap().then(Some(Box::new(RoundRobin::new(5))));
        let mut sim = Simulation::new(q, 1).unwrap();
        let stop = drive(&mut sim, &mut s, &mut adversary_rng(0), 300).unwrap();
        assert_eq!(stop, StopReason::Horizon);
    }
}
