//! Survivor selection.
//!
//! A survivor is a candidate that took one step in a fresh round, after which
//! `s` test processes each took two steps without anybody entering. Every
//! test that drew at least the running maximum would have entered at its
//! second step, so a survivor tends to hold a large lottery value. Stored
//! survivors get no further steps until the target round.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Adversary, AdversaryError, AdversaryRng, Decision, RunObserver};
use crate::engine::Simulation;
use crate::protocol::{ceil_log2, ChoiceSource, Pid, ProtocolError, Transition};
use crate::trace::crit_free;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivorConfig {
    /// `(s, count)` pairs, selected in this order.
    pub levels: Vec<(u32, u32)>,
    /// Steps between fairness pokes of stored survivors; `None` disables them.
    pub fairness_interval: Option<u64>,
    /// Consecutive collapses tolerated for one selection.
    pub max_retries: u64,
    pub target: Pid,
    /// Halt after the preparation phase instead of playing the target round.
    pub prep_only: bool,
}

impl SurvivorConfig {
    pub fn defaults(n: u32) -> Self {
        SurvivorConfig {
            levels: default_levels(n),
            fairness_interval: None,
            max_retries: 10_000,
            target: Pid::new(1),
            prep_only: false,
        }
    }
}

/// Levels `s = 2^(ceil(log2 n) + t)` for `t = -5..=-1`, with `floor(n/20)`
/// survivors each and `floor(6n/20)` at the top level, largest level first.
/// Counts are clipped so that every selection has enough test processes;
/// levels with `s < 1` or no survivors are dropped.
pub fn default_levels(n: u32) -> Vec<(u32, u32)> {
    let l = ceil_log2(u64::from(n.max(1))) as i32;
    let mut v: Vec<(u32, u32)> = (-5..=-1)
        .filter_map(|t| {
            let e = l + t;
            if e < 0 {
                return None;
            }
            let count = if t == -1 { 6 * n / 20 } else { n / 20 };
            (count > 0).then_some((1u32 << e, count))
        })
        .collect();
    v.sort_by(|a, b| b.0.cmp(&a.0));
    // Each selection needs `s + 1` unstored processes besides the target.
    let mut stored = 0u32;
    v.into_iter()
        .filter_map(|(s, count)| {
            let room = n.saturating_sub(1 + s + stored);
            let c = count.min(room);
            stored += c;
            (c > 0).then_some((s, c))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivorRecord {
    pub pid: Pid,
    /// Number of test processes used.
    pub level: u32,
    /// Round in which the selection happened.
    pub round: u32,
    pub tests: Vec<Pid>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SelectorEvent {
    Selected(SurvivorRecord),
    Collapsed { level: u32, entrant: Pid },
    /// A stored survivor was given steps again and left the store.
    Released(Pid),
    TargetRound(u32),
}

/// One selection attempt: candidate once, then each test twice in a row.
#[derive(Clone, Debug)]
struct Attempt {
    candidate: Pid,
    tests: Vec<Pid>,
    pos: usize,
}

impl Attempt {
    fn next_pid(&mut self) -> Option<Pid> {
        let p = match self.pos {
            0 => Some(self.candidate),
            i if i <= 2 * self.tests.len() => Some(self.tests[(i - 1) / 2]),
            _ => None,
        };
        self.pos += 1;
        p
    }

    fn level(&self) -> u32 {
        self.tests.len() as u32
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selection {
    Survivor(SurvivorRecord),
    /// A test process entered; it now holds the section.
    Collapse { entrant: Pid },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectError {
    #[error("selection needs a free section")]
    NotFree,
    #[error(transparent)]
    Pool(#[from] AdversaryError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Runs one selection attempt directly on a simulation: `candidate` steps
/// once, then `s` tests drawn from `pool` step twice each.
pub fn select_survivor<S: ChoiceSource>(
    sim: &mut Simulation<S>,
    candidate: Pid,
    s: u32,
    pool: &[Pid],
    rng: &mut AdversaryRng,
) -> Result<Selection, SelectError> {
    if !crit_free(sim.run()) {
        return Err(SelectError::NotFree);
    }
    let others: Vec<Pid> = pool.iter().copied().filter(|&p| p != candidate).collect();
    if others.len() < s as usize {
        return Err(AdversaryError::PoolTooSmall { s, need: s + 1, pool: others.len() as u32 + 1 }.into());
    }
    let tests: Vec<Pid> = index::sample(rng, others.len(), s as usize).into_iter().map(|i| others[i]).collect();
    let round = crate::trace::rounds(sim.run()).map(|r| r.completed() + 1).unwrap_or(1);
    let mut attempt = Attempt { candidate, tests, pos: 0 };
    while let Some(p) = attempt.next_pid() {
        if sim.step(p)?.entered_crit {
            return Ok(Selection::Collapse { entrant: p });
        }
    }
    Ok(Selection::Survivor(SurvivorRecord { pid: candidate, level: s, round, tests: attempt.tests }))
}

#[derive(Clone, Debug)]
enum Phase {
    Prep,
    Attempt(Attempt),
    /// Fresh pool processes step in pairs until one of them enters.
    Close { queue: Vec<Pid>, pos: usize },
    /// Round robin over non-stored processes until somebody enters.
    Unstick(usize),
    TargetPre { queue: Vec<Pid>, pos: usize },
    TargetDrive,
    TargetSurvivors { queue: Vec<Pid>, pos: usize },
    TargetFallback(usize),
    Done,
}

/// Preparation: store survivors level by level, each selection in a fresh
/// round that is closed again by an entry of a pool process. Target round:
/// every unselected process (the target included) steps while the section
/// is occupied, the holder is driven out, then stored survivors get two
/// passes.
#[derive(Clone, Debug)]
pub struct SurvivorSelector {
    n: u32,
    cfg: SurvivorConfig,
    obs: RunObserver,
    remaining: Vec<(u32, u32)>,
    stored: Vec<SurvivorRecord>,
    is_stored: Vec<bool>,
    phase: Phase,
    retries: u64,
    events: Vec<SelectorEvent>,
    failure: Option<String>,
    target_round: Option<u32>,
    last_poke: usize,
    pokes: Vec<Pid>,
}

impl SurvivorSelector {
    pub fn new(n: u32, cfg: SurvivorConfig) -> Result<Self, AdversaryError> {
        if cfg.target.get() > n {
            return Err(AdversaryError::BadPid { pid: cfg.target.get(), n });
        }
        let mut stored = 0u32;
        for &(s, count) in &cfg.levels {
            for _ in 0..count {
                let pool = n - 1 - stored;
                if pool < s + 1 {
                    return Err(AdversaryError::PoolTooSmall { s, need: s + 1, pool });
                }
                stored += 1;
            }
        }
        Ok(SurvivorSelector {
            n,
            remaining: cfg.levels.clone(),
            obs: RunObserver::new(n),
            stored: Vec::new(),
            is_stored: vec![false; n as usize],
            phase: Phase::Prep,
            retries: 0,
            events: Vec::new(),
            failure: None,
            target_round: None,
            last_poke: 0,
            pokes: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &SurvivorConfig {
        &self.cfg
    }

    pub fn survivors(&self) -> &[SurvivorRecord] {
        &self.stored
    }

    pub fn events(&self) -> &[SelectorEvent] {
        &self.events
    }

    /// Index of the target round once it has started.
    pub fn target_round(&self) -> Option<u32> {
        self.target_round
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done)
    }

    fn next_level(&self) -> Option<u32> {
        self.remaining.iter().find(|(_, c)| *c > 0).map(|(s, _)| *s)
    }

    fn pool(&self) -> Vec<Pid> {
        (1..=self.n)
            .map(Pid::new)
            .filter(|&p| p != self.cfg.target && !self.is_stored[p.index()] && Some(p) != self.obs.holder())
            .collect()
    }

    fn store(&mut self, rec: SurvivorRecord) {
        if let Some(slot) = self.remaining.iter_mut().find(|(s, c)| *s == rec.level && *c > 0) {
            slot.1 -= 1;
        }
        self.is_stored[rec.pid.index()] = true;
        self.events.push(SelectorEvent::Selected(rec.clone()));
        self.stored.push(rec);
    }

    fn unstore(&mut self, pid: Pid) {
        if let Some(i) = self.stored.iter().position(|r| r.pid == pid) {
            let rec = self.stored.remove(i);
            self.is_stored[pid.index()] = false;
            if let Some(slot) = self.remaining.iter_mut().find(|(s, _)| *s == rec.level) {
                slot.1 += 1;
            }
            self.events.push(SelectorEvent::Released(pid));
        }
    }

    fn start_target(&mut self, rng: &mut AdversaryRng) {
        self.target_round = Some(self.obs.current_round());
        self.events.push(SelectorEvent::TargetRound(self.obs.current_round()));
        let holder = self.obs.holder();
        let mut queue: Vec<Pid> = (1..=self.n)
            .map(Pid::new)
            .filter(|&p| !self.is_stored[p.index()] && Some(p) != holder)
            .collect();
        queue.shuffle(rng);
        self.phase = Phase::TargetPre { queue, pos: 0 };
    }

    fn after_close(&mut self, rng: &mut AdversaryRng) {
        if self.next_level().is_some() {
            self.phase = Phase::Prep;
        } else if self.cfg.prep_only {
            self.phase = Phase::Done;
        } else {
            self.start_target(rng);
        }
    }

    fn fail(&mut self, why: String) -> Decision {
        self.failure = Some(why);
        self.phase = Phase::Done;
        Decision::Halt
    }
}

impl Adversary for SurvivorSelector {
    fn name(&self) -> &'static str {
        "survivor-selector"
    }

    fn params(&self) -> BTreeMap<String, String> {
        let levels: Vec<String> = self.cfg.levels.iter().map(|(s, c)| format!("{s}:{c}")).collect();
        let mut m = BTreeMap::from([
            ("levels".to_string(), levels.join(";")),
            ("retries".to_string(), self.cfg.max_retries.to_string()),
            ("prep-only".to_string(), self.cfg.prep_only.to_string()),
        ]);
        if let Some(f) = self.cfg.fairness_interval {
            m.insert("fairness".into(), f.to_string());
        }
        m
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn failure(&self) -> Option<String> {
        self.failure.clone()
    }

    fn next(&mut self, run: &[Transition], rng: &mut AdversaryRng) -> Decision {
        let fresh = self.obs.sync(run);
        let mut entered = false;
        for t in fresh.iter().filter(|t| t.is_entry()) {
            entered = true;
            if self.is_stored[t.pid.index()] {
                self.unstore(t.pid);
            }
        }

        loop {
            match &mut self.phase {
                Phase::Done => return Decision::Halt,

                Phase::Prep => {
                    if let Some(h) = self.obs.holder() {
                        if let Some(iv) = self.cfg.fairness_interval {
                            if self.pokes.is_empty() && run.len() - self.last_poke >= iv as usize {
                                self.pokes = self.stored.iter().map(|r| r.pid).collect();
                                self.last_poke = run.len();
                            }
                            if let Some(p) = self.pokes.pop() {
                                return Decision::Step(p);
                            }
                        }
                        return Decision::Step(h);
                    }
                    if self.obs.try_steps_in_round() > 0 {
                        // Someone already drew in this round; end it before selecting.
                        let mut queue: Vec<Pid> =
                            self.pool().into_iter().filter(|&p| !self.obs.stepped_this_round(p)).collect();
                        queue.shuffle(rng);
                        self.phase = Phase::Close { queue, pos: 0 };
                        continue;
                    }
                    let Some(s) = self.next_level() else {
                        if self.cfg.prep_only {
                            self.phase = Phase::Done;
                        } else {
                            self.start_target(rng);
                        }
                        continue;
                    };
                    let pool = self.pool();
                    if pool.len() < s as usize + 1 {
                        return self.fail(format!("pool of {} cannot host a {s}-survivor selection", pool.len()));
                    }
                    let picked = index::sample(rng, pool.len(), s as usize + 1);
                    let mut it = picked.into_iter().map(|i| pool[i]);
                    let candidate = it.next().expect("s + 1 >= 1");
                    self.phase = Phase::Attempt(Attempt { candidate, tests: it.collect(), pos: 0 });
                }

                Phase::Attempt(a) => {
                    if entered {
                        entered = false;
                        let level = a.level();
                        let entrant = self.obs.holder().expect("an entry leaves a holder");
                        self.events.push(SelectorEvent::Collapsed { level, entrant });
                        self.retries += 1;
                        if self.retries > self.cfg.max_retries {
                            return self.fail(format!("{} consecutive collapses at level {level}", self.retries));
                        }
                        self.phase = Phase::Prep;
                        continue;
                    }
                    if let Some(p) = a.next_pid() {
                        return Decision::Step(p);
                    }
                    let rec = SurvivorRecord {
                        pid: a.candidate,
                        level: a.level(),
                        round: self.obs.current_round(),
                        tests: std::mem::take(&mut a.tests),
                    };
                    self.retries = 0;
                    self.store(rec);
                    let mut queue: Vec<Pid> =
                        self.pool().into_iter().filter(|&p| !self.obs.stepped_this_round(p)).collect();
                    queue.shuffle(rng);
                    self.phase = Phase::Close { queue, pos: 0 };
                }

                Phase::Close { queue, pos } => {
                    if entered {
                        entered = false;
                        self.after_close(rng);
                        continue;
                    }
                    if *pos < 2 * queue.len() {
                        *pos += 1;
                        return Decision::Step(queue[(*pos - 1) / 2]);
                    }
                    // Nobody fresh can beat the newest survivor: let it enter.
                    match self.stored.last().map(|r| r.pid) {
                        Some(p) => {
                            self.unstore(p);
                            self.phase = Phase::Unstick(0);
                            return Decision::Step(p);
                        }
                        None => self.phase = Phase::Unstick(0),
                    }
                }

                Phase::Unstick(i) => {
                    if entered {
                        entered = false;
                        self.after_close(rng);
                        continue;
                    }
                    let candidates: Vec<Pid> =
                        (1..=self.n).map(Pid::new).filter(|p| !self.is_stored[p.index()]).collect();
                    let p = candidates[*i % candidates.len()];
                    *i += 1;
                    return Decision::Step(p);
                }

                Phase::TargetPre { queue, pos } => {
                    if entered {
                        self.phase = Phase::Done;
                        continue;
                    }
                    if *pos < queue.len() {
                        *pos += 1;
                        return Decision::Step(queue[*pos - 1]);
                    }
                    self.phase = Phase::TargetDrive;
                }

                Phase::TargetDrive => match self.obs.holder() {
                    Some(h) => return Decision::Step(h),
                    None => {
                        let mut first: Vec<Pid> = self.stored.iter().map(|r| r.pid).collect();
                        let mut second = first.clone();
                        first.shuffle(rng);
                        second.shuffle(rng);
                        first.extend(second);
                        self.phase = Phase::TargetSurvivors { queue: first, pos: 0 };
                    }
                },

                Phase::TargetSurvivors { queue, pos } => {
                    if entered {
                        self.phase = Phase::Done;
                        continue;
                    }
                    if *pos < queue.len() {
                        *pos += 1;
                        return Decision::Step(queue[*pos - 1]);
                    }
                    self.phase = Phase::TargetFallback(0);
                }

                Phase::TargetFallback(i) => {
                    if entered {
                        self.phase = Phase::Done;
                        continue;
                    }
                    let p = Pid::new((*i % self.n as usize) as u32 + 1);
                    *i += 1;
                    return Decision::Step(p);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{adversary_rng, drive_observed, Simulation, StopReason};
    use crate::protocol::{ProtocolParams, Variant};
    use crate::trace::{rounds, TraceView};

    #[test]
    fn default_levels_for_128() {
        assert_eq!(default_levels(128), vec![(64, 38), (32, 6), (16, 6), (8, 6), (4, 6)]);
        assert!(default_levels(8).is_empty() || default_levels(8).iter().all(|&(s, c)| s >= 1 && c > 0));
        for n in 1..=300 {
            assert!(SurvivorSelector::new(n, SurvivorConfig::defaults(n)).is_ok(), "n = {n}");
        }
    }

    #[test]
    fn pool_too_small_is_rejected() {
        let cfg = SurvivorConfig { levels: vec![(4, 1)], ..SurvivorConfig::defaults(5) };
        assert!(matches!(SurvivorSelector::new(5, cfg), Err(AdversaryError::PoolTooSmall { s: 4, .. })));
        let cfg = SurvivorConfig { levels: vec![(3, 1)], ..SurvivorConfig::defaults(5) };
        assert!(SurvivorSelector::new(5, cfg).is_ok());
    }

    #[test]
    fn direct_selection_outcomes() {
        let q = ProtocolParams::with_defaults(6, Variant::RabinOptimized).unwrap();
        let pool: Vec<Pid> = (2..=6).map(Pid::new).collect();
        let mut survivors = 0;
        for seed in 0..200 {
            let mut sim = Simulation::new(q.clone(), seed).unwrap();
            match select_survivor(&mut sim, Pid::new(2), 2, &pool, &mut adversary_rng(seed)).unwrap() {
                Selection::Survivor(rec) => {
                    survivors += 1;
                    let mine = sim.state().local(rec.pid).lottery;
                    for t in &rec.tests {
                        assert!(sim.state().local(*t).lottery < mine);
                    }
                    assert!(crit_free(sim.run()));
                    assert_eq!(sim.run().len(), 5);
                }
                Selection::Collapse { entrant } => {
                    assert_ne!(entrant, Pid::new(2));
                    assert!(!crit_free(sim.run()));
                }
            }
        }
        assert!(survivors > 0 && survivors < 200);
        let mut sim = Simulation::new(q, 0).unwrap();
        let err = select_survivor(&mut sim, Pid::new(2), 5, &pool, &mut adversary_rng(0)).unwrap_err();
        assert!(matches!(err, SelectError::Pool(AdversaryError::PoolTooSmall { .. })));
    }

    /// Runs a small selector and checks the stored survivors beat their tests.
    #[test]
    fn survivors_keep_values_above_their_tests() {
        let n = 24;
        let q = ProtocolParams::with_defaults(n, Variant::RabinOptimized).unwrap();
        for seed in 0..20 {
            let cfg = SurvivorConfig { levels: vec![(4, 3), (2, 3)], ..SurvivorConfig::defaults(n) };
            let mut adv = SurvivorSelector::new(n, cfg).unwrap();
            let mut sim = Simulation::new(q.clone(), seed).unwrap();
            let mut checked = 0usize;
            let stop = drive_observed(&mut sim, &mut adv, &mut adversary_rng(seed), 1_000_000, |sim, adv| {
                for ev in &adv.events()[checked..] {
                    if let SelectorEvent::Selected(rec) = ev {
                        let mine = sim.state().local(rec.pid).lottery;
                        for t in &rec.tests {
                            let theirs = sim.state().local(*t).lottery;
                            assert!(theirs < mine || sim.state().local(*t).round != sim.state().local(rec.pid).round);
                        }
                    }
                }
                checked = adv.events().len();
            })
            .unwrap();
            assert_eq!(stop, StopReason::Halted);
            assert!(adv.is_done());
            let k = adv.target_round().unwrap();
            let s = rounds(sim.run()).unwrap();
            assert_eq!(s.completed(), k);

            // Stored survivors took no step between their selection and the target round.
            let target = s.get(k).unwrap();
            for rec in adv.survivors() {
                let sel_round = s.get(rec.round).unwrap();
                let selected_before = sel_round.t_end;
                let idle = &sim.run()[selected_before as usize..target.t_start as usize];
                assert!(idle.iter().all(|t| t.pid != rec.pid), "{rec:?}");
            }
            // S2 stepped only while the section was occupied.
            let view = TraceView::new(&sim.clone().finish(stop)).map(|v| v.rounds.clone()).unwrap();
            assert_eq!(view.get(k).unwrap().t_end, target.t_end);
        }
    }

    #[test]
    fn collapse_budget_becomes_failure() {
        let n = 12;
        let q = ProtocolParams::with_defaults(n, Variant::RabinOptimized).unwrap();
        let cfg = SurvivorConfig { levels: vec![(8, 1)], max_retries: 0, ..SurvivorConfig::defaults(n) };
        let mut failed = false;
        for seed in 0..20 {
            let mut adv = SurvivorSelector::new(n, cfg.clone()).unwrap();
            let mut sim = Simulation::new(q.clone(), seed).unwrap();
            if crate::engine::drive(&mut sim, &mut adv, &mut adversary_rng(seed), 100_000).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed);
    }
}
