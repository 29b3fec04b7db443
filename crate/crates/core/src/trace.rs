//! Runs, rounds and the events defined over them.
//!
//! Steps are numbered from 1. Round `k` is the fragment `(t(k-1), t(k)]`
//! ending with the round's only `Try -> Crit` transition, with `t(0) = 0`.
//! Functions taking a bare run use only what an adversary can see; the ones
//! taking an [`ExecutionTrace`] also read the per-step metadata.

use std::fmt;

use thiserror::Error;

pub use crate::engine::ExecutionTrace;
use crate::protocol::SharedVariable;
pub use crate::protocol::{Pid, Region, Transition};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("step {t}: process {pid} cannot move {old} -> {new}")]
    IllegalMove { t: u64, pid: Pid, old: Region, new: Region },
    #[error("step {t}: process {pid} is in {actual}, not {recorded}")]
    Inconsistent { t: u64, pid: Pid, recorded: Region, actual: Region },
    #[error("step {t}: process {pid} entered while {holder} holds the section")]
    Exclusion { t: u64, pid: Pid, holder: Pid },
    #[error("bad run notation `{0}`")]
    Notation(String),
}

fn allowed(old: Region, new: Region) -> bool {
    use Region::*;
    matches!((old, new), (Rem, Try) | (Try, Try) | (Try, Crit) | (Crit, Exit) | (Exit, Rem))
}

/// One completed round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Round {
    /// 1-based round index.
    pub k: u32,
    /// `t(k-1)`; the round's first step is `t_start + 1`.
    pub t_start: u64,
    /// `t(k)`, the step of the winning `Try -> Crit`.
    pub t_end: u64,
    /// Step at which the section became free, or `t_start` when it was free
    /// from the round's beginning.
    pub f_k: u64,
    /// Sorted pids with a Try-step in the round.
    pub participants: Vec<Pid>,
    pub winner: Pid,
}

impl Round {
    pub fn has_participant(&self, pid: Pid) -> bool {
        self.participants.binary_search(&pid).is_ok()
    }

    pub fn contains_step(&self, t: u64) -> bool {
        t > self.t_start && t <= self.t_end
    }
}

/// Steps after the last completed round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub k: u32,
    pub t_start: u64,
    pub t_end: u64,
    pub free_at: Option<u64>,
    pub participants: Vec<Pid>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundSummary {
    pub rounds: Vec<Round>,
    /// Non-empty trailing fragment without an entry.
    pub tail: Option<Fragment>,
}

impl RoundSummary {
    pub fn completed(&self) -> u32 {
        self.rounds.len() as u32
    }

    /// Round `k` (1-based) if it completed.
    pub fn get(&self, k: u32) -> Option<&Round> {
        k.checked_sub(1).and_then(|i| self.rounds.get(i as usize))
    }

    pub fn last(&self) -> Option<&Round> {
        self.rounds.last()
    }

    /// Round containing step `t`.
    pub fn round_of_step(&self, t: u64) -> Option<u32> {
        let i = self.rounds.partition_point(|r| r.t_end < t);
        match self.rounds.get(i) {
            Some(r) => Some(r.k),
            None => self.tail.as_ref().filter(|f| t <= f.t_end && t > f.t_start).map(|f| f.k),
        }
    }
}

struct Participation {
    seen: Vec<bool>,
    list: Vec<Pid>,
}

impl Participation {
    fn new() -> Self {
        Participation { seen: Vec::new(), list: Vec::new() }
    }

    fn add(&mut self, pid: Pid) {
        let i = pid.index();
        if self.seen.len() <= i {
            self.seen.resize(i + 1, false);
        }
        if !self.seen[i] {
            self.seen[i] = true;
            self.list.push(pid);
        }
    }

    fn take(&mut self) -> Vec<Pid> {
        for p in &self.list {
            self.seen[p.index()] = false;
        }
        let mut v = std::mem::take(&mut self.list);
        v.sort_unstable();
        v
    }
}

/// Splits a run into rounds, validating every transition.
pub fn rounds(run: &[Transition]) -> Result<RoundSummary, TraceError> {
    let mut regions: Vec<Region> = Vec::new();
    let mut holder: Option<Pid> = None;
    let mut out = Vec::new();
    let mut part = Participation::new();
    let mut t_start = 0u64;
    let mut prev_holder: Option<Pid> = None;
    let mut released_at: Option<u64> = None;
    let mut try_before_release = false;

    for (idx, tr) in run.iter().enumerate() {
        let t = idx as u64 + 1;
        let i = tr.pid.index();
        if regions.len() <= i {
            regions.resize(i + 1, Region::Rem);
        }
        if regions[i] != tr.old {
            return Err(TraceError::Inconsistent { t, pid: tr.pid, recorded: tr.old, actual: regions[i] });
        }
        if !allowed(tr.old, tr.new) {
            return Err(TraceError::IllegalMove { t, pid: tr.pid, old: tr.old, new: tr.new });
        }
        regions[i] = tr.new;
        if tr.is_try_step() {
            part.add(tr.pid);
            if released_at.is_none() {
                try_before_release = true;
            }
        }
        if tr.is_release() {
            holder = None;
            if Some(tr.pid) == prev_holder && released_at.is_none() {
                released_at = Some(t);
            }
        }
        if tr.is_entry() {
            if let Some(h) = holder {
                return Err(TraceError::Exclusion { t, pid: tr.pid, holder: h });
            }
            holder = Some(tr.pid);
            let f_k = match released_at {
                Some(q) if try_before_release => q,
                _ => t_start,
            };
            out.push(Round {
                k: out.len() as u32 + 1,
                t_start,
                t_end: t,
                f_k,
                participants: part.take(),
                winner: tr.pid,
            });
            t_start = t;
            prev_holder = Some(tr.pid);
            released_at = None;
            try_before_release = false;
        }
    }

    let len = run.len() as u64;
    let tail = (len > t_start).then(|| Fragment {
        k: out.len() as u32 + 1,
        t_start,
        t_end: len,
        free_at: if out.is_empty() { Some(0) } else { released_at },
        participants: part.take(),
    });
    Ok(RoundSummary { rounds: out, tail })
}

/// `P(k)`; empty when the run has fewer than `k` completed rounds.
pub fn participants(run: &[Transition], k: u32) -> Result<Vec<Pid>, TraceError> {
    Ok(rounds(run)?.get(k).map(|r| r.participants.clone()).unwrap_or_default())
}

/// Winner of round `k`, if the round completed.
pub fn winner(run: &[Transition], k: u32) -> Result<Option<Pid>, TraceError> {
    Ok(rounds(run)?.get(k).map(|r| r.winner))
}

/// Whether nobody is in Crit or Exit after the run.
pub fn crit_free(run: &[Transition]) -> bool {
    let mut holder: Option<Pid> = None;
    for tr in run {
        if tr.is_entry() {
            holder = Some(tr.pid);
        } else if tr.is_release() && holder == Some(tr.pid) {
            holder = None;
        }
    }
    holder.is_none()
}

/// Whether `pattern` is a prefix of `run`.
pub fn prefix_matches(run: &[Transition], pattern: &[Transition]) -> bool {
    run.len() >= pattern.len() && run[..pattern.len()] == *pattern
}

/// A stretch of steps during which an active process was never scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Starvation {
    pub pid: Pid,
    /// First step of the interval.
    pub from: u64,
    /// Last step of the interval, inclusive.
    pub to: u64,
}

impl Starvation {
    pub fn len(&self) -> u64 {
        self.to + 1 - self.from
    }

    pub fn is_empty(&self) -> bool {
        self.to < self.from
    }
}

/// Maximal intervals longer than `window` in which a process outside Rem got no step.
pub fn fairness_violations(run: &[Transition], window: u64) -> Vec<Starvation> {
    let mut last: Vec<Option<(u64, Region)>> = Vec::new();
    let mut out = Vec::new();
    for (idx, tr) in run.iter().enumerate() {
        let t = idx as u64 + 1;
        let i = tr.pid.index();
        if last.len() <= i {
            last.resize(i + 1, None);
        }
        if let Some((prev, region)) = last[i] {
            if region != Region::Rem && t - prev - 1 > window {
                out.push(Starvation { pid: tr.pid, from: prev + 1, to: t - 1 });
            }
        }
        last[i] = Some((t, tr.new));
    }
    let len = run.len() as u64;
    for (i, l) in last.iter().enumerate() {
        if let Some((prev, region)) = *l {
            if region != Region::Rem && len - prev > window {
                out.push(Starvation { pid: Pid::from_index(i), from: prev + 1, to: len });
            }
        }
    }
    out.sort_by_key(|s| (s.from, s.pid));
    out
}

/// Parses the compact notation `1RT.2RT.1TC`: pid followed by the old and
/// new region letters, separated by dots, commas or whitespace.
pub fn parse_run(text: &str) -> Result<Vec<Transition>, TraceError> {
    let bad = || TraceError::Notation(text.to_string());
    text.split(|c: char| c == '.' || c == ',' || c.is_whitespace())
        .filter(|tok| !tok.is_empty())
        .map(|tok| {
            let digits = tok.chars().take_while(char::is_ascii_digit).count();
            let (num, letters) = tok.split_at(digits);
            let pid: u32 = num.parse().map_err(|_| bad())?;
            let mut cs = letters.chars();
            let (Some(a), Some(b), None) = (cs.next(), cs.next(), cs.next()) else {
                return Err(bad());
            };
            let old = Region::from_letter(a).ok_or_else(bad)?;
            let new = Region::from_letter(b).ok_or_else(bad)?;
            if pid == 0 {
                return Err(bad());
            }
            Ok(Transition::new(Pid::new(pid), old, new))
        })
        .collect()
}

/// Inverse of [`parse_run`].
pub fn format_run(run: &[Transition]) -> String {
    let parts: Vec<String> = run.iter().map(|t| t.to_string()).collect();
    parts.join(".")
}

/// Lottery value and remembered round number of one process.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalValues {
    pub lottery: u32,
    pub round: Option<u32>,
}

/// Shared and local values after a given step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub t: u64,
    pub shared: SharedVariable,
    pub locals: Vec<LocalValues>,
}

impl Snapshot {
    pub fn local(&self, pid: Pid) -> LocalValues {
        self.locals[pid.index()]
    }
}

/// Round summary plus the derived per-step values of one trace.
#[derive(Clone, Debug)]
pub struct TraceView<'a> {
    pub trace: &'a ExecutionTrace,
    pub rounds: RoundSummary,
}

impl<'a> TraceView<'a> {
    pub fn new(trace: &'a ExecutionTrace) -> Result<Self, TraceError> {
        Ok(TraceView { rounds: rounds(&trace.run)?, trace })
    }

    /// Values after step `t` (`t = 0` is the initial configuration).
    pub fn snapshot(&self, t: u64) -> Snapshot {
        let params = &self.trace.params;
        let init = LocalValues { lottery: params.initial_lottery(), round: None };
        let mut locals = vec![init; params.n as usize];
        let mut shared = SharedVariable {
            occupied: false,
            lottery: 0,
            round: self.trace.choices.first().map(|c| c.value).unwrap_or(0),
        };
        for m in &self.trace.steps[..t as usize] {
            let i = m.transition.pid.index();
            if m.redraw {
                locals[i] = LocalValues { lottery: m.drawn.unwrap_or(0), round: Some(m.before.round) };
            }
            if m.transition.is_release() {
                locals[i] = LocalValues { lottery: 0, round: None };
            }
            shared = m.after;
        }
        Snapshot { t, shared, locals }
    }

    /// `R(k)`: the round number in force during round `k`.
    pub fn round_number(&self, k: u32) -> Option<u32> {
        let start = if k == 1 { 0 } else { self.rounds.get(k - 1)?.t_end };
        if start > self.trace.run.len() as u64 {
            return None;
        }
        Some(self.snapshot(start).shared.round)
    }

    /// `X(k)` for every local value: state just before the last step of round `k`;
    /// `k = 0` gives the initial values.
    pub fn values_at_round(&self, k: u32) -> Option<Snapshot> {
        if k == 0 {
            return Some(self.snapshot(0));
        }
        let r = self.rounds.get(k)?;
        Some(self.snapshot(r.t_end - 1))
    }

    /// `N(k)`: every participant of round `k` redrew during the round.
    pub fn new_values(&self, k: u32) -> bool {
        let Some(r) = self.rounds.get(k) else { return false };
        let mut redrew = vec![false; self.trace.params.n as usize];
        for m in &self.trace.steps[r.t_start as usize..r.t_end as usize] {
            if m.redraw {
                redrew[m.transition.pid.index()] = true;
            }
        }
        r.participants.iter().all(|p| redrew[p.index()])
    }

    /// `U(k)`: one participant of round `k` holds the strict maximum of the
    /// participants' lottery values just before the round's last step.
    pub fn unique_max(&self, k: u32) -> bool {
        let (Some(r), Some(x)) = (self.rounds.get(k), self.values_at_round(k)) else { return false };
        let vals: Vec<u32> = r.participants.iter().map(|p| x.local(*p).lottery).collect();
        let Some(&top) = vals.iter().max() else { return false };
        vals.iter().filter(|&&v| v == top).count() == 1
    }

    /// Try-steps of `pid` strictly after `f_k` within round `k`.
    pub fn try_steps_after_free(&self, k: u32, pid: Pid) -> usize {
        let Some(r) = self.rounds.get(k) else { return 0 };
        self.trace.run[r.f_k as usize..r.t_end as usize]
            .iter()
            .filter(|t| t.pid == pid && t.is_try_step())
            .count()
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "round {} ({}, {}] free at {} winner {}", self.k, self.t_start, self.t_end, self.f_k, self.winner)
    }
}

/// Whether `new_values` holds for round `k` of `trace`.
pub fn new_values_holds(trace: &ExecutionTrace, k: u32) -> Result<bool, TraceError> {
    Ok(TraceView::new(trace)?.new_values(k))
}
