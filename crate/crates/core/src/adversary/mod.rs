//! Schedulers.
//!
//! An [`Adversary`] is handed the visible run and nothing else, so every
//! policy here is admissible by construction. The catalog at the bottom maps
//! names and string parameters to concrete policies for configs and the CLI.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Pid, Region, Transition};
use crate::trace::{rounds, TraceError};

mod ordered;
mod restricted;
mod round_robin;
mod script;
mod survivor;

pub use ordered::OrderedLockout;
pub use restricted::RestrictedRandom;
pub use round_robin::{RandomFair, RoundRobin};
pub use script::{ben_or_lockout_script, inference_script, Script, ScriptOp};
pub use survivor::{
    default_levels, select_survivor, SelectError, Selection, SelectorEvent, SurvivorConfig, SurvivorRecord,
    SurvivorSelector,
};

/// Randomness available to randomized adversaries.
pub type AdversaryRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Step(Pid),
    Halt,
}

pub trait Adversary: Send {
    fn name(&self) -> &'static str;

    /// Parameters for reports.
    fn params(&self) -> BTreeMap<String, String> {
        BTreeMap::new()
    }

    /// True when decisions never consult the adversary rng.
    fn deterministic(&self) -> bool;

    fn next(&mut self, run: &[Transition], rng: &mut AdversaryRng) -> Decision;

    /// Set once the policy has given up; the driver turns it into an error.
    fn failure(&self) -> Option<String> {
        None
    }
}

impl<A: Adversary + ?Sized> Adversary for Box<A> {
    fn name(&self) -> &'static str {
        (**self).name()
    }
    fn params(&self) -> BTreeMap<String, String> {
        (**self).params()
    }
    fn deterministic(&self) -> bool {
        (**self).deterministic()
    }
    fn next(&mut self, run: &[Transition], rng: &mut AdversaryRng) -> Decision {
        (**self).next(run, rng)
    }
    fn failure(&self) -> Option<String> {
        (**self).failure()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdversaryError {
    #[error("unknown adversary `{0}`; try `list`")]
    Unknown(String),
    #[error("adversary `{adversary}` has no parameter `{key}`")]
    UnknownParam { adversary: String, key: String },
    #[error("adversary `{adversary}`: bad value `{value}` for `{key}`")]
    BadParam { adversary: String, key: String, value: String },
    #[error("adversary `{adversary}` needs n >= {need}, got {n}")]
    TooFewProcesses { adversary: String, need: u32, n: u32 },
    #[error("selection of a {s}-survivor needs a pool of {need}, only {pool} available")]
    PoolTooSmall { s: u32, need: u32, pool: u32 },
    #[error("pid {pid} is outside 1..={n}")]
    BadPid { pid: u32, n: u32 },
}

/// Incremental view of a run: regions, holder and round count.
#[derive(Clone, Debug)]
pub struct RunObserver {
    regions: Vec<Region>,
    holder: Option<Pid>,
    seen: usize,
    completed: u32,
    /// Round index (1-based) of each pid's latest Try-step, 0 if none.
    last_try_round: Vec<u32>,
    try_steps_in_round: u64,
}

impl RunObserver {
    pub fn new(n: u32) -> Self {
        RunObserver {
            regions: vec![Region::Rem; n as usize],
            holder: None,
            seen: 0,
            completed: 0,
            last_try_round: vec![0; n as usize],
            try_steps_in_round: 0,
        }
    }

    /// Folds in the part of `run` not seen yet and returns it.
    pub fn sync<'r>(&mut self, run: &'r [Transition]) -> &'r [Transition] {
        if run.len() < self.seen {
            *self = RunObserver::new(self.regions.len() as u32);
        }
        let fresh = &run[self.seen..];
        for tr in fresh {
            let i = tr.pid.index();
            if i >= self.regions.len() {
                self.regions.resize(i + 1, Region::Rem);
                self.last_try_round.resize(i + 1, 0);
            }
            self.regions[i] = tr.new;
            if tr.is_try_step() {
                self.last_try_round[i] = self.completed + 1;
                self.try_steps_in_round += 1;
            }
            if tr.is_entry() {
                self.holder = Some(tr.pid);
                self.completed += 1;
                self.try_steps_in_round = 0;
            } else if tr.is_release() {
                self.holder = None;
            }
        }
        self.seen = run.len();
        fresh
    }

    pub fn holder(&self) -> Option<Pid> {
        self.holder
    }

    pub fn is_free(&self) -> bool {
        self.holder.is_none()
    }

    pub fn region(&self, pid: Pid) -> Region {
        self.regions[pid.index()]
    }

    pub fn completed_rounds(&self) -> u32 {
        self.completed
    }

    /// Index of the round in progress.
    pub fn current_round(&self) -> u32 {
        self.completed + 1
    }

    pub fn stepped_this_round(&self, pid: Pid) -> bool {
        self.last_try_round[pid.index()] == self.completed + 1
    }

    pub fn try_steps_in_round(&self) -> u64 {
        self.try_steps_in_round
    }

    pub fn steps_seen(&self) -> usize {
        self.seen
    }
}

/// Checks that every round after the first lets each participant step
/// before the section became free. The previous holder cannot take a
/// Try-step while it still holds the section, so it also counts when its
/// first Try-step comes right after its own release.
pub fn is_restricted(run: &[Transition]) -> Result<bool, TraceError> {
    let summary = rounds(run)?;
    for pair in summary.rounds.windows(2) {
        let (prev, r) = (&pair[0], &pair[1]);
        for &p in &r.participants {
            let first = run[r.t_start as usize..r.t_end as usize]
                .iter()
                .position(|t| t.pid == p && t.is_try_step())
                .map(|i| r.t_start + i as u64 + 1)
                .expect("participant has a Try-step");
            let early = first < r.f_k;
            let holder_right_after = p == prev.winner && r.f_k > r.t_start && first == r.f_k + 1;
            if !(early || holder_right_after) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Name plus string parameters; the serializable form of an adversary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

/// One catalog entry.
#[derive(Clone, Copy, Debug)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [(&'static str, &'static str)],
}

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry { name: "round-robin", summary: "cycles 1..n forever", params: &[] },
    CatalogEntry { name: "random", summary: "uniformly random pid at every step", params: &[] },
    CatalogEntry {
        name: "ordered-lockout",
        summary: "pokes pid 1 while occupied, then 2,2,3,3,...,n,n,1",
        params: &[("order", "comma-separated pids, default 2..n")],
    },
    CatalogEntry {
        name: "survivor-selector",
        summary: "stores s-survivors, then floods the target round",
        params: &[
            ("levels", "s:count pairs separated by ';', default from n"),
            ("fairness", "poke interval in steps, default off"),
            ("retries", "consecutive collapses allowed per selection"),
            ("prep-only", "stop after the preparation phase"),
        ],
    },
    CatalogEntry {
        name: "restricted-random",
        summary: "steps every member while occupied, then random passes",
        params: &[
            ("set", "comma-separated pids"),
            ("m", "use the last m pids as the set"),
            ("seed", "fixes the pass order, making the policy deterministic"),
            ("rounds", "halt after this many completed rounds"),
        ],
    },
    CatalogEntry {
        name: "inference-script",
        summary: "2,1,1,3,3,4,4 / free / 5,3,3",
        params: &[("then", "continuation adversary, default halt")],
    },
    CatalogEntry {
        name: "ben-or-lockout",
        summary: "1,2,2,3,3 / 4,1,1,5,5 / 6,4,4,2,2 for the boolean variant",
        params: &[("then", "continuation adversary, default halt")],
    },
];

fn parse_pids(adversary: &str, key: &str, value: &str, n: u32) -> Result<Vec<Pid>, AdversaryError> {
    let bad = || AdversaryError::BadParam {
        adversary: adversary.to_string(),
        key: key.to_string(),
        value: value.to_string(),
    };
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            let p: u32 = s.parse().map_err(|_| bad())?;
            if p == 0 || p > n {
                return Err(AdversaryError::BadPid { pid: p, n });
            }
            Ok(Pid::new(p))
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(adversary: &str, key: &str, value: &str) -> Result<T, AdversaryError> {
    value.trim().parse().map_err(|_| AdversaryError::BadParam {
        adversary: adversary.to_string(),
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl AdversarySpec {
    pub fn new(name: impl Into<String>) -> Self {
        AdversarySpec { name: name.into(), params: BTreeMap::new() }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    /// Catalog entry matching this name.
    pub fn entry(&self) -> Result<&'static CatalogEntry, AdversaryError> {
        CATALOG
            .iter()
            .find(|e| e.name == self.name)
            .ok_or_else(|| AdversaryError::Unknown(self.name.clone()))
    }

    pub fn build(&self, n: u32) -> Result<Box<dyn Adversary>, AdversaryError> {
        let entry = self.entry()?;
        for key in self.params.keys() {
            if !entry.params.iter().any(|(k, _)| k == key) {
                return Err(AdversaryError::UnknownParam { adversary: self.name.clone(), key: key.clone() });
            }
        }
        let name = entry.name;
        let get = |k: &str| self.params.get(k).map(String::as_str);
        let continuation = |n: u32| -> Result<Option<Box<dyn Adversary>>, AdversaryError> {
            match get("then") {
                None | Some("halt") => Ok(None),
                Some(other) => AdversarySpec::new(other).build(n).map(Some),
            }
        };
        Ok(match name {
            "round-robin" => Box::new(RoundRobin::new(n)),
            "random" => Box::new(RandomFair::new(n)),
            "ordered-lockout" => {
                let order = match get("order") {
                    Some(v) => parse_pids(name, "order", v, n)?,
                    None => (2..=n).map(Pid::new).collect(),
                };
                Box::new(OrderedLockout::with_order(n, order))
            }
            "survivor-selector" => {
                let mut cfg = SurvivorConfig::defaults(n);
                if let Some(v) = get("levels") {
                    cfg.levels = v
                        .split(';')
                        .filter(|s| !s.trim().is_empty())
                        .map(|pair| {
                            let (s, c) = pair.split_once(':').ok_or_else(|| AdversaryError::BadParam {
                                adversary: name.to_string(),
                                key: "levels".into(),
                                value: v.to_string(),
                            })?;
                            Ok((parse_num(name, "levels", s)?, parse_num(name, "levels", c)?))
                        })
                        .collect::<Result<_, AdversaryError>>()?;
                }
                if let Some(v) = get("fairness") {
                    cfg.fairness_interval = Some(parse_num(name, "fairness", v)?);
                }
                if let Some(v) = get("retries") {
                    cfg.max_retries = parse_num(name, "retries", v)?;
                }
                if let Some(v) = get("prep-only") {
                    cfg.prep_only = parse_num(name, "prep-only", v)?;
                }
                Box::new(SurvivorSelector::new(n, cfg)?)
            }
            "restricted-random" => {
                let set = match (get("set"), get("m")) {
                    (Some(v), _) => parse_pids(name, "set", v, n)?,
                    (None, Some(m)) => {
                        let m: u32 = parse_num(name, "m", m)?;
                        if m == 0 || m > n {
                            return Err(AdversaryError::BadParam {
                                adversary: name.into(),
                                key: "m".into(),
                                value: m.to_string(),
                            });
                        }
                        (n - m + 1..=n).map(Pid::new).collect()
                    }
                    (None, None) => (1..=n).map(Pid::new).collect(),
                };
                let seed = get("seed").map(|v| parse_num(name, "seed", v)).transpose()?;
                let mut adv = RestrictedRandom::new(n, set, seed);
                if let Some(v) = get("rounds") {
                    adv = adv.halt_after(parse_num(name, "rounds", v)?);
                }
                Box::new(adv)
            }
            "inference-script" => Box::new(inference_script(n)?.then(continuation(n)?)),
            "ben-or-lockout" => Box::new(ben_or_lockout_script(n)?.then(continuation(n)?)),
            _ => unreachable!("catalog entry without constructor"),
        })
    }
}
