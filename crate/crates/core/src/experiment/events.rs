//! Named predicates over finished traces, with a small text syntax:
//! `and(win(1,3),not(size(3,2,7)))`, `prefix(1RT.2RT.1TC)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::protocol::{Pid, Transition};
use crate::trace::{format_run, parse_run, prefix_matches, TraceView};

/// Round-`k` predicates are false when round `k` did not complete.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    True,
    False,
    /// `W_i(k)`.
    Win { pid: Pid, k: u32 },
    /// `i` is in `P(k)`.
    Participates { pid: Pid, k: u32 },
    /// `min <= |P(k)| <= max`.
    Size { k: u32, min: u32, max: u32 },
    /// `N(k)`.
    NewValues { k: u32 },
    /// `U(k)`.
    UniqueMax { k: u32 },
    Completed { k: u32 },
    /// The visible run starts with this pattern.
    Prefix(Vec<Transition>),
    /// `R(k) != R_i(k-1)`.
    RoundChanged { k: u32, pid: Pid },
    /// `pid` took at least `min` Try-steps in round `k`, or in the unfinished
    /// tail when `k` is the first incomplete round.
    TrySteps { pid: Pid, k: u32, min: u32 },
    And(Vec<Event>),
    Or(Vec<Event>),
    Not(Box<Event>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse event `{input}`: {reason}")]
pub struct EventParseError {
    pub input: String,
    pub reason: String,
}

impl Event {
    pub fn and(events: impl IntoIterator<Item = Event>) -> Event {
        Event::And(events.into_iter().collect())
    }

    pub fn win(pid: u32, k: u32) -> Event {
        Event::Win { pid: Pid::new(pid), k }
    }

    pub fn participates(pid: u32, k: u32) -> Event {
        Event::Participates { pid: Pid::new(pid), k }
    }

    pub fn size(k: u32, m: u32) -> Event {
        Event::Size { k, min: m, max: m }
    }

    pub fn prefix(pattern: &str) -> Result<Event, EventParseError> {
        parse_run(pattern)
            .map(Event::Prefix)
            .map_err(|e| EventParseError { input: pattern.into(), reason: e.to_string() })
    }

    /// The run pattern this event requires, if it is a prefix or a conjunction
    /// containing one. Lets enumeration prune diverging branches.
    pub fn required_prefix(&self) -> Option<&[Transition]> {
        match self {
            Event::Prefix(p) => Some(p),
            Event::And(es) => es.iter().find_map(|e| e.required_prefix()),
            _ => None,
        }
    }

    pub fn eval(&self, view: &TraceView<'_>) -> bool {
        let rounds = &view.rounds;
        match self {
            Event::True => true,
            Event::False => false,
            Event::Win { pid, k } => rounds.get(*k).is_some_and(|r| r.winner == *pid),
            Event::Participates { pid, k } => rounds.get(*k).is_some_and(|r| r.has_participant(*pid)),
            Event::Size { k, min, max } => rounds.get(*k).is_some_and(|r| {
                let m = r.participants.len() as u32;
                *min <= m && m <= *max
            }),
            Event::NewValues { k } => view.new_values(*k),
            Event::UniqueMax { k } => view.unique_max(*k),
            Event::Completed { k } => rounds.completed() >= *k,
            Event::Prefix(p) => prefix_matches(&view.trace.run, p),
            Event::RoundChanged { k, pid } => {
                if *k < 1 {
                    return false;
                }
                let Some(now) = view.round_number(*k) else { return false };
                let before = if *k == 1 {
                    view.values_at_round(0)
                } else {
                    rounds.get(k - 1).map(|r| view.snapshot(r.t_end))
                };
                before.is_some_and(|s| s.local(*pid).round != Some(now))
            }
            Event::TrySteps { pid, k, min } => {
                let span = match rounds.get(*k) {
                    Some(r) => Some((r.t_start, r.t_end)),
                    None if rounds.completed() + 1 == *k => {
                        let start = rounds.last().map_or(0, |r| r.t_end);
                        Some((start, view.trace.run.len() as u64))
                    }
                    None => None,
                };
                span.is_some_and(|(a, b)| {
                    let c = view.trace.run[a as usize..b as usize]
                        .iter()
                        .filter(|t| t.pid == *pid && t.is_try_step())
                        .count();
                    c as u32 >= *min
                })
            }
            Event::And(es) => es.iter().all(|e| e.eval(view)),
            Event::Or(es) => es.iter().any(|e| e.eval(view)),
            Event::Not(e) => !e.eval(view),
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, name: &str, es: &[Event]| {
            write!(f, "{name}(")?;
            for (i, e) in es.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{e}")?;
            }
            f.write_str(")")
        };
        match self {
            Event::True => f.write_str("true"),
            Event::False => f.write_str("false"),
            Event::Win { pid, k } => write!(f, "win({pid},{k})"),
            Event::Participates { pid, k } => write!(f, "participates({pid},{k})"),
            Event::Size { k, min, max } if min == max => write!(f, "size({k},{min})"),
            Event::Size { k, min, max } => write!(f, "size({k},{min},{max})"),
            Event::NewValues { k } => write!(f, "new-values({k})"),
            Event::UniqueMax { k } => write!(f, "unique-max({k})"),
            Event::Completed { k } => write!(f, "completed({k})"),
            Event::Prefix(p) => write!(f, "prefix({})", format_run(p)),
            Event::RoundChanged { k, pid } => write!(f, "round-changed({k},{pid})"),
            Event::TrySteps { pid, k, min } => write!(f, "try-steps({pid},{k},{min})"),
            Event::And(es) => list(f, "and", es),
            Event::Or(es) => list(f, "or", es),
            Event::Not(e) => write!(f, "not({e})"),
        }
    }
}

/// Splits `a,b(c,d),e` at top-level commas.
fn split_args(s: &str) -> Option<Vec<&str>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    let last = s[start..].trim();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    Some(out)
}

impl FromStr for Event {
    type Err = EventParseError;

    fn from_str(input: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| EventParseError { input: input.to_string(), reason: reason.to_string() };
        let s = input.trim();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            Some(_) => return Err(err("unbalanced parentheses")),
            None => (s, None),
        };
        let name = name.trim().replace('_', "-");
        if name == "prefix" {
            let body = args.ok_or_else(|| err("prefix needs a run"))?;
            return parse_run(body).map(Event::Prefix).map_err(|e| err(&e.to_string()));
        }
        let args = match args {
            Some(a) => split_args(a).ok_or_else(|| err("unbalanced parentheses"))?,
            None => Vec::new(),
        };
        let ints = || -> Result<Vec<u32>, EventParseError> {
            args.iter().map(|a| a.parse::<u32>().map_err(|_| err(&format!("`{a}` is not a number")))).collect()
        };
        let arity = |want: &[usize], got: usize| -> Result<(), EventParseError> {
            if want.contains(&got) {
                Ok(())
            } else {
                Err(err(&format!("`{name}` takes {want:?} arguments, got {got}")))
            }
        };
        let nested = || -> Result<Vec<Event>, EventParseError> { args.iter().map(|a| a.parse()).collect() };
        let pid = |v: u32| -> Result<Pid, EventParseError> {
            if v == 0 {
                Err(err("pids start at 1"))
            } else {
                Ok(Pid::new(v))
            }
        };
        Ok(match name.as_str() {
            "true" => Event::True,
            "false" => Event::False,
            "win" | "participates" | "round-changed" => {
                let v = ints()?;
                arity(&[2], v.len())?;
                match name.as_str() {
                    "win" => Event::Win { pid: pid(v[0])?, k: v[1] },
                    "participates" => Event::Participates { pid: pid(v[0])?, k: v[1] },
                    _ => Event::RoundChanged { k: v[0], pid: pid(v[1])? },
                }
            }
            "size" => {
                let v = ints()?;
                arity(&[2, 3], v.len())?;
                Event::Size { k: v[0], min: v[1], max: *v.get(2).unwrap_or(&v[1]) }
            }
            "new-values" | "unique-max" | "completed" => {
                let v = ints()?;
                arity(&[1], v.len())?;
                match name.as_str() {
                    "new-values" => Event::NewValues { k: v[0] },
                    "unique-max" => Event::UniqueMax { k: v[0] },
                    _ => Event::Completed { k: v[0] },
                }
            }
            "try-steps" => {
                let v = ints()?;
                arity(&[3], v.len())?;
                Event::TrySteps { pid: pid(v[0])?, k: v[1], min: v[2] }
            }
            "and" => Event::And(nested()?),
            "or" => Event::Or(nested()?),
            "not" => {
                let mut v = nested()?;
                arity(&[1], v.len())?;
                Event::Not(Box::new(v.remove(0)))
            }
            _ => return Err(err("unknown event")),
        })
    }
}

impl Serialize for Event {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Event {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Names and argument shapes, for listings.
pub const EVENT_SYNTAX: &[(&str, &str)] = &[
    ("true | false", "constant"),
    ("win(i,k)", "i enters Crit at the end of round k"),
    ("participates(i,k)", "i takes a Try-step in round k"),
    ("size(k,m) | size(k,lo,hi)", "number of participants of round k"),
    ("new-values(k)", "every participant of round k redrew during it"),
    ("unique-max(k)", "one participant holds the strict maximum at the end of round k"),
    ("completed(k)", "at least k rounds completed"),
    ("prefix(1RT.2RT...)", "the visible run starts with the pattern"),
    ("round-changed(k,i)", "round number of round k differs from R_i at the end of round k-1"),
    ("try-steps(i,k,c)", "i took at least c Try-steps in round k"),
    ("and(..) | or(..) | not(e)", "combinators"),
];
