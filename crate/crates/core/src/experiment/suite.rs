//! Canned desk-scale scenarios with pass/fail checks.
//!
//! Every suite is a pure function of its [`SuiteConfig`]; the report carries
//! the config so a run can be repeated exactly.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::montecarlo::with_workers;
use super::{
    enumerate_exact, enumerate_with, estimate, estimate_pairs, run_spec_trial, Event, ExperimentError,
    ExperimentSpec,
};
use crate::adversary::{AdversarySpec, SelectorEvent, SurvivorConfig, SurvivorSelector, CATALOG};
use crate::analysis::{
    approx_grid, cond_tail_check, max_point_mass, max_tail_exact, stochastically_leq, t34_series_bound, trunc_geom,
    unique_max_prob, unique_max_sweep, Dist,
};
use crate::engine::{adversary_rng, drive_observed, trial_seed, Simulation};
use crate::protocol::{ceil_log2, Pid, ProtocolParams, Region, ReplaySource, Variant};
use crate::scalar::{Probability, Rational};
use crate::trace::{format_run, TraceView};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Replaces the suite's main trial count.
    #[serde(default)]
    pub trials: Option<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { seed: 1, trials: None, workers: None }
    }
}

impl SuiteConfig {
    fn trials_or(&self, default: u64) -> u64 {
        self.trials.unwrap_or(default)
    }
}

/// A reported number; exact quantities also carry their rational form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<String>,
}

impl From<f64> for Metric {
    fn from(value: f64) -> Self {
        Metric { value, exact: None }
    }
}

impl From<&Rational> for Metric {
    fn from(r: &Rational) -> Self {
        Metric { value: r.to_f64(), exact: Some(r.to_string()) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub pass: bool,
    pub config: SuiteConfig,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, Metric>,
}

impl Report {
    fn new(id: &str, cfg: &SuiteConfig) -> Self {
        Report { id: id.into(), pass: true, config: cfg.clone(), checks: Vec::new(), metrics: BTreeMap::new() }
    }

    fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.pass &= pass;
        self.checks.push(Check { name: name.into(), pass, detail: detail.into() });
    }

    fn metric(&mut self, name: impl Into<String>, m: impl Into<Metric>) {
        self.metrics.insert(name.into(), m.into());
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Suite ids with one-line summaries.
pub const SUITES: &[(&str, &str)] = &[
    ("t31", "ordered lockout: pid 1 never wins a round with 2..n-1 participants"),
    ("t32_mechanism", "survivor selection raises lottery values and starves the target"),
    ("t34_formula", "series against r / (eta n^2)"),
    ("t35", "restricted adversaries: win probability at least 2/(3m) under new values"),
    ("t36", "every catalog adversary: win probability at least 0.1/n"),
    ("t37", "round-number posterior after the inference script"),
    ("t38", "boolean variant lockout: zero win probability"),
    ("appendix", "maximum of geometric draws: approximation and corollaries"),
    ("eq1", "unique maximum probability at least 2/3"),
    ("infra", "trace invariants, Monte Carlo against enumeration, replay"),
];

pub fn theorem_suite(id: &str, cfg: &SuiteConfig) -> Result<Report, ExperimentError> {
    match id.replace('-', "_").as_str() {
        "t31" => t31(cfg),
        "t32_mechanism" => t32_mechanism(cfg, &Survivor::default()),
        "t34_formula" => t34_formula(cfg),
        "t35" => t35(cfg),
        "t36" => t36(cfg),
        "t37" => t37(cfg),
        "t38" => t38(cfg),
        "appendix" => appendix(cfg),
        "eq1" => eq1(cfg),
        "infra" => infra(cfg),
        _ => Err(ExperimentError::UnknownSuite(id.to_string())),
    }
}

/// Runs `f` on trial indices `0..trials` in parallel, preserving order.
fn par_trials<T, F>(trials: u64, workers: Option<usize>, f: F) -> Result<Vec<T>, ExperimentError>
where
    T: Send,
    F: Fn(u64) -> Result<T, ExperimentError> + Sync + Send,
{
    with_workers(workers, || (0..trials).into_par_iter().map(f).collect::<Result<Vec<T>, _>>())?
}

fn params(n: u32, variant: Variant) -> Result<ProtocolParams, ExperimentError> {
    ProtocolParams::with_defaults(n, variant).map_err(|e| ExperimentError::Invalid(e.to_string()))
}

fn params_br(n: u32, b: u32, r: u32, variant: Variant) -> Result<ProtocolParams, ExperimentError> {
    ProtocolParams::new(n, b, r, variant).map_err(|e| ExperimentError::Invalid(e.to_string()))
}

fn rat(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

// ---------------------------------------------------------------------------

pub fn t31(cfg: &SuiteConfig) -> Result<Report, ExperimentError> {
    let mut rep = Report::new("t31", cfg);
    let n = 8u32;
    let last = 50u32;
    let spec = ExperimentSpec::new(
        params(n, Variant::RabinOptimized)?,
        AdversarySpec::new("ordered-lockout"),
        Event::True,
        Event::True,
    )
    .stop_after(last)
    .horizon(200_000)
    .seed(cfg.seed);
    let trials = cfg.trials_or(10_000);
    // table[m][w]: rounds 2..=last with |P(k)| = m, w = 1 when pid 1 won.
    let tables = par_trials(trials, cfg.workers, |i| {
        let tr = run_spec_trial(&spec, trial_seed(cfg.seed, i))?;
        let view = TraceView::new(&tr)?;
        let mut t = vec![[0u64; 2]; n as usize + 1];
        for k in 2..=last {
            if let Some(r) = view.rounds.get(k) {
                t[r.participants.len()][usize::from(r.winner == Pid::new(1))] += 1;
            }
        }
        Ok(t)
    })?;
    let mut table = vec![[0u64; 2]; n as usize + 1];
    for t in tables {
        for (a, b) in table.iter_mut().zip(t) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }
    let co: u64 = (2..n as usize).map(|m| table[m][1]).sum();
    rep.check("no_win_with_partial_participation", co == 0, format!("{co} co-occurrences over {trials} traces"));
    let missing: Vec<usize> = (2..n as usize).filter(|&m| table[m][0] + table[m][1] == 0).collect();
    rep.check("every_size_observed", missing.is_empty(), format!("unobserved sizes {missing:?}"));
    for (m, row) in table.iter().enumerate().skip(1) {
        rep.metric(format!("rounds_size_{m}"), (row[0] + row[1]) as f64);
        rep.metric(format!("wins_pid1_size_{m}"), row[1] as f64);
    }

    let small = ExperimentSpec::new(
        params(4, Variant::RabinOptimized)?,
        AdversarySpec::new("ordered-lockout"),
        Event::True,
        Event::True,
    )
    .stop_after(2);
    for k in [2u32] {
        for m in [2u32, 3] {
            let r = enumerate_exact(&ExperimentSpec {
                target: Event::and([Event::win(1, k), Event::size(k, m)]),
                ..small.clone()
            })?;
            rep.check(
                format!("exact_n4_k{k}_m{m}"),
                r.probability.is_zero() && r.total_mass.is_one(),
                format!("P = {} over {} leaves", r.probability, r.leaves),
            );
        }
        let full = enumerate_exact(&ExperimentSpec {
            target: Event::and([Event::win(1, k), Event::size(k, 4)]),
            ..small.clone()
        })?;
        rep.metric(format!("exact_n4_k{k}_full_participation"), &full.probability);
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------

/// Configuration of the survivor-selection experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct Survivor {
    pub n: u32,
    pub r: u32,
    pub levels: Vec<u32>,
    pub per_level: usize,
    pub target_trials: u64,
}

impl Default for Survivor {
    fn default() -> Self {
        Survivor { n: 128, r: 100, levels: vec![16, 32, 64], per_level: 1000, target_trials: 2000 }
    }
}

const SURVIVOR_BATCH: usize = 16;

/// Lottery values of `wanted` survivors selected with `s` tests each, read
/// right after each selection.
pub fn survivor_values(
    q: &ProtocolParams,
    s: u32,
    wanted: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<Vec<u32>, ExperimentError> {
    // Small batches keep enough unstored processes around to close rounds.
    let per_run = ((q.n - 1 - s) as usize).min(SURVIVOR_BATCH);
    let runs = wanted.div_ceil(per_run) as u64;
    let batches = par_trials(runs, workers, |i| {
        let count = per_run.min(wanted - i as usize * per_run);
        let cfg = SurvivorConfig {
            levels: vec![(s, count as u32)],
            prep_only: true,
            ..SurvivorConfig::defaults(q.n)
        };
        let mut adv = SurvivorSelector::new(q.n, cfg)?;
        let seed = trial_seed(seed, i);
        let mut sim = Simulation::new(q.clone(), seed)?;
        let mut seen = 0;
        let mut values = Vec::with_capacity(count);
        drive_observed(&mut sim, &mut adv, &mut adversary_rng(seed), 50_000_000, |sim, adv| {
            for e in &adv.events()[seen..] {
                match e {
                    SelectorEvent::Selected(rec) if values.len() < count => {
                        values.push(sim.state().local(rec.pid).lottery);
                    }
                    _ => {}
                }
            }
            seen = adv.events().len();
        })?;
        Ok(values)
    })?;
    Ok(batches.into_iter().flatten().collect())
}

/// Outcome of one full survivor-selector run.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetRound {
    pub k: u32,
    /// Largest lottery value among processes stepped before the section freed.
    pub max_early: u32,
    pub participants: usize,
    pub target_won: bool,
}

pub fn survivor_target_rounds(
    q: &ProtocolParams,
    trials: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<Vec<TargetRound>, ExperimentError> {
    par_trials(trials, workers, |i| {
        let cfg = SurvivorConfig::defaults(q.n);
        let target = cfg.target;
        let mut adv = SurvivorSelector::new(q.n, cfg)?;
        let seed = trial_seed(seed, i);
        let mut sim = Simulation::new(q.clone(), seed)?;
        let stop = drive_observed(&mut sim, &mut adv, &mut adversary_rng(seed), 50_000_000, |_, _| {})?;
        let k = adv.target_round().ok_or_else(|| ExperimentError::Invalid("target round never reached".into()))?;
        let tr = sim.finish(stop);
        let view = TraceView::new(&tr)?;
        let r = view.rounds.get(k).ok_or_else(|| ExperimentError::Invalid(format!("target round {k} incomplete")))?;
        let at_free = view.snapshot(r.f_k);
        let max_early = tr.run[r.t_start as usize..r.f_k as usize]
            .iter()
            .filter(|t| t.is_try_step())
            .map(|t| at_free.local(t.pid).lottery)
            .max()
            .unwrap_or(0);
        Ok(TargetRound { k, max_early, participants: r.participants.len(), target_won: r.winner == target })
    })
}

pub fn t32_mechanism(cfg: &SuiteConfig, sv: &Survivor) -> Result<Report, ExperimentError> {
    let mut rep = Report::new("t32_mechanism", cfg);
    let q = params_br(sv.n, ceil_log2(u64::from(sv.n)) + 4, sv.r, Variant::RabinOptimized)?;
    rep.metric("r", f64::from(sv.r));
    let base = trunc_geom::<Rational>(q.b);
    for &s in &sv.levels {
        let vals = survivor_values(&q, s, sv.per_level, trial_seed(cfg.seed, u64::from(s)), cfg.workers)?;
        let emp = Dist::<Rational>::empirical(&vals.iter().map(|&v| i64::from(v)).collect::<Vec<_>>())
            .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        let dominated = stochastically_leq(&base, &emp);
        rep.check(format!("dominates_s{s}"), dominated, format!("{} survivors", vals.len()));
        let lg = i64::from(ceil_log2(u64::from(s)));
        let p_hat = emp.tail(lg).to_f64();
        let oracle = max_tail_exact::<Rational>(u64::from(s), lg, Some(q.b)).to_f64();
        rep.check(
            format!("tail_s{s}"),
            p_hat >= 0.8 * oracle,
            format!("P[B >= {lg}] = {p_hat:.4} vs 0.8 * {oracle:.4}"),
        );
        rep.metric(format!("survivor_tail_s{s}"), p_hat);
        rep.metric(format!("max_tail_s{s}"), oracle);
    }

    let trials = cfg.trials_or(sv.target_trials);
    let rounds = survivor_target_rounds(&q, trials, cfg.seed, cfg.workers)?;
    let threshold = ceil_log2(u64::from(sv.n)).saturating_sub(5);
    let high = rounds.iter().filter(|t| t.max_early >= threshold).count() as f64 / rounds.len() as f64;
    rep.check("early_max_high", high >= 0.98, format!("P[max >= {threshold}] = {high:.4}"));
    rep.metric("early_max_high", high);

    let wins = rounds.iter().filter(|t| t.target_won).count() as f64;
    let p_win = wins / rounds.len() as f64;
    let baseline = rounds.iter().map(|t| 1.0 / t.participants as f64).sum::<f64>() / rounds.len() as f64;
    rep.check(
        "target_starved",
        p_win <= baseline / 5.0,
        format!("P[W_1] = {p_win:.5} vs baseline/5 = {:.5}", baseline / 5.0),
    );
    rep.metric("target_win", p_win);
    rep.metric("baseline", baseline);
    rep.metric("mean_participants", rounds.iter().map(|t| t.participants as f64).sum::<f64>() / rounds.len() as f64);
    Ok(rep)
}

// ---------------------------------------------------------------------------

pub fn t34_formula(cfg: &SuiteConfig) -> Result<Report, ExperimentError> {
    let mut rep = Report::new("t34_formula", cfg);
    let eta = 0.3;
    for r in [2u64, 100, 1024] {
        for e in 6..=12 {
            let n = 1u64 << e;
            let sb = t34_series_bound(n, r, eta).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
            rep.check(
                format!("n{n}_r{r}"),
                sb.holds(),
                format!("series {:.4e} vs bound {:.4e} (ratio {:.3})", sb.series, sb.bound, sb.series / sb.bound),
            );
        }
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------

fn round_one_all(n: u32) -> String {
    let mut s: Vec<String> = (1..=n).map(|i| format!("{i}RT")).collect();
    s.push("1TC".into());
    s.join(".")
}

pub fn t35(cfg: &SuiteConfig) -> Result<Report, ExperimentError> {
    let mut rep = Report::new("t35", cfg);
    let n = 8u32;
    let trials = cfg.trials_or(100_000);
    let prefix = Event::prefix(&round_one_all(n)).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    for m in [2u32, 4, 8] {
        let set: Vec<String> = (1..=m).map(|i| i.to_string()).collect();
        let spec = ExperimentSpec::new(
            params(n, Variant::RabinDeoptimized)?,
            AdversarySpec::new("restricted-random").with("set", set.join(",")),
            Event::True,
            Event::True,
        )
        .stop_after(2)
        .trials(trials)
        .seed(trial_seed(cfg.seed, u64::from(m)))
        .workers(cfg.workers);
        let queries: Vec<(Event, Event)> = (1..=m)
            .map(|i| {
                let c = Event::and([
                    Event::NewValues { k: 2 },
                    prefix.clone(),
                    Event::participates(i, 2),
                    Event::size(2, m),
                ]);
                (c, Event::win(i, 2))
            })
            .collect();
        let bound = 2.0 / (3.0 * f64::from(m));
        for (i, r) in (1..=m).zip(estimate_pairs(&spec, &queries)?) {
            let r = r.ok_or(ExperimentError::NoAcceptedTrials { trials })?;
            let lo = bound - 3.0 * r.std_error;
            rep.check(
                format!("m{m}_i{i}"),
                r.estimate >= lo,
                format!("{:.4} >= {:.4} ({} accepted)", r.estimate, lo, r.accepted),
            );
            rep.metric(format!("m{m}_i{i}"), r.estimate);
        }
    }

    // Exact proof equalities at n = m = 3.
    let b = 6;
    let spec = ExperimentSpec::new(
        params_br(3, b, 100, Variant::RabinDeoptimized)?,
        AdversarySpec::new("restricted-random").with("set", "1,2,3").with("seed", cfg.seed.to_string()),
        Event::True,
        Event::True,
    )
    .stop_after(2);
    let prefix = Event::prefix(&round_one_all(3)).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    let cond = Event::and([Event::NewValues { k: 2 }, prefix, Event::size(2, 3)]);
    let u = enumerate_exact(&ExperimentSpec { condition: cond.clone(), target: Event::UniqueMax { k: 2 }, ..spec.clone() })?;
    let want = unique_max_prob::<Rational>(3, b);
    rep.check("exact_unique_max", u.probability == want, format!("{} vs {}", u.probability, want));
    rep.metric("exact_unique_max", &u.probability);
    let cu = Event::and([cond, Event::UniqueMax { k: 2 }]);
    for i in 1..=3u32 {
        let w = enumerate_exact(&ExperimentSpec { condition: cu.clone(), target: Event::win(i, 2), ..spec.clone() })?;
        rep.check(format!("exact_win_given_unique_i{i}"), w.probability == rat(1, 3), w.probability.to_string());
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------

/// Catalog adversaries in a form that keeps producing rounds.
fn catalog_specs() -> Vec<AdversarySpec> {
    CATALOG
        .iter()
        .map(|e| {
            let s = AdversarySpec::new(e.name);
            if e.params.iter().any(|(k, _)| *k == "then") {
                s.with("then", "round-robin")
            } else {
                s
            }
        })
        .collect()
}

/// Most frequent run up to the end of round `k - 1` among `pilots` traces.
pub fn modal_prefix(spec: &ExperimentSpec, k: u32, pilots: u64) -> Result<Option<String>, ExperimentError> {
    let keys = par_trials(pilots, spec.workers, |i| {
        let tr = run_spec_trial(spec, trial_seed(spec.seed ^ 0x5eed_0f_a11, i))?;
        let view = TraceView::new(&tr)?;
        Ok(view.rounds.get(k - 1).map(|r| format_run(&tr.run[..r.t_end as usize])))
    })?;
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for key in keys.into_iter().flatten() {
        *freq.entry(key).or_default() += 1;
    }
    // Ties go to the lexicographically smallest run for determinism.
    Ok(freq.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(s, _)| s))
}

pub fn t36(cfg: &SuiteConfig) -> Result<Report, ExperimentError> {
    let mut rep = Report::new("t36", cfg);
    let n = 8u32;
    let k = 2u32;
    let trials = cfg.trials_or(100_000);
    let bound = 0.1 / f64::from(n);
    for adv in catalog_specs() {
        let name = adv.name.clone();
        let spec = ExperimentSpec::new(params(n, Variant::RabinOptimized)?, adv, Event::True, Event::True)
            .stop_after(k)
            .horizon(1_000_000)
            .trials(trials)
            .seed(cfg.seed)
            .workers(cfg.workers);
        let Some(rho) = modal_prefix(&spec, k, 2_000)? else {
            rep.check(format!("{name}_prefix"), false, "no pilot completed the first round");
            continue;
        };
        let prefix = Event::prefix(&rho).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        let queries: Vec<(Event, Event)> = (1..=n)
            .map(|i| (Event::and([Event::NewValues { k }, prefix.clone(), Event::participates(i, k)]), Event::win(i, k)))
            .collect();
        let mut worst = f64::INFINITY;
        for (i, r) in (1..=n).zip(estimate_pairs(&spec, &queries)?) {
            let Some(r) = r else { continue };
            let lo = bound - 3.0 * r.std_error;
            worst = worst.min(r.estimate - lo);
            rep.check(
                format!("{name}_i{i}"),
                r.estimate >= lo,
                format!("{:.4} >= {:.4} ({} accepted)", r.estimate, lo, r.accepted),
            );
        }
        rep.metric(format!("{name}_margin"), worst);
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------

pub const INFERENCE_PREFIX: &str = "2RT.1RT.1TT.3RT.3TT.4RT.4TC.4CE.4ER.5RT.3TT.3TT";

pub fn t37(cfg: &SuiteConfig) -> Result<Report, ExperimentError> {
    let mut rep = Report::new("t37", cfg);
    let prefix = Event::prefix(INFERENCE_PREFIX).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    let spec = ExperimentSpec::new(
        params_br(5, 7, 100, Variant::RabinOptimized)?,
        AdversarySpec::new("inference-script"),
        prefix,
        Event::RoundChanged { k: 2, pid: Pid::new(1) },
    )
    .trials(cfg.trials_or(1_000_000))
    .seed(cfg.seed)
    .workers(cfg.workers);
    let ex = enumerate_exact(&spec)?;
    let margin = rat(99, 100) - ex.probability.clone();
    rep.check("posterior_below_prior", margin > Rational::zero(), format!("{} ({:.6})", ex.probability, ex.probability.to_f64()));
    rep.metric("posterior", &ex.probability);
    rep.metric("margin", &margin);
    rep.metric("leaves", ex.leaves as f64);
    let mc = estimate(&spec)?;
    let p = ex.probability.to_f64();
    rep.check(
        "montecarlo_agrees",
        mc.contains(p),
        format!("{:.5} in [{:.5}, {:.5}] ({} accepted)", mc.estimate, mc.ci.0, mc.ci.1, mc.accepted),
    );
    rep.metric("montecarlo", mc.estimate);
    Ok(rep)
}

// ---------------------------------------------------------------------------

pub const BEN_OR_PREFIX: &str = "1RT.2RT.2TT.3RT.3TC.3CE.3ER.4RT.1TT.1TT.5RT.5TC.5CE.5ER.6RT.4TT.4TT";

pub fn t38(cfg: &SuiteConfig) -> Result<Report, ExperimentError> {
    let mut rep = Report::new("t38", cfg);
    let prefix = Event::prefix(BEN_OR_PREFIX).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    let p2 = Pid::new(2);
    let spec = ExperimentSpec::new(
        params(6, Variant::BenOr)?,
        AdversarySpec::new("ben-or-lockout"),
        Event::and([prefix, Event::TrySteps { pid: p2, k: 3, min: 2 }]),
        Event::win(2, 3),
    );
    const DEDUCTIONS: [&str; 6] = [
        "first_round_values",
        "second_round_number_changed",
        "second_round_values",
        "third_round_number_changed",
        "third_round_number_is_first",
        "newcomer_holds_one",
    ];
    let mut holds = [true; 6];
    let mut matching = 0u64;
    let mut failure = None;
    let ex = enumerate_with(&spec, |leaf| {
        if !leaf.condition {
            return;
        }
        matching += 1;
        let v = leaf.view;
        let (Some(x1), Some(x2), Some(r1), Some(r2), Some(r3)) =
            (v.values_at_round(1), v.values_at_round(2), v.round_number(1), v.round_number(2), v.round_number(3))
        else {
            failure = Some("matching leaf without three rounds");
            return;
        };
        let now = v.snapshot(BEN_OR_PREFIX.split('.').count() as u64);
        let l = |x: &crate::trace::Snapshot, i: u32| x.local(Pid::new(i));
        holds[0] &= r1 == 0 && l(&x1, 1).lottery == 1 && l(&x1, 2).lottery == 0 && l(&x1, 2).round == Some(r1);
        holds[1] &= r2 != r1;
        holds[2] &= l(&x2, 1).lottery == 0 && l(&x2, 4).lottery == 1;
        holds[3] &= r3 != r2;
        holds[4] &= r3 == r1;
        holds[5] &= l(&now, 6).lottery == 1;
    })?;
    if let Some(f) = failure {
        return Err(ExperimentError::Invalid(f.into()));
    }
    if ex.conditioning_mass.is_zero() {
        return Err(ExperimentError::NullCondition);
    }
    rep.check("zero_win_probability", ex.probability.is_zero(), format!("P = {}", ex.probability));
    rep.metric("probability", &ex.probability);
    rep.metric("conditioning_mass", &ex.conditioning_mass);
    rep.metric("matching_leaves", matching as f64);
    for (name, ok) in DEDUCTIONS.iter().zip(holds) {
        rep.check(*name, ok, format!("over {matching} matching leaves"));
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------

pub fn appendix(cfg: &SuiteConfig) -> Result<Report, ExperimentError> {
    const SLACK: f64 = 1e-12;
    let mut rep = Report::new("appendix", cfg);
    let js: Vec<u32> = (2..=16).collect();
    let grids: Vec<_> = js.par_iter().map(|&j| (j, approx_grid::<Rational>(j, 24))).collect();
    for (j, grid) in grids {
        let bad: Vec<i64> = grid.iter().filter(|p| !p.holds()).map(|p| p.x).collect();
        let worst = grid.iter().map(|p| p.error() / p.bound).fold(0.0, f64::max);
        rep.check(format!("approx_j{j}"), bad.is_empty() && !grid.is_empty(), format!("{} points, worst error/bound {worst:.4}, failing x {bad:?}", grid.len()));
    }
    let e32 = (-32f64).exp();
    let cor: Vec<_> = js
        .par_iter()
        .map(|&j| {
            let s = 1u64 << j;
            let v = i64::from(j);
            let low = max_tail_exact::<Rational>(s, v - 4, None).complement();
            let high = max_tail_exact::<Rational>(s, v + 8, None);
            let points: Vec<Rational> = (0..=5).map(|l| max_point_mass::<Rational>(s, v + l, None)).collect();
            (j, low, high, points)
        })
        .collect();
    for (j, low, high, points) in cor {
        let lf = low.to_f64();
        rep.check(format!("low_tail_j{j}"), lf <= e32 * (1.0 + SLACK), format!("1 - tail = {lf:.4e}"));
        let hi_ok = high <= rat(1, 100) || high.to_f64() <= 0.01 + SLACK;
        rep.check(format!("high_tail_j{j}"), hi_ok, format!("tail = {:.6}", high.to_f64()));
        for (l, p) in points.iter().enumerate() {
            let c = if l == 0 { rat(17, 100) } else { rat(1, 100) };
            let ok = *p >= c || p.to_f64() >= c.to_f64() - SLACK;
            rep.check(format!("point_j{j}_l{l}"), ok, format!("{:.6} >= {}", p.to_f64(), c.to_f64()));
        }
    }
    for b in 2..=10 {
        let d = trunc_geom::<Rational>(b);
        let m = d.max_of(4);
        let ok = cond_tail_check(&d, &d) && cond_tail_check(&d, &m) && cond_tail_check(&m, &d);
        rep.check(format!("conditioned_tail_b{b}"), ok, "independent truncated geometric pairs");
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------

pub fn eq1(cfg: &SuiteConfig) -> Result<Report, ExperimentError> {
    let mut rep = Report::new("eq1", cfg);
    let two_thirds = rat(2, 3);
    // Largest even n <= 1024 for each lottery size.
    let mut by_b: BTreeMap<u32, u64> = BTreeMap::new();
    for n in (2..=1024u64).step_by(2) {
        by_b.insert(ceil_log2(n) + 4, n);
    }
    let mut min = Rational::one();
    for (&b, &n) in &by_b {
        let sweep = unique_max_sweep::<Rational>(n, b);
        let (m, lo) = sweep.iter().enumerate().min_by(|a, b| a.1.cmp(b.1)).map(|(m, p)| (m + 1, p.clone())).unwrap();
        let below: Vec<usize> = (1..=sweep.len()).filter(|&m| sweep[m - 1] < two_thirds).collect();
        rep.check(
            format!("b{b}"),
            below.is_empty(),
            format!("min over m <= {n} at m = {m}: {:.12}; below 2/3 at m in {below:?}", lo.to_f64()),
        );
        if lo < min {
            min = lo;
        }
    }
    rep.metric("minimum", &min);
    let p = unique_max_prob::<Rational>(2, 5);
    rep.check("pair_b5", p == rat(85, 128), p.to_string());
    let d = trunc_geom::<Rational>(5);
    let mut brute = Rational::zero();
    for (x, mx) in d.iter() {
        for (y, my) in d.iter() {
            if x != y {
                brute = brute + mx.clone() * my.clone();
            }
        }
    }
    rep.check("pair_b5_brute_force", brute == p, brute.to_string());
    rep.metric("pair_b5", &p);
    Ok(rep)
}

// ---------------------------------------------------------------------------

const VARIANTS: [Variant; 3] = [Variant::RabinOptimized, Variant::RabinDeoptimized, Variant::BenOr];

/// Per-trace invariant counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InvariantCounts {
    pub traces: u64,
    pub exclusion: u64,
    pub shared_flag: u64,
    pub double_redraw: u64,
    /// Winners that entered without a Try-step after the section freed.
    pub no_free_step: u64,
    /// Winners with three or more free-section steps, by variant index.
    pub slow_winner: [u64; 3],
    /// Of those, the ones not explained by a stale round-number match.
    pub unexplained_slow_winner: u64,
}

impl InvariantCounts {
    fn merge(mut self, o: InvariantCounts) -> Self {
        self.traces += o.traces;
        self.exclusion += o.exclusion;
        self.shared_flag += o.shared_flag;
        self.double_redraw += o.double_redraw;
        self.no_free_step += o.no_free_step;
        for (a, b) in self.slow_winner.iter_mut().zip(o.slow_winner) {
            *a += b;
        }
        self.unexplained_slow_winner += o.unexplained_slow_winner;
        self
    }
}

/// A random small scenario: variant, size and catalog adversary.
pub fn random_scenario(seed: u64) -> Result<ExperimentSpec, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vi = rng.gen_range(0..VARIANTS.len());
    let specs = catalog_specs();
    let mut adv = specs[rng.gen_range(0..specs.len())].clone();
    let need = match adv.name.as_str() {
        "inference-script" => 5,
        "ben-or-lockout" => 6,
        _ => 2,
    };
    let n = rng.gen_range(need..=9u32);
    if adv.name == "restricted-random" {
        let set: Vec<String> = (1..=n).filter(|_| rng.gen_bool(0.6)).map(|i| i.to_string()).collect();
        if !set.is_empty() {
            adv = adv.with("set", set.join(","));
        }
    }
    if adv.name.ends_with("-script") || adv.name == "ben-or-lockout" {
        adv = adv.with("then", "random");
    }
    let q = params(n, VARIANTS[vi])?;
    Ok(ExperimentSpec::new(q, adv, Event::True, Event::True).horizon(600).seed(seed))
}

pub fn check_invariants(view: &TraceView<'_>) -> InvariantCounts {
    let tr = view.trace;
    let n = tr.params.n as usize;
    let mut c = InvariantCounts { traces: 1, ..Default::default() };
    let mut region = vec![Region::Rem; n];
    let mut redraws = vec![0u32; n];
    for m in &tr.steps {
        let t = m.transition;
        region[t.pid.index()] = t.new;
        let occupied = region.iter().filter(|r| matches!(r, Region::Crit | Region::Exit)).count();
        c.exclusion += u64::from(occupied > 1);
        c.shared_flag += u64::from(m.after.occupied != (occupied == 1));
        if m.redraw {
            redraws[t.pid.index()] += 1;
            c.double_redraw += u64::from(redraws[t.pid.index()] == 2);
        }
        if t.is_entry() {
            redraws.iter_mut().for_each(|r| *r = 0);
        }
    }
    let vi = VARIANTS.iter().position(|v| *v == tr.params.variant).unwrap_or(0);
    for r in &view.rounds.rounds {
        let steps = view.try_steps_after_free(r.k, r.winner);
        c.no_free_step += u64::from(steps == 0);
        if steps <= 2 {
            continue;
        }
        c.slow_winner[vi] += 1;
        // A stale value whose round number happens to match neither enters
        // nor redraws, and is not pushed into the shared maximum.
        let explained = (r.f_k..r.t_end).any(|t| {
            let m = &tr.steps[t as usize];
            if m.transition.pid != r.winner || !m.transition.is_try_step() || m.redraw {
                return false;
            }
            let before = view.snapshot(t).local(r.winner);
            tr.params.variant == Variant::RabinDeoptimized
                && before.round == Some(m.before.round)
                && before.lottery > m.before.lottery
        });
        c.unexplained_slow_winner += u64::from(!explained);
    }
    c
}

/// Small scenarios with both an exact value and a Monte Carlo estimate.
pub fn agreement_scenarios() -> Result<Vec<(&'static str, ExperimentSpec)>, ExperimentError> {
    Ok(vec![
        (
            "unique_max_round_robin",
            ExperimentSpec::new(
                params_br(3, 4, 5, Variant::RabinDeoptimized)?,
                AdversarySpec::new("round-robin"),
                Event::size(1, 3),
                Event::UniqueMax { k: 1 },
            )
            .stop_after(1),
        ),
        (
            "round_change_two_processes",
            ExperimentSpec::new(
                params_br(2, 3, 3, Variant::RabinOptimized)?,
                AdversarySpec::new("round-robin"),
                Event::True,
                Event::RoundChanged { k: 2, pid: Pid::new(2) },
            )
            .stop_after(2),
        ),
        (
            "restricted_second_round",
            ExperimentSpec::new(
                params_br(3, 4, 4, Variant::RabinOptimized)?,
                AdversarySpec::new("restricted-random").with("set", "1,2,3").with("seed", "7"),
                Event::participates(1, 2),
                Event::win(1, 2),
            )
            .stop_after(2),
        ),
    ])
}

pub fn infra(cfg: &SuiteConfig) -> Result<Report, ExperimentError> {
    let mut rep = Report::new("infra", cfg);
    let traces = cfg.trials_or(10_000);
    let counts = par_trials(traces, cfg.workers, |i| {
        let spec = random_scenario(trial_seed(cfg.seed, i))?;
        let tr = run_spec_trial(&spec, spec.seed)?;
        Ok(check_invariants(&TraceView::new(&tr)?))
    })?
    .into_iter()
    .fold(InvariantCounts::default(), InvariantCounts::merge);
    rep.check("mutual_exclusion", counts.exclusion == 0, format!("{} violations in {} traces", counts.exclusion, counts.traces));
    rep.check("occupancy_flag", counts.shared_flag == 0, format!("{} mismatches", counts.shared_flag));
    rep.check("one_redraw_per_round", counts.double_redraw == 0, format!("{} violations", counts.double_redraw));
    let slow: u64 = counts.slow_winner.iter().sum();
    rep.check(
        "winner_within_two_free_steps",
        slow == 0 && counts.no_free_step == 0,
        format!(
            "slow winners: optimized {}, deoptimized {}, boolean {}; winners without a free step {}",
            counts.slow_winner[0], counts.slow_winner[1], counts.slow_winner[2], counts.no_free_step
        ),
    );
    rep.check(
        "slow_winners_are_stale_matches",
        counts.slow_winner[0] == 0 && counts.slow_winner[2] == 0 && counts.unexplained_slow_winner == 0,
        format!("{} not explained by a matching stale round number", counts.unexplained_slow_winner),
    );
    rep.metric("deoptimized_slow_winners", counts.slow_winner[1] as f64);

    for (name, spec) in agreement_scenarios()? {
        let exact = enumerate_exact(&spec)?.probability.to_f64();
        let hits = par_trials(100, cfg.workers, |s| {
            let e = estimate(&spec.clone().trials(2_000).seed(trial_seed(cfg.seed ^ 0xa9ee, s)).workers(Some(1)))?;
            Ok(u64::from(e.contains(exact)))
        })?
        .into_iter()
        .sum::<u64>();
        rep.check(format!("agreement_{name}"), hits >= 90, format!("{hits}/100 intervals contain {exact:.5}"));
    }

    let replays = par_trials(200, cfg.workers, |i| {
        let spec = random_scenario(trial_seed(cfg.seed ^ 0x7e91a9, i))?;
        let a = run_spec_trial(&spec, spec.seed)?;
        let b = run_spec_trial(&spec, spec.seed)?;
        let mut sim = Simulation::with_source(spec.params.clone(), ReplaySource::new(a.choices.clone()))?;
        let pids: Vec<Pid> = a.run.iter().map(|t| t.pid).collect();
        sim.run_schedule(&pids)?;
        let c = sim.finish(a.stop);
        Ok(a == b && c.run == a.run && c.steps == a.steps && c.final_state == a.final_state && c.choices == a.choices)
    })?;
    let bad = replays.iter().filter(|ok| !**ok).count();
    rep.check("replay_determinism", bad == 0, format!("{bad} of {} traces differ", replays.len()));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(matches!(theorem_suite("t99", &SuiteConfig::default()), Err(ExperimentError::UnknownSuite(_))));
    }

    #[test]
    fn boolean_lockout_suite_passes() {
        let r = theorem_suite("t38", &SuiteConfig::default()).unwrap();
        assert!(r.pass, "{:?}", r.failed_checks().collect::<Vec<_>>());
        assert_eq!(r.config, SuiteConfig::default());
    }

    #[test]
    fn series_bound_fails_only_for_binary_round_numbers_at_large_n() {
        let r = theorem_suite("t34_formula", &SuiteConfig::default()).unwrap();
        let failed: Vec<&str> = r.failed_checks().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, ["n256_r2", "n512_r2", "n1024_r2", "n2048_r2", "n4096_r2"]);
    }

    #[test]
    fn pairs_are_the_only_sizes_below_two_thirds() {
        let r = eq1(&SuiteConfig::default()).unwrap();
        for c in r.checks.iter().filter(|c| c.name.starts_with('b')) {
            assert!(c.detail.ends_with("below 2/3 at m in [2]"), "{}: {}", c.name, c.detail);
        }
        assert!(r.checks.iter().filter(|c| c.name.starts_with("pair")).all(|c| c.pass));
    }

    #[test]
    fn report_pass_tracks_checks() {
        let mut r = Report::new("x", &SuiteConfig::default());
        r.check("a", true, "");
        assert!(r.pass);
        r.check("b", false, "");
        assert!(!r.pass);
        assert_eq!(r.failed_checks().count(), 1);
    }

    #[test]
    fn invariants_on_a_few_random_scenarios() {
        for i in 0..40 {
            let spec = random_scenario(i).unwrap();
            let tr = run_spec_trial(&spec, spec.seed).unwrap();
            let c = check_invariants(&TraceView::new(&tr).unwrap());
            assert_eq!(
                (c.exclusion, c.shared_flag, c.double_redraw, c.no_free_step, c.unexplained_slow_winner),
                (0, 0, 0, 0, 0)
            );
        }
    }

    #[test]
    fn modal_prefix_of_a_deterministic_script() {
        let spec = ExperimentSpec::new(
            params(5, Variant::RabinOptimized).unwrap(),
            AdversarySpec::new("round-robin"),
            Event::True,
            Event::True,
        )
        .stop_after(2);
        let p = modal_prefix(&spec, 2, 50).unwrap().unwrap();
        assert!(p.starts_with("1RT.2RT.3RT.4RT.5RT."), "{p}");
    }
}
