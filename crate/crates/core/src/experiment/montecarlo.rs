use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_spec_trial, Event, ExperimentError, ExperimentSpec};
use crate::engine::{trial_seed, StopReason};
use crate::trace::TraceView;

const Z95: f64 = 1.959_963_984_540_054;

/// Rejection-sampling estimate of `P[target | condition]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimate: f64,
    /// Wilson 95% interval.
    pub ci: (f64, f64),
    /// `sqrt(p (1 - p) / accepted)`.
    pub std_error: f64,
    pub trials: u64,
    pub accepted: u64,
    pub successes: u64,
    /// Traces cut by the step budget.
    pub horizon_exhausted: u64,
    pub seed: u64,
}

impl EstimateResult {
    pub(crate) fn from_counts(successes: u64, accepted: u64, trials: u64, horizon_exhausted: u64, seed: u64) -> Self {
        let p = successes as f64 / accepted as f64;
        EstimateResult {
            estimate: p,
            ci: wilson(successes, accepted),
            std_error: (p * (1.0 - p) / accepted as f64).sqrt(),
            trials,
            accepted,
            successes,
            horizon_exhausted,
            seed,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci.0 <= p && p <= self.ci.1
    }
}

/// Wilson score interval at 95% for `k` successes out of `n`.
pub fn wilson(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

#[derive(Clone, Debug, Default)]
struct Counts {
    trials: u64,
    horizon: u64,
    accepted: Vec<u64>,
    hits: Vec<u64>,
}

fn add(a: &mut Vec<u64>, b: Vec<u64>) {
    if a.len() < b.len() {
        a.resize(b.len(), 0);
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

impl Counts {
    fn merge(mut self, other: Counts) -> Counts {
        self.trials += other.trials;
        self.horizon += other.horizon;
        add(&mut self.accepted, other.accepted);
        add(&mut self.hits, other.hits);
        self
    }
}

pub(crate) fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, ExperimentError> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Several `(condition, target)` queries answered from the same trials;
/// `spec.condition` and `spec.target` are ignored. A query nobody satisfied
/// comes back as `None`.
pub fn estimate_pairs(
    spec: &ExperimentSpec,
    queries: &[(Event, Event)],
) -> Result<Vec<Option<EstimateResult>>, ExperimentError> {
    let run = |i: u64| -> Result<Counts, ExperimentError> {
        let trace = run_spec_trial(spec, trial_seed(spec.seed, i))?;
        let view = TraceView::new(&trace)?;
        let mut accepted = Vec::with_capacity(queries.len());
        let mut hits = Vec::with_capacity(queries.len());
        for (c, t) in queries {
            let ok = c.eval(&view);
            accepted.push(u64::from(ok));
            hits.push(u64::from(ok && t.eval(&view)));
        }
        Ok(Counts { trials: 1, horizon: u64::from(trace.stop == StopReason::Horizon), accepted, hits })
    };
    let mut counts = with_workers(spec.workers, || {
        (0..spec.trials).into_par_iter().map(run).try_reduce(Counts::default, |a, b| Ok(a.merge(b)))
    })??;
    counts.accepted.resize(queries.len(), 0);
    counts.hits.resize(queries.len(), 0);
    Ok(counts
        .accepted
        .iter()
        .zip(&counts.hits)
        .map(|(&a, &h)| {
            (a > 0).then(|| EstimateResult::from_counts(h, a, counts.trials, counts.horizon, spec.seed))
        })
        .collect())
}

/// Estimates several targets under one condition from the same trials.
pub fn estimate_many(spec: &ExperimentSpec, targets: &[Event]) -> Result<Vec<EstimateResult>, ExperimentError> {
    let queries: Vec<(Event, Event)> = targets.iter().map(|t| (spec.condition.clone(), t.clone())).collect();
    estimate_pairs(spec, &queries)?
        .into_iter()
        .map(|r| r.ok_or(ExperimentError::NoAcceptedTrials { trials: spec.trials }))
        .collect()
}

pub fn estimate(spec: &ExperimentSpec) -> Result<EstimateResult, ExperimentError> {
    Ok(estimate_many(spec, std::slice::from_ref(&spec.target))?.remove(0))
}

/// Two estimates of the same query under different adversaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: EstimateResult,
    pub b: EstimateResult,
    /// `a / b`; `None` when `b` is zero.
    pub ratio: Option<f64>,
    /// Two-proportion z statistic with pooled variance.
    pub z: f64,
    pub significant: bool,
}

pub fn compare_adversaries(a: &ExperimentSpec, b: &ExperimentSpec) -> Result<Comparison, ExperimentError> {
    if a.condition != b.condition || a.target != b.target {
        return Err(ExperimentError::Invalid("compared specs must share condition and target".into()));
    }
    let ea = estimate(a)?;
    let eb = estimate(b)?;
    let pooled = (ea.successes + eb.successes) as f64 / (ea.accepted + eb.accepted) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / ea.accepted as f64 + 1.0 / eb.accepted as f64)).sqrt();
    let z = if se > 0.0 { (ea.estimate - eb.estimate) / se } else { 0.0 };
    let ratio = (eb.estimate > 0.0).then(|| ea.estimate / eb.estimate);
    Ok(Comparison { a: ea, b: eb, ratio, z, significant: z.abs() > Z95 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AdversarySpec;
    use crate::protocol::{ProtocolParams, Variant};

    fn spec(n: u32, adv: &str, condition: Event, target: Event) -> ExperimentSpec {
        let q = ProtocolParams::with_defaults(n, Variant::RabinOptimized).unwrap();
        ExperimentSpec::new(q, AdversarySpec::new(adv), condition, target).stop_after(2).trials(400).seed(5)
    }

    #[test]
    fn wilson_brackets_the_estimate() {
        for (k, n) in [(0, 10), (10, 10), (3, 10), (500, 1000), (1, 100_000)] {
            let (lo, hi) = wilson(k, n);
            let p = k as f64 / n as f64;
            assert!(lo <= p && p <= hi && lo >= 0.0 && hi <= 1.0);
        }
        let (lo, hi) = wilson(50, 100);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
    }

    #[test]
    fn target_equal_to_condition_is_certain() {
        let e = Event::win(1, 2);
        let r = estimate(&spec(3, "random", e.clone(), e)).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.successes, r.accepted);
    }

    #[test]
    fn impossible_condition_is_an_error() {
        let r = estimate(&spec(1, "round-robin", Event::participates(1, 5), Event::True));
        assert!(matches!(r, Err(ExperimentError::NoAcceptedTrials { .. })));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = spec(4, "random", Event::participates(2, 2), Event::win(2, 2));
        let one = estimate(&s.clone().workers(Some(1))).unwrap();
        let three = estimate(&s.clone().workers(Some(3))).unwrap();
        assert_eq!(one, three);
        assert_eq!(one, estimate(&s).unwrap());
    }

    #[test]
    fn identical_specs_compare_to_ratio_one() {
        let s = spec(4, "random", Event::participates(2, 2), Event::win(2, 2));
        let c = compare_adversaries(&s, &s).unwrap();
        assert_eq!(c.ratio, Some(1.0));
        assert!(!c.significant);
    }

    #[test]
    fn paired_queries_match_single_estimates() {
        let s = spec(4, "random", Event::True, Event::True);
        let queries = vec![
            (Event::participates(2, 2), Event::win(2, 2)),
            (Event::participates(3, 2), Event::win(3, 2)),
            (Event::participates(1, 9), Event::True),
        ];
        let got = estimate_pairs(&s, &queries).unwrap();
        for (q, r) in queries.iter().zip(&got).take(2) {
            let single = estimate(&ExperimentSpec { condition: q.0.clone(), target: q.1.clone(), ..s.clone() });
            assert_eq!(r.as_ref(), Some(&single.unwrap()));
        }
        assert_eq!(got[2], None);
    }
}
