use num_traits::{One, Zero};
use proptest::prelude::*;
use rabin_mutex::adversary::AdversarySpec;
use rabin_mutex::analysis::{max_tail_exact, trunc_geom, unique_max_prob};
use rabin_mutex::engine::Simulation;
use rabin_mutex::experiment::{enumerate_exact, estimate, run_spec_trial, Event, ExperimentSpec};
use rabin_mutex::protocol::{Pid, ProtocolParams, Region, ReplaySource, Variant};
use rabin_mutex::trace::{format_run, parse_run};
use rabin_mutex::{Probability, Rational};

const VARIANTS: [Variant; 3] = [Variant::RabinOptimized, Variant::RabinDeoptimized, Variant::BenOr];
const ADVERSARIES: [&str; 3] = ["random", "round-robin", "ordered-lockout"];

fn spec(variant: usize, n: u32, adversary: usize, horizon: u64) -> ExperimentSpec {
    let q = ProtocolParams::with_defaults(n, VARIANTS[variant]).unwrap();
    ExperimentSpec::new(q, AdversarySpec::new(ADVERSARIES[adversary]), Event::True, Event::True).horizon(horizon)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn at_most_one_process_holds_the_resource(v in 0..3usize, n in 2..7u32, a in 0..3usize, seed: u64) {
        let tr = run_spec_trial(&spec(v, n, a, 400), seed).unwrap();
        let mut region = vec![Region::Rem; n as usize];
        for m in &tr.steps {
            let t = m.transition;
            prop_assert_eq!(region[t.pid.index()], t.old);
            region[t.pid.index()] = t.new;
            let held = region.iter().filter(|r| matches!(r, Region::Crit | Region::Exit)).count();
            prop_assert!(held <= 1);
            prop_assert_eq!(m.after.occupied, held == 1);
        }
    }

    #[test]
    fn each_process_redraws_at_most_once_per_round(v in 0..3usize, n in 2..7u32, a in 0..3usize, seed: u64) {
        let tr = run_spec_trial(&spec(v, n, a, 400), seed).unwrap();
        let mut redraws = vec![0u32; n as usize];
        for m in &tr.steps {
            if m.transition.is_entry() {
                redraws.iter_mut().for_each(|c| *c = 0);
                continue;
            }
            if m.redraw {
                redraws[m.transition.pid.index()] += 1;
                prop_assert!(redraws[m.transition.pid.index()] <= 1);
                prop_assert!(tr.params.lottery_values().contains(&m.drawn.unwrap()));
            }
        }
    }

    #[test]
    fn replaying_the_choice_log_reproduces_the_trace(v in 0..3usize, n in 1..6u32, seed: u64) {
        let s = spec(v, n, 0, 300);
        let tr = run_spec_trial(&s, seed).unwrap();
        let mut sim = Simulation::with_source(s.params.clone(), ReplaySource::new(tr.choices.clone())).unwrap();
        let pids: Vec<Pid> = tr.run.iter().map(|t| t.pid).collect();
        sim.run_schedule(&pids).unwrap();
        let again = sim.finish(tr.stop);
        prop_assert_eq!(&again.steps, &tr.steps);
        prop_assert_eq!(&again.final_state, &tr.final_state);
    }

    #[test]
    fn run_text_round_trips(v in 0..3usize, n in 1..10u32, a in 0..3usize, seed: u64) {
        let tr = run_spec_trial(&spec(v, n, a, 120), seed).unwrap();
        prop_assert_eq!(parse_run(&format_run(&tr.run)).unwrap(), tr.run);
    }

    #[test]
    fn distributions_sum_to_one(b in 1..40u32, s in 1..5000u64) {
        let d = trunc_geom::<Rational>(b);
        prop_assert_eq!(d.masses().iter().cloned().fold(Rational::zero(), |a, m| a + m), Rational::one());
        let mx = d.max_of(s);
        prop_assert_eq!(mx.masses().iter().cloned().fold(Rational::zero(), |a, m| a + m), Rational::one());
        let f = trunc_geom::<f64>(b);
        for (x, y) in f.masses().iter().zip(d.masses()) {
            prop_assert!((x - y.to_f64()).abs() < 1e-15);
        }
    }

    #[test]
    fn max_tail_is_monotone(s in 1..10_000u64, v in 0..30i64) {
        let a = max_tail_exact::<Rational>(s, v, None);
        let b = max_tail_exact::<Rational>(s, v + 1, None);
        prop_assert!(b <= a);
        prop_assert!(max_tail_exact::<Rational>(s + 1, v, None) >= a);
    }

    #[test]
    fn unique_max_is_a_probability(m in 1..200u64, b in 1..20u32) {
        let p = unique_max_prob::<Rational>(m, b);
        prop_assert!(p >= Rational::zero() && p <= Rational::one());
        let f = unique_max_prob::<f64>(m, b);
        prop_assert!((f - p.to_f64()).abs() < 1e-9);
    }

    #[test]
    fn events_round_trip(i in 1..9u32, k in 1..5u32, lo in 0..5u32, span in 0..4u32, neg: bool) {
        let base = Event::and([Event::participates(i, k), Event::Size { k, min: lo, max: lo + span }]);
        let e = if neg { Event::Not(Box::new(base)) } else { Event::Or(vec![base, Event::win(i, k)]) };
        prop_assert_eq!(e.to_string().parse::<Event>().unwrap(), e);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn enumerated_mass_is_exactly_one(v in 0..3usize, n in 1..4u32, b in 2..5u32, r in 2..5u32, k in 1..3u32) {
        let (b, r) = if VARIANTS[v] == Variant::BenOr { (1, 2) } else { (b, r) };
        let q = ProtocolParams::new(n, b, r, VARIANTS[v]).unwrap();
        let s = ExperimentSpec::new(q, AdversarySpec::new("round-robin"), Event::True, Event::win(1, k)).stop_after(k);
        let res = enumerate_exact(&s).unwrap();
        prop_assert_eq!(res.total_mass, Rational::one());
        prop_assert!(res.probability >= Rational::zero() && res.probability <= Rational::one());
    }

    #[test]
    fn worker_count_does_not_change_estimates(n in 2..5u32, seed: u64, w in 2..5usize) {
        let s = spec(0, n, 0, 200).trials(300).seed(seed);
        let one = estimate(&s.clone().workers(Some(1))).unwrap();
        let many = estimate(&s.workers(Some(w))).unwrap();
        prop_assert_eq!(one, many);
    }
}
