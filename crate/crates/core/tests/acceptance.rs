//! Acceptance run: one line per criterion.
//!
//! A criterion that is known not to hold is reported as a documented
//! failure. Such a failure is tolerated only if it fails in exactly the
//! documented way; any other failure, or a documented failure that starts
//! passing, makes the run exit nonzero.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rabin_mutex::analysis::{max_tail_exact, t34_series_bound, unique_max_prob};
use rabin_mutex::experiment::suite::{self, Report, SuiteConfig, Survivor};
use rabin_mutex::{Probability, Rational};

enum Verdict {
    Pass(String),
    Documented(String),
    Fail(String),
}

fn failed(rep: &Report) -> BTreeSet<String> {
    rep.failed_checks().map(|c| c.name.clone()).collect()
}

fn describe(rep: &Report) -> String {
    let bad: Vec<String> = rep.failed_checks().map(|c| format!("{}: {}", c.name, c.detail)).collect();
    if bad.is_empty() {
        format!("{} checks", rep.checks.len())
    } else {
        bad.join("; ")
    }
}

fn plain(rep: &Report) -> Verdict {
    if rep.pass {
        Verdict::Pass(describe(rep))
    } else {
        Verdict::Fail(describe(rep))
    }
}

/// Passes only if exactly `names` fail.
fn documented(rep: &Report, names: &[&str], why: &str) -> Verdict {
    let want: BTreeSet<String> = names.iter().map(|s| s.to_string()).collect();
    let got = failed(rep);
    if got == want {
        Verdict::Documented(format!("{why}; {}", describe(rep)))
    } else if got.is_empty() {
        Verdict::Fail(format!("expected {want:?} to fail but everything passed"))
    } else {
        Verdict::Fail(format!("failing checks {got:?}, expected {want:?}: {}", describe(rep)))
    }
}

fn rat(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

fn metric(rep: &Report, name: &str) -> f64 {
    rep.metrics.get(name).unwrap_or_else(|| panic!("{} lacks metric {name}", rep.id)).value
}

fn cfg() -> SuiteConfig {
    SuiteConfig { seed: 1, trials: None, workers: None }
}

fn a1() -> Verdict {
    plain(&suite::t31(&cfg()).unwrap())
}

/// Probability that exactly one of `m` independent truncated geometric
/// draws on `1..=b` holds the maximum, by exhaustive enumeration.
fn unique_max_brute(m: u32, b: u32) -> Rational {
    let mass = |v: u32| if v < b { rat(1, 1 << v) } else { rat(1, 1 << (b - 1)) };
    let mut total = rat(0, 1);
    let mut idx = vec![1u32; m as usize];
    loop {
        let top = *idx.iter().max().unwrap();
        if idx.iter().filter(|&&v| v == top).count() == 1 {
            total = total + idx.iter().fold(rat(1, 1), |p, &v| p * mass(v));
        }
        let mut j = 0;
        loop {
            if j == idx.len() {
                return total;
            }
            idx[j] += 1;
            if idx[j] <= b {
                break;
            }
            idx[j] = 1;
            j += 1;
        }
    }
}

fn a2() -> Verdict {
    // Oracles: brute force over the 25 pairs, and the pair closed form
    // (2/3)(1 - 4^(1-b)) which lies below 2/3 for every b.
    if unique_max_brute(2, 5) != rat(85, 128) || unique_max_prob::<Rational>(2, 5) != rat(85, 128) {
        return Verdict::Fail("pair at b=5 differs from 85/128".into());
    }
    for b in 1..=14u32 {
        let closed = rat(2, 3) * (rat(1, 1) - Rational::new(1, 1i64 << (2 * (b - 1))));
        if unique_max_prob::<Rational>(2, b) != closed || unique_max_brute(2, b.min(8)) != unique_max_prob(2, b.min(8)) {
            return Verdict::Fail(format!("pair formula disagrees at b={b}"));
        }
    }
    for (m, b) in [(3, 4), (4, 5), (5, 5)] {
        if unique_max_brute(m, b) != unique_max_prob::<Rational>(u64::from(m), b) {
            return Verdict::Fail(format!("brute force disagrees at m={m}, b={b}"));
        }
    }
    let rep = suite::eq1(&cfg()).unwrap();
    let bad: Vec<_> = rep.failed_checks().collect();
    let only_pairs = bad.iter().all(|c| c.name.starts_with('b') && c.detail.ends_with("at m in [2]"));
    let want: BTreeSet<String> = (5..=14).map(|b| format!("b{b}")).collect();
    if only_pairs && failed(&rep) == want {
        Verdict::Documented(format!(
            "m=2 gives (2/3)(1-4^(1-b)) < 2/3 at every b; all m >= 3 hold; minimum {:.6}",
            metric(&rep, "minimum")
        ))
    } else {
        Verdict::Fail(describe(&rep))
    }
}

fn a3() -> Verdict {
    // Float oracle for the maximum of s geometric draws: the complement of
    // the tail at v is (1 - 2^(1-v))^s.
    let complement = |s: f64, v: f64| (s * (-(1.0 - v).exp2()).ln_1p()).exp();
    for j in [2u32, 8, 16] {
        let s = f64::from(1u32 << j);
        for x in [-4i64, 0, 3, 8] {
            let v = i64::from(j) + x;
            let want = 1.0 - complement(s, v as f64);
            let got = max_tail_exact::<Rational>(1 << j, v, None).to_f64();
            if (got - want).abs() > 1e-12 {
                return Verdict::Fail(format!("tail at s=2^{j}, v={v}: {got} vs oracle {want}"));
            }
        }
        if complement(s, f64::from(j) - 4.0) > (-32f64).exp() * (1.0 + 1e-12) {
            return Verdict::Fail(format!("oracle low tail fails at j={j}"));
        }
    }
    plain(&suite::appendix(&cfg()).unwrap())
}

fn a4() -> Verdict {
    let rep = suite::t35(&cfg()).unwrap();
    let want = unique_max_brute(3, 6);
    if want != unique_max_prob::<Rational>(3, 6) {
        return Verdict::Fail("unique_max_prob(3,6) disagrees with brute force".into());
    }
    if rep.metrics.get("exact_unique_max").and_then(|m| m.exact.clone()) != Some(want.to_string()) {
        return Verdict::Fail(format!("enumerated unique-max probability is not {want}"));
    }
    plain(&rep)
}

fn a5() -> Verdict {
    let rep = suite::t32_mechanism(&cfg(), &Survivor::default()).unwrap();
    documented(
        &rep,
        &["target_starved"],
        &format!(
            "P[W_1] = {:.5} vs baseline/5 = {:.5}; stored survivors mostly redraw in the target round",
            metric(&rep, "target_win"),
            metric(&rep, "baseline") / 5.0
        ),
    )
}

fn a6() -> Verdict {
    // Independent summation of the series.
    let series = |n: f64, r: f64, eta: f64| -> f64 {
        (6..400).map(|x| (1.0 - f64::from(x)).exp2()).map(|a| a / n * (1.0 - a / r).powf(eta * n)).sum()
    };
    let mut expected_fail = Vec::new();
    for n in (6..=12).map(|e| 1u64 << e) {
        for r in [2u64, 100, 1024] {
            let sb = t34_series_bound(n, r, 0.3).unwrap();
            let oracle = series(n as f64, r as f64, 0.3);
            if ((sb.series - oracle) / oracle).abs() > 1e-9 {
                return Verdict::Fail(format!("series at n={n}, r={r}: {} vs oracle {oracle}", sb.series));
            }
            if oracle > r as f64 / (0.3 * (n * n) as f64) {
                expected_fail.push(format!("n{n}_r{r}"));
            }
        }
    }
    let rep = suite::t34_formula(&cfg()).unwrap();
    let names: Vec<&str> = expected_fail.iter().map(String::as_str).collect();
    if names != ["n256_r2", "n512_r2", "n1024_r2", "n2048_r2", "n4096_r2"] {
        return Verdict::Fail(format!("oracle fails at {names:?}"));
    }
    documented(&rep, &names, "with r=2 the series exceeds the bound from n=256 on, by a factor of about 1/ln 2")
}

fn a7() -> Verdict {
    let rep = suite::t37(&cfg()).unwrap();
    if metric(&rep, "posterior") >= 0.99 {
        return Verdict::Fail(format!("posterior {}", metric(&rep, "posterior")));
    }
    match plain(&rep) {
        Verdict::Pass(_) => Verdict::Pass(format!(
            "posterior {:.6}, margin {:.6}, Monte Carlo {:.6}",
            metric(&rep, "posterior"),
            metric(&rep, "margin"),
            metric(&rep, "montecarlo")
        )),
        v => v,
    }
}

fn a8() -> Verdict {
    let rep = suite::t38(&cfg()).unwrap();
    if rep.metrics.get("probability").and_then(|m| m.exact.as_deref()) != Some("0") {
        return Verdict::Fail("probability is not an exact zero".into());
    }
    plain(&rep)
}

fn a9() -> Verdict {
    plain(&suite::t36(&cfg()).unwrap())
}

fn a10() -> Verdict {
    let rep = suite::infra(&cfg()).unwrap();
    if !rep.checks.iter().any(|c| c.name == "slow_winners_are_stale_matches" && c.pass) {
        return Verdict::Fail(describe(&rep));
    }
    documented(
        &rep,
        &["winner_within_two_free_steps"],
        &format!(
            "{} deoptimized winners needed 3+ steps, each through a stale round-number match",
            metric(&rep, "deoptimized_slow_winners")
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict, u64); 10] = [
        ("A1", a1, 30),
        ("A2", a2, 10),
        ("A3", a3, 5),
        ("A4", a4, 300),
        ("A5", a5, 900),
        ("A6", a6, 5),
        ("A7", a7, 120),
        ("A8", a8, 10),
        ("A9", a9, 300),
        ("A10", a10, 300),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let mut ok = true;
    for (id, f, limit) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let verdict = f();
        let took = start.elapsed();
        let slow = took > Duration::from_secs(limit);
        let time = format!("{:.2} s, limit {limit} s", took.as_secs_f64());
        match verdict {
            Verdict::Pass(d) if !slow => println!("{id} PASS ({time}) {d}"),
            Verdict::Documented(d) if !slow => println!("{id} FAIL (documented: {d}) ({time})"),
            Verdict::Pass(d) | Verdict::Documented(d) => {
                ok = false;
                println!("{id} FAIL (over time budget, {time}) {d}");
            }
            Verdict::Fail(d) => {
                ok = false;
                println!("{id} FAIL ({time}) {d}");
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
