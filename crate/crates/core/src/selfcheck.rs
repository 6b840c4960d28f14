//! Deterministic property suite run by `scop selfcheck`.
//!
//! Each check compares library routines against a brute-force oracle on
//! seeded random instances and counts mismatches. No Monte Carlo
//! tolerances are involved: every comparison is exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::order_stats::{ceil_rank, drop_one_rank, kth_smallest, SampleSet};
use crate::predictors::ScoredUnit;
use crate::selection::{apply_rule, bh_rank, conformal_pvalues, m_min, natural_break, SelectionRule, TIE_TOLERANCE};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, if any.
    pub first_failure: Option<String>,
}

impl CheckReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(describe());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

/// Instance counts of the suite.
#[derive(Debug, Clone, Copy)]
pub struct SuiteSize {
    pub max_sample: usize,
    pub dual_form: usize,
    pub m_min: usize,
    pub m_min_grid: usize,
    pub fisher: usize,
}

impl Default for SuiteSize {
    fn default() -> Self {
        Self {
            max_sample: 200,
            dual_form: 1000,
            m_min: 200,
            m_min_grid: 10_000,
            fisher: 200,
        }
    }
}

pub fn run_all(seed: u64, size: SuiteSize) -> Vec<CheckReport> {
    vec![
        quantile_bounds(seed, size.max_sample),
        drop_one_identities(seed.wrapping_add(1), size.max_sample.min(60)),
        dual_form(seed.wrapping_add(2), size.dual_form),
        m_min_dense_grid(seed.wrapping_add(3), size.m_min, size.m_min_grid),
        fisher_exhaustive(seed.wrapping_add(4), size.fisher),
    ]
}

fn distinct_sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // continuous draws are distinct with probability one; dedup guards the rest
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 20.0 - 10.0).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        s.dedup();
        if s.len() == n {
            return v;
        }
    }
}

/// For `q` the `ceil(n (1 - alpha))`-th smallest value:
/// `#{x > q} <= alpha n` always, and `#{x > q} >= alpha n - 1` for distinct
/// values. Counts are compared as integers against `floor`/`ceil` of
/// `alpha n`.
pub fn quantile_bounds(seed: u64, max_n: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("quantile exceedance bounds");
    for n in 1..=max_n {
        for _ in 0..5 {
            let alpha: f64 = rng.random_range(0.001..0.999);
            let distinct = distinct_sample(&mut rng, n);
            // a tied sample for the upper bound
            let tied: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..5u8))).collect();
            let k = ceil_rank(n as f64 * (1.0 - alpha)).max(1);
            let an = alpha * n as f64;
            for (v, check_lower) in [(&distinct, true), (&tied, false)] {
                let q = kth_smallest(&SampleSet::new(v.clone()).expect("finite"), k).expect("k in range");
                let above = v.iter().filter(|&&x| x > q).count();
                let upper_ok = above <= (an + 1e-9).floor() as usize;
                let lower_ok = !check_lower || above + 1 >= (an - 1e-9).ceil() as usize;
                report.record(upper_ok && lower_ok, || {
                    format!("n={n} alpha={alpha} above={above} k={k}")
                });
            }
        }
    }
    report
}

/// Drop-one rank identities: the case split equals remove-then-sort, and
/// `x_j <= x_(r)` iff `x_j <= (r-th smallest without x_j)`.
pub fn drop_one_identities(seed: u64, max_n: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("drop-one rank identities");
    for n in 2..=max_n.max(2) {
        let v = distinct_sample(&mut rng, n);
        let s = SampleSet::new(v.clone()).expect("finite");
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        for (j, &xj) in v.iter().enumerate() {
            let mut rest = v.clone();
            rest.remove(j);
            rest.sort_by(f64::total_cmp);
            for r in 1..n {
                let got = drop_one_rank(&s, xj, r).expect("valid case");
                let same = got == rest[r - 1];
                let iff = (xj <= sorted[r - 1]) == (xj <= got);
                report.record(same && iff, || format!("n={n} j={j} r={r} got={got} want={}", rest[r - 1]));
            }
        }
    }
    report
}

fn random_units(rng: &mut ChaCha8Rng, n: usize, labeled: bool) -> Vec<ScoredUnit> {
    (0..n)
        .map(|i| {
            let mu: f64 = rng.random_range(-3.0..3.0);
            let y = labeled.then(|| mu + rng.random_range(-2.0..2.0));
            ScoredUnit::new(i, mu, mu, y)
        })
        .collect()
}

/// BH on conformal p-values selects `{p_i <= p_(kappa)}`, which equals the
/// score form `{T_i <= T_(kappa)}` returned by the rule.
pub fn dual_form(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("BH p-value / score dual form");
    while report.cases < instances {
        let n = rng.random_range(5..60);
        let m = rng.random_range(1..40);
        let b0: f64 = rng.random_range(-2.0..1.0);
        let beta: f64 = rng.random_range(0.05..0.6);
        let cal = random_units(&mut rng, n, true);
        let test = random_units(&mut rng, m, false);
        let nulls: Vec<f64> = cal
            .iter()
            .filter(|u| u.response.expect("labeled") >= b0)
            .map(|u| u.t_score)
            .collect();
        if nulls.is_empty() {
            continue;
        }
        // oracle p-values by direct counting, BH by scanning all ranks
        let p: Vec<f64> = test
            .iter()
            .map(|u| (1 + nulls.iter().filter(|&&z| z <= u.t_score).count()) as f64 / (nulls.len() + 1) as f64)
            .collect();
        let mut ps = p.clone();
        ps.sort_by(f64::total_cmp);
        let kappa = (1..=m).filter(|&r| ps[r - 1] <= r as f64 * beta / m as f64).max().unwrap_or(0);
        let by_p: Vec<usize> = if kappa == 0 {
            Vec::new()
        } else {
            (0..m).filter(|&i| p[i] <= ps[kappa - 1]).collect()
        };
        let rule = SelectionRule::TPos { b0, beta };
        let pv = conformal_pvalues(&cal, &test, b0).expect("nonempty nulls");
        let out = apply_rule(&rule, &cal, &test).expect("valid instance");
        let ok = pv.p == p && bh_rank(&pv.p, beta) == kappa && out.kappa_hat == Some(kappa) && out.selected_test == by_p;
        report.record(ok, || format!("n={n} m={m} b0={b0} beta={beta} kappa={kappa} got={:?}", out.kappa_hat));
    }
    report
}

/// Scores on a 0.01 lattice in `[-2, 2)`, so that the dense grid contains
/// every breakpoint and interior points of every piece.
fn lattice_units(rng: &mut ChaCha8Rng, n: usize, labeled: bool) -> Vec<ScoredUnit> {
    (0..n)
        .map(|i| {
            let t = f64::from(rng.random_range(-200..200i32)) / 100.0;
            let y = labeled.then(|| t + f64::from(rng.random_range(-100..100i32)) / 100.0);
            ScoredUnit::new(i, t, t, y)
        })
        .collect()
}

/// `M_min` from the breakpoint grid equals the minimum over a dense grid of
/// substituted scores, each evaluated by re-running the rule.
pub fn m_min_dense_grid(seed: u64, instances: usize, grid: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("M_min vs dense-grid brute force");
    while report.cases < instances {
        let n = rng.random_range(8..25);
        let m = rng.random_range(3..15);
        let rule = match rng.random_range(0..4) {
            0 => SelectionRule::TExch { q: f64::from(rng.random_range(10..90u8)) },
            1 => SelectionRule::TPos { b0: 0.0, beta: rng.random_range(0.2..0.8) },
            2 => SelectionRule::TCons { b0: rng.random_range(-1.0..1.0) },
            _ => SelectionRule::TCal { q: f64::from(rng.random_range(10..90u8)) },
        };
        let cal = lattice_units(&mut rng, n, true);
        let test = lattice_units(&mut rng, m, false);
        let Ok(out) = apply_rule(&rule, &cal, &test) else { continue };
        if out.selected_test.is_empty() {
            continue;
        }
        let j = out.selected_test[rng.random_range(0..out.selected_test.len())];
        let got = m_min(&rule, &cal, &test, j).expect("valid instance");
        // k / (100 s) hits every lattice score exactly, plus s - 1 points
        // strictly inside each lattice cell
        let s = (grid / 600).max(1) as i64;
        let mut sub = test.clone();
        let brute = (-300 * s..=300 * s)
            .filter_map(|k| {
                sub[j].t_score = k as f64 / (100 * s) as f64;
                let o = apply_rule(&rule, &cal, &sub).ok()?;
                o.selected_test.contains(&j).then_some(o.selected_test.len())
            })
            .min();
        report.record(brute == Some(got.value), || {
            format!("{rule} n={n} m={m} j={j} grid={:?} brute={brute:?}", got.value)
        });
    }
    report
}

fn sse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum()
}

/// Natural break equals the exhaustive search: every observed value below
/// the maximum as a cut, cost recomputed from scratch by two-pass sums.
pub fn fisher_exhaustive(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("natural break vs exhaustive SSE");
    for case in 0..instances {
        let n = rng.random_range(2..80);
        let v: Vec<f64> = match case % 3 {
            // two separated clumps
            0 => (0..n)
                .map(|_| rng.random::<f64>() + if rng.random::<bool>() { 5.0 } else { 0.0 })
                .collect(),
            // small integers with ties
            1 => (0..n).map(|_| f64::from(rng.random_range(0..6u8))).collect(),
            _ => (0..n).map(|_| rng.random::<f64>() * 10.0).collect(),
        };
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut cuts: Vec<f64> = v.iter().copied().filter(|&t| t < max).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let costs: Vec<(f64, f64)> = cuts
            .iter()
            .map(|&t| {
                let lo: Vec<f64> = v.iter().copied().filter(|&x| x <= t).collect();
                let hi: Vec<f64> = v.iter().copied().filter(|&x| x > t).collect();
                (sse(&lo) + sse(&hi), t)
            })
            .collect();
        let want = match costs.iter().map(|c| c.0).min_by(f64::total_cmp) {
            None => (v.iter().copied().fold(f64::INFINITY, f64::min), true),
            Some(min) => (
                costs
                    .iter()
                    .find(|c| c.0 <= min + TIE_TOLERANCE * (1.0 + min.abs()))
                    .expect("attained")
                    .1,
                false,
            ),
        };
        let got = natural_break(&v).expect("n >= 2");
        report.record(got == want, || format!("n={n} got={got:?} want={want:?}"));
    }
    report
}
