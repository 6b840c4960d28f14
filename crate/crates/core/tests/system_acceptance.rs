//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Monte Carlo criteria use 1000 repetitions, n = m = 200,
//! alpha = 0.1 and master seed 2024.

use std::process::Command;
use std::time::{Duration, Instant};

use scop::intervals::{Method, ScoreKind};
use scop::selection::SelectionRule;
use scop::selfcheck::{run_all, SuiteSize};
use scop::simulate::{run_experiment, sweep, ExperimentConfig, ExperimentResult, Scenario, SweepParam};

const SEED: u64 = 2024;
const FCR_TOL: f64 = 0.015;
const LENGTH_REL_TOL: f64 = 0.08;
const TIME_LIMIT: Duration = Duration::from_secs(120);

/// One numeric comparison within a criterion.
struct Check {
    label: String,
    ok: bool,
}

#[derive(Default)]
struct Criterion {
    checks: Vec<Check>,
}

impl Criterion {
    fn check(&mut self, label: impl Into<String>, ok: bool) {
        self.checks.push(Check { label: label.into(), ok });
    }

    fn fcr_near(&mut self, r: &ExperimentResult, m: Method, target: f64) {
        let f = fcr(r, m);
        self.check(format!("{m} fcr {f:.4} vs {target}±{FCR_TOL}"), (f - target).abs() <= FCR_TOL);
    }

    fn length_near(&mut self, r: &ExperimentResult, m: Method, target: f64) {
        let len = r.summary(m).and_then(|s| s.mean_length).unwrap_or(f64::NAN);
        let ok = ((len - target) / target).abs() <= LENGTH_REL_TOL;
        self.check(format!("{m} length {len:.3} vs {target}±8%"), ok);
    }

    fn fcr_in(&mut self, r: &ExperimentResult, m: Method, lo: f64, hi: f64) {
        let f = fcr(r, m);
        self.check(format!("{m} fcr {f:.4} in [{lo}, {hi}]"), (lo..=hi).contains(&f));
    }

    fn timed<T>(&mut self, what: &str, run: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        self.check(format!("{what} {:.1}s", elapsed.as_secs_f64()), elapsed < TIME_LIMIT);
        out
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

fn fcr(r: &ExperimentResult, m: Method) -> f64 {
    r.summary(m).map_or(f64::NAN, |s| s.fcr)
}

fn config(scenario: Scenario, rule: SelectionRule, methods: &[Method]) -> ExperimentConfig {
    ExperimentConfig {
        methods: methods.to_vec(),
        master_seed: SEED,
        ..ExperimentConfig::simulation(scenario, rule)
    }
}

/// The SCOP variant matched to the rule: the inflated threshold for
/// ranking rules.
fn scop_for(rule: &SelectionRule) -> Method {
    if rule.is_ranking() {
        Method::ScopPlus
    } else {
        Method::Scop
    }
}

fn run(c: &mut Criterion, cfg: &ExperimentConfig) -> Option<ExperimentResult> {
    match c.timed("run", || run_experiment(cfg)) {
        Ok(r) => Some(r),
        Err(e) => {
            c.check(format!("run failed: {e}"), false);
            None
        }
    }
}

const ALL: [Method; 4] = [Method::Scop, Method::ScopPlus, Method::Ocp, Method::Acp];

fn scenario_a_cons(c: &mut Criterion) -> Option<ExperimentResult> {
    run(c, &config(Scenario::A, SelectionRule::TCons { b0: -1.0 }, &ALL))
}

fn criterion_1(c: &mut Criterion, r: &ExperimentResult) {
    c.fcr_near(r, Method::Scop, 0.0976);
    c.length_near(r, Method::Scop, 11.83);
    c.fcr_near(r, Method::Ocp, 0.1467);
    c.length_near(r, Method::Ocp, 9.91);
    c.fcr_near(r, Method::Acp, 0.0491);
    c.length_near(r, Method::Acp, 14.87);
}

fn criterion_2(c: &mut Criterion) {
    let rule = SelectionRule::TTop { k: 60 };
    let Some(r) = run(c, &config(Scenario::A, rule, &[scop_for(&rule), Method::Ocp, Method::Acp])) else { return };
    c.fcr_near(&r, scop_for(&rule), 0.0973);
    c.fcr_near(&r, Method::Ocp, 0.1526);
    c.fcr_near(&r, Method::Acp, 0.0490);
}

fn criterion_3(c: &mut Criterion) {
    let Some(r) = run(c, &config(Scenario::B, SelectionRule::TCons { b0: -8.0 }, &[Method::Scop, Method::Ocp, Method::Acp])) else {
        return;
    };
    c.fcr_near(&r, Method::Scop, 0.0999);
    c.length_near(&r, Method::Scop, 5.03);
    c.fcr_near(&r, Method::Ocp, 0.1225);
    c.fcr_near(&r, Method::Acp, 0.0505);
}

fn criterion_4(c: &mut Criterion) {
    let rule = SelectionRule::TPos { b0: -1.0, beta: 0.2 };
    let scop = scop_for(&rule);
    let Some(r) = run(c, &config(Scenario::A, rule, &[scop, Method::Ocp])) else { return };
    let (s, o) = (fcr(&r, scop), fcr(&r, Method::Ocp));
    c.check(format!("{scop} fcr {s:.4} <= 0.085"), s <= 0.085);
    c.check(format!("ocp fcr {o:.4} >= 0.115"), o >= 0.115);
    let fdr = r.selection_fdr.unwrap_or(f64::NAN);
    c.check(format!("selection fdr {fdr:.4} <= 0.22"), fdr <= 0.22);
}

fn criterion_5(c: &mut Criterion) {
    let template = config(Scenario::A, SelectionRule::TExch { q: 50.0 }, &[Method::Scop, Method::Ocp]);
    let qs = vec![20.0, 40.0, 60.0, 80.0, 100.0];
    let points = match c.timed("sweep", || sweep(&template, &SweepParam::Quantile(qs))) {
        Ok(p) => p,
        Err(e) => return c.check(format!("sweep failed: {e}"), false),
    };
    for p in &points {
        let q = match p.result.config.rule {
            SelectionRule::TExch { q } => q,
            _ => unreachable!(),
        };
        let (s, o) = (fcr(&p.result, Method::Scop), fcr(&p.result, Method::Ocp));
        c.check(format!("q={q} scop {s:.4} in [0.08, 0.12]"), (0.08..=0.12).contains(&s));
        let in_band = (0.08..=0.12).contains(&o);
        if q == 100.0 {
            c.check(format!("q={q} ocp {o:.4} in [0.08, 0.12]"), in_band);
        } else {
            c.check(format!("q={q} ocp {o:.4} outside [0.08, 0.12]"), !in_band);
        }
        if q == 20.0 {
            c.check(format!("q={q} ocp {o:.4} >= 0.115"), o >= 0.115);
        }
    }
}

fn criterion_6(c: &mut Criterion, r: &ExperimentResult) {
    let gap = (fcr(r, Method::Scop) - fcr(r, Method::ScopPlus)).abs();
    c.check(format!("|fcr gap| {gap:.4} <= 0.01"), gap <= 0.01);
    let len = |m| r.summary(m).and_then(|s| s.mean_length).unwrap_or(f64::NAN);
    let lgap = (len(Method::Scop) - len(Method::ScopPlus)).abs();
    c.check(format!("|length gap| {lgap:.3} <= 0.15"), lgap <= 0.15);
}

fn criterion_7(c: &mut Criterion) {
    let mut cfg = config(Scenario::A, SelectionRule::TCons { b0: -1.0 }, &[Method::Scop]);
    cfg.score_kind = ScoreKind::Cqr;
    let Some(r) = run(c, &cfg) else { return };
    c.fcr_in(&r, Method::Scop, 0.075, 0.115);
}

fn criterion_8(c: &mut Criterion) {
    let Some(r) = run(c, &config(Scenario::A, SelectionRule::TExch { q: 50.0 }, &[Method::Scop])) else { return };
    let f = fcr(&r, Method::Scop);
    c.check(format!("scop fcr {f:.4} >= 0.08"), f >= 0.08);
}

fn criterion_9(c: &mut Criterion) {
    for r in run_all(0, SuiteSize::default()) {
        c.check(format!("{} {}/{}", r.name, r.cases - r.failures, r.cases), r.passed());
    }
}

fn binary_output(args: &[&str], out: &std::path::Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_scop"))
        .args(args)
        .arg("--out")
        .arg(out)
        .status()
        .expect("spawn scop");
    assert!(status.success(), "scop {args:?} exited with {status}");
    std::fs::read(out).expect("read output")
}

fn criterion_10(c: &mut Criterion) {
    let dir = tempfile::tempdir().expect("temp dir");
    let configs: [&[&str]; 3] = [
        &["simulate", "--rule", "t-pos:-1,0.2", "--methods", "scop-plus,ocp,acp", "--reps", "200", "--seed", "9", "--format", "json"],
        &["simulate", "--scenario", "C", "--rule", "t-clu", "--methods", "scop,ocp,acp", "--reps", "200", "--seed", "9"],
        &["sweep", "--rule", "t-exch:50", "--q", "30,70", "--reps", "100", "--seed", "9"],
    ];
    for (i, args) in configs.iter().enumerate() {
        let path = |tag: &str| dir.path().join(format!("{i}-{tag}"));
        let a = binary_output(args, &path("a"));
        let b = binary_output(args, &path("b"));
        let mut one = args.to_vec();
        one.extend(["--threads", "1"]);
        let t1 = binary_output(&one, &path("t1"));
        c.check(format!("{} repeat identical", args[..3].join(" ")), a == b);
        c.check(format!("{} 1 thread identical", args[..3].join(" ")), a == t1);
    }
}

fn report(id: usize, title: &str, c: &Criterion, elapsed: Duration) -> bool {
    let ok = c.passed();
    let detail: Vec<String> = c
        .checks
        .iter()
        .map(|ch| if ch.ok { ch.label.clone() } else { format!("[x] {}", ch.label) })
        .collect();
    println!(
        "{} {id:>2} {title}: {} ({:.1}s)",
        if ok { "PASS" } else { "FAIL" },
        detail.join("; "),
        elapsed.as_secs_f64()
    );
    ok
}

fn main() {
    let mut all_ok = true;
    let mut section = |id: usize, title: &str, body: &mut dyn FnMut(&mut Criterion)| {
        let start = Instant::now();
        let mut c = Criterion::default();
        body(&mut c);
        all_ok &= report(id, title, &c, start.elapsed());
    };

    let mut shared = Criterion::default();
    let start = Instant::now();
    let a_cons = scenario_a_cons(&mut shared);
    let shared_time = start.elapsed();

    section(1, "Scenario A t-cons:-1 fcr and lengths", &mut |c| {
        c.checks.extend(shared.checks.iter().map(|ch| Check { label: ch.label.clone(), ok: ch.ok }));
        if let Some(r) = &a_cons {
            criterion_1(c, r);
        }
    });
    println!("      (shared Scenario A t-cons:-1 run: {:.1}s)", shared_time.as_secs_f64());
    section(2, "Scenario A t-top:60 fcr", &mut criterion_2);
    section(3, "Scenario B t-cons:-8 fcr and length", &mut criterion_3);
    section(4, "Scenario A t-pos:-1,0.2 fcr and selection fdr", &mut criterion_4);
    section(5, "t-exch quantile sweep", &mut criterion_5);
    section(6, "scop vs scop-plus agreement", &mut |c| match &a_cons {
        Some(r) => criterion_6(c, r),
        None => c.check("shared run missing", false),
    });
    section(7, "CQR score fcr level", &mut criterion_7);
    section(8, "lower bound at t-exch:50", &mut criterion_8);
    section(9, "deterministic property suite", &mut criterion_9);
    section(10, "byte-identical reruns and thread counts", &mut criterion_10);

    if !all_ok {
        std::process::exit(1);
    }
}
