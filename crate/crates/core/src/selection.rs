//! Selection rules: thresholds on the selection score `T = g(X)`, the
//! selected test and calibration sets, conformal p-values with a BH step-up,
//! Fisher's optimal two-group division, and the `M_min` sizes used by the
//! FCR-adjusted intervals.
//!
//! Smaller scores are more likely to be selected: every rule produces a
//! threshold `tau` and selects `{j : T_j <= tau}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScopError};
use crate::order_stats::{ceil_rank, floor_rank, SampleSet};
use crate::predictors::{ScoreFn, ScoredUnit};

/// A selection rule and its parameters.
///
/// Textual form (CLI and JSON): `t-cons:B0`, `t-cal:Q`, `t-test:Q`,
/// `t-exch:Q`, `t-top:K`, `t-pos:B0,BETA`, `t-clu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SelectionRule {
    /// Fixed threshold `tau = b0`.
    TCons { b0: f64 },
    /// `q`% quantile of the calibration responses.
    TCal { q: f64 },
    /// `q`% quantile of the test scores; rank `floor(q m / 100)`.
    TTest { q: f64 },
    /// `q`% quantile of the pooled calibration and test scores.
    TExch { q: f64 },
    /// The `k` smallest test scores.
    TTop { k: usize },
    /// BH at level `beta` on conformal p-values for `H0: Y >= b0`.
    TPos { b0: f64, beta: f64 },
    /// Natural break of the pooled scores.
    TClu,
}

impl SelectionRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionRule::TCons { b0 } if !b0.is_finite() => {
                Err(ScopError::Parameter(format!("t-cons threshold must be finite, got {b0}")))
            }
            SelectionRule::TCal { q } | SelectionRule::TTest { q } | SelectionRule::TExch { q }
                if !(q > 0.0 && q <= 100.0) =>
            {
                Err(ScopError::Parameter(format!("quantile level must lie in (0, 100], got {q}")))
            }
            SelectionRule::TTop { k: 0 } => Err(ScopError::Parameter("t-top needs K >= 1".into())),
            SelectionRule::TPos { b0, beta } => {
                if !b0.is_finite() {
                    Err(ScopError::Parameter(format!("t-pos b0 must be finite, got {b0}")))
                } else if !(beta > 0.0 && beta < 1.0) {
                    Err(ScopError::Parameter(format!("t-pos beta must lie in (0, 1), got {beta}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Rules whose selected test set is the `kappa` smallest test scores.
    pub fn is_ranking(&self) -> bool {
        matches!(
            self,
            SelectionRule::TTest { .. } | SelectionRule::TTop { .. } | SelectionRule::TPos { .. }
        )
    }

    /// Rules whose threshold is invariant to permutations of the pooled
    /// calibration and test scores (plus the fixed threshold).
    pub fn is_exchangeable(&self) -> bool {
        matches!(
            self,
            SelectionRule::TCons { .. } | SelectionRule::TExch { .. } | SelectionRule::TClu
        )
    }

    /// Score function `g` the rule is defined on.
    pub fn score_fn(&self) -> ScoreFn {
        match *self {
            SelectionRule::TPos { b0, .. } => ScoreFn::PredictionMinusB0(b0),
            _ => ScoreFn::Prediction,
        }
    }

    /// Same rule with its quantile level replaced; `None` for rules without one.
    pub fn with_quantile(&self, q: f64) -> Option<Self> {
        match self {
            SelectionRule::TCal { .. } => Some(SelectionRule::TCal { q }),
            SelectionRule::TTest { .. } => Some(SelectionRule::TTest { q }),
            SelectionRule::TExch { .. } => Some(SelectionRule::TExch { q }),
            _ => None,
        }
    }
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionRule::TCons { b0 } => write!(f, "t-cons:{b0}"),
            SelectionRule::TCal { q } => write!(f, "t-cal:{q}"),
            SelectionRule::TTest { q } => write!(f, "t-test:{q}"),
            SelectionRule::TExch { q } => write!(f, "t-exch:{q}"),
            SelectionRule::TTop { k } => write!(f, "t-top:{k}"),
            SelectionRule::TPos { b0, beta } => write!(f, "t-pos:{b0},{beta}"),
            SelectionRule::TClu => write!(f, "t-clu"),
        }
    }
}

impl FromStr for SelectionRule {
    type Err = ScopError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| ScopError::Parameter(format!("invalid rule '{s}': {why}"));
        let num = |v: &str| -> Result<f64> {
            let x: f64 = v.trim().parse().map_err(|_| bad(&format!("'{v}' is not a number")))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(bad("parameters must be finite"))
            }
        };
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let need = || args.ok_or_else(|| bad("missing parameter"));
        let rule = match name {
            "t-cons" => SelectionRule::TCons { b0: num(need()?)? },
            "t-cal" => SelectionRule::TCal { q: num(need()?)? },
            "t-test" => SelectionRule::TTest { q: num(need()?)? },
            "t-exch" => SelectionRule::TExch { q: num(need()?)? },
            "t-top" => {
                let k: usize = need()?
                    .trim()
                    .parse()
                    .map_err(|_| bad("K must be a positive integer"))?;
                SelectionRule::TTop { k }
            }
            "t-pos" => {
                let (b0, beta) = need()?
                    .split_once(',')
                    .ok_or_else(|| bad("expected t-pos:B0,BETA"))?;
                SelectionRule::TPos {
                    b0: num(b0)?,
                    beta: num(beta)?,
                }
            }
            "t-clu" if args.is_none() => SelectionRule::TClu,
            "t-clu" => return Err(bad("t-clu takes no parameter")),
            _ => return Err(bad("unknown rule name")),
        };
        rule.validate().map_err(|e| match e {
            ScopError::Parameter(why) => bad(&why),
            other => other,
        })?;
        Ok(rule)
    }
}

impl TryFrom<String> for SelectionRule {
    type Error = ScopError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SelectionRule> for String {
    fn from(r: SelectionRule) -> Self {
        r.to_string()
    }
}

/// Result of applying a rule. Indices are positions in the calibration and
/// test slices the rule was applied to, in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub rule: SelectionRule,
    /// Realized score threshold; `-inf` when nothing is selected by rank.
    pub tau_hat: f64,
    /// Ranking threshold, present for ranking-based rules.
    pub kappa_hat: Option<usize>,
    pub selected_test: Vec<usize>,
    pub selected_cal: Vec<usize>,
    /// Calibration units with `T <= T_(kappa + 1)` of the test scores, where
    /// `kappa` is `kappa_hat` or, for threshold rules, `|selected_test|`.
    /// All of calibration when `kappa = m`.
    pub selected_cal_plus: Option<Vec<usize>>,
    /// Fisher split over identical scores: no real break exists.
    pub degenerate: bool,
}

impl SelectionOutcome {
    /// Rank used for the inflated calibration threshold.
    pub fn inflation_rank(&self) -> usize {
        self.kappa_hat.unwrap_or(self.selected_test.len())
    }
}

/// Conformal p-values of the test units against the null calibration units
/// `C0 = {i : Y_i >= b0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalPValues {
    pub b0: f64,
    /// Selection scores of `C0`, ascending.
    pub null_cal_scores: Vec<f64>,
    /// `p_j = (1 + #{i in C0 : T_i <= T_j}) / (|C0| + 1)`, one per test unit.
    pub p: Vec<f64>,
}

impl ConformalPValues {
    pub fn p_value_of(&self, t: f64) -> f64 {
        let below = self.null_cal_scores.partition_point(|&z| z <= t);
        (1 + below) as f64 / (self.null_cal_scores.len() + 1) as f64
    }
}

/// `M_min` for one selected test unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinSelectionSize {
    pub value: usize,
    /// No substituted score kept the unit selected; `value` fell back to 1.
    pub fallback: bool,
}

fn scores(units: &[ScoredUnit]) -> Vec<f64> {
    units.iter().map(|u| u.t_score).collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_unstable_by(f64::total_cmp);
    v
}

fn cal_responses(cal: &[ScoredUnit], rule: &SelectionRule) -> Result<Vec<f64>> {
    cal.iter()
        .map(|u| {
            u.response.ok_or_else(|| {
                ScopError::Parameter(format!("{rule} needs calibration responses"))
            })
        })
        .collect()
}

/// Apply `rule` to scored calibration and test units.
pub fn apply_rule(
    rule: &SelectionRule,
    cal: &[ScoredUnit],
    test: &[ScoredUnit],
) -> Result<SelectionOutcome> {
    rule.validate()?;
    if test.is_empty() {
        return Err(ScopError::Parameter("the test set is empty".into()));
    }
    let cal_t = scores(cal);
    let test_t = scores(test);
    let m = test.len();
    match *rule {
        SelectionRule::TCons { b0 } => Ok(finish(*rule, b0, None, &cal_t, &test_t, false)),
        SelectionRule::TCal { q } => {
            let y = cal_responses(cal, rule)?;
            let tau = tcal_threshold(q, &y)?;
            Ok(finish(*rule, tau, None, &cal_t, &test_t, false))
        }
        SelectionRule::TTest { q } => {
            let k = floor_rank(q * m as f64 / 100.0).min(m);
            let tau = rank_threshold(&sorted(test_t.clone()), k);
            Ok(finish(*rule, tau, Some(k), &cal_t, &test_t, false))
        }
        SelectionRule::TExch { q } => {
            let pooled = sorted(cal_t.iter().chain(&test_t).copied().collect());
            let k = ceil_rank(q * pooled.len() as f64 / 100.0).clamp(1, pooled.len());
            Ok(finish(*rule, pooled[k - 1], None, &cal_t, &test_t, false))
        }
        SelectionRule::TTop { k } => {
            if k > m {
                return Err(ScopError::Parameter(format!(
                    "t-top K = {k} exceeds the test set size {m}"
                )));
            }
            let tau = rank_threshold(&sorted(test_t.clone()), k);
            Ok(finish(*rule, tau, Some(k), &cal_t, &test_t, false))
        }
        SelectionRule::TPos { b0, beta } => {
            let pv = conformal_pvalues(cal, test, b0)?;
            bh_select(&pv, beta, cal, test)
        }
        SelectionRule::TClu => fisher_split(&SampleSet::new(cal_t)?, &SampleSet::new(test_t)?),
    }
}

fn tcal_threshold(q: f64, y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(ScopError::Parameter("t-cal needs a nonempty calibration set".into()));
    }
    let k = ceil_rank(q * y.len() as f64 / 100.0).clamp(1, y.len());
    Ok(sorted(y.to_vec())[k - 1])
}

/// `T_(k)` of an ascending slice, `-inf` for `k = 0`.
fn rank_threshold(sorted_test: &[f64], k: usize) -> f64 {
    if k == 0 {
        f64::NEG_INFINITY
    } else {
        sorted_test[k - 1]
    }
}

fn below(scores: &[f64], tau: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &t)| t <= tau)
        .map(|(i, _)| i)
        .collect()
}

fn finish(
    rule: SelectionRule,
    tau: f64,
    kappa: Option<usize>,
    cal_t: &[f64],
    test_t: &[f64],
    degenerate: bool,
) -> SelectionOutcome {
    let selected_test = below(test_t, tau);
    let selected_cal = below(cal_t, tau);
    let rank = kappa.unwrap_or(selected_test.len());
    let selected_cal_plus = if rank >= test_t.len() {
        (0..cal_t.len()).collect()
    } else {
        let s = sorted(test_t.to_vec());
        below(cal_t, s[rank])
    };
    SelectionOutcome {
        rule,
        tau_hat: tau,
        kappa_hat: kappa,
        selected_test,
        selected_cal,
        selected_cal_plus: Some(selected_cal_plus),
        degenerate,
    }
}

/// Conformal p-values for `H0_j: Y_j >= b0`. Ties `T_i = T_j` count toward
/// the numerator.
pub fn conformal_pvalues(cal: &[ScoredUnit], test: &[ScoredUnit], b0: f64) -> Result<ConformalPValues> {
    let rule = SelectionRule::TPos { b0, beta: 0.5 };
    let y = cal_responses(cal, &rule)?;
    let null_cal_scores = sorted(
        cal.iter()
            .zip(&y)
            .filter(|(_, &yi)| yi >= b0)
            .map(|(u, _)| u.t_score)
            .collect(),
    );
    if null_cal_scores.is_empty() {
        return Err(ScopError::NoNullCalibration { b0 });
    }
    let mut pv = ConformalPValues {
        b0,
        null_cal_scores,
        p: Vec::new(),
    };
    pv.p = test.iter().map(|u| pv.p_value_of(u.t_score)).collect();
    Ok(pv)
}

/// Largest `r` with `p_(r) <= delta(r)`, or 0 if none.
pub fn step_up_rank(p: &[f64], delta: impl Fn(usize) -> f64) -> usize {
    let s = sorted(p.to_vec());
    (1..=s.len()).rev().find(|&r| s[r - 1] <= delta(r)).unwrap_or(0)
}

/// Benjamini-Hochberg step-up threshold `delta(r) = r beta / m`.
pub fn bh_rank(p: &[f64], beta: f64) -> usize {
    let m = p.len() as f64;
    step_up_rank(p, |r| r as f64 * beta / m)
}

/// BH selection on conformal p-values, returned in score form:
/// `{j : T_j <= T_(kappa)}`.
pub fn bh_select(
    p: &ConformalPValues,
    beta: f64,
    cal: &[ScoredUnit],
    test: &[ScoredUnit],
) -> Result<SelectionOutcome> {
    let rule = SelectionRule::TPos { b0: p.b0, beta };
    rule.validate()?;
    if p.p.len() != test.len() {
        return Err(ScopError::Domain(format!(
            "{} p-values for {} test units",
            p.p.len(),
            test.len()
        )));
    }
    let test_t = scores(test);
    let kappa = bh_rank(&p.p, beta);
    let tau = rank_threshold(&sorted(test_t.clone()), kappa);
    Ok(finish(rule, tau, Some(kappa), &scores(cal), &test_t, false))
}

/// Threshold minimizing the total within-group sum of squares when the
/// pooled scores are cut into `{T <= t}` and `{T > t}`; `t` ranges over the
/// observed scores except the maximum, ties going to the smallest `t`.
pub fn natural_break(pooled: &[f64]) -> Result<(f64, bool)> {
    if pooled.len() < 2 {
        return Err(ScopError::Parameter(format!(
            "a two-group split needs at least 2 scores, got {}",
            pooled.len()
        )));
    }
    let v = sorted(pooled.to_vec());
    let n = v.len();
    // prefix[i] = SSE of v[..=i]; suffix[i] = SSE of v[i..]
    let mut prefix = vec![0.0; n];
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &x) in v.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
        prefix[i] = m2;
    }
    let mut suffix = vec![0.0; n];
    let (mut mean, mut m2) = (0.0, 0.0);
    for (c, i) in (0..n).rev().enumerate() {
        let x = v[i];
        let delta = x - mean;
        mean += delta / (c + 1) as f64;
        m2 += delta * (x - mean);
        suffix[i] = m2;
    }
    let candidates: Vec<(f64, f64)> = (0..n - 1)
        .filter(|&i| v[i] != v[i + 1])
        .map(|i| (prefix[i] + suffix[i + 1], v[i]))
        .collect();
    let Some(min) = candidates.iter().map(|c| c.0).min_by(f64::total_cmp) else {
        return Ok((v[0], true));
    };
    // costs equal up to rounding count as ties
    let tol = TIE_TOLERANCE * (1.0 + min.abs());
    let tau = candidates.iter().find(|c| c.0 <= min + tol).expect("min is attained").1;
    Ok((tau, false))
}

/// Relative slack under which two split costs are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Fisher optimal division over the pooled calibration and test scores.
pub fn fisher_split(cal_scores: &SampleSet, test_scores: &SampleSet) -> Result<SelectionOutcome> {
    let pooled: Vec<f64> = cal_scores.values().iter().chain(test_scores.values()).copied().collect();
    let (tau, degenerate) = natural_break(&pooled)?;
    Ok(finish(
        SelectionRule::TClu,
        tau,
        None,
        cal_scores.values(),
        test_scores.values(),
        degenerate,
    ))
}

/// Smallest size of the selected test set over all substitutions `T_j <- t`
/// that keep unit `j` selected.
pub fn m_min(
    rule: &SelectionRule,
    cal: &[ScoredUnit],
    test: &[ScoredUnit],
    j: usize,
) -> Result<MinSelectionSize> {
    let ctx = MMinContext::new(rule, cal, test)?;
    Ok(ctx.for_unit(j))
}

/// `M_min` for every selected unit, aligned with `outcome.selected_test`.
/// With `simple`, every unit gets `|selected_test|` instead.
pub fn m_min_all(
    rule: &SelectionRule,
    cal: &[ScoredUnit],
    test: &[ScoredUnit],
    outcome: &SelectionOutcome,
    simple: bool,
) -> Result<Vec<MinSelectionSize>> {
    if simple {
        let size = outcome.selected_test.len();
        return Ok(vec![
            MinSelectionSize {
                value: size,
                fallback: false,
            };
            size
        ]);
    }
    let ctx = MMinContext::new(rule, cal, test)?;
    Ok(outcome.selected_test.iter().map(|&j| ctx.for_unit(j)).collect())
}

/// Precomputed, per-rule state shared by the `M_min` evaluations of one
/// selection.
struct MMinContext {
    kind: MMinKind,
    test_t: Vec<f64>,
}

enum MMinKind {
    Fixed(usize),
    /// Threshold that does not move with test scores.
    Static(f64),
    Exch { cal_t: Vec<f64>, rank: usize },
    Pos { pv: ConformalPValues, beta: f64 },
    Clu { cal_t: Vec<f64> },
}

impl MMinContext {
    fn new(rule: &SelectionRule, cal: &[ScoredUnit], test: &[ScoredUnit]) -> Result<Self> {
        rule.validate()?;
        let m = test.len();
        let kind = match *rule {
            SelectionRule::TTop { k } => MMinKind::Fixed(k),
            SelectionRule::TTest { q } => MMinKind::Fixed(floor_rank(q * m as f64 / 100.0).min(m)),
            SelectionRule::TCons { b0 } => MMinKind::Static(b0),
            SelectionRule::TCal { q } => MMinKind::Static(tcal_threshold(q, &cal_responses(cal, rule)?)?),
            SelectionRule::TExch { q } => MMinKind::Exch {
                cal_t: scores(cal),
                rank: ceil_rank(q * (cal.len() + m) as f64 / 100.0).clamp(1, cal.len() + m),
            },
            SelectionRule::TPos { b0, beta } => MMinKind::Pos {
                pv: conformal_pvalues(cal, test, b0)?,
                beta,
            },
            SelectionRule::TClu => MMinKind::Clu { cal_t: scores(cal) },
        };
        Ok(Self {
            kind,
            test_t: scores(test),
        })
    }

    fn for_unit(&self, j: usize) -> MinSelectionSize {
        let others: Vec<f64> = sorted(
            self.test_t
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, &t)| t)
                .collect(),
        );
        let count_le = |tau: f64| others.partition_point(|&t| t <= tau);
        let exact = |value| MinSelectionSize {
            value,
            fallback: false,
        };
        match &self.kind {
            MMinKind::Fixed(k) => exact(*k),
            MMinKind::Static(tau) => exact(count_le(*tau) + 1),
            MMinKind::Exch { cal_t, rank } => {
                let pooled_others = sorted(cal_t.iter().chain(&others).copied().collect());
                let grid = candidate_grid(&others, &pooled_others, true);
                self.grid_min(&grid, |t| {
                    let tau = kth_with_insert(&pooled_others, t, *rank);
                    (t <= tau).then(|| count_le(tau) + 1)
                })
            }
            MMinKind::Pos { pv, beta } => {
                let m = self.test_t.len();
                let p_others = sorted(
                    self.test_t
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != j)
                        .map(|(i, _)| pv.p[i])
                        .collect(),
                );
                let n0 = pv.null_cal_scores.len();
                // p_j(t) only depends on #{null <= t}
                let kappa_by_count: Vec<usize> = (0..=n0)
                    .map(|c| bh_rank_with_insert(&p_others, (1 + c) as f64 / (n0 + 1) as f64, *beta, m))
                    .collect();
                let grid = candidate_grid(&others, &pv.null_cal_scores, true);
                self.grid_min(&grid, |t| {
                    let kappa = kappa_by_count[pv.null_cal_scores.partition_point(|&z| z <= t)];
                    if kappa == 0 {
                        return None;
                    }
                    let tau = kth_with_insert(&others, t, kappa);
                    (t <= tau).then(|| count_le(tau) + 1)
                })
            }
            MMinKind::Clu { cal_t } => {
                let pooled_others: Vec<f64> = sorted(cal_t.iter().chain(&others).copied().collect());
                let grid = candidate_grid(&others, &pooled_others, false);
                self.grid_min(&grid, |t| {
                    let mut pooled = pooled_others.clone();
                    pooled.push(t);
                    let (tau, _) = natural_break(&pooled).ok()?;
                    (t <= tau).then(|| count_le(tau) + 1)
                })
            }
        }
    }

    fn grid_min(&self, grid: &[f64], size_at: impl Fn(f64) -> Option<usize>) -> MinSelectionSize {
        let mut best: Option<usize> = None;
        for &t in grid {
            if let Some(v) = size_at(t) {
                best = Some(best.map_or(v, |b| b.min(v)));
                // unit j itself is always counted
                if v == 1 {
                    break;
                }
            }
        }
        match best {
            Some(value) => MinSelectionSize {
                value,
                fallback: false,
            },
            None => MinSelectionSize {
                value: 1,
                fallback: true,
            },
        }
    }
}

/// Substitute values for `T_j`: `-inf` (or a far-low finite stand-in when
/// `allow_infinite` is false), every breakpoint, the float just below each
/// breakpoint, and one value above the largest. For rules whose selected set
/// is piecewise constant between breakpoints this hits every piece.
/// For the natural-break rule the midpoints between breakpoints are added.
pub(crate) fn candidate_grid(others: &[f64], extra: &[f64], allow_infinite: bool) -> Vec<f64> {
    let mut b: Vec<f64> = others.iter().chain(extra).copied().collect();
    b.sort_unstable_by(f64::total_cmp);
    b.dedup();
    let mut grid = Vec::with_capacity(3 * b.len() + 2);
    if let (Some(&lo), Some(&hi)) = (b.first(), b.last()) {
        if allow_infinite {
            grid.push(f64::NEG_INFINITY);
        } else {
            grid.push(lo - 1e3 * (hi - lo + 1.0));
            grid.extend(b.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        }
        for &x in &b {
            grid.push(x);
            grid.push(x.next_down());
        }
        grid.push(hi.next_up());
    } else {
        grid.push(if allow_infinite { f64::NEG_INFINITY } else { 0.0 });
    }
    grid
}

/// `k`-th smallest (1-based) of `sorted_others` with `t` inserted.
fn kth_with_insert(sorted_others: &[f64], t: f64, k: usize) -> f64 {
    let pos = sorted_others.partition_point(|&x| x < t);
    if k <= pos {
        sorted_others[k - 1]
    } else if k == pos + 1 {
        t
    } else {
        sorted_others[k - 2]
    }
}

/// BH rank over `sorted_others` with one extra p-value `pj` inserted.
fn bh_rank_with_insert(sorted_others: &[f64], pj: f64, beta: f64, m: usize) -> usize {
    let pos = sorted_others.partition_point(|&x| x < pj);
    let at = |r: usize| -> f64 {
        // 1-based order statistic of the merged sequence
        if r <= pos {
            sorted_others[r - 1]
        } else if r == pos + 1 {
            pj
        } else {
            sorted_others[r - 2]
        }
    };
    (1..=m)
        .rev()
        .find(|&r| at(r) <= r as f64 * beta / m as f64)
        .unwrap_or(0)
}
