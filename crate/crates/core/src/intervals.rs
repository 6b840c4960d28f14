//! Prediction intervals for selected test units and their realized coverage.
//!
//! Every interval is a base band widened by a calibrated width: the band is
//! `[mu_hat, mu_hat]` for absolute-residual scores and `[q_lo, q_hi]` for
//! CQR scores, and the interval is `[band.lo - w, band.hi + w]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScopError};
use crate::order_stats::{check_alpha, conformal_quantile_sorted};
use crate::selection::{MinSelectionSize, SelectionOutcome};

/// How the calibrated width is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Ordinary split conformal: quantile over all calibration scores.
    Ocp,
    /// FCR-adjusted: per-unit level `alpha * M_min / m` over all calibration scores.
    Acp,
    /// Quantile over calibration units passing the realized threshold.
    Scop,
    /// Quantile over calibration units passing `T_(kappa + 1)`.
    ScopPlus,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Scop, Method::Ocp, Method::Acp, Method::ScopPlus];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ocp => "ocp",
            Method::Acp => "acp",
            Method::Scop => "scop",
            Method::ScopPlus => "scop-plus",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ScopError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ScopError::Parameter(format!("unknown method '{s}' (expected scop, scop-plus, ocp or acp)")))
    }
}

/// Nonconformity score family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    /// `|y - mu_hat(x)|`
    #[serde(rename = "abs")]
    AbsResidual,
    /// `max(q_lo(x) - y, y - q_hi(x))`
    #[serde(rename = "cqr")]
    Cqr,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::AbsResidual => "abs",
            ScoreKind::Cqr => "cqr",
        })
    }
}

impl FromStr for ScoreKind {
    type Err = ScopError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(ScoreKind::AbsResidual),
            "cqr" => Ok(ScoreKind::Cqr),
            _ => Err(ScopError::Parameter(format!("unknown score '{s}' (expected abs or cqr)"))),
        }
    }
}

/// Base band of one test unit before widening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn point(mu_hat: f64) -> Self {
        Self { lo: mu_hat, hi: mu_hat }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionInterval {
    /// Position of the unit in the test set.
    pub unit: usize,
    pub lo: f64,
    pub hi: f64,
    pub method: Method,
    pub score_kind: ScoreKind,
}

impl PredictionInterval {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn covers(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

/// Realized coverage of one repetition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    /// `#misses / max(|selected|, 1)`.
    pub fcp: f64,
    /// Mean interval length; `None` when nothing is selected or some
    /// interval is unbounded.
    pub avg_length: Option<f64>,
    pub n_selected: usize,
    /// At least one interval is the whole real line.
    pub infinite: bool,
}

fn widen(unit: usize, band: Band, w: f64, method: Method, score_kind: ScoreKind) -> PredictionInterval {
    PredictionInterval {
        unit,
        lo: band.lo - w,
        hi: band.hi + w,
        method,
        score_kind,
    }
}

fn sorted_scores(scores: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(ScopError::Domain(format!("calibration score {bad} is not a number")));
    }
    let mut v = scores.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    Ok(v)
}

fn check_bands(outcome: &SelectionOutcome, bands: &[Band]) -> Result<()> {
    match outcome.selected_test.iter().find(|&&j| j >= bands.len()) {
        Some(j) => Err(ScopError::Domain(format!(
            "selected unit {j} has no band ({} bands)",
            bands.len()
        ))),
        None => Ok(()),
    }
}

/// Ordinary split-conformal intervals for the selected units.
pub fn ocp_intervals(
    cal_scores: &[f64],
    outcome: &SelectionOutcome,
    bands: &[Band],
    alpha: f64,
    kind: ScoreKind,
) -> Result<Vec<PredictionInterval>> {
    check_bands(outcome, bands)?;
    let w = conformal_quantile_sorted(&sorted_scores(cal_scores)?, alpha)?;
    Ok(outcome
        .selected_test
        .iter()
        .map(|&j| widen(j, bands[j], w, Method::Ocp, kind))
        .collect())
}

/// FCR-adjusted intervals: unit `j` uses level `alpha * M_min_j / m`.
pub fn acp_intervals(
    cal_scores: &[f64],
    outcome: &SelectionOutcome,
    m_min: &[MinSelectionSize],
    m: usize,
    bands: &[Band],
    alpha: f64,
    kind: ScoreKind,
) -> Result<Vec<PredictionInterval>> {
    check_alpha(alpha)?;
    check_bands(outcome, bands)?;
    if m_min.len() != outcome.selected_test.len() {
        return Err(ScopError::Domain(format!(
            "{} M_min values for {} selected units",
            m_min.len(),
            outcome.selected_test.len()
        )));
    }
    let sorted = sorted_scores(cal_scores)?;
    outcome
        .selected_test
        .iter()
        .zip(m_min)
        .map(|(&j, mm)| {
            if mm.value == 0 || mm.value > m {
                return Err(ScopError::Domain(format!("M_min {} outside 1..={m}", mm.value)));
            }
            let level = alpha * mm.value as f64 / m as f64;
            let w = conformal_quantile_sorted(&sorted, level)?;
            Ok(widen(j, bands[j], w, Method::Acp, kind))
        })
        .collect()
}

/// Selection-conditional intervals: the width is the conformal quantile of
/// the calibration scores in the selected calibration set (`use_plus`
/// switches to the inflated set).
pub fn scop_intervals(
    cal_scores: &[f64],
    outcome: &SelectionOutcome,
    bands: &[Band],
    alpha: f64,
    use_plus: bool,
    kind: ScoreKind,
) -> Result<Vec<PredictionInterval>> {
    check_bands(outcome, bands)?;
    let (set, method) = if use_plus {
        let plus = outcome.selected_cal_plus.as_ref().ok_or_else(|| {
            ScopError::Parameter(format!("{} provides no inflated calibration set", outcome.rule))
        })?;
        (plus, Method::ScopPlus)
    } else {
        (&outcome.selected_cal, Method::Scop)
    };
    let picked: Vec<f64> = set
        .iter()
        .map(|&i| {
            cal_scores.get(i).copied().ok_or_else(|| {
                ScopError::Domain(format!("calibration index {i} out of range ({})", cal_scores.len()))
            })
        })
        .collect::<Result<_>>()?;
    let w = conformal_quantile_sorted(&sorted_scores(&picked)?, alpha)?;
    Ok(outcome
        .selected_test
        .iter()
        .map(|&j| widen(j, bands[j], w, method, kind))
        .collect())
}

/// False coverage proportion and mean length of one repetition's intervals.
/// `test_responses` is indexed by test position.
pub fn evaluate_coverage(intervals: &[PredictionInterval], test_responses: &[f64]) -> Result<CoverageRecord> {
    let mut misses = 0usize;
    for iv in intervals {
        let y = *test_responses.get(iv.unit).ok_or_else(|| {
            ScopError::Domain(format!("no response for test unit {}", iv.unit))
        })?;
        if !iv.covers(y) {
            misses += 1;
        }
    }
    let n = intervals.len();
    let infinite = intervals.iter().any(|iv| !iv.length().is_finite());
    let avg_length = (n > 0 && !infinite).then(|| intervals.iter().map(|iv| iv.length()).sum::<f64>() / n as f64);
    Ok(CoverageRecord {
        fcp: misses as f64 / n.max(1) as f64,
        avg_length,
        n_selected: n,
        infinite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::ScoredUnit;
    use crate::selection::{apply_rule, SelectionRule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn outcome(selected_test: Vec<usize>, selected_cal: Vec<usize>) -> SelectionOutcome {
        SelectionOutcome {
            rule: SelectionRule::TCons { b0: 0.0 },
            tau_hat: 0.0,
            kappa_hat: None,
            selected_test,
            selected_cal,
            selected_cal_plus: None,
            degenerate: false,
        }
    }

    fn mm(v: usize) -> MinSelectionSize {
        MinSelectionSize { value: v, fallback: false }
    }

    #[test]
    fn ocp_example() {
        let r: Vec<f64> = (1..=9).map(f64::from).collect();
        let out = outcome(vec![0], vec![]);
        let iv = ocp_intervals(&r, &out, &[Band::point(0.0)], 0.1, ScoreKind::AbsResidual).unwrap();
        assert_eq!((iv[0].lo, iv[0].hi), (-9.0, 9.0));
        let out = outcome(vec![], vec![]);
        assert!(ocp_intervals(&r, &out, &[], 0.1, ScoreKind::AbsResidual).unwrap().is_empty());
    }

    #[test]
    fn ocp_ignores_selection_of_calibration() {
        let r: Vec<f64> = (1..=19).map(f64::from).collect();
        let bands = [Band::point(1.0), Band::point(2.0)];
        let a = ocp_intervals(&r, &outcome(vec![0, 1], vec![0]), &bands, 0.1, ScoreKind::AbsResidual).unwrap();
        let b = ocp_intervals(&r, &outcome(vec![0, 1], (0..19).collect()), &bands, 0.1, ScoreKind::AbsResidual).unwrap();
        assert_eq!(a, b);
        // rank ceil(0.9 * 20) = 18
        assert_eq!(a[1].hi, 20.0);
    }

    #[test]
    fn acp_examples() {
        let r: Vec<f64> = (1..=199).map(f64::from).collect();
        let iv = acp_intervals(&r, &outcome(vec![0], vec![]), &[mm(2)], 200, &[Band::point(0.0)], 0.1, ScoreKind::AbsResidual).unwrap();
        // level 0.001: rank ceil(0.999 * 200) = 200 > 199
        assert_eq!(iv[0].hi, f64::INFINITY);
        let r: Vec<f64> = (1..=1999).map(f64::from).collect();
        let iv = acp_intervals(&r, &outcome(vec![0], vec![]), &[mm(200)], 200, &[Band::point(0.0)], 0.1, ScoreKind::AbsResidual).unwrap();
        assert_eq!(iv[0].hi, 1800.0);
    }

    #[test]
    fn acp_full_selection_equals_ocp() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let bands: Vec<Band> = (0..10).map(|i| Band::point(i as f64)).collect();
        let out = outcome((0..10).collect(), vec![]);
        let a = acp_intervals(&r, &out, &[mm(10); 10], 10, &bands, 0.2, ScoreKind::AbsResidual).unwrap();
        let o = ocp_intervals(&r, &out, &bands, 0.2, ScoreKind::AbsResidual).unwrap();
        for (x, y) in a.iter().zip(&o) {
            assert_eq!((x.lo, x.hi), (y.lo, y.hi));
        }
        assert!(acp_intervals(&r, &out, &[mm(1)], 10, &bands, 0.2, ScoreKind::AbsResidual).is_err());
    }

    #[test]
    fn scop_examples() {
        let mut r = vec![100.0; 10];
        for (i, v) in [1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
            r[i] = v;
        }
        let iv = scop_intervals(&r, &outcome(vec![0], vec![0, 1, 2, 3]), &[Band::point(0.0)], 0.5, false, ScoreKind::AbsResidual).unwrap();
        // rank ceil(0.5 * 5) = 3
        assert_eq!(iv[0].hi, 3.0);
        let iv = scop_intervals(&r, &outcome(vec![0], vec![]), &[Band::point(0.0)], 0.1, false, ScoreKind::AbsResidual).unwrap();
        assert_eq!(iv[0].hi, f64::INFINITY);
        assert!(scop_intervals(&r, &outcome(vec![0], vec![]), &[Band::point(0.0)], 0.1, true, ScoreKind::AbsResidual).is_err());
    }

    #[test]
    fn scop_plus_uses_inflated_set_and_is_wider() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cal: Vec<ScoredUnit> = (0..200)
            .map(|i| {
                let t = rng.random::<f64>();
                ScoredUnit::new(i, t, t, Some(t + rng.random::<f64>() * t))
            })
            .collect();
        let test: Vec<ScoredUnit> = (0..50).map(|i| ScoredUnit::new(i, 0.0, rng.random::<f64>(), None)).collect();
        let r: Vec<f64> = cal.iter().map(|u| u.residual_score.unwrap()).collect();
        let out = apply_rule(&SelectionRule::TTop { k: 10 }, &cal, &test).unwrap();
        let bands = vec![Band::point(0.0); 50];
        let plain = scop_intervals(&r, &out, &bands, 0.1, false, ScoreKind::AbsResidual).unwrap();
        let plus = scop_intervals(&r, &out, &bands, 0.1, true, ScoreKind::AbsResidual).unwrap();
        assert_eq!(plus[0].method, Method::ScopPlus);
        // residuals grow with T here, and the inflated set is a superset
        assert!(plus[0].hi >= plain[0].hi);
    }

    #[test]
    fn cqr_band_widening() {
        let r = vec![0.5, -0.2, 0.1];
        let out = outcome(vec![0], vec![0, 1, 2]);
        let iv = scop_intervals(&r, &out, &[Band { lo: 1.0, hi: 3.0 }], 0.5, false, ScoreKind::Cqr).unwrap();
        // rank ceil(0.5 * 4) = 2 -> 0.1
        assert_eq!((iv[0].lo, iv[0].hi), (0.9, 3.1));
    }

    #[test]
    fn coverage_examples() {
        let iv = |unit, lo, hi| PredictionInterval { unit, lo, hi, method: Method::Scop, score_kind: ScoreKind::AbsResidual };
        let rec = evaluate_coverage(&[iv(0, 0.0, 1.0), iv(1, 0.0, 1.0)], &[0.5, 2.0]).unwrap();
        assert_eq!(rec.fcp, 0.5);
        assert_eq!(rec.avg_length, Some(1.0));
        let rec = evaluate_coverage(&[], &[]).unwrap();
        assert_eq!((rec.fcp, rec.avg_length, rec.n_selected), (0.0, None, 0));
        let rec = evaluate_coverage(&[iv(0, f64::NEG_INFINITY, f64::INFINITY)], &[3.0]).unwrap();
        assert!(rec.infinite);
        assert_eq!(rec.fcp, 0.0);
        assert_eq!(rec.avg_length, None);
        assert!(evaluate_coverage(&[iv(0, 0.0, 1.0)], &[1.0]).unwrap().fcp == 0.0);
        assert!(evaluate_coverage(&[iv(3, 0.0, 1.0)], &[1.0]).is_err());
    }

    #[test]
    fn method_and_score_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
        assert_eq!("cqr".parse::<ScoreKind>().unwrap(), ScoreKind::Cqr);
    }
}
