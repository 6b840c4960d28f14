//! Per-method summaries of repetition records and pairwise comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScopError};
use crate::intervals::{CoverageRecord, Method};

/// Default multiplier of the combined standard error in [`compare`].
pub const SIGNIFICANCE_MULTIPLIER: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub reps: usize,
    /// Mean false coverage proportion.
    pub fcr: f64,
    /// Monte Carlo standard error of `fcr`; absent for a single repetition.
    pub fcr_se: Option<f64>,
    /// Mean of the per-repetition average lengths over repetitions with a
    /// finite, nonempty set of intervals.
    pub mean_length: Option<f64>,
    pub infinite_reps: usize,
    pub empty_reps: usize,
    pub mean_selected: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub fcr_gap: f64,
    pub length_ratio: Option<f64>,
    pub significant: bool,
}

/// Order-independent sum: values are sorted before accumulation, so any
/// permutation of the records gives the same bits.
fn stable_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_unstable_by(f64::total_cmp);
    v.iter().sum()
}

/// Mean and standard error (`sample sd / sqrt(n)`; `None` when `n < 2`).
pub fn mean_and_se(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = stable_sum(values.iter().copied()) / n;
    let se = (values.len() > 1).then(|| {
        let ss = stable_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        (ss / (n - 1.0)).sqrt() / n.sqrt()
    });
    Some((mean, se))
}

/// Summary of one method's records across successful repetitions.
pub fn summarize_records(method: Method, records: &[CoverageRecord]) -> Result<MethodSummary> {
    let fcp: Vec<f64> = records.iter().map(|r| r.fcp).collect();
    let (fcr, fcr_se) = mean_and_se(&fcp)
        .ok_or_else(|| ScopError::Parameter(format!("no successful repetitions to summarize for {method}")))?;
    let lengths: Vec<f64> = records.iter().filter_map(|r| r.avg_length).collect();
    Ok(MethodSummary {
        method,
        reps: records.len(),
        fcr,
        fcr_se,
        mean_length: mean_and_se(&lengths).map(|(m, _)| m),
        infinite_reps: records.iter().filter(|r| r.infinite).count(),
        empty_reps: records.iter().filter(|r| r.n_selected == 0).count(),
        mean_selected: stable_sum(records.iter().map(|r| r.n_selected as f64)) / records.len() as f64,
    })
}

/// FCR gap `a - b`, length ratio `a / b`, and whether the gap exceeds
/// `multiplier` combined standard errors (strictly).
pub fn compare(a: &MethodSummary, b: &MethodSummary, multiplier: f64) -> Comparison {
    let gap = a.fcr - b.fcr;
    let se = (a.fcr_se.unwrap_or(0.0).powi(2) + b.fcr_se.unwrap_or(0.0).powi(2)).sqrt();
    let length_ratio = match (a.mean_length, b.mean_length) {
        (Some(x), Some(y)) if y != 0.0 => Some(x / y),
        _ => None,
    };
    Comparison {
        fcr_gap: gap,
        length_ratio,
        significant: gap.abs() > multiplier * se,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(fcp: f64, len: Option<f64>, n: usize) -> CoverageRecord {
        CoverageRecord {
            fcp,
            avg_length: len,
            n_selected: n,
            infinite: false,
        }
    }

    fn summary(fcr: f64, se: f64) -> MethodSummary {
        MethodSummary {
            method: Method::Scop,
            reps: 1000,
            fcr,
            fcr_se: Some(se),
            mean_length: Some(1.0),
            infinite_reps: 0,
            empty_reps: 0,
            mean_selected: 1.0,
        }
    }

    #[test]
    fn summarize_examples() {
        let s = summarize_records(Method::Scop, &[rec(0.0, Some(1.0), 3), rec(0.2, None, 0)]).unwrap();
        assert!((s.fcr - 0.1).abs() < 1e-15);
        assert_eq!(s.mean_length, Some(1.0));
        assert_eq!(s.empty_reps, 1);
        assert_eq!(s.mean_selected, 1.5);
        let one = summarize_records(Method::Ocp, &[rec(0.5, Some(2.0), 2)]).unwrap();
        assert_eq!(one.fcr_se, None);
        assert!(summarize_records(Method::Ocp, &[]).is_err());
    }

    #[test]
    fn se_matches_two_pass_formula() {
        let v = [0.0, 0.1, 0.25, 0.5];
        let (mean, se) = mean_and_se(&v).unwrap();
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert!((se.unwrap() - (var / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn compare_examples() {
        let a = summary(0.1, 0.01);
        let c = compare(&a, &a, SIGNIFICANCE_MULTIPLIER);
        assert_eq!((c.fcr_gap, c.length_ratio, c.significant), (0.0, Some(1.0), false));
        let c = compare(&summary(0.0976, 0.003), &summary(0.1467, 0.003), SIGNIFICANCE_MULTIPLIER);
        assert!(c.significant);
        // gap equal to 3 * sqrt(0.3^2 + 0.4^2) = 1.5
        let c = compare(&summary(2.5, 0.3), &summary(1.0, 0.4), SIGNIFICANCE_MULTIPLIER);
        assert_eq!(c.fcr_gap, 1.5);
        assert!(!c.significant);
    }

    proptest! {
        #[test]
        fn summary_is_order_invariant(v in prop::collection::vec((0usize..20, 1usize..20), 1..80), rot in 0usize..80) {
            let recs: Vec<CoverageRecord> = v.iter().map(|&(a, b)| rec(a.min(b) as f64 / b as f64, Some(b as f64 * 0.37), b)).collect();
            let mut shuffled = recs.clone();
            shuffled.rotate_left(rot % recs.len());
            shuffled.reverse();
            prop_assert_eq!(
                summarize_records(Method::Scop, &recs).unwrap(),
                summarize_records(Method::Scop, &shuffled).unwrap()
            );
        }
    }
}
