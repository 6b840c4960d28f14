//! Order statistics and the split-conformal empirical quantile.
//!
//! All ranks are 1-based and count duplicates, so `kth_smallest(s, k)` is the
//! value at position `k` of `s` sorted ascending.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScopError};

/// A finite multiset of reals (nonconformity scores, selection scores, ...).
///
/// NaN and infinities are rejected at construction so every comparison
/// downstream is total.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SampleSet(Vec<f64>);

impl SampleSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(ScopError::Domain(format!(
                "sample value at position {pos} is not finite ({})",
                values[pos]
            )));
        }
        Ok(Self(values))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Ascending copy of the values.
    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_unstable_by(f64::total_cmp);
        v
    }
}

impl TryFrom<Vec<f64>> for SampleSet {
    type Error = ScopError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<SampleSet> for Vec<f64> {
    fn from(s: SampleSet) -> Self {
        s.0
    }
}

/// `ceil(x)` that ignores floating-point dust just above an integer, so that
/// e.g. `(1 - 0.01) * 200` yields 198 and not 199.
pub fn ceil_rank(x: f64) -> usize {
    let c = (x - 1e-9).ceil();
    if c <= 0.0 {
        0
    } else {
        c as usize
    }
}

/// `floor(x)` tolerant of floating-point dust just below an integer.
pub fn floor_rank(x: f64) -> usize {
    let f = (x + 1e-9).floor();
    if f <= 0.0 {
        0
    } else {
        f as usize
    }
}

/// Rank used by the split-conformal quantile: `ceil((1 - alpha) * (n + 1))`.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    ceil_rank((1.0 - alpha) * (n as f64 + 1.0))
}

/// The `ceil((1 - alpha)(|s| + 1))`-th smallest value of `s`.
///
/// Returns `+inf` when that rank exceeds `|s|` (including the empty set): the
/// resulting interval is the whole real line.
pub fn conformal_quantile(s: &SampleSet, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let k = conformal_rank(s.len(), alpha).max(1);
    if k > s.len() {
        return Ok(f64::INFINITY);
    }
    kth_smallest(s, k)
}

/// Same as [`conformal_quantile`] but over a slice already sorted ascending.
pub fn conformal_quantile_sorted(sorted: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let k = conformal_rank(sorted.len(), alpha).max(1);
    Ok(if k > sorted.len() {
        f64::INFINITY
    } else {
        sorted[k - 1]
    })
}

pub fn kth_smallest(s: &SampleSet, k: usize) -> Result<f64> {
    if k == 0 || k > s.len() {
        return Err(ScopError::Range {
            rank: k,
            len: s.len(),
        });
    }
    let mut v = s.0.clone();
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// The `r`-th smallest value of `s` with one occurrence of `j_value` removed.
///
/// Uses the drop-one identity: the answer is `x_(r)` when `j_value > x_(r)`
/// and `x_(r+1)` otherwise.
pub fn drop_one_rank(s: &SampleSet, j_value: f64, r: usize) -> Result<f64> {
    if !s.0.contains(&j_value) {
        return Err(ScopError::Domain(format!(
            "value {j_value} is not a member of the sample"
        )));
    }
    if r == 0 || r + 1 > s.len() {
        return Err(ScopError::Range {
            rank: r,
            len: s.len().saturating_sub(1),
        });
    }
    let sorted = s.sorted();
    Ok(if j_value > sorted[r - 1] {
        sorted[r - 1]
    } else {
        sorted[r]
    })
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ScopError::Parameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}
