//! Scenario generators and the seeded Monte Carlo runner.
//!
//! # Seeding
//!
//! Repetition `r` of a run with master seed `s` uses the seed
//! `splitmix64(s + r * GAMMA)`, i.e. the `(r + 1)`-th output of the SplitMix64
//! stream started at `s` (`GAMMA = 0x9E3779B97F4A7C15`). Grid point `g` of a
//! sweep uses master seed `splitmix64((s ^ GRID_SALT) + g * GAMMA)`.
//!
//! A repetition seed keys a ChaCha8 generator with the 32 little-endian bytes
//! of the next four SplitMix64 outputs started at that seed. Uniforms are
//! `(u64 >> 11) * 2^-53`; normals are the inverse normal CDF of
//! `((u64 >> 11) + 0.5) * 2^-53`, so every draw consumes exactly one `u64`.
//!
//! Draw order in a simulated repetition: Scenario A's coefficient vector (10
//! uniforms, unless fixed), then the training, calibration and test rows, each
//! row being 10 uniform features followed by one normal noise draw.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScopError};
use crate::intervals::{
    acp_intervals, evaluate_coverage, ocp_intervals, scop_intervals, Band, CoverageRecord, Method,
    PredictionInterval, ScoreKind,
};
use crate::metrics::{mean_and_se, summarize_records, MethodSummary};
use crate::order_stats::check_alpha;
use crate::predictors::{cqr_score, fit_ols, score_units, Dataset, QuantilePair, ScoredUnit};
use crate::selection::{apply_rule, m_min_all, SelectionOutcome, SelectionRule};

pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
pub const GRID_SALT: u64 = 0xD1B5_4A32_D192_ED03;
/// Feature dimension of every scenario.
pub const DIM: usize = 10;
/// Largest tolerated share of failed repetitions.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rep_seed(master_seed: u64, rep: usize) -> u64 {
    let mut s = master_seed.wrapping_add((rep as u64).wrapping_mul(GAMMA));
    splitmix64(&mut s)
}

pub fn grid_seed(master_seed: u64, index: usize) -> u64 {
    rep_seed(master_seed ^ GRID_SALT, index)
}

/// Random stream of one repetition.
pub struct SeedStream {
    rng: ChaCha8Rng,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * f64::EPSILON / 2.0
    }

    /// Uniform on `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * f64::EPSILON / 2.0
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u = self.uniform_open();
        std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(2.0 * u - 1.0)
    }

    /// Uniform index in `0..n` (`n >= 1`) by rejection, for shuffling.
    pub fn index_below(&mut self, n: usize) -> usize {
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            p.swap(i, self.index_below(i + 1));
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Linear mean with random coefficients, noise sd `1 + |mu|`.
    A,
    /// Nonlinear mean, unit noise.
    B,
    /// Piecewise interaction mean, unit noise.
    C,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Scenario {
    type Err = ScopError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Scenario::A),
            "B" | "b" => Ok(Scenario::B),
            "C" | "c" => Ok(Scenario::C),
            _ => Err(ScopError::Parameter(format!("unknown scenario '{s}' (expected A, B or C)"))),
        }
    }
}

/// A scenario with its coefficients realized.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioModel {
    pub scenario: Scenario,
    /// Scenario A only.
    pub beta: Option<Vec<f64>>,
}

impl ScenarioModel {
    /// Draws Scenario A's coefficients from `stream` when `beta` is not given.
    pub fn draw(scenario: Scenario, beta: Option<&[f64]>, stream: &mut SeedStream) -> Self {
        let beta = match scenario {
            Scenario::A => Some(match beta {
                Some(b) => b.to_vec(),
                None => (0..DIM).map(|_| stream.uniform_in(-1.0, 1.0)).collect(),
            }),
            _ => None,
        };
        Self { scenario, beta }
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        match self.scenario {
            Scenario::A => {
                let beta = self.beta.as_deref().expect("scenario A carries coefficients");
                x.iter().zip(beta).map(|(a, b)| a * b).sum()
            }
            Scenario::B => x[0] * x[1] + x[2] - 2.0 * (x[3] + 1.0).exp(),
            Scenario::C => {
                if x[1] > -0.4 {
                    4.0 * (x[0] + 1.0) * x[2].abs()
                } else {
                    4.0 * (x[0] - 1.0)
                }
            }
        }
    }

    pub fn noise_sd(&self, mu: f64) -> f64 {
        match self.scenario {
            Scenario::A => 1.0 + mu.abs(),
            Scenario::B | Scenario::C => 1.0,
        }
    }

    /// `n` labeled rows with `X ~ Unif([-1, 1]^10)`.
    pub fn generate(&self, n: usize, stream: &mut SeedStream) -> Dataset {
        let mut features = Vec::with_capacity(n * DIM);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let start = features.len();
            features.extend((0..DIM).map(|_| stream.uniform_in(-1.0, 1.0)));
            let mu = self.mean(&features[start..]);
            y.push(mu + self.noise_sd(mu) * stream.standard_normal());
        }
        Dataset::from_parts(DIM, features, Some(y))
    }
}

/// Shared-coefficient vector used with `--fixed-beta`, drawn once from the
/// master seed.
pub fn fixed_beta(master_seed: u64) -> Vec<f64> {
    let mut stream = SeedStream::new(rep_seed(master_seed ^ GRID_SALT.rotate_left(32), 0));
    (0..DIM).map(|_| stream.uniform_in(-1.0, 1.0)).collect()
}

/// Where the repetitions get their data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Scenario(Scenario),
    /// Files given on the command line; the paths are echoed for the record.
    External {
        labeled: String,
        test: String,
        precomputed: bool,
        shuffle: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub n_train: usize,
    pub n_cal: usize,
    pub m: usize,
    pub alpha: f64,
    pub rule: SelectionRule,
    pub methods: Vec<Method>,
    pub score_kind: ScoreKind,
    pub reps: usize,
    pub master_seed: u64,
    /// Scenario A: one coefficient vector for all repetitions.
    pub fixed_beta: bool,
    /// ACP with `|selected|` in place of `M_min`.
    pub acp_simple: bool,
}

impl ExperimentConfig {
    /// Simulation defaults: `n_train = n_cal = m = 200`, `alpha = 0.1`,
    /// SCOP/OCP/ACP, absolute residuals, 1000 repetitions.
    pub fn simulation(scenario: Scenario, rule: SelectionRule) -> Self {
        Self {
            data: DataSource::Scenario(scenario),
            n_train: 200,
            n_cal: 200,
            m: 200,
            alpha: 0.1,
            rule,
            methods: vec![Method::Scop, Method::Ocp, Method::Acp],
            score_kind: ScoreKind::AbsResidual,
            reps: 1000,
            master_seed: 0,
            fixed_beta: false,
            acp_simple: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        self.rule.validate()?;
        let fail = |m: String| Err(ScopError::Parameter(m));
        if self.reps == 0 {
            return fail("reps must be at least 1".into());
        }
        if self.m == 0 || self.n_cal == 0 {
            return fail("calibration and test sizes must be positive".into());
        }
        if self.methods.is_empty() {
            return fail("no methods requested".into());
        }
        if let SelectionRule::TTop { k } = self.rule {
            if k > self.m {
                return fail(format!("t-top K = {k} exceeds the test set size {}", self.m));
            }
        }
        match &self.data {
            DataSource::Scenario(_) => {
                if self.n_train < DIM + 1 {
                    return fail(format!("n_train must be at least {} for the linear fit", DIM + 1));
                }
            }
            DataSource::External { precomputed: true, .. } if self.score_kind == ScoreKind::Cqr => {
                return fail("the CQR score needs features; it is unavailable with precomputed units".into());
            }
            DataSource::External { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    #[serde(flatten)]
    pub coverage: CoverageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub methods: Vec<MethodRecord>,
    /// Share of selected test units with `Y >= b0` (t-pos only).
    pub selection_fdp: Option<f64>,
    pub degenerate_split: bool,
    /// Selected units whose `M_min` search found no admissible score.
    pub m_min_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRep {
    pub rep: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub version: String,
    pub config: ExperimentConfig,
    pub summaries: Vec<MethodSummary>,
    /// Mean selection FDP over repetitions (t-pos only).
    pub selection_fdr: Option<f64>,
    pub records: Vec<RepRecord>,
    pub failed: Vec<FailedRep>,
}

impl ExperimentResult {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn method_records(&self, method: Method) -> Vec<CoverageRecord> {
        self.records
            .iter()
            .filter_map(|r| r.methods.iter().find(|m| m.method == method))
            .map(|m| m.coverage)
            .collect()
    }
}

/// Scored calibration and test units with their nonconformity scores and
/// base bands, ready for selection and interval construction.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cal: Vec<ScoredUnit>,
    pub test: Vec<ScoredUnit>,
    pub cal_scores: Vec<f64>,
    pub bands: Vec<Band>,
}

/// Fit on `train` and score calibration and test units. Selection scores
/// always come from the least-squares fit; the CQR score adds a quantile pair.
pub fn prepare(train: &Dataset, cal: &Dataset, test: &Dataset, rule: &SelectionRule, kind: ScoreKind, alpha: f64) -> Result<Prepared> {
    if !cal.is_labeled() {
        return Err(ScopError::Domain("calibration data must carry responses".into()));
    }
    let model = fit_ols(train)?;
    let score_fn = rule.score_fn();
    let cal_units = score_units(&model, cal, score_fn)?;
    let test_units = score_units(&model, test, score_fn)?;
    if cal_units.iter().chain(&test_units).any(|u| !u.mu_hat.is_finite()) {
        return Err(ScopError::Domain("non-finite prediction from the fitted model".into()));
    }
    let (cal_scores, bands) = match kind {
        ScoreKind::AbsResidual => (
            cal_units.iter().map(|u| u.residual_score.expect("labeled")).collect(),
            test_units.iter().map(|u| Band::point(u.mu_hat)).collect(),
        ),
        ScoreKind::Cqr => {
            let pair = QuantilePair::fit(train, alpha)?;
            let y = cal.responses().expect("labeled");
            let scores = cal
                .rows()
                .zip(y)
                .map(|(x, &yi)| cqr_score(&pair, x, yi))
                .collect::<Result<Vec<_>>>()?;
            let bands = test
                .rows()
                .map(|x| pair.predict(x).map(|(lo, hi)| Band { lo, hi }))
                .collect::<Result<Vec<_>>>()?;
            (scores, bands)
        }
    };
    if cal_scores.iter().chain(bands.iter().flat_map(|b| [&b.lo, &b.hi])).any(|v| !v.is_finite()) {
        return Err(ScopError::Domain("non-finite score from the fitted model".into()));
    }
    Ok(Prepared {
        cal: cal_units,
        test: test_units,
        cal_scores,
        bands,
    })
}

/// Units with supplied predictions: absolute-residual scores, point bands.
pub fn prepare_precomputed(cal: Vec<ScoredUnit>, test: Vec<ScoredUnit>) -> Result<Prepared> {
    let cal_scores = cal
        .iter()
        .map(|u| {
            u.residual_score
                .ok_or_else(|| ScopError::Domain("calibration units must carry responses".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let bands = test.iter().map(|u| Band::point(u.mu_hat)).collect();
    Ok(Prepared {
        cal,
        test,
        cal_scores,
        bands,
    })
}

/// Selection and intervals of one repetition.
#[derive(Debug, Clone)]
pub struct RepIntervals {
    pub outcome: SelectionOutcome,
    pub intervals: Vec<(Method, Vec<PredictionInterval>)>,
    pub m_min_fallbacks: usize,
}

pub fn build_intervals(p: &Prepared, config: &ExperimentConfig) -> Result<RepIntervals> {
    let outcome = apply_rule(&config.rule, &p.cal, &p.test)?;
    let mut m_min_fallbacks = 0;
    let intervals = config
        .methods
        .iter()
        .map(|&method| {
            let iv = match method {
                Method::Ocp => ocp_intervals(&p.cal_scores, &outcome, &p.bands, config.alpha, config.score_kind)?,
                Method::Scop => scop_intervals(&p.cal_scores, &outcome, &p.bands, config.alpha, false, config.score_kind)?,
                Method::ScopPlus => scop_intervals(&p.cal_scores, &outcome, &p.bands, config.alpha, true, config.score_kind)?,
                Method::Acp => {
                    let mm = m_min_all(&config.rule, &p.cal, &p.test, &outcome, config.acp_simple)?;
                    m_min_fallbacks = mm.iter().filter(|v| v.fallback).count();
                    acp_intervals(&p.cal_scores, &outcome, &mm, p.test.len(), &p.bands, config.alpha, config.score_kind)?
                }
            };
            Ok((method, iv))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RepIntervals {
        outcome,
        intervals,
        m_min_fallbacks,
    })
}

/// Coverage of every requested method in one repetition.
pub fn evaluate_prepared(p: &Prepared, config: &ExperimentConfig, rep: usize, seed: u64) -> Result<RepRecord> {
    let y: Vec<f64> = p
        .test
        .iter()
        .map(|u| u.response.ok_or_else(|| ScopError::Domain("coverage needs test responses".into())))
        .collect::<Result<_>>()?;
    let built = build_intervals(p, config)?;
    let methods = built
        .intervals
        .iter()
        .map(|(method, iv)| {
            Ok(MethodRecord {
                method: *method,
                coverage: evaluate_coverage(iv, &y)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let selection_fdp = match config.rule {
        SelectionRule::TPos { b0, .. } => {
            let sel = &built.outcome.selected_test;
            let nulls = sel.iter().filter(|&&j| y[j] >= b0).count();
            Some(nulls as f64 / sel.len().max(1) as f64)
        }
        _ => None,
    };
    Ok(RepRecord {
        rep,
        seed,
        methods,
        selection_fdp,
        degenerate_split: built.outcome.degenerate,
        m_min_fallbacks: built.m_min_fallbacks,
    })
}

/// Data for runs on user-supplied files.
#[derive(Debug, Clone)]
pub enum ExternalData {
    /// Labeled rows are split into training and calibration halves each
    /// repetition; the test rows are fixed.
    Raw { labeled: Dataset, test: Dataset },
    /// Predictions supplied: every labeled row is a calibration unit.
    Precomputed { cal: Vec<ScoredUnit>, test: Vec<ScoredUnit> },
}

/// Deterministic per-repetition preparation of external data.
pub fn prepare_external(data: &ExternalData, config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    match data {
        ExternalData::Precomputed { cal, test } => prepare_precomputed(cal.clone(), test.clone()),
        ExternalData::Raw { labeled, test } => {
            let shuffle = matches!(config.data, DataSource::External { shuffle: true, .. });
            let n = labeled.len();
            let order = if shuffle {
                SeedStream::new(seed).permutation(n)
            } else {
                (0..n).collect()
            };
            let half = n / 2;
            let train = labeled.select(&order[..half]);
            let cal = labeled.select(&order[half..]);
            prepare(&train, &cal, test, &config.rule, config.score_kind, config.alpha)
        }
    }
}

/// Training, calibration and test data of simulated repetition `rep`.
pub fn simulated_data(config: &ExperimentConfig, rep: usize) -> Result<(Dataset, Dataset, Dataset)> {
    let DataSource::Scenario(scenario) = config.data else {
        return Err(ScopError::Parameter("not a simulation config".into()));
    };
    let beta = scenario_beta(config);
    let mut stream = SeedStream::new(rep_seed(config.master_seed, rep));
    let model = ScenarioModel::draw(scenario, beta.as_deref(), &mut stream);
    let train = model.generate(config.n_train, &mut stream);
    let cal = model.generate(config.n_cal, &mut stream);
    let test = model.generate(config.m, &mut stream);
    Ok((train, cal, test))
}

fn scenario_beta(config: &ExperimentConfig) -> Option<Vec<f64>> {
    match (&config.data, config.fixed_beta) {
        (DataSource::Scenario(Scenario::A), true) => Some(fixed_beta(config.master_seed)),
        _ => None,
    }
}

/// Run every repetition (in parallel on the current rayon pool) and
/// aggregate. Per-repetition records depend only on the config and the
/// repetition index.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_with(config, None)
}

/// [`run_experiment`] over user-supplied data.
pub fn run_external(config: &ExperimentConfig, data: &ExternalData) -> Result<ExperimentResult> {
    run_with(config, Some(data))
}

fn run_with(config: &ExperimentConfig, data: Option<&ExternalData>) -> Result<ExperimentResult> {
    config.validate()?;
    let outcomes: Vec<std::result::Result<RepRecord, FailedRep>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(config.master_seed, rep);
            let prepared = match (&config.data, data) {
                (DataSource::Scenario(_), _) => simulated_data(config, rep)
                    .and_then(|(train, cal, test)| prepare(&train, &cal, &test, &config.rule, config.score_kind, config.alpha)),
                (DataSource::External { .. }, Some(d)) => prepare_external(d, config, seed),
                (DataSource::External { .. }, None) => {
                    Err(ScopError::Parameter("external data source without loaded data".into()))
                }
            };
            prepared
                .and_then(|p| evaluate_prepared(&p, config, rep, seed))
                .map_err(|e| FailedRep {
                    rep,
                    seed,
                    message: e.to_string(),
                })
        })
        .collect();
    let (mut records, mut failed) = (Vec::new(), Vec::new());
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failed.push(f),
        }
    }
    if failed.len() as f64 > MAX_FAILED_FRACTION * config.reps as f64 || records.is_empty() {
        return Err(ScopError::NumericalFailure {
            failed: failed.len(),
            total: config.reps,
            first: failed.first().map_or_else(String::new, |f| format!("rep {}: {}", f.rep, f.message)),
        });
    }
    aggregate(config.clone(), records, failed)
}

/// Build the result from ordered per-repetition records.
pub fn aggregate(config: ExperimentConfig, records: Vec<RepRecord>, failed: Vec<FailedRep>) -> Result<ExperimentResult> {
    let mut result = ExperimentResult {
        version: crate::VERSION.to_string(),
        config,
        summaries: Vec::new(),
        selection_fdr: None,
        records,
        failed,
    };
    result.summaries = result
        .config
        .methods
        .iter()
        .map(|&m| summarize_records(m, &result.method_records(m)))
        .collect::<Result<_>>()?;
    let fdp: Vec<f64> = result.records.iter().filter_map(|r| r.selection_fdp).collect();
    result.selection_fdr = mean_and_se(&fdp).map(|(mean, _)| mean);
    Ok(result)
}

/// Grid of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepParam {
    /// Quantile levels of t-cal, t-test or t-exch.
    Quantile(Vec<f64>),
    /// `(n, m)` pairs; `n` sets both the training and calibration sizes.
    Sizes(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub label: String,
    pub result: ExperimentResult,
}

/// One independent run per grid point; point `g` uses master seed
/// `grid_seed(template.master_seed, g)`.
pub fn sweep(template: &ExperimentConfig, param: &SweepParam) -> Result<Vec<SweepPoint>> {
    let configs: Vec<(String, ExperimentConfig)> = match param {
        SweepParam::Quantile(qs) if !qs.is_empty() => qs
            .iter()
            .map(|&q| {
                let rule = template.rule.with_quantile(q).ok_or_else(|| {
                    ScopError::Parameter(format!("{} has no quantile level to sweep", template.rule))
                })?;
                rule.validate()?;
                Ok((format!("q={q}"), ExperimentConfig { rule, ..template.clone() }))
            })
            .collect::<Result<_>>()?,
        SweepParam::Sizes(nm) if !nm.is_empty() => nm
            .iter()
            .map(|&(n, m)| {
                (
                    format!("n={n},m={m}"),
                    ExperimentConfig {
                        n_train: n,
                        n_cal: n,
                        m,
                        ..template.clone()
                    },
                )
            })
            .collect(),
        _ => return Err(ScopError::Parameter("sweep grid is empty".into())),
    };
    configs
        .into_iter()
        .enumerate()
        .map(|(index, (label, mut cfg))| {
            cfg.master_seed = grid_seed(template.master_seed, index);
            Ok(SweepPoint {
                index,
                label,
                result: run_experiment(&cfg)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference SplitMix64 stream seeded at 0
        let mut s = 0u64;
        assert_eq!(splitmix64(&mut s), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(&mut s), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rep_seed(0, 0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rep_seed(0, 1), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn uniforms_in_range() {
        let mut s = SeedStream::new(1);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
            let v = s.uniform_open();
            assert!(v > 0.0 && v < 1.0);
        }
        let mut p = SeedStream::new(2).permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn normal_moments() {
        let mut s = SeedStream::new(3);
        let v: Vec<f64> = (0..200_000).map(|_| s.standard_normal()).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
        let tail = v.iter().filter(|&&x| x > 1.6448536269514722).count() as f64 / v.len() as f64;
        assert!((tail - 0.05).abs() < 0.002, "{tail}");
    }

    #[test]
    fn scenario_formulas() {
        let b = ScenarioModel { scenario: Scenario::B, beta: None };
        let mut x = vec![0.0; DIM];
        x[..4].copy_from_slice(&[1.0, 1.0, 0.0, -1.0]);
        assert_eq!(b.mean(&x), -1.0);
        let c = ScenarioModel { scenario: Scenario::C, beta: None };
        let mut x = vec![0.0; DIM];
        x[0] = 0.5;
        x[1] = -0.5;
        x[2] = 0.9;
        assert_eq!(c.mean(&x), 4.0 * (0.5 - 1.0));
        x[2] = -0.1;
        assert_eq!(c.mean(&x), 4.0 * (0.5 - 1.0));
        x[1] = 0.0;
        assert!((c.mean(&x) - 4.0 * 1.5 * 0.1).abs() < 1e-15);
        assert_eq!(c.noise_sd(7.0), 1.0);
    }

    #[test]
    fn scenario_a_moments() {
        let mut stream = SeedStream::new(4);
        let model = ScenarioModel::draw(Scenario::A, None, &mut stream);
        let beta = model.beta.clone().unwrap();
        assert!(beta.iter().all(|b| (-1.0..1.0).contains(b)));
        let data = model.generate(100_000, &mut stream);
        let y = data.responses().unwrap();
        let mu: Vec<f64> = data.rows().map(|x| model.mean(x)).collect();
        // E mu = 0, Var mu = sum(beta^2) / 3
        let mean_mu = mu.iter().sum::<f64>() / mu.len() as f64;
        let sd_mu = (beta.iter().map(|b| b * b).sum::<f64>() / 3.0).sqrt();
        assert!(mean_mu.abs() < 3.0 * sd_mu / (mu.len() as f64).sqrt(), "{mean_mu}");
        // within bins of |mu|, the noise variance matches (1 + |mu|)^2
        let mut bins = [(0.0f64, 0.0f64, 0usize); 4];
        for (yi, m) in y.iter().zip(&mu) {
            let k = ((m.abs() / 0.5) as usize).min(3);
            let z = (yi - m) / (1.0 + m.abs());
            bins[k].0 += (yi - m).powi(2);
            bins[k].1 += z * z;
            bins[k].2 += 1;
        }
        for (_, zz, n) in bins.iter().filter(|b| b.2 > 2000) {
            let ratio = zz / *n as f64;
            assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
        }
    }

    fn small_config(rule: SelectionRule) -> ExperimentConfig {
        ExperimentConfig {
            reps: 20,
            master_seed: 11,
            methods: vec![Method::Scop, Method::Ocp, Method::Acp, Method::ScopPlus],
            ..ExperimentConfig::simulation(Scenario::A, rule)
        }
    }

    #[test]
    fn run_is_deterministic_and_aggregates_recompute() {
        let cfg = small_config(SelectionRule::TCons { b0: -1.0 });
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        let again = aggregate(cfg.clone(), a.records.clone(), a.failed.clone()).unwrap();
        assert_eq!(again.summaries, a.summaries);
        let one = run_experiment(&ExperimentConfig { reps: 1, ..cfg }).unwrap();
        assert_eq!(one.records[0], a.records[0]);
        assert_eq!(one.summaries[0].fcr_se, None);
    }

    #[test]
    fn seed_isolation() {
        let cfg = small_config(SelectionRule::TTop { k: 30 });
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&ExperimentConfig { reps: 10, ..cfg }).unwrap();
        assert_eq!(&a.records[..10], &b.records[..]);
        assert_ne!(a.records[0].seed, a.records[1].seed);
        for r in &a.records {
            for m in &r.methods {
                assert_eq!(m.coverage.n_selected, 30);
            }
        }
    }

    #[test]
    fn fixed_beta_shares_coefficients() {
        let cfg = ExperimentConfig {
            fixed_beta: true,
            ..small_config(SelectionRule::TCons { b0: -1.0 })
        };
        assert_eq!(fixed_beta(11), fixed_beta(11));
        assert_ne!(run_experiment(&cfg).unwrap().records, run_experiment(&small_config(cfg.rule)).unwrap().records);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = small_config(SelectionRule::TTop { k: 300 });
        assert!(run_experiment(&base).is_err());
        assert!(ExperimentConfig { alpha: 1.0, ..small_config(SelectionRule::TClu) }.validate().is_err());
        assert!(ExperimentConfig { reps: 0, ..small_config(SelectionRule::TClu) }.validate().is_err());
    }

    #[test]
    fn failed_reps_abort_above_threshold() {
        // with b0 far above every response, C0 is empty in every repetition
        let cfg = ExperimentConfig {
            reps: 5,
            ..small_config(SelectionRule::TPos { b0: 1e6, beta: 0.2 })
        };
        match run_experiment(&cfg) {
            Err(ScopError::NumericalFailure { failed, total, first }) => {
                assert_eq!((failed, total), (5, 5));
                assert!(first.contains("null"), "{first}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quantile_sweep_seeds_by_grid_index() {
        let cfg = ExperimentConfig {
            reps: 4,
            ..small_config(SelectionRule::TExch { q: 50.0 })
        };
        let pts = sweep(&cfg, &SweepParam::Quantile(vec![20.0, 100.0])).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].result.config.master_seed, grid_seed(11, 1));
        assert_eq!(pts[1].result.config.rule, SelectionRule::TExch { q: 100.0 });
        assert!(sweep(&small_config(SelectionRule::TClu), &SweepParam::Quantile(vec![20.0])).is_err());
        assert!(sweep(&cfg, &SweepParam::Sizes(vec![])).is_err());
    }
}
