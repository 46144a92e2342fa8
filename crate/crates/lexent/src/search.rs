//! Two-stage random hyperparameter search.
//!
//! Stage one ([`coarse_search`]) samples the full space. Stage two
//! ([`annealed_search`]) repeatedly resamples inside a hyperrectangle that
//! shrinks by a fixed factor per iteration (0.9 by default) and is
//! recentered on the best point found so far, clipped to the original
//! bounds. Shrinking happens in each dimension's sampling scale, so
//! log-uniform dimensions shrink in log space. Categorical dimensions are
//! held at the incumbent's choice throughout the annealed stage.
//!
//! Every trial carries a seed derived from the search seed and the trial's
//! position, so a search is reproducible regardless of how many threads
//! evaluate it.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("dimension `{0}`: lower bound must be below upper bound")]
    EmptyInterval(String),
    #[error("dimension `{0}`: log-uniform scale requires a positive lower bound")]
    NonPositiveLog(String),
    #[error("dimension `{0}` declared twice")]
    DuplicateDim(String),
    #[error("categorical dimension `{0}` has no choices")]
    NoChoices(String),
    #[error("shrink factor must lie in (0, 1), got {0}")]
    BadShrink(f64),
    #[error("params missing dimension `{0}`")]
    MissingParam(String),
    #[error("param `{name}` = {value} outside [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("param `{name}` = `{value}` is not one of the declared choices")]
    BadChoice { name: String, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("trial log line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
}

/// Sampling scale of a continuous dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Uniform,
    LogUniform,
}

impl Scale {
    /// Maps a raw value into the scale's sampling space.
    pub fn forward(&self, x: f64) -> f64 {
        match self {
            Scale::Uniform => x,
            Scale::LogUniform => x.ln(),
        }
    }

    /// Inverse of [`Scale::forward`].
    pub fn backward(&self, t: f64) -> f64 {
        match self {
            Scale::Uniform => t,
            Scale::LogUniform => t.exp(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuousDim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoricalDim {
    pub name: String,
    pub choices: Vec<String>,
}

/// Hyperparameter domain: continuous intervals plus categorical choices.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchSpace {
    pub continuous: Vec<ContinuousDim>,
    pub categorical: Vec<CategoricalDim>,
}

impl SearchSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_continuous(
        &mut self,
        name: &str,
        lower: f64,
        upper: f64,
        scale: Scale,
    ) -> Result<(), SearchError> {
        if self.has_dim(name) {
            return Err(SearchError::DuplicateDim(name.to_string()));
        }
        if !(lower < upper) {
            return Err(SearchError::EmptyInterval(name.to_string()));
        }
        if scale == Scale::LogUniform && lower <= 0.0 {
            return Err(SearchError::NonPositiveLog(name.to_string()));
        }
        self.continuous.push(ContinuousDim {
            name: name.to_string(),
            lower,
            upper,
            scale,
        });
        Ok(())
    }

    pub fn push_categorical(&mut self, name: &str, choices: &[&str]) -> Result<(), SearchError> {
        if self.has_dim(name) {
            return Err(SearchError::DuplicateDim(name.to_string()));
        }
        if choices.is_empty() {
            return Err(SearchError::NoChoices(name.to_string()));
        }
        self.categorical.push(CategoricalDim {
            name: name.to_string(),
            choices: choices.iter().map(|c| c.to_string()).collect(),
        });
        Ok(())
    }

    fn has_dim(&self, name: &str) -> bool {
        self.continuous.iter().any(|d| d.name == name)
            || self.categorical.iter().any(|d| d.name == name)
    }

    /// Checks that `params` covers every dimension within bounds.
    pub fn validate(&self, params: &Params) -> Result<(), SearchError> {
        for dim in &self.continuous {
            let value = params
                .real(&dim.name)
                .ok_or_else(|| SearchError::MissingParam(dim.name.clone()))?;
            if value < dim.lower || value > dim.upper {
                return Err(SearchError::OutOfBounds {
                    name: dim.name.clone(),
                    value,
                    lower: dim.lower,
                    upper: dim.upper,
                });
            }
        }
        for dim in &self.categorical {
            let value = params
                .choice(&dim.name)
                .ok_or_else(|| SearchError::MissingParam(dim.name.clone()))?;
            if !dim.choices.iter().any(|c| c == value) {
                return Err(SearchError::BadChoice {
                    name: dim.name.clone(),
                    value: value.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// A sampled hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Real(f64),
    Choice(String),
}

/// A full assignment of values to the space's dimensions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Params(pub BTreeMap<String, ParamValue>);

impl Params {
    pub fn real(&self, name: &str) -> Option<f64> {
        match self.0.get(name) {
            Some(ParamValue::Real(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn choice(&self, name: &str) -> Option<&str> {
        match self.0.get(name) {
            Some(ParamValue::Choice(c)) => Some(c.as_str()),
            _ => None,
        }
    }

    pub fn set_real(&mut self, name: &str, value: f64) {
        self.0.insert(name.to_string(), ParamValue::Real(value));
    }

    pub fn set_choice(&mut self, name: &str, value: &str) {
        self.0
            .insert(name.to_string(), ParamValue::Choice(value.to_string()));
    }
}

/// One evaluated point: parameters, score (higher is better), and the seed
/// the evaluator ran with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: Params,
    pub score: f64,
    pub seed: u64,
}

/// Annealed-stage configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnnealConfig {
    /// Per-iteration width factor, 0.9 unless overridden.
    pub shrink: f64,
    pub iterations: usize,
    pub trials_per_iteration: usize,
}

impl AnnealConfig {
    pub fn new(
        shrink: f64,
        iterations: usize,
        trials_per_iteration: usize,
    ) -> Result<Self, SearchError> {
        if !(shrink > 0.0 && shrink < 1.0) {
            return Err(SearchError::BadShrink(shrink));
        }
        Ok(Self {
            shrink,
            iterations,
            trials_per_iteration,
        })
    }
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            shrink: 0.9,
            iterations: 5,
            trials_per_iteration: 50,
        }
    }
}

/// One line of the append-only trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// 0 for the coarse stage, then 1-based annealed iterations.
    pub iteration: usize,
    pub index: usize,
    pub params: Params,
    pub score: f64,
    pub seed: u64,
    pub wall_time_ms: u64,
}

/// Search output: the winning trial plus every evaluated record.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Trial,
    pub records: Vec<TrialRecord>,
}

/// Draws one parameter assignment uniformly in each dimension's sampling
/// scale, deterministically from `seed`.
pub fn sample(space: &SearchSpace, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::default();
    for dim in &space.continuous {
        let lo = dim.scale.forward(dim.lower);
        let hi = dim.scale.forward(dim.upper);
        params.set_real(&dim.name, dim.scale.backward(sample_interval(&mut rng, lo, hi)));
    }
    for dim in &space.categorical {
        let idx = rng.gen_range(0..dim.choices.len());
        params.set_choice(&dim.name, &dim.choices[idx]);
    }
    params
}

fn sample_interval(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    rng.gen_range(lo..hi)
}

fn run_trials<E>(
    sampled: Vec<(Params, u64)>,
    evaluator: &E,
    threads: usize,
) -> Vec<(Params, u64, f64, u64)>
where
    E: Fn(&Params, u64) -> Result<f64, String> + Sync,
{
    let evaluate = |(params, seed): &(Params, u64)| {
        let start = Instant::now();
        let score = match evaluator(params, *seed) {
            Ok(s) => s,
            Err(message) => {
                log::warn!("trial failed, scoring -inf: {message}");
                f64::NEG_INFINITY
            }
        };
        (
            params.clone(),
            *seed,
            score,
            start.elapsed().as_millis() as u64,
        )
    };
    if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        pool.install(|| {
            use rayon::prelude::*;
            sampled.par_iter().map(evaluate).collect()
        })
    } else {
        sampled.iter().map(evaluate).collect()
    }
}

/// Stage one: `n` independent samples over the full space.
///
/// Evaluator failures score negative infinity and the search continues.
/// Ties go to the lowest trial index.
pub fn coarse_search<E>(
    space: &SearchSpace,
    evaluator: &E,
    n: usize,
    seed: u64,
    threads: usize,
) -> Result<SearchOutcome, SearchError>
where
    E: Fn(&Params, u64) -> Result<f64, String> + Sync,
{
    let sampled: Vec<(Params, u64)> = (0..n)
        .map(|i| {
            let trial_seed = derive_seed(seed, i as u64);
            (sample(space, trial_seed), trial_seed)
        })
        .collect();
    let results = run_trials(sampled, evaluator, threads);
    let mut records = Vec::with_capacity(n);
    let mut best: Option<Trial> = None;
    for (index, (params, trial_seed, score, wall)) in results.into_iter().enumerate() {
        if best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(Trial {
                params: params.clone(),
                score,
                seed: trial_seed,
            });
        }
        records.push(TrialRecord {
            iteration: 0,
            index,
            params,
            score,
            seed: trial_seed,
            wall_time_ms: wall,
        });
    }
    Ok(SearchOutcome {
        best: best.expect("n >= 1"),
        records,
    })
}

/// Scale-space interval of one dimension at annealed iteration `k`
/// (1-based), centered on `incumbent` and clipped to the original bounds.
///
/// The returned pair is in the dimension's sampling scale; the width is
/// `shrink^k` times the original width unless clipping at a bound cuts it.
pub fn shrunken_bounds(dim: &ContinuousDim, incumbent: f64, k: u32, shrink: f64) -> (f64, f64) {
    let lo = dim.scale.forward(dim.lower);
    let hi = dim.scale.forward(dim.upper);
    let width = (hi - lo) * shrink.powi(k as i32);
    let center = dim.scale.forward(incumbent);
    let half = width / 2.0;
    ((center - half).max(lo), (center + half).min(hi))
}

/// Stage two: iteratively annealed refinement around `start`.
///
/// Returns the best trial seen (including `start`) and the full history.
/// The best-so-far score is monotone non-decreasing across iterations, and
/// every emitted trial lies inside the original space bounds.
pub fn annealed_search<E>(
    space: &SearchSpace,
    evaluator: &E,
    cfg: &AnnealConfig,
    start: Trial,
    seed: u64,
    threads: usize,
) -> Result<SearchOutcome, SearchError>
where
    E: Fn(&Params, u64) -> Result<f64, String> + Sync,
{
    space.validate(&start.params)?;
    if !(cfg.shrink > 0.0 && cfg.shrink < 1.0) {
        return Err(SearchError::BadShrink(cfg.shrink));
    }
    let mut incumbent = start;
    let mut records = Vec::new();
    for k in 1..=cfg.iterations {
        let iteration_seed = derive_seed(seed, k as u64);
        let sampled: Vec<(Params, u64)> = (0..cfg.trials_per_iteration)
            .map(|i| {
                let trial_seed = derive_seed(iteration_seed, i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
                let mut params = Params::default();
                for dim in &space.continuous {
                    let center = incumbent
                        .params
                        .real(&dim.name)
                        .expect("validated against space");
                    let (lo, hi) = shrunken_bounds(dim, center, k as u32, cfg.shrink);
                    params
                        .set_real(&dim.name, dim.scale.backward(sample_interval(&mut rng, lo, hi)));
                }
                for dim in &space.categorical {
                    let choice = incumbent
                        .params
                        .choice(&dim.name)
                        .expect("validated against space");
                    params.set_choice(&dim.name, choice);
                }
                (params, trial_seed)
            })
            .collect();
        let results = run_trials(sampled, evaluator, threads);
        for (index, (params, trial_seed, score, wall)) in results.into_iter().enumerate() {
            if score > incumbent.score {
                incumbent = Trial {
                    params: params.clone(),
                    score,
                    seed: trial_seed,
                };
            }
            records.push(TrialRecord {
                iteration: k,
                index,
                params,
                score,
                seed: trial_seed,
                wall_time_ms: wall,
            });
        }
    }
    Ok(SearchOutcome {
        best: incumbent,
        records,
    })
}

/// Serializes records as line-delimited JSON.
pub fn write_trial_log<W: Write>(records: &[TrialRecord], mut writer: W) -> Result<(), SearchError> {
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(std::io::Error::from)?;
        writeln!(writer)?;
    }
    Ok(())
}

/// Reads a line-delimited JSON trial log.
pub fn read_trial_log<R: BufRead>(reader: R) -> Result<Vec<TrialRecord>, SearchError> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|source| SearchError::Malformed {
                line: lineno + 1,
                source,
            })?,
        );
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_space() -> SearchSpace {
        let mut space = SearchSpace::new();
        space
            .push_continuous("x", 0.001, 3.0, Scale::LogUniform)
            .unwrap();
        space
    }

    #[test]
    fn validation_catches_bad_dims() {
        let mut space = SearchSpace::new();
        assert!(matches!(
            space.push_continuous("x", 2.0, 1.0, Scale::Uniform),
            Err(SearchError::EmptyInterval(_))
        ));
        assert!(matches!(
            space.push_continuous("x", 0.0, 1.0, Scale::LogUniform),
            Err(SearchError::NonPositiveLog(_))
        ));
        space.push_continuous("x", 0.0, 1.0, Scale::Uniform).unwrap();
        assert!(matches!(
            space.push_categorical("x", &["a"]),
            Err(SearchError::DuplicateDim(_))
        ));
    }

    #[test]
    fn sample_is_deterministic() {
        let space = log_space();
        assert_eq!(sample(&space, 7), sample(&space, 7));
    }

    #[test]
    fn log_uniform_median_is_geometric_midpoint() {
        // CDF oracle in log space: half the mass lies below
        // sqrt(0.001 * 3) ~= 0.0548.
        let space = log_space();
        let midpoint = (0.001f64 * 3.0).sqrt();
        let n = 100_000;
        let below = (0..n)
            .filter(|i| sample(&space, derive_seed(1, *i as u64)).real("x").unwrap() < midpoint)
            .count();
        let fraction = below as f64 / n as f64;
        assert!((fraction - 0.5).abs() < 0.01, "fraction {fraction}");
    }

    #[test]
    fn degenerate_interval_collapses() {
        let mut space = SearchSpace::new();
        space
            .push_continuous("x", 1.0, 1.0 + 1e-12, Scale::Uniform)
            .unwrap();
        for seed in 0..50 {
            let x = sample(&space, seed).real("x").unwrap();
            assert!((x - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn coarse_single_trial_is_best() {
        let space = log_space();
        let out =
            coarse_search(&space, &|p: &Params, _| Ok(p.real("x").unwrap()), 1, 3, 1).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.best.params, out.records[0].params);
    }

    #[test]
    fn coarse_finds_log_quadratic_optimum() {
        // Analytic optimum at x = 0.1; 500 log-uniform samples should land
        // within [0.05, 0.2].
        let space = log_space();
        let target = 0.1f64.ln();
        let out = coarse_search(
            &space,
            &|p: &Params, _| Ok(-(p.real("x").unwrap().ln() - target).powi(2)),
            500,
            11,
            1,
        )
        .unwrap();
        let best = out.best.params.real("x").unwrap();
        assert!((0.05..=0.2).contains(&best), "best {best}");
    }

    #[test]
    fn all_failures_record_neg_infinity() {
        let space = log_space();
        let out =
            coarse_search(&space, &|_: &Params, _| Err("boom".to_string()), 5, 0, 1).unwrap();
        assert_eq!(out.records.len(), 5);
        assert!(out.best.score == f64::NEG_INFINITY);
        assert!(out.records.iter().all(|r| r.score == f64::NEG_INFINITY));
    }

    #[test]
    fn shrunken_width_follows_power() {
        let dim = ContinuousDim {
            name: "x".into(),
            lower: 0.001,
            upper: 3.0,
            scale: Scale::LogUniform,
        };
        let original = dim.scale.forward(3.0) - dim.scale.forward(0.001);
        let incumbent = 0.05; // interior enough that no clipping happens
        for k in 1..=3u32 {
            let (lo, hi) = shrunken_bounds(&dim, incumbent, k, 0.9);
            assert_eq!(hi - lo, original * 0.9f64.powi(k as i32));
        }
        let (lo3, hi3) = shrunken_bounds(&dim, incumbent, 3, 0.9);
        assert!(((hi3 - lo3) / original - 0.729).abs() < 1e-12);
    }

    #[test]
    fn boundary_incumbent_is_clipped() {
        let dim = ContinuousDim {
            name: "x".into(),
            lower: 0.0,
            upper: 1.0,
            scale: Scale::Uniform,
        };
        let (lo, hi) = shrunken_bounds(&dim, 0.0, 1, 0.9);
        assert_eq!(lo, 0.0);
        assert!(hi <= 1.0 && hi > 0.0);
        assert_eq!(hi - lo, 0.45);
    }

    #[test]
    fn anneal_history_stays_in_original_bounds() {
        let mut space = SearchSpace::new();
        space.push_continuous("x", -1.0, 1.0, Scale::Uniform).unwrap();
        space.push_categorical("s", &["a", "b"]).unwrap();
        let start = Trial {
            params: sample(&space, 0),
            score: f64::NEG_INFINITY,
            seed: 0,
        };
        let cfg = AnnealConfig::new(0.9, 6, 20).unwrap();
        let out = annealed_search(
            &space,
            &|p: &Params, _| Ok(-p.real("x").unwrap().abs()),
            &cfg,
            start.clone(),
            5,
            1,
        )
        .unwrap();
        for record in &out.records {
            space.validate(&record.params).unwrap();
            assert_eq!(
                record.params.choice("s"),
                start.params.choice("s"),
                "categorical must stay frozen"
            );
        }
    }

    #[test]
    fn best_so_far_is_monotone() {
        let mut space = SearchSpace::new();
        space.push_continuous("x", 0.0, 4.0, Scale::Uniform).unwrap();
        let start = Trial {
            params: sample(&space, 100),
            score: f64::NEG_INFINITY,
            seed: 100,
        };
        let cfg = AnnealConfig::new(0.9, 8, 10).unwrap();
        let out = annealed_search(
            &space,
            &|p: &Params, _| Ok(-(p.real("x").unwrap() - 1.7).powi(2)),
            &cfg,
            start,
            9,
            1,
        )
        .unwrap();
        let mut best = f64::NEG_INFINITY;
        for k in 1..=8 {
            let iteration_best = out
                .records
                .iter()
                .filter(|r| r.iteration == k)
                .map(|r| r.score)
                .fold(f64::NEG_INFINITY, f64::max);
            let so_far = best.max(iteration_best);
            assert!(so_far >= best);
            best = so_far;
        }
        assert!((out.best.params.real("x").unwrap() - 1.7).abs() < 0.05);
    }

    #[test]
    fn search_is_reproducible_and_thread_invariant() {
        let mut space = SearchSpace::new();
        space.push_continuous("x", 0.0, 1.0, Scale::Uniform).unwrap();
        space
            .push_continuous("y", 0.1, 10.0, Scale::LogUniform)
            .unwrap();
        let eval = |p: &Params, _: u64| {
            Ok(-(p.real("x").unwrap() - 0.3).powi(2) - (p.real("y").unwrap().ln() - 1.0).powi(2))
        };
        let coarse = coarse_search(&space, &eval, 30, 42, 1).unwrap();
        let cfg = AnnealConfig::new(0.9, 3, 15).unwrap();
        let a = annealed_search(&space, &eval, &cfg, coarse.best.clone(), 7, 1).unwrap();
        let b = annealed_search(&space, &eval, &cfg, coarse.best.clone(), 7, 4).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn trial_log_round_trips() {
        let space = log_space();
        let out =
            coarse_search(&space, &|p: &Params, _| Ok(p.real("x").unwrap()), 4, 2, 1).unwrap();
        let mut buffer = Vec::new();
        write_trial_log(&out.records, &mut buffer).unwrap();
        let back = read_trial_log(buffer.as_slice()).unwrap();
        assert_eq!(back, out.records);
    }
}
