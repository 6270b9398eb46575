//! Seeded replicate execution and per-cell aggregation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::ScenarioSpec;
use super::slope::{fit_slope, SlopeFit};
use crate::error::{param, Error, Result};
use crate::estimation::{fit_em, FitDiagnostics, FitOptions};
use crate::losses::{theorem_errors, ParamPoint};
use crate::model::{hellinger_mc, sample_dataset, HELLINGER_MIN_SAMPLES};

/// Metric name under which the Monte-Carlo Hellinger distance is stored.
pub const HELLINGER_METRIC: &str = "hellinger";

const DATA_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const MC_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HellingerOptions {
    pub enabled: bool,
    pub mc_n: usize,
}

impl Default for HellingerOptions {
    fn default() -> Self {
        Self { enabled: false, mc_n: 10_000 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub fit: FitOptions,
    pub hellinger: HellingerOptions,
    /// Worker threads; `None` uses the available parallelism. Never affects results.
    #[serde(skip)]
    pub jobs: Option<usize>,
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if self.hellinger.enabled && self.hellinger.mc_n < HELLINGER_MIN_SAMPLES {
            return Err(param(format!("hellinger mc_n must be at least {HELLINGER_MIN_SAMPLES}")));
        }
        if self.jobs == Some(0) {
            return Err(param("jobs must be at least 1"));
        }
        Ok(())
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `rep` at sample size `n`; depends on nothing else.
pub fn derive_seed(base_seed: u64, scenario_hash: u64, n: usize, rep: usize) -> u64 {
    [scenario_hash, n as u64, rep as u64].iter().fold(splitmix64(base_seed), |h, &v| splitmix64(h ^ v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub rep: usize,
    pub seed: u64,
    /// Empty when the fit failed.
    pub metrics: BTreeMap<String, f64>,
    pub converged: bool,
    pub iters: usize,
    pub diagnostics: FitDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReplicateResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Standard error of the mean; absent with fewer than two values.
    pub stderr: Option<f64>,
    pub median: f64,
    pub count: usize,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let stderr = (values.len() > 1).then(|| {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        });
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[m] } else { 0.5 * (sorted[m - 1] + sorted[m]) };
        Some(Self { mean, stderr, median, count: values.len() })
    }
}

/// All replicates at one sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub reps: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub non_converged: usize,
    pub failures: usize,
    /// More than half of the replicates failed or did not converge.
    pub unreliable: bool,
    /// Largest single-iteration log-likelihood drop over `n`, across replicates.
    pub max_loglik_drop_per_n: f64,
    pub replicates: Vec<ReplicateResult>,
}

impl CellSummary {
    pub fn from_replicates(n: usize, replicates: Vec<ReplicateResult>) -> Self {
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &replicates {
            for (k, v) in &r.metrics {
                values.entry(k.clone()).or_default().push(*v);
            }
        }
        let metrics = values.iter().filter_map(|(k, v)| MetricSummary::from_values(v).map(|s| (k.clone(), s))).collect();
        let failures = replicates.iter().filter(|r| r.failed()).count();
        let non_converged = replicates.iter().filter(|r| !r.failed() && !r.converged).count();
        let max_drop = replicates.iter().map(|r| r.diagnostics.max_loglik_drop).fold(0.0, f64::max);
        Self {
            n,
            reps: replicates.len(),
            metrics,
            non_converged,
            failures,
            unreliable: 2 * (failures + non_converged) > replicates.len(),
            max_loglik_drop_per_n: max_drop / n as f64,
            replicates,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|s| s.mean)
    }
}

/// Runs one replicate: sample, fit from a perturbed truth, score.
pub fn run_one(spec: &ScenarioSpec, n: usize, rep: usize, base_seed: u64, opts: &RunOptions) -> ReplicateResult {
    let seed = derive_seed(base_seed, spec.hash64(), n, rep);
    match replicate_inner(spec, n, seed, opts) {
        Ok((metrics, converged, iters, diagnostics)) => ReplicateResult { rep, seed, metrics, converged, iters, diagnostics, error: None },
        Err(e) => ReplicateResult {
            rep,
            seed,
            metrics: BTreeMap::new(),
            converged: false,
            iters: 0,
            diagnostics: FitDiagnostics::default(),
            error: Some(e.to_string()),
        },
    }
}

type Scored = (BTreeMap<String, f64>, bool, usize, FitDiagnostics);

fn replicate_inner(spec: &ScenarioSpec, n: usize, seed: u64, opts: &RunOptions) -> Result<Scored> {
    let truth = spec.truth(n);
    let model = spec.truth_model(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM);
    let data = sample_dataset(&model, n, &mut rng)?;
    rng.set_stream(INIT_STREAM);
    rng.set_word_pos(0);
    let fit = fit_em(spec.base, &spec.g0, spec.sigma, &data, Some((truth.lambda, &truth.g)), &opts.fit, &mut rng)?;
    let est = ParamPoint::new(fit.lambda_hat, fit.g_hat.clone());
    let mut metrics = theorem_errors(spec.id, &truth, &est, &spec.g0)?;
    if opts.hellinger.enabled {
        rng.set_stream(MC_STREAM);
        rng.set_word_pos(0);
        let fitted = model.with_prompt(fit.lambda_hat, fit.g_hat);
        let h = hellinger_mc(&model, &fitted, opts.hellinger.mc_n, &mut rng)?;
        metrics.insert(HELLINGER_METRIC.to_string(), h.h);
    }
    if metrics.values().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite error metric".into()));
    }
    Ok((metrics, fit.converged, fit.iters, fit.diagnostics))
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(j).build().map_err(|e| Error::Param(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run_replicates(spec: &ScenarioSpec, n: usize, reps: usize, base_seed: u64, opts: &RunOptions) -> Result<CellSummary> {
    if reps == 0 {
        return Err(param("reps must be at least 1"));
    }
    if n == 0 {
        return Err(param("n must be at least 1"));
    }
    opts.validate()?;
    spec.check_grid(&[n], &opts.fit.theta_bounds)?;
    let results = with_pool(opts.jobs, || (0..reps).into_par_iter().map(|rep| run_one(spec, n, rep, base_seed, opts)).collect())?;
    Ok(CellSummary::from_replicates(n, results))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub package: String,
    pub version: String,
    pub seed: u64,
    pub grid: Vec<usize>,
    pub reps: usize,
    pub scenario: ScenarioSpec,
    pub fit_options: FitOptions,
    pub hellinger: HellingerOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub scenario: String,
    pub case: String,
    pub per_n: Vec<CellSummary>,
    pub slopes: BTreeMap<String, SlopeFit>,
    /// Metrics without enough finite positive means for a slope.
    #[serde(default)]
    pub slope_errors: BTreeMap<String, String>,
    pub provenance: Provenance,
}

impl RateReport {
    /// `(n, mean)` curve of one metric.
    pub fn curve(&self, metric: &str) -> Vec<(f64, f64)> {
        self.per_n.iter().filter_map(|c| c.mean(metric).map(|m| (c.n as f64, m))).collect()
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.per_n.iter().flat_map(|c| c.metrics.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn slope(&self, metric: &str) -> Option<f64> {
        self.slopes.get(metric).map(|s| s.slope)
    }

    /// Fits a slope per metric on its mean curve.
    pub fn refit_slopes(&mut self) {
        self.slopes.clear();
        self.slope_errors.clear();
        for m in self.metric_names() {
            match fit_slope(&self.curve(&m)) {
                Ok(f) => {
                    self.slopes.insert(m, f);
                }
                Err(e) => {
                    self.slope_errors.insert(m, e.to_string());
                }
            }
        }
    }

    pub fn max_loglik_drop_per_n(&self) -> f64 {
        self.per_n.iter().map(|c| c.max_loglik_drop_per_n).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn run_scenario(spec: &ScenarioSpec, grid: &[usize], reps: usize, base_seed: u64, opts: &RunOptions) -> Result<RateReport> {
    if grid.len() < 3 {
        return Err(param("grid needs at least 3 sample sizes"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(param("grid must be strictly ascending"));
    }
    if reps == 0 {
        return Err(param("reps must be at least 1"));
    }
    if grid[0] == 0 {
        return Err(param("n must be at least 1"));
    }
    opts.validate()?;
    spec.check_grid(grid, &opts.fit.theta_bounds)?;
    let cells: Vec<(usize, usize)> = grid.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
    let results: Vec<ReplicateResult> =
        with_pool(opts.jobs, || cells.par_iter().map(|&(n, rep)| run_one(spec, n, rep, base_seed, opts)).collect())?;
    let mut it = results.into_iter();
    let per_n = grid.iter().map(|&n| CellSummary::from_replicates(n, it.by_ref().take(reps).collect())).collect();
    let mut report = RateReport {
        scenario: spec.id.to_string(),
        case: spec.case.to_string(),
        per_n,
        slopes: BTreeMap::new(),
        slope_errors: BTreeMap::new(),
        provenance: Provenance {
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: base_seed,
            grid: grid.to_vec(),
            reps,
            scenario: spec.clone(),
            fit_options: opts.fit.clone(),
            hellinger: opts.hellinger,
        },
    };
    report.refit_slopes();
    Ok(report)
}
