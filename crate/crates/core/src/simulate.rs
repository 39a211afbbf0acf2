//! Data generation and Monte Carlo replication studies.
//!
//! Sampling follows the model identities: draw covariates, compute the event
//! type probabilities, draw the type (or survival past the horizon), then
//! draw the event time from the conditional law, and finally resolve against
//! an independently drawn censoring time with events taking precedence in a
//! tied interval. Subjects reaching the horizon without event or censoring
//! are administratively censored at `d`.
//!
//! Randomness comes from the ChaCha12 counter-based stream cipher seeded per
//! repetition with a splitmix64 hash of `(base seed, repetition index)`, so
//! every repetition is an independent, platform-portable stream and results
//! do not depend on worker count.

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_collapsed_model, fit_two_step, FitConfig, FittedModel, Method,
};
use crate::numeric::median_iqr;
use crate::prediction::HazardParams;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic per-stream seed derivation.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// Covariate sampling law. Truncation is by clamping to the bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovariateLaw {
    /// Independent standard uniform coordinates.
    IndependentUniform,
    /// Zero-mean multivariate normal with the given covariance matrix.
    Normal {
        covariance: Vec<Vec<f64>>,
        truncation: (f64, f64),
    },
    /// Unit-variance coordinates with correlation `rho^|l-h|`.
    Ar1 { rho: f64, truncation: (f64, f64) },
}

/// Complete description of a data-generating process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub d: u32,
    pub m: u16,
    /// `m x d` intercept grid (already evaluated).
    pub alpha: Vec<Vec<f64>>,
    /// `m x p` true coefficients.
    pub beta: Vec<Vec<f64>>,
    pub covariate_law: CovariateLaw,
    /// Per-period censoring mass; the remaining mass means no censoring
    /// within the horizon.
    pub censoring: Vec<f64>,
    pub seed: u64,
    /// Published repetition count for the preset.
    pub reps: usize,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != self.m as usize
            || self.alpha.iter().any(|row| row.len() != self.d as usize)
        {
            return Err(Error::config("alpha grid must be m x d".to_string()));
        }
        if self.beta.len() != self.m as usize
            || self.beta.iter().any(|row| row.len() != self.p)
        {
            return Err(Error::config("beta must be m x p".to_string()));
        }
        if self.censoring.len() != self.d as usize {
            return Err(Error::config("censoring mass must have one entry per period"));
        }
        if self.censoring.iter().any(|c| *c < 0.0 || !c.is_finite()) {
            return Err(Error::config("censoring masses must be finite and >= 0"));
        }
        if self.censoring.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::config("censoring masses must sum to at most 1"));
        }
        match &self.covariate_law {
            CovariateLaw::Normal { covariance, truncation } => {
                if covariance.len() != self.p
                    || covariance.iter().any(|row| row.len() != self.p)
                {
                    return Err(Error::config("covariance must be p x p"));
                }
                if !truncation.0.is_finite() || !truncation.1.is_finite() {
                    return Err(Error::config("truncation bounds must be finite"));
                }
            }
            CovariateLaw::Ar1 { rho, truncation } => {
                if rho.abs() >= 1.0 {
                    return Err(Error::config("ar1 correlation must satisfy |rho| < 1"));
                }
                if !truncation.0.is_finite() || !truncation.1.is_finite() {
                    return Err(Error::config("truncation bounds must be finite"));
                }
            }
            CovariateLaw::IndependentUniform => {}
        }
        Ok(())
    }

    /// True parameters as a hazard parameter set.
    pub fn params(&self) -> HazardParams {
        let mut alpha = Array2::zeros((self.m as usize, self.d as usize));
        let mut beta = Array2::zeros((self.m as usize, self.p));
        for j in 0..self.m as usize {
            for t in 0..self.d as usize {
                alpha[(j, t)] = self.alpha[j][t];
            }
            for k in 0..self.p {
                beta[(j, k)] = self.beta[j][k];
            }
        }
        HazardParams { alpha, beta }
    }

    /// Indices of truly non-zero coefficients for one event type.
    pub fn signal_columns(&self, j: u16) -> Vec<usize> {
        self.beta[j as usize - 1]
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }
}

fn log_grid(d: u32, intercept: f64, slope: f64) -> Vec<f64> {
    (1..=d).map(|t| intercept + slope * (t as f64).ln()).collect()
}

fn linear_grid(d: u32, intercept: f64, slope: f64) -> Vec<f64> {
    (1..=d).map(|t| intercept + slope * t as f64).collect()
}

fn scaled_log_ratios(scale: f64, ratios: &[f64]) -> Vec<f64> {
    ratios.iter().map(|r| scale * r.ln()).collect()
}

fn pad(head: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p];
    out[..head.len()].copy_from_slice(head);
    out
}

fn diagonal_cov(p: usize, var: f64) -> Vec<Vec<f64>> {
    let mut cov = vec![vec![0.0; p]; p];
    for (k, row) in cov.iter_mut().enumerate() {
        row[k] = var;
    }
    cov
}

/// The published simulation settings, numbered 1 through 19.
pub fn preset(setting: u8) -> Result<SimulationConfig> {
    let cfg = match setting {
        1 | 2 => {
            let n = if setting == 1 { 250 } else { 500 };
            SimulationConfig {
                name: format!("setting-{setting}"),
                n,
                p: 5,
                d: 7,
                m: 2,
                alpha: vec![log_grid(7, -1.4, 0.4), log_grid(7, -1.3, 0.4)],
                beta: vec![
                    scaled_log_ratios(-0.7, &[0.8, 3.0, 3.0, 2.5, 2.0]),
                    scaled_log_ratios(-0.6, &[1.0, 3.0, 4.0, 3.0, 2.0]),
                ],
                covariate_law: CovariateLaw::IndependentUniform,
                censoring: vec![0.02; 7],
                seed: setting as u64,
                reps: 200,
            }
        }
        3..=6 => {
            let n = match setting {
                3 => 5000,
                4 => 20000,
                5 => 10000,
                _ => 15000,
            };
            SimulationConfig {
                name: format!("setting-{setting}"),
                n,
                p: 5,
                d: 30,
                m: 2,
                alpha: vec![log_grid(30, -2.0, -0.2), log_grid(30, -2.2, -0.2)],
                beta: vec![
                    scaled_log_ratios(-1.0, &[0.8, 3.0, 3.0, 2.5, 2.0]),
                    scaled_log_ratios(-1.0, &[1.0, 3.0, 4.0, 3.0, 2.0]),
                ],
                covariate_law: CovariateLaw::IndependentUniform,
                censoring: vec![0.01; 30],
                seed: setting as u64,
                reps: 200,
            }
        }
        7..=10 => {
            let n = match setting {
                7 => 5000,
                8 => 10000,
                9 => 15000,
                _ => 20000,
            };
            SimulationConfig {
                name: format!("setting-{setting}"),
                n,
                p: 5,
                d: 30,
                m: 3,
                alpha: vec![
                    log_grid(30, -2.2, -0.1),
                    log_grid(30, -2.3, -0.1),
                    log_grid(30, -2.4, -0.1),
                ],
                beta: vec![
                    scaled_log_ratios(-1.0, &[2.5, 1.5, 0.8, 3.0, 2.0]),
                    scaled_log_ratios(-1.0, &[0.8, 3.0, 2.8, 2.2, 1.5]),
                    scaled_log_ratios(-1.0, &[1.8, 0.8, 2.5, 1.2, 3.0]),
                ],
                covariate_law: CovariateLaw::IndependentUniform,
                censoring: vec![0.01; 30],
                seed: setting as u64,
                reps: 200,
            }
        }
        11..=13 => {
            let mut covariance = diagonal_cov(100, 0.4);
            if setting == 12 {
                for &(a, b, v) in &[(0, 8, 0.1), (1, 9, 0.3), (3, 7, -0.3), (4, 11, -0.1)] {
                    covariance[a][b] = v;
                    covariance[b][a] = v;
                }
            }
            SimulationConfig {
                name: format!("setting-{setting}"),
                n: 10000,
                p: 100,
                d: 15,
                m: 2,
                alpha: vec![log_grid(15, -3.4, -0.1), log_grid(15, -3.4, -0.2)],
                beta: vec![
                    pad(&[1.2, 1.5, -1.0, -0.3, -1.2], 100),
                    pad(&[-1.2, 1.0, 1.0, -1.0, 1.4], 100),
                ],
                covariate_law: CovariateLaw::Normal {
                    covariance,
                    truncation: (-1.5, 1.5),
                },
                censoring: vec![0.0; 15],
                seed: setting as u64,
                reps: if setting == 13 { 100 } else { 1 },
            }
        }
        14..=16 => {
            let mut covariance = diagonal_cov(35, 0.4);
            if setting == 15 {
                for &(a, b, v) in &[(0, 8, 0.1), (1, 9, 0.3), (3, 7, -0.3), (4, 11, -0.1)] {
                    covariance[a][b] = v;
                    covariance[b][a] = v;
                }
            }
            SimulationConfig {
                name: format!("setting-{setting}"),
                n: 500,
                p: 35,
                d: 10,
                m: 2,
                alpha: vec![linear_grid(10, -4.4, 0.3), linear_grid(10, -4.3, 0.3)],
                beta: vec![
                    pad(&[1.2, 1.5, -1.0, -0.3, -1.2], 35),
                    pad(&[-1.2, -1.0, 1.4, 1.0, 1.0], 35),
                ],
                covariate_law: CovariateLaw::Normal {
                    covariance,
                    truncation: (-1.5, 1.5),
                },
                censoring: vec![0.0; 10],
                seed: setting as u64,
                reps: if setting == 16 { 100 } else { 1 },
            }
        }
        17..=19 => {
            let rho = match setting {
                17 => 0.0,
                18 => 0.5,
                _ => 0.9,
            };
            SimulationConfig {
                name: format!("setting-{setting}"),
                n: 1000,
                p: 15000,
                d: 8,
                m: 2,
                alpha: vec![log_grid(8, -3.2, 0.3), log_grid(8, -3.3, 0.4)],
                beta: vec![
                    pad(&[-0.7, -0.6, 0.8, 0.7, -0.8], 15000),
                    pad(&[0.7, 0.8, -0.8, -0.6, -0.7], 15000),
                ],
                covariate_law: CovariateLaw::Ar1 {
                    rho,
                    truncation: (-3.0, 3.0),
                },
                censoring: vec![0.0; 8],
                seed: setting as u64,
                reps: 100,
            }
        }
        other => {
            return Err(Error::config(format!(
                "unknown simulation setting {other}; presets cover 1..=19"
            )))
        }
    };
    Ok(cfg)
}

/// Configuration family for the computation-time comparison: two competing
/// events, ten uniform covariates, log-trending intercepts, horizon as
/// given. No random censoring; subjects surviving the horizon are censored
/// administratively.
pub fn timing_profile(d: u32, n: usize, seed: u64) -> SimulationConfig {
    SimulationConfig {
        name: format!("timing-d{d}"),
        n,
        p: 10,
        d,
        m: 2,
        alpha: vec![log_grid(d, -2.5, -0.3), log_grid(d, -2.8, -0.3)],
        beta: vec![
            scaled_log_ratios(-0.5, &[0.8, 3.0, 3.0, 2.5, 4.0, 1.0, 3.0, 2.0, 2.0, 3.0]),
            scaled_log_ratios(-0.5, &[1.0, 3.0, 2.0, 1.0, 4.0, 3.0, 4.0, 3.0, 3.0, 2.0]),
        ],
        covariate_law: CovariateLaw::IndependentUniform,
        censoring: vec![0.0; d as usize],
        seed,
        reps: 10,
    }
}

enum ZSampler {
    Uniform,
    Normal {
        chol: Array2<f64>,
        lo: f64,
        hi: f64,
    },
    Ar1 {
        rho: f64,
        innovation: f64,
        lo: f64,
        hi: f64,
    },
}

impl ZSampler {
    fn build(law: &CovariateLaw, p: usize) -> Result<ZSampler> {
        Ok(match law {
            CovariateLaw::IndependentUniform => ZSampler::Uniform,
            CovariateLaw::Normal { covariance, truncation } => {
                let mut cov = Array2::zeros((p, p));
                for (a, row) in covariance.iter().enumerate() {
                    for (b, v) in row.iter().enumerate() {
                        cov[(a, b)] = *v;
                    }
                }
                let chol = crate::linalg::cholesky(&cov)
                    .map_err(|e| Error::config(format!("covariance is not positive definite: {e}")))?;
                ZSampler::Normal {
                    chol,
                    lo: truncation.0,
                    hi: truncation.1,
                }
            }
            CovariateLaw::Ar1 { rho, truncation } => ZSampler::Ar1 {
                rho: *rho,
                innovation: (1.0 - rho * rho).sqrt(),
                lo: truncation.0,
                hi: truncation.1,
            },
        })
    }

    fn sample(&self, rng: &mut ChaCha12Rng, p: usize, out: &mut Vec<f64>) {
        out.clear();
        match self {
            ZSampler::Uniform => {
                for _ in 0..p {
                    out.push(rng.random::<f64>());
                }
            }
            ZSampler::Normal { chol, lo, hi } => {
                let eps: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
                for a in 0..p {
                    let mut v = 0.0;
                    for b in 0..=a {
                        v += chol[(a, b)] * eps[b];
                    }
                    out.push(v.clamp(*lo, *hi));
                }
            }
            ZSampler::Ar1 {
                rho,
                innovation,
                lo,
                hi,
            } => {
                let mut prev: f64 = StandardNormal.sample(rng);
                out.push(prev.clamp(*lo, *hi));
                for _ in 1..p {
                    let e: f64 = StandardNormal.sample(rng);
                    prev = rho * prev + innovation * e;
                    out.push(prev.clamp(*lo, *hi));
                }
            }
        }
    }
}

/// Draw one dataset from the configured process.
///
/// Any drawn covariate vector whose hazards sum to one or more at some
/// period makes the configuration inadmissible and is reported as an error
/// rather than silently producing invalid probabilities.
pub fn sample_dataset(config: &SimulationConfig) -> Result<Dataset> {
    config.validate()?;
    let params = config.params();
    let sampler = ZSampler::build(&config.covariate_law, config.p)?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    let censor_cum: Vec<f64> = config
        .censoring
        .iter()
        .scan(0.0, |acc, &c| {
            *acc += c;
            Some(*acc)
        })
        .collect();

    let d = config.d;
    let m = config.m;
    let mut observations = Vec::with_capacity(config.n);
    let mut z = Vec::with_capacity(config.p);
    for i in 0..config.n {
        sampler.sample(&mut rng, config.p, &mut z);
        let joint = params.joint_distribution(&z);
        if joint.diagnostics.admissibility_violations > 0 {
            let worst = (1..=d)
                .max_by(|a, b| {
                    params
                        .total_hazard(*a, &z)
                        .total_cmp(&params.total_hazard(*b, &z))
                })
                .unwrap();
            return Err(Error::config(format!(
                "true hazards are inadmissible: sum {:.4} >= 1 at period {worst} for drawn z = {:?}",
                params.total_hazard(worst, &z),
                &z[..z.len().min(8)]
            )));
        }

        // event type, including "no event within horizon"
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut event: u16 = 0; // 0 = survives the horizon
        for j in 1..=m {
            acc += joint.marginal(j);
            if u < acc {
                event = j;
                break;
            }
        }

        // event time from the conditional law
        let event_time: Option<u32> = if event >= 1 {
            let total = joint.marginal(event);
            let v: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut drawn = d;
            for t in 1..=d {
                acc += joint.prob[(event as usize - 1, t as usize - 1)];
                if v < acc {
                    drawn = t;
                    break;
                }
            }
            Some(drawn)
        } else {
            None
        };

        // censoring time; mass beyond the horizon means none within it
        let cu: f64 = rng.random();
        let censor_time: Option<u32> = censor_cum
            .iter()
            .position(|&cum| cu < cum)
            .map(|idx| idx as u32 + 1);

        let (time, event) = match (event_time, censor_time) {
            (Some(te), Some(tc)) if tc < te => (tc, 0),
            (Some(te), _) => (te, event),
            (None, Some(tc)) => (tc, 0),
            (None, None) => (d, 0),
        };

        observations.push(Observation {
            id: (i + 1).to_string(),
            time,
            event,
            z: z.clone(),
        });
    }

    Ok(Dataset::new(observations, config.p, d, m))
}

/// Which estimators a replication study fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    TwoStep,
    Collapsed,
    Both,
}

impl EstimatorKind {
    fn methods(self) -> Vec<Method> {
        match self {
            EstimatorKind::TwoStep => vec![Method::TwoStep],
            EstimatorKind::Collapsed => vec![Method::Collapsed],
            EstimatorKind::Both => vec![Method::TwoStep, Method::Collapsed],
        }
    }
}

/// One parameter of the model, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum ParamKind {
    /// Coefficient k (1-based) of event type j.
    Beta(usize),
    /// Intercept at period t.
    Alpha(u32),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub j: u16,
    pub param: ParamKind,
    pub true_value: f64,
    /// Repetitions where this parameter had a finite estimate.
    pub defined_reps: usize,
    pub mean: f64,
    pub mean_est_se: Option<f64>,
    /// Sample standard deviation of the estimates; absent with fewer than
    /// two defined repetitions.
    pub emp_se: Option<f64>,
    /// Fraction of defined repetitions whose 95% Wald interval covers the
    /// true value.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub params: Vec<ParamSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventMix {
    pub censored_pct: f64,
    /// Percentage per event type, 1..=m.
    pub event_pct: Vec<f64>,
    /// Mean observed event count per (event, period) cell across
    /// repetitions; the bar data for intercept plots.
    pub mean_events: Vec<Vec<f64>>,
}

/// One per-repetition estimate row, for the per-rep CSV export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepEstimate {
    pub rep: usize,
    pub method: Method,
    pub j: u16,
    pub param: ParamKind,
    pub estimate: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub config_name: String,
    pub seed: u64,
    pub reps_requested: usize,
    pub reps_used: usize,
    pub failures: Vec<(usize, String)>,
    /// False when more than 10% of repetitions failed.
    pub valid: bool,
    pub event_mix: EventMix,
    pub methods: Vec<MethodSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_rep: Vec<RepEstimate>,
}

#[derive(Debug, Clone)]
pub struct ReplicationPlan {
    pub reps: usize,
    pub estimator: EstimatorKind,
    pub fit: FitConfig,
    /// Keep per-repetition estimates in the report (needed for CSV export).
    pub keep_per_rep: bool,
}

struct RepOutcome {
    rep: usize,
    mix_counts: Vec<u64>, // censored, then per event type
    cell_counts: Vec<Vec<u64>>,
    fits: Vec<(Method, FittedModel)>,
}

/// Run seeded repetitions, fit the selected estimators, and aggregate bias,
/// estimated and empirical standard errors, and 95% Wald coverage.
pub fn run_replications(
    config: &SimulationConfig,
    plan: &ReplicationPlan,
) -> Result<ReplicationReport> {
    config.validate()?;
    if plan.reps == 0 {
        return Err(Error::config("at least one repetition required"));
    }
    let methods = plan.estimator.methods();

    let outcomes: Vec<std::result::Result<RepOutcome, (usize, String)>> = (0..plan.reps)
        .into_par_iter()
        .map(|rep| {
            let rep_config = config.clone().with_seed(derive_seed(config.seed, rep as u64));
            let run = || -> Result<RepOutcome> {
                let dataset = sample_dataset(&rep_config)?;
                let mut mix_counts = vec![0u64; config.m as usize + 1];
                for o in dataset.observations() {
                    mix_counts[o.event as usize] += 1;
                }
                let rs = dataset.risk_sets();
                let mut cell_counts = vec![vec![0u64; config.d as usize]; config.m as usize];
                for j in 1..=config.m {
                    for t in 1..=config.d {
                        cell_counts[j as usize - 1][t as usize - 1] = rs.nj(j, t);
                    }
                }
                let mut fits = Vec::new();
                for &method in &methods {
                    let model = match method {
                        Method::TwoStep => fit_two_step(&dataset, &plan.fit)?,
                        Method::Collapsed => fit_collapsed_model(&dataset, &plan.fit)?,
                    };
                    fits.push((method, model));
                }
                Ok(RepOutcome {
                    rep,
                    mix_counts,
                    cell_counts,
                    fits,
                })
            };
            run().map_err(|e| (rep, e.to_string()))
        })
        .collect();

    let mut failures = Vec::new();
    let mut successes = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(o) => successes.push(o),
            Err(f) => failures.push(f),
        }
    }
    let reps_used = successes.len();
    if reps_used == 0 {
        return Err(Error::estimation(format!(
            "all {} repetitions failed; first failure: {}",
            plan.reps,
            failures
                .first()
                .map(|(_, m)| m.as_str())
                .unwrap_or("unknown")
        )));
    }
    let valid = failures.len() * 10 <= plan.reps;

    let mut mix_totals = vec![0u64; config.m as usize + 1];
    for o in &successes {
        for (acc, c) in mix_totals.iter_mut().zip(&o.mix_counts) {
            *acc += c;
        }
    }
    let total_subjects: u64 = mix_totals.iter().sum();
    let mut mean_events = vec![vec![0.0f64; config.d as usize]; config.m as usize];
    for o in &successes {
        for (acc_row, row) in mean_events.iter_mut().zip(&o.cell_counts) {
            for (acc, c) in acc_row.iter_mut().zip(row) {
                *acc += *c as f64;
            }
        }
    }
    for row in &mut mean_events {
        for v in row.iter_mut() {
            *v /= reps_used as f64;
        }
    }
    let event_mix = EventMix {
        censored_pct: 100.0 * mix_totals[0] as f64 / total_subjects as f64,
        event_pct: (1..=config.m as usize)
            .map(|j| 100.0 * mix_totals[j] as f64 / total_subjects as f64)
            .collect(),
        mean_events,
    };

    // parameter grid: per event, betas then alphas
    let mut keys: Vec<(u16, ParamKind, f64)> = Vec::new();
    for j in 1..=config.m {
        for k in 0..config.p {
            keys.push((
                j,
                ParamKind::Beta(k + 1),
                config.beta[j as usize - 1][k],
            ));
        }
        for t in 1..=config.d {
            keys.push((
                j,
                ParamKind::Alpha(t),
                config.alpha[j as usize - 1][t as usize - 1],
            ));
        }
    }

    let extract = |model: &FittedModel, j: u16, param: ParamKind| -> (f64, Option<f64>) {
        match param {
            ParamKind::Beta(k) => {
                let c = model.coefficient(j);
                (c.beta[k - 1], c.se(k - 1))
            }
            ParamKind::Alpha(t) => (
                model.baseline.alpha_at(j, t),
                model.baseline.variance_at(j, t).map(|v| v.sqrt()),
            ),
        }
    };

    let mut per_rep = Vec::new();
    if plan.keep_per_rep {
        for o in &successes {
            for (method, model) in &o.fits {
                for &(j, param, _) in &keys {
                    let (estimate, se) = extract(model, j, param);
                    per_rep.push(RepEstimate {
                        rep: o.rep,
                        method: *method,
                        j,
                        param,
                        estimate,
                        se,
                    });
                }
            }
        }
    }

    let mut method_summaries = Vec::new();
    for &method in &methods {
        let mut params = Vec::with_capacity(keys.len());
        for &(j, param, true_value) in &keys {
            let mut estimates = Vec::with_capacity(reps_used);
            let mut ses = Vec::new();
            let mut covered = 0usize;
            let mut cover_total = 0usize;
            for o in &successes {
                let model = &o
                    .fits
                    .iter()
                    .find(|(m, _)| *m == method)
                    .expect("method fitted")
                    .1;
                let (estimate, se) = extract(model, j, param);
                if estimate.is_finite() {
                    estimates.push(estimate);
                    if let Some(se) = se {
                        ses.push(se);
                        cover_total += 1;
                        if (estimate - true_value).abs() <= 1.96 * se {
                            covered += 1;
                        }
                    }
                }
            }
            let defined = estimates.len();
            let mean = if defined > 0 {
                estimates.iter().sum::<f64>() / defined as f64
            } else {
                f64::NAN
            };
            let emp_se = if defined >= 2 {
                let var = estimates
                    .iter()
                    .map(|e| (e - mean) * (e - mean))
                    .sum::<f64>()
                    / (defined as f64 - 1.0);
                Some(var.sqrt())
            } else {
                None
            };
            let mean_est_se = if ses.is_empty() {
                None
            } else {
                Some(ses.iter().sum::<f64>() / ses.len() as f64)
            };
            let coverage = if cover_total > 0 {
                Some(covered as f64 / cover_total as f64)
            } else {
                None
            };
            params.push(ParamSummary {
                j,
                param,
                true_value,
                defined_reps: defined,
                mean,
                mean_est_se,
                emp_se,
                coverage,
            });
        }
        method_summaries.push(MethodSummary { method, params });
    }

    Ok(ReplicationReport {
        config_name: config.name.clone(),
        seed: config.seed,
        reps_requested: plan.reps,
        reps_used,
        failures,
        valid,
        event_mix,
        methods: method_summaries,
        per_rep,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub d: u32,
    pub n: usize,
    pub method: Method,
    pub median_secs: f64,
    pub iqr_secs: f64,
}

/// Wall-clock comparison of the two estimators on identical datasets, run
/// single-worker so medians reflect the algorithms rather than the pool.
pub fn timing_study(
    configs: &[SimulationConfig],
    reps: usize,
    fit: &FitConfig,
) -> Result<Vec<TimingRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let mut rows = Vec::new();
    for config in configs {
        config.validate()?;
        let mut two_step_times = Vec::with_capacity(reps);
        let mut collapsed_times = Vec::with_capacity(reps);
        for rep in 0..reps {
            let rep_config = config.clone().with_seed(derive_seed(config.seed, rep as u64));
            let dataset = sample_dataset(&rep_config)?;
            pool.install(|| -> Result<()> {
                let start = std::time::Instant::now();
                let _ = fit_two_step(&dataset, fit)?;
                two_step_times.push(start.elapsed().as_secs_f64());
                let start = std::time::Instant::now();
                let _ = fit_collapsed_model(&dataset, fit)?;
                collapsed_times.push(start.elapsed().as_secs_f64());
                Ok(())
            })?;
        }
        let (median, iqr) = median_iqr(&two_step_times);
        rows.push(TimingRow {
            d: config.d,
            n: config.n,
            method: Method::TwoStep,
            median_secs: median,
            iqr_secs: iqr,
        });
        let (median, iqr) = median_iqr(&collapsed_times);
        rows.push(TimingRow {
            d: config.d,
            n: config.n,
            method: Method::Collapsed,
            median_secs: median,
            iqr_secs: iqr,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn preset_one_matches_published_parameters() {
        let cfg = preset(1).unwrap();
        assert_eq!((cfg.n, cfg.p, cfg.d, cfg.m), (250, 5, 7, 2));
        let expected = [
            -0.7 * 0.8f64.ln(),
            -0.7 * 3f64.ln(),
            -0.7 * 3f64.ln(),
            -0.7 * 2.5f64.ln(),
            -0.7 * 2f64.ln(),
        ];
        for (b, e) in cfg.beta[0].iter().zip(expected.iter()) {
            assert_relative_eq!(b, e, epsilon = 1e-12);
        }
        // published rounded values
        assert_relative_eq!(cfg.beta[0][0], 0.156, epsilon = 5e-4);
        assert_relative_eq!(cfg.beta[0][1], -0.769, epsilon = 5e-4);
        assert_relative_eq!(cfg.beta[1][1], -0.659, epsilon = 5e-4);
        assert_relative_eq!(cfg.alpha[0][0], -1.4, epsilon = 1e-12);
        assert_relative_eq!(
            cfg.alpha[0][6],
            -1.4 + 0.4 * 7f64.ln(),
            epsilon = 1e-12
        );
        assert_relative_eq!(cfg.beta[1][0], 0.0, epsilon = 1e-15);
        assert_eq!(cfg.reps, 200);
    }

    #[test]
    fn preset_three_and_seventeen_values() {
        let cfg = preset(3).unwrap();
        assert_eq!((cfg.n, cfg.d), (5000, 30));
        assert_relative_eq!(cfg.alpha[0][0], -2.0, epsilon = 1e-12);
        assert_relative_eq!(cfg.beta[0][0], -(0.8f64.ln()), epsilon = 1e-12);
        assert_relative_eq!(cfg.beta[0][1], -(3f64.ln()), epsilon = 1e-12);
        assert_relative_eq!(cfg.censoring[0], 0.01, epsilon = 1e-15);

        let cfg = preset(17).unwrap();
        assert_eq!((cfg.n, cfg.p), (1000, 15000));
        assert_eq!(&cfg.beta[0][..5], &[-0.7, -0.6, 0.8, 0.7, -0.8]);
        assert_eq!(cfg.signal_columns(1), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(preset(0).is_err());
        assert!(preset(20).is_err());
    }

    #[test]
    fn zero_hazards_censor_everyone_at_horizon() {
        let cfg = SimulationConfig {
            name: "degenerate".into(),
            n: 50,
            p: 1,
            d: 4,
            m: 1,
            alpha: vec![vec![f64::NEG_INFINITY; 4]],
            beta: vec![vec![0.0]],
            covariate_law: CovariateLaw::IndependentUniform,
            censoring: vec![0.0; 4],
            seed: 7,
            reps: 1,
        };
        let ds = sample_dataset(&cfg).unwrap();
        assert!(ds.observations().iter().all(|o| o.time == 4 && o.event == 0));
    }

    #[test]
    fn single_period_event_fraction_matches_hazard() {
        // m = 1, d = 1, hazard 1/2, no censoring: event fraction ~ 1/2
        let cfg = SimulationConfig {
            name: "binomial".into(),
            n: 40000,
            p: 1,
            d: 1,
            m: 1,
            alpha: vec![vec![0.0]],
            beta: vec![vec![0.0]],
            covariate_law: CovariateLaw::IndependentUniform,
            censoring: vec![0.0],
            seed: 11,
            reps: 1,
        };
        let ds = sample_dataset(&cfg).unwrap();
        let events = ds.observations().iter().filter(|o| o.event == 1).count();
        let frac = events as f64 / 40000.0;
        assert!((frac - 0.5).abs() < 3.0 * 0.5 / 200.0, "fraction {frac}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let cfg = preset(1).unwrap();
        let a = sample_dataset(&cfg).unwrap();
        let b = sample_dataset(&cfg).unwrap();
        assert_eq!(a.observations(), b.observations());
        let c = sample_dataset(&cfg.clone().with_seed(99)).unwrap();
        assert_ne!(a.observations(), c.observations());
    }

    #[test]
    fn inadmissible_configuration_is_reported() {
        let cfg = SimulationConfig {
            name: "bad".into(),
            n: 10,
            p: 1,
            d: 2,
            m: 2,
            alpha: vec![vec![2.0, 2.0], vec![2.0, 2.0]],
            beta: vec![vec![0.0], vec![0.0]],
            covariate_law: CovariateLaw::IndependentUniform,
            censoring: vec![0.0, 0.0],
            seed: 3,
            reps: 1,
        };
        let err = sample_dataset(&cfg).unwrap_err();
        assert!(err.to_string().contains(">= 1"), "{err}");
    }

    #[test]
    fn replication_report_shapes() {
        let mut cfg = preset(1).unwrap();
        cfg.n = 120;
        let plan = ReplicationPlan {
            reps: 3,
            estimator: EstimatorKind::TwoStep,
            fit: FitConfig::default(),
            keep_per_rep: true,
        };
        let report = run_replications(&cfg, &plan).unwrap();
        assert_eq!(report.reps_used, 3);
        assert!(report.valid);
        assert_eq!(report.methods.len(), 1);
        assert_eq!(report.methods[0].params.len(), 2 * (5 + 7));
        assert!(report.methods[0].params.iter().all(|p| p.emp_se.is_some()));
        assert!(!report.per_rep.is_empty());
    }

    #[test]
    fn single_rep_has_no_empirical_se() {
        let mut cfg = preset(1).unwrap();
        cfg.n = 120;
        let plan = ReplicationPlan {
            reps: 1,
            estimator: EstimatorKind::TwoStep,
            fit: FitConfig::default(),
            keep_per_rep: false,
        };
        let report = run_replications(&cfg, &plan).unwrap();
        assert!(report.methods[0]
            .params
            .iter()
            .all(|p| p.emp_se.is_none()));
    }
}
