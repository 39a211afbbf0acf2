//! Estimation strategies for the cause-specific discrete hazard model.
//!
//! Two routes to the same `M(d+p)` parameters:
//!
//! * **two-step** — each event type's coefficients are estimated first from a
//!   stratified conditional likelihood in which the period intercepts cancel
//!   ([`conditional`]); each intercept is then recovered from a
//!   one-dimensional moment equation on the original data ([`baseline`]).
//! * **collapsed** — period intercepts and coefficients fit jointly per event
//!   type by logistic regression on the person-period expansion
//!   ([`collapsed`]).

pub mod baseline;
pub mod collapsed;
pub mod conditional;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub use baseline::{fit_alpha, AlphaCell, BetaContext, MOMENT_TOL};
pub use collapsed::{fit_collapsed, CollapsedFit};
pub use conditional::{
    conditional_loglik, LogLik, SolverConfig, Strata, TieMethod,
};

/// Which estimation strategy produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TwoStep,
    Collapsed,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::TwoStep => write!(f, "two-step"),
            Method::Collapsed => write!(f, "collapsed"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-step" | "two_step" => Ok(Method::TwoStep),
            "collapsed" => Ok(Method::Collapsed),
            other => Err(Error::config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub p: usize,
    pub d: u32,
    pub m: u16,
}

/// Fitted coefficients for one event type.
#[derive(Debug, Clone)]
pub struct CoefficientEstimate {
    pub j: u16,
    pub beta: Array1<f64>,
    /// Inverse observed information; absent for penalized fits.
    pub covariance: Option<Array2<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

impl CoefficientEstimate {
    pub fn se(&self, k: usize) -> Option<f64> {
        self.covariance.as_ref().map(|c| c[(k, k)].sqrt())
    }

    pub fn nonzero_count(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }
}

/// Per-(event, period) intercept grid with sentinel handling.
#[derive(Debug, Clone)]
pub struct BaselineEstimate {
    /// `m x d`; `-inf`/`+inf` sentinels for degenerate cells.
    pub alpha: Array2<f64>,
    /// `m x d`; NaN for sentinel cells.
    pub variance: Array2<f64>,
    pub undefined_cells: Vec<(u16, u32)>,
}

impl BaselineEstimate {
    pub fn alpha_at(&self, j: u16, t: u32) -> f64 {
        self.alpha[(j as usize - 1, t as usize - 1)]
    }

    pub fn variance_at(&self, j: u16, t: u32) -> Option<f64> {
        let v = self.variance[(j as usize - 1, t as usize - 1)];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }
}

/// Complete fitted model: one coefficient vector per event type plus the
/// intercept grid, with enough metadata to reproduce predictions.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub method: Method,
    pub tie_method: TieMethod,
    pub dims: Dims,
    pub covariate_names: Vec<String>,
    pub coefficients: Vec<CoefficientEstimate>,
    pub baseline: BaselineEstimate,
}

impl FittedModel {
    pub fn coefficient(&self, j: u16) -> &CoefficientEstimate {
        &self.coefficients[j as usize - 1]
    }
}

/// Settings for a full model fit.
#[derive(Debug, Clone, Default)]
pub struct FitConfig {
    pub tie_method: TieMethod,
    pub solver: SolverConfig,
}

/// Coefficients for one event type by maximizing the stratified conditional
/// likelihood with damped Newton iterations started at zero. The covariance
/// is the inverse observed information of the conditional likelihood, which
/// remains valid because the per-period binary outcomes are conditionally
/// independent.
pub fn fit_beta_conditional(
    dataset: &Dataset,
    j: u16,
    tie_method: TieMethod,
    solver: &SolverConfig,
) -> Result<CoefficientEstimate> {
    let (estimate, _strata) = fit_beta_inner(dataset, j, tie_method, solver)?;
    Ok(estimate)
}

fn fit_beta_inner(
    dataset: &Dataset,
    j: u16,
    tie_method: TieMethod,
    solver: &SolverConfig,
) -> Result<(CoefficientEstimate, Strata)> {
    dataset.validate().into_result()?;
    if j < 1 || j > dataset.m() {
        return Err(Error::validation(format!(
            "event type {j} outside 1..={}",
            dataset.m()
        )));
    }
    let strata = Strata::for_event(dataset, j);
    if strata.total_events() == 0 {
        return Err(Error::estimation(format!("no events of type {j} observed")));
    }
    let cov = conditional::DatasetCov(dataset);
    conditional::check_identifiability(&strata, &cov, dataset.covariate_names())?;
    let outcome = conditional::maximize(&strata, &cov, tie_method, solver)?;
    let estimate = CoefficientEstimate {
        j,
        beta: outcome.beta,
        covariance: Some(outcome.covariance),
        converged: outcome.converged,
        iterations: outcome.iterations,
        final_gradient_norm: outcome.final_gradient_norm,
    };
    Ok((estimate, strata))
}

/// Full two-step fit: conditional-likelihood coefficients per event type,
/// then one moment equation per (event, period) cell. Per-event fits and
/// per-cell solves are independent and run in parallel; results are
/// deterministic for a fixed configuration regardless of worker count.
pub fn fit_two_step(dataset: &Dataset, config: &FitConfig) -> Result<FittedModel> {
    dataset.validate().into_result()?;
    let m = dataset.m();
    let d = dataset.d();
    let rs = dataset.risk_sets();
    for t in 1..=d {
        if rs.y(t) == 0 {
            return Err(Error::validation(format!(
                "no subjects at risk in period {t}; lower the horizon"
            )));
        }
    }

    let per_event: Vec<Result<(CoefficientEstimate, Array2<f64>)>> = (1..=m)
        .into_par_iter()
        .map(|j| {
            let (estimate, strata) = fit_beta_inner(dataset, j, config.tie_method, &config.solver)
                .map_err(|e| e.with_context(&format!("event {j}")))?;
            let covariance = estimate
                .covariance
                .as_ref()
                .expect("unpenalized fit carries covariance");
            let influences = conditional::score_influences(
                &strata,
                &conditional::DatasetCov(dataset),
                estimate.beta.as_slice().expect("contiguous"),
                covariance,
            );
            Ok((estimate, influences))
        })
        .collect();

    let mut coefficients = Vec::with_capacity(m as usize);
    let mut influence_store = Vec::with_capacity(m as usize);
    for res in per_event {
        let (estimate, influences) = res?;
        coefficients.push(estimate);
        influence_store.push(influences);
    }

    let cells: Vec<Result<(u16, u32, AlphaCell)>> = (1..=m)
        .flat_map(|j| (1..=d).map(move |t| (j, t)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(j, t)| {
            let est = &coefficients[j as usize - 1];
            let ctx = BetaContext {
                covariance: est.covariance.as_ref().unwrap(),
                influences: &influence_store[j as usize - 1],
            };
            let cell = fit_alpha(dataset, j, t, &est.beta, Some(&ctx))
                .map_err(|e| e.with_context(&format!("event {j}, period {t}")))?;
            Ok((j, t, cell))
        })
        .collect();

    let mut alpha = Array2::<f64>::zeros((m as usize, d as usize));
    let mut variance = Array2::<f64>::from_elem((m as usize, d as usize), f64::NAN);
    let mut undefined_cells = Vec::new();
    for res in cells {
        let (j, t, cell) = res?;
        alpha[(j as usize - 1, t as usize - 1)] = cell.alpha();
        match cell {
            AlphaCell::Defined { variance: v, .. } => {
                variance[(j as usize - 1, t as usize - 1)] = v;
            }
            AlphaCell::Undefined { .. } => undefined_cells.push((j, t)),
        }
    }
    undefined_cells.sort_unstable();

    Ok(FittedModel {
        method: Method::TwoStep,
        tie_method: config.tie_method,
        dims: Dims {
            n: dataset.n(),
            p: dataset.p(),
            d,
            m,
        },
        covariate_names: dataset.covariate_names().to_vec(),
        coefficients,
        baseline: BaselineEstimate {
            alpha,
            variance,
            undefined_cells,
        },
    })
}

/// Collapsed-likelihood fit of every event type, assembled into the same
/// model shape as the two-step estimator.
pub fn fit_collapsed_model(dataset: &Dataset, config: &FitConfig) -> Result<FittedModel> {
    dataset.validate().into_result()?;
    let m = dataset.m();
    let d = dataset.d();

    let fits: Vec<Result<CollapsedFit>> = (1..=m)
        .into_par_iter()
        .map(|j| {
            fit_collapsed(dataset, j, &config.solver)
                .map_err(|e| e.with_context(&format!("event {j}")))
        })
        .collect();

    let mut coefficients = Vec::with_capacity(m as usize);
    let mut alpha = Array2::<f64>::zeros((m as usize, d as usize));
    let mut variance = Array2::<f64>::from_elem((m as usize, d as usize), f64::NAN);
    let mut undefined_cells = Vec::new();
    for res in fits {
        let fit = res?;
        let row = fit.j as usize - 1;
        for t in 1..=d as usize {
            alpha[(row, t - 1)] = fit.alphas[t - 1];
            if let Some(v) = fit.alpha_variance[t - 1] {
                variance[(row, t - 1)] = v;
            }
        }
        for &t in &fit.undefined {
            undefined_cells.push((fit.j, t));
        }
        coefficients.push(CoefficientEstimate {
            j: fit.j,
            beta: fit.beta,
            covariance: Some(fit.beta_covariance),
            converged: fit.converged,
            iterations: fit.iterations,
            final_gradient_norm: fit.final_gradient_norm,
        });
    }
    undefined_cells.sort_unstable();

    Ok(FittedModel {
        method: Method::Collapsed,
        tie_method: config.tie_method,
        dims: Dims {
            n: dataset.n(),
            p: dataset.p(),
            d,
            m,
        },
        covariate_names: dataset.covariate_names().to_vec(),
        coefficients,
        baseline: BaselineEstimate {
            alpha,
            variance,
            undefined_cells,
        },
    })
}

// --- JSON serialization -----------------------------------------------------
//
// Intercept cells may be +-infinity; they are encoded as the strings "+inf"
// and "-inf" so the document stays valid JSON. Covariances are row-major.

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Cell {
    Num(f64),
    Sym(String),
    Null,
}

impl Cell {
    fn from_alpha(v: f64) -> Cell {
        if v == f64::INFINITY {
            Cell::Sym("+inf".to_string())
        } else if v == f64::NEG_INFINITY {
            Cell::Sym("-inf".to_string())
        } else {
            Cell::Num(v)
        }
    }

    fn to_alpha(&self) -> Result<f64> {
        match self {
            Cell::Num(v) => Ok(*v),
            Cell::Sym(s) if s == "+inf" => Ok(f64::INFINITY),
            Cell::Sym(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Cell::Sym(s) => Err(Error::validation(format!("bad grid cell `{s}`"))),
            Cell::Null => Err(Error::validation("null intercept cell".to_string())),
        }
    }

    fn from_variance(v: f64) -> Cell {
        if v.is_nan() {
            Cell::Null
        } else {
            Cell::Num(v)
        }
    }

    fn to_variance(&self) -> Result<f64> {
        match self {
            Cell::Num(v) => Ok(*v),
            Cell::Null => Ok(f64::NAN),
            Cell::Sym(s) => Err(Error::validation(format!("bad variance cell `{s}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CoefficientJson {
    j: u16,
    beta: Vec<f64>,
    covariance: Option<Vec<f64>>,
    converged: bool,
    iterations: usize,
    final_gradient_norm: f64,
}

#[derive(Serialize, Deserialize)]
struct BaselineJson {
    alpha: Vec<Vec<Cell>>,
    variance: Vec<Vec<Cell>>,
    undefined_cells: Vec<(u16, u32)>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    format: String,
    method: Method,
    tie_method: TieMethod,
    dims: Dims,
    covariate_names: Vec<String>,
    coefficients: Vec<CoefficientJson>,
    baseline: BaselineJson,
}

const MODEL_FORMAT: &str = "dtscr-model/1";

impl FittedModel {
    pub fn to_json(&self) -> Result<String> {
        let m = self.dims.m as usize;
        let d = self.dims.d as usize;
        let json = ModelJson {
            format: MODEL_FORMAT.to_string(),
            method: self.method,
            tie_method: self.tie_method,
            dims: self.dims,
            covariate_names: self.covariate_names.clone(),
            coefficients: self
                .coefficients
                .iter()
                .map(|c| CoefficientJson {
                    j: c.j,
                    beta: c.beta.to_vec(),
                    covariance: c.covariance.as_ref().map(|m| m.iter().cloned().collect()),
                    converged: c.converged,
                    iterations: c.iterations,
                    final_gradient_norm: c.final_gradient_norm,
                })
                .collect(),
            baseline: BaselineJson {
                alpha: (0..m)
                    .map(|j| {
                        (0..d)
                            .map(|t| Cell::from_alpha(self.baseline.alpha[(j, t)]))
                            .collect()
                    })
                    .collect(),
                variance: (0..m)
                    .map(|j| {
                        (0..d)
                            .map(|t| Cell::from_variance(self.baseline.variance[(j, t)]))
                            .collect()
                    })
                    .collect(),
                undefined_cells: self.baseline.undefined_cells.clone(),
            },
        };
        Ok(serde_json::to_string_pretty(&json)?)
    }

    pub fn from_json(text: &str) -> Result<FittedModel> {
        let json: ModelJson = serde_json::from_str(text)?;
        if json.format != MODEL_FORMAT {
            return Err(Error::validation(format!(
                "unsupported model format `{}`",
                json.format
            )));
        }
        let m = json.dims.m as usize;
        let d = json.dims.d as usize;
        let p = json.dims.p;
        if json.coefficients.len() != m {
            return Err(Error::validation(
                "model must carry one coefficient block per event type".to_string(),
            ));
        }
        let mut coefficients = Vec::with_capacity(m);
        for (idx, c) in json.coefficients.into_iter().enumerate() {
            if c.j as usize != idx + 1 {
                return Err(Error::validation(
                    "coefficient blocks must cover event types 1..=m in order".to_string(),
                ));
            }
            if c.beta.len() != p {
                return Err(Error::validation(format!(
                    "beta for event {} has wrong length",
                    c.j
                )));
            }
            let covariance = match c.covariance {
                Some(flat) => {
                    if flat.len() != p * p {
                        return Err(Error::validation(format!(
                            "covariance for event {} has wrong size",
                            c.j
                        )));
                    }
                    Some(Array2::from_shape_vec((p, p), flat).expect("sized above"))
                }
                None => None,
            };
            coefficients.push(CoefficientEstimate {
                j: c.j,
                beta: Array1::from_vec(c.beta),
                covariance,
                converged: c.converged,
                iterations: c.iterations,
                final_gradient_norm: c.final_gradient_norm,
            });
        }

        let mut alpha = Array2::<f64>::zeros((m, d));
        let mut variance = Array2::<f64>::from_elem((m, d), f64::NAN);
        if json.baseline.alpha.len() != m || json.baseline.variance.len() != m {
            return Err(Error::validation("baseline grids must have m rows"));
        }
        for j in 0..m {
            if json.baseline.alpha[j].len() != d || json.baseline.variance[j].len() != d {
                return Err(Error::validation("baseline grids must have d columns"));
            }
            for t in 0..d {
                alpha[(j, t)] = json.baseline.alpha[j][t].to_alpha()?;
                variance[(j, t)] = json.baseline.variance[j][t].to_variance()?;
            }
        }

        Ok(FittedModel {
            method: json.method,
            tie_method: json.tie_method,
            dims: json.dims,
            covariate_names: json.covariate_names,
            coefficients,
            baseline: BaselineEstimate {
                alpha,
                variance,
                undefined_cells: json.baseline.undefined_cells,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use approx::assert_relative_eq;

    fn small_dataset() -> Dataset {
        let obs = vec![
            Observation { id: "1".into(), time: 1, event: 1, z: vec![0.2] },
            Observation { id: "2".into(), time: 1, event: 0, z: vec![-0.4] },
            Observation { id: "3".into(), time: 2, event: 2, z: vec![0.9] },
            Observation { id: "4".into(), time: 2, event: 1, z: vec![0.1] },
            Observation { id: "5".into(), time: 2, event: 0, z: vec![-0.8] },
            Observation { id: "6".into(), time: 3, event: 1, z: vec![0.5] },
            Observation { id: "7".into(), time: 3, event: 2, z: vec![-0.2] },
            Observation { id: "8".into(), time: 3, event: 0, z: vec![0.7] },
        ];
        Dataset::new(obs, 1, 3, 2)
    }

    #[test]
    fn two_step_fit_runs_and_serializes() {
        let ds = small_dataset();
        let model = fit_two_step(&ds, &FitConfig::default()).unwrap();
        assert_eq!(model.coefficients.len(), 2);
        assert_eq!(model.coefficients[0].j, 1);
        assert_eq!(model.coefficients[1].j, 2);
        assert!(model.coefficients.iter().all(|c| c.converged));

        let json = model.to_json().unwrap();
        let back = FittedModel::from_json(&json).unwrap();
        assert_eq!(back.dims, model.dims);
        for j in 0..2 {
            for t in 0..3 {
                let a = model.baseline.alpha[(j, t)];
                let b = back.baseline.alpha[(j, t)];
                assert!(a == b || (a.is_nan() && b.is_nan()));
            }
            for (x, y) in model.coefficients[j]
                .beta
                .iter()
                .zip(back.coefficients[j].beta.iter())
            {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn degenerate_horizon_flags_saturated_cell() {
        // every subject fails at t = 1: the intercept is a +inf sentinel and
        // the coefficient comes from the single saturated stratum
        let obs = (0..6)
            .map(|i| Observation {
                id: format!("s{i}"),
                time: 1,
                event: 1,
                z: vec![i as f64 / 5.0],
            })
            .collect();
        let ds = Dataset::new(obs, 1, 1, 1);
        // under the exact method a saturated stratum carries no information,
        // so this edge is exercised with the Breslow approximation
        let config = FitConfig {
            tie_method: TieMethod::Breslow,
            ..FitConfig::default()
        };
        let model = fit_two_step(&ds, &config).unwrap();
        assert_eq!(model.baseline.alpha[(0, 0)], f64::INFINITY);
        assert_eq!(model.baseline.undefined_cells, vec![(1, 1)]);
        assert!(model.coefficients[0].converged);
        // Breslow objective for the saturated stratum peaks at zero
        assert_relative_eq!(model.coefficients[0].beta[0], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn two_step_deterministic_across_worker_counts() {
        let ds = small_dataset();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| fit_two_step(&ds, &FitConfig::default()).unwrap())
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn collapsed_model_has_same_shape() {
        let ds = small_dataset();
        let model = fit_collapsed_model(&ds, &FitConfig::default()).unwrap();
        assert_eq!(model.method, Method::Collapsed);
        assert_eq!(model.coefficients.len(), 2);
        assert_eq!(model.baseline.alpha.dim(), (2, 3));
    }
}
