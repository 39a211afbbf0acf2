//! Python bindings: the dataset container, both estimators, penalized and
//! screened fits, predictions, metrics, and the simulation presets.

use ndarray::Array1;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dtscr_core::data;
use dtscr_core::estimators::{self, FitConfig, SolverConfig, TieMethod};
use dtscr_core::metrics;
use dtscr_core::prediction::HazardParams;
use dtscr_core::regularize::{
    cv_select_eta, fit_two_step_penalized, CvBaseline, PenaltyKind, PenaltySpec, TuningGrid,
};
use dtscr_core::screening;
use dtscr_core::simulate;

fn to_py_err(err: dtscr_core::Error) -> PyErr {
    if err.is_input_error() {
        PyValueError::new_err(err.to_string())
    } else {
        PyRuntimeError::new_err(err.to_string())
    }
}

fn parse_tie(tie: &str) -> PyResult<TieMethod> {
    tie.parse().map_err(to_py_err)
}

/// Observed dataset: one row per subject with an integer time in `1..=d`,
/// an event label in `0..=m` (0 = censored) and a covariate vector.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (ids, times, events, covariates, horizon = None, event_types = None))]
    fn new(
        ids: Vec<String>,
        times: Vec<u32>,
        events: Vec<u16>,
        covariates: Vec<Vec<f64>>,
        horizon: Option<u32>,
        event_types: Option<u16>,
    ) -> PyResult<Self> {
        let n = ids.len();
        if times.len() != n || events.len() != n || covariates.len() != n {
            return Err(PyValueError::new_err(
                "ids, times, events and covariates must have equal length",
            ));
        }
        let p = covariates.first().map(|z| z.len()).unwrap_or(0);
        let d = horizon.unwrap_or_else(|| times.iter().copied().max().unwrap_or(1));
        let m = event_types.unwrap_or_else(|| events.iter().copied().max().unwrap_or(1).max(1));
        let observations = ids
            .into_iter()
            .zip(times)
            .zip(events)
            .zip(covariates)
            .map(|(((id, time), event), z)| data::Observation {
                id,
                time,
                event,
                z,
            })
            .collect();
        Ok(PyDataset {
            inner: data::Dataset::new(observations, p, d, m),
        })
    }

    /// Load `id,time,event,z1,...,zp` CSV; returns (dataset, clamped_count).
    #[staticmethod]
    #[pyo3(signature = (path, horizon = None, event_types = None))]
    fn read_csv(path: &str, horizon: Option<u32>, event_types: Option<u16>) -> PyResult<(Self, usize)> {
        let load = data::read_csv_path(path, horizon, event_types).map_err(to_py_err)?;
        Ok((PyDataset { inner: load.dataset }, load.clamped))
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn d(&self) -> u32 {
        self.inner.d()
    }

    #[getter]
    fn m(&self) -> u16 {
        self.inner.m()
    }

    /// Per-rule validation results as (name, passed, detail) triples.
    fn validate(&self) -> Vec<(String, bool, String)> {
        self.inner
            .validate()
            .rules
            .into_iter()
            .map(|r| (r.name, r.passed, r.detail))
            .collect()
    }

    /// At-risk count at one period.
    fn at_risk(&self, t: u32) -> u64 {
        self.inner.risk_sets().y(t)
    }

    /// Event count at one (event, period) cell.
    fn event_count(&self, j: u16, t: u32) -> u64 {
        self.inner.risk_sets().nj(j, t)
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| to_py_err(e.into()))?;
        data::write_csv(&self.inner, file).map_err(to_py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, p={}, d={}, m={})",
            self.inner.n(),
            self.inner.p(),
            self.inner.d(),
            self.inner.m()
        )
    }
}

/// Fitted model: per-event coefficients plus the per-(event, period)
/// intercept grid with `-inf`/`+inf` sentinels for degenerate cells.
#[pyclass(name = "FittedModel", skip_from_py_object)]
#[derive(Clone)]
struct PyFittedModel {
    inner: estimators::FittedModel,
}

#[pymethods]
impl PyFittedModel {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn tie_method(&self) -> String {
        self.inner.tie_method.to_string()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names.clone()
    }

    fn beta(&self, j: u16) -> Vec<f64> {
        self.inner.coefficient(j).beta.to_vec()
    }

    fn beta_se(&self, j: u16) -> Option<Vec<f64>> {
        let c = self.inner.coefficient(j);
        c.covariance
            .as_ref()
            .map(|cov| (0..c.beta.len()).map(|k| cov[(k, k)].sqrt()).collect())
    }

    fn alpha(&self, j: u16) -> Vec<f64> {
        (1..=self.inner.dims.d)
            .map(|t| self.inner.baseline.alpha_at(j, t))
            .collect()
    }

    fn alpha_variance(&self, j: u16) -> Vec<Option<f64>> {
        (1..=self.inner.dims.d)
            .map(|t| self.inner.baseline.variance_at(j, t))
            .collect()
    }

    fn undefined_cells(&self) -> Vec<(u16, u32)> {
        self.inner.baseline.undefined_cells.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyFittedModel {
            inner: estimators::FittedModel::from_json(text).map_err(to_py_err)?,
        })
    }

    /// Cause-specific hazard at one (event, period) for a covariate vector.
    fn hazard(&self, j: u16, t: u32, z: Vec<f64>) -> f64 {
        HazardParams::from_model(&self.inner).hazard(j, t, &z)
    }

    /// Overall survival curve `S(t|z)` for `t = 1..=d`.
    fn survival(&self, z: Vec<f64>) -> Vec<f64> {
        let params = HazardParams::from_model(&self.inner);
        (1..=params.d()).map(|t| params.survival(t, &z)).collect()
    }

    /// Cumulative incidence curve `F_j(t|z)` for `t = 1..=d`.
    fn cif(&self, j: u16, z: Vec<f64>) -> Vec<f64> {
        let params = HazardParams::from_model(&self.inner);
        (1..=params.d()).map(|t| params.cif(j, t, &z)).collect()
    }

    fn marginal_event_prob(&self, j: u16, z: Vec<f64>) -> f64 {
        HazardParams::from_model(&self.inner).marginal_event_prob(j, &z)
    }

    fn __repr__(&self) -> String {
        format!(
            "FittedModel(method={}, n={}, p={}, d={}, m={})",
            self.inner.method,
            self.inner.dims.n,
            self.inner.dims.p,
            self.inner.dims.d,
            self.inner.dims.m
        )
    }
}

/// Two-step fit: conditional-likelihood coefficients per event type, then
/// one moment equation per (event, period) intercept.
#[pyfunction]
#[pyo3(signature = (dataset, tie_method = "exact"))]
fn fit_two_step(dataset: &PyDataset, tie_method: &str) -> PyResult<PyFittedModel> {
    let config = FitConfig {
        tie_method: parse_tie(tie_method)?,
        ..FitConfig::default()
    };
    Ok(PyFittedModel {
        inner: estimators::fit_two_step(&dataset.inner, &config).map_err(to_py_err)?,
    })
}

/// Collapsed-likelihood comparator: intercepts and coefficients fit jointly
/// per event type on the person-period expansion.
#[pyfunction]
fn fit_collapsed(dataset: &PyDataset) -> PyResult<PyFittedModel> {
    Ok(PyFittedModel {
        inner: estimators::fit_collapsed_model(&dataset.inner, &FitConfig::default())
            .map_err(to_py_err)?,
    })
}

/// Lasso-penalized two-step fit with K-fold cross-validated shrinkage.
/// Returns the model and the selected `log eta` per event type.
#[pyfunction]
#[pyo3(signature = (dataset, seed, folds = 4, log_eta_start = -12.0, log_eta_end = -1.0, log_eta_step = 1.0, tie_method = "efron"))]
fn fit_two_step_lasso(
    dataset: &PyDataset,
    seed: u64,
    folds: usize,
    log_eta_start: f64,
    log_eta_end: f64,
    log_eta_step: f64,
    tie_method: &str,
) -> PyResult<(PyFittedModel, Vec<f64>)> {
    let tie = parse_tie(tie_method)?;
    let solver = SolverConfig::default();
    let mut log_eta_values = Vec::new();
    let mut v = log_eta_start;
    while v <= log_eta_end + 1e-9 {
        log_eta_values.push(v);
        v += log_eta_step;
    }
    let grid = TuningGrid {
        log_eta_values,
        folds,
        seed,
    };
    let selection = cv_select_eta(
        &dataset.inner,
        &grid,
        PenaltyKind::Lasso,
        tie,
        &solver,
        CvBaseline::FoldLocal,
    )
    .map_err(to_py_err)?;
    let spec = PenaltySpec {
        kind: PenaltyKind::Lasso,
        eta: selection.eta_star.clone(),
    };
    let model = fit_two_step_penalized(&dataset.inner, &spec, tie, &solver).map_err(to_py_err)?;
    Ok((PyFittedModel { inner: model }, selection.log_eta_star))
}

/// Marginal screening with the permutation threshold. Returns
/// (threshold, selected columns per event type, signed marginal estimates).
#[pyfunction]
#[pyo3(signature = (dataset, seed, tie_method = "efron"))]
fn sis(
    dataset: &PyDataset,
    seed: u64,
    tie_method: &str,
) -> PyResult<(f64, Vec<Vec<usize>>, Vec<Vec<f64>>)> {
    let tie = parse_tie(tie_method)?;
    let result = screening::sis(&dataset.inner, seed, tie, &SolverConfig::default())
        .map_err(to_py_err)?;
    let beta: Vec<Vec<f64>> = (0..dataset.inner.m() as usize)
        .map(|j| result.marginal_beta.row(j).to_vec())
        .collect();
    Ok((result.threshold, result.selected, beta))
}

/// Discrimination/calibration summary of a model on a dataset:
/// (global_auc, global_brier, per_event_auc, per_event_brier).
#[pyfunction]
fn evaluate(
    model: &PyFittedModel,
    dataset: &PyDataset,
) -> PyResult<(Option<f64>, Option<f64>, Vec<Option<f64>>, Vec<Option<f64>>)> {
    let params = HazardParams::from_model(&model.inner);
    let report = metrics::evaluate_model(&params, &dataset.inner).map_err(to_py_err)?;
    Ok((
        report.auc_global,
        report.brier_global,
        report.auc_by_event,
        report.brier_by_event,
    ))
}

/// Joint log-likelihood diagnostic of a model on a dataset.
#[pyfunction]
fn full_loglik(model: &PyFittedModel, dataset: &PyDataset) -> PyResult<f64> {
    let params = HazardParams::from_model(&model.inner);
    params.full_loglik(&dataset.inner).map_err(to_py_err)
}

/// Coefficients for a single event type from the conditional likelihood.
#[pyfunction]
#[pyo3(signature = (dataset, j, tie_method = "exact"))]
fn fit_beta(dataset: &PyDataset, j: u16, tie_method: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let tie = parse_tie(tie_method)?;
    let est = estimators::fit_beta_conditional(&dataset.inner, j, tie, &SolverConfig::default())
        .map_err(to_py_err)?;
    let se: Vec<f64> = (0..est.beta.len())
        .map(|k| est.se(k).unwrap_or(f64::NAN))
        .collect();
    Ok((est.beta.to_vec(), se))
}

/// One intercept from its moment equation at fixed coefficients. Returns
/// `-inf`/`+inf` sentinels for degenerate cells.
#[pyfunction]
fn fit_alpha(dataset: &PyDataset, j: u16, t: u32, beta: Vec<f64>) -> PyResult<f64> {
    let cell = estimators::fit_alpha(&dataset.inner, j, t, &Array1::from_vec(beta), None)
        .map_err(to_py_err)?;
    Ok(cell.alpha())
}

/// Sample one dataset from a published simulation setting.
#[pyfunction]
#[pyo3(signature = (setting, seed, n = None))]
fn simulate_preset(setting: u8, seed: u64, n: Option<usize>) -> PyResult<PyDataset> {
    let mut config = simulate::preset(setting).map_err(to_py_err)?.with_seed(seed);
    if let Some(n) = n {
        config = config.with_n(n);
    }
    Ok(PyDataset {
        inner: simulate::sample_dataset(&config).map_err(to_py_err)?,
    })
}

#[pymodule]
fn dtscr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFittedModel>()?;
    m.add_function(wrap_pyfunction!(fit_two_step, m)?)?;
    m.add_function(wrap_pyfunction!(fit_collapsed, m)?)?;
    m.add_function(wrap_pyfunction!(fit_two_step_lasso, m)?)?;
    m.add_function(wrap_pyfunction!(fit_beta, m)?)?;
    m.add_function(wrap_pyfunction!(fit_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(sis, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(full_loglik, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_preset, m)?)?;
    Ok(())
}
