//! Stratified conditional likelihood for the regression coefficients.
//!
//! The person-period expansion is stratified by period; conditioning each
//! period on its number of type-`j` events cancels the per-period intercepts,
//! leaving a likelihood in the regression coefficients alone. The resulting
//! expression has the form of a Cox partial likelihood with ties: each period
//! is a stratum whose risk set is every subject with `X_i >= t` and whose
//! cases are the subjects with `X_i = t, J_i = j`.
//!
//! Three tie treatments are provided. `Exact` sums the denominator over all
//! case-subsets of the stratum (the conditioned likelihood itself) and is
//! guarded by a per-stratum event-count limit. `Breslow` replaces the subset
//! sum with the power approximation, which attenuates coefficients when a
//! noticeable fraction of each risk set fails at once — exactly the regime
//! discrete time puts us in. `Efron` corrects the denominator for the ties
//! at the same per-stratum cost and tracks the exact likelihood closely, so
//! it is the default.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Tie treatment for multi-event strata.
///
/// `Exact` is the default: it is the conditional law of the discrete model
/// itself, and with the share of a risk set failing per period that discrete
/// time produces, the approximate forms visibly attenuate coefficients.
/// `Efron` is the right choice where thousands of fits are needed
/// (screening, penalized paths); `Breslow` is kept for reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieMethod {
    Breslow,
    Efron,
    #[default]
    Exact,
}

impl std::fmt::Display for TieMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TieMethod::Breslow => write!(f, "breslow"),
            TieMethod::Efron => write!(f, "efron"),
            TieMethod::Exact => write!(f, "exact"),
        }
    }
}

impl std::str::FromStr for TieMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "breslow" => Ok(TieMethod::Breslow),
            "efron" => Ok(TieMethod::Efron),
            "exact" => Ok(TieMethod::Exact),
            other => Err(Error::config(format!("unknown tie method `{other}`"))),
        }
    }
}

/// Newton solver settings shared by the unpenalized fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Convergence tolerance on the gradient infinity norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Divergence guard: an iterate with any |beta_k| above this is treated
    /// as separation.
    pub bound: f64,
    /// Largest per-stratum event count admitted by the exact tie method.
    /// The recursion is polynomial (`O(K * D)` per stratum and derivative
    /// order), so the guard only fences off absurd workloads.
    pub exact_limit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: 100,
            bound: 50.0,
            exact_limit: 10_000,
        }
    }
}

/// Period stratification of a dataset for one event type.
///
/// Risk sets are nested (`{X >= t+1}` is a subset of `{X >= t}`), which the
/// Breslow evaluator exploits by accumulating sufficient statistics once per
/// subject instead of once per person-period row.
#[derive(Debug, Clone)]
pub struct Strata {
    /// Subject indices sorted by descending observed time (ties by index).
    order: Vec<u32>,
    /// `risk_len[t-1]` = number of subjects with `X_i >= t`, i.e. the prefix
    /// of `order` at risk in period `t`.
    risk_len: Vec<usize>,
    /// `events[t-1]` = subjects with `X_i = t` and the target event.
    events: Vec<Vec<u32>>,
    n: usize,
    total_events: usize,
}

impl Strata {
    pub fn for_event(dataset: &Dataset, j: u16) -> Strata {
        let n = dataset.n();
        let d = dataset.d() as usize;
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(dataset.obs(i as usize).time), i));

        let mut risk_len = vec![0usize; d];
        for o in dataset.observations() {
            let t = (o.time as usize).min(d);
            risk_len[t - 1] += 1;
        }
        for t in (0..d.saturating_sub(1)).rev() {
            risk_len[t] += risk_len[t + 1];
        }

        let mut events: Vec<Vec<u32>> = vec![Vec::new(); d];
        let mut total_events = 0usize;
        for (i, o) in dataset.observations().iter().enumerate() {
            if o.event == j && o.time as usize <= d {
                events[o.time as usize - 1].push(i as u32);
                total_events += 1;
            }
        }
        Strata {
            order,
            risk_len,
            events,
            n,
            total_events,
        }
    }

    pub fn d(&self) -> usize {
        self.risk_len.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total_events(&self) -> usize {
        self.total_events
    }

    pub fn n_events_at(&self, t_idx: usize) -> usize {
        self.events[t_idx].len()
    }

    pub fn at_risk(&self, t_idx: usize) -> &[u32] {
        &self.order[..self.risk_len[t_idx]]
    }

    pub fn events_at(&self, t_idx: usize) -> &[u32] {
        &self.events[t_idx]
    }
}

/// Covariate access used by the likelihood evaluators. Implemented by the
/// dataset itself (all columns) and by single-column views so that marginal
/// screening fits never materialize an `n x p` copy.
pub trait Covariates: Sync {
    fn dim(&self) -> usize;
    fn dot(&self, i: usize, beta: &[f64]) -> f64;
    fn value(&self, i: usize, k: usize) -> f64;
    /// `acc += w * z_i`
    fn add_scaled(&self, i: usize, w: f64, acc: &mut [f64]);
    /// Packed upper triangle `acc += w * z_i z_i^T`
    fn add_scaled_outer(&self, i: usize, w: f64, acc: &mut [f64]);
}

/// All covariate columns of a dataset.
pub struct DatasetCov<'a>(pub &'a Dataset);

impl Covariates for DatasetCov<'_> {
    #[inline]
    fn dim(&self) -> usize {
        self.0.p()
    }

    #[inline]
    fn dot(&self, i: usize, beta: &[f64]) -> f64 {
        let z = self.0.z(i);
        z.iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    #[inline]
    fn value(&self, i: usize, k: usize) -> f64 {
        self.0.z(i)[k]
    }

    #[inline]
    fn add_scaled(&self, i: usize, w: f64, acc: &mut [f64]) {
        for (a, z) in acc.iter_mut().zip(self.0.z(i)) {
            *a += w * z;
        }
    }

    #[inline]
    fn add_scaled_outer(&self, i: usize, w: f64, acc: &mut [f64]) {
        let z = self.0.z(i);
        let p = z.len();
        let mut idx = 0;
        for k in 0..p {
            let wk = w * z[k];
            for zl in &z[k..p] {
                acc[idx] += wk * zl;
                idx += 1;
            }
        }
    }
}

/// Covariate rows held in a standard-layout matrix (used by penalized fits
/// on standardized copies).
pub struct MatrixCov<'a>(pub &'a Array2<f64>);

impl Covariates for MatrixCov<'_> {
    #[inline]
    fn dim(&self) -> usize {
        self.0.ncols()
    }

    #[inline]
    fn dot(&self, i: usize, beta: &[f64]) -> f64 {
        let row = self.0.row(i);
        row.iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    #[inline]
    fn value(&self, i: usize, k: usize) -> f64 {
        self.0[(i, k)]
    }

    #[inline]
    fn add_scaled(&self, i: usize, w: f64, acc: &mut [f64]) {
        for (a, z) in acc.iter_mut().zip(self.0.row(i)) {
            *a += w * z;
        }
    }

    #[inline]
    fn add_scaled_outer(&self, i: usize, w: f64, acc: &mut [f64]) {
        let row = self.0.row(i);
        let p = row.len();
        let mut idx = 0;
        for k in 0..p {
            let wk = w * row[k];
            for l in k..p {
                acc[idx] += wk * row[l];
                idx += 1;
            }
        }
    }
}

/// A single covariate column, stored contiguously by subject index.
pub struct ColumnCov<'a>(pub &'a [f64]);

impl Covariates for ColumnCov<'_> {
    #[inline]
    fn dim(&self) -> usize {
        1
    }

    #[inline]
    fn dot(&self, i: usize, beta: &[f64]) -> f64 {
        self.0[i] * beta[0]
    }

    #[inline]
    fn value(&self, i: usize, _k: usize) -> f64 {
        self.0[i]
    }

    #[inline]
    fn add_scaled(&self, i: usize, w: f64, acc: &mut [f64]) {
        acc[0] += w * self.0[i];
    }

    #[inline]
    fn add_scaled_outer(&self, i: usize, w: f64, acc: &mut [f64]) {
        acc[0] += w * self.0[i] * self.0[i];
    }
}

/// Value, gradient and Hessian of the conditional log-likelihood.
#[derive(Debug, Clone)]
pub struct LogLik {
    pub value: f64,
    pub gradient: Array1<f64>,
    /// Negative semi-definite at any interior point.
    pub hessian: Array2<f64>,
}

fn packed_len(p: usize) -> usize {
    p * (p + 1) / 2
}

fn unpack_symmetric(packed: &[f64], p: usize) -> Array2<f64> {
    let mut out = Array2::zeros((p, p));
    let mut idx = 0;
    for k in 0..p {
        for l in k..p {
            out[(k, l)] = packed[idx];
            out[(l, k)] = packed[idx];
            idx += 1;
        }
    }
    out
}

/// Linear predictors for every subject, shifted so that the maximum is zero.
/// The shift leaves gradient and Hessian unchanged and removes it from the
/// value analytically.
fn shifted_eta<C: Covariates>(cov: &C, beta: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut eta = Vec::with_capacity(n);
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        let e = cov.dot(i, beta);
        if e > max {
            max = e;
        }
        eta.push(e);
    }
    if !max.is_finite() {
        max = 0.0;
    }
    for e in &mut eta {
        *e -= max;
    }
    (eta, max)
}

/// Breslow/Efron evaluation over nested risk sets: one pass from the last
/// period to the first, adding each subject to the running sufficient
/// statistics the first time it becomes at risk. Efron additionally corrects
/// each stratum's denominator with the event-subset sums.
fn eval_nested<C: Covariates, const GRAD: bool, const HESS: bool>(
    strata: &Strata,
    cov: &C,
    beta: &[f64],
    efron: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    let p = cov.dim();
    let d = strata.d();
    let (eta, shift) = shifted_eta(cov, beta, strata.n());

    let mut value = 0.0;
    let mut grad = vec![0.0; if GRAD { p } else { 0 }];
    let mut hess = vec![0.0; if HESS { packed_len(p) } else { 0 }];

    let mut s0 = 0.0;
    let mut s1 = vec![0.0; if GRAD || HESS { p } else { 0 }];
    let mut s2 = vec![0.0; if HESS { packed_len(p) } else { 0 }];
    let mut u = vec![0.0; if HESS { p } else { 0 }];

    // event-only sums for the Efron correction
    let mut e1 = vec![0.0; if GRAD || HESS { p } else { 0 }];
    let mut e2 = vec![0.0; if HESS { packed_len(p) } else { 0 }];

    let mut added = 0usize;
    for t_idx in (0..d).rev() {
        let len = strata.risk_len[t_idx];
        for &i in &strata.order[added..len] {
            let i = i as usize;
            let w = eta[i].exp();
            s0 += w;
            if GRAD || HESS {
                cov.add_scaled(i, w, &mut s1);
            }
            if HESS {
                cov.add_scaled_outer(i, w, &mut s2);
            }
        }
        added = len;

        let events = &strata.events[t_idx];
        let n_events = events.len();
        if n_events == 0 {
            continue;
        }
        let dd = n_events as f64;
        for &i in events {
            let i = i as usize;
            value += eta[i] + shift;
            if GRAD {
                for (g, k) in grad.iter_mut().zip(0..p) {
                    *g += cov.value(i, k);
                }
            }
        }

        if !efron {
            value -= dd * (shift + s0.ln());
            if GRAD {
                for (g, s) in grad.iter_mut().zip(&s1) {
                    *g -= dd * s / s0;
                }
            }
            if HESS {
                for (uk, s) in u.iter_mut().zip(&s1) {
                    *uk = s / s0;
                }
                let mut idx = 0;
                for k in 0..p {
                    for l in k..p {
                        hess[idx] -= dd * (s2[idx] / s0 - u[k] * u[l]);
                        idx += 1;
                    }
                }
            }
            continue;
        }

        let mut e0 = 0.0;
        if GRAD || HESS {
            e1.iter_mut().for_each(|v| *v = 0.0);
        }
        if HESS {
            e2.iter_mut().for_each(|v| *v = 0.0);
        }
        for &i in events {
            let i = i as usize;
            let w = eta[i].exp();
            e0 += w;
            if GRAD || HESS {
                cov.add_scaled(i, w, &mut e1);
            }
            if HESS {
                cov.add_scaled_outer(i, w, &mut e2);
            }
        }

        for r in 0..n_events {
            let frac = r as f64 / dd;
            let d0 = s0 - frac * e0;
            value -= shift + d0.ln();
            if GRAD || HESS {
                if HESS {
                    for k in 0..p {
                        u[k] = (s1[k] - frac * e1[k]) / d0;
                    }
                    let mut idx = 0;
                    for k in 0..p {
                        for l in k..p {
                            hess[idx] -= (s2[idx] - frac * e2[idx]) / d0 - u[k] * u[l];
                            idx += 1;
                        }
                    }
                    if GRAD {
                        for (g, uk) in grad.iter_mut().zip(&u) {
                            *g -= uk;
                        }
                    }
                } else if GRAD {
                    for k in 0..p {
                        grad[k] -= (s1[k] - frac * e1[k]) / d0;
                    }
                }
            }
        }
    }
    (value, grad, hess)
}

/// Exact (conditioned) evaluation. The denominator of each stratum is the
/// elementary symmetric sum of order `D` over the at-risk weights; its value,
/// gradient and Hessian are built together by one pass of the standard
/// recursion, adding one subject at a time, in `O(K * D * p^2)` per stratum.
/// Strata where every at-risk subject is a case have a single admissible
/// subset and contribute zero.
fn eval_exact<C: Covariates, const GRAD: bool, const HESS: bool>(
    strata: &Strata,
    cov: &C,
    beta: &[f64],
    exact_limit: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let p = cov.dim();
    let pk = packed_len(p);
    let d = strata.d();
    let (eta, _) = shifted_eta(cov, beta, strata.n());

    let mut value = 0.0;
    let mut grad = vec![0.0; if GRAD { p } else { 0 }];
    let mut hess = vec![0.0; if HESS { pk } else { 0 }];
    let mut z = vec![0.0; p];

    for t_idx in 0..d {
        let events = &strata.events[t_idx];
        let n_events = events.len();
        if n_events == 0 {
            continue;
        }
        if n_events > exact_limit {
            return Err(Error::estimation(format!(
                "exact tie method infeasible in period {}: {} events among {} at risk exceeds the per-stratum limit {}",
                t_idx + 1,
                n_events,
                strata.risk_len[t_idx],
                exact_limit
            )));
        }
        let at_risk = strata.at_risk(t_idx);
        if n_events == at_risk.len() {
            // saturated stratum: the single admissible subset cancels exactly
            continue;
        }

        // local shift keeps the subset sums in range
        let mut local_max = f64::NEG_INFINITY;
        for &i in at_risk {
            local_max = local_max.max(eta[i as usize]);
        }

        // e[r] = elementary symmetric sum of order r; g[r], h[r] its
        // derivatives in beta, built by the add-one-subject recurrence. The
        // sums grow like binomial coefficients, so everything is rescaled
        // uniformly whenever they approach overflow; the log of the applied
        // scale is carried separately and the gradient/Hessian ratios are
        // scale-invariant.
        let mut e = vec![0.0; n_events + 1];
        e[0] = 1.0;
        let mut g = vec![0.0; if GRAD || HESS { (n_events + 1) * p } else { 0 }];
        let mut h = vec![0.0; if HESS { (n_events + 1) * pk } else { 0 }];
        let mut scale_log = 0.0f64;

        for (count, &i) in at_risk.iter().enumerate() {
            let i = i as usize;
            let w = (eta[i] - local_max).exp();
            if GRAD || HESS {
                for (k, zk) in z.iter_mut().enumerate() {
                    *zk = cov.value(i, k);
                }
            }
            for r in (1..=n_events).rev() {
                let (e_prev, e_cur) = (e[r - 1], e[r]);
                if HESS {
                    let (h_lo, h_hi) = h.split_at_mut(r * pk);
                    let h_prev = &h_lo[(r - 1) * pk..r * pk];
                    let h_cur = &mut h_hi[..pk];
                    let g_prev = &g[(r - 1) * p..r * p];
                    let mut idx = 0;
                    for k in 0..p {
                        for l in k..p {
                            h_cur[idx] += w
                                * (h_prev[idx]
                                    + z[k] * g_prev[l]
                                    + g_prev[k] * z[l]
                                    + e_prev * z[k] * z[l]);
                            idx += 1;
                        }
                    }
                }
                if GRAD || HESS {
                    let (g_lo, g_hi) = g.split_at_mut(r * p);
                    let g_prev = &g_lo[(r - 1) * p..r * p];
                    let g_cur = &mut g_hi[..p];
                    for k in 0..p {
                        g_cur[k] += w * (g_prev[k] + e_prev * z[k]);
                    }
                }
                e[r] = e_cur + w * e_prev;
            }
            if count % 64 == 63 {
                let top = e.iter().fold(0.0f64, |a, v| a.max(*v));
                if top > 1e250 {
                    const DOWN: f64 = 1e-250;
                    for v in e.iter_mut() {
                        *v *= DOWN;
                    }
                    for v in g.iter_mut() {
                        *v *= DOWN;
                    }
                    for v in h.iter_mut() {
                        *v *= DOWN;
                    }
                    scale_log += 250.0 * std::f64::consts::LN_10;
                }
            }
        }

        let denom = e[n_events];
        for &i in events {
            value += eta[i as usize] - local_max;
            if GRAD {
                for k in 0..p {
                    grad[k] += cov.value(i as usize, k);
                }
            }
        }
        value -= denom.ln() + scale_log;

        if GRAD || HESS {
            let g_top = &g[n_events * p..(n_events + 1) * p];
            if GRAD {
                for k in 0..p {
                    grad[k] -= g_top[k] / denom;
                }
            }
            if HESS {
                let h_top = &h[n_events * pk..(n_events + 1) * pk];
                let mut idx = 0;
                for k in 0..p {
                    for l in k..p {
                        hess[idx] -=
                            h_top[idx] / denom - (g_top[k] / denom) * (g_top[l] / denom);
                        idx += 1;
                    }
                }
            }
        }
    }
    Ok((value, grad, hess))
}

pub(crate) fn eval_value<C: Covariates>(
    strata: &Strata,
    cov: &C,
    beta: &[f64],
    tie: TieMethod,
    exact_limit: usize,
) -> Result<f64> {
    match tie {
        TieMethod::Breslow => Ok(eval_nested::<C, false, false>(strata, cov, beta, false).0),
        TieMethod::Efron => Ok(eval_nested::<C, false, false>(strata, cov, beta, true).0),
        TieMethod::Exact => Ok(eval_exact::<C, false, false>(strata, cov, beta, exact_limit)?.0),
    }
}

pub(crate) fn eval_value_grad<C: Covariates>(
    strata: &Strata,
    cov: &C,
    beta: &[f64],
    tie: TieMethod,
    exact_limit: usize,
) -> Result<(f64, Vec<f64>)> {
    let (v, g, _) = match tie {
        TieMethod::Breslow => eval_nested::<C, true, false>(strata, cov, beta, false),
        TieMethod::Efron => eval_nested::<C, true, false>(strata, cov, beta, true),
        TieMethod::Exact => eval_exact::<C, true, false>(strata, cov, beta, exact_limit)?,
    };
    Ok((v, g))
}

pub(crate) fn eval_full<C: Covariates>(
    strata: &Strata,
    cov: &C,
    beta: &[f64],
    tie: TieMethod,
    exact_limit: usize,
) -> Result<LogLik> {
    let p = cov.dim();
    let (value, grad, hess) = match tie {
        TieMethod::Breslow => eval_nested::<C, true, true>(strata, cov, beta, false),
        TieMethod::Efron => eval_nested::<C, true, true>(strata, cov, beta, true),
        TieMethod::Exact => eval_exact::<C, true, true>(strata, cov, beta, exact_limit)?,
    };
    Ok(LogLik {
        value,
        gradient: Array1::from_vec(grad),
        hessian: unpack_symmetric(&hess, p),
    })
}

/// Conditional log-likelihood of event type `j` with analytic derivatives.
pub fn conditional_loglik(
    dataset: &Dataset,
    j: u16,
    beta: &Array1<f64>,
    tie: TieMethod,
    solver: &SolverConfig,
) -> Result<LogLik> {
    dataset.validate().into_result()?;
    if beta.len() != dataset.p() {
        return Err(Error::validation(format!(
            "beta has length {}, dataset has p = {}",
            beta.len(),
            dataset.p()
        )));
    }
    let strata = Strata::for_event(dataset, j);
    eval_full(
        &strata,
        &DatasetCov(dataset),
        beta.as_slice().expect("contiguous"),
        tie,
        solver.exact_limit,
    )
}

/// Fail unless every covariate varies within at least one at-risk set that
/// contains an event; a covariate constant within every event stratum cancels
/// from the conditional likelihood and cannot be estimated.
pub(crate) fn check_identifiability<C: Covariates>(
    strata: &Strata,
    cov: &C,
    names: &[String],
) -> Result<()> {
    let p = cov.dim();
    'cols: for k in 0..p {
        for t_idx in 0..strata.d() {
            if strata.events[t_idx].is_empty() {
                continue;
            }
            let at_risk = strata.at_risk(t_idx);
            let first = cov.value(at_risk[0] as usize, k);
            if at_risk
                .iter()
                .any(|&i| cov.value(i as usize, k) != first)
            {
                continue 'cols;
            }
        }
        let name = names
            .get(k)
            .cloned()
            .unwrap_or_else(|| format!("column {}", k + 1));
        return Err(Error::estimation(format!(
            "covariate `{name}` is constant within every period that has events; it cancels from the conditional likelihood"
        )));
    }
    Ok(())
}

/// Outcome of a damped Newton maximization.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub beta: Array1<f64>,
    /// Inverse of the negative Hessian at the final iterate.
    pub covariance: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub loglik: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Damped Newton with step halving.
///
/// The exact tie method is warm-started from a full Efron fit: the Efron
/// optimum lands within a few percent of the exact one, after which the
/// costlier exact-Hessian iterations finish in two or three steps. The
/// reported covariance always comes from the Hessian of the requested tie
/// method at the optimum.
pub(crate) fn maximize<C: Covariates>(
    strata: &Strata,
    cov: &C,
    tie: TieMethod,
    config: &SolverConfig,
) -> Result<NewtonOutcome> {
    let init = vec![0.0; cov.dim()];
    if tie == TieMethod::Exact {
        let warm = newton_loop(strata, cov, TieMethod::Efron, config, init)?;
        let mut out = newton_loop(strata, cov, TieMethod::Exact, config, warm.beta.to_vec())?;
        out.iterations += warm.iterations;
        return Ok(out);
    }
    newton_loop(strata, cov, tie, config, init)
}

fn newton_loop<C: Covariates>(
    strata: &Strata,
    cov: &C,
    tie: TieMethod,
    config: &SolverConfig,
    init: Vec<f64>,
) -> Result<NewtonOutcome> {
    let mut beta = init;

    let (mut value, mut grad) = eval_value_grad(strata, cov, &beta, tie, config.exact_limit)?;
    let mut iterations = 0;
    let mut converged = inf_norm(&grad) < config.tol;

    while !converged && iterations < config.max_iter {
        iterations += 1;
        let hessian = eval_full(strata, cov, &beta, tie, config.exact_limit)?.hessian;
        let neg_hess = hessian.mapv(|h| -h);
        let direction = linalg::spd_solve(&neg_hess, &Array1::from_vec(grad.clone()))
            .map_err(|_| {
                Error::estimation(
                    "information matrix is singular; covariates may be collinear".to_string(),
                )
            })?;

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta
                .iter()
                .zip(direction.iter())
                .map(|(b, d)| b + step * d)
                .collect();
            let trial_value = eval_value(strata, cov, &trial, tie, config.exact_limit)?;
            if trial_value.is_finite() && trial_value > value {
                beta = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // objective gains are below f64 resolution; near the optimum the
            // full step still contracts the gradient
            let trial: Vec<f64> = beta
                .iter()
                .zip(direction.iter())
                .map(|(b, d)| b + d)
                .collect();
            let (tv, tg) = eval_value_grad(strata, cov, &trial, tie, config.exact_limit)?;
            if inf_norm(&tg) < inf_norm(&grad) {
                beta = trial;
                value = tv;
                grad = tg;
                converged = inf_norm(&grad) < config.tol;
                continue;
            }
            break;
        }
        if inf_norm(&beta) > config.bound {
            return Err(Error::estimation(format!(
                "coefficients diverged beyond {} (separation or a perfectly predictive covariate)",
                config.bound
            )));
        }
        let (v, g) = eval_value_grad(strata, cov, &beta, tie, config.exact_limit)?;
        value = v;
        grad = g;
        converged = inf_norm(&grad) < config.tol;
    }

    let at_optimum = eval_full(strata, cov, &beta, tie, config.exact_limit)?;
    let neg_hess = at_optimum.hessian.mapv(|h| -h);
    let covariance = linalg::spd_inverse(&neg_hess).map_err(|_| {
        Error::estimation("information matrix is singular at the optimum".to_string())
    })?;
    let final_gradient_norm = inf_norm(&grad);
    Ok(NewtonOutcome {
        beta: Array1::from_vec(beta),
        covariance,
        converged,
        iterations,
        final_gradient_norm,
        loglik: value,
    })
}

/// Per-subject influence estimates for the fitted coefficients ("dfbeta"):
/// the inverse information applied to each subject's score residual. Score
/// residuals use the Breslow stratum weights regardless of the tie method;
/// they enter only the baseline variance cross term.
pub(crate) fn score_influences<C: Covariates>(
    strata: &Strata,
    cov: &C,
    beta: &[f64],
    covariance: &Array2<f64>,
) -> Array2<f64> {
    let p = cov.dim();
    let n = strata.n();
    let (eta, _) = shifted_eta(cov, beta, n);

    let mut residuals = Array2::<f64>::zeros((n, p));
    let d = strata.d();
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut added = 0usize;

    // first pass over periods from last to first to build s0, s1 per period
    let mut s0_t = vec![0.0; d];
    let mut s1_t = vec![0.0; d * p];
    for t_idx in (0..d).rev() {
        let len = strata.risk_len[t_idx];
        for &i in &strata.order[added..len] {
            let w = eta[i as usize].exp();
            s0 += w;
            cov.add_scaled(i as usize, w, &mut s1);
        }
        added = len;
        s0_t[t_idx] = s0;
        s1_t[t_idx * p..(t_idx + 1) * p].copy_from_slice(&s1);
    }

    for t_idx in 0..d {
        let events = &strata.events[t_idx];
        if events.is_empty() {
            continue;
        }
        let dd = events.len() as f64;
        let s0 = s0_t[t_idx];
        let s1 = &s1_t[t_idx * p..(t_idx + 1) * p];
        let hazard = dd / s0;
        for &i in strata.at_risk(t_idx) {
            let i = i as usize;
            let coef = -eta[i].exp() * hazard;
            let mut row = residuals.row_mut(i);
            for k in 0..p {
                row[k] += coef * (cov.value(i, k) - s1[k] / s0);
            }
        }
        for &i in events {
            let i = i as usize;
            let mut row = residuals.row_mut(i);
            for k in 0..p {
                row[k] += cov.value(i, k) - s1[k] / s0;
            }
        }
    }

    residuals.dot(covariance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use approx::assert_relative_eq;

    fn single_stratum(zs: &[f64], events: &[usize], d_total: u32) -> Dataset {
        // all subjects share time 1 within horizon d_total; listed indices are cases
        let obs = zs
            .iter()
            .enumerate()
            .map(|(i, &z)| Observation {
                id: format!("s{i}"),
                time: 1,
                event: if events.contains(&i) { 1 } else { 0 },
                z: vec![z],
            })
            .collect();
        Dataset::new(obs, 1, d_total.max(1), 1)
    }

    #[test]
    fn uniform_stratum_has_log_half() {
        // 2 at risk, 1 event, beta = 0: conditional probability 1/2 either way
        let ds = single_stratum(&[0.0, 1.0], &[0], 1);
        let solver = SolverConfig::default();
        for tie in [TieMethod::Breslow, TieMethod::Efron, TieMethod::Exact] {
            let ll = conditional_loglik(&ds, 1, &Array1::zeros(1), tie, &solver).unwrap();
            assert_relative_eq!(ll.value, 0.5f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn single_event_stratum_hand_value() {
        // 3 at risk with z = 0, 1, 2; event on z = 2; beta = 1
        // factor = e^2 / (1 + e + e^2)
        let ds = single_stratum(&[0.0, 1.0, 2.0], &[2], 1);
        let solver = SolverConfig::default();
        let beta = Array1::from_vec(vec![1.0]);
        let expected = 2.0 - (1.0 + 1f64.exp() + 2f64.exp()).ln();
        for tie in [TieMethod::Breslow, TieMethod::Efron, TieMethod::Exact] {
            let ll = conditional_loglik(&ds, 1, &beta, tie, &solver).unwrap();
            assert_relative_eq!(ll.value, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn breslow_equals_exact_without_ties() {
        let obs = vec![
            Observation { id: "a".into(), time: 1, event: 1, z: vec![0.3, -0.2] },
            Observation { id: "b".into(), time: 2, event: 0, z: vec![-1.0, 0.5] },
            Observation { id: "c".into(), time: 2, event: 1, z: vec![0.1, 0.9] },
            Observation { id: "d".into(), time: 3, event: 0, z: vec![0.7, -0.4] },
            Observation { id: "e".into(), time: 3, event: 1, z: vec![-0.6, 0.2] },
        ];
        let ds = Dataset::new(obs, 2, 3, 1);
        let solver = SolverConfig::default();
        let beta = Array1::from_vec(vec![0.4, -0.7]);
        let b = conditional_loglik(&ds, 1, &beta, TieMethod::Breslow, &solver).unwrap();
        let e = conditional_loglik(&ds, 1, &beta, TieMethod::Exact, &solver).unwrap();
        assert_relative_eq!(b.value, e.value, epsilon = 1e-12);
        for k in 0..2 {
            assert_relative_eq!(b.gradient[k], e.gradient[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn exact_limit_guard_names_stratum() {
        let zs: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
        let events: Vec<usize> = (0..12).collect();
        let ds = single_stratum(&zs, &events, 1);
        let solver = SolverConfig {
            exact_limit: 10,
            ..SolverConfig::default()
        };
        let err = conditional_loglik(&ds, 1, &Array1::zeros(1), TieMethod::Exact, &solver)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("period 1"), "{msg}");
        assert!(msg.contains("12 events"), "{msg}");
    }

    fn fd_check(ds: &Dataset, beta: &Array1<f64>, tie: TieMethod) {
        let solver = SolverConfig {
            exact_limit: 20,
            ..SolverConfig::default()
        };
        let ll = conditional_loglik(ds, 1, beta, tie, &solver).unwrap();
        let h = 1e-5;
        for k in 0..beta.len() {
            let mut up = beta.clone();
            up[k] += h;
            let mut dn = beta.clone();
            dn[k] -= h;
            let vu = conditional_loglik(ds, 1, &up, tie, &solver).unwrap();
            let vd = conditional_loglik(ds, 1, &dn, tie, &solver).unwrap();
            let fd = (vu.value - vd.value) / (2.0 * h);
            let scale = ll.gradient[k].abs().max(1.0);
            assert!(
                (ll.gradient[k] - fd).abs() / scale < 1e-6,
                "gradient mismatch at {k}: analytic {} vs fd {}",
                ll.gradient[k],
                fd
            );
            for l in 0..beta.len() {
                let fd_h = (vu.gradient[l] - vd.gradient[l]) / (2.0 * h);
                let scale = ll.hessian[(k, l)].abs().max(1.0);
                assert!(
                    (ll.hessian[(k, l)] - fd_h).abs() / scale < 1e-4,
                    "hessian mismatch at ({k},{l})"
                );
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let obs = vec![
            Observation { id: "a".into(), time: 1, event: 1, z: vec![0.3, -0.2] },
            Observation { id: "b".into(), time: 1, event: 1, z: vec![1.3, 0.4] },
            Observation { id: "c".into(), time: 2, event: 0, z: vec![-1.0, 0.5] },
            Observation { id: "d".into(), time: 2, event: 1, z: vec![0.1, 0.9] },
            Observation { id: "e".into(), time: 2, event: 1, z: vec![0.8, -0.1] },
            Observation { id: "f".into(), time: 3, event: 0, z: vec![0.7, -0.4] },
            Observation { id: "g".into(), time: 3, event: 1, z: vec![-0.6, 0.2] },
            Observation { id: "h".into(), time: 3, event: 0, z: vec![0.2, 1.1] },
        ];
        let ds = Dataset::new(obs, 2, 3, 1);
        let beta = Array1::from_vec(vec![0.35, -0.55]);
        fd_check(&ds, &beta, TieMethod::Breslow);
        fd_check(&ds, &beta, TieMethod::Efron);
        fd_check(&ds, &beta, TieMethod::Exact);
    }

    #[test]
    fn constant_covariate_is_rejected() {
        let obs = (0..6)
            .map(|i| Observation {
                id: format!("s{i}"),
                time: 1 + (i % 2) as u32,
                event: if i < 3 { 1 } else { 0 },
                z: vec![2.5],
            })
            .collect();
        let ds = Dataset::new(obs, 1, 2, 1);
        let strata = Strata::for_event(&ds, 1);
        let err = check_identifiability(&strata, &DatasetCov(&ds), ds.covariate_names())
            .unwrap_err();
        assert!(err.to_string().contains("z1"));
    }

    #[test]
    fn exact_recursion_matches_subset_enumeration() {
        // one stratum, 5 at risk, 2 events: denominator enumerable by hand
        let zs = [0.3, -0.8, 1.1, 0.0, -0.4];
        let ds = single_stratum(&zs, &[1, 3], 1);
        let beta = Array1::from_vec(vec![0.6]);
        let solver = SolverConfig::default();
        let ll =
            conditional_loglik(&ds, 1, &beta, TieMethod::Exact, &solver).unwrap();

        let mut denom = 0.0;
        for a in 0..5 {
            for b in (a + 1)..5 {
                denom += (0.6 * (zs[a] + zs[b])).exp();
            }
        }
        let numerator = 0.6 * (zs[1] + zs[3]);
        assert_relative_eq!(ll.value, numerator - denom.ln(), epsilon = 1e-12);
    }

    #[test]
    fn saturated_stratum_contributes_zero_under_exact() {
        // every at-risk subject is a case: only one admissible subset
        let ds = single_stratum(&[0.0, 1.0, 2.0], &[0, 1, 2], 1);
        let solver = SolverConfig::default();
        let beta = Array1::from_vec(vec![0.8]);
        let ll = conditional_loglik(&ds, 1, &beta, TieMethod::Exact, &solver).unwrap();
        assert_eq!(ll.value, 0.0);
        assert_eq!(ll.gradient[0], 0.0);
    }
}
