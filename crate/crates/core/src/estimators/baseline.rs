//! Per-(event, period) intercept estimation.
//!
//! With the regression coefficients fixed, each intercept solves a single
//! moment equation: the model-expected proportion of type-`j` failures among
//! the at-risk subjects at period `t` must equal the observed proportion
//! `N_j(t)/Y.(t)`. The expected proportion is strictly increasing in the
//! intercept, so the equation is solved by safeguarded Newton on a bracket
//! rather than generic minimization of the squared difference; both
//! formulations share the same root.

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numeric::expit;

/// Residual tolerance on the proportion scale: the absolute difference
/// between observed and expected failure proportions at the returned root.
pub const MOMENT_TOL: f64 = 1e-12;

/// One fitted intercept cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaCell {
    Defined { alpha: f64, variance: f64 },
    /// No events (`-inf`, hazard estimate 0) or all at-risk subjects failing
    /// (`+inf`, hazard estimate 1): the root lies on the boundary and is
    /// recorded as a sentinel, never a silent number.
    Undefined { sentinel: f64 },
}

impl AlphaCell {
    pub fn alpha(&self) -> f64 {
        match self {
            AlphaCell::Defined { alpha, .. } => *alpha,
            AlphaCell::Undefined { sentinel } => *sentinel,
        }
    }

    pub fn variance(&self) -> Option<f64> {
        match self {
            AlphaCell::Defined { variance, .. } => Some(*variance),
            AlphaCell::Undefined { .. } => None,
        }
    }
}

/// Estimated coefficient uncertainty needed by the intercept variance: the
/// coefficient covariance and the per-subject influence rows of the fit.
pub struct BetaContext<'a> {
    pub covariance: &'a Array2<f64>,
    /// `n x p`; row `i` is the estimated influence of subject `i` on the
    /// fitted coefficients.
    pub influences: &'a Array2<f64>,
}

/// Solve the moment equation for one `(j, t)` cell.
///
/// `beta_ctx` supplies the coefficient covariance and influences for the full
/// variance; without it the variance treats the coefficients as known and
/// keeps only the moment-noise term.
pub fn fit_alpha(
    dataset: &Dataset,
    j: u16,
    t: u32,
    beta_hat: &Array1<f64>,
    beta_ctx: Option<&BetaContext<'_>>,
) -> Result<AlphaCell> {
    if t < 1 || t > dataset.d() {
        return Err(Error::validation(format!(
            "period {t} outside horizon 1..={}",
            dataset.d()
        )));
    }
    if j < 1 || j > dataset.m() {
        return Err(Error::validation(format!(
            "event type {j} outside 1..={}",
            dataset.m()
        )));
    }
    if beta_hat.iter().any(|b| !b.is_finite()) {
        return Err(Error::validation("beta must be finite"));
    }

    let mut at_risk = Vec::new();
    let mut eta = Vec::new();
    let mut n_events = 0u64;
    for (i, o) in dataset.observations().iter().enumerate() {
        if o.time >= t {
            at_risk.push(i);
            eta.push(
                o.z.iter()
                    .zip(beta_hat.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>(),
            );
            if o.time == t && o.event == j {
                n_events += 1;
            }
        }
    }
    let y = at_risk.len() as u64;
    if y == 0 {
        return Err(Error::estimation(format!(
            "no subjects at risk in period {t}"
        )));
    }

    if n_events == 0 {
        return Ok(AlphaCell::Undefined {
            sentinel: f64::NEG_INFINITY,
        });
    }
    if n_events == y {
        return Ok(AlphaCell::Undefined {
            sentinel: f64::INFINITY,
        });
    }

    let alpha = solve_moment(&eta, n_events as f64, y as f64)?;

    let variance = match beta_ctx {
        Some(ctx) => {
            alpha_variance(dataset, j, t, &at_risk, &eta, alpha, ctx)
        }
        None => {
            // moment-noise term only
            let mut a = 0.0;
            let mut v1 = 0.0;
            for (&i, &e) in at_risk.iter().zip(&eta) {
                let lam = expit(alpha + e);
                a += lam * (1.0 - lam);
                let o = dataset.obs(i);
                let delta = if o.time == t && o.event == j { 1.0 } else { 0.0 };
                v1 += (lam - delta) * (lam - delta);
            }
            v1 / (a * a)
        }
    };

    Ok(AlphaCell::Defined { alpha, variance })
}

/// Root of `sum_i expit(a + eta_i) = target` with `0 < target < len(eta)`,
/// solved to `MOMENT_TOL` on the proportion scale.
fn solve_moment(eta: &[f64], target: f64, y: f64) -> Result<f64> {
    let mean_eta = eta.iter().sum::<f64>() / y;
    let logit = (target / y / (1.0 - target / y)).ln();
    let mut a = logit - mean_eta;

    let g = |a: f64| -> f64 { eta.iter().map(|e| expit(a + e)).sum::<f64>() - target };

    // expand a bracket around the initial guess; g is strictly increasing
    let mut lo = a;
    let mut hi = a;
    let mut step = 1.0;
    while g(lo) > 0.0 {
        lo -= step;
        step *= 2.0;
        if step > 1e9 {
            return Err(Error::estimation("moment equation bracket failed"));
        }
    }
    step = 1.0;
    while g(hi) < 0.0 {
        hi += step;
        step *= 2.0;
        if step > 1e9 {
            return Err(Error::estimation("moment equation bracket failed"));
        }
    }

    a = 0.5 * (lo + hi);
    for _ in 0..200 {
        let mut val = -target;
        let mut slope = 0.0;
        for &e in eta {
            let lam = expit(a + e);
            val += lam;
            slope += lam * (1.0 - lam);
        }
        if val.abs() / y < MOMENT_TOL {
            return Ok(a);
        }
        if val > 0.0 {
            hi = a;
        } else {
            lo = a;
        }
        let newton = a - val / slope;
        a = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let val = g(a);
    if val.abs() / y < 1e-10 {
        Ok(a)
    } else {
        Err(Error::estimation(format!(
            "moment equation failed to converge (residual {:.3e})",
            val / y
        )))
    }
}

/// Variance of a fitted intercept: moment noise, coefficient uncertainty
/// propagated through the moment derivative, and their cross term, scaled by
/// the squared derivative of the estimating equation. Negative totals from
/// the cross term in small samples are clamped at zero.
fn alpha_variance(
    dataset: &Dataset,
    j: u16,
    t: u32,
    at_risk: &[usize],
    eta: &[f64],
    alpha: f64,
    ctx: &BetaContext<'_>,
) -> f64 {
    let p = dataset.p();
    let mut a = 0.0;
    let mut v1 = 0.0;
    let mut d_vec = Array1::<f64>::zeros(p);
    let mut cross = Array1::<f64>::zeros(p);

    for (&i, &e) in at_risk.iter().zip(eta) {
        let lam = expit(alpha + e);
        let slope = lam * (1.0 - lam);
        a += slope;
        let o = dataset.obs(i);
        let delta = if o.time == t && o.event == j { 1.0 } else { 0.0 };
        let xi = lam - delta;
        v1 += xi * xi;
        let z = dataset.z(i);
        for k in 0..p {
            d_vec[k] += slope * z[k];
            cross[k] += ctx.influences[(i, k)] * xi;
        }
    }

    let v2 = d_vec.dot(&ctx.covariance.dot(&d_vec));
    let v3 = 2.0 * d_vec.dot(&cross);
    ((v1 + v2 + v3) / (a * a)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use approx::assert_relative_eq;

    fn dataset_with_events(times_events: &[(u32, u16)], d: u32) -> Dataset {
        let obs = times_events
            .iter()
            .enumerate()
            .map(|(i, &(time, event))| Observation {
                id: format!("s{i}"),
                time,
                event,
                z: vec![0.0],
            })
            .collect();
        Dataset::new(obs, 1, d, 1)
    }

    #[test]
    fn zero_beta_gives_logit_of_observed_proportion() {
        // 2 at risk, 1 event: alpha = logit(1/2) = 0
        let ds = dataset_with_events(&[(1, 1), (1, 0)], 1);
        let cell = fit_alpha(&ds, 1, 1, &Array1::zeros(1), None).unwrap();
        assert_relative_eq!(cell.alpha(), 0.0, epsilon = 1e-9);

        // 4 at risk, 1 event: alpha = logit(1/4)
        let ds = dataset_with_events(&[(1, 1), (1, 0), (1, 0), (1, 0)], 1);
        let cell = fit_alpha(&ds, 1, 1, &Array1::zeros(1), None).unwrap();
        assert_relative_eq!(cell.alpha(), (0.25f64 / 0.75).ln(), epsilon = 1e-9);
        assert_relative_eq!(cell.alpha(), -1.0986, epsilon = 1e-4);
    }

    #[test]
    fn sentinels_for_degenerate_cells() {
        let ds = dataset_with_events(&[(1, 0), (1, 0)], 1);
        let cell = fit_alpha(&ds, 1, 1, &Array1::zeros(1), None).unwrap();
        assert_eq!(cell.alpha(), f64::NEG_INFINITY);
        assert!(cell.variance().is_none());

        let ds = dataset_with_events(&[(1, 1), (1, 1)], 1);
        let cell = fit_alpha(&ds, 1, 1, &Array1::zeros(1), None).unwrap();
        assert_eq!(cell.alpha(), f64::INFINITY);
    }

    #[test]
    fn residual_meets_tolerance_with_covariates() {
        let obs: Vec<Observation> = (0..40)
            .map(|i| Observation {
                id: format!("s{i}"),
                time: if i % 3 == 0 { 1 } else { 2 },
                event: if i % 5 == 0 { 1 } else { 0 },
                z: vec![(i as f64) / 40.0 - 0.5, ((i * 7 % 11) as f64) / 11.0],
            })
            .collect();
        let ds = Dataset::new(obs, 2, 2, 1);
        let beta = Array1::from_vec(vec![0.8, -1.1]);
        for t in 1..=2 {
            let cell = fit_alpha(&ds, 1, t, &beta, None).unwrap();
            if let AlphaCell::Defined { alpha, .. } = cell {
                let mut expected = 0.0;
                let mut n_events = 0.0;
                let mut y = 0.0;
                for o in ds.observations() {
                    if o.time >= t {
                        y += 1.0;
                        let e: f64 = o.z.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                        expected += expit(alpha + e);
                        if o.time == t && o.event == 1 {
                            n_events += 1.0;
                        }
                    }
                }
                assert!(
                    ((expected - n_events) / y).abs() < 1e-10,
                    "residual too large at t={t}"
                );
            } else {
                panic!("expected defined cell at t={t}");
            }
        }
    }
}
