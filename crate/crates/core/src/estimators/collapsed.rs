//! Collapsed-likelihood comparator: for each event type, a binary regression
//! on the person-period expansion with the period indicator columns and the
//! covariates fit jointly. Competing events are treated as non-events of the
//! target type, which makes each fit an ordinary logistic regression on the
//! expanded rows; the inverse observed information is a valid covariance
//! because the expanded binary outcomes are conditionally independent.
//!
//! The design matrix is materialized with its indicator columns, exactly as a
//! generic GLM routine would see it, so fitting cost and memory grow with the
//! number of person-period rows times the squared parameter count.

use ndarray::{s, Array1, Array2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::conditional::SolverConfig;
use crate::linalg;
use crate::numeric::{expit, log1p_exp};

/// Joint fit of period intercepts and coefficients for one event type.
#[derive(Debug, Clone)]
pub struct CollapsedFit {
    pub j: u16,
    /// Length `d`; `-inf` where the period has no type-`j` events, `+inf`
    /// where every at-risk subject fails.
    pub alphas: Vec<f64>,
    /// Per-period intercept variances; `None` for sentinel cells.
    pub alpha_variance: Vec<Option<f64>>,
    pub beta: Array1<f64>,
    pub beta_covariance: Array2<f64>,
    /// Full `(d+p) x (d+p)` covariance ordered `[alpha_1..alpha_d, beta]`;
    /// rows and columns of sentinel cells are NaN.
    pub covariance: Array2<f64>,
    /// Periods whose intercept is a sentinel.
    pub undefined: Vec<u32>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

pub fn fit_collapsed(dataset: &Dataset, j: u16, solver: &SolverConfig) -> Result<CollapsedFit> {
    dataset.validate().into_result()?;
    if j < 1 || j > dataset.m() {
        return Err(Error::validation(format!(
            "event type {j} outside 1..={}",
            dataset.m()
        )));
    }
    let d = dataset.d() as usize;
    let p = dataset.p();
    let rs = dataset.risk_sets();
    if rs.total_events(j) == 0 {
        return Err(Error::estimation(format!("no events of type {j} observed")));
    }
    for t in 1..=d as u32 {
        if rs.y(t) == 0 {
            return Err(Error::estimation(format!(
                "no subjects at risk in period {t}"
            )));
        }
    }

    // constant covariates are collinear with the period indicators
    for k in 0..p {
        let first = dataset.z(0)[k];
        if dataset.observations().iter().all(|o| o.z[k] == first) {
            return Err(Error::estimation(format!(
                "covariate `{}` is constant across subjects",
                dataset.covariate_name(k)
            )));
        }
    }

    // saturated or empty cells cannot carry a finite intercept; their rows
    // are dropped, which matches profiling those intercepts out at +-inf
    let mut sentinel = vec![None::<f64>; d + 1];
    let mut undefined = Vec::new();
    let mut col_of_period = vec![usize::MAX; d + 1];
    let mut n_defined = 0usize;
    for t in 1..=d as u32 {
        let nj = rs.nj(j, t);
        if nj == 0 {
            sentinel[t as usize] = Some(f64::NEG_INFINITY);
            undefined.push(t);
        } else if nj == rs.y(t) {
            sentinel[t as usize] = Some(f64::INFINITY);
            undefined.push(t);
        } else {
            col_of_period[t as usize] = n_defined;
            n_defined += 1;
        }
    }
    if n_defined == 0 {
        return Err(Error::estimation(format!(
            "every period is degenerate for event type {j}; no finite intercept can be estimated"
        )));
    }

    let n_cols = n_defined + p;
    let n_rows: usize = dataset
        .observations()
        .iter()
        .map(|o| {
            (1..=o.time.min(dataset.d()))
                .filter(|&t| col_of_period[t as usize] != usize::MAX)
                .count()
        })
        .sum();

    let mut x = Array2::<f64>::zeros((n_rows, n_cols));
    let mut y = vec![0.0f64; n_rows];
    let mut row = 0usize;
    for o in dataset.observations() {
        for t in 1..=o.time.min(dataset.d()) {
            let col = col_of_period[t as usize];
            if col == usize::MAX {
                continue;
            }
            x[(row, col)] = 1.0;
            for (k, &zk) in o.z.iter().enumerate() {
                x[(row, n_defined + k)] = zk;
            }
            if t == o.time && o.event == j {
                y[row] = 1.0;
            }
            row += 1;
        }
    }
    debug_assert_eq!(row, n_rows);

    let (params, cov_reduced, converged, iterations, final_gradient_norm) =
        logistic_newton(&x, &y, solver)?;

    let mut alphas = vec![f64::NAN; d];
    let mut alpha_variance = vec![None; d];
    for t in 1..=d {
        if let Some(s) = sentinel[t] {
            alphas[t - 1] = s;
        } else {
            let c = col_of_period[t];
            alphas[t - 1] = params[c];
            alpha_variance[t - 1] = Some(cov_reduced[(c, c)]);
        }
    }
    let beta = params.slice(s![n_defined..]).to_owned();
    let beta_covariance = cov_reduced
        .slice(s![n_defined.., n_defined..])
        .to_owned();

    let mut covariance = Array2::<f64>::from_elem((d + p, d + p), f64::NAN);
    let full_index = |t_or_beta: usize| t_or_beta; // alpha block then beta block
    for a in 0..(d + p) {
        let ra = if a < d {
            col_of_period[a + 1]
        } else {
            n_defined + (a - d)
        };
        if ra == usize::MAX {
            continue;
        }
        for b in 0..(d + p) {
            let rb = if b < d {
                col_of_period[b + 1]
            } else {
                n_defined + (b - d)
            };
            if rb == usize::MAX {
                continue;
            }
            covariance[(full_index(a), full_index(b))] = cov_reduced[(ra, rb)];
        }
    }

    Ok(CollapsedFit {
        j,
        alphas,
        alpha_variance,
        beta,
        beta_covariance,
        covariance,
        undefined,
        converged,
        iterations,
        final_gradient_norm,
    })
}

const CHUNK: usize = 4096;

/// Damped Newton (equivalently IRLS) for a logistic regression, accumulating
/// the information matrix in row chunks.
fn logistic_newton(
    x: &Array2<f64>,
    y: &[f64],
    solver: &SolverConfig,
) -> Result<(Array1<f64>, Array2<f64>, bool, usize, f64)> {
    let n_rows = x.nrows();
    let n_cols = x.ncols();
    let mut params = Array1::<f64>::zeros(n_cols);

    let value_of = |eta: &Array1<f64>| -> f64 {
        let mut v = 0.0;
        for (e, yi) in eta.iter().zip(y) {
            v += yi * e - log1p_exp(*e);
        }
        v
    };

    let mut eta = x.dot(&params);
    let mut value = value_of(&eta);
    let mut iterations = 0usize;
    let mut converged = false;
    let mut gnorm;
    let mut info = Array2::<f64>::zeros((n_cols, n_cols));

    let mut scaled = Array2::<f64>::zeros((CHUNK.min(n_rows.max(1)), n_cols));
    let mut resid = Array1::<f64>::zeros(CHUNK.min(n_rows.max(1)));
    loop {
        // gradient and information at the current iterate
        let mut grad = Array1::<f64>::zeros(n_cols);
        info.fill(0.0);
        let mut start = 0usize;
        while start < n_rows {
            let end = (start + CHUNK).min(n_rows);
            let len = end - start;
            let xc = x.slice(s![start..end, ..]);
            let mut scaled_c = scaled.slice_mut(s![..len, ..]);
            scaled_c.assign(&xc);
            let mut resid_c = resid.slice_mut(s![..len]);
            for (r, idx) in (start..end).enumerate() {
                let lam = expit(eta[idx]);
                let w = lam * (1.0 - lam);
                resid_c[r] = y[idx] - lam;
                scaled_c.row_mut(r).mapv_inplace(|v| v * w);
            }
            grad += &xc.t().dot(&resid.slice(s![..len]));
            info += &xc.t().dot(&scaled.slice(s![..len, ..]));
            start = end;
        }

        gnorm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gnorm < solver.tol {
            converged = true;
            break;
        }
        if iterations >= solver.max_iter {
            break;
        }
        iterations += 1;

        let direction = linalg::spd_solve(&info, &grad).map_err(|_| {
            Error::estimation(
                "observed information is singular; design may be collinear".to_string(),
            )
        })?;

        let mut accepted = false;
        let mut step = 1.0;
        for _ in 0..40 {
            let trial = &params + &direction.mapv(|v| v * step);
            let trial_eta = x.dot(&trial);
            let trial_value = value_of(&trial_eta);
            if trial_value.is_finite() && trial_value > value {
                params = trial;
                eta = trial_eta;
                value = trial_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // objective gains are below f64 resolution; accept the full step
            // when it still contracts the gradient
            let trial = &params + &direction;
            let trial_eta = x.dot(&trial);
            let mut trial_grad = Array1::<f64>::zeros(n_cols);
            let mut start = 0usize;
            while start < n_rows {
                let end = (start + CHUNK).min(n_rows);
                let xc = x.slice(s![start..end, ..]);
                let mut resid = Array1::<f64>::zeros(end - start);
                for (r, idx) in (start..end).enumerate() {
                    resid[r] = y[idx] - expit(trial_eta[idx]);
                }
                trial_grad += &xc.t().dot(&resid);
                start = end;
            }
            let trial_gnorm = trial_grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            if trial_gnorm < gnorm {
                params = trial;
                eta = trial_eta;
                value = value_of(&eta);
                continue;
            }
            break;
        }
        if params.iter().fold(0.0f64, |a, b| a.max(b.abs())) > solver.bound {
            return Err(Error::estimation(format!(
                "parameters diverged beyond {} (separation in the expanded design)",
                solver.bound
            )));
        }
    }

    let covariance = linalg::spd_inverse(&info).map_err(|_| {
        Error::estimation("observed information is singular at the optimum".to_string())
    })?;
    Ok((params, covariance, converged, iterations, gnorm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::numeric::logit;
    use approx::assert_relative_eq;

    #[test]
    fn intercept_only_fit_is_saturated() {
        // p = 0: each period intercept is exactly logit(N_j(t) / Y.(t))
        let obs = vec![
            Observation { id: "1".into(), time: 1, event: 1, z: vec![] },
            Observation { id: "2".into(), time: 2, event: 1, z: vec![] },
            Observation { id: "3".into(), time: 2, event: 2, z: vec![] },
            Observation { id: "4".into(), time: 2, event: 0, z: vec![] },
            Observation { id: "5".into(), time: 2, event: 0, z: vec![] },
        ];
        let ds = Dataset::new(obs, 0, 2, 2);
        let fit = fit_collapsed(&ds, 1, &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.alphas[0], logit(1.0 / 5.0), epsilon = 1e-8);
        assert_relative_eq!(fit.alphas[1], logit(1.0 / 4.0), epsilon = 1e-8);
    }

    #[test]
    fn degenerate_periods_get_sentinels() {
        let obs = vec![
            Observation { id: "1".into(), time: 1, event: 1, z: vec![] },
            Observation { id: "2".into(), time: 2, event: 1, z: vec![] },
            Observation { id: "3".into(), time: 2, event: 1, z: vec![] },
            Observation { id: "4".into(), time: 3, event: 0, z: vec![] },
            Observation { id: "5".into(), time: 3, event: 0, z: vec![] },
        ];
        // period 2: both remaining at-risk subjects with events at t=2 fail
        // among {2,3,4,5}: N_1(2) = 2, Y(2) = 4 -> defined
        // period 3: no events -> -inf
        let ds = Dataset::new(obs, 0, 3, 1);
        let fit = fit_collapsed(&ds, 1, &SolverConfig::default()).unwrap();
        assert_eq!(fit.alphas[2], f64::NEG_INFINITY);
        assert_eq!(fit.undefined, vec![3]);
        assert!(fit.alpha_variance[2].is_none());
        assert!(fit.covariance[(2, 2)].is_nan());
    }

    #[test]
    fn constant_covariate_is_rejected() {
        let obs = (0..8)
            .map(|i| Observation {
                id: format!("s{i}"),
                time: 1 + (i % 3) as u32,
                event: (i % 2) as u16,
                z: vec![1.0, (i as f64).sin()],
            })
            .collect();
        let ds = Dataset::new(obs, 2, 3, 1);
        let err = fit_collapsed(&ds, 1, &SolverConfig::default()).unwrap_err();
        assert!(err.to_string().contains("z1"));
    }
}
