//! Probability maps from model parameters: per-period cause-specific
//! hazards, overall survival, cumulative incidence, marginal event
//! probabilities, and the joint log-likelihood diagnostic.
//!
//! The logit parameterization does not itself force the per-period hazard sum
//! below one when there are two or more event types. Violations are counted
//! through [`PredictionDiagnostics`] and the survivor factor is clamped at
//! zero for probability outputs rather than refusing to evaluate.

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::FittedModel;
use crate::numeric::expit;

/// Intercept grid and coefficient matrix of a cause-specific hazard model.
///
/// Grid cells may carry `-inf` (hazard 0) or `+inf` (hazard 1) sentinels.
#[derive(Debug, Clone)]
pub struct HazardParams {
    /// `m x d` intercepts.
    pub alpha: Array2<f64>,
    /// `m x p` coefficients, one row per event type.
    pub beta: Array2<f64>,
}

/// Counters for model-admissibility issues met during evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PredictionDiagnostics {
    /// Periods where the hazard sum reached or exceeded one.
    pub admissibility_violations: usize,
    /// Survivor factors clamped at zero as a consequence.
    pub clamped: usize,
}

impl HazardParams {
    pub fn new(alpha: Array2<f64>, beta: Array2<f64>) -> Result<Self> {
        if alpha.nrows() != beta.nrows() {
            return Err(Error::validation(
                "alpha and beta must have one row per event type".to_string(),
            ));
        }
        if alpha.iter().any(|v| v.is_nan()) || beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(
                "parameters must be finite (intercepts may be +-inf sentinels)".to_string(),
            ));
        }
        Ok(HazardParams { alpha, beta })
    }

    pub fn from_model(model: &FittedModel) -> Self {
        let m = model.dims.m as usize;
        let p = model.dims.p;
        let mut beta = Array2::zeros((m, p));
        for (j, c) in model.coefficients.iter().enumerate() {
            beta.row_mut(j).assign(&c.beta);
        }
        HazardParams {
            alpha: model.baseline.alpha.clone(),
            beta,
        }
    }

    pub fn m(&self) -> u16 {
        self.alpha.nrows() as u16
    }

    pub fn d(&self) -> u32 {
        self.alpha.ncols() as u32
    }

    pub fn p(&self) -> usize {
        self.beta.ncols()
    }

    fn linear_predictor(&self, j: u16, t: u32, z: &[f64]) -> f64 {
        let a = self.alpha[(j as usize - 1, t as usize - 1)];
        if a.is_infinite() {
            return a;
        }
        let row = self.beta.row(j as usize - 1);
        a + row.iter().zip(z).map(|(b, zk)| b * zk).sum::<f64>()
    }

    /// Per-period cause-specific hazard `expit(alpha_jt + z' beta_j)`.
    pub fn hazard(&self, j: u16, t: u32, z: &[f64]) -> f64 {
        assert!(j >= 1 && j <= self.m(), "event type out of range");
        assert!(t >= 1 && t <= self.d(), "period out of range");
        expit(self.linear_predictor(j, t, z))
    }

    /// Hazard together with the admissibility check over all event types at
    /// the same period.
    pub fn hazard_monitored(
        &self,
        j: u16,
        t: u32,
        z: &[f64],
        diag: &mut PredictionDiagnostics,
    ) -> f64 {
        let value = self.hazard(j, t, z);
        if self.total_hazard(t, z) >= 1.0 {
            diag.admissibility_violations += 1;
        }
        value
    }

    /// Sum of the cause-specific hazards at one period.
    pub fn total_hazard(&self, t: u32, z: &[f64]) -> f64 {
        (1..=self.m()).map(|j| self.hazard(j, t, z)).sum()
    }

    /// Overall survival `S(t|z)`; `S(0) = 1`.
    pub fn survival(&self, t: u32, z: &[f64]) -> f64 {
        let mut diag = PredictionDiagnostics::default();
        self.survival_monitored(t, z, &mut diag)
    }

    pub fn survival_monitored(
        &self,
        t: u32,
        z: &[f64],
        diag: &mut PredictionDiagnostics,
    ) -> f64 {
        assert!(t <= self.d(), "period out of range");
        let mut s = 1.0;
        for k in 1..=t {
            let total = self.total_hazard(k, z);
            if total >= 1.0 {
                diag.admissibility_violations += 1;
                if total > 1.0 {
                    diag.clamped += 1;
                }
                s = 0.0;
            } else {
                s *= 1.0 - total;
            }
        }
        s
    }

    /// Cumulative incidence `F_j(t|z)`; `F_j(0) = 0`.
    pub fn cif(&self, j: u16, t: u32, z: &[f64]) -> f64 {
        let mut diag = PredictionDiagnostics::default();
        self.cif_monitored(j, t, z, &mut diag)
    }

    pub fn cif_monitored(
        &self,
        j: u16,
        t: u32,
        z: &[f64],
        diag: &mut PredictionDiagnostics,
    ) -> f64 {
        assert!(j >= 1 && j <= self.m(), "event type out of range");
        assert!(t <= self.d(), "period out of range");
        let mut cif = 0.0;
        let mut s_prev = 1.0;
        for k in 1..=t {
            cif += self.hazard(j, k, z) * s_prev;
            let total = self.total_hazard(k, z);
            if total >= 1.0 {
                diag.admissibility_violations += 1;
                if total > 1.0 {
                    diag.clamped += 1;
                }
                s_prev = 0.0;
            } else {
                s_prev *= 1.0 - total;
            }
        }
        cif
    }

    /// Probability of ever experiencing event `j` within the horizon; equals
    /// the cumulative incidence at `d`.
    pub fn marginal_event_prob(&self, j: u16, z: &[f64]) -> f64 {
        self.cif(j, self.d(), z)
    }

    /// `Pr(T = t, J = j | z)` for every cell plus survival past the horizon.
    /// One pass shared by the sampler and the enumeration tests; the
    /// covariate inner product is computed once per event type.
    pub fn joint_distribution(&self, z: &[f64]) -> JointDistribution {
        let m = self.m() as usize;
        let d = self.d() as usize;
        let dots: Vec<f64> = (0..m)
            .map(|j| {
                self.beta
                    .row(j)
                    .iter()
                    .zip(z)
                    .map(|(b, zk)| b * zk)
                    .sum::<f64>()
            })
            .collect();
        let mut prob = Array2::<f64>::zeros((m, d));
        let mut s_prev = 1.0;
        let mut diag = PredictionDiagnostics::default();
        for t in 0..d {
            let mut total = 0.0;
            for j in 0..m {
                let h = expit(self.alpha[(j, t)] + dots[j]);
                prob[(j, t)] = h * s_prev;
                total += h;
            }
            if total >= 1.0 {
                diag.admissibility_violations += 1;
                if total > 1.0 {
                    diag.clamped += 1;
                }
                s_prev = 0.0;
            } else {
                s_prev *= 1.0 - total;
            }
        }
        JointDistribution {
            prob,
            survival_horizon: s_prev,
            diagnostics: diag,
        }
    }

    /// Joint log-likelihood of the observed data under these parameters.
    /// This is a diagnostic: it does not separate into per-event pieces and
    /// is not what either estimator maximizes.
    pub fn full_loglik(&self, dataset: &Dataset) -> Result<f64> {
        dataset.validate().into_result()?;
        if dataset.p() != self.p() || dataset.m() != self.m() || dataset.d() > self.d() {
            return Err(Error::validation(
                "dataset dimensions do not match the parameters".to_string(),
            ));
        }
        let mut total_ll = 0.0;
        for (i, o) in dataset.observations().iter().enumerate() {
            for t in 1..=o.time {
                let mut total = 0.0;
                let mut event_hazard = None;
                for j in 1..=self.m() {
                    let h = self.hazard(j, t, &o.z);
                    total += h;
                    if t == o.time && o.event == j {
                        event_hazard = Some(h);
                    }
                }
                if total >= 1.0 {
                    return Err(Error::estimation(format!(
                        "hazard sum reaches {total:.6} >= 1 for subject {i} at period {t}"
                    )));
                }
                match event_hazard {
                    Some(h) => {
                        if h <= 0.0 {
                            return Err(Error::estimation(format!(
                                "zero hazard for the observed event of subject {i} at period {t}"
                            )));
                        }
                        total_ll += h.ln();
                    }
                    None => total_ll += (1.0 - total).ln(),
                }
            }
        }
        Ok(total_ll)
    }
}

/// Event-time law induced by a parameter set at one covariate value.
#[derive(Debug, Clone)]
pub struct JointDistribution {
    /// `m x d`, `Pr(T = t, J = j | z)`.
    pub prob: Array2<f64>,
    /// `Pr(T > d | z)`.
    pub survival_horizon: f64,
    pub diagnostics: PredictionDiagnostics,
}

impl JointDistribution {
    pub fn marginal(&self, j: u16) -> f64 {
        self.prob.row(j as usize - 1).sum()
    }
}

/// Hazard parameters evaluated from intercept functions on a grid; used by
/// simulation presets.
pub fn params_from_fns(
    m: u16,
    d: u32,
    p: usize,
    alpha_fn: impl Fn(u16, u32) -> f64,
    beta_rows: &[Vec<f64>],
) -> HazardParams {
    let mut alpha = Array2::zeros((m as usize, d as usize));
    let mut beta = Array2::zeros((m as usize, p));
    for j in 1..=m {
        for t in 1..=d {
            alpha[(j as usize - 1, t as usize - 1)] = alpha_fn(j, t);
        }
        for (k, v) in beta_rows[j as usize - 1].iter().enumerate() {
            beta[(j as usize - 1, k)] = *v;
        }
    }
    HazardParams { alpha, beta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn flat_params(m: usize, d: usize, level: f64) -> HazardParams {
        HazardParams {
            alpha: Array2::from_elem((m, d), level),
            beta: Array2::zeros((m, 0)),
        }
    }

    #[test]
    fn hazard_examples() {
        let params = flat_params(1, 1, 0.0);
        assert_relative_eq!(params.hazard(1, 1, &[]), 0.5, epsilon = 1e-15);

        let params = flat_params(1, 1, -1.4);
        assert_relative_eq!(params.hazard(1, 1, &[]), 0.19781611144141825, epsilon = 1e-12);

        let params = flat_params(1, 1, f64::NEG_INFINITY);
        assert_eq!(params.hazard(1, 1, &[]), 0.0);
    }

    #[test]
    fn survival_examples() {
        // constant hazard 1/2, one event type: S(2) = 1/4
        let params = flat_params(1, 2, 0.0);
        assert_eq!(params.survival(0, &[]), 1.0);
        assert_relative_eq!(params.survival(2, &[]), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn survival_increments_match_joint_probabilities() {
        let params = HazardParams {
            alpha: array![[-1.0, -0.5, -1.5], [-2.0, -1.8, -0.7]],
            beta: array![[0.4], [-0.3]],
        };
        let z = [0.7];
        let joint = params.joint_distribution(&z);
        for t in 1..=3u32 {
            let drop = params.survival(t - 1, &z) - params.survival(t, &z);
            let mass: f64 = (1..=2u16)
                .map(|j| joint.prob[(j as usize - 1, t as usize - 1)])
                .sum();
            assert_relative_eq!(drop, mass, epsilon = 1e-12);
        }
    }

    #[test]
    fn cif_examples_and_normalization() {
        let params = flat_params(1, 1, 0.0);
        assert_relative_eq!(params.cif(1, 1, &[]), 0.5, epsilon = 1e-15);
        assert_eq!(params.cif(1, 0, &[]), 0.0);

        let params = HazardParams {
            alpha: array![[-1.2, -0.9], [-0.8, -1.1]],
            beta: array![[0.5, -0.2], [0.1, 0.3]],
        };
        let z = [0.4, -0.6];
        let total: f64 =
            (1..=2u16).map(|j| params.marginal_event_prob(j, &z)).sum::<f64>()
                + params.survival(2, &z);
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn saturating_hazards_give_marginal_one() {
        let params = flat_params(1, 3, f64::INFINITY);
        assert_eq!(params.marginal_event_prob(1, &[]), 1.0);
    }

    #[test]
    fn admissibility_violation_is_counted_and_clamped() {
        // two event types each with hazard ~0.73: sum > 1
        let params = flat_params(2, 2, 1.0);
        let mut diag = PredictionDiagnostics::default();
        let s = params.survival_monitored(2, &[], &mut diag);
        assert_eq!(s, 0.0);
        assert_eq!(diag.admissibility_violations, 2);
        assert_eq!(diag.clamped, 2);
    }

    #[test]
    fn full_loglik_boundary_error() {
        // single censored subject, two event types with hazard 1/2 each
        let params = flat_params(2, 1, 0.0);
        let ds = Dataset::new(
            vec![Observation { id: "1".into(), time: 1, event: 0, z: vec![] }],
            0,
            1,
            2,
        );
        let err = params.full_loglik(&ds).unwrap_err();
        assert!(err.to_string().contains(">= 1"));
    }

    #[test]
    fn full_loglik_hand_value() {
        // three subjects (X=2,J=1), (X=3,J=2), (X=3,censored), all hazards 1/4:
        // event terms: 2 * ln(1/4); survivor terms: 6 * ln(1/2)
        let params = flat_params(2, 3, crate::numeric::logit(0.25));
        let obs = vec![
            Observation { id: "1".into(), time: 2, event: 1, z: vec![] },
            Observation { id: "2".into(), time: 3, event: 2, z: vec![] },
            Observation { id: "3".into(), time: 3, event: 0, z: vec![] },
        ];
        let ds = Dataset::new(obs, 0, 3, 2);
        let expected = 2.0 * 0.25f64.ln() + 6.0 * 0.5f64.ln();
        assert_relative_eq!(params.full_loglik(&ds).unwrap(), expected, epsilon = 1e-12);
    }
}
