//! Discrimination and calibration measures for discrete-time competing-risks
//! predictions, built on the person-period view: at each (event, period)
//! cell the score is the predicted hazard, cases are the at-risk subjects
//! failing from that cause in that period, and controls are the remaining
//! at-risk subjects.
//!
//! Cells without both a case and a control have no defined AUC; they are
//! excluded from integration and the remaining weights renormalized.
//! Integrated values weight cells by their event counts and the global
//! values weight event types by their total event counts.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::prediction::HazardParams;

/// Pairwise concordance of cases versus controls among the at-risk subjects
/// at one cell; ties count one half. `scores` is indexed by subject.
pub fn auc_at(scores: &[f64], dataset: &Dataset, j: u16, t: u32) -> Option<f64> {
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    for o in dataset
        .observations()
        .iter()
        .zip(scores)
        .filter(|(o, _)| o.time >= t)
        .map(|(o, &s)| (s, o.time == t && o.event == j))
    {
        ranked.push(o);
    }
    let n_cases = ranked.iter().filter(|(_, c)| *c).count();
    let n_controls = ranked.len() - n_cases;
    if n_cases == 0 || n_controls == 0 {
        return None;
    }

    // average-rank form of the pairwise count
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_cases = 0.0;
    let mut idx = 0;
    while idx < ranked.len() {
        let mut end = idx + 1;
        while end < ranked.len() && ranked[end].0 == ranked[idx].0 {
            end += 1;
        }
        let avg_rank = ((idx + 1 + end) as f64) / 2.0; // ranks are 1-based
        let ties_cases = ranked[idx..end].iter().filter(|(_, c)| *c).count();
        rank_sum_cases += avg_rank * ties_cases as f64;
        idx = end;
    }
    let n_cases = n_cases as f64;
    let n_controls = n_controls as f64;
    Some((rank_sum_cases - n_cases * (n_cases + 1.0) / 2.0) / (n_cases * n_controls))
}

/// Mean squared difference between the event indicator and the predicted
/// hazard over the at-risk subjects at one cell.
pub fn brier_at(scores: &[f64], dataset: &Dataset, j: u16, t: u32) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (o, &s) in dataset.observations().iter().zip(scores) {
        if o.time >= t {
            let delta = if o.time == t && o.event == j { 1.0 } else { 0.0 };
            sum += (delta - s) * (delta - s);
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}

/// Weighted combination over defined cells with weight renormalization.
/// Returns `None` when no cell is defined or all defined weights are zero.
pub fn integrate(values: &[Option<f64>], weights: &[f64]) -> Option<f64> {
    assert_eq!(values.len(), weights.len());
    let mut total_weight = 0.0;
    let mut acc = 0.0;
    for (v, &w) in values.iter().zip(weights) {
        if let Some(v) = v {
            total_weight += w;
            acc += w * v;
        }
    }
    if total_weight > 0.0 {
        Some(acc / total_weight)
    } else {
        None
    }
}

/// Event-type combination; identical arithmetic to [`integrate`], named for
/// the second aggregation level.
pub fn globalize(per_event: &[Option<f64>], weights: &[f64]) -> Option<f64> {
    integrate(per_event, weights)
}

#[derive(Debug, Clone, Serialize)]
pub struct CellMetrics {
    pub j: u16,
    pub t: u32,
    pub auc: Option<f64>,
    pub brier: Option<f64>,
    pub n_events: u64,
    pub n_at_risk: u64,
}

/// Full measurement of one model on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub cells: Vec<CellMetrics>,
    /// Integrated per-event AUC, weighted by per-period event counts.
    pub auc_by_event: Vec<Option<f64>>,
    pub brier_by_event: Vec<Option<f64>>,
    /// Event-count-weighted combination across event types.
    pub auc_global: Option<f64>,
    pub brier_global: Option<f64>,
    /// Weights actually used at the event-type level.
    pub event_weights: Vec<f64>,
}

/// Score a fitted parameter set on a dataset: predicted hazards are the
/// scores at every cell.
pub fn evaluate_model(params: &HazardParams, dataset: &Dataset) -> Result<MetricsReport> {
    dataset.validate().into_result()?;
    if params.p() != dataset.p() || params.m() != dataset.m() || (params.d() as u32) < dataset.d()
    {
        return Err(Error::validation(
            "model dimensions do not match the dataset".to_string(),
        ));
    }
    let m = dataset.m();
    let d = dataset.d();
    let rs = dataset.risk_sets();

    let mut cells = Vec::with_capacity(m as usize * d as usize);
    let mut auc_by_event = Vec::with_capacity(m as usize);
    let mut brier_by_event = Vec::with_capacity(m as usize);
    let mut event_weights = Vec::with_capacity(m as usize);

    let mut scores = vec![0.0f64; dataset.n()];
    for j in 1..=m {
        let mut aucs = Vec::with_capacity(d as usize);
        let mut briers = Vec::with_capacity(d as usize);
        let mut weights = Vec::with_capacity(d as usize);
        for t in 1..=d {
            for (i, o) in dataset.observations().iter().enumerate() {
                scores[i] = params.hazard(j, t, &o.z);
            }
            let auc = auc_at(&scores, dataset, j, t);
            let brier = brier_at(&scores, dataset, j, t);
            cells.push(CellMetrics {
                j,
                t,
                auc,
                brier,
                n_events: rs.nj(j, t),
                n_at_risk: rs.y(t),
            });
            aucs.push(auc);
            briers.push(brier);
            weights.push(rs.nj(j, t) as f64);
        }
        auc_by_event.push(integrate(&aucs, &weights));
        brier_by_event.push(integrate(&briers, &weights));
        event_weights.push(rs.total_events(j) as f64);
    }

    let auc_global = globalize(&auc_by_event, &event_weights);
    let brier_global = globalize(&brier_by_event, &event_weights);

    Ok(MetricsReport {
        cells,
        auc_by_event,
        brier_by_event,
        auc_global,
        brier_global,
        event_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use approx::assert_relative_eq;

    fn at_risk_dataset(cases: &[bool]) -> Dataset {
        let obs = cases
            .iter()
            .enumerate()
            .map(|(i, &c)| Observation {
                id: format!("s{i}"),
                time: 1,
                event: if c { 1 } else { 0 },
                z: vec![],
            })
            .collect();
        Dataset::new(obs, 0, 1, 1)
    }

    #[test]
    fn perfect_separation_scores_one() {
        let ds = at_risk_dataset(&[true, false, false]);
        assert_eq!(auc_at(&[0.9, 0.1, 0.2], &ds, 1, 1), Some(1.0));
    }

    #[test]
    fn all_ties_score_half() {
        let ds = at_risk_dataset(&[true, false, false, false]);
        assert_eq!(auc_at(&[0.3, 0.3, 0.3, 0.3], &ds, 1, 1), Some(0.5));
    }

    #[test]
    fn pair_enumeration_examples() {
        let ds = at_risk_dataset(&[true, false, false]);
        assert_eq!(auc_at(&[0.9, 0.5, 0.7], &ds, 1, 1), Some(1.0));
        assert_eq!(auc_at(&[0.6, 0.5, 0.7], &ds, 1, 1), Some(0.5));
    }

    #[test]
    fn undefined_without_cases_or_controls() {
        let ds = at_risk_dataset(&[false, false]);
        assert_eq!(auc_at(&[0.1, 0.2], &ds, 1, 1), None);
        let ds = at_risk_dataset(&[true, true]);
        assert_eq!(auc_at(&[0.1, 0.2], &ds, 1, 1), None);
    }

    #[test]
    fn brier_constant_prediction_formula() {
        // f(1-q)^2 + (1-f) q^2 for constant prediction q, event fraction f
        let ds = at_risk_dataset(&[true, true, false, false, false]);
        let q = 0.3;
        let f = 2.0 / 5.0;
        let expected = f * (1.0 - q) * (1.0 - q) + (1.0 - f) * q * q;
        let scores = vec![q; 5];
        assert_relative_eq!(
            brier_at(&scores, &ds, 1, 1).unwrap(),
            expected,
            epsilon = 1e-12
        );
        // q = f minimizes over constants at f(1-f)
        let scores = vec![f; 5];
        assert_relative_eq!(
            brier_at(&scores, &ds, 1, 1).unwrap(),
            f * (1.0 - f),
            epsilon = 1e-12
        );
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let ds = at_risk_dataset(&[true, false, true]);
        assert_eq!(brier_at(&[1.0, 0.0, 1.0], &ds, 1, 1), Some(0.0));
    }

    #[test]
    fn integration_weights() {
        assert_relative_eq!(
            integrate(&[Some(0.8)], &[3.0]).unwrap(),
            0.8,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            integrate(&[Some(0.6), Some(0.8)], &[2.0, 2.0]).unwrap(),
            0.7,
            epsilon = 1e-15
        );
        // undefined cells excluded with their weight
        assert_relative_eq!(
            integrate(&[Some(0.6), None, Some(0.8)], &[1.0, 5.0, 3.0]).unwrap(),
            (0.6 + 3.0 * 0.8) / 4.0,
            epsilon = 1e-15
        );
        assert_eq!(integrate(&[None, None], &[1.0, 1.0]), None);
    }

    #[test]
    fn auc_is_rank_invariant() {
        let ds = at_risk_dataset(&[true, false, false, true, false]);
        let scores = [0.12, 0.9, 0.4, 0.55, 0.2];
        let transformed: Vec<f64> = scores.iter().map(|s: &f64| (5.0 * s).exp()).collect();
        assert_eq!(
            auc_at(&scores, &ds, 1, 1),
            auc_at(&transformed, &ds, 1, 1)
        );
    }
}
