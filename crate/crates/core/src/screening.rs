//! Marginal screening for ultra-high-dimensional covariates.
//!
//! Each covariate is ranked by the magnitude of its one-dimensional
//! conditional-likelihood fit, per event type. The selection threshold is
//! data-driven: one seeded random permutation of the covariate rows decouples
//! them from the outcomes, the marginal fits are recomputed on the permuted
//! data, and the largest magnitude seen there becomes the threshold — any
//! real coefficient should beat the best the null can do. Screening keeps
//! memory at one column buffer per worker: columns stream through the shared
//! stratification rather than materializing an expanded copy.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::baseline::fit_alpha;
use crate::estimators::conditional::{
    check_identifiability, maximize, ColumnCov, SolverConfig, Strata, TieMethod,
};
use crate::estimators::{BaselineEstimate, CoefficientEstimate, Dims, FittedModel, Method};
use crate::regularize::{cv_select_eta, penalized_fit, CvBaseline, PenaltyKind, PenaltySpec, TuningGrid};

/// Signed marginal estimates for every (event, covariate) pair.
#[derive(Debug, Clone)]
pub struct MarginalFits {
    /// `m x p` signed one-covariate estimates; failed cells hold 0.
    pub beta: Array2<f64>,
    /// Cells whose marginal fit failed (non-identifiable column, separation),
    /// recorded instead of raised.
    pub failed: Vec<(u16, usize)>,
}

fn marginal_fits_with(
    dataset: &Dataset,
    strata: &[Strata],
    tie: TieMethod,
    solver: &SolverConfig,
    permutation: Option<&[usize]>,
) -> MarginalFits {
    let p = dataset.p();
    let m = dataset.m() as usize;

    let per_column: Vec<Vec<Option<f64>>> = (0..p)
        .into_par_iter()
        .map(|k| {
            let mut column = Vec::with_capacity(dataset.n());
            match permutation {
                Some(perm) => column.extend(perm.iter().map(|&src| dataset.z(src)[k])),
                None => dataset.column(k, &mut column),
            }
            let cov = ColumnCov(&column);
            let name = vec![dataset.covariate_name(k).to_string()];
            (0..m)
                .map(|j_idx| {
                    if check_identifiability(&strata[j_idx], &cov, &name).is_err() {
                        return None;
                    }
                    match maximize(&strata[j_idx], &cov, tie, solver) {
                        Ok(outcome) if outcome.converged => Some(outcome.beta[0]),
                        _ => None,
                    }
                })
                .collect()
        })
        .collect();

    let mut beta = Array2::<f64>::zeros((m, p));
    let mut failed = Vec::new();
    for (k, cells) in per_column.iter().enumerate() {
        for (j_idx, cell) in cells.iter().enumerate() {
            match cell {
                Some(b) => beta[(j_idx, k)] = *b,
                None => failed.push((j_idx as u16 + 1, k)),
            }
        }
    }
    failed.sort_unstable();
    MarginalFits { beta, failed }
}

/// One-covariate conditional-likelihood estimates for every (event,
/// covariate) pair; identical to running the full fit on each single column.
pub fn marginal_fits(
    dataset: &Dataset,
    tie: TieMethod,
    solver: &SolverConfig,
) -> Result<MarginalFits> {
    dataset.validate().into_result()?;
    let strata: Vec<Strata> = (1..=dataset.m())
        .map(|j| Strata::for_event(dataset, j))
        .collect();
    for (j_idx, s) in strata.iter().enumerate() {
        if s.total_events() == 0 {
            return Err(Error::estimation(format!(
                "no events of type {} observed",
                j_idx + 1
            )));
        }
    }
    Ok(marginal_fits_with(dataset, &strata, tie, solver, None))
}

fn permutation_of(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    perm
}

/// Data-driven screening threshold: the largest marginal magnitude after one
/// seeded whole-row permutation of the covariates against the outcomes.
pub fn permutation_threshold(
    dataset: &Dataset,
    seed: u64,
    tie: TieMethod,
    solver: &SolverConfig,
) -> Result<f64> {
    dataset.validate().into_result()?;
    let strata: Vec<Strata> = (1..=dataset.m())
        .map(|j| Strata::for_event(dataset, j))
        .collect();
    let perm = permutation_of(dataset.n(), seed);
    let null_fits = marginal_fits_with(dataset, &strata, tie, solver, Some(&perm));
    Ok(null_fits
        .beta
        .iter()
        .fold(0.0f64, |acc, b| acc.max(b.abs())))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScreeningResult {
    /// `m x p` signed marginal estimates (row-major).
    #[serde(skip)]
    pub marginal_beta: Array2<f64>,
    pub threshold: f64,
    /// Per event type: covariate indices with `|estimate| >= threshold`.
    pub selected: Vec<Vec<usize>>,
    pub permutation_seed: u64,
    pub failed: Vec<(u16, usize)>,
}

impl ScreeningResult {
    pub fn selected_for(&self, j: u16) -> &[usize] {
        &self.selected[j as usize - 1]
    }
}

/// Marginal fits plus the permutation threshold; the selected set per event
/// type is exactly the covariates at or above it.
pub fn sis(
    dataset: &Dataset,
    seed: u64,
    tie: TieMethod,
    solver: &SolverConfig,
) -> Result<ScreeningResult> {
    let fits = marginal_fits(dataset, tie, solver)?;
    let threshold = permutation_threshold(dataset, seed, tie, solver)?;
    let m = dataset.m() as usize;
    let selected = (0..m)
        .map(|j_idx| {
            (0..dataset.p())
                .filter(|&k| fits.beta[(j_idx, k)].abs() >= threshold)
                .collect()
        })
        .collect();
    Ok(ScreeningResult {
        marginal_beta: fits.beta,
        threshold,
        selected,
        permutation_seed: seed,
        failed: fits.failed,
    })
}

/// Selection accounting against a known set of true signal columns.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Accounting {
    pub size: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

fn account(selected: &[usize], truth: &[usize]) -> Accounting {
    let tp = selected.iter().filter(|k| truth.contains(k)).count();
    Accounting {
        size: selected.len(),
        true_positives: tp,
        false_positives: selected.len() - tp,
        false_negatives: truth.len() - tp,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SisLassoEvent {
    pub j: u16,
    /// Selected shrinkage (natural log); `None` when the screened set was
    /// empty and the event degenerated to intercepts only.
    pub log_eta: Option<f64>,
    /// Covariates kept by the screen.
    pub screened: Vec<usize>,
    /// Covariates with non-zero coefficients after the lasso.
    pub selected: Vec<usize>,
    pub screen_accounting: Option<Accounting>,
    pub final_accounting: Option<Accounting>,
}

#[derive(Debug, Clone)]
pub struct SisLassoResult {
    pub screening: ScreeningResult,
    /// Full-width model: coefficient rows carry zeros outside each event's
    /// selected support.
    pub model: FittedModel,
    pub events: Vec<SisLassoEvent>,
    pub warnings: Vec<String>,
}

/// Screening followed by the lasso on the retained covariates, with the
/// shrinkage tuned by cross validation per event type, then intercepts from
/// the moment equations. `truth` (per event type, true signal columns)
/// enables selection accounting in simulation studies.
pub fn sis_lasso(
    dataset: &Dataset,
    seed: u64,
    grid: &TuningGrid,
    tie: TieMethod,
    solver: &SolverConfig,
    truth: Option<&[Vec<usize>]>,
) -> Result<SisLassoResult> {
    let screening = sis(dataset, seed, tie, solver)?;
    let m = dataset.m();
    let d = dataset.d();
    let p = dataset.p();

    let mut warnings = Vec::new();
    let mut events = Vec::with_capacity(m as usize);
    let mut coefficients = Vec::with_capacity(m as usize);
    let mut alpha = Array2::<f64>::zeros((m as usize, d as usize));
    let mut variance = Array2::<f64>::from_elem((m as usize, d as usize), f64::NAN);
    let mut undefined_cells = Vec::new();

    for j in 1..=m {
        let screened = screening.selected_for(j).to_vec();
        let mut beta_full = vec![0.0; p];
        let mut log_eta = None;
        let mut estimate_meta = (true, 0usize, 0.0f64);

        if screened.is_empty() {
            warnings.push(format!(
                "event {j}: screening selected no covariates; fitting intercepts only"
            ));
        } else {
            let reduced = dataset.select_covariates(&screened);
            let selection = cv_select_eta(&reduced, grid, PenaltyKind::Lasso, tie, solver, CvBaseline::FoldLocal)
                .map_err(|e| e.with_context(&format!("event {j} shrinkage selection")))?;
            warnings.extend(selection.warnings.iter().cloned());
            let eta = selection.eta_star[j as usize - 1];
            log_eta = Some(selection.log_eta_star[j as usize - 1]);
            let spec = PenaltySpec::uniform(PenaltyKind::Lasso, eta, m);
            let fit = penalized_fit(&reduced, j, &spec, tie, solver)
                .map_err(|e| e.with_context(&format!("event {j} penalized fit")))?;
            estimate_meta = (fit.converged, fit.iterations, fit.final_gradient_norm);
            for (pos, &k) in screened.iter().enumerate() {
                beta_full[k] = fit.beta[pos];
            }
        }

        let beta_arr = ndarray::Array1::from_vec(beta_full.clone());
        for t in 1..=d {
            let cell = fit_alpha(dataset, j, t, &beta_arr, None)
                .map_err(|e| e.with_context(&format!("event {j}, period {t}")))?;
            alpha[(j as usize - 1, t as usize - 1)] = cell.alpha();
            match cell {
                crate::estimators::AlphaCell::Defined { variance: v, .. } => {
                    variance[(j as usize - 1, t as usize - 1)] = v;
                }
                crate::estimators::AlphaCell::Undefined { .. } => {
                    undefined_cells.push((j, t));
                }
            }
        }

        let selected: Vec<usize> = beta_full
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(k, _)| k)
            .collect();
        let truth_j = truth.map(|t| t[j as usize - 1].as_slice());
        events.push(SisLassoEvent {
            j,
            log_eta,
            screen_accounting: truth_j.map(|t| account(&screened, t)),
            final_accounting: truth_j.map(|t| account(&selected, t)),
            screened,
            selected,
        });
        coefficients.push(CoefficientEstimate {
            j,
            beta: beta_arr,
            covariance: None,
            converged: estimate_meta.0,
            iterations: estimate_meta.1,
            final_gradient_norm: estimate_meta.2,
        });
    }

    let model = FittedModel {
        method: Method::TwoStep,
        tie_method: tie,
        dims: Dims {
            n: dataset.n(),
            p,
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
    };

    Ok(SisLassoResult {
        screening,
        model,
        events,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::estimators::fit_beta_conditional;
    use crate::simulate::{preset, sample_dataset};

    pub(super) fn signal_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let mut cfg = preset(1).unwrap();
        cfg.n = n;
        cfg.p = p;
        cfg.d = 4;
        cfg.m = 2;
        cfg.alpha = vec![vec![-1.2; 4], vec![-1.5; 4]];
        let mut b1 = vec![0.0; p];
        let mut b2 = vec![0.0; p];
        b1[0] = 1.2;
        b2[if p > 1 { 1 } else { 0 }] = -1.0;
        cfg.beta = vec![b1, b2];
        cfg.censoring = vec![0.02; 4];
        cfg.seed = seed;
        sample_dataset(&cfg).unwrap()
    }

    #[test]
    fn single_column_marginal_equals_full_fit() {
        let ds = signal_dataset(220, 1, 3);
        let solver = SolverConfig::default();
        let fits = marginal_fits(&ds, TieMethod::Breslow, &solver).unwrap();
        let full = fit_beta_conditional(&ds, 1, TieMethod::Breslow, &solver).unwrap();
        assert_eq!(fits.beta[(0, 0)], full.beta[0]);
    }

    #[test]
    fn constant_column_threshold_is_zero() {
        let obs = (0..30)
            .map(|i| Observation {
                id: format!("s{i}"),
                time: 1 + (i % 3) as u32,
                event: (i % 2) as u16,
                z: vec![1.0],
            })
            .collect();
        let ds = Dataset::new(obs, 1, 3, 1);
        let w = permutation_threshold(&ds, 5, TieMethod::Breslow, &SolverConfig::default())
            .unwrap();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn threshold_is_seed_deterministic() {
        let ds = signal_dataset(200, 30, 7);
        let solver = SolverConfig::default();
        let a = permutation_threshold(&ds, 11, TieMethod::Breslow, &solver).unwrap();
        let b = permutation_threshold(&ds, 11, TieMethod::Breslow, &solver).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let c = permutation_threshold(&ds, 12, TieMethod::Breslow, &solver).unwrap();
        assert_ne!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn selection_matches_definition_and_keeps_signals() {
        let ds = signal_dataset(600, 25, 13);
        let solver = SolverConfig::default();
        let result = sis(&ds, 21, TieMethod::Breslow, &solver).unwrap();
        for j_idx in 0..2 {
            for k in 0..25 {
                let in_set = result.selected[j_idx].contains(&k);
                let above = result.marginal_beta[(j_idx, k)].abs() >= result.threshold;
                assert_eq!(in_set, above);
            }
        }
        assert!(result.selected[0].contains(&0), "signal column screened out");
        assert!(result.selected[1].contains(&1), "signal column screened out");
    }

    #[test]
    fn sis_lasso_support_is_subset_of_screen() {
        let ds = signal_dataset(500, 12, 29);
        let solver = SolverConfig::default();
        let grid = TuningGrid {
            log_eta_values: vec![-6.0, -4.0, -2.0],
            folds: 2,
            seed: 3,
        };
        let truth = vec![vec![0usize], vec![1usize]];
        let result = sis_lasso(
            &ds,
            31,
            &grid,
            TieMethod::Breslow,
            &solver,
            Some(&truth),
        )
        .unwrap();
        for ev in &result.events {
            for k in &ev.selected {
                assert!(ev.screened.contains(k));
            }
            let acc = ev.final_accounting.unwrap();
            assert_eq!(acc.size, ev.selected.len());
        }
    }

    #[test]
    fn all_signals_screened_out_is_reported_not_raised() {
        // no real signal and a huge threshold via tiny n: empty selection OK
        let truth = vec![vec![0, 1, 2, 3, 4], vec![0, 1, 2, 3, 4]];
        let acc = account(&[], &truth[0]);
        assert_eq!(acc.false_negatives, 5);
        assert_eq!(acc.size, 0);
    }
}

