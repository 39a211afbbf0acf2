use dtscr_core::estimators::{FitConfig, SolverConfig, TieMethod};
use dtscr_core::metrics::evaluate_model;
use dtscr_core::prediction::HazardParams;
use dtscr_core::regularize::*;
use dtscr_core::simulate::{preset, sample_dataset, timing_profile, timing_study, derive_seed};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    let solver = SolverConfig::default();
    match which.as_str() {
        "lasso" => {
            // one Setting-13 repetition: CV select, fit, TP/FP + KKT
            let cfg = preset(13).unwrap().with_seed(derive_seed(13, 0));
            let t0 = std::time::Instant::now();
            let ds = sample_dataset(&cfg).unwrap();
            println!("sampled in {:.1}s", t0.elapsed().as_secs_f64());
            let grid = TuningGrid { log_eta_values: (-12..=-1).map(|v| v as f64).collect(), folds: 5, seed: 99 };
            let t0 = std::time::Instant::now();
            let sel = cv_select_eta(&ds, &grid, PenaltyKind::Lasso, TieMethod::Efron, &solver, CvBaseline::FoldLocal).unwrap();
            println!("cv in {:.1}s selected {:?}", t0.elapsed().as_secs_f64(), sel.log_eta_star);
            for j in 1..=2u16 {
                let spec = PenaltySpec { kind: PenaltyKind::Lasso, eta: sel.eta_star.clone() };
                let fit = penalized_fit(&ds, j, &spec, TieMethod::Efron, &solver).unwrap();
                let nz: Vec<usize> = fit.beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(k, _)| k).collect();
                let tp = nz.iter().filter(|k| **k < 5).count();
                let kkt = kkt_residual_at(&ds, j, &fit.beta, PenaltyKind::Lasso, sel.eta_star[j as usize - 1], TieMethod::Efron, &solver).unwrap();
                println!("event {j}: support {:?} tp {} fp {} kkt {:.2e}", nz, tp, nz.len() - tp, kkt);
            }
        }
        "metrics" => {
            let cfg = preset(11).unwrap().with_seed(derive_seed(11, 0));
            let ds = sample_dataset(&cfg).unwrap();
            let grid = TuningGrid { log_eta_values: (-12..=-1).map(|v| v as f64).collect(), folds: 5, seed: 5 };
            let t0 = std::time::Instant::now();
            let sel = cv_select_eta(&ds, &grid, PenaltyKind::Lasso, TieMethod::Efron, &solver, CvBaseline::FoldLocal).unwrap();
            println!("cv in {:.1}s selected {:?}", t0.elapsed().as_secs_f64(), sel.log_eta_star);
            // 5-fold out-of-sample global metrics at the selected shrinkage
            let assignment = grid.fold_assignment(ds.n());
            let mut aucs = Vec::new();
            let mut bss = Vec::new();
            let mut bs_by_event = vec![Vec::new(); 2];
            for fold in 0..5 {
                let train_idx: Vec<usize> = (0..ds.n()).filter(|i| assignment[*i] != fold).collect();
                let valid_idx: Vec<usize> = (0..ds.n()).filter(|i| assignment[*i] == fold).collect();
                let train = ds.select_subjects(&train_idx);
                let valid = ds.select_subjects(&valid_idx);
                let spec = PenaltySpec { kind: PenaltyKind::Lasso, eta: sel.eta_star.clone() };
                let model = fit_two_step_penalized(&train, &spec, TieMethod::Efron, &solver).unwrap();
                let report = evaluate_model(&HazardParams::from_model(&model), &valid).unwrap();
                aucs.push(report.auc_global.unwrap());
                bss.push(report.brier_global.unwrap());
                for j in 0..2 { bs_by_event[j].push(report.brier_by_event[j].unwrap()); }
            }
            let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            println!("5-fold global AUC mean {:.4}  BS mean {:.4}  BS_1 {:.4} BS_2 {:.4}",
                mean(&aucs), mean(&bss), mean(&bs_by_event[0]), mean(&bs_by_event[1]));
        }
        "timing" => {
            let fit = FitConfig { tie_method: TieMethod::Efron, ..FitConfig::default() };
            for d in [5u32, 50] {
                let cfg = timing_profile(d, 20000, 77);
                let rows = timing_study(&[cfg], 3, &fit).unwrap();
                for r in &rows {
                    println!("d={} {:?} median {:.3}s iqr {:.3}s", r.d, r.method, r.median_secs, r.iqr_secs);
                }
                let ratio = rows[0].median_secs / rows[1].median_secs;
                println!("  ratio two-step/collapsed = {:.3}", ratio);
            }
        }
        _ => eprintln!("usage: check_pipelines lasso|metrics|timing"),
    }
}
