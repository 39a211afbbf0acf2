use std::path::PathBuf;

use clap::Args;
use dtscr_core::data::read_csv_path;
use dtscr_core::estimators::{
    fit_collapsed_model, fit_two_step, FitConfig, FittedModel, Method, SolverConfig, TieMethod,
};
use dtscr_core::numeric::sig6;
use dtscr_core::regularize::{
    cv_select_eta, fit_two_step_penalized, CvBaseline, PenaltyKind, PenaltySpec, TuningGrid,
};
use dtscr_core::{Error, Result};

use crate::util::{atomic_write, fmt_opt, init_workers, out_dir, write_manifest, CsvBuilder};
use crate::CommonArgs;

#[derive(Args)]
pub struct FitArgs {
    /// Dataset CSV with header `id,time,event,z1,...,zp`.
    #[arg(long, value_name = "CSV")]
    input: PathBuf,
    #[arg(long, default_value = "two-step")]
    method: Method,
    /// Tie method for the conditional-likelihood step. Defaults to exact;
    /// penalized fits default to efron unless set explicitly.
    #[arg(long)]
    tie_method: Option<TieMethod>,
    /// Override the inferred horizon `d = max(time)`.
    #[arg(long)]
    horizon: Option<u32>,
    /// Override the inferred number of event types `m = max(event)`.
    #[arg(long)]
    events: Option<u16>,
    /// Penalty family: lasso, ridge, or elastic-net:MIXING.
    #[arg(long)]
    penalty: Option<PenaltyKind>,
    /// Natural-log shrinkage grid `start:end:step` for cross validation.
    #[arg(long, default_value = "-12:-1:1")]
    log_eta_grid: String,
    #[arg(long, default_value_t = 4)]
    folds: usize,
    /// Required for any penalized fit (drives the fold partition).
    #[arg(long)]
    seed: Option<u64>,
    /// Intercepts used when scoring held-out folds.
    #[arg(long, default_value = "fold", value_parser = parse_baseline)]
    cv_baseline: CvBaseline,
    #[command(flatten)]
    common: CommonArgs,
}

fn parse_baseline(s: &str) -> std::result::Result<CvBaseline, String> {
    match s {
        "fold" => Ok(CvBaseline::FoldLocal),
        "full" => Ok(CvBaseline::FullData),
        other => Err(format!("unknown baseline `{other}` (fold, full)")),
    }
}

pub fn run(args: FitArgs) -> Result<()> {
    let started = std::time::Instant::now();
    init_workers(args.common.workers)?;
    let out = out_dir(&args.common.out)?;

    let load = read_csv_path(&args.input, args.horizon, args.events)?;
    if load.clamped > 0 {
        println!(
            "{} observation(s) beyond the horizon were clamped to d and censored",
            load.clamped
        );
    }
    let dataset = load.dataset;
    dataset.validate().into_result()?;
    let solver = SolverConfig::default();

    let model = match args.penalty {
        None => {
            let config = FitConfig {
                tie_method: args.tie_method.unwrap_or(TieMethod::Exact),
                solver,
            };
            match args.method {
                Method::TwoStep => fit_two_step(&dataset, &config)?,
                Method::Collapsed => fit_collapsed_model(&dataset, &config)?,
            }
        }
        Some(kind) => {
            if args.method == Method::Collapsed {
                return Err(Error::config(
                    "penalized fitting applies to the two-step method only",
                ));
            }
            let seed = args.seed.ok_or_else(|| {
                Error::config("--seed is required for penalized fits (fold partition)")
            })?;
            let tie = args.tie_method.unwrap_or(TieMethod::Efron);
            let grid = TuningGrid {
                log_eta_values: TuningGrid::parse_range(&args.log_eta_grid)?,
                folds: args.folds,
                seed,
            };
            let selection = cv_select_eta(&dataset, &grid, kind, tie, &solver, args.cv_baseline)?;

            let mut csv = CsvBuilder::new("j,log_eta,fold,auc");
            for row in &selection.rows {
                csv.row(&[
                    row.j.to_string(),
                    format!("{}", row.log_eta),
                    row.fold.to_string(),
                    fmt_opt(row.auc),
                ]);
            }
            csv.write(&out.join("cv_report.csv"))?;
            for w in &selection.warnings {
                eprintln!("warning: {w}");
            }
            for (j, log_eta) in selection.log_eta_star.iter().enumerate() {
                println!("event {}: selected log eta = {}", j + 1, sig6(*log_eta));
            }

            let spec = PenaltySpec {
                kind,
                eta: selection.eta_star.clone(),
            };
            fit_two_step_penalized(&dataset, &spec, tie, &solver)?
        }
    };

    atomic_write(&out.join("model.json"), model.to_json()?.as_bytes())?;
    atomic_write(
        &out.join("coefficients.txt"),
        coefficient_table(&model).as_bytes(),
    )?;
    println!("model written to {}", out.join("model.json").display());
    write_manifest(&out, "fit", &[&args.input], args.seed, started)
}

/// Human-readable per-event coefficient table with Wald intervals.
pub fn coefficient_table(model: &FittedModel) -> String {
    let mut text = String::new();
    text.push_str(&format!(
        "method: {}   ties: {}   n={} p={} d={} m={}\n\n",
        model.method, model.tie_method, model.dims.n, model.dims.p, model.dims.d, model.dims.m
    ));
    text.push_str(&format!(
        "{:<6} {:<18} {:>12} {:>12} {:>12} {:>12}\n",
        "event", "covariate", "estimate", "se", "ci_low", "ci_high"
    ));
    for c in &model.coefficients {
        for (k, name) in model.covariate_names.iter().enumerate() {
            let estimate = c.beta[k];
            match c.se(k) {
                Some(se) => {
                    text.push_str(&format!(
                        "{:<6} {:<18} {:>12} {:>12} {:>12} {:>12}\n",
                        c.j,
                        name,
                        sig6(estimate),
                        sig6(se),
                        sig6(estimate - 1.96 * se),
                        sig6(estimate + 1.96 * se)
                    ));
                }
                None => {
                    text.push_str(&format!(
                        "{:<6} {:<18} {:>12} {:>12} {:>12} {:>12}\n",
                        c.j,
                        name,
                        sig6(estimate),
                        "-",
                        "-",
                        "-"
                    ));
                }
            }
        }
    }
    text.push('\n');
    text.push_str(&format!(
        "{:<6} {:<8} {:>12} {:>12}\n",
        "event", "period", "alpha", "se"
    ));
    for j in 1..=model.dims.m {
        for t in 1..=model.dims.d {
            let alpha = model.baseline.alpha_at(j, t);
            let se = model.baseline.variance_at(j, t).map(|v| v.sqrt());
            text.push_str(&format!(
                "{:<6} {:<8} {:>12} {:>12}\n",
                j,
                t,
                if alpha.is_finite() {
                    sig6(alpha)
                } else {
                    format!("{alpha}")
                },
                se.map(sig6).unwrap_or_else(|| "-".to_string())
            ));
        }
    }
    text
}
