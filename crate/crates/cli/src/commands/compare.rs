use std::path::PathBuf;

use clap::Args;
use dtscr_core::data::read_csv_path;
use dtscr_core::estimators::{
    fit_collapsed_model, fit_two_step, FitConfig, Method, TieMethod,
};
use dtscr_core::simulate::{preset, run_replications, EstimatorKind, ParamKind, ReplicationPlan};
use dtscr_core::{Error, Result};

use crate::util::{fmt_opt, init_workers, out_dir, write_manifest, CsvBuilder};
use crate::CommonArgs;

#[derive(Args)]
pub struct CompareArgs {
    /// Dataset CSV; single-dataset comparison.
    #[arg(long, value_name = "CSV", conflicts_with = "setting")]
    input: Option<PathBuf>,
    /// Published setting; replication-study comparison.
    #[arg(long)]
    setting: Option<u8>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = TieMethod::Exact)]
    tie_method: TieMethod,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    events: Option<u16>,
    #[command(flatten)]
    common: CommonArgs,
}

pub fn run(args: CompareArgs) -> Result<()> {
    let started = std::time::Instant::now();
    init_workers(args.common.workers)?;
    let out = out_dir(&args.common.out)?;
    let fit = FitConfig {
        tie_method: args.tie_method,
        ..FitConfig::default()
    };

    match (&args.input, args.setting) {
        (Some(input), None) => {
            let load = read_csv_path(input, args.horizon, args.events)?;
            let dataset = load.dataset;
            let two_step = fit_two_step(&dataset, &fit)?;
            let collapsed = fit_collapsed_model(&dataset, &fit)?;

            let mut csv =
                CsvBuilder::new("j,covariate,two_step,two_step_se,collapsed,collapsed_se");
            for j in 1..=dataset.m() {
                let a = two_step.coefficient(j);
                let b = collapsed.coefficient(j);
                for (k, name) in dataset.covariate_names().iter().enumerate() {
                    csv.row(&[
                        j.to_string(),
                        name.clone(),
                        format!("{}", a.beta[k]),
                        fmt_opt(a.se(k)),
                        format!("{}", b.beta[k]),
                        fmt_opt(b.se(k)),
                    ]);
                }
            }
            csv.write(&out.join("side_by_side.csv"))?;

            let rs = dataset.risk_sets();
            let mut curves = CsvBuilder::new("j,t,n_events,two_step_alpha,collapsed_alpha");
            for j in 1..=dataset.m() {
                for t in 1..=dataset.d() {
                    curves.row(&[
                        j.to_string(),
                        t.to_string(),
                        rs.nj(j, t).to_string(),
                        format!("{}", two_step.baseline.alpha_at(j, t)),
                        format!("{}", collapsed.baseline.alpha_at(j, t)),
                    ]);
                }
            }
            curves.write(&out.join("alpha_curves.csv"))?;
            write_manifest(&out, "compare", &[input], args.seed, started)
        }
        (None, Some(setting)) => {
            let seed = args
                .seed
                .ok_or_else(|| Error::config("--seed is required with --setting"))?;
            let config = preset(setting)?.with_seed(seed);
            let reps = args.reps.unwrap_or(config.reps);
            let plan = ReplicationPlan {
                reps,
                estimator: EstimatorKind::Both,
                fit,
                keep_per_rep: false,
            };
            let report = run_replications(&config, &plan)?;

            let find = |method: Method| {
                report
                    .methods
                    .iter()
                    .find(|m| m.method == method)
                    .expect("both methods requested")
            };
            let two_step = find(Method::TwoStep);
            let collapsed = find(Method::Collapsed);

            let mut table = CsvBuilder::new(
                "j,param,true_value,collapsed_mean,collapsed_est_se,two_step_mean,two_step_est_se,two_step_emp_se,two_step_cr",
            );
            let mut curves =
                CsvBuilder::new("j,t,mean_events,truth,two_step_alpha,collapsed_alpha");
            for (a, b) in two_step.params.iter().zip(&collapsed.params) {
                let param = match a.param {
                    ParamKind::Beta(k) => format!("beta_{}", k),
                    ParamKind::Alpha(t) => format!("alpha_{}", t),
                };
                table.row(&[
                    a.j.to_string(),
                    param,
                    format!("{}", a.true_value),
                    format!("{}", b.mean),
                    fmt_opt(b.mean_est_se),
                    format!("{}", a.mean),
                    fmt_opt(a.mean_est_se),
                    fmt_opt(a.emp_se),
                    fmt_opt(a.coverage),
                ]);
                if let ParamKind::Alpha(t) = a.param {
                    curves.row(&[
                        a.j.to_string(),
                        t.to_string(),
                        format!(
                            "{}",
                            report.event_mix.mean_events[a.j as usize - 1][t as usize - 1]
                        ),
                        format!("{}", a.true_value),
                        format!("{}", a.mean),
                        format!("{}", b.mean),
                    ]);
                }
            }
            table.write(&out.join("replication_table.csv"))?;
            curves.write(&out.join("alpha_curves.csv"))?;
            write_manifest(&out, "compare", &[], Some(seed), started)
        }
        _ => Err(Error::config(
            "compare needs exactly one of --input or --setting",
        )),
    }
}
