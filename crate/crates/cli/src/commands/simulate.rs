
use clap::Args;
use dtscr_core::data::write_csv;
use dtscr_core::estimators::{FitConfig, TieMethod};
use dtscr_core::simulate::{
    derive_seed, preset, run_replications, sample_dataset, EstimatorKind, ParamKind,
    ReplicationPlan,
};
use dtscr_core::Result;

use crate::util::{atomic_write, fmt_opt, init_workers, out_dir, write_manifest, CsvBuilder};
use crate::CommonArgs;

#[derive(Args)]
pub struct SimulateArgs {
    /// Published simulation setting, 1..=19.
    #[arg(long)]
    setting: u8,
    /// Override the setting's sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Repetitions (defaults to the setting's published count).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// Estimators to fit.
    #[arg(long, default_value = "two-step", value_parser = parse_estimator)]
    method: EstimatorKind,
    /// Tie method for the two-step coefficient fits.
    #[arg(long, default_value_t = TieMethod::Exact)]
    tie_method: TieMethod,
    /// Also write each repetition's sampled dataset.
    #[arg(long)]
    emit_data: bool,
    #[command(flatten)]
    common: CommonArgs,
}

fn parse_estimator(s: &str) -> std::result::Result<EstimatorKind, String> {
    match s {
        "two-step" => Ok(EstimatorKind::TwoStep),
        "collapsed" => Ok(EstimatorKind::Collapsed),
        "both" => Ok(EstimatorKind::Both),
        other => Err(format!("unknown method `{other}` (two-step, collapsed, both)")),
    }
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let started = std::time::Instant::now();
    init_workers(args.common.workers)?;
    let out = out_dir(&args.common.out)?;

    let mut config = preset(args.setting)?.with_seed(args.seed);
    if let Some(n) = args.n {
        config = config.with_n(n);
    }
    let reps = args.reps.unwrap_or(config.reps);

    let plan = ReplicationPlan {
        reps,
        estimator: args.method,
        fit: FitConfig {
            tie_method: args.tie_method,
            ..FitConfig::default()
        },
        keep_per_rep: true,
    };
    let report = run_replications(&config, &plan)?;

    let mut csv = CsvBuilder::new("rep,method,j,param,estimate,se");
    for row in &report.per_rep {
        let param = match row.param {
            ParamKind::Beta(k) => format!("beta_{}", k),
            ParamKind::Alpha(t) => format!("alpha_{}", t),
        };
        csv.row(&[
            row.rep.to_string(),
            row.method.to_string(),
            row.j.to_string(),
            param,
            format!("{}", row.estimate),
            fmt_opt(row.se),
        ]);
    }
    csv.write(&out.join("estimates.csv"))?;

    let mut slim = report.clone();
    slim.per_rep.clear();
    atomic_write(
        &out.join("report.json"),
        serde_json::to_string_pretty(&slim)?.as_bytes(),
    )?;

    if args.emit_data {
        let data_dir = out.join("data");
        std::fs::create_dir_all(&data_dir)?;
        for rep in 0..reps {
            let rep_config = config.clone().with_seed(derive_seed(args.seed, rep as u64));
            let dataset = sample_dataset(&rep_config)?;
            let mut buf = Vec::new();
            write_csv(&dataset, &mut buf)?;
            atomic_write(&data_dir.join(format!("rep-{rep}.csv")), &buf)?;
        }
    }

    println!(
        "setting {} | {} repetitions ({} used) | censored {:.1}%",
        args.setting, reps, report.reps_used, report.event_mix.censored_pct
    );
    write_manifest(&out, "simulate", &[], Some(args.seed), started)
}
