use std::path::PathBuf;

use clap::Args;
use dtscr_core::data::read_csv_path;
use dtscr_core::estimators::{SolverConfig, TieMethod};
use dtscr_core::regularize::TuningGrid;
use dtscr_core::screening::{sis, sis_lasso};
use dtscr_core::Result;

use crate::util::{atomic_write, init_workers, out_dir, write_manifest, CsvBuilder};
use crate::CommonArgs;

#[derive(Args)]
pub struct ScreenArgs {
    /// Dataset CSV with header `id,time,event,z1,...,zp`.
    #[arg(long, value_name = "CSV")]
    input: PathBuf,
    /// Seed of the decoupling permutation (and the fold partition with
    /// --lasso).
    #[arg(long)]
    seed: u64,
    /// Follow screening with a cross-validated lasso on the retained set.
    #[arg(long)]
    lasso: bool,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value = "-12:-2:0.5")]
    log_eta_grid: String,
    #[arg(long, default_value_t = TieMethod::Efron)]
    tie_method: TieMethod,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    events: Option<u16>,
    #[command(flatten)]
    common: CommonArgs,
}

pub fn run(args: ScreenArgs) -> Result<()> {
    let started = std::time::Instant::now();
    init_workers(args.common.workers)?;
    let out = out_dir(&args.common.out)?;

    let load = read_csv_path(&args.input, args.horizon, args.events)?;
    let dataset = load.dataset;
    let solver = SolverConfig::default();

    let screening = if args.lasso {
        let grid = TuningGrid {
            log_eta_values: TuningGrid::parse_range(&args.log_eta_grid)?,
            folds: args.folds,
            seed: args.seed,
        };
        let result = sis_lasso(&dataset, args.seed, &grid, args.tie_method, &solver, None)?;
        for w in &result.warnings {
            eprintln!("warning: {w}");
        }
        atomic_write(&out.join("model.json"), result.model.to_json()?.as_bytes())?;
        atomic_write(
            &out.join("screen_report.json"),
            serde_json::to_string_pretty(&result.events)?.as_bytes(),
        )?;
        result.screening
    } else {
        sis(&dataset, args.seed, args.tie_method, &solver)?
    };

    let mut csv = CsvBuilder::new("j,k,beta,abs_beta,selected");
    for j in 1..=dataset.m() {
        for k in 0..dataset.p() {
            let beta = screening.marginal_beta[(j as usize - 1, k)];
            let selected = screening.selected_for(j).contains(&k);
            csv.row(&[
                j.to_string(),
                (k + 1).to_string(),
                format!("{beta}"),
                format!("{}", beta.abs()),
                (selected as u8).to_string(),
            ]);
        }
    }
    csv.write(&out.join("screening.csv"))?;
    println!(
        "threshold w_n = {} | selected per event: {:?}",
        screening.threshold,
        screening
            .selected
            .iter()
            .map(|s| s.len())
            .collect::<Vec<_>>()
    );
    write_manifest(&out, "screen", &[&args.input], Some(args.seed), started)
}
