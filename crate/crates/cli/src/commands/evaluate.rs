use std::path::PathBuf;

use clap::Args;
use dtscr_core::data::read_csv_path;
use dtscr_core::metrics::evaluate_model;
use dtscr_core::prediction::HazardParams;
use dtscr_core::Result;

use crate::commands::load_model;
use crate::util::{atomic_write, fmt_opt, init_workers, out_dir, write_manifest, CsvBuilder};
use crate::CommonArgs;

#[derive(Args)]
pub struct EvaluateArgs {
    /// Fitted model JSON.
    #[arg(long, value_name = "JSON")]
    model: PathBuf,
    /// Dataset CSV with header `id,time,event,z1,...,zp`.
    #[arg(long, value_name = "CSV")]
    input: PathBuf,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    events: Option<u16>,
    #[command(flatten)]
    common: CommonArgs,
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let started = std::time::Instant::now();
    init_workers(args.common.workers)?;
    let out = out_dir(&args.common.out)?;

    let model = load_model(&args.model)?;
    let load = read_csv_path(&args.input, args.horizon, args.events)?;
    let params = HazardParams::from_model(&model);
    let report = evaluate_model(&params, &load.dataset)?;

    let mut csv = CsvBuilder::new("j,t,auc,brier,n_events,n_at_risk");
    for cell in &report.cells {
        csv.row(&[
            cell.j.to_string(),
            cell.t.to_string(),
            fmt_opt(cell.auc),
            fmt_opt(cell.brier),
            cell.n_events.to_string(),
            cell.n_at_risk.to_string(),
        ]);
    }
    csv.write(&out.join("metrics.csv"))?;

    atomic_write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    if let (Some(auc), Some(bs)) = (report.auc_global, report.brier_global) {
        println!("global auc {auc:.4}   global brier {bs:.4}");
    }
    write_manifest(&out, "evaluate", &[&args.model, &args.input], None, started)
}
