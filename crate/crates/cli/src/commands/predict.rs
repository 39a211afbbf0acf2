use std::path::PathBuf;

use clap::Args;
use dtscr_core::prediction::{HazardParams, PredictionDiagnostics};
use dtscr_core::{Error, Result};

use crate::commands::load_model;
use crate::util::{init_workers, out_dir, write_manifest, CsvBuilder};
use crate::CommonArgs;

#[derive(Args)]
pub struct PredictArgs {
    /// Fitted model JSON.
    #[arg(long, value_name = "JSON")]
    model: PathBuf,
    /// Covariate CSV with header `id,z1,...,zp`.
    #[arg(long, value_name = "CSV")]
    input: PathBuf,
    /// Emit only this period instead of full curves.
    #[arg(long)]
    t: Option<u32>,
    #[command(flatten)]
    common: CommonArgs,
}

pub fn run(args: PredictArgs) -> Result<()> {
    let started = std::time::Instant::now();
    init_workers(args.common.workers)?;
    let out = out_dir(&args.common.out)?;

    let model = load_model(&args.model)?;
    let params = HazardParams::from_model(&model);
    if let Some(t) = args.t {
        if t < 1 || t > params.d() {
            return Err(Error::validation(format!("t > d: requested period {t}, horizon {}", params.d())));
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&args.input)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || &headers[0] != "id" {
        return Err(Error::validation(
            "covariate CSV must have header `id,z1,...,zp`",
        ));
    }
    if headers.len() - 1 != params.p() {
        return Err(Error::validation(format!(
            "model expects {} covariates, CSV has {}",
            params.p(),
            headers.len() - 1
        )));
    }

    let mut csv_out = CsvBuilder::new("id,j,t,cif");
    let mut diag = PredictionDiagnostics::default();
    let periods: Vec<u32> = match args.t {
        Some(t) => vec![t],
        None => (1..=params.d()).collect(),
    };
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let id = record[0].to_string();
        let mut z = Vec::with_capacity(params.p());
        for k in 0..params.p() {
            let v: f64 = record[1 + k].parse().map_err(|_| {
                Error::validation(format!("row {}: bad value `{}`", line + 2, &record[1 + k]))
            })?;
            z.push(v);
        }
        for j in 1..=params.m() {
            for &t in &periods {
                let cif = params.cif_monitored(j, t, &z, &mut diag);
                csv_out.row(&[
                    id.clone(),
                    j.to_string(),
                    t.to_string(),
                    format!("{cif}"),
                ]);
            }
        }
    }
    csv_out.write(&out.join("cif.csv"))?;
    if diag.clamped > 0 {
        eprintln!(
            "warning: hazard sums reached 1 at {} period evaluations; survivor factors clamped at 0",
            diag.clamped
        );
    }
    write_manifest(&out, "predict", &[&args.model, &args.input], None, started)
}
