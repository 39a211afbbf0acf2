use dtscr_core::simulate::{preset, run_replications, EstimatorKind, ReplicationPlan, ParamKind};
use dtscr_core::estimators::FitConfig;

fn main() {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let setting: u8 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = preset(setting).unwrap();
    let plan = ReplicationPlan {
        reps,
        estimator: EstimatorKind::Both,
        fit: FitConfig::default(),
        keep_per_rep: false,
    };
    let t0 = std::time::Instant::now();
    let report = run_replications(&cfg, &plan).unwrap();
    println!("setting {setting} reps {reps} wall {:.2}s", t0.elapsed().as_secs_f64());
    println!("event mix: censored {:.1}% events {:?}", report.event_mix.censored_pct,
        report.event_mix.event_pct.iter().map(|p| format!("{p:.1}")).collect::<Vec<_>>());
    for ms in &report.methods {
        println!("== method {:?}", ms.method);
        for p in &ms.params {
            if let ParamKind::Beta(k) = p.param {
                println!("  beta_{}{} true {:+.3} mean {:+.4} est_se {:.4} emp_se {:.4} cr {:.3}",
                    p.j, k, p.true_value, p.mean,
                    p.mean_est_se.unwrap_or(f64::NAN), p.emp_se.unwrap_or(f64::NAN),
                    p.coverage.unwrap_or(f64::NAN));
            }
        }
    }
}
