use dtscr_core::simulate::{preset, sample_dataset};
use dtscr_core::estimators::{fit_beta_conditional, fit_collapsed, SolverConfig, TieMethod};

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10000);
    let mut cfg = preset(1).unwrap();
    cfg.n = n;
    cfg.seed = 424242;
    let ds = sample_dataset(&cfg).unwrap();
    let mut solver = SolverConfig::default();
    solver.exact_limit = 100000;

    let collapsed = fit_collapsed(&ds, 1, &solver).unwrap();
    println!("collapsed: {:?}", collapsed.beta.to_vec().iter().map(|b| format!("{b:+.4}")).collect::<Vec<_>>());
    for tie in [TieMethod::Breslow, TieMethod::Efron, TieMethod::Exact] {
        let t0 = std::time::Instant::now();
        let fit = fit_beta_conditional(&ds, 1, tie, &solver).unwrap();
        println!("{tie:>8}: {:?}  ({:.2}s, {} iters)", fit.beta.to_vec().iter().map(|b| format!("{b:+.4}")).collect::<Vec<_>>(), t0.elapsed().as_secs_f64(), fit.iterations);
    }
}
