//! Scratch: criterion-2 bootstrap coverage at (80%, 1.5), B=100.

use iiwgee::sim::*;
use iiwgee::study::*;
use iiwgee::weights::Method;

fn main() {
    let nsim: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1000);
    let config = ScenarioConfig::scenario1(200, 1.5, EtaSpec::TargetDropout(0.8), 777);
    let spec = AnalysisSpec::for_scenario(Scenario::S1);
    let opts = McOptions {
        nsim,
        methods: vec![Method::IiwXIpw],
        trims: vec![100.0],
        bootstrap: Some(McBootstrap { b: 100 }),
    };
    let t = std::time::Instant::now();
    let summary = run_mc(&config, &spec, &opts).unwrap();
    let c = &summary.cells[0];
    eprintln!(
        "bias {:+.3} (mcse {:.3}) ese {:.3} nse {:.3} cp {:.3} boot_se {:.3} boot_cp {:.3} fail {} in {:?}",
        c.bias,
        c.mcse_bias,
        c.emp_se,
        c.naive_se_mean,
        c.coverage,
        c.boot_se_mean.unwrap(),
        c.boot_coverage.unwrap(),
        c.n_failed,
        t.elapsed()
    );
}
