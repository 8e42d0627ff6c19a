//! Scratch: consistency trend over sample sizes (criterion-5 shape).

use iiwgee::sim::*;
use iiwgee::study::*;
use iiwgee::weights::Method;

fn main() {
    let nsim: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let t0 = std::time::Instant::now();
    for n in [200usize, 500, 1000, 2000] {
        let config = ScenarioConfig::scenario1(n, 0.5, EtaSpec::TargetDropout(0.2), 4242);
        let spec = AnalysisSpec::for_scenario(Scenario::S1);
        let opts = McOptions {
            nsim,
            methods: vec![Method::IiwNid, Method::Iiw, Method::IiwXIpw],
            trims: vec![100.0],
            bootstrap: None,
        };
        let summary = run_mc(&config, &spec, &opts).unwrap();
        for c in &summary.cells {
            eprintln!(
                "n={n:4} {:>8}: bias {:+.4} (mcse {:.4}) ese {:.3} fail {}",
                c.method.label(),
                c.bias,
                c.mcse_bias,
                c.emp_se,
                c.n_failed
            );
        }
    }
    eprintln!("total {:?}", t0.elapsed());
}
