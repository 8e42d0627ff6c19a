//! Scratch: trace a stalled intensity fit.

use iiwgee::intensity::{log_partial_likelihood, observed_information, RiskMode};
use iiwgee::sim::*;
use iiwgee::study::*;

fn main() {
    let config = ScenarioConfig::scenario1(200, 1.0, EtaSpec::TargetDropout(0.6), 777);
    let eta0 = resolve_eta0(&config).unwrap();
    let mut resolved = config.clone();
    resolved.eta = EtaSpec::Eta0(eta0);
    let spec = AnalysisSpec::for_scenario(Scenario::S1);
    let panel = generate_panel_with_eta0(&resolved, eta0, 13).unwrap();

    // Manual Newton trace around the stall.
    let mut gamma = 0.0f64;
    for it in 0..30 {
        let (ll, score) =
            log_partial_likelihood(&panel, &[gamma], &spec.intensity_features, RiskMode::IgnoreDropout)
                .unwrap();
        let info = observed_information(&panel, &[gamma], &spec.intensity_features, RiskMode::IgnoreDropout)
            .unwrap();
        eprintln!(
            "it {it:2}  gamma {gamma:+.10}  ll {ll:.10}  score {:+.6e}  info {:.6e}",
            score[0],
            info.get(0, 0)
        );
        gamma += score[0] / info.get(0, 0);
        if score[0].abs() < 1e-12 {
            break;
        }
    }
}
