//! Scratch: failure diagnostics and NID-variant gamma measurements.

use iiwgee::intensity::{fit_intensity, RiskMode};
use iiwgee::sim::*;
use iiwgee::study::*;
use iiwgee::weights::Method;

fn main() {
    let config = ScenarioConfig::scenario1(200, 1.0, EtaSpec::TargetDropout(0.6), 777);
    let eta0 = resolve_eta0(&config).unwrap();
    let mut resolved = config.clone();
    resolved.eta = EtaSpec::Eta0(eta0);
    let spec = AnalysisSpec::for_scenario(Scenario::S1);

    // Failure reasons over 100 replicates.
    let mut reasons: std::collections::HashMap<String, usize> = Default::default();
    for rep in 0..100u32 {
        let panel = generate_panel_with_eta0(&resolved, eta0, rep).unwrap();
        for r in analyze_all(
            &panel,
            &spec,
            &[Method::IiwNid, Method::Iiw, Method::IiwXIpw],
            &[100.0],
        ) {
            if let Some(e) = &r.error {
                *reasons.entry(format!("{} err: {e}", r.method)).or_default() += 1;
            } else if !r.converged {
                *reasons
                    .entry(format!("{} non-converged", r.method))
                    .or_default() += 1;
            }
        }
    }
    for (k, v) in &reasons {
        eprintln!("{v:4}  {k}");
    }

    // Detailed look at one non-converged intensity fit.
    for rep in 0..40u32 {
        let panel = generate_panel_with_eta0(&resolved, eta0, rep).unwrap();
        let fit = fit_intensity(&panel, &spec.intensity_features, RiskMode::IgnoreDropout);
        match fit {
            Ok(f) if !f.converged => {
                eprintln!(
                    "rep {rep}: NID gamma {:.4}, iters {}, score {:.3e}",
                    f.gamma_hat[0], f.iterations, f.final_score_norm
                );
            }
            Ok(f) => {
                if rep < 5 {
                    eprintln!(
                        "rep {rep}: NID gamma {:.4} ok iters {} | respect gamma {:.4}",
                        f.gamma_hat[0],
                        f.iterations,
                        fit_intensity(&panel, &spec.intensity_features, RiskMode::RespectDropout)
                            .unwrap()
                            .gamma_hat[0]
                    );
                }
            }
            Err(e) => eprintln!("rep {rep}: NID error {e}"),
        }
    }
}
