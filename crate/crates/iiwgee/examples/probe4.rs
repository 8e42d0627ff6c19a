//! Scratch: does excluding the dropout-decision visit reproduce the
//! comparator biases? Also: unweighted-GEE benchmark.

use iiwgee::model::Panel;
use iiwgee::sim::*;
use iiwgee::study::*;
use iiwgee::weights::{Method, WeightEntry, WeightSet};
use iiwgee::wgee::{auc, fit_wgee, Link};

fn drop_dropout_visit(panel: &Panel) -> Panel {
    let mut p = panel.clone();
    for s in &mut p.subjects {
        if let Some(d) = s.dropout_time {
            if s.visit_times.last() == Some(&d) {
                s.visit_times.pop();
                s.outcomes.pop();
            }
        }
    }
    p
}

fn unit_weights(panel: &Panel) -> WeightSet {
    let mut entries = Vec::new();
    for (si, s) in panel.subjects.iter().enumerate() {
        for (k, &t) in s.visit_times.iter().enumerate() {
            entries.push(WeightEntry {
                subject_idx: si,
                visit_idx: k,
                time: t,
                rho: 1.0,
                weight: 1.0,
            });
        }
    }
    WeightSet {
        entries,
        method: Method::Iiw,
        trim_percentile: None,
    }
}

fn main() {
    let nsim: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300);
    for (scen, target, eta1, label) in [
        (Scenario::S1, 0.2, 0.5, "S1 20%/0.5"),
        (Scenario::S1, 0.6, 1.0, "S1 60%/1.0"),
        (Scenario::S1, 0.8, 1.5, "S1 80%/1.5"),
        (Scenario::S2, 0.2, -0.5, "S2 20%/-0.5"),
    ] {
        let config = match scen {
            Scenario::S1 => ScenarioConfig::scenario1(200, eta1, EtaSpec::TargetDropout(target), 777),
            Scenario::S2 => ScenarioConfig::scenario2(200, eta1, EtaSpec::TargetDropout(target), 777),
        };
        let eta0 = resolve_eta0(&config).unwrap();
        let mut resolved = config.clone();
        resolved.eta = EtaSpec::Eta0(eta0);
        let spec = AnalysisSpec::for_scenario(scen);
        let target_auc = true_auc(scen, &resolved.beta0, resolved.tau);

        // Per-variant AUC draws.
        let mut unweighted = Vec::new();
        let mut nid_excl = Vec::new();
        let mut iiw_excl = Vec::new();
        let mut ipw_excl = Vec::new();
        for rep in 0..nsim as u32 {
            let panel = generate_panel_with_eta0(&resolved, eta0, rep).unwrap();

            // Unweighted GEE on the full panel.
            let w = unit_weights(&panel);
            if let Ok(fit) = fit_wgee(&panel, &w, &spec.basis, Link::Identity) {
                unweighted.push(auc(&fit, panel.tau).value);
            }

            // Exclusion variant: dropout visit removed from the analysis set.
            let excl = drop_dropout_visit(&panel);
            let res = analyze_all(
                &excl,
                &spec,
                &[Method::IiwNid, Method::Iiw],
                &[100.0],
            );
            if let Some(a) = &res[0].auc {
                if res[0].converged {
                    nid_excl.push(a.value);
                }
            }
            if let Some(a) = &res[1].auc {
                if res[1].converged {
                    iiw_excl.push(a.value);
                }
            }
            // IIWxIPW with the dropout model fit on the FULL panel (labels
            // need the dropout visit) but weights/GEE on the excluded panel.
            let dfit = iiwgee::dropout::fit_dropout(&panel, &spec.dropout_features);
            let ifit = iiwgee::intensity::fit_intensity(
                &excl,
                &spec.intensity_features,
                iiwgee::intensity::RiskMode::RespectDropout,
            );
            if let (Ok(dfit), Ok(ifit)) = (dfit, ifit) {
                if let Ok(ws) = iiwgee::weights::compose_weights(
                    &excl,
                    &ifit,
                    &spec.intensity_features,
                    Some(&dfit),
                    &spec.dropout_features,
                    Method::IiwXIpw,
                    false,
                ) {
                    if let Ok(fit) = fit_wgee(&excl, &ws, &spec.basis, Link::Identity) {
                        ipw_excl.push(auc(&fit, panel.tau).value);
                    }
                }
            }
        }
        let stat = |v: &[f64]| -> (f64, f64) {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            (m - target_auc, sd)
        };
        let (bu, su) = stat(&unweighted);
        let (bn, sn) = stat(&nid_excl);
        let (bi, si) = stat(&iiw_excl);
        let (bp, sp) = stat(&ipw_excl);
        eprintln!("[{label}] unweighted:     bias {bu:+.3} ese {su:.3}  (n={})", unweighted.len());
        eprintln!("[{label}] NID  excl-visit: bias {bn:+.3} ese {sn:.3}  (n={})", nid_excl.len());
        eprintln!("[{label}] IIW  excl-visit: bias {bi:+.3} ese {si:.3}  (n={})", iiw_excl.len());
        eprintln!("[{label}] xIPW excl-visit: bias {bp:+.3} ese {sp:.3}  (n={})", ipw_excl.len());
    }
}
