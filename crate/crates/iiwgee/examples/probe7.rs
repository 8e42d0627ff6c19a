//! Scratch: mean-zero estimating function and degenerate Poisson checks.

use iiwgee::dropout::survival_given_no_visit;
use iiwgee::linalg::dot;
use iiwgee::model::FeatureSpec;
use iiwgee::sim::*;
use iiwgee::wgee::OutcomeBasis;

fn main() {
    mean_zero();
    degenerate();
}

fn mean_zero() {
    let nrep = 2000u32;
    let n = 200;
    let config = ScenarioConfig::scenario1(n, 0.5, EtaSpec::TargetDropout(0.2), 2024);
    let eta0 = resolve_eta0(&config).unwrap();
    let mut resolved = config.clone();
    resolved.eta = EtaSpec::Eta0(eta0);
    let basis = OutcomeBasis::scenario1();
    let ispec = FeatureSpec::lagged_log_outcome(0);
    let p = basis.dim();

    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(nrep as usize);
    for rep in 0..nrep {
        let panel = generate_panel_with_eta0(&resolved, eta0, rep).unwrap();
        let mut u = vec![0.0; p];
        for s in &panel.subjects {
            for (k, (&t, &y)) in s.visit_times.iter().zip(&s.outcomes).enumerate() {
                let x = basis.row(t);
                let resid = y - mean_trajectory(resolved.scenario, &resolved.beta0, t);
                let feats = ispec.history(s, t).unwrap();
                let intensity_factor = (resolved.gamma0 * feats.values[0]).exp();
                let survival = match k.checked_sub(1) {
                    None => 1.0,
                    Some(prev) => {
                        let odds = (eta0 + resolved.eta1 * s.outcomes[prev]).exp();
                        survival_given_no_visit(
                            t,
                            s.visit_times[prev],
                            intensity_factor,
                            resolved.lambda0,
                            odds,
                            1e-300,
                        )
                        .unwrap()
                    }
                };
                let rho = intensity_factor * survival;
                for (uj, xj) in u.iter_mut().zip(&x) {
                    *uj += xj * resid / rho;
                }
            }
        }
        for uj in &mut u {
            *uj /= n as f64;
        }
        draws.push(u);
    }
    for j in 0..p {
        let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64)
            .sqrt();
        let mcse = sd / (col.len() as f64).sqrt();
        eprintln!(
            "U[{j}]/n: mean {m:+.5e}, mcse {mcse:.3e}, |mean|/mcse = {:.2}",
            m.abs() / mcse
        );
    }
}

fn degenerate() {
    // Y constant at e-1 so the log feature is exactly 1 and the rate is
    // exp(gamma0) everywhere; no dropout, effectively no censoring.
    let e = std::f64::consts::E;
    let mut config = ScenarioConfig::scenario1(10_000, 0.0, EtaSpec::Eta0(-40.0), 7);
    config.beta0 = vec![e - 1.0, 0.0];
    config.sigma_phi = 0.0;
    config.sigma_eps = 0.0;
    config.c = 1e9;
    let panel = generate_panel(&config).unwrap();
    let mean_visits = panel.n_visits() as f64 / panel.n_subjects() as f64;
    let expect = 16.0 * (-0.336f64).exp();
    let se = (expect / 10_000.0f64).sqrt();
    eprintln!(
        "degenerate: mean visits {mean_visits:.4} vs {expect:.4} ({:+.2} SE)",
        (mean_visits - expect) / se
    );
    let _ = dot(&[1.0], &[1.0]);
}
