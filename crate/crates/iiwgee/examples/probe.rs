//! Scratch experiment: compare MC results against the reference table values.

use iiwgee::sim::*;
use iiwgee::study::*;
use iiwgee::weights::Method;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("all");
    let nsim: usize = args
        .get(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300);

    let t0 = std::time::Instant::now();
    if which == "all" || which == "s1" {
        for (target, eta1, label) in [
            (0.2, 0.5, "S1 20%/0.5"),
            (0.6, 1.0, "S1 60%/1.0"),
            (0.8, 1.5, "S1 80%/1.5"),
        ] {
            run_one(
                ScenarioConfig::scenario1(200, eta1, EtaSpec::TargetDropout(target), 777),
                Scenario::S1,
                label,
                nsim,
            );
        }
    }
    if which == "all" || which == "s2" {
        run_one(
            ScenarioConfig::scenario2(200, -0.5, EtaSpec::TargetDropout(0.2), 777),
            Scenario::S2,
            "S2 20%/-0.5",
            nsim,
        );
    }
    if which == "gamma" {
        gamma_check();
    }
    if which == "fresh" {
        for (target, eta1, label) in [
            (0.2, 0.5, "S1 20%/0.5 FRESH"),
            (0.6, 1.0, "S1 60%/1.0 FRESH"),
            (0.8, 1.5, "S1 80%/1.5 FRESH"),
        ] {
            let mut c = ScenarioConfig::scenario1(200, eta1, EtaSpec::TargetDropout(target), 777);
            c.noise = OutcomeNoise::FreshAtGrid;
            run_one(c, Scenario::S1, label, nsim);
        }
        let mut c = ScenarioConfig::scenario2(200, -0.5, EtaSpec::TargetDropout(0.2), 777);
        c.noise = OutcomeNoise::FreshAtGrid;
        run_one(c, Scenario::S2, "S2 20%/-0.5 FRESH", nsim);
    }
    eprintln!("total {:?}", t0.elapsed());
}

fn run_one(config: ScenarioConfig, scenario: Scenario, label: &str, nsim: usize) {
    let t = std::time::Instant::now();
    let eta0 = resolve_eta0(&config).unwrap();
    eprintln!("[{label}] eta0 = {eta0:.4}  (calibrated in {:?})", t.elapsed());

    // Panel shape diagnostics on one replicate.
    let mut resolved = config.clone();
    resolved.eta = EtaSpec::Eta0(eta0);
    let panel = generate_panel(&resolved).unwrap();
    let visits = panel.n_visits() as f64 / panel.n_subjects() as f64;
    let prop = informative_dropout_proportion(&panel);
    eprintln!("[{label}] mean visits/subject = {visits:.2}, dropout prop = {prop:.3}");

    let spec = AnalysisSpec::for_scenario(scenario);
    let opts = McOptions {
        nsim,
        methods: vec![Method::IiwNid, Method::Iiw, Method::IiwXIpw],
        trims: vec![100.0],
        bootstrap: None,
    };
    let t = std::time::Instant::now();
    let summary = run_mc(&resolved, &spec, &opts).unwrap();
    for cell in &summary.cells {
        eprintln!(
            "[{label}] {:>8}: bias {:+.3} (mcse {:.3})  ese {:.3}  nse {:.3}  cp {:.3}  fail {}",
            cell.method.label(),
            cell.bias,
            cell.mcse_bias,
            cell.emp_se,
            cell.naive_se_mean,
            cell.coverage,
            cell.n_failed
        );
    }
    eprintln!("[{label}] mc in {:?}", t.elapsed());
}

fn gamma_check() {
    let config = ScenarioConfig::scenario1(2000, 0.5, EtaSpec::TargetDropout(0.2), 777);
    let eta0 = resolve_eta0(&config).unwrap();
    let mut resolved = config;
    resolved.eta = EtaSpec::Eta0(eta0);
    let spec = AnalysisSpec::for_scenario(Scenario::S1);
    let mut gs = Vec::new();
    let mut es = Vec::new();
    for rep in 0..20u32 {
        let panel = generate_panel_with_eta0(&resolved, eta0, rep).unwrap();
        let fit = iiwgee::intensity::fit_intensity(
            &panel,
            &spec.intensity_features,
            iiwgee::intensity::RiskMode::RespectDropout,
        )
        .unwrap();
        gs.push(fit.gamma_hat[0]);
        es.push(fit.constant_rate);
    }
    let mean = gs.iter().sum::<f64>() / gs.len() as f64;
    let sd = (gs.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (gs.len() - 1) as f64).sqrt();
    let lmean = es.iter().sum::<f64>() / es.len() as f64;
    eprintln!("gamma_hat over 20 reps at n=2000: mean {mean:.4}, sd {sd:.4} (target -0.336)");
    eprintln!("constant rate: mean {lmean:.4} (target 1.0)");
}
