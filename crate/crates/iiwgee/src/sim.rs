//! Scenario generators for the simulation study.
//!
//! Subjects carry a random intercept; visits arrive from an outcome-dependent
//! proportional intensity; each visit triggers informative dropout with a
//! logistic probability in the current outcome; censoring is uniform on
//! `(0, c·tau)`. Visit candidates are generated on a fixed time grid, emitting
//! a visit at each grid point with probability `λ(t)·dt` (an error is raised
//! if that product exceeds 0.1, since the Bernoulli approximation would then
//! be too coarse).
//!
//! Two outcome-noise conventions are supported. In the default
//! `FrozenBetweenVisits` convention the measurement noise is realized at
//! measurement times only (baseline and visits) and the visit hazard between
//! visits uses the last measured outcome, so the fitted intensity model and
//! the weight formulas are exact descriptions of the generator. The
//! `FreshAtGrid` convention redraws the noise at every grid point and feeds
//! the instantaneous outcome into the hazard.
//!
//! Reproducibility: every subject draws from its own counter-derived stream of
//! the master seed, so panels are bit-identical for a given (seed, config)
//! regardless of how generation is scheduled across workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::expit;
use crate::model::{Panel, PanelSchema, SubjectRecord};

/// Simulation scenario: which mean-trajectory shape generates the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
}

/// Either a fixed dropout-model intercept or a target dropout proportion to
/// calibrate it to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSpec {
    Eta0(f64),
    TargetDropout(f64),
}

/// Where outcome noise is realized during generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeNoise {
    #[default]
    FrozenBetweenVisits,
    FreshAtGrid,
}

/// Full generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub gamma0: f64,
    pub beta0: Vec<f64>,
    pub tau: f64,
    /// Censoring scale: `G ~ Uniform(0, c·tau)`.
    pub c: f64,
    pub lambda0: f64,
    pub sigma_phi: f64,
    pub sigma_eps: f64,
    pub eta1: f64,
    pub eta: EtaSpec,
    pub grid_dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub noise: OutcomeNoise,
}

impl ScenarioConfig {
    /// Scenario 1 at the paper's parameter values.
    pub fn scenario1(n: usize, eta1: f64, eta: EtaSpec, seed: u64) -> Self {
        Self {
            scenario: Scenario::S1,
            n,
            gamma0: -0.336,
            beta0: vec![16.4, -3.1],
            tau: 16.0,
            c: 2.0,
            lambda0: 1.0,
            sigma_phi: 1.0,
            sigma_eps: 2.0,
            eta1,
            eta,
            grid_dt: 0.01,
            seed,
            noise: OutcomeNoise::FrozenBetweenVisits,
        }
    }

    /// Scenario 2 at the paper's parameter values.
    pub fn scenario2(n: usize, eta1: f64, eta: EtaSpec, seed: u64) -> Self {
        Self {
            scenario: Scenario::S2,
            n,
            gamma0: 0.5,
            beta0: vec![3.3, 4.0, 10.5],
            tau: 3.5,
            c: 3.0,
            lambda0: 1.0,
            sigma_phi: 1.0,
            sigma_eps: 2.0,
            eta1,
            eta,
            grid_dt: 0.01,
            seed,
            noise: OutcomeNoise::FrozenBetweenVisits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("n must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Invalid("tau must be positive".into()));
        }
        if !(self.c > 0.0) {
            return Err(Error::Invalid("c must be positive".into()));
        }
        if !(self.lambda0 > 0.0) {
            return Err(Error::Invalid("lambda0 must be positive".into()));
        }
        if !(self.sigma_phi >= 0.0 && self.sigma_eps >= 0.0) {
            return Err(Error::Invalid("sigmas must be non-negative".into()));
        }
        if !(self.grid_dt > 0.0 && self.grid_dt <= self.tau / 100.0) {
            return Err(Error::Invalid(format!(
                "grid_dt must lie in (0, tau/100] = (0, {}]",
                self.tau / 100.0
            )));
        }
        let want = match self.scenario {
            Scenario::S1 => 2,
            Scenario::S2 => 3,
        };
        if self.beta0.len() != want {
            return Err(Error::Invalid(format!(
                "beta0 must have {want} entries for {:?}",
                self.scenario
            )));
        }
        if let EtaSpec::TargetDropout(p) = self.eta {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Invalid("target_dropout must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Marginal mean trajectory of the outcome.
pub fn mean_trajectory(scenario: Scenario, beta0: &[f64], t: f64) -> f64 {
    match scenario {
        Scenario::S1 => beta0[0] + beta0[1] * (1.0 + t).ln(),
        Scenario::S2 => {
            let inv = (1.0 + t).powi(-2);
            beta0[0] + beta0[1] * inv + beta0[2] * inv * (1.0 + t).ln()
        }
    }
}

/// Purpose tag entering the per-task stream id, so the generator, bootstrap
/// and calibration never share a stream.
#[derive(Debug, Clone, Copy)]
pub enum StreamPurpose {
    Generate = 1,
    Bootstrap = 2,
}

/// Counter-based splitting of a master seed into independent ChaCha streams.
#[derive(Debug, Clone, Copy)]
pub struct SeedScheme {
    pub master: u64,
}

impl SeedScheme {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    /// Stream for `(purpose, replicate, unit)`; `unit` is a subject index for
    /// generation or a resample index for the bootstrap.
    pub fn rng(&self, purpose: StreamPurpose, replicate: u32, unit: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(
            ((purpose as u64) << 56) | (u64::from(replicate) << 32) | u64::from(unit),
        );
        rng
    }
}

/// Pre-evaluated time grid for one configuration.
struct Grid {
    times: Vec<f64>,
    means: Vec<f64>,
    dt: f64,
}

impl Grid {
    fn new(config: &ScenarioConfig) -> Self {
        let n_steps = (config.tau / config.grid_dt + 1e-9).floor() as usize;
        let times: Vec<f64> = (1..=n_steps).map(|k| k as f64 * config.grid_dt).collect();
        let means = times
            .iter()
            .map(|&t| mean_trajectory(config.scenario, &config.beta0, t))
            .collect();
        Self {
            times,
            means,
            dt: config.grid_dt,
        }
    }
}

#[inline]
fn log_outcome_floor(y: f64) -> f64 {
    (1.0 + y).max(0.01).ln()
}

fn generate_subject_on(
    config: &ScenarioConfig,
    eta0: f64,
    grid: &Grid,
    id: String,
    rng: &mut ChaCha8Rng,
) -> Result<SubjectRecord> {
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let b = config.sigma_phi * normal(rng);
    let censor = rng.gen::<f64>() * config.c * config.tau;
    // Baseline outcome measurement at t = 0; drives the hazard before the
    // first visit under the frozen-noise convention.
    let mean0 = mean_trajectory(config.scenario, &config.beta0, 0.0);
    let y0 = mean0 + b + config.sigma_eps * normal(rng);

    let mut visit_times = Vec::new();
    let mut outcomes = Vec::new();
    let mut dropout_time = None;
    let mut log_rate = config.gamma0 * log_outcome_floor(y0) + config.lambda0.ln();

    for (k, &t) in grid.times.iter().enumerate() {
        if t >= censor {
            break;
        }
        let (lambda, fresh_y) = match config.noise {
            OutcomeNoise::FrozenBetweenVisits => (log_rate.exp(), None),
            OutcomeNoise::FreshAtGrid => {
                let y = grid.means[k] + b + config.sigma_eps * normal(rng);
                (
                    (config.gamma0 * log_outcome_floor(y) + config.lambda0.ln()).exp(),
                    Some(y),
                )
            }
        };
        let lambda_dt = lambda * grid.dt;
        if lambda_dt > 0.1 {
            return Err(Error::GridTooCoarse { lambda_dt, t });
        }
        if rng.gen::<f64>() < lambda_dt {
            let y = match fresh_y {
                Some(y) => y,
                None => grid.means[k] + b + config.sigma_eps * normal(rng),
            };
            visit_times.push(t);
            outcomes.push(y);
            let pi = expit(eta0 + config.eta1 * y);
            if rng.gen::<f64>() < pi {
                dropout_time = Some(t);
                break;
            }
            if config.noise == OutcomeNoise::FrozenBetweenVisits {
                log_rate = config.gamma0 * log_outcome_floor(y) + config.lambda0.ln();
            }
        }
    }

    let censor_time = if dropout_time.is_none() && censor < config.tau {
        Some(censor)
    } else {
        // Follow-up ended by dropout (censoring never observed) or ran to tau.
        None
    };
    Ok(SubjectRecord {
        id,
        visit_times,
        outcomes,
        baseline: vec![y0],
        aux: vec![],
        dropout_time,
        censor_time,
        competing_time: None,
    })
}

/// Generates one subject from its own seed stream.
pub fn generate_subject(
    config: &ScenarioConfig,
    eta0: f64,
    replicate: u32,
    subject_idx: u32,
) -> Result<SubjectRecord> {
    let grid = Grid::new(config);
    let mut rng =
        SeedScheme::new(config.seed).rng(StreamPurpose::Generate, replicate, subject_idx);
    generate_subject_on(config, eta0, &grid, subject_idx.to_string(), &mut rng)
}

/// Generates a full panel for Monte Carlo replicate `replicate`, resolving the
/// dropout intercept first if a target proportion was requested.
pub fn generate_panel_replicate(config: &ScenarioConfig, replicate: u32) -> Result<Panel> {
    config.validate()?;
    let eta0 = resolve_eta0(config)?;
    generate_panel_with_eta0(config, eta0, replicate)
}

/// Generates the panel for replicate 0.
pub fn generate_panel(config: &ScenarioConfig) -> Result<Panel> {
    generate_panel_replicate(config, 0)
}

/// Generates a panel at an already-resolved dropout intercept. Monte Carlo
/// drivers calibrate once and then call this per replicate.
pub fn generate_panel_with_eta0(config: &ScenarioConfig, eta0: f64, replicate: u32) -> Result<Panel> {
    let grid = Grid::new(config);
    let scheme = SeedScheme::new(config.seed);
    let subjects: Result<Vec<SubjectRecord>> = (0..config.n as u32)
        .into_par_iter()
        .map(|i| {
            let mut rng = scheme.rng(StreamPurpose::Generate, replicate, i);
            generate_subject_on(config, eta0, &grid, i.to_string(), &mut rng)
        })
        .collect();
    Ok(Panel {
        subjects: subjects?,
        tau: config.tau,
        schema: PanelSchema {
            baseline: vec!["y0".into()],
            aux: vec![],
        },
    })
}

/// Fraction of subjects who informatively dropped out.
pub fn informative_dropout_proportion(panel: &Panel) -> f64 {
    let d = panel
        .subjects
        .iter()
        .filter(|s| s.dropout_time.is_some())
        .count();
    d as f64 / panel.subjects.len() as f64
}

/// Fixed master seed for the calibration pilot, so a configuration always
/// calibrates to the same intercept no matter which run seed is in use.
pub const CALIBRATION_SEED: u64 = 0x5eed_ca1b_0000_0001;
const CALIBRATION_PILOT_N: usize = 50_000;
const CALIBRATION_TOL: f64 = 0.005;
const ETA0_BOUNDS: (f64, f64) = (-20.0, 20.0);

/// Resolves the dropout intercept: either the configured value, or bisection
/// on a 50,000-subject pilot until the informative-dropout proportion is
/// within half a percentage point of the target.
pub fn resolve_eta0(config: &ScenarioConfig) -> Result<f64> {
    match config.eta {
        EtaSpec::Eta0(v) => Ok(v),
        EtaSpec::TargetDropout(target) => calibrate_eta0(config, target),
    }
}

/// Bisection calibration of `eta0` over `[-20, 20]`. Deterministic: the pilot
/// uses a fixed calibration seed and per-subject streams.
pub fn calibrate_eta0(config: &ScenarioConfig, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Invalid("target_dropout must lie in (0, 1)".into()));
    }
    let mut pilot = config.clone();
    pilot.n = CALIBRATION_PILOT_N;
    pilot.seed = CALIBRATION_SEED;

    let measure = |eta0: f64| -> Result<f64> {
        let panel = generate_panel_with_eta0(&pilot, eta0, 0)?;
        Ok(informative_dropout_proportion(&panel))
    };

    let (mut lo, mut hi) = ETA0_BOUNDS;
    let p_lo = measure(lo)?;
    if (p_lo - target).abs() < CALIBRATION_TOL {
        return Ok(lo);
    }
    if p_lo > target {
        return Err(Error::Calibration(format!(
            "dropout proportion {p_lo:.4} at eta0 = {lo} already exceeds target {target}; \
             target unreachable within bounds"
        )));
    }
    let p_hi = measure(hi)?;
    if (p_hi - target).abs() < CALIBRATION_TOL {
        return Ok(hi);
    }
    if p_hi < target {
        return Err(Error::Calibration(format!(
            "dropout proportion {p_hi:.4} at eta0 = {hi} is below target {target}; \
             target unreachable within bounds"
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let p = measure(mid)?;
        if (p - target).abs() < CALIBRATION_TOL {
            return Ok(mid);
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    Err(Error::Calibration(format!(
        "bisection did not reach target {target} within tolerance {CALIBRATION_TOL}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_panel;

    #[test]
    fn mean_trajectory_values() {
        assert!((mean_trajectory(Scenario::S1, &[16.4, -3.1], 0.0) - 16.4).abs() < 1e-15);
        assert!((mean_trajectory(Scenario::S2, &[3.3, 4.0, 10.5], 0.0) - 7.3).abs() < 1e-15);
        // beta1 = 0 makes Scenario 1 constant.
        for t in [0.0, 3.0, 16.0] {
            assert!((mean_trajectory(Scenario::S1, &[5.0, 0.0], t) - 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn generated_panels_validate_and_reproduce() {
        for noise in [OutcomeNoise::FrozenBetweenVisits, OutcomeNoise::FreshAtGrid] {
            let mut config =
                ScenarioConfig::scenario1(150, 0.5, EtaSpec::Eta0(-8.0), 20260809);
            config.noise = noise;
            let a = generate_panel(&config).unwrap();
            let b = generate_panel(&config).unwrap();
            assert!(validate_panel(&a).is_empty());
            assert_eq!(
                serde_json::to_string(&a).unwrap(),
                serde_json::to_string(&b).unwrap(),
                "identical (seed, config) must give bit-identical panels"
            );
            assert!(a.n_visits() > 100);
        }
    }

    #[test]
    fn different_replicates_differ() {
        let config = ScenarioConfig::scenario1(50, 0.5, EtaSpec::Eta0(-8.0), 1);
        let a = generate_panel_replicate(&config, 0).unwrap();
        let b = generate_panel_replicate(&config, 1).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn grid_too_coarse_is_detected() {
        let mut config = ScenarioConfig::scenario1(5, 0.5, EtaSpec::Eta0(-8.0), 7);
        config.lambda0 = 50.0;
        match generate_panel(&config) {
            Err(Error::GridTooCoarse { lambda_dt, .. }) => assert!(lambda_dt > 0.1),
            other => panic!("expected grid error, got {other:?}"),
        }
    }

    #[test]
    fn censoring_proportion_matches_uniform() {
        // With dropout switched off (eta0 very negative), censor times are
        // observed for everyone with G < tau; P(G < tau) = 1/c = 1/2.
        let config = ScenarioConfig::scenario1(4000, 0.5, EtaSpec::Eta0(-40.0), 99);
        let panel = generate_panel(&config).unwrap();
        let censored = panel
            .subjects
            .iter()
            .filter(|s| s.censor_time.is_some())
            .count() as f64;
        let p = censored / 4000.0;
        let se = (0.5 * 0.5 / 4000.0f64).sqrt();
        assert!((p - 0.5).abs() < 4.0 * se, "p = {p}");
    }

    #[test]
    fn per_visit_dropout_rate_matches_eta0_when_flat() {
        // eta1 = 0: every visit drops with probability expit(eta0).
        let target = 0.2f64;
        let eta0 = (target / (1.0 - target)).ln();
        let config = ScenarioConfig::scenario1(3000, 0.0, EtaSpec::Eta0(eta0), 11);
        let panel = generate_panel(&config).unwrap();
        let visits = panel.n_visits() as f64;
        let dropouts = panel
            .subjects
            .iter()
            .filter(|s| s.dropout_time.is_some())
            .count() as f64;
        let rate = dropouts / visits;
        let se = (target * (1.0 - target) / visits).sqrt();
        assert!(
            (rate - target).abs() < 4.0 * se,
            "per-visit dropout rate {rate} vs {target}"
        );
    }

    #[test]
    fn unreachable_target_errors() {
        // Enormous informativeness: even eta0 = -20 drops essentially every
        // subject at the first visit, so a 20% target is unreachable.
        let mut config = ScenarioConfig::scenario1(100, 10.0, EtaSpec::TargetDropout(0.2), 3);
        config.grid_dt = 0.05;
        match calibrate_eta0(&config, 0.2) {
            Err(Error::Calibration(msg)) => assert!(msg.contains("unreachable")),
            other => panic!("expected calibration error, got {other:?}"),
        }
    }

    #[test]
    fn visits_never_exceed_follow_up() {
        let config = ScenarioConfig::scenario1(300, 1.0, EtaSpec::Eta0(-6.0), 4);
        let panel = generate_panel(&config).unwrap();
        for s in &panel.subjects {
            let end = s.follow_up_end(panel.tau);
            for &t in &s.visit_times {
                assert!(t <= end);
            }
            if let Some(d) = s.dropout_time {
                assert_eq!(*s.visit_times.last().unwrap(), d);
                assert!(s.censor_time.is_none());
            }
        }
    }
}
