//! Config-driven command implementations behind the `iiwgee` binary.
//!
//! Each subcommand reads one TOML config file (unknown keys are rejected), an
//! optional `--threads` worker-pool size and an optional `--output-dir`
//! override. Exit codes: 0 on success, 1 on computation failure, 2 on config
//! or schema problems. Every output file embeds the config hash and master
//! seed; results files are written atomically (write-then-rename).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::model::io::{read_panel, write_atomic, write_panel, FileStamp};
use crate::model::{validate_panel, Fallback, Feature, FeatureSource, FeatureSpec, Panel, Transform};
use crate::sim::{
    generate_panel, resolve_eta0, EtaSpec, OutcomeNoise, Scenario, ScenarioConfig,
};
use crate::study::{
    analyze_all, run_bootstrap, run_mc, AnalysisSpec, McBootstrap, McOptions, MethodResult,
};
use crate::weights::Method;
use crate::wgee::{BasisFn, OutcomeBasis};

/// Failure carrying the process exit code: 1 for computation errors, 2 for
/// config/validation errors.
#[derive(Debug)]
pub struct CliFailure {
    pub code: i32,
    pub message: String,
}

type CliResult<T> = std::result::Result<T, CliFailure>;

fn config_err(msg: impl Into<String>) -> CliFailure {
    CliFailure {
        code: 2,
        message: msg.into(),
    }
}

fn run_err(e: impl std::fmt::Display) -> CliFailure {
    CliFailure {
        code: 1,
        message: e.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    kind: String,
    n: usize,
    eta1: f64,
    #[serde(default)]
    eta0: Option<f64>,
    #[serde(default)]
    target_dropout: Option<f64>,
    seed: u64,
    #[serde(default)]
    gamma0: Option<f64>,
    #[serde(default)]
    beta0: Option<Vec<f64>>,
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default)]
    c: Option<f64>,
    #[serde(default)]
    lambda0: Option<f64>,
    #[serde(default)]
    sigma_phi: Option<f64>,
    #[serde(default)]
    sigma_eps: Option<f64>,
    #[serde(default)]
    grid_dt: Option<f64>,
    #[serde(default)]
    noise: Option<String>,
}

impl ScenarioSection {
    fn build(&self) -> CliResult<ScenarioConfig> {
        let eta = match (self.eta0, self.target_dropout) {
            (Some(v), None) => EtaSpec::Eta0(v),
            (None, Some(p)) => EtaSpec::TargetDropout(p),
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "scenario: set exactly one of eta0 and target_dropout, not both",
                ))
            }
            (None, None) => {
                return Err(config_err(
                    "scenario: one of eta0 or target_dropout is required",
                ))
            }
        };
        let mut config = match self.kind.to_ascii_lowercase().as_str() {
            "s1" => ScenarioConfig::scenario1(self.n, self.eta1, eta, self.seed),
            "s2" => ScenarioConfig::scenario2(self.n, self.eta1, eta, self.seed),
            other => return Err(config_err(format!("unknown scenario kind {other:?}"))),
        };
        if let Some(v) = self.gamma0 {
            config.gamma0 = v;
        }
        if let Some(v) = &self.beta0 {
            config.beta0 = v.clone();
        }
        if let Some(v) = self.tau {
            config.tau = v;
        }
        if let Some(v) = self.c {
            config.c = v;
        }
        if let Some(v) = self.lambda0 {
            config.lambda0 = v;
        }
        if let Some(v) = self.sigma_phi {
            config.sigma_phi = v;
        }
        if let Some(v) = self.sigma_eps {
            config.sigma_eps = v;
        }
        if let Some(v) = self.grid_dt {
            config.grid_dt = v;
        }
        if let Some(v) = &self.noise {
            config.noise = match v.as_str() {
                "frozen_between_visits" => OutcomeNoise::FrozenBetweenVisits,
                "fresh_at_grid" => OutcomeNoise::FreshAtGrid,
                other => return Err(config_err(format!("unknown noise convention {other:?}"))),
            };
        }
        config.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(config)
    }

    fn scenario(&self) -> CliResult<Scenario> {
        match self.kind.to_ascii_lowercase().as_str() {
            "s1" => Ok(Scenario::S1),
            "s2" => Ok(Scenario::S2),
            other => Err(config_err(format!("unknown scenario kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: PathBuf,
    #[serde(default)]
    prefix: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputSection {
    visits: PathBuf,
    events: PathBuf,
    tau: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FeatureSpecConfig {
    Preset(String),
    Custom(Vec<FeatureConfig>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureConfig {
    source: String,
    #[serde(default)]
    column: Option<usize>,
    #[serde(default)]
    transform: Option<String>,
    #[serde(default)]
    floor: Option<f64>,
    #[serde(default)]
    fallback_baseline: Option<usize>,
    #[serde(default)]
    fallback_value: Option<f64>,
}

impl FeatureConfig {
    fn build(&self) -> CliResult<Feature> {
        let fallback = match (self.fallback_baseline, self.fallback_value) {
            (Some(j), None) => Fallback::Baseline(j),
            (None, Some(v)) => Fallback::Value(v),
            (None, None) => Fallback::Error,
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "feature: set at most one of fallback_baseline and fallback_value",
                ))
            }
        };
        let col = || {
            self.column
                .ok_or_else(|| config_err(format!("feature source {:?} needs column", self.source)))
        };
        let source = match self.source.as_str() {
            "one" => FeatureSource::One,
            "last_outcome" => FeatureSource::LastOutcome(fallback),
            "outcome_at_visit" => FeatureSource::OutcomeAtVisit,
            "visit_count" => FeatureSource::VisitCount,
            "time_since_last_visit" => FeatureSource::TimeSinceLastVisit,
            "baseline" => FeatureSource::Baseline(col()?),
            "last_aux" => FeatureSource::LastAux(col()?, fallback),
            "aux_at_visit" => FeatureSource::AuxAtVisit(col()?),
            other => return Err(config_err(format!("unknown feature source {other:?}"))),
        };
        let transform = match self.transform.as_deref() {
            None | Some("identity") => Transform::Identity,
            Some("log1p_floor") => Transform::Log1pFloor {
                floor: self.floor.unwrap_or(0.01),
            },
            Some(other) => return Err(config_err(format!("unknown transform {other:?}"))),
        };
        Ok(Feature::new(source, transform))
    }
}

impl FeatureSpecConfig {
    fn build(&self) -> CliResult<FeatureSpec> {
        match self {
            FeatureSpecConfig::Preset(name) => match name.as_str() {
                "lagged_log_outcome" => Ok(FeatureSpec::lagged_log_outcome(0)),
                "intercept_outcome" => Ok(FeatureSpec::dropout_intercept_outcome()),
                other => Err(config_err(format!("unknown feature preset {other:?}"))),
            },
            FeatureSpecConfig::Custom(features) => {
                let built: CliResult<Vec<Feature>> = features.iter().map(|f| f.build()).collect();
                Ok(FeatureSpec::new(built?))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalysisSection {
    #[serde(default)]
    methods: Option<Vec<String>>,
    #[serde(default)]
    trims: Option<Vec<f64>>,
    #[serde(default)]
    basis: Option<Vec<String>>,
    #[serde(default)]
    scenario_basis: Option<String>,
    #[serde(default)]
    intensity_features: Option<FeatureSpecConfig>,
    #[serde(default)]
    dropout_features: Option<FeatureSpecConfig>,
    #[serde(default)]
    stabilizer: Option<String>,
}

impl AnalysisSection {
    fn methods(&self) -> CliResult<Vec<Method>> {
        let names = self
            .methods
            .clone()
            .unwrap_or_else(|| vec!["iiw_nid".into(), "iiw".into(), "iiw_x_ipw".into()]);
        names
            .iter()
            .map(|m| match m.to_ascii_lowercase().as_str() {
                "iiw_nid" | "iiw-nid" => Ok(Method::IiwNid),
                "iiw" => Ok(Method::Iiw),
                "iiw_x_ipw" | "iiwxipw" | "iiw-x-ipw" => Ok(Method::IiwXIpw),
                other => Err(config_err(format!("unknown method {other:?}"))),
            })
            .collect()
    }

    fn trims(&self) -> CliResult<Vec<f64>> {
        let trims = self.trims.clone().unwrap_or_else(|| vec![100.0]);
        for &t in &trims {
            if !(t > 0.0 && t <= 100.0) {
                return Err(config_err(format!("trim percentile {t} outside (0, 100]")));
            }
        }
        Ok(trims)
    }

    fn basis(&self, default_scenario: Option<Scenario>) -> CliResult<OutcomeBasis> {
        if let Some(names) = &self.basis {
            let fns: CliResult<Vec<BasisFn>> = names
                .iter()
                .map(|b| match b.as_str() {
                    "one" => Ok(BasisFn::One),
                    "log1p" => Ok(BasisFn::Log1p),
                    "inv_sq1p" => Ok(BasisFn::InvSq1p),
                    "inv_sq1p_log" => Ok(BasisFn::InvSq1pLog),
                    "linear" => Ok(BasisFn::Linear),
                    other => Err(config_err(format!("unknown basis function {other:?}"))),
                })
                .collect();
            return Ok(OutcomeBasis::new(fns?));
        }
        let scenario = match self.scenario_basis.as_deref() {
            Some("s1") => Some(Scenario::S1),
            Some("s2") => Some(Scenario::S2),
            Some(other) => return Err(config_err(format!("unknown scenario basis {other:?}"))),
            None => default_scenario,
        };
        match scenario {
            Some(Scenario::S1) => Ok(OutcomeBasis::scenario1()),
            Some(Scenario::S2) => Ok(OutcomeBasis::scenario2()),
            None => Err(config_err("analysis: basis or scenario_basis is required")),
        }
    }

    fn build_spec(&self, default_scenario: Option<Scenario>) -> CliResult<AnalysisSpec> {
        let intensity_features = match &self.intensity_features {
            Some(f) => f.build()?,
            None => FeatureSpec::lagged_log_outcome(0),
        };
        let dropout_features = match &self.dropout_features {
            Some(f) => f.build()?,
            None => FeatureSpec::dropout_intercept_outcome(),
        };
        let locally_constant_stabilizer = match self.stabilizer.as_deref() {
            None | Some("unit") => false,
            Some("locally_constant") => true,
            Some(other) => return Err(config_err(format!("unknown stabilizer {other:?}"))),
        };
        Ok(AnalysisSpec {
            intensity_features,
            dropout_features,
            basis: self.basis(default_scenario)?,
            locally_constant_stabilizer,
        })
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            methods: None,
            trims: None,
            basis: None,
            scenario_basis: None,
            intensity_features: None,
            dropout_features: None,
            stabilizer: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    scenario: ScenarioSection,
    output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    input: InputSection,
    #[serde(default)]
    analysis: Option<AnalysisSection>,
    output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudySection {
    nsim: usize,
    #[serde(default)]
    bootstrap_b: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct McConfig {
    scenario: ScenarioSection,
    study: StudySection,
    #[serde(default)]
    analysis: Option<AnalysisSection>,
    output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BootstrapSection {
    b: usize,
    seed: u64,
    method: String,
    #[serde(default)]
    trim: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BootstrapConfig {
    input: InputSection,
    bootstrap: BootstrapSection,
    #[serde(default)]
    analysis: Option<AnalysisSection>,
    output: OutputSection,
}

// ---------------------------------------------------------------------------
// Command runners
// ---------------------------------------------------------------------------

fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<(T, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    let parsed: T = toml::from_str(&text)
        .map_err(|e| config_err(format!("invalid config {}: {e}", path.display())))?;
    let hash = hex_digest(text.as_bytes());
    Ok((parsed, hash))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn out_dir(section: &OutputSection, override_dir: Option<&Path>) -> PathBuf {
    override_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| section.dir.clone())
}

fn prefix(section: &OutputSection) -> String {
    section.prefix.clone().unwrap_or_else(|| "panel".into())
}

#[derive(Serialize)]
struct ResolvedSimConfig<'a> {
    config_hash: &'a str,
    seed: u64,
    eta0: f64,
    scenario: &'a ScenarioConfig,
    crate_version: &'a str,
}

/// `simulate`: generate a panel and write the two CSVs plus a resolved-config
/// JSON sidecar (including the calibrated dropout intercept).
pub fn cmd_simulate(config_path: &Path, override_dir: Option<&Path>) -> CliResult<()> {
    let (config, hash) = load_config::<SimulateConfig>(config_path)?;
    let scenario = config.scenario.build()?;
    let eta0 = resolve_eta0(&scenario).map_err(run_err)?;
    eprintln!("simulate: eta0 = {eta0:.6}, generating n = {}", scenario.n);
    let mut resolved = scenario.clone();
    resolved.eta = EtaSpec::Eta0(eta0);
    let panel = generate_panel(&resolved).map_err(run_err)?;
    let violations = validate_panel(&panel);
    if !violations.is_empty() {
        return Err(run_err(format!(
            "generated panel failed validation: {}",
            violations[0]
        )));
    }
    let dir = out_dir(&config.output, override_dir);
    let p = prefix(&config.output);
    let stamp = FileStamp::new(&hash, scenario.seed);
    write_panel(
        &panel,
        &dir.join(format!("{p}_visits.csv")),
        &dir.join(format!("{p}_events.csv")),
        &stamp,
    )
    .map_err(run_err)?;
    let sidecar = ResolvedSimConfig {
        config_hash: &hash,
        seed: scenario.seed,
        eta0,
        scenario: &resolved,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(run_err)?;
    write_atomic(&dir.join(format!("{p}_config.json")), json.as_bytes()).map_err(run_err)?;
    eprintln!(
        "simulate: wrote {} subjects, {} visits to {}",
        panel.n_subjects(),
        panel.n_visits(),
        dir.display()
    );
    Ok(())
}

fn read_input(input: &InputSection) -> CliResult<Panel> {
    let panel = read_panel(&input.visits, &input.events, input.tau).map_err(run_err)?;
    let violations = validate_panel(&panel);
    if !violations.is_empty() {
        let preview: Vec<String> = violations.iter().take(3).map(|v| v.to_string()).collect();
        return Err(run_err(format!(
            "panel failed validation ({} violations): {}",
            violations.len(),
            preview.join("; ")
        )));
    }
    Ok(panel)
}

#[derive(Serialize)]
struct FitOutput<'a> {
    config_hash: &'a str,
    seed: u64,
    results: &'a [MethodResult],
    crate_version: &'a str,
}

/// `fit`: analyze an existing panel with the requested methods and trims;
/// writes one JSON of results and one weight CSV per (method, trim).
pub fn cmd_fit(config_path: &Path, override_dir: Option<&Path>) -> CliResult<()> {
    let (config, hash) = load_config::<FitConfig>(config_path)?;
    let analysis = config.analysis.clone().unwrap_or_default();
    let spec = analysis.build_spec(None)?;
    let methods = analysis.methods()?;
    let trims = analysis.trims()?;
    let panel = read_input(&config.input)?;
    let results = analyze_all(&panel, &spec, &methods, &trims);
    if let Some(bad) = results.iter().find(|r| r.error.is_some()) {
        return Err(run_err(format!(
            "{} fit failed: {}",
            bad.method,
            bad.error.clone().unwrap_or_default()
        )));
    }
    let dir = out_dir(&config.output, override_dir);
    std::fs::create_dir_all(&dir).map_err(run_err)?;

    // Weight CSVs per requested method at each trim.
    let stamp = FileStamp::new(&hash, 0);
    for &method in &methods {
        let fits = crate::intensity::fit_intensity(
            &panel,
            &spec.intensity_features,
            if method == Method::IiwNid {
                crate::intensity::RiskMode::IgnoreDropout
            } else {
                crate::intensity::RiskMode::RespectDropout
            },
        )
        .map_err(run_err)?;
        let dropout = if method == Method::IiwXIpw
            && panel.subjects.iter().any(|s| s.dropout_time.is_some())
        {
            Some(crate::dropout::fit_dropout(&panel, &spec.dropout_features).map_err(run_err)?)
        } else {
            None
        };
        for &trim in &trims {
            let ws = crate::weights::compose_weights(
                &panel,
                &fits,
                &spec.intensity_features,
                dropout.as_ref(),
                &spec.dropout_features,
                method,
                spec.locally_constant_stabilizer,
            )
            .map_err(run_err)?;
            let ws = if trim < 100.0 { ws.trimmed(trim) } else { ws };
            let mut csv = String::new();
            for (k, v) in &stamp.entries {
                csv.push_str(&format!("# {k}={v}\n"));
            }
            csv.push_str(&ws.to_csv(&panel));
            let name = format!("weights_{}_{trim}.csv", method.label().to_lowercase());
            write_atomic(&dir.join(name), csv.as_bytes()).map_err(run_err)?;
        }
    }

    let out = FitOutput {
        config_hash: &hash,
        seed: 0,
        results: &results,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    let json = serde_json::to_string_pretty(&out).map_err(run_err)?;
    write_atomic(&dir.join("fit_results.json"), json.as_bytes()).map_err(run_err)?;
    eprintln!("fit: wrote {} results to {}", results.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct McManifest<'a> {
    config_hash: &'a str,
    seed: u64,
    eta0: f64,
    nsim: usize,
    n: usize,
    true_auc: f64,
    n_failed_iterations: usize,
    scenario: &'a ScenarioConfig,
    crate_version: &'a str,
}

/// `mc`: run a Monte Carlo study and write a tidy results CSV plus a JSON run
/// manifest.
pub fn cmd_mc(config_path: &Path, override_dir: Option<&Path>) -> CliResult<()> {
    let (config, hash) = load_config::<McConfig>(config_path)?;
    let scenario = config.scenario.build()?;
    let analysis = config.analysis.clone().unwrap_or_default();
    let spec = analysis.build_spec(Some(config.scenario.scenario()?))?;
    let opts = McOptions {
        nsim: config.study.nsim,
        methods: analysis.methods()?,
        trims: analysis.trims()?,
        bootstrap: config.study.bootstrap_b.map(|b| McBootstrap { b }),
    };
    eprintln!(
        "mc: {} iterations x {} methods x {} trims (n = {})",
        opts.nsim,
        opts.methods.len(),
        opts.trims.len(),
        scenario.n
    );
    let summary = run_mc(&scenario, &spec, &opts).map_err(run_err)?;
    let dir = out_dir(&config.output, override_dir);
    let stamp = FileStamp::new(&hash, scenario.seed);
    let mut csv = String::new();
    for (k, v) in &stamp.entries {
        csv.push_str(&format!("# {k}={v}\n"));
    }
    csv.push_str(&summary.to_csv());
    write_atomic(&dir.join("mc_results.csv"), csv.as_bytes()).map_err(run_err)?;
    let manifest = McManifest {
        config_hash: &hash,
        seed: scenario.seed,
        eta0: summary.eta0,
        nsim: summary.nsim,
        n: summary.n,
        true_auc: summary.true_auc,
        n_failed_iterations: summary.n_failed_iterations,
        scenario: &scenario,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(run_err)?;
    write_atomic(&dir.join("mc_manifest.json"), json.as_bytes()).map_err(run_err)?;
    eprintln!("mc: wrote results to {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct BootstrapOutput<'a> {
    config_hash: &'a str,
    seed: u64,
    method: &'a str,
    trim: f64,
    point: Option<&'a crate::wgee::AucEstimate>,
    boot: &'a crate::study::BootSummary,
    crate_version: &'a str,
}

/// `bootstrap`: subject-level bootstrap of one method on an existing panel.
pub fn cmd_bootstrap(config_path: &Path, override_dir: Option<&Path>) -> CliResult<()> {
    let (config, hash) = load_config::<BootstrapConfig>(config_path)?;
    if config.bootstrap.b < 2 {
        return Err(config_err("bootstrap: b must be at least 2"));
    }
    let analysis = config.analysis.clone().unwrap_or_default();
    let spec = analysis.build_spec(None)?;
    let method = match config.bootstrap.method.to_ascii_lowercase().as_str() {
        "iiw_nid" | "iiw-nid" => Method::IiwNid,
        "iiw" => Method::Iiw,
        "iiw_x_ipw" | "iiwxipw" | "iiw-x-ipw" => Method::IiwXIpw,
        other => return Err(config_err(format!("unknown method {other:?}"))),
    };
    let trim = config.bootstrap.trim.unwrap_or(100.0);
    let panel = read_input(&config.input)?;
    let point = crate::study::analyze(&panel, &spec, method, trim);
    let boot = run_bootstrap(
        &panel,
        &spec,
        method,
        trim,
        config.bootstrap.b,
        config.bootstrap.seed,
        0,
    )
    .map_err(run_err)?;
    let dir = out_dir(&config.output, override_dir);
    let out = BootstrapOutput {
        config_hash: &hash,
        seed: config.bootstrap.seed,
        method: method.label(),
        trim,
        point: point.auc.as_ref(),
        boot: &boot,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    let json = serde_json::to_string_pretty(&out).map_err(run_err)?;
    write_atomic(&dir.join("bootstrap.json"), json.as_bytes()).map_err(run_err)?;
    eprintln!(
        "bootstrap: B = {} (failed {}), se = {:.4}",
        boot.b, boot.b_failed, boot.boot_se
    );
    Ok(())
}

/// Map an internal error to the CLI contract when needed elsewhere.
impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        run_err(e)
    }
}
