//! Proportional visit-intensity model.
//!
//! Visits are recurrent events; the model is fit by maximizing the recurrent
//! event log partial likelihood with Breslow tie handling:
//!
//! `Σ_events [γᵀx_i(t) − log Σ_{j at risk at t} exp(γᵀx_j(t))]`
//!
//! Covariates must be visit-anchored (constant between a subject's visits), so
//! each subject reduces to a short list of `(start, stop]` intervals with a
//! fixed covariate vector and an optional event at `stop`. Risk-set sums are
//! then maintained incrementally by a single sweep over interval endpoints,
//! making one Newton iteration linear in the number of intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, euclid_norm, inf_norm, SymMat};
use crate::model::{FeatureSpec, HistoryFeatures, Panel, SubjectRecord};

/// How risk sets treat the dropout time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMode {
    /// Follow-up ends at `min(D, G, L, tau)`; a subject is still at risk at
    /// the visit where their own dropout is decided.
    RespectDropout,
    /// Dropout is treated as `+∞`: subjects stay at risk to `min(G, L, tau)`
    /// with their covariates frozen at the last observed visit.
    IgnoreDropout,
}

/// Fitted visit-intensity model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntensityFit {
    pub gamma_hat: Vec<f64>,
    /// Breslow baseline cumulative-hazard increments, one `(time, increment)`
    /// pair per distinct event time.
    pub breslow: Vec<(f64, f64)>,
    /// Events divided by total `exp(γ̂ᵀx)`-weighted at-risk time: the
    /// constant-baseline-hazard summary used by the dropout survival term.
    pub constant_rate: f64,
    pub n_events: usize,
    pub converged: bool,
    pub iterations: usize,
    pub final_score_norm: f64,
}

impl IntensityFit {
    /// Baseline cumulative hazard `Λ̂₀(t)` evaluated from the Breslow steps.
    pub fn cumulative_baseline(&self, t: f64) -> f64 {
        self.breslow
            .iter()
            .take_while(|(s, _)| *s <= t)
            .map(|(_, inc)| inc)
            .sum()
    }
}

/// `exp(γ̂ᵀ features)`; the numerator intensity factor of the weights.
pub fn predict_intensity_factor(fit: &IntensityFit, features: &HistoryFeatures) -> f64 {
    assert_eq!(
        features.values.len(),
        fit.gamma_hat.len(),
        "feature length must match gamma"
    );
    dot(&fit.gamma_hat, &features.values).exp()
}

const MAX_ITER: usize = 50;
const SCORE_TOL: f64 = 1e-8;
const SEPARATION_NORM: f64 = 20.0;

/// One at-risk interval `(start, stop]` with a constant covariate vector.
struct Row {
    start: f64,
    stop: f64,
    x: Vec<f64>,
    event: bool,
    /// Whether the subject is still at risk exactly at `stop`. False only for
    /// noninformative censoring, which excludes its own instant.
    right_inclusive: bool,
}

/// Interval representation of a panel plus the endpoint orderings the sweep
/// needs; built once per fit and reused across Newton iterations.
struct RowSet {
    rows: Vec<Row>,
    entry_order: Vec<usize>,
    exit_order: Vec<usize>,
    /// Indices of event rows in time order, grouped by tied event time.
    event_groups: Vec<(f64, Vec<usize>)>,
    dim: usize,
}

fn subject_exit(s: &SubjectRecord, tau: f64, mode: RiskMode) -> (f64, bool) {
    // Returns the end of the at-risk period and whether the endpoint itself
    // is at risk.
    let mut end = tau;
    let mut inclusive = true;
    let mut take = |t: Option<f64>, incl: bool| {
        if let Some(t) = t {
            if t < end || (t == end && !incl) {
                end = t;
                inclusive = incl;
            }
        }
    };
    take(s.censor_time, false);
    take(s.competing_time, true);
    if mode == RiskMode::RespectDropout {
        take(s.dropout_time, true);
    }
    (end, inclusive)
}

fn build_rows(panel: &Panel, spec: &FeatureSpec, mode: RiskMode) -> Result<RowSet> {
    if !spec.is_visit_anchored() {
        return Err(Error::Invalid(
            "intensity features must be visit-anchored (constant between visits); \
             time-varying sources such as time_since_last_visit are not supported here"
                .into(),
        ));
    }
    let dim = spec.dim();
    let mut rows = Vec::new();
    for s in &panel.subjects {
        let (exit, inclusive) = subject_exit(s, panel.tau, mode);
        let mut prev = 0.0;
        for &t in &s.visit_times {
            if t > exit {
                break;
            }
            if t <= prev {
                return Err(Error::Invalid(format!(
                    "subject {}: visit times must be strictly increasing and positive",
                    s.id
                )));
            }
            // history() at the stop uses visits strictly before it, i.e. the
            // covariate value that was current on (prev, t].
            let x = spec.history(s, t)?.values;
            rows.push(Row {
                start: prev,
                stop: t,
                x,
                event: true,
                right_inclusive: true,
            });
            prev = t;
        }
        if exit > prev {
            let x = spec.history(s, exit)?.values;
            rows.push(Row {
                start: prev,
                stop: exit,
                x,
                event: false,
                right_inclusive: inclusive,
            });
        }
    }

    let mut entry_order: Vec<usize> = (0..rows.len()).collect();
    entry_order.sort_by(|&a, &b| rows[a].start.total_cmp(&rows[b].start));
    let mut exit_order: Vec<usize> = (0..rows.len()).collect();
    // Exclusive right ends leave the risk set before events at the same time.
    exit_order.sort_by(|&a, &b| {
        rows[a]
            .stop
            .total_cmp(&rows[b].stop)
            .then((rows[a].right_inclusive as u8).cmp(&(rows[b].right_inclusive as u8)))
    });

    let mut event_rows: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].event).collect();
    event_rows.sort_by(|&a, &b| rows[a].stop.total_cmp(&rows[b].stop));
    let mut event_groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in event_rows {
        let t = rows[i].stop;
        match event_groups.last_mut() {
            Some((last_t, group)) if *last_t == t => group.push(i),
            _ => event_groups.push((t, vec![i])),
        }
    }
    Ok(RowSet {
        rows,
        entry_order,
        exit_order,
        event_groups,
        dim,
    })
}

/// Accumulated risk-set statistics at the current gamma: `S0 = Σ exp(γᵀx)`,
/// `S1 = Σ x exp(γᵀx)`, `S2 = Σ x xᵀ exp(γᵀx)`.
struct SweepState {
    s0: f64,
    s1: Vec<f64>,
    s2: SymMat,
}

impl SweepState {
    fn new(dim: usize) -> Self {
        Self {
            s0: 0.0,
            s1: vec![0.0; dim],
            s2: SymMat::zeros(dim),
        }
    }

    fn update(&mut self, x: &[f64], w: f64) {
        self.s0 += w;
        for (si, xi) in self.s1.iter_mut().zip(x) {
            *si += w * xi;
        }
        self.s2.add_outer(x, w);
    }
}

struct LikelihoodEval {
    loglik: f64,
    score: Vec<f64>,
    info: SymMat,
}

fn evaluate(rows: &RowSet, gamma: &[f64]) -> Result<LikelihoodEval> {
    let dim = rows.dim;
    let mut state = SweepState::new(dim);
    let weights: Vec<f64> = rows.rows.iter().map(|r| dot(gamma, &r.x).exp()).collect();

    let mut entered = rows.entry_order.iter().peekable();
    let mut exited = rows.exit_order.iter().peekable();
    let mut loglik = 0.0;
    let mut score = vec![0.0; dim];
    let mut info = SymMat::zeros(dim);
    let mut ratio = vec![0.0; dim];

    for (t, group) in &rows.event_groups {
        while let Some(&&i) = entered.peek() {
            if rows.rows[i].start < *t {
                state.update(&rows.rows[i].x, weights[i]);
                entered.next();
            } else {
                break;
            }
        }
        while let Some(&&i) = exited.peek() {
            let r = &rows.rows[i];
            let gone = r.stop < *t || (r.stop == *t && !r.right_inclusive);
            if gone {
                // Only subtract rows that were previously added.
                if r.start < *t {
                    state.update(&r.x, -weights[i]);
                }
                exited.next();
            } else {
                break;
            }
        }
        if state.s0 <= 0.0 {
            return Err(Error::Positivity(format!(
                "empty risk set at event time {t}"
            )));
        }
        let d = group.len() as f64;
        for (ri, s1i) in ratio.iter_mut().zip(&state.s1) {
            *ri = s1i / state.s0;
        }
        for &i in group {
            loglik += dot(gamma, &rows.rows[i].x);
            for (sc, (xi, ri)) in score.iter_mut().zip(rows.rows[i].x.iter().zip(&ratio)) {
                *sc += xi - ri;
            }
        }
        loglik -= d * state.s0.ln();
        // d * (S2/S0 - ratio ratioᵀ)
        for a in 0..dim {
            for b in 0..dim {
                info.data[a * dim + b] +=
                    d * (state.s2.get(a, b) / state.s0 - ratio[a] * ratio[b]);
            }
        }
    }
    Ok(LikelihoodEval {
        loglik,
        score,
        info,
    })
}

/// Fits the visit-intensity model by Newton iteration with step-halving,
/// starting at `γ = 0`. Converged iff `‖score‖∞ < 1e-8` within 50 iterations.
pub fn fit_intensity(panel: &Panel, spec: &FeatureSpec, mode: RiskMode) -> Result<IntensityFit> {
    let rows = build_rows(panel, spec, mode)?;
    let n_events: usize = rows.event_groups.iter().map(|(_, g)| g.len()).sum();
    if n_events == 0 {
        return Err(Error::Invalid(
            "no visit events: cannot fit the intensity model".into(),
        ));
    }
    let dim = rows.dim;
    let mut gamma = vec![0.0; dim];
    let mut eval = evaluate(&rows, &gamma)?;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITER {
        if eval.info.data.iter().all(|v| v.abs() < 1e-300) {
            // Flat partial likelihood: identical covariate paths carry no
            // information about gamma.
            return Err(Error::Separation {
                model: "intensity (flat likelihood, non-identifiable)",
                norm: euclid_norm(&gamma),
            });
        }
        if inf_norm(&eval.score) < SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let step = eval.info.solve(&eval.score)?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = gamma
                .iter()
                .zip(&step)
                .map(|(g, s)| g + scale * s)
                .collect();
            let cand_eval = evaluate(&rows, &cand)?;
            // Tolerate a few ulps of likelihood decrease: near the optimum the
            // true gain of the final Newton step is below f64 resolution.
            let slack = 64.0 * f64::EPSILON * (1.0 + eval.loglik.abs());
            if cand_eval.loglik >= eval.loglik - slack || scale < 1e-10 {
                accepted = Some((cand, cand_eval));
                break;
            }
            scale *= 0.5;
        }
        let (cand, cand_eval) =
            accepted.ok_or_else(|| Error::Invalid("intensity step-halving failed".into()))?;
        gamma = cand;
        eval = cand_eval;
        // Runaway coefficients: far beyond any plausible scale.
        if euclid_norm(&gamma) > 50.0 * SEPARATION_NORM {
            return Err(Error::Separation {
                model: "intensity",
                norm: euclid_norm(&gamma),
            });
        }
    }
    let final_score_norm = inf_norm(&eval.score);
    if final_score_norm < SCORE_TOL {
        converged = true;
    }
    // Monotone likelihood: on the log-outcome covariate scale a norm past 20
    // only arises when the likelihood is maximized at infinity.
    if euclid_norm(&gamma) > SEPARATION_NORM {
        return Err(Error::Separation {
            model: "intensity",
            norm: euclid_norm(&gamma),
        });
    }

    let breslow = breslow_increments(&rows, &gamma)?;
    let constant_rate = constant_rate(&rows, &gamma, n_events);
    Ok(IntensityFit {
        gamma_hat: gamma,
        breslow,
        constant_rate,
        n_events,
        converged,
        iterations,
        final_score_norm,
    })
}

fn breslow_increments(rows: &RowSet, gamma: &[f64]) -> Result<Vec<(f64, f64)>> {
    let weights: Vec<f64> = rows.rows.iter().map(|r| dot(gamma, &r.x).exp()).collect();
    let mut s0 = 0.0;
    let mut entered = rows.entry_order.iter().peekable();
    let mut exited = rows.exit_order.iter().peekable();
    let mut out = Vec::with_capacity(rows.event_groups.len());
    for (t, group) in &rows.event_groups {
        while let Some(&&i) = entered.peek() {
            if rows.rows[i].start < *t {
                s0 += weights[i];
                entered.next();
            } else {
                break;
            }
        }
        while let Some(&&i) = exited.peek() {
            let r = &rows.rows[i];
            if r.stop < *t || (r.stop == *t && !r.right_inclusive) {
                if r.start < *t {
                    s0 -= weights[i];
                }
                exited.next();
            } else {
                break;
            }
        }
        if s0 <= 0.0 {
            return Err(Error::Positivity(format!(
                "empty risk set at event time {t}"
            )));
        }
        out.push((*t, group.len() as f64 / s0));
    }
    Ok(out)
}

fn constant_rate(rows: &RowSet, gamma: &[f64], n_events: usize) -> f64 {
    let exposure: f64 = rows
        .rows
        .iter()
        .map(|r| (r.stop - r.start) * dot(gamma, &r.x).exp())
        .sum();
    if exposure > 0.0 {
        n_events as f64 / exposure
    } else {
        0.0
    }
}

/// Breslow baseline increments at a caller-supplied `gamma`: at each distinct
/// event time, `(#events) / Σ_{at risk} exp(γᵀx)`.
pub fn breslow_baseline(
    panel: &Panel,
    gamma: &[f64],
    spec: &FeatureSpec,
    mode: RiskMode,
) -> Result<Vec<(f64, f64)>> {
    if !gamma.iter().all(|g| g.is_finite()) {
        return Err(Error::Invalid("gamma must be finite".into()));
    }
    let rows = build_rows(panel, spec, mode)?;
    breslow_increments(&rows, gamma)
}

/// Log partial likelihood and analytic score at `gamma`; exposed for the
/// finite-difference oracle checks.
pub fn log_partial_likelihood(
    panel: &Panel,
    gamma: &[f64],
    spec: &FeatureSpec,
    mode: RiskMode,
) -> Result<(f64, Vec<f64>)> {
    let rows = build_rows(panel, spec, mode)?;
    let eval = evaluate(&rows, gamma)?;
    Ok((eval.loglik, eval.score))
}

/// Observed information (negative Hessian) at `gamma`; positive semidefinite
/// everywhere because the log partial likelihood is concave.
pub fn observed_information(
    panel: &Panel,
    gamma: &[f64],
    spec: &FeatureSpec,
    mode: RiskMode,
) -> Result<SymMat> {
    let rows = build_rows(panel, spec, mode)?;
    Ok(evaluate(&rows, gamma)?.info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Fallback, Feature, FeatureSource, PanelSchema, Transform};

    fn fixed_covariate_subject(id: &str, z: f64, visits: &[f64]) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            visit_times: visits.to_vec(),
            outcomes: vec![0.0; visits.len()],
            baseline: vec![z],
            aux: vec![],
            dropout_time: None,
            censor_time: None,
            competing_time: None,
        }
    }

    fn baseline_spec() -> FeatureSpec {
        FeatureSpec::new(vec![Feature::new(
            FeatureSource::Baseline(0),
            Transform::Identity,
        )])
    }

    fn two_subject_panel() -> Panel {
        Panel {
            subjects: vec![
                fixed_covariate_subject("A", 1.0, &[1.0]),
                fixed_covariate_subject("B", 0.0, &[2.0]),
            ],
            tau: 2.0,
            schema: PanelSchema::default(),
        }
    }

    #[test]
    fn two_event_panel_has_zero_gamma() {
        // Score at gamma: 1 - 2 e^g/(e^g + 1); root at exactly 0.
        let fit = fit_intensity(&two_subject_panel(), &baseline_spec(), RiskMode::RespectDropout)
            .unwrap();
        assert!(fit.converged);
        assert!(fit.gamma_hat[0].abs() < 1e-9, "gamma = {}", fit.gamma_hat[0]);
        assert_eq!(fit.n_events, 2);
    }

    #[test]
    fn identical_covariate_paths_error() {
        let panel = Panel {
            subjects: vec![
                fixed_covariate_subject("A", 1.0, &[1.0]),
                fixed_covariate_subject("B", 1.0, &[2.0]),
            ],
            tau: 2.0,
            schema: PanelSchema::default(),
        };
        match fit_intensity(&panel, &baseline_spec(), RiskMode::RespectDropout) {
            Err(Error::Separation { .. }) => {}
            other => panic!("expected non-identifiable error, got {other:?}"),
        }
    }

    #[test]
    fn breslow_two_subjects_unit_gamma_zero() {
        let panel = two_subject_panel();
        let inc = breslow_baseline(&panel, &[0.0], &baseline_spec(), RiskMode::RespectDropout)
            .unwrap();
        // Both at risk on (0,2]: increments 1/2 at t=1 and t=2.
        assert_eq!(inc.len(), 2);
        assert!((inc[0].1 - 0.5).abs() < 1e-15);
        assert!((inc[1].1 - 0.5).abs() < 1e-15);
        let fit = fit_intensity(&panel, &baseline_spec(), RiskMode::RespectDropout).unwrap();
        assert!((fit.cumulative_baseline(2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn breslow_no_events_is_empty() {
        let panel = Panel {
            subjects: vec![fixed_covariate_subject("A", 1.0, &[])],
            tau: 2.0,
            schema: PanelSchema::default(),
        };
        let inc =
            breslow_baseline(&panel, &[0.3], &baseline_spec(), RiskMode::RespectDropout).unwrap();
        assert!(inc.is_empty());
    }

    #[test]
    fn breslow_invariant_to_doubling_covariates_halving_gamma() {
        let panel = two_subject_panel();
        let inc1 = breslow_baseline(&panel, &[0.8], &baseline_spec(), RiskMode::RespectDropout)
            .unwrap();
        let mut doubled = panel.clone();
        for s in &mut doubled.subjects {
            s.baseline[0] *= 2.0;
        }
        let inc2 = breslow_baseline(&doubled, &[0.4], &baseline_spec(), RiskMode::RespectDropout)
            .unwrap();
        for (a, b) in inc1.iter().zip(&inc2) {
            assert!((a.1 - b.1).abs() < 1e-14);
        }
    }

    #[test]
    fn intensity_factor_examples() {
        let fit = IntensityFit {
            gamma_hat: vec![-0.336],
            breslow: vec![],
            constant_rate: 1.0,
            n_events: 1,
            converged: true,
            iterations: 1,
            final_score_norm: 0.0,
        };
        let f0 = predict_intensity_factor(
            &fit,
            &HistoryFeatures { values: vec![0.0] },
        );
        assert!((f0 - 1.0).abs() < 1e-15);
        let f = predict_intensity_factor(
            &fit,
            &HistoryFeatures {
                values: vec![(11.0f64).ln()],
            },
        );
        assert!((f - 11.0f64.powf(-0.336)).abs() < 1e-12);
        assert!((f - 0.4469).abs() < 5e-4);
    }

    #[test]
    fn gamma_invariant_to_covariate_shift() {
        // Adding a constant to a covariate column cancels in risk-set ratios.
        let panel = Panel {
            subjects: vec![
                fixed_covariate_subject("A", 1.0, &[0.5, 1.5]),
                fixed_covariate_subject("B", 0.0, &[1.0]),
                fixed_covariate_subject("C", -0.5, &[1.8]),
            ],
            tau: 2.0,
            schema: PanelSchema::default(),
        };
        let fit1 =
            fit_intensity(&panel, &baseline_spec(), RiskMode::RespectDropout).unwrap();
        let mut shifted = panel.clone();
        for s in &mut shifted.subjects {
            s.baseline[0] += 5.0;
        }
        let fit2 =
            fit_intensity(&shifted, &baseline_spec(), RiskMode::RespectDropout).unwrap();
        assert!((fit1.gamma_hat[0] - fit2.gamma_hat[0]).abs() < 1e-7);
    }

    #[test]
    fn dropout_visit_case_is_in_its_own_risk_set() {
        // A subject whose last visit coincides with dropout still contributes
        // itself to the risk-set denominator at that event.
        let mut a = fixed_covariate_subject("A", 1.0, &[1.0]);
        a.dropout_time = Some(1.0);
        let b = fixed_covariate_subject("B", 0.0, &[2.0]);
        let panel = Panel {
            subjects: vec![a, b],
            tau: 2.0,
            schema: PanelSchema::default(),
        };
        let inc = breslow_baseline(&panel, &[0.0], &baseline_spec(), RiskMode::RespectDropout)
            .unwrap();
        // At t=1 both subjects are at risk (increment 1/2); at t=2 only B.
        assert!((inc[0].1 - 0.5).abs() < 1e-15);
        assert!((inc[1].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ignore_dropout_extends_risk_sets() {
        let mut a = fixed_covariate_subject("A", 1.0, &[1.0]);
        a.dropout_time = Some(1.0);
        let b = fixed_covariate_subject("B", 0.0, &[2.0]);
        let panel = Panel {
            subjects: vec![a, b],
            tau: 2.0,
            schema: PanelSchema::default(),
        };
        let inc = breslow_baseline(&panel, &[0.0], &baseline_spec(), RiskMode::IgnoreDropout)
            .unwrap();
        // A stays at risk through t=2 under the no-informative-dropout view.
        assert!((inc[1].1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lagged_outcome_features_are_used() {
        // Feature path: baseline fallback before the first visit, then the
        // last observed outcome.
        let s = SubjectRecord {
            id: "A".into(),
            visit_times: vec![1.0, 2.0],
            outcomes: vec![3.0, 5.0],
            baseline: vec![1.0],
            aux: vec![],
            dropout_time: None,
            censor_time: None,
            competing_time: None,
        };
        let panel = Panel {
            subjects: vec![s],
            tau: 3.0,
            schema: PanelSchema::default(),
        };
        let spec = FeatureSpec::new(vec![Feature::new(
            FeatureSource::LastOutcome(Fallback::Baseline(0)),
            Transform::Identity,
        )]);
        let rows = build_rows(&panel, &spec, RiskMode::RespectDropout).unwrap();
        let xs: Vec<f64> = rows.rows.iter().map(|r| r.x[0]).collect();
        assert_eq!(xs, vec![1.0, 3.0, 5.0]);
        assert_eq!(rows.rows[2].stop, 3.0);
        assert!(!rows.rows[2].event);
    }
}
