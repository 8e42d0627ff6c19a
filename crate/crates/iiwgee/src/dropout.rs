//! Visit-level informative-dropout model.
//!
//! Dropout that can only happen at a visit is modelled by logistic regression
//! on visit-level records: each observed visit is labelled 1 iff the subject's
//! dropout time equals that visit time. The conditional probability of not
//! yet having dropped out at a later time `t`, given no visit since the last
//! one, combines the last visit's dropout odds with the probability of having
//! had no visit in between:
//!
//! `P(D > t | G > t, history) = S / (S + odds)`,
//!
//! where `S = exp(-λ₀ e^{γᵀH} (t - T_last))` is the no-visit probability under
//! a hazard frozen at the last visit's history, and `odds` is the dropout odds
//! at the last visit. A piecewise-constant continuous-time variant is provided
//! for dropout that can happen between visits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, euclid_norm, expit, inf_norm, SymMat};
use crate::model::{FeatureSpec, HistoryFeatures, Panel};

/// Fitted visit-level logistic dropout model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DropoutFit {
    pub eta_hat: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_score_norm: f64,
    pub n_records: usize,
    pub n_dropouts: usize,
}

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-10;
const SEPARATION_NORM: f64 = 20.0;

/// Default floor below which a dropout-survival probability is treated as a
/// positivity violation rather than silently producing an unbounded weight.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// Builds the visit-level design and labels for the dropout model.
pub fn dropout_records(panel: &Panel, spec: &FeatureSpec) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for s in &panel.subjects {
        for k in 0..s.visit_times.len() {
            x.push(spec.at_visit(s, k)?.values);
            let dropped = s.dropout_time == Some(s.visit_times[k]);
            y.push(f64::from(dropped));
        }
    }
    Ok((x, y))
}

/// Fits the dropout model by iteratively reweighted least squares (Newton on
/// the Bernoulli log-likelihood), starting at `η = 0`. Converged iff
/// `‖score‖∞ < 1e-10` within 100 iterations. No ridge fallback: separation is
/// surfaced as an error.
pub fn fit_dropout(panel: &Panel, spec: &FeatureSpec) -> Result<DropoutFit> {
    let (x, y) = dropout_records(panel, spec)?;
    fit_logistic(&x, &y)
}

pub(crate) fn fit_logistic(x: &[Vec<f64>], y: &[f64]) -> Result<DropoutFit> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Invalid("no visit records to fit dropout model".into()));
    }
    let n_dropouts = y.iter().filter(|&&v| v == 1.0).count();
    if n_dropouts == 0 || n_dropouts == n {
        return Err(Error::Invalid(format!(
            "dropout labels are all {}: need at least one record of each label",
            if n_dropouts == 0 { "0" } else { "1" }
        )));
    }
    let dim = x[0].len();
    let mut eta = vec![0.0; dim];
    let mut iterations = 0;
    let mut converged = false;
    let mut loglik = log_likelihood(x, y, &eta);
    let mut score = score_vec(x, y, &eta);

    while iterations < MAX_ITER {
        if inf_norm(&score) < SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut info = SymMat::zeros(dim);
        for xi in x {
            let p = expit(dot(&eta, xi));
            info.add_outer(xi, p * (1.0 - p));
        }
        let step = info.solve(&score)?;
        let mut scale = 1.0;
        loop {
            let cand: Vec<f64> = eta.iter().zip(&step).map(|(e, s)| e + scale * s).collect();
            let cand_ll = log_likelihood(x, y, &cand);
            // Tolerate a few ulps of likelihood decrease: near the optimum the
            // true gain of the final Newton step is below f64 resolution.
            let slack = 64.0 * f64::EPSILON * (1.0 + loglik.abs());
            if cand_ll >= loglik - slack || scale < 1e-10 {
                eta = cand;
                loglik = cand_ll;
                break;
            }
            scale *= 0.5;
        }
        score = score_vec(x, y, &eta);
        // Runaway coefficients with no hope of a finite optimum: the norm is
        // far beyond any plausible scale and still growing.
        if euclid_norm(&eta) > 50.0 * SEPARATION_NORM {
            return Err(Error::Separation {
                model: "dropout",
                norm: euclid_norm(&eta),
            });
        }
    }
    let final_score_norm = inf_norm(&score);
    if final_score_norm < SCORE_TOL {
        converged = true;
    }
    // Quasi-complete separation: the coefficient norm diverged while the
    // score stayed bounded away from zero. A converged fit with a large norm
    // is legal on its own (intercepts scale with the covariates).
    if !converged && euclid_norm(&eta) > SEPARATION_NORM {
        return Err(Error::Separation {
            model: "dropout",
            norm: euclid_norm(&eta),
        });
    }
    // Complete separation: the score can also vanish with every fitted
    // probability saturated at 0 or 1, i.e. all linear predictors enormous.
    if converged && x.iter().all(|xi| dot(&eta, xi).abs() > 20.0) {
        return Err(Error::Separation {
            model: "dropout (fitted probabilities saturated)",
            norm: euclid_norm(&eta),
        });
    }
    Ok(DropoutFit {
        eta_hat: eta,
        converged,
        iterations,
        final_score_norm,
        n_records: n,
        n_dropouts,
    })
}

/// Bernoulli log-likelihood at `eta`; exposed for finite-difference checks.
pub fn log_likelihood(x: &[Vec<f64>], y: &[f64], eta: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let lin = dot(eta, xi);
            // y*lin - log(1 + e^lin), computed stably.
            yi * lin - if lin > 0.0 { lin + (-lin).exp().ln_1p() } else { lin.exp().ln_1p() }
        })
        .sum()
}

/// Analytic score `Xᵀ(y − p)` at `eta`.
pub fn score_vec(x: &[Vec<f64>], y: &[f64], eta: &[f64]) -> Vec<f64> {
    let dim = eta.len();
    let mut score = vec![0.0; dim];
    for (xi, &yi) in x.iter().zip(y) {
        let r = yi - expit(dot(eta, xi));
        for (s, v) in score.iter_mut().zip(xi) {
            *s += r * v;
        }
    }
    score
}

/// `exp(η̂ᵀ features)`: the dropout odds `π/(1−π)` at a visit.
pub fn dropout_odds(fit: &DropoutFit, features: &HistoryFeatures) -> f64 {
    assert_eq!(
        features.values.len(),
        fit.eta_hat.len(),
        "feature length must match eta"
    );
    dot(&fit.eta_hat, &features.values).exp()
}

/// `P(D > t | G > t, history, no visit since last_visit)` for visit-time
/// dropout under a constant visit hazard `lambda0 * intensity_factor` frozen at
/// the last visit.
///
/// Errors when the probability falls below `floor` (positivity violation).
pub fn survival_given_no_visit(
    t: f64,
    last_visit: f64,
    intensity_factor: f64,
    lambda0: f64,
    odds_at_last_visit: f64,
    floor: f64,
) -> Result<f64> {
    debug_assert!(t >= last_visit);
    debug_assert!(intensity_factor > 0.0 && lambda0 >= 0.0 && odds_at_last_visit >= 0.0);
    let s = (-lambda0 * intensity_factor * (t - last_visit)).exp();
    let p = s / (s + odds_at_last_visit);
    if p < floor {
        return Err(Error::Positivity(format!(
            "dropout survival probability {p:.3e} below floor {floor:.1e} at t = {t}"
        )));
    }
    Ok(p)
}

/// Piecewise-constant hazard on `(times[i-1], times[i]]` segments, with
/// `rates[0]` applying from time 0 up to `times[0]` and the last rate
/// extending beyond the final breakpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewiseConstantHazard {
    pub times: Vec<f64>,
    pub rates: Vec<f64>,
}

impl PiecewiseConstantHazard {
    /// Integrated hazard over `(a, b]`.
    pub fn cumulative(&self, a: f64, b: f64) -> f64 {
        debug_assert!(b >= a);
        let mut acc = 0.0;
        let mut lo = a;
        for (i, &cut) in self.times.iter().enumerate() {
            if cut <= lo {
                continue;
            }
            let hi = cut.min(b);
            if hi > lo {
                acc += self.rates[i.min(self.rates.len() - 1)] * (hi - lo);
                lo = hi;
            }
            if lo >= b {
                return acc;
            }
        }
        if b > lo {
            acc += self.rates.last().copied().unwrap_or(0.0) * (b - lo);
        }
        acc
    }
}

/// Continuous-time dropout survival `exp(-∫ hazard)` on `(last_reset, t]`.
pub fn survival_continuous(
    t: f64,
    last_reset: f64,
    hazard: &PiecewiseConstantHazard,
    floor: f64,
) -> Result<f64> {
    let p = (-hazard.cumulative(last_reset, t)).exp();
    if p < floor {
        return Err(Error::Positivity(format!(
            "continuous dropout survival {p:.3e} below floor {floor:.1e} at t = {t}"
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PanelSchema, SubjectRecord};

    #[test]
    fn intercept_only_closed_form() {
        // 30 dropouts among 100 records: intercept MLE is logit(0.3).
        let x: Vec<Vec<f64>> = (0..100).map(|_| vec![1.0]).collect();
        let y: Vec<f64> = (0..100).map(|i| f64::from(i < 30)).collect();
        let fit = fit_logistic(&x, &y).unwrap();
        assert!(fit.converged);
        let expected = (0.3f64 / 0.7).ln();
        assert!((fit.eta_hat[0] - expected).abs() < 1e-9);
        assert!((fit.eta_hat[0] + 0.8473).abs() < 1e-4);
    }

    #[test]
    fn perfectly_separated_labels_error() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| f64::from(i >= 20)).collect();
        match fit_logistic(&x, &y) {
            Err(Error::Separation { .. }) => {}
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn single_label_errors() {
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0]).collect();
        let y = vec![0.0; 10];
        assert!(fit_logistic(&x, &y).is_err());
    }

    #[test]
    fn visit_at_dropout_time_is_labelled_one() {
        let subject = SubjectRecord {
            id: "a".into(),
            visit_times: vec![1.0, 2.0],
            outcomes: vec![0.5, 1.5],
            baseline: vec![],
            aux: vec![],
            dropout_time: Some(2.0),
            censor_time: None,
            competing_time: None,
        };
        let panel = Panel {
            subjects: vec![subject],
            tau: 3.0,
            schema: PanelSchema::default(),
        };
        let (x, y) = dropout_records(&panel, &FeatureSpec::dropout_intercept_outcome()).unwrap();
        assert_eq!(y, vec![0.0, 1.0]);
        assert_eq!(x[1], vec![1.0, 1.5]);
    }

    #[test]
    fn odds_examples() {
        let fit = DropoutFit {
            eta_hat: vec![-2.0, 0.5],
            converged: true,
            iterations: 0,
            final_score_norm: 0.0,
            n_records: 0,
            n_dropouts: 0,
        };
        // eta'x = -2 + 0.5*4 = 0 -> odds 1.
        let odds = dropout_odds(
            &fit,
            &HistoryFeatures {
                values: vec![1.0, 4.0],
            },
        );
        assert!((odds - 1.0).abs() < 1e-15);
        // pi = 0.2 corresponds to odds 0.25.
        assert!((0.2f64 / 0.8 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn survival_given_no_visit_examples() {
        // Just after a visit with odds 1: S = 1, P = 1/2.
        let p = survival_given_no_visit(2.0, 2.0, 1.0, 1.0, 1.0, POSITIVITY_FLOOR).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        // No dropout risk.
        let p = survival_given_no_visit(9.0, 2.0, 1.0, 1.0, 0.0, POSITIVITY_FLOOR).unwrap();
        assert!((p - 1.0).abs() < 1e-15);
        // lambda*factor = 0.5 over a gap of 2 with odds 0.25.
        let p = survival_given_no_visit(2.0, 0.0, 0.5, 1.0, 0.25, POSITIVITY_FLOOR).unwrap();
        let s = (-1.0f64).exp();
        assert!((p - s / (s + 0.25)).abs() < 1e-15);
        assert!((p - 0.5954).abs() < 1e-4);
    }

    #[test]
    fn survival_floor_violation() {
        let err = survival_given_no_visit(100.0, 0.0, 1.0, 1.0, 1.0, POSITIVITY_FLOOR);
        assert!(matches!(err, Err(Error::Positivity(_))));
    }

    #[test]
    fn survival_monotone_and_limits() {
        let mut prev = 1.0;
        for i in 0..200 {
            let t = i as f64 * 0.1;
            let p = survival_given_no_visit(t, 0.0, 0.7, 1.3, 0.4, 0.0).unwrap();
            assert!(p <= prev + 1e-15);
            prev = p;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn piecewise_hazard_examples() {
        let h = PiecewiseConstantHazard {
            times: vec![1.0, 2.0],
            rates: vec![0.1, 0.3],
        };
        let p = survival_continuous(2.0, 0.0, &h, 0.0).unwrap();
        assert!((p - (-0.4f64).exp()).abs() < 1e-15);

        let zero = PiecewiseConstantHazard {
            times: vec![],
            rates: vec![0.0],
        };
        assert!((survival_continuous(5.0, 0.0, &zero, 0.0).unwrap() - 1.0).abs() < 1e-15);

        let constant = PiecewiseConstantHazard {
            times: vec![],
            rates: vec![0.25],
        };
        let p = survival_continuous(7.0, 3.0, &constant, 0.0).unwrap();
        assert!((p - (-1.0f64).exp()).abs() < 1e-15);
    }
}
