//! Declarative visit-history feature specifications.
//!
//! Features are functions of a subject's observed history, evaluated either
//! just before an arbitrary time `t` (for intensity risk sets and weights) or
//! at a visit itself (for the dropout model, whose covariates are measured at
//! the visit where the dropout decision happens). Keeping the specification
//! declarative (source, transform, fallback) makes fits reproducible from CLI
//! config files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SubjectRecord;

/// What value a history feature falls back to when a subject has no prior
/// visit at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Use the named baseline covariate (e.g. a baseline outcome measurement).
    Baseline(usize),
    /// Use a fixed value.
    Value(f64),
    /// Refuse to evaluate: surfaces as an error.
    Error,
}

/// Where a feature's raw value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Constant 1 (explicit intercept for the dropout model).
    One,
    /// Outcome at the most recent visit strictly before `t`. At a visit this
    /// is the previous visit's outcome, never the one being recorded.
    LastOutcome(Fallback),
    /// Outcome measured at the visit itself (visit-anchored evaluation only).
    OutcomeAtVisit,
    /// Number of visits strictly before `t`.
    VisitCount,
    /// Time since the most recent visit strictly before `t`; falls back to `t`
    /// (time since study entry) when there is none.
    TimeSinceLastVisit,
    /// Baseline covariate by column index.
    Baseline(usize),
    /// Auxiliary covariate at the most recent visit strictly before `t`.
    LastAux(usize, Fallback),
    /// Auxiliary covariate at the visit itself (visit-anchored only).
    AuxAtVisit(usize),
}

/// Elementwise transform applied to the raw source value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `log(max(1 + y, floor))`; the floor keeps the transform finite for
    /// outcomes at or below -1.
    Log1pFloor { floor: f64 },
}

impl Transform {
    #[inline]
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::Log1pFloor { floor } => (1.0 + y).max(floor).ln(),
        }
    }
}

/// One feature: a source and a transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub source: FeatureSource,
    pub transform: Transform,
}

impl Feature {
    pub fn new(source: FeatureSource, transform: Transform) -> Self {
        Self { source, transform }
    }
}

/// An ordered list of features; evaluates to one covariate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub features: Vec<Feature>,
}

/// A feature vector evaluated from a subject's history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryFeatures {
    pub values: Vec<f64>,
}

impl FeatureSpec {
    pub fn new(features: Vec<Feature>) -> Self {
        Self { features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// The paper's simulation intensity covariate: `log(max(1 + Y_last, 0.01))`
    /// with the baseline outcome (column `y0_col`) standing in before the
    /// first visit.
    pub fn lagged_log_outcome(y0_col: usize) -> Self {
        Self::new(vec![Feature::new(
            FeatureSource::LastOutcome(Fallback::Baseline(y0_col)),
            Transform::Log1pFloor { floor: 0.01 },
        )])
    }

    /// The simulation dropout design: intercept plus the outcome at the visit.
    pub fn dropout_intercept_outcome() -> Self {
        Self::new(vec![
            Feature::new(FeatureSource::One, Transform::Identity),
            Feature::new(FeatureSource::OutcomeAtVisit, Transform::Identity),
        ])
    }

    /// True iff every source is constant between visits, so the feature path
    /// is a step function changing only at visits. The interval sweep in the
    /// intensity fit requires this.
    pub fn is_visit_anchored(&self) -> bool {
        self.features.iter().all(|f| {
            matches!(
                f.source,
                FeatureSource::One
                    | FeatureSource::LastOutcome(_)
                    | FeatureSource::VisitCount
                    | FeatureSource::Baseline(_)
                    | FeatureSource::LastAux(..)
            )
        })
    }

    /// Features just before time `t`, using only visits strictly before `t`.
    pub fn history(&self, subject: &SubjectRecord, t: f64) -> Result<HistoryFeatures> {
        let last = subject.last_visit_before(t);
        self.eval(subject, t, last, None)
    }

    /// Features anchored at visit `k` (the outcome and aux covariates measured
    /// at that visit are available).
    pub fn at_visit(&self, subject: &SubjectRecord, k: usize) -> Result<HistoryFeatures> {
        let t = subject.visit_times[k];
        let last = k.checked_sub(1);
        self.eval(subject, t, last, Some(k))
    }

    fn eval(
        &self,
        subject: &SubjectRecord,
        t: f64,
        last: Option<usize>,
        at: Option<usize>,
    ) -> Result<HistoryFeatures> {
        let mut values = Vec::with_capacity(self.features.len());
        for f in &self.features {
            let raw = match f.source {
                FeatureSource::One => 1.0,
                FeatureSource::LastOutcome(fb) => match last {
                    Some(k) => subject.outcomes[k],
                    None => self.fallback(subject, fb, "last outcome")?,
                },
                FeatureSource::OutcomeAtVisit => match at {
                    Some(k) => subject.outcomes[k],
                    None => {
                        return Err(Error::Invalid(
                            "outcome-at-visit feature requires visit-anchored evaluation".into(),
                        ))
                    }
                },
                FeatureSource::VisitCount => last.map_or(0.0, |k| (k + 1) as f64),
                FeatureSource::TimeSinceLastVisit => {
                    last.map_or(t, |k| t - subject.visit_times[k])
                }
                FeatureSource::Baseline(j) => self.baseline(subject, j)?,
                FeatureSource::LastAux(j, fb) => match last {
                    Some(k) => self.aux(subject, k, j)?,
                    None => self.fallback(subject, fb, "last aux covariate")?,
                },
                FeatureSource::AuxAtVisit(j) => match at {
                    Some(k) => self.aux(subject, k, j)?,
                    None => {
                        return Err(Error::Invalid(
                            "aux-at-visit feature requires visit-anchored evaluation".into(),
                        ))
                    }
                },
            };
            values.push(f.transform.apply(raw));
        }
        Ok(HistoryFeatures { values })
    }

    fn fallback(&self, subject: &SubjectRecord, fb: Fallback, what: &str) -> Result<f64> {
        match fb {
            Fallback::Baseline(j) => self.baseline(subject, j),
            Fallback::Value(v) => Ok(v),
            Fallback::Error => Err(Error::Invalid(format!(
                "no history available: subject {} has no prior visit and the {what} feature has no fallback",
                subject.id
            ))),
        }
    }

    fn baseline(&self, subject: &SubjectRecord, j: usize) -> Result<f64> {
        subject.baseline.get(j).copied().ok_or_else(|| {
            Error::Invalid(format!(
                "subject {} has no baseline covariate {j}",
                subject.id
            ))
        })
    }

    fn aux(&self, subject: &SubjectRecord, k: usize, j: usize) -> Result<f64> {
        subject
            .aux
            .get(k)
            .and_then(|row| row.get(j))
            .copied()
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "subject {} has no aux covariate {j} at visit {k}",
                    subject.id
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject() -> SubjectRecord {
        SubjectRecord {
            id: "a".into(),
            visit_times: vec![1.0, 2.0],
            outcomes: vec![5.0, 7.0],
            baseline: vec![4.0],
            aux: vec![],
            dropout_time: None,
            censor_time: None,
            competing_time: None,
        }
    }

    fn last_outcome_spec(fb: Fallback, transform: Transform) -> FeatureSpec {
        FeatureSpec::new(vec![Feature::new(FeatureSource::LastOutcome(fb), transform)])
    }

    #[test]
    fn last_outcome_between_visits() {
        let spec = last_outcome_spec(Fallback::Error, Transform::Identity);
        let f = spec.history(&subject(), 2.5).unwrap();
        assert_eq!(f.values, vec![7.0]);
    }

    #[test]
    fn log_transform_of_last_outcome() {
        let spec = last_outcome_spec(Fallback::Error, Transform::Log1pFloor { floor: 0.01 });
        let f = spec.history(&subject(), 2.5).unwrap();
        assert!((f.values[0] - (8.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn floor_engages_below_minus_one() {
        let mut s = subject();
        s.visit_times = vec![1.0];
        s.outcomes = vec![-3.0];
        let spec = last_outcome_spec(Fallback::Error, Transform::Log1pFloor { floor: 0.01 });
        let f = spec.history(&s, 1.5).unwrap();
        assert!((f.values[0] - (0.01f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn fallbacks_before_first_visit() {
        let s = subject();
        let spec = last_outcome_spec(Fallback::Baseline(0), Transform::Identity);
        assert_eq!(spec.history(&s, 0.5).unwrap().values, vec![4.0]);

        let spec = last_outcome_spec(Fallback::Value(0.0), Transform::Identity);
        assert_eq!(spec.history(&s, 0.5).unwrap().values, vec![0.0]);

        let spec = last_outcome_spec(Fallback::Error, Transform::Identity);
        let err = spec.history(&s, 0.5).unwrap_err();
        assert!(err.to_string().contains("no history available"));
    }

    #[test]
    fn history_ignores_data_at_or_after_t() {
        // Predictability: evaluation at t must not see the visit at t.
        let s = subject();
        let spec = last_outcome_spec(Fallback::Baseline(0), Transform::Identity);
        let at_second_visit = spec.history(&s, 2.0).unwrap();
        assert_eq!(at_second_visit.values, vec![5.0]);

        // Truncating everything at/after t=2 leaves the evaluation unchanged.
        let mut truncated = s.clone();
        truncated.visit_times.truncate(1);
        truncated.outcomes.truncate(1);
        assert_eq!(
            spec.history(&truncated, 2.0).unwrap(),
            at_second_visit
        );
    }

    #[test]
    fn visit_anchored_evaluation_sees_current_outcome() {
        let s = subject();
        let spec = FeatureSpec::dropout_intercept_outcome();
        let f = spec.at_visit(&s, 1).unwrap();
        assert_eq!(f.values, vec![1.0, 7.0]);
        // While the lagged outcome at the same visit is the previous one.
        let lag = last_outcome_spec(Fallback::Error, Transform::Identity);
        assert_eq!(lag.at_visit(&s, 1).unwrap().values, vec![5.0]);
    }

    #[test]
    fn counts_and_gaps() {
        let s = subject();
        let spec = FeatureSpec::new(vec![
            Feature::new(FeatureSource::VisitCount, Transform::Identity),
            Feature::new(FeatureSource::TimeSinceLastVisit, Transform::Identity),
        ]);
        assert_eq!(spec.history(&s, 1.5).unwrap().values, vec![1.0, 0.5]);
        assert_eq!(spec.history(&s, 0.5).unwrap().values, vec![0.0, 0.5]);
        assert!(!spec.is_visit_anchored());
    }
}
