//! Longitudinal data model: subjects observed at irregular visit times, with
//! informative dropout, noninformative censoring and (optionally) a competing
//! event, followed over a common administrative window `[0, tau]`.

mod features;
pub mod io;

pub use features::{Fallback, Feature, FeatureSource, FeatureSpec, HistoryFeatures, Transform};

use serde::{Deserialize, Serialize};

/// One subject's observed data.
///
/// `visit_times` are strictly increasing; `outcomes` holds one measurement per
/// visit. `aux` holds one auxiliary covariate vector per visit (may be empty
/// vectors). Event times are stored only when the event occurred; an absent
/// time is treated as `+∞` by the at-risk machinery. A visit exactly at the
/// dropout time is legal: dropout may be decided at a visit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub visit_times: Vec<f64>,
    pub outcomes: Vec<f64>,
    /// Baseline covariates (may include a baseline outcome measurement).
    pub baseline: Vec<f64>,
    /// Auxiliary covariates recorded at each visit.
    pub aux: Vec<Vec<f64>>,
    pub dropout_time: Option<f64>,
    pub censor_time: Option<f64>,
    pub competing_time: Option<f64>,
}

impl SubjectRecord {
    /// End of follow-up for the visit process: `min(D, G, L, tau)`.
    pub fn follow_up_end(&self, tau: f64) -> f64 {
        let mut end = tau;
        for t in [self.dropout_time, self.censor_time, self.competing_time]
            .into_iter()
            .flatten()
        {
            end = end.min(t);
        }
        end
    }

    /// Index of the last visit strictly before `t`, if any.
    pub fn last_visit_before(&self, t: f64) -> Option<usize> {
        // partition_point gives the count of visits with time < t.
        let k = self.visit_times.partition_point(|&v| v < t);
        k.checked_sub(1)
    }
}

/// Column names for the covariates carried by a panel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub baseline: Vec<String>,
    pub aux: Vec<String>,
}

/// A collection of subjects sharing the administrative end `tau` and schema.
/// Immutable after construction; all estimators read it concurrently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Panel {
    pub subjects: Vec<SubjectRecord>,
    pub tau: f64,
    pub schema: PanelSchema,
}

impl Panel {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_visits(&self) -> usize {
        self.subjects.iter().map(|s| s.visit_times.len()).sum()
    }

    /// Subject-resampled copy (cluster bootstrap). Each resampled copy is an
    /// independent cluster even when it duplicates an original subject.
    pub fn resample(&self, indices: &[usize]) -> Panel {
        Panel {
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            tau: self.tau,
            schema: self.schema.clone(),
        }
    }
}

/// A single validation failure, naming the subject and the violated rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub subject_id: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "subject {}: {}", self.subject_id, self.rule)
    }
}

/// Checks every `SubjectRecord` invariant; returns an empty list iff the panel
/// is valid. Purely diagnostic: never errors.
pub fn validate_panel(panel: &Panel) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |id: &str, rule: String| {
        out.push(Violation {
            subject_id: id.to_string(),
            rule,
        })
    };
    if panel.subjects.is_empty() {
        push("<panel>", "panel has no subjects".into());
    }
    if !(panel.tau > 0.0) {
        push("<panel>", format!("tau must be > 0 (got {})", panel.tau));
    }
    for s in &panel.subjects {
        if s.outcomes.len() != s.visit_times.len() {
            push(
                &s.id,
                format!(
                    "outcomes length {} does not match visit count {}",
                    s.outcomes.len(),
                    s.visit_times.len()
                ),
            );
        }
        if !s.aux.is_empty() && s.aux.len() != s.visit_times.len() {
            push(
                &s.id,
                format!(
                    "aux covariate rows {} do not match visit count {}",
                    s.aux.len(),
                    s.visit_times.len()
                ),
            );
        }
        for w in s.visit_times.windows(2) {
            if !(w[1] > w[0]) {
                push(&s.id, "non-increasing visit times".into());
                break;
            }
        }
        for (name, t) in [
            ("dropout_time", s.dropout_time),
            ("censor_time", s.censor_time),
            ("competing_time", s.competing_time),
        ] {
            if let Some(t) = t {
                if !(t > 0.0) {
                    push(&s.id, format!("{name} must be > 0 (got {t})"));
                }
            }
        }
        let end = s.follow_up_end(panel.tau);
        for &v in &s.visit_times {
            if v < 0.0 {
                push(&s.id, "negative visit time".into());
            } else if v > end {
                // A visit at the dropout time itself is allowed; one after the
                // end of follow-up is not.
                let rule = match (s.censor_time, s.dropout_time) {
                    (Some(g), _) if v > g => "visit after censoring".to_string(),
                    (_, Some(d)) if v > d => "visit after dropout".to_string(),
                    _ => format!("visit at {v} after end of follow-up {end}"),
                };
                push(&s.id, rule);
            }
        }
    }
    out
}

/// At-risk indicator `ζ(t)`: 1 iff `D > t`, `G > t`, `L ≥ t` and `t ≤ tau`.
/// Absent event times count as `+∞`. Note the deliberate asymmetry: dropout
/// and censoring end the at-risk period at their instant, the competing event
/// only after it.
pub fn at_risk(subject: &SubjectRecord, t: f64, tau: f64) -> u8 {
    debug_assert!(t >= 0.0);
    let d_ok = subject.dropout_time.map_or(true, |d| d > t);
    let g_ok = subject.censor_time.map_or(true, |g| g > t);
    let l_ok = subject.competing_time.map_or(true, |l| l >= t);
    u8::from(d_ok && g_ok && l_ok && t <= tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(visits: &[f64], outcomes: &[f64]) -> SubjectRecord {
        SubjectRecord {
            id: "s".into(),
            visit_times: visits.to_vec(),
            outcomes: outcomes.to_vec(),
            baseline: vec![],
            aux: vec![],
            dropout_time: None,
            censor_time: None,
            competing_time: None,
        }
    }

    fn panel_of(s: SubjectRecord, tau: f64) -> Panel {
        Panel {
            subjects: vec![s],
            tau,
            schema: PanelSchema::default(),
        }
    }

    #[test]
    fn validate_flags_unordered_visits() {
        let p = panel_of(subject(&[1.0, 3.0, 2.0], &[0.0, 0.0, 0.0]), 10.0);
        let v = validate_panel(&p);
        assert!(v.iter().any(|x| x.rule.contains("non-increasing")));
    }

    #[test]
    fn validate_allows_visit_at_dropout() {
        let mut s = subject(&[5.0], &[1.0]);
        s.dropout_time = Some(5.0);
        assert!(validate_panel(&panel_of(s, 10.0)).is_empty());
    }

    #[test]
    fn validate_flags_visit_after_censoring() {
        let mut s = subject(&[6.0], &[1.0]);
        s.censor_time = Some(5.0);
        let v = validate_panel(&panel_of(s, 10.0));
        assert!(v.iter().any(|x| x.rule == "visit after censoring"));
    }

    #[test]
    fn at_risk_event_time_conventions() {
        let tau = 10.0;
        let mut s = subject(&[], &[]);
        s.dropout_time = Some(4.0);
        // Dropout excludes its own instant.
        assert_eq!(at_risk(&s, 4.0, tau), 0);
        assert_eq!(at_risk(&s, 3.999, tau), 1);

        let mut s = subject(&[], &[]);
        s.competing_time = Some(4.0);
        // Competing event is inclusive at its instant.
        assert_eq!(at_risk(&s, 4.0, tau), 1);
        assert_eq!(at_risk(&s, 4.001, tau), 0);

        // Administrative end.
        let s = subject(&[], &[]);
        assert_eq!(at_risk(&s, tau, tau), 1);
        assert_eq!(at_risk(&s, tau + 1.0, tau), 0);
    }

    #[test]
    fn at_risk_non_increasing_in_t() {
        let mut s = subject(&[], &[]);
        s.dropout_time = Some(3.0);
        s.censor_time = Some(7.0);
        let tau = 10.0;
        let mut prev = 1;
        for i in 0..=100 {
            let t = i as f64 * 0.1;
            let cur = at_risk(&s, t, tau);
            assert!(cur <= prev, "at_risk increased at t={t}");
            prev = cur;
        }
    }
}
