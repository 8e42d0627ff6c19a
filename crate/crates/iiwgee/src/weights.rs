//! Estimating-equation weights: composition, stabilization and trimming.
//!
//! Every observed visit gets `ρ = intensity factor × dropout survival ÷ h` and
//! enters the weighted GEE with weight `1/ρ`. The dropout survival factor is
//! included only for the combined method; the two inverse-intensity-only
//! comparators differ in how their intensity model treated dropout, not in the
//! weight formula.

use serde::{Deserialize, Serialize};

use crate::dropout::{dropout_odds, survival_given_no_visit, DropoutFit, POSITIVITY_FLOOR};
use crate::error::{Error, Result};
use crate::intensity::{predict_intensity_factor, IntensityFit};
use crate::model::{FeatureSpec, Panel};

/// Weighting method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Inverse intensity only, with the intensity model ignoring dropout
    /// entirely (subjects treated as followed to `tau` unless censored).
    IiwNid,
    /// Inverse intensity only, intensity model respecting dropout.
    Iiw,
    /// Inverse intensity times inverse probability of not having dropped out.
    IiwXIpw,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::IiwNid => "IIW-NID",
            Method::Iiw => "IIW",
            Method::IiwXIpw => "IIWxIPW",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Weight stabilizer `h(t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Stabilizer {
    /// `h ≡ 1` (the simulation default).
    Unit,
    /// Locally constant smooth of the raw inverse weights over time:
    /// an Epanechnikov-kernel moving average over the nearest `span` fraction
    /// of points, looked up at arbitrary times.
    LocallyConstant {
        span: f64,
        /// Sorted support: `(time, value)` pairs the smoother averages over.
        points: Vec<(f64, f64)>,
    },
}

/// Builds a stabilizing function from visit times and raw values.
///
/// `Unit` ignores the inputs; `LocallyConstant` requires at least 10 points.
pub fn stabilize(times: &[f64], values: &[f64], locally_constant: bool) -> Result<Stabilizer> {
    if !locally_constant {
        return Ok(Stabilizer::Unit);
    }
    if times.len() < 10 {
        return Err(Error::Invalid(format!(
            "locally constant stabilizer needs at least 10 points, got {}",
            times.len()
        )));
    }
    let mut points: Vec<(f64, f64)> = times.iter().copied().zip(values.iter().copied()).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Stabilizer::LocallyConstant { span: 0.75, points })
}

impl Stabilizer {
    /// Evaluates `h(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Stabilizer::Unit => 1.0,
            Stabilizer::LocallyConstant { span, points } => {
                let n = points.len();
                let k = ((span * n as f64).ceil() as usize).clamp(2, n);
                // Nearest-window lookup: the k points closest to t in time.
                let mut hi = points.partition_point(|p| p.0 < t);
                let mut lo = hi;
                while hi - lo < k {
                    let take_left = match (lo.checked_sub(1), points.get(hi)) {
                        (Some(l), Some(r)) => (t - points[l].0) <= (r.0 - t),
                        (Some(_), None) => true,
                        (None, Some(_)) => false,
                        (None, None) => break,
                    };
                    if take_left {
                        lo -= 1;
                    } else {
                        hi += 1;
                    }
                }
                let window = &points[lo..hi];
                let bw = window
                    .iter()
                    .map(|p| (p.0 - t).abs())
                    .fold(0.0f64, f64::max)
                    .max(1e-300);
                let mut wsum = 0.0;
                let mut acc = 0.0;
                for p in window {
                    let u = (p.0 - t) / bw;
                    let w = 0.75 * (1.0 - u * u).max(0.0);
                    wsum += w;
                    acc += w * p.1;
                }
                if wsum > 0.0 {
                    acc / wsum
                } else {
                    // All mass at the boundary of the kernel: fall back to a
                    // plain window mean.
                    window.iter().map(|p| p.1).sum::<f64>() / window.len() as f64
                }
            }
        }
    }
}

/// One visit's weight ingredients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightEntry {
    pub subject_idx: usize,
    pub visit_idx: usize,
    pub time: f64,
    /// `ρ` after stabilization: intensity factor × dropout survival ÷ h.
    pub rho: f64,
    /// `1/ρ`, possibly capped by trimming.
    pub weight: f64,
}

/// Weights for every observed visit in a panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSet {
    pub entries: Vec<WeightEntry>,
    pub method: Method,
    pub trim_percentile: Option<f64>,
}

/// Composes visit-level weights per the selected method.
///
/// For `IiwXIpw` a dropout fit must be supplied unless the panel has no
/// dropout events at all, in which case the survival factor is 1 and the
/// result coincides with `Iiw`.
pub fn compose_weights(
    panel: &Panel,
    intensity_fit: &IntensityFit,
    intensity_spec: &FeatureSpec,
    dropout_fit: Option<&DropoutFit>,
    dropout_spec: &FeatureSpec,
    method: Method,
    locally_constant_stabilizer: bool,
) -> Result<WeightSet> {
    let mut raw_inv = Vec::new();
    let mut entries = Vec::new();
    for (si, s) in panel.subjects.iter().enumerate() {
        for (k, &t) in s.visit_times.iter().enumerate() {
            let feats = intensity_spec.history(s, t)?;
            let intensity_factor = predict_intensity_factor(intensity_fit, &feats);
            let survival = match (method, dropout_fit, k.checked_sub(1)) {
                (Method::IiwXIpw, Some(fit), Some(prev)) => {
                    let odds = dropout_odds(fit, &dropout_spec.at_visit(s, prev)?);
                    // The visit hazard over (T_{k-1}, T_k] is frozen at the
                    // last visit's history, which is exactly the history just
                    // before T_k when no visit intervenes.
                    survival_given_no_visit(
                        t,
                        s.visit_times[prev],
                        intensity_factor,
                        intensity_fit.constant_rate,
                        odds,
                        POSITIVITY_FLOOR,
                    )?
                }
                // First visit: dropout can only be decided at a visit, so the
                // subject cannot have dropped out before it.
                (Method::IiwXIpw, _, _) => 1.0,
                _ => 1.0,
            };
            let rho_raw = intensity_factor * survival;
            if !(rho_raw > 0.0) {
                return Err(Error::Positivity(format!(
                    "non-positive rho {rho_raw} for subject {} at t = {t}",
                    s.id
                )));
            }
            raw_inv.push(1.0 / rho_raw);
            entries.push(WeightEntry {
                subject_idx: si,
                visit_idx: k,
                time: t,
                rho: rho_raw,
                weight: 1.0 / rho_raw,
            });
        }
    }

    // The stabilizer smooths the raw inverse weights over time; dividing rho
    // by h(t) then rescales each weight by the local level.
    let times: Vec<f64> = entries.iter().map(|e| e.time).collect();
    let h = stabilize(&times, &raw_inv, locally_constant_stabilizer)?;
    apply_stabilizer(&mut entries, &h)?;
    Ok(WeightSet {
        entries,
        method,
        trim_percentile: None,
    })
}

fn apply_stabilizer(entries: &mut [WeightEntry], h: &Stabilizer) -> Result<()> {
    for e in entries.iter_mut() {
        let hv = h.eval(e.time);
        if !(hv > 0.0) {
            return Err(Error::Invalid(format!(
                "stabilizer must be positive, got h({}) = {hv}",
                e.time
            )));
        }
        e.rho /= hv;
        e.weight = 1.0 / e.rho;
    }
    Ok(())
}

/// Caps `weights` at the nearest-rank `percentile`: the order statistic at
/// index `ceil(p/100 · n)`. `percentile = 100` is the identity.
pub fn trim(weights: &[f64], percentile: f64) -> Vec<f64> {
    assert!(
        percentile > 0.0 && percentile <= 100.0,
        "percentile must be in (0, 100]"
    );
    assert!(!weights.is_empty(), "cannot trim an empty weight list");
    let n = weights.len();
    let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cap = sorted[rank - 1];
    weights.iter().map(|&w| w.min(cap)).collect()
}

impl WeightSet {
    /// Returns a copy with weights capped at the pooled nearest-rank
    /// percentile across all visits.
    pub fn trimmed(&self, percentile: f64) -> WeightSet {
        let ws: Vec<f64> = self.entries.iter().map(|e| e.weight).collect();
        let capped = trim(&ws, percentile);
        let entries = self
            .entries
            .iter()
            .zip(capped)
            .map(|(e, w)| WeightEntry { weight: w, ..e.clone() })
            .collect();
        WeightSet {
            entries,
            method: self.method,
            trim_percentile: Some(percentile),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    /// CSV export `id,time,rho,weight,method`.
    pub fn to_csv(&self, panel: &Panel) -> String {
        use crate::model::io::fmt_f64;
        let mut out = String::from("id,time,rho,weight,method\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                panel.subjects[e.subject_idx].id,
                fmt_f64(e.time),
                fmt_f64(e.rho),
                fmt_f64(e.weight),
                self.method
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trim_examples() {
        // Identity at p = 100.
        assert_eq!(trim(&[1.0, 2.0, 100.0], 100.0), vec![1.0, 2.0, 100.0]);
        // Nearest rank: ceil(0.5 * 3) = 2nd order statistic.
        assert_eq!(trim(&[1.0, 2.0, 100.0], 50.0), vec![1.0, 2.0, 2.0]);
        // ceil(0.999 * 3) = 3 -> cap is the max, unchanged.
        assert_eq!(trim(&[5.0, 1.0, 9.0], 99.9), vec![5.0, 1.0, 9.0]);
    }

    #[test]
    fn trim_idempotent_and_monotone() {
        let w = vec![3.0, 1.0, 4.0, 1.5, 9.0, 2.6, 5.3, 5.8];
        for p in [40.0, 75.0, 99.0, 100.0] {
            let once = trim(&w, p);
            assert_eq!(trim(&once, p), once);
        }
        let lo = trim(&w, 50.0);
        let hi = trim(&w, 90.0);
        for (a, b) in lo.iter().zip(&hi) {
            assert!(a <= b);
        }
    }

    #[test]
    fn unit_stabilizer_is_one() {
        let h = stabilize(&[1.0, 2.0], &[5.0, 6.0], false).unwrap();
        assert_eq!(h.eval(0.0), 1.0);
        assert_eq!(h.eval(17.3), 1.0);
    }

    #[test]
    fn locally_constant_of_a_constant_is_that_constant() {
        let times: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let vals = vec![2.5; 50];
        let h = stabilize(&times, &vals, true).unwrap();
        for &t in &[0.0, 10.2, 49.0] {
            assert!((h.eval(t) - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn locally_constant_tracks_a_line_in_the_interior() {
        let times: Vec<f64> = (0..400).map(|i| i as f64 * 0.04).collect();
        let vals: Vec<f64> = times.iter().map(|t| 1.0 + 0.5 * t).collect();
        let h = stabilize(&times, &vals, true).unwrap();
        // Away from boundaries the symmetric kernel reproduces the line.
        for &t in &[7.0, 8.0, 9.0] {
            let expect = 1.0 + 0.5 * t;
            assert!(
                (h.eval(t) - expect).abs() / expect < 0.05,
                "h({t}) = {} vs {expect}",
                h.eval(t)
            );
        }
    }

    #[test]
    fn needs_ten_points() {
        assert!(stabilize(&[1.0; 5], &[1.0; 5], true).is_err());
    }
}
