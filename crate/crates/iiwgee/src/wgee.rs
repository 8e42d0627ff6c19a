//! Weighted GEE under working independence.
//!
//! With an identity link, Gaussian working variance and independence working
//! correlation, the weighted estimating equation has the closed-form weighted
//! least squares solution `β̂ = (Σ w x xᵀ)⁻¹ Σ w x y` over observed visits.
//! The "naive" covariance is the cluster-robust sandwich with the weights
//! treated as fixed, which deliberately ignores the uncertainty from
//! estimating the intensity and dropout models; the bootstrap in the study
//! harness is the recommended alternative. Link and variance arguments are
//! kept in the signature as an extension point, but only the identity link is
//! implemented.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, inf_norm, SymMat};
use crate::model::Panel;
use crate::quad;
use crate::weights::WeightSet;

/// Outcome-model link. Only `Identity` is supported; the variant exists so the
/// estimating-equation generality stays visible in the interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
}

/// Basis functions of time for the marginal mean model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFn {
    /// Constant 1.
    One,
    /// `log(1 + t)`.
    Log1p,
    /// `(1 + t)^{-2}`.
    InvSq1p,
    /// `(1 + t)^{-2} log(1 + t)`.
    InvSq1pLog,
    /// `t`.
    Linear,
}

impl BasisFn {
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            BasisFn::One => 1.0,
            BasisFn::Log1p => (1.0 + t).ln(),
            BasisFn::InvSq1p => (1.0 + t).powi(-2),
            BasisFn::InvSq1pLog => (1.0 + t).powi(-2) * (1.0 + t).ln(),
            BasisFn::Linear => t,
        }
    }

    /// Closed-form `∫_0^tau` of the basis function; the quadrature path in
    /// `auc` is cross-checked against this in tests.
    pub fn integral(self, tau: f64) -> f64 {
        let u = 1.0 + tau;
        match self {
            BasisFn::One => tau,
            BasisFn::Log1p => u * u.ln() - tau,
            BasisFn::InvSq1p => 1.0 - 1.0 / u,
            BasisFn::InvSq1pLog => 1.0 - (1.0 + u.ln()) / u,
            BasisFn::Linear => 0.5 * tau * tau,
        }
    }
}

/// The outcome-model design: a vector of time basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBasis {
    pub fns: Vec<BasisFn>,
}

impl OutcomeBasis {
    pub fn new(fns: Vec<BasisFn>) -> Self {
        Self { fns }
    }

    /// `(1, log(1+t))`.
    pub fn scenario1() -> Self {
        Self::new(vec![BasisFn::One, BasisFn::Log1p])
    }

    /// `(1, (1+t)^{-2}, (1+t)^{-2} log(1+t))`.
    pub fn scenario2() -> Self {
        Self::new(vec![BasisFn::One, BasisFn::InvSq1p, BasisFn::InvSq1pLog])
    }

    pub fn dim(&self) -> usize {
        self.fns.len()
    }

    pub fn row(&self, t: f64) -> Vec<f64> {
        self.fns.iter().map(|f| f.eval(t)).collect()
    }

    pub fn mean(&self, beta: &[f64], t: f64) -> f64 {
        self.fns
            .iter()
            .zip(beta)
            .map(|(f, b)| f.eval(t) * b)
            .sum()
    }
}

/// Fitted weighted GEE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WgeeFit {
    pub beta_hat: Vec<f64>,
    /// Cluster-robust sandwich covariance with weights treated as fixed.
    pub naive_cov: SymCov,
    pub basis: OutcomeBasis,
    pub n_subjects: usize,
    pub n_visits: usize,
}

/// Serializable symmetric covariance matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymCov {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl From<SymMat> for SymCov {
    fn from(m: SymMat) -> Self {
        Self {
            dim: m.dim,
            data: m.data,
        }
    }
}

impl SymCov {
    pub fn as_mat(&self) -> SymMat {
        SymMat {
            dim: self.dim,
            data: self.data.clone(),
        }
    }
}

/// AUC estimate with a delta-method standard error and Wald 95% interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AucEstimate {
    pub value: f64,
    pub se: f64,
    pub ci: (f64, f64),
}

/// Solves the weighted estimating equation by weighted least squares.
///
/// Weight entries must be in panel visit order (as produced by
/// `compose_weights`): one entry per observed visit.
pub fn fit_wgee(
    panel: &Panel,
    weights: &WeightSet,
    basis: &OutcomeBasis,
    _link: Link,
) -> Result<WgeeFit> {
    let p = basis.dim();
    let n_visits = panel.n_visits();
    if weights.entries.len() != n_visits {
        return Err(Error::Invalid(format!(
            "weight set covers {} visits but the panel has {n_visits}",
            weights.entries.len()
        )));
    }
    let mut xtwx = SymMat::zeros(p);
    let mut xtwy = vec![0.0; p];
    let mut rows: Vec<(usize, Vec<f64>, f64, f64)> = Vec::with_capacity(n_visits);
    for e in &weights.entries {
        if !(e.weight > 0.0) {
            return Err(Error::Invalid(format!(
                "non-positive weight {} at subject index {}",
                e.weight, e.subject_idx
            )));
        }
        let s = &panel.subjects[e.subject_idx];
        let t = s.visit_times[e.visit_idx];
        let y = s.outcomes[e.visit_idx];
        let x = basis.row(t);
        xtwx.add_outer(&x, e.weight);
        for (acc, xi) in xtwy.iter_mut().zip(&x) {
            *acc += e.weight * xi * y;
        }
        rows.push((e.subject_idx, x, y, e.weight));
    }
    let beta = xtwx.solve(&xtwy)?;

    // Weighted-residual orthogonality: Σ w x r = 0 at the solution.
    let mut resid_score = vec![0.0; p];
    for (_, x, y, w) in &rows {
        let r = y - dot(&beta, x);
        for (acc, xi) in resid_score.iter_mut().zip(x) {
            *acc += w * xi * r;
        }
    }
    let scale = inf_norm(&xtwy).max(1.0);
    if inf_norm(&resid_score) > 1e-8 * scale {
        return Err(Error::Invalid(format!(
            "weighted least squares failed orthogonality: |Σ w x r| = {:.3e}",
            inf_norm(&resid_score)
        )));
    }

    let naive_cov = sandwich_cov(panel.n_subjects(), &xtwx, &beta, &rows)?;
    Ok(WgeeFit {
        beta_hat: beta,
        naive_cov: naive_cov.into(),
        basis: basis.clone(),
        n_subjects: panel.n_subjects(),
        n_visits,
    })
}

/// Cluster-robust sandwich `A⁻¹ B A⁻¹` with `A = Σ w x xᵀ` and
/// `B = Σ_i u_i u_iᵀ`, `u_i = Σ_k w x r` clustered by subject.
fn sandwich_cov(
    n_subjects: usize,
    xtwx: &SymMat,
    beta: &[f64],
    rows: &[(usize, Vec<f64>, f64, f64)],
) -> Result<SymMat> {
    let p = beta.len();
    let mut u = vec![vec![0.0; p]; n_subjects];
    for (si, x, y, w) in rows {
        let r = y - dot(beta, x);
        for (acc, xi) in u[*si].iter_mut().zip(x) {
            *acc += w * xi * r;
        }
    }
    let mut bread = xtwx.inverse()?;
    let mut meat = SymMat::zeros(p);
    for ui in &u {
        meat.add_outer(ui, 1.0);
    }
    // A^{-1} B A^{-1}
    let mut cov = SymMat::zeros(p);
    for i in 0..p {
        let bi: Vec<f64> = (0..p).map(|k| bread.get(i, k)).collect();
        let mb = meat.mat_vec(&bi);
        for j in 0..p {
            let bj: Vec<f64> = (0..p).map(|k| bread.get(j, k)).collect();
            cov.data[i * p + j] = dot(&mb, &bj);
        }
    }
    // Symmetrize round-off.
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (cov.get(i, j) + cov.get(j, i));
            cov.set(i, j, v);
        }
    }
    bread.scale(0.0);
    Ok(cov)
}

/// Standalone sandwich covariance from fit ingredients, for callers that build
/// their own designs: `rows` are `(cluster, x, y, w)`.
pub fn sandwich_from_rows(
    n_clusters: usize,
    beta: &[f64],
    rows: &[(usize, Vec<f64>, f64, f64)],
) -> Result<SymMat> {
    let p = beta.len();
    let mut a = SymMat::zeros(p);
    for (_, x, _, w) in rows {
        a.add_outer(x, *w);
    }
    sandwich_cov(n_clusters, &a, beta, rows)
}

/// AUC of the fitted mean over `[0, tau]`: `cᵀβ̂` with
/// `c_j = ∫_0^tau basis_j(t) dt` by 64-node Gauss–Legendre quadrature, plus the
/// delta-method standard error and Wald 95% interval.
pub fn auc(fit: &WgeeFit, tau: f64) -> AucEstimate {
    let c = auc_coefficients(&fit.basis, tau);
    let value = dot(&c, &fit.beta_hat);
    let var = fit.naive_cov.as_mat().quad_form(&c).max(0.0);
    let se = var.sqrt();
    AucEstimate {
        value,
        se,
        ci: (value - 1.96 * se, value + 1.96 * se),
    }
}

/// The integral vector `c` used by `auc`.
pub fn auc_coefficients(basis: &OutcomeBasis, tau: f64) -> Vec<f64> {
    basis
        .fns
        .iter()
        .map(|f| quad::integrate(0.0, tau, |t| f.eval(t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PanelSchema, SubjectRecord};
    use crate::weights::{Method, WeightEntry};

    fn toy_panel(data: &[(&str, Vec<(f64, f64)>)], tau: f64) -> Panel {
        Panel {
            subjects: data
                .iter()
                .map(|(id, visits)| SubjectRecord {
                    id: id.to_string(),
                    visit_times: visits.iter().map(|v| v.0).collect(),
                    outcomes: visits.iter().map(|v| v.1).collect(),
                    baseline: vec![],
                    aux: vec![],
                    dropout_time: None,
                    censor_time: None,
                    competing_time: None,
                })
                .collect(),
            tau,
            schema: PanelSchema::default(),
        }
    }

    fn unit_weights(panel: &Panel) -> WeightSet {
        weights_with(panel, |_| 1.0)
    }

    fn weights_with(panel: &Panel, f: impl Fn(usize) -> f64) -> WeightSet {
        let mut entries = Vec::new();
        let mut i = 0;
        for (si, s) in panel.subjects.iter().enumerate() {
            for (k, &t) in s.visit_times.iter().enumerate() {
                let w = f(i);
                entries.push(WeightEntry {
                    subject_idx: si,
                    visit_idx: k,
                    time: t,
                    rho: 1.0 / w,
                    weight: w,
                });
                i += 1;
            }
        }
        WeightSet {
            entries,
            method: Method::Iiw,
            trim_percentile: None,
        }
    }

    #[test]
    fn hand_wls_intercept_only() {
        let panel = toy_panel(&[("a", vec![(1.0, 1.0)]), ("b", vec![(2.0, 3.0)])], 4.0);
        let w = weights_with(&panel, |i| if i == 0 { 1.0 } else { 3.0 });
        let basis = OutcomeBasis::new(vec![BasisFn::One]);
        let fit = fit_wgee(&panel, &w, &basis, Link::Identity).unwrap();
        assert!((fit.beta_hat[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_reduce_to_ols() {
        let panel = toy_panel(
            &[
                ("a", vec![(0.0, 1.0), (1.0, 2.0)]),
                ("b", vec![(2.0, 2.5), (3.0, 4.0)]),
            ],
            4.0,
        );
        let basis = OutcomeBasis::new(vec![BasisFn::One, BasisFn::Linear]);
        let w1 = weights_with(&panel, |_| 2.0);
        let w2 = unit_weights(&panel);
        let f1 = fit_wgee(&panel, &w1, &basis, Link::Identity).unwrap();
        let f2 = fit_wgee(&panel, &w2, &basis, Link::Identity).unwrap();
        for (a, b) in f1.beta_hat.iter().zip(&f2.beta_hat) {
            assert!((a - b).abs() < 1e-12);
        }
        // Sandwich is also invariant to a constant weight rescaling.
        for (a, b) in f1.naive_cov.data.iter().zip(&f2.naive_cov.data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn non_positive_weight_rejected() {
        let panel = toy_panel(&[("a", vec![(1.0, 1.0)])], 4.0);
        let w = weights_with(&panel, |_| 0.0);
        let basis = OutcomeBasis::new(vec![BasisFn::One]);
        assert!(fit_wgee(&panel, &w, &basis, Link::Identity).is_err());
    }

    #[test]
    fn rank_deficiency_names_column() {
        let panel = toy_panel(&[("a", vec![(1.0, 1.0)]), ("b", vec![(1.0, 2.0)])], 4.0);
        // Two identical basis columns.
        let basis = OutcomeBasis::new(vec![BasisFn::One, BasisFn::One]);
        let err = fit_wgee(&panel, &unit_weights(&panel), &basis, Link::Identity);
        match err {
            Err(Error::RankDeficient { columns }) => assert!(!columns.is_empty()),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn sandwich_reduces_to_hc0_with_one_visit_clusters() {
        // One visit per subject, unit weights: B = Σ x xᵀ r², the
        // heteroskedasticity-robust OLS meat.
        let panel = toy_panel(
            &[
                ("a", vec![(0.0, 1.0)]),
                ("b", vec![(1.0, 2.0)]),
                ("c", vec![(2.0, 2.2)]),
                ("d", vec![(3.0, 4.1)]),
            ],
            4.0,
        );
        let basis = OutcomeBasis::new(vec![BasisFn::One, BasisFn::Linear]);
        let fit = fit_wgee(&panel, &unit_weights(&panel), &basis, Link::Identity).unwrap();

        let mut a = SymMat::zeros(2);
        let mut meat = SymMat::zeros(2);
        for s in &panel.subjects {
            let x = basis.row(s.visit_times[0]);
            let r = s.outcomes[0] - dot(&fit.beta_hat, &x);
            a.add_outer(&x, 1.0);
            meat.add_outer(&x, r * r);
        }
        let ainv = a.inverse().unwrap();
        let mut expect = SymMat::zeros(2);
        for i in 0..2 {
            let bi: Vec<f64> = (0..2).map(|k| ainv.get(i, k)).collect();
            let mb = meat.mat_vec(&bi);
            for j in 0..2 {
                let bj: Vec<f64> = (0..2).map(|k| ainv.get(j, k)).collect();
                expect.data[i * 2 + j] = dot(&mb, &bj);
            }
        }
        for (got, want) in fit.naive_cov.data.iter().zip(&expect.data) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicating_clusters_halves_covariance() {
        let base = toy_panel(
            &[
                ("a", vec![(0.0, 1.0), (1.5, 2.0)]),
                ("b", vec![(1.0, 2.5)]),
                ("c", vec![(2.0, 1.8), (3.0, 3.9)]),
            ],
            4.0,
        );
        let basis = OutcomeBasis::new(vec![BasisFn::One, BasisFn::Linear]);
        let f1 = fit_wgee(&base, &unit_weights(&base), &basis, Link::Identity).unwrap();

        let mut doubled = base.clone();
        let mut extra = base.subjects.clone();
        for s in &mut extra {
            s.id.push_str("-copy");
        }
        doubled.subjects.extend(extra);
        let f2 = fit_wgee(&doubled, &unit_weights(&doubled), &basis, Link::Identity).unwrap();
        for (c2, c1) in f2.naive_cov.data.iter().zip(&f1.naive_cov.data) {
            assert!((c2 - 0.5 * c1).abs() < 1e-10 * c1.abs().max(1.0));
        }
    }

    #[test]
    fn zero_residuals_zero_covariance() {
        let basis = OutcomeBasis::new(vec![BasisFn::One]);
        let panel = toy_panel(&[("a", vec![(0.5, 2.0)]), ("b", vec![(1.0, 2.0)])], 4.0);
        let fit = fit_wgee(&panel, &unit_weights(&panel), &basis, Link::Identity).unwrap();
        for v in &fit.naive_cov.data {
            assert!(v.abs() < 1e-20);
        }
    }

    #[test]
    fn auc_closed_forms() {
        // Scenario 1 parameters.
        let basis = OutcomeBasis::scenario1();
        let fit = WgeeFit {
            beta_hat: vec![16.4, -3.1],
            naive_cov: SymMat::zeros(2).into(),
            basis: basis.clone(),
            n_subjects: 1,
            n_visits: 1,
        };
        let a = auc(&fit, 16.0);
        let exact = 16.4 * 16.0 - 3.1 * (17.0 * (17.0f64).ln() - 16.0);
        assert!((a.value - exact).abs() < 1e-9);
        assert!((a.value - 162.69).abs() < 0.01);
        assert_eq!(a.se, 0.0);

        // Scenario 2 parameters.
        let basis2 = OutcomeBasis::scenario2();
        let fit2 = WgeeFit {
            beta_hat: vec![3.3, 4.0, 10.5],
            naive_cov: SymMat::zeros(3).into(),
            basis: basis2,
            n_subjects: 1,
            n_visits: 1,
        };
        let a2 = auc(&fit2, 3.5);
        let u: f64 = 4.5;
        let exact2 = 3.3 * 3.5 + 4.0 * (1.0 - 1.0 / u) + 10.5 * (1.0 - (1.0 + u.ln()) / u);
        assert!((a2.value - exact2).abs() < 1e-9);
        assert!((a2.value - 19.32).abs() < 0.01);

        // Zero beta gives zero AUC.
        let fit0 = WgeeFit {
            beta_hat: vec![0.0, 0.0],
            naive_cov: SymMat::zeros(2).into(),
            basis,
            n_subjects: 1,
            n_visits: 1,
        };
        assert_eq!(auc(&fit0, 16.0).value, 0.0);
    }

    #[test]
    fn quadrature_matches_closed_form_integrals() {
        for tau in [3.5, 16.0] {
            for f in [
                BasisFn::One,
                BasisFn::Log1p,
                BasisFn::InvSq1p,
                BasisFn::InvSq1pLog,
                BasisFn::Linear,
            ] {
                let q = quad::integrate(0.0, tau, |t| f.eval(t));
                let c = f.integral(tau);
                assert!(
                    (q - c).abs() <= 1e-10 * c.abs().max(1.0),
                    "{f:?} at tau={tau}: quad {q} vs closed {c}"
                );
            }
        }
    }
}
