//! Parameter-growth (UBEBS), detectability (i-IOSS) and observability certificates.
//!
//! Certificates are supplied by the user. This module stores them, checks their
//! definiteness, and verifies their defining inequalities at random point pairs.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MheError, Result};
use crate::linalg::{quad, require_psd, require_spd, wnorm};
use crate::model::{BoxSet, ConstraintSets, SystemModel, Trajectory};

/// Absolute slack on sampled inequality margins.
pub const SAMPLE_TOL: f64 = 1e-9;

pub type VFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;

/// V with ‖z−z̃‖_{V_low} ≤ V(z,z̃) ≤ ‖z−z̃‖_{V_high} and
/// V(g(z,u,w), g(z̃,u,w̃)) − V(z,z̃) ≤ ‖w−w̃‖_{Q_v}.
#[derive(Clone)]
pub struct ParamUbebsCertificate {
    pub v_low: DMatrix<f64>,
    pub v_high: DMatrix<f64>,
    pub q_v: DMatrix<f64>,
    /// Custom V; `None` means ‖z−z̃‖_{V_high}.
    pub v_eval: Option<VFn>,
}

impl fmt::Debug for ParamUbebsCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamUbebsCertificate")
            .field("v_low", &self.v_low)
            .field("v_high", &self.v_high)
            .field("q_v", &self.q_v)
            .field("custom_v", &self.v_eval.is_some())
            .finish()
    }
}

impl ParamUbebsCertificate {
    pub fn new(v_low: DMatrix<f64>, v_high: DMatrix<f64>, q_v: DMatrix<f64>) -> Result<Self> {
        let c = Self {
            v_low,
            v_high,
            q_v,
            v_eval: None,
        };
        c.validate()?;
        Ok(c)
    }

    /// For g(z,u,w) = z + B_z w: V = ‖z−z̃‖ and Q_v = B_zᵀB_z.
    pub fn additive(b_z: &DMatrix<f64>) -> Self {
        let n_z = b_z.nrows();
        Self {
            v_low: DMatrix::identity(n_z, n_z),
            v_high: DMatrix::identity(n_z, n_z),
            q_v: b_z.transpose() * b_z,
            v_eval: None,
        }
    }

    pub fn with_v(mut self, v: VFn) -> Self {
        self.v_eval = Some(v);
        self
    }

    pub fn validate(&self) -> Result<()> {
        require_spd("V_low", &self.v_low)?;
        require_spd("V_high", &self.v_high)?;
        require_psd("Q_v", &self.q_v)?;
        check_dim("V_high", self.v_low.nrows(), self.v_high.nrows())
    }

    pub fn v(&self, z: &DVector<f64>, zt: &DVector<f64>) -> f64 {
        match &self.v_eval {
            Some(f) => f(z, zt),
            None => wnorm(&(z - zt), &self.v_high),
        }
    }
}

/// W(x,x̃) = ‖x−x̃‖²_{P_w}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IossCertificate {
    pub p_w: DMatrix<f64>,
    pub w_low: DMatrix<f64>,
    pub w_high: DMatrix<f64>,
    pub s_w: DMatrix<f64>,
    pub q_w: DMatrix<f64>,
    pub r_w: DMatrix<f64>,
    pub eta_w: f64,
}

impl IossCertificate {
    pub fn validate(&self) -> Result<()> {
        require_spd("P_w", &self.p_w)?;
        require_spd("W_low", &self.w_low)?;
        require_spd("W_high", &self.w_high)?;
        require_spd("S_w", &self.s_w)?;
        require_spd("Q_w", &self.q_w)?;
        require_spd("R_w", &self.r_w)?;
        if !(0.0..1.0).contains(&self.eta_w) {
            return Err(MheError::InvalidParameter(format!(
                "eta_w = {} outside [0,1)",
                self.eta_w
            )));
        }
        Ok(())
    }

    pub fn w(&self, x: &DVector<f64>, xt: &DVector<f64>) -> f64 {
        quad(&(x - xt), &self.p_w).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityCertificate {
    pub s_o: DMatrix<f64>,
    pub p_o: DMatrix<f64>,
    pub q_o: DMatrix<f64>,
    pub r_o: DMatrix<f64>,
    pub eta_o: f64,
}

impl ObservabilityCertificate {
    pub fn validate(&self) -> Result<()> {
        require_spd("S_o", &self.s_o)?;
        require_spd("P_o", &self.p_o)?;
        require_spd("Q_o", &self.q_o)?;
        require_spd("R_o", &self.r_o)?;
        if !(0.0..1.0).contains(&self.eta_o) {
            return Err(MheError::InvalidParameter(format!(
                "eta_o = {} outside [0,1)",
                self.eta_o
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CertificateSet {
    pub ubebs: ParamUbebsCertificate,
    pub ioss: IossCertificate,
    pub obs: ObservabilityCertificate,
}

impl CertificateSet {
    pub fn validate(&self) -> Result<()> {
        self.ubebs.validate()?;
        self.ioss.validate()?;
        self.obs.validate()?;
        let n_x = self.ioss.p_w.nrows();
        let n_z = self.ubebs.v_low.nrows();
        let n_w = self.ioss.q_w.nrows();
        check_dim("S_w", n_z, self.ioss.s_w.nrows())?;
        check_dim("S_o", n_z, self.obs.s_o.nrows())?;
        check_dim("P_o", n_x, self.obs.p_o.nrows())?;
        check_dim("Q_v", n_w, self.ubebs.q_v.nrows())?;
        check_dim("Q_o", n_w, self.obs.q_o.nrows())?;
        check_dim("R_o", self.ioss.r_w.nrows(), self.obs.r_o.nrows())
    }

    /// Q = Q_w + Q_v + Q_o.
    pub fn q_total(&self) -> DMatrix<f64> {
        &self.ioss.q_w + &self.ubebs.q_v + &self.obs.q_o
    }

    /// R = R_w + R_o.
    pub fn r_total(&self) -> DMatrix<f64> {
        &self.ioss.r_w + &self.obs.r_o
    }

    /// Certificate for [`crate::model::ScalarToyModel::certified`] (a = 0.5, b = 1).
    ///
    /// With W = (x−x̃)² and e = x−x̃, δ = z−z̃, ω = w−w̃, the dissipation inequality
    /// (a e + ω₁)² ≤ η_w e² + s δ² + q₁ω₁² + q₂ω₂² + q₃ω₃² + r (e + δ + ω₃)²
    /// holds whenever (1+ε)a² ≤ η_w and q₁ ≥ 1 + 1/ε; here ε = 0.2, η_w = 0.3, q₁ = 6.
    /// V = |z−z̃| with Q_v = e₂e₂ᵀ is exact for z⁺ = z + w₂.
    pub fn scalar_toy() -> Self {
        let one = DMatrix::identity(1, 1);
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        CertificateSet {
            ubebs: ParamUbebsCertificate::additive(&DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0])),
            ioss: IossCertificate {
                p_w: one.clone(),
                w_low: one.clone(),
                w_high: one.clone(),
                s_w: &one * 0.01,
                q_w: diag(&[6.0, 0.01, 0.01]),
                r_w: &one * 0.01,
                eta_w: 0.3,
            },
            obs: ObservabilityCertificate {
                s_o: one.clone(),
                p_o: one.clone(),
                q_o: diag(&[0.05, 0.05, 0.05]),
                r_o: one,
                eta_o: 0.05,
            },
        }
    }
}

/// Sampling region for the sampled checks; unbounded directions are clamped.
#[derive(Debug, Clone)]
pub struct SamplingBoxes {
    pub x: BoxSet,
    pub z: BoxSet,
    pub u: BoxSet,
    pub w: BoxSet,
}

impl SamplingBoxes {
    /// Model constraint boxes with infinite entries replaced by ±`clamp`.
    pub fn from_constraints(cs: &ConstraintSets, clamp: f64) -> Self {
        let c = |b: &BoxSet| BoxSet {
            lower: b.lower.map(|v| v.max(-clamp)),
            upper: b.upper.map(|v| v.min(clamp)),
        };
        Self {
            x: c(&cs.x),
            z: c(&cs.z),
            u: c(&cs.u),
            w: c(&cs.w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub n_samples: usize,
    /// Pairs that passed the domain filter and were evaluated.
    pub n_evaluated: usize,
    pub n_violations: usize,
    /// Smallest observed RHS − LHS over all evaluated inequalities.
    pub worst_margin: f64,
}

impl ViolationReport {
    pub fn ok(&self) -> bool {
        self.n_violations == 0
    }

    fn record(&mut self, margin: f64) {
        if margin < -SAMPLE_TOL {
            self.n_violations += 1;
        }
        self.worst_margin = self.worst_margin.min(margin);
    }
}

fn sample_box(rng: &mut ChaCha8Rng, b: &BoxSet) -> DVector<f64> {
    DVector::from_fn(b.dim(), |i, _| {
        let (lo, hi) = (b.lower[i], b.upper[i]);
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    })
}

struct PointPair {
    x: DVector<f64>,
    xt: DVector<f64>,
    z: DVector<f64>,
    zt: DVector<f64>,
    u: DVector<f64>,
    w: DVector<f64>,
    wt: DVector<f64>,
}

/// Draws a pair of points in D (shared input u), rejecting points whose successors leave X×Z.
fn sample_pair(
    rng: &mut ChaCha8Rng,
    model: &dyn SystemModel,
    boxes: &SamplingBoxes,
) -> Option<PointPair> {
    let cs = model.constraints();
    let u = sample_box(rng, &boxes.u);
    let draw = |rng: &mut ChaCha8Rng| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        for _ in 0..1000 {
            let x = sample_box(rng, &boxes.x);
            let z = sample_box(rng, &boxes.z);
            let w = sample_box(rng, &boxes.w);
            if cs.x.contains(&model.f(&x, &z, &u, &w), 0.0) && cs.z.contains(&model.g(&z, &u, &w), 0.0)
            {
                return Some((x, z, w));
            }
        }
        None
    };
    let (x, z, w) = draw(rng)?;
    let (xt, zt, wt) = draw(rng)?;
    Some(PointPair {
        x,
        xt,
        z,
        zt,
        u,
        w,
        wt,
    })
}

fn empty_report(n: usize) -> ViolationReport {
    ViolationReport {
        n_samples: n,
        n_evaluated: 0,
        n_violations: 0,
        worst_margin: f64::INFINITY,
    }
}

/// Samples the sandwich and dissipation inequalities of the UBEBS certificate.
pub fn check_ubebs(
    cert: &ParamUbebsCertificate,
    model: &dyn SystemModel,
    n_samples: usize,
    seed: u64,
) -> ViolationReport {
    let boxes = SamplingBoxes::from_constraints(model.constraints(), 1.0);
    check_ubebs_in(cert, model, &boxes, n_samples, seed)
}

pub fn check_ubebs_in(
    cert: &ParamUbebsCertificate,
    model: &dyn SystemModel,
    boxes: &SamplingBoxes,
    n_samples: usize,
    seed: u64,
) -> ViolationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = empty_report(n_samples);
    for _ in 0..n_samples {
        let Some(p) = sample_pair(&mut rng, model, boxes) else {
            continue;
        };
        rep.n_evaluated += 1;
        let dz = &p.z - &p.zt;
        let v = cert.v(&p.z, &p.zt);
        rep.record(v - wnorm(&dz, &cert.v_low));
        rep.record(wnorm(&dz, &cert.v_high) - v);
        let gn = model.g(&p.z, &p.u, &p.w);
        let gnt = model.g(&p.zt, &p.u, &p.wt);
        let lhs = cert.v(&gn, &gnt) - v;
        rep.record(wnorm(&(&p.w - &p.wt), &cert.q_v) - lhs);
    }
    rep
}

/// Samples the sandwich and dissipation inequalities of the i-IOSS certificate.
pub fn check_ioss(
    cert: &IossCertificate,
    model: &dyn SystemModel,
    n_samples: usize,
    seed: u64,
) -> ViolationReport {
    let boxes = SamplingBoxes::from_constraints(model.constraints(), 1.0);
    check_ioss_in(cert, model, &boxes, n_samples, seed)
}

pub fn check_ioss_in(
    cert: &IossCertificate,
    model: &dyn SystemModel,
    boxes: &SamplingBoxes,
    n_samples: usize,
    seed: u64,
) -> ViolationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = empty_report(n_samples);
    for _ in 0..n_samples {
        let Some(p) = sample_pair(&mut rng, model, boxes) else {
            continue;
        };
        rep.n_evaluated += 1;
        let dx = &p.x - &p.xt;
        let w = cert.w(&p.x, &p.xt);
        rep.record(w - quad(&dx, &cert.w_low));
        rep.record(quad(&dx, &cert.w_high) - w);
        let fx = model.f(&p.x, &p.z, &p.u, &p.w);
        let fxt = model.f(&p.xt, &p.zt, &p.u, &p.wt);
        let dy = model.h(&p.x, &p.z, &p.u, &p.w) - model.h(&p.xt, &p.zt, &p.u, &p.wt);
        let rhs = cert.eta_w * w
            + quad(&(&p.z - &p.zt), &cert.s_w)
            + quad(&(&p.w - &p.wt), &cert.q_w)
            + quad(&dy, &cert.r_w);
        rep.record(rhs - cert.w(&fx, &fxt));
    }
    rep
}

/// RHS − LHS of the observable-pair inequality
/// ‖z₀−z̃₀‖²_{S_o} ≤ η_o^T‖x₀−x̃₀‖²_{P_o} + Σ‖w_j−w̃_j‖²_{Q_o} + Σ‖y_j−ỹ_j‖²_{R_o}.
pub fn membership_margin(cert: &ObservabilityCertificate, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_dim("trajectory pair length", a.len(), b.len())?;
    let t = a.len();
    if t == 0 {
        return Ok(0.0);
    }
    let (ra, rb) = (&a.records[0], &b.records[0]);
    let lhs = quad(&(&ra.z - &rb.z), &cert.s_o);
    let mut rhs = cert.eta_o.powi(t as i32) * quad(&(&ra.x - &rb.x), &cert.p_o);
    for (p, q) in a.records.iter().zip(&b.records) {
        rhs += quad(&(&p.w - &q.w), &cert.q_o) + quad(&(&p.y - &q.y), &cert.r_o);
    }
    Ok(rhs - lhs)
}

/// Exact test whether the pair is an observable trajectory pair of length T.
pub fn membership_e(cert: &ObservabilityCertificate, a: &Trajectory, b: &Trajectory) -> Result<bool> {
    Ok(membership_margin(cert, a, b)? >= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_truth, LinearModel, ScalarToyModel};

    fn scalar_linear(a: f64) -> LinearModel {
        LinearModel::scalar(a, 0.0, 1.0)
    }

    #[test]
    fn additive_ubebs_has_no_violations() {
        let m = ScalarToyModel::certified();
        let cert = CertificateSet::scalar_toy().ubebs;
        for seed in 0..3 {
            assert!(check_ubebs(&cert, &m, 500, seed).ok());
        }
    }

    #[test]
    fn doubling_parameter_dynamics_violates_ubebs() {
        let m = LinearModel::scalar(0.5, 0.0, 2.0);
        let cert = ParamUbebsCertificate::additive(&DMatrix::zeros(1, 1));
        let rep = check_ubebs(&cert, &m, 200, 1);
        assert!(rep.n_violations > 0);
        assert!(rep.worst_margin < 0.0);
    }

    #[test]
    fn scalar_linear_ioss_certificate() {
        // (a e + ω)² ≤ (1+ε)a² e² + (1+1/ε) ω²
        let a = 0.7;
        let eps = 0.5;
        let one = DMatrix::identity(1, 1);
        let cert = IossCertificate {
            p_w: one.clone(),
            w_low: one.clone(),
            w_high: one.clone(),
            s_w: &one * 1e-3,
            q_w: &one * (1.0 + 1.0 / eps),
            r_w: &one * 1e-3,
            eta_w: (1.0 + eps) * a * a,
        };
        assert!(check_ioss(&cert, &scalar_linear(a), 1000, 3).ok());
        let mut bad = cert.clone();
        bad.eta_w = 0.0;
        assert!(check_ioss(&bad, &scalar_linear(a), 1000, 3).n_violations > 0);
    }

    #[test]
    fn toy_certificate_holds() {
        let certs = CertificateSet::scalar_toy();
        certs.validate().unwrap();
        let m = ScalarToyModel::certified();
        let boxes = SamplingBoxes::from_constraints(m.constraints(), 5.0);
        assert!(check_ioss_in(&certs.ioss, &m, &boxes, 2000, 11).ok());
    }

    #[test]
    fn reports_reproducible() {
        let certs = CertificateSet::scalar_toy();
        let m = ScalarToyModel::certified();
        assert_eq!(check_ioss(&certs.ioss, &m, 100, 5), check_ioss(&certs.ioss, &m, 100, 5));
    }

    fn traj(model: &dyn SystemModel, x0: f64, z0: f64, w: &[DVector<f64>]) -> Trajectory {
        let u = vec![DVector::zeros(0); w.len()];
        simulate_truth(model, &DVector::from_element(1, x0), &DVector::from_element(1, z0), &u, w).unwrap()
    }

    #[test]
    fn identical_trajectories_are_members() {
        let m = ScalarToyModel::certified();
        let w = vec![DVector::zeros(3); 10];
        let a = traj(&m, 0.2, 0.4, &w);
        let cert = CertificateSet::scalar_toy().obs;
        assert_eq!(membership_margin(&cert, &a, &a).unwrap(), 0.0);
        assert!(membership_e(&cert, &a, &a).unwrap());
    }

    #[test]
    fn invisible_parameter_not_member() {
        // z does not enter the output: the initial parameter difference is never seen.
        let m = scalar_linear(0.5);
        let w = vec![DVector::zeros(1); 40];
        let a = traj(&m, 0.2, 0.4, &w);
        let b = traj(&m, 0.2, 0.9, &w);
        let cert = CertificateSet::scalar_toy().obs;
        let cert = ObservabilityCertificate {
            q_o: DMatrix::identity(1, 1),
            ..cert
        };
        assert!(!membership_e(&cert, &a, &b).unwrap());
    }

    #[test]
    fn visible_parameter_member() {
        // y = x + z with x₀ equal: output difference is δ at every step.
        let m = ScalarToyModel::certified();
        let w = vec![DVector::zeros(3); 5];
        let a = traj(&m, 0.2, 0.4, &w);
        let b = traj(&m, 0.2, 0.7, &w);
        let cert = CertificateSet::scalar_toy().obs;
        // Σ‖Δy‖²_{R_o} = 5·0.09 ≥ 0.09
        assert!((membership_margin(&cert, &a, &b).unwrap() - 4.0 * 0.09).abs() < 1e-12);
        assert!(membership_e(&cert, &a, &b).unwrap());
    }

    #[test]
    fn length_mismatch_errors() {
        let m = ScalarToyModel::certified();
        let a = traj(&m, 0.0, 0.0, &vec![DVector::zeros(3); 3]);
        let b = traj(&m, 0.0, 0.0, &vec![DVector::zeros(3); 4]);
        assert!(membership_e(&CertificateSet::scalar_toy().obs, &a, &b).is_err());
    }
}
