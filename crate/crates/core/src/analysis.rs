//! Stability constants, contraction check, horizon partitions and numerical
//! audits of the error bounds along recorded runs.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::certificates::CertificateSet;
use crate::error::{MheError, Result};
use crate::linalg::{gen_max_eig, quad, wnorm};

/// Slack on audit margins.
pub const AUDIT_TOL: f64 = 1e-9;

/// Cap of the horizon scan in [`min_horizon`].
pub const HORIZON_CAP: usize = 100_000;

/// Generalized eigenvalues entering the constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateRatios {
    /// λ̄(P_o, W̄)
    pub po_wbar: f64,
    /// λ̄(S_w, V̲)
    pub sw_vlow: f64,
    /// λ̄(W̄, W̲)
    pub wbar_wlow: f64,
    /// λ̄(V̄, V̲)
    pub vbar_vlow: f64,
    /// λ̄(V̄, S_o)
    pub vbar_so: f64,
    pub eta_w: f64,
    pub eta_o: f64,
}

impl CertificateRatios {
    pub fn from_certs(certs: &CertificateSet) -> Result<Self> {
        certs.validate()?;
        let (i, u, o) = (&certs.ioss, &certs.ubebs, &certs.obs);
        Ok(Self {
            po_wbar: gen_max_eig(&o.p_o, &i.w_high)?,
            sw_vlow: gen_max_eig(&i.s_w, &u.v_low)?,
            wbar_wlow: gen_max_eig(&i.w_high, &i.w_low)?,
            vbar_vlow: gen_max_eig(&u.v_high, &u.v_low)?,
            vbar_so: gen_max_eig(&u.v_high, &o.s_o)?,
            eta_w: i.eta_w,
            eta_o: o.eta_o,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub eta: f64,
    pub n: usize,
    pub ratios: CertificateRatios,
    /// max(η_w, η_o)
    pub eta_tilde: f64,
    pub mu_contraction: f64,
    pub rho: f64,
    pub c: f64,
    pub c0: f64,
    pub c1_big: f64,
    pub c2_big: f64,
    pub c_q1: f64,
    pub c_q2: f64,
    /// Q₃ = q3_scale · Q
    pub q3_scale: f64,
    /// Q = Q_w + Q_v + Q_o
    #[serde(skip)]
    pub q: DMatrix<f64>,
    pub contraction_ok: bool,
}

fn check_eta(r: &CertificateRatios, eta: f64) -> Result<()> {
    let lo = r.eta_w.max(r.eta_o);
    if !(eta > lo && eta < 1.0) {
        return Err(MheError::InvalidParameter(format!(
            "eta = {eta} outside ({lo}, 1)"
        )));
    }
    Ok(())
}

/// γ(s) = η_wˢ + λ̄(P_o,W̄)η_oˢ
pub fn gamma(r: &CertificateRatios, s: usize) -> f64 {
    r.eta_w.powi(s as i32) + r.po_wbar * r.eta_o.powi(s as i32)
}

/// c₁(r,s) = max{r, λ̄(S_w,V̲)/η_w}·(s+1)·(1−η^{s+1})/(1−η)
pub fn c1(ratios: &CertificateRatios, eta: f64, r: f64, s: usize) -> f64 {
    let lead = if ratios.eta_w > 0.0 {
        r.max(ratios.sw_vlow / ratios.eta_w)
    } else {
        f64::INFINITY
    };
    lead * (s as f64 + 1.0) * (1.0 - eta.powi(s as i32 + 1)) / (1.0 - eta)
}

/// μ for a given c ≥ 1.
pub fn mu_for(ratios: &CertificateRatios, eta: f64, n: usize, c: f64) -> f64 {
    c1(ratios, eta, c, n)
        * ratios.vbar_so.max(1.0)
        * (4.0 * ratios.wbar_wlow * gamma(ratios, n)).max(2.0 * ratios.vbar_vlow * eta.powi(n as i32))
}

pub fn rho(ratios: &CertificateRatios, eta: f64, n: usize) -> f64 {
    eta.powi(-(n as i32))
        * c1(ratios, eta, 1.0, n)
        * (2.0 * ratios.eta_w.powi(n as i32) + 2.0 * gamma(ratios, n))
        * ratios.wbar_wlow
}

fn constants_from_ratios(ratios: CertificateRatios, q: DMatrix<f64>, eta: f64, n: usize) -> Result<TheoryConstants> {
    check_eta(&ratios, eta)?;
    if n == 0 {
        return Err(MheError::InvalidParameter("horizon N must be at least 1".into()));
    }
    let eta_mn = eta.powi(-(n as i32));
    let c1_1n = c1(&ratios, eta, 1.0, n);
    let rho = rho(&ratios, eta, n);
    let c = if rho < 1.0 {
        8.0 * c1_1n * ratios.vbar_vlow / (1.0 - rho) + 2.0
    } else {
        f64::INFINITY
    };
    let mu = mu_for(&ratios, eta, n, c);
    let c1p = 4.0 * c1_1n;
    let c_q1 = c1p * (2.0 * ratios.vbar_vlow).max(eta_mn) / (1.0 - rho);
    let c_q2 = (mu * (c_q1 + 2.0)).max(4.0 * c1(&ratios, eta, c, n) * ratios.vbar_so.max(1.0));
    let q3_scale = c_q1.max(c_q2).max(4.0 * c1_1n * eta_mn + 2.0 * c);
    let contraction_ok = check(mu, rho);
    Ok(TheoryConstants {
        eta,
        n,
        eta_tilde: ratios.eta_w.max(ratios.eta_o),
        mu_contraction: mu,
        rho,
        c,
        c0: std::f64::consts::SQRT_2 / 2.0,
        c1_big: 2.0 * eta_mn * c1_1n * (2.0 + ratios.po_wbar),
        c2_big: (4.0 * c1_1n + 2.0 * c) * eta_mn,
        c_q1,
        c_q2,
        q3_scale,
        q,
        contraction_ok,
        ratios,
    })
}

fn check(mu: f64, rho: f64) -> bool {
    mu.max(rho) < 1.0
}

pub fn compute_constants(certs: &CertificateSet, eta: f64, n: usize) -> Result<TheoryConstants> {
    constants_from_ratios(CertificateRatios::from_certs(certs)?, certs.q_total(), eta, n)
}

impl TheoryConstants {
    pub fn gamma(&self, s: usize) -> f64 {
        gamma(&self.ratios, s)
    }

    pub fn c1(&self, r: f64, s: usize) -> f64 {
        c1(&self.ratios, self.eta, r, s)
    }

    pub fn q3(&self) -> DMatrix<f64> {
        &self.q * self.q3_scale
    }

    /// c if finite, otherwise 1 (for the bound that holds for every c ≥ 1).
    pub fn c_or_one(&self) -> f64 {
        if self.c.is_finite() {
            self.c
        } else {
            1.0
        }
    }

    /// Key-value listing used by the CLI.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let r = &self.ratios;
        let kv = |k: &str, v: f64| (k.to_string(), format!("{v:.17e}"));
        vec![
            ("N".into(), self.n.to_string()),
            kv("eta", self.eta),
            kv("eta_w", r.eta_w),
            kv("eta_o", r.eta_o),
            kv("eta_tilde", self.eta_tilde),
            kv("lambda_Po_Wbar", r.po_wbar),
            kv("lambda_Sw_Vlow", r.sw_vlow),
            kv("lambda_Wbar_Wlow", r.wbar_wlow),
            kv("lambda_Vbar_Vlow", r.vbar_vlow),
            kv("lambda_Vbar_So", r.vbar_so),
            kv("gamma_N", self.gamma(self.n)),
            kv("c1_1_N", self.c1(1.0, self.n)),
            kv("mu_contraction", self.mu_contraction),
            kv("rho", self.rho),
            kv("c", self.c),
            kv("C0", self.c0),
            kv("C1", self.c1_big),
            kv("C2", self.c2_big),
            kv("c_Q1", self.c_q1),
            kv("c_Q2", self.c_q2),
            kv("Q3_scale", self.q3_scale),
            ("contraction_ok".into(), self.contraction_ok.to_string()),
        ]
    }
}

pub fn check_contraction(k: &TheoryConstants) -> bool {
    check(k.mu_contraction, k.rho)
}

/// Smallest N in [1, cap] satisfying the contraction condition.
pub fn min_horizon(certs: &CertificateSet, eta: f64) -> Result<usize> {
    min_horizon_capped(certs, eta, HORIZON_CAP)
}

pub fn min_horizon_capped(certs: &CertificateSet, eta: f64, cap: usize) -> Result<usize> {
    let ratios = CertificateRatios::from_certs(certs)?;
    check_eta(&ratios, eta)?;
    for n in 1..=cap {
        let r = rho(&ratios, eta, n);
        if r >= 1.0 {
            continue;
        }
        let c = 8.0 * c1(&ratios, eta, 1.0, n) * ratios.vbar_vlow / (1.0 - r) + 2.0;
        if check(mu_for(&ratios, eta, n, c), r) {
            return Ok(n);
        }
    }
    Err(MheError::NoContraction(cap))
}

/// T_t, k and the descending times t₁ > … > t_k, with t_{k+1} = l.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HorizonPartition {
    pub t: usize,
    pub n: usize,
    pub l: usize,
    /// t₁, …, t_k in descending order.
    pub times: Vec<usize>,
}

impl HorizonPartition {
    pub fn k(&self) -> usize {
        self.times.len()
    }

    /// t_m for m = 1..=k+1 (t_{k+1} = l); t₁ = l when k = 0.
    pub fn t_m(&self, m: usize) -> usize {
        assert!(m >= 1 && m <= self.k() + 1, "t_m index out of range");
        if m <= self.k() {
            self.times[m - 1]
        } else {
            self.l
        }
    }
}

/// `flags[τ]` tells whether the window ending at τ formed an observable pair.
pub fn partition_horizons(flags: &[bool], t: usize, n: usize) -> HorizonPartition {
    let l = t % n;
    let mut times = Vec::new();
    let mut tau = t;
    while tau >= n {
        if flags.get(tau).copied().unwrap_or(false) {
            times.push(tau);
        }
        tau -= n;
    }
    HorizonPartition { t, n, l, times }
}

/// Γ(c, x̂, x, ẑ, z) = W(x̂, x) + c·V(ẑ, z)²
pub fn lyapunov_candidate(
    certs: &CertificateSet,
    c: f64,
    x_hat: &DVector<f64>,
    x: &DVector<f64>,
    z_hat: &DVector<f64>,
    z: &DVector<f64>,
) -> f64 {
    let v = certs.ubebs.v(z_hat, z);
    certs.ioss.w(x_hat, x) + c * v * v
}

/// Truth, estimates and priors of one run, indexed by time.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRun {
    pub n: usize,
    /// x_t, z_t for t = 0..=T
    pub x: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    /// w_t for t = 0..T
    pub w: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
    /// Window-end parameter estimates ẑ_t.
    pub z_hat: Vec<DVector<f64>>,
    pub z_bar: Vec<DVector<f64>>,
    /// Exact membership of the window ending at t (meaningful for t ≥ N).
    pub member: Vec<bool>,
}

impl TheoryRun {
    pub fn horizon(&self) -> usize {
        self.x_hat.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        let ok = self.x.len() == t + 1
            && self.z.len() == t + 1
            && self.z_hat.len() == t + 1
            && self.z_bar.len() == t + 1
            && self.member.len() == t + 1
            && self.w.len() >= t;
        if !ok || self.x_hat.is_empty() {
            return Err(MheError::MissingData("run is missing truth, priors or estimates".into()));
        }
        Ok(())
    }

    fn w_sq_sum(&self, q: &DMatrix<f64>, from: usize, to: usize) -> f64 {
        (from..to).map(|r| quad(&self.w[r], q)).sum()
    }

    fn w_norm_sum(&self, q: &DMatrix<f64>, from: usize, to: usize) -> f64 {
        (from..to).map(|r| wnorm(&self.w[r], q)).sum()
    }

    fn gamma_hat(&self, certs: &CertificateSet, c: f64, t: usize) -> f64 {
        lyapunov_candidate(certs, c, &self.x_hat[t], &self.x[t], &self.z_hat[t], &self.z[t])
    }

    fn gamma_bar(&self, certs: &CertificateSet, c: f64, t: usize) -> f64 {
        lyapunov_candidate(certs, c, &self.x_hat[t], &self.x[t], &self.z_bar[t], &self.z[t])
    }
}

/// RHS − LHS of the bound for times before a full horizon or with a
/// non-observable window.
pub fn audit_lemma1(run: &TheoryRun, certs: &CertificateSet, k: &TheoryConstants, t: usize) -> Result<f64> {
    run.validate()?;
    let n = run.n;
    if t > run.horizon() {
        return Err(MheError::MissingData(format!("no truth at t={t}")));
    }
    if t >= n && run.member[t] {
        return Err(MheError::InvalidParameter(format!(
            "t={t} has an observable window; bound not applicable"
        )));
    }
    let nt = t.min(n);
    let s = t - nt;
    let w_bar = &certs.ioss.w_high;
    let v_bar = &certs.ubebs.v_high;
    let ex = &run.x_hat[s] - &run.x[s];
    let ez = &run.z_bar[s] - &run.z[s];
    let rhs = k.eta.powi(-(n as i32))
        * k.c1(1.0, nt)
        * ((2.0 * k.ratios.eta_w.powi(nt as i32) + 2.0 * k.gamma(nt)) * quad(&ex, w_bar)
            + 4.0 * k.eta.powi(nt as i32) * quad(&ez, v_bar)
            + 4.0 * run.w_sq_sum(&k.q, s, t));
    Ok(rhs - run.gamma_hat(certs, 1.0, t))
}

/// RHS − LHS of the contraction bound at an observable window (t ≥ N).
pub fn audit_lemma2(run: &TheoryRun, certs: &CertificateSet, k: &TheoryConstants, t: usize) -> Result<f64> {
    run.validate()?;
    let n = run.n;
    if t < n || t > run.horizon() || !run.member[t] {
        return Err(MheError::InvalidParameter(format!(
            "t={t} is not an observable window end"
        )));
    }
    let c = k.c_or_one();
    let mu = mu_for(&k.ratios, k.eta, n, c);
    let s = t - n;
    let rhs = mu * run.gamma_bar(certs, 1.0, s)
        + 4.0 * k.c1(c, n) * k.ratios.vbar_so.max(1.0) * run.w_sq_sum(&k.q, s, t);
    Ok(rhs - run.gamma_hat(certs, c, t))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma3Margins {
    pub t: usize,
    pub p1: f64,
    /// One margin per m = 1..=k.
    pub p2: Vec<f64>,
}

/// Boundedness on [t₁, t] and decrease over each [t_{m+1}, t_m], at every t.
pub fn audit_lemma3(run: &TheoryRun, certs: &CertificateSet, k: &TheoryConstants) -> Result<Vec<Lemma3Margins>> {
    run.validate()?;
    if !k.contraction_ok {
        return Err(MheError::InvalidParameter("contraction condition not satisfied".into()));
    }
    let n = run.n;
    let c = k.c;
    let mut out = Vec::with_capacity(run.horizon() + 1);
    for t in 0..=run.horizon() {
        let part = partition_horizons(&run.member, t, n);
        let t1 = part.t_m(1);
        let s1 = run.w_norm_sum(&k.q, t1, t);
        let p1 = run.gamma_bar(certs, c, t1) + k.c_q1 * s1 * s1 - run.gamma_hat(certs, 1.0, t);
        let mut p2 = Vec::with_capacity(part.k());
        for m in 1..=part.k() {
            let (tm, tn) = (part.t_m(m), part.t_m(m + 1));
            let s = run.w_norm_sum(&k.q, tn, tm);
            let rhs = k.mu_contraction * run.gamma_bar(certs, c, tn) + k.c_q2 * s * s;
            p2.push(rhs - run.gamma_hat(certs, c, tm));
        }
        out.push(Lemma3Margins { t, p1, p2 });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremPoint {
    pub t: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// Evaluates both sides of the error bound at every t of the run.
pub fn audit_theorem(run: &TheoryRun, certs: &CertificateSet, k: &TheoryConstants) -> Result<Vec<TheoremPoint>> {
    run.validate()?;
    if !k.contraction_ok {
        return Err(MheError::InvalidParameter(
            "contraction condition not satisfied; bound not claimed".into(),
        ));
    }
    let n = run.n;
    let q3 = k.q3();
    let smu = k.mu_contraction.sqrt();
    let e0x = wnorm(&(&run.x_hat[0] - &run.x[0]), &certs.ioss.w_high);
    let e0z = wnorm(&(&run.z_hat[0] - &run.z[0]), &certs.ubebs.v_high);
    let mut out = Vec::with_capacity(run.horizon() + 1);
    for t in 0..=run.horizon() {
        let part = partition_horizons(&run.member, t, n);
        let kk = part.k() as i32;
        let l = part.l as i32;
        let lhs = k.c0 * wnorm(&(&run.x_hat[t] - &run.x[t]), &certs.ioss.w_low)
            + k.c0 * wnorm(&(&run.z_hat[t] - &run.z[t]), &certs.ubebs.v_low);
        let mut rhs = smu.powi(kk)
            * (k.c1_big.sqrt() * k.eta_tilde.sqrt().powi(l) * e0x + k.c2_big.sqrt() * k.eta.sqrt().powi(l) * e0z);
        rhs += run.w_norm_sum(&q3, part.t_m(1), t);
        for m in 1..=part.k() {
            rhs += smu.powi(m as i32 - 1) * run.w_norm_sum(&q3, part.t_m(m + 1), part.t_m(m));
        }
        rhs += smu.powi(kk) * run.w_norm_sum(&q3, 0, part.l);
        out.push(TheoremPoint {
            t,
            lhs,
            rhs,
            margin: rhs - lhs,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginStats {
    pub count: usize,
    pub min_margin: f64,
    pub worst_t: usize,
    pub n_negative: usize,
}

impl Default for MarginStats {
    fn default() -> Self {
        Self {
            count: 0,
            min_margin: f64::INFINITY,
            worst_t: 0,
            n_negative: 0,
        }
    }
}

impl MarginStats {
    pub fn push(&mut self, t: usize, m: f64) {
        self.count += 1;
        if m < self.min_margin {
            self.min_margin = m;
            self.worst_t = t;
        }
        if m < -AUDIT_TOL || m.is_nan() {
            self.n_negative += 1;
        }
    }

    pub fn merge(&mut self, o: &MarginStats) {
        self.count += o.count;
        self.n_negative += o.n_negative;
        if o.min_margin < self.min_margin {
            self.min_margin = o.min_margin;
            self.worst_t = o.worst_t;
        }
    }

    pub fn ok(&self) -> bool {
        self.n_negative == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AuditReport {
    pub lemma1: MarginStats,
    pub lemma2: MarginStats,
    pub lemma3_p1: MarginStats,
    pub lemma3_p2: MarginStats,
    pub theorem: MarginStats,
}

impl AuditReport {
    pub fn merge(&mut self, o: &AuditReport) {
        self.lemma1.merge(&o.lemma1);
        self.lemma2.merge(&o.lemma2);
        self.lemma3_p1.merge(&o.lemma3_p1);
        self.lemma3_p2.merge(&o.lemma3_p2);
        self.theorem.merge(&o.theorem);
    }

    pub fn all_ok(&self) -> bool {
        self.lemma1.ok() && self.lemma2.ok() && self.lemma3_p1.ok() && self.lemma3_p2.ok() && self.theorem.ok()
    }

    pub fn any_negative(&self) -> bool {
        !self.all_ok()
    }
}

/// Runs every applicable audit over the whole run. The horizon-level bounds are
/// skipped when the contraction condition fails.
pub fn audit_run(run: &TheoryRun, certs: &CertificateSet, k: &TheoryConstants) -> Result<AuditReport> {
    let mut rep = AuditReport::default();
    for t in 0..=run.horizon() {
        if t >= run.n && run.member[t] {
            rep.lemma2.push(t, audit_lemma2(run, certs, k, t)?);
        } else {
            rep.lemma1.push(t, audit_lemma1(run, certs, k, t)?);
        }
    }
    if k.contraction_ok {
        for m in audit_lemma3(run, certs, k)? {
            rep.lemma3_p1.push(m.t, m.p1);
            for p in m.p2 {
                rep.lemma3_p2.push(m.t, p);
            }
        }
        for p in audit_theorem(run, certs, k)? {
            rep.theorem.push(p.t, p.margin);
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> CertificateSet {
        CertificateSet::scalar_toy()
    }

    #[test]
    fn c1_single_term() {
        let k = compute_constants(&toy(), 0.5, 20).unwrap();
        // λ̄(S_w,V̲)/η_w = 0.01/0.3 < 1
        assert!((k.c1(1.0, 0) - 1.0).abs() < 1e-15);
        let k9 = compute_constants(&toy(), 0.9, 20).unwrap();
        assert!((k9.c1(1.0, 1) - 3.8).abs() < 1e-12);
    }

    #[test]
    fn gamma_at_zero() {
        let k = compute_constants(&toy(), 0.5, 20).unwrap();
        assert!((k.gamma(0) - (1.0 + k.ratios.po_wbar)).abs() < 1e-15);
    }

    #[test]
    fn eta_range_enforced() {
        assert!(compute_constants(&toy(), 0.3, 20).is_err());
        assert!(compute_constants(&toy(), 1.0, 20).is_err());
    }

    #[test]
    fn contraction_small_and_large_horizon() {
        let c = toy();
        assert!(!check_contraction(&compute_constants(&c, 0.5, 1).unwrap()));
        assert!(check_contraction(&compute_constants(&c, 0.5, 200).unwrap()));
        let nmin = min_horizon(&c, 0.5).unwrap();
        assert!(check_contraction(&compute_constants(&c, 0.5, nmin).unwrap()));
        assert!(!check_contraction(&compute_constants(&c, 0.5, nmin - 1).unwrap()));
    }

    #[test]
    fn partition_examples() {
        let n = 4;
        let p = partition_horizons(&[false; 20], 11, n);
        assert_eq!((p.k(), p.t_m(1), p.l), (0, 3, 3));
        let mut flags = vec![false; 13];
        for tau in [4, 8, 12] {
            flags[tau] = true;
        }
        let p = partition_horizons(&flags, 12, n);
        assert_eq!(p.times, vec![12, 8, 4]);
        assert_eq!(p.t_m(4), 0);
    }

    #[test]
    fn candidate_hand_value() {
        let c = toy();
        let s = |v: f64| DVector::from_element(1, v);
        assert!((lyapunov_candidate(&c, 1.0, &s(2.0), &s(0.0), &s(3.0), &s(0.0)) - 13.0).abs() < 1e-14);
        assert!((lyapunov_candidate(&c, 2.0, &s(2.0), &s(0.0), &s(3.0), &s(0.0)) - 22.0).abs() < 1e-14);
    }
}
