//! Moving horizon estimator with observability-adaptive parameter priors.
//!
//! At time t the window covers s = t − N_t, …, t with N_t = min(t, N). The
//! decision vector is (x̂_s, ẑ_s, ŵ_s, …, ŵ_{t−1}) where ŵ holds the process
//! disturbance components only; states are recovered by rolling out f and g.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certificates::CertificateSet;
use crate::error::{check_dim, MheError, Result};
use crate::linalg::{gen_max_eig, quad, require_spd, sqrt_factor};
use crate::model::{jacobians, BoxSet, Dims, SystemModel};
use crate::monitor::{observability_gramian, MonitorConfig};
use crate::solver::{solve, NlsProblem, SolveOptions, Termination};

/// Prior discount γ(s) on the window-initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaRule {
    /// γ(s) = ηˢ
    EtaPow,
    /// γ(s) = η_wˢ + λ̄(P_o, W̄)·η_oˢ
    Certified {
        eta_w: f64,
        eta_o: f64,
        lambda_po: f64,
    },
}

impl GammaRule {
    pub fn eval(&self, eta: f64, s: usize) -> f64 {
        let s = s as i32;
        match *self {
            GammaRule::EtaPow => eta.powi(s),
            GammaRule::Certified {
                eta_w,
                eta_o,
                lambda_po,
            } => eta_w.powi(s) + lambda_po * eta_o.powi(s),
        }
    }
}

/// How the parameter prior is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorRule {
    /// z̄_t = ẑ_t when t ≥ N and the window is observable, nominal rollout otherwise.
    Adaptive,
    /// z̄_t = ẑ_t at every step (no observability monitoring).
    AlwaysObservable,
}

#[derive(Debug, Clone)]
pub struct MheConfig {
    pub n: usize,
    pub eta: f64,
    pub gamma: GammaRule,
    /// Weight on the process disturbance components.
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub w_bar: DMatrix<f64>,
    pub v_bar: DMatrix<f64>,
    pub freeze_z: bool,
    pub prior_rule: PriorRule,
    pub monitor: Option<MonitorConfig>,
    pub solver: SolveOptions,
    /// Weight of the quadratic path-constraint penalties.
    pub penalty_weight: f64,
}

impl MheConfig {
    pub fn gamma(&self, s: usize) -> f64 {
        self.gamma.eval(self.eta, s)
    }

    /// Cost weights tied to a certificate set: Q = Q_w + Q_v + Q_o restricted to
    /// the process block, R = R_w + R_o, W̄ = W_high, V̄ = V_high and the
    /// certified discount γ.
    pub fn from_certificates(certs: &CertificateSet, eta: f64, n: usize, n_w_proc: usize) -> Result<Self> {
        certs.validate()?;
        let q_full = certs.q_total();
        if n_w_proc > q_full.nrows() {
            return Err(MheError::Dimension {
                context: "certificate Q".into(),
                expected: n_w_proc,
                got: q_full.nrows(),
            });
        }
        let w_bar = certs.ioss.w_high.clone();
        let lambda_po = gen_max_eig(&certs.obs.p_o, &w_bar)?;
        let cfg = Self {
            n,
            eta,
            gamma: GammaRule::Certified {
                eta_w: certs.ioss.eta_w,
                eta_o: certs.obs.eta_o,
                lambda_po,
            },
            q: q_full.view((0, 0), (n_w_proc, n_w_proc)).into_owned(),
            r: certs.r_total(),
            w_bar,
            v_bar: certs.ubebs.v_high.clone(),
            freeze_z: false,
            prior_rule: PriorRule::Adaptive,
            monitor: None,
            solver: SolveOptions::default(),
            penalty_weight: 1e6,
        };
        Ok(cfg)
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        if self.n == 0 {
            return Err(MheError::InvalidParameter("horizon N must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(MheError::InvalidParameter(format!("eta = {} outside (0,1)", self.eta)));
        }
        check_dim("Q", dims.n_w_proc, self.q.nrows())?;
        check_dim("R", dims.n_y, self.r.nrows())?;
        check_dim("W_bar", dims.n_x, self.w_bar.nrows())?;
        check_dim("V_bar", dims.n_z, self.v_bar.nrows())?;
        require_spd("Q", &self.q)?;
        require_spd("R", &self.r)?;
        require_spd("W_bar", &self.w_bar)?;
        require_spd("V_bar", &self.v_bar)?;
        for s in 0..=self.n {
            let g = self.gamma(s);
            if !(g > 0.0) || (s > 0 && g > self.gamma(s - 1)) {
                return Err(MheError::InvalidParameter(
                    "gamma must be positive and nonincreasing".into(),
                ));
            }
        }
        if let Some(m) = &self.monitor {
            m.validate()?;
            check_dim("monitor C columns", dims.n_x, m.c.ncols())?;
        }
        self.solver.validate()
    }
}

/// Measured data of one window: inputs and outputs at times start..start+N_t.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowData {
    pub start: usize,
    pub us: Vec<DVector<f64>>,
    pub ys: Vec<DVector<f64>>,
}

impl WindowData {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub x_bar: DVector<f64>,
    pub z_bar: DVector<f64>,
}

/// Decision variables of a window: initial state, initial parameter, process disturbances.
#[derive(Debug, Clone, PartialEq)]
pub struct Decisions {
    pub x0: DVector<f64>,
    pub z0: DVector<f64>,
    pub w: Vec<DVector<f64>>,
}

impl Decisions {
    pub fn pack(&self) -> DVector<f64> {
        let n = self.x0.len() + self.z0.len() + self.w.iter().map(|w| w.len()).sum::<usize>();
        let mut d = DVector::zeros(n);
        let mut k = 0;
        for v in std::iter::once(&self.x0).chain(std::iter::once(&self.z0)).chain(self.w.iter()) {
            d.rows_mut(k, v.len()).copy_from(v);
            k += v.len();
        }
        d
    }

    pub fn unpack(d: &DVector<f64>, dims: &Dims, nt: usize) -> Self {
        let (nx, nz, np) = (dims.n_x, dims.n_z, dims.n_w_proc);
        Self {
            x0: d.rows(0, nx).into_owned(),
            z0: d.rows(nx, nz).into_owned(),
            w: (0..nt).map(|j| d.rows(nx + nz + j * np, np).into_owned()).collect(),
        }
    }

    pub fn prior_candidate(priors: &Priors, dims: &Dims, nt: usize) -> Self {
        Self {
            x0: priors.x_bar.clone(),
            z0: priors.z_bar.clone(),
            w: vec![DVector::zeros(dims.n_w_proc); nt],
        }
    }
}

/// Rolled-out window trajectory in memory: N_t+1 states and parameters, N_t
/// disturbances (full vectors, measurement part zero) and predicted outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub xs: Vec<DVector<f64>>,
    pub zs: Vec<DVector<f64>>,
    pub ws: Vec<DVector<f64>>,
    pub ys: Vec<DVector<f64>>,
}

fn full_w(dims: &Dims, wp: &DVector<f64>) -> DVector<f64> {
    let mut w = DVector::zeros(dims.n_w());
    w.rows_mut(0, dims.n_w_proc).copy_from(wp);
    w
}

pub fn rollout(model: &dyn SystemModel, data: &WindowData, dec: &Decisions) -> Rollout {
    let dims = model.dims();
    let nt = data.len();
    let mut xs = Vec::with_capacity(nt + 1);
    let mut zs = Vec::with_capacity(nt + 1);
    let mut ws = Vec::with_capacity(nt);
    let mut ys = Vec::with_capacity(nt);
    xs.push(dec.x0.clone());
    zs.push(dec.z0.clone());
    for j in 0..nt {
        let w = full_w(&dims, &dec.w[j]);
        let u = &data.us[j];
        ys.push(model.h(&xs[j], &zs[j], u, &w));
        let xn = model.f(&xs[j], &zs[j], u, &w);
        let zn = model.g(&zs[j], u, &w);
        xs.push(xn);
        zs.push(zn);
        ws.push(w);
    }
    Rollout { xs, zs, ws, ys }
}

/// 2γ(N_t)‖x̂₀−x̄‖²_{W̄} + 2η^{N_t}‖ẑ₀−z̄‖²_{V̄} + Σ_j (2‖ŵ_j‖²_Q + ‖ŷ_j − y_j‖²_R).
pub fn assemble_cost(
    cfg: &MheConfig,
    model: &dyn SystemModel,
    data: &WindowData,
    priors: &Priors,
    dec: &Decisions,
) -> Result<f64> {
    let dims = model.dims();
    let nt = data.len();
    check_dim("window inputs", nt, data.us.len())?;
    check_dim("window disturbances", nt, dec.w.len())?;
    check_dim("x0", dims.n_x, dec.x0.len())?;
    check_dim("z0", dims.n_z, dec.z0.len())?;
    check_dim("x_bar", dims.n_x, priors.x_bar.len())?;
    check_dim("z_bar", dims.n_z, priors.z_bar.len())?;
    let ro = rollout(model, data, dec);
    let mut cost = 2.0 * cfg.gamma(nt) * quad(&(&dec.x0 - &priors.x_bar), &cfg.w_bar)
        + 2.0 * cfg.eta.powi(nt as i32) * quad(&(&dec.z0 - &priors.z_bar), &cfg.v_bar);
    for j in 0..nt {
        check_dim("process disturbance", dims.n_w_proc, dec.w[j].len())?;
        cost += 2.0 * quad(&dec.w[j], &cfg.q) + quad(&(&ro.ys[j] - &data.ys[j]), &cfg.r);
    }
    Ok(cost)
}

/// Sum of squared path-constraint violations of x̂_j, ẑ_j for j = 1..N_t.
pub fn path_violation(model: &dyn SystemModel, ro: &Rollout) -> f64 {
    let cs = model.constraints();
    ro.xs
        .iter()
        .skip(1)
        .map(|x| cs.x.violation(x).norm_squared())
        .chain(ro.zs.iter().skip(1).map(|z| cs.z.violation(z).norm_squared()))
        .sum()
}

/// The least-squares form of the window problem.
pub struct WindowProblem<'a> {
    model: &'a dyn SystemModel,
    data: &'a WindowData,
    priors: &'a Priors,
    dims: Dims,
    bounds: BoxSet,
    /// Scaled square-root factors of the prior and disturbance weights.
    ux: DMatrix<f64>,
    uz: DMatrix<f64>,
    uq: DMatrix<f64>,
    ur: DMatrix<f64>,
    sqrt_pen: f64,
}

impl<'a> WindowProblem<'a> {
    pub fn new(
        cfg: &MheConfig,
        model: &'a dyn SystemModel,
        data: &'a WindowData,
        priors: &'a Priors,
    ) -> Result<Self> {
        let dims = model.dims();
        let nt = data.len();
        let cs = model.constraints();
        let wp = cs.process_w(&dims);
        let mut parts: Vec<&BoxSet> = vec![&cs.x, &cs.z];
        parts.extend(std::iter::repeat_n(&wp, nt));
        let bounds = BoxSet::concat(&parts);
        Ok(Self {
            model,
            data,
            priors,
            dims,
            bounds,
            ux: sqrt_factor("W_bar", &cfg.w_bar)? * (2.0 * cfg.gamma(nt)).sqrt(),
            uz: sqrt_factor("V_bar", &cfg.v_bar)? * (2.0 * cfg.eta.powi(nt as i32)).sqrt(),
            uq: sqrt_factor("Q", &cfg.q)? * 2f64.sqrt(),
            ur: sqrt_factor("R", &cfg.r)?,
            sqrt_pen: cfg.penalty_weight.sqrt(),
        })
    }

    fn nt(&self) -> usize {
        self.data.len()
    }

    /// Rows of the block-diagonal part (priors and disturbances).
    fn n_diag_rows(&self) -> usize {
        self.dims.n_x + self.dims.n_z + self.nt() * self.dims.n_w_proc
    }

    fn n_rows(&self) -> usize {
        let nt = self.nt();
        self.n_diag_rows() + nt * self.dims.n_y + nt * (self.dims.n_x + self.dims.n_z)
    }

    /// Dense (output and penalty) rows of the Jacobian, residual-row offset n_diag_rows().
    fn dense_jacobian(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let dims = &self.dims;
        let (nx, nz, np, ny) = (dims.n_x, dims.n_z, dims.n_w_proc, dims.n_y);
        let nt = self.nt();
        let nd = d.len();
        let dec = Decisions::unpack(d, dims, nt);
        let cs = self.model.constraints();
        let mut jac = DMatrix::zeros(nt * ny + nt * (nx + nz), nd);
        let mut sx = DMatrix::zeros(nx, nd);
        let mut sz = DMatrix::zeros(nz, nd);
        for i in 0..nx {
            sx[(i, i)] = 1.0;
        }
        for i in 0..nz {
            sz[(i, nx + i)] = 1.0;
        }
        let mut x = dec.x0.clone();
        let mut z = dec.z0.clone();
        let pen_off = nt * ny;
        for j in 0..nt {
            let w = full_w(dims, &dec.w[j]);
            let u = &self.data.us[j];
            let jac_j = jacobians(self.model, &x, &z, u, &w);
            let col = nx + nz + j * np;
            // output rows
            let mut hy = &jac_j.h_x * &sx + &jac_j.h_z * &sz;
            for k in 0..np {
                for i in 0..ny {
                    hy[(i, col + k)] += jac_j.h_w[(i, k)];
                }
            }
            jac.rows_mut(j * ny, ny).copy_from(&(&self.ur * hy));
            // propagate sensitivities
            let mut sx_next = &jac_j.f_x * &sx + &jac_j.f_z * &sz;
            let mut sz_next = &jac_j.g_z * &sz;
            for k in 0..np {
                for i in 0..nx {
                    sx_next[(i, col + k)] += jac_j.f_w[(i, k)];
                }
                for i in 0..nz {
                    sz_next[(i, col + k)] += jac_j.g_w[(i, k)];
                }
            }
            let xn = self.model.f(&x, &z, u, &w);
            let zn = self.model.g(&z, u, &w);
            sx = sx_next;
            sz = sz_next;
            x = xn;
            z = zn;
            let vx = cs.x.violation(&x);
            let vz = cs.z.violation(&z);
            let base = pen_off + j * (nx + nz);
            for i in 0..nx {
                if vx[i] != 0.0 {
                    jac.row_mut(base + i).copy_from(&(sx.row(i) * self.sqrt_pen));
                }
            }
            for i in 0..nz {
                if vz[i] != 0.0 {
                    jac.row_mut(base + nx + i).copy_from(&(sz.row(i) * self.sqrt_pen));
                }
            }
        }
        jac
    }

    /// Block-diagonal part of the Jacobian as (row offset, column offset, block).
    fn diag_blocks(&self) -> Vec<(usize, &DMatrix<f64>)> {
        let (nx, nz, np) = (self.dims.n_x, self.dims.n_z, self.dims.n_w_proc);
        let mut blocks = vec![(0, &self.ux), (nx, &self.uz)];
        for j in 0..self.nt() {
            blocks.push((nx + nz + j * np, &self.uq));
        }
        blocks
    }
}

impl NlsProblem for WindowProblem<'_> {
    fn dim(&self) -> usize {
        self.dims.n_x + self.dims.n_z + self.nt() * self.dims.n_w_proc
    }

    fn bounds(&self) -> &BoxSet {
        &self.bounds
    }

    fn residuals(&self, d: &DVector<f64>) -> DVector<f64> {
        let dims = &self.dims;
        let (nx, nz, np, ny) = (dims.n_x, dims.n_z, dims.n_w_proc, dims.n_y);
        let nt = self.nt();
        let dec = Decisions::unpack(d, dims, nt);
        let ro = rollout(self.model, self.data, &dec);
        let cs = self.model.constraints();
        let mut r = DVector::zeros(self.n_rows());
        r.rows_mut(0, nx).copy_from(&(&self.ux * (&dec.x0 - &self.priors.x_bar)));
        r.rows_mut(nx, nz).copy_from(&(&self.uz * (&dec.z0 - &self.priors.z_bar)));
        for j in 0..nt {
            r.rows_mut(nx + nz + j * np, np).copy_from(&(&self.uq * &dec.w[j]));
        }
        let off = self.n_diag_rows();
        for j in 0..nt {
            r.rows_mut(off + j * ny, ny)
                .copy_from(&(&self.ur * (&ro.ys[j] - &self.data.ys[j])));
        }
        let pen = off + nt * ny;
        for j in 0..nt {
            let base = pen + j * (nx + nz);
            r.rows_mut(base, nx)
                .copy_from(&(cs.x.violation(&ro.xs[j + 1]) * self.sqrt_pen));
            r.rows_mut(base + nx, nz)
                .copy_from(&(cs.z.violation(&ro.zs[j + 1]) * self.sqrt_pen));
        }
        r
    }

    fn jacobian(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.n_rows(), d.len());
        for (off, b) in self.diag_blocks() {
            jac.view_mut((off, off), b.shape()).copy_from(b);
        }
        let dense = self.dense_jacobian(d);
        jac.rows_mut(self.n_diag_rows(), dense.nrows()).copy_from(&dense);
        jac
    }

    fn normal_equations(&self, d: &DVector<f64>, r: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let dense = self.dense_jacobian(d);
        let off = self.n_diag_rows();
        let r_dense = r.rows(off, dense.nrows());
        // drop inactive penalty rows before forming the product
        let keep: Vec<usize> = (0..dense.nrows())
            .filter(|&i| dense.row(i).iter().any(|v| *v != 0.0))
            .collect();
        let m = dense.select_rows(keep.iter());
        let rm = DVector::from_iterator(keep.len(), keep.iter().map(|&i| r_dense[i]));
        let mut jtj = m.tr_mul(&m);
        let mut jtr = m.tr_mul(&rm);
        for (o, b) in self.diag_blocks() {
            let bb = b.tr_mul(b);
            let mut v = jtj.view_mut((o, o), bb.shape());
            v += &bb;
            let rb = r.rows(o, b.nrows());
            let mut g = jtr.rows_mut(o, b.ncols());
            g += b.tr_mul(&rb);
        }
        (jtj, jtr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    pub start: usize,
    pub decisions: Decisions,
    pub rollout: Rollout,
    /// Window cost without penalties.
    pub cost: f64,
    /// Solver objective (cost plus path penalties).
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Window cost of the prior-seeded candidate (x̄, z̄, ŵ ≡ 0).
    pub candidate_cost: f64,
    /// Whether the prior-seeded candidate respects the path constraints.
    pub candidate_feasible: bool,
    /// Penalized objective of the prior-seeded candidate.
    pub candidate_objective: f64,
    /// Penalized objective of the warm start, when one was supplied.
    pub warm_objective: Option<f64>,
}

impl WindowSolution {
    pub fn end(&self) -> usize {
        self.start + self.decisions.w.len()
    }
}

/// Solves one window starting from the better of the warm start and the prior candidate.
pub fn solve_window(
    cfg: &MheConfig,
    model: &dyn SystemModel,
    data: &WindowData,
    priors: &Priors,
    warm_start: Option<&Decisions>,
) -> Result<WindowSolution> {
    let dims = model.dims();
    let nt = data.len();
    let wrap = |e: MheError| MheError::Window {
        start: data.start,
        end: data.start + nt,
        source: Box::new(e),
    };
    check_dim("window inputs", nt, data.us.len()).map_err(wrap)?;
    let problem = WindowProblem::new(cfg, model, data, priors).map_err(wrap)?;
    let cand = Decisions::prior_candidate(priors, &dims, nt);
    let cand_d = cand.pack();
    let cand_obj = problem.objective(&problem.bounds().project(&cand_d));
    let candidate_cost = assemble_cost(cfg, model, data, priors, &cand).map_err(wrap)?;
    let candidate_feasible = path_violation(model, &rollout(model, data, &cand)) == 0.0
        && problem.bounds().contains(&cand_d, 0.0);
    let mut start = cand_d;
    let mut warm_objective = None;
    if let Some(ws) = warm_start {
        let wd = ws.pack();
        check_dim("warm start", problem.dim(), wd.len()).map_err(wrap)?;
        let wo = problem.objective(&problem.bounds().project(&wd));
        warm_objective = Some(wo);
        if wo.is_finite() && wo < cand_obj {
            start = wd;
        }
    }
    let res = solve(&problem, &start, &cfg.solver).map_err(wrap)?;
    let decisions = Decisions::unpack(&res.d_opt, &dims, nt);
    let ro = rollout(model, data, &decisions);
    let cost = assemble_cost(cfg, model, data, priors, &decisions).map_err(wrap)?;
    Ok(WindowSolution {
        start: data.start,
        decisions,
        rollout: ro,
        cost,
        objective: res.objective,
        iterations: res.iterations,
        termination: res.termination,
        candidate_cost,
        candidate_feasible,
        candidate_objective: cand_obj,
        warm_objective,
    })
}

/// Nominal parameter rollout z ← g(z, u_j, 0) over the given inputs.
pub fn nominal_param_rollout(model: &dyn SystemModel, z: &DVector<f64>, us: &[DVector<f64>]) -> DVector<f64> {
    let w0 = DVector::zeros(model.dims().n_w());
    us.iter().fold(z.clone(), |z, u| model.g(&z, u, &w0))
}

/// Parameter prior for time t: ẑ_t if t ≥ N and observable, otherwise the nominal
/// rollout of the window-start prior through the window inputs.
pub fn prior_update(
    model: &dyn SystemModel,
    n: usize,
    t: usize,
    observable: bool,
    z_hat: &DVector<f64>,
    z_bar_start: &DVector<f64>,
    window_us: &[DVector<f64>],
) -> DVector<f64> {
    if t >= n && observable {
        z_hat.clone()
    } else {
        nominal_param_rollout(model, z_bar_start, window_us)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub t: usize,
    pub x_hat: DVector<f64>,
    /// Published parameter estimate (held along the nominal rollout when frozen).
    pub z_hat: DVector<f64>,
    /// Window-end parameter of the optimal window.
    pub z_hat_window: DVector<f64>,
    pub z_bar: DVector<f64>,
    pub alpha_t: f64,
    pub observable: bool,
    pub iterations: usize,
    /// Window cost at the optimum.
    pub objective: f64,
    pub candidate_cost: f64,
    pub candidate_feasible: bool,
    pub solver_objective: f64,
    pub candidate_objective: f64,
    pub warm_objective: Option<f64>,
}

pub struct Estimator {
    model: Arc<dyn SystemModel>,
    cfg: MheConfig,
    t: usize,
    us: VecDeque<DVector<f64>>,
    ys: VecDeque<DVector<f64>>,
    /// (time, x̂) for the last N+1 times.
    x_hist: VecDeque<(usize, DVector<f64>)>,
    /// (time, z̄) for the last N+1 times.
    zbar_hist: VecDeque<(usize, DVector<f64>)>,
    last: Option<WindowSolution>,
    x_hat: DVector<f64>,
    z_hat: DVector<f64>,
    alpha_t: f64,
    observable: bool,
}

impl Estimator {
    pub fn new(model: Arc<dyn SystemModel>, cfg: MheConfig, x0: DVector<f64>, z0: DVector<f64>) -> Result<Self> {
        let dims = model.dims();
        cfg.validate(&dims)?;
        check_dim("initial state prior", dims.n_x, x0.len())?;
        check_dim("initial parameter prior", dims.n_z, z0.len())?;
        let mut x_hist = VecDeque::with_capacity(cfg.n + 2);
        let mut zbar_hist = VecDeque::with_capacity(cfg.n + 2);
        x_hist.push_back((0, x0.clone()));
        zbar_hist.push_back((0, z0.clone()));
        Ok(Self {
            model,
            cfg,
            t: 0,
            us: VecDeque::new(),
            ys: VecDeque::new(),
            x_hist,
            zbar_hist,
            last: None,
            x_hat: x0,
            z_hat: z0,
            alpha_t: 0.0,
            observable: false,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn config(&self) -> &MheConfig {
        &self.cfg
    }

    pub fn x_hat(&self) -> &DVector<f64> {
        &self.x_hat
    }

    pub fn z_hat(&self) -> &DVector<f64> {
        &self.z_hat
    }

    pub fn last_window(&self) -> Option<&WindowSolution> {
        self.last.as_ref()
    }

    pub fn z_bar_at(&self, s: usize) -> Option<&DVector<f64>> {
        self.zbar_hist.iter().find(|(t, _)| *t == s).map(|(_, z)| z)
    }

    pub fn x_hat_at(&self, s: usize) -> Option<&DVector<f64>> {
        self.x_hist.iter().find(|(t, _)| *t == s).map(|(_, x)| x)
    }

    /// Record for t = 0: the initial priors, no optimisation.
    pub fn initial_record(&self) -> EstimateRecord {
        EstimateRecord {
            t: 0,
            x_hat: self.x_hat.clone(),
            z_hat: self.z_hat.clone(),
            z_hat_window: self.z_hat.clone(),
            z_bar: self.zbar_hist[0].1.clone(),
            alpha_t: 0.0,
            observable: false,
            iterations: 0,
            objective: 0.0,
            candidate_cost: 0.0,
            candidate_feasible: true,
            solver_objective: 0.0,
            candidate_objective: 0.0,
            warm_objective: None,
        }
    }

    /// Incorporates (u_{t}, y_{t}) and estimates the state at t+1, using the
    /// monitor for the observability decision.
    pub fn update(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> Result<EstimateRecord> {
        self.update_with(u, y, |_| Ok(None))
    }

    /// Like [`Estimator::update`], but `decide` may override the observability
    /// decision for the optimal window (e.g. an exact membership test).
    pub fn update_with<F>(&mut self, u: &DVector<f64>, y: &DVector<f64>, decide: F) -> Result<EstimateRecord>
    where
        F: FnOnce(&WindowSolution) -> Result<Option<bool>>,
    {
        let model = self.model.clone();
        let dims = model.dims();
        check_dim("input", dims.n_u, u.len())?;
        check_dim("measurement", dims.n_y, y.len())?;
        if !crate::linalg::all_finite_vec(u) || !crate::linalg::all_finite_vec(y) {
            return Err(MheError::NonFinite {
                what: "estimator input".into(),
                step: Some(self.t),
            });
        }
        let n = self.cfg.n;
        let t = self.t + 1;
        let nt = t.min(n);
        let start = t - nt;

        let mut us: Vec<DVector<f64>> = self.us.iter().cloned().collect();
        let mut ys: Vec<DVector<f64>> = self.ys.iter().cloned().collect();
        us.push(u.clone());
        ys.push(y.clone());
        if us.len() > nt {
            us.remove(0);
            ys.remove(0);
        }
        let data = WindowData { start, us, ys };
        let priors = Priors {
            x_bar: self
                .x_hat_at(start)
                .cloned()
                .ok_or_else(|| MheError::MissingData(format!("state prior at t={start}")))?,
            z_bar: self
                .z_bar_at(start)
                .cloned()
                .ok_or_else(|| MheError::MissingData(format!("parameter prior at t={start}")))?,
        };
        let warm = self.warm_start(start, nt);
        let sol = solve_window(&self.cfg, model.as_ref(), &data, &priors, warm.as_ref())?;

        let (alpha_t, monitor_flag) = match &self.cfg.monitor {
            Some(mc) => {
                let ro = &sol.rollout;
                let out = observability_gramian(mc, model.as_ref(), &ro.xs, &ro.zs, &data.us, &ro.ws)
                    .map_err(|e| MheError::Window {
                        start,
                        end: t,
                        source: Box::new(e),
                    })?;
                (out.alpha_t, out.observable)
            }
            None => (0.0, false),
        };
        // Membership is defined for short windows too; the t ≥ N gate lives in prior_update.
        let observable = decide(&sol)?.unwrap_or(monitor_flag);

        let x_hat = sol.rollout.xs[nt].clone();
        let z_window = sol.rollout.zs[nt].clone();
        let z_bar = match self.cfg.prior_rule {
            PriorRule::Adaptive => prior_update(model.as_ref(), n, t, observable, &z_window, &priors.z_bar, &data.us),
            PriorRule::AlwaysObservable => z_window.clone(),
        };
        let z_pub = if self.cfg.freeze_z && self.cfg.prior_rule == PriorRule::Adaptive && !observable {
            let w0 = DVector::zeros(dims.n_w());
            model.g(&self.z_hat, u, &w0)
        } else {
            z_window.clone()
        };

        // commit
        self.t = t;
        self.us.push_back(u.clone());
        self.ys.push_back(y.clone());
        while self.us.len() > n {
            self.us.pop_front();
            self.ys.pop_front();
        }
        self.x_hist.push_back((t, x_hat.clone()));
        self.zbar_hist.push_back((t, z_bar.clone()));
        while self.x_hist.len() > n + 1 {
            self.x_hist.pop_front();
            self.zbar_hist.pop_front();
        }
        self.x_hat = x_hat.clone();
        self.z_hat = z_pub.clone();
        self.alpha_t = alpha_t;
        self.observable = observable;
        let rec = EstimateRecord {
            t,
            x_hat,
            z_hat: z_pub,
            z_hat_window: z_window,
            z_bar,
            alpha_t,
            observable,
            iterations: sol.iterations,
            objective: sol.cost,
            candidate_cost: sol.candidate_cost,
            candidate_feasible: sol.candidate_feasible,
            solver_objective: sol.objective,
            candidate_objective: sol.candidate_objective,
            warm_objective: sol.warm_objective,
        };
        self.last = Some(sol);
        Ok(rec)
    }

    /// Previous optimal window shifted (or grown) to the new window, with ŵ = 0 appended.
    fn warm_start(&self, start: usize, nt: usize) -> Option<Decisions> {
        let prev = self.last.as_ref()?;
        let np = self.model.dims().n_w_proc;
        let shift = start.checked_sub(prev.start)?;
        if shift > prev.decisions.w.len() {
            return None;
        }
        let x0 = prev.rollout.xs[shift].clone();
        let z0 = prev.rollout.zs[shift].clone();
        let mut w: Vec<DVector<f64>> = prev.decisions.w[shift..].to_vec();
        w.resize(nt, DVector::zeros(np));
        Some(Decisions { x0, z0, w })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_truth, LinearModel, ScalarToyModel};

    fn scalar_cfg(eta: f64) -> MheConfig {
        let one = DMatrix::identity(1, 1);
        MheConfig {
            n: 5,
            eta,
            gamma: GammaRule::EtaPow,
            q: one.clone(),
            r: one.clone(),
            w_bar: one.clone(),
            v_bar: one,
            freeze_z: false,
            prior_rule: PriorRule::Adaptive,
            monitor: None,
            solver: SolveOptions::default(),
            penalty_weight: 1e6,
        }
    }

    /// x⁺ = x + w, z⁺ = z, y = x + z: every scalar weight equals one.
    fn scalar_model() -> LinearModel {
        LinearModel::new(
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 0),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            1,
        )
        .unwrap()
    }

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn cost_zero_at_exact_match() {
        let m = scalar_model();
        let cfg = scalar_cfg(0.9);
        let data = WindowData {
            start: 0,
            us: vec![DVector::zeros(0); 2],
            ys: vec![s(0.5), s(0.5)],
        };
        let pri = Priors { x_bar: s(0.2), z_bar: s(0.3) };
        let dec = Decisions { x0: s(0.2), z0: s(0.3), w: vec![s(0.0), s(0.0)] };
        assert_eq!(assemble_cost(&cfg, &m, &data, &pri, &dec).unwrap(), 0.0);
    }

    #[test]
    fn cost_hand_evaluation() {
        // N_t = 1, γ(1) = η, x̂₀ − x̄ = 1, ẑ₀ = z̄, ŷ − y = 2 → 2η + 4
        let m = scalar_model();
        let eta = 0.9;
        let cfg = scalar_cfg(eta);
        let data = WindowData { start: 0, us: vec![DVector::zeros(0)], ys: vec![s(-0.7)] };
        let pri = Priors { x_bar: s(0.0), z_bar: s(0.3) };
        let dec = Decisions { x0: s(1.0), z0: s(0.3), w: vec![s(0.0)] };
        // ŷ = 1.0 + 0.3 = 1.3, y = −0.7
        let c = assemble_cost(&cfg, &m, &data, &pri, &dec).unwrap();
        assert!((c - (2.0 * eta + 4.0)).abs() < 1e-14);
    }

    #[test]
    fn analytic_jacobian_matches_fd() {
        let m = ScalarToyModel::certified();
        let mut cfg = scalar_cfg(0.8);
        cfg.q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.5]));
        let data = WindowData {
            start: 0,
            us: vec![DVector::zeros(0); 4],
            ys: vec![s(0.1), s(0.3), s(-0.2), s(0.05)],
        };
        let pri = Priors { x_bar: s(0.4), z_bar: s(0.2) };
        let p = WindowProblem::new(&cfg, &m, &data, &pri).unwrap();
        let d = DVector::from_fn(p.dim(), |i, _| 0.01 * (i as f64) - 0.03);
        let a = p.jacobian(&d);
        struct Fd<'a>(&'a WindowProblem<'a>);
        impl NlsProblem for Fd<'_> {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn bounds(&self) -> &BoxSet {
                self.0.bounds()
            }
            fn residuals(&self, d: &DVector<f64>) -> DVector<f64> {
                self.0.residuals(d)
            }
        }
        let n = Fd(&p).jacobian(&d);
        assert!((&a - &n).amax() < 1e-7);
        let r = p.residuals(&d);
        let (jtj, jtr) = p.normal_equations(&d, &r);
        assert!((jtj - a.tr_mul(&a)).amax() < 1e-10);
        assert!((jtr - a.tr_mul(&r)).amax() < 1e-10);
    }

    #[test]
    fn residuals_reproduce_cost() {
        let m = ScalarToyModel::certified();
        let mut cfg = scalar_cfg(0.7);
        cfg.q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.5]));
        let data = WindowData {
            start: 0,
            us: vec![DVector::zeros(0); 3],
            ys: vec![s(0.1), s(0.3), s(-0.2)],
        };
        let pri = Priors { x_bar: s(0.4), z_bar: s(0.2) };
        let p = WindowProblem::new(&cfg, &m, &data, &pri).unwrap();
        let dec = Decisions {
            x0: s(0.3),
            z0: s(0.1),
            w: vec![DVector::from_vec(vec![0.01, -0.02, 0.03]); 3],
        };
        let c = assemble_cost(&cfg, &m, &data, &pri, &dec).unwrap();
        assert!((p.objective(&dec.pack()) - c).abs() < 1e-13);
    }

    #[test]
    fn prior_update_cases() {
        let half = LinearModel::scalar(0.5, 0.0, 0.5);
        let us = vec![DVector::zeros(0); 2];
        let z = prior_update(&half, 10, 3, false, &s(0.9), &s(0.4), &us);
        assert!((z[0] - 0.1).abs() < 1e-15);
        let z = prior_update(&half, 2, 3, true, &s(0.9), &s(0.4), &us);
        assert_eq!(z[0], 0.9);
        // observable flag ignored before a full horizon
        let z = prior_update(&half, 5, 3, true, &s(0.9), &s(0.4), &us);
        assert!((z[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn never_observable_identity_keeps_initial_prior() {
        let m: Arc<dyn SystemModel> = Arc::new(ScalarToyModel::certified());
        let mut cfg = scalar_cfg(0.8);
        cfg.q = DMatrix::identity(3, 3);
        let mut est = Estimator::new(m, cfg, s(0.0), s(0.37)).unwrap();
        for k in 0..12 {
            let rec = est.update(&DVector::zeros(0), &s(0.1 * k as f64)).unwrap();
            assert_eq!(rec.z_bar, s(0.37));
        }
    }

    #[test]
    fn noiseless_exact_priors_track_truth() {
        let model = ScalarToyModel::certified();
        let w = vec![DVector::zeros(3); 15];
        let u = vec![DVector::zeros(0); 15];
        let tr = simulate_truth(&model, &s(0.8), &s(0.3), &u, &w).unwrap();
        let mut cfg = scalar_cfg(0.8);
        cfg.q = DMatrix::identity(3, 3);
        let m: Arc<dyn SystemModel> = Arc::new(model);
        let mut est = Estimator::new(m, cfg, s(0.8), s(0.3)).unwrap();
        for r in &tr.records {
            let rec = est.update(&r.u, &r.y).unwrap();
            assert!((&rec.x_hat - tr.x_at(rec.t)).amax() <= 1e-10);
            assert!((&rec.z_hat - tr.z_at(rec.t)).amax() <= 1e-10);
        }
    }

    #[test]
    fn failed_update_keeps_state() {
        let m: Arc<dyn SystemModel> = Arc::new(ScalarToyModel::certified());
        let mut cfg = scalar_cfg(0.8);
        cfg.q = DMatrix::identity(3, 3);
        let mut est = Estimator::new(m, cfg, s(0.0), s(0.3)).unwrap();
        est.update(&DVector::zeros(0), &s(0.2)).unwrap();
        assert!(est.update(&DVector::zeros(0), &s(f64::NAN)).is_err());
        assert_eq!(est.t(), 1);
        assert!(est.update(&DVector::zeros(0), &s(0.2)).is_ok());
    }
}
