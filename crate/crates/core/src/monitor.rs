//! Online observability monitor: a discounted Gramian of the parameter
//! sensitivities along the estimated window, thresholded by its smallest eigenvalue.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, MheError, Result};
use crate::linalg::{all_finite_mat, is_symmetric, min_eigenvalue, spectral_radius};
use crate::model::{jacobians, SystemModel};

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorConfig {
    /// Discount of the Gramian sum (not the contraction constant of the analysis).
    pub mu_mon: f64,
    /// Schur-stable filter matrix of the sensitivity recursion.
    pub phi: DMatrix<f64>,
    /// Output-selection matrix, n_y × n_x.
    pub c: DMatrix<f64>,
    pub alpha: f64,
}

impl MonitorConfig {
    pub fn new(mu_mon: f64, phi: DMatrix<f64>, c: DMatrix<f64>, alpha: f64) -> Result<Self> {
        let cfg = Self {
            mu_mon,
            phi,
            c,
            alpha,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// μ_mon = 0.95, Φ = 0.5·I, α = 5e-4.
    pub fn with_defaults(c: DMatrix<f64>) -> Self {
        let n_x = c.ncols();
        Self {
            mu_mon: 0.95,
            phi: DMatrix::identity(n_x, n_x) * 0.5,
            c,
            alpha: 5e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_mon > 0.0 && self.mu_mon < 1.0) {
            return Err(MheError::InvalidParameter(format!(
                "monitor discount {} outside (0,1)",
                self.mu_mon
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(MheError::InvalidParameter("monitor threshold must be positive".into()));
        }
        if !self.phi.is_square() {
            return Err(MheError::InvalidParameter("Phi must be square".into()));
        }
        check_dim("C columns", self.phi.nrows(), self.c.ncols())?;
        let rho = spectral_radius(&self.phi);
        if rho >= 1.0 {
            return Err(MheError::InvalidParameter(format!(
                "Phi is not Schur stable (spectral radius {rho})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorOutput {
    pub o: DMatrix<f64>,
    pub alpha_t: f64,
    pub observable: bool,
}

/// O = Σ_{j=0}^{N_t−1} μ^{N_t−j+1} Y_jᵀCᵀC Y_j with Y₀ = 0 and
/// Y_{j+1} = Φ Y_j + ∂f/∂z at window point j.
///
/// `xs`, `zs`, `us`, `ws` hold the N_t window points. The observable flag only
/// reflects the threshold; the prior update additionally requires t ≥ N.
pub fn observability_gramian(
    cfg: &MonitorConfig,
    model: &dyn SystemModel,
    xs: &[DVector<f64>],
    zs: &[DVector<f64>],
    us: &[DVector<f64>],
    ws: &[DVector<f64>],
) -> Result<MonitorOutput> {
    let d = model.dims();
    let nt = us.len();
    if xs.len() < nt || zs.len() < nt || ws.len() < nt {
        return Err(MheError::MissingData("window shorter than N_t".into()));
    }
    check_dim("monitor C columns", d.n_x, cfg.c.ncols())?;
    let mut y = DMatrix::zeros(d.n_x, d.n_z);
    let mut o = DMatrix::zeros(d.n_z, d.n_z);
    let ctc = cfg.c.tr_mul(&cfg.c);
    for j in 0..nt {
        let weight = cfg.mu_mon.powi((nt - j + 1) as i32);
        o += (y.tr_mul(&ctc) * &y) * weight;
        if j + 1 < nt {
            let fz = jacobians(model, &xs[j], &zs[j], &us[j], &ws[j]).f_z;
            if !all_finite_mat(&fz) {
                return Err(MheError::NonFinite {
                    what: "monitor Jacobian df/dz".into(),
                    step: Some(j),
                });
            }
            y = &cfg.phi * &y + fz;
        }
    }
    o = (&o + o.transpose()) * 0.5;
    debug_assert!(is_symmetric(&o, 1e-12));
    let alpha_t = if d.n_z == 0 { 0.0 } else { min_eigenvalue(&o) };
    Ok(MonitorOutput {
        observable: is_observable(alpha_t, cfg.alpha),
        o,
        alpha_t,
    })
}

/// α_t ≥ α (boundary inclusive).
pub fn is_observable(alpha_t: f64, alpha: f64) -> bool {
    alpha_t >= alpha
}
