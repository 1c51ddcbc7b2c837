//! Decomposed nonlinear systems x⁺ = f(x,z,u,w), z⁺ = g(z,u,w), y = h(x,z,u,w).

mod chua;
mod linear;
mod toy;

pub use chua::{ChuaModel, ChuaParams};
pub use linear::LinearModel;
pub use toy::ScalarToyModel;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MheError, Result};
use crate::linalg::all_finite_vec;

/// Axis-aligned box `{v : lower ≤ v ≤ upper}`; entries may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(MheError::InvalidParameter(
                "box lower bound exceeds upper bound".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(lower),
            DVector::from_column_slice(upper),
        )
    }

    /// Symmetric box `[-b, b]` per component.
    pub fn symmetric(bounds: &[f64]) -> Result<Self> {
        let lo: Vec<f64> = bounds.iter().map(|b| -b).collect();
        Self::from_slices(&lo, bounds)
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.len() == self.dim()
            && v
                .iter()
                .enumerate()
                .all(|(i, x)| *x >= self.lower[i] - tol && *x <= self.upper[i] + tol)
    }

    /// Elementwise clamp into the box.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| v[i].max(self.lower[i]).min(self.upper[i]))
    }

    /// Amount by which each component leaves the box (zero inside).
    pub fn violation(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| {
            if v[i] < self.lower[i] {
                v[i] - self.lower[i]
            } else if v[i] > self.upper[i] {
                v[i] - self.upper[i]
            } else {
                0.0
            }
        })
    }

    pub fn concat(parts: &[&BoxSet]) -> BoxSet {
        let lo: Vec<f64> = parts.iter().flat_map(|b| b.lower.iter().copied()).collect();
        let hi: Vec<f64> = parts.iter().flat_map(|b| b.upper.iter().copied()).collect();
        BoxSet {
            lower: DVector::from_vec(lo),
            upper: DVector::from_vec(hi),
        }
    }

    pub fn rows(&self, start: usize, n: usize) -> BoxSet {
        BoxSet {
            lower: self.lower.rows(start, n).into_owned(),
            upper: self.upper.rows(start, n).into_owned(),
        }
    }
}

/// Free-function form of [`BoxSet::project`].
pub fn project_box(b: &BoxSet, v: &DVector<f64>) -> DVector<f64> {
    b.project(v)
}

/// The sets X, Z, U, W. Outputs are unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSets {
    pub x: BoxSet,
    pub z: BoxSet,
    pub u: BoxSet,
    pub w: BoxSet,
}

impl ConstraintSets {
    pub fn unbounded(d: &Dims) -> Self {
        Self {
            x: BoxSet::unbounded(d.n_x),
            z: BoxSet::unbounded(d.n_z),
            u: BoxSet::unbounded(d.n_u),
            w: BoxSet::unbounded(d.n_w()),
        }
    }

    pub fn process_w(&self, d: &Dims) -> BoxSet {
        self.w.rows(0, d.n_w_proc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_z: usize,
    pub n_u: usize,
    pub n_w_proc: usize,
    pub n_w_meas: usize,
    pub n_y: usize,
}

impl Dims {
    pub fn n_w(&self) -> usize {
        self.n_w_proc + self.n_w_meas
    }
}

/// Partial derivatives of f, g, h at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub f_x: DMatrix<f64>,
    pub f_z: DMatrix<f64>,
    pub f_w: DMatrix<f64>,
    pub g_z: DMatrix<f64>,
    pub g_w: DMatrix<f64>,
    pub h_x: DMatrix<f64>,
    pub h_z: DMatrix<f64>,
    pub h_w: DMatrix<f64>,
}

/// A system in the decomposed form. `w` stacks the process part first and the
/// measurement part after it.
pub trait SystemModel: Send + Sync {
    fn name(&self) -> &str;
    fn dims(&self) -> Dims;
    fn constraints(&self) -> &ConstraintSets;
    fn f(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>)
        -> DVector<f64>;
    fn g(&self, z: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64>;
    fn h(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>)
        -> DVector<f64>;

    /// Analytic partials, if the model has them.
    fn analytic_jacobians(
        &self,
        _x: &DVector<f64>,
        _z: &DVector<f64>,
        _u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Option<Jacobians> {
        None
    }
}

fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

fn fd_columns<F>(v: &DVector<f64>, n_out: usize, eval: F) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut jac = DMatrix::zeros(n_out, v.len());
    let mut vp = v.clone();
    for k in 0..v.len() {
        let h = fd_step(v[k]);
        vp[k] = v[k] + h;
        let fp = eval(&vp);
        vp[k] = v[k] - h;
        let fm = eval(&vp);
        vp[k] = v[k];
        jac.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Central finite-difference partials with step 1e-6·(1+|v|).
pub fn fd_jacobians(
    model: &dyn SystemModel,
    x: &DVector<f64>,
    z: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Jacobians {
    let d = model.dims();
    Jacobians {
        f_x: fd_columns(x, d.n_x, |v| model.f(v, z, u, w)),
        f_z: fd_columns(z, d.n_x, |v| model.f(x, v, u, w)),
        f_w: fd_columns(w, d.n_x, |v| model.f(x, z, u, v)),
        g_z: fd_columns(z, d.n_z, |v| model.g(v, u, w)),
        g_w: fd_columns(w, d.n_z, |v| model.g(z, u, v)),
        h_x: fd_columns(x, d.n_y, |v| model.h(v, z, u, w)),
        h_z: fd_columns(z, d.n_y, |v| model.h(x, v, u, w)),
        h_w: fd_columns(w, d.n_y, |v| model.h(x, z, u, v)),
    }
}

/// Analytic partials when available, finite differences otherwise.
pub fn jacobians(
    model: &dyn SystemModel,
    x: &DVector<f64>,
    z: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Jacobians {
    model
        .analytic_jacobians(x, z, u, w)
        .unwrap_or_else(|| fd_jacobians(model, x, z, u, w))
}

fn check_point(
    model: &dyn SystemModel,
    x: Option<&DVector<f64>>,
    z: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<()> {
    let d = model.dims();
    if let Some(x) = x {
        check_dim("x", d.n_x, x.len())?;
    }
    check_dim("z", d.n_z, z.len())?;
    check_dim("u", d.n_u, u.len())?;
    check_dim("w", d.n_w(), w.len())
}

fn finite_or(v: DVector<f64>, n: usize, what: &str) -> Result<DVector<f64>> {
    check_dim(what, n, v.len())?;
    if !all_finite_vec(&v) {
        return Err(MheError::NonFinite {
            what: what.to_string(),
            step: None,
        });
    }
    Ok(v)
}

/// One step of the dynamics: `(f(x,z,u,w), g(z,u,w))`.
pub fn step(
    model: &dyn SystemModel,
    x: &DVector<f64>,
    z: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_point(model, Some(x), z, u, w)?;
    let d = model.dims();
    let xn = finite_or(model.f(x, z, u, w), d.n_x, "f")?;
    let zn = finite_or(model.g(z, u, w), d.n_z, "g")?;
    Ok((xn, zn))
}

/// Output map `h(x,z,u,w)`.
pub fn output(
    model: &dyn SystemModel,
    x: &DVector<f64>,
    z: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_point(model, Some(x), z, u, w)?;
    finite_or(model.h(x, z, u, w), model.dims().n_y, "h")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub y: DVector<f64>,
}

/// Records for t = 0..T-1 plus the terminal state reached after the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub x_final: DVector<f64>,
    pub z_final: DVector<f64>,
    /// Steps at which the truth left the declared sets.
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// State at time t, including the terminal one at t = T.
    pub fn x_at(&self, t: usize) -> &DVector<f64> {
        if t == self.records.len() {
            &self.x_final
        } else {
            &self.records[t].x
        }
    }

    pub fn z_at(&self, t: usize) -> &DVector<f64> {
        if t == self.records.len() {
            &self.z_final
        } else {
            &self.records[t].z
        }
    }
}

/// Rolls out the true system. Leaving the constraint sets is logged, not fatal.
pub fn simulate_truth(
    model: &dyn SystemModel,
    x0: &DVector<f64>,
    z0: &DVector<f64>,
    u_seq: &[DVector<f64>],
    w_seq: &[DVector<f64>],
) -> Result<Trajectory> {
    check_dim("input/disturbance sequence length", w_seq.len(), u_seq.len())?;
    let cs = model.constraints();
    let mut x = x0.clone();
    let mut z = z0.clone();
    let mut records = Vec::with_capacity(w_seq.len());
    let mut warnings = Vec::new();
    for (t, (u, w)) in u_seq.iter().zip(w_seq).enumerate() {
        let tag = |e: MheError| match e {
            MheError::NonFinite { what, .. } => MheError::NonFinite {
                what,
                step: Some(t),
            },
            other => other,
        };
        if !cs.x.contains(&x, 0.0) || !cs.z.contains(&z, 0.0) {
            warnings.push(format!("t={t}: state outside X x Z"));
        }
        if !cs.u.contains(u, 0.0) || !cs.w.contains(w, 0.0) {
            warnings.push(format!("t={t}: input or disturbance outside U x W"));
        }
        let y = output(model, &x, &z, u, w).map_err(tag)?;
        let (xn, zn) = step(model, &x, &z, u, w).map_err(tag)?;
        records.push(StepRecord {
            t,
            x: std::mem::replace(&mut x, xn),
            z: std::mem::replace(&mut z, zn),
            u: u.clone(),
            w: w.clone(),
            y,
        });
    }
    if !cs.x.contains(&x, 0.0) || !cs.z.contains(&z, 0.0) {
        warnings.push(format!("t={}: state outside X x Z", w_seq.len()));
    }
    Ok(Trajectory {
        records,
        x_final: x,
        z_final: z,
        warnings,
    })
}

/// Maximum of max|A − FD| / max(1, max|A|) over all partial blocks at one point.
pub fn jacobian_deviation(
    model: &dyn SystemModel,
    x: &DVector<f64>,
    z: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Option<f64> {
    let a = model.analytic_jacobians(x, z, u, w)?;
    let n = fd_jacobians(model, x, z, u, w);
    let pairs = [
        (&a.f_x, &n.f_x),
        (&a.f_z, &n.f_z),
        (&a.f_w, &n.f_w),
        (&a.g_z, &n.g_z),
        (&a.g_w, &n.g_w),
        (&a.h_x, &n.h_x),
        (&a.h_z, &n.h_z),
        (&a.h_w, &n.h_w),
    ];
    let mut worst: f64 = 0.0;
    for (an, fd) in pairs {
        if an.is_empty() {
            continue;
        }
        let dev = (an - fd).amax() / an.amax().max(1.0);
        worst = worst.max(dev);
    }
    Some(worst)
}

/// Builds a built-in model by name.
pub fn builtin(name: &str) -> Result<Box<dyn SystemModel>> {
    match name {
        "chua" => Ok(Box::new(ChuaModel::nominal())),
        "scalar_toy" => Ok(Box::new(ScalarToyModel::certified())),
        other => Err(MheError::Config(format!("unknown model '{other}'"))),
    }
}
