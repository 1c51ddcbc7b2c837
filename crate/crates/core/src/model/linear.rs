use nalgebra::{DMatrix, DVector};

use super::{ConstraintSets, Dims, Jacobians, SystemModel};
use crate::error::{check_dim, Result};

/// Linear system
///
/// x⁺ = A x + F z + B u + G w,  z⁺ = Az z + Bz u + Gz w,  y = C x + D z + H w.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub az: DMatrix<f64>,
    pub bz: DMatrix<f64>,
    pub gz: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub h: DMatrix<f64>,
    dims: Dims,
    constraints: ConstraintSets,
}

impl LinearModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        f: DMatrix<f64>,
        b: DMatrix<f64>,
        g: DMatrix<f64>,
        az: DMatrix<f64>,
        bz: DMatrix<f64>,
        gz: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        h: DMatrix<f64>,
        n_w_proc: usize,
    ) -> Result<Self> {
        let n_x = a.nrows();
        let n_z = az.nrows();
        let n_u = b.ncols();
        let n_w = g.ncols();
        let n_y = c.nrows();
        check_dim("A columns", n_x, a.ncols())?;
        check_dim("F shape", n_x * n_z, f.nrows() * f.ncols())?;
        check_dim("Az columns", n_z, az.ncols())?;
        check_dim("Bz shape", n_z * n_u, bz.nrows() * bz.ncols())?;
        check_dim("Gz columns", n_w, gz.ncols())?;
        check_dim("C columns", n_x, c.ncols())?;
        check_dim("D shape", n_y * n_z, d.nrows() * d.ncols())?;
        check_dim("H shape", n_y * n_w, h.nrows() * h.ncols())?;
        if n_w_proc > n_w {
            return Err(crate::MheError::InvalidParameter(
                "process disturbance dimension exceeds n_w".into(),
            ));
        }
        let dims = Dims {
            n_x,
            n_z,
            n_u,
            n_w_proc,
            n_w_meas: n_w - n_w_proc,
            n_y,
        };
        let constraints = ConstraintSets::unbounded(&dims);
        Ok(Self {
            a,
            f,
            b,
            g,
            az,
            bz,
            gz,
            c,
            d,
            h,
            dims,
            constraints,
        })
    }

    /// x⁺ = x + w_x, z⁺ = z + w_z, y = x; all disturbances are process disturbances.
    pub fn identity(n_x: usize, n_z: usize) -> Self {
        let n_w = n_x + n_z;
        let mut g = DMatrix::zeros(n_x, n_w);
        let mut gz = DMatrix::zeros(n_z, n_w);
        for i in 0..n_x {
            g[(i, i)] = 1.0;
        }
        for i in 0..n_z {
            gz[(i, n_x + i)] = 1.0;
        }
        Self::new(
            DMatrix::identity(n_x, n_x),
            DMatrix::zeros(n_x, n_z),
            DMatrix::zeros(n_x, 0),
            g,
            DMatrix::identity(n_z, n_z),
            DMatrix::zeros(n_z, 0),
            gz,
            DMatrix::identity(n_x, n_x),
            DMatrix::zeros(n_x, n_z),
            DMatrix::zeros(n_x, n_w),
            n_w,
        )
        .unwrap()
    }

    /// Scalar x⁺ = a x + w, z⁺ = az z, y = x.
    pub fn scalar(a: f64, f: f64, az: f64) -> Self {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, f),
            DMatrix::zeros(1, 0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, az),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            1,
        )
        .unwrap()
    }

    pub fn with_constraints(mut self, constraints: ConstraintSets) -> Self {
        self.constraints = constraints;
        self
    }
}

impl SystemModel for LinearModel {
    fn name(&self) -> &str {
        "linear"
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn constraints(&self) -> &ConstraintSets {
        &self.constraints
    }

    fn f(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.f * z + &self.b * u + &self.g * w
    }

    fn g(&self, z: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.az * z + &self.bz * u + &self.gz * w
    }

    fn h(&self, x: &DVector<f64>, z: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * z + &self.h * w
    }

    fn analytic_jacobians(
        &self,
        _x: &DVector<f64>,
        _z: &DVector<f64>,
        _u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Option<Jacobians> {
        Some(Jacobians {
            f_x: self.a.clone(),
            f_z: self.f.clone(),
            f_w: self.g.clone(),
            g_z: self.az.clone(),
            g_w: self.gz.clone(),
            h_x: self.c.clone(),
            h_z: self.d.clone(),
            h_w: self.h.clone(),
        })
    }
}
