use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BoxSet, ConstraintSets, Dims, Jacobians, SystemModel};

/// Euler-discretised Chua circuit with an unknown, slowly drifting cubic coefficient `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChuaParams {
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
    pub dt: f64,
}

impl Default for ChuaParams {
    fn default() -> Self {
        Self {
            b1: 12.8,
            b2: 19.1,
            a1: 0.6,
            a2: -1.1,
            dt: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChuaModel {
    pub params: ChuaParams,
    constraints: ConstraintSets,
}

impl ChuaModel {
    pub fn new(params: ChuaParams, constraints: ConstraintSets) -> Self {
        Self {
            params,
            constraints,
        }
    }

    /// Default parameters with X = [-1,3]×[-1,1]×[-3,3], Z = [0.2,0.8] and the
    /// disturbance box |w₁..₃| ≤ 1e-3, |w₄| ≤ 1e-4, |w₅| ≤ 5e-2.
    pub fn nominal() -> Self {
        let constraints = ConstraintSets {
            x: BoxSet::from_slices(&[-1.0, -1.0, -3.0], &[3.0, 1.0, 3.0]).unwrap(),
            z: BoxSet::from_slices(&[0.2], &[0.8]).unwrap(),
            u: BoxSet::unbounded(0),
            w: BoxSet::symmetric(&[1e-3, 1e-3, 1e-3, 1e-4, 5e-2]).unwrap(),
        };
        Self::new(ChuaParams::default(), constraints)
    }

    pub fn with_constraints(mut self, constraints: ConstraintSets) -> Self {
        self.constraints = constraints;
        self
    }
}

impl SystemModel for ChuaModel {
    fn name(&self) -> &str {
        "chua"
    }

    fn dims(&self) -> Dims {
        Dims {
            n_x: 3,
            n_z: 1,
            n_u: 0,
            n_w_proc: 4,
            n_w_meas: 1,
            n_y: 1,
        }
    }

    fn constraints(&self) -> &ConstraintSets {
        &self.constraints
    }

    fn f(&self, x: &DVector<f64>, z: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        DVector::from_vec(vec![
            x1 + p.dt * p.b1 * (x2 - p.a1 * x1 - p.a2 * x1 * x1 - z[0] * x1 * x1 * x1) + w[0],
            x2 + p.dt * (x1 - x2 + x3) + w[1],
            x3 - p.dt * p.b2 * x2 + w[2],
        ])
    }

    fn g(&self, z: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![z[0] + w[3]])
    }

    fn h(&self, x: &DVector<f64>, _z: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[0] + w[4]])
    }

    fn analytic_jacobians(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        _u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Option<Jacobians> {
        let p = &self.params;
        let x1 = x[0];
        let k = p.dt * p.b1;
        let mut f_x = DMatrix::zeros(3, 3);
        f_x[(0, 0)] = 1.0 + k * (-p.a1 - 2.0 * p.a2 * x1 - 3.0 * z[0] * x1 * x1);
        f_x[(0, 1)] = k;
        f_x[(1, 0)] = p.dt;
        f_x[(1, 1)] = 1.0 - p.dt;
        f_x[(1, 2)] = p.dt;
        f_x[(2, 1)] = -p.dt * p.b2;
        f_x[(2, 2)] = 1.0;
        let f_z = DMatrix::from_column_slice(3, 1, &[-k * x1 * x1 * x1, 0.0, 0.0]);
        let mut f_w = DMatrix::zeros(3, 5);
        for i in 0..3 {
            f_w[(i, i)] = 1.0;
        }
        let mut g_w = DMatrix::zeros(1, 5);
        g_w[(0, 3)] = 1.0;
        let mut h_w = DMatrix::zeros(1, 5);
        h_w[(0, 4)] = 1.0;
        Some(Jacobians {
            f_x,
            f_z,
            f_w,
            g_z: DMatrix::identity(1, 1),
            g_w,
            h_x: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            h_z: DMatrix::zeros(1, 1),
            h_w,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{output, step};

    #[test]
    fn step_matches_scalar_formulas() {
        let m = ChuaModel::nominal();
        let x = DVector::from_vec(vec![2.0, 0.0, -1.0]);
        let z = DVector::from_vec(vec![0.45]);
        let w = DVector::zeros(5);
        let (xn, zn) = step(&m, &x, &z, &DVector::zeros(0), &w).unwrap();
        let x1 = 2.0 + 0.01 * 12.8 * (0.0 - 0.6 * 2.0 + 1.1 * 4.0 - 0.45 * 8.0);
        let x2 = 0.0 + 0.01 * (2.0 - 0.0 - 1.0);
        let x3 = -1.0 - 0.01 * 19.1 * 0.0;
        assert!((xn[0] - x1).abs() < 1e-15);
        assert!((xn[1] - x2).abs() < 1e-15);
        assert!((xn[2] - x3).abs() < 1e-15);
        assert_eq!(zn[0], 0.45);
    }

    #[test]
    fn output_adds_measurement_noise() {
        let m = ChuaModel::nominal();
        let x = DVector::from_vec(vec![2.0, 0.0, -1.0]);
        let mut w = DVector::zeros(5);
        w[4] = 0.01;
        let y = output(&m, &x, &DVector::from_vec(vec![0.45]), &DVector::zeros(0), &w).unwrap();
        assert!((y[0] - 2.01).abs() < 1e-15);
        let y0 = output(&m, &DVector::zeros(3), &DVector::from_vec(vec![0.45]), &DVector::zeros(0), &DVector::zeros(5)).unwrap();
        assert_eq!(y0[0], 0.0);
    }

    #[test]
    fn parameters_embedded() {
        let p = ChuaParams::default();
        assert_eq!((p.b1, p.b2, p.a1, p.a2, p.dt), (12.8, 19.1, 0.6, -1.1, 0.01));
    }
}
