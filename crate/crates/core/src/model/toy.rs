use nalgebra::{DMatrix, DVector};

use super::{BoxSet, ConstraintSets, Dims, Jacobians, SystemModel};

/// Scalar test system x⁺ = a·x + w₁, z⁺ = z + w₂, y = x + b·z + w₃.
///
/// All three disturbance components are treated as process disturbances, so
/// the estimator weighs each of them explicitly.
#[derive(Debug, Clone)]
pub struct ScalarToyModel {
    pub a: f64,
    pub b: f64,
    constraints: ConstraintSets,
}

impl ScalarToyModel {
    pub fn new(a: f64, b: f64, w_bounds: [f64; 3]) -> Self {
        let constraints = ConstraintSets {
            x: BoxSet::unbounded(1),
            z: BoxSet::unbounded(1),
            u: BoxSet::unbounded(0),
            w: BoxSet::symmetric(&w_bounds).unwrap(),
        };
        Self { a, b, constraints }
    }

    /// a = 0.5, b = 1, |w₁| ≤ 1e-2, |w₂| ≤ 1e-3, |w₃| ≤ 5e-2.
    pub fn certified() -> Self {
        Self::new(0.5, 1.0, [1e-2, 1e-3, 5e-2])
    }

    pub fn with_constraints(mut self, constraints: ConstraintSets) -> Self {
        self.constraints = constraints;
        self
    }
}

impl SystemModel for ScalarToyModel {
    fn name(&self) -> &str {
        "scalar_toy"
    }

    fn dims(&self) -> Dims {
        Dims {
            n_x: 1,
            n_z: 1,
            n_u: 0,
            n_w_proc: 3,
            n_w_meas: 0,
            n_y: 1,
        }
    }

    fn constraints(&self) -> &ConstraintSets {
        &self.constraints
    }

    fn f(&self, x: &DVector<f64>, _z: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.a * x[0] + w[0])
    }

    fn g(&self, z: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, z[0] + w[1])
    }

    fn h(&self, x: &DVector<f64>, z: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0] + self.b * z[0] + w[2])
    }

    fn analytic_jacobians(
        &self,
        _x: &DVector<f64>,
        _z: &DVector<f64>,
        _u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Option<Jacobians> {
        Some(Jacobians {
            f_x: DMatrix::from_element(1, 1, self.a),
            f_z: DMatrix::zeros(1, 1),
            f_w: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            g_z: DMatrix::from_element(1, 1, 1.0),
            g_w: DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]),
            h_x: DMatrix::from_element(1, 1, 1.0),
            h_z: DMatrix::from_element(1, 1, self.b),
            h_w: DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
        })
    }
}
