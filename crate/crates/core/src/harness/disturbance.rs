//! Seeded disturbance sequences.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MheError, Result};

/// Generator for one disturbance component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentSpec {
    Zero,
    /// i.i.d. uniform on [−bound, bound].
    Uniform { bound: f64 },
    /// Sum of square waves; wave i is +aᵢ on the first half of each period, −aᵢ on the second.
    SquareWaves {
        amplitudes: Vec<f64>,
        periods: Vec<usize>,
        #[serde(default)]
        phases: Vec<usize>,
    },
}

impl ComponentSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ComponentSpec::Zero => Ok(()),
            ComponentSpec::Uniform { bound } => {
                if !(bound.is_finite() && *bound > 0.0) {
                    return Err(MheError::Config(format!("uniform bound must be positive, got {bound}")));
                }
                Ok(())
            }
            ComponentSpec::SquareWaves {
                amplitudes,
                periods,
                phases,
            } => {
                if amplitudes.is_empty() || amplitudes.len() != periods.len() {
                    return Err(MheError::Config(
                        "square waves need one period per amplitude".into(),
                    ));
                }
                if !phases.is_empty() && phases.len() != periods.len() {
                    return Err(MheError::Config("square waves need one phase per period".into()));
                }
                if periods.iter().any(|&p| p < 2) {
                    return Err(MheError::Config("square-wave periods must be at least 2".into()));
                }
                if amplitudes.iter().any(|a| !a.is_finite()) {
                    return Err(MheError::Config("square-wave amplitudes must be finite".into()));
                }
                Ok(())
            }
        }
    }

    /// Largest magnitude the component can take.
    pub fn bound(&self) -> f64 {
        match self {
            ComponentSpec::Zero => 0.0,
            ComponentSpec::Uniform { bound } => *bound,
            ComponentSpec::SquareWaves { amplitudes, .. } => amplitudes.iter().map(|a| a.abs()).sum(),
        }
    }
}

/// Value of a square-wave superposition at step t.
pub fn square_wave(amplitudes: &[f64], periods: &[usize], phases: &[usize], t: usize) -> f64 {
    amplitudes
        .iter()
        .zip(periods)
        .enumerate()
        .map(|(i, (&a, &p))| {
            let phase = phases.get(i).copied().unwrap_or(0);
            if 2 * ((t + phase) % p) < p {
                a
            } else {
                -a
            }
        })
        .sum()
}

/// Disturbance sequence w_0..w_{t_sim−1}. Random draws are taken time-major
/// (all uniform components of w_t before w_{t+1}) from ChaCha8 seeded with `seed`.
pub fn generate_disturbances(spec: &[ComponentSpec], seed: u64, t_sim: usize) -> Result<Vec<DVector<f64>>> {
    for c in spec {
        c.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(t_sim);
    for t in 0..t_sim {
        let mut w = DVector::zeros(spec.len());
        for (i, c) in spec.iter().enumerate() {
            w[i] = match c {
                ComponentSpec::Zero => 0.0,
                ComponentSpec::Uniform { bound } => rng.random_range(-bound..=*bound),
                ComponentSpec::SquareWaves {
                    amplitudes,
                    periods,
                    phases,
                } => square_wave(amplitudes, periods, phases, t),
            };
        }
        out.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chua_spec() -> Vec<ComponentSpec> {
        let u = |b| ComponentSpec::Uniform { bound: b };
        vec![
            u(1e-3),
            u(1e-3),
            u(1e-3),
            ComponentSpec::SquareWaves {
                amplitudes: vec![5e-5, 5e-5],
                periods: vec![300, 500],
                phases: vec![0, 0],
            },
            u(5e-2),
        ]
    }

    #[test]
    fn zero_spec_gives_zeros() {
        let w = generate_disturbances(&vec![ComponentSpec::Zero; 3], 1, 20).unwrap();
        assert_eq!(w.len(), 20);
        assert!(w.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn bounds_respected() {
        let w = generate_disturbances(&chua_spec(), 7, 3000).unwrap();
        for v in &w {
            for i in 0..3 {
                assert!(v[i].abs() <= 1e-3);
            }
            assert!(v[4].abs() <= 5e-2);
        }
    }

    #[test]
    fn square_wave_value_set() {
        let w = generate_disturbances(&chua_spec(), 7, 3000).unwrap();
        let mut seen = [false; 3];
        for v in &w {
            let k = [-1e-4, 0.0, 1e-4].iter().position(|&a| a == v[3]);
            seen[k.expect("value outside {-1e-4, 0, 1e-4}")] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn square_wave_half_periods() {
        assert_eq!(square_wave(&[1.0], &[4], &[0], 0), 1.0);
        assert_eq!(square_wave(&[1.0], &[4], &[0], 1), 1.0);
        assert_eq!(square_wave(&[1.0], &[4], &[0], 2), -1.0);
        assert_eq!(square_wave(&[1.0], &[4], &[1], 1), -1.0);
    }

    #[test]
    fn seeded_reproducible() {
        let a = generate_disturbances(&chua_spec(), 42, 100).unwrap();
        let b = generate_disturbances(&chua_spec(), 42, 100).unwrap();
        let c = generate_disturbances(&chua_spec(), 43, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ComponentSpec::Uniform { bound: 0.0 }.validate().is_err());
        let sq = ComponentSpec::SquareWaves {
            amplitudes: vec![1.0],
            periods: vec![2, 3],
            phases: vec![],
        };
        assert!(sq.validate().is_err());
    }
}
