//! Proposed vs baseline parameter-error summaries, split by observability phase.

use serde::{Deserialize, Serialize};

use super::record::RunRecord;
use crate::error::{MheError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseStats {
    /// Mean ‖e_z‖ over steps flagged observable.
    pub mean_observable: f64,
    pub mean_unobservable: f64,
    pub mean_all: f64,
    pub rms_all: f64,
    pub mean_ex: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub from_t: usize,
    pub n_observable: usize,
    pub n_unobservable: usize,
    pub proposed: PhaseStats,
    pub baseline: PhaseStats,
    /// proposed / baseline unobservable-phase mean ‖e_z‖.
    pub unobservable_ratio: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn stats(ez: &[f64], ex: &[f64], flags: &[bool]) -> PhaseStats {
    let pick = |want: bool| -> Vec<f64> {
        ez.iter().zip(flags).filter(|(_, &f)| f == want).map(|(&e, _)| e).collect()
    };
    PhaseStats {
        mean_observable: mean(&pick(true)),
        mean_unobservable: mean(&pick(false)),
        mean_all: mean(ez),
        rms_all: mean(&ez.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt(),
        mean_ex: mean(ex),
    }
}

/// Aggregates over rows with t ≥ `from_t`; phases follow the proposed estimator's
/// observable flag so both estimators are compared on the same steps.
pub fn compare_runs(record: &RunRecord, from_t: usize) -> Result<CompareSummary> {
    if !record.has_baseline {
        return Err(MheError::MissingData("record has no baseline columns".into()));
    }
    let rows: Vec<_> = record.rows.iter().filter(|r| r.t >= from_t).collect();
    if rows.is_empty() {
        return Err(MheError::MissingData(format!("no rows with t >= {from_t}")));
    }
    let flags: Vec<bool> = rows.iter().map(|r| r.observable).collect();
    let mut base_ez = Vec::with_capacity(rows.len());
    let mut base_ex = Vec::with_capacity(rows.len());
    for r in &rows {
        let b = r
            .baseline
            .as_ref()
            .ok_or_else(|| MheError::MissingData(format!("baseline values at t={}", r.t)))?;
        base_ez.push(b.ez_norm);
        base_ex.push(b.ex_norm);
    }
    let ez: Vec<f64> = rows.iter().map(|r| r.ez_norm).collect();
    let ex: Vec<f64> = rows.iter().map(|r| r.ex_norm).collect();
    let proposed = stats(&ez, &ex, &flags);
    let baseline = stats(&base_ez, &base_ex, &flags);
    let n_observable = flags.iter().filter(|&&f| f).count();
    Ok(CompareSummary {
        from_t,
        n_observable,
        n_unobservable: flags.len() - n_observable,
        unobservable_ratio: proposed.mean_unobservable / baseline.mean_unobservable,
        proposed,
        baseline,
    })
}

impl CompareSummary {
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("from_t".to_string(), self.from_t.to_string()),
            ("n_observable".into(), self.n_observable.to_string()),
            ("n_unobservable".into(), self.n_unobservable.to_string()),
        ];
        for (tag, s) in [("proposed", &self.proposed), ("baseline", &self.baseline)] {
            kv.push((format!("{tag}.mean_ez_observable"), format!("{:e}", s.mean_observable)));
            kv.push((format!("{tag}.mean_ez_unobservable"), format!("{:e}", s.mean_unobservable)));
            kv.push((format!("{tag}.mean_ez"), format!("{:e}", s.mean_all)));
            kv.push((format!("{tag}.rms_ez"), format!("{:e}", s.rms_all)));
            kv.push((format!("{tag}.mean_ex"), format!("{:e}", s.mean_ex)));
        }
        kv.push(("unobservable_ratio".into(), format!("{:e}", self.unobservable_ratio)));
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::record::{BaselineRow, RecordDims, RunRow};
    use nalgebra::DVector;

    fn rec(pairs: &[(f64, f64, bool)]) -> RunRecord {
        let dims = RecordDims {
            n_x: 1,
            n_z: 1,
            n_w: 1,
            n_y: 1,
        };
        let s = |v: f64| DVector::from_element(1, v);
        let mut r = RunRecord::new(dims, true);
        for (t, &(ez, bez, obs)) in pairs.iter().enumerate() {
            r.rows.push(RunRow {
                t,
                x: s(0.0),
                z: s(0.0),
                w: None,
                y: None,
                x_hat: s(0.0),
                z_hat: s(ez),
                z_win: s(ez),
                z_bar: s(ez),
                ex_norm: 0.0,
                ez_norm: ez,
                alpha: 0.0,
                observable: obs,
                member: None,
                iterations: 0,
                objective: 0.0,
                candidate_cost: 0.0,
                candidate_objective: 0.0,
                solver_objective: 0.0,
                candidate_feasible: true,
                baseline: Some(BaselineRow {
                    x_hat: s(0.0),
                    z_hat: s(bez),
                    ex_norm: 0.0,
                    ez_norm: bez,
                    iterations: 0,
                }),
            });
        }
        r
    }

    #[test]
    fn identical_estimators_ratio_one() {
        let r = rec(&[(0.1, 0.1, false), (0.2, 0.2, true), (0.3, 0.3, false)]);
        let s = compare_runs(&r, 0).unwrap();
        assert_eq!(s.unobservable_ratio, 1.0);
    }

    #[test]
    fn phase_means_recombine() {
        let r = rec(&[(0.1, 0.4, false), (0.2, 0.1, true), (0.7, 0.9, false), (0.05, 0.3, true), (0.3, 0.2, false)]);
        let s = compare_runs(&r, 0).unwrap();
        for p in [s.proposed, s.baseline] {
            let n = (s.n_observable + s.n_unobservable) as f64;
            let recombined =
                (p.mean_observable * s.n_observable as f64 + p.mean_unobservable * s.n_unobservable as f64) / n;
            assert!((recombined - p.mean_all).abs() <= 1e-12);
        }
        assert!((s.unobservable_ratio - 1.1 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn from_t_filters_rows() {
        let r = rec(&[(9.0, 1.0, false), (0.1, 0.2, false)]);
        let s = compare_runs(&r, 1).unwrap();
        assert_eq!(s.n_unobservable, 1);
        assert!((s.unobservable_ratio - 0.5).abs() < 1e-15);
        assert!(compare_runs(&r, 5).is_err());
    }

    #[test]
    fn missing_baseline_is_error() {
        let mut r = rec(&[(0.1, 0.1, false)]);
        r.has_baseline = false;
        assert!(compare_runs(&r, 0).is_err());
    }
}
