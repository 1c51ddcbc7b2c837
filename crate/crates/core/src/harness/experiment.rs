//! Runs the estimator (and optionally the baseline) against a simulated truth.

use std::cell::Cell;

use nalgebra::DVector;

use super::config::{ExperimentConfig, ObservabilityChoice, ResolvedExperiment};
use super::disturbance::generate_disturbances;
use super::record::{BaselineRow, RecordDims, RunInfo, RunMeta, RunRecord, RunRow, RunStatus};
use crate::analysis::TheoryRun;
use crate::certificates::{membership_e, ObservabilityCertificate};
use crate::error::{MheError, Result};
use crate::mhe::{EstimateRecord, Estimator, WindowSolution};
use crate::model::{simulate_truth, StepRecord, Trajectory};

/// Stored truth warnings beyond this count are summarised.
const MAX_WARNINGS: usize = 20;

pub struct ExperimentOutput {
    pub record: RunRecord,
    pub meta: RunMeta,
    pub truth: Trajectory,
}

impl ExperimentOutput {
    pub fn is_complete(&self) -> bool {
        self.meta.run.status == RunStatus::Complete
    }
}

/// Whether (optimal window, true trajectory over the same times) is an observable pair.
pub fn window_membership(cert: &ObservabilityCertificate, sol: &WindowSolution, truth: &Trajectory) -> Result<bool> {
    let (s, e) = (sol.start, sol.end());
    if e > truth.len() {
        return Err(MheError::MissingData(format!("truth ends before t={e}")));
    }
    let ro = &sol.rollout;
    let records = (0..e - s)
        .map(|j| StepRecord {
            t: s + j,
            x: ro.xs[j].clone(),
            z: ro.zs[j].clone(),
            u: truth.records[s + j].u.clone(),
            w: ro.ws[j].clone(),
            y: ro.ys[j].clone(),
        })
        .collect();
    let est = Trajectory {
        records,
        x_final: ro.xs[e - s].clone(),
        z_final: ro.zs[e - s].clone(),
        warnings: Vec::new(),
    };
    let tru = Trajectory {
        records: truth.records[s..e].to_vec(),
        x_final: truth.x_at(e).clone(),
        z_final: truth.z_at(e).clone(),
        warnings: Vec::new(),
    };
    membership_e(cert, &est, &tru)
}

fn row_from(
    truth: &Trajectory,
    t: usize,
    est: &EstimateRecord,
    member: Option<bool>,
    base: Option<&EstimateRecord>,
) -> RunRow {
    let x = truth.x_at(t).clone();
    let z = truth.z_at(t).clone();
    let (w, y) = match truth.records.get(t) {
        Some(r) => (Some(r.w.clone()), Some(r.y.clone())),
        None => (None, None),
    };
    let baseline = base.map(|b| BaselineRow {
        ex_norm: (&b.x_hat - &x).norm(),
        ez_norm: (&b.z_hat - &z).norm(),
        x_hat: b.x_hat.clone(),
        z_hat: b.z_hat.clone(),
        iterations: b.iterations,
    });
    RunRow {
        t,
        ex_norm: (&est.x_hat - &x).norm(),
        ez_norm: (&est.z_hat - &z).norm(),
        x,
        z,
        w,
        y,
        x_hat: est.x_hat.clone(),
        z_hat: est.z_hat.clone(),
        z_win: est.z_hat_window.clone(),
        z_bar: est.z_bar.clone(),
        alpha: est.alpha_t,
        observable: est.observable,
        member,
        iterations: est.iterations,
        objective: est.objective,
        candidate_cost: est.candidate_cost,
        candidate_objective: est.candidate_objective,
        solver_objective: est.solver_objective,
        candidate_feasible: est.candidate_feasible,
        baseline,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_resolved(&cfg.resolve()?)
}

/// Simulates the truth and drives the estimators step by step. A failure inside
/// the estimation loop ends the run early; the rows computed so far are kept and
/// the status is [`RunStatus::Partial`].
pub fn run_resolved(r: &ResolvedExperiment) -> Result<ExperimentOutput> {
    let cfg = &r.config;
    let model = r.model.clone();
    let d = model.dims();
    let t_sim = cfg.t_sim;
    let ws = generate_disturbances(&cfg.disturbance, cfg.seed, t_sim)?;
    let us = vec![DVector::zeros(d.n_u); t_sim];
    let truth = simulate_truth(model.as_ref(), &r.x0, &r.z0, &us, &ws)?;

    let exact_cert = match r.observability {
        ObservabilityChoice::Exact => Some(
            &r.certs
                .as_ref()
                .ok_or_else(|| MheError::Config("exact observability needs certificates".into()))?
                .obs,
        ),
        ObservabilityChoice::Monitor => None,
    };

    let mut est = Estimator::new(model.clone(), r.mhe.clone(), r.x_hat0.clone(), r.z_hat0.clone())?;
    let mut base = if cfg.baseline {
        Some(Estimator::new(model.clone(), r.baseline.clone(), r.x_hat0.clone(), r.z_hat0.clone())?)
    } else {
        None
    };

    let dims = RecordDims {
        n_x: d.n_x,
        n_z: d.n_z,
        n_w: d.n_w(),
        n_y: d.n_y,
    };
    let mut record = RunRecord::new(dims, cfg.baseline);
    let b0 = base.as_ref().map(|b| b.initial_record());
    record.rows.push(row_from(&truth, 0, &est.initial_record(), None, b0.as_ref()));

    let mut error = None;
    for t in 0..t_sim {
        let (u, y) = (&truth.records[t].u, &truth.records[t].y);
        let member = Cell::new(None);
        let step = match exact_cert {
            Some(cert) => est.update_with(u, y, |sol| {
                let m = window_membership(cert, sol, &truth)?;
                member.set(Some(m));
                Ok(Some(m))
            }),
            None => est.update(u, y),
        };
        let rec = match step {
            Ok(rec) => rec,
            Err(e) => {
                error = Some(format!("estimator failed at t={}: {e}", t + 1));
                break;
            }
        };
        let brec = match base.as_mut().map(|b| b.update(u, y)).transpose() {
            Ok(b) => b,
            Err(e) => {
                error = Some(format!("baseline failed at t={}: {e}", t + 1));
                break;
            }
        };
        record.rows.push(row_from(&truth, t + 1, &rec, member.get(), brec.as_ref()));
    }

    let mut warnings: Vec<String> = truth.warnings.iter().take(MAX_WARNINGS).cloned().collect();
    if truth.warnings.len() > MAX_WARNINGS {
        warnings.push(format!("{} truth warnings in total", truth.warnings.len()));
    }
    let meta = RunMeta {
        run: RunInfo {
            seed: cfg.seed,
            status: if error.is_some() { RunStatus::Partial } else { RunStatus::Complete },
            rows: record.rows.len(),
            error,
            warnings,
        },
        config: cfg.clone(),
    };
    Ok(ExperimentOutput { record, meta, truth })
}

/// Truth, estimates and membership flags of a record in the form the audits take.
/// Rows without an exact membership value fall back to the observable flag.
pub fn theory_run(record: &RunRecord, n: usize) -> Result<TheoryRun> {
    let rows = &record.rows;
    if rows.is_empty() {
        return Err(MheError::MissingData("empty record".into()));
    }
    let last = rows.len() - 1;
    let w = rows[..last]
        .iter()
        .map(|r| {
            r.w.clone()
                .ok_or_else(|| MheError::MissingData(format!("disturbance at t={}", r.t)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TheoryRun {
        n,
        x: rows.iter().map(|r| r.x.clone()).collect(),
        z: rows.iter().map(|r| r.z.clone()).collect(),
        w,
        x_hat: rows.iter().map(|r| r.x_hat.clone()).collect(),
        z_hat: rows.iter().map(|r| r.z_win.clone()).collect(),
        z_bar: rows.iter().map(|r| r.z_bar.clone()).collect(),
        member: rows.iter().map(|r| r.member.unwrap_or(r.observable)).collect(),
    })
}
