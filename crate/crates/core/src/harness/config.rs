//! Experiment configuration (TOML) and its resolution into estimator objects.
//!
//! Matrices are row-major nested lists, or the shorthands `"identity"` and
//! `"scaled_identity:<v>"`. A config may name an embedded preset with
//! `preset = "<name>"`; its own keys then override the preset's, table by table.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::disturbance::ComponentSpec;
use crate::certificates::{CertificateSet, IossCertificate, ObservabilityCertificate, ParamUbebsCertificate};
use crate::error::{check_dim, MheError, Result};
use crate::linalg::{from_rows, gen_max_eig};
use crate::mhe::{GammaRule, MheConfig, PriorRule};
use crate::model::{jacobians, ChuaModel, ChuaParams, ScalarToyModel, SystemModel};
use crate::monitor::MonitorConfig;
use crate::solver::SolveOptions;

pub const PRESET_NAMES: [&str; 4] = ["chua-paper", "chua-desk", "toy-certified", "toy-falsify"];

pub fn preset_source(name: &str) -> Option<&'static str> {
    match name {
        "chua-paper" => Some(include_str!("../../presets/chua-paper.toml")),
        "chua-desk" => Some(include_str!("../../presets/chua-desk.toml")),
        "toy-certified" => Some(include_str!("../../presets/toy-certified.toml")),
        "toy-falsify" => Some(include_str!("../../presets/toy-falsify.toml")),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Rows(Vec<Vec<f64>>),
    Text(String),
}

impl MatrixSpec {
    pub fn scaled_identity(v: f64) -> Self {
        MatrixSpec::Text(format!("scaled_identity:{v}"))
    }

    /// Builds an n×m matrix; the shorthands are only valid for square shapes.
    pub fn resolve(&self, name: &str, n: usize, m: usize) -> Result<DMatrix<f64>> {
        let mat = match self {
            MatrixSpec::Rows(rows) => from_rows(rows)
                .map_err(|e| MheError::Config(format!("{name}: {e}")))?,
            MatrixSpec::Text(s) => {
                let s = s.trim();
                let scale = if s == "identity" {
                    1.0
                } else if let Some(v) = s.strip_prefix("scaled_identity:") {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| MheError::Config(format!("{name}: bad scale in '{s}'")))?
                } else {
                    return Err(MheError::Config(format!("{name}: unknown matrix literal '{s}'")));
                };
                if n != m {
                    return Err(MheError::Config(format!("{name}: '{s}' needs a square shape")));
                }
                DMatrix::identity(n, n) * scale
            }
        };
        if mat.nrows() != n || mat.ncols() != m {
            return Err(MheError::Config(format!(
                "{name}: expected {n}x{m}, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(mat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    /// γ(s) = ηˢ
    #[default]
    EtaPow,
    /// γ(s) = η_wˢ + λ̄(P_o, W̄)η_oˢ from the theory certificates.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsChoice {
    #[default]
    Manual,
    /// Q, R, W̄, V̄ and γ from the theory certificates.
    Certified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservabilityChoice {
    #[default]
    Monitor,
    /// Membership of (optimal window, truth) in the observable-pair set; needs truth.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyParams {
    pub a: f64,
    pub b: f64,
    pub w_bounds: [f64; 3],
}

impl Default for ToyParams {
    fn default() -> Self {
        let m = ScalarToyModel::certified();
        Self {
            a: m.a,
            b: m.b,
            w_bounds: [1e-2, 1e-3, 5e-2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x0: Vec<f64>,
    pub z0: Vec<f64>,
    pub x_hat0: Vec<f64>,
    pub z_hat0: Vec<f64>,
}

fn default_alpha() -> f64 {
    5e-4
}

fn default_penalty() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MheSection {
    #[serde(rename = "N")]
    pub n: usize,
    pub eta: f64,
    #[serde(default)]
    pub gamma: GammaChoice,
    #[serde(default)]
    pub weights: WeightsChoice,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<MatrixSpec>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<MatrixSpec>,
    #[serde(rename = "W_bar", default, skip_serializing_if = "Option::is_none")]
    pub w_bar: Option<MatrixSpec>,
    #[serde(rename = "V_bar", default, skip_serializing_if = "Option::is_none")]
    pub v_bar: Option<MatrixSpec>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub freeze_z: bool,
    #[serde(default = "default_penalty")]
    pub penalty_weight: f64,
}

fn default_mu() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(rename = "Phi", default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<MatrixSpec>,
    /// Defaults to ∂h/∂x at the initial estimate.
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<MatrixSpec>,
    /// Overrides `mhe.alpha` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Default for MonitorSection {
    fn default() -> Self {
        Self {
            mu: default_mu(),
            phi: None,
            c: None,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateTable {
    pub v_low: MatrixSpec,
    pub v_high: MatrixSpec,
    pub q_v: MatrixSpec,
    pub p_w: MatrixSpec,
    pub w_low: MatrixSpec,
    pub w_high: MatrixSpec,
    pub s_w: MatrixSpec,
    pub q_w: MatrixSpec,
    pub r_w: MatrixSpec,
    pub eta_w: f64,
    pub s_o: MatrixSpec,
    pub p_o: MatrixSpec,
    pub q_o: MatrixSpec,
    pub r_o: MatrixSpec,
    pub eta_o: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CertificateSpec {
    /// Name of a built-in certificate set.
    Builtin(String),
    Explicit(Box<CertificateTable>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub certificates: CertificateSpec,
    #[serde(default)]
    pub observability: ObservabilityChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub seed: u64,
    pub t_sim: usize,
    #[serde(default)]
    pub baseline: bool,
    pub model: ModelSection,
    pub initial: InitialSection,
    pub mhe: MheSection,
    #[serde(default)]
    pub monitor: MonitorSection,
    #[serde(default)]
    pub solver: SolveOptions,
    pub disturbance: Vec<ComponentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheorySection>,
}

/// Recursively overlays `over` onto `base`; tables merge, everything else is replaced.
pub fn deep_merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => deep_merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn resolve_presets(value: toml::Value, depth: usize) -> Result<toml::Value> {
    let preset = value
        .get("preset")
        .map(|p| {
            p.as_str()
                .map(str::to_owned)
                .ok_or_else(|| MheError::Config("preset must be a string".into()))
        })
        .transpose()?;
    let Some(name) = preset else {
        return Ok(value);
    };
    if depth > 4 {
        return Err(MheError::Config("preset chain too deep".into()));
    }
    let src = preset_source(&name).ok_or_else(|| {
        MheError::Config(format!("unknown preset '{name}' (known: {})", PRESET_NAMES.join(", ")))
    })?;
    let base: toml::Value = toml::from_str(src).map_err(|e| MheError::Config(format!("preset {name}: {e}")))?;
    let mut base = resolve_presets(base, depth + 1)?;
    if let toml::Value::Table(t) = &mut base {
        t.remove("preset");
    }
    deep_merge(&mut base, value);
    Ok(base)
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(s).map_err(|e| MheError::Config(e.to_string()))?;
        let merged = resolve_presets(value, 0)?;
        let cfg: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| MheError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml_str(&format!("preset = \"{name}\"\n"))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MheError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_sim == 0 {
            return Err(MheError::Config("t_sim must be at least 1".into()));
        }
        for c in &self.disturbance {
            c.validate()?;
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<Arc<dyn SystemModel>> {
        let params = self.model.params.clone().map(toml::Value::Table);
        let bad = |e: toml::de::Error| MheError::Config(format!("model.params: {e}"));
        match self.model.name.as_str() {
            "chua" => {
                let p: ChuaParams = match params {
                    Some(v) => v.try_into().map_err(bad)?,
                    None => ChuaParams::default(),
                };
                let base = ChuaModel::nominal();
                Ok(Arc::new(ChuaModel::new(p, base.constraints().clone())))
            }
            "scalar_toy" => {
                let p: ToyParams = match params {
                    Some(v) => v.try_into().map_err(bad)?,
                    None => ToyParams::default(),
                };
                if p.b == 0.0 || p.a.abs() >= 1.0 {
                    return Err(MheError::Config("scalar_toy needs |a| < 1 and b != 0".into()));
                }
                Ok(Arc::new(ScalarToyModel::new(p.a, p.b, p.w_bounds)))
            }
            other => Err(MheError::Config(format!("unknown model '{other}'"))),
        }
    }

    /// Resolves every section against the model dimensions.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        self.validate()?;
        let model = self.build_model()?;
        let d = model.dims();
        check_dim("disturbance components", d.n_w(), self.disturbance.len())?;
        let v = |name: &str, s: &[f64], n: usize| -> Result<DVector<f64>> {
            check_dim(name, n, s.len())?;
            Ok(DVector::from_column_slice(s))
        };
        let x0 = v("initial.x0", &self.initial.x0, d.n_x)?;
        let z0 = v("initial.z0", &self.initial.z0, d.n_z)?;
        let x_hat0 = v("initial.x_hat0", &self.initial.x_hat0, d.n_x)?;
        let z_hat0 = v("initial.z_hat0", &self.initial.z_hat0, d.n_z)?;

        let certs = match &self.theory {
            Some(t) => Some(resolve_certificates(&t.certificates, d.n_x, d.n_z, d.n_w(), d.n_y)?),
            None => None,
        };
        let observability = self.theory.as_ref().map(|t| t.observability).unwrap_or_default();

        let m = &self.mhe;
        let need_certs = || {
            certs.as_ref().ok_or_else(|| {
                MheError::Config("certified weights or gamma = \"paper\" need a [theory] section".into())
            })
        };
        let mut mhe = match m.weights {
            WeightsChoice::Certified => MheConfig::from_certificates(need_certs()?, m.eta, m.n, d.n_w_proc)?,
            WeightsChoice::Manual => {
                let req = |name: &str, s: &Option<MatrixSpec>, n: usize| -> Result<DMatrix<f64>> {
                    s.as_ref()
                        .ok_or_else(|| MheError::Config(format!("mhe.{name} is required with manual weights")))?
                        .resolve(&format!("mhe.{name}"), n, n)
                };
                MheConfig {
                    n: m.n,
                    eta: m.eta,
                    gamma: GammaRule::EtaPow,
                    q: req("Q", &m.q, d.n_w_proc)?,
                    r: req("R", &m.r, d.n_y)?,
                    w_bar: req("W_bar", &m.w_bar, d.n_x)?,
                    v_bar: req("V_bar", &m.v_bar, d.n_z)?,
                    freeze_z: false,
                    prior_rule: PriorRule::Adaptive,
                    monitor: None,
                    solver: SolveOptions::default(),
                    penalty_weight: default_penalty(),
                }
            }
        };
        mhe.gamma = match m.gamma {
            GammaChoice::EtaPow if m.weights == WeightsChoice::Manual => GammaRule::EtaPow,
            GammaChoice::EtaPow => mhe.gamma,
            GammaChoice::Paper => {
                let c = need_certs()?;
                GammaRule::Certified {
                    eta_w: c.ioss.eta_w,
                    eta_o: c.obs.eta_o,
                    lambda_po: gen_max_eig(&c.obs.p_o, &mhe.w_bar)?,
                }
            }
        };
        mhe.freeze_z = m.freeze_z;
        mhe.penalty_weight = m.penalty_weight;
        mhe.solver = self.solver;

        let mon = &self.monitor;
        let phi = match &mon.phi {
            Some(p) => p.resolve("monitor.Phi", d.n_x, d.n_x)?,
            None => DMatrix::identity(d.n_x, d.n_x) * 0.5,
        };
        let c = match &mon.c {
            Some(c) => c.resolve("monitor.C", d.n_y, d.n_x)?,
            None => {
                let u0 = DVector::zeros(d.n_u);
                let w0 = DVector::zeros(d.n_w());
                jacobians(model.as_ref(), &x_hat0, &z_hat0, &u0, &w0).h_x
            }
        };
        let alpha = mon.alpha.unwrap_or(m.alpha);
        mhe.monitor = Some(MonitorConfig::new(mon.mu, phi, c, alpha)?);
        mhe.validate(&d)?;

        let mut baseline = mhe.clone();
        baseline.prior_rule = PriorRule::AlwaysObservable;
        baseline.freeze_z = false;

        Ok(ResolvedExperiment {
            config: self.clone(),
            model,
            mhe,
            baseline,
            certs,
            observability,
            x0,
            z0,
            x_hat0,
            z_hat0,
        })
    }
}

fn resolve_certificates(spec: &CertificateSpec, n_x: usize, n_z: usize, n_w: usize, n_y: usize) -> Result<CertificateSet> {
    let certs = match spec {
        CertificateSpec::Builtin(name) => match name.as_str() {
            "scalar_toy" => CertificateSet::scalar_toy(),
            other => return Err(MheError::Config(format!("unknown certificate set '{other}'"))),
        },
        CertificateSpec::Explicit(t) => {
            let r = |name: &str, m: &MatrixSpec, n: usize| m.resolve(&format!("theory.certificates.{name}"), n, n);
            CertificateSet {
                ubebs: ParamUbebsCertificate {
                    v_low: r("v_low", &t.v_low, n_z)?,
                    v_high: r("v_high", &t.v_high, n_z)?,
                    q_v: r("q_v", &t.q_v, n_w)?,
                    v_eval: None,
                },
                ioss: IossCertificate {
                    p_w: r("p_w", &t.p_w, n_x)?,
                    w_low: r("w_low", &t.w_low, n_x)?,
                    w_high: r("w_high", &t.w_high, n_x)?,
                    s_w: r("s_w", &t.s_w, n_z)?,
                    q_w: r("q_w", &t.q_w, n_w)?,
                    r_w: r("r_w", &t.r_w, n_y)?,
                    eta_w: t.eta_w,
                },
                obs: ObservabilityCertificate {
                    s_o: r("s_o", &t.s_o, n_z)?,
                    p_o: r("p_o", &t.p_o, n_x)?,
                    q_o: r("q_o", &t.q_o, n_w)?,
                    r_o: r("r_o", &t.r_o, n_y)?,
                    eta_o: t.eta_o,
                },
            }
        }
    };
    certs.validate()?;
    check_dim("certificate state dimension", n_x, certs.ioss.p_w.nrows())?;
    check_dim("certificate parameter dimension", n_z, certs.ubebs.v_low.nrows())?;
    check_dim("certificate disturbance dimension", n_w, certs.ioss.q_w.nrows())?;
    Ok(certs)
}

/// A config with every section turned into the objects the experiment needs.
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub model: Arc<dyn SystemModel>,
    pub mhe: MheConfig,
    /// Same estimator with the prior always refreshed and no freezing.
    pub baseline: MheConfig,
    pub certs: Option<CertificateSet>,
    pub observability: ObservabilityChoice,
    pub x0: DVector<f64>,
    pub z0: DVector<f64>,
    pub x_hat0: DVector<f64>,
    pub z_hat0: DVector<f64>,
}
