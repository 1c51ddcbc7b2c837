//! Run records: one CSV row per time step plus a TOML sidecar with the
//! resolved config, seed and completion status.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{MheError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub x_hat: DVector<f64>,
    pub z_hat: DVector<f64>,
    pub ex_norm: f64,
    pub ez_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub t: usize,
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    /// w_t and y_t; absent on the terminal row.
    pub w: Option<DVector<f64>>,
    pub y: Option<DVector<f64>>,
    pub x_hat: DVector<f64>,
    /// Published parameter estimate.
    pub z_hat: DVector<f64>,
    /// Window-end parameter estimate.
    pub z_win: DVector<f64>,
    pub z_bar: DVector<f64>,
    pub ex_norm: f64,
    pub ez_norm: f64,
    pub alpha: f64,
    pub observable: bool,
    /// Exact membership of the window, when evaluated.
    pub member: Option<bool>,
    pub iterations: usize,
    pub objective: f64,
    pub candidate_cost: f64,
    pub candidate_objective: f64,
    pub solver_objective: f64,
    pub candidate_feasible: bool,
    pub baseline: Option<BaselineRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordDims {
    pub n_x: usize,
    pub n_z: usize,
    pub n_w: usize,
    pub n_y: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
    pub status: RunStatus,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run: RunInfo,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dims: RecordDims,
    pub has_baseline: bool,
    pub rows: Vec<RunRow>,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_b(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

impl RunRecord {
    pub fn new(dims: RecordDims, has_baseline: bool) -> Self {
        Self {
            dims,
            has_baseline,
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        let d = self.dims;
        let mut h = vec!["t".to_string()];
        h.extend(names("x", d.n_x));
        h.extend(names("z", d.n_z));
        h.extend(names("w", d.n_w));
        h.extend(names("y", d.n_y));
        h.extend(names("xhat", d.n_x));
        h.extend(names("zhat", d.n_z));
        h.extend(names("zwin", d.n_z));
        h.extend(names("zbar", d.n_z));
        for s in [
            "ex_norm",
            "ez_norm",
            "alpha",
            "observable",
            "member",
            "iterations",
            "objective",
            "candidate_cost",
            "candidate_objective",
            "solver_objective",
            "candidate_feasible",
        ] {
            h.push(s.into());
        }
        if self.has_baseline {
            h.extend(names("base_xhat", d.n_x));
            h.extend(names("base_zhat", d.n_z));
            for s in ["base_ex_norm", "base_ez_norm", "base_iterations"] {
                h.push(s.into());
            }
        }
        h
    }

    fn row_fields(&self, r: &RunRow) -> Result<Vec<String>> {
        let d = self.dims;
        let mut f = vec![r.t.to_string()];
        let vec_into = |f: &mut Vec<String>, v: &DVector<f64>, n: usize, what: &str| -> Result<()> {
            if v.len() != n {
                return Err(MheError::Record(format!("row t={}: {what} has length {}, expected {n}", r.t, v.len())));
            }
            f.extend(v.iter().map(|&x| fmt_f(x)));
            Ok(())
        };
        let opt_into = |f: &mut Vec<String>, v: &Option<DVector<f64>>, n: usize, what: &str| -> Result<()> {
            match v {
                Some(v) => vec_into(f, v, n, what),
                None => {
                    f.extend(std::iter::repeat_n(String::new(), n));
                    Ok(())
                }
            }
        };
        vec_into(&mut f, &r.x, d.n_x, "x")?;
        vec_into(&mut f, &r.z, d.n_z, "z")?;
        opt_into(&mut f, &r.w, d.n_w, "w")?;
        opt_into(&mut f, &r.y, d.n_y, "y")?;
        vec_into(&mut f, &r.x_hat, d.n_x, "x_hat")?;
        vec_into(&mut f, &r.z_hat, d.n_z, "z_hat")?;
        vec_into(&mut f, &r.z_win, d.n_z, "z_win")?;
        vec_into(&mut f, &r.z_bar, d.n_z, "z_bar")?;
        f.push(fmt_f(r.ex_norm));
        f.push(fmt_f(r.ez_norm));
        f.push(fmt_f(r.alpha));
        f.push(fmt_b(r.observable));
        f.push(r.member.map(fmt_b).unwrap_or_default());
        f.push(r.iterations.to_string());
        f.push(fmt_f(r.objective));
        f.push(fmt_f(r.candidate_cost));
        f.push(fmt_f(r.candidate_objective));
        f.push(fmt_f(r.solver_objective));
        f.push(fmt_b(r.candidate_feasible));
        if self.has_baseline {
            let b = r
                .baseline
                .as_ref()
                .ok_or_else(|| MheError::Record(format!("row t={} lacks baseline values", r.t)))?;
            vec_into(&mut f, &b.x_hat, d.n_x, "base_x_hat")?;
            vec_into(&mut f, &b.z_hat, d.n_z, "base_z_hat")?;
            f.push(fmt_f(b.ex_norm));
            f.push(fmt_f(b.ez_norm));
            f.push(b.iterations.to_string());
        }
        Ok(f)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let csv_err = |e: csv::Error| MheError::Record(e.to_string());
        wr.write_record(self.header()).map_err(csv_err)?;
        for r in &self.rows {
            wr.write_record(self.row_fields(r)?).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| MheError::Record(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let csv_err = |e: csv::Error| MheError::Record(e.to_string());
        let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| h.strip_prefix(prefix).is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit())))
                .count()
        };
        let dims = RecordDims {
            n_x: count("x"),
            n_z: count("z"),
            n_w: count("w"),
            n_y: count("y"),
        };
        let has_baseline = header.iter().any(|h| h == "base_ex_norm");
        let mut rec = RunRecord::new(dims, has_baseline);
        if rec.header() != header {
            return Err(MheError::Record("unexpected column layout".into()));
        }
        for (line, result) in rd.records().enumerate() {
            let fields = result.map_err(csv_err)?;
            let mut it = fields.iter();
            let mut cur = Cursor { it: &mut it, line };
            let t = cur.usize()?;
            let x = cur.vec(dims.n_x)?;
            let z = cur.vec(dims.n_z)?;
            let w = cur.opt_vec(dims.n_w)?;
            let y = cur.opt_vec(dims.n_y)?;
            let x_hat = cur.vec(dims.n_x)?;
            let z_hat = cur.vec(dims.n_z)?;
            let z_win = cur.vec(dims.n_z)?;
            let z_bar = cur.vec(dims.n_z)?;
            let ex_norm = cur.f64()?;
            let ez_norm = cur.f64()?;
            let alpha = cur.f64()?;
            let observable = cur.bool()?;
            let member = cur.opt_bool()?;
            let iterations = cur.usize()?;
            let objective = cur.f64()?;
            let candidate_cost = cur.f64()?;
            let candidate_objective = cur.f64()?;
            let solver_objective = cur.f64()?;
            let candidate_feasible = cur.bool()?;
            let baseline = if has_baseline {
                Some(BaselineRow {
                    x_hat: cur.vec(dims.n_x)?,
                    z_hat: cur.vec(dims.n_z)?,
                    ex_norm: cur.f64()?,
                    ez_norm: cur.f64()?,
                    iterations: cur.usize()?,
                })
            } else {
                None
            };
            rec.rows.push(RunRow {
                t,
                x,
                z,
                w,
                y,
                x_hat,
                z_hat,
                z_win,
                z_bar,
                ex_norm,
                ez_norm,
                alpha,
                observable,
                member,
                iterations,
                objective,
                candidate_cost,
                candidate_objective,
                solver_objective,
                candidate_feasible,
                baseline,
            });
        }
        Ok(rec)
    }
}

struct Cursor<'a, 'b> {
    it: &'a mut csv::StringRecordIter<'b>,
    line: usize,
}

impl<'b> Cursor<'_, 'b> {
    fn next(&mut self) -> Result<&'b str> {
        let line = self.line;
        self.it
            .next()
            .ok_or_else(|| MheError::Record(format!("data row {line}: too few fields")))
    }

    fn bad(&self, s: &str) -> MheError {
        MheError::Record(format!("data row {}: cannot parse '{s}'", self.line))
    }

    fn f64(&mut self) -> Result<f64> {
        let s = self.next()?;
        s.parse().map_err(|_| self.bad(s))
    }

    fn usize(&mut self) -> Result<usize> {
        let s = self.next()?;
        s.parse().map_err(|_| self.bad(s))
    }

    fn bool(&mut self) -> Result<bool> {
        match self.next()? {
            "1" => Ok(true),
            "0" => Ok(false),
            s => Err(self.bad(s)),
        }
    }

    fn opt_bool(&mut self) -> Result<Option<bool>> {
        match self.next()? {
            "" => Ok(None),
            "1" => Ok(Some(true)),
            "0" => Ok(Some(false)),
            s => Err(self.bad(s)),
        }
    }

    fn vec(&mut self, n: usize) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(n);
        for i in 0..n {
            v[i] = self.f64()?;
        }
        Ok(v)
    }

    fn opt_vec(&mut self, n: usize) -> Result<Option<DVector<f64>>> {
        let mut vals = Vec::with_capacity(n);
        let mut empty = 0;
        for _ in 0..n {
            let s = self.next()?;
            if s.is_empty() {
                empty += 1;
            } else {
                vals.push(s.parse::<f64>().map_err(|_| self.bad(s))?);
            }
        }
        match empty {
            0 => Ok(Some(DVector::from_vec(vals))),
            e if e == n => Ok(None),
            _ => Err(MheError::Record(format!("data row {}: partially empty vector", self.line))),
        }
    }
}

/// Sidecar path for a record file: `run.csv` → `run.meta.toml`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.toml")
}

pub fn write_run(csv_path: &Path, record: &RunRecord, meta: &RunMeta) -> Result<()> {
    if let Some(dir) = csv_path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let file = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    record.write_csv(file)?;
    let meta_s = toml::to_string(meta).map_err(|e| MheError::Record(e.to_string()))?;
    std::fs::write(meta_path(csv_path), meta_s)?;
    Ok(())
}

pub fn read_run(csv_path: &Path) -> Result<(RunRecord, RunMeta)> {
    let file = std::io::BufReader::new(std::fs::File::open(csv_path)?);
    let record = RunRecord::read_csv(file)?;
    let meta_s = std::fs::read_to_string(meta_path(csv_path))?;
    let meta: RunMeta = toml::from_str(&meta_s).map_err(|e| MheError::Record(format!("sidecar: {e}")))?;
    Ok((record, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(s)
    }

    pub(crate) fn sample(baseline: bool) -> RunRecord {
        let dims = RecordDims {
            n_x: 2,
            n_z: 1,
            n_w: 3,
            n_y: 1,
        };
        let mut rec = RunRecord::new(dims, baseline);
        for t in 0..3 {
            let last = t == 2;
            rec.rows.push(RunRow {
                t,
                x: v(&[0.1 * t as f64, -1.0 / 3.0]),
                z: v(&[0.45]),
                w: (!last).then(|| v(&[1e-3, -2.5e-4, 1.0 / 7.0])),
                y: (!last).then(|| v(&[std::f64::consts::PI])),
                x_hat: v(&[1e-300, 2.0]),
                z_hat: v(&[0.6]),
                z_win: v(&[0.61]),
                z_bar: v(&[0.59]),
                ex_norm: 0.3,
                ez_norm: 0.15,
                alpha: 5e-4,
                observable: t == 1,
                member: if t == 0 { None } else { Some(t == 2) },
                iterations: 3 * t,
                objective: 12.5,
                candidate_cost: f64::INFINITY,
                candidate_objective: 13.0,
                solver_objective: 12.5,
                candidate_feasible: t != 1,
                baseline: baseline.then(|| BaselineRow {
                    x_hat: v(&[0.0, -0.0]),
                    z_hat: v(&[0.7]),
                    ex_norm: 1.0,
                    ez_norm: 0.25,
                    iterations: 4,
                }),
            });
        }
        rec
    }

    #[test]
    fn csv_round_trip() {
        for b in [false, true] {
            let rec = sample(b);
            let s = rec.to_csv_string().unwrap();
            let back = RunRecord::read_csv(s.as_bytes()).unwrap();
            assert_eq!(rec, back);
        }
    }

    #[test]
    fn header_order_and_precision() {
        let rec = sample(true);
        let s = rec.to_csv_string().unwrap();
        let first = s.lines().next().unwrap();
        assert!(first.starts_with("t,x1,x2,z1,w1,w2,w3,y1,xhat1,xhat2,zhat1,zwin1,zbar1,ex_norm,"));
        assert!(first.ends_with("base_ex_norm,base_ez_norm,base_iterations"));
        assert!(s.contains("3.3333333333333331e-1"));
    }

    #[test]
    fn missing_baseline_values_rejected() {
        let mut rec = sample(true);
        rec.rows[1].baseline = None;
        assert!(rec.to_csv_string().is_err());
    }

    #[test]
    fn files_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out").join("run.csv");
        let rec = sample(false);
        let meta = RunMeta {
            run: RunInfo {
                seed: 9,
                status: RunStatus::Complete,
                rows: 3,
                error: None,
                warnings: vec![],
            },
            config: ExperimentConfig::preset("toy-certified").unwrap(),
        };
        write_run(&path, &rec, &meta).unwrap();
        assert!(dir.path().join("out").join("run.meta.toml").exists());
        let (r2, m2) = read_run(&path).unwrap();
        assert_eq!(rec, r2);
        assert_eq!(meta, m2);
    }
}
