//! Plot data files and matplotlib scripts for a run record.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::record::RunRecord;
use crate::error::{MheError, Result};

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn script(data: &str, png: &str, body: &str) -> String {
    format!(
        "import matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\nimport numpy as np\n\n\
         d = np.genfromtxt(\"{data}\", delimiter=\",\", names=True)\n\
         fig, ax = plt.subplots(figsize=(8, 3.5))\n{body}\
         ax.set_xlabel(\"t\")\nax.legend()\nfig.tight_layout()\nfig.savefig(\"{png}\", dpi=150)\n"
    )
}

/// Writes `errors`, `params` and `alpha` data/script pairs into `out_dir` and
/// returns the written paths. Output depends only on the record and `alpha`.
pub fn emit_plots(record: &RunRecord, alpha: f64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if record.rows.is_empty() {
        return Err(MheError::MissingData("cannot plot an empty record".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let nz = record.dims.n_z;
    let base = record.has_baseline;
    let mut files: Vec<(String, String)> = Vec::new();

    let mut errors = String::from("t,ex_norm,ez_norm");
    if base {
        errors.push_str(",base_ex_norm,base_ez_norm");
    }
    errors.push('\n');
    for r in &record.rows {
        let _ = write!(errors, "{},{},{}", r.t, f(r.ex_norm), f(r.ez_norm));
        if let Some(b) = &r.baseline {
            let _ = write!(errors, ",{},{}", f(b.ex_norm), f(b.ez_norm));
        }
        errors.push('\n');
    }
    let mut body = String::from(
        "ax.semilogy(d[\"t\"], d[\"ex_norm\"], color=\"red\", label=\"|e_x|\")\n\
         ax.semilogy(d[\"t\"], d[\"ez_norm\"], color=\"blue\", label=\"|e_z|\")\n",
    );
    if base {
        body.push_str(
            "ax.semilogy(d[\"t\"], d[\"base_ex_norm\"], color=\"orange\", ls=\"--\", label=\"|e_x| baseline\")\n\
             ax.semilogy(d[\"t\"], d[\"base_ez_norm\"], color=\"cyan\", ls=\"--\", label=\"|e_z| baseline\")\n",
        );
    }
    files.push(("errors.csv".into(), errors));
    files.push(("errors.py".into(), script("errors.csv", "errors.png", &body)));

    let mut params = String::from("t");
    for i in 1..=nz {
        let _ = write!(params, ",z{i},zhat{i}");
        if base {
            let _ = write!(params, ",base_zhat{i}");
        }
    }
    params.push('\n');
    for r in &record.rows {
        let _ = write!(params, "{}", r.t);
        for i in 0..nz {
            let _ = write!(params, ",{},{}", f(r.z[i]), f(r.z_hat[i]));
            if let Some(b) = &r.baseline {
                let _ = write!(params, ",{}", f(b.z_hat[i]));
            }
        }
        params.push('\n');
    }
    let mut body = String::new();
    for i in 1..=nz {
        let _ = writeln!(body, "ax.plot(d[\"t\"], d[\"z{i}\"], color=\"black\", label=\"z{i}\")");
        let _ = writeln!(body, "ax.plot(d[\"t\"], d[\"zhat{i}\"], color=\"blue\", label=\"zhat{i}\")");
        if base {
            let _ = writeln!(
                body,
                "ax.plot(d[\"t\"], d[\"base_zhat{i}\"], color=\"cyan\", ls=\"--\", label=\"zhat{i} baseline\")"
            );
        }
    }
    files.push(("params.csv".into(), params));
    files.push(("params.py".into(), script("params.csv", "params.png", &body)));

    let mut alpha_csv = String::from("t,alpha_t,observable\n");
    for r in &record.rows {
        let _ = writeln!(alpha_csv, "{},{},{}", r.t, f(r.alpha), u8::from(r.observable));
    }
    let body = format!(
        "ax.semilogy(d[\"t\"], np.maximum(d[\"alpha_t\"], 1e-12), color=\"black\", label=\"alpha_t\")\n\
         ax.axhline({}, color=\"red\", label=\"alpha\")\n",
        f(alpha)
    );
    files.push(("alpha.csv".into(), alpha_csv));
    files.push(("alpha.py".into(), script("alpha.csv", "alpha.png", &body)));

    let mut out = Vec::with_capacity(files.len());
    for (name, content) in files {
        let p = out_dir.join(name);
        std::fs::write(&p, content)?;
        out.push(p);
    }
    Ok(out)
}
