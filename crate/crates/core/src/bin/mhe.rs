use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use mhe_core::analysis::{audit_run, compute_constants, min_horizon, MarginStats};
use mhe_core::harness::config::{preset_source, WeightsChoice};
use mhe_core::harness::{compare_runs, emit_plots, read_run, run_experiment, theory_run, write_run, ExperimentConfig, RunStatus};

#[derive(Parser)]
#[command(name = "mhe", about = "Moving horizon estimation with observability-adaptive parameter priors")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate, estimate and write run.csv, run.meta.toml and plot files.
    Run {
        /// TOML config file, or the name of an embedded preset.
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the bound constants and the contraction verdict.
    Theory {
        #[arg(long)]
        config: String,
        /// Emit a TOML document instead of aligned text.
        #[arg(long)]
        toml: bool,
    },
    /// Check the error-bound inequalities on a recorded run.
    Audit {
        #[arg(long)]
        run: PathBuf,
    },
    /// Summarise proposed vs baseline parameter errors of a recorded run.
    Compare {
        #[arg(long)]
        run: PathBuf,
        /// Ignore rows before this time.
        #[arg(long, default_value_t = 0)]
        from: usize,
    },
}

fn load_config(spec: &str) -> anyhow::Result<ExperimentConfig> {
    let path = Path::new(spec);
    if !path.exists() && preset_source(spec).is_some() {
        return Ok(ExperimentConfig::preset(spec)?);
    }
    ExperimentConfig::from_file(path).with_context(|| format!("loading config {spec}"))
}

fn print_kv(kv: &[(String, String)]) {
    let w = kv.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in kv {
        println!("{k:<w$}  {v}");
    }
}

fn stats_line(name: &str, s: &MarginStats) -> String {
    if s.count == 0 {
        return format!("{name:<10} not evaluated");
    }
    format!(
        "{name:<10} {} checked={} negative={} min_margin={:e} at t={}",
        if s.ok() { "PASS" } else { "FAIL" },
        s.count,
        s.n_negative,
        s.min_margin,
        s.worst_t
    )
}

fn cmd_run(config: &str, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.name, cfg.seed)));
    let resolved = cfg.resolve()?;
    let alpha = resolved.mhe.monitor.as_ref().map(|m| m.alpha).unwrap_or(cfg.mhe.alpha);
    let result = run_experiment(&cfg)?;
    let csv = out.join("run.csv");
    write_run(&csv, &result.record, &result.meta)?;
    println!("wrote {} ({} rows)", csv.display(), result.record.rows.len());
    if result.meta.run.status == RunStatus::Partial {
        eprintln!("run incomplete: {}", result.meta.run.error.as_deref().unwrap_or("unknown error"));
        return Ok(ExitCode::from(2));
    }
    let files = emit_plots(&result.record, alpha, &out.join("plots"))?;
    println!("wrote {} plot files to {}", files.len(), out.join("plots").display());
    if result.record.has_baseline {
        print_kv(&compare_runs(&result.record, 0)?.to_key_values());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_theory(config: &str, as_toml: bool) -> anyhow::Result<ExitCode> {
    let cfg = load_config(config)?;
    let r = cfg.resolve()?;
    let Some(certs) = &r.certs else {
        bail!("config has no [theory] certificates");
    };
    let k = compute_constants(certs, cfg.mhe.eta, cfg.mhe.n)?;
    let mut kv = k.to_key_values();
    let n_min = match min_horizon(certs, cfg.mhe.eta) {
        Ok(n) => n.to_string(),
        Err(e) => format!("none ({e})"),
    };
    kv.push(("N_min".into(), n_min));
    if as_toml {
        let mut t = toml::Table::new();
        for (key, v) in kv {
            let val = if let Ok(i) = v.parse::<i64>() {
                toml::Value::Integer(i)
            } else if let Ok(b) = v.parse::<bool>() {
                toml::Value::Boolean(b)
            } else if let Ok(f) = v.parse::<f64>() {
                toml::Value::Float(f)
            } else {
                toml::Value::String(v)
            };
            t.insert(key, val);
        }
        print!("{}", toml::to_string(&t)?);
    } else {
        print_kv(&kv);
        println!(
            "contraction {}",
            if k.contraction_ok {
                "holds: max(mu, rho) < 1"
            } else {
                "fails: max(mu, rho) >= 1"
            }
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_audit(run: &Path) -> anyhow::Result<ExitCode> {
    let (record, meta) = read_run(run)?;
    let cfg = &meta.config;
    let r = cfg.resolve()?;
    let Some(certs) = &r.certs else {
        bail!("the run's config has no [theory] certificates");
    };
    if cfg.mhe.weights != WeightsChoice::Certified {
        eprintln!("note: estimator weights are not the certified ones; bounds may not apply");
    }
    if record.rows.iter().skip(1).any(|row| row.member.is_none()) {
        eprintln!("note: no exact membership recorded; monitor flags stand in for it");
    }
    let k = compute_constants(certs, cfg.mhe.eta, cfg.mhe.n)?;
    let tr = theory_run(&record, cfg.mhe.n)?;
    let rep = audit_run(&tr, certs, &k)?;
    for (name, s) in [
        ("lemma1", &rep.lemma1),
        ("lemma2", &rep.lemma2),
        ("lemma3_p1", &rep.lemma3_p1),
        ("lemma3_p2", &rep.lemma3_p2),
        ("theorem", &rep.theorem),
    ] {
        println!("{}", stats_line(name, s));
    }
    if !k.contraction_ok {
        println!("contraction fails at N={}; horizon-level bounds skipped", cfg.mhe.n);
    }
    Ok(if rep.all_ok() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_compare(run: &Path, from: usize) -> anyhow::Result<ExitCode> {
    let (record, _) = read_run(run)?;
    print_kv(&compare_runs(&record, from)?.to_key_values());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config, seed, out } => cmd_run(&config, seed, out),
        Cmd::Theory { config, toml } => cmd_theory(&config, toml),
        Cmd::Audit { run } => cmd_audit(&run),
        Cmd::Compare { run, from } => cmd_compare(&run, from),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
