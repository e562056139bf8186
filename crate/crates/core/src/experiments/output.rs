use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

use super::config::ExperimentConfig;
use super::runner::{AuditRecord, ConvergenceTrace, TrialResult};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// `x` with 9 significant digits, in the shortest of fixed or exponent form.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

fn trim(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

/// `scheme,sweep_value,mean_sum_rate_bpshz,outage_frac,user1_rate,...`
pub fn write_results_csv(path: &Path, results: &[TrialResult], num_users: usize) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = ["scheme", "sweep_value", "mean_sum_rate_bpshz", "outage_frac"].map(String::from).to_vec();
    header.extend((1..=num_users).map(|k| format!("user{k}_rate")));
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![r.scheme.to_string(), fmt_sig(r.sweep_value), fmt_sig(r.mean_sum_rate), fmt_sig(r.outage_frac)];
        row.extend(r.per_user_rates.iter().map(|&x| fmt_sig(x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, traces: &[ConvergenceTrace]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["scheme", "sweep_value", "outer", "inner", "eta", "objective", "sum_rate_bpshz", "violation"])?;
    for t in traces {
        for it in t.bte.iter().flat_map(|b| &b.iterates) {
            w.write_record([
                "bte".to_string(),
                fmt_sig(t.sweep_value),
                it.outer.to_string(),
                it.inner.to_string(),
                fmt_sig(it.eta),
                fmt_sig(it.objective),
                fmt_sig(it.sum_rate),
                fmt_sig(it.violation),
            ])?;
        }
        for st in t.pte.iter().flatten() {
            w.write_record([
                "pte".to_string(),
                fmt_sig(t.sweep_value),
                st.iteration.to_string(),
                String::new(),
                String::new(),
                fmt_sig(st.sum_rate),
                fmt_sig(st.sum_rate),
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_audit_csv(path: &Path, records: &[AuditRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["sweep_value", "quantity", "user", "closed_form", "monte_carlo", "relative_gap"])?;
    for r in records {
        w.write_record([
            fmt_sig(r.sweep_value),
            r.quantity.clone(),
            r.user.map(|u| (u + 1).to_string()).unwrap_or_default(),
            fmt_sig(r.closed_form),
            fmt_sig(r.monte_carlo),
            fmt_sig(r.relative_gap),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Metadata<'a, T: Serialize> {
    pub toolkit_version: &'static str,
    pub experiment: &'a str,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
    /// Choices the benchmark schemes rest on.
    pub assumptions: Vec<&'static str>,
    pub details: T,
}

pub const ASSUMPTIONS: [&str; 4] = [
    "fdma: each user meets its target with the least power in a 1/K band with noise sigma2/K; user 1 takes the remaining power",
    "tdma: full power in a 1/K time slot with every element co-phased to the served user; a missed target counts as outage",
    "outage blocks contribute zero rate to every mean",
    "pte rates use the full physical channel; power allocation uses the own-subsurface approximation",
];

pub fn write_metadata<T: Serialize>(path: &Path, experiment: &str, config: &ExperimentConfig, details: T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let meta = Metadata {
        toolkit_version: TOOLKIT_VERSION,
        experiment,
        seed: config.master_seed,
        config,
        assumptions: ASSUMPTIONS.to_vec(),
        details,
    };
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    writeln!(f)?;
    Ok(())
}

/// `<dir>/<name>.csv` and `<dir>/<name>.json`.
pub fn output_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.csv")), dir.join(format!("{name}.json")))
}
