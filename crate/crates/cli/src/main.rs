use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use starnoma::experiments::{
    output_paths, parse_schemes, run_approximation_audit, run_convergence_trace, run_monte_carlo, write_audit_csv,
    write_metadata, write_results_csv, write_trace_csv, ExperimentConfig, Scheme, Sweep,
};

#[derive(Parser, Debug)]
#[command(name = "starnoma", version, about = "Two-timescale STAR-RIS NOMA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte-Carlo sum-rate sweep of the proposed protocols.
    Run(Common),
    /// Iterates of the long-term algorithms.
    Converge(Common),
    /// Closed-form gains and rates against simulation.
    Audit(Common),
    /// Sum-rate sweep of the protocols and every benchmark.
    Bench(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    /// `axis=v1,v2,...` with axis one of M, T_c, kappa.
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated list of bte, pte, fdma, tdma, cr_noma_bte, cr_noma_pte.
    #[arg(long)]
    schemes: Option<String>,
}

impl Common {
    fn resolve(&self, default_schemes: Option<&[Scheme]>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let (Some(d), None) = (default_schemes, &self.schemes) {
            if self.config.is_none() {
                cfg.schemes = d.to_vec();
            }
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(n) = self.trials {
            cfg.n_trials = n;
        }
        if let Some(s) = &self.sweep {
            cfg.sweep = s.parse::<Sweep>()?;
        }
        if let Some(s) = &self.schemes {
            cfg.schemes = parse_schemes(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(paths: &[&Path]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(c) => sweep(&c, "run", None),
        Command::Bench(c) => sweep(&c, "bench", Some(&Scheme::ALL)),
        Command::Converge(c) => {
            let cfg = c.resolve(None)?;
            let traces = run_convergence_trace(&cfg)?;
            let (csv, json) = output_paths(&c.out, "converge");
            write_trace_csv(&csv, &traces)?;
            write_metadata(&json, "converge", &cfg, &traces)?;
            report(&[&csv, &json]);
            Ok(())
        }
        Command::Audit(c) => {
            let cfg = c.resolve(None)?;
            let records = run_approximation_audit(&cfg)?;
            let (csv, json) = output_paths(&c.out, "audit");
            write_audit_csv(&csv, &records)?;
            write_metadata(&json, "audit", &cfg, &records)?;
            report(&[&csv, &json]);
            Ok(())
        }
    }
}

fn sweep(c: &Common, name: &str, default_schemes: Option<&[Scheme]>) -> Result<()> {
    let cfg = c.resolve(default_schemes)?;
    let out = run_monte_carlo(&cfg)?;
    let (csv, json) = output_paths(&c.out, name);
    write_results_csv(&csv, &out.results, cfg.num_users())?;
    write_metadata(&json, name, &cfg, &out)?;
    for s in &out.skipped {
        eprintln!("skipped {} at {}: {}", s.scheme, s.sweep_value, s.reason);
    }
    report(&[&csv, &json]);
    Ok(())
}
