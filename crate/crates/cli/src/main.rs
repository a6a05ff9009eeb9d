mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Interval Markov chain analysis of the sampling behaviour of stochastic PETC systems.
#[derive(Parser)]
#[command(name = "petc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the abstraction and write imc.json.
    Abstract(Common),
    /// Bound the configured reward on a built abstraction; writes bounds.csv and bounds.json.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Abstraction to analyze; defaults to imc.json in the output directory.
        #[arg(long)]
        imc: Option<PathBuf>,
    },
    /// Monte Carlo estimates from one random point per region of X; writes estimates.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write every sampled trigger to samples.csv.
        #[arg(long)]
        samples: bool,
    },
    /// Compare estimates.csv with bounds.json; writes report.json.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Grid override such as `20x20`.
    #[arg(long)]
    grid: Option<String>,
    /// Integration tolerance override.
    #[arg(long)]
    tol: Option<f64>,
}

fn parse_grid(s: &str) -> Result<Vec<usize>> {
    s.split(['x', ','])
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("--grid: bad count {p:?}")))
        .collect()
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        if let Some(t) = self.threads {
            rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("--threads")?;
        }
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(g) = &self.grid {
            cfg.partition.grid = parse_grid(g)?;
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                bail!("--tol must be positive");
            }
            cfg.tolerances.integration = tol;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Abstract(c) => commands::cmd_abstract(&c.load()?).map(drop),
        Command::Analyze { common, imc } => {
            let cfg = common.load()?;
            let imc = imc.unwrap_or_else(|| cfg.out.join("imc.json"));
            commands::cmd_analyze(&cfg, &imc).map(drop)
        }
        Command::Simulate { common, samples } => commands::cmd_simulate(&common.load()?, samples).map(drop),
        Command::Report(c) => commands::cmd_report(&c.load()?).map(drop),
    }
}

#[cfg(test)]
mod tests {
    use super::parse_grid;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("20x20").unwrap(), vec![20, 20]);
        assert_eq!(parse_grid("5,6,7").unwrap(), vec![5, 6, 7]);
        assert!(parse_grid("20xa").is_err());
    }
}
