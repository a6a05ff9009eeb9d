use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use petc_core::abstraction::{build_imc, Imc, SystemRecord};
use petc_core::gauss::Hyperrect;
use petc_core::imc_analysis::{analyze, lift_rewards, ValueBounds};
use petc_core::simulator::{samples_csv, Simulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn cmd_abstract(cfg: &RunConfig) -> Result<PathBuf> {
    let sys = cfg.system()?;
    let partition = cfg.partition()?;
    let started = Instant::now();
    let imc = build_imc(&sys, &partition, &cfg.abstraction_config())?;
    let m = &imc.metadata;
    println!(
        "abstraction: {} regions, {} states, {} entries integrated, {} pruned, {} rows repaired, {:.1} s",
        imc.n_regions,
        imc.n_states(),
        m.integrated_entries,
        m.pruned_entries,
        m.repaired_rows,
        started.elapsed().as_secs_f64()
    );
    let path = write(&cfg.out, "imc.json", &imc.to_json()?)?;
    println!("wrote {}", path.display());
    Ok(path)
}

pub fn load_imc(cfg: &RunConfig, path: &Path) -> Result<Imc> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let imc = Imc::from_json(&text).with_context(|| format!("{} is not a valid abstraction", path.display()))?;
    let expected = SystemRecord::from_system(&cfg.system()?).hash();
    if imc.metadata.system_hash != expected {
        bail!("{} was built for a different system (hash {})", path.display(), imc.metadata.system_hash);
    }
    if imc.metadata.partition != cfg.partition()? {
        bail!("{} was built for a different partition", path.display());
    }
    Ok(imc)
}

/// Full bounds with the context needed to interpret them.
#[derive(Debug, Serialize, Deserialize)]
pub struct BoundsFile {
    pub system_hash: String,
    pub imc: PathBuf,
    pub reward: String,
    pub bounds: ValueBounds,
}

pub fn cmd_analyze(cfg: &RunConfig, imc_path: &Path) -> Result<PathBuf> {
    let imc = load_imc(cfg, imc_path)?;
    let spec = cfg.reward()?;
    let rewards = lift_rewards(spec.as_ref(), &imc.metadata.partition, imc.kbar);
    if !rewards.rigorous {
        log::warn!("reward extrema were sampled; the bounds are not rigorous");
    }
    let bounds = analyze(&imc, &rewards, &cfg.kind()?, cfg.analysis.horizon)?;
    let csv = write(&cfg.out, "bounds.csv", &bounds.to_csv(Some(0)))?;
    let side = BoundsFile {
        system_hash: imc.metadata.system_hash.clone(),
        imc: imc_path.to_path_buf(),
        reward: format!("{:?}", cfg.analysis.reward),
        bounds,
    };
    write(&cfg.out, "bounds.json", &serde_json::to_string_pretty(&side)?)?;
    println!("wrote {}", csv.display());
    Ok(csv)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateRow {
    pub region_index: usize,
    pub y0: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_paths: usize,
}

pub fn cmd_simulate(cfg: &RunConfig, dump_samples: bool) -> Result<PathBuf> {
    let sys = cfg.system()?;
    let partition = cfg.partition()?;
    let spec = cfg.reward()?;
    let kind = cfg.kind()?;
    let sim = Simulator::new(&sys)?;
    let n = cfg.analysis.horizon;
    let paths = cfg.simulation.paths;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<(usize, Vec<f64>)> = (0..partition.len())
        .filter(|&r| partition.inside_x[r])
        .map(|r| {
            let reg: &Hyperrect = &partition.regions[r];
            (r, (0..reg.dim()).map(|i| rng.random_range(reg.lower[i]..=reg.upper[i])).collect())
        })
        .collect();
    let rows: Vec<EstimateRow> = starts
        .par_iter()
        .map(|(r, y0)| {
            let seed = cfg.seed ^ (*r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let est = sim.estimate_reward(y0, 0, spec.as_ref(), &kind, n, paths, &partition.y, seed)?;
            Ok(EstimateRow {
                region_index: *r,
                y0: y0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
                mean: est.mean,
                ci_low: est.ci_low,
                ci_high: est.ci_high,
                n_paths: est.n_paths,
            })
        })
        .collect::<petc_core::Result<_>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    let path = write(&cfg.out, "estimates.csv", std::str::from_utf8(&w.into_inner()?)?)?;
    if dump_samples {
        let mut out = String::new();
        for (k, (r, y0)) in starts.iter().enumerate() {
            let seed = cfg.seed ^ (*r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let csv = samples_csv(&sim.sample_paths(y0, n, paths, seed)?);
            let mut lines = csv.lines();
            let header = lines.next().unwrap_or_default();
            if k == 0 {
                out.push_str(&format!("region_index,{header}\n"));
            }
            for line in lines {
                out.push_str(&format!("{r},{line}\n"));
            }
        }
        write(&cfg.out, "samples.csv", &out)?;
    }
    println!("wrote {}", path.display());
    Ok(path)
}

/// Containment of the Monte Carlo estimates in the computed bounds.
#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub regions: usize,
    pub contained: usize,
    pub containment_rate: f64,
    pub outside: Vec<usize>,
    pub mean_width_inside_x: f64,
    pub mean_width_boundary: f64,
}

pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf> {
    let bounds_path = cfg.out.join("bounds.json");
    let text = std::fs::read_to_string(&bounds_path).with_context(|| format!("reading {}", bounds_path.display()))?;
    let side: BoundsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", bounds_path.display()))?;
    let b = &side.bounds;
    let est_path = cfg.out.join("estimates.csv");
    let mut reader = csv::Reader::from_path(&est_path).with_context(|| format!("reading {}", est_path.display()))?;
    let rows: Vec<EstimateRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    let partition = cfg.partition()?;
    let n_regions = (b.lower.len() - 1) / (b.kbar + 1);
    if n_regions != partition.len() {
        bail!("{} does not match the configured partition", bounds_path.display());
    }
    let mut outside = Vec::new();
    for row in &rows {
        if row.region_index >= n_regions {
            bail!("{}: region {} out of range", est_path.display(), row.region_index);
        }
        let (lo, hi) = b.get(row.region_index, 0);
        if row.ci_low > hi || row.ci_high < lo {
            outside.push(row.region_index);
        }
    }
    let width = |keep: &dyn Fn(usize) -> bool| {
        let w: Vec<f64> = (0..n_regions).filter(|&r| keep(r)).map(|r| b.get(r, 0).1 - b.get(r, 0).0).collect();
        if w.is_empty() { 0.0 } else { w.iter().sum::<f64>() / w.len() as f64 }
    };
    let report = Report {
        regions: rows.len(),
        contained: rows.len() - outside.len(),
        containment_rate: if rows.is_empty() { 0.0 } else { (rows.len() - outside.len()) as f64 / rows.len() as f64 },
        outside,
        mean_width_inside_x: width(&|r| partition.inside_x[r]),
        mean_width_boundary: width(&|r| partition.touches_boundary(r)),
    };
    let path = write(&cfg.out, "report.json", &serde_json::to_string_pretty(&report)?)?;
    println!(
        "containment {}/{} ({:.1}%); mean width inside X {:.4}, on the boundary of Y {:.4}",
        report.contained,
        report.regions,
        100.0 * report.containment_rate,
        report.mean_width_inside_x,
        report.mean_width_boundary
    );
    Ok(path)
}
