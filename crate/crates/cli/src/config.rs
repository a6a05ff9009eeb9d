//! Run configuration, read from TOML.

use anyhow::{bail, Context, Result};
use petc_core::abstraction::{build_partition, AbstractionConfig, Partition};
use petc_core::gauss::Hyperrect;
use petc_core::imc_analysis::{AnalysisKind, AvgTau, Denominator, NoKbarIndicator, RewardSpec, StateTauTradeoff, Tabulated};
use petc_core::nalgebra::DMatrix;
use petc_core::PetcSystem;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemBlock,
    pub partition: PartitionBlock,
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub simulation: SimulationBlock,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Matrices are lists of rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub bw: Vec<Vec<f64>>,
    pub eps: f64,
    pub h: f64,
    pub kbar: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionBlock {
    pub y_lower: Vec<f64>,
    pub y_upper: Vec<f64>,
    pub grid: Vec<usize>,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Cum,
    Avg,
    Mul,
    Until,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    pub kind: Kind,
    pub horizon: usize,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub denominator: Option<Denominator>,
    /// Intersampling multiples that count as reaching the goal; defaults to `kbar`.
    #[serde(default)]
    pub goal_s: Option<Vec<usize>>,
    pub reward: RewardBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RewardBlock {
    AvgTau,
    NoKbarIndicator,
    StateTauTradeoff { alpha: f64, beta: f64, eps: f64, r_max: f64 },
    /// One value per `s = 0, …, kbar`.
    Tabulated { values: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Target error of every Gaussian rectangle probability.
    pub integration: f64,
    /// Certified optimality gap (in log probability) of box maximization.
    pub optimizer: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = AbstractionConfig::default();
        Tolerances { integration: d.mvn.tol, optimizer: d.ascent.gap_tol }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub paths: usize,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        SimulationBlock { paths: 1000 }
    }
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        bail!("{field}: matrix must be non-empty");
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        bail!("{field}: row {i} has {} entries, expected {c}", rows[i].len());
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn boxed(lower: &[f64], upper: &[f64], field: &str) -> Result<Hyperrect> {
    Hyperrect::new(lower.to_vec(), upper.to_vec()).with_context(|| format!("{field}: invalid bounds"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system()?;
        self.partition()?;
        self.kind()?;
        self.reward()?;
        let t = &self.tolerances;
        if !(t.integration > 0.0) {
            bail!("tolerances.integration must be positive");
        }
        if !(t.optimizer > 0.0) {
            bail!("tolerances.optimizer must be positive");
        }
        if self.simulation.paths == 0 {
            bail!("simulation.paths must be at least 1");
        }
        Ok(())
    }

    pub fn system(&self) -> Result<PetcSystem> {
        let s = &self.system;
        let a = matrix(&s.a, "system.a")?;
        let n = a.nrows();
        if a.ncols() != n {
            bail!("system.a: must be square, got {}x{}", n, a.ncols());
        }
        let b = matrix(&s.b, "system.b")?;
        if b.nrows() != n {
            bail!("system.b: expected {n} rows, got {}", b.nrows());
        }
        let k = matrix(&s.k, "system.k")?;
        if k.nrows() != b.ncols() || k.ncols() != n {
            bail!("system.k: expected {}x{n}, got {}x{}", b.ncols(), k.nrows(), k.ncols());
        }
        let bw = matrix(&s.bw, "system.bw")?;
        if bw.nrows() != n {
            bail!("system.bw: expected {n} rows, got {}", bw.nrows());
        }
        PetcSystem::new(a, b, k, bw, s.eps, s.h, s.kbar).context("system")
    }

    pub fn partition(&self) -> Result<Partition> {
        let p = &self.partition;
        let n = self.system.a.len();
        for (field, len) in [
            ("partition.y_lower", p.y_lower.len()),
            ("partition.y_upper", p.y_upper.len()),
            ("partition.grid", p.grid.len()),
            ("partition.x_lower", p.x_lower.len()),
            ("partition.x_upper", p.x_upper.len()),
        ] {
            if len != n {
                bail!("{field}: expected {n} entries, got {len}");
            }
        }
        let y = boxed(&p.y_lower, &p.y_upper, "partition.y")?;
        let x = boxed(&p.x_lower, &p.x_upper, "partition.x")?;
        build_partition(&y, &p.grid, &x).context("partition")
    }

    pub fn kind(&self) -> Result<AnalysisKind> {
        let a = &self.analysis;
        Ok(match a.kind {
            Kind::Cum => {
                let gamma = a.gamma.context("analysis.gamma is required for kind = \"cum\"")?;
                if !(0.0..=1.0).contains(&gamma) {
                    bail!("analysis.gamma must lie in [0, 1]");
                }
                AnalysisKind::Cum { gamma }
            }
            Kind::Avg => {
                let denominator = a.denominator.unwrap_or(Denominator::N);
                if denominator == Denominator::N && a.horizon == 0 {
                    bail!("analysis.horizon must be at least 1 with denominator \"n\"");
                }
                AnalysisKind::Avg { denominator }
            }
            Kind::Mul => AnalysisKind::Mul,
            Kind::Until => {
                let goal_s = a.goal_s.clone().unwrap_or_else(|| vec![self.system.kbar]);
                if goal_s.iter().any(|&s| s > self.system.kbar) {
                    bail!("analysis.goal_s: entries must lie in 0..={}", self.system.kbar);
                }
                AnalysisKind::Until { goal_s }
            }
        })
    }

    pub fn reward(&self) -> Result<Box<dyn RewardSpec>> {
        let kbar = self.system.kbar;
        Ok(match &self.analysis.reward {
            RewardBlock::AvgTau => Box::new(AvgTau { kbar }),
            RewardBlock::NoKbarIndicator => Box::new(NoKbarIndicator { kbar }),
            RewardBlock::StateTauTradeoff { alpha, beta, eps, r_max } => {
                Box::new(StateTauTradeoff::new(*alpha, *beta, *eps, *r_max).context("analysis.reward")?)
            }
            RewardBlock::Tabulated { values } => {
                if values.len() != kbar + 1 {
                    bail!("analysis.reward.values: expected {} entries (s = 0..={kbar}), got {}", kbar + 1, values.len());
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    bail!("analysis.reward.values: entries must be finite and non-negative");
                }
                Box::new(Tabulated { values: values.clone() })
            }
        })
    }

    pub fn abstraction_config(&self) -> AbstractionConfig {
        let mut c = AbstractionConfig::default();
        c.mvn.tol = self.tolerances.integration;
        c.mvn.seed = self.seed;
        c.ascent.gap_tol = self.tolerances.optimizer;
        c.ascent.seed = self.seed.wrapping_add(1);
        c
    }
}
