use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bounds::{AbstractionConfig, Abstractor};
use super::partition::Partition;
use crate::chain::{repair_row, IntervalChain, SparseRow};
use crate::error::{invalid, Result};
use crate::system::PetcSystem;

/// Plain-data copy of a system for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub bw: Vec<Vec<f64>>,
    pub eps: f64,
    pub h: f64,
    pub kbar: usize,
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>]) -> Result<nalgebra::DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(invalid("matrix rows have different lengths"));
    }
    Ok(nalgebra::DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl SystemRecord {
    pub fn from_system(sys: &PetcSystem) -> Self {
        Self {
            a: rows_of(&sys.a),
            b: rows_of(&sys.b),
            k: rows_of(&sys.k),
            bw: rows_of(&sys.bw),
            eps: sys.eps,
            h: sys.h,
            kbar: sys.kbar,
        }
    }

    pub fn to_system(&self) -> Result<PetcSystem> {
        PetcSystem::new(
            matrix_of(&self.a)?,
            matrix_of(&self.b)?,
            matrix_of(&self.k)?,
            matrix_of(&self.bw)?,
            self.eps,
            self.h,
            self.kbar,
        )
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("system record serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImcMetadata {
    pub system: SystemRecord,
    pub system_hash: String,
    pub partition: Partition,
    pub mvn_tol: f64,
    pub mvn_confidence: f64,
    pub mvn_shifts: usize,
    pub ascent_starts: usize,
    pub prune_tol: f64,
    pub seed: u64,
    /// Rows whose bounds had to be loosened to restore feasibility.
    pub repaired_rows: usize,
    pub integrated_entries: usize,
    pub pruned_entries: usize,
    pub build_seconds: f64,
}

/// The abstraction: states `(region, s)` for `s ∈ 0..=kbar` plus the absorbing state.
///
/// Rows of `(R, k)` do not depend on `k`, so one row is stored per region. Columns are state
/// indices `region·(kbar+1) + s`, with the absorbing state last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imc {
    pub n_regions: usize,
    pub kbar: usize,
    pub region_rows: Vec<SparseRow>,
    pub metadata: ImcMetadata,
}

impl Imc {
    pub fn n_states(&self) -> usize {
        self.n_regions * (self.kbar + 1) + 1
    }

    pub fn abs_state(&self) -> usize {
        self.n_states() - 1
    }

    pub fn state(&self, region: usize, s: usize) -> usize {
        region * (self.kbar + 1) + s
    }

    /// `(region, s)` of a state, or `None` for the absorbing state.
    pub fn label(&self, q: usize) -> Option<(usize, usize)> {
        (q < self.abs_state()).then(|| (q / (self.kbar + 1), q % (self.kbar + 1)))
    }

    pub fn state_labels(&self) -> Vec<String> {
        (0..self.n_states())
            .map(|q| match self.label(q) {
                Some((r, s)) => format!("({r},{s})"),
                None => "abs".to_string(),
            })
            .collect()
    }

    /// The full chain with rows replicated over `k` and the absorbing row added.
    pub fn to_chain(&self) -> IntervalChain {
        let abs = self.abs_state();
        let mut rows = Vec::with_capacity(self.n_states());
        for row in &self.region_rows {
            for _ in 0..=self.kbar {
                rows.push(row.clone());
            }
        }
        rows.push(SparseRow::exact(vec![abs], vec![1.0]));
        let tail_eligible = (0..self.n_states())
            .map(|q| self.label(q).is_some_and(|(_, s)| s > 0))
            .collect();
        IntervalChain { rows, tail_eligible }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| invalid(format!("serializing the IMC: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let imc: Self = serde_json::from_str(s).map_err(|e| invalid(format!("parsing the IMC: {e}")))?;
        if imc.region_rows.len() != imc.n_regions {
            return Err(invalid("IMC has the wrong number of rows"));
        }
        imc.to_chain().validate()?;
        Ok(imc)
    }
}

struct RegionRow {
    row: SparseRow,
    repaired: bool,
    integrated: usize,
    pruned: usize,
}

fn region_row(ab: &Abstractor, partition: &Partition, region: usize) -> Result<RegionRow> {
    let kbar = ab.system().kbar;
    let r = &partition.regions[region];
    let prune_tol = ab.config().prune_tol;
    let mut row = SparseRow {
        cols: Vec::new(),
        low: Vec::new(),
        high: Vec::new(),
        tail_high: 0.0,
    };
    let (mut integrated, mut pruned) = (0, 0);
    for (t, target) in partition.regions.iter().enumerate() {
        for s in 1..=kbar {
            let cap = ab.cheap_upper(r, target, s);
            if cap <= prune_tol {
                row.tail_high = row.tail_high.max(cap);
                pruned += 1;
                continue;
            }
            let (lo, hi) = ab.entry(region, r, target, s)?;
            integrated += 1;
            row.cols.push(t * (kbar + 1) + s);
            row.low.push(lo);
            row.high.push(hi);
        }
    }
    let (lo, hi) = ab.abs_bounds(r, &partition.y).map_err(|e| crate::error::Error::Entry {
        region,
        target: "abs".into(),
        s: 0,
        source: Box::new(e),
    })?;
    row.cols.push(partition.len() * (kbar + 1));
    row.low.push(lo);
    row.high.push(hi);
    let tail_columns = partition.len() * kbar - (row.cols.len() - 1);
    let repaired = repair_row(&mut row, tail_columns);
    if repaired {
        log::info!("region {region}: row bounds loosened to restore feasibility");
    }
    Ok(RegionRow {
        row,
        repaired,
        integrated,
        pruned,
    })
}

/// Builds the IMC over `partition`, with the absorbing state standing for leaving `Y`.
pub fn build_imc(sys: &PetcSystem, partition: &Partition, cfg: &AbstractionConfig) -> Result<Imc> {
    let start = Instant::now();
    if partition.y.dim() != sys.n() {
        return Err(invalid(format!(
            "partition has dimension {} but the system has {} states",
            partition.y.dim(),
            sys.n()
        )));
    }
    let ab = Abstractor::new(sys, cfg.clone())?;
    let rows = (0..partition.len())
        .into_par_iter()
        .map(|region| region_row(&ab, partition, region))
        .collect::<Result<Vec<_>>>()?;
    let record = SystemRecord::from_system(sys);
    let metadata = ImcMetadata {
        system_hash: record.hash(),
        system: record,
        partition: partition.clone(),
        mvn_tol: cfg.mvn.tol,
        mvn_confidence: cfg.mvn.confidence,
        mvn_shifts: cfg.mvn.shifts,
        ascent_starts: cfg.ascent.starts,
        prune_tol: cfg.prune_tol,
        seed: cfg.mvn.seed,
        repaired_rows: rows.iter().filter(|r| r.repaired).count(),
        integrated_entries: rows.iter().map(|r| r.integrated).sum(),
        pruned_entries: rows.iter().map(|r| r.pruned).sum(),
        build_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Imc {
        n_regions: partition.len(),
        kbar: sys.kbar,
        region_rows: rows.into_iter().map(|r| r.row).collect(),
        metadata,
    })
}
