//! Reward lifting and interval value iteration on the abstraction.

pub mod iteration;
pub mod rewards;

use serde::{Deserialize, Serialize};

pub use iteration::{
    bounded_until, extremal_expectations, o_extremal_distribution, value_avg, value_iteration, Accumulation,
    Denominator, Direction,
};
pub use rewards::{lift_rewards, AvgTau, LiftedRewards, NoKbarIndicator, RewardSpec, StateTauTradeoff, Tabulated};

use crate::abstraction::Imc;
use crate::error::{invalid, Result};

/// What is being bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum AnalysisKind {
    Cum { gamma: f64 },
    Avg { denominator: Denominator },
    Mul,
    /// Reach a state with one of `goal_s` before leaving the partitioned set.
    Until { goal_s: Vec<usize> },
}

/// Lower and upper bounds per IMC state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub horizon: usize,
    pub kind: AnalysisKind,
    pub kbar: usize,
    /// False when reward extrema were sampled rather than computed.
    pub rigorous: bool,
}

impl ValueBounds {
    /// Bound for `(region, s)`.
    pub fn get(&self, region: usize, s: usize) -> (f64, f64) {
        let q = region * (self.kbar + 1) + s;
        (self.lower[q], self.upper[q])
    }

    /// CSV with columns `region_index,s,lower,upper`; `only_s` restricts to one `s`.
    pub fn to_csv(&self, only_s: Option<usize>) -> String {
        let mut out = String::from("region_index,s,lower,upper\n");
        let n_regions = (self.lower.len() - 1) / (self.kbar + 1);
        for region in 0..n_regions {
            for s in 0..=self.kbar {
                if only_s.is_some_and(|t| t != s) {
                    continue;
                }
                let (lo, hi) = self.get(region, s);
                out.push_str(&format!("{region},{s},{lo},{hi}\n"));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| invalid(format!("serializing bounds: {e}")))
    }
}

/// Bounds on the expected reward (or until probability) from every IMC state over `n` steps.
pub fn analyze(imc: &Imc, rewards: &LiftedRewards, kind: &AnalysisKind, n: usize) -> Result<ValueBounds> {
    let chain = imc.to_chain();
    if rewards.lower.len() != chain.n_states() {
        return Err(invalid("lifted rewards do not match the IMC"));
    }
    let (lower, upper) = match kind {
        AnalysisKind::Cum { gamma } => {
            let acc = Accumulation::Cum { gamma: *gamma };
            (
                value_iteration(&chain, &rewards.lower, acc, n, Direction::Inf)?,
                value_iteration(&chain, &rewards.upper, acc, n, Direction::Sup)?,
            )
        }
        AnalysisKind::Mul => (
            value_iteration(&chain, &rewards.lower, Accumulation::Mul, n, Direction::Inf)?,
            value_iteration(&chain, &rewards.upper, Accumulation::Mul, n, Direction::Sup)?,
        ),
        AnalysisKind::Avg { denominator } => (
            value_avg(&chain, &rewards.lower, n, Direction::Inf, *denominator)?,
            value_avg(&chain, &rewards.upper, n, Direction::Sup, *denominator)?,
        ),
        AnalysisKind::Until { goal_s } => {
            let safe: Vec<bool> = (0..chain.n_states()).map(|q| imc.label(q).is_some()).collect();
            let goal: Vec<bool> = (0..chain.n_states())
                .map(|q| imc.label(q).is_some_and(|(_, s)| goal_s.contains(&s)))
                .collect();
            (
                bounded_until(&chain, &safe, &goal, n, Direction::Inf)?,
                bounded_until(&chain, &safe, &goal, n, Direction::Sup)?,
            )
        }
    };
    Ok(ValueBounds {
        lower,
        upper,
        horizon: n,
        kind: kind.clone(),
        kbar: imc.kbar,
        rigorous: rewards.rigorous || matches!(kind, AnalysisKind::Until { .. }),
    })
}
