use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::IntervalChain;
use crate::error::{invalid, Result};

/// Whether the adversary minimizes or maximizes the expected value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Inf,
    Sup,
}

/// How per-step rewards combine along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum Accumulation {
    Cum { gamma: f64 },
    Mul,
}

/// Average-reward normalisation: `N` drops the initial step, `N + 1` keeps it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Denominator {
    #[serde(rename = "n")]
    N,
    #[serde(rename = "n+1")]
    NPlusOne,
}

/// Feasible distribution within `[low, high]` that minimizes (`Inf`) or maximizes (`Sup`)
/// the expectation of `values`: every state starts at its lower bound, then the remaining mass
/// goes to states in order of value, each up to its upper bound.
pub fn o_extremal_distribution(values: &[f64], low: &[f64], high: &[f64], direction: Direction) -> Result<Vec<f64>> {
    let n = values.len();
    if low.len() != n || high.len() != n {
        return Err(invalid("values, low and high must have the same length"));
    }
    if low.iter().zip(high).any(|(l, h)| !(0.0 <= *l && l <= h && *h <= 1.0)) {
        return Err(invalid("bounds must satisfy 0 <= low <= high <= 1"));
    }
    let (lo_sum, hi_sum): (f64, f64) = (low.iter().sum(), high.iter().sum());
    if lo_sum > 1.0 + 1e-12 || hi_sum < 1.0 - 1e-12 {
        return Err(invalid(format!("infeasible row: sum low {lo_sum}, sum high {hi_sum}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match direction {
        Direction::Inf => order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))),
        Direction::Sup => order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b))),
    }
    let mut p = low.to_vec();
    let mut remaining = 1.0 - lo_sum;
    for &j in &order {
        if remaining <= 0.0 {
            break;
        }
        let add = (high[j] - low[j]).min(remaining);
        p[j] += add;
        remaining -= add;
    }
    Ok(p)
}

/// States ordered by value for the given direction, ties by index, and each state's rank.
fn ranking(values: &[f64], direction: Direction) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    match direction {
        Direction::Inf => order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))),
        Direction::Sup => order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b))),
    }
    let mut rank = vec![0; values.len()];
    for (r, &q) in order.iter().enumerate() {
        rank[q] = r;
    }
    (order, rank)
}

/// `E[values]` under the o-extremal distribution of every row.
pub fn extremal_expectations(chain: &IntervalChain, values: &[f64], direction: Direction) -> Vec<f64> {
    let n = chain.n_states();
    let (order, rank) = ranking(values, direction);
    chain
        .rows
        .par_iter()
        .map_init(
            || vec![usize::MAX; n],
            |slot, row| {
                let mut acc: f64 = row.cols.iter().zip(&row.low).map(|(&c, l)| l * values[c]).sum();
                let mut remaining = 1.0 - row.low.iter().sum::<f64>();
                if row.tail_high == 0.0 {
                    let mut listed: Vec<usize> = (0..row.cols.len()).collect();
                    listed.sort_by_key(|&k| rank[row.cols[k]]);
                    for k in listed {
                        if remaining <= 0.0 {
                            break;
                        }
                        let add = (row.high[k] - row.low[k]).min(remaining);
                        acc += add * values[row.cols[k]];
                        remaining -= add;
                    }
                    return acc;
                }
                for (k, &c) in row.cols.iter().enumerate() {
                    slot[c] = k;
                }
                for &q in &order {
                    if remaining <= 0.0 {
                        break;
                    }
                    let room = match slot[q] {
                        usize::MAX if chain.tail_eligible[q] => row.tail_high,
                        usize::MAX => 0.0,
                        k => row.high[k] - row.low[k],
                    };
                    let add = room.min(remaining);
                    acc += add * values[q];
                    remaining -= add;
                }
                for &c in &row.cols {
                    slot[c] = usize::MAX;
                }
                acc
            },
        )
        .collect()
}

fn check_rewards(chain: &IntervalChain, rewards: &[f64]) -> Result<()> {
    if rewards.len() != chain.n_states() {
        return Err(invalid(format!(
            "{} rewards for {} states",
            rewards.len(),
            chain.n_states()
        )));
    }
    Ok(())
}

/// Optimal expected cumulative or multiplicative reward over `n` steps against a
/// time-varying adversary.
pub fn value_iteration(
    chain: &IntervalChain,
    rewards: &[f64],
    acc: Accumulation,
    n: usize,
    direction: Direction,
) -> Result<Vec<f64>> {
    check_rewards(chain, rewards)?;
    match acc {
        Accumulation::Cum { gamma } if !(0.0..=1.0).contains(&gamma) => {
            return Err(invalid(format!("discount must lie in [0, 1], got {gamma}")))
        }
        Accumulation::Mul if rewards.iter().any(|r| *r < 0.0) => {
            return Err(invalid("multiplicative rewards must be non-negative"))
        }
        _ => {}
    }
    let mut v = rewards.to_vec();
    for _ in 0..n {
        let e = extremal_expectations(chain, &v, direction);
        v = match acc {
            Accumulation::Cum { gamma } => rewards.iter().zip(&e).map(|(r, e)| r + gamma * e).collect(),
            Accumulation::Mul => rewards.iter().zip(&e).map(|(r, e)| r * e).collect(),
        };
    }
    Ok(v)
}

/// Optimal expected average reward over `n` steps.
pub fn value_avg(
    chain: &IntervalChain,
    rewards: &[f64],
    n: usize,
    direction: Direction,
    denominator: Denominator,
) -> Result<Vec<f64>> {
    let total = value_iteration(chain, rewards, Accumulation::Cum { gamma: 1.0 }, n, direction)?;
    match denominator {
        Denominator::NPlusOne => Ok(total.iter().map(|v| v / (n + 1) as f64).collect()),
        Denominator::N if n == 0 => Err(invalid("the denominator N needs a horizon of at least 1")),
        Denominator::N => Ok(total.iter().zip(rewards).map(|(v, r)| (v - r) / n as f64).collect()),
    }
}

/// Optimal probability of reaching `goal` within `n` steps through `safe` states.
pub fn bounded_until(
    chain: &IntervalChain,
    safe: &[bool],
    goal: &[bool],
    n: usize,
    direction: Direction,
) -> Result<Vec<f64>> {
    let m = chain.n_states();
    if safe.len() != m || goal.len() != m {
        return Err(invalid("state predicates must cover every state"));
    }
    let mut v: Vec<f64> = goal.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    for _ in 0..n {
        let e = extremal_expectations(chain, &v, direction);
        v = (0..m)
            .map(|q| if goal[q] { 1.0 } else if safe[q] { e[q] } else { 0.0 })
            .collect();
    }
    Ok(v)
}
