//! Reference solvers for the blocklength allocation problem.
//!
//! Plans are searched in a discrete space: every queued packet takes a TTI
//! from a level grid and every *unit* takes a subchannel option. A unit is
//! either one active device or, in the grouped encoding, all devices sharing a
//! queue length; a group's subchannel total is split evenly among its members
//! (remainder to the lowest indices) and all members share the per-position
//! TTIs.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::delaymodel::{self, BlocklengthPlan, DevicePlan, Scenario};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{self, Stream};

/// Relative slack on the period constraint, matching the feasibility check.
const PERIOD_SLACK: f64 = 1e-12;

/// Default cap on the number of plans an exhaustive search may enumerate.
pub const DEFAULT_ENUMERATION_CAP: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    PerDevice,
    PerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Seconds, strictly increasing.
    pub tti_levels: Vec<f64>,
    /// Subchannels per unit, strictly increasing.
    pub subch_options: Vec<u32>,
    pub encoding: Encoding,
}

impl SearchSpace {
    pub fn new(tti_levels: Vec<f64>, subch_options: Vec<u32>, encoding: Encoding) -> Result<Self> {
        if tti_levels.is_empty() {
            return Err(Error::config("tti_levels", "must not be empty"));
        }
        if !(tti_levels[0] > 0.0) || tti_levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("tti_levels", "must be positive and strictly increasing"));
        }
        if subch_options.is_empty() || subch_options[0] < 1 || subch_options.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("subch_options", "must be >= 1 and strictly increasing"));
        }
        Ok(Self {
            tti_levels,
            subch_options,
            encoding,
        })
    }

    /// The grid `{T_max/L, 2 T_max/L, ..., T_max}`.
    pub fn tti_grid(period: f64, levels: usize) -> Vec<f64> {
        (1..=levels).map(|i| period * i as f64 / levels as f64).collect()
    }

    /// Geometric ladder `{1, 2, 4, ...}` capped at `max`.
    pub fn ladder(max: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut v = 1u32;
        while v <= max {
            out.push(v);
            v = match v.checked_mul(2) {
                Some(n) => n,
                None => break,
            };
        }
        out
    }

    /// Per-device units with `L` TTI levels and the geometric subchannel ladder.
    pub fn per_device(scenario: &Scenario, levels: usize) -> Result<Self> {
        Self::new(
            Self::tti_grid(scenario.period, levels),
            Self::ladder(scenario.subchannel_count),
            Encoding::PerDevice,
        )
    }

    /// Queue-length groups with `L` TTI levels and every group total `1..=M_Subc`.
    pub fn per_group(scenario: &Scenario, levels: usize) -> Result<Self> {
        Self::new(
            Self::tti_grid(scenario.period, levels),
            (1..=scenario.subchannel_count).collect(),
            Encoding::PerGroup,
        )
    }

    pub fn units(&self, scenario: &Scenario) -> Vec<Unit> {
        match self.encoding {
            Encoding::PerDevice => scenario
                .active_devices()
                .into_iter()
                .map(|k| Unit {
                    members: vec![k],
                    queue_len: scenario.max_queue_length(k),
                })
                .collect(),
            Encoding::PerGroup => queue_groups(scenario),
        }
    }

    /// Expands a unit choice list into a plan.
    pub fn decode(&self, scenario: &Scenario, units: &[Unit], choices: &[UnitChoice]) -> Result<BlocklengthPlan> {
        if units.len() != choices.len() {
            return Err(Error::Shape {
                expected: units.len(),
                got: choices.len(),
            });
        }
        let mut devices = vec![
            DevicePlan {
                ttis: Vec::new(),
                subchannels: 0,
            };
            scenario.device_count()
        ];
        for (unit, choice) in units.iter().zip(choices) {
            let ttis = self.ttis_of(&choice.ttis)?;
            let total = *self.subch_options.get(choice.subch).ok_or(Error::Index {
                what: "subch option",
                index: choice.subch,
                lo: 0,
                hi: self.subch_options.len() - 1,
            })?;
            for (&k, share) in unit.members.iter().zip(split_even(total, unit.members.len())) {
                devices[k] = DevicePlan {
                    ttis: ttis.clone(),
                    subchannels: share,
                };
            }
        }
        Ok(BlocklengthPlan { devices })
    }

    /// Recovers the unit choices of a plan that lies exactly on this space.
    pub fn encode(&self, scenario: &Scenario, units: &[Unit], plan: &BlocklengthPlan) -> Result<Vec<UnitChoice>> {
        plan.validate(scenario)?;
        let level_of = |t: f64| {
            self.tti_levels
                .iter()
                .position(|&l| (l - t).abs() <= 1e-12 * l)
                .ok_or_else(|| Error::InvalidPlan(format!("TTI {t} s is not a level of the search space")))
        };
        let mut out = Vec::with_capacity(units.len());
        for unit in units {
            let first = &plan.devices[unit.members[0]];
            let ttis = first.ttis.iter().map(|&t| level_of(t)).collect::<Result<Vec<_>>>()?;
            let total: u32 = unit.members.iter().map(|&k| plan.devices[k].subchannels).sum();
            let subch = self
                .subch_options
                .iter()
                .position(|&o| o == total)
                .ok_or_else(|| Error::InvalidPlan(format!("{total} subchannels is not an option of the search space")))?;
            let choice = UnitChoice { ttis, subch };
            for (&k, share) in unit.members.iter().zip(split_even(total, unit.members.len())) {
                let d = &plan.devices[k];
                if d.subchannels != share || d.ttis.len() != first.ttis.len() {
                    return Err(Error::InvalidPlan(format!("device {k} does not follow its unit's split")));
                }
                for (a, b) in d.ttis.iter().zip(&first.ttis) {
                    if a != b {
                        return Err(Error::InvalidPlan(format!("device {k} does not share its unit's TTIs")));
                    }
                }
            }
            out.push(choice);
        }
        Ok(out)
    }

    fn ttis_of(&self, levels: &[usize]) -> Result<Vec<f64>> {
        levels
            .iter()
            .map(|&i| {
                self.tti_levels.get(i).copied().ok_or(Error::Index {
                    what: "tti level",
                    index: i,
                    lo: 0,
                    hi: self.tti_levels.len() - 1,
                })
            })
            .collect()
    }

    /// Level sequences of length `len` whose TTIs fit in the period, in
    /// lexicographic order.
    pub fn period_feasible_sequences(&self, len: usize, period: f64) -> Vec<Vec<usize>> {
        let limit = period * (1.0 + PERIOD_SLACK);
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(len);
        self.extend_sequences(len, limit, 0.0, &mut cur, &mut out);
        out
    }

    fn extend_sequences(&self, len: usize, limit: f64, used: f64, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for (i, &t) in self.tti_levels.iter().enumerate() {
            if used + t > limit {
                break;
            }
            cur.push(i);
            self.extend_sequences(len, limit, used + t, cur, out);
            cur.pop();
        }
    }

    fn sequence_fits(&self, levels: &[usize], period: f64) -> bool {
        levels.iter().map(|&i| self.tti_levels[i]).sum::<f64>() <= period * (1.0 + PERIOD_SLACK)
    }
}

/// Devices that share one TTI sequence and one subchannel total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Unit {
    pub members: Vec<usize>,
    pub queue_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitChoice {
    /// Level index per packet position.
    pub ttis: Vec<usize>,
    /// Index into the subchannel options.
    pub subch: usize,
}

/// Flattened encoding used for lexicographic tie-breaking.
pub fn flat_encoding(choices: &[UnitChoice]) -> Vec<usize> {
    let mut out = Vec::new();
    for c in choices {
        out.extend_from_slice(&c.ttis);
        out.push(c.subch);
    }
    out
}

/// Active devices grouped by queue length, groups in ascending length.
pub fn queue_groups(scenario: &Scenario) -> Vec<Unit> {
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for k in scenario.active_devices() {
        by_len.entry(scenario.max_queue_length(k)).or_default().push(k);
    }
    by_len
        .into_iter()
        .map(|(queue_len, members)| Unit { members, queue_len })
        .collect()
}

/// Even split of `total` over `n` parts, remainder to the first parts.
pub fn split_even(total: u32, n: usize) -> Vec<u32> {
    if n == 0 {
        return Vec::new();
    }
    let base = total / n as u32;
    let extra = (total % n as u32) as usize;
    (0..n).map(|i| base + (i < extra) as u32).collect()
}

/// Same TTI for every packet, subchannels split evenly among active devices.
pub fn fixed_tti_plan(scenario: &Scenario, tti: f64) -> Result<BlocklengthPlan> {
    if !(tti > 0.0 && tti.is_finite()) {
        return Err(Error::domain("tti", tti, "must be positive"));
    }
    let active = scenario.active_devices();
    if active.len() > scenario.subchannel_count as usize {
        return Err(Error::NoFeasiblePlan);
    }
    let shares = split_even(scenario.subchannel_count, active.len());
    let mut devices = vec![
        DevicePlan {
            ttis: Vec::new(),
            subchannels: 0,
        };
        scenario.device_count()
    ];
    for (&k, s) in active.iter().zip(shares) {
        devices[k] = DevicePlan {
            ttis: vec![tti; scenario.max_queue_length(k)],
            subchannels: s,
        };
    }
    Ok(BlocklengthPlan { devices })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub plan: BlocklengthPlan,
    /// Average over-the-air delay, seconds.
    pub objective: f64,
    pub choices: Vec<UnitChoice>,
    /// Plans whose objective was computed.
    pub evaluations: u64,
}

/// Summed delay of a unit's members, or `None` when any member violates the
/// period or rate constraint or has a dead link.
fn unit_cost(scenario: &Scenario, space: &SearchSpace, unit: &Unit, levels: &[usize], total: u32, p_one: f64) -> Option<f64> {
    let shares = split_even(total, unit.members.len());
    if shares.iter().any(|&s| s == 0) {
        return None;
    }
    let ttis: Vec<f64> = levels.iter().map(|&i| space.tti_levels[i]).collect();
    let mut cost = 0.0;
    for (&k, &s) in unit.members.iter().zip(&shares) {
        let f = delaymodel::device_feasibility(scenario, k, &ttis, s);
        if !(f.period_ok && f.rate_ok) {
            return None;
        }
        cost += delaymodel::device_delay_for(scenario, k, &ttis, s, p_one).ok()?.total;
    }
    Some(cost)
}

fn budget_ok(scenario: &Scenario, used: u64) -> bool {
    if scenario.strict_subchannels {
        used == scenario.subchannel_count as u64
    } else {
        used <= scenario.subchannel_count as u64
    }
}

fn finish(scenario: &Scenario, space: &SearchSpace, units: &[Unit], choices: Vec<UnitChoice>, evaluations: u64) -> Result<Solution> {
    let plan = space.decode(scenario, units, &choices)?;
    let objective = delaymodel::average_ota_delay(scenario, &plan)?;
    Ok(Solution {
        plan,
        objective,
        choices,
        evaluations,
    })
}

/// Feasible `(sequence, option, cost)` triples of one unit in lexicographic order.
struct UnitTable {
    seqs: Vec<Vec<usize>>,
    /// `(sequence index, option index, subchannels, cost)`.
    entries: Vec<(usize, usize, u32, f64)>,
    min_subch: u32,
}

fn unit_tables(scenario: &Scenario, space: &SearchSpace, units: &[Unit], exec: Exec) -> Vec<UnitTable> {
    let p_one = scenario.p_one();
    units
        .iter()
        .map(|unit| {
            let seqs = space.period_feasible_sequences(unit.queue_len, scenario.period);
            let n_opt = space.subch_options.len();
            let costs = exec.map_range(seqs.len() * n_opt, |i| {
                let (s, o) = (i / n_opt, i % n_opt);
                unit_cost(scenario, space, unit, &seqs[s], space.subch_options[o], p_one)
            });
            let entries: Vec<_> = costs
                .into_iter()
                .enumerate()
                .filter_map(|(i, c)| {
                    let (s, o) = (i / n_opt, i % n_opt);
                    c.map(|c| (s, o, space.subch_options[o], c))
                })
                .collect();
            let min_subch = entries.iter().map(|e| e.2).min().unwrap_or(u32::MAX);
            UnitTable { seqs, entries, min_subch }
        })
        .collect()
}

/// Number of plans an exhaustive search would enumerate after removing
/// TTI sequences that overrun the period.
pub fn enumeration_size(scenario: &Scenario, space: &SearchSpace) -> f64 {
    space
        .units(scenario)
        .iter()
        .map(|u| space.period_feasible_sequences(u.queue_len, scenario.period).len() as f64 * space.subch_options.len() as f64)
        .product()
}

pub fn exhaustive_search(scenario: &Scenario, space: &SearchSpace) -> Result<Solution> {
    exhaustive_search_with(scenario, space, DEFAULT_ENUMERATION_CAP, Exec::default())
}

/// Global optimum over the space; ties go to the lexicographically smallest
/// encoding.
pub fn exhaustive_search_with(scenario: &Scenario, space: &SearchSpace, cap: f64, exec: Exec) -> Result<Solution> {
    scenario.validate()?;
    let units = space.units(scenario);
    let size: f64 = units
        .iter()
        .map(|u| space.period_feasible_sequences(u.queue_len, scenario.period).len() as f64 * space.subch_options.len() as f64)
        .product();
    if size > cap {
        return Err(Error::EnumerationCap { size, cap });
    }
    if units.is_empty() {
        return finish(scenario, space, &units, Vec::new(), 1);
    }
    let tables = unit_tables(scenario, space, &units, exec);
    // reserve[u] = fewest subchannels units u.. can possibly use
    let mut reserve = vec![0u64; units.len() + 1];
    for u in (0..units.len()).rev() {
        reserve[u] = reserve[u + 1].saturating_add(tables[u].min_subch as u64);
    }
    let budget = scenario.subchannel_count as u64;
    let first = &tables[0].entries;
    let subtrees = exec.map(first, |&(s, o, sub, cost)| {
        let mut best = Best::default();
        let mut path = vec![(s, o)];
        descend(scenario, &tables, &reserve, 1, sub as u64, cost, budget, &mut path, &mut best);
        best
    });
    let mut best = Best::default();
    for b in subtrees {
        best.evaluations += b.evaluations;
        if let Some((c, p)) = b.found {
            if best.found.as_ref().is_none_or(|(bc, _)| c < *bc) {
                best.found = Some((c, p));
            }
        }
    }
    let evaluations = best.evaluations;
    let (_, path) = best.found.ok_or(Error::NoFeasiblePlan)?;
    let choices = path
        .iter()
        .zip(&tables)
        .map(|(&(s, o), t)| UnitChoice {
            ttis: t.seqs[s].clone(),
            subch: o,
        })
        .collect();
    finish(scenario, space, &units, choices, evaluations)
}

#[derive(Default)]
struct Best {
    found: Option<(f64, Vec<(usize, usize)>)>,
    evaluations: u64,
}

#[allow(clippy::too_many_arguments)]
fn descend(
    scenario: &Scenario,
    tables: &[UnitTable],
    reserve: &[u64],
    u: usize,
    used: u64,
    cost: f64,
    budget: u64,
    path: &mut Vec<(usize, usize)>,
    best: &mut Best,
) {
    if used + reserve[u] > budget {
        return;
    }
    if u == tables.len() {
        best.evaluations += 1;
        if !budget_ok(scenario, used) {
            return;
        }
        if best.found.as_ref().is_none_or(|(bc, _)| cost < *bc) {
            best.found = Some((cost, path.clone()));
        }
        return;
    }
    for &(s, o, sub, c) in &tables[u].entries {
        path.push((s, o));
        descend(scenario, tables, reserve, u + 1, used + sub as u64, cost + c, budget, path, best);
        path.pop();
    }
}

/// Exact optimum by decomposition: each unit's cost depends only on its own
/// choice, so the best sequence per subchannel option is found per unit and
/// the options are then combined by dynamic programming over the budget.
pub fn decomposed_search(scenario: &Scenario, space: &SearchSpace, exec: Exec) -> Result<Solution> {
    scenario.validate()?;
    let units = space.units(scenario);
    if units.is_empty() {
        return finish(scenario, space, &units, Vec::new(), 1);
    }
    let tables = unit_tables(scenario, space, &units, exec);
    let evaluations: u64 = tables.iter().map(|t| t.entries.len() as u64).sum();
    // best sequence per option for each unit: (option, subchannels, cost, sequence)
    let per_option: Vec<Vec<(usize, u32, f64, usize)>> = tables
        .iter()
        .map(|t| {
            let mut best: Vec<Option<(f64, usize)>> = vec![None; space.subch_options.len()];
            for &(s, o, _, c) in &t.entries {
                if best[o].is_none_or(|(bc, _)| c < bc) {
                    best[o] = Some((c, s));
                }
            }
            best.into_iter()
                .enumerate()
                .filter_map(|(o, b)| b.map(|(c, s)| (o, space.subch_options[o], c, s)))
                .collect()
        })
        .collect();
    let budget = scenario.subchannel_count as usize;
    let n = units.len();
    // value[u][r]: least cost of units u.. using at most (or exactly) r subchannels
    let mut value = vec![vec![f64::INFINITY; budget + 1]; n + 1];
    for r in 0..=budget {
        if !scenario.strict_subchannels || r == 0 {
            value[n][r] = 0.0;
        }
    }
    let mut pick = vec![vec![usize::MAX; budget + 1]; n];
    for u in (0..n).rev() {
        for r in 0..=budget {
            for (i, &(_, sub, c, _)) in per_option[u].iter().enumerate() {
                let sub = sub as usize;
                if sub > r {
                    break;
                }
                let v = c + value[u + 1][r - sub];
                if v < value[u][r] {
                    value[u][r] = v;
                    pick[u][r] = i;
                }
            }
        }
    }
    if !value[0][budget].is_finite() {
        return Err(Error::NoFeasiblePlan);
    }
    let mut choices = Vec::with_capacity(n);
    let mut r = budget;
    for u in 0..n {
        let (o, sub, _, s) = per_option[u][pick[u][r]];
        choices.push(UnitChoice {
            ttis: tables[u].seqs[s].clone(),
            subch: o,
        });
        r -= sub as usize;
    }
    finish(scenario, space, &units, choices, evaluations)
}

/// Objective of a full choice list in unit-sum form, or `None` if infeasible.
fn choices_cost(
    scenario: &Scenario,
    space: &SearchSpace,
    units: &[Unit],
    choices: &[UnitChoice],
    p_one: f64,
    cache: Option<&HashMap<(usize, UnitChoice), Option<f64>>>,
) -> Option<f64> {
    let used: u64 = choices.iter().map(|c| space.subch_options[c.subch] as u64).sum();
    if !budget_ok(scenario, used) {
        return None;
    }
    let mut total = 0.0;
    for (u, (unit, c)) in units.iter().zip(choices).enumerate() {
        let cost = match cache.and_then(|m| m.get(&(u, c.clone()))) {
            Some(v) => *v,
            None => unit_cost(scenario, space, unit, &c.ttis, space.subch_options[c.subch], p_one),
        };
        total += cost?;
    }
    Some(total / scenario.device_count().max(1) as f64)
}

pub fn random_search(scenario: &Scenario, space: &SearchSpace, samples: usize, seed: u64) -> Result<Solution> {
    random_search_with(scenario, space, samples, seed, Exec::default())
}

/// Best feasible plan among `samples` uniform draws.
///
/// Draws come from one stream in order, so the first `n` samples are the same
/// for every sample count and the objective can only improve with more samples.
pub fn random_search_with(scenario: &Scenario, space: &SearchSpace, samples: usize, seed: u64, exec: Exec) -> Result<Solution> {
    if samples == 0 {
        return Err(Error::config("samples", "must be >= 1"));
    }
    scenario.validate()?;
    let units = space.units(scenario);
    let seqs: Vec<Vec<Vec<usize>>> = units
        .iter()
        .map(|u| space.period_feasible_sequences(u.queue_len, scenario.period))
        .collect();
    if seqs.iter().any(|s| s.is_empty()) {
        return Err(Error::NoFeasiblePlan);
    }
    // smallest option that gives every member at least one subchannel
    let min_opt: Vec<usize> = units
        .iter()
        .map(|u| {
            space
                .subch_options
                .iter()
                .position(|&o| o as usize >= u.members.len())
                .unwrap_or(space.subch_options.len())
        })
        .collect();
    let mut reserve = vec![0u64; units.len() + 1];
    for u in (0..units.len()).rev() {
        let m = space.subch_options.get(min_opt[u]).copied().unwrap_or(u32::MAX) as u64;
        reserve[u] = reserve[u + 1].saturating_add(m);
    }
    let budget = scenario.subchannel_count as u64;
    let mut rng = rng::stream(seed, Stream::RandomSearch, 0);
    let draws: Vec<Option<Vec<UnitChoice>>> = (0..samples)
        .map(|_| {
            let mut used = 0u64;
            let mut out = Vec::with_capacity(units.len());
            let mut ok = true;
            for u in 0..units.len() {
                let ttis = seqs[u][rng.random_range(0..seqs[u].len())].clone();
                let room = budget.saturating_sub(used + reserve[u + 1]);
                let hi = space.subch_options.partition_point(|&o| o as u64 <= room);
                if hi <= min_opt[u] {
                    ok = false;
                    continue;
                }
                let subch = rng.random_range(min_opt[u]..hi);
                used += space.subch_options[subch] as u64;
                out.push(UnitChoice { ttis, subch });
            }
            ok.then_some(out)
        })
        .collect();
    let p_one = scenario.p_one();
    let costs = exec.map(&draws, |d| {
        d.as_ref()
            .and_then(|c| choices_cost(scenario, space, &units, c, p_one, None))
    });
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in costs.iter().enumerate() {
        if let Some(c) = *c {
            if best.is_none_or(|(bc, _)| c < bc) {
                best = Some((c, i));
            }
        }
    }
    let (_, i) = best.ok_or(Error::NoFeasiblePlan)?;
    let choices = draws[i].clone().expect("feasible draw");
    finish(scenario, space, &units, choices, samples as u64)
}

pub fn local_search(scenario: &Scenario, space: &SearchSpace, init: &BlocklengthPlan, iters: usize, seed: u64) -> Result<Solution> {
    local_search_with(scenario, space, init, iters, seed, Exec::default())
}

/// Best-improvement hill climbing over single-coordinate moves: one packet's
/// TTI level or one unit's subchannel option, each by one step. Neighbours are
/// scanned in a seeded order, which only matters for ties.
pub fn local_search_with(
    scenario: &Scenario,
    space: &SearchSpace,
    init: &BlocklengthPlan,
    iters: usize,
    seed: u64,
    exec: Exec,
) -> Result<Solution> {
    scenario.validate()?;
    let units = space.units(scenario);
    let mut current = space.encode(scenario, &units, init)?;
    let p_one = scenario.p_one();
    let mut cache: HashMap<(usize, UnitChoice), Option<f64>> = HashMap::new();
    let fill = |choices: &[UnitChoice], cache: &mut HashMap<(usize, UnitChoice), Option<f64>>| {
        for (u, c) in choices.iter().enumerate() {
            cache
                .entry((u, c.clone()))
                .or_insert_with(|| unit_cost(scenario, space, &units[u], &c.ttis, space.subch_options[c.subch], p_one));
        }
    };
    fill(&current, &mut cache);
    let mut cost = choices_cost(scenario, space, &units, &current, p_one, Some(&cache))
        .ok_or_else(|| Error::InvalidPlan("initial plan is infeasible".into()))?;
    let mut rng = rng::stream(seed, Stream::LocalSearch, 0);
    let mut evaluations = 1u64;
    let mut moved = false;
    for _ in 0..iters {
        let mut moves = neighbours(space, scenario, &current);
        moves.shuffle(&mut rng);
        let fresh: Vec<(usize, UnitChoice)> = moves
            .iter()
            .map(|(u, c)| (*u, c.clone()))
            .filter(|k| !cache.contains_key(k))
            .collect();
        let computed = exec.map(&fresh, |(u, c)| {
            unit_cost(scenario, space, &units[*u], &c.ttis, space.subch_options[c.subch], p_one)
        });
        cache.extend(fresh.into_iter().zip(computed));
        let mut best: Option<(f64, usize)> = None;
        for (i, (u, c)) in moves.iter().enumerate() {
            let mut cand = current.clone();
            cand[*u] = c.clone();
            evaluations += 1;
            if let Some(v) = choices_cost(scenario, space, &units, &cand, p_one, Some(&cache)) {
                if v < cost && best.is_none_or(|(bv, _)| v < bv) {
                    best = Some((v, i));
                }
            }
        }
        let Some((v, i)) = best else { break };
        let (u, c) = moves.swap_remove(i);
        current[u] = c;
        cost = v;
        moved = true;
    }
    let plan = if moved {
        space.decode(scenario, &units, &current)?
    } else {
        init.clone()
    };
    let objective = delaymodel::average_ota_delay(scenario, &plan)?;
    Ok(Solution {
        plan,
        objective,
        choices: current,
        evaluations,
    })
}

fn neighbours(space: &SearchSpace, scenario: &Scenario, current: &[UnitChoice]) -> Vec<(usize, UnitChoice)> {
    let mut out = Vec::new();
    for (u, c) in current.iter().enumerate() {
        for pos in 0..c.ttis.len() {
            for delta in [-1i64, 1] {
                let l = c.ttis[pos] as i64 + delta;
                if l < 0 || l as usize >= space.tti_levels.len() {
                    continue;
                }
                let mut n = c.clone();
                n.ttis[pos] = l as usize;
                if space.sequence_fits(&n.ttis, scenario.period) {
                    out.push((u, n));
                }
            }
        }
        for delta in [-1i64, 1] {
            let o = c.subch as i64 + delta;
            if o < 0 || o as usize >= space.subch_options.len() {
                continue;
            }
            let mut n = c.clone();
            n.subch = o as usize;
            out.push((u, n));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaymodel::DeviceProfile;

    fn toy(rates_per_ms: &[f64], subch: u32) -> Scenario {
        Scenario {
            devices: rates_per_ms
                .iter()
                .enumerate()
                .map(|(i, r)| DeviceProfile {
                    rate: r * 1e3,
                    distance: 150.0 + 40.0 * i as f64,
                })
                .collect(),
            preamble_count: 10,
            subchannel_count: subch,
            ..Scenario::default()
        }
    }

    #[test]
    fn space_validation_and_grids() {
        assert_eq!(SearchSpace::ladder(20), vec![1, 2, 4, 8, 16]);
        assert_eq!(SearchSpace::ladder(1), vec![1]);
        let g = SearchSpace::tti_grid(5e-3, 10);
        assert_eq!(g.len(), 10);
        assert!((g[0] - 0.5e-3).abs() < 1e-18 && g[9] == 5e-3);
        assert!(SearchSpace::new(vec![2e-3, 1e-3], vec![1], Encoding::PerDevice).is_err());
        assert!(SearchSpace::new(vec![1e-3], vec![2, 2], Encoding::PerDevice).is_err());
        assert!(SearchSpace::new(vec![1e-3], vec![0, 2], Encoding::PerDevice).is_err());
    }

    #[test]
    fn fixed_tti_examples() {
        let s = toy(&[0.3, 0.1], 5);
        let p = fixed_tti_plan(&s, 1e-3).unwrap();
        assert_eq!(p.devices[0].subchannels, 3);
        assert_eq!(p.devices[1].subchannels, 2);
        assert!(p.devices.iter().zip(&s.queue_lengths()).all(|(d, &m)| d.ttis == vec![1e-3; m]));
        let nr = fixed_tti_plan(&s, 0.5e-3).unwrap();
        assert!(nr.devices.iter().all(|d| d.ttis.iter().all(|&t| t == 0.5e-3)));
        assert!(matches!(fixed_tti_plan(&toy(&[0.1; 3], 2), 1e-3), Err(Error::NoFeasiblePlan)));
        assert!(fixed_tti_plan(&s, 0.0).is_err());
        let mut idle = toy(&[0.3, 0.1], 5);
        idle.devices[1].rate = 0.0;
        let p = fixed_tti_plan(&idle, 1e-3).unwrap();
        assert_eq!((p.devices[0].subchannels, p.devices[1].subchannels), (5, 0));
    }

    #[test]
    fn sequences_respect_period() {
        let sp = SearchSpace::new(SearchSpace::tti_grid(5e-3, 5), vec![1], Encoding::PerDevice).unwrap();
        let seqs = sp.period_feasible_sequences(2, 5e-3);
        // pairs (i, j) of levels 1..5 with i + j <= 5
        assert_eq!(seqs.len(), 10);
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sp.period_feasible_sequences(6, 5e-3).len(), 0);
    }

    #[test]
    fn single_device_exhaustive_is_argmin_of_twelve() {
        let s = toy(&[0.1], 8);
        assert_eq!(s.max_queue_length(0), 1);
        let sp = SearchSpace::new(vec![0.5e-3, 1e-3, 1.5e-3, 2e-3], vec![1, 2, 4], Encoding::PerDevice).unwrap();
        let sol = exhaustive_search(&s, &sp).unwrap();
        let mut best = (f64::INFINITY, 0, 0);
        for (i, &t) in sp.tti_levels.iter().enumerate() {
            for (j, &m) in sp.subch_options.iter().enumerate() {
                let plan = BlocklengthPlan {
                    devices: vec![DevicePlan { ttis: vec![t], subchannels: m }],
                };
                if !delaymodel::check_feasibility(&s, &plan).unwrap().all_ok() {
                    continue;
                }
                let d = delaymodel::average_ota_delay(&s, &plan).unwrap();
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        assert!((sol.objective - best.0).abs() < 1e-15);
        assert_eq!(sol.choices[0], UnitChoice { ttis: vec![best.1], subch: best.2 });
        assert_eq!(sol.evaluations, 12);
    }

    #[test]
    fn symmetric_devices_get_symmetric_optimum() {
        let mut s = toy(&[0.3, 0.3], 16);
        s.devices[1].distance = s.devices[0].distance;
        let sp = SearchSpace::new(SearchSpace::tti_grid(5e-3, 5), vec![2, 4, 8], Encoding::PerDevice).unwrap();
        let sol = exhaustive_search(&s, &sp).unwrap();
        let swapped = vec![sol.choices[1].clone(), sol.choices[0].clone()];
        let units = sp.units(&s);
        let p = sp.decode(&s, &units, &swapped).unwrap();
        let d = delaymodel::average_ota_delay(&s, &p).unwrap();
        assert!((d - sol.objective).abs() < 1e-15);
        assert!(flat_encoding(&sol.choices) <= flat_encoding(&swapped));
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let s = toy(&[0.5, 0.5, 0.5], 64);
        let sp = SearchSpace::per_device(&s, 10).unwrap();
        let size = enumeration_size(&s, &sp);
        assert!(size > 1e3);
        let err = exhaustive_search_with(&s, &sp, 1e3, Exec::Sequential).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { .. }));
    }

    #[test]
    fn decomposed_matches_exhaustive() {
        for (rates, subch) in [(vec![0.3, 0.1], 12u32), (vec![0.5, 0.2, 0.05], 10), (vec![0.25, 0.25, 0.6], 9)] {
            let s = toy(&rates, subch);
            for sp in [
                SearchSpace::new(SearchSpace::tti_grid(5e-3, 5), (1..=subch).collect(), Encoding::PerDevice).unwrap(),
                SearchSpace::per_group(&s, 5).unwrap(),
            ] {
                let a = exhaustive_search(&s, &sp).unwrap();
                let b = decomposed_search(&s, &sp, Exec::default()).unwrap();
                assert!((a.objective - b.objective).abs() <= 1e-12 * a.objective, "{} vs {}", a.objective, b.objective);
                assert!(delaymodel::check_feasibility(&s, &a.plan).unwrap().all_ok());
                assert!(delaymodel::check_feasibility(&s, &b.plan).unwrap().all_ok());
            }
        }
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let s = toy(&[0.3, 0.1, 0.45], 12);
        let sp = SearchSpace::new(SearchSpace::tti_grid(5e-3, 5), SearchSpace::ladder(12), Encoding::PerDevice).unwrap();
        let a = exhaustive_search_with(&s, &sp, 1e7, Exec::Sequential).unwrap();
        let b = exhaustive_search_with(&s, &sp, 1e7, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let a = random_search_with(&s, &sp, 200, 4, Exec::Sequential).unwrap();
        let b = random_search_with(&s, &sp, 200, 4, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_search_bounded_by_oracle_and_monotone() {
        let s = toy(&[0.3, 0.1, 0.45], 12);
        let sp = SearchSpace::new(SearchSpace::tti_grid(5e-3, 5), (1..=12).collect(), Encoding::PerDevice).unwrap();
        let opt = exhaustive_search(&s, &sp).unwrap();
        let mut prev = f64::INFINITY;
        for n in [1usize, 10, 100, 1000] {
            match random_search(&s, &sp, n, 21) {
                Ok(sol) => {
                    assert!(sol.objective >= opt.objective * (1.0 - 1e-12));
                    assert!(sol.objective <= prev);
                    assert!(delaymodel::check_feasibility(&s, &sol.plan).unwrap().all_ok());
                    prev = sol.objective;
                }
                Err(Error::NoFeasiblePlan) => assert!(prev.is_infinite()),
                Err(e) => panic!("{e}"),
            }
        }
        assert!(prev.is_finite());
    }

    #[test]
    fn random_search_on_singleton_space() {
        let s = toy(&[0.1], 4);
        let sp = SearchSpace::new(vec![1e-3], vec![4], Encoding::PerDevice).unwrap();
        let sol = random_search(&s, &sp, 5, 0).unwrap();
        assert_eq!(sol.plan.devices[0], DevicePlan { ttis: vec![1e-3], subchannels: 4 });
        assert!(random_search(&s, &sp, 0, 0).is_err());
    }

    #[test]
    fn local_search_properties() {
        let s = toy(&[0.3, 0.1, 0.45], 12);
        let sp = SearchSpace::new(SearchSpace::tti_grid(5e-3, 10), (1..=12).collect(), Encoding::PerDevice).unwrap();
        let lte = fixed_tti_plan(&s, 1e-3).unwrap();
        let lte_obj = delaymodel::average_ota_delay(&s, &lte).unwrap();
        let same = local_search(&s, &sp, &lte, 0, 1).unwrap();
        assert_eq!(same.plan, lte);
        assert_eq!(same.objective, lte_obj);
        let better = local_search(&s, &sp, &lte, 100, 1).unwrap();
        assert!(better.objective <= lte_obj);
        assert!(delaymodel::check_feasibility(&s, &better.plan).unwrap().all_ok());

        let opt = decomposed_search(&s, &sp, Exec::default()).unwrap();
        let stay = local_search(&s, &sp, &opt.plan, 50, 2).unwrap();
        assert_eq!(stay.plan, opt.plan);
        assert!(opt.objective <= better.objective * (1.0 + 1e-12));
    }

    #[test]
    fn grouped_encoding_roundtrip() {
        let s = toy(&[0.3, 0.3, 0.1, 0.05], 10);
        let sp = SearchSpace::per_group(&s, 5).unwrap();
        let units = sp.units(&s);
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].members, vec![2, 3]);
        let choices = vec![
            UnitChoice { ttis: vec![1], subch: 2 },
            UnitChoice { ttis: vec![0, 2], subch: 4 },
        ];
        let plan = sp.decode(&s, &units, &choices).unwrap();
        assert_eq!(plan.devices[2].subchannels, 2);
        assert_eq!(plan.devices[3].subchannels, 1);
        assert_eq!(plan.devices[0].subchannels, 3);
        assert_eq!(plan.devices[1].subchannels, 2);
        assert_eq!(sp.encode(&s, &units, &plan).unwrap(), choices);
        let mut bad = plan.clone();
        bad.devices[0].ttis[0] = 0.7e-3;
        assert!(sp.encode(&s, &units, &bad).is_err());
    }
}
