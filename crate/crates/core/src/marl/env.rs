//! Episodic allocation environment.
//!
//! One agent per group. At step `l` every agent picks a (TTI level,
//! subchannel option) pair; the TTI sets packet position `l` of all its
//! members (ignored past the group's queue length) and the subchannel option,
//! read only at the first step, fixes the group's total subchannels. The
//! episode ends after the longest queue is covered and the completed plan is
//! priced in a single terminal reward.

use serde::Serialize;

use crate::baselines::split_even;
use crate::delaymodel::{self, BlocklengthPlan, DevicePlan, Scenario};
use crate::error::{Error, Result};

use super::{Group, MarlConfig};

pub const OBSERVATION_DIM: usize = 4;

/// Reward weights and the delay charged to a device whose link cannot work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    pub delay_cap: f64,
}

impl RewardWeights {
    pub fn resolve(cfg: &MarlConfig, scenario: &Scenario, groups: usize) -> Self {
        Self {
            omega1: cfg.omega1,
            omega2: cfg.omega2,
            omega3: cfg.omega3.unwrap_or(cfg.omega1 * scenario.period * groups as f64),
            delay_cap: cfg.delay_cap.unwrap_or(10.0 * scenario.period),
        }
    }
}

/// Pricing of a completed plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    #[serde(skip)]
    pub plan: BlocklengthPlan,
    /// Per-device delay, seconds (capped where the link is dead).
    pub device_delay: Vec<f64>,
    /// Each group's share of the average delay, seconds.
    pub group_delay: Vec<f64>,
    /// Average delay, seconds; equals the delay model's average for valid plans.
    pub average_delay: f64,
    pub transmission_failure: Vec<bool>,
    pub subchannel_overuse: bool,
    pub remaining_subchannels: i64,
    /// Global reward.
    pub reward: f64,
    /// Per-agent reward (the global reward for cooperative agents).
    pub agent_rewards: Vec<f64>,
    pub feasible: bool,
}

/// Prices a completed plan given each group's TTIs and subchannel total.
pub fn evaluate_groups(
    scenario: &Scenario,
    groups: &[Group],
    ttis: &[Vec<f64>],
    totals: &[u32],
    weights: &RewardWeights,
    cooperative: bool,
) -> Result<Evaluation> {
    if ttis.len() != groups.len() || totals.len() != groups.len() {
        return Err(Error::Shape {
            expected: groups.len(),
            got: ttis.len().min(totals.len()),
        });
    }
    let k_count = scenario.device_count().max(1) as f64;
    let p_one = scenario.p_one();
    let mut devices = vec![
        DevicePlan {
            ttis: Vec::new(),
            subchannels: 0,
        };
        scenario.device_count()
    ];
    let mut device_delay = vec![0.0; scenario.device_count()];
    let mut group_delay = vec![0.0; groups.len()];
    let mut failure = vec![false; groups.len()];
    let mut valid = true;
    for (g, group) in groups.iter().enumerate() {
        let seq = &ttis[g][..group.queue_len];
        for (&k, share) in group.members.iter().zip(split_even(totals[g], group.members.len())) {
            devices[k] = DevicePlan {
                ttis: seq.to_vec(),
                subchannels: share,
            };
            let delay = if share == 0 {
                None
            } else {
                delaymodel::device_delay_for(scenario, k, seq, share, p_one).ok().map(|d| d.total)
            };
            let ok = share > 0 && {
                let f = delaymodel::device_feasibility(scenario, k, seq, share);
                f.period_ok && f.rate_ok
            };
            if delay.is_none() {
                valid = false;
            }
            failure[g] |= !ok || delay.is_none();
            let d = delay.unwrap_or(weights.delay_cap);
            device_delay[k] = d;
            group_delay[g] += d / k_count;
        }
    }
    let plan = BlocklengthPlan { devices };
    let average_delay = if valid {
        delaymodel::average_ota_delay(scenario, &plan)?
    } else {
        device_delay.iter().sum::<f64>() / k_count
    };
    let used: i64 = totals.iter().map(|&t| t as i64).sum();
    let remaining = scenario.subchannel_count as i64 - used;
    let overuse = remaining < 0 || (scenario.strict_subchannels && remaining != 0);
    let z3 = if overuse { weights.omega3 } else { 0.0 };
    let fail_count = failure.iter().filter(|&&f| f).count() as f64;
    let reward = weights.omega1 * average_delay + weights.omega2 * fail_count + z3;
    let agent_rewards = if cooperative {
        vec![reward; groups.len()]
    } else {
        (0..groups.len())
            .map(|g| {
                let own = group_delay[g] * k_count / groups[g].members.len() as f64;
                weights.omega1 * own + weights.omega2 * failure[g] as u8 as f64 + z3
            })
            .collect()
    };
    Ok(Evaluation {
        plan,
        device_delay,
        group_delay,
        average_delay,
        feasible: !overuse && fail_count == 0.0,
        transmission_failure: failure,
        subchannel_overuse: overuse,
        remaining_subchannels: remaining,
        reward,
        agent_rewards,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub evaluation: Option<Evaluation>,
}

pub struct Env<'a> {
    scenario: &'a Scenario,
    groups: Vec<Group>,
    tti_levels: Vec<f64>,
    subch_options: Vec<u32>,
    weights: RewardWeights,
    cooperative: bool,
    max_len: usize,
    step: usize,
    ttis: Vec<Vec<f64>>,
    totals: Vec<u32>,
    remaining: i64,
}

impl<'a> Env<'a> {
    pub fn new(
        scenario: &'a Scenario,
        groups: Vec<Group>,
        tti_levels: Vec<f64>,
        subch_options: Vec<u32>,
        weights: RewardWeights,
        cooperative: bool,
    ) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::config("groups", "no active devices to allocate"));
        }
        if tti_levels.is_empty() || subch_options.is_empty() {
            return Err(Error::config("actions", "empty action space"));
        }
        let max_len = groups.iter().map(|g| g.queue_len).max().unwrap_or(0);
        let mut env = Self {
            scenario,
            groups,
            tti_levels,
            subch_options,
            weights,
            cooperative,
            max_len,
            step: 0,
            ttis: Vec::new(),
            totals: Vec::new(),
            remaining: 0,
        };
        env.reset();
        Ok(env)
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn action_count(&self) -> usize {
        self.tti_levels.len() * self.subch_options.len()
    }

    /// `(tti level index, subchannel option index)` of a flat action.
    pub fn split_action(&self, action: usize) -> (usize, usize) {
        (action / self.subch_options.len(), action % self.subch_options.len())
    }

    pub fn episode_len(&self) -> usize {
        self.max_len
    }

    /// 1-based packet position the next action will set.
    pub fn position(&self) -> usize {
        self.step + 1
    }

    pub fn remaining_subchannels(&self) -> i64 {
        self.remaining
    }

    pub fn reset(&mut self) -> Vec<Vec<f64>> {
        self.step = 0;
        self.ttis = vec![Vec::with_capacity(self.max_len); self.groups.len()];
        self.totals = vec![0; self.groups.len()];
        self.remaining = self.scenario.subchannel_count as i64;
        self.observations()
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        let scale = self.max_len as f64;
        let remaining = (self.remaining as f64 / self.scenario.subchannel_count as f64).clamp(0.0, 1.0);
        let position = (self.position() as f64 / scale).min(1.0);
        self.groups
            .iter()
            .map(|g| {
                vec![
                    (g.mean_rate * self.scenario.period / scale).min(1.0),
                    g.queue_len as f64 / scale,
                    remaining,
                    position,
                ]
            })
            .collect()
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if actions.len() != self.groups.len() {
            return Err(Error::Shape {
                expected: self.groups.len(),
                got: actions.len(),
            });
        }
        if self.step >= self.max_len {
            return Err(Error::config("step", "episode already finished"));
        }
        for &a in actions {
            if a >= self.action_count() {
                return Err(Error::Index {
                    what: "action",
                    index: a,
                    lo: 0,
                    hi: self.action_count() - 1,
                });
            }
        }
        let l = self.step;
        for (g, &a) in actions.iter().enumerate() {
            let (t, s) = self.split_action(a);
            if l < self.groups[g].queue_len {
                self.ttis[g].push(self.tti_levels[t]);
            }
            if l == 0 {
                self.totals[g] = self.subch_options[s];
            }
        }
        if l == 0 {
            self.remaining -= self.totals.iter().map(|&t| t as i64).sum::<i64>();
        }
        self.step += 1;
        let done = self.step == self.max_len;
        let (rewards, evaluation) = if done {
            let e = evaluate_groups(self.scenario, &self.groups, &self.ttis, &self.totals, &self.weights, self.cooperative)?;
            (e.agent_rewards.clone(), Some(e))
        } else {
            (vec![0.0; self.groups.len()], None)
        };
        Ok(StepOutcome {
            observations: self.observations(),
            rewards,
            done,
            evaluation,
        })
    }
}
