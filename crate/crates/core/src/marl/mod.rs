//! Cooperative multi-agent DQN for blocklength allocation.
//!
//! Devices with the same queue length form a group driven by one agent. Agents
//! share a global reward and learn with hysteretic updates: positive TD errors
//! at rate `eta`, negative ones at the smaller rate `beta`.

pub mod agent;
pub mod env;
pub mod mlp;

use serde::{Deserialize, Serialize};

use crate::baselines::{queue_groups, SearchSpace};
use crate::delaymodel::Scenario;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

use agent::{Agent, Experience};
use env::{Env, Evaluation, RewardWeights, OBSERVATION_DIM};
use mlp::Mlp;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Group {
    pub members: Vec<usize>,
    pub queue_len: usize,
    /// Mean arrival rate of the members, packets/s.
    pub mean_rate: f64,
}

/// Active devices grouped by queue length, ascending.
pub fn group_devices(scenario: &Scenario) -> Vec<Group> {
    queue_groups(scenario)
        .into_iter()
        .map(|u| Group {
            mean_rate: u.members.iter().map(|&k| scenario.devices[k].rate).sum::<f64>() / u.members.len() as f64,
            members: u.members,
            queue_len: u.queue_len,
        })
        .collect()
}

/// One group per active device, for the independent-learner comparison.
pub fn singleton_groups(scenario: &Scenario) -> Vec<Group> {
    scenario
        .active_devices()
        .into_iter()
        .map(|k| Group {
            members: vec![k],
            queue_len: scenario.max_queue_length(k),
            mean_rate: scenario.devices[k].rate,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarlConfig {
    pub gamma: f64,
    pub eta: f64,
    pub beta: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly; `None` means all episodes.
    pub epsilon_decay_episodes: Option<usize>,
    pub omega1: f64,
    pub omega2: f64,
    /// `None` means `omega1 * T_max * G`.
    pub omega3: Option<f64>,
    /// Delay charged to a device whose link cannot work; `None` means `10 T_max`.
    pub delay_cap: Option<f64>,
    pub tti_levels: usize,
    /// Group subchannel totals; `None` means up to 20 evenly spaced values in `1..=M_Subc`.
    pub subch_options: Option<Vec<u32>>,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync_period: usize,
    pub episodes: usize,
    pub hidden_layers: Vec<usize>,
    /// One agent per device with its own reward instead of cooperative groups.
    pub independent: bool,
    /// Regress every step on the discounted episode return instead of the
    /// one-step TD target. The observation does not record earlier TTIs, so
    /// one-step bootstrapping cannot credit them.
    pub episode_return_targets: bool,
}

impl Default for MarlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            eta: 0.01,
            beta: 0.001,
            epsilon_start: 0.99,
            epsilon_end: 0.05,
            epsilon_decay_episodes: None,
            omega1: -1000.0,
            omega2: -1.0,
            omega3: None,
            delay_cap: None,
            tti_levels: 10,
            subch_options: None,
            replay_capacity: 10_000,
            batch_size: 32,
            target_sync_period: 200,
            episodes: 2000,
            hidden_layers: vec![64, 64],
            independent: false,
            episode_return_targets: false,
        }
    }
}

impl MarlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(f, m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if !(self.beta > 0.0 && self.eta > self.beta) {
            return bad("eta", "learning rates need eta > beta > 0");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon_start", "exploration probabilities must lie in [0, 1]");
        }
        if self.omega1 > 0.0 || self.omega2 > 0.0 || self.omega3.is_some_and(|w| w > 0.0) {
            return bad("omega1", "reward weights must be non-positive");
        }
        if self.tti_levels == 0 {
            return bad("tti_levels", "must be positive");
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.target_sync_period == 0 {
            return bad("batch_size", "replay capacity, batch size and sync period must be positive");
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden_layers", "layer sizes must be positive");
        }
        if let Some(o) = &self.subch_options {
            if o.is_empty() || o[0] == 0 || o.windows(2).any(|w| w[0] >= w[1]) {
                return bad("subch_options", "must be >= 1 and strictly increasing");
            }
        }
        Ok(())
    }

    pub fn resolved_subch_options(&self, scenario: &Scenario) -> Vec<u32> {
        if let Some(o) = &self.subch_options {
            return o.clone();
        }
        let m = scenario.subchannel_count;
        let steps = m.min(20);
        let mut out: Vec<u32> = (1..=steps)
            .map(|i| ((m as u64 * i as u64 + steps as u64 / 2) / steps as u64).max(1) as u32)
            .collect();
        out.dedup();
        out
    }

    /// Linear decay from start to end, then constant.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let span = self.epsilon_decay_episodes.unwrap_or(self.episodes).max(1);
        if span <= 1 {
            return self.epsilon_end;
        }
        if episode >= span - 1 {
            return self.epsilon_end;
        }
        let f = episode as f64 / (span - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub epsilon: f64,
    /// Global terminal reward.
    pub reward: f64,
    /// Average delay of the episode's plan, seconds.
    pub delay: f64,
    pub feasible: bool,
    /// Mean squared TD error over the episode's updates.
    pub loss: f64,
}

/// Trained agents, learning curve and the greedy policy's plan.
#[derive(Debug, Clone)]
pub struct MarlRun {
    pub groups: Vec<Group>,
    pub tti_levels: Vec<f64>,
    pub subch_options: Vec<u32>,
    pub agents: Vec<Agent>,
    pub curve: Vec<EpisodeRecord>,
    /// Greedy rollout after training.
    pub greedy: Evaluation,
    /// Feasible episode plan with the highest reward seen during training.
    pub best: Option<Evaluation>,
}

impl MarlRun {
    /// Average delay of the greedy plan, seconds.
    pub fn objective(&self) -> f64 {
        self.greedy.average_delay
    }
}

/// Moving average with the given window (shorter at the start).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

fn rollout(env: &mut Env<'_>, agents: &mut [Agent], epsilon: Option<f64>) -> Result<(Vec<Vec<Experience>>, Evaluation)> {
    let mut obs = env.reset();
    let mut trace = vec![Vec::new(); agents.len()];
    loop {
        let actions = agents
            .iter_mut()
            .zip(&obs)
            .map(|(a, o)| match epsilon {
                Some(e) => a.act(o, e),
                None => a.greedy(o),
            })
            .collect::<Result<Vec<_>>>()?;
        let out = env.step(&actions)?;
        for (g, t) in trace.iter_mut().enumerate() {
            t.push(Experience {
                observation: obs[g].clone(),
                action: actions[g],
                reward: out.rewards[g],
                next_observation: out.observations[g].clone(),
                terminal: out.done,
            });
        }
        if let Some(e) = out.evaluation {
            return Ok((trace, e));
        }
        obs = out.observations;
    }
}

/// Rewrites a trace so each step carries its discounted return as a terminal reward.
pub fn to_episode_returns(trace: &mut [Experience], gamma: f64) {
    let mut g = 0.0;
    for e in trace.iter_mut().rev() {
        g = e.reward + gamma * g;
        e.reward = g;
        e.terminal = true;
    }
}

/// Runs the full training loop and returns the greedy policy's plan.
pub fn train(scenario: &Scenario, cfg: &MarlConfig, seed: u64) -> Result<MarlRun> {
    cfg.validate()?;
    scenario.validate()?;
    let groups = if cfg.independent {
        singleton_groups(scenario)
    } else {
        group_devices(scenario)
    };
    if groups.is_empty() {
        return Err(Error::config("devices", "no device has a packet to send"));
    }
    let tti_levels = SearchSpace::tti_grid(scenario.period, cfg.tti_levels);
    let subch_options = cfg.resolved_subch_options(scenario);
    let weights = RewardWeights::resolve(cfg, scenario, groups.len());
    let mut env = Env::new(
        scenario,
        groups.clone(),
        tti_levels.clone(),
        subch_options.clone(),
        weights,
        !cfg.independent,
    )?;
    let mut sizes = vec![OBSERVATION_DIM];
    sizes.extend(&cfg.hidden_layers);
    sizes.push(env.action_count());
    let mut agents = (0..groups.len())
        .map(|g| {
            let mut init = rng::stream(seed, Stream::NetworkInit, g as u64);
            Ok(Agent::new(
                Mlp::random(&sizes, &mut init)?,
                cfg.replay_capacity,
                rng::stream(seed, Stream::Exploration, g as u64),
                rng::stream(seed, Stream::Replay, g as u64),
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut best: Option<Evaluation> = None;
    let mut updates = 0usize;
    for episode in 0..cfg.episodes {
        let epsilon = cfg.epsilon_at(episode);
        let (mut trace, eval) = rollout(&mut env, &mut agents, Some(epsilon))?;
        let steps = trace[0].len();
        if cfg.episode_return_targets {
            for t in trace.iter_mut() {
                to_episode_returns(t, cfg.gamma);
            }
        }
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for l in 0..steps {
            for (g, agent) in agents.iter_mut().enumerate() {
                agent.store(trace[g][l].clone());
            }
            for agent in agents.iter_mut() {
                if agent.replay.len() < cfg.batch_size {
                    continue;
                }
                let batch = agent.sample(cfg.batch_size);
                loss_sum += agent.hysteretic_update(&batch, cfg.gamma, cfg.eta, cfg.beta)?;
                loss_n += 1;
            }
            if agents[0].replay.len() >= cfg.batch_size {
                updates += 1;
                if updates % cfg.target_sync_period == 0 {
                    agents.iter_mut().for_each(Agent::sync_target);
                }
            }
        }
        if eval.feasible && best.as_ref().is_none_or(|b| eval.reward > b.reward) {
            best = Some(eval.clone());
        }
        curve.push(EpisodeRecord {
            episode,
            epsilon,
            reward: eval.reward,
            delay: eval.average_delay,
            feasible: eval.feasible,
            loss: if loss_n == 0 { 0.0 } else { loss_sum / loss_n as f64 },
        });
    }
    let (_, greedy) = rollout(&mut env, &mut agents, None)?;
    Ok(MarlRun {
        groups,
        tti_levels,
        subch_options,
        agents,
        curve,
        greedy,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaymodel::{self, DeviceProfile};

    fn scenario(loads: &[f64]) -> Scenario {
        Scenario {
            devices: loads
                .iter()
                .enumerate()
                .map(|(i, l)| DeviceProfile {
                    rate: l / 5e-3,
                    distance: 100.0 + 40.0 * i as f64,
                })
                .collect(),
            preamble_count: 10,
            subchannel_count: 20,
            ..Scenario::default()
        }
    }

    #[test]
    fn episode_returns_discount_backwards() {
        let step = |reward: f64| Experience {
            observation: vec![0.0],
            action: 0,
            reward,
            next_observation: vec![0.0],
            terminal: false,
        };
        let mut trace = vec![step(1.0), step(2.0), step(4.0)];
        to_episode_returns(&mut trace, 0.5);
        let got: Vec<f64> = trace.iter().map(|e| e.reward).collect();
        assert_eq!(got, vec![1.0 + 0.5 * (2.0 + 0.5 * 4.0), 2.0 + 0.5 * 4.0, 4.0]);
        assert!(trace.iter().all(|e| e.terminal));
    }

    #[test]
    fn grouping_examples() {
        let g = group_devices(&scenario(&[0.5, 0.9, 2.2]));
        assert_eq!(g.len(), 2);
        assert_eq!((g[0].queue_len, g[0].members.clone()), (1, vec![0, 1]));
        assert_eq!((g[1].queue_len, g[1].members.clone()), (3, vec![2]));
        let mut idle = scenario(&[0.5]);
        idle.devices[0].rate = 0.0;
        assert!(group_devices(&idle).is_empty());
        let same = group_devices(&scenario(&[1.5; 4]));
        assert_eq!(same.len(), 1);
        assert_eq!(same[0].members.len(), 4);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = MarlConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!((c.gamma, c.eta, c.beta), (0.9, 0.01, 0.001));
        assert_eq!(c.epsilon_at(0), 0.99);
        assert_eq!(c.epsilon_at(c.episodes - 1), 0.05);
        assert_eq!(c.epsilon_at(10 * c.episodes), 0.05);
        assert!(MarlConfig { beta: 0.02, ..c.clone() }.validate().is_err());
        assert!(MarlConfig { omega2: 1.0, ..c.clone() }.validate().is_err());
        let s = Scenario::default();
        let o = c.resolved_subch_options(&s);
        assert_eq!(o.len(), 20);
        assert_eq!((o[0], o[19]), (100, 2000));
        assert_eq!(c.resolved_subch_options(&scenario(&[1.0])), (1..=20).collect::<Vec<_>>());
    }

    #[test]
    fn smoothing() {
        assert_eq!(smoothed(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }

    fn small_cfg() -> MarlConfig {
        MarlConfig {
            episodes: 60,
            tti_levels: 5,
            hidden_layers: vec![16],
            batch_size: 8,
            target_sync_period: 20,
            ..MarlConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_rescorable() {
        let s = scenario(&[0.5, 0.9, 2.2]);
        let a = train(&s, &small_cfg(), 11).unwrap();
        let b = train(&s, &small_cfg(), 11).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.greedy, b.greedy);
        assert_eq!(a.curve.len(), 60);
        if a.greedy.feasible {
            let d = delaymodel::average_ota_delay(&s, &a.greedy.plan).unwrap();
            assert_eq!(d, a.greedy.average_delay);
        }
        let fails = a.greedy.transmission_failure.iter().filter(|&&f| f).count() as f64;
        let w = RewardWeights::resolve(&small_cfg(), &s, a.groups.len());
        let z3 = if a.greedy.subchannel_overuse { w.omega3 } else { 0.0 };
        assert_eq!(a.greedy.reward, w.omega1 * a.greedy.average_delay + w.omega2 * fails + z3);
    }

    #[test]
    fn independent_mode_uses_one_agent_per_device() {
        let s = scenario(&[0.5, 0.9, 2.2]);
        let run = train(&s, &MarlConfig { independent: true, ..small_cfg() }, 3).unwrap();
        assert_eq!(run.agents.len(), 3);
    }
}
