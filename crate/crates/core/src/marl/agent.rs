//! Hysteretic DQN agent with a FIFO replay buffer and a target network.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::mlp::{Gradient, Mlp};

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub online: Mlp,
    pub target: Mlp,
    pub replay: VecDeque<Experience>,
    pub capacity: usize,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl Agent {
    pub fn new(online: Mlp, capacity: usize, explore_rng: ChaCha8Rng, replay_rng: ChaCha8Rng) -> Self {
        Self {
            target: online.clone(),
            online,
            replay: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            explore_rng,
            replay_rng,
        }
    }

    pub fn action_count(&self) -> usize {
        self.online.output_dim()
    }

    pub fn greedy(&self, observation: &[f64]) -> Result<usize> {
        Ok(argmax(&self.online.forward(observation)?))
    }

    /// Uniform random action with probability `epsilon`, greedy otherwise.
    pub fn act(&mut self, observation: &[f64], epsilon: f64) -> Result<usize> {
        let explore = self.explore_rng.random::<f64>() < epsilon;
        if explore {
            Ok(self.explore_rng.random_range(0..self.action_count()))
        } else {
            self.greedy(observation)
        }
    }

    pub fn store(&mut self, e: Experience) {
        if self.replay.len() == self.capacity {
            self.replay.pop_front();
        }
        self.replay.push_back(e);
    }

    /// Uniform indices into the buffer, with replacement.
    pub fn sample_indices(&mut self, batch: usize) -> Vec<usize> {
        let n = self.replay.len();
        if n == 0 {
            return Vec::new();
        }
        (0..batch).map(|_| self.replay_rng.random_range(0..n)).collect()
    }

    pub fn sample(&mut self, batch: usize) -> Vec<Experience> {
        self.sample_indices(batch)
            .into_iter()
            .map(|i| self.replay[i].clone())
            .collect()
    }

    /// TD target `r + gamma * max_a' Q_target(s', a')`, bootstrapping only
    /// from non-terminal transitions.
    pub fn td_target(&self, e: &Experience, gamma: f64) -> Result<f64> {
        if e.terminal {
            return Ok(e.reward);
        }
        let next = self.target.forward(&e.next_observation)?;
        Ok(e.reward + gamma * next.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Parameter change for a batch: each sample contributes a gradient step
    /// on its squared TD error with rate `eta` when the error is non-negative
    /// and `beta` otherwise, averaged over the batch. Also returns the mean
    /// squared TD error and the per-sample errors.
    pub fn update_direction(&self, batch: &[Experience], gamma: f64, eta: f64, beta: f64) -> Result<(Gradient, f64, Vec<f64>)> {
        let mut step = Mlp::zeros(&self.online.sizes())?;
        let mut deltas = Vec::with_capacity(batch.len());
        let n = batch.len().max(1) as f64;
        for e in batch {
            let y = self.td_target(e, gamma)?;
            let (g, q) = self.online.gradient(&e.observation, y, e.action)?;
            let delta = y - q;
            let rate = if delta >= 0.0 { eta } else { beta };
            step.add_scaled(&g, -rate / n);
            deltas.push(delta);
        }
        let loss = deltas.iter().map(|d| d * d).sum::<f64>() / n;
        Ok((step, loss, deltas))
    }

    /// Applies one hysteretic update and returns the mean squared TD error.
    pub fn hysteretic_update(&mut self, batch: &[Experience], gamma: f64, eta: f64, beta: f64) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let (step, loss, _) = self.update_direction(batch, gamma, eta, beta)?;
        self.online.add_scaled(&step, 1.0);
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    fn agent(seed: u64) -> Agent {
        let mut r = rng::stream(seed, Stream::NetworkInit, 0);
        let net = Mlp::random(&[4, 16, 6], &mut r).unwrap();
        Agent::new(
            net,
            100,
            rng::stream(seed, Stream::Exploration, 0),
            rng::stream(seed, Stream::Replay, 0),
        )
    }

    fn exp(r: &mut ChaCha8Rng, terminal: bool) -> Experience {
        let obs = |r: &mut ChaCha8Rng| (0..4).map(|_| r.random_range(0.0..1.0)).collect::<Vec<f64>>();
        Experience {
            observation: obs(r),
            action: r.random_range(0..6),
            reward: r.random_range(-3.0..0.0),
            next_observation: obs(r),
            terminal,
        }
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut a = agent(1);
        let obs = [0.1, 0.2, 0.3, 0.4];
        let n = 12_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[a.act(&obs, 1.0).unwrap()] += 1;
        }
        let expect = n as f64 / 6.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 99.9% quantile of chi-square with 5 degrees of freedom
        assert!(chi2 < 20.52, "chi2 {chi2}");
    }

    #[test]
    fn greedy_follows_dominant_output_and_ignores_offsets() {
        let mut a = agent(2);
        for l in &mut a.online.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        a.online.layers[1].bias[4] = 1.0;
        let obs = [0.5; 4];
        for _ in 0..100 {
            assert_eq!(a.act(&obs, 0.0).unwrap(), 4);
        }
        let b = agent(3);
        let q = b.online.forward(&obs).unwrap();
        let shifted: Vec<f64> = q.iter().map(|v| v + 17.0).collect();
        assert_eq!(argmax(&q), argmax(&shifted));
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn replay_is_fifo_and_uniform() {
        let mut a = agent(4);
        a.capacity = 5;
        let mut r = rng::stream(0, Stream::Replay, 9);
        for i in 0..8 {
            let mut e = exp(&mut r, true);
            e.action = i % 6;
            e.reward = i as f64;
            a.store(e);
        }
        assert_eq!(a.replay.len(), 5);
        assert_eq!(a.replay.front().unwrap().reward, 3.0);
        assert_eq!(a.replay.back().unwrap().reward, 7.0);

        let draws = 100_000;
        let mut counts = [0usize; 5];
        for i in a.sample_indices(draws) {
            counts[i] += 1;
        }
        let expect = draws as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 99.9% quantile with 4 degrees of freedom
        assert!(chi2 < 18.47, "chi2 {chi2}");
    }

    #[test]
    fn equal_rates_reduce_to_plain_dqn() {
        let mut r = rng::stream(5, Stream::Replay, 1);
        let batch: Vec<Experience> = (0..16).map(|i| exp(&mut r, i % 3 == 0)).collect();
        let mut h = agent(5);
        let mut plain = agent(5);
        for _ in 0..10 {
            h.hysteretic_update(&batch, 0.9, 0.01, 0.01).unwrap();
            // plain DQN: one gradient step at rate eta on the mean squared TD error
            let mut step = Mlp::zeros(&plain.online.sizes()).unwrap();
            for e in &batch {
                let y = plain.td_target(e, 0.9).unwrap();
                let (g, _) = plain.online.gradient(&e.observation, y, e.action).unwrap();
                step.add_scaled(&g, -0.01 / 16.0);
            }
            plain.online.add_scaled(&step, 1.0);
        }
        assert_eq!(h.online, plain.online);
    }

    #[test]
    fn negative_errors_are_scaled_by_rate_ratio() {
        let mut r = rng::stream(6, Stream::Replay, 1);
        let batch: Vec<Experience> = (0..24).map(|_| exp(&mut r, false)).collect();
        let a = agent(6);
        let (eta, beta) = (0.01, 0.001);
        let (step, _, deltas) = a.update_direction(&batch, 0.9, eta, beta).unwrap();
        assert!(deltas.iter().any(|d| *d < 0.0) && deltas.iter().any(|d| *d >= 0.0));
        let mut manual = Mlp::zeros(&a.online.sizes()).unwrap();
        for (e, d) in batch.iter().zip(&deltas) {
            let y = a.td_target(e, 0.9).unwrap();
            let (g, _) = a.online.gradient(&e.observation, y, e.action).unwrap();
            let scale = if *d < 0.0 { beta / eta } else { 1.0 };
            manual.add_scaled(&g, -eta * scale / 24.0);
        }
        for (x, y) in step.parameters().zip(manual.parameters()) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1e-12), "{x} vs {y}");
        }

        // an all-negative batch moves beta/eta as far as the symmetric run
        let mut neg: Vec<Experience> = batch.clone();
        for e in &mut neg {
            e.terminal = true;
            e.reward = a.online.forward(&e.observation).unwrap()[e.action] - 5.0;
        }
        let (h, _, d) = a.update_direction(&neg, 0.9, eta, beta).unwrap();
        assert!(d.iter().all(|x| *x < 0.0));
        let (s, _, _) = a.update_direction(&neg, 0.9, eta, eta).unwrap();
        let norm = |m: &Mlp| m.parameters().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm(&h) / norm(&s) - beta / eta).abs() < 1e-12);
    }

    #[test]
    fn supervised_limit_pulls_toward_reward() {
        let mut a = agent(7);
        let mut r = rng::stream(7, Stream::Replay, 2);
        let mut e = exp(&mut r, true);
        let before = a.online.forward(&e.observation).unwrap()[e.action];
        e.reward = before + 1.0;
        a.hysteretic_update(std::slice::from_ref(&e), 0.0, 0.01, 0.001).unwrap();
        let after = a.online.forward(&e.observation).unwrap()[e.action];
        assert!(after > before && after < e.reward);
    }

    #[test]
    fn target_sync_and_staleness() {
        let mut a = agent(8);
        let mut r = rng::stream(8, Stream::Replay, 3);
        let batch: Vec<Experience> = (0..8).map(|_| exp(&mut r, false)).collect();
        let frozen = a.target.clone();
        a.hysteretic_update(&batch, 0.9, 0.01, 0.001).unwrap();
        assert_eq!(a.target, frozen);
        assert_ne!(a.online, frozen);
        a.sync_target();
        let probe = [0.3, 0.1, 0.9, 0.5];
        assert_eq!(a.target.forward(&probe).unwrap(), a.online.forward(&probe).unwrap());
        let once = a.target.clone();
        a.sync_target();
        assert_eq!(a.target, once);
    }
}
