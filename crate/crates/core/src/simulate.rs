//! Seeded Monte-Carlo engine for the per-device queue chains.
//!
//! Model mode steps every device's chain independently, drawing collisions
//! with the all-contend probability. Protocol mode plays global rounds in
//! which only devices with queued packets pick preambles, so collisions
//! follow the actual number of contenders.
//!
//! Delay is estimated by plugging the empirical occupancy and the empirical
//! attempts per departure of each state into the delay decomposition used by
//! the analytic model. Standard errors come from batch means.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delaymodel::{BlocklengthPlan, PacketStats, Scenario};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::queueing::{self, QueueChain};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Model,
    Protocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: SimMode,
    /// Chain steps (model mode) or contention rounds (protocol mode), warmup included.
    pub steps: u64,
    pub seed: u64,
    /// Discarded leading steps; `None` means 10% of `steps`.
    pub warmup: Option<u64>,
    /// Batches for the batch-means standard error.
    pub batches: u32,
    /// Refill queues as soon as they empty so every device always contends.
    pub force_active: bool,
    /// Histogram bins for attempts per packet; the last bin collects overflow.
    pub histogram_bins: usize,
}

impl SimConfig {
    pub fn new(mode: SimMode, steps: u64, seed: u64) -> Self {
        Self {
            mode,
            steps,
            seed,
            warmup: None,
            batches: 20,
            force_active: false,
            histogram_bins: 32,
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        self.warmup.unwrap_or(self.steps / 10)
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be positive"));
        }
        if self.batches == 0 {
            return Err(Error::config("batches", "must be positive"));
        }
        if self.histogram_bins == 0 {
            return Err(Error::config("histogram_bins", "must be positive"));
        }
        let recorded = self.steps.saturating_sub(self.warmup_steps());
        if recorded < self.batches as u64 {
            return Err(Error::config("warmup", "leaves fewer recorded steps than batches"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceSimStats {
    /// Empirical state occupancy after warmup.
    pub occupancy: Vec<f64>,
    /// Stationary vector of the analytic chain.
    pub analytic: Vec<f64>,
    pub tv_distance: f64,
    /// Empirical attempts per departure in each state `1..=M`.
    pub attempts_per_departure: Vec<f64>,
    pub mean_delay: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    pub mode: SimMode,
    pub seed: u64,
    pub recorded_steps: u64,
    pub devices: Vec<DeviceSimStats>,
    /// Scenario average of the per-device delay estimates, seconds.
    pub mean_delay: f64,
    pub std_error: f64,
    /// Attempts per packet; bin `i` counts `i + 1` attempts, the last bin overflow.
    pub retx_histogram: Vec<u64>,
    pub attempts: u64,
    pub collisions: u64,
    pub collision_rate: f64,
    /// Wall-clock length of the recorded rounds (protocol mode), seconds.
    pub simulated_time: f64,
}

/// Per-device counters, split into batches.
struct Tally {
    occupancy: Vec<Vec<u64>>,
    attempts: Vec<Vec<u64>>,
    departures: Vec<Vec<u64>>,
    run_attempts: u64,
}

impl Tally {
    fn new(batches: usize, states: usize) -> Self {
        Self {
            occupancy: vec![vec![0; states]; batches],
            attempts: vec![vec![0; states]; batches],
            departures: vec![vec![0; states]; batches],
            run_attempts: 0,
        }
    }
}

/// Everything about one device that stays fixed through a run.
struct DeviceSetup {
    chain: Option<QueueChain>,
    stats: Option<PacketStats>,
    overhead: f64,
    ttis: Vec<f64>,
}

impl DeviceSetup {
    fn max_len(&self) -> usize {
        self.ttis.len()
    }

    fn states(&self) -> usize {
        self.ttis.len() + 1
    }
}

fn setup(scenario: &Scenario, plan: &BlocklengthPlan) -> Result<Vec<DeviceSetup>> {
    scenario.validate()?;
    plan.validate(scenario)?;
    let p_one = scenario.p_one();
    (0..scenario.device_count())
        .map(|k| {
            let d = &plan.devices[k];
            let overhead = scenario.access_overhead(k);
            if d.ttis.is_empty() {
                return Ok(DeviceSetup {
                    chain: None,
                    stats: None,
                    overhead,
                    ttis: Vec::new(),
                });
            }
            let stats = crate::delaymodel::packet_stats_for(scenario, k, &d.ttis, d.subchannels, p_one)?;
            let chain = queueing::build_chain(&scenario.arrival_model(k), &stats.p_suc, scenario.tail_mode)
                .map_err(|e| match e {
                    Error::InfeasibleLink { packet, .. } => Error::InfeasibleLink { device: k, packet },
                    other => other,
                })?;
            Ok(DeviceSetup {
                chain: Some(chain),
                stats: Some(stats),
                overhead,
                ttis: d.ttis.clone(),
            })
        })
        .collect()
}

fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver of mass past the last bin
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn batch_of(step: u64, warmup: u64, recorded: u64, batches: u64) -> usize {
    (((step - warmup) as u128 * batches as u128) / recorded as u128) as usize
}

/// Mutable per-device state during a run.
struct Walker {
    state: usize,
    head_attempts: u64,
    rng: ChaCha8Rng,
    tally: Tally,
}

fn record_departure(hist: &mut [u64], attempts: u64) {
    let bin = (attempts as usize - 1).min(hist.len() - 1);
    hist[bin] += 1;
}

/// Idle step: draw the batch that arrives during the period.
fn idle_step(dev: &DeviceSetup, w: &mut Walker, force_active: bool) {
    let chain = dev.chain.as_ref().expect("active device");
    w.state = if force_active {
        dev.max_len()
    } else {
        sample_row(chain.row(0), w.rng.random())
    };
    w.head_attempts = 0;
}

/// State after a departure from `m`; forced devices refill instead of idling.
fn next_state(dev: &DeviceSetup, m: usize, force_active: bool) -> usize {
    if force_active && m == 1 {
        dev.max_len()
    } else {
        m - 1
    }
}

fn initial_state(dev: &DeviceSetup, force_active: bool) -> usize {
    if force_active {
        dev.max_len()
    } else {
        0
    }
}

/// Model-mode run of one device over all steps.
fn walk_model(dev: &DeviceSetup, cfg: &SimConfig, p_one: f64, index: usize) -> (Tally, Vec<u64>, u64) {
    let warmup = cfg.warmup_steps();
    let recorded = cfg.steps - warmup;
    let batches = cfg.batches as u64;
    let mut hist = vec![0u64; cfg.histogram_bins];
    let mut collisions = 0u64;
    let mut w = Walker {
        state: initial_state(dev, cfg.force_active),
        head_attempts: 0,
        rng: rng::stream(cfg.seed, Stream::Simulation, index as u64),
        tally: Tally::new(cfg.batches as usize, dev.states()),
    };
    let Some(stats) = dev.stats.as_ref() else {
        w.tally.occupancy[0][0] = recorded;
        return (w.tally, hist, 0);
    };
    for step in 0..cfg.steps {
        let live = step >= warmup;
        let b = if live { batch_of(step, warmup, recorded, batches) } else { 0 };
        let m = w.state;
        if live {
            w.tally.occupancy[b][m] += 1;
        }
        if m == 0 {
            idle_step(dev, &mut w, cfg.force_active);
            continue;
        }
        w.head_attempts += 1;
        let collided = w.rng.random::<f64>() >= p_one;
        let ok = !collided && w.rng.random::<f64>() >= stats.p_err[m - 1];
        if live {
            w.tally.attempts[b][m] += 1;
            w.tally.run_attempts += 1;
            collisions += collided as u64;
        }
        if ok {
            if live {
                w.tally.departures[b][m] += 1;
                record_departure(&mut hist, w.head_attempts);
            }
            w.state = next_state(dev, m, cfg.force_active);
            w.head_attempts = 0;
        }
    }
    (w.tally, hist, collisions)
}

/// Plug-in delay estimate from occupancy and attempts-per-departure.
fn plug_in_delay(dev: &DeviceSetup, occupancy: &[f64], retx: &[f64]) -> f64 {
    let mut ahead = 0.0;
    let mut total = 0.0;
    for m in 1..dev.states() {
        let cost = dev.ttis[m - 1] + dev.overhead;
        total += occupancy[m] * ahead + cost * retx[m - 1];
        ahead += cost * retx[m - 1];
    }
    total
}

fn normalize(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

fn summed(rows: &[Vec<u64>]) -> Vec<u64> {
    let mut out = vec![0u64; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}

/// Attempts per departure for states `1..=M`, falling back to `fallback`
/// where no departure was observed.
fn retx_estimate(attempts: &[u64], departures: &[u64], fallback: &[f64]) -> Vec<f64> {
    (1..attempts.len())
        .map(|m| {
            if departures[m] > 0 {
                attempts[m] as f64 / departures[m] as f64
            } else {
                fallback[m - 1]
            }
        })
        .collect()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Reduces per-device tallies into the published statistics.
fn summarize(
    devices: &[DeviceSetup],
    tallies: &[Tally],
    cfg: &SimConfig,
    hist: Vec<u64>,
    collisions: u64,
    simulated_time: f64,
) -> SimStats {
    let batches = cfg.batches as usize;
    let k_count = devices.len().max(1) as f64;
    let mut batch_avg = vec![0.0; batches];
    let mut out = Vec::with_capacity(devices.len());
    let mut attempts = 0u64;
    for (dev, t) in devices.iter().zip(tallies) {
        attempts += t.run_attempts;
        let occ_counts = summed(&t.occupancy);
        let occupancy = normalize(&occ_counts);
        let analytic = dev.chain.as_ref().map(|c| c.steady.clone()).unwrap_or_else(|| vec![1.0]);
        let tv = queueing::tv_distance(&occupancy, &analytic);
        let Some(stats) = dev.stats.as_ref() else {
            out.push(DeviceSimStats {
                occupancy,
                analytic,
                tv_distance: tv,
                attempts_per_departure: Vec::new(),
                mean_delay: 0.0,
                std_error: 0.0,
            });
            continue;
        };
        let pooled = retx_estimate(&summed(&t.attempts), &summed(&t.departures), &stats.expected_retx);
        let per_batch: Vec<f64> = (0..batches)
            .map(|b| {
                let occ = normalize(&t.occupancy[b]);
                let retx = retx_estimate(&t.attempts[b], &t.departures[b], &pooled);
                plug_in_delay(dev, &occ, &retx)
            })
            .collect();
        for (acc, d) in batch_avg.iter_mut().zip(&per_batch) {
            *acc += d / k_count;
        }
        let (_, se) = mean_and_se(&per_batch);
        out.push(DeviceSimStats {
            mean_delay: plug_in_delay(dev, &occupancy, &pooled),
            std_error: se,
            occupancy,
            analytic,
            tv_distance: tv,
            attempts_per_departure: pooled,
        });
    }
    let mean_delay = if devices.is_empty() {
        0.0
    } else {
        out.iter().map(|d| d.mean_delay).sum::<f64>() / k_count
    };
    let (_, std_error) = mean_and_se(&batch_avg);
    SimStats {
        mode: cfg.mode,
        seed: cfg.seed,
        recorded_steps: cfg.steps - cfg.warmup_steps(),
        devices: out,
        mean_delay,
        std_error,
        retx_histogram: hist,
        attempts,
        collisions,
        collision_rate: if attempts == 0 { 0.0 } else { collisions as f64 / attempts as f64 },
        simulated_time,
    }
}

/// Independent per-device chains with all-contend collision probability.
pub fn run_model_mode(scenario: &Scenario, plan: &BlocklengthPlan, cfg: &SimConfig) -> Result<SimStats> {
    if cfg.mode != SimMode::Model {
        return Err(Error::config("mode", "run_model_mode needs mode = model"));
    }
    cfg.validate()?;
    let devices = setup(scenario, plan)?;
    let p_one = scenario.p_one();
    let mut tallies = Vec::with_capacity(devices.len());
    let mut hist = vec![0u64; cfg.histogram_bins];
    let mut collisions = 0;
    for (k, dev) in devices.iter().enumerate() {
        let (t, h, c) = walk_model(dev, cfg, p_one, k);
        tallies.push(t);
        for (a, b) in hist.iter_mut().zip(h) {
            *a += b;
        }
        collisions += c;
    }
    Ok(summarize(&devices, &tallies, cfg, hist, collisions, 0.0))
}

/// Global contention rounds among devices with queued packets.
///
/// Each round, idle devices draw their arrivals and every active device picks
/// a preamble uniformly. A preamble chosen by exactly one device is decoded
/// with the error probability of that device's head packet. The round lasts
/// the longest in-flight TTI plus access overhead; this only drives the clock.
pub fn run_protocol_mode(scenario: &Scenario, plan: &BlocklengthPlan, cfg: &SimConfig) -> Result<SimStats> {
    if cfg.mode != SimMode::Protocol {
        return Err(Error::config("mode", "run_protocol_mode needs mode = protocol"));
    }
    cfg.validate()?;
    let devices = setup(scenario, plan)?;
    let preambles = scenario.preamble_count as usize;
    let warmup = cfg.warmup_steps();
    let recorded = cfg.steps - warmup;
    let batches = cfg.batches as u64;
    let mut walkers: Vec<Walker> = devices
        .iter()
        .enumerate()
        .map(|(k, dev)| Walker {
            state: initial_state(dev, cfg.force_active),
            head_attempts: 0,
            rng: rng::stream(cfg.seed, Stream::Simulation, k as u64),
            tally: Tally::new(cfg.batches as usize, dev.states()),
        })
        .collect();
    let mut hist = vec![0u64; cfg.histogram_bins];
    let mut collisions = 0u64;
    let mut clock = 0.0;
    let mut picks: Vec<(usize, usize)> = Vec::with_capacity(devices.len());
    let mut use_count = vec![0u32; preambles];

    for step in 0..cfg.steps {
        let live = step >= warmup;
        let b = if live { batch_of(step, warmup, recorded, batches) } else { 0 };
        picks.clear();
        let mut slot = 0.0f64;
        for (k, (dev, w)) in devices.iter().zip(walkers.iter_mut()).enumerate() {
            if live {
                w.tally.occupancy[b][w.state] += 1;
            }
            if dev.chain.is_none() {
                continue;
            }
            if w.state == 0 {
                idle_step(dev, w, cfg.force_active);
                continue;
            }
            let p = w.rng.random_range(0..preambles);
            use_count[p] += 1;
            picks.push((k, p));
            slot = slot.max(dev.ttis[w.state - 1] + dev.overhead);
        }
        for &(k, p) in &picks {
            let (dev, w) = (&devices[k], &mut walkers[k]);
            let m = w.state;
            let stats = dev.stats.as_ref().expect("active device");
            let collided = use_count[p] > 1;
            let ok = !collided && w.rng.random::<f64>() >= stats.p_err[m - 1];
            w.head_attempts += 1;
            if live {
                w.tally.attempts[b][m] += 1;
                w.tally.run_attempts += 1;
                collisions += collided as u64;
            }
            if ok {
                if live {
                    w.tally.departures[b][m] += 1;
                    record_departure(&mut hist, w.head_attempts);
                }
                w.state = next_state(dev, m, cfg.force_active);
                w.head_attempts = 0;
            }
        }
        for &(_, p) in &picks {
            use_count[p] = 0;
        }
        if live {
            clock += slot;
        }
    }
    let tallies: Vec<Tally> = walkers.into_iter().map(|w| w.tally).collect();
    Ok(summarize(&devices, &tallies, cfg, hist, collisions, clock))
}

pub fn run(scenario: &Scenario, plan: &BlocklengthPlan, cfg: &SimConfig) -> Result<SimStats> {
    match cfg.mode {
        SimMode::Model => run_model_mode(scenario, plan, cfg),
        SimMode::Protocol => run_protocol_mode(scenario, plan, cfg),
    }
}

/// Runs independent jobs under the given execution policy, in input order.
pub fn run_many(jobs: &[(Scenario, BlocklengthPlan, SimConfig)], exec: Exec) -> Vec<Result<SimStats>> {
    exec.map(jobs, |(s, p, c)| run(s, p, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaymodel::{self, DeviceProfile, DevicePlan};
    use crate::linkmodel::RadioConstants;

    fn scenario(rates_per_ms: &[f64]) -> Scenario {
        Scenario {
            devices: rates_per_ms
                .iter()
                .enumerate()
                .map(|(i, r)| DeviceProfile {
                    rate: r * 1e3,
                    distance: 100.0 + 50.0 * (i % 8) as f64,
                })
                .collect(),
            preamble_count: 10,
            ..Scenario::default()
        }
    }

    fn uniform_plan(s: &Scenario, tti: f64, sub: u32) -> BlocklengthPlan {
        BlocklengthPlan {
            devices: (0..s.device_count())
                .map(|k| DevicePlan {
                    ttis: vec![tti; s.max_queue_length(k)],
                    subchannels: sub,
                })
                .collect(),
        }
    }

    #[test]
    fn perfect_link_single_device_never_retransmits() {
        let mut s = scenario(&[0.02]);
        s.constants = RadioConstants::new(1.0, 1e-12, 3.0, 1.0).unwrap();
        let p = uniform_plan(&s, 1e-3, 4);
        let st = run_model_mode(&s, &p, &SimConfig::new(SimMode::Model, 20_000, 1)).unwrap();
        assert!(st.retx_histogram[0] > 0);
        assert!(st.retx_histogram[1..].iter().all(|&c| c == 0));
        assert_eq!(st.collisions, 0);
    }

    #[test]
    fn model_mode_is_deterministic() {
        let s = scenario(&[0.3, 0.5, 0.1]);
        let p = uniform_plan(&s, 0.5e-3, 2);
        let cfg = SimConfig::new(SimMode::Model, 30_000, 99);
        let a = run(&s, &p, &cfg).unwrap();
        let b = run(&s, &p, &cfg).unwrap();
        assert_eq!(a, b);
        let c = run(&s, &p, &SimConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.mean_delay, c.mean_delay);
    }

    #[test]
    fn model_mode_matches_analytic_chain() {
        let s = scenario(&[0.5, 0.2]);
        let p = uniform_plan(&s, 0.5e-3, 2);
        let st = run_model_mode(&s, &p, &SimConfig::new(SimMode::Model, 300_000, 5)).unwrap();
        let rep = delaymodel::evaluate(&s, &p).unwrap();
        for (d, a) in st.devices.iter().zip(&rep.devices) {
            assert!(d.tv_distance < 0.02, "tv {}", d.tv_distance);
            assert!((d.occupancy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((d.mean_delay - a.total).abs() < 4.0 * d.std_error + 1e-12);
        }
        assert!(st.std_error.is_finite() && st.std_error > 0.0);
    }

    #[test]
    fn single_device_protocol_has_no_collisions() {
        let s = scenario(&[0.4]);
        let p = uniform_plan(&s, 1e-3, 3);
        let st = run_protocol_mode(&s, &p, &SimConfig::new(SimMode::Protocol, 10_000, 3)).unwrap();
        assert_eq!(st.collisions, 0);
        assert!(st.attempts > 0);
        assert!(st.simulated_time > 0.0);
    }

    #[test]
    fn forced_contention_matches_no_collision_probability() {
        let mut s = scenario(&[0.2; 40]);
        s.preamble_count = 20;
        let p = uniform_plan(&s, 1e-3, 4);
        let cfg = SimConfig {
            force_active: true,
            ..SimConfig::new(SimMode::Protocol, 5_000, 8)
        };
        let st = run_protocol_mode(&s, &p, &cfg).unwrap();
        let want = s.p_one();
        let got = 1.0 - st.collision_rate;
        let sigma = (want * (1.0 - want) / st.attempts as f64).sqrt();
        assert!((got - want).abs() < 4.0 * sigma, "{got} vs {want}");
    }

    #[test]
    fn idle_devices_contribute_zero() {
        let mut s = scenario(&[0.3, 0.0]);
        s.devices[1].rate = 0.0;
        let p = uniform_plan(&s, 1e-3, 3);
        let st = run_model_mode(&s, &p, &SimConfig::new(SimMode::Model, 10_000, 2)).unwrap();
        assert_eq!(st.devices[1].mean_delay, 0.0);
        assert_eq!(st.devices[1].occupancy, vec![1.0]);
        assert!((st.mean_delay - st.devices[0].mean_delay / 2.0).abs() < 1e-18);
    }

    #[test]
    fn run_many_policies_agree() {
        let s = scenario(&[0.3, 0.2]);
        let p = uniform_plan(&s, 1e-3, 3);
        let jobs: Vec<_> = (0..4)
            .map(|seed| (s.clone(), p.clone(), SimConfig::new(SimMode::Model, 5_000, seed)))
            .collect();
        let a: Vec<_> = run_many(&jobs, Exec::Sequential).into_iter().map(|r| r.unwrap()).collect();
        let b: Vec<_> = run_many(&jobs, Exec::Parallel).into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn config_is_validated() {
        let s = scenario(&[0.3]);
        let p = uniform_plan(&s, 1e-3, 3);
        assert!(run(&s, &p, &SimConfig::new(SimMode::Model, 0, 1)).is_err());
        let cfg = SimConfig {
            warmup: Some(100),
            ..SimConfig::new(SimMode::Model, 105, 1)
        };
        assert!(run(&s, &p, &cfg).is_err());
        assert!(run_model_mode(&s, &p, &SimConfig::new(SimMode::Protocol, 100, 1)).is_err());
    }
}
