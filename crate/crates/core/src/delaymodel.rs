//! Blocklength plans and the over-the-air delay decomposition.
//!
//! For device `k` with queue capacity `M`, per-packet TTIs `T_1..T_M`, success
//! probabilities `p_1..p_M` and one-time access overhead
//! `D_P = 3 * propagation + processing`:
//!
//! ```text
//! E_m     = 1 / p_m
//! Q_m     = sum_{l < m} (T_l + D_P) * E_l          (zero for m = 1)
//! D_que   = sum_m pi_m * Q_m
//! D_tra   = sum_m T_m * E_m
//! D_pp    = sum_m D_P * E_m
//! D_ota   = D_que + D_tra + D_pp
//! ```
//!
//! `D_que` is weighted by the stationary queue distribution while `D_tra` and
//! `D_pp` are not; this asymmetry is intentional and kept as is.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::access::{self, ContentionConfig};
use crate::error::{Error, Result};
use crate::linkmodel::{self, RadioConstants};
use crate::queueing::{self, ArrivalModel, TailMode};
use crate::rng::{self, Stream};

/// Relative slack on the period constraint, absorbing the rounding of summed TTIs.
const PERIOD_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Packets per second.
    pub rate: f64,
    /// Distance to the base station in metres.
    pub distance: f64,
}

/// Full system description in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub devices: Vec<DeviceProfile>,
    pub constants: RadioConstants,
    /// Period duration `T_max`, seconds.
    pub period: f64,
    pub preamble_count: u32,
    pub subchannel_count: u32,
    /// Hz.
    pub subchannel_bandwidth: f64,
    pub bits_per_packet: f64,
    /// Seconds.
    pub processing_delay: f64,
    /// Error probability at which the rate constraint is evaluated.
    pub eps_target: f64,
    /// m/s.
    pub light_speed: f64,
    /// Metres.
    pub cell_radius: f64,
    pub tail_mode: TailMode,
    /// Require every subchannel to be assigned instead of at most `subchannel_count`.
    pub strict_subchannels: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            devices: Vec::new(),
            constants: RadioConstants::default(),
            period: 5e-3,
            preamble_count: 500,
            subchannel_count: 2000,
            subchannel_bandwidth: 100e3,
            bits_per_packet: 300.0,
            processing_delay: 10e-6,
            eps_target: 1e-5,
            light_speed: 3e8,
            cell_radius: 500.0,
            tail_mode: TailMode::FoldIntoIdle,
            strict_subchannels: false,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let positive = |what: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(what, v, "must be positive"))
            }
        };
        positive("period", self.period)?;
        positive("subchannel_bandwidth", self.subchannel_bandwidth)?;
        positive("light_speed", self.light_speed)?;
        positive("cell_radius", self.cell_radius)?;
        if !(self.processing_delay >= 0.0) {
            return Err(Error::domain("processing_delay", self.processing_delay, "must be >= 0"));
        }
        if !(self.bits_per_packet >= 1.0) {
            return Err(Error::domain("bits_per_packet", self.bits_per_packet, "must be >= 1"));
        }
        if !(self.eps_target > 0.0 && self.eps_target < 0.5) {
            return Err(Error::domain("eps_target", self.eps_target, "must lie in (0, 0.5)"));
        }
        if self.preamble_count < 1 {
            return Err(Error::domain("preamble_count", 0.0, "must be >= 1"));
        }
        if self.subchannel_count < 1 {
            return Err(Error::domain("subchannel_count", 0.0, "must be >= 1"));
        }
        RadioConstants::new(
            self.constants.power_threshold,
            self.constants.noise_power,
            self.constants.pathloss_exponent,
            self.constants.reference_gain,
        )?;
        for d in &self.devices {
            if !(d.rate >= 0.0 && d.rate.is_finite()) {
                return Err(Error::domain("device.rate", d.rate, "must be non-negative"));
            }
            if !(d.distance > 0.0 && d.distance <= self.cell_radius) {
                return Err(Error::domain("device.distance", d.distance, "must lie in (0, cell_radius]"));
            }
        }
        Ok(())
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn arrival_model(&self, k: usize) -> ArrivalModel {
        ArrivalModel {
            rate: self.devices[k].rate,
            horizon: self.period,
        }
    }

    pub fn max_queue_length(&self, k: usize) -> usize {
        queueing::max_queue_length(&self.arrival_model(k))
    }

    pub fn queue_lengths(&self) -> Vec<usize> {
        (0..self.devices.len()).map(|k| self.max_queue_length(k)).collect()
    }

    /// Indices of devices with at least one packet slot.
    pub fn active_devices(&self) -> Vec<usize> {
        (0..self.devices.len()).filter(|&k| self.max_queue_length(k) > 0).collect()
    }

    /// No-collision probability with every device contending.
    pub fn p_one(&self) -> f64 {
        if self.devices.is_empty() {
            return 1.0;
        }
        access::p_no_collision(ContentionConfig {
            device_count: self.devices.len() as u32,
            preamble_count: self.preamble_count,
        })
    }

    /// One-time access overhead `3 * propagation + processing`.
    pub fn access_overhead(&self, k: usize) -> f64 {
        3.0 * propagation_delay(&self.devices[k], self) + self.processing_delay
    }

    /// Appends `count` devices drawn uniformly over the cell with arrival rates
    /// uniform in `(0, max_rate)` packets/s. Device `i` always comes from the
    /// same random stream, so prefixes are stable across counts.
    pub fn with_random_devices(mut self, count: usize, max_rate: f64, seed: u64) -> Self {
        self.devices = random_devices(count, max_rate, self.cell_radius, seed);
        self
    }
}

pub fn random_devices(count: usize, max_rate: f64, cell_radius: f64, seed: u64) -> Vec<DeviceProfile> {
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, Stream::Devices, i as u64);
            let mut u: f64 = r.random();
            while u == 0.0 {
                u = r.random();
            }
            let v: f64 = 1.0 - r.random::<f64>();
            DeviceProfile {
                rate: max_rate * u,
                distance: cell_radius * v.sqrt(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePlan {
    /// TTI of each queued packet, seconds.
    pub ttis: Vec<f64>,
    /// Number of subchannels assigned to the device.
    pub subchannels: u32,
}

/// Per-device TTI sequences and subchannel counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocklengthPlan {
    pub devices: Vec<DevicePlan>,
}

impl BlocklengthPlan {
    /// Checks the plan's shape against the scenario.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        if self.devices.len() != scenario.devices.len() {
            return Err(Error::InvalidPlan(format!(
                "plan has {} devices, scenario has {}",
                self.devices.len(),
                scenario.devices.len()
            )));
        }
        for (k, d) in self.devices.iter().enumerate() {
            let m = scenario.max_queue_length(k);
            if d.ttis.len() != m {
                return Err(Error::InvalidPlan(format!(
                    "device {k}: {} TTIs for a queue of {m}",
                    d.ttis.len()
                )));
            }
            if let Some(t) = d.ttis.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
                return Err(Error::InvalidPlan(format!("device {k}: TTI {t} is not positive")));
            }
            if m > 0 && d.subchannels < 1 {
                return Err(Error::InvalidPlan(format!("device {k}: no subchannels assigned")));
            }
        }
        Ok(())
    }

    pub fn total_subchannels(&self) -> u64 {
        self.devices.iter().map(|d| d.subchannels as u64).sum()
    }
}

/// Blocklength of packet `m` (1-based) of device `k`, in symbols.
pub fn blocklength_of(scenario: &Scenario, plan: &BlocklengthPlan, k: usize, m: usize) -> Result<f64> {
    let dev = plan.devices.get(k).ok_or(Error::Index {
        what: "device",
        index: k,
        lo: 0,
        hi: plan.devices.len().saturating_sub(1),
    })?;
    if m < 1 || m > dev.ttis.len() {
        return Err(Error::Index {
            what: "packet",
            index: m,
            lo: 1,
            hi: dev.ttis.len(),
        });
    }
    Ok(dev.ttis[m - 1] * dev.subchannels as f64 * scenario.subchannel_bandwidth)
}

pub fn propagation_delay(profile: &DeviceProfile, scenario: &Scenario) -> f64 {
    profile.distance / scenario.light_speed
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketStats {
    pub blocklength: Vec<f64>,
    pub p_err: Vec<f64>,
    pub p_suc: Vec<f64>,
    pub expected_retx: Vec<f64>,
}

/// Access statistics for each queued packet of a device with the given
/// TTIs and subchannel count.
pub fn packet_stats_for(
    scenario: &Scenario,
    k: usize,
    ttis: &[f64],
    subchannels: u32,
    p_one: f64,
) -> Result<PacketStats> {
    let mut stats = PacketStats {
        blocklength: Vec::with_capacity(ttis.len()),
        p_err: Vec::with_capacity(ttis.len()),
        p_suc: Vec::with_capacity(ttis.len()),
        expected_retx: Vec::with_capacity(ttis.len()),
    };
    for (i, &t) in ttis.iter().enumerate() {
        let n = t * subchannels as f64 * scenario.subchannel_bandwidth;
        let p_err = linkmodel::expected_error_probability(n, scenario.bits_per_packet, &scenario.constants)?;
        let p_suc = access::p_success(p_one, p_err)?;
        if p_suc <= 0.0 {
            return Err(Error::InfeasibleLink { device: k, packet: i + 1 });
        }
        stats.blocklength.push(n);
        stats.p_err.push(p_err);
        stats.p_suc.push(p_suc);
        stats.expected_retx.push(1.0 / p_suc);
    }
    Ok(stats)
}

pub fn packet_stats(scenario: &Scenario, plan: &BlocklengthPlan, k: usize) -> Result<PacketStats> {
    let d = &plan.devices[k];
    packet_stats_for(scenario, k, &d.ttis, d.subchannels, scenario.p_one())
}

/// Delay decomposition of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceDelay {
    pub queuing: f64,
    pub transmission: f64,
    pub proc_prop: f64,
    pub total: f64,
    /// Per-packet queuing delay `Q_m`.
    pub packet_queuing: Vec<f64>,
    pub stats: PacketStats,
    pub steady: Vec<f64>,
}

impl DeviceDelay {
    fn idle() -> Self {
        Self {
            queuing: 0.0,
            transmission: 0.0,
            proc_prop: 0.0,
            total: 0.0,
            packet_queuing: Vec::new(),
            stats: PacketStats {
                blocklength: Vec::new(),
                p_err: Vec::new(),
                p_suc: Vec::new(),
                expected_retx: Vec::new(),
            },
            steady: vec![1.0],
        }
    }
}

/// Delay of device `k` given its packet statistics and stationary vector.
pub fn device_delay(
    scenario: &Scenario,
    plan: &BlocklengthPlan,
    k: usize,
    stats: PacketStats,
    steady: &[f64],
) -> Result<DeviceDelay> {
    let ttis = &plan.devices[k].ttis;
    if steady.len() != ttis.len() + 1 {
        return Err(Error::Shape {
            expected: ttis.len() + 1,
            got: steady.len(),
        });
    }
    if stats.expected_retx.len() != ttis.len() {
        return Err(Error::Shape {
            expected: ttis.len(),
            got: stats.expected_retx.len(),
        });
    }
    Ok(assemble_delay(scenario.access_overhead(k), ttis, stats, steady.to_vec()))
}

fn assemble_delay(overhead: f64, ttis: &[f64], stats: PacketStats, steady: Vec<f64>) -> DeviceDelay {
    let retx = &stats.expected_retx;
    let mut packet_queuing = Vec::with_capacity(ttis.len());
    let mut ahead = 0.0;
    for m in 0..ttis.len() {
        packet_queuing.push(ahead);
        ahead += (ttis[m] + overhead) * retx[m];
    }
    let queuing: f64 = packet_queuing.iter().zip(&steady[1..]).map(|(q, p)| q * p).sum();
    let transmission: f64 = ttis.iter().zip(retx).map(|(t, e)| t * e).sum();
    let proc_prop: f64 = retx.iter().map(|e| overhead * e).sum();
    DeviceDelay {
        queuing,
        transmission,
        proc_prop,
        total: queuing + transmission + proc_prop,
        packet_queuing,
        stats,
        steady,
    }
}

/// Builds the chain and delay decomposition of device `k` for a candidate
/// TTI sequence and subchannel count.
pub fn device_delay_for(
    scenario: &Scenario,
    k: usize,
    ttis: &[f64],
    subchannels: u32,
    p_one: f64,
) -> Result<DeviceDelay> {
    let model = scenario.arrival_model(k);
    if queueing::max_queue_length(&model) == 0 {
        return Ok(DeviceDelay::idle());
    }
    let stats = packet_stats_for(scenario, k, ttis, subchannels, p_one)?;
    let chain = queueing::build_chain(&model, &stats.p_suc, scenario.tail_mode).map_err(|e| match e {
        Error::InfeasibleLink { packet, .. } => Error::InfeasibleLink { device: k, packet },
        other => other,
    })?;
    Ok(assemble_delay(scenario.access_overhead(k), ttis, stats, chain.steady))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceFeasibility {
    pub period_ok: bool,
    pub rate_ok: bool,
    /// Bits deliverable by the plan at the target error probability.
    pub deliverable_bits: f64,
    /// Expected bits arriving per period.
    pub required_bits: f64,
}

impl DeviceFeasibility {
    /// Transmission-failure cost flag: period or rate constraint violated.
    pub fn transmission_failure(&self) -> bool {
        !(self.period_ok && self.rate_ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feasibility {
    pub period_ok: bool,
    pub subchannels_ok: bool,
    pub rate_ok: bool,
    /// Unassigned subchannels; negative when the budget is overused.
    pub remaining_subchannels: i64,
    pub devices: Vec<DeviceFeasibility>,
}

impl Feasibility {
    pub fn all_ok(&self) -> bool {
        self.period_ok && self.subchannels_ok && self.rate_ok
    }

    /// Subchannel-overuse cost flag.
    pub fn subchannel_overuse(&self) -> bool {
        self.remaining_subchannels < 0
    }
}

/// Period and rate verdicts for one device.
pub fn device_feasibility(scenario: &Scenario, k: usize, ttis: &[f64], subchannels: u32) -> DeviceFeasibility {
    let period_ok = ttis.iter().sum::<f64>() <= scenario.period * (1.0 + PERIOD_SLACK);
    let snr = scenario.constants.mean_snr();
    let deliverable_bits: f64 = ttis
        .iter()
        .map(|&t| {
            let n = t * subchannels as f64 * scenario.subchannel_bandwidth;
            if n <= 0.0 {
                return 0.0;
            }
            let r = linkmodel::achievable_rate(snr, n, scenario.eps_target).unwrap_or(0.0);
            r.max(0.0) * n
        })
        .sum();
    let model = scenario.arrival_model(k);
    let expected_arrivals: f64 = (0..=ttis.len())
        .map(|a| a as f64 * queueing::arrival_pmf(&model, a))
        .sum();
    let required_bits = scenario.bits_per_packet * expected_arrivals;
    DeviceFeasibility {
        period_ok,
        rate_ok: deliverable_bits >= required_bits,
        deliverable_bits,
        required_bits,
    }
}

/// Verdicts for the period, subchannel-budget and rate constraints.
pub fn check_feasibility(scenario: &Scenario, plan: &BlocklengthPlan) -> Result<Feasibility> {
    plan.validate(scenario)?;
    let devices: Vec<DeviceFeasibility> = plan
        .devices
        .iter()
        .enumerate()
        .map(|(k, d)| device_feasibility(scenario, k, &d.ttis, d.subchannels))
        .collect();
    let used = plan.total_subchannels() as i64;
    let remaining = scenario.subchannel_count as i64 - used;
    let subchannels_ok = if scenario.strict_subchannels {
        remaining == 0
    } else {
        remaining >= 0
    };
    Ok(Feasibility {
        period_ok: devices.iter().all(|d| d.period_ok),
        subchannels_ok,
        rate_ok: devices.iter().all(|d| d.rate_ok),
        remaining_subchannels: remaining,
        devices,
    })
}

/// Per-device delays, their average and the feasibility verdicts of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayReport {
    pub devices: Vec<DeviceDelay>,
    pub average: f64,
    pub feasibility: Feasibility,
}

pub fn evaluate(scenario: &Scenario, plan: &BlocklengthPlan) -> Result<DelayReport> {
    let feasibility = check_feasibility(scenario, plan)?;
    let p_one = scenario.p_one();
    let devices = plan
        .devices
        .iter()
        .enumerate()
        .map(|(k, d)| device_delay_for(scenario, k, &d.ttis, d.subchannels, p_one))
        .collect::<Result<Vec<_>>>()?;
    let average = mean_total(&devices);
    Ok(DelayReport {
        devices,
        average,
        feasibility,
    })
}

fn mean_total(devices: &[DeviceDelay]) -> f64 {
    if devices.is_empty() {
        return 0.0;
    }
    devices.iter().map(|d| d.total).sum::<f64>() / devices.len() as f64
}

/// Average over-the-air delay of all devices, idle devices contributing zero.
pub fn average_ota_delay(scenario: &Scenario, plan: &BlocklengthPlan) -> Result<f64> {
    plan.validate(scenario)?;
    let p_one = scenario.p_one();
    let mut total = 0.0;
    for (k, d) in plan.devices.iter().enumerate() {
        total += device_delay_for(scenario, k, &d.ttis, d.subchannels, p_one)?.total;
    }
    Ok(if plan.devices.is_empty() {
        0.0
    } else {
        total / plan.devices.len() as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_device(rate_per_ms: f64) -> Scenario {
        Scenario {
            devices: vec![DeviceProfile {
                rate: rate_per_ms * 1e3,
                distance: 300.0,
            }],
            ..Scenario::default()
        }
    }

    fn plan_of(ttis: Vec<f64>, subchannels: u32) -> BlocklengthPlan {
        BlocklengthPlan {
            devices: vec![DevicePlan { ttis, subchannels }],
        }
    }

    #[test]
    fn blocklength_examples() {
        let s = one_device(0.1);
        let p = plan_of(vec![1e-3], 1);
        assert!((blocklength_of(&s, &p, 0, 1).unwrap() - 100.0).abs() < 1e-9);
        let p = plan_of(vec![0.5e-3], 4);
        assert!((blocklength_of(&s, &p, 0, 1).unwrap() - 200.0).abs() < 1e-9);
        let p2 = plan_of(vec![0.5e-3], 8);
        assert!(
            (blocklength_of(&s, &p2, 0, 1).unwrap() - 2.0 * blocklength_of(&s, &p, 0, 1).unwrap()).abs() < 1e-9
        );
        assert!(matches!(blocklength_of(&s, &p, 0, 0), Err(Error::Index { .. })));
        assert!(matches!(blocklength_of(&s, &p, 0, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn propagation_examples() {
        let s = Scenario::default();
        let d = |m| DeviceProfile { rate: 1.0, distance: m };
        assert!((propagation_delay(&d(300.0), &s) - 1e-6).abs() < 1e-18);
        assert!((propagation_delay(&d(500.0), &s) - 1.6666666666666667e-6).abs() < 1e-18);
        let bad = Scenario {
            devices: vec![d(0.0)],
            ..Scenario::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_device_has_no_contention() {
        let s = one_device(0.1);
        let p = plan_of(vec![1e-3], 4);
        let st = packet_stats(&s, &p, 0).unwrap();
        assert!((st.p_suc[0] - (1.0 - st.p_err[0])).abs() < 1e-15);
    }

    #[test]
    fn perfect_links_give_p_one() {
        let mut s = one_device(0.1);
        s.devices.push(s.devices[0]);
        s.preamble_count = 3;
        s.constants = RadioConstants::new(1.0, 1e-12, 3.0, 1.0).unwrap();
        let p = BlocklengthPlan {
            devices: vec![
                DevicePlan { ttis: vec![1e-3], subchannels: 4 },
                DevicePlan { ttis: vec![1e-3], subchannels: 4 },
            ],
        };
        let st = packet_stats(&s, &p, 0).unwrap();
        assert!(st.p_err[0] < 1e-10);
        assert!((st.p_suc[0] - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn defaults_composition_matches_hand_formula() {
        // n = 400 symbols, B = 300 bits, 20 devices on 500 preambles
        let s = Scenario::default().with_random_devices(20, 1e3, 3);
        let p_one = (1.0f64 - 1.0 / 500.0).powi(19);
        let lin_mu = (400.0 / (2f64.powf(1.5) - 1.0)).sqrt() / (2.0 * std::f64::consts::PI);
        let xi = 2f64.powf(0.75) - 1.0;
        let (t1, t2) = (xi - 0.5 / lin_mu, xi + 0.5 / lin_mu);
        let p_err = 1.0 - lin_mu * 10.0 * ((-t1 / 10.0).exp() - (-t2 / 10.0).exp());
        let k = s.active_devices()[0];
        let m = s.max_queue_length(k);
        let st = packet_stats_for(&s, k, &vec![1e-3; m], 4, s.p_one()).unwrap();
        assert!((st.blocklength[0] - 400.0).abs() < 1e-9);
        assert!((st.p_suc[0] - p_one * (1.0 - p_err)).abs() < 1e-12);
    }

    #[test]
    fn single_packet_delay() {
        let s = one_device(0.1); // load 0.5 -> one slot
        assert_eq!(s.max_queue_length(0), 1);
        let p = plan_of(vec![1e-3], 4);
        let r = evaluate(&s, &p).unwrap();
        let d = &r.devices[0];
        assert_eq!(d.queuing, 0.0);
        let dp = s.access_overhead(0);
        assert!((d.total - (1e-3 + dp) / d.stats.p_suc[0]).abs() < 1e-15);
        assert_eq!(d.total, d.queuing + d.transmission + d.proc_prop);
    }

    #[test]
    fn two_packet_hand_expansion() {
        let s = one_device(0.3); // load 1.5 -> two slots
        assert_eq!(s.max_queue_length(0), 2);
        let (t1, t2) = (1e-3, 2e-3);
        let dp = s.access_overhead(0);
        let steady = [0.5, 0.3, 0.2];
        let p = 0.8;
        let plan = plan_of(vec![t1, t2], 4);
        let stats = PacketStats {
            blocklength: vec![0.0; 2],
            p_err: vec![0.2; 2],
            p_suc: vec![p; 2],
            expected_retx: vec![1.0 / p; 2],
        };
        let d = device_delay(&s, &plan, 0, stats, &steady).unwrap();
        let want = steady[2] * (t1 + dp) / p + (t1 + t2 + 2.0 * dp) / p;
        assert!((d.total - want).abs() < 1e-15);
        assert!((d.total - (d.queuing + d.transmission + d.proc_prop)).abs() < 1e-18);
    }

    #[test]
    fn perfect_success_transmission_delay_is_tti_sum() {
        let mut s = one_device(0.5);
        s.constants = RadioConstants::new(1.0, 1e-12, 3.0, 1.0).unwrap();
        let m = s.max_queue_length(0);
        let ttis: Vec<f64> = (1..=m).map(|i| i as f64 * 1e-4).collect();
        let r = evaluate(&s, &plan_of(ttis.clone(), 8)).unwrap();
        assert!(r.devices[0].stats.expected_retx.iter().all(|&e| (e - 1.0).abs() < 1e-10));
        assert!((r.devices[0].transmission - ttis.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn average_examples() {
        let mut s = one_device(0.5);
        s.devices.push(s.devices[0]);
        let m = s.max_queue_length(0);
        let dplan = DevicePlan { ttis: vec![1e-3; m], subchannels: 5 };
        let plan = BlocklengthPlan { devices: vec![dplan.clone(), dplan.clone()] };
        let r = evaluate(&s, &plan).unwrap();
        assert!((r.average - r.devices[0].total).abs() < 1e-18);

        // one idle device halves the average
        s.devices[1].rate = 0.0;
        let plan = BlocklengthPlan {
            devices: vec![dplan, DevicePlan { ttis: vec![], subchannels: 0 }],
        };
        let r = evaluate(&s, &plan).unwrap();
        assert_eq!(r.devices[1].total, 0.0);
        assert!((r.average - r.devices[0].total / 2.0).abs() < 1e-18);
        assert_eq!(average_ota_delay(&s, &plan).unwrap(), r.average);
    }

    #[test]
    fn mixed_pair_average_is_compositional() {
        let s = Scenario::default().with_random_devices(2, 1e3, 9);
        let plan = BlocklengthPlan {
            devices: (0..2)
                .map(|k| DevicePlan {
                    ttis: vec![0.5e-3; s.max_queue_length(k)],
                    subchannels: 3 + k as u32,
                })
                .collect(),
        };
        let r = evaluate(&s, &plan).unwrap();
        let manual = (r.devices[0].total + r.devices[1].total) / 2.0;
        assert_eq!(r.average, manual);
    }

    #[test]
    fn feasibility_examples() {
        let idle = Scenario {
            devices: vec![DeviceProfile { rate: 0.0, distance: 10.0 }],
            ..Scenario::default()
        };
        let f = check_feasibility(&idle, &plan_of(vec![], 0)).unwrap();
        assert!(f.all_ok());

        let s = one_device(0.5); // three slots
        let f = check_feasibility(&s, &plan_of(vec![2e-3, 2e-3, 1e-3], 10)).unwrap();
        assert!(f.period_ok);
        let f = check_feasibility(&s, &plan_of(vec![2e-3, 2e-3, 1e-3 + 1e-9], 10)).unwrap();
        assert!(!f.period_ok);
        assert!(f.devices[0].transmission_failure());

        // tiny load with a huge block is rate feasible by a wide margin
        let s = one_device(0.001);
        let f = check_feasibility(&s, &plan_of(vec![5e-3], 2000)).unwrap();
        assert!(f.rate_ok);
        let cap = 11f64.log2() * 5e-3 * 2000.0 * 100e3;
        assert!(f.devices[0].deliverable_bits < cap && f.devices[0].deliverable_bits > 0.99 * cap);

        // too short to carry the expected load
        let s = one_device(0.5);
        let f = check_feasibility(&s, &plan_of(vec![1e-4; 3], 1)).unwrap();
        assert!(!f.rate_ok);

        let f = check_feasibility(&s, &plan_of(vec![1e-3; 3], 2001)).unwrap();
        assert!(!f.subchannels_ok && f.subchannel_overuse());
    }

    #[test]
    fn strict_subchannel_mode() {
        let mut s = one_device(0.1);
        s.strict_subchannels = true;
        s.subchannel_count = 10;
        assert!(!check_feasibility(&s, &plan_of(vec![1e-3], 9)).unwrap().subchannels_ok);
        assert!(check_feasibility(&s, &plan_of(vec![1e-3], 10)).unwrap().subchannels_ok);
    }

    #[test]
    fn plan_shape_is_checked() {
        let s = one_device(0.5);
        assert!(matches!(evaluate(&s, &plan_of(vec![1e-3], 4)), Err(Error::InvalidPlan(_))));
        assert!(evaluate(&s, &plan_of(vec![1e-3, 0.0, 1e-3], 4)).is_err());
        assert!(evaluate(&s, &plan_of(vec![1e-3; 3], 0)).is_err());
    }

    #[test]
    fn larger_blocks_approach_retransmission_free_floor() {
        let s = one_device(0.5);
        let m = s.max_queue_length(0);
        let mut prev = f64::INFINITY;
        for sub in [10u32, 100, 1000, 10_000, 100_000] {
            let r = evaluate(&s, &plan_of(vec![1e-3; m], sub)).unwrap();
            let worst = r.devices[0].stats.expected_retx.iter().cloned().fold(0.0, f64::max);
            assert!(worst < prev);
            prev = worst;
        }
        assert!(prev - 1.0 < 1e-3);
    }

    #[test]
    fn random_devices_are_prefix_stable() {
        let a = random_devices(5, 1e3, 500.0, 42);
        let b = random_devices(12, 1e3, 500.0, 42);
        assert_eq!(a[..], b[..5]);
        assert!(b.iter().all(|d| d.rate > 0.0 && d.rate < 1e3 && d.distance > 0.0 && d.distance <= 500.0));
    }
}
