//! One-axis sweeps.
//!
//! `bits_per_packet` and `device_count` rerun every selected solver at each
//! point. `blocklength` and `tti` define the plan themselves: every active
//! device gets an even subchannel share and either a common TTI or the TTI
//! that yields the requested blocklength on its share.

use std::str::FromStr;

use crate::baselines::{self, split_even};
use crate::delaymodel::{self, BlocklengthPlan, DevicePlan, Scenario};
use crate::error::{Error, Result};
use crate::exec::Exec;

use super::config::DEFAULT_MAX_RATE;
use super::output::{ms, Output};
use super::{solve, Solver, SolverArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    BitsPerPacket,
    DeviceCount,
    /// Symbols.
    Blocklength,
    /// Milliseconds on the command line.
    Tti,
}

impl Axis {
    pub fn column(self) -> &'static str {
        match self {
            Axis::BitsPerPacket => "bits_per_packet",
            Axis::DeviceCount => "device_count",
            Axis::Blocklength => "blocklength_symbols",
            Axis::Tti => "tti_ms",
        }
    }

    fn defines_plan(self) -> bool {
        matches!(self, Axis::Blocklength | Axis::Tti)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl FromStr for SweepSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::config("sweep", "expected axis:start:stop:step"));
        }
        let axis = match parts[0] {
            "bits_per_packet" => Axis::BitsPerPacket,
            "device_count" => Axis::DeviceCount,
            "blocklength" => Axis::Blocklength,
            "tti" => Axis::Tti,
            other => return Err(Error::config("sweep", format!("unknown axis `{other}`"))),
        };
        let num = |i: usize, what: &str| -> Result<f64> {
            parts[i]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::config("sweep", format!("bad {what} `{}`", parts[i])))
        };
        let spec = Self {
            axis,
            start: num(1, "start")?,
            stop: num(2, "stop")?,
            step: num(3, "step")?,
        };
        if !(spec.step > 0.0) || spec.stop < spec.start {
            return Err(Error::config("sweep", "need step > 0 and stop >= start"));
        }
        if spec.start <= 0.0 && axis != Axis::DeviceCount {
            return Err(Error::config("sweep", "axis values must be positive"));
        }
        Ok(spec)
    }
}

impl SweepSpec {
    /// `start + i * step` up to `stop` inclusive.
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

/// Metrics of one plan at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Average delay, seconds; `None` when no plan exists or a link is dead.
    pub delay: Option<f64>,
    /// Mean successful access probability over all queued packets.
    pub p_suc: Option<f64>,
    /// Mean expected retransmissions over all queued packets.
    pub retx: Option<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// One cell per column group, in [`column_groups`] order.
    pub cells: Vec<Cell>,
}

pub fn column_groups(axis: Axis, solvers: &[Solver]) -> Vec<&'static str> {
    if axis.defines_plan() {
        vec!["plan"]
    } else {
        solvers.iter().map(|s| s.name()).collect()
    }
}

/// The scenario at one point of a solver axis.
pub fn scenario_at(base: &Scenario, axis: Axis, value: f64, seed: u64) -> Result<Scenario> {
    let mut s = base.clone();
    match axis {
        Axis::BitsPerPacket => s.bits_per_packet = value,
        Axis::DeviceCount => {
            let count = value.round();
            if count < 0.0 {
                return Err(Error::config("sweep", "device count must be >= 0"));
            }
            s = s.with_random_devices(count as usize, population_rate(base), seed);
        }
        Axis::Blocklength | Axis::Tti => {}
    }
    s.validate()?;
    Ok(s)
}

/// Rate ceiling for generated populations: the largest configured rate, or the default.
fn population_rate(base: &Scenario) -> f64 {
    base.devices.iter().map(|d| d.rate).fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r)))).unwrap_or(DEFAULT_MAX_RATE)
}

/// Even subchannel split with TTIs chosen per device by `tti_of(share)`.
fn even_plan(scenario: &Scenario, tti_of: impl Fn(u32) -> f64) -> Result<BlocklengthPlan> {
    let active = scenario.active_devices();
    if active.len() > scenario.subchannel_count as usize {
        return Err(Error::NoFeasiblePlan);
    }
    let mut devices = vec![
        DevicePlan {
            ttis: Vec::new(),
            subchannels: 0,
        };
        scenario.device_count()
    ];
    for (&k, share) in active.iter().zip(split_even(scenario.subchannel_count, active.len())) {
        devices[k] = DevicePlan {
            ttis: vec![tti_of(share); scenario.max_queue_length(k)],
            subchannels: share,
        };
    }
    Ok(BlocklengthPlan { devices })
}

/// Plan for a plan-defining axis value (symbols or milliseconds).
pub fn axis_plan(scenario: &Scenario, axis: Axis, value: f64) -> Result<BlocklengthPlan> {
    match axis {
        Axis::Tti => baselines::fixed_tti_plan(scenario, value * 1e-3),
        Axis::Blocklength => even_plan(scenario, |share| value / (share as f64 * scenario.subchannel_bandwidth)),
        _ => Err(Error::config("sweep", "axis does not define a plan")),
    }
}

pub fn cell(scenario: &Scenario, plan: Result<BlocklengthPlan>) -> Result<Cell> {
    let empty = Cell {
        delay: None,
        p_suc: None,
        retx: None,
        feasible: false,
    };
    let plan = match plan {
        Ok(p) => p,
        Err(Error::NoFeasiblePlan) => return Ok(empty),
        Err(e) => return Err(e),
    };
    let feasible = delaymodel::check_feasibility(scenario, &plan)?.all_ok();
    let (mut ps, mut rs, mut n) = (0.0, 0.0, 0usize);
    for k in scenario.active_devices() {
        let st = delaymodel::packet_stats(scenario, &plan, k)?;
        ps += st.p_suc.iter().sum::<f64>();
        rs += st.expected_retx.iter().sum::<f64>();
        n += st.p_suc.len();
    }
    let mean = |v: f64| (n > 0).then(|| v / n as f64);
    let retx = mean(rs).filter(|r| r.is_finite());
    Ok(Cell {
        delay: delaymodel::average_ota_delay(scenario, &plan).ok(),
        p_suc: mean(ps),
        retx,
        feasible: feasible && retx.is_some(),
    })
}

pub fn run_sweep(base: &Scenario, spec: &SweepSpec, solvers: &[Solver], args: &SolverArgs, seed: u64, exec: Exec) -> Result<Vec<SweepRow>> {
    if !spec.axis.defines_plan() && solvers.is_empty() {
        return Err(Error::config("solver", "at least one solver is needed for this axis"));
    }
    let points = spec.points();
    // solvers run sequentially inside a point; points fan out
    let rows = exec.map(&points, |&value| -> Result<SweepRow> {
        let scenario = scenario_at(base, spec.axis, value, seed)?;
        let cells = if spec.axis.defines_plan() {
            vec![cell(&scenario, axis_plan(&scenario, spec.axis, value))?]
        } else {
            solvers
                .iter()
                .map(|&s| cell(&scenario, solve(&scenario, s, args, seed, Exec::Sequential).map(|x| x.plan)))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(SweepRow { value, cells })
    });
    rows.into_iter().collect()
}

pub fn write_sweep(out: &Output, spec: &SweepSpec, solvers: &[Solver], rows: &[SweepRow]) -> Result<()> {
    let mut header: Vec<String> = vec![spec.axis.column().to_string()];
    for g in column_groups(spec.axis, solvers) {
        for m in ["delay_ms", "p_suc", "expected_retx", "feasible"] {
            header.push(format!("{g}_{m}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = out.csv("sweep.csv", &header_refs)?;
    let opt = |v: Option<f64>, f: fn(f64) -> String| v.map_or(String::new(), f);
    for r in rows {
        let mut fields = vec![r.value.to_string()];
        for c in &r.cells {
            fields.push(opt(c.delay, ms));
            fields.push(opt(c.p_suc, |v| v.to_string()));
            fields.push(opt(c.retx, |v| v.to_string()));
            fields.push(c.feasible.to_string());
        }
        w.row(&fields)?;
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parses_and_points_are_inclusive() {
        let spec: SweepSpec = "tti:0.25:1:0.25".parse().unwrap();
        assert_eq!(spec.axis, Axis::Tti);
        assert_eq!(spec.points(), vec![0.25, 0.5, 0.75, 1.0]);
        let spec: SweepSpec = "device_count:0:30:10".parse().unwrap();
        assert_eq!(spec.points(), vec![0.0, 10.0, 20.0, 30.0]);
        // accumulated float error must not drop the endpoint
        assert_eq!("blocklength:0.1:0.3:0.1".parse::<SweepSpec>().unwrap().points().len(), 3);
    }

    #[test]
    fn bad_specs_are_rejected() {
        for bad in ["tti:1:2", "speed:1:2:1", "tti:2:1:1", "tti:1:2:0", "tti:0:1:1", "tti:a:2:1", "tti:1:inf:1"] {
            assert!(bad.parse::<SweepSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn plan_axes_use_one_column_group() {
        assert_eq!(column_groups(Axis::Tti, &[Solver::Lte, Solver::Nr]), vec!["plan"]);
        assert_eq!(column_groups(Axis::BitsPerPacket, &[Solver::Lte, Solver::Nr]), vec!["lte", "nr"]);
    }

    #[test]
    fn blocklength_axis_hits_requested_blocklength() {
        let s = Scenario::default().with_random_devices(4, DEFAULT_MAX_RATE, 1);
        let plan = axis_plan(&s, Axis::Blocklength, 400.0).unwrap();
        for k in s.active_devices() {
            let d = &plan.devices[k];
            for t in &d.ttis {
                let n = t * d.subchannels as f64 * s.subchannel_bandwidth;
                assert!((n - 400.0).abs() < 1e-9);
            }
        }
    }
}
