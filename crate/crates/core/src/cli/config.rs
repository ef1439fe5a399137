//! Scenario files: JSON with unit-bearing quantities.
//!
//! A quantity is either a bare number in the field's default unit or a string
//! `"<value> <unit>"`. Default units: dBm for powers, ms for durations, kHz for
//! bandwidth, µs for processing delay, metres for distances and packets/ms for
//! arrival rates. Omitted fields take the defaults of [`Scenario::default`].

use std::path::Path;

use serde::Deserialize;

use crate::delaymodel::{self, DeviceProfile, Scenario};
use crate::error::{Error, Result};
use crate::linkmodel::{dbm_to_watts, RadioConstants};
use crate::queueing::TailMode;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Power,
    Time,
    Frequency,
    Rate,
    Length,
    Speed,
}

impl Dimension {
    /// Converts `value unit` to SI (watts for powers). `None` unit means the default.
    fn to_si(self, value: f64, unit: Option<&str>) -> Option<f64> {
        use Dimension::*;
        let u = unit.unwrap_or(match self {
            Power => "dBm",
            Time => "ms",
            Frequency => "kHz",
            Rate => "/ms",
            Length => "m",
            Speed => "m/s",
        });
        let v = match (self, u) {
            (Power, "dBm") => dbm_to_watts(value),
            (Power, "dBW") => dbm_to_watts(value + 30.0),
            (Power, "W") => value,
            (Power, "mW") => value / 1e3,
            (Time, "s") => value,
            (Time, "ms") => value / 1e3,
            (Time, "us") | (Time, "µs") => value / 1e6,
            (Time, "ns") => value / 1e9,
            (Frequency, "Hz") => value,
            (Frequency, "kHz") => value * 1e3,
            (Frequency, "MHz") => value * 1e6,
            (Rate, "/s") => value,
            (Rate, "/ms") => value * 1e3,
            (Length, "m") => value,
            (Length, "km") => value * 1e3,
            (Speed, "m/s") => value,
            (Speed, "km/s") => value * 1e3,
            _ => return None,
        };
        Some(v)
    }
}

impl Quantity {
    pub fn to_si(&self, field: &str, dim: Dimension) -> Result<f64> {
        let (value, unit) = match self {
            Quantity::Number(v) => (*v, None),
            Quantity::Text(s) => {
                let s = s.trim();
                let split = s
                    .find(|c: char| !(c.is_ascii_digit() || "+-.eE".contains(c)))
                    .unwrap_or(s.len());
                let (num, unit) = s.split_at(split);
                let value: f64 = num
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(field, format!("cannot parse quantity `{s}`")))?;
                let unit = unit.trim();
                (value, (!unit.is_empty()).then_some(unit))
            }
        };
        if !value.is_finite() {
            return Err(Error::config(field, "quantity must be finite"));
        }
        dim.to_si(value, unit)
            .ok_or_else(|| Error::config(field, format!("unknown unit `{}` for {dim:?}", unit.unwrap_or(""))))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFile {
    pub rate: Quantity,
    pub distance: Quantity,
}

/// Devices drawn uniformly over the cell; replaces `devices` when present.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomDevicesFile {
    pub count: usize,
    pub max_rate: Quantity,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub devices: Option<Vec<DeviceFile>>,
    pub random_devices: Option<RandomDevicesFile>,
    pub power_threshold: Option<Quantity>,
    pub noise_power: Option<Quantity>,
    pub pathloss_exponent: Option<f64>,
    pub reference_gain: Option<f64>,
    pub period: Option<Quantity>,
    pub preamble_count: Option<u32>,
    pub subchannel_count: Option<u32>,
    pub subchannel_bandwidth: Option<Quantity>,
    pub bits_per_packet: Option<f64>,
    pub processing_delay: Option<Quantity>,
    pub eps_target: Option<f64>,
    pub light_speed: Option<Quantity>,
    pub cell_radius: Option<Quantity>,
    pub tail_mode: Option<TailMode>,
    pub strict_subchannels: Option<bool>,
}

/// Default per-device rate ceiling for generated populations, packets/s.
pub const DEFAULT_MAX_RATE: f64 = 500.0;

impl ScenarioFile {
    pub fn resolve(&self) -> Result<Scenario> {
        let d = Scenario::default();
        let q = |v: &Option<Quantity>, field: &str, dim: Dimension, default: f64| -> Result<f64> {
            v.as_ref().map_or(Ok(default), |q| q.to_si(field, dim))
        };
        let dc = d.constants;
        let constants = RadioConstants::new(
            q(&self.power_threshold, "power_threshold", Dimension::Power, dc.power_threshold)?,
            q(&self.noise_power, "noise_power", Dimension::Power, dc.noise_power)?,
            self.pathloss_exponent.unwrap_or(dc.pathloss_exponent),
            self.reference_gain.unwrap_or(dc.reference_gain),
        )
        .map_err(|e| Error::config("constants", e.to_string()))?;
        let mut s = Scenario {
            devices: Vec::new(),
            constants,
            period: q(&self.period, "period", Dimension::Time, d.period)?,
            preamble_count: self.preamble_count.unwrap_or(d.preamble_count),
            subchannel_count: self.subchannel_count.unwrap_or(d.subchannel_count),
            subchannel_bandwidth: q(&self.subchannel_bandwidth, "subchannel_bandwidth", Dimension::Frequency, d.subchannel_bandwidth)?,
            bits_per_packet: self.bits_per_packet.unwrap_or(d.bits_per_packet),
            processing_delay: q(&self.processing_delay, "processing_delay", Dimension::Time, d.processing_delay)?,
            eps_target: self.eps_target.unwrap_or(d.eps_target),
            light_speed: q(&self.light_speed, "light_speed", Dimension::Speed, d.light_speed)?,
            cell_radius: q(&self.cell_radius, "cell_radius", Dimension::Length, d.cell_radius)?,
            tail_mode: self.tail_mode.unwrap_or(d.tail_mode),
            strict_subchannels: self.strict_subchannels.unwrap_or(d.strict_subchannels),
        };
        if self.devices.is_some() && self.random_devices.is_some() {
            return Err(Error::config("random_devices", "cannot be combined with `devices`"));
        }
        if let Some(list) = &self.devices {
            for (i, dev) in list.iter().enumerate() {
                s.devices.push(DeviceProfile {
                    rate: dev.rate.to_si(&format!("devices[{i}].rate"), Dimension::Rate)?,
                    distance: dev.distance.to_si(&format!("devices[{i}].distance"), Dimension::Length)?,
                });
            }
        }
        if let Some(r) = &self.random_devices {
            let max_rate = r.max_rate.to_si("random_devices.max_rate", Dimension::Rate)?;
            s.devices = delaymodel::random_devices(r.count, max_rate, s.cell_radius, r.seed);
        }
        s.validate().map_err(|e| match e {
            Error::Domain { what, .. } => Error::config(what, e.to_string()),
            other => other,
        })?;
        Ok(s)
    }
}

/// Parses a scenario document; errors carry the line and column or the field.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_str(text)?;
    file.resolve()
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("scenario", format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_scenario() {
        let s = parse_scenario("{}").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.device_count(), 0);
    }

    #[test]
    fn default_units_and_explicit_units_agree() {
        let a = parse_scenario(r#"{"period": 5, "devices": [{"rate": 0.5, "distance": 100}]}"#).unwrap();
        let b = parse_scenario(r#"{"period": "0.005 s", "devices": [{"rate": "500/s", "distance": "0.1 km"}]}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.max_queue_length(0), 3);
        let c = parse_scenario(r#"{"processing_delay": "10us", "subchannel_bandwidth": "0.1MHz"}"#).unwrap();
        assert_eq!(c.processing_delay, 10e-6);
        assert_eq!(c.subchannel_bandwidth, 100e3);
    }

    #[test]
    fn bad_units_and_fields_are_named() {
        let e = parse_scenario(r#"{"devices": [{"rate": "3 furlongs", "distance": 10}]}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "devices[0].rate"), "{e}");
        let e = parse_scenario(r#"{"period": "fast"}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "period"), "{e}");
        let e = parse_scenario(r#"{"perod": 5}"#).unwrap_err();
        assert!(e.to_string().contains("perod"), "{e}");
        let e = parse_scenario("{\n  \"period\": 5,\n}").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = parse_scenario(r#"{"devices": [{"rate": 1, "distance": 900}]}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "device.distance"), "{e}");
    }

    #[test]
    fn random_population_is_prefix_stable() {
        let a = parse_scenario(r#"{"random_devices": {"count": 5, "max_rate": 1, "seed": 3}}"#).unwrap();
        let b = parse_scenario(r#"{"random_devices": {"count": 8, "max_rate": 1, "seed": 3}}"#).unwrap();
        assert_eq!(a.devices[..], b.devices[..5]);
    }
}
