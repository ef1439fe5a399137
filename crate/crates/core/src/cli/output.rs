//! Run directories and CSV emission.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::delaymodel::{self, BlocklengthPlan, Scenario};
use crate::error::Result;
use crate::marl::{MarlConfig, MarlRun};
use crate::simulate::SimStats;

/// Seconds to a millisecond string.
pub fn ms(seconds: f64) -> String {
    (seconds * 1e3).to_string()
}

fn joined(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// Hex SHA-256 of the scenario's canonical JSON.
pub fn scenario_hash(scenario: &Scenario) -> String {
    let json = serde_json::to_string(scenario).expect("scenario serialises");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory of one run.
pub struct Output {
    pub dir: PathBuf,
    pub hash: String,
    pub seed: u64,
}

/// CSV file whose rows start with the scenario hash and the seed.
pub struct CsvOut {
    writer: csv::Writer<File>,
    prefix: [String; 2],
}

impl CsvOut {
    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        let record = self.prefix.iter().chain(fields.iter());
        self.writer.write_record(record)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

impl Output {
    /// Creates the directory and writes the resolved scenario.
    pub fn create(dir: &Path, scenario: &Scenario, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let out = Self {
            dir: dir.to_path_buf(),
            hash: scenario_hash(scenario),
            seed,
        };
        out.write_json("scenario.json", scenario)?;
        Ok(out)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    pub fn csv(&self, name: &str, header: &[&str]) -> Result<CsvOut> {
        let mut writer = csv::Writer::from_path(self.dir.join(name))?;
        writer.write_record(["scenario_hash", "seed"].iter().chain(header.iter()))?;
        Ok(CsvOut {
            writer,
            prefix: [self.hash.clone(), self.seed.to_string()],
        })
    }
}

/// One row per device plus an `average` row; returns overall feasibility.
pub fn write_delay_report(out: &Output, name: &str, scenario: &Scenario, plan: &BlocklengthPlan) -> Result<bool> {
    let feas = delaymodel::check_feasibility(scenario, plan)?;
    let report = delaymodel::evaluate(scenario, plan);
    let mut w = out.csv(
        name,
        &[
            "device",
            "queue_len",
            "subchannels",
            "queuing_ms",
            "transmission_ms",
            "proc_prop_ms",
            "total_ms",
            "p_suc",
            "expected_retx",
            "period_ok",
            "rate_ok",
            "feasible",
        ],
    )?;
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            // a dead link has no finite delay; report the verdict instead
            w.row(&[
                "average".into(),
                String::new(),
                plan.total_subchannels().to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                feas.period_ok.to_string(),
                feas.rate_ok.to_string(),
                format!("false ({e})"),
            ])?;
            w.finish()?;
            return Ok(false);
        }
    };
    let k = scenario.device_count();
    let mut sums = [0.0; 4];
    for (i, d) in report.devices.iter().enumerate() {
        let f = &feas.devices[i];
        sums[0] += d.queuing;
        sums[1] += d.transmission;
        sums[2] += d.proc_prop;
        sums[3] += d.total;
        w.row(&[
            i.to_string(),
            scenario.max_queue_length(i).to_string(),
            plan.devices[i].subchannels.to_string(),
            ms(d.queuing),
            ms(d.transmission),
            ms(d.proc_prop),
            ms(d.total),
            joined(&d.stats.p_suc),
            joined(&d.stats.expected_retx),
            f.period_ok.to_string(),
            f.rate_ok.to_string(),
            (!f.transmission_failure()).to_string(),
        ])?;
    }
    let n = k.max(1) as f64;
    w.row(&[
        "average".into(),
        String::new(),
        plan.total_subchannels().to_string(),
        ms(sums[0] / n),
        ms(sums[1] / n),
        ms(sums[2] / n),
        ms(report.average),
        String::new(),
        String::new(),
        feas.period_ok.to_string(),
        feas.rate_ok.to_string(),
        feas.all_ok().to_string(),
    ])?;
    w.finish()?;
    Ok(feas.all_ok())
}

/// Learning curve, resolved configuration and agent weights.
pub fn write_training(out: &Output, run: &MarlRun, cfg: &MarlConfig) -> Result<()> {
    out.write_json("marl_config.json", cfg)?;
    let mut w = out.csv("curve.csv", &["episode", "epsilon", "reward", "delay_ms", "feasible", "loss"])?;
    for r in &run.curve {
        w.row(&[
            r.episode.to_string(),
            r.epsilon.to_string(),
            r.reward.to_string(),
            ms(r.delay),
            r.feasible.to_string(),
            r.loss.to_string(),
        ])?;
    }
    w.finish()?;
    let weights = out.dir.join("weights");
    std::fs::create_dir_all(&weights)?;
    for (g, agent) in run.agents.iter().enumerate() {
        let file = File::create(weights.join(format!("agent_{g}.bin")))?;
        let mut buf = std::io::BufWriter::new(file);
        agent.online.write_to(&mut buf)?;
        std::io::Write::flush(&mut buf)?;
    }
    Ok(())
}

/// Per-device simulated against analytic delays, plus the attempts histogram.
pub fn write_simulation(out: &Output, scenario: &Scenario, plan: &BlocklengthPlan, stats: &SimStats) -> Result<()> {
    let analytic = delaymodel::evaluate(scenario, plan).ok();
    let mut w = out.csv(
        "simulation.csv",
        &["device", "mean_delay_ms", "std_error_ms", "analytic_delay_ms", "tv_distance", "attempts_per_departure"],
    )?;
    for (k, d) in stats.devices.iter().enumerate() {
        w.row(&[
            k.to_string(),
            ms(d.mean_delay),
            ms(d.std_error),
            analytic.as_ref().map_or(String::new(), |r| ms(r.devices[k].total)),
            d.tv_distance.to_string(),
            joined(&d.attempts_per_departure),
        ])?;
    }
    w.row(&[
        "average".into(),
        ms(stats.mean_delay),
        ms(stats.std_error),
        analytic.as_ref().map_or(String::new(), |r| ms(r.average)),
        String::new(),
        String::new(),
    ])?;
    w.finish()?;
    let mut h = out.csv("attempts.csv", &["attempts", "packets", "collisions_total", "attempts_total", "collision_rate"])?;
    for (i, c) in stats.retx_histogram.iter().enumerate() {
        h.row(&[
            (i + 1).to_string(),
            c.to_string(),
            stats.collisions.to_string(),
            stats.attempts.to_string(),
            stats.collision_rate.to_string(),
        ])?;
    }
    h.finish()
}
