//! Grant-free preamble contention and retransmission statistics.
//!
//! All `K` devices are assumed to contend in every attempt (binomial
//! approximation). The simulator's protocol mode measures how far this is from
//! contention among active devices only.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentionConfig {
    pub device_count: u32,
    pub preamble_count: u32,
}

impl ContentionConfig {
    pub fn new(device_count: u32, preamble_count: u32) -> Result<Self> {
        if device_count < 1 {
            return Err(Error::domain("device_count", device_count as f64, "must be >= 1"));
        }
        if preamble_count < 1 {
            return Err(Error::domain("preamble_count", preamble_count as f64, "must be >= 1"));
        }
        Ok(Self {
            device_count,
            preamble_count,
        })
    }
}

/// Access statistics of one packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessPoint {
    pub p_one: f64,
    pub p_err: f64,
    pub p_suc: f64,
    pub expected_retx: f64,
}

impl AccessPoint {
    pub fn new(p_one: f64, p_err: f64) -> Result<Self> {
        let p_suc = p_success(p_one, p_err)?;
        Ok(Self {
            p_one,
            p_err,
            p_suc,
            expected_retx: expected_retransmissions(p_suc)?,
        })
    }
}

/// Probability that a given preamble is picked by exactly one device.
pub fn p_single_preamble(cfg: ContentionConfig) -> f64 {
    let m = cfg.preamble_count as f64;
    (1.0 / m) * p_no_collision(cfg)
}

/// Probability that a device's preamble is not picked by any other device.
pub fn p_no_collision(cfg: ContentionConfig) -> f64 {
    let m = cfg.preamble_count as f64;
    let others = (cfg.device_count - 1) as i32;
    if cfg.preamble_count == 1 {
        return if others == 0 { 1.0 } else { 0.0 };
    }
    // (1 - 1/M)^(K-1) via log1p keeps precision for large M
    (others as f64 * (-1.0 / m).ln_1p()).exp()
}

fn check_prob(what: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(what, p, "must lie in [0, 1]"));
    }
    Ok(())
}

/// Unique preamble and no decoding error.
pub fn p_success(p_one: f64, p_err: f64) -> Result<f64> {
    check_prob("p_one", p_one)?;
    check_prob("p_err", p_err)?;
    Ok(p_one * (1.0 - p_err))
}

/// Geometric law of the number of attempts until success.
pub fn retransmission_pmf(p_suc: f64, attempts: u64) -> Result<f64> {
    if !(p_suc > 0.0 && p_suc <= 1.0) {
        return Err(Error::domain("p_suc", p_suc, "must lie in (0, 1]"));
    }
    if attempts < 1 {
        return Err(Error::domain("attempts", attempts as f64, "must be >= 1"));
    }
    Ok(p_suc * (1.0 - p_suc).powf((attempts - 1) as f64))
}

/// Mean of the geometric attempt count, `1 / p_suc`.
pub fn expected_retransmissions(p_suc: f64) -> Result<f64> {
    if !(p_suc > 0.0 && p_suc <= 1.0) {
        return Err(Error::domain("p_suc", p_suc, "must lie in (0, 1]"));
    }
    Ok(1.0 / p_suc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(k: u32, m: u32) -> ContentionConfig {
        ContentionConfig::new(k, m).unwrap()
    }

    /// Fraction of the `m^k` preamble assignments in which device 0 is alone.
    fn enumerate_no_collision(k: u32, m: u32) -> f64 {
        let total = (m as u64).pow(k);
        let mut alone = 0u64;
        for code in 0..total {
            let mut c = code;
            let first = c % m as u64;
            let mut unique = true;
            for _ in 1..k {
                c /= m as u64;
                if c % m as u64 == first {
                    unique = false;
                }
            }
            if unique {
                alone += 1;
            }
        }
        alone as f64 / total as f64
    }

    #[test]
    fn single_preamble_examples() {
        assert!((p_single_preamble(cfg(1, 5)) - 0.2).abs() < 1e-15);
        assert!((p_single_preamble(cfg(2, 2)) - 0.25).abs() < 1e-15);
        assert_eq!(p_single_preamble(cfg(2, 1)), 0.0);
    }

    #[test]
    fn no_collision_examples() {
        for m in 1..10 {
            assert_eq!(p_no_collision(cfg(1, m)), 1.0);
        }
        assert!((p_no_collision(cfg(500, 500)) - 0.36824775035787465).abs() < 1e-12);
        assert!((p_no_collision(cfg(2, 2)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_collision_matches_enumeration() {
        for k in 1..=4 {
            for m in 1..=4 {
                let got = p_no_collision(cfg(k, m));
                let want = enumerate_no_collision(k, m);
                assert!((got - want).abs() < 1e-12, "K={k} M={m}: {got} vs {want}");
                assert!((m as f64 * p_single_preamble(cfg(k, m)) - got).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn no_collision_monotone() {
        for k in 1..60 {
            for m in 2..60 {
                assert!(p_no_collision(cfg(k + 1, m)) < p_no_collision(cfg(k, m)));
                if k > 1 {
                    assert!(p_no_collision(cfg(k, m + 1)) > p_no_collision(cfg(k, m)));
                }
            }
        }
    }

    #[test]
    fn success_examples() {
        assert!((p_success(0.9, 0.1).unwrap() - 0.81).abs() < 1e-15);
        assert_eq!(p_success(0.3, 1.0).unwrap(), 0.0);
        assert_eq!(p_success(1.0, 0.0).unwrap(), 1.0);
        assert!(p_success(1.1, 0.0).is_err());
        let ap = AccessPoint::new(0.5, 0.2).unwrap();
        assert!((ap.p_suc - 0.4).abs() < 1e-15);
        assert!((ap.expected_retx - 2.5).abs() < 1e-15);
        assert!(AccessPoint::new(0.5, 1.0).is_err());
    }

    #[test]
    fn retransmission_pmf_examples() {
        assert!((retransmission_pmf(0.5, 3).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(retransmission_pmf(1.0, 1).unwrap(), 1.0);
        let total: f64 = (1..=60).map(|x| retransmission_pmf(0.2, x).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-5);
        assert!(retransmission_pmf(0.5, 0).is_err());
        assert!(retransmission_pmf(0.0, 1).is_err());
        assert!(retransmission_pmf(1.2, 1).is_err());
    }

    #[test]
    fn expected_retransmission_examples() {
        assert_eq!(expected_retransmissions(0.5).unwrap(), 2.0);
        assert_eq!(expected_retransmissions(0.2).unwrap(), 5.0);
        assert_eq!(expected_retransmissions(1.0).unwrap(), 1.0);
        assert!(expected_retransmissions(0.0).is_err());
    }

    proptest! {
        #[test]
        fn retx_times_p_is_one(p in 1e-6f64..=1.0) {
            let e = expected_retransmissions(p).unwrap();
            prop_assert!((e * p - 1.0).abs() <= 2.0 * f64::EPSILON);
        }
    }
}
