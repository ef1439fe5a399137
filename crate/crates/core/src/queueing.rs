//! Poisson arrivals and the per-device queue-length Markov chain.
//!
//! State `0` is idle; state `m >= 1` holds `m` packets. From idle a batch of
//! `a` packets arrives with the truncated Poisson probability; from state `m`
//! the head-of-line packet leaves with its success probability. Batches never
//! join a non-empty queue.
//!
//! The stationary vector is available both through the product/sum closed
//! form and through a direct solve of the balance equations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when rounding the mean load up, so that loads such as
/// `600/s * 5 ms` evaluate to 3 rather than 4.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalModel {
    /// Packets per second.
    pub rate: f64,
    /// Period duration in seconds.
    pub horizon: f64,
}

impl ArrivalModel {
    pub fn new(rate: f64, horizon: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::domain("rate", rate, "must be non-negative"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain("horizon", horizon, "must be positive"));
        }
        Ok(Self { rate, horizon })
    }

    /// Expected arrivals per period, `rate * horizon`.
    pub fn mean_load(&self) -> f64 {
        self.rate * self.horizon
    }
}

/// Where the probability of batches larger than the queue capacity goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// Oversized batches are lost and the device stays idle. This is the
    /// chain solved by the closed form.
    #[default]
    FoldIntoIdle,
    /// Oversized batches fill the queue to capacity; the rest is discarded.
    CapAtMax,
}

/// Poisson probability of `a` arrivals in one period, evaluated in log space.
pub fn arrival_pmf(model: &ArrivalModel, a: usize) -> f64 {
    let load = model.mean_load();
    if load == 0.0 {
        return if a == 0 { 1.0 } else { 0.0 };
    }
    let ln_fact: f64 = (2..=a).map(|i| (i as f64).ln()).sum();
    (a as f64 * load.ln() - load - ln_fact).exp()
}

/// Queue capacity: the Poisson mean rounded up.
pub fn max_queue_length(model: &ArrivalModel) -> usize {
    let load = model.mean_load();
    if load <= 0.0 {
        return 0;
    }
    (load * (1.0 - CEIL_SLACK)).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueChain {
    pub max_len: usize,
    /// `p_gen(0..=max_len)`, truncated but not renormalised.
    pub gen_pmf: Vec<f64>,
    /// Success probability of the head-of-line packet in states `1..=max_len`.
    pub suc_probs: Vec<f64>,
    /// Row-stochastic transition matrix of size `(max_len + 1)^2`, row major.
    pub transition: Vec<f64>,
    pub steady: Vec<f64>,
    pub tail_mode: TailMode,
}

impl QueueChain {
    pub fn size(&self) -> usize {
        self.max_len + 1
    }

    pub fn transition_at(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.size() + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let n = self.size();
        &self.transition[from * n..(from + 1) * n]
    }
}

/// Builds the chain for `model` with per-state success probabilities and
/// solves for its stationary vector.
pub fn build_chain(model: &ArrivalModel, suc_probs: &[f64], tail_mode: TailMode) -> Result<QueueChain> {
    let max_len = max_queue_length(model);
    if suc_probs.len() != max_len {
        return Err(Error::Shape {
            expected: max_len,
            got: suc_probs.len(),
        });
    }
    for (i, &p) in suc_probs.iter().enumerate() {
        if p == 0.0 {
            return Err(Error::InfeasibleLink { device: 0, packet: i + 1 });
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::domain("suc_prob", p, "must lie in (0, 1]"));
        }
    }
    let gen_pmf: Vec<f64> = (0..=max_len).map(|a| arrival_pmf(model, a)).collect();
    let n = max_len + 1;
    let mut transition = vec![0.0; n * n];
    let batch_mass: f64 = gen_pmf[1..].iter().sum();
    for m in 1..n {
        transition[m] = gen_pmf[m];
    }
    match tail_mode {
        TailMode::FoldIntoIdle => transition[0] = 1.0 - batch_mass,
        TailMode::CapAtMax => {
            transition[0] = gen_pmf[0];
            if max_len > 0 {
                transition[max_len] += 1.0 - gen_pmf[0] - batch_mass;
            }
        }
    }
    for m in 1..n {
        let p = suc_probs[m - 1];
        transition[m * n + m - 1] = p;
        transition[m * n + m] = 1.0 - p;
    }
    let mut chain = QueueChain {
        max_len,
        gen_pmf,
        suc_probs: suc_probs.to_vec(),
        transition,
        steady: Vec::new(),
        tail_mode,
    };
    chain.steady = match tail_mode {
        TailMode::FoldIntoIdle => steady_state_closed_form(&chain)?,
        TailMode::CapAtMax => steady_state_solve(&chain)?,
    };
    Ok(chain)
}

/// Product/sum closed form of the stationary vector. Only valid for
/// [`TailMode::FoldIntoIdle`].
pub fn steady_state_closed_form(chain: &QueueChain) -> Result<Vec<f64>> {
    let m_max = chain.max_len;
    if m_max == 0 {
        return Ok(vec![1.0]);
    }
    if let Some(i) = chain.suc_probs.iter().position(|&p| p <= 0.0) {
        return Err(Error::InfeasibleLink { device: 0, packet: i + 1 });
    }
    // tail[m] = sum_{l=m}^{M} p_gen(l)
    let mut tail = vec![0.0; m_max + 2];
    for m in (1..=m_max).rev() {
        tail[m] = tail[m + 1] + chain.gen_pmf[m];
    }
    let s = &chain.suc_probs;
    let pi0 = if m_max <= 20 {
        let prod_all: f64 = s.iter().product();
        let sum: f64 = (1..=m_max)
            .map(|j| {
                let prod_others: f64 = s
                    .iter()
                    .enumerate()
                    .filter(|&(r, _)| r + 1 != j)
                    .map(|(_, &p)| p)
                    .product();
                prod_others * tail[j]
            })
            .sum();
        prod_all / (prod_all + sum)
    } else {
        // log space: each bracketed term divided by the full product is tail[j] / s_j
        let ln_prod_all: f64 = s.iter().map(|p| p.ln()).sum();
        let ln_terms: Vec<f64> = (1..=m_max)
            .filter(|&j| tail[j] > 0.0)
            .map(|j| ln_prod_all - s[j - 1].ln() + tail[j].ln())
            .collect();
        let top = ln_terms.iter().cloned().fold(ln_prod_all, f64::max);
        let denom = (ln_prod_all - top).exp() + ln_terms.iter().map(|t| (t - top).exp()).sum::<f64>();
        (ln_prod_all - top).exp() / denom
    };
    let mut pi = Vec::with_capacity(m_max + 1);
    pi.push(pi0);
    for m in 1..=m_max {
        pi.push(pi0 * tail[m] / s[m - 1]);
    }
    Ok(pi)
}

/// Stationary vector from the balance equations `pi P = pi`, with one
/// equation replaced by normalisation, solved by Gaussian elimination with
/// partial pivoting.
pub fn steady_state_solve(chain: &QueueChain) -> Result<Vec<f64>> {
    let n = chain.size();
    // rows: (P^T - I) pi = 0, last row replaced by sum(pi) = 1
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = chain.transition_at(j, i) - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1) * n + j] = 1.0;
    }
    b[n - 1] = 1.0;
    solve_dense(&mut a, &mut b, n).ok_or(Error::Singular(n))?;
    Ok(b)
}

fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row * n + j] * b[j];
        }
        b[row] = acc / a[row * n + row];
    }
    Some(())
}

/// Stationary vector by repeated multiplication from `start`.
pub fn steady_state_power(chain: &QueueChain, start: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = chain.size();
    let mut pi = start.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..max_iter {
        next.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            for j in 0..n {
                next[j] += pi[i] * chain.transition_at(i, j);
            }
        }
        let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff < tol {
            break;
        }
    }
    pi
}

/// Total-variation distance between two distributions on the same support.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
