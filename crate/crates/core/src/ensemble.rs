//! Independent histories on a shared (quenched) peer graph.
//!
//! Accumulators hold exact integer sums, so merging partial results is
//! associative and commutative and the statistics do not depend on how the
//! histories were split across threads.

use rayon::prelude::*;

use crate::model::{FundamentalMode, ModelParams};
use crate::network::PeerGraph;
use crate::simulator::{check_inputs, run_history, SimConfig, SimError};

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean_m: Vec<f64>,
    pub stderr_m: Vec<f64>,
    /// `[time][agent]` average of `s_i` over histories.
    pub per_agent_mean: Option<Vec<Vec<f64>>>,
    pub per_agent_stderr: Option<Vec<Vec<f64>>>,
    pub n_histories: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleAccumulator {
    n_agents: usize,
    n_times: usize,
    histories: u64,
    sum_net: Vec<i64>,
    sum_net_sq: Vec<i128>,
    /// `[time * n_agents + agent]` count of `+1`.
    buyers: Option<Vec<u32>>,
}

impl EnsembleAccumulator {
    pub fn new(n_agents: usize, n_times: usize, per_agent: bool) -> Self {
        EnsembleAccumulator {
            n_agents,
            n_times,
            histories: 0,
            sum_net: vec![0; n_times],
            sum_net_sq: vec![0; n_times],
            buyers: per_agent.then(|| vec![0; n_times * n_agents]),
        }
    }

    pub fn histories(&self) -> u64 {
        self.histories
    }

    fn record(&mut self, k: usize, net: i64, spins: &[i8]) {
        self.sum_net[k] += net;
        self.sum_net_sq[k] += (net as i128) * (net as i128);
        if let Some(b) = self.buyers.as_mut() {
            let row = &mut b[k * self.n_agents..(k + 1) * self.n_agents];
            for (c, &s) in row.iter_mut().zip(spins) {
                *c += (s > 0) as u32;
            }
        }
    }

    /// Add one full history given its net demand (and optionally spins) at
    /// every grid time.
    pub fn add_history<'a>(&mut self, samples: impl IntoIterator<Item = (i64, Option<&'a [i8]>)>) {
        for (k, (net, spins)) in samples.into_iter().enumerate() {
            self.sum_net[k] += net;
            self.sum_net_sq[k] += (net as i128) * (net as i128);
            if let (Some(b), Some(s)) = (self.buyers.as_mut(), spins) {
                for (i, &x) in s.iter().enumerate() {
                    b[k * self.n_agents + i] += (x > 0) as u32;
                }
            }
        }
        self.histories += 1;
    }

    pub fn merge(mut self, other: Self) -> Self {
        assert_eq!((self.n_agents, self.n_times), (other.n_agents, other.n_times));
        self.histories += other.histories;
        for (a, b) in self.sum_net.iter_mut().zip(&other.sum_net) {
            *a += b;
        }
        for (a, b) in self.sum_net_sq.iter_mut().zip(&other.sum_net_sq) {
            *a += b;
        }
        match (self.buyers.as_mut(), other.buyers) {
            (Some(a), Some(b)) => a.iter_mut().zip(&b).for_each(|(x, y)| *x += y),
            (None, None) => {}
            _ => panic!("merging accumulators with and without per-agent data"),
        }
        self
    }

    pub fn finish(&self, times: Vec<f64>) -> EnsembleStats {
        let h = self.histories as i128;
        let n = self.n_agents as f64;
        let hf = self.histories as f64;
        let mean_m = self.sum_net.iter().map(|&s| s as f64 / (hf * n)).collect();
        let stderr_m = self
            .sum_net
            .iter()
            .zip(&self.sum_net_sq)
            .map(|(&s1, &s2)| {
                if h < 2 {
                    return 0.0;
                }
                // Exact integer numerator of the sample variance.
                let num = h * s2 - (s1 as i128) * (s1 as i128);
                let var = num as f64 / (hf * (hf - 1.0) * n * n);
                (var.max(0.0) / hf).sqrt()
            })
            .collect();
        let (per_agent_mean, per_agent_stderr) = match &self.buyers {
            Some(b) => {
                let mut means = Vec::with_capacity(self.n_times);
                let mut errs = Vec::with_capacity(self.n_times);
                for row in b.chunks(self.n_agents.max(1)) {
                    let mu: Vec<f64> = row.iter().map(|&c| (2.0 * c as f64 - hf) / hf).collect();
                    let se = mu
                        .iter()
                        .map(|&m| {
                            if h < 2 {
                                0.0
                            } else {
                                // s^2 = 1, so the sample variance is H(1 - mean^2)/(H-1).
                                let var = hf * (1.0 - m * m) / (hf - 1.0);
                                (var.max(0.0) / hf).sqrt()
                            }
                        })
                        .collect();
                    means.push(mu);
                    errs.push(se);
                }
                (Some(means), Some(errs))
            }
            None => (None, None),
        };
        EnsembleStats {
            times,
            mean_m,
            stderr_m,
            per_agent_mean,
            per_agent_stderr,
            n_histories: self.histories,
        }
    }
}

/// Run `n_histories` independent histories; history `h` uses
/// `config.seed` with ChaCha stream `h`. Per-agent means are collected when
/// `config.record_agents` is set. Runs on the current rayon pool.
pub fn run_ensemble(
    params: &ModelParams,
    mode: &FundamentalMode,
    graph: &PeerGraph,
    config: &SimConfig,
    n_histories: u64,
) -> Result<EnsembleStats, SimError> {
    if n_histories == 0 {
        return Err(SimError::NoHistories);
    }
    check_inputs(params, mode, graph, config)?;
    let grid = config.grid();
    let n = params.n_agents;
    let per_agent = config.record_agents;
    let empty = || EnsembleAccumulator::new(n, grid.len(), per_agent);
    let acc = (0..n_histories)
        .into_par_iter()
        .map(|h| {
            let cfg = SimConfig { stream: h, ..*config };
            let mut acc = empty();
            run_history(params, mode, graph, &cfg, &grid, |s| {
                acc.record(s.index, s.net, s.spins)
            });
            acc.histories = 1;
            acc
        })
        .reduce(empty, EnsembleAccumulator::merge);
    Ok(acc.finish(grid))
}
