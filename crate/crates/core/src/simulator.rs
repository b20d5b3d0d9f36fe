//! Exact event-driven simulation of the agent market.
//!
//! Each agent revises its position at the ticks of a unit-rate Poisson
//! clock. The superposition is a single clock of rate `n` with the deciding
//! agent drawn uniformly, which is what the loop below runs. Between events
//! the excess demand is constant, so the log price moves linearly with slope
//! `lambda * m` and every grid sample is an exact interpolation.
//!
//! At a decision agent `i` draws `x ~ U[-theta, theta]` and buys iff
//!
//! ```text
//! kappa * mean_{j in J(i)} s_j + P_f + x - P >= 0
//! ```
//!
//! with the price taken just before the decision (ties buy).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::model::{validate_for_simulation, FundamentalMode, ModelError, ModelParams};
use crate::network::PeerGraph;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("graph has {graph} nodes but n_agents = {params}")]
    SizeMismatch { graph: usize, params: usize },
    #[error("t_max must be positive and finite (got {0})")]
    BadHorizon(f64),
    #[error("sample_dt must be positive and finite (got {0})")]
    BadSampleStep(f64),
    #[error("|m0| must be <= 1 (got {0})")]
    BadInitialDemand(f64),
    #[error("spins must be +1 or -1 (found {0})")]
    BadSpin(i8),
    #[error("need at least one history")]
    NoHistories,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentStates {
    spins: Vec<i8>,
}

impl AgentStates {
    pub fn new(spins: Vec<i8>) -> Result<Self, SimError> {
        if let Some(&bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(SimError::BadSpin(bad));
        }
        Ok(AgentStates { spins })
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    /// Buyers minus sellers.
    pub fn net_demand(&self) -> i64 {
        self.spins.iter().map(|&s| s as i64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.net_demand() as f64 / self.len() as f64
    }
}

/// Uniform valuation noise on `[-half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub half_width: f64,
}

impl NoiseModel {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(-self.half_width..=self.half_width)
    }
}

/// Independent spins with `P(s = +1) = (1 + m0)/2`.
pub fn init_states_with<R: Rng + ?Sized>(n: usize, m0: f64, rng: &mut R) -> Result<AgentStates, SimError> {
    if !(m0.abs() <= 1.0) {
        return Err(SimError::BadInitialDemand(m0));
    }
    let p = 0.5 * (1.0 + m0);
    let spins = (0..n).map(|_| if rng.random::<f64>() < p { 1 } else { -1 }).collect();
    Ok(AgentStates { spins })
}

pub fn init_states(n: usize, m0: f64, seed: u64) -> Result<AgentStates, SimError> {
    init_states_with(n, m0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub t_max: f64,
    pub sample_dt: f64,
    pub seed: u64,
    /// ChaCha stream id; ensembles give history `h` stream `h`.
    pub stream: u64,
    /// Track the first grid time with `|P - P_f| > theta - kappa`.
    pub record_validity: bool,
    /// Keep a copy of every spin at every grid time.
    pub record_agents: bool,
}

impl SimConfig {
    pub fn new(t_max: f64, sample_dt: f64, seed: u64) -> Self {
        SimConfig {
            t_max,
            sample_dt,
            seed,
            stream: 0,
            record_validity: true,
            record_agents: false,
        }
    }

    pub(crate) fn check(&self) -> Result<(), SimError> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(SimError::BadHorizon(self.t_max));
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return Err(SimError::BadSampleStep(self.sample_dt));
        }
        Ok(())
    }

    /// Sample times `0, dt, 2dt, ...` up to and including `t_max` (with a
    /// little slack so that `t_max = k dt` is not lost to rounding).
    pub fn grid(&self) -> Vec<f64> {
        let last = (self.t_max / self.sample_dt * (1.0 + 1e-12)).floor() as usize;
        (0..=last).map(|k| k as f64 * self.sample_dt).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_agents: usize,
    pub times: Vec<f64>,
    pub m_bar: Vec<f64>,
    pub net_demand: Vec<i64>,
    pub price: Vec<f64>,
    pub pf: Vec<f64>,
    pub events: u64,
    pub validity_exit: Option<f64>,
    pub snapshots: Option<Vec<Vec<i8>>>,
}

/// What a history reports at each grid time.
pub(crate) struct Sample<'a> {
    pub index: usize,
    pub time: f64,
    pub spins: &'a [i8],
    pub net: i64,
    pub price: f64,
}

pub(crate) fn check_inputs(
    params: &ModelParams,
    mode: &FundamentalMode,
    graph: &PeerGraph,
    config: &SimConfig,
) -> Result<(), SimError> {
    validate_for_simulation(params, mode).into_result()?;
    if graph.n() != params.n_agents {
        return Err(SimError::SizeMismatch {
            graph: graph.n(),
            params: params.n_agents,
        });
    }
    config.check()
}

/// Run one history, calling `observe` at every grid time. Returns the
/// number of decisions made. Inputs must already be checked.
pub(crate) fn run_history(
    params: &ModelParams,
    mode: &FundamentalMode,
    graph: &PeerGraph,
    config: &SimConfig,
    grid: &[f64],
    mut observe: impl FnMut(Sample<'_>),
) -> u64 {
    let n = params.n_agents;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.stream);
    let mut spins = init_states_with(n, params.m0, &mut rng)
        .expect("m0 checked by validation")
        .spins;
    let mut net: i64 = spins.iter().map(|&s| s as i64).sum();
    let noise = NoiseModel {
        half_width: params.theta,
    };
    let clock = Exp::new(n as f64).expect("n >= 2");
    let lists = graph.peer_lists();
    let inv_n = 1.0 / n as f64;

    let mut t = 0.0;
    let mut price = params.p0;
    let mut next = 0;
    let mut events = 0u64;
    loop {
        let wait = clock.sample(&mut rng);
        let t_next = t + wait;
        let m = net as f64 * inv_n;
        while next < grid.len() && grid[next] < t_next {
            observe(Sample {
                index: next,
                time: grid[next],
                spins: &spins,
                net,
                price: price + params.lambda * m * (grid[next] - t),
            });
            next += 1;
        }
        if next == grid.len() {
            break;
        }
        price += params.lambda * m * wait;
        t = t_next;

        let i = rng.random_range(0..n);
        let x = noise.sample(&mut rng);
        let (sum, count) = match lists {
            None => (net - spins[i] as i64, n - 1),
            Some(l) => (l[i].iter().map(|&j| spins[j as usize] as i64).sum(), l[i].len()),
        };
        let social = params.kappa * (sum as f64 / count as f64);
        let s_new: i8 = if social + mode.pf(price) + x - price >= 0.0 {
            1
        } else {
            -1
        };
        if s_new != spins[i] {
            net += 2 * s_new as i64;
            spins[i] = s_new;
        }
        events += 1;
    }
    assert!(price.is_finite(), "price diverged");
    events
}

pub fn simulate(
    params: &ModelParams,
    mode: &FundamentalMode,
    graph: &PeerGraph,
    config: &SimConfig,
) -> Result<Trajectory, SimError> {
    check_inputs(params, mode, graph, config)?;
    let grid = config.grid();
    let len = grid.len();
    let n = params.n_agents;
    let band = params.theta - params.kappa;
    let mut tr = Trajectory {
        n_agents: n,
        times: grid.clone(),
        m_bar: Vec::with_capacity(len),
        net_demand: Vec::with_capacity(len),
        price: Vec::with_capacity(len),
        pf: Vec::with_capacity(len),
        events: 0,
        validity_exit: None,
        snapshots: config.record_agents.then(|| Vec::with_capacity(len)),
    };
    tr.events = run_history(params, mode, graph, config, &grid, |s| {
        let pf = mode.pf(s.price);
        tr.m_bar.push(s.net as f64 / n as f64);
        tr.net_demand.push(s.net);
        tr.price.push(s.price);
        tr.pf.push(pf);
        if config.record_validity && tr.validity_exit.is_none() && (s.price - pf).abs() > band {
            tr.validity_exit = Some(s.time);
        }
        if let Some(snaps) = tr.snapshots.as_mut() {
            snaps.push(s.spins.to_vec());
        }
    });
    Ok(tr)
}

/// Deterministic window on which every case-A realisation keeps
/// `|P - P_f| <= theta - kappa`: the gap starts at `|gamma|` and moves at
/// speed at most `lambda`.
pub fn t_star_lower_bound(params: &ModelParams) -> f64 {
    if params.theta <= params.kappa {
        return 0.0;
    }
    ((params.theta - params.kappa - params.gamma.abs()) / params.lambda).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{fully_connected, random_regular_undirected, ring_lattice};
    use proptest::prelude::*;

    fn params(n: usize) -> ModelParams {
        ModelParams {
            lambda: 0.5,
            theta: 1.0,
            kappa: 0.4,
            gamma: 0.1,
            p0: 0.2,
            m0: 0.3,
            n_agents: n,
        }
    }

    #[test]
    fn degenerate_initial_states() {
        assert!(init_states(100, 1.0, 1).unwrap().spins().iter().all(|&s| s == 1));
        assert!(init_states(100, -1.0, 1).unwrap().spins().iter().all(|&s| s == -1));
        assert!(init_states(10, 1.5, 1).is_err());
        assert!(AgentStates::new(vec![1, 0]).is_err());
    }

    #[test]
    fn balanced_initial_states() {
        // Binomial 3-sigma: |mean| <= 3/sqrt(n) for all but ~0.3% of seeds.
        let bad = (0..400)
            .filter(|&seed| init_states(10_000, 0.0, seed).unwrap().mean().abs() > 0.03)
            .count();
        assert!(bad <= 4, "{bad} of 400 seeds outside 3 sigma");
    }

    #[test]
    fn frozen_price_without_feedback() {
        let p = ModelParams {
            lambda: 0.0,
            ..params(50)
        };
        let g = fully_connected(50).unwrap();
        let tr = simulate(&p, &FundamentalMode::constant(&p), &g, &SimConfig::new(5.0, 0.1, 3)).unwrap();
        assert!(tr.price.iter().all(|&x| x == p.p0));
        assert_eq!(tr.times.len(), 51);
        assert!((tr.times[50] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_invariants() {
        let p = params(40);
        let g = ring_lattice(40, 2).unwrap();
        let tr = simulate(&p, &FundamentalMode::constant(&p), &g, &SimConfig::new(10.0, 0.01, 11)).unwrap();
        assert!(tr.m_bar.iter().all(|m| m.abs() <= 1.0));
        for k in 1..tr.times.len() {
            let slope = (tr.price[k] - tr.price[k - 1]) / (tr.times[k] - tr.times[k - 1]);
            assert!(slope.abs() <= p.lambda * (1.0 + 1e-9));
            assert_eq!((tr.net_demand[k] - tr.net_demand[k - 1]).rem_euclid(2), 0);
        }
        assert!(tr.pf.iter().all(|&x| x == p.p0 - p.gamma));
    }

    #[test]
    fn determinism_and_streams() {
        let p = params(60);
        let g = random_regular_undirected(60, 4, 2).unwrap();
        let mode = FundamentalMode::constant(&p);
        let cfg = SimConfig::new(4.0, 0.05, 99);
        let a = simulate(&p, &mode, &g, &cfg).unwrap();
        let b = simulate(&p, &mode, &g, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate(&p, &mode, &g, &SimConfig { stream: 1, ..cfg }).unwrap();
        assert_ne!(a.m_bar, c.m_bar);
    }

    #[test]
    fn implicit_and_explicit_complete_graphs_agree() {
        let p = params(30);
        let g = fully_connected(30).unwrap();
        let mode = FundamentalMode::follow(&p);
        let cfg = SimConfig::new(6.0, 0.1, 5);
        let a = simulate(&p, &mode, &g, &cfg).unwrap();
        let b = simulate(&p, &mode, &g.to_explicit(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn event_rate_is_one_per_agent() {
        // events ~ Poisson(n T): relative deviation within 3/sqrt(nT) for
        // all but ~0.3% of seeds.
        let p = params(100);
        let g = fully_connected(100).unwrap();
        let mode = FundamentalMode::constant(&p);
        let bad = (0..100)
            .filter(|&seed| {
                let tr = simulate(&p, &mode, &g, &SimConfig::new(20.0, 1.0, seed)).unwrap();
                let want = 100.0 * 20.0;
                (tr.events as f64 / want - 1.0).abs() > 3.0 / want.sqrt()
            })
            .count();
        assert!(bad <= 2, "{bad} seeds off");
    }

    #[test]
    fn validity_exit_is_recorded() {
        let p = ModelParams {
            gamma: 0.58,
            m0: 0.9,
            lambda: 1.0,
            ..params(200)
        };
        let g = fully_connected(200).unwrap();
        let tr = simulate(&p, &FundamentalMode::constant(&p), &g, &SimConfig::new(3.0, 0.01, 1)).unwrap();
        let exit = tr.validity_exit.unwrap();
        assert!(exit >= t_star_lower_bound(&p) - 1e-12);
        assert!(exit < 0.5);
    }

    #[test]
    fn size_mismatch_and_bad_config() {
        let p = params(10);
        let mode = FundamentalMode::constant(&p);
        let g = fully_connected(11).unwrap();
        assert!(matches!(
            simulate(&p, &mode, &g, &SimConfig::new(1.0, 0.1, 0)),
            Err(SimError::SizeMismatch { .. })
        ));
        let g = fully_connected(10).unwrap();
        assert!(simulate(&p, &mode, &g, &SimConfig::new(0.0, 0.1, 0)).is_err());
        assert!(simulate(&p, &mode, &g, &SimConfig::new(1.0, -0.1, 0)).is_err());
    }

    #[test]
    fn lower_bound_examples() {
        let p = ModelParams {
            lambda: 1.0,
            theta: 1.0,
            kappa: 0.5,
            gamma: 0.0,
            p0: 0.0,
            m0: 0.0,
            n_agents: 2,
        };
        assert_eq!(t_star_lower_bound(&p), 0.5);
        assert_eq!(t_star_lower_bound(&ModelParams { gamma: -0.75, ..p }), 0.0);
        assert!(t_star_lower_bound(&ModelParams { lambda: 1e-300, ..p }) > 1e290);
        assert_eq!(t_star_lower_bound(&ModelParams { kappa: 1.0, ..p }), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn freeze_is_absorbing(seed in any::<u64>(), g in -1.5f64..-0.6, kappa in 0.3f64..0.9) {
            let p = ModelParams { lambda: 1.0, theta: 1.0, kappa, gamma: g, p0: 0.0, m0: 0.0, n_agents: 100 };
            let graph = fully_connected(100).unwrap();
            let tr = simulate(&p, &FundamentalMode::follow(&p), &graph, &SimConfig::new(6.0, 0.01, seed)).unwrap();
            // With a complete graph the peer mean differs from m_bar by at
            // most 2/(n-1), hence the margin.
            let margin = 2.0 * kappa / 99.0;
            if let Some(k0) = tr.m_bar.iter().position(|&m| kappa * m - g >= 1.0 + margin) {
                prop_assert!(tr.m_bar[k0..].windows(2).all(|w| w[1] >= w[0]));
            }
        }

        #[test]
        fn states_are_spins(n in 2usize..200, m0 in -1.0f64..1.0, seed in any::<u64>()) {
            let s = init_states(n, m0, seed).unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert!(s.spins().iter().all(|&x| x == 1 || x == -1));
        }
    }
}
