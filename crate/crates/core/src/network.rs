//! Peer graphs: who influences whom.
//!
//! `peers(i)` is the peer group J(i), i.e. the agents whose current positions
//! enter agent i's social term. Complete graphs are stored implicitly so that
//! n = 10^4 does not cost 10^8 adjacency entries.

use std::fmt;
use std::io::{self, BufRead, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Restart budget for the random-regular pairing.
pub const MAX_RESTARTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Adjacency {
    Complete,
    Lists(Vec<Vec<u32>>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerGraph {
    n: usize,
    directed: bool,
    adjacency: Adjacency,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("a peer graph needs at least 2 nodes (got {0})")]
    TooFewNodes(usize),
    #[error("connectivity {nu} is out of range for {n} nodes")]
    DegreeOutOfRange { n: usize, nu: usize },
    #[error("n * nu must be even for an undirected regular graph (n = {n}, nu = {nu})")]
    OddDegreeSum { n: usize, nu: usize },
    #[error("ring lattice needs 1 <= k <= (n-1)/2 (n = {n}, k = {k})")]
    RingOutOfRange { n: usize, k: usize },
    #[error("random regular construction failed after {0} restarts")]
    ConstructionFailed(usize),
    #[error("edge list line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphViolation {
    #[error("lonely trader at node {0}")]
    LonelyTrader(usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("node {node} lists peer {peer} more than once")]
    DuplicatePeer { node: usize, peer: usize },
    #[error("node {node} lists peer {peer}, which is out of range")]
    OutOfRange { node: usize, peer: usize },
    #[error("graph is flagged undirected but {peer} influences {node} and not the reverse")]
    Asymmetric { node: usize, peer: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GraphReport {
    pub violations: Vec<GraphViolation>,
}

impl GraphReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Iterator over one peer group.
pub enum Peers<'a> {
    Complete { next: usize, skip: usize, n: usize },
    List(std::slice::Iter<'a, u32>),
}

impl Iterator for Peers<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            Peers::Complete { next, skip, n } => {
                if *next == *skip {
                    *next += 1;
                }
                if *next >= *n {
                    return None;
                }
                let j = *next;
                *next += 1;
                Some(j)
            }
            Peers::List(it) => it.next().map(|&j| j as usize),
        }
    }
}

impl PeerGraph {
    /// Build from explicit peer lists. Lists are sorted; nothing else is
    /// checked here — run [`validate_graph`] on untrusted input.
    pub fn from_peer_lists(mut lists: Vec<Vec<u32>>, directed: bool) -> Self {
        for l in &mut lists {
            l.sort_unstable();
        }
        PeerGraph {
            n: lists.len(),
            directed,
            adjacency: Adjacency::Lists(lists),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.adjacency, Adjacency::Complete)
    }

    pub fn peers(&self, i: usize) -> Peers<'_> {
        match &self.adjacency {
            Adjacency::Complete => Peers::Complete {
                next: 0,
                skip: i,
                n: self.n,
            },
            Adjacency::Lists(l) => Peers::List(l[i].iter()),
        }
    }

    pub fn peer_count(&self, i: usize) -> usize {
        match &self.adjacency {
            Adjacency::Complete => self.n - 1,
            Adjacency::Lists(l) => l[i].len(),
        }
    }

    /// Explicit peer lists, or `None` for the implicit complete graph.
    pub fn peer_lists(&self) -> Option<&[Vec<u32>]> {
        match &self.adjacency {
            Adjacency::Complete => None,
            Adjacency::Lists(l) => Some(l),
        }
    }

    /// Materialise a complete graph as explicit lists (mainly for testing the
    /// two storage paths against each other).
    pub fn to_explicit(&self) -> PeerGraph {
        let lists = (0..self.n).map(|i| self.peers(i).map(|j| j as u32).collect()).collect();
        PeerGraph {
            n: self.n,
            directed: self.directed,
            adjacency: Adjacency::Lists(lists),
        }
    }

    /// Text edge list: a header `n directed|undirected`, then one `i j` line
    /// per bond j -> i (j in J(i)).
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> io::Result<()> {
        let kind = if self.directed { "directed" } else { "undirected" };
        writeln!(w, "{} {}", self.n, kind)?;
        for i in 0..self.n {
            for j in self.peers(i) {
                writeln!(w, "{i} {j}")?;
            }
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(r: R) -> Result<PeerGraph, GraphError> {
        let mut lines = r.lines().enumerate();
        let (n, directed) = match lines.next() {
            Some((_, header)) => {
                let header = header?;
                let mut parts = header.split_whitespace();
                let n = parts
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(1, "header must start with the node count"))?;
                let directed = match parts.next() {
                    Some("directed") => true,
                    Some("undirected") => false,
                    _ => return Err(parse_err(1, "header must say directed or undirected")),
                };
                (n, directed)
            }
            None => return Err(parse_err(1, "empty edge list")),
        };
        let mut lists = vec![Vec::new(); n];
        for (k, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace().map(str::parse::<usize>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(i)), Some(Ok(j)), None) if i < n && j < n => lists[i].push(j as u32),
                _ => return Err(parse_err(k + 1, &format!("bad bond {line:?}"))),
            }
        }
        Ok(PeerGraph::from_peer_lists(lists, directed))
    }
}

fn parse_err(line: usize, msg: &str) -> GraphError {
    GraphError::Parse {
        line,
        msg: msg.to_string(),
    }
}

pub fn fully_connected(n: usize) -> Result<PeerGraph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    Ok(PeerGraph {
        n,
        directed: false,
        adjacency: Adjacency::Complete,
    })
}

/// Uniform-degree undirected graph.
///
/// Stubs are paired one edge at a time, rejecting only the offending pair
/// (self-loop or repeated edge) rather than the whole matching; a dead end
/// restarts the pairing. Whole-matching rejection accepts with probability
/// about exp(-(nu^2-1)/4), which is ~1e-4 at nu = 6 and too small for a
/// bounded retry budget.
pub fn random_regular_undirected(n: usize, nu: usize, seed: u64) -> Result<PeerGraph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    if nu == 0 || nu >= n {
        return Err(GraphError::DegreeOutOfRange { n, nu });
    }
    if !(n * nu).is_multiple_of(2) {
        return Err(GraphError::OddDegreeSum { n, nu });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RESTARTS {
        if let Some(lists) = pair_stubs(n, nu, &mut rng) {
            return Ok(PeerGraph::from_peer_lists(lists, false));
        }
    }
    Err(GraphError::ConstructionFailed(MAX_RESTARTS))
}

fn pair_stubs(n: usize, nu: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<u32>>> {
    const QUICK_TRIES: usize = 64;
    let mut stubs: Vec<u32> = (0..n as u32).flat_map(|v| std::iter::repeat_n(v, nu)).collect();
    let mut adj: Vec<Vec<u32>> = vec![Vec::with_capacity(nu); n];
    let admissible = |adj: &[Vec<u32>], u: u32, v: u32| u != v && !adj[u as usize].contains(&v);

    while !stubs.is_empty() {
        let len = stubs.len();
        let mut pick = None;
        for _ in 0..QUICK_TRIES {
            let i = rng.random_range(0..len);
            let j = rng.random_range(0..len);
            if i != j && admissible(&adj, stubs[i], stubs[j]) {
                pick = Some((i, j));
                break;
            }
        }
        if pick.is_none() {
            // Few stubs left: enumerate what is still possible.
            let options: Vec<(usize, usize)> = (0..len)
                .flat_map(|i| (i + 1..len).map(move |j| (i, j)))
                .filter(|&(i, j)| admissible(&adj, stubs[i], stubs[j]))
                .collect();
            if options.is_empty() {
                return None;
            }
            pick = Some(options[rng.random_range(0..options.len())]);
        }
        let (i, j) = pick.unwrap();
        let (u, v) = (stubs[i], stubs[j]);
        adj[u as usize].push(v);
        adj[v as usize].push(u);
        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
        stubs.swap_remove(hi);
        stubs.swap_remove(lo);
    }
    Some(adj)
}

/// Each J(i) is an independent uniform `nu`-subset of the other nodes.
pub fn random_directed(n: usize, nu: usize, seed: u64) -> Result<PeerGraph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    if nu == 0 || nu > n - 1 {
        return Err(GraphError::DegreeOutOfRange { n, nu });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lists = (0..n)
        .map(|i| {
            index::sample(&mut rng, n - 1, nu)
                .into_iter()
                .map(|j| if j >= i { j + 1 } else { j } as u32)
                .collect()
        })
        .collect();
    Ok(PeerGraph::from_peer_lists(lists, true))
}

/// Ring with `k` neighbours on each side.
pub fn ring_lattice(n: usize, k: usize) -> Result<PeerGraph, GraphError> {
    if k == 0 || n < 3 || k > (n - 1) / 2 {
        return Err(GraphError::RingOutOfRange { n, k });
    }
    let lists = (0..n)
        .map(|i| {
            (1..=k)
                .flat_map(|d| [(i + d) % n, (i + n - d) % n])
                .map(|j| j as u32)
                .collect()
        })
        .collect();
    Ok(PeerGraph::from_peer_lists(lists, false))
}

pub fn validate_graph(g: &PeerGraph) -> GraphReport {
    let mut report = GraphReport::default();
    let lists = match &g.adjacency {
        Adjacency::Complete => {
            if g.n < 2 {
                report.violations.push(GraphViolation::LonelyTrader(0));
            }
            return report;
        }
        Adjacency::Lists(l) => l,
    };
    let v = &mut report.violations;
    for (i, peers) in lists.iter().enumerate() {
        if peers.is_empty() {
            v.push(GraphViolation::LonelyTrader(i));
        }
        for (k, &j) in peers.iter().enumerate() {
            let j = j as usize;
            if j >= g.n {
                v.push(GraphViolation::OutOfRange { node: i, peer: j });
                continue;
            }
            if j == i {
                v.push(GraphViolation::SelfLoop(i));
            }
            if k > 0 && peers[k - 1] as usize == j {
                v.push(GraphViolation::DuplicatePeer { node: i, peer: j });
            }
            if !g.directed && lists[j].binary_search(&(i as u32)).is_err() {
                v.push(GraphViolation::Asymmetric { node: i, peer: j });
            }
        }
    }
    report
}

/// Declarative graph recipe, as stored in run manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    FullyConnected,
    RandomRegular { nu: usize },
    RandomDirected { nu: usize },
    Ring { k: usize },
}

impl GraphSpec {
    pub fn build(&self, n: usize, seed: u64) -> Result<PeerGraph, GraphError> {
        match *self {
            GraphSpec::FullyConnected => fully_connected(n),
            GraphSpec::RandomRegular { nu } => random_regular_undirected(n, nu, seed),
            GraphSpec::RandomDirected { nu } => random_directed(n, nu, seed),
            GraphSpec::Ring { k } => ring_lattice(n, k),
        }
    }
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSpec::FullyConnected => write!(f, "fully_connected"),
            GraphSpec::RandomRegular { nu } => write!(f, "random_regular(nu={nu})"),
            GraphSpec::RandomDirected { nu } => write!(f, "random_directed(nu={nu})"),
            GraphSpec::Ring { k } => write!(f, "ring(k={k})"),
        }
    }
}
