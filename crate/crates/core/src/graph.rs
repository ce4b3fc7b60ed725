//! Weighted undirected graphs, generators and sequential distance oracles.
//!
//! Nodes are indexed `0..n` in memory. Text formats use ids `1..=n`.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rng::mix;

pub type NodeId = usize;
pub type EdgeId = usize;

/// Path weight with a saturating infinity sentinel.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Dist(pub u64);

impl Dist {
    pub const INF: Dist = Dist(u64::MAX);
    pub const ZERO: Dist = Dist(0);

    pub fn is_finite(self) -> bool {
        self != Dist::INF
    }

    pub fn plus(self, w: u64) -> Dist {
        if self == Dist::INF || w == u64::MAX {
            Dist::INF
        } else {
            Dist(self.0.saturating_add(w).min(u64::MAX - 1))
        }
    }

    pub fn add(self, other: Dist) -> Dist {
        if other == Dist::INF {
            Dist::INF
        } else {
            self.plus(other.0)
        }
    }

    pub fn value(self) -> Option<u64> {
        self.is_finite().then_some(self.0)
    }
}

impl fmt::Debug for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_finite() {
            write!(f, "{}", self.0)
        } else {
            write!(f, "inf")
        }
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph needs at least one node")]
    Empty,
    #[error("edge ({0}, {1}) references a node outside 1..={2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("parallel edge between {0} and {1}")]
    ParallelEdge(usize, usize),
    #[error("edge weight {0} outside 1..={1}")]
    BadWeight(u64, u64),
    #[error("graph is not connected")]
    Disconnected,
    #[error("malformed graph file: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("family {0} cannot be built with n = {1}")]
    BadSize(&'static str, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub w: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub node: NodeId,
    pub w: u64,
    pub edge: EdgeId,
}

/// Simple undirected graph with positive integer weights.
///
/// Connectivity is not required here (spanner levels are sparse); use
/// [`WeightedGraph::is_connected`] where it matters.
#[derive(Clone, Debug)]
pub struct WeightedGraph {
    n: usize,
    max_weight: u64,
    edges: Vec<Edge>,
    adj: Vec<Vec<Neighbor>>,
}

impl WeightedGraph {
    /// Builds a graph whose weights must lie in `1..=max_weight`.
    pub fn new(n: usize, max_weight: u64, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut adj: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
        for (id, e) in edges.iter().enumerate() {
            if e.u >= n || e.v >= n {
                return Err(GraphError::NodeOutOfRange(e.u + 1, e.v + 1, n));
            }
            if e.u == e.v {
                return Err(GraphError::SelfLoop(e.u + 1));
            }
            if e.w == 0 || e.w > max_weight {
                return Err(GraphError::BadWeight(e.w, max_weight));
            }
            adj[e.u].push(Neighbor { node: e.v, w: e.w, edge: id });
            adj[e.v].push(Neighbor { node: e.u, w: e.w, edge: id });
        }
        for (u, list) in adj.iter_mut().enumerate() {
            list.sort_by_key(|nb| nb.node);
            if let Some(pair) = list.windows(2).find(|p| p[0].node == p[1].node) {
                return Err(GraphError::ParallelEdge(u + 1, pair[0].node + 1));
            }
        }
        Ok(WeightedGraph { n, max_weight, edges, adj })
    }

    /// Like [`WeightedGraph::new`] but also rejects disconnected graphs.
    pub fn connected(n: usize, max_weight: u64, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let g = Self::new(n, max_weight, edges)?;
        if g.is_connected() {
            Ok(g)
        } else {
            Err(GraphError::Disconnected)
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn max_weight(&self) -> u64 {
        self.max_weight
    }

    /// Largest weight actually present (1 for edgeless graphs).
    pub fn heaviest_edge(&self) -> u64 {
        self.edges.iter().map(|e| e.w).max().unwrap_or(1)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, v: NodeId) -> &[Neighbor] {
        &self.adj[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj[v].len()
    }

    pub fn edge_between(&self, u: NodeId, v: NodeId) -> Option<Neighbor> {
        self.adj[u].binary_search_by_key(&v, |nb| nb.node).ok().map(|i| self.adj[u][i])
    }

    pub fn is_unit(&self) -> bool {
        self.edges.iter().all(|e| e.w == 1)
    }

    pub fn is_connected(&self) -> bool {
        hop_distances(self, 0).iter().all(|h| h.is_some())
    }

    /// Reads the text format: a header `n m W`, then `m` lines `u v w` with 1-based ids.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, GraphError> {
        let mut lines = reader
            .lines()
            .map(|l| l.map_err(|e| GraphError::Io(e.to_string())))
            .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('#')));
        let header = lines.next().ok_or_else(|| GraphError::Parse("missing header".into()))??;
        let head = parse_numbers(&header, 3)?;
        let (n, m, w_max) = (head[0] as usize, head[1] as usize, head[2]);
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let line = lines.next().ok_or_else(|| GraphError::Parse("fewer edges than declared".into()))??;
            let f = parse_numbers(&line, 3)?;
            if f[0] == 0 || f[1] == 0 {
                return Err(GraphError::NodeOutOfRange(f[0] as usize, f[1] as usize, n));
            }
            edges.push(Edge { u: f[0] as usize - 1, v: f[1] as usize - 1, w: f[2] });
        }
        if let Some(extra) = lines.next() {
            extra?;
            return Err(GraphError::Parse("more edges than declared".into()));
        }
        Self::connected(n, w_max, edges)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.n, self.m(), self.max_weight)?;
        for e in &self.edges {
            writeln!(out, "{} {} {}", e.u + 1, e.v + 1, e.w)?;
        }
        Ok(())
    }

    /// Subgraph induced by `keep`, on the same id space.
    pub fn induced(&self, keep: &[bool]) -> WeightedGraph {
        let edges = self.edges.iter().filter(|e| keep[e.u] && keep[e.v]).copied().collect();
        WeightedGraph::new(self.n, self.max_weight, edges).expect("subgraph of a valid graph")
    }
}

fn parse_numbers(line: &str, want: usize) -> Result<Vec<u64>, GraphError> {
    let nums: Result<Vec<u64>, _> = line.split_whitespace().map(str::parse::<u64>).collect();
    match nums {
        Ok(v) if v.len() == want => Ok(v),
        _ => Err(GraphError::Parse(format!("expected {want} integers in {line:?}"))),
    }
}

/// BFS hop counts from `src`, `None` for unreachable nodes.
pub fn hop_distances(g: &WeightedGraph, src: NodeId) -> Vec<Option<usize>> {
    let mut hops = vec![None; g.n()];
    let mut queue = VecDeque::new();
    hops[src] = Some(0);
    queue.push_back(src);
    while let Some(u) = queue.pop_front() {
        let h = hops[u].unwrap();
        for nb in g.neighbors(u) {
            if hops[nb.node].is_none() {
                hops[nb.node] = Some(h + 1);
                queue.push_back(nb.node);
            }
        }
    }
    hops
}

/// Single-source shortest paths. Parents prefer the smallest predecessor id on ties.
#[derive(Clone, Debug)]
pub struct ShortestPaths {
    pub dist: Vec<Dist>,
    pub parent: Vec<Option<NodeId>>,
}

pub fn dijkstra(g: &WeightedGraph, src: NodeId) -> ShortestPaths {
    let n = g.n();
    let mut dist = vec![Dist::INF; n];
    let mut parent = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[src] = Dist::ZERO;
    heap.push(Reverse((Dist::ZERO, src)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if done[u] || d > dist[u] {
            continue;
        }
        done[u] = true;
        for nb in g.neighbors(u) {
            let cand = d.plus(nb.w);
            let better = match cand.cmp(&dist[nb.node]) {
                Ordering::Less => true,
                Ordering::Equal => parent[nb.node].is_some_and(|p| u < p),
                Ordering::Greater => false,
            };
            if better && !done[nb.node] {
                if cand < dist[nb.node] {
                    heap.push(Reverse((cand, nb.node)));
                }
                dist[nb.node] = cand;
                parent[nb.node] = Some(u);
            }
        }
    }
    ShortestPaths { dist, parent }
}

/// Exact distance matrix by repeated Dijkstra.
pub fn all_pairs(g: &WeightedGraph) -> Vec<Vec<Dist>> {
    (0..g.n()).map(|s| dijkstra(g, s).dist).collect()
}

/// Weights of shortest paths that use at most `h` edges, by `h` synchronous relaxation rounds.
pub fn h_limited_distances(g: &WeightedGraph, src: NodeId, h: usize) -> Vec<Dist> {
    let mut dist = vec![Dist::INF; g.n()];
    dist[src] = Dist::ZERO;
    for _ in 0..h {
        let prev = dist.clone();
        let mut changed = false;
        for e in g.edges() {
            for (a, b) in [(e.u, e.v), (e.v, e.u)] {
                let cand = prev[a].plus(e.w);
                if cand < dist[b] {
                    dist[b] = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    dist
}

/// Result of a hop-bounded multi-source relaxation: `dist[v][i]` is the
/// `h`-limited distance from `sources[i]` to `v`.
#[derive(Clone, Debug)]
pub struct SourceLabels {
    pub sources: Vec<NodeId>,
    pub dist: Vec<Vec<Dist>>,
    /// Rounds after which no label changed (at most `h`).
    pub settled_after: usize,
}

impl SourceLabels {
    pub fn get(&self, v: NodeId, source_index: usize) -> Dist {
        self.dist[v][source_index]
    }

    pub fn index_of(&self, s: NodeId) -> Option<usize> {
        self.sources.iter().position(|&x| x == s)
    }
}

/// `h` synchronous Bellman-Ford rounds from every source in `sources`.
pub fn bellman_ford_k_sources(g: &WeightedGraph, sources: &[NodeId], h: usize) -> SourceLabels {
    let k = sources.len();
    let n = g.n();
    let mut dist = vec![Dist::INF; n * k];
    for (i, &s) in sources.iter().enumerate() {
        dist[s * k + i] = Dist::ZERO;
    }
    let mut settled_after = 0;
    let mut prev = dist.clone();
    for round in 1..=h {
        prev.copy_from_slice(&dist);
        let mut changed = false;
        for e in g.edges() {
            for (a, b) in [(e.u, e.v), (e.v, e.u)] {
                for i in 0..k {
                    let cand = prev[a * k + i].plus(e.w);
                    if cand < dist[b * k + i] {
                        dist[b * k + i] = cand;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
        settled_after = round;
    }
    let dist = dist.chunks(k.max(1)).take(n).map(|c| c[..k].to_vec()).collect();
    SourceLabels { sources: sources.to_vec(), dist, settled_after }
}

/// Minimum hop count among shortest paths from `src` to each node.
pub fn min_hop_shortest(g: &WeightedGraph, src: NodeId) -> Vec<Option<usize>> {
    let n = g.n();
    let mut best: Vec<Option<(Dist, usize)>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    best[src] = Some((Dist::ZERO, 0));
    heap.push(Reverse((Dist::ZERO, 0usize, src)));
    while let Some(Reverse((d, h, u))) = heap.pop() {
        if best[u] != Some((d, h)) {
            continue;
        }
        for nb in g.neighbors(u) {
            let cand = (d.plus(nb.w), h + 1);
            if best[nb.node].is_none_or(|cur| cand < cur) {
                best[nb.node] = Some(cand);
                heap.push(Reverse((cand.0, cand.1, nb.node)));
            }
        }
    }
    best.into_iter().map(|b| b.map(|(_, h)| h)).collect()
}

/// Smallest `h` such that `h`-limited distances equal true distances for every pair.
pub fn shortest_path_diameter(g: &WeightedGraph) -> usize {
    (0..g.n()).map(|s| source_spd(g, s)).max().unwrap_or(0)
}

/// Same quantity restricted to paths starting at `src`.
pub fn source_spd(g: &WeightedGraph, src: NodeId) -> usize {
    min_hop_shortest(g, src).into_iter().flatten().max().unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    Unit,
    /// Uniform integer weights in `1..=max`.
    Uniform(u64),
}

impl WeightMode {
    pub fn max(self) -> u64 {
        match self {
            WeightMode::Unit => 1,
            WeightMode::Uniform(w) => w.max(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Path,
    Cycle,
    Star,
    Complete,
    Grid,
    RandomConnected,
    /// Path of `handle` nodes whose last node carries all remaining nodes as leaves.
    Broom {
        handle: usize,
    },
    LbApspGadget,
}

impl Family {
    pub fn name(&self) -> String {
        match self {
            Family::Path => "path".into(),
            Family::Cycle => "cycle".into(),
            Family::Star => "star".into(),
            Family::Complete => "complete".into(),
            Family::Grid => "grid".into(),
            Family::RandomConnected => "random_connected".into(),
            Family::Broom { handle } => format!("broom{handle}"),
            Family::LbApspGadget => "lb_apsp_gadget".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Some(match s {
            "path" => Family::Path,
            "cycle" => Family::Cycle,
            "star" => Family::Star,
            "complete" => Family::Complete,
            "grid" => Family::Grid,
            "random_connected" | "random" => Family::RandomConnected,
            "lb_apsp_gadget" => Family::LbApspGadget,
            other => Family::Broom { handle: other.strip_prefix("broom")?.parse().ok()? },
        })
    }
}

/// Labelled pieces of the lower-bound gadget (0-based ids).
#[derive(Clone, Debug)]
pub struct Gadget {
    pub path: Vec<NodeId>,
    pub b: NodeId,
    pub v1: NodeId,
    pub v2: NodeId,
    pub s1: Vec<NodeId>,
    pub s2: Vec<NodeId>,
    pub labelled: Vec<NodeId>,
    pub spacing: usize,
}

/// Builds a graph of the given family. All random choices derive from `seed`.
pub fn gen_graph(family: Family, n: usize, weights: WeightMode, seed: u64) -> Result<WeightedGraph, GraphError> {
    if family == Family::LbApspGadget {
        return gen_gadget(n, weights, seed).map(|(g, _)| g);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0x6752_4150]));
    let pairs = topology(family, n, &mut rng)?;
    let max = weights.max();
    let edges = pairs.into_iter().map(|(u, v)| Edge { u, v, w: draw_weight(weights, &mut rng) }).collect();
    WeightedGraph::connected(n, max, edges)
}

fn draw_weight(mode: WeightMode, rng: &mut ChaCha8Rng) -> u64 {
    match mode {
        WeightMode::Unit => 1,
        WeightMode::Uniform(w) => rng.random_range(1..=w.max(1)),
    }
}

fn topology(family: Family, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>, GraphError> {
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let path = |len: usize| (1..len).map(|i| (i - 1, i)).collect::<Vec<_>>();
    Ok(match family {
        Family::Path => path(n),
        Family::Cycle => {
            if n < 3 {
                return Err(GraphError::BadSize("cycle", n));
            }
            let mut e = path(n);
            e.push((n - 1, 0));
            e
        }
        Family::Star => (1..n).map(|i| (0, i)).collect(),
        Family::Complete => (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect(),
        Family::Grid => {
            let cols = (n as f64).sqrt().floor().max(1.0) as usize;
            let mut e = Vec::new();
            for i in 0..n {
                if i % cols + 1 < cols && i + 1 < n {
                    e.push((i, i + 1));
                }
                if i + cols < n {
                    e.push((i, i + cols));
                }
            }
            e
        }
        Family::Broom { handle } => {
            if handle == 0 || handle > n {
                return Err(GraphError::BadSize("broom", n));
            }
            let mut e = path(handle);
            e.extend((handle..n).map(|i| (handle - 1, i)));
            e
        }
        Family::RandomConnected => random_connected(n, rng),
        Family::LbApspGadget => unreachable!(),
    })
}

/// Erdős–Rényi above the connectivity threshold, then components are chained together.
fn random_connected(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if n == 1 {
        return Vec::new();
    }
    let p = (2.0 * (n as f64).ln() / n as f64).min(1.0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    // union-find over the sampled edges
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for &(u, v) in &edges {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut reps: Vec<usize> = (0..n).filter(|&v| find(&mut parent, v) == v).collect();
    reps.sort_unstable();
    for pair in reps.windows(2) {
        let members: Vec<usize> = (0..n).filter(|&v| find(&mut parent, v) == pair[0]).collect();
        let anchor = members[rng.random_range(0..members.len())];
        edges.push((anchor.min(pair[1]), anchor.max(pair[1])));
    }
    edges
}

/// Lower-bound gadget: a path from `b` with two attached clusters `S1` and `S2`.
pub fn gen_gadget(n: usize, weights: WeightMode, seed: u64) -> Result<(WeightedGraph, Gadget), GraphError> {
    if n < 8 {
        return Err(GraphError::BadSize("lb_apsp_gadget", n));
    }
    let nf = n as f64;
    let spacing = ((nf.sqrt() / nf.log2()).floor() as usize).max(1);
    let x = n / 2 + spacing;
    let y = (n - x) / 2;
    let path: Vec<NodeId> = (0..x).collect();
    let b = path[0];
    let v1 = path[spacing];
    let v2 = path[x - 1];
    let labelled: Vec<NodeId> = (x..x + y).collect();
    let fillers: Vec<NodeId> = (x + y..x + 2 * y).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0x6761_6467]));
    let (mut s1, mut s2) = (Vec::new(), Vec::new());
    for &u in &labelled {
        if rng.random_bool(0.5) {
            s1.push(u);
        } else {
            s2.push(u);
        }
    }
    let mut fill = fillers.into_iter();
    while s1.len() < y {
        s1.push(fill.next().unwrap());
    }
    s2.extend(fill);
    let mut pairs: Vec<(usize, usize)> = (1..x).map(|i| (i - 1, i)).collect();
    pairs.extend(s1.iter().map(|&u| (v1, u)));
    pairs.extend(s2.iter().map(|&u| (v2, u)));
    pairs.extend((x + 2 * y..n).map(|extra| (b, extra)));
    let edges =
        pairs.into_iter().map(|(u, v)| Edge { u: u.min(v), v: u.max(v), w: draw_weight(weights, &mut rng) }).collect();
    let g = WeightedGraph::connected(n, weights.max(), edges)?;
    Ok((g, Gadget { path, b, v1, v2, s1, s2, labelled, spacing }))
}

/// Random spanning-tree-plus-extras graph used by property tests.
pub fn random_small_graph(n: usize, extra: usize, max_w: u64, seed: u64) -> WeightedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pairs = std::collections::BTreeSet::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        let (a, b) = (order[i], order[j]);
        pairs.insert((a.min(b), a.max(b)));
    }
    for _ in 0..extra {
        if n < 2 {
            break;
        }
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges = pairs.into_iter().map(|(u, v)| Edge { u, v, w: rng.random_range(1..=max_w) }).collect();
    WeightedGraph::connected(n, max_w, edges).expect("tree plus extras is connected")
}
