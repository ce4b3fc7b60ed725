//! All-pairs shortest paths over a random skeleton of marked nodes.

use fixedbitset::FixedBitSet;
use rand::Rng;
use thiserror::Error;

use crate::graph::{bellman_ford_k_sources, dijkstra, Dist, Edge, NodeId, SourceLabels, WeightedGraph};
use crate::rng::purpose;
use crate::sim::Network;
use crate::tokens::{disseminate, Token, TokenError, TokenParams, TokenState, TokenStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApspError {
    #[error("approximation parameter must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("sampling spread must be positive, got {0}")]
    BadSpread(f64),
    #[error(transparent)]
    Tokens(#[from] TokenError),
}

/// Default constant in the exploration depth `ceil(depth_factor * x * ln n)`.
pub const DEPTH_FACTOR: f64 = 8.0;

#[derive(Clone, Debug)]
pub struct Skeleton {
    /// Marked nodes in increasing id order.
    pub marked: Vec<NodeId>,
    pub is_marked: Vec<bool>,
    /// Exploration depth.
    pub depth: usize,
    /// Depth-limited distances from every marked node.
    pub from_marked: SourceLabels,
    /// Skeleton edges as `(i, j, w)` over indices into `marked`, `i < j`.
    pub edges: Vec<(usize, usize, u64)>,
    pub attempts: u64,
}

impl Skeleton {
    pub fn marked_index(&self, v: NodeId) -> Option<usize> {
        self.marked.binary_search(&v).ok()
    }

    /// `depth`-limited distance between `v` and the `i`-th marked node.
    pub fn to_marked(&self, v: NodeId, i: usize) -> Dist {
        self.from_marked.get(v, i)
    }
}

pub fn exploration_depth(n: usize, spread: f64, depth_factor: f64) -> usize {
    ((depth_factor * spread * (n as f64).ln()).ceil() as usize).max(1)
}

/// Marks each node with probability `1/x` (re-drawing if nobody is marked)
/// and learns depth-limited distances from the marked nodes.
pub fn construct_skeleton(net: &mut Network, spread: f64, depth_factor: f64) -> Result<Skeleton, ApspError> {
    if !(spread > 0.0) {
        return Err(ApspError::BadSpread(spread));
    }
    let g = net.graph();
    let n = g.n();
    let p = (1.0 / spread).min(1.0);
    let mut attempts = 0;
    let marked = loop {
        let m: Vec<NodeId> = (0..n).filter(|&v| net.node_rng(purpose::MARK, v, attempts).random_bool(p)).collect();
        attempts += 1;
        if !m.is_empty() {
            break m;
        }
    };
    let depth = exploration_depth(n, spread, depth_factor);
    let from_marked = bellman_ford_k_sources(g, &marked, depth);
    let mut is_marked = vec![false; n];
    for &v in &marked {
        is_marked[v] = true;
    }
    let mut edges = Vec::new();
    for j in 0..marked.len() {
        for i in 0..j {
            let d = from_marked.get(marked[j], i);
            if d.is_finite() {
                edges.push((i, j, d.0));
            }
        }
    }
    Ok(Skeleton { marked, is_marked, depth, from_marked, edges, attempts })
}

/// Charges `rounds` rounds of label exchange in which every edge carries the
/// full label lists of both endpoints.
fn charge_exploration(net: &mut Network, rounds: usize, labels: usize) {
    for _ in 0..rounds {
        net.local_step(2 * labels as u64);
    }
}

#[derive(Clone, Debug)]
pub struct ApspOutput {
    /// Row `u` is what node `u` outputs.
    pub matrix: Vec<Vec<Dist>>,
    pub marked: usize,
    pub depth: usize,
    pub far_depth: usize,
    pub skeleton_edges: usize,
    pub token_runs: Vec<TokenStats>,
}

impl ApspOutput {
    pub fn dissemination_complete(&self) -> bool {
        self.token_runs.iter().all(|s| s.complete)
    }
}

/// Distances between marked nodes over the skeleton known to one node.
fn skeleton_distances(m: usize, edges: impl Iterator<Item = (usize, usize, u64)>) -> Vec<Vec<Dist>> {
    let mut list: Vec<Edge> = Vec::new();
    let mut best = std::collections::BTreeMap::new();
    for (a, b, w) in edges {
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        let e = best.entry(key).or_insert(w);
        *e = (*e).min(w);
    }
    let w_max = best.values().copied().max().unwrap_or(1);
    for ((a, b), w) in best {
        list.push(Edge { u: a, v: b, w });
    }
    let sk = WeightedGraph::new(m.max(1), w_max, list).expect("skeleton edges are well formed");
    (0..m).map(|s| dijkstra(&sk, s).dist).collect()
}

fn dist_field(d: Dist) -> u64 {
    d.0
}

fn skeleton_tokens(n: usize, sk: &Skeleton) -> Vec<Vec<Token>> {
    let mut out = vec![Vec::new(); n];
    for &(i, j, w) in &sk.edges {
        let (a, b) = (sk.marked[i], sk.marked[j]);
        out[a].push(Token([a as u64, b as u64, w]));
        out[b].push(Token([b as u64, a as u64, w]));
    }
    out
}

/// Skeleton distances as seen by node `v` from the tokens it knows.
fn local_skeleton_view(sk: &Skeleton, st: &TokenState, v: NodeId) -> Vec<Vec<Dist>> {
    let edges = st.known_by(v).filter_map(|t| {
        let a = sk.marked_index(t.0[0] as usize)?;
        let b = sk.marked_index(t.0[1] as usize)?;
        Some((a, b, t.0[2]))
    });
    skeleton_distances(sk.marked.len(), edges)
}

fn full_mask(st: &TokenState) -> FixedBitSet {
    let mut all = FixedBitSet::with_capacity(st.k());
    all.insert_range(..);
    all
}

/// Exact APSP. `spread` defaults to `n^(2/3)`.
pub fn apsp_exact(net: &mut Network, spread: Option<f64>, depth_factor: f64) -> Result<ApspOutput, ApspError> {
    let g = net.graph();
    let n = g.n();
    let x = spread.unwrap_or_else(|| default_exact_spread(n));
    net.set_phase("construct_skeleton");
    let sk = construct_skeleton(net, x, depth_factor)?;
    let near = bellman_ford_k_sources(g, &(0..n).collect::<Vec<_>>(), sk.depth);
    charge_exploration(net, sk.depth, n);

    net.set_phase("transmit_skeleton");
    let (sk_state, sk_stats) = disseminate(net, skeleton_tokens(n, &sk), &TokenParams::labelled("skeleton"))?;

    net.set_phase("transmit_distances");
    let mut initial = vec![Vec::new(); n];
    for (v, list) in initial.iter_mut().enumerate() {
        if !sk.is_marked[v] {
            for (i, &m) in sk.marked.iter().enumerate() {
                list.push(Token([v as u64, m as u64, dist_field(sk.to_marked(v, i))]));
            }
        }
    }
    let (d_state, d_stats) = disseminate(net, initial, &TokenParams::labelled("distances"))?;

    let mm = sk.marked.len();
    let sk_full = full_mask(&sk_state);
    let d_full = full_mask(&d_state);
    let shared_skeleton = skeleton_distances(mm, sk.edges.iter().copied());
    let mut matrix = Vec::with_capacity(n);
    for u in 0..n {
        let skel = if sk_state.knowledge[u] == sk_full { None } else { Some(local_skeleton_view(&sk, &sk_state, u)) };
        let ds = skel.as_ref().unwrap_or(&shared_skeleton);
        // nearest-marked table known to u: far[v][j] = d(v, marked j)
        let mut far = vec![vec![Dist::INF; mm]; n];
        let complete = d_state.knowledge[u] == d_full;
        for t in 0..d_state.k() {
            if complete || d_state.knows(u, t) {
                let tok = d_state.tokens[t].0;
                let j = sk.marked_index(tok[1] as usize).expect("token names a marked node");
                far[tok[0] as usize][j] = Dist(tok[2]);
            }
        }
        for (j, &m) in sk.marked.iter().enumerate() {
            far[m][j] = Dist::ZERO;
        }
        // via[j] = min over u' of d(u, u') + skeleton(u', j)
        let own: Vec<Dist> = (0..mm).map(|i| if sk.marked[i] == u { Dist::ZERO } else { sk.to_marked(u, i) }).collect();
        let via: Vec<Dist> =
            (0..mm).map(|j| (0..mm).map(|i| own[i].add(ds[i][j])).min().unwrap_or(Dist::INF)).collect();
        let row = (0..n)
            .map(|v| {
                let skeleton_route = (0..mm).map(|j| via[j].add(far[v][j])).min().unwrap_or(Dist::INF);
                near.get(u, v).min(skeleton_route)
            })
            .collect();
        matrix.push(row);
    }
    Ok(ApspOutput {
        matrix,
        marked: mm,
        depth: sk.depth,
        far_depth: sk.depth,
        skeleton_edges: sk.edges.len(),
        token_runs: vec![sk_stats, d_stats],
    })
}

pub fn default_exact_spread(n: usize) -> f64 {
    (n as f64).powf(2.0 / 3.0).max(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ApproxMode {
    /// Stretch 3 with `x = sqrt n`.
    Three,
    /// Stretch `1 + eps`, `x = sqrt(n eps / 2W) / (depth_factor ln n)`.
    Eps(f64),
}

pub fn approx_spread(n: usize, mode: ApproxMode, weight_ratio: f64, depth_factor: f64) -> Result<f64, ApspError> {
    match mode {
        ApproxMode::Three => Ok((n as f64).sqrt().max(1.0)),
        ApproxMode::Eps(eps) if !(eps > 0.0) => Err(ApspError::BadEpsilon(eps)),
        ApproxMode::Eps(eps) => {
            let nf = n as f64;
            let x = (nf * eps / (2.0 * weight_ratio)).sqrt() / (depth_factor * nf.ln().max(1.0));
            Ok(x.max(1e-9))
        }
    }
}

/// Approximate APSP with a nearest-marked-node detour.
pub fn apsp_approx(
    net: &mut Network,
    mode: ApproxMode,
    spread: Option<f64>,
    depth_factor: f64,
) -> Result<ApspOutput, ApspError> {
    let g = net.graph();
    let n = g.n();
    let ratio = g.heaviest_edge() as f64 / g.edges().iter().map(|e| e.w).min().unwrap_or(1) as f64;
    let x = match spread {
        Some(x) => x,
        None => approx_spread(n, mode, ratio, depth_factor)?,
    };
    if let ApproxMode::Eps(eps) = mode {
        if !(eps > 0.0) {
            return Err(ApspError::BadEpsilon(eps));
        }
    }
    net.set_phase("construct_skeleton");
    let sk = construct_skeleton(net, x, depth_factor)?;
    let far_depth = sk.depth.max(n.div_ceil(sk.depth));
    let wide = bellman_ford_k_sources(g, &(0..n).collect::<Vec<_>>(), far_depth);
    charge_exploration(net, far_depth, n);

    net.set_phase("transmit_skeleton");
    let (sk_state, sk_stats) = disseminate(net, skeleton_tokens(n, &sk), &TokenParams::labelled("skeleton"))?;

    net.set_phase("transmit_closest");
    let mm = sk.marked.len();
    let mut closest: Vec<Option<(usize, Dist)>> = vec![None; n];
    let mut initial = vec![Vec::new(); n];
    for v in 0..n {
        if let Some(j) = sk.marked_index(v) {
            closest[v] = Some((j, Dist::ZERO));
            continue;
        }
        let best = (0..mm).map(|j| (sk.to_marked(v, j), j)).min();
        if let Some((d, j)) = best.filter(|(d, _)| d.is_finite()) {
            closest[v] = Some((j, d));
            initial[v].push(Token([v as u64, sk.marked[j] as u64, d.0]));
        }
    }
    let (c_state, c_stats) = disseminate(net, initial, &TokenParams::labelled("closest"))?;

    let sk_full = full_mask(&sk_state);
    let c_full = full_mask(&c_state);
    let shared_skeleton = skeleton_distances(mm, sk.edges.iter().copied());
    let mut matrix = Vec::with_capacity(n);
    for u in 0..n {
        let skel = if sk_state.knowledge[u] == sk_full { None } else { Some(local_skeleton_view(&sk, &sk_state, u)) };
        let ds = skel.as_ref().unwrap_or(&shared_skeleton);
        let complete = c_state.knowledge[u] == c_full;
        let mut near_of: Vec<Option<(usize, Dist)>> =
            (0..n).map(|v| if sk.is_marked[v] { closest[v] } else { None }).collect();
        for t in 0..c_state.k() {
            if complete || c_state.knows(u, t) {
                let tok = c_state.tokens[t].0;
                let j = sk.marked_index(tok[1] as usize).expect("token names a marked node");
                near_of[tok[0] as usize] = Some((j, Dist(tok[2])));
            }
        }
        let own: Vec<Dist> = (0..mm).map(|i| sk.to_marked(u, i)).collect();
        let via: Vec<Dist> =
            (0..mm).map(|j| (0..mm).map(|i| own[i].add(ds[i][j])).min().unwrap_or(Dist::INF)).collect();
        let row = (0..n)
            .map(|v| {
                let detour = near_of[v].map_or(Dist::INF, |(j, d)| via[j].add(d));
                wide.get(u, v).min(detour)
            })
            .collect();
        matrix.push(row);
    }
    Ok(ApspOutput {
        matrix,
        marked: mm,
        depth: sk.depth,
        far_depth,
        skeleton_edges: sk.edges.len(),
        token_runs: vec![sk_stats, c_stats],
    })
}

/// Largest ratio `estimate / exact` over pairs with positive distance, and
/// whether every estimate is at least the exact distance.
pub fn compare_to_exact(estimate: &[Vec<Dist>], exact: &[Vec<Dist>]) -> (f64, bool) {
    let mut worst: f64 = 1.0;
    let mut sound = true;
    for (er, xr) in estimate.iter().zip(exact) {
        for (&e, &x) in er.iter().zip(xr) {
            if e < x {
                sound = false;
            }
            if x.is_finite() && x.0 > 0 {
                let r = if e.is_finite() { e.0 as f64 / x.0 as f64 } else { f64::INFINITY };
                worst = worst.max(r);
            }
        }
    }
    (worst, sound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{all_pairs, gen_graph, Family, WeightMode};
    use crate::sim::HybridConfig;

    fn run_exact(g: &WeightedGraph, seed: u64, x: Option<f64>, factor: f64) -> ApspOutput {
        let mut net = Network::new(g, HybridConfig::new(g.n(), seed));
        apsp_exact(&mut net, x, factor).unwrap()
    }

    #[test]
    fn skeleton_edges_respect_depth() {
        let g = gen_graph(Family::Path, 40, WeightMode::Unit, 0).unwrap();
        let mut net = Network::new(&g, HybridConfig::new(40, 3));
        let sk = construct_skeleton(&mut net, 4.0, 0.5).unwrap();
        assert!(!sk.marked.is_empty());
        assert_eq!(sk.depth, (0.5 * 4.0 * 40f64.ln()).ceil() as usize);
        for &(i, j, w) in &sk.edges {
            let hops = sk.marked[j] - sk.marked[i];
            assert!(hops <= sk.depth);
            assert_eq!(w as usize, hops);
        }
    }

    #[test]
    fn exact_with_shallow_exploration() {
        // depth well below the diameter so the skeleton route matters
        for seed in 0..4 {
            let g = gen_graph(Family::Path, 48, WeightMode::Uniform(5), seed).unwrap();
            let out = run_exact(&g, seed, Some(3.0), 1.0);
            assert!(out.depth < 47);
            if out.dissemination_complete() {
                assert_eq!(out.matrix, all_pairs(&g));
            }
        }
    }

    #[test]
    fn exact_on_random_graph() {
        let g = gen_graph(Family::RandomConnected, 64, WeightMode::Uniform(8), 5).unwrap();
        let out = run_exact(&g, 1, None, DEPTH_FACTOR);
        assert_eq!(out.matrix, all_pairs(&g));
    }

    #[test]
    fn every_node_marked_gives_exact_skeleton() {
        let g = gen_graph(Family::Cycle, 20, WeightMode::Uniform(3), 2).unwrap();
        let out = run_exact(&g, 4, Some(1.0), 0.3);
        assert_eq!(out.marked, 20);
        assert_eq!(out.matrix, all_pairs(&g));
    }

    #[test]
    fn approx_bounds_hold() {
        for seed in 0..3 {
            let g = gen_graph(Family::Grid, 100, WeightMode::Uniform(4), seed).unwrap();
            let mut net = Network::new(&g, HybridConfig::new(100, seed));
            let out = apsp_approx(&mut net, ApproxMode::Three, Some(4.0), 1.0).unwrap();
            let (ratio, sound) = compare_to_exact(&out.matrix, &all_pairs(&g));
            assert!(sound);
            assert!(ratio <= 3.0, "ratio {ratio}");
        }
    }

    #[test]
    fn eps_must_be_positive() {
        let g = gen_graph(Family::Path, 10, WeightMode::Unit, 0).unwrap();
        let mut net = Network::new(&g, HybridConfig::new(10, 0));
        assert_eq!(
            apsp_approx(&mut net, ApproxMode::Eps(0.0), None, DEPTH_FACTOR).unwrap_err(),
            ApspError::BadEpsilon(0.0)
        );
    }

    #[test]
    fn ratio_comparison() {
        let exact = vec![vec![Dist(0), Dist(2)], vec![Dist(2), Dist(0)]];
        let est = vec![vec![Dist(0), Dist(5)], vec![Dist(2), Dist(0)]];
        assert_eq!(compare_to_exact(&est, &exact), (2.5, true));
        let low = vec![vec![Dist(0), Dist(1)], vec![Dist(2), Dist(0)]];
        assert!(!compare_to_exact(&low, &exact).1);
    }
}
