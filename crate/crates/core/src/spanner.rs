//! Skeleton spanners, the Baswana-Sen base spanner, the recursive spanner
//! hierarchy and approximate SSSP by bounded Bellman-Ford over its union.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use thiserror::Error;

use crate::graph::{Dist, Edge, GraphError, NodeId, WeightedGraph};
use crate::rng::{mix, node_stream, purpose};
use crate::sim::{log2_ceil, Network};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpannerError {
    #[error("invalid spanner parameter: {0}")]
    BadParams(String),
    #[error("{count} marked nodes still active after stage {stage}")]
    ActiveAfterStage { stage: usize, count: usize },
    #[error("source {0} is not a node")]
    BadSource(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Spanner edge backed by a path of the graph it was built over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpannerEdge {
    pub u: NodeId,
    pub v: NodeId,
    pub w: u64,
    pub responsible: NodeId,
    /// Path from `u` to `v`.
    pub witness: Vec<NodeId>,
}

#[derive(Clone, Debug, Default)]
pub struct Spanner {
    pub n: usize,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<SpannerEdge>,
}

impl Spanner {
    fn from_map(n: usize, nodes: Vec<NodeId>, map: BTreeMap<(NodeId, NodeId), SpannerEdge>) -> Spanner {
        Spanner { n, nodes, edges: map.into_values().collect() }
    }

    pub fn to_graph(&self) -> WeightedGraph {
        let edges: Vec<Edge> = self.edges.iter().map(|e| Edge { u: e.u, v: e.v, w: e.w }).collect();
        let max_w = edges.iter().map(|e| e.w).max().unwrap_or(1);
        WeightedGraph::new(self.n, max_w, edges).expect("spanner edges are simple and positive")
    }

    /// Number of edges each node is responsible for.
    pub fn responsibility(&self) -> Vec<usize> {
        let mut count = vec![0; self.n];
        for e in &self.edges {
            count[e.responsible] += 1;
        }
        count
    }

    pub fn max_responsibility(&self) -> usize {
        self.responsibility().into_iter().max().unwrap_or(0)
    }

    /// True when every witness is a path of `base` from `u` to `v` whose weight equals `w`.
    pub fn witnesses_sound(&self, base: &WeightedGraph) -> bool {
        self.edges.iter().all(|e| {
            let p = &e.witness;
            if p.first() != Some(&e.u) || p.last() != Some(&e.v) || p.len() < 2 {
                return false;
            }
            let mut total = 0u64;
            for hop in p.windows(2) {
                match base.edge_between(hop[0], hop[1]) {
                    Some(nb) => total += nb.w,
                    None => return false,
                }
            }
            total == e.w
        })
    }

    /// One line per edge: `u v w : v0 v1 ... vp`, 1-based.
    pub fn write_sidecar<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.edges {
            write!(out, "{} {} {} :", e.u + 1, e.v + 1, e.w)?;
            for &x in &e.witness {
                write!(out, " {}", x + 1)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn insert_edge(map: &mut BTreeMap<(NodeId, NodeId), SpannerEdge>, e: SpannerEdge) {
    let key = (e.u.min(e.v), e.v.max(e.u));
    match map.get(&key) {
        Some(old) if old.w <= e.w => {}
        _ => {
            map.insert(key, e);
        }
    }
}

/// Hop-layered Bellman-Ford from one root over active nodes, dropping labels
/// above `cap`. Keeps the improvement history so that distances and paths
/// for every smaller hop budget can be read back.
struct LimitedSearch {
    root: NodeId,
    /// Per node: (layer, distance, parent) in order of improvement.
    updates: Vec<Vec<(usize, u64, NodeId)>>,
    reached: Vec<NodeId>,
}

impl LimitedSearch {
    fn run(g: &WeightedGraph, active: &[bool], root: NodeId, hops: usize, cap: u64) -> LimitedSearch {
        let mut updates: Vec<Vec<(usize, u64, NodeId)>> = vec![Vec::new(); g.n()];
        updates[root].push((0, 0, root));
        let mut reached = vec![root];
        let mut frontier = vec![root];
        for layer in 1..=hops {
            let snapshot: Vec<(NodeId, u64)> =
                frontier.iter().map(|&u| (u, updates[u].last().expect("frontier nodes are labelled").1)).collect();
            let mut next = Vec::new();
            for (u, du) in snapshot {
                for nb in g.neighbors(u) {
                    let v = nb.node;
                    let cand = du + nb.w;
                    if !active[v] || cand > cap {
                        continue;
                    }
                    let hist = &mut updates[v];
                    match hist.last_mut() {
                        Some(last) if last.1 <= cand => {}
                        Some(last) if last.0 == layer => *last = (layer, cand, u),
                        last => {
                            if last.is_none() {
                                reached.push(v);
                            }
                            hist.push((layer, cand, u));
                            next.push(v);
                        }
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        reached.sort_unstable();
        LimitedSearch { root, updates, reached }
    }

    fn entry(&self, v: NodeId, hops: usize) -> Option<&(usize, u64, NodeId)> {
        self.updates[v].iter().rev().find(|e| e.0 <= hops)
    }

    fn dist(&self, v: NodeId, hops: usize) -> Option<u64> {
        self.entry(v, hops).map(|e| e.1)
    }

    /// Path from `v` back to the root using at most `hops` edges.
    fn path_from(&self, v: NodeId, hops: usize) -> Vec<NodeId> {
        let mut path = vec![v];
        let mut cur = v;
        let mut budget = hops;
        while cur != self.root {
            let &(layer, _, parent) = self.entry(cur, budget).expect("labelled within budget");
            path.push(parent);
            cur = parent;
            budget = layer - 1;
        }
        path
    }
}

/// Nodes whose `(h * x)`-hop-limited distance to `r` is at most `x * l`.
pub fn ball(g: &WeightedGraph, r: NodeId, x: usize, l: f64, h: usize) -> Vec<NodeId> {
    let active = vec![true; g.n()];
    LimitedSearch::run(g, &active, r, h * x, (x as f64 * l).floor() as u64).reached
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkeletonParams {
    pub hops: usize,
    pub k: usize,
    pub eta: f64,
}

impl SkeletonParams {
    fn validate(&self) -> Result<(), SpannerError> {
        if self.hops == 0 || self.k == 0 || !(self.eta > 1.0) {
            return Err(SpannerError::BadParams(format!(
                "hops={} k={} eta={} (need hops>=1, k>=1, eta>1)",
                self.hops, self.k, self.eta
            )));
        }
        Ok(())
    }
}

/// Number of stages `ceil(log_eta w)`, at least one.
pub fn stage_count(weight_bound: u64, eta: f64) -> usize {
    let mut stages = 1;
    let mut reach = eta;
    while reach < weight_bound as f64 {
        stages += 1;
        reach *= eta;
    }
    stages
}

#[derive(Clone, Debug)]
pub struct SkeletonSpanner {
    pub spanner: Spanner,
    pub params: SkeletonParams,
    /// Bound W on the weight of any path of at most `hops` edges.
    pub weight_bound: u64,
    pub stages: usize,
    /// Largest number of sampled balls any node joined in one phase.
    pub max_ball_membership: usize,
}

impl SkeletonSpanner {
    /// `size_constant * k * |M|^(1+1/k) * ln n * log_eta W`.
    pub fn size_budget(&self, size_constant: f64) -> f64 {
        let m = self.spanner.nodes.len() as f64;
        let k = self.params.k as f64;
        size_constant * k * m.powf(1.0 + 1.0 / k) * (self.spanner.n as f64).ln() * self.stages as f64
    }

    /// Rounds of the global realization with a unit constant:
    /// `(delta + log n) * |M|^(1/k) * log^2 n * h * k^2 * log_eta W`.
    pub fn realization_rounds(&self, delta: usize) -> u64 {
        let lg = log2_ceil(self.spanner.n).max(1) as f64;
        let m = self.spanner.nodes.len().max(1) as f64;
        let k = self.params.k as f64;
        ((delta as f64 + lg) * m.powf(1.0 / k) * lg * lg * self.params.hops as f64 * k * k * self.stages as f64).ceil()
            as u64
    }
}

/// Builds an h-hop skeleton spanner of `g` on the sorted node set `marked`.
pub fn build_skeleton_spanner(
    g: &WeightedGraph,
    marked: &[NodeId],
    params: SkeletonParams,
    seed: u64,
) -> Result<SkeletonSpanner, SpannerError> {
    params.validate()?;
    let n = g.n();
    let weight_bound = params.hops as u64 * g.heaviest_edge().max(1);
    let stages = stage_count(weight_bound, params.eta);
    let mut is_marked = vec![false; n];
    for &v in marked {
        is_marked[v] = true;
    }
    let mut map = BTreeMap::new();
    let mut max_ball_membership = 0;
    for stage in 1..=stages {
        let band = params.eta.powi(stage as i32);
        let members = spanner_stage(g, &is_marked, stage, band, params, seed, &mut map)?;
        max_ball_membership = max_ball_membership.max(members);
    }
    Ok(SkeletonSpanner {
        spanner: Spanner::from_map(n, marked.to_vec(), map),
        params,
        weight_bound,
        stages,
        max_ball_membership,
    })
}

/// One stage handling h-limited distances in `[band / eta, band]`. Adds its
/// edges to `map` and returns the largest per-phase ball membership.
fn spanner_stage(
    g: &WeightedGraph,
    is_marked: &[bool],
    stage: usize,
    band: f64,
    params: SkeletonParams,
    seed: u64,
    map: &mut BTreeMap<(NodeId, NodeId), SpannerEdge>,
) -> Result<usize, SpannerError> {
    let n = g.n();
    let k = params.k;
    let marked_count = is_marked.iter().filter(|&&m| m).count() as f64;
    let mut active = vec![true; n];
    let mut max_members = 0;
    for j in 0..k {
        let p = marked_count.powf((j + 1) as f64 / k as f64 - 1.0).min(1.0);
        let sampled: Vec<NodeId> = (0..n)
            .filter(|&r| is_marked[r] && active[r])
            .filter(|&r| {
                j + 1 == k
                    || node_stream(seed, purpose::SPANNER_SAMPLE, r, mix(&[stage as u64, j as u64])).random_bool(p)
            })
            .collect();
        let reach = k - j;
        let cap = (reach as f64 * band).floor() as u64;
        let inner_cap = ((reach - 1) as f64 * band).floor() as u64;
        let inner_hops = params.hops * (reach - 1);
        let mut members = vec![0usize; n];
        let mut leaving = Vec::new();
        for &r in &sampled {
            let search = LimitedSearch::run(g, &active, r, params.hops * reach, cap);
            for &v in &search.reached {
                members[v] += 1;
                if is_marked[v] && v != r {
                    let hops = params.hops * reach;
                    insert_edge(
                        map,
                        SpannerEdge {
                            u: v,
                            v: r,
                            w: search.dist(v, hops).expect("reached"),
                            responsible: v,
                            witness: search.path_from(v, hops),
                        },
                    );
                }
                if search.dist(v, inner_hops).is_some_and(|d| d <= inner_cap) {
                    leaving.push(v);
                }
            }
        }
        max_members = max_members.max(members.into_iter().max().unwrap_or(0));
        for v in leaving {
            active[v] = false;
        }
    }
    let left = (0..n).filter(|&v| is_marked[v] && active[v]).count();
    if left > 0 {
        return Err(SpannerError::ActiveAfterStage { stage, count: left });
    }
    Ok(max_members)
}

/// Baswana-Sen (2k-1)-spanner of all of `g`, returned with its round count
/// in the local network.
pub fn baswana_sen(g: &WeightedGraph, k: usize, seed: u64) -> Result<(Spanner, u64), SpannerError> {
    if k == 0 {
        return Err(SpannerError::BadParams("baswana-sen needs k >= 1".into()));
    }
    let n = g.n();
    let order = |nb: &crate::graph::Neighbor| (nb.w, nb.edge);
    let mut alive = vec![true; g.m()];
    let mut cluster: Vec<Option<NodeId>> = (0..n).map(Some).collect();
    let mut map = BTreeMap::new();
    let add = |map: &mut BTreeMap<_, _>, v: NodeId, nb: &crate::graph::Neighbor| {
        insert_edge(map, SpannerEdge { u: v, v: nb.node, w: nb.w, responsible: v, witness: vec![v, nb.node] });
    };
    let p = (n as f64).powf(-1.0 / k as f64);
    let mut rounds = 0;
    for phase in 1..k {
        rounds += phase as u64;
        let sampled: Vec<bool> =
            (0..n).map(|c| node_stream(seed, purpose::CLUSTER_SAMPLE, c, phase as u64).random_bool(p)).collect();
        let mut next = vec![None; n];
        let mut dead = Vec::new();
        for v in 0..n {
            let Some(c) = cluster[v] else { continue };
            if sampled[c] {
                next[v] = Some(c);
                continue;
            }
            // least edge to each adjacent cluster
            let mut best: BTreeMap<NodeId, crate::graph::Neighbor> = BTreeMap::new();
            for nb in g.neighbors(v).iter().filter(|nb| alive[nb.edge]) {
                let Some(cc) = cluster[nb.node] else { continue };
                let slot = best.entry(cc).or_insert(*nb);
                if order(nb) < order(slot) {
                    *slot = *nb;
                }
            }
            let nearest = best.iter().filter(|(cc, _)| sampled[**cc]).min_by_key(|(_, nb)| order(nb));
            let cut: Vec<NodeId> = match nearest {
                None => {
                    for nb in best.values() {
                        add(&mut map, v, nb);
                    }
                    best.keys().copied().collect()
                }
                Some((&joined, e)) => {
                    add(&mut map, v, e);
                    next[v] = Some(joined);
                    let lighter: Vec<NodeId> = best
                        .iter()
                        .filter(|(_, nb)| order(nb) < order(e))
                        .map(|(&cc, nb)| {
                            add(&mut map, v, nb);
                            cc
                        })
                        .collect();
                    lighter.into_iter().chain([joined]).collect()
                }
            };
            for nb in g.neighbors(v).iter().filter(|nb| alive[nb.edge]) {
                if cluster[nb.node].is_some_and(|cc| cut.contains(&cc)) {
                    dead.push(nb.edge);
                }
            }
        }
        for e in dead {
            alive[e] = false;
        }
        cluster = next;
        for (id, e) in g.edges().iter().enumerate() {
            let orphan = cluster[e.u].is_none() || cluster[e.v].is_none();
            if orphan || cluster[e.u] == cluster[e.v] {
                alive[id] = false;
            }
        }
    }
    rounds += k as u64;
    for v in 0..n {
        let mut best: BTreeMap<NodeId, crate::graph::Neighbor> = BTreeMap::new();
        for nb in g.neighbors(v).iter().filter(|nb| alive[nb.edge]) {
            let cc = cluster[nb.node].expect("live edges join clustered nodes");
            let slot = best.entry(cc).or_insert(*nb);
            if order(nb) < order(slot) {
                *slot = *nb;
            }
        }
        for nb in best.values() {
            add(&mut map, v, nb);
        }
    }
    Ok((Spanner::from_map(n, (0..n).collect(), map), rounds))
}

/// Smallest k with `alpha^k >= n`, at least one.
pub fn log_ceil(n: usize, alpha: f64) -> usize {
    let mut k = 1;
    let mut reach = alpha;
    while reach < n as f64 {
        k += 1;
        reach *= alpha;
    }
    k
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HierarchyParams {
    pub alpha: f64,
    /// `h = hop_constant * alpha`.
    pub hop_constant: f64,
    /// Bellman-Ford rounds over the union: `bfs_constant * alpha * k`.
    pub bfs_constant: f64,
    pub eta: f64,
}

impl HierarchyParams {
    pub fn new(alpha: f64) -> Self {
        HierarchyParams { alpha, hop_constant: 4.0, bfs_constant: 2.0, eta: 2.0 }
    }
}

#[derive(Clone, Debug)]
pub struct SpannerHierarchy {
    /// Level 1 spans all nodes; level i >= 2 is a skeleton spanner of level i-1.
    pub levels: Vec<Spanner>,
    pub skeletons: Vec<SkeletonSpanner>,
    pub k: usize,
    pub hops: usize,
    pub base_rounds: u64,
}

impl SpannerHierarchy {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// `(2 eta k)^T * (2k - 1)`.
    pub fn stretch_budget(&self, eta: f64) -> f64 {
        let k = self.k as f64;
        (2.0 * eta * k).powi(self.depth() as i32) * (2.0 * k - 1.0)
    }

    /// Minimum-weight union of all levels.
    pub fn union(&self) -> WeightedGraph {
        let n = self.levels[0].n;
        let mut map = BTreeMap::new();
        for lvl in &self.levels {
            for e in &lvl.edges {
                insert_edge(&mut map, e.clone());
            }
        }
        Spanner::from_map(n, (0..n).collect(), map).to_graph()
    }
}

pub fn build_hierarchy(
    g: &WeightedGraph,
    params: HierarchyParams,
    seed: u64,
) -> Result<SpannerHierarchy, SpannerError> {
    if !(params.alpha >= 5.0) {
        return Err(SpannerError::BadParams(format!("alpha must be at least 5, got {}", params.alpha)));
    }
    let n = g.n();
    let k = log_ceil(n, params.alpha);
    let hops = (params.hop_constant * params.alpha).ceil() as usize;
    let (first, base_rounds) = baswana_sen(g, k, seed)?;
    let mut levels = vec![first];
    let mut skeletons = Vec::new();
    loop {
        let level = levels.len() + 1;
        let prob = if level == 2 { (n as f64).ln() / params.alpha } else { 1.0 / params.alpha }.min(1.0);
        let marked: Vec<NodeId> = levels
            .last()
            .expect("nonempty")
            .nodes
            .iter()
            .copied()
            .filter(|&v| node_stream(seed, purpose::LEVEL_SAMPLE, v, level as u64).random_bool(prob))
            .collect();
        if marked.is_empty() {
            break;
        }
        let base = levels.last().expect("nonempty").to_graph();
        let sk = build_skeleton_spanner(
            &base,
            &marked,
            SkeletonParams { hops, k, eta: params.eta },
            mix(&[seed, level as u64]),
        )?;
        levels.push(sk.spanner.clone());
        skeletons.push(sk);
    }
    Ok(SpannerHierarchy { levels, skeletons, k, hops, base_rounds })
}

#[derive(Clone, Debug)]
pub struct RecursiveOutput {
    pub dist: Vec<Dist>,
    pub hierarchy: SpannerHierarchy,
    pub bfs_rounds: usize,
    /// Rounds of the global spanner realizations, reported apart from the ledger.
    pub realization_rounds: u64,
}

/// Approximate SSSP by bounded Bellman-Ford from `source` over the union of the hierarchy.
pub fn recursive_sssp(
    net: &mut Network,
    source: NodeId,
    params: HierarchyParams,
) -> Result<RecursiveOutput, SpannerError> {
    let g = net.graph();
    let n = g.n();
    if source >= n {
        return Err(SpannerError::BadSource(source + 1));
    }
    let seed = net.config().seed;
    let hierarchy = build_hierarchy(g, params, seed)?;
    net.set_phase("base_spanner");
    net.local_step(hierarchy.base_rounds.max(1));
    let mut realization_rounds = 0;
    for (i, sk) in hierarchy.skeletons.iter().enumerate() {
        realization_rounds += sk.realization_rounds(hierarchy.levels[i].max_responsibility());
    }
    net.set_phase("union_bfs");
    let h = hierarchy.union();
    let delta = hierarchy.levels.iter().map(Spanner::max_responsibility).sum::<usize>() as u64;
    let gamma = net.config().global_cap.max(1);
    let per_round = net.agg_rounds() * (delta + 1).div_ceil(gamma);
    let bfs_rounds = (params.bfs_constant * params.alpha * hierarchy.k as f64).ceil() as usize;
    let mut dist = vec![Dist::INF; n];
    dist[source] = Dist::ZERO;
    let mut stable = false;
    for _ in 0..bfs_rounds {
        net.charge(per_round, 0, (delta + 1).min(gamma));
        if stable {
            continue;
        }
        let mut next = dist.clone();
        for e in h.edges() {
            next[e.v] = next[e.v].min(dist[e.u].plus(e.w));
            next[e.u] = next[e.u].min(dist[e.v].plus(e.w));
        }
        stable = next == dist;
        dist = next;
    }
    Ok(RecursiveOutput { dist, hierarchy, bfs_rounds, realization_rounds })
}

/// Checks the at-most-two-edge stretch property over marked pairs within
/// `hops` hops. Returns (pairs checked, pairs violating `2 eta k`).
pub fn two_hop_coverage(g: &WeightedGraph, sk: &SkeletonSpanner) -> (usize, usize) {
    let marked = &sk.spanner.nodes;
    let hg = sk.spanner.to_graph();
    let bound = 2.0 * sk.params.eta * sk.params.k as f64;
    let mut pairs = 0;
    let mut bad = 0;
    for (a, &u) in marked.iter().enumerate() {
        let dh = crate::graph::h_limited_distances(g, u, sk.params.hops);
        let mut best = vec![Dist::INF; g.n()];
        for nb in hg.neighbors(u) {
            best[nb.node] = best[nb.node].min(Dist(nb.w));
            for nb2 in hg.neighbors(nb.node) {
                best[nb2.node] = best[nb2.node].min(Dist(nb.w + nb2.w));
            }
        }
        for &v in &marked[a + 1..] {
            if let Some(d) = dh[v].value() {
                pairs += 1;
                if !best[v].is_finite() || best[v].0 as f64 > bound * d as f64 {
                    bad += 1;
                }
            }
        }
    }
    (pairs, bad)
}
