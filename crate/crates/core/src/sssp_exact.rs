//! Exact single-source shortest paths by phases of tree-splitting recursion,
//! plus the `(h, k)` variant for several sources.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use fixedbitset::FixedBitSet;
use thiserror::Error;

use crate::graph::{Dist, NodeId, WeightedGraph};
use crate::sim::{log2_ceil, AggEntry, AggGroup, Message, Network, SimError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SsspError {
    #[error("source {0} is not a node")]
    BadSource(usize),
    #[error("node {node} holds {count} recursion messages, limit {limit}")]
    TooManyMessages { node: usize, count: usize, limit: usize },
    #[error("no termination after {0} phases")]
    NoTermination(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// `i (i + 1) / 2`: hop budget reached after phase `i`.
pub fn triangular(i: u64) -> u64 {
    i * (i + 1) / 2
}

/// Shortest-path tree of the subgraph induced by nodes within `radius` hops
/// of `root`. Parents prefer the smaller id on ties.
#[derive(Clone, Debug)]
pub struct LocalTree {
    pub root: NodeId,
    pub nodes: Vec<NodeId>,
    /// Position of each graph node in `nodes`, `u32::MAX` if absent.
    pos: Vec<u32>,
    pub parent: Vec<Option<usize>>,
    /// Children sorted by node id.
    pub children: Vec<Vec<usize>>,
    /// Weight of the tree path from the root.
    pub dist: Vec<u64>,
}

impl LocalTree {
    pub fn build(g: &WeightedGraph, root: NodeId, radius: usize) -> LocalTree {
        let n = g.n();
        let mut pos = vec![u32::MAX; n];
        let mut nodes = vec![root];
        pos[root] = 0;
        let mut frontier = vec![root];
        for _ in 0..radius {
            let mut next = Vec::new();
            for &u in &frontier {
                for nb in g.neighbors(u) {
                    if pos[nb.node] == u32::MAX {
                        pos[nb.node] = nodes.len() as u32;
                        nodes.push(nb.node);
                        next.push(nb.node);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        let m = nodes.len();
        let mut dist = vec![Dist::INF; m];
        let mut parent: Vec<Option<usize>> = vec![None; m];
        let mut done = vec![false; m];
        let mut heap = BinaryHeap::new();
        dist[0] = Dist::ZERO;
        heap.push(Reverse((Dist::ZERO, root)));
        while let Some(Reverse((d, u))) = heap.pop() {
            let iu = pos[u] as usize;
            if done[iu] || d > dist[iu] {
                continue;
            }
            done[iu] = true;
            for nb in g.neighbors(u) {
                let iv = pos[nb.node];
                if iv == u32::MAX || done[iv as usize] {
                    continue;
                }
                let iv = iv as usize;
                let cand = d.plus(nb.w);
                let better = cand < dist[iv] || (cand == dist[iv] && parent[iv].is_some_and(|p| u < nodes[p]));
                if better {
                    if cand < dist[iv] {
                        heap.push(Reverse((cand, nb.node)));
                    }
                    dist[iv] = cand;
                    parent[iv] = Some(iu);
                }
            }
        }
        let mut children = vec![Vec::new(); m];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(i);
            }
        }
        for list in &mut children {
            list.sort_by_key(|&c| nodes[c]);
        }
        LocalTree { root, nodes, pos, parent, children, dist: dist.into_iter().map(|d| d.0).collect() }
    }

    pub fn index(&self, v: NodeId) -> Option<usize> {
        let p = self.pos[v];
        (p != u32::MAX).then_some(p as usize)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tree_dist(&self, v: NodeId) -> Option<u64> {
        self.index(v).map(|i| self.dist[i])
    }
}

/// Rooted tree given by children lists over local indices, used by the
/// splitting rule so it can be tested on arbitrary trees.
pub trait Rooted {
    fn kids(&self, v: usize) -> &[usize];
    fn id(&self, v: usize) -> NodeId;
}

impl Rooted for LocalTree {
    fn kids(&self, v: usize) -> &[usize] {
        &self.children[v]
    }
    fn id(&self, v: usize) -> NodeId {
        self.nodes[v]
    }
}

/// Sizes of subtrees within the residual tree rooted at `top` with the
/// subtrees at `cut` removed. Returns `(order, size)` where `size` is indexed
/// like `order`.
fn residual_sizes<T: Rooted>(t: &T, top: usize, cut: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<Option<usize>>) {
    if cut.contains(&top) {
        return (Vec::new(), Vec::new(), Vec::new());
    }
    let mut order = vec![top];
    let mut parent_slot: Vec<Option<usize>> = vec![None];
    let mut i = 0;
    while i < order.len() {
        let v = order[i];
        for &c in t.kids(v) {
            if !cut.contains(&c) {
                order.push(c);
                parent_slot.push(Some(i));
            }
        }
        i += 1;
    }
    let mut size = vec![1usize; order.len()];
    for j in (1..order.len()).rev() {
        let p = parent_slot[j].unwrap();
        size[p] += size[j];
    }
    (order, size, parent_slot)
}

/// Number of nodes in the residual tree.
pub fn residual_size<T: Rooted>(t: &T, top: usize, cut: &[usize]) -> usize {
    residual_sizes(t, top, cut).0.len()
}

/// Splitting node of the residual tree: walk down into the largest child
/// (smaller id on ties) while the part left outside it is below half.
pub fn splitting_node<T: Rooted>(t: &T, top: usize, cut: &[usize]) -> Option<usize> {
    let (order, size, parent_slot) = residual_sizes(t, top, cut);
    if order.is_empty() {
        return None;
    }
    let total = size[0];
    let mut kids_of: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    for j in 1..order.len() {
        kids_of[parent_slot[j].unwrap()].push(j);
    }
    let mut cur = 0;
    loop {
        let heaviest = kids_of[cur]
            .iter()
            .copied()
            .max_by(|&a, &b| size[a].cmp(&size[b]).then(t.id(order[b]).cmp(&t.id(order[a]))));
        match heaviest {
            Some(w) if 2 * (total - size[w]) < total => cur = w,
            _ => return Some(order[cur]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Recursion {
    root: NodeId,
    value: u64,
    /// Local indices (in the root's tree) of nodes whose subtrees are handed off.
    cut: Vec<usize>,
}

/// Constant `c` in the per-phase bound `c * log2(n)^2`.
pub const PHASE_ROUND_CONSTANT: f64 = 4.0;

#[derive(Clone, Debug, Default)]
pub struct PhaseReport {
    pub radius: usize,
    pub rounds: u64,
    pub changed: bool,
    pub values: Vec<Dist>,
}

#[derive(Clone, Debug)]
pub struct SsspOutput {
    pub dist: Vec<Dist>,
    pub phases: Vec<PhaseReport>,
}

/// Neighbourhood knowledge: every node floods the edges it learns.
struct Views {
    known: Vec<FixedBitSet>,
    fresh: Vec<FixedBitSet>,
}

impl Views {
    fn new(g: &WeightedGraph) -> Views {
        let known: Vec<FixedBitSet> = (0..g.n())
            .map(|v| {
                let mut b = FixedBitSet::with_capacity(g.m());
                for nb in g.neighbors(v) {
                    b.insert(nb.edge);
                }
                b
            })
            .collect();
        Views { fresh: known.clone(), known }
    }

    fn round(&mut self, net: &mut Network) {
        let g = net.graph();
        let counts: Vec<u64> = self.fresh.iter().map(|b| b.count_ones(..) as u64).collect();
        let load = g.edges().iter().map(|e| counts[e.u] + counts[e.v]).max().unwrap_or(0);
        net.local_step(load);
        let mut next = vec![FixedBitSet::with_capacity(g.m()); g.n()];
        for (u, slot) in next.iter_mut().enumerate() {
            for nb in g.neighbors(u) {
                if counts[nb.node] > 0 {
                    slot.union_with(&self.fresh[nb.node]);
                }
            }
            slot.difference_with(&self.known[u]);
            self.known[u].union_with(slot);
        }
        self.fresh = next;
    }

    /// True if `v` knows every edge of the tree.
    fn covers(&self, g: &WeightedGraph, v: NodeId, t: &LocalTree) -> bool {
        t.nodes.iter().enumerate().all(|(i, &x)| match t.parent[i] {
            None => true,
            Some(p) => g.edge_between(t.nodes[p], x).is_some_and(|nb| self.known[v].contains(nb.edge)),
        })
    }
}

/// One phase: every node with a finite value starts a recursion over its
/// tree of the given radius. Returns the new values.
fn recursion_phase(
    net: &mut Network,
    values: &[Dist],
    radius: usize,
    views: Option<&Views>,
) -> Result<Vec<Dist>, SsspError> {
    let g = net.graph();
    let n = g.n();
    let limit = log2_ceil(n) as usize + 1;
    let trees: BTreeMap<NodeId, LocalTree> =
        (0..n).filter(|&u| values[u].is_finite()).map(|u| (u, LocalTree::build(g, u, radius))).collect();
    if let Some(views) = views {
        // every tree is computable from the view of each of its members within `radius / 2` hops
        for t in trees.values() {
            debug_assert!(views.covers(g, t.root, t), "view of {} misses its tree", t.root + 1);
        }
    }
    let mut next = values.to_vec();
    let mut held: Vec<Vec<Recursion>> = vec![Vec::new(); n];
    for &u in trees.keys() {
        held[u].push(Recursion { root: u, value: values[u].0, cut: Vec::new() });
    }
    for _step in 0..limit {
        let mut kept: Vec<Vec<Recursion>> = vec![Vec::new(); n];
        let mut groups: BTreeMap<NodeId, Vec<AggEntry>> = BTreeMap::new();
        for v in 0..n {
            for msg in std::mem::take(&mut held[v]) {
                let tree = &trees[&msg.root];
                let at = tree.index(v).expect("holder lies in the tree");
                debug_assert_eq!(msg.value, values[msg.root].0 + tree.dist[at]);
                next[v] = next[v].min(Dist(msg.value));
                if residual_size(tree, at, &msg.cut) <= 1 {
                    continue;
                }
                let x = splitting_node(tree, at, &msg.cut).expect("non-empty residual tree");
                let target = tree.nodes[x];
                groups.entry(target).or_default().push(AggEntry {
                    participant: v,
                    key: msg.root as u64,
                    value: msg.value + (tree.dist[x] - tree.dist[at]),
                });
                let mut cut = msg.cut;
                cut.push(x);
                kept[v].push(Recursion { root: msg.root, value: msg.value, cut });
            }
        }
        if groups.is_empty() {
            break;
        }
        let groups: Vec<AggGroup> = groups.into_iter().map(|(target, entries)| AggGroup { target, entries }).collect();
        let winners = net.aggregate_min(&groups)?;
        let mut msgs = Vec::new();
        for (grp, win) in groups.iter().zip(winners) {
            let win = win.expect("groups are non-empty");
            let x = grp.target;
            next[x] = next[x].min(Dist(win.value));
            let tree = &trees[&(win.key as usize)];
            let ix = tree.index(x).expect("target lies in the winner's tree");
            for &c in &tree.children[ix] {
                let child = tree.nodes[c];
                let w = g.edge_between(x, child).expect("tree edge").w;
                msgs.push(Message::local(x, child, &[win.key, win.value + w]));
            }
        }
        let inbox = net.exchange(msgs)?;
        for (c, got) in inbox.into_iter().enumerate() {
            if let Some(best) = got.iter().min_by_key(|m| (m.payload[1], m.payload[0])) {
                kept[c].push(Recursion { root: best.payload[0] as usize, value: best.payload[1], cut: Vec::new() });
            }
            if kept[c].len() > limit {
                return Err(SsspError::TooManyMessages { node: c + 1, count: kept[c].len(), limit });
            }
        }
        held = kept;
    }
    for (v, list) in held.iter().enumerate() {
        for msg in list {
            next[v] = next[v].min(Dist(msg.value));
        }
    }
    Ok(next)
}

/// Exact SSSP from `source`. Phases continue until a phase changes nothing.
pub fn sssp_exact(net: &mut Network, source: NodeId) -> Result<SsspOutput, SsspError> {
    let g = net.graph();
    let n = g.n();
    if source >= n {
        return Err(SsspError::BadSource(source + 1));
    }
    let mut values = vec![Dist::INF; n];
    values[source] = Dist::ZERO;
    let mut views = Views::new(g);
    let check_views = cfg!(debug_assertions) && n <= 48;
    let mut phases = Vec::new();
    for i in 1..=(n + 2) {
        let start = net.round();
        net.set_phase("views");
        views.round(net);
        views.round(net);
        net.set_phase("recursion");
        let next = recursion_phase(net, &values, i, check_views.then_some(&views))?;
        let changed = next != values;
        net.set_phase("termination");
        let flags: Vec<bool> = next.iter().zip(&values).map(|(a, b)| a == b).collect();
        net.convergecast_and(&flags);
        values = next;
        phases.push(PhaseReport { radius: i, rounds: net.round() - start, changed, values: values.clone() });
        if !changed {
            return Ok(SsspOutput { dist: values, phases });
        }
    }
    Err(SsspError::NoTermination(n + 2))
}

/// Per-phase round ceiling `c * log2(n)^2`.
pub fn phase_round_bound(n: usize) -> f64 {
    let l = (n.max(2) as f64).log2();
    PHASE_ROUND_CONSTANT * l * l
}

/// Phase ceiling `ceil(2 sqrt(spd)) + 1`.
pub fn phase_bound(spd: usize) -> usize {
    (2.0 * (spd as f64).sqrt()).ceil() as usize + 1
}

#[derive(Clone, Debug)]
pub struct MultiSourceOutput {
    pub sources: Vec<NodeId>,
    /// `dist[v][i]` for source `sources[i]`.
    pub dist: Vec<Vec<Dist>>,
    pub stride: usize,
}

/// Distances over at most `h` hops from every source. Nodes first learn
/// their `2q`-hop neighbourhoods with `q = ceil(sqrt(k h))`; each source then
/// runs phases that each extend the hop budget by up to `q`.
pub fn hk_ssp(net: &mut Network, sources: &[NodeId], h: usize) -> Result<MultiSourceOutput, SsspError> {
    let g = net.graph();
    let n = g.n();
    if let Some(&s) = sources.iter().find(|&&s| s >= n) {
        return Err(SsspError::BadSource(s + 1));
    }
    let k = sources.len().max(1);
    let stride = ((k as f64 * h as f64).sqrt().ceil() as usize).max(1);
    net.set_phase("views");
    let mut views = Views::new(g);
    for _ in 0..2 * stride {
        views.round(net);
    }
    let mut dist = vec![vec![Dist::INF; sources.len()]; n];
    net.set_phase("recursion");
    for (i, &s) in sources.iter().enumerate() {
        let mut values = vec![Dist::INF; n];
        values[s] = Dist::ZERO;
        let mut budget = h;
        while budget > 0 {
            let radius = stride.min(budget);
            values = recursion_phase(net, &values, radius, None)?;
            budget -= radius;
        }
        for v in 0..n {
            dist[v][i] = values[v];
        }
    }
    Ok(MultiSourceOutput { sources: sources.to_vec(), dist, stride })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{dijkstra, gen_graph, h_limited_distances, random_small_graph, Family, WeightMode};
    use crate::sim::HybridConfig;

    struct Parents {
        kids: Vec<Vec<usize>>,
    }

    impl Rooted for Parents {
        fn kids(&self, v: usize) -> &[usize] {
            &self.kids[v]
        }
        fn id(&self, v: usize) -> NodeId {
            v
        }
    }

    fn from_parents(parent: &[usize]) -> Parents {
        let mut kids = vec![Vec::new(); parent.len() + 1];
        for (i, &p) in parent.iter().enumerate() {
            kids[p].push(i + 1);
        }
        Parents { kids }
    }

    fn subtree_size(t: &Parents, v: usize) -> usize {
        1 + t.kids[v].iter().map(|&c| subtree_size(t, c)).sum::<usize>()
    }

    #[test]
    fn splitting_on_star_and_path() {
        let star = from_parents(&[0, 0, 0, 0]);
        assert_eq!(splitting_node(&star, 0, &[]), Some(0));
        let path = from_parents(&[0, 1, 2, 3]);
        assert_eq!(splitting_node(&path, 0, &[]), Some(2));
        assert_eq!(splitting_node(&path, 0, &[2]), Some(0));
        assert_eq!(splitting_node(&path, 0, &[0]), None);
    }

    #[test]
    fn splitting_halves_every_small_tree() {
        // all recursive trees (parent id below child id) on up to 7 nodes
        for size in 1..=7usize {
            let mut parent = vec![0usize; size - 1];
            loop {
                let t = from_parents(&parent);
                let x = splitting_node(&t, 0, &[]).unwrap();
                assert!(2 * subtree_size(&t, x) >= size);
                assert!(t.kids[x].iter().all(|&c| 2 * subtree_size(&t, c) <= size));
                let mut i = 0;
                loop {
                    if i == parent.len() {
                        break;
                    }
                    parent[i] += 1;
                    if parent[i] <= i {
                        break;
                    }
                    parent[i] = 0;
                    i += 1;
                }
                if i == parent.len() {
                    break;
                }
            }
        }
    }

    #[test]
    fn tree_build_matches_local_dijkstra() {
        let g = random_small_graph(20, 15, 6, 4);
        for root in 0..20 {
            for radius in 1..4 {
                let t = LocalTree::build(&g, root, radius);
                let keep: Vec<bool> = (0..20).map(|v| t.index(v).is_some()).collect();
                let sub = g.induced(&keep);
                let sp = dijkstra(&sub, root);
                for (i, &v) in t.nodes.iter().enumerate() {
                    assert_eq!(Dist(t.dist[i]), sp.dist[v]);
                    assert_eq!(t.parent[i].map(|p| t.nodes[p]), sp.parent[v]);
                }
            }
        }
    }

    fn run(g: &WeightedGraph, s: NodeId, seed: u64) -> (SsspOutput, u64) {
        let mut net = Network::new(g, HybridConfig::new(g.n(), seed));
        let out = sssp_exact(&mut net, s).unwrap();
        (out, net.round())
    }

    #[test]
    fn exact_on_families() {
        for (fam, w) in [
            (Family::Path, WeightMode::Unit),
            (Family::Star, WeightMode::Uniform(9)),
            (Family::Grid, WeightMode::Uniform(5)),
            (Family::RandomConnected, WeightMode::Uniform(40)),
            (Family::Cycle, WeightMode::Uniform(3)),
        ] {
            let g = gen_graph(fam, 40, w, 3).unwrap();
            let (out, _) = run(&g, 0, 1);
            assert_eq!(out.dist, dijkstra(&g, 0).dist, "{fam:?}");
        }
    }

    #[test]
    fn phase_values_are_sound_and_monotone() {
        for seed in 0..5 {
            let g = random_small_graph(30, 30, 7, seed);
            let (out, _) = run(&g, 0, seed);
            let exact = dijkstra(&g, 0).dist;
            let mut prev = vec![Dist::INF; 30];
            for ph in &out.phases {
                for v in 0..30 {
                    assert!(ph.values[v] >= exact[v]);
                    assert!(ph.values[v] <= prev[v]);
                }
                prev = ph.values.clone();
            }
            assert_eq!(prev, exact);
        }
    }

    #[test]
    fn phase_values_match_hop_budget_on_unit_weights() {
        for seed in 0..5 {
            let unit = random_small_graph(30, 30, 1, seed);
            let (out, _) = run(&unit, 0, seed);
            for (i, ph) in out.phases.iter().enumerate() {
                assert_eq!(ph.values, h_limited_distances(&unit, 0, triangular(i as u64 + 1) as usize));
            }
        }
    }

    #[test]
    fn star_from_centre_stops_early() {
        let g = gen_graph(Family::Star, 16, WeightMode::Uniform(4), 1).unwrap();
        let (out, _) = run(&g, 0, 1);
        assert!(out.phases.len() <= 3);
        assert_eq!(out.dist, dijkstra(&g, 0).dist);
    }

    #[test]
    fn single_node() {
        let g = WeightedGraph::connected(1, 1, vec![]).unwrap();
        let (out, _) = run(&g, 0, 0);
        assert_eq!(out.dist, vec![Dist::ZERO]);
        assert_eq!(out.phases.len(), 1);
    }

    #[test]
    fn hk_matches_hop_limited_on_unit_weights() {
        let g = gen_graph(Family::RandomConnected, 64, WeightMode::Unit, 2).unwrap();
        let mut net = Network::new(&g, HybridConfig::new(64, 1));
        let src = [0, 9, 17, 40];
        let out = hk_ssp(&mut net, &src, 3).unwrap();
        for (i, &s) in src.iter().enumerate() {
            let oracle = h_limited_distances(&g, s, 3);
            for v in 0..64 {
                assert_eq!(out.dist[v][i], oracle[v]);
            }
        }
    }
}
