//! Randomized dissemination of `k` tokens to every node: balancing,
//! multiplication, seeding and local flooding.

use std::collections::{BTreeMap, HashMap};

use fixedbitset::FixedBitSet;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use thiserror::Error;

use crate::graph::NodeId;
use crate::rng::purpose;
use crate::sim::{log2_ceil, schedule_with_random_delays, Job, Message, Network, SimError};

/// A token is three words, e.g. `(from, to, distance)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(pub [u64; 3]);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenError {
    #[error("token {0:?} appears more than once")]
    Duplicate(Token),
    #[error("seeding needs x >= 2, got {0}")]
    SpreadTooSmall(f64),
    #[error("initial token lists cover {got} nodes, network has {n}")]
    WrongNodeCount { got: usize, n: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LocalSchedule {
    /// Every round each node forwards newly learned tokens to all neighbours.
    Flood,
    /// Each token's flood starts after a random delay (only used with a finite local capacity).
    RandomDelay { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenParams {
    /// Seeding spread; `None` picks `max(2, ceil(sqrt k))`.
    pub spread: Option<f64>,
    pub zeta: f64,
    /// Flooding runs for `ceil(flood_constant * x * ln n)` rounds.
    pub flood_constant: f64,
    pub schedule: LocalSchedule,
    pub label: String,
}

impl Default for TokenParams {
    fn default() -> Self {
        TokenParams { spread: None, zeta: 4.0, flood_constant: 2.0, schedule: LocalSchedule::Flood, label: "td".into() }
    }
}

impl TokenParams {
    pub fn labelled(label: &str) -> Self {
        TokenParams { label: label.into(), ..Default::default() }
    }
}

/// Who holds which token copies and who knows which tokens.
#[derive(Clone, Debug)]
pub struct TokenState {
    pub tokens: Vec<Token>,
    /// Multiset of token indices held by each node.
    pub holdings: Vec<Vec<usize>>,
    pub knowledge: Vec<FixedBitSet>,
    index: HashMap<Token, usize>,
}

impl TokenState {
    pub fn new(initial: Vec<Vec<Token>>) -> Result<Self, TokenError> {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        let mut holdings = Vec::with_capacity(initial.len());
        for list in &initial {
            let mut held = Vec::with_capacity(list.len());
            for &t in list {
                if index.insert(t, tokens.len()).is_some() {
                    return Err(TokenError::Duplicate(t));
                }
                held.push(tokens.len());
                tokens.push(t);
            }
            holdings.push(held);
        }
        let k = tokens.len();
        let knowledge = holdings
            .iter()
            .map(|held| {
                let mut b = FixedBitSet::with_capacity(k);
                for &t in held {
                    b.insert(t);
                }
                b
            })
            .collect();
        Ok(TokenState { tokens, holdings, knowledge, index })
    }

    pub fn k(&self) -> usize {
        self.tokens.len()
    }

    pub fn n(&self) -> usize {
        self.holdings.len()
    }

    pub fn copies(&self) -> usize {
        self.holdings.iter().map(Vec::len).sum()
    }

    pub fn knows(&self, v: NodeId, t: usize) -> bool {
        self.knowledge[v].contains(t)
    }

    pub fn is_complete(&self) -> bool {
        let k = self.k();
        self.knowledge.iter().all(|b| b.count_ones(..) == k)
    }

    /// Tokens known by `v`.
    pub fn known_by(&self, v: NodeId) -> impl Iterator<Item = &Token> + '_ {
        self.knowledge[v].ones().map(|t| &self.tokens[t])
    }

    /// Number of distinct tokens known somewhere in the network.
    pub fn distinct_known(&self) -> usize {
        let mut all = FixedBitSet::with_capacity(self.k());
        for b in &self.knowledge {
            all.union_with(b);
        }
        all.count_ones(..)
    }

    fn deliver(&mut self, inboxes: Vec<Vec<Message>>, hold: bool) {
        for (v, inbox) in inboxes.into_iter().enumerate() {
            for m in inbox {
                let t = self.index[&Token([m.payload[0], m.payload[1], m.payload[2]])];
                self.knowledge[v].insert(t);
                if hold {
                    self.holdings[v].push(t);
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenStats {
    pub k: usize,
    pub spread: u64,
    pub phases: u32,
    pub copies_after_multiplication: usize,
    pub rounds_balance: u64,
    pub rounds_multiply: u64,
    pub rounds_seed: u64,
    pub rounds_local: u64,
    /// Flood rounds after which nobody learned anything new.
    pub flood_quiet_after: u64,
    pub complete: bool,
}

impl TokenStats {
    pub fn rounds(&self) -> u64 {
        self.rounds_balance + self.rounds_multiply + self.rounds_seed + self.rounds_local
    }
}

fn sends_per_round(n: usize) -> usize {
    log2_ceil(n).max(1) as usize
}

fn token_msg(src: NodeId, dst: NodeId, t: &Token) -> Message {
    Message::global(src, dst, &t.0)
}

/// Spreads every node's initial tokens to uniformly random nodes so that
/// afterwards each token sits at one node and no node holds many.
pub fn balance(net: &mut Network, st: &mut TokenState, label: &str) -> Result<u64, TokenError> {
    net.set_phase(&format!("{label}:balance"));
    let start = net.round();
    let n = st.n();
    let sigma = sends_per_round(n);
    let mut pending: Vec<Vec<usize>> = std::mem::replace(&mut st.holdings, vec![Vec::new(); n]);
    for list in &mut pending {
        list.reverse();
    }
    let mut step = 0u64;
    while pending.iter().any(|p| !p.is_empty()) {
        let mut msgs = Vec::new();
        for v in 0..n {
            let mut rng = net.node_rng(purpose::BALANCE, v, step);
            for _ in 0..sigma {
                let Some(t) = pending[v].pop() else { break };
                let target = rng.random_range(0..n);
                if target == v {
                    st.holdings[v].push(t);
                } else {
                    msgs.push(token_msg(v, target, &st.tokens[t]));
                }
            }
        }
        let inbox = net.exchange(msgs)?;
        st.deliver(inbox, true);
        step += 1;
    }
    Ok(net.round() - start)
}

/// Number of doubling phases: the largest `p` with `k * 2^p <= n`, or 0 when `k > n/2`.
pub fn doubling_phases(n: usize, k: usize) -> u32 {
    if k == 0 || 2 * k > n {
        return 0;
    }
    let mut p = 0;
    while k << (p + 1) <= n {
        p += 1;
    }
    p
}

/// Each phase sends every held copy to two random nodes; only the copies
/// received in the phase are kept, so the copy count doubles exactly.
pub fn multiply(net: &mut Network, st: &mut TokenState, label: &str) -> Result<(u32, u64), TokenError> {
    net.set_phase(&format!("{label}:multiply"));
    let start = net.round();
    let n = st.n();
    let phases = doubling_phases(n, st.k());
    for phase in 0..phases {
        let held = std::mem::replace(&mut st.holdings, vec![Vec::new(); n]);
        let mut msgs = Vec::new();
        for (v, list) in held.iter().enumerate() {
            let mut rng = net.node_rng(purpose::MULTIPLY, v, phase as u64);
            for &t in list {
                for _ in 0..2 {
                    let target = rng.random_range(0..n);
                    if target == v {
                        st.holdings[v].push(t);
                    } else {
                        msgs.push(token_msg(v, target, &st.tokens[t]));
                    }
                }
            }
        }
        let inbox = net.exchange(msgs)?;
        st.deliver(inbox, true);
    }
    Ok((phases, net.round() - start))
}

/// Per-node seeding probability for a spread of `x`.
pub fn seeding_rate(n: usize, k: usize, x: f64, zeta: f64) -> f64 {
    let ln_n = (n as f64).ln();
    let threshold = n as f64 / (zeta * ln_n);
    let p = if (k as f64) < threshold { k as f64 * zeta * ln_n / (x * n as f64) } else { 1.0 / x };
    p.clamp(0.0, 1.0)
}

/// Every holder of a token sends it to a random node set in which each node
/// is included with the seeding probability.
pub fn seed_tokens(net: &mut Network, st: &mut TokenState, x: f64, zeta: f64, label: &str) -> Result<u64, TokenError> {
    if x < 2.0 {
        return Err(TokenError::SpreadTooSmall(x));
    }
    net.set_phase(&format!("{label}:seed"));
    let start = net.round();
    let n = st.n();
    let p = seeding_rate(n, st.k(), x, zeta);
    let sigma = sends_per_round(n);
    let mut queues: Vec<Vec<(usize, NodeId)>> = vec![Vec::new(); n];
    if p > 0.0 {
        let binom = Binomial::new(n as u64, p).expect("valid probability");
        for (v, queue) in queues.iter_mut().enumerate() {
            let mut distinct = st.holdings[v].clone();
            distinct.sort_unstable();
            distinct.dedup();
            let mut rng = net.node_rng(purpose::SEED_TOKENS, v, 0);
            for t in distinct {
                let size = binom.sample(&mut rng) as usize;
                for target in sample(&mut rng, n, size) {
                    if target != v {
                        queue.push((t, target));
                    }
                }
            }
            queue.reverse();
        }
    }
    while queues.iter().any(|q| !q.is_empty()) {
        let mut msgs = Vec::new();
        for (v, queue) in queues.iter_mut().enumerate() {
            for _ in 0..sigma {
                let Some((t, target)) = queue.pop() else { break };
                msgs.push(token_msg(v, target, &st.tokens[t]));
            }
        }
        let inbox = net.exchange(msgs)?;
        st.deliver(inbox, false);
    }
    Ok(net.round() - start)
}

pub fn flood_rounds(n: usize, x: f64, c: f64) -> u64 {
    (c * x * (n as f64).ln()).ceil().max(0.0) as u64
}

/// Forwards newly learned tokens over local edges for `rounds` rounds.
/// Returns `(rounds used, last round in which someone learned something)`.
pub fn local_dissemination(
    net: &mut Network,
    st: &mut TokenState,
    rounds: u64,
    schedule: LocalSchedule,
    label: &str,
) -> Result<(u64, u64), TokenError> {
    net.set_phase(&format!("{label}:local"));
    match (schedule, net.config().local_cap.0) {
        (LocalSchedule::RandomDelay { alpha }, Some(cap)) => delayed_flood(net, st, rounds, cap, alpha),
        _ => flood(net, st, rounds),
    }
}

fn flood(net: &mut Network, st: &mut TokenState, rounds: u64) -> Result<(u64, u64), TokenError> {
    let g = net.graph();
    let n = st.n();
    let k = st.k();
    let start = net.round();
    let mut fresh: Vec<FixedBitSet> = st.knowledge.clone();
    let mut quiet_after = 0;
    for r in 0..rounds {
        let counts: Vec<u64> = fresh.iter().map(|b| b.count_ones(..) as u64).collect();
        if counts.iter().all(|&c| c == 0) {
            net.idle(rounds - r);
            break;
        }
        let load = g.edges().iter().map(|e| counts[e.u] + counts[e.v]).max().unwrap_or(0);
        net.local_step(load);
        let mut next = vec![FixedBitSet::with_capacity(k); n];
        let mut learned = false;
        for (u, slot) in next.iter_mut().enumerate() {
            for nb in g.neighbors(u) {
                if counts[nb.node] > 0 {
                    slot.union_with(&fresh[nb.node]);
                }
            }
            slot.difference_with(&st.knowledge[u]);
            if !slot.is_clear() {
                learned = true;
                st.knowledge[u].union_with(slot);
            }
        }
        if learned {
            quiet_after = r + 1;
        }
        fresh = next;
    }
    Ok((net.round() - start, quiet_after))
}

/// Flooding where token `t` starts after a random delay; an edge carries at
/// most `cap` messages per round and the excess is dropped.
fn delayed_flood(
    net: &mut Network,
    st: &mut TokenState,
    rounds: u64,
    cap: u64,
    alpha: f64,
) -> Result<(u64, u64), TokenError> {
    let g = net.graph();
    let n = st.n();
    let k = st.k();
    let start = net.round();
    // Planned jobs: hop distance of each node from the token's knowers.
    let mut jobs = Vec::with_capacity(k);
    for t in 0..k {
        let mut depth = vec![u64::MAX; n];
        let mut frontier: Vec<NodeId> = (0..n).filter(|&v| st.knows(v, t)).collect();
        for &v in &frontier {
            depth[v] = 0;
        }
        let mut sends: BTreeMap<(u64, usize), u32> = BTreeMap::new();
        let mut d = 0;
        while !frontier.is_empty() && d < rounds {
            let mut next = Vec::new();
            for &u in &frontier {
                for nb in g.neighbors(u) {
                    *sends.entry((d, nb.edge)).or_insert(0) += 1;
                    if depth[nb.node] == u64::MAX {
                        depth[nb.node] = d + 1;
                        next.push(nb.node);
                    }
                }
            }
            frontier = next;
            d += 1;
        }
        jobs.push(Job { sends: sends.into_iter().map(|((r, e), c)| (r, e, c)).collect() });
    }
    let mut rng = net.node_rng(purpose::DELAYS, 0, net.round());
    let plan = schedule_with_random_delays(&jobs, cap, alpha, &mut rng)?;
    // Execution with the planned starts.
    let mut pending: BTreeMap<u64, Vec<(usize, NodeId)>> = BTreeMap::new();
    for t in 0..k {
        for v in 0..n {
            if st.knows(v, t) {
                pending.entry(plan.starts[t]).or_default().push((t, v));
            }
        }
    }
    let mut quiet_after = 0;
    let mut load = vec![0u64; g.m()];
    for round in 1..=plan.length {
        let Some(batch) = pending.remove(&round) else {
            net.idle(1);
            continue;
        };
        load.iter_mut().for_each(|l| *l = 0);
        let mut dropped = 0;
        let mut max_load = 0;
        for (t, u) in batch {
            for nb in g.neighbors(u) {
                if load[nb.edge] >= cap {
                    dropped += 1;
                    continue;
                }
                load[nb.edge] += 1;
                max_load = max_load.max(load[nb.edge]);
                if !st.knows(nb.node, t) {
                    st.knowledge[nb.node].insert(t);
                    quiet_after = round;
                    if round + 1 - plan.starts[t] < rounds {
                        pending.entry(round + 1).or_default().push((t, nb.node));
                    }
                }
            }
        }
        net.record_round(max_load, 0, dropped)?;
    }
    Ok((net.round() - start, quiet_after))
}

/// Full pipeline. `initial[v]` lists the tokens node `v` starts with.
pub fn disseminate(
    net: &mut Network,
    initial: Vec<Vec<Token>>,
    params: &TokenParams,
) -> Result<(TokenState, TokenStats), TokenError> {
    let n = net.n();
    if initial.len() != n {
        return Err(TokenError::WrongNodeCount { got: initial.len(), n });
    }
    let mut st = TokenState::new(initial)?;
    let k = st.k();
    let outer = net.phase().to_string();
    let mut stats = TokenStats { k, ..Default::default() };
    if k == 0 {
        stats.complete = true;
        return Ok((st, stats));
    }
    let x = params.spread.unwrap_or_else(|| ((k as f64).sqrt().ceil()).max(2.0));
    stats.spread = x.ceil() as u64;
    let label = params.label.as_str();
    stats.rounds_balance = balance(net, &mut st, label)?;
    let (phases, r) = multiply(net, &mut st, label)?;
    stats.phases = phases;
    stats.rounds_multiply = r;
    stats.copies_after_multiplication = st.copies();
    stats.rounds_seed = seed_tokens(net, &mut st, x, params.zeta, label)?;
    let flood = flood_rounds(n, x, params.flood_constant);
    let (r, quiet) = local_dissemination(net, &mut st, flood, params.schedule, label)?;
    stats.rounds_local = r;
    stats.flood_quiet_after = quiet;
    stats.complete = st.is_complete();
    net.set_phase(&outer);
    Ok((st, stats))
}

/// One token per node for the first `k` nodes, e.g. for experiments.
pub fn sample_tokens(n: usize, k: usize) -> Vec<Vec<Token>> {
    (0..n).map(|v| if v < k { vec![Token([v as u64, 0, 0])] } else { Vec::new() }).collect()
}

/// `k` tokens spread round-robin over the nodes (for `k > n`).
pub fn spread_tokens(n: usize, k: usize) -> Vec<Vec<Token>> {
    let mut out = vec![Vec::new(); n];
    for i in 0..k {
        out[i % n].push(Token([i as u64, 1, 0]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_graph, Family, WeightMode, WeightedGraph};
    use crate::sim::{HybridConfig, LocalCap};

    fn graph(family: Family, n: usize, seed: u64) -> WeightedGraph {
        gen_graph(family, n, WeightMode::Unit, seed).unwrap()
    }

    #[test]
    fn phases_formula() {
        assert_eq!(doubling_phases(256, 16), 4);
        assert_eq!(doubling_phases(1024, 32), 5);
        assert_eq!(doubling_phases(100, 51), 0);
        assert_eq!(doubling_phases(100, 50), 1);
        assert_eq!(doubling_phases(100, 3), 5);
    }

    #[test]
    fn seeding_rate_branches() {
        let full = seeding_rate(512, 400, 20.0, 4.0);
        assert!((full - 0.05).abs() < 1e-12);
        let reduced = seeding_rate(512, 4, 2.0, 4.0);
        assert!((reduced - 4.0 * 4.0 * 512f64.ln() / (2.0 * 512.0)).abs() < 1e-12);
    }

    #[test]
    fn single_token_on_path() {
        let g = graph(Family::Path, 4, 0);
        let mut net = Network::new(&g, HybridConfig::new(4, 1));
        let (st, stats) = disseminate(&mut net, sample_tokens(4, 1), &TokenParams::default()).unwrap();
        assert!(st.is_complete());
        assert!(stats.complete);
    }

    #[test]
    fn every_node_knows_every_token() {
        let g = graph(Family::RandomConnected, 128, 3);
        let mut net = Network::new(&g, HybridConfig::new(128, 9));
        let (st, stats) = disseminate(&mut net, sample_tokens(128, 128), &TokenParams::default()).unwrap();
        assert!(st.is_complete());
        assert_eq!(stats.copies_after_multiplication, 128);
        assert_eq!(net.ledger().dropped(), 0);
    }

    #[test]
    fn multiplication_copies_are_exact() {
        let g = graph(Family::RandomConnected, 256, 1);
        for seed in 0..3 {
            let mut net = Network::new(&g, HybridConfig::new(256, seed));
            let (_, stats) = disseminate(&mut net, sample_tokens(256, 16), &TokenParams::default()).unwrap();
            assert_eq!(stats.phases, 4);
            assert_eq!(stats.copies_after_multiplication, 16 << 4);
        }
    }

    #[test]
    fn balancing_preserves_tokens() {
        let g = graph(Family::Star, 64, 0);
        let mut net = Network::new(&g, HybridConfig::new(64, 4));
        let mut initial = vec![Vec::new(); 64];
        initial[0] = (0..100).map(|i| Token([i, 0, 0])).collect();
        let mut st = TokenState::new(initial).unwrap();
        balance(&mut net, &mut st, "t").unwrap();
        assert_eq!(st.copies(), 100);
        assert_eq!(st.distinct_known(), 100);
        assert!(st.holdings.iter().map(Vec::len).max().unwrap() < 20);
    }

    #[test]
    fn duplicates_and_small_spread_rejected() {
        let t = Token([1, 2, 3]);
        assert!(matches!(TokenState::new(vec![vec![t], vec![t]]), Err(TokenError::Duplicate(_))));
        let g = graph(Family::Path, 4, 0);
        let mut net = Network::new(&g, HybridConfig::new(4, 1));
        let mut st = TokenState::new(sample_tokens(4, 2)).unwrap();
        assert_eq!(seed_tokens(&mut net, &mut st, 1.0, 4.0, "t"), Err(TokenError::SpreadTooSmall(1.0)));
    }

    #[test]
    fn flood_stops_learning_when_everyone_knows() {
        let g = graph(Family::Cycle, 10, 0);
        let mut net = Network::new(&g, HybridConfig::new(10, 1));
        let all: Vec<Vec<Token>> = (0..10).map(|_| vec![]).collect();
        let mut st = TokenState::new(all).unwrap();
        let (r, quiet) = local_dissemination(&mut net, &mut st, 5, LocalSchedule::Flood, "t").unwrap();
        assert_eq!((r, quiet), (5, 0));
    }

    #[test]
    fn delayed_flood_reaches_everyone_with_enough_capacity() {
        let g = graph(Family::RandomConnected, 64, 2);
        let cfg = HybridConfig::new(64, 3).with_local_cap(LocalCap::finite(16)).strict(true);
        let mut net = Network::new(&g, cfg);
        let params = TokenParams { schedule: LocalSchedule::RandomDelay { alpha: 3.0 }, ..Default::default() };
        let (st, _) = disseminate(&mut net, sample_tokens(64, 16), &params).unwrap();
        assert!(st.is_complete());
    }
}
