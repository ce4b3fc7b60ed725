//! Synchronous round engine with local and global capacities, a per-round
//! ledger, idealized aggregation primitives and random-delay scheduling.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use smallvec::SmallVec;
use thiserror::Error;

use crate::graph::{EdgeId, NodeId, WeightedGraph};
use crate::rng::{self, Stream};

/// Messages per local edge per round; `None` means unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct LocalCap(pub Option<u64>);

impl LocalCap {
    pub const UNBOUNDED: LocalCap = LocalCap(None);

    pub fn finite(c: u64) -> LocalCap {
        LocalCap(Some(c))
    }

    pub fn admits(self, load: u64) -> bool {
        self.0.is_none_or(|c| load <= c)
    }

    /// Sub-rounds needed to push `load` messages over one edge.
    pub fn rounds_for(self, load: u64) -> u64 {
        match self.0 {
            None => 1,
            Some(c) => load.div_ceil(c.max(1)).max(1),
        }
    }
}

impl fmt::Display for LocalCap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => write!(f, "inf"),
            Some(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridConfig {
    pub local_cap: LocalCap,
    /// Global messages sent plus received per node per round.
    pub global_cap: u64,
    pub seed: u64,
    pub field_budget: usize,
    pub strict: bool,
    /// Constant in the round charge of idealized aggregation.
    pub agg_constant: f64,
}

impl HybridConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        HybridConfig {
            local_cap: LocalCap::UNBOUNDED,
            global_cap: log2_ceil(n).max(1),
            seed,
            field_budget: 3,
            strict: false,
            agg_constant: 1.0,
        }
    }

    pub fn with_local_cap(mut self, cap: LocalCap) -> Self {
        self.local_cap = cap;
        self
    }

    pub fn with_global_cap(mut self, cap: u64) -> Self {
        self.global_cap = cap;
        self
    }

    pub fn strict(mut self, on: bool) -> Self {
        self.strict = on;
        self
    }
}

pub fn log2_ceil(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Local,
    Global,
}

pub type Payload = SmallVec<[u64; 3]>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub src: NodeId,
    pub dst: NodeId,
    pub channel: Channel,
    pub payload: Payload,
}

impl Message {
    pub fn local(src: NodeId, dst: NodeId, payload: &[u64]) -> Self {
        Message { src, dst, channel: Channel::Local, payload: Payload::from_slice(payload) }
    }

    pub fn global(src: NodeId, dst: NodeId, payload: &[u64]) -> Self {
        Message { src, dst, channel: Channel::Global, payload: Payload::from_slice(payload) }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("round {round}: local edge ({u}, {v}) carries {load} messages, capacity {cap}")]
    LocalOverflow { round: u64, u: usize, v: usize, load: u64, cap: u64 },
    #[error("round {round}: node {node} handles {load} global messages, capacity {cap}")]
    GlobalOverflow { round: u64, node: usize, load: u64, cap: u64 },
    #[error("local message between non-adjacent nodes {0} and {1}")]
    NotAdjacent(usize, usize),
    #[error("global message from node {0} to itself")]
    SelfMessage(usize),
    #[error("payload of {len} fields exceeds budget {budget}")]
    PayloadTooLarge { len: usize, budget: usize },
    #[error("node {node} joins {count} aggregations in one call, limit {limit}")]
    AggregationOverload { node: usize, count: usize, limit: usize },
    #[error("node {0} is the target of more than one aggregation")]
    DuplicateTarget(usize),
    #[error("job {job} sends {count} messages over one edge in one round")]
    DenseJob { job: usize, count: u32 },
    #[error("global capacity is zero")]
    NoGlobalCapacity,
}

/// Per-round summary. Consecutive identical rounds are stored as one segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerSegment {
    pub first_round: u64,
    pub rounds: u64,
    pub max_local_per_edge: u64,
    pub max_global_per_node: u64,
    pub dropped: u64,
    pub phase: String,
}

#[derive(Clone, Debug, Default)]
pub struct RoundLedger {
    segments: Vec<LedgerSegment>,
    phase_rounds: Vec<(String, u64)>,
    total_rounds: u64,
    dropped: u64,
    max_local: u64,
    max_global: u64,
}

impl RoundLedger {
    fn push(&mut self, rounds: u64, local: u64, global: u64, dropped: u64, phase: &str) {
        if rounds == 0 {
            return;
        }
        self.max_local = self.max_local.max(local);
        self.max_global = self.max_global.max(global);
        self.dropped += dropped;
        match self.phase_rounds.iter_mut().find(|(p, _)| p == phase) {
            Some((_, r)) => *r += rounds,
            None => self.phase_rounds.push((phase.to_string(), rounds)),
        }
        let first_round = self.total_rounds + 1;
        self.total_rounds += rounds;
        if let Some(last) = self.segments.last_mut() {
            if dropped == 0
                && last.dropped == 0
                && last.max_local_per_edge == local
                && last.max_global_per_node == global
                && last.phase == phase
            {
                last.rounds += rounds;
                return;
            }
        }
        self.segments.push(LedgerSegment {
            first_round,
            rounds,
            max_local_per_edge: local,
            max_global_per_node: global,
            dropped,
            phase: phase.to_string(),
        });
    }

    pub fn total_rounds(&self) -> u64 {
        self.total_rounds
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn max_local_per_edge(&self) -> u64 {
        self.max_local
    }

    pub fn max_global_per_node(&self) -> u64 {
        self.max_global
    }

    pub fn phase_rounds(&self) -> &[(String, u64)] {
        &self.phase_rounds
    }

    pub fn rounds_in(&self, phase: &str) -> u64 {
        self.phase_rounds.iter().find(|(p, _)| p == phase).map_or(0, |(_, r)| *r)
    }

    pub fn segments(&self) -> &[LedgerSegment] {
        &self.segments
    }

    /// Writes one CSV row per round.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "round,max_local_per_edge,max_global_per_node,dropped,phase_label")?;
        for s in &self.segments {
            for r in 0..s.rounds {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    s.first_round + r,
                    s.max_local_per_edge,
                    s.max_global_per_node,
                    if r == 0 { s.dropped } else { 0 },
                    s.phase
                )?;
            }
        }
        Ok(())
    }

    /// Appends another ledger (e.g. a sub-computation run on its own network).
    pub fn absorb(&mut self, other: &RoundLedger) {
        for s in &other.segments {
            self.push(s.rounds, s.max_local_per_edge, s.max_global_per_node, s.dropped, &s.phase);
        }
    }
}

/// Messages delivered to each node, in sequence order.
pub type Inboxes = Vec<Vec<Message>>;

/// Group for [`Network::aggregate_min`]: the target learns the minimum
/// `(value, key)` among the entries.
#[derive(Clone, Debug)]
pub struct AggGroup {
    pub target: NodeId,
    pub entries: Vec<AggEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AggEntry {
    pub participant: NodeId,
    pub key: u64,
    pub value: u64,
}

pub struct Network<'g> {
    graph: &'g WeightedGraph,
    cfg: HybridConfig,
    ledger: RoundLedger,
    phase: String,
}

impl<'g> Network<'g> {
    pub fn new(graph: &'g WeightedGraph, cfg: HybridConfig) -> Self {
        Network { graph, cfg, ledger: RoundLedger::default(), phase: "main".into() }
    }

    pub fn graph(&self) -> &'g WeightedGraph {
        self.graph
    }

    pub fn config(&self) -> &HybridConfig {
        &self.cfg
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn ledger(&self) -> &RoundLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> RoundLedger {
        self.ledger
    }

    pub fn set_phase(&mut self, label: &str) {
        self.phase = label.to_string();
    }

    pub fn phase(&self) -> &str {
        &self.phase
    }

    pub fn round(&self) -> u64 {
        self.ledger.total_rounds
    }

    /// Private random stream of `node` for `purpose` and `tag`.
    pub fn node_rng(&self, purpose: u64, node: NodeId, tag: u64) -> Stream {
        rng::node_stream(self.cfg.seed, purpose, node, tag)
    }

    fn edge_of(&self, u: NodeId, v: NodeId) -> Result<EdgeId, SimError> {
        self.graph.edge_between(u, v).map(|nb| nb.edge).ok_or(SimError::NotAdjacent(u + 1, v + 1))
    }

    fn check(&self, m: &Message) -> Result<(), SimError> {
        if m.payload.len() > self.cfg.field_budget {
            return Err(SimError::PayloadTooLarge { len: m.payload.len(), budget: self.cfg.field_budget });
        }
        match m.channel {
            Channel::Local => self.edge_of(m.src, m.dst).map(|_| ()),
            Channel::Global if m.src == m.dst => Err(SimError::SelfMessage(m.src + 1)),
            Channel::Global => Ok(()),
        }
    }

    /// One raw round. Messages are sequenced in the given order; when a
    /// capacity is exceeded the highest-numbered messages are dropped
    /// (or the round faults in strict mode).
    pub fn run_round(&mut self, msgs: Vec<Message>) -> Result<Inboxes, SimError> {
        let round = self.ledger.total_rounds + 1;
        let n = self.n();
        let mut edge_load: HashMap<EdgeId, u64> = HashMap::new();
        let mut node_load = vec![0u64; n];
        let mut inboxes: Inboxes = vec![Vec::new(); n];
        let mut dropped = 0;
        for m in msgs {
            self.check(&m)?;
            let accept = match m.channel {
                Channel::Local => {
                    let e = self.edge_of(m.src, m.dst)?;
                    let load = edge_load.entry(e).or_insert(0);
                    if self.cfg.local_cap.admits(*load + 1) {
                        *load += 1;
                        true
                    } else if self.cfg.strict {
                        return Err(SimError::LocalOverflow {
                            round,
                            u: m.src + 1,
                            v: m.dst + 1,
                            load: *load + 1,
                            cap: self.cfg.local_cap.0.unwrap_or(0),
                        });
                    } else {
                        false
                    }
                }
                Channel::Global => {
                    let cap = self.cfg.global_cap;
                    let full = [m.src, m.dst].into_iter().find(|&x| node_load[x] + 1 > cap);
                    match full {
                        None => {
                            node_load[m.src] += 1;
                            node_load[m.dst] += 1;
                            true
                        }
                        Some(node) if self.cfg.strict => {
                            return Err(SimError::GlobalOverflow {
                                round,
                                node: node + 1,
                                load: node_load[node] + 1,
                                cap,
                            })
                        }
                        Some(_) => false,
                    }
                }
            };
            if accept {
                inboxes[m.dst].push(m);
            } else {
                dropped += 1;
            }
        }
        let local = edge_load.values().copied().max().unwrap_or(0);
        let global = node_load.iter().copied().max().unwrap_or(0);
        let phase = self.phase.clone();
        self.ledger.push(1, local, global, dropped, &phase);
        Ok(inboxes)
    }

    /// Delivers a batch that the protocol treats as one step, spreading it
    /// over as many engine rounds as the capacities require. Local messages
    /// queue per edge; a global message takes the first round in which both
    /// endpoints still have room.
    pub fn exchange(&mut self, msgs: Vec<Message>) -> Result<Inboxes, SimError> {
        let n = self.n();
        if msgs.is_empty() {
            return Ok(vec![Vec::new(); n]);
        }
        let gamma = self.cfg.global_cap;
        let mut edge_count: HashMap<EdgeId, u64> = HashMap::new();
        let mut global_load: Vec<Vec<u64>> = Vec::new();
        let mut slots: Vec<Vec<Message>> = Vec::new();
        for m in msgs {
            self.check(&m)?;
            let slot = match m.channel {
                Channel::Local => {
                    let e = self.edge_of(m.src, m.dst)?;
                    let c = edge_count.entry(e).or_insert(0);
                    let slot = match self.cfg.local_cap.0 {
                        None => 0,
                        Some(cap) => (*c / cap.max(1)) as usize,
                    };
                    *c += 1;
                    slot
                }
                Channel::Global => {
                    if gamma == 0 {
                        return Err(SimError::NoGlobalCapacity);
                    }
                    let mut r = 0;
                    loop {
                        if r == global_load.len() {
                            global_load.push(vec![0; n]);
                        }
                        if global_load[r][m.src] < gamma && global_load[r][m.dst] < gamma {
                            global_load[r][m.src] += 1;
                            global_load[r][m.dst] += 1;
                            break r;
                        }
                        r += 1;
                    }
                }
            };
            if slots.len() <= slot {
                slots.resize_with(slot + 1, Vec::new);
            }
            slots[slot].push(m);
        }
        let mut inboxes: Inboxes = vec![Vec::new(); n];
        for batch in slots {
            for (v, mut got) in self.run_round(batch)?.into_iter().enumerate() {
                inboxes[v].append(&mut got);
            }
        }
        Ok(inboxes)
    }

    /// Accounts for one protocol step of local traffic whose content is
    /// computed directly by the caller. `max_edge_load` is the largest number
    /// of messages any edge carries in the step.
    pub fn local_step(&mut self, max_edge_load: u64) -> u64 {
        let cap = self.cfg.local_cap;
        let rounds = cap.rounds_for(max_edge_load);
        let per_round = match cap.0 {
            None => max_edge_load,
            Some(c) => max_edge_load.min(c),
        };
        let phase = self.phase.clone();
        self.ledger.push(rounds, per_round, 0, 0, &phase);
        rounds
    }

    /// Rounds in which nothing is sent.
    pub fn idle(&mut self, rounds: u64) {
        let phase = self.phase.clone();
        self.ledger.push(rounds, 0, 0, 0, &phase);
    }

    /// One round of traffic computed by the caller; faults in strict mode if
    /// anything had to be dropped.
    pub fn record_round(&mut self, local: u64, global: u64, dropped: u64) -> Result<(), SimError> {
        if dropped > 0 && self.cfg.strict {
            return Err(SimError::LocalOverflow {
                round: self.round() + 1,
                u: 0,
                v: 0,
                load: local + dropped,
                cap: self.cfg.local_cap.0.unwrap_or(0),
            });
        }
        let phase = self.phase.clone();
        self.ledger.push(1, local, global, dropped, &phase);
        Ok(())
    }

    /// Rounds charged by an idealized primitive with the given per-node global load.
    pub fn charge(&mut self, rounds: u64, local: u64, global: u64) {
        let phase = self.phase.clone();
        self.ledger.push(rounds, local, global, 0, &phase);
    }

    /// Round charge of one aggregation or convergecast.
    pub fn agg_rounds(&self) -> u64 {
        (self.cfg.agg_constant * log2_ceil(self.n()) as f64).ceil() as u64
    }

    /// Idealized aggregation: each target learns the minimum value of its
    /// group, ties broken by smaller key. Charges the same number of rounds
    /// whatever the group sizes.
    pub fn aggregate_min(&mut self, groups: &[AggGroup]) -> Result<Vec<Option<AggEntry>>, SimError> {
        let n = self.n();
        let limit = log2_ceil(n) as usize + 1;
        let mut joins = vec![0usize; n];
        let mut is_target = vec![false; n];
        for grp in groups {
            if std::mem::replace(&mut is_target[grp.target], true) {
                return Err(SimError::DuplicateTarget(grp.target + 1));
            }
            let mut seen: Vec<NodeId> = grp.entries.iter().map(|e| e.participant).collect();
            seen.sort_unstable();
            seen.dedup();
            for p in seen {
                joins[p] += 1;
                if joins[p] > limit {
                    return Err(SimError::AggregationOverload { node: p + 1, count: joins[p], limit });
                }
            }
        }
        let results = groups.iter().map(|grp| grp.entries.iter().copied().min_by_key(|e| (e.value, e.key))).collect();
        if !groups.is_empty() {
            let busiest = joins.iter().zip(&is_target).map(|(&j, &t)| j as u64 + t as u64).max().unwrap_or(0);
            let gamma = self.cfg.global_cap.max(1);
            let stretch = busiest.div_ceil(gamma).max(1);
            self.charge(self.agg_rounds() * stretch, 0, busiest.min(gamma));
        }
        Ok(results)
    }

    /// Global AND of one flag per node, learned by every node.
    pub fn convergecast_and(&mut self, flags: &[bool]) -> bool {
        let rounds = self.agg_rounds();
        self.charge(rounds, 0, u64::from(self.n() > 1));
        flags.iter().all(|&f| f)
    }
}

/// One job for [`schedule_with_random_delays`]: `(job_round, edge, count)` triples.
#[derive(Clone, Debug, Default)]
pub struct Job {
    pub sends: Vec<(u64, EdgeId, u32)>,
}

impl Job {
    pub fn duration(&self) -> u64 {
        self.sends.iter().map(|s| s.0 + 1).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct Schedule {
    /// Start round of each job, in `1..=window`.
    pub starts: Vec<u64>,
    pub window: u64,
    /// Congestion: largest total message count of any edge over all jobs.
    pub congestion: u64,
    pub dilation: u64,
    pub length: u64,
    pub max_edge_load: u64,
    /// Number of (round, edge) pairs whose load exceeds the capacity.
    pub overloaded: u64,
    /// Messages beyond capacity, summed over overloaded pairs.
    pub excess: u64,
}

/// Most messages a job may send over one edge in one of its rounds.
pub const JOB_EDGE_BURST: u32 = 2;

/// Starts every job after an independent uniform delay in `1..=ceil(alpha * C / cap)`.
pub fn schedule_with_random_delays(
    jobs: &[Job],
    cap: u64,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Schedule, SimError> {
    let mut per_edge: HashMap<EdgeId, u64> = HashMap::new();
    for (i, job) in jobs.iter().enumerate() {
        for &(_, e, c) in &job.sends {
            if c > JOB_EDGE_BURST {
                return Err(SimError::DenseJob { job: i, count: c });
            }
            *per_edge.entry(e).or_insert(0) += c as u64;
        }
    }
    let congestion = per_edge.values().copied().max().unwrap_or(0);
    let dilation = jobs.iter().map(Job::duration).max().unwrap_or(0);
    let window = ((alpha * congestion as f64 / cap.max(1) as f64).ceil() as u64).max(1);
    let starts: Vec<u64> = jobs.iter().map(|_| rng.random_range(1..=window)).collect();
    let mut load: HashMap<(u64, EdgeId), u64> = HashMap::new();
    let mut length = 0;
    for (job, &t) in jobs.iter().zip(&starts) {
        for &(r, e, c) in &job.sends {
            *load.entry((t + r, e)).or_insert(0) += c as u64;
        }
        if job.duration() > 0 {
            length = length.max(t - 1 + job.duration());
        }
    }
    let max_edge_load = load.values().copied().max().unwrap_or(0);
    let over: Vec<u64> = load.values().filter(|&&l| l > cap).map(|&l| l - cap).collect();
    Ok(Schedule {
        starts,
        window,
        congestion,
        dilation,
        length,
        max_edge_load,
        overloaded: over.len() as u64,
        excess: over.iter().sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_graph, Family, WeightMode};
    use rand::SeedableRng;

    fn path(n: usize) -> WeightedGraph {
        gen_graph(Family::Path, n, WeightMode::Unit, 0).unwrap()
    }

    #[test]
    fn log2_ceil_values() {
        assert_eq!(log2_ceil(1), 0);
        assert_eq!(log2_ceil(2), 1);
        assert_eq!(log2_ceil(3), 2);
        assert_eq!(log2_ceil(64), 6);
        assert_eq!(log2_ceil(65), 7);
    }

    #[test]
    fn permissive_global_overflow_drops_latest() {
        let g = gen_graph(Family::Complete, 16, WeightMode::Unit, 0).unwrap();
        let cfg = HybridConfig::new(16, 1).with_global_cap(4);
        let mut net = Network::new(&g, cfg);
        let msgs: Vec<Message> = (1..=5).map(|i| Message::global(i, 0, &[i as u64])).collect();
        let inbox = net.run_round(msgs).unwrap();
        let got: Vec<u64> = inbox[0].iter().map(|m| m.payload[0]).collect();
        assert_eq!(got, vec![1, 2, 3, 4]);
        assert_eq!(net.ledger().dropped(), 1);
        assert_eq!(net.ledger().max_global_per_node(), 4);
    }

    #[test]
    fn strict_mode_faults() {
        let g = gen_graph(Family::Complete, 16, WeightMode::Unit, 0).unwrap();
        let cfg = HybridConfig::new(16, 1).with_global_cap(4).strict(true);
        let mut net = Network::new(&g, cfg);
        let msgs: Vec<Message> = (1..=5).map(|i| Message::global(i, 0, &[1])).collect();
        assert!(matches!(net.run_round(msgs), Err(SimError::GlobalOverflow { .. })));

        let g = path(3);
        let cfg = HybridConfig::new(3, 1).with_local_cap(LocalCap::finite(1)).strict(true);
        let mut net = Network::new(&g, cfg);
        let msgs = vec![Message::local(0, 1, &[1]), Message::local(1, 0, &[2])];
        assert!(matches!(net.run_round(msgs), Err(SimError::LocalOverflow { .. })));
    }

    #[test]
    fn malformed_messages_rejected() {
        let g = path(4);
        let mut net = Network::new(&g, HybridConfig::new(4, 0));
        assert_eq!(net.run_round(vec![Message::local(0, 2, &[1])]), Err(SimError::NotAdjacent(1, 3)));
        assert!(matches!(
            net.run_round(vec![Message::global(0, 2, &[1, 2, 3, 4])]),
            Err(SimError::PayloadTooLarge { .. })
        ));
        assert_eq!(net.run_round(vec![Message::global(1, 1, &[1])]), Err(SimError::SelfMessage(2)));
    }

    #[test]
    fn exchange_never_drops() {
        let g = gen_graph(Family::Complete, 32, WeightMode::Unit, 0).unwrap();
        let cfg = HybridConfig::new(32, 3).with_local_cap(LocalCap::finite(2)).strict(true);
        let mut net = Network::new(&g, cfg);
        let mut msgs: Vec<Message> = (1..32).map(|i| Message::global(i, 0, &[i as u64])).collect();
        msgs.extend((0..7).map(|i| Message::local(3, 4, &[i])));
        let inbox = net.exchange(msgs).unwrap();
        assert_eq!(inbox[0].len(), 31);
        assert_eq!(inbox[4].len(), 7);
        assert_eq!(net.ledger().dropped(), 0);
        assert_eq!(net.round(), 7); // 31 receives at cap 5 per round
        assert!(net.ledger().max_global_per_node() <= 5);
        assert!(net.ledger().max_local_per_edge() <= 2);
    }

    #[test]
    fn ledger_csv_and_phases() {
        let g = path(4);
        let mut net = Network::new(&g, HybridConfig::new(4, 0));
        net.set_phase("a");
        net.idle(2);
        net.set_phase("b");
        net.run_round(vec![Message::local(0, 1, &[1])]).unwrap();
        let mut out = Vec::new();
        net.ledger().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "round,max_local_per_edge,max_global_per_node,dropped,phase_label\n1,0,0,0,a\n2,0,0,0,a\n3,1,0,0,b\n"
        );
        assert_eq!(net.ledger().phase_rounds(), &[("a".to_string(), 2), ("b".to_string(), 1)]);
    }

    #[test]
    fn aggregation_picks_min_value_then_key() {
        let g = path(8);
        let mut net = Network::new(&g, HybridConfig::new(8, 0));
        let e = |p, key, value| AggEntry { participant: p, key, value };
        let groups = vec![
            AggGroup { target: 0, entries: vec![e(1, 5, 3), e(2, 2, 3), e(3, 1, 4)] },
            AggGroup { target: 7, entries: vec![e(4, 9, 1)] },
        ];
        let out = net.aggregate_min(&groups).unwrap();
        assert_eq!(out[0], Some(e(2, 2, 3)));
        assert_eq!(out[1], Some(e(4, 9, 1)));
        assert_eq!(net.round(), 3);
        let big = vec![AggGroup { target: 0, entries: (1..8).map(|p| e(p, p as u64, 1)).collect() }];
        net.aggregate_min(&big).unwrap();
        assert_eq!(net.round(), 6);
    }

    #[test]
    fn aggregation_limits() {
        let g = path(4);
        let mut net = Network::new(&g, HybridConfig::new(4, 0));
        let e = AggEntry { participant: 1, key: 0, value: 0 };
        let dup = vec![AggGroup { target: 0, entries: vec![e] }, AggGroup { target: 0, entries: vec![e] }];
        assert_eq!(net.aggregate_min(&dup), Err(SimError::DuplicateTarget(1)));
        let many: Vec<AggGroup> = (0..4).map(|t| AggGroup { target: t, entries: vec![e] }).collect();
        assert!(net.aggregate_min(&many[..3]).is_ok());
        assert!(matches!(net.aggregate_min(&many), Err(SimError::AggregationOverload { .. })));
    }

    #[test]
    fn convergecast_charges_and_ands() {
        let g = path(16);
        let mut net = Network::new(&g, HybridConfig::new(16, 0));
        assert!(!net.convergecast_and(&[true, false]));
        assert!(net.convergecast_and(&[true; 16]));
        assert_eq!(net.round(), 8);
    }

    #[test]
    fn random_delay_bounds() {
        let jobs: Vec<Job> = (0..10).map(|i| Job { sends: vec![(0, i % 3, 1), (1, 5, 1), (4, 6, 2)] }).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s = schedule_with_random_delays(&jobs, 4, 3.0, &mut rng).unwrap();
        assert_eq!(s.congestion, 20);
        assert_eq!(s.dilation, 5);
        assert_eq!(s.window, 15);
        assert!(s.starts.iter().all(|&t| (1..=15).contains(&t)));
        assert!(s.length <= s.window + s.dilation);
        let dense = vec![Job { sends: vec![(0, 1, 3)] }];
        assert!(schedule_with_random_delays(&dense, 4, 3.0, &mut rng).is_err());
    }
}
