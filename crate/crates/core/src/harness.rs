//! Experiment runner: builds graphs, runs one algorithm per (n, seed),
//! checks the result against sequential oracles and writes metrics CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::apsp::{self, ApproxMode, DEPTH_FACTOR};
use crate::graph::{
    all_pairs, bellman_ford_k_sources, dijkstra, gen_graph, source_spd, Dist, Family, NodeId, WeightMode, WeightedGraph,
};
use crate::rng::{node_stream, purpose};
use crate::sim::{log2_ceil, HybridConfig, LocalCap, Network, RoundLedger};
use crate::spanner::{self, HierarchyParams, SkeletonParams, Spanner};
use crate::sssp_bcc::sssp_bcc;
use crate::sssp_exact::{self, hk_ssp, phase_bound, phase_round_bound};
use crate::tokens::{self, TokenParams};

/// First column of every metrics row.
pub const SCHEMA: &str = "hybridnet-metrics-v1";

pub const METRICS_HEADER: [&str; 18] = [
    "schema",
    "algo",
    "family",
    "n",
    "seed",
    "k",
    "spd",
    "lambda",
    "rounds_total",
    "max_local_per_edge",
    "max_global_per_node",
    "dropped",
    "exact_match",
    "max_ratio",
    "sound",
    "valid",
    "phase_rounds",
    "detail",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algo {
    Td,
    ApspExact,
    Apsp3,
    ApspEps,
    SsspExact,
    SsspBcc,
    SsspRecursive,
    HkSsp,
    SpannerOnly,
}

impl Algo {
    pub const ALL: [Algo; 9] = [
        Algo::Td,
        Algo::ApspExact,
        Algo::Apsp3,
        Algo::ApspEps,
        Algo::SsspExact,
        Algo::SsspBcc,
        Algo::SsspRecursive,
        Algo::HkSsp,
        Algo::SpannerOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Td => "td",
            Algo::ApspExact => "apsp_exact",
            Algo::Apsp3 => "apsp_3",
            Algo::ApspEps => "apsp_eps",
            Algo::SsspExact => "sssp_exact",
            Algo::SsspBcc => "sssp_bcc",
            Algo::SsspRecursive => "sssp_recursive",
            Algo::HkSsp => "hk_ssp",
            Algo::SpannerOnly => "spanner_only",
        }
    }

    pub fn parse(s: &str) -> Option<Algo> {
        Algo::ALL.into_iter().find(|a| a.name() == s)
    }

    fn single_source(self) -> bool {
        matches!(self, Algo::SsspExact | Algo::SsspBcc | Algo::SsspRecursive)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaSetting {
    Fixed(LocalCap),
    /// Per-algorithm local capacity from [`table_local_cap`].
    Table,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{algo} n={n} seed={seed} round={round}: {message}")]
    Run { algo: Algo, n: usize, seed: u64, round: u64, message: String },
    #[error("fit: {0}")]
    Fit(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub family: Family,
    pub graph_file: Option<PathBuf>,
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub weights: WeightMode,
    pub lambda: LambdaSetting,
    pub gamma: Option<u64>,
    pub eps: f64,
    pub alpha: f64,
    pub x_override: Option<f64>,
    pub strict: bool,
    pub out: Option<PathBuf>,
    /// Tokens for `td`, sources for `hk_ssp`, spanner k for `spanner_only`.
    pub k: Option<usize>,
    pub hops: Option<usize>,
    pub source: NodeId,
    pub artifacts: bool,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, HarnessError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| HarnessError::Config(format!("line {}: expected key=value", i + 1)))?;
        pairs.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Comma list whose items may be inclusive ranges `a..b`.
pub fn parse_list<T>(s: &str) -> Result<Vec<T>, HarnessError>
where
    T: std::str::FromStr + Copy + Into<u64> + TryFrom<u64>,
{
    let bad = || HarnessError::Config(format!("bad list {s:?}"));
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some((a, b)) = item.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            for x in a..=b {
                out.push(T::try_from(x).map_err(|_| bad())?);
            }
        } else {
            out.push(item.parse().map_err(|_| bad())?);
        }
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| HarnessError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, HarnessError> {
    match v {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

impl ExperimentConfig {
    /// Builds a config from key/value pairs; later pairs override earlier ones.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<ExperimentConfig, HarnessError> {
        let map: BTreeMap<&str, &str> = pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let known = [
            "algo",
            "family",
            "graph",
            "n",
            "seeds",
            "weights",
            "lambda",
            "gamma",
            "eps",
            "alpha",
            "x",
            "strict",
            "out",
            "k",
            "hops",
            "source",
            "artifacts",
        ];
        if let Some(k) = map.keys().find(|k| !known.contains(k)) {
            return Err(HarnessError::Config(format!("unknown key {k:?}")));
        }
        let algo_name = map.get("algo").ok_or_else(|| HarnessError::Config("algo is required".into()))?;
        let algo = Algo::parse(algo_name).ok_or_else(|| HarnessError::Config(format!("unknown algo {algo_name:?}")))?;
        let family_name = map.get("family").copied().unwrap_or("random_connected");
        let family = Family::parse(family_name)
            .ok_or_else(|| HarnessError::Config(format!("unknown family {family_name:?}")))?;
        let graph_file = map.get("graph").map(PathBuf::from);
        let n_list: Vec<usize> = match (map.get("n"), &graph_file) {
            (Some(v), _) => parse_list::<u32>(v)?.into_iter().map(|x| x as usize).collect(),
            (None, Some(_)) => vec![0],
            (None, None) => Vec::new(),
        };
        let seeds: Vec<u64> = map.get("seeds").map(|v| parse_list::<u64>(v)).transpose()?.unwrap_or_default();
        let default_weights = match algo {
            Algo::ApspEps | Algo::HkSsp => WeightMode::Unit,
            _ => WeightMode::Uniform(8),
        };
        let weights = match map.get("weights") {
            None => default_weights,
            Some(&"unit") | Some(&"1") => WeightMode::Unit,
            Some(v) => WeightMode::Uniform(parse_num("weights", v)?),
        };
        let lambda = match map.get("lambda") {
            None | Some(&"inf") => LambdaSetting::Fixed(LocalCap::UNBOUNDED),
            Some(&"table") => LambdaSetting::Table,
            Some(v) => LambdaSetting::Fixed(LocalCap::finite(parse_num("lambda", v)?)),
        };
        let opt = |key: &str| map.get(key).copied();
        let cfg = ExperimentConfig {
            algo,
            family,
            graph_file,
            n_list,
            seeds,
            weights,
            lambda,
            gamma: opt("gamma").map(|v| parse_num("gamma", v)).transpose()?,
            eps: opt("eps").map(|v| parse_num("eps", v)).transpose()?.unwrap_or(0.5),
            alpha: opt("alpha").map(|v| parse_num("alpha", v)).transpose()?.unwrap_or(8.0),
            x_override: opt("x").map(|v| parse_num("x", v)).transpose()?,
            strict: opt("strict").map(|v| parse_bool("strict", v)).transpose()?.unwrap_or(false),
            out: opt("out").map(PathBuf::from),
            k: opt("k").map(|v| parse_num("k", v)).transpose()?,
            hops: opt("hops").map(|v| parse_num("hops", v)).transpose()?,
            source: opt("source").map(|v| parse_num::<usize>("source", v)).transpose()?.unwrap_or(1).max(1) - 1,
            artifacts: opt("artifacts").map(|v| parse_bool("artifacts", v)).transpose()?.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.into()));
        if self.n_list.is_empty() {
            return fail("n list is empty");
        }
        if self.seeds.is_empty() {
            return fail("seed list is empty");
        }
        if self.graph_file.is_none() && self.n_list.contains(&0) {
            return fail("n must be positive");
        }
        if !(self.eps > 0.0) && matches!(self.algo, Algo::ApspEps | Algo::SsspBcc) {
            return fail("eps must be positive");
        }
        if !(self.alpha >= 5.0) && self.algo == Algo::SsspRecursive {
            return fail("alpha must be at least 5");
        }
        if self.x_override.is_some_and(|x| !(x > 0.0)) {
            return fail("x must be positive");
        }
        if self.gamma == Some(0) {
            return fail("gamma must be positive");
        }
        if self.k == Some(0) || self.hops == Some(0) {
            return fail("k and hops must be positive");
        }
        Ok(())
    }
}

/// Per-algorithm local capacity profile, polylog factors taken as `log2 n`.
pub fn table_local_cap(algo: Algo, n: usize, k: Option<usize>, spd: Option<usize>, eps: f64) -> LocalCap {
    let nf = n as f64;
    let cap = match algo {
        Algo::Td => (k.unwrap_or(n) as f64).sqrt().ceil(),
        Algo::ApspExact | Algo::Apsp3 | Algo::ApspEps => 2.0 * nf,
        Algo::SsspExact | Algo::HkSsp => (nf * nf / (spd.unwrap_or(n).max(1) as f64).sqrt()).ceil(),
        Algo::SsspBcc => (2.0 * nf.powf(2.0 / 3.0) * eps.powi(6) * log2_ceil(n) as f64).ceil(),
        Algo::SsspRecursive | Algo::SpannerOnly => 1.0,
    };
    LocalCap::finite(cap.max(1.0) as u64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Correctness {
    ExactMatch(bool),
    MaxRatio { ratio: f64, sound: bool },
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub algo: Algo,
    pub family: String,
    pub n: usize,
    pub seed: u64,
    pub k: Option<usize>,
    pub spd: Option<usize>,
    pub lambda: LocalCap,
    pub rounds_total: u64,
    pub rounds_by_phase: Vec<(String, u64)>,
    pub max_local_per_edge: u64,
    pub max_global_per_node: u64,
    pub dropped: u64,
    pub correctness: Correctness,
    pub valid: bool,
    pub detail: Vec<(String, String)>,
    /// Not written to CSV so that output stays byte-stable.
    pub wall_ms: u128,
}

impl RunRecord {
    pub fn detail_value(&self, key: &str) -> Option<&str> {
        self.detail.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn csv_row(&self) -> Vec<String> {
        let opt = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
        let (exact, ratio, sound) = match self.correctness {
            Correctness::ExactMatch(m) => (m.to_string(), String::new(), String::new()),
            Correctness::MaxRatio { ratio, sound } => (String::new(), format_ratio(ratio), sound.to_string()),
        };
        let join =
            |items: &[(String, String)]| items.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
        let phases: Vec<(String, String)> =
            self.rounds_by_phase.iter().map(|(p, r)| (p.clone(), r.to_string())).collect();
        vec![
            SCHEMA.to_string(),
            self.algo.name().to_string(),
            self.family.clone(),
            self.n.to_string(),
            self.seed.to_string(),
            opt(self.k),
            opt(self.spd),
            self.lambda.to_string(),
            self.rounds_total.to_string(),
            self.max_local_per_edge.to_string(),
            self.max_global_per_node.to_string(),
            self.dropped.to_string(),
            exact,
            ratio,
            sound,
            self.valid.to_string(),
            join(&phases),
            join(&self.detail),
        ]
    }
}

fn format_ratio(r: f64) -> String {
    if r.is_finite() {
        format!("{r:.6}")
    } else {
        "inf".into()
    }
}

/// Largest `estimate / exact` over pairs with positive exact distance, and
/// whether no estimate undercuts the exact value.
pub fn ratio_stats(estimate: &[Dist], exact: &[Dist]) -> (f64, bool) {
    let mut worst: f64 = 1.0;
    let mut sound = true;
    for (e, d) in estimate.iter().zip(exact) {
        sound &= e >= d;
        if d.is_finite() && d.0 > 0 {
            worst = worst.max(if e.is_finite() { e.0 as f64 / d.0 as f64 } else { f64::INFINITY });
        }
    }
    (worst, sound)
}

#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub matrix: Option<Vec<Vec<Dist>>>,
    /// (phase label, node, value).
    pub trace: Vec<(String, NodeId, Dist)>,
    pub spanner: Option<Spanner>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub ledger: RoundLedger,
    pub artifacts: Artifacts,
}

struct Eval {
    correctness: Correctness,
    valid: bool,
    detail: Vec<(String, String)>,
    artifacts: Artifacts,
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

pub fn load_graph(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<WeightedGraph, HarnessError> {
    match &cfg.graph_file {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            WeightedGraph::read_from(std::io::BufReader::new(file))
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
        }
        None => gen_graph(cfg.family, n, cfg.weights, seed).map_err(|e| HarnessError::Config(e.to_string())),
    }
}

/// Runs one (n, seed) instance and checks it against a fresh oracle.
pub fn run_one(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<RunOutcome, HarnessError> {
    let g = load_graph(cfg, n, seed)?;
    let n = g.n();
    if cfg.source >= n {
        return Err(HarnessError::Config(format!("source {} exceeds n = {n}", cfg.source + 1)));
    }
    let k = match cfg.algo {
        Algo::Td => Some(cfg.k.unwrap_or(n)),
        Algo::HkSsp => Some(cfg.k.unwrap_or((n as f64).sqrt().ceil() as usize).min(n)),
        Algo::SpannerOnly => Some(cfg.k.unwrap_or(3)),
        _ => None,
    };
    let spd = cfg.algo.single_source().then(|| source_spd(&g, cfg.source));
    let lambda = match cfg.lambda {
        LambdaSetting::Fixed(c) => c,
        LambdaSetting::Table => table_local_cap(cfg.algo, n, k, spd, cfg.eps),
    };
    let mut hc = HybridConfig::new(n, seed).with_local_cap(lambda).strict(cfg.strict);
    if let Some(gamma) = cfg.gamma {
        hc = hc.with_global_cap(gamma);
    }
    let mut net = Network::new(&g, hc);
    let start = Instant::now();
    let result = evaluate(cfg, &mut net, k, spd);
    let wall_ms = start.elapsed().as_millis();
    let eval = result.map_err(|message| HarnessError::Run { algo: cfg.algo, n, seed, round: net.round(), message })?;
    let ledger = net.into_ledger();
    let record = RunRecord {
        algo: cfg.algo,
        family: match &cfg.graph_file {
            Some(p) => format!("file:{}", p.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()),
            None => cfg.family.name(),
        },
        n,
        seed,
        k,
        spd,
        lambda,
        rounds_total: ledger.total_rounds(),
        rounds_by_phase: ledger.phase_rounds().to_vec(),
        max_local_per_edge: ledger.max_local_per_edge(),
        max_global_per_node: ledger.max_global_per_node(),
        dropped: ledger.dropped(),
        correctness: eval.correctness,
        valid: eval.valid && ledger.dropped() == 0,
        detail: eval.detail,
        wall_ms,
    };
    Ok(RunOutcome { record, ledger, artifacts: eval.artifacts })
}

fn evaluate(cfg: &ExperimentConfig, net: &mut Network, k: Option<usize>, spd: Option<usize>) -> Result<Eval, String> {
    let g = net.graph();
    let n = g.n();
    let s = cfg.source;
    let mut artifacts = Artifacts::default();
    let eval = match cfg.algo {
        Algo::Td => {
            let k = k.unwrap_or(n);
            let initial = if k <= n { tokens::sample_tokens(n, k) } else { tokens::spread_tokens(n, k) };
            let params = TokenParams { spread: cfg.x_override, ..TokenParams::default() };
            let (_, stats) = tokens::disseminate(net, initial, &params).map_err(|e| e.to_string())?;
            let expected = k << tokens::doubling_phases(n, k);
            Eval {
                correctness: Correctness::ExactMatch(stats.complete),
                valid: stats.complete && stats.copies_after_multiplication == expected,
                detail: vec![
                    kv("complete", stats.complete),
                    kv("copies", stats.copies_after_multiplication),
                    kv("expected_copies", expected),
                    kv("spread", stats.spread),
                    kv("flood_quiet_after", stats.flood_quiet_after),
                ],
                artifacts,
            }
        }
        Algo::ApspExact | Algo::Apsp3 | Algo::ApspEps => {
            let out = match cfg.algo {
                Algo::ApspExact => apsp::apsp_exact(net, cfg.x_override, DEPTH_FACTOR),
                Algo::Apsp3 => apsp::apsp_approx(net, ApproxMode::Three, cfg.x_override, DEPTH_FACTOR),
                _ => apsp::apsp_approx(net, ApproxMode::Eps(cfg.eps), cfg.x_override, DEPTH_FACTOR),
            }
            .map_err(|e| e.to_string())?;
            let exact = all_pairs(g);
            let detail = vec![
                kv("marked", out.marked),
                kv("depth", out.depth),
                kv("skeleton_edges", out.skeleton_edges),
                kv("dissemination_complete", out.dissemination_complete()),
            ];
            let (correctness, valid) = if cfg.algo == Algo::ApspExact {
                let m = out.matrix == exact;
                (Correctness::ExactMatch(m), m)
            } else {
                let (ratio, sound) = apsp::compare_to_exact(&out.matrix, &exact);
                let limit = if cfg.algo == Algo::Apsp3 { 3.0 } else { 1.0 + cfg.eps };
                (Correctness::MaxRatio { ratio, sound }, sound && ratio <= limit + 1e-9)
            };
            artifacts.matrix = Some(out.matrix);
            Eval { correctness, valid, detail, artifacts }
        }
        Algo::SsspExact => {
            let out = sssp_exact::sssp_exact(net, s).map_err(|e| e.to_string())?;
            let exact = dijkstra(g, s).dist;
            let spd = spd.unwrap_or(0);
            let max_phase = out.phases.iter().map(|p| p.rounds).max().unwrap_or(0);
            let m = out.dist == exact;
            let phases_ok = out.phases.len() <= phase_bound(spd);
            let rounds_ok = max_phase as f64 <= phase_round_bound(n);
            for (i, p) in out.phases.iter().enumerate() {
                for (v, &d) in p.values.iter().enumerate() {
                    artifacts.trace.push((format!("phase{}", i + 1), v, d));
                }
            }
            Eval {
                correctness: Correctness::ExactMatch(m),
                valid: m && phases_ok && rounds_ok,
                detail: vec![
                    kv("phases", out.phases.len()),
                    kv("phase_bound", phase_bound(spd)),
                    kv("max_phase_rounds", max_phase),
                    kv("phase_round_bound", format!("{:.1}", phase_round_bound(n))),
                ],
                artifacts,
            }
        }
        Algo::SsspBcc => {
            let out = sssp_bcc(net, s, cfg.eps, cfg.x_override, DEPTH_FACTOR).map_err(|e| e.to_string())?;
            let exact = dijkstra(g, s).dist;
            let (ratio, sound) = ratio_stats(&out.dist, &exact);
            let transcripts = out.incomplete_broadcasts == 0 && out.final_broadcast_complete;
            Eval {
                correctness: Correctness::MaxRatio { ratio, sound },
                valid: sound && ratio <= 1.0 + cfg.eps + 1e-9 && transcripts,
                detail: vec![
                    kv("marked", out.marked.len()),
                    kv("depth", out.depth),
                    kv("broadcast_rounds", out.broadcast_rounds),
                    kv("incomplete_broadcasts", out.incomplete_broadcasts),
                    kv("publish_complete", out.final_broadcast_complete),
                ],
                artifacts,
            }
        }
        Algo::SsspRecursive => {
            let params = HierarchyParams::new(cfg.alpha);
            let out = spanner::recursive_sssp(net, s, params).map_err(|e| e.to_string())?;
            let exact = dijkstra(g, s).dist;
            let (ratio, sound) = ratio_stats(&out.dist, &exact);
            let finite = out.dist.iter().all(|d| d.is_finite());
            let budget = out.hierarchy.stretch_budget(params.eta);
            let sizes: Vec<String> = out.hierarchy.levels.iter().map(|l| l.nodes.len().to_string()).collect();
            Eval {
                correctness: Correctness::MaxRatio { ratio, sound },
                valid: sound && finite && ratio <= budget,
                detail: vec![
                    kv("levels", out.hierarchy.depth()),
                    kv("level_sizes", sizes.join("/")),
                    kv("spanner_k", out.hierarchy.k),
                    kv("stretch_budget", format!("{budget:.0}")),
                    kv("bfs_rounds", out.bfs_rounds),
                    kv("realization_rounds", out.realization_rounds),
                ],
                artifacts,
            }
        }
        Algo::HkSsp => {
            let k = k.unwrap_or(1);
            let h = cfg.hops.unwrap_or((n as f64).sqrt().ceil() as usize);
            let sources: Vec<NodeId> = (0..k).map(|i| i * n / k).collect();
            let out = hk_ssp(net, &sources, h).map_err(|e| e.to_string())?;
            let oracle = bellman_ford_k_sources(g, &sources, h);
            let mut exact = true;
            let mut sound = true;
            for v in 0..n {
                for i in 0..k {
                    let want = oracle.get(v, oracle.index_of(sources[i]).expect("source present"));
                    exact &= out.dist[v][i] == want;
                    sound &= out.dist[v][i] >= want;
                }
            }
            Eval {
                correctness: Correctness::ExactMatch(exact),
                valid: sound && (exact || !g.is_unit()),
                detail: vec![kv("hops", h), kv("stride", out.stride), kv("sound", sound)],
                artifacts,
            }
        }
        Algo::SpannerOnly => {
            let x = cfg.x_override.unwrap_or((n as f64).cbrt()).max(1.0);
            let seed = net.config().seed;
            let marked: Vec<NodeId> =
                (0..n).filter(|&v| node_stream(seed, purpose::MARK, v, 0).random_bool(1.0 / x)).collect();
            let params = SkeletonParams { hops: cfg.hops.unwrap_or(8), k: k.unwrap_or(3), eta: 2.0 };
            let sk = spanner::build_skeleton_spanner(g, &marked, params, seed).map_err(|e| e.to_string())?;
            let (pairs, bad) = spanner::two_hop_coverage(g, &sk);
            let witnesses = sk.spanner.witnesses_sound(g);
            let size_ok = sk.spanner.edges.len() as f64 <= sk.size_budget(8.0);
            let detail = vec![
                kv("marked", marked.len()),
                kv("edges", sk.spanner.edges.len()),
                kv("size_budget", format!("{:.0}", sk.size_budget(8.0))),
                kv("pairs", pairs),
                kv("coverage_violations", bad),
                kv("witnesses_sound", witnesses),
                kv("max_ball_membership", sk.max_ball_membership),
                kv("max_responsibility", sk.spanner.max_responsibility()),
                kv("realization_rounds", sk.realization_rounds(1)),
            ];
            artifacts.spanner = Some(sk.spanner);
            Eval {
                correctness: Correctness::ExactMatch(bad == 0),
                valid: bad == 0 && witnesses && size_ok,
                detail,
                artifacts,
            }
        }
    };
    Ok(eval)
}

/// One record per (n, seed), in config order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>, HarnessError> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &n in &cfg.n_list {
        for &seed in &cfg.seeds {
            out.push(run_one(cfg, n, seed)?);
        }
    }
    Ok(out)
}

pub fn write_metrics_csv<W: Write>(records: &[RunRecord], out: W) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// `n x n` matrix with `INF` for unreachable pairs.
pub fn write_matrix_csv<W: Write>(matrix: &[Vec<Dist>], mut out: W) -> std::io::Result<()> {
    for row in matrix {
        let cells: Vec<String> = row.iter().map(|d| d.value().map_or("INF".into(), |v| v.to_string())).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn write_trace_csv<W: Write>(trace: &[(String, NodeId, Dist)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "phase,node,value")?;
    for (phase, v, d) in trace {
        writeln!(out, "{phase},{},{}", v + 1, d.value().map_or("INF".into(), |x| x.to_string()))?;
    }
    Ok(())
}

/// Writes ledger, matrix, trace and spanner files next to `base`.
pub fn write_artifacts(base: &Path, outcome: &RunOutcome) -> Result<Vec<PathBuf>, HarnessError> {
    let stem = base.with_extension("");
    let tag = format!("{}.n{}.s{}", stem.display(), outcome.record.n, outcome.record.seed);
    let mut written = Vec::new();
    let mut create = |suffix: &str| -> Result<std::io::BufWriter<std::fs::File>, HarnessError> {
        let path = PathBuf::from(format!("{tag}.{suffix}"));
        let f = std::fs::File::create(&path)?;
        written.push(path);
        Ok(std::io::BufWriter::new(f))
    };
    outcome.ledger.write_csv(create("ledger.csv")?)?;
    if let Some(m) = &outcome.artifacts.matrix {
        write_matrix_csv(m, create("matrix.csv")?)?;
    }
    if !outcome.artifacts.trace.is_empty() {
        write_trace_csv(&outcome.artifacts.trace, create("trace.csv")?)?;
    }
    if let Some(sp) = &outcome.artifacts.spanner {
        sp.to_graph().write_to(create("spanner.txt")?)?;
        sp.write_sidecar(create("spanner.witness")?)?;
    }
    Ok(written)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XAxis {
    N,
    K,
    Spd,
}

impl XAxis {
    pub fn parse(s: &str) -> Option<XAxis> {
        match s {
            "n" => Some(XAxis::N),
            "k" => Some(XAxis::K),
            "spd" => Some(XAxis::Spd),
            _ => None,
        }
    }

    fn column(self) -> &'static str {
        match self {
            XAxis::N => "n",
            XAxis::K => "k",
            XAxis::Spd => "spd",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval of the slope.
    pub ci: (f64, f64),
    /// (x, median rounds) per distinct x.
    pub points: Vec<(f64, f64)>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Least-squares slope of `ln(median rounds)` against `ln x`.
pub fn scaling_fit(samples: &[(f64, f64)]) -> Result<ScalingFit, HarnessError> {
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for &(x, r) in samples {
        if !(x > 0.0) || !(r > 0.0) {
            return Err(HarnessError::Fit(format!("non-positive sample ({x}, {r})")));
        }
        groups.entry(x.to_bits()).or_default().push(r);
    }
    if groups.len() < 3 {
        return Err(HarnessError::Fit(format!("need at least 3 distinct x values, got {}", groups.len())));
    }
    if let Some((x, v)) = groups.iter().find(|(_, v)| v.len() < 5) {
        return Err(HarnessError::Fit(format!("x = {} has {} samples, need 5", f64::from_bits(*x), v.len())));
    }
    let mut points: Vec<(f64, f64)> =
        groups.into_iter().map(|(x, mut v)| (f64::from_bits(x), median(&mut v))).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let se = (sse / (m - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, m - 2.0).map_err(|e| HarnessError::Fit(e.to_string()))?.inverse_cdf(0.975);
    Ok(ScalingFit { slope, intercept, ci: (slope - t * se, slope + t * se), points })
}

/// Reads `(x, rounds_total)` samples from a metrics CSV.
pub fn read_fit_samples<R: Read>(input: R, axis: XAxis) -> Result<Vec<(f64, f64)>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| HarnessError::Fit(format!("missing column {name}")))
    };
    let xi = col(axis.column())?;
    let ri = col("rounds_total")?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let (x, r) = (&row[xi], &row[ri]);
        if x.is_empty() {
            return Err(HarnessError::Fit(format!("row without a {} value", axis.column())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| HarnessError::Fit(format!("bad number {s:?}")));
        out.push((parse(x)?, parse(r)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn config_text_and_overrides() {
        let mut p = parse_config_text("algo = td # tokens\n\nn=16,32\nseeds = 1..3\n").unwrap();
        p.push(("n".into(), "8".into()));
        let cfg = ExperimentConfig::from_pairs(&p).unwrap();
        assert_eq!(cfg.algo, Algo::Td);
        assert_eq!(cfg.n_list, vec![8]);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.lambda, LambdaSetting::Fixed(LocalCap::UNBOUNDED));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_pairs(&pairs(&[("algo", "td"), ("n", "16")])).is_err());
        assert!(ExperimentConfig::from_pairs(&pairs(&[("algo", "td"), ("n", "16"), ("seeds", "")])).is_err());
        assert!(ExperimentConfig::from_pairs(&pairs(&[("algo", "nope"), ("n", "16"), ("seeds", "1")])).is_err());
        assert!(ExperimentConfig::from_pairs(&pairs(&[("algo", "td"), ("n", "16"), ("seeds", "1"), ("bogus", "1")]))
            .is_err());
        assert!(parse_config_text("just words").is_err());
    }

    #[test]
    fn sssp_exact_on_short_path() {
        let cfg = ExperimentConfig::from_pairs(&pairs(&[
            ("algo", "sssp_exact"),
            ("family", "path"),
            ("n", "16"),
            ("seeds", "1"),
        ]))
        .unwrap();
        let runs = run_experiment(&cfg).unwrap();
        let r = &runs[0].record;
        assert_eq!(r.correctness, Correctness::ExactMatch(true));
        assert!(r.valid);
        assert!(r.detail_value("phases").unwrap().parse::<usize>().unwrap() <= 9);
        assert!(!runs[0].artifacts.trace.is_empty());
    }

    #[test]
    fn every_algorithm_runs_small() {
        for algo in Algo::ALL {
            let mut p = pairs(&[("algo", algo.name()), ("n", "32"), ("seeds", "1,2"), ("alpha", "5")]);
            if algo == Algo::SpannerOnly {
                p.push(("hops".into(), "4".into()));
            }
            let cfg = ExperimentConfig::from_pairs(&p).unwrap();
            for run in run_experiment(&cfg).unwrap() {
                assert!(run.record.valid, "{algo}: {:?}", run.record);
            }
        }
    }

    #[test]
    fn csv_is_byte_stable() {
        let cfg = ExperimentConfig::from_pairs(&pairs(&[("algo", "apsp_3"), ("n", "40"), ("seeds", "3,4")])).unwrap();
        let render = || {
            let recs: Vec<RunRecord> = run_experiment(&cfg).unwrap().into_iter().map(|o| o.record).collect();
            let mut buf = Vec::new();
            write_metrics_csv(&recs, &mut buf).unwrap();
            buf
        };
        let a = render();
        assert_eq!(a, render());
        assert!(String::from_utf8(a).unwrap().starts_with("schema,algo,family,n,seed"));
    }

    #[test]
    fn table_caps() {
        assert_eq!(table_local_cap(Algo::Td, 256, Some(256), None, 0.5), LocalCap::finite(16));
        assert_eq!(table_local_cap(Algo::ApspExact, 64, None, None, 0.5), LocalCap::finite(128));
        assert_eq!(table_local_cap(Algo::SsspRecursive, 64, None, None, 0.5), LocalCap::finite(1));
    }

    #[test]
    fn fit_constant_and_linear() {
        let xs = [16.0, 32.0, 64.0, 128.0];
        let flat: Vec<(f64, f64)> = xs.iter().flat_map(|&x| (0..5).map(move |i| (x, 100.0 + i as f64))).collect();
        assert!(scaling_fit(&flat).unwrap().slope.abs() < 0.1);
        let lin: Vec<(f64, f64)> = xs.iter().flat_map(|&x| (0..5).map(move |_| (x, 3.0 * x))).collect();
        let fit = scaling_fit(&lin).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.05);
        assert!(fit.ci.0 <= fit.slope && fit.slope <= fit.ci.1);
    }

    #[test]
    fn fit_rejects_thin_data() {
        let two: Vec<(f64, f64)> = [1.0, 2.0].iter().flat_map(|&x| (0..5).map(move |_| (x, x))).collect();
        assert!(scaling_fit(&two).is_err());
        let thin = vec![(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)];
        assert!(scaling_fit(&thin).is_err());
    }

    #[test]
    fn fit_reads_metrics_csv() {
        let cfg =
            ExperimentConfig::from_pairs(&pairs(&[("algo", "td"), ("n", "16,32,64"), ("seeds", "1..5")])).unwrap();
        let recs: Vec<RunRecord> = run_experiment(&cfg).unwrap().into_iter().map(|o| o.record).collect();
        let mut buf = Vec::new();
        write_metrics_csv(&recs, &mut buf).unwrap();
        let samples = read_fit_samples(buf.as_slice(), XAxis::N).unwrap();
        assert_eq!(samples.len(), 15);
        assert!(scaling_fit(&samples).is_ok());
        assert!(read_fit_samples(buf.as_slice(), XAxis::Spd).is_err());
    }

    #[test]
    fn matrix_and_trace_formats() {
        let mut buf = Vec::new();
        write_matrix_csv(&[vec![Dist(0), Dist::INF], vec![Dist(3), Dist(0)]], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0,INF\n3,0\n");
        let mut buf = Vec::new();
        write_trace_csv(&[("phase1".into(), 0, Dist(2))], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "phase,node,value\nphase1,1,2\n");
    }
}
